//! Planted geo-linguistic panels with known ground truth.
//!
//! Every user belongs to one region. Visit probabilities depend on whether a
//! site is in the user's home region, in a foreign region, or global. Each
//! user also draws an engagement multiplier from a two-point distribution
//! that scales all of their probabilities; this shared factor is what makes
//! sites co-visited by the same people beyond what their reaches predict.
//!
//! Randomness is derived per `(seed, user)` for region membership and per
//! `(seed, snapshot, user)` for visits, so generation is parallel and
//! deterministic.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Audience, PanelSnapshot, Site};

/// Region tag given to global sites.
pub const GLOBAL_TAG: &str = "global";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub name: String,
    pub user_share: f64,
    pub site_count: usize,
    pub language: String,
    /// Overrides the world-wide home probability for this region.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_home: Option<f64>,
}

/// Multiplier on the cross-region probability between two regions, in
/// either direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub a: String,
    pub b: String,
    pub multiplier: f64,
}

/// Change applied once per snapshot index. `region = None` applies to all.
/// A cross delta applies to visits where either side is the region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    #[serde(default)]
    pub p_home: f64,
    #[serde(default)]
    pub p_cross: f64,
}

/// Two-point engagement distribution: `high` with probability `p_high`,
/// otherwise `low`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Engagement {
    pub low: f64,
    pub high: f64,
    pub p_high: f64,
}

impl Default for Engagement {
    fn default() -> Self {
        Self {
            low: 0.5,
            high: 1.5,
            p_high: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub regions: Vec<RegionSpec>,
    #[serde(default)]
    pub global_sites: usize,
    pub p_home: f64,
    pub p_cross: f64,
    #[serde(default)]
    pub p_global: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub language_overlap: Vec<Overlap>,
    pub users: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub drift: Vec<Drift>,
    #[serde(default)]
    pub engagement: Engagement,
}

fn probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::validation(format!(
            "{name} = {p} is not a probability"
        )));
    }
    Ok(())
}

impl WorldSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self =
            toml::from_str(text).map_err(|e| Error::validation(format!("world spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::validation("world needs at least one region"));
        }
        if self.users == 0 {
            return Err(Error::validation("world needs at least one user"));
        }
        let share: f64 = self.regions.iter().map(|r| r.user_share).sum();
        if (share - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "region user shares sum to {share}, not 1"
            )));
        }
        let mut names = HashSet::new();
        for r in &self.regions {
            if !names.insert(r.name.as_str()) {
                return Err(Error::validation(format!("duplicate region {:?}", r.name)));
            }
            if r.name == GLOBAL_TAG {
                return Err(Error::validation("region name \"global\" is reserved"));
            }
            if r.site_count == 0 {
                return Err(Error::validation(format!(
                    "region {:?} has no sites",
                    r.name
                )));
            }
            probability("user_share", r.user_share)?;
            if let Some(p) = r.p_home {
                probability("region p_home", p)?;
            }
        }
        let sites: usize =
            self.regions.iter().map(|r| r.site_count).sum::<usize>() + self.global_sites;
        if sites < 2 {
            return Err(Error::validation("world needs at least 2 sites"));
        }
        probability("p_home", self.p_home)?;
        probability("p_cross", self.p_cross)?;
        probability("p_global", self.p_global)?;
        probability("engagement.p_high", self.engagement.p_high)?;
        if self.engagement.low < 0.0 || self.engagement.high < 0.0 {
            return Err(Error::validation(
                "engagement multipliers must be non-negative",
            ));
        }
        for o in &self.language_overlap {
            for n in [&o.a, &o.b] {
                if !names.contains(n.as_str()) {
                    return Err(Error::validation(format!(
                        "overlap names unknown region {n:?}"
                    )));
                }
            }
            if o.multiplier < 0.0 {
                return Err(Error::validation("overlap multiplier must be non-negative"));
            }
        }
        for d in &self.drift {
            if let Some(n) = &d.region {
                if !names.contains(n.as_str()) {
                    return Err(Error::validation(format!(
                        "drift names unknown region {n:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn region_index(&self, name: &str) -> Option<usize> {
        self.regions.iter().position(|r| r.name == name)
    }

    /// Home-visit probability of region `r` at snapshot `index`.
    pub fn home_probability(&self, r: usize, index: usize) -> f64 {
        let base = self.regions[r].p_home.unwrap_or(self.p_home);
        let delta: f64 = self
            .drift
            .iter()
            .filter(|d| {
                d.region
                    .as_deref()
                    .is_none_or(|n| n == self.regions[r].name)
            })
            .map(|d| d.p_home)
            .sum();
        (base + delta * index as f64).clamp(0.0, 1.0)
    }

    /// Probability that a user of region `a` visits a site of region `b != a`.
    pub fn cross_probability(&self, a: usize, b: usize, index: usize) -> f64 {
        let (na, nb) = (&self.regions[a].name, &self.regions[b].name);
        let multiplier: f64 = self
            .language_overlap
            .iter()
            .filter(|o| (&o.a == na && &o.b == nb) || (&o.a == nb && &o.b == na))
            .map(|o| o.multiplier)
            .product();
        let delta: f64 = self
            .drift
            .iter()
            .map(|d| match d.region.as_deref() {
                None => d.p_cross,
                Some(n) => {
                    f64::from(u8::from(n == na)) * d.p_cross
                        + f64::from(u8::from(n == nb)) * d.p_cross
                }
            })
            .sum();
        ((self.p_cross + delta * index as f64) * multiplier).clamp(0.0, 1.0)
    }

    /// Generated sites in order: each region's sites, then global sites.
    pub fn sites(&self) -> Vec<Site> {
        let mut sites = Vec::new();
        for r in &self.regions {
            let stem = slug(&r.name);
            let lang = slug(&r.language);
            for i in 0..r.site_count {
                let mut s = Site::new(sites.len() as u32, format!("{stem}-{i:03}.{lang}"));
                s.languages.insert(r.language.clone());
                s.region_tag = Some(r.name.clone());
                sites.push(s);
            }
        }
        for i in 0..self.global_sites {
            let mut s = Site::new(sites.len() as u32, format!("global-{i:03}.com"));
            s.languages.insert("en".to_string());
            s.region_tag = Some(GLOBAL_TAG.to_string());
            sites.push(s);
        }
        sites
    }
}

fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect();
    if s.is_empty() {
        "x".to_string()
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trend {
    Thickening,
    Thinning,
    Stable,
}

/// Known region of every generated site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Region name per site, in site order; global sites carry `"global"`.
    pub site_regions: Vec<String>,
    /// Direction of each region's home-probability drift.
    pub trends: BTreeMap<String, Trend>,
}

impl GroundTruth {
    /// Region labels aligned to an arbitrary list of domains.
    pub fn labels_for(&self, sites: &[Site], domains: &[String]) -> Result<Vec<String>> {
        let index: BTreeMap<&str, usize> = sites
            .iter()
            .enumerate()
            .map(|(i, s)| (s.domain.as_str(), i))
            .collect();
        domains
            .iter()
            .map(|d| {
                index
                    .get(d.as_str())
                    .map(|&i| self.site_regions[i].clone())
                    .ok_or_else(|| Error::NotFound(format!("site {d:?} in ground truth")))
            })
            .collect()
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn stream(seed: u64, domain: u64, user: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(domain)));
    rng.set_stream(user as u64);
    rng
}

/// Region of every user; independent of the snapshot.
fn user_regions(spec: &WorldSpec) -> Vec<usize> {
    let cumulative: Vec<f64> = spec
        .regions
        .iter()
        .scan(0.0, |acc, r| {
            *acc += r.user_share;
            Some(*acc)
        })
        .collect();
    (0..spec.users)
        .into_par_iter()
        .map(|u| {
            let x: f64 = stream(spec.seed, u64::MAX, u).gen();
            cumulative
                .iter()
                .position(|&c| x < c)
                .unwrap_or(spec.regions.len() - 1)
        })
        .collect()
}

/// One panel for snapshot `index` (drift applied `index` times).
///
/// Users who visited nothing are left out of the panel, as a metered panel
/// only reports active users; user ids keep their world-wide index.
pub fn generate_snapshot(
    spec: &WorldSpec,
    index: usize,
    label: &str,
) -> Result<(PanelSnapshot, GroundTruth)> {
    spec.validate()?;
    let sites = spec.sites();
    let site_region: Vec<Option<usize>> = sites
        .iter()
        .map(|s| s.region_tag.as_deref().and_then(|t| spec.region_index(t)))
        .collect();
    let regions = user_regions(spec);

    // probability table: user region × site
    let table: Vec<Vec<f64>> = (0..spec.regions.len())
        .map(|ur| {
            site_region
                .iter()
                .map(|sr| match sr {
                    Some(r) if *r == ur => spec.home_probability(ur, index),
                    Some(r) => spec.cross_probability(ur, *r, index),
                    None => spec.p_global,
                })
                .collect()
        })
        .collect();

    let eng = spec.engagement;
    let visits: Vec<Vec<usize>> = (0..spec.users)
        .into_par_iter()
        .map(|u| {
            let mut rng = stream(spec.seed, index as u64, u);
            let m = if rng.gen::<f64>() < eng.p_high {
                eng.high
            } else {
                eng.low
            };
            table[regions[u]]
                .iter()
                .enumerate()
                .filter_map(|(s, &p)| (rng.gen::<f64>() < (p * m).min(1.0)).then_some(s))
                .collect()
        })
        .collect();

    let active: Vec<usize> = (0..spec.users).filter(|&u| !visits[u].is_empty()).collect();
    let mut audiences = vec![Audience::empty(active.len()); sites.len()];
    for (new, &u) in active.iter().enumerate() {
        for &s in &visits[u] {
            audiences[s].insert(new);
        }
    }
    let user_ids = active.iter().map(|u| format!("u{u:06}")).collect();
    let panel = PanelSnapshot::from_audiences(label, user_ids, sites.clone(), audiences)?;

    let trends = spec
        .regions
        .iter()
        .enumerate()
        .map(|(r, region)| {
            let now = spec.home_probability(r, 0);
            let later = spec.home_probability(r, 1);
            let trend = if later > now {
                Trend::Thickening
            } else if later < now {
                Trend::Thinning
            } else {
                Trend::Stable
            };
            (region.name.clone(), trend)
        })
        .collect();
    let truth = GroundTruth {
        site_regions: sites
            .iter()
            .map(|s| {
                s.region_tag
                    .clone()
                    .unwrap_or_else(|| GLOBAL_TAG.to_string())
            })
            .collect(),
        trends,
    };
    Ok((panel, truth))
}

/// Snapshots `0..labels.len()` with cumulative drift and one site universe.
pub fn generate_series(
    spec: &WorldSpec,
    labels: &[String],
) -> Result<Vec<(PanelSnapshot, GroundTruth)>> {
    if labels.is_empty() {
        return Err(Error::validation("series needs at least one snapshot"));
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| generate_snapshot(spec, i, l))
        .collect()
}

//! Visitation panels: who visited which site during one period.
//!
//! Visits are binary per period. A [`PanelSnapshot`] stores one audience
//! bitset per site over the panel's user universe, which makes reach and
//! pairwise audience intersections popcount operations.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// An exact fraction `count / total` with `count <= total` and `total > 0`.
///
/// Reach and duplication are ratios of user counts; keeping the integers
/// around lets products and differences be formed without rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Proportion {
    count: u64,
    total: u64,
}

impl Proportion {
    pub fn new(count: u64, total: u64) -> Result<Self> {
        if total == 0 {
            return Err(Error::validation("proportion with zero denominator"));
        }
        if count > total {
            return Err(Error::validation(format!(
                "proportion {count}/{total} lies outside [0, 1]"
            )));
        }
        Ok(Self { count, total })
    }

    pub fn count(self) -> u64 {
        self.count
    }

    pub fn total(self) -> u64 {
        self.total
    }

    /// Nearest `f64` to the exact ratio.
    pub fn value(self) -> f64 {
        self.count as f64 / self.total as f64
    }
}

/// A website (domain or subdomain) tracked by the panel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Site {
    /// Position of the site in the snapshot it was loaded into. Kept when a
    /// snapshot is narrowed with [`PanelSnapshot::select`].
    pub id: u32,
    pub domain: String,
    pub languages: BTreeSet<String>,
    /// Ground-truth region in synthetic data; `None` for real panels.
    pub region_tag: Option<String>,
}

impl Site {
    pub fn new(id: u32, domain: impl Into<String>) -> Self {
        Self {
            id,
            domain: domain.into(),
            languages: BTreeSet::new(),
            region_tag: None,
        }
    }
}

/// Fixed-width bitset over the user universe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Audience {
    words: Vec<u64>,
    len: u64,
}

impl Audience {
    pub fn empty(users: usize) -> Self {
        Self {
            words: vec![0; users.div_ceil(64)],
            len: 0,
        }
    }

    /// Marks `user` as a visitor; returns false if already present.
    pub fn insert(&mut self, user: usize) -> bool {
        let (w, b) = (user / 64, user % 64);
        let mask = 1u64 << b;
        if self.words[w] & mask != 0 {
            return false;
        }
        self.words[w] |= mask;
        self.len += 1;
        true
    }

    pub fn contains(&self, user: usize) -> bool {
        self.words
            .get(user / 64)
            .is_some_and(|w| w & (1u64 << (user % 64)) != 0)
    }

    /// Number of distinct visitors.
    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Size of the shared audience of two sites.
    pub fn intersection_len(&self, other: &Audience) -> u64 {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| u64::from((a & b).count_ones()))
            .sum()
    }

    pub fn users(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &bits)| {
            (0..64)
                .filter(move |b| bits & (1u64 << b) != 0)
                .map(move |b| w * 64 + b)
        })
    }
}

/// Binary user×site visitation for one period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanelSnapshot {
    label: String,
    user_ids: Vec<String>,
    sites: Vec<Site>,
    audiences: Vec<Audience>,
    by_domain: HashMap<String, usize>,
}

impl PanelSnapshot {
    /// Builds a snapshot from `(user index, site index)` visit pairs.
    /// Repeated pairs collapse to one visit.
    pub fn new(
        label: impl Into<String>,
        user_ids: Vec<String>,
        sites: Vec<Site>,
        visits: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let users = user_ids.len();
        let mut audiences = vec![Audience::empty(users); sites.len()];
        for (user, site) in visits {
            if user >= users {
                return Err(Error::validation(format!(
                    "visit references user index {user} but panel has {users} users"
                )));
            }
            let audience = audiences.get_mut(site).ok_or_else(|| {
                Error::validation(format!("visit references unknown site index {site}"))
            })?;
            audience.insert(user);
        }
        Self::from_audiences(label, user_ids, sites, audiences)
    }

    pub(crate) fn from_audiences(
        label: impl Into<String>,
        user_ids: Vec<String>,
        sites: Vec<Site>,
        audiences: Vec<Audience>,
    ) -> Result<Self> {
        if user_ids.is_empty() {
            return Err(Error::validation("panel has no users"));
        }
        if sites.len() < 2 {
            return Err(Error::validation(format!(
                "panel needs at least 2 sites, found {}",
                sites.len()
            )));
        }
        let mut by_domain = HashMap::with_capacity(sites.len());
        for (i, site) in sites.iter().enumerate() {
            if by_domain.insert(site.domain.clone(), i).is_some() {
                return Err(Error::validation(format!(
                    "duplicate site domain {:?}",
                    site.domain
                )));
            }
        }
        Ok(Self {
            label: label.into(),
            user_ids,
            sites,
            audiences,
            by_domain,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Size of the panel universe `U`.
    pub fn user_count(&self) -> usize {
        self.user_ids.len()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    pub fn audience(&self, site: usize) -> &Audience {
        &self.audiences[site]
    }

    pub fn site_index(&self, domain: &str) -> Option<usize> {
        self.by_domain.get(domain).copied()
    }

    fn require(&self, domain: &str) -> Result<usize> {
        self.site_index(domain)
            .ok_or_else(|| Error::NotFound(format!("site {domain:?} in panel {:?}", self.label)))
    }

    /// Number of distinct users who visited the site.
    pub fn unique_visitors(&self, domain: &str) -> Result<u64> {
        Ok(self.audiences[self.require(domain)?].len())
    }

    /// Fraction of the panel universe that visited `domain`.
    pub fn reach(&self, domain: &str) -> Result<Proportion> {
        let i = self.require(domain)?;
        Ok(self.reach_at(i))
    }

    pub(crate) fn reach_at(&self, site: usize) -> Proportion {
        Proportion {
            count: self.audiences[site].len(),
            total: self.user_count() as u64,
        }
    }

    /// Reach of every site, in site order.
    pub fn reach_vector(&self) -> Vec<f64> {
        (0..self.site_count())
            .map(|i| self.reach_at(i).value())
            .collect()
    }

    /// Indices of the `n` most visited sites: descending unique visitors,
    /// ties by ascending domain. Returns every site when `n` exceeds the
    /// site count.
    pub fn top_n_sites(&self, n: usize) -> Result<Vec<usize>> {
        if n < 2 {
            return Err(Error::validation(format!("top-n needs n >= 2, got {n}")));
        }
        let mut order: Vec<usize> = (0..self.site_count()).collect();
        order.sort_by(|&a, &b| {
            self.audiences[b]
                .len()
                .cmp(&self.audiences[a].len())
                .then_with(|| self.sites[a].domain.cmp(&self.sites[b].domain))
        });
        order.truncate(n);
        Ok(order)
    }

    /// A snapshot restricted to the given sites, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<PanelSnapshot> {
        let mut sites = Vec::with_capacity(indices.len());
        let mut audiences = Vec::with_capacity(indices.len());
        for &i in indices {
            let site = self
                .sites
                .get(i)
                .ok_or_else(|| Error::validation(format!("site index {i} out of range")))?;
            sites.push(site.clone());
            audiences.push(self.audiences[i].clone());
        }
        Self::from_audiences(self.label.clone(), self.user_ids.clone(), sites, audiences)
    }

    /// The `n` most visited sites as a new snapshot, in ranking order.
    pub fn top_n(&self, n: usize) -> Result<PanelSnapshot> {
        self.select(&self.top_n_sites(n)?)
    }

    /// Total number of distinct (user, site) visits.
    pub fn visit_count(&self) -> u64 {
        self.audiences.iter().map(Audience::len).sum()
    }

    /// Writes the visitation CSV, user-major, in user and site index order.
    pub fn write_visits<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::validation(format!("csv write failed: {e}"));
        w.write_record(["user_id", "site_domain"])
            .map_err(csv_err)?;
        let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); self.user_count()];
        for (s, audience) in self.audiences.iter().enumerate() {
            for u in audience.users() {
                per_user[u].push(s);
            }
        }
        for (u, sites) in per_user.iter().enumerate() {
            for &s in sites {
                w.write_record([self.user_ids[u].as_str(), self.sites[s].domain.as_str()])
                    .map_err(csv_err)?;
            }
        }
        w.flush()
            .map_err(|e| Error::validation(format!("csv flush failed: {e}")))?;
        Ok(())
    }

    /// Writes the site metadata CSV in site order.
    pub fn write_sites<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::validation(format!("csv write failed: {e}"));
        w.write_record(["site_domain", "languages", "region_tag"])
            .map_err(csv_err)?;
        for site in &self.sites {
            let langs = site.languages.iter().cloned().collect::<Vec<_>>().join(";");
            w.write_record([
                site.domain.as_str(),
                langs.as_str(),
                site.region_tag.as_deref().unwrap_or(""),
            ])
            .map_err(csv_err)?;
        }
        w.flush()
            .map_err(|e| Error::validation(format!("csv flush failed: {e}")))?;
        Ok(())
    }
}

fn parse_error(e: &csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

fn expect_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<bool> {
    let header = reader.headers().map_err(|e| parse_error(&e))?;
    if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
        return Ok(false);
    }
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected header {:?}, found {:?}",
                expected.join(","),
                got.join(",")
            ),
        });
    }
    Ok(true)
}

/// Parses a site metadata CSV (`site_domain,languages,region_tag`).
pub fn read_site_metadata<R: Read>(input: R) -> Result<Vec<Site>> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(input);
    if !expect_header(&mut reader, &["site_domain", "languages", "region_tag"])? {
        return Ok(Vec::new());
    }
    let mut sites = Vec::new();
    let mut seen = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_error(&e))?;
        let line = record.position().map_or(0, |p| p.line());
        let domain = record[0].trim();
        if domain.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty site_domain".into(),
            });
        }
        if !seen.insert(domain.to_string()) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate site_domain {domain:?}"),
            });
        }
        let languages = record[1]
            .split(';')
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        let tag = record[2].trim();
        sites.push(Site {
            id: sites.len() as u32,
            domain: domain.to_string(),
            languages,
            region_tag: (!tag.is_empty()).then(|| tag.to_string()),
        });
    }
    Ok(sites)
}

/// Parses a visitation CSV (`user_id,site_domain`).
///
/// Sites listed in `metadata` come first, in metadata order, so sites without
/// visitors still appear with zero reach. Sites seen only in visits follow in
/// order of first appearance. Users are indexed in order of first appearance.
pub fn read_panel<R: Read>(
    label: impl Into<String>,
    visits: R,
    metadata: Vec<Site>,
) -> Result<PanelSnapshot> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_reader(visits);
    let has_header = expect_header(&mut reader, &["user_id", "site_domain"])?;

    let mut sites = metadata;
    let mut site_index: HashMap<String, usize> = sites
        .iter()
        .enumerate()
        .map(|(i, s)| (s.domain.clone(), i))
        .collect();
    let mut user_index: HashMap<String, usize> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut pairs = Vec::new();

    if has_header {
        for record in reader.records() {
            let record = record.map_err(|e| parse_error(&e))?;
            let line = record.position().map_or(0, |p| p.line());
            let (user, domain) = (record[0].trim(), record[1].trim());
            if user.is_empty() || domain.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: "empty user_id or site_domain".into(),
                });
            }
            let u = *user_index.entry(user.to_string()).or_insert_with(|| {
                user_ids.push(user.to_string());
                user_ids.len() - 1
            });
            let s = *site_index.entry(domain.to_string()).or_insert_with(|| {
                sites.push(Site::new(sites.len() as u32, domain));
                sites.len() - 1
            });
            pairs.push((u, s));
        }
    }
    PanelSnapshot::new(label, user_ids, sites, pairs)
}

/// Loads a panel from a visitation CSV and an optional site metadata CSV.
pub fn load_panel(
    label: impl Into<String>,
    visits: &Path,
    metadata: Option<&Path>,
) -> Result<PanelSnapshot> {
    let open = |p: &Path| -> Result<File> {
        File::open(p).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::Dependency {
                    path: p.to_path_buf(),
                }
            } else {
                Error::io(p, e)
            }
        })
    };
    let sites = match metadata {
        Some(p) => read_site_metadata(open(p)?)?,
        None => Vec::new(),
    };
    read_panel(label, open(visits)?, sites)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(csv: &str) -> Result<PanelSnapshot> {
        read_panel("t", csv.as_bytes(), Vec::new())
    }

    fn counts_panel(counts: &[(&str, usize)], users: usize) -> PanelSnapshot {
        let sites = counts
            .iter()
            .enumerate()
            .map(|(i, (d, _))| Site::new(i as u32, *d))
            .collect();
        let visits = counts
            .iter()
            .enumerate()
            .flat_map(|(s, &(_, c))| (0..c).map(move |u| (u, s)));
        let ids = (0..users).map(|u| format!("u{u}")).collect();
        PanelSnapshot::new("t", ids, sites, visits).unwrap()
    }

    #[test]
    fn repeated_rows_collapse() {
        let p = panel("user_id,site_domain\nu1,a\nu1,b\nu2,a\nu1,a\n").unwrap();
        assert_eq!(p.user_count(), 2);
        assert_eq!(p.visit_count(), 3);
        assert_eq!(p.unique_visitors("a").unwrap(), 2);
        assert_eq!(p.unique_visitors("b").unwrap(), 1);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(panel(""), Err(Error::Validation(_))));
        assert!(matches!(
            panel("user_id,site_domain\n"),
            Err(Error::Validation(_))
        ));
        // one site only
        assert!(matches!(
            panel("user_id,site_domain\nu1,a\nu2,a\n"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = panel("user_id,site_domain\nu1,a\nu2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err = panel("user,site\nu1,a\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err:?}");
        let err = panel("user_id,site_domain\nu1,a\n,b\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn reach_cases() {
        let p = counts_panel(&[("fb", 80), ("none", 0), ("all", 100)], 100);
        assert_eq!(p.reach("fb").unwrap().value(), 0.80);
        assert_eq!(p.reach("none").unwrap().value(), 0.0);
        assert_eq!(p.reach("all").unwrap().value(), 1.0);
        assert!(matches!(p.reach("missing"), Err(Error::NotFound(_))));
    }

    #[test]
    fn top_n_ordering_and_tiebreak() {
        let p = counts_panel(&[("a", 5), ("b", 9), ("c", 1)], 10);
        let top = p.top_n_sites(2).unwrap();
        let names: Vec<_> = top.iter().map(|&i| p.sites()[i].domain.as_str()).collect();
        assert_eq!(names, ["b", "a"]);

        let p = counts_panel(&[("b", 5), ("a", 5)], 10);
        let top = p.top_n(2).unwrap();
        let names: Vec<_> = top.sites().iter().map(|s| s.domain.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
        assert!(matches!(p.top_n_sites(1), Err(Error::Validation(_))));
    }

    #[test]
    fn metadata_sites_keep_zero_reach_entries() {
        let meta = read_site_metadata(
            "site_domain,languages,region_tag\nz.org,en;fr,west\nq.org,,\n".as_bytes(),
        )
        .unwrap();
        let p = read_panel("t", "user_id,site_domain\nu1,a.com\n".as_bytes(), meta).unwrap();
        assert_eq!(p.site_count(), 3);
        assert_eq!(p.sites()[0].domain, "z.org");
        assert_eq!(p.sites()[0].region_tag.as_deref(), Some("west"));
        assert_eq!(p.sites()[0].languages.len(), 2);
        assert_eq!(p.reach("q.org").unwrap().value(), 0.0);
    }

    #[test]
    fn csv_round_trip_is_identity() {
        let meta = read_site_metadata(
            "site_domain,languages,region_tag\nz.org,en,west\nq.org,,\nr.org,ko,east\n".as_bytes(),
        )
        .unwrap();
        let p = read_panel(
            "t",
            "user_id,site_domain\nu1,r.org\nu2,z.org\nu1,z.org\n".as_bytes(),
            meta,
        )
        .unwrap();
        let (mut v, mut s) = (Vec::new(), Vec::new());
        p.write_visits(&mut v).unwrap();
        p.write_sites(&mut s).unwrap();
        let back =
            read_panel("t", v.as_slice(), read_site_metadata(s.as_slice()).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn proportion_bounds() {
        assert!(Proportion::new(3, 2).is_err());
        assert!(Proportion::new(0, 0).is_err());
        assert_eq!(Proportion::new(1, 4).unwrap().value(), 0.25);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn top_n_is_prefix_stable(counts in proptest::collection::vec(0usize..20, 2..12), k in 2usize..11) {
                let named: Vec<(String, usize)> = counts.iter().enumerate().map(|(i, &c)| (format!("s{}", i % 5 * 7 + i), c)).collect();
                let refs: Vec<(&str, usize)> = named.iter().map(|(d, c)| (d.as_str(), *c)).collect();
                let p = counts_panel(&refs, 20);
                let k = k.min(p.site_count() - 1).max(2);
                let small = p.top_n_sites(k).unwrap();
                let big = p.top_n_sites(k + 1).unwrap();
                prop_assert_eq!(&big[..small.len()], &small[..]);
            }

            #[test]
            fn reach_is_monotone_in_visits(visits in proptest::collection::vec((0usize..8, 0usize..4), 1..40), extra in (0usize..8, 0usize..4)) {
                let ids: Vec<String> = (0..8).map(|u| format!("u{u}")).collect();
                let sites: Vec<Site> = (0..4).map(|i| Site::new(i, format!("s{i}"))).collect();
                let before = PanelSnapshot::new("t", ids.clone(), sites.clone(), visits.clone()).unwrap();
                let mut more = visits;
                more.push(extra);
                let after = PanelSnapshot::new("t", ids, sites, more).unwrap();
                for (a, b) in before.reach_vector().iter().zip(after.reach_vector()) {
                    prop_assert!(*a <= b);
                    prop_assert!((0.0..=1.0).contains(&b));
                }
            }
        }
    }
}

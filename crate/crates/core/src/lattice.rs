//! Sites, finite boxes and the weighted geometry of the lattice.
//!
//! Sites are integer tuples of a fixed dimension `d`. A [`SiteBox`] is any
//! finite set of sites kept in sorted order; the cubic volumes used by the
//! samplers are `{-n, ..., n-1}^d`. Shifts follow the convention that the
//! shift by `i` moves the coordinate at `i + j` to relative position `j`,
//! so the `0`-coordinate of the shifted object is the original coordinate
//! at `i`.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// A lattice site, an integer tuple of length `d`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SiteIndex(pub Vec<i64>);

impl SiteIndex {
    pub fn new(coords: Vec<i64>) -> Self {
        SiteIndex(coords)
    }

    /// The origin in dimension `d`.
    pub fn origin(d: usize) -> Self {
        SiteIndex(vec![0; d])
    }

    /// One-dimensional site.
    pub fn d1(x: i64) -> Self {
        SiteIndex(vec![x])
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn plus(&self, other: &SiteIndex) -> SiteIndex {
        debug_assert_eq!(self.dimension(), other.dimension());
        SiteIndex(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn minus(&self, other: &SiteIndex) -> SiteIndex {
        debug_assert_eq!(self.dimension(), other.dimension());
        SiteIndex(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn negated(&self) -> SiteIndex {
        SiteIndex(self.0.iter().map(|a| -a).collect())
    }

    /// Sup-norm `|i| = max_k |i_k|`.
    pub fn sup_norm(&self) -> i64 {
        self.0.iter().map(|a| a.abs()).max().unwrap_or(0)
    }

    /// Parses the `;`-separated form produced by `Display`.
    pub fn parse(s: &str) -> Result<SiteIndex> {
        let coords: std::result::Result<Vec<i64>, _> =
            s.split(';').map(|p| p.trim().parse::<i64>()).collect();
        coords
            .map(SiteIndex)
            .map_err(|e| CoreError::Parse(format!("bad site `{s}`: {e}")))
    }
}

impl fmt::Display for SiteIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for c in &self.0 {
            if !first {
                write!(f, ";")?;
            }
            write!(f, "{c}")?;
            first = false;
        }
        Ok(())
    }
}

impl fmt::Debug for SiteIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({self})")
    }
}

/// Name of the site norm behind [`gamma`], recorded in export manifests.
pub const WEIGHT_NORM: &str = "sup";

/// The summable weight attached to a site: `1 / (1 + |i|)^(d+1)` with the
/// sup-norm. Symmetric under `i -> -i` and equal to `1` at the origin.
pub fn gamma(site: &SiteIndex) -> f64 {
    let d = site.dimension() as i32;
    let r = 1.0 + site.sup_norm() as f64;
    r.powi(-(d + 1))
}

/// A finite set of sites of common dimension, sorted lexicographically.
#[derive(Clone, Debug)]
pub struct SiteBox {
    sites: Vec<SiteIndex>,
    ordinals: HashMap<SiteIndex, usize>,
    dimension: usize,
}

impl PartialEq for SiteBox {
    fn eq(&self, other: &Self) -> bool {
        self.sites == other.sites
    }
}
impl Eq for SiteBox {}

impl SiteBox {
    /// Builds a box from an arbitrary list of sites; duplicates collapse.
    pub fn from_sites(mut sites: Vec<SiteIndex>) -> Result<SiteBox> {
        if sites.is_empty() {
            return Err(CoreError::InvalidParameter("empty site set".into()));
        }
        let dimension = sites[0].dimension();
        if dimension == 0 {
            return Err(CoreError::InvalidParameter("zero-dimensional site".into()));
        }
        for s in &sites {
            if s.dimension() != dimension {
                return Err(CoreError::DimensionMismatch {
                    expected: dimension,
                    got: s.dimension(),
                });
            }
        }
        sites.sort();
        sites.dedup();
        let ordinals = sites
            .iter()
            .enumerate()
            .map(|(k, s)| (s.clone(), k))
            .collect();
        Ok(SiteBox {
            sites,
            ordinals,
            dimension,
        })
    }

    /// The cubic volume `{-n, ..., n-1}^d` with `(2n)^d` sites.
    pub fn cube(d: usize, n: usize) -> Result<SiteBox> {
        if d == 0 || n == 0 {
            return Err(CoreError::InvalidParameter(format!(
                "cube needs d >= 1 and n >= 1, got d={d}, n={n}"
            )));
        }
        let n = n as i64;
        let mut sites = vec![SiteIndex(vec![-n; d])];
        for axis in 0..d {
            let mut next = Vec::with_capacity(sites.len() * (2 * n as usize));
            for s in &sites {
                for v in -n..n {
                    let mut c = s.0.clone();
                    c[axis] = v;
                    next.push(SiteIndex(c));
                }
            }
            sites = next;
        }
        SiteBox::from_sites(sites)
    }

    /// Centred sup-norm ball `{-r, ..., r}^d` with `(2r+1)^d` sites.
    pub fn ball(d: usize, r: usize) -> Result<SiteBox> {
        if d == 0 {
            return Err(CoreError::InvalidParameter("ball needs d >= 1".into()));
        }
        let r = r as i64;
        let mut sites = vec![SiteIndex(vec![0; d])];
        for axis in 0..d {
            let mut next = Vec::with_capacity(sites.len() * (2 * r as usize + 1));
            for s in &sites {
                for v in -r..=r {
                    let mut c = s.0.clone();
                    c[axis] = v;
                    next.push(SiteIndex(c));
                }
            }
            sites = next;
        }
        SiteBox::from_sites(sites)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[SiteIndex] {
        &self.sites
    }

    pub fn contains(&self, site: &SiteIndex) -> bool {
        self.ordinals.contains_key(site)
    }

    /// Position of `site` in the sorted order, if present.
    pub fn ordinal(&self, site: &SiteIndex) -> Option<usize> {
        self.ordinals.get(site).copied()
    }

    pub fn site(&self, ordinal: usize) -> &SiteIndex {
        &self.sites[ordinal]
    }

    /// True when every site of `self` lies in `other`.
    pub fn subset_of(&self, other: &SiteBox) -> bool {
        self.sites.iter().all(|s| other.contains(s))
    }

    /// The box moved by `v`: `{s + v}`.
    pub fn translated(&self, v: &SiteIndex) -> SiteBox {
        let sites = self.sites.iter().map(|s| s.plus(v)).collect();
        SiteBox::from_sites(sites).expect("translate preserves validity")
    }

    pub fn union(&self, other: &SiteBox) -> Result<SiteBox> {
        let mut sites = self.sites.clone();
        sites.extend_from_slice(&other.sites);
        SiteBox::from_sites(sites)
    }

    /// Sites of `self` not contained in `other`.
    pub fn difference(&self, other: &SiteBox) -> Vec<SiteIndex> {
        self.sites
            .iter()
            .filter(|s| !other.contains(s))
            .cloned()
            .collect()
    }

    /// The enlargement `{i : (range + i) meets self}`, the set of sites
    /// whose drift neighbourhood reaches into `self`. Contains `self`.
    pub fn enlarged(&self, range: &InteractionRange) -> SiteBox {
        let mut sites = Vec::with_capacity(self.len() * range.len());
        for s in &self.sites {
            for delta in range.sites() {
                sites.push(s.minus(delta));
            }
        }
        SiteBox::from_sites(sites).expect("enlargement of a valid box")
    }

    /// All sites a range-local drift reads while updating `self`:
    /// the union of `i + range` over `i` in `self`. Contains `self`.
    pub fn read_support(&self, range: &InteractionRange) -> SiteBox {
        let mut sites = Vec::with_capacity(self.len() * range.len());
        for s in &self.sites {
            for delta in range.sites() {
                sites.push(s.plus(delta));
            }
        }
        SiteBox::from_sites(sites).expect("read support of a valid box")
    }

    /// Sum of the site weights over the box.
    pub fn gamma_sum(&self) -> f64 {
        self.sites.iter().map(gamma).sum()
    }
}

/// The finite neighbourhood a drift functional may read, relative to the
/// site being updated. Always contains the origin.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionRange {
    sites: SiteBox,
    origin_ordinal: usize,
}

impl InteractionRange {
    pub fn new(sites: Vec<SiteIndex>) -> Result<InteractionRange> {
        let sites = SiteBox::from_sites(sites)?;
        let origin = SiteIndex::origin(sites.dimension());
        let origin_ordinal = sites.ordinal(&origin).ok_or_else(|| {
            CoreError::InvalidParameter("interaction range must contain the origin".into())
        })?;
        Ok(InteractionRange {
            sites,
            origin_ordinal,
        })
    }

    /// The singleton `{0}` in dimension `d`.
    pub fn origin_only(d: usize) -> InteractionRange {
        InteractionRange::new(vec![SiteIndex::origin(d)]).expect("origin range")
    }

    /// Sup-norm ball of radius `r`, `{-r..r}^d`.
    pub fn ball(d: usize, r: usize) -> Result<InteractionRange> {
        InteractionRange::new(SiteBox::ball(d, r)?.sites().to_vec())
    }

    pub fn dimension(&self) -> usize {
        self.sites.dimension()
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sites(&self) -> &[SiteIndex] {
        self.sites.sites()
    }

    pub fn as_box(&self) -> &SiteBox {
        &self.sites
    }

    /// Ordinal of the origin within the sorted site list.
    pub fn origin_ordinal(&self) -> usize {
        self.origin_ordinal
    }

    /// Largest sup-norm of any site in the range.
    pub fn radius(&self) -> i64 {
        self.sites
            .sites()
            .iter()
            .map(|s| s.sup_norm())
            .max()
            .unwrap_or(0)
    }

    /// Union with another range over the same dimension.
    pub fn merged(&self, other: &InteractionRange) -> Result<InteractionRange> {
        let mut sites = self.sites().to_vec();
        sites.extend_from_slice(other.sites());
        InteractionRange::new(sites)
    }
}

/// Real values attached to a finite set of sites, e.g. an initial condition
/// or a field of running maxima.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteField {
    support: SiteBox,
    values: Vec<f64>,
}

impl SiteField {
    pub fn new(support: SiteBox, values: Vec<f64>) -> Result<SiteField> {
        if support.len() != values.len() {
            return Err(CoreError::InvalidParameter(format!(
                "field needs one value per site: {} sites, {} values",
                support.len(),
                values.len()
            )));
        }
        Ok(SiteField { support, values })
    }

    pub fn zero(support: SiteBox) -> SiteField {
        let n = support.len();
        SiteField {
            support,
            values: vec![0.0; n],
        }
    }

    pub fn support(&self) -> &SiteBox {
        &self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, site: &SiteIndex) -> Result<f64> {
        self.support
            .ordinal(site)
            .map(|k| self.values[k])
            .ok_or_else(|| CoreError::MissingSite {
                site: site.to_string(),
                context: "site field".into(),
            })
    }

    /// The field shifted by `i`: the new value at `j` is the old value at
    /// `i + j`. The support moves to `support - i`.
    pub fn shifted(&self, i: &SiteIndex) -> SiteField {
        let support = self.support.translated(&i.negated());
        let values = support
            .sites()
            .iter()
            .map(|j| {
                let orig = j.plus(i);
                self.values[self.support.ordinal(&orig).expect("translated site")]
            })
            .collect();
        SiteField { support, values }
    }

    /// Weighted squared l2 norm `sum_i gamma_i x_i^2` over the support.
    pub fn weighted_sq_norm(&self) -> f64 {
        self.support
            .sites()
            .iter()
            .zip(self.values.iter())
            .map(|(s, x)| gamma(s) * x * x)
            .sum()
    }

    /// Restriction to the sites of `sub` (all of which must be present).
    pub fn restricted(&self, sub: &SiteBox) -> Result<SiteField> {
        let values: Result<Vec<f64>> = sub.sites().iter().map(|s| self.get(s)).collect();
        Ok(SiteField {
            support: sub.clone(),
            values: values?,
        })
    }
}

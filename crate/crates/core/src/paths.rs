//! Discrete-time paths on the unit interval and finite collections of them.
//!
//! Every path lives on the uniform grid `t_k = k / M`, `k = 0..=M`. Time
//! integrals and stochastic integrals are left-point Riemann sums on that
//! grid, and running maxima are taken over grid points only.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{CoreError, Result};
use crate::lattice::{SiteBox, SiteField, SiteIndex};

/// Default number of grid steps.
pub const DEFAULT_STEPS: usize = 200;

/// The uniform grid `0, 1/M, ..., 1` with `M` steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeGrid {
    steps: usize,
}

impl TimeGrid {
    pub fn new(steps: usize) -> Result<TimeGrid> {
        if steps == 0 {
            return Err(CoreError::InvalidParameter(
                "time grid needs at least one step".into(),
            ));
        }
        Ok(TimeGrid { steps })
    }

    /// Number of steps `M`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of grid points, `M + 1`.
    pub fn points(&self) -> usize {
        self.steps + 1
    }

    /// Step size `h = 1 / M`.
    pub fn h(&self) -> f64 {
        1.0 / self.steps as f64
    }

    /// The time `t_k = k / M`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.steps as f64
    }

    /// Grid index for a nominal time in `[0, 1]`, rounding to the nearest
    /// grid point.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&t) {
            return Err(CoreError::InvalidParameter(format!(
                "time {t} outside [0, 1]"
            )));
        }
        Ok((t * self.steps as f64).round() as usize)
    }

    pub fn check_index(&self, k: usize) -> Result<()> {
        if k > self.steps {
            return Err(CoreError::IndexOutOfRange {
                index: k,
                steps: self.steps,
            });
        }
        Ok(())
    }
}

/// One coordinate's trajectory: `M + 1` values on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub values: Vec<f64>,
}

impl Path {
    pub fn new(values: Vec<f64>) -> Self {
        Path { values }
    }

    pub fn constant(value: f64, grid: &TimeGrid) -> Self {
        Path {
            values: vec![value; grid.points()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Running maximum of `|p|` over grid points `0..=k`.
pub fn running_max(p: &Path, k: usize) -> Result<f64> {
    if k >= p.values.len() {
        return Err(CoreError::IndexOutOfRange {
            index: k,
            steps: p.values.len().saturating_sub(1),
        });
    }
    Ok(p.values[..=k].iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// Left-point stochastic sum `sum_k integrand[k] * (p(t_{k+1}) - p(t_k))`.
///
/// The integrand carries one value per step (`M` entries for a path with
/// `M + 1` points); entry `k` is the value at the left endpoint `t_k`.
pub fn ito_sum(integrand: &[f64], p: &Path) -> Result<f64> {
    if integrand.len() + 1 != p.values.len() {
        return Err(CoreError::InvalidParameter(format!(
            "integrand has {} entries for a path with {} increments",
            integrand.len(),
            p.values.len().saturating_sub(1)
        )));
    }
    let mut acc = 0.0;
    for (k, b) in integrand.iter().enumerate() {
        acc += b * (p.values[k + 1] - p.values[k]);
    }
    Ok(acc)
}

/// A finite family of paths indexed by lattice sites, all on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PathConfig {
    grid: TimeGrid,
    support: SiteBox,
    paths: Vec<Path>,
}

impl PathConfig {
    pub fn new(grid: TimeGrid, support: SiteBox, paths: Vec<Path>) -> Result<PathConfig> {
        if paths.len() != support.len() {
            return Err(CoreError::InvalidParameter(format!(
                "{} paths for {} sites",
                paths.len(),
                support.len()
            )));
        }
        for p in &paths {
            if p.values.len() != grid.points() {
                return Err(CoreError::GridMismatch {
                    left: grid.steps(),
                    right: p.values.len().saturating_sub(1),
                });
            }
        }
        Ok(PathConfig {
            grid,
            support,
            paths,
        })
    }

    /// All paths identically zero.
    pub fn zero(grid: TimeGrid, support: SiteBox) -> PathConfig {
        let paths = vec![Path::constant(0.0, &grid); support.len()];
        PathConfig {
            grid,
            support,
            paths,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn support(&self) -> &SiteBox {
        &self.support
    }

    pub fn dimension(&self) -> usize {
        self.support.dimension()
    }

    pub fn path(&self, site: &SiteIndex) -> Result<&Path> {
        self.support
            .ordinal(site)
            .map(|k| &self.paths[k])
            .ok_or_else(|| CoreError::MissingSite {
                site: site.to_string(),
                context: "path configuration".into(),
            })
    }

    pub fn path_by_ordinal(&self, ordinal: usize) -> &Path {
        &self.paths[ordinal]
    }

    pub fn path_by_ordinal_mut(&mut self, ordinal: usize) -> &mut Path {
        &mut self.paths[ordinal]
    }

    pub fn value(&self, site: &SiteIndex, k: usize) -> Result<f64> {
        self.grid.check_index(k)?;
        Ok(self.path(site)?.values[k])
    }

    /// The configuration shifted by `i`: the new path at `j` is the old
    /// path at `i + j`, so the new `0`-coordinate is the old coordinate
    /// at `i`. The support moves to `support - i`.
    pub fn shifted(&self, i: &SiteIndex) -> PathConfig {
        let support = self.support.translated(&i.negated());
        let paths = support
            .sites()
            .iter()
            .map(|j| {
                let orig = j.plus(i);
                self.paths[self.support.ordinal(&orig).expect("translated site")].clone()
            })
            .collect();
        PathConfig {
            grid: self.grid,
            support,
            paths,
        }
    }

    /// Joins two configurations with disjoint supports on a common grid.
    pub fn concat(inner: &PathConfig, outer: &PathConfig) -> Result<PathConfig> {
        if inner.grid != outer.grid {
            return Err(CoreError::GridMismatch {
                left: inner.grid.steps(),
                right: outer.grid.steps(),
            });
        }
        for s in inner.support.sites() {
            if outer.support.contains(s) {
                return Err(CoreError::OverlappingSupport {
                    site: s.to_string(),
                });
            }
        }
        let support = inner.support.union(&outer.support)?;
        let paths = support
            .sites()
            .iter()
            .map(|s| {
                inner
                    .path(s)
                    .or_else(|_| outer.path(s))
                    .expect("site from union")
                    .clone()
            })
            .collect();
        Ok(PathConfig {
            grid: inner.grid,
            support,
            paths,
        })
    }

    /// Restriction to a sub-box; every requested site must be present.
    pub fn restricted(&self, sub: &SiteBox) -> Result<PathConfig> {
        let paths: Result<Vec<Path>> = sub
            .sites()
            .iter()
            .map(|s| self.path(s).cloned())
            .collect();
        Ok(PathConfig {
            grid: self.grid,
            support: sub.clone(),
            paths: paths?,
        })
    }

    /// Overwrites the path at `site`.
    pub fn set_path(&mut self, site: &SiteIndex, path: Path) -> Result<()> {
        if path.values.len() != self.grid.points() {
            return Err(CoreError::GridMismatch {
                left: self.grid.steps(),
                right: path.values.len().saturating_sub(1),
            });
        }
        let k = self
            .support
            .ordinal(site)
            .ok_or_else(|| CoreError::MissingSite {
                site: site.to_string(),
                context: "path configuration".into(),
            })?;
        self.paths[k] = path;
        Ok(())
    }

    /// The field of initial values `X(0)`.
    pub fn initial_field(&self) -> SiteField {
        let values = self.paths.iter().map(|p| p.values[0]).collect();
        SiteField::new(self.support.clone(), values).expect("aligned by construction")
    }

    /// The field of running maxima `X*(t_k)`.
    pub fn running_max_field(&self, k: usize) -> Result<SiteField> {
        self.grid.check_index(k)?;
        let values: Result<Vec<f64>> = self.paths.iter().map(|p| running_max(p, k)).collect();
        SiteField::new(self.support.clone(), values?)
    }

    /// True when every value of every path is finite.
    pub fn all_finite(&self) -> bool {
        self.paths
            .iter()
            .all(|p| p.values.iter().all(|v| v.is_finite()))
    }

    /// Writes the configuration as `site,t_k,value` rows, sites in sorted
    /// order, grid index ascending within a site.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "site,t_k,value")?;
        for (s, p) in self.support.sites().iter().zip(self.paths.iter()) {
            for (k, v) in p.values.iter().enumerate() {
                writeln!(w, "{},{},{}", s, self.grid.time(k), v)?;
            }
        }
        Ok(())
    }

    /// Reads a configuration written by [`PathConfig::write_csv`].
    pub fn read_csv<R: BufRead>(r: R) -> Result<PathConfig> {
        let mut rows: BTreeMap<SiteIndex, Vec<(f64, f64)>> = BTreeMap::new();
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| CoreError::Parse("missing site,t_k,value header".into()))??;
        if header.trim() != "site,t_k,value" {
            return Err(CoreError::Parse("missing site,t_k,value header".into()));
        }
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, ',');
            let site = parts
                .next()
                .ok_or_else(|| CoreError::Parse(format!("bad row `{line}`")))?;
            let t: f64 = parts
                .next()
                .ok_or_else(|| CoreError::Parse(format!("bad row `{line}`")))?
                .parse()
                .map_err(|e| CoreError::Parse(format!("bad time in `{line}`: {e}")))?;
            let v: f64 = parts
                .next()
                .ok_or_else(|| CoreError::Parse(format!("bad row `{line}`")))?
                .parse()
                .map_err(|e| CoreError::Parse(format!("bad value in `{line}`: {e}")))?;
            rows.entry(SiteIndex::parse(site)?).or_default().push((t, v));
        }
        if rows.is_empty() {
            return Err(CoreError::Parse("no data rows".into()));
        }
        let points = rows.values().next().unwrap().len();
        if points < 2 {
            return Err(CoreError::Parse("fewer than two grid points".into()));
        }
        let grid = TimeGrid::new(points - 1)?;
        let mut sites = Vec::with_capacity(rows.len());
        let mut paths = Vec::with_capacity(rows.len());
        for (site, mut vals) in rows {
            if vals.len() != points {
                return Err(CoreError::Parse(format!(
                    "site {site} has {} rows, expected {points}",
                    vals.len()
                )));
            }
            vals.sort_by(|a, b| a.0.total_cmp(&b.0));
            sites.push(site);
            paths.push(Path::new(vals.into_iter().map(|(_, v)| v).collect()));
        }
        PathConfig::new(grid, SiteBox::from_sites(sites)?, paths)
    }
}

/// A read-only window into a configuration centred at a site: relative
/// position `j` resolves to absolute site `center + j`. This is how local
/// observables and drift functionals see the field.
#[derive(Clone, Copy)]
pub struct SiteView<'a> {
    config: &'a PathConfig,
    center: &'a SiteIndex,
}

impl<'a> SiteView<'a> {
    pub fn new(config: &'a PathConfig, center: &'a SiteIndex) -> SiteView<'a> {
        SiteView { config, center }
    }

    pub fn grid(&self) -> &TimeGrid {
        self.config.grid()
    }

    pub fn center(&self) -> &SiteIndex {
        self.center
    }

    /// Value of the coordinate at relative position `rel`, time `t_k`.
    pub fn value(&self, rel: &SiteIndex, k: usize) -> Result<f64> {
        self.config.value(&self.center.plus(rel), k)
    }

    /// The whole trajectory at relative position `rel`.
    pub fn path(&self, rel: &SiteIndex) -> Result<&'a Path> {
        self.config.path(&self.center.plus(rel))
    }
}

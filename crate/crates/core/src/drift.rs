//! Drift functionals and their structural checks.
//!
//! A drift is a map from (path configuration, grid index) to a real number.
//! It declares a finite interaction range (the relative sites it may read),
//! and it is expected to be adapted (reads nothing after the current grid
//! index) and sublinear: `b^2 <= C * (1 + sum_{j in range} x_j*(t_k)^2)`
//! where `x*` is the running maximum. The verifiers at the bottom of this
//! module probe all three properties empirically; intentionally broken
//! drifts are provided as negative controls.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};
use crate::lattice::{InteractionRange, SiteBox, SiteIndex};
use crate::paths::{running_max, Path, PathConfig, TimeGrid};
use crate::rng::{derive_rng, STREAM_VERIFY};

/// Function of the range values, used for the branch values of the
/// barycentre drift. The slice is ordered like the range's site list.
pub type RangeFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Function of (time, range values), the integrand of the running-integral
/// drift.
pub type TimeRangeFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

const MAX_STACK_RANGE: usize = 32;

/// How relative sites resolve to absolute ones when a plan is built.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WrapMode {
    /// Plain addition; every read site must exist in the support.
    None,
    /// Coordinates wrap into the cube `{-n, ..., n-1}^d`.
    Cube { n: i64 },
}

fn wrap_coord(c: i64, n: i64) -> i64 {
    let width = 2 * n;
    (((c + n) % width) + width) % width - n
}

/// A window into a configuration as one drift evaluation sees it: the
/// range's sites resolved to path ordinals ahead of time.
pub struct DriftView<'a> {
    config: &'a PathConfig,
    center: &'a SiteIndex,
    range_flats: &'a [usize],
}

impl<'a> DriftView<'a> {
    /// Values of the range site with ordinal `j` (in range site order).
    #[inline]
    pub fn range_path(&self, j: usize) -> &'a [f64] {
        &self.config.path_by_ordinal(self.range_flats[j]).values
    }

    #[inline]
    pub fn range_value(&self, j: usize, k: usize) -> f64 {
        self.config.path_by_ordinal(self.range_flats[j]).values[k]
    }

    pub fn grid(&self) -> &TimeGrid {
        self.config.grid()
    }

    pub fn center(&self) -> &SiteIndex {
        self.center
    }

    /// Unplanned lookup of an arbitrary relative site. Only the broken
    /// reference drifts use this; it does not wrap in periodic mode.
    pub fn value_at(&self, rel: &SiteIndex, k: usize) -> Option<f64> {
        self.config.value(&self.center.plus(rel), k).ok()
    }
}

/// Precomputed site resolution for evaluating one drift at a fixed list of
/// update sites inside a fixed support. Building the plan validates that
/// every site the drift reads is present.
#[derive(Clone, Debug)]
pub struct DriftPlan {
    update_sites: Vec<SiteIndex>,
    update_flats: Vec<usize>,
    range_flats: Vec<usize>,
    range_len: usize,
}

impl DriftPlan {
    pub fn new(
        drift: &DriftSpec,
        support: &SiteBox,
        update: &SiteBox,
        wrap: WrapMode,
    ) -> Result<DriftPlan> {
        if support.dimension() != drift.dimension() || update.dimension() != drift.dimension()
        {
            return Err(CoreError::DimensionMismatch {
                expected: drift.dimension(),
                got: support.dimension(),
            });
        }
        let range = drift.range();
        let mut update_flats = Vec::with_capacity(update.len());
        let mut range_flats = Vec::with_capacity(update.len() * range.len());
        for site in update.sites() {
            let flat = support.ordinal(site).ok_or_else(|| CoreError::MissingSite {
                site: site.to_string(),
                context: "update sites must lie in the support".into(),
            })?;
            update_flats.push(flat);
            for delta in range.sites() {
                let mut target = site.plus(delta);
                if let WrapMode::Cube { n } = wrap {
                    target = SiteIndex::new(
                        target.0.iter().map(|&c| wrap_coord(c, n)).collect(),
                    );
                }
                let f = support.ordinal(&target).ok_or_else(|| CoreError::MissingSite {
                    site: target.to_string(),
                    context: format!("drift range read from site {site}"),
                })?;
                range_flats.push(f);
            }
        }
        Ok(DriftPlan {
            update_sites: update.sites().to_vec(),
            update_flats,
            range_flats,
            range_len: range.len(),
        })
    }

    /// Number of update sites.
    pub fn len(&self) -> usize {
        self.update_sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.update_sites.is_empty()
    }

    pub fn site(&self, idx: usize) -> &SiteIndex {
        &self.update_sites[idx]
    }

    /// Path ordinal of update site `idx` within the support.
    pub fn update_flat(&self, idx: usize) -> usize {
        self.update_flats[idx]
    }

    /// The drift's view of `config` centred at update site `idx`.
    #[inline]
    pub fn view<'a>(&'a self, config: &'a PathConfig, idx: usize) -> DriftView<'a> {
        DriftView {
            config,
            center: &self.update_sites[idx],
            range_flats: &self.range_flats[idx * self.range_len..(idx + 1) * self.range_len],
        }
    }
}

#[derive(Clone)]
enum DriftKind {
    Zero,
    Constant {
        c: f64,
    },
    OrnsteinUhlenbeck {
        kappa: f64,
    },
    BarycentreDelay {
        delay: f64,
        beta_plus: RangeFn,
        beta_minus: RangeFn,
    },
    RunningIntegral {
        alpha: TimeRangeFn,
    },
    Offset {
        base: Box<DriftSpec>,
        shift: f64,
    },
    /// Negative control: reads a site outside the declared range.
    NonLocalProbe {
        probe: SiteIndex,
    },
    /// Negative control: reads the terminal value regardless of `k`.
    NonAdaptedProbe,
}

/// A drift functional together with its declared range and growth constant.
#[derive(Clone)]
pub struct DriftSpec {
    name: String,
    range: InteractionRange,
    growth_constant: f64,
    bound: Option<f64>,
    kind: DriftKind,
}

impl fmt::Debug for DriftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DriftSpec({})", self.name)
    }
}

impl DriftSpec {
    /// Identically zero drift.
    pub fn zero(d: usize) -> DriftSpec {
        DriftSpec {
            name: "zero".into(),
            range: InteractionRange::origin_only(d),
            growth_constant: 0.0,
            bound: Some(0.0),
            kind: DriftKind::Zero,
        }
    }

    /// Constant drift `c`.
    pub fn constant(d: usize, c: f64) -> DriftSpec {
        DriftSpec {
            name: format!("constant(c={c})"),
            range: InteractionRange::origin_only(d),
            growth_constant: c * c,
            bound: Some(c.abs()),
            kind: DriftKind::Constant { c },
        }
    }

    /// Mean-reverting linear drift `-kappa * x_0(t_k)`.
    pub fn ornstein_uhlenbeck(d: usize, kappa: f64) -> Result<DriftSpec> {
        if !(kappa > 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "mean reversion rate must be positive, got {kappa}"
            )));
        }
        Ok(DriftSpec {
            name: format!("ou(kappa={kappa})"),
            range: InteractionRange::origin_only(d),
            growth_constant: kappa * kappa,
            bound: None,
            kind: DriftKind::OrnsteinUhlenbeck { kappa },
        })
    }

    /// Threshold drift: compares the centre coordinate, frozen at the
    /// delayed grid time, with the mean of the range values at that time,
    /// and applies `beta_plus` on `>=`, `beta_minus` otherwise.
    pub fn barycentre_delay(
        range: InteractionRange,
        delay: f64,
        beta_plus: RangeFn,
        beta_minus: RangeFn,
        growth_constant: f64,
    ) -> Result<DriftSpec> {
        if !(delay > 0.0 && delay < 1.0) {
            return Err(CoreError::InvalidParameter(format!(
                "delay must lie in (0, 1), got {delay}"
            )));
        }
        if !(growth_constant >= 0.0) {
            return Err(CoreError::InvalidParameter(
                "growth constant must be nonnegative".into(),
            ));
        }
        Ok(DriftSpec {
            name: format!("barycentre_delay(delay={delay})"),
            range,
            growth_constant,
            bound: None,
            kind: DriftKind::BarycentreDelay {
                delay,
                beta_plus,
                beta_minus,
            },
        })
    }

    /// Barycentre drift with constant branch values.
    pub fn barycentre_delay_const(
        range: InteractionRange,
        delay: f64,
        beta_plus: f64,
        beta_minus: f64,
    ) -> Result<DriftSpec> {
        let growth = beta_plus.powi(2).max(beta_minus.powi(2));
        let mut spec = DriftSpec::barycentre_delay(
            range,
            delay,
            Arc::new(move |_| beta_plus),
            Arc::new(move |_| beta_minus),
            growth,
        )?;
        spec.name = format!(
            "barycentre_delay(delay={delay},beta_plus={beta_plus},beta_minus={beta_minus})"
        );
        spec.bound = Some(beta_plus.abs().max(beta_minus.abs()));
        Ok(spec)
    }

    /// Running time integral of `alpha(s, x_range(s))` up to the current
    /// grid time (left sum, so the value at `k = 0` is exactly zero).
    pub fn running_integral(
        range: InteractionRange,
        alpha: TimeRangeFn,
        growth_constant: f64,
    ) -> Result<DriftSpec> {
        if !(growth_constant >= 0.0) {
            return Err(CoreError::InvalidParameter(
                "growth constant must be nonnegative".into(),
            ));
        }
        Ok(DriftSpec {
            name: "running_integral".into(),
            range,
            growth_constant,
            bound: None,
            kind: DriftKind::RunningIntegral { alpha },
        })
    }

    /// Running integral of the centre coordinate itself.
    pub fn running_integral_coordinate(d: usize) -> DriftSpec {
        let mut spec = DriftSpec::running_integral(
            InteractionRange::origin_only(d),
            Arc::new(|_, x: &[f64]| x[0]),
            1.0,
        )
        .expect("valid parameters");
        spec.name = "running_integral(coordinate)".into();
        spec
    }

    /// The same drift shifted by a constant.
    pub fn with_offset(self, shift: f64) -> DriftSpec {
        let growth = 2.0 * self.growth_constant + 2.0 * shift * shift;
        DriftSpec {
            name: format!("{}+{}", self.name, shift),
            range: self.range.clone(),
            growth_constant: growth,
            bound: self.bound.map(|b| b + shift.abs()),
            kind: DriftKind::Offset {
                base: Box::new(self),
                shift,
            },
        }
    }

    /// Negative control that reads one site beyond its declared range.
    pub fn non_local_probe(d: usize) -> DriftSpec {
        let mut coords = vec![0i64; d];
        coords[0] = 1;
        DriftSpec {
            name: "non_local_probe".into(),
            range: InteractionRange::origin_only(d),
            growth_constant: 1e6,
            bound: None,
            kind: DriftKind::NonLocalProbe {
                probe: SiteIndex::new(coords),
            },
        }
    }

    /// Negative control that reads the terminal value of the centre path.
    pub fn non_adapted_probe(d: usize) -> DriftSpec {
        DriftSpec {
            name: "non_adapted_probe".into(),
            range: InteractionRange::origin_only(d),
            growth_constant: 1e6,
            bound: None,
            kind: DriftKind::NonAdaptedProbe,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn range(&self) -> &InteractionRange {
        &self.range
    }

    pub fn growth_constant(&self) -> f64 {
        self.growth_constant
    }

    /// A uniform bound on `|b|` when the construction guarantees one.
    pub fn sup_bound(&self) -> Option<f64> {
        self.bound
    }

    pub fn dimension(&self) -> usize {
        self.range.dimension()
    }

    /// Raw evaluation through a planned view. Callers are responsible for
    /// coverage (plans enforce it); the public checked entry points are
    /// [`DriftSpec::evaluate`] and [`DriftSpec::evaluate_at`].
    pub fn eval(&self, view: &DriftView<'_>, k: usize) -> f64 {
        match &self.kind {
            DriftKind::Zero => 0.0,
            DriftKind::Constant { c } => *c,
            DriftKind::OrnsteinUhlenbeck { kappa } => {
                -kappa * view.range_value(self.range.origin_ordinal(), k)
            }
            DriftKind::BarycentreDelay {
                delay,
                beta_plus,
                beta_minus,
            } => {
                let m = view.grid().steps() as f64;
                let lag = k as f64 - delay * m;
                let kd = if lag <= 0.0 { 0 } else { lag.floor() as usize };
                let nv = self.range.len();
                let mut stack = [0.0f64; MAX_STACK_RANGE];
                let mut heap: Vec<f64>;
                let xs: &mut [f64] = if nv <= MAX_STACK_RANGE {
                    &mut stack[..nv]
                } else {
                    heap = vec![0.0; nv];
                    &mut heap
                };
                for (j, x) in xs.iter_mut().enumerate() {
                    *x = view.range_value(j, kd);
                }
                let mean = xs.iter().sum::<f64>() / nv as f64;
                if xs[self.range.origin_ordinal()] >= mean {
                    beta_plus(xs)
                } else {
                    beta_minus(xs)
                }
            }
            DriftKind::RunningIntegral { alpha } => {
                let grid = view.grid();
                let nv = self.range.len();
                let mut stack = [0.0f64; MAX_STACK_RANGE];
                let mut heap: Vec<f64>;
                let xs: &mut [f64] = if nv <= MAX_STACK_RANGE {
                    &mut stack[..nv]
                } else {
                    heap = vec![0.0; nv];
                    &mut heap
                };
                let mut acc = 0.0;
                for j in 0..k {
                    for (jj, x) in xs.iter_mut().enumerate() {
                        *x = view.range_value(jj, j);
                    }
                    acc += alpha(grid.time(j), xs);
                }
                acc * grid.h()
            }
            DriftKind::Offset { base, shift } => base.eval(view, k) + shift,
            DriftKind::NonLocalProbe { probe } => view.value_at(probe, k).unwrap_or(0.0),
            DriftKind::NonAdaptedProbe => {
                view.range_value(self.range.origin_ordinal(), view.grid().steps())
            }
        }
    }

    /// Checked evaluation at the configuration's origin.
    pub fn evaluate(&self, config: &PathConfig, k: usize) -> Result<f64> {
        let origin = SiteIndex::origin(self.dimension());
        self.evaluate_at(config, &origin, k)
    }

    /// Checked evaluation centred at `center`: equals evaluating at the
    /// origin of the configuration shifted by `center`.
    pub fn evaluate_at(
        &self,
        config: &PathConfig,
        center: &SiteIndex,
        k: usize,
    ) -> Result<f64> {
        config.grid().check_index(k)?;
        if center.dimension() != self.dimension() {
            return Err(CoreError::DimensionMismatch {
                expected: self.dimension(),
                got: center.dimension(),
            });
        }
        let mut flats = Vec::with_capacity(self.range.len());
        for delta in self.range.sites() {
            let site = center.plus(delta);
            let flat = config
                .support()
                .ordinal(&site)
                .ok_or_else(|| CoreError::MissingSite {
                    site: site.to_string(),
                    context: "drift range".into(),
                })?;
            flats.push(flat);
        }
        let view = DriftView {
            config,
            center,
            range_flats: &flats,
        };
        let v = self.eval(&view, k);
        if !v.is_finite() {
            return Err(CoreError::NonFinite {
                site: center.to_string(),
                step: k,
                what: "drift value".into(),
            });
        }
        Ok(v)
    }
}

/// Outcome of one empirical drift check.
#[derive(Clone, Debug, serde::Serialize)]
pub struct DriftCheck {
    pub check: String,
    pub drift: String,
    pub passed: bool,
    pub trials: usize,
    pub counterexample: Option<String>,
    pub empirical_constant: Option<f64>,
    pub declared_constant: Option<f64>,
}

const VERIFY_STEPS: usize = 32;

fn trial_config(d: usize, radius: usize, grid: &TimeGrid, rng: &mut impl Rng) -> PathConfig {
    let support = SiteBox::ball(d, radius).expect("verifier support");
    let sqrt_h = grid.h().sqrt();
    let paths = support
        .sites()
        .iter()
        .map(|_| {
            let mut v = Vec::with_capacity(grid.points());
            let mut x: f64 = rng.sample(StandardNormal);
            v.push(x);
            for _ in 0..grid.steps() {
                let z: f64 = rng.sample(StandardNormal);
                x += sqrt_h * z;
                v.push(x);
            }
            Path::new(v)
        })
        .collect();
    PathConfig::new(*grid, support, paths).expect("verifier config")
}

fn verifier_radius(b: &DriftSpec) -> usize {
    b.range().radius() as usize + 2
}

/// Checks that the drift reads nothing outside its declared range: values
/// must be bit-identical after perturbing sites off the range.
pub fn verify_local(b: &DriftSpec, trials: usize, seed: u64) -> DriftCheck {
    let grid = TimeGrid::new(VERIFY_STEPS).expect("grid");
    let radius = verifier_radius(b);
    let mut counterexample = None;
    for trial in 0..trials {
        let mut rng = derive_rng(seed, &[STREAM_VERIFY, 1, trial as u64]);
        let cfg = trial_config(b.dimension(), radius, &grid, &mut rng);
        let k = rng.gen_range(0..=grid.steps());
        let before = b
            .evaluate(&cfg, k)
            .expect("verifier support covers the declared range");
        let outside = cfg.support().difference(b.range().as_box());
        let mut perturbed = cfg.clone();
        let mut touched = Vec::new();
        for _ in 0..3 {
            let site = outside[rng.gen_range(0..outside.len())].clone();
            let mut path = perturbed.path(&site).expect("site in support").clone();
            for v in &mut path.values {
                *v += rng.sample::<f64, _>(StandardNormal);
            }
            perturbed.set_path(&site, path).expect("site in support");
            touched.push(site.to_string());
        }
        let after = b
            .evaluate(&perturbed, k)
            .expect("verifier support covers the declared range");
        if before.to_bits() != after.to_bits() {
            counterexample = Some(format!(
                "perturbing sites [{}] outside the declared range changed the value at k={k} \
                 from {before} to {after} (trial {trial})",
                touched.join(", ")
            ));
            break;
        }
    }
    DriftCheck {
        check: "locality".into(),
        drift: b.name().into(),
        passed: counterexample.is_none(),
        trials,
        counterexample,
        empirical_constant: None,
        declared_constant: None,
    }
}

/// Checks adaptedness: values at grid index `k` must be bit-identical after
/// perturbing any path strictly after `t_k`.
pub fn verify_adapted(b: &DriftSpec, trials: usize, seed: u64) -> DriftCheck {
    let grid = TimeGrid::new(VERIFY_STEPS).expect("grid");
    let radius = verifier_radius(b);
    let mut counterexample = None;
    for trial in 0..trials {
        let mut rng = derive_rng(seed, &[STREAM_VERIFY, 2, trial as u64]);
        let cfg = trial_config(b.dimension(), radius, &grid, &mut rng);
        let k = rng.gen_range(0..grid.steps());
        let before = b
            .evaluate(&cfg, k)
            .expect("verifier support covers the declared range");
        let mut perturbed = cfg.clone();
        let mut touched = Vec::new();
        for _ in 0..3 {
            let site =
                perturbed.support().sites()[rng.gen_range(0..perturbed.support().len())].clone();
            let mut path = perturbed.path(&site).expect("site in support").clone();
            for v in &mut path.values[k + 1..] {
                *v += rng.sample::<f64, _>(StandardNormal);
            }
            perturbed.set_path(&site, path).expect("site in support");
            touched.push(site.to_string());
        }
        let after = b
            .evaluate(&perturbed, k)
            .expect("verifier support covers the declared range");
        if before.to_bits() != after.to_bits() {
            counterexample = Some(format!(
                "perturbing sites [{}] strictly after t_{k} changed the value at k={k} \
                 from {before} to {after} (trial {trial})",
                touched.join(", ")
            ));
            break;
        }
    }
    DriftCheck {
        check: "adaptedness".into(),
        drift: b.name().into(),
        passed: counterexample.is_none(),
        trials,
        counterexample,
        empirical_constant: None,
        declared_constant: None,
    }
}

/// Estimates the smallest growth constant seen on random configurations
/// and compares it with the declared one.
pub fn verify_sublinear(b: &DriftSpec, trials: usize, seed: u64) -> DriftCheck {
    let grid = TimeGrid::new(VERIFY_STEPS).expect("grid");
    let radius = verifier_radius(b);
    let mut worst = 0.0f64;
    let mut counterexample = None;
    for trial in 0..trials {
        let mut rng = derive_rng(seed, &[STREAM_VERIFY, 3, trial as u64]);
        let cfg = trial_config(b.dimension(), radius, &grid, &mut rng);
        let k = rng.gen_range(0..=grid.steps());
        let v = b
            .evaluate(&cfg, k)
            .expect("verifier support covers the declared range");
        let mut denom = 1.0;
        for delta in b.range().sites() {
            let p = cfg.path(delta).expect("range site in support");
            let m = running_max(p, k).expect("index in range");
            denom += m * m;
        }
        let ratio = v * v / denom;
        if ratio > worst {
            worst = ratio;
            if ratio > b.growth_constant() && counterexample.is_none() {
                counterexample = Some(format!(
                    "b^2 = {} exceeds {} * (1 + sum of squared running maxima) at k={k} \
                     (trial {trial})",
                    v * v,
                    b.growth_constant()
                ));
            }
        }
    }
    DriftCheck {
        check: "sublinearity".into(),
        drift: b.name().into(),
        passed: worst <= b.growth_constant(),
        trials,
        counterexample,
        empirical_constant: Some(worst),
        declared_constant: Some(b.growth_constant()),
    }
}

/// Runs all three checks.
pub fn verify_all(b: &DriftSpec, trials: usize, seed: u64) -> Vec<DriftCheck> {
    vec![
        verify_local(b, trials, seed),
        verify_adapted(b, trials, seed),
        verify_sublinear(b, trials, seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_with_values(values: &[(i64, f64)], grid: &TimeGrid) -> PathConfig {
        let sites: Vec<SiteIndex> = values.iter().map(|(s, _)| SiteIndex::d1(*s)).collect();
        let support = SiteBox::from_sites(sites).unwrap();
        let paths = support
            .sites()
            .iter()
            .map(|s| {
                let v = values.iter().find(|(i, _)| SiteIndex::d1(*i) == *s).unwrap().1;
                Path::constant(v, grid)
            })
            .collect();
        PathConfig::new(*grid, support, paths).unwrap()
    }

    #[test]
    fn barycentre_branches() {
        let grid = TimeGrid::new(200).unwrap();
        let range = InteractionRange::ball(1, 1).unwrap();
        let b = DriftSpec::barycentre_delay_const(range, 0.25, 1.0, -1.0).unwrap();
        // centre above the mean
        let cfg = config_with_values(&[(-1, 0.0), (0, 2.0), (1, 0.0)], &grid);
        assert_eq!(b.evaluate(&cfg, 60).unwrap(), 1.0);
        // centre below the mean
        let cfg = config_with_values(&[(-1, 0.0), (0, -2.0), (1, 0.0)], &grid);
        assert_eq!(b.evaluate(&cfg, 60).unwrap(), -1.0);
        // exact tie takes the plus branch
        let cfg = config_with_values(&[(-1, 1.0), (0, 1.0), (1, 1.0)], &grid);
        assert_eq!(b.evaluate(&cfg, 60).unwrap(), 1.0);
    }

    #[test]
    fn barycentre_delay_snaps_to_grid() {
        // delay 0.25 on a 200-step grid freezes index k - 50.
        let grid = TimeGrid::new(200).unwrap();
        let range = InteractionRange::ball(1, 1).unwrap();
        let b = DriftSpec::barycentre_delay_const(range, 0.25, 1.0, -1.0).unwrap();
        let support = SiteBox::ball(1, 1).unwrap();
        // centre path rises after t=0.05: at k=60 the delayed index is 10,
        // where the centre is still below the neighbours' mean.
        let paths = support
            .sites()
            .iter()
            .map(|s| {
                if s == &SiteIndex::d1(0) {
                    Path::new(
                        (0..grid.points())
                            .map(|k| if k <= 10 { -1.0 } else { 5.0 })
                            .collect(),
                    )
                } else {
                    Path::constant(0.0, &grid)
                }
            })
            .collect();
        let cfg = PathConfig::new(grid, support, paths).unwrap();
        assert_eq!(b.evaluate(&cfg, 60).unwrap(), -1.0);
        assert_eq!(b.evaluate(&cfg, 61).unwrap(), 1.0);
        // clamped at zero near the start
        assert_eq!(b.evaluate(&cfg, 0).unwrap(), -1.0);
    }

    #[test]
    fn running_integral_linear_path() {
        // alpha = x_0 against the linear path t gives h^2 * k(k-1)/2.
        let m = 10usize;
        let grid = TimeGrid::new(m).unwrap();
        let support = SiteBox::ball(1, 0).unwrap();
        let path = Path::new((0..grid.points()).map(|k| grid.time(k)).collect());
        let cfg = PathConfig::new(grid, support, vec![path]).unwrap();
        let b = DriftSpec::running_integral_coordinate(1);
        assert_eq!(b.evaluate(&cfg, 0).unwrap(), 0.0);
        for k in 1..=m {
            let want = (k * (k - 1)) as f64 / (2.0 * (m * m) as f64);
            let got = b.evaluate(&cfg, k).unwrap();
            assert!((got - want).abs() < 1e-14, "k={k}: {got} vs {want}");
        }
    }

    #[test]
    fn ou_reads_current_value() {
        let grid = TimeGrid::new(4).unwrap();
        let cfg = config_with_values(&[(0, 2.5)], &grid);
        let b = DriftSpec::ornstein_uhlenbeck(1, 1.0).unwrap();
        assert_eq!(b.evaluate(&cfg, 2).unwrap(), -2.5);
        let b2 = DriftSpec::ornstein_uhlenbeck(1, 0.5).unwrap();
        assert_eq!(b2.evaluate(&cfg, 2).unwrap(), -1.25);
    }

    #[test]
    fn offset_adds_constant() {
        let grid = TimeGrid::new(4).unwrap();
        let cfg = config_with_values(&[(0, 2.0)], &grid);
        let b = DriftSpec::ornstein_uhlenbeck(1, 1.0).unwrap().with_offset(0.5);
        assert_eq!(b.evaluate(&cfg, 1).unwrap(), -1.5);
    }

    #[test]
    fn evaluate_at_matches_shifted_config() {
        let grid = TimeGrid::new(8).unwrap();
        let mut rng = derive_rng(11, &[99]);
        let cfg = trial_config(1, 3, &grid, &mut rng);
        let range = InteractionRange::ball(1, 1).unwrap();
        let b = DriftSpec::barycentre_delay_const(range, 0.25, 0.7, -0.3).unwrap();
        for i in [-2i64, -1, 0, 1, 2] {
            let center = SiteIndex::d1(i);
            let direct = b.evaluate_at(&cfg, &center, 5).unwrap();
            let shifted = b.evaluate(&cfg.shifted(&center), 5).unwrap();
            assert_eq!(direct.to_bits(), shifted.to_bits());
        }
    }

    #[test]
    fn evaluate_reports_missing_sites() {
        let grid = TimeGrid::new(4).unwrap();
        let cfg = config_with_values(&[(0, 1.0)], &grid);
        let range = InteractionRange::ball(1, 1).unwrap();
        let b = DriftSpec::barycentre_delay_const(range, 0.25, 1.0, -1.0).unwrap();
        assert!(matches!(
            b.evaluate(&cfg, 0),
            Err(CoreError::MissingSite { .. })
        ));
    }

    #[test]
    fn honest_drifts_pass_verifiers() {
        let range = InteractionRange::ball(1, 1).unwrap();
        let drifts = vec![
            DriftSpec::zero(1),
            DriftSpec::constant(1, 0.5),
            DriftSpec::ornstein_uhlenbeck(1, 1.0).unwrap(),
            DriftSpec::barycentre_delay_const(range.clone(), 0.25, 1.0, -1.0).unwrap(),
            DriftSpec::running_integral_coordinate(1),
            DriftSpec::constant(1, 0.25).with_offset(0.5),
        ];
        for b in &drifts {
            for check in verify_all(b, 200, 2024) {
                assert!(
                    check.passed,
                    "{} failed {}: {:?}",
                    b.name(),
                    check.check,
                    check.counterexample
                );
            }
        }
    }

    #[test]
    fn probes_fail_their_target_checks() {
        let nl = DriftSpec::non_local_probe(1);
        let local = verify_local(&nl, 500, 7);
        assert!(!local.passed);
        assert!(local.counterexample.is_some());
        assert!(verify_adapted(&nl, 500, 7).passed);

        let na = DriftSpec::non_adapted_probe(1);
        let adapted = verify_adapted(&na, 500, 7);
        assert!(!adapted.passed);
        assert!(adapted.counterexample.is_some());
        assert!(verify_local(&na, 500, 7).passed);
    }

    #[test]
    fn plan_wraps_in_periodic_mode() {
        let grid = TimeGrid::new(2).unwrap();
        let cube = SiteBox::cube(1, 2).unwrap();
        let paths = cube
            .sites()
            .iter()
            .map(|s| Path::constant(s.0[0] as f64, &grid))
            .collect();
        let cfg = PathConfig::new(grid, cube.clone(), paths).unwrap();
        let b = DriftSpec::ornstein_uhlenbeck(1, 1.0).unwrap();
        let range = InteractionRange::ball(1, 1).unwrap();
        let probe = DriftSpec::barycentre_delay_const(range, 0.5, 1.0, -1.0).unwrap();
        // site 1 + delta 1 wraps to -2 inside {-2..1}
        let plan = DriftPlan::new(&probe, &cube, &cube, WrapMode::Cube { n: 2 }).unwrap();
        let view = plan.view(&cfg, cube.ordinal(&SiteIndex::d1(1)).unwrap());
        // range sites sorted: -1, 0, 1 -> values 0, 1, wrapped(-2)
        assert_eq!(view.range_value(0, 0), 0.0);
        assert_eq!(view.range_value(1, 0), 1.0);
        assert_eq!(view.range_value(2, 0), -2.0);
        // without wrapping the plan must refuse
        assert!(DriftPlan::new(&probe, &cube, &cube, WrapMode::None).is_err());
        let _ = b;
    }

    #[test]
    fn names_carry_parameters() {
        assert_eq!(DriftSpec::constant(1, 0.5).name(), "constant(c=0.5)");
        assert_eq!(
            DriftSpec::constant(1, 0.25).with_offset(0.5).name(),
            "constant(c=0.25)+0.5"
        );
    }
}

//! Euler-Maruyama sampling of finite volumes and ensemble statistics.
//!
//! The scheme is the left-point one,
//! `X_i(t_{k+1}) = X_i(t_k) + b(view_i, k) h + sqrt(h) Z_{i,k}`,
//! with independent standard normals `Z`. The Gaussian increments are
//! retained per replica so that likelihood ratios and exact decomposition
//! checks can be rebuilt after the fact. Volumes are updated inside a frozen
//! environment (an explicit outside configuration, zeros, or periodic
//! wrapping).

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path as FsPath;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::drift::{DriftPlan, DriftSpec, WrapMode};
use crate::error::{CoreError, Result};
use crate::lattice::{SiteBox, SiteField, SiteIndex};
use crate::paths::{Path, PathConfig, SiteView, TimeGrid, DEFAULT_STEPS};
use crate::rng::{derive_rng, site_key, STREAM_BOUNDARY, STREAM_REPLICA, STREAM_TILING};

fn default_steps() -> usize {
    DEFAULT_STEPS
}

pub type CoordinateSampler = Arc<dyn Fn(&mut dyn RngCore) -> f64 + Send + Sync>;
pub type CoordinateLogDensity = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Product initial law for the coordinates of a volume. The reference
/// one-site law for densities and entropies is the standard Gaussian.
#[derive(Clone)]
pub enum InitialLaw {
    /// Every coordinate starts at a fixed point.
    Dirac { value: f64 },
    /// Independent Gaussians with common mean and variance.
    GaussianProduct { mean: f64, variance: f64 },
    /// Arbitrary product law given by a sampler and a log density relative
    /// to the standard Gaussian.
    DensityProduct {
        label: String,
        sampler: CoordinateSampler,
        log_density: CoordinateLogDensity,
    },
}

impl std::fmt::Debug for InitialLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "InitialLaw({})", self.name())
    }
}

impl InitialLaw {
    pub fn name(&self) -> String {
        match self {
            InitialLaw::Dirac { value } => format!("dirac(value={value})"),
            InitialLaw::GaussianProduct { mean, variance } => {
                format!("gaussian_product(mean={mean},variance={variance})")
            }
            InitialLaw::DensityProduct { label, .. } => {
                format!("density_product({label})")
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InitialLaw::Dirac { value } => {
                if !value.is_finite() {
                    return Err(CoreError::InvalidParameter(
                        "initial point must be finite".into(),
                    ));
                }
            }
            InitialLaw::GaussianProduct { mean, variance } => {
                if !mean.is_finite() || !(*variance > 0.0) || !variance.is_finite() {
                    return Err(CoreError::InvalidParameter(format!(
                        "gaussian initial law needs finite mean and variance > 0, \
                         got mean={mean}, variance={variance}"
                    )));
                }
            }
            InitialLaw::DensityProduct { .. } => {}
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            InitialLaw::Dirac { value } => *value,
            InitialLaw::GaussianProduct { mean, variance } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + variance.sqrt() * z
            }
            InitialLaw::DensityProduct { sampler, .. } => sampler(rng),
        }
    }

    /// One independent draw per site, in the box's sorted site order.
    pub fn sample_field(&self, support: &SiteBox, rng: &mut ChaCha8Rng) -> SiteField {
        let values = support.sites().iter().map(|_| self.sample(rng)).collect();
        SiteField::new(support.clone(), values).expect("one value per site")
    }

    /// Log density of one coordinate relative to the standard Gaussian.
    pub fn log_density(&self, x: f64) -> Result<f64> {
        match self {
            InitialLaw::Dirac { .. } => Err(CoreError::NoDensity(self.name())),
            InitialLaw::GaussianProduct { mean, variance } => {
                let centred = x - mean;
                Ok(-centred * centred / (2.0 * variance) - 0.5 * variance.ln() + x * x / 2.0)
            }
            InitialLaw::DensityProduct { log_density, .. } => Ok(log_density(x)),
        }
    }

    /// Relative entropy of one coordinate with respect to the standard
    /// Gaussian, when a closed form exists.
    pub fn relative_entropy_closed_form(&self) -> Option<f64> {
        match self {
            InitialLaw::GaussianProduct { mean, variance } => {
                Some(0.5 * (mean * mean + variance - 1.0 - variance.ln()))
            }
            _ => None,
        }
    }

    /// True when [`InitialLaw::log_density`] is available.
    pub fn has_density(&self) -> bool {
        !matches!(self, InitialLaw::Dirac { .. })
    }
}

/// Frozen outside data for a volume.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryField {
    #[default]
    Zero,
    Constant { value: f64 },
    /// Independent scaled Brownian paths started at zero, one per site,
    /// reproducible from the seed and the site coordinates.
    ScaledBrownian { scale: f64 },
}

impl BoundaryField {
    pub fn materialize(&self, support: &SiteBox, grid: TimeGrid, seed: u64) -> PathConfig {
        match self {
            BoundaryField::Zero => PathConfig::zero(grid, support.clone()),
            BoundaryField::Constant { value } => {
                let paths = vec![Path::constant(*value, &grid); support.len()];
                PathConfig::new(grid, support.clone(), paths).expect("aligned")
            }
            BoundaryField::ScaledBrownian { scale } => {
                let sqrt_h = grid.h().sqrt();
                let paths = support
                    .sites()
                    .iter()
                    .map(|s| {
                        let mut rng =
                            derive_rng(seed, &[STREAM_BOUNDARY, site_key(&s.0)]);
                        let mut v = Vec::with_capacity(grid.points());
                        let mut x = 0.0f64;
                        v.push(x);
                        for _ in 0..grid.steps() {
                            let z: f64 = rng.sample(StandardNormal);
                            x += scale * sqrt_h * z;
                            v.push(x);
                        }
                        Path::new(v)
                    })
                    .collect();
                PathConfig::new(grid, support.clone(), paths).expect("aligned")
            }
        }
    }
}

/// How the volume is closed off.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryMode {
    /// Outside coordinates frozen at zero.
    #[default]
    Zero,
    /// Indices wrap modulo the box; no outside coordinates exist.
    Periodic,
    /// Outside coordinates frozen at an explicit field.
    Frozen { field: BoundaryField },
}

/// Parameters of one finite-volume run.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Lattice dimension.
    pub d: usize,
    /// Half-width of the cubic volume `{-n, ..., n-1}^d`.
    pub n: usize,
    /// Grid steps on `[0, 1]`.
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Number of independent replicas.
    pub replicas: usize,
    /// Root seed; all streams derive from it.
    pub seed: u64,
    #[serde(default)]
    pub boundary: BoundaryMode,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 || self.steps == 0 || self.replicas == 0 {
            return Err(CoreError::InvalidParameter(format!(
                "d, n, steps and replicas must be positive (d={}, n={}, steps={}, replicas={})",
                self.d, self.n, self.steps, self.replicas
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.steps)
    }

    pub fn volume(&self) -> Result<SiteBox> {
        SiteBox::cube(self.d, self.n)
    }
}

/// Result of one volume update: the full configuration (updated inside,
/// frozen outside) and the Gaussian increments used, ordered like the
/// volume's site list.
#[derive(Clone, Debug)]
pub struct SolveOutput {
    pub paths: PathConfig,
    pub noise: Vec<Vec<f64>>,
}

/// Reusable solver for one (drift, volume, environment) geometry.
pub struct ReplicaSolver {
    drift: DriftSpec,
    volume: SiteBox,
    template: PathConfig,
    plan: DriftPlan,
}

impl ReplicaSolver {
    /// Solver against a frozen environment. `xi` must cover the volume and
    /// every site the drift reads from it; its paths outside the volume are
    /// kept verbatim, and its time-zero values inside the volume are the
    /// default initial condition.
    pub fn new(drift: &DriftSpec, volume: &SiteBox, xi: &PathConfig) -> Result<ReplicaSolver> {
        if !volume.subset_of(xi.support()) {
            let missing = volume
                .difference(xi.support())
                .first()
                .map(|s| s.to_string())
                .unwrap_or_default();
            return Err(CoreError::MissingSite {
                site: missing,
                context: "volume must lie inside the environment".into(),
            });
        }
        let plan = DriftPlan::new(drift, xi.support(), volume, WrapMode::None)?;
        Ok(ReplicaSolver {
            drift: drift.clone(),
            volume: volume.clone(),
            template: xi.clone(),
            plan,
        })
    }

    /// Solver on the cube `{-n, ..., n-1}^d` with periodic wrapping.
    pub fn new_periodic(drift: &DriftSpec, n: usize, grid: TimeGrid) -> Result<ReplicaSolver> {
        let volume = SiteBox::cube(drift.dimension(), n)?;
        let template = PathConfig::zero(grid, volume.clone());
        let plan = DriftPlan::new(drift, &volume, &volume, WrapMode::Cube { n: n as i64 })?;
        Ok(ReplicaSolver {
            drift: drift.clone(),
            volume: volume.clone(),
            template,
            plan,
        })
    }

    pub fn volume(&self) -> &SiteBox {
        &self.volume
    }

    pub fn support(&self) -> &SiteBox {
        self.template.support()
    }

    pub fn grid(&self) -> &TimeGrid {
        self.template.grid()
    }

    /// Runs one replica from the given initial values on the volume.
    /// The noise draw order (sites within each step) is part of the
    /// reproducibility contract.
    #[allow(clippy::needless_range_loop)]
    pub fn solve(&self, initial: &SiteField, rng: &mut ChaCha8Rng) -> Result<SolveOutput> {
        let grid = *self.template.grid();
        let m = grid.steps();
        let h = grid.h();
        let sqrt_h = h.sqrt();
        let mut work = self.template.clone();
        for (idx, site) in self.volume.sites().iter().enumerate() {
            let x0 = initial.get(site)?;
            work.path_by_ordinal_mut(self.plan.update_flat(idx)).values[0] = x0;
        }
        let nsites = self.plan.len();
        let mut drifts = vec![0.0f64; nsites];
        let mut noise = vec![vec![0.0f64; m]; nsites];
        for k in 0..m {
            for (idx, dv) in drifts.iter_mut().enumerate() {
                let view = self.plan.view(&work, idx);
                *dv = self.drift.eval(&view, k);
            }
            for idx in 0..nsites {
                let z: f64 = rng.sample(StandardNormal);
                let incr = sqrt_h * z;
                let p = work.path_by_ordinal_mut(self.plan.update_flat(idx));
                let next = p.values[k] + drifts[idx] * h + incr;
                if !next.is_finite() {
                    return Err(CoreError::NonFinite {
                        site: self.volume.site(idx).to_string(),
                        step: k + 1,
                        what: "state update (drift overflow?)".into(),
                    });
                }
                p.values[k + 1] = next;
                noise[idx][k] = incr;
            }
        }
        Ok(SolveOutput { paths: work, noise })
    }
}

/// One-off volume update against a frozen environment, with the initial
/// values taken from the environment itself.
pub fn solve_finite_volume(
    drift: &DriftSpec,
    volume: &SiteBox,
    xi: &PathConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SolveOutput> {
    let solver = ReplicaSolver::new(drift, volume, xi)?;
    let initial = xi.initial_field().restricted(volume)?;
    solver.solve(&initial, rng)
}

/// One stored replica: the final configuration and its Gaussian increments
/// (indexed like the volume's site list).
#[derive(Clone, Debug)]
pub struct Replica {
    pub paths: PathConfig,
    pub noise: Vec<Vec<f64>>,
}

/// A finite-volume ensemble with retained increments.
pub struct Ensemble {
    pub config: SimConfig,
    pub grid: TimeGrid,
    pub volume: SiteBox,
    pub support: SiteBox,
    pub drift: DriftSpec,
    pub initial: InitialLaw,
    pub replicas: Vec<Replica>,
}

fn build_solver(cfg: &SimConfig, drift: &DriftSpec) -> Result<ReplicaSolver> {
    cfg.validate()?;
    if drift.dimension() != cfg.d {
        return Err(CoreError::DimensionMismatch {
            expected: cfg.d,
            got: drift.dimension(),
        });
    }
    let grid = cfg.grid()?;
    let volume = cfg.volume()?;
    match &cfg.boundary {
        BoundaryMode::Zero => {
            let support = volume.read_support(drift.range());
            let xi = PathConfig::zero(grid, support);
            ReplicaSolver::new(drift, &volume, &xi)
        }
        BoundaryMode::Frozen { field } => {
            let support = volume.read_support(drift.range());
            let xi = field.materialize(&support, grid, cfg.seed);
            ReplicaSolver::new(drift, &volume, &xi)
        }
        BoundaryMode::Periodic => ReplicaSolver::new_periodic(drift, cfg.n, grid),
    }
}

/// Runs the configured number of replicas and maps each one through `f`
/// before it is dropped. Replica `r` is reproducible from `(seed, r)`
/// alone, so the result is independent of the worker pool.
pub fn sample_volume_map<T: Send>(
    cfg: &SimConfig,
    drift: &DriftSpec,
    initial: &InitialLaw,
    f: impl Fn(usize, Replica) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    initial.validate()?;
    let solver = build_solver(cfg, drift)?;
    (0..cfg.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = derive_rng(cfg.seed, &[STREAM_REPLICA, r as u64]);
            let init = initial.sample_field(solver.volume(), &mut rng);
            let out = solver.solve(&init, &mut rng)?;
            f(
                r,
                Replica {
                    paths: out.paths,
                    noise: out.noise,
                },
            )
        })
        .collect()
}

/// Runs and retains a full ensemble.
pub fn sample_volume(
    cfg: &SimConfig,
    drift: &DriftSpec,
    initial: &InitialLaw,
) -> Result<Ensemble> {
    let replicas = sample_volume_map(cfg, drift, initial, |_, rep| Ok(rep))?;
    let solver = build_solver(cfg, drift)?;
    Ok(Ensemble {
        config: cfg.clone(),
        grid: *solver.grid(),
        volume: solver.volume().clone(),
        support: solver.support().clone(),
        drift: drift.clone(),
        initial: initial.clone(),
        replicas,
    })
}

/// Zero-boundary ensemble on `{-n, ..., n-1}^d` (the product-environment
/// run every consistency check builds on).
pub fn sample_pn(
    drift: &DriftSpec,
    n: usize,
    initial: &InitialLaw,
    steps: usize,
    seed: u64,
    replicas: usize,
) -> Result<Ensemble> {
    let cfg = SimConfig {
        d: drift.dimension(),
        n,
        steps,
        replicas,
        seed,
        boundary: BoundaryMode::Zero,
    };
    sample_volume(&cfg, drift, initial)
}

/// Independent driftless coordinates on an arbitrary box, each started from
/// an independent draw of `initial`; `f` consumes each sampled configuration.
pub fn sample_free_field_map<T: Send>(
    support: &SiteBox,
    steps: usize,
    initial: &InitialLaw,
    seed: u64,
    samples: usize,
    f: impl Fn(usize, PathConfig) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    initial.validate()?;
    let grid = TimeGrid::new(steps)?;
    let drift = DriftSpec::zero(support.dimension());
    let xi = PathConfig::zero(grid, support.clone());
    let solver = ReplicaSolver::new(&drift, support, &xi)?;
    (0..samples)
        .into_par_iter()
        .map(|r| {
            let mut rng = derive_rng(seed, &[STREAM_REPLICA, r as u64]);
            let init = initial.sample_field(support, &mut rng);
            let out = solver.solve(&init, &mut rng)?;
            f(r, out.paths)
        })
        .collect()
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.replicas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicas.is_empty()
    }

    pub fn map_replicas<T>(&self, f: impl Fn(&Replica) -> T) -> Vec<T> {
        self.replicas.iter().map(f).collect()
    }

    /// Largest deviation, over replicas, sites and steps, between the
    /// realised increment minus drift and the stored Gaussian increment.
    /// Machine-precision small by construction.
    pub fn max_decomposition_residual(&self) -> Result<f64> {
        let wrap = match self.config.boundary {
            BoundaryMode::Periodic => WrapMode::Cube {
                n: self.config.n as i64,
            },
            _ => WrapMode::None,
        };
        let plan = DriftPlan::new(&self.drift, &self.support, &self.volume, wrap)?;
        let h = self.grid.h();
        let mut worst = 0.0f64;
        for rep in &self.replicas {
            for idx in 0..plan.len() {
                let row = &rep.paths.path_by_ordinal(plan.update_flat(idx)).values;
                for k in 0..self.grid.steps() {
                    let view = plan.view(&rep.paths, idx);
                    let b = self.drift.eval(&view, k);
                    let resid = (row[k + 1] - row[k] - b * h - rep.noise[idx][k]).abs();
                    worst = worst.max(resid);
                }
            }
        }
        Ok(worst)
    }
}

/// A mean together with its Monte Carlo standard error.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Estimate {
        let n = xs.len();
        if n == 0 {
            return Estimate {
                mean: f64::NAN,
                stderr: f64::NAN,
                n_samples: 0,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Estimate {
                mean,
                stderr: 0.0,
                n_samples: 1,
            };
        }
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        Estimate {
            mean,
            stderr: (var / n as f64).sqrt(),
            n_samples: n,
        }
    }

    /// Standardised deviation from a target; zero spread counts as an exact
    /// hit or an infinite miss.
    pub fn z_against(&self, target: f64) -> f64 {
        let d = self.mean - target;
        if self.stderr > 0.0 {
            d / self.stderr
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(d)
        }
    }

    pub fn within(&self, target: f64, n_sigma: f64) -> bool {
        self.z_against(target).abs() <= n_sigma
    }
}

/// Estimate of `mean(a) - mean(b)` from paired samples; the pairing keeps
/// shared randomness out of the standard error.
pub fn paired_difference(a: &[f64], b: &[f64]) -> Estimate {
    assert_eq!(a.len(), b.len(), "paired samples must align");
    let d: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
    Estimate::from_samples(&d)
}

/// Ratio of means with a linearised standard error (covariance included).
pub fn ratio_of_means(num: &[f64], den: &[f64]) -> Estimate {
    assert_eq!(num.len(), den.len(), "ratio samples must align");
    let n = num.len();
    let a = num.iter().sum::<f64>() / n as f64;
    let b = den.iter().sum::<f64>() / n as f64;
    let r = a / b;
    if n == 1 {
        return Estimate {
            mean: r,
            stderr: 0.0,
            n_samples: 1,
        };
    }
    let g: Vec<f64> = num
        .iter()
        .zip(den.iter())
        .map(|(x, y)| (x - r * y) / b)
        .collect();
    let var = g.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;
    Estimate {
        mean: r,
        stderr: (var / n as f64).sqrt(),
        n_samples: n,
    }
}

/// Weighted least-squares slope through `(x, estimate)` points, weights
/// `1/stderr^2`. Returns `(slope, slope_stderr)`.
pub fn weighted_slope(points: &[(f64, Estimate)]) -> (f64, f64) {
    assert!(points.len() >= 2, "slope needs at least two points");
    let floor = points
        .iter()
        .map(|(_, e)| e.stderr)
        .fold(0.0f64, f64::max)
        .powi(2)
        * 1e-12
        + 1e-300;
    let w: Vec<f64> = points
        .iter()
        .map(|(_, e)| 1.0 / (e.stderr * e.stderr).max(floor))
        .collect();
    let wsum: f64 = w.iter().sum();
    let xbar = points
        .iter()
        .zip(w.iter())
        .map(|((x, _), wi)| wi * x)
        .sum::<f64>()
        / wsum;
    let sxx: f64 = points
        .iter()
        .zip(w.iter())
        .map(|((x, _), wi)| wi * (x - xbar) * (x - xbar))
        .sum();
    let sxy: f64 = points
        .iter()
        .zip(w.iter())
        .map(|((x, e), wi)| wi * (x - xbar) * e.mean)
        .sum();
    (sxy / sxx, (1.0 / sxx).sqrt())
}

/// A bounded-support functional of a configuration, evaluated relative to a
/// centre site.
#[derive(Clone)]
pub struct LocalObservable {
    name: String,
    support: SiteBox,
    f: Arc<dyn Fn(&SiteView<'_>) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for LocalObservable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "LocalObservable({})", self.name)
    }
}

impl LocalObservable {
    pub fn new(
        name: impl Into<String>,
        support: SiteBox,
        f: Arc<dyn Fn(&SiteView<'_>) -> f64 + Send + Sync>,
    ) -> LocalObservable {
        LocalObservable {
            name: name.into(),
            support,
            f,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn support(&self) -> &SiteBox {
        &self.support
    }

    pub fn check_coverage(&self, config: &PathConfig, center: &SiteIndex) -> Result<()> {
        if !self.support.translated(center).subset_of(config.support()) {
            return Err(CoreError::SupportTooLarge(format!(
                "{} needs sites {:?} around {center}",
                self.name,
                self.support.sites()
            )));
        }
        Ok(())
    }

    /// Evaluates at a centre; call [`LocalObservable::check_coverage`]
    /// (or validate the geometry once) beforehand.
    pub fn eval_at(&self, config: &PathConfig, center: &SiteIndex) -> f64 {
        let view = SiteView::new(config, center);
        (self.f)(&view)
    }

    pub fn eval_origin(&self, config: &PathConfig) -> f64 {
        let origin = SiteIndex::origin(config.dimension());
        self.eval_at(config, &origin)
    }

    /// The centre coordinate at grid index `k`.
    pub fn coordinate(d: usize, k: usize) -> LocalObservable {
        let origin = SiteIndex::origin(d);
        let support = SiteBox::from_sites(vec![origin.clone()]).expect("origin box");
        LocalObservable::new(
            format!("x0[k={k}]"),
            support,
            Arc::new(move |v| v.value(&origin, k).expect("coverage checked")),
        )
    }

    /// `min(x_0(t_k), cap)`.
    pub fn coordinate_capped(d: usize, k: usize, cap: f64) -> LocalObservable {
        let origin = SiteIndex::origin(d);
        let support = SiteBox::from_sites(vec![origin.clone()]).expect("origin box");
        LocalObservable::new(
            format!("min(x0[k={k}],{cap})"),
            support,
            Arc::new(move |v| v.value(&origin, k).expect("coverage checked").min(cap)),
        )
    }

    /// `x_0(t_k)^2`.
    pub fn coordinate_squared(d: usize, k: usize) -> LocalObservable {
        let origin = SiteIndex::origin(d);
        let support = SiteBox::from_sites(vec![origin.clone()]).expect("origin box");
        LocalObservable::new(
            format!("x0[k={k}]^2"),
            support,
            Arc::new(move |v| {
                let x = v.value(&origin, k).expect("coverage checked");
                x * x
            }),
        )
    }

    /// Indicator of `x_0(t_k) > 0`.
    pub fn positive_indicator(d: usize, k: usize) -> LocalObservable {
        let origin = SiteIndex::origin(d);
        let support = SiteBox::from_sites(vec![origin.clone()]).expect("origin box");
        LocalObservable::new(
            format!("1{{x0[k={k}]>0}}"),
            support,
            Arc::new(move |v| {
                if v.value(&origin, k).expect("coverage checked") > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }),
        )
    }

    /// Product of two coordinates at grid index `k`.
    pub fn pair_product(a: SiteIndex, b: SiteIndex, k: usize) -> LocalObservable {
        let support = SiteBox::from_sites(vec![a.clone(), b.clone()]).expect("pair box");
        LocalObservable::new(
            format!("x[{a}]x[{b}][k={k}]"),
            support,
            Arc::new(move |v| {
                v.value(&a, k).expect("coverage checked") * v.value(&b, k).expect("coverage")
            }),
        )
    }
}

/// Lays `3^d` independent replicas side by side: the centre block is
/// replica `r` on `{-n..n-1}^d`, each neighbouring block (offsets in sorted
/// order) holds a distinct partner replica drawn from `rng`, translated by
/// `2 n` times the block offset. The result lives on `{-3n..3n-1}^d`.
pub fn periodized_neighborhood(
    e: &Ensemble,
    r: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PathConfig> {
    let d = e.config.d;
    let n = e.config.n as i64;
    let blocks = SiteBox::ball(d, 1)?;
    let needed = blocks.len();
    if e.replicas.len() < needed {
        return Err(CoreError::InsufficientReplicas {
            needed,
            available: e.replicas.len(),
        });
    }
    if r >= e.replicas.len() {
        return Err(CoreError::InvalidParameter(format!(
            "replica index {r} out of range"
        )));
    }
    let mut partners: Vec<usize> = Vec::with_capacity(needed - 1);
    while partners.len() < needed - 1 {
        let c = rng.gen_range(0..e.replicas.len());
        if c != r && !partners.contains(&c) {
            partners.push(c);
        }
    }
    let origin = SiteIndex::origin(d);
    let mut sites = Vec::with_capacity(needed * e.volume.len());
    let mut paths = Vec::with_capacity(needed * e.volume.len());
    let mut cursor = 0;
    for offset in blocks.sites() {
        let rep_idx = if *offset == origin {
            r
        } else {
            let p = partners[cursor];
            cursor += 1;
            p
        };
        let shift = SiteIndex::new(offset.0.iter().map(|c| 2 * n * c).collect());
        let rep = &e.replicas[rep_idx];
        for site in e.volume.sites() {
            sites.push(site.plus(&shift));
            paths.push(rep.paths.path(site)?.clone());
        }
    }
    // sites were pushed block-by-block; align paths with the sorted order
    let mut order: Vec<usize> = (0..sites.len()).collect();
    order.sort_by(|&i, &j| sites[i].cmp(&sites[j]));
    let sorted_sites: Vec<SiteIndex> = order.iter().map(|&i| sites[i].clone()).collect();
    let sorted_paths: Vec<Path> = order.iter().map(|&i| paths[i].clone()).collect();
    PathConfig::new(e.grid, SiteBox::from_sites(sorted_sites)?, sorted_paths)
}

/// Volume-averaged expectation of a local observable under the periodized,
/// shift-averaged law: every replica is tiled once, the observable is read
/// at every centre in the volume, and replicas are the independent unit for
/// the standard error.
pub fn shift_average(g: &LocalObservable, e: &Ensemble) -> Result<Estimate> {
    let big = SiteBox::cube(e.config.d, 3 * e.config.n)?;
    for center in e.volume.sites() {
        if !g.support().translated(center).subset_of(&big) {
            return Err(CoreError::SupportTooLarge(format!(
                "{} does not fit one periodization layer at centre {center}",
                g.name()
            )));
        }
    }
    let values: Result<Vec<f64>> = (0..e.replicas.len())
        .into_par_iter()
        .map(|r| {
            let mut rng = derive_rng(e.config.seed, &[STREAM_TILING, r as u64]);
            let tiled = periodized_neighborhood(e, r, &mut rng)?;
            let mut acc = 0.0;
            for center in e.volume.sites() {
                acc += g.eval_at(&tiled, center);
            }
            Ok(acc / e.volume.len() as f64)
        })
        .collect();
    Ok(Estimate::from_samples(&values?))
}

/// Manifest written beside exported replica files.
#[derive(Clone, Debug, Serialize)]
pub struct EnsembleManifest {
    pub config_hash: String,
    pub seed: u64,
    pub config: SimConfig,
    pub drift: String,
    pub initial: String,
    pub weight_norm: String,
    pub parameter_hash: String,
    pub files: Vec<String>,
}

/// Content hash in the blob style: `sha256("params {len}\0{payload}")`.
pub fn parameter_hash(payload: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("params {}\0", payload.len()).as_bytes());
    hasher.update(payload.as_bytes());
    let mut out = String::with_capacity(64);
    for b in hasher.finalize() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Writes one CSV per replica plus `manifest.json` into `dir`.
pub fn export_ensemble(
    e: &Ensemble,
    dir: &FsPath,
    config_hash: &str,
) -> Result<EnsembleManifest> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(e.replicas.len());
    for (r, rep) in e.replicas.iter().enumerate() {
        let name = format!("replica_{r:05}.csv");
        let file = fs::File::create(dir.join(&name))?;
        let mut w = BufWriter::new(file);
        rep.paths.write_csv(&mut w)?;
        w.flush()?;
        files.push(name);
    }
    let payload = format!(
        "{}|{}|{}|{}",
        serde_json::to_string(&e.config).map_err(|err| CoreError::Parse(err.to_string()))?,
        e.drift.name(),
        e.initial.name(),
        crate::lattice::WEIGHT_NORM,
    );
    let manifest = EnsembleManifest {
        config_hash: config_hash.to_string(),
        seed: e.config.seed,
        config: e.config.clone(),
        drift: e.drift.name().to_string(),
        initial: e.initial.name(),
        weight_norm: crate::lattice::WEIGHT_NORM.to_string(),
        parameter_hash: parameter_hash(&payload),
        files,
    };
    let file = fs::File::create(dir.join("manifest.json"))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &manifest)
        .map_err(|err| CoreError::Parse(err.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::InteractionRange;

    fn quick_cfg(n: usize, steps: usize, replicas: usize, seed: u64) -> SimConfig {
        SimConfig {
            d: 1,
            n,
            steps,
            replicas,
            seed,
            boundary: BoundaryMode::Zero,
        }
    }

    #[test]
    fn brownian_terminal_variance_is_one() {
        let cfg = quick_cfg(1, 16, 4000, 5);
        let drift = DriftSpec::zero(1);
        let initial = InitialLaw::Dirac { value: 0.0 };
        let xs = sample_volume_map(&cfg, &drift, &initial, |_, rep| {
            rep.paths.value(&SiteIndex::d1(0), 16)
        })
        .unwrap();
        let sq = Estimate::from_samples(&xs.iter().map(|x| x * x).collect::<Vec<_>>());
        assert!(
            sq.within(1.0, 3.0),
            "terminal second moment {} +- {}",
            sq.mean,
            sq.stderr
        );
    }

    #[test]
    fn replicas_are_reproducible_and_pool_independent() {
        let cfg = quick_cfg(2, 20, 8, 99);
        let range = InteractionRange::ball(1, 1).unwrap();
        let drift = DriftSpec::barycentre_delay_const(range, 0.25, 1.0, -1.0).unwrap();
        let initial = InitialLaw::GaussianProduct {
            mean: 0.0,
            variance: 1.0,
        };
        let a = sample_volume(&cfg, &drift, &initial).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let b = pool.install(|| sample_volume(&cfg, &drift, &initial)).unwrap();
        for (x, y) in a.replicas.iter().zip(b.replicas.iter()) {
            assert_eq!(x.paths, y.paths);
            assert_eq!(x.noise, y.noise);
        }
    }

    #[test]
    fn decomposition_is_exact_to_machine_precision() {
        let cfg = SimConfig {
            d: 1,
            n: 2,
            steps: 25,
            replicas: 10,
            seed: 3,
            boundary: BoundaryMode::Frozen {
                field: BoundaryField::ScaledBrownian { scale: 2.0 },
            },
        };
        let range = InteractionRange::ball(1, 1).unwrap();
        let drift = DriftSpec::barycentre_delay_const(range, 0.2, 0.8, -0.4).unwrap();
        let initial = InitialLaw::GaussianProduct {
            mean: 0.5,
            variance: 2.0,
        };
        let e = sample_volume(&cfg, &drift, &initial).unwrap();
        let resid = e.max_decomposition_residual().unwrap();
        assert!(resid < 1e-12, "residual {resid}");
    }

    #[test]
    fn frozen_boundary_paths_are_kept_verbatim() {
        let cfg = SimConfig {
            boundary: BoundaryMode::Frozen {
                field: BoundaryField::Constant { value: 7.5 },
            },
            ..quick_cfg(1, 10, 3, 8)
        };
        let range = InteractionRange::ball(1, 1).unwrap();
        let drift = DriftSpec::barycentre_delay_const(range, 0.3, 1.0, -1.0).unwrap();
        let initial = InitialLaw::Dirac { value: 0.0 };
        let e = sample_volume(&cfg, &drift, &initial).unwrap();
        // ring sites of {-1,0} under a radius-1 range: -2 and 1
        for site in [SiteIndex::d1(-2), SiteIndex::d1(1)] {
            for k in 0..=10 {
                assert_eq!(e.replicas[0].paths.value(&site, k).unwrap(), 7.5);
            }
        }
        assert_eq!(e.replicas[0].paths.value(&SiteIndex::d1(0), 0).unwrap(), 0.0);
    }

    #[test]
    fn missing_environment_is_reported() {
        let grid = TimeGrid::new(4).unwrap();
        let volume = SiteBox::cube(1, 1).unwrap();
        let xi = PathConfig::zero(grid, volume.clone());
        let range = InteractionRange::ball(1, 1).unwrap();
        let drift = DriftSpec::barycentre_delay_const(range, 0.25, 1.0, -1.0).unwrap();
        let mut rng = derive_rng(1, &[0]);
        let err = solve_finite_volume(&drift, &volume, &xi, &mut rng).unwrap_err();
        assert!(matches!(err, CoreError::MissingSite { .. }), "{err}");
    }

    #[test]
    fn periodized_blocks_tile_distinct_replicas() {
        let cfg = quick_cfg(1, 6, 12, 21);
        let drift = DriftSpec::zero(1);
        let initial = InitialLaw::GaussianProduct {
            mean: 0.0,
            variance: 1.0,
        };
        let e = sample_volume(&cfg, &drift, &initial).unwrap();
        let mut rng = derive_rng(e.config.seed, &[STREAM_TILING, 0]);
        let tiled = periodized_neighborhood(&e, 0, &mut rng).unwrap();
        assert_eq!(tiled.support(), &SiteBox::cube(1, 3).unwrap());
        // centre block is replica 0 verbatim
        for site in e.volume.sites() {
            assert_eq!(
                tiled.path(site).unwrap(),
                e.replicas[0].paths.path(site).unwrap()
            );
        }
        // the right-hand block is some other replica translated by 2n
        let right = tiled.path(&SiteIndex::d1(2)).unwrap();
        let found = e
            .replicas
            .iter()
            .skip(1)
            .any(|rep| rep.paths.path(&SiteIndex::d1(0)).unwrap() == right);
        assert!(found, "right block must come from a partner replica");
        assert_ne!(right, e.replicas[0].paths.path(&SiteIndex::d1(0)).unwrap());
    }

    #[test]
    fn shift_average_recovers_initial_mean() {
        let cfg = quick_cfg(2, 6, 400, 13);
        let drift = DriftSpec::zero(1);
        let initial = InitialLaw::GaussianProduct {
            mean: 2.0,
            variance: 0.25,
        };
        let e = sample_volume(&cfg, &drift, &initial).unwrap();
        let g = LocalObservable::coordinate(1, 0);
        let est = shift_average(&g, &e).unwrap();
        assert!(est.within(2.0, 3.0), "{} +- {}", est.mean, est.stderr);
    }

    #[test]
    fn shift_average_rejects_wide_observables() {
        let cfg = quick_cfg(1, 4, 40, 1);
        let drift = DriftSpec::zero(1);
        let initial = InitialLaw::Dirac { value: 0.0 };
        let e = sample_volume(&cfg, &drift, &initial).unwrap();
        let wide = LocalObservable::pair_product(SiteIndex::d1(-3), SiteIndex::d1(3), 0);
        assert!(matches!(
            shift_average(&wide, &e),
            Err(CoreError::SupportTooLarge(_))
        ));
    }

    #[test]
    fn estimate_basics() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert_eq!(e.n_samples, 4);
        assert!((e.stderr - (5.0f64 / 12.0).sqrt()).abs() < 1e-12);
        assert!(e.within(2.5, 3.0));
        let exact = Estimate::from_samples(&[2.0, 2.0]);
        assert_eq!(exact.stderr, 0.0);
        assert_eq!(exact.z_against(2.0), 0.0);
        assert!(exact.z_against(1.0).is_infinite());
    }

    #[test]
    fn slope_of_an_exact_line() {
        let pts: Vec<(f64, Estimate)> = (1..=4)
            .map(|n| {
                (
                    n as f64,
                    Estimate {
                        mean: 2.0 + 0.5 * n as f64,
                        stderr: 0.1,
                        n_samples: 100,
                    },
                )
            })
            .collect();
        let (slope, se) = weighted_slope(&pts);
        assert!((slope - 0.5).abs() < 1e-12);
        assert!(se > 0.0);
    }

    #[test]
    fn export_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick_cfg(1, 5, 3, 77);
        let drift = DriftSpec::constant(1, 0.5);
        let initial = InitialLaw::Dirac { value: 1.0 };
        let e = sample_volume(&cfg, &drift, &initial).unwrap();
        let manifest = export_ensemble(&e, dir.path(), "deadbeef").unwrap();
        assert_eq!(manifest.files.len(), 3);
        let raw = fs::read(dir.path().join(&manifest.files[0])).unwrap();
        let back = PathConfig::read_csv(&raw[..]).unwrap();
        assert_eq!(&back, &e.replicas[0].paths);
        let manifest_text = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        assert!(manifest_text.contains("\"config_hash\": \"deadbeef\""));
        assert!(manifest_text.contains("\"weight_norm\": \"sup\""));
    }
}

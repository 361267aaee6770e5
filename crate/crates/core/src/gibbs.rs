//! Likelihood ratios, conditional resampling kernels, entropy and free
//! energy functionals, and growth diagnostics for finite-volume ensembles.
//!
//! Everything here rests on one discrete identity: under the left-point
//! scheme the density of a driven volume with respect to the driftless one
//! is exactly `exp(sum_i sum_k (b_ik dx_ik - b_ik^2 h / 2))`, with no
//! discretisation bias. The action functional below is the negative of
//! that exponent, so `E[exp(-action)] = 1` holds at every step count, the
//! conditional-kernel identity is exact for volumes that fit, and the two
//! entropy and free-energy routes agree up to Monte Carlo noise alone.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::drift::{DriftPlan, DriftSpec, WrapMode};
use crate::error::{CoreError, Result};
use crate::lattice::{SiteBox, SiteIndex};
use crate::paths::PathConfig;
use crate::rng::{derive_rng, STREAM_KERNEL, STREAM_REPLICA};
use crate::sim::{
    paired_difference, ratio_of_means, sample_free_field_map, sample_volume_map,
    weighted_slope, BoundaryField, BoundaryMode, Ensemble, Estimate, InitialLaw,
    LocalObservable, ReplicaSolver, SimConfig,
};

/// Smallest acceptable effective sample size, as a fraction of the number
/// of kernel proposals.
pub const DEFAULT_ESS_FRACTION: f64 = 0.1;

fn ensemble_wrap(e: &Ensemble) -> WrapMode {
    match e.config.boundary {
        BoundaryMode::Periodic => WrapMode::Cube {
            n: e.config.n as i64,
        },
        _ => WrapMode::None,
    }
}

/// Increment sum and quadratic sum of one site's drift along a
/// configuration: `(sum_k b_k dx_k, h sum_k b_k^2)`.
fn site_terms(drift: &DriftSpec, plan: &DriftPlan, omega: &PathConfig, idx: usize) -> (f64, f64) {
    let grid = omega.grid();
    let m = grid.steps();
    let h = grid.h();
    let view = plan.view(omega, idx);
    let row = &omega.path_by_ordinal(plan.update_flat(idx)).values;
    let mut ito = 0.0;
    let mut quad = 0.0;
    for k in 0..m {
        let b = drift.eval(&view, k);
        ito += b * (row[k + 1] - row[k]);
        quad += b * b;
    }
    (ito, h * quad)
}

fn terms_with_plan(drift: &DriftSpec, plan: &DriftPlan, omega: &PathConfig) -> (f64, f64) {
    let mut ito = 0.0;
    let mut quad = 0.0;
    for idx in 0..plan.len() {
        let (i, q) = site_terms(drift, plan, omega, idx);
        ito += i;
        quad += q;
    }
    (ito, quad)
}

/// `(sum_i sum_k b dx, sum_i h sum_k b^2)` over the given update sites.
pub fn girsanov_terms(
    drift: &DriftSpec,
    update: &SiteBox,
    omega: &PathConfig,
) -> Result<(f64, f64)> {
    let plan = DriftPlan::new(drift, omega.support(), update, WrapMode::None)?;
    Ok(terms_with_plan(drift, &plan, omega))
}

/// The action of a configuration over a set of sites: minus the exact
/// log-likelihood ratio of the driven update against the driftless one.
pub fn hamiltonian(drift: &DriftSpec, sites: &SiteBox, omega: &PathConfig) -> Result<f64> {
    let (ito, quad) = girsanov_terms(drift, sites, omega)?;
    Ok(-(ito - 0.5 * quad))
}

/// Exact log density of a finite-volume configuration against the
/// driftless field started from the one-site reference law: initial terms
/// plus the negative action over the volume.
pub fn girsanov_log_density(
    drift: &DriftSpec,
    volume: &SiteBox,
    omega: &PathConfig,
    initial: &InitialLaw,
) -> Result<f64> {
    let mut log_init = 0.0;
    for site in volume.sites() {
        log_init += initial.log_density(omega.value(site, 0)?)?;
    }
    Ok(log_init - hamiltonian(drift, volume, omega)?)
}

/// Outcome of the unit-mean check for `exp(-action)` under the driftless
/// reference field.
#[derive(Clone, Debug, Serialize)]
pub struct NormalizationCheck {
    pub drift: String,
    pub volume_sites: usize,
    pub samples: usize,
    pub estimate: Estimate,
    pub z: f64,
    pub pass: bool,
}

/// Samples the driftless field on the volume's read support (standard
/// Gaussian starts) and tests `E[exp(-action)] = 1`.
pub fn girsanov_normalization(
    drift: &DriftSpec,
    volume: &SiteBox,
    steps: usize,
    samples: usize,
    seed: u64,
    z_threshold: f64,
) -> Result<NormalizationCheck> {
    let support = volume.read_support(drift.range());
    let initial = InitialLaw::GaussianProduct {
        mean: 0.0,
        variance: 1.0,
    };
    let plan_support = support.clone();
    let plan = DriftPlan::new(drift, &plan_support, volume, WrapMode::None)?;
    let weights = sample_free_field_map(&support, steps, &initial, seed, samples, |_, paths| {
        let (ito, quad) = terms_with_plan(drift, &plan, &paths);
        let w = (ito - 0.5 * quad).exp();
        if !w.is_finite() {
            return Err(CoreError::NonFinite {
                site: "(volume)".into(),
                step: 0,
                what: "likelihood ratio".into(),
            });
        }
        Ok(w)
    })?;
    let estimate = Estimate::from_samples(&weights);
    let z = estimate.z_against(1.0);
    Ok(NormalizationCheck {
        drift: drift.name().to_string(),
        volume_sites: volume.len(),
        samples,
        estimate,
        z,
        pass: z.abs() <= z_threshold,
    })
}

/// Importance-weighted draw from the one-volume conditional kernel: the
/// proposals follow the volume dynamics with the environment frozen, and
/// the weights tilt them by the action collected at the overlap sites just
/// outside the volume, which is exactly the correction the enlarged-volume
/// kernel requires.
#[derive(Debug)]
pub struct WeightedKernelSample {
    pub proposals: Vec<PathConfig>,
    pub log_weights: Vec<f64>,
    pub weights: Vec<f64>,
    pub ess: f64,
    pub reliable: bool,
    /// Unnormalised mean weight, an unbiased partition-ratio estimate
    /// (equal to one when the overlap is empty).
    pub partition: Estimate,
}

impl WeightedKernelSample {
    pub fn expectation(&self, f: impl Fn(&PathConfig) -> f64) -> f64 {
        self.proposals
            .iter()
            .zip(self.weights.iter())
            .map(|(p, w)| w * f(p))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }
}

/// Draws `proposals` weighted kernel samples for the volume inside the
/// frozen environment `xi`, resampling the volume's initial values from
/// `initial`.
pub fn kernel_hplus(
    drift: &DriftSpec,
    volume: &SiteBox,
    xi: &PathConfig,
    initial: &InitialLaw,
    proposals: usize,
    rng: &mut ChaCha8Rng,
) -> Result<WeightedKernelSample> {
    if proposals == 0 {
        return Err(CoreError::InvalidParameter(
            "kernel needs at least one proposal".into(),
        ));
    }
    let overlap = volume.enlarged(drift.range()).difference(volume);
    let boundary_plan = if overlap.is_empty() {
        None
    } else {
        let boundary = SiteBox::from_sites(overlap)?;
        Some(DriftPlan::new(drift, xi.support(), &boundary, WrapMode::None)?)
    };
    let solver = ReplicaSolver::new(drift, volume, xi)?;
    let mut configs = Vec::with_capacity(proposals);
    let mut log_weights = Vec::with_capacity(proposals);
    for p in 0..proposals {
        let init = initial.sample_field(volume, rng);
        let out = solver.solve(&init, rng)?;
        let logw = match &boundary_plan {
            None => 0.0,
            Some(plan) => {
                let (ito, quad) = terms_with_plan(drift, plan, &out.paths);
                ito - 0.5 * quad
            }
        };
        if !logw.is_finite() {
            return Err(CoreError::NonFinite {
                site: "(overlap)".into(),
                step: p,
                what: "kernel log-weight".into(),
            });
        }
        configs.push(out.paths);
        log_weights.push(logw);
    }
    let raw: Vec<f64> = log_weights.iter().map(|lw| lw.exp()).collect();
    let partition = Estimate::from_samples(&raw);
    let peak = log_weights.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let stabilized: Vec<f64> = log_weights.iter().map(|lw| (lw - peak).exp()).collect();
    let total: f64 = stabilized.iter().sum();
    let weights: Vec<f64> = stabilized.iter().map(|u| u / total).collect();
    let ess = total * total / stabilized.iter().map(|u| u * u).sum::<f64>();
    Ok(WeightedKernelSample {
        reliable: ess >= DEFAULT_ESS_FRACTION * proposals as f64,
        proposals: configs,
        log_weights,
        weights,
        ess,
        partition,
    })
}

/// Sampling effort for the conditional-consistency check.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DlrBudget {
    /// Full-volume replicas (outer Monte Carlo).
    pub outer: usize,
    /// Kernel proposals per replica (inner Monte Carlo).
    pub inner: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct DlrFunctionResult {
    pub name: String,
    pub left: Estimate,
    pub right: Estimate,
    pub difference: Estimate,
    pub z: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DlrReport {
    pub drift: String,
    pub n: usize,
    pub volume: Vec<String>,
    pub outer: usize,
    pub inner: usize,
    pub z_threshold: f64,
    pub functions: Vec<DlrFunctionResult>,
    pub ess_failures: usize,
    pub ess_failure_rate: f64,
    pub all_pass: bool,
}

/// Conditional-consistency check: for each test function `g`, compares the
/// plain full-volume average of `g` with the average of the weighted
/// kernel reconstruction of `g` from the same replica's environment. The
/// pairing cancels the shared outer randomness; with the inner volume two
/// enlargements inside the full one the identity is exact, so any drift
/// beyond Monte Carlo noise is a defect.
#[allow(clippy::too_many_arguments)]
pub fn dlr_check(
    drift: &DriftSpec,
    n: usize,
    volume: &SiteBox,
    initial: &InitialLaw,
    tests: &[LocalObservable],
    budget: DlrBudget,
    steps: usize,
    seed: u64,
    z_threshold: f64,
) -> Result<DlrReport> {
    if tests.is_empty() || budget.outer < 2 || budget.inner == 0 {
        return Err(CoreError::InvalidParameter(
            "conditional check needs test functions, outer >= 2 and inner >= 1".into(),
        ));
    }
    let d = drift.dimension();
    let big = SiteBox::cube(d, n)?;
    let twice = volume.enlarged(drift.range()).enlarged(drift.range());
    if !twice.subset_of(&big) {
        return Err(CoreError::SupportTooLarge(format!(
            "the inner volume enlarged twice must fit in the full volume \
             (needs {} sites, cube has {})",
            twice.len(),
            big.len()
        )));
    }
    for g in tests {
        if !g.support().subset_of(volume) {
            return Err(CoreError::SupportTooLarge(format!(
                "test function {} is not measurable inside the inner volume",
                g.name()
            )));
        }
    }
    let grid_steps = steps;
    let support = big.read_support(drift.range());
    let xi0 = PathConfig::zero(crate::paths::TimeGrid::new(grid_steps)?, support);
    let solver = ReplicaSolver::new(drift, &big, &xi0)?;
    let per_replica = (0..budget.outer)
        .into_par_iter()
        .map(|r| {
            let mut rng_p = derive_rng(seed, &[STREAM_REPLICA, r as u64]);
            let init = initial.sample_field(&big, &mut rng_p);
            let out = solver.solve(&init, &mut rng_p)?;
            let lefts: Vec<f64> = tests.iter().map(|g| g.eval_origin(&out.paths)).collect();
            let mut rng_k = derive_rng(seed, &[STREAM_KERNEL, r as u64]);
            let kern = kernel_hplus(drift, volume, &out.paths, initial, budget.inner, &mut rng_k)?;
            let rights: Vec<f64> = tests
                .iter()
                .map(|g| kern.expectation(|p| g.eval_origin(p)))
                .collect();
            Ok((lefts, rights, kern.reliable))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut functions = Vec::with_capacity(tests.len());
    for (t, g) in tests.iter().enumerate() {
        let left: Vec<f64> = per_replica.iter().map(|row| row.0[t]).collect();
        let right: Vec<f64> = per_replica.iter().map(|row| row.1[t]).collect();
        let difference = paired_difference(&left, &right);
        let z = difference.z_against(0.0);
        functions.push(DlrFunctionResult {
            name: g.name().to_string(),
            left: Estimate::from_samples(&left),
            right: Estimate::from_samples(&right),
            difference,
            z,
            pass: z.abs() <= z_threshold,
        });
    }
    let ess_failures = per_replica.iter().filter(|row| !row.2).count();
    let all_pass = functions.iter().all(|f| f.pass);
    Ok(DlrReport {
        drift: drift.name().to_string(),
        n,
        volume: volume.sites().iter().map(|s| s.to_string()).collect(),
        outer: budget.outer,
        inner: budget.inner,
        z_threshold,
        functions,
        ess_failures,
        ess_failure_rate: ess_failures as f64 / budget.outer as f64,
        all_pass,
    })
}

fn entropy_samples(e: &Ensemble) -> Result<(Vec<f64>, Vec<f64>)> {
    let plan = DriftPlan::new(&e.drift, &e.support, &e.volume, ensemble_wrap(e))?;
    let sites = e.volume.len() as f64;
    let closed = e.initial.relative_entropy_closed_form();
    let rows: Result<Vec<(f64, f64)>> = e
        .replicas
        .par_iter()
        .map(|rep| {
            let (ito, quad) = terms_with_plan(&e.drift, &plan, &rep.paths);
            let mut log_init = 0.0;
            for site in e.volume.sites() {
                log_init += e.initial.log_density(rep.paths.value(site, 0)?)?;
            }
            let direct = (log_init + ito - 0.5 * quad) / sites;
            let init_term = match closed {
                Some(i) => i,
                None => log_init / sites,
            };
            let formula = init_term + 0.5 * quad / sites;
            Ok((direct, formula))
        })
        .collect();
    let rows = rows?;
    Ok((
        rows.iter().map(|r| r.0).collect(),
        rows.iter().map(|r| r.1).collect(),
    ))
}

/// Per-site relative entropy of the ensemble law against the driftless
/// reference, straight from the log density along each replica.
pub fn entropy_per_site_direct(e: &Ensemble) -> Result<Estimate> {
    let (direct, _) = entropy_samples(e)?;
    Ok(Estimate::from_samples(&direct))
}

/// The same quantity through its decomposition: initial-law term plus half
/// the expected quadratic drift sum per site.
pub fn entropy_per_site_formula(e: &Ensemble) -> Result<Estimate> {
    let (_, formula) = entropy_samples(e)?;
    Ok(Estimate::from_samples(&formula))
}

#[derive(Clone, Debug, Serialize)]
pub struct EntropyReport {
    pub drift: String,
    pub initial: String,
    pub volume_sites: usize,
    pub replicas: usize,
    pub direct: Estimate,
    pub formula: Estimate,
    pub difference: Estimate,
    pub z: f64,
    pub pass: bool,
}

/// Runs both entropy routes on the same replicas and tests their paired
/// difference against zero.
pub fn entropy_comparison(e: &Ensemble, z_threshold: f64) -> Result<EntropyReport> {
    let (direct, formula) = entropy_samples(e)?;
    let difference = paired_difference(&direct, &formula);
    let z = difference.z_against(0.0);
    Ok(EntropyReport {
        drift: e.drift.name().to_string(),
        initial: e.initial.name(),
        volume_sites: e.volume.len(),
        replicas: e.replicas.len(),
        direct: Estimate::from_samples(&direct),
        formula: Estimate::from_samples(&formula),
        difference,
        z,
        pass: z.abs() <= z_threshold,
    })
}

fn interior_box(volume: &SiteBox, margin: i64) -> Result<SiteBox> {
    if margin <= 0 {
        return Ok(volume.clone());
    }
    let shell = SiteBox::ball(volume.dimension(), margin as usize)?;
    let inner: Vec<SiteIndex> = volume
        .sites()
        .iter()
        .filter(|site| shell.sites().iter().all(|d| volume.contains(&site.plus(d))))
        .cloned()
        .collect();
    if inner.is_empty() {
        return Err(CoreError::InvalidParameter(format!(
            "no interior sites left at margin {margin}; enlarge the volume"
        )));
    }
    SiteBox::from_sites(inner)
}

fn fe_samples(beta: &DriftSpec, e: &Ensemble) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    if beta.dimension() != e.config.d {
        return Err(CoreError::DimensionMismatch {
            expected: e.config.d,
            got: beta.dimension(),
        });
    }
    let wrap = ensemble_wrap(e);
    let margin = match wrap {
        WrapMode::Cube { .. } => 0,
        WrapMode::None => e.drift.range().radius().max(beta.range().radius()),
    };
    let interior = interior_box(&e.volume, margin)?;
    let plan_b = DriftPlan::new(&e.drift, &e.support, &interior, wrap)?;
    let plan_beta = DriftPlan::new(beta, &e.support, &interior, wrap)?;
    let h = e.grid.h();
    let m = e.grid.steps();
    let sites = interior.len() as f64;
    let rows: Vec<(f64, f64)> = e
        .replicas
        .par_iter()
        .map(|rep| {
            let mut mismatch = 0.0;
            let mut definition = 0.0;
            for idx in 0..plan_b.len() {
                let view_b = plan_b.view(&rep.paths, idx);
                let view_beta = plan_beta.view(&rep.paths, idx);
                let row = &rep.paths.path_by_ordinal(plan_b.update_flat(idx)).values;
                for k in 0..m {
                    let b = e.drift.eval(&view_b, k);
                    let bt = beta.eval(&view_beta, k);
                    let dx = row[k + 1] - row[k];
                    mismatch += 0.5 * h * (bt - b) * (bt - b);
                    definition += (b - bt) * dx - 0.5 * h * (b * b - bt * bt);
                }
            }
            (mismatch / sites, definition / sites)
        })
        .collect();
    Ok((
        rows.iter().map(|r| r.0).collect(),
        rows.iter().map(|r| r.1).collect(),
        interior.len(),
    ))
}

/// Per-site free energy of the model drift `beta` along the ensemble:
/// half the time-integrated squared drift mismatch, averaged over interior
/// sites.
pub fn free_energy_mismatch(beta: &DriftSpec, e: &Ensemble) -> Result<Estimate> {
    let (mismatch, _, _) = fe_samples(beta, e)?;
    Ok(Estimate::from_samples(&mismatch))
}

/// The same quantity from the definition: the log-likelihood ratio of the
/// sampling drift against the model drift along each replica (the
/// initial-law terms of the two densities cancel exactly).
pub fn free_energy_definition(beta: &DriftSpec, e: &Ensemble) -> Result<Estimate> {
    let (_, definition, _) = fe_samples(beta, e)?;
    Ok(Estimate::from_samples(&definition))
}

#[derive(Clone, Debug, Serialize)]
pub struct FreeEnergyReport {
    pub sampling_drift: String,
    pub model_drift: String,
    pub interior_sites: usize,
    pub replicas: usize,
    pub mismatch: Estimate,
    pub definition: Estimate,
    pub difference: Estimate,
    pub z: f64,
    pub pass: bool,
}

/// Compares the two free-energy routes on the same replicas.
pub fn free_energy_report(beta: &DriftSpec, e: &Ensemble, z_threshold: f64) -> Result<FreeEnergyReport> {
    let (mismatch, definition, interior_sites) = fe_samples(beta, e)?;
    let difference = paired_difference(&definition, &mismatch);
    let z = difference.z_against(0.0);
    Ok(FreeEnergyReport {
        sampling_drift: e.drift.name().to_string(),
        model_drift: beta.name().to_string(),
        interior_sites,
        replicas: e.replicas.len(),
        mismatch: Estimate::from_samples(&mismatch),
        definition: Estimate::from_samples(&definition),
        difference,
        z,
        pass: z.abs() <= z_threshold,
    })
}

/// Volume sweep parameters for the growth diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct MomentSweep {
    pub sizes: Vec<usize>,
    pub replicas: usize,
    pub steps: usize,
    pub seed: u64,
    pub boundary: BoundaryField,
    /// Largest tolerated relative spread of the ratio across sizes.
    pub spread_tolerance: f64,
    pub z_threshold: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentRow {
    pub n: usize,
    pub volume_sites: usize,
    /// Weighted squared running-maximum norm at the terminal time.
    pub moment: Estimate,
    /// `1 + |initial|^2 + |environment running max|^2` in the same norm.
    pub bracket: Estimate,
    pub ratio: Estimate,
    pub entropy_per_site: Estimate,
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentReport {
    pub drift: String,
    pub initial: String,
    pub sweep: MomentSweep,
    pub rows: Vec<MomentRow>,
    pub ratio_slope: f64,
    pub ratio_slope_se: f64,
    pub ratio_slope_z: f64,
    pub ratio_spread: f64,
    pub ratios_bounded: bool,
    pub entropy_slope: f64,
    pub entropy_slope_se: f64,
    pub entropy_slope_z: f64,
    /// Uniform per-site entropy bound when the drift is bounded and the
    /// initial law has a closed-form entropy.
    pub entropy_bound: Option<f64>,
    pub entropies_bounded: bool,
    pub pass: bool,
}

/// Sweeps the volume size and watches two stability diagnostics: the ratio
/// of the terminal weighted second moment to its initial-plus-environment
/// bracket, and the per-site entropy. Both must stay bounded as the volume
/// grows.
pub fn moment_bound_report(
    drift: &DriftSpec,
    initial: &InitialLaw,
    sweep: &MomentSweep,
) -> Result<MomentReport> {
    if sweep.sizes.len() < 2 {
        return Err(CoreError::InvalidParameter(
            "the sweep needs at least two volume sizes".into(),
        ));
    }
    if !initial.has_density() {
        return Err(CoreError::NoDensity(
            "the entropy diagnostic needs an initial law with a density".into(),
        ));
    }
    let d = drift.dimension();
    let mut rows = Vec::with_capacity(sweep.sizes.len());
    for &n in &sweep.sizes {
        let cfg = SimConfig {
            d,
            n,
            steps: sweep.steps,
            replicas: sweep.replicas,
            seed: sweep.seed,
            boundary: BoundaryMode::Frozen {
                field: sweep.boundary.clone(),
            },
        };
        let volume = cfg.volume()?;
        let support = volume.read_support(drift.range());
        let ring = support.difference(&volume);
        let ring_box = if ring.is_empty() {
            None
        } else {
            Some(SiteBox::from_sites(ring)?)
        };
        let plan = DriftPlan::new(drift, &support, &volume, WrapMode::None)?;
        let m = cfg.steps;
        let sites = volume.len() as f64;
        let samples = sample_volume_map(&cfg, drift, initial, |_, rep| {
            let runmax = rep.paths.running_max_field(m)?;
            let moment = runmax.weighted_sq_norm();
            let mut bracket = 1.0 + rep.paths.initial_field().restricted(&volume)?.weighted_sq_norm();
            if let Some(ring_box) = &ring_box {
                bracket += runmax.restricted(ring_box)?.weighted_sq_norm();
            }
            let (ito, quad) = terms_with_plan(drift, &plan, &rep.paths);
            let mut log_init = 0.0;
            for site in volume.sites() {
                log_init += initial.log_density(rep.paths.value(site, 0)?)?;
            }
            let entropy = (log_init + ito - 0.5 * quad) / sites;
            Ok((moment, bracket, entropy))
        })?;
        let moments: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let brackets: Vec<f64> = samples.iter().map(|s| s.1).collect();
        let entropies: Vec<f64> = samples.iter().map(|s| s.2).collect();
        rows.push(MomentRow {
            n,
            volume_sites: volume.len(),
            moment: Estimate::from_samples(&moments),
            bracket: Estimate::from_samples(&brackets),
            ratio: ratio_of_means(&moments, &brackets),
            entropy_per_site: Estimate::from_samples(&entropies),
        });
    }
    let ratio_points: Vec<(f64, Estimate)> =
        rows.iter().map(|r| (r.n as f64, r.ratio)).collect();
    let (ratio_slope, ratio_slope_se) = weighted_slope(&ratio_points);
    let ratio_slope_z = ratio_slope / ratio_slope_se;
    let means: Vec<f64> = rows.iter().map(|r| r.ratio.mean).collect();
    let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let ratio_spread = (hi - lo) / lo.abs().max(1e-12);
    let ratios_bounded =
        ratio_slope_z.abs() <= sweep.z_threshold || ratio_spread <= sweep.spread_tolerance;
    let entropy_points: Vec<(f64, Estimate)> = rows
        .iter()
        .map(|r| (r.n as f64, r.entropy_per_site))
        .collect();
    let (entropy_slope, entropy_slope_se) = weighted_slope(&entropy_points);
    let entropy_slope_z = entropy_slope / entropy_slope_se;
    let entropy_bound = match (drift.sup_bound(), initial.relative_entropy_closed_form()) {
        (Some(b), Some(i)) => Some(i + 0.5 * b * b),
        _ => None,
    };
    let entropies_bounded = match entropy_bound {
        Some(bound) => rows
            .iter()
            .all(|r| r.entropy_per_site.mean <= bound + 3.0 * r.entropy_per_site.stderr),
        None => entropy_slope_z.abs() <= sweep.z_threshold,
    };
    Ok(MomentReport {
        drift: drift.name().to_string(),
        initial: initial.name(),
        sweep: sweep.clone(),
        rows,
        ratio_slope,
        ratio_slope_se,
        ratio_slope_z,
        ratio_spread,
        ratios_bounded,
        entropy_slope,
        entropy_slope_se,
        entropy_slope_z,
        entropy_bound,
        entropies_bounded,
        pass: ratios_bounded && entropies_bounded,
    })
}

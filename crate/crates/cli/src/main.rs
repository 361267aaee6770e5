//! Experiment runner for finite-volume lattice diffusions.
//!
//! Every subcommand reads one TOML file that fully determines the run and
//! writes its results into the configured output directory. Outputs embed
//! the seed and a content hash of the effective configuration, and they
//! are byte-identical across reruns and worker-pool sizes.
//!
//! Exit codes: 0 success, 2 configuration or precondition problem,
//! 3 numerical blow-up, 4 a statistical check failed (the report is still
//! written).

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::ExperimentConfig;
use pathlattice::drift::verify_all;
use pathlattice::error::CoreError;
use pathlattice::gibbs::{
    dlr_check, entropy_comparison, free_energy_report, moment_bound_report, DlrBudget,
    MomentReport, MomentSweep,
};
use pathlattice::lattice::SiteBox;
use pathlattice::sim::{export_ensemble, sample_volume};

#[derive(Parser)]
#[command(
    name = "pathlattice",
    version,
    about = "Finite-volume experiments for interacting lattice diffusions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment description file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override the seed from the file
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory from the file
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker pool size; results never depend on it
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a finite-volume ensemble and export every replica
    Simulate(CommonArgs),
    /// Compare the direct and decomposed entropy estimates
    Entropy(CommonArgs),
    /// Conditional-consistency check through the resampling kernel
    Dlr(CommonArgs),
    /// Compare the two free-energy estimates
    FreeEnergy(CommonArgs),
    /// Sweep the volume size and watch moment and entropy growth
    MomentCheck(CommonArgs),
    /// Run the structural drift verifiers
    VerifyDrift(CommonArgs),
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Failure {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<CoreError> for Failure {
    fn from(err: CoreError) -> Failure {
        let code = match err {
            CoreError::NonFinite { .. } => 3,
            _ => 2,
        };
        Failure {
            code,
            message: err.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Failure {
        Failure {
            code: 2,
            message: err.to_string(),
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    experiment: &'a str,
    config_hash: &'a str,
    seed: u64,
    report: T,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Failure::config(format!("could not encode {}: {e}", path.display())))?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Simulate(a) => ("simulate", a),
        Command::Entropy(a) => ("entropy", a),
        Command::Dlr(a) => ("dlr", a),
        Command::FreeEnergy(a) => ("free_energy", a),
        Command::MomentCheck(a) => ("moment_check", a),
        Command::VerifyDrift(a) => ("verify_drift", a),
    };
    match run(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{kind}: statistical check failed (see report)");
            ExitCode::from(4)
        }
        Err(f) => {
            eprintln!("{kind}: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(kind: &str, args: &CommonArgs) -> Result<bool, Failure> {
    let text = fs::read_to_string(&args.config)?;
    let mut cfg = ExperimentConfig::parse(&text)
        .map_err(|e| Failure::config(format!("{}: {e}", args.config.display())))?;
    if cfg.experiment != kind {
        return Err(Failure::config(format!(
            "config describes experiment `{}`, but the subcommand is `{kind}`",
            cfg.experiment
        )));
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::config(format!("worker pool: {e}")))?;
    }
    cfg.sim.to_sim_config(cfg.seed).validate()?;
    let hash = cfg.hash();
    fs::create_dir_all(&cfg.output.dir)?;
    match kind {
        "simulate" => cmd_simulate(&cfg, &hash),
        "entropy" => cmd_entropy(&cfg, &hash),
        "dlr" => cmd_dlr(&cfg, &hash),
        "free_energy" => cmd_free_energy(&cfg, &hash),
        "moment_check" => cmd_moment_check(&cfg, &hash),
        "verify_drift" => cmd_verify_drift(&cfg, &hash),
        _ => unreachable!("subcommands are exhaustive"),
    }
}

fn cmd_simulate(cfg: &ExperimentConfig, hash: &str) -> Result<bool, Failure> {
    let sim = cfg.sim.to_sim_config(cfg.seed);
    let drift = cfg.drift.build(cfg.sim.d)?;
    let initial = cfg.initial.build();
    let e = sample_volume(&sim, &drift, &initial)?;
    let manifest = export_ensemble(&e, &cfg.output.dir, hash)?;
    println!(
        "simulate: {} replicas on {} sites ({} steps) -> {}",
        manifest.files.len(),
        e.support.len(),
        sim.steps,
        cfg.output.dir.display()
    );
    Ok(true)
}

fn cmd_entropy(cfg: &ExperimentConfig, hash: &str) -> Result<bool, Failure> {
    let block = cfg.entropy.clone().unwrap_or_default();
    let sim = cfg.sim.to_sim_config(cfg.seed);
    let drift = cfg.drift.build(cfg.sim.d)?;
    let initial = cfg.initial.build();
    let e = sample_volume(&sim, &drift, &initial)?;
    let report = entropy_comparison(&e, block.z_threshold)?;
    write_json(
        &cfg.output.dir.join("entropy.json"),
        &Envelope {
            experiment: &cfg.experiment,
            config_hash: hash,
            seed: cfg.seed,
            report: &report,
        },
    )?;
    println!(
        "entropy: direct {:.6} +- {:.6} | decomposed {:.6} +- {:.6} | paired z {:.3} -> {}",
        report.direct.mean,
        report.direct.stderr,
        report.formula.mean,
        report.formula.stderr,
        report.z,
        verdict(report.pass)
    );
    Ok(report.pass)
}

fn cmd_dlr(cfg: &ExperimentConfig, hash: &str) -> Result<bool, Failure> {
    let block = cfg
        .dlr
        .as_ref()
        .ok_or_else(|| Failure::config("dlr experiments need a [dlr] block"))?;
    let drift = cfg.drift.build(cfg.sim.d)?;
    let initial = cfg.initial.build();
    let volume = SiteBox::ball(cfg.sim.d, block.volume_radius)?;
    for t in &block.tests {
        if t.grid_index() > cfg.sim.steps {
            return Err(Failure::config(format!(
                "test function index {} exceeds the {}-step grid",
                t.grid_index(),
                cfg.sim.steps
            )));
        }
    }
    let tests: Vec<_> = block.tests.iter().map(|t| t.build(cfg.sim.d)).collect();
    let report = dlr_check(
        &drift,
        cfg.sim.n,
        &volume,
        &initial,
        &tests,
        DlrBudget {
            outer: cfg.sim.replicas,
            inner: block.inner,
        },
        cfg.sim.steps,
        cfg.seed,
        block.z_threshold,
    )?;
    write_json(
        &cfg.output.dir.join("dlr.json"),
        &Envelope {
            experiment: &cfg.experiment,
            config_hash: hash,
            seed: cfg.seed,
            report: &report,
        },
    )?;
    for f in &report.functions {
        println!(
            "dlr: {} | volume {:.6} vs kernel {:.6} | paired z {:.3} -> {}",
            f.name,
            f.left.mean,
            f.right.mean,
            f.z,
            verdict(f.pass)
        );
    }
    println!(
        "dlr: low-weight kernels {}/{} ({:.2}%)",
        report.ess_failures,
        report.outer,
        100.0 * report.ess_failure_rate
    );
    Ok(report.all_pass)
}

fn cmd_free_energy(cfg: &ExperimentConfig, hash: &str) -> Result<bool, Failure> {
    let block = cfg
        .free_energy
        .as_ref()
        .ok_or_else(|| Failure::config("free_energy experiments need a [free_energy] block"))?;
    let sim = cfg.sim.to_sim_config(cfg.seed);
    let drift = cfg.drift.build(cfg.sim.d)?;
    let beta = block.build_beta(&drift, cfg.sim.d)?;
    let initial = cfg.initial.build();
    let e = sample_volume(&sim, &drift, &initial)?;
    let report = free_energy_report(&beta, &e, block.z_threshold)?;
    write_json(
        &cfg.output.dir.join("free_energy.json"),
        &Envelope {
            experiment: &cfg.experiment,
            config_hash: hash,
            seed: cfg.seed,
            report: &report,
        },
    )?;
    println!(
        "free_energy: mismatch {:.6} +- {:.6} | definition {:.6} +- {:.6} | paired z {:.3} -> {}",
        report.mismatch.mean,
        report.mismatch.stderr,
        report.definition.mean,
        report.definition.stderr,
        report.z,
        verdict(report.pass)
    );
    Ok(report.pass)
}

fn moment_csv(report: &MomentReport, hash: &str, seed: u64) -> String {
    let mut out = String::from(
        "n,volume_sites,moment,moment_se,bracket,bracket_se,ratio,ratio_se,\
         entropy_per_site,entropy_se,config_hash,seed\n",
    );
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{hash},{seed}",
            row.n,
            row.volume_sites,
            row.moment.mean,
            row.moment.stderr,
            row.bracket.mean,
            row.bracket.stderr,
            row.ratio.mean,
            row.ratio.stderr,
            row.entropy_per_site.mean,
            row.entropy_per_site.stderr,
        );
    }
    out
}

fn cmd_moment_check(cfg: &ExperimentConfig, hash: &str) -> Result<bool, Failure> {
    let block = cfg
        .moment
        .as_ref()
        .ok_or_else(|| Failure::config("moment_check experiments need a [moment] block"))?;
    let drift = cfg.drift.build(cfg.sim.d)?;
    let initial = cfg.initial.build();
    let sweep = MomentSweep {
        sizes: block.sizes.clone(),
        replicas: cfg.sim.replicas,
        steps: cfg.sim.steps,
        seed: cfg.seed,
        boundary: block.boundary.clone(),
        spread_tolerance: block.spread_tolerance,
        z_threshold: block.z_threshold,
    };
    let report = moment_bound_report(&drift, &initial, &sweep)?;
    write_json(
        &cfg.output.dir.join("moment.json"),
        &Envelope {
            experiment: &cfg.experiment,
            config_hash: hash,
            seed: cfg.seed,
            report: &report,
        },
    )?;
    fs::write(
        cfg.output.dir.join("moment.csv"),
        moment_csv(&report, hash, cfg.seed),
    )?;
    for row in &report.rows {
        println!(
            "moment_check: n={} ratio {:.4} +- {:.4} | entropy/site {:.4} +- {:.4}",
            row.n,
            row.ratio.mean,
            row.ratio.stderr,
            row.entropy_per_site.mean,
            row.entropy_per_site.stderr
        );
    }
    println!(
        "moment_check: ratio slope z {:.3}, spread {:.4} | entropy bound {} -> {}",
        report.ratio_slope_z,
        report.ratio_spread,
        match report.entropy_bound {
            Some(b) => format!("{b:.4}"),
            None => "n/a".into(),
        },
        verdict(report.pass)
    );
    Ok(report.pass)
}

fn cmd_verify_drift(cfg: &ExperimentConfig, hash: &str) -> Result<bool, Failure> {
    let block = cfg.verify.clone().unwrap_or_default();
    let drift = cfg.drift.build(cfg.sim.d)?;
    let checks = verify_all(&drift, block.trials, cfg.seed);
    write_json(
        &cfg.output.dir.join("verify.json"),
        &Envelope {
            experiment: &cfg.experiment,
            config_hash: hash,
            seed: cfg.seed,
            report: &checks,
        },
    )?;
    let mut all = true;
    for c in &checks {
        println!(
            "verify_drift: {} on {} ({} trials) -> {}",
            c.check,
            c.drift,
            c.trials,
            verdict(c.passed)
        );
        all &= c.passed;
    }
    Ok(all)
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "FAIL"
    }
}

//! `seqlab`: command-line front end for the sequential-testing library.

mod settings;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use seqlab_core::eprocess::{DEFAULT_LIL_CONSTANTS, DEFAULT_QUADRATURE_NODES, DEFAULT_R_N_CONST};
use seqlab_core::simharness::{
    self, alpha_scaling, estimate_expected_tau, gap_scaling, meta_experiment, type1_experiment,
    ConcentrationConfig, DEFAULT_HORIZON,
};
use seqlab_core::{
    concentration_constants, f_delta, klinf_bounded, klinf_tilde, lb_expected_samples,
    ConstraintSystem, Error, ExperimentConfig, KernelConfig, KernelKind, MetaSchedule,
};

use settings::{fmt6, ConfigError, Opts, Settings};

const CONFIG_HELP: &str = "\
Config file keys (same names as the long flags; `_` may replace `-`):
  alpha       level(s) in (0,1), comma-separated for sweeps     [probability]
  m           mean in (0,1) / numeraire alternative mean         [sample units]
  m0          null mean in (0,1)                                 [sample units]
  dist        alternative(s), `;`-separated                      [bern:p | gauss:m[,var] | atoms:x..@w..]
  null-dist   null member(s), `;`-separated                      [same syntax]
  reps        Monte-Carlo replications, at least 100             [count]
  horizon     truncation horizon                                 [samples]
  seed        master seed                                        [u64]
  workers     worker threads; output does not depend on it       [count]
  out         CSV output path                                    [path]
  kernel      lr | numeraire | mixture | klinf-empirical | tilde-dh | lil | constraint-mixture
  r-n-const   doubling-test penalty constant c                   [dimensionless]
  lil-c1, lil-c2, lil-c3  LIL boundary constants                 [dimensionless]
  klinf       KL_inf for `bounds`                                [nats]
  delta       gap in (0,1/e) for `bounds`                        [sample units]
  eps         deviation for `concentration`                      [sqrt(nats)]
  n           sample sizes for `concentration`, comma-separated  [samples]
  max-n       time-uniform range for `concentration`             [samples]
  max-copies  meta-algorithm copies                              [count]
  nodes       constraint-mixture quadrature nodes per axis       [count]
  pi-lo, pi-hi  constraint-mixture multiplier interval           [dimensionless]

Exit status: 0 on success, 2 on configuration errors, 1 on runtime failures.";

#[derive(Parser, Debug)]
#[command(name = "seqlab", version, about = "Anytime-valid sequential tests of a mean", after_help = CONFIG_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// KL_inf of a bounded distribution at mean m (full and restricted duals)
    Klinf(Opts),
    /// Expected stopping time of one kernel at one level
    Simulate(Opts),
    /// Crossing rates under null members
    Type1(Opts),
    /// Expected stopping time across a grid of levels, with a fitted slope in ln(1/α)
    ScaleAlpha(Opts),
    /// Expected stopping time across alternatives at a fixed level
    ScaleGap(Opts),
    /// Coverage of the restricted-dual concentration inequality
    Concentration(Opts),
    /// Geometric-copies meta-algorithm against its base test
    Meta(Opts),
    /// Reference sample-complexity curves
    Bounds(Opts),
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::EstimationFailed { .. } | Error::Io(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("seqlab: configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("seqlab: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Klinf(o) => cmd_klinf(&o.resolve()?),
        Command::Simulate(o) => cmd_simulate(&o.resolve()?),
        Command::Type1(o) => cmd_type1(&o.resolve()?),
        Command::ScaleAlpha(o) => cmd_scale_alpha(&o.resolve()?),
        Command::ScaleGap(o) => cmd_scale_gap(&o.resolve()?),
        Command::Concentration(o) => cmd_concentration(&o.resolve()?),
        Command::Meta(o) => cmd_meta(&o.resolve()?),
        Command::Bounds(o) => cmd_bounds(&o.resolve()?),
    }
}

fn first_discrete(s: &Settings, key: &str) -> Result<seqlab_core::DiscreteBoundedDist, Failure> {
    let dists = s.require_dists(key)?;
    match dists[0].as_discrete() {
        Some(d) => Ok(d.clone()),
        None => Err(Failure::Config(format!(
            "invalid value for '{key}': a bounded distribution on [0, 1] is required"
        ))),
    }
}

fn cmd_klinf(s: &Settings) -> Result<(), Failure> {
    let p = first_discrete(s, "dist")?;
    let m = s.unit_mean("m")?.ok_or_else(|| ConfigError("missing required setting 'm' (--m)".into()))?;
    let full = klinf_bounded(&p, m)?;
    let tilde = klinf_tilde(&p, m)?;
    println!("value {}", fmt6(full.value));
    println!("lambda {}", fmt6(full.lambda_star));
    println!("at_boundary {}", full.at_boundary);
    println!("tilde_value {}", fmt6(tilde.value));
    println!("tilde_lambda {}", fmt6(tilde.lambda_star));
    if m > p.mean() {
        if let Ok(cc) = concentration_constants(&p, m) {
            println!("C {}", fmt6(cc.c_const));
            println!("D {}", fmt6(cc.d_const));
            println!("D_over_C {}", fmt6(cc.ratio()));
        }
    }
    Ok(())
}

fn cmd_bounds(s: &Settings) -> Result<(), Failure> {
    let alpha = s.alphas()?;
    let klinf = s.f64("klinf")?;
    let delta = s.f64("delta")?;
    if klinf.is_none() && delta.is_none() {
        return Err(Failure::Config("missing required setting 'klinf' (--klinf) or 'delta' (--delta)".into()));
    }
    for a in alpha {
        if let Some(k) = klinf {
            println!("alpha {} lb_expected_samples {}", fmt6(a), fmt6(lb_expected_samples(a, k)?));
        }
    }
    if let Some(d) = delta {
        println!("delta {} f_delta {}", fmt6(d), fmt6(f_delta(d)?));
    }
    Ok(())
}

fn missing(key: &str) -> Failure {
    Failure::Config(format!("missing required setting '{key}' (--{key})"))
}

/// Builds the kernel named by `kernel` from the remaining settings.
fn kernel_config(s: &Settings) -> Result<KernelConfig, Failure> {
    let name = s.require_raw("kernel")?;
    let kind = KernelKind::from_name(name).ok_or_else(|| {
        Failure::Config(format!(
            "invalid value for 'kernel': unknown kernel '{name}' (expected one of {})",
            KernelKind::ALL.map(|k| k.name()).join(", ")
        ))
    })?;
    let m0 = || s.unit_mean("m0")?.ok_or_else(|| missing("m0"));
    Ok(match kind {
        KernelKind::LikelihoodRatio => {
            let p = s.require_dists("null-dist")?.remove(0);
            let q = s.require_dists("dist")?.remove(0);
            KernelConfig::LikelihoodRatio { p, q }
        }
        KernelKind::NumeraireSubGaussian => {
            let m = match s.f64("m")? {
                Some(m) => m,
                None => s.require_dists("dist")?[0].mean(),
            };
            KernelConfig::NumeraireSubGaussian { m }
        }
        KernelKind::MixtureSubGaussian => KernelConfig::MixtureSubGaussian,
        KernelKind::KLinfEmpirical => KernelConfig::KLinfEmpirical { m0: m0()? },
        KernelKind::TildeKLinfDH => KernelConfig::TildeKLinfDH {
            m0: m0()?,
            r_n_const: s.f64("r-n-const")?.unwrap_or(DEFAULT_R_N_CONST),
        },
        KernelKind::LILConfidence => {
            let (d1, d2, d3) = DEFAULT_LIL_CONSTANTS;
            KernelConfig::LILConfidence {
                c1: s.f64("lil-c1")?.unwrap_or(d1),
                c2: s.f64("lil-c2")?.unwrap_or(d2),
                c3: s.f64("lil-c3")?.unwrap_or(d3),
            }
        }
        KernelKind::ConstraintMixture => {
            let lo = s.f64("pi-lo")?.unwrap_or(-1.0);
            let hi = s.f64("pi-hi")?.unwrap_or(1.0);
            let nodes = s.u64_or("nodes", DEFAULT_QUADRATURE_NODES as u64)? as usize;
            KernelConfig::ConstraintMixture(ConstraintSystem::mean_constraint(m0()?, lo, hi)?.with_nodes(nodes)?)
        }
    })
}

fn experiment(s: &Settings, need_alt: bool, need_null: bool) -> Result<ExperimentConfig, Failure> {
    let mut c = ExperimentConfig::new(kernel_config(s)?);
    c.alpha_grid = s.alphas()?;
    c.alt_dists = if need_alt { s.require_dists("dist")? } else { s.dists("dist")?.unwrap_or_default() };
    c.null_dists = if need_null { s.require_dists("null-dist")? } else { s.dists("null-dist")?.unwrap_or_default() };
    c.replications = s.u64_or("reps", 1000)?;
    c.horizon = s.u64_or("horizon", DEFAULT_HORIZON)?;
    c.master_seed = s.u64_or("seed", 0)?;
    c.workers = s.u64_or("workers", 1)? as usize;
    if c.workers == 0 {
        return Err(Failure::Config("invalid value for 'workers': must be at least 1".into()));
    }
    c.output_path = s.raw("out").map(Into::into);
    c.validate()?;
    Ok(c)
}

fn write_out(c: &ExperimentConfig, csv: &str) -> Result<(), Failure> {
    c.write_output(csv).map_err(|e| Failure::Runtime(e.to_string()))
}

fn cmd_simulate(s: &Settings) -> Result<(), Failure> {
    let c = experiment(s, true, false)?;
    let alt = &c.alt_dists[0];
    let e = estimate_expected_tau(&c)?;
    let floor = simharness::reference_klinf(&c.kernel, alt)
        .and_then(|k| lb_expected_samples(e.alpha, k))
        .unwrap_or(f64::NAN);
    println!("kernel {} alt {} alpha {}", c.kernel.kind(), alt, fmt6(e.alpha));
    println!("mean_tau {}", fmt6(e.mean));
    println!("stderr {}", fmt6(e.standard_error));
    println!("nonstop_frac {}", fmt6(e.nonstop_fraction));
    println!("lb_floor {}", fmt6(floor));
    let csv = format!(
        "alpha,mean_tau,stderr,nonstop_frac,stopped,replications,lb_floor\n{},{},{},{},{},{},{}\n",
        e.alpha, e.mean, e.standard_error, e.nonstop_fraction, e.stopped, e.replications, floor
    );
    write_out(&c, &csv)
}

fn cmd_type1(s: &Settings) -> Result<(), Failure> {
    let c = experiment(s, false, true)?;
    let r = type1_experiment(&c)?;
    println!("kernel {}", r.kernel);
    for row in &r.rows {
        println!(
            "null {} alpha {} rate {} band {} ville_rate {} within_band {}",
            row.null,
            fmt6(row.alpha),
            fmt6(row.rate),
            fmt6(row.band),
            fmt6(row.ville_rate),
            row.within_band()
        );
    }
    write_out(&c, &r.to_csv())
}

fn cmd_scale_alpha(s: &Settings) -> Result<(), Failure> {
    let c = experiment(s, true, false)?;
    let r = alpha_scaling(&c)?;
    println!("kernel {} alt {}", r.kernel, c.alt_dists[0]);
    for row in &r.rows {
        let e = &row.estimate;
        println!(
            "alpha {} mean_tau {} stderr {} nonstop_frac {} lb_floor {}",
            fmt6(e.alpha),
            fmt6(e.mean),
            fmt6(e.standard_error),
            fmt6(e.nonstop_fraction),
            fmt6(row.lb_floor)
        );
    }
    println!("fitted_slope {}", fmt6(r.fitted_slope));
    println!("reference_slope {}", fmt6(r.reference_slope));
    println!("relative_error {}", fmt6(r.relative_slope_error()));
    write_out(&c, &r.to_csv())
}

fn cmd_scale_gap(s: &Settings) -> Result<(), Failure> {
    let c = experiment(s, true, false)?;
    let r = gap_scaling(&c)?;
    println!("kernel {} alpha {}", r.kernel, fmt6(r.alpha));
    for row in &r.rows {
        println!(
            "alt {} klinf {} mean_tau {} stderr {} ratio {}",
            row.label,
            fmt6(row.klinf),
            fmt6(row.estimate.mean),
            fmt6(row.estimate.standard_error),
            fmt6(row.ratio)
        );
    }
    println!("ratio_spread {}", fmt6(r.spread()));
    write_out(&c, &r.to_csv())
}

fn cmd_concentration(s: &Settings) -> Result<(), Failure> {
    let p = first_discrete(s, "dist")?;
    let m = s.unit_mean("m")?.ok_or_else(|| missing("m"))?;
    let alpha = s.alphas()?[0];
    let eps = s.f64("eps")?.ok_or_else(|| missing("eps"))?;
    let cfg = ConcentrationConfig {
        p,
        m,
        n_grid: s.u64_list("n")?.unwrap_or_else(|| vec![100, 1000]),
        eps,
        alpha,
        max_n: s.u64_or("max-n", 1 << 14)?,
        replications: s.u64_or("reps", 1000)?,
        master_seed: s.u64_or("seed", 0)?,
        workers: (s.u64_or("workers", 1)? as usize).max(1),
    };
    let r = simharness::concentration_experiment(&cfg)?;
    for row in &r.rows {
        println!(
            "event {} n {} rate {} bound {} within_band {}",
            row.event,
            row.n,
            fmt6(row.rate),
            fmt6(row.bound),
            row.within_band()
        );
    }
    if let Some(path) = s.raw("out") {
        simharness::write_csv(path.as_ref(), &r.to_csv()).map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn cmd_meta(s: &Settings) -> Result<(), Failure> {
    let c = experiment(s, true, false)?;
    let copies = s.u64_or("max-copies", MetaSchedule::DEFAULT_MAX_COPIES as u64)? as usize;
    let r = meta_experiment(&c, copies)?;
    println!("alpha {}", fmt6(r.alpha));
    println!("base_mean_tau {} stderr {}", fmt6(r.base.mean), fmt6(r.base.standard_error));
    println!("meta_mean_samples {} stderr {}", fmt6(r.meta.mean), fmt6(r.meta.standard_error));
    println!("factor {} limit {} within_limit {}", fmt6(r.factor), fmt6(r.limit), r.within_limit());
    for (null, rate, band) in &r.null_rates {
        println!("null {} rate {} band {}", null, fmt6(*rate), fmt6(*band));
    }
    write_out(&c, &r.to_csv())
}

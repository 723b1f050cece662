//! Seeded, parallel Monte-Carlo experiments.
//!
//! Replication `r` of a kernel draws from the stream keyed by
//! `(derive_seed(master_seed, kernel id), r)`, so results depend only on the
//! configuration and never on the worker count. Replications run on a rayon pool
//! of `workers` threads; results are collected in replication order and reduced
//! sequentially.
//!
//! Every table has a `to_csv` method. Columns, in order:
//!
//! - [`ScalingResult`]: `alpha,log_inv_alpha,mean_tau,stderr,nonstop_frac,stopped,replications,lb_floor`
//! - [`GapResult`]: `label,klinf,mean_tau,stderr,nonstop_frac,lb_floor,ratio`
//! - [`Type1Result`]: `null,alpha,crossings,replications,rate,binomial_se,band,ville_horizon,ville_rate`
//! - [`ConcentrationResult`]: `event,n,eps,alpha,violations,replications,rate,stderr,bound`
//! - [`MetaResult`]: `quantity,alpha,mean,stderr,nonstop_frac,replications,limit`
//!
//! Floats are written with Rust's shortest round-trip formatting.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::bounds::{klinf_gaussian, lb_expected_samples};
use crate::distributions::{derive_seed, DiscreteBoundedDist, Dist, SeededStream};
use crate::eprocess::{KernelConfig, KernelKind, PreparedKernel};
use crate::error::{Error, Result};
use crate::klinf::{dh_boundary, hoeffding_dev_bound, klinf_bounded, maximize_log_dual, solve_weighted, DualRange};
use crate::stopping::{run_meta_prepared, run_trajectory, MetaSchedule, StoppingRecord};

/// Default truncation horizon for power-one tests.
pub const DEFAULT_HORIZON: u64 = 1_000_000;

/// Smallest accepted replication count.
pub const MIN_REPLICATIONS: u64 = 100;

/// Sub-key separating meta-algorithm streams from base-test streams.
const META_STREAM_KEY: u64 = 0x4D45_5441;

/// Sub-key for concentration experiments.
const CONCENTRATION_STREAM_KEY: u64 = 0x434F_4E43;

/// Shared settings of a Monte-Carlo experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kernel: KernelConfig,
    /// Null members used by type-I experiments.
    pub null_dists: Vec<Dist>,
    /// Alternatives; scaling experiments use the first, gap experiments all of them.
    pub alt_dists: Vec<Dist>,
    /// Strictly decreasing levels.
    pub alpha_grid: Vec<f64>,
    pub replications: u64,
    pub horizon: u64,
    pub master_seed: u64,
    /// Worker threads; results do not depend on it.
    pub workers: usize,
    pub output_path: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(kernel: KernelConfig) -> Self {
        Self {
            kernel,
            null_dists: Vec::new(),
            alt_dists: Vec::new(),
            alpha_grid: vec![0.05],
            replications: 1000,
            horizon: DEFAULT_HORIZON,
            master_seed: 0,
            workers: 1,
            output_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_grid.is_empty() {
            return Err(Error::InvalidConfig("alpha grid is empty".into()));
        }
        for &a in &self.alpha_grid {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::domain("alpha", a, "must lie in (0, 1]"));
            }
        }
        if self.alpha_grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidConfig("alpha grid must be strictly decreasing".into()));
        }
        if self.replications < MIN_REPLICATIONS {
            return Err(Error::InvalidConfig(format!(
                "replications must be at least {MIN_REPLICATIONS}, got {}",
                self.replications
            )));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be positive".into()));
        }
        Ok(())
    }

    fn first_alt(&self) -> Result<&Dist> {
        self.alt_dists
            .first()
            .ok_or_else(|| Error::InvalidConfig("no alternative distribution given".into()))
    }

    fn stream(&self, key: u64, replication: u64) -> SeededStream {
        SeededStream::new(derive_seed(self.master_seed, key), replication)
    }

    fn kernel_key(&self) -> u64 {
        self.kernel.kind().id()
    }

    /// Writes `csv` to `output_path` when one is set.
    pub fn write_output(&self, csv: &str) -> Result<()> {
        if let Some(path) = &self.output_path {
            write_csv(path, csv)?;
        }
        Ok(())
    }
}

/// Writes `csv` to `path`.
pub fn write_csv(path: &Path, csv: &str) -> Result<()> {
    std::fs::write(path, csv)?;
    Ok(())
}

/// Maps `f` over `0..count` on `workers` threads, preserving index order.
pub fn par_map<T, F>(workers: usize, count: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..count).into_par_iter().map(&f).collect()))
}

/// Mean stopping time over stopped replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauEstimate {
    pub alpha: f64,
    pub mean: f64,
    pub standard_error: f64,
    pub nonstop_fraction: f64,
    pub stopped: u64,
    pub replications: u64,
}

impl TauEstimate {
    /// Summarises taus (`None` = reached the horizon).
    pub fn from_taus(alpha: f64, taus: &[Option<u64>]) -> Result<Self> {
        let replications = taus.len() as u64;
        let stopped: Vec<f64> = taus.iter().flatten().map(|&t| t as f64).collect();
        let k = stopped.len();
        if k == 0 {
            return Err(Error::EstimationFailed { replications });
        }
        let mean = stopped.iter().sum::<f64>() / k as f64;
        let standard_error = if k > 1 {
            let var = stopped.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (k - 1) as f64;
            (var / k as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            alpha,
            mean,
            standard_error,
            nonstop_fraction: (replications - k as u64) as f64 / replications as f64,
            stopped: k as u64,
            replications,
        })
    }
}

/// Runs every replication of `kernel` under `dist` at the kernel's level.
pub fn simulate_records(
    config: &ExperimentConfig,
    kernel: &Arc<PreparedKernel>,
    dist: &Dist,
) -> Result<Vec<StoppingRecord>> {
    let key = config.kernel_key();
    par_map(config.workers, config.replications, |r| {
        let mut stream = config.stream(key, r);
        run_trajectory(kernel, dist, config.horizon, &mut stream)
    })
}

fn taus_at(config: &ExperimentConfig, dist: &Dist, alpha: f64) -> Result<Vec<Option<u64>>> {
    let kernel = PreparedKernel::new(config.kernel.clone(), alpha, config.horizon)?;
    Ok(simulate_records(config, &kernel, dist)?
        .into_iter()
        .map(|r| r.tau)
        .collect())
}

/// Estimates `E[τ_α]` under the first alternative at the first level of the grid.
pub fn estimate_expected_tau(config: &ExperimentConfig) -> Result<TauEstimate> {
    config.validate()?;
    let alpha = config.alpha_grid[0];
    TauEstimate::from_taus(alpha, &taus_at(config, config.first_alt()?, alpha)?)
}

/// KL_inf of `alt` against the null class tested by `kernel`.
///
/// Gaussian kernels test a one-sided sub-Gaussian null with mean at most 0
/// (numeraire, mixture, LIL) or the point null `P` (likelihood ratio); bounded
/// kernels test mean `m0` on `[0, 1]`. For constraint mixtures this is the
/// best growth `max_π E[ln S^π]` over the box (one-dimensional systems only).
pub fn reference_klinf(kernel: &KernelConfig, alt: &Dist) -> Result<f64> {
    let gaussian_mean = |d: &Dist| {
        d.as_gaussian()
            .map(|g| g.mean())
            .ok_or_else(|| Error::UnsupportedPair(format!("kernel {} needs a Gaussian alternative", kernel.kind())))
    };
    let discrete = |d: &Dist| -> Result<DiscreteBoundedDist> {
        d.as_discrete()
            .cloned()
            .ok_or_else(|| Error::UnsupportedPair(format!("kernel {} needs a bounded alternative", kernel.kind())))
    };
    match kernel {
        KernelConfig::LikelihoodRatio { p, q } => crate::distributions::kl_divergence(q, p),
        KernelConfig::NumeraireSubGaussian { .. }
        | KernelConfig::MixtureSubGaussian
        | KernelConfig::LILConfidence { .. } => {
            let m = gaussian_mean(alt)?;
            Ok(if m > 0.0 { klinf_gaussian(m, 0.0) } else { 0.0 })
        }
        KernelConfig::KLinfEmpirical { m0 } | KernelConfig::TildeKLinfDH { m0, .. } => {
            Ok(klinf_bounded(&discrete(alt)?, *m0)?.value)
        }
        KernelConfig::ConstraintMixture(sys) => {
            if sys.dimension() != 1 {
                return Err(Error::InvalidConfig(
                    "reference growth is only computed for one-dimensional systems".into(),
                ));
            }
            let q = discrete(alt)?;
            let phi: Vec<f64> = q.atoms().iter().map(|&x| sys.phi(x)[0]).collect();
            let (lo, hi) = sys.bounds();
            Ok(maximize_log_dual(&phi, q.weights(), lo[0], hi[0], None).value)
        }
    }
}

/// One level of an α sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRow {
    pub estimate: TauEstimate,
    pub lb_floor: f64,
}

/// Mean stopping times over an α grid with a least-squares slope in `ln(1/α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingResult {
    pub kernel: KernelKind,
    pub rows: Vec<ScalingRow>,
    pub fitted_slope: f64,
    pub intercept: f64,
    /// `1 / KL_inf`.
    pub reference_slope: f64,
}

impl ScalingResult {
    /// `|fitted / reference − 1|`.
    pub fn relative_slope_error(&self) -> f64 {
        (self.fitted_slope / self.reference_slope - 1.0).abs()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha,log_inv_alpha,mean_tau,stderr,nonstop_frac,stopped,replications,lb_floor\n");
        for row in &self.rows {
            let e = &row.estimate;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                e.alpha,
                -e.alpha.ln(),
                e.mean,
                e.standard_error,
                e.nonstop_fraction,
                e.stopped,
                e.replications,
                row.lb_floor
            );
        }
        s
    }
}

/// Unweighted least squares `y = a + b x`; returns `(b, a)`.
pub fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Sweeps the α grid under the first alternative and fits the slope of `E[τ]` in `ln(1/α)`.
pub fn alpha_scaling(config: &ExperimentConfig) -> Result<ScalingResult> {
    config.validate()?;
    if config.alpha_grid.len() < 2 {
        return Err(Error::InvalidConfig("alpha scaling needs at least two levels".into()));
    }
    let alt = config.first_alt()?;
    let klinf = reference_klinf(&config.kernel, alt)?;
    let mut rows = Vec::with_capacity(config.alpha_grid.len());
    for &alpha in &config.alpha_grid {
        let estimate = TauEstimate::from_taus(alpha, &taus_at(config, alt, alpha)?)?;
        rows.push(ScalingRow {
            estimate,
            lb_floor: lb_expected_samples(alpha, klinf)?,
        });
    }
    let x: Vec<f64> = rows.iter().map(|r| -r.estimate.alpha.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.estimate.mean).collect();
    let (fitted_slope, intercept) = least_squares(&x, &y);
    Ok(ScalingResult {
        kernel: config.kernel.kind(),
        rows,
        fitted_slope,
        intercept,
        reference_slope: 1.0 / klinf,
    })
}

/// One alternative of a gap sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub label: String,
    pub klinf: f64,
    pub estimate: TauEstimate,
    pub lb_floor: f64,
    /// `E[τ] · KL_inf / ln ln(1/KL_inf)`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapResult {
    pub kernel: KernelKind,
    pub alpha: f64,
    pub rows: Vec<GapRow>,
}

impl GapResult {
    /// Largest over smallest ratio.
    pub fn spread(&self) -> f64 {
        let max = self.rows.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
        let min = self.rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
        max / min
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,klinf,mean_tau,stderr,nonstop_frac,lb_floor,ratio\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.label,
                r.klinf,
                r.estimate.mean,
                r.estimate.standard_error,
                r.estimate.nonstop_fraction,
                r.lb_floor,
                r.ratio
            );
        }
        s
    }
}

/// Runs the kernel at the first grid level under every alternative, whose KL_inf
/// should shrink towards zero, and reports the normalised ratios.
pub fn gap_scaling(config: &ExperimentConfig) -> Result<GapResult> {
    config.validate()?;
    if config.alt_dists.is_empty() {
        return Err(Error::InvalidConfig("gap scaling needs alternatives".into()));
    }
    let alpha = config.alpha_grid[0];
    let mut rows = Vec::with_capacity(config.alt_dists.len());
    for alt in &config.alt_dists {
        let klinf = reference_klinf(&config.kernel, alt)?;
        if !(klinf > 0.0 && klinf < (-1.0f64).exp()) {
            return Err(Error::domain("klinf", klinf, "gap ratio needs KL_inf in (0, 1/e)"));
        }
        let estimate = TauEstimate::from_taus(alpha, &taus_at(config, alt, alpha)?)?;
        rows.push(GapRow {
            label: alt.to_string(),
            klinf,
            lb_floor: lb_expected_samples(alpha, klinf)?,
            ratio: estimate.mean * klinf / (1.0 / klinf).ln().ln(),
            estimate,
        });
    }
    Ok(GapResult {
        kernel: config.kernel.kind(),
        alpha,
        rows,
    })
}

/// Crossing rate under one null member at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct Type1Row {
    pub null: String,
    pub alpha: f64,
    pub crossings: u64,
    pub replications: u64,
    pub rate: f64,
    /// `sqrt(α(1−α)/reps)`.
    pub binomial_se: f64,
    /// `α + 3·binomial_se`.
    pub band: f64,
    pub ville_horizon: u64,
    /// Fraction of trajectories whose e-process reached `1/α` within `ville_horizon` samples.
    pub ville_rate: f64,
}

impl Type1Row {
    pub fn within_band(&self) -> bool {
        self.rate <= self.band
    }

    pub fn ville_within_band(&self) -> bool {
        self.ville_rate <= self.band
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Type1Result {
    pub kernel: KernelKind,
    pub rows: Vec<Type1Row>,
}

impl Type1Result {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("null,alpha,crossings,replications,rate,binomial_se,band,ville_horizon,ville_rate\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.null, r.alpha, r.crossings, r.replications, r.rate, r.binomial_se, r.band, r.ville_horizon, r.ville_rate
            );
        }
        s
    }
}

/// Samples within which the Ville check looks for a crossing.
pub const VILLE_HORIZON: u64 = 10_000;

/// Fraction of null trajectories that stop before the horizon, per null member and level.
///
/// Since stopping is the first time `E_n ≥ 1/α`, the fraction stopped by
/// `VILLE_HORIZON` samples is also the fraction with `max_{n ≤ 10⁴} E_n ≥ 1/α`.
pub fn type1_experiment(config: &ExperimentConfig) -> Result<Type1Result> {
    config.validate()?;
    if config.null_dists.is_empty() {
        return Err(Error::InvalidConfig("type-I experiment needs null members".into()));
    }
    let reps = config.replications;
    let ville_horizon = VILLE_HORIZON.min(config.horizon);
    let mut rows = Vec::new();
    for null in &config.null_dists {
        for &alpha in &config.alpha_grid {
            let taus = taus_at(config, null, alpha)?;
            let crossings = taus.iter().flatten().count() as u64;
            let early = taus.iter().flatten().filter(|&&t| t <= ville_horizon).count();
            let binomial_se = (alpha * (1.0 - alpha) / reps as f64).sqrt();
            rows.push(Type1Row {
                null: null.to_string(),
                alpha,
                crossings,
                replications: reps,
                rate: crossings as f64 / reps as f64,
                binomial_se,
                band: alpha + 3.0 * binomial_se,
                ville_horizon,
                ville_rate: early as f64 / reps as f64,
            });
        }
    }
    Ok(Type1Result {
        kernel: config.kernel.kind(),
        rows,
    })
}

/// Settings of a concentration experiment for the restricted dual.
#[derive(Debug, Clone)]
pub struct ConcentrationConfig {
    pub p: DiscreteBoundedDist,
    pub m: f64,
    /// Sample sizes for the fixed-`n` deviation event.
    pub n_grid: Vec<u64>,
    pub eps: f64,
    /// Level of the time-uniform doubling boundary.
    pub alpha: f64,
    /// Largest `n` checked by the time-uniform event.
    pub max_n: u64,
    pub replications: u64,
    pub master_seed: u64,
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrationRow {
    /// `"fixed"` or `"uniform"`.
    pub event: &'static str,
    pub n: u64,
    pub eps: f64,
    pub alpha: f64,
    pub violations: u64,
    pub replications: u64,
    pub rate: f64,
    pub stderr: f64,
    /// Analytic bound: the Hoeffding bound for fixed rows, α for the uniform row.
    pub bound: f64,
}

impl ConcentrationRow {
    /// `rate ≤ bound + 3σ` with `σ = sqrt(bound(1−bound)/reps)`.
    pub fn within_band(&self) -> bool {
        let b = self.bound.min(1.0);
        self.rate <= b + 3.0 * (b * (1.0 - b) / self.replications as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationResult {
    pub rows: Vec<ConcentrationRow>,
}

impl ConcentrationResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("event,n,eps,alpha,violations,replications,rate,stderr,bound\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.event, r.n, r.eps, r.alpha, r.violations, r.replications, r.rate, r.stderr, r.bound
            );
        }
        s
    }
}

/// Empirical frequencies of the fixed-`n` and time-uniform deviation events of
/// the restricted dual, next to their analytic bounds.
///
/// Fixed: `sqrt(tilde(P̂_n, m)) ≤ sqrt(tilde(P, m)) − ε`. Uniform: some
/// `2 ≤ n ≤ max_n` has `sqrt(DH_n) < sqrt(tilde(P, m)) − dh_boundary(n, α)`,
/// where `DH_n` is the restricted dual of the first `2^⌊log2 n⌋` samples.
pub fn concentration_experiment(cfg: &ConcentrationConfig) -> Result<ConcentrationResult> {
    if cfg.replications < MIN_REPLICATIONS {
        return Err(Error::InvalidConfig(format!(
            "replications must be at least {MIN_REPLICATIONS}"
        )));
    }
    if cfg.max_n < 2 {
        return Err(Error::domain("max_n", cfg.max_n as f64, "must be at least 2"));
    }
    // Also validates m > mean(P), a positive restricted value and the ε range.
    let bounds: Vec<f64> = cfg
        .n_grid
        .iter()
        .map(|&n| hoeffding_dev_bound(&cfg.p, cfg.m, n, cfg.eps))
        .collect::<Result<_>>()?;
    let constants = crate::klinf::concentration_constants(&cfg.p, cfg.m)?;
    let root = (constants.c_const / 2.0).sqrt();
    let radius: Vec<f64> = (0..=cfg.max_n)
        .map(|n| if n < 2 { f64::INFINITY } else { dh_boundary(n, cfg.alpha, &constants).unwrap() })
        .collect();
    let length = cfg.n_grid.iter().copied().max().unwrap_or(0).max(cfg.max_n);
    let dist: Dist = cfg.p.clone().into();
    let seed = derive_seed(cfg.master_seed, CONCENTRATION_STREAM_KEY);

    let outcomes = par_map(cfg.workers, cfg.replications, |r| {
        let mut stream = SeededStream::new(seed, r);
        let mut atoms: Vec<f64> = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        let mut fixed = vec![false; cfg.n_grid.len()];
        let mut uniform = false;
        let mut dh = 0.0;
        for n in 1..=length {
            let x = dist.sample(&mut stream);
            let i = atoms.partition_point(|&a| a < x);
            if i < atoms.len() && atoms[i] == x {
                counts[i] += 1.0;
            } else {
                atoms.insert(i, x);
                counts.insert(i, 1.0);
            }
            let tilde = || {
                solve_weighted(&atoms, &counts, cfg.m, DualRange::Tilde, None)
                    .expect("m validated")
                    .value
            };
            if n <= cfg.max_n {
                if n.is_power_of_two() {
                    dh = tilde();
                }
                if !uniform && dh.sqrt() < root - radius[n as usize] {
                    uniform = true;
                }
            }
            for (k, &target) in cfg.n_grid.iter().enumerate() {
                if n == target {
                    fixed[k] = tilde().sqrt() <= root - cfg.eps;
                }
            }
        }
        (fixed, uniform)
    })?;

    let reps = cfg.replications as f64;
    let mut rows = Vec::new();
    for (k, &n) in cfg.n_grid.iter().enumerate() {
        let violations = outcomes.iter().filter(|o| o.0[k]).count() as u64;
        let rate = violations as f64 / reps;
        rows.push(ConcentrationRow {
            event: "fixed",
            n,
            eps: cfg.eps,
            alpha: f64::NAN,
            violations,
            replications: cfg.replications,
            rate,
            stderr: (rate * (1.0 - rate) / reps).sqrt(),
            bound: bounds[k],
        });
    }
    let violations = outcomes.iter().filter(|o| o.1).count() as u64;
    let rate = violations as f64 / reps;
    rows.push(ConcentrationRow {
        event: "uniform",
        n: cfg.max_n,
        eps: f64::NAN,
        alpha: cfg.alpha,
        violations,
        replications: cfg.replications,
        rate,
        stderr: (rate * (1.0 - rate) / reps).sqrt(),
        bound: cfg.alpha,
    });
    Ok(ConcentrationResult { rows })
}

/// Meta-algorithm against its base test at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaResult {
    pub alpha: f64,
    pub base: TauEstimate,
    pub meta: TauEstimate,
    /// `4(1−α)/(1−2α)²`.
    pub factor: f64,
    /// `factor · base.mean + 3 · meta.standard_error`.
    pub limit: f64,
    /// Meta crossing rate under each null member, with `α + 3·binomial SE` bands.
    pub null_rates: Vec<(String, f64, f64)>,
}

impl MetaResult {
    pub fn within_limit(&self) -> bool {
        self.meta.mean <= self.limit
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("quantity,alpha,mean,stderr,nonstop_frac,replications,limit\n");
        for (name, e, limit) in [("base_tau", &self.base, f64::NAN), ("meta_samples", &self.meta, self.limit)] {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                name, e.alpha, e.mean, e.standard_error, e.nonstop_fraction, e.replications, limit
            );
        }
        for (null, rate, band) in &self.null_rates {
            let _ = writeln!(s, "null_rate:{},{},{},,,{},{}", null, self.alpha, rate, self.meta.replications, band);
        }
        s
    }
}

/// Expected total samples of the meta-algorithm versus the base test's
/// conditional mean at the first grid level, plus the meta crossing rate under
/// every null member.
pub fn meta_experiment(config: &ExperimentConfig, max_copies: usize) -> Result<MetaResult> {
    config.validate()?;
    let alpha = config.alpha_grid[0];
    let schedule = MetaSchedule::new(alpha, max_copies)?;
    let alt = config.first_alt()?;
    let base = TauEstimate::from_taus(alpha, &taus_at(config, alt, alpha)?)?;
    let kernels = schedule.prepare(&config.kernel, config.horizon)?;
    let key = config.kernel_key() ^ META_STREAM_KEY;
    let meta_taus = |dist: &Dist| {
        par_map(config.workers, config.replications, |r| {
            run_meta_prepared(&kernels, dist, config.horizon, &config.stream(key, r)).record.tau
        })
    };
    let meta = TauEstimate::from_taus(alpha, &meta_taus(alt)?)?;
    let factor = 4.0 * (1.0 - alpha) / ((1.0 - 2.0 * alpha) * (1.0 - 2.0 * alpha));
    let se = (alpha * (1.0 - alpha) / config.replications as f64).sqrt();
    let mut null_rates = Vec::new();
    for null in &config.null_dists {
        let taus = meta_taus(null)?;
        let rate = taus.iter().flatten().count() as f64 / config.replications as f64;
        null_rates.push((null.to_string(), rate, alpha + 3.0 * se));
    }
    Ok(MetaResult {
        alpha,
        limit: factor * base.mean + 3.0 * meta.standard_error,
        base,
        meta,
        factor,
        null_rates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::GaussianDist;
    use approx::assert_abs_diff_eq;

    fn numeraire_config(reps: u64) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(KernelConfig::NumeraireSubGaussian { m: 0.5 });
        c.alt_dists = vec![GaussianDist::unit(0.5).unwrap().into()];
        c.null_dists = vec![GaussianDist::unit(0.0).unwrap().into()];
        c.alpha_grid = vec![0.01];
        c.replications = reps;
        c.horizon = 100_000;
        c.master_seed = 17;
        c
    }

    #[test]
    fn validation() {
        let mut c = numeraire_config(100);
        assert!(c.validate().is_ok());
        c.alpha_grid = vec![0.01, 0.05];
        assert!(c.validate().is_err());
        c.alpha_grid = vec![0.01];
        c.replications = 99;
        assert!(c.validate().is_err());
    }

    #[test]
    fn least_squares_recovers_line() {
        let x = [1.0, 2.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 + 8.0 * v).collect();
        let (b, a) = least_squares(&x, &y);
        assert_abs_diff_eq!(b, 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn tau_estimate_summary() {
        let e = TauEstimate::from_taus(0.1, &[Some(2), Some(4), None, Some(6)]).unwrap();
        assert_eq!(e.mean, 4.0);
        assert_eq!(e.nonstop_fraction, 0.25);
        assert_abs_diff_eq!(e.standard_error, (4.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert!(matches!(
            TauEstimate::from_taus(0.1, &[None, None]),
            Err(Error::EstimationFailed { replications: 2 })
        ));
    }

    #[test]
    fn numeraire_mean_above_floor() {
        let e = estimate_expected_tau(&numeraire_config(2000)).unwrap();
        assert_eq!(e.nonstop_fraction, 0.0);
        assert!(e.mean >= 0.9 * 36.841_361_487_904_7);
        assert!(e.mean <= 1.35 * 36.841_361_487_904_7, "{}", e.mean);
    }

    #[test]
    fn prefix_replications_agree() {
        let small = numeraire_config(100);
        let large = numeraire_config(400);
        let k = PreparedKernel::new(small.kernel.clone(), 0.01, small.horizon).unwrap();
        let a = simulate_records(&small, &k, &small.alt_dists[0]).unwrap();
        let b = simulate_records(&large, &k, &large.alt_dists[0]).unwrap();
        assert_eq!(a[..], b[..100]);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut c = numeraire_config(300);
        let one = estimate_expected_tau(&c).unwrap();
        c.workers = 4;
        assert_eq!(estimate_expected_tau(&c).unwrap(), one);
    }

    #[test]
    fn null_alternative_rarely_stops() {
        let mut c = numeraire_config(1000);
        c.alpha_grid = vec![0.05];
        c.alt_dists = c.null_dists.clone();
        c.horizon = 2000;
        let e = estimate_expected_tau(&c).unwrap();
        let sigma = (0.05f64 * 0.95 / 1000.0).sqrt();
        assert!(e.nonstop_fraction >= 1.0 - 0.05 - 3.0 * sigma);
    }

    #[test]
    fn concentration_refuses_large_eps() {
        let cfg = ConcentrationConfig {
            p: DiscreteBoundedDist::bernoulli(0.3).unwrap(),
            m: 0.5,
            n_grid: vec![100],
            eps: 0.3,
            alpha: 0.1,
            max_n: 64,
            replications: 100,
            master_seed: 0,
            workers: 1,
        };
        assert!(matches!(concentration_experiment(&cfg), Err(Error::Domain { .. })));
    }

    #[test]
    fn reference_values() {
        let alt: Dist = GaussianDist::unit(0.5).unwrap().into();
        assert_eq!(reference_klinf(&KernelConfig::MixtureSubGaussian, &alt).unwrap(), 0.125);
        let b: Dist = DiscreteBoundedDist::bernoulli(0.25).unwrap().into();
        assert_abs_diff_eq!(
            reference_klinf(&KernelConfig::KLinfEmpirical { m0: 0.5 }, &b).unwrap(),
            0.130_812_035_941_137,
            epsilon = 1e-12
        );
        let sys = crate::eprocess::ConstraintSystem::mean_constraint(0.5, -1.0, 1.0).unwrap();
        assert_abs_diff_eq!(
            reference_klinf(&KernelConfig::ConstraintMixture(sys), &b).unwrap(),
            0.130_812_035_941_137,
            epsilon = 1e-12
        );
    }
}

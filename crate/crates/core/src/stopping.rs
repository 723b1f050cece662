//! Stopping rules: first crossing of `1/α`, and the geometric-copies meta-algorithm.

use std::sync::Arc;

use crate::distributions::{Dist, SeededStream};
use crate::eprocess::{EProcessState, KernelConfig, PreparedKernel};
use crate::error::{Error, Result};

/// Outcome of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingRecord {
    pub stopped: bool,
    /// Samples consumed when the rule fired; `None` when truncated at the horizon.
    pub tau: Option<u64>,
    pub horizon: u64,
    /// `log E` at the end of the trajectory (LIL: the final margin).
    pub final_log_e: f64,
    /// The value the rule compared against the threshold one sample before stopping.
    ///
    /// Exact `log E_{τ−1}` for every kernel except the one-dimensional constraint
    /// mixture, where it is the cheap upper bound used to skip quadrature.
    /// `None` when `τ = 1` or the trajectory did not stop.
    pub pre_crossing_log_e: Option<f64>,
}

/// Runs `kernel` on i.i.d. draws from `dist` until it crosses or `horizon` samples are used.
pub fn run_trajectory(
    kernel: &Arc<PreparedKernel>,
    dist: &Dist,
    horizon: u64,
    stream: &mut SeededStream,
) -> StoppingRecord {
    let mut state = EProcessState::new(kernel);
    let mut previous = None;
    for n in 1..=horizon {
        state.update(dist.sample(stream));
        if state.crossed() {
            return StoppingRecord {
                stopped: true,
                tau: Some(n),
                horizon,
                final_log_e: state.log_e(),
                pre_crossing_log_e: previous,
            };
        }
        previous = Some(state.log_e_upper());
    }
    StoppingRecord {
        stopped: false,
        tau: None,
        horizon,
        final_log_e: state.log_e(),
        pre_crossing_log_e: None,
    }
}

/// Threshold stopping `τ_α = min{n : E_n ≥ 1/α}` (LIL: `min{n : L_n(α) > 0}`), truncated at `horizon`.
pub fn run_threshold(
    config: &KernelConfig,
    dist: &Dist,
    alpha: f64,
    horizon: u64,
    stream: &mut SeededStream,
) -> Result<StoppingRecord> {
    if horizon == 0 {
        return Err(Error::domain("horizon", 0.0, "must be at least 1"));
    }
    let kernel = PreparedKernel::new(config.clone(), alpha, horizon)?;
    Ok(run_trajectory(&kernel, dist, horizon, stream))
}

/// Levels `α_i = α / 2^i` of the copies run by the meta-algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaSchedule {
    pub alpha: f64,
    pub max_copies: usize,
    pub per_copy_alphas: Vec<f64>,
}

impl MetaSchedule {
    pub const DEFAULT_MAX_COPIES: usize = 20;

    pub fn new(alpha: f64, max_copies: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 0.5) {
            return Err(Error::domain("alpha", alpha, "meta-algorithm needs alpha in (0, 0.5)"));
        }
        if max_copies == 0 || max_copies > 62 {
            return Err(Error::InvalidConfig(format!(
                "max_copies must lie in 1..=62, got {max_copies}"
            )));
        }
        let per_copy_alphas = (1..=max_copies).map(|i| alpha / (1u64 << i) as f64).collect();
        Ok(Self {
            alpha,
            max_copies,
            per_copy_alphas,
        })
    }

    /// Prepares one kernel per copy. Copy `i` never draws more than about
    /// `horizon / 2^(i−1)` samples, which sizes its tables.
    pub fn prepare(&self, config: &KernelConfig, horizon: u64) -> Result<Vec<Arc<PreparedKernel>>> {
        self.per_copy_alphas
            .iter()
            .enumerate()
            .map(|(i, &a)| PreparedKernel::new(config.clone(), a, (horizon >> i) + 1))
            .collect()
    }
}

/// Per-copy state at the end of a meta run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CopyDiagnostics {
    /// 1-based copy index.
    pub index: usize,
    pub alpha: f64,
    pub samples: u64,
    pub log_e: f64,
}

/// Meta-algorithm outcome; `record.tau` counts samples over all copies.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaRecord {
    pub record: StoppingRecord,
    /// Scheduler steps executed.
    pub steps: u64,
    /// Index of the copy that stopped first.
    pub winner: Option<usize>,
    /// Instantiated copies, in index order.
    pub copies: Vec<CopyDiagnostics>,
}

/// Runs the meta-algorithm with kernels from [`MetaSchedule::prepare`].
///
/// At scheduler step `r`, every copy `i` with `2^i | r` draws one fresh sample from
/// its own sub-stream of `stream`; copies are created on their first scheduled
/// step. Stops as soon as any copy crosses `1/α_i`, or when `horizon` samples have
/// been drawn in total.
pub fn run_meta_prepared(
    kernels: &[Arc<PreparedKernel>],
    dist: &Dist,
    horizon: u64,
    stream: &SeededStream,
) -> MetaRecord {
    let mut copies: Vec<(EProcessState, SeededStream)> = Vec::new();
    let mut total = 0u64;
    let mut step = 0u64;
    let mut winner = None;
    'outer: while total < horizon {
        step += 1;
        for i in 1..=kernels.len() {
            if step % (1u64 << i) != 0 {
                break;
            }
            if copies.len() < i {
                copies.push((EProcessState::new(&kernels[i - 1]), stream.substream(i as u64)));
            }
            let (state, sub) = &mut copies[i - 1];
            state.update(dist.sample(sub));
            total += 1;
            if state.crossed() {
                winner = Some(i);
                break 'outer;
            }
            if total >= horizon {
                break 'outer;
            }
        }
    }
    let diagnostics: Vec<CopyDiagnostics> = copies
        .iter()
        .enumerate()
        .map(|(k, (state, _))| CopyDiagnostics {
            index: k + 1,
            alpha: kernels[k].alpha(),
            samples: state.n(),
            log_e: state.log_e(),
        })
        .collect();
    let final_log_e = match winner {
        Some(i) => diagnostics[i - 1].log_e,
        None => diagnostics
            .iter()
            .map(|d| d.log_e)
            .fold(f64::NEG_INFINITY, f64::max),
    };
    MetaRecord {
        record: StoppingRecord {
            stopped: winner.is_some(),
            tau: winner.map(|_| total),
            horizon,
            final_log_e,
            pre_crossing_log_e: None,
        },
        steps: step,
        winner,
        copies: diagnostics,
    }
}

/// Convenience wrapper: prepares the copies of `config` under `schedule` and runs them.
pub fn run_meta(
    config: &KernelConfig,
    dist: &Dist,
    schedule: &MetaSchedule,
    horizon: u64,
    stream: &SeededStream,
) -> Result<MetaRecord> {
    if horizon == 0 {
        return Err(Error::domain("horizon", 0.0, "must be at least 1"));
    }
    let kernels = schedule.prepare(config, horizon)?;
    Ok(run_meta_prepared(&kernels, dist, horizon, stream))
}

/// Closed-form bound on a curved-boundary stopping time:
/// `1 + (d/(γ c1)) ln ln(c2/(γ c1)) + ln(c3/α) / ((1−γ) c1)`.
pub fn tau_alpha_closed_bound(c1: f64, c2: f64, c3: f64, alpha: f64, gamma: f64, d: f64) -> Result<f64> {
    for (name, v) in [("c1", c1), ("c2", c2), ("c3", c3)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::domain(name, v, "must be positive"));
        }
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain("alpha", alpha, "must lie in (0, 1)"));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::domain("gamma", gamma, "must lie in (0, 1)"));
    }
    if !(d >= 2.0) {
        return Err(Error::domain("d", d, "must be at least 2"));
    }
    let ratio = c2 / (gamma * c1);
    if !(ratio > std::f64::consts::E) {
        return Err(Error::domain("c2/(gamma c1)", ratio, "must exceed e"));
    }
    Ok(1.0 + d / (gamma * c1) * ratio.ln().ln() + (c3 / alpha).ln() / ((1.0 - gamma) * c1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{DiscreteBoundedDist, GaussianDist};
    use approx::assert_abs_diff_eq;

    fn ones() -> Dist {
        DiscreteBoundedDist::point_mass(1.0).unwrap().into()
    }

    #[test]
    fn alpha_one_stops_on_first_positive_increment() {
        let cfg = KernelConfig::NumeraireSubGaussian { m: 0.5 };
        let rec = run_threshold(&cfg, &ones(), 1.0, 100, &mut SeededStream::new(0, 0)).unwrap();
        assert_eq!(rec.tau, Some(1));
        assert_eq!(rec.pre_crossing_log_e, None);
    }

    #[test]
    fn deterministic_numeraire_tau() {
        let cfg = KernelConfig::NumeraireSubGaussian { m: 0.5 };
        let rec = run_threshold(&cfg, &ones(), 0.05, 100, &mut SeededStream::new(0, 0)).unwrap();
        assert!(rec.stopped);
        assert_eq!(rec.tau, Some(8));
        assert_abs_diff_eq!(rec.final_log_e, 3.0, epsilon = 1e-12);
        assert!(rec.pre_crossing_log_e.unwrap() < 20f64.ln());
    }

    #[test]
    fn horizon_truncation() {
        let cfg = KernelConfig::NumeraireSubGaussian { m: 0.5 };
        let zero: Dist = DiscreteBoundedDist::point_mass(0.0).unwrap().into();
        let rec = run_threshold(&cfg, &zero, 0.05, 50, &mut SeededStream::new(0, 0)).unwrap();
        assert!(!rec.stopped);
        assert_eq!(rec.tau, None);
        assert_eq!(rec.horizon, 50);
        assert_abs_diff_eq!(rec.final_log_e, -50.0 * 0.125, epsilon = 1e-12);
    }

    #[test]
    fn first_crossing_is_minimal() {
        let cfg = KernelConfig::NumeraireSubGaussian { m: 0.5 };
        let q: Dist = GaussianDist::unit(0.5).unwrap().into();
        let thr = 100f64.ln();
        for rep in 0..200 {
            let rec = run_threshold(&cfg, &q, 0.01, 100_000, &mut SeededStream::new(3, rep)).unwrap();
            let tau = rec.tau.unwrap();
            assert!(tau >= 1 && tau <= rec.horizon);
            assert!(rec.final_log_e >= thr);
            if let Some(prev) = rec.pre_crossing_log_e {
                assert!(prev < thr);
            }
        }
    }

    #[test]
    fn schedule_alphas() {
        let s = MetaSchedule::new(0.04, 2).unwrap();
        assert_eq!(s.per_copy_alphas, vec![0.02, 0.01]);
        for k in [1, 5, 20, 50] {
            let s = MetaSchedule::new(0.1, k).unwrap();
            assert!(s.per_copy_alphas.iter().sum::<f64>() < 0.1);
        }
        // the deficit 0.1 * 2^-62 is below one ulp
        let s = MetaSchedule::new(0.1, 62).unwrap();
        assert!(s.per_copy_alphas.iter().sum::<f64>() <= 0.1);
        assert!(MetaSchedule::new(0.5, 3).is_err());
        assert!(MetaSchedule::new(0.1, 0).is_err());
    }

    #[test]
    fn meta_divisibility_schedule() {
        // Large threshold so nothing stops; 3 samples are drawn by step 4.
        let cfg = KernelConfig::NumeraireSubGaussian { m: 0.5 };
        let s = MetaSchedule::new(1e-9, 20).unwrap();
        let rec = run_meta(&cfg, &ones(), &s, 3, &SeededStream::new(1, 0)).unwrap();
        assert!(!rec.record.stopped);
        assert_eq!(rec.steps, 4);
        assert_eq!(rec.copies.len(), 2);
        assert_eq!(rec.copies[0].samples, 2);
        assert_eq!(rec.copies[1].samples, 1);
    }

    #[test]
    fn meta_single_copy_uses_base_sample_count() {
        let cfg = KernelConfig::NumeraireSubGaussian { m: 0.5 };
        let base = run_threshold(&cfg, &ones(), 0.025, 100, &mut SeededStream::new(0, 0)).unwrap();
        let s = MetaSchedule::new(0.05, 1).unwrap();
        let meta = run_meta(&cfg, &ones(), &s, 100, &SeededStream::new(0, 0)).unwrap();
        assert_eq!(meta.record.tau, base.tau);
        assert_eq!(meta.steps, 2 * base.tau.unwrap());
        assert_eq!(meta.winner, Some(1));
    }

    #[test]
    fn meta_copy_streams_are_independent_of_schedule() {
        // The samples a copy sees depend only on its own sub-stream key.
        let stream = SeededStream::new(9, 4);
        let g: Dist = GaussianDist::unit(0.0).unwrap().into();
        let mut direct = stream.substream(2);
        let expected: Vec<f64> = (0..3).map(|_| g.sample(&mut direct)).collect();
        let cfg = KernelConfig::NumeraireSubGaussian { m: 0.5 };
        let s = MetaSchedule::new(1e-12, 3).unwrap();
        let rec = run_meta(&cfg, &g, &s, 10, &stream).unwrap();
        assert_eq!(rec.copies[1].samples, 3);
        let log_e: f64 = expected.iter().map(|&x| 0.5 * x - 0.125).sum();
        assert_abs_diff_eq!(rec.copies[1].log_e, log_e, epsilon = 1e-12);
    }

    #[test]
    fn closed_bound_examples() {
        let b = tau_alpha_closed_bound(1.0, 10.0, 1.0, 0.05, 0.5, 2.0).unwrap();
        assert_abs_diff_eq!(b, 11.380_219_348_567_8, epsilon = 1e-10);
        let mut prev = f64::INFINITY;
        for k in 1..10 {
            let v = tau_alpha_closed_bound(k as f64 * 0.1, 10.0, 1.0, 0.05, 0.5, 2.0).unwrap();
            assert!(v < prev);
            prev = v;
        }
        let a = tau_alpha_closed_bound(1.0, 10.0, 1.0, 1e-3, 0.5, 2.0).unwrap();
        let b = tau_alpha_closed_bound(1.0, 10.0, 1.0, 1e-4, 0.5, 2.0).unwrap();
        assert_abs_diff_eq!(b - a, 2.0 * 10f64.ln(), epsilon = 1e-10);
        assert!(tau_alpha_closed_bound(1.0, 2.0, 1.0, 0.05, 0.9, 2.0).is_err());
    }
}

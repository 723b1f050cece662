//! Dual solvers for KL_inf and its restricted variant over bounded distributions.
//!
//! For a distribution `P` on `[0, 1]` and a mean `m` in `(0, 1)`, the bounded-mean
//! KL_inf equals
//!
//! ```text
//!     max_{λ ∈ [−1/m, 1/(1−m)]}  E_P[ ln(1 − λ(X − m)) ]
//! ```
//!
//! and the restricted ("tilde") variant takes the same maximum over `λ ∈ [−1, 1]`.
//! Both are one-dimensional strictly concave problems, solved here by bisection on
//! the sign of the derivative with Newton steps taken whenever they stay inside the
//! current bracket.

use crate::distributions::{DiscreteBoundedDist, ATOM_TOLERANCE};
use crate::error::{Error, Result};

/// Iteration cap for the bracketed Newton solver; bisection alone needs ~60 steps.
const MAX_ITER: usize = 200;

/// Relative step size at which the solver declares convergence.
const LAMBDA_TOL: f64 = 1e-15;

/// Derivative size below which a vanishing Newton step counts as converged.
const FOC_TOL: f64 = 1e-10;

/// Outcome of a dual solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualSolution {
    pub lambda_star: f64,
    /// Optimal dual value, clamped at zero.
    pub value: f64,
    /// True when the optimum sits on an end of the search interval.
    pub at_boundary: bool,
    /// Objective derivative at `lambda_star`.
    pub foc_residual: f64,
}

impl DualSolution {
    fn degenerate() -> Self {
        Self {
            lambda_star: 0.0,
            value: 0.0,
            at_boundary: false,
            foc_residual: 0.0,
        }
    }
}

/// Maximises `Σ w_i ln(1 + λ a_i) / Σ w_i` over `λ ∈ [lo, hi]`.
///
/// Requires `1 + λ a_i ≥ 0` on the whole interval (up to rounding, which is
/// clamped). Weights need not be normalised. `warm` is an optional starting
/// point, typically the optimiser of a nearby problem. The returned value is
/// clamped at zero, which is exact whenever `0 ∈ [lo, hi]`.
///
/// When every `a_i` with positive weight vanishes the objective is identically
/// zero and `λ = 0` is returned.
pub fn maximize_log_dual(a: &[f64], w: &[f64], lo: f64, hi: f64, warm: Option<f64>) -> DualSolution {
    debug_assert_eq!(a.len(), w.len());
    let total: f64 = w.iter().sum();
    if total <= 0.0 || a.iter().zip(w).all(|(&ai, &wi)| wi == 0.0 || ai.abs() <= ATOM_TOLERANCE) {
        return DualSolution::degenerate();
    }
    let deriv = |l: f64| -> (f64, f64) {
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for (&ai, &wi) in a.iter().zip(w) {
            if wi == 0.0 {
                continue;
            }
            let f = (1.0 + l * ai).max(0.0);
            let r = ai / f;
            d1 += wi * r;
            d2 -= wi * r * r;
        }
        (d1 / total, d2 / total)
    };
    let value = |l: f64| -> f64 {
        let mut v = 0.0;
        for (&ai, &wi) in a.iter().zip(w) {
            if wi == 0.0 {
                continue;
            }
            v += wi * (l * ai).max(-1.0).ln_1p();
        }
        v / total
    };
    let finish = |l: f64, at_boundary: bool, d: f64| DualSolution {
        lambda_star: l,
        value: value(l).max(0.0),
        at_boundary,
        foc_residual: d,
    };

    let (d_hi, _) = deriv(hi);
    if d_hi >= 0.0 {
        return finish(hi, true, d_hi);
    }
    let (d_lo, _) = deriv(lo);
    if d_lo <= 0.0 {
        return finish(lo, true, d_lo);
    }

    // Two support points: the first-order condition is linear in λ.
    let mut active = a.iter().zip(w).filter(|(_, &wi)| wi > 0.0);
    if let (Some((&a0, &w0)), Some((&a1, &w1)), None) = (active.next(), active.next(), active.next()) {
        let l = -(w0 * a0 + w1 * a1) / ((w0 + w1) * a0 * a1);
        if l > lo && l < hi {
            return finish(l, false, deriv(l).0);
        }
    }

    // Invariant: derivative positive at `left`, negative at `right`.
    let (mut left, mut right) = (lo, hi);
    let mut x = match warm {
        Some(v) if v > lo && v < hi => v,
        _ => 0.0,
    };
    if x <= lo || x >= hi {
        x = 0.5 * (lo + hi);
    }
    let mut d = 0.0;
    let mut last_step = hi - lo;
    for _ in 0..MAX_ITER {
        let (d1, d2) = deriv(x);
        d = d1;
        if d1 == 0.0 {
            break;
        }
        if d1 > 0.0 {
            left = x;
        } else {
            right = x;
        }
        let scale = x.abs().max(1.0);
        if right - left <= LAMBDA_TOL * scale {
            break;
        }
        let newton = x - d1 / d2;
        let newton_step = (newton - x).abs();
        // Newton is kept only while it stays inside the bracket and at least halves
        // the previous step; near a log singularity the step is tiny but wrong.
        let use_newton = newton.is_finite()
            && newton > left
            && newton < right
            && 2.0 * newton_step <= last_step
            && (newton_step > LAMBDA_TOL * scale || d1.abs() <= FOC_TOL);
        let next = if use_newton { newton } else { 0.5 * (left + right) };
        last_step = (next - x).abs();
        x = next;
        if use_newton && last_step <= LAMBDA_TOL * scale {
            d = deriv(x).0;
            break;
        }
    }
    finish(x, false, d)
}

/// Which multiplier range a dual solve uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualRange {
    /// `[−1/m, 1/(1−m)]`: the full KL_inf.
    Full,
    /// `[−1, 1]`: the restricted variant.
    Tilde,
}

impl DualRange {
    pub fn interval(self, m: f64) -> (f64, f64) {
        match self {
            DualRange::Full => (-1.0 / m, 1.0 / (1.0 - m)),
            DualRange::Tilde => (-1.0, 1.0),
        }
    }
}

fn check_mean(m: f64) -> Result<()> {
    if m > 0.0 && m < 1.0 {
        Ok(())
    } else {
        Err(Error::domain("m", m, "mean must lie in (0, 1)"))
    }
}

/// Solves the dual over `range` for the atoms and (unnormalised) weights given.
pub fn solve_weighted(
    atoms: &[f64],
    weights: &[f64],
    m: f64,
    range: DualRange,
    warm: Option<f64>,
) -> Result<DualSolution> {
    check_mean(m)?;
    let a: Vec<f64> = atoms.iter().map(|&x| m - x).collect();
    let (lo, hi) = range.interval(m);
    Ok(maximize_log_dual(&a, weights, lo, hi, warm))
}

/// KL_inf(P, m) over distributions on `[0, 1]` with mean `m`, via its dual.
pub fn klinf_bounded(p: &DiscreteBoundedDist, m: f64) -> Result<DualSolution> {
    solve_weighted(p.atoms(), p.weights(), m, DualRange::Full, None)
}

/// The restricted dual with `λ ∈ [−1, 1]`; never exceeds [`klinf_bounded`].
pub fn klinf_tilde(p: &DiscreteBoundedDist, m: f64) -> Result<DualSolution> {
    solve_weighted(p.atoms(), p.weights(), m, DualRange::Tilde, None)
}

/// `E_P[ln(1 − λ(X − m))]`, `−∞` where a factor vanishes.
pub fn dual_objective(p: &DiscreteBoundedDist, m: f64, lambda: f64) -> f64 {
    p.atoms()
        .iter()
        .zip(p.weights())
        .map(|(&x, &w)| w * (lambda * (m - x)).max(-1.0).ln_1p())
        .sum()
}

/// Bernoulli KL divergence `d(p, q)`, with `0 ln 0 = 0`.
pub fn kl_bernoulli(p: f64, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain("p", p, "must lie in [0, 1]"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::domain("q", q, "must lie in (0, 1)"));
    }
    if p == q {
        return Ok(0.0);
    }
    if q == 0.0 || q == 1.0 {
        return Err(Error::domain("q", q, "must lie in (0, 1) unless p = q"));
    }
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    Ok((term(p, q) + term(1.0 - p, 1.0 - q)).max(0.0))
}

/// Constants of the restricted-dual concentration inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrationConstants {
    /// Twice the restricted dual value.
    pub c_const: f64,
    /// `(ln(1 + mλ*) − ln(1 − λ*(1 − m)))²` at the restricted optimiser.
    pub d_const: f64,
}

impl ConcentrationConstants {
    pub fn ratio(&self) -> f64 {
        self.d_const / self.c_const
    }
}

/// C and D for `(P, m)` with `m` above the mean of `P`.
pub fn concentration_constants(p: &DiscreteBoundedDist, m: f64) -> Result<ConcentrationConstants> {
    let sol = klinf_tilde(p, m)?;
    if sol.value <= 0.0 || sol.lambda_star == 0.0 {
        return Err(Error::Degenerate(format!(
            "restricted KL_inf vanishes at m = {m}, so C = 0"
        )));
    }
    if p.mean() > m {
        return Err(Error::domain("m", m, "must exceed the mean of P"));
    }
    let l = sol.lambda_star;
    let spread = (m * l).ln_1p() - (-l * (1.0 - m)).ln_1p();
    Ok(ConcentrationConstants {
        c_const: 2.0 * sol.value,
        d_const: spread * spread,
    })
}

/// Time-uniform deviation radius for the doubling statistic at sample size `n ≥ 2`.
pub fn dh_boundary(n: u64, alpha: f64, constants: &ConcentrationConstants) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain("n", n as f64, "boundary needs n >= 2"));
    }
    check_alpha(alpha)?;
    let nf = n as f64;
    let num = 1.0 + 2.0 * (1.0 / alpha).ln() + 4.0 * nf.log2().ln();
    Ok((num / nf).sqrt() * constants.ratio().sqrt())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::domain("alpha", alpha, "must lie in (0, 1)"))
    }
}

/// Fixed-`n` bound on `P[sqrt(tilde(P̂_n)) ≤ sqrt(tilde(P)) − ε]`: `exp(−n ε² C / D)`.
pub fn hoeffding_dev_bound(p: &DiscreteBoundedDist, m: f64, n: u64, eps: f64) -> Result<f64> {
    let cc = concentration_constants(p, m)?;
    let root = (cc.c_const / 2.0).sqrt();
    if !(eps > 0.0 && eps < root) {
        return Err(Error::domain("eps", eps, "must lie in (0, sqrt(restricted KL_inf))"));
    }
    Ok((-(n as f64) * eps * eps * cc.c_const / cc.d_const).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bern(p: f64) -> DiscreteBoundedDist {
        DiscreteBoundedDist::bernoulli(p).unwrap()
    }

    #[test]
    fn optimum_near_log_singularity() {
        // Atom at 0 makes the objective singular at λ = −1/m; the optimiser sits well inside.
        let p = DiscreteBoundedDist::new(vec![0.0, 0.6, 0.7, 0.8], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let sol = klinf_bounded(&p, 0.5).unwrap();
        assert!(!sol.at_boundary);
        assert_abs_diff_eq!(sol.lambda_star, -1.336_213_628_562_488, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.value, 0.120_677_980_093_873_9, epsilon = 1e-13);
        assert!(sol.foc_residual.abs() < 1e-10);
    }

    #[test]
    fn kl_bernoulli_examples() {
        assert_eq!(kl_bernoulli(0.5, 0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(kl_bernoulli(1.0, 0.05).unwrap(), 2.995_732_273_553_991, epsilon = 1e-13);
        assert_abs_diff_eq!(kl_bernoulli(0.3, 0.5).unwrap(), 0.082_282_878_505_051_8, epsilon = 1e-14);
        assert!(kl_bernoulli(0.3, 0.0).is_err());
        assert_eq!(kl_bernoulli(1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn full_dual_examples() {
        let s = klinf_bounded(&DiscreteBoundedDist::point_mass(0.2).unwrap(), 0.2).unwrap();
        assert_eq!((s.lambda_star, s.value, s.at_boundary), (0.0, 0.0, false));

        let s = klinf_bounded(&bern(0.3), 0.5).unwrap();
        assert_abs_diff_eq!(s.value, 0.082_282_878_505_051_8, epsilon = 1e-13);
        assert_abs_diff_eq!(s.lambda_star, 0.8, epsilon = 1e-12);
        assert!(!s.at_boundary);
        assert!(s.foc_residual.abs() <= 1e-12);

        let s = klinf_bounded(&bern(0.5), 0.5).unwrap();
        assert_abs_diff_eq!(s.value, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.lambda_star, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn tilde_dual_examples() {
        let s = klinf_tilde(&bern(0.3), 0.5).unwrap();
        assert_abs_diff_eq!(s.value, 0.082_282_878_505_051_8, epsilon = 1e-13);
        assert_abs_diff_eq!(s.lambda_star, 0.8, epsilon = 1e-12);

        let s = klinf_tilde(&DiscreteBoundedDist::point_mass(0.0).unwrap(), 0.5).unwrap();
        assert_eq!(s.lambda_star, 1.0);
        assert!(s.at_boundary);
        assert_abs_diff_eq!(s.value, 0.405_465_108_108_164_4, epsilon = 1e-15);

        let s = klinf_tilde(&DiscreteBoundedDist::new(vec![0.2, 0.6], vec![0.5, 0.5]).unwrap(), 0.4)
            .unwrap();
        assert_abs_diff_eq!(s.value, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.lambda_star, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn point_mass_at_zero_hits_full_boundary() {
        let s = klinf_bounded(&DiscreteBoundedDist::point_mass(0.0).unwrap(), 0.5).unwrap();
        assert_eq!(s.lambda_star, 2.0);
        assert!(s.at_boundary);
        assert_abs_diff_eq!(s.value, std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn restricted_bernoulli_clamps() {
        // full optimiser (0.6 - 0.25) / 0.24 = 1.4583 lies outside [-1, 1]
        let p = bern(0.25);
        let full = klinf_bounded(&p, 0.6).unwrap();
        assert_abs_diff_eq!(full.lambda_star, 1.458_333_333_333_333, epsilon = 1e-12);
        assert_abs_diff_eq!(full.value, 0.252_589_310_228_306, epsilon = 1e-13);
        let tilde = klinf_tilde(&p, 0.6).unwrap();
        assert_eq!(tilde.lambda_star, 1.0);
        assert_abs_diff_eq!(tilde.value, 0.224_796_315_992_804, epsilon = 1e-13);
    }

    #[test]
    fn concentration_constant_examples() {
        let cc = concentration_constants(&bern(0.3), 0.5).unwrap();
        assert_abs_diff_eq!(cc.d_const, 0.717_913_664_216_733, epsilon = 1e-12);
        assert_abs_diff_eq!(cc.c_const, 0.164_565_757_010_104, epsilon = 1e-12);
        assert_abs_diff_eq!(cc.ratio(), 4.362_472_954_641_81, epsilon = 1e-10);

        assert!(matches!(
            concentration_constants(&bern(0.5), 0.5),
            Err(Error::Degenerate(_))
        ));

        let t = 10;
        let q = bern(0.5 - 2f64.powi(-t));
        let r = concentration_constants(&q, 0.5).unwrap().ratio();
        assert_abs_diff_eq!(r, 4.000_007_629_415_55, epsilon = 1e-8);
    }

    #[test]
    fn dh_boundary_examples() {
        let cc = ConcentrationConstants {
            c_const: 1.0,
            d_const: 4.0,
        };
        assert_abs_diff_eq!(dh_boundary(1024, 0.05, &cc).unwrap(), 0.251_571_660_695_660, epsilon = 1e-12);
        assert!(dh_boundary(1, 0.05, &cc).is_err());
        for n in 16..2000 {
            assert!(dh_boundary(2 * n, 0.05, &cc).unwrap() < dh_boundary(n, 0.05, &cc).unwrap());
        }
        let mut prev = 0.0;
        for k in 1..12 {
            let b = dh_boundary(100, 10f64.powi(-k), &cc).unwrap();
            assert!(b > prev);
            prev = b;
        }
    }

    #[test]
    fn hoeffding_examples() {
        let p = bern(0.3);
        let b = hoeffding_dev_bound(&p, 0.5, 1000, 0.1).unwrap();
        assert_abs_diff_eq!(b, 0.101_036_057_458_497, epsilon = 1e-12);
        let b100 = hoeffding_dev_bound(&p, 0.5, 100, 0.1).unwrap();
        assert_abs_diff_eq!(b100, 0.795_147_392_507_831, epsilon = 1e-12);
        let b200 = hoeffding_dev_bound(&p, 0.5, 200, 0.1).unwrap();
        assert_abs_diff_eq!(b200, b100 * b100, epsilon = 1e-14);
        assert!(hoeffding_dev_bound(&p, 0.5, 1000, 1e-9).unwrap() > 0.999_999);
        assert!(hoeffding_dev_bound(&p, 0.5, 1000, 0.3).is_err());
        assert!(hoeffding_dev_bound(&p, 0.5, 1000, 0.0).is_err());
    }

    #[test]
    fn warm_start_converges_to_same_point() {
        let p = DiscreteBoundedDist::new(vec![0.0, 0.3, 0.9, 1.0], vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let cold = klinf_bounded(&p, 0.7).unwrap();
        for warm in [-1.0, 0.5, 1.2, 3.0] {
            let s = solve_weighted(p.atoms(), p.weights(), 0.7, DualRange::Full, Some(warm)).unwrap();
            assert_abs_diff_eq!(s.lambda_star, cold.lambda_star, epsilon = 1e-12);
            assert_abs_diff_eq!(s.value, cold.value, epsilon = 1e-14);
        }
    }

    #[test]
    fn optimizer_vanishes_along_bernoulli_sequence() {
        let mut prev = f64::INFINITY;
        for t in 1..=20 {
            let l = klinf_bounded(&bern(0.5 - 2f64.powi(-t)), 0.5).unwrap().lambda_star;
            assert!(l < prev);
            assert_abs_diff_eq!(l, 2f64.powi(2 - t), epsilon = 1e-14);
            if t >= 9 {
                assert!(l < 0.01);
            }
            prev = l;
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn instance() -> impl Strategy<Value = (DiscreteBoundedDist, f64)> {
            (
                prop::collection::vec((0u32..=100, 1u32..=20), 1..6),
                1u32..100,
            )
                .prop_map(|(pairs, m)| {
                    let total: u32 = pairs.iter().map(|p| p.1).sum();
                    let atoms = pairs.iter().map(|p| p.0 as f64 / 100.0).collect();
                    let weights = pairs.iter().map(|p| p.1 as f64 / total as f64).collect();
                    (DiscreteBoundedDist::new(atoms, weights).unwrap(), m as f64 / 100.0)
                })
        }

        proptest! {
            #[test]
            fn tilde_between_zero_and_full((p, m) in instance()) {
                let full = klinf_bounded(&p, m).unwrap();
                let tilde = klinf_tilde(&p, m).unwrap();
                prop_assert!(tilde.value >= 0.0);
                prop_assert!(tilde.value <= full.value * (1.0 + 1e-12) + 1e-15);
                prop_assert!((-1.0..=1.0).contains(&tilde.lambda_star));
                prop_assert!(full.lambda_star >= -1.0 / m && full.lambda_star <= 1.0 / (1.0 - m));
            }

            #[test]
            fn zero_at_own_mean((p, _m) in instance()) {
                let m = p.mean();
                prop_assume!(m > 1e-9 && m < 1.0 - 1e-9);
                prop_assert!(klinf_bounded(&p, m).unwrap().value <= 1e-10);
            }

            #[test]
            fn interior_foc((p, m) in instance()) {
                for s in [klinf_bounded(&p, m).unwrap(), klinf_tilde(&p, m).unwrap()] {
                    if !s.at_boundary {
                        prop_assert!(s.foc_residual.abs() <= 1e-8, "{:?}", s);
                    }
                }
            }

            #[test]
            fn objective_is_concave((p, m) in instance(), u in 0.0f64..1.0, v in 0.0f64..1.0) {
                let (lo, hi) = DualRange::Full.interval(m);
                let l1 = lo + u * (hi - lo);
                let l2 = lo + v * (hi - lo);
                let f1 = dual_objective(&p, m, l1);
                let f2 = dual_objective(&p, m, l2);
                let mid = dual_objective(&p, m, 0.5 * (l1 + l2));
                if f1.is_finite() && f2.is_finite() {
                    prop_assert!(mid >= 0.5 * (f1 + f2) - 1e-12);
                }
            }

            #[test]
            fn optimum_dominates_samples((p, m) in instance(), u in 0.0f64..1.0) {
                let s = klinf_bounded(&p, m).unwrap();
                let (lo, hi) = DualRange::Full.interval(m);
                let f = dual_objective(&p, m, lo + u * (hi - lo));
                prop_assert!(s.value >= f - 1e-12);
            }
        }
    }
}

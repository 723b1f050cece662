//! E-process kernels.
//!
//! Each kernel is an online accumulator: feed it observations one at a time with
//! [`EProcessState::update`] and read `log E_n` back. A [`KernelConfig`] names the
//! test and its parameters; [`PreparedKernel`] binds it to a level α and holds
//! lookup tables shared by every trajectory of an experiment.
//!
//! The LIL confidence test is not an e-process. Its state stores the lower
//! confidence margin `L_n(α)` in the `log_e` slot and stops when it turns
//! positive, so it still fits the common stopping interface.

use std::fmt;
use std::sync::Arc;

use crate::distributions::{Dist, ATOM_TOLERANCE};
use crate::error::{Error, Result};
use crate::klinf::{maximize_log_dual, solve_weighted, DualRange};

/// Default LIL boundary constants `(c1, c2, c3)`.
pub const DEFAULT_LIL_CONSTANTS: (f64, f64, f64) = (1.7, 2.0, 5.2);

/// Default multiplier in the doubling test's penalty `R_n = c ln(1 + log2(2n))`.
pub const DEFAULT_R_N_CONST: f64 = 3.0;

/// Default quadrature nodes per axis for constraint mixtures.
pub const DEFAULT_QUADRATURE_NODES: usize = 1025;

/// Tables are precomputed up to this many samples; beyond it values are computed directly.
const MAX_TABLE_LEN: u64 = 1 << 22;

/// The seven supported test families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    LikelihoodRatio,
    NumeraireSubGaussian,
    MixtureSubGaussian,
    KLinfEmpirical,
    TildeKLinfDH,
    LILConfidence,
    ConstraintMixture,
}

impl KernelKind {
    pub const ALL: [KernelKind; 7] = [
        KernelKind::LikelihoodRatio,
        KernelKind::NumeraireSubGaussian,
        KernelKind::MixtureSubGaussian,
        KernelKind::KLinfEmpirical,
        KernelKind::TildeKLinfDH,
        KernelKind::LILConfidence,
        KernelKind::ConstraintMixture,
    ];

    /// Short name used on the command line and in CSV output.
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::LikelihoodRatio => "lr",
            KernelKind::NumeraireSubGaussian => "numeraire",
            KernelKind::MixtureSubGaussian => "mixture",
            KernelKind::KLinfEmpirical => "klinf-empirical",
            KernelKind::TildeKLinfDH => "tilde-dh",
            KernelKind::LILConfidence => "lil",
            KernelKind::ConstraintMixture => "constraint-mixture",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Stable identifier mixed into replication seeds.
    pub fn id(self) -> u64 {
        match self {
            KernelKind::LikelihoodRatio => 1,
            KernelKind::NumeraireSubGaussian => 2,
            KernelKind::MixtureSubGaussian => 3,
            KernelKind::KLinfEmpirical => 4,
            KernelKind::TildeKLinfDH => 5,
            KernelKind::LILConfidence => 6,
            KernelKind::ConstraintMixture => 7,
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A real-valued constraint function on the sample space.
pub type ConstraintFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Constraint functions `φ_1..φ_K` (K ≤ 2) and an axis-aligned box of multipliers.
///
/// Each multiplier `π` in the box defines the e-variable `S^π(x) = 1 + Σ π_i φ_i(x)`.
#[derive(Clone)]
pub struct ConstraintSystem {
    functions: Vec<ConstraintFn>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    nodes_per_axis: usize,
}

impl fmt::Debug for ConstraintSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSystem")
            .field("dimension", &self.functions.len())
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("nodes_per_axis", &self.nodes_per_axis)
            .finish()
    }
}

impl ConstraintSystem {
    /// Probe points on `[0, 1]` used to check `S^π ≥ 0` at the box corners.
    const PROBES: usize = 101;

    pub fn new(
        functions: Vec<ConstraintFn>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        nodes_per_axis: usize,
    ) -> Result<Self> {
        let k = functions.len();
        if !(1..=2).contains(&k) {
            return Err(Error::InvalidConfig(format!(
                "constraint systems need 1 or 2 functions, got {k}"
            )));
        }
        if lower.len() != k || upper.len() != k {
            return Err(Error::InvalidConfig("box dimension does not match the constraints".into()));
        }
        for (&lo, &hi) in lower.iter().zip(&upper) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidConfig(format!("empty multiplier box [{lo}, {hi}]")));
            }
        }
        if nodes_per_axis == 0 {
            return Err(Error::InvalidConfig("quadrature needs at least one node".into()));
        }
        let sys = Self {
            functions,
            lower,
            upper,
            nodes_per_axis,
        };
        for i in 0..Self::PROBES {
            let x = i as f64 / (Self::PROBES - 1) as f64;
            for corner in sys.corners() {
                let s = sys.s_value(&corner, x);
                if !(s >= 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "S at multiplier {corner:?} is {s} < 0 at x = {x}"
                    )));
                }
            }
        }
        Ok(sys)
    }

    /// One-dimensional system `φ(x) = x − m0` for testing a bounded mean.
    pub fn mean_constraint(m0: f64, lower: f64, upper: f64) -> Result<Self> {
        Self::new(
            vec![Arc::new(move |x| x - m0)],
            vec![lower],
            vec![upper],
            DEFAULT_QUADRATURE_NODES,
        )
    }

    pub fn with_nodes(mut self, nodes_per_axis: usize) -> Result<Self> {
        if nodes_per_axis == 0 {
            return Err(Error::InvalidConfig("quadrature needs at least one node".into()));
        }
        self.nodes_per_axis = nodes_per_axis;
        Ok(self)
    }

    pub fn dimension(&self) -> usize {
        self.functions.len()
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes_per_axis
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }

    pub fn phi(&self, x: f64) -> Vec<f64> {
        self.functions.iter().map(|f| f(x)).collect()
    }

    /// `S^π(x) = 1 + Σ π_i φ_i(x)`.
    pub fn s_value(&self, pi: &[f64], x: f64) -> f64 {
        1.0 + self.functions.iter().zip(pi).map(|(f, p)| p * f(x)).sum::<f64>()
    }

    fn corners(&self) -> Vec<Vec<f64>> {
        let k = self.dimension();
        (0..1usize << k)
            .map(|mask| {
                (0..k)
                    .map(|i| if mask >> i & 1 == 0 { self.lower[i] } else { self.upper[i] })
                    .collect()
            })
            .collect()
    }

    fn axis_nodes(&self, axis: usize) -> Vec<f64> {
        let (lo, hi) = (self.lower[axis], self.upper[axis]);
        let h = (hi - lo) / self.nodes_per_axis as f64;
        (0..self.nodes_per_axis).map(|j| lo + (j as f64 + 0.5) * h).collect()
    }

    /// Midpoint nodes of the box in row-major order.
    pub fn nodes(&self) -> Vec<Vec<f64>> {
        match self.dimension() {
            1 => self.axis_nodes(0).into_iter().map(|p| vec![p]).collect(),
            _ => {
                let (a, b) = (self.axis_nodes(0), self.axis_nodes(1));
                a.iter()
                    .flat_map(|&p| b.iter().map(move |&q| vec![p, q]))
                    .collect()
            }
        }
    }

    /// `ln S^π(x)` at every node, `−∞` where `S^π(x) ≤ 0`.
    fn log_s_table(&self, x: f64) -> Vec<f64> {
        let phi = self.phi(x);
        let log_s = |s: f64| if s > 0.0 { s.ln() } else { f64::NEG_INFINITY };
        match self.dimension() {
            1 => self
                .axis_nodes(0)
                .into_iter()
                .map(|p| log_s(1.0 + p * phi[0]))
                .collect(),
            _ => {
                let (a, b) = (self.axis_nodes(0), self.axis_nodes(1));
                let mut out = Vec::with_capacity(a.len() * b.len());
                for &p in &a {
                    for &q in &b {
                        out.push(log_s(1.0 + p * phi[0] + q * phi[1]));
                    }
                }
                out
            }
        }
    }
}

/// A test family together with its parameters.
#[derive(Debug, Clone)]
pub enum KernelConfig {
    /// Product of `dQ/dP`; unit-variance Gaussian pairs or discrete pairs with `Q ≪ P`.
    LikelihoodRatio { p: Dist, q: Dist },
    /// Growth-optimal e-variable `exp(m x − m²/2)` against `N(m, 1)`.
    NumeraireSubGaussian { m: f64 },
    /// Gaussian-prior mixture `sqrt(1/(n+1)) exp(S_n² / (2(n+1)))`.
    MixtureSubGaussian,
    /// `exp(n KL_inf(F_n, m0) − ln n)` for the bounded-mean null.
    KLinfEmpirical { m0: f64 },
    /// Restricted dual on the doubling prefix, penalised by `R_n = c ln(1 + log2(2n))`.
    TildeKLinfDH { m0: f64, r_n_const: f64 },
    /// Lower confidence bound `S_n/n − c1 sqrt((ln ln(c2 n) + ln(c3/α))/n)`.
    LILConfidence { c1: f64, c2: f64, c3: f64 },
    /// Uniform-prior mixture of `Π S^π(X_i)` over the multiplier box.
    ConstraintMixture(ConstraintSystem),
}

impl KernelConfig {
    pub fn kind(&self) -> KernelKind {
        match self {
            KernelConfig::LikelihoodRatio { .. } => KernelKind::LikelihoodRatio,
            KernelConfig::NumeraireSubGaussian { .. } => KernelKind::NumeraireSubGaussian,
            KernelConfig::MixtureSubGaussian => KernelKind::MixtureSubGaussian,
            KernelConfig::KLinfEmpirical { .. } => KernelKind::KLinfEmpirical,
            KernelConfig::TildeKLinfDH { .. } => KernelKind::TildeKLinfDH,
            KernelConfig::LILConfidence { .. } => KernelKind::LILConfidence,
            KernelConfig::ConstraintMixture(_) => KernelKind::ConstraintMixture,
        }
    }

    pub fn tilde_dh(m0: f64) -> Self {
        KernelConfig::TildeKLinfDH {
            m0,
            r_n_const: DEFAULT_R_N_CONST,
        }
    }

    pub fn lil_default() -> Self {
        let (c1, c2, c3) = DEFAULT_LIL_CONSTANTS;
        KernelConfig::LILConfidence { c1, c2, c3 }
    }

    fn validate(&self) -> Result<()> {
        let open_unit = |name: &'static str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::domain(name, v, "must lie in (0, 1)"))
            }
        };
        match self {
            KernelConfig::LikelihoodRatio { .. } => Ok(()),
            KernelConfig::NumeraireSubGaussian { m } => {
                if *m > 0.0 && m.is_finite() {
                    Ok(())
                } else {
                    Err(Error::domain("m", *m, "numeraire alternative mean must be positive"))
                }
            }
            KernelConfig::MixtureSubGaussian => Ok(()),
            KernelConfig::KLinfEmpirical { m0 } => open_unit("m0", *m0),
            KernelConfig::TildeKLinfDH { m0, r_n_const } => {
                open_unit("m0", *m0)?;
                if *r_n_const >= 0.0 && r_n_const.is_finite() {
                    Ok(())
                } else {
                    Err(Error::domain("r_n_const", *r_n_const, "must be nonnegative"))
                }
            }
            KernelConfig::LILConfidence { c1, c2, c3 } => {
                for (name, v) in [("c1", *c1), ("c2", *c2), ("c3", *c3)] {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(Error::domain(name, v, "LIL constants must be positive"));
                    }
                }
                Ok(())
            }
            KernelConfig::ConstraintMixture(_) => Ok(()),
        }
    }
}

/// Log-likelihood-ratio model of the LR kernel.
#[derive(Debug, Clone)]
enum LrModel {
    /// `log dQ/dP(x) = slope·x + offset`.
    Gaussian { slope: f64, offset: f64 },
    /// Sorted support of `P` with `ln(q/p)` per atom.
    Discrete { atoms: Vec<f64>, log_ratio: Vec<f64> },
}

impl LrModel {
    fn new(p: &Dist, q: &Dist) -> Result<Self> {
        match (p, q) {
            (Dist::Gaussian(p), Dist::Gaussian(q)) => {
                if p.variance() != 1.0 || q.variance() != 1.0 {
                    return Err(Error::UnsupportedPair(
                        "likelihood ratios need unit-variance Gaussians".into(),
                    ));
                }
                let (mp, mq) = (p.mean(), q.mean());
                Ok(LrModel::Gaussian {
                    slope: mq - mp,
                    offset: -(mq * mq - mp * mp) / 2.0,
                })
            }
            (Dist::Discrete(p), Dist::Discrete(q)) => {
                for &a in q.atoms() {
                    if p.mass_at(a) == 0.0 {
                        return Err(Error::UnsupportedPair(format!(
                            "Q has an atom at {a} outside the support of P"
                        )));
                    }
                }
                let log_ratio = p
                    .atoms()
                    .iter()
                    .zip(p.weights())
                    .map(|(&a, &w)| {
                        let qa = q.mass_at(a);
                        if qa == 0.0 {
                            f64::NEG_INFINITY
                        } else {
                            (qa / w).ln()
                        }
                    })
                    .collect();
                Ok(LrModel::Discrete {
                    atoms: p.atoms().to_vec(),
                    log_ratio,
                })
            }
            _ => Err(Error::UnsupportedPair(
                "likelihood ratio between a Gaussian and a discrete distribution".into(),
            )),
        }
    }

    fn increment(&self, x: f64) -> f64 {
        match self {
            LrModel::Gaussian { slope, offset } => slope * x + offset,
            LrModel::Discrete { atoms, log_ratio } => match find_atom(atoms, x) {
                Some(i) => log_ratio[i],
                None => f64::INFINITY,
            },
        }
    }
}

fn find_atom(atoms: &[f64], x: f64) -> Option<usize> {
    let i = atoms.partition_point(|&a| a < x - ATOM_TOLERANCE);
    (i < atoms.len() && (atoms[i] - x).abs() <= ATOM_TOLERANCE).then_some(i)
}

/// A kernel bound to a level α, with tables shared across trajectories.
#[derive(Debug)]
pub struct PreparedKernel {
    config: KernelConfig,
    alpha: f64,
    log_threshold: f64,
    lr: Option<LrModel>,
    /// Per-`n` penalty or boundary term, indexed by `n` (entry 0 unused).
    table: Vec<f64>,
}

impl PreparedKernel {
    /// Validates `config` and precomputes per-`n` terms up to `horizon` samples.
    pub fn new(config: KernelConfig, alpha: f64, horizon: u64) -> Result<Arc<Self>> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::domain("alpha", alpha, "must lie in (0, 1]"));
        }
        config.validate()?;
        let lr = match &config {
            KernelConfig::LikelihoodRatio { p, q } => Some(LrModel::new(p, q)?),
            _ => None,
        };
        let mut kernel = Self {
            config,
            alpha,
            log_threshold: -alpha.ln(),
            lr,
            table: Vec::new(),
        };
        if matches!(
            kernel.config.kind(),
            KernelKind::MixtureSubGaussian
                | KernelKind::KLinfEmpirical
                | KernelKind::TildeKLinfDH
                | KernelKind::LILConfidence
        ) {
            let len = horizon.min(MAX_TABLE_LEN) + 1;
            kernel.table = (0..len).map(|n| kernel.per_n_term(n)).collect();
        }
        Ok(Arc::new(kernel))
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn kind(&self) -> KernelKind {
        self.config.kind()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `ln(1/α)`.
    pub fn log_threshold(&self) -> f64 {
        self.log_threshold
    }

    /// The `n`-dependent term of each kernel: `ln(n+1)`, `ln n`, `R_n` or the LIL radius.
    fn per_n_term(&self, n: u64) -> f64 {
        let nf = n as f64;
        match &self.config {
            KernelConfig::MixtureSubGaussian => (nf + 1.0).ln(),
            KernelConfig::KLinfEmpirical { .. } => nf.ln(),
            KernelConfig::TildeKLinfDH { r_n_const, .. } => r_n_const * (2.0 * nf).log2().ln_1p(),
            KernelConfig::LILConfidence { c1, c2, c3 } => {
                c1 * lil_radius(n, self.alpha, *c2, *c3)
            }
            _ => 0.0,
        }
    }

    fn term(&self, n: u64) -> f64 {
        match self.table.get(n as usize) {
            Some(&v) => v,
            None => self.per_n_term(n),
        }
    }
}

/// `sqrt((ln ln(c2 n) + ln(c3/α)) / n)`, or `+∞` while `c2 n ≤ e`.
fn lil_radius(n: u64, alpha: f64, c2: f64, c3: f64) -> f64 {
    let nf = n as f64;
    if c2 * nf <= std::f64::consts::E {
        return f64::INFINITY;
    }
    (((c2 * nf).ln().ln() + (c3 / alpha).ln()) / nf).sqrt()
}

/// Empirical distribution kept as sorted distinct atoms with counts.
#[derive(Debug, Clone, Default)]
struct AtomCounts {
    atoms: Vec<f64>,
    counts: Vec<f64>,
}

impl AtomCounts {
    fn add(&mut self, x: f64) {
        let i = self.atoms.partition_point(|&a| a < x - ATOM_TOLERANCE);
        if i < self.atoms.len() && (self.atoms[i] - x).abs() <= ATOM_TOLERANCE {
            self.counts[i] += 1.0;
        } else {
            self.atoms.insert(i, x);
            self.counts.insert(i, 1.0);
        }
    }
}

/// Per-distinct-value data of the constraint mixture.
#[derive(Debug, Clone)]
struct ConstraintObs {
    x: f64,
    count: f64,
    phi: f64,
    log_s: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Stats {
    None,
    Empirical {
        table: AtomCounts,
        lambda: Option<f64>,
    },
    Doubling {
        table: AtomCounts,
        statistic: f64,
    },
    Constraint {
        obs: Vec<ConstraintObs>,
        lambda: Option<f64>,
        bound: f64,
    },
}

/// Running state of one trajectory.
#[derive(Debug, Clone)]
pub struct EProcessState {
    kernel: Arc<PreparedKernel>,
    n: u64,
    log_e: f64,
    stats: Stats,
    sum: f64,
}

impl EProcessState {
    pub fn new(kernel: &Arc<PreparedKernel>) -> Self {
        let stats = match kernel.kind() {
            KernelKind::LikelihoodRatio
            | KernelKind::NumeraireSubGaussian
            | KernelKind::MixtureSubGaussian
            | KernelKind::LILConfidence => Stats::None,
            KernelKind::KLinfEmpirical => Stats::Empirical {
                table: AtomCounts::default(),
                lambda: None,
            },
            KernelKind::TildeKLinfDH => Stats::Doubling {
                table: AtomCounts::default(),
                statistic: 0.0,
            },
            KernelKind::ConstraintMixture => Stats::Constraint {
                obs: Vec::new(),
                lambda: None,
                bound: 0.0,
            },
        };
        let log_e = if kernel.kind() == KernelKind::LILConfidence {
            f64::NEG_INFINITY
        } else {
            0.0
        };
        Self {
            kernel: Arc::clone(kernel),
            n: 0,
            log_e,
            stats,
            sum: 0.0,
        }
    }

    pub fn kind(&self) -> KernelKind {
        self.kernel.kind()
    }

    pub fn kernel(&self) -> &Arc<PreparedKernel> {
        &self.kernel
    }

    /// Number of observations absorbed so far.
    pub fn n(&self) -> u64 {
        self.n
    }

    /// Running sum of observations.
    pub fn sum(&self) -> f64 {
        self.sum
    }

    /// The current doubling statistic (restricted dual on the first `2^⌊log2 n⌋` samples).
    pub fn dh_statistic(&self) -> Option<f64> {
        match &self.stats {
            Stats::Doubling { statistic, .. } => Some(*statistic),
            _ => None,
        }
    }

    /// Absorbs one observation.
    pub fn update(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        let n = self.n;
        let nf = n as f64;
        let kernel = &*self.kernel;
        match (&kernel.config, &mut self.stats) {
            (KernelConfig::LikelihoodRatio { .. }, _) => {
                let inc = kernel.lr.as_ref().expect("prepared LR model").increment(x);
                self.log_e += inc;
            }
            (KernelConfig::NumeraireSubGaussian { m }, _) => {
                self.log_e += numeraire_increment(*m, x);
            }
            (KernelConfig::MixtureSubGaussian, _) => {
                let s = self.sum;
                self.log_e = -0.5 * kernel.term(n) + s * s / (2.0 * (nf + 1.0));
            }
            (KernelConfig::LILConfidence { .. }, _) => {
                self.log_e = self.sum / nf - kernel.term(n);
            }
            (KernelConfig::KLinfEmpirical { m0 }, Stats::Empirical { table, lambda }) => {
                table.add(x);
                let sol = solve_weighted(&table.atoms, &table.counts, *m0, DualRange::Full, *lambda)
                    .expect("m0 validated at preparation");
                *lambda = Some(sol.lambda_star);
                self.log_e = nf * sol.value - kernel.term(n);
            }
            (KernelConfig::TildeKLinfDH { m0, .. }, Stats::Doubling { table, statistic }) => {
                table.add(x);
                if n.is_power_of_two() {
                    *statistic = solve_weighted(&table.atoms, &table.counts, *m0, DualRange::Tilde, None)
                        .expect("m0 validated at preparation")
                        .value;
                }
                self.log_e = nf * *statistic - kernel.term(n);
            }
            (KernelConfig::ConstraintMixture(sys), Stats::Constraint { obs, lambda, bound }) => {
                match obs.iter_mut().find(|o| (o.x - x).abs() <= ATOM_TOLERANCE) {
                    Some(o) => o.count += 1.0,
                    None => {
                        let phi = sys.phi(x);
                        obs.push(ConstraintObs {
                            x,
                            count: 1.0,
                            phi: phi[0],
                            log_s: sys.log_s_table(x),
                        })
                    }
                }
                *bound = constraint_upper_bound(sys, obs, lambda);
            }
            _ => unreachable!("state layout matches its kernel"),
        }
    }

    /// `log E_n` (for the LIL kernel, the margin `L_n(α)`).
    ///
    /// Exact for every kernel; the constraint mixture evaluates its quadrature
    /// here, which costs one pass over the node grid.
    pub fn log_e(&self) -> f64 {
        match (&self.kernel.config, &self.stats) {
            (KernelConfig::ConstraintMixture(sys), Stats::Constraint { obs, .. }) => {
                constraint_log_e(sys, obs)
            }
            _ => self.log_e,
        }
    }

    /// A cheap upper bound on [`log_e`](Self::log_e); equal to it except for the
    /// one-dimensional constraint mixture.
    pub fn log_e_upper(&self) -> f64 {
        match &self.stats {
            Stats::Constraint { bound, .. } => *bound,
            _ => self.log_e,
        }
    }

    /// Whether the stopping rule fires at the current `n`.
    pub fn crossed(&self) -> bool {
        let thr = self.kernel.log_threshold;
        match self.kind() {
            KernelKind::LILConfidence => self.log_e > 0.0,
            KernelKind::ConstraintMixture => self.log_e_upper() >= thr && self.log_e() >= thr,
            _ => self.log_e >= thr,
        }
    }
}

/// Upper bound on the constraint-mixture `log E_n` from the concave exponent.
///
/// With `L(π) = Σ c_v ln S^π(v)` maximised at `π*` and curvature at least `κ`
/// on the box, each node value is below `exp(L* − κ(π − π*)²/2)`; the midpoint
/// average of that Gaussian envelope is below `exp(L*)(sqrt(2π/κ)/W + 2/N)`.
/// Only the one-dimensional case is bounded; otherwise `+∞` is returned.
fn constraint_upper_bound(sys: &ConstraintSystem, obs: &[ConstraintObs], lambda: &mut Option<f64>) -> f64 {
    if sys.dimension() != 1 {
        return f64::INFINITY;
    }
    let (lo, hi) = (sys.lower[0], sys.upper[0]);
    let phi: Vec<f64> = obs.iter().map(|o| o.phi).collect();
    let counts: Vec<f64> = obs.iter().map(|o| o.count).collect();
    let total: f64 = counts.iter().sum();
    let sol = maximize_log_dual(&phi, &counts, lo, hi, *lambda);
    *lambda = Some(sol.lambda_star);
    let peak = total * sol.value;
    let kappa: f64 = obs
        .iter()
        .map(|o| {
            let top = 1.0 + (lo * o.phi).max(hi * o.phi);
            o.count * o.phi * o.phi / (top * top)
        })
        .sum();
    let width = hi - lo;
    let n_nodes = sys.nodes_per_axis as f64;
    let spread = ((2.0 * std::f64::consts::PI / kappa).sqrt() / width + 2.0 / n_nodes).ln();
    peak + spread.min(0.0)
}

fn constraint_log_e(sys: &ConstraintSystem, obs: &[ConstraintObs]) -> f64 {
    let n_nodes = sys.nodes_per_axis.pow(sys.dimension() as u32);
    if obs.is_empty() {
        return 0.0;
    }
    let mut acc = vec![0.0; n_nodes];
    for o in obs {
        for (a, &l) in acc.iter_mut().zip(&o.log_s) {
            *a += o.count * l;
        }
    }
    log_sum_exp(&acc) - (n_nodes as f64).ln()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Numeraire log-increment `m x − m²/2`.
pub fn numeraire_increment(m: f64, x: f64) -> f64 {
    m * x - 0.5 * m * m
}

/// Closed-form `log E_n` of the Gaussian mixture: `−½ ln(n+1) + n² m̂² / (2(n+1))`.
pub fn mixture_subgaussian_value(n: u64, running_mean: f64) -> f64 {
    let nf = n as f64;
    let s = nf * running_mean;
    -0.5 * (nf + 1.0).ln() + s * s / (2.0 * (nf + 1.0))
}

/// `n KL_inf(F_n, m0) − ln n` for the sample `prefix`.
pub fn klinf_empirical_value(prefix: &[f64], m0: f64) -> Result<f64> {
    if prefix.is_empty() {
        return Err(Error::InvalidConfig("empirical KL_inf needs at least one sample".into()));
    }
    let f = crate::distributions::empirical(prefix)?;
    let n = prefix.len() as f64;
    Ok(n * crate::klinf::klinf_bounded(&f, m0)?.value - n.ln())
}

/// Doubling statistic at time `n` and its stopping decision.
///
/// The statistic is the restricted dual of the first `2^⌊log2 n⌋` samples; the
/// test stops when `n·statistic − c ln(1 + log2(2n)) ≥ ln(1/α)`.
pub fn tilde_dh_value(prefix: &[f64], n: u64, m0: f64, alpha: f64, r_n_const: f64) -> Result<(f64, bool)> {
    if n == 0 {
        return Err(Error::domain("n", 0.0, "must be at least 1"));
    }
    let k = 1usize << (63 - n.leading_zeros());
    if prefix.len() < k {
        return Err(Error::InvalidConfig(format!(
            "doubling statistic at n = {n} needs {k} samples, got {}",
            prefix.len()
        )));
    }
    let f = crate::distributions::empirical(&prefix[..k])?;
    let stat = crate::klinf::klinf_tilde(&f, m0)?.value;
    let nf = n as f64;
    let r_n = r_n_const * (2.0 * nf).log2().ln_1p();
    Ok((stat, nf * stat - r_n >= -alpha.ln()))
}

/// LIL lower confidence bound `m̂ − c1 sqrt((ln ln(c2 n) + ln(c3/α))/n)`; `−∞` while `c2 n ≤ e`.
pub fn lil_lower_bound(n: u64, running_mean: f64, alpha: f64, c1: f64, c2: f64, c3: f64) -> f64 {
    running_mean - c1 * lil_radius(n, alpha, c2, c3)
}

/// Quadrature value of the uniform-prior constraint mixture on `prefix`.
pub fn constraint_mixture_value(system: &ConstraintSystem, prefix: &[f64]) -> f64 {
    let mut obs: Vec<ConstraintObs> = Vec::new();
    for &x in prefix {
        match obs.iter_mut().find(|o| (o.x - x).abs() <= ATOM_TOLERANCE) {
            Some(o) => o.count += 1.0,
            None => obs.push(ConstraintObs {
                x,
                count: 1.0,
                phi: system.phi(x)[0],
                log_s: system.log_s_table(x),
            }),
        }
    }
    constraint_log_e(system, &obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{DiscreteBoundedDist, GaussianDist};
    use approx::assert_abs_diff_eq;

    fn state(config: KernelConfig, alpha: f64) -> EProcessState {
        EProcessState::new(&PreparedKernel::new(config, alpha, 1000).unwrap())
    }

    fn gauss(m: f64) -> Dist {
        GaussianDist::unit(m).unwrap().into()
    }

    #[test]
    fn lr_gaussian_increments() {
        let cfg = KernelConfig::LikelihoodRatio {
            p: gauss(0.0),
            q: gauss(1.0),
        };
        let mut s = state(cfg, 0.05);
        s.update(0.5);
        assert_eq!(s.log_e(), 0.0);
        s.update(1.0);
        assert_abs_diff_eq!(s.log_e().exp(), 1.648_721_270_700_128, epsilon = 1e-14);
    }

    #[test]
    fn lr_discrete_support() {
        let p: Dist = DiscreteBoundedDist::new(vec![0.0, 0.5, 1.0], vec![0.25, 0.25, 0.5]).unwrap().into();
        let q: Dist = DiscreteBoundedDist::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap().into();
        let mut s = state(KernelConfig::LikelihoodRatio { p: p.clone(), q: q.clone() }, 0.05);
        s.update(0.0);
        assert_abs_diff_eq!(s.log_e(), std::f64::consts::LN_2, epsilon = 1e-15);
        s.update(0.3);
        assert_eq!(s.log_e(), f64::INFINITY);

        // Q not absolutely continuous w.r.t. P
        assert!(matches!(
            PreparedKernel::new(KernelConfig::LikelihoodRatio { p: q, q: p }, 0.05, 10),
            Err(Error::UnsupportedPair(_))
        ));
        let cfg = KernelConfig::LikelihoodRatio {
            p: gauss(0.0),
            q: GaussianDist::new(1.0, 2.0).unwrap().into(),
        };
        assert!(PreparedKernel::new(cfg, 0.05, 10).is_err());
    }

    #[test]
    fn numeraire_increments() {
        assert_eq!(numeraire_increment(0.5, 0.25), 0.0);
        assert_abs_diff_eq!(numeraire_increment(0.5, 1.0).exp(), 1.454_991_414_618_201, epsilon = 1e-14);
        assert!(PreparedKernel::new(KernelConfig::NumeraireSubGaussian { m: 0.0 }, 0.05, 10).is_err());
    }

    #[test]
    fn mixture_closed_form() {
        assert_eq!(mixture_subgaussian_value(0, 0.0), 0.0);
        assert_abs_diff_eq!(mixture_subgaussian_value(1, 0.0).exp(), 0.707_106_781_186_548, epsilon = 1e-14);
        assert_abs_diff_eq!(mixture_subgaussian_value(4, 0.5).exp(), 0.667_164_286_887_79, epsilon = 1e-13);

        let mut s = state(KernelConfig::MixtureSubGaussian, 0.05);
        for x in [0.3, -0.1, 1.2, 0.6] {
            s.update(x);
        }
        assert_abs_diff_eq!(s.log_e(), mixture_subgaussian_value(4, 0.5), epsilon = 1e-14);
    }

    #[test]
    fn klinf_empirical_examples() {
        let v = klinf_empirical_value(&[0.2], 0.5).unwrap();
        let direct = crate::klinf::klinf_bounded(&DiscreteBoundedDist::point_mass(0.2).unwrap(), 0.5)
            .unwrap()
            .value;
        assert_abs_diff_eq!(v, direct, epsilon = 1e-15);
        assert_abs_diff_eq!(klinf_empirical_value(&[0.5; 7], 0.5).unwrap(), -(7f64.ln()), epsilon = 1e-14);
        assert_abs_diff_eq!(
            klinf_empirical_value(&[0.0; 4], 0.5).unwrap(),
            1.386_294_361_119_89,
            epsilon = 1e-13
        );
    }

    #[test]
    fn klinf_empirical_state_matches_batch() {
        let xs = [0.1, 0.9, 0.4, 0.4, 1.0, 0.0, 0.25, 0.4, 0.7, 0.05];
        let mut s = state(KernelConfig::KLinfEmpirical { m0: 0.6 }, 0.05);
        for (i, &x) in xs.iter().enumerate() {
            s.update(x);
            let batch = klinf_empirical_value(&xs[..=i], 0.6).unwrap();
            assert_abs_diff_eq!(s.log_e(), batch, epsilon = 1e-11);
        }
    }

    #[test]
    fn doubling_statistic_is_piecewise_constant() {
        let xs: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64 / 10.0).collect();
        let mut s = state(KernelConfig::tilde_dh(0.5), 0.05);
        let mut stats = Vec::new();
        for &x in &xs {
            s.update(x);
            stats.push(s.dh_statistic().unwrap());
        }
        for n in 1..=xs.len() as u64 {
            let (stat, _) = tilde_dh_value(&xs, n, 0.5, 0.05, DEFAULT_R_N_CONST).unwrap();
            assert_abs_diff_eq!(stats[n as usize - 1], stat, epsilon = 1e-14);
        }
        assert!(stats[3..7].iter().all(|&v| v == stats[3]));
        assert!(stats[16..31].iter().all(|&v| v == stats[16]));
    }

    #[test]
    fn doubling_statistic_eight_samples() {
        let xs = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let (stat, _) = tilde_dh_value(&xs, 8, 0.6, 0.05, DEFAULT_R_N_CONST).unwrap();
        // grid search over λ ∈ [-1, 1]
        let obj = |l: f64| 0.75 * (0.6 * l).ln_1p() + 0.25 * (-0.4 * l).ln_1p();
        let grid = (0..=200_000).map(|i| obj(-1.0 + i as f64 * 1e-5)).fold(f64::MIN, f64::max);
        assert_abs_diff_eq!(stat, grid, epsilon = 1e-10);
        assert_abs_diff_eq!(stat, 0.224_796_315_992_804, epsilon = 1e-13);
        let (s1, _) = tilde_dh_value(&xs, 1, 0.6, 0.05, DEFAULT_R_N_CONST).unwrap();
        assert_abs_diff_eq!(s1, (0.6f64).ln_1p(), epsilon = 1e-15);
    }

    #[test]
    fn lil_examples() {
        let l = lil_lower_bound(100, 0.5, 0.05, 1.7, 2.0, 5.2);
        assert_abs_diff_eq!(l, 0.072_904_638_835_688_3, epsilon = 1e-13);
        assert!(lil_lower_bound(1000, 0.0, 0.05, 1.7, 2.0, 5.2) < 0.0);
        assert_eq!(lil_lower_bound(1, 0.5, 0.05, 1.7, 2.0, 5.2), f64::NEG_INFINITY);
        let mut prev = f64::INFINITY;
        for n in 3..5000 {
            let u = lil_radius(n, 0.05, 2.0, 5.2);
            assert!(u < prev);
            prev = u;
        }

        let mut s = state(KernelConfig::lil_default(), 0.05);
        for _ in 0..100 {
            s.update(0.5);
        }
        assert_abs_diff_eq!(s.log_e(), 0.072_904_638_835_688_3, epsilon = 1e-12);
        assert!(s.crossed());
    }

    #[test]
    fn constraint_mixture_examples() {
        let sys = ConstraintSystem::mean_constraint(0.5, -1.0, 1.0).unwrap();
        assert_eq!(constraint_mixture_value(&sys, &[]), 0.0);
        assert_abs_diff_eq!(constraint_mixture_value(&sys, &[0.5]), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(constraint_mixture_value(&sys, &[0.0]), 0.0, epsilon = 1e-6);
        // ∫ (1 - π/2)^2 dπ / 2 over [-1, 1] = 1 + 1/12
        assert_abs_diff_eq!(
            constraint_mixture_value(&sys, &[0.0, 0.0]),
            (13.0f64 / 12.0).ln(),
            epsilon = 1e-6
        );
        assert!(ConstraintSystem::mean_constraint(0.5, -3.0, 1.0).is_err());
    }

    #[test]
    fn constraint_gate_bounds_exact_value() {
        let sys = ConstraintSystem::mean_constraint(0.5, -1.0, 1.0).unwrap();
        let mut s = state(KernelConfig::ConstraintMixture(sys), 0.05);
        let xs = [0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        for &x in xs.iter().cycle().take(600) {
            s.update(x);
            assert!(s.log_e_upper() >= s.log_e() - 1e-12, "n = {}", s.n());
        }
    }

    #[test]
    fn two_dimensional_constraints() {
        let funcs: Vec<ConstraintFn> = vec![Arc::new(|x| x - 0.5), Arc::new(|x| x * x - 1.0 / 3.0)];
        let sys = ConstraintSystem::new(funcs, vec![-0.5, -0.5], vec![0.5, 0.5], 33).unwrap();
        assert_eq!(sys.nodes().len(), 33 * 33);
        // S is affine in π, so the midpoint average of one sample is exact.
        let x = 0.9;
        let v = constraint_mixture_value(&sys, &[x]);
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        let mut s = state(KernelConfig::ConstraintMixture(sys), 0.05);
        s.update(x);
        s.update(0.1);
        assert!(s.log_e().is_finite());
        assert_eq!(s.log_e_upper(), f64::INFINITY);
    }
}

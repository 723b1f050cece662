//! Distribution models, seeded sampling and exact KL divergences.
//!
//! Two families are supported: finitely supported distributions on `[0, 1]`
//! ([`DiscreteBoundedDist`], which also holds empirical distributions) and
//! univariate Gaussians ([`GaussianDist`]). Sampling goes through a
//! [`SeededStream`], a counter-based generator keyed by a master seed and a
//! replication index, so parallel replications stay reproducible.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Atoms closer than this are merged into one.
pub const ATOM_TOLERANCE: f64 = 1e-12;

/// Accepted deviation of user-supplied weights from a unit sum before renormalising.
const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Weighted atoms on `[0, 1]`, sorted ascending with strictly positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteBoundedDist {
    atoms: Vec<f64>,
    weights: Vec<f64>,
    cdf: Vec<f64>,
}

impl DiscreteBoundedDist {
    /// Builds a distribution from atoms and weights.
    ///
    /// Atoms are sorted and merged within [`ATOM_TOLERANCE`]; zero-weight atoms
    /// are dropped. Weights must sum to one up to `1e-9` and are renormalised.
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() {
            return Err(Error::InvalidConfig(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if atoms.is_empty() {
            return Err(Error::InvalidConfig("distribution has no atoms".into()));
        }
        for &a in &atoms {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::domain("atom", a, "atoms must lie in [0, 1]"));
            }
        }
        for &w in &weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::domain("weight", w, "weights must be finite and nonnegative"));
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::domain("weight sum", total, "weights must sum to 1"));
        }
        Ok(Self::from_pairs(atoms.into_iter().zip(weights).collect()))
    }

    /// Builds from unnormalised (atom, mass) pairs; masses are rescaled to sum to one.
    fn from_pairs(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut atoms: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut mass: Vec<f64> = Vec::with_capacity(pairs.len());
        for (a, w) in pairs {
            match atoms.last() {
                Some(&last) if (a - last).abs() <= ATOM_TOLERANCE => {
                    *mass.last_mut().unwrap() += w;
                }
                _ => {
                    atoms.push(a);
                    mass.push(w);
                }
            }
        }
        let total: f64 = mass.iter().sum();
        let (atoms, weights): (Vec<f64>, Vec<f64>) = atoms
            .into_iter()
            .zip(mass)
            .filter(|&(_, w)| w > 0.0)
            .map(|(a, w)| (a, w / total))
            .unzip();
        let mut cdf = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for &w in &weights {
            acc += w;
            cdf.push(acc);
        }
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        Self {
            atoms,
            weights,
            cdf,
        }
    }

    /// Point mass at `x`.
    pub fn point_mass(x: f64) -> Result<Self> {
        Self::new(vec![x], vec![1.0])
    }

    /// Bernoulli(`p`) as atoms `{0, 1}`.
    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain("p", p, "Bernoulli parameter must lie in [0, 1]"));
        }
        Self::new(vec![0.0, 1.0], vec![1.0 - p, p])
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| w * (a - m) * (a - m))
            .sum()
    }

    /// Weight of the atom at `x` (within [`ATOM_TOLERANCE`]), or 0.
    pub fn mass_at(&self, x: f64) -> f64 {
        self.index_of(x).map_or(0.0, |i| self.weights[i])
    }

    pub(crate) fn index_of(&self, x: f64) -> Option<usize> {
        let i = self.atoms.partition_point(|&a| a < x - ATOM_TOLERANCE);
        (i < self.atoms.len() && (self.atoms[i] - x).abs() <= ATOM_TOLERANCE).then_some(i)
    }

    /// True when every atom sits at `m`.
    pub fn is_point_mass_at(&self, m: f64) -> bool {
        self.atoms.iter().all(|&a| (a - m).abs() <= ATOM_TOLERANCE)
    }

    pub fn sample(&self, stream: &mut SeededStream) -> f64 {
        let u = stream.uniform();
        let i = self.cdf.partition_point(|&c| c <= u);
        self.atoms[i.min(self.atoms.len() - 1)]
    }
}

/// Gaussian with positive variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianDist {
    mean: f64,
    variance: f64,
}

impl GaussianDist {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::domain("mean", mean, "mean must be finite"));
        }
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::domain("variance", variance, "variance must be positive"));
        }
        Ok(Self { mean, variance })
    }

    /// `N(mean, 1)`.
    pub fn unit(mean: f64) -> Result<Self> {
        Self::new(mean, 1.0)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn sample(&self, stream: &mut SeededStream) -> f64 {
        self.mean + self.variance.sqrt() * stream.standard_normal()
    }
}

/// Either supported family.
#[derive(Debug, Clone, PartialEq)]
pub enum Dist {
    Discrete(DiscreteBoundedDist),
    Gaussian(GaussianDist),
}

impl Dist {
    /// Draws the next i.i.d. observation and advances the stream counter.
    pub fn sample(&self, stream: &mut SeededStream) -> f64 {
        match self {
            Dist::Discrete(d) => d.sample(stream),
            Dist::Gaussian(g) => g.sample(stream),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Dist::Discrete(d) => d.mean(),
            Dist::Gaussian(g) => g.mean(),
        }
    }

    pub fn as_discrete(&self) -> Option<&DiscreteBoundedDist> {
        match self {
            Dist::Discrete(d) => Some(d),
            Dist::Gaussian(_) => None,
        }
    }

    pub fn as_gaussian(&self) -> Option<&GaussianDist> {
        match self {
            Dist::Gaussian(g) => Some(g),
            Dist::Discrete(_) => None,
        }
    }
}

/// Compact form: `bern:p`, `gauss:m` (unit variance), `gauss:m,v`, `atoms:a,b@w,v`.
impl fmt::Display for Dist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dist::Gaussian(g) if g.variance == 1.0 => write!(f, "gauss:{}", g.mean),
            Dist::Gaussian(g) => write!(f, "gauss:{},{}", g.mean, g.variance),
            Dist::Discrete(d) if d.atoms == [0.0, 1.0] => write!(f, "bern:{}", d.weights[1]),
            Dist::Discrete(d) => {
                let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
                write!(f, "atoms:{}@{}", join(&d.atoms), join(&d.weights))
            }
        }
    }
}

impl From<DiscreteBoundedDist> for Dist {
    fn from(d: DiscreteBoundedDist) -> Self {
        Dist::Discrete(d)
    }
}

impl From<GaussianDist> for Dist {
    fn from(g: GaussianDist) -> Self {
        Dist::Gaussian(g)
    }
}

/// Empirical distribution of `samples`: distinct values with relative frequencies.
pub fn empirical(samples: &[f64]) -> Result<DiscreteBoundedDist> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("empirical distribution of no samples".into()));
    }
    for &x in samples {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::domain("sample", x, "samples must lie in [0, 1]"));
        }
    }
    Ok(DiscreteBoundedDist::from_pairs(
        samples.iter().map(|&x| (x, 1.0)).collect(),
    ))
}

/// `KL(q, p) = E_q[log dq/dp]`, `+inf` when `q` is not absolutely continuous w.r.t. `p`.
pub fn kl_divergence(q: &Dist, p: &Dist) -> Result<f64> {
    match (q, p) {
        (Dist::Gaussian(q), Dist::Gaussian(p)) => {
            let dm = p.mean - q.mean;
            Ok(0.5 * ((p.variance / q.variance).ln() + (q.variance + dm * dm) / p.variance - 1.0))
        }
        (Dist::Discrete(q), Dist::Discrete(p)) => {
            let mut kl = 0.0;
            for (&a, &wq) in q.atoms.iter().zip(&q.weights) {
                let wp = p.mass_at(a);
                if wp == 0.0 {
                    return Ok(f64::INFINITY);
                }
                kl += wq * (wq / wp).ln();
            }
            // Rounding can leave a tiny negative residue when q == p.
            Ok(kl.max(0.0))
        }
        _ => Err(Error::UnsupportedPair(
            "KL divergence between a Gaussian and a discrete distribution".into(),
        )),
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a seed for the sub-key `key` of `seed`.
pub fn derive_seed(seed: u64, key: u64) -> u64 {
    splitmix64(seed ^ splitmix64(key.wrapping_add(0x5EED)))
}

/// Reproducible random stream keyed by `(master_seed, replication_index)`.
///
/// Backed by ChaCha8 with the replication index as the stream id, so the
/// sequence of a replication does not depend on which thread runs it.
#[derive(Debug, Clone)]
pub struct SeededStream {
    master_seed: u64,
    replication_index: u64,
    counter: u64,
    rng: ChaCha8Rng,
}

impl SeededStream {
    pub fn new(master_seed: u64, replication_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(replication_index);
        Self {
            master_seed,
            replication_index,
            counter: 0,
            rng,
        }
    }

    /// An independent stream for the same replication, separated by `key`.
    pub fn substream(&self, key: u64) -> Self {
        Self::new(derive_seed(self.master_seed, key), self.replication_index)
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn replication_index(&self) -> u64 {
        self.replication_index
    }

    /// Number of observations drawn so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    fn uniform(&mut self) -> f64 {
        self.counter += 1;
        self.rng.random::<f64>()
    }

    fn standard_normal(&mut self) -> f64 {
        self.counter += 1;
        self.rng.sample(StandardNormal)
    }
}

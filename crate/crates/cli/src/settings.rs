//! Command-line options, config files and value parsing.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::Args;
use seqlab_core::{DiscreteBoundedDist, Dist, GaussianDist};

/// A configuration problem: reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub type ConfigResult<T> = Result<T, ConfigError>;

fn bad(key: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError(format!("invalid value for '{key}': {msg}"))
}

/// Options shared by every subcommand. Each may also be given in the config file
/// as `key = value`, using the long flag name without dashes; flags win.
#[derive(Args, Debug, Default, Clone)]
pub struct Opts {
    /// Config file of `key = value` lines; `#` starts a comment
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Significance level α in (0, 1) [probability]; comma-separated list for sweeps
    #[arg(long, value_name = "ALPHA[,ALPHA..]")]
    pub alpha: Option<String>,
    /// Mean m in (0, 1) for `klinf`/`concentration`; alternative mean for the numeraire kernel [same units as samples]
    #[arg(long)]
    pub m: Option<String>,
    /// Null mean m0 in (0, 1) for bounded-mean kernels [same units as samples]
    #[arg(long)]
    pub m0: Option<String>,
    /// Distribution(s): `bern:p`, `gauss:m`, `gauss:m,var`, `atoms:x1,x2@w1,w2`; several separated by `;`
    #[arg(long, value_name = "DIST")]
    pub dist: Option<String>,
    /// Null member(s), same syntax as --dist; also P of the likelihood-ratio kernel
    #[arg(long, value_name = "DIST")]
    pub null_dist: Option<String>,
    /// Monte-Carlo replications [count, at least 100]
    #[arg(long)]
    pub reps: Option<String>,
    /// Truncation horizon [samples]
    #[arg(long)]
    pub horizon: Option<String>,
    /// Master seed [unsigned 64-bit integer]
    #[arg(long)]
    pub seed: Option<String>,
    /// Worker threads [count]; results do not depend on it
    #[arg(long)]
    pub workers: Option<String>,
    /// CSV output file
    #[arg(long, value_name = "PATH")]
    pub out: Option<String>,
    /// Kernel: lr, numeraire, mixture, klinf-empirical, tilde-dh, lil, constraint-mixture
    #[arg(long)]
    pub kernel: Option<String>,
    /// Constant c in the doubling test's R_n = c ln(1 + log2(2n)) [dimensionless]
    #[arg(long)]
    pub r_n_const: Option<String>,
    /// LIL boundary constant c1 [dimensionless]
    #[arg(long)]
    pub lil_c1: Option<String>,
    /// LIL boundary constant c2 [dimensionless]
    #[arg(long)]
    pub lil_c2: Option<String>,
    /// LIL boundary constant c3 [dimensionless]
    #[arg(long)]
    pub lil_c3: Option<String>,
    /// KL_inf value for `bounds` [nats]
    #[arg(long)]
    pub klinf: Option<String>,
    /// Gap Δ in (0, 1/e) for `bounds` [same units as samples]
    #[arg(long)]
    pub delta: Option<String>,
    /// Deviation ε for `concentration` [sqrt(nats)]
    #[arg(long)]
    pub eps: Option<String>,
    /// Sample sizes for `concentration`, comma-separated [samples]
    #[arg(long)]
    pub n: Option<String>,
    /// Largest n of the time-uniform event in `concentration` [samples]
    #[arg(long)]
    pub max_n: Option<String>,
    /// Copies run by the meta-algorithm [count]
    #[arg(long)]
    pub max_copies: Option<String>,
    /// Quadrature nodes per axis for the constraint mixture [count]
    #[arg(long)]
    pub nodes: Option<String>,
    /// Lower end of the constraint-mixture multiplier interval [dimensionless]
    #[arg(long)]
    pub pi_lo: Option<String>,
    /// Upper end of the constraint-mixture multiplier interval [dimensionless]
    #[arg(long)]
    pub pi_hi: Option<String>,
}

/// Every key accepted in a config file.
pub const KEYS: &[&str] = &[
    "alpha",
    "m",
    "m0",
    "dist",
    "null-dist",
    "reps",
    "horizon",
    "seed",
    "workers",
    "out",
    "kernel",
    "r-n-const",
    "lil-c1",
    "lil-c2",
    "lil-c3",
    "klinf",
    "delta",
    "eps",
    "n",
    "max-n",
    "max-copies",
    "nodes",
    "pi-lo",
    "pi-hi",
];

impl Opts {
    fn flags(&self) -> [(&'static str, &Option<String>); 24] {
        [
            ("alpha", &self.alpha),
            ("m", &self.m),
            ("m0", &self.m0),
            ("dist", &self.dist),
            ("null-dist", &self.null_dist),
            ("reps", &self.reps),
            ("horizon", &self.horizon),
            ("seed", &self.seed),
            ("workers", &self.workers),
            ("out", &self.out),
            ("kernel", &self.kernel),
            ("r-n-const", &self.r_n_const),
            ("lil-c1", &self.lil_c1),
            ("lil-c2", &self.lil_c2),
            ("lil-c3", &self.lil_c3),
            ("klinf", &self.klinf),
            ("delta", &self.delta),
            ("eps", &self.eps),
            ("n", &self.n),
            ("max-n", &self.max_n),
            ("max-copies", &self.max_copies),
            ("nodes", &self.nodes),
            ("pi-lo", &self.pi_lo),
            ("pi-hi", &self.pi_hi),
        ]
    }

    /// Merges the config file (if any) under the inline flags.
    pub fn resolve(&self) -> ConfigResult<Settings> {
        let mut values = match &self.config {
            Some(path) => read_config(path)?,
            None => BTreeMap::new(),
        };
        for (key, value) in self.flags() {
            if let Some(v) = value {
                values.insert(key.to_string(), v.clone());
            }
        }
        Ok(Settings { values })
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are ignored; keys may
/// use `-` or `_`.
pub fn parse_config(text: &str) -> ConfigResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("config line {}: expected `key = value`", i + 1)))?;
        let key = key.trim().replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError(format!("unknown config key '{key}' on line {}", i + 1)));
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

fn read_config(path: &Path) -> ConfigResult<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read config '{}': {e}", path.display())))?;
    parse_config(&text)
}

/// Resolved key/value settings with typed accessors.
#[derive(Debug, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require_raw(&self, key: &str) -> ConfigResult<&str> {
        self.raw(key)
            .ok_or_else(|| ConfigError(format!("missing required setting '{key}' (--{key})")))
    }

    pub fn f64(&self, key: &str) -> ConfigResult<Option<f64>> {
        self.raw(key).map(|v| parse_f64(key, v)).transpose()
    }

    pub fn u64(&self, key: &str) -> ConfigResult<Option<u64>> {
        self.raw(key)
            .map(|v| v.parse::<u64>().map_err(|e| bad(key, format!("'{v}': {e}"))))
            .transpose()
    }

    pub fn u64_or(&self, key: &str, default: u64) -> ConfigResult<u64> {
        Ok(self.u64(key)?.unwrap_or(default))
    }

    pub fn f64_list(&self, key: &str) -> ConfigResult<Option<Vec<f64>>> {
        self.raw(key)
            .map(|v| v.split(',').map(|s| parse_f64(key, s.trim())).collect())
            .transpose()
    }

    pub fn u64_list(&self, key: &str) -> ConfigResult<Option<Vec<u64>>> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().parse::<u64>().map_err(|e| bad(key, format!("'{s}': {e}"))))
                    .collect()
            })
            .transpose()
    }

    /// Levels given under `alpha`, each in (0, 1).
    pub fn alphas(&self) -> ConfigResult<Vec<f64>> {
        let list = self
            .f64_list("alpha")?
            .ok_or_else(|| ConfigError("missing required setting 'alpha' (--alpha)".into()))?;
        for &a in &list {
            if !(a > 0.0 && a < 1.0) {
                return Err(bad("alpha", format!("{a} is not in (0, 1)")));
            }
        }
        Ok(list)
    }

    /// A mean-type setting that must lie in (0, 1).
    pub fn unit_mean(&self, key: &str) -> ConfigResult<Option<f64>> {
        match self.f64(key)? {
            Some(v) if !(v > 0.0 && v < 1.0) => Err(bad(key, format!("{v} is not in (0, 1)"))),
            other => Ok(other),
        }
    }

    pub fn dists(&self, key: &str) -> ConfigResult<Option<Vec<Dist>>> {
        self.raw(key)
            .map(|v| {
                v.split(';')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_dist(s.trim()).map_err(|e| bad(key, e)))
                    .collect()
            })
            .transpose()
    }

    pub fn require_dists(&self, key: &str) -> ConfigResult<Vec<Dist>> {
        let d = self
            .dists(key)?
            .ok_or_else(|| ConfigError(format!("missing required setting '{key}' (--{key})")))?;
        if d.is_empty() {
            return Err(bad(key, "no distribution given"));
        }
        Ok(d)
    }
}

fn parse_f64(key: &str, v: &str) -> ConfigResult<f64> {
    let x: f64 = v.parse().map_err(|e| bad(key, format!("'{v}': {e}")))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(bad(key, format!("'{v}' is not finite")))
    }
}

fn numbers(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
        .collect()
}

/// Parses `bern:p`, `gauss:m`, `gauss:m,var` or `atoms:x1,..@w1,..`.
pub fn parse_dist(text: &str) -> Result<Dist, String> {
    let (kind, rest) = text
        .split_once(':')
        .ok_or_else(|| format!("'{text}': expected kind:parameters"))?;
    match kind.trim() {
        "bern" => {
            let p: f64 = rest.trim().parse().map_err(|e| format!("'{rest}': {e}"))?;
            Ok(DiscreteBoundedDist::bernoulli(p).map_err(|e| e.to_string())?.into())
        }
        "gauss" => {
            let v = numbers(rest)?;
            let g = match v.as_slice() {
                [m] => GaussianDist::unit(*m),
                [m, var] => GaussianDist::new(*m, *var),
                _ => return Err(format!("'{text}': expected gauss:m or gauss:m,var")),
            };
            Ok(g.map_err(|e| e.to_string())?.into())
        }
        "atoms" => {
            let (a, w) = rest
                .split_once('@')
                .ok_or_else(|| format!("'{text}': expected atoms:x1,x2@w1,w2"))?;
            let d = DiscreteBoundedDist::new(numbers(a)?, numbers(w)?).map_err(|e| e.to_string())?;
            Ok(d.into())
        }
        other => Err(format!("unknown distribution kind '{other}'")),
    }
}

/// Six significant digits in the style of C's `%#g`.
pub fn fmt6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0.00000".into();
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci.rsplit_once('e').and_then(|(_, e)| e.parse().ok()).unwrap_or(0);
    if (-5..6).contains(&exp) {
        format!("{:.*}", (5 - exp) as usize, x)
    } else {
        let (mantissa, _) = sci.split_once('e').unwrap();
        format!("{mantissa}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

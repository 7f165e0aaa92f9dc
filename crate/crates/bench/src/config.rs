//! Resolved experiment configuration: defaults, `key=value` files and flag
//! overrides all go through [`Config::set`].

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use cemd::recovery::Algorithm;

/// Which oracle implementation a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    Approx,
    Exact,
}

impl fmt::Display for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleKind::Approx => "approx",
            OracleKind::Exact => "exact",
        })
    }
}

impl FromStr for OracleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "approx" => Ok(OracleKind::Approx),
            "exact" => Ok(OracleKind::Exact),
            _ => Err(format!("expected approx or exact, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub h: usize,
    pub w: usize,
    pub s: usize,
    pub budget: u64,
    pub m: usize,
    pub noise: f64,
    pub algo: Algorithm,
    pub d_deg: usize,
    pub trials: usize,
    pub iters: usize,
    pub seed: u64,
    pub jobs: usize,
    pub head: OracleKind,
    pub tail: OracleKind,
    /// Boosting rounds; `None` picks the count from the convergence analysis.
    pub boost: Option<usize>,
    pub tail_d: f64,
    pub tail_delta: f64,
    pub m_grid: Vec<usize>,
    pub b_grid: Vec<u64>,
    pub n: usize,
    pub c: f64,
    pub rip_trials: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            h: 8,
            w: 4,
            s: 1,
            budget: 4,
            m: 64,
            noise: 0.0,
            algo: Algorithm::AmIht,
            d_deg: 7,
            trials: 20,
            iters: 50,
            seed: 0,
            jobs: 1,
            head: OracleKind::Approx,
            tail: OracleKind::Approx,
            boost: None,
            tail_d: 2.0,
            tail_delta: 0.1,
            m_grid: vec![16, 24, 32, 40, 48, 56, 64],
            b_grid: vec![0, 2, 4, 8],
            n: 4096,
            c: 2.0,
            rip_trials: 100,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| format!("invalid value {value:?} for {key}: {e}"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse(key, v))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl Config {
    pub const KEYS: [&'static str; 22] = [
        "h",
        "w",
        "s",
        "B",
        "m",
        "noise",
        "algo",
        "d_deg",
        "trials",
        "iters",
        "seed",
        "jobs",
        "head",
        "tail",
        "boost",
        "tail_d",
        "tail_delta",
        "m_grid",
        "b_grid",
        "n",
        "c",
        "rip_trials",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "h" => self.h = parse(key, value)?,
            "w" => self.w = parse(key, value)?,
            "s" => self.s = parse(key, value)?,
            "B" => self.budget = parse(key, value)?,
            "m" => self.m = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            "algo" => self.algo = parse(key, value)?,
            "d_deg" => self.d_deg = parse(key, value)?,
            "trials" => self.trials = parse(key, value)?,
            "iters" => self.iters = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "jobs" => self.jobs = parse(key, value)?,
            "head" => self.head = parse(key, value)?,
            "tail" => self.tail = parse(key, value)?,
            "boost" => {
                self.boost = match value.trim() {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "tail_d" => self.tail_d = parse(key, value)?,
            "tail_delta" => self.tail_delta = parse(key, value)?,
            "m_grid" => self.m_grid = parse_list(key, value)?,
            "b_grid" => self.b_grid = parse_list(key, value)?,
            "n" => self.n = parse(key, value)?,
            "c" => self.c = parse(key, value)?,
            "rip_trials" => self.rip_trials = parse(key, value)?,
            _ => return Err(format!("unknown config key {key:?}")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "h" => self.h.to_string(),
            "w" => self.w.to_string(),
            "s" => self.s.to_string(),
            "B" => self.budget.to_string(),
            "m" => self.m.to_string(),
            "noise" => self.noise.to_string(),
            "algo" => self.algo.to_string(),
            "d_deg" => self.d_deg.to_string(),
            "trials" => self.trials.to_string(),
            "iters" => self.iters.to_string(),
            "seed" => self.seed.to_string(),
            "jobs" => self.jobs.to_string(),
            "head" => self.head.to_string(),
            "tail" => self.tail.to_string(),
            "boost" => self.boost.map_or("auto".into(), |t| t.to_string()),
            "tail_d" => self.tail_d.to_string(),
            "tail_delta" => self.tail_delta.to_string(),
            "m_grid" => join(&self.m_grid),
            "b_grid" => join(&self.b_grid),
            "n" => self.n.to_string(),
            "c" => self.c.to_string(),
            "rip_trials" => self.rip_trials.to_string(),
            _ => return None,
        })
    }

    /// Applies a `key=value` file. Blank lines and `#` comments are skipped.
    pub fn load(&mut self, path: &Path) -> Result<(), String> {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("{}:{}: expected key=value", path.display(), i + 1))?;
            self.set(key.trim(), value)
                .map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?;
        }
        Ok(())
    }

    /// One `key=value` line per setting.
    pub fn lines(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).unwrap()))
            .collect()
    }

    /// Space-separated `key=value` pairs for CSV headers.
    pub fn inline(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k}={}", self.get(k).unwrap()))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Checks the grid and loop settings. Grid points of `phase` are
    /// checked separately by the command.
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("h", self.h),
            ("w", self.w),
            ("s", self.s),
            ("m", self.m),
            ("trials", self.trials),
            ("iters", self.iters),
            ("jobs", self.jobs),
            ("n", self.n),
            ("rip_trials", self.rip_trials),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.s > self.h {
            return Err(format!("s must be at most h ({}), got {}", self.h, self.s));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(format!("noise must be a nonnegative number, got {}", self.noise));
        }
        if self.d_deg == 0 || self.d_deg % 2 == 0 {
            return Err(format!("d_deg must be odd, got {}", self.d_deg));
        }
        if self.boost == Some(0) {
            return Err("boost must be positive or auto".into());
        }
        if !(self.tail_d > 1.0) {
            return Err(format!("tail_d must exceed 1, got {}", self.tail_d));
        }
        if !(self.tail_delta > 0.0) {
            return Err(format!("tail_delta must be positive, got {}", self.tail_delta));
        }
        if !(self.c > 1.0) {
            return Err(format!("c must exceed 1, got {}", self.c));
        }
        if self.m_grid.contains(&0) {
            return Err("m must be positive in m_grid".into());
        }
        Ok(())
    }
}

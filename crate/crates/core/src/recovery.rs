//! Recovery loops driven by head and tail approximation oracles, their
//! convergence constants, and the adversarial-oracle counterexample.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::head::{boost_iterations, BoostPlan, HeadApprox};
use crate::measurement::{
    adjoint_apply, apply, median_signal, restricted_least_squares, DenseOperator,
    ExpanderOperator, MeasurementOperator,
};
use crate::model::{is_member, support_emd, CemdParams};
use crate::oracle::{HeadOracle, TailOracle};
use crate::signal::{lp_norm, restrict, Norm, SignalMatrix, Support};
use crate::tail::{TailApprox, TailParams};

/// Which recovery loop to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    AmIht,
    AmCosamp,
    AmIhtRip1,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::AmIht => "am-iht",
            Self::AmCosamp => "am-cosamp",
            Self::AmIhtRip1 => "am-iht-rip1",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "am-iht" | "am_iht" => Ok(Self::AmIht),
            "am-cosamp" | "am_cosamp" => Ok(Self::AmCosamp),
            "am-iht-rip1" | "am_iht_rip1" => Ok(Self::AmIhtRip1),
            _ => invalid(format!(
                "unknown algorithm {s:?}, expected am-iht, am-cosamp or am-iht-rip1"
            )),
        }
    }
}

/// Oracles and stopping rules of a recovery run.
#[derive(Clone, Copy)]
pub struct RecoveryConfig<'a> {
    pub head: &'a dyn HeadOracle,
    pub tail: &'a dyn TailOracle,
    pub max_iters: usize,
    /// Stop once `||x^{i+1} - x^i||_p` drops to this value.
    pub residual_stop: Option<f64>,
    pub record_trajectory: bool,
    /// Ground truth, used only to fill the error column of the trajectory.
    pub truth: Option<&'a SignalMatrix>,
}

impl<'a> RecoveryConfig<'a> {
    pub fn new(head: &'a dyn HeadOracle, tail: &'a dyn TailOracle, max_iters: usize) -> Self {
        Self {
            head,
            tail,
            max_iters,
            residual_stop: None,
            record_trajectory: true,
            truth: None,
        }
    }

    pub fn with_truth(mut self, truth: &'a SignalMatrix) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn with_residual_stop(mut self, stop: f64) -> Self {
        self.residual_stop = Some(stop);
        self
    }

    fn validate(&self) -> Result<(usize, usize)> {
        if self.max_iters == 0 {
            return invalid("max_iters must be at least 1");
        }
        if let Some(t) = self.residual_stop {
            if !(t >= 0.0) {
                return invalid(format!("residual_stop must be nonnegative, got {t}"));
            }
        }
        let grid = self.tail.output_model();
        let head = self.head.input_model();
        if (grid.h(), grid.w()) != (head.h(), head.w()) {
            return Err(Error::DimensionMismatch {
                expected: format!("head oracle on a {}x{} grid", grid.h(), grid.w()),
                found: format!("{}x{}", head.h(), head.w()),
            });
        }
        Ok((grid.h(), grid.w()))
    }
}

/// State after one iteration (`iter = 0` is the zero start).
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// `||y - A x^i||` in the loop's norm.
    pub residual: f64,
    /// `||x - x^i||_p` when the truth is known.
    pub error: Option<f64>,
    pub support_emd: u64,
    pub col_sparsity_max: usize,
}

/// Final estimate and optional trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryOutput {
    pub estimate: SignalMatrix,
    pub iterations: usize,
    pub trajectory: Vec<IterationRecord>,
}

/// Trajectory as CSV with header
/// `iter,residual_p,error_p,support_emd,col_sparsity_max`.
pub fn trajectory_to_csv(records: &[IterationRecord]) -> String {
    let mut out = String::from("iter,residual_p,error_p,support_emd,col_sparsity_max\n");
    for r in records {
        let err = r.error.map(|e| e.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.iter, r.residual, err, r.support_emd, r.col_sparsity_max
        );
    }
    out
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn vec_norm(v: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::L1 => v.iter().map(|x| x.abs()).sum(),
        Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
    }
}

struct Recorder<'a> {
    cfg: &'a RecoveryConfig<'a>,
    norm: Norm,
    records: Vec<IterationRecord>,
}

impl Recorder<'_> {
    fn push(&mut self, iter: usize, x: &SignalMatrix, residual: &[f64]) -> Result<()> {
        if !self.cfg.record_trajectory {
            return Ok(());
        }
        let support = x.support();
        let error = match self.cfg.truth {
            Some(t) => Some(lp_norm(&t.sub(x)?, self.norm)),
            None => None,
        };
        self.records.push(IterationRecord {
            iter,
            residual: vec_norm(residual, self.norm),
            error,
            support_emd: support_emd(&support, x.rows(), x.cols())?,
            col_sparsity_max: support.max_column_sparsity(),
        });
        Ok(())
    }
}

fn check_y<A: MeasurementOperator + ?Sized>(a: &A, y: &[f64], h: usize, w: usize) -> Result<()> {
    if a.cols() != h * w {
        return Err(Error::DimensionMismatch {
            expected: format!("operator with {} columns", h * w),
            found: format!("{}", a.cols()),
        });
    }
    if y.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} measurements", a.rows()),
            found: format!("{}", y.len()),
        });
    }
    Ok(())
}

fn debug_check_in_model(x: &SignalMatrix, tail: &dyn TailOracle) {
    debug_assert!(
        is_member(&x.support(), &tail.output_model()),
        "iterate left the tail output model"
    );
}

/// Generic loop shared by the two IHT variants: `x <- T(x + H(g(y - Ax)))`.
fn iht_loop<A, G>(y: &[f64], a: &A, cfg: &RecoveryConfig, norm: Norm, proxy: G) -> Result<RecoveryOutput>
where
    A: MeasurementOperator + ?Sized,
    G: Fn(&[f64]) -> Result<SignalMatrix>,
{
    let (h, w) = cfg.validate()?;
    check_y(a, y, h, w)?;
    let mut x = SignalMatrix::zeros(h, w);
    let mut rec = Recorder {
        cfg,
        norm,
        records: Vec::new(),
    };
    let mut residual = y.to_vec();
    rec.push(0, &x, &residual)?;
    let mut iterations = 0;
    for i in 0..cfg.max_iters {
        let b = proxy(&residual)?;
        let gamma = cfg.head.head(&b)?;
        let v = x.add(&restrict(&b, &gamma)?)?;
        let omega = cfg.tail.tail(&v)?;
        let next = restrict(&v, &omega)?;
        debug_check_in_model(&next, cfg.tail);
        let step = lp_norm(&next.sub(&x)?, norm);
        x = next;
        residual = sub(y, &apply(a, &x)?);
        iterations = i + 1;
        rec.push(iterations, &x, &residual)?;
        if cfg.residual_stop.is_some_and(|t| step <= t) {
            break;
        }
    }
    Ok(RecoveryOutput {
        estimate: x,
        iterations,
        trajectory: rec.records,
    })
}

/// Approximate model-IHT: `x^{i+1} = T(x^i + H(A^T (y - A x^i)))` from
/// `x^0 = 0`.
pub fn am_iht<A: MeasurementOperator + ?Sized>(
    y: &[f64],
    a: &A,
    cfg: &RecoveryConfig,
) -> Result<RecoveryOutput> {
    let (h, w) = cfg.validate()?;
    iht_loop(y, a, cfg, Norm::L2, |r| adjoint_apply(a, r, h, w))
}

/// Approximate model-IHT for RIP-1 matrices: the adjoint is replaced by the
/// median operator and errors are measured in l1.
pub fn am_iht_rip1(y: &[f64], e: &ExpanderOperator, cfg: &RecoveryConfig) -> Result<RecoveryOutput> {
    let (h, w) = cfg.validate()?;
    iht_loop(y, e, cfg, Norm::L1, |r| median_signal(e, r, h, w))
}

/// Approximate model-CoSaMP.
///
/// `Gamma = supp(H(A^T(y - A x^i)))`, `S = Gamma u supp(x^i)`,
/// `z = argmin_{supp z in S} ||y - A z||_2`, `x^{i+1} = T(z)`.
pub fn am_cosamp<A: MeasurementOperator + ?Sized>(
    y: &[f64],
    a: &A,
    cfg: &RecoveryConfig,
) -> Result<RecoveryOutput> {
    let (h, w) = cfg.validate()?;
    check_y(a, y, h, w)?;
    let norm = Norm::L2;
    let mut x = SignalMatrix::zeros(h, w);
    let mut rec = Recorder {
        cfg,
        norm,
        records: Vec::new(),
    };
    let mut residual = y.to_vec();
    rec.push(0, &x, &residual)?;
    let mut iterations = 0;
    for i in 0..cfg.max_iters {
        let b = adjoint_apply(a, &residual, h, w)?;
        let gamma = cfg.head.head(&b)?;
        let current = x.support();
        let s: Support = gamma.union(&current);
        debug_assert!(current.is_subset(&s));
        let z = restricted_least_squares(a, &s, y, h, w)?;
        let omega = cfg.tail.tail(&z)?;
        let next = restrict(&z, &omega)?;
        debug_check_in_model(&next, cfg.tail);
        let step = lp_norm(&next.sub(&x)?, norm);
        x = next;
        residual = sub(y, &apply(a, &x)?);
        iterations = i + 1;
        rec.push(iterations, &x, &residual)?;
        if cfg.residual_stop.is_some_and(|t| step <= t) {
            break;
        }
    }
    Ok(RecoveryOutput {
        estimate: x,
        iterations,
        trajectory: rec.records,
    })
}

/// Which loop a set of constants describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    AmIht,
    AmCosamp,
    Rip1,
}

impl From<Algorithm> for Variant {
    fn from(a: Algorithm) -> Self {
        match a {
            Algorithm::AmIht => Self::AmIht,
            Algorithm::AmCosamp => Self::AmCosamp,
            Algorithm::AmIhtRip1 => Self::Rip1,
        }
    }
}

/// Closed-form convergence constants. `alpha` and `beta` describe the
/// per-iteration inequality `||r^{i+1}|| <= alpha ||r^i|| + beta ||e||` of the
/// l2 loops; `rho` and `tau` the l1 analogue. Regimes the formulas do not
/// cover are flagged in `infeasible` instead of producing NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConstants {
    pub variant: Variant,
    pub c_h: f64,
    pub c_t: f64,
    pub delta: f64,
    pub alpha0: f64,
    pub beta0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub rho0: f64,
    pub rho: f64,
    pub tau: f64,
    /// Boosting plan for the l2 loops, when one exists.
    pub boost: Option<BoostPlan>,
    pub feasible: bool,
    pub infeasible: Option<String>,
}

/// Evaluates the constants for oracle factors `c_h`, `c_t` and RIP constant
/// `delta`. `tau0` is the opaque noise constant of the RIP-1 loop.
pub fn constants(c_h: f64, c_t: f64, delta: f64, variant: Variant, tau0: f64) -> ConvergenceConstants {
    let mut out = ConvergenceConstants {
        variant,
        c_h,
        c_t,
        delta,
        alpha0: f64::NAN,
        beta0: f64::NAN,
        alpha: f64::INFINITY,
        beta: f64::INFINITY,
        rho0: f64::NAN,
        rho: f64::INFINITY,
        tau: f64::INFINITY,
        boost: None,
        feasible: false,
        infeasible: None,
    };
    if !(c_h > 0.0 && c_h <= 1.0 && c_t >= 1.0 && delta >= 0.0 && delta < 1.0) {
        out.infeasible = Some(format!(
            "parameters out of range: c_H = {c_h}, c_T = {c_t}, delta = {delta}"
        ));
        return out;
    }
    match variant {
        Variant::AmIht | Variant::AmCosamp => {
            let alpha0 = c_h * (1.0 - delta) - delta;
            let beta0 = (1.0 + c_h) * (1.0 + delta).sqrt();
            out.alpha0 = alpha0;
            out.beta0 = beta0;
            out.boost = boost_iterations(c_h, c_t, delta).ok();
            if alpha0 <= 0.0 {
                out.infeasible = Some(format!(
                    "alpha0 = c_H(1 - delta) - delta = {alpha0} is not positive"
                ));
                return out;
            }
            let root = (1.0 - alpha0 * alpha0).max(0.0).sqrt();
            let mix = beta0 / alpha0 + alpha0 * beta0 / root;
            if variant == Variant::AmIht {
                out.alpha = (1.0 + c_t) * (delta + root);
                out.beta = (1.0 + c_t) * (mix + (1.0 + delta).sqrt());
            } else {
                let ratio = ((1.0 + delta) / (1.0 - delta)).sqrt();
                out.alpha = (1.0 + c_t) * ratio * root;
                out.beta = (1.0 + c_t) * (ratio * mix + 2.0 / (1.0 - delta).sqrt());
            }
            out.feasible = out.alpha < 1.0;
            if !out.feasible {
                out.infeasible = Some(format!("alpha = {} is not below 1", out.alpha));
            }
        }
        Variant::Rip1 => {
            if delta >= 0.25 {
                out.infeasible = Some(format!("RIP-1 constant {delta} must be below 1/4"));
                return out;
            }
            let rho0 = 4.0 * delta / (1.0 - 4.0 * delta);
            out.rho0 = rho0;
            out.rho = (1.0 + c_t) * (2.0 * rho0 + 1.0 - c_h * (1.0 - rho0));
            out.tau = (1.0 + c_t) * (2.0 + c_h) * tau0;
            out.feasible = out.rho < 1.0;
            if !out.feasible {
                out.infeasible = Some(format!("rho = {} is not below 1", out.rho));
            }
        }
    }
    out
}

impl ConvergenceConstants {
    fn rate(&self) -> f64 {
        match self.variant {
            Variant::Rip1 => self.rho,
            _ => self.alpha,
        }
    }

    fn noise_gain(&self) -> f64 {
        match self.variant {
            Variant::Rip1 => self.tau,
            _ => self.beta,
        }
    }

    /// Final-error coefficient `1 + beta / (1 - alpha)` (resp. with `tau`,
    /// `rho`); `None` outside the feasible regime.
    pub fn error_coefficient(&self) -> Option<f64> {
        self.feasible
            .then(|| 1.0 + self.noise_gain() / (1.0 - self.rate()))
    }

    /// Iterations after which the error is within `(1 + beta/(1-alpha))
    /// ||e||`: `ceil(log(||x|| / ||e||) / log(1/alpha))`.
    pub fn iteration_bound(&self, x_norm: f64, e_norm: f64) -> Option<usize> {
        if !self.feasible {
            return None;
        }
        let rate = self.rate();
        if rate <= 0.0 || e_norm <= 0.0 {
            return Some(1);
        }
        let t = (x_norm / e_norm).ln() / (1.0 / rate).ln();
        Some(t.ceil().max(1.0) as usize)
    }
}

/// Outcome of the adversarial-oracle experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialReport {
    pub n: usize,
    pub m: usize,
    pub c: f64,
    /// `||a||_2^2` for `a = A^T A e_1`.
    pub norm_a_sq: f64,
    /// `c^2 / (c^2 - 1)`.
    pub threshold: f64,
    /// `||a||_2^2 >= c^2 / (c^2 - 1)`.
    pub condition_holds: bool,
    /// `||a - 0||_2 <= c ||a - a_best||_2` with `a_best` the best 1-sparse
    /// approximation of `a`, checked directly.
    pub tail_inequality_holds: bool,
    /// Every iterate of model-IHT with the zero oracle stayed 0.
    pub iterates_stay_zero: bool,
    /// `||x - x^i||_2` of the zero-oracle run at its last iterate.
    pub adversarial_error: f64,
    /// `||x - x_hat||_2` of approximation-tolerant IHT on the same data.
    pub contrast_error: f64,
}

impl AdversarialReport {
    pub fn contrast_exact(&self) -> bool {
        self.contrast_error == 0.0
    }
}

/// Plain model-IHT with a tail oracle that always returns the empty support
/// on `x = e_1` measured by a Rademacher matrix with `m = ceil(4 ln n)`,
/// next to approximation-tolerant IHT with the CEMD oracles on an `n x 1`
/// grid with `k = 1`.
pub fn adversarial_demo(n: usize, c: f64, seed: u64, iters: usize) -> Result<AdversarialReport> {
    if n < 16 {
        return invalid(format!("n must be at least 16, got {n}"));
    }
    if !(c > 1.0) {
        return invalid(format!("c must exceed 1, got {c}"));
    }
    let iters = iters.max(1);
    let m = (4.0 * (n as f64).ln()).ceil() as usize;
    let a = DenseOperator::rademacher(m, n, seed)?;
    let mut x = SignalMatrix::zeros(n, 1);
    x.set(0, 0, 1.0);
    let y = apply(&a, &x)?;
    let ata = a.adjoint_vec(&y);
    let norm_a_sq: f64 = ata.iter().map(|v| v * v).sum();
    let threshold = c * c / (c * c - 1.0);
    let top = ata.iter().map(|v| v * v).fold(0.0, f64::max);
    let tail_inequality_holds = norm_a_sq.sqrt() <= c * (norm_a_sq - top).max(0.0).sqrt();

    // model-IHT with the zero tail oracle
    let mut xi = vec![0.0; n];
    let mut iterates_stay_zero = true;
    for _ in 0..iters {
        let r = sub(&y, &a.apply_vec(&xi));
        let _proxy: Vec<f64> = xi.iter().zip(a.adjoint_vec(&r)).map(|(u, v)| u + v).collect();
        xi = vec![0.0; n];
        iterates_stay_zero &= xi.iter().all(|&v| v == 0.0);
    }
    let adversarial_error = vec_norm(&sub(x.as_slice(), &xi), Norm::L2);

    let params = CemdParams::new(n, 1, 1, 0)?;
    let head = HeadApprox::new(params, Norm::L2);
    let tail = TailApprox::new(params, TailParams::default(), Norm::L2);
    let cfg = RecoveryConfig::new(&head, &tail, iters);
    let out = am_iht(&y, &a, &cfg)?;
    let contrast_error = lp_norm(&x.sub(&out.estimate)?, Norm::L2);

    Ok(AdversarialReport {
        n,
        m,
        c,
        norm_a_sq,
        threshold,
        condition_holds: norm_a_sq >= threshold,
        tail_inequality_holds,
        iterates_stay_zero,
        adversarial_error,
        contrast_error,
    })
}

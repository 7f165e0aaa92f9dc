//! Greedy head approximation for the CEMD model and head boosting.

use crate::error::{invalid, Error, Result};
use crate::model::{check_grid, completion, model_power, support_emd, CemdParams};
use crate::oracle::HeadOracle;
use crate::signal::{Norm, OracleQuality, SignalMatrix, Support};

/// One row index per column.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    pub rows: Vec<usize>,
}

impl Path {
    /// `sum_j |X_{rows[j], j}|^p`.
    pub fn weight(&self, x: &SignalMatrix, norm: Norm) -> f64 {
        self.rows
            .iter()
            .enumerate()
            .map(|(c, &r)| norm.power(x.get(r, c)))
            .sum()
    }

    /// Total vertical movement.
    pub fn emd(&self) -> u64 {
        self.rows
            .windows(2)
            .map(|p| p[0].abs_diff(p[1]) as u64)
            .sum()
    }

    pub fn support(&self) -> Support {
        self.rows.iter().enumerate().map(|(c, &r)| (r, c)).collect()
    }
}

/// Path of maximum weight `sum |X|^p` with EMD at most `budget`.
pub fn max_weight_path(x: &SignalMatrix, budget: u64, norm: Norm) -> Path {
    best_path(&x.powered(norm), budget)
}

/// DP over `(column, row, budget used)`. `weights` are already
/// nonnegative. Ties prefer the smaller budget used, then the smaller row.
fn best_path(weights: &SignalMatrix, budget: u64) -> Path {
    let h = weights.rows();
    let w = weights.cols();
    let cap = (budget as usize).min((h - 1) * (w - 1));
    let states = h * (cap + 1);
    let at = |r: usize, b: usize| r * (cap + 1) + b;
    let mut best = vec![f64::NEG_INFINITY; states];
    // per column, predecessor row of each state
    let mut pred = vec![vec![usize::MAX; states]; w];
    for r in 0..h {
        best[at(r, 0)] = weights.get(r, 0);
    }
    let mut next = vec![f64::NEG_INFINITY; states];
    for c in 1..w {
        next.fill(f64::NEG_INFINITY);
        for r in 0..h {
            for b in 0..=cap {
                let v = best[at(r, b)];
                if v == f64::NEG_INFINITY {
                    continue;
                }
                let reach = cap - b;
                let lo = r.saturating_sub(reach);
                let hi = (r + reach).min(h - 1);
                for r2 in lo..=hi {
                    let nb = b + r.abs_diff(r2);
                    let nv = v + weights.get(r2, c);
                    let slot = at(r2, nb);
                    if nv > next[slot] {
                        next[slot] = nv;
                        pred[c][slot] = r;
                    }
                }
            }
        }
        std::mem::swap(&mut best, &mut next);
    }
    let mut end = (0, 0);
    let mut top = f64::NEG_INFINITY;
    for b in 0..=cap {
        for r in 0..h {
            if best[at(r, b)] > top {
                top = best[at(r, b)];
                end = (r, b);
            }
        }
    }
    let mut rows = vec![0; w];
    let (mut r, mut b) = end;
    for c in (0..w).rev() {
        rows[c] = r;
        if c > 0 {
            let p = pred[c][at(r, b)];
            b -= r.abs_diff(p);
            r = p;
        }
    }
    Path { rows }
}

/// `H_s = 1 + 1/2 + ... + 1/s`.
pub fn harmonic(s: usize) -> f64 {
    (1..=s).map(|i| 1.0 / i as f64).sum()
}

/// EMD budget of the head-approximation output, `ceil(H_s) * B`.
pub fn head_output_budget(params: &CemdParams) -> u64 {
    // H_s is irrational for s > 1, so ceil is safe against rounding
    harmonic(params.sparsity()).ceil() as u64 * params.budget()
}

/// Greedy head approximation: `s` rounds, round `i` takes the best path of
/// EMD at most `floor(B / i)` in the residual and zeroes its cells.
///
/// Columns left with fewer than `s` positions because paths met are filled
/// up with the cheapest completion, which only adds mass.
pub fn head_approx(x: &SignalMatrix, params: &CemdParams, norm: Norm) -> Result<Support> {
    check_grid(x, params)?;
    let s = params.sparsity();
    let mut residual = x.powered(norm);
    let mut support = Support::new();
    for i in 1..=s {
        let path = best_path(&residual, params.budget() / i as u64);
        for (c, &r) in path.rows.iter().enumerate() {
            support.insert(r, c);
            residual.set(r, c, 0.0);
        }
    }
    if support.len() < params.k() {
        support = completion(&support, params.h(), params.w(), s)?.1;
    }
    debug_assert!(support.max_column_sparsity() == s && support.len() == params.k());
    debug_assert!(support_emd(&support, params.h(), params.w())? <= head_output_budget(params));
    Ok(support)
}

/// [`head_approx`] packaged as an oracle with `c_H = (1/4)^{1/p}` and output
/// model `(k, ceil(H_s) B)`.
#[derive(Debug, Clone)]
pub struct HeadApprox {
    params: CemdParams,
    norm: Norm,
}

impl HeadApprox {
    pub fn new(params: CemdParams, norm: Norm) -> Self {
        Self { params, norm }
    }
}

impl HeadOracle for HeadApprox {
    fn head(&self, x: &SignalMatrix) -> Result<Support> {
        head_approx(x, &self.params, self.norm)
    }

    fn quality(&self) -> OracleQuality {
        OracleQuality {
            factor: self.norm.root(0.25),
            norm: self.norm,
        }
    }

    fn input_model(&self) -> CemdParams {
        self.params
    }

    fn output_model(&self) -> CemdParams {
        self.params.with_budget(head_output_budget(&self.params))
    }
}

/// Runs a head oracle `t` times, each time on the signal with the support
/// collected so far zeroed, and returns the union.
#[derive(Debug, Clone)]
pub struct BoostedHead<H> {
    inner: H,
    t: usize,
}

pub fn boost_head<H: HeadOracle>(inner: H, t: usize) -> Result<BoostedHead<H>> {
    if t == 0 {
        return invalid("boosting needs t >= 1");
    }
    Ok(BoostedHead { inner, t })
}

impl<H> BoostedHead<H> {
    pub fn rounds(&self) -> usize {
        self.t
    }

    pub fn inner(&self) -> &H {
        &self.inner
    }
}

impl<H: HeadOracle> BoostedHead<H> {
    /// The support after each round.
    pub fn head_rounds(&self, x: &SignalMatrix) -> Result<Vec<Support>> {
        let mut omega = Support::new();
        let mut out = Vec::with_capacity(self.t);
        for _ in 0..self.t {
            let lambda = self.inner.head(&x.without(&omega)?)?;
            omega.extend(&lambda);
            out.push(omega.clone());
        }
        Ok(out)
    }
}

impl<H: HeadOracle> HeadOracle for BoostedHead<H> {
    fn head(&self, x: &SignalMatrix) -> Result<Support> {
        Ok(self.head_rounds(x)?.pop().unwrap_or_default())
    }

    fn quality(&self) -> OracleQuality {
        let q = self.inner.quality();
        let p = q.norm.exponent();
        let lost = (1.0 - q.factor.powf(p)).powi(self.t as i32);
        OracleQuality {
            factor: (1.0 - lost).powf(1.0 / p),
            norm: q.norm,
        }
    }

    fn input_model(&self) -> CemdParams {
        self.inner.input_model()
    }

    fn output_model(&self) -> CemdParams {
        model_power(&self.inner.output_model(), self.t).expect("t >= 1")
    }
}

/// Number of boosting rounds that lifts `c_H` past the threshold `gamma`
/// required by a tail oracle with factor `c_T` under RIP constant `delta`
/// (`p = 2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostPlan {
    pub gamma: f64,
    pub t: usize,
}

pub fn boost_iterations(c_h: f64, c_t: f64, delta: f64) -> Result<BoostPlan> {
    if !(c_h > 0.0 && c_h <= 1.0) {
        return invalid(format!("c_H must be in (0, 1], got {c_h}"));
    }
    if !(c_t >= 1.0) || !(0.0..1.0).contains(&delta) {
        return invalid(format!("need c_T >= 1 and 0 <= delta < 1, got c_T = {c_t}, delta = {delta}"));
    }
    let a = 1.0 / (1.0 + c_t) - delta;
    let gamma = ((1.0 - a * a).max(0.0).sqrt() + delta) / (1.0 - delta);
    if gamma >= 1.0 || a.abs() > 1.0 {
        return Err(Error::Infeasible(format!(
            "c_T = {c_t} and delta = {delta} give gamma = {gamma} >= 1"
        )));
    }
    if c_h > gamma {
        return Ok(BoostPlan { gamma, t: 1 });
    }
    let ratio = (1.0 - gamma * gamma).ln() / (1.0 - c_h * c_h).ln();
    Ok(BoostPlan {
        gamma,
        t: ratio.ceil() as usize + 1,
    })
}

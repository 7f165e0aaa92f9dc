//! The constrained EMD (CEMD) sparsity model.
//!
//! A support belongs to the model with parameters `(k, B)` on an `h x w`
//! grid when every column holds exactly `s = k / w` positions and the sum of
//! earth mover's distances between the row sets of neighbouring columns is at
//! most `B`. Membership is tested against the subset closure: a support is a
//! member when some exactly-`s` superset meets the budget.

use crate::error::{invalid, Error, Result};
use crate::flow::FlowGraph;
use crate::signal::{Norm, SignalMatrix, Support};

/// Default cap on the number of candidate supports brute-force routines will
/// visit.
pub const DEFAULT_ENUMERATION_LIMIT: u64 = 1_000_000;

/// Model parameters: grid `h x w`, total sparsity `k` (a multiple of `w`) and
/// EMD budget `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CemdParams {
    h: usize,
    w: usize,
    k: usize,
    budget: u64,
}

impl CemdParams {
    pub fn new(h: usize, w: usize, k: usize, budget: u64) -> Result<Self> {
        if h == 0 || w == 0 {
            return invalid(format!("grid dimensions must be positive, got {h}x{w}"));
        }
        if k == 0 || k % w != 0 {
            return invalid(format!("k = {k} must be a positive multiple of w = {w}"));
        }
        if k / w > h {
            return invalid(format!("column sparsity s = {} exceeds h = {h}", k / w));
        }
        Ok(Self { h, w, k, budget })
    }

    /// Same as [`CemdParams::new`] but specified by column sparsity.
    pub fn with_sparsity(h: usize, w: usize, s: usize, budget: u64) -> Result<Self> {
        Self::new(h, w, s * w, budget)
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    /// Per-column sparsity `s = k / w`.
    pub fn sparsity(&self) -> usize {
        self.k / self.w
    }

    /// Column sparsity capped at `h`. Sums of models may describe `s > h`,
    /// which admits every column set.
    pub fn effective_sparsity(&self) -> usize {
        self.sparsity().min(self.h)
    }

    pub fn n(&self) -> usize {
        self.h * self.w
    }

    /// Copy with a different budget.
    pub fn with_budget(&self, budget: u64) -> Self {
        Self { budget, ..*self }
    }

    pub fn contains(&self, support: &Support) -> bool {
        is_member(support, self)
    }
}

/// Earth mover's distance between two equal-size sets of integers on a line:
/// the cost of matching them in sorted order.
pub fn emd(a: &[usize], b: &[usize]) -> Result<u64> {
    if a.len() != b.len() {
        return invalid(format!(
            "EMD needs equal cardinalities, got {} and {}",
            a.len(),
            b.len()
        ));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    Ok(sorted_emd(&a, &b))
}

#[inline]
pub(crate) fn sorted_emd(a: &[usize], b: &[usize]) -> u64 {
    a.iter().zip(b).map(|(&x, &y)| x.abs_diff(y) as u64).sum()
}

/// Support-EMD of `support` on an `h x w` grid.
///
/// Exactly-sparse supports sum the EMDs of neighbouring columns. Ragged
/// supports are padded to the largest column sparsity with the cheapest
/// choice of extra rows.
pub fn support_emd(support: &Support, h: usize, w: usize) -> Result<u64> {
    support.check_bounds(h, w)?;
    let s = support.max_column_sparsity();
    if s == 0 {
        return Ok(0);
    }
    Ok(completion(support, h, w, s)?.0)
}

/// Smallest support-EMD over exactly-`s` supersets of `support`, together
/// with one minimizing superset.
///
/// Solved as a min-cost flow of `s` unit paths through the grid in which
/// positions of `support` carry a large bonus, so every optimal flow covers
/// them and then minimizes the total vertical movement.
pub fn completion(support: &Support, h: usize, w: usize, s: usize) -> Result<(u64, Support)> {
    support.check_bounds(h, w)?;
    if s == 0 || s > h {
        return invalid(format!("completion sparsity {s} must be in 1..={h}"));
    }
    let columns = support.columns(w);
    if let Some((c, col)) = columns.iter().enumerate().find(|(_, col)| col.len() > s) {
        return invalid(format!(
            "column {c} holds {} positions, more than s = {s}",
            col.len()
        ));
    }
    if columns.iter().all(|col| col.len() == s) {
        let cost = columns.windows(2).map(|p| sorted_emd(&p[0], &p[1])).sum();
        return Ok((cost, support.clone()));
    }
    if w == 1 {
        let mut out = support.clone();
        let mut r = 0;
        while out.len() < s {
            out.insert(r, 0);
            r += 1;
        }
        return Ok((0, out));
    }

    let max_move = (s as u64) * (h as u64) * (w as u64);
    let bonus = (max_move + 1) as f64;
    let cell_in = |r: usize, c: usize| 1 + 2 * (c * h + r);
    let sink = 2 * h * w + 1;
    let mut g = FlowGraph::new(sink + 1);
    let mut node_arcs = Vec::with_capacity(h * w);
    for c in 0..w {
        for r in 0..h {
            let cost = if support.contains(r, c) { -bonus } else { 0.0 };
            node_arcs.push(g.add_arc(cell_in(r, c), cell_in(r, c) + 1, 1, cost));
        }
    }
    for r in 0..h {
        g.add_arc(0, cell_in(r, 0), 1, 0.0);
        g.add_arc(cell_in(r, w - 1) + 1, sink, 1, 0.0);
    }
    for c in 0..w - 1 {
        for r in 0..h {
            for r2 in 0..h {
                g.add_arc(cell_in(r, c) + 1, cell_in(r2, c + 1), 1, r.abs_diff(r2) as f64);
            }
        }
    }
    g.min_cost_flow(0, sink, s as u32)?;
    let mut out = Support::new();
    for c in 0..w {
        for r in 0..h {
            if g.flow(node_arcs[c * h + r]) > 0 {
                out.insert(r, c);
            }
        }
    }
    debug_assert!(support.is_subset(&out));
    let cols = out.columns(w);
    let cost = cols.windows(2).map(|p| sorted_emd(&p[0], &p[1])).sum();
    Ok((cost, out))
}

/// Membership in the subset closure of the model: column sparsities at most
/// `s` and some exactly-`s` superset within the EMD budget.
pub fn is_member(support: &Support, params: &CemdParams) -> bool {
    if support.check_bounds(params.h, params.w).is_err() {
        return false;
    }
    let s = params.effective_sparsity();
    if support.max_column_sparsity() > s {
        return false;
    }
    if support.is_empty() {
        return true;
    }
    match completion(support, params.h, params.w, s) {
        Ok((cost, _)) => cost <= params.budget,
        Err(_) => false,
    }
}

/// Upper bound on the natural log of the number of model supports:
/// `s ln(h/s) + k ln((B+k)/k) + (s+k)`.
///
/// This is an estimator built from the counting argument, not a certified
/// bound for every parameter choice.
pub fn log_model_size_bound(params: &CemdParams) -> f64 {
    let s = params.sparsity() as f64;
    let k = params.k as f64;
    let h = params.h as f64;
    let b = params.budget as f64;
    s * (h / s).ln() + k * ((b + k) / k).ln() + (s + k)
}

/// Number of sub-Gaussian measurements `ceil((c/delta^2)(k ln(1/delta) +
/// log|M| + t))` for the model `params + growth`.
pub fn measurement_bound(
    params: &CemdParams,
    growth: &CemdParams,
    delta: f64,
    t: f64,
    constant: f64,
) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("delta must be in (0, 1), got {delta}"));
    }
    if !(t > 0.0 && constant > 0.0) {
        return invalid("t and the constant must be positive");
    }
    let model = model_sum(params, growth)?;
    let k = model.k as f64;
    let m = constant / (delta * delta) * (k * (1.0 / delta).ln() + log_model_size_bound(&model) + t);
    Ok(m.ceil() as usize)
}

/// Parameters of the sum of two models on the same grid: `(k1 + k2, B1 + B2)`.
///
/// The result may have `s > h`; such parameters admit every column set.
pub fn model_sum(a: &CemdParams, b: &CemdParams) -> Result<CemdParams> {
    if a.h != b.h || a.w != b.w {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", a.h, a.w),
            found: format!("{}x{}", b.h, b.w),
        });
    }
    Ok(CemdParams {
        h: a.h,
        w: a.w,
        k: a.k + b.k,
        budget: a.budget + b.budget,
    })
}

/// `t`-fold sum of a model with itself.
pub fn model_power(a: &CemdParams, t: usize) -> Result<CemdParams> {
    if t == 0 {
        return invalid("model power needs t >= 1");
    }
    Ok(CemdParams {
        k: a.k * t,
        budget: a.budget * t as u64,
        ..*a
    })
}

fn binomial(n: usize, r: usize) -> f64 {
    if r > n {
        return 0.0;
    }
    let r = r.min(n - r);
    (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Number of exactly-`s` column choices per grid, `C(h, s)^w`.
pub fn predicted_enumeration_size(params: &CemdParams) -> f64 {
    binomial(params.h, params.sparsity()).powi(params.w as i32)
}

fn combinations(h: usize, s: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..s).collect();
    if s > h {
        return out;
    }
    loop {
        out.push(cur.clone());
        let mut i = s;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < h - s + i {
                cur[i] += 1;
                for j in i + 1..s {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Depth-first enumeration of the exactly-`s` supports within the budget.
///
/// Order: column 0's row set varies slowest, row sets in lexicographic
/// order. Branches whose partial EMD already exceeds the budget are pruned.
pub struct SupportEnumerator {
    combos: Vec<Vec<usize>>,
    pair_cost: Option<Vec<u64>>,
    w: usize,
    budget: u64,
    idx: Vec<usize>,
    cum: Vec<u64>,
    depth: usize,
    exhausted: bool,
    yielded: bool,
}

impl SupportEnumerator {
    fn new(params: &CemdParams) -> Self {
        let combos = combinations(params.h, params.sparsity());
        let c = combos.len();
        let pair_cost = (c <= 1024).then(|| {
            let mut t = vec![0; c * c];
            for i in 0..c {
                for j in 0..c {
                    t[i * c + j] = sorted_emd(&combos[i], &combos[j]);
                }
            }
            t
        });
        Self {
            exhausted: combos.is_empty(),
            combos,
            pair_cost,
            w: params.w,
            budget: params.budget,
            idx: vec![0; params.w],
            cum: vec![0; params.w],
            depth: 0,
            yielded: false,
        }
    }

    fn cost(&self, a: usize, b: usize) -> u64 {
        match &self.pair_cost {
            Some(t) => t[a * self.combos.len() + b],
            None => sorted_emd(&self.combos[a], &self.combos[b]),
        }
    }

    /// Advances to the next member; the current one is then available via
    /// [`SupportEnumerator::current`].
    pub fn advance(&mut self) -> bool {
        if self.exhausted {
            return false;
        }
        if self.yielded {
            self.depth -= 1;
            self.idx[self.depth] += 1;
        }
        self.yielded = false;
        loop {
            if self.idx[self.depth] >= self.combos.len() {
                if self.depth == 0 {
                    self.exhausted = true;
                    return false;
                }
                self.depth -= 1;
                self.idx[self.depth] += 1;
                continue;
            }
            let cost = if self.depth == 0 {
                0
            } else {
                self.cum[self.depth - 1] + self.cost(self.idx[self.depth - 1], self.idx[self.depth])
            };
            if cost > self.budget {
                self.idx[self.depth] += 1;
                continue;
            }
            self.cum[self.depth] = cost;
            self.depth += 1;
            if self.depth == self.w {
                self.yielded = true;
                return true;
            }
            self.idx[self.depth] = 0;
        }
    }

    /// Row sets of the current member, one per column.
    pub fn current(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.idx.iter().map(move |&i| self.combos[i].as_slice())
    }

    /// Indices into [`SupportEnumerator::column_sets`] of the current member.
    pub fn current_indices(&self) -> &[usize] {
        &self.idx
    }

    /// All candidate row sets of a single column, in enumeration order.
    pub fn column_sets(&self) -> &[Vec<usize>] {
        &self.combos
    }

    /// Support-EMD of the current member.
    pub fn current_emd(&self) -> u64 {
        self.cum[self.w - 1]
    }

    fn current_support(&self) -> Support {
        Support::from_columns(&self.current().collect::<Vec<_>>())
    }
}

impl Iterator for SupportEnumerator {
    type Item = Support;

    fn next(&mut self) -> Option<Support> {
        self.advance().then(|| self.current_support())
    }
}

/// Every exactly-`s` support with support-EMD at most `B`, each once, in a
/// deterministic order. Refuses when `C(h, s)^w` exceeds `limit`.
pub fn enumerate_supports(params: &CemdParams, limit: u64) -> Result<SupportEnumerator> {
    let predicted = predicted_enumeration_size(params);
    if predicted > limit as f64 {
        return Err(Error::EnumerationTooLarge { predicted, limit });
    }
    Ok(SupportEnumerator::new(params))
}

/// Brute-force maximizer of `sum_{Omega} |x|^p` over the model, returned
/// with its value. Ties keep the first support in enumeration order.
pub fn best_head_support(
    x: &SignalMatrix,
    params: &CemdParams,
    norm: Norm,
    limit: u64,
) -> Result<(Support, f64)> {
    check_grid(x, params)?;
    let mut it = enumerate_supports(params, limit)?;
    // per column, the captured mass of each candidate row set
    let col_mass: Vec<Vec<f64>> = (0..params.w)
        .map(|c| {
            let col = x.column(c);
            it.column_sets()
                .iter()
                .map(|rows| rows.iter().map(|&r| norm.power(col[r])).sum())
                .collect()
        })
        .collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    while it.advance() {
        let v: f64 = it
            .current_indices()
            .iter()
            .enumerate()
            .map(|(c, &i)| col_mass[c][i])
            .sum();
        if best.as_ref().map_or(true, |(_, b)| v > *b) {
            best = Some((it.current_indices().to_vec(), v));
        }
    }
    let (idx, value) = best.ok_or_else(|| Error::Infeasible("model has no supports".into()))?;
    let sets = it.column_sets();
    let cols: Vec<&[usize]> = idx.iter().map(|&i| sets[i].as_slice()).collect();
    Ok((Support::from_columns(&cols), value))
}

/// Exact head projection: a model support maximizing `||x_Omega||_p`.
pub fn exact_head_project(x: &SignalMatrix, params: &CemdParams, norm: Norm) -> Result<Support> {
    best_head_support(x, params, norm, DEFAULT_ENUMERATION_LIMIT).map(|(s, _)| s)
}

/// Exact tail projection: a model support minimizing `||x - x_Omega||_p`.
/// Since `||x - x_Omega||_p^p = ||x||_p^p - ||x_Omega||_p^p`, the minimizer
/// is the head maximizer.
pub fn exact_tail_project(x: &SignalMatrix, params: &CemdParams, norm: Norm) -> Result<Support> {
    exact_head_project(x, params, norm)
}

pub(crate) fn check_grid(x: &SignalMatrix, params: &CemdParams) -> Result<()> {
    if x.rows() != params.h || x.cols() != params.w {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{} grid", params.h, params.w),
            found: format!("{}x{}", x.rows(), x.cols()),
        });
    }
    Ok(())
}

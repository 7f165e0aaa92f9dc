//! Tail approximation for the CEMD model via min-cost flow and a binary
//! search over the Lagrange multiplier of the EMD constraint.

use std::fmt::Write as _;

use crate::error::{invalid, Result};
use crate::flow::{ArcId, FlowGraph};
use crate::head::Path;
use crate::model::{check_grid, is_member, sorted_emd, CemdParams};
use crate::oracle::TailOracle;
use crate::signal::{tail_power, Norm, OracleQuality, SignalMatrix, Support};

/// Hard cap on binary-search probes.
pub const MAX_SEARCH_ITERATIONS: usize = 200;

/// The EMD flow network for a signal, a column sparsity `s` and a
/// multiplier `lambda`.
///
/// Node 0 is the source and `2hw + 1` the sink. Cell `(r, c)` is split into
/// an in-node `1 + 2(c h + r)` and the following out-node; the arc between
/// them has cost `-|X_{r,c}|^p`. Moving from row `r` in column `c` to row
/// `r'` in column `c + 1` costs `lambda |r - r'|`. All capacities are 1.
#[derive(Debug, Clone)]
pub struct EmdFlowNetwork {
    h: usize,
    w: usize,
    s: usize,
    lambda: f64,
    weights: SignalMatrix,
    graph: FlowGraph,
    cell_arcs: Vec<ArcId>,
}

/// Optimal flow of an [`EmdFlowNetwork`] read back as a support.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    pub support: Support,
    pub cost: f64,
    /// `s` non-crossing paths: path `j` visits the `j`-th smallest selected
    /// row of every column.
    pub paths: Vec<Path>,
    pub emd: u64,
}

pub fn build_network(
    x: &SignalMatrix,
    params: &CemdParams,
    lambda: f64,
    norm: Norm,
) -> Result<EmdFlowNetwork> {
    check_grid(x, params)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return invalid(format!("lambda must be a nonnegative number, got {lambda}"));
    }
    let (h, w) = (params.h(), params.w());
    let weights = x.powered(norm);
    let sink = 2 * h * w + 1;
    let cell_in = |r: usize, c: usize| 1 + 2 * (c * h + r);
    let mut graph = FlowGraph::new(sink + 1);
    let mut cell_arcs = Vec::with_capacity(h * w);
    for c in 0..w {
        for r in 0..h {
            cell_arcs.push(graph.add_arc(cell_in(r, c), cell_in(r, c) + 1, 1, -weights.get(r, c)));
        }
    }
    for r in 0..h {
        graph.add_arc(0, cell_in(r, 0), 1, 0.0);
    }
    for c in 0..w.saturating_sub(1) {
        for r in 0..h {
            for r2 in 0..h {
                let cost = lambda * r.abs_diff(r2) as f64;
                graph.add_arc(cell_in(r, c) + 1, cell_in(r2, c + 1), 1, cost);
            }
        }
    }
    for r in 0..h {
        graph.add_arc(cell_in(r, w - 1) + 1, sink, 1, 0.0);
    }
    Ok(EmdFlowNetwork {
        h,
        w,
        s: params.sparsity(),
        lambda,
        weights,
        graph,
        cell_arcs,
    })
}

impl EmdFlowNetwork {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn arc_count(&self) -> usize {
        self.graph.arc_count()
    }

    /// Cost of the arc through cell `(r, c)`.
    pub fn cell_cost(&self, r: usize, c: usize) -> f64 {
        self.graph.arc_cost(self.cell_arcs[c * self.h + r])
    }

    /// Cost of moving between two rows of neighbouring columns.
    pub fn move_cost(&self, r: usize, r2: usize) -> f64 {
        self.lambda * r.abs_diff(r2) as f64
    }
}

/// Sends `s` units through the network at minimum cost.
///
/// Checks that the cost equals `-||X_Omega||_p^p + lambda EMD(Omega)` for
/// the selected support.
pub fn min_cost_flow(mut network: EmdFlowNetwork) -> Result<FlowSolution> {
    let (h, w, s) = (network.h, network.w, network.s);
    if s == 0 || s > h {
        return invalid(format!("column sparsity {s} cannot be routed through {h} rows"));
    }
    let sink = network.graph.node_count() - 1;
    let cost = network.graph.min_cost_flow(0, sink, s as u32)?;
    let mut support = Support::new();
    let mut columns = vec![Vec::with_capacity(s); w];
    for c in 0..w {
        for r in 0..h {
            let f = network.graph.flow(network.cell_arcs[c * h + r]);
            debug_assert!(f == 0 || f == 1);
            if f == 1 {
                support.insert(r, c);
                columns[c].push(r);
            }
        }
    }
    let emd: u64 = columns.windows(2).map(|p| sorted_emd(&p[0], &p[1])).sum();
    let mass = network.weights.power_sum_on(&support, Norm::L1);
    let expected = -mass + network.lambda * emd as f64;
    let scale = mass + network.lambda * emd as f64;
    assert!(
        (cost - expected).abs() <= 1e-9 * scale.max(1e-300),
        "flow cost {cost} does not match the support cost {expected}"
    );
    let paths = (0..s)
        .map(|j| Path {
            rows: columns.iter().map(|col| col[j]).collect(),
        })
        .collect();
    Ok(FlowSolution {
        support,
        cost,
        paths,
        emd,
    })
}

/// Bicriterion slack of the tail search: EMD blow-up `d > 1` and additive
/// slack `delta > 0`, giving tail factor `c = 1 + 1/(d - 1) + delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailParams {
    d: f64,
    delta: f64,
}

impl Default for TailParams {
    fn default() -> Self {
        Self { d: 2.0, delta: 0.1 }
    }
}

impl TailParams {
    pub fn new(d: f64, delta: f64) -> Result<Self> {
        if !(d > 1.0 && d.is_finite()) {
            return invalid(format!("d must exceed 1, got {d}"));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return invalid(format!("delta must be positive, got {delta}"));
        }
        Ok(Self { d, delta })
    }

    /// Parameters achieving tail factor `c` (in `p`-th power) with slack
    /// `delta`; requires `c > 1` and `0 < delta < c - 1`.
    pub fn from_c(c: f64, delta: f64) -> Result<Self> {
        if !(c > 1.0 && delta > 0.0 && delta < c - 1.0) {
            return invalid(format!("need c > 1 and 0 < delta < c - 1, got c = {c}, delta = {delta}"));
        }
        Self::new(1.0 + 1.0 / (c - delta - 1.0), delta)
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn c(&self) -> f64 {
        1.0 + 1.0 / (self.d - 1.0) + self.delta
    }

    /// EMD budget of the output model, `floor(d B)`.
    pub fn output_budget(&self, budget: u64) -> u64 {
        (self.d * budget as f64).floor() as u64
    }
}

/// One min-cost-flow solve of the search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub lambda: f64,
    pub emd: u64,
    /// `||X - X_Omega||_p^p`.
    pub tail: f64,
}

/// Probe history as CSV with header `lambda,emd,tail`.
pub fn probes_to_csv(probes: &[Probe]) -> String {
    let mut out = String::from("lambda,emd,tail\n");
    for p in probes {
        let _ = writeln!(out, "{},{},{}", p.lambda, p.emd, p.tail);
    }
    out
}

/// Tail approximation.
///
/// Either `B <= EMD(Omega) <= dB` and the tail is at most the best tail in
/// the model, or `EMD(Omega) <= B` and the tail is at most `c` times it (both
/// in `p`-th power).
pub fn tail_approx(
    x: &SignalMatrix,
    params: &CemdParams,
    tail: &TailParams,
    norm: Norm,
) -> Result<Support> {
    tail_approx_traced(x, params, tail, norm).map(|(s, _)| s)
}

/// [`tail_approx`] together with every probe it made.
pub fn tail_approx_traced(
    x: &SignalMatrix,
    params: &CemdParams,
    tail: &TailParams,
    norm: Norm,
) -> Result<(Support, Vec<Probe>)> {
    check_grid(x, params)?;
    let (h, w) = (params.h() as f64, params.w() as f64);
    let budget = params.budget();
    let upper = tail.d * budget as f64;
    let mut probes = Vec::new();
    let solve = |lambda: f64, probes: &mut Vec<Probe>| -> Result<FlowSolution> {
        let sol = min_cost_flow(build_network(x, params, lambda, norm)?)?;
        probes.push(Probe {
            lambda,
            emd: sol.emd,
            tail: tail_power(x, &sol.support, norm),
        });
        Ok(sol)
    };

    let x_min = x
        .as_slice()
        .iter()
        .map(|&v| norm.power(v))
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !x_min.is_finite() {
        // zero signal: every support has zero tail
        let straight: Vec<Vec<usize>> = vec![(0..params.sparsity()).collect(); params.w()];
        return Ok((Support::from_columns(&straight), probes));
    }

    let lambda0 = x_min / (2.0 * w * h * h);
    let sol = solve(lambda0, &mut probes)?;
    if probes[0].tail == 0.0 && is_member(&sol.support, params) {
        return Ok((sol.support, probes));
    }

    let eps = x_min * tail.delta / (w * h * h);
    let mut lambda_r = 0.0;
    let mut lambda_l = x.power_sum(norm);
    let mut iters = 0;
    while lambda_l - lambda_r > eps && iters < MAX_SEARCH_ITERATIONS {
        iters += 1;
        let lambda_m = 0.5 * (lambda_l + lambda_r);
        if lambda_m <= lambda_r || lambda_m >= lambda_l {
            break;
        }
        let sol = solve(lambda_m, &mut probes)?;
        let e = sol.emd as f64;
        if budget as f64 <= e && e <= upper {
            return Ok((sol.support, probes));
        }
        if e > upper {
            lambda_r = lambda_m;
        } else {
            lambda_l = lambda_m;
        }
    }
    let sol = solve(lambda_l, &mut probes)?;
    Ok((sol.support, probes))
}

/// [`tail_approx`] as an oracle with `c_T = c^{1/p}` and output model
/// `(k, floor(d B))`.
#[derive(Debug, Clone)]
pub struct TailApprox {
    params: CemdParams,
    tail: TailParams,
    norm: Norm,
}

impl TailApprox {
    pub fn new(params: CemdParams, tail: TailParams, norm: Norm) -> Self {
        Self { params, tail, norm }
    }

    pub fn tail_params(&self) -> TailParams {
        self.tail
    }
}

impl TailOracle for TailApprox {
    fn tail(&self, x: &SignalMatrix) -> Result<Support> {
        tail_approx(x, &self.params, &self.tail, self.norm)
    }

    fn quality(&self) -> OracleQuality {
        OracleQuality {
            factor: self.norm.root(self.tail.c()),
            norm: self.norm,
        }
    }

    fn input_model(&self) -> CemdParams {
        self.params
    }

    fn output_model(&self) -> CemdParams {
        self.params
            .with_budget(self.tail.output_budget(self.params.budget()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{best_head_support, enumerate_supports, support_emd};
    use proptest::prelude::*;

    fn fig2() -> SignalMatrix {
        SignalMatrix::from_rows(&[[1.0, 3.0, 1.0], [0.0, 1.0, 2.0], [4.0, 2.0, 0.0]]).unwrap()
    }

    fn fig3() -> SignalMatrix {
        SignalMatrix::from_rows(&[[1.0, 3.0], [0.0, -1.0], [2.0, 1.0]]).unwrap()
    }

    #[test]
    fn figure_three_costs() {
        let p = CemdParams::new(3, 2, 2, 1).unwrap();
        let g = build_network(&fig3(), &p, 2.0, Norm::L1).unwrap();
        let col0: Vec<f64> = (0..3).map(|r| g.cell_cost(r, 0)).collect();
        let col1: Vec<f64> = (0..3).map(|r| g.cell_cost(r, 1)).collect();
        assert_eq!(col0, vec![-1.0, 0.0, -2.0]);
        assert_eq!(col1, vec![-3.0, -1.0, -1.0]);
        assert_eq!(g.move_cost(0, 2), 4.0);
        assert_eq!(g.node_count(), 14);
    }

    #[test]
    fn figure_three_flows() {
        let p = CemdParams::new(3, 2, 2, 1).unwrap();
        let sol = min_cost_flow(build_network(&fig3(), &p, 0.0, Norm::L1).unwrap()).unwrap();
        assert_eq!(sol.paths[0].rows, vec![2, 0]);
        assert_eq!(sol.cost, -5.0);
        let sol = min_cost_flow(build_network(&fig3(), &p, 3.0, Norm::L1).unwrap()).unwrap();
        assert_eq!(sol.paths[0].rows, vec![0, 0]);
        assert_eq!(sol.cost, -4.0);
    }

    #[test]
    fn zero_lambda_decouples_columns() {
        let p = CemdParams::new(3, 3, 6, 0).unwrap();
        let sol = min_cost_flow(build_network(&fig2(), &p, 0.0, Norm::L1).unwrap()).unwrap();
        // two largest per column: 4+1, 3+2, 2+1
        assert_eq!(sol.cost, -13.0);
    }

    #[test]
    fn single_column_takes_largest() {
        let x = SignalMatrix::from_rows(&[[1.0], [5.0], [-7.0], [2.0]]).unwrap();
        let p = CemdParams::new(4, 1, 2, 0).unwrap();
        let sol = min_cost_flow(build_network(&x, &p, 1.0, Norm::L2).unwrap()).unwrap();
        assert_eq!(sol.support, Support::from_iter([(1, 0), (2, 0)]));
        assert_eq!(sol.cost, -74.0);
    }

    #[test]
    fn saturated_network() {
        let p = CemdParams::new(3, 2, 6, 0).unwrap();
        let sol = min_cost_flow(build_network(&fig3(), &p, 1.5, Norm::L1).unwrap()).unwrap();
        assert_eq!(sol.support, Support::full(3, 2));
        assert_eq!(sol.emd, 0);
        assert_eq!(sol.cost, -8.0);
    }

    #[test]
    fn tail_params_relations() {
        let t = TailParams::new(2.0, 0.1).unwrap();
        assert!((t.c() - 2.1).abs() < 1e-15);
        let back = TailParams::from_c(2.1, 0.1).unwrap();
        assert!((back.d() - 2.0).abs() < 1e-12);
        assert!(TailParams::new(1.0, 0.1).is_err());
        assert!(TailParams::new(2.0, 0.0).is_err());
        assert!(TailParams::from_c(1.5, 0.6).is_err());
    }

    #[test]
    fn oracle_declarations() {
        let p = CemdParams::new(4, 2, 2, 3).unwrap();
        let o = TailApprox::new(p, TailParams::new(2.0, 0.1).unwrap(), Norm::L2);
        assert!((o.quality().factor - 2.1f64.sqrt()).abs() < 1e-12);
        assert_eq!(o.output_model().budget(), 6);
        let o = TailApprox::new(p, TailParams::new(3.0, 0.5).unwrap(), Norm::L1);
        assert!((o.quality().factor - 2.0).abs() < 1e-12);
        assert_eq!(o.output_model().budget(), 9);
    }

    #[test]
    fn figure_two_bicriterion() {
        let p = CemdParams::new(3, 3, 3, 1).unwrap();
        let t = TailParams::new(3.0, 0.5).unwrap();
        let omega = tail_approx(&fig2(), &p, &t, Norm::L1).unwrap();
        let err = tail_power(&fig2(), &omega, Norm::L1);
        let emd = support_emd(&omega, 3, 3).unwrap();
        assert!((emd <= 1 && err <= 12.0) || (emd <= 3 && err <= 6.0));
    }

    #[test]
    fn zero_signal_tail() {
        let p = CemdParams::new(3, 3, 3, 1).unwrap();
        let z = SignalMatrix::zeros(3, 3);
        let omega = tail_approx(&z, &p, &TailParams::default(), Norm::L2).unwrap();
        assert!(is_member(&omega, &p));
        assert_eq!(tail_power(&z, &omega, Norm::L2), 0.0);
    }

    #[test]
    fn probe_csv() {
        let p = CemdParams::new(3, 3, 3, 1).unwrap();
        let (_, probes) =
            tail_approx_traced(&fig2(), &p, &TailParams::new(3.0, 0.5).unwrap(), Norm::L1).unwrap();
        let csv = probes_to_csv(&probes);
        assert!(csv.starts_with("lambda,emd,tail\n"));
        assert_eq!(csv.lines().count(), probes.len() + 1);
    }

    #[test]
    fn scaling_keeps_support() {
        let p = CemdParams::new(3, 3, 3, 1).unwrap();
        let t = TailParams::new(3.0, 0.5).unwrap();
        let a = tail_approx(&fig2(), &p, &t, Norm::L2).unwrap();
        let b = tail_approx(&fig2().scale(8.0), &p, &t, Norm::L2).unwrap();
        assert_eq!(a, b);
    }

    fn instance() -> impl Strategy<Value = (SignalMatrix, usize, u64)> {
        (1usize..=5, 1usize..=4, 1usize..=2, 0u64..=3).prop_flat_map(|(h, w, s, b)| {
            proptest::collection::vec(
                prop_oneof![Just(0.0), -3.0f64..3.0],
                h * w,
            )
            .prop_map(move |v| (SignalMatrix::new(h, w, v).unwrap(), s.min(h), b))
        })
    }

    proptest! {
        #[test]
        fn flow_is_lagrangian_optimum(
            (x, s, _) in instance(),
            lambda in prop_oneof![Just(0.0), Just(0.5), Just(1.0), Just(3.0)],
            p in 1u32..=2,
        ) {
            let norm = Norm::from_index(p).unwrap();
            let params = CemdParams::with_sparsity(x.rows(), x.cols(), s, u64::MAX / 4).unwrap();
            let sol = min_cost_flow(build_network(&x, &params, lambda, norm).unwrap()).unwrap();
            let total = x.power_sum(norm);
            let mut best = f64::INFINITY;
            for omega in enumerate_supports(&params, 1 << 20).unwrap() {
                let e = support_emd(&omega, x.rows(), x.cols()).unwrap();
                best = best.min(tail_power(&x, &omega, norm) + lambda * e as f64);
            }
            prop_assert!((sol.cost + total - best).abs() <= 1e-9 * total.max(1.0));
            for pair in sol.paths.windows(2) {
                prop_assert!(pair[0].rows.iter().zip(&pair[1].rows).all(|(a, b)| a < b));
            }
        }

        #[test]
        fn bicriterion_against_brute_force(
            (x, s, b) in instance(),
            p in 1u32..=2,
        ) {
            let norm = Norm::from_index(p).unwrap();
            let params = CemdParams::with_sparsity(x.rows(), x.cols(), s, b).unwrap();
            let t = TailParams::new(3.0, 0.5).unwrap();
            let (omega, probes) = tail_approx_traced(&x, &params, &t, norm).unwrap();
            let (star, _) = best_head_support(&x, &params, norm, 1 << 20).unwrap();
            let opt = tail_power(&x, &star, norm);
            let err = tail_power(&x, &omega, norm);
            let emd = support_emd(&omega, x.rows(), x.cols()).unwrap();
            let case1 = b <= emd && emd as f64 <= 3.0 * b as f64 && err <= opt * (1.0 + 1e-9) + 1e-12;
            let case2 = emd <= b && err <= t.c() * opt * (1.0 + 1e-9) + 1e-12;
            prop_assert!(case1 || case2, "emd {} err {} opt {}", emd, err, opt);
            let mut sorted = probes.clone();
            sorted.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
            prop_assert!(sorted.windows(2).all(|p| p[0].emd >= p[1].emd));
        }

        #[test]
        fn in_model_signal_has_zero_tail(
            (x, s, b) in instance(),
            p in 1u32..=2,
        ) {
            let norm = Norm::from_index(p).unwrap();
            let params = CemdParams::with_sparsity(x.rows(), x.cols(), s, b).unwrap();
            let omega_in = crate::head::head_approx(&x, &params.with_budget(0), norm).unwrap();
            let y = crate::signal::restrict(&x, &omega_in).unwrap();
            let omega = tail_approx(&y, &params, &TailParams::new(3.0, 0.5).unwrap(), norm).unwrap();
            prop_assert_eq!(tail_power(&y, &omega, norm), 0.0);
            prop_assert!(support_emd(&omega, x.rows(), x.cols()).unwrap() <= b);
        }
    }
}

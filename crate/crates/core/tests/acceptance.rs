//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::time::{Duration, Instant};

use cemd::head::{boost_head, boost_iterations, harmonic, head_approx, HeadApprox};
use cemd::measurement::{
    apply, estimate_model_rip, random_model_support, DenseOperator, ExpanderOperator,
};
use cemd::model::{is_member, log_model_size_bound, model_sum, support_emd};
use cemd::oracle::{ExactHead, ExactTail, HeadOracle};
use cemd::recovery::{
    adversarial_demo, am_cosamp, am_iht, am_iht_rip1, constants, ConvergenceConstants,
    RecoveryConfig, RecoveryOutput, Variant,
};
use cemd::tail::{build_network, min_cost_flow, tail_approx, TailApprox, TailParams};
use cemd::{lp_norm, CemdParams, Norm, OracleQuality, Result, SignalMatrix, Support};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const REL: f64 = 1e-9;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---- independent brute-force references -------------------------------

fn subsets(h: usize, s: usize) -> Vec<Vec<usize>> {
    (0u32..1 << h)
        .filter(|m| m.count_ones() as usize == s)
        .map(|m| (0..h).filter(|&r| m >> r & 1 == 1).collect())
        .collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn bijection_emd(a: &[usize], b: &[usize]) -> u64 {
    permutations(a.len())
        .iter()
        .map(|p| a.iter().zip(p).map(|(&x, &j)| x.abs_diff(b[j]) as u64).sum())
        .min()
        .unwrap()
}

/// Every exactly-`s` support on the grid with its support-EMD.
fn all_supports(h: usize, w: usize, s: usize) -> Vec<(Vec<Vec<usize>>, u64)> {
    let sets = subsets(h, s);
    let mut out: Vec<(Vec<Vec<usize>>, u64)> = vec![(vec![], 0)];
    for _ in 0..w {
        let mut next = Vec::new();
        for (cols, e) in &out {
            for set in &sets {
                let add = cols.last().map_or(0, |prev| bijection_emd(prev, set));
                let mut c = cols.clone();
                c.push(set.clone());
                next.push((c, e + add));
            }
        }
        out = next;
    }
    out
}

fn mass(x: &SignalMatrix, cols: &[Vec<usize>], norm: Norm) -> f64 {
    cols.iter()
        .enumerate()
        .flat_map(|(c, rows)| rows.iter().map(move |&r| (r, c)))
        .map(|(r, c)| norm.power(x.get(r, c)))
        .sum()
}

/// Best `||x_Omega||_p^p` over the model.
fn brute_head(x: &SignalMatrix, p: &CemdParams, norm: Norm) -> f64 {
    all_supports(p.h(), p.w(), p.sparsity())
        .iter()
        .filter(|(_, e)| *e <= p.budget())
        .map(|(cols, _)| mass(x, cols, norm))
        .fold(0.0, f64::max)
}

fn random_signal(rng: &mut ChaCha8Rng, h: usize, w: usize) -> SignalMatrix {
    let v = (0..h * w).map(|_| rng.sample(StandardNormal)).collect();
    SignalMatrix::new(h, w, v).unwrap()
}

fn in_model_signal(rng: &mut ChaCha8Rng, p: &CemdParams) -> SignalMatrix {
    let support = random_model_support(p, rng);
    let mut x = SignalMatrix::zeros(p.h(), p.w());
    for (r, c) in support.iter() {
        let mut v: f64 = rng.sample(StandardNormal);
        while v == 0.0 {
            v = rng.sample(StandardNormal);
        }
        x.set(r, c, v);
    }
    x
}

fn random_small_params(rng: &mut ChaCha8Rng, max_h: usize) -> CemdParams {
    let h = rng.gen_range(1..=max_h);
    let w = rng.gen_range(1..=4);
    let s = rng.gen_range(1..=2usize).min(h);
    let b = rng.gen_range(0..=3);
    CemdParams::with_sparsity(h, w, s, b).unwrap()
}

// ---- criteria ------------------------------------------------------------

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut violations = 0;
    for i in 0..200 {
        let p = random_small_params(&mut rng, 6);
        let norm = if i % 2 == 0 { Norm::L2 } else { Norm::L1 };
        let x = random_signal(&mut rng, p.h(), p.w());
        let omega = head_approx(&x, &p, norm).unwrap();
        let got = x.power_sum_on(&omega, norm);
        let opt = brute_head(&x, &p, norm);
        let emd = support_emd(&omega, p.h(), p.w()).unwrap();
        let emd_cap = harmonic(p.sparsity()).ceil() as u64 * p.budget();
        if got < 0.25 * opt * (1.0 - REL) || emd > emd_cap {
            violations += 1;
        }
    }
    let took = start.elapsed();
    outcome(
        violations == 0 && took < Duration::from_secs(30),
        format!("{violations} violations in 200 instances, {took:.2?}"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = TailParams::new(3.0, 0.5).unwrap();
    let mut violations = 0;
    for i in 0..200 {
        let p = random_small_params(&mut rng, 6);
        let norm = if i % 2 == 0 { Norm::L2 } else { Norm::L1 };
        let x = random_signal(&mut rng, p.h(), p.w());
        let omega = tail_approx(&x, &p, &t, norm).unwrap();
        let total = x.power_sum(norm);
        let opt = total - brute_head(&x, &p, norm);
        let err = cemd::signal::tail_power(&x, &omega, norm);
        let emd = support_emd(&omega, p.h(), p.w()).unwrap() as f64;
        let b = p.budget() as f64;
        let slack = REL * total;
        let case1 = b <= emd && emd <= t.d() * b && err <= opt + slack;
        let case2 = emd <= b && err <= t.c() * opt + slack;
        if !(case1 || case2) {
            violations += 1;
        }
    }
    let mut exact = 0;
    for i in 0..100 {
        let p = random_small_params(&mut rng, 6);
        let norm = if i % 2 == 0 { Norm::L2 } else { Norm::L1 };
        let x = in_model_signal(&mut rng, &p);
        let omega = tail_approx(&x, &p, &t, norm).unwrap();
        let emd = support_emd(&omega, p.h(), p.w()).unwrap();
        if cemd::signal::tail_power(&x, &omega, norm) == 0.0 && emd <= p.budget() {
            exact += 1;
        }
    }
    outcome(
        violations == 0 && exact == 100,
        format!("{violations} bicriterion violations in 200, in-model exact {exact}/100"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lambdas = [0.0, 0.5, 1.0, 3.0];
    let mut worst: f64 = 0.0;
    let mut mismatches = 0;
    for i in 0..100 {
        let h = rng.gen_range(1..=5);
        let w = rng.gen_range(1..=4);
        let s = rng.gen_range(1..=2usize).min(h);
        let lambda = lambdas[i % 4];
        let norm = if rng.gen() { Norm::L2 } else { Norm::L1 };
        let p = CemdParams::with_sparsity(h, w, s, 0).unwrap();
        let x = random_signal(&mut rng, h, w);
        let sol = min_cost_flow(build_network(&x, &p, lambda, norm).unwrap()).unwrap();
        let best = all_supports(h, w, s)
            .iter()
            .map(|(cols, e)| -mass(&x, cols, norm) + lambda * *e as f64)
            .fold(f64::INFINITY, f64::min);
        let scale = x.power_sum(norm).max(1.0);
        let gap = (sol.cost - best).abs() / scale;
        worst = worst.max(gap);
        if gap > REL {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} mismatches in 100 networks, worst relative gap {worst:.1e}"),
    )
}

/// Head oracle with `c_H = 1/2` (p = 2) that returns the weakest support
/// still meeting its guarantee: the smallest captured mass at least a
/// quarter of the optimum.
struct HalfHead {
    params: CemdParams,
}

impl HeadOracle for HalfHead {
    fn head(&self, x: &SignalMatrix) -> Result<Support> {
        let p = &self.params;
        let cands: Vec<(Vec<Vec<usize>>, f64)> = all_supports(p.h(), p.w(), p.sparsity())
            .into_iter()
            .filter(|(_, e)| *e <= p.budget())
            .map(|(cols, _)| {
                let m = mass(x, &cols, Norm::L2);
                (cols, m)
            })
            .collect();
        let opt = cands.iter().map(|(_, m)| *m).fold(0.0, f64::max);
        let target = 0.25 * opt;
        let (cols, _) = cands
            .iter()
            .filter(|(_, m)| *m >= target)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        Ok(Support::from_columns(cols))
    }
    fn quality(&self) -> OracleQuality {
        OracleQuality::head(0.5, Norm::L2).unwrap()
    }
    fn input_model(&self) -> CemdParams {
        self.params
    }
    fn output_model(&self) -> CemdParams {
        self.params
    }
}

fn criterion_4() -> Outcome {
    let mut instances = Vec::new();
    // rows of squared mass 12, 3, 2.25, 0.75: exactly a quarter is reachable
    let rows = [2.0, 1.0, 0.75f64.sqrt(), 0.25f64.sqrt()];
    let block = SignalMatrix::new(4, 3, (0..12).map(|i| rows[i % 4]).collect()).unwrap();
    instances.push((CemdParams::with_sparsity(4, 3, 1, 0).unwrap(), block));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..60 {
        let h = rng.gen_range(2..=5);
        let w = rng.gen_range(1..=3);
        let p = CemdParams::with_sparsity(h, w, 1, rng.gen_range(0..=2)).unwrap();
        instances.push((p, random_signal(&mut rng, h, w)));
    }
    let mut violations = 0;
    let mut tight = 0;
    for (p, x) in &instances {
        let opt = brute_head(x, p, Norm::L2).sqrt();
        for t in 1..=3 {
            let boosted = boost_head(HalfHead { params: *p }, t).unwrap();
            let got = x.power_sum_on(&boosted.head(x).unwrap(), Norm::L2).sqrt();
            let want = (1.0 - 0.75f64.powi(t as i32)).sqrt();
            if (boosted.quality().factor - want).abs() > 1e-12 || got < want * opt * (1.0 - REL) {
                violations += 1;
            }
            if (got - want * opt).abs() <= 1e-12 * opt {
                tight += 1;
            }
        }
    }
    outcome(
        violations == 0,
        format!(
            "{violations} violations over {} instances x t in 1..=3, {tight} tight",
            instances.len()
        ),
    )
}

struct RecoverySetup {
    params: CemdParams,
    tail: TailApprox,
    head: cemd::head::BoostedHead<HeadApprox>,
}

fn recovery_setup() -> RecoverySetup {
    let params = CemdParams::with_sparsity(8, 4, 1, 4).unwrap();
    let tail = TailApprox::new(params, TailParams::new(2.0, 0.1).unwrap(), Norm::L2);
    use cemd::oracle::TailOracle;
    let head_model = model_sum(&tail.output_model(), &params).unwrap();
    let plan = boost_iterations(0.5, tail.quality().factor, 0.0).unwrap();
    let head = boost_head(HeadApprox::new(head_model, Norm::L2), plan.t).unwrap();
    RecoverySetup { params, tail, head }
}

fn estimated_constants(
    setup: &RecoverySetup,
    a: &DenseOperator,
    variant: Variant,
    seed: u64,
) -> (f64, ConvergenceConstants) {
    use cemd::oracle::TailOracle;
    let scope = model_sum(
        &model_sum(&setup.params, &setup.tail.output_model()).unwrap(),
        &setup.head.output_model(),
    )
    .unwrap();
    let delta = estimate_model_rip(a, &scope, None, 200, Norm::L2, seed)
        .unwrap()
        .delta_lower;
    let k = constants(
        setup.head.quality().factor,
        setup.tail.quality().factor,
        delta,
        variant,
        4.0,
    );
    (delta, k)
}

struct Trial {
    success: bool,
    out: RecoveryOutput,
    noise: f64,
    constants: ConvergenceConstants,
    delta: f64,
}

fn run_trials(variant: Variant, noise_level: f64, seed_base: u64) -> (Vec<Trial>, Duration) {
    let setup = recovery_setup();
    let start = Instant::now();
    let mut trials = Vec::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_base + seed);
        let a = DenseOperator::gaussian(64, 32, seed_base + seed).unwrap();
        let x = in_model_signal(&mut rng, &setup.params);
        let clean = apply(&a, &x).unwrap();
        let mut e: Vec<f64> = (0..64).map(|_| rng.sample(StandardNormal)).collect();
        let e_norm: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        let a_norm: f64 = clean.iter().map(|v| v * v).sum::<f64>().sqrt();
        e.iter_mut().for_each(|v| *v *= noise_level * a_norm / e_norm);
        let noise = noise_level * a_norm;
        let y: Vec<f64> = clean.iter().zip(&e).map(|(u, v)| u + v).collect();
        let cfg = RecoveryConfig::new(&setup.head, &setup.tail, 50).with_truth(&x);
        let out = match variant {
            Variant::AmIht => am_iht(&y, &a, &cfg).unwrap(),
            _ => am_cosamp(&y, &a, &cfg).unwrap(),
        };
        let (delta, k) = estimated_constants(&setup, &a, variant, seed_base + seed);
        let err = lp_norm(&out.estimate.sub(&x).unwrap(), Norm::L2);
        let success = if noise_level == 0.0 {
            err <= 1e-6 * lp_norm(&x, Norm::L2)
        } else {
            k.error_coefficient()
                .is_some_and(|c| err <= c * noise * 1.2)
        };
        trials.push(Trial {
            success,
            out,
            noise,
            constants: k,
            delta,
        });
    }
    (trials, start.elapsed())
}

fn criterion_5(iht: &[Trial], iht_time: Duration, cosamp: &[Trial], cosamp_time: Duration) -> Outcome {
    let a = iht.iter().filter(|t| t.success).count();
    let b = cosamp.iter().filter(|t| t.success).count();
    let limit = Duration::from_secs(120);
    outcome(
        a >= 18 && b >= 18 && iht_time < limit && cosamp_time < limit,
        format!("AM-IHT {a}/20 in {iht_time:.2?}, AM-CoSaMP {b}/20 in {cosamp_time:.2?}"),
    )
}

fn criterion_6(iht: &[Trial], cosamp: &[Trial]) -> Outcome {
    let a = iht.iter().filter(|t| t.success).count();
    let b = cosamp.iter().filter(|t| t.success).count();
    let feasible = iht
        .iter()
        .chain(cosamp)
        .filter(|t| t.constants.feasible)
        .count();
    let deltas: Vec<f64> = iht.iter().map(|t| t.delta).collect();
    let lo = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = deltas.iter().copied().fold(0.0, f64::max);
    let alpha = iht[0].constants.alpha;
    outcome(
        a >= 18 && b >= 18,
        format!(
            "AM-IHT {a}/20, AM-CoSaMP {b}/20 within 1.2 (1 + beta/(1-alpha)) ||e||; \
             estimated delta in [{lo:.3}, {hi:.3}], alpha = {alpha:.3} for the first trial, \
             {feasible}/40 trials with alpha < 1"
        ),
    )
}

fn criterion_7(groups: &[&[Trial]]) -> Outcome {
    let mut checked = 0;
    let mut violations = 0;
    let mut vacuous = 0;
    for trials in groups {
        for t in trials.iter().filter(|t| t.success) {
            checked += 1;
            if !t.constants.alpha.is_finite() {
                vacuous += 1;
            }
            let errs: Vec<f64> = t.out.trajectory.iter().map(|r| r.error.unwrap()).collect();
            for pair in errs.windows(2) {
                let bound = t.constants.alpha * pair[0] + t.constants.beta * t.noise;
                if pair[1] > bound * (1.0 + REL) + 1e-15 {
                    violations += 1;
                }
            }
        }
    }
    outcome(
        violations == 0,
        format!(
            "{violations} violations over {checked} successful trials \
             ({vacuous} with unbounded alpha)"
        ),
    )
}

fn criterion_8() -> Outcome {
    let params = CemdParams::with_sparsity(8, 4, 1, 4).unwrap();
    let tail = ExactTail::new(params, Norm::L1).unwrap();
    let head = ExactHead::new(model_sum(&params, &params).unwrap(), Norm::L1).unwrap();
    let mut wins = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let e = ExpanderOperator::random(96, 32, 7, 800 + seed).unwrap();
        let x = in_model_signal(&mut rng, &params);
        let y = apply(&e, &x).unwrap();
        let out = am_iht_rip1(&y, &e, &RecoveryConfig::new(&head, &tail, 50)).unwrap();
        if lp_norm(&out.estimate.sub(&x).unwrap(), Norm::L1) <= 1e-6 * lp_norm(&x, Norm::L1) {
            wins += 1;
        }
    }
    outcome(wins >= 16, format!("{wins}/20 seeds recovered"))
}

fn criterion_9() -> Outcome {
    let mut condition = 0;
    let mut stuck = 0;
    let mut contrast = 0;
    for seed in 0..50u64 {
        let r = adversarial_demo(4096, 2.0, seed, 3).unwrap();
        let held = r.condition_holds && r.tail_inequality_holds;
        if held {
            condition += 1;
        }
        if held && r.iterates_stay_zero && r.adversarial_error == 1.0 {
            stuck += 1;
        }
        if r.contrast_exact() {
            contrast += 1;
        }
    }
    outcome(
        stuck >= 48 && contrast >= 48,
        format!(
            "condition {condition}/50, condition with zero iterates {stuck}/50, contrast exact {contrast}/50"
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut checked = 0;
    let mut violations = 0;
    let mut tightest: f64 = 0.0;
    for h in 1..=4 {
        for w in 1..=3 {
            for s in 1..=h.min(2) {
                let all = all_supports(h, w, s);
                for b in 0..=4u64 {
                    let count = all.iter().filter(|(_, e)| *e <= b).count() as f64;
                    let p = CemdParams::with_sparsity(h, w, s, b).unwrap();
                    let bound = log_model_size_bound(&p).exp();
                    tightest = tightest.max(count / bound);
                    checked += 1;
                    if count > bound {
                        violations += 1;
                    }
                }
            }
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations over {checked} parameter sets, max count/bound {tightest:.3}"),
    )
}

fn criterion_11() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut violations = 0;
    for _ in 0..500 {
        let h = rng.gen_range(2..=8);
        let w = rng.gen_range(1..=5);
        let p1 = CemdParams::with_sparsity(h, w, rng.gen_range(1..=h.min(3)), rng.gen_range(0..=6)).unwrap();
        let p2 = CemdParams::with_sparsity(h, w, rng.gen_range(1..=h.min(3)), rng.gen_range(0..=6)).unwrap();
        let a = random_model_support(&p1, &mut rng);
        let b = random_model_support(&p2, &mut rng);
        if !(is_member(&a, &p1) && is_member(&b, &p2)) {
            violations += 1;
            continue;
        }
        if !is_member(&a.union(&b), &model_sum(&p1, &p2).unwrap()) {
            violations += 1;
        }
    }
    outcome(violations == 0, format!("{violations} violations in 500 pairs"))
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    results.push((1, "head approximation guarantee", criterion_1()));
    results.push((2, "tail bicriterion guarantee", criterion_2()));
    results.push((3, "min-cost flow matches Lagrangian minimum", criterion_3()));
    results.push((4, "boosted head quality", criterion_4()));

    let (iht, iht_time) = run_trials(Variant::AmIht, 0.0, 500);
    let (cosamp, cosamp_time) = run_trials(Variant::AmCosamp, 0.0, 500);
    results.push((5, "noiseless recovery", criterion_5(&iht, iht_time, &cosamp, cosamp_time)));
    let (iht_noisy, _) = run_trials(Variant::AmIht, 0.01, 600);
    let (cosamp_noisy, _) = run_trials(Variant::AmCosamp, 0.01, 600);
    results.push((6, "noise robustness", criterion_6(&iht_noisy, &cosamp_noisy)));
    results.push((
        7,
        "per-iteration contraction",
        criterion_7(&[&iht, &cosamp, &iht_noisy, &cosamp_noisy]),
    ));
    results.push((8, "RIP-1 recovery", criterion_8()));
    results.push((9, "adversarial oracle counterexample", criterion_9()));
    results.push((10, "support counting bound", criterion_10()));
    results.push((11, "model addition", criterion_11()));

    let mut failed = 0;
    for (id, name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {id:>2} ({name}): {}", o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

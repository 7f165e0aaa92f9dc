//! The five subcommands. Each returns a CSV body plus a summary, or a
//! usage error naming the offending field.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use cemd::head::{boost_head, boost_iterations, HeadApprox};
use cemd::measurement::{
    apply, estimate_model_rip, random_model_support, DenseOperator, ExpanderOperator,
    MeasurementOperator,
};
use cemd::model::{model_sum, predicted_enumeration_size, support_emd, DEFAULT_ENUMERATION_LIMIT};
use cemd::oracle::{check_head_contract, check_tail_contract, ContractReport, ExactHead, ExactTail};
use cemd::recovery::{
    adversarial_demo, am_cosamp, am_iht, am_iht_rip1, constants, Algorithm, RecoveryConfig, Variant,
};
use cemd::signal::tail_power;
use cemd::tail::{TailApprox, TailParams};
use cemd::{
    lp_norm, CemdParams, HeadOracle, Norm, OracleQuality, SignalMatrix, Support, TailOracle,
};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{Config, OracleKind};

pub const SUCCESS_THRESHOLD: f64 = 1e-6;

/// Reason a command could not produce a verdict.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
}

impl From<cemd::Error> for Failure {
    fn from(e: cemd::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<String> for Failure {
    fn from(e: String) -> Self {
        Failure::Usage(e)
    }
}

type Outcome<T> = Result<T, Failure>;

pub struct Report {
    pub csv: String,
    pub summary: String,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sabotage {
    Head,
    Tail,
}

const TAG_TRIAL: u64 = 1;
const TAG_ORACLE: u64 = 2;
const TAG_COUNTER: u64 = 3;
const TAG_RIP: u64 = 4;

/// Deterministic child seed of `base` for the labelled position `parts`.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    for &p in parts {
        rng = ChaCha8Rng::seed_from_u64(rng.next_u64() ^ p);
    }
    rng.next_u64()
}

/// Runs `f(0..count)` on `jobs` workers and returns results in index order.
fn run_indexed<T, F>(jobs: usize, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let next = AtomicUsize::new(0);
    let done = Mutex::new(Vec::with_capacity(count));
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, count.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let r = f(i);
                done.lock().unwrap().push((i, r));
            });
        }
    });
    let mut done = done.into_inner().unwrap();
    done.sort_by_key(|(i, _)| *i);
    done.into_iter().map(|(_, r)| r).collect()
}

fn header(command: &str, cfg: &Config) -> String {
    format!("# cemd-bench {command} {}\n", cfg.inline())
}

fn loop_norm(algo: Algorithm) -> Norm {
    match algo {
        Algorithm::AmIhtRip1 => Norm::L1,
        _ => Norm::L2,
    }
}

fn vec_norm(v: &[f64], norm: Norm) -> f64 {
    norm.root(v.iter().map(|&x| norm.power(x)).sum())
}

/// Signal with nonzero Gaussian entries on a random model support.
pub fn in_model_signal<R: Rng>(params: &CemdParams, rng: &mut R) -> SignalMatrix {
    let support = random_model_support(params, rng);
    let mut x = SignalMatrix::zeros(params.h(), params.w());
    for (r, c) in support.iter() {
        let mut v: f64 = rng.sample(StandardNormal);
        while v == 0.0 {
            v = rng.sample(StandardNormal);
        }
        x.set(r, c, v);
    }
    x
}

struct Oracles {
    params: CemdParams,
    head: Box<dyn HeadOracle>,
    tail: Box<dyn TailOracle>,
}

fn build_oracles(cfg: &Config, params: CemdParams) -> Outcome<Oracles> {
    let norm = loop_norm(cfg.algo);
    let tail: Box<dyn TailOracle> = match cfg.tail {
        OracleKind::Approx => Box::new(TailApprox::new(
            params,
            TailParams::new(cfg.tail_d, cfg.tail_delta)?,
            norm,
        )),
        OracleKind::Exact => Box::new(ExactTail::new(params, norm)?),
    };
    let head_model = model_sum(&tail.output_model(), &params)?;
    let head: Box<dyn HeadOracle> = match cfg.head {
        OracleKind::Exact => Box::new(ExactHead::new(head_model, norm)?),
        OracleKind::Approx => {
            let inner = HeadApprox::new(head_model, norm);
            let t = match cfg.boost {
                Some(t) => t,
                None => boost_iterations(inner.quality().factor, tail.quality().factor, 0.0)?.t,
            };
            Box::new(boost_head(inner, t)?)
        }
    };
    Ok(Oracles { params, head, tail })
}

enum Operator {
    Dense(DenseOperator),
    Expander(ExpanderOperator),
}

impl Operator {
    fn build(cfg: &Config, m: usize, n: usize, seed: u64) -> Outcome<Self> {
        Ok(match cfg.algo {
            Algorithm::AmIhtRip1 => {
                Operator::Expander(ExpanderOperator::random(m, n, cfg.d_deg, seed)?)
            }
            _ => Operator::Dense(DenseOperator::gaussian(m, n, seed)?),
        })
    }

    fn as_dyn(&self) -> &dyn MeasurementOperator {
        match self {
            Operator::Dense(a) => a,
            Operator::Expander(e) => e,
        }
    }
}

struct TrialRow {
    trial: usize,
    seed: u64,
    m: usize,
    budget: u64,
    iterations: usize,
    error: f64,
    threshold: f64,
    success: bool,
    wall: Duration,
}

fn run_trial(cfg: &Config, oracles: &Oracles, m: usize, trial: usize) -> Outcome<TrialRow> {
    let start = Instant::now();
    let params = oracles.params;
    let seed = derive_seed(cfg.seed, &[TAG_TRIAL, m as u64, params.budget(), trial as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let op_seed = rng.next_u64();
    let x = in_model_signal(&params, &mut rng);
    let op = Operator::build(cfg, m, params.n(), op_seed)?;
    let norm = loop_norm(cfg.algo);
    let clean = apply(op.as_dyn(), &x)?;
    let mut e: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    let e_norm = vec_norm(&e, norm);
    let target = cfg.noise * vec_norm(&clean, norm);
    if e_norm > 0.0 {
        e.iter_mut().for_each(|v| *v *= target / e_norm);
    }
    let y: Vec<f64> = clean.iter().zip(&e).map(|(a, b)| a + b).collect();

    let run_cfg = RecoveryConfig::new(&*oracles.head, &*oracles.tail, cfg.iters).with_truth(&x);
    let out = match &op {
        Operator::Expander(ex) => am_iht_rip1(&y, ex, &run_cfg)?,
        Operator::Dense(a) if cfg.algo == Algorithm::AmCosamp => am_cosamp(&y, a, &run_cfg)?,
        Operator::Dense(a) => am_iht(&y, a, &run_cfg)?,
    };
    let error = lp_norm(&out.estimate.sub(&x)?, norm);
    let threshold = if cfg.noise == 0.0 {
        SUCCESS_THRESHOLD * lp_norm(&x, norm)
    } else {
        let scope = model_sum(
            &model_sum(&params, &oracles.tail.output_model())?,
            &oracles.head.output_model(),
        )?;
        let delta = estimate_model_rip(op.as_dyn(), &scope, None, cfg.rip_trials, norm, op_seed)?
            .delta_lower;
        let k = constants(
            oracles.head.quality().factor,
            oracles.tail.quality().factor,
            delta,
            Variant::from(cfg.algo),
            4.0,
        );
        k.error_coefficient().map_or(f64::INFINITY, |c| c * target)
    };
    Ok(TrialRow {
        trial,
        seed,
        m,
        budget: params.budget(),
        iterations: out.iterations,
        error,
        threshold,
        success: threshold.is_finite() && error <= threshold,
        wall: start.elapsed(),
    })
}

fn collect<T>(results: Vec<Outcome<T>>) -> Outcome<Vec<T>> {
    results.into_iter().collect()
}

pub fn recover(cfg: &Config, timing: bool) -> Outcome<Report> {
    let params = CemdParams::with_sparsity(cfg.h, cfg.w, cfg.s, cfg.budget)?;
    let oracles = build_oracles(cfg, params)?;
    let rows = collect(run_indexed(cfg.jobs, cfg.trials, |i| {
        run_trial(cfg, &oracles, cfg.m, i)
    }))?;
    let mut csv = header("recover", cfg);
    csv.push_str("trial,seed,h,w,s,B,m,algo,noise,iterations,error,threshold,success");
    csv.push_str(if timing { ",wall_ms\n" } else { "\n" });
    for r in &rows {
        let _ = write!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{:.6e},{:.6e},{}",
            r.trial,
            r.seed,
            cfg.h,
            cfg.w,
            cfg.s,
            r.budget,
            r.m,
            cfg.algo,
            cfg.noise,
            r.iterations,
            r.error,
            r.threshold,
            u8::from(r.success)
        );
        if timing {
            let _ = write!(csv, ",{:.3}", r.wall.as_secs_f64() * 1e3);
        }
        csv.push('\n');
    }
    let wins = rows.iter().filter(|r| r.success).count();
    Ok(Report {
        csv,
        summary: format!(
            "recover: success {wins}/{} ({:.3})",
            rows.len(),
            wins as f64 / rows.len() as f64
        ),
        passed: true,
    })
}

pub fn phase(cfg: &Config) -> Outcome<Report> {
    let mut cells = Vec::new();
    for &m in &cfg.m_grid {
        for &b in &cfg.b_grid {
            let params = CemdParams::with_sparsity(cfg.h, cfg.w, cfg.s, b)?;
            cells.push((m, build_oracles(cfg, params)?));
        }
    }
    let per = cfg.trials;
    let rows = collect(run_indexed(cfg.jobs, cells.len() * per, |i| {
        let (m, oracles) = &cells[i / per];
        run_trial(cfg, oracles, *m, i % per)
    }))?;
    let mut csv = header("phase", cfg);
    csv.push_str("m,B,trials,successes,success_rate\n");
    for (c, chunk) in rows.chunks(per.max(1)).enumerate().take(cells.len()) {
        let (m, oracles) = &cells[c];
        let wins = chunk.iter().filter(|r| r.success).count();
        let _ = writeln!(
            csv,
            "{m},{},{per},{wins},{:.4}",
            oracles.params.budget(),
            wins as f64 / per as f64
        );
    }
    Ok(Report {
        csv,
        summary: format!("phase: {} cells x {per} trials", cells.len()),
        passed: true,
    })
}

/// Oracle run on `max|x| - |x|`, so it favours the weakest entries.
struct Sabotaged<O>(O);

fn invert(x: &SignalMatrix) -> SignalMatrix {
    let top = x.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let v = x.as_slice().iter().map(|v| top - v.abs()).collect();
    SignalMatrix::new(x.rows(), x.cols(), v).unwrap()
}

impl<O: HeadOracle> HeadOracle for Sabotaged<O> {
    fn head(&self, x: &SignalMatrix) -> cemd::Result<Support> {
        self.0.head(&invert(x))
    }
    fn quality(&self) -> OracleQuality {
        self.0.quality()
    }
    fn input_model(&self) -> CemdParams {
        self.0.input_model()
    }
    fn output_model(&self) -> CemdParams {
        self.0.output_model()
    }
}

impl<O: TailOracle> TailOracle for Sabotaged<O> {
    fn tail(&self, x: &SignalMatrix) -> cemd::Result<Support> {
        self.0.tail(&invert(x))
    }
    fn quality(&self) -> OracleQuality {
        self.0.quality()
    }
    fn input_model(&self) -> CemdParams {
        self.0.input_model()
    }
    fn output_model(&self) -> CemdParams {
        self.0.output_model()
    }
}

struct CheckRow {
    instance: usize,
    norm: Norm,
    oracle: &'static str,
    report: ContractReport,
    emd: u64,
    bicriterion: bool,
}

impl CheckRow {
    fn holds(&self) -> bool {
        self.report.holds && self.bicriterion
    }
}

fn quote(s: &Support) -> String {
    format!("\"{s}\"")
}

pub fn oracle_check(cfg: &Config, sabotage: Option<Sabotage>) -> Outcome<Report> {
    let params = CemdParams::with_sparsity(cfg.h, cfg.w, cfg.s, cfg.budget)?;
    let predicted = predicted_enumeration_size(&params);
    if predicted > DEFAULT_ENUMERATION_LIMIT as f64 {
        return Err(Failure::Usage(format!(
            "instance too large to enumerate: about {predicted:.3e} supports, limit {DEFAULT_ENUMERATION_LIMIT}"
        )));
    }
    let tp = TailParams::new(cfg.tail_d, cfg.tail_delta)?;
    let checks = collect(run_indexed(cfg.jobs, cfg.trials, |i| -> Outcome<[CheckRow; 2]> {
        let norm = if i % 2 == 0 { Norm::L2 } else { Norm::L1 };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[TAG_ORACLE, i as u64]));
        let v = (0..params.n()).map(|_| rng.sample(StandardNormal)).collect();
        let x = SignalMatrix::new(params.h(), params.w(), v)?;

        let head = HeadApprox::new(params, norm);
        let hr = match sabotage {
            Some(Sabotage::Head) => check_head_contract(&Sabotaged(head), &x, &params)?,
            _ => check_head_contract(&head, &x, &params)?,
        };
        let tail = TailApprox::new(params, tp, norm);
        let tr = match sabotage {
            Some(Sabotage::Tail) => check_tail_contract(&Sabotaged(tail), &x, &params)?,
            _ => check_tail_contract(&tail, &x, &params)?,
        };
        let head_emd = support_emd(&hr.returned, params.h(), params.w())?;
        let tail_emd = support_emd(&tr.returned, params.h(), params.w())?;
        let total = x.power_sum(norm);
        let err = tail_power(&x, &tr.returned, norm);
        let opt = tail_power(&x, &tr.witness, norm);
        let slack = 1e-9 * total.max(1.0);
        let (b, e) = (params.budget() as f64, tail_emd as f64);
        let case1 = b <= e && e <= tp.d() * b && err <= opt + slack;
        let case2 = e <= b && err <= tp.c() * opt + slack;
        Ok([
            CheckRow {
                instance: i,
                norm,
                oracle: "head",
                report: hr,
                emd: head_emd,
                bicriterion: true,
            },
            CheckRow {
                instance: i,
                norm,
                oracle: "tail",
                report: tr,
                emd: tail_emd,
                bicriterion: case1 || case2,
            },
        ])
    }))?;
    let mut csv = header("oracle-check", cfg);
    csv.push_str("instance,norm,oracle,holds,value,optimum,emd,in_output_model,returned,witness\n");
    let mut summary = String::new();
    let mut violations = 0;
    for row in checks.iter().flatten() {
        let r = &row.report;
        let _ = writeln!(
            csv,
            "{},{},{},{},{:.9e},{:.9e},{},{},{},{}",
            row.instance,
            row.norm,
            row.oracle,
            u8::from(row.holds()),
            r.value,
            r.optimum,
            row.emd,
            u8::from(r.in_output_model),
            quote(&r.returned),
            quote(&r.witness)
        );
        if !row.holds() {
            violations += 1;
            let _ = writeln!(
                summary,
                "violation: instance {} {} oracle, p={}: returned {} (value {:.6}, emd {}) \
                 against witness {} (optimum {:.6})",
                row.instance, row.oracle, row.norm, r.returned, r.value, row.emd, r.witness, r.optimum
            );
        }
    }
    let _ = write!(
        summary,
        "oracle-check: {violations} violations in {} checks",
        2 * checks.len()
    );
    Ok(Report {
        csv,
        summary,
        passed: violations == 0,
    })
}

pub fn counterexample(cfg: &Config) -> Outcome<Report> {
    let reports = collect(run_indexed(cfg.jobs, cfg.trials, |i| {
        let seed = derive_seed(cfg.seed, &[TAG_COUNTER, i as u64]);
        adversarial_demo(cfg.n, cfg.c, seed, cfg.iters)
            .map(|r| (seed, r))
            .map_err(Failure::from)
    }))?;
    let mut csv = header("counterexample", cfg);
    csv.push_str(
        "trial,seed,n,m,norm_a_sq,threshold,condition_holds,tail_inequality_holds,\
         iterates_stay_zero,adversarial_error,contrast_error\n",
    );
    let mut stuck = 0;
    let mut contrast = 0;
    for (i, (seed, r)) in reports.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{i},{seed},{},{},{:.6},{:.6},{},{},{},{:.6e},{:.6e}",
            r.n,
            r.m,
            r.norm_a_sq,
            r.threshold,
            u8::from(r.condition_holds),
            u8::from(r.tail_inequality_holds),
            u8::from(r.iterates_stay_zero),
            r.adversarial_error,
            r.contrast_error
        );
        if r.condition_holds && r.tail_inequality_holds && r.iterates_stay_zero {
            stuck += 1;
        }
        if r.contrast_exact() {
            contrast += 1;
        }
    }
    let need = (0.95 * reports.len() as f64).ceil() as usize;
    Ok(Report {
        csv,
        summary: format!(
            "counterexample: condition with zero iterates {stuck}/{n}, contrast exact {contrast}/{n} (need {need})",
            n = reports.len()
        ),
        passed: stuck >= need && contrast >= need,
    })
}

pub fn rip_estimate(cfg: &Config) -> Outcome<Report> {
    let params = CemdParams::with_sparsity(cfg.h, cfg.w, cfg.s, cfg.budget)?;
    let norm = loop_norm(cfg.algo);
    let rows = collect(run_indexed(cfg.jobs, cfg.trials, |i| {
        let seed = derive_seed(cfg.seed, &[TAG_RIP, i as u64]);
        let op = Operator::build(cfg, cfg.m, params.n(), seed)?;
        let est = estimate_model_rip(op.as_dyn(), &params, None, cfg.rip_trials, norm, seed)?;
        Ok((seed, op.as_dyn().spec().to_string(), est))
    }))?;
    let mut csv = header("rip-estimate", cfg);
    csv.push_str("trial,seed,operator,norm,samples,delta_lower\n");
    for (i, (seed, spec, est)) in rows.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{i},{seed},{spec},{},{},{:.6}",
            est.norm, est.samples, est.delta_lower
        );
    }
    let worst = rows.iter().map(|r| r.2.delta_lower).fold(0.0, f64::max);
    Ok(Report {
        csv,
        summary: format!("rip-estimate: largest delta lower bound {worst:.6} over {} operators", rows.len()),
        passed: true,
    })
}

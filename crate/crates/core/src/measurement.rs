//! Measurement operators, the median operator of sparse recovery with
//! expanders, and empirical model-RIP estimation.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::model::{model_sum, CemdParams};
use crate::signal::{Norm, SignalMatrix, Support};

/// A linear map `R^n -> R^m` acting on column-major flattened signals.
pub trait MeasurementOperator: Send + Sync {
    /// Number of measurements `m`.
    fn rows(&self) -> usize;
    /// Signal length `n`.
    fn cols(&self) -> usize;
    /// `A x`; `x.len()` must equal `n`.
    fn apply_vec(&self, x: &[f64]) -> Vec<f64>;
    /// `A^T y`; `y.len()` must equal `m`.
    fn adjoint_vec(&self, y: &[f64]) -> Vec<f64>;
    fn spec(&self) -> OperatorSpec;

    /// Column `j` of `A`.
    fn column(&self, j: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.cols()];
        e[j] = 1.0;
        self.apply_vec(&e)
    }
}

/// `y = A vec(x)`.
pub fn apply<A: MeasurementOperator + ?Sized>(a: &A, x: &SignalMatrix) -> Result<Vec<f64>> {
    if x.len() != a.cols() {
        return Err(Error::DimensionMismatch {
            expected: format!("signal of length {}", a.cols()),
            found: format!("{}", x.len()),
        });
    }
    Ok(a.apply_vec(x.as_slice()))
}

/// `mat(A^T y)` as an `h x w` signal.
pub fn adjoint_apply<A: MeasurementOperator + ?Sized>(
    a: &A,
    y: &[f64],
    h: usize,
    w: usize,
) -> Result<SignalMatrix> {
    check_measurements(a, y)?;
    if h * w != a.cols() {
        return Err(Error::DimensionMismatch {
            expected: format!("grid with {} cells", a.cols()),
            found: format!("{h}x{w}"),
        });
    }
    SignalMatrix::new(h, w, a.adjoint_vec(y))
}

fn check_measurements<A: MeasurementOperator + ?Sized>(a: &A, y: &[f64]) -> Result<()> {
    if y.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} measurements", a.rows()),
            found: format!("{}", y.len()),
        });
    }
    Ok(())
}

/// Recipe that regenerates an operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorSpec {
    /// i.i.d. `N(0, 1/m)` entries.
    Gaussian { m: usize, n: usize, seed: u64 },
    /// i.i.d. `+-1/sqrt(m)` entries.
    Rademacher { m: usize, n: usize, seed: u64 },
    Identity { n: usize },
    /// Random left-regular bipartite graph.
    Expander { m: usize, n: usize, d: usize, seed: u64 },
    /// Left node `j` owns right nodes `jd .. (j+1)d`.
    PrivateExpander { n: usize, d: usize },
    /// Built from an explicit matrix; cannot be regenerated.
    Explicit { m: usize, n: usize },
}

impl fmt::Display for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Gaussian { m, n, seed } => write!(f, "gaussian:{m}:{n}:{seed}"),
            Self::Rademacher { m, n, seed } => write!(f, "rademacher:{m}:{n}:{seed}"),
            Self::Identity { n } => write!(f, "identity:{n}"),
            Self::Expander { m, n, d, seed } => write!(f, "expander:{m}:{n}:{d}:{seed}"),
            Self::PrivateExpander { n, d } => write!(f, "private-expander:{n}:{d}"),
            Self::Explicit { m, n } => write!(f, "explicit:{m}:{n}"),
        }
    }
}

impl FromStr for OperatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<u64> {
            parts
                .get(i)
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("bad operator spec {s:?}")))
        };
        let spec = match (parts[0], parts.len()) {
            ("gaussian", 4) => Self::Gaussian {
                m: num(1)? as usize,
                n: num(2)? as usize,
                seed: num(3)?,
            },
            ("rademacher", 4) => Self::Rademacher {
                m: num(1)? as usize,
                n: num(2)? as usize,
                seed: num(3)?,
            },
            ("identity", 2) => Self::Identity { n: num(1)? as usize },
            ("expander", 5) => Self::Expander {
                m: num(1)? as usize,
                n: num(2)? as usize,
                d: num(3)? as usize,
                seed: num(4)?,
            },
            ("private-expander", 3) => Self::PrivateExpander {
                n: num(1)? as usize,
                d: num(2)? as usize,
            },
            ("explicit", 3) => Self::Explicit {
                m: num(1)? as usize,
                n: num(2)? as usize,
            },
            _ => return invalid(format!("bad operator spec {s:?}")),
        };
        Ok(spec)
    }
}

impl OperatorSpec {
    /// Rebuilds the operator this spec describes.
    pub fn build(&self) -> Result<Box<dyn MeasurementOperator>> {
        Ok(match *self {
            Self::Gaussian { m, n, seed } => Box::new(DenseOperator::gaussian(m, n, seed)?),
            Self::Rademacher { m, n, seed } => Box::new(DenseOperator::rademacher(m, n, seed)?),
            Self::Identity { n } => Box::new(DenseOperator::identity(n)?),
            Self::Expander { m, n, d, seed } => Box::new(ExpanderOperator::random(m, n, d, seed)?),
            Self::PrivateExpander { n, d } => Box::new(ExpanderOperator::private(n, d)?),
            Self::Explicit { .. } => return invalid("explicit operators cannot be regenerated"),
        })
    }
}

/// Dense real matrix.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    matrix: DMatrix<f64>,
    spec: OperatorSpec,
}

fn check_dims(m: usize, n: usize) -> Result<()> {
    if m == 0 {
        return invalid("m must be positive");
    }
    if n == 0 {
        return invalid("n must be positive");
    }
    Ok(())
}

impl DenseOperator {
    pub fn gaussian(m: usize, n: usize, seed: u64) -> Result<Self> {
        check_dims(m, n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (m as f64).sqrt();
        let matrix = DMatrix::from_fn(m, n, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        });
        Ok(Self {
            matrix,
            spec: OperatorSpec::Gaussian { m, n, seed },
        })
    }

    pub fn rademacher(m: usize, n: usize, seed: u64) -> Result<Self> {
        check_dims(m, n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (m as f64).sqrt();
        let matrix = DMatrix::from_fn(m, n, |_, _| if rng.gen::<bool>() { scale } else { -scale });
        Ok(Self {
            matrix,
            spec: OperatorSpec::Rademacher { m, n, seed },
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        check_dims(n, n)?;
        Ok(Self {
            matrix: DMatrix::identity(n, n),
            spec: OperatorSpec::Identity { n },
        })
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        check_dims(matrix.nrows(), matrix.ncols())?;
        if matrix.iter().any(|v| !v.is_finite()) {
            return invalid("operator entries must be finite");
        }
        let spec = OperatorSpec::Explicit {
            m: matrix.nrows(),
            n: matrix.ncols(),
        };
        Ok(Self { matrix, spec })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl MeasurementOperator for DenseOperator {
    fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols());
        let mut y = vec![0.0; self.rows()];
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (yi, a) in y.iter_mut().zip(self.matrix.column(j).iter()) {
                    *yi += a * xj;
                }
            }
        }
        y
    }

    fn adjoint_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows());
        (0..self.cols())
            .map(|j| self.matrix.column(j).iter().zip(y).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn spec(&self) -> OperatorSpec {
        self.spec
    }

    fn column(&self, j: usize) -> Vec<f64> {
        self.matrix.column(j).iter().copied().collect()
    }
}

/// Adjacency matrix of a left-regular bipartite graph with `n` left and `m`
/// right nodes.
#[derive(Debug, Clone)]
pub struct ExpanderOperator {
    m: usize,
    d: usize,
    neighbours: Vec<Vec<usize>>,
    spec: OperatorSpec,
}

fn check_degree(d: usize) -> Result<()> {
    if d == 0 || d % 2 == 0 {
        return invalid(format!("left degree must be odd, got {d}"));
    }
    Ok(())
}

impl ExpanderOperator {
    /// Each left node picks `d` distinct right neighbours uniformly.
    pub fn random(m: usize, n: usize, d: usize, seed: u64) -> Result<Self> {
        check_dims(m, n)?;
        check_degree(d)?;
        if d > m {
            return invalid(format!("left degree {d} exceeds m = {m}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let neighbours = (0..n)
            .map(|_| {
                let mut v = sample(&mut rng, m, d).into_vec();
                v.sort_unstable();
                v
            })
            .collect();
        Ok(Self {
            m,
            d,
            neighbours,
            spec: OperatorSpec::Expander { m, n, d, seed },
        })
    }

    /// Disjoint neighbourhoods, `m = n d`.
    pub fn private(n: usize, d: usize) -> Result<Self> {
        check_dims(n * d, n)?;
        check_degree(d)?;
        let neighbours = (0..n).map(|j| (j * d..(j + 1) * d).collect()).collect();
        Ok(Self {
            m: n * d,
            d,
            neighbours,
            spec: OperatorSpec::PrivateExpander { n, d },
        })
    }

    pub fn degree(&self) -> usize {
        self.d
    }

    /// Right neighbours of left node `j`, sorted.
    pub fn neighbours(&self, j: usize) -> &[usize] {
        &self.neighbours[j]
    }
}

impl MeasurementOperator for ExpanderOperator {
    fn rows(&self) -> usize {
        self.m
    }

    fn cols(&self) -> usize {
        self.neighbours.len()
    }

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols());
        let mut y = vec![0.0; self.m];
        for (nb, &xj) in self.neighbours.iter().zip(x) {
            for &i in nb {
                y[i] += xj;
            }
        }
        y
    }

    fn adjoint_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.m);
        self.neighbours
            .iter()
            .map(|nb| nb.iter().map(|&i| y[i]).sum())
            .collect()
    }

    fn spec(&self) -> OperatorSpec {
        self.spec
    }
}

/// Component `j` is the median of `u` over the neighbourhood of left node
/// `j`.
pub fn median_operator(e: &ExpanderOperator, u: &[f64]) -> Result<Vec<f64>> {
    check_measurements(e, u)?;
    let mut buf = Vec::with_capacity(e.d);
    Ok(e.neighbours
        .iter()
        .map(|nb| {
            buf.clear();
            buf.extend(nb.iter().map(|&i| u[i]));
            let mid = buf.len() / 2;
            *buf.select_nth_unstable_by(mid, f64::total_cmp).1
        })
        .collect())
}

/// [`median_operator`] reshaped to an `h x w` signal.
pub fn median_signal(e: &ExpanderOperator, u: &[f64], h: usize, w: usize) -> Result<SignalMatrix> {
    SignalMatrix::new(h, w, median_operator(e, u)?)
}

/// `argmin ||y - A z||_2` over `z` supported on `support`, zero elsewhere.
/// Rank-deficient systems get the minimum-norm solution.
pub fn restricted_least_squares<A: MeasurementOperator + ?Sized>(
    a: &A,
    support: &Support,
    y: &[f64],
    h: usize,
    w: usize,
) -> Result<SignalMatrix> {
    check_measurements(a, y)?;
    support.check_bounds(h, w)?;
    if h * w != a.cols() {
        return Err(Error::DimensionMismatch {
            expected: format!("grid with {} cells", a.cols()),
            found: format!("{h}x{w}"),
        });
    }
    let mut out = SignalMatrix::zeros(h, w);
    if support.is_empty() {
        return Ok(out);
    }
    let idx: Vec<(usize, usize)> = support.iter().collect();
    let m = a.rows();
    let mut a_s = DMatrix::zeros(m, idx.len());
    for (k, &(r, c)) in idx.iter().enumerate() {
        a_s.set_column(k, &DVector::from_vec(a.column(c * h + r)));
    }
    let svd = a_s.svd(true, true);
    let top = svd.singular_values.max();
    let eps = top * f64::EPSILON * m.max(idx.len()) as f64;
    let z = svd
        .solve(&DVector::from_column_slice(y), eps)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for (k, &(r, c)) in idx.iter().enumerate() {
        out.set(r, c, z[k]);
    }
    Ok(out)
}

/// Largest distortion seen over random unit vectors on random model
/// supports. A witness that the RIP constant is at least this large, never
/// a certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct RipEstimate {
    pub delta_lower: f64,
    pub samples: usize,
    pub model: CemdParams,
    pub norm: Norm,
}

/// Random support from the model (capped at `h` rows per column): a random
/// first column, then each later column moves entries of the previous one
/// by single free steps while the EMD budget lasts.
pub fn random_model_support<R: Rng + ?Sized>(params: &CemdParams, rng: &mut R) -> Support {
    let h = params.h();
    let s = params.effective_sparsity();
    let mut col: Vec<usize> = sample(rng, h, s).into_vec();
    col.sort_unstable();
    let mut left = params.budget();
    let mut cols = vec![col.clone()];
    for _ in 1..params.w() {
        let attempts = rng.gen_range(0..=left.min(4 * (h as u64)));
        for _ in 0..attempts {
            if left == 0 {
                break;
            }
            let j = rng.gen_range(0..s);
            let up = rng.gen::<bool>();
            let target = if up {
                col[j].checked_add(1).filter(|&t| t < h)
            } else {
                col[j].checked_sub(1)
            };
            if let Some(t) = target {
                if !col.contains(&t) {
                    col[j] = t;
                    left -= 1;
                }
            }
        }
        cols.push(col.clone());
    }
    Support::from_columns(&cols)
}

/// Estimates the model-RIP (`norm = L2`, distortion of `||Ax||_2^2`) or
/// model-RIP-1 (`norm = L1`, distortion of `||Ax||_1 / scale`) constant of
/// `a` over `model (+) growth`. `scale` is 1 for dense operators and the
/// left degree for expanders.
pub fn estimate_model_rip<A: MeasurementOperator + ?Sized>(
    a: &A,
    model: &CemdParams,
    growth: Option<&CemdParams>,
    trials: usize,
    norm: Norm,
    seed: u64,
) -> Result<RipEstimate> {
    if trials == 0 {
        return invalid("trials must be positive");
    }
    let model = match growth {
        Some(g) => model_sum(model, g)?,
        None => *model,
    };
    if model.n() != a.cols() {
        return Err(Error::DimensionMismatch {
            expected: format!("operator with {} columns", model.n()),
            found: format!("{}", a.cols()),
        });
    }
    let scale = match a.spec() {
        OperatorSpec::Expander { d, .. } | OperatorSpec::PrivateExpander { d, .. } => d as f64,
        _ => 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let h = model.h();
    for _ in 0..trials {
        let support = random_model_support(&model, &mut rng);
        let mut x = vec![0.0f64; a.cols()];
        for (r, c) in support.iter() {
            x[c * h + r] = StandardNormal.sample(&mut rng);
        }
        let size: f64 = match norm {
            Norm::L1 => x.iter().map(|v| v.abs()).sum(),
            Norm::L2 => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        };
        if size == 0.0 {
            continue;
        }
        x.iter_mut().for_each(|v| *v /= size);
        let y = a.apply_vec(&x);
        let ratio = match norm {
            Norm::L1 => y.iter().map(|v| v.abs()).sum::<f64>() / scale,
            Norm::L2 => y.iter().map(|v| v * v).sum::<f64>(),
        };
        worst = worst.max((ratio - 1.0).abs());
    }
    Ok(RipEstimate {
        delta_lower: worst,
        samples: trials,
        model,
        norm,
    })
}

//! Head and tail approximation oracles and brute-force contract checks.

use crate::error::Result;
use crate::model::{best_head_support, check_grid, is_member, CemdParams, DEFAULT_ENUMERATION_LIMIT};
use crate::signal::{ge_rel, le_rel, tail_power, Norm, OracleQuality, SignalMatrix, Support};

/// Relative tolerance used when comparing against approximation guarantees.
pub const GUARANTEE_TOLERANCE: f64 = 1e-9;

/// Returns a support capturing at least a `c_H` fraction of the best mass
/// available in the input model, itself lying in the output model.
pub trait HeadOracle: Send + Sync {
    fn head(&self, x: &SignalMatrix) -> Result<Support>;
    fn quality(&self) -> OracleQuality;
    fn input_model(&self) -> CemdParams;
    fn output_model(&self) -> CemdParams;
}

/// Returns a support whose residual is at most `c_T` times the best residual
/// achievable in the input model, itself lying in the output model.
pub trait TailOracle: Send + Sync {
    fn tail(&self, x: &SignalMatrix) -> Result<Support>;
    fn quality(&self) -> OracleQuality;
    fn input_model(&self) -> CemdParams;
    fn output_model(&self) -> CemdParams;
}

impl<T: HeadOracle + ?Sized> HeadOracle for &T {
    fn head(&self, x: &SignalMatrix) -> Result<Support> {
        (**self).head(x)
    }
    fn quality(&self) -> OracleQuality {
        (**self).quality()
    }
    fn input_model(&self) -> CemdParams {
        (**self).input_model()
    }
    fn output_model(&self) -> CemdParams {
        (**self).output_model()
    }
}

impl<T: HeadOracle + ?Sized> HeadOracle for Box<T> {
    fn head(&self, x: &SignalMatrix) -> Result<Support> {
        (**self).head(x)
    }
    fn quality(&self) -> OracleQuality {
        (**self).quality()
    }
    fn input_model(&self) -> CemdParams {
        (**self).input_model()
    }
    fn output_model(&self) -> CemdParams {
        (**self).output_model()
    }
}

impl<T: TailOracle + ?Sized> TailOracle for &T {
    fn tail(&self, x: &SignalMatrix) -> Result<Support> {
        (**self).tail(x)
    }
    fn quality(&self) -> OracleQuality {
        (**self).quality()
    }
    fn input_model(&self) -> CemdParams {
        (**self).input_model()
    }
    fn output_model(&self) -> CemdParams {
        (**self).output_model()
    }
}

impl<T: TailOracle + ?Sized> TailOracle for Box<T> {
    fn tail(&self, x: &SignalMatrix) -> Result<Support> {
        (**self).tail(x)
    }
    fn quality(&self) -> OracleQuality {
        (**self).quality()
    }
    fn input_model(&self) -> CemdParams {
        (**self).input_model()
    }
    fn output_model(&self) -> CemdParams {
        (**self).output_model()
    }
}

/// Exact head projection by enumeration.
#[derive(Debug, Clone)]
pub struct ExactHead {
    params: CemdParams,
    norm: Norm,
    limit: u64,
}

impl ExactHead {
    pub fn new(params: CemdParams, norm: Norm) -> Result<Self> {
        Self::with_limit(params, norm, DEFAULT_ENUMERATION_LIMIT)
    }

    /// Fails right away when the model is too large to enumerate.
    pub fn with_limit(params: CemdParams, norm: Norm, limit: u64) -> Result<Self> {
        crate::model::enumerate_supports(&params, limit)?;
        Ok(Self {
            params,
            norm,
            limit,
        })
    }
}

impl HeadOracle for ExactHead {
    fn head(&self, x: &SignalMatrix) -> Result<Support> {
        best_head_support(x, &self.params, self.norm, self.limit).map(|(s, _)| s)
    }
    fn quality(&self) -> OracleQuality {
        OracleQuality {
            factor: 1.0,
            norm: self.norm,
        }
    }
    fn input_model(&self) -> CemdParams {
        self.params
    }
    fn output_model(&self) -> CemdParams {
        self.params
    }
}

/// Exact tail projection by enumeration.
#[derive(Debug, Clone)]
pub struct ExactTail {
    inner: ExactHead,
}

impl ExactTail {
    pub fn new(params: CemdParams, norm: Norm) -> Result<Self> {
        Ok(Self {
            inner: ExactHead::new(params, norm)?,
        })
    }

    pub fn with_limit(params: CemdParams, norm: Norm, limit: u64) -> Result<Self> {
        Ok(Self {
            inner: ExactHead::with_limit(params, norm, limit)?,
        })
    }
}

impl TailOracle for ExactTail {
    fn tail(&self, x: &SignalMatrix) -> Result<Support> {
        self.inner.head(x)
    }
    fn quality(&self) -> OracleQuality {
        self.inner.quality()
    }
    fn input_model(&self) -> CemdParams {
        self.inner.params
    }
    fn output_model(&self) -> CemdParams {
        self.inner.params
    }
}

/// Outcome of a brute-force contract check.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractReport {
    pub holds: bool,
    /// Support returned by the oracle.
    pub returned: Support,
    /// Head value `||x_Omega'||_p` or tail value `||x - x_Omega'||_p` of the
    /// returned support.
    pub value: f64,
    /// Best value over the model, attained at `witness`.
    pub optimum: f64,
    pub witness: Support,
    /// Whether the returned support lies in the declared output model.
    pub in_output_model: bool,
}

/// Checks `||x_{H(x)}||_p >= c_H max_{Omega in model} ||x_Omega||_p` and
/// membership of `H(x)` in the declared output model.
pub fn check_head_contract<H: HeadOracle + ?Sized>(
    oracle: &H,
    x: &SignalMatrix,
    model: &CemdParams,
) -> Result<ContractReport> {
    check_head_contract_with_limit(oracle, x, model, DEFAULT_ENUMERATION_LIMIT)
}

pub fn check_head_contract_with_limit<H: HeadOracle + ?Sized>(
    oracle: &H,
    x: &SignalMatrix,
    model: &CemdParams,
    limit: u64,
) -> Result<ContractReport> {
    check_grid(x, model)?;
    let q = oracle.quality();
    let (witness, best) = best_head_support(x, model, q.norm, limit)?;
    let returned = oracle.head(x)?;
    let value = q.norm.root(x.power_sum_on(&returned, q.norm));
    let optimum = q.norm.root(best);
    let in_output_model = is_member(&returned, &oracle.output_model());
    let holds = in_output_model && ge_rel(value, q.factor * optimum, GUARANTEE_TOLERANCE);
    Ok(ContractReport {
        holds,
        returned,
        value,
        optimum,
        witness,
        in_output_model,
    })
}

/// Checks `||x - x_{T(x)}||_p <= c_T min_{Omega in model} ||x - x_Omega||_p`
/// and membership of `T(x)` in the declared output model.
pub fn check_tail_contract<T: TailOracle + ?Sized>(
    oracle: &T,
    x: &SignalMatrix,
    model: &CemdParams,
) -> Result<ContractReport> {
    check_tail_contract_with_limit(oracle, x, model, DEFAULT_ENUMERATION_LIMIT)
}

pub fn check_tail_contract_with_limit<T: TailOracle + ?Sized>(
    oracle: &T,
    x: &SignalMatrix,
    model: &CemdParams,
    limit: u64,
) -> Result<ContractReport> {
    check_grid(x, model)?;
    let q = oracle.quality();
    let (witness, _) = best_head_support(x, model, q.norm, limit)?;
    let returned = oracle.tail(x)?;
    let value = q.norm.root(tail_power(x, &returned, q.norm));
    let optimum = q.norm.root(tail_power(x, &witness, q.norm));
    let in_output_model = is_member(&returned, &oracle.output_model());
    let holds = in_output_model && le_rel(value, q.factor * optimum, GUARANTEE_TOLERANCE);
    Ok(ContractReport {
        holds,
        returned,
        value,
        optimum,
        witness,
        in_output_model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Empty(CemdParams);

    impl HeadOracle for Empty {
        fn head(&self, _: &SignalMatrix) -> Result<Support> {
            Ok(Support::new())
        }
        fn quality(&self) -> OracleQuality {
            OracleQuality::head(0.5, Norm::L2).unwrap()
        }
        fn input_model(&self) -> CemdParams {
            self.0
        }
        fn output_model(&self) -> CemdParams {
            self.0
        }
    }

    fn fig3() -> SignalMatrix {
        SignalMatrix::from_rows(&[[1.0, 3.0], [0.0, -1.0], [2.0, 1.0]]).unwrap()
    }

    #[test]
    fn exact_head_satisfies_itself() {
        let p = CemdParams::new(3, 2, 2, 1).unwrap();
        let h = ExactHead::new(p, Norm::L1).unwrap();
        let r = check_head_contract(&h, &fig3(), &p).unwrap();
        assert!(r.holds);
        assert_eq!(r.value, r.optimum);
    }

    #[test]
    fn empty_oracle_is_caught() {
        let p = CemdParams::new(3, 2, 2, 1).unwrap();
        let r = check_head_contract(&Empty(p), &fig3(), &p).unwrap();
        assert!(!r.holds);
        assert!(r.in_output_model);
        assert!(x_value(&fig3(), &r.witness) > 0.0);
    }

    fn x_value(x: &SignalMatrix, s: &Support) -> f64 {
        x.power_sum_on(s, Norm::L2)
    }

    #[test]
    fn exact_tail_holds_and_is_exact_in_model() {
        let p = CemdParams::new(3, 2, 2, 1).unwrap();
        let t = ExactTail::new(p, Norm::L2).unwrap();
        let r = check_tail_contract(&t, &fig3(), &p).unwrap();
        assert!(r.holds);
        let x = SignalMatrix::from_rows(&[[1.0, 0.0], [0.0, 5.0], [0.0, 0.0]]).unwrap();
        let r = check_tail_contract(&t, &x, &p).unwrap();
        assert!(r.holds);
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn oversized_exact_oracle_refused() {
        let p = CemdParams::with_sparsity(12, 8, 3, 4).unwrap();
        assert!(ExactHead::new(p, Norm::L2).is_err());
    }

    #[test]
    fn wrong_grid_rejected() {
        let p = CemdParams::new(3, 3, 3, 1).unwrap();
        let h = ExactHead::new(p, Norm::L2).unwrap();
        assert!(check_head_contract(&h, &fig3(), &p).is_err());
    }
}

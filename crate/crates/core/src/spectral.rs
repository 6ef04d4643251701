//! Diagonal spectral model of the linear operator `A` and the drift `b`.
//!
//! `A e_j = -λ_j e_j` with `0 < λ_1 ≤ λ_2 ≤ … ≤ λ_d`. The drift acts
//! componentwise in the same eigenbasis. Everything downstream reads the
//! operator and the drift only through this module.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `φ₁(z) = (1 − e^{−z}) / z` with `φ₁(0) = 1`.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - 0.5 * z
    } else {
        -(-z).exp_m1() / z
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, got })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    eigenvalues: Vec<f64>,
    beta: f64,
    epsilon: f64,
    omega: f64,
}

impl OperatorSpec {
    pub fn new(eigenvalues: Vec<f64>, beta: f64, epsilon: f64) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::InvalidParameter("at least one mode is required".into()));
        }
        if let Some(bad) = eigenvalues.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "eigenvalues must be finite and strictly positive, found {bad}"
            )));
        }
        if eigenvalues.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidParameter("eigenvalues must be nondecreasing".into()));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidParameter(format!("beta must lie in (0, 1), got {beta}")));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be >= 0, got {epsilon}")));
        }
        let omega = eigenvalues[0];
        Ok(Self {
            eigenvalues,
            beta,
            epsilon,
            omega,
        })
    }

    /// Dirichlet Laplacian on `(0, π)`: `λ_j = j²`, `j = 1..=d`.
    pub fn laplacian(d: usize, beta: f64, epsilon: f64) -> Result<Self> {
        Self::new((1..=d).map(|j| (j * j) as f64).collect(), beta, epsilon)
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Spectral gap `ω = λ_1`.
    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Same operator with a different noise color.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.eigenvalues.clone(), self.beta, epsilon)
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.eigenvalues.clone(), beta, self.epsilon)
    }

    /// `e^{tA} v`.
    pub fn semigroup_apply(&self, t: f64, v: &[f64]) -> Result<Vec<f64>> {
        if t < 0.0 || t.is_nan() {
            return Err(Error::NegativeTime(t));
        }
        check_len(self.dim(), v.len())?;
        Ok(self
            .eigenvalues
            .iter()
            .zip(v)
            .map(|(l, x)| (-l * t).exp() * x)
            .collect())
    }

    /// `(−A)^α v`; negative powers are fine since every `λ_j > 0`.
    pub fn fractional_apply(&self, alpha: f64, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), v.len())?;
        Ok(self
            .eigenvalues
            .iter()
            .zip(v)
            .map(|(l, x)| l.powf(alpha) * x)
            .collect())
    }

    /// `Tr[(−A)^{β−1}]` over the retained modes.
    pub fn trace_diagnostic(&self) -> TraceDiagnostic {
        let per_mode: Vec<f64> = self
            .eigenvalues
            .iter()
            .map(|l| l.powf(self.beta - 1.0))
            .collect();
        let trace_value: f64 = per_mode.iter().sum();
        let tail_ratio = per_mode.last().copied().unwrap_or(0.0) / trace_value;
        TraceDiagnostic {
            trace_value,
            per_mode,
            tail_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceDiagnostic {
    pub trace_value: f64,
    pub per_mode: Vec<f64>,
    /// `λ_d^{β−1} / trace_value`; small values mean the truncation is benign.
    pub tail_ratio: f64,
}

/// A scalar map applied to every coordinate.
#[derive(Clone)]
pub struct ComponentwiseFn {
    pub value: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub derivative: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    pub name: String,
}

impl fmt::Debug for ComponentwiseFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComponentwiseFn")
            .field("name", &self.name)
            .field("differentiable", &self.derivative.is_some())
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum DriftKind {
    Zero,
    /// `b(z) = c z`.
    Linear { c: f64 },
    /// `b(z)_j = −m tanh(a z_j)`.
    BoundedTanh { amplitude: f64, scale: f64 },
    Componentwise(ComponentwiseFn),
}

#[derive(Debug, Clone)]
pub struct DriftSpec {
    kind: DriftKind,
    lipschitz_const: f64,
    sup_bound: Option<f64>,
    dissipative: bool,
}

impl DriftSpec {
    pub fn zero() -> Self {
        Self {
            kind: DriftKind::Zero,
            lipschitz_const: 0.0,
            sup_bound: Some(0.0),
            dissipative: true,
        }
    }

    pub fn linear(c: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::InvalidParameter(format!("linear drift slope must be finite, got {c}")));
        }
        Ok(Self {
            kind: DriftKind::Linear { c },
            lipschitz_const: c.abs(),
            sup_bound: None,
            dissipative: c <= 0.0,
        })
    }

    /// Bounded dissipative drift on `d` modes; `‖b‖_∞ = m √d`.
    pub fn bounded_tanh(amplitude: f64, scale: f64, d: usize) -> Result<Self> {
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidParameter(format!("tanh amplitude must be >= 0, got {amplitude}")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("tanh scale must be > 0, got {scale}")));
        }
        Ok(Self {
            kind: DriftKind::BoundedTanh { amplitude, scale },
            lipschitz_const: amplitude * scale,
            sup_bound: Some(amplitude * (d as f64).sqrt()),
            dissipative: true,
        })
    }

    /// Componentwise drift supplied by the caller; the constants are taken as given.
    pub fn componentwise(
        f: ComponentwiseFn,
        lipschitz_const: f64,
        sup_bound: Option<f64>,
        dissipative: bool,
    ) -> Self {
        Self {
            kind: DriftKind::Componentwise(f),
            lipschitz_const,
            sup_bound,
            dissipative,
        }
    }

    pub fn kind(&self) -> &DriftKind {
        &self.kind
    }

    pub fn lipschitz_const(&self) -> f64 {
        self.lipschitz_const
    }

    pub fn sup_bound(&self) -> Option<f64> {
        self.sup_bound
    }

    pub fn require_sup_bound(&self, operation: &'static str) -> Result<f64> {
        self.sup_bound.ok_or(Error::MissingSupBound { operation })
    }

    pub fn is_dissipative(&self) -> bool {
        self.dissipative
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, DriftKind::Zero)
    }

    pub fn is_differentiable(&self) -> bool {
        match &self.kind {
            DriftKind::Componentwise(f) => f.derivative.is_some(),
            _ => true,
        }
    }

    /// Short label used in reports.
    pub fn label(&self) -> String {
        match &self.kind {
            DriftKind::Zero => "zero".into(),
            DriftKind::Linear { c } => format!("linear(c={c})"),
            DriftKind::BoundedTanh { amplitude, scale } => format!("tanh(m={amplitude},a={scale})"),
            DriftKind::Componentwise(f) => format!("custom({})", f.name),
        }
    }

    /// Checks the drift against an operator: the linear family needs
    /// `c < ω` so that `A + c` stays negative.
    pub fn validate(&self, spec: &OperatorSpec) -> Result<()> {
        if let DriftKind::Linear { c } = self.kind {
            if c >= spec.omega() {
                return Err(Error::InvalidParameter(format!(
                    "linear drift needs c < omega = {}, got c = {c}",
                    spec.omega()
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn component(&self, z: f64) -> f64 {
        match &self.kind {
            DriftKind::Zero => 0.0,
            DriftKind::Linear { c } => c * z,
            DriftKind::BoundedTanh { amplitude, scale } => -amplitude * (scale * z).tanh(),
            DriftKind::Componentwise(f) => (f.value)(z),
        }
    }

    /// Derivative of the scalar map, when one is available.
    #[inline]
    pub fn component_derivative(&self, z: f64) -> Option<f64> {
        match &self.kind {
            DriftKind::Zero => Some(0.0),
            DriftKind::Linear { c } => Some(*c),
            DriftKind::BoundedTanh { amplitude, scale } => {
                let t = (scale * z).tanh();
                Some(-amplitude * scale * (1.0 - t * t))
            }
            DriftKind::Componentwise(f) => f.derivative.as_ref().map(|d| d(z)),
        }
    }

    pub fn eval(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&v| self.component(v)).collect()
    }

    pub fn eval_into(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), out.len());
        for (o, &v) in out.iter_mut().zip(z) {
            *o = self.component(v);
        }
    }

    /// Lipschitz constant of `(−A)^ε b` for a diagonal drift: `L λ_d^ε`.
    pub fn colored_lipschitz_const(&self, spec: &OperatorSpec) -> f64 {
        let top = *spec.eigenvalues().last().expect("nonempty spectrum");
        self.lipschitz_const * top.powf(spec.epsilon())
    }
}

/// `b(z)` for a full mode vector.
pub fn drift_eval(drift: &DriftSpec, z: &[f64]) -> Vec<f64> {
    drift.eval(z)
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn semigroup_identity_at_zero() {
        let spec = OperatorSpec::laplacian(3, 0.25, 0.0).unwrap();
        let v = vec![1.5, -2.0, 0.3];
        assert_eq!(spec.semigroup_apply(0.0, &v).unwrap(), v);
    }

    #[test]
    fn semigroup_scalar_values() {
        let spec = OperatorSpec::new(vec![1.0], 0.5, 0.0).unwrap();
        let out = spec.semigroup_apply(2f64.ln(), &[1.0]).unwrap();
        assert!(close(out[0], 0.5, 1e-15));

        let spec = OperatorSpec::new(vec![1.0, 4.0], 0.5, 0.0).unwrap();
        let out = spec.semigroup_apply(1.0, &[1.0, 1.0]).unwrap();
        assert!(close(out[0], 0.367879441171442, 1e-14));
        assert!(close(out[1], 0.018315638888734, 1e-14));
    }

    #[test]
    fn semigroup_rejects_negative_time() {
        let spec = OperatorSpec::laplacian(2, 0.25, 0.0).unwrap();
        assert_eq!(
            spec.semigroup_apply(-0.1, &[1.0, 1.0]),
            Err(Error::NegativeTime(-0.1))
        );
        assert!(matches!(
            spec.semigroup_apply(0.1, &[1.0]),
            Err(Error::LengthMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn fractional_powers() {
        let spec = OperatorSpec::laplacian(3, 0.25, 0.0).unwrap();
        let v = vec![1.0, 1.0, 1.0];
        assert_eq!(spec.fractional_apply(0.0, &v).unwrap(), v);
        let inv = spec.fractional_apply(-1.0, &v).unwrap();
        assert!(close(inv[0], 1.0, 1e-15));
        assert!(close(inv[1], 0.25, 1e-15));
        assert!(close(inv[2], 1.0 / 9.0, 1e-15));
        let spec = OperatorSpec::new(vec![4.0], 0.25, 0.0).unwrap();
        assert!(close(spec.fractional_apply(0.5, &[1.0]).unwrap()[0], 2.0, 1e-15));
    }

    #[test]
    fn trace_partial_sums() {
        let one = OperatorSpec::new(vec![1.0], 0.3, 0.0).unwrap();
        assert_eq!(one.trace_diagnostic().trace_value, 1.0);

        let spec = OperatorSpec::laplacian(3, 0.25, 0.0).unwrap();
        let diag = spec.trace_diagnostic();
        assert!(close(diag.trace_value, 1.546003, 1e-6));
        assert_eq!(diag.per_mode.len(), 3);

        // Σ_{j≤64} j^{-3/2}, summed independently in extended precision.
        let spec = OperatorSpec::laplacian(64, 0.25, 0.0).unwrap();
        let diag = spec.trace_diagnostic();
        assert!(close(diag.trace_value, 2.3633480966, 1e-9));
        assert!(close(diag.tail_ratio, 64f64.powf(-1.5) / 2.3633480966, 1e-9));
    }

    #[test]
    fn rejects_bad_operators() {
        assert!(OperatorSpec::new(vec![], 0.2, 0.0).is_err());
        assert!(OperatorSpec::new(vec![1.0, -1.0], 0.2, 0.0).is_err());
        assert!(OperatorSpec::new(vec![4.0, 1.0], 0.2, 0.0).is_err());
        assert!(OperatorSpec::new(vec![1.0], 1.0, 0.0).is_err());
        assert!(OperatorSpec::new(vec![1.0], 0.5, -0.1).is_err());
    }

    #[test]
    fn drift_examples() {
        assert_eq!(DriftSpec::zero().eval(&[1.0, -3.0]), vec![0.0, 0.0]);
        let lin = DriftSpec::linear(-0.5).unwrap();
        assert_eq!(lin.eval(&[2.0, -2.0]), vec![-1.0, 1.0]);
        let th = DriftSpec::bounded_tanh(1.0, 1.0, 1).unwrap();
        assert_eq!(th.eval(&[0.0]), vec![0.0]);
        let v = th.eval(&[10.0])[0];
        assert!(close(v, -0.999999995877693, 1e-15));
    }

    #[test]
    fn tanh_constants() {
        let th = DriftSpec::bounded_tanh(0.5, 2.0, 4).unwrap();
        assert_eq!(th.sup_bound(), Some(1.0));
        assert_eq!(th.lipschitz_const(), 1.0);
        assert!(th.is_dissipative());
    }

    #[test]
    fn linear_drift_must_keep_operator_negative() {
        let spec = OperatorSpec::laplacian(2, 0.25, 0.0).unwrap();
        assert!(DriftSpec::linear(0.5).unwrap().validate(&spec).is_ok());
        assert!(DriftSpec::linear(1.0).unwrap().validate(&spec).is_err());
        assert!(!DriftSpec::linear(0.5).unwrap().is_dissipative());
        assert!(DriftSpec::linear(-0.5).unwrap().require_sup_bound("test").is_err());
    }

    #[test]
    fn phi1_limits() {
        assert_eq!(phi1(0.0), 1.0);
        assert!(close(phi1(1e-10), 1.0 - 5e-11, 1e-18));
        assert!(close(phi1(1.0), 1.0 - (-1f64).exp(), 1e-15));
    }
}

//! Deterministic Volterra machinery on grid paths: the drift convolution
//! `γ_x`, the maps `F_x` / `G_x`, Cameron–Martin norms, the Itô sum, the
//! discrete Jacobian nilpotency check and the maximal-regularity check.
//!
//! `gamma` and `solve_F` share one left-endpoint exponential-Euler
//! quadrature, which makes the discrete `F_x` and `G_x` algebraic inverses
//! of each other (up to floating-point rounding).

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::path_space::{ConvolutionSampler, GaussianPathSample, PairCoefficients, TimeGrid};
use crate::spectral::{DriftSpec, OperatorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PathRole {
    K,
    Gamma,
    U,
    F,
    H,
}

/// Grid function with `d` modes on `N + 1` nodes, stored node-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeterministicPath {
    d: usize,
    steps: usize,
    values: Vec<f64>,
    role: PathRole,
}

impl DeterministicPath {
    pub fn zeros(d: usize, steps: usize) -> Self {
        Self {
            d,
            steps,
            values: vec![0.0; d * (steps + 1)],
            role: PathRole::H,
        }
    }

    pub fn from_values(d: usize, steps: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != d * (steps + 1) {
            return Err(Error::LengthMismatch {
                expected: d * (steps + 1),
                got: values.len(),
            });
        }
        Ok(Self {
            d,
            steps,
            values,
            role: PathRole::H,
        })
    }

    /// Samples `f(t_k, j)` on every node and mode.
    pub fn from_fn(d: usize, grid: &TimeGrid, f: impl Fn(f64, usize) -> f64) -> Self {
        let steps = grid.steps();
        let mut values = Vec::with_capacity(d * (steps + 1));
        for k in 0..=steps {
            let t = grid.time(k);
            values.extend((0..d).map(|j| f(t, j)));
        }
        Self {
            d,
            steps,
            values,
            role: PathRole::H,
        }
    }

    pub fn with_role(mut self, role: PathRole) -> Self {
        self.role = role;
        self
    }

    pub fn role(&self) -> PathRole {
        self.role
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.d + j]
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.d..(k + 1) * self.d]
    }

    pub fn check_shape(&self, d: usize, steps: usize) -> Result<()> {
        if self.d != d {
            return Err(Error::LengthMismatch {
                expected: d,
                got: self.d,
            });
        }
        if self.steps != steps {
            return Err(Error::LengthMismatch {
                expected: steps + 1,
                got: self.steps + 1,
            });
        }
        Ok(())
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// Pointwise sum `self + other`.
    pub fn add(&self, other: &Self) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Self { values, ..self.clone() }
    }
}

/// `e^{t_k A} x` on every node.
pub fn free_evolution(spec: &OperatorSpec, grid: &TimeGrid, x: &[f64]) -> Result<DeterministicPath> {
    if x.len() != spec.dim() {
        return Err(Error::LengthMismatch {
            expected: spec.dim(),
            got: x.len(),
        });
    }
    let lambdas = spec.eigenvalues();
    Ok(DeterministicPath::from_fn(spec.dim(), grid, |t, j| (-lambdas[j] * t).exp() * x[j]))
}

/// `γ_x(h)` together with the drift record `f(t_k) = b(h(t_k) + e^{t_k A} x)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaOutput {
    pub gamma: DeterministicPath,
    pub drift_record: DeterministicPath,
}

struct Stepper {
    decay: Vec<f64>,
    gain: Vec<f64>,
}

impl Stepper {
    fn new(spec: &OperatorSpec, grid: &TimeGrid) -> Result<Self> {
        // Only the deterministic coefficients are needed; they do not depend on ε.
        let white = spec.with_epsilon(0.0)?;
        let coeffs = PairCoefficients::new(&white, grid.dt())?;
        Ok(Self {
            decay: coeffs.modes.iter().map(|m| m.decay).collect(),
            gain: coeffs.modes.iter().map(|m| m.drift_gain).collect(),
        })
    }
}

fn check_inputs(spec: &OperatorSpec, grid: &TimeGrid, x: &[f64], h: &DeterministicPath) -> Result<()> {
    if x.len() != spec.dim() {
        return Err(Error::LengthMismatch {
            expected: spec.dim(),
            got: x.len(),
        });
    }
    h.check_shape(spec.dim(), grid.steps())
}

/// Exponential-Euler recursion
/// `γ(t_{k+1}) = e^{A dt} γ(t_k) + dt φ₁(λ dt) b(h(t_k) + e^{t_k A} x)`, `γ(0) = 0`.
pub fn gamma_with_drift(
    spec: &OperatorSpec,
    drift: &DriftSpec,
    x: &[f64],
    h: &DeterministicPath,
    grid: &TimeGrid,
) -> Result<GammaOutput> {
    check_inputs(spec, grid, x, h)?;
    let free = free_evolution(spec, grid, x)?;
    let stepper = Stepper::new(spec, grid)?;
    Ok(gamma_inner(&stepper, drift, &free, h))
}

fn gamma_inner(stepper: &Stepper, drift: &DriftSpec, free: &DeterministicPath, h: &DeterministicPath) -> GammaOutput {
    let d = h.d;
    let n = h.steps;
    let mut gamma = vec![0.0; d * (n + 1)];
    let mut record = vec![0.0; d * (n + 1)];
    for k in 0..=n {
        for j in 0..d {
            let f = drift.component(h.at(k, j) + free.at(k, j));
            record[k * d + j] = f;
            if k < n {
                gamma[(k + 1) * d + j] = stepper.decay[j] * gamma[k * d + j] + stepper.gain[j] * f;
            }
        }
    }
    GammaOutput {
        gamma: DeterministicPath {
            d,
            steps: n,
            values: gamma,
            role: PathRole::Gamma,
        },
        drift_record: DeterministicPath {
            d,
            steps: n,
            values: record,
            role: PathRole::F,
        },
    }
}

pub fn gamma(
    spec: &OperatorSpec,
    drift: &DriftSpec,
    x: &[f64],
    h: &DeterministicPath,
    grid: &TimeGrid,
) -> Result<DeterministicPath> {
    Ok(gamma_with_drift(spec, drift, x, h, grid)?.gamma)
}

/// `G_x(h) = h − γ_x(h)`.
#[allow(non_snake_case)]
pub fn apply_G(
    spec: &OperatorSpec,
    drift: &DriftSpec,
    x: &[f64],
    h: &DeterministicPath,
    grid: &TimeGrid,
) -> Result<DeterministicPath> {
    let g = gamma(spec, drift, x, h, grid)?;
    let values = h.values.iter().zip(&g.values).map(|(a, b)| a - b).collect();
    Ok(DeterministicPath {
        d: h.d,
        steps: h.steps,
        values,
        role: PathRole::H,
    })
}

/// Solves `k = γ_x(k) + h` by forward marching on `y = k − h`.
#[allow(non_snake_case)]
pub fn solve_F(
    spec: &OperatorSpec,
    drift: &DriftSpec,
    x: &[f64],
    h: &DeterministicPath,
    grid: &TimeGrid,
) -> Result<DeterministicPath> {
    check_inputs(spec, grid, x, h)?;
    let free = free_evolution(spec, grid, x)?;
    let stepper = Stepper::new(spec, grid)?;
    let d = h.d;
    let n = h.steps;
    let mut y = vec![0.0; d];
    let mut k_path = vec![0.0; d * (n + 1)];
    for k in 0..=n {
        for j in 0..d {
            let kv = y[j] + h.at(k, j);
            k_path[k * d + j] = kv;
            if k < n {
                y[j] = stepper.decay[j] * y[j] + stepper.gain[j] * drift.component(kv + free.at(k, j));
            }
        }
    }
    Ok(DeterministicPath {
        d,
        steps: n,
        values: k_path,
        role: PathRole::K,
    })
}

/// Two discretizations of the Cameron–Martin norm of `u = e^{·A} ∗ f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CMNormReport {
    /// `Σ_j λ_j^ε [λ_j u_j(T)² + Σ_k dt ((Δu_j/dt)² + λ_j² u_j(t_k)²)]`.
    pub direct_sq: f64,
    /// `Σ_k dt |(−A)^{ε/2} f(t_k)|²`.
    pub drift_l2_sq: f64,
    pub rel_gap: f64,
}

pub fn cm_norm_sq(
    spec: &OperatorSpec,
    grid: &TimeGrid,
    u: &DeterministicPath,
    f: &DeterministicPath,
) -> Result<CMNormReport> {
    u.check_shape(spec.dim(), grid.steps())?;
    f.check_shape(spec.dim(), grid.steps())?;
    let u0 = u.node(0).iter().map(|v| v.abs()).fold(0.0, f64::max);
    if u0 != 0.0 {
        return Err(Error::NonzeroInitialValue(u0));
    }
    let dt = grid.dt();
    let n = grid.steps();
    let eps = spec.epsilon();
    let mut direct_sq = 0.0;
    let mut drift_l2_sq = 0.0;
    for (j, &l) in spec.eigenvalues().iter().enumerate() {
        let weight = l.powf(eps);
        let mut mode_sum = l * u.at(n, j) * u.at(n, j);
        let mut drift_sum = 0.0;
        for k in 0..n {
            let slope = (u.at(k + 1, j) - u.at(k, j)) / dt;
            let uk = u.at(k, j);
            mode_sum += dt * (slope * slope + l * l * uk * uk);
            drift_sum += dt * f.at(k, j) * f.at(k, j);
        }
        direct_sq += weight * mode_sum;
        drift_l2_sq += weight * drift_sum;
    }
    Ok(CMNormReport {
        direct_sq,
        drift_l2_sq,
        rel_gap: (direct_sq - drift_l2_sq).abs() / drift_l2_sq.max(1e-30),
    })
}

/// Left-endpoint Itô sum `Σ_k Σ_j λ_j^{ε/2} g_j(t_k) ΔB_{j,k}` against
/// arbitrary increments (node-major, `N × d`).
pub fn ito_sum(spec: &OperatorSpec, integrand: &DeterministicPath, increments: &[f64]) -> Result<f64> {
    let d = spec.dim();
    let n = integrand.steps;
    if integrand.d != d {
        return Err(Error::LengthMismatch {
            expected: d,
            got: integrand.d,
        });
    }
    if increments.len() != n * d {
        return Err(Error::LengthMismatch {
            expected: n * d,
            got: increments.len(),
        });
    }
    let scale: Vec<f64> = spec.eigenvalues().iter().map(|l| l.powf(0.5 * spec.epsilon())).collect();
    let mut acc = 0.0;
    for k in 0..n {
        for j in 0..d {
            acc += scale[j] * integrand.at(k, j) * increments[k * d + j];
        }
    }
    Ok(acc)
}

/// Itô integral of an adapted grid integrand against the sample's driving
/// Brownian increments.
pub fn ito_integral(integrand: &DeterministicPath, sample: &GaussianPathSample, spec: &OperatorSpec) -> Result<f64> {
    if integrand.steps != sample.steps {
        return Err(Error::LengthMismatch {
            expected: sample.steps + 1,
            got: integrand.steps + 1,
        });
    }
    ito_sum(spec, integrand, &sample.db)
}

/// `Σ_k dt Σ_j λ_j^ε g_j(t_k)²`, the isometry partner of [`ito_integral`].
pub fn ito_quadratic_variation(spec: &OperatorSpec, grid: &TimeGrid, integrand: &DeterministicPath) -> f64 {
    let dt = grid.dt();
    let weights: Vec<f64> = spec.eigenvalues().iter().map(|l| l.powf(spec.epsilon())).collect();
    let mut acc = 0.0;
    for k in 0..integrand.steps {
        for (j, w) in weights.iter().enumerate() {
            let g = integrand.at(k, j);
            acc += dt * w * g * g;
        }
    }
    acc
}

/// Result of probing the Jacobian of `h ↦ γ_x(h)`.
#[derive(Debug, Clone, Serialize)]
pub struct NilpotencyReport {
    pub probes: usize,
    /// Matrix size `d (N + 1)`.
    pub size: usize,
    /// Largest `|J|` entry coupling `γ(t_k)` to `h(t_m)` with `m ≥ k`
    /// (finite-difference Jacobian).
    pub fd_max_upper: f64,
    /// Same quantity for the analytic Jacobian.
    pub analytic_max_upper: f64,
    /// Largest entry of `J^N`, analytic Jacobian.
    pub power_max_entry: f64,
    /// Largest entry of `J^N`, finite-difference Jacobian.
    pub fd_power_max_entry: f64,
    /// Largest gap between the analytic and finite-difference Jacobians.
    pub fd_vs_analytic: f64,
    /// `det₂(I − J) = det(I − J) e^{tr J}`, worst deviation from 1 over probes.
    pub det2_max_deviation: f64,
    pub trace_max_abs: f64,
}

impl NilpotencyReport {
    pub fn passes(&self, fd_tol: f64, roundoff_tol: f64) -> bool {
        self.fd_max_upper <= fd_tol
            && self.analytic_max_upper == 0.0
            && self.power_max_entry <= roundoff_tol
            && self.fd_power_max_entry <= roundoff_tol
            && self.det2_max_deviation <= roundoff_tol
    }
}

const FD_STEP: f64 = 1e-7;

fn index(k: usize, j: usize, d: usize) -> usize {
    k * d + j
}

/// Builds the Jacobian of `h ↦ γ_x(h)` at `probe_count` random base points
/// (stochastic-convolution samples) by forward differences and analytically,
/// and checks that it is strictly lower triangular in time and nilpotent.
pub fn nilpotency_check(
    spec: &OperatorSpec,
    drift: &DriftSpec,
    x: &[f64],
    grid: &TimeGrid,
    probe_count: usize,
    seed: u64,
) -> Result<NilpotencyReport> {
    if grid.steps() > 32 || spec.dim() > 4 {
        return Err(Error::InvalidParameter(format!(
            "nilpotency probe is limited to N <= 32 and d <= 4, got N = {}, d = {}",
            grid.steps(),
            spec.dim()
        )));
    }
    if !drift.is_differentiable() {
        return Err(Error::NotDifferentiable {
            operation: "nilpotency_check",
        });
    }
    let d = spec.dim();
    let n = grid.steps();
    let size = d * (n + 1);
    let stepper = Stepper::new(spec, grid)?;
    let free = free_evolution(spec, grid, x)?;
    let sampler = ConvolutionSampler::new(spec, grid)?;

    let mut report = NilpotencyReport {
        probes: probe_count,
        size,
        fd_max_upper: 0.0,
        analytic_max_upper: 0.0,
        power_max_entry: 0.0,
        fd_power_max_entry: 0.0,
        fd_vs_analytic: 0.0,
        det2_max_deviation: 0.0,
        trace_max_abs: 0.0,
    };

    for p in 0..probe_count {
        let base = sampler.sample_indexed(seed, p as u64).path();
        let g0 = gamma_inner(&stepper, drift, &free, &base).gamma;

        let mut fd = DMatrix::<f64>::zeros(size, size);
        for m in 0..=n {
            for i in 0..d {
                let mut bumped = base.clone();
                bumped.values[index(m, i, d)] += FD_STEP;
                let g1 = gamma_inner(&stepper, drift, &free, &bumped).gamma;
                for r in 0..size {
                    fd[(r, index(m, i, d))] = (g1.values[r] - g0.values[r]) / FD_STEP;
                }
            }
        }

        // ∂γ_j(t_k)/∂h_j(t_m) = e^{−λ_j (k−1−m) dt} dt φ₁ b'(z_j(t_m)) for m < k.
        let mut an = DMatrix::<f64>::zeros(size, size);
        for k in 1..=n {
            for m in 0..k {
                for j in 0..d {
                    let deriv = drift
                        .component_derivative(base.at(m, j) + free.at(m, j))
                        .ok_or(Error::NotDifferentiable {
                            operation: "nilpotency_check",
                        })?;
                    an[(index(k, j, d), index(m, j, d))] =
                        stepper.decay[j].powi((k - 1 - m) as i32) * stepper.gain[j] * deriv;
                }
            }
        }

        for k in 0..=n {
            for m in k..=n {
                for j in 0..d {
                    for i in 0..d {
                        let (r, c) = (index(k, j, d), index(m, i, d));
                        report.fd_max_upper = report.fd_max_upper.max(fd[(r, c)].abs());
                        report.analytic_max_upper = report.analytic_max_upper.max(an[(r, c)].abs());
                    }
                }
            }
        }
        report.fd_vs_analytic = report.fd_vs_analytic.max((&fd - &an).abs().max());

        let power = matrix_power(&an, n);
        report.power_max_entry = report.power_max_entry.max(power.abs().max());
        let fd_power = matrix_power(&fd, n);
        report.fd_power_max_entry = report.fd_power_max_entry.max(fd_power.abs().max());

        let trace = an.trace();
        let det = (DMatrix::<f64>::identity(size, size) - &an).determinant();
        let det2 = det * trace.exp();
        report.det2_max_deviation = report.det2_max_deviation.max((det2 - 1.0).abs());
        report.trace_max_abs = report.trace_max_abs.max(trace.abs());
    }
    Ok(report)
}

fn matrix_power(m: &DMatrix<f64>, exp: usize) -> DMatrix<f64> {
    let mut out = DMatrix::<f64>::identity(m.nrows(), m.ncols());
    for _ in 0..exp {
        out = &out * m;
    }
    out
}

/// `u = e^{·A} ∗ f` by the same φ₁ recursion used for `γ`.
pub fn convolve_forcing(spec: &OperatorSpec, grid: &TimeGrid, f: &DeterministicPath) -> Result<DeterministicPath> {
    f.check_shape(spec.dim(), grid.steps())?;
    let stepper = Stepper::new(spec, grid)?;
    let d = f.d;
    let n = f.steps;
    let mut u = vec![0.0; d * (n + 1)];
    for k in 0..n {
        for j in 0..d {
            u[(k + 1) * d + j] = stepper.decay[j] * u[k * d + j] + stepper.gain[j] * f.at(k, j);
        }
    }
    Ok(DeterministicPath {
        d,
        steps: n,
        values: u,
        role: PathRole::U,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegularityReport {
    /// `|u'|_{L²(0,T;H)}`, forward differences.
    pub derivative_norm: f64,
    /// `|Au|_{L²(0,T;H)}`, left-endpoint quadrature.
    pub operator_norm: f64,
    /// `|f|_{L²(0,T;H)}`, left-endpoint quadrature.
    pub forcing_norm: f64,
    /// Discretization slack `1 + 10 dt` applied to both inequalities.
    pub slack: f64,
    pub derivative_bound_holds: bool,
    pub operator_bound_holds: bool,
    /// `|(−A)^{1/2} u(T)| / |f|`; recorded only.
    pub terminal_ratio: f64,
}

/// Checks `|u'| ≤ 2|f|` and `|Au| ≤ |f|` for `u = e^{·A} ∗ f`.
pub fn regularity_check(spec: &OperatorSpec, grid: &TimeGrid, f: &DeterministicPath) -> Result<RegularityReport> {
    let u = convolve_forcing(spec, grid, f)?;
    let dt = grid.dt();
    let n = grid.steps();
    let mut du = 0.0;
    let mut au = 0.0;
    let mut ff = 0.0;
    let mut terminal = 0.0;
    for (j, &l) in spec.eigenvalues().iter().enumerate() {
        for k in 0..n {
            let slope = (u.at(k + 1, j) - u.at(k, j)) / dt;
            du += dt * slope * slope;
            au += dt * (l * u.at(k, j)).powi(2);
            ff += dt * f.at(k, j).powi(2);
        }
        terminal += l * u.at(n, j).powi(2);
    }
    let (du, au, ff) = (du.sqrt(), au.sqrt(), ff.sqrt());
    let slack = 1.0 + 10.0 * dt;
    Ok(RegularityReport {
        derivative_norm: du,
        operator_norm: au,
        forcing_norm: ff,
        slack,
        derivative_bound_holds: du <= 2.0 * ff * slack,
        operator_bound_holds: au <= ff * slack,
        terminal_ratio: if ff == 0.0 { 0.0 } else { terminal.sqrt() / ff },
    })
}

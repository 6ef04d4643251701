//! Importance weights on path space and the two estimators of `E[Φ(Z_x)]`.
//!
//! The weighted estimator samples the stochastic convolution `h`, evaluates
//! `Φ(h + e^{·A}x)` and multiplies by
//! `ρ = exp{−½ |γ_x(h)|²_CM + I}` where the Cameron–Martin norm is the drift
//! `L²` norm `Σ_k dt |(−A)^{ε/2} f(t_k)|²` and `I = Σ_k ⟨(−A)^{ε/2} f(t_k), ΔB_k⟩`
//! is the Itô sum of the drift record against the increments that generated
//! `h`. On the grid this weight is the exact likelihood ratio between the
//! exponential-Euler scheme with drift and the pure convolution, so both
//! estimators target the same discrete expectation.
//!
//! The direct estimator simulates that scheme with its own random streams.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mc::{effective_sample_size_log, par_map_indexed, warn_on_degeneracy, Estimate, McConfig};
use crate::mild_maps::{cm_norm_sq, gamma_with_drift, ito_integral, ito_quadratic_variation, DeterministicPath};
use crate::path_space::{ConvolutionSampler, GaussianPathSample, PairCoefficients, TimeGrid};
use crate::rng::{GaussianStream, StreamPurpose};
use crate::spectral::{DriftSpec, OperatorSpec};

/// Functional of a grid path `z` (node-major, `d` modes).
#[derive(Clone)]
pub enum PathFunctional {
    Constant(f64),
    /// `z_j(T)`.
    TerminalCoordinate(usize),
    /// `|z(T)|²`.
    TerminalSquaredNorm,
    /// `max_k z_1(t_k)`.
    RunningSupFirst,
    /// `(1/T) ∫₀^T z_1(t) dt`, trapezoid rule.
    TimeAverageFirst,
    /// `φ(z(T))`.
    Terminal(StateFunction),
    Custom {
        name: String,
        f: Arc<dyn Fn(&[f64], usize, &TimeGrid) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for PathFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl PathFunctional {
    /// The four built-in functionals used by the agreement tests.
    pub fn builtins() -> Vec<PathFunctional> {
        vec![
            PathFunctional::TerminalCoordinate(0),
            PathFunctional::TerminalSquaredNorm,
            PathFunctional::RunningSupFirst,
            PathFunctional::TimeAverageFirst,
        ]
    }

    pub fn name(&self) -> String {
        match self {
            PathFunctional::Constant(c) => format!("constant({c})"),
            PathFunctional::TerminalCoordinate(j) => format!("terminal_coordinate_{}", j + 1),
            PathFunctional::TerminalSquaredNorm => "terminal_squared_norm".into(),
            PathFunctional::RunningSupFirst => "running_sup_1".into(),
            PathFunctional::TimeAverageFirst => "time_average_1".into(),
            PathFunctional::Terminal(phi) => format!("terminal[{}]", phi.name()),
            PathFunctional::Custom { name, .. } => name.clone(),
        }
    }

    pub fn eval(&self, z: &[f64], d: usize, grid: &TimeGrid) -> f64 {
        let n = grid.steps();
        let terminal = &z[n * d..(n + 1) * d];
        match self {
            PathFunctional::Constant(c) => *c,
            PathFunctional::TerminalCoordinate(j) => terminal[*j],
            PathFunctional::TerminalSquaredNorm => terminal.iter().map(|v| v * v).sum(),
            PathFunctional::RunningSupFirst => (0..=n).map(|k| z[k * d]).fold(f64::NEG_INFINITY, f64::max),
            PathFunctional::TimeAverageFirst => {
                let w = grid.trapezoid_weights();
                (0..=n).map(|k| w[k] * z[k * d]).sum::<f64>() / grid.horizon()
            }
            PathFunctional::Terminal(phi) => phi.eval(terminal),
            PathFunctional::Custom { f, .. } => f(z, d, grid),
        }
    }
}

/// Function of the state `z ∈ R^d`.
#[derive(Clone)]
pub enum StateFunction {
    Constant(f64),
    Coordinate(usize),
    SquaredCoordinate(usize),
    SquaredNorm,
    /// `cos⟨ξ, z⟩`, the real part of the characteristic function.
    CharacteristicCos(Vec<f64>),
    Custom {
        name: String,
        f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for StateFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl StateFunction {
    pub fn name(&self) -> String {
        match self {
            StateFunction::Constant(c) => format!("constant({c})"),
            StateFunction::Coordinate(j) => format!("z{}", j + 1),
            StateFunction::SquaredCoordinate(j) => format!("z{}^2", j + 1),
            StateFunction::SquaredNorm => "|z|^2".into(),
            StateFunction::CharacteristicCos(xi) => format!("cos<xi,z> (|xi|={:.3})", crate::spectral::norm(xi)),
            StateFunction::Custom { name, .. } => name.clone(),
        }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            StateFunction::Constant(c) => *c,
            StateFunction::Coordinate(j) => z[*j],
            StateFunction::SquaredCoordinate(j) => z[*j] * z[*j],
            StateFunction::SquaredNorm => z.iter().map(|v| v * v).sum(),
            StateFunction::CharacteristicCos(xi) => xi.iter().zip(z).map(|(a, b)| a * b).sum::<f64>().cos(),
            StateFunction::Custom { f, .. } => f(z),
        }
    }
}

/// Log-space importance weight of one Gaussian path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedSample {
    /// `−cm_sq / 2 + ito`.
    pub log_weight: f64,
    /// Drift-`L²` form of `|γ_x(h)|²_CM`.
    pub cm_sq: f64,
    /// Discretized Cameron–Martin norm of `γ_x(h)` itself (diagnostic).
    pub cm_direct_sq: f64,
    pub ito: f64,
    /// `Σ_k dt Σ_j λ^ε γ_j(t_k)²`.
    pub gamma_l2_sq: f64,
    pub sample_ref: u64,
}

impl WeightedSample {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }
}

/// Weight of a single sample.
pub fn log_weight(
    spec: &OperatorSpec,
    drift: &DriftSpec,
    x: &[f64],
    sample: &GaussianPathSample,
    grid: &TimeGrid,
) -> Result<WeightedSample> {
    let h = sample.path();
    let out = gamma_with_drift(spec, drift, x, &h, grid)?;
    let cm = cm_norm_sq(spec, grid, &out.gamma, &out.drift_record)?;
    let ito = ito_integral(&out.drift_record, sample, spec)?;
    Ok(WeightedSample {
        log_weight: -0.5 * cm.drift_l2_sq + ito,
        cm_sq: cm.drift_l2_sq,
        cm_direct_sq: cm.direct_sq,
        ito,
        gamma_l2_sq: ito_quadratic_variation(spec, grid, &out.gamma),
        sample_ref: sample.seed,
    })
}

/// A fixed `(A, b, x, grid)` configuration.
#[derive(Debug, Clone)]
pub struct GirsanovProblem {
    pub spec: OperatorSpec,
    pub drift: DriftSpec,
    pub x: Vec<f64>,
    pub grid: TimeGrid,
}

impl GirsanovProblem {
    pub fn new(spec: OperatorSpec, drift: DriftSpec, x: Vec<f64>, grid: TimeGrid) -> Result<Self> {
        drift.validate(&spec)?;
        if x.len() != spec.dim() {
            return Err(Error::LengthMismatch {
                expected: spec.dim(),
                got: x.len(),
            });
        }
        Ok(Self { spec, drift, x, grid })
    }

    fn free(&self) -> Vec<f64> {
        let d = self.spec.dim();
        let mut out = Vec::with_capacity(d * self.grid.nodes());
        for k in 0..=self.grid.steps() {
            let t = self.grid.time(k);
            out.extend(self.spec.eigenvalues().iter().zip(&self.x).map(|(l, x)| (-l * t).exp() * x));
        }
        out
    }
}

/// Per-sample output of the weighted estimator.
#[derive(Debug, Clone)]
struct WeightedDraw {
    weight: WeightedSample,
    phis: Vec<f64>,
}

/// Everything the weighted estimator produced for one batch.
#[derive(Debug, Clone, Serialize)]
pub struct WeightedBatch {
    pub functionals: Vec<String>,
    pub estimates: Vec<Estimate>,
    /// `E[ρ]`.
    pub normalization: Estimate,
    pub samples: Vec<WeightedSample>,
}

impl WeightedBatch {
    pub fn log_weights(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.log_weight).collect()
    }

    /// `E[ρⁿ]`, accumulated from log-weights.
    pub fn weight_moment(&self, n: f64) -> Estimate {
        let v: Vec<f64> = self.samples.iter().map(|s| (n * s.log_weight).exp()).collect();
        Estimate::from_samples(&v)
    }
}

/// Weighted estimates of several functionals on one set of Gaussian paths.
pub fn weighted_batch(problem: &GirsanovProblem, functionals: &[PathFunctional], mc: &McConfig) -> Result<WeightedBatch> {
    let spec = &problem.spec;
    let grid = &problem.grid;
    let d = spec.dim();
    let sampler = ConvolutionSampler::new(spec, grid)?;
    let free = problem.free();
    // Validate shapes once so the per-sample closure can unwrap.
    let probe = sampler.sample_indexed(mc.master_seed, 0);
    log_weight(spec, &problem.drift, &problem.x, &probe, grid)?;

    let draws: Vec<WeightedDraw> = par_map_indexed(mc.samples, mc.workers, |i| {
        let s = sampler.sample_indexed(mc.master_seed, i);
        let weight = log_weight(spec, &problem.drift, &problem.x, &s, grid).expect("shapes checked");
        let z: Vec<f64> = s.h.iter().zip(&free).map(|(a, b)| a + b).collect();
        let phis = functionals.iter().map(|phi| phi.eval(&z, d, grid)).collect();
        WeightedDraw { weight, phis }
    });

    let weights: Vec<f64> = draws.iter().map(|w| w.weight.weight()).collect();
    let estimates = (0..functionals.len())
        .map(|f| {
            let phi: Vec<f64> = draws.iter().map(|w| w.phis[f]).collect();
            let est = Estimate::weighted(&phi, &weights, mc.self_normalized);
            warn_on_degeneracy(&functionals[f].name(), &est);
            est
        })
        .collect();
    let mut normalization = Estimate::from_samples(&weights);
    normalization.ess = effective_sample_size_log(&draws.iter().map(|w| w.weight.log_weight).collect::<Vec<_>>());
    Ok(WeightedBatch {
        functionals: functionals.iter().map(PathFunctional::name).collect(),
        estimates,
        normalization,
        samples: draws.into_iter().map(|w| w.weight).collect(),
    })
}

/// Simulates `Z = K + e^{·A}x` with
/// `K(t_{k+1}) = e^{A dt} K(t_k) + dt φ₁ b(Z(t_k)) + (−A)^{−ε/2} η_k`.
/// Returns the node-major path of `Z`.
pub fn simulate_direct_path(
    problem: &GirsanovProblem,
    coeffs: &PairCoefficients,
    free: &[f64],
    src: &mut impl crate::rng::NormalSource,
) -> Vec<f64> {
    let d = problem.spec.dim();
    let n = problem.grid.steps();
    let mut z = vec![0.0; d * (n + 1)];
    z[..d].copy_from_slice(&free[..d]);
    let mut k_state = vec![0.0; d];
    for k in 0..n {
        for (j, m) in coeffs.modes.iter().enumerate() {
            let (_db, eta) = m.draw_pair(src);
            let f = problem.drift.component(k_state[j] + free[k * d + j]);
            k_state[j] = m.decay * k_state[j] + m.drift_gain * f + m.noise_scale * eta;
            z[(k + 1) * d + j] = k_state[j] + free[(k + 1) * d + j];
        }
    }
    z
}

/// Plain Monte Carlo estimates of several functionals of the simulated `Z`.
pub fn direct_batch(problem: &GirsanovProblem, functionals: &[PathFunctional], mc: &McConfig) -> Result<Vec<Estimate>> {
    let coeffs = PairCoefficients::new(&problem.spec, problem.grid.dt())?;
    let free = problem.free();
    let d = problem.spec.dim();
    let rows: Vec<Vec<f64>> = par_map_indexed(mc.samples, mc.workers, |i| {
        let mut src = GaussianStream::for_sample(mc.master_seed, StreamPurpose::Direct, i);
        let z = simulate_direct_path(problem, &coeffs, &free, &mut src);
        functionals.iter().map(|phi| phi.eval(&z, d, &problem.grid)).collect()
    });
    Ok((0..functionals.len())
        .map(|f| {
            let v: Vec<f64> = rows.iter().map(|r| r[f]).collect();
            Estimate::from_samples(&v)
        })
        .collect())
}

pub fn weighted_expectation(
    spec: &OperatorSpec,
    drift: &DriftSpec,
    x: &[f64],
    grid: &TimeGrid,
    phi: &PathFunctional,
    mc: &McConfig,
) -> Result<Estimate> {
    let problem = GirsanovProblem::new(spec.clone(), drift.clone(), x.to_vec(), *grid)?;
    Ok(weighted_batch(&problem, std::slice::from_ref(phi), mc)?.estimates[0])
}

pub fn direct_expectation(
    spec: &OperatorSpec,
    drift: &DriftSpec,
    x: &[f64],
    grid: &TimeGrid,
    phi: &PathFunctional,
    mc: &McConfig,
) -> Result<Estimate> {
    let problem = GirsanovProblem::new(spec.clone(), drift.clone(), x.to_vec(), *grid)?;
    Ok(direct_batch(&problem, std::slice::from_ref(phi), mc)?[0])
}

/// Direct and weighted estimates of the same quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub direct: Estimate,
    pub weighted: Estimate,
}

impl Comparison {
    pub fn gap(&self) -> f64 {
        (self.direct.value - self.weighted.value).abs()
    }

    pub fn combined_std_error(&self) -> f64 {
        self.direct.std_error.hypot(self.weighted.std_error)
    }

    /// `|direct − weighted| ≤ sigmas · SE_combined + bias`.
    pub fn agrees(&self, sigmas: f64, bias: f64) -> bool {
        self.gap() <= sigmas * self.combined_std_error() + bias
    }
}

/// `P_T φ(x)` by both estimators.
pub fn semigroup_compare(
    spec: &OperatorSpec,
    drift: &DriftSpec,
    x: &[f64],
    grid: &TimeGrid,
    phi: &StateFunction,
    mc: &McConfig,
) -> Result<Comparison> {
    let problem = GirsanovProblem::new(spec.clone(), drift.clone(), x.to_vec(), *grid)?;
    let f = [PathFunctional::Terminal(phi.clone())];
    Ok(Comparison {
        direct: direct_batch(&problem, &f, mc)?[0],
        weighted: weighted_batch(&problem, &f, mc)?.estimates[0],
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentRow {
    pub order: u32,
    pub moment: Estimate,
    /// `exp{(n² − n) ‖b‖²_∞}`.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentBoundTable {
    pub sup_bound: f64,
    pub rows: Vec<MomentRow>,
    /// `E[I²]` for the Itô term of the weight.
    pub ito_second_moment: Estimate,
    /// `E ∫₀^T |γ_x(h)(t)|² dt`.
    pub gamma_l2_moment: Estimate,
    /// `(T / 2ω) ‖b‖²_∞`.
    pub ito_bound: f64,
    pub ito_holds: bool,
    pub gamma_holds: bool,
    /// Fraction of samples whose `|γ_x|²_CM` exceeds `2 ‖b‖²_∞` (recorded only).
    pub cm_above_two_sup_sq: f64,
}

/// `value ≤ bound·(1 + 3·rel-SE)`; a zero estimate meets any bound ≥ 0,
/// where the relative error is undefined.
fn within_bound(e: &Estimate, bound: f64) -> bool {
    e.value <= bound || e.value <= bound * (1.0 + 3.0 * e.relative_error())
}

/// Sampled moments of `ρ` and of the Itô term against their a-priori bounds.
pub fn moment_bound_suite(
    spec: &OperatorSpec,
    drift: &DriftSpec,
    x: &[f64],
    grid: &TimeGrid,
    orders: &[u32],
    mc: &McConfig,
) -> Result<MomentBoundTable> {
    let sup = drift.require_sup_bound("moment_bound_suite")?;
    let problem = GirsanovProblem::new(spec.clone(), drift.clone(), x.to_vec(), *grid)?;
    let batch = weighted_batch(&problem, &[], mc)?;
    let rows = orders
        .iter()
        .map(|&n| {
            let moment = batch.weight_moment(n as f64);
            let nf = n as f64;
            let bound = ((nf * nf - nf) * sup * sup).exp();
            MomentRow {
                order: n,
                moment,
                bound,
                holds: within_bound(&moment, bound),
            }
        })
        .collect();
    let ito_sq: Vec<f64> = batch.samples.iter().map(|s| s.ito * s.ito).collect();
    let gamma_sq: Vec<f64> = batch.samples.iter().map(|s| s.gamma_l2_sq).collect();
    let ito_second_moment = Estimate::from_samples(&ito_sq);
    let gamma_l2_moment = Estimate::from_samples(&gamma_sq);
    let ito_bound = grid.horizon() / (2.0 * spec.omega()) * sup * sup;
    let above = batch.samples.iter().filter(|s| s.cm_sq > 2.0 * sup * sup).count();
    if above > 0 {
        log::info!("{above} samples have |gamma|^2_CM above 2 ||b||^2_inf");
    }
    Ok(MomentBoundTable {
        sup_bound: sup,
        rows,
        ito_holds: within_bound(&ito_second_moment, ito_bound),
        gamma_holds: within_bound(&gamma_l2_moment, ito_bound),
        ito_second_moment,
        gamma_l2_moment,
        ito_bound,
        cm_above_two_sup_sq: above as f64 / batch.samples.len() as f64,
    })
}

/// Reference path helper for tests and dumps: `h + e^{·A}x`.
pub fn shifted_path(problem: &GirsanovProblem, h: &DeterministicPath) -> DeterministicPath {
    let free = problem.free();
    let values = h.values().iter().zip(&free).map(|(a, b)| a + b).collect();
    DeterministicPath::from_values(h.dim(), h.steps(), values).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_problem(drift: DriftSpec) -> GirsanovProblem {
        let spec = OperatorSpec::laplacian(2, 0.25, 0.0).unwrap();
        let grid = TimeGrid::new(1.0, 16).unwrap();
        GirsanovProblem::new(spec, drift, vec![1.0, 0.0], grid).unwrap()
    }

    #[test]
    fn zero_drift_weight_is_exactly_one() {
        let p = small_problem(DriftSpec::zero());
        let sampler = ConvolutionSampler::new(&p.spec, &p.grid).unwrap();
        for i in 0..10 {
            let s = sampler.sample_indexed(3, i);
            let w = log_weight(&p.spec, &p.drift, &p.x, &s, &p.grid).unwrap();
            assert_eq!(w.log_weight, 0.0);
            assert_eq!(w.weight(), 1.0);
        }
    }

    #[test]
    fn log_weight_identity() {
        let p = small_problem(DriftSpec::bounded_tanh(0.5, 1.0, 2).unwrap());
        let sampler = ConvolutionSampler::new(&p.spec, &p.grid).unwrap();
        let s = sampler.sample_indexed(11, 4);
        let w = log_weight(&p.spec, &p.drift, &p.x, &s, &p.grid).unwrap();
        assert_eq!(w.log_weight, -w.cm_sq / 2.0 + w.ito);
        assert_eq!(w.sample_ref, 4);
    }

    #[test]
    fn constant_functional_reduces_to_normalization() {
        let p = small_problem(DriftSpec::linear(-0.5).unwrap());
        let mc = McConfig::new(2000, 5);
        let b = weighted_batch(&p, &[PathFunctional::Constant(1.0)], &mc).unwrap();
        assert_eq!(b.estimates[0].value, b.normalization.value);
    }

    #[test]
    fn functional_evaluation() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        // d = 2, nodes (0,0), (1,-1), (3,2)
        let z = [0.0, 0.0, 1.0, -1.0, 3.0, 2.0];
        assert_eq!(PathFunctional::TerminalCoordinate(1).eval(&z, 2, &grid), 2.0);
        assert_eq!(PathFunctional::TerminalSquaredNorm.eval(&z, 2, &grid), 13.0);
        assert_eq!(PathFunctional::RunningSupFirst.eval(&z, 2, &grid), 3.0);
        assert_eq!(PathFunctional::TimeAverageFirst.eval(&z, 2, &grid), 0.25 * 0.0 + 0.5 * 1.0 + 0.25 * 3.0);
        let cf = StateFunction::CharacteristicCos(vec![1.0, 0.5]);
        assert!((cf.eval(&[0.2, 0.4]) - 0.4f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn moment_suite_refuses_unbounded_drift() {
        let p = small_problem(DriftSpec::linear(-0.5).unwrap());
        let err = moment_bound_suite(&p.spec, &p.drift, &p.x, &p.grid, &[2], &McConfig::new(100, 0)).unwrap_err();
        assert!(matches!(err, Error::MissingSupBound { .. }));
    }

    #[test]
    fn comparison_arithmetic() {
        let a = Estimate {
            value: 1.0,
            std_error: 0.3,
            ess: 10.0,
            n: 10,
        };
        let b = Estimate { value: 1.5, std_error: 0.4, ..a };
        let c = Comparison { direct: a, weighted: b };
        assert!((c.combined_std_error() - 0.5).abs() < 1e-15);
        assert!(c.agrees(1.0, 0.0));
        assert!(!c.agrees(0.5, 0.0));
    }
}

//! Time grids, exact sampling of the stochastic convolution together with
//! its driving Brownian increments, and the checks on the Gaussian path
//! measure (covariance kernel, inverse-covariance boundary problem, Sobolev
//! moment bound).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mc::{mean_and_variance, par_map_indexed, Estimate, McConfig};
use crate::mild_maps::DeterministicPath;
use crate::rng::{GaussianStream, NormalSource, StreamPurpose};
use crate::spectral::OperatorSpec;

/// Uniform grid `t_k = k T / N` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be > 0, got {horizon}")));
        }
        if steps < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 steps, got {steps}")));
        }
        Ok(Self {
            horizon,
            steps,
            dt: horizon / steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `t_k`; the last node is exactly `T`.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Trapezoid weights on the nodes.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let mut w = vec![self.dt; self.nodes()];
        w[0] *= 0.5;
        w[self.steps] *= 0.5;
        w
    }
}

/// One-step coefficients of the exact OU recursion for a single mode.
///
/// Over a step of length `dt` the pair `(ΔB, η)` with
/// `η = ∫ e^{−λ(dt−s)} dB(s)` is Gaussian with `Var ΔB = dt`,
/// `Var η = (1 − e^{−2λdt}) / 2λ` and `Cov = (1 − e^{−λdt}) / λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeStep {
    /// `e^{−λ dt}`.
    pub decay: f64,
    pub var_eta: f64,
    pub cov: f64,
    /// `dt φ₁(λ dt)`; numerically the same quantity as `cov`.
    pub drift_gain: f64,
    /// `λ^{−ε/2}`.
    pub noise_scale: f64,
    /// `λ^{ε/2}`, the factor mapping a drift onto the driving noise.
    pub drift_to_noise: f64,
    sqrt_dt: f64,
    chol_21: f64,
    chol_22: f64,
}

// Below these thresholds of λ dt the closed forms lose digits to cancellation.
const SERIES_THRESHOLD: f64 = 1e-4;
const SCHUR_SERIES_THRESHOLD: f64 = 1e-3;

impl ModeStep {
    pub fn new(lambda: f64, epsilon: f64, dt: f64, mode: usize) -> Result<Self> {
        let u = lambda * dt;
        let decay = (-u).exp();
        let (var_eta, cov) = if u < SERIES_THRESHOLD {
            (
                dt * (1.0 - u + 2.0 * u * u / 3.0),
                dt * (1.0 - 0.5 * u + u * u / 6.0),
            )
        } else {
            (-(-2.0 * u).exp_m1() / (2.0 * lambda), -(-u).exp_m1() / lambda)
        };
        let schur = if u < SCHUR_SERIES_THRESHOLD {
            dt * u * u / 12.0 * (1.0 - u + 17.0 * u * u / 30.0)
        } else {
            var_eta - cov * cov / dt
        };
        if !(schur >= 0.0) {
            return Err(Error::NonPsdCovariance { mode, schur });
        }
        let sqrt_dt = dt.sqrt();
        Ok(Self {
            decay,
            var_eta,
            cov,
            drift_gain: cov,
            noise_scale: lambda.powf(-0.5 * epsilon),
            drift_to_noise: lambda.powf(0.5 * epsilon),
            sqrt_dt,
            chol_21: cov / sqrt_dt,
            chol_22: schur.sqrt(),
        })
    }

    /// Draws `(ΔB, η)`; consumes exactly two normals.
    #[inline]
    pub fn draw_pair<S: NormalSource>(&self, src: &mut S) -> (f64, f64) {
        let z1 = src.next_normal();
        let z2 = src.next_normal();
        (self.sqrt_dt * z1, self.chol_21 * z1 + self.chol_22 * z2)
    }
}

/// Per-mode step coefficients for one operator on one step size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairCoefficients {
    pub modes: Vec<ModeStep>,
    pub dt: f64,
}

impl PairCoefficients {
    pub fn new(spec: &OperatorSpec, dt: f64) -> Result<Self> {
        let modes = spec
            .eigenvalues()
            .iter()
            .enumerate()
            .map(|(j, &l)| ModeStep::new(l, spec.epsilon(), dt, j))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { modes, dt })
    }
}

/// A grid path of the stochastic convolution and its driving increments.
/// Storage is node-major: `h[k * d + j]` is mode `j` at node `k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianPathSample {
    pub d: usize,
    pub steps: usize,
    pub h: Vec<f64>,
    pub db: Vec<f64>,
    pub seed: u64,
}

impl GaussianPathSample {
    pub fn h_at(&self, k: usize) -> &[f64] {
        &self.h[k * self.d..(k + 1) * self.d]
    }

    pub fn db_at(&self, k: usize) -> &[f64] {
        &self.db[k * self.d..(k + 1) * self.d]
    }

    /// The sampled path as a [`DeterministicPath`].
    pub fn path(&self) -> DeterministicPath {
        DeterministicPath::from_values(self.d, self.steps, self.h.clone())
            .expect("sample storage has path shape")
    }
}

/// Samples `W_A` (colored by `(−A)^{−ε/2}` when `ε > 0`) on a fixed grid.
#[derive(Debug, Clone)]
pub struct ConvolutionSampler {
    grid: TimeGrid,
    coeffs: PairCoefficients,
}

impl ConvolutionSampler {
    pub fn new(spec: &OperatorSpec, grid: &TimeGrid) -> Result<Self> {
        Ok(Self {
            grid: *grid,
            coeffs: PairCoefficients::new(spec, grid.dt())?,
        })
    }

    pub fn coefficients(&self) -> &PairCoefficients {
        &self.coeffs
    }

    pub fn sample<S: NormalSource>(&self, src: &mut S, seed: u64) -> GaussianPathSample {
        let d = self.coeffs.modes.len();
        let n = self.grid.steps();
        let mut h = vec![0.0; (n + 1) * d];
        let mut db = vec![0.0; n * d];
        for k in 0..n {
            for (j, m) in self.coeffs.modes.iter().enumerate() {
                let (b, eta) = m.draw_pair(src);
                db[k * d + j] = b;
                h[(k + 1) * d + j] = m.decay * h[k * d + j] + m.noise_scale * eta;
            }
        }
        GaussianPathSample {
            d,
            steps: n,
            h,
            db,
            seed,
        }
    }

    /// Sample number `index` of the stream family keyed by `master_seed`.
    pub fn sample_indexed(&self, master_seed: u64, index: u64) -> GaussianPathSample {
        let mut src = GaussianStream::for_sample(master_seed, StreamPurpose::Convolution, index);
        self.sample(&mut src, index)
    }
}

/// One exact sample of the stochastic convolution.
pub fn sample_convolution<S: NormalSource>(
    spec: &OperatorSpec,
    grid: &TimeGrid,
    stream: &mut S,
    seed: u64,
) -> Result<GaussianPathSample> {
    Ok(ConvolutionSampler::new(spec, grid)?.sample(stream, seed))
}

/// Brownian increments rebuilt from the path alone:
/// `ΔB̂ = λ^{ε/2} (h_{k+1} − h_k + λ h_k dt)`.
pub fn reconstruct_increments(spec: &OperatorSpec, grid: &TimeGrid, sample: &GaussianPathSample) -> Vec<f64> {
    let d = sample.d;
    let dt = grid.dt();
    let mut out = vec![0.0; sample.db.len()];
    for k in 0..sample.steps {
        for (j, &l) in spec.eigenvalues().iter().enumerate() {
            let hk = sample.h[k * d + j];
            let hk1 = sample.h[(k + 1) * d + j];
            out[k * d + j] = l.powf(0.5 * spec.epsilon()) * (hk1 - hk + l * hk * dt);
        }
    }
    out
}

/// Marginal variance of mode `j` of the (colored) convolution at time `t`.
pub fn marginal_variance(spec: &OperatorSpec, j: usize, t: f64) -> f64 {
    let l = spec.eigenvalues()[j];
    l.powf(-spec.epsilon()) * -(-2.0 * l * t).exp_m1() / (2.0 * l)
}

/// Diagonal covariance kernel `K(t, s) = ∫₀^{min(t,s)} e^{(t+s−2r)A} dr`.
#[derive(Debug, Clone)]
pub struct CovarianceKernel<'a> {
    spec: &'a OperatorSpec,
}

impl<'a> CovarianceKernel<'a> {
    pub fn new(spec: &'a OperatorSpec) -> Self {
        Self { spec }
    }

    pub fn mode(&self, j: usize, t: f64, s: f64) -> f64 {
        let l = self.spec.eigenvalues()[j];
        let lo = t.min(s);
        let gap = (t - s).abs();
        // e^{−λ|t−s|} (1 − e^{−2λ min}) / 2λ, written to avoid cancellation.
        l.powf(-self.spec.epsilon()) * (-l * gap).exp() * -(-2.0 * l * lo).exp_m1() / (2.0 * l)
    }

    pub fn eval(&self, t: f64, s: f64) -> Vec<f64> {
        (0..self.spec.dim()).map(|j| self.mode(j, t, s)).collect()
    }
}

pub fn kernel_eval(kernel: &CovarianceKernel<'_>, t: f64, s: f64) -> Vec<f64> {
    kernel.eval(t, s)
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceEntry {
    pub mode: usize,
    pub node_a: usize,
    pub node_b: usize,
    pub empirical: f64,
    pub analytic: f64,
    pub std_error: f64,
}

impl CovarianceEntry {
    /// Deviation in standard errors; zero when both the deviation and the
    /// standard error vanish (nodes at `t = 0`).
    pub fn z_score(&self) -> f64 {
        let dev = (self.empirical - self.analytic).abs();
        if dev == 0.0 {
            0.0
        } else {
            dev / self.std_error
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceReport {
    pub nodes: Vec<usize>,
    pub entries: Vec<CovarianceEntry>,
    /// Same-node covariances between distinct modes (analytic value 0).
    pub cross_mode: Vec<CovarianceEntry>,
    pub max_abs_deviation: f64,
    pub max_z: f64,
    pub max_cross_z: f64,
    pub samples: usize,
}

/// `k_i = round(i N / count)` for `i = 1..=count`.
pub fn default_probe_nodes(grid: &TimeGrid, count: usize) -> Vec<usize> {
    (1..=count)
        .map(|i| ((i * grid.steps()) as f64 / count as f64).round() as usize)
        .collect()
}

/// Compares sample covariances of the sampler against [`CovarianceKernel`]
/// on every node pair drawn from `nodes`.
pub fn empirical_covariance_check(
    spec: &OperatorSpec,
    grid: &TimeGrid,
    nodes: &[usize],
    mc: &McConfig,
) -> Result<CovarianceReport> {
    if mc.samples < 1000 {
        return Err(Error::InvalidParameter(format!(
            "covariance check needs at least 1000 samples, got {}",
            mc.samples
        )));
    }
    if let Some(&bad) = nodes.iter().find(|&&k| k > grid.steps()) {
        return Err(Error::InvalidParameter(format!("node {bad} is outside the grid")));
    }
    let sampler = ConvolutionSampler::new(spec, grid)?;
    let d = spec.dim();
    let p = nodes.len();
    let snapshots: Vec<Vec<f64>> = par_map_indexed(mc.samples, mc.workers, |i| {
        let s = sampler.sample_indexed(mc.master_seed, i);
        nodes.iter().flat_map(|&k| s.h_at(k).to_vec()).collect()
    });
    let kernel = CovarianceKernel::new(spec);
    let product_estimate = |f: &dyn Fn(&[f64]) -> f64| {
        let prods: Vec<f64> = snapshots.iter().map(|s| f(s)).collect();
        let (mean, var) = mean_and_variance(&prods);
        (mean, (var / prods.len() as f64).sqrt())
    };

    let mut entries = Vec::new();
    for j in 0..d {
        for a in 0..p {
            for b in a..p {
                let (empirical, std_error) = product_estimate(&|s| s[a * d + j] * s[b * d + j]);
                entries.push(CovarianceEntry {
                    mode: j,
                    node_a: nodes[a],
                    node_b: nodes[b],
                    empirical,
                    analytic: kernel.mode(j, grid.time(nodes[a]), grid.time(nodes[b])),
                    std_error,
                });
            }
        }
    }
    let mut cross_mode = Vec::new();
    for a in 0..p {
        for j in 0..d {
            for i in (j + 1)..d {
                let (empirical, std_error) = product_estimate(&|s| s[a * d + j] * s[a * d + i]);
                cross_mode.push(CovarianceEntry {
                    mode: j * d + i,
                    node_a: nodes[a],
                    node_b: nodes[a],
                    empirical,
                    analytic: 0.0,
                    std_error,
                });
            }
        }
    }
    let max_abs_deviation = entries
        .iter()
        .map(|e| (e.empirical - e.analytic).abs())
        .fold(0.0, f64::max);
    let max_z = entries.iter().map(CovarianceEntry::z_score).fold(0.0, f64::max);
    let max_cross_z = cross_mode.iter().map(CovarianceEntry::z_score).fold(0.0, f64::max);
    Ok(CovarianceReport {
        nodes: nodes.to_vec(),
        entries,
        cross_mode,
        max_abs_deviation,
        max_z,
        max_cross_z,
        samples: mc.samples,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PrecisionReport {
    /// `‖(f'' − A²f) + h‖ / ‖h‖` over interior nodes.
    pub relative_residual: f64,
    /// `|f(0)|`.
    pub initial_defect: f64,
    /// `|f'(T) − A f(T)|` with a one-sided difference for `f'(T)`.
    pub terminal_defect: f64,
    pub steps: usize,
}

/// Applies the covariance operator `f = Q̄_T h` by trapezoid quadrature and
/// measures how well `f'' − A² f = −h` and the boundary conditions
/// `f(0) = 0`, `f'(T) = A f(T)` hold on the grid.
pub fn precision_residual(spec: &OperatorSpec, grid: &TimeGrid, h: &DeterministicPath) -> Result<PrecisionReport> {
    if spec.epsilon() != 0.0 {
        return Err(Error::ColoredNoiseUnsupported {
            operation: "precision_residual",
            epsilon: spec.epsilon(),
        });
    }
    if grid.steps() < 16 {
        return Err(Error::GridTooCoarse {
            operation: "precision_residual",
            min: 16,
            got: grid.steps(),
        });
    }
    h.check_shape(spec.dim(), grid.steps())?;
    let d = spec.dim();
    let n = grid.steps();
    let dt = grid.dt();
    let times = grid.times();
    let w = grid.trapezoid_weights();
    let kernel = CovarianceKernel::new(spec);

    let mut f = vec![0.0; (n + 1) * d];
    for a in 0..=n {
        for j in 0..d {
            let mut acc = 0.0;
            for b in 0..=n {
                acc += w[b] * kernel.mode(j, times[a], times[b]) * h.at(b, j);
            }
            f[a * d + j] = acc;
        }
    }

    let mut res_sq = 0.0;
    let mut h_sq = 0.0;
    for a in 1..n {
        for (j, &l) in spec.eigenvalues().iter().enumerate() {
            let second = (f[(a + 1) * d + j] - 2.0 * f[a * d + j] + f[(a - 1) * d + j]) / (dt * dt);
            let r = second - l * l * f[a * d + j] + h.at(a, j);
            res_sq += r * r;
            h_sq += h.at(a, j) * h.at(a, j);
        }
    }
    let relative_residual = if h_sq == 0.0 { res_sq.sqrt() } else { (res_sq / h_sq).sqrt() };
    let initial_defect = f[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
    let terminal_defect = spec
        .eigenvalues()
        .iter()
        .enumerate()
        .map(|(j, &l)| {
            let slope = (f[n * d + j] - f[(n - 1) * d + j]) / dt;
            let v = slope + l * f[n * d + j];
            v * v
        })
        .sum::<f64>()
        .sqrt();
    Ok(PrecisionReport {
        relative_residual,
        initial_defect,
        terminal_defect,
        steps: n,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SobolevReport {
    /// Monte Carlo estimate of `E ∫₀^T |(−A)^{β/2} h(t)|² dt`.
    pub lhs: Estimate,
    /// `(T/2) Tr[(−A)^{β−1}]`.
    pub rhs: f64,
    /// The same expectation in closed form (continuous time).
    pub lhs_exact: f64,
}

impl SobolevReport {
    pub fn holds(&self) -> bool {
        self.lhs.value <= self.rhs + 3.0 * self.lhs.std_error
    }
}

pub fn sobolev_moment_bound(spec: &OperatorSpec, grid: &TimeGrid, mc: &McConfig) -> Result<SobolevReport> {
    if spec.epsilon() != 0.0 {
        return Err(Error::ColoredNoiseUnsupported {
            operation: "sobolev_moment_bound",
            epsilon: spec.epsilon(),
        });
    }
    let sampler = ConvolutionSampler::new(spec, grid)?;
    let w = grid.trapezoid_weights();
    let weights: Vec<f64> = spec.eigenvalues().iter().map(|l| l.powf(spec.beta())).collect();
    let d = spec.dim();
    let values = par_map_indexed(mc.samples, mc.workers, |i| {
        let s = sampler.sample_indexed(mc.master_seed, i);
        let mut acc = 0.0;
        for (k, wk) in w.iter().enumerate() {
            let hk = &s.h[k * d..(k + 1) * d];
            acc += wk * hk.iter().zip(&weights).map(|(x, lw)| lw * x * x).sum::<f64>();
        }
        acc
    });
    let t = grid.horizon();
    let rhs = 0.5 * t * spec.trace_diagnostic().trace_value;
    let lhs_exact = spec
        .eigenvalues()
        .iter()
        .map(|&l| 0.5 * l.powf(spec.beta() - 1.0) * (t + (-2.0 * l * t).exp_m1() / (2.0 * l)))
        .sum();
    Ok(SobolevReport {
        lhs: Estimate::from_samples(&values),
        rhs,
        lhs_exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::ZeroNoise;

    #[test]
    fn grid_basics() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert_eq!(g.dt(), 0.25);
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(4), 1.0);
        assert!(TimeGrid::new(1.0, 1).is_err());
        assert!(TimeGrid::new(0.0, 8).is_err());
        let w = g.trapezoid_weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_noise_gives_zero_path() {
        let spec = OperatorSpec::laplacian(3, 0.25, 0.0).unwrap();
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let s = sample_convolution(&spec, &grid, &mut ZeroNoise, 0).unwrap();
        assert!(s.h.iter().all(|&v| v == 0.0));
        assert!(s.db.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pair_moments_closed_form() {
        let m = ModeStep::new(1.0, 0.0, 0.1, 0).unwrap();
        assert!((m.var_eta - 0.090634623461009).abs() < 1e-12);
        assert!((m.cov - 0.095162581964040).abs() < 1e-12);
        assert_eq!(m.drift_gain, m.cov);
    }

    #[test]
    fn small_step_series_is_continuous() {
        // Values just below and above each threshold agree to high relative accuracy.
        for &u in &[SERIES_THRESHOLD, SCHUR_SERIES_THRESHOLD] {
            let lo = ModeStep::new(1.0, 0.0, u * (1.0 - 1e-9), 0).unwrap();
            let hi = ModeStep::new(1.0, 0.0, u * (1.0 + 1e-9), 0).unwrap();
            assert!((lo.var_eta / hi.var_eta - 1.0).abs() < 1e-8);
            assert!((lo.cov / hi.cov - 1.0).abs() < 1e-8);
            assert!((lo.chol_22 / hi.chol_22 - 1.0).abs() < 1e-5);
        }
        assert!(ModeStep::new(1.0, 0.0, 1e-12, 0).unwrap().chol_22 > 0.0);
    }

    #[test]
    fn kernel_examples() {
        let spec = OperatorSpec::new(vec![1.0], 0.5, 0.0).unwrap();
        let k = CovarianceKernel::new(&spec);
        assert_eq!(k.mode(0, 0.0, 0.7), 0.0);
        assert_eq!(k.mode(0, 0.3, 0.0), 0.0);
        assert!((k.mode(0, 1.0, 1.0) - 0.432332358381694).abs() < 1e-14);
        let spec = OperatorSpec::laplacian(3, 0.25, 0.5).unwrap();
        let k = CovarianceKernel::new(&spec);
        for &(t, s) in &[(0.1, 0.9), (0.5, 0.2), (1.0, 0.33)] {
            assert_eq!(k.eval(t, s), k.eval(s, t));
        }
    }

    #[test]
    fn precision_residual_of_zero_and_guards() {
        let spec = OperatorSpec::new(vec![1.0], 0.5, 0.0).unwrap();
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let zero = DeterministicPath::zeros(1, 32);
        let r = precision_residual(&spec, &grid, &zero).unwrap();
        assert_eq!(r.relative_residual, 0.0);
        assert_eq!(r.initial_defect, 0.0);

        let coarse = TimeGrid::new(1.0, 8).unwrap();
        assert!(matches!(
            precision_residual(&spec, &coarse, &DeterministicPath::zeros(1, 8)),
            Err(Error::GridTooCoarse { .. })
        ));
        let colored = spec.with_epsilon(0.5).unwrap();
        assert!(precision_residual(&colored, &grid, &zero).is_err());
    }

    #[test]
    fn reconstruction_is_exact_without_noise_shape() {
        let spec = OperatorSpec::laplacian(2, 0.25, 0.0).unwrap();
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let s = sample_convolution(&spec, &grid, &mut ZeroNoise, 0).unwrap();
        assert!(reconstruct_increments(&spec, &grid, &s).iter().all(|&v| v == 0.0));
    }
}

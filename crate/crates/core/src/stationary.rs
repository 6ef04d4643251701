//! Stationary Ornstein–Uhlenbeck windows on `[−S, 0]` and the weight that
//! turns their time-0 marginal into the invariant law of the nonlinear
//! equation.
//!
//! The half-line `(−∞, 0]` is truncated to a window of length `S`. The drift
//! convolution starts from zero at `−S`; what that misses at time 0 is at
//! most `‖b‖_∞ e^{−ωS}/ω`, which every window reports.

use serde::Serialize;

use crate::analytic::invariant_variance;
use crate::error::{Error, Result};
use crate::girsanov_mc::{PathFunctional, StateFunction, WeightedSample};
use crate::mc::{effective_sample_size_log, par_map_indexed, warn_on_degeneracy, Estimate, McConfig};
use crate::mild_maps::{cm_norm_sq, gamma_with_drift, ito_quadratic_variation, ito_sum, DeterministicPath};
use crate::path_space::{ModeStep, PairCoefficients, TimeGrid};
use crate::rng::{GaussianStream, NormalSource, StreamPurpose};
use crate::spectral::{DriftKind, DriftSpec, OperatorSpec};

/// Truncation bounds above this trigger a warning.
pub const TRUNCATION_WARN_LEVEL: f64 = 1e-6;

/// Uniform grid `−S = t_0 < … < t_N = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowGrid {
    length: f64,
    steps: usize,
}

impl WindowGrid {
    pub fn new(length: f64, steps: usize) -> Result<Self> {
        // Same constraints as a forward grid of the same length.
        TimeGrid::new(length, steps)?;
        Ok(Self { length, steps })
    }

    /// Window `S = multiple / ω` with roughly `dt` spacing.
    pub fn for_operator(spec: &OperatorSpec, multiple: f64, dt: f64) -> Result<Self> {
        let length = multiple / spec.omega();
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("window step must be > 0, got {dt}")));
        }
        Self::new(length, ((length / dt).ceil() as usize).max(2))
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.length / self.steps as f64
    }

    /// `t_k`; the last node is exactly 0.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            0.0
        } else {
            -self.length + k as f64 * self.dt()
        }
    }

    /// The same nodes shifted to `[0, S]`. The semigroup recursions only see
    /// `dt`, so this is what the mild maps run on.
    pub fn forward_grid(&self) -> TimeGrid {
        TimeGrid::new(self.length, self.steps).expect("validated at construction")
    }

    /// Bound on `|γ_{−∞}(0) − γ_window(0)|`.
    ///
    /// Bounded drifts use `‖b‖_∞ e^{−ωS}/ω`. A linear drift has no sup bound;
    /// it uses `|c|` times the root-mean-square size of the stationary path.
    /// Other unbounded drifts have no bound.
    pub fn truncation_bound(&self, spec: &OperatorSpec, drift: &DriftSpec) -> Option<f64> {
        let omega = spec.omega();
        let tail = (-omega * self.length).exp() / omega;
        if let Some(sup) = drift.sup_bound() {
            return Some(sup * tail);
        }
        match drift.kind() {
            DriftKind::Linear { c } => {
                let rms: f64 = spec
                    .eigenvalues()
                    .iter()
                    .map(|&l| invariant_variance(l, 0.0, spec.epsilon()))
                    .sum::<f64>()
                    .sqrt();
                Some(c.abs() * rms * tail)
            }
            _ => None,
        }
    }
}

/// A stationary OU path on a window with its driving increments.
/// Storage is node-major, as in [`crate::path_space::GaussianPathSample`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarySample {
    pub d: usize,
    pub steps: usize,
    pub h: Vec<f64>,
    pub db: Vec<f64>,
    pub seed: u64,
}

impl StationarySample {
    pub fn h_at(&self, k: usize) -> &[f64] {
        &self.h[k * self.d..(k + 1) * self.d]
    }

    /// `h(0)`.
    pub fn terminal(&self) -> &[f64] {
        self.h_at(self.steps)
    }

    pub fn path(&self) -> DeterministicPath {
        DeterministicPath::from_values(self.d, self.steps, self.h.clone()).expect("sample storage has path shape")
    }
}

fn require_white(spec: &OperatorSpec, operation: &'static str) -> Result<()> {
    if spec.epsilon() != 0.0 {
        return Err(Error::ColoredNoiseUnsupported {
            operation,
            epsilon: spec.epsilon(),
        });
    }
    Ok(())
}

/// Stationary sampler with precomputed pair coefficients.
#[derive(Debug, Clone)]
pub struct StationarySampler {
    window: WindowGrid,
    coeffs: PairCoefficients,
    stationary_sd: Vec<f64>,
}

impl StationarySampler {
    pub fn new(spec: &OperatorSpec, window: &WindowGrid) -> Result<Self> {
        require_white(spec, "stationary sampling")?;
        Ok(Self {
            window: *window,
            coeffs: PairCoefficients::new(spec, window.dt())?,
            stationary_sd: spec.eigenvalues().iter().map(|l| (0.5 / l).sqrt()).collect(),
        })
    }

    /// `h(t_0)` takes the first `d` normals; the pairs follow node by node.
    pub fn sample<S: NormalSource>(&self, src: &mut S, seed: u64) -> StationarySample {
        let d = self.coeffs.modes.len();
        let n = self.window.steps;
        let mut h = vec![0.0; (n + 1) * d];
        let mut db = vec![0.0; n * d];
        for (j, sd) in self.stationary_sd.iter().enumerate() {
            h[j] = sd * src.next_normal();
        }
        for k in 0..n {
            for (j, m) in self.coeffs.modes.iter().enumerate() {
                let (b, eta) = m.draw_pair(src);
                db[k * d + j] = b;
                h[(k + 1) * d + j] = m.decay * h[k * d + j] + m.noise_scale * eta;
            }
        }
        StationarySample {
            d,
            steps: n,
            h,
            db,
            seed,
        }
    }

    pub fn sample_indexed(&self, master_seed: u64, index: u64) -> StationarySample {
        let mut src = GaussianStream::for_sample(master_seed, StreamPurpose::Stationary, index);
        self.sample(&mut src, index)
    }
}

pub fn sample_stationary<S: NormalSource>(
    spec: &OperatorSpec,
    window: &WindowGrid,
    stream: &mut S,
    seed: u64,
) -> Result<StationarySample> {
    Ok(StationarySampler::new(spec, window)?.sample(stream, seed))
}

fn require_weightable(spec: &OperatorSpec, drift: &DriftSpec) -> Result<()> {
    drift.validate(spec)?;
    if drift.sup_bound().is_none() && !matches!(drift.kind(), DriftKind::Linear { .. }) {
        return Err(Error::MissingSupBound {
            operation: "stationary weight",
        });
    }
    Ok(())
}

fn warn_on_truncation(spec: &OperatorSpec, drift: &DriftSpec, window: &WindowGrid) {
    if let Some(bound) = window.truncation_bound(spec, drift) {
        if bound > TRUNCATION_WARN_LEVEL {
            log::warn!(
                "window S = {:.4} leaves a truncation bound of {bound:.3e} on gamma(0)",
                window.length
            );
        }
    }
}

fn weight_unchecked(
    spec: &OperatorSpec,
    drift: &DriftSpec,
    sample: &StationarySample,
    grid: &TimeGrid,
    origin: &[f64],
) -> Result<WeightedSample> {
    let h = sample.path();
    let out = gamma_with_drift(spec, drift, origin, &h, grid)?;
    let cm = cm_norm_sq(spec, grid, &out.gamma, &out.drift_record)?;
    let ito = ito_sum(spec, &out.drift_record, &sample.db)?;
    Ok(WeightedSample {
        log_weight: -0.5 * cm.drift_l2_sq + ito,
        cm_sq: cm.drift_l2_sq,
        cm_direct_sq: cm.direct_sq,
        ito,
        gamma_l2_sq: ito_quadratic_variation(spec, grid, &out.gamma),
        sample_ref: sample.seed,
    })
}

/// `ρ_{−∞}` of one stationary path, in log form.
pub fn log_weight_inf(
    spec: &OperatorSpec,
    drift: &DriftSpec,
    sample: &StationarySample,
    window: &WindowGrid,
) -> Result<WeightedSample> {
    require_weightable(spec, drift)?;
    warn_on_truncation(spec, drift, window);
    let origin = vec![0.0; spec.dim()];
    weight_unchecked(spec, drift, sample, &window.forward_grid(), &origin)
}

/// Weighted time-0 statistics of one batch of stationary paths.
#[derive(Debug, Clone, Serialize)]
pub struct InvariantBatch {
    pub functionals: Vec<String>,
    pub estimates: Vec<Estimate>,
    pub normalization: Estimate,
    pub truncation_bound: Option<f64>,
    pub samples: usize,
}

struct StationaryDraw {
    log_weight: f64,
    values: Vec<f64>,
}

fn stationary_draws<F>(
    spec: &OperatorSpec,
    drift: &DriftSpec,
    window: &WindowGrid,
    mc: &McConfig,
    evaluate: F,
) -> Result<Vec<StationaryDraw>>
where
    F: Fn(&StationarySample) -> Vec<f64> + Sync + Send,
{
    require_weightable(spec, drift)?;
    warn_on_truncation(spec, drift, window);
    let sampler = StationarySampler::new(spec, window)?;
    let grid = window.forward_grid();
    let origin = vec![0.0; spec.dim()];
    let probe = sampler.sample_indexed(mc.master_seed, 0);
    weight_unchecked(spec, drift, &probe, &grid, &origin)?;
    Ok(par_map_indexed(mc.samples, mc.workers, |i| {
        let s = sampler.sample_indexed(mc.master_seed, i);
        let w = weight_unchecked(spec, drift, &s, &grid, &origin).expect("shapes checked");
        StationaryDraw {
            log_weight: w.log_weight,
            values: evaluate(&s),
        }
    }))
}

fn summarize(names: Vec<String>, draws: &[StationaryDraw], mc: &McConfig, truncation_bound: Option<f64>) -> InvariantBatch {
    let weights: Vec<f64> = draws.iter().map(|d| d.log_weight.exp()).collect();
    let estimates = names
        .iter()
        .enumerate()
        .map(|(f, name)| {
            let phi: Vec<f64> = draws.iter().map(|d| d.values[f]).collect();
            let est = Estimate::weighted(&phi, &weights, mc.self_normalized);
            warn_on_degeneracy(name, &est);
            est
        })
        .collect();
    let mut normalization = Estimate::from_samples(&weights);
    normalization.ess = effective_sample_size_log(&draws.iter().map(|d| d.log_weight).collect::<Vec<_>>());
    InvariantBatch {
        functionals: names,
        estimates,
        normalization,
        truncation_bound,
        samples: draws.len(),
    }
}

/// `∫ φ dν ≈ mean of φ(h(0)) ρ_{−∞}(h)` for several `φ` on one batch.
pub fn invariant_batch(
    spec: &OperatorSpec,
    drift: &DriftSpec,
    window: &WindowGrid,
    phis: &[StateFunction],
    mc: &McConfig,
) -> Result<InvariantBatch> {
    let draws = stationary_draws(spec, drift, window, mc, |s| {
        phis.iter().map(|phi| phi.eval(s.terminal())).collect()
    })?;
    let names = phis.iter().map(StateFunction::name).collect();
    Ok(summarize(names, &draws, mc, window.truncation_bound(spec, drift)))
}

pub fn invariant_estimate(
    spec: &OperatorSpec,
    drift: &DriftSpec,
    window: &WindowGrid,
    phi: &StateFunction,
    mc: &McConfig,
) -> Result<Estimate> {
    Ok(invariant_batch(spec, drift, window, std::slice::from_ref(phi), mc)?.estimates[0])
}

/// Path functionals of the stationary solution on the window. The window is
/// presented to `Φ` as `[0, S]`.
pub fn invariant_path_batch(
    spec: &OperatorSpec,
    drift: &DriftSpec,
    window: &WindowGrid,
    functionals: &[PathFunctional],
    mc: &McConfig,
) -> Result<InvariantBatch> {
    let grid = window.forward_grid();
    let d = spec.dim();
    let draws = stationary_draws(spec, drift, window, mc, |s| {
        functionals.iter().map(|phi| phi.eval(&s.h, d, &grid)).collect()
    })?;
    let names = functionals.iter().map(PathFunctional::name).collect();
    Ok(summarize(names, &draws, mc, window.truncation_bound(spec, drift)))
}

/// Invariant estimates on a window and on its second half, from the same
/// paths: the tail of a stationary path is itself a stationary path on the
/// shorter window, so the two estimates are coupled.
#[derive(Debug, Clone, Serialize)]
pub struct WindowDoubling {
    pub functionals: Vec<String>,
    pub full: Vec<Estimate>,
    pub half: Vec<Estimate>,
    /// Paired `full − half`, per functional.
    pub change: Vec<Estimate>,
}

impl WindowDoubling {
    /// `|full − half| < SE(full)` for every functional.
    pub fn negligible(&self) -> bool {
        self.full
            .iter()
            .zip(&self.half)
            .all(|(f, h)| (f.value - h.value).abs() < f.std_error)
    }
}

pub fn window_doubling_check(
    spec: &OperatorSpec,
    drift: &DriftSpec,
    window: &WindowGrid,
    phis: &[StateFunction],
    mc: &McConfig,
) -> Result<WindowDoubling> {
    if window.steps % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "window doubling needs an even step count, got {}",
            window.steps
        )));
    }
    require_weightable(spec, drift)?;
    let half_window = WindowGrid::new(0.5 * window.length, window.steps / 2)?;
    warn_on_truncation(spec, drift, &half_window);
    let sampler = StationarySampler::new(spec, window)?;
    let (grid, half_grid) = (window.forward_grid(), half_window.forward_grid());
    let origin = vec![0.0; spec.dim()];
    let d = spec.dim();
    let k0 = window.steps / 2;

    let rows: Vec<(f64, f64, Vec<f64>)> = par_map_indexed(mc.samples, mc.workers, |i| {
        let s = sampler.sample_indexed(mc.master_seed, i);
        let tail = StationarySample {
            d,
            steps: k0,
            h: s.h[k0 * d..].to_vec(),
            db: s.db[k0 * d..].to_vec(),
            seed: s.seed,
        };
        let full = weight_unchecked(spec, drift, &s, &grid, &origin).expect("shapes checked");
        let half = weight_unchecked(spec, drift, &tail, &half_grid, &origin).expect("shapes checked");
        let values = phis.iter().map(|phi| phi.eval(s.terminal())).collect();
        (full.log_weight.exp(), half.log_weight.exp(), values)
    });

    let wf: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let wh: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let mut full = Vec::with_capacity(phis.len());
    let mut half = Vec::with_capacity(phis.len());
    let mut change = Vec::with_capacity(phis.len());
    for f in 0..phis.len() {
        let phi: Vec<f64> = rows.iter().map(|r| r.2[f]).collect();
        full.push(Estimate::weighted(&phi, &wf, mc.self_normalized));
        half.push(Estimate::weighted(&phi, &wh, mc.self_normalized));
        let paired: Vec<f64> = rows.iter().map(|r| r.2[f] * (r.0 - r.1)).collect();
        change.push(Estimate::from_samples(&paired));
    }
    Ok(WindowDoubling {
        functionals: phis.iter().map(StateFunction::name).collect(),
        full,
        half,
        change,
    })
}

/// Ergodic-average controls for [`long_run_oracle`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LongRunConfig {
    pub burn_in: f64,
    pub averaging: f64,
    pub dt: f64,
    pub chains: usize,
}

impl LongRunConfig {
    fn steps(&self, span: f64) -> usize {
        (span / self.dt).round() as usize
    }
}

/// Time averages of `φ(Z(t))` over `[T_burn, T_burn + T_avg]` of direct
/// simulations from `x = 0`; the standard error is taken across chains.
pub fn long_run_oracle(
    spec: &OperatorSpec,
    drift: &DriftSpec,
    config: &LongRunConfig,
    phis: &[StateFunction],
    master_seed: u64,
    workers: usize,
) -> Result<Vec<Estimate>> {
    drift.validate(spec)?;
    if !drift.is_dissipative() {
        return Err(Error::NotDissipative {
            operation: "long-run oracle",
        });
    }
    if !(config.dt > 0.0 && config.burn_in >= 0.0 && config.averaging > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "long-run oracle needs dt > 0, burn-in >= 0 and averaging > 0, got {config:?}"
        )));
    }
    if config.chains < 2 {
        return Err(Error::InvalidParameter("long-run oracle needs at least 2 chains".into()));
    }
    let burn = config.steps(config.burn_in);
    let avg = config.steps(config.averaging).max(1);
    let modes: Vec<ModeStep> = PairCoefficients::new(spec, config.dt)?.modes;
    let d = spec.dim();

    let chain_means: Vec<Vec<f64>> = par_map_indexed(config.chains, workers, |chain| {
        let mut src = GaussianStream::for_sample(master_seed, StreamPurpose::LongRun, chain);
        let mut z = vec![0.0; d];
        let mut sums = vec![crate::mc::NeumaierSum::new(); phis.len()];
        for step in 0..burn + avg {
            for (j, m) in modes.iter().enumerate() {
                let (_db, eta) = m.draw_pair(&mut src);
                z[j] = m.decay * z[j] + m.drift_gain * drift.component(z[j]) + m.noise_scale * eta;
            }
            if step >= burn {
                for (acc, phi) in sums.iter_mut().zip(phis) {
                    acc.add(phi.eval(&z));
                }
            }
        }
        sums.iter().map(|s| s.total() / avg as f64).collect()
    });

    Ok((0..phis.len())
        .map(|f| {
            let v: Vec<f64> = chain_means.iter().map(|c| c[f]).collect();
            Estimate::from_samples(&v)
        })
        .collect())
}

/// Kernel bandwidth for [`density_ratio_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Bandwidth {
    /// `1.06 σ̂ M^{−1/5}` on the sampled `h_1(0)`.
    Silverman,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityPoint {
    pub x: f64,
    pub psi_hat: f64,
    /// `(Σ K)² / Σ K²` over the kernel weights at `x`.
    pub local_count: f64,
}

/// Below this local count a point is flagged.
pub const MIN_LOCAL_COUNT: f64 = 50.0;

/// Draws of `μ` used to integrate `ψ̂`.
pub const MASS_PROBES: usize = 2000;

#[derive(Debug, Clone, Serialize)]
pub struct DensityRatioProfile {
    pub points: Vec<DensityPoint>,
    pub bandwidth: f64,
    /// Monte Carlo `∫ ψ̂ dμ` over fresh draws of the first stationary mode.
    pub mass: Estimate,
    /// `E[ρ_{−∞}]` on the same batch.
    pub normalization: Estimate,
    #[serde(skip)]
    anchors: Vec<(f64, f64)>,
}

impl DensityRatioProfile {
    /// `ψ̂(x)` and its local count at bandwidth `bandwidth`.
    pub fn evaluate(&self, x: f64, bandwidth: f64) -> DensityPoint {
        nadaraya_watson(&self.anchors, x, bandwidth)
    }

    /// The same profile at another bandwidth, for sensitivity reports.
    pub fn at_bandwidth(&self, bandwidth: f64) -> Vec<DensityPoint> {
        self.points.iter().map(|p| self.evaluate(p.x, bandwidth)).collect()
    }
}

fn nadaraya_watson(anchors: &[(f64, f64)], x: f64, bandwidth: f64) -> DensityPoint {
    let inv = 1.0 / bandwidth;
    let mut sk = crate::mc::NeumaierSum::new();
    let mut sk2 = crate::mc::NeumaierSum::new();
    let mut skr = crate::mc::NeumaierSum::new();
    for &(h1, rho) in anchors {
        let u = (h1 - x) * inv;
        let k = (-0.5 * u * u).exp();
        sk.add(k);
        sk2.add(k * k);
        skr.add(k * rho);
    }
    let (sk, sk2, skr) = (sk.total(), sk2.total(), skr.total());
    DensityPoint {
        x,
        psi_hat: if sk > 0.0 { skr / sk } else { 0.0 },
        local_count: if sk2 > 0.0 { sk * sk / sk2 } else { 0.0 },
    }
}

/// Kernel regression of `ρ_{−∞}` on the first coordinate of `h(0)`, i.e.
/// an estimate of `dν/dμ` restricted to that coordinate.
pub fn density_ratio_estimate(
    spec: &OperatorSpec,
    drift: &DriftSpec,
    window: &WindowGrid,
    eval_points: &[f64],
    bandwidth: Bandwidth,
    mc: &McConfig,
) -> Result<DensityRatioProfile> {
    require_white(spec, "density ratio")?;
    let sd = (0.5 / spec.eigenvalues()[0]).sqrt();
    if let Some(&x) = eval_points.iter().find(|x| !(x.abs() <= 3.0 * sd)) {
        return Err(Error::InvalidParameter(format!(
            "evaluation point {x} lies outside 3 stationary standard deviations ({:.4})",
            3.0 * sd
        )));
    }
    let draws = stationary_draws(spec, drift, window, mc, |s| vec![s.terminal()[0]])?;
    let anchors: Vec<(f64, f64)> = draws.iter().map(|d| (d.values[0], d.log_weight.exp())).collect();

    let h = match bandwidth {
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
        Bandwidth::Fixed(h) => return Err(Error::InvalidParameter(format!("bandwidth must be > 0, got {h}"))),
        Bandwidth::Silverman => {
            let first: Vec<f64> = anchors.iter().map(|a| a.0).collect();
            let (_, var) = crate::mc::mean_and_variance(&first);
            1.06 * var.sqrt() * (anchors.len() as f64).powf(-0.2)
        }
    };

    let points: Vec<DensityPoint> = eval_points.iter().map(|&x| nadaraya_watson(&anchors, x, h)).collect();
    for p in &points {
        if p.local_count < MIN_LOCAL_COUNT {
            log::warn!("density ratio at x = {:.4}: local count {:.1} is below {MIN_LOCAL_COUNT}", p.x, p.local_count);
        }
    }

    let probes: Vec<f64> = par_map_indexed(MASS_PROBES, mc.workers, |i| {
        let mut src = GaussianStream::for_sample(mc.master_seed, StreamPurpose::Auxiliary, i);
        nadaraya_watson(&anchors, sd * src.next_normal(), h).psi_hat
    });
    let weights: Vec<f64> = anchors.iter().map(|a| a.1).collect();
    let mut normalization = Estimate::from_samples(&weights);
    normalization.ess = crate::mc::effective_sample_size(&weights);

    Ok(DensityRatioProfile {
        points,
        bandwidth: h,
        mass: Estimate::from_samples(&probes),
        normalization,
        anchors,
    })
}

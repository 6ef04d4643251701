//! Monte Carlo plumbing: estimates, compensated sums and the
//! worker-count-independent parallel map.

use rayon::prelude::*;
use serde::Serialize;

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = NeumaierSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<NeumaierSum>().total()
}

/// Sampling controls shared by every estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McConfig {
    pub samples: usize,
    pub master_seed: u64,
    /// Thread count; `0` uses the ambient rayon pool.
    pub workers: usize,
    /// Divide by `Σw` instead of `n` in weighted averages.
    pub self_normalized: bool,
}

impl McConfig {
    pub fn new(samples: usize, master_seed: u64) -> Self {
        Self {
            samples,
            master_seed,
            workers: 0,
            self_normalized: false,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_seed(mut self, master_seed: u64) -> Self {
        self.master_seed = master_seed;
        self
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }
}

/// Evaluates `f(0..n)` in parallel and returns results in index order.
///
/// Every reduction in this crate runs sequentially over the returned vector,
/// which is what makes results independent of `workers`.
pub fn par_map_indexed<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    let run = || (0..n as u64).into_par_iter().map(&f).collect::<Vec<T>>();
    if workers == 0 {
        run()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => pool.install(run),
            Err(err) => {
                log::warn!("could not build a {workers}-thread pool ({err}); using the global pool");
                run()
            }
        }
    }
}

/// Monte Carlo value with its sampling diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    /// `(Σw)² / Σw²`; equals `n` for unweighted estimates.
    pub ess: f64,
    pub n: usize,
}

impl Estimate {
    /// Plain mean of i.i.d. draws.
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        let (mean, var) = mean_and_variance(values);
        Self {
            value: mean,
            std_error: (var / n as f64).sqrt(),
            ess: n as f64,
            n,
        }
    }

    /// Importance-weighted mean of `φ_i` with weights `w_i`.
    ///
    /// Plain mode averages `φ_i w_i` over `n`; self-normalized mode divides
    /// by `Σw` and uses the delta-method standard error.
    pub fn weighted(phi: &[f64], weights: &[f64], self_normalized: bool) -> Self {
        assert_eq!(phi.len(), weights.len());
        let n = phi.len();
        let ess = effective_sample_size(weights);
        if self_normalized {
            let sw = compensated_sum(weights.iter().copied());
            let value = compensated_sum(phi.iter().zip(weights).map(|(p, w)| p * w)) / sw;
            let num = compensated_sum(
                phi.iter()
                    .zip(weights)
                    .map(|(p, w)| (w * (p - value)).powi(2)),
            );
            Self {
                value,
                std_error: num.sqrt() / sw,
                ess,
                n,
            }
        } else {
            let products: Vec<f64> = phi.iter().zip(weights).map(|(p, w)| p * w).collect();
            let mut est = Self::from_samples(&products);
            est.ess = ess;
            est
        }
    }

    /// `std_error / |value|`, or infinity at a zero value.
    pub fn relative_error(&self) -> f64 {
        if self.value == 0.0 {
            f64::INFINITY
        } else {
            self.std_error / self.value.abs()
        }
    }
}

/// Sample mean and unbiased sample variance, both compensated.
pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(values.iter().copied()) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    (mean, ss / (n - 1) as f64)
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s1 = compensated_sum(weights.iter().copied());
    let s2 = compensated_sum(weights.iter().map(|w| w * w));
    if s2 == 0.0 {
        0.0
    } else {
        s1 * s1 / s2
    }
}

/// Effective sample size straight from log-weights, shifted by the maximum
/// so that large log-weights do not overflow.
pub fn effective_sample_size_log(log_weights: &[f64]) -> f64 {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return 0.0;
    }
    let shifted: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    effective_sample_size(&shifted)
}

/// Logs a warning when importance weights have degenerated.
pub(crate) fn warn_on_degeneracy(what: &str, est: &Estimate) {
    if est.n > 0 && est.ess / (est.n as f64) < 0.05 {
        log::warn!(
            "{what}: effective sample size {:.1} is below 5% of {} samples",
            est.ess,
            est.n
        );
    }
}

//! Closed forms for the linear drift `b(z) = c z`, where every mode is an
//! Ornstein–Uhlenbeck process with shifted rate `λ_j − c`.
//!
//! Both the continuous-time values and the exact moments of the
//! exponential-Euler scheme are given; the gap between the two is the
//! discretization bias that the tests budget for.

use crate::path_space::ModeStep;

/// `E Z_j(T) = e^{−(λ − c) T} x_j`.
pub fn ou_mean(lambda: f64, c: f64, t: f64, x: f64) -> f64 {
    (-(lambda - c) * t).exp() * x
}

/// `Var Z_j(T) = λ^{−ε} (1 − e^{−2(λ − c) T}) / (2(λ − c))`.
pub fn ou_variance(lambda: f64, c: f64, t: f64, epsilon: f64) -> f64 {
    let r = lambda - c;
    lambda.powf(-epsilon) * -(-2.0 * r * t).exp_m1() / (2.0 * r)
}

/// Invariant variance `λ^{−ε} / (2(λ − c))`.
pub fn invariant_variance(lambda: f64, c: f64, epsilon: f64) -> f64 {
    lambda.powf(-epsilon) / (2.0 * (lambda - c))
}

/// Terminal mean and variance of one mode under the exponential-Euler
/// scheme `Z_{k+1} = (e^{−λdt} + c dt φ₁) Z_k + λ^{−ε/2} η_k` after `steps`.
pub fn scheme_terminal_moments(lambda: f64, c: f64, epsilon: f64, dt: f64, steps: usize, x: f64) -> (f64, f64) {
    let m = ModeStep::new(lambda, epsilon, dt, 0).expect("valid step");
    let factor = m.decay + c * m.drift_gain;
    let innovation = m.noise_scale * m.noise_scale * m.var_eta;
    let mut mean = x;
    let mut var = 0.0;
    for _ in 0..steps {
        mean *= factor;
        var = factor * factor * var + innovation;
    }
    (mean, var)
}

/// Invariant variance of the exponential-Euler scheme.
pub fn scheme_invariant_variance(lambda: f64, c: f64, epsilon: f64, dt: f64) -> f64 {
    let m = ModeStep::new(lambda, epsilon, dt, 0).expect("valid step");
    let factor = m.decay + c * m.drift_gain;
    m.noise_scale * m.noise_scale * m.var_eta / (1.0 - factor * factor)
}

/// `dν/dμ` for one mode of the white-noise linear model:
/// `N(0, 1/(2(λ − c)))` over `N(0, 1/(2λ))`.
pub fn gaussian_density_ratio(lambda: f64, c: f64, x: f64) -> f64 {
    let shifted = lambda - c;
    (shifted / lambda).sqrt() * (-(shifted - lambda) * x * x).exp()
}

/// Real part of the characteristic function of the zero-drift solution at
/// time `T`: `exp(−½ Σ ξ_j² v_j) cos(Σ ξ_j e^{−λ_j T} x_j)`.
pub fn ou_characteristic_cos(lambdas: &[f64], epsilon: f64, t: f64, x: &[f64], xi: &[f64]) -> f64 {
    let mut quad = 0.0;
    let mut phase = 0.0;
    for ((&l, &xj), &k) in lambdas.iter().zip(x).zip(xi) {
        quad += k * k * ou_variance(l, 0.0, t, epsilon);
        phase += k * (-l * t).exp() * xj;
    }
    (-0.5 * quad).exp() * phase.cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_shift_reduces_to_plain_ou() {
        assert!((ou_variance(1.0, 0.0, 1.0, 0.0) - 0.432332358381694).abs() < 1e-14);
        assert!((invariant_variance(4.0, -1.0, 0.0) - 0.1).abs() < 1e-15);
        assert_eq!(gaussian_density_ratio(2.0, 0.0, 0.7), 1.0);
    }

    #[test]
    fn scheme_moments_converge_to_continuum() {
        let exact_m = ou_mean(1.0, -0.5, 1.0, 1.0);
        let exact_v = ou_variance(1.0, -0.5, 1.0, 0.0);
        let mut prev = f64::INFINITY;
        for &n in &[64usize, 128, 256, 512] {
            let (m, v) = scheme_terminal_moments(1.0, -0.5, 0.0, 1.0 / n as f64, n, 1.0);
            let err = (m - exact_m).abs() + (v - exact_v).abs();
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-3);
    }
}

//! Spectral quantities of the saddle matrix and the convergence recursions
//! used to check empirical error traces.

use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::ope::{primal_dual_gradient, GradientVector, SaddleIterate, StatTriple};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddleSpectrum {
    /// Smallest real part over the eigenvalues of Q.
    pub min_real: f64,
    /// Largest eigenvalue modulus of Q.
    pub max_modulus: f64,
}

impl SaddleSpectrum {
    /// Largest constant step for which every mode of `I − βQ` contracts,
    /// treating the spectrum as if it were real.
    pub fn max_stable_step(&self) -> f64 {
        2.0 / self.max_modulus
    }
}

pub fn saddle_spectrum(stats: &StatTriple) -> Result<SaddleSpectrum> {
    let q = stats.saddle_matrix();
    let eig = q.complex_eigenvalues();
    if eig.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(invalid("saddle matrix spectrum is not finite"));
    }
    let min_real = eig.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    let max_modulus = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(SaddleSpectrum { min_real, max_modulus })
}

/// Estimate of λ_min(Q) for the diminishing schedule; falls back to 1 when
/// the spectrum is not positive.
pub fn estimate_rate(exact: &StatTriple) -> f64 {
    match saddle_spectrum(exact) {
        Ok(s) if s.min_real > 0.0 => s.min_real,
        _ => 1.0,
    }
}

/// ‖g − B(θ, w)‖² where B uses the exact statistics: the sampling part of
/// the gradient error at one iterate.
pub fn gradient_deviation_sq(g: &GradientVector, iterate: &SaddleIterate, exact: &StatTriple) -> Result<f64> {
    let mean = primal_dual_gradient(iterate, exact)?;
    Ok((&g.0 - &mean.0).norm_squared())
}

/// E‖ξ_{i+1}‖² ≤ (1 − β_i λ)² E‖ξ_i‖² + β_i² (G² + noise), unrolled from
/// `xi1_sq`. Entry `i` bounds the error after `i` steps.
pub fn contraction_recursion(betas: &[f64], xi1_sq: f64, lambda_min: f64, g_sq: f64, noise: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(betas.len() + 1);
    let mut e = xi1_sq;
    out.push(e);
    for &b in betas {
        let c = 1.0 - b * lambda_min;
        e = c * c * e + b * b * (g_sq + noise);
        out.push(e);
    }
    out
}

/// Bound on E‖ξ_N‖² under β_i = η/(λ i) with η > 1:
/// max{‖ξ_1‖², η²(G² + noise)/((η − 1)λ²)} / N.
pub fn diminishing_bound(xi1_sq: f64, eta: f64, lambda: f64, g_sq: f64, noise: f64, n: usize) -> Result<f64> {
    if !(eta > 1.0) || !(lambda > 0.0) || n == 0 {
        return Err(invalid("diminishing bound needs η > 1, λ > 0 and N ≥ 1"));
    }
    let var = eta * eta * (g_sq + noise) / ((eta - 1.0) * lambda * lambda);
    Ok(xi1_sq.max(var) / n as f64)
}

/// Privacy-noise share of the diminishing bound, η²c/((η − 1)λ²m²), where
/// the per-step noise energy is cN/m².
pub fn diminishing_noise_floor(eta: f64, lambda: f64, c: f64, m: usize) -> Result<f64> {
    if !(eta > 1.0) || !(lambda > 0.0) || m == 0 {
        return Err(invalid("noise floor needs η > 1, λ > 0 and m ≥ 1"));
    }
    let m = m as f64;
    Ok(eta * eta * c / ((eta - 1.0) * lambda * lambda * m * m))
}

/// Converts a per-step noise energy into the constant c of `cN/m²`.
pub fn noise_constant(noise: f64, n: usize, m: usize) -> f64 {
    noise * (m as f64).powi(2) / n as f64
}

/// Total per-step noise energy E‖hζ‖² = dim·h²σ².
pub fn noise_energy(dim: usize, clip_bound: f64, sigma: f64) -> f64 {
    dim as f64 * clip_bound * clip_bound * sigma * sigma
}

/// Squared distance of each recorded iterate from the optimum.
pub fn xi_trace(history: &[(usize, SaddleIterate)], opt: &SaddleIterate) -> Vec<(usize, f64)> {
    history.iter().map(|(i, it)| (*i, it.residual_norm_sq(opt))).collect()
}

/// Elementwise mean of equally long traces.
pub fn mean_trace(traces: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = traces.first() else {
        return Vec::new();
    };
    let mut acc = DVector::<f64>::zeros(first.len());
    for t in traces {
        for (a, x) in acc.iter_mut().zip(t) {
            *a += x;
        }
    }
    acc.iter().map(|x| x / traces.len() as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn triple(a: &[f64], c: &[f64], n: usize) -> StatTriple {
        StatTriple {
            a: DMatrix::from_row_slice(n, n, a),
            b: DVector::zeros(n),
            c: DMatrix::from_row_slice(n, n, c),
        }
    }

    #[test]
    fn scalar_spectrum() {
        // Q = [[0, -a], [a, c]] has eigenvalues (c ± sqrt(c² − 4a²))/2.
        let s = saddle_spectrum(&triple(&[1.0], &[1.0], 1)).unwrap();
        assert!((s.min_real - 0.5).abs() < 1e-12);
        assert!((s.max_modulus - 1.0).abs() < 1e-12);
        let s = saddle_spectrum(&triple(&[1.0], &[3.0], 1)).unwrap();
        let disc = (9.0f64 - 4.0).sqrt();
        assert!((s.min_real - (3.0 - disc) / 2.0).abs() < 1e-12);
        assert!((s.max_modulus - (3.0 + disc) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn rate_fallback() {
        assert_eq!(estimate_rate(&triple(&[0.0], &[0.0], 1)), 1.0);
    }

    #[test]
    fn recursion_matches_hand_unrolling() {
        let r = contraction_recursion(&[0.5, 0.25], 4.0, 1.0, 1.0, 1.0);
        assert_eq!(r[0], 4.0);
        assert!((r[1] - (0.25 * 4.0 + 0.25 * 2.0)).abs() < 1e-15);
        assert!((r[2] - (0.5625 * r[1] + 0.0625 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn bound_examples() {
        let b = diminishing_bound(1.0, 2.0, 1.0, 1.0, 0.0, 10).unwrap();
        assert!((b - 0.4).abs() < 1e-15);
        assert!(diminishing_bound(1.0, 1.0, 1.0, 1.0, 0.0, 10).is_err());
        let c = noise_constant(2.0, 100, 10);
        assert!((c - 2.0).abs() < 1e-15);
        let f = diminishing_noise_floor(2.0, 1.0, c, 10).unwrap();
        assert!((f - 0.08).abs() < 1e-15);
    }

    #[test]
    fn traces_average() {
        assert_eq!(mean_trace(&[vec![1.0, 2.0], vec![3.0, 6.0]]), vec![2.0, 4.0]);
        assert!(mean_trace(&[]).is_empty());
    }
}

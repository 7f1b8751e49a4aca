//! Frequency-domain view of the MOHSM construction.
//!
//! These functions are not used for inference; they exist so the closed-form
//! kernel can be checked against a direct inverse transform of its generalized
//! cross-spectral density.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kernel::mohsm::cross_params;
use crate::kernel::params::{ChannelSpectralParams, KernelSpec};

/// Spectral factor `R_i(w, w')` of one channel.
///
/// For `ell == 0` the frequency-correlation factor is the indicator of `w == w'`.
pub fn spectral_factor(
    params: &ChannelSpectralParams,
    ell: f64,
    omega: &[f64],
    omega_prime: &[f64],
) -> Complex64 {
    let mut hat2 = 0.0;
    let mut quad = 0.0;
    let mut phase = params.phi;
    for d in 0..omega.len() {
        let hat = omega[d] - omega_prime[d];
        let bar = 0.5 * (omega[d] + omega_prime[d]);
        hat2 += hat * hat;
        let dm = bar - params.mu[d];
        quad += dm * dm / params.sigma[d];
        phase += params.theta[d] * bar;
    }
    let corr = if ell > 0.0 {
        (-hat2 / (4.0 * ell * ell)).exp()
    } else if hat2 == 0.0 {
        1.0
    } else {
        0.0
    };
    Complex64::from_polar(params.w * corr * (-0.25 * quad).exp(), -phase)
}

/// Generalized cross-spectral density `S_ij(w, w')` of shift `p`, component `q`,
/// including the input-shift factor `exp(-i (w - w')' x_p)`.
///
/// The unsymmetrized density equals `conj(R_i) R_j` times the shift factor.
/// With `symmetrized` set, returns `(S(w, w') + conj(S(-w, -w'))) / 2`, whose
/// inverse transform is the real part of the unsymmetrized one.
#[allow(clippy::too_many_arguments)]
pub fn spectral_density(
    spec: &KernelSpec,
    shift_index: usize,
    component_index: usize,
    i: usize,
    j: usize,
    omega: &[f64],
    omega_prime: &[f64],
    symmetrized: bool,
) -> Result<Complex64> {
    let cp = cross_params(spec, shift_index, component_index, i, j)?;
    if cp.ell_ij == 0.0 {
        return Err(Error::Unsupported(
            "spectral density with zero lengthscale is a measure on the diagonal, not a function".into(),
        ));
    }
    if omega.len() != spec.input_dim || omega_prime.len() != spec.input_dim {
        return Err(Error::DimensionMismatch("frequency vectors must match input dimension".into()));
    }
    let center = &spec.shifts[shift_index].center;
    let raw = |sign: f64| -> Complex64 {
        let mut hat2 = 0.0;
        let mut quad = 0.0;
        let mut phase = cp.phi_ij;
        let mut shift_phase = 0.0;
        for d in 0..omega.len() {
            let (w, wp) = (sign * omega[d], sign * omega_prime[d]);
            let hat = w - wp;
            let bar = 0.5 * (w + wp);
            hat2 += hat * hat;
            let dm = bar - cp.mu_ij[d];
            quad += dm * dm / cp.sigma_ij[d];
            phase += cp.theta_ij[d] * bar;
            shift_phase += hat * center[d];
        }
        let mag = cp.w_ij * (-hat2 / (2.0 * cp.ell_ij * cp.ell_ij) - 0.5 * quad).exp();
        Complex64::from_polar(mag, phase - shift_phase)
    };
    let direct = raw(1.0);
    if symmetrized {
        Ok(0.5 * (direct + raw(-1.0).conj()))
    } else {
        Ok(direct)
    }
}

/// Tensor trapezoidal grid for [`spectral_transform_oracle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureGrid {
    /// Nodes per axis.
    pub nodes: usize,
    /// Multiplier on the automatically chosen half-width.
    pub range_scale: f64,
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        Self {
            nodes: 400,
            range_scale: 1.0,
        }
    }
}

/// Half-width of the frequency box: covers every component's mass and its
/// mirror image at negative frequency.
pub fn oracle_half_width(spec: &KernelSpec) -> f64 {
    let mut mu_max: f64 = 0.0;
    let mut sigma_max: f64 = 0.0;
    let mut ell_max: f64 = 0.0;
    for shift in &spec.shifts {
        for &l in &shift.ell {
            ell_max = ell_max.max(l);
        }
        for comp in &shift.components {
            for ch in &comp.channels {
                mu_max = ch.mu.iter().fold(mu_max, |a, m| a.max(m.abs()));
                sigma_max = ch.sigma.iter().fold(sigma_max, |a, &s| a.max(s));
            }
        }
    }
    mu_max + 5.0 * sigma_max.sqrt() + 5.0 * ell_max
}

/// `Re ∬ exp(i (w x - w' x')) S_ij^sym(w, w') dw dw'` summed over all shifts and
/// components, by trapezoidal tensor quadrature. One-dimensional inputs only.
pub fn spectral_transform_oracle(
    spec: &KernelSpec,
    i: usize,
    j: usize,
    x: f64,
    x_prime: f64,
    grid: QuadratureGrid,
) -> Result<f64> {
    if spec.input_dim != 1 {
        return Err(Error::Unsupported("quadrature oracle is one-dimensional".into()));
    }
    if spec.shifts.iter().any(|s| s.ell.iter().any(|&l| l <= 0.0)) {
        return Err(Error::Unsupported("quadrature oracle requires every lengthscale > 0".into()));
    }
    if grid.nodes < 2 {
        return Err(Error::InvalidArgument("quadrature grid needs at least two nodes".into()));
    }
    let half = oracle_half_width(spec) * grid.range_scale;
    let h = 2.0 * half / (grid.nodes - 1) as f64;
    let nodes: Vec<f64> = (0..grid.nodes).map(|k| -half + h * k as f64).collect();
    let weight = |k: usize| if k == 0 || k == grid.nodes - 1 { 0.5 } else { 1.0 };
    // e^{i w x} and e^{-i w' x'} per node, reused across the tensor product
    let ex: Vec<Complex64> = nodes.iter().map(|&w| Complex64::from_polar(1.0, w * x)).collect();
    let exp_: Vec<Complex64> = nodes.iter().map(|&w| Complex64::from_polar(1.0, -w * x_prime)).collect();

    let mut total = 0.0;
    for (p, shift) in spec.shifts.iter().enumerate() {
        for q in 0..shift.components.len() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (a, &w) in nodes.iter().enumerate() {
                let mut row = Complex64::new(0.0, 0.0);
                for (b, &wp) in nodes.iter().enumerate() {
                    let s = spectral_density(spec, p, q, i, j, &[w], &[wp], true)?;
                    row += weight(b) * s * exp_[b];
                }
                acc += weight(a) * ex[a] * row;
            }
            total += acc.re * h * h;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::mohsm::eval_mohsm;
    use crate::kernel::params::{MixtureComponent, ShiftGroup};

    fn ch(w: f64, mu: f64, sigma: f64, theta: f64, phi: f64) -> ChannelSpectralParams {
        ChannelSpectralParams {
            w,
            mu: vec![mu],
            sigma: vec![sigma],
            theta: vec![theta],
            phi,
        }
    }

    fn example_spec() -> KernelSpec {
        KernelSpec {
            n_channels: 2,
            input_dim: 1,
            shifts: vec![ShiftGroup {
                center: vec![0.0],
                ell: vec![0.1, 0.1],
                components: vec![MixtureComponent {
                    channels: vec![ch(1.0, 2.0, 1.0, 0.0, 0.0), ch(1.0, 2.5, 1.0, 0.3, 0.4)],
                }],
            }],
            noise: vec![0.1, 0.1],
        }
    }

    #[test]
    fn factor_peak_is_real_weight() {
        let p = ch(1.7, 0.8, 0.5, 0.0, 0.0);
        let r = spectral_factor(&p, 0.3, &[0.8], &[0.8]);
        assert!((r.re - 1.7).abs() < 1e-15 && r.im.abs() < 1e-15);
    }

    #[test]
    fn factor_complex_arithmetic_example() {
        let p = ch(1.0, 0.0, 1.0, 1.0, 0.0);
        let r = spectral_factor(&p, 1.0, &[1.0], &[0.0]);
        let want = (-0.25f64).exp() * (-1.0f64 / 16.0).exp();
        assert!((r.norm() - want).abs() < 1e-15);
        assert!((r.arg() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn factorization_identity() {
        let mut spec = example_spec();
        spec.shifts[0].ell = vec![0.4, 0.9];
        spec.shifts[0].center = vec![1.3];
        let comp = &spec.shifts[0].components[0];
        for &(w, wp) in &[(0.3, -1.2), (2.0, 2.4), (-3.1, 0.7)] {
            for i in 0..2 {
                for j in 0..2 {
                    let ri = spectral_factor(&comp.channels[i], spec.shifts[0].ell[i], &[w], &[wp]);
                    let rj = spectral_factor(&comp.channels[j], spec.shifts[0].ell[j], &[w], &[wp]);
                    let shift = Complex64::from_polar(1.0, -(w - wp) * 1.3);
                    let s = spectral_density(&spec, 0, 0, i, j, &[w], &[wp], false).unwrap();
                    assert!((ri.conj() * rj * shift - s).norm() < 1e-12);

                    let ri_m = spectral_factor(&comp.channels[i], spec.shifts[0].ell[i], &[-w], &[-wp]);
                    let rj_m = spectral_factor(&comp.channels[j], spec.shifts[0].ell[j], &[-w], &[-wp]);
                    let shift_m = Complex64::from_polar(1.0, (w - wp) * 1.3);
                    let sym = 0.5 * (ri.conj() * rj * shift + (ri_m.conj() * rj_m * shift_m).conj());
                    let got = spectral_density(&spec, 0, 0, i, j, &[w], &[wp], true).unwrap();
                    assert!((sym - got).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn hermitian_symmetry_and_real_diagonal() {
        let spec = example_spec();
        for &(w, wp) in &[(0.3, -1.2), (2.0, 2.4), (-3.1, 0.7)] {
            let a = spectral_density(&spec, 0, 0, 0, 1, &[w], &[wp], false).unwrap();
            let b = spectral_density(&spec, 0, 0, 1, 0, &[wp], &[w], false).unwrap();
            assert!((a - b.conj()).norm() < 1e-14);
            let d = spectral_density(&spec, 0, 0, 1, 1, &[w], &[w], true).unwrap();
            assert!(d.im.abs() < 1e-15 && d.re >= 0.0);
        }
    }

    #[test]
    fn rank_one_for_single_component() {
        let spec = example_spec();
        let (w, wp) = (1.7, 2.9);
        let s = |i, j| spectral_density(&spec, 0, 0, i, j, &[w], &[wp], false).unwrap();
        let det = s(0, 0) * s(1, 1) - s(0, 1) * s(1, 0);
        assert!(det.norm() < 1e-14);
    }

    #[test]
    fn zero_lengthscale_density_is_error() {
        let mut spec = example_spec();
        spec.shifts[0].ell = vec![0.0, 0.0];
        assert!(matches!(
            spectral_density(&spec, 0, 0, 0, 1, &[0.0], &[0.0], true),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn oracle_matches_closed_form_example() {
        let spec = example_spec();
        let closed = eval_mohsm(&spec, &[1.0], &[0.0], 0, 1);
        let q400 = spectral_transform_oracle(&spec, 0, 1, 1.0, 0.0, QuadratureGrid::default()).unwrap();
        let q500 = spectral_transform_oracle(&spec, 0, 1, 1.0, 0.0, QuadratureGrid { nodes: 500, range_scale: 1.0 }).unwrap();
        assert!((closed - q400).abs() <= 1e-3 * closed.abs(), "{closed} vs {q400}");
        assert!((q400 - q500).abs() <= 1e-4 * q400.abs());
    }

    #[test]
    fn oracle_range_doubling_is_stable() {
        let spec = example_spec();
        let base = spectral_transform_oracle(&spec, 0, 1, 0.5, -0.5, QuadratureGrid { nodes: 400, range_scale: 1.0 }).unwrap();
        let wide = spectral_transform_oracle(&spec, 0, 1, 0.5, -0.5, QuadratureGrid { nodes: 800, range_scale: 2.0 }).unwrap();
        assert!((base - wide).abs() <= 1e-6 * base.abs(), "{base} vs {wide}");
    }

    #[test]
    fn oracle_diagonal_is_nonnegative() {
        let spec = example_spec();
        let v = spectral_transform_oracle(&spec, 1, 1, 0.7, 0.7, QuadratureGrid::default()).unwrap();
        assert!(v >= 0.0);
    }

    #[test]
    fn oracle_rejects_multidimensional_inputs() {
        let mut spec = example_spec();
        spec.input_dim = 2;
        assert!(matches!(
            spectral_transform_oracle(&spec, 0, 0, 0.0, 0.0, QuadratureGrid::default()),
            Err(Error::Unsupported(_))
        ));
    }
}

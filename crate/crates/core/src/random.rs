//! Random hyperparameter draws for property checks and benchmarks.

use std::ops::Range;

use rand::Rng;

use crate::kernel::{
    ChannelSpectralParams, HsmComponent, HsmModel, HsmParams, KernelSpec, LmcModel, MixtureComponent, ShiftGroup,
};

/// Parameter ranges for [`random_spectral_spec`].
#[derive(Debug, Clone)]
pub struct SpectralRanges {
    pub w: Range<f64>,
    pub mu: Range<f64>,
    pub sigma: Range<f64>,
    pub theta: Range<f64>,
    pub phi: Range<f64>,
    pub ell: Range<f64>,
    pub center: Range<f64>,
    pub noise: Range<f64>,
}

impl Default for SpectralRanges {
    fn default() -> Self {
        Self {
            w: 0.5..1.5,
            mu: 0.5..3.0,
            sigma: 0.2..1.5,
            theta: -0.5..0.5,
            phi: -1.0..1.0,
            ell: 0.05..0.5,
            center: -2.0..2.0,
            noise: 0.1..0.5,
        }
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, r: &Range<f64>) -> f64 {
    if r.start == r.end {
        r.start
    } else {
        rng.random_range(r.clone())
    }
}

/// Random one-dimensional spectral mixture spec.
pub fn random_spectral_spec<R: Rng + ?Sized>(
    rng: &mut R,
    n_channels: usize,
    n_shifts: usize,
    components_per_shift: usize,
    ranges: &SpectralRanges,
) -> KernelSpec {
    let shifts = (0..n_shifts)
        .map(|_| ShiftGroup {
            center: vec![draw(rng, &ranges.center)],
            ell: (0..n_channels).map(|_| draw(rng, &ranges.ell)).collect(),
            components: (0..components_per_shift)
                .map(|_| MixtureComponent {
                    channels: (0..n_channels)
                        .map(|_| ChannelSpectralParams {
                            w: draw(rng, &ranges.w),
                            mu: vec![draw(rng, &ranges.mu)],
                            sigma: vec![draw(rng, &ranges.sigma)],
                            theta: vec![draw(rng, &ranges.theta)],
                            phi: draw(rng, &ranges.phi),
                        })
                        .collect(),
                })
                .collect(),
        })
        .collect();
    KernelSpec {
        n_channels,
        input_dim: 1,
        shifts,
        noise: (0..n_channels).map(|_| draw(rng, &ranges.noise)).collect(),
    }
}

/// Parameter ranges for [`random_hsm_params`].
#[derive(Debug, Clone)]
pub struct HsmRanges {
    pub weight: Range<f64>,
    pub lengthscale: Range<f64>,
    pub center: Range<f64>,
    pub sigma: Range<f64>,
    pub mu: Range<f64>,
    pub noise: Range<f64>,
}

impl Default for HsmRanges {
    fn default() -> Self {
        Self {
            weight: 0.5..1.5,
            lengthscale: 2.0..20.0,
            center: -5.0..5.0,
            sigma: 0.1..1.5,
            mu: 0.5..3.0,
            noise: 0.1..0.5,
        }
    }
}

pub fn random_hsm_params<R: Rng + ?Sized>(rng: &mut R, components: usize, ranges: &HsmRanges) -> HsmParams {
    HsmParams {
        components: (0..components)
            .map(|_| HsmComponent {
                weight: draw(rng, &ranges.weight),
                lengthscale: draw(rng, &ranges.lengthscale),
                center: vec![draw(rng, &ranges.center)],
                sigma: vec![draw(rng, &ranges.sigma)],
                mu: vec![draw(rng, &ranges.mu)],
            })
            .collect(),
    }
}

pub fn random_hsm_model<R: Rng + ?Sized>(rng: &mut R, n_channels: usize, components: usize, ranges: &HsmRanges) -> HsmModel {
    HsmModel {
        input_dim: 1,
        channels: (0..n_channels).map(|_| random_hsm_params(rng, components, ranges)).collect(),
        noise: (0..n_channels).map(|_| draw(rng, &ranges.noise)).collect(),
    }
}

/// Random HSM-LMC model with single-component latents of unit weight and
/// mixing weights in `[-1.5, 1.5]`.
pub fn random_lmc_model<R: Rng + ?Sized>(rng: &mut R, n_channels: usize, latents: usize, ranges: &HsmRanges) -> LmcModel {
    let fixed = HsmRanges {
        weight: 1.0..1.0,
        ..ranges.clone()
    };
    LmcModel {
        input_dim: 1,
        mixing: (0..n_channels)
            .map(|_| (0..latents).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect(),
        latents: (0..latents).map(|_| random_hsm_params(rng, 1, &fixed)).collect(),
        noise: (0..n_channels).map(|_| draw(rng, &ranges.noise)).collect(),
    }
}

//! Benchmark kernels: windowed spectral mixture (HSM) per channel and a linear
//! model of coregionalization built on HSM latents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One windowed spectral component. The window uses `1 / (2 l^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsmComponent {
    pub weight: f64,
    pub lengthscale: f64,
    pub center: Vec<f64>,
    pub sigma: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsmParams {
    pub components: Vec<HsmComponent>,
}

impl HsmParams {
    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidParameter("HSM kernel needs at least one component".into()));
        }
        for c in &self.components {
            if c.center.len() != input_dim || c.sigma.len() != input_dim || c.mu.len() != input_dim {
                return Err(Error::DimensionMismatch(format!(
                    "HSM component must have input dimension {input_dim}"
                )));
            }
            if !(c.lengthscale > 0.0) {
                return Err(Error::InvalidParameter("HSM lengthscale must be > 0".into()));
            }
            if c.sigma.iter().any(|&s| !(s > 0.0)) {
                return Err(Error::InvalidParameter("HSM sigma entries must be > 0".into()));
            }
            let finite = c.weight.is_finite()
                && c.center.iter().chain(&c.sigma).chain(&c.mu).all(|v| v.is_finite());
            if !finite {
                return Err(Error::InvalidParameter("non-finite HSM parameter".into()));
            }
        }
        Ok(())
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], xp: &[f64]) -> f64 {
        self.components.iter().map(|c| component_terms(c, x, xp).k).sum()
    }

    pub(crate) fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for c in &mut out.components {
            c.weight = 0.0;
            c.lengthscale = 0.0;
            c.center.iter_mut().for_each(|v| *v = 0.0);
            c.sigma.iter_mut().for_each(|v| *v = 0.0);
            c.mu.iter_mut().for_each(|v| *v = 0.0);
        }
        out
    }

    /// Add `weight * dk(x, x') / d(params)` into `grad`.
    pub(crate) fn accumulate(&self, grad: &mut HsmParams, x: &[f64], xp: &[f64], weight: f64) {
        for (c, g) in self.components.iter().zip(&mut grad.components) {
            let t = component_terms(c, x, xp);
            let l2 = c.lengthscale * c.lengthscale;
            let wk = weight * t.k;
            let ws = weight * c.weight * t.window * t.envelope * t.sin;
            g.weight += weight * t.window * t.envelope * t.cos;
            g.lengthscale += wk * t.r2 / (l2 * c.lengthscale);
            for d in 0..x.len() {
                let tau = x[d] - xp[d];
                let xbar = 0.5 * (x[d] + xp[d]);
                g.center[d] += wk * (xbar - c.center[d]) / l2;
                g.sigma[d] += -0.5 * tau * tau * wk;
                g.mu[d] -= ws * tau;
            }
        }
    }
}

struct Terms {
    k: f64,
    window: f64,
    envelope: f64,
    sin: f64,
    cos: f64,
    r2: f64,
}

#[inline]
fn component_terms(c: &HsmComponent, x: &[f64], xp: &[f64]) -> Terms {
    let mut r2 = 0.0;
    let mut quad = 0.0;
    let mut phase = 0.0;
    for d in 0..x.len() {
        let tau = x[d] - xp[d];
        let xbar = 0.5 * (x[d] + xp[d]) - c.center[d];
        r2 += xbar * xbar;
        quad += c.sigma[d] * tau * tau;
        phase += c.mu[d] * tau;
    }
    let window = (-r2 / (2.0 * c.lengthscale * c.lengthscale)).exp();
    let envelope = (-0.5 * quad).exp();
    let (sin, cos) = phase.sin_cos();
    Terms {
        k: c.weight * window * envelope * cos,
        window,
        envelope,
        sin,
        cos,
        r2,
    }
}

/// Windowed spectral mixture kernel `k(x, x')`.
pub fn eval_hsm(params: &HsmParams, x: &[f64], x_prime: &[f64]) -> Result<f64> {
    if x.len() != x_prime.len() {
        return Err(Error::DimensionMismatch("input lengths differ".into()));
    }
    params.validate(x.len())?;
    Ok(params.eval_unchecked(x, x_prime))
}

/// Independent HSM kernel per channel; cross-channel covariances are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsmModel {
    pub input_dim: usize,
    pub channels: Vec<HsmParams>,
    pub noise: Vec<f64>,
}

impl HsmModel {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.noise.len() != self.channels.len() {
            return Err(Error::DimensionMismatch("HSM model needs one kernel and one noise per channel".into()));
        }
        validate_noise(&self.noise)?;
        for ch in &self.channels {
            ch.validate(self.input_dim)?;
        }
        Ok(())
    }

    pub fn eval(&self, i: usize, x: &[f64], j: usize, xp: &[f64]) -> f64 {
        if i != j {
            return 0.0;
        }
        self.channels[i].eval_unchecked(x, xp)
    }
}

/// Linear model of coregionalization: `k_ij = sum_q A[i][q] A[j][q] k_q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmcModel {
    pub input_dim: usize,
    /// `M` rows of `Q` mixing weights.
    pub mixing: Vec<Vec<f64>>,
    pub latents: Vec<HsmParams>,
    pub noise: Vec<f64>,
}

impl LmcModel {
    pub fn validate(&self) -> Result<()> {
        check_mixing(&self.mixing, self.latents.len())?;
        if self.noise.len() != self.mixing.len() {
            return Err(Error::DimensionMismatch("one noise entry per channel required".into()));
        }
        validate_noise(&self.noise)?;
        for l in &self.latents {
            l.validate(self.input_dim)?;
        }
        Ok(())
    }

    pub fn eval(&self, i: usize, x: &[f64], j: usize, xp: &[f64]) -> f64 {
        lmc_unchecked(&self.mixing, &self.latents, x, xp, i, j)
    }
}

fn validate_noise(noise: &[f64]) -> Result<()> {
    if noise.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidParameter("noise entries must be finite and > 0".into()));
    }
    Ok(())
}

fn check_mixing(mixing: &[Vec<f64>], q: usize) -> Result<()> {
    if mixing.is_empty() || q == 0 {
        return Err(Error::DimensionMismatch("empty mixing matrix".into()));
    }
    for row in mixing {
        if row.len() != q {
            return Err(Error::DimensionMismatch(format!(
                "mixing row has {} columns, expected {q} latent kernels",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite mixing weight".into()));
        }
    }
    Ok(())
}

fn lmc_unchecked(mixing: &[Vec<f64>], latents: &[HsmParams], x: &[f64], xp: &[f64], i: usize, j: usize) -> f64 {
    latents
        .iter()
        .enumerate()
        .map(|(q, k)| {
            let a = mixing[i][q] * mixing[j][q];
            if a == 0.0 {
                0.0
            } else {
                a * k.eval_unchecked(x, xp)
            }
        })
        .sum()
}

/// Linear-model-of-coregionalization kernel on HSM latents.
pub fn eval_lmc(
    mixing: &[Vec<f64>],
    latent_kernels: &[HsmParams],
    x: &[f64],
    x_prime: &[f64],
    i: usize,
    j: usize,
) -> Result<f64> {
    check_mixing(mixing, latent_kernels.len())?;
    if i >= mixing.len() || j >= mixing.len() {
        return Err(Error::DimensionMismatch(format!("channel pair ({i}, {j}) out of range")));
    }
    if x.len() != x_prime.len() {
        return Err(Error::DimensionMismatch("input lengths differ".into()));
    }
    for k in latent_kernels {
        k.validate(x.len())?;
    }
    Ok(lmc_unchecked(mixing, latent_kernels, x, x_prime, i, j))
}

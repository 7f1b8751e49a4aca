//! Kernel families: MOHSM, its stationary MOSM limit, and the HSM / HSM-LMC
//! benchmarks, behind one [`KernelModel`] type.

mod hsm;
mod mohsm;
mod params;
mod spectral;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use hsm::{eval_hsm, eval_lmc, HsmComponent, HsmModel, HsmParams, LmcModel};
pub use mohsm::{cross_params, eval_mohsm, eval_mosm, CrossParams, SpectralMixtureEvaluator};
pub use params::{wrap_phase, ChannelSpectralParams, KernelSpec, MixtureComponent, ShiftGroup};
pub use spectral::{
    oracle_half_width, spectral_density, spectral_factor, spectral_transform_oracle, QuadratureGrid,
};

/// Kernel family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Mosm,
    Hsm,
    HsmLmc,
    Mohsm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Mosm, Method::Hsm, Method::HsmLmc, Method::Mohsm];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mosm => "mosm",
            Method::Hsm => "hsm",
            Method::HsmLmc => "hsm-lmc",
            Method::Mohsm => "mohsm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mosm" => Ok(Method::Mosm),
            "hsm" => Ok(Method::Hsm),
            "hsm-lmc" | "hsm_lmc" | "lmc" => Ok(Method::HsmLmc),
            "mohsm" => Ok(Method::Mohsm),
            other => Err(Error::InvalidArgument(format!(
                "unknown method `{other}` (expected mosm, hsm, hsm-lmc or mohsm)"
            ))),
        }
    }
}

/// A multi-output covariance function with per-channel observation noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "params", rename_all = "kebab-case")]
pub enum KernelModel {
    Mosm(KernelSpec),
    Hsm(HsmModel),
    HsmLmc(LmcModel),
    Mohsm(KernelSpec),
}

impl KernelModel {
    pub fn method(&self) -> Method {
        match self {
            KernelModel::Mosm(_) => Method::Mosm,
            KernelModel::Hsm(_) => Method::Hsm,
            KernelModel::HsmLmc(_) => Method::HsmLmc,
            KernelModel::Mohsm(_) => Method::Mohsm,
        }
    }

    pub fn n_channels(&self) -> usize {
        match self {
            KernelModel::Mosm(s) | KernelModel::Mohsm(s) => s.n_channels,
            KernelModel::Hsm(h) => h.channels.len(),
            KernelModel::HsmLmc(l) => l.mixing.len(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            KernelModel::Mosm(s) | KernelModel::Mohsm(s) => s.input_dim,
            KernelModel::Hsm(h) => h.input_dim,
            KernelModel::HsmLmc(l) => l.input_dim,
        }
    }

    /// Observation-noise standard deviation per channel.
    pub fn noise(&self) -> &[f64] {
        match self {
            KernelModel::Mosm(s) | KernelModel::Mohsm(s) => &s.noise,
            KernelModel::Hsm(h) => &h.noise,
            KernelModel::HsmLmc(l) => &l.noise,
        }
    }

    pub fn noise_mut(&mut self) -> &mut Vec<f64> {
        match self {
            KernelModel::Mosm(s) | KernelModel::Mohsm(s) => &mut s.noise,
            KernelModel::Hsm(h) => &mut h.noise,
            KernelModel::HsmLmc(l) => &mut l.noise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelModel::Mosm(s) | KernelModel::Mohsm(s) => s.validate(),
            KernelModel::Hsm(h) => h.validate(),
            KernelModel::HsmLmc(l) => l.validate(),
        }
    }

    /// `k_ij(x, x')` without noise. The model is assumed valid.
    pub fn eval(&self, i: usize, x: &[f64], j: usize, xp: &[f64]) -> f64 {
        self.evaluator().eval(i, x, j, xp)
    }

    /// Evaluator with cross-channel parameters precomputed; use this for
    /// repeated evaluations such as Gram assembly.
    pub fn evaluator(&self) -> ModelEvaluator<'_> {
        let inner = match self {
            KernelModel::Mosm(s) => Inner::Spectral(SpectralMixtureEvaluator::new(s, true)),
            KernelModel::Mohsm(s) => Inner::Spectral(SpectralMixtureEvaluator::new(s, false)),
            KernelModel::Hsm(h) => Inner::Hsm(h),
            KernelModel::HsmLmc(l) => Inner::Lmc(l),
        };
        ModelEvaluator { model: self, inner }
    }
}

enum Inner<'a> {
    Spectral(SpectralMixtureEvaluator<'a>),
    Hsm(&'a HsmModel),
    Lmc(&'a LmcModel),
}

/// Precomputed kernel evaluator that can also accumulate hyperparameter derivatives.
pub struct ModelEvaluator<'a> {
    model: &'a KernelModel,
    inner: Inner<'a>,
}

/// Opaque accumulator for [`ModelEvaluator::accumulate`].
pub struct GradBuffer(BufInner);

enum BufInner {
    Spectral(Vec<mohsm::CrossGrad>),
    Hsm(HsmModel),
    Lmc(LmcModel),
}

impl<'a> ModelEvaluator<'a> {
    pub fn model(&self) -> &'a KernelModel {
        self.model
    }

    #[inline]
    pub fn eval(&self, i: usize, x: &[f64], j: usize, xp: &[f64]) -> f64 {
        match &self.inner {
            Inner::Spectral(e) => e.eval(i, x, j, xp),
            Inner::Hsm(h) => h.eval(i, x, j, xp),
            Inner::Lmc(l) => l.eval(i, x, j, xp),
        }
    }

    pub fn grad_buffer(&self) -> GradBuffer {
        GradBuffer(match &self.inner {
            Inner::Spectral(e) => BufInner::Spectral(e.grad_buffer()),
            Inner::Hsm(h) => BufInner::Hsm(HsmModel {
                input_dim: h.input_dim,
                channels: h.channels.iter().map(HsmParams::zeros_like).collect(),
                noise: vec![0.0; h.noise.len()],
            }),
            Inner::Lmc(l) => BufInner::Lmc(LmcModel {
                input_dim: l.input_dim,
                mixing: l.mixing.iter().map(|r| vec![0.0; r.len()]).collect(),
                latents: l.latents.iter().map(HsmParams::zeros_like).collect(),
                noise: vec![0.0; l.noise.len()],
            }),
        })
    }

    /// Add `weight * d k_ij(x, x') / d(theta)` into `buf` for every kernel
    /// hyperparameter (noise excluded).
    pub fn accumulate(&self, buf: &mut GradBuffer, i: usize, x: &[f64], j: usize, xp: &[f64], weight: f64) {
        match (&self.inner, &mut buf.0) {
            (Inner::Spectral(e), BufInner::Spectral(b)) => e.accumulate(b, i, x, j, xp, weight),
            (Inner::Hsm(h), BufInner::Hsm(g)) => {
                if i == j {
                    h.channels[i].accumulate(&mut g.channels[i], x, xp, weight);
                }
            }
            (Inner::Lmc(l), BufInner::Lmc(g)) => {
                for (q, latent) in l.latents.iter().enumerate() {
                    let (ai, aj) = (l.mixing[i][q], l.mixing[j][q]);
                    let kq = latent.eval_unchecked(x, xp);
                    g.mixing[i][q] += weight * aj * kq;
                    g.mixing[j][q] += weight * ai * kq;
                    let a = ai * aj;
                    if a != 0.0 {
                        latent.accumulate(&mut g.latents[q], x, xp, weight * a);
                    }
                }
            }
            _ => unreachable!("gradient buffer from a different evaluator"),
        }
    }

    /// Model-shaped gradient with zero noise entries.
    pub fn finish(&self, buf: GradBuffer) -> KernelModel {
        match (&self.inner, buf.0) {
            (Inner::Spectral(e), BufInner::Spectral(b)) => {
                let g = e.finish(&b);
                match self.model {
                    KernelModel::Mosm(_) => KernelModel::Mosm(g),
                    _ => KernelModel::Mohsm(g),
                }
            }
            (Inner::Hsm(_), BufInner::Hsm(g)) => KernelModel::Hsm(g),
            (Inner::Lmc(_), BufInner::Lmc(g)) => KernelModel::HsmLmc(g),
            _ => unreachable!("gradient buffer from a different evaluator"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("sm".parse::<Method>().is_err());
    }

    #[test]
    fn model_json_is_tagged() {
        let model = KernelModel::Hsm(HsmModel {
            input_dim: 1,
            channels: vec![HsmParams {
                components: vec![HsmComponent {
                    weight: 1.0,
                    lengthscale: 2.0,
                    center: vec![0.0],
                    sigma: vec![1.0],
                    mu: vec![1.0],
                }],
            }],
            noise: vec![0.1],
        });
        let s = serde_json::to_string(&model).unwrap();
        assert!(s.contains("\"method\":\"hsm\""));
        let back: KernelModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, model);
    }
}

//! Hyperparameter containers for the harmonizable spectral mixture family.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spectral factor parameters of one output channel for one mixture component.
///
/// `mu` is an angular frequency, `sigma` the diagonal of the spectral covariance
/// (squared angular frequency), `theta` a delay in input units and `phi` a phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpectralParams {
    pub w: f64,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub theta: Vec<f64>,
    pub phi: f64,
}

impl ChannelSpectralParams {
    /// Zero-delay, zero-phase channel.
    pub fn new(w: f64, mu: Vec<f64>, sigma: Vec<f64>) -> Self {
        let n = mu.len();
        Self {
            w,
            mu,
            sigma,
            theta: vec![0.0; n],
            phi: 0.0,
        }
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if self.mu.len() != input_dim
            || self.sigma.len() != input_dim
            || self.theta.len() != input_dim
        {
            return Err(Error::DimensionMismatch(format!(
                "channel parameters must have input dimension {input_dim}"
            )));
        }
        let finite = self.w.is_finite()
            && self.phi.is_finite()
            && self.mu.iter().chain(&self.sigma).chain(&self.theta).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("non-finite channel parameter".into()));
        }
        if self.sigma.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidParameter(
                "spectral covariance entries must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// One spectral component shared across all channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub channels: Vec<ChannelSpectralParams>,
}

/// Components activated around one input shift `center`.
///
/// `ell` holds one frequency-domain lengthscale per channel; `ell == 0` is the
/// stationary limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftGroup {
    pub center: Vec<f64>,
    pub ell: Vec<f64>,
    pub components: Vec<MixtureComponent>,
}

/// Full hyperparameter set of a multi-output harmonizable spectral mixture kernel,
/// including the per-channel observation noise standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub n_channels: usize,
    pub input_dim: usize,
    pub shifts: Vec<ShiftGroup>,
    pub noise: Vec<f64>,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.input_dim == 0 {
            return Err(Error::InvalidParameter(
                "channel count and input dimension must be positive".into(),
            ));
        }
        if self.shifts.is_empty() {
            return Err(Error::InvalidParameter("at least one input shift required".into()));
        }
        if self.noise.len() != self.n_channels {
            return Err(Error::DimensionMismatch(format!(
                "noise has {} entries, expected {}",
                self.noise.len(),
                self.n_channels
            )));
        }
        if self.noise.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter("noise entries must be finite and > 0".into()));
        }
        for (p, shift) in self.shifts.iter().enumerate() {
            if shift.center.len() != self.input_dim {
                return Err(Error::DimensionMismatch(format!("shift {p}: center dimension")));
            }
            if shift.center.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidParameter(format!("shift {p}: non-finite center")));
            }
            if shift.ell.len() != self.n_channels {
                return Err(Error::DimensionMismatch(format!(
                    "shift {p}: expected {} lengthscales",
                    self.n_channels
                )));
            }
            if shift.ell.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
                return Err(Error::InvalidParameter(format!(
                    "shift {p}: lengthscales must be finite and >= 0"
                )));
            }
            if shift.components.is_empty() {
                return Err(Error::InvalidParameter(format!("shift {p}: no components")));
            }
            for comp in &shift.components {
                if comp.channels.len() != self.n_channels {
                    return Err(Error::DimensionMismatch(format!(
                        "shift {p}: component has {} channels, expected {}",
                        comp.channels.len(),
                        self.n_channels
                    )));
                }
                for ch in &comp.channels {
                    ch.validate(self.input_dim)?;
                }
            }
        }
        Ok(())
    }

    pub fn n_components(&self) -> usize {
        self.shifts.iter().map(|s| s.components.len()).sum()
    }

    /// Same structure with every numeric field set to zero; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.noise.iter_mut().for_each(|v| *v = 0.0);
        for shift in &mut out.shifts {
            shift.center.iter_mut().for_each(|v| *v = 0.0);
            shift.ell.iter_mut().for_each(|v| *v = 0.0);
            for comp in &mut shift.components {
                for ch in &mut comp.channels {
                    ch.w = 0.0;
                    ch.phi = 0.0;
                    ch.mu.iter_mut().for_each(|v| *v = 0.0);
                    ch.sigma.iter_mut().for_each(|v| *v = 0.0);
                    ch.theta.iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        out
    }

    /// Copy with every phase wrapped to (-pi, pi].
    pub fn with_wrapped_phases(&self) -> Self {
        let mut out = self.clone();
        for shift in &mut out.shifts {
            for comp in &mut shift.components {
                for ch in &mut comp.channels {
                    ch.phi = wrap_phase(ch.phi);
                }
            }
        }
        out
    }
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_phase(phi: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = phi.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> KernelSpec {
        KernelSpec {
            n_channels: 2,
            input_dim: 1,
            shifts: vec![ShiftGroup {
                center: vec![0.0],
                ell: vec![0.1, 0.2],
                components: vec![MixtureComponent {
                    channels: vec![
                        ChannelSpectralParams::new(1.0, vec![2.0], vec![1.0]),
                        ChannelSpectralParams::new(1.0, vec![2.5], vec![1.0]),
                    ],
                }],
            }],
            noise: vec![0.1, 0.1],
        }
    }

    #[test]
    fn valid_spec_passes() {
        spec().validate().unwrap();
    }

    #[test]
    fn rejects_nonpositive_sigma() {
        let mut s = spec();
        s.shifts[0].components[0].channels[1].sigma[0] = 0.0;
        assert!(matches!(s.validate(), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn rejects_negative_ell_and_bad_noise() {
        let mut s = spec();
        s.shifts[0].ell[0] = -1.0;
        assert!(s.validate().is_err());
        let mut s = spec();
        s.noise[1] = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn rejects_channel_count_mismatch() {
        let mut s = spec();
        s.shifts[0].components[0].channels.pop();
        assert!(matches!(s.validate(), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn phase_wrapping() {
        use std::f64::consts::PI;
        assert!((wrap_phase(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_phase(-PI) - PI).abs() < 1e-12);
        assert!((wrap_phase(0.5) - 0.5).abs() < 1e-15);
        assert!((wrap_phase(-0.5 - 4.0 * PI) + 0.5).abs() < 1e-12);
    }
}

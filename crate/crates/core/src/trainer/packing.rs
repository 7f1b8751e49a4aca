//! Bijection between a kernel model and a flat vector of unconstrained reals.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::kernel::{HsmParams, KernelModel, KernelSpec};

/// Smallest positive value a constrained field is packed as; zero maps here
/// instead of to `-inf`.
pub const PACK_FLOOR: f64 = 1e-12;

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

/// Derivative of [`softplus`]: the logistic function.
pub fn softplus_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Real,
    Positive,
    /// Window lengthscale of (shift, channel).
    Ell(usize, usize),
    /// MOHSM amplitude, scaled by the lengthscale of (shift, channel) so the
    /// peak covariance stays continuous as the lengthscale goes to zero.
    Amplitude(usize, usize),
    /// Noise standard deviation, offset by the packer's noise floor.
    Noise,
}

/// `((2 pi)^{1/2} ell)^{-n/2}`.
fn amplitude_scale(ell: f64, n: usize) -> f64 {
    ((2.0 * PI).sqrt() * ell).powf(-(n as f64) / 2.0)
}

fn visit_spec(spec: &mut KernelSpec, windowed: bool, f: &mut dyn FnMut(Kind, &mut f64)) {
    for (p, shift) in spec.shifts.iter_mut().enumerate() {
        if windowed {
            for c in &mut shift.center {
                f(Kind::Real, c);
            }
            for (i, l) in shift.ell.iter_mut().enumerate() {
                f(Kind::Ell(p, i), l);
            }
        }
        for comp in &mut shift.components {
            for (i, ch) in comp.channels.iter_mut().enumerate() {
                f(if windowed { Kind::Amplitude(p, i) } else { Kind::Positive }, &mut ch.w);
                for d in 0..ch.mu.len() {
                    f(Kind::Real, &mut ch.mu[d]);
                    f(Kind::Positive, &mut ch.sigma[d]);
                    f(Kind::Real, &mut ch.theta[d]);
                }
                f(Kind::Real, &mut ch.phi);
            }
        }
    }
    for s in &mut spec.noise {
        f(Kind::Noise, s);
    }
}

fn visit_hsm(params: &mut HsmParams, with_weight: bool, f: &mut dyn FnMut(Kind, &mut f64)) {
    for c in &mut params.components {
        if with_weight {
            f(Kind::Positive, &mut c.weight);
        }
        f(Kind::Positive, &mut c.lengthscale);
        for d in 0..c.mu.len() {
            f(Kind::Real, &mut c.center[d]);
            f(Kind::Positive, &mut c.sigma[d]);
            f(Kind::Real, &mut c.mu[d]);
        }
    }
}

/// Visit every trainable field in canonical order.
///
/// MOSM skips window centers and lengthscales; HSM-LMC keeps latent weights
/// fixed since the mixing matrix already carries the scale.
fn visit(model: &mut KernelModel, f: &mut dyn FnMut(Kind, &mut f64)) {
    match model {
        KernelModel::Mosm(spec) => visit_spec(spec, false, f),
        KernelModel::Mohsm(spec) => visit_spec(spec, true, f),
        KernelModel::Hsm(h) => {
            for ch in &mut h.channels {
                visit_hsm(ch, true, f);
            }
            for s in &mut h.noise {
                f(Kind::Noise, s);
            }
        }
        KernelModel::HsmLmc(l) => {
            for row in &mut l.mixing {
                for a in row {
                    f(Kind::Real, a);
                }
            }
            for latent in &mut l.latents {
                visit_hsm(latent, false, f);
            }
            for s in &mut l.noise {
                f(Kind::Noise, s);
            }
        }
    }
}

fn ell_table(model: &KernelModel) -> Vec<Vec<f64>> {
    match model {
        KernelModel::Mohsm(spec) => spec.shifts.iter().map(|s| s.ell.clone()).collect(),
        _ => Vec::new(),
    }
}

/// Packing map for one model structure, with an optional reordering of the
/// packed coordinates.
#[derive(Debug, Clone)]
pub struct Packer {
    template: KernelModel,
    len: usize,
    /// Packed coordinate `k` holds canonical coordinate `order[k]`.
    order: Vec<usize>,
    noise_floor: f64,
}

impl Packer {
    pub fn new(template: &KernelModel) -> Result<Self> {
        template.validate()?;
        let mut t = template.clone();
        let mut len = 0;
        visit(&mut t, &mut |_, _| len += 1);
        Ok(Self {
            template: template.clone(),
            len,
            order: (0..len).collect(),
            noise_floor: 0.0,
        })
    }

    /// Same map with noise standard deviations kept above `floor`.
    pub fn with_noise_floor(mut self, floor: f64) -> Result<Self> {
        if !(floor >= 0.0 && floor.is_finite()) {
            return Err(Error::config("noise_floor", "must be finite and >= 0"));
        }
        self.noise_floor = floor;
        Ok(self)
    }

    pub fn noise_floor(&self) -> f64 {
        self.noise_floor
    }

    /// Same map with packed coordinates reordered; `order[k]` is the canonical
    /// coordinate stored at position `k`.
    pub fn with_order(mut self, order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; self.len];
        if order.len() != self.len || order.iter().any(|&k| k >= self.len || std::mem::replace(&mut seen[k], true)) {
            return Err(Error::InvalidArgument(format!(
                "packing order must be a permutation of 0..{}",
                self.len
            )));
        }
        self.order = order;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn template(&self) -> &KernelModel {
        &self.template
    }

    fn check_shape(&self, model: &KernelModel) -> Result<()> {
        let mut t = model.clone();
        let mut n = 0;
        visit(&mut t, &mut |_, _| n += 1);
        if n != self.len || model.method() != self.template.method() {
            return Err(Error::DimensionMismatch("model structure differs from the packing template".into()));
        }
        Ok(())
    }

    fn permute_out(&self, canonical: Vec<f64>) -> Vec<f64> {
        self.order.iter().map(|&k| canonical[k]).collect()
    }

    fn permute_in(&self, packed: &[f64]) -> Vec<f64> {
        let mut canonical = vec![0.0; self.len];
        for (k, &c) in self.order.iter().enumerate() {
            canonical[c] = packed[k];
        }
        canonical
    }

    /// Unconstrained coordinates of `model`.
    pub fn pack(&self, model: &KernelModel) -> Result<Vec<f64>> {
        self.check_shape(model)?;
        model.validate()?;
        let ells = ell_table(model);
        let n = model.input_dim();
        let mut out = Vec::with_capacity(self.len);
        let mut bad = None;
        let floor = self.noise_floor;
        let mut m = model.clone();
        visit(&mut m, &mut |kind, v| {
            let x = *v;
            out.push(match kind {
                Kind::Real => x,
                Kind::Positive | Kind::Ell(..) => {
                    if x < 0.0 {
                        bad = Some("positive field is negative");
                    }
                    softplus_inv(x.max(PACK_FLOOR))
                }
                Kind::Amplitude(p, i) => {
                    if x < 0.0 {
                        bad = Some("amplitudes must be >= 0 to be packed");
                    }
                    let ell = ells[p][i];
                    // zero lengthscale means the stationary normalization, which is
                    // exactly the scaled amplitude
                    let s = if ell > 0.0 { x / amplitude_scale(ell, n) } else { x };
                    softplus_inv(s.max(PACK_FLOOR))
                }
                Kind::Noise => {
                    if x < 0.0 {
                        bad = Some("noise is negative");
                    }
                    softplus_inv((x - floor).max(PACK_FLOOR))
                }
            });
        });
        if let Some(reason) = bad {
            return Err(Error::InvalidParameter(reason.into()));
        }
        Ok(self.permute_out(out))
    }

    /// Model at unconstrained coordinates `v`.
    pub fn unpack(&self, v: &[f64]) -> Result<KernelModel> {
        if v.len() != self.len {
            return Err(Error::DimensionMismatch(format!("expected {} coordinates, got {}", self.len, v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite coordinate".into()));
        }
        let canonical = self.permute_in(v);
        let n = self.template.input_dim();
        let mut ells = ell_table(&self.template);
        let mut model = self.template.clone();
        let mut k = 0;
        visit(&mut model, &mut |kind, field| {
            let x = canonical[k];
            k += 1;
            *field = match kind {
                Kind::Real => x,
                Kind::Positive => softplus(x),
                Kind::Ell(p, i) => {
                    let l = softplus(x);
                    ells[p][i] = l;
                    l
                }
                Kind::Amplitude(p, i) => softplus(x) * amplitude_scale(ells[p][i], n),
                Kind::Noise => self.noise_floor + softplus(x),
            };
        });
        model.validate()?;
        Ok(model)
    }

    /// Chain a model-shaped gradient at `model = unpack(v)` down to the
    /// unconstrained coordinates.
    pub fn chain(&self, v: &[f64], model: &KernelModel, grad: &KernelModel) -> Vec<f64> {
        let canonical = self.permute_in(v);
        let n = model.input_dim();
        let mut grad = grad.clone();
        // amplitudes depend on their shift's lengthscale
        if let (KernelModel::Mohsm(spec), KernelModel::Mohsm(g)) = (model, &mut grad) {
            for (p, shift) in spec.shifts.iter().enumerate() {
                for i in 0..spec.n_channels {
                    let l = shift.ell[i];
                    let extra: f64 = shift
                        .components
                        .iter()
                        .zip(&g.shifts[p].components)
                        .map(|(c, gc)| gc.channels[i].w * c.channels[i].w)
                        .sum();
                    g.shifts[p].ell[i] += extra * (-(n as f64) / (2.0 * l));
                }
            }
        }
        let ells = ell_table(model);
        let mut out = Vec::with_capacity(self.len);
        let mut k = 0;
        visit(&mut grad, &mut |kind, g| {
            let x = canonical[k];
            k += 1;
            out.push(match kind {
                Kind::Real => *g,
                Kind::Positive | Kind::Ell(..) | Kind::Noise => *g * softplus_grad(x),
                Kind::Amplitude(p, i) => *g * softplus_grad(x) * amplitude_scale(ells[p][i], n),
            });
        });
        self.permute_out(out)
    }

    /// Human-readable name of each packed coordinate.
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.len);
        let mut m = self.template.clone();
        let mut k = 0;
        visit(&mut m, &mut |kind, _| {
            names.push(match kind {
                Kind::Ell(p, i) => format!("{k}:ell[{p}][{i}]"),
                Kind::Amplitude(p, i) => format!("{k}:amplitude[{p}][{i}]"),
                Kind::Positive => format!("{k}:positive"),
                Kind::Noise => format!("{k}:noise"),
                Kind::Real => format!("{k}:real"),
            });
            k += 1;
        });
        self.permute_out_strings(names)
    }

    fn permute_out_strings(&self, canonical: Vec<String>) -> Vec<String> {
        self.order.iter().map(|&k| canonical[k].clone()).collect()
    }
}

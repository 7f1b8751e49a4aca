//! Closed-form MOHSM and MOSM kernels, derived cross-channel parameters and
//! the analytic hyperparameter derivatives used by the trainer.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::kernel::params::{ChannelSpectralParams, KernelSpec};

/// Parameters of the (i, j) cross-spectral density of one mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossParams {
    pub sigma_ij: Vec<f64>,
    pub mu_ij: Vec<f64>,
    pub w_ij: f64,
    pub theta_ij: Vec<f64>,
    pub phi_ij: f64,
    pub ell_ij: f64,
    pub alpha_ij: f64,
}

/// Combine two channels' spectral factors.
///
/// When `stationary` is set, or the combined lengthscale is zero, the window is
/// dropped and the stationary normalization `(2pi)^{n/2} |Sigma_ij|^{1/2}` is used.
pub(crate) fn combine(
    ci: &ChannelSpectralParams,
    cj: &ChannelSpectralParams,
    ell_i: f64,
    ell_j: f64,
    stationary: bool,
) -> CrossParams {
    let n = ci.mu.len();
    let mut sigma_ij = Vec::with_capacity(n);
    let mut mu_ij = Vec::with_capacity(n);
    let mut theta_ij = Vec::with_capacity(n);
    let mut quad = 0.0;
    let mut det = 1.0;
    for d in 0..n {
        let (si, sj) = (ci.sigma[d], cj.sigma[d]);
        let s = si + sj;
        let sig = 2.0 * si * sj / s;
        sigma_ij.push(sig);
        mu_ij.push((si * cj.mu[d] + sj * ci.mu[d]) / s);
        theta_ij.push(ci.theta[d] - cj.theta[d]);
        let diff = ci.mu[d] - cj.mu[d];
        quad += diff * diff / s;
        det *= sig;
    }
    let w_ij = ci.w * cj.w * (-0.25 * quad).exp();
    let ell_ij = if stationary { 0.0 } else { combined_ell(ell_i, ell_j) };
    let nf = n as f64;
    let alpha_ij = if ell_ij > 0.0 {
        w_ij * (2.0 * PI).powf(nf) * det.sqrt() * ell_ij.powf(nf)
    } else {
        w_ij * (2.0 * PI).powf(nf / 2.0) * det.sqrt()
    };
    CrossParams {
        sigma_ij,
        mu_ij,
        w_ij,
        theta_ij,
        phi_ij: ci.phi - cj.phi,
        ell_ij,
        alpha_ij,
    }
}

/// `l_ij^2 = 2 l_i^2 l_j^2 / (l_i^2 + l_j^2)`, zero when either lengthscale is zero.
pub(crate) fn combined_ell(ell_i: f64, ell_j: f64) -> f64 {
    let (a, b) = (ell_i * ell_i, ell_j * ell_j);
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        (2.0 * a * b / (a + b)).sqrt()
    }
}

fn check_indices(spec: &KernelSpec, p: usize, q: usize, i: usize, j: usize) -> Result<()> {
    if p >= spec.shifts.len() {
        return Err(Error::InvalidArgument(format!("shift index {p} out of range")));
    }
    if q >= spec.shifts[p].components.len() {
        return Err(Error::InvalidArgument(format!("component index {q} out of range")));
    }
    if i >= spec.n_channels || j >= spec.n_channels {
        return Err(Error::InvalidArgument(format!("channel pair ({i}, {j}) out of range")));
    }
    Ok(())
}

/// Derived cross-channel parameters for shift `p`, component `q`, channel pair `(i, j)`.
pub fn cross_params(
    spec: &KernelSpec,
    shift_index: usize,
    component_index: usize,
    i: usize,
    j: usize,
) -> Result<CrossParams> {
    check_indices(spec, shift_index, component_index, i, j)?;
    let shift = &spec.shifts[shift_index];
    let comp = &shift.components[component_index];
    let (ci, cj) = (&comp.channels[i], &comp.channels[j]);
    if ci.sigma.iter().chain(&cj.sigma).any(|&s| s <= 0.0) {
        return Err(Error::InvalidParameter(
            "spectral covariance entries must be > 0".into(),
        ));
    }
    if shift.ell[i] < 0.0 || shift.ell[j] < 0.0 {
        return Err(Error::InvalidParameter("lengthscales must be >= 0".into()));
    }
    Ok(combine(ci, cj, shift.ell[i], shift.ell[j], false))
}

/// MOHSM kernel `k_ij(x, x')` summed over every shift and component.
///
/// The spec is assumed to be valid; see [`KernelSpec::validate`].
pub fn eval_mohsm(spec: &KernelSpec, x: &[f64], x_prime: &[f64], i: usize, j: usize) -> f64 {
    SpectralMixtureEvaluator::new(spec, false).eval(i, x, j, x_prime)
}

/// Stationary MOSM kernel on the same parameters: windows fixed to one and
/// stationary normalization for every component.
pub fn eval_mosm(spec: &KernelSpec, x: &[f64], x_prime: &[f64], i: usize, j: usize) -> f64 {
    SpectralMixtureEvaluator::new(spec, true).eval(i, x, j, x_prime)
}

/// Precomputed cross-parameter table for repeated kernel evaluations.
#[derive(Debug, Clone)]
pub struct SpectralMixtureEvaluator<'a> {
    spec: &'a KernelSpec,
    stationary: bool,
    // (shift index, first global component index) per shift
    offsets: Vec<usize>,
    table: Vec<CrossParams>,
}

/// Accumulated derivatives of a weighted kernel sum with respect to one
/// table entry's cross parameters.
#[derive(Debug, Clone)]
pub(crate) struct CrossGrad {
    alpha: f64,
    sigma: Vec<f64>,
    mu: Vec<f64>,
    theta: Vec<f64>,
    phi: f64,
    ell2: f64,
    center: Vec<f64>,
}

impl CrossGrad {
    fn zeros(n: usize) -> Self {
        Self {
            alpha: 0.0,
            sigma: vec![0.0; n],
            mu: vec![0.0; n],
            theta: vec![0.0; n],
            phi: 0.0,
            ell2: 0.0,
            center: vec![0.0; n],
        }
    }
}

impl<'a> SpectralMixtureEvaluator<'a> {
    pub fn new(spec: &'a KernelSpec, stationary: bool) -> Self {
        let m = spec.n_channels;
        let mut offsets = Vec::with_capacity(spec.shifts.len());
        let mut table = Vec::with_capacity(spec.n_components() * m * m);
        for shift in &spec.shifts {
            offsets.push(table.len() / (m * m));
            for comp in &shift.components {
                for i in 0..m {
                    for j in 0..m {
                        table.push(combine(
                            &comp.channels[i],
                            &comp.channels[j],
                            shift.ell[i],
                            shift.ell[j],
                            stationary,
                        ));
                    }
                }
            }
        }
        Self {
            spec,
            stationary,
            offsets,
            table,
        }
    }

    pub fn spec(&self) -> &KernelSpec {
        self.spec
    }

    #[inline]
    fn entry(&self, g: usize, i: usize, j: usize) -> &CrossParams {
        let m = self.spec.n_channels;
        &self.table[(g * m + i) * m + j]
    }

    fn window_r2(&self, center: &[f64], x: &[f64], xp: &[f64]) -> f64 {
        if self.stationary {
            return 0.0;
        }
        x.iter()
            .zip(xp)
            .zip(center)
            .map(|((a, b), c)| {
                let d = 0.5 * (a + b) - c;
                d * d
            })
            .sum()
    }

    pub fn eval(&self, i: usize, x: &[f64], j: usize, xp: &[f64]) -> f64 {
        let mut k = 0.0;
        for (p, shift) in self.spec.shifts.iter().enumerate() {
            let r2 = self.window_r2(&shift.center, x, xp);
            for q in 0..shift.components.len() {
                let e = self.entry(self.offsets[p] + q, i, j);
                let (quad, phase) = lag_terms(e, x, xp);
                let ell2 = e.ell_ij * e.ell_ij;
                k += e.alpha_ij * (-0.5 * quad - 0.5 * ell2 * r2).exp() * phase.cos();
            }
        }
        k
    }

    pub(crate) fn grad_buffer(&self) -> Vec<CrossGrad> {
        vec![CrossGrad::zeros(self.spec.input_dim); self.table.len()]
    }

    /// Add `weight * d k_ij(x, x') / d(cross params)` into `buf`.
    pub(crate) fn accumulate(
        &self,
        buf: &mut [CrossGrad],
        i: usize,
        x: &[f64],
        j: usize,
        xp: &[f64],
        weight: f64,
    ) {
        let m = self.spec.n_channels;
        let n = self.spec.input_dim;
        for (p, shift) in self.spec.shifts.iter().enumerate() {
            let r2 = self.window_r2(&shift.center, x, xp);
            for q in 0..shift.components.len() {
                let idx = ((self.offsets[p] + q) * m + i) * m + j;
                let e = &self.table[idx];
                let (quad, phase) = lag_terms(e, x, xp);
                let ell2 = e.ell_ij * e.ell_ij;
                let ex = (-0.5 * quad - 0.5 * ell2 * r2).exp();
                let (s, c) = phase.sin_cos();
                let base = e.alpha_ij * ex;
                let k = base * c;
                let wk = weight * k;
                let ws = weight * base * s;
                let g = &mut buf[idx];
                g.alpha += weight * ex * c;
                g.phi -= ws;
                g.ell2 += -0.5 * r2 * wk;
                for d in 0..n {
                    let u = x[d] - xp[d] + e.theta_ij[d];
                    g.sigma[d] += -0.5 * u * u * wk;
                    g.mu[d] -= ws * u;
                    g.theta[d] += -e.sigma_ij[d] * u * wk - ws * e.mu_ij[d];
                    if ell2 > 0.0 {
                        let xbar = 0.5 * (x[d] + xp[d]);
                        g.center[d] += wk * ell2 * (xbar - shift.center[d]);
                    }
                }
            }
        }
    }

    /// Chain the accumulated cross-parameter derivatives down to the channel
    /// parameters. Returns a spec-shaped gradient with zero noise entries.
    pub(crate) fn finish(&self, buf: &[CrossGrad]) -> KernelSpec {
        let spec = self.spec;
        let m = spec.n_channels;
        let n = spec.input_dim;
        let nf = n as f64;
        let mut out = spec.zeros_like();
        for (p, shift) in spec.shifts.iter().enumerate() {
            for (q, comp) in shift.components.iter().enumerate() {
                let g_index = self.offsets[p] + q;
                for i in 0..m {
                    for j in 0..m {
                        let idx = (g_index * m + i) * m + j;
                        let e = &self.table[idx];
                        let gr = &buf[idx];
                        let (ci, cj) = (&comp.channels[i], &comp.channels[j]);
                        let alpha = e.alpha_ij;
                        let ga = gr.alpha;

                        // alpha = w_i w_j E A0
                        let w_rest = if ci.w * cj.w != 0.0 {
                            None
                        } else {
                            Some(alpha_without_w(ci, cj, e))
                        };
                        let (dwi, dwj) = match w_rest {
                            None => (alpha / ci.w, alpha / cj.w),
                            Some(rest) => (cj.w * rest, ci.w * rest),
                        };

                        let mut g_ell2 = gr.ell2;
                        if e.ell_ij > 0.0 {
                            g_ell2 += ga * alpha * nf / (2.0 * e.ell_ij * e.ell_ij);
                        }

                        let shift_out = &mut out.shifts[p];
                        {
                            let oi = &mut shift_out.components[q].channels[i];
                            oi.w += ga * dwi;
                            oi.phi += gr.phi;
                        }
                        {
                            let oj = &mut shift_out.components[q].channels[j];
                            oj.w += ga * dwj;
                            oj.phi -= gr.phi;
                        }
                        for d in 0..n {
                            let (si, sj) = (ci.sigma[d], cj.sigma[d]);
                            let s = si + sj;
                            let diff = ci.mu[d] - cj.mu[d];
                            let g_sig = gr.sigma[d] + ga * alpha / (2.0 * e.sigma_ij[d]);
                            let g_mu = gr.mu[d];
                            let s2 = s * s;

                            let dmu_i = ga * alpha * (-0.5 * diff / s) + g_mu * sj / s;
                            let dmu_j = ga * alpha * (0.5 * diff / s) + g_mu * si / s;
                            let e_part = ga * alpha * 0.25 * diff * diff / s2;
                            let dsi = e_part
                                + g_sig * 2.0 * sj * sj / s2
                                + g_mu * sj * (cj.mu[d] - ci.mu[d]) / s2;
                            let dsj = e_part
                                + g_sig * 2.0 * si * si / s2
                                + g_mu * si * (ci.mu[d] - cj.mu[d]) / s2;

                            {
                                let oi = &mut shift_out.components[q].channels[i];
                                oi.mu[d] += dmu_i;
                                oi.sigma[d] += dsi;
                                oi.theta[d] += gr.theta[d];
                            }
                            {
                                let oj = &mut shift_out.components[q].channels[j];
                                oj.mu[d] += dmu_j;
                                oj.sigma[d] += dsj;
                                oj.theta[d] -= gr.theta[d];
                            }
                            shift_out.center[d] += gr.center[d];
                        }
                        if e.ell_ij > 0.0 && !self.stationary {
                            let (li, lj) = (shift.ell[i], shift.ell[j]);
                            let (a, b) = (li * li, lj * lj);
                            let ab2 = (a + b) * (a + b);
                            shift_out.ell[i] += g_ell2 * 2.0 * b * b / ab2 * 2.0 * li;
                            shift_out.ell[j] += g_ell2 * 2.0 * a * a / ab2 * 2.0 * lj;
                        }
                    }
                }
            }
        }
        out
    }
}

/// `alpha_ij / (w_i w_j)`, computed directly so zero amplitudes are handled.
fn alpha_without_w(ci: &ChannelSpectralParams, cj: &ChannelSpectralParams, e: &CrossParams) -> f64 {
    let n = ci.mu.len();
    let nf = n as f64;
    let mut quad = 0.0;
    for d in 0..n {
        let diff = ci.mu[d] - cj.mu[d];
        quad += diff * diff / (ci.sigma[d] + cj.sigma[d]);
    }
    let det: f64 = e.sigma_ij.iter().product();
    let norm = if e.ell_ij > 0.0 {
        (2.0 * PI).powf(nf) * det.sqrt() * e.ell_ij.powf(nf)
    } else {
        (2.0 * PI).powf(nf / 2.0) * det.sqrt()
    };
    (-0.25 * quad).exp() * norm
}

/// Quadratic form `u' Sigma_ij u` and phase `u' mu_ij + phi_ij` with `u = x - x' + theta_ij`.
#[inline]
fn lag_terms(e: &CrossParams, x: &[f64], xp: &[f64]) -> (f64, f64) {
    let mut quad = 0.0;
    let mut phase = e.phi_ij;
    for d in 0..x.len() {
        let u = x[d] - xp[d] + e.theta_ij[d];
        quad += e.sigma_ij[d] * u * u;
        phase += e.mu_ij[d] * u;
    }
    (quad, phase)
}

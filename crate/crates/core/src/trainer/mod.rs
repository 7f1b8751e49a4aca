//! Maximum-likelihood training on an unconstrained parametrization.

mod lbfgs;
mod packing;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gp::{nll, nll_with_grad};
use crate::kernel::KernelModel;

pub use packing::{softplus, softplus_grad, softplus_inv, Packer, PACK_FLOOR};

/// Consecutive rejected steps after which optimization aborts.
pub const MAX_REJECTIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Algorithm {
    Adam { learning_rate: f64 },
    Lbfgs { memory: usize },
}

impl Default for Algorithm {
    fn default() -> Self {
        Algorithm::Adam { learning_rate: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub algorithm: Algorithm,
    /// Lower bound on each noise standard deviation, in model units.
    pub noise_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            grad_tol: 1e-5,
            algorithm: Algorithm::default(),
            noise_floor: 0.0,
        }
    }
}

/// Summary of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    /// Best NLL seen after each iteration.
    pub nll_trace: Vec<f64>,
    /// NLL at the iterate itself.
    pub raw_nll_trace: Vec<f64>,
    pub grad_norm_trace: Vec<f64>,
    pub final_nll: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub rejected_steps: usize,
    pub wall_time: f64,
}

impl TrainReport {
    /// CSV with columns `iteration,nll,grad_norm`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut body = String::from("iteration,nll,grad_norm\n");
        for (k, (nll, g)) in self.nll_trace.iter().zip(&self.grad_norm_trace).enumerate() {
            body.push_str(&format!("{k},{nll},{g}\n"));
        }
        f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// NLL and its gradient at unconstrained coordinates `v`.
pub fn objective(packer: &Packer, v: &[f64], data: &Dataset) -> Result<(f64, Vec<f64>)> {
    let model = packer.unpack(v)?;
    let (value, grad) = nll_with_grad(&model, data)?;
    if !value.is_finite() {
        return Err(Error::InvalidParameter("non-finite NLL".into()));
    }
    Ok((value, packer.chain(v, &model, &grad)))
}

/// NLL at unconstrained coordinates `v`.
pub fn objective_value(packer: &Packer, v: &[f64], data: &Dataset) -> Result<f64> {
    nll(&packer.unpack(v)?, data)
}

/// Exact gradient of `nll(unpack(v))`.
pub fn gradient(packer: &Packer, v: &[f64], data: &Dataset) -> Result<Vec<f64>> {
    objective(packer, v, data).map(|(_, g)| g)
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Minimize the NLL starting from `init`. Returns the best model seen, with
/// phases wrapped to (-pi, pi].
pub fn optimize(init: &KernelModel, data: &Dataset, config: &TrainConfig) -> Result<(KernelModel, TrainReport)> {
    let packer = Packer::new(init)?.with_noise_floor(config.noise_floor)?;
    optimize_packed(&packer, init, data, config)
}

/// [`optimize`] with an explicit packing map.
pub fn optimize_packed(
    packer: &Packer,
    init: &KernelModel,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<(KernelModel, TrainReport)> {
    if !(config.grad_tol >= 0.0) {
        return Err(Error::config("grad_tol", "must be >= 0"));
    }
    let start = Instant::now();
    let x0 = packer.pack(init)?;
    let (best_x, mut report) = match config.algorithm {
        Algorithm::Adam { learning_rate } => {
            if !(learning_rate > 0.0) {
                return Err(Error::config("learning_rate", "must be > 0"));
            }
            adam(packer, x0, data, config, learning_rate)?
        }
        Algorithm::Lbfgs { memory } => {
            if memory == 0 {
                return Err(Error::config("memory", "must be >= 1"));
            }
            lbfgs::minimize(packer, x0, data, config, memory)?
        }
    };
    report.wall_time = start.elapsed().as_secs_f64();
    let mut model = packer.unpack(&best_x)?;
    if let KernelModel::Mosm(s) | KernelModel::Mohsm(s) = &mut model {
        *s = s.with_wrapped_phases();
    }
    log::info!(
        "{} training: {} iterations, nll {:.6}, |g| {:.3e}, converged {}",
        model.method(),
        report.iterations,
        report.final_nll,
        report.grad_norm,
        report.converged
    );
    Ok((model, report))
}

struct Tracker {
    best_x: Vec<f64>,
    best_f: f64,
    best_g: f64,
    report: TrainReport,
}

impl Tracker {
    fn new(x: &[f64]) -> Self {
        Self {
            best_x: x.to_vec(),
            best_f: f64::INFINITY,
            best_g: f64::INFINITY,
            report: TrainReport {
                iterations: 0,
                nll_trace: Vec::new(),
                raw_nll_trace: Vec::new(),
                grad_norm_trace: Vec::new(),
                final_nll: f64::INFINITY,
                grad_norm: f64::INFINITY,
                converged: false,
                rejected_steps: 0,
                wall_time: 0.0,
            },
        }
    }

    fn record(&mut self, x: &[f64], f: f64, gnorm: f64) {
        if f < self.best_f {
            self.best_f = f;
            self.best_g = gnorm;
            self.best_x = x.to_vec();
        }
        self.report.nll_trace.push(self.best_f);
        self.report.raw_nll_trace.push(f);
        self.report.grad_norm_trace.push(gnorm);
    }

    fn finish(mut self, iterations: usize, converged: bool) -> (Vec<f64>, TrainReport) {
        self.report.iterations = iterations;
        self.report.final_nll = self.best_f;
        self.report.grad_norm = self.best_g;
        self.report.converged = converged;
        (self.best_x, self.report)
    }
}

struct AdamState {
    x: Vec<f64>,
    g: Vec<f64>,
    m: Vec<f64>,
    s: Vec<f64>,
    t: i32,
}

impl AdamState {
    fn step(&self, lr: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>, i32) {
        const BETA1: f64 = 0.9;
        const BETA2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        let t = self.t + 1;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let mut x = self.x.clone();
        let mut m = self.m.clone();
        let mut s = self.s.clone();
        for k in 0..x.len() {
            let g = self.g[k];
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * g;
            s[k] = BETA2 * s[k] + (1.0 - BETA2) * g * g;
            x[k] -= lr * (m[k] / c1) / ((s[k] / c2).sqrt() + EPS);
        }
        (x, m, s, t)
    }
}

fn adam(
    packer: &Packer,
    x0: Vec<f64>,
    data: &Dataset,
    config: &TrainConfig,
    mut lr: f64,
) -> Result<(Vec<f64>, TrainReport)> {
    let n = x0.len();
    let mut x = x0;
    let mut m = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = 0;
    let mut tracker = Tracker::new(&x);
    let mut last: Option<AdamState> = None;
    let mut rejections = 0;
    let mut iteration = 0;
    let mut converged = false;

    loop {
        let (f, g) = match objective(packer, &x, data) {
            Ok(r) => r,
            Err(e) => {
                let Some(state) = &last else {
                    return Err(e);
                };
                rejections += 1;
                tracker.report.rejected_steps += 1;
                if rejections >= MAX_REJECTIONS {
                    return Err(Error::OptimizerAbort {
                        iterations: iteration,
                        reason: format!("{MAX_REJECTIONS} consecutive rejected steps; last error: {e}"),
                    });
                }
                log::debug!("rejected Adam step ({e}); learning rate {lr} -> {}", lr / 2.0);
                lr /= 2.0;
                (x, m, s, t) = state.step(lr);
                continue;
            }
        };
        rejections = 0;
        let gnorm = norm(&g);
        tracker.record(&x, f, gnorm);
        if gnorm < config.grad_tol {
            converged = true;
            break;
        }
        if iteration >= config.max_iters {
            break;
        }
        iteration += 1;
        let state = AdamState { x, g, m, s, t };
        (x, m, s, t) = state.step(lr);
        last = Some(state);
    }
    Ok(tracker.finish(iteration, converged))
}

/// Relative tolerance of the finite-difference gradient contract.
pub const GRAD_CHECK_RTOL: f64 = 1e-4;
/// Absolute tolerance of the finite-difference gradient contract.
pub const GRAD_CHECK_ATOL: f64 = 1e-7;

/// One coordinate of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckEntry {
    pub fn passes(&self) -> bool {
        let err = (self.analytic - self.numeric).abs();
        err <= GRAD_CHECK_ATOL || err <= GRAD_CHECK_RTOL * self.numeric.abs()
    }
}

/// Compare the analytic gradient against central differences with step
/// `1e-5 * (1 + |v_k|)` in every coordinate.
pub fn finite_difference_check(packer: &Packer, v: &[f64], data: &Dataset) -> Result<Vec<GradCheckEntry>> {
    let g = gradient(packer, v, data)?;
    let names = packer.names();
    let mut out = Vec::with_capacity(v.len());
    let mut x = v.to_vec();
    for k in 0..v.len() {
        let h = 1e-5 * (1.0 + v[k].abs());
        x[k] = v[k] + h;
        let fp = objective_value(packer, &x, data)?;
        x[k] = v[k] - h;
        let fm = objective_value(packer, &x, data)?;
        x[k] = v[k];
        out.push(GradCheckEntry {
            name: names[k].clone(),
            analytic: g[k],
            numeric: (fp - fm) / (2.0 * h),
        });
    }
    Ok(out)
}

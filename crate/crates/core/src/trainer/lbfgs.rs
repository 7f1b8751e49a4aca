//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use crate::data::Dataset;
use crate::error::{Error, Result};

use super::{norm, objective, Packer, TrainConfig, TrainReport, Tracker, MAX_REJECTIONS};

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_BRACKET: usize = 25;
const MAX_ZOOM: usize = 30;

#[derive(Clone)]
struct Trial {
    alpha: f64,
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

struct LineSearch<'a> {
    packer: &'a Packer,
    data: &'a Dataset,
    x: &'a [f64],
    d: &'a [f64],
    f0: f64,
    slope0: f64,
    failures: usize,
    consecutive_failures: usize,
}

impl LineSearch<'_> {
    /// Evaluate at step `alpha`; a failed evaluation counts as `+inf`.
    fn eval(&mut self, alpha: f64) -> Result<Trial> {
        let x: Vec<f64> = self.x.iter().zip(self.d).map(|(a, b)| a + alpha * b).collect();
        match objective(self.packer, &x, self.data) {
            Ok((f, g)) => {
                self.consecutive_failures = 0;
                let slope = g.iter().zip(self.d).map(|(a, b)| a * b).sum();
                Ok(Trial { alpha, x, f, g, slope })
            }
            Err(e) => {
                self.failures += 1;
                self.consecutive_failures += 1;
                if self.consecutive_failures >= MAX_REJECTIONS {
                    return Err(Error::OptimizerAbort {
                        iterations: 0,
                        reason: format!("{MAX_REJECTIONS} consecutive failed evaluations in line search; last error: {e}"),
                    });
                }
                Ok(Trial {
                    alpha,
                    x,
                    f: f64::INFINITY,
                    g: Vec::new(),
                    slope: f64::NAN,
                })
            }
        }
    }

    fn armijo(&self, t: &Trial) -> bool {
        t.f <= self.f0 + C1 * t.alpha * self.slope0
    }

    fn curvature(&self, t: &Trial) -> bool {
        t.slope.abs() <= -C2 * self.slope0
    }

    fn search(&mut self, alpha0: f64) -> Result<Option<Trial>> {
        let mut prev = Trial {
            alpha: 0.0,
            x: self.x.to_vec(),
            f: self.f0,
            g: Vec::new(),
            slope: self.slope0,
        };
        let mut alpha = alpha0;
        for i in 0..MAX_BRACKET {
            let t = self.eval(alpha)?;
            if !t.f.is_finite() || !self.armijo(&t) || (i > 0 && t.f >= prev.f) {
                return self.zoom(prev, t);
            }
            if self.curvature(&t) {
                return Ok(Some(t));
            }
            if t.slope >= 0.0 {
                return self.zoom(t, prev);
            }
            prev = t;
            alpha *= 2.0;
        }
        Ok(if prev.alpha > 0.0 { Some(prev) } else { None })
    }

    /// `lo` satisfies Armijo with the lower value; the minimizer lies between
    /// `lo` and `hi`.
    fn zoom(&mut self, mut lo: Trial, mut hi: Trial) -> Result<Option<Trial>> {
        for _ in 0..MAX_ZOOM {
            let (a, b) = (lo.alpha, hi.alpha);
            let width = b - a;
            let mut alpha = 0.5 * (a + b);
            if hi.f.is_finite() && lo.slope.is_finite() {
                // minimizer of the quadratic through (a, f_lo, slope_lo) and (b, f_hi)
                let denom = 2.0 * (hi.f - lo.f - lo.slope * width);
                if denom > 0.0 {
                    let q = a - lo.slope * width * width / denom;
                    let (min, max) = (a.min(b), a.max(b));
                    let margin = 0.1 * width.abs();
                    alpha = q.clamp(min + margin, max - margin);
                }
            }
            if (alpha - a).abs() < 1e-16 * a.abs().max(1.0) {
                break;
            }
            let t = self.eval(alpha)?;
            if !t.f.is_finite() || !self.armijo(&t) || t.f >= lo.f {
                hi = t;
            } else {
                if self.curvature(&t) {
                    return Ok(Some(t));
                }
                if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = t;
            }
        }
        Ok(if lo.alpha > 0.0 { Some(lo) } else { None })
    }
}

fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for k in 0..q.len() {
            q[k] -= a * y[k];
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for k in 0..q.len() {
            q[k] += (a - b) * s[k];
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(super) fn minimize(
    packer: &Packer,
    x0: Vec<f64>,
    data: &Dataset,
    config: &TrainConfig,
    memory_len: usize,
) -> Result<(Vec<f64>, TrainReport)> {
    let (mut f, mut g) = objective(packer, &x0, data)?;
    let mut x = x0;
    let mut tracker = Tracker::new(&x);
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory_len);
    let mut iteration = 0;
    let mut converged = false;
    tracker.record(&x, f, norm(&g));

    while iteration < config.max_iters {
        let gnorm = norm(&g);
        if gnorm < config.grad_tol {
            converged = true;
            break;
        }
        let mut d = two_loop(&g, &memory);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            memory.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let alpha0 = if memory.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };
        let mut ls = LineSearch {
            packer,
            data,
            x: &x,
            d: &d,
            f0: f,
            slope0: slope,
            failures: 0,
            consecutive_failures: 0,
        };
        let searched = ls.search(alpha0);
        tracker.report.rejected_steps += ls.failures;
        let found = match searched {
            // the curvature pairs can point out of the region where the Gram
            // factorizes; restart from steepest descent before giving up
            Err(Error::OptimizerAbort { reason, .. }) if !memory.is_empty() => {
                log::debug!("line search aborted ({reason}); clearing memory");
                memory.clear();
                continue;
            }
            Err(Error::OptimizerAbort { reason, .. }) => {
                return Err(Error::OptimizerAbort {
                    iterations: iteration,
                    reason,
                })
            }
            other => other?,
        };
        let Some(t) = found else {
            if memory.is_empty() {
                log::debug!("line search failed along steepest descent; stopping");
                break;
            }
            memory.clear();
            continue;
        };
        iteration += 1;
        let s: Vec<f64> = t.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = t.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm(&s) * norm(&y) {
            if memory.len() == memory_len {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        x = t.x;
        f = t.f;
        g = t.g;
        tracker.record(&x, f, norm(&g));
    }
    if !converged && norm(&g) < config.grad_tol {
        converged = true;
    }
    Ok(tracker.finish(iteration, converged))
}

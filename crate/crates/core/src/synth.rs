//! Synthetic benchmark: a nonstationary GP draw, its derivative and a delayed
//! copy, with the exact joint covariance as ground truth.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Input, Point};
use crate::error::{Error, Result};
use crate::gp::{build_gram_sym, posterior, sample_gaussian};
use crate::init::init_model;
use crate::io::{apply_masks, random_split, Mask};
use crate::kernel::{HsmComponent, HsmParams, KernelModel, Method};
use crate::metrics::{cmd, Metric, MetricReport, TrialFailure, OVERALL};
use crate::trainer::{optimize, TrainConfig};

/// Channel names of the synthetic set.
pub const CHANNELS: [&str; 3] = ["signal", "derivative", "delayed"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Inputs per channel, evenly spaced over `range`.
    pub n_points: usize,
    pub range: (f64, f64),
    pub generator: HsmParams,
    /// The third channel is `f(x - delay)`.
    pub delay: f64,
    /// Finite-difference step as a fraction of the range width.
    pub derivative_step: f64,
    pub mask_derivative: (f64, f64),
    pub mask_delayed: (f64, f64),
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let comp = |center: f64, mu: f64| HsmComponent {
            weight: 1.0,
            lengthscale: 10.0,
            center: vec![center],
            sigma: vec![0.25],
            mu: vec![mu],
        };
        Self {
            n_points: 500,
            range: (-20.0, 20.0),
            generator: HsmParams {
                components: vec![comp(-20.0, 1.5), comp(20.0, 4.0)],
            },
            delay: 2.0,
            derivative_step: 1e-4,
            mask_derivative: (-10.0, -5.0),
            mask_delayed: (-5.0, 5.0),
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.range;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::config("range", "must be a finite interval with lo < hi"));
        }
        if self.n_points < 2 {
            return Err(Error::config("n_points", "must be >= 2"));
        }
        self.generator
            .validate(1)
            .map_err(|e| Error::config("generator", e.to_string()))?;
        if !self.delay.is_finite() {
            return Err(Error::config("delay", "must be finite"));
        }
        if !(self.derivative_step > 0.0 && self.derivative_step < 0.1) {
            return Err(Error::config("derivative_step", "must be in (0, 0.1)"));
        }
        for (field, (a, b)) in [("mask_derivative", self.mask_derivative), ("mask_delayed", self.mask_delayed)] {
            if !(a <= b && a >= lo && b <= hi) {
                return Err(Error::config(field, "must be an ordered interval inside range"));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("train_fraction", "must be in (0, 1)"));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        self.derivative_step * (self.range.1 - self.range.0)
    }

    pub fn masks(&self) -> [Mask; 2] {
        [
            Mask {
                channel: 1,
                lo: self.mask_derivative.0,
                hi: self.mask_derivative.1,
            },
            Mask {
                channel: 2,
                lo: self.mask_delayed.0,
                hi: self.mask_delayed.1,
            },
        ]
    }

    /// All inputs, channel by channel.
    pub fn inputs(&self) -> Vec<Input> {
        let (lo, hi) = self.range;
        let n = self.n_points;
        (0..3)
            .flat_map(|c| (0..n).map(move |k| Input::new(c, vec![lo + (hi - lo) * k as f64 / (n - 1) as f64])))
            .collect()
    }
}

/// Joint covariance of `(f(x), f'(x), f(x - d))` for a generator kernel `k`.
#[derive(Debug, Clone)]
pub struct GroundTruth<'a> {
    pub generator: &'a HsmParams,
    pub delay: f64,
    /// Central-difference step for derivatives.
    pub step: f64,
}

impl GroundTruth<'_> {
    /// `(input shift, derivative order)` of a channel.
    fn channel(&self, c: usize) -> (f64, bool) {
        match c {
            0 => (0.0, false),
            1 => (0.0, true),
            _ => (self.delay, false),
        }
    }

    fn k(&self, a: f64, b: f64) -> f64 {
        self.generator.eval_unchecked(&[a], &[b])
    }

    /// Covariance between channel `i` at `x` and channel `j` at `xp`.
    pub fn cov(&self, i: usize, x: f64, j: usize, xp: f64) -> f64 {
        let (si, di) = self.channel(i);
        let (sj, dj) = self.channel(j);
        let (a, b, h) = (x - si, xp - sj, self.step);
        match (di, dj) {
            (false, false) => self.k(a, b),
            (true, false) => (self.k(a + h, b) - self.k(a - h, b)) / (2.0 * h),
            (false, true) => (self.k(a, b + h) - self.k(a, b - h)) / (2.0 * h),
            (true, true) => {
                (self.k(a + h, b + h) - self.k(a + h, b - h) - self.k(a - h, b + h) + self.k(a - h, b - h))
                    / (4.0 * h * h)
            }
        }
    }
}

/// Ground-truth Gram matrix over one-dimensional `inputs` on channels 0..3.
pub fn ground_truth_gram(generator: &HsmParams, delay: f64, step: f64, inputs: &[Input]) -> Result<DMatrix<f64>> {
    generator.validate(1)?;
    if let Some(bad) = inputs.iter().find(|p| p.channel > 2 || p.x.len() != 1) {
        return Err(Error::InvalidArgument(format!(
            "ground truth needs channels 0..3 and 1-D inputs, got channel {} with {} dims",
            bad.channel,
            bad.x.len()
        )));
    }
    let gt = GroundTruth { generator, delay, step };
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    for b in 0..n {
        for a in 0..=b {
            let v = gt.cov(inputs[a].channel, inputs[a].x[0], inputs[b].channel, inputs[b].x[0]);
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    Ok(k)
}

/// One synthetic realization.
#[derive(Debug, Clone)]
pub struct SynthData {
    /// Every sampled point, in [`SynthConfig::inputs`] order.
    pub all: Dataset,
    pub train: Dataset,
    pub test: Dataset,
    /// Points inside the masks, excluded from both splits.
    pub masked: Dataset,
    /// Ground truth over the inputs of `all`.
    pub gram: DMatrix<f64>,
}

impl SynthData {
    /// Test and masked points together: what a model is scored on.
    pub fn heldout(&self) -> Dataset {
        self.test.concat(&self.masked).expect("parts share channels")
    }
}

/// Sample the three channels jointly, remove the masked regions and split
/// the rest at random.
pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let inputs = config.inputs();
    let gram = ground_truth_gram(&config.generator, config.delay, config.step(), &inputs)?;
    let f = sample_gaussian(&gram, config.seed)?;
    let points = inputs
        .iter()
        .zip(f.iter())
        .map(|(inp, &y)| Point::new(inp.channel, inp.x.clone(), y))
        .collect();
    let all = Dataset::new(points, CHANNELS.iter().map(|s| s.to_string()).collect())?;
    let (pool, masked) = apply_masks(&all, &config.masks());
    let (train, test) = random_split(&pool, config.train_fraction, config.seed.wrapping_add(1))?;
    Ok(SynthData {
        all,
        train,
        test,
        masked,
        gram,
    })
}

/// Windows and components per window used for each method on this benchmark:
/// two spectral components in total everywhere.
pub fn benchmark_shape(method: Method) -> (usize, usize) {
    match method {
        Method::Mosm => (1, 2),
        Method::Mohsm | Method::Hsm | Method::HsmLmc => (2, 1),
    }
}

/// Posterior at one held-out point, in original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub x: f64,
    pub channel: usize,
    pub y_true: f64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub method: Method,
    pub cmd: f64,
    pub final_nll: f64,
    pub iterations: usize,
    pub wall_time: f64,
    #[serde(skip)]
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub report: MetricReport,
    pub trials: Vec<TrialRecord>,
}

impl BenchmarkResult {
    /// CMD of `method` per trial index; `None` where the trial failed.
    pub fn cmd_by_trial(&self, method: Method, trials: usize) -> Vec<Option<f64>> {
        (0..trials)
            .map(|t| self.trials.iter().find(|r| r.method == method && r.trial == t).map(|r| r.cmd))
            .collect()
    }
}

/// Gram matrix of `model` over the inputs of `data`, in the original units.
pub fn model_gram_original(model: &KernelModel, data: &Dataset) -> DMatrix<f64> {
    let inputs = data.inputs();
    let mut k = build_gram_sym(model, &inputs);
    let s = &data.normalization().scale;
    for a in 0..inputs.len() {
        for b in 0..inputs.len() {
            k[(a, b)] *= s[inputs[a].channel] * s[inputs[b].channel];
        }
    }
    k
}

fn run_trial(config: &SynthConfig, method: Method, trial: usize, train_cfg: &TrainConfig) -> Result<TrialRecord> {
    let start = Instant::now();
    let seed = config.seed.wrapping_add(trial as u64);
    let data = generate(&SynthConfig {
        seed,
        ..config.clone()
    })?;
    let train = data.train.renormalized(data.train.fit_normalization())?;
    let (p, q) = benchmark_shape(method);
    let init = init_model(method, &train, p, q)?;
    let (model, report) = optimize(&init, &train, train_cfg)?;
    let truth = ground_truth_gram(&config.generator, config.delay, config.step(), &train.inputs())?;
    let distance = cmd(&model_gram_original(&model, &train), &truth)?;

    let heldout = data.heldout();
    let post = posterior(&model, &train, &heldout.inputs(), false)?;
    let predictions = heldout
        .points()
        .iter()
        .zip(post.mean.iter().zip(&post.variance))
        .map(|(pt, (&mean, &variance))| Prediction {
            x: pt.x[0],
            channel: pt.channel,
            y_true: pt.y,
            mean,
            variance,
        })
        .collect();
    log::info!("trial {trial} {method}: cmd {distance:.4}");
    Ok(TrialRecord {
        trial,
        seed,
        method,
        cmd: distance,
        final_nll: report.final_nll,
        iterations: report.iterations,
        wall_time: start.elapsed().as_secs_f64(),
        predictions,
    })
}

/// Run `trials` realizations (seeds `config.seed + t`) for every method and
/// aggregate the CMD against the ground truth over training inputs. Failed
/// trials are recorded in the report instead of aborting the run.
pub fn run_benchmark(
    config: &SynthConfig,
    methods: &[Method],
    trials: usize,
    train_cfg: &TrainConfig,
) -> Result<BenchmarkResult> {
    config.validate()?;
    if trials == 0 {
        return Err(Error::config("trials", "must be >= 1"));
    }
    let mut result = BenchmarkResult::default();
    for &method in methods {
        let mut values = Vec::new();
        for trial in 0..trials {
            match run_trial(config, method, trial, train_cfg) {
                Ok(rec) => {
                    values.push(rec.cmd);
                    result.trials.push(rec);
                }
                Err(e) => {
                    log::warn!("trial {trial} {method} failed: {e}");
                    result.report.failures.push(TrialFailure {
                        method: method.to_string(),
                        trial,
                        reason: e.to_string(),
                    });
                }
            }
        }
        result.report.push(method.as_str(), Metric::Cmd, OVERALL, &values);
    }
    Ok(result)
}

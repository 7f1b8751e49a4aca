//! Evaluation metrics and their aggregation across trials.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Correlation matrix distance `1 - tr(K1 K2) / (|K1|_F |K2|_F)`.
pub fn cmd(k1: &DMatrix<f64>, k2: &DMatrix<f64>) -> Result<f64> {
    if k1.shape() != k2.shape() || k1.nrows() != k1.ncols() {
        return Err(Error::Metric {
            metric: "cmd",
            reason: format!("shapes {:?} and {:?} must be equal and square", k1.shape(), k2.shape()),
        });
    }
    let (n1, n2) = (k1.norm(), k2.norm());
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::Metric {
            metric: "cmd",
            reason: "zero matrix".into(),
        });
    }
    // tr(K1 K2) = sum_ab K1[a,b] K2[b,a]
    let trace = k1.component_mul(&k2.transpose()).sum();
    Ok(1.0 - trace / (n1 * n2))
}

fn check_pair(metric: &'static str, y_true: &[f64], y_pred: &[f64]) -> Result<()> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Metric {
            metric,
            reason: format!("length mismatch: {} vs {}", y_true.len(), y_pred.len()),
        });
    }
    if y_true.is_empty() {
        return Err(Error::Metric {
            metric,
            reason: "empty input".into(),
        });
    }
    Ok(())
}

/// Mean absolute percentage error, in percent.
pub fn mape(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair("mape", y_true, y_pred)?;
    if let Some(k) = y_true.iter().position(|&v| v == 0.0) {
        return Err(Error::Metric {
            metric: "mape",
            reason: format!("y_true[{k}] is zero"),
        });
    }
    let s: f64 = y_true.iter().zip(y_pred).map(|(t, p)| ((t - p) / t).abs()).sum();
    Ok(100.0 * s / y_true.len() as f64)
}

pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair("rmse", y_true, y_pred)?;
    let s: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok((s / y_true.len() as f64).sqrt())
}

pub fn mae(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair("mae", y_true, y_pred)?;
    let s: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p).abs()).sum();
    Ok(s / y_true.len() as f64)
}

/// MAE divided by the range of `y_true`.
pub fn nmae(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair("nmae", y_true, y_pred)?;
    let (lo, hi) = y_true
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return Err(Error::Metric {
            metric: "nmae",
            reason: "y_true is constant".into(),
        });
    }
    Ok(mae(y_true, y_pred)? / (hi - lo))
}

/// Summed negative log predictive density of independent Gaussians with the
/// given means and predictive variances.
pub fn heldout_nll(y_true: &[f64], mean: &[f64], variance: &[f64]) -> Result<f64> {
    check_pair("nll", y_true, mean)?;
    check_pair("nll", y_true, variance)?;
    if let Some(k) = variance.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Metric {
            metric: "nll",
            reason: format!("predictive variance {k} is not positive"),
        });
    }
    Ok(y_true
        .iter()
        .zip(mean)
        .zip(variance)
        .map(|((y, m), v)| 0.5 * ((2.0 * PI * v).ln() + (y - m) * (y - m) / v))
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cmd,
    Mape,
    Rmse,
    Mae,
    Nmae,
    Nll,
}

impl Metric {
    pub const ALL: [Metric; 6] = [Metric::Cmd, Metric::Mape, Metric::Rmse, Metric::Mae, Metric::Nmae, Metric::Nll];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Cmd => "cmd",
            Metric::Mape => "mape",
            Metric::Rmse => "rmse",
            Metric::Mae => "mae",
            Metric::Nmae => "nmae",
            Metric::Nll => "nll",
        }
    }

    /// Pointwise metrics computed from predictions; `cmd` needs Gram matrices.
    pub fn is_pointwise(self) -> bool {
        self != Metric::Cmd
    }

    /// Evaluate a pointwise metric. `variance` is the predictive variance and
    /// is only read by `nll`.
    pub fn eval(self, y_true: &[f64], mean: &[f64], variance: &[f64]) -> Result<f64> {
        match self {
            Metric::Mape => mape(y_true, mean),
            Metric::Rmse => rmse(y_true, mean),
            Metric::Mae => mae(y_true, mean),
            Metric::Nmae => nmae(y_true, mean),
            Metric::Nll => heldout_nll(y_true, mean, variance),
            Metric::Cmd => Err(Error::Metric {
                metric: "cmd",
                reason: "needs Gram matrices, not predictions".into(),
            }),
        }
    }

    /// Whether the overall value is the mean of the per-channel values rather
    /// than the metric over all points pooled.
    pub fn overall_is_channel_mean(self) -> bool {
        self == Metric::Nmae
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric `{s}`")))
    }
}

/// Parse a comma-separated metric list.
pub fn parse_metric_list(s: &str) -> Result<Vec<Metric>> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(str::parse).collect()
}

/// Channel label used for values over all channels.
pub const OVERALL: &str = "overall";

/// Mean and sample standard deviation (`N - 1` denominator; zero for a single
/// value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// One aggregated metric value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub metric: String,
    pub channel: String,
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
}

/// A trial that did not produce metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub method: String,
    pub trial: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    #[serde(default)]
    pub failures: Vec<TrialFailure>,
}

impl MetricReport {
    /// Add a row aggregating `values`, one per trial.
    pub fn push(&mut self, method: &str, metric: Metric, channel: &str, values: &[f64]) {
        let (mean, std) = mean_std(values);
        self.rows.push(MetricRow {
            method: method.to_string(),
            metric: metric.as_str().to_string(),
            channel: channel.to_string(),
            mean,
            std,
            trials: values.len(),
        });
    }

    pub fn find(&self, method: &str, metric: Metric, channel: &str) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.metric == metric.as_str() && r.channel == channel)
    }

    /// True when any trial failed.
    pub fn incomplete(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// Per-channel and overall values of `metric` for one set of predictions.
/// Channels without points are skipped. Returns `(channel name, value)`
/// pairs with the overall value last.
pub fn per_channel(
    metric: Metric,
    channel_names: &[String],
    channels: &[usize],
    y_true: &[f64],
    mean: &[f64],
    variance: &[f64],
) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (c, name) in channel_names.iter().enumerate() {
        let idx: Vec<usize> = (0..channels.len()).filter(|&k| channels[k] == c).collect();
        if idx.is_empty() {
            continue;
        }
        let pick = |v: &[f64]| idx.iter().map(|&k| v[k]).collect::<Vec<f64>>();
        let var = if variance.is_empty() { Vec::new() } else { pick(variance) };
        out.push((name.clone(), metric.eval(&pick(y_true), &pick(mean), &var)?));
    }
    let overall = if metric.overall_is_channel_mean() {
        if out.is_empty() {
            return Err(Error::Metric {
                metric: "nmae",
                reason: "no points".into(),
            });
        }
        out.iter().map(|(_, v)| v).sum::<f64>() / out.len() as f64
    } else {
        metric.eval(y_true, mean, variance)?
    };
    out.push((OVERALL.to_string(), overall));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cmd_identity_vs_ones() {
        let i = DMatrix::<f64>::identity(2, 2);
        let j = DMatrix::from_element(2, 2, 1.0);
        let expect = 1.0 - 2.0 / (2f64.sqrt() * 2.0);
        assert!((cmd(&i, &j).unwrap() - expect).abs() < 1e-12);
        assert!((expect - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn cmd_of_identical_matrices_is_zero() {
        let k = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert!(cmd(&k, &k).unwrap().abs() < 1e-15);
    }

    #[test]
    fn cmd_rejects_zero_and_mismatched() {
        let z = DMatrix::<f64>::zeros(2, 2);
        let i = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(cmd(&z, &i), Err(Error::Metric { metric: "cmd", .. })));
        assert!(cmd(&i, &DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn pointwise_examples() {
        assert_eq!(mape(&[100.0], &[101.0]).unwrap(), 1.0);
        assert_eq!(mape(&[3.0, -2.0], &[3.0, -2.0]).unwrap(), 0.0);
        assert!(mape(&[0.0, 1.0], &[0.0, 1.0]).is_err());
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(rmse(&[], &[]).is_err());
        assert_eq!(nmae(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(nmae(&[0.0, 2.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert!(nmae(&[1.0, 1.0], &[0.0, 2.0]).is_err());
    }

    #[test]
    fn heldout_nll_of_standard_normal_at_mean() {
        let v = heldout_nll(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!((v - (2.0 * PI).ln()).abs() < 1e-14);
        assert!(heldout_nll(&[0.0], &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn std_uses_sample_denominator() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn nmae_overall_is_channel_mean() {
        let names = vec!["a".to_string(), "b".to_string()];
        let ch = [0, 0, 1, 1, 1];
        let y = [0.0, 2.0, 0.0, 4.0, 1.0];
        let p = [1.0, 1.0, 0.0, 4.0, 2.0];
        let vals = per_channel(Metric::Nmae, &names, &ch, &y, &p, &[]).unwrap();
        assert_eq!(vals[0], ("a".into(), 0.5));
        let b = (1.0 / 3.0) / 4.0;
        assert!((vals[1].1 - b).abs() < 1e-15);
        assert_eq!(vals[2].0, OVERALL);
        assert!((vals[2].1 - (0.5 + b) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn report_json_keys() {
        let mut r = MetricReport::default();
        r.push("mohsm", Metric::Cmd, OVERALL, &[0.4, 0.5]);
        let v = serde_json::to_value(&r).unwrap();
        let row = v["rows"][0].as_object().unwrap();
        let mut keys: Vec<&str> = row.keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(keys, ["channel", "mean", "method", "metric", "std", "trials"]);
        assert_eq!(row["trials"], 2);
    }

    #[test]
    fn metric_names_parse() {
        assert_eq!(parse_metric_list("mape, RMSE,nmae").unwrap(), vec![Metric::Mape, Metric::Rmse, Metric::Nmae]);
        assert!(parse_metric_list("mape,bogus").is_err());
    }

    fn symmetric(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-3.0..3.0f64, n * n).prop_map(move |v| {
            let a = DMatrix::from_vec(n, n, v);
            &a + a.transpose()
        })
    }

    proptest! {
        #[test]
        fn cmd_bounds_scale_and_symmetry(a in symmetric(4), b in symmetric(4), c in 0.01..100.0f64) {
            prop_assume!(a.norm() > 1e-6 && b.norm() > 1e-6);
            let d = cmd(&a, &b).unwrap();
            prop_assert!((-1e-12..=2.0 + 1e-12).contains(&d));
            prop_assert!((d - cmd(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!(cmd(&a, &(&a * c)).unwrap().abs() < 1e-12);
        }

        #[test]
        fn rmse_dominates_mae(pairs in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 1..30)) {
            let (t, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (r, m) = (rmse(&t, &p).unwrap(), mae(&t, &p).unwrap());
            prop_assert!(m >= 0.0);
            prop_assert!(r >= m - 1e-12);
        }
    }
}

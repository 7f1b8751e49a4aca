//! Multi-output observations and per-channel normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A location on one output channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Input {
    pub channel: usize,
    pub x: Vec<f64>,
}

impl Input {
    pub fn new(channel: usize, x: Vec<f64>) -> Self {
        Self { channel, x }
    }
}

/// One observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub channel: usize,
    pub x: Vec<f64>,
    pub y: f64,
}

impl Point {
    pub fn new(channel: usize, x: Vec<f64>, y: f64) -> Self {
        Self { channel, x, y }
    }

    pub fn input(&self) -> Input {
        Input::new(self.channel, self.x.clone())
    }
}

/// Per-channel affine map between model units and original units:
/// `original = mean + scale * model`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(n_channels: usize) -> Self {
        Self {
            mean: vec![0.0; n_channels],
            scale: vec![1.0; n_channels],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.mean.iter().all(|&m| m == 0.0) && self.scale.iter().all(|&s| s == 1.0)
    }

    pub fn to_original(&self, channel: usize, y: f64) -> f64 {
        self.mean[channel] + self.scale[channel] * y
    }

    pub fn to_model(&self, channel: usize, y: f64) -> f64 {
        (y - self.mean[channel]) / self.scale[channel]
    }

    fn validate(&self, n_channels: usize) -> Result<()> {
        if self.mean.len() != n_channels || self.scale.len() != n_channels {
            return Err(Error::DimensionMismatch("normalization needs one entry per channel".into()));
        }
        if self.scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParameter("normalization scales must be finite and > 0".into()));
        }
        Ok(())
    }
}

/// Flat list of observations across `M` channels.
///
/// `y` values are stored in model units; [`Dataset::normalization`] maps them
/// back to the units the data were loaded in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    points: Vec<Point>,
    channel_names: Vec<String>,
    normalization: Normalization,
}

impl Dataset {
    pub fn new(points: Vec<Point>, channel_names: Vec<String>) -> Result<Self> {
        let m = channel_names.len();
        Self::with_normalization(points, channel_names, Normalization::identity(m))
    }

    pub fn with_normalization(
        points: Vec<Point>,
        channel_names: Vec<String>,
        normalization: Normalization,
    ) -> Result<Self> {
        let m = channel_names.len();
        if m == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one channel".into()));
        }
        normalization.validate(m)?;
        let dim = points.first().map(|p| p.x.len());
        for (k, p) in points.iter().enumerate() {
            if p.channel >= m {
                return Err(Error::InvalidArgument(format!(
                    "point {k}: channel {} out of range (M = {m})",
                    p.channel
                )));
            }
            if Some(p.x.len()) != dim || p.x.is_empty() {
                return Err(Error::DimensionMismatch(format!("point {k}: inconsistent input dimension")));
            }
            if !p.y.is_finite() || p.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("point {k}: non-finite value")));
            }
        }
        Ok(Self {
            points,
            channel_names,
            normalization,
        })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    /// Input dimension; zero for an empty dataset.
    pub fn input_dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.x.len())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn inputs(&self) -> Vec<Input> {
        self.points.iter().map(Point::input).collect()
    }

    /// Targets in model units.
    pub fn targets(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.y).collect()
    }

    /// Targets in original units.
    pub fn original_targets(&self) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| self.normalization.to_original(p.channel, p.y))
            .collect()
    }

    pub fn channel_points(&self, channel: usize) -> impl Iterator<Item = &Point> {
        self.points.iter().filter(move |p| p.channel == channel)
    }

    pub fn channel_len(&self, channel: usize) -> usize {
        self.channel_points(channel).count()
    }

    /// Per-dimension `[min, max]` of the inputs.
    pub fn input_range(&self) -> Option<Vec<(f64, f64)>> {
        let first = self.points.first()?;
        let mut r: Vec<(f64, f64)> = first.x.iter().map(|&v| (v, v)).collect();
        for p in &self.points {
            for (d, &v) in p.x.iter().enumerate() {
                r[d].0 = r[d].0.min(v);
                r[d].1 = r[d].1.max(v);
            }
        }
        Some(r)
    }

    /// Same channels and normalization, different points.
    pub fn with_points(&self, points: Vec<Point>) -> Result<Self> {
        Self::with_normalization(points, self.channel_names.clone(), self.normalization.clone())
    }

    /// Split into `(rejected, selected)` by `select(index, point)`, keeping
    /// order within each part.
    pub fn partition<F: FnMut(usize, &Point) -> bool>(&self, mut select: F) -> (Self, Self) {
        let (mut keep, mut take) = (Vec::new(), Vec::new());
        for (k, p) in self.points.iter().enumerate() {
            if select(k, p) {
                take.push(p.clone());
            } else {
                keep.push(p.clone());
            }
        }
        let part = |points| Self {
            points,
            channel_names: self.channel_names.clone(),
            normalization: self.normalization.clone(),
        };
        (part(keep), part(take))
    }

    /// Concatenation of two datasets over the same channels, in original
    /// units when their normalizations differ.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if self.channel_names != other.channel_names {
            return Err(Error::InvalidArgument("datasets have different channels".into()));
        }
        let other = other.renormalized(self.normalization.clone())?;
        let mut points = self.points.clone();
        points.extend(other.points);
        self.with_points(points)
    }

    /// z-score statistics of each channel, in original units. Channels with
    /// fewer than two points or zero spread get scale 1.
    pub fn fit_normalization(&self) -> Normalization {
        let m = self.n_channels();
        let mut norm = Normalization::identity(m);
        for c in 0..m {
            let ys: Vec<f64> = self
                .channel_points(c)
                .map(|p| self.normalization.to_original(c, p.y))
                .collect();
            if ys.is_empty() {
                continue;
            }
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            norm.mean[c] = mean;
            if ys.len() > 1 {
                let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (ys.len() - 1) as f64;
                if var > 0.0 {
                    norm.scale[c] = var.sqrt();
                }
            }
        }
        norm
    }

    /// Re-express the targets under `normalization`.
    pub fn renormalized(&self, normalization: Normalization) -> Result<Self> {
        normalization.validate(self.n_channels())?;
        let points = self
            .points
            .iter()
            .map(|p| {
                let orig = self.normalization.to_original(p.channel, p.y);
                Point::new(p.channel, p.x.clone(), normalization.to_model(p.channel, orig))
            })
            .collect();
        Ok(Self {
            points,
            channel_names: self.channel_names.clone(),
            normalization,
        })
    }

    /// Targets back in original units with identity normalization.
    pub fn denormalized(&self) -> Self {
        self.renormalized(Normalization::identity(self.n_channels()))
            .expect("identity normalization is valid")
    }
}

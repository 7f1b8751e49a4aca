//! CSV ingestion and export, missing-region masks, experiment configuration
//! and a cached HTTP fetcher.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Point};
use crate::error::{Error, Result};
use crate::kernel::{KernelModel, Method};
use crate::trainer::TrainConfig;

/// CSV shape.
///
/// * `long`: header `channel,x[,x1,...],y`, one observation per row.
/// * `wide`: header `x,<channel>,<channel>,...`, one input per row; empty
///   cells are missing observations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsvLayout {
    #[default]
    Long,
    Wide,
}

/// How to read a CSV file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub layout: CsvLayout,
    /// Channels to keep, in this order. `None` keeps every channel in order
    /// of appearance.
    pub channels: Option<Vec<String>>,
}

impl CsvSchema {
    pub fn long() -> Self {
        Self::default()
    }

    pub fn wide() -> Self {
        Self {
            layout: CsvLayout::Wide,
            channels: None,
        }
    }
}

fn parse_err(path: &Path, line: u64, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        reason: reason.into(),
    }
}

fn parse_number(path: &Path, line: u64, column: &str, cell: &str) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("column `{column}`: `{cell}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("column `{column}`: non-finite value")));
    }
    Ok(v)
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Csv(e),
        _ => parse_err(path, line, e.to_string()),
    }
}

/// Read observations from `path`. Rows keep their file order; in the wide
/// layout points are emitted row by row, channels left to right.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    match schema.layout {
        CsvLayout::Long => load_long(path, schema.channels.as_deref()),
        CsvLayout::Wide => load_wide(path, schema.channels.as_deref()),
    }
}

fn load_long(path: &Path, wanted: Option<&[String]>) -> Result<Dataset> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    if header.len() < 3 {
        return Err(parse_err(path, 1, "long layout needs columns channel, x..., y"));
    }
    let n_inputs = header.len() - 2;
    let mut names: Vec<String> = wanted.map(<[String]>::to_vec).unwrap_or_default();
    let mut index: HashMap<String, usize> = names.iter().enumerate().map(|(k, n)| (n.clone(), k)).collect();
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let name = rec[0].trim();
        if name.is_empty() {
            return Err(parse_err(path, line, "empty channel"));
        }
        let channel = match index.get(name) {
            Some(&c) => c,
            None if wanted.is_some() => {
                return Err(parse_err(path, line, format!("unknown channel `{name}`")));
            }
            None => {
                names.push(name.to_string());
                index.insert(name.to_string(), names.len() - 1);
                names.len() - 1
            }
        };
        let x = (0..n_inputs)
            .map(|d| parse_number(path, line, &header[1 + d], &rec[1 + d]))
            .collect::<Result<Vec<f64>>>()?;
        let y = parse_number(path, line, &header[n_inputs + 1], &rec[n_inputs + 1])?;
        points.push(Point::new(channel, x, y));
    }
    if names.is_empty() {
        return Err(parse_err(path, 1, "no observations"));
    }
    Dataset::new(points, names)
}

fn load_wide(path: &Path, wanted: Option<&[String]>) -> Result<Dataset> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    if header.len() < 2 {
        return Err(parse_err(path, 1, "wide layout needs columns x, channel..."));
    }
    let columns: Vec<(usize, usize)> = match wanted {
        Some(names) => names
            .iter()
            .enumerate()
            .map(|(c, n)| {
                header[1..]
                    .iter()
                    .position(|h| h.trim() == n)
                    .map(|k| (k + 1, c))
                    .ok_or_else(|| parse_err(path, 1, format!("unknown channel `{n}`")))
            })
            .collect::<Result<_>>()?,
        None => (1..header.len()).map(|k| (k, k - 1)).collect(),
    };
    let names: Vec<String> = match wanted {
        Some(n) => n.to_vec(),
        None => header[1..].iter().map(|h| h.trim().to_string()).collect(),
    };
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let x = parse_number(path, line, &header[0], &rec[0])?;
        let mut row: Vec<Point> = Vec::new();
        for &(k, c) in &columns {
            if rec[k].trim().is_empty() {
                continue;
            }
            row.push(Point::new(c, vec![x], parse_number(path, line, &header[k], &rec[k])?));
        }
        row.sort_by_key(|p| p.channel);
        points.extend(row);
    }
    Dataset::new(points, names)
}

/// Shortest representation that parses back to the same `f64`.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Write `data` in original units. The wide layout needs one-dimensional
/// inputs and at most one observation per (channel, x).
pub fn save_csv(data: &Dataset, path: &Path, layout: CsvLayout) -> Result<()> {
    let data = data.denormalized();
    let mut w = writer(path)?;
    let names = data.channel_names();
    match layout {
        CsvLayout::Long => {
            let dim = data.input_dim();
            let mut header = vec!["channel".to_string()];
            if dim <= 1 {
                header.push("x".into());
            } else {
                header.extend((0..dim).map(|d| format!("x{d}")));
            }
            header.push("y".into());
            w.write_record(&header)?;
            for p in data.points() {
                let mut row = vec![names[p.channel].clone()];
                row.extend(p.x.iter().map(|&v| fmt_f64(v)));
                row.push(fmt_f64(p.y));
                w.write_record(&row)?;
            }
        }
        CsvLayout::Wide => {
            if data.input_dim() > 1 {
                return Err(Error::Unsupported("wide CSV needs one-dimensional inputs".into()));
            }
            let mut rows: Vec<(f64, Vec<Option<f64>>)> = Vec::new();
            let mut row_of: HashMap<u64, usize> = HashMap::new();
            for p in data.points() {
                let x = p.x[0];
                let r = *row_of.entry(x.to_bits()).or_insert_with(|| {
                    rows.push((x, vec![None; names.len()]));
                    rows.len() - 1
                });
                if rows[r].1[p.channel].replace(p.y).is_some() {
                    return Err(Error::InvalidArgument(format!(
                        "channel `{}` has two observations at x = {x}",
                        names[p.channel]
                    )));
                }
            }
            let mut header = vec!["x".to_string()];
            header.extend(names.iter().cloned());
            w.write_record(&header)?;
            for (x, ys) in rows {
                let mut row = vec![fmt_f64(x)];
                row.extend(ys.iter().map(|y| y.map(fmt_f64).unwrap_or_default()));
                w.write_record(&row)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Closed interval `[lo, hi]` on the first input dimension of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub channel: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Mask {
    pub fn contains(&self, p: &Point) -> bool {
        p.channel == self.channel && p.x[0] >= self.lo && p.x[0] <= self.hi
    }
}

/// Split into `(train_pool, heldout)`: points inside any mask of their
/// channel are held out.
pub fn apply_masks(data: &Dataset, masks: &[Mask]) -> (Dataset, Dataset) {
    data.partition(|_, p| masks.iter().any(|m| m.contains(p)))
}

/// Random `(train, test)` split with `round(fraction * len)` training points.
/// Order within each part follows `data`.
pub fn random_split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::config("train_fraction", "must be in (0, 1]"));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * data.len() as f64).round() as usize;
    let mut is_train = vec![false; data.len()];
    idx[..n_train].iter().for_each(|&k| is_train[k] = true);
    let (test, train) = data.partition(|k, _| is_train[k]);
    Ok((train, test))
}

/// Data file reference inside an [`ExperimentConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    pub path: PathBuf,
    #[serde(default)]
    pub layout: CsvLayout,
    #[serde(default)]
    pub channels: Option<Vec<String>>,
}

impl DataSource {
    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            layout: self.layout,
            channels: self.channels.clone(),
        }
    }
}

/// Held-out interval of a named channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMask {
    pub channel: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Fraction of unmasked points used for training; the rest join the
    /// held-out set.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 1.0,
            seed: 0,
        }
    }
}

fn default_one() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// One training/evaluation run, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub method: Method,
    /// Windows (input shifts).
    #[serde(default = "default_one")]
    pub p: usize,
    /// Components per window.
    #[serde(default = "default_one")]
    pub q: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub masks: Vec<NamedMask>,
    #[serde(default)]
    pub split: SplitConfig,
    /// z-score each channel with training statistics.
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parse and validate; relative paths are resolved against the config
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::config("<document>", e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.data.path.is_relative() {
            cfg.data.path = base.join(&cfg.data.path);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::config("p", "must be >= 1"));
        }
        if self.q == 0 {
            return Err(Error::config("q", "must be >= 1"));
        }
        for (k, m) in self.masks.iter().enumerate() {
            if !(m.lo <= m.hi) {
                return Err(Error::config(format!("masks[{k}]"), "lo must be <= hi"));
            }
        }
        let f = self.split.train_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::config("split.train_fraction", "must be in (0, 1]"));
        }
        if !(self.train.grad_tol >= 0.0) {
            return Err(Error::config("train.grad_tol", "must be >= 0"));
        }
        Ok(())
    }

    /// Masks with channel names resolved against `data`.
    pub fn resolve_masks(&self, data: &Dataset) -> Result<Vec<Mask>> {
        self.masks
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let channel = data
                    .channel_names()
                    .iter()
                    .position(|n| n == &m.channel)
                    .ok_or_else(|| Error::config(format!("masks[{k}].channel"), format!("unknown channel `{}`", m.channel)))?;
                Ok(Mask {
                    channel,
                    lo: m.lo,
                    hi: m.hi,
                })
            })
            .collect()
    }
}

/// A trained model together with the (normalized) data it was trained on,
/// which the posterior needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: KernelModel,
    pub training_data: Dataset,
}

impl TrainedModel {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let d = &self.training_data;
        Dataset::with_normalization(d.points().to_vec(), d.channel_names().to_vec(), d.normalization().clone())?;
        if self.model.n_channels() != self.training_data.n_channels() {
            return Err(Error::DimensionMismatch(format!(
                "model has {} channels, training data {}",
                self.model.n_channels(),
                self.training_data.n_channels()
            )));
        }
        if !self.training_data.is_empty() && self.training_data.input_dim() != self.model.input_dim() {
            return Err(Error::DimensionMismatch("model and training data input dimensions differ".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let out: TrainedModel = serde_json::from_str(&text)?;
        out.validate()?;
        Ok(out)
    }
}

/// Environment variable naming the download cache directory.
pub const CACHE_DIR_ENV: &str = "MOHSM_CACHE_DIR";

pub fn default_cache_dir() -> PathBuf {
    std::env::var_os(CACHE_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".mohsm-cache"))
}

/// Failure of one HTTP request.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportError {
    pub status: Option<u16>,
    pub message: String,
}

/// Blocking HTTP GET.
pub trait Transport {
    fn get(&self, url: &str) -> std::result::Result<Vec<u8>, TransportError>;
}

/// [`Transport`] over `ureq`, following redirects.
#[derive(Debug, Default, Clone, Copy)]
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn get(&self, url: &str) -> std::result::Result<Vec<u8>, TransportError> {
        match ureq::get(url).call() {
            Ok(mut resp) => resp.body_mut().read_to_vec().map_err(|e| TransportError {
                status: None,
                message: e.to_string(),
            }),
            Err(ureq::Error::StatusCode(code)) => Err(TransportError {
                status: Some(code),
                message: format!("HTTP {code}"),
            }),
            Err(e) => Err(TransportError {
                status: None,
                message: e.to_string(),
            }),
        }
    }
}

/// A downloadable series, cached under `file_name`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSource {
    pub url: String,
    pub file_name: String,
}

#[derive(Debug, Clone)]
pub struct FetchOptions {
    pub attempts: usize,
    pub backoff: Duration,
}

impl Default for FetchOptions {
    fn default() -> Self {
        Self {
            attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

/// Path of the cached copy of `source`, downloading it first when absent.
pub fn fetch_series(
    source: &SeriesSource,
    cache_dir: &Path,
    transport: &dyn Transport,
    options: &FetchOptions,
) -> Result<PathBuf> {
    if source.file_name.is_empty() || source.file_name.contains(['/', '\\']) {
        return Err(Error::InvalidArgument(format!("bad cache file name `{}`", source.file_name)));
    }
    let target = cache_dir.join(&source.file_name);
    if target.is_file() {
        log::debug!("cache hit for {}", source.url);
        return Ok(target);
    }
    let mut last = TransportError {
        status: None,
        message: "no attempt made".into(),
    };
    for attempt in 1..=options.attempts {
        match transport.get(&source.url) {
            Ok(body) => {
                fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
                let tmp = cache_dir.join(format!(".{}.part", source.file_name));
                fs::write(&tmp, &body).map_err(|e| Error::io(&tmp, e))?;
                fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))?;
                return Ok(target);
            }
            Err(e) => {
                log::warn!("fetch {} attempt {attempt}/{} failed: {}", source.url, options.attempts, e.message);
                last = e;
                if attempt < options.attempts {
                    std::thread::sleep(options.backoff);
                }
            }
        }
    }
    Err(Error::Fetch {
        url: source.url.clone(),
        attempts: options.attempts,
        status: last.status,
        reason: last.message,
    })
}

//! Data-driven starting points: equidistant windows, windowed Lomb-Scargle
//! periodograms and peak picking.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gp::factorize_training;
use crate::kernel::{
    ChannelSpectralParams, HsmComponent, HsmModel, HsmParams, KernelModel, KernelSpec, LmcModel, Method,
    MixtureComponent, ShiftGroup,
};

/// Greedy peak suppression radius, in grid bins.
pub const SUPPRESSION_BINS: usize = 2;
/// Oversampling of the frequency grid relative to `1 / range`.
pub const OVERSAMPLING: f64 = 4.0;
/// Peaks weaker than this fraction of the strongest one are ignored.
pub const MIN_RELATIVE_PEAK: f64 = 0.02;
/// Window widenings tried by [`init_model`] before giving up.
pub const MAX_WIDENINGS: usize = 30;

/// Power spectrum estimate of one channel in one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodogramResult {
    /// Angular frequencies, strictly increasing.
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
    pub window_id: usize,
}

/// Window centers and the initial frequency-domain lengthscale.
///
/// Centers are equidistant along the diagonal of the input box, endpoints
/// included; the lengthscale is the inverse of the center spacing (of the
/// half-diagonal when `p == 1`).
pub fn place_centers(input_range: &[(f64, f64)], p: usize) -> Result<(Vec<Vec<f64>>, f64)> {
    if p < 1 {
        return Err(Error::InvalidArgument("need at least one window".into()));
    }
    if input_range.is_empty() || input_range.iter().any(|(a, b)| !(b > a) || !a.is_finite() || !b.is_finite()) {
        return Err(Error::InvalidArgument("input range must satisfy min < max in every dimension".into()));
    }
    let diag = input_range.iter().map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
    if p == 1 {
        let c = input_range.iter().map(|(a, b)| 0.5 * (a + b)).collect();
        return Ok((vec![c], 2.0 / diag));
    }
    let centers = (0..p)
        .map(|k| {
            let t = k as f64 / (p - 1) as f64;
            input_range.iter().map(|(a, b)| a + t * (b - a)).collect()
        })
        .collect();
    Ok((centers, (p - 1) as f64 / diag))
}

/// Angular frequency grid `2 pi k / (4 T)` up to the median-spacing Nyquist rate.
pub fn frequency_grid(x: &[f64]) -> Result<Vec<f64>> {
    let mut xs: Vec<f64> = x.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let span = xs.last().copied().unwrap_or(0.0) - xs.first().copied().unwrap_or(0.0);
    if xs.len() < 4 || !(span > 0.0) {
        return Err(Error::Degenerate("need at least four distinct input locations".into()));
    }
    let mut gaps: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).filter(|g| *g > 0.0).collect();
    gaps.sort_by(|a, b| a.total_cmp(b));
    let median = gaps[gaps.len() / 2];
    let nyquist = 1.0 / (2.0 * median);
    let df = 1.0 / (OVERSAMPLING * span);
    let k_max = (nyquist / df).floor() as usize;
    Ok((1..=k_max.max(1)).map(|k| 2.0 * PI * df * k as f64).collect())
}

/// Lomb-Scargle periodogram at angular frequencies `freq_grid`, normalized by
/// twice the mean square of `y`. The mean is not removed, so a constant
/// signal shows up as low-frequency power.
pub fn lomb_scargle(x: &[f64], y: &[f64], freq_grid: &[f64]) -> Result<PeriodogramResult> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch("x and y lengths differ".into()));
    }
    if x.len() < 4 {
        return Err(Error::Degenerate("periodogram needs at least four points".into()));
    }
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::Degenerate("all input locations are equal".into()));
    }
    if freq_grid.windows(2).any(|w| !(w[1] > w[0])) || freq_grid.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidArgument("frequency grid must be positive and strictly increasing".into()));
    }
    let msq = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
    if !(msq > 0.0) {
        return Err(Error::Degenerate("signal is identically zero".into()));
    }
    let n = x.len() as f64;
    let power = freq_grid
        .iter()
        .map(|&w| {
            let (mut s2, mut c2) = (0.0, 0.0);
            for &t in x {
                let (s, c) = (2.0 * w * t).sin_cos();
                s2 += s;
                c2 += c;
            }
            let tau = 0.5 * s2.atan2(c2) / w;
            let (mut yc, mut ys, mut cc, mut ss) = (0.0, 0.0, 0.0, 0.0);
            for (&t, &v) in x.iter().zip(y) {
                let (s, c) = (w * (t - tau)).sin_cos();
                yc += v * c;
                ys += v * s;
                cc += c * c;
                ss += s * s;
            }
            let mut p = 0.0;
            if cc > 1e-12 * n {
                p += yc * yc / cc;
            }
            if ss > 1e-12 * n {
                p += ys * ys / ss;
            }
            p / (2.0 * msq)
        })
        .collect();
    Ok(PeriodogramResult {
        freqs: freq_grid.to_vec(),
        power,
        window_id: 0,
    })
}

/// A spectral peak: angular frequency, power and half-width at half-maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub freq: f64,
    pub power: f64,
    pub hwhm: f64,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s[s.len() / 2]
}

/// Up to `q` dominant, well-separated peaks, strongest first.
///
/// A local maximum qualifies when it exceeds both `MIN_RELATIVE_PEAK` of the
/// strongest one and the level `(median / ln 2)(ln K + 3)` that exponential
/// noise with the periodogram's median exceeds with probability about `e^-3`
/// over `K` bins.
pub fn pick_peaks(pg: &PeriodogramResult, q: usize) -> Vec<Peak> {
    let k = pg.power.len();
    if k == 0 || q == 0 {
        return Vec::new();
    }
    let noise_level = median(&pg.power) / std::f64::consts::LN_2 * ((k as f64).ln() + 3.0);
    let mut order: Vec<usize> = (0..k)
        .filter(|&b| {
            let left = b == 0 || pg.power[b] >= pg.power[b - 1];
            let right = b + 1 == k || pg.power[b] >= pg.power[b + 1];
            left && right
        })
        .collect();
    order.sort_by(|&a, &b| pg.power[b].total_cmp(&pg.power[a]));
    let top = order.first().map_or(0.0, |&b| pg.power[b]);
    let mut taken: Vec<usize> = Vec::new();
    for b in order {
        if taken.len() == q {
            break;
        }
        let p = pg.power[b];
        if p <= noise_level || p < MIN_RELATIVE_PEAK * top {
            break;
        }
        if taken.iter().any(|&t| t.abs_diff(b) <= SUPPRESSION_BINS) {
            continue;
        }
        taken.push(b);
    }
    taken.into_iter().map(|b| Peak { freq: pg.freqs[b], power: pg.power[b], hwhm: hwhm(pg, b) }).collect()
}

fn hwhm(pg: &PeriodogramResult, b: usize) -> f64 {
    let half = 0.5 * pg.power[b];
    let crossing = |dir: isize| -> Option<f64> {
        let mut k = b as isize;
        loop {
            let next = k + dir;
            if next < 0 || next as usize >= pg.power.len() {
                return None;
            }
            let (pk, pn) = (pg.power[k as usize], pg.power[next as usize]);
            if pn <= half {
                let t = (pk - half) / (pk - pn);
                let (fk, fnx) = (pg.freqs[k as usize], pg.freqs[next as usize]);
                return Some((fk + t * (fnx - fk) - pg.freqs[b]).abs());
            }
            k = next;
        }
    };
    match (crossing(-1), crossing(1)) {
        (Some(l), Some(r)) => 0.5 * (l + r),
        (Some(w), None) | (None, Some(w)) => w,
        (None, None) => pg.freqs.get(1).map_or(pg.freqs[0], |f1| f1 - pg.freqs[0]),
    }
}

/// Channel `c`'s locations along dimension `d` and targets tapered by a
/// Gaussian window of time-domain standard deviation `1 / ell` around `center`.
fn windowed(data: &Dataset, c: usize, d: usize, center: &[f64], ell: f64) -> (Vec<f64>, Vec<f64>) {
    data.channel_points(c)
        .map(|p| {
            let r2: f64 = p.x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum();
            (p.x[d], p.y * (-0.5 * ell * ell * r2).exp())
        })
        .unzip()
}

/// Periodogram of every channel in every window, along input dimension 0.
pub fn window_periodograms(data: &Dataset, p: usize) -> Result<Vec<(usize, PeriodogramResult)>> {
    let range = data.input_range().ok_or_else(|| Error::Degenerate("dataset is empty".into()))?;
    let (centers, ell) = place_centers(&range, p)?;
    let mut out = Vec::new();
    for (w, center) in centers.iter().enumerate() {
        for c in 0..data.n_channels() {
            let (x, y) = windowed(data, c, 0, center, if p == 1 { 0.0 } else { ell });
            let grid = frequency_grid(&x)?;
            let mut pg = lomb_scargle(&x, &y, &grid)?;
            pg.window_id = w;
            out.push((c, pg));
        }
    }
    Ok(out)
}

struct ChannelStats {
    std: Vec<f64>,
    /// Angular Nyquist rate per channel and dimension.
    nyquist: Vec<Vec<f64>>,
}

fn channel_stats(data: &Dataset) -> Result<ChannelStats> {
    let n = data.input_dim();
    let mut std = Vec::new();
    let mut nyquist = Vec::new();
    for c in 0..data.n_channels() {
        let ys: Vec<f64> = data.channel_points(c).map(|p| p.y).collect();
        if ys.len() < 4 {
            return Err(Error::Degenerate(format!(
                "channel `{}` has {} points; at least four are needed",
                data.channel_names()[c],
                ys.len()
            )));
        }
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (ys.len() - 1) as f64;
        std.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        let mut ny = Vec::with_capacity(n);
        for d in 0..n {
            let x: Vec<f64> = data.channel_points(c).map(|p| p.x[d]).collect();
            let grid = frequency_grid(&x)?;
            ny.push(*grid.last().expect("grid is nonempty"));
        }
        nyquist.push(ny);
    }
    Ok(ChannelStats { std, nyquist })
}

/// One spectral component seed in all input dimensions.
#[derive(Debug, Clone)]
struct Seed {
    mu: Vec<f64>,
    sigma: Vec<f64>,
    /// Share of the channel variance; `None` for fallback seeds.
    share: Option<f64>,
}

/// `q` component seeds for one channel and window.
fn channel_seeds(
    data: &Dataset,
    c: usize,
    center: &[f64],
    ell: f64,
    q: usize,
    nyquist: &[f64],
) -> Vec<Seed> {
    let n = data.input_dim();
    let mut per_dim: Vec<Vec<Peak>> = Vec::with_capacity(n);
    for d in 0..n {
        let (x, y) = windowed(data, c, d, center, ell);
        let peaks = frequency_grid(&x)
            .and_then(|g| lomb_scargle(&x, &y, &g))
            .map(|pg| pick_peaks(&pg, q))
            .unwrap_or_default();
        per_dim.push(peaks);
    }
    let found = per_dim.iter().map(Vec::len).min().unwrap_or(0);
    let total: f64 = (0..found).map(|k| per_dim[0][k].power).sum();
    let mut seeds = Vec::with_capacity(q);
    for k in 0..found {
        seeds.push(Seed {
            mu: (0..n).map(|d| per_dim[d][k].freq).collect(),
            sigma: (0..n)
                .map(|d| per_dim[d][k].hwhm.powi(2).max((0.01 * nyquist[d]).powi(2)))
                .collect(),
            share: Some(per_dim[0][k].power / total),
        });
    }
    let missing = q - found;
    for k in 0..missing {
        let frac = (k + 1) as f64 / (missing + 1) as f64;
        seeds.push(Seed {
            mu: nyquist.iter().map(|ny| frac * ny).collect(),
            sigma: nyquist.iter().map(|ny| (0.5 * ny / (missing + 1) as f64).powi(2)).collect(),
            share: None,
        });
    }
    seeds
}

/// `(2 pi)^{n/2} |Sigma|^{1/2}`, times `(2 pi)^{n/2} ell^n` when windowed.
fn alpha_per_w2(sigma: &[f64], ell: f64) -> f64 {
    let n = sigma.len() as f64;
    let base = (2.0 * PI).powf(n / 2.0) * sigma.iter().product::<f64>().sqrt();
    if ell > 0.0 {
        base * (2.0 * PI).powf(n / 2.0) * ell.powf(n)
    } else {
        base
    }
}

fn spectral_init(data: &Dataset, p: usize, q: usize, stationary: bool) -> Result<KernelSpec> {
    if q < 1 {
        return Err(Error::InvalidArgument("need at least one component per window".into()));
    }
    let stats = channel_stats(data)?;
    let range = data.input_range().ok_or_else(|| Error::Degenerate("dataset is empty".into()))?;
    let (centers, ell) = place_centers(&range, p)?;
    let window_ell = if stationary || p == 1 { 0.0 } else { ell };
    let m = data.n_channels();
    let mut shifts = Vec::with_capacity(p);
    for center in &centers {
        let per_channel: Vec<Vec<Seed>> = (0..m)
            .map(|c| channel_seeds(data, c, center, window_ell, q, &stats.nyquist[c]))
            .collect();
        let kernel_ell = if stationary { 0.0 } else { ell };
        let components = (0..q)
            .map(|k| MixtureComponent {
                channels: (0..m)
                    .map(|c| {
                        let s = &per_channel[c][k];
                        let std = stats.std[c];
                        let w = match s.share {
                            Some(share) => (std * std * share / alpha_per_w2(&s.sigma, kernel_ell)).sqrt(),
                            None => 0.01 * std,
                        };
                        ChannelSpectralParams::new(w, s.mu.clone(), s.sigma.clone())
                    })
                    .collect(),
            })
            .collect();
        shifts.push(ShiftGroup {
            center: center.clone(),
            ell: vec![if stationary { 0.0 } else { ell }; m],
            components,
        });
    }
    Ok(KernelSpec {
        n_channels: m,
        input_dim: data.input_dim(),
        shifts,
        noise: stats.std.iter().map(|s| 0.1 * s).collect(),
    })
}

/// MOHSM starting point with `p` windows and `q` components per window.
/// Delays and phases start at zero.
pub fn init_spec(data: &Dataset, p: usize, q: usize) -> Result<KernelSpec> {
    spectral_init(data, p, q, false)
}

/// MOSM starting point: one window spanning the data, all lengthscales zero.
pub fn init_mosm(data: &Dataset, q: usize) -> Result<KernelSpec> {
    spectral_init(data, 1, q, true)
}

/// Independent per-channel HSM: one component per (window, peak).
pub fn init_hsm(data: &Dataset, p: usize, q: usize) -> Result<HsmModel> {
    let spec = spectral_init(data, p, q, false)?;
    let hsm_l = hsm_lengthscale(data, p)?;
    let channels = (0..spec.n_channels)
        .map(|c| HsmParams {
            components: spec
                .shifts
                .iter()
                .flat_map(|shift| {
                    shift.components.iter().map(move |comp| {
                        let ch = &comp.channels[c];
                        HsmComponent {
                            weight: ch.w * ch.w * alpha_per_w2(&ch.sigma, shift.ell[c]),
                            lengthscale: hsm_l,
                            center: shift.center.clone(),
                            sigma: ch.sigma.clone(),
                            mu: ch.mu.clone(),
                        }
                    })
                })
                .collect(),
        })
        .collect();
    Ok(HsmModel {
        input_dim: spec.input_dim,
        channels,
        noise: spec.noise,
    })
}

/// HSM window lengthscale in input units: the center spacing (half-range for
/// one window).
fn hsm_lengthscale(data: &Dataset, p: usize) -> Result<f64> {
    let range = data.input_range().ok_or_else(|| Error::Degenerate("dataset is empty".into()))?;
    let (_, ell) = place_centers(&range, p)?;
    Ok(1.0 / ell)
}

/// HSM-LMC with one unit-weight latent per (window, peak) of the
/// channel-averaged periodogram; mixing weights carry each channel's share of
/// the variance at that latent's frequency.
pub fn init_lmc(data: &Dataset, p: usize, q: usize) -> Result<LmcModel> {
    let stats = channel_stats(data)?;
    let range = data.input_range().ok_or_else(|| Error::Degenerate("dataset is empty".into()))?;
    let (centers, ell) = place_centers(&range, p)?;
    let window_ell = if p == 1 { 0.0 } else { ell };
    let m = data.n_channels();
    let hsm_l = 1.0 / ell;
    let min_ny = stats.nyquist.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
    let mut latents = Vec::new();
    let mut mixing = vec![Vec::new(); m];
    for center in &centers {
        let pgs: Vec<PeriodogramResult> = (0..m)
            .map(|c| {
                let (x, y) = windowed(data, c, 0, center, window_ell);
                let grid = frequency_grid(&x)?;
                lomb_scargle(&x, &y, &grid)
            })
            .collect::<Result<_>>()?;
        // channels can have different grids; pool on the coarsest common one
        let grid: Vec<f64> = pgs
            .iter()
            .min_by_key(|pg| pg.freqs.len())
            .map(|pg| pg.freqs.clone())
            .unwrap_or_default();
        let at = |pg: &PeriodogramResult, w: f64| -> f64 {
            let k = pg.freqs.partition_point(|&f| f < w).min(pg.freqs.len() - 1);
            pg.power[k]
        };
        let pooled = PeriodogramResult {
            power: grid.iter().map(|&w| pgs.iter().map(|pg| at(pg, w)).sum::<f64>() / m as f64).collect(),
            freqs: grid,
            window_id: 0,
        };
        let mut peaks = pick_peaks(&pooled, q);
        let found = peaks.len();
        for k in 0..q - found {
            let frac = (k + 1) as f64 / (q - found + 1) as f64;
            peaks.push(Peak {
                freq: frac * min_ny,
                power: 0.0,
                hwhm: 0.5 * min_ny / (q - found + 1) as f64,
            });
        }
        for peak in &peaks {
            let sigma = peak.hwhm.powi(2).max((0.01 * min_ny).powi(2));
            latents.push(HsmParams {
                components: vec![HsmComponent {
                    weight: 1.0,
                    lengthscale: hsm_l,
                    center: center.clone(),
                    sigma: vec![sigma; data.input_dim()],
                    mu: {
                        let mut mu = vec![0.0; data.input_dim()];
                        mu[0] = peak.freq;
                        mu
                    },
                }],
            });
        }
        for c in 0..m {
            let powers: Vec<f64> = peaks.iter().map(|pk| at(&pgs[c], pk.freq)).collect();
            let total: f64 = powers.iter().sum::<f64>().max(f64::MIN_POSITIVE);
            let var = stats.std[c].powi(2);
            for (k, pw) in powers.iter().enumerate() {
                let a = if k < found { (var * pw / total).sqrt() } else { 0.01 * stats.std[c] };
                mixing[c].push(a);
            }
        }
    }
    Ok(LmcModel {
        input_dim: data.input_dim(),
        mixing,
        latents,
        noise: stats.std.iter().map(|s| 0.1 * s).collect(),
    })
}

/// Starting point for any method. `p` is the window count (ignored by MOSM)
/// and `q` the number of components per window.
pub fn init_model(method: Method, data: &Dataset, p: usize, q: usize) -> Result<KernelModel> {
    Ok(match method {
        Method::Mohsm => KernelModel::Mohsm(widen_until_factorizable(init_spec(data, p, q)?, data)?),
        Method::Mosm => KernelModel::Mosm(init_mosm(data, q)?),
        Method::Hsm => KernelModel::Hsm(init_hsm(data, p, q)?),
        Method::HsmLmc => KernelModel::HsmLmc(init_lmc(data, p, q)?),
    })
}

/// MOHSM cross terms can make the initial Gram indefinite. Halve every
/// window lengthscale, rescaling the weights so each component keeps its peak
/// covariance, until the Gram factorizes. The limit is a stationary MOSM,
/// which is PSD.
fn widen_until_factorizable(mut spec: KernelSpec, data: &Dataset) -> Result<KernelSpec> {
    let scale = 2f64.powf(spec.input_dim as f64 / 2.0);
    for _ in 0..MAX_WIDENINGS {
        match factorize_training(&KernelModel::Mohsm(spec.clone()), data) {
            Err(Error::NotPositiveDefinite { .. }) => {}
            other => return other.map(|_| spec),
        }
        for shift in &mut spec.shifts {
            shift.ell.iter_mut().for_each(|l| *l /= 2.0);
            for comp in &mut shift.components {
                comp.channels.iter_mut().for_each(|ch| ch.w *= scale);
            }
        }
        log::debug!("initial Gram not positive definite; widening windows");
    }
    Err(Error::InvalidParameter(format!(
        "initial MOHSM Gram is not positive definite after {MAX_WIDENINGS} window widenings"
    )))
}

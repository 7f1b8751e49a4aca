//! Exact multi-output GP inference: Gram assembly, likelihood, posterior and
//! prior sampling.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Dataset, Input};
use crate::error::{Error, Result};
use crate::kernel::KernelModel;
use crate::linalg::{factorize, CholFactor};

/// Jitter added to the prior covariance before sampling.
pub const SAMPLE_JITTER: f64 = 1e-8;

/// Cross-covariance matrix with entry `(a, b) = k_{i_a i_b}(x_a, x_b)`.
///
/// When `rows` and `cols` are equal only the upper triangle is evaluated and
/// mirrored, so the result is exactly symmetric.
pub fn build_gram(model: &KernelModel, rows: &[Input], cols: &[Input]) -> DMatrix<f64> {
    if rows == cols {
        return build_gram_sym(model, rows);
    }
    let ev = model.evaluator();
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| {
        ev.eval(rows[a].channel, &rows[a].x, cols[b].channel, &cols[b].x)
    })
}

/// Symmetric Gram matrix of one input set.
pub fn build_gram_sym(model: &KernelModel, inputs: &[Input]) -> DMatrix<f64> {
    let ev = model.evaluator();
    let n = inputs.len();
    let mut k = DMatrix::<f64>::zeros(n, n);
    for b in 0..n {
        for a in 0..=b {
            let v = ev.eval(inputs[a].channel, &inputs[a].x, inputs[b].channel, &inputs[b].x);
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    k
}

fn check_inputs(model: &KernelModel, inputs: &[Input]) -> Result<()> {
    let m = model.n_channels();
    let n = model.input_dim();
    for (k, inp) in inputs.iter().enumerate() {
        if inp.channel >= m {
            return Err(Error::InvalidArgument(format!("input {k}: channel {} out of range", inp.channel)));
        }
        if inp.x.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "input {k} has dimension {}, model expects {n}",
                inp.x.len()
            )));
        }
    }
    Ok(())
}

fn noise_per_point(model: &KernelModel, inputs: &[Input]) -> Vec<f64> {
    let noise = model.noise();
    inputs.iter().map(|p| noise[p.channel]).collect()
}

/// Factor of `K + diag(noise^2)` over the training inputs.
pub fn factorize_training(model: &KernelModel, data: &Dataset) -> Result<CholFactor> {
    model.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let inputs = data.inputs();
    check_inputs(model, &inputs)?;
    if data.n_channels() != model.n_channels() {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} channels, model has {}",
            data.n_channels(),
            model.n_channels()
        )));
    }
    let k = build_gram_sym(model, &inputs);
    factorize(&k, &noise_per_point(model, &inputs))
}

/// Negative log marginal likelihood of the zero-mean GP, in model units.
pub fn nll(model: &KernelModel, data: &Dataset) -> Result<f64> {
    let chol = factorize_training(model, data)?;
    let y = DVector::from_vec(data.targets());
    let alpha = chol.solve(&y);
    Ok(0.5 * y.dot(&alpha) + 0.5 * chol.log_det() + 0.5 * y.len() as f64 * (2.0 * PI).ln())
}

/// Negative log marginal likelihood and its gradient. The gradient is a
/// model of the same shape holding `d nll / d parameter` for every field,
/// noise standard deviations included.
pub fn nll_with_grad(model: &KernelModel, data: &Dataset) -> Result<(f64, KernelModel)> {
    let chol = factorize_training(model, data)?;
    let inputs = data.inputs();
    let n = inputs.len();
    let y = DVector::from_vec(data.targets());
    let alpha = chol.solve(&y);
    let value = 0.5 * y.dot(&alpha) + 0.5 * chol.log_det() + 0.5 * n as f64 * (2.0 * PI).ln();

    // d nll = 1/2 tr(W dK_y) with W = K_y^{-1} - alpha alpha'. The jitter is a
    // fixed fraction of tr(K_y)/N, which adds tr(W) * rel / N to every diagonal weight.
    let mut w = chol.inverse();
    w.ger(-1.0, &alpha, &alpha, 1.0);
    let diag_extra = if chol.jitter_rel() > 0.0 {
        w.trace() * chol.jitter_rel() / n as f64
    } else {
        0.0
    };

    let ev = model.evaluator();
    let mut buf = ev.grad_buffer();
    for b in 0..n {
        let (cb, xb) = (inputs[b].channel, &inputs[b].x);
        for a in 0..b {
            ev.accumulate(&mut buf, inputs[a].channel, &inputs[a].x, cb, xb, w[(a, b)]);
        }
        ev.accumulate(&mut buf, cb, xb, cb, xb, 0.5 * (w[(b, b)] + diag_extra));
    }
    let mut grad = ev.finish(buf);
    let noise = model.noise();
    let gn = grad.noise_mut();
    for (a, inp) in inputs.iter().enumerate() {
        gn[inp.channel] += (w[(a, a)] + diag_extra) * noise[inp.channel];
    }
    Ok((value, grad))
}

/// Posterior of the latent function at query inputs, in original data units.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorResult {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub covariance: Option<DMatrix<f64>>,
    /// Number of variances that came out negative and were set to zero.
    pub clamped: usize,
}

/// Posterior mean and variance at `queries` given training `data`.
pub fn posterior(model: &KernelModel, data: &Dataset, queries: &[Input], full_cov: bool) -> Result<PosteriorResult> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument("no query points".into()));
    }
    check_inputs(model, queries)?;
    let chol = factorize_training(model, data)?;
    let inputs = data.inputs();
    let y = DVector::from_vec(data.targets());
    let alpha = chol.solve(&y);
    let k_star = build_gram(model, &inputs, queries);
    let mean_model = k_star.transpose() * &alpha;
    let v = chol.solve_lower(&k_star);

    let ev = model.evaluator();
    let norm = data.normalization();
    let mut clamped = 0;
    let mut variance = Vec::with_capacity(queries.len());
    for (b, q) in queries.iter().enumerate() {
        let prior = ev.eval(q.channel, &q.x, q.channel, &q.x);
        let mut var = prior - v.column(b).norm_squared();
        if var < 0.0 {
            clamped += 1;
            var = 0.0;
        }
        let s = norm.scale[q.channel];
        variance.push(s * s * var);
    }
    let mean = queries
        .iter()
        .enumerate()
        .map(|(b, q)| norm.to_original(q.channel, mean_model[b]))
        .collect();
    let covariance = if full_cov {
        let mut c = build_gram_sym(model, queries) - v.transpose() * &v;
        for a in 0..queries.len() {
            for b in 0..queries.len() {
                c[(a, b)] *= norm.scale[queries[a].channel] * norm.scale[queries[b].channel];
            }
        }
        Some(c)
    } else {
        None
    };
    if clamped > 0 {
        log::debug!("clamped {clamped} negative posterior variances");
    }
    Ok(PosteriorResult {
        mean,
        variance,
        covariance,
        clamped,
    })
}

/// Draw from `N(0, K + 1e-8 I)` at `inputs`, deterministic in `seed`.
pub fn sample_prior(model: &KernelModel, inputs: &[Input], seed: u64) -> Result<DVector<f64>> {
    check_inputs(model, inputs)?;
    sample_gaussian(&build_gram_sym(model, inputs), seed)
}

/// Draw from `N(0, cov + 1e-8 I)`.
pub fn sample_gaussian(cov: &DMatrix<f64>, seed: u64) -> Result<DVector<f64>> {
    let n = cov.nrows();
    let chol = factorize(cov, &vec![SAMPLE_JITTER.sqrt(); n])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    Ok(chol.lower() * z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Point;
    use crate::kernel::{ChannelSpectralParams, HsmComponent, HsmModel, HsmParams, KernelSpec, MixtureComponent, ShiftGroup};
    use rand::Rng;

    fn hsm_model(noise: f64) -> KernelModel {
        KernelModel::Hsm(HsmModel {
            input_dim: 1,
            channels: vec![HsmParams {
                components: vec![HsmComponent {
                    weight: 1.0,
                    lengthscale: 5.0,
                    center: vec![0.0],
                    sigma: vec![0.5],
                    mu: vec![1.0],
                }],
            }],
            noise: vec![noise],
        })
    }

    fn mosm_two_channel() -> KernelModel {
        let ch = |w, mu, s, th| ChannelSpectralParams {
            w,
            mu: vec![mu],
            sigma: vec![s],
            theta: vec![th],
            phi: 0.0,
        };
        KernelModel::Mosm(KernelSpec {
            n_channels: 2,
            input_dim: 1,
            shifts: vec![ShiftGroup {
                center: vec![0.0],
                ell: vec![0.0, 0.0],
                components: vec![MixtureComponent {
                    channels: vec![ch(0.8, 1.0, 0.4, 0.0), ch(0.6, 1.3, 0.3, 0.2)],
                }],
            }],
            noise: vec![0.2, 0.3],
        })
    }

    fn one_point(y: f64) -> Dataset {
        Dataset::new(vec![Point::new(0, vec![0.0], y)], vec!["a".into()]).unwrap()
    }

    #[test]
    fn gram_is_symmetric_and_single_entry() {
        let model = mosm_two_channel();
        let inputs: Vec<Input> = (0..7).map(|k| Input::new(k % 2, vec![0.3 * k as f64])).collect();
        let k = build_gram(&model, &inputs, &inputs);
        assert_eq!(k, k.transpose());
        let single = build_gram(&model, &inputs[1..2], &inputs[1..2]);
        assert_eq!(single[(0, 0)], model.eval(1, &inputs[1].x, 1, &inputs[1].x));
    }

    #[test]
    fn nll_one_point() {
        // k(0,0) = 1 with noise 0 would be exact; use a tiny noise and absorb it.
        let model = hsm_model(1e-9);
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        assert!((nll(&model, &one_point(0.0)).unwrap() - half_log_2pi).abs() < 1e-8);
        assert!((nll(&model, &one_point(2.0)).unwrap() - (half_log_2pi + 2.0)).abs() < 1e-8);
    }

    #[test]
    fn nll_two_points_matches_bivariate_density() {
        let model = mosm_two_channel();
        let data = Dataset::new(
            vec![Point::new(0, vec![0.1], 0.7), Point::new(1, vec![0.9], -0.4)],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let s11 = model.eval(0, &[0.1], 0, &[0.1]) + 0.04;
        let s22 = model.eval(1, &[0.9], 1, &[0.9]) + 0.09;
        let s12 = model.eval(0, &[0.1], 1, &[0.9]);
        let det = s11 * s22 - s12 * s12;
        let (y1, y2) = (0.7, -0.4);
        let quad = (s22 * y1 * y1 - 2.0 * s12 * y1 * y2 + s11 * y2 * y2) / det;
        let want = 0.5 * quad + 0.5 * det.ln() + (2.0 * PI).ln();
        assert!((nll(&model, &data).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn posterior_single_point_formula() {
        let model = hsm_model(0.3);
        let data = one_point(1.5);
        let q = [Input::new(0, vec![0.4])];
        let r = posterior(&model, &data, &q, false).unwrap();
        let k = model.eval(0, &[0.0], 0, &[0.0]) + 0.09;
        let ks = model.eval(0, &[0.0], 0, &[0.4]);
        let kss = model.eval(0, &[0.4], 0, &[0.4]);
        assert!((r.mean[0] - ks / k * 1.5).abs() < 1e-12);
        assert!((r.variance[0] - (kss - ks * ks / k)).abs() < 1e-12);
    }

    #[test]
    fn posterior_interpolates_with_tiny_noise() {
        let model = hsm_model(1e-6);
        let data = Dataset::new(
            vec![Point::new(0, vec![0.0], 0.5), Point::new(0, vec![2.0], -0.3)],
            vec!["a".into()],
        )
        .unwrap();
        let r = posterior(&model, &data, &[Input::new(0, vec![0.0])], false).unwrap();
        assert!((r.mean[0] - 0.5).abs() < 1e-4);
        assert!(r.variance[0] < 1e-4 * model.eval(0, &[0.0], 0, &[0.0]));
    }

    #[test]
    fn posterior_reverts_to_prior_far_away() {
        let model = hsm_model(0.1);
        let data = one_point(1.0)
            .renormalized(crate::data::Normalization { mean: vec![3.0], scale: vec![2.0] })
            .unwrap();
        let r = posterior(&model, &data, &[Input::new(0, vec![200.0])], false).unwrap();
        assert!((r.mean[0] - 3.0).abs() < 1e-12);
        let prior = model.eval(0, &[200.0], 0, &[200.0]);
        assert!((r.variance[0] - 4.0 * prior).abs() < 1e-12);
    }

    #[test]
    fn posterior_variance_below_prior_and_permutation_invariant() {
        let model = mosm_two_channel();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Point> = (0..25)
            .map(|k| Point::new(k % 2, vec![rng.random_range(-5.0..5.0)], rng.random_range(-1.0..1.0)))
            .collect();
        let names = vec!["a".to_string(), "b".to_string()];
        let data = Dataset::new(pts.clone(), names.clone()).unwrap();
        let mut rev = pts;
        rev.reverse();
        let data_rev = Dataset::new(rev, names).unwrap();
        let queries: Vec<Input> = (0..10).map(|k| Input::new(k % 2, vec![-6.0 + 1.3 * k as f64])).collect();
        let a = posterior(&model, &data, &queries, false).unwrap();
        let b = posterior(&model, &data_rev, &queries, false).unwrap();
        for (k, q) in queries.iter().enumerate() {
            assert!(a.variance[k] <= model.eval(q.channel, &q.x, q.channel, &q.x) + 1e-8);
            assert!((a.mean[k] - b.mean[k]).abs() < 1e-8);
            assert!((a.variance[k] - b.variance[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_zero_for_zero_kernel() {
        let model = mosm_two_channel();
        let inputs: Vec<Input> = (0..6).map(|k| Input::new(k % 2, vec![k as f64])).collect();
        assert_eq!(sample_prior(&model, &inputs, 7).unwrap(), sample_prior(&model, &inputs, 7).unwrap());
        let mut zero = mosm_two_channel();
        if let KernelModel::Mosm(s) = &mut zero {
            for ch in &mut s.shifts[0].components[0].channels {
                ch.w = 0.0;
            }
        }
        let draw = sample_prior(&zero, &inputs, 7).unwrap();
        assert!(draw.amax() < 1e-3);
    }

    #[test]
    fn empirical_covariance_matches_gram() {
        let model = mosm_two_channel();
        let inputs: Vec<Input> = (0..5).map(|k| Input::new(k % 2, vec![0.5 * k as f64])).collect();
        let k = build_gram_sym(&model, &inputs);
        let draws = 10_000;
        let mut acc = DMatrix::<f64>::zeros(5, 5);
        for s in 0..draws {
            let f = sample_prior(&model, &inputs, s as u64).unwrap();
            acc += &f * f.transpose();
        }
        acc /= draws as f64;
        let kmax = k.amax();
        for a in 0..5 {
            for b in 0..5 {
                if k[(a, b)].abs() > 0.1 * kmax {
                    assert!((acc[(a, b)] - k[(a, b)]).abs() <= 0.05 * k[(a, b)].abs(), "({a},{b})");
                }
            }
        }
    }
}

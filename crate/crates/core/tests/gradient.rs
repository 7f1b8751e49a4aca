use mohsm::data::{Dataset, Point};
use mohsm::kernel::KernelModel;
use mohsm::random::{random_hsm_model, random_lmc_model, random_spectral_spec, HsmRanges, SpectralRanges};
use mohsm::trainer::{finite_difference_check, Packer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_data(rng: &mut ChaCha8Rng, n: usize, m: usize, span: f64) -> Dataset {
    let pts = (0..n)
        .map(|k| Point::new(k % m, vec![rng.random_range(-span..span)], rng.random_range(-1.5..1.5)))
        .collect();
    Dataset::new(pts, (0..m).map(|c| format!("c{c}")).collect()).unwrap()
}

fn assert_contract(model: &KernelModel, data: &Dataset) {
    let packer = Packer::new(model).unwrap();
    let v = packer.pack(model).unwrap();
    let entries = finite_difference_check(&packer, &v, data).unwrap();
    let bad: Vec<_> = entries.iter().filter(|e| !e.passes()).collect();
    assert!(bad.is_empty(), "{} of {} coordinates fail: {bad:#?}", bad.len(), entries.len());
}

#[test]
fn mohsm_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ranges = SpectralRanges { noise: 0.4..0.7, ..SpectralRanges::default() };
    let spec = random_spectral_spec(&mut rng, 2, 2, 2, &ranges);
    let data = random_data(&mut rng, 20, 2, 3.0);
    assert_contract(&KernelModel::Mohsm(spec), &data);
}

#[test]
fn mosm_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let spec = random_spectral_spec(&mut rng, 3, 1, 2, &SpectralRanges::default());
    let data = random_data(&mut rng, 24, 3, 3.0);
    assert_contract(&KernelModel::Mosm(spec), &data);
}

#[test]
fn hsm_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let model = random_hsm_model(&mut rng, 2, 2, &HsmRanges::default());
    let data = random_data(&mut rng, 20, 2, 6.0);
    assert_contract(&KernelModel::Hsm(model), &data);
}

#[test]
fn lmc_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let model = random_lmc_model(&mut rng, 3, 2, &HsmRanges::default());
    let data = random_data(&mut rng, 21, 3, 6.0);
    assert_contract(&KernelModel::HsmLmc(model), &data);
}

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use ttv_core::corpus::toy::toy_dataset;
use ttv_core::corpus::FragmentDataset;
use ttv_core::spiral::SpiralConfig;
use ttv_core::vae::gradcheck::{beta_linearity_error, gradient_check, GradCheckOptions};
use ttv_core::vae::{Example, ModelConfig, ModelParams};

fn setup() -> (ModelParams, FragmentDataset, Array2<f64>) {
    let cfg = ModelConfig::tiny();
    let params = ModelParams::init(&cfg, 3);
    let data = toy_dataset(2, 5, &SpiralConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise = Array2::from_shape_fn((2, cfg.latent_dim), |_| StandardNormal.sample(&mut rng));
    (params, data, noise)
}

#[test]
fn tiny_model_gradients_match_finite_differences() {
    let (params, data, noise) = setup();
    let examples: Vec<Example> = data.fragments.iter().map(Example::from).collect();
    let report = gradient_check(&params, &examples, &noise, &GradCheckOptions::all_terms(0.006, 1)).unwrap();
    for c in &report.checks {
        println!("{c:?}");
    }
    assert!(report.passed(200), "{report:?}");
}

#[test]
fn kl_weight_enters_linearly() {
    let (params, data, noise) = setup();
    let examples: Vec<Example> = data.fragments.iter().map(Example::from).collect();
    let err = beta_linearity_error(&params, &examples, &noise, 0.003).unwrap();
    assert!(err < 1e-9, "{err}");
}

//! Finite-difference gradient agreement for every trainable family at
//! several random configurations.

use sadkit::networks::{
    finite_difference_max_rel_error, ConvUnetFamily, LinearFamily, MlpFamily, NetworkFamily,
    Resample, TokenLinearFamily,
};
use sadkit::numerics::{Matrix, RngStream};

fn check_family(family: NetworkFamily, trials: usize, seed: u64, tol: f64) {
    let mut stream = RngStream::new(seed, 0);
    for trial in 0..trials {
        let params = family.sample_params(&mut stream);
        let x = stream.gaussian(family.dim());
        let cot = stream.gaussian(family.dim());
        let sigma = 0.1 + 1.5 * stream.uniform();
        let err = finite_difference_max_rel_error(&family, &params, &x, sigma, &cot, 1e-4);
        assert!(
            err <= tol,
            "{} trial {}: max relative gradient error {:e}",
            family.kind_label(),
            trial,
            err
        );
    }
}

#[test]
fn linear_family_gradients() {
    let mut stream = RngStream::new(41, 9);
    let phi = Matrix::from_vec(4, 4, stream.gaussian(16)).unwrap();
    check_family(NetworkFamily::Linear(LinearFamily::new(phi).unwrap()), 3, 42, 1e-4);
}

#[test]
fn mlp_family_gradients() {
    check_family(NetworkFamily::Mlp(MlpFamily::new(4, (0.01, 10.0))), 3, 43, 1e-4);
}

#[test]
fn mlp_with_bias_and_scale_gradients() {
    let mut fam = MlpFamily::new(3, (0.01, 10.0));
    fam.output_bias = (0.4, 0.2);
    fam.hidden_bias_std = 0.1;
    let fam = fam.with_output_scale(vec![2.0, 1.0, 0.25]).unwrap();
    check_family(NetworkFamily::Mlp(fam), 3, 44, 1e-4);
}

#[test]
fn conv_family_gradients_both_resamplers() {
    for (seed, mode) in [(45u64, Resample::Nearest), (46, Resample::Area)] {
        let mut fam = ConvUnetFamily::new(2, 6, 5, (0.01, 10.0)).with_resample(mode);
        fam.hidden_channels = 6;
        fam.n_freqs = 4;
        check_family(NetworkFamily::ConvUnetMini(fam), 3, seed, 1e-4);
    }
}

#[test]
fn token_family_gradients() {
    let fam = TokenLinearFamily::new(2, 4, 4, 2).unwrap();
    check_family(NetworkFamily::TokenLinear(fam), 3, 47, 1e-4);
}

//! Monte Carlo geometry against analytic structure for the three
//! architecture classes, at reduced sample counts (the full-scale runs live
//! in the acceptance suite).

use sadkit::geometry::{
    distinct_eigenvalue_count, estimate_geometry, sads_from_matrix, token_linear_analytic,
    ConvLastLayer, DenseLastLayer, ProbeDistribution,
};
use sadkit::networks::{Activation, MlpFamily, NetworkFamily, TokenLinearFamily};
use sadkit::numerics::{Matrix, RngStream};

/// Entrywise agreement with a multiple-comparison allowance: across n²
/// correlated entries a handful of 3-SE exceedances are expected by chance,
/// so the check is ≤1% of entries above 3 SE and none above 5.5 SE.
fn assert_within_3se(mc: &Matrix, se: &Matrix, analytic: &Matrix, label: &str) {
    let mut worst: f64 = 0.0;
    let mut exceed = 0usize;
    let total = mc.rows() * mc.cols();
    for i in 0..mc.rows() {
        for j in 0..mc.cols() {
            let dev = (mc.get(i, j) - analytic.get(i, j)).abs();
            let z = dev / se.get(i, j).max(1e-12);
            if z > 3.0 {
                exceed += 1;
            }
            worst = worst.max(z);
        }
    }
    assert!(worst <= 5.5, "{}: worst deviation {:.2} SE", label, worst);
    assert!(
        (exceed as f64) <= (0.01 * total as f64).max(3.0),
        "{}: {} of {} entries above 3 SE",
        label,
        exceed,
        total
    );
}

#[test]
fn dense_last_layer_matches_analytic() {
    let fam = DenseLastLayer {
        dim: 6,
        hidden: vec![0.8, -0.4, 1.2],
        activation: Activation::Silu,
        weight_std: 0.7,
        bias_mean: 0.3,
        bias_std: 0.5,
    };
    let probe = ProbeDistribution::delta_zero(vec![1.0]).unwrap();
    let est = estimate_geometry(&fam, &probe, 30_000, &RngStream::new(301, 0)).unwrap();
    assert_within_3se(&est.g, &est.standard_error, &fam.analytic(), "dense last layer");
}

#[test]
fn conv_last_layer_matches_analytic_biased_and_centered() {
    let mut stream = RngStream::new(302, 0);
    let input = stream.gaussian(2 * 4 * 4);
    for (label, bias_mean, bias_std) in [("centered", 0.0, 0.0), ("biased", 0.4, 0.3)] {
        let fam = ConvLastLayer {
            c_in: 2,
            c_out: 2,
            height: 4,
            width: 4,
            input: input.clone(),
            weight_std: 0.6,
            bias_mean,
            bias_std,
        };
        let probe = ProbeDistribution::delta_zero(vec![1.0]).unwrap();
        let est = estimate_geometry(&fam, &probe, 30_000, &RngStream::new(303, 0)).unwrap();
        assert_within_3se(&est.g, &est.standard_error, &fam.analytic(), label);
    }
}

#[test]
fn token_linear_matches_analytic_and_eigenvalue_bound() {
    // 4×4 grid, patch 2 → T = 4 tokens, D = 16. Both bias parameterizations
    // must match their analytic forms, and both have ≤ T distinct eigenvalues.
    for per_token_bias in [true, false] {
        let mut fam = TokenLinearFamily::new(1, 4, 4, 2).unwrap();
        fam.per_token_bias = per_token_bias;
        let mut x0 = vec![0.0; 16];
        // Distinct token energies so the T eigenvalue groups separate.
        for (i, v) in x0.iter_mut().enumerate() {
            *v = (i % 4) as f64 - ((i / 4) % 2) as f64 * 1.5;
        }
        let probe = ProbeDistribution::around_sample(x0, vec![0.3, 0.6]).unwrap();
        let analytic = token_linear_analytic(&fam, &probe).unwrap();
        let wrapped = NetworkFamily::TokenLinear(fam.clone());
        let est = estimate_geometry(&wrapped, &probe, 60_000, &RngStream::new(304, 0)).unwrap();
        assert_within_3se(&est.g, &est.standard_error, &analytic, "token linear");

        // At most T distinct eigenvalues, exactly visible in the analytic form.
        let sads = sads_from_matrix(&analytic).unwrap();
        assert!(distinct_eigenvalue_count(&sads.eigenvalues, 1e-6) <= fam.n_tokens());
    }
}

#[test]
fn mlp_family_delta_probe_has_equal_offdiagonals() {
    // Structure check: all off-diagonal entries of the mlp geometry agree
    // within Monte Carlo error under the default probe.
    let fam = NetworkFamily::Mlp(MlpFamily::new(4, (0.05, 2.0)));
    let probe = ProbeDistribution::delta_zero(vec![0.05, 0.2, 1.0, 2.0]).unwrap();
    let est = estimate_geometry(&fam, &probe, 40_000, &RngStream::new(305, 0)).unwrap();
    let mut offdiag = Vec::new();
    let mut ses = Vec::new();
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                offdiag.push(est.g.get(i, j));
                ses.push(est.standard_error.get(i, j));
            }
        }
    }
    let mean = offdiag.iter().sum::<f64>() / offdiag.len() as f64;
    for (v, se) in offdiag.iter().zip(&ses) {
        assert!((v - mean).abs() <= 3.0 * se.max(1e-12), "off-diagonal {} vs mean {}", v, mean);
    }
}

#[test]
fn geometry_invariant_to_stream_choice() {
    // Two estimates with independent streams agree within pooled error.
    let fam = NetworkFamily::Mlp(MlpFamily::new(3, (0.05, 2.0)));
    let probe = ProbeDistribution::isotropic(0.5, vec![0.1, 1.0]).unwrap();
    let a = estimate_geometry(&fam, &probe, 20_000, &RngStream::new(306, 0)).unwrap();
    let b = estimate_geometry(&fam, &probe, 20_000, &RngStream::new(307, 1)).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let pooled = (a.standard_error.get(i, j).powi(2)
                + b.standard_error.get(i, j).powi(2))
            .sqrt();
            let dev = (a.g.get(i, j) - b.g.get(i, j)).abs();
            assert!(dev <= 6.0 * pooled.max(1e-12), "entry ({}, {}) deviates {}", i, j, dev);
        }
    }
}

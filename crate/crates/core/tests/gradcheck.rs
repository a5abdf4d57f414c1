#![cfg(not(feature = "f32"))]

use porenet::gradcheck::{self, CheckReport};

const TOL: f64 = 1e-4;

fn assert_all(reports: Vec<CheckReport>) {
    assert!(!reports.is_empty());
    for r in reports {
        eprintln!(
            "{}: worst relative error {:e} over {} probes ({} redrawn)",
            r.name, r.worst_rel_err, r.probes, r.skipped
        );
        assert!(r.probes >= 20);
        assert!(r.worst_rel_err < TOL, "{} failed: {:e}", r.name, r.worst_rel_err);
    }
}

#[test]
fn conv_matches_finite_differences() {
    assert_all(gradcheck::conv(1));
}

#[test]
fn batchnorm_matches_finite_differences() {
    assert_all(gradcheck::batchnorm(2));
}

#[test]
fn relu_matches_finite_differences() {
    assert_all(gradcheck::relu(3));
}

#[test]
fn loss_matches_finite_differences() {
    assert_all(gradcheck::loss(4));
}

#[test]
fn width_two_network_matches_finite_differences() {
    assert_all(gradcheck::network(5));
}

#[test]
fn other_seeds_pass_too() {
    for seed in [17, 99, 1234, 2026] {
        assert_all(gradcheck::suite(seed));
    }
}

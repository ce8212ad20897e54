//! End-to-end checks of the L2 curvature pipeline against closed forms away
//! from the origin, frame changes, perturbations and rank three.

use nakano_lab::bundles::{Base, BundleSpec, LineWeight, Perturbation};
use nakano_lab::direct_image::{l2_curvature, l2_curvature_in_frame, second_term_residual, Resolution};
use nakano_lab::geometry::ChartPoint;
use nakano_lab::linalg::{CMatrix, C64};
use nakano_lab::Error;

fn point(coords: &[(f64, f64)]) -> ChartPoint {
    ChartPoint::new(coords.iter().map(|&(re, im)| C64::new(re, im)).collect()).unwrap()
}

/// Second derivative of `d log(1 + |z|^2)`.
fn fs_density(d: i64, z: C64) -> f64 {
    d as f64 / (1.0 + z.norm_sqr()).powi(2)
}

/// Sorted Nakano spectrum of a Fubini–Study split rank-two bundle at `xi`.
fn split_oracle(a: &[i64], b: &[i64], k: usize, xi: &ChartPoint) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, &z) in xi.coords().iter().enumerate() {
        for alpha in 0..=k {
            let (p, q) = ((k + 1 - alpha) as i64, (alpha + 1) as i64);
            out.push(p as f64 * fs_density(a[i], z) + q as f64 * fs_density(b[i], z));
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

fn assert_spectrum(got: &[f64], want: &[f64], rel: f64) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= rel * w.abs().max(1.0), "got {got:?}, want {want:?}");
    }
}

#[test]
fn split_p1_off_origin_matches_closed_form() {
    let xi = point(&[(0.4, -0.3)]);
    for (a, b) in [(1, 2), (2, 3), (0, 1)] {
        for k in 0..=3 {
            let cur = l2_curvature(&BundleSpec::p1(a, b), k, &xi, &Resolution::default()).unwrap();
            assert_spectrum(&cur.eigen.eigenvalues, &split_oracle(&[a], &[b], k, &xi), 1e-5);
        }
    }
}

#[test]
fn split_p1xp1_off_origin_matches_closed_form() {
    let xi = point(&[(0.2, 0.1), (-0.5, 0.25)]);
    let bundle = BundleSpec::split(Base::P1xP1, &[vec![1, 2], vec![2, 1]]).unwrap();
    for k in 0..=2 {
        let cur = l2_curvature(&bundle, k, &xi, &Resolution::default()).unwrap();
        assert_spectrum(&cur.eigen.eigenvalues, &split_oracle(&[1, 2], &[2, 1], k, &xi), 1e-5);
    }
}

#[test]
fn spectrum_is_independent_of_constant_unitary_frame() {
    let xi = point(&[(0.3, 0.2)]);
    let bundle = BundleSpec::p1(1, 2);
    let (c, s) = (0.6_f64, 0.8_f64);
    let mut u = CMatrix::identity(3);
    u[(0, 0)] = C64::new(c, 0.0);
    u[(0, 2)] = C64::new(0.0, s);
    u[(2, 0)] = C64::new(0.0, s);
    u[(2, 2)] = C64::new(c, 0.0);
    let res = Resolution::default();
    let plain = l2_curvature(&bundle, 2, &xi, &res).unwrap();
    let rotated = l2_curvature_in_frame(&bundle, 2, &xi, &res, Some(u)).unwrap();
    assert_spectrum(&rotated.eigen.eigenvalues, &plain.eigen.eigenvalues, 1e-6);
}

#[test]
fn trivial_bundle_is_flat() {
    let cur = l2_curvature(&BundleSpec::p1(0, 0), 2, &point(&[(0.1, 0.2)]), &Resolution::default()).unwrap();
    assert_spectrum(&cur.eigen.eigenvalues, &[0.0; 3], 1e-9);
}

#[test]
fn perturbed_ample_bundle_stays_positive() {
    let bundle = BundleSpec::new(
        Base::P1,
        vec![
            LineWeight::fubini_study(vec![1]).with_perturbation(Perturbation::parse("0.1*re(z^2)").unwrap()),
            LineWeight::fubini_study(vec![2]).with_perturbation(Perturbation::parse("0.05*|z|^2").unwrap()),
        ],
    )
    .unwrap();
    for xi in [point(&[(0.0, 0.0)]), point(&[(0.3, -0.4)])] {
        for k in 0..=2 {
            let cur = l2_curvature(&bundle, k, &xi, &Resolution::default()).unwrap();
            assert!(cur.eigen.min > 0.5, "k={k}: {:?}", cur.eigen.eigenvalues);
        }
    }
}

#[test]
fn perturbed_residual_is_seminegative() {
    let bundle = BundleSpec::new(
        Base::P1,
        vec![
            LineWeight::fubini_study(vec![1]).with_perturbation(Perturbation::parse("0.2*re(z)").unwrap()),
            LineWeight::fubini_study(vec![2]),
        ],
    )
    .unwrap();
    let rep = second_term_residual(&bundle, 1, &point(&[(0.2, 0.1)]), &Resolution::default()).unwrap();
    let e = nakano_lab::linalg::eigvalsh(&rep.residual).unwrap();
    assert!(e.max <= 1e-6 * rep.theta.matrix.matrix().frobenius_norm(), "{:?}", e.eigenvalues);
    assert!(rep.residual_norm_ratio > 1e-6);
}

#[test]
fn rank_three_matches_closed_form_loosely() {
    let bundle = BundleSpec::split(Base::P1, &[vec![1], vec![1], vec![1]]).unwrap();
    for k in 0..=2 {
        let cur = l2_curvature(&bundle, k, &ChartPoint::origin(1), &Resolution::default_for_rank(3)).unwrap();
        let want = (k + 3) as f64;
        for e in &cur.eigen.eigenvalues {
            assert!((e - want).abs() <= 1e-3 * want, "k={k}: {:?}", cur.eigen.eigenvalues);
        }
    }
}

#[test]
fn rank_four_is_unsupported() {
    let bundle = BundleSpec::split(Base::P1, &[vec![1], vec![1], vec![1], vec![1]]).unwrap();
    let err = l2_curvature(&bundle, 1, &ChartPoint::origin(1), &Resolution::default()).unwrap_err();
    assert!(matches!(err, Error::Unsupported(_)), "{err}");
}

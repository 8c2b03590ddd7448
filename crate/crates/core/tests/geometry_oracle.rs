//! Cross-module oracles: the torus-quotient sampler against the closed-form
//! anchor measure, group invariance of the sampler, and the two-chart
//! comparison between the polygonal volume density and the hyperbolic one.

use std::f64::consts::PI;

use conesphere::geometry::{quotient_invariants, sample_torus_quotient, TorusQuotient};
use conesphere::measure::{ks_distance_empirical, Measure1D, PiecewiseDensity};
use conesphere::thurston::{hermitian_matrix, volume_density};
use num_complex::Complex64;

/// The anchor area density as a measure, with quadrature-exact cell masses
/// from the analytic antiderivative.
fn closed_form_measure() -> Measure1D {
    let mut grid: Vec<f64> = Vec::new();
    let n = 4000;
    let (lo, hi) = (1e-7, 2.0e6_f64);
    for k in 0..=n {
        grid.push(lo * (hi / lo).powf(k as f64 / n as f64));
    }
    let mut step = 1e-9;
    while step < 0.2 {
        grid.push(1.0 - step);
        grid.push(1.0 + step);
        step *= 1.13;
    }
    grid.push(1.0);
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup_by(|a, b| (*a - *b) <= 1e-13 * b.abs());
    let f = |a: f64| {
        if a <= 1.0 {
            (1.0 - (1.0 - a * a).max(0.0).sqrt()) / (a * a)
        } else {
            1.0 / (a * a)
        }
    };
    // antiderivative: (sqrt(1-x^2)-1)/x + asin x below 1; pi/2 - 1/x above
    let anti = |x: f64| {
        if x <= 1.0 {
            ((1.0 - x * x).max(0.0).sqrt() - 1.0) / x + x.asin()
        } else {
            PI / 2.0 - 1.0 / x
        }
    };
    let values: Vec<f64> = grid.iter().map(|&a| f(a)).collect();
    let masses: Vec<f64> = grid
        .windows(2)
        .map(|w| (anti(w[1]) - anti(w[0])).max(0.0))
        .collect();
    Measure1D::from_density(
        PiecewiseDensity::from_samples_with_masses(grid, values, None, None, masses).unwrap(),
    )
}

#[test]
fn closed_form_fixture_examples() {
    let m = closed_form_measure();
    // Vol = pi/2
    assert!((m.total_mass() - PI / 2.0).abs() < 1e-6);
    // zeroth moment = mass, mean of a^{-1/2} over the volume ~ 1.1128
    let mean = m.moment(-0.5).unwrap() / m.total_mass();
    assert!((mean - 1.1128).abs() < 2e-3, "mean {mean}");
    // median of a at 4/pi, median length sqrt(pi)/2
    let amed = m.quantile(0.5);
    assert!((amed - 4.0 / PI).abs() < 1e-6, "amed {amed}");
    let lmed = conesphere::measure::to_length_density(&m).quantile(0.5);
    assert!((lmed - PI.sqrt() / 2.0).abs() < 1e-6, "lmed {lmed}");
}

#[test]
fn sampler_matches_closed_form() {
    let batch = sample_torus_quotient(1_000_000, 99, 0.01, 4).unwrap();
    let model = closed_form_measure().normalized();
    let ks = ks_distance_empirical(&batch.sorted_a(), &model).unwrap();
    // statistical floor ~ 0.0014, truncation bias bound reported by the batch
    assert!(
        ks < 0.01,
        "KS {ks} (bias bound {})",
        batch.truncation_bias_bound()
    );
    // empirical median of the unit-area length
    let ls = batch.sorted_l();
    let med = ls[ls.len() / 2];
    assert!((med - 0.886).abs() < 0.005, "median l {med}");
}

#[test]
fn sampler_invariant_under_level_two_action() {
    // resample tau values by rejection, apply gamma = [[1,0],[2,1]] before
    // computing invariants, and compare the a-samples
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let n = 1_000_000;
    let mut plain: Vec<f64> = Vec::with_capacity(n);
    let mut moved: Vec<f64> = Vec::with_capacity(n);
    while plain.len() < n {
        let x: f64 = rng.gen_range(-1.0..1.0);
        let u: f64 = rng.gen::<f64>();
        if u == 0.0 {
            continue;
        }
        let y = 0.01 / u;
        let tau = Complex64::new(x, y);
        if !TorusQuotient::in_fundamental_domain(tau) {
            continue;
        }
        plain.push(quotient_invariants(tau).a);
        let gamma_tau = tau / (2.0 * tau + 1.0);
        moved.push(quotient_invariants(gamma_tau).a);
    }
    plain.sort_by(|a, b| a.partial_cmp(b).unwrap());
    moved.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // two-sample KS
    let mut i = 0;
    let mut j = 0;
    let mut ks: f64 = 0.0;
    while i < plain.len() && j < moved.len() {
        if plain[i] <= moved[j] {
            i += 1;
        } else {
            j += 1;
        }
        ks = ks.max((i as f64 - j as f64).abs() / n as f64);
    }
    assert!(ks < 0.005, "KS {ks}");
}

#[test]
fn volume_density_matches_hyperbolic_chart() {
    // push the polygonal volume density of the four-pi-defect space through
    // the torus identification y = 1/tau; the ratio against the hyperbolic
    // density 1/Im(tau)^2 must be one global constant
    use rand::{Rng, SeedableRng};
    let form = hermitian_matrix(&[PI; 4]).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
    let mut ratios = Vec::new();
    while ratios.len() < 100 {
        let tau = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(0.05..3.0));
        if !TorusQuotient::in_fundamental_domain(tau) {
            continue;
        }
        let y = 1.0 / tau; // lower half plane: the positive side of the form
        let dens = match volume_density(&form, &[y]) {
            Ok(d) => d,
            Err(_) => continue,
        };
        let jac = (1.0 / (tau * tau)).norm_sqr();
        let hyper = 1.0 / (tau.im * tau.im);
        ratios.push(dens * jac / hyper);
    }
    let mean: f64 = ratios.iter().sum::<f64>() / ratios.len() as f64;
    for r in &ratios {
        assert!(
            (r - mean).abs() <= 1e-9 * mean,
            "ratio {r} deviates from {mean}"
        );
    }
    // with this normalization the constant is 1/4
    assert!((mean - 0.25).abs() < 1e-12, "constant {mean}");
}

//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use kamred::arithmetics::{estimate_psi, Frequency, PsiFunction, DEFAULT_LATTICE_BUDGET};
use kamred::fourier::FourierMatrixSeries;
use kamred::kam::{build_schedule, reduce, ReduceOptions, ReducibilityReport};
use kamred::mat2::Mat2;
use kamred::rotation::CocycleSpec;
use kamred::weights::WeightSpec;
use kamred::Execution;

pub const RADIUS: f64 = 0.2;
pub const KMAX: u32 = 3000;
pub const MAX_STEPS: usize = 8;
/// Fraction of the admissible threshold used for the test perturbation.
pub const THRESHOLD_FRACTION: f64 = 0.9;

/// Real three-mode perturbation with traceless coefficients, unnormalised.
pub fn three_mode_shape() -> FourierMatrixSeries {
    FourierMatrixSeries::real_trig(
        2,
        &[
            (vec![1, 0], Mat2::new(0.3, 1.0, 0.5, -0.3), Mat2::new(0.0, 0.2, -0.4, 0.0)),
            (vec![0, 1], Mat2::new(-0.2, 0.4, 0.7, 0.2), Mat2::new(0.1, 0.0, 0.3, -0.1)),
            (vec![1, -1], Mat2::new(0.5, -0.3, 0.2, -0.5), Mat2::zero()),
        ],
    )
    .unwrap()
}

pub fn golden_psi(kmax: u32) -> PsiFunction {
    estimate_psi(&Frequency::golden(), kmax, DEFAULT_LATTICE_BUDGET, Execution::default()).unwrap()
}

pub struct GoldenRun {
    pub psi: PsiFunction,
    pub cocycle: CocycleSpec,
    pub eps: f64,
    pub report: ReducibilityReport,
}

/// `(ω, J + F)` with golden `ω` and `|F|_r` at [`THRESHOLD_FRACTION`] of
/// `min(α/4, 2⁻⁸/Ψ(N₀))`, reduced with an 8-step budget.
pub fn golden_run() -> GoldenRun {
    let w = WeightSpec::Analytic;
    let psi = golden_psi(KMAX);
    let shape = three_mode_shape();
    let norm = shape.weighted_norm(&w, RADIUS).unwrap();
    // N₀ does not depend on ε, so any admissible ε reveals the threshold.
    let probe = build_schedule(RADIUS, 1e-12, 1.0, &w, &psi, 1).unwrap();
    let eps = THRESHOLD_FRACTION * probe.max_admissible_eps;
    let cocycle = CocycleSpec::new(Frequency::golden(), Mat2::j(), shape.scale(eps / norm), RADIUS).unwrap();
    let opts = ReduceOptions { max_steps: MAX_STEPS, ..Default::default() };
    let report = reduce(&cocycle, &psi, &w, &opts).unwrap();
    GoldenRun { psi, cocycle, eps, report }
}

use kamred::mat2::CMat2;
use num_complex::Complex64;
use rand::Rng;

pub fn random_traceless<R: Rng>(rng: &mut R) -> Mat2 {
    let a = rng.gen_range(-1.0..1.0);
    Mat2::new(a, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), -a)
}

pub fn random_cmat<R: Rng>(rng: &mut R) -> CMat2 {
    CMat2::from_entries(std::array::from_fn(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))))
}

pub fn random_index<R: Rng>(rng: &mut R, d: usize, max_l1: u32) -> Vec<i32> {
    loop {
        let k: Vec<i32> = (0..d).map(|_| rng.gen_range(-(max_l1 as i32)..=max_l1 as i32)).collect();
        if kamred::fourier::l1(&k) <= max_l1 {
            return k;
        }
    }
}

/// Complex trigonometric polynomial with up to `modes` random coefficients.
pub fn random_complex_series<R: Rng>(rng: &mut R, d: usize, max_l1: u32, modes: usize) -> FourierMatrixSeries {
    let coeffs: Vec<(Vec<i32>, CMat2)> = (0..modes).map(|_| (random_index(rng, d, max_l1), random_cmat(rng))).collect();
    FourierMatrixSeries::from_coeffs(d, coeffs, false).unwrap()
}

/// Real zero-mean polynomial with traceless coefficients.
pub fn random_real_zero_mean<R: Rng>(rng: &mut R, d: usize, max_l1: u32, modes: usize) -> FourierMatrixSeries {
    let mut list = Vec::new();
    while list.len() < modes {
        let k = random_index(rng, d, max_l1);
        if k.iter().all(|&x| x == 0) {
            continue;
        }
        list.push((k, random_traceless(rng), random_traceless(rng)));
    }
    FourierMatrixSeries::real_trig(d, &list).unwrap()
}

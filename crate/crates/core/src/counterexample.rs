//! Non-reducible cocycles `(ω, uJ)` when `lnΨ/Λ` stays bounded below.
//!
//! Along a chain of resonant modes `|2πk_j·ω| ≤ e^{−3πrΛ(|k_j|)}` the scalar
//! function `u` with `û(±k_j) = εC⁻¹·2πk_j·ω` is small in the `r`-norm, while
//! the formal solution of `∂_ωv = u − ρ` has coefficients of constant size
//! `εC⁻¹`. A finite chain is evidence, not proof.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::arithmetics::{Frequency, PsiFunction, TWO_PI};
use crate::fourier::{l1, FourierMatrixSeries, MultiIndex};
use crate::kam::{reduce, FailureRecord, ReduceOptions, ReducibilityReport};
use crate::mat2::Mat2;
use crate::rotation::CocycleSpec;
use crate::weights::WeightSpec;
use crate::{Error, Result};

/// Required ratio between `lnΨ/Λ` at the last record of the table and its
/// largest record value for the condition to count as failing.
pub const MIN_PERSISTENCE: f64 = 0.5;

/// Real scalar Fourier series with conjugate-symmetric coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarSeries {
    d: usize,
    coeffs: BTreeMap<MultiIndex, Complex64>,
}

impl ScalarSeries {
    pub fn constant(d: usize, c: f64) -> Self {
        let mut coeffs = BTreeMap::new();
        if c != 0.0 {
            coeffs.insert(MultiIndex::zero(d), Complex64::new(c, 0.0));
        }
        ScalarSeries { d, coeffs }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn coeff(&self, k: &[i32]) -> Complex64 {
        self.coeffs.get(k).copied().unwrap_or_default()
    }

    pub fn mean(&self) -> f64 {
        self.coeff(MultiIndex::zero(self.d).as_slice()).re
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, &Complex64)> {
        self.coeffs.iter()
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `|u − û(0)|_r`.
    pub fn oscillation_norm(&self, weight: &WeightSpec, r: f64) -> f64 {
        self.coeffs
            .iter()
            .filter(|(k, _)| !k.is_zero())
            .map(|(k, c)| c.norm() * (TWO_PI * weight.value(k.l1() as f64) * r).exp())
            .sum()
    }

    pub fn evaluate(&self, theta: &[f64]) -> Complex64 {
        self.coeffs
            .iter()
            .map(|(k, c)| {
                let phase: f64 = k.0.iter().zip(theta).map(|(&ki, &t)| ki as f64 * t).sum();
                c * Complex64::from_polar(1.0, TWO_PI * phase)
            })
            .sum()
    }

    /// `(u − û(0))·M` as a matrix series.
    pub fn oscillation_times(&self, m: &Mat2) -> Result<FourierMatrixSeries> {
        let mc = m.to_complex();
        let items = self.coeffs.iter().filter(|(k, _)| !k.is_zero()).map(|(k, c)| (k.0.clone(), mc.scale(*c)));
        FourierMatrixSeries::from_coeffs(self.d, items.collect::<Vec<_>>(), true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonantMode {
    pub k: Vec<i32>,
    pub norm: u32,
    /// `2πk·ω`, signed.
    pub divisor: f64,
    pub lambda: f64,
    /// `−ln|2πk·ω| − 3πrΛ(|k|)`, non-negative for a valid mode.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceChain {
    pub freq: Frequency,
    pub weight: WeightSpec,
    pub r: f64,
    pub modes: Vec<ResonantMode>,
    /// `C = Σ_{±k_j} e^{−πrΛ(|k_j|)}`, summed over both signs.
    pub c: f64,
    /// `(K, lnΨ(K)/Λ(K))` at the records of the table.
    pub ratios: Vec<(u32, f64)>,
    pub persistence: f64,
}

fn chain_constant(weight: &WeightSpec, r: f64, modes: &[ResonantMode]) -> f64 {
    2.0 * modes.iter().map(|m| (-PI * r * weight.value(m.norm as f64)).exp()).sum::<f64>()
}

/// Picks `r` from the record values of `lnΨ/(3πΛ)` and collects the record
/// witnesses that satisfy the resonance inequality.
pub fn find_resonances(freq: &Frequency, weight: &WeightSpec, psi: &PsiFunction, count: usize) -> Result<ResonanceChain> {
    if psi.d() != freq.d() {
        return Err(Error::Input("Ψ table and frequency have different dimensions".into()));
    }
    if count == 0 {
        return Err(Error::Input("count must be positive".into()));
    }
    let ratios: Vec<(u32, f64)> = psi
        .records()
        .into_iter()
        .map(|k| (k, psi.value(k).ln() / weight.value(k as f64)))
        .filter(|&(_, q)| q > 0.0)
        .collect();
    let insufficient = |found| Err(Error::InsufficientResonances { found, requested: count });
    let Some(overall) = ratios.iter().map(|p| p.1).reduce(f64::max) else {
        return insufficient(0);
    };
    let last = ratios.last().map_or(0.0, |p| p.1);
    let persistence = last / overall;
    if persistence < MIN_PERSISTENCE {
        // lnΨ/Λ is visibly decaying: no resonance supply on this table.
        return insufficient(0);
    }
    let mut sorted: Vec<f64> = ratios.iter().map(|p| p.1).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted.len() < count {
        return insufficient(sorted.len());
    }
    let r = sorted[count - 1] / (3.0 * PI) * (1.0 - 1e-12);

    let mut modes: Vec<ResonantMode> = Vec::new();
    for &(kk, _) in &ratios {
        let k = psi.witness(kk).to_vec();
        let norm = l1(&k);
        if modes.last().is_some_and(|m| m.norm >= norm) {
            continue;
        }
        let divisor = TWO_PI * freq.dot(&k);
        let lambda = weight.value(norm as f64);
        let margin = -divisor.abs().ln() - 3.0 * PI * r * lambda;
        if margin >= 0.0 {
            modes.push(ResonantMode { k, norm, divisor, lambda, margin });
            if modes.len() == count {
                break;
            }
        }
    }
    if modes.len() < count {
        return insufficient(modes.len());
    }
    let c = chain_constant(weight, r, &modes);
    Ok(ResonanceChain { freq: freq.clone(), weight: weight.clone(), r, modes, c, ratios, persistence })
}

/// `u` with `û(0) = ρ`, `û(±k_j) = εC⁻¹·2πk_j·ω`, and the cocycle
/// `(ω, ρJ + (u − ρ)J)` at radius `chain.r`.
pub fn build_counterexample(chain: &ResonanceChain, rho: f64, eps: f64) -> Result<(ScalarSeries, CocycleSpec)> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::Domain(format!("eps must be non-negative, got {eps}")));
    }
    let d = chain.freq.d();
    let mut u = ScalarSeries::constant(d, rho);
    if eps > 0.0 {
        if chain.modes.is_empty() {
            return Err(Error::Input("a positive eps needs a nonempty chain".into()));
        }
        let amp = eps / chain.c;
        for m in &chain.modes {
            let k = MultiIndex(m.k.clone());
            let val = Complex64::new(amp * m.divisor, 0.0);
            u.coeffs.insert(k.neg(), val.conj());
            u.coeffs.insert(k, val);
        }
    }
    let f = u.oscillation_times(&Mat2::j())?;
    let c = CocycleSpec::new(chain.freq.clone(), Mat2::j().scale(rho), f, chain.r)?;
    Ok((u, c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub k: Vec<i32>,
    pub u_hat: Complex64,
    pub divisor: f64,
    /// `|v̂(k)| = |û(k)/(2πik·ω)|`.
    pub v_hat_abs: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialSum {
    pub j: usize,
    /// `Σ_{i≤j} |v̂(±k_i)|`, which grows linearly.
    pub l1: f64,
    /// Parseval lower bound `(Σ|v̂|²)^{1/2} ≤ sup|S_j|`.
    pub sup_lower_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub solvable: bool,
    pub note: String,
    pub eps: f64,
    pub r: f64,
    pub c: f64,
    /// `εC⁻¹`.
    pub expected_abs: f64,
    pub margins: Vec<f64>,
    pub coefficients: Vec<CoefficientRow>,
    pub max_deviation: f64,
    pub partial_sums: Vec<PartialSum>,
    /// Least-squares slope of `l1` against `j`.
    pub l1_growth_per_mode: f64,
    /// Whether the coefficients fail to decay (hence no summability test passes).
    pub non_convergent: bool,
    pub kam_converged: Option<bool>,
    pub kam_failure: Option<FailureRecord>,
}

impl Evidence {
    pub fn attach_kam(&mut self, report: &ReducibilityReport) {
        self.kam_converged = Some(report.converged);
        self.kam_failure = report.failure.clone();
    }
}

/// Formal solution coefficients of `∂_ωv = u − ρ` along the chain and the
/// growth of their partial sums.
pub fn certify_nonsolvability(u: &ScalarSeries, freq: &Frequency, chain: &ResonanceChain, eps: f64) -> Evidence {
    let oscillating = u.iter().any(|(k, c)| !k.is_zero() && c.norm() > 0.0);
    let mut ev = Evidence {
        solvable: !oscillating,
        note: String::new(),
        eps,
        r: chain.r,
        c: chain.c,
        expected_abs: if chain.c > 0.0 { eps / chain.c } else { 0.0 },
        margins: chain.modes.iter().map(|m| m.margin).collect(),
        coefficients: Vec::new(),
        max_deviation: 0.0,
        partial_sums: Vec::new(),
        l1_growth_per_mode: 0.0,
        non_convergent: false,
        kam_converged: None,
        kam_failure: None,
    };
    if !oscillating {
        ev.note = "solvable: v = 0".into();
        return ev;
    }
    let (mut l1_sum, mut sq) = (0.0, 0.0);
    for (j, m) in chain.modes.iter().enumerate() {
        for k in [m.k.clone(), m.k.iter().map(|x| -x).collect()] {
            let uh = u.coeff(&k);
            let divisor = TWO_PI * freq.dot(&k);
            let vh = uh / Complex64::new(0.0, divisor);
            let dev = (vh.norm() - ev.expected_abs).abs();
            ev.max_deviation = ev.max_deviation.max(dev);
            l1_sum += vh.norm();
            sq += vh.norm_sqr();
            ev.coefficients.push(CoefficientRow { k, u_hat: uh, divisor, v_hat_abs: vh.norm(), deviation: dev });
        }
        ev.partial_sums.push(PartialSum { j: j + 1, l1: l1_sum, sup_lower_bound: sq.sqrt() });
    }
    let n = ev.partial_sums.len() as f64;
    let (mx, my) = (
        ev.partial_sums.iter().map(|p| p.j as f64).sum::<f64>() / n,
        ev.partial_sums.iter().map(|p| p.l1).sum::<f64>() / n,
    );
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for p in &ev.partial_sums {
        sxy += (p.j as f64 - mx) * (p.l1 - my);
        sxx += (p.j as f64 - mx).powi(2);
    }
    ev.l1_growth_per_mode = if sxx > 0.0 { sxy / sxx } else { my };
    let floor = ev.expected_abs * (1.0 - 1e-12);
    ev.non_convergent = ev.coefficients.iter().all(|c| c.v_hat_abs >= floor);
    ev.note = if ev.non_convergent {
        format!(
            "formal solution coefficients stay at εC⁻¹ = {:e} along {} resonant modes; partial sums grow without bound \
             on the infinite chain (finite evidence)",
            ev.expected_abs,
            chain.modes.len()
        )
    } else {
        "formal solution coefficients decay on this chain".into()
    };
    ev
}

/// Runs the KAM driver on a built counterexample; the expected outcome is a
/// schedule or step failure.
pub fn negative_reduce(
    c: &CocycleSpec,
    psi: &PsiFunction,
    weight: &WeightSpec,
    opts: &ReduceOptions,
) -> Result<ReducibilityReport> {
    reduce(c, psi, weight, opts)
}

//! KAM reduction of `(ω, A + F)` with `A` elliptic: parameter schedule,
//! cohomological solver, one iteration step and the driver.
//!
//! Every inequality the convergence argument relies on is measured at each
//! step and logged as a [`BoundCheck`]; nothing is assumed.
//!
//! Conjugacy convention: `Y` conjugates `A + F` to `B` when
//! `∂_ωY = (A + F)·Y − Y·B`.

use std::f64::consts::{LN_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::arithmetics::{
    canonical_ball_size, check_rotation_condition, shell_minima, Frequency, PsiFunction, RotationCondition,
    DEFAULT_LATTICE_BUDGET, TWO_PI,
};
use crate::fourier::{multiply_with, FourierMatrixSeries, MultiIndex, NormContext};
use crate::mat2::{complex_basis, complex_basis_inv, perturbed_normal_form, real_normal_form, CMat2, EllipticNormalForm, Mat2};
use crate::quadrature::integrate_log_split;
use crate::rotation::{fibered_rotation_number, CocycleSpec, RotationEstimate, MAX_STEP_SCALE};
use crate::weights::WeightSpec;
use crate::{Error, Execution, Result};

pub const DEFAULT_MAX_STEPS: usize = 12;

/// Relative slack granted to every measured inequality for rounding.
pub const CHECK_REL_SLACK: f64 = 1e-12;

/// `|tr⟨F_ν⟩|` allowed at every step.
pub const TRACE_TOL: f64 = 1e-10;

/// Where the extrapolated tail integral of the schedule is cut off.
const TAIL_HORIZON: f64 = 1e300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub nu: usize,
    /// `ε_ν = 4^{−ν}ε`.
    pub eps: f64,
    /// `N_ν = Ψ⁻¹(2^νΨ(N₀))`, real valued.
    pub n: f64,
    /// Truncation order `⌊N_ν⌋`.
    pub n_trunc: u32,
    /// `Ψ(N_ν)` of the continuous model.
    pub psi_n: f64,
    /// `σ_ν = 3 ln2 / (πΛ(N_ν))`.
    pub sigma: f64,
    /// `r_ν`; the step works from `r_ν` down to `r_ν − σ_ν`.
    pub r: f64,
}

impl ScheduleEntry {
    pub fn r_next(&self) -> f64 {
        self.r - self.sigma
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KamSchedule {
    pub r: f64,
    pub eps0: f64,
    pub alpha0: f64,
    pub weight: WeightSpec,
    pub n0: u32,
    pub psi_n0: f64,
    /// `∫_{N₀}^∞ Λ′ lnΨ / Λ²`.
    pub tail_at_n0: f64,
    /// `πr/6`.
    pub tail_threshold: f64,
    /// `min(α/4, 2⁻⁸/Ψ(N₀))`.
    pub max_admissible_eps: f64,
    pub entries: Vec<ScheduleEntry>,
    /// `Σσ_ν` over the scheduled steps.
    pub sigma_sum: f64,
    /// `Σσ_ν` continued past the step budget until the terms vanish.
    pub sigma_sum_projected: f64,
}

impl KamSchedule {
    pub fn entry(&self, nu: usize) -> Option<&ScheduleEntry> {
        self.entries.get(nu)
    }

    pub fn steps(&self) -> usize {
        self.entries.len()
    }
}

#[inline]
fn lambda_br_integrand(weight: &WeightSpec, psi: &PsiFunction, v: f64) -> f64 {
    // Split as (Λ′/Λ)(lnΨ/Λ) so Λ² cannot overflow.
    let l = weight.value(v);
    (weight.derivative(v) / l) * (psi.ln_ext(v) / l)
}

/// `T(N) = ∫_N^∞ Λ′(v) lnΨ(v)/Λ(v)² dv` for `N = 1..=Kmax` (index `N−1`).
///
/// Unit intervals inside the table, decades of the extrapolated model up to
/// `1e300`, and an asymptotic remainder fitted to the last decades.
pub fn lambda_br_tails(weight: &WeightSpec, psi: &PsiFunction) -> Result<Vec<f64>> {
    let kmax = psi.kmax() as usize;
    let breaks = weight.breakpoints();
    let f = |v: f64| lambda_br_integrand(weight, psi, v);
    let rel = 1e-10;
    let mut decades = Vec::new();
    let mut a = kmax as f64;
    while a < TAIL_HORIZON {
        let b = (a * 10.0).min(TAIL_HORIZON);
        decades.push(integrate_log_split(&f, a, b, &breaks, rel));
        a = b;
    }
    let mut beyond: f64 = decades.iter().sum();
    let n = decades.len();
    if n >= 2 {
        let (prev, last) = (decades[n - 2], decades[n - 1]);
        if last > 0.0 {
            let q = last / prev;
            if q < 0.9 && q > 0.0 {
                beyond += last * q / (1.0 - q);
            } else {
                // Decade integrals of a power-law-in-log-v decay D_j ~ j^{-p}.
                let j = n as f64 + (kmax as f64).log10();
                let p = (prev / last).ln() / (j / (j - 1.0)).ln();
                if !(p > 1.0) {
                    return Err(Error::Condition(format!(
                        "Λ-BR tail does not decay beyond Kmax (decade ratio {q:.4}, exponent {p:.4})"
                    )));
                }
                beyond += last * j / (p - 1.0);
            }
        }
    }
    if !beyond.is_finite() {
        return Err(Error::Condition("Λ-BR tail integral is not finite".into()));
    }
    let mut tails = vec![0.0; kmax];
    let mut acc = beyond;
    tails[kmax - 1] = acc;
    for k in (1..kmax).rev() {
        acc += integrate_log_split(&f, k as f64, (k + 1) as f64, &breaks, rel);
        tails[k - 1] = acc;
    }
    Ok(tails)
}

/// Parameter schedule for `steps` iterations.
pub fn build_schedule(
    r: f64,
    eps: f64,
    alpha: f64,
    weight: &WeightSpec,
    psi: &PsiFunction,
    steps: usize,
) -> Result<KamSchedule> {
    for (name, x) in [("r", r), ("eps", eps), ("alpha", alpha)] {
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::Domain(format!("{name} must be positive and finite, got {x}")));
        }
    }
    let tails = lambda_br_tails(weight, psi)?;
    let threshold = PI * r / 6.0;
    let kmax = psi.kmax();
    let n0 = match (1..=kmax).find(|&n| tails[n as usize - 1] <= threshold && psi.ext(n as f64) >= 2.0) {
        Some(n) => n,
        None => {
            let best = tails[kmax as usize - 1];
            if best > threshold {
                return Err(Error::Condition(format!(
                    "Λ-BR tail stays above πr/6 = {threshold:e} on the table (smallest value {best:e} at N = {kmax})"
                )));
            }
            return Err(Error::Schedule {
                reason: format!("Ψ stays below 2 up to Kmax = {kmax}; enlarge the table"),
                max_admissible_eps: None,
            });
        }
    };
    let psi0 = psi.ext(n0 as f64);
    let max_eps = (alpha / 4.0).min(1.0 / (256.0 * psi0));
    if eps > max_eps {
        return Err(Error::Schedule {
            reason: format!(
                "ε = {eps:e} violates ε ≤ α/4 = {:e} or 2⁸Ψ(N₀)ε ≤ 1 with N₀ = {n0}, Ψ(N₀) = {psi0:e}",
                alpha / 4.0
            ),
            max_admissible_eps: Some(max_eps),
        });
    }
    let sigma_of = |n: f64| 3.0 * LN_2 / (PI * weight.value(n));
    let mut entries = Vec::with_capacity(steps);
    let mut rr = r;
    for nu in 0..steps {
        let n = if nu == 0 { n0 as f64 } else { psi.inverse(psi0 * 2f64.powi(nu as i32))? };
        if n > kmax as f64 {
            return Err(Error::Schedule {
                reason: format!(
                    "N_{nu} = {n:.3} exceeds Kmax = {kmax}; small divisors beyond the table are unverified \
                     (enlarge Kmax or lower max_steps to {nu})"
                ),
                max_admissible_eps: None,
            });
        }
        let sigma = sigma_of(n);
        entries.push(ScheduleEntry {
            nu,
            eps: eps * 4f64.powi(-(nu as i32)),
            n,
            n_trunc: (n * (1.0 + 1e-12)).floor() as u32,
            psi_n: psi.ext(n),
            sigma,
            r: rr,
        });
        rr -= sigma;
    }
    let sigma_sum: f64 = entries.iter().map(|e| e.sigma).sum();
    let mut projected = sigma_sum;
    for nu in steps..steps + 1000 {
        let target = psi0 * 2f64.powi(nu as i32);
        let Ok(n) = psi.inverse(target) else { break };
        let s = sigma_of(n);
        if !(s > 1e-18 * r) {
            break;
        }
        projected += s;
    }
    if projected > r / 2.0 {
        return Err(Error::Schedule {
            reason: format!("Σσ_ν = {projected:e} exceeds r/2 = {:e}", r / 2.0),
            max_admissible_eps: None,
        });
    }
    Ok(KamSchedule {
        r,
        eps0: eps,
        alpha0: alpha,
        weight: weight.clone(),
        n0,
        psi_n0: psi0,
        tail_at_n0: tails[n0 as usize - 1],
        tail_threshold: threshold,
        max_admissible_eps: max_eps,
        entries,
        sigma_sum,
        sigma_sum_projected: projected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardReport {
    pub holds: bool,
    /// `1/(2Ψ(N))`.
    pub threshold: f64,
    /// `min_{0<|k|≤N} |2α ± 2πk·ω|`.
    pub min_value: f64,
    pub witness: Vec<i32>,
    pub n: u32,
}

/// Enumerates `|2α ± 2πk·ω| > 1/(2Ψ(N))` over `0 < |k| ≤ N`, with
/// `psi_n = Ψ(N)`.
pub fn small_divisor_guard(alpha: f64, freq: &Frequency, n: u32, psi_n: f64, exec: Execution) -> Result<GuardReport> {
    let needed = canonical_ball_size(freq.d(), n);
    if needed > DEFAULT_LATTICE_BUDGET {
        return Err(Error::Budget { needed, budget: DEFAULT_LATTICE_BUDGET });
    }
    let two_alpha = 2.0 * alpha;
    let shells = shell_minima(freq.d(), n, exec, |k| {
        let x = TWO_PI * freq.dot(k);
        (two_alpha - x).abs().min((two_alpha + x).abs())
    });
    let threshold = 0.5 / psi_n;
    let (mut min_value, mut witness) = (f64::INFINITY, Vec::new());
    for (m, k) in shells {
        if m < min_value {
            min_value = m;
            witness = k;
        }
    }
    Ok(GuardReport { holds: min_value > threshold, threshold, min_value, witness, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    /// Any divisor below `1/(2Ψ(N))` is an error.
    Strict,
    /// Divisors are recorded; only an exactly vanishing one is an error.
    Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohomologicalSolution {
    pub x: FourierMatrixSeries,
    /// Smallest divisor met among the modes of `G`.
    pub min_divisor: f64,
    pub min_divisor_witness: Vec<i32>,
    pub threshold: f64,
    pub below_threshold: usize,
}

/// Solves `∂_ωX = [αJ, X] + G` mode by mode. In the basis diagonalising `J`
/// the operator acts entrywise with divisors `i·2πk·ω` on the diagonal and
/// `i(2πk·ω ∓ 2α)` off it.
pub fn solve_cohomological(
    alpha: f64,
    g: &FourierMatrixSeries,
    freq: &Frequency,
    n: u32,
    psi_n: f64,
    mode: SolveMode,
) -> Result<CohomologicalSolution> {
    if g.d() != freq.d() {
        return Err(Error::Input(format!("G has dimension {}, frequency {}", g.d(), freq.d())));
    }
    if g.tail_bound() > 0.0 {
        return Err(Error::Precondition("G must be an exact trigonometric polynomial (no tail)".into()));
    }
    if g.coeff(MultiIndex::zero(g.d()).as_slice()).is_some() {
        return Err(Error::Precondition("G must have zero mean".into()));
    }
    if g.max_l1() > n {
        return Err(Error::Precondition(format!("G has modes of order {} > N = {n}", g.max_l1())));
    }
    let threshold = 0.5 / psi_n;
    let (m, mi) = (complex_basis(), complex_basis_inv());
    let real = g.real_symmetric();
    let mut min_divisor = f64::INFINITY;
    let mut witness = Vec::new();
    let mut below = 0usize;
    let mut out = Vec::with_capacity(g.len());
    for (k, c) in g.iter() {
        if real && !k.is_canonical() {
            continue;
        }
        let nu = TWO_PI * freq.dot(&k.0);
        let div = [nu, nu - 2.0 * alpha, nu + 2.0 * alpha, nu];
        let smallest = div.iter().fold(f64::INFINITY, |a, d| a.min(d.abs()));
        if smallest < min_divisor {
            min_divisor = smallest;
            witness = k.0.clone();
        }
        if smallest < threshold {
            below += 1;
            if mode == SolveMode::Strict {
                return Err(Error::SmallDivisor { witness: k.0.clone(), divisor: smallest, threshold });
            }
        }
        if smallest == 0.0 {
            return Err(Error::SmallDivisor { witness: k.0.clone(), divisor: 0.0, threshold });
        }
        let gp = (m * *c * mi).entries();
        let xp: [Complex64; 4] = std::array::from_fn(|i| gp[i] / Complex64::new(0.0, div[i]));
        let x = mi * CMat2::from_entries(xp) * m;
        if real {
            out.push((k.neg().0, x.conj()));
        }
        out.push((k.0.clone(), x));
    }
    let x = FourierMatrixSeries::from_coeffs(g.d(), out, real)?;
    Ok(CohomologicalSolution { x, min_divisor, min_divisor_witness: witness, threshold, below_threshold: below })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeumannInverse {
    /// `Σ_j (−X)^j` with the remainder in its tail.
    pub inverse: FourierMatrixSeries,
    pub terms: usize,
    pub x_norm: f64,
    /// Geometric bound on the discarded terms.
    pub remainder: f64,
}

/// `(I + X)⁻¹` as a Neumann series in the algebra of `ctx`, stopped once a
/// term falls below `1e−16·|X|`.
pub fn neumann_inverse(x: &FourierMatrixSeries, ctx: &NormContext) -> Result<NeumannInverse> {
    let d = x.d();
    let x_norm = ctx.norm(x);
    if x_norm == 0.0 {
        return Ok(NeumannInverse { inverse: FourierMatrixSeries::identity(d), terms: 0, x_norm, remainder: 0.0 });
    }
    if !(x_norm < 1.0) {
        return Err(Error::Numerical(format!("Neumann series needs |X| < 1, got {x_norm:e}")));
    }
    let neg = x.scale(-1.0);
    let mut sum = FourierMatrixSeries::identity(d);
    let mut term = FourierMatrixSeries::identity(d);
    let mut terms = 0;
    let mut last = 1.0;
    while terms < 1000 {
        term = ctx.mul(&term, &neg)?;
        terms += 1;
        sum = sum.add(&term)?;
        last = ctx.norm(&term);
        if last < 1e-16 * x_norm {
            break;
        }
    }
    let remainder = last * x_norm / (1.0 - x_norm);
    sum.add_tail(remainder);
    Ok(NeumannInverse { inverse: sum, terms, x_norm, remainder })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub claimed: f64,
    pub measured: f64,
    pub passed: bool,
}

impl BoundCheck {
    /// `measured ≤ claimed` up to [`CHECK_REL_SLACK`] and `abs_tol`.
    pub fn le(name: impl Into<String>, measured: f64, claimed: f64, abs_tol: f64) -> Self {
        let passed = measured.is_finite() && measured <= claimed * (1.0 + CHECK_REL_SLACK) + abs_tol;
        BoundCheck { name: name.into(), claimed, measured, passed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StepDiagnostics {
    pub nu: usize,
    pub eps: f64,
    pub n: f64,
    pub n_trunc: u32,
    pub psi_n: f64,
    pub sigma: f64,
    pub r: f64,
    pub r_next: f64,
    pub alpha: f64,
    pub alpha_next: f64,
    /// `|F_ν|_{r_ν}`.
    pub f_norm: f64,
    pub g_norm: f64,
    pub g_modes: usize,
    pub x_norm: f64,
    pub z_inv_norm: f64,
    pub neumann_terms: usize,
    /// `|R_ν|_{r_ν−σ_ν}`.
    pub r_norm: f64,
    /// `|F_{ν+1}|_{r_{ν+1}}`.
    pub f_next_norm: f64,
    pub f_next_tail: f64,
    pub f_next_modes: usize,
    /// `|F_{ν+1}|_{r_{ν+1}} / |F_ν|_{r_ν}`.
    pub contraction: f64,
    pub trace_mean_next: f64,
    /// `|Y_ν − I|_{r_ν}`.
    pub y_minus_i_norm: f64,
    pub solver_min_divisor: f64,
    pub solver_below_threshold: usize,
    pub guard: Option<GuardReport>,
    /// Weighted mass of the product conjugacy dropped as negligible.
    pub y_pruned_mass: f64,
    pub y_modes: usize,
    pub checks: Vec<BoundCheck>,
    /// Set when the step stopped before completing its checks.
    pub aborted: Option<String>,
}

impl StepDiagnostics {
    pub fn failed_checks(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: measured {:e} > {:e}", c.name, c.measured, c.claimed))
            .collect();
        if let Some(a) = &self.aborted {
            v.push(a.clone());
        }
        v
    }

    pub fn passed(&self) -> bool {
        self.aborted.is_none() && self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KamState {
    pub nu: usize,
    /// `A_ν = α_νJ`.
    pub alpha: f64,
    pub f: FourierMatrixSeries,
    pub r: f64,
    pub eps: f64,
    /// `Y_0 ⋯ Y_{ν−1}`.
    pub y_accum: FourierMatrixSeries,
    /// `Y_{ν−1}⁻¹ ⋯ Y_0⁻¹`.
    pub y_inv_accum: FourierMatrixSeries,
    /// Fibered rotation number estimate of the original cocycle, if known.
    pub rho: Option<f64>,
}

impl KamState {
    pub fn initial(alpha: f64, f: FourierMatrixSeries, schedule: &KamSchedule) -> Self {
        let d = f.d();
        KamState {
            nu: 0,
            alpha,
            f,
            r: schedule.r,
            eps: schedule.eps0,
            y_accum: FourierMatrixSeries::identity(d),
            y_inv_accum: FourierMatrixSeries::identity(d),
            rho: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReduceOptions {
    pub max_steps: usize,
    pub residual_tol: f64,
    /// Relative compression applied to products inside a step.
    pub compress_rel: Option<f64>,
    /// Relative threshold below which coefficients of `Y` are dropped.
    pub y_prune_rel: f64,
    /// Stop once `|F_ν|_{r_ν} ≤ stop_norm`; `0` means only an exactly vanishing `F`.
    pub stop_norm: f64,
    pub solve_mode: SolveMode,
    /// Run [`small_divisor_guard`] at each step (advisory).
    pub guard: bool,
    /// Estimate `ρ` and check its arithmetic condition before starting (advisory).
    pub rho_check: bool,
    pub rotation_horizon: f64,
    pub exec: Execution,
}

impl Default for ReduceOptions {
    fn default() -> Self {
        ReduceOptions {
            max_steps: DEFAULT_MAX_STEPS,
            residual_tol: 1e-6,
            compress_rel: Some(1e-16),
            y_prune_rel: 1e-18,
            stop_norm: 0.0,
            solve_mode: SolveMode::Measured,
            guard: true,
            rho_check: true,
            rotation_horizon: 1000.0,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: KamState,
    pub y_nu: FourierMatrixSeries,
    pub diagnostics: StepDiagnostics,
}

fn step_failure(mut diag: StepDiagnostics, reason: Option<String>) -> Error {
    if reason.is_some() {
        diag.aborted = reason;
    }
    Error::StepFailure(Box::new(diag))
}

/// One step `ν → ν+1`: solve the linearised equation on `Ṫ_{N_ν}F_ν`,
/// conjugate by `Z = I + X`, renormalise the constant part and measure all
/// bounds. The step conjugacy is `Y_ν = Z·P⁻¹`.
pub fn iteration_step(
    state: &KamState,
    schedule: &KamSchedule,
    freq: &Frequency,
    opts: &ReduceOptions,
) -> Result<StepOutcome> {
    let nu = state.nu;
    let e = schedule.entry(nu).ok_or_else(|| Error::Schedule {
        reason: format!("step {nu} is beyond the {} scheduled steps", schedule.steps()),
        max_admissible_eps: None,
    })?;
    let mut ctx = NormContext::new(schedule.weight.clone(), e.r)?.with_exec(opts.exec);
    ctx.compress_rel = opts.compress_rel;
    let r_next = e.r_next();
    let ctx_next = ctx.at_radius(r_next)?;

    let mut diag = StepDiagnostics {
        nu,
        eps: e.eps,
        n: e.n,
        n_trunc: e.n_trunc,
        psi_n: e.psi_n,
        sigma: e.sigma,
        r: e.r,
        r_next,
        alpha: state.alpha,
        ..Default::default()
    };
    let f = &state.f;
    diag.f_norm = ctx.norm(f);
    diag.checks.push(BoundCheck::le("(H_nu) |F_nu|_{r_nu} <= eps_nu", diag.f_norm, e.eps, 0.0));
    diag.checks.push(BoundCheck::le("(H_nu) eps_nu <= alpha_nu/4", e.eps, state.alpha / 4.0, 0.0));

    let g = f.truncate(e.n_trunc, true).without_tail();
    diag.g_norm = ctx.norm(&g);
    diag.g_modes = g.len();
    if opts.guard {
        diag.guard = Some(small_divisor_guard(state.alpha, freq, e.n_trunc, e.psi_n, opts.exec)?);
    }
    let sol = match solve_cohomological(state.alpha, &g, freq, e.n_trunc, e.psi_n, opts.solve_mode) {
        Ok(s) => s,
        Err(err) => return Err(step_failure(diag, Some(format!("cohomological solver: {err}")))),
    };
    diag.solver_min_divisor = sol.min_divisor;
    diag.solver_below_threshold = sol.below_threshold;
    let x = sol.x;
    diag.x_norm = ctx.norm(&x);
    diag.checks.push(BoundCheck::le("|X|_{r_nu} <= 2 Psi(N_nu) |G|_{r_nu}", diag.x_norm, 2.0 * e.psi_n * diag.g_norm, 0.0));
    diag.checks.push(BoundCheck::le("|X|_{r_nu} <= 2 Psi(N_nu) eps_nu", diag.x_norm, 2.0 * e.psi_n * e.eps, 0.0));

    let z_inv = match neumann_inverse(&x, &ctx) {
        Ok(z) => z,
        Err(err) => return Err(step_failure(diag, Some(format!("(I+X)^-1: {err}")))),
    };
    diag.neumann_terms = z_inv.terms;
    diag.z_inv_norm = ctx.norm(&z_inv.inverse);
    diag.checks.push(BoundCheck::le("|(I+X)^-1|_{r_nu} <= 2", diag.z_inv_norm, 2.0, 0.0));

    // B = αJ + traceless part of F̂(0); the (tiny) trace part stays in R.
    let (mean, tr) = f.average_and_trace();
    let half_tr = Mat2::identity().scale(0.5 * tr);
    let mean_traceless = mean.re() - half_tr;
    diag.checks.push(BoundCheck::le("|F_nu(0)| <= alpha_nu/4", mean_traceless.norm(), state.alpha / 4.0, 0.0));
    if !diag.passed() {
        return Err(step_failure(diag, None));
    }

    let bracket = f.high_modes(e.n_trunc).add(&ctx.mul(f, &x)?)?.sub(&x.right_mul(&mean))?;
    let r_series = ctx.mul(&z_inv.inverse, &bracket)?.add_constant(&half_tr.to_complex());
    diag.r_norm = ctx_next.norm(&r_series);
    diag.checks.push(BoundCheck::le("|R_nu|_{r_nu - sigma_nu} <= eps_nu/16", diag.r_norm, e.eps / 16.0, 0.0));

    let nf = match perturbed_normal_form(state.alpha, &mean_traceless) {
        Ok(nf) => nf,
        Err(err) => return Err(step_failure(diag, Some(format!("perturbed normal form: {err}")))),
    };
    diag.alpha_next = nf.alpha;
    diag.checks.push(BoundCheck::le("alpha_{nu+1} in [alpha_nu/2, 3 alpha_nu/2]", (nf.alpha - state.alpha).abs(), 0.5 * state.alpha, 0.0));

    let f_next = r_series.conjugate_by(&nf.p, &nf.p_inv);
    diag.f_next_norm = ctx_next.norm(&f_next);
    diag.f_next_tail = f_next.tail_bound();
    diag.f_next_modes = f_next.len();
    diag.contraction = if diag.f_norm > 0.0 { diag.f_next_norm / diag.f_norm } else { 0.0 };
    diag.checks.push(BoundCheck::le("|F_{nu+1}|_{r_{nu+1}} <= eps_{nu+1}", diag.f_next_norm, e.eps / 4.0, 0.0));
    diag.trace_mean_next = f_next.average_and_trace().1;
    diag.checks.push(BoundCheck::le("|tr <F_{nu+1}>| <= 1e-10", diag.trace_mean_next.abs(), TRACE_TOL, 0.0));

    let p_inv = nf.p_inv.to_complex();
    let y_nu = x.add_constant(&CMat2::identity()).right_mul(&p_inv);
    diag.y_minus_i_norm = ctx.norm(&y_nu.add_constant(&-CMat2::identity()));
    diag.checks.push(BoundCheck::le("|Y_nu - I|_{r_nu} <= 8 Psi(N_nu) eps_nu", diag.y_minus_i_norm, 8.0 * e.psi_n * e.eps, 0.0));
    let y_nu_inv = z_inv.inverse.left_mul(&nf.p.to_complex());

    let mut y_accum = multiply_with(&state.y_accum, &y_nu, opts.exec)?;
    y_accum.compress(&schedule.weight, e.r, opts.y_prune_rel);
    diag.y_pruned_mass = y_accum.tail_bound();
    let y_accum = y_accum.without_tail();
    diag.y_modes = y_accum.len();
    let y_inv_accum = ctx.mul(&y_nu_inv, &state.y_inv_accum)?;

    let all_finite = [diag.f_next_norm, diag.x_norm, diag.r_norm, diag.y_minus_i_norm].iter().all(|v| v.is_finite());
    if !all_finite {
        return Err(step_failure(diag, Some("non-finite norm".into())));
    }
    if !diag.passed() {
        return Err(step_failure(diag, None));
    }
    let next = KamState {
        nu: nu + 1,
        alpha: nf.alpha,
        f: f_next,
        r: r_next,
        eps: e.eps / 4.0,
        y_accum,
        y_inv_accum,
        rho: state.rho,
    };
    Ok(StepOutcome { state: next, y_nu, diagnostics: diag })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `|∂_ωY − (A+F)Y + YB|_{r_eval}` over the stored coefficients.
    pub norm: f64,
    /// `max_θ ‖∂_ωY(θ) − (A+F(θ))Y(θ) + Y(θ)B‖` over the sample points.
    pub grid_max: f64,
    pub grid_points: usize,
    pub r_eval: f64,
}

/// SplitMix64; a fixed stream of sample points keeps the oracle deterministic.
fn splitmix(state: &mut u64) -> f64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Residual of the conjugacy equation built from series primitives only,
/// plus a pointwise check at 100 pseudo-random angles.
pub fn conjugacy_residual(
    y: &FourierMatrixSeries,
    c: &CocycleSpec,
    b: &Mat2,
    weight: &WeightSpec,
    r_eval: f64,
    exec: Execution,
) -> Result<ResidualReport> {
    let ctx = NormContext::new(weight.clone(), r_eval)?.with_exec(exec);
    let dy = y.directional_derivative(&c.freq)?;
    let a_plus_f = c.f.add_constant(&c.a.to_complex());
    let res = dy.sub(&ctx.mul(&a_plus_f, y)?)?.add(&y.right_mul(&b.to_complex()))?;
    let norm = ctx.norm(&res);

    let points = 100;
    let mut seed = 0x5EED_u64;
    let bc = b.to_complex();
    let mut grid_max: f64 = 0.0;
    for _ in 0..points {
        let theta: Vec<f64> = (0..c.d()).map(|_| splitmix(&mut seed)).collect();
        let yv = y.evaluate(&theta);
        let m = c.a.to_complex() + c.f.evaluate(&theta);
        let pointwise = dy.evaluate(&theta) - m * yv + yv * bc;
        grid_max = grid_max.max(pointwise.norm());
    }
    Ok(ResidualReport { norm, grid_max, grid_points: points, r_eval })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoCheck {
    pub estimate: Option<RotationEstimate>,
    pub condition: Option<RotationCondition>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    /// `"schedule"` or `"step"`: which part of the driver stopped.
    pub stage: Option<String>,
    pub kind: String,
    pub message: String,
    pub max_admissible_eps: Option<f64>,
}

impl From<&Error> for FailureRecord {
    fn from(e: &Error) -> Self {
        let max_admissible_eps = match e {
            Error::Schedule { max_admissible_eps, .. } => *max_admissible_eps,
            _ => None,
        };
        FailureRecord { stage: None, kind: e.kind().into(), message: e.to_string(), max_admissible_eps }
    }
}

impl FailureRecord {
    pub fn at(stage: &str, e: &Error) -> Self {
        FailureRecord { stage: Some(stage.into()), ..FailureRecord::from(e) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducibilityReport {
    pub converged: bool,
    pub failure: Option<FailureRecord>,
    pub normal_form: EllipticNormalForm,
    /// `|P₀FP₀⁻¹|_r`, the `ε` of the normalised cocycle.
    pub eps: f64,
    pub schedule: Option<KamSchedule>,
    pub rho_check: Option<RhoCheck>,
    pub steps: Vec<StepDiagnostics>,
    pub completed_steps: usize,
    pub a_inf: Mat2,
    /// Conjugacy in the original coordinates: `∂_ωY = (A+F)Y − Y·A_∞` up to
    /// the residual.
    pub y: FourierMatrixSeries,
    /// Product of the step conjugacies, in the normalised coordinates.
    pub y_normalized: FourierMatrixSeries,
    pub y_inv_normalized: FourierMatrixSeries,
    pub final_f_norm: f64,
    pub final_radius: f64,
    pub eval_radius: f64,
    pub residual: Option<ResidualReport>,
    pub residual_tol: f64,
    pub bound_checks: Vec<BoundCheck>,
}

impl ReducibilityReport {
    pub fn y_minus_i_check(&self) -> Option<&BoundCheck> {
        self.bound_checks.iter().find(|c| c.name.starts_with("|Y - I|"))
    }
}

fn rho_check(c: &CocycleSpec, psi: &PsiFunction, k: u32, opts: &ReduceOptions) -> RhoCheck {
    let step = 0.5 * MAX_STEP_SCALE / c.size().max(1e-300);
    let estimate = match fibered_rotation_number(c, opts.rotation_horizon, step) {
        Ok(e) => e,
        Err(err) => return RhoCheck { estimate: None, condition: None, note: Some(err.to_string()) },
    };
    match check_rotation_condition(estimate.value, &c.freq, psi, k.min(psi.kmax()), opts.exec) {
        Ok(cond) => RhoCheck { estimate: Some(estimate), condition: Some(cond), note: None },
        Err(err) => RhoCheck { estimate: Some(estimate), condition: None, note: Some(err.to_string()) },
    }
}

/// Reduces `(ω, A + F)` to a constant elliptic system.
///
/// Invalid inputs are errors; schedule and step failures are reported with
/// `converged = false` and the diagnostics gathered so far.
pub fn reduce(c: &CocycleSpec, psi: &PsiFunction, weight: &WeightSpec, opts: &ReduceOptions) -> Result<ReducibilityReport> {
    if psi.d() != c.d() {
        return Err(Error::Input(format!("Ψ table has dimension {}, cocycle {}", psi.d(), c.d())));
    }
    let d = c.d();
    let nf0 = real_normal_form(&c.a)?;
    let f0 = c.f.conjugate_by(&nf0.p, &nf0.p_inv);
    let eps = f0.weighted_norm(weight, c.r)?;
    let eval_radius = c.r / 2.0;

    let mut report = ReducibilityReport {
        converged: false,
        failure: None,
        normal_form: nf0,
        eps,
        schedule: None,
        rho_check: None,
        steps: Vec::new(),
        completed_steps: 0,
        a_inf: c.a,
        y: FourierMatrixSeries::identity(d),
        y_normalized: FourierMatrixSeries::identity(d),
        y_inv_normalized: FourierMatrixSeries::identity(d),
        final_f_norm: eps,
        final_radius: c.r,
        eval_radius,
        residual: None,
        residual_tol: opts.residual_tol,
        bound_checks: Vec::new(),
    };

    if eps == 0.0 {
        let res = conjugacy_residual(&report.y, c, &c.a, weight, eval_radius, opts.exec)?;
        report.bound_checks.push(BoundCheck::le("residual <= tol", res.norm, opts.residual_tol, 0.0));
        report.residual = Some(res);
        report.converged = report.bound_checks.iter().all(|b| b.passed);
        return Ok(report);
    }

    let schedule = match build_schedule(c.r, eps, nf0.alpha, weight, psi, opts.max_steps) {
        Ok(s) => s,
        Err(err) => {
            if opts.rho_check {
                report.rho_check = Some(rho_check(c, psi, psi.kmax().min(50), opts));
            }
            report.failure = Some(FailureRecord::at("schedule", &err));
            return Ok(report);
        }
    };
    let mut state = KamState::initial(nf0.alpha, f0, &schedule);
    if opts.rho_check {
        let rc = rho_check(c, psi, schedule.n0, opts);
        state.rho = rc.estimate.as_ref().map(|e| e.value);
        report.rho_check = Some(rc);
    }
    report.schedule = Some(schedule.clone());

    let mut f_norm = eps;
    while state.nu < opts.max_steps {
        let vanished = state.f.is_zero() && state.f.tail_bound() == 0.0;
        if vanished || (opts.stop_norm > 0.0 && f_norm <= opts.stop_norm) {
            break;
        }
        match iteration_step(&state, &schedule, &c.freq, opts) {
            Ok(out) => {
                f_norm = out.diagnostics.f_next_norm;
                report.steps.push(out.diagnostics);
                state = out.state;
            }
            Err(Error::StepFailure(diag)) => {
                let err = Error::StepFailure(diag.clone());
                report.failure = Some(FailureRecord::at("step", &err));
                report.steps.push(*diag);
                break;
            }
            Err(err) => {
                report.failure = Some(FailureRecord::at("step", &err));
                break;
            }
        }
    }
    report.completed_steps = state.nu;
    report.final_f_norm = f_norm;
    report.final_radius = state.r;

    let a_inf = Mat2::j().scale(state.alpha);
    let y = state.y_accum.left_mul(&nf0.p_inv.to_complex());
    let res = conjugacy_residual(&y, c, &a_inf, weight, eval_radius, opts.exec)?;

    let ctx_eval = NormContext::new(weight.clone(), eval_radius)?;
    let y_minus_i = ctx_eval.norm(&state.y_accum.add_constant(&-CMat2::identity()));
    let checks = &mut report.bound_checks;
    checks.push(BoundCheck::le(
        "|Y - I|_{r/2} <= 32 Psi(N0) eps",
        y_minus_i,
        32.0 * schedule.psi_n0 * eps,
        0.0,
    ));
    checks.push(BoundCheck::le("|Y|_{r/2} <= 2", ctx_eval.norm(&state.y_accum), 2.0, 0.0));
    checks.push(BoundCheck::le("|Y^-1|_{r/2} <= 2", ctx_eval.norm(&state.y_inv_accum), 2.0, 0.0));
    checks.push(BoundCheck::le("sum sigma_nu <= r/2", schedule.sigma_sum_projected, c.r / 2.0, 0.0));
    checks.push(BoundCheck::le("residual_{r/2} <= tol", res.norm, opts.residual_tol, 0.0));

    report.a_inf = a_inf;
    report.y = y;
    report.y_normalized = state.y_accum;
    report.y_inv_normalized = state.y_inv_accum;
    report.residual = Some(res);
    report.converged = report.failure.is_none()
        && report.bound_checks.iter().all(|b| b.passed)
        && report.steps.iter().all(|s| s.passed());
    Ok(report)
}

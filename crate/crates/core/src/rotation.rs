//! Fibered rotation number and maximal Lyapunov exponent of the
//! quasi-periodic linear system `x′ = (A + F(tω)) x`.
//!
//! The rotation number integrates the projected angle equation
//! `φ′ = 2a cosφ sinφ − (b+c) cos²φ + b` for `M = [[a,b],[c,−a]]` with
//! classical RK4 from `φ(0) = 0`, and removes the bounded offset by
//! Richardson extrapolation across `T` and `T/2`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::arithmetics::{Frequency, TWO_PI};
use crate::fourier::FourierMatrixSeries;
use crate::mat2::{CMat2, Mat2};
use crate::{Error, Execution, Result};

/// Largest admissible `step·(‖A‖ + |F|₀)`.
pub const MAX_STEP_SCALE: f64 = 0.1;

/// Time between QR renormalisations of the fundamental matrix.
pub const RENORMALIZATION_INTERVAL: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocycleSpec {
    pub freq: Frequency,
    pub a: Mat2,
    pub f: FourierMatrixSeries,
    pub r: f64,
}

impl CocycleSpec {
    pub fn new(freq: Frequency, a: Mat2, f: FourierMatrixSeries, r: f64) -> Result<Self> {
        if f.d() != freq.d() {
            return Err(Error::Input(format!("perturbation has dimension {}, frequency {}", f.d(), freq.d())));
        }
        if !(r > 0.0) {
            return Err(Error::Domain(format!("radius must be positive, got {r}")));
        }
        if !a.is_finite() || a.trace().abs() > 1e-12 * a.max_abs().max(1.0) {
            return Err(Error::Input("constant part must be a finite traceless matrix".into()));
        }
        if !f.real_symmetric() {
            return Err(Error::Input("perturbation must be a real (conjugate-symmetric) series".into()));
        }
        let scale = f.coefficient_sum().max(1.0);
        if let Some((k, _)) = f.iter().find(|(_, c)| c.trace().norm() > 1e-12 * scale) {
            return Err(Error::Input(format!("perturbation coefficient at {:?} is not traceless", k.0)));
        }
        Ok(CocycleSpec { freq, a, f, r })
    }

    /// Unperturbed cocycle `(ω, A)`.
    pub fn constant(freq: Frequency, a: Mat2) -> Result<Self> {
        let d = freq.d();
        CocycleSpec::new(freq, a, FourierMatrixSeries::zero(d), 1.0)
    }

    pub fn d(&self) -> usize {
        self.freq.d()
    }

    /// `A + F(θ)`.
    pub fn matrix_at(&self, theta: &[f64]) -> Mat2 {
        self.a + self.f.evaluate_real(theta)
    }

    /// `‖A‖ + |F|₀`, the scale that bounds the step size.
    pub fn size(&self) -> f64 {
        self.a.norm() + self.f.coefficient_sum()
    }
}

/// `t ↦ A + F(tω)` with the modes flattened for repeated evaluation.
struct Evaluator {
    constant: Mat2,
    /// `(2π k·ω, 2·f̂(k))` over canonical `k`; contributes `Re(c e^{iνt})`.
    modes: Vec<(f64, CMat2)>,
}

impl Evaluator {
    fn new(c: &CocycleSpec) -> Self {
        let mut constant = c.a;
        let mut modes = Vec::new();
        for (k, coef) in c.f.iter() {
            if k.is_zero() {
                constant += coef.re();
            } else if k.is_canonical() {
                modes.push((TWO_PI * c.freq.dot(&k.0), coef.scale_re(2.0)));
            }
        }
        Evaluator { constant, modes }
    }

    #[inline]
    fn at(&self, t: f64) -> Mat2 {
        let mut acc = CMat2::zero();
        for (nu, c) in &self.modes {
            acc += c.scale(Complex64::from_polar(1.0, nu * t));
        }
        self.constant + acc.re()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationEstimate {
    /// Richardson-extrapolated rotation number at horizon `T`.
    pub value: f64,
    pub horizon: f64,
    /// `|R(T) − R(T/2)|` between the extrapolated estimates.
    pub error_indicator: f64,
    /// Plain `φ(T)/T`.
    pub raw: f64,
    pub method: String,
    pub steps: usize,
    pub step: f64,
}

#[inline]
fn angle_rhs(m: &Mat2, phi: f64) -> f64 {
    let [a, b, c, _] = m.row_major();
    let (s, co) = phi.sin_cos();
    2.0 * a * co * s - (b + c) * co * co + b
}

fn check_step(c: &CocycleSpec, horizon: f64, step: f64) -> Result<()> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
    }
    if !(step > 0.0) {
        return Err(Error::Domain(format!("step must be positive, got {step}")));
    }
    let scale = step * c.size();
    if scale > MAX_STEP_SCALE {
        return Err(Error::Precondition(format!(
            "step·(‖A‖+|F|₀) = {scale:e} exceeds {MAX_STEP_SCALE}; use step ≤ {:e}",
            MAX_STEP_SCALE / c.size()
        )));
    }
    Ok(())
}

pub fn fibered_rotation_number(c: &CocycleSpec, horizon: f64, step: f64) -> Result<RotationEstimate> {
    check_step(c, horizon, step)?;
    let n = 4 * ((horizon / step / 4.0).ceil() as usize).max(1);
    let h = horizon / n as f64;
    let ev = Evaluator::new(c);
    // Compensated sum: over 10⁵ steps the rounding of `φ += δ` is otherwise biased.
    let (mut phi, mut comp) = (0.0f64, 0.0f64);
    let mut checkpoints = [(0.0, 0.0); 3];
    let mut m0 = ev.at(0.0);
    for i in 0..n {
        let t = i as f64 * h;
        let mh = ev.at(t + 0.5 * h);
        let m1 = ev.at(t + h);
        let k1 = angle_rhs(&m0, phi);
        let k2 = angle_rhs(&mh, phi + 0.5 * h * k1);
        let k3 = angle_rhs(&mh, phi + 0.5 * h * k2);
        let k4 = angle_rhs(&m1, phi + h * k3);
        let delta = h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4) - comp;
        let next = phi + delta;
        comp = (next - phi) - delta;
        phi = next;
        m0 = m1;
        let done = i + 1;
        if done == n / 4 {
            checkpoints[0] = (phi, comp);
        } else if done == n / 2 {
            checkpoints[1] = (phi, comp);
        }
    }
    checkpoints[2] = (phi, comp);
    if !phi.is_finite() {
        return Err(Error::Numerical("angle integration produced a non-finite value".into()));
    }
    let diff = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0) - (a.1 - b.1);
    let [q, half, full] = checkpoints;
    let value = diff(full, half) / (0.5 * horizon);
    let previous = diff(half, q) / (0.25 * horizon);
    Ok(RotationEstimate {
        value,
        horizon,
        error_indicator: (value - previous).abs(),
        raw: (full.0 - full.1) / horizon,
        method: "rk4 angle equation, Richardson over T and T/2".into(),
        steps: n,
        step: h,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    /// Maximal exponent `(1/T) Σ ln R₁₁`.
    pub value: f64,
    /// Second exponent; the sum of both is `≈ 0` for traceless systems.
    pub second: f64,
    pub horizon: f64,
    pub renormalizations: usize,
    pub step: f64,
}

#[inline]
fn flow_rhs(m: &Mat2, x: &Mat2) -> Mat2 {
    *m * *x
}

/// Maximal Lyapunov exponent by RK4 on the fundamental matrix with QR
/// renormalisation every [`RENORMALIZATION_INTERVAL`] time units. The frame
/// starts rotated by 0.5 rad so that no invariant axis is hit by accident.
pub fn lyapunov_exponent(c: &CocycleSpec, horizon: f64, step: f64) -> Result<LyapunovEstimate> {
    check_step(c, horizon, step)?;
    let per_block = ((RENORMALIZATION_INTERVAL / step).ceil() as usize).max(1);
    let h = RENORMALIZATION_INTERVAL / per_block as f64;
    let blocks = ((horizon / RENORMALIZATION_INTERVAL).ceil() as usize).max(1);
    let total_time = blocks as f64 * RENORMALIZATION_INTERVAL;
    let ev = Evaluator::new(c);
    let (s, co) = 0.5f64.sin_cos();
    let mut x = Mat2::new(co, -s, s, co);
    let (mut l1, mut l2) = (0.0, 0.0);
    let mut t = 0.0;
    for block in 0..blocks {
        let mut m0 = ev.at(t);
        for _ in 0..per_block {
            let mh = ev.at(t + 0.5 * h);
            let m1 = ev.at(t + h);
            let k1 = flow_rhs(&m0, &x);
            let k2 = flow_rhs(&mh, &(x + k1 * (0.5 * h)));
            let k3 = flow_rhs(&mh, &(x + k2 * (0.5 * h)));
            let k4 = flow_rhs(&m1, &(x + k3 * h));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            m0 = m1;
            t += h;
        }
        if !x.is_finite() {
            return Err(Error::Numerical(format!(
                "fundamental matrix overflowed within renormalisation block {block} (t ≈ {t})"
            )));
        }
        let [a, b, cc, d] = x.row_major();
        let r11 = a.hypot(cc);
        if r11 == 0.0 {
            return Err(Error::Numerical("fundamental matrix lost rank".into()));
        }
        let (q1, q2) = (a / r11, cc / r11);
        let r12 = q1 * b + q2 * d;
        let (u, w) = (b - r12 * q1, d - r12 * q2);
        let r22 = u.hypot(w);
        l1 += r11.ln();
        l2 += r22.ln();
        x = Mat2::new(q1, u / r22, q2, w / r22);
    }
    Ok(LyapunovEstimate {
        value: l1 / total_time,
        second: l2 / total_time,
        horizon: total_time,
        renormalizations: blocks,
        step: h,
    })
}

/// Independent rotation-number estimates, possibly in parallel.
pub fn rotation_batch(specs: &[CocycleSpec], horizon: f64, step: f64, exec: Execution) -> Vec<Result<RotationEstimate>> {
    exec.map(specs, |c| fibered_rotation_number(c, horizon, step))
}

/// Independent Lyapunov estimates, possibly in parallel.
pub fn lyapunov_batch(specs: &[CocycleSpec], horizon: f64, step: f64, exec: Execution) -> Vec<Result<LyapunovEstimate>> {
    exec.map(specs, |c| lyapunov_exponent(c, horizon, step))
}

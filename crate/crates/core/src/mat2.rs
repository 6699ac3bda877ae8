//! 2×2 real and complex matrices, and normal forms of elliptic elements of
//! `sl(2,R)`.
//!
//! Conventions: `J = [[0,1],[-1,0]]`, `R = diag(1,-1)`, and the complex basis
//! change `M = (1/(1-i))·[[1,-i],[1,i]]`, which is unitary and satisfies
//! `M·J·M⁻¹ = i·R`. All norms are operator (spectral) norms.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative threshold below which `det A` counts as parabolic.
pub const ELLIPTIC_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2([[a, b], [c, d]])
    }

    pub const fn zero() -> Self {
        Mat2::new(0.0, 0.0, 0.0, 0.0)
    }

    pub const fn identity() -> Self {
        Mat2::new(1.0, 0.0, 0.0, 1.0)
    }

    /// `J = [[0,1],[-1,0]]`.
    pub const fn j() -> Self {
        Mat2::new(0.0, 1.0, -1.0, 0.0)
    }

    pub const fn diag(a: f64, d: f64) -> Self {
        Mat2::new(a, 0.0, 0.0, d)
    }

    pub fn from_row_major(v: [f64; 4]) -> Self {
        Mat2::new(v[0], v[1], v[2], v[3])
    }

    pub fn row_major(&self) -> [f64; 4] {
        [self.0[0][0], self.0[0][1], self.0[1][0], self.0[1][1]]
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn det(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn transpose(&self) -> Self {
        Mat2::new(self.0[0][0], self.0[1][0], self.0[0][1], self.0[1][1])
    }

    pub fn scale(&self, s: f64) -> Self {
        let m = self.0;
        Mat2::new(s * m[0][0], s * m[0][1], s * m[1][0], s * m[1][1])
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let m = self.0;
        Some(Mat2::new(m[1][1], -m[0][1], -m[1][0], m[0][0]).scale(1.0 / det))
    }

    /// Spectral norm, the largest singular value.
    pub fn norm(&self) -> f64 {
        self.to_complex().norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.row_major().iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn to_complex(&self) -> CMat2 {
        let m = self.0;
        CMat2::new(
            Complex64::new(m[0][0], 0.0),
            Complex64::new(m[0][1], 0.0),
            Complex64::new(m[1][0], 0.0),
            Complex64::new(m[1][1], 0.0),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.row_major().iter().all(|x| x.is_finite())
    }

    /// `P·self·P⁻¹`.
    pub fn conjugate_by(&self, p: &Mat2, p_inv: &Mat2) -> Mat2 {
        *p * *self * *p_inv
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2::new(a[0][0] + b[0][0], a[0][1] + b[0][1], a[1][0] + b[1][0], a[1][1] + b[1][1])
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        self + (-o)
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        self.scale(-1.0)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }
}

impl Mul<f64> for Mat2 {
    type Output = Mat2;
    fn mul(self, s: f64) -> Mat2 {
        self.scale(s)
    }
}

impl AddAssign for Mat2 {
    fn add_assign(&mut self, o: Mat2) {
        *self = *self + o;
    }
}

/// Complex 2×2 matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CMat2(pub [[Complex64; 2]; 2]);

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

impl CMat2 {
    pub const fn new(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Self {
        CMat2([[a, b], [c, d]])
    }

    pub const fn zero() -> Self {
        CMat2::new(C0, C0, C0, C0)
    }

    pub const fn identity() -> Self {
        CMat2::new(C1, C0, C0, C1)
    }

    pub fn entries(&self) -> [Complex64; 4] {
        [self.0[0][0], self.0[0][1], self.0[1][0], self.0[1][1]]
    }

    pub fn from_entries(e: [Complex64; 4]) -> Self {
        CMat2::new(e[0], e[1], e[2], e[3])
    }

    pub fn is_zero(&self) -> bool {
        self.entries().iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.entries().iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn trace(&self) -> Complex64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn det(&self) -> Complex64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn conj(&self) -> Self {
        let e = self.entries();
        CMat2::new(e[0].conj(), e[1].conj(), e[2].conj(), e[3].conj())
    }

    pub fn re(&self) -> Mat2 {
        let e = self.entries();
        Mat2::new(e[0].re, e[1].re, e[2].re, e[3].re)
    }

    pub fn im(&self) -> Mat2 {
        let e = self.entries();
        Mat2::new(e[0].im, e[1].im, e[2].im, e[3].im)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let e = self.entries();
        CMat2::new(s * e[0], s * e[1], s * e[2], s * e[3])
    }

    pub fn scale_re(&self, s: f64) -> Self {
        let e = self.entries();
        CMat2::new(e[0] * s, e[1] * s, e[2] * s, e[3] * s)
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if det.norm_sqr() == 0.0 || !det.is_finite() {
            return None;
        }
        let m = self.0;
        Some(CMat2::new(m[1][1], -m[0][1], -m[1][0], m[0][0]).scale(det.inv()))
    }

    /// Spectral norm from the eigenvalues of `A·A*`, evaluated without
    /// cancellation so that near-unitary matrices keep full relative accuracy.
    pub fn norm(&self) -> f64 {
        let [a, b, c, d] = self.entries();
        let p = a.norm_sqr() + b.norm_sqr();
        let t = c.norm_sqr() + d.norm_sqr();
        let q = (a * c.conj() + b * d.conj()).norm();
        (0.5 * (p + t) + (0.5 * (p - t)).hypot(q)).sqrt()
    }

    /// Largest entry modulus; cheap bound used in compression heuristics.
    pub fn max_abs(&self) -> f64 {
        self.entries().iter().fold(0.0_f64, |m, z| m.max(z.norm()))
    }
}

impl Add for CMat2 {
    type Output = CMat2;
    fn add(self, o: CMat2) -> CMat2 {
        let (a, b) = (self.0, o.0);
        CMat2::new(a[0][0] + b[0][0], a[0][1] + b[0][1], a[1][0] + b[1][0], a[1][1] + b[1][1])
    }
}

impl Sub for CMat2 {
    type Output = CMat2;
    fn sub(self, o: CMat2) -> CMat2 {
        let (a, b) = (self.0, o.0);
        CMat2::new(a[0][0] - b[0][0], a[0][1] - b[0][1], a[1][0] - b[1][0], a[1][1] - b[1][1])
    }
}

impl Neg for CMat2 {
    type Output = CMat2;
    fn neg(self) -> CMat2 {
        self.scale_re(-1.0)
    }
}

impl Mul for CMat2 {
    type Output = CMat2;
    #[inline]
    fn mul(self, o: CMat2) -> CMat2 {
        let (a, b) = (self.0, o.0);
        CMat2::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }
}

impl AddAssign for CMat2 {
    #[inline]
    fn add_assign(&mut self, o: CMat2) {
        for i in 0..2 {
            for j in 0..2 {
                self.0[i][j] += o.0[i][j];
            }
        }
    }
}

impl SubAssign for CMat2 {
    fn sub_assign(&mut self, o: CMat2) {
        for i in 0..2 {
            for j in 0..2 {
                self.0[i][j] -= o.0[i][j];
            }
        }
    }
}

/// The complex basis change `M = (1/(1-i))·[[1,-i],[1,i]]`.
pub fn complex_basis() -> CMat2 {
    let c = Complex64::new(1.0, -1.0).inv();
    let i = Complex64::i();
    CMat2::new(c, -i * c, c, i * c)
}

/// Inverse of [`complex_basis`]; `M` is unitary so this is `M*`.
pub fn complex_basis_inv() -> CMat2 {
    let m = complex_basis();
    let [a, b, c, d] = m.entries();
    CMat2::new(a.conj(), c.conj(), b.conj(), d.conj())
}

/// `‖M·J·M⁻¹ − i·R‖`, which must vanish to rounding.
pub fn complex_basis_residual() -> f64 {
    let i = Complex64::i();
    let ir = CMat2::new(i, C0, C0, -i);
    (complex_basis() * Mat2::j().to_complex() * complex_basis_inv() - ir).norm()
}

/// Real and complex normal form of an elliptic traceless matrix `A`:
/// `P·A·P⁻¹ = α·J` and `Q·A·Q⁻¹ = iα·R` with `Q = M·P`.
///
/// `P = scale·p_sl` where `p_sl` has determinant `±1` (`-1` exactly when `A`
/// is negatively oriented, i.e. `a₁₂ < 0`). The scale makes `‖P⁻¹‖ = 1`, so
/// `‖P‖ = ‖A‖/α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticNormalForm {
    pub alpha: f64,
    pub p: Mat2,
    pub p_inv: Mat2,
    pub p_sl: Mat2,
    pub p_sl_inv: Mat2,
    pub scale: f64,
    pub orientation: i8,
    pub q: CMat2,
    pub q_inv: CMat2,
}

impl EllipticNormalForm {
    /// `‖P·A·P⁻¹ − αJ‖` for the matrix the form was computed from.
    pub fn residual(&self, a: &Mat2) -> f64 {
        (a.conjugate_by(&self.p, &self.p_inv) - Mat2::j().scale(self.alpha)).norm()
    }

    /// `‖Q·A·Q⁻¹ − iαR‖`.
    pub fn complex_residual(&self, a: &Mat2) -> f64 {
        let ia = Complex64::new(0.0, self.alpha);
        let target = CMat2::new(ia, C0, C0, -ia);
        (self.q * a.to_complex() * self.q_inv - target).norm()
    }
}

fn check_traceless(a: &Mat2) -> Result<()> {
    if !a.is_finite() {
        return Err(Error::Input("matrix has non-finite entries".into()));
    }
    if a.trace().abs() > 1e-12 * a.max_abs().max(1.0) {
        return Err(Error::Input(format!("matrix is not traceless: tr = {:e}", a.trace())));
    }
    Ok(())
}

/// `α = √det A` for elliptic traceless `A`.
pub fn elliptic_rotation_number(a: &Mat2) -> Result<f64> {
    check_traceless(a)?;
    let det = a.det();
    let threshold = ELLIPTIC_TOL * a.norm().powi(2);
    if !(det > threshold) {
        return Err(Error::NotElliptic { det, threshold });
    }
    Ok(det.sqrt())
}

/// Normal form built from the eigenvector `v = (a₁₂, iα − a₁₁)` of `iα`:
/// with `S = [Re v | Im v]` one has `A·S = S·αJ`, so `P ∝ S⁻¹`.
pub fn real_normal_form(a: &Mat2) -> Result<EllipticNormalForm> {
    let alpha = elliptic_rotation_number(a)?;
    let m = a.0;
    let s = Mat2::new(m[0][1], 0.0, -m[0][0], alpha);
    let det_s = s.det();
    let orientation: i8 = if det_s > 0.0 { 1 } else { -1 };
    let s_n = s.scale(1.0 / det_s.abs().sqrt());
    let p_sl_inv = s_n;
    // Adjugate divided by the exact determinant sign keeps det p_sl = ±1.
    let p_sl = Mat2::new(s_n.0[1][1], -s_n.0[0][1], -s_n.0[1][0], s_n.0[0][0]).scale(orientation as f64);
    let scale = s_n.norm();
    let p = p_sl.scale(scale);
    let p_inv = p_sl_inv.scale(1.0 / scale);
    let q = complex_basis() * p.to_complex();
    let q_inv = p_inv.to_complex() * complex_basis_inv();
    Ok(EllipticNormalForm { alpha, p, p_inv, p_sl, p_sl_inv, scale, orientation, q, q_inv })
}

/// Normal form of `αJ + B` for a small traceless perturbation `‖B‖ ≤ α/4`.
/// The returned `alpha` field is the new rotation number `β`.
pub fn perturbed_normal_form(alpha: f64, b: &Mat2) -> Result<EllipticNormalForm> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    check_traceless(b)?;
    let nb = b.norm();
    if nb > 0.25 * alpha * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!(
            "perturbation norm {nb:e} exceeds alpha/4 = {:e}",
            alpha / 4.0
        )));
    }
    real_normal_form(&(Mat2::j().scale(alpha) + *b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_basis_diagonalises_j() {
        assert!(complex_basis_residual() < 1e-15);
        let mm = complex_basis() * complex_basis_inv();
        assert!((mm - CMat2::identity()).norm() < 1e-15);
    }

    #[test]
    fn spectral_norm_closed_form() {
        assert_eq!(Mat2::j().norm(), 1.0);
        assert!((Mat2::new(1.0, 2.0, 3.0, 4.0).norm() - 5.464985704219043).abs() < 1e-14);
        assert!((Mat2::new(0.0, 2.0, -8.0, 0.0).norm() - 8.0).abs() < 1e-14);
        let rot = Mat2::new(0.6, 0.8, -0.8, 0.6);
        assert!((rot.norm() - 1.0).abs() < 1e-16);
    }

    #[test]
    fn rotation_number_examples() {
        assert_eq!(elliptic_rotation_number(&Mat2::j().scale(0.3)).unwrap(), 0.3);
        assert_eq!(elliptic_rotation_number(&Mat2::new(0.0, 2.0, -8.0, 0.0)).unwrap(), 4.0);
        assert!(matches!(
            elliptic_rotation_number(&Mat2::diag(1.0, -1.0)),
            Err(Error::NotElliptic { .. })
        ));
        assert!(matches!(elliptic_rotation_number(&Mat2::diag(1.0, 1.0)), Err(Error::Input(_))));
    }

    #[test]
    fn normal_form_of_multiple_of_j_is_identity() {
        let nf = real_normal_form(&Mat2::j().scale(2.5)).unwrap();
        assert_eq!(nf.alpha, 2.5);
        assert_eq!(nf.p, Mat2::identity());
        assert_eq!(nf.p_inv, Mat2::identity());
    }

    #[test]
    fn normal_form_of_anisotropic_matrix() {
        let a = Mat2::new(0.0, 2.0, -8.0, 0.0);
        let nf = real_normal_form(&a).unwrap();
        assert_eq!(nf.alpha, 4.0);
        assert!(nf.residual(&a) < 1e-14);
        assert!(nf.complex_residual(&a) < 1e-13);
        assert!(nf.p.norm() <= 2.0 * 2f64.sqrt() + 1e-12, "‖P‖ = {}", nf.p.norm());
        assert!((nf.p_inv.norm() - 1.0).abs() < 1e-15);
        assert!((nf.p_sl.det() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn negatively_oriented_matrix_gets_reflection() {
        let a = Mat2::new(0.0, -1.0, 1.0, 0.0);
        let nf = real_normal_form(&a).unwrap();
        assert_eq!(nf.orientation, -1);
        assert!((nf.p_sl.det() + 1.0).abs() < 1e-14);
        assert!(nf.residual(&a) < 1e-15);
    }

    #[test]
    fn perturbed_form_examples() {
        let nf = perturbed_normal_form(1.0, &Mat2::zero()).unwrap();
        assert_eq!(nf.alpha, 1.0);
        assert_eq!(nf.p, Mat2::identity());
        let nf = perturbed_normal_form(1.0, &Mat2::j().scale(0.2)).unwrap();
        assert!((nf.alpha - 1.2).abs() < 1e-15);
        assert!((nf.p - Mat2::identity()).norm() < 1e-15);
        assert!(matches!(
            perturbed_normal_form(1.0, &Mat2::diag(0.3, -0.3)),
            Err(Error::Precondition(_))
        ));
    }
}

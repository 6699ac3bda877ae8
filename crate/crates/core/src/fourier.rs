//! Finitely supported matrix-valued Fourier series on `𝕋ᵈ` and the weighted
//! norm `|f|_r = Σ_k ‖f̂(k)‖ e^{2πΛ(|k|)r} + tail`, with weight 1 at `k = 0`.
//!
//! Coefficients are complex 2×2 matrices in a `BTreeMap` keyed by the
//! multi-index, so every traversal is lexicographic and deterministic. A
//! `real_symmetric` series keeps `f̂(−k) = conj f̂(k)` exactly.
//!
//! `tail_bound` is weighted mass that is no longer stored. It is an upper
//! bound at the radius where it was created and at every smaller radius,
//! since weights grow with `r`. Products propagate it with
//! `t_f|g| + |f|t_g + t_f t_g`, which needs a radius, so tail-carrying
//! arithmetic goes through a [`NormContext`].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::arithmetics::{Frequency, TWO_PI};
use crate::mat2::{CMat2, Mat2};
use crate::weights::WeightSpec;
use crate::{Error, Execution, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<i32>);

impl MultiIndex {
    pub fn zero(d: usize) -> Self {
        MultiIndex(vec![0; d])
    }

    /// `e_i` in dimension `d`.
    pub fn unit(d: usize, i: usize) -> Self {
        let mut k = vec![0; d];
        k[i] = 1;
        MultiIndex(k)
    }

    pub fn l1(&self) -> u32 {
        l1(&self.0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0)
    }

    /// First nonzero component positive.
    pub fn is_canonical(&self) -> bool {
        is_canonical(&self.0)
    }

    pub fn neg(&self) -> Self {
        MultiIndex(self.0.iter().map(|x| -x).collect())
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.0
    }
}

impl std::borrow::Borrow<[i32]> for MultiIndex {
    fn borrow(&self) -> &[i32] {
        &self.0
    }
}

impl From<Vec<i32>> for MultiIndex {
    fn from(v: Vec<i32>) -> Self {
        MultiIndex(v)
    }
}

#[inline]
pub fn l1(k: &[i32]) -> u32 {
    k.iter().map(|x| x.unsigned_abs()).sum()
}

fn is_canonical(k: &[i32]) -> bool {
    k.iter().find(|&&x| x != 0).is_some_and(|&x| x > 0)
}

/// `ln e^{2πΛ(|k|)r}`, with weight 1 at `k = 0`.
#[inline]
fn log_weight(weight: &WeightSpec, norm_k: u32, r: f64) -> f64 {
    if norm_k == 0 {
        0.0
    } else {
        TWO_PI * weight.value(norm_k as f64) * r
    }
}

/// `‖c‖ e^{2πΛ(|k|)r}` evaluated in log space so large weights cannot overflow
/// when the product itself is representable.
#[inline]
fn weighted(c: &CMat2, weight: &WeightSpec, norm_k: u32, r: f64) -> f64 {
    let n = c.norm();
    if n == 0.0 {
        0.0
    } else {
        (n.ln() + log_weight(weight, norm_k, r)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierMatrixSeries {
    d: usize,
    #[serde(with = "coeff_list")]
    coeffs: BTreeMap<MultiIndex, CMat2>,
    real_symmetric: bool,
    tail_bound: f64,
}

/// Coefficients as an ordered list of `(k, f̂(k))`, since JSON keys must be strings.
mod coeff_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<MultiIndex, CMat2>, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(m.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<MultiIndex, CMat2>, D::Error> {
        let v: Vec<(MultiIndex, CMat2)> = Vec::deserialize(d)?;
        Ok(v.into_iter().collect())
    }
}

impl FourierMatrixSeries {
    pub fn zero(d: usize) -> Self {
        FourierMatrixSeries { d, coeffs: BTreeMap::new(), real_symmetric: true, tail_bound: 0.0 }
    }

    pub fn constant(d: usize, m: CMat2) -> Self {
        let mut f = FourierMatrixSeries::zero(d);
        f.real_symmetric = m.im().max_abs() == 0.0;
        if !m.is_zero() {
            f.coeffs.insert(MultiIndex::zero(d), m);
        }
        f
    }

    pub fn constant_real(d: usize, m: Mat2) -> Self {
        FourierMatrixSeries::constant(d, m.to_complex())
    }

    pub fn identity(d: usize) -> Self {
        FourierMatrixSeries::constant(d, CMat2::identity())
    }

    /// Series from explicit coefficients. With `real_symmetric`, the input
    /// must already be conjugate-symmetric to `1e-13` relative; the stored
    /// series is then made exactly symmetric.
    pub fn from_coeffs<I>(d: usize, coeffs: I, real_symmetric: bool) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<i32>, CMat2)>,
    {
        let mut map: BTreeMap<MultiIndex, CMat2> = BTreeMap::new();
        for (k, c) in coeffs {
            if k.len() != d {
                return Err(Error::Input(format!("multi-index {k:?} does not have dimension {d}")));
            }
            if !c.is_finite() {
                return Err(Error::Input(format!("coefficient at {k:?} is not finite")));
            }
            *map.entry(MultiIndex(k)).or_insert_with(CMat2::zero) += c;
        }
        map.retain(|_, c| !c.is_zero());
        let mut f = FourierMatrixSeries { d, coeffs: map, real_symmetric, tail_bound: 0.0 };
        if real_symmetric {
            let scale = f.coeffs.values().map(|c| c.max_abs()).fold(0.0, f64::max);
            for (k, c) in &f.coeffs {
                let partner = f.coeffs.get(k.neg().as_slice()).copied().unwrap_or_else(CMat2::zero);
                if (partner.conj() - *c).max_abs() > 1e-13 * scale {
                    return Err(Error::Input(format!("coefficients at ±{:?} are not conjugate", k.0)));
                }
            }
            f.symmetrize();
        }
        Ok(f)
    }

    /// `Σ_k C_k cos(2πk·θ) + S_k sin(2πk·θ)` with real matrices `C_k, S_k`.
    pub fn real_trig(d: usize, modes: &[(Vec<i32>, Mat2, Mat2)]) -> Result<Self> {
        let half = Complex64::new(0.5, 0.0);
        let mut coeffs = Vec::new();
        for (k, c, s) in modes {
            let c = c.to_complex();
            let is = s.to_complex().scale(Complex64::i());
            if k.iter().all(|&x| x == 0) {
                coeffs.push((k.clone(), c));
            } else {
                coeffs.push((k.clone(), (c - is).scale(half)));
                coeffs.push((k.iter().map(|x| -x).collect(), (c + is).scale(half)));
            }
        }
        FourierMatrixSeries::from_coeffs(d, coeffs, true)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn real_symmetric(&self) -> bool {
        self.real_symmetric
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// No stored coefficients and no tail.
    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty() && self.tail_bound == 0.0
    }

    pub fn coeff(&self, k: &[i32]) -> Option<&CMat2> {
        self.coeffs.get(k)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, &CMat2)> {
        self.coeffs.iter()
    }

    /// Largest `|k|` in the support.
    pub fn max_l1(&self) -> u32 {
        self.coeffs.keys().map(|k| k.l1()).max().unwrap_or(0)
    }

    /// Adds weighted mass known to be missing from the stored coefficients.
    pub fn add_tail(&mut self, t: f64) {
        assert!(t >= 0.0, "tail mass must be non-negative");
        self.tail_bound += t;
    }

    /// Drops the tail bookkeeping; only for series known to be exact.
    pub fn without_tail(mut self) -> Self {
        self.tail_bound = 0.0;
        self
    }

    /// Rewrites the series so that conjugate symmetry holds bit-for-bit:
    /// canonical coefficients are kept, the others are their conjugates, and
    /// the mean is made real.
    pub fn symmetrize(&mut self) {
        let zero = MultiIndex::zero(self.d);
        let canon: Vec<(MultiIndex, CMat2)> =
            self.coeffs.iter().filter(|(k, _)| k.is_canonical()).map(|(k, c)| (k.clone(), *c)).collect();
        let mean = self.coeffs.get(&zero).map(|c| c.re().to_complex());
        self.coeffs.clear();
        for (k, c) in canon {
            self.coeffs.insert(k.neg(), c.conj());
            self.coeffs.insert(k, c);
        }
        if let Some(m) = mean.filter(|m| !m.is_zero()) {
            self.coeffs.insert(zero, m);
        }
        self.real_symmetric = true;
    }

    /// `|f|_r`.
    pub fn weighted_norm(&self, weight: &WeightSpec, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::Domain(format!("weighted norm needs r > 0, got {r}")));
        }
        Ok(self.stored_norm(weight, r) + self.tail_bound)
    }

    /// Weighted sum over the stored coefficients only.
    pub fn stored_norm(&self, weight: &WeightSpec, r: f64) -> f64 {
        self.coeffs.iter().map(|(k, c)| weighted(c, weight, k.l1(), r)).sum()
    }

    /// `Σ_k ‖f̂(k)‖ + tail`, an upper bound for `sup_θ ‖f(θ)‖`.
    pub fn coefficient_sum(&self) -> f64 {
        self.coeffs.values().map(|c| c.norm()).sum::<f64>() + self.tail_bound
    }

    pub fn average(&self) -> CMat2 {
        self.coeffs.get(MultiIndex::zero(self.d).as_slice()).copied().unwrap_or_else(CMat2::zero)
    }

    /// `(f̂(0), Re tr f̂(0))`.
    pub fn average_and_trace(&self) -> (CMat2, f64) {
        let a = self.average();
        (a, a.trace().re)
    }

    /// `f(θ) = Σ f̂(k) e^{2πik·θ}`; real part only when `real_symmetric`.
    pub fn evaluate(&self, theta: &[f64]) -> CMat2 {
        assert_eq!(theta.len(), self.d, "θ has the wrong dimension");
        let mut acc = CMat2::zero();
        for (k, c) in &self.coeffs {
            let phase: f64 = k.0.iter().zip(theta).map(|(&ki, &t)| ki as f64 * t).sum();
            acc += c.scale(Complex64::from_polar(1.0, TWO_PI * phase));
        }
        if self.real_symmetric {
            acc.re().to_complex()
        } else {
            acc
        }
    }

    pub fn evaluate_real(&self, theta: &[f64]) -> Mat2 {
        self.evaluate(theta).re()
    }

    /// `f(tω)`, exploiting `e^{2πik·ωt}` per mode.
    pub fn evaluate_along(&self, freq: &Frequency, t: f64) -> CMat2 {
        let mut acc = CMat2::zero();
        for (k, c) in &self.coeffs {
            acc += c.scale(Complex64::from_polar(1.0, TWO_PI * freq.dot(&k.0) * t));
        }
        if self.real_symmetric {
            acc.re().to_complex()
        } else {
            acc
        }
    }

    fn map_coeffs(&self, f: impl Fn(&MultiIndex, &CMat2) -> CMat2, real_symmetric: bool, tail: f64) -> Self {
        let mut coeffs = BTreeMap::new();
        for (k, c) in &self.coeffs {
            let v = f(k, c);
            if !v.is_zero() {
                coeffs.insert(k.clone(), v);
            }
        }
        FourierMatrixSeries { d: self.d, coeffs, real_symmetric, tail_bound: tail }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map_coeffs(|_, c| c.scale_re(s), self.real_symmetric, self.tail_bound * s.abs())
    }

    /// `M·f` for a constant matrix.
    pub fn left_mul(&self, m: &CMat2) -> Self {
        let real = self.real_symmetric && m.im().max_abs() == 0.0;
        self.map_coeffs(|_, c| *m * *c, real, self.tail_bound * m.norm())
    }

    /// `f·M` for a constant matrix.
    pub fn right_mul(&self, m: &CMat2) -> Self {
        let real = self.real_symmetric && m.im().max_abs() == 0.0;
        self.map_coeffs(|_, c| *c * *m, real, self.tail_bound * m.norm())
    }

    /// `P·f·P⁻¹` for a real constant `P`.
    pub fn conjugate_by(&self, p: &Mat2, p_inv: &Mat2) -> Self {
        let (pc, pic) = (p.to_complex(), p_inv.to_complex());
        let tail = self.tail_bound * p.norm() * p_inv.norm();
        self.map_coeffs(|_, c| pc * *c * pic, self.real_symmetric, tail)
    }

    fn combine(&self, other: &Self, sign: f64) -> Result<Self> {
        if self.d != other.d {
            return Err(Error::Input(format!("dimension mismatch: {} vs {}", self.d, other.d)));
        }
        let mut coeffs = self.coeffs.clone();
        for (k, c) in &other.coeffs {
            let e = coeffs.entry(k.clone()).or_insert_with(CMat2::zero);
            *e += c.scale_re(sign);
        }
        coeffs.retain(|_, c| !c.is_zero());
        Ok(FourierMatrixSeries {
            d: self.d,
            coeffs,
            real_symmetric: self.real_symmetric && other.real_symmetric,
            tail_bound: self.tail_bound + other.tail_bound,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.combine(other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(other, -1.0)
    }

    /// `f + M` for a constant matrix.
    pub fn add_constant(&self, m: &CMat2) -> Self {
        let mut f = self.clone();
        let zero = MultiIndex::zero(self.d);
        let e = f.coeffs.entry(zero.clone()).or_insert_with(CMat2::zero);
        *e += *m;
        if e.is_zero() {
            f.coeffs.remove(&zero);
        }
        f.real_symmetric &= m.im().max_abs() == 0.0;
        f
    }

    /// `T_N f` (keep `|k| ≤ N`) or, when `dotted`, `Ṫ_N f` (also drop `k = 0`).
    /// The tail is kept: discarded stored modes are exact, the unknown mass
    /// may sit anywhere.
    pub fn truncate(&self, n: u32, dotted: bool) -> Self {
        let mut f = self.clone();
        f.coeffs.retain(|k, _| {
            let m = k.l1();
            m <= n && !(dotted && m == 0)
        });
        f
    }

    /// `f − T_N f`, the modes with `|k| > N`.
    pub fn high_modes(&self, n: u32) -> Self {
        let mut f = self.clone();
        f.coeffs.retain(|k, _| k.l1() > n);
        f
    }

    /// `∂_ω f`: coefficient `k` multiplied by `2πi(k·ω)`. Differentiation is
    /// unbounded, so the result carries no tail; callers must account for the
    /// tail of `f` separately.
    pub fn directional_derivative(&self, freq: &Frequency) -> Result<Self> {
        if freq.d() != self.d {
            return Err(Error::Input(format!("frequency has dimension {}, series {}", freq.d(), self.d)));
        }
        Ok(self.map_coeffs(
            |k, c| c.scale(Complex64::new(0.0, TWO_PI * freq.dot(&k.0))),
            self.real_symmetric,
            0.0,
        ))
    }

    /// Removes coefficients whose weighted contribution at radius `r` is
    /// below `rel × |f|_r` and moves their exact mass into the tail.
    pub fn compress(&mut self, weight: &WeightSpec, r: f64, rel: f64) {
        let contributions: Vec<f64> = self.coeffs.iter().map(|(k, c)| weighted(c, weight, k.l1(), r)).collect();
        let total: f64 = contributions.iter().sum::<f64>() + self.tail_bound;
        let threshold = rel * total;
        let mut dropped = 0.0;
        let mut it = contributions.iter();
        self.coeffs.retain(|_, _| {
            let w = *it.next().unwrap();
            if w < threshold {
                dropped += w;
                false
            } else {
                true
            }
        });
        self.tail_bound += dropped;
    }

    /// Largest coefficientwise distance `max_k ‖f̂(k) − ĝ(k)‖`.
    pub fn max_coeff_distance(&self, other: &Self) -> f64 {
        let mut worst: f64 = 0.0;
        for (k, c) in &self.coeffs {
            let o = other.coeffs.get(k).copied().unwrap_or_else(CMat2::zero);
            worst = worst.max((*c - o).norm());
        }
        for (k, c) in &other.coeffs {
            if !self.coeffs.contains_key(k) {
                worst = worst.max(c.norm());
            }
        }
        worst
    }

    /// Record-per-coefficient text form: a header with `d`, `real_symmetric`
    /// and `tail_bound`, then `k1 … kd  re11 im11 re12 im12 re21 im21 re22 im22`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# fourier matrix series");
        let _ = writeln!(s, "d {}", self.d);
        let _ = writeln!(s, "real_symmetric {}", self.real_symmetric);
        let _ = writeln!(s, "tail_bound {:e}", self.tail_bound);
        for (k, c) in &self.coeffs {
            let idx: Vec<String> = k.0.iter().map(|x| x.to_string()).collect();
            let _ = write!(s, "{} ", idx.join(" "));
            for z in c.entries() {
                let _ = write!(s, " {:e} {:e}", z.re, z.im);
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut d: Option<usize> = None;
        let mut real_symmetric: Option<bool> = None;
        let mut tail = 0.0;
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: i + 1, message };
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks[0] {
                "d" if toks.len() == 2 => {
                    d = Some(toks[1].parse().map_err(|_| err(format!("bad dimension '{}'", toks[1])))?)
                }
                "real_symmetric" if toks.len() == 2 => {
                    real_symmetric = Some(toks[1].parse().map_err(|_| err(format!("bad flag '{}'", toks[1])))?)
                }
                "tail_bound" if toks.len() == 2 => {
                    tail = toks[1].parse().map_err(|_| err(format!("bad tail bound '{}'", toks[1])))?;
                    if !(tail >= 0.0) {
                        return Err(err("tail bound must be non-negative".into()));
                    }
                }
                _ => {
                    let d = d.ok_or_else(|| err("record before the 'd' header".into()))?;
                    if toks.len() != d + 8 {
                        return Err(err(format!("expected {} fields, found {}", d + 8, toks.len())));
                    }
                    let k = toks[..d]
                        .iter()
                        .map(|t| t.parse::<i32>().map_err(|_| err(format!("bad index '{t}'"))))
                        .collect::<Result<Vec<_>>>()?;
                    let v = toks[d..]
                        .iter()
                        .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad number '{t}'"))))
                        .collect::<Result<Vec<_>>>()?;
                    let z = |j: usize| Complex64::new(v[2 * j], v[2 * j + 1]);
                    records.push((k, CMat2::from_entries([z(0), z(1), z(2), z(3)])));
                }
            }
        }
        let d = d.ok_or(Error::Parse { line: 0, message: "missing 'd' header".into() })?;
        let mut f = FourierMatrixSeries::from_coeffs(d, records, real_symmetric.unwrap_or(false))?;
        f.tail_bound = tail;
        Ok(f)
    }
}

/// Slab size (in cells) above which the product falls back to a sparse
/// accumulator.
const DENSE_SLAB_LIMIT: usize = 1 << 18;

/// Exact Cauchy product `(fg)^(k) = Σ_{m+n=k} f̂(m)ĝ(n)` of tail-free series.
pub fn multiply(f: &FourierMatrixSeries, g: &FourierMatrixSeries) -> Result<FourierMatrixSeries> {
    multiply_with(f, g, Execution::default())
}

pub fn multiply_with(f: &FourierMatrixSeries, g: &FourierMatrixSeries, exec: Execution) -> Result<FourierMatrixSeries> {
    if f.tail_bound > 0.0 || g.tail_bound > 0.0 {
        return Err(Error::Input("series with a tail bound must be multiplied through a NormContext".into()));
    }
    convolve(f, g, exec)
}

fn convolve(f: &FourierMatrixSeries, g: &FourierMatrixSeries, exec: Execution) -> Result<FourierMatrixSeries> {
    if f.d != g.d {
        return Err(Error::Input(format!("dimension mismatch: {} vs {}", f.d, g.d)));
    }
    let d = f.d;
    let real = f.real_symmetric && g.real_symmetric;
    let mut out = FourierMatrixSeries { d, coeffs: BTreeMap::new(), real_symmetric: real, tail_bound: 0.0 };
    if f.coeffs.is_empty() || g.coeffs.is_empty() {
        return Ok(out);
    }
    let fv: Vec<(&[i32], CMat2)> = f.coeffs.iter().map(|(k, c)| (k.as_slice(), *c)).collect();
    let gv: Vec<(&[i32], CMat2)> = g.coeffs.iter().map(|(k, c)| (k.as_slice(), *c)).collect();
    let bounds = |v: &[(&[i32], CMat2)]| {
        let mut lo = vec![i32::MAX; d];
        let mut hi = vec![i32::MIN; d];
        for (k, _) in v {
            for i in 0..d {
                lo[i] = lo[i].min(k[i]);
                hi[i] = hi[i].max(k[i]);
            }
        }
        (lo, hi)
    };
    let (flo, fhi) = bounds(&fv);
    let (glo, ghi) = bounds(&gv);
    let lo: Vec<i32> = (0..d).map(|i| flo[i] + glo[i]).collect();
    let hi: Vec<i32> = (0..d).map(|i| fhi[i] + ghi[i]).collect();

    // g grouped by first coordinate (contiguous in lexicographic order).
    let g0_lo = glo[0];
    let mut g_ranges = vec![(0usize, 0usize); (ghi[0] - glo[0] + 1) as usize];
    let mut start = 0;
    while start < gv.len() {
        let c0 = gv[start].0[0];
        let mut end = start;
        while end < gv.len() && gv[end].0[0] == c0 {
            end += 1;
        }
        g_ranges[(c0 - g0_lo) as usize] = (start, end);
        start = end;
    }

    let mut strides = vec![1usize; d];
    let mut slab_cells = 1usize;
    for i in (1..d).rev() {
        strides[i] = slab_cells;
        slab_cells = slab_cells.saturating_mul((hi[i] - lo[i] + 1) as usize);
    }

    let first = if real { lo[0].max(0) } else { lo[0] };
    let slabs: Vec<i32> = (first..=hi[0]).collect();
    let dense = slab_cells <= DENSE_SLAB_LIMIT;

    let slab_terms = |&k0: &i32| -> Vec<(MultiIndex, CMat2)> {
        if dense {
            let mut buf = vec![CMat2::zero(); slab_cells];
            let mut touched = vec![false; slab_cells];
            for (m, fm) in &fv {
                let n0 = k0 - m[0];
                if n0 < glo[0] || n0 > ghi[0] {
                    continue;
                }
                let (s, e) = g_ranges[(n0 - g0_lo) as usize];
                // lo = flo + glo, so the cell of m + n splits into the two offsets.
                let base: usize = (1..d).map(|i| (m[i] - flo[i]) as usize * strides[i]).sum();
                for (n, gn) in &gv[s..e] {
                    let idx = base + (1..d).map(|i| (n[i] - glo[i]) as usize * strides[i]).sum::<usize>();
                    buf[idx] += *fm * *gn;
                    touched[idx] = true;
                }
            }
            let mut terms = Vec::new();
            for (idx, c) in buf.into_iter().enumerate() {
                if !touched[idx] || c.is_zero() {
                    continue;
                }
                let mut k = vec![0i32; d];
                k[0] = k0;
                let mut rem = idx;
                for i in 1..d {
                    k[i] = lo[i] + (rem / strides[i]) as i32;
                    rem %= strides[i];
                }
                terms.push((MultiIndex(k), c));
            }
            terms
        } else {
            let mut acc: BTreeMap<Vec<i32>, CMat2> = BTreeMap::new();
            for (m, fm) in &fv {
                let n0 = k0 - m[0];
                if n0 < glo[0] || n0 > ghi[0] {
                    continue;
                }
                let (s, e) = g_ranges[(n0 - g0_lo) as usize];
                for (n, gn) in &gv[s..e] {
                    let k: Vec<i32> = m.iter().zip(n.iter()).map(|(a, b)| a + b).collect();
                    *acc.entry(k).or_insert_with(CMat2::zero) += *fm * *gn;
                }
            }
            acc.into_iter().filter(|(_, c)| !c.is_zero()).map(|(k, c)| (MultiIndex(k), c)).collect()
        }
    };

    for terms in exec.map(&slabs, slab_terms) {
        out.coeffs.extend(terms);
    }
    if real {
        out.symmetrize();
    }
    Ok(out)
}

/// Radius, weight and compression policy for tail-aware arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct NormContext {
    pub weight: WeightSpec,
    pub radius: f64,
    /// Relative compression threshold applied after each product.
    pub compress_rel: Option<f64>,
    pub exec: Execution,
}

impl NormContext {
    pub fn new(weight: WeightSpec, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Domain(format!("radius must be positive, got {radius}")));
        }
        Ok(NormContext { weight, radius, compress_rel: None, exec: Execution::default() })
    }

    pub fn with_compression(mut self, rel: f64) -> Self {
        self.compress_rel = Some(rel);
        self
    }

    pub fn with_exec(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn at_radius(&self, radius: f64) -> Result<Self> {
        let mut c = NormContext::new(self.weight.clone(), radius)?;
        c.compress_rel = self.compress_rel;
        c.exec = self.exec;
        Ok(c)
    }

    pub fn norm(&self, f: &FourierMatrixSeries) -> f64 {
        f.stored_norm(&self.weight, self.radius) + f.tail_bound
    }

    /// `f·g` with tail propagation and optional compression at this radius.
    pub fn mul(&self, f: &FourierMatrixSeries, g: &FourierMatrixSeries) -> Result<FourierMatrixSeries> {
        let mut p = convolve(f, g, self.exec)?;
        let (tf, tg) = (f.tail_bound, g.tail_bound);
        if tf > 0.0 || tg > 0.0 {
            let sf = f.stored_norm(&self.weight, self.radius);
            let sg = g.stored_norm(&self.weight, self.radius);
            p.tail_bound = tf * sg + sf * tg + tf * tg;
        }
        if let Some(rel) = self.compress_rel {
            p.compress(&self.weight, self.radius, rel);
        }
        Ok(p)
    }
}

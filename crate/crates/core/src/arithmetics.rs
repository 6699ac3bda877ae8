//! Frequency vectors and the approximating function
//! `Ψ(K) = max_{0<|k|≤K} |2πk·ω|⁻¹`, with `|k|` the ℓ¹ norm.
//!
//! `Ψ` is tabulated by exhaustive enumeration of the ℓ¹ shells. Only the
//! half-lattice with first nonzero component positive is visited (the divisor
//! is even in `k`), so witnesses are reported in that canonical form; ties
//! are broken lexicographically, then by the smaller shell.
//!
//! The continuous model of `Ψ` is piecewise linear in `(v, lnΨ)` through the
//! record points of the table (the `K` where `Ψ` jumps, and `K = 1`). Between
//! records the table is flat, so the model is a strictly increasing majorant
//! that coincides with the table at every record. Beyond the last record it
//! continues as a power law with the log-log slope of the last decade of
//! records; anything past `Kmax` is flagged as extrapolated.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Execution, Result};

pub const TWO_PI: f64 = 2.0 * PI;

/// Below this `|k·ω|` the frequency is declared resonant.
pub const RESONANCE_TOL: f64 = 1e-15;

/// Default cap on the number of lattice points visited by one enumeration.
pub const DEFAULT_LATTICE_BUDGET: u128 = 2_000_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frequency {
    omega: Vec<f64>,
}

impl Frequency {
    pub fn new(omega: Vec<f64>) -> Result<Self> {
        if omega.is_empty() {
            return Err(Error::Input("frequency vector must have d ≥ 1 components".into()));
        }
        if omega.iter().any(|w| !w.is_finite()) {
            return Err(Error::Input("frequency vector has non-finite components".into()));
        }
        if omega.iter().all(|&w| w == 0.0) {
            return Err(Error::Input("frequency vector is zero".into()));
        }
        Ok(Frequency { omega })
    }

    /// `ω = (1, (1+√5)/2)`.
    pub fn golden() -> Self {
        Frequency { omega: vec![1.0, 0.5 * (1.0 + 5f64.sqrt())] }
    }

    /// `ω = (1, x)` with `x = [0; a₁, …, aₙ, 1, 1, 1, …]`.
    pub fn from_continued_fraction(partials: &[u64]) -> Result<Self> {
        if partials.contains(&0) {
            return Err(Error::Input("continued-fraction partial quotients must be positive".into()));
        }
        let mut t = 0.5 * (1.0 + 5f64.sqrt());
        for &a in partials.iter().rev() {
            t = a as f64 + 1.0 / t;
        }
        Frequency::new(vec![1.0, 1.0 / t])
    }

    /// `golden`, `cf:a1,a2,…` or a comma/space separated list of components.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "golden" {
            return Ok(Frequency::golden());
        }
        if let Some(rest) = s.strip_prefix("cf:") {
            let partials = rest
                .split(',')
                .map(|a| a.trim().parse::<u64>().map_err(|_| Error::Input(format!("bad partial quotient '{a}'"))))
                .collect::<Result<Vec<_>>>()?;
            return Frequency::from_continued_fraction(&partials);
        }
        let omega = s
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|_| Error::Input(format!("bad frequency component '{t}'"))))
            .collect::<Result<Vec<_>>>()?;
        Frequency::new(omega)
    }

    pub fn d(&self) -> usize {
        self.omega.len()
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    #[inline]
    pub fn dot(&self, k: &[i32]) -> f64 {
        k.iter().zip(&self.omega).map(|(&ki, &w)| ki as f64 * w).sum()
    }

    /// `|2πk·ω|`, the divisor used everywhere in the crate.
    #[inline]
    pub fn divisor(&self, k: &[i32]) -> f64 {
        (TWO_PI * self.dot(k)).abs()
    }

    pub fn sup_norm(&self) -> f64 {
        self.omega.iter().fold(0.0_f64, |m, w| m.max(w.abs()))
    }
}

/// Number of points of `ℤᵈ` with ℓ¹ norm exactly `n`.
pub fn shell_size(d: usize, n: u32) -> u128 {
    let mut prev: Vec<u128> = (0..=n).map(|m| if m == 0 { 1 } else { 2 }).collect();
    for _ in 1..d {
        let mut next = vec![0u128; n as usize + 1];
        for (m, slot) in next.iter_mut().enumerate() {
            *slot = prev[m] + 2 * (0..m).map(|j| prev[j]).sum::<u128>();
        }
        prev = next;
    }
    prev[n as usize]
}

/// Number of canonical (half-lattice) points with `0 < |k| ≤ kmax`.
pub fn canonical_ball_size(d: usize, kmax: u32) -> u128 {
    (1..=kmax).map(|n| shell_size(d, n) / 2).sum()
}

fn visit_full_shell(buf: &mut [i32], pos: usize, rem: i32, f: &mut dyn FnMut(&[i32])) {
    if pos == buf.len() - 1 {
        if rem == 0 {
            buf[pos] = 0;
            f(buf);
        } else {
            buf[pos] = -rem;
            f(buf);
            buf[pos] = rem;
            f(buf);
        }
        return;
    }
    for v in -rem..=rem {
        buf[pos] = v;
        visit_full_shell(buf, pos + 1, rem - v.abs(), f);
    }
}

fn visit_canonical_shell(buf: &mut [i32], pos: usize, n: i32, f: &mut dyn FnMut(&[i32])) {
    if n == 0 {
        return;
    }
    if pos == buf.len() - 1 {
        buf[pos] = n;
        f(buf);
        return;
    }
    buf[pos] = 0;
    visit_canonical_shell(buf, pos + 1, n, f);
    for v in 1..=n {
        buf[pos] = v;
        visit_full_shell(buf, pos + 1, n - v, f);
    }
}

/// Calls `f` on every canonical `k` with `|k| = n`, in lexicographic order.
pub fn for_each_canonical(d: usize, n: u32, mut f: impl FnMut(&[i32])) {
    let mut buf = vec![0i32; d];
    visit_canonical_shell(&mut buf, 0, n as i32, &mut f);
}

/// Minimum of `score` over each canonical shell `1..=kmax`, with the
/// lexicographically first minimiser. Shells run independently.
pub fn shell_minima<F>(d: usize, kmax: u32, exec: Execution, score: F) -> Vec<(f64, Vec<i32>)>
where
    F: Fn(&[i32]) -> f64 + Sync + Send,
{
    exec.map_range(kmax as usize, |i| {
        let mut best = f64::INFINITY;
        let mut witness = Vec::new();
        for_each_canonical(d, i as u32 + 1, |k| {
            let s = score(k);
            if s < best {
                best = s;
                witness.clear();
                witness.extend_from_slice(k);
            }
        });
        (best, witness)
    })
}

fn check_budget(d: usize, kmax: u32, budget: u128) -> Result<()> {
    let needed = canonical_ball_size(d, kmax);
    if needed > budget {
        return Err(Error::Budget { needed, budget });
    }
    Ok(())
}

/// Something that can play the role of `Ψ` in the condition integrals.
pub trait ApproximatingFunction: Sync {
    fn ln_psi(&self, v: f64) -> f64;
    fn d_ln_psi(&self, v: f64) -> f64;
    /// Points where `(lnΨ)′` jumps.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
    /// Largest `v` backed by data, for tabulated models.
    fn tabulated_up_to(&self) -> Option<f64> {
        None
    }
    fn describe(&self) -> String;
}

/// Closed-form `Ψ` models, allowed only for condition checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PsiPreset {
    /// `Ψ(v) = exp(v^β)`.
    StretchedExp { beta: f64 },
    /// `Ψ(v) = v^τ`.
    Power { tau: f64 },
}

impl PsiPreset {
    /// `exp:<beta>` or `power:<tau>`.
    pub fn parse(s: &str) -> Result<Self> {
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| Error::Input(format!("bad Ψ preset parameter '{t}'")));
        let p = if let Some(b) = s.strip_prefix("exp:") {
            PsiPreset::StretchedExp { beta: num(b)? }
        } else if let Some(t) = s.strip_prefix("power:") {
            PsiPreset::Power { tau: num(t)? }
        } else {
            return Err(Error::Input(format!("unknown Ψ preset '{s}' (expected exp:<beta> or power:<tau>)")));
        };
        match p {
            PsiPreset::StretchedExp { beta } | PsiPreset::Power { tau: beta } if !(beta > 0.0) || !beta.is_finite() => {
                Err(Error::Domain(format!("Ψ preset parameter must be positive, got {beta}")))
            }
            _ => Ok(p),
        }
    }
}

impl ApproximatingFunction for PsiPreset {
    fn ln_psi(&self, v: f64) -> f64 {
        match *self {
            PsiPreset::StretchedExp { beta } => v.powf(beta),
            PsiPreset::Power { tau } => tau * v.ln(),
        }
    }

    fn d_ln_psi(&self, v: f64) -> f64 {
        match *self {
            PsiPreset::StretchedExp { beta } => beta * v.powf(beta - 1.0),
            PsiPreset::Power { tau } => tau / v,
        }
    }

    fn describe(&self) -> String {
        match *self {
            PsiPreset::StretchedExp { beta } => format!("exp:{beta}"),
            PsiPreset::Power { tau } => format!("power:{tau}"),
        }
    }
}

/// Tabulated `Ψ` with witnesses and its monotone continuous model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiFunction {
    d: usize,
    /// `min_{0<|k|≤K} |2πk·ω|` at index `K−1`; `Ψ(K)` is its reciprocal.
    divisors: Vec<f64>,
    witnesses: Vec<Vec<i32>>,
    /// Record points `(K, lnΨ(K))`.
    anchors: Vec<(f64, f64)>,
    /// Log-log slope used beyond the last record.
    tail_slope: f64,
}

/// Lower bound on the extrapolation slope, keeping the model strictly increasing.
const MIN_TAIL_SLOPE: f64 = 1e-6;

impl PsiFunction {
    /// Builds the model from a non-decreasing table `Ψ(1..=Kmax)`.
    pub fn from_table(values: Vec<f64>, witnesses: Option<Vec<Vec<i32>>>, d: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input("Ψ table is empty".into()));
        }
        if values.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::Input("Ψ table entries must be positive and finite".into()));
        }
        if let Some(i) = (1..values.len()).find(|&i| values[i] < values[i - 1]) {
            return Err(Error::Input(format!("Ψ table is not monotone: Ψ({}) < Ψ({})", i + 1, i)));
        }
        let witnesses = witnesses.unwrap_or_else(|| vec![Vec::new(); values.len()]);
        if witnesses.len() != values.len() {
            return Err(Error::Input("Ψ table and witness column differ in length".into()));
        }
        let divisors: Vec<f64> = values.iter().map(|p| 1.0 / p).collect();
        let mut anchors = vec![(1.0, values[0].ln())];
        for k in 1..values.len() {
            if values[k] > values[k - 1] {
                anchors.push(((k + 1) as f64, values[k].ln()));
            }
        }
        let tail_slope = tail_slope(&anchors);
        Ok(PsiFunction { d, divisors, witnesses, anchors, tail_slope })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn kmax(&self) -> u32 {
        self.divisors.len() as u32
    }

    /// Table value `Ψ(K)`, `1 ≤ K ≤ Kmax`.
    pub fn value(&self, k: u32) -> f64 {
        1.0 / self.divisors[k as usize - 1]
    }

    /// `min_{0<|k|≤K} |2πk·ω| = 1/Ψ(K)`, exactly as enumerated.
    pub fn min_divisor(&self, k: u32) -> f64 {
        self.divisors[k as usize - 1]
    }

    pub fn witness(&self, k: u32) -> &[i32] {
        &self.witnesses[k as usize - 1]
    }

    pub fn table(&self) -> Vec<f64> {
        self.divisors.iter().map(|d| 1.0 / d).collect()
    }

    /// Record points `K` of the table.
    pub fn records(&self) -> Vec<u32> {
        self.anchors.iter().map(|a| a.0 as u32).collect()
    }

    pub fn tail_slope(&self) -> f64 {
        self.tail_slope
    }

    pub fn is_extrapolated(&self, v: f64) -> bool {
        v > self.kmax() as f64
    }

    /// `ln Ψ(v)` of the continuous model, `v ≥ 1`.
    pub fn ln_ext(&self, v: f64) -> f64 {
        let a = &self.anchors;
        let (v_last, l_last) = a[a.len() - 1];
        if v <= 1.0 {
            return a[0].1;
        }
        if v >= v_last {
            return l_last + self.tail_slope * (v / v_last).ln();
        }
        let i = a.partition_point(|p| p.0 <= v) - 1;
        let (v0, l0) = a[i];
        let (v1, l1) = a[i + 1];
        l0 + (l1 - l0) * (v - v0) / (v1 - v0)
    }

    /// `Ψ(v)` of the continuous model.
    pub fn ext(&self, v: f64) -> f64 {
        self.ln_ext(v).exp()
    }

    fn d_ln_ext(&self, v: f64) -> f64 {
        let a = &self.anchors;
        let v_last = a[a.len() - 1].0;
        if v >= v_last {
            return self.tail_slope / v;
        }
        let i = a.partition_point(|p| p.0 <= v.max(1.0)) - 1;
        (a[i + 1].1 - a[i].1) / (a[i + 1].0 - a[i].0)
    }

    /// Inverse of the continuous model.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        let a = &self.anchors;
        let psi1 = a[0].1.exp();
        if !(y >= psi1) {
            if y >= psi1 * (1.0 - 4.0 * f64::EPSILON) {
                return Ok(1.0);
            }
            return Err(Error::Domain(format!("Ψ⁻¹({y}) undefined below Ψ(1) = {psi1}")));
        }
        if !y.is_finite() {
            return Err(Error::Domain("Ψ⁻¹ of a non-finite value".into()));
        }
        let ly = y.ln();
        let (v_last, l_last) = a[a.len() - 1];
        if ly >= l_last {
            return Ok(v_last * ((ly - l_last) / self.tail_slope).exp());
        }
        let i = a.partition_point(|p| p.1 <= ly) - 1;
        let (v0, l0) = a[i];
        let (v1, l1) = a[i + 1];
        Ok(v0 + (ly - l0) * (v1 - v0) / (l1 - l0))
    }
}

fn tail_slope(anchors: &[(f64, f64)]) -> f64 {
    let n = anchors.len();
    if n < 2 {
        return MIN_TAIL_SLOPE;
    }
    let (v_last, l_last) = anchors[n - 1];
    let mut i = anchors.partition_point(|p| p.0 < v_last / 10.0);
    if i >= n - 1 {
        i = n - 2;
    }
    let (v0, l0) = anchors[i];
    ((l_last - l0) / (v_last / v0).ln()).max(MIN_TAIL_SLOPE)
}

impl ApproximatingFunction for PsiFunction {
    fn ln_psi(&self, v: f64) -> f64 {
        self.ln_ext(v)
    }

    fn d_ln_psi(&self, v: f64) -> f64 {
        self.d_ln_ext(v)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.anchors.iter().map(|a| a.0).collect()
    }

    fn tabulated_up_to(&self) -> Option<f64> {
        Some(self.kmax() as f64)
    }

    fn describe(&self) -> String {
        format!("table:Kmax={}", self.kmax())
    }
}

/// Tabulates `Ψ(1..=kmax)` by exhaustive enumeration.
pub fn estimate_psi(freq: &Frequency, kmax: u32, budget: u128, exec: Execution) -> Result<PsiFunction> {
    if kmax == 0 {
        return Err(Error::Domain("Kmax must be at least 1".into()));
    }
    check_budget(freq.d(), kmax, budget)?;
    let shells = shell_minima(freq.d(), kmax, exec, |k| freq.dot(k).abs());
    let mut best = f64::INFINITY;
    let mut witness: Vec<i32> = Vec::new();
    let mut divisors = Vec::with_capacity(kmax as usize);
    let mut witnesses = Vec::with_capacity(kmax as usize);
    for (m, k) in shells {
        if m <= RESONANCE_TOL {
            return Err(Error::Resonant { witness: k, value: m });
        }
        if m < best || (m == best && k < witness) {
            best = m;
            witness = k;
        }
        divisors.push((TWO_PI * best).abs());
        witnesses.push(witness.clone());
    }
    let values: Vec<f64> = divisors.iter().map(|d| 1.0 / d).collect();
    let mut psi = PsiFunction::from_table(values, Some(witnesses), freq.d())?;
    // Keep the enumerated divisors bit-for-bit rather than 1/(1/x).
    psi.divisors = divisors;
    Ok(psi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationCondition {
    pub holds: bool,
    /// `min (|2ρ ± 2πk·ω| − 1/Ψ(|k|))`; non-negative iff the condition holds.
    pub min_gap: f64,
    pub gap_witness: Vec<i32>,
    /// `min |2ρ ± 2πk·ω|`.
    pub min_divisor: f64,
    pub divisor_witness: Vec<i32>,
    pub k_checked: u32,
}

/// Checks `|2ρ ± 2πk·ω| ≥ 1/Ψ(K′)` for all `0 < |k| ≤ K′ ≤ K`. The binding
/// case is `K′ = |k|`; equality passes.
pub fn check_rotation_condition(rho: f64, freq: &Frequency, psi: &PsiFunction, k: u32, exec: Execution) -> Result<RotationCondition> {
    if k > psi.kmax() {
        return Err(Error::Precondition(format!("K = {k} exceeds the tabulated Kmax = {}", psi.kmax())));
    }
    if psi.d() != freq.d() {
        return Err(Error::Input("Ψ table and frequency have different dimensions".into()));
    }
    check_budget(freq.d(), k, DEFAULT_LATTICE_BUDGET)?;
    let two_rho = 2.0 * rho;
    let per_shell = exec.map_range(k as usize, |i| {
        let n = i as u32 + 1;
        let threshold = psi.min_divisor(n);
        let mut gap = (f64::INFINITY, Vec::new());
        let mut div = (f64::INFINITY, Vec::new());
        for_each_canonical(freq.d(), n, |kk| {
            let x = TWO_PI * freq.dot(kk);
            let v = (two_rho + x).abs().min((two_rho - x).abs());
            if v - threshold < gap.0 {
                gap = (v - threshold, kk.to_vec());
            }
            if v < div.0 {
                div = (v, kk.to_vec());
            }
        });
        (gap, div)
    });
    let mut rep = RotationCondition {
        holds: true,
        min_gap: f64::INFINITY,
        gap_witness: Vec::new(),
        min_divisor: f64::INFINITY,
        divisor_witness: Vec::new(),
        k_checked: k,
    };
    for (gap, div) in per_shell {
        if gap.0 < rep.min_gap {
            rep.min_gap = gap.0;
            rep.gap_witness = gap.1;
        }
        if div.0 < rep.min_divisor {
            rep.min_divisor = div.0;
            rep.divisor_witness = div.1;
        }
    }
    rep.holds = rep.min_gap >= 0.0;
    Ok(rep)
}

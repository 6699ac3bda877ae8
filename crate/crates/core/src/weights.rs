//! Weight functions `Λ : [1,∞) → [1,∞)` and the arithmetic conditions that
//! pair a weight with an approximating function `Ψ`.
//!
//! The four conditions, all evaluated numerically on `[v0, vmax]`:
//!
//! * Λ-Brjuno–Rüssmann: `∫ Λ′(v) lnΨ(v) / Λ(v)² dv < ∞`;
//! * its integrated-by-parts form: `∫ Ψ′(v) / (Ψ(v) Λ(v)) dv < ∞`;
//! * Λ-Rüssmann: `lnΨ(v)/Λ(v) → 0`;
//! * quasi-analyticity of the class: `∫ Λ(v)/v² dv = ∞`.
//!
//! Verdicts are numerical evidence read off the decay of per-panel
//! contributions over logarithmically spaced panels, never proofs.

use serde::{Deserialize, Serialize};

use crate::arithmetics::ApproximatingFunction;
use crate::quadrature::integrate_log_split;
use crate::{Error, Execution, Result};

/// Piecewise-linear weight through `(grid[i], values[i])`, extended beyond
/// the last node with the last slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedWeight {
    grid: Vec<f64>,
    values: Vec<f64>,
    source: Option<String>,
}

impl TabulatedWeight {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, source: Option<String>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(Error::Input(format!(
                "weight table needs at least two (v, Λ) rows of equal length, got {} and {}",
                grid.len(),
                values.len()
            )));
        }
        if grid.iter().chain(&values).any(|x| !x.is_finite()) {
            return Err(Error::Input("weight table has non-finite entries".into()));
        }
        if let Some(i) = (1..grid.len()).find(|&i| grid[i] <= grid[i - 1]) {
            return Err(Error::Input(format!("weight grid not strictly increasing at row {}", i + 1)));
        }
        if let Some(i) = (1..values.len()).find(|&i| values[i] < values[i - 1]) {
            return Err(Error::Input(format!("weight values decrease at row {}", i + 1)));
        }
        if grid[0] > 1.0 {
            return Err(Error::Input(format!("weight table must start at v ≤ 1, starts at {}", grid[0])));
        }
        let t = TabulatedWeight { grid, values, source };
        let at_one = t.value(1.0);
        if at_one < 1.0 {
            return Err(Error::Input(format!("weight table has Λ(1) = {at_one} < 1")));
        }
        Ok(t)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source(&self) -> Option<&str> {
        self.source.as_deref()
    }

    fn segment(&self, v: f64) -> usize {
        let i = self.grid.partition_point(|&g| g <= v);
        i.clamp(1, self.grid.len() - 1) - 1
    }

    fn slope(&self, i: usize) -> f64 {
        (self.values[i + 1] - self.values[i]) / (self.grid[i + 1] - self.grid[i])
    }

    fn value(&self, v: f64) -> f64 {
        let i = self.segment(v);
        self.values[i] + self.slope(i) * (v - self.grid[i])
    }

    fn derivative(&self, v: f64) -> f64 {
        self.slope(self.segment(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WeightSpec {
    /// `Λ(v) = v`, the real-analytic class.
    Analytic,
    /// `Λ(v) = v^{1/α}`, `α ≥ 1`.
    Gevrey { alpha: f64 },
    Tabulated(TabulatedWeight),
}

impl WeightSpec {
    pub fn gevrey(alpha: f64) -> Result<Self> {
        if !(alpha >= 1.0) || !alpha.is_finite() {
            return Err(Error::Domain(format!("Gevrey exponent must satisfy α ≥ 1, got {alpha}")));
        }
        Ok(WeightSpec::Gevrey { alpha })
    }

    /// Parses `analytic` or `gevrey:<alpha>`. Tables are loaded by the caller
    /// and wrapped with [`WeightSpec::Tabulated`].
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "analytic" {
            return Ok(WeightSpec::Analytic);
        }
        if let Some(a) = s.strip_prefix("gevrey:") {
            let alpha: f64 = a
                .trim()
                .parse()
                .map_err(|_| Error::Input(format!("bad Gevrey exponent '{a}'")))?;
            return WeightSpec::gevrey(alpha);
        }
        Err(Error::Input(format!("unknown weight '{s}' (expected analytic, gevrey:<alpha> or table:<path>)")))
    }

    /// The config-grammar form of this weight.
    pub fn label(&self) -> String {
        match self {
            WeightSpec::Analytic => "analytic".into(),
            WeightSpec::Gevrey { alpha } => format!("gevrey:{alpha}"),
            WeightSpec::Tabulated(t) => format!("table:{}", t.source().unwrap_or("<inline>")),
        }
    }

    /// `Λ(v)` for `v ≥ 1`.
    pub fn eval(&self, v: f64) -> Result<f64> {
        if !(v >= 1.0) {
            return Err(Error::Domain(format!("weight evaluated at v = {v} < 1")));
        }
        Ok(self.value(v))
    }

    /// `Λ(v)` without the domain check; callers guarantee `v ≥ 1`.
    #[inline]
    pub fn value(&self, v: f64) -> f64 {
        match self {
            WeightSpec::Analytic => v,
            WeightSpec::Gevrey { alpha } if *alpha == 1.0 => v,
            WeightSpec::Gevrey { alpha } => v.powf(1.0 / alpha),
            WeightSpec::Tabulated(t) => t.value(v),
        }
    }

    /// `Λ′(v)`; one-sided (right) slope for tables.
    pub fn derivative(&self, v: f64) -> f64 {
        match self {
            WeightSpec::Analytic => 1.0,
            WeightSpec::Gevrey { alpha } => v.powf(1.0 / alpha - 1.0) / alpha,
            WeightSpec::Tabulated(t) => t.derivative(v),
        }
    }

    /// Points where `Λ′` jumps.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            WeightSpec::Tabulated(t) => t.grid.clone(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubadditivityReport {
    pub holds: bool,
    /// `max Λ(x+y) − Λ(x) − Λ(y)` over the sampled pairs; positive means violated.
    pub worst_margin: f64,
    pub worst_pair: (f64, f64),
    pub pairs_checked: usize,
}

/// `Λ(x+y) − Λ(x) − Λ(y)`.
pub fn subadditivity_margin(spec: &WeightSpec, x: f64, y: f64) -> f64 {
    spec.value(x + y) - spec.value(x) - spec.value(y)
}

/// Checks `Λ(x+y) ≤ Λ(x) + Λ(y)` on the pairs of a uniform grid of
/// `⌈√samples⌉` points in `[1, vmax − 1]` with `x ≤ y` and `x + y ≤ vmax`.
pub fn verify_subadditivity(spec: &WeightSpec, vmax: f64, samples: usize, exec: Execution) -> Result<SubadditivityReport> {
    if !(vmax >= 2.0) {
        return Err(Error::Domain(format!("subadditivity needs vmax ≥ 2, got {vmax}")));
    }
    let n = ((samples.max(1) as f64).sqrt().ceil() as usize).max(2);
    let h = (vmax - 2.0) / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * h).collect();
    let rows = exec.map_range(n, |i| {
        let x = xs[i];
        let mut worst = (f64::NEG_INFINITY, (x, x), 0usize, true);
        for &y in &xs[i..] {
            if x + y > vmax * (1.0 + 1e-15) {
                break;
            }
            let m = subadditivity_margin(spec, x, y);
            let tol = 1e-12 * spec.value(x + y).max(1.0);
            worst.2 += 1;
            if m > tol {
                worst.3 = false;
            }
            if m > worst.0 {
                worst.0 = m;
                worst.1 = (x, y);
            }
        }
        worst
    });
    let mut report = SubadditivityReport {
        holds: true,
        worst_margin: f64::NEG_INFINITY,
        worst_pair: (1.0, 1.0),
        pairs_checked: 0,
    };
    for (m, pair, count, ok) in rows {
        report.pairs_checked += count;
        report.holds &= ok;
        if count > 0 && m > report.worst_margin {
            report.worst_margin = m;
            report.worst_pair = pair;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Converges,
    Diverges,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    pub v0: f64,
    pub vmax: f64,
    pub panels_per_decade: usize,
    /// Number of trailing panel ratios inspected.
    pub window: usize,
    /// Per-decade contraction of panel contributions required for "converges".
    pub converge_ratio: f64,
    /// Minimum share of the last decade in the accumulated total for "diverges".
    pub diverge_share: f64,
    pub rel_tol: f64,
    pub exec: Execution,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            v0: 1.0,
            vmax: 1e6,
            panels_per_decade: 2,
            window: 3,
            converge_ratio: 0.9,
            diverge_share: 0.1,
            rel_tol: 1e-10,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralCondition {
    /// Contribution of each panel.
    pub panels: Vec<f64>,
    /// `∫_{v_j}^{vmax}` plus the extrapolated tail, for each panel edge `v_j`.
    pub partial_tails: Vec<f64>,
    pub accumulated: f64,
    /// Geometric estimate of `∫_{vmax}^∞`, when the contributions contract.
    pub extrapolated_tail: Option<f64>,
    /// Trailing panel ratios converted to per-decade factors.
    pub per_decade_ratios: Vec<f64>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioCondition {
    /// `(v, lnΨ(v)/Λ(v))` at the panel edges.
    pub samples: Vec<(f64, f64)>,
    /// Supremum of the ratio over each panel (including table breakpoints).
    pub panel_sups: Vec<f64>,
    /// "converges" means the ratio tends to 0, i.e. the condition holds.
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub weight: String,
    pub psi: String,
    pub v0: f64,
    pub vmax: f64,
    pub panel_edges: Vec<f64>,
    pub lambda_br: IntegralCondition,
    pub br_equivalent: IntegralCondition,
    pub russmann: RatioCondition,
    pub quasi_analytic: IntegralCondition,
    pub forms_agree: bool,
    /// Where the Ψ model stops being backed by data, if inside the range.
    pub extrapolated_beyond: Option<f64>,
}

/// `Λ′(v) lnΨ(v) / Λ(v)²`.
pub fn lambda_br_integrand(spec: &WeightSpec, psi: &dyn ApproximatingFunction, v: f64) -> f64 {
    let l = spec.value(v);
    spec.derivative(v) * psi.ln_psi(v) / (l * l)
}

/// `(lnΨ)′(v) / Λ(v)`.
pub fn br_integrand(spec: &WeightSpec, psi: &dyn ApproximatingFunction, v: f64) -> f64 {
    psi.d_ln_psi(v) / spec.value(v)
}

pub fn classify_conditions(
    spec: &WeightSpec,
    psi: &dyn ApproximatingFunction,
    opts: &ClassifyOptions,
) -> Result<ConditionReport> {
    let (v0, vmax) = (opts.v0, opts.vmax);
    if !(v0 >= 1.0 && vmax > v0) {
        return Err(Error::Domain(format!("need 1 ≤ v0 < vmax, got [{v0}, {vmax}]")));
    }
    if opts.window == 0 || opts.panels_per_decade == 0 {
        return Err(Error::Input("window and panels_per_decade must be positive".into()));
    }
    let decades = (vmax / v0).log10();
    let n = ((decades * opts.panels_per_decade as f64).ceil() as usize).max(opts.window + 1);
    let factor = (vmax / v0).powf(1.0 / n as f64);
    let panels_per_decade = 1.0 / factor.log10();
    let edges: Vec<f64> = (0..=n)
        .map(|j| if j == n { vmax } else { v0 * factor.powi(j as i32) })
        .collect();
    check_monotone(psi, &edges)?;

    let mut breaks = psi.breakpoints();
    breaks.extend(spec.breakpoints());
    breaks.sort_by(f64::total_cmp);

    let tol = opts.rel_tol;
    let per_panel = opts.exec.map_range(n, |j| {
        let (a, b) = (edges[j], edges[j + 1]);
        let br = integrate_log_split(&|v| lambda_br_integrand(spec, psi, v), a, b, &breaks, tol);
        let bre = integrate_log_split(&|v| br_integrand(spec, psi, v), a, b, &breaks, tol);
        let qa = integrate_log_split(&|v| spec.value(v) / (v * v), a, b, &breaks, tol);
        let sup = panel_ratio_sup(spec, psi, a, b, &breaks);
        (br, bre, qa, sup)
    });

    let summarize = |vals: Vec<f64>| integral_condition(vals, panels_per_decade, opts);
    let lambda_br = summarize(per_panel.iter().map(|p| p.0).collect());
    let br_equivalent = summarize(per_panel.iter().map(|p| p.1).collect());
    let quasi_analytic = summarize(per_panel.iter().map(|p| p.2).collect());
    let panel_sups: Vec<f64> = per_panel.iter().map(|p| p.3).collect();
    let samples = edges.iter().map(|&v| (v, psi.ln_psi(v) / spec.value(v))).collect();
    let russmann = RatioCondition { verdict: ratio_verdict(&panel_sups, opts.window), samples, panel_sups };
    let forms_agree = lambda_br.verdict == br_equivalent.verdict;
    let extrapolated_beyond = psi.tabulated_up_to().filter(|&k| k < vmax);

    Ok(ConditionReport {
        weight: spec.label(),
        psi: psi.describe(),
        v0,
        vmax,
        panel_edges: edges,
        lambda_br,
        br_equivalent,
        russmann,
        quasi_analytic,
        forms_agree,
        extrapolated_beyond,
    })
}

fn check_monotone(psi: &dyn ApproximatingFunction, edges: &[f64]) -> Result<()> {
    let mut prev = f64::NEG_INFINITY;
    for w in edges.windows(2) {
        for i in 0..16 {
            let v = w[0] * (w[1] / w[0]).powf(i as f64 / 16.0);
            let y = psi.ln_psi(v);
            if !y.is_finite() {
                return Err(Error::Input(format!("lnΨ is not finite at v = {v}")));
            }
            if y < prev - 1e-12 * prev.abs().max(1.0) {
                return Err(Error::Input(format!("Ψ is not monotone: decreases near v = {v}")));
            }
            prev = prev.max(y);
        }
    }
    Ok(())
}

fn panel_ratio_sup(spec: &WeightSpec, psi: &dyn ApproximatingFunction, a: f64, b: f64, breaks: &[f64]) -> f64 {
    let ratio = |v: f64| psi.ln_psi(v) / spec.value(v);
    let mut sup = f64::NEG_INFINITY;
    for i in 0..=32 {
        sup = sup.max(ratio(a * (b / a).powf(i as f64 / 32.0)));
    }
    for &x in breaks.iter().filter(|&&x| x >= a && x <= b) {
        sup = sup.max(ratio(x));
    }
    sup
}

fn integral_condition(panels: Vec<f64>, panels_per_decade: f64, opts: &ClassifyOptions) -> IntegralCondition {
    let n = panels.len();
    let w = opts.window;
    let tail = &panels[n - w - 1..];
    let same_sign = tail.iter().all(|&x| x > 0.0) || tail.iter().all(|&x| x < 0.0);
    let ratios: Vec<f64> = tail.windows(2).map(|p| (p[1] / p[0]).abs()).collect();
    let per_decade_ratios: Vec<f64> = ratios.iter().map(|q| q.powf(panels_per_decade)).collect();
    let accumulated: f64 = panels.iter().sum();
    let mass: f64 = panels.iter().map(|x| x.abs()).sum();
    let last_decade_panels = (panels_per_decade.round() as usize).clamp(1, n);
    let last_decade: f64 = panels[n - last_decade_panels..].iter().sum();

    let mut extrapolated_tail = None;
    let verdict = if !same_sign {
        Verdict::Inconclusive
    } else if per_decade_ratios.iter().all(|&q| q <= opts.converge_ratio) {
        let q = ratios.iter().cloned().fold(0.0, f64::max);
        extrapolated_tail = Some(panels[n - 1] * q / (1.0 - q));
        Verdict::Converges
    } else if ratios.iter().all(|&q| q >= 1.0 - 1e-9) && last_decade.abs() > opts.diverge_share * mass {
        Verdict::Diverges
    } else {
        Verdict::Inconclusive
    };

    let extra = extrapolated_tail.unwrap_or(0.0);
    let mut partial_tails = vec![0.0; n + 1];
    partial_tails[n] = extra;
    for j in (0..n).rev() {
        partial_tails[j] = partial_tails[j + 1] + panels[j];
    }
    IntegralCondition { panels, partial_tails, accumulated, extrapolated_tail, per_decade_ratios, verdict }
}

fn ratio_verdict(sups: &[f64], window: usize) -> Verdict {
    let n = sups.len();
    let max = sups.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let last = sups[n - 1];
    let tail = &sups[n - window - 1..];
    let decreasing = tail.windows(2).all(|p| p[1] < p[0]);
    if max <= 0.0 {
        // lnΨ ≤ 0 throughout: the ratio is trivially bounded by 0 from above.
        return Verdict::Converges;
    }
    if decreasing && last <= 0.5 * max {
        Verdict::Converges
    } else if !decreasing && last >= 0.5 * max {
        Verdict::Diverges
    } else {
        Verdict::Inconclusive
    }
}

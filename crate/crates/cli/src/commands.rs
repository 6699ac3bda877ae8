//! One function per command. Each returns the JSON result, the data files to
//! write next to it, and an error block when the run did not succeed.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use kamred::arithmetics::{estimate_psi, Frequency, PsiFunction, PsiPreset};
use kamred::counterexample::{build_counterexample, certify_nonsolvability, find_resonances, negative_reduce};
use kamred::fourier::FourierMatrixSeries;
use kamred::kam::{build_schedule, reduce, ReducibilityReport};
use kamred::mat2::{real_normal_form, Mat2};
use kamred::rotation::{fibered_rotation_number, lyapunov_exponent, CocycleSpec, MAX_STEP_SCALE};
use kamred::weights::{classify_conditions, ClassifyOptions, TabulatedWeight, WeightSpec};
use kamred::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Command, ExperimentConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBlock {
    pub kind: String,
    pub message: String,
}

impl ErrorBlock {
    pub fn from_anyhow(err: &anyhow::Error) -> Self {
        let kind = match err.downcast_ref::<kamred::Error>() {
            Some(e) => e.kind().to_string(),
            None if err.downcast_ref::<toml::de::Error>().is_some() => "config".into(),
            None => "cli".into(),
        };
        ErrorBlock { kind, message: format!("{err:#}") }
    }
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub result: Value,
    /// `(file name, contents)`.
    pub files: Vec<(String, Vec<u8>)>,
    pub failure: Option<ErrorBlock>,
}

pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<Outcome> {
    let exec = cfg.execution.to_exec();
    match command {
        Command::PsiScan => psi_scan(cfg, exec),
        Command::Conditions => conditions(cfg, exec),
        Command::Reduce => reduce_cmd(cfg, exec),
        Command::Rotation => rotation(cfg, exec),
        Command::Lyapunov => lyapunov(cfg, exec),
        Command::Counterexample => counterexample(cfg, exec),
    }
}

fn frequency(cfg: &ExperimentConfig) -> Result<Frequency> {
    Frequency::parse(&cfg.frequency).context("frequency")
}

/// Reads a `v,lambda` CSV when the weight is `table:<path>`.
fn weight(cfg: &ExperimentConfig) -> Result<WeightSpec> {
    let Some(path) = cfg.weight.strip_prefix("table:") else {
        return WeightSpec::parse(&cfg.weight).context("weight");
    };
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening weight table {path}"))?;
    let (mut grid, mut values) = (Vec::new(), Vec::new());
    for (i, row) in rdr.deserialize::<(f64, f64)>().enumerate() {
        let (v, l) = row.with_context(|| format!("weight table {path}, record {}", i + 1))?;
        grid.push(v);
        values.push(l);
    }
    Ok(WeightSpec::Tabulated(TabulatedWeight::new(grid, values, Some(path.to_string()))?))
}

fn psi_table(cfg: &ExperimentConfig, freq: &Frequency, exec: Execution) -> Result<PsiFunction> {
    if cfg.psi.preset.is_some() {
        bail!("psi.preset is only allowed for the conditions command; this command enumerates Ψ from the frequency");
    }
    Ok(estimate_psi(freq, cfg.psi.kmax, cfg.psi.budget as u128, exec)?)
}

fn random_perturbation(cfg: &ExperimentConfig, d: usize, modes: usize, max_l1: u32) -> Result<FourierMatrixSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let traceless = |rng: &mut ChaCha8Rng| {
        let a = rng.gen_range(-1.0..1.0);
        Mat2::new(a, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), -a)
    };
    let mut list = Vec::with_capacity(modes);
    while list.len() < modes {
        let k: Vec<i32> = (0..d).map(|_| rng.gen_range(-(max_l1 as i32)..=max_l1 as i32)).collect();
        let l1: u32 = k.iter().map(|x| x.unsigned_abs()).sum();
        if l1 == 0 || l1 > max_l1 {
            continue;
        }
        let (c, s) = (traceless(&mut rng), traceless(&mut rng));
        list.push((k, c, s));
    }
    Ok(FourierMatrixSeries::real_trig(d, &list)?)
}

fn perturbation(cfg: &ExperimentConfig, d: usize) -> Result<FourierMatrixSeries> {
    let c = &cfg.cocycle;
    if let Some(path) = &c.f_file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return FourierMatrixSeries::from_text(&text).with_context(|| format!("parsing {}", path.display()));
    }
    if let Some(r) = &c.random {
        return random_perturbation(cfg, d, r.modes, r.max_l1);
    }
    let modes: Vec<(Vec<i32>, Mat2, Mat2)> = c
        .modes
        .iter()
        .map(|m| (m.k.clone(), Mat2::from_row_major(m.cos), Mat2::from_row_major(m.sin)))
        .collect();
    Ok(FourierMatrixSeries::real_trig(d, &modes)?)
}

/// Builds the cocycle, applying the requested rescaling of `F`.
fn cocycle(cfg: &ExperimentConfig, freq: &Frequency, weight: &WeightSpec, psi: Option<&PsiFunction>) -> Result<(CocycleSpec, Value)> {
    let c = &cfg.cocycle;
    let a = Mat2::from_row_major(c.a);
    let mut f = perturbation(cfg, freq.d())?;
    let mut scaling = json!(null);
    if c.norm.is_some() || c.threshold_fraction.is_some() {
        let nf = real_normal_form(&a)?;
        let current = f.conjugate_by(&nf.p, &nf.p_inv).weighted_norm(weight, c.r)?;
        if current == 0.0 {
            bail!("cannot rescale a vanishing perturbation");
        }
        let target = match (c.norm, c.threshold_fraction) {
            (Some(n), _) => n,
            (None, Some(frac)) => {
                let psi = psi.ok_or_else(|| anyhow!("threshold_fraction needs an enumerated Ψ table"))?;
                // N₀ does not depend on ε; any admissible ε reveals the threshold.
                let probe = build_schedule(c.r, 1e-300, nf.alpha, weight, psi, 1)?;
                frac * probe.max_admissible_eps
            }
            (None, None) => unreachable!(),
        };
        f = f.scale(target / current);
        scaling = json!({ "original_norm": current, "target_norm": target });
    }
    Ok((CocycleSpec::new(freq.clone(), a, f, c.r)?, scaling))
}

fn default_step(c: &CocycleSpec) -> f64 {
    0.5 * MAX_STEP_SCALE / c.size().max(1e-300)
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| anyhow!("{e}"))
}

fn witness_str(k: &[i32]) -> String {
    k.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

#[derive(Serialize)]
struct PsiRow {
    k: u32,
    psi: f64,
    min_divisor: f64,
    witness: String,
    record: bool,
}

fn psi_scan(cfg: &ExperimentConfig, exec: Execution) -> Result<Outcome> {
    let freq = frequency(cfg)?;
    let psi = psi_table(cfg, &freq, exec)?;
    let records = psi.records();
    let rows = (1..=psi.kmax()).map(|k| PsiRow {
        k,
        psi: psi.value(k),
        min_divisor: psi.min_divisor(k),
        witness: witness_str(psi.witness(k)),
        record: records.binary_search(&k).is_ok(),
    });
    let files = vec![("psi.csv".to_string(), csv_bytes(rows)?)];
    let result = json!({
        "frequency": freq,
        "kmax": psi.kmax(),
        "tail_slope": psi.tail_slope(),
        "records": records.iter().map(|&k| json!({
            "k": k, "psi": psi.value(k), "witness": psi.witness(k)
        })).collect::<Vec<_>>(),
    });
    Ok(Outcome { result, files, failure: None })
}

#[derive(Serialize)]
struct PanelRow {
    v_lo: f64,
    v_hi: f64,
    lambda_br: f64,
    lambda_br_tail: f64,
    br_equivalent: f64,
    quasi_analytic: f64,
    russmann_sup: f64,
}

fn conditions(cfg: &ExperimentConfig, exec: Execution) -> Result<Outcome> {
    let w = weight(cfg)?;
    let c = &cfg.conditions;
    let opts = ClassifyOptions {
        v0: c.v0,
        vmax: c.vmax,
        panels_per_decade: c.panels_per_decade,
        window: c.window,
        converge_ratio: c.converge_ratio,
        diverge_share: c.diverge_share,
        rel_tol: c.rel_tol,
        exec,
    };
    let report = match &cfg.psi.preset {
        Some(p) => classify_conditions(&w, &PsiPreset::parse(p)?, &opts)?,
        None => {
            let freq = frequency(cfg)?;
            let psi = estimate_psi(&freq, cfg.psi.kmax, cfg.psi.budget as u128, exec)?;
            classify_conditions(&w, &psi, &opts)?
        }
    };
    let e = &report.panel_edges;
    let rows: Vec<PanelRow> = (0..e.len().saturating_sub(1))
        .map(|i| PanelRow {
            v_lo: e[i],
            v_hi: e[i + 1],
            lambda_br: report.lambda_br.panels[i],
            lambda_br_tail: report.lambda_br.partial_tails[i],
            br_equivalent: report.br_equivalent.panels[i],
            quasi_analytic: report.quasi_analytic.panels[i],
            russmann_sup: report.russmann.panel_sups[i],
        })
        .collect();
    let files = vec![("conditions.csv".to_string(), csv_bytes(rows)?)];
    Ok(Outcome { result: serde_json::to_value(&report)?, files, failure: None })
}

#[derive(Serialize)]
struct StepRow {
    nu: usize,
    eps: f64,
    n: f64,
    n_trunc: u32,
    psi_n: f64,
    sigma: f64,
    r: f64,
    r_next: f64,
    alpha: f64,
    alpha_next: f64,
    f_norm: f64,
    f_next_norm: f64,
    contraction: f64,
    g_norm: f64,
    g_modes: usize,
    x_norm: f64,
    z_inv_norm: f64,
    neumann_terms: usize,
    r_norm: f64,
    y_minus_i_norm: f64,
    solver_min_divisor: f64,
    solver_below_threshold: usize,
    guard_holds: Option<bool>,
    y_modes: usize,
    y_pruned_mass: f64,
    passed: bool,
}

/// The report without the conjugacy series, which go to `.fourier` files.
fn reduce_result(rep: &ReducibilityReport) -> Result<Value> {
    let mut v = serde_json::to_value(rep)?;
    if let Value::Object(m) = &mut v {
        for key in ["y", "y_normalized", "y_inv_normalized"] {
            m.remove(key);
        }
        m.insert("y_modes".into(), json!(rep.y.len()));
    }
    Ok(v)
}

fn reduce_files(rep: &ReducibilityReport, cfg: &ExperimentConfig) -> Result<Vec<(String, Vec<u8>)>> {
    let rows = rep.steps.iter().map(|s| StepRow {
        nu: s.nu,
        eps: s.eps,
        n: s.n,
        n_trunc: s.n_trunc,
        psi_n: s.psi_n,
        sigma: s.sigma,
        r: s.r,
        r_next: s.r_next,
        alpha: s.alpha,
        alpha_next: s.alpha_next,
        f_norm: s.f_norm,
        f_next_norm: s.f_next_norm,
        contraction: s.contraction,
        g_norm: s.g_norm,
        g_modes: s.g_modes,
        x_norm: s.x_norm,
        z_inv_norm: s.z_inv_norm,
        neumann_terms: s.neumann_terms,
        r_norm: s.r_norm,
        y_minus_i_norm: s.y_minus_i_norm,
        solver_min_divisor: s.solver_min_divisor,
        solver_below_threshold: s.solver_below_threshold,
        guard_holds: s.guard.as_ref().map(|g| g.holds),
        y_modes: s.y_modes,
        y_pruned_mass: s.y_pruned_mass,
        passed: s.passed(),
    });
    let mut files = vec![("steps.csv".to_string(), csv_bytes(rows)?)];
    if cfg.output.series {
        files.push(("y.fourier".into(), rep.y.to_text().into_bytes()));
        files.push(("y_normalized.fourier".into(), rep.y_normalized.to_text().into_bytes()));
    }
    Ok(files)
}

fn reduce_failure(rep: &ReducibilityReport) -> Option<ErrorBlock> {
    if rep.converged {
        return None;
    }
    if let Some(f) = &rep.failure {
        return Some(ErrorBlock { kind: f.kind.clone(), message: f.message.clone() });
    }
    let failed: Vec<String> = rep
        .bound_checks
        .iter()
        .filter(|b| !b.passed)
        .map(|b| format!("{}: measured {:e} > {:e}", b.name, b.measured, b.claimed))
        .chain(rep.steps.iter().flat_map(|s| s.failed_checks()))
        .collect();
    Some(ErrorBlock { kind: "bound_check".into(), message: failed.join("; ") })
}

fn reduce_cmd(cfg: &ExperimentConfig, exec: Execution) -> Result<Outcome> {
    let freq = frequency(cfg)?;
    let w = weight(cfg)?;
    let psi = psi_table(cfg, &freq, exec)?;
    let (c, scaling) = cocycle(cfg, &freq, &w, Some(&psi))?;
    let rep = reduce(&c, &psi, &w, &cfg.reduce.options(exec))?;
    let mut files = reduce_files(&rep, cfg)?;
    if cfg.output.series {
        files.push(("f.fourier".into(), c.f.to_text().into_bytes()));
    }
    let mut result = reduce_result(&rep)?;
    result["scaling"] = scaling;
    Ok(Outcome { failure: reduce_failure(&rep), result, files })
}

#[derive(Serialize)]
struct RotationRow {
    horizon: f64,
    value: f64,
    error_indicator: f64,
    raw: f64,
    steps: usize,
    step: f64,
}

fn rotation(cfg: &ExperimentConfig, exec: Execution) -> Result<Outcome> {
    let freq = frequency(cfg)?;
    let w = weight(cfg)?;
    let (c, scaling) = cocycle(cfg, &freq, &w, None)?;
    let step = cfg.rotation.step.unwrap_or_else(|| default_step(&c));
    let estimates = exec
        .map(&cfg.rotation.horizons, |&h| fibered_rotation_number(&c, h, step))
        .into_iter()
        .collect::<kamred::Result<Vec<_>>>()?;
    let rows = estimates.iter().map(|e| RotationRow {
        horizon: e.horizon,
        value: e.value,
        error_indicator: e.error_indicator,
        raw: e.raw,
        steps: e.steps,
        step: e.step,
    });
    let files = vec![("rotation.csv".to_string(), csv_bytes(rows)?)];
    let result = json!({ "estimates": estimates, "scaling": scaling, "size": c.size() });
    Ok(Outcome { result, files, failure: None })
}

#[derive(Serialize)]
struct LyapunovRow {
    horizon: f64,
    value: f64,
    second: f64,
    renormalizations: usize,
    step: f64,
}

fn lyapunov(cfg: &ExperimentConfig, exec: Execution) -> Result<Outcome> {
    let freq = frequency(cfg)?;
    let w = weight(cfg)?;
    let (c, scaling) = cocycle(cfg, &freq, &w, None)?;
    let step = cfg.lyapunov.step.unwrap_or_else(|| default_step(&c));
    let estimates = exec
        .map(&cfg.lyapunov.horizons, |&h| lyapunov_exponent(&c, h, step))
        .into_iter()
        .collect::<kamred::Result<Vec<_>>>()?;
    let rows = estimates.iter().map(|e| LyapunovRow {
        horizon: e.horizon,
        value: e.value,
        second: e.second,
        renormalizations: e.renormalizations,
        step: e.step,
    });
    let files = vec![("lyapunov.csv".to_string(), csv_bytes(rows)?)];
    let result = json!({ "estimates": estimates, "scaling": scaling });
    Ok(Outcome { result, files, failure: None })
}

#[derive(Serialize)]
struct CoefficientRow {
    k: String,
    u_hat_re: f64,
    u_hat_im: f64,
    divisor: f64,
    v_hat_abs: f64,
    deviation: f64,
}

fn counterexample(cfg: &ExperimentConfig, exec: Execution) -> Result<Outcome> {
    let freq = frequency(cfg)?;
    let w = weight(cfg)?;
    let psi = psi_table(cfg, &freq, exec)?;
    let s = &cfg.counterexample;
    let chain = find_resonances(&freq, &w, &psi, s.count)?;
    let (u, c) = build_counterexample(&chain, s.rho, s.eps)?;
    let mut ev = certify_nonsolvability(&u, &freq, &chain, s.eps);
    let mut failure = None;
    let mut kam = json!(null);
    if s.run_reduce {
        let rep = negative_reduce(&c, &psi, &w, &cfg.reduce.options(exec))?;
        ev.attach_kam(&rep);
        if rep.converged {
            failure = Some(ErrorBlock {
                kind: "negative_test".into(),
                message: "the KAM driver converged on the built counterexample".into(),
            });
        }
        kam = json!({
            "converged": rep.converged,
            "failure": rep.failure,
            "completed_steps": rep.completed_steps,
            "schedule": rep.schedule,
        });
    }
    let rotation = fibered_rotation_number(&c, s.rotation_horizon, default_step(&c))?;
    let coefficient_rows = ev.coefficients.iter().map(|r| CoefficientRow {
        k: witness_str(&r.k),
        u_hat_re: r.u_hat.re,
        u_hat_im: r.u_hat.im,
        divisor: r.divisor,
        v_hat_abs: r.v_hat_abs,
        deviation: r.deviation,
    });
    let mut files = vec![
        ("coefficients.csv".to_string(), csv_bytes(coefficient_rows)?),
        ("partial_sums.csv".to_string(), csv_bytes(&ev.partial_sums)?),
    ];
    if cfg.output.series {
        files.push(("f.fourier".into(), c.f.to_text().into_bytes()));
    }
    let result = json!({
        "chain": {
            "r": chain.r,
            "c": chain.c,
            "persistence": chain.persistence,
            "modes": chain.modes,
        },
        "evidence": ev,
        "rotation": rotation,
        "kam": kam,
        "mean": u.mean(),
        "oscillation_norm": u.oscillation_norm(&w, chain.r),
    });
    Ok(Outcome { result, files, failure })
}


pub fn write_outcome_files(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<()> {
    for (name, bytes) in files {
        std::fs::write(dir.join(name), bytes).with_context(|| format!("writing {}", dir.join(name).display()))?;
    }
    Ok(())
}

//! Subcommand bodies. Each returns an [`Output`]; rendering and exit codes live in `main`.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::{json, Map, Value};

use moran_core::closedform::{f_coefficient, mean_distance_coefficient, neutral_moments, Rates};
use moran_core::dual::{duality_gap, next_jump, DualExpr, DualOp};
use moran_core::engine::{run_logged, Engine, Event};
use moran_core::experiments::{
    run_convergence_sweep, run_equilibrium_moments, run_ergodicity, run_theorem5, ExperimentConfig,
};
use moran_core::genealogy::{ancestor_curve, ancestor_mean_bound};
use moran_core::generator_check::{drift_check, qv_check};
use moran_core::model::{io, make_initial, InitialKind, ModelParams, PopulationState, TypeInit};
use moran_core::rng::{self, replicate_seed};
use moran_core::stats::{mean_laplace_pair, mean_se, PhiTable, PolynomialSpec, StateView};

use crate::output::{num, Output, Table};

/// Band for the O(1/N) bias of the duality check, as `DUALITY_BIAS / N`.
const DUALITY_BIAS: f64 = 2.0;
/// Allowance added to 3 SE in the quadratic-variation comparison.
const QV_ALLOWANCE: f64 = 0.02;
const DEFAULT_LOOKBACKS: [f64; 3] = [0.5, 1.0, 2.0];

fn star_cyclic(params: &ModelParams) -> Result<PopulationState> {
    Ok(make_initial(&InitialKind::Star, params.n, params.alphabet_size(), &TypeInit::Cyclic, &mut rng::from_seed(0))?)
}

/// `e^{-λ r₁₂}`, restricted to a fit first individual when selection acts.
fn pair_statistic(params: &ModelParams, lambda: f64) -> PolynomialSpec {
    if params.alpha > 0.0 {
        PolynomialSpec::laplace_pair_marked(lambda, 0)
    } else {
        PolynomialSpec::laplace_pair(lambda)
    }
}

fn records(table: &Table) -> Value {
    let rows = table
        .rows
        .iter()
        .map(|row| {
            let obj: Map<String, Value> =
                table.columns.iter().map(|c| c.to_string()).zip(row.iter().cloned()).collect();
            Value::Object(obj)
        })
        .collect();
    Value::Array(rows)
}

fn mean_distance(s: &PopulationState) -> f64 {
    let n = s.n();
    let mut sum = 0.0;
    for k in 0..n {
        for l in k + 1..n {
            sum += s.dist(k, l);
        }
    }
    sum / (n * (n - 1) / 2) as f64
}

pub fn simulate(cfg: &ExperimentConfig, final_state: Option<&Path>, final_types: Option<&Path>) -> Result<Output> {
    let params = cfg.model.params()?;
    let e = &cfg.experiment;
    let horizon = e.horizon.unwrap_or_else(|| cfg.stationary_horizon());
    let lambda = e.lambda[0];
    let mut s = star_cyclic(&params)?;
    let mut engine = Engine::new(params.clone(), e.seed);
    let mut table = Table::new(&["t", "events", "mean_distance", "laplace_pair", "fit_frequency"]);
    let mut events = 0u64;
    let steps = (horizon / e.spacing + 1e-9).floor() as usize;
    for i in 0..=steps {
        let t = i as f64 * e.spacing;
        engine.run_until(&mut s, t, &mut |_: &Event, _: &PopulationState| events += 1);
        let fit = s.types.iter().filter(|&&u| u == 0).count() as f64 / s.n() as f64;
        table.push(vec![num(t), json!(events), num(mean_distance(&s)), num(mean_laplace_pair(&s, lambda)), num(fit)]);
    }
    if let Some(p) = final_state {
        crate::output::write_atomic(p, &io::write_matrix(&s))?;
    }
    if let Some(p) = final_types {
        crate::output::write_atomic(p, &io::write_types(&s))?;
    }
    let report = json!({ "N": params.n, "horizon": horizon, "lambda": lambda, "rows": records(&table) });
    Ok(Output { table, report, pass: None })
}

pub fn equilibrium(cfg: &ExperimentConfig) -> Result<Output> {
    let report = run_equilibrium_moments(cfg)?;
    let mut table = Table::new(&["statistic", "lambda", "simulated", "se", "closed_form", "z", "doubled_burn_in"]);
    for r in &report.rows {
        table.push(vec![
            json!(r.statistic),
            num(r.lambda),
            num(r.simulated),
            num(r.se),
            num(r.closed_form),
            num(r.z),
            num(r.doubled_burn_in),
        ]);
    }
    let pass = report.rows.iter().all(|r| r.z.abs() <= 3.0);
    Ok(Output { table, report: serde_json::to_value(&report)?, pass: Some(pass) })
}

pub fn theorem5(cfg: &ExperimentConfig) -> Result<Output> {
    let report = run_theorem5(cfg)?;
    let mut table = Table::new(&[
        "alpha",
        "laplace",
        "laplace_se",
        "raw_diff",
        "offset",
        "offset_first_order",
        "diff",
        "diff_se",
        "predicted",
        "powered",
        "sign_ok",
        "magnitude_ok",
    ]);
    for r in &report.rows {
        table.push(vec![
            num(r.alpha),
            num(r.laplace),
            num(r.laplace_se),
            num(r.raw_diff),
            num(r.offset),
            num(r.offset_first_order),
            num(r.diff),
            num(r.diff_se),
            num(r.predicted),
            json!(r.powered),
            json!(r.sign_ok),
            json!(r.magnitude_ok),
        ]);
    }
    Ok(Output { table, report: serde_json::to_value(&report)?, pass: Some(report.pass()) })
}

/// JSON: the two sides of the duality relation. CSV: the dual runs,
/// evaluated after every jump at the initial state.
pub fn duality(cfg: &ExperimentConfig, trace: bool) -> Result<Output> {
    let params = cfg.model.params()?;
    let e = &cfg.experiment;
    let t = e.horizon.unwrap_or(1.0);
    let spec = pair_statistic(&params, e.lambda[0]);
    let initial = star_cyclic(&params)?;
    let mut table = Table::new(&["replicate", "t", "degree", "value_at_reference_input"]);
    if trace {
        let n = initial.n();
        let value = |x: &DualExpr| -> Result<f64> {
            let idx: Vec<usize> = (0..x.degree()).map(|i| i % n).collect();
            Ok(x.evaluate(&StateView { state: &initial, idx: &idx })?)
        };
        for rep in 0..e.replicates {
            let mut r = rng::stream(replicate_seed(e.seed, rep as u64), 2);
            let mut x = DualExpr::leaf(spec.clone());
            let mut now = 0.0;
            table.push(vec![json!(rep), num(0.0), json!(x.degree()), num(value(&x)?)]);
            while let Some((dt, op)) = next_jump(x.degree(), &params, &mut r) {
                if now + dt > t {
                    break;
                }
                now += dt;
                if x.degree() >= 2 {
                    x.push(DualOp::Grow(dt))?;
                }
                x.push(op)?;
                table.push(vec![json!(rep), num(now), json!(x.degree()), num(value(&x)?)]);
            }
            if x.degree() >= 2 && t > now {
                x.push(DualOp::Grow(t - now))?;
                table.push(vec![json!(rep), num(t), json!(x.degree()), num(value(&x)?)]);
            }
        }
        return Ok(Output { table, report: Value::Null, pass: None });
    }
    let report = duality_gap(&initial, &spec, t, &params, e.replicates, e.seed)?;
    let band = 3.0 * report.se() + DUALITY_BIAS / params.n as f64;
    let pass = report.gap.abs() <= band;
    table = Table::new(&["lhs", "rhs", "gap", "se_lhs", "se_rhs", "N", "reps"]);
    table.push(vec![
        num(report.lhs),
        num(report.rhs),
        num(report.gap),
        num(report.se_lhs),
        num(report.se_rhs),
        json!(report.n),
        json!(report.reps),
    ]);
    Ok(Output { table, report: serde_json::to_value(report)?, pass: Some(pass) })
}

/// Drift of `r₁₂` at `h` and `h/2`, and the quadratic variation of `e^{-λ r₁₂}` over `[0, horizon]`.
pub fn generator_check(cfg: &ExperimentConfig) -> Result<Output> {
    let params = cfg.model.params()?;
    let e = &cfg.experiment;
    if !(e.h > 0.0) || e.grid == 0 {
        bail!("generator check needs h > 0 and grid > 0");
    }
    let initial = star_cyclic(&params)?;
    let drift = drift_check(&params, &PolynomialSpec::pair_distance(), &initial, e.h, e.replicates, e.seed)?;
    let t = e.horizon.unwrap_or(1.0);
    let qv = qv_check(&params, &PolynomialSpec::laplace_pair(e.lambda[0]), &initial, t, e.grid, e.replicates, e.seed)?;
    let qv_pass = (qv.qv_empirical - qv.qv_formula).abs() <= 3.0 * qv.se_qv + QV_ALLOWANCE;
    let mut merged = drift.fine;
    merged.qv_formula = qv.qv_formula;
    merged.qv_empirical = qv.qv_empirical;
    merged.se_qv = qv.se_qv;
    merged.t = t;
    let mut report = serde_json::to_value(merged)?;
    report["slope"] = num(drift.slope);
    report["drift_pass"] = json!(drift.pass);
    report["qv_pass"] = json!(qv_pass);
    report["coarse"] = serde_json::to_value(drift.coarse)?;
    let mut table = Table::new(&[
        "drift_exact",
        "drift_empirical",
        "se",
        "qv_formula",
        "qv_empirical",
        "se_qv",
        "h",
        "T",
        "reps",
        "seed",
        "slope",
        "drift_pass",
        "qv_pass",
    ]);
    table.push(vec![
        num(merged.drift_exact),
        num(merged.drift_empirical),
        num(merged.se),
        num(merged.qv_formula),
        num(merged.qv_empirical),
        num(merged.se_qv),
        num(merged.h),
        num(merged.t),
        json!(merged.reps),
        json!(merged.seed),
        num(drift.slope),
        json!(drift.pass),
        json!(qv_pass),
    ]);
    Ok(Output { table, report, pass: Some(drift.pass && qv_pass) })
}

/// Ancestor counts of the whole population at `horizon`, looking back by each configured lag.
pub fn ancestors(cfg: &ExperimentConfig) -> Result<Output> {
    let params = cfg.model.params()?;
    let e = &cfg.experiment;
    let t = e.horizon.unwrap_or(2.0);
    let lags: Vec<f64> = if e.lookbacks.is_empty() { DEFAULT_LOOKBACKS.to_vec() } else { e.lookbacks.clone() };
    if lags.iter().any(|&d| !(d > 0.0 && d <= t)) {
        bail!("lookbacks must lie in (0, horizon = {t}]");
    }
    let times: Vec<f64> = lags.iter().map(|d| t - d).collect();
    let everyone: Vec<usize> = (0..params.n).collect();
    let mut table = Table::new(&["replicate", "s", "t", "count"]);
    let mut counts = vec![Vec::new(); lags.len()];
    for rep in 0..e.replicates {
        let mut s = PopulationState::types_only(0.0, (0..params.n).map(|i| i % params.alphabet_size()).collect());
        let log = run_logged(&mut Engine::new(params.clone(), replicate_seed(e.seed, rep as u64)), &mut s, t);
        for (k, c) in ancestor_curve(&log, t, &everyone, &times)?.into_iter().enumerate() {
            counts[k].push(c as f64);
            table.push(vec![json!(rep), num(times[k]), num(t), json!(c)]);
        }
    }
    let mut summary = Vec::new();
    for (k, &d) in lags.iter().enumerate() {
        let m = mean_se(&counts[k]);
        let bound = ancestor_mean_bound(params.n as f64, d, params.gamma, params.alpha)?;
        summary.push(
            json!({ "s": num(times[k]), "t": num(t), "mean": num(m.mean), "se": num(m.se), "bound": num(bound) }),
        );
    }
    Ok(Output { table, report: json!({ "N": params.n, "rows": summary }), pass: None })
}

pub fn convergence(cfg: &ExperimentConfig) -> Result<Output> {
    let params = cfg.model.params()?;
    let spec = pair_statistic(&params, cfg.experiment.lambda[0]);
    let report = run_convergence_sweep(cfg, &spec)?;
    let mut table = Table::new(&["N", "value", "se"]);
    for r in &report.rows {
        table.push(vec![json!(r.n), num(r.value), num(r.se)]);
    }
    Ok(Output { table, report: serde_json::to_value(&report)?, pass: None })
}

pub fn ergodicity(cfg: &ExperimentConfig) -> Result<Output> {
    let report = run_ergodicity(cfg)?;
    let mut table = Table::new(&["lambda", "star", "star_se", "comb", "comb_se", "diff", "se", "initial_diff"]);
    for r in &report.rows {
        table.push(vec![
            num(r.lambda),
            num(r.star),
            num(r.star_se),
            num(r.comb),
            num(r.comb_se),
            num(r.diff),
            num(r.se),
            num(r.initial_diff),
        ]);
    }
    if report.non_ergodic {
        eprintln!("warning: a type fixed in some run; the setup is not ergodic and no verdict is given");
    }
    let pass = (!report.non_ergodic).then(|| report.pass());
    Ok(Output { table, report: serde_json::to_value(&report)?, pass })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ClosedformArgs {
    pub gamma: f64,
    pub tb: f64,
    pub tg: f64,
    pub lambda: f64,
}

pub fn closedform(a: &ClosedformArgs) -> Result<Output> {
    let r = Rates::new(a.gamma, a.tb, a.tg, a.lambda)?;
    let mut table = Table::new(&["quantity", "value"]);
    let mut report = Map::new();
    let values = neutral_moments(r).to_array();
    let extra =
        [("f", f_coefficient(r)), ("mean_distance_coefficient", mean_distance_coefficient(a.gamma, a.tb, a.tg))];
    for (name, v) in PhiTable::NAMES.iter().copied().zip(values).chain(extra) {
        table.push(vec![json!(name), num(v)]);
        report.insert(name.to_string(), num(v));
    }
    Ok(Output { table, report: Value::Object(report), pass: None })
}

/// Diagnostics of a distance-matrix file and an optional type file.
pub fn validate(matrix: &Path, types: Option<&Path>, tol: f64) -> Result<Output> {
    let text = std::fs::read_to_string(matrix).with_context(|| format!("reading {}", matrix.display()))?;
    let m = io::read_matrix(&text).with_context(|| format!("parsing {}", matrix.display()))?;
    let n = m.len();
    let d = io::check_matrix(&m, tol);
    let mut problems = Vec::new();
    for (k, row) in m.iter().enumerate() {
        if row[k].abs() > tol {
            problems.push(format!("nonzero diagonal at {k}"));
        }
        if let Some(l) = row.iter().position(|&x| !(x >= 0.0) || !x.is_finite()) {
            problems.push(format!("negative or non-finite distance at ({k},{l})"));
        }
    }
    if let Some(p) = types {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let t = io::read_types(&text).with_context(|| format!("parsing {}", p.display()))?;
        if t.len() != n {
            problems.push(format!("type file has {} entries for {n} individuals", t.len()));
        }
    }
    let worst = d.worst_ultrametric().map(|v| json!({ "k": v.k, "l": v.l, "m": v.m, "excess": num(v.excess) }));
    let valid = d.is_empty() && problems.is_empty();
    let mut table = Table::new(&["n", "symmetry_violations", "ultrametric_violations", "other_problems", "valid"]);
    table.push(vec![
        json!(n),
        json!(d.symmetry.len()),
        json!(d.ultrametric.len()),
        json!(problems.len()),
        json!(valid),
    ]);
    let report = json!({
        "n": n,
        "tolerance": tol,
        "symmetry_violations": d.symmetry,
        "ultrametric_violations": d.ultrametric.len(),
        "worst_ultrametric": worst,
        "problems": problems,
        "valid": valid,
    });
    Ok(Output { table, report, pass: Some(valid) })
}

//! Experiment drivers: equilibrium moments against the closed forms, the
//! small-selection comparison under common random numbers, convergence in
//! the population size, and independence of the initial state.

use serde::{Deserialize, Serialize};

use crate::closedform::{f_coefficient, neutral_moments, Rates};
use crate::dual::duality_gap;
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::model::{make_initial, FitnessSpec, InitialKind, ModelParams, MutationKernel, PopulationState, TypeInit};
use crate::rng::{self, replicate_seed};
use crate::stats::{
    batch_means, estimate_polynomial, mean_laplace_pair, phi_table_exact, weighted_line_fit, Accumulator, Estimate,
    PhiTable, PolynomialSpec, SamplingMode,
};

/// The `[model]` section. Either the two-type shorthand (`theta_fit`,
/// `theta_unfit`; fitness defaults to haploid selection for type 0) or an
/// explicit `mutation` kernel (fitness defaults to neutral).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n: usize,
    pub gamma: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_fit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_unfit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation: Option<MutationKernel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitness: Option<FitnessSpec>,
}

impl ModelConfig {
    pub fn two_type(n: usize, gamma: f64, theta_fit: f64, theta_unfit: f64, alpha: f64) -> Self {
        Self {
            n,
            gamma,
            alpha,
            theta_fit: Some(theta_fit),
            theta_unfit: Some(theta_unfit),
            mutation: None,
            fitness: None,
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        let shorthand = self.theta_fit.is_some() || self.theta_unfit.is_some();
        let (mutation, default_fitness) = match (&self.mutation, shorthand) {
            (Some(_), true) => {
                return Err(Error::InvalidParam("give either theta_fit/theta_unfit or mutation, not both".into()))
            }
            (Some(m), false) => (m.clone(), FitnessSpec::Neutral),
            (None, true) => (
                MutationKernel::two_type(self.theta_fit.unwrap_or(0.0), self.theta_unfit.unwrap_or(0.0))?,
                FitnessSpec::Haploid { chi: vec![1.0, 0.0] },
            ),
            (None, false) => (MutationKernel::none(2), FitnessSpec::Neutral),
        };
        let fitness = self.fitness.clone().unwrap_or(default_fitness);
        ModelParams::new(self.n, self.gamma, mutation, self.alpha, fitness)
    }

    /// Closed-form rates for the two-type shorthand.
    pub fn rates(&self, lambda: f64) -> Result<Rates> {
        match (self.theta_fit, self.theta_unfit) {
            (Some(tb), Some(tg)) => Rates::new(self.gamma, tb, tg, lambda),
            _ => Err(Error::InvalidParam("closed forms need theta_fit and theta_unfit".into())),
        }
    }
}

fn default_seed() -> u64 {
    1
}
fn default_burn_in() -> f64 {
    20.0
}
fn default_observations() -> usize {
    10_000
}
fn default_spacing() -> f64 {
    2.0
}
fn default_batches() -> usize {
    20
}
fn default_replicates() -> usize {
    100
}
fn default_lambda() -> Vec<f64> {
    vec![1.0]
}
fn default_h() -> f64 {
    0.002
}
fn default_grid() -> usize {
    500
}

/// The `[experiment]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    /// End time for fixed-time experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default = "default_observations")]
    pub observations: usize,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_lambda")]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub n_sweep: Vec<usize>,
    #[serde(default)]
    pub alpha_grid: Vec<f64>,
    /// Lookback times for ancestor counts, measured back from the horizon.
    #[serde(default)]
    pub lookbacks: Vec<f64>,
    /// Time step of the martingale drift check.
    #[serde(default = "default_h")]
    pub h: f64,
    /// Number of grid intervals of the quadratic-variation check.
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: String::new(),
            seed: default_seed(),
            burn_in: default_burn_in(),
            horizon: None,
            observations: default_observations(),
            spacing: default_spacing(),
            batches: default_batches(),
            replicates: default_replicates(),
            lambda: default_lambda(),
            n_sweep: Vec::new(),
            alpha_grid: Vec::new(),
            lookbacks: Vec::new(),
            h: default_h(),
            grid: default_grid(),
            output: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.params()?;
        let e = &self.experiment;
        if !(e.burn_in >= 0.0) || !(e.spacing > 0.0) {
            return Err(Error::InvalidParam("burn_in must be nonnegative and spacing positive".into()));
        }
        if let Some(h) = e.horizon {
            if !(h > 0.0) {
                return Err(Error::InvalidParam(format!("horizon must be positive, got {h}")));
            }
        }
        if e.replicates < 2 {
            return Err(Error::InvalidParam("at least two replicates required".into()));
        }
        if e.batches < 2 || e.observations < e.batches {
            return Err(Error::InvalidParam("need at least two batches and one observation per batch".into()));
        }
        if e.lambda.is_empty() || e.lambda.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::InvalidParam("lambda must be a nonempty list of nonnegative values".into()));
        }
        Ok(())
    }

    /// End of the observation window of a stationary run.
    pub fn stationary_horizon(&self) -> f64 {
        self.experiment.burn_in + self.experiment.observations as f64 * self.experiment.spacing
    }
}

/// Observes `stats(state)` every `spacing` after `burn_in`, returning one series per statistic.
pub fn stationary_series(
    params: &ModelParams,
    initial: &PopulationState,
    seed: u64,
    burn_in: f64,
    observations: usize,
    spacing: f64,
    mut stats: impl FnMut(&PopulationState) -> Vec<f64>,
) -> Vec<Vec<f64>> {
    let mut engine = Engine::new(params.clone(), seed);
    let mut s = initial.clone();
    let mut series: Vec<Vec<f64>> = Vec::new();
    for i in 0..observations {
        engine.run(&mut s, initial.t + burn_in + i as f64 * spacing);
        let v = stats(&s);
        if series.is_empty() {
            series = vec![Vec::with_capacity(observations); v.len()];
        }
        for (col, x) in series.iter_mut().zip(v) {
            col.push(x);
        }
    }
    series
}

fn star_cyclic(params: &ModelParams) -> Result<PopulationState> {
    make_initial(&InitialKind::Star, params.n, params.alphabet_size(), &TypeInit::Cyclic, &mut rng::from_seed(0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentRow {
    pub statistic: String,
    pub lambda: f64,
    pub simulated: f64,
    pub se: f64,
    pub closed_form: f64,
    pub z: f64,
    /// Estimate after discarding a second burn-in period of the same path.
    pub doubled_burn_in: f64,
}

impl MomentRow {
    pub fn burn_in_stable(&self) -> bool {
        (self.doubled_burn_in - self.simulated).abs() < self.se.max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub n: usize,
    pub observations: usize,
    pub rows: Vec<MomentRow>,
}

impl EquilibriumReport {
    pub fn row(&self, statistic: &str, lambda: f64) -> Option<&MomentRow> {
        self.rows.iter().find(|r| r.statistic == statistic && r.lambda == lambda)
    }
}

/// Stationary estimates of the moment table for every λ in the config, against the closed forms.
pub fn run_equilibrium_moments(config: &ExperimentConfig) -> Result<EquilibriumReport> {
    config.validate()?;
    let params = config.model.params()?;
    if params.alpha != 0.0 || params.alphabet_size() != 2 || params.mutation.z != 1.0 {
        return Err(Error::InvalidParam("equilibrium moments need a neutral two-type model with z = 1".into()));
    }
    let e = &config.experiment;
    let lambdas = e.lambda.clone();
    let initial = star_cyclic(&params)?;
    let series = stationary_series(&params, &initial, e.seed, e.burn_in, e.observations, e.spacing, |s| {
        lambdas.iter().flat_map(|&l| phi_table_exact(s, l, 0).to_array()).collect()
    });
    let skip = ((e.burn_in / e.spacing).ceil() as usize).min(e.observations - e.batches);
    let mut rows = Vec::new();
    for (li, &lambda) in lambdas.iter().enumerate() {
        let exact = neutral_moments(config.model.rates(lambda)?).to_array();
        for (j, name) in PhiTable::NAMES.iter().enumerate() {
            let xs = &series[li * 10 + j];
            let est = batch_means(xs, e.batches);
            let later = batch_means(&xs[skip..], e.batches);
            rows.push(MomentRow {
                statistic: name.to_string(),
                lambda,
                simulated: est.mean,
                se: est.se,
                closed_form: exact[j],
                z: z_score(est.mean - exact[j], est.se),
                doubled_burn_in: later.mean,
            });
        }
    }
    Ok(EquilibriumReport { n: params.n, observations: e.observations, rows })
}

fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionRow {
    pub alpha: f64,
    pub laplace: f64,
    pub laplace_se: f64,
    /// Paired difference against α = 0.
    pub raw_diff: f64,
    /// Contribution of selective replacements that merge the two sampled lineages, measured on the α chain.
    pub offset: f64,
    /// First-order value of `offset`: constant fitness at its neutral mean.
    pub offset_first_order: f64,
    /// `raw_diff − offset`, with its own batch-means SE.
    pub diff: f64,
    pub diff_se: f64,
    pub predicted: f64,
    /// Whether the paired SE is small enough to resolve the predicted difference.
    pub powered: bool,
    pub sign_ok: bool,
    pub magnitude_ok: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem5Report {
    #[serde(rename = "N")]
    pub n: usize,
    pub lambda: f64,
    pub f: f64,
    pub rows: Vec<SelectionRow>,
    /// Linear coefficient in α of the raw differences, from the two smallest nonzero α.
    pub raw_slope: Option<Estimate>,
    /// The same combination applied to the offsets.
    pub offset_slope: Option<f64>,
    /// Linear coefficient of the corrected differences.
    pub slope: Option<Estimate>,
    pub slope_ok: Option<bool>,
}

impl Theorem5Report {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.sign_ok && r.magnitude_ok.unwrap_or(true)) && self.slope_ok.unwrap_or(true)
    }
}

/// `E[e^{-λR₁₂}]` at stationarity when every selective proposal is accepted
/// with the same probability `c`: a neutral population with coalescence
/// rate `γ + 2αc/N` per pair.
pub fn constant_fitness_laplace(gamma: f64, lambda: f64, alpha: f64, c: f64, n: usize) -> f64 {
    let g = gamma + 2.0 * alpha * c / n as f64;
    g / (g + 2.0 * lambda)
}

/// `(2α/N) · avg_{m≠k} χ(u_m)(1 − e^{-λ r_km})`: the drift of the pair
/// average caused by selective replacements of `k` by `m`, through the pair
/// `(k, m)` itself.
pub fn selective_merge_drift(state: &PopulationState, fitness: &FitnessSpec, alpha: f64, lambda: f64) -> f64 {
    let n = state.n();
    let mut s = 0.0;
    for m in 0..n {
        let chi = fitness.haploid(state.types[m]);
        if chi == 0.0 {
            continue;
        }
        let row: f64 = (0..n).filter(|&k| k != m).map(|k| 1.0 - (-lambda * state.dist(k, m)).exp()).sum();
        s += chi * row;
    }
    2.0 * alpha / n as f64 * s / (n * (n - 1)) as f64
}

/// Stationary `E[e^{-λR₁₂}]` for each α, with chains coupled through shared
/// resampling and mutation events, compared against the quadratic prediction.
///
/// Setting the stationary drift of the pair average to zero gives
/// `(γ + 2λ)·L(α) = γ + E[merge drift] + E[remainder]`. The merge drift is
/// a finite-N effect of order α/N; the remainder carries the limit
/// behaviour. The merge drift is measured on each observation and removed.
pub fn run_theorem5(config: &ExperimentConfig) -> Result<Theorem5Report> {
    config.validate()?;
    let base = config.model.params()?;
    if base.mutation.z != 1.0 || base.fitness != (FitnessSpec::Haploid { chi: vec![1.0, 0.0] }) {
        return Err(Error::InvalidParam("the selection comparison needs z = 1 and haploid fitness (1, 0)".into()));
    }
    let e = &config.experiment;
    let lambda = e.lambda[0];
    let rates = config.model.rates(lambda)?;
    let f = f_coefficient(rates);
    let mean_fitness = rates.tg / (rates.tb + rates.tg);
    let first_order = |a: f64| {
        constant_fitness_laplace(base.gamma, lambda, a, mean_fitness, base.n)
            - constant_fitness_laplace(base.gamma, lambda, 0.0, mean_fitness, base.n)
    };
    let mut alphas = e.alpha_grid.clone();
    if !alphas.contains(&0.0) {
        alphas.insert(0, 0.0);
    }
    let initial = star_cyclic(&base)?;
    let scale = base.gamma + 2.0 * lambda;
    let (paths, offsets): (Vec<Vec<f64>>, Vec<Vec<f64>>) = alphas
        .iter()
        .map(|&a| {
            let mut cols =
                stationary_series(&base.with_alpha(a), &initial, e.seed, e.burn_in, e.observations, e.spacing, |s| {
                    vec![mean_laplace_pair(s, lambda), selective_merge_drift(s, &base.fitness, a, lambda) / scale]
                });
            let off = cols.pop().unwrap();
            (cols.pop().unwrap(), off)
        })
        .unzip();
    let zero = &paths[alphas.iter().position(|&a| a == 0.0).unwrap()];
    let raw: Vec<Vec<f64>> = paths.iter().map(|p| p.iter().zip(zero).map(|(a, b)| a - b).collect()).collect();
    let corrected: Vec<Vec<f64>> =
        raw.iter().zip(&offsets).map(|(d, o)| d.iter().zip(o).map(|(x, y)| x - y).collect()).collect();
    let mut rows = Vec::new();
    for (i, &alpha) in alphas.iter().enumerate() {
        let l = batch_means(&paths[i], e.batches);
        let r = batch_means(&raw[i], e.batches);
        let d = batch_means(&corrected[i], e.batches);
        let predicted = f * alpha * alpha;
        let powered = alpha > 0.0 && d.se < predicted / 3.0;
        rows.push(SelectionRow {
            alpha,
            laplace: l.mean,
            laplace_se: l.se,
            raw_diff: r.mean,
            offset: r.mean - d.mean,
            offset_first_order: first_order(alpha),
            diff: d.mean,
            diff_se: d.se,
            predicted,
            powered,
            sign_ok: d.mean >= -3.0 * d.se,
            magnitude_ok: powered.then(|| (d.mean - predicted).abs() <= 3.0 * d.se),
        });
    }
    // D(α) = bα + cα² through two nonzero grid points gives b as a fixed
    // linear combination of the paired differences.
    let mut nonzero: Vec<usize> = (0..alphas.len()).filter(|&i| alphas[i] > 0.0).collect();
    nonzero.sort_by(|&i, &j| alphas[i].total_cmp(&alphas[j]));
    let (mut raw_slope, mut offset_slope, mut slope) = (None, None, None);
    if nonzero.len() >= 2 {
        let (i, j) = (nonzero[0], nonzero[1]);
        let (a1, a2) = (alphas[i], alphas[j]);
        let det = a1 * a2 * a2 - a2 * a1 * a1;
        let (w1, w2) = (a2 * a2 / det, -a1 * a1 / det);
        let combo = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(x, y)| w1 * x + w2 * y).collect() };
        let r = batch_means(&combo(&raw[i], &raw[j]), e.batches);
        let c = batch_means(&combo(&corrected[i], &corrected[j]), e.batches);
        raw_slope = Some(r);
        offset_slope = Some(r.mean - c.mean);
        slope = Some(c);
    }
    let slope_ok = slope.map(|s| s.mean.abs() <= 3.0 * s.se);
    Ok(Theorem5Report { n: base.n, lambda, f, rows, raw_slope, offset_slope, slope, slope_ok })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub intercept: f64,
    pub intercept_se: f64,
    pub slope: f64,
    pub slope_se: f64,
}

impl LineFit {
    /// Weighted fit of `value ≈ intercept + slope / N`.
    pub fn inverse_n(rows: &[SweepRow]) -> Option<Self> {
        if rows.len() < 2 {
            return None;
        }
        let x: Vec<f64> = rows.iter().map(|r| 1.0 / r.n as f64).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.value).collect();
        let se: Vec<f64> = rows.iter().map(|r| r.se).collect();
        let ((intercept, intercept_se), (slope, slope_se)) = weighted_line_fit(&x, &y, &se);
        Some(Self { intercept, intercept_se, slope, slope_se })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub statistic: String,
    pub t: f64,
    pub rows: Vec<SweepRow>,
    pub fit: Option<LineFit>,
}

/// `E[<ν^N, ξ>]` at the horizon across the configured population sizes,
/// started from a star with alternating types, with a `C/N` fit.
pub fn run_convergence_sweep(config: &ExperimentConfig, spec: &PolynomialSpec) -> Result<SweepReport> {
    config.validate()?;
    let base = config.model.params()?;
    let e = &config.experiment;
    let t = e.horizon.ok_or_else(|| Error::InvalidParam("convergence sweep needs a horizon".into()))?;
    let sizes = if e.n_sweep.is_empty() { vec![base.n] } else { e.n_sweep.clone() };
    let mut rows = Vec::new();
    for &n in &sizes {
        let params = base.with_n(n);
        params.validate()?;
        let initial = star_cyclic(&params)?;
        let mut sampler = rng::stream(e.seed, 5);
        let mut acc = Accumulator::default();
        for rep in 0..e.replicates {
            let mut s = initial.clone();
            Engine::new(params.clone(), replicate_seed(e.seed ^ n as u64, rep as u64)).run(&mut s, t);
            acc.push(estimate_polynomial(&s, spec, 1000, SamplingMode::WithoutReplacement, &mut sampler)?.mean);
        }
        rows.push(SweepRow { n, value: acc.mean(), se: acc.se() });
    }
    let fit = LineFit::inverse_n(&rows);
    Ok(SweepReport { statistic: spec.name.clone(), t, rows, fit })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualitySweep {
    pub rows: Vec<crate::dual::DualityReport>,
    /// Fit of the gap against `1/N`.
    pub fit: Option<LineFit>,
}

impl DualitySweep {
    /// The extrapolated gap is consistent with zero.
    pub fn consistent(&self) -> bool {
        match self.fit {
            Some(f) => f.intercept.abs() <= 3.0 * f.intercept_se,
            None => self.rows.iter().all(|r| r.gap.abs() <= 3.0 * r.se()),
        }
    }
}

/// Duality gaps for `spec` at time `t` across population sizes, each from a
/// star state with alternating types.
pub fn run_duality_sweep(
    params: &ModelParams,
    spec: &PolynomialSpec,
    t: f64,
    sizes: &[usize],
    reps: usize,
    seed: u64,
) -> Result<DualitySweep> {
    let mut rows = Vec::new();
    for &n in sizes {
        let p = params.with_n(n);
        p.validate()?;
        let initial = star_cyclic(&p)?;
        rows.push(duality_gap(&initial, spec, t, &p, reps, seed ^ (n as u64) << 32)?);
    }
    let sweep: Vec<SweepRow> = rows.iter().map(|r| SweepRow { n: r.n, value: r.gap, se: r.se() }).collect();
    Ok(DualitySweep { fit: LineFit::inverse_n(&sweep), rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicityRow {
    pub lambda: f64,
    pub star: f64,
    pub star_se: f64,
    pub comb: f64,
    pub comb_se: f64,
    pub diff: f64,
    pub se: f64,
    /// Difference of the two initial states.
    pub initial_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicityReport {
    pub comb_distance: f64,
    pub rows: Vec<ErgodicityRow>,
    pub max_abs_z: f64,
    /// A type was lost for good in some run: the setup cannot forget its initial types.
    pub non_ergodic: bool,
}

impl ErgodicityReport {
    pub fn pass(&self) -> bool {
        !self.non_ergodic && self.max_abs_z <= 3.0
    }
}

/// Initial distance between all pairs of the comb start.
pub const COMB_DISTANCE: f64 = 10.0;

/// Stationary `E[e^{-λR₁₂}]` from a star and from a comb start, on independent paths.
pub fn run_ergodicity(config: &ExperimentConfig) -> Result<ErgodicityReport> {
    config.validate()?;
    let params = config.model.params()?;
    let e = &config.experiment;
    let k = params.alphabet_size();
    let star = make_initial(&InitialKind::Star, params.n, k, &TypeInit::Cyclic, &mut rng::from_seed(0))?;
    let comb = make_initial(&InitialKind::Comb(COMB_DISTANCE), params.n, k, &TypeInit::Cyclic, &mut rng::from_seed(0))?;
    let absorbing = params.mutation.z == 0.0 && params.mutation.has_absorbing_type();
    let mut fixation = false;
    let mut run = |initial: &PopulationState, seed: u64| {
        stationary_series(&params, initial, seed, e.burn_in, e.observations, e.spacing, |s| {
            if absorbing && (1..s.n()).all(|i| s.types[i] == s.types[0]) {
                fixation = true;
            }
            e.lambda.iter().map(|&l| mean_laplace_pair(s, l)).collect()
        })
    };
    let a = run(&star, replicate_seed(e.seed, 0));
    let b = run(&comb, replicate_seed(e.seed, 1));
    let mut rows = Vec::new();
    let mut max_abs_z: f64 = 0.0;
    for (i, &lambda) in e.lambda.iter().enumerate() {
        let x = batch_means(&a[i], e.batches);
        let y = batch_means(&b[i], e.batches);
        let se = (x.se * x.se + y.se * y.se).sqrt();
        let diff = x.mean - y.mean;
        max_abs_z = max_abs_z.max(z_score(diff, se).abs());
        rows.push(ErgodicityRow {
            lambda,
            star: x.mean,
            star_se: x.se,
            comb: y.mean,
            comb_se: y.se,
            diff,
            se,
            initial_diff: mean_laplace_pair(&star, lambda) - mean_laplace_pair(&comb, lambda),
        });
    }
    Ok(ErgodicityReport { comb_distance: COMB_DISTANCE, rows, max_abs_z, non_ergodic: absorbing && fixation })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(name: &str) -> ExperimentConfig {
        ExperimentConfig {
            model: ModelConfig::two_type(30, 1.0, 1.0, 1.0, 0.0),
            experiment: ExperimentSection {
                name: name.into(),
                burn_in: 10.0,
                observations: 400,
                spacing: 1.0,
                ..Default::default()
            },
        }
    }

    #[test]
    fn config_round_trip_and_unknown_keys() {
        let c = small("equilibrium");
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), c);
        let bad = serde_json::json!({"model": {"n": 10, "gamma": 1.0, "bogus": 1}});
        assert!(serde_json::from_value::<ExperimentConfig>(bad).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = small("x");
        c.experiment.horizon = Some(0.0);
        assert!(c.validate().is_err());
        let mut c = small("x");
        c.experiment.replicates = 1;
        assert!(c.validate().is_err());
        let mut c = small("x");
        c.model.mutation = Some(MutationKernel::none(2));
        assert!(c.model.params().is_err());
    }

    #[test]
    fn equilibrium_small_run() {
        let mut c = small("equilibrium");
        c.experiment.lambda = vec![0.0, 1.0];
        let r = run_equilibrium_moments(&c).unwrap();
        assert_eq!(r.rows.len(), 20);
        let p = r.row("phi1_10", 1.0).unwrap();
        assert!((p.closed_form - 0.5).abs() < 1e-12);
        assert!(p.z.abs() < 4.0, "{p:?}");
        // λ = 0: distances drop out, leaving type moments.
        let a = r.row("phi2_00", 0.0).unwrap();
        assert_eq!(a.simulated, 1.0);
        let b = r.row("phi2_10", 0.0).unwrap();
        let c1 = r.row("phi1_10", 0.0).unwrap();
        assert_eq!(b.simulated, c1.simulated);
    }

    #[test]
    fn theorem5_zero_alpha_difference_vanishes() {
        let mut c = small("theorem5");
        c.experiment.alpha_grid = vec![0.0, 0.25, 0.5];
        c.experiment.observations = 200;
        let r = run_theorem5(&c).unwrap();
        assert_eq!(r.rows[0].diff, 0.0);
        assert_eq!(r.rows[0].offset, 0.0);
        assert!(r.rows[2].offset > r.rows[1].offset);
        assert_eq!(r.rows[0].diff_se, 0.0);
        assert!(r.slope.is_some());
        assert!((r.f - 48.0 / 32400.0).abs() < 1e-15);
    }

    #[test]
    fn merge_drift_on_equidistant_fit_population() {
        let n = 6;
        let d = 1.5;
        let m: Vec<Vec<f64>> = (0..n).map(|k| (0..n).map(|l| if k == l { 0.0 } else { d }).collect()).collect();
        let fit = FitnessSpec::Haploid { chi: vec![1.0, 0.0] };
        let all_fit = PopulationState::from_distances(&m, vec![0; n]).unwrap();
        let expected = 2.0 * 0.5 / n as f64 * (1.0 - (-2.0 * d).exp());
        assert!((selective_merge_drift(&all_fit, &fit, 0.5, 2.0) - expected).abs() < 1e-15);
        let half = PopulationState::from_distances(&m, (0..n).map(|i| i % 2).collect()).unwrap();
        assert!((selective_merge_drift(&half, &fit, 0.5, 2.0) - expected / 2.0).abs() < 1e-15);
    }

    #[test]
    fn single_size_sweep_has_no_fit() {
        let mut c = small("convergence");
        c.experiment.horizon = Some(11.0);
        c.experiment.replicates = 4;
        let r = run_convergence_sweep(&c, &PolynomialSpec::laplace_pair(1.0)).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(r.fit.is_none());
    }

    #[test]
    fn ergodicity_initial_difference_and_fixation_flag() {
        let mut c = small("ergodicity");
        c.experiment.lambda = vec![0.5, 1.0];
        c.experiment.observations = 100;
        let r = run_ergodicity(&c).unwrap();
        for row in &r.rows {
            assert!((row.initial_diff - (1.0 - (-COMB_DISTANCE * row.lambda).exp())).abs() < 1e-15);
        }
        assert!(!r.non_ergodic);
        let mut c = small("ergodicity");
        c.model = ModelConfig {
            n: 10,
            gamma: 1.0,
            alpha: 0.0,
            theta_fit: None,
            theta_unfit: None,
            mutation: None,
            fitness: None,
        };
        c.experiment.observations = 100;
        let r = run_ergodicity(&c).unwrap();
        assert!(r.non_ergodic);
        assert!(!r.pass());
    }
}

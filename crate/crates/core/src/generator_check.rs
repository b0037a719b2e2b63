//! The finite-N generator acting on polynomials, and Monte Carlo checks of
//! the engine against it (martingale drift and quadratic variation).
//!
//! `Ω^N Φ(u)` is written as an average over ordered tuples of distinct
//! individuals: `n` of them for neutral dynamics, plus one (haploid) or two
//! (pair) fresh individuals standing in for selective parents and partners
//! outside the sample. The multiplicities of those fresh individuals make the
//! expression exact at every `N`.

use rand::Rng;
use serde::Serialize;

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::model::{FitnessSpec, ModelParams, PopulationState};
use crate::rng::{self, replicate_seed};
use crate::stats::{
    estimate_polynomial, exact_average, sample_indices_from, tuple_count, Accumulator, Estimate, Points,
    PolynomialSpec, Remap, Remarked, SamplingMode, StateView, ENUMERATION_LIMIT,
};

/// Step of the central difference used when a test function has no analytic growth derivative.
pub const FD_STEP: f64 = 1e-6;

/// Number of individuals the generator integrand reads.
pub fn integrand_size(spec: &PolynomialSpec, params: &ModelParams) -> usize {
    let n = spec.degree;
    if params.alpha == 0.0 {
        return n;
    }
    match params.fitness {
        FitnessSpec::Neutral => n,
        FitnessSpec::Haploid { .. } => n + 1,
        _ => n + 2,
    }
}

/// Sample positions after position `l` takes the point of `k`.
fn with_pair_replaced(k: usize, l: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| if i == l { k } else { i }).collect()
}

/// The generator integrand at one tuple of distinct individuals.
pub fn omega_integrand(p: &dyn Points, spec: &PolynomialSpec, params: &ModelParams) -> Result<f64> {
    let n = spec.degree;
    let pop = params.n as f64;
    let phi = spec.value(p);
    let mut total = 0.0;

    if n >= 2 {
        total += spec.growth_derivative(p, Some(FD_STEP))?;
    }

    // φ∘θ_{kl} − φ for all ordered k ≠ l in the sample.
    let mut theta = vec![0.0; n * n];
    for k in 0..n {
        for l in 0..n {
            if k != l {
                let map = with_pair_replaced(k, l, n);
                theta[k * n + l] = spec.value(&Remap { inner: p, map: &map }) - phi;
            }
        }
    }
    total += params.gamma / 2.0 * theta.iter().sum::<f64>();

    let m = &params.mutation;
    if m.rate > 0.0 {
        for k in 0..n {
            let u = p.mark(k);
            let mut b = -phi;
            for v in 0..m.alphabet_size() {
                let w = m.beta(u, v);
                if w > 0.0 {
                    b += w * spec.value(&Remarked { inner: p, pos: k, mark: v });
                }
            }
            total += m.rate * b;
        }
    }

    if params.alpha > 0.0 {
        let nf = n as f64;
        match &params.fitness {
            FitnessSpec::Neutral => {}
            FitnessSpec::Haploid { chi } => {
                let c = |i: usize| chi[p.mark(i)];
                let mut s = 0.0;
                for l in 0..n {
                    for k in 0..n {
                        if k != l {
                            s += c(k) * theta[k * n + l];
                        }
                    }
                    s += (pop - nf) * (c(l) - c(n)) * phi;
                }
                total += params.alpha / pop * s;
            }
            f => {
                let c = |a: usize, b: usize| f.pair(p.mark(a), p.mark(b), p.dist(a, b));
                let (e1, e2) = (n, n + 1);
                let outside = pop - nf;
                let mut s = 0.0;
                for l in 0..n {
                    for k in 0..n {
                        if k == l {
                            continue;
                        }
                        let partners: f64 = (0..n).filter(|&j| j != k && j != l).map(|j| c(k, j)).sum();
                        s += theta[k * n + l] * (partners + outside * c(k, e1));
                    }
                    let inside_l: f64 = (0..n).filter(|&j| j != l).map(|j| c(l, j)).sum();
                    let inside_e: f64 = (0..n).filter(|&j| j != l).map(|j| c(e1, j)).sum();
                    s += phi * outside * (inside_l + (outside - 1.0) * c(l, e1));
                    s -= phi * outside * (inside_e + (outside - 1.0) * c(e1, e2));
                }
                total += params.alpha / (pop * pop) * s;
            }
        }
    }
    Ok(total)
}

/// `Ω^N Φ` at `state`: exact when the tuples can be enumerated, otherwise a
/// Monte Carlo average over `samples` random tuples.
pub fn omega_n<R: Rng + ?Sized>(
    state: &PopulationState,
    spec: &PolynomialSpec,
    params: &ModelParams,
    samples: usize,
    rng: &mut R,
) -> Result<Estimate> {
    if state.n() != params.n {
        return Err(Error::Dimension { needed: params.n, got: state.n() });
    }
    if spec.degree == 0 {
        return Ok(Estimate::exact(0.0));
    }
    let m = integrand_size(spec, params);
    if m > state.n() {
        return Err(Error::SampleTooLarge { requested: m, available: state.n() });
    }
    if tuple_count(state.n(), m, SamplingMode::WithoutReplacement) <= ENUMERATION_LIMIT {
        let v = exact_average(state, m, SamplingMode::WithoutReplacement, |p| omega_integrand(p, spec, params))?;
        return Ok(Estimate::exact(v));
    }
    if samples < 2 {
        return Err(Error::InvalidParam("Monte Carlo generator evaluation needs at least two samples".into()));
    }
    let mut acc = Accumulator::default();
    for _ in 0..samples {
        let idx = sample_indices_from(state.n(), m, SamplingMode::WithoutReplacement, rng)?;
        acc.push(omega_integrand(&StateView { state, idx: &idx }, spec, params)?);
    }
    Ok(acc.estimate())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorReport {
    pub drift_exact: f64,
    pub drift_empirical: f64,
    pub se: f64,
    pub qv_formula: f64,
    pub qv_empirical: f64,
    pub se_qv: f64,
    pub h: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub reps: usize,
    pub seed: u64,
}

impl GeneratorReport {
    fn empty(h: f64, t: f64, reps: usize, seed: u64) -> Self {
        Self {
            drift_exact: f64::NAN,
            drift_empirical: f64::NAN,
            se: f64::NAN,
            qv_formula: f64::NAN,
            qv_empirical: f64::NAN,
            se_qv: f64::NAN,
            h,
            t,
            reps,
            seed,
        }
    }
}

const GENERATOR_SAMPLES: usize = 20_000;
const POLYNOMIAL_SAMPLES: usize = 2_000;

/// Compares `Ω^N Φ(u)` with `(E[Φ(U_h)] − Φ(u)) / h` over `reps` engine runs.
pub fn martingale_residual(
    params: &ModelParams,
    spec: &PolynomialSpec,
    initial: &PopulationState,
    h: f64,
    reps: usize,
    seed: u64,
) -> Result<GeneratorReport> {
    if !(h > 0.0) || reps < 2 {
        return Err(Error::InvalidParam("need h > 0 and at least two replicates".into()));
    }
    let mut aux = rng::stream(seed, 4);
    let exact = omega_n(initial, spec, params, GENERATOR_SAMPLES, &mut aux)?;
    let value = |s: &PopulationState, r: &mut rng::SimRng| {
        estimate_polynomial(s, spec, POLYNOMIAL_SAMPLES, SamplingMode::WithoutReplacement, r).map(|e| e.mean)
    };
    let phi0 = value(initial, &mut aux)?;
    let mut acc = Accumulator::default();
    for rep in 0..reps {
        let mut s = initial.clone();
        Engine::new(params.clone(), replicate_seed(seed, rep as u64)).run(&mut s, initial.t + h);
        acc.push((value(&s, &mut aux)? - phi0) / h);
    }
    let mut r = GeneratorReport::empty(h, h, reps, seed);
    r.drift_exact = exact.mean;
    r.drift_empirical = acc.mean();
    r.se = (acc.se().powi(2) + exact.se.powi(2)).sqrt();
    Ok(r)
}

/// Martingale drift check at `h` and `h/2` with the first-order bias estimated from the pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftCheck {
    pub coarse: GeneratorReport,
    pub fine: GeneratorReport,
    /// Estimated `C` in `bias ≈ C·h`.
    pub slope: f64,
    pub pass: bool,
}

pub fn drift_check(
    params: &ModelParams,
    spec: &PolynomialSpec,
    initial: &PopulationState,
    h: f64,
    reps: usize,
    seed: u64,
) -> Result<DriftCheck> {
    let coarse = martingale_residual(params, spec, initial, h, reps, seed)?;
    let fine = martingale_residual(params, spec, initial, h / 2.0, reps, seed)?;
    let bias = |r: &GeneratorReport| r.drift_empirical - r.drift_exact;
    let slope = (bias(&coarse) - bias(&fine)) / (h / 2.0);
    let pass = bias(&fine).abs() <= 3.0 * fine.se + slope.abs() * fine.h;
    Ok(DriftCheck { coarse, fine, slope, pass })
}

/// With-replacement `Φ` and the rate of its quadratic variation, for test functions of degree at most two.
pub fn phi_and_qv_rate(state: &PopulationState, spec: &PolynomialSpec, gamma: f64) -> Result<(f64, f64)> {
    let n = state.n();
    let nf = n as f64;
    match spec.degree {
        0 => Ok((spec.value(&StateView { state, idx: &[] }), 0.0)),
        1 => {
            let mut acc = Accumulator::default();
            let mut sq = 0.0;
            for a in 0..n {
                let v = spec.value(&StateView { state, idx: &[a] });
                acc.push(v);
                sq += v * v;
            }
            let mean = acc.mean();
            Ok((mean, gamma * (sq / nf - mean * mean)))
        }
        2 => {
            let mut rows = vec![0.0; n];
            let mut cols = vec![0.0; n];
            for a in 0..n {
                for b in 0..n {
                    let v = spec.value(&StateView { state, idx: &[a, b] });
                    rows[a] += v;
                    cols[b] += v;
                }
            }
            let phi = rows.iter().sum::<f64>() / (nf * nf);
            let s: f64 = rows.iter().zip(&cols).map(|(r, c)| (r + c) * (r + c)).sum();
            Ok((phi, gamma * (s / (nf * nf * nf) - 4.0 * phi * phi)))
        }
        d => Err(Error::Unsupported(format!("quadratic variation for degree {d}"))),
    }
}

/// Empirical quadratic variation of the with-replacement `Φ` on a grid of
/// `steps` intervals over `[0, t]`, against the time integral of the
/// quadratic-variation rate along the same paths.
pub fn qv_check(
    params: &ModelParams,
    spec: &PolynomialSpec,
    initial: &PopulationState,
    t: f64,
    steps: usize,
    reps: usize,
    seed: u64,
) -> Result<GeneratorReport> {
    if !(t > 0.0) || steps == 0 || reps < 2 {
        return Err(Error::InvalidParam("need T > 0, a nonempty grid and at least two replicates".into()));
    }
    let dt = t / steps as f64;
    let mut emp = Accumulator::default();
    let mut formula = Accumulator::default();
    for rep in 0..reps {
        let mut engine = Engine::new(params.clone(), replicate_seed(seed, rep as u64));
        let mut s = initial.clone();
        let (mut prev, mut prev_rate) = phi_and_qv_rate(&s, spec, params.gamma)?;
        let mut qv = 0.0;
        let mut integral = 0.0;
        for i in 1..=steps {
            engine.run(&mut s, initial.t + i as f64 * dt);
            let (phi, rate) = phi_and_qv_rate(&s, spec, params.gamma)?;
            qv += (phi - prev) * (phi - prev);
            integral += 0.5 * (rate + prev_rate) * dt;
            prev = phi;
            prev_rate = rate;
        }
        emp.push(qv);
        formula.push(integral);
    }
    let mut r = GeneratorReport::empty(dt, t, reps, seed);
    r.qv_empirical = emp.mean();
    r.qv_formula = formula.mean();
    r.se_qv = (emp.se().powi(2) + formula.se().powi(2)).sqrt();
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_initial, InitialKind, MutationKernel, TypeInit};
    use crate::rng::from_seed;

    fn uniform(n: usize, d: f64) -> PopulationState {
        let r: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 0.0 } else { d }).collect()).collect();
        PopulationState::from_distances(&r, (0..n).map(|i| i % 2).collect()).unwrap()
    }

    #[test]
    fn constants_are_annihilated() {
        let p = ModelParams::two_type(8, 1.0, 1.0, 1.0, 0.5).unwrap();
        let s = uniform(8, 1.0);
        let e = omega_n(&s, &PolynomialSpec::constant(1.0), &p, 10, &mut from_seed(1)).unwrap();
        assert_eq!(e.mean, 0.0);
    }

    #[test]
    fn pair_distance_drift() {
        for &(g, d) in &[(1.0, 0.0), (1.0, 1.5), (2.5, 0.8)] {
            let p = ModelParams::neutral(10, g).unwrap();
            let s = uniform(10, d);
            let e = omega_n(&s, &PolynomialSpec::pair_distance(), &p, 10, &mut from_seed(1)).unwrap();
            assert!((e.mean - (2.0 - g * d)).abs() < 1e-12, "{g} {d} {}", e.mean);
        }
        let p = ModelParams::neutral(10, 1.0).unwrap();
        let e = omega_n(&uniform(10, 2.0), &PolynomialSpec::pair_distance(), &p, 10, &mut from_seed(1)).unwrap();
        assert!(e.mean.abs() < 1e-12);
    }

    #[test]
    fn mutation_only_drift() {
        let p = ModelParams::two_type(6, 1.0, 1.0, 3.0, 0.7).unwrap();
        let s = PopulationState::from_distances(&vec![vec![0.0; 6]; 6], vec![1; 6]).unwrap();
        let e = omega_n(&s, &PolynomialSpec::type_indicator(0), &p, 10, &mut from_seed(1)).unwrap();
        let m = &p.mutation;
        assert!((e.mean - m.rate * m.z * m.bar_beta[0]).abs() < 1e-12);
    }

    #[test]
    fn finite_difference_matches_analytic_growth() {
        let p = ModelParams::two_type(7, 1.0, 1.0, 1.0, 0.5).unwrap();
        let mut rng = from_seed(3);
        let s = make_initial(&InitialKind::Star, 7, 2, &TypeInit::Random(vec![0.5, 0.5]), &mut rng).unwrap();
        let mut s = s;
        Engine::new(p.clone(), 9).run(&mut s, 1.3);
        let a = PolynomialSpec::laplace_pair(0.7);
        let mut b = a.clone();
        b.growth = None;
        let ea = omega_n(&s, &a, &p, 10, &mut rng).unwrap().mean;
        let eb = omega_n(&s, &b, &p, 10, &mut rng).unwrap().mean;
        assert!((ea - eb).abs() < 1e-6);
    }

    #[test]
    fn relabeling_invariance() {
        let fitness = FitnessSpec::Diploid { chi: vec![vec![1.0, 0.6], vec![0.6, 0.2]] };
        let p = ModelParams::new(7, 1.0, MutationKernel::two_type(1.0, 2.0).unwrap(), 0.8, fitness).unwrap();
        let mut s = make_initial(&InitialKind::Star, 7, 2, &TypeInit::Cyclic, &mut from_seed(0)).unwrap();
        Engine::new(p.clone(), 5).run(&mut s, 0.9);
        let spec = PolynomialSpec::laplace_pair_marked(1.0, 0);
        let a = omega_n(&s, &spec, &p, 10, &mut from_seed(1)).unwrap().mean;
        let perm: Vec<usize> = vec![3, 6, 0, 5, 1, 4, 2];
        let d = s.distance_matrix();
        let r: Vec<Vec<f64>> = perm.iter().map(|&i| perm.iter().map(|&j| d[i][j]).collect()).collect();
        let t: Vec<usize> = perm.iter().map(|&i| s.types[i]).collect();
        let q = PopulationState::from_distances(&r, t).unwrap();
        let b = omega_n(&q, &spec, &p, 10, &mut from_seed(1)).unwrap().mean;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn qv_rate_degree_one_is_variance() {
        let s = PopulationState::from_distances(&vec![vec![0.0; 4]; 4], vec![0, 1, 1, 0]).unwrap();
        let (phi, rate) = phi_and_qv_rate(&s, &PolynomialSpec::type_indicator(0), 2.0).unwrap();
        assert_eq!(phi, 0.5);
        assert!((rate - 0.5).abs() < 1e-15);
    }
}

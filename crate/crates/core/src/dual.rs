//! The function-valued dual process.
//!
//! A dual state is a leaf test function followed by the chain of transitions
//! applied to it. Evaluation pulls a concrete argument back through the chain
//! (latest transition first), producing a weighted set of arguments for the
//! leaf; identical arguments are merged so repeated selection and mutation
//! branching stays small. All branch weights are nonnegative and sum to one,
//! so the value never exceeds the leaf bound in absolute value.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::model::{FitnessSpec, ModelParams, PopulationState, TypeId};
use crate::rng::{self, exp_time, replicate_seed};
use crate::stats::{
    exact_average, sample_indices_from, tuple_count, Accumulator, MarkedMatrixSample, Points, PolynomialSpec,
    SamplingMode, StateView, ENUMERATION_LIMIT,
};

/// Largest transition chain before evaluation is refused.
pub const MAX_NODES: usize = 100_000;
const MAX_FRONTIER: usize = 1_000_000;

#[derive(Debug, Clone)]
pub enum DualOp {
    /// All distances grow by `2Δ`.
    Grow(f64),
    /// Position `l` takes the point of position `k`, then `l` is removed.
    Coalesce { k: usize, l: usize },
    /// Type at `k` replaced by an average over `bar_beta`.
    MutPI { k: usize, bar_beta: Arc<Vec<f64>> },
    /// Type at `k` averaged over the type-dependent transition `tilde_beta`.
    MutPD { k: usize, tilde_beta: Arc<Vec<Vec<f64>>> },
    /// Haploid selection at `k` with a fresh point appended.
    SelHap { k: usize, chi: Arc<Vec<f64>> },
    /// Pair selection at `k` with two fresh points appended; the last one is the partner.
    SelPair { k: usize, fitness: Arc<FitnessSpec> },
}

#[derive(Debug, Clone)]
pub struct DualExpr {
    leaf: PolynomialSpec,
    ops: Vec<DualOp>,
    degree: usize,
    jumps: usize,
}

impl DualExpr {
    pub fn leaf(spec: PolynomialSpec) -> Self {
        let degree = spec.degree;
        Self { leaf: spec, ops: Vec::new(), degree, jumps: 0 }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of jumps plus one.
    pub fn depth(&self) -> usize {
        self.jumps + 1
    }

    pub fn ops(&self) -> &[DualOp] {
        &self.ops
    }

    pub fn bound(&self) -> f64 {
        self.leaf.bound
    }

    pub fn leaf_spec(&self) -> &PolynomialSpec {
        &self.leaf
    }

    /// Appends a transition, updating the degree.
    pub fn push(&mut self, op: DualOp) -> Result<()> {
        if self.ops.len() >= MAX_NODES {
            return Err(Error::ExpressionTooLarge(MAX_NODES));
        }
        let n = self.degree;
        let check = |k: usize| if k < n { Ok(()) } else { Err(Error::IndexOutOfRange { index: k, n }) };
        self.degree = match &op {
            DualOp::Grow(dt) => {
                if !(*dt >= 0.0) {
                    return Err(Error::InvalidParam(format!("negative growth {dt}")));
                }
                n
            }
            DualOp::Coalesce { k, l } => {
                check(*k)?;
                check(*l)?;
                if k == l {
                    return Err(Error::SelfReplacement(*k));
                }
                n - 1
            }
            DualOp::MutPI { k, .. } => {
                check(*k)?;
                if n == 1 {
                    0
                } else {
                    n
                }
            }
            DualOp::MutPD { k, .. } => {
                check(*k)?;
                n
            }
            DualOp::SelHap { k, .. } => {
                check(*k)?;
                n + 1
            }
            DualOp::SelPair { k, .. } => {
                check(*k)?;
                n + 2
            }
        };
        if !matches!(op, DualOp::Grow(_)) {
            self.jumps += 1;
        }
        self.ops.push(op);
        Ok(())
    }

    /// Value at the first `degree()` points of `points`.
    pub fn evaluate(&self, points: &dyn Points) -> Result<f64> {
        let n = self.degree;
        if points.len() < n {
            return Err(Error::Dimension { needed: n, got: points.len() });
        }
        let root = Arg::from_points(points, n);
        let mut frontier: Vec<(Arg, f64)> = vec![(root, 1.0)];
        let mut sizes = self.degree;
        for op in self.ops.iter().rev() {
            let mut next: HashMap<Arg, f64> = HashMap::with_capacity(frontier.len());
            let mut add = |a: Arg, w: f64| {
                if w > 0.0 {
                    *next.entry(a).or_insert(0.0) += w;
                }
            };
            let out_size = child_degree(op, sizes);
            for (arg, w) in frontier.drain(..) {
                pull_back(op, &arg, out_size, w, &mut add);
            }
            sizes = out_size;
            if next.len() > MAX_FRONTIER {
                return Err(Error::ExpressionTooLarge(MAX_FRONTIER));
            }
            frontier = next.into_iter().collect();
        }
        let mut total = 0.0;
        for (arg, w) in &frontier {
            total += w * self.leaf.value(arg);
        }
        Ok(total)
    }
}

/// Degree of the operand of `op` given the degree after it.
fn child_degree(op: &DualOp, after: usize) -> usize {
    match op {
        DualOp::Grow(_) | DualOp::MutPD { .. } => after,
        DualOp::Coalesce { .. } => after + 1,
        DualOp::MutPI { .. } => after.max(1),
        DualOp::SelHap { .. } => after - 1,
        DualOp::SelPair { .. } => after - 2,
    }
}

/// Concrete argument: `n x n` distances (bit patterns, for hashing) and marks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Arg {
    n: usize,
    dist: Vec<u64>,
    marks: Vec<TypeId>,
}

impl Arg {
    fn from_points(p: &dyn Points, n: usize) -> Self {
        let mut dist = vec![0u64; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    dist[i * n + j] = p.dist(i, j).to_bits();
                }
            }
        }
        Self { n, dist, marks: (0..n).map(|i| p.mark(i)).collect() }
    }

    /// Argument whose position `i` is position `map[i]` of `self`.
    fn remap(&self, map: &[usize]) -> Self {
        let m = map.len();
        let mut dist = vec![0u64; m * m];
        for i in 0..m {
            for j in 0..m {
                if i != j && map[i] != map[j] {
                    dist[i * m + j] = self.dist[map[i] * self.n + map[j]];
                }
            }
        }
        Self { n: m, dist, marks: map.iter().map(|&i| self.marks[i]).collect() }
    }
}

impl Points for Arg {
    fn len(&self) -> usize {
        self.n
    }
    fn dist(&self, i: usize, j: usize) -> f64 {
        f64::from_bits(self.dist[i * self.n + j])
    }
    fn mark(&self, i: usize) -> TypeId {
        self.marks[i]
    }
}

fn pull_back(op: &DualOp, arg: &Arg, child_n: usize, w: f64, add: &mut impl FnMut(Arg, f64)) {
    match op {
        DualOp::Grow(dt) => {
            let mut a = arg.clone();
            for i in 0..a.n {
                for j in 0..a.n {
                    if i != j {
                        a.dist[i * a.n + j] = (f64::from_bits(a.dist[i * a.n + j]) + 2.0 * dt).to_bits();
                    }
                }
            }
            add(a, w);
        }
        DualOp::Coalesce { k, l } => {
            let src = if k < l { *k } else { k - 1 };
            let map: Vec<usize> = (0..child_n)
                .map(|i| match i.cmp(l) {
                    std::cmp::Ordering::Less => i,
                    std::cmp::Ordering::Equal => src,
                    std::cmp::Ordering::Greater => i - 1,
                })
                .collect();
            add(arg.remap(&map), w);
        }
        DualOp::MutPI { k, bar_beta } => {
            for (v, &p) in bar_beta.iter().enumerate() {
                let a = if arg.n == 0 {
                    Arg { n: 1, dist: vec![0], marks: vec![v] }
                } else {
                    let mut a = arg.clone();
                    a.marks[*k] = v;
                    a
                };
                add(a, w * p);
            }
        }
        DualOp::MutPD { k, tilde_beta } => {
            for (v, &p) in tilde_beta[arg.marks[*k]].iter().enumerate() {
                let mut a = arg.clone();
                a.marks[*k] = v;
                add(a, w * p);
            }
        }
        DualOp::SelHap { k, chi } => {
            let c = chi[arg.marks[*k]];
            let keep: Vec<usize> = (0..child_n).collect();
            add(arg.remap(&keep), w * c);
            let drop: Vec<usize> = (0..child_n).map(|i| i + (i >= *k) as usize).collect();
            add(arg.remap(&drop), w * (1.0 - c));
        }
        DualOp::SelPair { k, fitness } => {
            let partner = child_n + 1;
            let c = fitness.pair(arg.marks[*k], arg.marks[partner], arg.dist(*k, partner));
            let keep: Vec<usize> = (0..child_n).collect();
            add(arg.remap(&keep), w * c);
            let drop: Vec<usize> = (0..child_n).map(|i| i + (i >= *k) as usize).collect();
            add(arg.remap(&drop), w * (1.0 - c));
        }
    }
}

/// Jump rates of the dual at degree `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualRates {
    pub coalescence: f64,
    pub mutation_pd: f64,
    pub mutation_pi: f64,
    pub selection: f64,
}

impl DualRates {
    pub fn at(n: usize, params: &ModelParams) -> Self {
        let nf = n as f64;
        let m = &params.mutation;
        let selective = params.alpha > 0.0 && !matches!(params.fitness, FitnessSpec::Neutral);
        Self {
            coalescence: params.gamma * nf * (nf - 1.0) / 2.0,
            mutation_pd: if m.z < 1.0 { m.rate * (1.0 - m.z) * nf } else { 0.0 },
            mutation_pi: m.rate * m.z * nf,
            selection: if selective { params.alpha * nf } else { 0.0 },
        }
    }

    pub fn total(&self) -> f64 {
        self.coalescence + self.mutation_pd + self.mutation_pi + self.selection
    }
}

/// Waiting time and transition of the next jump from degree `n`; `None` when no jump can occur.
pub fn next_jump<R: Rng + ?Sized>(n: usize, params: &ModelParams, rng: &mut R) -> Option<(f64, DualOp)> {
    if n == 0 {
        return None;
    }
    let r = DualRates::at(n, params);
    let total = r.total();
    if total <= 0.0 {
        return None;
    }
    let dt = exp_time(rng, total);
    let x = rng.random::<f64>() * total;
    let k = rng.random_range(0..n);
    let op = if x < r.coalescence {
        let mut l = rng.random_range(0..n - 1);
        if l >= k {
            l += 1;
        }
        DualOp::Coalesce { k, l }
    } else if x < r.coalescence + r.mutation_pd {
        DualOp::MutPD { k, tilde_beta: Arc::new(params.mutation.tilde_beta.clone()) }
    } else if x < r.coalescence + r.mutation_pd + r.mutation_pi || r.selection == 0.0 {
        DualOp::MutPI { k, bar_beta: Arc::new(params.mutation.bar_beta.clone()) }
    } else {
        match &params.fitness {
            FitnessSpec::Haploid { chi } => DualOp::SelHap { k, chi: Arc::new(chi.clone()) },
            f => DualOp::SelPair { k, fitness: Arc::new(f.clone()) },
        }
    };
    Some((dt, op))
}

/// One jump: returns the waiting time (infinite if absorbed) and appends
/// the elapsed growth and the transition.
pub fn dual_step<R: Rng + ?Sized>(expr: &mut DualExpr, params: &ModelParams, rng: &mut R) -> Result<f64> {
    match next_jump(expr.degree(), params, rng) {
        None => Ok(f64::INFINITY),
        Some((dt, op)) => {
            if expr.degree() >= 2 {
                expr.push(DualOp::Grow(dt))?;
            }
            expr.push(op)?;
            Ok(dt)
        }
    }
}

/// Runs the dual for time `t`, ending with the residual growth.
pub fn run_dual<R: Rng + ?Sized>(expr: &DualExpr, t: f64, params: &ModelParams, rng: &mut R) -> Result<DualExpr> {
    run_dual_traced(expr, t, params, rng, |_, _| {})
}

/// As [`run_dual`], calling `on_jump(time, degree_after)` after every jump.
pub fn run_dual_traced<R: Rng + ?Sized>(
    expr: &DualExpr,
    t: f64,
    params: &ModelParams,
    rng: &mut R,
    mut on_jump: impl FnMut(f64, usize),
) -> Result<DualExpr> {
    let mut e = expr.clone();
    let mut now = 0.0;
    while let Some((dt, op)) = next_jump(e.degree(), params, rng) {
        if now + dt > t {
            break;
        }
        now += dt;
        if e.degree() >= 2 {
            e.push(DualOp::Grow(dt))?;
        }
        e.push(op)?;
        on_jump(now, e.degree());
    }
    if e.degree() >= 2 && t > now {
        e.push(DualOp::Grow(t - now))?;
    }
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DualityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub se_lhs: f64,
    pub se_rhs: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub reps: usize,
}

impl DualityReport {
    pub fn se(&self) -> f64 {
        (self.se_lhs.powi(2) + self.se_rhs.powi(2)).sqrt()
    }
}

/// `<ν, φ>` of the final population, exactly without replacement when
/// enumeration is cheap, else averaged over `samples` random tuples.
fn population_average<R: Rng + ?Sized>(
    state: &PopulationState,
    spec: &PolynomialSpec,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if tuple_count(state.n(), spec.degree, SamplingMode::WithoutReplacement) <= ENUMERATION_LIMIT {
        return exact_average(state, spec.degree, SamplingMode::WithoutReplacement, |p| spec.checked(p));
    }
    let mut acc = Accumulator::default();
    for _ in 0..samples {
        let idx = sample_indices_from(state.n(), spec.degree, SamplingMode::WithoutReplacement, rng)?;
        acc.push(spec.checked(&StateView { state, idx: &idx })?);
    }
    Ok(acc.mean())
}

/// Both sides of the duality relation: forward replicates of the population
/// started at `initial` against dual replicates evaluated on samples (with
/// replacement) from `initial`.
pub fn duality_gap(
    initial: &PopulationState,
    spec: &PolynomialSpec,
    t: f64,
    params: &ModelParams,
    reps: usize,
    seed: u64,
) -> Result<DualityReport> {
    if reps < 2 {
        return Err(Error::InvalidParam("at least two replicates required".into()));
    }
    let mut lhs = Accumulator::default();
    let mut sample_rng = rng::stream(seed, 3);
    for rep in 0..reps {
        let mut s = initial.clone();
        Engine::new(params.clone(), replicate_seed(seed, rep as u64)).run(&mut s, t);
        lhs.push(population_average(&s, spec, 1000, &mut sample_rng)?);
    }
    let mut rhs = Accumulator::default();
    let mut dual_rng = rng::stream(seed, 2);
    let start = DualExpr::leaf(spec.clone());
    for _ in 0..reps {
        let e = run_dual(&start, t, params, &mut dual_rng)?;
        let idx = sample_indices_from(initial.n(), e.degree(), SamplingMode::WithReplacement, &mut dual_rng)?;
        let sample = MarkedMatrixSample::from_points(&StateView { state: initial, idx: &idx });
        rhs.push(e.evaluate(&sample)?);
    }
    Ok(DualityReport {
        lhs: lhs.mean(),
        rhs: rhs.mean(),
        gap: lhs.mean() - rhs.mean(),
        se_lhs: lhs.se(),
        se_rhs: rhs.se(),
        n: initial.n(),
        reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{identity, MutationKernel};
    use crate::rng::from_seed;

    fn pair(a: f64) -> MarkedMatrixSample {
        MarkedMatrixSample::new(vec![vec![0.0, a], vec![a, 0.0]], vec![0, 1]).unwrap()
    }

    #[test]
    fn leaf_grow_coalesce() {
        let leaf = DualExpr::leaf(PolynomialSpec::laplace_pair(1.0));
        assert_eq!(leaf.evaluate(&pair(0.0)).unwrap(), 1.0);
        let mut g = leaf.clone();
        g.push(DualOp::Grow(0.25)).unwrap();
        assert!((g.evaluate(&pair(0.5)).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        let mut c = leaf.clone();
        c.push(DualOp::Coalesce { k: 0, l: 1 }).unwrap();
        assert_eq!(c.degree(), 1);
        let one = MarkedMatrixSample::new(vec![vec![0.0]], vec![1]).unwrap();
        assert_eq!(c.evaluate(&one).unwrap(), 1.0);
        assert!(c.evaluate(&MarkedMatrixSample::new(vec![], vec![]).unwrap()).is_err());
    }

    #[test]
    fn degree_bookkeeping() {
        let mut e = DualExpr::leaf(PolynomialSpec::laplace_pair(1.0));
        e.push(DualOp::SelHap { k: 1, chi: Arc::new(vec![1.0, 0.0]) }).unwrap();
        assert_eq!(e.degree(), 3);
        e.push(DualOp::SelPair { k: 0, fitness: Arc::new(FitnessSpec::Diploid { chi: vec![vec![0.5; 2]; 2] }) })
            .unwrap();
        assert_eq!(e.degree(), 5);
        e.push(DualOp::MutPD { k: 4, tilde_beta: Arc::new(identity(2)) }).unwrap();
        assert_eq!(e.degree(), 5);
        e.push(DualOp::Coalesce { k: 4, l: 0 }).unwrap();
        assert_eq!(e.degree(), 4);
        e.push(DualOp::MutPI { k: 0, bar_beta: Arc::new(vec![0.5, 0.5]) }).unwrap();
        assert_eq!(e.degree(), 4);
        assert_eq!(e.depth(), 6);
        let mut one = DualExpr::leaf(PolynomialSpec::type_indicator(0));
        one.push(DualOp::MutPI { k: 0, bar_beta: Arc::new(vec![0.25, 0.75]) }).unwrap();
        assert_eq!(one.degree(), 0);
        assert_eq!(one.evaluate(&MarkedMatrixSample::new(vec![], vec![]).unwrap()).unwrap(), 0.25);
    }

    #[test]
    fn selection_pull_back_by_hand() {
        // ξ = e^{-r12}·1{u1 = fit}; haploid selection at k = 0 with χ = (1, 0).
        let mut e = DualExpr::leaf(PolynomialSpec::laplace_pair_marked(1.0, 0));
        e.push(DualOp::SelHap { k: 0, chi: Arc::new(vec![1.0, 0.0]) }).unwrap();
        let d = vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 2.0], vec![2.0, 2.0, 0.0]];
        // u1 fit: keep branch with weight 1 → e^{-1}.
        let s = MarkedMatrixSample::new(d.clone(), vec![0, 1, 0]).unwrap();
        assert!((e.evaluate(&s).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        // u1 unfit: delete position 0 → ξ on points (1, 2): u = unfit → 0.
        let s = MarkedMatrixSample::new(d.clone(), vec![1, 1, 0]).unwrap();
        assert_eq!(e.evaluate(&s).unwrap(), 0.0);
        let s = MarkedMatrixSample::new(d, vec![1, 0, 0]).unwrap();
        assert!((e.evaluate(&s).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn absorbed_degree_zero_is_constant() {
        let p =
            ModelParams::new(2, 0.0, MutationKernel::two_type(1.0, 1.0).unwrap(), 0.0, FitnessSpec::Neutral).unwrap();
        let mut e = DualExpr::leaf(PolynomialSpec::type_indicator(0));
        let mut rng = from_seed(2);
        let dt = dual_step(&mut e, &p, &mut rng).unwrap();
        assert!(dt.is_finite());
        assert_eq!(e.degree(), 0);
        assert_eq!(dual_step(&mut e, &p, &mut rng).unwrap(), f64::INFINITY);
        let before = e.ops().len();
        let later = run_dual(&e, 100.0, &p, &mut rng).unwrap();
        assert_eq!(later.ops().len(), before);
    }

    #[test]
    fn coalescence_only() {
        let p = ModelParams::neutral(2, 1.0).unwrap();
        let mut e = DualExpr::leaf(PolynomialSpec::laplace_pair(1.0));
        dual_step(&mut e, &p, &mut from_seed(4)).unwrap();
        assert_eq!(e.degree(), 1);
        let same = run_dual(&DualExpr::leaf(PolynomialSpec::laplace_pair(1.0)), 0.0, &p, &mut from_seed(4)).unwrap();
        assert!(same.ops().is_empty());
    }
}

//! Sampled distance matrices, polynomial functionals and summary statistics.

use std::fmt;
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{PopulationState, TypeId};
use crate::rng::exp_time;

/// Read access to a finite sequence of marked points with pairwise distances.
pub trait Points {
    fn len(&self) -> usize;
    fn dist(&self, i: usize, j: usize) -> f64;
    fn mark(&self, i: usize) -> TypeId;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkedMatrixSample {
    pub n: usize,
    /// Row-major `n x n`.
    pub dist: Vec<f64>,
    pub marks: Vec<TypeId>,
}

impl MarkedMatrixSample {
    pub fn new(dist: Vec<Vec<f64>>, marks: Vec<TypeId>) -> Result<Self> {
        let n = marks.len();
        if dist.len() != n || dist.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension { needed: n, got: dist.len() });
        }
        Ok(Self { n, dist: dist.into_iter().flatten().collect(), marks })
    }

    pub fn from_points(p: &dyn Points) -> Self {
        let n = p.len();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                dist[i * n + j] = p.dist(i, j);
            }
        }
        Self { n, dist, marks: (0..n).map(|i| p.mark(i)).collect() }
    }
}

impl Points for MarkedMatrixSample {
    fn len(&self) -> usize {
        self.n
    }
    fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }
    fn mark(&self, i: usize) -> TypeId {
        self.marks[i]
    }
}

/// Individuals `idx` of a population, in order.
pub struct StateView<'a> {
    pub state: &'a PopulationState,
    pub idx: &'a [usize],
}

impl Points for StateView<'_> {
    fn len(&self) -> usize {
        self.idx.len()
    }
    fn dist(&self, i: usize, j: usize) -> f64 {
        self.state.dist(self.idx[i], self.idx[j])
    }
    fn mark(&self, i: usize) -> TypeId {
        self.state.types[self.idx[i]]
    }
}

/// Position `i` reads position `map[i]` of the inner points.
pub struct Remap<'a> {
    pub inner: &'a dyn Points,
    pub map: &'a [usize],
}

impl Points for Remap<'_> {
    fn len(&self) -> usize {
        self.map.len()
    }
    fn dist(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.inner.dist(self.map[i], self.map[j])
        }
    }
    fn mark(&self, i: usize) -> TypeId {
        self.inner.mark(self.map[i])
    }
}

/// All off-diagonal distances shifted by `shift`.
pub struct Shifted<'a> {
    pub inner: &'a dyn Points,
    pub shift: f64,
}

impl Points for Shifted<'_> {
    fn len(&self) -> usize {
        self.inner.len()
    }
    fn dist(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.inner.dist(i, j) + self.shift
        }
    }
    fn mark(&self, i: usize) -> TypeId {
        self.inner.mark(i)
    }
}

/// Points with one mark replaced.
pub struct Remarked<'a> {
    pub inner: &'a dyn Points,
    pub pos: usize,
    pub mark: TypeId,
}

impl Points for Remarked<'_> {
    fn len(&self) -> usize {
        self.inner.len()
    }
    fn dist(&self, i: usize, j: usize) -> f64 {
        self.inner.dist(i, j)
    }
    fn mark(&self, i: usize) -> TypeId {
        if i == self.pos {
            self.mark
        } else {
            self.inner.mark(i)
        }
    }
}

pub type PointFn = Arc<dyn Fn(&dyn Points) -> f64 + Send + Sync>;

/// A bounded test function of the first `degree` points, defining the
/// polynomial `Φ(u) = <ν^u, φ>`.
#[derive(Clone)]
pub struct PolynomialSpec {
    pub name: String,
    pub degree: usize,
    pub bound: f64,
    pub eval: PointFn,
    /// d/dε φ(r + 2ε) at ε = 0, with all off-diagonal distances shifted.
    pub growth: Option<PointFn>,
}

impl fmt::Debug for PolynomialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PolynomialSpec")
            .field("name", &self.name)
            .field("degree", &self.degree)
            .field("bound", &self.bound)
            .finish()
    }
}

impl PolynomialSpec {
    pub fn new(name: impl Into<String>, degree: usize, bound: f64, eval: PointFn) -> Self {
        Self { name: name.into(), degree, bound, eval, growth: None }
    }

    pub fn with_growth(mut self, growth: PointFn) -> Self {
        self.growth = Some(growth);
        self
    }

    pub fn value(&self, p: &dyn Points) -> f64 {
        (self.eval)(p)
    }

    /// Evaluates and enforces the declared bound.
    pub fn checked(&self, p: &dyn Points) -> Result<f64> {
        let v = (self.eval)(p);
        if !(v.abs() <= self.bound * (1.0 + 1e-12)) {
            return Err(Error::BoundExceeded { name: self.name.clone(), value: v, bound: self.bound });
        }
        Ok(v)
    }

    /// Growth derivative, analytic if available, else a central difference with step `h`.
    pub fn growth_derivative(&self, p: &dyn Points, h: Option<f64>) -> Result<f64> {
        if let Some(g) = &self.growth {
            return Ok(g(p));
        }
        let h = h.ok_or_else(|| Error::Unsupported(format!("`{}` has no analytic growth derivative", self.name)))?;
        let up = Shifted { inner: p, shift: 2.0 * h };
        let down = Shifted { inner: p, shift: -2.0 * h };
        Ok(((self.eval)(&up) - (self.eval)(&down)) / (2.0 * h))
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const({c})"), 0, c.abs(), Arc::new(move |_| c)).with_growth(Arc::new(|_| 0.0))
    }

    /// r₁₂ (unbounded).
    pub fn pair_distance() -> Self {
        Self::new("r12", 2, f64::INFINITY, Arc::new(|p| p.dist(0, 1))).with_growth(Arc::new(|_| 2.0))
    }

    /// e^{-λ r₁₂}.
    pub fn laplace_pair(lambda: f64) -> Self {
        Self::new(format!("exp(-{lambda}*r12)"), 2, 1.0, Arc::new(move |p| (-lambda * p.dist(0, 1)).exp()))
            .with_growth(Arc::new(move |p| -2.0 * lambda * (-lambda * p.dist(0, 1)).exp()))
    }

    /// e^{-λ r₁₂} · 1{u₁ = u}.
    pub fn laplace_pair_marked(lambda: f64, u: TypeId) -> Self {
        let f = move |p: &dyn Points| if p.mark(0) == u { (-lambda * p.dist(0, 1)).exp() } else { 0.0 };
        Self::new(format!("exp(-{lambda}*r12)*1[u1={u}]"), 2, 1.0, Arc::new(f))
            .with_growth(Arc::new(move |p| -2.0 * lambda * f(p)))
    }

    /// 1{u₁ = u}.
    pub fn type_indicator(u: TypeId) -> Self {
        Self::new(format!("1[u1={u}]"), 1, 1.0, Arc::new(move |p| if p.mark(0) == u { 1.0 } else { 0.0 }))
            .with_growth(Arc::new(|_| 0.0))
    }

    /// e^{-λ ℓₙ} over the first `n` points.
    pub fn laplace_tree_length(n: usize, lambda: f64) -> Self {
        let f = move |p: &dyn Points| (-lambda * tree_length_points(p, n)).exp();
        Self::new(format!("exp(-{lambda}*l{n})"), n, 1.0, Arc::new(f))
            .with_growth(Arc::new(move |p| -(n as f64) * lambda * f(p)))
    }

    /// φⁿᵢⱼ: e^{-λ ℓₙ} times the indicator that points 1..i and n+1..n+j carry type `fit`.
    pub fn phi_ij(n: usize, i: usize, j: usize, lambda: f64, fit: TypeId) -> Self {
        let f = move |p: &dyn Points| phi_ij_points(p, i, j, n, lambda, fit);
        let nn = n as f64;
        let grow = move |p: &dyn Points| if n >= 2 { -nn * lambda * f(p) } else { 0.0 };
        Self::new(format!("phi{n}_{i}{j}(lambda={lambda})"), n + j, 1.0, Arc::new(f)).with_growth(Arc::new(grow))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    WithReplacement,
    WithoutReplacement,
}

pub fn sample_indices_from<R: Rng + ?Sized>(
    n_pop: usize,
    n: usize,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<Vec<usize>> {
    match mode {
        SamplingMode::WithReplacement => Ok((0..n).map(|_| rng.random_range(0..n_pop)).collect()),
        SamplingMode::WithoutReplacement => {
            if n > n_pop {
                return Err(Error::SampleTooLarge { requested: n, available: n_pop });
            }
            Ok(sample_indices(rng, n_pop, n).into_vec())
        }
    }
}

pub fn sample_marked_matrix<R: Rng + ?Sized>(
    state: &PopulationState,
    n: usize,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<MarkedMatrixSample> {
    let idx = sample_indices_from(state.n(), n, mode, rng)?;
    Ok(MarkedMatrixSample::from_points(&StateView { state, idx: &idx }))
}

/// Ordered tuples enumerated exactly when their number stays below this.
pub const ENUMERATION_LIMIT: f64 = 2.0e5;

fn falling(n: usize, k: usize) -> f64 {
    (0..k).map(|i| (n - i) as f64).product()
}

pub fn tuple_count(n_pop: usize, k: usize, mode: SamplingMode) -> f64 {
    match mode {
        SamplingMode::WithReplacement => (n_pop as f64).powi(k as i32),
        SamplingMode::WithoutReplacement => {
            if k > n_pop {
                0.0
            } else {
                falling(n_pop, k)
            }
        }
    }
}

/// Calls `f` on every ordered `k`-tuple of `0..n_pop` (distinct entries unless with replacement).
pub fn for_each_tuple(n_pop: usize, k: usize, mode: SamplingMode, mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; k];
    let mut used = vec![false; n_pop];
    fn rec(
        pos: usize,
        n_pop: usize,
        idx: &mut Vec<usize>,
        used: &mut Vec<bool>,
        mode: SamplingMode,
        f: &mut dyn FnMut(&[usize]),
    ) {
        if pos == idx.len() {
            f(idx);
            return;
        }
        for i in 0..n_pop {
            if mode == SamplingMode::WithoutReplacement && used[i] {
                continue;
            }
            idx[pos] = i;
            used[i] = true;
            rec(pos + 1, n_pop, idx, used, mode, f);
            used[i] = false;
        }
    }
    if k > n_pop && mode == SamplingMode::WithoutReplacement {
        return;
    }
    rec(0, n_pop, &mut idx, &mut used, mode, &mut f);
}

/// Exact `<ν, g>` over ordered `k`-tuples of the population.
pub fn exact_average(
    state: &PopulationState,
    k: usize,
    mode: SamplingMode,
    mut g: impl FnMut(&dyn Points) -> Result<f64>,
) -> Result<f64> {
    let count = tuple_count(state.n(), k, mode);
    if count == 0.0 {
        return Err(Error::SampleTooLarge { requested: k, available: state.n() });
    }
    let mut sum = 0.0;
    let mut err = None;
    for_each_tuple(state.n(), k, mode, |idx| {
        if err.is_some() {
            return;
        }
        match g(&StateView { state, idx }) {
            Ok(v) => sum += v,
            Err(e) => err = Some(e),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(sum / count),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub reps: usize,
}

impl Estimate {
    pub fn exact(mean: f64) -> Self {
        Self { mean, se: 0.0, reps: 0 }
    }
}

/// Monte Carlo (or exact, for small enough populations without replacement)
/// estimate of `<ν, φ>`.
pub fn estimate_polynomial<R: Rng + ?Sized>(
    state: &PopulationState,
    spec: &PolynomialSpec,
    reps: usize,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<Estimate> {
    if reps == 0 {
        return Err(Error::InvalidParam("at least one replicate required".into()));
    }
    if mode == SamplingMode::WithoutReplacement && tuple_count(state.n(), spec.degree, mode) <= ENUMERATION_LIMIT {
        let m = exact_average(state, spec.degree, mode, |p| spec.checked(p))?;
        return Ok(Estimate::exact(m));
    }
    let mut acc = Accumulator::default();
    for _ in 0..reps {
        let idx = sample_indices_from(state.n(), spec.degree, mode, rng)?;
        acc.push(spec.checked(&StateView { state, idx: &idx })?);
    }
    Ok(acc.estimate())
}

pub fn laplace_pair_distance<R: Rng + ?Sized>(
    state: &PopulationState,
    lambda: f64,
    reps: usize,
    rng: &mut R,
) -> Result<Estimate> {
    estimate_polynomial(state, &PolynomialSpec::laplace_pair(lambda), reps, SamplingMode::WithoutReplacement, rng)
}

/// Exact `<ν^N, e^{-λ r₁₂}>` without replacement in O(N²).
pub fn mean_laplace_pair(state: &PopulationState, lambda: f64) -> f64 {
    let n = state.n();
    let mut s = 0.0;
    for a in 0..n {
        let row = state.mrca_row(a);
        for &m in &row[a + 1..] {
            s += (-lambda * 2.0 * (state.t - m)).exp();
        }
    }
    2.0 * s / (n * (n - 1)) as f64
}

/// Half the minimal single-cycle tour through the first `n` points.
pub fn tree_length_points(p: &dyn Points, n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => p.dist(0, 1),
        3 => (p.dist(0, 1) + p.dist(1, 2) + p.dist(0, 2)) / 2.0,
        _ if n <= 12 => held_karp(p, n) / 2.0,
        _ => linkage_tour(p, n) / 2.0,
    }
}

/// ℓₙ of a sample: half the minimal single-cycle tour, which on ultrametric
/// inputs is the total branch length of the spanned tree.
pub fn tree_length(sample: &MarkedMatrixSample) -> Result<f64> {
    if sample.n < 2 {
        return Err(Error::InvalidParam("tree length needs at least two points".into()));
    }
    Ok(tree_length_points(sample, sample.n))
}

/// Exact shortest Hamiltonian cycle by dynamic programming over subsets.
fn held_karp(p: &dyn Points, n: usize) -> f64 {
    let full = 1usize << (n - 1);
    // dp[mask][j]: shortest path from point 0 through the points of `mask` (over 1..n) ending at j.
    let mut dp = vec![f64::INFINITY; full * n];
    for j in 1..n {
        dp[(1 << (j - 1)) * n + j] = p.dist(0, j);
    }
    for mask in 1..full {
        for j in 1..n {
            let cur = dp[mask * n + j];
            if !cur.is_finite() || mask & (1 << (j - 1)) == 0 {
                continue;
            }
            for k in 1..n {
                let bit = 1 << (k - 1);
                if mask & bit != 0 {
                    continue;
                }
                let v = cur + p.dist(j, k);
                let slot = &mut dp[(mask | bit) * n + k];
                if v < *slot {
                    *slot = v;
                }
            }
        }
    }
    (1..n).map(|j| dp[(full - 1) * n + j] + p.dist(j, 0)).fold(f64::INFINITY, f64::min)
}

/// Leaves in single-linkage dendrogram order; the closed tour in this order.
fn linkage_tour(p: &dyn Points, n: usize) -> f64 {
    let order = linkage(p, n).1;
    (0..n).map(|i| p.dist(order[i], order[(i + 1) % n])).sum()
}

/// Single-linkage agglomeration: (total branch length, leaf order).
fn linkage(p: &dyn Points, n: usize) -> (f64, Vec<usize>) {
    // Each cluster: height and its leaves in order.
    let mut clusters: Vec<(f64, Vec<usize>)> = (0..n).map(|i| (0.0, vec![i])).collect();
    let mut total = 0.0;
    while clusters.len() > 1 {
        let mut best = (f64::INFINITY, 0, 1);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut d = f64::INFINITY;
                for &x in &clusters[a].1 {
                    for &y in &clusters[b].1 {
                        d = d.min(p.dist(x, y));
                    }
                }
                if d < best.0 {
                    best = (d, a, b);
                }
            }
        }
        let (d, a, b) = best;
        let cb = clusters.swap_remove(b);
        let ca = &mut clusters[a];
        let h = d / 2.0;
        total += (h - ca.0).max(0.0) + (h - cb.0).max(0.0);
        ca.0 = h.max(ca.0).max(cb.0);
        ca.1.extend(cb.1);
    }
    (total, clusters.pop().unwrap().1)
}

/// Independent ℓₙ: reconstruct the ultrametric tree by single linkage and sum branch lengths.
pub fn tree_length_oracle(sample: &MarkedMatrixSample) -> Result<f64> {
    if sample.n < 2 {
        return Err(Error::InvalidParam("tree length needs at least two points".into()));
    }
    let v = crate::model::ultrametric_violations(sample.n, |i, j| sample.dist(i, j), 1e-9);
    if let Some(w) = v.first() {
        return Err(Error::NotUltrametric { k: w.k, l: w.l, m: w.m, excess: w.excess });
    }
    Ok(linkage(sample, sample.n).0)
}

pub fn phi_ij_points(p: &dyn Points, i: usize, j: usize, n: usize, lambda: f64, fit: TypeId) -> f64 {
    if (0..i).any(|a| p.mark(a) != fit) || (n..n + j).any(|a| p.mark(a) != fit) {
        return 0.0;
    }
    if n <= 1 {
        1.0
    } else {
        (-lambda * tree_length_points(p, n)).exp()
    }
}

/// φⁿᵢⱼ evaluated on a sample.
pub fn phi_ij_n(sample: &MarkedMatrixSample, i: usize, j: usize, n: usize, lambda: f64, fit: TypeId) -> Result<f64> {
    if sample.n < n + j {
        return Err(Error::Dimension { needed: n + j, got: sample.n });
    }
    if i > n {
        return Err(Error::InvalidParam(format!("index i={i} exceeds tree size n={n}")));
    }
    Ok(phi_ij_points(sample, i, j, n, lambda, fit))
}

/// Kingman-coalescent ultrametric sample of `n` leaves with pair coalescence rate `gamma`.
pub fn random_coalescent_sample<R: Rng + ?Sized>(n: usize, gamma: f64, rng: &mut R) -> MarkedMatrixSample {
    let mut blocks: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut dist = vec![0.0; n * n];
    let mut t = 0.0;
    while blocks.len() > 1 {
        let b = blocks.len() as f64;
        t += exp_time(rng, gamma * b * (b - 1.0) / 2.0);
        let i = rng.random_range(0..blocks.len());
        let mut j = rng.random_range(0..blocks.len() - 1);
        if j >= i {
            j += 1;
        }
        let (lo, hi) = (i.min(j), i.max(j));
        let merged = blocks.swap_remove(hi);
        for &x in &blocks[lo] {
            for &y in &merged {
                dist[x * n + y] = 2.0 * t;
                dist[y * n + x] = 2.0 * t;
            }
        }
        blocks[lo].extend(merged);
    }
    MarkedMatrixSample { n, dist, marks: vec![0; n] }
}

/// Exact without-replacement values of the Φⁿᵢⱼ family (n ≤ 2, j ≤ 2) on a population.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhiTable {
    pub p1_10: f64,
    pub p1_01: f64,
    pub p1_11: f64,
    pub p1_02: f64,
    pub p2_00: f64,
    pub p2_10: f64,
    pub p2_01: f64,
    pub p2_20: f64,
    pub p2_11: f64,
    pub p2_02: f64,
}

impl PhiTable {
    pub const NAMES: [&'static str; 10] =
        ["phi1_10", "phi1_01", "phi1_11", "phi1_02", "phi2_00", "phi2_10", "phi2_01", "phi2_20", "phi2_11", "phi2_02"];

    pub fn to_array(&self) -> [f64; 10] {
        [
            self.p1_10, self.p1_01, self.p1_11, self.p1_02, self.p2_00, self.p2_10, self.p2_01, self.p2_20, self.p2_11,
            self.p2_02,
        ]
    }

    pub fn from_array(a: [f64; 10]) -> Self {
        Self {
            p1_10: a[0],
            p1_01: a[1],
            p1_11: a[2],
            p1_02: a[3],
            p2_00: a[4],
            p2_10: a[5],
            p2_01: a[6],
            p2_20: a[7],
            p2_11: a[8],
            p2_02: a[9],
        }
    }
}

/// Exact averages of φⁿᵢⱼ over ordered distinct tuples of the population in O(N²).
pub fn phi_table_exact(state: &PopulationState, lambda: f64, fit: TypeId) -> PhiTable {
    let n = state.n();
    let c = state.types.iter().filter(|&&u| u == fit).count();
    let ratio = |avail: usize, pool: usize, k: usize| -> f64 {
        if k > avail || k > pool {
            0.0
        } else {
            falling(avail, k) / falling(pool, k)
        }
    };
    let p1 = |m: usize| ratio(c, n, m);
    // Sums over ordered pairs (a, b) of w · [marks] · P(j further distinct fit individuals).
    let mut s = [[0.0f64; 3]; 3];
    for a in 0..n {
        let ua = state.types[a] == fit;
        let row = state.mrca_row(a);
        for b in a + 1..n {
            let ub = state.types[b] == fit;
            let w = (-lambda * 2.0 * (state.t - row[b])).exp();
            let cab = ua as usize + ub as usize;
            let one = ua as usize as f64 + ub as usize as f64;
            let both = if ua && ub { 2.0 } else { 0.0 };
            for j in 0..3 {
                let g = ratio(c - cab, n - 2, j) * w;
                s[0][j] += 2.0 * g;
                s[1][j] += one * g;
                s[2][j] += both * g;
            }
        }
    }
    let pairs = (n * (n - 1)) as f64;
    PhiTable {
        p1_10: p1(1),
        p1_01: p1(1),
        p1_11: p1(2),
        p1_02: p1(2),
        p2_00: s[0][0] / pairs,
        p2_10: s[1][0] / pairs,
        p2_01: s[0][1] / pairs,
        p2_20: s[2][0] / pairs,
        p2_11: s[1][1] / pairs,
        p2_02: s[0][2] / pairs,
    }
}

/// Streaming mean and variance.
#[derive(Debug, Clone, Default)]
pub struct Accumulator {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn se(&self) -> f64 {
        if self.n < 2 {
            f64::NAN
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate { mean: self.mean, se: if self.n < 2 { 0.0 } else { self.se() }, reps: self.n }
    }
}

pub fn mean_se(xs: &[f64]) -> Estimate {
    let mut a = Accumulator::default();
    xs.iter().for_each(|&x| a.push(x));
    a.estimate()
}

/// Mean and batch-means standard error of a correlated series.
pub fn batch_means(xs: &[f64], batches: usize) -> Estimate {
    let b = batches.min(xs.len()).max(1);
    let size = xs.len() / b;
    if size == 0 {
        return mean_se(xs);
    }
    let means: Vec<f64> = (0..b).map(|i| xs[i * size..(i + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let e = mean_se(&means);
    Estimate { mean: xs.iter().sum::<f64>() / xs.len() as f64, se: e.se, reps: xs.len() }
}

/// Two-sample Kolmogorov-Smirnov distance evaluated at `points` (or at all
/// sample values when `points` is empty), with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64], points: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let cdf = |s: &[f64], x: f64| s.partition_point(|&v| v <= x) as f64 / s.len() as f64;
    let eval: Vec<f64> = if points.is_empty() { a.iter().chain(b.iter()).copied().collect() } else { points.to_vec() };
    let d = eval.iter().map(|&x| (cdf(&a, x) - cdf(&b, x)).abs()).fold(0.0, f64::max);
    let ne = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let lam = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_q(lam))
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_q(lam: f64) -> f64 {
    if lam < 1e-3 {
        return 1.0;
    }
    let mut s = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = 2.0 * (-1f64).powi(j - 1) * (-2.0 * jf * jf * lam * lam).exp();
        s += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    s.clamp(0.0, 1.0)
}

/// Weighted least squares fit of `y ≈ a + c·x`; returns ((a, se_a), (c, se_c)).
/// Weights are inverse variances `1/se²`; zero SEs get a tiny floor.
pub fn weighted_line_fit(x: &[f64], y: &[f64], se: &[f64]) -> ((f64, f64), (f64, f64)) {
    let w: Vec<f64> = se.iter().map(|s| 1.0 / s.max(1e-12).powi(2)).collect();
    let sw: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y).sum();
    let det = sw * sxx - sx * sx;
    let c = (sw * sxy - sx * sy) / det;
    let a = (sxx * sy - sx * sxy) / det;
    ((a, (sxx / det).sqrt()), (c, (sw / det).sqrt()))
}

//! Populations, parameters and fitness.
//!
//! Individuals and types are indexed from 0.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TypeId = usize;

const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeAlphabet {
    labels: Vec<String>,
}

impl TypeAlphabet {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidParam("alphabet must contain at least one type".into()));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(Error::InvalidParam(format!("duplicate type label `{a}`")));
            }
        }
        Ok(Self { labels })
    }

    /// The fit/unfit alphabet used by the two-type formulas; type 0 is the fit type.
    pub fn two_type() -> Self {
        Self { labels: vec!["fit".into(), "unfit".into()] }
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, t: TypeId) -> &str {
        &self.labels[t]
    }

    pub fn index_of(&self, label: &str) -> Option<TypeId> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Mutation at total rate `rate` per individual with kernel
/// `z * bar_beta + (1 - z) * tilde_beta(u, .)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationKernel {
    pub rate: f64,
    pub z: f64,
    pub bar_beta: Vec<f64>,
    pub tilde_beta: Vec<Vec<f64>>,
}

fn check_probability_vector(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|&p| !(0.0..=1.0).contains(&p) || p.is_nan()) {
        return Err(Error::InvalidParam(format!("{what} has entries outside [0,1]")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidParam(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

impl MutationKernel {
    pub fn new(rate: f64, z: f64, bar_beta: Vec<f64>, tilde_beta: Vec<Vec<f64>>) -> Result<Self> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::InvalidParam(format!("mutation rate must be nonnegative, got {rate}")));
        }
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::InvalidParam(format!("z must lie in [0,1], got {z}")));
        }
        let k = bar_beta.len();
        if k == 0 {
            return Err(Error::InvalidParam("mutation kernel over an empty alphabet".into()));
        }
        check_probability_vector(&bar_beta, "bar_beta")?;
        if tilde_beta.len() != k {
            return Err(Error::InvalidParam(format!("tilde_beta has {} rows, expected {k}", tilde_beta.len())));
        }
        for (u, row) in tilde_beta.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidParam(format!("tilde_beta row {u} has wrong length")));
            }
            check_probability_vector(row, &format!("tilde_beta row {u}"))?;
        }
        Ok(Self { rate, z, bar_beta, tilde_beta })
    }

    /// No mutation over `k` types.
    pub fn none(k: usize) -> Self {
        let mut bar = vec![0.0; k];
        bar[0] = 1.0;
        Self { rate: 0.0, z: 0.0, bar_beta: bar, tilde_beta: identity(k) }
    }

    /// Two-type parent-independent mutation: the fit type (0) turns unfit at rate
    /// `theta_fit / 2` and the unfit type (1) turns fit at rate `theta_unfit / 2`.
    pub fn two_type(theta_fit: f64, theta_unfit: f64) -> Result<Self> {
        let total = theta_fit + theta_unfit;
        if !(theta_fit >= 0.0 && theta_unfit >= 0.0) {
            return Err(Error::InvalidParam("two-type mutation rates must be nonnegative".into()));
        }
        if total == 0.0 {
            return Ok(Self::none(2));
        }
        Self::new(total / 2.0, 1.0, vec![theta_unfit / total, theta_fit / total], identity(2))
    }

    pub fn alphabet_size(&self) -> usize {
        self.bar_beta.len()
    }

    /// Effective kernel β(u, v).
    pub fn beta(&self, u: TypeId, v: TypeId) -> f64 {
        self.z * self.bar_beta[v] + (1.0 - self.z) * self.tilde_beta[u][v]
    }

    /// Draws a new type for an individual of type `u`. Consumes exactly two uniforms.
    pub fn sample<R: Rng + ?Sized>(&self, u: TypeId, rng: &mut R) -> TypeId {
        let pick: f64 = rng.random();
        let x: f64 = rng.random();
        let row = if pick < self.z { &self.bar_beta } else { &self.tilde_beta[u] };
        inverse_cdf(row, x)
    }

    /// True if some type can never be left by mutation.
    pub fn has_absorbing_type(&self) -> bool {
        (0..self.alphabet_size()).any(|u| self.rate == 0.0 || self.beta(u, u) >= 1.0 - STOCHASTIC_TOL)
    }
}

pub(crate) fn inverse_cdf(p: &[f64], x: f64) -> usize {
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if x < acc {
            return i;
        }
    }
    // Rounding in the cumulative sum: fall back to the last type with positive mass.
    p.iter().rposition(|&w| w > 0.0).unwrap_or(p.len() - 1)
}

pub fn identity(k: usize) -> Vec<Vec<f64>> {
    (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Decay of the distance-dependent fitness in the genealogical distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecayProfile {
    Constant,
    Exponential {
        rate: f64,
    },
    /// `values[i]` applies on `[breaks[i-1], breaks[i])`, with `values.len() == breaks.len() + 1`.
    Step {
        breaks: Vec<f64>,
        values: Vec<f64>,
    },
}

impl DecayProfile {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            DecayProfile::Constant => 1.0,
            DecayProfile::Exponential { rate } => (-rate * r).exp(),
            DecayProfile::Step { breaks, values } => {
                let i = breaks.partition_point(|&b| b <= r);
                values[i]
            }
        }
    }

    fn validate(&self, kin: bool) -> Result<()> {
        match self {
            DecayProfile::Constant => Ok(()),
            DecayProfile::Exponential { rate } => {
                if *rate >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParam(format!("decay rate must be nonnegative, got {rate}")))
                }
            }
            DecayProfile::Step { breaks, values } => {
                if values.len() != breaks.len() + 1 {
                    return Err(Error::InvalidParam("step profile needs one more value than breaks".into()));
                }
                if breaks.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidParam("step profile breaks must increase".into()));
                }
                if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::InvalidParam("step profile values must lie in [0,1]".into()));
                }
                if kin && values.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::InvalidParam("kin profile must be nonincreasing".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitnessSpec {
    Neutral,
    Haploid {
        chi: Vec<f64>,
    },
    Diploid {
        chi: Vec<Vec<f64>>,
    },
    DistanceDependent {
        base: Vec<Vec<f64>>,
        profile: DecayProfile,
        #[serde(default)]
        kin: bool,
    },
}

fn check_symmetric_unit(m: &[Vec<f64>], k: usize, what: &str) -> Result<()> {
    if m.len() != k || m.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidParam(format!("{what} must be {k}x{k}")));
    }
    for i in 0..k {
        for j in 0..k {
            if !(0.0..=1.0).contains(&m[i][j]) {
                return Err(Error::InvalidParam(format!("{what} entry ({i},{j}) outside [0,1]")));
            }
            if m[i][j] != m[j][i] {
                return Err(Error::InvalidParam(format!("{what} is not symmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

impl FitnessSpec {
    pub fn validate(&self, k: usize) -> Result<()> {
        match self {
            FitnessSpec::Neutral => Ok(()),
            FitnessSpec::Haploid { chi } => {
                if chi.len() != k {
                    return Err(Error::InvalidParam(format!("haploid fitness needs {k} values")));
                }
                if chi.iter().any(|c| !(0.0..=1.0).contains(c)) {
                    return Err(Error::InvalidParam("haploid fitness values must lie in [0,1]".into()));
                }
                Ok(())
            }
            FitnessSpec::Diploid { chi } => check_symmetric_unit(chi, k, "diploid fitness"),
            FitnessSpec::DistanceDependent { base, profile, kin } => {
                check_symmetric_unit(base, k, "distance-dependent base fitness")?;
                profile.validate(*kin)
            }
        }
    }

    /// Number of individuals a selective event involves (0 when neutral).
    pub fn arity(&self) -> usize {
        match self {
            FitnessSpec::Neutral => 0,
            FitnessSpec::Haploid { .. } => 2,
            FitnessSpec::Diploid { .. } | FitnessSpec::DistanceDependent { .. } => 3,
        }
    }

    pub fn haploid(&self, u: TypeId) -> f64 {
        match self {
            FitnessSpec::Haploid { chi } => chi[u],
            _ => 1.0,
        }
    }

    /// Fitness of a parent of type `u` with partner of type `v` at distance `r`.
    pub fn pair(&self, u: TypeId, v: TypeId, r: f64) -> f64 {
        match self {
            FitnessSpec::Diploid { chi } => chi[u][v],
            FitnessSpec::DistanceDependent { base, profile, .. } => base[u][v] * profile.eval(r),
            FitnessSpec::Haploid { chi } => chi[u],
            FitnessSpec::Neutral => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub gamma: f64,
    pub mutation: MutationKernel,
    pub alpha: f64,
    pub fitness: FitnessSpec,
    pub n: usize,
}

impl ModelParams {
    pub fn new(n: usize, gamma: f64, mutation: MutationKernel, alpha: f64, fitness: FitnessSpec) -> Result<Self> {
        let p = Self { gamma, mutation, alpha, fitness, n };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParam(format!("population size must be at least 2, got {}", self.n)));
        }
        // gamma = 0 is allowed for growth-only runs.
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidParam(format!("gamma must be nonnegative, got {}", self.gamma)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParam(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        self.fitness.validate(self.mutation.alphabet_size())
    }

    /// Neutral model without mutation.
    pub fn neutral(n: usize, gamma: f64) -> Result<Self> {
        Self::new(n, gamma, MutationKernel::none(2), 0.0, FitnessSpec::Neutral)
    }

    /// Two types with parent-independent mutation and haploid selection favoring type 0.
    pub fn two_type(n: usize, gamma: f64, theta_fit: f64, theta_unfit: f64, alpha: f64) -> Result<Self> {
        Self::new(
            n,
            gamma,
            MutationKernel::two_type(theta_fit, theta_unfit)?,
            alpha,
            FitnessSpec::Haploid { chi: vec![1.0, 0.0] },
        )
    }

    pub fn alphabet_size(&self) -> usize {
        self.mutation.alphabet_size()
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self { alpha, ..self.clone() }
    }
}

/// Population of `n` individuals: types and the symmetric matrix of MRCA times.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationState {
    pub t: f64,
    pub types: Vec<TypeId>,
    n: usize,
    mrca: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialKind {
    Star,
    Comb(f64),
    Given(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TypeInit {
    All(TypeId),
    /// Individual `i` gets type `i mod K`.
    Cyclic,
    Random(Vec<f64>),
    Given(Vec<TypeId>),
}

pub fn make_initial<R: Rng + ?Sized>(
    kind: &InitialKind,
    n: usize,
    alphabet_size: usize,
    types: &TypeInit,
    rng: &mut R,
) -> Result<PopulationState> {
    if n < 2 {
        return Err(Error::InvalidParam(format!("population size must be at least 2, got {n}")));
    }
    let types = match types {
        TypeInit::All(u) => {
            if *u >= alphabet_size {
                return Err(Error::InvalidParam(format!("type {u} outside alphabet")));
            }
            vec![*u; n]
        }
        TypeInit::Cyclic => (0..n).map(|i| i % alphabet_size).collect(),
        TypeInit::Random(p) => {
            if p.len() != alphabet_size {
                return Err(Error::InvalidParam("type probabilities do not match alphabet".into()));
            }
            check_probability_vector(p, "initial type distribution")?;
            (0..n).map(|_| inverse_cdf(p, rng.random())).collect()
        }
        TypeInit::Given(v) => {
            if v.len() != n {
                return Err(Error::Dimension { needed: n, got: v.len() });
            }
            if let Some(&u) = v.iter().find(|&&u| u >= alphabet_size) {
                return Err(Error::InvalidParam(format!("type {u} outside alphabet")));
            }
            v.clone()
        }
    };
    match kind {
        InitialKind::Star => Ok(PopulationState::from_parts(0.0, types, vec![0.0; n * n])),
        InitialKind::Comb(d) => {
            if !(*d >= 0.0) {
                return Err(Error::InvalidParam(format!("comb spacing must be nonnegative, got {d}")));
            }
            let mut s = PopulationState::from_parts(0.0, types, vec![-d / 2.0; n * n]);
            for k in 0..n {
                s.mrca[k * n + k] = 0.0;
            }
            Ok(s)
        }
        InitialKind::Given(m) => PopulationState::from_distances(m, types),
    }
}

impl PopulationState {
    fn from_parts(t: f64, types: Vec<TypeId>, mrca: Vec<f64>) -> Self {
        let n = types.len();
        Self { t, types, n, mrca }
    }

    /// State at time 0 with initial distances `r`, which must be a symmetric
    /// pseudo-ultrametric with zero diagonal.
    pub fn from_distances(r: &[Vec<f64>], types: Vec<TypeId>) -> Result<Self> {
        let n = types.len();
        if r.len() != n || r.iter().any(|row| row.len() != n) {
            return Err(Error::Dimension { needed: n, got: r.len() });
        }
        for k in 0..n {
            if r[k][k] != 0.0 {
                return Err(Error::InvalidParam(format!("nonzero diagonal entry at {k}")));
            }
            for l in 0..n {
                if r[k][l] != r[l][k] {
                    return Err(Error::NotSymmetric { k, l });
                }
                if !(r[k][l] >= 0.0) {
                    return Err(Error::InvalidParam(format!("negative distance at ({k},{l})")));
                }
            }
        }
        if let Some(v) = first_ultrametric_violation(n, |i, j| r[i][j], 0.0) {
            return Err(Error::NotUltrametric { k: v.k, l: v.l, m: v.m, excess: v.excess });
        }
        let mut mrca = vec![0.0; n * n];
        for k in 0..n {
            for l in 0..n {
                mrca[k * n + l] = -r[k][l] / 2.0;
            }
        }
        Ok(Self::from_parts(0.0, types, mrca))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn mrca(&self, k: usize, l: usize) -> f64 {
        self.mrca[k * self.n + l]
    }

    pub fn mrca_row(&self, k: usize) -> &[f64] {
        &self.mrca[k * self.n..(k + 1) * self.n]
    }

    /// Twice the time back to the most recent common ancestor.
    /// Panics on a types-only state.
    #[inline]
    pub fn dist(&self, k: usize, l: usize) -> f64 {
        if k == l {
            0.0
        } else {
            2.0 * (self.t - self.mrca[k * self.n + l])
        }
    }

    pub fn pair_distance(&self, k: usize, l: usize) -> Result<f64> {
        for i in [k, l] {
            if i >= self.n {
                return Err(Error::IndexOutOfRange { index: i, n: self.n });
            }
        }
        Ok(self.dist(k, l))
    }

    pub fn distance_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|k| (0..self.n).map(|l| self.dist(k, l)).collect()).collect()
    }

    /// Moves time forward with no events; all off-diagonal distances grow by `2 dt`.
    pub fn advance_to(&mut self, t: f64) {
        debug_assert!(t >= self.t);
        self.t = t;
    }

    /// Individual `l` becomes an offspring of `k` at the current time.
    pub fn apply_replacement(&mut self, k: usize, l: usize) -> Result<()> {
        let n = self.n;
        for i in [k, l] {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, n });
            }
        }
        if k == l {
            return Err(Error::SelfReplacement(k));
        }
        self.replace_unchecked(k, l);
        Ok(())
    }

    /// State that tracks types only; replacements skip the genealogy update.
    /// Useful when ancestry is read from an event log instead of the matrix.
    pub fn types_only(t: f64, types: Vec<TypeId>) -> Self {
        Self::from_parts(t, types, Vec::new())
    }

    pub fn tracks_genealogy(&self) -> bool {
        !self.mrca.is_empty()
    }

    #[inline]
    pub(crate) fn replace_unchecked(&mut self, k: usize, l: usize) {
        let n = self.n;
        self.types[l] = self.types[k];
        if self.mrca.is_empty() {
            return;
        }
        self.mrca.copy_within(k * n..(k + 1) * n, l * n);
        let t = self.t;
        self.mrca[l * n + k] = t;
        self.mrca[l * n + l] = t;
        let (rows_before, rest) = self.mrca.split_at_mut(l * n);
        let (row_l, rows_after) = rest.split_at_mut(n);
        for (m, row) in rows_before.chunks_exact_mut(n).enumerate() {
            row[l] = row_l[m];
        }
        for (m, row) in rows_after.chunks_exact_mut(n).enumerate() {
            row[l] = row_l[l + 1 + m];
        }
    }

    pub fn validate(&self, tol: f64) -> Diagnostics {
        let n = self.n;
        let mut d = Diagnostics::default();
        if !self.tracks_genealogy() {
            return d;
        }
        for k in 0..n {
            for l in 0..n {
                if self.mrca(k, l) != self.mrca(l, k) && k < l {
                    d.symmetry.push((k, l));
                }
                if self.mrca(k, l) > self.t + tol {
                    d.future_mrca.push((k, l));
                }
            }
        }
        d.ultrametric = ultrametric_violations(n, |i, j| self.dist(i, j), tol);
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UltrametricViolation {
    pub k: usize,
    pub l: usize,
    pub m: usize,
    /// Amount by which `r(k,l)` exceeds `max(r(k,m), r(m,l))`.
    pub excess: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub symmetry: Vec<(usize, usize)>,
    pub ultrametric: Vec<UltrametricViolation>,
    pub future_mrca: Vec<(usize, usize)>,
}

impl Diagnostics {
    pub fn is_empty(&self) -> bool {
        self.symmetry.is_empty() && self.ultrametric.is_empty() && self.future_mrca.is_empty()
    }

    pub fn worst_ultrametric(&self) -> Option<UltrametricViolation> {
        self.ultrametric.iter().copied().max_by(|a, b| a.excess.total_cmp(&b.excess))
    }
}

fn triple_excess(r: &impl Fn(usize, usize) -> f64, i: usize, j: usize, k: usize) -> UltrametricViolation {
    // The largest side of a triangle must not exceed the middle one.
    let cands = [
        (i, k, j, r(i, k) - r(i, j).max(r(j, k))),
        (i, j, k, r(i, j) - r(i, k).max(r(k, j))),
        (j, k, i, r(j, k) - r(j, i).max(r(i, k))),
    ];
    let (k, l, m, excess) = cands.into_iter().max_by(|a, b| a.3.total_cmp(&b.3)).unwrap();
    UltrametricViolation { k, l, m, excess }
}

/// One entry (the worst side) per violating unordered triple.
pub fn ultrametric_violations(n: usize, r: impl Fn(usize, usize) -> f64, tol: f64) -> Vec<UltrametricViolation> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let v = triple_excess(&r, i, j, k);
                if v.excess > tol {
                    out.push(v);
                }
            }
        }
    }
    out
}

fn first_ultrametric_violation(n: usize, r: impl Fn(usize, usize) -> f64, tol: f64) -> Option<UltrametricViolation> {
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let v = triple_excess(&r, i, j, k);
                if v.excess > tol {
                    return Some(UltrametricViolation { k: i, l: j, m: k, excess: v.excess });
                }
            }
        }
    }
    None
}

/// CSV state files: a distance matrix with header `n=<N>` and a one-column type file.
pub mod io {
    use super::*;
    use std::fmt::Write as _;

    pub fn write_matrix(state: &PopulationState) -> String {
        let n = state.n();
        let mut s = format!("n={n}\n");
        for k in 0..n {
            let row: Vec<String> = (0..n).map(|l| format!("{}", state.dist(k, l))).collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }

    pub fn write_types(state: &PopulationState) -> String {
        let mut s = String::from("type\n");
        for &u in &state.types {
            let _ = writeln!(s, "{u}");
        }
        s
    }

    pub fn read_matrix(text: &str) -> Result<Vec<Vec<f64>>> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty matrix file".into()))?;
        let n: usize = header
            .trim()
            .strip_prefix("n=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Parse(format!("expected header `n=<N>`, got `{header}`")))?;
        let mut m = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            let row = line
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", i + 2))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != n {
                return Err(Error::Parse(format!("line {}: expected {n} columns, got {}", i + 2, row.len())));
            }
            m.push(row);
        }
        if m.len() != n {
            return Err(Error::Parse(format!("expected {n} rows, got {}", m.len())));
        }
        Ok(m)
    }

    pub fn read_types(text: &str) -> Result<Vec<TypeId>> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty()).peekable();
        if lines.peek().is_some_and(|l| l.parse::<usize>().is_err()) {
            lines.next();
        }
        lines
            .enumerate()
            .map(|(i, l)| l.parse().map_err(|e| Error::Parse(format!("type line {}: {e}", i + 1))))
            .collect()
    }

    /// Diagnostics for a matrix file without requiring it to be valid.
    pub fn check_matrix(m: &[Vec<f64>], tol: f64) -> Diagnostics {
        let n = m.len();
        let mut d = Diagnostics::default();
        for k in 0..n {
            for l in k + 1..n {
                if (m[k][l] - m[l][k]).abs() > tol {
                    d.symmetry.push((k, l));
                }
            }
        }
        d.ultrametric = ultrametric_violations(n, |i, j| m[i][j], tol);
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    fn star(n: usize) -> PopulationState {
        make_initial(&InitialKind::Star, n, 2, &TypeInit::All(0), &mut from_seed(0)).unwrap()
    }

    #[test]
    fn star_and_comb() {
        let s = star(3);
        for k in 0..3 {
            for l in 0..3 {
                assert_eq!(s.dist(k, l), 0.0);
            }
        }
        let c = make_initial(&InitialKind::Comb(4.0), 3, 2, &TypeInit::All(0), &mut from_seed(0)).unwrap();
        assert_eq!(c.dist(0, 1), 4.0);
        assert_eq!(c.dist(2, 2), 0.0);
        assert!(c.validate(1e-9).is_empty());
    }

    #[test]
    fn given_non_ultrametric_names_triple() {
        let r = vec![vec![0.0, 2.0, 4.0], vec![2.0, 0.0, 3.0], vec![4.0, 3.0, 0.0]];
        let err = PopulationState::from_distances(&r, vec![0; 3]).unwrap_err();
        match err {
            Error::NotUltrametric { k, l, m, excess } => {
                assert_eq!((k, l, m), (0, 1, 2));
                assert_eq!(excess, 1.0);
            }
            e => panic!("unexpected {e}"),
        }
        let d = io::check_matrix(&r, 1e-9);
        assert_eq!(d.ultrametric.len(), 1);
        let v = d.ultrametric[0];
        assert_eq!(v.excess, 1.0);
        assert_eq!((v.k, v.l), (0, 2));
    }

    #[test]
    fn asymmetric_matrix_reported() {
        let r = vec![vec![0.0, 2.0, 4.0], vec![2.5, 0.0, 4.0], vec![4.0, 4.0, 0.0]];
        let d = io::check_matrix(&r, 1e-9);
        assert_eq!(d.symmetry, vec![(0, 1)]);
        assert!(matches!(PopulationState::from_distances(&r, vec![0; 3]), Err(Error::NotSymmetric { k: 0, l: 1 })));
    }

    #[test]
    fn growth_without_events() {
        let mut s = star(4);
        s.advance_to(5.0);
        assert_eq!(s.pair_distance(0, 1).unwrap(), 10.0);
        assert_eq!(s.pair_distance(2, 2).unwrap(), 0.0);
        assert!(s.pair_distance(0, 4).is_err());
    }

    #[test]
    fn replacement_row_copy() {
        let mut s = star(3);
        s.advance_to(1.0);
        s.apply_replacement(0, 1).unwrap();
        assert_eq!(s.dist(0, 1), 0.0);
        assert_eq!(s.dist(0, 2), 2.0);
        assert_eq!(s.dist(1, 2), 2.0);
        let snapshot = s.clone();
        s.apply_replacement(0, 1).unwrap();
        assert_eq!(s, snapshot);
        s.advance_to(1.75);
        assert_eq!(s.dist(0, 1), 1.5);
        assert!(matches!(s.apply_replacement(2, 2), Err(Error::SelfReplacement(2))));
    }

    #[test]
    fn two_type_kernel() {
        let m = MutationKernel::two_type(1.0, 3.0).unwrap();
        assert_eq!(m.rate, 2.0);
        // fit -> unfit at rate theta_fit / 2
        assert!((m.rate * m.beta(0, 1) - 0.5).abs() < 1e-15);
        assert!((m.rate * m.beta(1, 0) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_kernel_always_fit() {
        let m = MutationKernel::new(1.0, 1.0, vec![1.0, 0.0], identity(2)).unwrap();
        let mut rng = from_seed(3);
        assert!((0..100).all(|i| m.sample(i % 2, &mut rng) == 0));
    }

    #[test]
    fn kernel_validation() {
        assert!(MutationKernel::new(1.0, 0.5, vec![0.5, 0.6], identity(2)).is_err());
        assert!(MutationKernel::new(-1.0, 0.5, vec![0.5, 0.5], identity(2)).is_err());
        assert!(MutationKernel::new(1.0, 1.5, vec![0.5, 0.5], identity(2)).is_err());
    }

    #[test]
    fn fitness_validation() {
        assert!(FitnessSpec::Haploid { chi: vec![1.0, 1.2] }.validate(2).is_err());
        assert!(FitnessSpec::Diploid { chi: vec![vec![1.0, 0.2], vec![0.3, 1.0]] }.validate(2).is_err());
        let kin = FitnessSpec::DistanceDependent {
            base: vec![vec![1.0; 2]; 2],
            profile: DecayProfile::Step { breaks: vec![1.0], values: vec![0.5, 0.8] },
            kin: true,
        };
        assert!(kin.validate(2).is_err());
        let step = DecayProfile::Step { breaks: vec![1.0, 2.0], values: vec![1.0, 0.5, 0.1] };
        assert_eq!(step.eval(0.5), 1.0);
        assert_eq!(step.eval(1.0), 0.5);
        assert_eq!(step.eval(7.0), 0.1);
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::neutral(1, 1.0).is_err());
        assert!(ModelParams::neutral(2, -1.0).is_err());
        assert!(ModelParams::neutral(2, 0.0).is_ok());
    }

    #[test]
    fn csv_round_trip() {
        let r = vec![vec![0.0, 2.0, 4.0], vec![2.0, 0.0, 4.0], vec![4.0, 4.0, 0.0]];
        let s = PopulationState::from_distances(&r, vec![0, 1, 1]).unwrap();
        let m = io::read_matrix(&io::write_matrix(&s)).unwrap();
        assert_eq!(m, r);
        assert_eq!(io::read_types(&io::write_types(&s)).unwrap(), vec![0, 1, 1]);
        assert!(io::read_matrix("n=2\n0,1\n").is_err());
    }
}

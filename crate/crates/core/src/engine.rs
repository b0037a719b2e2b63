//! Event-driven simulation of the Moran dynamics.
//!
//! Resampling and mutation share one Poisson clock driven by the base random
//! stream; selection proposals run on a second clock with its own stream.
//! Runs with different selection strengths but the same seed therefore see
//! identical resampling and mutation arrows.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{FitnessSpec, ModelParams, PopulationState, TypeId};
use crate::rng::{self, exp_time, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cause {
    Resampling,
    Selection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    /// `victim` is replaced by an offspring of `parent`. For diploid and
    /// distance-dependent selection `partner` is the individual whose type
    /// entered the acceptance probability.
    Replacement {
        parent: usize,
        victim: usize,
        cause: Cause,
        partner: Option<usize>,
    },
    Mutation {
        individual: usize,
        new_type: TypeId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTable {
    pub resampling: f64,
    pub mutation: f64,
    pub selection_proposal: f64,
}

impl RateTable {
    pub fn total(&self) -> f64 {
        self.resampling + self.mutation + self.selection_proposal
    }
}

pub fn total_rates(state: &PopulationState, params: &ModelParams) -> RateTable {
    let n = state.n() as f64;
    let resampling = params.gamma * n * (n - 1.0) / 2.0;
    let mutation = params.mutation.rate * n;
    let selection_proposal = match params.fitness {
        _ if params.alpha == 0.0 => 0.0,
        FitnessSpec::Neutral => 0.0,
        FitnessSpec::Haploid { .. } => params.alpha * (n - 1.0),
        FitnessSpec::Diploid { .. } | FitnessSpec::DistanceDependent { .. } => {
            params.alpha * n * (n - 1.0) * (n - 2.0) / (n * n)
        }
    };
    RateTable { resampling, mutation, selection_proposal }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Proposal {
    Resampling {
        parent: usize,
        victim: usize,
    },
    Mutation {
        individual: usize,
    },
    /// Selection proposal before thinning; `partner` is set for triple events.
    Selection {
        parent: usize,
        victim: usize,
        partner: Option<usize>,
    },
}

fn distinct_pair<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (usize, usize) {
    let k = rng.random_range(0..n);
    let mut l = rng.random_range(0..n - 1);
    if l >= k {
        l += 1;
    }
    (k, l)
}

fn distinct_triple<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (usize, usize, usize) {
    let (k, l) = distinct_pair(n, rng);
    let (lo, hi) = if k < l { (k, l) } else { (l, k) };
    let mut m = rng.random_range(0..n - 2);
    if m >= lo {
        m += 1;
    }
    if m >= hi {
        m += 1;
    }
    (k, l, m)
}

fn selection_proposal<R: Rng + ?Sized>(n: usize, fitness: &FitnessSpec, rng: &mut R) -> Proposal {
    if fitness.arity() == 3 {
        let (k, l, m) = distinct_triple(n, rng);
        Proposal::Selection { parent: k, victim: l, partner: Some(m) }
    } else {
        let (k, l) = distinct_pair(n, rng);
        Proposal::Selection { parent: k, victim: l, partner: None }
    }
}

/// Competing-exponentials draw of the next proposal from a single stream.
/// Returns `None` when every rate is zero.
pub fn draw_event<R: Rng + ?Sized>(
    state: &PopulationState,
    params: &ModelParams,
    rng: &mut R,
) -> Option<(f64, Proposal)> {
    let rates = total_rates(state, params);
    let total = rates.total();
    if total <= 0.0 {
        return None;
    }
    let dt = exp_time(rng, total);
    let x = rng.random::<f64>() * total;
    let n = state.n();
    let p = if x < rates.resampling {
        let (k, l) = distinct_pair(n, rng);
        Proposal::Resampling { parent: k, victim: l }
    } else if x < rates.resampling + rates.mutation || rates.selection_proposal == 0.0 {
        Proposal::Mutation { individual: rng.random_range(0..n) }
    } else {
        selection_proposal(n, &params.fitness, rng)
    };
    Some((dt, p))
}

/// Acceptance probability of a selection proposal in the current state.
pub fn acceptance(state: &PopulationState, fitness: &FitnessSpec, parent: usize, partner: Option<usize>) -> f64 {
    let u = state.types[parent];
    match (fitness, partner) {
        (FitnessSpec::Haploid { chi }, _) => chi[u],
        (FitnessSpec::Diploid { chi }, Some(m)) => chi[u][state.types[m]],
        (FitnessSpec::DistanceDependent { .. }, Some(m)) => fitness.pair(u, state.types[m], state.dist(parent, m)),
        _ => 1.0,
    }
}

/// Applies a proposal at the current state time. Returns the accepted event, if any.
/// Mutation consumes two uniforms and selection one, regardless of the outcome.
pub fn apply_proposal<R: Rng + ?Sized>(
    state: &mut PopulationState,
    proposal: Proposal,
    params: &ModelParams,
    rng: &mut R,
) -> Option<Event> {
    let time = state.t;
    match proposal {
        Proposal::Resampling { parent, victim } => {
            state.replace_unchecked(parent, victim);
            Some(Event {
                time,
                kind: EventKind::Replacement { parent, victim, cause: Cause::Resampling, partner: None },
            })
        }
        Proposal::Mutation { individual } => {
            let v = apply_mutation(state, individual, params, rng);
            Some(Event { time, kind: EventKind::Mutation { individual, new_type: v } })
        }
        Proposal::Selection { parent, victim, partner } => {
            let p = acceptance(state, &params.fitness, parent, partner);
            let x: f64 = rng.random();
            if x < p {
                state.replace_unchecked(parent, victim);
                Some(Event { time, kind: EventKind::Replacement { parent, victim, cause: Cause::Selection, partner } })
            } else {
                None
            }
        }
    }
}

pub fn apply_replacement(state: &mut PopulationState, parent: usize, victim: usize) -> Result<()> {
    state.apply_replacement(parent, victim)
}

/// Redraws the type of `k` from the mutation kernel; distances are untouched.
pub fn apply_mutation<R: Rng + ?Sized>(
    state: &mut PopulationState,
    k: usize,
    params: &ModelParams,
    rng: &mut R,
) -> TypeId {
    let v = params.mutation.sample(state.types[k], rng);
    state.types[k] = v;
    v
}

pub trait Observer {
    fn on_event(&mut self, event: &Event, state: &PopulationState);
}

impl<F: FnMut(&Event, &PopulationState)> Observer for F {
    fn on_event(&mut self, event: &Event, state: &PopulationState) {
        self(event, state)
    }
}

/// Simulation driver holding the two random streams and the pending clock times.
#[derive(Debug, Clone)]
pub struct Engine {
    params: ModelParams,
    base: SimRng,
    selection: SimRng,
    next_base: f64,
    next_selection: f64,
}

impl Engine {
    pub fn new(params: ModelParams, seed: u64) -> Self {
        Self {
            params,
            base: rng::stream(seed, 0),
            selection: rng::stream(seed, 1),
            next_base: f64::NAN,
            next_selection: f64::NAN,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    fn arm(&mut self, state: &PopulationState) {
        let r = total_rates(state, &self.params);
        if self.next_base.is_nan() {
            self.next_base = state.t + exp_time(&mut self.base, r.resampling + r.mutation);
        }
        if self.next_selection.is_nan() {
            self.next_selection = state.t + exp_time(&mut self.selection, r.selection_proposal);
        }
    }

    /// Advances `state` to exactly `t_end`, streaming accepted events to `observer`.
    pub fn run_until<O: Observer + ?Sized>(&mut self, state: &mut PopulationState, t_end: f64, observer: &mut O) {
        assert!(t_end >= state.t, "run_until: t_end {t_end} before current time {}", state.t);
        assert_eq!(state.n(), self.params.n, "state size does not match parameters");
        self.arm(state);
        let rates = total_rates(state, &self.params);
        let base_rate = rates.resampling + rates.mutation;
        let res_share = if base_rate > 0.0 { rates.resampling / base_rate } else { 0.0 };
        let n = state.n();
        loop {
            let base_first = self.next_base <= self.next_selection;
            let t_next = if base_first { self.next_base } else { self.next_selection };
            if t_next > t_end {
                break;
            }
            state.advance_to(t_next);
            let event = if base_first {
                let x: f64 = self.base.random();
                let p = if x < res_share {
                    let (k, l) = distinct_pair(n, &mut self.base);
                    Proposal::Resampling { parent: k, victim: l }
                } else {
                    Proposal::Mutation { individual: self.base.random_range(0..n) }
                };
                let ev = apply_proposal(state, p, &self.params, &mut self.base);
                self.next_base = t_next + exp_time(&mut self.base, base_rate);
                ev
            } else {
                let p = selection_proposal(n, &self.params.fitness, &mut self.selection);
                let ev = apply_proposal(state, p, &self.params, &mut self.selection);
                self.next_selection = t_next + exp_time(&mut self.selection, rates.selection_proposal);
                ev
            };
            if let Some(ev) = event {
                observer.on_event(&ev, state);
            }
        }
        state.advance_to(t_end);
    }

    pub fn run(&mut self, state: &mut PopulationState, t_end: f64) {
        self.run_until(state, t_end, &mut |_: &Event, _: &PopulationState| {});
    }
}

/// Convenience: fresh engine seeded from `seed`, advanced to `t_end`.
pub fn run_until<O: Observer + ?Sized>(
    state: &mut PopulationState,
    t_end: f64,
    params: &ModelParams,
    seed: u64,
    observer: &mut O,
) {
    Engine::new(params.clone(), seed).run_until(state, t_end, observer)
}

/// Time-ordered record of accepted events.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub n: usize,
    pub t0: f64,
    pub t_end: f64,
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn new(n: usize, t0: f64) -> Self {
        Self { n, t0, t_end: t0, events: Vec::new() }
    }

    /// Marks the log as covering up to `t`.
    pub fn close(&mut self, t: f64) {
        self.t_end = self.t_end.max(t);
    }

    /// Applies every event to `initial` and advances to the log end.
    pub fn replay(&self, initial: &PopulationState) -> Result<PopulationState> {
        if initial.n() != self.n {
            return Err(Error::Dimension { needed: self.n, got: initial.n() });
        }
        let mut s = initial.clone();
        for ev in &self.events {
            s.advance_to(ev.time);
            match ev.kind {
                EventKind::Replacement { parent, victim, .. } => s.apply_replacement(parent, victim)?,
                EventKind::Mutation { individual, new_type } => s.types[individual] = new_type,
            }
        }
        s.advance_to(self.t_end);
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# moran-eventlog n={} t0={} t_end={}\n", self.n, self.t0, self.t_end);
        for ev in &self.events {
            let _ = match ev.kind {
                EventKind::Replacement { parent, victim, cause: Cause::Resampling, .. } => {
                    writeln!(s, "{} res {parent} {victim}", ev.time)
                }
                EventKind::Replacement { parent, victim, cause: Cause::Selection, partner } => match partner {
                    Some(m) => writeln!(s, "{} sel {parent} {victim} {m}", ev.time),
                    None => writeln!(s, "{} sel {parent} {victim}", ev.time),
                },
                EventKind::Mutation { individual, new_type } => writeln!(s, "{} mut {individual} {new_type}", ev.time),
            };
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty event log".into()))?;
        let rest =
            header.strip_prefix("# moran-eventlog ").ok_or_else(|| Error::Parse("missing event log header".into()))?;
        let mut n = None;
        let mut t0 = None;
        let mut t_end = None;
        for field in rest.split_whitespace() {
            let (key, value) =
                field.split_once('=').ok_or_else(|| Error::Parse(format!("bad header field `{field}`")))?;
            let bad = |e: &dyn std::fmt::Display| Error::Parse(format!("header `{key}`: {e}"));
            match key {
                "n" => n = Some(value.parse::<usize>().map_err(|e| bad(&e))?),
                "t0" => t0 = Some(value.parse::<f64>().map_err(|e| bad(&e))?),
                "t_end" => t_end = Some(value.parse::<f64>().map_err(|e| bad(&e))?),
                _ => return Err(Error::Parse(format!("unknown header field `{key}`"))),
            }
        }
        let n = n.ok_or_else(|| Error::Parse("header lacks n".into()))?;
        let t0 = t0.ok_or_else(|| Error::Parse("header lacks t0".into()))?;
        let mut log = EventLog::new(n, t0);
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |m: &str| Error::Parse(format!("event line {}: {m}", i + 2));
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |j: usize| -> Result<usize> {
                f.get(j).ok_or_else(|| err("missing field"))?.parse().map_err(|_| err("bad index"))
            };
            let time: f64 = f.first().ok_or_else(|| err("empty"))?.parse().map_err(|_| err("bad time"))?;
            let kind = match f.get(1).copied() {
                Some("res") => {
                    EventKind::Replacement { parent: num(2)?, victim: num(3)?, cause: Cause::Resampling, partner: None }
                }
                Some("sel") => EventKind::Replacement {
                    parent: num(2)?,
                    victim: num(3)?,
                    cause: Cause::Selection,
                    partner: if f.len() > 4 { Some(num(4)?) } else { None },
                },
                Some("mut") => EventKind::Mutation { individual: num(2)?, new_type: num(3)? },
                _ => return Err(err("unknown event kind")),
            };
            if let Some(prev) = log.events.last() {
                if time <= prev.time {
                    return Err(err("event times must increase"));
                }
            }
            log.events.push(Event { time, kind });
        }
        log.t_end = t_end.unwrap_or_else(|| log.events.last().map_or(t0, |e| e.time));
        Ok(log)
    }
}

impl Observer for EventLog {
    fn on_event(&mut self, event: &Event, _state: &PopulationState) {
        self.events.push(*event);
        self.t_end = event.time;
    }
}

/// Runs from `state` to `t_end` and returns the log of accepted events.
pub fn run_logged(engine: &mut Engine, state: &mut PopulationState, t_end: f64) -> EventLog {
    let mut log = EventLog::new(state.n(), state.t);
    engine.run_until(state, t_end, &mut log);
    log.close(t_end);
    log
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_initial, InitialKind, MutationKernel, TypeInit};
    use crate::rng::from_seed;

    fn star(n: usize, types: TypeInit) -> PopulationState {
        make_initial(&InitialKind::Star, n, 2, &types, &mut from_seed(0)).unwrap()
    }

    #[test]
    fn rate_table() {
        let p = ModelParams::neutral(2, 1.0).unwrap();
        let r = total_rates(&star(2, TypeInit::All(0)), &p);
        assert_eq!(r.resampling, 1.0);
        assert_eq!(r.selection_proposal, 0.0);
        let p =
            ModelParams::new(5, 1.0, MutationKernel::two_type(2.0, 2.0).unwrap(), 0.0, FitnessSpec::Neutral).unwrap();
        assert_eq!(total_rates(&star(5, TypeInit::All(0)), &p).mutation, 10.0);
        let p = ModelParams::two_type(5, 1.0, 1.0, 1.0, 2.0).unwrap();
        assert_eq!(total_rates(&star(5, TypeInit::All(0)), &p).selection_proposal, 8.0);
        let dip =
            ModelParams::new(5, 1.0, MutationKernel::none(2), 2.0, FitnessSpec::Diploid { chi: vec![vec![1.0; 2]; 2] })
                .unwrap();
        assert!((total_rates(&star(5, TypeInit::All(0)), &dip).selection_proposal - 2.0 * 60.0 / 25.0).abs() < 1e-12);
    }

    #[test]
    fn draw_event_deterministic_and_frozen() {
        let p = ModelParams::neutral(4, 1.0).unwrap();
        let s = star(4, TypeInit::All(0));
        let a = draw_event(&s, &p, &mut from_seed(9));
        let b = draw_event(&s, &p, &mut from_seed(9));
        assert_eq!(a, b);
        let frozen = ModelParams::neutral(4, 0.0).unwrap();
        assert!(draw_event(&s, &frozen, &mut from_seed(9)).is_none());
    }

    #[test]
    fn exponential_clock_mean() {
        let p = ModelParams::neutral(5, 1.0).unwrap();
        let s = star(5, TypeInit::All(0));
        let mut rng = from_seed(11);
        let draws: Vec<f64> = (0..100_000).map(|_| draw_event(&s, &p, &mut rng).unwrap().0).collect();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let sd = (draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64).sqrt();
        let se = sd / (draws.len() as f64).sqrt();
        assert!((m - 0.1).abs() < 3.0 * se, "mean {m} se {se}");
    }

    #[test]
    fn zero_fitness_proposal_rejected() {
        let p = ModelParams::two_type(4, 1.0, 0.0, 0.0, 1.0).unwrap();
        let mut s = star(4, TypeInit::All(1));
        s.advance_to(1.0);
        let before = s.clone();
        let ev =
            apply_proposal(&mut s, Proposal::Selection { parent: 0, victim: 1, partner: None }, &p, &mut from_seed(1));
        assert!(ev.is_none());
        assert_eq!(s, before);
    }

    #[test]
    fn no_rates_pure_growth() {
        let p = ModelParams::neutral(3, 0.0).unwrap();
        let mut s = star(3, TypeInit::All(0));
        let mut e = Engine::new(p, 1);
        let log = run_logged(&mut e, &mut s, 2.5);
        assert!(log.events.is_empty());
        assert_eq!(s.dist(0, 2), 5.0);
    }

    #[test]
    fn replay_and_text_round_trip() {
        let p = ModelParams::new(
            8,
            1.3,
            MutationKernel::two_type(0.7, 1.1).unwrap(),
            0.9,
            FitnessSpec::Diploid { chi: vec![vec![1.0, 0.4], vec![0.4, 0.1]] },
        )
        .unwrap();
        let init = star(8, TypeInit::Cyclic);
        let mut s = init.clone();
        let mut e = Engine::new(p, 77);
        let log = run_logged(&mut e, &mut s, 7.0);
        assert!(log.events.len() > 50);
        assert_eq!(log.replay(&init).unwrap(), s);
        let parsed = EventLog::from_text(&log.to_text()).unwrap();
        assert_eq!(parsed, log);
        assert_eq!(parsed.replay(&init).unwrap(), s);
    }

    #[test]
    fn observation_grid_does_not_change_path() {
        let p = ModelParams::two_type(10, 1.0, 1.0, 1.0, 0.5).unwrap();
        let init = star(10, TypeInit::Cyclic);
        let mut a = init.clone();
        Engine::new(p.clone(), 5).run(&mut a, 10.0);
        let mut b = init.clone();
        let mut e = Engine::new(p, 5);
        for i in 1..=100 {
            e.run(&mut b, i as f64 * 0.1);
        }
        assert_eq!(a.types, b.types);
        for k in 0..10 {
            for l in 0..10 {
                assert_eq!(a.dist(k, l), b.dist(k, l));
            }
        }
    }

    #[test]
    fn triple_is_distinct() {
        let mut rng = from_seed(4);
        for _ in 0..10_000 {
            let (k, l, m) = distinct_triple(3, &mut rng);
            assert!(k != l && l != m && k != m);
        }
    }
}

//! Ancestral lines read back from an event log, the dominating birth-death
//! process for ancestor counts, and the analytic ancestor bounds.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::engine::{EventKind, EventLog};
use crate::error::{Error, Result};
use crate::model::PopulationState;
use crate::rng::exp_time;

fn check_window(log: &EventLog, s: f64, t: f64) -> Result<()> {
    for time in [s, t] {
        if !(time >= log.t0 && time <= log.t_end) {
            return Err(Error::OutsideHorizon { time, start: log.t0, end: log.t_end });
        }
    }
    if s > t {
        return Err(Error::InvalidParam(format!("lookback time {s} after observation time {t}")));
    }
    Ok(())
}

fn check_index(log: &EventLog, l: usize) -> Result<()> {
    if l >= log.n {
        Err(Error::IndexOutOfRange { index: l, n: log.n })
    } else {
        Ok(())
    }
}

/// Replacement events with time in `(s, t]`, latest first.
fn replacements_backward(log: &EventLog, s: f64, t: f64) -> impl Iterator<Item = (f64, usize, usize)> + '_ {
    let hi = log.events.partition_point(|e| e.time <= t);
    log.events[..hi].iter().rev().take_while(move |e| e.time > s).filter_map(|e| match e.kind {
        EventKind::Replacement { parent, victim, .. } => Some((e.time, parent, victim)),
        EventKind::Mutation { .. } => None,
    })
}

/// The ancestor at time `s` of individual `l` at time `t` (ancestry taken just after `s`).
pub fn trace_ancestor(log: &EventLog, l: usize, t: f64, s: f64) -> Result<usize> {
    check_window(log, s, t)?;
    check_index(log, l)?;
    let mut line = l;
    for (_, parent, victim) in replacements_backward(log, s, t) {
        if victim == line {
            line = parent;
        }
    }
    Ok(line)
}

/// Number of distinct ancestors at time `s` of `subset` sampled at time `t`.
pub fn ancestor_count(log: &EventLog, s: f64, t: f64, subset: &[usize]) -> Result<usize> {
    Ok(ancestor_curve(log, t, subset, &[s])?[0])
}

/// Ancestor counts for several lookback times in one backward pass.
pub fn ancestor_curve(log: &EventLog, t: f64, subset: &[usize], lookbacks: &[f64]) -> Result<Vec<usize>> {
    for &l in subset {
        check_index(log, l)?;
    }
    for &s in lookbacks {
        check_window(log, s, t)?;
    }
    let mut order: Vec<usize> = (0..lookbacks.len()).collect();
    order.sort_by(|&a, &b| lookbacks[b].total_cmp(&lookbacks[a]));
    let mut occupied = vec![false; log.n];
    let mut count = 0;
    for &l in subset {
        if !occupied[l] {
            occupied[l] = true;
            count += 1;
        }
    }
    let mut out = vec![0; lookbacks.len()];
    let s_min = lookbacks.iter().copied().fold(t, f64::min);
    let mut next = 0;
    for (time, parent, victim) in replacements_backward(log, s_min, t) {
        while next < order.len() && lookbacks[order[next]] >= time {
            out[order[next]] = count;
            next += 1;
        }
        if occupied[victim] {
            occupied[victim] = false;
            if occupied[parent] {
                count -= 1;
            } else {
                occupied[parent] = true;
            }
        }
    }
    for &i in &order[next..] {
        out[i] = count;
    }
    Ok(out)
}

/// Fraction of the population at time `t` descending from `v` at time `s`.
pub fn descendant_frequency(log: &EventLog, v: &[usize], s: f64, t: f64) -> Result<f64> {
    Ok(descendant_path(log, v, s, &[t])?[0].1)
}

/// Descendant frequencies of `v` (fixed at time `s`) at increasing `times`.
pub fn descendant_path(log: &EventLog, v: &[usize], s: f64, times: &[f64]) -> Result<Vec<(f64, f64)>> {
    for &l in v {
        check_index(log, l)?;
    }
    let mut marked = vec![false; log.n];
    for &l in v {
        marked[l] = true;
    }
    let mut count = marked.iter().filter(|&&b| b).count();
    let n = log.n as f64;
    let mut out = Vec::with_capacity(times.len());
    let start = log.events.partition_point(|e| e.time <= s);
    let mut i = start;
    for &t in times {
        check_window(log, s, t)?;
        while i < log.events.len() && log.events[i].time <= t {
            if let EventKind::Replacement { parent, victim, .. } = log.events[i].kind {
                if marked[parent] != marked[victim] {
                    if marked[parent] {
                        count += 1;
                    } else {
                        count -= 1;
                    }
                    marked[victim] = marked[parent];
                }
            }
            i += 1;
        }
        out.push((t, count as f64 / n));
    }
    Ok(out)
}

/// MRCA time of `k` and `l` at time `t` reconstructed from ancestral lines,
/// falling back to the initial state's MRCA matrix when the lines do not
/// meet inside the log.
pub fn mrca_from_lines(log: &EventLog, initial: &PopulationState, k: usize, l: usize, t: f64) -> Result<f64> {
    check_window(log, log.t0, t)?;
    check_index(log, k)?;
    check_index(log, l)?;
    if k == l {
        return Ok(t);
    }
    let (mut a, mut b) = (k, l);
    for (time, parent, victim) in replacements_backward(log, log.t0, t) {
        if victim == a {
            a = parent;
        }
        if victim == b {
            b = parent;
        }
        if a == b {
            return Ok(time);
        }
    }
    Ok(initial.mrca(a, b))
}

/// Path of the birth-death process J (up at rate jα, down at rate γ·C(j,2))
/// together with its running minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct JPath {
    pub times: Vec<f64>,
    pub values: Vec<u64>,
    pub horizon: f64,
}

impl JPath {
    pub fn value_at(&self, s: f64) -> u64 {
        let i = self.times.partition_point(|&x| x <= s);
        self.values[i.saturating_sub(1)]
    }

    /// Running minimum of J over `[0, s]`.
    pub fn min_at(&self, s: f64) -> u64 {
        let i = self.times.partition_point(|&x| x <= s).max(1);
        *self.values[..i].iter().min().unwrap()
    }
}

pub fn simulate_j<R: Rng + ?Sized>(j0: u64, horizon: f64, gamma: f64, alpha: f64, rng: &mut R) -> Result<JPath> {
    if j0 < 1 {
        return Err(Error::InvalidParam("J must start at 1 or above".into()));
    }
    let mut times = vec![0.0];
    let mut values = vec![j0];
    let mut t = 0.0;
    let mut j = j0;
    loop {
        let jf = j as f64;
        let up = jf * alpha;
        let down = gamma * jf * (jf - 1.0) / 2.0;
        t += exp_time(rng, up + down);
        if t > horizon {
            break;
        }
        let x: f64 = rng.random::<f64>() * (up + down);
        j = if x < up { j + 1 } else { j - 1 };
        times.push(t);
        values.push(j);
    }
    Ok(JPath { times, values, horizon })
}

/// Upper bound on the mean number of ancestors, time `delta` back, of a
/// population of `n` individuals.
pub fn ancestor_mean_bound(n: f64, delta: f64, gamma: f64, alpha: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParam(format!("time lag must be positive, got {delta}")));
    }
    if !(n >= 1.0) {
        return Err(Error::InvalidParam(format!("population size must be at least 1, got {n}")));
    }
    let c = gamma + 2.0 * alpha;
    if c == 0.0 {
        return Ok(n);
    }
    let e = ((gamma / 2.0 + alpha) * delta).exp();
    Ok(c * e * n / (c + gamma * (e - 1.0) * n))
}

/// The `n → ∞` limit of [`ancestor_mean_bound`]; infinite when γ = 0.
pub fn ancestor_mean_bound_limit(delta: f64, gamma: f64, alpha: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParam(format!("time lag must be positive, got {delta}")));
    }
    let e = ((gamma / 2.0 + alpha) * delta).exp();
    Ok((gamma + 2.0 * alpha) * e / (gamma * (e - 1.0)))
}

/// Euler-Maruyama solution of dX = αX(1−X)dt + √(γX(1−X))dW, clamped to [0,1].
pub fn wright_fisher_sde<R: Rng + ?Sized>(x0: f64, t: f64, alpha: f64, gamma: f64, dt: f64, rng: &mut R) -> f64 {
    let steps = (t / dt).round() as usize;
    let sq = dt.sqrt();
    let mut x = x0;
    for _ in 0..steps {
        if x <= 0.0 || x >= 1.0 {
            break;
        }
        let v = x * (1.0 - x);
        let w: f64 = rng.sample(StandardNormal);
        x = (x + alpha * v * dt + (gamma * v).sqrt() * sq * w).clamp(0.0, 1.0);
    }
    x
}

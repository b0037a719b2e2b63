//! Closed-form neutral equilibrium moments of the two-type model, the
//! equilibrium equations they satisfy, and the small-selection expansion of
//! the pair-distance Laplace transform.
//!
//! Parameters: resampling rate `gamma`, mutation rates `tb` (fit type turns
//! unfit at rate `tb/2`) and `tg` (unfit turns fit at rate `tg/2`), Laplace
//! parameter `lambda`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::PhiTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rates {
    pub gamma: f64,
    pub tb: f64,
    pub tg: f64,
    pub lambda: f64,
}

impl Rates {
    pub fn new(gamma: f64, tb: f64, tg: f64, lambda: f64) -> Result<Self> {
        if !(gamma > 0.0 && tb > 0.0 && tg > 0.0) {
            return Err(Error::InvalidParam(format!("rates must be positive (gamma={gamma}, tb={tb}, tg={tg})")));
        }
        if !(lambda >= 0.0) {
            return Err(Error::InvalidParam(format!("lambda must be nonnegative, got {lambda}")));
        }
        Ok(Self { gamma, tb, tg, lambda })
    }

    fn tbar(&self) -> f64 {
        self.tb + self.tg
    }
}

/// Which reading of the Φ²₀₂ display to use for one inner denominator:
/// `γ + ϑ• + ϑg` (consistent with the equilibrium equations) or the printed
/// `γ + ϑ• − ϑg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Phi02Variant {
    #[default]
    Corrected,
    Literal,
}

pub fn neutral_moments(r: Rates) -> PhiTable {
    neutral_moments_variant(r, Phi02Variant::Corrected)
}

pub fn neutral_moments_variant(r: Rates, variant: Phi02Variant) -> PhiTable {
    let Rates { gamma: g, tb, tg, lambda: l } = r;
    let tbar = r.tbar();
    let pi = tg / tbar;
    let lp = g / (g + 2.0 * l);
    let a = (g + 2.0 * l + tg) / (g + 2.0 * l + tbar);
    let one_two = (tg + g) / (tbar + g) * pi;
    let p2_11 = pi * g / (3.0 * g + 2.0 * l + tbar) * ((g + tg) / (g + 2.0 * l) + (g + tg) / (g + tbar) + lp * a);
    let inner_den = match variant {
        Phi02Variant::Corrected => g + tb + tg,
        Phi02Variant::Literal => g + tb - tg,
    };
    let inner = (g + tg) / (g + 2.0 * l) + (g + tg) / inner_den + lp * a;
    let p2_02 = pi * g / (6.0 * g + 2.0 * l + tbar)
        * ((g + tg) / (g + 2.0 * l) + (g + tg) / (g + tbar) + 4.0 * g / (3.0 * g + 2.0 * l + tbar) * inner);
    PhiTable {
        p1_10: pi,
        p1_01: pi,
        p1_11: one_two,
        p1_02: one_two,
        p2_00: lp,
        p2_10: lp * pi,
        p2_01: lp * pi,
        p2_20: pi * lp * a,
        p2_11,
        p2_02,
    }
}

/// Left-hand sides of the equilibrium equations (one per table entry, in
/// [`PhiTable::NAMES`] order), each of which vanishes at stationarity.
pub fn omega0_residuals(t: &PhiTable, r: Rates) -> [f64; 10] {
    let Rates { gamma: g, tg, lambda: l, .. } = r;
    let tbar = r.tbar();
    let PhiTable { p1_10, p1_01, p1_11, p1_02, p2_00, p2_10, p2_01, p2_20, p2_11, p2_02 } = *t;
    [
        0.5 * (tg - tbar * p1_10),
        0.5 * (tg - tbar * p1_01) + g * (p1_10 - p1_01),
        0.5 * (tg * p1_01 - tbar * p1_11 + tg * p1_10 - tbar * p1_11) + g * (p1_10 - p1_11),
        (tg * p1_01 - tbar * p1_02) + g * (p1_01 - p1_02),
        -2.0 * l * p2_00 + g * (1.0 - p2_00),
        -2.0 * l * p2_10 + 0.5 * (tg * p2_00 - tbar * p2_10) + g * (p1_10 - p2_10),
        -2.0 * l * p2_01 + 0.5 * (tg * p2_00 - tbar * p2_01) + g * (p1_01 - p2_01 + 2.0 * p2_10 - 2.0 * p2_01),
        -2.0 * l * p2_20 + (tg * p2_10 - tbar * p2_20) + g * (p1_10 - p2_20),
        -2.0 * l * p2_11
            + 0.5 * (tg * p2_01 - tbar * p2_11 + tg * p2_10 - tbar * p2_11)
            + g * (p1_11 - p2_11 + p2_10 - p2_11 + p2_20 - p2_11),
        -2.0 * l * p2_02
            + (tg * p2_01 - tbar * p2_02)
            + g * (p1_02 - p2_02 + p2_01 - p2_02 + 4.0 * p2_11 - 4.0 * p2_02),
    ]
}

const KEYS: [(usize, usize, usize); 10] =
    [(1, 1, 0), (1, 0, 1), (1, 1, 1), (1, 0, 2), (2, 0, 0), (2, 1, 0), (2, 0, 1), (2, 2, 0), (2, 1, 1), (2, 0, 2)];

fn choose2(x: usize) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Action of the neutral generator on Φⁿᵢⱼ as a linear combination of other
/// members of the family: `(coefficient, (n, i, j))` terms.
pub fn omega0_action(n: usize, i: usize, j: usize, r: Rates) -> Vec<(f64, (usize, usize, usize))> {
    let Rates { gamma: g, tg, lambda: l, .. } = r;
    let tbar = r.tbar();
    let mut out = Vec::new();
    let me = (n, i, j);
    if n >= 2 {
        out.push((-(n as f64) * l, me));
    }
    // Mutation on the i constrained tree leaves and the j extra points.
    if i > 0 {
        out.push((i as f64 * 0.5 * tg, (n, i - 1, j)));
        out.push((-(i as f64) * 0.5 * tbar, me));
    }
    if j > 0 {
        out.push((j as f64 * 0.5 * tg, (n, i, j - 1)));
        out.push((-(j as f64) * 0.5 * tbar, me));
    }
    // Resampling among tree leaves shrinks the tree; resampling onto extra points frees a constraint.
    let mut res = |c: f64, key: (usize, usize, usize)| {
        if c != 0.0 {
            out.push((g * c, key));
            out.push((-g * c, me));
        }
    };
    if n >= 2 {
        if i >= 1 {
            res(choose2(i), (n - 1, i - 1, j));
        }
        res((i * (n - i)) as f64, (n - 1, i, j));
        res(choose2(n - i), (n - 1, i, j));
    }
    if j >= 1 {
        res((i * j) as f64, (n, i, j - 1));
        res(((n - i) * j) as f64, (n, i + 1, j - 1));
        res(choose2(j), (n, i, j - 1));
    }
    out
}

/// Solution of the equilibrium linear system assembled from [`omega0_action`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Solved {
    pub table: PhiTable,
    pub condition: f64,
}

pub fn neutral_moments_by_solve(r: Rates) -> Result<Solved> {
    let m = KEYS.len();
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut b = DVector::<f64>::zeros(m);
    for (row, &(n, i, j)) in KEYS.iter().enumerate() {
        for (c, key) in omega0_action(n, i, j, r) {
            if key == (1, 0, 0) {
                // Φ¹₀₀ = 1.
                b[row] -= c;
            } else {
                let col = KEYS
                    .iter()
                    .position(|&k| k == key)
                    .ok_or_else(|| Error::Unsupported(format!("moment {key:?} outside the solved family")))?;
                a[(row, col)] += c;
            }
        }
    }
    let sv = a.clone().singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition < 1e14) {
        return Err(Error::Singular(condition));
    }
    let x = a.lu().solve(&b).ok_or(Error::Singular(condition))?;
    let mut arr = [0.0; 10];
    arr.copy_from_slice(x.as_slice());
    Ok(Solved { table: PhiTable::from_array(arr), condition })
}

/// Second-order coefficient `f` of the Laplace transform of the pair distance in the selection strength.
pub fn f_coefficient(r: Rates) -> f64 {
    let Rates { gamma: g, tb, tg, lambda: l } = r;
    let tbar = r.tbar();
    if l == 0.0 {
        return 0.0;
    }
    8.0 * g * tb * tg * (2.0 * g + 2.0 * l + tbar) * l
        / (tbar
            * (g + tbar)
            * (g + 2.0 * l + tbar)
            * (6.0 * g + 2.0 * l + tbar)
            * (g + 2.0 * l).powi(2)
            * (6.0 * g + 4.0 * l + tbar))
}

/// Equilibrium value of Φ²₂₀ − 4Φ²₁₁ + 3Φ²₀₂ computed from the moment table.
pub fn selection_combination(t: &PhiTable) -> f64 {
    t.p2_20 - 4.0 * t.p2_11 + 3.0 * t.p2_02
}

/// The intermediate expression printed for that combination; it equals
/// `(γ + 2λ)` times the true combination.
pub fn selection_combination_as_printed(r: Rates) -> f64 {
    let Rates { gamma: g, tb, tg, lambda: l } = r;
    let tbar = r.tbar();
    2.0 * g * tb * tg * (2.0 * g + 2.0 * l + tbar) * l
        / (tbar * (g + tbar) * (g + 2.0 * l + tbar) * (6.0 * g + 2.0 * l + tbar))
}

/// `f` re-assembled from the moment table and the prefactors of the expansion.
pub fn f_coefficient_from_table(r: Rates) -> f64 {
    let Rates { gamma: g, lambda: l, .. } = r;
    let t = neutral_moments(r);
    2.0 * selection_combination(&t) / ((g + 2.0 * l) * (3.0 * g + 2.0 * l + r.tbar() / 2.0))
}

/// `γ/(γ+2λ) + f α²`, the expansion truncated after the second order.
pub fn theorem5_laplace(r: Rates, alpha: f64) -> f64 {
    r.gamma / (r.gamma + 2.0 * r.lambda) + f_coefficient(r) * alpha * alpha
}

/// Coefficient `c` in `E[R₁₂] = (2 − c α²)/γ`.
pub fn mean_distance_coefficient(gamma: f64, tb: f64, tg: f64) -> f64 {
    let tbar = tb + tg;
    8.0 * tb * tg * (2.0 * gamma + tbar) / (tbar * (gamma + tbar).powi(2) * (6.0 * gamma + tbar).powi(2))
}

pub fn theorem5_mean_distance(gamma: f64, tb: f64, tg: f64, alpha: f64) -> f64 {
    (2.0 - mean_distance_coefficient(gamma, tb, tg) * alpha * alpha) / gamma
}

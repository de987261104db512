//! Large-domain limit energies of the WORS, BD and ESC configurations as
//! sums of straight transition layers weighted by the costs `c1..c4`.

use std::f64::consts::SQRT_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesics::TransitionCosts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Competitor {
    Wors,
    Bd,
    Esc,
}

impl fmt::Display for Competitor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Competitor::Wors => "WORS",
            Competitor::Bd => "BD",
            Competitor::Esc => "ESC",
        })
    }
}

/// `ρ = 1 − √2/2`, where the WORS and BD limits cross for any costs.
pub const RHO_CROSS: f64 = 1.0 - SQRT_2 / 2.0;

/// Limit energy of `config`. `eta` is the width of the escaped ring and is
/// only read for ESC.
pub fn j_inf(config: Competitor, rho: f64, eta: f64, costs: &TransitionCosts) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Domain(format!("rho must lie in (0, 1), got {rho}")));
    }
    let TransitionCosts { c1, c2, c3, c4, .. } = *costs;
    Ok(match config {
        Competitor::Wors => 4.0 * SQRT_2 * rho * c2 + 4.0 * (1.0 - rho) * c4,
        Competitor::Bd => 4.0 * SQRT_2 * rho * c2 + 2.0 * SQRT_2 * c4,
        Competitor::Esc => {
            // admit rounding at the endpoint, e.g. eta computed as (1 − ρ)·j/m
            if !(eta >= 0.0 && eta <= (1.0 - rho) * (1.0 + 1e-12)) {
                return Err(Error::Domain(format!("eta = {eta} outside [0, {}]", 1.0 - rho)));
            }
            let eta = eta.min(1.0 - rho);
            4.0 * SQRT_2 * rho * c1 + 4.0 * SQRT_2 * (rho + eta) * c3 + 4.0 * (1.0 - rho - eta) * c4
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    /// `(c4 − √2c3)/(√2c1 − √2c2 + c4)`
    pub r1: f64,
    /// `(c4 − 2c3)/(2c1 − 2c2)`
    pub r2: f64,
    /// False when the denominator vanishes; the value is then `+∞`.
    pub r1_defined: bool,
    pub r2_defined: bool,
}

pub fn ratios(costs: &TransitionCosts) -> Ratios {
    let TransitionCosts { c1, c2, c3, c4, .. } = *costs;
    let ratio = |num: f64, den: f64| {
        if den == 0.0 {
            (f64::INFINITY, false)
        } else {
            (num / den, true)
        }
    };
    let (r1, r1_defined) = ratio(c4 - SQRT_2 * c3, SQRT_2 * (c1 - c2) + c4);
    let (r2, r2_defined) = ratio(c4 - 2.0 * c3, 2.0 * (c1 - c2));
    Ratios { r1, r2, r1_defined, r2_defined }
}

/// ESC below WORS for the best admissible ring, from the case split on
/// the sign of `c4 − √2c3` and of the denominator of `R1`.
pub fn esc_beats_wors(costs: &TransitionCosts, rho: f64) -> bool {
    let TransitionCosts { c1, c2, c3, c4, .. } = *costs;
    if c4 <= SQRT_2 * c3 {
        return false;
    }
    let den = SQRT_2 * (c1 - c2) + c4;
    let num = c4 - SQRT_2 * c3;
    // ρ·den < num
    rho * den < num
}

/// ESC below BD for the best admissible ring.
pub fn esc_beats_bd(costs: &TransitionCosts, rho: f64) -> bool {
    let TransitionCosts { c1, c2, c3, c4, .. } = *costs;
    if c4 <= SQRT_2 * c3 {
        return false;
    }
    // 2ρ(c1 − c2) < c4 − 2c3
    2.0 * rho * (c1 - c2) < c4 - 2.0 * c3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRegime {
    pub rho: f64,
    pub j_wors: f64,
    pub j_bd: f64,
    /// Minimum of `J∞(ESC)` over the η grid and where it is attained.
    pub j_esc: f64,
    pub eta: f64,
    pub winner: Competitor,
    pub r1: f64,
    pub r2: f64,
    /// Whether the closed-form case conditions let ESC win at this ρ.
    pub esc_feasible: bool,
    pub verdict: String,
}

/// Winner at each ρ, with ESC minimized over `n_eta` equispaced ring widths
/// on `[0, 1 − ρ]`. Errors if the grid search and the case conditions
/// disagree about ESC.
pub fn classify_regime(costs: &TransitionCosts, rho_grid: &[f64], n_eta: usize) -> Result<Vec<GammaRegime>> {
    if n_eta < 2 {
        return Err(Error::Domain(format!("need at least 2 ring widths, got {n_eta}")));
    }
    let rt = ratios(costs);
    rho_grid
        .iter()
        .map(|&rho| {
            let j_wors = j_inf(Competitor::Wors, rho, 0.0, costs)?;
            let j_bd = j_inf(Competitor::Bd, rho, 0.0, costs)?;
            let mut j_esc = f64::INFINITY;
            let mut eta = 0.0;
            for i in 0..n_eta {
                let e = (1.0 - rho) * i as f64 / (n_eta - 1) as f64;
                let j = j_inf(Competitor::Esc, rho, e, costs)?;
                if j < j_esc {
                    j_esc = j;
                    eta = e;
                }
            }
            let beats_w = esc_beats_wors(costs, rho);
            let beats_b = esc_beats_bd(costs, rho);
            let esc_feasible = beats_w && beats_b;
            let pair = if j_wors <= j_bd { Competitor::Wors } else { Competitor::Bd };
            let winner = if j_esc < j_wors.min(j_bd) { Competitor::Esc } else { pair };
            if (winner == Competitor::Esc) != esc_feasible {
                // only a tie at the grid endpoint may separate the two
                let gap = (j_esc - j_wors.min(j_bd)).abs();
                if gap > 1e-9 * j_esc.abs() {
                    return Err(Error::Domain(format!(
                        "ESC grid search ({winner}) contradicts the case conditions at rho = {rho}"
                    )));
                }
            }
            let verdict = if esc_feasible {
                "ESC wins: below both WORS and BD".to_string()
            } else if costs.c4 <= SQRT_2 * costs.c3 {
                "ESC excluded: c4 <= sqrt2 c3, widening the ring never pays".to_string()
            } else if !beats_w && !beats_b {
                "ESC excluded: above WORS (rho >= R1) and above BD (rho <= R2)".to_string()
            } else if !beats_w {
                "ESC excluded: above WORS (rho >= R1)".to_string()
            } else {
                "ESC excluded: above BD (rho <= R2)".to_string()
            };
            Ok(GammaRegime { rho, j_wors, j_bd, j_esc, eta, winner, r1: rt.r1, r2: rt.r2, esc_feasible, verdict })
        })
        .collect()
}

//! Natural continuation of escaped solutions in the aspect ratio.

use serde::{Deserialize, Serialize};

use crate::energy::{energy, SweepGeometry};
use crate::error::{Error, Result};
use crate::grid::build_grid;
use crate::ldg::MaterialParams;
use crate::solvers::{classify, ic_escaped, newton_solve, warm_start, Label, NewtonOptions, SolverConfig};
use crate::state::State;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuationConfig {
    pub rho_start: f64,
    pub step: f64,
    /// Give up past this aspect ratio even if the branch survives.
    pub rho_max: f64,
    pub winding: i8,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self { rho_start: 0.02, step: 0.002, rho_max: 0.3, winding: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationStep {
    /// Snapped aspect ratio.
    pub rho: f64,
    pub converged: bool,
    pub label: Option<Label>,
    pub max_q3: f64,
    pub max_q45: f64,
    pub energy: Option<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct EscapedBranch {
    pub steps: Vec<ContinuationStep>,
    /// Largest snapped ρ with a converged ESCAPED solution.
    pub threshold: f64,
    /// The escaped solution at the starting ρ.
    pub seed: State,
    /// The last escaped solution on the branch.
    pub last: State,
}

fn step_record(rho: f64, state: Option<(&State, usize)>, params: &MaterialParams) -> ContinuationStep {
    match state {
        Some((s, it)) => {
            let info = classify(s, params);
            ContinuationStep {
                rho,
                converged: true,
                label: Some(info.label),
                max_q3: info.max_q3,
                max_q45: info.max_q45,
                energy: Some(energy(s, params).total),
                iterations: it,
            }
        }
        None => ContinuationStep {
            rho,
            converged: false,
            label: None,
            max_q3: f64::NAN,
            max_q45: f64::NAN,
            energy: None,
            iterations: 0,
        },
    }
}

/// Solve from `ic_escaped` at `rho_start`, then raise ρ by `step`, each
/// solve warm-started from the previous escaped state, until the solve
/// fails or lands on a non-escaped state. Steps that snap to the current
/// grid are skipped.
pub fn escaped_continuation(
    params: &MaterialParams,
    geom: SweepGeometry,
    cc: &ContinuationConfig,
    cfg: &SolverConfig,
) -> Result<EscapedBranch> {
    if !(cc.step > 0.0 && cc.step.is_finite()) {
        return Err(Error::Config(format!("continuation step must be positive, got {}", cc.step)));
    }
    if cc.winding != 1 && cc.winding != -1 {
        return Err(Error::Config(format!("winding must be +1 or -1, got {}", cc.winding)));
    }
    let g = build_grid(geom.n, cc.rho_start, geom.eps_corner)?;
    let opts = NewtonOptions::default();
    let seed = match newton_solve(&ic_escaped(&g, params, cc.winding), params, cfg, &opts) {
        Ok(r) if classify(&r.state, params).label == Label::Escaped => r,
        Ok(_) | Err(Error::NoConvergence { .. }) => {
            return Err(Error::Campaign(format!(
                "no escaped solution at rho = {} to continue from",
                g.spec().rho_snapped
            )))
        }
        Err(e) => return Err(e),
    };
    let mut steps = vec![step_record(g.spec().rho_snapped, Some((&seed.state, seed.iterations)), params)];
    let mut threshold = g.spec().rho_snapped;
    let mut cur = seed.state.clone();
    let mut k = g.spec().k;
    let mut rho = cc.rho_start;
    loop {
        rho += cc.step;
        if rho > cc.rho_max {
            break;
        }
        let g = match build_grid(geom.n, rho, geom.eps_corner) {
            Ok(g) => g,
            Err(Error::Geometry(_)) => break,
            Err(e) => return Err(e),
        };
        if g.spec().k == k {
            continue;
        }
        k = g.spec().k;
        let r = newton_solve(&warm_start(&cur, &g, params), params, cfg, &opts);
        match r {
            Ok(rep) => {
                let rec = step_record(g.spec().rho_snapped, Some((&rep.state, rep.iterations)), params);
                let escaped = rec.label == Some(Label::Escaped);
                steps.push(rec);
                if !escaped {
                    break;
                }
                threshold = g.spec().rho_snapped;
                cur = rep.state;
            }
            Err(Error::NoConvergence { .. }) => {
                steps.push(step_record(g.spec().rho_snapped, None, params));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(EscapedBranch { steps, threshold, seed: seed.state, last: cur })
}

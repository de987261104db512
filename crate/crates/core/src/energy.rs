//! Discrete energies.
//!
//! The elastic part uses the cellwise trapezoidal rule for `|∇q|²`, so on
//! every Interior node `∂E/∂q_a = −|E_a|² h² R_a` with `R_a` the residual of
//! the solver module. The bulk part is shifted by the well value so that
//! wells carry zero energy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_grid, dirichlet_integral, GridSpec};
use crate::ldg::{bulk_potential, MaterialParams, QTensor, BASIS_NORM_SQ};
use crate::solvers::{classify, ic_bd, ic_wors, newton_solve, warm_start, Label, NewtonOptions, SolverConfig};
use crate::state::{State, System};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub elastic: f64,
    pub bulk: f64,
    pub total: f64,
}

/// `½∫|∇Q|² + (λ̄²/2C)∫(f_B − F_min)` for any system; on reduced states this
/// is `∫|∇q1|² + 3|∇q3|² + (λ̄²/2C) F(q1, q3)`.
pub fn energy(state: &State, params: &MaterialParams) -> EnergyBreakdown {
    let mut elastic = 0.0;
    for (k, &a) in state.system().components().iter().enumerate() {
        elastic += 0.5 * BASIS_NORM_SQ[a] * dirichlet_integral(&state.fields()[k]);
    }
    let grid = state.grid();
    let w = grid.weights();
    let fmin = params.f_min();
    let mut bulk = 0.0;
    for (idx, wi) in w.iter().enumerate() {
        if *wi > 0.0 {
            let q = QTensor::new(state.node_q(idx));
            bulk += wi * (bulk_potential(&q, params) - fmin);
        }
    }
    bulk *= params.bulk_prefactor();
    EnergyBreakdown { elastic, bulk, total: elastic + bulk }
}

pub fn energy_reduced(state: &State, params: &MaterialParams) -> Result<EnergyBreakdown> {
    if state.system() != System::Reduced {
        return Err(Error::Domain("energy_reduced needs a two-field state".into()));
    }
    Ok(energy(state, params))
}

pub fn energy_full(state: &State, params: &MaterialParams) -> Result<EnergyBreakdown> {
    if state.system() != System::Full {
        return Err(Error::Domain("energy_full needs a five-field state".into()));
    }
    Ok(energy(state, params))
}

/// Grid resolution and corner smoothing shared by the points of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepGeometry {
    pub n: usize,
    pub eps_corner: f64,
}

impl Default for SweepGeometry {
    fn default() -> Self {
        Self { n: 129, eps_corner: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Snapped aspect ratio actually solved.
    pub rho: f64,
    pub j_wors: f64,
    pub j_bd: Option<f64>,
}

impl SweepPoint {
    pub fn exists_bd(&self) -> bool {
        self.j_bd.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rho0Sweep {
    pub lambda_bar_sq: f64,
    pub points: Vec<SweepPoint>,
    /// Zero of `J(BD) − J(WORS)` by linear interpolation, if it changes sign.
    pub rho0: Option<f64>,
    pub bracket: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rho1Estimate {
    pub lambda_bar_sq: f64,
    /// Midpoint of the final bracket.
    pub rho1: f64,
    pub half_width: f64,
    /// Largest snapped ρ with a BD solution and smallest without one.
    pub bracket: (f64, f64),
    /// Every probe in evaluation order.
    pub probes: Vec<SweepPoint>,
}

fn solve_wors(spec: &GridSpec, params: &MaterialParams, cfg: &SolverConfig) -> Result<State> {
    let g = build_grid(spec.n, spec.rho_snapped, spec.eps_corner)?;
    Ok(newton_solve(&ic_wors(&g, params), params, cfg, &NewtonOptions::symmetric(System::Reduced))?.state)
}

/// A BD solution at the grid of `wors`, deflated against `wors`, from
/// `ic_bd` and, failing that, from `warm`.
fn find_bd(wors: &State, warm: Option<&State>, params: &MaterialParams, cfg: &SolverConfig) -> Option<State> {
    let g = wors.grid().clone();
    let opts = NewtonOptions { deflate: vec![wors.clone()], ..Default::default() };
    let mut inits = vec![ic_bd(&g, params, 1)];
    if let Some(w) = warm {
        inits.push(warm_start(w, &g, params));
    }
    inits.into_iter().find_map(|init| {
        let r = newton_solve(&init, params, cfg, &opts).ok()?;
        (classify(&r.state, params).label == Label::Bd).then_some(r.state)
    })
}

/// WORS and BD energies along `rho_grid` (ascending after snapping; points
/// that snap together are solved once). BD solves warm-start from the
/// previous BD.
pub fn rho0_sweep(
    params: &MaterialParams,
    geom: SweepGeometry,
    rho_grid: &[f64],
    cfg: &SolverConfig,
) -> Result<Rho0Sweep> {
    let mut specs: Vec<GridSpec> =
        rho_grid.iter().map(|&r| GridSpec::new(geom.n, r, geom.eps_corner)).collect::<Result<_>>()?;
    specs.sort_by_key(|s| s.k);
    specs.dedup_by_key(|s| s.k);
    if specs.len() < 2 {
        return Err(Error::Domain("a crossing sweep needs at least two distinct aspect ratios".into()));
    }
    let mut points = Vec::with_capacity(specs.len());
    let mut last_bd: Option<State> = None;
    for spec in &specs {
        let wors = solve_wors(spec, params, cfg)?;
        let bd = find_bd(&wors, last_bd.as_ref(), params, cfg);
        points.push(SweepPoint {
            rho: spec.rho_snapped,
            j_wors: energy(&wors, params).total,
            j_bd: bd.as_ref().map(|b| energy(b, params).total),
        });
        if bd.is_some() {
            last_bd = bd;
        }
    }
    let (rho0, bracket) = crossing(&points);
    Ok(Rho0Sweep { lambda_bar_sq: params.lambda_bar_sq(), points, rho0, bracket })
}

/// First sign change of `J(BD) − J(WORS)` between consecutive points where
/// both exist.
fn crossing(points: &[SweepPoint]) -> (Option<f64>, Option<(f64, f64)>) {
    for w in points.windows(2) {
        if let (Some(b0), Some(b1)) = (w[0].j_bd, w[1].j_bd) {
            let d0 = b0 - w[0].j_wors;
            let d1 = b1 - w[1].j_wors;
            if d0 == 0.0 {
                return (Some(w[0].rho), Some((w[0].rho, w[0].rho)));
            }
            if d0 * d1 < 0.0 || d1 == 0.0 {
                let r = w[0].rho + (w[1].rho - w[0].rho) * d0 / (d0 - d1);
                return (Some(r), Some((w[0].rho, w[1].rho)));
            }
        }
    }
    (None, None)
}

/// BD existence edge by bisection over the snapped aspect ratios in
/// `[lo, hi]`. If BD is absent at `lo` the edge is reported at `lo`; if it
/// is present at `hi`, at `hi`.
pub fn rho1_sweep(
    params: &MaterialParams,
    geom: SweepGeometry,
    lo: f64,
    hi: f64,
    cfg: &SolverConfig,
) -> Result<Rho1Estimate> {
    let slo = GridSpec::new(geom.n, lo, geom.eps_corner)?;
    let shi = GridSpec::new(geom.n, hi, geom.eps_corner)?;
    if shi.k <= slo.k {
        return Err(Error::Domain(format!("empty bracket [{lo}, {hi}] at n = {}", geom.n)));
    }
    let h = slo.h;
    let mut probes = Vec::new();
    let mut probe = |k: usize, warm: Option<&State>| -> Result<Option<State>> {
        let spec = GridSpec::new(geom.n, k as f64 * h, geom.eps_corner)?;
        let wors = solve_wors(&spec, params, cfg)?;
        let bd = find_bd(&wors, warm, params, cfg);
        probes.push(SweepPoint {
            rho: spec.rho_snapped,
            j_wors: energy(&wors, params).total,
            j_bd: bd.as_ref().map(|b| energy(b, params).total),
        });
        Ok(bd)
    };
    let (mut klo, mut khi) = (slo.k, shi.k);
    let mut warm = match probe(klo, None)? {
        Some(s) => s,
        None => {
            let r = klo as f64 * h;
            return Ok(Rho1Estimate {
                lambda_bar_sq: params.lambda_bar_sq(),
                rho1: r,
                half_width: 0.0,
                bracket: (r, r),
                probes,
            });
        }
    };
    if probe(khi, Some(&warm))?.is_some() {
        let r = khi as f64 * h;
        return Ok(Rho1Estimate {
            lambda_bar_sq: params.lambda_bar_sq(),
            rho1: r,
            half_width: 0.0,
            bracket: (r, r),
            probes,
        });
    }
    while khi - klo > 1 {
        let mid = (klo + khi) / 2;
        match probe(mid, Some(&warm))? {
            Some(s) => {
                klo = mid;
                warm = s;
            }
            None => khi = mid,
        }
    }
    let (a, b) = (klo as f64 * h, khi as f64 * h);
    Ok(Rho1Estimate {
        lambda_bar_sq: params.lambda_bar_sq(),
        rho1: 0.5 * (a + b),
        half_width: 0.5 * (b - a),
        bracket: (a, b),
        probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, ScalarField};
    use crate::symmetry::full_group;
    use approx::assert_relative_eq;
    use rand::{RngExt, SeedableRng};

    fn random_state(system: System, seed: u64) -> State {
        let g = build_grid(17, 0.25, 4.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let fields = (0..system.n_fields())
            .map(|_| {
                let v: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                ScalarField::from_values(&g, v).unwrap()
            })
            .collect();
        State::new(system, fields).unwrap()
    }

    #[test]
    fn well_state_has_zero_energy() {
        let p = MaterialParams::reference();
        let g = build_grid(33, 0.25, 4.0).unwrap();
        let w = p.wells().p2;
        let s = State::reduced(ScalarField::from_fn(&g, |_, _| w.q1), ScalarField::from_fn(&g, |_, _| w.q3)).unwrap();
        let e = energy_reduced(&s, &p).unwrap();
        assert!(e.total.abs() < 1e-9, "{e:?}");
    }

    #[test]
    fn isotropic_state_bulk_closed_form() {
        let p = MaterialParams::reference();
        let g = build_grid(33, 0.25, 4.0).unwrap();
        let e = energy_full(&State::zeros(&g, System::Full), &p).unwrap();
        assert_eq!(e.elastic, 0.0);
        assert_relative_eq!(e.bulk, p.bulk_prefactor() * (-p.f_min()) * g.spec().area(), max_relative = 1e-12);
    }

    #[test]
    fn embedded_reduced_energy_matches_full() {
        let p = MaterialParams::reference();
        let s = random_state(System::Reduced, 5);
        let er = energy_reduced(&s, &p).unwrap();
        let ef = energy_full(&s.to_full(), &p).unwrap();
        assert_relative_eq!(er.total, ef.total, max_relative = 1e-14);
        assert!(energy_full(&s, &p).is_err());
    }

    #[test]
    fn energy_is_frame_invariant() {
        let p = MaterialParams::reference();
        let s = random_state(System::Full, 6);
        let e0 = energy(&s, &p).total;
        for op in full_group() {
            let e1 = energy(&op.act(&s), &p).total;
            assert!((e0 - e1).abs() <= 1e-10 * e0.abs());
        }
    }
}

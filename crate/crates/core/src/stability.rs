//! Second variation about critical points with `q2 = q4 = q5 = 0`.
//!
//! For such states the quadratic form splits into independent blocks on
//! `V13 = (v1, v3)`, `V2`, `V4` and `V5`. With perturbations vanishing on
//! the Dirichlet nodes the discrete form is
//! `δ²F(v) = Σ_a |E_a|² Σ_e ω_e (δv_a)² + Σ_i w_i λ̄² Q_i(v)`, which is the
//! second derivative of the discrete full energy along `v`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dirichlet_integral, AnnulusGrid, ScalarField, NOT_UNKNOWN};
use crate::ldg::MaterialParams;
use crate::linsolve::{assemble, SymmetricSolver};
use crate::state::State;

/// Pointwise coefficients of the quadratic form.
#[derive(Debug, Clone)]
pub struct CoeffFields {
    pub c11: ScalarField,
    pub c13: ScalarField,
    pub c33: ScalarField,
    pub c2: ScalarField,
    pub c4: ScalarField,
    pub c5: ScalarField,
}

impl CoeffFields {
    /// Build from the `q1, q3` of a state; the extra components must vanish.
    pub fn from_state(state: &State, params: &MaterialParams) -> Result<Self> {
        let s = params.s_plus();
        for a in [1, 3, 4] {
            if let Some(f) = state.component(a) {
                if f.max_abs() > 1e-8 * s {
                    return Err(Error::Domain(format!(
                        "block decomposition needs q{} = 0, found max |q{}| = {:.3e}",
                        a + 1,
                        a + 1,
                        f.max_abs()
                    )));
                }
            }
        }
        let grid = state.grid();
        let (ac, bc) = (params.a() / params.c(), params.b() / params.c());
        let q1 = state.q1().values();
        let q3 = state.q3().values();
        let make = |f: &dyn Fn(f64, f64) -> f64| {
            let v = q1.iter().zip(q3).map(|(&x, &z)| f(x, z)).collect();
            ScalarField::from_values(grid, v).expect("grid-sized")
        };
        Ok(Self {
            c11: make(&|q1, q3| ac + 2.0 * bc * q3 + 6.0 * (q1 * q1 + q3 * q3)),
            c13: make(&|q1, q3| 4.0 * bc * q1 + 24.0 * q1 * q3),
            c33: make(&|q1, q3| 3.0 * ac - 6.0 * bc * q3 + 6.0 * q1 * q1 + 54.0 * q3 * q3),
            c2: make(&|q1, q3| ac + 2.0 * bc * q3 + 2.0 * (q1 * q1 + 3.0 * q3 * q3)),
            c4: make(&|q1, q3| ac - bc * (q1 + q3) + 2.0 * (q1 * q1 + 3.0 * q3 * q3)),
            c5: make(&|q1, q3| ac - bc * (q3 - q1) + 2.0 * (q1 * q1 + 3.0 * q3 * q3)),
        })
    }

    pub fn grid(&self) -> &Arc<AnnulusGrid> {
        self.c11.grid()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subspace {
    V13,
    V2,
    V4,
    V5,
}

impl Subspace {
    pub const ALL: [Subspace; 4] = [Subspace::V13, Subspace::V2, Subspace::V4, Subspace::V5];

    pub fn n_fields(self) -> usize {
        if self == Subspace::V13 {
            2
        } else {
            1
        }
    }

    /// Gradient weights `|E_a|²` of the perturbation components.
    fn grad_weights(self) -> &'static [f64] {
        if self == Subspace::V13 {
            &[2.0, 6.0]
        } else {
            &[2.0]
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Subspace::V13 => "V13",
            Subspace::V2 => "V2",
            Subspace::V4 => "V4",
            Subspace::V5 => "V5",
        }
    }
}

fn check_admissible(fields: &[&ScalarField]) -> Result<()> {
    for f in fields {
        let g = f.grid();
        for idx in 0..g.len() {
            if g.unknown_index(idx) == NOT_UNKNOWN && f.values()[idx] != 0.0 {
                return Err(Error::Domain("perturbation must vanish on Dirichlet and hole nodes".into()));
            }
        }
    }
    Ok(())
}

/// `∫ λ̄²(C11 v1² + C33 v3² + C13 v1 v3) + 2|∇v1|² + 6|∇v3|²`.
pub fn second_variation_v13(
    v1: &ScalarField,
    v3: &ScalarField,
    coeffs: &CoeffFields,
    params: &MaterialParams,
) -> Result<f64> {
    check_admissible(&[v1, v3])?;
    let l2 = params.lambda_bar_sq();
    let w = coeffs.grid().weights();
    let (a, b) = (v1.values(), v3.values());
    let (c11, c13, c33) = (coeffs.c11.values(), coeffs.c13.values(), coeffs.c33.values());
    let mut bulk = 0.0;
    for i in 0..a.len() {
        bulk += w[i] * (c11[i] * a[i] * a[i] + c33[i] * b[i] * b[i] + c13[i] * a[i] * b[i]);
    }
    Ok(l2 * bulk + 2.0 * dirichlet_integral(v1) + 6.0 * dirichlet_integral(v3))
}

/// `∫ λ̄² c v² + 2|∇v|²` for one of `C2, C4, C5`.
pub fn second_variation_scalar(v: &ScalarField, coeff: &ScalarField, params: &MaterialParams) -> Result<f64> {
    check_admissible(&[v])?;
    let w = coeff.grid().weights();
    let bulk: f64 = v.values().iter().zip(coeff.values()).zip(w).map(|((x, c), w)| w * c * x * x).sum();
    Ok(params.lambda_bar_sq() * bulk + 2.0 * dirichlet_integral(v))
}

/// Quadratic form on one subspace.
pub fn second_variation(
    sub: Subspace,
    v: &[ScalarField],
    coeffs: &CoeffFields,
    params: &MaterialParams,
) -> Result<f64> {
    if v.len() != sub.n_fields() {
        return Err(Error::Domain(format!("{} takes {} fields", sub.name(), sub.n_fields())));
    }
    match sub {
        Subspace::V13 => second_variation_v13(&v[0], &v[1], coeffs, params),
        Subspace::V2 => second_variation_scalar(&v[0], &coeffs.c2, params),
        Subspace::V4 => second_variation_scalar(&v[0], &coeffs.c4, params),
        Subspace::V5 => second_variation_scalar(&v[0], &coeffs.c5, params),
    }
}

/// Discrete `L²` norm `(Σ_i w_i Σ_a v_a²)^{1/2}`.
pub fn perturbation_norm(v: &[ScalarField]) -> f64 {
    let w = v[0].grid().weights();
    v.iter().map(|f| f.values().iter().zip(w).map(|(x, w)| w * x * x).sum::<f64>()).sum::<f64>().sqrt()
}

/// Per-node coefficient block and the matrix `A` with
/// `δ²F(v) = h² uᵀ A u` on Interior unknowns `u` (interleaved for V13).
fn node_block(sub: Subspace, c: &CoeffFields, idx: usize) -> [[f64; 2]; 2] {
    match sub {
        Subspace::V13 => {
            let off = 0.5 * c.c13.values()[idx];
            [[c.c11.values()[idx], off], [off, c.c33.values()[idx]]]
        }
        Subspace::V2 => [[c.c2.values()[idx], 0.0], [0.0, 0.0]],
        Subspace::V4 => [[c.c4.values()[idx], 0.0], [0.0, 0.0]],
        Subspace::V5 => [[c.c5.values()[idx], 0.0], [0.0, 0.0]],
    }
}

fn operator_triplets(sub: Subspace, c: &CoeffFields, params: &MaterialParams, shift: f64) -> Vec<(usize, usize, f64)> {
    let grid = c.grid();
    let nf = sub.n_fields();
    let gw = sub.grad_weights();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let l2 = params.lambda_bar_sq();
    let mut t = Vec::with_capacity(grid.n_interior() * nf * (4 + nf));
    for (k, &idx) in grid.interior().iter().enumerate() {
        let blk = node_block(sub, c, idx);
        for f in 0..nf {
            let row = k * nf + f;
            for nb in grid.neighbours(idx) {
                let u = grid.unknown_index(nb);
                if u != NOT_UNKNOWN {
                    t.push((row, u * nf + f, -gw[f] * inv_h2));
                }
            }
            for g in 0..nf {
                let mut v = l2 * blk[f][g];
                if f == g {
                    v += 4.0 * gw[f] * inv_h2 - shift;
                }
                t.push((row, k * nf + g, v));
            }
        }
    }
    t
}

/// A lower bound for the spectrum of `A`: the gradient part is positive,
/// so the smallest eigenvalue of `λ̄² C` over all nodes bounds it.
fn spectrum_lower_bound(sub: Subspace, c: &CoeffFields, params: &MaterialParams) -> f64 {
    let grid = c.grid();
    let l2 = params.lambda_bar_sq();
    let mut lo = f64::INFINITY;
    for &idx in grid.interior() {
        let b = node_block(sub, c, idx);
        let m = if sub == Subspace::V13 {
            let tr = 0.5 * (b[0][0] + b[1][1]);
            let d = (0.25 * (b[0][0] - b[1][1]).powi(2) + b[0][1] * b[0][1]).sqrt();
            tr - d
        } else {
            b[0][0]
        };
        lo = lo.min(l2 * m);
    }
    lo
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stable,
    Unstable,
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityConfig {
    /// Verdict threshold in units of `λ̄²`.
    pub tol_stab_rel: f64,
    pub max_lanczos: usize,
    /// Relative Ritz residual at which Lanczos stops.
    pub lanczos_tol: f64,
    pub seed: u64,
    /// Width of the Gaussian bumps used for illustrative witnesses.
    pub bump_width: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self { tol_stab_rel: 1e-6, max_lanczos: 200, lanczos_tol: 1e-10, seed: 7, bump_width: 0.1 }
    }
}

impl StabilityConfig {
    pub fn tol_stab(&self, params: &MaterialParams) -> f64 {
        self.tol_stab_rel * params.lambda_bar_sq()
    }

    pub fn verdict(&self, estimate: f64, params: &MaterialParams) -> Verdict {
        let tol = self.tol_stab(params);
        if estimate < -tol {
            Verdict::Unstable
        } else if estimate > tol {
            Verdict::Stable
        } else {
            Verdict::Marginal
        }
    }
}

#[derive(Debug, Clone)]
pub struct RayleighEstimate {
    pub subspace: Subspace,
    /// `δ²F(v)/‖v‖²` at the returned direction; an upper bound for the
    /// minimum, equal to it when `converged`.
    pub estimate: f64,
    pub verdict: Verdict,
    /// Unit-norm minimizing direction.
    pub witness: Vec<ScalarField>,
    pub iterations: usize,
    pub converged: bool,
}

fn fields_from_unknowns(grid: &Arc<AnnulusGrid>, nf: usize, x: &[f64]) -> Vec<ScalarField> {
    (0..nf)
        .map(|f| {
            let mut s = ScalarField::zeros(grid);
            let vals = s.values_mut();
            for (k, &idx) in grid.interior().iter().enumerate() {
                vals[idx] = x[k * nf + f];
            }
            s
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Smallest eigenvalue of `A` on one subspace by shift-invert Lanczos with
/// full reorthogonalization, the shift lying below the spectrum.
pub fn min_rayleigh(
    sub: Subspace,
    coeffs: &CoeffFields,
    params: &MaterialParams,
    cfg: &StabilityConfig,
) -> Result<RayleighEstimate> {
    let grid = coeffs.grid().clone();
    let nf = sub.n_fields();
    let dim = grid.n_interior() * nf;
    let sigma = spectrum_lower_bound(sub, coeffs, params) - 1.0;
    let shifted = assemble(dim, &operator_triplets(sub, coeffs, params, sigma))?;
    let fac = SymmetricSolver::new().factor(shifted)?;
    let a = assemble(dim, &operator_triplets(sub, coeffs, params, 0.0))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut q: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let nq = dot(&q, &q).sqrt();
    q.iter_mut().for_each(|v| *v /= nq);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let m_max = cfg.max_lanczos.min(dim).max(1);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut converged = false;
    let mut steps = 0;
    for j in 0..m_max {
        let mut w = fac.solve(&basis[j])?;
        let aj = dot(&w, &basis[j]);
        alpha.push(aj);
        // full reorthogonalization, twice
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&w, b);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let bj = dot(&w, &w).sqrt();
        steps = j + 1;
        let check = steps % 5 == 0 || steps == m_max || bj < 1e-14;
        if check {
            let m = alpha.len();
            let t = DMatrix::from_fn(m, m, |r, c| {
                if r == c {
                    alpha[r]
                } else if r + 1 == c {
                    beta[r]
                } else if c + 1 == r {
                    beta[c]
                } else {
                    0.0
                }
            });
            let eig = SymmetricEigen::new(t);
            let (kmax, theta) =
                eig.eigenvalues
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
            let y = eig.eigenvectors.column(kmax);
            let resid = (bj * y[m - 1]).abs();
            let mut x = vec![0.0; dim];
            for (k, b) in basis.iter().enumerate() {
                x.iter_mut().zip(b).for_each(|(xi, bi)| *xi += y[k] * bi);
            }
            best = Some((theta, x));
            if resid <= cfg.lanczos_tol * theta.abs() || bj < 1e-14 {
                converged = true;
                break;
            }
        }
        beta.push(bj);
        basis.push(w.iter().map(|v| v / bj).collect());
    }
    let (_, mut x) = best.expect("at least one Lanczos step");
    // Rayleigh quotient on the true operator, in units of the discrete L² norm
    let nx = dot(&x, &x).sqrt();
    x.iter_mut().for_each(|v| *v /= nx);
    let ax = crate::linsolve::matvec(&a, &x);
    let estimate = dot(&x, &ax);
    let h = grid.h();
    let witness: Vec<ScalarField> = fields_from_unknowns(&grid, nf, &x)
        .into_iter()
        .map(|mut f| {
            f.values_mut().iter_mut().for_each(|v| *v /= h);
            f
        })
        .collect();
    let mut verdict = cfg.verdict(estimate, params);
    if !converged && verdict == Verdict::Stable {
        log::warn!("{}: Lanczos did not converge in {steps} steps", sub.name());
        verdict = Verdict::Marginal;
    }
    Ok(RayleighEstimate { subspace: sub, estimate, verdict, witness, iterations: steps, converged })
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub entries: Vec<RayleighEstimate>,
}

impl StabilityReport {
    pub fn get(&self, sub: Subspace) -> &RayleighEstimate {
        self.entries.iter().find(|e| e.subspace == sub).expect("all subspaces analysed")
    }

    pub fn verdict(&self, sub: Subspace) -> Verdict {
        self.get(sub).verdict
    }

    /// Stable on every subspace.
    pub fn is_stable(&self) -> bool {
        self.entries.iter().all(|e| e.verdict == Verdict::Stable)
    }
}

pub fn stability_report(state: &State, params: &MaterialParams, cfg: &StabilityConfig) -> Result<StabilityReport> {
    let coeffs = CoeffFields::from_state(state, params)?;
    let entries = Subspace::ALL.iter().map(|&s| min_rayleigh(s, &coeffs, params, cfg)).collect::<Result<Vec<_>>>()?;
    Ok(StabilityReport { entries })
}

/// `exp(−|x − c|²/(2 w²))` on Interior nodes, 0 elsewhere.
pub fn gaussian_bump(grid: &Arc<AnnulusGrid>, center: (f64, f64), width: f64) -> ScalarField {
    let mut f = ScalarField::zeros(grid);
    let vals = f.values_mut();
    for &idx in grid.interior() {
        let (x, y) = grid.xy(idx);
        let r2 = (x - center.0).powi(2) + (y - center.1).powi(2);
        vals[idx] = (-r2 / (2.0 * width * width)).exp();
    }
    f
}

/// Bumps centred on the four half-diagonals, midway between hole and corner.
pub fn diagonal_bump(grid: &Arc<AnnulusGrid>, width: f64) -> ScalarField {
    let rho = grid.spec().rho_snapped;
    let d = 0.5 * (1.0 + rho);
    let mut f = ScalarField::zeros(grid);
    for k in 0..4 {
        let ang = PI / 4.0 + k as f64 * PI / 2.0;
        let c = (d * ang.cos().signum(), d * ang.sin().signum());
        let b = gaussian_bump(grid, c, width);
        f.values_mut().iter_mut().zip(b.values()).for_each(|(x, y)| *x += y);
    }
    f
}

/// A bump on the edge layer `x = ±(1 − offset)` at `y = 0`.
pub fn edge_bump(grid: &Arc<AnnulusGrid>, width: f64, offset: f64, side: f64) -> ScalarField {
    gaussian_bump(grid, (side.signum() * (1.0 - offset), 0.0), width)
}

/// Unnormalized linear gradient flow `∂_t v = −M⁻¹ ∂δ²F/∂v` with
/// `M = diag(4, 12)` on V13 and `M = 2` otherwise, so that
/// `∂_t v1 = Δv1 − λ̄²(C11 v1/2 + C13 v3/4)` and `∂_t v2 = 2Δv2 − λ̄² C2 v2`.
/// The `v3` line is then `Δv3 − λ̄²(C13 v1/12 + C33 v3/6)`. Integrated by the
/// same IMEX Crank–Nicolson step as the main flow. Returns `(t, ‖v‖)`
/// samples; decay indicates a nonnegative form, growth a negative direction.
pub fn linear_flow(
    sub: Subspace,
    coeffs: &CoeffFields,
    params: &MaterialParams,
    init: &[ScalarField],
    dt: f64,
    t_end: f64,
    sample_every: usize,
) -> Result<(Vec<ScalarField>, Vec<(f64, f64)>)> {
    check_admissible(&init.iter().collect::<Vec<_>>())?;
    let grid = coeffs.grid().clone();
    let nf = sub.n_fields();
    let gw = sub.grad_weights();
    let mass: Vec<f64> = if sub == Subspace::V13 { vec![4.0, 12.0] } else { vec![2.0] };
    let l2 = params.lambda_bar_sq();
    let m = grid.n_interior();
    let n = grid.n();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut v: Vec<Vec<f64>> = init.iter().map(|f| grid.interior().iter().map(|&i| f.values()[i]).collect()).collect();
    let mut ops: Vec<crate::solvers::ShiftedLaplacian> =
        (0..nf).map(|f| crate::solvers::ShiftedLaplacian::new(&grid, 0.5 * dt * 2.0 * gw[f] / mass[f])).collect();
    let norm = |v: &Vec<Vec<f64>>| (grid.h() * grid.h() * v.iter().flatten().map(|x| x * x).sum::<f64>()).sqrt();
    let mut trace = vec![(0.0, norm(&v))];
    let steps = (t_end / dt).round() as usize;
    let mut delta = vec![vec![0.0; m]; nf];
    let mut rhs = vec![0.0; m];
    for step in 1..=steps {
        let full: Vec<Vec<f64>> = (0..nf)
            .map(|f| {
                let mut g = vec![0.0; grid.len()];
                for (k, &idx) in grid.interior().iter().enumerate() {
                    g[idx] = v[f][k];
                }
                g
            })
            .collect();
        for f in 0..nf {
            for (k, &idx) in grid.interior().iter().enumerate() {
                let u = &full[f];
                let lap = (u[idx + 1] + u[idx - 1] + u[idx + n] + u[idx - n] - 4.0 * u[idx]) * inv_h2;
                let blk = node_block(sub, coeffs, idx);
                let mut c = 0.0;
                for g in 0..nf {
                    c += blk[f][g] * full[g][idx];
                }
                rhs[k] = dt * (2.0 * gw[f] * lap - 2.0 * l2 * c) / mass[f];
            }
            ops[f].solve(&rhs, &mut delta[f], crate::linsolve::LINEAR_TOL);
            for k in 0..m {
                v[f][k] += delta[f][k];
            }
        }
        if step % sample_every == 0 || step == steps {
            let nv = norm(&v);
            if !nv.is_finite() {
                return Err(Error::BlowUp { time: step as f64 * dt });
            }
            trace.push((step as f64 * dt, nv));
        }
    }
    let out = (0..nf)
        .map(|f| {
            let mut s = ScalarField::zeros(&grid);
            for (k, &idx) in grid.interior().iter().enumerate() {
                s.values_mut()[idx] = v[f][k];
            }
            s
        })
        .collect();
    Ok((out, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::energy;
    use crate::grid::build_grid;
    use crate::ldg::bulk_hessian;
    use crate::solvers::{ic_bd, ic_wors, newton_solve, NewtonOptions, SolverConfig};
    use crate::state::System;

    fn p() -> MaterialParams {
        MaterialParams::reference()
    }

    fn wors(n: usize, rho: f64) -> State {
        let g = build_grid(n, rho, 4.0).unwrap();
        newton_solve(&ic_wors(&g, &p()), &p(), &SolverConfig::default(), &NewtonOptions::symmetric(System::Reduced))
            .unwrap()
            .state
    }

    fn random_pert(grid: &Arc<AnnulusGrid>, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = ScalarField::zeros(grid);
        for &idx in grid.interior() {
            f.values_mut()[idx] = rng.random_range(-1.0..1.0);
        }
        f
    }

    #[test]
    fn coefficients_match_bulk_hessian() {
        // λ̄² C_ab = (λ̄²/2C) ∂²f_B/∂q_a∂q_b with the cross term doubled
        let p = p();
        let s = wors(33, 0.3);
        let c = CoeffFields::from_state(&s, &p).unwrap();
        for idx in s.grid().interior().iter().step_by(11) {
            let h = bulk_hessian(&s.node_q(*idx), &p);
            let k = 1.0 / (2.0 * p.c());
            let close = |a: f64, b: f64| assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{a} {b}");
            close(c.c11.values()[*idx], k * h[0][0]);
            close(c.c13.values()[*idx], 2.0 * k * h[0][2]);
            close(c.c33.values()[*idx], k * h[2][2]);
            close(c.c2.values()[*idx], k * h[1][1]);
            close(c.c4.values()[*idx], k * h[3][3]);
            close(c.c5.values()[*idx], k * h[4][4]);
            assert!(h[0][1].abs() < 1e-9 && h[0][3].abs() < 1e-9 && h[3][4].abs() < 1e-9);
        }
    }

    #[test]
    fn c2_vanishes_at_wells() {
        let p = p();
        let s = p.s_plus();
        let g = build_grid(17, 0.25, 4.0).unwrap();
        for q1 in [s / 2.0, -s / 2.0] {
            let st =
                State::reduced(ScalarField::from_fn(&g, |_, _| q1), ScalarField::from_fn(&g, |_, _| -s / 6.0)).unwrap();
            let c = CoeffFields::from_state(&st, &p).unwrap();
            assert!(c.c2.max_abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_form_is_second_difference_of_energy() {
        let p = p();
        let s = wors(33, 0.3).to_full();
        let g = s.grid().clone();
        let c = CoeffFields::from_state(&s, &p).unwrap();
        let v: Vec<ScalarField> = (0..5).map(|k| random_pert(&g, 40 + k)).collect();
        let form = second_variation_v13(&v[0], &v[2], &c, &p).unwrap()
            + second_variation_scalar(&v[1], &c.c2, &p).unwrap()
            + second_variation_scalar(&v[3], &c.c4, &p).unwrap()
            + second_variation_scalar(&v[4], &c.c5, &p).unwrap();
        let eps = 1e-3;
        let shifted = |t: f64| {
            let mut st = s.clone();
            for (f, dv) in st.fields_mut().iter_mut().zip(&v) {
                f.values_mut().iter_mut().zip(dv.values()).for_each(|(x, d)| *x += t * d);
            }
            energy(&st, &p).total
        };
        let fd = (shifted(eps) - 2.0 * shifted(0.0) + shifted(-eps)) / (eps * eps);
        assert!((fd - form).abs() <= 1e-6f64.max(1e-4 * form.abs()), "{fd} vs {form}");
    }

    #[test]
    fn trivial_and_scaling() {
        let p = p();
        let s = wors(33, 0.3);
        let g = s.grid().clone();
        let c = CoeffFields::from_state(&s, &p).unwrap();
        let z = ScalarField::zeros(&g);
        assert_eq!(second_variation_v13(&z, &z, &c, &p).unwrap(), 0.0);
        assert_eq!(second_variation_scalar(&z, &c.c2, &p).unwrap(), 0.0);
        let v1 = random_pert(&g, 1);
        let v3 = random_pert(&g, 2);
        let base = second_variation_v13(&v1, &v3, &c, &p).unwrap();
        let mut v1s = v1.clone();
        let mut v3s = v3.clone();
        v1s.values_mut().iter_mut().for_each(|x| *x *= 3.0);
        v3s.values_mut().iter_mut().for_each(|x| *x *= 3.0);
        let scaled = second_variation_v13(&v1s, &v3s, &c, &p).unwrap();
        assert!((scaled - 9.0 * base).abs() <= 1e-10 * base.abs());
        let mut bad = z.clone();
        bad.values_mut()[g.idx(0, 0)] = 1.0;
        assert!(second_variation_scalar(&bad, &c.c2, &p).is_err());
    }

    #[test]
    fn rayleigh_estimate_matches_witness_and_dense_eigenvalue() {
        let p = p();
        let s = wors(17, 0.25);
        let c = CoeffFields::from_state(&s, &p).unwrap();
        let cfg = StabilityConfig::default();
        for sub in Subspace::ALL {
            let r = min_rayleigh(sub, &c, &p, &cfg).unwrap();
            assert!(r.converged);
            let q = second_variation(sub, &r.witness, &c, &p).unwrap();
            let nrm = perturbation_norm(&r.witness);
            assert!((nrm - 1.0).abs() < 1e-10);
            assert!((q - r.estimate).abs() <= 1e-8 * (1.0 + q.abs()), "{q} vs {}", r.estimate);
            // dense oracle
            let dim = s.grid().n_interior() * sub.n_fields();
            let a = assemble(dim, &operator_triplets(sub, &c, &p, 0.0)).unwrap();
            let mut dense = DMatrix::zeros(dim, dim);
            for j in 0..dim {
                let mut e = vec![0.0; dim];
                e[j] = 1.0;
                let col = crate::linsolve::matvec(&a, &e);
                for i in 0..dim {
                    dense[(i, j)] = col[i];
                }
            }
            let mn = SymmetricEigen::new(dense).eigenvalues.min();
            assert!((mn - r.estimate).abs() <= 1e-7 * (1.0 + mn.abs()), "{mn} vs {}", r.estimate);
        }
    }

    #[test]
    fn linear_flow_decays_when_stable_and_grows_when_not() {
        let p = p();
        let g = build_grid(33, 0.2, 4.0).unwrap();
        let bd =
            newton_solve(&ic_bd(&g, &p, 1), &p, &SolverConfig::default(), &NewtonOptions::default()).unwrap().state;
        let c = CoeffFields::from_state(&bd, &p).unwrap();
        let v0 = vec![random_pert(&g, 3)];
        let cfg = StabilityConfig::default();
        for sub in [Subspace::V2, Subspace::V4] {
            let mu = min_rayleigh(sub, &c, &p, &cfg).unwrap().estimate;
            let (_, tr) = linear_flow(sub, &c, &p, &v0, 1e-4, 0.5, 100).unwrap();
            let grows = tr.last().unwrap().1 > tr[1].1;
            assert_eq!(grows, mu < 0.0, "{sub:?} mu={mu}");
        }
    }
}

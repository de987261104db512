//! Residuals, Newton with deflation, the Crank–Nicolson gradient flow,
//! initial conditions and the solution taxonomy.
//!
//! In basis coordinates the Euler–Lagrange system reads
//! `Δq_a = λ̄² ∂f_B/∂q_a / (2C |E_a|²)` for every carried component `a`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::energy;
use crate::error::{Error, Result};
use crate::grid::{apply_laplacian, dirichlet_values, AnnulusGrid, NodeClass, ScalarField};
use crate::ldg::{bulk_gradient, bulk_hessian, MaterialParams, QTensor, BASIS_NORM_SQ};
use crate::linsolve::{assemble, SymmetricSolver};
use crate::state::{State, System};
use crate::symmetry::{group_for, stabilizer, symmetrize, SymmetryOp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Max-norm residual target, in units of `λ̄²`.
    pub newton_tol_rel: f64,
    pub newton_max_iter: usize,
    pub backtrack_factor: f64,
    pub max_halvings: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Stop the flow once the max-norm update of one step falls below this.
    pub flow_stop_tol: f64,
    /// Record the energy every this many flow steps.
    pub flow_sample_every: usize,
    pub deflation_power: f64,
    pub deflation_shift: f64,
    /// Distinctness radius in units of `s₊ √area`.
    pub deflation_radius_rel: f64,
    /// Abort Newton once `max |q_a|` exceeds this multiple of `s₊`.
    pub divergence_factor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            newton_tol_rel: 1e-9,
            newton_max_iter: 50,
            backtrack_factor: 0.5,
            max_halvings: 20,
            dt: 1e-4,
            t_end: 4.0,
            flow_stop_tol: 1e-10,
            flow_sample_every: 50,
            deflation_power: 2.0,
            deflation_shift: 1.0,
            deflation_radius_rel: 1e-3,
            divergence_factor: 5.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("newton_tol_rel", self.newton_tol_rel),
            ("dt", self.dt),
            ("t_end", self.t_end),
            ("flow_stop_tol", self.flow_stop_tol),
            ("deflation_power", self.deflation_power),
            ("deflation_shift", self.deflation_shift),
            ("deflation_radius_rel", self.deflation_radius_rel),
            ("divergence_factor", self.divergence_factor),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::Config("backtrack_factor must lie in (0, 1)".into()));
        }
        if self.newton_max_iter == 0 || self.flow_sample_every == 0 {
            return Err(Error::Config("iteration counts must be positive".into()));
        }
        Ok(())
    }

    pub fn newton_tol(&self, params: &MaterialParams) -> f64 {
        self.newton_tol_rel * params.lambda_bar_sq()
    }

    pub fn deflation_radius(&self, params: &MaterialParams, grid: &AnnulusGrid) -> f64 {
        self.deflation_radius_rel * params.s_plus() * grid.spec().area().sqrt()
    }
}

/// `∂f_B/∂q_a / (2C |E_a|²)` at one node.
#[inline]
fn scaled_bulk(q: &[f64; 5], params: &MaterialParams) -> [f64; 5] {
    let g = bulk_gradient(q, params);
    let c2 = 2.0 * params.c();
    std::array::from_fn(|a| g[a] / (c2 * BASIS_NORM_SQ[a]))
}

/// `R_a = Δ_h q_a − λ̄² ∂f_B/∂q_a / (2C|E_a|²)` on Interior nodes, 0 elsewhere.
pub fn residual(state: &State, params: &MaterialParams) -> Vec<ScalarField> {
    let grid = state.grid();
    let comps = state.system().components();
    let mut out: Vec<ScalarField> = state.fields().iter().map(apply_laplacian).collect();
    let l2 = params.lambda_bar_sq();
    for &idx in grid.interior() {
        let b = scaled_bulk(&state.node_q(idx), params);
        for (k, &a) in comps.iter().enumerate() {
            out[k].values_mut()[idx] -= l2 * b[a];
        }
    }
    out
}

/// Two-field residual `(R1, R3)`.
pub fn residual_reduced(state: &State, params: &MaterialParams) -> Result<(ScalarField, ScalarField)> {
    if state.system() != System::Reduced {
        return Err(Error::Domain("residual_reduced needs a two-field state".into()));
    }
    let mut r = residual(state, params);
    let r3 = r.pop().unwrap();
    let r1 = r.pop().unwrap();
    Ok((r1, r3))
}

pub fn residual_full(state: &State, params: &MaterialParams) -> Result<Vec<ScalarField>> {
    if state.system() != System::Full {
        return Err(Error::Domain("residual_full needs a five-field state".into()));
    }
    Ok(residual(state, params))
}

pub fn residual_max(state: &State, params: &MaterialParams) -> f64 {
    residual(state, params).iter().map(|f| f.max_abs()).fold(0.0, f64::max)
}

fn residual_vec(state: &State, params: &MaterialParams) -> Vec<f64> {
    let grid = state.grid();
    let comps = state.system().components();
    let nf = comps.len();
    let n = grid.n();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let l2 = params.lambda_bar_sq();
    let mut r = vec![0.0; grid.n_interior() * nf];
    for (k, &idx) in grid.interior().iter().enumerate() {
        let b = scaled_bulk(&state.node_q(idx), params);
        for (f, &a) in comps.iter().enumerate() {
            let u = state.fields()[f].values();
            let lap = (u[idx + 1] + u[idx - 1] + u[idx + n] + u[idx - n] - 4.0 * u[idx]) * inv_h2;
            r[k * nf + f] = lap - l2 * b[a];
        }
    }
    r
}

/// Symmetric Jacobian `diag(|E_a|²) ∂R/∂u` of the residual.
fn jacobian_triplets(state: &State, params: &MaterialParams) -> Vec<(usize, usize, f64)> {
    let grid = state.grid();
    let comps = state.system().components();
    let nf = comps.len();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let pref = params.bulk_prefactor();
    let mut t = Vec::with_capacity(grid.n_interior() * nf * (4 + nf));
    for (k, &idx) in grid.interior().iter().enumerate() {
        let h = bulk_hessian(&state.node_q(idx), params);
        for (f, &a) in comps.iter().enumerate() {
            let row = k * nf + f;
            let w = BASIS_NORM_SQ[a];
            for nb in grid.neighbours(idx) {
                let u = grid.unknown_index(nb);
                if u != crate::grid::NOT_UNKNOWN {
                    t.push((row, u * nf + f, w * inv_h2));
                }
            }
            for (g, &b) in comps.iter().enumerate() {
                let mut v = -pref * h[a][b];
                if g == f {
                    v -= 4.0 * w * inv_h2;
                }
                t.push((row, k * nf + g, v));
            }
        }
    }
    t
}

/// Deflation operator `M(u) = Π_k (‖u − u_k‖^{−p} + σ)` over known states.
struct Deflation<'a> {
    known: &'a [State],
    power: f64,
    shift: f64,
    weights: Vec<f64>,
    nf: usize,
}

impl<'a> Deflation<'a> {
    fn new(known: &'a [State], grid: &AnnulusGrid, nf: usize, cfg: &SolverConfig) -> Self {
        let weights = grid.interior().iter().map(|&i| grid.weights()[i]).collect();
        Self { known, power: cfg.deflation_power, shift: cfg.deflation_shift, weights, nf }
    }

    fn dist_sq(&self, state: &State, k: usize) -> f64 {
        let d = state.l2_distance(&self.known[k]);
        d * d
    }

    fn value(&self, state: &State) -> f64 {
        (0..self.known.len()).map(|k| self.dist_sq(state, k).powf(-0.5 * self.power) + self.shift).product()
    }

    /// `∇M · δ / M` with `δ` in unknown packing.
    fn log_derivative(&self, state: &State, delta: &[f64]) -> f64 {
        let u = state.unknowns();
        let mut total = 0.0;
        for k in 0..self.known.len() {
            let uk = self.known[k].unknowns();
            let d2 = self.dist_sq(state, k);
            let dp = d2.powf(-0.5 * self.power);
            let m = dp + self.shift;
            // ∂(d^{-p})/∂u_j = −p d^{−p−2} w_j (u_j − u_kj)
            let mut dot = 0.0;
            for (j, dj) in delta.iter().enumerate() {
                dot += self.weights[j / self.nf] * (u[j] - uk[j]) * dj;
            }
            total += -self.power * dp / d2 * dot / m;
        }
        total
    }
}

#[derive(Debug, Clone, Default)]
pub struct NewtonOptions {
    /// Known solutions to deflate against.
    pub deflate: Vec<State>,
    /// Project every iterate onto the states fixed by these ops (a group,
    /// or empty for no constraint).
    pub symmetry: Vec<SymmetryOp>,
    pub max_iter: Option<usize>,
}

impl NewtonOptions {
    /// Constrained to states fixed by the whole symmetry group of `system`.
    pub fn symmetric(system: System) -> Self {
        Self { symmetry: group_for(system), ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub state: State,
    pub residual: f64,
    pub iterations: usize,
    /// Max-norm residual before each iteration and at exit.
    pub trace: Vec<f64>,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Damped Newton on the Dirichlet problem, optionally deflated.
pub fn newton_solve(
    init: &State,
    params: &MaterialParams,
    cfg: &SolverConfig,
    opts: &NewtonOptions,
) -> Result<NewtonReport> {
    cfg.validate()?;
    let grid = init.grid().clone();
    let comps = init.system().components();
    let nf = comps.len();
    let tol = cfg.newton_tol(params);
    let radius = cfg.deflation_radius(params, &grid);
    let ops = &opts.symmetry;
    let symmetric = !ops.is_empty();
    let max_iter = opts.max_iter.unwrap_or(cfg.newton_max_iter);
    let blowup = cfg.divergence_factor * params.s_plus();
    let deflation = Deflation::new(&opts.deflate, &grid, nf, cfg);
    let deflated = !opts.deflate.is_empty();

    let mut state = if symmetric { symmetrize(init, ops) } else { init.clone() };
    let mut solver = SymmetricSolver::new();
    let mut trace = Vec::new();
    let mut r = residual_vec(&state, params);
    let mut m = if deflated { deflation.value(&state) } else { 1.0 };

    let fail = |iterations: usize, residual: f64, reason: String, trace: Vec<f64>| {
        Err(Error::NoConvergence { iterations, residual, reason, trace })
    };

    for it in 0..=max_iter {
        let rmax = max_abs(&r);
        trace.push(rmax);
        if !rmax.is_finite() {
            return fail(it, rmax, "non-finite residual".into(), trace);
        }
        if rmax <= tol {
            if deflated {
                let dmin = opts.deflate.iter().map(|k| state.l2_distance(k)).fold(f64::INFINITY, f64::min);
                if dmin <= radius {
                    return fail(it, rmax, format!("converged onto a known solution (distance {dmin:.2e})"), trace);
                }
            }
            return Ok(NewtonReport { state, residual: rmax, iterations: it, trace });
        }
        if it == max_iter {
            break;
        }

        let a = assemble(r.len(), &jacobian_triplets(&state, params))?;
        let f = solver.factor(a)?;
        let rhs: Vec<f64> = r.iter().enumerate().map(|(j, v)| -BASIS_NORM_SQ[comps[j % nf]] * v).collect();
        let mut delta = f.solve(&rhs)?;
        if deflated {
            let tau = 1.0 / (1.0 - deflation.log_derivative(&state, &delta));
            if !tau.is_finite() {
                return fail(it, rmax, "singular deflation update".into(), trace);
            }
            delta.iter_mut().for_each(|d| *d *= tau);
        }

        let merit0 = m * l2(&r);
        let u0 = state.unknowns();
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let trial_u: Vec<f64> = u0.iter().zip(&delta).map(|(u, d)| u + alpha * d).collect();
            let mut trial = state.clone();
            trial.set_unknowns(&trial_u);
            if symmetric {
                trial = symmetrize(&trial, ops);
            }
            let rt = residual_vec(&trial, params);
            let mt = if deflated { deflation.value(&trial) } else { 1.0 };
            let merit = mt * l2(&rt);
            if merit.is_finite() && merit <= (1.0 - 1e-4 * alpha) * merit0 {
                accepted = Some((trial, rt, mt));
                break;
            }
            alpha *= cfg.backtrack_factor;
        }
        match accepted {
            Some((s, rt, mt)) => {
                state = s;
                r = rt;
                m = mt;
            }
            None => return fail(it + 1, rmax, "line search stalled".into(), trace),
        }
        if state.max_abs() > blowup {
            return fail(it + 1, max_abs(&r), "iterate left the physical range".into(), trace);
        }
    }
    let rmax = max_abs(&r);
    fail(max_iter, rmax, "iteration limit reached".into(), trace)
}

/// `I − θΔ₀` on the Interior nodes of one field, `Δ₀` being the Laplacian
/// with zero Dirichlet data, solved by CG (the diagonal is constant, so
/// Jacobi preconditioning would change nothing).
pub(crate) struct ShiftedLaplacian {
    /// Unknown indices of the E, W, N, S neighbours (`m` when Dirichlet).
    nbrs: Vec<[u32; 4]>,
    c: f64,
    r: Vec<f64>,
    p: Vec<f64>,
    ap: Vec<f64>,
}

impl ShiftedLaplacian {
    pub(crate) fn new(grid: &AnnulusGrid, theta: f64) -> Self {
        let n = grid.n();
        let m = grid.n_interior();
        let unk = |idx: usize| {
            let u = grid.unknown_index(idx);
            if u == crate::grid::NOT_UNKNOWN {
                m as u32
            } else {
                u as u32
            }
        };
        let nbrs =
            grid.interior().iter().map(|&idx| [unk(idx + 1), unk(idx - 1), unk(idx + n), unk(idx - n)]).collect();
        Self { nbrs, c: theta / (grid.h() * grid.h()), r: vec![0.0; m], p: vec![0.0; m + 1], ap: vec![0.0; m] }
    }

    /// `out = (I − θΔ₀) v`; `v` carries one trailing zero slot.
    fn apply(nbrs: &[[u32; 4]], c: f64, v: &[f64], out: &mut [f64]) {
        let d = 1.0 + 4.0 * c;
        for (k, nb) in nbrs.iter().enumerate() {
            let s = v[nb[0] as usize] + v[nb[1] as usize] + v[nb[2] as usize] + v[nb[3] as usize];
            out[k] = d * v[k] - c * s;
        }
    }

    /// Solve in place with `x` as the starting guess; returns CG iterations.
    pub(crate) fn solve(&mut self, b: &[f64], x: &mut [f64], rel_tol: f64) -> usize {
        let m = b.len();
        self.p[..m].copy_from_slice(x);
        self.p[m] = 0.0;
        Self::apply(&self.nbrs, self.c, &self.p, &mut self.ap);
        for k in 0..m {
            self.r[k] = b[k] - self.ap[k];
        }
        let tol2 = (rel_tol * l2(b)).powi(2);
        let mut rr: f64 = self.r.iter().map(|v| v * v).sum();
        self.p[..m].copy_from_slice(&self.r);
        let mut it = 0;
        while rr > tol2 && it < 500 {
            Self::apply(&self.nbrs, self.c, &self.p, &mut self.ap);
            let pap: f64 = self.p[..m].iter().zip(&self.ap).map(|(a, b)| a * b).sum();
            let alpha = rr / pap;
            let mut rr_new = 0.0;
            for k in 0..m {
                x[k] += alpha * self.p[k];
                self.r[k] -= alpha * self.ap[k];
                rr_new += self.r[k] * self.r[k];
            }
            let beta = rr_new / rr;
            rr = rr_new;
            for k in 0..m {
                self.p[k] = self.r[k] + beta * self.p[k];
            }
            it += 1;
        }
        it
    }
}

#[derive(Debug, Clone)]
pub struct FlowResult {
    pub state: State,
    pub t_final: f64,
    pub steps: usize,
    /// `(t, total energy)` samples, first at `t = 0`, last at exit.
    pub energies: Vec<(f64, f64)>,
    pub stopped_early: bool,
    /// Max-norm update of the last step.
    pub last_update: f64,
}

/// IMEX Crank–Nicolson gradient flow `∂_t q_a = R_a(q)`: the Laplacian is
/// averaged over the step, the bulk term is explicit. Each step solves
/// `(I − dt/2 Δ₀) δ = dt R(qⁿ)` for the increment `δ`.
pub fn gradient_flow(init: &State, params: &MaterialParams, cfg: &SolverConfig) -> Result<FlowResult> {
    Ok(gradient_flow_snapshots(init, params, cfg, &[])?.0)
}

/// `gradient_flow` that also returns the state at each of `times` (the
/// first step reaching it; the final state for times after an early stop).
pub fn gradient_flow_snapshots(
    init: &State,
    params: &MaterialParams,
    cfg: &SolverConfig,
    times: &[f64],
) -> Result<(FlowResult, Vec<(f64, State)>)> {
    cfg.validate()?;
    let mut pending: Vec<f64> = times.to_vec();
    pending.sort_by(f64::total_cmp);
    pending.reverse();
    let mut snaps = Vec::with_capacity(times.len());
    let mut take = |t: f64, s: &State, pending: &mut Vec<f64>| {
        while pending.last().is_some_and(|&tau| tau <= t + 0.5 * cfg.dt) {
            snaps.push((pending.pop().unwrap(), s.clone()));
        }
    };
    let grid = init.grid().clone();
    let nf = init.n_fields();
    let m = grid.n_interior();
    let mut state = init.clone();
    let mut deltas = vec![vec![0.0; m]; nf];
    let mut energies = vec![(0.0, energy(&state, params).total)];
    let n_steps = (cfg.t_end / cfg.dt).round() as usize;
    let mut t = 0.0;
    let mut last_update = f64::INFINITY;
    let mut steps = 0;
    let mut stopped_early = false;
    let mut rhs = vec![0.0; m];
    let mut op = ShiftedLaplacian::new(&grid, 0.5 * cfg.dt);
    take(0.0, &state, &mut pending);
    while steps < n_steps {
        let r = residual_vec(&state, params);
        let mut update = 0.0f64;
        for f in 0..nf {
            for k in 0..m {
                rhs[k] = cfg.dt * r[k * nf + f];
            }
            op.solve(&rhs, &mut deltas[f], crate::linsolve::LINEAR_TOL);
            let vals = state.fields_mut()[f].values_mut();
            for (k, &idx) in grid.interior().iter().enumerate() {
                vals[idx] += deltas[f][k];
                update = update.max(deltas[f][k].abs());
            }
        }
        steps += 1;
        t = steps as f64 * cfg.dt;
        if !update.is_finite() || !state.is_finite() {
            return Err(Error::BlowUp { time: t });
        }
        last_update = update;
        take(t, &state, &mut pending);
        if update < cfg.flow_stop_tol {
            stopped_early = true;
            break;
        }
        if steps % cfg.flow_sample_every == 0 {
            energies.push((t, energy(&state, params).total));
        }
    }
    if energies.last().map(|e| e.0) != Some(t) {
        energies.push((t, energy(&state, params).total));
    }
    take(f64::INFINITY, &state, &mut pending);
    let flow = FlowResult { state, t_final: t, steps, energies, stopped_early, last_update };
    Ok((flow, snaps))
}

fn with_boundary(
    grid: &Arc<AnnulusGrid>,
    params: &MaterialParams,
    system: System,
    fill: impl Fn(f64, f64) -> [f64; 5],
) -> State {
    let comps = system.components();
    let mut fields: Vec<ScalarField> = comps.iter().map(|_| ScalarField::zeros(grid)).collect();
    for idx in 0..grid.len() {
        if grid.class(idx) == NodeClass::Interior {
            let (x, y) = grid.xy(idx);
            let q = fill(x, y);
            for (k, &a) in comps.iter().enumerate() {
                fields[k].values_mut()[idx] = q[a];
            }
        }
    }
    let mut s = State::new(system, fields).expect("consistent fields");
    s.impose_boundary(&dirichlet_values(grid, params));
    s
}

/// Carry `state` to another grid (another `ρ` or resolution) by bilinear
/// interpolation of the nodal values, then impose its boundary data.
/// Between grids of equal resolution this is a plain copy.
pub fn warm_start(state: &State, grid: &Arc<AnnulusGrid>, params: &MaterialParams) -> State {
    let src = state.grid();
    let hs = src.h();
    let last = src.n() - 2;
    let fields = state
        .fields()
        .iter()
        .map(|f| {
            ScalarField::from_fn(grid, |x, y| {
                let (u, v) = ((x + 1.0) / hs, (y + 1.0) / hs);
                let (i, j) = ((u.floor() as usize).min(last), (v.floor() as usize).min(last));
                let (tx, ty) = (u - i as f64, v - j as f64);
                let tx = if tx.abs() < 1e-9 {
                    0.0
                } else if (1.0 - tx).abs() < 1e-9 {
                    1.0
                } else {
                    tx
                };
                let ty = if ty.abs() < 1e-9 {
                    0.0
                } else if (1.0 - ty).abs() < 1e-9 {
                    1.0
                } else {
                    ty
                };
                (1.0 - tx) * (1.0 - ty) * f.at(i, j)
                    + tx * (1.0 - ty) * f.at(i + 1, j)
                    + (1.0 - tx) * ty * f.at(i, j + 1)
                    + tx * ty * f.at(i + 1, j + 1)
            })
        })
        .collect();
    let mut s = State::new(state.system(), fields).expect("one grid");
    s.impose_boundary(&dirichlet_values(grid, params));
    s
}

/// Move converged records to `grid` and re-solve there without deflation,
/// keeping those that converge and are distinct.
pub fn refine_records(
    records: &[SolutionRecord],
    grid: &Arc<AnnulusGrid>,
    params: &MaterialParams,
    cfg: &SolverConfig,
    max_iter: usize,
) -> Result<Vec<SolutionRecord>> {
    let radius = cfg.deflation_radius(params, grid);
    let opts = NewtonOptions { max_iter: Some(max_iter), ..Default::default() };
    let mut out: Vec<SolutionRecord> = Vec::new();
    for rec in records {
        let init = warm_start(&rec.state, grid, params);
        match newton_solve(&init, params, cfg, &opts) {
            Ok(rep) => {
                if out.iter().all(|r| r.state.l2_distance(&rep.state) > radius) {
                    out.push(SolutionRecord::from_state(rep.state, params, rep.iterations, &rec.start));
                }
            }
            Err(Error::NoConvergence { reason, .. }) => log::debug!("refining {}: {reason}", rec.start),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn wors_value(x: f64, y: f64, s: f64) -> f64 {
    let d = y.abs() - x.abs();
    if d.abs() < 1e-12 {
        0.0
    } else {
        0.5 * s * d.signum()
    }
}

/// `q1 = ±s₊/2` on the wedges between the diagonals, 0 on them; `q3 = −s₊/6`.
pub fn ic_wors(grid: &Arc<AnnulusGrid>, params: &MaterialParams) -> State {
    let s = params.s_plus();
    with_boundary(grid, params, System::Reduced, |x, y| [wors_value(x, y, s), 0.0, -s / 6.0, 0.0, 0.0])
}

/// Constant `q1 = orientation · s₊/2`, `q3 = −s₊/6` inside the domain.
pub fn ic_bd(grid: &Arc<AnnulusGrid>, params: &MaterialParams, orientation: i8) -> State {
    let s = params.s_plus();
    let sign = if orientation < 0 { -1.0 } else { 1.0 };
    with_boundary(grid, params, System::Reduced, |_, _| [sign * s / 2.0, 0.0, -s / 6.0, 0.0, 0.0])
}

/// `(q1, q3) = (0, s₊/3)` on `ρ < max(|x|,|y|) < ρ + η`, WORS data outside.
pub fn ic_esc(grid: &Arc<AnnulusGrid>, params: &MaterialParams, eta: f64) -> Result<State> {
    let rho = grid.spec().rho_snapped;
    if !(0.0..=1.0 - rho).contains(&eta) {
        return Err(Error::Domain(format!("eta = {eta} outside [0, {}]", 1.0 - rho)));
    }
    let s = params.s_plus();
    Ok(with_boundary(grid, params, System::Reduced, |x, y| {
        if x.abs().max(y.abs()) < rho + eta {
            [0.0, 0.0, s / 3.0, 0.0, 0.0]
        } else {
            [wors_value(x, y, s), 0.0, -s / 6.0, 0.0, 0.0]
        }
    }))
}

/// Director field for the escaped initial condition: tilts from `e_z` at
/// the hole to the in-plane boundary director, whose angle winds `±1` times.
pub fn escaped_director(x: f64, y: f64, rho: f64, winding: i8) -> [f64; 3] {
    let r = x.abs().max(y.abs());
    let big = 0.5 * PI * ((r - rho) / (1.0 - rho)).clamp(0.0, 1.0);
    let w = if winding < 0 { -1.0 } else { 1.0 };
    let theta = w * (y.atan2(x) + 0.5 * PI);
    [big.sin() * theta.cos(), big.sin() * theta.sin(), big.cos()]
}

/// Uniaxial `s₊(n⊗n − I/3)` with `n` from `escaped_director`.
pub fn ic_escaped(grid: &Arc<AnnulusGrid>, params: &MaterialParams, winding: i8) -> State {
    let s = params.s_plus();
    let rho = grid.spec().rho_snapped;
    with_boundary(grid, params, System::Full, |x, y| QTensor::uniaxial(s, escaped_director(x, y, rho, winding)).q)
}

/// WORS-like data with the sign of `q1` reversed on the flagged wedges
/// (top, right, bottom, left): no flags is `ic_wors`, the left and right
/// wedges flipped is `ic_bd(+1)` away from the diagonals.
pub fn ic_pattern(grid: &Arc<AnnulusGrid>, params: &MaterialParams, flipped: [bool; 4]) -> State {
    let s = params.s_plus();
    with_boundary(grid, params, System::Reduced, |x, y| {
        let w = if y.abs() > x.abs() {
            if y > 0.0 {
                0
            } else {
                2
            }
        } else if x > 0.0 {
            1
        } else {
            3
        };
        let v = wors_value(x, y, s);
        [if flipped[w] { -v } else { v }, 0.0, -s / 6.0, 0.0, 0.0]
    })
}

/// In-plane director along a diagonal: `q2 = ±s₊/2`, `q1 = 0`, `q3 = −s₊/6`.
pub fn ic_diagonal(grid: &Arc<AnnulusGrid>, params: &MaterialParams, sign: i8) -> State {
    let s = params.s_plus();
    let q2 = if sign < 0 { -s / 2.0 } else { s / 2.0 };
    with_boundary(grid, params, System::Full, |_, _| [0.0, q2, -s / 6.0, 0.0, 0.0])
}

/// In-plane director at angle `θ = ±π(t + 1)/2` with `t = y` (`axis = 1`)
/// or `θ = π/2 ± π(x + 1)/2` (`axis = 0`): it turns by `π` between two
/// opposite edges and matches the edge data at their midpoints.
pub fn ic_rotated(grid: &Arc<AnnulusGrid>, params: &MaterialParams, axis: u8, sign: i8) -> State {
    let s = params.s_plus();
    let sg = if sign < 0 { -1.0 } else { 1.0 };
    with_boundary(grid, params, System::Full, |x, y| {
        let theta = if axis == 1 { sg * PI * (y + 1.0) / 2.0 } else { PI / 2.0 + sg * PI * (x + 1.0) / 2.0 };
        QTensor::uniaxial(s, [theta.cos(), theta.sin(), 0.0]).q
    })
}

/// Half of the WORS cross with one edge layer: the left wedge carries the
/// sign of the top and bottom wedges.
pub fn ic_mixed(grid: &Arc<AnnulusGrid>, params: &MaterialParams) -> State {
    ic_pattern(grid, params, [false, false, false, true])
}

/// Seeded random interior data smoothed by five Jacobi sweeps:
/// `q1` (and `q2` for the full system) uniform in `[−s₊, s₊]`, `q3` in
/// `[−s₊/3, s₊/3]`, `q4 = q5 = 0`.
pub fn ic_random(grid: &Arc<AnnulusGrid>, params: &MaterialParams, system: System, seed: u64) -> State {
    let s = params.s_plus();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranges = [s, s, s / 3.0, 0.0, 0.0];
    let comps = system.components();
    let mut state = State::zeros(grid, system);
    for (k, &a) in comps.iter().enumerate() {
        let vals = state.fields_mut()[k].values_mut();
        for &idx in grid.interior() {
            vals[idx] = if ranges[a] > 0.0 { rng.random_range(-ranges[a]..ranges[a]) } else { 0.0 };
        }
    }
    state.impose_boundary(&dirichlet_values(grid, params));
    jacobi_smooth(&mut state, 5);
    state
}

/// Jacobi sweeps for the Laplace equation on Interior nodes.
pub fn jacobi_smooth(state: &mut State, sweeps: usize) {
    let grid = state.grid().clone();
    for f in state.fields_mut() {
        for _ in 0..sweeps {
            let old = f.values().to_vec();
            let vals = f.values_mut();
            for &idx in grid.interior() {
                let [e, w, n, s] = grid.neighbours(idx);
                vals[idx] = 0.25 * (old[e] + old[w] + old[n] + old[s]);
            }
        }
    }
}

/// Add seeded uniform noise of the given amplitude to Interior nodes.
pub fn perturb(state: &State, amplitude: f64, seed: u64) -> State {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = state.clone();
    let grid = state.grid().clone();
    for f in out.fields_mut() {
        let vals = f.values_mut();
        for &idx in grid.interior() {
            vals[idx] += amplitude * rng.random_range(-1.0..1.0);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Wors,
    Bd,
    Mixed,
    Escaped,
    Other,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Label::Wors => "WORS",
            Label::Bd => "BD",
            Label::Mixed => "MIXED",
            Label::Escaped => "ESCAPED",
            Label::Other => "OTHER",
        };
        f.write_str(s)
    }
}

/// Thresholds used by `classify`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyConfig {
    /// ESCAPED once `max(|q4|, |q5|)` exceeds this multiple of `s₊`.
    pub escape_threshold: f64,
    /// A BD needs at least this fraction of Interior nodes with the bulk sign.
    pub bd_sign_fraction: f64,
    /// WORS needs mean `|q1|` on the diagonals below this multiple of `s₊`.
    pub wors_diagonal: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self { escape_threshold: 1e-3, bd_sign_fraction: 0.75, wors_diagonal: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyInfo {
    pub label: Label,
    /// `+1` when `q1 > 0` fills the bulk, `−1` when `q1 < 0` does.
    pub bd_orientation: Option<i8>,
    /// Wedges (top, right, bottom, left) whose majority sign of `q1`
    /// disagrees with the adjacent edge data.
    pub flipped_wedges: [bool; 4],
    /// Fraction of Interior nodes where `q1` has the majority sign.
    pub sign_fraction: f64,
    pub diagonal_mean_abs_q1: f64,
    pub max_q45: f64,
    pub max_q3: f64,
}

pub fn classify(state: &State, params: &MaterialParams) -> ClassifyInfo {
    classify_with(state, params, &ClassifyConfig::default())
}

pub fn classify_with(state: &State, params: &MaterialParams, cc: &ClassifyConfig) -> ClassifyInfo {
    let s = params.s_plus();
    let grid = state.grid();
    let q1 = state.q1().values();
    let max_q45 = [3usize, 4].iter().filter_map(|&a| state.component(a)).map(|f| f.max_abs()).fold(0.0, f64::max);
    let max_q3 = state.q3().values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // wedge order: top (+), right (−), bottom (+), left (−)
    let edge_sign = [1.0, -1.0, 1.0, -1.0];
    let mut agree = [0usize; 4];
    let mut count = [0usize; 4];
    let mut pos = 0usize;
    let mut diag_sum = 0.0;
    let mut diag_n = 0usize;
    let c = grid.spec().center();
    for &idx in grid.interior() {
        let (i, j) = grid.ij(idx);
        let (di, dj) = (i as i64 - c as i64, j as i64 - c as i64);
        if q1[idx] > 0.0 {
            pos += 1;
        }
        if di.abs() == dj.abs() {
            diag_sum += q1[idx].abs();
            diag_n += 1;
            continue;
        }
        let w = if dj.abs() > di.abs() {
            if dj > 0 {
                0
            } else {
                2
            }
        } else if di > 0 {
            1
        } else {
            3
        };
        count[w] += 1;
        if q1[idx] * edge_sign[w] > 0.0 {
            agree[w] += 1;
        }
    }
    let flipped: [bool; 4] = std::array::from_fn(|w| 2 * agree[w] < count[w]);
    let n_int = grid.n_interior().max(1);
    let frac_pos = pos as f64 / n_int as f64;
    let sign_fraction = frac_pos.max(1.0 - frac_pos);
    let diagonal_mean_abs_q1 = if diag_n > 0 { diag_sum / diag_n as f64 } else { 0.0 };
    let n_flip = flipped.iter().filter(|&&b| b).count();
    let mut bd_orientation = None;
    let max_q2 = state.component(1).map(|f| f.max_abs()).unwrap_or(0.0);
    let label = if max_q45 > cc.escape_threshold * s {
        Label::Escaped
    } else if max_q2 > cc.escape_threshold * s {
        // the eigenframe turns in the plane: none of the constant-frame types
        Label::Other
    } else {
        match n_flip {
            0 if diagonal_mean_abs_q1 < cc.wors_diagonal * s => Label::Wors,
            1 => Label::Mixed,
            2 if flipped[0] == flipped[2] && sign_fraction >= cc.bd_sign_fraction => {
                bd_orientation = Some(if flipped[1] { 1 } else { -1 });
                Label::Bd
            }
            _ => Label::Other,
        }
    };
    ClassifyInfo {
        label,
        bd_orientation,
        flipped_wedges: flipped,
        sign_fraction,
        diagonal_mean_abs_q1,
        max_q45,
        max_q3,
    }
}

#[derive(Debug, Clone)]
pub struct SolutionRecord {
    pub state: State,
    pub residual: f64,
    pub energy: f64,
    pub label: Label,
    pub info: ClassifyInfo,
    pub symmetry_class: Option<usize>,
    pub iterations: usize,
    pub start: String,
}

impl SolutionRecord {
    pub fn from_state(state: State, params: &MaterialParams, iterations: usize, start: &str) -> Self {
        let info = classify(&state, params);
        Self {
            residual: residual_max(&state, params),
            energy: energy(&state, params).total,
            label: info.label,
            info,
            symmetry_class: None,
            iterations,
            state,
            start: start.to_string(),
        }
    }
}

/// Search options for `deflation_campaign`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignOptions {
    /// Stop after this many distinct solutions.
    pub max_solutions: usize,
    /// Newton iteration cap for deflated solves.
    pub max_iter: usize,
    /// Deflate against every symmetric image of each solution found, so
    /// repeated solves land in new symmetry classes.
    pub deflate_orbits: bool,
    /// Rounds of restarts from midpoints `(u_i + u_j)/2` of solutions found
    /// so far; saddles between two minima are often reached this way.
    pub midpoint_rounds: usize,
}

impl Default for CampaignOptions {
    fn default() -> Self {
        Self { max_solutions: 64, max_iter: 100, deflate_orbits: false, midpoint_rounds: 1 }
    }
}

fn midpoint(a: &State, b: &State) -> State {
    let mut m = a.clone();
    for (f, g) in m.fields_mut().iter_mut().zip(b.fields()) {
        for (x, y) in f.values_mut().iter_mut().zip(g.values()) {
            *x = 0.5 * (*x + y);
        }
    }
    m
}

struct Campaign<'a> {
    params: &'a MaterialParams,
    cfg: &'a SolverConfig,
    opts: &'a CampaignOptions,
    ops: Vec<SymmetryOp>,
    radius: f64,
    found: Vec<SolutionRecord>,
    deflate: Vec<State>,
}

impl Campaign<'_> {
    fn full(&self) -> bool {
        self.found.len() >= self.opts.max_solutions
    }

    /// Deflated Newton from `start` until it fails; returns the number of
    /// new solutions.
    fn exhaust(&mut self, name: &str, start: &State, symmetry: &[SymmetryOp]) -> Result<usize> {
        let mut new = 0;
        while !self.full() {
            // inside a fixed-point subspace only invariant states are reachable,
            // so deflating the others would only distort the search
            let deflate = self
                .deflate
                .iter()
                .filter(|d| symmetry.iter().all(|op| op.act(d).l2_distance(d) <= self.radius))
                .cloned()
                .collect();
            let nopts = NewtonOptions { deflate, symmetry: symmetry.to_vec(), max_iter: Some(self.opts.max_iter) };
            match newton_solve(start, self.params, self.cfg, &nopts) {
                Ok(rep) => {
                    if self.found.iter().any(|r| r.state.l2_distance(&rep.state) <= self.radius) {
                        break;
                    }
                    log::info!("start {name}: new solution after {} iterations", rep.iterations);
                    if self.opts.deflate_orbits {
                        for op in &self.ops {
                            let img = op.act(&rep.state);
                            if self.deflate.iter().all(|d| d.l2_distance(&img) > self.radius) {
                                self.deflate.push(img);
                            }
                        }
                    } else {
                        self.deflate.push(rep.state.clone());
                    }
                    self.found.push(SolutionRecord::from_state(rep.state, self.params, rep.iterations, name));
                    new += 1;
                }
                Err(Error::NoConvergence { reason, iterations, .. }) => {
                    log::debug!("start {name}: {reason} after {iterations} iterations");
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(new)
    }
}

/// Run deflated Newton repeatedly from every start until it fails, keeping
/// each converged solution and deflating it out of later solves; then
/// restart from midpoints of the solutions found.
pub fn deflation_campaign(
    starts: &[(String, State)],
    params: &MaterialParams,
    cfg: &SolverConfig,
    opts: &CampaignOptions,
) -> Result<Vec<SolutionRecord>> {
    let Some((_, first)) = starts.first() else {
        return Ok(Vec::new());
    };
    let mut c = Campaign {
        params,
        cfg,
        opts,
        ops: group_for(first.system()),
        radius: cfg.deflation_radius(params, first.grid()),
        found: Vec::new(),
        deflate: Vec::new(),
    };
    for (name, start) in starts {
        c.exhaust(name, start, &[])?;
    }
    let mut done = 0;
    for _ in 0..opts.midpoint_rounds {
        let n = c.found.len();
        let mut new = 0;
        for j in done.max(1)..n {
            for i in 0..j {
                let start = midpoint(&c.found[i].state, &c.found[j].state);
                let name = format!("mid({i},{j})");
                // within the midpoint's own symmetry first, then unconstrained
                let fix = stabilizer(&start, &c.ops, 1e-12 * (1.0 + c.radius));
                if fix.len() > 1 {
                    new += c.exhaust(&format!("{name}/sym{}", fix.len()), &start, &fix)?;
                }
                new += c.exhaust(&name, &start, &[])?;
            }
        }
        done = n;
        if new == 0 {
            break;
        }
    }
    Ok(c.found)
}

/// The sixteen wedge sign patterns, both constant BD fills, for the full
/// system the diagonal and rotated fills, then `n_random` seeded random
/// starts.
pub fn campaign_starts(
    grid: &Arc<AnnulusGrid>,
    params: &MaterialParams,
    system: System,
    n_random: usize,
    seed: u64,
) -> Vec<(String, State)> {
    let lift = |s: State| if system == System::Full { s.to_full() } else { s };
    let mut v = Vec::new();
    for bits in 0..16u8 {
        let flipped = std::array::from_fn(|w| bits >> w & 1 == 1);
        v.push((format!("pattern{bits:04b}"), lift(ic_pattern(grid, params, flipped))));
    }
    v.push(("bd+".to_string(), lift(ic_bd(grid, params, 1))));
    v.push(("bd-".to_string(), lift(ic_bd(grid, params, -1))));
    if system == System::Full {
        for sign in [1, -1] {
            let tag = if sign > 0 { '+' } else { '-' };
            v.push((format!("diag{tag}"), ic_diagonal(grid, params, sign)));
            v.push((format!("rot-x{tag}"), ic_rotated(grid, params, 0, sign)));
            v.push((format!("rot-y{tag}"), ic_rotated(grid, params, 1, sign)));
        }
    }
    for k in 0..n_random {
        let sd = seed.wrapping_add(k as u64);
        v.push((format!("random{sd}"), ic_random(grid, params, system, sd)));
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use approx::assert_relative_eq;

    fn params() -> MaterialParams {
        MaterialParams::reference()
    }

    fn random_interior(system: System, seed: u64, n: usize) -> State {
        let g = build_grid(n, 0.25, 4.0).unwrap();
        let p = params();
        let mut s = perturb(&ic_random(&g, &p, system, seed), 0.3, seed + 7);
        if system == System::Full {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 99);
            for k in [3, 4] {
                let vals = s.fields_mut()[k].values_mut();
                for &idx in g.interior() {
                    vals[idx] = rng.random_range(-0.5..0.5);
                }
            }
        }
        s
    }

    #[test]
    fn reduced_residual_matches_explicit_formula() {
        let p = params();
        let s = random_interior(System::Reduced, 1, 17);
        let (r1, r3) = residual_reduced(&s, &p).unwrap();
        let (a, b, c, l2) = (p.a(), p.b(), p.c(), p.lambda_bar_sq());
        let l1 = apply_laplacian(s.q1());
        let l3 = apply_laplacian(s.q3());
        for &idx in s.grid().interior() {
            let (q1, q3) = (s.q1().values()[idx], s.q3().values()[idx]);
            let t = q1 * q1 + 3.0 * q3 * q3;
            let e1 = l1.values()[idx] - l2 * (a / (2.0 * c) * q1 + b / c * q1 * q3 + t * q1);
            let e3 = l3.values()[idx] - l2 * (a / (2.0 * c) * q3 + b / (2.0 * c) * (q1 * q1 / 3.0 - q3 * q3) + t * q3);
            assert_relative_eq!(r1.values()[idx], e1, max_relative = 1e-12, epsilon = 1e-9);
            assert_relative_eq!(r3.values()[idx], e3, max_relative = 1e-12, epsilon = 1e-9);
        }
    }

    #[test]
    fn full_residual_matches_tensor_form() {
        let p = params();
        let s = random_interior(System::Full, 2, 17);
        let r = residual_full(&s, &p).unwrap();
        let lap: Vec<ScalarField> = s.fields().iter().map(apply_laplacian).collect();
        let k = p.bulk_prefactor();
        for &idx in s.grid().interior() {
            let q = QTensor::new(s.node_q(idx)).matrix();
            let t2 = (q * q).trace();
            let rhs = (q * p.a() - (q * q - nalgebra::Matrix3::identity() * (t2 / 3.0)) * p.b() + q * (p.c() * t2)) * k;
            let lq = QTensor::new(std::array::from_fn(|a| lap[a].values()[idx])).matrix();
            let res = lq - rhs;
            for a in 0..5 {
                let mut e = [0.0; 5];
                e[a] = 1.0;
                let want = res.component_mul(&QTensor::new(e).matrix()).sum() / BASIS_NORM_SQ[a];
                let got = r[a].values()[idx];
                assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "a={a} {got} {want}");
            }
        }
    }

    #[test]
    fn embedded_reduced_residual_is_consistent() {
        let p = params();
        let s = random_interior(System::Reduced, 3, 17);
        let (r1, r3) = residual_reduced(&s, &p).unwrap();
        let rf = residual_full(&s.to_full(), &p).unwrap();
        assert_eq!(rf[0].values(), r1.values());
        assert_eq!(rf[2].values(), r3.values());
        for a in [1, 3, 4] {
            assert_eq!(rf[a].max_abs(), 0.0);
        }
    }

    #[test]
    fn trivial_residual_examples() {
        let p = params();
        let g = build_grid(17, 0.25, 4.0).unwrap();
        assert_eq!(residual_max(&State::zeros(&g, System::Reduced), &p), 0.0);
        assert_eq!(residual_max(&State::zeros(&g, System::Full), &p), 0.0);
        let w = p.wells().p2;
        let s = State::reduced(ScalarField::from_fn(&g, |_, _| w.q1), ScalarField::from_fn(&g, |_, _| w.q3)).unwrap();
        assert!(residual_max(&s, &p) < 1e-9);
    }

    #[test]
    fn residual_is_scaled_energy_gradient() {
        // ∂E/∂q_a at an Interior node equals −|E_a|² h² R_a
        let p = params();
        for system in [System::Reduced, System::Full] {
            let s = random_interior(system, 4, 13);
            let g = s.grid().clone();
            let r = residual(&s, &p);
            let h2 = g.h() * g.h();
            for &idx in g.interior().iter().step_by(7) {
                for (k, &a) in system.components().iter().enumerate() {
                    let e = 1e-6;
                    let mut sp = s.clone();
                    sp.fields_mut()[k].values_mut()[idx] += e;
                    let mut sm = s.clone();
                    sm.fields_mut()[k].values_mut()[idx] -= e;
                    let fd = (energy(&sp, &p).total - energy(&sm, &p).total) / (2.0 * e);
                    let an = -BASIS_NORM_SQ[a] * h2 * r[k].values()[idx];
                    assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "{system:?} a={a}: {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn jacobian_matches_residual_differences() {
        let p = params();
        for system in [System::Reduced, System::Full] {
            let s = random_interior(system, 5, 11);
            let nf = system.n_fields();
            let comps = system.components();
            let a = assemble(s.grid().n_interior() * nf, &jacobian_triplets(&s, &p)).unwrap();
            let u0 = s.unknowns();
            let mut dir = vec![0.0; u0.len()];
            for (j, d) in dir.iter_mut().enumerate() {
                *d = ((j * 31 % 17) as f64 - 8.0) / 8.0;
            }
            let jd = crate::linsolve::matvec(&a, &dir);
            let e = 1e-6;
            let mut sp = s.clone();
            sp.set_unknowns(&u0.iter().zip(&dir).map(|(u, d)| u + e * d).collect::<Vec<_>>());
            let mut sm = s.clone();
            sm.set_unknowns(&u0.iter().zip(&dir).map(|(u, d)| u - e * d).collect::<Vec<_>>());
            let rp = residual_vec(&sp, &p);
            let rm = residual_vec(&sm, &p);
            for j in 0..u0.len() {
                let fd = BASIS_NORM_SQ[comps[j % nf]] * (rp[j] - rm[j]) / (2.0 * e);
                assert!((fd - jd[j]).abs() <= 1e-5 * jd[j].abs().max(1.0), "{fd} vs {}", jd[j]);
            }
        }
    }

    #[test]
    fn deflation_derivative_matches_differences() {
        let cfg = SolverConfig::default();
        let s = random_interior(System::Reduced, 6, 13);
        let k1 = random_interior(System::Reduced, 7, 13);
        let k2 = random_interior(System::Reduced, 8, 13);
        let known = vec![k1, k2];
        let d = Deflation::new(&known, s.grid(), 2, &cfg);
        let u0 = s.unknowns();
        let dir: Vec<f64> = (0..u0.len()).map(|j| ((j * 13 % 7) as f64 - 3.0) / 3.0).collect();
        let e = 1e-6;
        let shift = |sgn: f64| {
            let mut t = s.clone();
            t.set_unknowns(&u0.iter().zip(&dir).map(|(u, v)| u + sgn * e * v).collect::<Vec<_>>());
            d.value(&t)
        };
        let fd = (shift(1.0) - shift(-1.0)) / (2.0 * e) / d.value(&s);
        let an = d.log_derivative(&s, &dir);
        assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{fd} vs {an}");
    }

    #[test]
    fn ic_examples() {
        let p = params();
        let s = p.s_plus();
        let g = build_grid(129, 0.2, 4.0).unwrap();
        let at = |st: &State, x: f64, y: f64, a: usize| {
            let i = ((x + 1.0) / g.h()).round() as usize;
            let j = ((y + 1.0) / g.h()).round() as usize;
            st.node_q(g.idx(i, j))[a]
        };
        let w = ic_wors(&g, &p);
        assert_eq!(at(&w, 0.0, 0.5, 0), s / 2.0);
        assert_eq!(at(&w, 0.5, 0.0, 0), -s / 2.0);
        assert_eq!(at(&w, 0.3125, 0.3125, 0), 0.0);
        assert_eq!(at(&w, 0.3125, 0.3125, 2), -s / 6.0);
        let bp = ic_bd(&g, &p, 1);
        let bm = ic_bd(&g, &p, -1);
        assert_eq!(at(&bp, 0.0, 0.5, 0), s / 2.0);
        assert_eq!(at(&bm, 0.0, 0.5, 0), -s / 2.0);
        let bd = dirichlet_values(&g, &p);
        assert_eq!(bp.boundary_mismatch(&bd), 0);
        assert_eq!(bm.boundary_mismatch(&bd), 0);
        let e = ic_esc(&g, &p, 0.96 - g.spec().rho_snapped).unwrap();
        let k = g.spec().k;
        let c = g.spec().center();
        let near = g.idx(c + k + 1, c);
        assert_eq!((e.node_q(near)[0], e.node_q(near)[2]), (0.0, s / 3.0));
        assert_eq!(at(&e, 0.0, 0.984375, 0), s / 2.0);
        assert_eq!(ic_esc(&g, &p, 0.0).unwrap(), w);
        assert!(ic_esc(&g, &p, 0.9).is_err());
    }

    #[test]
    fn escaped_ic_examples() {
        let p = params();
        let s = p.s_plus();
        let g = build_grid(65, 0.25, 4.0).unwrap();
        let plus = ic_escaped(&g, &p, 1);
        let minus = ic_escaped(&g, &p, -1);
        let c = g.spec().center();
        let k = g.spec().k;
        let near = plus.node_q(g.idx(c + k + 1, c));
        assert!(near[0].abs() < 0.05 * s && near[1].abs() < 0.05 * s);
        assert!((near[2] - s / 3.0).abs() < 0.05 * s);
        assert!(near[3].abs().max(near[4].abs()) < 0.2 * s);
        let bd = dirichlet_values(&g, &p);
        assert_eq!(plus.boundary_mismatch(&bd), 0);
        // outer ring just inside the boundary is close to the edge data
        let edge = plus.node_q(g.idx(c, 63));
        assert!((edge[0] - s / 2.0).abs() < 0.05 * s);
        // reversing the winding flips q5 and leaves q4 unchanged
        for &idx in g.interior() {
            let (a, b) = (plus.node_q(idx), minus.node_q(idx));
            assert_relative_eq!(a[4], -b[4], epsilon = 1e-12);
            assert_relative_eq!(a[3], b[3], epsilon = 1e-12);
        }
    }

    #[test]
    fn flow_energy_decreases_and_relaxes() {
        let p = params();
        let g = build_grid(33, 0.3, 4.0).unwrap();
        let cfg = SolverConfig { t_end: 0.05, flow_sample_every: 1, ..Default::default() };
        let out = gradient_flow(&ic_wors(&g, &p), &p, &cfg).unwrap();
        for w in out.energies.windows(2) {
            assert!(w[1].1 <= w[0].1 * (1.0 + 1e-8) + 1e-12, "{:?}", w);
        }
        assert_eq!(out.state.boundary_mismatch(&dirichlet_values(&g, &p)), 0);
    }

    #[test]
    fn newton_converges_quadratically_to_symmetric_wors() {
        let p = params();
        let g = build_grid(33, 0.4, 4.0).unwrap();
        let cfg = SolverConfig::default();
        let rep = newton_solve(&ic_wors(&g, &p), &p, &cfg, &NewtonOptions::symmetric(System::Reduced)).unwrap();
        assert!(rep.residual <= cfg.newton_tol(&p));
        let t = &rep.trace;
        let n = t.len();
        assert!(n >= 3);
        for k in n.saturating_sub(3)..n - 1 {
            assert!(t[k + 1] <= 0.5 * t[k], "{t:?}");
        }
        let info = classify(&rep.state, &p);
        assert_eq!(info.label, Label::Wors);
        // q1(x, y) = −q1(y, x), q3(x, y) = q3(y, x)
        let s = &rep.state;
        for j in 0..g.n() {
            for i in 0..g.n() {
                let (a, b) = (g.idx(i, j), g.idx(j, i));
                assert!((s.q1().values()[a] + s.q1().values()[b]).abs() < 1e-8);
                assert!((s.q3().values()[a] - s.q3().values()[b]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn deflation_finds_a_second_solution_far_from_the_first() {
        let p = params();
        let g = build_grid(33, 0.2, 4.0).unwrap();
        let cfg = SolverConfig::default();
        let first = newton_solve(&ic_bd(&g, &p, 1), &p, &cfg, &NewtonOptions::default()).unwrap();
        let opts = NewtonOptions { deflate: vec![first.state.clone()], ..Default::default() };
        if let Ok(second) = newton_solve(&ic_bd(&g, &p, 1), &p, &cfg, &opts) {
            assert!(second.state.l2_distance(&first.state) > cfg.deflation_radius(&p, &g));
            assert!(second.residual <= cfg.newton_tol(&p));
        }
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig { dt: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { backtrack_factor: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}

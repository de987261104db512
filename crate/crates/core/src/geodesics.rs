//! Geodesic distances for the degenerate metric `F^{1/2}|dq|` on the
//! `(q1, q3)` plane, and the four transition costs between the critical
//! points of `F`.
//!
//! A path is a polyline with fixed endpoints. Its discrete energy is
//! `M Σ_k F(m_k)|Δq_k|²` over the `M` segments (`m_k` the segment
//! midpoint), whose minimum is the squared distance. The energy form is
//! smooth at the wells where the length form is not. It is minimized by
//! Newton steps with Levenberg damping; the Hessian is block tridiagonal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gamma::{ratios, Ratios};
use crate::ldg::{reduced_potential, reduced_potential_grad, reduced_potential_hessian, MaterialParams, ReducedPoint};
use crate::linsolve::{assemble, SymmetricSolver};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeodesicConfig {
    /// Number of path nodes including both endpoints.
    pub n_path: usize,
    /// Stop once the max-norm path gradient falls below this fraction of
    /// its initial value.
    pub grad_tol_rel: f64,
    pub max_iter: usize,
}

impl Default for GeodesicConfig {
    fn default() -> Self {
        Self { n_path: 401, grad_tol_rel: 1e-10, max_iter: 500 }
    }
}

impl GeodesicConfig {
    pub fn with_nodes(n_path: usize) -> Self {
        Self { n_path, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPolyline {
    pub nodes: Vec<ReducedPoint>,
}

impl PathPolyline {
    pub fn straight(a: ReducedPoint, b: ReducedPoint, n: usize) -> Self {
        let m = (n - 1) as f64;
        Self {
            nodes: (0..n)
                .map(|k| {
                    let t = k as f64 / m;
                    ReducedPoint::new(a.q1 + t * (b.q1 - a.q1), a.q3 + t * (b.q3 - a.q3))
                })
                .collect(),
        }
    }

    /// Straight segment pushed sideways by `bulge·sin(πt)` in `q3`.
    pub fn arc(a: ReducedPoint, b: ReducedPoint, n: usize, bulge: f64) -> Self {
        let mut p = Self::straight(a, b, n);
        let m = (n - 1) as f64;
        for (k, node) in p.nodes.iter_mut().enumerate() {
            node.q3 += bulge * (std::f64::consts::PI * k as f64 / m).sin();
        }
        p
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn segments(&self) -> f64 {
        (self.nodes.len() - 1) as f64
    }

    /// `M Σ F(m_k)|Δq_k|²`.
    pub fn energy(&self, params: &MaterialParams) -> f64 {
        let m = self.segments();
        m * self
            .nodes
            .windows(2)
            .map(|w| {
                let (mid, d) = mid_diff(w[0], w[1]);
                reduced_potential(mid, params) * (d[0] * d[0] + d[1] * d[1])
            })
            .sum::<f64>()
    }

    /// Riemannian length `Σ F^{1/2}(m_k)|Δq_k|`.
    pub fn length(&self, params: &MaterialParams) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| {
                let (mid, _) = mid_diff(w[0], w[1]);
                reduced_potential(mid, params).max(0.0).sqrt() * w[0].dist(&w[1])
            })
            .sum()
    }

    /// Gradient of `energy` with respect to the interior nodes, packed
    /// `(q1, q3)` per node.
    pub fn gradient(&self, params: &MaterialParams) -> Vec<f64> {
        let n = self.nodes.len();
        let m = self.segments();
        let mut g = vec![0.0; 2 * n.saturating_sub(2)];
        for k in 0..n - 1 {
            let (mid, d) = mid_diff(self.nodes[k], self.nodes[k + 1]);
            let f = reduced_potential(mid, params);
            let (g1, g3) = reduced_potential_grad(mid, params);
            let dd = d[0] * d[0] + d[1] * d[1];
            let half = [0.5 * g1 * dd, 0.5 * g3 * dd];
            for c in 0..2 {
                if k >= 1 {
                    g[2 * (k - 1) + c] += m * (half[c] - 2.0 * f * d[c]);
                }
                if k + 1 <= n - 2 {
                    g[2 * k + c] += m * (half[c] + 2.0 * f * d[c]);
                }
            }
        }
        g
    }

    fn hessian_triplets(&self, params: &MaterialParams) -> Vec<(usize, usize, f64)> {
        let n = self.nodes.len();
        let m = self.segments();
        let mut t = Vec::with_capacity(16 * n);
        for k in 0..n - 1 {
            let (mid, d) = mid_diff(self.nodes[k], self.nodes[k + 1]);
            let f = reduced_potential(mid, params);
            let (g1, g3) = reduced_potential_grad(mid, params);
            let g = [g1, g3];
            let h = reduced_potential_hessian(mid, params);
            let dd = d[0] * d[0] + d[1] * d[1];
            // blocks of the segment energy in (a, b) = (node k, node k+1)
            let mut aa = [[0.0; 2]; 2];
            let mut ab = [[0.0; 2]; 2];
            let mut bb = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    let id = if i == j { 2.0 * f } else { 0.0 };
                    let base = 0.25 * dd * h[i][j];
                    aa[i][j] = m * (base - g[i] * d[j] - d[i] * g[j] + id);
                    ab[i][j] = m * (base + g[i] * d[j] - d[i] * g[j] - id);
                    bb[i][j] = m * (base + g[i] * d[j] + d[i] * g[j] + id);
                }
            }
            let a = (k >= 1).then(|| 2 * (k - 1));
            let b = (k + 1 <= n - 2).then(|| 2 * k);
            for i in 0..2 {
                for j in 0..2 {
                    if let Some(a) = a {
                        t.push((a + i, a + j, aa[i][j]));
                    }
                    if let Some(b) = b {
                        t.push((b + i, b + j, bb[i][j]));
                    }
                    if let (Some(a), Some(b)) = (a, b) {
                        t.push((a + i, b + j, ab[i][j]));
                        t.push((b + j, a + i, ab[i][j]));
                    }
                }
            }
        }
        t
    }

    fn shifted(&self, step: &[f64]) -> Self {
        let mut p = self.clone();
        let n = p.nodes.len();
        for k in 1..n - 1 {
            p.nodes[k].q1 += step[2 * (k - 1)];
            p.nodes[k].q3 += step[2 * (k - 1) + 1];
        }
        p
    }
}

fn mid_diff(a: ReducedPoint, b: ReducedPoint) -> (ReducedPoint, [f64; 2]) {
    (ReducedPoint::new(0.5 * (a.q1 + b.q1), 0.5 * (a.q3 + b.q3)), [b.q1 - a.q1, b.q3 - a.q3])
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geodesic {
    /// `√(min energy)`.
    pub distance: f64,
    pub path: PathPolyline,
    /// Riemannian length of the optimal polyline.
    pub length: f64,
    pub iterations: usize,
    /// False when the optimizer stagnated before the gradient criterion.
    pub certified: bool,
}

/// Minimize the path energy from `init`, endpoints held fixed.
pub fn relax_path(init: PathPolyline, params: &MaterialParams, cfg: &GeodesicConfig) -> Result<Geodesic> {
    if init.len() < 2 {
        return Err(Error::Domain(format!("a path needs at least 2 nodes, got {}", init.len())));
    }
    let mut path = init;
    let dim = 2 * (path.len() - 2);
    let mut e = path.energy(params);
    let mut g = path.gradient(params);
    let g0 = max_abs(&g);
    let target = cfg.grad_tol_rel * g0;
    let mut solver = SymmetricSolver::new();
    let mut mu = 0.0;
    let mut iterations = 0;
    let mut certified = g0 == 0.0;
    while !certified && iterations < cfg.max_iter {
        iterations += 1;
        let trip = path.hessian_triplets(params);
        let scale = trip.iter().filter(|t| t.0 == t.1).fold(0.0f64, |m, t| m.max(t.2.abs()));
        if mu == 0.0 {
            mu = 1e-6 * scale;
        }
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut accepted = false;
        while mu <= 1e12 * scale.max(1.0) {
            let mut t = trip.clone();
            t.extend((0..dim).map(|i| (i, i, mu)));
            let step = match solver.factor(assemble(dim, &t)?).and_then(|f| f.solve(&rhs)) {
                Ok(s) => s,
                Err(_) => {
                    mu *= 4.0;
                    continue;
                }
            };
            let trial = path.shifted(&step);
            let et = trial.energy(params);
            if et.is_finite() && et <= e {
                path = trial;
                e = et;
                mu = (mu / 3.0).max(1e-12 * scale);
                accepted = true;
                break;
            }
            mu *= 4.0;
        }
        g = path.gradient(params);
        if max_abs(&g) <= target {
            certified = true;
        } else if !accepted {
            break;
        }
    }
    if !certified {
        log::warn!(
            "geodesic optimizer stopped after {iterations} iterations with gradient {:.3e} (target {:.3e})",
            max_abs(&g),
            target
        );
    }
    Ok(Geodesic { distance: e.max(0.0).sqrt(), length: path.length(params), path, iterations, certified })
}

/// Distance between two points from the straight-segment start.
pub fn geodesic_distance(
    q0: ReducedPoint,
    q1: ReducedPoint,
    params: &MaterialParams,
    cfg: &GeodesicConfig,
) -> Result<Geodesic> {
    relax_path(PathPolyline::straight(q0, q1, cfg.n_path), params, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionCosts {
    /// `d(o, p3)`
    pub c1: f64,
    /// `d(o, p1) = d(o, p2)`
    pub c2: f64,
    /// `d(p1, p3) = d(p2, p3)`
    pub c3: f64,
    /// `d(p1, p2)`
    pub c4: f64,
    pub paths: Option<CostPaths>,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPaths {
    pub o_p3: PathPolyline,
    pub o_p1: PathPolyline,
    pub p1_p3: PathPolyline,
    pub p1_p2: PathPolyline,
}

impl TransitionCosts {
    /// Bare values without paths, e.g. the published ones.
    pub fn from_values(c1: f64, c2: f64, c3: f64, c4: f64) -> Self {
        Self { c1, c2, c3, c4, paths: None, certified: true }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.c1, self.c2, self.c3, self.c4]
    }
}

/// The four costs. `o→p2` and `p2→p3` follow from `q1 ↦ −q1`; `p1→p2`
/// also tries an arc start through `q3 < 0` and keeps the lower value.
pub fn transition_costs(params: &MaterialParams, cfg: &GeodesicConfig) -> Result<TransitionCosts> {
    let w = params.wells();
    let c1 = geodesic_distance(w.origin, w.p3, params, cfg)?;
    let c2 = geodesic_distance(w.origin, w.p1, params, cfg)?;
    let c3 = geodesic_distance(w.p1, w.p3, params, cfg)?;
    let straight = geodesic_distance(w.p1, w.p2, params, cfg)?;
    let arc = relax_path(PathPolyline::arc(w.p1, w.p2, cfg.n_path, -params.s_plus() / 3.0), params, cfg)?;
    let c4 = if arc.distance < straight.distance { arc } else { straight };
    Ok(TransitionCosts {
        c1: c1.distance,
        c2: c2.distance,
        c3: c3.distance,
        c4: c4.distance,
        certified: c1.certified && c2.certified && c3.certified && c4.certified,
        paths: Some(CostPaths { o_p3: c1.path, o_p1: c2.path, p1_p3: c3.path, p1_p2: c4.path }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub t: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub r1: f64,
    pub r2: f64,
}

/// Costs and ratios at `A = tB²/(27C)` for each reduced temperature `t`.
pub fn cost_sweep(base: &MaterialParams, t_values: &[f64], cfg: &GeodesicConfig) -> Result<Vec<CostRow>> {
    t_values
        .iter()
        .map(|&t| {
            let p = MaterialParams::from_reduced_temperature(t, base.b(), base.c(), base.lambda_bar_sq())?;
            let c = transition_costs(&p, cfg)?;
            let Ratios { r1, r2, .. } = ratios(&c);
            Ok(CostRow { t, c1: c.c1, c2: c.c2, c3: c.c3, c4: c.c4, r1, r2 })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coarse() -> GeodesicConfig {
        GeodesicConfig::with_nodes(81)
    }

    #[test]
    fn gradient_and_hessian_match_differences() {
        let p = MaterialParams::reference();
        let w = p.wells();
        let path = PathPolyline::arc(w.origin, w.p1, 9, 0.2);
        let g = path.gradient(&p);
        let t = path.hessian_triplets(&p);
        let dim = g.len();
        let mut h = vec![vec![0.0; dim]; dim];
        for (i, j, v) in t {
            h[i][j] += v;
        }
        let eps = 1e-6;
        for i in 0..dim {
            let mut e = vec![0.0; dim];
            e[i] = eps;
            let up = path.shifted(&e);
            e[i] = -eps;
            let dn = path.shifted(&e);
            let fd = (up.energy(&p) - dn.energy(&p)) / (2.0 * eps);
            assert!((fd - g[i]).abs() <= 1e-5 * (1.0 + g[i].abs()), "g[{i}] {fd} vs {}", g[i]);
            let gu = up.gradient(&p);
            let gd = dn.gradient(&p);
            for j in 0..dim {
                let fd = (gu[j] - gd[j]) / (2.0 * eps);
                assert!((fd - h[j][i]).abs() <= 1e-4 * (1.0 + fd.abs()), "h[{j}][{i}] {fd} vs {}", h[j][i]);
            }
        }
    }

    #[test]
    fn zero_length_path() {
        let p = MaterialParams::reference();
        let w = p.wells();
        let g = geodesic_distance(w.p1, w.p1, &p, &coarse()).unwrap();
        assert_eq!(g.distance, 0.0);
        assert!(g.certified);
        assert!(geodesic_distance(w.p1, w.p2, &p, &GeodesicConfig::with_nodes(1)).is_err());
    }

    #[test]
    fn mirror_paths_agree() {
        let p = MaterialParams::reference();
        let w = p.wells();
        let a = geodesic_distance(w.origin, w.p1, &p, &coarse()).unwrap();
        let b = geodesic_distance(w.origin, w.p2, &p, &coarse()).unwrap();
        assert!(a.certified && b.certified);
        assert!((a.distance - b.distance).abs() <= 1e-6 * a.distance);
        for (x, y) in a.path.nodes.iter().zip(&b.path.nodes) {
            assert!((x.q1 + y.q1).abs() < 1e-8 && (x.q3 - y.q3).abs() < 1e-8);
        }
    }

    #[test]
    fn converged_path_is_a_local_minimum_with_constant_speed() {
        use rand::{RngExt, SeedableRng};
        let p = MaterialParams::reference();
        let w = p.wells();
        let g = geodesic_distance(w.p1, w.p3, &p, &coarse()).unwrap();
        let e = g.path.energy(&p);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let step: Vec<f64> = (0..2 * (g.path.len() - 2)).map(|_| rng.random_range(-1e-4..1e-4)).collect();
            assert!(g.path.shifted(&step).energy(&p) >= e - 1e-10);
        }
        // Cauchy-Schwarz: length ≤ √energy, equal at constant metric speed
        assert!(g.length <= g.distance * (1.0 + 1e-12));
        assert!(g.length >= 0.995 * g.distance);
    }
}

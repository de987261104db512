//! Uniform grid on the square annulus `ρ < max(|x|, |y|) < 1`.
//!
//! Node `(i, j)` sits at `x = −1 + i h`, `y = −1 + j h` and is stored at
//! flat index `j n + i`. Fields keep a slot for every node; hole nodes
//! always hold 0.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ldg::MaterialParams;

/// Default half-width of the outer corner ramp, in units of `h`.
pub const DEFAULT_EPS_CORNER: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub h: f64,
    pub rho_requested: f64,
    pub rho_snapped: f64,
    /// Corner ramp half-width in multiples of `h`.
    pub eps_corner: f64,
    /// `rho_snapped / h`.
    pub k: usize,
}

impl GridSpec {
    pub fn new(n: usize, rho: f64, eps_corner: f64) -> Result<Self> {
        if n < 5 || n % 2 == 0 {
            return Err(Error::Geometry(format!("n must be odd and at least 5, got {n}")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Geometry(format!("rho must lie in (0, 1), got {rho}")));
        }
        if !(eps_corner > 0.0) || !eps_corner.is_finite() {
            return Err(Error::Geometry(format!("eps_corner must be positive, got {eps_corner}")));
        }
        let c = (n - 1) / 2;
        let h = 2.0 / (n - 1) as f64;
        let k = (rho / h).round() as usize;
        if k == 0 {
            return Err(Error::Geometry(format!("rho = {rho} rounds to 0 at n = {n}; need rho >= h/2 = {}", h / 2.0)));
        }
        if k + 1 > c {
            return Err(Error::Geometry(format!(
                "rho = {rho} snaps to {} at n = {n}; need rho_snapped <= 1 - h = {}",
                k as f64 * h,
                1.0 - h
            )));
        }
        Ok(Self { n, h, rho_requested: rho, rho_snapped: k as f64 * h, eps_corner, k })
    }

    pub fn center(&self) -> usize {
        (self.n - 1) / 2
    }

    pub fn eps(&self) -> f64 {
        self.eps_corner * self.h
    }

    pub fn coord(&self, i: usize) -> f64 {
        -1.0 + i as f64 * self.h
    }

    /// Exact area of the annulus.
    pub fn area(&self) -> f64 {
        4.0 - 4.0 * self.rho_snapped * self.rho_snapped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeClass {
    Interior,
    OuterBoundary,
    InnerBoundary,
    Hole,
}

impl NodeClass {
    pub fn is_dirichlet(self) -> bool {
        matches!(self, NodeClass::OuterBoundary | NodeClass::InnerBoundary)
    }
}

/// Grid plus classification, quadrature weights and the unknown numbering.
#[derive(Debug, Clone)]
pub struct AnnulusGrid {
    spec: GridSpec,
    class: Vec<NodeClass>,
    weight: Vec<f64>,
    interior: Vec<usize>,
    unknown: Vec<usize>,
    edges: Vec<(usize, usize, f64)>,
}

pub const NOT_UNKNOWN: usize = usize::MAX;

impl AnnulusGrid {
    pub fn new(spec: GridSpec) -> Self {
        let n = spec.n;
        let c = spec.center() as i64;
        let k = spec.k as i64;
        let mut class = vec![NodeClass::Hole; n * n];
        for j in 0..n {
            for i in 0..n {
                let m = (i as i64 - c).abs().max((j as i64 - c).abs());
                class[j * n + i] = if m < k {
                    NodeClass::Hole
                } else if m == k {
                    NodeClass::InnerBoundary
                } else if m == c {
                    NodeClass::OuterBoundary
                } else {
                    NodeClass::Interior
                };
            }
        }
        // cell (i, j) spans nodes i..=i+1, j..=j+1; it lies in the annulus
        // when its centre does
        let two_k = 2 * k;
        let cell_in = |i: usize, j: usize| {
            let a = (2 * i as i64 + 2 - n as i64).abs();
            let b = (2 * j as i64 + 2 - n as i64).abs();
            a.max(b) > two_k
        };
        let h2 = spec.h * spec.h;
        let mut weight = vec![0.0; n * n];
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                if cell_in(i, j) {
                    for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        weight[(j + dj) * n + i + di] += 0.25 * h2;
                    }
                }
            }
        }
        let mut edges = Vec::new();
        for j in 0..n {
            for i in 0..n {
                // horizontal edge to (i+1, j): cells (i, j-1) and (i, j)
                if i + 1 < n {
                    let mut cnt = 0;
                    if j > 0 && cell_in(i, j - 1) {
                        cnt += 1;
                    }
                    if j + 1 < n && cell_in(i, j) {
                        cnt += 1;
                    }
                    if cnt > 0 {
                        edges.push((j * n + i, j * n + i + 1, 0.5 * cnt as f64));
                    }
                }
                if j + 1 < n {
                    let mut cnt = 0;
                    if i > 0 && cell_in(i - 1, j) {
                        cnt += 1;
                    }
                    if i + 1 < n && cell_in(i, j) {
                        cnt += 1;
                    }
                    if cnt > 0 {
                        edges.push((j * n + i, (j + 1) * n + i, 0.5 * cnt as f64));
                    }
                }
            }
        }
        let mut interior = Vec::new();
        let mut unknown = vec![NOT_UNKNOWN; n * n];
        for (idx, cl) in class.iter().enumerate() {
            if *cl == NodeClass::Interior {
                unknown[idx] = interior.len();
                interior.push(idx);
            }
        }
        Self { spec, class, weight, interior, unknown, edges }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }
    pub fn n(&self) -> usize {
        self.spec.n
    }
    pub fn h(&self) -> f64 {
        self.spec.h
    }
    pub fn len(&self) -> usize {
        self.spec.n * self.spec.n
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn class(&self, idx: usize) -> NodeClass {
        self.class[idx]
    }
    pub fn classes(&self) -> &[NodeClass] {
        &self.class
    }
    /// Trapezoidal quadrature weight of each node (0 in the hole).
    pub fn weights(&self) -> &[f64] {
        &self.weight
    }
    /// Flat indices of Interior nodes in unknown order.
    pub fn interior(&self) -> &[usize] {
        &self.interior
    }
    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }
    /// Unknown number of a node, or `NOT_UNKNOWN`.
    pub fn unknown_index(&self, idx: usize) -> usize {
        self.unknown[idx]
    }
    /// Grid edges between non-hole nodes with their Dirichlet-energy weight
    /// (1 inside the annulus, 1/2 along its boundary).
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.spec.n + i
    }
    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.spec.n, idx / self.spec.n)
    }
    pub fn xy(&self, idx: usize) -> (f64, f64) {
        let (i, j) = self.ij(idx);
        (self.spec.coord(i), self.spec.coord(j))
    }
    /// Neighbours east, west, north, south; only valid for Interior nodes.
    pub fn neighbours(&self, idx: usize) -> [usize; 4] {
        let n = self.spec.n;
        [idx + 1, idx - 1, idx + n, idx - n]
    }
    /// Chebyshev distance of a node from the centre in grid units.
    pub fn ring(&self, idx: usize) -> usize {
        let (i, j) = self.ij(idx);
        let c = self.spec.center();
        i.abs_diff(c).max(j.abs_diff(c))
    }

    pub fn area(&self) -> f64 {
        self.weight.iter().sum()
    }
}

/// Build the grid for `n` nodes per side and requested hole half-width `rho`.
pub fn build_grid(n: usize, rho: f64, eps_corner: f64) -> Result<Arc<AnnulusGrid>> {
    Ok(Arc::new(AnnulusGrid::new(GridSpec::new(n, rho, eps_corner)?)))
}

/// A real value per node; hole nodes are pinned to 0.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<AnnulusGrid>,
    values: Vec<f64>,
}

impl PartialEq for ScalarField {
    fn eq(&self, other: &Self) -> bool {
        self.grid.spec == other.grid.spec && self.values == other.values
    }
}

impl ScalarField {
    pub fn zeros(grid: &Arc<AnnulusGrid>) -> Self {
        Self { grid: grid.clone(), values: vec![0.0; grid.len()] }
    }

    /// Evaluate `f(x, y)` at every non-hole node.
    pub fn from_fn(grid: &Arc<AnnulusGrid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for idx in 0..grid.len() {
            if grid.class(idx) != NodeClass::Hole {
                let (x, y) = grid.xy(idx);
                out.values[idx] = f(x, y);
            }
        }
        out
    }

    pub fn from_values(grid: &Arc<AnnulusGrid>, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Domain(format!("field has {} values, grid has {} nodes", values.len(), grid.len())));
        }
        for (v, c) in values.iter_mut().zip(grid.classes()) {
            if *c == NodeClass::Hole {
                *v = 0.0;
            }
        }
        Ok(Self { grid: grid.clone(), values })
    }

    pub fn grid(&self) -> &Arc<AnnulusGrid> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Write `x,y,value` rows for every non-hole node.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y", "value"])?;
        for idx in 0..self.grid.len() {
            if self.grid.class(idx) != NodeClass::Hole {
                let (x, y) = self.grid.xy(idx);
                w.serialize((x, y, self.values[idx]))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// CSV export plus a JSON sidecar `<stem>.json` describing the grid.
    pub fn export(&self, dir: &Path, field_name: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(&dir.join(format!("{field_name}.csv")))?;
        let spec = self.grid.spec();
        let meta = serde_json::json!({
            "schema": 1,
            "n": spec.n,
            "h": spec.h,
            "rho_snapped": spec.rho_snapped,
            "eps_corner": spec.eps(),
            "field_name": field_name,
        });
        let mut f = std::fs::File::create(dir.join(format!("{field_name}.json")))?;
        writeln!(f, "{}", serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }
}

/// Dirichlet data for the five components, stored as full fields whose
/// non-boundary entries are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    pub fields: [ScalarField; 5],
}

impl BoundaryData {
    /// Copy boundary values of component `a` into `field`.
    pub fn impose(&self, a: usize, field: &mut ScalarField) {
        let grid = field.grid.clone();
        for idx in 0..grid.len() {
            if grid.class(idx).is_dirichlet() {
                field.values[idx] = self.fields[a].values[idx];
            }
        }
    }
}

/// Outer-boundary value of `q1`: `±s₊/2` on the edges with an odd linear
/// ramp of half-width `eps` through each corner.
pub fn outer_q1(x: f64, y: f64, s_plus: f64, eps: f64) -> f64 {
    0.5 * s_plus * ((y.abs() - x.abs()) / eps).clamp(-1.0, 1.0)
}

pub fn dirichlet_values(grid: &Arc<AnnulusGrid>, params: &MaterialParams) -> BoundaryData {
    let s = params.s_plus();
    let eps = grid.spec().eps();
    let mut fields: [ScalarField; 5] = std::array::from_fn(|_| ScalarField::zeros(grid));
    for idx in 0..grid.len() {
        if grid.class(idx) == NodeClass::OuterBoundary {
            let (x, y) = grid.xy(idx);
            fields[0].values[idx] = outer_q1(x, y, s, eps);
            fields[2].values[idx] = -s / 6.0;
        }
    }
    BoundaryData { fields }
}

/// Five-point Laplacian on Interior nodes; other nodes get 0.
pub fn apply_laplacian(field: &ScalarField) -> ScalarField {
    let grid = &field.grid;
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut out = ScalarField::zeros(grid);
    let u = &field.values;
    for &idx in grid.interior() {
        let [e, w, nn, s] = grid.neighbours(idx);
        out.values[idx] = (u[e] + u[w] + u[nn] + u[s] - 4.0 * u[idx]) * inv_h2;
    }
    out
}

/// Trapezoidal integral over the annulus.
pub fn integrate(density: &ScalarField) -> f64 {
    density.values.iter().zip(density.grid.weights()).map(|(v, w)| v * w).sum()
}

/// Nodewise `|∇u|²`: centred differences where both neighbours exist,
/// one-sided otherwise.
pub fn grad_sq(field: &ScalarField) -> ScalarField {
    let grid = &field.grid;
    let n = grid.n();
    let h = grid.h();
    let u = &field.values;
    let present = |i: i64, j: i64| {
        i >= 0
            && j >= 0
            && (i as usize) < n
            && (j as usize) < n
            && grid.class(j as usize * n + i as usize) != NodeClass::Hole
    };
    let val = |i: i64, j: i64| u[j as usize * n + i as usize];
    let diff = |i: i64, j: i64, di: i64, dj: i64| -> f64 {
        let fwd = present(i + di, j + dj);
        let bwd = present(i - di, j - dj);
        match (fwd, bwd) {
            (true, true) => (val(i + di, j + dj) - val(i - di, j - dj)) / (2.0 * h),
            (true, false) => (val(i + di, j + dj) - val(i, j)) / h,
            (false, true) => (val(i, j) - val(i - di, j - dj)) / h,
            (false, false) => 0.0,
        }
    };
    let mut out = ScalarField::zeros(grid);
    for idx in 0..grid.len() {
        if grid.class(idx) == NodeClass::Hole {
            continue;
        }
        let (i, j) = grid.ij(idx);
        let (i, j) = (i as i64, j as i64);
        let gx = diff(i, j, 1, 0);
        let gy = diff(i, j, 0, 1);
        out.values[idx] = gx * gx + gy * gy;
    }
    out
}

/// Edge-based discrete Dirichlet integral `Σ ω_e (u_a − u_b)²`, which is the
/// trapezoidal rule applied cellwise to `|∇u|²`.
pub fn dirichlet_integral(field: &ScalarField) -> f64 {
    let u = &field.values;
    field.grid.edges().iter().map(|&(a, b, w)| w * (u[a] - u[b]).powi(2)).sum()
}

//! Landau-de Gennes algebra: material parameters, the five-component
//! tensor basis, the bulk potential and the wells of the reduced potential.
//!
//! Components are taken in the fixed orthogonal basis
//!
//! ```text
//! E1 = ex⊗ex − ey⊗ey      E2 = ex⊗ey + ey⊗ex
//! E3 = 2ez⊗ez − ex⊗ex − ey⊗ey
//! E4 = ex⊗ez + ez⊗ex      E5 = ey⊗ez + ez⊗ey
//! ```
//!
//! with squared norms `(2, 2, 6, 2, 2)`.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squared Frobenius norms of the basis tensors `E1..E5`.
pub const BASIS_NORM_SQ: [f64; 5] = [2.0, 2.0, 6.0, 2.0, 2.0];

/// Landau-de Gennes coefficients plus the rescaled domain coupling.
///
/// `lambda_bar_sq` is `2Cλ²/L`; the physical λ and L never appear on their
/// own, so bulk terms carry the factor `λ²/L = lambda_bar_sq / (2C)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct MaterialParams {
    a: f64,
    b: f64,
    c: f64,
    lambda_bar_sq: f64,
    s_plus: f64,
    f_min: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    #[serde(rename = "A")]
    a: f64,
    #[serde(rename = "B")]
    b: f64,
    #[serde(rename = "C")]
    c: f64,
    lambda_bar_sq: f64,
}

impl TryFrom<RawParams> for MaterialParams {
    type Error = Error;
    fn try_from(r: RawParams) -> Result<Self> {
        MaterialParams::new(r.a, r.b, r.c, r.lambda_bar_sq)
    }
}

impl From<MaterialParams> for RawParams {
    fn from(p: MaterialParams) -> Self {
        RawParams { a: p.a, b: p.b, c: p.c, lambda_bar_sq: p.lambda_bar_sq }
    }
}

pub const DEFAULT_B: f64 = 0.64e4;
pub const DEFAULT_C: f64 = 0.35e4;
pub const DEFAULT_LAMBDA_BAR_SQ: f64 = 200.0;

/// Positive uniaxial order parameter minimizing the bulk potential.
pub fn s_plus(a: f64, b: f64, c: f64) -> Result<f64> {
    if !(b > 0.0) || !(c > 0.0) {
        return Err(Error::Params(format!("B and C must be positive (B={b}, C={c})")));
    }
    Ok((b + (b * b + 24.0 * a.abs() * c).sqrt()) / (4.0 * c))
}

impl MaterialParams {
    pub fn new(a: f64, b: f64, c: f64, lambda_bar_sq: f64) -> Result<Self> {
        let s = s_plus(a, b, c)?;
        if !(lambda_bar_sq > 0.0) || !lambda_bar_sq.is_finite() {
            return Err(Error::Params(format!("lambda_bar_sq must be positive, got {lambda_bar_sq}")));
        }
        if !a.is_finite() {
            return Err(Error::Params("A must be finite".into()));
        }
        if a >= 0.0 {
            log::warn!("A = {a} >= 0 lies outside the low-temperature regime the model targets");
        }
        let f_min = a * s * s / 3.0 - 2.0 * b * s.powi(3) / 27.0 + c * s.powi(4) / 9.0;
        Ok(Self { a, b, c, lambda_bar_sq, s_plus: s, f_min })
    }

    /// Parameters at reduced temperature `t = 27AC/B²`.
    pub fn from_reduced_temperature(t: f64, b: f64, c: f64, lambda_bar_sq: f64) -> Result<Self> {
        Self::new(t * b * b / (27.0 * c), b, c, lambda_bar_sq)
    }

    /// `B = 0.64e4`, `C = 0.35e4`, `A = −B²/(3C)`, `λ̄² = 200`.
    pub fn reference() -> Self {
        Self::from_reduced_temperature(-9.0, DEFAULT_B, DEFAULT_C, DEFAULT_LAMBDA_BAR_SQ)
            .expect("reference parameters are valid")
    }

    pub fn with_lambda_bar_sq(&self, lambda_bar_sq: f64) -> Result<Self> {
        Self::new(self.a, self.b, self.c, lambda_bar_sq)
    }

    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn lambda_bar_sq(&self) -> f64 {
        self.lambda_bar_sq
    }
    pub fn s_plus(&self) -> f64 {
        self.s_plus
    }
    /// Minimum of the bulk potential, attained on the uniaxial wells.
    pub fn f_min(&self) -> f64 {
        self.f_min
    }
    pub fn t_reduced(&self) -> f64 {
        27.0 * self.a * self.c / (self.b * self.b)
    }
    /// `λ²/L` in rescaled units.
    pub fn bulk_prefactor(&self) -> f64 {
        self.lambda_bar_sq / (2.0 * self.c)
    }

    pub fn wells(&self) -> WellSet {
        WellSet::new(self.s_plus)
    }
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self::reference()
    }
}

/// Traceless symmetric 3×3 tensor stored by its five basis coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QTensor {
    pub q: [f64; 5],
}

impl QTensor {
    pub fn new(q: [f64; 5]) -> Self {
        Self { q }
    }

    pub fn reduced(q1: f64, q3: f64) -> Self {
        Self { q: [q1, 0.0, q3, 0.0, 0.0] }
    }

    /// Uniaxial tensor `s (n⊗n − I/3)`; `n` need not be normalized.
    pub fn uniaxial(s: f64, n: [f64; 3]) -> Self {
        let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        let n = [n[0] / norm, n[1] / norm, n[2] / norm];
        let m = Matrix3::from_fn(|i, j| s * (n[i] * n[j] - if i == j { 1.0 / 3.0 } else { 0.0 }));
        Self::from_matrix(&m)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let [q1, q2, q3, q4, q5] = self.q;
        Matrix3::new(q1 - q3, q2, q4, q2, -q1 - q3, q5, q4, q5, 2.0 * q3)
    }

    /// Orthogonal projection of a symmetric matrix onto the basis.
    /// The trace part, if any, is discarded.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let sym = (m + m.transpose()) * 0.5;
        Self {
            q: [
                0.5 * (sym[(0, 0)] - sym[(1, 1)]),
                sym[(0, 1)],
                (2.0 * sym[(2, 2)] - sym[(0, 0)] - sym[(1, 1)]) / 6.0,
                sym[(0, 2)],
                sym[(1, 2)],
            ],
        }
    }

    pub fn tr_q2(&self) -> f64 {
        tr_q2(&self.q)
    }

    pub fn tr_q3(&self) -> f64 {
        tr_q3(&self.q)
    }

    pub fn norm(&self) -> f64 {
        self.tr_q2().sqrt()
    }
}

pub(crate) fn tr_q2(q: &[f64; 5]) -> f64 {
    BASIS_NORM_SQ.iter().zip(q).map(|(w, v)| w * v * v).sum()
}

pub(crate) fn tr_q3(q: &[f64; 5]) -> f64 {
    let [q1, q2, q3, q4, q5] = *q;
    -6.0 * q1 * q1 * q3 + 6.0 * q3 * q3 * q3 - 6.0 * q2 * q2 * q3
        + 3.0 * q1 * (q4 * q4 - q5 * q5)
        + 3.0 * q3 * (q4 * q4 + q5 * q5)
        + 6.0 * q2 * q4 * q5
}

/// Bulk potential `(A/2)tr Q² − (B/3)tr Q³ + (C/4)(tr Q²)²`.
pub fn bulk_potential(q: &QTensor, p: &MaterialParams) -> f64 {
    let t2 = q.tr_q2();
    0.5 * p.a * t2 - p.b / 3.0 * q.tr_q3() + 0.25 * p.c * t2 * t2
}

/// Gradient of the bulk potential with respect to the five coefficients.
pub fn bulk_gradient(q: &[f64; 5], p: &MaterialParams) -> [f64; 5] {
    let [q1, q2, q3, q4, q5] = *q;
    let t2 = tr_q2(q);
    let dt3 = [
        -12.0 * q1 * q3 + 3.0 * (q4 * q4 - q5 * q5),
        -12.0 * q2 * q3 + 6.0 * q4 * q5,
        -6.0 * q1 * q1 + 18.0 * q3 * q3 - 6.0 * q2 * q2 + 3.0 * (q4 * q4 + q5 * q5),
        6.0 * (q1 * q4 + q3 * q4 + q2 * q5),
        6.0 * (-q1 * q5 + q3 * q5 + q2 * q4),
    ];
    let mut g = [0.0; 5];
    for k in 0..5 {
        let dt2 = 2.0 * BASIS_NORM_SQ[k] * q[k];
        g[k] = 0.5 * p.a * dt2 - p.b / 3.0 * dt3[k] + 0.5 * p.c * t2 * dt2;
    }
    g
}

/// Hessian of the bulk potential with respect to the five coefficients.
pub fn bulk_hessian(q: &[f64; 5], p: &MaterialParams) -> [[f64; 5]; 5] {
    let [q1, q2, q3, q4, q5] = *q;
    let t2 = tr_q2(q);
    let mut h3 = [[0.0; 5]; 5];
    let mut set = |i: usize, j: usize, v: f64| {
        h3[i][j] = v;
        h3[j][i] = v;
    };
    set(0, 0, -12.0 * q3);
    set(0, 2, -12.0 * q1);
    set(0, 3, 6.0 * q4);
    set(0, 4, -6.0 * q5);
    set(1, 1, -12.0 * q3);
    set(1, 2, -12.0 * q2);
    set(1, 3, 6.0 * q5);
    set(1, 4, 6.0 * q4);
    set(2, 2, 36.0 * q3);
    set(2, 3, 6.0 * q4);
    set(2, 4, 6.0 * q5);
    set(3, 3, 6.0 * (q1 + q3));
    set(3, 4, 6.0 * q2);
    set(4, 4, 6.0 * (q3 - q1));

    let dt2: [f64; 5] = std::array::from_fn(|k| 2.0 * BASIS_NORM_SQ[k] * q[k]);
    let mut h = [[0.0; 5]; 5];
    for i in 0..5 {
        for j in 0..5 {
            let d2t2 = if i == j { 2.0 * BASIS_NORM_SQ[i] } else { 0.0 };
            h[i][j] = 0.5 * p.a * d2t2 - p.b / 3.0 * h3[i][j] + 0.5 * p.c * (dt2[i] * dt2[j] + t2 * d2t2);
        }
    }
    h
}

/// Biaxiality `β² = 1 − 6 (tr Q³)² / (tr Q²)³`, defined as 0 at `Q = 0`.
pub fn biaxiality(q: &QTensor) -> f64 {
    let t2 = q.tr_q2();
    if t2 <= f64::MIN_POSITIVE.sqrt() {
        return 0.0;
    }
    let t3 = q.tr_q3();
    (1.0 - 6.0 * t3 * t3 / (t2 * t2 * t2)).clamp(0.0, 1.0)
}

/// A point in the `(q1, q3)` plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReducedPoint {
    pub q1: f64,
    pub q3: f64,
}

impl ReducedPoint {
    pub const ORIGIN: ReducedPoint = ReducedPoint { q1: 0.0, q3: 0.0 };

    pub fn new(q1: f64, q3: f64) -> Self {
        Self { q1, q3 }
    }

    pub fn dist(&self, other: &ReducedPoint) -> f64 {
        (self.q1 - other.q1).hypot(self.q3 - other.q3)
    }
}

/// Reduced potential `F(q1, q3) = f_B(Q(q1, q3)) − F_min`, non-negative with
/// zeros exactly at the three wells.
pub fn reduced_potential(q: ReducedPoint, p: &MaterialParams) -> f64 {
    let ReducedPoint { q1, q3 } = q;
    let r = q1 * q1 + 3.0 * q3 * q3;
    p.a * r + 2.0 * p.b * q3 * (q1 * q1 - q3 * q3) + p.c * r * r - p.f_min
}

/// Analytic `(∂F/∂q1, ∂F/∂q3)`.
pub fn reduced_potential_grad(q: ReducedPoint, p: &MaterialParams) -> (f64, f64) {
    let ReducedPoint { q1, q3 } = q;
    let r = q1 * q1 + 3.0 * q3 * q3;
    (
        2.0 * p.a * q1 + 4.0 * p.b * q1 * q3 + 4.0 * p.c * r * q1,
        6.0 * p.a * q3 + 2.0 * p.b * q1 * q1 - 6.0 * p.b * q3 * q3 + 12.0 * p.c * r * q3,
    )
}

/// Analytic Hessian `[[F_11, F_13], [F_13, F_33]]`.
pub fn reduced_potential_hessian(q: ReducedPoint, p: &MaterialParams) -> [[f64; 2]; 2] {
    let ReducedPoint { q1, q3 } = q;
    let f11 = 2.0 * p.a + 4.0 * p.b * q3 + 12.0 * p.c * (q1 * q1 + q3 * q3);
    let f13 = 4.0 * p.b * q1 + 24.0 * p.c * q1 * q3;
    let f33 = 6.0 * p.a - 12.0 * p.b * q3 + 12.0 * p.c * (q1 * q1 + 9.0 * q3 * q3);
    [[f11, f13], [f13, f33]]
}

/// The four critical points of the reduced potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellSet {
    pub origin: ReducedPoint,
    pub p1: ReducedPoint,
    pub p2: ReducedPoint,
    pub p3: ReducedPoint,
}

impl WellSet {
    pub fn new(s_plus: f64) -> Self {
        Self {
            origin: ReducedPoint::ORIGIN,
            p1: ReducedPoint::new(-s_plus / 2.0, -s_plus / 6.0),
            p2: ReducedPoint::new(s_plus / 2.0, -s_plus / 6.0),
            p3: ReducedPoint::new(0.0, s_plus / 3.0),
        }
    }

    pub fn minima(&self) -> [ReducedPoint; 3] {
        [self.p1, self.p2, self.p3]
    }
}

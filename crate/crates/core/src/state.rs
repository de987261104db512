//! Grid states for the two-field ansatz `(q1, q3)` and the full five-field
//! system.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{AnnulusGrid, BoundaryData, NodeClass, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    /// `q2 = q4 = q5 = 0`; unknowns `(q1, q3)`.
    Reduced,
    /// All five components.
    Full,
}

impl System {
    /// Basis components carried by the system.
    pub fn components(self) -> &'static [usize] {
        match self {
            System::Reduced => &[0, 2],
            System::Full => &[0, 1, 2, 3, 4],
        }
    }

    pub fn n_fields(self) -> usize {
        self.components().len()
    }
}

/// A set of component fields on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    system: System,
    fields: Vec<ScalarField>,
}

pub type ReducedState = State;
pub type FullState = State;

impl State {
    pub fn new(system: System, fields: Vec<ScalarField>) -> Result<Self> {
        if fields.len() != system.n_fields() {
            return Err(Error::Domain(format!(
                "{system:?} state needs {} fields, got {}",
                system.n_fields(),
                fields.len()
            )));
        }
        let spec = *fields[0].grid().spec();
        if fields.iter().any(|f| *f.grid().spec() != spec) {
            return Err(Error::Domain("fields live on different grids".into()));
        }
        Ok(Self { system, fields })
    }

    pub fn reduced(q1: ScalarField, q3: ScalarField) -> Result<Self> {
        Self::new(System::Reduced, vec![q1, q3])
    }

    pub fn zeros(grid: &Arc<AnnulusGrid>, system: System) -> Self {
        Self { system, fields: (0..system.n_fields()).map(|_| ScalarField::zeros(grid)).collect() }
    }

    pub fn system(&self) -> System {
        self.system
    }
    pub fn grid(&self) -> &Arc<AnnulusGrid> {
        self.fields[0].grid()
    }
    pub fn fields(&self) -> &[ScalarField] {
        &self.fields
    }
    pub fn fields_mut(&mut self) -> &mut [ScalarField] {
        &mut self.fields
    }
    pub fn n_fields(&self) -> usize {
        self.fields.len()
    }

    /// Field of basis component `a` (0-based), if the system carries it.
    pub fn component(&self, a: usize) -> Option<&ScalarField> {
        self.system.components().iter().position(|&c| c == a).map(|k| &self.fields[k])
    }

    pub fn q1(&self) -> &ScalarField {
        &self.fields[0]
    }

    pub fn q3(&self) -> &ScalarField {
        self.component(2).expect("every system carries q3")
    }

    /// All five coefficients at node `idx`.
    #[inline]
    pub fn node_q(&self, idx: usize) -> [f64; 5] {
        let mut q = [0.0; 5];
        for (k, &a) in self.system.components().iter().enumerate() {
            q[a] = self.fields[k].values()[idx];
        }
        q
    }

    /// Embed into the five-field system with zero extra components.
    pub fn to_full(&self) -> State {
        match self.system {
            System::Full => self.clone(),
            System::Reduced => {
                let g = self.grid().clone();
                let z = ScalarField::zeros(&g);
                State {
                    system: System::Full,
                    fields: vec![self.fields[0].clone(), z.clone(), self.fields[1].clone(), z.clone(), z],
                }
            }
        }
    }

    /// Keep only `q1, q3`.
    pub fn to_reduced(&self) -> State {
        match self.system {
            System::Reduced => self.clone(),
            System::Full => {
                State { system: System::Reduced, fields: vec![self.fields[0].clone(), self.fields[2].clone()] }
            }
        }
    }

    pub fn impose_boundary(&mut self, bd: &BoundaryData) {
        for (k, &a) in self.system.components().iter().enumerate() {
            bd.impose(a, &mut self.fields[k]);
        }
    }

    /// Largest `|Q|` over the grid.
    pub fn max_norm_q(&self) -> f64 {
        (0..self.grid().len()).map(|i| crate::ldg::tr_q2(&self.node_q(i)).sqrt()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.fields.iter().map(|f| f.max_abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.fields.iter().all(|f| f.is_finite())
    }

    /// Discrete L² distance `(Σ w_i Σ_fields (u − v)²)^{1/2}`.
    pub fn l2_distance(&self, other: &State) -> f64 {
        let w = self.grid().weights();
        let mut s = 0.0;
        for (a, b) in self.fields.iter().zip(&other.fields) {
            for ((x, y), wi) in a.values().iter().zip(b.values()).zip(w) {
                s += wi * (x - y) * (x - y);
            }
        }
        s.sqrt()
    }

    /// Interior values packed node-major with fields interleaved.
    pub fn unknowns(&self) -> Vec<f64> {
        let nf = self.n_fields();
        let grid = self.grid();
        let mut u = vec![0.0; grid.n_interior() * nf];
        for (k, &idx) in grid.interior().iter().enumerate() {
            for f in 0..nf {
                u[k * nf + f] = self.fields[f].values()[idx];
            }
        }
        u
    }

    pub fn set_unknowns(&mut self, u: &[f64]) {
        let nf = self.n_fields();
        let grid = self.grid().clone();
        for (k, &idx) in grid.interior().iter().enumerate() {
            for f in 0..nf {
                self.fields[f].values_mut()[idx] = u[k * nf + f];
            }
        }
    }

    /// `q1..q5` CSVs (only the components carried) plus sidecars.
    pub fn export(&self, dir: &Path, prefix: &str) -> Result<()> {
        for (k, &a) in self.system.components().iter().enumerate() {
            self.fields[k].export(dir, &format!("{prefix}q{}", a + 1))?;
        }
        Ok(())
    }

    /// Number of Dirichlet nodes whose value differs from `bd`.
    pub fn boundary_mismatch(&self, bd: &BoundaryData) -> usize {
        let grid = self.grid();
        let mut bad = 0;
        for (k, &a) in self.system.components().iter().enumerate() {
            for idx in 0..grid.len() {
                if grid.class(idx).is_dirichlet() && self.fields[k].values()[idx] != bd.fields[a].values()[idx] {
                    bad += 1;
                }
                debug_assert!(grid.class(idx) != NodeClass::Hole || self.fields[k].values()[idx] == 0.0);
            }
        }
        bad
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    #[test]
    fn pack_round_trip_and_embedding() {
        let g = build_grid(17, 0.25, 4.0).unwrap();
        let q1 = ScalarField::from_fn(&g, |x, y| x - 2.0 * y);
        let q3 = ScalarField::from_fn(&g, |x, y| x * y);
        let s = State::reduced(q1, q3).unwrap();
        let u = s.unknowns();
        let mut t = State::zeros(&g, System::Reduced);
        t.set_unknowns(&u);
        assert_eq!(t.unknowns(), u);
        let f = s.to_full();
        assert_eq!(f.node_q(g.idx(3, 5))[0], s.node_q(g.idx(3, 5))[0]);
        assert_eq!(f.node_q(g.idx(3, 5))[2], s.node_q(g.idx(3, 5))[2]);
        assert_eq!(f.to_reduced(), s);
        assert_eq!(s.l2_distance(&s), 0.0);
        assert!(State::new(System::Full, vec![ScalarField::zeros(&g)]).is_err());
    }
}

//! Symmetries of the square acting on tensor fields, and deduplication of
//! solution sets modulo that action.
//!
//! An op is a planar orthogonal map `P` of the square, optionally composed
//! with the reflection `z ↦ −z`. It acts by `Q(x) ↦ R Q(R⁻¹x) Rᵀ` with
//! `R = diag(P, ±1)`. The component action is obtained by conjugating the
//! basis tensors with `R` and projecting back.

use nalgebra::Matrix3;
use serde::Serialize;

use crate::ldg::{QTensor, BASIS_NORM_SQ};
use crate::state::{State, System};

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryOp {
    pub name: String,
    p: [[i32; 2]; 2],
    zflip: bool,
    comp: [[f64; 5]; 5],
}

fn basis(a: usize) -> Matrix3<f64> {
    let mut q = [0.0; 5];
    q[a] = 1.0;
    QTensor::new(q).matrix()
}

const PLANAR: [(&str, [[i32; 2]; 2]); 8] = [
    ("id", [[1, 0], [0, 1]]),
    ("rot90", [[0, -1], [1, 0]]),
    ("rot180", [[-1, 0], [0, -1]]),
    ("rot270", [[0, 1], [-1, 0]]),
    ("flip_x", [[-1, 0], [0, 1]]),
    ("flip_y", [[1, 0], [0, -1]]),
    ("flip_diag", [[0, 1], [1, 0]]),
    ("flip_antidiag", [[0, -1], [-1, 0]]),
];

impl SymmetryOp {
    fn from_parts(p: [[i32; 2]; 2], zflip: bool) -> Self {
        let name = PLANAR
            .iter()
            .find(|(_, m)| *m == p)
            .map(|(n, _)| n.to_string())
            .expect("planar part lies in the dihedral group");
        let name = if zflip { format!("{name}+zflip") } else { name };
        let r = Self::matrix3_of(p, zflip);
        let mut comp = [[0.0; 5]; 5];
        for b in 0..5 {
            let img = r * basis(b) * r.transpose();
            for a in 0..5 {
                comp[a][b] = img.component_mul(&basis(a)).sum() / BASIS_NORM_SQ[a];
            }
        }
        Self { name, p, zflip, comp }
    }

    fn matrix3_of(p: [[i32; 2]; 2], zflip: bool) -> Matrix3<f64> {
        Matrix3::new(
            p[0][0] as f64,
            p[0][1] as f64,
            0.0,
            p[1][0] as f64,
            p[1][1] as f64,
            0.0,
            0.0,
            0.0,
            if zflip { -1.0 } else { 1.0 },
        )
    }

    pub fn identity() -> Self {
        Self::from_parts(PLANAR[0].1, false)
    }

    pub fn matrix3(&self) -> Matrix3<f64> {
        Self::matrix3_of(self.p, self.zflip)
    }

    /// Linear action on `(q1, …, q5)`.
    pub fn component_action(&self) -> &[[f64; 5]; 5] {
        &self.comp
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &SymmetryOp) -> SymmetryOp {
        let mut p = [[0; 2]; 2];
        for (i, row) in p.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.p[i][0] * other.p[0][j] + self.p[i][1] * other.p[1][j];
            }
        }
        Self::from_parts(p, self.zflip ^ other.zflip)
    }

    pub fn inverse(&self) -> SymmetryOp {
        let p = self.p;
        Self::from_parts([[p[0][0], p[1][0]], [p[0][1], p[1][1]]], self.zflip)
    }

    /// `Q(x) ↦ R Q(R⁻¹x) Rᵀ`.
    pub fn act(&self, state: &State) -> State {
        let grid = state.grid().clone();
        let comps = state.system().components();
        if state.system() == System::Reduced {
            for &a in comps {
                for b in 0..5 {
                    if !comps.contains(&b) {
                        debug_assert!(self.comp[a][b] == 0.0);
                    }
                }
            }
        }
        let n = grid.n();
        let c = grid.spec().center() as i64;
        let mut out = state.clone();
        for idx in 0..grid.len() {
            let (i, j) = grid.ij(idx);
            let (di, dj) = (i as i64 - c, j as i64 - c);
            // R⁻¹ = Pᵀ on the integer offsets
            let si = self.p[0][0] as i64 * di + self.p[1][0] as i64 * dj;
            let sj = self.p[0][1] as i64 * di + self.p[1][1] as i64 * dj;
            let src = (sj + c) as usize * n + (si + c) as usize;
            let q = state.node_q(src);
            for (k, &a) in comps.iter().enumerate() {
                let mut v = 0.0;
                for &b in comps {
                    v += self.comp[a][b] * q[b];
                }
                out.fields_mut()[k].values_mut()[idx] = v;
            }
        }
        out
    }
}

/// The eight planar symmetries of the square.
pub fn dihedral_group() -> Vec<SymmetryOp> {
    PLANAR.iter().map(|(_, p)| SymmetryOp::from_parts(*p, false)).collect()
}

/// Planar symmetries times the out-of-plane reflection (16 ops).
pub fn full_group() -> Vec<SymmetryOp> {
    let mut g = dihedral_group();
    g.extend(PLANAR.iter().map(|(_, p)| SymmetryOp::from_parts(*p, true)));
    g
}

/// The group appropriate for a system: z-reflection only matters when
/// `q4, q5` are present.
pub fn group_for(system: System) -> Vec<SymmetryOp> {
    match system {
        System::Reduced => dihedral_group(),
        System::Full => full_group(),
    }
}

/// Average of `g·state` over `ops`. For a group this is the projection onto
/// the invariant states.
pub fn symmetrize(state: &State, ops: &[SymmetryOp]) -> State {
    let mut acc = state.clone();
    for f in acc.fields_mut() {
        f.values_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    for op in ops {
        let img = op.act(state);
        for (a, b) in acc.fields_mut().iter_mut().zip(img.fields()) {
            for (x, y) in a.values_mut().iter_mut().zip(b.values()) {
                *x += y;
            }
        }
    }
    let inv = 1.0 / ops.len() as f64;
    for f in acc.fields_mut() {
        f.values_mut().iter_mut().for_each(|v| *v *= inv);
    }
    acc
}

/// `min_g ‖g·a − b‖`.
pub fn orbit_distance(a: &State, b: &State, ops: &[SymmetryOp]) -> f64 {
    ops.iter().map(|op| op.act(a).l2_distance(b)).fold(f64::INFINITY, f64::min)
}

/// Ops fixing `state` to within `radius`; a subgroup when `ops` is a group.
pub fn stabilizer(state: &State, ops: &[SymmetryOp], radius: f64) -> Vec<SymmetryOp> {
    ops.iter().filter(|op| op.act(state).l2_distance(state) < radius).cloned().collect()
}

pub fn stabilizer_size(state: &State, ops: &[SymmetryOp], radius: f64) -> usize {
    stabilizer(state, ops, radius).len()
}

#[derive(Debug, Clone, Serialize)]
pub struct SymmetryClass {
    pub class_id: usize,
    /// Index of the representative in the input list.
    pub representative: usize,
    pub members: Vec<usize>,
    pub fixing_subgroup_size: usize,
}

/// Partition states into orbits: two states are equivalent when some op maps
/// one within `radius` of the other.
///
/// Equivalence is closed transitively, so the partition does not depend on
/// the input order.
pub fn dedup(states: &[State], ops: &[SymmetryOp], radius: f64) -> Vec<SymmetryClass> {
    let n = states.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    // images of every state under the group, computed once
    let images: Vec<Vec<State>> = states.iter().map(|s| ops.iter().map(|op| op.act(s)).collect()).collect();
    for i in 0..n {
        for j in i + 1..n {
            if images[i].iter().any(|g| g.l2_distance(&states[j]) < radius) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut classes: Vec<SymmetryClass> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        match classes.iter_mut().find(|c| c.representative == r) {
            Some(c) => c.members.push(i),
            None => classes.push(SymmetryClass {
                class_id: classes.len(),
                representative: r,
                members: vec![i],
                fixing_subgroup_size: 0,
            }),
        }
    }
    for c in &mut classes {
        c.fixing_subgroup_size =
            images[c.representative].iter().filter(|g| g.l2_distance(&states[c.representative]) < radius).count();
    }
    classes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, ScalarField};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};

    fn random_full(seed: u64) -> State {
        let g = build_grid(17, 0.25, 4.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let fields = (0..5)
            .map(|_| {
                let v: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                ScalarField::from_values(&g, v).unwrap()
            })
            .collect();
        State::new(System::Full, fields).unwrap()
    }

    #[test]
    fn group_is_closed_with_inverses() {
        let g = full_group();
        assert_eq!(g.len(), 16);
        assert!(g.contains(&SymmetryOp::identity()));
        for a in &g {
            assert!(g.contains(&a.inverse()));
            assert_eq!(a.compose(&a.inverse()), SymmetryOp::identity());
            for b in &g {
                assert!(g.contains(&a.compose(b)), "{} ∘ {}", a.name, b.name);
            }
        }
    }

    #[test]
    fn quarter_turn_negates_q1_and_q2() {
        let r = &dihedral_group()[1];
        let m = r.component_action();
        assert_relative_eq!(m[0][0], -1.0);
        assert_relative_eq!(m[1][1], -1.0);
        assert_relative_eq!(m[2][2], 1.0);
        // ez is fixed so (q4, q5) rotate like an in-plane vector
        assert_relative_eq!(m[4][3], 1.0);
        assert_relative_eq!(m[3][4], -1.0);
        let z = &full_group()[8];
        assert_eq!(z.name, "id+zflip");
        let m = z.component_action();
        assert_relative_eq!(m[3][3], -1.0);
        assert_relative_eq!(m[4][4], -1.0);
        assert_relative_eq!(m[0][0], 1.0);
    }

    #[test]
    fn identity_is_bitwise() {
        let s = random_full(1);
        assert_eq!(SymmetryOp::identity().act(&s), s);
    }

    #[test]
    fn conjugation_matches_matrix_form() {
        // act on a constant tensor field equals R Q Rᵀ pointwise
        let g = build_grid(9, 0.25, 4.0).unwrap();
        let q = [0.3, -0.2, 0.1, 0.4, -0.7];
        let fields = q.iter().map(|&v| ScalarField::from_fn(&g, |_, _| v)).collect();
        let s = State::new(System::Full, fields).unwrap();
        for op in full_group() {
            let img = op.act(&s);
            let r = op.matrix3();
            let want = QTensor::from_matrix(&(r * QTensor::new(q).matrix() * r.transpose()));
            let idx = g.idx(0, 0);
            for a in 0..5 {
                assert_relative_eq!(img.node_q(idx)[a], want.q[a], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn dedup_is_idempotent_and_order_free() {
        let a = random_full(3);
        let b = random_full(4);
        let ops = full_group();
        let list = vec![a.clone(), ops[5].act(&a), b.clone(), ops[11].act(&b), a.clone()];
        let classes = dedup(&list, &ops, 1e-9);
        assert_eq!(classes.len(), 2);
        let mut doubled = list.clone();
        doubled.extend(list.iter().cloned());
        assert_eq!(dedup(&doubled, &ops, 1e-9).len(), 2);
        let rev: Vec<State> = list.iter().rev().cloned().collect();
        let mut sizes: Vec<usize> = dedup(&rev, &ops, 1e-9).iter().map(|c| c.members.len()).collect();
        sizes.sort();
        assert_eq!(sizes, vec![2, 3]);
    }

    #[test]
    fn symmetrized_state_is_invariant() {
        let s = symmetrize(&random_full(9), &full_group());
        for op in full_group() {
            assert!(op.act(&s).l2_distance(&s) < 1e-12);
        }
        assert_eq!(stabilizer_size(&s, &full_group(), 1e-10), 16);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn act_then_inverse_is_identity(seed in any::<u64>(), k in 0usize..16) {
            let s = random_full(seed);
            let op = &full_group()[k];
            let back = op.inverse().act(&op.act(&s));
            prop_assert!(back.l2_distance(&s) < 1e-12);
        }

        #[test]
        fn act_is_an_isometry(seed in any::<u64>(), k in 0usize..16) {
            let a = random_full(seed);
            let b = random_full(seed.wrapping_add(1));
            let op = &full_group()[k];
            let d0 = a.l2_distance(&b);
            let d1 = op.act(&a).l2_distance(&op.act(&b));
            prop_assert!((d0 - d1).abs() < 1e-12 * d0.max(1.0));
        }
    }
}

//! P1 finite element operators for one implicit time step.
//!
//! The state operator acts on the free (non-Dirichlet) nodes only:
//! `A = M_A + tau * K_kappa`, where `M_A` is the lumped mass matrix by
//! default (see [`MassTreatment`]). Pairings of the solid fraction with
//! anything use the lumped (row-sum) mass, and the control boundary
//! pairing uses the lumped boundary mass, so that sign and projection
//! conditions hold node by node.

use crate::error::{check_len, Error, Result};
use crate::linalg::{BandCholesky, CsrMatrix, TripletBuilder};
use crate::mesh::StructuredMesh;
use crate::scalar::Real;

/// Thermal conductivity field.
#[derive(Clone, Debug, PartialEq)]
pub enum Conductivity<T> {
    Constant(T),
    /// One value per mesh node; elements use the nodal average.
    Nodal(Vec<T>),
}

/// Mass term used inside the state operator `A`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MassTreatment {
    /// Row-sum lumping. Together with the right-angled triangulation this
    /// makes `A` an M-matrix, which keeps the recovered solid fraction in
    /// `[0, 1]`.
    #[default]
    Lumped,
    Consistent,
}

#[derive(Clone, Debug)]
pub struct StateOperators<T> {
    n_nodes: usize,
    free: Vec<usize>,
    free_index: Vec<Option<usize>>,
    dirichlet_mask: Vec<bool>,
    /// State operator on free nodes.
    pub a: CsrMatrix<T>,
    /// Consistent mass matrix on all nodes.
    pub mass: CsrMatrix<T>,
    /// Row sums of `mass`, all nodes.
    pub lumped_mass: Vec<T>,
    /// Consistent mass plus unit-conductivity stiffness, all nodes.
    pub h1: CsrMatrix<T>,
    /// Control degrees of freedom: nodes on the closed control boundary.
    pub control_nodes: Vec<usize>,
    /// Lumped boundary mass weight of each control dof.
    pub control_weights: Vec<T>,
    /// Free-node row receiving each control dof's load, if any.
    control_rows: Vec<Option<usize>>,
    pub tau: T,
    pub kappa: Vec<T>,
    factor: BandCholesky<T>,
}

#[derive(Clone, Debug)]
struct ElementMatrices<T> {
    mass: Vec<T>,
    stiffness: Vec<T>,
}

fn element_matrices<T: Real>(mesh: &StructuredMesh<T>, e: usize) -> ElementMatrices<T> {
    let nodes = mesh.element(e);
    let k = nodes.len();
    let meas = mesh.element_measure(e);
    let mut mass = vec![T::zero(); k * k];
    let mut stiffness = vec![T::zero(); k * k];
    if mesh.dim() == 1 {
        let h = meas;
        let six = T::lit(6.0);
        mass.copy_from_slice(&[
            T::lit(2.0) * h / six,
            h / six,
            h / six,
            T::lit(2.0) * h / six,
        ]);
        let s = T::one() / h;
        stiffness.copy_from_slice(&[s, -s, -s, s]);
    } else {
        let p: Vec<_> = nodes.iter().map(|&n| mesh.node(n)).collect();
        let twice_area =
            (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        let grads: Vec<[T; 2]> = (0..3)
            .map(|i| {
                let (j, l) = ((i + 1) % 3, (i + 2) % 3);
                [
                    (p[j][1] - p[l][1]) / twice_area,
                    (p[l][0] - p[j][0]) / twice_area,
                ]
            })
            .collect();
        let twelve = T::lit(12.0);
        for i in 0..3 {
            for j in 0..3 {
                let f = if i == j { T::lit(2.0) } else { T::one() };
                mass[i * 3 + j] = f * meas / twelve;
                stiffness[i * 3 + j] =
                    meas * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
            }
        }
    }
    ElementMatrices { mass, stiffness }
}

fn nodal_kappa<T: Real>(mesh: &StructuredMesh<T>, kappa: &Conductivity<T>) -> Result<Vec<T>> {
    let values = match kappa {
        Conductivity::Constant(k) => vec![*k; mesh.n_nodes()],
        Conductivity::Nodal(v) => {
            check_len("conductivity field", mesh.n_nodes(), v.len())?;
            v.clone()
        }
    };
    if let Some((i, k)) = values
        .iter()
        .enumerate()
        .find(|(_, &k)| !(k > T::zero()) || !k.is_finite())
    {
        return Err(Error::invalid(format!(
            "conductivity must be positive everywhere (node {i} has {k})"
        )));
    }
    Ok(values)
}

/// Consistent boundary mass on the closed control boundary, indexed like
/// `mesh.control_boundary_nodes()`.
///
/// Point facets in 1D contribute their counting measure, so a single
/// control node gives the 1x1 identity.
pub fn boundary_mass<T: Real>(mesh: &StructuredMesh<T>) -> Result<CsrMatrix<T>> {
    let nodes = mesh.control_boundary_nodes();
    if nodes.is_empty() {
        return Err(Error::invalid("mesh has no control boundary"));
    }
    let local = |n: usize| nodes.binary_search(&n).expect("control node");
    let mut b = TripletBuilder::new(nodes.len(), nodes.len());
    for f in mesh.control_facets() {
        match f.nodes.as_slice() {
            &[n] => b.push(local(n), local(n), f.measure),
            &[n0, n1] => {
                let (i, j) = (local(n0), local(n1));
                let d = f.measure / T::lit(3.0);
                let o = f.measure / T::lit(6.0);
                b.push(i, i, d);
                b.push(i, j, o);
                b.push(j, i, o);
                b.push(j, j, d);
            }
            _ => unreachable!("facets have one or two nodes"),
        }
    }
    Ok(b.build())
}

pub fn assemble_operators<T: Real>(
    mesh: &StructuredMesh<T>,
    kappa: &Conductivity<T>,
    tau: T,
) -> Result<StateOperators<T>> {
    assemble_operators_with(mesh, kappa, tau, MassTreatment::default())
}

pub fn assemble_operators_with<T: Real>(
    mesh: &StructuredMesh<T>,
    kappa: &Conductivity<T>,
    tau: T,
    mass_treatment: MassTreatment,
) -> Result<StateOperators<T>> {
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(Error::invalid(format!("time step must be positive, got {tau}")));
    }
    let kappa = nodal_kappa(mesh, kappa)?;
    let n = mesh.n_nodes();
    let dirichlet_mask: Vec<bool> = (0..n).map(|i| mesh.is_dirichlet(i)).collect();
    let free: Vec<usize> = (0..n).filter(|&i| !dirichlet_mask[i]).collect();
    if free.is_empty() {
        return Err(Error::invalid("every node is Dirichlet"));
    }
    let mut free_index = vec![None; n];
    for (k, &i) in free.iter().enumerate() {
        free_index[i] = Some(k);
    }

    let mut mass_b = TripletBuilder::new(n, n);
    let mut h1_b = TripletBuilder::new(n, n);
    let mut a_b = TripletBuilder::new(free.len(), free.len());
    let mut lumped_mass = vec![T::zero(); n];
    for e in 0..mesh.n_elements() {
        let nodes = mesh.element(e);
        let k = nodes.len();
        let em = element_matrices(mesh, e);
        let kappa_e = nodes.iter().map(|&i| kappa[i]).sum::<T>() / T::from_usize_lossy(k);
        for (li, &i) in nodes.iter().enumerate() {
            for (lj, &j) in nodes.iter().enumerate() {
                let m = em.mass[li * k + lj];
                let s = em.stiffness[li * k + lj];
                mass_b.push(i, j, m);
                h1_b.push(i, j, m + s);
                lumped_mass[i] += m;
                if let (Some(fi), Some(fj)) = (free_index[i], free_index[j]) {
                    let mass_part = match mass_treatment {
                        MassTreatment::Consistent => m,
                        MassTreatment::Lumped if li == lj => {
                            em.mass[li * k..(li + 1) * k].iter().copied().sum()
                        }
                        MassTreatment::Lumped => T::zero(),
                    };
                    let v = mass_part + tau * kappa_e * s;
                    if v != T::zero() || li == lj {
                        a_b.push(fi, fj, v);
                    }
                }
            }
        }
    }
    let a = a_b.build();
    let factor = BandCholesky::factor(&a)?;

    let control_nodes = mesh.control_boundary_nodes();
    let control_weights = if control_nodes.is_empty() {
        Vec::new()
    } else {
        let s = boundary_mass(mesh)?;
        (0..s.nrows()).map(|i| s.row(i).map(|(_, v)| v).sum()).collect()
    };
    let control_rows = control_nodes.iter().map(|&i| free_index[i]).collect();

    Ok(StateOperators {
        n_nodes: n,
        free,
        free_index,
        dirichlet_mask,
        a,
        mass: mass_b.build(),
        lumped_mass,
        h1: h1_b.build(),
        control_nodes,
        control_weights,
        control_rows,
        tau,
        kappa,
        factor,
    })
}

impl<T: Real> StateOperators<T> {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn n_controls(&self) -> usize {
        self.control_nodes.len()
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free
    }

    pub fn free_index(&self, node: usize) -> Option<usize> {
        self.free_index[node]
    }

    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet_mask
    }

    /// Free-node row fed by control dof `j` (None for Dirichlet corners).
    pub fn control_row(&self, j: usize) -> Option<usize> {
        self.control_rows[j]
    }

    /// Cholesky factor of `A`.
    pub fn a_factor(&self) -> &BandCholesky<T> {
        &self.factor
    }

    /// Lumped mass restricted to free nodes.
    pub fn free_lumped_mass(&self) -> Vec<T> {
        self.free.iter().map(|&i| self.lumped_mass[i]).collect()
    }

    pub fn restrict(&self, full: &[T]) -> Vec<T> {
        self.free.iter().map(|&i| full[i]).collect()
    }

    /// Embeds a free-node vector, filling Dirichlet nodes with `fill`.
    pub fn extend(&self, reduced: &[T], fill: T) -> Vec<T> {
        let mut out = vec![fill; self.n_nodes];
        for (k, &i) in self.free.iter().enumerate() {
            out[i] = reduced[k];
        }
        out
    }

    /// Load vector `B u` on the free nodes: `tau * s_j * u_j` at the row of
    /// each control dof.
    pub fn apply_b(&self, u: &[T]) -> Result<Vec<T>> {
        check_len("control vector", self.n_controls(), u.len())?;
        let mut out = vec![T::zero(); self.n_free()];
        for (j, &uj) in u.iter().enumerate() {
            if let Some(r) = self.control_rows[j] {
                out[r] += self.tau * self.control_weights[j] * uj;
            }
        }
        Ok(out)
    }

    /// `B^T p` for a free-node vector `p`.
    pub fn apply_bt(&self, p: &[T]) -> Result<Vec<T>> {
        check_len("adjoint vector", self.n_free(), p.len())?;
        Ok((0..self.n_controls())
            .map(|j| match self.control_rows[j] {
                Some(r) => self.tau * self.control_weights[j] * p[r],
                None => T::zero(),
            })
            .collect())
    }

    /// `B` as an explicit sparse matrix (free rows x control columns).
    pub fn b_matrix(&self) -> CsrMatrix<T> {
        let mut b = TripletBuilder::new(self.n_free(), self.n_controls());
        for j in 0..self.n_controls() {
            if let Some(r) = self.control_rows[j] {
                b.push(r, j, self.tau * self.control_weights[j]);
            }
        }
        b.build()
    }

    /// Squared discrete Sobolev norm `w^T (M + K) w` over all nodes.
    pub fn h1_norm_sq(&self, w: &[T]) -> Result<T> {
        check_len("h1_norm_sq", self.n_nodes, w.len())?;
        self.h1.bilinear(w, w)
    }

    /// Squared discrete L2 norm with the consistent mass.
    pub fn l2_norm_sq(&self, w: &[T]) -> Result<T> {
        check_len("l2_norm_sq", self.n_nodes, w.len())?;
        self.mass.bilinear(w, w)
    }

    /// Lumped inner product over all nodes.
    pub fn lumped_dot(&self, a: &[T], b: &[T]) -> Result<T> {
        check_len("lumped_dot", self.n_nodes, a.len())?;
        check_len("lumped_dot", self.n_nodes, b.len())?;
        Ok(self
            .lumped_mass
            .iter()
            .zip(a.iter().zip(b))
            .map(|(&l, (&x, &y))| l * x * y)
            .sum())
    }

    /// Boundary-weighted control norm squared.
    pub fn control_norm_sq(&self, u: &[T]) -> Result<T> {
        check_len("control vector", self.n_controls(), u.len())?;
        Ok(self
            .control_weights
            .iter()
            .zip(u)
            .map(|(&s, &x)| s * x * x)
            .sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_interval_mesh, build_rectangle_mesh, IntervalTags, RectangleTags};
    use crate::mesh::BoundaryTag::*;

    fn neumann_interval(n: usize, len: f64) -> StructuredMesh<f64> {
        build_interval_mesh(
            len,
            n,
            IntervalTags {
                left: Neumann,
                right: Neumann,
            },
        )
        .unwrap()
    }

    #[test]
    fn hand_assembled_three_node_system() {
        // h = 0.5: M = h/6 [2 1 0; 1 4 1; 0 1 2], K = 1/h [1 -1 0; -1 2 -1; 0 -1 1]
        let mesh = neumann_interval(2, 1.0);
        let ops = assemble_operators_with(
            &mesh,
            &Conductivity::Constant(1.0),
            0.01,
            MassTreatment::Consistent,
        )
        .unwrap();
        let h = 0.5f64;
        let m = [
            [2.0, 1.0, 0.0],
            [1.0, 4.0, 1.0],
            [0.0, 1.0, 2.0],
        ];
        let k = [
            [1.0, -1.0, 0.0],
            [-1.0, 2.0, -1.0],
            [0.0, -1.0, 1.0],
        ];
        for i in 0..3 {
            for j in 0..3 {
                let expect = h / 6.0 * m[i][j] + 0.01 * k[i][j] / h;
                assert!((ops.a.get(i, j) - expect).abs() < 1e-15, "({i},{j})");
                assert!((ops.mass.get(i, j) - h / 6.0 * m[i][j]).abs() < 1e-15);
            }
        }
        let lumped = assemble_operators(&mesh, &Conductivity::Constant(1.0), 0.01).unwrap();
        assert!((lumped.a.get(0, 0) - (0.25 + 0.02)).abs() < 1e-15);
        assert!((lumped.a.get(0, 1) + 0.02).abs() < 1e-15);
    }

    #[test]
    fn stiffness_annihilates_constants() {
        let mesh = build_rectangle_mesh(2.0, 1.0, 4, 3, RectangleTags::uniform(Neumann)).unwrap();
        for treatment in [MassTreatment::Lumped, MassTreatment::Consistent] {
            let ops =
                assemble_operators_with(&mesh, &Conductivity::Constant(1.0), 0.3, treatment).unwrap();
            let one = vec![1.0f64; mesh.n_nodes()];
            let a1 = ops.a.mul_vec(&one).unwrap();
            for (i, v) in a1.iter().enumerate() {
                assert!((v - ops.lumped_mass[i]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn rejects_nonpositive_kappa_and_tau() {
        let mesh = neumann_interval(4, 1.0);
        assert!(assemble_operators(&mesh, &Conductivity::Constant(0.0), 0.1).is_err());
        let mut field = vec![1.0; 5];
        field[2] = -1.0;
        assert!(assemble_operators(&mesh, &Conductivity::Nodal(field), 0.1).is_err());
        assert!(assemble_operators(&mesh, &Conductivity::Constant(1.0), 0.0).is_err());
    }

    #[test]
    fn dirichlet_rows_are_eliminated() {
        let mesh = build_interval_mesh(
            1.0,
            5,
            IntervalTags {
                left: Control,
                right: Dirichlet,
            },
        )
        .unwrap();
        let ops = assemble_operators(&mesh, &Conductivity::Constant(1.0), 0.1).unwrap();
        assert_eq!(ops.n_free(), 5);
        assert_eq!(ops.a.nrows(), 5);
        assert_eq!(ops.free_index(5), None);
        assert_eq!(ops.dirichlet_mask(), &[false, false, false, false, false, true]);
    }

    #[test]
    fn boundary_mass_point_and_edges() {
        let mesh = build_interval_mesh(
            4.0,
            10,
            IntervalTags {
                left: Control,
                right: Dirichlet,
            },
        )
        .unwrap();
        let s = boundary_mass(&mesh).unwrap();
        assert_eq!(s.to_dense(), vec![vec![1.0]]);

        // control edge of two elements, h = 0.5
        let tags = RectangleTags {
            left: Control,
            right: Neumann,
            bottom: Neumann,
            top: Neumann,
        };
        let r = build_rectangle_mesh(1.0, 1.0, 2, 2, tags).unwrap();
        let s = boundary_mass(&r).unwrap().to_dense();
        let h = 0.5f64;
        let expect = [
            [h / 3.0, h / 6.0, 0.0],
            [h / 6.0, 2.0 * h / 3.0, h / 6.0],
            [0.0, h / 6.0, h / 3.0],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((s[i][j] - expect[i][j]).abs() < 1e-15);
            }
        }

        let none = neumann_interval(3, 1.0);
        assert!(boundary_mass(&none).is_err());
    }

    #[test]
    fn example_two_control_edge_measure() {
        let tags = RectangleTags {
            left: Control,
            right: Neumann,
            bottom: Dirichlet,
            top: Dirichlet,
        };
        let mesh = build_rectangle_mesh(2.0, 4.0, 50, 100, tags).unwrap();
        let s = boundary_mass(&mesh).unwrap();
        let one = vec![1.0f64; s.nrows()];
        assert!((s.bilinear(&one, &one).unwrap() - 4.0).abs() < 1e-12 * 4.0);
    }

    #[test]
    fn b_load_sums_to_tau_times_measure() {
        let tags = RectangleTags {
            left: Control,
            right: Neumann,
            bottom: Neumann,
            top: Neumann,
        };
        let mesh = build_rectangle_mesh(1.0, 3.0, 3, 6, tags).unwrap();
        let ops = assemble_operators(&mesh, &Conductivity::Constant(1.0), 0.2).unwrap();
        let load = ops.apply_b(&vec![1.0; ops.n_controls()]).unwrap();
        assert!((load.iter().sum::<f64>() - 0.2 * 3.0).abs() < 1e-13);
        let b = ops.b_matrix();
        for j in 0..ops.n_controls() {
            let col: f64 = (0..b.nrows()).map(|i| b.get(i, j).abs()).sum();
            assert!(col > 0.0);
        }
    }

    #[test]
    fn h1_norm_values() {
        let mesh = neumann_interval(16, 1.0);
        let ops = assemble_operators(&mesh, &Conductivity::Constant(1.0), 0.1).unwrap();
        assert_eq!(ops.h1_norm_sq(&vec![0.0; 17]).unwrap(), 0.0);
        let x: Vec<f64> = mesh.coords().iter().map(|p| p[0]).collect();
        // x lies in the P1 space, so the consistent quadrature is exact
        assert!((ops.h1_norm_sq(&x).unwrap() - 4.0 / 3.0).abs() < 1e-13);
        let c = vec![3.0; 17];
        assert!((ops.h1_norm_sq(&c).unwrap() - 9.0).abs() < 1e-12);
        assert!(ops.h1_norm_sq(&[1.0]).is_err());
    }
}

//! Inner problem: for a fixed control, minimize the relaxed objective over
//! the solid fraction (temperature eliminated through the state equation)
//! subject to `xi >= 0` and `y + eps xi >= 0` on free nodes.
//!
//! With `y = A^{-1}(L xi + b)` the objective is strictly convex in `xi`, so
//! the optimality system is solved by a primal-dual active set iteration.
//! Each iteration solves one banded linear system in interleaved unknowns
//! `(q_r, p_r)` per free node, where `q_r` is the temperature or the
//! multiplier of `y + eps xi >= 0` depending on the node's kind.

use crate::error::{Error, Result};
use crate::fem::StateOperators;
use crate::linalg::{BandLu, CsrMatrix};
use crate::scalar::Real;

use super::ControlProblemData;

/// Which inequality constraints are enforced as equalities at a free node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    /// Neither: `xi` from the projection formula, no multiplier.
    Free,
    /// `xi = 0`.
    NoSolid,
    /// `y + eps xi = 0`.
    Contact,
    /// `xi = 0` and `y = 0`.
    Both,
}

impl NodeKind {
    fn from_flags(xi_active: bool, g_active: bool) -> Self {
        match (xi_active, g_active) {
            (false, false) => NodeKind::Free,
            (true, false) => NodeKind::NoSolid,
            (false, true) => NodeKind::Contact,
            (true, true) => NodeKind::Both,
        }
    }

    fn xi_active(self) -> bool {
        matches!(self, NodeKind::NoSolid | NodeKind::Both)
    }

    fn g_active(self) -> bool {
        matches!(self, NodeKind::Contact | NodeKind::Both)
    }

    /// Guess from a solution of the (unrelaxed) state system.
    pub(crate) fn from_state<T: Real>(y: T, xi: T) -> Self {
        if y > T::zero() {
            NodeKind::NoSolid
        } else if xi > T::zero() {
            NodeKind::Contact
        } else {
            NodeKind::Free
        }
    }
}

/// Affine maps `(q, p) -> y, xi, lam`, each as `[coef_q, coef_p, const]`.
struct Coefs<T> {
    y: [T; 3],
    xi: [T; 3],
    lam: [T; 3],
}

/// Coupling of `p` into the state row of a node with both bounds active.
/// Without it clusters of such nodes give empty rows; the solid fraction
/// stays exactly 0 in the reported solution.
const BOTH_PROXIMAL: f64 = 1e-12;

fn coefs<T: Real>(kind: NodeKind, xi_d: T, gamma: T, eps: T) -> Coefs<T> {
    let (zero, one) = (T::zero(), T::one());
    match kind {
        NodeKind::Free => {
            let a = one / (one + T::lit(2.0) * gamma * eps);
            Coefs {
                y: [one, zero, zero],
                xi: [-gamma * a, a, a * xi_d],
                lam: [zero; 3],
            }
        }
        NodeKind::NoSolid => Coefs {
            y: [one, zero, zero],
            xi: [zero; 3],
            lam: [zero; 3],
        },
        NodeKind::Contact => {
            // q is the multiplier; y = -eps xi
            let b = one / (one + gamma * eps);
            let xi = [eps * b, b, b * xi_d];
            Coefs {
                y: xi.map(|c| -eps * c),
                xi,
                lam: [one, zero, zero],
            }
        }
        NodeKind::Both => Coefs {
            y: [zero; 3],
            xi: [zero; 3],
            lam: [one, zero, zero],
        },
    }
}

/// Step-independent pieces of the inner problem on free nodes.
pub(crate) struct InnerProblem<'a, T> {
    pub ops: &'a StateOperators<T>,
    pub data: &'a ControlProblemData<T>,
    h_ff: CsrMatrix<T>,
    /// `(H y_d)` restricted to free nodes.
    g: Vec<T>,
    l: Vec<T>,
    xi_d: Vec<T>,
    /// `L (y_bar - xi_bar)` on free nodes.
    b0: Vec<T>,
    band: usize,
    pub max_iterations: usize,
}

pub(crate) struct InnerSolution<T> {
    pub y: Vec<T>,
    pub xi: Vec<T>,
    pub p: Vec<T>,
    pub lam: Vec<T>,
    pub kinds: Vec<NodeKind>,
    pub lu: BandLu<T>,
    pub iterations: usize,
}

impl<'a, T: Real> InnerProblem<'a, T> {
    pub fn new(data: &'a ControlProblemData<T>, ops: &'a StateOperators<T>) -> Result<Self> {
        data.check(ops)?;
        let free = ops.free_nodes();
        let h_ff = ops.h1.principal_submatrix(free);
        let g = ops.restrict(&ops.h1.mul_vec(&data.y_d)?);
        let l = ops.free_lumped_mass();
        let xi_d = ops.restrict(&data.xi_d);
        let b0 = free
            .iter()
            .zip(&l)
            .map(|(&i, &li)| li * (data.advected.y_bar[i] - data.advected.xi_bar[i]))
            .collect();
        let band = ops.a.half_bandwidth().max(h_ff.half_bandwidth());
        Ok(Self {
            ops,
            data,
            h_ff,
            g,
            l,
            xi_d,
            b0,
            band,
            max_iterations: 200,
        })
    }

    pub fn n_free(&self) -> usize {
        self.l.len()
    }

    fn assemble(&self, kinds: &[NodeKind], u: &[T], gamma: T, eps: T) -> Result<(BandLu<T>, Vec<T>)> {
        let n = self.n_free();
        let w = 2 * self.band + 1;
        let mut m = BandLu::zeros(2 * n, w, w);
        let mut rhs = self.ops.apply_b(u)?;
        rhs.iter_mut().zip(&self.b0).for_each(|(r, &b)| *r += b);
        let mut full_rhs = vec![T::zero(); 2 * n];
        let c: Vec<Coefs<T>> = (0..n)
            .map(|r| coefs(kinds[r], self.xi_d[r], gamma, eps))
            .collect();
        for r in 0..n {
            let (cr, l) = (&c[r], self.l[r]);
            // state equation
            let mut rhs1 = rhs[r] + l * cr.xi[2];
            for (col, a) in self.ops.a.row(r) {
                m.add(2 * r, 2 * col, a * c[col].y[0]);
                m.add(2 * r, 2 * col + 1, a * c[col].y[1]);
                rhs1 -= a * c[col].y[2];
            }
            m.add(2 * r, 2 * r, -l * cr.xi[0]);
            m.add(2 * r, 2 * r + 1, -l * cr.xi[1]);
            if kinds[r] == NodeKind::Both {
                m.add(2 * r, 2 * r + 1, -l * T::lit(BOTH_PROXIMAL));
            }
            full_rhs[2 * r] = rhs1;
            // adjoint equation
            let mut rhs2 = self.g[r] - gamma * l * cr.xi[2] + l * cr.lam[2];
            for (col, a) in self.ops.a.row(r) {
                m.add(2 * r + 1, 2 * col + 1, a);
            }
            for (col, h) in self.h_ff.row(r) {
                m.add(2 * r + 1, 2 * col, h * c[col].y[0]);
                m.add(2 * r + 1, 2 * col + 1, h * c[col].y[1]);
                rhs2 -= h * c[col].y[2];
            }
            m.add(2 * r + 1, 2 * r, gamma * l * cr.xi[0] - l * cr.lam[0]);
            m.add(2 * r + 1, 2 * r + 1, gamma * l * cr.xi[1] - l * cr.lam[1]);
            full_rhs[2 * r + 1] = rhs2;
        }
        m.factor()?;
        Ok((m, full_rhs))
    }

    /// Solves the inner problem at `u`, starting from `kinds`.
    pub fn solve(&self, u: &[T], gamma: T, eps: T, kinds: &[NodeKind]) -> Result<InnerSolution<T>> {
        let n = self.n_free();
        let mut kinds = kinds.to_vec();
        let mut seen: Vec<Vec<NodeKind>> = Vec::new();
        for it in 1..=self.max_iterations {
            let (lu, rhs) = self.assemble(&kinds, u, gamma, eps)?;
            let z = lu.solve(&rhs)?;
            let mut sol = InnerSolution {
                y: vec![T::zero(); n],
                xi: vec![T::zero(); n],
                p: vec![T::zero(); n],
                lam: vec![T::zero(); n],
                kinds: kinds.clone(),
                lu,
                iterations: it,
            };
            let two = T::lit(2.0);
            let mut next = Vec::with_capacity(n);
            for r in 0..n {
                let cr = coefs(kinds[r], self.xi_d[r], gamma, eps);
                let (q, p) = (z[2 * r], z[2 * r + 1]);
                let y = cr.y[0] * q + cr.y[1] * p + cr.y[2];
                let xi = cr.xi[0] * q + cr.xi[1] * p + cr.xi[2];
                let lam = cr.lam[0] * q + cr.lam[1] * p + cr.lam[2];
                let eta = (T::one() + two * gamma * eps) * xi - self.xi_d[r] + gamma * y - p
                    - eps * lam;
                let g = y + eps * xi;
                let k = kinds[r];
                let xi_act = if k.xi_active() { eta > T::zero() } else { xi < T::zero() };
                let g_act = if k.g_active() { lam > T::zero() } else { g < T::zero() };
                next.push(NodeKind::from_flags(xi_act, g_act));
                sol.y[r] = y;
                sol.xi[r] = xi;
                sol.p[r] = p;
                sol.lam[r] = lam;
            }
            if next == kinds {
                return Ok(sol);
            }
            seen.push(std::mem::replace(&mut kinds, next));
            if seen.contains(&kinds) {
                log::debug!("inner active set cycled after {it} iterations");
                break;
            }
        }
        Err(Error::NotConverged {
            solver: "inner active set",
            iterations: seen.len(),
            residual: f64::NAN,
            history: Vec::new(),
        })
    }

    /// `d p_r / d u_j` for every control dof `j` fed by a free row, using the
    /// factorization of the current active set.
    pub fn adjoint_sensitivity(&self, sol: &InnerSolution<T>, j: usize) -> Result<Vec<T>> {
        let n = self.n_free();
        let mut out = vec![T::zero(); n];
        let Some(r) = self.ops.control_row(j) else {
            return Ok(out);
        };
        let mut e = vec![T::zero(); 2 * n];
        e[2 * r] = self.ops.tau * self.ops.control_weights[j];
        let z = sol.lu.solve(&e)?;
        for (k, o) in out.iter_mut().enumerate() {
            *o = z[2 * k + 1];
        }
        Ok(out)
    }
}

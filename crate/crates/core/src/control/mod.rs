//! Per-step optimal control: minimize
//!
//! ```text
//! J(y, xi, u) = 1/2 |y - y_d|_H1^2 + 1/2 |xi - xi_d|^2 + nu/2 |u|_S^2
//! ```
//!
//! subject to the state system, approached through the relaxed problems
//! `min J + gamma (xi, y + eps xi)` with `xi >= 0`, `y + eps xi >= 0`,
//! `u >= 0`, for an increasing penalty `gamma` and shrinking `eps`.
//!
//! Solid-fraction pairings use the lumped mass, so the relaxed problem's
//! projections act node by node.

mod inner;
mod path;

pub use inner::NodeKind;
pub use path::{
    reduced_gradient, reduced_objective, solve_penalized_step, ActiveSetContext, PathError,
    PathOptions, PathSolution, PathTraceEntry,
};

use crate::error::{check_len, Error, Result};
use crate::fem::StateOperators;
use crate::scalar::{norm2, Real};
use crate::semilag::AdvectedPair;

/// Data of one time step's control problem.
#[derive(Clone, Debug)]
pub struct ControlProblemData<T> {
    pub y_d: Vec<T>,
    pub xi_d: Vec<T>,
    pub nu: T,
    pub advected: AdvectedPair<T>,
}

impl<T: Real> ControlProblemData<T> {
    pub fn new(y_d: Vec<T>, xi_d: Vec<T>, nu: T, advected: AdvectedPair<T>) -> Result<Self> {
        if !(nu > T::zero()) {
            return Err(Error::invalid(format!("control weight must be positive, got {nu}")));
        }
        check_len("desired solid fraction", y_d.len(), xi_d.len())?;
        check_len("advected temperature", y_d.len(), advected.y_bar.len())?;
        check_len("advected solid fraction", y_d.len(), advected.xi_bar.len())?;
        Ok(Self {
            y_d,
            xi_d,
            nu,
            advected,
        })
    }

    fn check(&self, ops: &StateOperators<T>) -> Result<()> {
        check_len("desired temperature", ops.n_nodes(), self.y_d.len())?;
        check_len("desired solid fraction", ops.n_nodes(), self.xi_d.len())?;
        check_len("advected temperature", ops.n_nodes(), self.advected.y_bar.len())?;
        check_len("advected solid fraction", ops.n_nodes(), self.advected.xi_bar.len())
    }
}

/// Relaxation width as a function of the penalty: `1 / (offset + gamma^power)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonRule<T> {
    pub offset: T,
    pub power: T,
}

impl<T: Real> EpsilonRule<T> {
    pub fn quartic() -> Self {
        Self {
            offset: T::lit(1e3),
            power: T::lit(4.0),
        }
    }

    pub fn eval(&self, gamma: T) -> T {
        T::one() / (self.offset + gamma.powf(self.power))
    }
}

/// Penalty weights and relaxation widths, in path order.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSchedule<T> {
    pub gammas: Vec<T>,
    pub epsilons: Vec<T>,
}

impl<T: Real> PathSchedule<T> {
    /// `gamma_k = gamma0 * growth^k` for `k = 1..=count`.
    pub fn geometric(gamma0: T, growth: T, count: usize, rule: EpsilonRule<T>) -> Result<Self> {
        let gammas: Vec<T> = (1..=count)
            .map(|k| gamma0 * growth.powi(k as i32))
            .collect();
        let epsilons = gammas.iter().map(|&g| rule.eval(g)).collect();
        let s = Self { gammas, epsilons };
        s.validate()?;
        Ok(s)
    }

    /// `gamma_k = 1e-3 * 1.5^k`, `k = 1..=40`, quartic relaxation.
    pub fn standard() -> Self {
        Self::geometric(T::lit(1e-3), T::lit(1.5), 40, EpsilonRule::quartic())
            .expect("standard schedule is valid")
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() {
            return Err(Error::invalid("path schedule is empty"));
        }
        check_len("path schedule", self.gammas.len(), self.epsilons.len())?;
        if self.gammas.iter().chain(&self.epsilons).any(|&v| !(v > T::zero()) || !v.is_finite()) {
            return Err(Error::invalid("path parameters must be positive and finite"));
        }
        if self.gammas.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("penalty weights must increase strictly"));
        }
        if self.epsilons.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::invalid("relaxation widths must decrease strictly"));
        }
        let n = self.len();
        if n > 1 && !(self.gammas[n - 1] * self.epsilons[n - 1] < self.gammas[0] * self.epsilons[0]) {
            return Err(Error::invalid("gamma * eps must decrease along the path"));
        }
        Ok(())
    }
}

/// Iterate of the relaxed optimality system. Nodal fields cover all nodes;
/// `p` and `lam` vanish on Dirichlet nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct KktState<T> {
    pub y: Vec<T>,
    pub xi: Vec<T>,
    pub u: Vec<T>,
    pub p: Vec<T>,
    pub lam: Vec<T>,
    pub gamma: T,
    pub epsilon: T,
}

/// The three terms of `J`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JBreakdown<T> {
    pub state: T,
    pub xi: T,
    pub control: T,
}

impl<T: Real> JBreakdown<T> {
    pub fn total(&self) -> T {
        self.state + self.xi + self.control
    }
}

pub fn evaluate_j_terms<T: Real>(
    data: &ControlProblemData<T>,
    ops: &StateOperators<T>,
    y: &[T],
    xi: &[T],
    u: &[T],
) -> Result<JBreakdown<T>> {
    data.check(ops)?;
    check_len("temperature", ops.n_nodes(), y.len())?;
    check_len("solid fraction", ops.n_nodes(), xi.len())?;
    let half = T::lit(0.5);
    let dy: Vec<T> = y.iter().zip(&data.y_d).map(|(&a, &b)| a - b).collect();
    let dxi: Vec<T> = xi.iter().zip(&data.xi_d).map(|(&a, &b)| a - b).collect();
    Ok(JBreakdown {
        state: half * ops.h1_norm_sq(&dy)?,
        xi: half * ops.lumped_dot(&dxi, &dxi)?,
        control: half * data.nu * ops.control_norm_sq(u)?,
    })
}

pub fn evaluate_j<T: Real>(
    data: &ControlProblemData<T>,
    ops: &StateOperators<T>,
    y: &[T],
    xi: &[T],
    u: &[T],
) -> Result<T> {
    Ok(evaluate_j_terms(data, ops, y, xi, u)?.total())
}

/// Penalty pairing `(xi, y + eps xi)`.
pub fn penalty_term<T: Real>(ops: &StateOperators<T>, y: &[T], xi: &[T], epsilon: T) -> Result<T> {
    check_len("temperature", ops.n_nodes(), y.len())?;
    let shifted: Vec<T> = y.iter().zip(xi).map(|(&a, &b)| a + epsilon * b).collect();
    ops.lumped_dot(xi, &shifted)
}

pub fn evaluate_j_gamma<T: Real>(
    data: &ControlProblemData<T>,
    ops: &StateOperators<T>,
    y: &[T],
    xi: &[T],
    u: &[T],
    gamma: T,
    epsilon: T,
) -> Result<T> {
    if !(gamma > T::zero() && epsilon > T::zero()) {
        return Err(Error::invalid("penalty and relaxation must be positive"));
    }
    Ok(evaluate_j(data, ops, y, xi, u)? + gamma * penalty_term(ops, y, xi, epsilon)?)
}

/// Control update `max(0, B^T p / (nu S))`, i.e. `max(0, tau p / nu)` on
/// each control dof fed by a free node and 0 on the others.
pub fn project_control<T: Real>(ops: &StateOperators<T>, p: &[T], nu: T) -> Result<Vec<T>> {
    check_len("adjoint", ops.n_nodes(), p.len())?;
    Ok((0..ops.n_controls())
        .map(|j| match ops.control_row(j) {
            Some(_) => (ops.tau * p[ops.control_nodes[j]] / nu).max(T::zero()),
            None => T::zero(),
        })
        .collect())
}

/// Solid fraction update `max(0, (p + xi_d + eps lam - gamma y) / (1 + 2 gamma eps))`.
pub fn project_xi<T: Real>(p: T, xi_d: T, lam: T, y: T, gamma: T, epsilon: T) -> T {
    let two = T::lit(2.0);
    ((p + xi_d + epsilon * lam - gamma * y) / (T::one() + two * gamma * epsilon)).max(T::zero())
}

/// Relative residuals of the relaxed optimality system on the free nodes:
/// state equation, adjoint equation, multiplier complementarity, and the
/// solid-fraction and control projection gaps. Each is normalized by the
/// sum of the norms of its terms; the control gap by at least 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResiduals<T> {
    pub r: [T; 5],
}

impl<T: Real> KktResiduals<T> {
    pub fn max(&self) -> T {
        self.r.iter().fold(T::zero(), |m, &v| m.max(v))
    }
}

fn relative<T: Real>(num: T, den: T) -> T {
    if den > T::zero() {
        num / den
    } else {
        num
    }
}

pub fn kkt_residual<T: Real>(
    data: &ControlProblemData<T>,
    ops: &StateOperators<T>,
    s: &KktState<T>,
) -> Result<KktResiduals<T>> {
    data.check(ops)?;
    for v in [&s.y, &s.xi, &s.p, &s.lam] {
        check_len("KKT field", ops.n_nodes(), v.len())?;
    }
    let (gamma, eps) = (s.gamma, s.epsilon);
    let yf = ops.restrict(&s.y);
    let xif = ops.restrict(&s.xi);
    let pf = ops.restrict(&s.p);
    let lamf = ops.restrict(&s.lam);
    let l = ops.free_lumped_mass();
    let free = ops.free_nodes();

    let ay = ops.a.mul_vec(&yf)?;
    let lxi: Vec<T> = xif.iter().zip(&l).map(|(&a, &b)| a * b).collect();
    let mut b = ops.apply_b(&s.u)?;
    for (k, &i) in free.iter().enumerate() {
        b[k] += l[k] * (data.advected.y_bar[i] - data.advected.xi_bar[i]);
    }
    let r1: Vec<T> = (0..yf.len()).map(|k| ay[k] - lxi[k] - b[k]).collect();
    let r1 = relative(norm2(&r1), norm2(&ay) + norm2(&lxi) + norm2(&b));

    let ap = ops.a.mul_vec(&pf)?;
    let dy: Vec<T> = s.y.iter().zip(&data.y_d).map(|(&a, &b)| a - b).collect();
    let hdy = ops.restrict(&ops.h1.mul_vec(&dy)?);
    let glxi: Vec<T> = lxi.iter().map(|&v| gamma * v).collect();
    let llam: Vec<T> = lamf.iter().zip(&l).map(|(&a, &b)| a * b).collect();
    let r2: Vec<T> = (0..yf.len()).map(|k| ap[k] + hdy[k] + glxi[k] - llam[k]).collect();
    let r2 = relative(
        norm2(&r2),
        norm2(&ap) + norm2(&hdy) + norm2(&glxi) + norm2(&llam),
    );

    let g: Vec<T> = yf.iter().zip(&xif).map(|(&a, &b)| a + eps * b).collect();
    let r3: Vec<T> = g.iter().zip(&lamf).map(|(&a, &b)| a.min(b)).collect();
    let r3 = relative(norm2(&r3), norm2(&g) + norm2(&lamf));

    let target: Vec<T> = free
        .iter()
        .enumerate()
        .map(|(k, &i)| project_xi(pf[k], data.xi_d[i], lamf[k], yf[k], gamma, eps))
        .collect();
    let r4: Vec<T> = xif.iter().zip(&target).map(|(&a, &b)| a - b).collect();
    let r4 = relative(norm2(&r4), norm2(&xif) + norm2(&target));

    let ut = project_control(ops, &s.p, data.nu)?;
    let r5: Vec<T> = s.u.iter().zip(&ut).map(|(&a, &b)| a - b).collect();
    // unit floor: the target is often exactly zero
    let r5 = norm2(&r5) / (norm2(&s.u) + norm2(&ut)).max(T::one());

    Ok(KktResiduals {
        r: [r1, r2, r3, r4, r5],
    })
}

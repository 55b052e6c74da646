//! Backward characteristic tracing and P1 interpolation of the previous
//! time level.

use std::fmt;
use std::sync::Arc;

use crate::error::{check_len, Result};
use crate::mesh::{Point, StructuredMesh};
use crate::scalar::Real;

type VelocityFn<T> = dyn Fn(Point<T>, T) -> Point<T> + Send + Sync;

/// Convection velocity `v(x, t)`.
#[derive(Clone)]
pub struct VelocityField<T> {
    evaluator: Arc<VelocityFn<T>>,
    pub description: String,
}

impl<T: Real> VelocityField<T> {
    pub fn new(
        description: impl Into<String>,
        f: impl Fn(Point<T>, T) -> Point<T> + Send + Sync + 'static,
    ) -> Self {
        Self {
            evaluator: Arc::new(f),
            description: description.into(),
        }
    }

    pub fn zero() -> Self {
        Self::new("zero", |_, _| [T::zero(); 2])
    }

    pub fn constant(v: Point<T>) -> Self {
        Self::new(format!("constant ({}, {})", v[0], v[1]), move |_, _| v)
    }

    pub fn eval(&self, x: Point<T>, t: T) -> Point<T> {
        (self.evaluator)(x, t)
    }
}

impl<T> fmt::Debug for VelocityField<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VelocityField")
            .field("description", &self.description)
            .finish()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CharacteristicFeet<T> {
    pub points: Vec<Point<T>>,
    /// Fraction of nodes whose foot had to be projected back onto the domain.
    pub clamped_fraction: T,
}

/// Upwinded previous fields `y(X(x))`, `xi(X(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvectedPair<T> {
    pub y_bar: Vec<T>,
    pub xi_bar: Vec<T>,
    pub clamped_fraction: T,
}

impl<T: Real> AdvectedPair<T> {
    /// Fields that are not moved at all (zero velocity).
    pub fn at_rest(y: Vec<T>, xi: Vec<T>) -> Self {
        Self {
            y_bar: y,
            xi_bar: xi,
            clamped_fraction: T::zero(),
        }
    }
}

/// Feet `clamp(x_i - tau v(x_i, t_n))` of the characteristics arriving at
/// every node.
pub fn characteristic_feet<T: Real>(
    mesh: &StructuredMesh<T>,
    velocity: &VelocityField<T>,
    t_n: T,
    tau: T,
) -> CharacteristicFeet<T> {
    let mut clamped = 0usize;
    let points = mesh
        .coords()
        .iter()
        .map(|&x| {
            let v = velocity.eval(x, t_n);
            let mut foot = [x[0] - tau * v[0], x[1] - tau * v[1]];
            if mesh.dim() == 1 {
                foot[1] = T::zero();
            }
            let c = mesh.clamp(foot);
            if c != foot {
                clamped += 1;
            }
            c
        })
        .collect();
    CharacteristicFeet {
        points,
        clamped_fraction: T::from_usize_lossy(clamped) / T::from_usize_lossy(mesh.n_nodes()),
    }
}

pub fn advect<T: Real>(
    mesh: &StructuredMesh<T>,
    feet: &CharacteristicFeet<T>,
    y_prev: &[T],
    xi_prev: &[T],
) -> Result<AdvectedPair<T>> {
    let n = mesh.n_nodes();
    check_len("feet", n, feet.points.len())?;
    check_len("previous temperature", n, y_prev.len())?;
    check_len("previous solid fraction", n, xi_prev.len())?;
    let mut y_bar = Vec::with_capacity(n);
    let mut xi_bar = Vec::with_capacity(n);
    for &foot in &feet.points {
        let (e, w) = mesh.locate_point(foot)?;
        let nodes = mesh.element(e);
        let (mut y, mut xi) = (T::zero(), T::zero());
        if let Some(&k) = nodes.iter().find(|&&k| mesh.node(k) == foot) {
            // exact at mesh nodes, so a vanishing velocity is the identity
            y = y_prev[k];
            xi = xi_prev[k];
        } else {
            for (&k, &wk) in nodes.iter().zip(w.iter()) {
                y += wk * y_prev[k];
                xi += wk * xi_prev[k];
            }
        }
        y_bar.push(y);
        xi_bar.push(xi);
    }
    Ok(AdvectedPair {
        y_bar,
        xi_bar,
        clamped_fraction: feet.clamped_fraction,
    })
}

//! Structured interval and rectangle meshes with boundary classification.
//!
//! Nodes are numbered lexicographically with `x` fastest. In 2D every grid
//! cell `(i, j)` is split along the diagonal from its lower-left to its
//! upper-right corner into elements `2c` = (ll, lr, ur) and `2c + 1` =
//! (ll, ur, ul), where `c = j * nx + i`.

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type Point<T> = [T; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Interior,
    Dirichlet,
    Neumann,
    Control,
}

impl BoundaryTag {
    /// Corner resolution order: Dirichlet > Control > Neumann.
    fn priority(self) -> u8 {
        match self {
            BoundaryTag::Dirichlet => 3,
            BoundaryTag::Control => 2,
            BoundaryTag::Neumann => 1,
            BoundaryTag::Interior => 0,
        }
    }

    fn stronger(self, other: BoundaryTag) -> BoundaryTag {
        if other.priority() > self.priority() {
            other
        } else {
            self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IntervalTags {
    pub left: BoundaryTag,
    pub right: BoundaryTag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RectangleTags {
    pub left: BoundaryTag,
    pub right: BoundaryTag,
    pub bottom: BoundaryTag,
    pub top: BoundaryTag,
}

impl RectangleTags {
    pub fn uniform(tag: BoundaryTag) -> Self {
        Self {
            left: tag,
            right: tag,
            bottom: tag,
            top: tag,
        }
    }
}

/// A boundary facet: a single node in 1D, a two-node edge in 2D.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryFacet<T> {
    pub nodes: Vec<usize>,
    pub side: Side,
    /// Length of the edge; 1 for point facets (counting measure).
    pub measure: T,
}

#[derive(Clone, Debug)]
pub struct StructuredMesh<T> {
    dim: usize,
    lower: Point<T>,
    upper: Point<T>,
    cells: [usize; 2],
    spacing: Point<T>,
    coords: Vec<Point<T>>,
    tags: Vec<BoundaryTag>,
    elements: Vec<usize>,
    side_tags: Vec<(Side, BoundaryTag)>,
    facets: Vec<BoundaryFacet<T>>,
}

impl<T: Real> StructuredMesh<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len() / (self.dim + 1)
    }

    pub fn nodes_per_element(&self) -> usize {
        self.dim + 1
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let k = self.dim + 1;
        &self.elements[e * k..(e + 1) * k]
    }

    pub fn coords(&self) -> &[Point<T>] {
        &self.coords
    }

    pub fn node(&self, i: usize) -> Point<T> {
        self.coords[i]
    }

    pub fn tags(&self) -> &[BoundaryTag] {
        &self.tags
    }

    pub fn tag(&self, i: usize) -> BoundaryTag {
        self.tags[i]
    }

    pub fn cells(&self) -> [usize; 2] {
        self.cells
    }

    pub fn spacing(&self) -> Point<T> {
        self.spacing
    }

    pub fn lower(&self) -> Point<T> {
        self.lower
    }

    pub fn upper(&self) -> Point<T> {
        self.upper
    }

    pub fn side_tag(&self, side: Side) -> Option<BoundaryTag> {
        self.side_tags
            .iter()
            .find(|(s, _)| *s == side)
            .map(|&(_, t)| t)
    }

    pub fn facets(&self) -> &[BoundaryFacet<T>] {
        &self.facets
    }

    /// Facets lying on sides tagged `Control`.
    pub fn control_facets(&self) -> impl Iterator<Item = &BoundaryFacet<T>> {
        self.facets
            .iter()
            .filter(move |f| self.side_tag(f.side) == Some(BoundaryTag::Control))
    }

    /// Sorted nodes on the closure of the control boundary.
    ///
    /// Corner nodes shared with a Dirichlet side are included even though
    /// their own tag is `Dirichlet`: they carry part of the measure of the
    /// control boundary.
    pub fn control_boundary_nodes(&self) -> Vec<usize> {
        let mut nodes: Vec<usize> = self
            .control_facets()
            .flat_map(|f| f.nodes.iter().copied())
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    pub fn is_dirichlet(&self, i: usize) -> bool {
        self.tags[i] == BoundaryTag::Dirichlet
    }

    /// Total length (1D) or area (2D) of all elements.
    pub fn element_measure(&self, e: usize) -> T {
        let n = self.element(e);
        if self.dim == 1 {
            (self.coords[n[1]][0] - self.coords[n[0]][0]).abs()
        } else {
            let [a, b, c] = [self.coords[n[0]], self.coords[n[1]], self.coords[n[2]]];
            ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])).abs() / T::lit(2.0)
        }
    }

    pub fn domain_measure(&self) -> T {
        (0..self.dim)
            .map(|d| self.upper[d] - self.lower[d])
            .fold(T::one(), |a, b| a * b)
    }

    /// Projects a point componentwise onto the closed domain box.
    pub fn clamp(&self, x: Point<T>) -> Point<T> {
        let mut y = x;
        for d in 0..self.dim {
            y[d] = x[d].max(self.lower[d]).min(self.upper[d]);
        }
        if self.dim == 1 {
            y[1] = T::zero();
        }
        y
    }

    /// Finds the element containing `x` and its barycentric coordinates.
    ///
    /// The third weight is zero in 1D.
    pub fn locate_point(&self, x: Point<T>) -> Result<(usize, [T; 3])> {
        let outside = || Error::PointOutside {
            x: x[0].as_f64(),
            y: x[1].as_f64(),
        };
        let mut local = [T::zero(); 2];
        let mut cell = [0usize; 2];
        for d in 0..self.dim {
            let ext = self.upper[d] - self.lower[d];
            let tol = T::lit(1e-12) * ext;
            if !(x[d] >= self.lower[d] - tol && x[d] <= self.upper[d] + tol) {
                return Err(outside());
            }
            let s = ((x[d] - self.lower[d]) / self.spacing[d]).max(T::zero());
            let n = self.cells[d];
            let i = s.floor().to_usize().unwrap_or(0).min(n - 1);
            cell[d] = i;
            local[d] = (s - T::from_usize_lossy(i)).max(T::zero()).min(T::one());
        }
        if self.dim == 1 {
            let [s, _] = local;
            return Ok((cell[0], [T::one() - s, s, T::zero()]));
        }
        let [s, t] = local;
        let c = cell[1] * self.cells[0] + cell[0];
        if s >= t {
            Ok((2 * c, [T::one() - s, s - t, t]))
        } else {
            Ok((2 * c + 1, [T::one() - t, s, t - s]))
        }
    }

    /// P1 interpolation of a nodal field at `x`.
    pub fn interpolate(&self, field: &[T], x: Point<T>) -> Result<T> {
        let (e, w) = self.locate_point(x)?;
        Ok(self
            .element(e)
            .iter()
            .zip(w.iter())
            .map(|(&n, &wi)| wi * field[n])
            .sum())
    }
}

fn check_extent<T: Real>(name: &str, len: T, cells: usize) -> Result<()> {
    if !(len > T::zero()) || !len.is_finite() {
        return Err(Error::invalid(format!("{name} must be positive, got {len}")));
    }
    if cells < 2 {
        return Err(Error::invalid(format!(
            "{name}: need at least 2 cells, got {cells}"
        )));
    }
    Ok(())
}

/// Uniform mesh of `[0, x_max]` with `n_cells` segments.
pub fn build_interval_mesh<T: Real>(
    x_max: T,
    n_cells: usize,
    tags: IntervalTags,
) -> Result<StructuredMesh<T>> {
    check_extent("x_max", x_max, n_cells)?;
    let h = x_max / T::from_usize_lossy(n_cells);
    let coords: Vec<Point<T>> = (0..=n_cells)
        .map(|i| [T::from_usize_lossy(i) * h, T::zero()])
        .collect();
    let mut node_tags = vec![BoundaryTag::Interior; n_cells + 1];
    node_tags[0] = tags.left;
    node_tags[n_cells] = tags.right;
    let elements = (0..n_cells).flat_map(|i| [i, i + 1]).collect();
    let facets = vec![
        BoundaryFacet {
            nodes: vec![0],
            side: Side::Left,
            measure: T::one(),
        },
        BoundaryFacet {
            nodes: vec![n_cells],
            side: Side::Right,
            measure: T::one(),
        },
    ];
    Ok(StructuredMesh {
        dim: 1,
        lower: [T::zero(); 2],
        upper: [x_max, T::zero()],
        cells: [n_cells, 0],
        spacing: [h, T::zero()],
        coords,
        tags: node_tags,
        elements,
        side_tags: vec![(Side::Left, tags.left), (Side::Right, tags.right)],
        facets,
    })
}

/// Uniform triangulation of `[0, lx] x [0, ly]` with `nx x ny` cells.
pub fn build_rectangle_mesh<T: Real>(
    lx: T,
    ly: T,
    nx: usize,
    ny: usize,
    tags: RectangleTags,
) -> Result<StructuredMesh<T>> {
    check_extent("lx", lx, nx)?;
    check_extent("ly", ly, ny)?;
    let hx = lx / T::from_usize_lossy(nx);
    let hy = ly / T::from_usize_lossy(ny);
    let id = |i: usize, j: usize| j * (nx + 1) + i;

    let mut coords = Vec::with_capacity((nx + 1) * (ny + 1));
    let mut node_tags = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            coords.push([T::from_usize_lossy(i) * hx, T::from_usize_lossy(j) * hy]);
            let mut tag = BoundaryTag::Interior;
            if i == 0 {
                tag = tag.stronger(tags.left);
            }
            if i == nx {
                tag = tag.stronger(tags.right);
            }
            if j == 0 {
                tag = tag.stronger(tags.bottom);
            }
            if j == ny {
                tag = tag.stronger(tags.top);
            }
            node_tags.push(tag);
        }
    }

    let mut elements = Vec::with_capacity(6 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (ll, lr, ur, ul) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            elements.extend_from_slice(&[ll, lr, ur, ll, ur, ul]);
        }
    }

    let mut facets = Vec::with_capacity(2 * (nx + ny));
    for j in 0..ny {
        facets.push(BoundaryFacet {
            nodes: vec![id(0, j), id(0, j + 1)],
            side: Side::Left,
            measure: hy,
        });
        facets.push(BoundaryFacet {
            nodes: vec![id(nx, j), id(nx, j + 1)],
            side: Side::Right,
            measure: hy,
        });
    }
    for i in 0..nx {
        facets.push(BoundaryFacet {
            nodes: vec![id(i, 0), id(i + 1, 0)],
            side: Side::Bottom,
            measure: hx,
        });
        facets.push(BoundaryFacet {
            nodes: vec![id(i, ny), id(i + 1, ny)],
            side: Side::Top,
            measure: hx,
        });
    }

    Ok(StructuredMesh {
        dim: 2,
        lower: [T::zero(); 2],
        upper: [lx, ly],
        cells: [nx, ny],
        spacing: [hx, hy],
        coords,
        tags: node_tags,
        elements,
        side_tags: vec![
            (Side::Left, tags.left),
            (Side::Right, tags.right),
            (Side::Bottom, tags.bottom),
            (Side::Top, tags.top),
        ],
        facets,
    })
}

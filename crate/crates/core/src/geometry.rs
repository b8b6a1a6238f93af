//! Convex decision sets.
//!
//! A [`ConvexBody`] is a box, a Euclidean ball or a polytope `{x : Ax <= b}`.
//! Every body is validated at construction: full-dimensional, bounded, and
//! containing the origin.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{dist, dot, norm, Error, Point, Result};

/// Membership tolerance used throughout.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

const DYKSTRA_MAX_ITERS: usize = 10_000;
const DYKSTRA_FEAS_TOL: f64 = 1e-10;

/// Serializable description of a body, as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BodySpec {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Polytope { a: Vec<Vec<f64>>, b: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Box { lower: Point, upper: Point },
    Ball { center: Point, radius: f64 },
    Polytope { a: Vec<Point>, b: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BodySpec", into = "BodySpec")]
pub struct ConvexBody {
    shape: Shape,
    dim: usize,
    diameter: f64,
    lower: Point,
    upper: Point,
}

impl TryFrom<BodySpec> for ConvexBody {
    type Error = Error;

    fn try_from(spec: BodySpec) -> Result<Self> {
        match spec {
            BodySpec::Box { lower, upper } => ConvexBody::boxed(lower, upper),
            BodySpec::Ball { center, radius } => ConvexBody::ball(center, radius),
            BodySpec::Polytope { a, b } => ConvexBody::polytope(a, b),
        }
    }
}

impl From<ConvexBody> for BodySpec {
    fn from(body: ConvexBody) -> Self {
        match body.shape {
            Shape::Box { lower, upper } => BodySpec::Box { lower, upper },
            Shape::Ball { center, radius } => BodySpec::Ball { center, radius },
            Shape::Polytope { a, b } => BodySpec::Polytope { a, b },
        }
    }
}

impl ConvexBody {
    /// Axis-aligned box `[lower, upper]`.
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidBody("box must have dimension >= 1".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::InvalidBody(format!("axis {i} has non-finite bounds")));
            }
            if hi <= lo {
                return Err(Error::InvalidBody(format!(
                    "axis {i} is degenerate: [{lo}, {hi}]"
                )));
            }
            if *lo > 0.0 || *hi < 0.0 {
                return Err(Error::InvalidBody(format!(
                    "axis {i} bounds [{lo}, {hi}] exclude the origin"
                )));
            }
        }
        let diameter = dist(&lower, &upper);
        Ok(Self {
            dim: lower.len(),
            diameter,
            lower: lower.clone(),
            upper: upper.clone(),
            shape: Shape::Box { lower, upper },
        })
    }

    /// The interval `[lo, hi]`.
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::boxed(vec![lo], vec![hi])
    }

    /// Euclidean ball.
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::InvalidBody("ball must have dimension >= 1".into()));
        }
        if !(radius.is_finite() && radius > 0.0) || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidBody(format!(
                "ball needs finite center and positive radius, got radius {radius}"
            )));
        }
        if norm(&center) > radius * (1.0 + 1e-12) {
            return Err(Error::InvalidBody("ball does not contain the origin".into()));
        }
        let lower = center.iter().map(|c| c - radius).collect();
        let upper = center.iter().map(|c| c + radius).collect();
        Ok(Self {
            dim: center.len(),
            diameter: 2.0 * radius,
            lower,
            upper,
            shape: Shape::Ball { center, radius },
        })
    }

    /// Polytope `{x : a_i . x <= b_i for all i}`.
    ///
    /// Vertices are enumerated to obtain the bounding box and the diameter,
    /// which is fine for the low dimensions this crate targets.
    pub fn polytope(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(Error::InvalidBody(
                "polytope needs one right-hand side per constraint".into(),
            ));
        }
        let dim = a[0].len();
        if dim == 0 {
            return Err(Error::InvalidBody("polytope must have dimension >= 1".into()));
        }
        for (i, row) in a.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            if norm(row) == 0.0 || row.iter().any(|v| !v.is_finite()) || !b[i].is_finite() {
                return Err(Error::InvalidBody(format!("constraint {i} is degenerate")));
            }
            if b[i] < -MEMBERSHIP_TOL {
                return Err(Error::InvalidBody(format!(
                    "constraint {i} excludes the origin"
                )));
            }
        }
        if has_recession_direction(&a, dim) {
            return Err(Error::InvalidBody("polytope is unbounded".into()));
        }
        let vertices = enumerate_vertices(&a, &b, dim);
        if vertices.is_empty() {
            return Err(Error::InvalidBody("polytope has no vertices".into()));
        }
        let mut centroid = vec![0.0; dim];
        for v in &vertices {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / vertices.len() as f64;
            }
        }
        let min_slack = a
            .iter()
            .zip(&b)
            .map(|(row, bi)| (bi - dot(row, &centroid)) / norm(row))
            .fold(f64::INFINITY, f64::min);
        if min_slack <= 1e-9 {
            return Err(Error::InvalidBody("polytope is not full-dimensional".into()));
        }
        let mut lower = vec![f64::INFINITY; dim];
        let mut upper = vec![f64::NEG_INFINITY; dim];
        for v in &vertices {
            for k in 0..dim {
                lower[k] = lower[k].min(v[k]);
                upper[k] = upper[k].max(v[k]);
            }
        }
        let mut diameter: f64 = 0.0;
        for (i, u) in vertices.iter().enumerate() {
            for w in &vertices[i + 1..] {
                diameter = diameter.max(dist(u, w));
            }
        }
        Ok(Self {
            dim,
            diameter,
            lower,
            upper,
            shape: Shape::Polytope { a, b },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Axis-aligned bounding box `(lower, upper)`.
    pub fn bounding_box(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }

    pub fn spec(&self) -> BodySpec {
        self.clone().into()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.contains_tol(x, MEMBERSHIP_TOL)
    }

    pub fn contains_tol(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dim {
            return false;
        }
        match &self.shape {
            Shape::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol),
            Shape::Ball { center, radius } => dist(x, center) <= radius + tol,
            Shape::Polytope { a, b } => a
                .iter()
                .zip(b)
                .all(|(row, bi)| dot(row, x) <= bi + tol * norm(row).max(1.0)),
        }
    }

    /// Euclidean projection onto the body.
    ///
    /// Exact for boxes and balls. Polytopes use Dykstra's alternating
    /// projections over the halfspaces; points already inside (within
    /// [`MEMBERSHIP_TOL`]) are returned unchanged.
    pub fn project(&self, x: &[f64]) -> Result<Point> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::pre("project", "point has non-finite coordinates"));
        }
        Ok(match &self.shape {
            Shape::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
                .collect(),
            Shape::Ball { center, radius } => {
                let r = dist(x, center);
                if r <= *radius {
                    x.to_vec()
                } else {
                    let s = radius / r;
                    x.iter()
                        .zip(center)
                        .map(|(v, c)| c + (v - c) * s)
                        .collect()
                }
            }
            Shape::Polytope { a, b } => {
                if self.contains(x) {
                    x.to_vec()
                } else {
                    dykstra(a, b, x)
                }
            }
        })
    }

    /// Midpoint-rule quadrature nodes of the bounding box that fall inside the
    /// body. Nodes are emitted in lexicographic order (axis 0 outermost).
    pub fn grid_points(&self, cells_per_axis: usize) -> Result<Grid> {
        if self.dim > 3 {
            return Err(Error::Unsupported(format!(
                "grid discretization in dimension {} (max 3)",
                self.dim
            )));
        }
        if cells_per_axis < 2 {
            return Err(Error::pre("grid_points", "cells_per_axis must be >= 2"));
        }
        let widths: Vec<f64> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (hi - lo) / cells_per_axis as f64)
            .collect();
        let cell_volume: f64 = widths.iter().product();
        let total = cells_per_axis.pow(self.dim as u32);
        let mut points = Vec::new();
        let mut idx = vec![0usize; self.dim];
        for flat in 0..total {
            let mut rem = flat;
            for k in (0..self.dim).rev() {
                idx[k] = rem % cells_per_axis;
                rem /= cells_per_axis;
            }
            let p: Point = (0..self.dim)
                .map(|k| self.lower[k] + (idx[k] as f64 + 0.5) * widths[k])
                .collect();
            if self.contains(&p) {
                points.push(p);
            }
        }
        let weights = vec![cell_volume; points.len()];
        Ok(Grid {
            points,
            weights,
            cell_widths: widths,
        })
    }

    /// Uniform draw from the body by rejection from the bounding box.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        loop {
            let p: Point = self
                .lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                .collect();
            if self.contains(&p) {
                return p;
            }
        }
    }
}

/// Quadrature grid: cell midpoints and their cell volumes.
#[derive(Debug, Clone)]
pub struct Grid {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    /// Edge length of a cell along each axis.
    pub cell_widths: Vec<f64>,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point, f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

fn dykstra(a: &[Point], b: &[f64], x0: &[f64]) -> Point {
    let m = a.len();
    let mut x = x0.to_vec();
    let mut incr = vec![vec![0.0; x0.len()]; m];
    let sq: Vec<f64> = a.iter().map(|r| dot(r, r)).collect();
    for _ in 0..DYKSTRA_MAX_ITERS {
        let prev = x.clone();
        for i in 0..m {
            let y: Point = x.iter().zip(&incr[i]).map(|(v, p)| v + p).collect();
            let viol = dot(&a[i], &y) - b[i];
            x = if viol > 0.0 {
                let s = viol / sq[i];
                y.iter().zip(&a[i]).map(|(v, ai)| v - s * ai).collect()
            } else {
                y.clone()
            };
            for (p, (yv, xv)) in incr[i].iter_mut().zip(y.iter().zip(&x)) {
                *p = yv - xv;
            }
        }
        let feasible = a
            .iter()
            .zip(b)
            .all(|(row, bi)| dot(row, &x) - bi <= DYKSTRA_FEAS_TOL * norm(row).max(1.0));
        if feasible && dist(&x, &prev) <= 1e-13 {
            break;
        }
    }
    x
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

fn enumerate_vertices(a: &[Point], b: &[f64], dim: usize) -> Vec<Point> {
    let mut vertices = Vec::new();
    for subset in combinations(a.len(), dim) {
        let m = DMatrix::from_fn(dim, dim, |r, c| a[subset[r]][c]);
        let rhs = DVector::from_fn(dim, |r, _| b[subset[r]]);
        let lu = m.lu();
        if lu.determinant().abs() < 1e-12 {
            continue;
        }
        if let Some(sol) = lu.solve(&rhs) {
            let v: Point = sol.iter().copied().collect();
            let feasible = a
                .iter()
                .zip(b)
                .all(|(row, bi)| dot(row, &v) <= bi + 1e-9 * norm(row).max(1.0));
            if feasible {
                vertices.push(v);
            }
        }
    }
    vertices
}

/// True when `{y : A y <= 0}` contains a nonzero direction.
fn has_recession_direction(a: &[Point], dim: usize) -> bool {
    let full = DMatrix::from_fn(a.len(), dim, |r, c| a[r][c]);
    let gram = full.transpose() * &full;
    let eig = gram.symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.min() <= 1e-12 * scale {
        // A has a nontrivial null space: the set contains a line.
        return true;
    }
    // Extreme rays of a pointed cone have dim-1 independent active constraints.
    let is_ray = |y: &[f64]| a.iter().all(|row| dot(row, y) <= 1e-12 * norm(row));
    if dim == 1 {
        return is_ray(&[1.0]) || is_ray(&[-1.0]);
    }
    for subset in combinations(a.len(), dim - 1) {
        let m = DMatrix::from_fn(dim - 1, dim, |r, c| a[subset[r]][c]);
        let g = m.transpose() * &m;
        let e = g.symmetric_eigen();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&i, &j| e.eigenvalues[i].total_cmp(&e.eigenvalues[j]));
        let s = e.eigenvalues.amax().max(1.0);
        if e.eigenvalues[order[1]] <= 1e-10 * s {
            continue;
        }
        let y: Point = e.eigenvectors.column(order[0]).iter().copied().collect();
        let neg: Point = y.iter().map(|v| -v).collect();
        if is_ray(&y) || is_ray(&neg) {
            return true;
        }
    }
    false
}

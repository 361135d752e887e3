//! Structured P1 triangulations of rectangles.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{barycenter, p1_gradients, signed_area, Point, Rect};

/// Side of the rectangle a boundary edge lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];

    pub fn outward_normal(self) -> [f64; 2] {
        match self {
            Side::Bottom => [0.0, -1.0],
            Side::Right => [1.0, 0.0],
            Side::Top => [0.0, 1.0],
            Side::Left => [-1.0, 0.0],
        }
    }
}

/// Boundary edge with its nodes in counterclockwise order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub side: Side,
    /// Triangle the edge belongs to.
    pub element: usize,
}

/// Conforming triangulation of a rectangle on an `n × n` grid of cells,
/// each cell cut along its bottom-left to top-right diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub nodes: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Largest cell side.
    pub h: f64,
    /// Cells per side.
    pub n: usize,
    pub rect: Rect,
}

/// Builds the structured mesh; node `(i, j)` has index `j (n + 1) + i`.
pub fn build_uniform_mesh(n: usize, rect: Rect) -> Result<TriMesh> {
    if n == 0 {
        return Err(Error::arg("mesh needs at least one cell per side"));
    }
    let rect = Rect::new(rect.min, rect.max)?;
    let hx = rect.width() / n as f64;
    let hy = rect.height() / n as f64;
    let np = n + 1;
    let mut nodes = Vec::with_capacity(np * np);
    for j in 0..np {
        let y = if j == n { rect.max[1] } else { rect.min[1] + j as f64 * hy };
        for i in 0..np {
            let x = if i == n { rect.max[0] } else { rect.min[0] + i as f64 * hx };
            nodes.push([x, y]);
        }
    }
    let id = |i: usize, j: usize| j * np + i;
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let a = id(i, j);
            let b = id(i + 1, j);
            let c = id(i + 1, j + 1);
            let d = id(i, j + 1);
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    // cell (i, j) owns triangles 2(jn + i) (lower-right) and 2(jn + i) + 1 (upper-left)
    let cell = |i: usize, j: usize| 2 * (j * n + i);
    let mut boundary_edges = Vec::with_capacity(4 * n);
    for i in 0..n {
        boundary_edges.push(BoundaryEdge {
            nodes: [id(i, 0), id(i + 1, 0)],
            side: Side::Bottom,
            element: cell(i, 0),
        });
    }
    for j in 0..n {
        boundary_edges.push(BoundaryEdge {
            nodes: [id(n, j), id(n, j + 1)],
            side: Side::Right,
            element: cell(n - 1, j),
        });
    }
    for i in (0..n).rev() {
        boundary_edges.push(BoundaryEdge {
            nodes: [id(i + 1, n), id(i, n)],
            side: Side::Top,
            element: cell(i, n - 1) + 1,
        });
    }
    for j in (0..n).rev() {
        boundary_edges.push(BoundaryEdge {
            nodes: [id(0, j + 1), id(0, j)],
            side: Side::Left,
            element: cell(0, j) + 1,
        });
    }
    Ok(TriMesh { nodes, triangles, boundary_edges, h: hx.max(hy), n, rect })
}

impl TriMesh {
    pub fn unit_square(n: usize) -> Result<Self> {
        build_uniform_mesh(n, Rect::unit())
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn hx(&self) -> f64 {
        self.rect.width() / self.n as f64
    }

    pub fn hy(&self) -> f64 {
        self.rect.height() / self.n as f64
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.n + 1) + i
    }

    pub fn element(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    pub fn barycenter(&self, t: usize) -> Point {
        barycenter(&self.element(t))
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.element(t);
        signed_area(a, b, c)
    }

    pub fn gradients(&self, t: usize) -> ([[f64; 2]; 3], f64) {
        p1_gradients(&self.element(t))
    }

    pub fn is_boundary_node(&self, k: usize) -> bool {
        let np = self.n + 1;
        let (i, j) = (k % np, k / np);
        i == 0 || j == 0 || i == self.n || j == self.n
    }

    /// Boundary nodes in counterclockwise order starting at the lower-left corner.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        self.boundary_edges.iter().map(|e| e.nodes[0]).collect()
    }

    /// Counterclockwise arclength of a boundary point measured from `rect.min`.
    pub fn arclength(&self, p: Point) -> f64 {
        let r = &self.rect;
        let (w, h) = (r.width(), r.height());
        let tol = 1e-12 * (w + h);
        if (p[1] - r.min[1]).abs() <= tol {
            p[0] - r.min[0]
        } else if (p[0] - r.max[0]).abs() <= tol {
            w + (p[1] - r.min[1])
        } else if (p[1] - r.max[1]).abs() <= tol {
            w + h + (r.max[0] - p[0])
        } else {
            2.0 * w + h + (r.max[1] - p[1])
        }
    }

    /// Index of the mesh node closest to `p`.
    pub fn nearest_node(&self, p: Point) -> Result<usize> {
        if !self.rect.contains(p, 1e-12) {
            return Err(Error::arg(format!("point {p:?} lies outside the mesh")));
        }
        let fi = ((p[0] - self.rect.min[0]) / self.hx()).round();
        let fj = ((p[1] - self.rect.min[1]) / self.hy()).round();
        let i = (fi.max(0.0) as usize).min(self.n);
        let j = (fj.max(0.0) as usize).min(self.n);
        Ok(self.node_index(i, j))
    }

    /// Triangle containing `p` and the barycentric coordinates of `p` in it.
    pub fn locate(&self, p: Point) -> Result<(usize, [f64; 3])> {
        let tol = 1e-10 * self.h;
        if !self.rect.contains(p, tol) || !p[0].is_finite() || !p[1].is_finite() {
            return Err(Error::arg(format!("point {p:?} lies outside the mesh")));
        }
        let sx = ((p[0] - self.rect.min[0]) / self.hx()).clamp(0.0, self.n as f64);
        let sy = ((p[1] - self.rect.min[1]) / self.hy()).clamp(0.0, self.n as f64);
        let i = (sx.floor() as usize).min(self.n - 1);
        let j = (sy.floor() as usize).min(self.n - 1);
        let (u, v) = (sx - i as f64, sy - j as f64);
        let base = 2 * (j * self.n + i);
        // lower-right triangle (a, b, c) holds u ≥ v
        if u >= v {
            Ok((base, [1.0 - u, u - v, v]))
        } else {
            Ok((base + 1, [1.0 - v, u, v - u]))
        }
    }

    /// Writes `nodes <count>` followed by one node per line, then the triangles.
    pub fn dump<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "nodes {}", self.nodes.len())?;
        for p in &self.nodes {
            writeln!(w, "{} {}", p[0], p[1])?;
        }
        writeln!(w, "triangles {}", self.triangles.len())?;
        for t in &self.triangles {
            writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }

    /// True when both meshes describe the same grid.
    pub fn same_grid(&self, other: &TriMesh) -> bool {
        self.n == other.n && self.rect == other.rect
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn counts_for_small_meshes() {
        let m = TriMesh::unit_square(1).unwrap();
        assert_eq!((m.num_nodes(), m.num_triangles(), m.boundary_edges.len()), (4, 2, 4));
        let m = TriMesh::unit_square(2).unwrap();
        assert_eq!((m.num_nodes(), m.num_triangles(), m.boundary_edges.len()), (9, 8, 8));
    }

    #[test]
    fn zero_cells_is_rejected() {
        assert!(matches!(TriMesh::unit_square(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn areas_tile_rectangle() {
        let m = TriMesh::unit_square(4).unwrap();
        let total: f64 = (0..m.num_triangles()).map(|t| m.area(t)).sum();
        assert!((total - 1.0).abs() < 1e-14);
        assert!((0..m.num_triangles()).all(|t| m.area(t) > 0.0));
    }

    #[test]
    fn interior_edges_shared_by_two_triangles() {
        let m = TriMesh::unit_square(5).unwrap();
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &m.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let boundary = count.values().filter(|&&c| c == 1).count();
        assert_eq!(boundary, 4 * m.n);
        assert!(count.values().all(|&c| c <= 2));
        for e in &m.boundary_edges {
            let (a, b) = (e.nodes[0], e.nodes[1]);
            assert_eq!(count[&(a.min(b), a.max(b))], 1);
            assert!(m.triangles[e.element].contains(&a) && m.triangles[e.element].contains(&b));
        }
    }

    #[test]
    fn locate_reproduces_point() {
        let m = build_uniform_mesh(7, Rect::new([0.2, -1.0], [1.4, 0.5]).unwrap()).unwrap();
        for p in [[0.2, -1.0], [1.4, 0.5], [0.77, -0.13], [0.9, 0.5], [0.2, 0.1]] {
            let (t, l) = m.locate(p).unwrap();
            let e = m.element(t);
            let q = [
                l[0] * e[0][0] + l[1] * e[1][0] + l[2] * e[2][0],
                l[0] * e[0][1] + l[1] * e[1][1] + l[2] * e[2][1],
            ];
            assert!((q[0] - p[0]).abs() < 1e-13 && (q[1] - p[1]).abs() < 1e-13);
            assert!(l.iter().all(|&v| v >= -1e-12));
        }
        assert!(m.locate([2.0, 0.0]).is_err());
    }

    #[test]
    fn boundary_arclength_is_monotone() {
        let m = TriMesh::unit_square(4).unwrap();
        let s: Vec<f64> = m.boundary_nodes().iter().map(|&k| m.arclength(m.nodes[k])).collect();
        assert!(s.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(s.len(), 16);
    }

    #[test]
    fn dump_lists_every_entity() {
        let m = TriMesh::unit_square(2).unwrap();
        let mut buf = Vec::new();
        m.dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 9 + 1 + 8);
    }
}

//! Planar primitives: rectangles, triangle areas and convex clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Axis-aligned rectangle `[min.0, max.0] × [min.1, max.1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn new(min: Point, max: Point) -> Result<Self> {
        let ok = min.iter().chain(max.iter()).all(|v| v.is_finite())
            && max[0] > min[0]
            && max[1] > min[1];
        if !ok {
            return Err(Error::arg(format!("degenerate rectangle {min:?}..{max:?}")));
        }
        Ok(Self { min, max })
    }

    pub const fn unit() -> Self {
        Self { min: [0.0, 0.0], max: [1.0, 1.0] }
    }

    /// Square of side `side` with lower-left corner `origin`.
    pub fn square(origin: Point, side: f64) -> Result<Self> {
        Self::new(origin, [origin[0] + side, origin[1] + side])
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        [0.5 * (self.min[0] + self.max[0]), 0.5 * (self.min[1] + self.max[1])]
    }

    /// Containment with an absolute slack `tol`.
    pub fn contains(&self, p: Point, tol: f64) -> bool {
        p[0] >= self.min[0] - tol
            && p[0] <= self.max[0] + tol
            && p[1] >= self.min[1] - tol
            && p[1] <= self.max[1] + tol
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * (self.width() + self.height())
    }
}

pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn midpoint(a: Point, b: Point) -> Point {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

/// Signed area, positive for counterclockwise vertices.
pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

pub fn barycenter(t: &[Point; 3]) -> Point {
    [(t[0][0] + t[1][0] + t[2][0]) / 3.0, (t[0][1] + t[1][1] + t[2][1]) / 3.0]
}

/// Gradients of the three barycentric coordinates and the (signed) area.
pub fn p1_gradients(t: &[Point; 3]) -> ([[f64; 2]; 3], f64) {
    let area = signed_area(t[0], t[1], t[2]);
    let s = 0.5 / area;
    let g = [
        [(t[1][1] - t[2][1]) * s, (t[2][0] - t[1][0]) * s],
        [(t[2][1] - t[0][1]) * s, (t[0][0] - t[2][0]) * s],
        [(t[0][1] - t[1][1]) * s, (t[1][0] - t[0][0]) * s],
    ];
    (g, area)
}

/// Fractional part `t − ⌊t⌋`, always in `[0, 1)`.
pub fn frac(t: f64) -> f64 {
    let f = t - t.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

const MAX_VERTS: usize = 10;

/// Convex polygon with inline storage; a triangle clipped by up to
/// seven half-planes never exceeds the capacity.
#[derive(Debug, Clone, Copy)]
pub struct ConvexPolygon {
    verts: [Point; MAX_VERTS],
    len: usize,
}

impl ConvexPolygon {
    pub fn triangle(t: &[Point; 3]) -> Self {
        let mut verts = [[0.0; 2]; MAX_VERTS];
        verts[..3].copy_from_slice(t);
        Self { verts, len: 3 }
    }

    pub fn vertices(&self) -> &[Point] {
        &self.verts[..self.len]
    }

    pub fn is_empty(&self) -> bool {
        self.len < 3
    }

    /// Keeps the part where `n · x ≤ c`.
    pub fn clip(&self, n: Point, c: f64) -> Self {
        let mut out = Self { verts: [[0.0; 2]; MAX_VERTS], len: 0 };
        if self.len == 0 {
            return out;
        }
        let mut push = |p: Point| {
            if out.len < MAX_VERTS {
                out.verts[out.len] = p;
                out.len += 1;
            }
        };
        for i in 0..self.len {
            let p = self.verts[i];
            let q = self.verts[(i + 1) % self.len];
            let dp = dot(n, p) - c;
            let dq = dot(n, q) - c;
            if dp <= 0.0 {
                push(p);
            }
            if (dp < 0.0 && dq > 0.0) || (dp > 0.0 && dq < 0.0) {
                let s = dp / (dp - dq);
                push([p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])]);
            }
        }
        out
    }

    /// Keeps the slab `lo ≤ n · x ≤ hi`.
    pub fn clip_slab(&self, n: Point, lo: f64, hi: f64) -> Self {
        self.clip(n, hi).clip([-n[0], -n[1]], -lo)
    }

    pub fn area(&self) -> f64 {
        if self.len < 3 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..self.len {
            let p = self.verts[i];
            let q = self.verts[(i + 1) % self.len];
            s += p[0] * q[1] - q[0] * p[1];
        }
        0.5 * s.abs()
    }

    /// Range of `n · x` over the vertices.
    pub fn extent(&self, n: Point) -> (f64, f64) {
        self.vertices().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
            let s = dot(n, p);
            (lo.min(s), hi.max(s))
        })
    }
}

/// Area of `T ∩ {x : frac(n·x / period) < fraction}` for a unit direction `n`.
pub fn periodic_band_area(t: &[Point; 3], n: Point, period: f64, fraction: f64) -> f64 {
    if fraction <= 0.0 {
        return 0.0;
    }
    let poly = ConvexPolygon::triangle(t);
    if fraction >= 1.0 {
        return poly.area();
    }
    let (lo, hi) = poly.extent(n);
    let j0 = (lo / period).floor() as i64;
    let j1 = (hi / period).floor() as i64;
    let mut area = 0.0;
    for j in j0..=j1 {
        let a = j as f64 * period;
        let b = (j as f64 + fraction) * period;
        if b <= lo || a >= hi {
            continue;
        }
        area += poly.clip_slab(n, a, b).area();
    }
    area
}

/// Area of `T ∩ {frac(x₁/ε) < f, frac(x₂/ε) < f}`.
pub fn periodic_square_area(t: &[Point; 3], period: f64, fraction: f64) -> f64 {
    if fraction <= 0.0 {
        return 0.0;
    }
    let poly = ConvexPolygon::triangle(t);
    if fraction >= 1.0 {
        return poly.area();
    }
    let (xlo, xhi) = poly.extent([1.0, 0.0]);
    let (ylo, yhi) = poly.extent([0.0, 1.0]);
    let mut area = 0.0;
    for i in (xlo / period).floor() as i64..=(xhi / period).floor() as i64 {
        let a = i as f64 * period;
        let b = (i as f64 + fraction) * period;
        if b <= xlo || a >= xhi {
            continue;
        }
        let strip = poly.clip_slab([1.0, 0.0], a, b);
        if strip.is_empty() {
            continue;
        }
        for j in (ylo / period).floor() as i64..=(yhi / period).floor() as i64 {
            let c = j as f64 * period;
            let d = (j as f64 + fraction) * period;
            if d <= ylo || c >= yhi {
                continue;
            }
            area += strip.clip_slab([0.0, 1.0], c, d).area();
        }
    }
    area
}

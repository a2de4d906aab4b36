//! Planar convex-polygon helpers used by the contact model.
//!
//! Everything lives in the x–z plane: `x` is lateral, `z` points up and the
//! table surface is `z = 0`. Polygons are stored counter-clockwise.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub z: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, z: 0.0 };

    pub const fn new(x: f64, z: f64) -> Self {
        Self { x, z }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.z * other.z
    }

    /// z-component of the 3-D cross product, i.e. `self.x * other.z - self.z * other.x`.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.z - self.z * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.z)
    }

    /// Counter-clockwise rotation by `angle` radians.
    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(self.x * c - self.z * s, self.x * s + self.z * c)
    }

    /// Left-hand perpendicular (counter-clockwise by 90°).
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.z, self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.z + rhs.z)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.z - rhs.z)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.z * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub vertices: Vec<Vec2>,
}

impl Polygon {
    pub fn new(vertices: Vec<Vec2>) -> Self {
        Self { vertices }
    }

    /// Axis-aligned rectangle centred on `center`.
    pub fn rect(center: Vec2, width: f64, height: f64) -> Self {
        let (hw, hh) = (0.5 * width, 0.5 * height);
        Self::new(vec![
            center + Vec2::new(-hw, -hh),
            center + Vec2::new(hw, -hh),
            center + Vec2::new(hw, hh),
            center + Vec2::new(-hw, hh),
        ])
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Signed shoelace area; positive for counter-clockwise order.
    pub fn signed_area(&self) -> f64 {
        0.5 * self.edges().map(|(a, b)| a.cross(b)).sum::<f64>()
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Area centroid, falling back to the vertex average for degenerate polygons.
    pub fn centroid(&self) -> Vec2 {
        let a = self.signed_area();
        if a.abs() < 1e-18 {
            let n = self.vertices.len().max(1) as f64;
            let sum = self.vertices.iter().fold(Vec2::ZERO, |acc, &v| acc + v);
            return sum * (1.0 / n);
        }
        let (mut cx, mut cz) = (0.0, 0.0);
        for (p, q) in self.edges() {
            let k = p.cross(q);
            cx += (p.x + q.x) * k;
            cz += (p.z + q.z) * k;
        }
        Vec2::new(cx / (6.0 * a), cz / (6.0 * a))
    }

    fn project(&self, axis: Vec2) -> (f64, f64) {
        self.vertices
            .iter()
            .map(|v| v.dot(axis))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p), hi.max(p))
            })
    }

    /// Point-in-convex-polygon test (boundary counts as inside).
    pub fn contains(&self, p: Vec2) -> bool {
        self.edges().all(|(a, b)| (b - a).cross(p - a) >= -1e-15)
    }
}

/// Minimum translation that separates two overlapping convex polygons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penetration {
    /// Overlap length along `normal`.
    pub depth: f64,
    /// Unit axis pointing from the second polygon towards the first.
    pub normal: Vec2,
}

/// Separating-axis test. Returns `None` when the polygons are disjoint or
/// merely touching.
pub fn penetration(a: &Polygon, b: &Polygon) -> Option<Penetration> {
    let mut best: Option<Penetration> = None;
    for poly in [a, b] {
        for (p, q) in poly.edges() {
            let edge = q - p;
            let len = edge.norm();
            if len < 1e-15 {
                continue;
            }
            let axis = edge.perp() * (1.0 / len);
            let (a_lo, a_hi) = a.project(axis);
            let (b_lo, b_hi) = b.project(axis);
            let overlap = (a_hi - b_lo).min(b_hi - a_lo);
            if overlap <= 0.0 {
                return None;
            }
            if best.is_none_or(|bp| overlap < bp.depth) {
                best = Some(Penetration { depth: overlap, normal: axis });
            }
        }
    }
    best.map(|mut p| {
        if (a.centroid() - b.centroid()).dot(p.normal) < 0.0 {
            p.normal = -p.normal;
        }
        p
    })
}

/// Penetration depth, zero when disjoint.
pub fn penetration_depth(a: &Polygon, b: &Polygon) -> f64 {
    penetration(a, b).map_or(0.0, |p| p.depth)
}

/// Sutherland–Hodgman clip of `subject` against the convex `clip`.
pub fn intersection(subject: &Polygon, clip: &Polygon) -> Polygon {
    let mut output = subject.vertices.clone();
    for (a, b) in clip.edges() {
        if output.is_empty() {
            break;
        }
        let input = std::mem::take(&mut output);
        let edge = b - a;
        let inside = |p: Vec2| edge.cross(p - a) >= 0.0;
        let n = input.len();
        for i in 0..n {
            let cur = input[i];
            let prev = input[(i + n - 1) % n];
            let (cin, pin) = (inside(cur), inside(prev));
            if cin != pin {
                let d = cur - prev;
                let denom = edge.cross(d);
                if denom.abs() > 1e-18 {
                    let t = edge.cross(a - prev) / denom;
                    output.push(prev + d * t);
                }
            }
            if cin {
                output.push(cur);
            }
        }
    }
    Polygon::new(output)
}

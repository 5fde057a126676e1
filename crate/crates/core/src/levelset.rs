//! Zero-level-set extraction of P1 fields by per-triangle linear contouring.
//!
//! Nodal values equal to zero count as positive. Crossing points are computed
//! from the edge's endpoints in ascending vertex order, so the two triangles
//! sharing an edge produce bit-identical points and closed contours can be
//! detected exactly. Segments are oriented with the negative region on their
//! left.

use std::collections::HashMap;

use crate::fem::NodalField;
use crate::mesh::Mesh;

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSet {
    pub segments: Vec<[Point; 2]>,
    pub time: f64,
    /// Path index as a string, or `"average"`.
    pub tag: String,
}

fn crossing(mesh: &Mesh, u: &[f64], a: usize, b: usize) -> Point {
    let (i, j) = if a < b { (a, b) } else { (b, a) };
    let t = u[i] / (u[i] - u[j]);
    let p = mesh.vertices()[i];
    let q = mesh.vertices()[j];
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Contour `{u_h = 0}` of the P1 function with nodal values `u`.
pub fn zero_level_set(u: &NodalField, mesh: &Mesh, time: f64, tag: impl Into<String>) -> LevelSet {
    let mut segments = Vec::new();
    for tri in mesh.triangles() {
        let neg = tri.map(|v| u[v] < 0.0);
        let count = neg.iter().filter(|&&n| n).count();
        if count == 0 || count == 3 {
            continue;
        }
        // k is the vertex whose sign differs from the other two
        let odd_is_neg = count == 1;
        let k = (0..3).find(|&k| neg[k] == odd_is_neg).unwrap();
        let (prev, next) = (tri[(k + 2) % 3], tri[(k + 1) % 3]);
        let on_next = crossing(mesh, u, tri[k], next);
        let on_prev = crossing(mesh, u, prev, tri[k]);
        if odd_is_neg {
            segments.push([on_next, on_prev]);
        } else {
            segments.push([on_prev, on_next]);
        }
    }
    LevelSet {
        segments,
        time,
        tag: tag.into(),
    }
}

impl LevelSet {
    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.segments
            .iter()
            .map(|[a, b]| (b[0] - a[0]).hypot(b[1] - a[1]))
            .sum()
    }

    /// True when every segment endpoint starts exactly one segment and ends
    /// exactly one other, i.e. the segments form closed loops.
    pub fn is_closed(&self) -> bool {
        if self.segments.is_empty() {
            return false;
        }
        let key = |p: &Point| (p[0].to_bits(), p[1].to_bits());
        let mut balance: HashMap<(u64, u64), (i32, i32)> = HashMap::new();
        for [a, b] in &self.segments {
            balance.entry(key(a)).or_default().0 += 1;
            balance.entry(key(b)).or_default().1 += 1;
        }
        balance.values().all(|&(s, e)| s == 1 && e == 1)
    }

    /// Signed area enclosed by the oriented segments (shoelace formula). For
    /// a closed contour around a negative region this is the region's area.
    pub fn enclosed_area(&self) -> f64 {
        0.5 * self
            .segments
            .iter()
            .map(|[a, b]| a[0] * b[1] - b[0] * a[1])
            .sum::<f64>()
    }

    /// Largest distance of a segment endpoint from `center`, and smallest.
    pub fn radial_range(&self, center: Point) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for p in self.segments.iter().flatten() {
            let r = (p[0] - center[0]).hypot(p[1] - center[1]);
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (lo, hi)
    }
}

/// Nodewise mean of equally long fields, accumulated in slice order.
pub fn mean_field(fields: &[&NodalField]) -> NodalField {
    let n = fields.first().map_or(0, |f| f.len());
    let mut acc = vec![0.0; n];
    for f in fields {
        for (a, v) in acc.iter_mut().zip(f.iter()) {
            *a += v;
        }
    }
    let m = fields.len().max(1) as f64;
    acc.iter_mut().for_each(|a| *a /= m);
    NodalField::new(acc)
}

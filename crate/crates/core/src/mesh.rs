//! Structured right-triangle meshes of axis-aligned rectangles.
//!
//! Every cell of an `nx × ny` grid is split along its lower-left to
//! upper-right diagonal. All triangles are right triangles with axis-parallel
//! legs, so the P1 stiffness matrix has nonpositive off-diagonal entries and
//! is diagonally dominant. Vertices are ordered lexicographically by `(y, x)`:
//! vertex `(i, j)` has index `j * (nx + 1) + i`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle `[xmin, xmax] × [ymin, ymax]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Bounds {
    pub const fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Self {
        Self {
            xmin,
            xmax,
            ymin,
            ymax,
        }
    }

    /// The square `[-1, 1]²` used by all experiments.
    pub const fn symmetric_unit() -> Self {
        Self::new(-1.0, 1.0, -1.0, 1.0)
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    fn is_valid(&self) -> bool {
        [self.xmin, self.xmax, self.ymin, self.ymax]
            .iter()
            .all(|v| v.is_finite())
            && self.width() > 0.0
            && self.height() > 0.0
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Self::symmetric_unit()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshSize {
    /// Largest triangle diameter.
    pub h_max: f64,
    /// Smallest triangle diameter.
    pub h_min: f64,
    /// Sum of triangle areas.
    pub area: f64,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    nx: usize,
    ny: usize,
    bounds: Bounds,
}

impl Mesh {
    /// Uniform `nx × ny` right-triangle mesh of `bounds`.
    pub fn rectangle(nx: usize, ny: usize, bounds: Bounds) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument(format!(
                "subdivision counts must be positive (nx={nx}, ny={ny})"
            )));
        }
        if !bounds.is_valid() {
            return Err(Error::InvalidArgument(format!(
                "degenerate rectangle {bounds:?}"
            )));
        }
        let dx = bounds.width() / nx as f64;
        let dy = bounds.height() / ny as f64;
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            // Pin the last row/column to the exact bound.
            let y = if j == ny {
                bounds.ymax
            } else {
                bounds.ymin + j as f64 * dy
            };
            for i in 0..=nx {
                let x = if i == nx {
                    bounds.xmax
                } else {
                    bounds.xmin + i as f64 * dx
                };
                vertices.push([x, y]);
            }
        }
        let stride = nx + 1;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let v00 = j * stride + i;
                let v10 = v00 + 1;
                let v01 = v00 + stride;
                let v11 = v01 + 1;
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        Ok(Self {
            vertices,
            triangles,
            nx,
            ny,
            bounds,
        })
    }

    /// Mesh from explicit vertices and triangles. Only positivity of the
    /// signed triangle areas is checked; the stiffness sign structure is not
    /// guaranteed. `nx`/`ny` are kept as descriptive metadata.
    pub fn from_parts(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        nx: usize,
        ny: usize,
        bounds: Bounds,
    ) -> Result<Self> {
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidArgument(format!(
                    "triangle {t} references a missing vertex"
                )));
            }
            let area = signed_area(&vertices, tri);
            if !(area > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "triangle {t} has non-positive signed area {area:e}"
                )));
            }
        }
        Ok(Self {
            vertices,
            triangles,
            nx,
            ny,
            bounds,
        })
    }

    /// Applies the shear `x ↦ x + s·(y - ymin)` to every vertex. For large
    /// enough `|s|` the triangles become obtuse; used to exercise the
    /// sign-structure checks.
    pub fn sheared(&self, s: f64) -> Self {
        let ymin = self.bounds.ymin;
        let vertices = self
            .vertices
            .iter()
            .map(|&[x, y]| [x + s * (y - ymin), y])
            .collect();
        Self {
            vertices,
            triangles: self.triangles.clone(),
            nx: self.nx,
            ny: self.ny,
            bounds: self.bounds,
        }
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn vertex_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    /// Signed area of triangle `t` (positive for counterclockwise orientation).
    pub fn triangle_area(&self, t: usize) -> f64 {
        signed_area(&self.vertices, &self.triangles[t])
    }

    pub fn triangle_diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        dist(a, b).max(dist(b, c)).max(dist(c, a))
    }

    pub fn triangle_points(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn size(&self) -> MeshSize {
        let mut h_max: f64 = 0.0;
        let mut h_min = f64::INFINITY;
        let mut area = 0.0;
        for t in 0..self.triangles.len() {
            let d = self.triangle_diameter(t);
            h_max = h_max.max(d);
            h_min = h_min.min(d);
            area += self.triangle_area(t);
        }
        MeshSize { h_max, h_min, area }
    }

    /// Returns the refinement ratio `r` if `fine` is a uniform `r`-fold
    /// refinement of this mesh over the same rectangle, so that every vertex
    /// of `self` is also a vertex of `fine` and the P1 spaces are nested.
    pub fn refinement_ratio(&self, fine: &Mesh) -> Option<usize> {
        if self.bounds != fine.bounds || fine.nx % self.nx != 0 || fine.ny % self.ny != 0 {
            return None;
        }
        let r = fine.nx / self.nx;
        (fine.ny / self.ny == r).then_some(r)
    }

    /// Value at `(x, y)` of the P1 function with nodal values `values`.
    /// Only valid for meshes built by [`Mesh::rectangle`]; points outside the
    /// rectangle are clamped onto it.
    pub fn evaluate_p1(&self, values: &[f64], x: f64, y: f64) -> f64 {
        let b = self.bounds;
        let sx = ((x - b.xmin) / b.width() * self.nx as f64).clamp(0.0, self.nx as f64);
        let sy = ((y - b.ymin) / b.height() * self.ny as f64).clamp(0.0, self.ny as f64);
        let i = (sx.floor() as usize).min(self.nx - 1);
        let j = (sy.floor() as usize).min(self.ny - 1);
        let fx = sx - i as f64;
        let fy = sy - j as f64;
        let v00 = values[self.vertex_index(i, j)];
        let v10 = values[self.vertex_index(i + 1, j)];
        let v01 = values[self.vertex_index(i, j + 1)];
        let v11 = values[self.vertex_index(i + 1, j + 1)];
        if fx >= fy {
            // lower triangle [v00, v10, v11]
            v00 + fx * (v10 - v00) + fy * (v11 - v10)
        } else {
            // upper triangle [v00, v11, v01]
            v00 + fy * (v01 - v00) + fx * (v11 - v01)
        }
    }

    /// Writes `vertices.csv` (`index,x,y`) and `triangles.csv` (`index,v0,v1,v2`).
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let vpath = dir.join("vertices.csv");
        let mut out = String::from("index,x,y\n");
        for (k, [x, y]) in self.vertices.iter().enumerate() {
            out.push_str(&format!("{k},{x},{y}\n"));
        }
        write_file(&vpath, &out)?;
        let tpath = dir.join("triangles.csv");
        let mut out = String::from("index,v0,v1,v2\n");
        for (k, [a, b, c]) in self.triangles.iter().enumerate() {
            out.push_str(&format!("{k},{a},{b},{c}\n"));
        }
        write_file(&tpath, &out)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path, e))
}

fn signed_area(vertices: &[[f64; 2]], tri: &[usize; 3]) -> f64 {
    let [a, b, c] = tri.map(|v| vertices[v]);
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> Mesh {
        Mesh::rectangle(n, n, Bounds::symmetric_unit()).unwrap()
    }

    #[test]
    fn counts() {
        let m = unit(1);
        assert_eq!((m.num_vertices(), m.num_triangles()), (4, 2));
        let m = unit(2);
        assert_eq!((m.num_vertices(), m.num_triangles()), (9, 8));
        let m = Mesh::rectangle(3, 5, Bounds::new(0.0, 3.0, 0.0, 1.0)).unwrap();
        assert_eq!(m.num_vertices(), 4 * 6);
        assert_eq!(m.num_triangles(), 30);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Mesh::rectangle(0, 3, Bounds::symmetric_unit()),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            Mesh::rectangle(2, 2, Bounds::new(1.0, 1.0, 0.0, 1.0)),
            Err(Error::InvalidArgument(_))
        ));
        assert!(Mesh::rectangle(2, 2, Bounds::new(0.0, f64::NAN, 0.0, 1.0)).is_err());
    }

    #[test]
    fn mesh_size_matches_cell_geometry() {
        let s = unit(10).size();
        assert!((s.h_max - 0.2 * 2f64.sqrt()).abs() < 1e-14);
        assert!((s.h_max / s.h_min - 1.0).abs() < 1e-12);
        assert!((s.area - 4.0).abs() < 1e-12);

        let h45 = unit(45).size().h_max;
        assert!((h45 - 0.0629).abs() < 5e-5);
        let h64 = unit(64).size().h_max;
        assert!((h64 - 0.0442).abs() < 5e-5);
    }

    #[test]
    fn orientation_and_right_angles() {
        let m = Mesh::rectangle(7, 4, Bounds::new(-1.0, 2.0, 0.5, 1.5)).unwrap();
        let mut area = 0.0;
        for t in 0..m.num_triangles() {
            assert!(m.triangle_area(t) > 0.0);
            area += m.triangle_area(t);
            let p = m.triangle_points(t);
            // exactly one vertex has a right angle between axis-parallel legs
            let right = (0..3)
                .filter(|&k| {
                    let a = p[k];
                    let b = p[(k + 1) % 3];
                    let c = p[(k + 2) % 3];
                    let d1 = [b[0] - a[0], b[1] - a[1]];
                    let d2 = [c[0] - a[0], c[1] - a[1]];
                    (d1[0] * d2[0] + d1[1] * d2[1]).abs() < 1e-14
                        && (d1[0] == 0.0 || d1[1] == 0.0)
                })
                .count();
            assert_eq!(right, 1, "triangle {t}");
        }
        assert!((area / 3.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interior_patch_area() {
        let m = unit(6);
        let dx = 2.0 / 6.0;
        let v = m.vertex_index(3, 2);
        let patch: f64 = (0..m.num_triangles())
            .filter(|&t| m.triangles()[t].contains(&v))
            .map(|t| m.triangle_area(t))
            .sum();
        assert!((patch - 3.0 * dx * dx).abs() < 1e-14);
    }

    #[test]
    fn lexicographic_vertex_order() {
        let m = Mesh::rectangle(2, 2, Bounds::symmetric_unit()).unwrap();
        let xs: Vec<f64> = m.vertices().iter().map(|v| v[0]).collect();
        assert_eq!(xs, vec![-1.0, 0.0, 1.0, -1.0, 0.0, 1.0, -1.0, 0.0, 1.0]);
        assert_eq!(m.vertices()[3], [-1.0, 0.0]);
    }

    #[test]
    fn refinement_and_p1_evaluation() {
        let coarse = unit(4);
        let fine = unit(8);
        assert_eq!(coarse.refinement_ratio(&fine), Some(2));
        assert_eq!(fine.refinement_ratio(&coarse), None);
        assert_eq!(coarse.refinement_ratio(&unit(6)), None);

        // linear functions are reproduced exactly
        let vals: Vec<f64> = coarse
            .vertices()
            .iter()
            .map(|&[x, y]| 1.0 + 2.0 * x - 3.0 * y)
            .collect();
        for &[x, y] in fine.vertices() {
            let v = coarse.evaluate_p1(&vals, x, y);
            assert!((v - (1.0 + 2.0 * x - 3.0 * y)).abs() < 1e-13);
        }
    }

    #[test]
    fn from_parts_checks_orientation() {
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(Mesh::from_parts(v.clone(), vec![[0, 1, 2]], 1, 1, Bounds::default()).is_ok());
        assert!(Mesh::from_parts(v.clone(), vec![[0, 2, 1]], 1, 1, Bounds::default()).is_err());
        assert!(Mesh::from_parts(v, vec![[0, 1, 5]], 1, 1, Bounds::default()).is_err());
    }

    #[test]
    fn csv_dump() {
        let dir = tempfile::tempdir().unwrap();
        unit(2).write_csv(dir.path()).unwrap();
        let v = std::fs::read_to_string(dir.path().join("vertices.csv")).unwrap();
        let t = std::fs::read_to_string(dir.path().join("triangles.csv")).unwrap();
        assert_eq!(v.lines().count(), 10);
        assert_eq!(t.lines().count(), 9);
        assert!(t.starts_with("index,v0,v1,v2\n0,0,1,4\n"));
    }
}

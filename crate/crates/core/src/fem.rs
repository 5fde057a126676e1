//! P1 finite element operators on a [`Mesh`].
//!
//! [`AssembledOperators`] holds the mass matrix `M` and stiffness matrix `K`
//! together with a cached sparse Cholesky factorization of `M`. All discrete
//! operators act on nodal coefficient vectors ([`NodalField`]):
//!
//! * nodal interpolation `I_h` and `L²` projection `P_h`,
//! * the discrete Laplacian `Δ_h`, defined by `M (Δ_h z) = -K z`,
//! * its inverse on mean-zero fields, `K x = M z` with `(x, 1) = 0`,
//! * the discrete `H⁻¹` inner product `(z₁, -Δ_h⁻¹ z₂)`.

use std::ops::{Deref, DerefMut};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::{ColMut, Side};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sparse::{dot, norm2, CsrMatrix};

/// Nodal coefficient vector of a P1 function.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodalField(Vec<f64>);

impl NodalField {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self(vec![c; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self - other`
    pub fn sub(&self, other: &NodalField) -> NodalField {
        NodalField(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> NodalField {
        NodalField(self.0.iter().map(|&v| f(v)).collect())
    }
}

impl Deref for NodalField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for NodalField {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for NodalField {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Standard norms of a P1 function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l2: f64,
    pub h1_semi: f64,
    pub h1: f64,
    pub linf: f64,
}

/// `f(u) = u³ - u`, the derivative of the double-well potential `¼(u² - 1)²`.
#[inline]
pub fn double_well_derivative(u: f64) -> f64 {
    u * u * u - u
}

/// Nodal values of `I_h f(u)` with `f(u) = u³ - u`.
pub fn apply_f(u: &NodalField) -> NodalField {
    u.map(double_well_derivative)
}

/// Nodal interpolant `I_h f`: `values[i] = f(vertex_i)`.
pub fn interpolate(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Result<NodalField> {
    let mut values = Vec::with_capacity(mesh.num_vertices());
    for (i, &[x, y]) in mesh.vertices().iter().enumerate() {
        let v = f(x, y);
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite value {v} at vertex {i} ({x}, {y})"
            )));
        }
        values.push(v);
    }
    Ok(NodalField(values))
}

/// Symmetric 7-point triangle rule, exact for polynomials of degree 5.
/// Entries are barycentric coordinates and weights summing to 1.
pub(crate) fn triangle_rule() -> [([f64; 3], f64); 7] {
    let s15 = 15f64.sqrt();
    let a1 = (6.0 - s15) / 21.0;
    let a2 = (6.0 + s15) / 21.0;
    let w1 = (155.0 - s15) / 1200.0;
    let w2 = (155.0 + s15) / 1200.0;
    let b1 = 1.0 - 2.0 * a1;
    let b2 = 1.0 - 2.0 * a2;
    [
        ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 9.0 / 40.0),
        ([a1, a1, b1], w1),
        ([a1, b1, a1], w1),
        ([b1, a1, a1], w1),
        ([a2, a2, b2], w2),
        ([a2, b2, a2], w2),
        ([b2, a2, a2], w2),
    ]
}

/// Mesh-bound mass and stiffness matrices with cached solver state.
pub struct AssembledOperators {
    mass: CsrMatrix,
    stiffness: CsrMatrix,
    mass_llt: Llt<usize, f64>,
    stiffness_diag: Vec<f64>,
    /// `M · 1`, i.e. `∫ φ_i`.
    mass_weights: Vec<f64>,
    area: f64,
}

impl std::fmt::Debug for AssembledOperators {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AssembledOperators")
            .field("n", &self.len())
            .field("mass_nnz", &self.mass.nnz())
            .field("stiffness_nnz", &self.stiffness.nnz())
            .field("area", &self.area)
            .finish()
    }
}

/// Tolerance on `|(z, 1)| / ‖z‖` below which a field counts as mean-zero.
pub const MEAN_ZERO_TOL: f64 = 1e-10;
/// Relative residual target of the constrained stiffness solve.
pub const CG_TOL: f64 = 1e-12;

impl AssembledOperators {
    /// Assembles `M` and `K` by exact element integration.
    pub fn assemble(mesh: &Mesh) -> Result<Self> {
        let n = mesh.num_vertices();
        let mut m_trip = Vec::with_capacity(9 * mesh.num_triangles());
        let mut k_trip = Vec::with_capacity(9 * mesh.num_triangles());
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let (me, ke) = element_matrices(mesh.triangle_points(t))
                .ok_or_else(|| Error::Assembly(format!("degenerate triangle {t}")))?;
            for a in 0..3 {
                for b in 0..3 {
                    m_trip.push((tri[a], tri[b], me[a][b]));
                    k_trip.push((tri[a], tri[b], ke[a][b]));
                }
            }
        }
        let mass = CsrMatrix::from_triplets(n, n, &m_trip);
        let stiffness = CsrMatrix::from_triplets(n, n, &k_trip);
        let mass_llt = mass
            .to_faer()?
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::Assembly(format!("mass matrix factorization: {e:?}")))?;
        let mass_weights = mass.mul_vec(&vec![1.0; n]);
        let area = mass_weights.iter().sum();
        let stiffness_diag = stiffness.diagonal();
        Ok(Self {
            mass,
            stiffness,
            mass_llt,
            stiffness_diag,
            mass_weights,
            area,
        })
    }

    pub fn len(&self) -> usize {
        self.mass.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// Domain area `Σ_ij M_ij`.
    pub fn area(&self) -> f64 {
        self.area
    }

    /// `(z, 1)`
    pub fn integral(&self, z: &[f64]) -> f64 {
        dot(&self.mass_weights, z)
    }

    /// `(z, v)`
    pub fn l2_inner(&self, z: &[f64], v: &[f64]) -> f64 {
        self.mass.bilinear(z, v)
    }

    /// `(∇z, ∇v)`
    pub fn h1_inner(&self, z: &[f64], v: &[f64]) -> f64 {
        self.stiffness.bilinear(z, v)
    }

    fn check_len(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values, operators have {} vertices",
                z.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// Solves `M x = b` with the cached factorization.
    pub fn solve_mass(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_len(b)?;
        let mut x = b.to_vec();
        self.mass_llt.solve_in_place(ColMut::from_slice_mut(&mut x));
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::LinearSolve("mass solve produced non-finite values".into()));
        }
        Ok(x)
    }

    /// `L²` projection `P_h f`, with load vector from the 7-point rule.
    pub fn l2_project(&self, mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Result<NodalField> {
        let b = load_vector(mesh, &f)?;
        self.check_len(&b)?;
        Ok(NodalField(self.solve_mass(&b)?))
    }

    /// `Δ_h z`: solves `M y = -K z`.
    pub fn discrete_laplacian(&self, z: &[f64]) -> Result<NodalField> {
        self.check_len(z)?;
        let mut kz = self.stiffness.mul_vec(z);
        kz.iter_mut().for_each(|v| *v = -*v);
        Ok(NodalField(self.solve_mass(&kz)?))
    }

    /// `Δ_h⁻¹ z` for mean-zero `z`: the mean-zero `x` with `K x = -M z`.
    pub fn inv_discrete_laplacian(&self, z: &[f64]) -> Result<NodalField> {
        let mut x = self.neg_inv_laplacian(z)?;
        x.iter_mut().for_each(|v| *v = -*v);
        Ok(NodalField(x))
    }

    /// `-Δ_h⁻¹ z`: the mean-zero solution of `K x = M z`.
    fn neg_inv_laplacian(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_len(z)?;
        let scale = norm2(z) * self.area.sqrt();
        let mean = self.integral(z);
        if mean.abs() > MEAN_ZERO_TOL * scale.max(f64::MIN_POSITIVE) && scale > 0.0 {
            return Err(Error::Precondition(format!(
                "field is not mean-zero: (z, 1) = {mean:e}"
            )));
        }
        let mut b = self.mass.mul_vec(z);
        // project onto range(K) = constants^⊥
        let shift = b.iter().sum::<f64>() / b.len() as f64;
        b.iter_mut().for_each(|v| *v -= shift);
        let mut x = self.pcg_stiffness(&b)?;
        let shift = self.integral(&x) / self.area;
        x.iter_mut().for_each(|v| *v -= shift);
        Ok(x)
    }

    /// Jacobi-preconditioned conjugate gradients for the singular but
    /// consistent system `K x = b`, with `b ⟂ 1`.
    fn pcg_stiffness(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = b.len();
        let bnorm = norm2(b);
        let mut x = vec![0.0; n];
        if bnorm == 0.0 {
            return Ok(x);
        }
        let inv_diag: Vec<f64> = self
            .stiffness_diag
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut kp = vec![0.0; n];
        let max_iter = 10 * n + 100;
        for it in 0..max_iter {
            self.stiffness.mul_vec_into(&p, &mut kp);
            let pkp = dot(&p, &kp);
            if pkp <= 0.0 {
                break;
            }
            let alpha = rz / pkp;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * kp[i];
            }
            if norm2(&r) <= 0.1 * CG_TOL * bnorm || (it + 1) % 50 == 0 {
                // refresh with the true residual to avoid drift
                self.stiffness.mul_vec_into(&x, &mut kp);
                for i in 0..n {
                    r[i] = b[i] - kp[i];
                }
                if norm2(&r) <= CG_TOL * bnorm {
                    return Ok(x);
                }
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        self.stiffness.mul_vec_into(&x, &mut kp);
        let res = norm2(&b.iter().zip(&kp).map(|(b, k)| b - k).collect::<Vec<_>>());
        if res <= CG_TOL * bnorm {
            Ok(x)
        } else {
            Err(Error::LinearSolve(format!(
                "conjugate gradients stalled at relative residual {:e}",
                res / bnorm
            )))
        }
    }

    /// Discrete `H⁻¹` inner product `(z₁, -Δ_h⁻¹ z₂)` of mean-zero fields.
    pub fn h_minus1_inner(&self, z1: &[f64], z2: &[f64]) -> Result<f64> {
        self.check_len(z1)?;
        let x2 = self.neg_inv_laplacian(z2)?;
        Ok(self.l2_inner(z1, &x2))
    }

    pub fn h_minus1_norm(&self, z: &[f64]) -> Result<f64> {
        Ok(self.h_minus1_inner(z, z)?.max(0.0).sqrt())
    }

    pub fn norms(&self, z: &[f64]) -> Norms {
        let l2_sq = self.l2_inner(z, z).max(0.0);
        let h1_sq = self.h1_inner(z, z).max(0.0);
        Norms {
            l2: l2_sq.sqrt(),
            h1_semi: h1_sq.sqrt(),
            h1: (l2_sq + h1_sq).sqrt(),
            linf: z.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    /// `Q(u) = Σ_ij u_i³ u_j K_ij`, nonnegative whenever `K` is diagonally
    /// dominant with nonpositive off-diagonal entries.
    pub fn nonlinear_form(&self, u: &[f64]) -> f64 {
        let cubes: Vec<f64> = u.iter().map(|v| v * v * v).collect();
        self.stiffness.bilinear(&cubes, u)
    }

    /// Checks the sign structure of `M` and `K` entry by entry.
    pub fn structure_report(&self) -> StructureReport {
        let mut rep = StructureReport {
            mass_sum: self.area,
            mass_symmetric: self.mass.is_symmetric(1e-14),
            stiffness_symmetric: self.stiffness.is_symmetric(1e-14),
            min_mass_entry: f64::INFINITY,
            max_row_sum_ratio: 0.0,
            max_offdiag: f64::NEG_INFINITY,
            min_dominance_margin: f64::INFINITY,
            dominance_violations: 0,
        };
        for (_, _, v) in self.mass.entries() {
            rep.min_mass_entry = rep.min_mass_entry.min(v);
        }
        for r in 0..self.stiffness.nrows() {
            let mut sum = 0.0;
            let mut abs_sum = 0.0;
            let mut off_abs = 0.0;
            let mut diag = 0.0;
            for (c, v) in self.stiffness.row(r) {
                sum += v;
                abs_sum += v.abs();
                if c == r {
                    diag = v;
                } else {
                    off_abs += v.abs();
                    rep.max_offdiag = rep.max_offdiag.max(v);
                }
            }
            if abs_sum > 0.0 {
                rep.max_row_sum_ratio = rep.max_row_sum_ratio.max(sum.abs() / abs_sum);
            }
            let margin = diag - off_abs;
            rep.min_dominance_margin = rep.min_dominance_margin.min(margin / abs_sum.max(1e-300));
            // exact row-wise comparison, up to the rounding of the row sum itself
            if margin < -1e-12 * abs_sum {
                rep.dominance_violations += 1;
            }
        }
        rep
    }
}

/// Sign and symmetry diagnostics of the assembled matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    pub mass_sum: f64,
    pub mass_symmetric: bool,
    pub stiffness_symmetric: bool,
    pub min_mass_entry: f64,
    /// `max_k |Σ_j K_kj| / Σ_j |K_kj|`
    pub max_row_sum_ratio: f64,
    pub max_offdiag: f64,
    /// `min_k (K_kk - Σ_{i≠k} |K_ki|) / Σ_j |K_kj|`
    pub min_dominance_margin: f64,
    pub dominance_violations: usize,
}

impl StructureReport {
    pub fn nonpositive_offdiag(&self) -> bool {
        self.max_offdiag <= 0.0
    }

    pub fn diagonally_dominant(&self) -> bool {
        self.dominance_violations == 0
    }
}

/// Element mass and stiffness matrices of a P1 triangle.
fn element_matrices(p: [[f64; 2]; 3]) -> Option<([[f64; 3]; 3], [[f64; 3]; 3])> {
    let area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let scale = [p[1][0] - p[0][0], p[2][0] - p[0][0], p[1][1] - p[0][1], p[2][1] - p[0][1]]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if !(area2 > 1e-14 * scale * scale) {
        return None;
    }
    let area = 0.5 * area2;
    // ∇λ_i = (y_j - y_k, x_k - x_j) / (2A) for cyclic (i, j, k)
    let grads: [[f64; 2]; 3] = std::array::from_fn(|i| {
        let j = (i + 1) % 3;
        let k = (i + 2) % 3;
        [(p[j][1] - p[k][1]) / area2, (p[k][0] - p[j][0]) / area2]
    });
    let mut me = [[0.0; 3]; 3];
    let mut ke = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            me[a][b] = area / 12.0 * if a == b { 2.0 } else { 1.0 };
            ke[a][b] = area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
        }
    }
    Some((me, ke))
}

/// `b_i = ∫ f φ_i` by the 7-point rule on every triangle.
fn load_vector(mesh: &Mesh, f: &impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
    let rule = triangle_rule();
    let mut b = vec![0.0; mesh.num_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let p = mesh.triangle_points(t);
        let area = mesh.triangle_area(t);
        for &(lam, w) in &rule {
            let x = lam[0] * p[0][0] + lam[1] * p[1][0] + lam[2] * p[2][0];
            let y = lam[0] * p[0][1] + lam[1] * p[1][1] + lam[2] * p[2][1];
            let fv = f(x, y);
            if !fv.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite integrand {fv} at ({x}, {y})"
                )));
            }
            for a in 0..3 {
                b[tri[a]] += w * area * fv * lam[a];
            }
        }
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Bounds;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize) -> (Mesh, AssembledOperators) {
        let mesh = Mesh::rectangle(n, n, Bounds::symmetric_unit()).unwrap();
        let ops = AssembledOperators::assemble(&mesh).unwrap();
        (mesh, ops)
    }

    fn random_field(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(lo..hi)).collect()
    }

    fn mean_zero(ops: &AssembledOperators, mut z: Vec<f64>) -> Vec<f64> {
        let m = ops.integral(&z) / ops.area();
        z.iter_mut().for_each(|v| *v -= m);
        z
    }

    /// Exact element integration oracle: monomials on a right triangle with
    /// legs `dx`, `dy` integrated in closed form, independent of the
    /// barycentric-gradient formulas used in assembly.
    fn reference_element_stiffness(dx: f64, dy: f64, lower: bool) -> [[f64; 3]; 3] {
        // basis on [(0,0),(dx,0),(dx,dy)] with right angle at (dx,0):
        // φ0 = 1 - x/dx, φ1 = x/dx - y/dy, φ2 = y/dy (constant gradients)
        let g = if lower {
            [[-1.0 / dx, 0.0], [1.0 / dx, -1.0 / dy], [0.0, 1.0 / dy]]
        } else {
            // [(0,0),(dx,dy),(0,dy)]: φ0 = 1 - y/dy, φ1 = x/dx, φ2 = y/dy - x/dx
            [[0.0, -1.0 / dy], [1.0 / dx, 0.0], [-1.0 / dx, 1.0 / dy]]
        };
        let area = 0.5 * dx * dy;
        std::array::from_fn(|a| std::array::from_fn(|b| area * (g[a][0] * g[b][0] + g[a][1] * g[b][1])))
    }

    #[test]
    fn five_point_pattern_on_uniform_grid() {
        let (mesh, ops) = setup(6);
        let h = 2.0 / 6.0;
        let k = ops.stiffness();
        let c = mesh.vertex_index(3, 3);
        assert!((k.get(c, c) - 4.0).abs() < 1e-13);
        for (i, j) in [(2, 3), (4, 3), (3, 2), (3, 4)] {
            assert!((k.get(c, mesh.vertex_index(i, j)) + 1.0).abs() < 1e-13);
        }
        for (i, j) in [(2, 2), (4, 4)] {
            assert!(k.get(c, mesh.vertex_index(i, j)).abs() < 1e-13);
        }
        assert_eq!(k.get(c, mesh.vertex_index(2, 4)), 0.0);
        assert!((k.row(c).map(|(_, v)| v).sum::<f64>()).abs() < 1e-13);

        // oracle: sum the closed-form element matrices over the 6-triangle patch
        let lower = reference_element_stiffness(h, h, true);
        let upper = reference_element_stiffness(h, h, false);
        let mut patch = 0.0;
        for t in 0..mesh.num_triangles() {
            let tri = mesh.triangles()[t];
            if let Some(a) = tri.iter().position(|&v| v == c) {
                let em = if t % 2 == 0 { lower } else { upper };
                patch += em[a][a];
            }
        }
        assert!((patch - k.get(c, c)).abs() < 1e-13);

        let row_mass: f64 = ops.mass().row(c).map(|(_, v)| v).sum();
        assert!((row_mass - h * h).abs() < 1e-15);
    }

    #[test]
    fn kernel_and_partition_of_unity() {
        for n in [1, 3, 8] {
            let (_, ops) = setup(n);
            let ones = vec![1.0; ops.len()];
            let k1 = ops.stiffness().mul_vec(&ones);
            let knorm = ops.stiffness().values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(k1.iter().all(|v| v.abs() <= 1e-12 * knorm));
            assert!((ops.area() - 4.0).abs() < 1e-12);
            let rep = ops.structure_report();
            assert!(rep.mass_symmetric && rep.stiffness_symmetric);
            assert!(rep.min_mass_entry >= 0.0);
            assert!(rep.nonpositive_offdiag());
            assert!(rep.diagonally_dominant());
        }
    }

    #[test]
    fn sheared_mesh_breaks_dominance() {
        let mesh = Mesh::rectangle(4, 4, Bounds::symmetric_unit()).unwrap().sheared(1.5);
        let ops = AssembledOperators::assemble(&mesh).unwrap();
        let rep = ops.structure_report();
        assert!(!rep.nonpositive_offdiag());
        assert!(!rep.diagonally_dominant());
    }

    #[test]
    fn degenerate_triangle_is_an_assembly_error() {
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0, 0.0]];
        let mesh = Mesh::from_parts(v[..3].to_vec(), vec![[0, 1, 2]], 1, 1, Bounds::default()).unwrap();
        assert!(AssembledOperators::assemble(&mesh).is_ok());
        assert!(element_matrices([v[0], v[1], v[3]]).is_none());
    }

    #[test]
    fn interpolation() {
        let (mesh, _) = setup(2);
        let ones = interpolate(&mesh, |_, _| 1.0).unwrap();
        assert!(ones.iter().all(|&v| v == 1.0));
        let x = interpolate(&mesh, |x, _| x).unwrap();
        assert_eq!(&x[..3], &[-1.0, 0.0, 1.0]);
        let err = interpolate(&mesh, |x, _| 1.0 / x).unwrap_err();
        assert!(err.to_string().contains("vertex 1"));

        let eps = 0.1;
        let u0 = |x: f64, y: f64| ((x * x + y * y - 0.36) / (2f64.sqrt() * eps)).tanh();
        let v = interpolate(&mesh, u0).unwrap();
        let origin = mesh.vertex_index(1, 1);
        // tanh(-0.36 / (0.1·√2)) evaluated independently
        assert!((v[origin] + 0.987_773_549_878_479_8).abs() < 1e-14);
        // idempotent when re-interpolating the P1 function itself
        let again = interpolate(&mesh, |x, y| mesh.evaluate_p1(&v, x, y)).unwrap();
        for (a, b) in v.iter().zip(again.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn double_well() {
        let u = NodalField::new(vec![1.0, -1.0, 0.0, 2.0, 0.5]);
        assert_eq!(apply_f(&u).values(), &[0.0, 0.0, 0.0, 6.0, -0.375]);
    }

    #[test]
    fn projection_reproduces_linears() {
        let (mesh, ops) = setup(5);
        let c = ops.l2_project(&mesh, |_, _| 0.7).unwrap();
        assert!(c.iter().all(|v| (v - 0.7).abs() < 1e-10));
        let lin = ops.l2_project(&mesh, |x, y| 2.0 - x + 3.0 * y).unwrap();
        for (v, &[x, y]) in lin.iter().zip(mesh.vertices()) {
            assert!((v - (2.0 - x + 3.0 * y)).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_preserves_integral() {
        // oracle: composite Gauss-Legendre (5 points) on a 10x finer tensor grid
        let eps = 0.1;
        let u0 = |x: f64, y: f64| ((x * x + y * y - 0.36) / (2f64.sqrt() * eps)).tanh();
        let (mesh, ops) = setup(16);
        let p = ops.l2_project(&mesh, u0).unwrap();
        let gl = [
            (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
            (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
            (0.0, 0.568_888_888_888_888_9),
            (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
            (0.906_179_845_938_664, 0.236_926_885_056_189_1),
        ];
        let cells = 160;
        let hc = 2.0 / cells as f64;
        let mut exact = 0.0;
        for i in 0..cells {
            for j in 0..cells {
                let (cx, cy) = (-1.0 + (i as f64 + 0.5) * hc, -1.0 + (j as f64 + 0.5) * hc);
                for &(xi, wi) in &gl {
                    for &(yj, wj) in &gl {
                        exact += wi * wj * hc * hc / 4.0 * u0(cx + xi * hc / 2.0, cy + yj * hc / 2.0);
                    }
                }
            }
        }
        let got = ops.integral(&p);
        assert!((got - exact).abs() < 1e-3, "{got} vs {exact}");
    }

    #[test]
    fn discrete_laplacian_identities() {
        let (mesh, ops) = setup(8);
        let zero = ops.discrete_laplacian(&vec![3.0; ops.len()]).unwrap();
        assert!(zero.iter().all(|v| v.abs() < 1e-10));
        let x = interpolate(&mesh, |x, _| x).unwrap();
        assert!((ops.h1_inner(&x, &x) - 4.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = random_field(&mut rng, ops.len(), -1.0, 1.0);
        let y = ops.discrete_laplacian(&z).unwrap();
        for _ in 0..10 {
            let v = random_field(&mut rng, ops.len(), -1.0, 1.0);
            // oracle: element-by-element gradient pairing
            let mut grad_pair = 0.0;
            for t in 0..mesh.num_triangles() {
                let p = mesh.triangle_points(t);
                let tri = mesh.triangles()[t];
                let (_, ke) = element_matrices(p).unwrap();
                for a in 0..3 {
                    for b in 0..3 {
                        grad_pair += z[tri[a]] * ke[a][b] * v[tri[b]];
                    }
                }
            }
            let lhs = ops.l2_inner(&y, &v);
            assert!((lhs + grad_pair).abs() < 1e-10 * grad_pair.abs().max(1.0));
        }
    }

    #[test]
    fn inverse_laplacian_round_trip() {
        let (_, ops) = setup(8);
        let zero = ops.inv_discrete_laplacian(&vec![0.0; ops.len()]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let z = mean_zero(&ops, random_field(&mut rng, ops.len(), -1.0, 1.0));
            let x = ops.inv_discrete_laplacian(&z).unwrap();
            assert!(ops.integral(&x).abs() < 1e-12);
            let back = ops.discrete_laplacian(&x).unwrap();
            let err: f64 = back.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            assert!(err <= 1e-9 * norm2(&z), "{err}");
            // -xᵀK x = xᵀ M z with x = Δ_h⁻¹ z
            let xkx = ops.h1_inner(&x, &x);
            assert!(xkx >= 0.0);
            assert!((xkx + ops.l2_inner(&x, &z)).abs() < 1e-10 * xkx.max(1e-300));
        }
    }

    #[test]
    fn inverse_laplacian_rejects_nonzero_mean() {
        let (_, ops) = setup(4);
        let err = ops.inv_discrete_laplacian(&vec![1.0; ops.len()]).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn h_minus1_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut constants = Vec::new();
        for n in [8, 16, 32] {
            let (_, ops) = setup(n);
            let mut worst: f64 = 0.0;
            for _ in 0..5 {
                let z = mean_zero(&ops, random_field(&mut rng, ops.len(), -1.0, 1.0));
                let p = mean_zero(&ops, random_field(&mut rng, ops.len(), -1.0, 1.0));
                let zp = ops.h_minus1_inner(&z, &p).unwrap();
                let pz = ops.h_minus1_inner(&p, &z).unwrap();
                assert!((zp - pz).abs() <= 1e-9 * zp.abs().max(pz.abs()).max(1e-300));
                let zn = ops.h_minus1_norm(&z).unwrap();
                let lhs = ops.l2_inner(&z, &p).abs();
                let rhs = zn * ops.norms(&p).h1_semi;
                assert!(lhs <= rhs * (1.0 + 1e-10));
                worst = worst.max(zn / ops.norms(&z).l2);
            }
            constants.push(worst);
        }
        // ‖z‖_{-1,h} ≤ C ‖z‖_{L²}, C not growing under refinement
        assert!(constants[1] <= constants[0] * 1.05 && constants[2] <= constants[0] * 1.05, "{constants:?}");
    }

    #[test]
    fn norms_of_simple_fields() {
        let (mesh, ops) = setup(6);
        let n = ops.norms(&vec![1.0; ops.len()]);
        assert!((n.l2 - 2.0).abs() < 1e-12);
        assert!(n.h1_semi.abs() < 1e-6);
        assert_eq!(n.linf, 1.0);
        let x = interpolate(&mesh, |x, _| x).unwrap();
        assert!((ops.norms(&x).h1_semi - 2.0).abs() < 1e-12);

        // oracle: per-element 7-point quadrature of z² (exact for quadratics)
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = random_field(&mut rng, ops.len(), -2.0, 2.0);
        let mut q = 0.0;
        for t in 0..mesh.num_triangles() {
            let tri = mesh.triangles()[t];
            let area = mesh.triangle_area(t);
            for (lam, w) in triangle_rule() {
                let v: f64 = (0..3).map(|a| lam[a] * z[tri[a]]).sum();
                q += w * area * v * v;
            }
        }
        assert!((ops.norms(&z).l2.powi(2) - q).abs() < 1e-10);
    }

    #[test]
    fn nonlinear_form_sign() {
        let (mesh, ops) = setup(10);
        assert!(ops.nonlinear_form(&vec![0.3; ops.len()]).abs() < 1e-12);
        let x = interpolate(&mesh, |x, _| x).unwrap();
        assert!(ops.nonlinear_form(&x) > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let u = random_field(&mut rng, ops.len(), -2.0, 2.0);
            let scale: f64 = u.iter().map(|v| v.powi(4)).sum();
            assert!(ops.nonlinear_form(&u) >= -1e-12 * scale);
        }
    }
}

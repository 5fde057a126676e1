//! Time stepping of the fully discrete mixed scheme.
//!
//! Given `u⁽ⁿ⁻¹⁾` and a scalar Wiener increment `ΔWⁿ`, one step finds
//! `(uⁿ, wⁿ)` with
//!
//! ```text
//! M (uⁿ - uⁿ⁻¹) + τ K wⁿ      = δ ΔWⁿ M g(uⁿ⁻¹)
//! ε K uⁿ + (1/ε) M f(uⁿ) - M wⁿ = 0
//! ```
//!
//! where `f(u) = u³ - u` and `g` are applied nodewise (`I_h`). The coupled
//! nonlinear system is solved by damped Newton iteration with a sparse LU
//! factorization of the `2N × 2N` Jacobian whose symbolic analysis is shared
//! by every iteration, step and path.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat};
use faer::ColMut;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{double_well_derivative, AssembledOperators, NodalField};
use crate::noise::{checksum, IncrementVariance, NoiseStream};
use crate::sparse::{norm2, norm_inf};

/// Tabulated diffusion coefficient, piecewise linear between knots and
/// linearly extrapolated beyond them. The declared Lipschitz bound is
/// recorded but not verified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionTable {
    pub u: Vec<f64>,
    pub g: Vec<f64>,
    pub lipschitz: f64,
}

impl DiffusionTable {
    pub fn validate(&self) -> Result<()> {
        if self.u.len() < 2 || self.u.len() != self.g.len() {
            return Err(Error::InvalidArgument(
                "diffusion table needs at least two knots and matching u/g lengths".into(),
            ));
        }
        if self.u.iter().chain(&self.g).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("diffusion table has non-finite entries".into()));
        }
        if self.u.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "diffusion table knots must be strictly increasing".into(),
            ));
        }
        if !(self.lipschitz >= 0.0) {
            return Err(Error::InvalidArgument("diffusion table needs a Lipschitz bound".into()));
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.u.len();
        let k = match self.u.partition_point(|&k| k <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let t = (x - self.u[k]) / (self.u[k + 1] - self.u[k]);
        self.g[k] + t * (self.g[k + 1] - self.g[k])
    }
}

/// Diffusion coefficient `g` of the multiplicative noise `δ g(u) dW`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diffusion {
    /// `g(u) = u`
    #[default]
    Identity,
    /// `g(u) = √(u² + 1)`
    Sqrt1p,
    Table(DiffusionTable),
}

impl Diffusion {
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Diffusion::Identity => u,
            Diffusion::Sqrt1p => (u * u + 1.0).sqrt(),
            Diffusion::Table(t) => t.eval(u),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeParams {
    /// Interface width `ε`.
    pub epsilon: f64,
    /// Noise intensity `δ`.
    pub delta: f64,
    /// Time step `τ`.
    pub tau: f64,
    /// Final time `T`.
    pub final_time: f64,
    pub diffusion: Diffusion,
    /// Scaled ∞-norm residual tolerance of the Newton iteration.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub increment_variance: IncrementVariance,
}

pub const DEFAULT_NEWTON_TOL: f64 = 1e-10;
pub const DEFAULT_NEWTON_MAX_ITER: usize = 50;
const MAX_HALVINGS: usize = 8;

#[derive(Debug, Clone, Copy)]
struct Merit {
    inf: f64,
    l2: f64,
}

impl SchemeParams {
    pub fn new(epsilon: f64, delta: f64, tau: f64, final_time: f64) -> Self {
        Self {
            epsilon,
            delta,
            tau,
            final_time,
            diffusion: Diffusion::Identity,
            newton_tol: DEFAULT_NEWTON_TOL,
            newton_max_iter: DEFAULT_NEWTON_MAX_ITER,
            increment_variance: IncrementVariance::Tau,
        }
    }

    pub fn with_diffusion(mut self, diffusion: Diffusion) -> Self {
        self.diffusion = diffusion;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.final_time > 0.0 && self.final_time.is_finite()) {
            return bad(format!("final time must be positive, got {}", self.final_time));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be nonnegative, got {}", self.delta));
        }
        let ratio = self.final_time / self.tau;
        if (ratio - ratio.round()).abs() >= 0.5 || ratio.round() < 1.0 {
            return bad(format!("T/tau = {ratio} does not define a uniform partition"));
        }
        if !(self.newton_tol > 0.0) || self.newton_max_iter == 0 {
            return bad("Newton tolerance and iteration cap must be positive".into());
        }
        if let Diffusion::Table(t) = &self.diffusion {
            t.validate()?;
        }
        Ok(())
    }

    /// `N = round(T / τ)`
    pub fn num_steps(&self) -> usize {
        (self.final_time / self.tau).round() as usize
    }

    pub fn draw_increment(&self, stream: &NoiseStream, step: usize) -> f64 {
        stream.increment(step, self.tau, self.increment_variance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub u: NodalField,
    pub w: NodalField,
    pub newton_iters: usize,
    /// Final scaled residual.
    pub residual: f64,
}

/// Receives `(n, uⁿ, wⁿ)` after every step; step 0 carries the initial
/// field and no chemical potential.
pub trait Observer {
    fn observe(&mut self, step: usize, u: &NodalField, w: Option<&NodalField>);
}

impl<F: FnMut(usize, &NodalField, Option<&NodalField>)> Observer for F {
    fn observe(&mut self, step: usize, u: &NodalField, w: Option<&NodalField>) {
        self(step, u, w)
    }
}

/// No-op observer.
pub struct Ignore;

impl Observer for Ignore {
    fn observe(&mut self, _: usize, _: &NodalField, _: Option<&NodalField>) {}
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSummary {
    pub path_index: u64,
    pub steps: usize,
    pub newton_iters_total: usize,
    pub newton_iters_max: usize,
    pub max_residual: f64,
    pub increments_checksum: u64,
    pub u: NodalField,
    pub w: Option<NodalField>,
}

/// Newton solver for one mesh and one parameter set. Holds only immutable
/// state, so a single stepper can serve concurrent paths.
pub struct Stepper<'a> {
    ops: &'a AssembledOperators,
    params: SchemeParams,
    jac_pattern: SymbolicSparseColMat<usize>,
    jac_order: Argsort<usize>,
    lu_symbolic: SymbolicLu<usize>,
    /// `(row, col)` of every stored entry of the shared `M`/`K` pattern.
    pattern: Vec<(usize, usize)>,
    mass_vals: Vec<f64>,
    stiff_vals: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(ops: &'a AssembledOperators, params: SchemeParams) -> Result<Self> {
        params.validate()?;
        let n = ops.len();
        let pattern: Vec<(usize, usize)> = ops.mass().entries().map(|(r, c, _)| (r, c)).collect();
        let stiff_pattern: Vec<(usize, usize)> =
            ops.stiffness().entries().map(|(r, c, _)| (r, c)).collect();
        if pattern != stiff_pattern {
            return Err(Error::Assembly("mass and stiffness patterns differ".into()));
        }
        let mass_vals = ops.mass().values().to_vec();
        let stiff_vals = ops.stiffness().values().to_vec();

        let mut pairs = Vec::with_capacity(4 * pattern.len());
        for (br, bc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            pairs.extend(pattern.iter().map(|&(r, c)| Pair::new(br * n + r, bc * n + c)));
        }
        let (jac_pattern, jac_order) = SymbolicSparseColMat::try_new_from_indices(2 * n, 2 * n, &pairs)
            .map_err(|e| Error::Assembly(format!("Jacobian pattern: {e:?}")))?;
        let lu_symbolic = SymbolicLu::try_new(jac_pattern.as_ref())
            .map_err(|e| Error::LinearSolve(format!("symbolic LU: {e:?}")))?;
        Ok(Self {
            ops,
            params,
            jac_pattern,
            jac_order,
            lu_symbolic,
            pattern,
            mass_vals,
            stiff_vals,
        })
    }

    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    pub fn ops(&self) -> &AssembledOperators {
        self.ops
    }

    fn residual(
        &self,
        u: &[f64],
        w: &[f64],
        u_prev: &[f64],
        noise: &[f64],
        r1: &mut [f64],
        r2: &mut [f64],
    ) -> Merit {
        let (eps, tau) = (self.params.epsilon, self.params.tau);
        r1.fill(0.0);
        r2.fill(0.0);
        let fu: Vec<f64> = u.iter().map(|&v| double_well_derivative(v)).collect();
        for (k, &(r, c)) in self.pattern.iter().enumerate() {
            let m = self.mass_vals[k];
            let s = self.stiff_vals[k];
            r1[r] += m * (u[c] - u_prev[c]) + tau * s * w[c];
            r2[r] += eps * s * u[c] + m * (fu[c] / eps - w[c]);
        }
        for (r, n) in r1.iter_mut().zip(noise) {
            *r -= n;
        }
        Merit {
            inf: norm_inf(r1).max(norm_inf(r2)),
            l2: norm2(r1).hypot(norm2(r2)),
        }
    }

    fn factor_jacobian(&self, u: &[f64]) -> Result<Lu<usize, f64>> {
        let (eps, tau) = (self.params.epsilon, self.params.tau);
        let nnz = self.pattern.len();
        let mut vals = Vec::with_capacity(4 * nnz);
        vals.extend_from_slice(&self.mass_vals);
        vals.extend(self.stiff_vals.iter().map(|s| tau * s));
        vals.extend(self.pattern.iter().enumerate().map(|(k, &(_, c))| {
            eps * self.stiff_vals[k] + self.mass_vals[k] * (3.0 * u[c] * u[c] - 1.0) / eps
        }));
        vals.extend(self.mass_vals.iter().map(|m| -m));
        let jac = SparseColMat::new_from_argsort(self.jac_pattern.clone(), &self.jac_order, &vals)
            .map_err(|e| Error::LinearSolve(format!("Jacobian values: {e:?}")))?;
        Lu::try_new_with_symbolic(self.lu_symbolic.clone(), jac.as_ref())
            .map_err(|e| Error::LinearSolve(format!("Jacobian factorization: {e:?}")))
    }

    /// Advances one step from `u_prev` with Wiener increment `dw`.
    pub fn step(&self, u_prev: &NodalField, dw: f64) -> Result<StepResult> {
        let n = self.ops.len();
        if u_prev.len() != n {
            return Err(Error::InvalidArgument(format!(
                "field has {} values, mesh has {n} vertices",
                u_prev.len()
            )));
        }
        let p = &self.params;
        let mass = self.ops.mass();

        let g_prev: Vec<f64> = u_prev.iter().map(|&v| p.diffusion.eval(v)).collect();
        let mut noise = mass.mul_vec(&g_prev);
        let amp = p.delta * dw;
        noise.iter_mut().for_each(|v| *v *= amp);

        let scale = norm_inf(&mass.mul_vec(u_prev)).max(norm_inf(&mass.mul_vec(&vec![1.0; n])));

        // initial guess: u = u_prev + δ ΔW g(u_prev), w = ε M⁻¹K u + f(u)/ε
        let mut u: Vec<f64> = u_prev.iter().zip(&g_prev).map(|(v, g)| v + amp * g).collect();
        let ku = self.ops.stiffness().mul_vec(&u);
        let mut w = self.ops.solve_mass(&ku)?;
        for (wi, &ui) in w.iter_mut().zip(&u) {
            *wi = p.epsilon * *wi + double_well_derivative(ui) / p.epsilon;
        }

        let mut r1 = vec![0.0; n];
        let mut r2 = vec![0.0; n];
        let mut merit = self.residual(&u, &w, u_prev, &noise, &mut r1, &mut r2);
        let mut res = merit.inf / scale;
        let mut iters = 0;
        let mut rhs = vec![0.0; 2 * n];
        let mut u_try = vec![0.0; n];
        let mut w_try = vec![0.0; n];
        while res > p.newton_tol {
            if iters == p.newton_max_iter {
                return Err(Error::NewtonDivergence {
                    iterations: iters,
                    residual: res,
                });
            }
            let lu = self.factor_jacobian(&u)?;
            for i in 0..n {
                rhs[i] = -r1[i];
                rhs[n + i] = -r2[i];
            }
            lu.solve_in_place(ColMut::from_slice_mut(&mut rhs));
            if !rhs.iter().all(|v| v.is_finite()) {
                return Err(Error::LinearSolve("Newton update is not finite".into()));
            }
            iters += 1;

            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..=MAX_HALVINGS {
                for i in 0..n {
                    u_try[i] = u[i] + lambda * rhs[i];
                    w_try[i] = w[i] + lambda * rhs[n + i];
                }
                let trial = self.residual(&u_try, &w_try, u_prev, &noise, &mut r1, &mut r2);
                // Armijo decrease of the Euclidean residual
                if trial.l2 <= (1.0 - 1e-4 * lambda) * merit.l2 || trial.inf / scale <= p.newton_tol {
                    std::mem::swap(&mut u, &mut u_try);
                    std::mem::swap(&mut w, &mut w_try);
                    merit = trial;
                    res = trial.inf / scale;
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                return Err(Error::NewtonDivergence {
                    iterations: iters,
                    residual: res,
                });
            }
        }
        Ok(StepResult {
            u: NodalField::new(u),
            w: NodalField::new(w),
            newton_iters: iters,
            residual: res,
        })
    }

    /// Runs `N = round(T/τ)` steps along one noise path.
    pub fn evolve(
        &self,
        u0: &NodalField,
        stream: &NoiseStream,
        observer: &mut dyn Observer,
    ) -> Result<PathSummary> {
        let steps = self.params.num_steps();
        let increments: Vec<f64> = (1..=steps)
            .map(|k| self.params.draw_increment(stream, k))
            .collect();
        self.evolve_with_increments(u0, &increments, stream.path_index(), observer)
    }

    /// Runs one step per supplied increment.
    pub fn evolve_with_increments(
        &self,
        u0: &NodalField,
        increments: &[f64],
        path_index: u64,
        observer: &mut dyn Observer,
    ) -> Result<PathSummary> {
        if !u0.is_finite() {
            return Err(Error::InvalidArgument("initial field is not finite".into()));
        }
        observer.observe(0, u0, None);
        let mut u = u0.clone();
        let mut w = None;
        let mut total = 0;
        let mut max_iters = 0;
        let mut max_res: f64 = 0.0;
        for (k, &dw) in increments.iter().enumerate() {
            let step = k + 1;
            let res = self.step(&u, dw).map_err(|e| Error::Path {
                path: path_index,
                step,
                source: Box::new(e),
            })?;
            total += res.newton_iters;
            max_iters = max_iters.max(res.newton_iters);
            max_res = max_res.max(res.residual);
            observer.observe(step, &res.u, Some(&res.w));
            u = res.u;
            w = Some(res.w);
        }
        Ok(PathSummary {
            path_index,
            steps: increments.len(),
            newton_iters_total: total,
            newton_iters_max: max_iters,
            max_residual: max_res,
            increments_checksum: checksum(increments),
            u,
            w,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Bounds, Mesh};

    fn setup(n: usize) -> (Mesh, AssembledOperators) {
        let mesh = Mesh::rectangle(n, n, Bounds::symmetric_unit()).unwrap();
        let ops = AssembledOperators::assemble(&mesh).unwrap();
        (mesh, ops)
    }

    #[test]
    fn params_validation() {
        assert!(SchemeParams::new(0.1, 1.0, 1e-3, 0.1).validate().is_ok());
        assert!(SchemeParams::new(0.0, 1.0, 1e-3, 0.1).validate().is_err());
        assert!(SchemeParams::new(0.1, -1.0, 1e-3, 0.1).validate().is_err());
        assert!(SchemeParams::new(0.1, 1.0, 0.0, 0.1).validate().is_err());
        assert!(SchemeParams::new(0.1, 1.0, 1e-3, 1e-4).validate().is_err());
        let mut p = SchemeParams::new(0.1, 1.0, 1e-3, 0.1);
        p.newton_max_iter = 0;
        assert!(p.validate().is_err());
        assert_eq!(SchemeParams::new(0.1, 1.0, 1e-3, 0.1).num_steps(), 100);
        assert_eq!(SchemeParams::new(0.05, 1.0, 1e-6, 1e-4).num_steps(), 100);
    }

    #[test]
    fn diffusion_functions() {
        assert_eq!(Diffusion::Identity.eval(-0.3), -0.3);
        assert_eq!(Diffusion::Sqrt1p.eval(0.0), 1.0);
        assert!((Diffusion::Sqrt1p.eval(1.0) - 2f64.sqrt()).abs() < 1e-15);
        let t = DiffusionTable {
            u: vec![-1.0, 0.0, 2.0],
            g: vec![1.0, 0.0, 1.0],
            lipschitz: 1.0,
        };
        t.validate().unwrap();
        assert_eq!(t.eval(-0.5), 0.5);
        assert_eq!(t.eval(1.0), 0.5);
        assert_eq!(t.eval(-2.0), 2.0);
        assert_eq!(t.eval(4.0), 2.0);
        let bad = DiffusionTable {
            u: vec![0.0, 0.0],
            g: vec![1.0, 1.0],
            lipschitz: 0.0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn stationary_constants() {
        let (_, ops) = setup(6);
        let params = SchemeParams::new(0.1, 0.0, 1e-3, 0.01);
        let stepper = Stepper::new(&ops, params).unwrap();
        for c in [-1.0, 0.0, 1.0] {
            let u0 = NodalField::constant(ops.len(), c);
            let res = stepper.step(&u0, 0.3).unwrap();
            assert!(res.newton_iters <= 2);
            assert!(res.u.iter().all(|&v| (v - c).abs() < 1e-12));
            assert!(res.w.iter().all(|&v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn mass_identity_with_noise() {
        let (mesh, ops) = setup(8);
        let mut params = SchemeParams::new(0.1, 1.0, 1e-3, 0.01);
        params.diffusion = Diffusion::Sqrt1p;
        let stepper = Stepper::new(&ops, params.clone()).unwrap();
        let u0 = ops
            .l2_project(&mesh, |x, y| ((x * x + y * y - 0.36) / (2f64.sqrt() * 0.1)).tanh())
            .unwrap();
        let dw = 0.03;
        let res = stepper.step(&u0, dw).unwrap();
        let g: Vec<f64> = u0.iter().map(|&v| (v * v + 1.0).sqrt()).collect();
        let lhs = ops.integral(&res.u) - ops.integral(&u0);
        let rhs = params.delta * dw * ops.integral(&g);
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} {rhs}");
        assert!(res.residual <= params.newton_tol);
    }

    #[test]
    fn deterministic_mass_conservation_and_determinism() {
        let (mesh, ops) = setup(8);
        let params = SchemeParams::new(0.1, 0.0, 1e-3, 0.01);
        let stepper = Stepper::new(&ops, params).unwrap();
        let u0 = ops.l2_project(&mesh, |x, y| (3.0 * x).sin() * y).unwrap();
        let m0 = ops.integral(&u0);
        let mut masses = Vec::new();
        let mut obs = |_: usize, u: &NodalField, _: Option<&NodalField>| masses.push(ops.integral(u));
        let a = stepper.evolve(&u0, &NoiseStream::new(1, 0), &mut obs).unwrap();
        assert_eq!(masses.len(), 11);
        assert!(masses.iter().all(|m| (m - m0).abs() < 1e-9));
        let b = stepper.evolve(&u0, &NoiseStream::new(1, 0), &mut Ignore).unwrap();
        assert_eq!(a.u, b.u);
    }

    #[test]
    fn first_order_in_time() {
        // oracle: successive halvings of τ over a fixed horizon; the ratio of
        // consecutive differences estimates 2^p for a method of order p
        let (mesh, ops) = setup(8);
        let u0 = ops.l2_project(&mesh, |x, y| 0.5 * (2.0 * x).cos() * (y + 0.3).sin()).unwrap();
        let horizon = 1e-3;
        let t0 = 1e-4;
        let run = |tau: f64| {
            let params = SchemeParams::new(0.2, 0.0, tau, horizon);
            let stepper = Stepper::new(&ops, params).unwrap();
            stepper.evolve(&u0, &NoiseStream::new(0, 0), &mut Ignore).unwrap().u
        };
        let u1 = run(t0);
        let u2 = run(t0/2.0);
        let u4 = run(t0/4.0);
        let d1 = ops.norms(&u1.sub(&u2)).l2;
        let d2 = ops.norms(&u2.sub(&u4)).l2;
        let ratio = d1 / d2;
        assert!((1.5..=2.5).contains(&ratio), "{ratio}");

        // single step: one τ step against two τ/2 steps differ by O(τ²)
        let one_step = |tau: f64| {
            let s = Stepper::new(&ops, SchemeParams::new(0.2, 0.0, tau, tau)).unwrap();
            let half = Stepper::new(&ops, SchemeParams::new(0.2, 0.0, tau / 2.0, tau)).unwrap();
            let a = s.step(&u0, 0.0).unwrap().u;
            let b = half.step(&half.step(&u0, 0.0).unwrap().u, 0.0).unwrap().u;
            ops.norms(&a.sub(&b)).l2
        };
        let r = one_step(1e-6) / one_step(5e-7);
        assert!((3.0..=5.0).contains(&r), "{r}");
    }

    #[test]
    fn newton_failure_is_reported() {
        let (mesh, ops) = setup(4);
        let mut params = SchemeParams::new(0.1, 0.0, 1e-3, 1e-3);
        params.newton_max_iter = 1;
        params.newton_tol = 1e-300;
        let stepper = Stepper::new(&ops, params).unwrap();
        let u0 = ops.l2_project(&mesh, |x, _| x).unwrap();
        let err = stepper.evolve(&u0, &NoiseStream::new(0, 5), &mut Ignore).unwrap_err();
        assert!(err.is_solver_failure());
        assert!(err.to_string().starts_with("path 5, step 1"), "{err}");
    }
}

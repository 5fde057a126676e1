//! Operator property suite behind `schfem check`.

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schfem::fem::StructureReport;
use schfem::AssembledOperators;

use crate::commands::load_raw;
use crate::{Common, Status};

pub const MASS_TOL: f64 = 1e-12;
pub const ROW_SUM_TOL: f64 = 1e-12;
pub const FORM_TOL: f64 = 1e-12;
pub const ROUND_TRIP_TOL: f64 = 1e-9;
const OPERATOR_SAMPLES: usize = 100;

pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> Outcome {
    Outcome { name, passed, detail }
}

fn random_field(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn mean_zero(ops: &AssembledOperators, mut z: Vec<f64>) -> Vec<f64> {
    let c = ops.integral(&z) / ops.area();
    z.iter_mut().for_each(|v| *v -= c);
    z
}

/// Runs every check; `domain_area` is the exact area of the meshed region.
pub fn run_checks(ops: &AssembledOperators, domain_area: f64, samples: usize, seed: u64) -> Result<Vec<Outcome>> {
    let n = ops.len();
    let rep: StructureReport = ops.structure_report();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mass_sum = rep.mass_sum;
    let expected = domain_area;
    out.push(outcome(
        "mass sum equals domain area",
        mass_sum.is_finite() && ((mass_sum - expected) / expected).abs() <= MASS_TOL && rep.min_mass_entry > 0.0,
        format!("sum M_ij = {mass_sum:.15}, min entry {:.3e}", rep.min_mass_entry),
    ));
    out.push(outcome(
        "mass and stiffness symmetric",
        rep.mass_symmetric && rep.stiffness_symmetric,
        format!("M {}, K {}", rep.mass_symmetric, rep.stiffness_symmetric),
    ));
    out.push(outcome(
        "stiffness rows sum to zero",
        rep.max_row_sum_ratio <= ROW_SUM_TOL,
        format!("max |row sum| / |row|_1 = {:.3e}", rep.max_row_sum_ratio),
    ));
    out.push(outcome(
        "stiffness off-diagonals nonpositive",
        rep.nonpositive_offdiag(),
        format!("max off-diagonal {:.3e}", rep.max_offdiag),
    ));
    out.push(outcome(
        "stiffness diagonally dominant",
        rep.diagonally_dominant(),
        format!(
            "{} violating rows, min margin {:.3e}",
            rep.dominance_violations, rep.min_dominance_margin
        ),
    ));

    let mut min_scaled = f64::INFINITY;
    for _ in 0..samples {
        let u = random_field(&mut rng, n);
        let q = ops.nonlinear_form(&u);
        let scale: f64 = ops
            .stiffness()
            .entries()
            .map(|(r, c, k)| (u[r].powi(3) * u[c] * k).abs())
            .sum();
        min_scaled = min_scaled.min(q / scale.max(f64::MIN_POSITIVE));
    }
    out.push(outcome(
        "nonlinear form Q(u) nonnegative",
        samples == 0 || min_scaled >= -FORM_TOL,
        format!("min Q(u)/scale over {samples} random fields = {min_scaled:.3e}"),
    ));

    let mut worst_rt: f64 = 0.0;
    let mut worst_cs = f64::NEG_INFINITY;
    for _ in 0..OPERATOR_SAMPLES.min(samples.max(1)) {
        let z = mean_zero(ops, random_field(&mut rng, n));
        let back = ops.discrete_laplacian(&ops.inv_discrete_laplacian(&z)?)?;
        let err = back.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let zmax = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst_rt = worst_rt.max(err / zmax);
        let phi = random_field(&mut rng, n);
        let lhs = ops.l2_inner(&z, &phi).abs();
        let rhs = ops.h_minus1_norm(&z)? * ops.h1_inner(&phi, &phi).sqrt();
        worst_cs = worst_cs.max(lhs - rhs * (1.0 + 1e-10));
    }
    out.push(outcome(
        "discrete Laplacian inverse round trip",
        worst_rt <= ROUND_TRIP_TOL,
        format!("max relative error {worst_rt:.3e}"),
    ));
    out.push(outcome(
        "H^-1 Cauchy-Schwarz inequality",
        worst_cs <= 0.0,
        format!("max |(z,phi)| - |z|_-1 |phi|_H1 = {worst_cs:.3e}"),
    ));
    Ok(out)
}

pub fn run(common: &Common) -> Result<Status> {
    let raw = load_raw(common)?;
    let seed = common.seed.or(raw.seed).unwrap_or(0);
    let samples = raw.check.samples.unwrap_or(1000);
    let mesh_cfg = raw.mesh_config()?;
    let mesh = mesh_cfg.build()?;
    let ops = AssembledOperators::assemble(&mesh)?;
    let outcomes = run_checks(&ops, mesh.bounds().area(), samples, seed)?;
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if !common.quiet {
        println!(
            "check: mesh {}x{} (shear {}), {} vertices, seed {seed}",
            mesh.nx(),
            mesh.ny(),
            mesh_cfg.shear,
            mesh.num_vertices()
        );
    }
    for o in &outcomes {
        if !o.passed || !common.quiet {
            println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
        }
    }
    if failed > 0 {
        println!("{failed} of {} checks failed", outcomes.len());
        Ok(Status::InvariantFailure)
    } else {
        Ok(Status::Ok)
    }
}

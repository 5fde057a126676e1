use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use schfem::config::{write_manifest, Provenance, RawConfig, RunConfig};
use schfem::experiments::{
    dyadic_lags, holder_check, run_convergence, run_stability, ConvergenceOptions, StabilityOptions,
};
use schfem::noise::checksum;
use schfem::output::{self, write_field, write_levelset};
use schfem::{zero_level_set, NodalField, NoiseStream, Stepper};

use crate::{Common, Status};

pub const MANIFEST_FILE: &str = "manifest.toml";

/// Reads the configuration file, if any, beneath the selected preset.
pub fn load_raw(common: &Common) -> Result<RawConfig> {
    let raw = match &common.config {
        Some(p) => RawConfig::from_file(p)?,
        None => RawConfig::default(),
    };
    Ok(raw.with_preset(common.preset.as_deref())?)
}

/// Loads the configuration and applies the command-line overrides.
pub fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = load_raw(common)?.resolve(None)?;
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    if let Some(m) = common.paths {
        if m == 0 {
            return Err(schfem::Error::Config {
                line: None,
                message: "--paths must be positive".into(),
            }
            .into());
        }
        cfg.stability.paths = m;
        cfg.convergence.paths = m;
        cfg.holder.paths = m;
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).map_err(|e| schfem::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn manifest(
    dir: &Path,
    cfg: &RunConfig,
    command: &str,
    start: Instant,
    checksums: Vec<(u64, u64)>,
) -> Result<()> {
    let prov = Provenance {
        command: command.to_string(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        increment_checksums: checksums.into_iter().map(|(p, c)| (p, format!("{c:016x}"))).collect(),
    };
    write_manifest(&dir.join(MANIFEST_FILE), cfg, &prov)?;
    Ok(())
}

#[derive(serde::Serialize)]
struct TrajectoryRow {
    step: usize,
    t: f64,
    dw: f64,
    l2: f64,
    h1: f64,
    mass: f64,
}

pub fn evolve(common: &Common, path: u64) -> Result<Status> {
    let start = Instant::now();
    let cfg = load(common)?;
    let seed = cfg.require_seed()?;
    let (mesh, ops) = cfg.build_mesh()?;
    let params = cfg.scheme.clone();
    let stepper = Stepper::new(&ops, params.clone())?;
    let u0 = cfg.datum.discretize(&mesh, &ops, params.epsilon)?;
    let stream = NoiseStream::new(seed, path);
    let increments: Vec<f64> = (1..=params.num_steps())
        .map(|k| params.draw_increment(&stream, k))
        .collect();
    let mut rows = Vec::with_capacity(increments.len() + 1);
    let summary = stepper.evolve_with_increments(
        &u0,
        &increments,
        path,
        &mut |n: usize, u: &NodalField, _: Option<&NodalField>| {
            let norms = ops.norms(u);
            rows.push(TrajectoryRow {
                step: n,
                t: n as f64 * params.tau,
                dw: if n == 0 { 0.0 } else { increments[n - 1] },
                l2: norms.l2,
                h1: norms.h1,
                mass: ops.integral(u),
            });
        },
    )?;
    let dir = out_dir(&cfg)?;
    write_field(&dir.join("field_initial.csv"), &mesh, &u0, None)?;
    write_field(&dir.join("field_final.csv"), &mesh, &summary.u, summary.w.as_ref())?;
    output::write_rows(
        &dir.join("trajectory.csv"),
        &["step", "t", "dw", "l2", "h1", "mass"],
        &rows,
    )?;
    manifest(&dir, &cfg, "evolve", start, vec![(path, checksum(&increments))])?;
    if !common.quiet {
        let last = rows.last().expect("initial row");
        println!(
            "evolve: path {path}, {} steps, Newton iterations {} (max {}), final |u|_L2 = {:.6}, |u|_H1 = {:.6}, wall time {:.2}s",
            summary.steps,
            summary.newton_iters_total,
            summary.newton_iters_max,
            last.l2,
            last.h1,
            start.elapsed().as_secs_f64()
        );
        println!("wrote {}", dir.display());
    }
    Ok(Status::Ok)
}

pub fn stability(common: &Common) -> Result<Status> {
    let start = Instant::now();
    let cfg = load(common)?;
    let seed = cfg.require_seed()?;
    let mesh = cfg.mesh.build()?;
    let opts = StabilityOptions {
        paths: cfg.stability.paths,
        seed,
        stride: cfg.stability.stride,
        snapshot_times: cfg.stability.snapshot_times.clone(),
        holder_lags: Vec::new(),
    };
    let run = run_stability(&mesh, &cfg.scheme, &cfg.datum, &opts)?;
    let dir = out_dir(&cfg)?;
    output::write_stability(&dir, &run)?;
    for snap in &run.snapshots {
        write_levelset(&dir, &zero_level_set(&snap.path0, &mesh, snap.time, "0"))?;
        write_levelset(&dir, &zero_level_set(&snap.mean, &mesh, snap.time, "average"))?;
    }
    manifest(&dir, &cfg, "stability", start, run.checksums())?;
    if !common.quiet {
        let s = &run.stats;
        let k = s.times.len() - 1;
        println!(
            "stability: M = {}, {} rows, t = {}: E|u|_L2 = {:.6} ± {:.2e}, E|u|_H1 = {:.6} ± {:.2e}, E|u|^4 = {:.6}, wall time {:.2}s",
            s.samples,
            s.times.len(),
            s.times[k],
            s.e_l2[k],
            s.e_l2_se[k],
            s.e_h1[k],
            s.e_h1_se[k],
            s.e_l2_p4[k],
            start.elapsed().as_secs_f64()
        );
        println!("wrote {}", dir.display());
    }
    Ok(Status::Ok)
}

pub fn converge(common: &Common) -> Result<Status> {
    let start = Instant::now();
    let cfg = load(common)?;
    let seed = cfg.require_seed()?;
    let ladder = cfg
        .convergence
        .ladder
        .iter()
        .map(|&n| cfg.mesh.with_n(n))
        .collect::<schfem::Result<Vec<_>>>()?;
    let reference = cfg.mesh.with_n(cfg.convergence.reference)?;
    let opts = ConvergenceOptions {
        paths: cfg.convergence.paths,
        seed,
        measure: cfg.convergence.error_measure,
    };
    let table = run_convergence(&ladder, &reference, &cfg.scheme, &cfg.datum, &opts)?;
    let dir = out_dir(&cfg)?;
    output::write_convergence(&dir.join(output::CONVERGENCE_FILE), &table)?;
    manifest(&dir, &cfg, "converge", start, table.checksums.clone())?;
    if !common.quiet {
        println!(
            "converge: M = {}, reference {}x{}",
            table.samples, table.reference_nx, table.reference_ny
        );
        println!("{:>10} {:>14} {:>8} {:>14} {:>8}", "h", "LinfEL2", "order", "EL2H1", "order");
        let fmt = |o: Option<f64>| o.map_or(String::from("-"), |v| format!("{v:.4}"));
        for r in &table.rows {
            println!(
                "{:>10.6} {:>14.6e} {:>8} {:>14.6e} {:>8}",
                r.h,
                r.err_linf_el2,
                fmt(r.order_linf_el2),
                r.err_el2h1,
                fmt(r.order_el2h1)
            );
        }
        println!("wall time {:.2}s, wrote {}", start.elapsed().as_secs_f64(), dir.display());
    }
    Ok(Status::Ok)
}

/// Soft band for the log-log slope.
const SLOPE_BAND: (f64, f64) = (0.8, 1.3);

pub fn holder(common: &Common) -> Result<Status> {
    let start = Instant::now();
    let cfg = load(common)?;
    let seed = cfg.require_seed()?;
    let mesh = cfg.mesh.build()?;
    let lags = dyadic_lags(cfg.holder.max_lag);
    let report = holder_check(&mesh, &cfg.scheme, &cfg.datum, cfg.holder.paths, seed, &lags)
        .context("increment scaling study")?;
    let dir = out_dir(&cfg)?;
    output::write_holder(&dir.join(output::HOLDER_FILE), &report)?;
    let checksums = (0..cfg.holder.paths as u64)
        .map(|p| (p, schfem::experiments::path_checksum(&cfg.scheme, seed, p)))
        .collect();
    manifest(&dir, &cfg, "holder", start, checksums)?;
    let warn = match report.slope {
        Some(s) => !(SLOPE_BAND.0..=SLOPE_BAND.1).contains(&s),
        None => false,
    };
    if !common.quiet || warn {
        for k in 0..report.lags.len() {
            println!(
                "lag {:>5} ({:.3e}): E|u(n+k)-u(n)|^2 = {:.6e} ± {:.2e}",
                report.lags[k], report.lag_times[k], report.mean_sq[k], report.mean_sq_se[k]
            );
        }
        match report.slope {
            Some(s) if warn => println!(
                "WARN slope {s:.4} outside [{}, {}] (soft criterion)",
                SLOPE_BAND.0, SLOPE_BAND.1
            ),
            Some(s) => println!("slope {s:.4}"),
            None => println!("degenerate: all increments vanish"),
        }
    }
    Ok(Status::Ok)
}

//! CSV writers and readers for experiment results.
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! reproduces the written values exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{ErrorTable, HolderReport, PathRecord, StabilityRun};
use crate::fem::NodalField;
use crate::levelset::LevelSet;
use crate::mesh::Mesh;

pub const STABILITY_FILE: &str = "stability.csv";
pub const STABILITY_RMS_FILE: &str = "stability_rms.csv";
pub const STABILITY_SAMPLE_FILE: &str = "stability_sample.csv";
pub const PATHS_FILE: &str = "paths.csv";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const HOLDER_FILE: &str = "holder.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub t: f64,
    pub e_l2: f64,
    pub e_l2_se: f64,
    pub e_h1: f64,
    pub e_h1_se: f64,
    pub e_l2_p4: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRmsRow {
    pub t: f64,
    pub rms_l2: f64,
    pub rms_h1: f64,
    pub e_l2_p4_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub t: f64,
    pub l2: f64,
    pub h1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub path: u64,
    pub increments_checksum: String,
    pub energy_functional: f64,
    pub sup_l2_p4: f64,
    pub newton_iters_total: usize,
    pub newton_iters_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub err_linf_el2: f64,
    pub order_linf_el2: Option<f64>,
    pub err_el2h1: f64,
    pub order_el2h1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRow {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderRow {
    pub lag: usize,
    pub lag_time: f64,
    pub mean_sq: f64,
    pub mean_sq_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRow {
    pub x: f64,
    pub y: f64,
    pub u: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub w: Option<f64>,
}

/// Writes `rows` with a header derived from the row type. An empty slice
/// still produces the header.
pub fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads rows, rejecting files whose header differs from `header`.
pub fn read_rows<T: DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let found = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::InvalidArgument(format!(
            "{}: expected header {}, found {}",
            path.display(),
            header.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::csv(path, e)))
        .collect()
}

pub const STABILITY_HEADER: [&str; 6] = ["t", "e_l2", "e_l2_se", "e_h1", "e_h1_se", "e_l2_p4"];
pub const STABILITY_RMS_HEADER: [&str; 4] = ["t", "rms_l2", "rms_h1", "e_l2_p4_se"];
pub const SAMPLE_HEADER: [&str; 3] = ["t", "l2", "h1"];
pub const PATHS_HEADER: [&str; 6] = [
    "path",
    "increments_checksum",
    "energy_functional",
    "sup_l2_p4",
    "newton_iters_total",
    "newton_iters_max",
];
pub const CONVERGENCE_HEADER: [&str; 5] = ["h", "err_linf_el2", "order_linf_el2", "err_el2h1", "order_el2h1"];
pub const SEGMENT_HEADER: [&str; 4] = ["x1", "y1", "x2", "y2"];
pub const HOLDER_HEADER: [&str; 4] = ["lag", "lag_time", "mean_sq", "mean_sq_se"];

pub fn stability_rows(run: &StabilityRun) -> Vec<StabilityRow> {
    let s = &run.stats;
    (0..s.times.len())
        .map(|k| StabilityRow {
            t: s.times[k],
            e_l2: s.e_l2[k],
            e_l2_se: s.e_l2_se[k],
            e_h1: s.e_h1[k],
            e_h1_se: s.e_h1_se[k],
            e_l2_p4: s.e_l2_p4[k],
        })
        .collect()
}

pub fn path_rows(records: &[PathRecord], tau: f64) -> Vec<PathRow> {
    records
        .iter()
        .map(|r| {
            let n = r.l2.len() - 1;
            PathRow {
                path: r.path_index,
                increments_checksum: format!("{:016x}", r.increments_checksum),
                energy_functional: r.energy_functional(tau, n),
                sup_l2_p4: r.sup_fourth_moment(n),
                newton_iters_total: r.newton_iters_total,
                newton_iters_max: r.newton_iters_max,
            }
        })
        .collect()
}

/// Writes `stability.csv`, `stability_rms.csv`, `stability_sample.csv`,
/// `paths.csv` and, when present, `holder.csv`. Returns the written paths.
pub fn write_stability(dir: &Path, run: &StabilityRun) -> Result<Vec<PathBuf>> {
    let s = &run.stats;
    let mut written = Vec::new();
    let p = dir.join(STABILITY_FILE);
    write_rows(&p, &STABILITY_HEADER, &stability_rows(run))?;
    written.push(p);

    let (rms_l2, rms_h1) = (s.rms_l2(), s.rms_h1());
    let rms: Vec<StabilityRmsRow> = (0..s.times.len())
        .map(|k| StabilityRmsRow {
            t: s.times[k],
            rms_l2: rms_l2[k],
            rms_h1: rms_h1[k],
            e_l2_p4_se: s.e_l2_p4_se[k],
        })
        .collect();
    let p = dir.join(STABILITY_RMS_FILE);
    write_rows(&p, &STABILITY_RMS_HEADER, &rms)?;
    written.push(p);

    let sample: Vec<SampleRow> = run
        .sample_series()
        .into_iter()
        .map(|(t, l2, h1)| SampleRow { t, l2, h1 })
        .collect();
    let p = dir.join(STABILITY_SAMPLE_FILE);
    write_rows(&p, &SAMPLE_HEADER, &sample)?;
    written.push(p);

    let p = dir.join(PATHS_FILE);
    write_rows(&p, &PATHS_HEADER, &path_rows(&run.records, run.tau))?;
    written.push(p);

    if let Some(h) = &run.holder {
        let p = dir.join(HOLDER_FILE);
        write_holder(&p, h)?;
        written.push(p);
    }
    Ok(written)
}

pub fn read_stability(path: &Path) -> Result<Vec<StabilityRow>> {
    read_rows(path, &STABILITY_HEADER)
}

pub fn convergence_rows(table: &ErrorTable) -> Vec<ConvergenceRow> {
    table
        .rows
        .iter()
        .map(|r| ConvergenceRow {
            h: r.h,
            err_linf_el2: r.err_linf_el2,
            order_linf_el2: r.order_linf_el2,
            err_el2h1: r.err_el2h1,
            order_el2h1: r.order_el2h1,
        })
        .collect()
}

pub fn write_convergence(path: &Path, table: &ErrorTable) -> Result<()> {
    write_rows(path, &CONVERGENCE_HEADER, &convergence_rows(table))
}

pub fn read_convergence(path: &Path) -> Result<Vec<ConvergenceRow>> {
    read_rows(path, &CONVERGENCE_HEADER)
}

/// `levelset_t<time>_<tag>.csv`, with the time to four decimals.
pub fn levelset_file_name(time: f64, tag: &str) -> String {
    format!("levelset_t{time:.4}_{tag}.csv")
}

pub fn write_levelset(dir: &Path, ls: &LevelSet) -> Result<PathBuf> {
    let path = dir.join(levelset_file_name(ls.time, &ls.tag));
    let rows: Vec<SegmentRow> = ls
        .segments
        .iter()
        .map(|[a, b]| SegmentRow {
            x1: a[0],
            y1: a[1],
            x2: b[0],
            y2: b[1],
        })
        .collect();
    write_rows(&path, &SEGMENT_HEADER, &rows)?;
    Ok(path)
}

pub fn read_levelset_segments(path: &Path) -> Result<Vec<[[f64; 2]; 2]>> {
    let rows: Vec<SegmentRow> = read_rows(path, &SEGMENT_HEADER)?;
    Ok(rows.into_iter().map(|r| [[r.x1, r.y1], [r.x2, r.y2]]).collect())
}

pub fn write_holder(path: &Path, h: &HolderReport) -> Result<()> {
    let rows: Vec<HolderRow> = (0..h.lags.len())
        .map(|k| HolderRow {
            lag: h.lags[k],
            lag_time: h.lag_times[k],
            mean_sq: h.mean_sq[k],
            mean_sq_se: h.mean_sq_se[k],
        })
        .collect();
    write_rows(path, &HOLDER_HEADER, &rows)
}

/// Nodal field as `x,y,u[,w]` rows in vertex order.
pub fn write_field(path: &Path, mesh: &Mesh, u: &NodalField, w: Option<&NodalField>) -> Result<()> {
    let rows: Vec<FieldRow> = mesh
        .vertices()
        .iter()
        .enumerate()
        .map(|(k, [x, y])| FieldRow {
            x: *x,
            y: *y,
            u: u[k],
            w: w.map(|w| w[k]),
        })
        .collect();
    let header: &[&str] = if w.is_some() { &["x", "y", "u", "w"] } else { &["x", "y", "u"] };
    write_rows(path, header, &rows)
}

pub fn read_field(path: &Path) -> Result<Vec<FieldRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::csv(path, e)))
        .collect()
}

//! Monte Carlo drivers: stability statistics, common-noise spatial
//! convergence and mean-square increment scaling.
//!
//! Paths are evaluated in parallel and reduced in ascending path order, so
//! every estimate is bit-identical for any number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datum::InitialDatum;
use crate::error::{Error, Result};
use crate::fem::{AssembledOperators, NodalField};
use crate::levelset::mean_field;
use crate::mesh::Mesh;
use crate::noise::{checksum, NoiseStream};
use crate::scheme::{SchemeParams, Stepper};

/// Sample mean and standard error `s/√M` (zero for a single sample).
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let m = xs.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / m as f64;
    if m == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityOptions {
    pub paths: usize,
    pub seed: u64,
    /// Statistics are reported every `stride` steps, plus the final step.
    pub stride: usize,
    /// Times at which path-0 and mean fields are kept.
    pub snapshot_times: Vec<f64>,
    /// Lags, in steps, of the mean-square increment study. Empty to skip.
    pub holder_lags: Vec<usize>,
}

impl StabilityOptions {
    pub fn new(paths: usize, seed: u64) -> Self {
        Self {
            paths,
            seed,
            stride: 1,
            snapshot_times: Vec::new(),
            holder_lags: Vec::new(),
        }
    }
}

/// Per-step quantities of one path, indexed by `n = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub path_index: u64,
    pub l2: Vec<f64>,
    pub h1: Vec<f64>,
    /// `‖uⁿ − uⁿ⁻¹‖²_{L²}`; zero at `n = 0`.
    pub step_sq: Vec<f64>,
    /// `‖Δ_h uⁿ‖²_{L²}`.
    pub laplacian_sq: Vec<f64>,
    pub increments_checksum: u64,
    pub newton_iters_total: usize,
    pub newton_iters_max: usize,
}

impl PathRecord {
    /// `max_n ‖uⁿ‖² + Σ‖uⁿ − uⁿ⁻¹‖² + τ Σ‖Δ_h uⁿ‖²` over steps `0..=steps`.
    pub fn energy_functional(&self, tau: f64, steps: usize) -> f64 {
        let s = steps.min(self.l2.len() - 1);
        let max_sq = self.l2[..=s].iter().map(|v| v * v).fold(0.0, f64::max);
        let incr: f64 = self.step_sq[1..=s].iter().sum();
        let lap: f64 = self.laplacian_sq[1..=s].iter().sum();
        max_sq + incr + tau * lap
    }

    /// `max_n ‖uⁿ‖⁴` over steps `0..=steps`.
    pub fn sup_fourth_moment(&self, steps: usize) -> f64 {
        let s = steps.min(self.l2.len() - 1);
        self.l2[..=s].iter().map(|v| v.powi(4)).fold(0.0, f64::max)
    }
}

/// Norm statistics across paths at the reported steps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunStats {
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    /// Sample mean of `‖uⁿ‖_{L²}`.
    pub e_l2: Vec<f64>,
    pub e_l2_se: Vec<f64>,
    /// Sample mean of `‖uⁿ‖_{H¹}`.
    pub e_h1: Vec<f64>,
    pub e_h1_se: Vec<f64>,
    pub e_l2_sq: Vec<f64>,
    pub e_h1_sq: Vec<f64>,
    pub e_l2_p4: Vec<f64>,
    pub e_l2_p4_se: Vec<f64>,
    pub samples: usize,
}

impl RunStats {
    pub fn from_records(records: &[PathRecord], steps: &[usize], tau: f64) -> Self {
        let mut s = RunStats {
            samples: records.len(),
            ..Default::default()
        };
        for &n in steps {
            let l2: Vec<f64> = records.iter().map(|r| r.l2[n]).collect();
            let h1: Vec<f64> = records.iter().map(|r| r.h1[n]).collect();
            let (m, se) = mean_and_stderr(&l2);
            s.e_l2.push(m);
            s.e_l2_se.push(se);
            let (m, se) = mean_and_stderr(&h1);
            s.e_h1.push(m);
            s.e_h1_se.push(se);
            s.e_l2_sq.push(mean_and_stderr(&l2.iter().map(|v| v * v).collect::<Vec<_>>()).0);
            s.e_h1_sq.push(mean_and_stderr(&h1.iter().map(|v| v * v).collect::<Vec<_>>()).0);
            let (m, se) = mean_and_stderr(&l2.iter().map(|v| v.powi(4)).collect::<Vec<_>>());
            s.e_l2_p4.push(m);
            s.e_l2_p4_se.push(se);
            s.steps.push(n);
            s.times.push(n as f64 * tau);
        }
        s
    }

    pub fn rms_l2(&self) -> Vec<f64> {
        self.e_l2_sq.iter().map(|v| v.sqrt()).collect()
    }

    pub fn rms_h1(&self) -> Vec<f64> {
        self.e_h1_sq.iter().map(|v| v.sqrt()).collect()
    }

    pub fn all_finite(&self) -> bool {
        [&self.e_l2, &self.e_h1, &self.e_l2_sq, &self.e_l2_p4]
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Largest ratio between consecutive entries of the `E‖·‖_{L²}`,
    /// `E‖·‖_{H¹}` and fourth-moment series.
    pub fn max_step_growth(&self) -> f64 {
        [&self.e_l2, &self.e_h1, &self.e_l2_p4]
            .iter()
            .flat_map(|s| s.windows(2).map(|w| w[1] / w[0]))
            .fold(1.0, f64::max)
    }
}

/// Fields kept at one snapshot time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub path0: NodalField,
    /// Nodewise mean over all paths.
    pub mean: NodalField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRun {
    pub stats: RunStats,
    /// Per-path, per-step quantities in path order.
    pub records: Vec<PathRecord>,
    pub snapshots: Vec<Snapshot>,
    pub holder: Option<HolderReport>,
    pub tau: f64,
}

impl StabilityRun {
    /// Path 0 at the reported steps: `(t, ‖u‖_{L²}, ‖u‖_{H¹})`.
    pub fn sample_series(&self) -> Vec<(f64, f64, f64)> {
        let r = &self.records[0];
        self.stats
            .steps
            .iter()
            .map(|&n| (n as f64 * self.tau, r.l2[n], r.h1[n]))
            .collect()
    }

    pub fn checksums(&self) -> Vec<(u64, u64)> {
        self.records
            .iter()
            .map(|r| (r.path_index, r.increments_checksum))
            .collect()
    }
}

/// Steps `0, stride, 2·stride, …` together with the final step.
pub fn reported_steps(num_steps: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut steps: Vec<usize> = (0..=num_steps).step_by(stride).collect();
    if steps.last() != Some(&num_steps) {
        steps.push(num_steps);
    }
    steps
}

fn snapshot_steps(times: &[f64], tau: f64, num_steps: usize) -> Result<Vec<usize>> {
    let mut steps = Vec::with_capacity(times.len());
    for &t in times {
        let s = t / tau;
        if !s.is_finite() || s < -0.5 || s.round() as usize > num_steps || (s - s.round()).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "snapshot time {t} is not a step time in [0, {}]",
                num_steps as f64 * tau
            )));
        }
        steps.push(s.round() as usize);
    }
    Ok(steps)
}

struct PathOutput {
    record: PathRecord,
    snapshots: Vec<NodalField>,
    lag_means: Vec<f64>,
}

/// Evolves `opts.paths` independent paths and aggregates norm statistics.
/// Any path failure aborts the run.
pub fn run_stability(
    mesh: &Mesh,
    params: &SchemeParams,
    datum: &InitialDatum,
    opts: &StabilityOptions,
) -> Result<StabilityRun> {
    if opts.paths == 0 {
        return Err(Error::InvalidArgument("at least one path is required".into()));
    }
    let ops = AssembledOperators::assemble(mesh)?;
    let stepper = Stepper::new(&ops, params.clone())?;
    let u0 = datum.discretize(mesh, &ops, params.epsilon)?;
    let num_steps = params.num_steps();
    let snap_steps = snapshot_steps(&opts.snapshot_times, params.tau, num_steps)?;
    if let Some(&k) = opts.holder_lags.iter().find(|&&k| k == 0 || k > num_steps) {
        return Err(Error::Precondition(format!(
            "insufficient snapshots: lag {k} needs 1 <= lag <= {num_steps}"
        )));
    }

    let outputs: Vec<PathOutput> = (0..opts.paths as u64)
        .into_par_iter()
        .map(|p| run_path(&stepper, &ops, &u0, opts, p, &snap_steps))
        .collect::<Result<_>>()?;

    let records: Vec<PathRecord> = outputs.iter().map(|o| o.record.clone()).collect();
    let stats = RunStats::from_records(&records, &reported_steps(num_steps, opts.stride), params.tau);
    let snapshots = snap_steps
        .iter()
        .enumerate()
        .map(|(k, &step)| Snapshot {
            step,
            time: step as f64 * params.tau,
            path0: outputs[0].snapshots[k].clone(),
            mean: mean_field(&outputs.iter().map(|o| &o.snapshots[k]).collect::<Vec<_>>()),
        })
        .collect();
    let holder = (!opts.holder_lags.is_empty()).then(|| {
        let per_path: Vec<Vec<f64>> = outputs.iter().map(|o| o.lag_means.clone()).collect();
        HolderReport::from_per_path(&opts.holder_lags, params.tau, &per_path)
    });
    Ok(StabilityRun {
        stats,
        records,
        snapshots,
        holder,
        tau: params.tau,
    })
}

fn run_path(
    stepper: &Stepper,
    ops: &AssembledOperators,
    u0: &NodalField,
    opts: &StabilityOptions,
    p: u64,
    snap_steps: &[usize],
) -> Result<PathOutput> {
    let n = stepper.params().num_steps();
    let keep_all = !opts.holder_lags.is_empty();
    let mut record = PathRecord {
        path_index: p,
        l2: Vec::with_capacity(n + 1),
        h1: Vec::with_capacity(n + 1),
        step_sq: Vec::with_capacity(n + 1),
        laplacian_sq: Vec::with_capacity(n + 1),
        increments_checksum: 0,
        newton_iters_total: 0,
        newton_iters_max: 0,
    };
    let mut snapshots = vec![NodalField::zeros(0); snap_steps.len()];
    let mut history: Vec<NodalField> = Vec::new();
    let mut prev: Option<NodalField> = None;
    let mut failure = None;
    let mut observer = |step: usize, u: &NodalField, _: Option<&NodalField>| {
        let norms = ops.norms(u);
        record.l2.push(norms.l2);
        record.h1.push(norms.h1);
        record.step_sq.push(prev.as_ref().map_or(0.0, |q| {
            let d = u.sub(q);
            ops.l2_inner(&d, &d)
        }));
        match ops.discrete_laplacian(u) {
            Ok(lap) => record.laplacian_sq.push(ops.l2_inner(&lap, &lap)),
            Err(e) => {
                failure.get_or_insert(e);
                record.laplacian_sq.push(f64::NAN);
            }
        }
        for (k, &s) in snap_steps.iter().enumerate() {
            if s == step {
                snapshots[k] = u.clone();
            }
        }
        if keep_all {
            history.push(u.clone());
        }
        prev = Some(u.clone());
    };
    let summary = stepper.evolve(u0, &NoiseStream::new(opts.seed, p), &mut observer)?;
    if let Some(e) = failure {
        return Err(Error::Path {
            path: p,
            step: 0,
            source: Box::new(e),
        });
    }
    record.increments_checksum = summary.increments_checksum;
    record.newton_iters_total = summary.newton_iters_total;
    record.newton_iters_max = summary.newton_iters_max;
    let lag_means = opts
        .holder_lags
        .iter()
        .map(|&k| {
            let sq: Vec<f64> = (0..=n - k)
                .map(|b| {
                    let d = history[b + k].sub(&history[b]);
                    ops.l2_inner(&d, &d)
                })
                .collect();
            sq.iter().sum::<f64>() / sq.len() as f64
        })
        .collect();
    Ok(PathOutput {
        record,
        snapshots,
        lag_means,
    })
}

/// Mean-square increments `E‖u^{n+k} − uⁿ‖²_{L²}` against the lag `kτ`,
/// averaged over all admissible base steps `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct HolderReport {
    pub lags: Vec<usize>,
    pub lag_times: Vec<f64>,
    pub mean_sq: Vec<f64>,
    pub mean_sq_se: Vec<f64>,
    /// Least-squares slope of `log mean_sq` against `log kτ`; `None` when
    /// degenerate.
    pub slope: Option<f64>,
    /// `mean_sq[i+1] / mean_sq[i]`.
    pub ratios: Vec<f64>,
    /// All increments vanish.
    pub degenerate: bool,
    pub samples: usize,
}

impl HolderReport {
    /// `per_path[p][i]` is path `p`'s base-averaged increment at `lags[i]`.
    pub fn from_per_path(lags: &[usize], tau: f64, per_path: &[Vec<f64>]) -> Self {
        let (mean_sq, mean_sq_se): (Vec<f64>, Vec<f64>) = (0..lags.len())
            .map(|i| mean_and_stderr(&per_path.iter().map(|v| v[i]).collect::<Vec<_>>()))
            .unzip();
        let lag_times: Vec<f64> = lags.iter().map(|&k| k as f64 * tau).collect();
        let degenerate = mean_sq.iter().all(|&v| v == 0.0);
        let pts: Vec<(f64, f64)> = lag_times
            .iter()
            .zip(&mean_sq)
            .filter(|(_, &m)| m > 0.0)
            .map(|(t, m)| (t.ln(), m.ln()))
            .collect();
        let slope = (!degenerate && pts.len() >= 2).then(|| regression_slope(&pts));
        let ratios = mean_sq.windows(2).map(|w| w[1] / w[0]).collect();
        Self {
            lags: lags.to_vec(),
            lag_times,
            mean_sq,
            mean_sq_se,
            slope,
            ratios,
            degenerate,
            samples: per_path.len(),
        }
    }

    pub fn is_increasing(&self) -> bool {
        self.mean_sq.windows(2).all(|w| w[1] > w[0])
    }
}

fn regression_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Dyadic lags `1, 2, 4, …, max_lag`.
pub fn dyadic_lags(max_lag: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |k| Some(k * 2))
        .take_while(|&k| k <= max_lag)
        .collect()
}

/// Mean-square increment study over a stability run that kept every step.
pub fn holder_check(
    mesh: &Mesh,
    params: &SchemeParams,
    datum: &InitialDatum,
    paths: usize,
    seed: u64,
    lags: &[usize],
) -> Result<HolderReport> {
    if lags.len() < 2 {
        return Err(Error::Precondition("insufficient snapshots: at least two lags are required".into()));
    }
    let mut opts = StabilityOptions::new(paths, seed);
    opts.holder_lags = lags.to_vec();
    let run = run_stability(mesh, params, datum, &opts)?;
    Ok(run.holder.expect("lags requested"))
}

/// How the discrete error `Eⁿ` against the reference solution is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMeasure {
    /// Coarse solution interpolated onto the reference mesh; norms there.
    #[default]
    ReferenceMesh,
    /// Reference solution sampled at the coarse vertices; norms on the
    /// coarse mesh.
    CoarseNodes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub nx: usize,
    pub h: f64,
    /// `(max_n E‖Eⁿ‖²_{L²})^{1/2}`
    pub err_linf_el2: f64,
    /// `(E[τ Σ_{n≥1} ‖∇Eⁿ‖²_{L²}])^{1/2}`
    pub err_el2h1: f64,
    pub order_linf_el2: Option<f64>,
    pub order_el2h1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
    pub reference_nx: usize,
    pub reference_ny: usize,
    pub measure: ErrorMeasure,
    pub samples: usize,
    /// `(path, increment checksum)`, identical on every mesh.
    pub checksums: Vec<(u64, u64)>,
}

fn order(e_coarse: f64, e_fine: f64, h_coarse: f64, h_fine: f64) -> Option<f64> {
    let o = (e_coarse / e_fine).ln() / (h_coarse / h_fine).ln();
    o.is_finite().then_some(o)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceOptions {
    pub paths: usize,
    pub seed: u64,
    pub measure: ErrorMeasure,
}

struct PathErrors {
    /// `[mesh][n]` squared `L²` errors.
    l2_sq: Vec<Vec<f64>>,
    /// `[mesh]` `τ Σ ‖∇Eⁿ‖²`.
    h1_sum: Vec<f64>,
    checksum: u64,
}

/// Spatial errors on every ladder mesh against the reference mesh, with all
/// meshes driven by the same increments on each path.
pub fn run_convergence(
    ladder: &[Mesh],
    reference: &Mesh,
    params: &SchemeParams,
    datum: &InitialDatum,
    opts: &ConvergenceOptions,
) -> Result<ErrorTable> {
    validate_ladder(ladder, reference)?;
    if opts.paths == 0 {
        return Err(Error::InvalidArgument("at least one path is required".into()));
    }
    let ref_ops = AssembledOperators::assemble(reference)?;
    let ref_stepper = Stepper::new(&ref_ops, params.clone())?;
    let ref_u0 = datum.discretize(reference, &ref_ops, params.epsilon)?;
    let coarse_ops: Vec<AssembledOperators> =
        ladder.iter().map(AssembledOperators::assemble).collect::<Result<_>>()?;
    let coarse: Vec<(Stepper, NodalField)> = ladder
        .iter()
        .zip(&coarse_ops)
        .map(|(m, ops)| Ok((Stepper::new(ops, params.clone())?, datum.discretize(m, ops, params.epsilon)?)))
        .collect::<Result<_>>()?;

    let per_path: Vec<PathErrors> = (0..opts.paths as u64)
        .into_par_iter()
        .map(|p| {
            let stream = NoiseStream::new(opts.seed, p);
            let increments: Vec<f64> = (1..=params.num_steps())
                .map(|k| params.draw_increment(&stream, k))
                .collect();
            let mut ref_hist = Vec::with_capacity(increments.len() + 1);
            let ref_sum = ref_stepper.evolve_with_increments(
                &ref_u0,
                &increments,
                p,
                &mut |_: usize, u: &NodalField, _: Option<&NodalField>| ref_hist.push(u.clone()),
            )?;
            let mut l2_sq = Vec::with_capacity(ladder.len());
            let mut h1_sum = Vec::with_capacity(ladder.len());
            for ((mesh, ops), (stepper, u0)) in ladder.iter().zip(&coarse_ops).zip(&coarse) {
                let mut e_l2 = Vec::with_capacity(increments.len() + 1);
                let mut e_h1 = 0.0;
                let sum = stepper.evolve_with_increments(
                    u0,
                    &increments,
                    p,
                    &mut |n: usize, u: &NodalField, _: Option<&NodalField>| {
                        let (l2, h1) = error_norms(opts.measure, mesh, ops, u, reference, &ref_ops, &ref_hist[n]);
                        e_l2.push(l2);
                        if n >= 1 {
                            e_h1 += params.tau * h1;
                        }
                    },
                )?;
                if sum.increments_checksum != ref_sum.increments_checksum {
                    return Err(Error::Precondition(format!(
                        "path {p}: increment sequences differ between meshes"
                    )));
                }
                l2_sq.push(e_l2);
                h1_sum.push(e_h1);
            }
            Ok(PathErrors {
                l2_sq,
                h1_sum,
                checksum: ref_sum.increments_checksum,
            })
        })
        .collect::<Result<_>>()?;

    let steps = params.num_steps();
    let mut rows: Vec<ErrorRow> = Vec::with_capacity(ladder.len());
    for (i, mesh) in ladder.iter().enumerate() {
        let max_l2 = (0..=steps)
            .map(|n| per_path.iter().map(|pe| pe.l2_sq[i][n]).sum::<f64>() / per_path.len() as f64)
            .fold(0.0, f64::max);
        let h1 = per_path.iter().map(|pe| pe.h1_sum[i]).sum::<f64>() / per_path.len() as f64;
        let h = mesh.size().h_max;
        let (err_linf_el2, err_el2h1) = (max_l2.sqrt(), h1.sqrt());
        let (o_l2, o_h1) = match rows.last() {
            Some(prev) => (
                order(prev.err_linf_el2, err_linf_el2, prev.h, h),
                order(prev.err_el2h1, err_el2h1, prev.h, h),
            ),
            None => (None, None),
        };
        rows.push(ErrorRow {
            nx: mesh.nx(),
            h,
            err_linf_el2,
            err_el2h1,
            order_linf_el2: o_l2,
            order_el2h1: o_h1,
        });
    }
    Ok(ErrorTable {
        rows,
        reference_nx: reference.nx(),
        reference_ny: reference.ny(),
        measure: opts.measure,
        samples: per_path.len(),
        checksums: per_path.iter().enumerate().map(|(p, pe)| (p as u64, pe.checksum)).collect(),
    })
}

/// Ladder meshes must be successively refined and all nested in the
/// reference mesh.
pub fn validate_ladder(ladder: &[Mesh], reference: &Mesh) -> Result<()> {
    if ladder.is_empty() {
        return Err(Error::config("mesh ladder is empty"));
    }
    for m in ladder {
        if m.refinement_ratio(reference).is_none() {
            return Err(Error::config(format!(
                "ladder mesh {}x{} is not nested in reference mesh {}x{}",
                m.nx(),
                m.ny(),
                reference.nx(),
                reference.ny()
            )));
        }
    }
    for w in ladder.windows(2) {
        if !matches!(w[0].refinement_ratio(&w[1]), Some(r) if r >= 2) {
            return Err(Error::config(format!(
                "ladder meshes {}x{} and {}x{} are not a nested refinement",
                w[0].nx(),
                w[0].ny(),
                w[1].nx(),
                w[1].ny()
            )));
        }
    }
    Ok(())
}

/// `(‖E‖²_{L²}, ‖∇E‖²_{L²})` with `E = u_ref − u_h`.
fn error_norms(
    measure: ErrorMeasure,
    mesh: &Mesh,
    ops: &AssembledOperators,
    u: &[f64],
    reference: &Mesh,
    ref_ops: &AssembledOperators,
    u_ref: &[f64],
) -> (f64, f64) {
    let e: Vec<f64> = match measure {
        ErrorMeasure::ReferenceMesh => reference
            .vertices()
            .iter()
            .zip(u_ref)
            .map(|([x, y], r)| r - mesh.evaluate_p1(u, *x, *y))
            .collect(),
        ErrorMeasure::CoarseNodes => {
            let r = mesh.refinement_ratio(reference).expect("validated ladder");
            (0..=mesh.ny())
                .flat_map(|j| (0..=mesh.nx()).map(move |i| (i, j)))
                .map(|(i, j)| u_ref[reference.vertex_index(r * i, r * j)] - u[mesh.vertex_index(i, j)])
                .collect()
        }
    };
    let ops = match measure {
        ErrorMeasure::ReferenceMesh => ref_ops,
        ErrorMeasure::CoarseNodes => ops,
    };
    (ops.l2_inner(&e, &e).max(0.0), ops.h1_inner(&e, &e).max(0.0))
}

/// Checksum of the increments path `p` consumes; equal on every mesh.
pub fn path_checksum(params: &SchemeParams, seed: u64, p: u64) -> u64 {
    let stream = NoiseStream::new(seed, p);
    checksum(
        &(1..=params.num_steps())
            .map(|k| params.draw_increment(&stream, k))
            .collect::<Vec<_>>(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Bounds;
    use crate::scheme::Diffusion;

    fn mesh(n: usize) -> Mesh {
        Mesh::rectangle(n, n, Bounds::symmetric_unit()).unwrap()
    }

    #[test]
    fn stderr_matches_definition() {
        let (m, se) = mean_and_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // s² = 5/3, s/√4
        assert!((se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(mean_and_stderr(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn reported_steps_include_final() {
        assert_eq!(reported_steps(10, 1).len(), 11);
        assert_eq!(reported_steps(10, 4), vec![0, 4, 8, 10]);
        assert_eq!(dyadic_lags(128).len(), 8);
    }

    #[test]
    fn constant_run_has_unit_l2_scale() {
        let m = mesh(6);
        let params = SchemeParams::new(0.1, 0.0, 1e-3, 5e-3);
        let run = run_stability(&m, &params, &InitialDatum::Constant(1.0), &StabilityOptions::new(1, 0)).unwrap();
        assert_eq!(run.stats.times.len(), 6);
        for v in &run.stats.e_l2 {
            assert!((v - 2.0).abs() < 1e-10, "{v}");
        }
    }

    #[test]
    fn estimates_independent_of_thread_count() {
        let m = mesh(6);
        let params = SchemeParams::new(0.2, 1.0, 1e-3, 4e-3);
        let mut opts = StabilityOptions::new(4, 11);
        opts.snapshot_times = vec![0.0, 4e-3];
        opts.holder_lags = vec![1, 2];
        let run_with = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_stability(&m, &params, &InitialDatum::Test1Circle, &opts).unwrap())
        };
        let a = run_with(1);
        let b = run_with(3);
        assert_eq!(a, b);
        assert_eq!(a.snapshots[1].step, 4);
        assert_eq!(a.checksums()[2].1, path_checksum(&params, 11, 2));
    }

    #[test]
    fn stronger_noise_spreads_h1_statistics() {
        let m = mesh(8);
        let opts = StabilityOptions::new(6, 3);
        let run = |delta| {
            let params = SchemeParams::new(0.1, delta, 1e-3, 1e-2);
            run_stability(&m, &params, &InitialDatum::Test1Circle, &opts).unwrap().stats
        };
        let (low, high) = (run(1.0), run(10.0));
        assert!(low.all_finite() && high.all_finite());
        assert_eq!(low.e_h1[0], high.e_h1[0]);
        assert_eq!(low.e_h1_se[0], 0.0);
        assert!(high.e_h1_se.last().unwrap() > low.e_h1_se.last().unwrap());
    }

    #[test]
    fn stationary_increments_are_degenerate() {
        let m = mesh(4);
        let params = SchemeParams::new(0.1, 0.0, 1e-3, 8e-3);
        let rep = holder_check(&m, &params, &InitialDatum::Constant(1.0), 2, 0, &[1, 2, 4, 8]).unwrap();
        assert!(rep.degenerate);
        assert!(rep.slope.is_none());
        assert!(holder_check(&m, &params, &InitialDatum::Constant(1.0), 2, 0, &[1, 16]).is_err());
        assert!(holder_check(&m, &params, &InitialDatum::Constant(1.0), 2, 0, &[1]).is_err());
    }

    #[test]
    fn regression_recovers_power_law() {
        let pts: Vec<(f64, f64)> = [1.0f64, 2.0, 4.0].iter().map(|t| (t.ln(), (3.0 * t.powf(1.1)).ln())).collect();
        assert!((regression_slope(&pts) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn reference_against_itself_is_exact() {
        let reference = mesh(8);
        let params = SchemeParams::new(0.2, 1.0, 1e-4, 3e-4).with_diffusion(Diffusion::Sqrt1p);
        let opts = ConvergenceOptions {
            paths: 2,
            seed: 1,
            measure: ErrorMeasure::CoarseNodes,
        };
        let table = run_convergence(&[mesh(4), mesh(8)], &reference, &params, &InitialDatum::Test3Cross, &opts).unwrap();
        assert_eq!(table.rows[1].err_linf_el2, 0.0);
        assert_eq!(table.rows[1].err_el2h1, 0.0);
        assert!(table.rows[0].err_linf_el2 > 0.0);
        assert_eq!(table.checksums[1].1, path_checksum(&params, 1, 1));
    }

    #[test]
    fn ladder_must_be_nested() {
        let r = mesh(12);
        assert!(validate_ladder(&[mesh(4), mesh(6)], &r).is_err());
        assert!(validate_ladder(&[mesh(5)], &r).is_err());
        assert!(validate_ladder(&[], &r).is_err());
        assert!(validate_ladder(&[mesh(3), mesh(6)], &r).is_ok());
        let e = validate_ladder(&[mesh(5)], &r).unwrap_err();
        assert!(e.is_config());
    }
}

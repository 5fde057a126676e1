//! TOML run configuration with named presets.
//!
//! Every key is optional except `epsilon`, `tau` and `final_time`, which must
//! come from the file or from a preset. Unknown keys are rejected. A resolved
//! [`RunConfig`] serializes back to the same format, so a run manifest can be
//! used as a configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datum::InitialDatum;
use crate::error::{Error, Result};
use crate::experiments::ErrorMeasure;
use crate::fem::AssembledOperators;
use crate::mesh::{Bounds, Mesh};
use crate::noise::IncrementVariance;
use crate::scheme::{Diffusion, SchemeParams, DEFAULT_NEWTON_MAX_ITER, DEFAULT_NEWTON_TOL};

pub const PRESETS: [&str; 3] = ["test1", "test2", "test3"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    /// `"test1_circle"`, `"test2_ellipse"`, `"test3_cross"`,
    /// `{ constant = c }` or `{ nodal_csv = "file.csv" }`.
    pub datum: Option<InitialDatum>,
    #[serde(default)]
    pub scheme: RawScheme,
    #[serde(default)]
    pub mesh: RawMesh,
    #[serde(default)]
    pub stability: RawStability,
    #[serde(default)]
    pub convergence: RawConvergence,
    #[serde(default)]
    pub holder: RawHolder,
    #[serde(default)]
    pub check: RawCheck,
    #[serde(default)]
    pub output: RawOutput,
    /// Written by runs; ignored on input.
    pub provenance: Option<toml::Table>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawScheme {
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub tau: Option<f64>,
    pub final_time: Option<f64>,
    pub diffusion: Option<Diffusion>,
    pub newton_tol: Option<f64>,
    pub newton_max_iter: Option<usize>,
    pub increment_variance: Option<IncrementVariance>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMesh {
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub bounds: Option<Bounds>,
    pub shear: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawStability {
    pub paths: Option<usize>,
    pub stride: Option<usize>,
    pub snapshot_times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConvergence {
    pub paths: Option<usize>,
    pub ladder: Option<Vec<usize>>,
    pub reference: Option<usize>,
    pub error_measure: Option<ErrorMeasure>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawHolder {
    pub paths: Option<usize>,
    pub max_lag: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCheck {
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawOutput {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshConfig {
    pub nx: usize,
    pub ny: usize,
    pub bounds: Bounds,
    /// Shear `s` of `x ↦ x + s·(y − ymin)`; nonzero values give obtuse
    /// triangles.
    pub shear: f64,
}

impl MeshConfig {
    pub fn build(&self) -> Result<Mesh> {
        let mesh = Mesh::rectangle(self.nx, self.ny, self.bounds)?;
        Ok(if self.shear != 0.0 { mesh.sheared(self.shear) } else { mesh })
    }

    pub fn with_n(&self, n: usize) -> Result<Mesh> {
        let ny = n * self.ny / self.nx;
        if ny * self.nx != n * self.ny {
            return Err(Error::config(format!(
                "mesh size {n} does not preserve the {}x{} aspect ratio",
                self.nx, self.ny
            )));
        }
        Mesh::rectangle(n, ny, self.bounds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub paths: usize,
    pub stride: usize,
    pub snapshot_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub paths: usize,
    pub ladder: Vec<usize>,
    pub reference: usize,
    pub error_measure: ErrorMeasure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderConfig {
    pub paths: usize,
    pub max_lag: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub datum: InitialDatum,
    pub scheme: SchemeParams,
    pub mesh: MeshConfig,
    pub stability: StabilityConfig,
    pub convergence: ConvergenceConfig,
    pub holder: HolderConfig,
    pub check: CheckConfig,
    pub output: OutputConfig,
}

/// Preset values, applied beneath the file's own keys.
pub fn preset(name: &str) -> Result<RawConfig> {
    let mut raw = RawConfig::default();
    match name {
        "test1" | "test2" => {
            raw.datum = Some(if name == "test1" {
                InitialDatum::Test1Circle
            } else {
                InitialDatum::Test2Ellipse
            });
            raw.scheme.epsilon = Some(0.1);
            raw.scheme.delta = Some(1.0);
            raw.scheme.tau = Some(1e-3);
            raw.scheme.final_time = Some(0.1);
            raw.scheme.diffusion = Some(Diffusion::Identity);
            // h = 2√2/64 ≈ 0.044
            raw.mesh.nx = Some(64);
        }
        "test3" => {
            raw.datum = Some(InitialDatum::Test3Cross);
            raw.scheme.epsilon = Some(0.05);
            raw.scheme.delta = Some(1.0);
            raw.scheme.tau = Some(1e-6);
            raw.scheme.final_time = Some(1e-4);
            raw.scheme.diffusion = Some(Diffusion::Sqrt1p);
            raw.convergence.ladder = Some(vec![10, 20, 40, 80]);
            raw.convergence.reference = Some(160);
        }
        other => {
            return Err(Error::config(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    }
    raw.preset = Some(name.to_string());
    Ok(raw)
}

/// Initial, middle and final step times.
fn default_snapshots(scheme: &SchemeParams) -> Vec<f64> {
    let n = scheme.num_steps();
    let mut steps = vec![0, n / 2, n];
    steps.dedup();
    steps.into_iter().map(|k| k as f64 * scheme.tau).collect()
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().trim().to_string(),
        })
    }

    /// Reads a file; relative `nodal_csv` paths are taken relative to the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut raw = Self::parse(&text).map_err(|e| match e {
            Error::Config { line, message } => Error::Config {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        if let Some(InitialDatum::NodalCsv(p)) = &mut raw.datum {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(raw)
    }

    /// Fills unset keys from `base`.
    fn over(self, b: RawConfig) -> RawConfig {
        let mut out = RawConfig {
            preset: self.preset.or(b.preset),
            seed: self.seed.or(b.seed),
            datum: self.datum.or(b.datum),
            provenance: None,
            ..self
        };
        macro_rules! fill {
            ($sec:ident: $($f:ident),*) => { $( if out.$sec.$f.is_none() { out.$sec.$f = b.$sec.$f.clone(); } )* };
        }
        fill!(scheme: epsilon, delta, tau, final_time, diffusion, newton_tol, newton_max_iter, increment_variance);
        fill!(mesh: nx, ny, bounds, shear);
        fill!(stability: paths, stride, snapshot_times);
        fill!(convergence: paths, ladder, reference, error_measure);
        fill!(holder: paths, max_lag);
        fill!(check: samples);
        fill!(output: dir);
        out
    }

    /// Fills unset keys from the preset named by `preset_override` or by
    /// the file itself.
    pub fn with_preset(self, preset_override: Option<&str>) -> Result<RawConfig> {
        let name = preset_override.map(str::to_string).or_else(|| self.preset.clone());
        Ok(match name {
            Some(n) => {
                let mut r = self.over(preset(&n)?);
                r.preset = Some(n);
                r
            }
            None => self,
        })
    }

    /// Mesh settings alone; needs no scheme parameters.
    pub fn mesh_config(&self) -> Result<MeshConfig> {
        let nx = self.mesh.nx.unwrap_or(16);
        let mesh = MeshConfig {
            nx,
            ny: self.mesh.ny.unwrap_or(nx),
            bounds: self.mesh.bounds.unwrap_or_default(),
            shear: self.mesh.shear.unwrap_or(0.0),
        };
        if mesh.nx == 0 || mesh.ny == 0 {
            return Err(Error::config("mesh.nx and mesh.ny must be positive"));
        }
        Ok(mesh)
    }

    /// Applies the preset (from `preset_override` or the file) and defaults.
    pub fn resolve(self, preset_override: Option<&str>) -> Result<RunConfig> {
        let raw = self.with_preset(preset_override)?;
        let s = &raw.scheme;
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| Error::config(format!("missing required key `scheme.{key}` (or a preset)")))
        };
        let scheme = SchemeParams {
            epsilon: need(s.epsilon, "epsilon")?,
            tau: need(s.tau, "tau")?,
            final_time: need(s.final_time, "final_time")?,
            delta: s.delta.unwrap_or(1.0),
            diffusion: s.diffusion.clone().unwrap_or_default(),
            newton_tol: s.newton_tol.unwrap_or(DEFAULT_NEWTON_TOL),
            newton_max_iter: s.newton_max_iter.unwrap_or(DEFAULT_NEWTON_MAX_ITER),
            increment_variance: s.increment_variance.unwrap_or_default(),
        };
        scheme.validate().map_err(|e| Error::config(e.to_string()))?;
        let mesh = raw.mesh_config()?;
        let snapshot_times = raw
            .stability
            .snapshot_times
            .unwrap_or_else(|| default_snapshots(&scheme));
        let positive = |v: usize, key: &str| {
            if v == 0 {
                Err(Error::config(format!("`{key}` must be positive")))
            } else {
                Ok(v)
            }
        };
        let cfg = RunConfig {
            preset: raw.preset,
            seed: raw.seed,
            datum: raw.datum.unwrap_or(InitialDatum::Test1Circle),
            scheme,
            mesh,
            stability: StabilityConfig {
                paths: positive(raw.stability.paths.unwrap_or(100), "stability.paths")?,
                stride: positive(raw.stability.stride.unwrap_or(1), "stability.stride")?,
                snapshot_times,
            },
            convergence: ConvergenceConfig {
                paths: positive(raw.convergence.paths.unwrap_or(20), "convergence.paths")?,
                ladder: raw.convergence.ladder.unwrap_or_else(|| vec![10, 20, 40]),
                reference: raw.convergence.reference.unwrap_or(80),
                error_measure: raw.convergence.error_measure.unwrap_or_default(),
            },
            holder: HolderConfig {
                paths: positive(raw.holder.paths.unwrap_or(50), "holder.paths")?,
                max_lag: positive(raw.holder.max_lag.unwrap_or(128), "holder.max_lag")?,
            },
            check: CheckConfig {
                samples: raw.check.samples.unwrap_or(1000),
            },
            output: OutputConfig {
                dir: raw.output.dir.unwrap_or_else(|| PathBuf::from("out")),
            },
        };
        Ok(cfg)
    }
}

impl RunConfig {
    /// Equivalent raw configuration with every key set.
    pub fn to_raw(&self) -> RawConfig {
        let s = &self.scheme;
        RawConfig {
            preset: None,
            seed: self.seed,
            datum: Some(self.datum.clone()),
            scheme: RawScheme {
                epsilon: Some(s.epsilon),
                delta: Some(s.delta),
                tau: Some(s.tau),
                final_time: Some(s.final_time),
                diffusion: Some(s.diffusion.clone()),
                newton_tol: Some(s.newton_tol),
                newton_max_iter: Some(s.newton_max_iter),
                increment_variance: Some(s.increment_variance),
            },
            mesh: RawMesh {
                nx: Some(self.mesh.nx),
                ny: Some(self.mesh.ny),
                bounds: Some(self.mesh.bounds),
                shear: Some(self.mesh.shear),
            },
            stability: RawStability {
                paths: Some(self.stability.paths),
                stride: Some(self.stability.stride),
                snapshot_times: Some(self.stability.snapshot_times.clone()),
            },
            convergence: RawConvergence {
                paths: Some(self.convergence.paths),
                ladder: Some(self.convergence.ladder.clone()),
                reference: Some(self.convergence.reference),
                error_measure: Some(self.convergence.error_measure),
            },
            holder: RawHolder {
                paths: Some(self.holder.paths),
                max_lag: Some(self.holder.max_lag),
            },
            check: RawCheck {
                samples: Some(self.check.samples),
            },
            output: RawOutput {
                dir: Some(self.output.dir.clone()),
            },
            provenance: None,
        }
    }

    /// The seed, or a configuration error when none was given.
    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::config("no seed given: set `seed` in the configuration or pass --seed"))
    }

    pub fn build_mesh(&self) -> Result<(Mesh, AssembledOperators)> {
        let mesh = self.mesh.build()?;
        let ops = AssembledOperators::assemble(&mesh)?;
        Ok((mesh, ops))
    }
}

/// Provenance written next to the resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub code_version: String,
    pub seed: Option<u64>,
    pub wall_time_seconds: f64,
    /// `path -> increment checksum` as 16-digit hex.
    pub increment_checksums: Vec<(u64, String)>,
}

/// Writes `manifest.toml`: the resolved configuration plus provenance.
pub fn write_manifest(path: &Path, cfg: &RunConfig, prov: &Provenance) -> Result<()> {
    let mut raw = cfg.to_raw();
    let table = toml::Table::try_from(prov).map_err(|e| Error::config(format!("manifest: {e}")))?;
    raw.provenance = Some(table);
    let text = toml::to_string(&raw).map_err(|e| Error::config(format!("manifest: {e}")))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

//! Initial data `u₀` of the numerical experiments.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{AssembledOperators, NodalField};
use crate::mesh::Mesh;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDatum {
    /// `tanh((x² + y² - 0.6²) / (√2 ε))`, a circle of radius 0.6.
    Test1Circle,
    /// `tanh((√((x/0.7)² + (y/0.65)²) - 1) / (√2 ε))`, an ellipse.
    Test2Ellipse,
    /// `tanh((√(x²/0.7 + y²/0.1) - 1)(√(x²/0.1 + y²/0.7) - 1) / (√2 ε))`,
    /// two crossed ellipses.
    Test3Cross,
    Constant(f64),
    /// Nodal values read from a one-column CSV file with header `u`, in mesh
    /// vertex order.
    NodalCsv(PathBuf),
}

impl InitialDatum {
    /// Closed-form value at `(x, y)`; `None` for tabulated data.
    pub fn eval(&self, x: f64, y: f64, epsilon: f64) -> Option<f64> {
        let width = std::f64::consts::SQRT_2 * epsilon;
        let v = match self {
            InitialDatum::Test1Circle => ((x * x + y * y - 0.36) / width).tanh(),
            InitialDatum::Test2Ellipse => {
                let r = ((x / 0.7).powi(2) + (y / 0.65).powi(2)).sqrt();
                ((r - 1.0) / width).tanh()
            }
            InitialDatum::Test3Cross => {
                let a = (x * x / 0.7 + y * y / 0.1).sqrt() - 1.0;
                let b = (x * x / 0.1 + y * y / 0.7).sqrt() - 1.0;
                (a * b / width).tanh()
            }
            InitialDatum::Constant(c) => *c,
            InitialDatum::NodalCsv(_) => return None,
        };
        Some(v)
    }

    /// Discrete initial value `u_h⁰ = P_h u₀`. Constants are returned
    /// exactly and tabulated data is used as given.
    pub fn discretize(&self, mesh: &Mesh, ops: &AssembledOperators, epsilon: f64) -> Result<NodalField> {
        match self {
            InitialDatum::Constant(c) => {
                if !c.is_finite() {
                    return Err(Error::InvalidArgument(format!("constant datum {c} is not finite")));
                }
                Ok(NodalField::constant(mesh.num_vertices(), *c))
            }
            InitialDatum::NodalCsv(path) => {
                let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
                let mut values = Vec::new();
                for rec in reader.deserialize::<NodalRow>() {
                    let rec = rec.map_err(|e| Error::csv(path, e))?;
                    values.push(rec.u);
                }
                if values.len() != mesh.num_vertices() {
                    return Err(Error::InvalidArgument(format!(
                        "{} holds {} values, mesh has {} vertices",
                        path.display(),
                        values.len(),
                        mesh.num_vertices()
                    )));
                }
                let field = NodalField::new(values);
                if !field.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "{} contains non-finite values",
                        path.display()
                    )));
                }
                Ok(field)
            }
            _ => ops.l2_project(mesh, |x, y| self.eval(x, y, epsilon).unwrap_or(f64::NAN)),
        }
    }
}

#[derive(Deserialize)]
struct NodalRow {
    u: f64,
}

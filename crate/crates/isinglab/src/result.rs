//! Common container for the output of every inference strategy.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CouplingModel;

/// Reconstructed fields and couplings, together with the method name, the
/// hyperparameters that produced them, and numerical diagnostics (condition
/// numbers, iteration counts, fallback flags, ...).
#[derive(Debug, Clone)]
pub struct InferenceResult {
    pub l: usize,
    pub theta_star: DVector<f64>,
    pub j_star: DMatrix<f64>,
    /// True when `j_star` may carry meaningful diagonal entries
    /// (kinetic reconstructions retain them).
    pub self_allowed: bool,
    pub method: String,
    pub hyperparams: serde_json::Map<String, serde_json::Value>,
    pub diagnostics: serde_json::Map<String, serde_json::Value>,
}

impl InferenceResult {
    pub fn new(theta_star: DVector<f64>, j_star: DMatrix<f64>, method: &str) -> Self {
        let l = theta_star.len();
        debug_assert_eq!(j_star.nrows(), l);
        debug_assert_eq!(j_star.ncols(), l);
        Self {
            l,
            theta_star,
            j_star,
            self_allowed: false,
            method: method.to_string(),
            hyperparams: serde_json::Map::new(),
            diagnostics: serde_json::Map::new(),
        }
    }

    pub fn with_self_allowed(mut self, yes: bool) -> Self {
        self.self_allowed = yes;
        self
    }

    pub fn record_hyper(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.hyperparams.insert(key.to_string(), value.into());
    }

    pub fn record_diag(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.diagnostics.insert(key.to_string(), value.into());
    }

    /// View the reconstruction as a coupling model (e.g. to re-simulate or to
    /// enumerate its Gibbs moments).
    pub fn as_model(&self) -> Result<CouplingModel> {
        CouplingModel::new(self.theta_star.clone(), self.j_star.clone(), self.self_allowed)
    }
}

#[derive(Serialize, Deserialize)]
struct ResultJson {
    #[serde(rename = "L")]
    l: usize,
    theta: Vec<f64>,
    #[serde(rename = "J")]
    j: Vec<Vec<f64>>,
    self_allowed: bool,
    method: String,
    #[serde(default)]
    hyperparams: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    diagnostics: serde_json::Map<String, serde_json::Value>,
}

impl InferenceResult {
    pub fn to_json_string(&self) -> Result<String> {
        let rows: Vec<Vec<f64>> = (0..self.l)
            .map(|i| (0..self.l).map(|jdx| self.j_star[(i, jdx)]).collect())
            .collect();
        let doc = ResultJson {
            l: self.l,
            theta: self.theta_star.iter().cloned().collect(),
            j: rows,
            self_allowed: self.self_allowed,
            method: self.method.clone(),
            hyperparams: self.hyperparams.clone(),
            diagnostics: self.diagnostics.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: ResultJson = serde_json::from_str(text)?;
        if doc.theta.len() != doc.l
            || doc.j.len() != doc.l
            || doc.j.iter().any(|row| row.len() != doc.l)
        {
            return Err(Error::Format(
                "inference result file has inconsistent dimensions".into(),
            ));
        }
        Ok(Self {
            l: doc.l,
            theta_star: DVector::from_vec(doc.theta),
            j_star: DMatrix::from_fn(doc.l, doc.l, |i, jdx| doc.j[i][jdx]),
            self_allowed: doc.self_allowed,
            method: doc.method,
            hyperparams: doc.hyperparams,
            diagnostics: doc.diagnostics,
        })
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()? + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

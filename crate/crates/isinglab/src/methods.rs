//! Uniform, name-addressable access to the inference strategies.
//!
//! Every reconstruction method — equilibrium and kinetic alike — is wrapped
//! in an object implementing [`InferenceMethod`], built by name through
//! [`build_method`]. A method declares which pieces of prepared data it
//! consumes ([`Needs`]), the caller assembles those pieces into an
//! [`InferenceInput`], and `infer` produces the common
//! [`InferenceResult`]. This is what lets a pipeline switch estimators with
//! a string flag instead of a code change.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::equilibrium::{infer_bm, infer_nmf, infer_plm, infer_tap, BmOptions, PlmOptions};
use crate::error::{Error, Result};
use crate::kinetic::{
    infer_asyn_nmf, infer_asyn_tap, infer_ave, infer_sho, kinetic_matrices, AveInputs,
    AveOptions, ShoOptions, TapMode,
};
use crate::result::InferenceResult;
use crate::stats::{FlipDecomposition, MomentSet};
use crate::table::SampleTable;

/// Registered method names, in the order they are listed to users.
pub const METHOD_NAMES: [&str; 8] = [
    "nmf", "tap", "plm", "bm", "asyn-nmf", "asyn-tap", "sho", "ave",
];

/// Which prepared inputs a method reads. Callers use this to decide what to
/// compute from a raw trajectory or sample table before calling `infer`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Needs {
    /// Raw sample rows (per-configuration data).
    pub table: bool,
    /// Equal-time means and correlations.
    pub moments: bool,
    /// Time-derivative of the correlations at lag zero.
    pub dc0: bool,
    /// The flip rate of the dynamics.
    pub gamma: bool,
    /// A grid decomposition of the trajectory into flip / no-flip cells.
    pub flips: bool,
    /// Ensemble-plus-flip-moment inputs for the averaged update rule.
    pub ave: bool,
}

/// Borrowed bundle of everything a data source may provide. Fields a method
/// does not need may be left `None`.
#[derive(Default)]
pub struct InferenceInput<'a> {
    pub table: Option<&'a SampleTable>,
    pub moments: Option<&'a MomentSet>,
    pub flips: Option<&'a FlipDecomposition>,
    pub ave: Option<&'a AveInputs>,
    pub gamma: Option<f64>,
}

impl<'a> InferenceInput<'a> {
    fn table(&self, method: &str) -> Result<&'a SampleTable> {
        self.table
            .ok_or_else(|| Error::Parameter(format!("method '{method}' needs sample rows")))
    }

    fn moments(&self, method: &str) -> Result<&'a MomentSet> {
        self.moments.ok_or_else(|| {
            Error::Parameter(format!("method '{method}' needs equal-time moments"))
        })
    }

    fn flips(&self, method: &str) -> Result<&'a FlipDecomposition> {
        self.flips.ok_or_else(|| {
            Error::Parameter(format!("method '{method}' needs a flip decomposition"))
        })
    }

    fn ave(&self, method: &str) -> Result<&'a AveInputs> {
        self.ave.ok_or_else(|| {
            Error::Parameter(format!("method '{method}' needs ensemble flip moments"))
        })
    }

    /// Flip rate: an explicit value wins over the one recorded with the
    /// moments.
    fn gamma(&self, method: &str) -> Result<f64> {
        self.gamma
            .or_else(|| self.moments.and_then(|ms| ms.meta.gamma))
            .ok_or_else(|| Error::Parameter(format!("method '{method}' needs gamma")))
    }
}

/// A reconstruction strategy with its hyperparameters bound.
pub trait InferenceMethod: Send + Sync {
    fn name(&self) -> &'static str;
    fn needs(&self) -> Needs;
    fn infer(&self, input: &InferenceInput) -> Result<InferenceResult>;
}

// ---------------------------------------------------------------------------
// Option-map parsing

fn take_f64(map: &mut BTreeMap<String, Value>, key: &str) -> Result<Option<f64>> {
    match map.remove(key) {
        None => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| Error::Parameter(format!("option '{key}' must be a number, got {v}"))),
    }
}

fn take_usize(map: &mut BTreeMap<String, Value>, key: &str) -> Result<Option<usize>> {
    match map.remove(key) {
        None => Ok(None),
        Some(v) => v
            .as_u64()
            .map(|x| Some(x as usize))
            .ok_or_else(|| {
                Error::Parameter(format!("option '{key}' must be a non-negative integer, got {v}"))
            }),
    }
}

fn take_bool(map: &mut BTreeMap<String, Value>, key: &str) -> Result<Option<bool>> {
    match map.remove(key) {
        None => Ok(None),
        Some(v) => v
            .as_bool()
            .map(Some)
            .ok_or_else(|| Error::Parameter(format!("option '{key}' must be a boolean, got {v}"))),
    }
}

fn take_str(map: &mut BTreeMap<String, Value>, key: &str) -> Result<Option<String>> {
    match map.remove(key) {
        None => Ok(None),
        Some(v) => v
            .as_str()
            .map(|s| Some(s.to_string()))
            .ok_or_else(|| Error::Parameter(format!("option '{key}' must be a string, got {v}"))),
    }
}

fn reject_leftovers(method: &str, map: &BTreeMap<String, Value>) -> Result<()> {
    if map.is_empty() {
        Ok(())
    } else {
        let keys: Vec<&str> = map.keys().map(|k| k.as_str()).collect();
        Err(Error::Parameter(format!(
            "unknown options for method '{method}': {}",
            keys.join(", ")
        )))
    }
}

// ---------------------------------------------------------------------------
// Wrappers

struct NmfMethod;

impl InferenceMethod for NmfMethod {
    fn name(&self) -> &'static str {
        "nmf"
    }
    fn needs(&self) -> Needs {
        Needs {
            moments: true,
            ..Needs::default()
        }
    }
    fn infer(&self, input: &InferenceInput) -> Result<InferenceResult> {
        infer_nmf(input.moments(self.name())?)
    }
}

struct TapMethod;

impl InferenceMethod for TapMethod {
    fn name(&self) -> &'static str {
        "tap"
    }
    fn needs(&self) -> Needs {
        Needs {
            moments: true,
            ..Needs::default()
        }
    }
    fn infer(&self, input: &InferenceInput) -> Result<InferenceResult> {
        infer_tap(input.moments(self.name())?)
    }
}

struct PlmMethod {
    opts: PlmOptions,
}

impl InferenceMethod for PlmMethod {
    fn name(&self) -> &'static str {
        "plm"
    }
    fn needs(&self) -> Needs {
        Needs {
            table: true,
            ..Needs::default()
        }
    }
    fn infer(&self, input: &InferenceInput) -> Result<InferenceResult> {
        infer_plm(input.table(self.name())?, &self.opts)
    }
}

struct BmMethod {
    opts: BmOptions,
}

impl InferenceMethod for BmMethod {
    fn name(&self) -> &'static str {
        "bm"
    }
    fn needs(&self) -> Needs {
        Needs {
            moments: true,
            ..Needs::default()
        }
    }
    fn infer(&self, input: &InferenceInput) -> Result<InferenceResult> {
        infer_bm(input.moments(self.name())?, &self.opts)
    }
}

struct AsynNmfMethod {
    symmetrize: bool,
}

impl InferenceMethod for AsynNmfMethod {
    fn name(&self) -> &'static str {
        "asyn-nmf"
    }
    fn needs(&self) -> Needs {
        Needs {
            moments: true,
            dc0: true,
            gamma: true,
            ..Needs::default()
        }
    }
    fn infer(&self, input: &InferenceInput) -> Result<InferenceResult> {
        let ms = input.moments(self.name())?;
        let km = kinetic_matrices(ms, input.gamma(self.name())?)?;
        infer_asyn_nmf(&km, self.symmetrize)
    }
}

struct AsynTapMethod {
    mode: TapMode,
    symmetrize: bool,
}

impl InferenceMethod for AsynTapMethod {
    fn name(&self) -> &'static str {
        "asyn-tap"
    }
    fn needs(&self) -> Needs {
        Needs {
            moments: true,
            dc0: true,
            gamma: true,
            ..Needs::default()
        }
    }
    fn infer(&self, input: &InferenceInput) -> Result<InferenceResult> {
        let ms = input.moments(self.name())?;
        let km = kinetic_matrices(ms, input.gamma(self.name())?)?;
        infer_asyn_tap(&km, &self.mode, self.symmetrize)
    }
}

struct ShoMethod {
    opts: ShoOptions,
}

impl InferenceMethod for ShoMethod {
    fn name(&self) -> &'static str {
        "sho"
    }
    fn needs(&self) -> Needs {
        Needs {
            flips: true,
            ..Needs::default()
        }
    }
    fn infer(&self, input: &InferenceInput) -> Result<InferenceResult> {
        infer_sho(input.flips(self.name())?, &self.opts)
    }
}

struct AveMethod {
    opts: AveOptions,
}

impl InferenceMethod for AveMethod {
    fn name(&self) -> &'static str {
        "ave"
    }
    fn needs(&self) -> Needs {
        Needs {
            ave: true,
            ..Needs::default()
        }
    }
    fn infer(&self, input: &InferenceInput) -> Result<InferenceResult> {
        infer_ave(input.ave(self.name())?, &self.opts)
    }
}

// ---------------------------------------------------------------------------
// Registry

/// Build a method by registered name, binding hyperparameters from a JSON
/// option map. Unknown names and unknown or ill-typed options are rejected.
///
/// Recognized options per method:
///
/// * `nmf`, `tap`: none;
/// * `plm`: `lambda`, `grad_tol`, `max_iters`;
/// * `bm`: `eta`, `tol`, `max_sweeps`;
/// * `asyn-nmf`: `symmetrize`;
/// * `asyn-tap`: `symmetrize`, `mode` (`"cubic"` or `"iterative"`), and for
///   the iterative mode `tol`, `max_iters`;
/// * `sho`: `lambda`, `grad_tol`, `max_iters`;
/// * `ave`: `eta`, `tol`, `max_iters`.
pub fn build_method(
    name: &str,
    options: &serde_json::Map<String, Value>,
) -> Result<Box<dyn InferenceMethod>> {
    let mut map: BTreeMap<String, Value> =
        options.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let method: Box<dyn InferenceMethod> = match name {
        "nmf" => Box::new(NmfMethod),
        "tap" => Box::new(TapMethod),
        "plm" => {
            let mut opts = PlmOptions::default();
            opts.lambda = take_f64(&mut map, "lambda")?.or(opts.lambda);
            if let Some(x) = take_f64(&mut map, "grad_tol")? {
                opts.grad_tol = x;
            }
            if let Some(x) = take_usize(&mut map, "max_iters")? {
                opts.max_iters = x;
            }
            Box::new(PlmMethod { opts })
        }
        "bm" => {
            let mut opts = BmOptions::default();
            if let Some(x) = take_f64(&mut map, "eta")? {
                opts.eta = x;
            }
            if let Some(x) = take_f64(&mut map, "tol")? {
                opts.tol = x;
            }
            if let Some(x) = take_usize(&mut map, "max_sweeps")? {
                opts.max_sweeps = x;
            }
            Box::new(BmMethod { opts })
        }
        "asyn-nmf" => {
            let symmetrize = take_bool(&mut map, "symmetrize")?.unwrap_or(false);
            Box::new(AsynNmfMethod { symmetrize })
        }
        "asyn-tap" => {
            let symmetrize = take_bool(&mut map, "symmetrize")?.unwrap_or(false);
            let mode_name = take_str(&mut map, "mode")?.unwrap_or_else(|| "cubic".into());
            let mode = match mode_name.as_str() {
                "cubic" => TapMode::Cubic,
                "iterative" => TapMode::Iterative {
                    tol: take_f64(&mut map, "tol")?.unwrap_or(1e-12),
                    max_iters: take_usize(&mut map, "max_iters")?.unwrap_or(10_000),
                },
                other => {
                    return Err(Error::Parameter(format!(
                        "asyn-tap mode must be 'cubic' or 'iterative', got '{other}'"
                    )))
                }
            };
            Box::new(AsynTapMethod { mode, symmetrize })
        }
        "sho" => {
            let mut opts = ShoOptions::default();
            if let Some(x) = take_f64(&mut map, "lambda")? {
                opts.lambda = x;
            }
            if let Some(x) = take_f64(&mut map, "grad_tol")? {
                opts.grad_tol = x;
            }
            if let Some(x) = take_usize(&mut map, "max_iters")? {
                opts.max_iters = x;
            }
            Box::new(ShoMethod { opts })
        }
        "ave" => {
            let mut opts = AveOptions::default();
            if let Some(x) = take_f64(&mut map, "eta")? {
                opts.eta = x;
            }
            if let Some(x) = take_f64(&mut map, "tol")? {
                opts.tol = x;
            }
            if let Some(x) = take_usize(&mut map, "max_iters")? {
                opts.max_iters = x;
            }
            Box::new(AveMethod { opts })
        }
        other => {
            return Err(Error::Parameter(format!(
                "unknown method '{other}'; available: {}",
                METHOD_NAMES.join(", ")
            )))
        }
    };
    reject_leftovers(name, &map)?;
    Ok(method)
}

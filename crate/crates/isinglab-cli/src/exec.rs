//! Implementations of the single-artifact commands: gen, simulate, infer,
//! eval, binarize.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use isinglab::dynamics::{
    sample_snapshots, simulate_discrete, simulate_gillespie, DiscreteKind, SpinTrajectory,
};
use isinglab::error::{Error, Result};
use isinglab::ingest;
use isinglab::kinetic::AveInputs;
use isinglab::methods::{build_method, InferenceInput};
use isinglab::metrics;
use isinglab::model::{generate_sk, random_theta, SkParams};
use isinglab::spins;
use isinglab::stats::{
    config_ensemble, default_fit_lags, flip_decompose, sample_moments, trajectory_moments,
    ConfigEnsemble, ConservationPolicy, Dc0Method, FlipDecomposition, MomentSet,
};
use isinglab::table::SampleTable;
use isinglab::{CouplingModel, InferenceResult};

use crate::args::{
    BinarizeEventsArgs, BinarizeVolumesArgs, Dc0Arg, EvalArgs, GenArgs, InferArgs, InitArg,
    SchemeArg, SimulateArgs,
};

pub fn gen(a: &GenArgs) -> Result<()> {
    let mut model = generate_sk(&SkParams {
        l: a.l,
        g: a.g,
        k: a.k,
        seed: a.seed,
    })?;
    if let (Some(lo), Some(hi)) = (a.theta_lo, a.theta_hi) {
        let theta_seed = a.theta_seed.expect("resolved before dispatch");
        model.set_theta(random_theta(a.l, lo, hi, theta_seed)?)?;
        model.meta_mut().insert("theta_lo".into(), lo.into());
        model.meta_mut().insert("theta_hi".into(), hi.into());
        model.meta_mut().insert("theta_seed".into(), theta_seed.into());
    }
    model.write_json(&a.out)
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let model = CouplingModel::read_json(&a.model)?;
    let l = model.l();
    let initial: Vec<i8> = match a.init {
        InitArg::AllUp => vec![1; l],
        InitArg::AllDown => vec![-1; l],
        InitArg::Random => {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
                a.init_seed.expect("resolved before dispatch"),
            );
            // One fair draw per spin, in index order.
            (0..l).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect()
        }
    };
    let traj = match a.scheme {
        SchemeArg::Gillespie => {
            simulate_gillespie(&model, a.gamma, a.t_end, &initial, a.seed)?
        }
        SchemeArg::PerSpinBernoulli | SchemeArg::RandomPick => {
            let dt = a.dt.ok_or_else(|| {
                Error::Parameter("discrete schemes need --dt".into())
            })?;
            let kind = if a.scheme == SchemeArg::PerSpinBernoulli {
                DiscreteKind::PerSpinBernoulli
            } else {
                DiscreteKind::RandomPick
            };
            simulate_discrete(&model, a.gamma, dt, a.t_end, &initial, a.seed, kind)?
        }
    };
    traj.write(&a.out)?;
    if let Some(snap_path) = &a.snapshots_out {
        let table = sample_snapshots(
            &traj,
            a.snapshot_burn_in,
            a.snapshot_interval.expect("clap requires"),
            a.n_snapshots.expect("clap requires"),
        )?;
        table.write(snap_path)?;
    }
    Ok(())
}

/// Decode a duration-weighted configuration ensemble into a weighted sample
/// table, so row-based estimators can consume exact time averages.
fn ensemble_to_table(ens: &ConfigEnsemble) -> Result<SampleTable> {
    let rows: Vec<Vec<i8>> = ens
        .configs
        .iter()
        .map(|&mask| spins::config_from_mask(mask, ens.l))
        .collect();
    let mut table = SampleTable::from_rows(&rows)?.with_weights(ens.weights.clone())?;
    table.meta.insert("source".into(), "trajectory-ensemble".into());
    table
        .meta
        .insert("t_total".into(), ens.t_total.into());
    Ok(table)
}

pub fn infer(a: &InferArgs) -> Result<()> {
    let options: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&a.options)
        .map_err(|e| Error::Parameter(format!("--options must be a JSON object: {e}")))?;
    let method = build_method(&a.method, &options)?;
    let needs = method.needs();

    let traj: Option<SpinTrajectory> =
        a.trajectory.as_deref().map(SpinTrajectory::read).transpose()?;
    let table_in: Option<SampleTable> = a.table.as_deref().map(SampleTable::read).transpose()?;
    let moments_in: Option<MomentSet> =
        a.moments.as_deref().map(MomentSet::read_json).transpose()?;
    if traj.is_none() && table_in.is_none() && moments_in.is_none() {
        return Err(Error::Parameter(
            "pass one of --trajectory, --table, --moments".into(),
        ));
    }

    let gamma: Option<f64> = a
        .gamma
        .or_else(|| traj.as_ref().map(|t| t.gamma()))
        .or_else(|| moments_in.as_ref().and_then(|m| m.meta.gamma));

    // Table rows: given directly, or exact time averages of a trajectory.
    let mut table_derived: Option<SampleTable> = None;
    if needs.table && table_in.is_none() {
        match &traj {
            Some(t) => {
                table_derived = Some(ensemble_to_table(&config_ensemble(t, a.burn_in)?)?)
            }
            None => {
                return Err(Error::Parameter(format!(
                    "method '{}' needs sample rows; pass --table or --trajectory",
                    a.method
                )))
            }
        }
    }

    // Moments: given directly, or estimated from the table or trajectory.
    let want_moments = needs.moments || a.moments_out.is_some();
    let mut moments_derived: Option<MomentSet> = None;
    if want_moments && moments_in.is_none() {
        if let Some(t) = &table_in {
            moments_derived = Some(sample_moments(t, a.pseudocount)?);
        } else if let Some(t) = &traj {
            let dc0 = if needs.dc0 {
                match a.dc0 {
                    Dc0Arg::EventLimit => Dc0Method::EventLimit,
                    Dc0Arg::LinearFit => Dc0Method::LinearFit {
                        taus: default_fit_lags(gamma.ok_or_else(|| {
                            Error::Parameter("linear-fit lags need --gamma".into())
                        })?),
                    },
                }
            } else {
                Dc0Method::Skip
            };
            moments_derived = Some(trajectory_moments(t, &[], a.burn_in, dc0)?);
        } else if needs.moments {
            return Err(Error::Parameter(format!(
                "method '{}' needs moments; pass --moments, --table or --trajectory",
                a.method
            )));
        }
    }

    let mut flips: Option<FlipDecomposition> = None;
    if needs.flips {
        let t = traj.as_ref().ok_or_else(|| {
            Error::Parameter(format!(
                "method '{}' learns from transitions; pass --trajectory",
                a.method
            ))
        })?;
        let dt = match a.dt {
            Some(v) => v,
            None => {
                0.1 / gamma.ok_or_else(|| Error::Parameter("default --dt needs --gamma".into()))?
            }
        };
        let policy = if a.strict_conservation {
            ConservationPolicy::Require
        } else {
            ConservationPolicy::BestEffort
        };
        flips = Some(flip_decompose(t, dt, a.burn_in, a.max_refine, policy)?);
    }

    let mut ave: Option<AveInputs> = None;
    if needs.ave {
        let t = traj.as_ref().ok_or_else(|| {
            Error::Parameter(format!(
                "method '{}' learns from trajectories; pass --trajectory",
                a.method
            ))
        })?;
        ave = Some(AveInputs::from_trajectory(t, a.burn_in)?);
    }

    let input = InferenceInput {
        table: table_in.as_ref().or(table_derived.as_ref()),
        moments: moments_in.as_ref().or(moments_derived.as_ref()),
        flips: flips.as_ref(),
        ave: ave.as_ref(),
        gamma,
    };
    let mut result = method.infer(&input)?;
    let source = a
        .trajectory
        .as_ref()
        .or(a.table.as_ref())
        .or(a.moments.as_ref())
        .expect("one input checked above");
    result.record_hyper("input", source.display().to_string());
    result.record_hyper("burn_in", a.burn_in);
    result.write_json(&a.out)?;

    if let Some(mpath) = &a.moments_out {
        match moments_in.as_ref().or(moments_derived.as_ref()) {
            Some(ms) => ms.write_json(mpath)?,
            None => {
                return Err(Error::Parameter(
                    "--moments-out needs a trajectory, table or moments input".into(),
                ))
            }
        }
    }
    Ok(())
}

/// Fields and couplings from either a reconstruction file or a model file.
fn load_params(path: &Path) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(r) = InferenceResult::from_json_str(&text) {
        return Ok((r.theta_star, r.j_star));
    }
    match CouplingModel::from_json_str(&text) {
        Ok(m) => Ok((m.theta().clone(), m.j().clone())),
        Err(e) => Err(Error::Format(format!(
            "{} is neither a reconstruction nor a model file: {e}",
            path.display()
        ))),
    }
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let (theta_star, j_star) = load_params(&a.result)?;
    let (theta_true, j_true) = load_params(&a.truth)?;
    let report = metrics::evaluate(
        &j_star,
        &j_true,
        Some((&theta_star, &theta_true)),
        a.k,
    )?;
    std::fs::write(&a.out, serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(())
}

pub fn binarize_events(a: &BinarizeEventsArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.input)?;
    let series = ingest::read_event_csv(&text)?;
    let table = ingest::binarize_events(&series, a.gamma, a.dt, a.t0, a.t1, a.seed)?;
    table.write(&a.out)
}

pub fn binarize_volumes(a: &BinarizeVolumesArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.input)?;
    let series = ingest::read_volume_csv(&text)?;
    let opts = ingest::VolumeBinarizeOptions {
        window: a.window,
        shift: a.shift,
        chi: a.chi,
    };
    let table = ingest::binarize_volumes(&series, &opts, a.t0, a.t1)?;
    table.write(&a.out)
}

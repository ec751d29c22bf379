//! Reconstruction-error curves: replicate a full generate → simulate →
//! infer → score pipeline across one parameter axis and several methods.
//!
//! Each (axis value, replica) cell is independent and carries its own seeds
//! (`seed + 2·(cell·replicas + replica)` for the model draw, the next
//! integer for the dynamics), so results do not depend on scheduling. Cells
//! run on the shared worker pool; output rows are ordered by axis value,
//! then by the method order given on the command line.

use nalgebra::DVector;
use rayon::prelude::*;

use isinglab::dynamics::simulate_gillespie;
use isinglab::error::{Error, Result};
use isinglab::kinetic::AveInputs;
use isinglab::methods::{build_method, InferenceInput, Needs};
use isinglab::metrics::mse;
use isinglab::model::{generate_sk, SkParams};
use isinglab::spins;
use isinglab::stats::{
    config_ensemble, default_fit_lags, flip_decompose, trajectory_moments, ConservationPolicy,
    Dc0Method,
};
use isinglab::table::SampleTable;

use crate::args::{Dc0Arg, SweepArgs, SweepAxisArg};

/// One replica's error per method; failures keep their message so the sweep
/// can continue and report them.
type ReplicaOutcome = Vec<(String, std::result::Result<f64, String>)>;

fn union_needs(methods: &[String]) -> Result<Needs> {
    let mut u = Needs::default();
    for name in methods {
        let n = build_method(name, &serde_json::Map::new())?.needs();
        u.table |= n.table;
        u.moments |= n.moments;
        u.dc0 |= n.dc0;
        u.gamma |= n.gamma;
        u.flips |= n.flips;
        u.ave |= n.ave;
    }
    Ok(u)
}

/// Resolved per-cell configuration: (L, g, uniform field, event budget).
fn cell_config(a: &SweepArgs, value: f64) -> Result<(usize, f64, f64, f64)> {
    Ok(match a.axis {
        SweepAxisArg::DataLength => (a.l, a.g, a.theta, value),
        SweepAxisArg::Size => {
            if value < 2.0 || value.fract() != 0.0 {
                return Err(Error::Parameter(format!(
                    "size axis values must be integers >= 2, got {value}"
                )));
            }
            let n = value as usize;
            // Event budget scales with the spin count, so data per spin is
            // constant along the axis.
            (n, a.g, a.theta, a.events * n as f64 / a.l as f64)
        }
        SweepAxisArg::Field => (a.l, a.g, value, a.events),
        SweepAxisArg::G => (a.l, value, a.theta, a.events),
    })
}

fn run_replica(a: &SweepArgs, needs: Needs, cell: usize, rep: usize) -> Result<ReplicaOutcome> {
    let (l, g, theta, events) = cell_config(a, a.values[cell])?;
    let base = 2 * (cell * a.replicas + rep) as u64;
    let model_seed = a.seed.wrapping_add(base);
    let sim_seed = a.seed.wrapping_add(base + 1);

    let mut model = generate_sk(&SkParams {
        l,
        g,
        k: a.k,
        seed: model_seed,
    })?;
    model.set_theta(DVector::from_element(l, theta))?;

    // Duration from the event budget via the weak-coupling mean flip rate
    // γL/2, plus the discarded relaxation span.
    let t_end = a.burn_in + 2.0 * events / (a.gamma * l as f64);
    let initial = vec![-1i8; l];
    let traj = simulate_gillespie(&model, a.gamma, t_end, &initial, sim_seed)?;

    let moments = if needs.moments {
        let dc0 = if needs.dc0 {
            match a.dc0 {
                Dc0Arg::EventLimit => Dc0Method::EventLimit,
                Dc0Arg::LinearFit => Dc0Method::LinearFit {
                    taus: default_fit_lags(a.gamma),
                },
            }
        } else {
            Dc0Method::Skip
        };
        Some(trajectory_moments(&traj, &[], a.burn_in, dc0)?)
    } else {
        None
    };
    let table = if needs.table {
        let ens = config_ensemble(&traj, a.burn_in)?;
        let rows: Vec<Vec<i8>> = ens
            .configs
            .iter()
            .map(|&mask| spins::config_from_mask(mask, ens.l))
            .collect();
        Some(SampleTable::from_rows(&rows)?.with_weights(ens.weights)?)
    } else {
        None
    };
    let flips = if needs.flips {
        Some(flip_decompose(
            &traj,
            0.1 / a.gamma,
            a.burn_in,
            2,
            ConservationPolicy::BestEffort,
        )?)
    } else {
        None
    };
    let ave = if needs.ave {
        Some(AveInputs::from_trajectory(&traj, a.burn_in)?)
    } else {
        None
    };

    let input = InferenceInput {
        table: table.as_ref(),
        moments: moments.as_ref(),
        flips: flips.as_ref(),
        ave: ave.as_ref(),
        gamma: Some(a.gamma),
    };
    let outcome = a
        .methods
        .iter()
        .map(|name| {
            let err_by = |e: Error| e.to_string();
            let res = build_method(name, &serde_json::Map::new())
                .and_then(|m| m.infer(&input))
                .and_then(|r| mse(&r.j_star, model.j()))
                .map_err(err_by);
            (name.clone(), res)
        })
        .collect();
    Ok(outcome)
}

pub fn run(a: &SweepArgs) -> Result<()> {
    if a.replicas == 0 {
        return Err(Error::Parameter("need at least one replica".into()));
    }
    if a.values.is_empty() {
        return Err(Error::Parameter("need at least one axis value".into()));
    }
    if a.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("axis values must be finite".into()));
    }
    if a.methods.is_empty() {
        return Err(Error::Parameter("need at least one method".into()));
    }
    let needs = union_needs(&a.methods)?; // also validates the names
    for v in &a.values {
        cell_config(a, *v)?; // fail fast on bad axis values
    }

    let jobs: Vec<(usize, usize)> = (0..a.values.len())
        .flat_map(|c| (0..a.replicas).map(move |r| (c, r)))
        .collect();
    let outcomes: Vec<Result<ReplicaOutcome>> = jobs
        .par_iter()
        .map(|&(c, r)| run_replica(a, needs, c, r))
        .collect();

    // Aggregate per (cell, method), in deterministic order.
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(&a.out)?);
    writeln!(out, "axis,value,method,replicas_ok,mse_mean,mse_stderr")?;
    let axis_name = match a.axis {
        SweepAxisArg::DataLength => "data-length",
        SweepAxisArg::Size => "size",
        SweepAxisArg::Field => "field",
        SweepAxisArg::G => "g",
    };
    for (c, value) in a.values.iter().enumerate() {
        for (mi, name) in a.methods.iter().enumerate() {
            let mut oks: Vec<f64> = Vec::new();
            for r in 0..a.replicas {
                match &outcomes[c * a.replicas + r] {
                    Ok(rep) => match &rep[mi].1 {
                        Ok(v) => oks.push(*v),
                        Err(msg) => log::warn!(
                            "cell {axis_name}={value} method {name} replica {r}: {msg}"
                        ),
                    },
                    Err(e) => log::warn!(
                        "cell {axis_name}={value} replica {r} failed outright: {e}"
                    ),
                }
            }
            let n = oks.len();
            let (mean, stderr) = if n == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let mean = oks.iter().sum::<f64>() / n as f64;
                let stderr = if n < 2 {
                    0.0
                } else {
                    let var = oks.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                        / (n as f64 - 1.0);
                    (var / n as f64).sqrt()
                };
                (mean, stderr)
            };
            writeln!(
                out,
                "{axis_name},{value:.16e},{name},{n},{mean:.16e},{stderr:.16e}"
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

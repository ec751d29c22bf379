//! Moment estimation from snapshot tables and from event trajectories.
//!
//! Trajectory statistics are computed *exactly* on the piecewise-constant
//! path (time integrals between events), never by re-sampling the path on a
//! grid. Equal-time and time-lagged correlations of all `L^2` pairs are
//! accumulated in `O(events · L)` with a running-integral trick, and the
//! `τ → 0+` derivative of the correlation function has an exact event-based
//! estimator ([`Dc0Method::EventLimit`]) that adds no discretization bias.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{SpinTrajectory, MAX_GAMMA_DT};
use crate::error::{Error, Result};
use crate::spins;
use crate::table::SampleTable;

/// First- and second-order statistics of one data set.
#[derive(Debug, Clone)]
pub struct MomentSet {
    pub l: usize,
    /// Means `⟨s_i⟩` (after pseudocount, if any).
    pub m: DVector<f64>,
    /// Connected equal-time correlations (diagonal `1 - m_i^2`).
    pub c0: DMatrix<f64>,
    /// Raw second moments `⟨s_i s_j⟩` (diagonal 1).
    pub raw0: DMatrix<f64>,
    /// Connected lagged correlations `C_ij(τ) = ⟨s_i(t+τ) s_j(t)⟩ - m_i m_j`,
    /// always containing the entry for `τ = 0`.
    pub c_lags: Vec<(f64, DMatrix<f64>)>,
    /// Estimate of `dC_ij(τ)/dτ` at `τ = 0+`, if one was requested.
    pub dc0: Option<DMatrix<f64>>,
    pub meta: MomentMeta,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MomentMeta {
    pub source: String,
    /// Total sample weight (rows for tables, window length for trajectories).
    pub weight: f64,
    pub n_events: Option<u64>,
    pub gamma: Option<f64>,
    pub pseudocount: f64,
    pub dc0_method: Option<String>,
}

impl MomentSet {
    pub fn c_at_lag(&self, tau: f64) -> Option<&DMatrix<f64>> {
        self.c_lags
            .iter()
            .find(|(t, _)| (t - tau).abs() <= 1e-12 * tau.abs().max(1.0))
            .map(|(_, c)| c)
    }

    /// Assemble a moment set from precomputed pieces (e.g. exact enumeration
    /// results). The raw second moments are reconstructed as
    /// `C(0) + m mᵀ` with unit diagonal and the zero-lag entry is `c0`
    /// itself; metadata is left generic for the caller to refine.
    pub fn from_parts(
        l: usize,
        m: DVector<f64>,
        c0: DMatrix<f64>,
        dc0: Option<DMatrix<f64>>,
    ) -> Self {
        let mut raw0 = &c0 + &m * m.transpose();
        for i in 0..l {
            raw0[(i, i)] = 1.0;
        }
        MomentSet {
            l,
            m,
            c_lags: vec![(0.0, c0.clone())],
            c0,
            raw0,
            dc0,
            meta: MomentMeta {
                source: "assembled".into(),
                ..MomentMeta::default()
            },
        }
    }
}

/// How to estimate the correlation-function derivative at zero lag.
#[derive(Debug, Clone, PartialEq)]
pub enum Dc0Method {
    /// Exact pathwise limit `(Ĉ(τ) - Ĉ(0))/τ` as `τ → 0+`: a sum over flip
    /// events. Unbiased for event data; the default for simulation output.
    EventLimit,
    /// Finite difference `(C(τ) - C(0))/τ` at one lag.
    TwoPoint { tau: f64 },
    /// Least-squares slope of `C(τ)` over the given lags.
    LinearFit { taus: Vec<f64> },
    /// Do not estimate a derivative (equilibrium pipelines).
    Skip,
}

/// The four-lag protocol used for grid-like data: equally spaced lags
/// spanning `[0, 0.6/γ]`.
pub fn default_fit_lags(gamma: f64) -> Vec<f64> {
    (0..4).map(|k| 0.2 * k as f64 / gamma).collect()
}

// ---------------------------------------------------------------------------
// Snapshot tables
// ---------------------------------------------------------------------------

/// Weighted sample means and correlations with a pseudocount.
///
/// The pseudocount mixes the empirical moments with those of the uniform
/// distribution: `m → (1-λ) m`, off-diagonal `⟨s_i s_j⟩ → (1-λ) ⟨s_i s_j⟩`;
/// the diagonal stays 1 and the connected correlations are recomputed from
/// the regularized moments, so `λ = 1` yields exactly the unit matrix.
pub fn sample_moments(table: &SampleTable, pseudocount: f64) -> Result<MomentSet> {
    if !(0.0..=1.0).contains(&pseudocount) {
        return Err(Error::Parameter(format!(
            "pseudocount must lie in [0, 1], got {pseudocount}"
        )));
    }
    let l = table.l();
    let total = table.total_weight();
    let mut m = DVector::zeros(l);
    let mut raw = DMatrix::zeros(l, l);
    for (r, row) in table.rows_iter().enumerate() {
        let w = table.weight(r) / total;
        for i in 0..l {
            let si = f64::from(row[i]);
            m[i] += w * si;
            for jdx in (i + 1)..l {
                raw[(i, jdx)] += w * si * f64::from(row[jdx]);
            }
        }
    }
    let keep = 1.0 - pseudocount;
    m *= keep;
    for i in 0..l {
        raw[(i, i)] = 1.0;
        for jdx in (i + 1)..l {
            raw[(i, jdx)] *= keep;
            raw[(jdx, i)] = raw[(i, jdx)];
        }
    }
    let mut c0: DMatrix<f64> = &raw - &m * m.transpose();
    for i in 0..l {
        c0[(i, i)] = 1.0 - m[i] * m[i];
    }
    Ok(MomentSet {
        l,
        m,
        c0: c0.clone(),
        raw0: raw,
        c_lags: vec![(0.0, c0)],
        dc0: None,
        meta: MomentMeta {
            source: "table".into(),
            weight: total,
            n_events: None,
            gamma: None,
            pseudocount,
            dc0_method: None,
        },
    })
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

fn check_window(traj: &SpinTrajectory, burn_in: f64) -> Result<()> {
    if !(burn_in >= 0.0 && burn_in < traj.t_end()) {
        return Err(Error::Parameter(format!(
            "burn_in {burn_in} must lie in [0, t_end = {})",
            traj.t_end()
        )));
    }
    Ok(())
}

/// Raw lagged product moments `P_ij(τ) = ⟨s_i(t+τ) s_j(t)⟩`, time-averaged
/// over `t ∈ [t0, t_end - τ]`.
///
/// Runs in `O(events in window · L)` using running integrals
/// `V_i(t) = ∫ s_i(t'+τ) dt'`: over each constant piece of `s_j`, the pair
/// integral is `s_j · ΔV_i`.
fn raw_lagged_products(traj: &SpinTrajectory, t0: f64, tau: f64) -> Result<DMatrix<f64>> {
    let l = traj.l();
    let t1 = traj.t_end() - tau;
    if !(t1 > t0) {
        return Err(Error::Parameter(format!(
            "lag {tau} leaves no averaging window (t_end = {}, burn_in = {t0})",
            traj.t_end()
        )));
    }
    let times = traj.times();
    let idx = traj.spin_indices();
    // Configurations at the two window openings.
    let mut u: Vec<f64> = traj.config_at(t0).iter().map(|&v| f64::from(v)).collect();
    let mut v: Vec<f64> = traj
        .config_at(t0 + tau)
        .iter()
        .map(|&v| f64::from(v))
        .collect();
    let mut vacc = vec![0.0f64; l];
    let mut t_last_v = vec![t0; l];
    // vstart[(i, j)]: value of V_i at the start of the current constant piece
    // of u_j.
    let mut vstart = DMatrix::<f64>::zeros(l, l);
    let mut p = DMatrix::<f64>::zeros(l, l);
    let mut vnow = vec![0.0f64; l];

    // Pointers into the event list for the v-stream (times - tau) and the
    // u-stream (times).
    let first_after = |t: f64| times.partition_point(|&x| x <= t);
    let mut iv = first_after(t0 + tau);
    let mut iu = first_after(t0);

    loop {
        let tv = if iv < times.len() {
            times[iv] - tau
        } else {
            f64::INFINITY
        };
        let tu = if iu < times.len() {
            times[iu]
        } else {
            f64::INFINITY
        };
        if tv > t1 && tu > t1 {
            break;
        }
        if tv <= tu {
            // Spin flip in the shifted series.
            let i = idx[iv] as usize;
            vacc[i] += v[i] * (tv - t_last_v[i]);
            t_last_v[i] = tv;
            v[i] = -v[i];
            iv += 1;
        } else {
            // Spin flip in the base series closes a constant piece of u_j.
            let jf = idx[iu] as usize;
            for i in 0..l {
                vnow[i] = vacc[i] + v[i] * (tu - t_last_v[i]);
            }
            let uj = u[jf];
            for i in 0..l {
                p[(i, jf)] += uj * (vnow[i] - vstart[(i, jf)]);
                vstart[(i, jf)] = vnow[i];
            }
            u[jf] = -u[jf];
            iu += 1;
        }
    }
    for i in 0..l {
        vnow[i] = vacc[i] + v[i] * (t1 - t_last_v[i]);
    }
    for jf in 0..l {
        for i in 0..l {
            p[(i, jf)] += u[jf] * (vnow[i] - vstart[(i, jf)]);
        }
    }
    p /= t1 - t0;
    Ok(p)
}

/// Exact `τ → 0+` derivative of the raw lagged products: each flip of spin
/// `i` at time `t` contributes `-2 s_i(t^-) s_j(t^-)`.
fn event_limit_derivative(traj: &SpinTrajectory, t0: f64) -> DMatrix<f64> {
    let l = traj.l();
    let times = traj.times();
    let idx = traj.spin_indices();
    let mut b = DMatrix::<f64>::zeros(l, l);
    let mut s: Vec<f64> = traj.config_at(t0).iter().map(|&v| f64::from(v)).collect();
    let start = times.partition_point(|&x| x <= t0);
    for k in start..times.len() {
        let i = idx[k] as usize;
        let si = s[i];
        for jdx in 0..l {
            b[(i, jdx)] += -2.0 * si * s[jdx];
        }
        s[i] = -si;
    }
    b / (traj.t_end() - t0)
}

/// Time-averaged means and correlations of an event trajectory.
///
/// `lags` selects the extra lags at which connected correlations are
/// computed (`τ = 0` is always included). `dc0` picks the derivative
/// estimator; lags required by `TwoPoint`/`LinearFit` are added
/// automatically.
pub fn trajectory_moments(
    traj: &SpinTrajectory,
    lags: &[f64],
    burn_in: f64,
    dc0: Dc0Method,
) -> Result<MomentSet> {
    check_window(traj, burn_in)?;
    let l = traj.l();
    let t_end = traj.t_end();
    let window = t_end - burn_in;

    let mut wanted: Vec<f64> = vec![0.0];
    let push_lag = |w: &mut Vec<f64>, tau: f64| {
        if !w.iter().any(|&x| (x - tau).abs() <= 1e-12 * tau.max(1.0)) {
            w.push(tau);
        }
    };
    for &tau in lags {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::Parameter(format!("invalid lag {tau}")));
        }
        push_lag(&mut wanted, tau);
    }
    match &dc0 {
        Dc0Method::TwoPoint { tau } => {
            if !(*tau > 0.0) {
                return Err(Error::Parameter(
                    "two-point derivative needs a positive lag".into(),
                ));
            }
            push_lag(&mut wanted, *tau);
        }
        Dc0Method::LinearFit { taus } => {
            if taus.len() < 2 {
                return Err(Error::Parameter(
                    "linear-fit derivative needs at least two lags".into(),
                ));
            }
            for &tau in taus {
                push_lag(&mut wanted, tau);
            }
        }
        _ => {}
    }
    wanted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &tau in &wanted {
        if tau >= window {
            return Err(Error::Parameter(format!(
                "lag {tau} is not shorter than the averaging window {window}"
            )));
        }
    }

    // Means over the full window.
    let mut m = DVector::<f64>::zeros(l);
    let n_events_window;
    {
        let times = traj.times();
        let start = times.partition_point(|&x| x <= burn_in);
        n_events_window = (times.len() - start) as u64;
        traj.for_each_interval(burn_in, |a, b, s| {
            let w = b - a;
            for i in 0..l {
                m[i] += w * f64::from(s[i]);
            }
        });
        m /= window;
    }

    let mmt = &m * m.transpose();
    let mut c_lags = Vec::with_capacity(wanted.len());
    let mut raw0 = DMatrix::<f64>::zeros(l, l);
    for &tau in &wanted {
        let mut p = raw_lagged_products(traj, burn_in, tau)?;
        if tau == 0.0 {
            // The equal-time product matrix is symmetric by definition;
            // symmetrize to remove the accumulation-order round-off.
            p = (&p + p.transpose()) * 0.5;
            for i in 0..l {
                p[(i, i)] = 1.0;
            }
            raw0 = p.clone();
        }
        let mut c = p - &mmt;
        if tau == 0.0 {
            for i in 0..l {
                c[(i, i)] = 1.0 - m[i] * m[i];
            }
        }
        c_lags.push((tau, c));
    }
    let c0 = c_lags[0].1.clone();

    let dc0_mat = match &dc0 {
        Dc0Method::Skip => None,
        Dc0Method::EventLimit => Some(event_limit_derivative(traj, burn_in)),
        Dc0Method::TwoPoint { tau } => Some(estimate_dc0(
            &c_lags,
            &Dc0Method::TwoPoint { tau: *tau },
        )?),
        Dc0Method::LinearFit { taus } => Some(estimate_dc0(
            &c_lags,
            &Dc0Method::LinearFit { taus: taus.clone() },
        )?),
    };
    let method_name = match &dc0 {
        Dc0Method::Skip => None,
        Dc0Method::EventLimit => Some("event-limit".to_string()),
        Dc0Method::TwoPoint { .. } => Some("two-point".to_string()),
        Dc0Method::LinearFit { .. } => Some("linear-fit".to_string()),
    };

    Ok(MomentSet {
        l,
        m,
        c0,
        raw0,
        c_lags,
        dc0: dc0_mat,
        meta: MomentMeta {
            source: "trajectory".into(),
            weight: window,
            n_events: Some(n_events_window),
            gamma: Some(traj.gamma()),
            pseudocount: 0.0,
            dc0_method: method_name,
        },
    })
}

/// Estimate `dC/dτ` at `τ = 0` from an already-computed set of lagged
/// correlation matrices.
pub fn estimate_dc0(
    c_lags: &[(f64, DMatrix<f64>)],
    method: &Dc0Method,
) -> Result<DMatrix<f64>> {
    let find = |tau: f64| -> Result<&DMatrix<f64>> {
        c_lags
            .iter()
            .find(|(t, _)| (t - tau).abs() <= 1e-12 * tau.abs().max(1.0))
            .map(|(_, c)| c)
            .ok_or_else(|| {
                Error::Parameter(format!("lag {tau} not present in the computed set"))
            })
    };
    match method {
        Dc0Method::TwoPoint { tau } => {
            if !(*tau > 0.0) {
                return Err(Error::Parameter(
                    "two-point derivative needs a positive lag".into(),
                ));
            }
            let c0 = find(0.0)?;
            let ct = find(*tau)?;
            Ok((ct - c0) / *tau)
        }
        Dc0Method::LinearFit { taus } => {
            if taus.len() < 2 {
                return Err(Error::Parameter(
                    "linear-fit derivative needs at least two lags".into(),
                ));
            }
            let mats: Vec<&DMatrix<f64>> =
                taus.iter().map(|&t| find(t)).collect::<Result<_>>()?;
            let n = taus.len() as f64;
            let tbar: f64 = taus.iter().sum::<f64>() / n;
            let denom: f64 = taus.iter().map(|t| (t - tbar) * (t - tbar)).sum();
            if denom <= 0.0 {
                return Err(Error::Parameter(
                    "linear-fit lags must not be all identical".into(),
                ));
            }
            let (rows, cols) = (mats[0].nrows(), mats[0].ncols());
            let mut slope = DMatrix::<f64>::zeros(rows, cols);
            for (k, &tau) in taus.iter().enumerate() {
                slope += mats[k] * (tau - tbar);
            }
            Ok(slope / denom)
        }
        other => Err(Error::Parameter(format!(
            "estimate_dc0 supports two-point and linear-fit, got {other:?}"
        ))),
    }
}

/// Per-batch means and raw pair moments, for standard-error estimation by
/// batch means.
pub fn batched_trajectory_moments(
    traj: &SpinTrajectory,
    burn_in: f64,
    n_batches: usize,
) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
    check_window(traj, burn_in)?;
    if n_batches < 2 {
        return Err(Error::Parameter("need at least two batches".into()));
    }
    let l = traj.l();
    let window = traj.t_end() - burn_in;
    let batch_len = window / n_batches as f64;
    let mut out =
        vec![(DVector::<f64>::zeros(l), DMatrix::<f64>::zeros(l, l)); n_batches];
    traj.for_each_interval(burn_in, |a, b, s| {
        // A constant piece may straddle batch boundaries; split it.
        let mut lo = a;
        while lo < b - 1e-15 {
            let bi = (((lo - burn_in) / batch_len) as usize).min(n_batches - 1);
            let hi = b.min(burn_in + (bi as f64 + 1.0) * batch_len);
            let w = hi - lo;
            let (m, raw) = &mut out[bi];
            for i in 0..l {
                let si = f64::from(s[i]);
                m[i] += w * si;
                for jdx in (i + 1)..l {
                    raw[(i, jdx)] += w * si * f64::from(s[jdx]);
                }
            }
            lo = hi;
        }
    });
    for (m, raw) in out.iter_mut() {
        *m /= batch_len;
        *raw /= batch_len;
        for i in 0..l {
            raw[(i, i)] = 1.0;
            for jdx in 0..i {
                raw[(i, jdx)] = raw[(jdx, i)];
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Grid decomposition and config ensembles
// ---------------------------------------------------------------------------

/// What to do when a grid cell hides events (an even number of flips of one
/// spin inside one cell, invisible to the discretized view).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConservationPolicy {
    /// Refine the grid (halve `δt`) until every event is visible; error out
    /// if the refinement budget is exhausted.
    Require,
    /// Refine within the budget, then accept the finest grid and report the
    /// number of hidden events.
    BestEffort,
}

/// One observed transition on the grid: spin `spin` in the cell whose
/// starting configuration is `configs[config]` ends the cell flipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlipRecord {
    pub config: u32,
    pub spin: u16,
    /// Spin value after the step (`-` the value in the starting config).
    pub after: i8,
}

/// Discretized view of a trajectory on a regular grid of step `dt`.
///
/// Cell-start configurations are deduplicated: `configs[k]` is a bitmask,
/// `config_counts[k]` the number of cells starting in it. Together with the
/// explicit [`FlipRecord`] list this is an exact, compact encoding of all
/// `(s(t), s(t+δt))` pairs: every `(spin, cell)` not listed in `flips` kept
/// its value across the cell.
#[derive(Debug, Clone)]
pub struct FlipDecomposition {
    pub l: usize,
    pub gamma: f64,
    /// Effective grid step after any refinement.
    pub dt: f64,
    pub n_cells: u64,
    pub configs: Vec<u128>,
    pub config_counts: Vec<u64>,
    pub flips: Vec<FlipRecord>,
    /// Events that are invisible on this grid (even flip counts per cell).
    pub hidden_events: u64,
    /// True when every raw event appears as a flip record.
    pub conserved: bool,
    /// Number of refinement steps actually taken.
    pub refinements: u32,
}

impl FlipDecomposition {
    /// Total number of `(spin, cell)` pairs that kept their value.
    pub fn no_flip_count(&self) -> u64 {
        self.n_cells * self.l as u64 - self.flips.len() as u64
    }

    pub fn config_vec(&self, id: u32) -> Vec<i8> {
        spins::config_from_mask(self.configs[id as usize], self.l)
    }
}

/// Discretize a trajectory onto a regular grid for transition-based learning.
///
/// The grid covers `[burn_in, burn_in + n_cells·δt]` with
/// `n_cells = floor((t_end - burn_in)/δt)`; the ragged tail is dropped.
pub fn flip_decompose(
    traj: &SpinTrajectory,
    dt: f64,
    burn_in: f64,
    max_refine: u32,
    policy: ConservationPolicy,
) -> Result<FlipDecomposition> {
    check_window(traj, burn_in)?;
    if traj.l() > 128 {
        return Err(Error::Capacity(
            "grid decomposition supports at most 128 spins".into(),
        ));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
    }
    if traj.gamma() * dt > MAX_GAMMA_DT {
        return Err(Error::Parameter(format!(
            "gamma*dt = {:.4} exceeds {MAX_GAMMA_DT}",
            traj.gamma() * dt
        )));
    }
    let mut step = dt;
    let mut refinements = 0u32;
    loop {
        let out = flip_decompose_once(traj, step, burn_in, refinements)?;
        if out.conserved || refinements >= max_refine {
            if !out.conserved && policy == ConservationPolicy::Require {
                return Err(Error::Parameter(format!(
                    "dt = {step:.3e} still hides {} events after {refinements} refinements",
                    out.hidden_events
                )));
            }
            return Ok(out);
        }
        step *= 0.5;
        refinements += 1;
    }
}

fn flip_decompose_once(
    traj: &SpinTrajectory,
    dt: f64,
    burn_in: f64,
    refinements: u32,
) -> Result<FlipDecomposition> {
    let l = traj.l();
    let n_cells = ((traj.t_end() - burn_in) / dt).floor() as u64;
    if n_cells == 0 {
        return Err(Error::Parameter(
            "trajectory shorter than one grid cell".into(),
        ));
    }
    let times = traj.times();
    let idx = traj.spin_indices();
    let mut config = spins::mask_from_config(&traj.config_at(burn_in));
    let mut ids: HashMap<u128, u32> = HashMap::new();
    let mut configs: Vec<u128> = Vec::new();
    let mut config_counts: Vec<u64> = Vec::new();
    let mut flips: Vec<FlipRecord> = Vec::new();
    let mut hidden_events = 0u64;
    let mut ev = times.partition_point(|&x| x <= burn_in);
    let mut flip_counts: Vec<u32> = vec![0; l];
    let mut touched: Vec<usize> = Vec::with_capacity(8);
    for cell in 0..n_cells {
        let cell_end = burn_in + (cell as f64 + 1.0) * dt;
        let start_config = config;
        let id = *ids.entry(start_config).or_insert_with(|| {
            configs.push(start_config);
            config_counts.push(0);
            (configs.len() - 1) as u32
        });
        config_counts[id as usize] += 1;
        touched.clear();
        while ev < times.len() && times[ev] <= cell_end {
            let i = idx[ev] as usize;
            if flip_counts[i] == 0 {
                touched.push(i);
            }
            flip_counts[i] += 1;
            ev += 1;
        }
        for &i in &touched {
            let count = flip_counts[i];
            flip_counts[i] = 0;
            if count % 2 == 1 {
                let before = spins::spin_from_mask(start_config, i);
                flips.push(FlipRecord {
                    config: id,
                    spin: i as u16,
                    after: -before,
                });
                config ^= 1 << i;
                if count > 1 {
                    hidden_events += (count - 1) as u64;
                }
            } else {
                hidden_events += count as u64;
            }
        }
        // `touched` must be processed in ascending spin order for the config
        // update to be order-independent; XOR commutes, so no sorting needed.
    }
    let conserved = hidden_events == 0;
    Ok(FlipDecomposition {
        l,
        gamma: traj.gamma(),
        dt,
        n_cells,
        configs,
        config_counts,
        flips,
        hidden_events,
        conserved,
        refinements,
    })
}

/// Duration-weighted ensemble of visited configurations: each distinct
/// configuration with the total time the path spent in it.
#[derive(Debug, Clone)]
pub struct ConfigEnsemble {
    pub l: usize,
    pub configs: Vec<u128>,
    /// Total occupation time of each configuration.
    pub weights: Vec<f64>,
    pub t_total: f64,
}

pub fn config_ensemble(traj: &SpinTrajectory, burn_in: f64) -> Result<ConfigEnsemble> {
    check_window(traj, burn_in)?;
    if traj.l() > 128 {
        return Err(Error::Capacity(
            "config ensembles support at most 128 spins".into(),
        ));
    }
    let mut ids: HashMap<u128, u32> = HashMap::new();
    let mut configs: Vec<u128> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut t_total = 0.0;
    traj.for_each_interval(burn_in, |a, b, s| {
        let mask = spins::mask_from_config(s);
        let id = *ids.entry(mask).or_insert_with(|| {
            configs.push(mask);
            weights.push(0.0);
            (configs.len() - 1) as u32
        });
        weights[id as usize] += b - a;
        t_total += b - a;
    });
    Ok(ConfigEnsemble {
        l: traj.l(),
        configs,
        weights,
        t_total,
    })
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MomentsJson {
    #[serde(rename = "L")]
    l: usize,
    m: Vec<f64>,
    c0: Vec<Vec<f64>>,
    raw0: Vec<Vec<f64>>,
    c_lags: Vec<LagJson>,
    dc0: Option<Vec<Vec<f64>>>,
    meta: MomentMeta,
}

#[derive(Serialize, Deserialize)]
struct LagJson {
    tau: f64,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
}

fn mat_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_to_mat(rows: &[Vec<f64>], l: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != l || rows.iter().any(|r| r.len() != l) {
        return Err(Error::Format(format!("{what} is not {l}x{l}")));
    }
    Ok(DMatrix::from_fn(l, l, |i, j| rows[i][j]))
}

impl MomentSet {
    pub fn to_json_string(&self) -> Result<String> {
        let doc = MomentsJson {
            l: self.l,
            m: self.m.iter().cloned().collect(),
            c0: mat_to_rows(&self.c0),
            raw0: mat_to_rows(&self.raw0),
            c_lags: self
                .c_lags
                .iter()
                .map(|(tau, c)| LagJson {
                    tau: *tau,
                    c: mat_to_rows(c),
                })
                .collect(),
            dc0: self.dc0.as_ref().map(mat_to_rows),
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: MomentsJson = serde_json::from_str(text)?;
        let l = doc.l;
        if doc.m.len() != l {
            return Err(Error::Format("m has the wrong length".into()));
        }
        Ok(MomentSet {
            l,
            m: DVector::from_vec(doc.m),
            c0: rows_to_mat(&doc.c0, l, "c0")?,
            raw0: rows_to_mat(&doc.raw0, l, "raw0")?,
            c_lags: doc
                .c_lags
                .iter()
                .map(|lag| Ok((lag.tau, rows_to_mat(&lag.c, l, "C(tau)")?)))
                .collect::<Result<_>>()?,
            dc0: doc
                .dc0
                .as_ref()
                .map(|rows| rows_to_mat(rows, l, "dc0"))
                .transpose()?,
            meta: doc.meta,
        })
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()? + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// CSV export of the lagged correlations: one row per (τ, i, j).
    pub fn write_c_lags_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "tau,i,j,c")?;
        for (tau, c) in &self.c_lags {
            for i in 0..self.l {
                for j in 0..self.l {
                    writeln!(out, "{:.16e},{},{},{:.16e}", tau, i, j, c[(i, j)])?;
                }
            }
        }
        Ok(())
    }
}

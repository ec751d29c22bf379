//! Asynchronous Glauber dynamics: exact event-driven simulation, two
//! discrete-time approximations, and the exact master equation for small
//! systems.
//!
//! A spin `i` in configuration `s` flips with rate
//!
//! ```text
//! ω_i(s) = γ / (1 + exp(2 s_i H_i(s))) = (γ/2) (1 - s_i tanh H_i(s)),
//! H_i(s) = θ_i + Σ_j J_ij s_j .
//! ```
//!
//! For symmetric `J` this dynamics is reversible with respect to the Gibbs
//! measure of [`crate::model::CouplingModel`]; for asymmetric `J` it defines
//! a genuinely non-equilibrium steady state.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CouplingModel;
use crate::spins;
use crate::table::SampleTable;

/// Hard upper bound on `γ·δt` for the discrete-time schemes.
pub const MAX_GAMMA_DT: f64 = 0.1;
/// Above this value a warning is logged: the discretization is legal but
/// visibly biased.
pub const WARN_GAMMA_DT: f64 = 0.01;
/// Largest system size for which the `2^L`-dimensional master equation is
/// integrated.
pub const L_MASTER_MAX: usize = 12;

/// Flip rate `ω_i(s)` of spin `i` in configuration `s`.
pub fn rate(model: &CouplingModel, s: &[i8], i: usize, gamma: f64) -> f64 {
    let h = model.effective_field(s, i);
    0.5 * gamma * (1.0 - f64::from(s[i]) * h.tanh())
}

/// All `L` flip rates at once.
pub fn flip_rates(model: &CouplingModel, s: &[i8], gamma: f64) -> DVector<f64> {
    DVector::from_fn(model.l(), |i, _| rate(model, s, i, gamma))
}

/// Which update scheme produced a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "scheme")]
pub enum Scheme {
    /// Exact continuous-time simulation.
    Gillespie,
    /// Every spin flips independently with probability `ω_i δt` per step.
    PerSpinBernoulli { dt: f64 },
    /// Every spin is independently resampled from its heat-bath conditional
    /// with probability `γ δt` per step.
    RandomPick { dt: f64 },
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Gillespie => "gillespie",
            Scheme::PerSpinBernoulli { .. } => "per-spin-bernoulli",
            Scheme::RandomPick { .. } => "random-pick",
        }
    }
}

/// An event-list view of one run: the initial configuration plus the ordered
/// times and spin indices of all flips in `(0, t_end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinTrajectory {
    l: usize,
    gamma: f64,
    t_end: f64,
    scheme: Scheme,
    seed: u64,
    initial: Vec<i8>,
    times: Vec<f64>,
    spin_idx: Vec<u32>,
}

impl SpinTrajectory {
    pub fn l(&self) -> usize {
        self.l
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn initial(&self) -> &[i8] {
        &self.initial
    }

    pub fn n_events(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn spin_indices(&self) -> &[u32] {
        &self.spin_idx
    }

    /// Configuration after all events with time `<= t`.
    pub fn config_at(&self, t: f64) -> Vec<i8> {
        let mut s = self.initial.clone();
        for (ev_t, &i) in self.times.iter().zip(&self.spin_idx) {
            if *ev_t > t {
                break;
            }
            s[i as usize] = -s[i as usize];
        }
        s
    }

    pub fn final_config(&self) -> Vec<i8> {
        self.config_at(self.t_end)
    }

    /// Visit every constant piece of the path intersected with
    /// `[from, t_end]`, as `(start, end, configuration)`.
    pub fn for_each_interval<F: FnMut(f64, f64, &[i8])>(&self, from: f64, mut f: F) {
        let mut s = self.initial.clone();
        let mut cur = from.max(0.0);
        let mut idx = 0;
        while idx < self.times.len() && self.times[idx] <= cur {
            let i = self.spin_idx[idx] as usize;
            s[i] = -s[i];
            idx += 1;
        }
        while idx < self.times.len() {
            let t = self.times[idx];
            if t > self.t_end {
                break;
            }
            if t > cur {
                f(cur, t, &s);
                cur = t;
            }
            let i = self.spin_idx[idx] as usize;
            s[i] = -s[i];
            idx += 1;
        }
        if self.t_end > cur {
            f(cur, self.t_end, &s);
        }
    }

    /// Check the event-list invariants (used after loading from disk).
    pub fn validate(&self) -> Result<()> {
        spins::validate_config(&self.initial)?;
        if self.initial.len() != self.l {
            return Err(Error::Format("initial configuration length mismatch".into()));
        }
        let mut prev = 0.0;
        for (k, (&t, &i)) in self.times.iter().zip(&self.spin_idx).enumerate() {
            if !(t.is_finite() && t > prev && t <= self.t_end) {
                return Err(Error::Format(format!(
                    "event {k} at t={t} violates strict ordering in (0, t_end]"
                )));
            }
            if i as usize >= self.l {
                return Err(Error::Format(format!(
                    "event {k} flips spin {i} but L={}",
                    self.l
                )));
            }
            prev = t;
        }
        Ok(())
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        let mut header = serde_json::to_value(self.scheme)?;
        header["L"] = self.l.into();
        header["gamma"] = serde_json::json!(self.gamma);
        header["t_end"] = serde_json::json!(self.t_end);
        header["seed"] = self.seed.into();
        header["initial"] = spins::config_to_string(&self.initial).into();
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        writeln!(out, "time,spin_index")?;
        for (t, i) in self.times.iter().zip(&self.spin_idx) {
            writeln!(out, "{:.16e},{}", t, i)?;
        }
        Ok(())
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Format("empty trajectory file".into()))?;
        let header: serde_json::Value = serde_json::from_str(header_line)?;
        let scheme: Scheme = serde_json::from_value(header.clone())?;
        let l = header["L"]
            .as_u64()
            .ok_or_else(|| Error::Format("trajectory header missing L".into()))?
            as usize;
        let gamma = header["gamma"]
            .as_f64()
            .ok_or_else(|| Error::Format("trajectory header missing gamma".into()))?;
        let t_end = header["t_end"]
            .as_f64()
            .ok_or_else(|| Error::Format("trajectory header missing t_end".into()))?;
        let seed = header["seed"].as_u64().unwrap_or(0);
        let initial = spins::config_from_string(
            header["initial"]
                .as_str()
                .ok_or_else(|| Error::Format("trajectory header missing initial".into()))?,
        )?;
        match lines.next() {
            Some("time,spin_index") => {}
            other => {
                return Err(Error::Format(format!(
                    "expected CSV header 'time,spin_index', found {other:?}"
                )))
            }
        }
        let mut times = Vec::new();
        let mut spin_idx = Vec::new();
        for (k, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (t_str, i_str) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("event line {k}: expected 'time,spin'")))?;
            times.push(
                t_str
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("event line {k}: bad time: {e}")))?,
            );
            spin_idx.push(
                i_str
                    .trim()
                    .parse::<u32>()
                    .map_err(|e| Error::Format(format!("event line {k}: bad spin: {e}")))?,
            );
        }
        let traj = Self {
            l,
            gamma,
            t_end,
            scheme,
            seed,
            initial,
            times,
            spin_idx,
        };
        traj.validate()?;
        Ok(traj)
    }
}

fn check_sim_inputs(
    model: &CouplingModel,
    gamma: f64,
    t_end: f64,
    initial: &[i8],
) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::Parameter(format!("t_end must be positive, got {t_end}")));
    }
    if initial.len() != model.l() {
        return Err(Error::Parameter(format!(
            "initial configuration has {} spins, model has {}",
            initial.len(),
            model.l()
        )));
    }
    spins::validate_config(initial)
}

/// Exact event-driven simulation (direct Gillespie method).
///
/// Per event, one exponential waiting time and one uniform spin-selection
/// variate are drawn, in that order, from `ChaCha8Rng::seed_from_u64(seed)`.
pub fn simulate_gillespie(
    model: &CouplingModel,
    gamma: f64,
    t_end: f64,
    initial: &[i8],
    seed: u64,
) -> Result<SpinTrajectory> {
    check_sim_inputs(model, gamma, t_end, initial)?;
    let l = model.l();
    let j = model.j().as_slice(); // column-major: column i at [i*l .. (i+1)*l]
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s: Vec<i8> = initial.to_vec();
    let mut h: Vec<f64> = (0..l).map(|i| model.effective_field(&s, i)).collect();
    let mut rates: Vec<f64> = (0..l)
        .map(|i| 0.5 * gamma * (1.0 - f64::from(s[i]) * h[i].tanh()))
        .collect();
    let mut times = Vec::new();
    let mut spin_idx = Vec::new();
    let mut t = 0.0;
    loop {
        let w_tot: f64 = rates.iter().sum();
        if w_tot <= 0.0 {
            // Completely frozen configuration (saturated fields): no more events.
            break;
        }
        let wait: f64 = Exp1.sample(&mut rng);
        t += wait / w_tot;
        if t > t_end {
            break;
        }
        // Select the flipping spin proportionally to its rate.
        let u: f64 = rng.gen::<f64>() * w_tot;
        let mut acc = 0.0;
        let mut flip = l - 1;
        for (i, r) in rates.iter().enumerate() {
            acc += r;
            if u < acc {
                flip = i;
                break;
            }
        }
        let delta = -2.0 * f64::from(s[flip]);
        s[flip] = -s[flip];
        times.push(t);
        spin_idx.push(flip as u32);
        let col = &j[flip * l..(flip + 1) * l];
        for i in 0..l {
            h[i] += delta * col[i];
            rates[i] = 0.5 * gamma * (1.0 - f64::from(s[i]) * h[i].tanh());
        }
        // Refresh the incrementally-updated fields now and then to keep
        // round-off from accumulating over very long runs.
        if times.len() % 4_000_000 == 0 {
            for i in 0..l {
                h[i] = model.effective_field(&s, i);
                rates[i] = 0.5 * gamma * (1.0 - f64::from(s[i]) * h[i].tanh());
            }
        }
    }
    Ok(SpinTrajectory {
        l,
        gamma,
        t_end,
        scheme: Scheme::Gillespie,
        seed,
        initial: initial.to_vec(),
        times,
        spin_idx,
    })
}

/// Which discrete-time update rule to use in [`simulate_discrete`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscreteKind {
    PerSpinBernoulli,
    RandomPick,
}

/// Discrete-time approximate simulation on a grid of step `dt`.
///
/// Both rules make all per-spin decisions from the configuration at the start
/// of the step (parallel semantics) and then apply the accumulated flips.
/// Events within one step are timestamped at `t + dt (i+1)/(L+1)` for spin
/// `i`, which keeps event times strictly increasing without pretending to
/// sub-step resolution. `t_end` is rounded down to a whole number of steps.
pub fn simulate_discrete(
    model: &CouplingModel,
    gamma: f64,
    dt: f64,
    t_end: f64,
    initial: &[i8],
    seed: u64,
    kind: DiscreteKind,
) -> Result<SpinTrajectory> {
    check_sim_inputs(model, gamma, t_end, initial)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
    }
    let gdt = gamma * dt;
    if gdt > MAX_GAMMA_DT {
        return Err(Error::Parameter(format!(
            "gamma*dt = {gdt:.4} exceeds the hard limit {MAX_GAMMA_DT}; use a finer dt"
        )));
    }
    if gdt > WARN_GAMMA_DT {
        log::warn!(
            "gamma*dt = {gdt:.4} > {WARN_GAMMA_DT}: discretization bias may be visible"
        );
    }
    let l = model.l();
    let j = model.j().as_slice();
    let n_steps = (t_end / dt + 1e-9).floor() as u64;
    if n_steps == 0 {
        return Err(Error::Parameter("t_end shorter than one step".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s: Vec<i8> = initial.to_vec();
    let mut h: Vec<f64> = (0..l).map(|i| model.effective_field(&s, i)).collect();
    let mut times = Vec::new();
    let mut spin_idx = Vec::new();
    let mut flips: Vec<usize> = Vec::with_capacity(l);
    for step in 0..n_steps {
        let t0 = step as f64 * dt;
        flips.clear();
        match kind {
            DiscreteKind::PerSpinBernoulli => {
                for i in 0..l {
                    let w = 0.5 * gamma * (1.0 - f64::from(s[i]) * h[i].tanh());
                    if rng.gen::<f64>() < w * dt {
                        flips.push(i);
                    }
                }
            }
            DiscreteKind::RandomPick => {
                for i in 0..l {
                    if rng.gen::<f64>() < gdt {
                        let p_plus = 1.0 / (1.0 + (-2.0 * h[i]).exp());
                        let new: i8 = if rng.gen::<f64>() < p_plus { 1 } else { -1 };
                        if new != s[i] {
                            flips.push(i);
                        }
                    }
                }
            }
        }
        for &i in &flips {
            times.push(t0 + dt * (i as f64 + 1.0) / (l as f64 + 1.0));
            spin_idx.push(i as u32);
            let delta = -2.0 * f64::from(s[i]);
            s[i] = -s[i];
            let col = &j[i * l..(i + 1) * l];
            for r in 0..l {
                h[r] += delta * col[r];
            }
        }
    }
    let scheme = match kind {
        DiscreteKind::PerSpinBernoulli => Scheme::PerSpinBernoulli { dt },
        DiscreteKind::RandomPick => Scheme::RandomPick { dt },
    };
    Ok(SpinTrajectory {
        l,
        gamma,
        t_end: n_steps as f64 * dt,
        scheme,
        seed,
        initial: initial.to_vec(),
        times,
        spin_idx,
    })
}

/// Probability distribution over all `2^L` configurations at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionState {
    pub l: usize,
    pub t: f64,
    /// Probabilities indexed by bitmask (bit `i` set ⇔ `s_i = +1`).
    pub p: Vec<f64>,
}

impl DistributionState {
    pub fn uniform(l: usize) -> Self {
        let n = 1usize << l;
        Self {
            l,
            t: 0.0,
            p: vec![1.0 / n as f64; n],
        }
    }

    pub fn point_mass(s: &[i8]) -> Self {
        let l = s.len();
        let mut p = vec![0.0; 1 << l];
        p[spins::mask_from_config(s) as usize] = 1.0;
        Self { l, t: 0.0, p }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.len() != 1 << self.l {
            return Err(Error::Parameter(format!(
                "distribution over {} states for L={}",
                self.p.len(),
                self.l
            )));
        }
        if self.p.iter().any(|&v| !v.is_finite() || v < -1e-12) {
            return Err(Error::Parameter("negative or non-finite probability".into()));
        }
        let sum: f64 = self.p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn magnetizations(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.l);
        for (mask, &pr) in self.p.iter().enumerate() {
            for i in 0..self.l {
                m[i] += pr * f64::from(spins::spin_from_mask(mask as u128, i));
            }
        }
        m
    }

    /// Raw pair moments `⟨s_i s_j⟩` (diagonal 1).
    pub fn raw_pair_moments(&self) -> nalgebra::DMatrix<f64> {
        let mut raw = nalgebra::DMatrix::zeros(self.l, self.l);
        for (mask, &pr) in self.p.iter().enumerate() {
            for i in 0..self.l {
                let si = f64::from(spins::spin_from_mask(mask as u128, i));
                for jdx in (i + 1)..self.l {
                    raw[(i, jdx)] += pr * si * f64::from(spins::spin_from_mask(mask as u128, jdx));
                }
            }
        }
        for i in 0..self.l {
            raw[(i, i)] = 1.0;
            for jdx in 0..i {
                raw[(i, jdx)] = raw[(jdx, i)];
            }
        }
        raw
    }

    pub fn max_abs_diff(&self, other: &DistributionState) -> f64 {
        self.p
            .iter()
            .zip(&other.p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Integrate the master equation for `duration` time units from `initial`,
/// with an adaptive embedded Runge-Kutta pair (Dormand-Prince 5(4)) keeping
/// the estimated local error per step below `local_tol`.
///
/// The normalization is re-projected after every accepted step.
pub fn integrate_master_equation(
    model: &CouplingModel,
    gamma: f64,
    initial: &DistributionState,
    duration: f64,
    local_tol: f64,
) -> Result<DistributionState> {
    if model.l() > L_MASTER_MAX {
        return Err(Error::Capacity(format!(
            "master equation limited to {L_MASTER_MAX} spins, model has {}",
            model.l()
        )));
    }
    if initial.l != model.l() {
        return Err(Error::Parameter(format!(
            "initial distribution is over {} spins, model has {}",
            initial.l,
            model.l()
        )));
    }
    initial.validate()?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::Parameter(format!(
            "duration must be >= 0, got {duration}"
        )));
    }
    if !(local_tol > 0.0) {
        return Err(Error::Parameter("local_tol must be positive".into()));
    }
    let l = model.l();
    let n = 1usize << l;
    // Precompute all flip rates: w[mask * l + i] = ω_i(config(mask)).
    let mut w = vec![0.0f64; n * l];
    let mut s = vec![0i8; l];
    for mask in 0..n {
        for (i, v) in s.iter_mut().enumerate() {
            *v = spins::spin_from_mask(mask as u128, i);
        }
        for i in 0..l {
            w[mask * l + i] = rate(model, &s, i, gamma);
        }
    }
    let rhs = |p: &[f64], dp: &mut [f64]| {
        for (mask, out) in dp.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..l {
                let flipped = mask ^ (1 << i);
                acc += w[flipped * l + i] * p[flipped] - w[mask * l + i] * p[mask];
            }
            *out = acc;
        }
    };

    // Dormand-Prince 5(4) coefficients.
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    const B5: [f64; 7] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];

    let mut p = initial.p.clone();
    for v in p.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let total: f64 = p.iter().sum();
    for v in p.iter_mut() {
        *v /= total;
    }
    let mut t = 0.0;
    // The total exit rate is at most γL, so 0.1/(γL) is a safe first step.
    let mut hstep = (duration / 10.0).min(0.1 / (gamma * l as f64)).max(1e-12);
    let mut k = vec![vec![0.0f64; n]; 7];
    let mut tmp = vec![0.0f64; n];
    let mut p5 = vec![0.0f64; n];
    let mut max_steps = 0usize;
    while t < duration {
        max_steps += 1;
        if max_steps > 10_000_000 {
            return Err(Error::NonConvergence {
                what: "master equation integration".into(),
                iterations: max_steps,
                residual: duration - t,
            });
        }
        if t + hstep > duration {
            hstep = duration - t;
        }
        rhs(&p, &mut k[0]);
        for stage in 1..7 {
            for idx in 0..n {
                let mut acc = 0.0;
                for prev in 0..stage {
                    acc += A[stage - 1][prev] * k[prev][idx];
                }
                tmp[idx] = p[idx] + hstep * acc;
            }
            rhs(&tmp, &mut k[stage]);
        }
        let mut err: f64 = 0.0;
        for idx in 0..n {
            let mut acc5 = 0.0;
            let mut acc4 = 0.0;
            for stage in 0..7 {
                acc5 += B5[stage] * k[stage][idx];
                acc4 += B4[stage] * k[stage][idx];
            }
            p5[idx] = p[idx] + hstep * acc5;
            err = err.max((hstep * (acc5 - acc4)).abs());
        }
        if err <= local_tol {
            t += hstep;
            std::mem::swap(&mut p, &mut p5);
            for v in p.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let total: f64 = p.iter().sum();
            for v in p.iter_mut() {
                *v /= total;
            }
        }
        let safety = if err > 0.0 {
            0.9 * (local_tol / err).powf(0.2)
        } else {
            5.0
        };
        hstep *= safety.clamp(0.2, 5.0);
    }
    Ok(DistributionState { l, t: duration, p })
}

/// Read `n_samples` configurations at times `burn_in + k * interval`,
/// `k = 1..=n_samples`, into a sample table.
pub fn sample_snapshots(
    traj: &SpinTrajectory,
    burn_in: f64,
    interval: f64,
    n_samples: usize,
) -> Result<SampleTable> {
    if !(interval > 0.0 && interval.is_finite()) {
        return Err(Error::Parameter(format!(
            "snapshot interval must be positive, got {interval}"
        )));
    }
    if !(burn_in >= 0.0) {
        return Err(Error::Parameter(format!(
            "burn_in must be >= 0, got {burn_in}"
        )));
    }
    if n_samples == 0 {
        return Err(Error::Parameter("n_samples must be >= 1".into()));
    }
    let last = burn_in + n_samples as f64 * interval;
    if last > traj.t_end() * (1.0 + 1e-12) {
        return Err(Error::Parameter(format!(
            "last snapshot at t={last} exceeds t_end={}",
            traj.t_end()
        )));
    }
    let mut rows = Vec::with_capacity(n_samples * traj.l());
    let mut s = traj.initial().to_vec();
    let mut idx = 0;
    for ksnap in 1..=n_samples {
        let t = burn_in + ksnap as f64 * interval;
        while idx < traj.times.len() && traj.times[idx] <= t {
            let i = traj.spin_idx[idx] as usize;
            s[i] = -s[i];
            idx += 1;
        }
        rows.extend_from_slice(&s);
    }
    let mut table = SampleTable::new(traj.l(), rows)?;
    table.meta.insert("source".into(), "trajectory".into());
    table
        .meta
        .insert("burn_in".into(), serde_json::json!(burn_in));
    table
        .meta
        .insert("interval".into(), serde_json::json!(interval));
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{self, SkParams};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    fn free_spin(theta: f64) -> CouplingModel {
        CouplingModel::new(
            DVector::from_element(1, theta),
            DMatrix::zeros(1, 1),
            false,
        )
        .unwrap()
    }

    #[test]
    fn free_spin_rate_is_gamma_over_2() {
        let m = free_spin(0.0);
        assert_abs_diff_eq!(rate(&m, &[1], 0, 2.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rate(&m, &[-1], 0, 2.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn aligned_pair_rate_matches_logistic_form() {
        let mut j = DMatrix::zeros(2, 2);
        j[(0, 1)] = 1.0;
        j[(1, 0)] = 1.0;
        let m = CouplingModel::new(DVector::zeros(2), j, false).unwrap();
        // Both up: H_0 = 1, s_0 H_0 = 1, so ω = γ/(1+e^2).
        let expect = 1.0 / (1.0 + (2.0f64).exp());
        assert_abs_diff_eq!(rate(&m, &[1, 1], 0, 1.0), expect, epsilon = 1e-15);
    }

    #[test]
    fn rate_forms_agree_for_random_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let theta: f64 = rng.gen::<f64>() * 6.0 - 3.0;
            let m = free_spin(theta);
            for s in [-1i8, 1] {
                let logistic = 1.7 / (1.0 + (2.0 * f64::from(s) * theta).exp());
                assert_abs_diff_eq!(rate(&m, &[s], 0, 1.7), logistic, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn gillespie_free_spin_flip_count_is_poisson() {
        let m = free_spin(0.0);
        let traj = simulate_gillespie(&m, 1.0, 1e4, &[1], 42).unwrap();
        // Flips occur at rate γ/2 = 0.5, so expect 5000 ± 4·sqrt(5000).
        let expect = 5000.0f64;
        let band = 4.0 * expect.sqrt();
        let n = traj.n_events() as f64;
        assert!(
            (n - expect).abs() < band,
            "flip count {n} outside {expect} ± {band}"
        );
    }

    #[test]
    fn gillespie_strong_field_keeps_spin_frozen() {
        let m = free_spin(10.0);
        let traj = simulate_gillespie(&m, 1.0, 10.0, &[1], 7).unwrap();
        assert_eq!(traj.n_events(), 0);
        assert_eq!(traj.final_config(), vec![1]);
    }

    #[test]
    fn gillespie_is_deterministic_per_seed() {
        let m = model::generate_sk(&SkParams {
            l: 8,
            g: 0.4,
            k: 0.5,
            seed: 3,
        })
        .unwrap();
        let init = vec![1i8; 8];
        let a = simulate_gillespie(&m, 1.0, 50.0, &init, 5).unwrap();
        let b = simulate_gillespie(&m, 1.0, 50.0, &init, 5).unwrap();
        assert_eq!(a, b);
        let c = simulate_gillespie(&m, 1.0, 50.0, &init, 6).unwrap();
        assert_ne!(a.times(), c.times());
    }

    #[test]
    fn directed_cycle_has_directional_transition_bias() {
        // Spin i listens to spin i+1 (cyclically) with a strong coupling:
        // the broken detailed balance shows up as one rotation sense of the
        // single-defect states dominating its reverse.
        let mut j = DMatrix::zeros(3, 3);
        j[(0, 1)] = 1.5;
        j[(1, 2)] = 1.5;
        j[(2, 0)] = 1.5;
        let m = CouplingModel::new(DVector::zeros(3), j, false).unwrap();
        let traj = simulate_gillespie(&m, 1.0, 4000.0, &[1, 1, 1], 11).unwrap();
        let mut mask = spins::mask_from_config(traj.initial()) as usize;
        let (a, b) = (0b110usize, 0b010usize); // (-,+,+) and (-,+,-)
        let mut fwd = 0u64;
        let mut back = 0u64;
        for &i in traj.spin_indices() {
            let next = mask ^ (1 << i);
            if mask == a && next == b {
                fwd += 1;
            }
            if mask == b && next == a {
                back += 1;
            }
            mask = next;
        }
        assert!(
            fwd > 5 * back.max(1),
            "forward {fwd} vs backward {back}: no directional bias"
        );
    }

    #[test]
    fn discrete_scheme_rejects_coarse_grid() {
        let m = free_spin(0.0);
        let err = simulate_discrete(
            &m,
            1.0,
            0.2,
            10.0,
            &[1],
            0,
            DiscreteKind::PerSpinBernoulli,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }

    #[test]
    fn random_pick_free_spin_flip_rate_is_gamma_over_2() {
        let m = free_spin(0.0);
        let t_end = 2e4;
        let traj =
            simulate_discrete(&m, 1.0, 0.01, t_end, &[1], 9, DiscreteKind::RandomPick).unwrap();
        let rate_hat = traj.n_events() as f64 / t_end;
        let se = (0.5 / t_end as f64).sqrt();
        assert!(
            (rate_hat - 0.5).abs() < 4.0 * se,
            "empirical rate {rate_hat} vs 0.5 ± {}",
            4.0 * se
        );
    }

    #[test]
    fn random_pick_reproduces_biased_conditional_rates() {
        // With a field, the flip rate out of the aligned state is
        // γ(1 - tanh θ)/2 and out of the anti-aligned state γ(1 + tanh θ)/2.
        let theta = 1.0;
        let m = free_spin(theta);
        let t_end = 3e4;
        let traj =
            simulate_discrete(&m, 1.0, 0.01, t_end, &[1], 13, DiscreteKind::RandomPick).unwrap();
        let mut time_up = 0.0;
        let mut flips_from_up = 0u64;
        let mut prev_t = 0.0;
        let mut s = 1i8;
        for (&t, _) in traj.times().iter().zip(traj.spin_indices()) {
            if s == 1 {
                time_up += t - prev_t;
                flips_from_up += 1;
            }
            prev_t = t;
            s = -s;
        }
        if s == 1 {
            time_up += t_end - prev_t;
        }
        let expect = 0.5 * (1.0 - theta.tanh());
        let rate_hat = flips_from_up as f64 / time_up;
        let se = (expect / time_up).sqrt();
        assert!(
            (rate_hat - expect).abs() < 4.0 * se,
            "conditional rate {rate_hat} vs {expect} ± {}",
            4.0 * se
        );
    }

    /// Time-averaged magnetizations of a trajectory (local test helper).
    fn time_avg_m(traj: &SpinTrajectory, burn_in: f64) -> DVector<f64> {
        let mut acc = DVector::zeros(traj.l());
        let mut total = 0.0;
        traj.for_each_interval(burn_in, |a, b, s| {
            let w = b - a;
            total += w;
            for (i, &v) in s.iter().enumerate() {
                acc[i] += w * f64::from(v);
            }
        });
        acc / total
    }

    #[test]
    fn discrete_schemes_match_exact_stationary_state() {
        let mut m = model::generate_sk(&SkParams {
            l: 5,
            g: 0.3,
            k: 0.0,
            seed: 21,
        })
        .unwrap();
        m.set_theta(model::random_theta(5, -0.3, 0.3, 4).unwrap())
            .unwrap();
        let exact = model::exact_gibbs_moments(&m).unwrap();
        let init = vec![1i8; 5];
        for kind in [DiscreteKind::PerSpinBernoulli, DiscreteKind::RandomPick] {
            let traj = simulate_discrete(&m, 1.0, 0.01, 4e4, &init, 33, kind).unwrap();
            let m_hat = time_avg_m(&traj, 100.0);
            for i in 0..5 {
                assert!(
                    (m_hat[i] - exact.m[i]).abs() < 0.04,
                    "{kind:?}: m[{i}] = {} vs exact {}",
                    m_hat[i],
                    exact.m[i]
                );
            }
        }
    }

    #[test]
    fn gillespie_matches_exact_stationary_state() {
        let mut m = model::generate_sk(&SkParams {
            l: 5,
            g: 0.3,
            k: 0.0,
            seed: 22,
        })
        .unwrap();
        m.set_theta(model::random_theta(5, -0.3, 0.3, 8).unwrap())
            .unwrap();
        let exact = model::exact_gibbs_moments(&m).unwrap();
        let traj = simulate_gillespie(&m, 1.0, 4e4, &[1, 1, 1, 1, 1], 55).unwrap();
        let m_hat = time_avg_m(&traj, 100.0);
        for i in 0..5 {
            assert!(
                (m_hat[i] - exact.m[i]).abs() < 0.04,
                "m[{i}] = {} vs exact {}",
                m_hat[i],
                exact.m[i]
            );
        }
    }

    #[test]
    fn master_equation_free_spin_relaxation_is_exponential() {
        let m = free_spin(0.0);
        let init = DistributionState::point_mass(&[1]);
        let gamma = 1.0;
        let t = 1.3;
        let out = integrate_master_equation(&m, gamma, &init, t, 1e-9).unwrap();
        let expect_up = 0.5 * (1.0 + (-gamma * t).exp());
        assert_abs_diff_eq!(out.p[1], expect_up, epsilon = 1e-9);
        assert_abs_diff_eq!(out.p[0], 1.0 - expect_up, epsilon = 1e-9);
    }

    #[test]
    fn master_equation_preserves_gibbs_stationarity() {
        let mut m = model::generate_sk(&SkParams {
            l: 5,
            g: 0.4,
            k: 0.0,
            seed: 9,
        })
        .unwrap();
        m.set_theta(model::random_theta(5, -0.3, 0.3, 2).unwrap())
            .unwrap();
        let (p, _) = model::gibbs_distribution(&m).unwrap();
        let init = DistributionState { l: 5, t: 0.0, p };
        let out = integrate_master_equation(&m, 1.0, &init, 1.0, 1e-10).unwrap();
        assert!(
            out.max_abs_diff(&init) <= 1e-8,
            "Gibbs state drifted by {}",
            out.max_abs_diff(&init)
        );
    }

    #[test]
    fn master_equation_converges_to_gibbs_from_uniform() {
        let mut m = model::generate_sk(&SkParams {
            l: 4,
            g: 0.5,
            k: 0.0,
            seed: 14,
        })
        .unwrap();
        m.set_theta(model::random_theta(4, -0.2, 0.2, 6).unwrap())
            .unwrap();
        let (p, _) = model::gibbs_distribution(&m).unwrap();
        let gibbs = DistributionState { l: 4, t: 0.0, p };
        let out =
            integrate_master_equation(&m, 1.0, &DistributionState::uniform(4), 40.0, 1e-10)
                .unwrap();
        assert!(out.max_abs_diff(&gibbs) < 1e-8);
    }

    #[test]
    fn master_equation_enforces_size_cap() {
        let m = model::generate_sk(&SkParams {
            l: 13,
            g: 0.3,
            k: 0.0,
            seed: 0,
        })
        .unwrap();
        let err =
            integrate_master_equation(&m, 1.0, &DistributionState::uniform(13), 1.0, 1e-9)
                .unwrap_err();
        assert!(matches!(err, Error::Capacity(_)));
    }

    #[test]
    fn snapshots_read_the_path_at_the_right_times() {
        let m = free_spin(0.0);
        let traj = simulate_gillespie(&m, 1.0, 100.0, &[1], 3).unwrap();
        let table = sample_snapshots(&traj, 10.0, 5.0, 10).unwrap();
        assert_eq!(table.n_rows(), 10);
        for (k, row) in table.rows_iter().enumerate() {
            let t = 10.0 + 5.0 * (k as f64 + 1.0);
            assert_eq!(row, &traj.config_at(t)[..], "snapshot {k} at t={t}");
        }
    }

    #[test]
    fn snapshots_past_t_end_are_rejected() {
        let m = free_spin(0.0);
        let traj = simulate_gillespie(&m, 1.0, 10.0, &[1], 3).unwrap();
        assert!(sample_snapshots(&traj, 0.0, 2.0, 5).is_ok());
        assert!(sample_snapshots(&traj, 0.0, 2.0, 6).is_err());
        assert!(sample_snapshots(&traj, 0.0, 0.0, 3).is_err());
    }

    #[test]
    fn trajectory_file_round_trip_is_byte_identical() {
        let m = model::generate_sk(&SkParams {
            l: 6,
            g: 0.3,
            k: 1.0,
            seed: 2,
        })
        .unwrap();
        let traj = simulate_gillespie(&m, 1.3, 30.0, &[1, -1, 1, -1, 1, -1], 77).unwrap();
        let dir = std::env::temp_dir().join("isinglab_traj_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.events");
        let p2 = dir.join("b.events");
        traj.write(&p1).unwrap();
        let back = SpinTrajectory::read(&p1).unwrap();
        assert_eq!(traj, back);
        back.write(&p2).unwrap();
        assert_eq!(
            std::fs::read(&p1).unwrap(),
            std::fs::read(&p2).unwrap(),
            "re-serialization must be byte-identical"
        );
    }

    #[test]
    fn corrupt_trajectory_files_are_rejected() {
        let dir = std::env::temp_dir().join("isinglab_traj_bad");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.events");
        // Decreasing times.
        std::fs::write(
            &path,
            "{\"scheme\":\"gillespie\",\"L\":2,\"gamma\":1.0,\"t_end\":5.0,\"seed\":0,\"initial\":\"++\"}\ntime,spin_index\n2.0,0\n1.0,1\n",
        )
        .unwrap();
        assert!(SpinTrajectory::read(&path).is_err());
        // Spin index out of range.
        std::fs::write(
            &path,
            "{\"scheme\":\"gillespie\",\"L\":2,\"gamma\":1.0,\"t_end\":5.0,\"seed\":0,\"initial\":\"++\"}\ntime,spin_index\n1.0,7\n",
        )
        .unwrap();
        assert!(SpinTrajectory::read(&path).is_err());
    }

    #[test]
    fn interval_walk_covers_the_whole_window() {
        let m = free_spin(0.0);
        let traj = simulate_gillespie(&m, 1.0, 50.0, &[1], 19).unwrap();
        let mut covered = 0.0;
        let mut last_end = 5.0;
        traj.for_each_interval(5.0, |a, b, _s| {
            assert!(a >= last_end - 1e-12);
            assert!(b > a);
            covered += b - a;
            last_end = b;
        });
        assert_abs_diff_eq!(covered, 45.0, epsilon = 1e-9);
    }
}

//! Kinetic (non-equilibrium) inverse-Ising methods.
//!
//! These methods use dynamical information — the correlation-function
//! derivative at zero lag, or the full transition record — and therefore
//! work on data from *asymmetric* couplings, where every equilibrium method
//! is structurally blind.
//!
//! The mean-field family works from the matrices `C(0)`, `dC/dτ(0)` and
//! `D = C(0) + dC0/γ`; the likelihood family (per-sample and averaged)
//! works from the discretized transition record of the trajectory.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{gibbs_distribution, CouplingModel};
use crate::opt::{minimize_lbfgs, LbfgsOptions};
use crate::result::InferenceResult;
use crate::spins;
use crate::stats::{ConfigEnsemble, Dc0Method, FlipDecomposition, MomentSet};

/// The matrices entering the kinetic mean-field equations.
#[derive(Debug, Clone)]
pub struct KineticMatrices {
    pub l: usize,
    pub m: DVector<f64>,
    pub c0: DMatrix<f64>,
    /// `dC_ij/dτ` at `τ = 0+`.
    pub dc0: DMatrix<f64>,
    /// `D = C(0) + dC0/γ`: the deviation from free relaxation.
    pub d: DMatrix<f64>,
    pub gamma: f64,
}

/// Assemble the kinetic matrices from a moment set carrying a derivative
/// estimate.
pub fn kinetic_matrices(ms: &MomentSet, gamma: f64) -> Result<KineticMatrices> {
    if !(gamma > 0.0) {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    let dc0 = ms.dc0.clone().ok_or_else(|| {
        Error::Parameter(
            "kinetic inference needs a dC/dτ estimate; recompute the moments with a \
             derivative method"
                .into(),
        )
    })?;
    let d = &ms.c0 + &dc0 / gamma;
    Ok(KineticMatrices {
        l: ms.l,
        m: ms.m.clone(),
        c0: ms.c0.clone(),
        dc0,
        d,
        gamma,
    })
}

/// Exact kinetic matrices of a *symmetric* model by state enumeration,
/// using the stationary identity
/// `dC_ij/dτ|_0 = γ (⟨tanh(H_i) s_j⟩ - ⟨s_i s_j⟩)`
/// evaluated under the Gibbs distribution. The infinite-data limit of the
/// trajectory estimators, useful as ground truth in tests and bias studies.
pub fn exact_kinetic_matrices(model: &CouplingModel, gamma: f64) -> Result<KineticMatrices> {
    if !(gamma > 0.0) {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    let l = model.l();
    let (p, _) = gibbs_distribution(model)?;
    let mut m = DVector::<f64>::zeros(l);
    let mut raw = DMatrix::<f64>::zeros(l, l);
    let mut tanh_s = DMatrix::<f64>::zeros(l, l);
    for (mask, &pm) in p.iter().enumerate() {
        let s = spins::config_from_mask(mask as u128, l);
        for i in 0..l {
            let si = f64::from(s[i]);
            m[i] += pm * si;
            let th = model.effective_field(&s, i).tanh();
            for jdx in 0..l {
                let sj = f64::from(s[jdx]);
                raw[(i, jdx)] += pm * si * sj;
                tanh_s[(i, jdx)] += pm * th * sj;
            }
        }
    }
    let c0 = &raw - &m * m.transpose();
    let dc0 = (&tanh_s - &raw) * gamma;
    let d = &c0 + &dc0 / gamma;
    Ok(KineticMatrices {
        l,
        m,
        c0,
        dc0,
        d,
        gamma,
    })
}

fn invert(mat: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    mat.clone().try_inverse().ok_or_else(|| Error::Singular {
        what: what.into(),
        condition: f64::INFINITY,
    })
}

fn theta_from_field_equation(m: &DVector<f64>, j: &DMatrix<f64>) -> Result<DVector<f64>> {
    let mut theta = DVector::zeros(m.len());
    for i in 0..m.len() {
        if m[i].abs() >= 1.0 {
            return Err(Error::Domain(format!(
                "magnetization m[{i}] = {} is saturated",
                m[i]
            )));
        }
        theta[i] = m[i].atanh();
    }
    theta -= j * m;
    Ok(theta)
}

/// Kinetic naive mean field: `J* = A^{-1} D C(0)^{-1}` with
/// `A = diag(1 - m_i^2)`.
///
/// The reconstruction is *not* forced symmetric — this family resolves
/// asymmetric couplings — and the diagonal is retained. `symmetrize`
/// averages `J*` with its transpose afterwards.
pub fn infer_asyn_nmf(km: &KineticMatrices, symmetrize: bool) -> Result<InferenceResult> {
    let l = km.l;
    let cinv = invert(&km.c0, "equal-time correlation matrix")?;
    let mut j = &km.d * &cinv;
    for i in 0..l {
        let a = 1.0 - km.m[i] * km.m[i];
        if a <= 0.0 {
            return Err(Error::Domain(format!(
                "magnetization m[{i}] = {} is saturated",
                km.m[i]
            )));
        }
        for jdx in 0..l {
            j[(i, jdx)] /= a;
        }
    }
    if symmetrize {
        j = (&j + j.transpose()) * 0.5;
    }
    let theta = theta_from_field_equation(&km.m, &j)?;
    let mut out = InferenceResult::new(theta, j, "asyn-nmf").with_self_allowed(true);
    out.record_hyper("symmetrize", symmetrize);
    out.record_hyper("gamma", km.gamma);
    Ok(out)
}

/// How the kinetic TAP correction factors are computed.
#[derive(Debug, Clone)]
pub enum TapMode {
    /// Fixed-point iteration of `J ← A(J)^{-1} D C^{-1}`.
    Iterative { tol: f64, max_iters: usize },
    /// Per-row cubic `F (1 - F)^2 = b_i`, solved directly.
    Cubic,
}

/// Smallest root of `F (1-F)^2 = b` on `[0, 1/3]`; the physical branch.
/// `b` must lie in `[0, 4/27]`.
fn tap_cubic_root(b: f64) -> f64 {
    if b <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0 / 3.0);
    let g = |f: f64| f * (1.0 - f) * (1.0 - f) - b;
    let mut f = b; // good starting guess for small b
    for _ in 0..200 {
        let gf = g(f);
        if gf.abs() < 1e-16 {
            break;
        }
        if gf > 0.0 {
            hi = f;
        } else {
            lo = f;
        }
        let dg = (1.0 - f) * (1.0 - 3.0 * f);
        let newton = f - gf / dg;
        f = if dg > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    f
}

/// Kinetic TAP: mean field with the per-spin Onsager factor
/// `A_ii = (1 - m_i^2)(1 - F_i)`, `F_i = (1 - m_i^2) Σ_j J_ij^2 (1 - m_j^2)`.
///
/// Rows whose correction strength `b_i` exceeds the cubic's solvable range
/// `4/27` fall back to the mean-field value and are counted in the
/// diagnostics.
pub fn infer_asyn_tap(
    km: &KineticMatrices,
    mode: &TapMode,
    symmetrize: bool,
) -> Result<InferenceResult> {
    let l = km.l;
    let nmf = infer_asyn_nmf(km, false)?;
    let j_nmf = nmf.j_star;
    // Correction strength per row, evaluated at the mean-field estimate.
    let mut b = vec![0.0f64; l];
    for i in 0..l {
        let ai = 1.0 - km.m[i] * km.m[i];
        let mut acc = 0.0;
        for jdx in 0..l {
            let aj = 1.0 - km.m[jdx] * km.m[jdx];
            acc += j_nmf[(i, jdx)] * j_nmf[(i, jdx)] * aj;
        }
        b[i] = ai * acc;
    }
    let b_max = 4.0 / 27.0;
    let mut fallback_rows = 0u64;
    let mut f_rows = vec![0.0f64; l];
    let mut iters_used = 0usize;
    match mode {
        TapMode::Cubic => {
            for i in 0..l {
                if b[i] > b_max {
                    fallback_rows += 1;
                    f_rows[i] = 0.0;
                } else {
                    f_rows[i] = tap_cubic_root(b[i]);
                }
            }
        }
        TapMode::Iterative { tol, max_iters } => {
            if !(*tol > 0.0) {
                return Err(Error::Parameter("tap tolerance must be positive".into()));
            }
            // J^{t+1}_i = J^nmf_i / (1 - F_i(J^t)) row by row, which closes
            // on the scalars F_i: F ← b_i / (1 - F)^2.
            let mut diverged = vec![false; l];
            let mut converged = false;
            for it in 0..*max_iters {
                iters_used = it + 1;
                let mut delta: f64 = 0.0;
                for i in 0..l {
                    if diverged[i] {
                        continue;
                    }
                    let denom = 1.0 - f_rows[i];
                    let next = b[i] / (denom * denom);
                    // The stable branch never exceeds 1/3; overshoot means
                    // b_i is outside the solvable range.
                    if !(next < 0.34) {
                        diverged[i] = true;
                        fallback_rows += 1;
                        f_rows[i] = 0.0;
                        continue;
                    }
                    delta = delta.max((next - f_rows[i]).abs());
                    f_rows[i] = next;
                }
                if delta <= *tol {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NonConvergence {
                    what: "asyn-tap fixed point".into(),
                    iterations: *max_iters,
                    residual: f64::NAN,
                });
            }
        }
    }
    let mut j = j_nmf;
    for i in 0..l {
        let scale = 1.0 / (1.0 - f_rows[i]);
        for jdx in 0..l {
            j[(i, jdx)] *= scale;
        }
    }
    if symmetrize {
        j = (&j + j.transpose()) * 0.5;
    }
    // TAP field equation with the reaction term.
    let mut theta = theta_from_field_equation(&km.m, &j)?;
    for i in 0..l {
        let mut reaction = 0.0;
        for jdx in 0..l {
            reaction += j[(i, jdx)] * j[(i, jdx)] * (1.0 - km.m[jdx] * km.m[jdx]);
        }
        theta[i] += km.m[i] * reaction;
    }
    let mut out = InferenceResult::new(theta, j, "asyn-tap").with_self_allowed(true);
    out.record_hyper(
        "mode",
        match mode {
            TapMode::Cubic => "cubic",
            TapMode::Iterative { .. } => "iterative",
        },
    );
    out.record_hyper("symmetrize", symmetrize);
    out.record_hyper("gamma", km.gamma);
    out.record_diag("tap_fallback_rows", fallback_rows as f64);
    if iters_used > 0 {
        out.record_diag("tap_iterations", iters_used as f64);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Per-sample likelihood on the transition record
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ShoOptions {
    /// L2 penalty on each row's parameters.
    pub lambda: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for ShoOptions {
    fn default() -> Self {
        ShoOptions {
            lambda: 0.0,
            grad_tol: 1e-8,
            max_iters: 500,
        }
    }
}

/// Per-row sufficient statistics of a decomposition: for each distinct
/// cell-start configuration, how many cells started there and how many ended
/// with this spin flipped.
struct RowStats {
    /// `(config_index, flips_of_this_spin)` for configs with at least one flip.
    flip_counts: Vec<Vec<(u32, u64)>>,
    /// Spins of each distinct config, augmented with a leading 1 column:
    /// row-major `[m x (L+1)]`.
    aug: Vec<f64>,
}

fn row_stats(fd: &FlipDecomposition) -> RowStats {
    let l = fd.l;
    let mut maps: Vec<std::collections::HashMap<u32, u64>> =
        vec![std::collections::HashMap::new(); l];
    for rec in &fd.flips {
        *maps[rec.spin as usize].entry(rec.config).or_insert(0) += 1;
    }
    let mut flip_counts: Vec<Vec<(u32, u64)>> = maps
        .into_iter()
        .map(|m| {
            let mut v: Vec<(u32, u64)> = m.into_iter().collect();
            v.sort_unstable();
            v
        })
        .collect();
    for v in flip_counts.iter_mut() {
        v.shrink_to_fit();
    }
    let m = fd.configs.len();
    let mut aug = vec![0.0f64; m * (l + 1)];
    for (c, &mask) in fd.configs.iter().enumerate() {
        aug[c * (l + 1)] = 1.0;
        for i in 0..l {
            aug[c * (l + 1) + 1 + i] = f64::from(spins::spin_from_mask(mask, i));
        }
    }
    RowStats { flip_counts, aug }
}

/// Negative mean log-likelihood (per grid cell) of one spin's transition
/// record, with its gradient with respect to `x = [θ_i, J_i1..J_iL]`.
///
/// Each `(spin, cell)` pair contributes `log(γδt) + log p` when the spin
/// flipped and `log(1 - γδt p)` otherwise, where
/// `p = 1/(1 + e^{2 s_i H_i})` is the heat-bath flip probability factor
/// evaluated at the cell-start configuration.
pub fn sho_row_objective(
    fd: &FlipDecomposition,
    row: usize,
    x: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let stats = row_stats(fd);
    sho_row_objective_with(fd, &stats, row, x, 0.0)
}

fn sho_row_objective_with(
    fd: &FlipDecomposition,
    stats: &RowStats,
    row: usize,
    x: &DVector<f64>,
    lambda: f64,
) -> (f64, DVector<f64>) {
    let l = fd.l;
    let dim = l + 1;
    let gdt = fd.gamma * fd.dt;
    let log_gdt = gdt.ln();
    let n_cells = fd.n_cells as f64;
    let mut f = 0.0f64;
    let mut grad = DVector::<f64>::zeros(dim);
    let mut flip_iter = stats.flip_counts[row].iter().peekable();
    for (c, &n_c) in fd.config_counts.iter().enumerate() {
        let aug = &stats.aug[c * dim..(c + 1) * dim];
        let si = aug[1 + row];
        let mut h = 0.0;
        for (k, &a) in aug.iter().enumerate() {
            h += x[k] * a;
        }
        let th = h.tanh();
        // Flip probability factor p = 1/(1 + e^{2 s_i H}) = (1 - s_i tanh H)/2,
        // with its overflow-safe logarithm.
        let z = si * h;
        let log_p = if z > 0.0 {
            -2.0 * z - (-2.0 * z).exp().ln_1p()
        } else {
            -((2.0 * z).exp().ln_1p())
        };
        let p = 0.5 * (1.0 - si * th);
        let k_c = match flip_iter.peek() {
            Some(&&(cc, k)) if cc as usize == c => {
                flip_iter.next();
                k as f64
            }
            _ => 0.0,
        };
        let n_noflip = n_c as f64 - k_c;
        // No-flip part.
        if n_noflip > 0.0 {
            let denom = 1.0 - gdt * p;
            f -= n_noflip * denom.ln();
            // d log(1 - γδt p)/dH = γδt s_i (1 - tanh² H) / (2 (1 - γδt p))
            let w = gdt * 0.5 * si * (1.0 - th * th) / denom;
            // gradient of -log(...) is -w * aug
            for (k, &a) in aug.iter().enumerate() {
                grad[k] -= n_noflip * w * a;
            }
        }
        // Flip part: -[log(γδt) + log p]; d log p/dH = s_after - tanh H.
        if k_c > 0.0 {
            f -= k_c * (log_gdt + log_p);
            let dldh = -si - th;
            for (k, &a) in aug.iter().enumerate() {
                grad[k] -= k_c * dldh * a;
            }
        }
    }
    f /= n_cells;
    grad /= n_cells;
    if lambda > 0.0 {
        f += lambda * x.dot(x);
        grad.axpy(2.0 * lambda, x, 1.0);
    }
    (f, grad)
}

/// Maximum-likelihood inference from the discretized transition record.
///
/// The rows of `(θ, J)` decouple: each is fit by minimizing the exact
/// negative log-likelihood of that spin's flip/no-flip record under the
/// parallel single-spin kinetics the grid realizes. The diagonal of `J` is
/// fit along with the rest of the row.
pub fn infer_sho(fd: &FlipDecomposition, opts: &ShoOptions) -> Result<InferenceResult> {
    let l = fd.l;
    if !(opts.lambda >= 0.0) {
        return Err(Error::Parameter("sho penalty must be nonnegative".into()));
    }
    let stats = row_stats(fd);
    let lbfgs = LbfgsOptions {
        grad_tol: opts.grad_tol,
        max_iters: opts.max_iters,
        ..Default::default()
    };
    let mut theta = DVector::<f64>::zeros(l);
    let mut j = DMatrix::<f64>::zeros(l, l);
    let mut total_iters = 0usize;
    let mut neg_ll = 0.0;
    for row in 0..l {
        let out = minimize_lbfgs(
            DVector::zeros(l + 1),
            |x, g| {
                let (f, grad) = sho_row_objective_with(fd, &stats, row, x, opts.lambda);
                g.copy_from(&grad);
                f
            },
            &lbfgs,
        )?;
        if !out.converged {
            return Err(Error::NonConvergence {
                what: format!("sho row {row}"),
                iterations: out.iterations,
                residual: out.grad_norm,
            });
        }
        total_iters += out.iterations;
        neg_ll += out.f;
        theta[row] = out.x[0];
        for jdx in 0..l {
            j[(row, jdx)] = out.x[1 + jdx];
        }
    }
    let mut out = InferenceResult::new(theta, j, "sho").with_self_allowed(true);
    out.record_hyper("lambda", opts.lambda);
    out.record_hyper("gamma_dt", fd.gamma * fd.dt);
    out.record_diag("lbfgs_iterations_total", total_iters as f64);
    out.record_diag("neg_log_likelihood_per_cell", neg_ll);
    out.record_diag("hidden_events", fd.hidden_events as f64);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Averaged (ensemble) likelihood
// ---------------------------------------------------------------------------

/// Inputs of the averaged method: a duration-weighted configuration
/// ensemble plus the augmented moment and derivative matrices.
#[derive(Debug, Clone)]
pub struct AveInputs {
    pub ens: ConfigEnsemble,
    /// Augmented raw moments `M` (`L x (L+1)`): column 0 is `m`, column
    /// `1+j` is `⟨s_i s_j⟩` (unconnected).
    pub m_aug: DMatrix<f64>,
    /// Augmented derivative `B` (`L x (L+1)`): the `τ → 0+` derivative of
    /// the raw lagged products against `(1, s)`.
    pub b_aug: DMatrix<f64>,
    pub gamma: f64,
}

impl AveInputs {
    /// Assemble the inputs from a trajectory: event-limit derivative,
    /// time-averaged raw moments, duration-weighted ensemble.
    pub fn from_trajectory(traj: &crate::dynamics::SpinTrajectory, burn_in: f64) -> Result<Self> {
        let l = traj.l();
        let ens = crate::stats::config_ensemble(traj, burn_in)?;
        let ms = crate::stats::trajectory_moments(traj, &[], burn_in, Dc0Method::EventLimit)?;
        let b = ms.dc0.as_ref().expect("event-limit derivative requested");
        let mut m_aug = DMatrix::<f64>::zeros(l, l + 1);
        let mut b_aug = DMatrix::<f64>::zeros(l, l + 1);
        for i in 0..l {
            m_aug[(i, 0)] = ms.m[i];
            for jdx in 0..l {
                m_aug[(i, 1 + jdx)] = ms.raw0[(i, jdx)];
                b_aug[(i, 1 + jdx)] = b[(i, jdx)];
            }
        }
        // Column 0 of B: the τ-derivative of ⟨s_i(t+τ)·1⟩, whose event-limit
        // estimator is -2/T Σ_flips s_i(t^-).
        let times = traj.times();
        let idx = traj.spin_indices();
        let mut s: Vec<f64> = traj
            .config_at(burn_in)
            .iter()
            .map(|&v| f64::from(v))
            .collect();
        let start = times.partition_point(|&x| x <= burn_in);
        for k in start..times.len() {
            let i = idx[k] as usize;
            b_aug[(i, 0)] += -2.0 * s[i];
            s[i] = -s[i];
        }
        let window = traj.t_end() - burn_in;
        for i in 0..l {
            b_aug[(i, 0)] /= window;
        }
        Ok(AveInputs {
            ens,
            m_aug,
            b_aug,
            gamma: traj.gamma(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct AveOptions {
    /// Initial step size of the fixed-point updates.
    pub eta: f64,
    /// Convergence threshold on the largest residual entry.
    pub tol: f64,
    pub max_iters: usize,
    /// Optional warm start for the augmented parameter matrix `[θ | J]`
    /// (`L x (L+1)`); `None` starts from zero. A warm start near the fixed
    /// point (for example an asynchronous mean-field estimate) cuts the
    /// iteration count substantially on large ensembles.
    pub initial: Option<DMatrix<f64>>,
}

impl Default for AveOptions {
    fn default() -> Self {
        AveOptions {
            eta: 0.5,
            tol: 1e-8,
            max_iters: 100_000,
            initial: None,
        }
    }
}

/// Averaged kinetic likelihood: iterate
/// `W_ij ← W_ij + η (B_ij/γ + M_ij - ⟨tanh(H_i) s̃_j⟩)` over the augmented
/// parameter matrix `W = [θ | J]`, where the ensemble average runs over the
/// duration-weighted visited configurations. At the generating parameters
/// the residual vanishes identically in the infinite-data limit.
pub fn infer_ave(inp: &AveInputs, opts: &AveOptions) -> Result<InferenceResult> {
    let l = inp.ens.l;
    let dim = l + 1;
    if inp.m_aug.nrows() != l || inp.m_aug.ncols() != dim || inp.b_aug.nrows() != l
        || inp.b_aug.ncols() != dim
    {
        return Err(Error::Parameter("ave input matrices have wrong shape".into()));
    }
    if !(opts.eta > 0.0) || !(opts.tol > 0.0) {
        return Err(Error::Parameter("ave step size and tolerance must be positive".into()));
    }
    // Decode the ensemble once: row-major [n_configs x (L+1)], leading 1.
    let n_cfg = inp.ens.configs.len();
    let mut aug = vec![0.0f64; n_cfg * dim];
    for (c, &mask) in inp.ens.configs.iter().enumerate() {
        aug[c * dim] = 1.0;
        for i in 0..l {
            aug[c * dim + 1 + i] = f64::from(spins::spin_from_mask(mask, i));
        }
    }
    let wsum: f64 = inp.ens.weights.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::Parameter("ave ensemble has zero total weight".into()));
    }

    let target = &inp.b_aug / inp.gamma + &inp.m_aug;
    let mut w = match &opts.initial {
        Some(w0) => {
            if w0.nrows() != l || w0.ncols() != dim {
                return Err(Error::Parameter(format!(
                    "ave warm start must be {l} x {dim}, got {} x {}",
                    w0.nrows(),
                    w0.ncols()
                )));
            }
            w0.clone()
        }
        None => DMatrix::<f64>::zeros(l, dim),
    };
    let mut eta = opts.eta;
    let mut best = f64::INFINITY;
    let mut resid_norm = f64::INFINITY;
    for iter in 0..opts.max_iters {
        // Ensemble average of tanh(H_i) s̃_j for every row at once.
        let mut avg = DMatrix::<f64>::zeros(l, dim);
        for c in 0..n_cfg {
            let wc = inp.ens.weights[c] / wsum;
            let a = &aug[c * dim..(c + 1) * dim];
            for i in 0..l {
                let mut h = 0.0;
                for (k, &sv) in a.iter().enumerate() {
                    h += w[(i, k)] * sv;
                }
                let th = wc * h.tanh();
                for (k, &sv) in a.iter().enumerate() {
                    avg[(i, k)] += th * sv;
                }
            }
        }
        let resid = &target - &avg;
        resid_norm = resid.amax();
        if resid_norm <= opts.tol {
            let theta = w.column(0).into_owned();
            let j = w.columns(1, l).into_owned();
            let mut out = InferenceResult::new(theta, j, "ave").with_self_allowed(true);
            out.record_hyper("eta", opts.eta);
            out.record_hyper("tol", opts.tol);
            out.record_hyper("gamma", inp.gamma);
            out.record_diag("iterations", (iter + 1) as f64);
            out.record_diag("final_residual", resid_norm);
            return Ok(out);
        }
        if resid_norm < best {
            best = resid_norm;
            eta = (eta * 1.05).min(2.0);
        } else {
            eta *= 0.5;
            if eta < 1e-12 {
                return Err(Error::Divergence {
                    what: "ave fixed point".into(),
                    detail: format!(
                        "step size collapsed with residual {resid_norm:.3e}; \
                         the moment conditions may be inconsistent"
                    ),
                });
            }
        }
        if !resid_norm.is_finite() || resid_norm > 1e9 {
            return Err(Error::Divergence {
                what: "ave fixed point".into(),
                detail: format!("residual blew up to {resid_norm:.3e}"),
            });
        }
        w += resid * eta;
    }
    Err(Error::NonConvergence {
        what: "ave fixed point".into(),
        iterations: opts.max_iters,
        residual: resid_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::simulate_gillespie;
    use crate::stats::{flip_decompose, trajectory_moments, ConservationPolicy};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair_model(j12: f64, theta: (f64, f64)) -> CouplingModel {
        let mut j = DMatrix::zeros(2, 2);
        j[(0, 1)] = j12;
        j[(1, 0)] = j12;
        CouplingModel::new(DVector::from_vec(vec![theta.0, theta.1]), j, false).unwrap()
    }

    #[test]
    fn exact_pair_matrices_match_independent_enumeration() {
        // Frozen from an independent enumeration of the pair
        // θ = (0.3, -0.1), J = 0.25 under heat-bath dynamics at γ = 1.
        let km = exact_kinetic_matrices(&pair_model(0.25, (0.3, -0.1)), 1.0).unwrap();
        assert_abs_diff_eq!(km.m[0], 0.268813621512013, epsilon = 1e-12);
        assert_abs_diff_eq!(km.m[1], -0.028522928687334, epsilon = 1e-12);
        assert_abs_diff_eq!(km.dc0[(0, 0)], -0.877029034077352, epsilon = 1e-12);
        assert_abs_diff_eq!(km.dc0[(1, 1)], -0.944570937304804, epsilon = 1e-12);
        assert_abs_diff_eq!(km.c0[(0, 1)], 0.225097639144445, epsilon = 1e-12);
    }

    #[test]
    fn asyn_nmf_on_an_exact_pair_gives_tanh_of_j() {
        // For a zero-field pair the kinetic mean-field estimate is exactly
        // tanh(J): biased down, unlike the equilibrium mean-field estimate
        // tanh(J)/(1 - tanh² J) which is biased up.
        let km = exact_kinetic_matrices(&pair_model(0.2, (0.0, 0.0)), 1.0).unwrap();
        let res = infer_asyn_nmf(&km, false).unwrap();
        assert_abs_diff_eq!(res.j_star[(0, 1)], 0.2f64.tanh(), epsilon = 1e-12);
        assert_abs_diff_eq!(res.j_star[(1, 0)], 0.2f64.tanh(), epsilon = 1e-12);
        assert_abs_diff_eq!(res.j_star[(0, 0)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(res.theta_star[0], 0.0, epsilon = 1e-12);
        // Magnetized case, frozen from the same enumeration.
        let km2 = exact_kinetic_matrices(&pair_model(0.25, (0.3, -0.1)), 1.0).unwrap();
        let res2 = infer_asyn_nmf(&km2, false).unwrap();
        assert_abs_diff_eq!(res2.j_star[(0, 1)], 0.242827843383525, epsilon = 1e-12);
        assert_abs_diff_eq!(res2.j_star[(1, 0)], 0.242827843383525, epsilon = 1e-12);
    }

    #[test]
    fn free_spins_give_a_zero_reconstruction() {
        let model = CouplingModel::new(DVector::zeros(3), DMatrix::zeros(3, 3), false).unwrap();
        let km = exact_kinetic_matrices(&model, 1.0).unwrap();
        let res = infer_asyn_nmf(&km, false).unwrap();
        assert!(res.j_star.amax() < 1e-14);
        assert!(res.theta_star.amax() < 1e-14);
    }

    #[test]
    fn missing_derivative_is_rejected() {
        let model = pair_model(0.2, (0.0, 0.0));
        let traj = simulate_gillespie(&model, 1.0, 100.0, &[1, -1], 4).unwrap();
        let ms = trajectory_moments(&traj, &[], 0.0, Dc0Method::Skip).unwrap();
        assert!(kinetic_matrices(&ms, 1.0).is_err());
    }

    #[test]
    fn tap_modes_agree_to_high_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let l = 5;
        let mut j = DMatrix::zeros(l, l);
        for i in 0..l {
            for jdx in (i + 1)..l {
                let v = rng.gen_range(-0.25..0.25);
                j[(i, jdx)] = v;
                j[(jdx, i)] = v;
            }
        }
        let theta = DVector::from_fn(l, |_, _| rng.gen_range(-0.2..0.2));
        let model = CouplingModel::new(theta, j, false).unwrap();
        let km = exact_kinetic_matrices(&model, 1.0).unwrap();
        let cubic = infer_asyn_tap(&km, &TapMode::Cubic, false).unwrap();
        let iterative = infer_asyn_tap(
            &km,
            &TapMode::Iterative {
                tol: 1e-14,
                max_iters: 10_000,
            },
            false,
        )
        .unwrap();
        assert!(
            (&cubic.j_star - &iterative.j_star).amax() < 1e-9,
            "mode disagreement {}",
            (&cubic.j_star - &iterative.j_star).amax()
        );
        assert_eq!(cubic.diagnostics["tap_fallback_rows"], 0.0);
    }

    #[test]
    fn tap_cubic_root_solves_the_cubic() {
        for &b in &[0.0, 1e-6, 0.01, 0.05, 0.1, 4.0 / 27.0 - 1e-9] {
            let f = tap_cubic_root(b);
            assert!((0.0..=1.0 / 3.0 + 1e-12).contains(&f), "root {f} for b={b}");
            assert!(
                (f * (1.0 - f) * (1.0 - f) - b).abs() < 1e-13,
                "residual at b={b}"
            );
        }
    }

    #[test]
    fn sho_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let l = 4;
        let mut j = DMatrix::zeros(l, l);
        for i in 0..l {
            for jdx in 0..l {
                if i != jdx {
                    j[(i, jdx)] = rng.gen_range(-0.4..0.4);
                }
            }
        }
        let theta = DVector::from_fn(l, |_, _| rng.gen_range(-0.3..0.3));
        let model = CouplingModel::new(theta, j, false).unwrap();
        let traj = simulate_gillespie(&model, 1.0, 300.0, &[1, -1, 1, -1], 12).unwrap();
        let fd = flip_decompose(&traj, 0.05, 0.0, 0, ConservationPolicy::BestEffort).unwrap();
        let x0 = DVector::from_fn(l + 1, |k, _| 0.1 * (k as f64) - 0.2);
        for row in 0..l {
            let (_, grad) = sho_row_objective(&fd, row, &x0);
            let eps = 1e-6;
            for k in 0..(l + 1) {
                let mut xp = x0.clone();
                let mut xm = x0.clone();
                xp[k] += eps;
                xm[k] -= eps;
                let (fp, _) = sho_row_objective(&fd, row, &xp);
                let (fm, _) = sho_row_objective(&fd, row, &xm);
                let fd_grad = (fp - fm) / (2.0 * eps);
                let rel = (fd_grad - grad[k]).abs() / fd_grad.abs().max(1.0);
                assert!(
                    rel < 1e-7,
                    "row {row} component {k}: fd {fd_grad} vs analytic {}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn sho_recovers_a_pair_coupling_from_a_long_run() {
        let model = pair_model(0.4, (0.1, -0.1));
        let traj = simulate_gillespie(&model, 1.0, 2e4, &[1, -1], 19).unwrap();
        let fd = flip_decompose(&traj, 0.05, 0.0, 0, ConservationPolicy::BestEffort).unwrap();
        let res = infer_sho(&fd, &ShoOptions::default()).unwrap();
        assert!(
            (res.j_star[(0, 1)] - 0.4).abs() < 0.06,
            "J*_01 = {}",
            res.j_star[(0, 1)]
        );
        assert!(
            (res.j_star[(1, 0)] - 0.4).abs() < 0.06,
            "J*_10 = {}",
            res.j_star[(1, 0)]
        );
        assert!((res.theta_star[0] - 0.1).abs() < 0.06);
        // Self-couplings of the generating model are zero.
        assert!(res.j_star[(0, 0)].abs() < 0.06);
    }

    #[test]
    fn ave_converges_to_the_generating_parameters_on_exact_inputs() {
        // Build the infinite-data inputs of a symmetric 3-spin model: the
        // Gibbs-weighted configuration ensemble and the moment identity
        // B/γ + M = ⟨tanh(H) s̃⟩ evaluated at the truth. The iteration must
        // then recover the generating parameters from a cold start.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let l = 3;
        let mut j = DMatrix::zeros(l, l);
        for i in 0..l {
            for jdx in (i + 1)..l {
                let v = rng.gen_range(-0.4..0.4);
                j[(i, jdx)] = v;
                j[(jdx, i)] = v;
            }
        }
        let theta = DVector::from_fn(l, |_, _| rng.gen_range(-0.3..0.3));
        let model = CouplingModel::new(theta.clone(), j.clone(), false).unwrap();
        let (p, _) = gibbs_distribution(&model).unwrap();
        let dim = l + 1;
        let mut m_aug = DMatrix::<f64>::zeros(l, dim);
        let mut tanh_avg = DMatrix::<f64>::zeros(l, dim);
        for (mask, &pm) in p.iter().enumerate() {
            let s = spins::config_from_mask(mask as u128, l);
            for i in 0..l {
                let si = f64::from(s[i]);
                let th = model.effective_field(&s, i).tanh();
                m_aug[(i, 0)] += pm * si;
                tanh_avg[(i, 0)] += pm * th;
                for jdx in 0..l {
                    let sj = f64::from(s[jdx]);
                    m_aug[(i, 1 + jdx)] += pm * si * sj;
                    tanh_avg[(i, 1 + jdx)] += pm * th * sj;
                }
            }
        }
        let b_aug = (&tanh_avg - &m_aug) * 1.0; // γ = 1
        let ens = ConfigEnsemble {
            l,
            configs: (0..(1u128 << l)).collect(),
            weights: p.clone(),
            t_total: 1.0,
        };
        let inp = AveInputs {
            ens,
            m_aug,
            b_aug,
            gamma: 1.0,
        };
        let res = infer_ave(
            &inp,
            &AveOptions {
                tol: 1e-12,
                ..Default::default()
            },
        )
        .unwrap();
        for i in 0..l {
            assert_abs_diff_eq!(res.theta_star[i], theta[i], epsilon = 1e-8);
            for jdx in 0..l {
                assert_abs_diff_eq!(res.j_star[(i, jdx)], j[(i, jdx)], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn ave_and_sho_agree_on_shared_data() {
        let model = pair_model(0.35, (0.0, 0.2));
        let traj = simulate_gillespie(&model, 1.0, 1e4, &[1, 1], 29).unwrap();
        let fd = flip_decompose(&traj, 0.02, 0.0, 0, ConservationPolicy::BestEffort).unwrap();
        let sho = infer_sho(&fd, &ShoOptions::default()).unwrap();
        let inp = AveInputs::from_trajectory(&traj, 0.0).unwrap();
        let ave = infer_ave(
            &inp,
            &AveOptions {
                tol: 1e-10,
                ..Default::default()
            },
        )
        .unwrap();
        // The two estimators share their expectation; on the same finite
        // data they differ only through discretization.
        assert!(
            (ave.j_star[(0, 1)] - sho.j_star[(0, 1)]).abs() < 0.03,
            "ave {} vs sho {}",
            ave.j_star[(0, 1)],
            sho.j_star[(0, 1)]
        );
        assert!((ave.theta_star[1] - sho.theta_star[1]).abs() < 0.03);
    }
}

//! Equilibrium inverse-Ising methods: naive mean field, TAP, pseudolikelihood
//! maximization, and Boltzmann-machine moment matching.
//!
//! All four assume the data are samples from the Gibbs distribution of a
//! symmetric model; applied to non-equilibrium data they return the best
//! symmetric explanation, whose quality is exactly what the evaluation
//! metrics are for.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{exact_gibbs_moments, CouplingModel, L_EXACT_MAX};
use crate::opt::{minimize_lbfgs, LbfgsOptions};
use crate::result::InferenceResult;
use crate::stats::MomentSet;
use crate::table::SampleTable;

/// Invert the connected correlation matrix, reporting a diagnosable error
/// when it is numerically singular.
fn inverse_correlations(moments: &MomentSet) -> Result<DMatrix<f64>> {
    let c = moments.c0.clone();
    let scale = c.amax();
    match c.try_inverse() {
        Some(inv) => Ok(inv),
        None => Err(Error::Singular {
            what: "connected correlation matrix".into(),
            condition: if scale > 0.0 { f64::INFINITY } else { 0.0 },
        }),
    }
}

fn checked_atanh(m: &DVector<f64>) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(m.len());
    for i in 0..m.len() {
        if m[i].abs() >= 1.0 {
            return Err(Error::Domain(format!(
                "magnetization m[{i}] = {} is saturated; regularize with a pseudocount",
                m[i]
            )));
        }
        out[i] = m[i].atanh();
    }
    Ok(out)
}

/// Naive mean-field inversion: `J* = -(c^{-1})` off the diagonal and
/// `θ*_i = atanh(m_i) - Σ_j J*_ij m_j`.
pub fn infer_nmf(moments: &MomentSet) -> Result<InferenceResult> {
    let l = moments.l;
    let cinv = inverse_correlations(moments)?;
    let mut j = DMatrix::zeros(l, l);
    for i in 0..l {
        for jdx in 0..l {
            if i != jdx {
                j[(i, jdx)] = -cinv[(i, jdx)];
            }
        }
    }
    let theta = checked_atanh(&moments.m)? - &j * &moments.m;
    let mut out = InferenceResult::new(theta, j, "nmf");
    out.record_hyper("pseudocount", moments.meta.pseudocount);
    Ok(out)
}

/// TAP inversion: per off-diagonal entry the Onsager-corrected equation
/// `2 m_i m_j J^2 + J - y = 0` with `y = -(c^{-1})_ij`, taking the root that
/// reduces to naive mean field as `m → 0`. Entries whose discriminant is
/// negative fall back to the mean-field value and are counted in the
/// diagnostics.
pub fn infer_tap(moments: &MomentSet) -> Result<InferenceResult> {
    let l = moments.l;
    let cinv = inverse_correlations(moments)?;
    let m = &moments.m;
    let mut j = DMatrix::zeros(l, l);
    let mut fallback_entries = 0u64;
    for i in 0..l {
        for jdx in 0..l {
            if i == jdx {
                continue;
            }
            let y = -cinv[(i, jdx)];
            let a = m[i] * m[jdx];
            if a.abs() < 1e-12 {
                j[(i, jdx)] = y;
                continue;
            }
            let disc = 1.0 + 8.0 * a * y;
            if disc < 0.0 {
                fallback_entries += 1;
                j[(i, jdx)] = y;
            } else {
                j[(i, jdx)] = (disc.sqrt() - 1.0) / (4.0 * a);
            }
        }
    }
    // θ from the TAP self-consistency equation, including the Onsager
    // reaction term.
    let mut theta = checked_atanh(m)? - &j * m;
    for i in 0..l {
        let mut reaction = 0.0;
        for jdx in 0..l {
            if i != jdx {
                reaction += j[(i, jdx)] * j[(i, jdx)] * (1.0 - m[jdx] * m[jdx]);
            }
        }
        theta[i] += m[i] * reaction;
    }
    let mut out = InferenceResult::new(theta, j, "tap");
    out.record_hyper("pseudocount", moments.meta.pseudocount);
    out.record_diag("tap_fallback_entries", fallback_entries as f64);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PlmOptions {
    /// L2 penalty weight; `None` selects `0.01 / n_rows`.
    pub lambda: Option<f64>,
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for PlmOptions {
    fn default() -> Self {
        PlmOptions {
            lambda: None,
            grad_tol: 1e-6,
            max_iters: 1000,
        }
    }
}

/// Negative average log conditional likelihood of spin `row` given the rest,
/// with its gradient with respect to `x = [θ_r, J_r,j for j ≠ r]` (the `j`
/// indices in ascending order), including the L2 penalty `λ x·x`.
///
/// This is the per-row objective that pseudolikelihood maximization
/// minimizes; it is exposed so the analytic gradient can be checked against
/// finite differences.
pub fn plm_row_objective(
    table: &SampleTable,
    row: usize,
    x: &DVector<f64>,
    lambda: f64,
) -> (f64, DVector<f64>) {
    let l = table.l();
    let total_w = table.total_weight();
    let others: Vec<usize> = (0..l).filter(|&jdx| jdx != row).collect();
    let mut f = 0.0;
    let mut g = DVector::<f64>::zeros(l);
    for (row_idx, srow) in table.rows_iter().enumerate() {
        let w = table.weight(row_idx) / total_w;
        let sr = f64::from(srow[row]);
        let mut h = x[0];
        for (k, &jdx) in others.iter().enumerate() {
            h += x[k + 1] * f64::from(srow[jdx]);
        }
        // -log P(s_r | rest) = log(2 cosh H) - s_r H, computed stably via
        // |H| + ln(1 + e^{-2|H|}).
        let absh = h.abs();
        f += w * (absh + (-2.0 * absh).exp().ln_1p() - sr * h);
        let resid = h.tanh() - sr;
        g[0] += w * resid;
        for (k, &jdx) in others.iter().enumerate() {
            g[k + 1] += w * resid * f64::from(srow[jdx]);
        }
    }
    f += lambda * x.dot(x);
    g.axpy(2.0 * lambda, x, 1.0);
    (f, g)
}

/// Pseudolikelihood maximization.
///
/// Each row of couplings (plus the field) is fit by minimizing the negative
/// average log conditional likelihood of that spin given the others, with an
/// L2 penalty `λ (θ_r² + Σ_j J_rj²)`. The per-spin problems are convex; the
/// estimates are symmetrized by averaging at the end.
pub fn infer_plm(table: &SampleTable, opts: &PlmOptions) -> Result<InferenceResult> {
    let l = table.l();
    let n = table.n_rows();
    let lambda = match opts.lambda {
        Some(v) if v >= 0.0 => v,
        Some(v) => {
            return Err(Error::Parameter(format!(
                "plm penalty must be nonnegative, got {v}"
            )))
        }
        None => 0.01 / n as f64,
    };
    let lbfgs = LbfgsOptions {
        grad_tol: opts.grad_tol,
        max_iters: opts.max_iters,
        ..Default::default()
    };

    let mut j_hat = DMatrix::<f64>::zeros(l, l);
    let mut theta = DVector::<f64>::zeros(l);
    let mut total_iters = 0usize;
    let mut neg_ll = 0.0f64;
    for r in 0..l {
        // Parameter vector: [θ_r, J_r,j for j != r] in ascending j.
        let others: Vec<usize> = (0..l).filter(|&jdx| jdx != r).collect();
        let eval = |x: &DVector<f64>, g: &mut DVector<f64>| -> f64 {
            let (f, grad) = plm_row_objective(table, r, x, lambda);
            g.copy_from(&grad);
            f
        };
        let out = minimize_lbfgs(DVector::zeros(l), eval, &lbfgs)?;
        if !out.converged {
            return Err(Error::NonConvergence {
                what: format!("plm row {r}"),
                iterations: out.iterations,
                residual: out.grad_norm,
            });
        }
        total_iters += out.iterations;
        neg_ll += out.f;
        theta[r] = out.x[0];
        for (k, &jdx) in others.iter().enumerate() {
            j_hat[(r, jdx)] = out.x[k + 1];
        }
    }

    let asymmetry = 0.5 * (&j_hat - j_hat.transpose()).amax();
    let j_sym = (&j_hat + j_hat.transpose()) * 0.5;
    let mut out = InferenceResult::new(theta, j_sym, "plm");
    out.record_hyper("lambda", lambda);
    out.record_hyper("grad_tol", opts.grad_tol);
    out.record_diag("row_asymmetry_before_symmetrization", asymmetry);
    out.record_diag("lbfgs_iterations_total", total_iters as f64);
    out.record_diag("neg_log_pseudolikelihood", neg_ll);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BmOptions {
    /// Learning rate for the moment-matching updates.
    pub eta: f64,
    /// Convergence threshold on the largest moment mismatch.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for BmOptions {
    fn default() -> Self {
        BmOptions {
            eta: 0.5,
            tol: 1e-7,
            max_sweeps: 50_000,
        }
    }
}

/// Boltzmann-machine learning with exact model moments.
///
/// Gradient ascent on the likelihood: `δθ = η (m_data - m_model)`,
/// `δJ = η (⟨s_i s_j⟩_data - ⟨s_i s_j⟩_model)`, with the model moments
/// computed by exact enumeration (so `L ≤ 16`). Converges to the unique
/// maximum-entropy model matching the data moments whenever they are
/// realizable.
pub fn infer_bm(moments: &MomentSet, opts: &BmOptions) -> Result<InferenceResult> {
    let l = moments.l;
    if l > L_EXACT_MAX {
        return Err(Error::Capacity(format!(
            "boltzmann-machine learning enumerates states; L = {l} exceeds {L_EXACT_MAX}"
        )));
    }
    if !(opts.eta > 0.0) || !(opts.tol > 0.0) {
        return Err(Error::Parameter(
            "bm learning rate and tolerance must be positive".into(),
        ));
    }
    let mut theta = DVector::<f64>::zeros(l);
    let mut j = DMatrix::<f64>::zeros(l, l);
    let mut best = f64::INFINITY;
    let mut rising = 0u32;
    let mut mismatch = f64::INFINITY;
    for sweep in 0..opts.max_sweeps {
        let model = CouplingModel::new(theta.clone(), j.clone(), false)?;
        let mm = exact_gibbs_moments(&model)?;
        mismatch = 0.0f64;
        for i in 0..l {
            let d = moments.m[i] - mm.m[i];
            mismatch = mismatch.max(d.abs());
            theta[i] += opts.eta * d;
        }
        for i in 0..l {
            for jdx in (i + 1)..l {
                let d = moments.raw0[(i, jdx)] - mm.raw[(i, jdx)];
                mismatch = mismatch.max(d.abs());
                j[(i, jdx)] += opts.eta * d;
                j[(jdx, i)] = j[(i, jdx)];
            }
        }
        if mismatch <= opts.tol {
            let mut out = InferenceResult::new(theta, j, "bm");
            out.record_hyper("eta", opts.eta);
            out.record_hyper("tol", opts.tol);
            out.record_diag("sweeps", (sweep + 1) as f64);
            out.record_diag("final_mismatch", mismatch);
            return Ok(out);
        }
        if mismatch < best {
            best = mismatch;
            rising = 0;
        } else {
            rising += 1;
            if rising >= 100 {
                return Err(Error::Divergence {
                    what: "bm moment matching".into(),
                    detail: format!(
                        "mismatch {mismatch:.3e} has not improved on {best:.3e} for 100 sweeps; \
                         the target moments may not be realizable"
                    ),
                });
            }
        }
    }
    Err(Error::NonConvergence {
        what: "bm moment matching".into(),
        iterations: opts.max_sweeps,
        residual: mismatch,
    })
}

/// Weighted table whose rows enumerate all configurations with their exact
/// Gibbs probabilities: the infinite-sample limit of equilibrium sampling.
/// Subject to the same size cap as any exact enumeration.
pub fn exact_table(model: &CouplingModel) -> Result<SampleTable> {
    let l = model.l();
    let (p, _) = crate::model::gibbs_distribution(model)?;
    let rows: Vec<Vec<i8>> = (0..(1u128 << l))
        .map(|mask| crate::spins::config_from_mask(mask, l))
        .collect();
    SampleTable::from_rows(&rows)?.with_weights(p)
}

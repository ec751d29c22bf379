//! Reconstruction-quality metrics for coupling matrices.
//!
//! All metrics ignore the diagonal: self-couplings are a separate question
//! from network reconstruction, and several methods leave them at zero by
//! construction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_shapes(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<usize> {
    let l = a.nrows();
    if a.ncols() != l || b.nrows() != l || b.ncols() != l {
        return Err(Error::Parameter(format!(
            "coupling matrices must both be LxL, got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if l < 2 {
        return Err(Error::Parameter("metrics need at least two spins".into()));
    }
    Ok(l)
}

/// Mean squared error over off-diagonal entries:
/// `Σ_{i≠j} (a_ij - b_ij)^2 / (L (L-1))`.
pub fn mse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let l = check_shapes(a, b)?;
    let mut acc = 0.0;
    for i in 0..l {
        for j in 0..l {
            if i != j {
                let d = a[(i, j)] - b[(i, j)];
                acc += d * d;
            }
        }
    }
    Ok(acc / (l * (l - 1)) as f64)
}

/// Scale-sensitive similarity
/// `Q = Σ_{i≠j} a_ij b_ij / Σ_{i≠j} max(a_ij², b_ij²)`.
///
/// `Q(J, J) = 1` and `Q(J, -J) = -1` exactly; a uniformly rescaled estimate
/// `c J` scores `min(c, 1/c)` for `c > 0`, so over- and under-estimation
/// are both penalized. Errors when both matrices have all-zero off-diagonals.
pub fn similarity_q(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let l = check_shapes(a, b)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..l {
        for j in 0..l {
            if i != j {
                num += a[(i, j)] * b[(i, j)];
                den += (a[(i, j)] * a[(i, j)]).max(b[(i, j)] * b[(i, j)]);
            }
        }
    }
    if den == 0.0 {
        return Err(Error::Domain(
            "similarity is undefined when both couplings are identically zero".into(),
        ));
    }
    Ok(num / den)
}

/// Indices of the `k` strongest pairs of `j` by `|j_ij + j_ji|/...` — here
/// simply by the absolute value at the unordered pair, taking the upper
/// triangle `(i < j)`. Ties break deterministically by index order.
fn top_k_pairs(j: &DMatrix<f64>, k: usize) -> Vec<(usize, usize)> {
    let l = j.nrows();
    let mut pairs: Vec<(usize, usize)> = (0..l)
        .flat_map(|i| ((i + 1)..l).map(move |jj| (i, jj)))
        .collect();
    pairs.sort_by(|&(i1, j1), &(i2, j2)| {
        let v1 = j[(i1, j1)].abs();
        let v2 = j[(i2, j2)].abs();
        v2.partial_cmp(&v1)
            .unwrap()
            .then(i1.cmp(&i2))
            .then(j1.cmp(&j2))
    });
    pairs.truncate(k);
    pairs
}

/// True-positive rate of the `k` strongest reconstructed pairs against the
/// `k` strongest true pairs (upper triangle, `|·|` magnitude).
pub fn tpr_k(j_star: &DMatrix<f64>, j_true: &DMatrix<f64>, k: usize) -> Result<f64> {
    let l = check_shapes(j_star, j_true)?;
    let n_pairs = l * (l - 1) / 2;
    if k == 0 || k > n_pairs {
        return Err(Error::Parameter(format!(
            "k must lie in [1, {n_pairs}], got {k}"
        )));
    }
    let truth: std::collections::HashSet<(usize, usize)> =
        top_k_pairs(j_true, k).into_iter().collect();
    let hits = top_k_pairs(j_star, k)
        .into_iter()
        .filter(|p| truth.contains(p))
        .count();
    Ok(hits as f64 / k as f64)
}

fn pearson_of(vals_a: &[f64], vals_b: &[f64]) -> Result<f64> {
    let n = vals_a.len() as f64;
    let ma = vals_a.iter().sum::<f64>() / n;
    let mb = vals_b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    let mut scale_a = 0.0f64;
    let mut scale_b = 0.0f64;
    for (&x, &y) in vals_a.iter().zip(vals_b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
        scale_a = scale_a.max(x.abs());
        scale_b = scale_b.max(y.abs());
    }
    // Treat round-off-sized variances as zero: a matrix whose entries agree
    // to ~1e-10 relative is constant for all practical purposes.
    let floor_a = 1e-20 * n * scale_a * scale_a;
    let floor_b = 1e-20 * n * scale_b * scale_b;
    if saa <= floor_a || sbb <= floor_b {
        return Err(Error::Domain(
            "pearson correlation is undefined for a constant matrix".into(),
        ));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Pearson correlation over all ordered off-diagonal entries. Sensitive to
/// the symmetry structure: a symmetric and an antisymmetric matrix score
/// exactly zero.
pub fn pearson_offdiag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let l = check_shapes(a, b)?;
    let mut va = Vec::with_capacity(l * (l - 1));
    let mut vb = Vec::with_capacity(l * (l - 1));
    for i in 0..l {
        for j in 0..l {
            if i != j {
                va.push(a[(i, j)]);
                vb.push(b[(i, j)]);
            }
        }
    }
    pearson_of(&va, &vb)
}

/// Pearson correlation over the upper triangle only (`i < j`): the right
/// variant when comparing two symmetric reconstructions.
pub fn pearson_upper(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let l = check_shapes(a, b)?;
    let mut va = Vec::with_capacity(l * (l - 1) / 2);
    let mut vb = Vec::with_capacity(l * (l - 1) / 2);
    for i in 0..l {
        for j in (i + 1)..l {
            va.push(a[(i, j)]);
            vb.push(b[(i, j)]);
        }
    }
    pearson_of(&va, &vb)
}

/// Root-mean-square error of the fields.
pub fn theta_rmse(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Parameter("field vectors must have equal nonzero length".into()));
    }
    Ok(((a - b).norm_squared() / a.len() as f64).sqrt())
}

/// The standard bundle of coupling metrics for one reconstruction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "L")]
    pub l: usize,
    pub mse: f64,
    pub similarity_q: f64,
    pub pearson: f64,
    pub pearson_upper: f64,
    pub tpr_k: f64,
    pub k: usize,
    pub theta_rmse: Option<f64>,
}

/// Evaluate a reconstructed coupling matrix against the generating one.
/// `k` defaults to `L` when `None` (capped at the number of pairs).
pub fn evaluate(
    j_star: &DMatrix<f64>,
    j_true: &DMatrix<f64>,
    theta: Option<(&DVector<f64>, &DVector<f64>)>,
    k: Option<usize>,
) -> Result<EvalReport> {
    let l = check_shapes(j_star, j_true)?;
    let n_pairs = l * (l - 1) / 2;
    let k = k.unwrap_or(l).min(n_pairs);
    Ok(EvalReport {
        l,
        mse: mse(j_star, j_true)?,
        similarity_q: similarity_q(j_star, j_true)?,
        pearson: pearson_offdiag(j_star, j_true)?,
        pearson_upper: pearson_upper(j_star, j_true)?,
        tpr_k: tpr_k(j_star, j_true, k)?,
        k,
        theta_rmse: theta
            .map(|(a, b)| theta_rmse(a, b))
            .transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mat(vals: &[f64], l: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(l, l, vals)
    }

    #[test]
    fn mse_hand_computed_example() {
        let a = mat(&[0.0, 0.5, -0.5, 0.0], 2);
        let b = mat(&[0.0, 0.2, -0.1, 0.0], 2);
        // Off-diagonal differences 0.3 and -0.4 over L(L-1) = 2 entries.
        assert_abs_diff_eq!(
            mse(&a, &b).unwrap(),
            (0.09 + 0.16) / 2.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn similarity_is_exactly_one_for_identical_and_minus_one_for_negated() {
        let a = mat(&[0.0, 0.5, -0.3, 0.0, 0.0, 0.7, 0.2, -0.1, 0.0], 3);
        assert_abs_diff_eq!(similarity_q(&a, &a).unwrap(), 1.0, epsilon = 1e-15);
        let neg = -a.clone();
        assert_abs_diff_eq!(similarity_q(&a, &neg).unwrap(), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn similarity_penalizes_scale() {
        let a = mat(&[0.0, 0.4, 0.4, 0.0], 2);
        let half = &a * 0.5;
        let double = &a * 2.0;
        assert_abs_diff_eq!(similarity_q(&half, &a).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(similarity_q(&double, &a).unwrap(), 0.5, epsilon = 1e-15);
        assert!(similarity_q(&(&a * 0.0), &(&a * 0.0)).is_err());
    }

    #[test]
    fn tpr_counts_shared_strongest_pairs() {
        // Truth: strongest pairs (0,1) then (2,3). Estimate: (0,1) then (1,2).
        let mut t = DMatrix::zeros(4, 4);
        t[(0, 1)] = 1.0;
        t[(2, 3)] = 0.8;
        t[(1, 2)] = 0.1;
        let mut e = DMatrix::zeros(4, 4);
        e[(0, 1)] = 0.9;
        e[(1, 2)] = 0.85;
        e[(2, 3)] = 0.1;
        assert_abs_diff_eq!(tpr_k(&e, &t, 2).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(tpr_k(&t, &t, 2).unwrap(), 1.0, epsilon = 1e-15);
        assert!(tpr_k(&e, &t, 0).is_err());
        assert!(tpr_k(&e, &t, 7).is_err());
    }

    #[test]
    fn tpr_ties_break_deterministically() {
        let mut t = DMatrix::zeros(3, 3);
        t[(0, 1)] = 0.5;
        t[(0, 2)] = 0.5;
        t[(1, 2)] = 0.5;
        // All tied: top-1 is (0,1) by index order for both matrices.
        assert_abs_diff_eq!(tpr_k(&t, &t, 1).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn symmetric_and_antisymmetric_parts_are_uncorrelated() {
        let s = mat(&[0.0, 0.7, 0.3, 0.7, 0.0, -0.2, 0.3, -0.2, 0.0], 3);
        let a = mat(&[0.0, 0.4, -0.1, -0.4, 0.0, 0.6, 0.1, -0.6, 0.0], 3);
        assert_abs_diff_eq!(pearson_offdiag(&s, &a).unwrap(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(pearson_offdiag(&s, &s).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn upper_triangle_variant_ignores_the_lower_triangle() {
        // Same upper triangle, garbage lower triangle: still correlation 1.
        let a = mat(&[0.0, 0.5, -0.2, 9.0, 0.0, 0.3, -9.0, 9.0, 0.0], 3);
        let b = mat(&[0.0, 0.5, -0.2, 0.5, 0.0, 0.3, -0.2, 0.3, 0.0], 3);
        assert_abs_diff_eq!(pearson_upper(&a, &b).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn constant_matrices_have_undefined_correlation() {
        let c = DMatrix::from_element(3, 3, 0.4);
        let v = mat(&[0.0, 0.5, -0.2, 0.1, 0.0, 0.3, -0.4, 0.2, 0.0], 3);
        assert!(pearson_offdiag(&c, &v).is_err());
    }

    #[test]
    fn report_serializes_with_all_fields() {
        let t = mat(&[0.0, 0.5, -0.3, 0.5, 0.0, 0.2, -0.3, 0.2, 0.0], 3);
        let e = mat(&[0.0, 0.4, -0.2, 0.6, 0.0, 0.15, -0.35, 0.25, 0.0], 3);
        let th = DVector::from_vec(vec![0.1, -0.1, 0.0]);
        let report = evaluate(&e, &t, Some((&th, &th)), None).unwrap();
        assert_eq!(report.k, 3);
        assert_eq!(report.theta_rmse, Some(0.0));
        let text = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.mse, report.mse);
    }
}

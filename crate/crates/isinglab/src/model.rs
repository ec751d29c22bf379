//! Coupling models, their random ensembles, and exact Gibbs reference values.
//!
//! A [`CouplingModel`] holds fields `theta` and a coupling matrix `J` for
//! the distribution `P(s) ∝ exp(Σ_i θ_i s_i + Σ_{i<j} J_ij s_i s_j)` over
//! `s ∈ {-1,+1}^L`. The same parameter container drives the asynchronous
//! dynamics, where `J` may be asymmetric and — when `self_allowed` is set —
//! may carry a nonzero diagonal.
//!
//! [`exact_gibbs_moments`] enumerates all `2^L` configurations and is the
//! ground-truth oracle for every approximate method in the crate.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spins;

/// Largest system size for which exhaustive `2^L` enumeration is attempted
/// by default.
pub const L_EXACT_MAX: usize = 16;

/// Fields and couplings of one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingModel {
    l: usize,
    theta: DVector<f64>,
    j: DMatrix<f64>,
    self_allowed: bool,
    meta: serde_json::Map<String, serde_json::Value>,
}

impl CouplingModel {
    /// Build a model, validating dimensions and the diagonal convention.
    pub fn new(theta: DVector<f64>, j: DMatrix<f64>, self_allowed: bool) -> Result<Self> {
        let l = theta.len();
        if l == 0 {
            return Err(Error::Parameter("model must have at least one spin".into()));
        }
        if j.nrows() != l || j.ncols() != l {
            return Err(Error::Parameter(format!(
                "J is {}x{} but theta has length {l}",
                j.nrows(),
                j.ncols()
            )));
        }
        for v in theta.iter().chain(j.iter()) {
            if !v.is_finite() {
                return Err(Error::Parameter("non-finite entry in theta or J".into()));
            }
        }
        if !self_allowed {
            for i in 0..l {
                if j[(i, i)] != 0.0 {
                    return Err(Error::Parameter(format!(
                        "J[{i}][{i}] = {} but self-couplings are not allowed",
                        j[(i, i)]
                    )));
                }
            }
        }
        Ok(Self {
            l,
            theta,
            j,
            self_allowed,
            meta: serde_json::Map::new(),
        })
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn j(&self) -> &DMatrix<f64> {
        &self.j
    }

    pub fn self_allowed(&self) -> bool {
        self.self_allowed
    }

    pub fn meta(&self) -> &serde_json::Map<String, serde_json::Value> {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut serde_json::Map<String, serde_json::Value> {
        &mut self.meta
    }

    /// Replace the fields, keeping the couplings.
    pub fn set_theta(&mut self, theta: DVector<f64>) -> Result<()> {
        if theta.len() != self.l {
            return Err(Error::Parameter(format!(
                "theta has length {} but model has {} spins",
                theta.len(),
                self.l
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("non-finite entry in theta".into()));
        }
        self.theta = theta;
        Ok(())
    }

    /// Largest absolute asymmetry `|J_ij - J_ji|` over all pairs.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.l {
            for jdx in (i + 1)..self.l {
                worst = worst.max((self.j[(i, jdx)] - self.j[(jdx, i)]).abs());
            }
        }
        worst
    }

    /// `Σ_i θ_i s_i + Σ_{i<j} J_ij s_i s_j` for one configuration.
    ///
    /// The diagonal of `J` contributes only a constant to the Gibbs weight
    /// and is ignored here.
    pub fn energy_score(&self, s: &[i8]) -> f64 {
        debug_assert_eq!(s.len(), self.l);
        let mut e = 0.0;
        for i in 0..self.l {
            let si = f64::from(s[i]);
            e += self.theta[i] * si;
            for jdx in (i + 1)..self.l {
                e += self.j[(i, jdx)] * si * f64::from(s[jdx]);
            }
        }
        e
    }

    /// Effective field `H_i(s) = θ_i + Σ_j J_ij s_j` acting on spin `i`.
    ///
    /// The sum runs over the full row of `J`, including a diagonal term when
    /// self-couplings are allowed.
    pub fn effective_field(&self, s: &[i8], i: usize) -> f64 {
        let mut h = self.theta[i];
        for jdx in 0..self.l {
            h += self.j[(i, jdx)] * f64::from(s[jdx]);
        }
        h
    }

    /// All effective fields at once.
    pub fn effective_fields(&self, s: &[i8]) -> DVector<f64> {
        DVector::from_fn(self.l, |i, _| self.effective_field(s, i))
    }
}

/// Sherrington-Kirkpatrick ensemble parameters.
///
/// `J = Js + k * Ja` with a symmetric part `Js` and an antisymmetric part
/// `Ja`, both with independent Gaussian entries of variance
/// `g^2 / (L (1 + k^2))`, so the variance of each off-diagonal entry of `J`
/// is `g^2 / L` regardless of the symmetry mix `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkParams {
    pub l: usize,
    pub g: f64,
    pub k: f64,
    pub seed: u64,
}

/// Draw one SK instance. The fields are set to zero; callers that want
/// nonzero fields overwrite them afterwards.
///
/// For a fixed seed the draw order is part of the contract: for each pair
/// `(i, j)` with `i < j`, in row-major order, one symmetric-part sample is
/// drawn followed by one antisymmetric-part sample.
pub fn generate_sk(params: &SkParams) -> Result<CouplingModel> {
    if params.l < 2 {
        return Err(Error::Parameter(format!(
            "SK ensemble needs l >= 2, got {}",
            params.l
        )));
    }
    if !(params.g > 0.0 && params.g.is_finite()) {
        return Err(Error::Parameter(format!(
            "SK coupling scale g must be positive, got {}",
            params.g
        )));
    }
    if !(params.k >= 0.0 && params.k.is_finite()) {
        return Err(Error::Parameter(format!(
            "SK symmetry mix k must be >= 0, got {}",
            params.k
        )));
    }
    let l = params.l;
    let sigma = params.g / ((l as f64) * (1.0 + params.k * params.k)).sqrt();
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut j = DMatrix::zeros(l, l);
    for i in 0..l {
        for jdx in (i + 1)..l {
            let s: f64 = normal.sample(&mut rng);
            let a: f64 = normal.sample(&mut rng);
            j[(i, jdx)] = s + params.k * a;
            j[(jdx, i)] = s - params.k * a;
        }
    }
    let mut model = CouplingModel::new(DVector::zeros(l), j, false)?;
    model.meta_mut().insert("ensemble".into(), "sk".into());
    model
        .meta_mut()
        .insert("g".into(), serde_json::json!(params.g));
    model
        .meta_mut()
        .insert("k".into(), serde_json::json!(params.k));
    model
        .meta_mut()
        .insert("seed".into(), serde_json::json!(params.seed));
    Ok(model)
}

/// Independent uniform fields in `[lo, hi]`, one per spin.
pub fn random_theta(l: usize, lo: f64, hi: f64, seed: u64) -> Result<DVector<f64>> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::Parameter(format!(
            "invalid field range [{lo}, {hi}]"
        )));
    }
    let dist = Uniform::new_inclusive(lo, hi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(DVector::from_fn(l, |_, _| dist.sample(&mut rng)))
}

/// Split a matrix into its symmetric and antisymmetric parts.
pub fn split_symmetry(j: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let jt = j.transpose();
    let s = (j + &jt) * 0.5;
    let a = (j - &jt) * 0.5;
    (s, a)
}

/// Exact equilibrium averages from exhaustive enumeration.
#[derive(Debug, Clone)]
pub struct GibbsMoments {
    /// Magnetizations `⟨s_i⟩`.
    pub m: DVector<f64>,
    /// Connected correlations `⟨s_i s_j⟩ - ⟨s_i⟩⟨s_j⟩` (diagonal `1 - m_i^2`).
    pub c: DMatrix<f64>,
    /// Raw second moments `⟨s_i s_j⟩` (diagonal 1).
    pub raw: DMatrix<f64>,
    /// Log partition function.
    pub logz: f64,
}

fn require_symmetric(model: &CouplingModel, what: &str) -> Result<()> {
    let scale = model.j.amax().max(1.0);
    if model.max_asymmetry() > 1e-12 * scale {
        return Err(Error::Domain(format!(
            "{what} requires a symmetric J (max asymmetry {:.3e}); \
             split off the antisymmetric part first",
            model.max_asymmetry()
        )));
    }
    Ok(())
}

fn enumerated_log_weights(model: &CouplingModel) -> Vec<f64> {
    let l = model.l;
    let n = 1usize << l;
    let mut logs = Vec::with_capacity(n);
    let mut s = vec![-1i8; l];
    for mask in 0..n as u128 {
        for (i, v) in s.iter_mut().enumerate() {
            *v = spins::spin_from_mask(mask, i);
        }
        logs.push(model.energy_score(&s));
    }
    logs
}

/// Exact Gibbs probabilities indexed by bitmask (bit `i` set ⇔ `s_i = +1`),
/// together with `log Z`.
pub fn gibbs_distribution(model: &CouplingModel) -> Result<(Vec<f64>, f64)> {
    gibbs_distribution_with_cap(model, L_EXACT_MAX)
}

/// As [`gibbs_distribution`], with an explicit enumeration cap.
pub fn gibbs_distribution_with_cap(model: &CouplingModel, cap: usize) -> Result<(Vec<f64>, f64)> {
    if model.l > cap {
        return Err(Error::Capacity(format!(
            "exhaustive enumeration limited to {cap} spins, model has {}",
            model.l
        )));
    }
    require_symmetric(model, "the Gibbs measure")?;
    let mut logs = enumerated_log_weights(model);
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for w in logs.iter_mut() {
        *w = (*w - max).exp();
        z += *w;
    }
    for w in logs.iter_mut() {
        *w /= z;
    }
    Ok((logs, max + z.ln()))
}

/// Exact magnetizations, correlations and `log Z` by `2^L` enumeration.
pub fn exact_gibbs_moments(model: &CouplingModel) -> Result<GibbsMoments> {
    exact_gibbs_moments_with_cap(model, L_EXACT_MAX)
}

/// As [`exact_gibbs_moments`], with an explicit enumeration cap.
pub fn exact_gibbs_moments_with_cap(model: &CouplingModel, cap: usize) -> Result<GibbsMoments> {
    let (probs, logz) = gibbs_distribution_with_cap(model, cap)?;
    let l = model.l;
    let mut m = DVector::zeros(l);
    let mut raw = DMatrix::zeros(l, l);
    let mut s = vec![0.0f64; l];
    for (mask, &p) in probs.iter().enumerate() {
        for (i, v) in s.iter_mut().enumerate() {
            *v = f64::from(spins::spin_from_mask(mask as u128, i));
        }
        for i in 0..l {
            m[i] += p * s[i];
            for jdx in i..l {
                raw[(i, jdx)] += p * s[i] * s[jdx];
            }
        }
    }
    for i in 0..l {
        for jdx in 0..i {
            raw[(i, jdx)] = raw[(jdx, i)];
        }
    }
    let mut c: DMatrix<f64> = &raw - &m * m.transpose();
    // The diagonal is fixed by s_i^2 = 1; rewrite it to avoid round-off.
    for i in 0..l {
        raw[(i, i)] = 1.0;
        c[(i, i)] = 1.0 - m[i] * m[i];
    }
    Ok(GibbsMoments { m, c, raw, logz })
}

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ModelJson {
    #[serde(rename = "L")]
    l: usize,
    theta: Vec<f64>,
    #[serde(rename = "J")]
    j: Vec<Vec<f64>>,
    self_allowed: bool,
    #[serde(default)]
    meta: serde_json::Map<String, serde_json::Value>,
}

impl CouplingModel {
    pub fn to_json_string(&self) -> Result<String> {
        let rows: Vec<Vec<f64>> = (0..self.l)
            .map(|i| (0..self.l).map(|jdx| self.j[(i, jdx)]).collect())
            .collect();
        let doc = ModelJson {
            l: self.l,
            theta: self.theta.iter().cloned().collect(),
            j: rows,
            self_allowed: self.self_allowed,
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: ModelJson = serde_json::from_str(text)?;
        if doc.theta.len() != doc.l {
            return Err(Error::Format(format!(
                "model file declares L={} but theta has {} entries",
                doc.l,
                doc.theta.len()
            )));
        }
        if doc.j.len() != doc.l || doc.j.iter().any(|row| row.len() != doc.l) {
            return Err(Error::Format(format!(
                "model file declares L={} but J is not {0}x{0}",
                doc.l
            )));
        }
        let theta = DVector::from_vec(doc.theta);
        let j = DMatrix::from_fn(doc.l, doc.l, |i, jdx| doc.j[i][jdx]);
        let mut model = CouplingModel::new(theta, j, doc.self_allowed)
            .map_err(|e| Error::Format(format!("invalid model file: {e}")))?;
        model.meta = doc.meta;
        Ok(model)
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()? + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sym_pair_model(j12: f64, theta: f64) -> CouplingModel {
        let mut j = DMatrix::zeros(2, 2);
        j[(0, 1)] = j12;
        j[(1, 0)] = j12;
        CouplingModel::new(DVector::from_element(2, theta), j, false).unwrap()
    }

    #[test]
    fn single_free_spin_has_log2_partition() {
        let model =
            CouplingModel::new(DVector::zeros(1), DMatrix::zeros(1, 1), false).unwrap();
        let g = exact_gibbs_moments(&model).unwrap();
        assert_abs_diff_eq!(g.logz, std::f64::consts::LN_2, epsilon = 1e-14);
        assert_abs_diff_eq!(g.m[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.c[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn three_free_spins_have_3ln2_partition_and_unit_correlations() {
        let model =
            CouplingModel::new(DVector::zeros(3), DMatrix::zeros(3, 3), false).unwrap();
        let g = exact_gibbs_moments(&model).unwrap();
        assert_abs_diff_eq!(g.logz, 3.0 * std::f64::consts::LN_2, epsilon = 1e-13);
        for i in 0..3 {
            assert_abs_diff_eq!(g.m[i], 0.0, epsilon = 1e-14);
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(g.c[(i, j)], expect, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn single_spin_in_field_matches_tanh() {
        let model = CouplingModel::new(
            DVector::from_element(1, 0.7),
            DMatrix::zeros(1, 1),
            false,
        )
        .unwrap();
        let g = exact_gibbs_moments(&model).unwrap();
        assert_abs_diff_eq!(g.m[0], 0.7f64.tanh(), epsilon = 1e-14);
        assert_abs_diff_eq!(g.logz, (2.0 * 0.7f64.cosh()).ln(), epsilon = 1e-14);
    }

    #[test]
    fn coupled_pair_matches_tanh_of_coupling() {
        let g = exact_gibbs_moments(&sym_pair_model(0.5, 0.0)).unwrap();
        assert_abs_diff_eq!(g.raw[(0, 1)], 0.5f64.tanh(), epsilon = 1e-14);
        assert_abs_diff_eq!(g.c[(0, 1)], 0.5f64.tanh(), epsilon = 1e-14);
        assert_abs_diff_eq!(g.m[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.m[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn correlations_are_symmetric_with_consistent_diagonal() {
        let mut model = generate_sk(&SkParams {
            l: 6,
            g: 0.4,
            k: 0.0,
            seed: 11,
        })
        .unwrap();
        model
            .set_theta(random_theta(6, -0.5, 0.5, 3).unwrap())
            .unwrap();
        let g = exact_gibbs_moments(&model).unwrap();
        for i in 0..6 {
            assert_abs_diff_eq!(g.c[(i, i)], 1.0 - g.m[i] * g.m[i], epsilon = 1e-14);
            for j in 0..6 {
                assert_abs_diff_eq!(g.c[(i, j)], g.c[(j, i)], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn log_partition_is_permutation_invariant() {
        let mut model = generate_sk(&SkParams {
            l: 6,
            g: 0.5,
            k: 0.0,
            seed: 5,
        })
        .unwrap();
        model
            .set_theta(random_theta(6, -0.4, 0.4, 9).unwrap())
            .unwrap();
        // Reverse the spin labels.
        let l = model.l();
        let theta_p = DVector::from_fn(l, |i, _| model.theta()[l - 1 - i]);
        let j_p = DMatrix::from_fn(l, l, |i, j| model.j()[(l - 1 - i, l - 1 - j)]);
        let permuted = CouplingModel::new(theta_p, j_p, false).unwrap();
        let a = exact_gibbs_moments(&model).unwrap();
        let b = exact_gibbs_moments(&permuted).unwrap();
        assert_abs_diff_eq!(a.logz, b.logz, epsilon = 1e-11);
        assert_abs_diff_eq!(a.m[0], b.m[l - 1], epsilon = 1e-12);
    }

    #[test]
    fn gibbs_distribution_is_normalized() {
        let model = generate_sk(&SkParams {
            l: 8,
            g: 0.6,
            k: 0.0,
            seed: 2,
        })
        .unwrap();
        let (p, _logz) = gibbs_distribution(&model).unwrap();
        assert_eq!(p.len(), 256);
        assert!(p.iter().all(|&v| v >= 0.0));
        let sum: f64 = p.iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let model = generate_sk(&SkParams {
            l: 6,
            g: 0.3,
            k: 0.0,
            seed: 1,
        })
        .unwrap();
        let err = exact_gibbs_moments_with_cap(&model, 5).unwrap_err();
        assert!(matches!(err, Error::Capacity(_)));
    }

    #[test]
    fn asymmetric_couplings_are_rejected_by_gibbs_enumeration() {
        let model = generate_sk(&SkParams {
            l: 5,
            g: 0.3,
            k: 1.0,
            seed: 4,
        })
        .unwrap();
        let err = exact_gibbs_moments(&model).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn sk_with_k0_is_exactly_symmetric_and_zero_diagonal() {
        let model = generate_sk(&SkParams {
            l: 40,
            g: 0.3,
            k: 0.0,
            seed: 123,
        })
        .unwrap();
        assert_eq!(model.max_asymmetry(), 0.0);
        for i in 0..40 {
            assert_eq!(model.j()[(i, i)], 0.0);
        }
    }

    #[test]
    fn sk_draw_is_deterministic_per_seed() {
        let p = SkParams {
            l: 30,
            g: 0.4,
            k: 0.7,
            seed: 99,
        };
        let a = generate_sk(&p).unwrap();
        let b = generate_sk(&p).unwrap();
        assert_eq!(a.j(), b.j());
        let c = generate_sk(&SkParams { seed: 100, ..p }).unwrap();
        assert_ne!(a.j(), c.j());
    }

    #[test]
    fn sk_entry_variance_is_g2_over_l_independent_of_k() {
        let p = SkParams {
            l: 200,
            g: 0.5,
            k: 0.5,
            seed: 7,
        };
        let model = generate_sk(&p).unwrap();
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut n = 0.0;
        for i in 0..200 {
            for j in 0..200 {
                if i != j {
                    let v = model.j()[(i, j)];
                    sum += v;
                    sum2 += v * v;
                    n += 1.0;
                }
            }
        }
        let var = sum2 / n - (sum / n) * (sum / n);
        let expect = p.g * p.g / (p.l as f64);
        assert!(
            (var - expect).abs() < 0.05 * expect,
            "sample variance {var:.6e} vs expected {expect:.6e}"
        );
    }

    #[test]
    fn sk_with_k1_has_uncorrelated_transposed_entries() {
        let model = generate_sk(&SkParams {
            l: 500,
            g: 1.0,
            k: 1.0,
            seed: 7,
        })
        .unwrap();
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy, mut n) =
            (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..500 {
            for j in (i + 1)..500 {
                let x = model.j()[(i, j)];
                let y = model.j()[(j, i)];
                sx += x;
                sy += y;
                sxx += x * x;
                syy += y * y;
                sxy += x * y;
                n += 1.0;
            }
        }
        let cov = sxy / n - (sx / n) * (sy / n);
        let vx = sxx / n - (sx / n) * (sx / n);
        let vy = syy / n - (sy / n) * (sy / n);
        let corr = cov / (vx * vy).sqrt();
        assert!(corr.abs() < 0.1, "corr(J_ij, J_ji) = {corr:.4}");
    }

    #[test]
    fn split_symmetry_recomposes_and_separates() {
        let model = generate_sk(&SkParams {
            l: 200,
            g: 0.5,
            k: 1.0,
            seed: 21,
        })
        .unwrap();
        let (s, a) = split_symmetry(model.j());
        let recomposed = &s + &a;
        assert!((recomposed - model.j()).amax() < 1e-12);
        assert!((&s - s.transpose()).amax() < 1e-15);
        assert!((&a + a.transpose()).amax() < 1e-15);
        // At k = 1 the two parts carry comparable weight.
        let ratio = s.norm() / a.norm();
        assert!(
            (ratio - 1.0).abs() < 0.1,
            "Frobenius ratio symmetric/antisymmetric = {ratio:.4}"
        );
    }

    #[test]
    fn split_symmetry_of_symmetric_matrix_has_zero_antisymmetric_part() {
        let model = generate_sk(&SkParams {
            l: 20,
            g: 0.3,
            k: 0.0,
            seed: 3,
        })
        .unwrap();
        let (s, a) = split_symmetry(model.j());
        assert!(a.amax() == 0.0);
        assert_eq!(&s, model.j());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut model = generate_sk(&SkParams {
            l: 7,
            g: 0.37,
            k: 0.3,
            seed: 17,
        })
        .unwrap();
        model
            .set_theta(random_theta(7, -0.2, 0.2, 5).unwrap())
            .unwrap();
        let text = model.to_json_string().unwrap();
        let back = CouplingModel::from_json_str(&text).unwrap();
        assert_eq!(model.theta(), back.theta());
        assert_eq!(model.j(), back.j());
        assert_eq!(model.self_allowed(), back.self_allowed());
    }

    #[test]
    fn malformed_model_json_is_rejected() {
        let bad = r#"{"L": 3, "theta": [0.0, 0.0], "J": [[0.0]], "self_allowed": false}"#;
        assert!(CouplingModel::from_json_str(bad).is_err());
    }

    #[test]
    fn nonzero_diagonal_requires_self_allowed() {
        let mut j = DMatrix::zeros(2, 2);
        j[(0, 0)] = 0.5;
        assert!(CouplingModel::new(DVector::zeros(2), j.clone(), false).is_err());
        assert!(CouplingModel::new(DVector::zeros(2), j, true).is_ok());
    }

    #[test]
    fn sk_parameter_validation() {
        assert!(generate_sk(&SkParams {
            l: 1,
            g: 0.3,
            k: 0.0,
            seed: 0
        })
        .is_err());
        assert!(generate_sk(&SkParams {
            l: 5,
            g: 0.0,
            k: 0.0,
            seed: 0
        })
        .is_err());
        assert!(generate_sk(&SkParams {
            l: 5,
            g: 0.3,
            k: -0.5,
            seed: 0
        })
        .is_err());
    }
}

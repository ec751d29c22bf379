//! Wright-Fisher evolution with epistatic fitness, and fitness
//! reconstruction from population snapshots.
//!
//! A genome is a chain of `L` binary loci `s_i = ±1` with log-fitness
//! `F(s) = f0 + Σ_i f_i s_i + Σ_{i<j} f_ij s_i s_j`. Each generation,
//! offspring are drawn fitness-proportionally; with probability `r` an
//! offspring recombines two parents through a Markov crossover (the
//! template switches parent with probability `rho` between adjacent loci),
//! otherwise it clones one parent. Every locus then mutates independently
//! with probability `mu`.
//!
//! In the recombination-dominated regime the stationary genotype
//! distribution is Gibbs-like with couplings `f_ij / (r c_ij)`, where
//! `c_ij` is the crossover separation probability — so an inverse-Ising
//! method run on snapshots, followed by the `r c_ij` rescaling, recovers
//! the epistatic fitness components.

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{infer_nmf, infer_plm, PlmOptions};
use crate::error::{Error, Result};
use crate::result::InferenceResult;
use crate::stats::sample_moments;
use crate::table::SampleTable;

/// Log-fitness parameters: constant, additive, and pairwise-epistatic.
#[derive(Debug, Clone)]
pub struct FitnessParams {
    pub l: usize,
    pub f0: f64,
    pub f: DVector<f64>,
    /// Symmetric epistasis matrix with zero diagonal; only `i < j` entries
    /// enter the fitness sum.
    pub fij: DMatrix<f64>,
}

impl FitnessParams {
    pub fn new(f0: f64, f: DVector<f64>, fij: DMatrix<f64>) -> Result<Self> {
        let l = f.len();
        if fij.nrows() != l || fij.ncols() != l {
            return Err(Error::Parameter("fitness matrix must be LxL".into()));
        }
        if !f0.is_finite()
            || f.iter().any(|v| !v.is_finite())
            || fij.iter().any(|v| !v.is_finite())
        {
            return Err(Error::Parameter("fitness parameters must be finite".into()));
        }
        for i in 0..l {
            if fij[(i, i)] != 0.0 {
                return Err(Error::Parameter("fitness matrix diagonal must be zero".into()));
            }
            for j in 0..l {
                if (fij[(i, j)] - fij[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Parameter("fitness matrix must be symmetric".into()));
                }
            }
        }
        Ok(FitnessParams { l, f0, f, fij })
    }

    /// Gaussian random epistasis: `f_ij ~ N(0, sigma²)` i.i.d. over pairs
    /// `i < j` in row-major order, additive part zero.
    pub fn random_epistatic(l: usize, sigma: f64, seed: u64) -> Result<Self> {
        if l < 2 {
            return Err(Error::Parameter("need at least two loci".into()));
        }
        if !(sigma > 0.0) {
            return Err(Error::Parameter(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = rand_distr::Normal::new(0.0, sigma)
            .map_err(|e| Error::Parameter(e.to_string()))?;
        let mut fij = DMatrix::zeros(l, l);
        for i in 0..l {
            for j in (i + 1)..l {
                let v = normal.sample(&mut rng);
                fij[(i, j)] = v;
                fij[(j, i)] = v;
            }
        }
        FitnessParams::new(0.0, DVector::zeros(l), fij)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let doc = FitnessJson {
            l: self.l,
            f0: self.f0,
            f: self.f.iter().cloned().collect(),
            fij: (0..self.l)
                .map(|i| (0..self.l).map(|j| self.fij[(i, j)]).collect())
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: FitnessJson = serde_json::from_str(text)?;
        let l = doc.l;
        if doc.f.len() != l || doc.fij.len() != l || doc.fij.iter().any(|r| r.len() != l) {
            return Err(Error::Format("fitness dimensions are inconsistent".into()));
        }
        FitnessParams::new(
            doc.f0,
            DVector::from_vec(doc.f),
            DMatrix::from_fn(l, l, |i, j| doc.fij[i][j]),
        )
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()? + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Log-fitness of one genome.
    pub fn log_fitness(&self, s: &[i8]) -> f64 {
        let mut fit = self.f0;
        for i in 0..self.l {
            let si = f64::from(s[i]);
            fit += self.f[i] * si;
            for j in (i + 1)..self.l {
                fit += self.fij[(i, j)] * si * f64::from(s[j]);
            }
        }
        fit
    }
}

#[derive(Serialize, Deserialize)]
struct FitnessJson {
    #[serde(rename = "L")]
    l: usize,
    f0: f64,
    f: Vec<f64>,
    fij: Vec<Vec<f64>>,
}

/// Wright-Fisher run parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolutionParams {
    pub n_pop: usize,
    pub n_generations: usize,
    /// Outcrossing probability per offspring.
    pub r: f64,
    /// Crossover switch probability between adjacent loci.
    pub rho: f64,
    /// Per-locus mutation probability per generation.
    pub mu: f64,
    pub seed: u64,
    /// Record every k-th generation (the initial population is generation 0
    /// and is always recorded).
    pub snapshot_every: usize,
}

impl EvolutionParams {
    fn validate(&self) -> Result<()> {
        if self.n_pop < 2 {
            return Err(Error::Parameter("population must have at least 2 members".into()));
        }
        if self.n_generations == 0 {
            return Err(Error::Parameter("need at least one generation".into()));
        }
        for (name, v) in [("r", self.r), ("rho", self.rho), ("mu", self.mu)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Parameter(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        if self.snapshot_every == 0 {
            return Err(Error::Parameter("snapshot interval must be positive".into()));
        }
        Ok(())
    }
}

/// Recorded populations of one run.
#[derive(Debug, Clone)]
pub struct PopulationSeries {
    pub l: usize,
    pub fitness_meta: serde_json::Map<String, serde_json::Value>,
    pub evolution: EvolutionParams,
    /// `(generation, population)` in ascending generation order.
    pub snapshots: Vec<(u64, SampleTable)>,
}

impl PopulationSeries {
    /// Snapshots after discarding the first `burn_in_fraction` of the run.
    pub fn production_snapshots(&self, burn_in_fraction: f64) -> Result<Vec<&SampleTable>> {
        if !(0.0..1.0).contains(&burn_in_fraction) {
            return Err(Error::Parameter(format!(
                "burn-in fraction must lie in [0, 1), got {burn_in_fraction}"
            )));
        }
        let cut = (self.evolution.n_generations as f64 * burn_in_fraction).ceil() as u64;
        let kept: Vec<&SampleTable> = self
            .snapshots
            .iter()
            .filter(|(g, _)| *g >= cut)
            .map(|(_, t)| t)
            .collect();
        if kept.is_empty() {
            return Err(Error::Parameter(
                "burn-in leaves no snapshots to analyze".into(),
            ));
        }
        Ok(kept)
    }
}

/// Probability that loci `i` and `j` of a recombinant offspring come from
/// different parents: `(1 - (1-2ρ)^{|i-j|}) / 2`, zero on the diagonal.
pub fn crossover_cij(l: usize, rho: f64) -> Result<DMatrix<f64>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Parameter(format!("rho must lie in [0, 1], got {rho}")));
    }
    let mut c = DMatrix::zeros(l, l);
    for i in 0..l {
        for j in 0..l {
            if i != j {
                let d = (i as i64 - j as i64).unsigned_abs() as u32;
                c[(i, j)] = (1.0 - (1.0 - 2.0 * rho).powi(d as i32)) / 2.0;
            }
        }
    }
    Ok(c)
}

/// Run Wright-Fisher evolution and record snapshots.
///
/// Random draws use a single `ChaCha8` stream in a fixed order: the initial
/// population locus by locus; then per generation, for each offspring the
/// outcrossing coin, the parent index draw(s), the crossover template
/// (first-locus coin plus `L-1` switch coins) when outcrossing, and finally
/// the mutation coins locus by locus over the whole new population.
pub fn evolve(fitness: &FitnessParams, params: &EvolutionParams) -> Result<PopulationSeries> {
    params.validate()?;
    let l = fitness.l;
    let n = params.n_pop;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let unit = Uniform::new(0.0f64, 1.0);

    let mut pop: Vec<i8> = (0..n * l)
        .map(|_| if rng.gen::<bool>() { 1i8 } else { -1 })
        .collect();
    let mut snapshots: Vec<(u64, SampleTable)> = Vec::new();
    let record = |snapshots: &mut Vec<(u64, SampleTable)>, gen: u64, pop: &[i8]| -> Result<()> {
        snapshots.push((gen, SampleTable::new(l, pop.to_vec())?));
        Ok(())
    };
    record(&mut snapshots, 0, &pop)?;

    let mut weights = vec![0.0f64; n];
    let mut cumulative = vec![0.0f64; n];
    let mut next = vec![0i8; n * l];
    for gen in 1..=params.n_generations {
        // Fitness-proportional weights, stabilized by the maximum.
        let mut fmax = f64::NEG_INFINITY;
        for k in 0..n {
            weights[k] = fitness.log_fitness(&pop[k * l..(k + 1) * l]);
            fmax = fmax.max(weights[k]);
        }
        let mut total = 0.0;
        for k in 0..n {
            total += (weights[k] - fmax).exp();
            cumulative[k] = total;
        }
        let draw_parent = |rng: &mut ChaCha8Rng| -> usize {
            let u = unit.sample(rng) * total;
            cumulative.partition_point(|&c| c < u).min(n - 1)
        };

        for k in 0..n {
            let child = &mut next[k * l..(k + 1) * l];
            if unit.sample(&mut rng) < params.r {
                let pa = draw_parent(&mut rng);
                let pb = draw_parent(&mut rng);
                // Markov crossover template: true = read from parent a.
                let mut from_a = rng.gen::<bool>();
                for (i, c) in child.iter_mut().enumerate() {
                    if i > 0 && unit.sample(&mut rng) < params.rho {
                        from_a = !from_a;
                    }
                    let src = if from_a { pa } else { pb };
                    *c = pop[src * l + i];
                }
            } else {
                let p = draw_parent(&mut rng);
                child.copy_from_slice(&pop[p * l..(p + 1) * l]);
            }
        }
        if params.mu > 0.0 {
            for site in next.iter_mut() {
                if unit.sample(&mut rng) < params.mu {
                    *site = -*site;
                }
            }
        }
        std::mem::swap(&mut pop, &mut next);
        if gen % params.snapshot_every == 0 || gen == params.n_generations {
            record(&mut snapshots, gen as u64, &pop)?;
        }
    }

    let mut fitness_meta = serde_json::Map::new();
    fitness_meta.insert("f0".into(), fitness.f0.into());
    Ok(PopulationSeries {
        l,
        fitness_meta,
        evolution: params.clone(),
        snapshots,
    })
}

/// Which inverse-Ising engine analyzes the snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DcaMethod {
    Nmf,
    Plm,
}

/// Whether snapshots are analyzed one by one or pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnsMode {
    /// Infer per snapshot, average the couplings, then rescale.
    SingleTime,
    /// Pool all production snapshots into one table, infer once, rescale.
    AllTime,
}

#[derive(Debug, Clone)]
pub struct KnsOptions {
    pub mode: KnsMode,
    pub dca: DcaMethod,
    /// Pseudocount for the moment estimates; `None` selects `1/n_pop`.
    pub pseudocount: Option<f64>,
    /// Fraction of early generations discarded.
    pub burn_in_fraction: f64,
}

impl Default for KnsOptions {
    fn default() -> Self {
        KnsOptions {
            mode: KnsMode::AllTime,
            dca: DcaMethod::Nmf,
            pseudocount: None,
            burn_in_fraction: 0.2,
        }
    }
}

fn dca_couplings(
    table: &SampleTable,
    dca: DcaMethod,
    pseudocount: f64,
) -> Result<InferenceResult> {
    match dca {
        DcaMethod::Nmf => {
            let ms = sample_moments(table, pseudocount)?;
            infer_nmf(&ms)
        }
        DcaMethod::Plm => infer_plm(table, &PlmOptions::default()),
    }
}

/// Reconstruct epistatic fitness from population snapshots: run an
/// inverse-Ising method on the genotype statistics, then rescale each pair
/// by the recombination factor, `f*_ij = J*_ij · r · c_ij`.
///
/// The additive part is reported unscaled as the inferred fields — in the
/// Gibbs-like stationary state the field mixes `f_i` with mutation pressure,
/// so only its coupling part has a clean interpretation.
pub fn infer_fitness_kns(
    series: &PopulationSeries,
    opts: &KnsOptions,
) -> Result<InferenceResult> {
    let l = series.l;
    let n_pop = series.evolution.n_pop;
    let pseudocount = match opts.pseudocount {
        Some(v) => v,
        None => 1.0 / n_pop as f64,
    };
    let kept = series.production_snapshots(opts.burn_in_fraction)?;
    let (mut j_mean, theta_mean, used) = match opts.mode {
        KnsMode::AllTime => {
            let pooled = SampleTable::concat(&kept)?;
            let res = dca_couplings(&pooled, opts.dca, pseudocount)?;
            (res.j_star, res.theta_star, kept.len())
        }
        KnsMode::SingleTime => {
            let mut j_acc = DMatrix::<f64>::zeros(l, l);
            let mut th_acc = DVector::<f64>::zeros(l);
            for t in &kept {
                let res = dca_couplings(t, opts.dca, pseudocount)?;
                j_acc += res.j_star;
                th_acc += res.theta_star;
            }
            let nk = kept.len() as f64;
            (j_acc / nk, th_acc / nk, kept.len())
        }
    };
    let c = crossover_cij(l, series.evolution.rho)?;
    let r = series.evolution.r;
    for i in 0..l {
        for jdx in 0..l {
            if i != jdx {
                j_mean[(i, jdx)] *= r * c[(i, jdx)];
            } else {
                j_mean[(i, jdx)] = 0.0;
            }
        }
    }
    let mut out = InferenceResult::new(
        theta_mean,
        j_mean,
        match (opts.mode, opts.dca) {
            (KnsMode::AllTime, DcaMethod::Nmf) => "kns-alltime-nmf",
            (KnsMode::AllTime, DcaMethod::Plm) => "kns-alltime-plm",
            (KnsMode::SingleTime, DcaMethod::Nmf) => "kns-singletime-nmf",
            (KnsMode::SingleTime, DcaMethod::Plm) => "kns-singletime-plm",
        },
    );
    out.record_hyper("pseudocount", pseudocount);
    out.record_hyper("burn_in_fraction", opts.burn_in_fraction);
    out.record_hyper("r", r);
    out.record_hyper("rho", series.evolution.rho);
    out.record_diag("snapshots_used", used as f64);
    Ok(out)
}

/// Relative reconstruction error
/// `sqrt( Σ_{i≠j} (f*_ij - f_ij)² / Σ_{i≠j} f_ij² )`.
pub fn relative_rmse(f_star: &DMatrix<f64>, f_true: &DMatrix<f64>) -> Result<f64> {
    let l = f_true.nrows();
    if f_star.nrows() != l || f_star.ncols() != l || f_true.ncols() != l {
        return Err(Error::Parameter("fitness matrices must both be LxL".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..l {
        for j in 0..l {
            if i != j {
                let d = f_star[(i, j)] - f_true[(i, j)];
                num += d * d;
                den += f_true[(i, j)] * f_true[(i, j)];
            }
        }
    }
    if den == 0.0 {
        return Err(Error::Domain(
            "relative error undefined for zero true epistasis".into(),
        ));
    }
    Ok((num / den).sqrt())
}

/// Which parameter spans the first axis of a phase diagram.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "axis", content = "values")]
pub enum SweepAxis {
    /// Mutation rate per locus.
    Mu(Vec<f64>),
    /// Epistasis strength (standard deviation of `f_ij`).
    Sigma(Vec<f64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Mu(_) => "mu",
            SweepAxis::Sigma(_) => "sigma",
        }
    }
    pub fn values(&self) -> &[f64] {
        match self {
            SweepAxis::Mu(v) => v,
            SweepAxis::Sigma(v) => v,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhaseDiagramParams {
    pub l: usize,
    /// Epistasis strength used when the first axis sweeps `mu`.
    pub sigma: f64,
    pub axis1: SweepAxis,
    /// Outcrossing rates spanning the second axis.
    pub r_values: Vec<f64>,
    /// Base evolution parameters; `r` (and `mu` when swept) are overridden
    /// per cell, and each cell gets an independent seed stream.
    pub base: EvolutionParams,
    pub kns: KnsOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellFailure {
    pub i1: usize,
    pub i2: usize,
    pub message: String,
}

/// Reconstruction quality over a 2-D parameter grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseDiagram {
    #[serde(rename = "L")]
    pub l: usize,
    pub axis1_name: String,
    pub axis1: Vec<f64>,
    pub r_values: Vec<f64>,
    /// `rel_rmse[a][b]` for `axis1[a]`, `r_values[b]`; `NaN` marks failures.
    pub rel_rmse: Vec<Vec<f64>>,
    pub failures: Vec<CellFailure>,
}

impl PhaseDiagram {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()? + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// CSV export: one row per cell.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "{},r,rel_rmse", self.axis1_name)?;
        for (a, &v1) in self.axis1.iter().enumerate() {
            for (b, &rv) in self.r_values.iter().enumerate() {
                writeln!(out, "{:.16e},{:.16e},{:.16e}", v1, rv, self.rel_rmse[a][b])?;
            }
        }
        Ok(())
    }
}

/// Map reconstruction quality across the parameter grid. Each cell draws
/// its own fitness realization and evolution from an independent, seeded
/// random stream, so the diagram is reproducible and cells are independent.
pub fn phase_diagram(params: &PhaseDiagramParams) -> Result<PhaseDiagram> {
    let ax1 = params.axis1.values().to_vec();
    if ax1.is_empty() || params.r_values.is_empty() {
        return Err(Error::Parameter("phase diagram axes must be non-empty".into()));
    }
    let n2 = params.r_values.len();
    let cells: Vec<(usize, usize)> = (0..ax1.len())
        .flat_map(|a| (0..n2).map(move |b| (a, b)))
        .collect();
    let run_cell = |&(a, b): &(usize, usize)| -> (usize, usize, std::result::Result<f64, String>) {
        let cell_id = (a * n2 + b) as u64;
        let sigma = match &params.axis1 {
            SweepAxis::Sigma(v) => v[a],
            SweepAxis::Mu(_) => params.sigma,
        };
        let mut evo = params.base.clone();
        evo.r = params.r_values[b];
        if let SweepAxis::Mu(v) = &params.axis1 {
            evo.mu = v[a];
        }
        // Independent deterministic streams per cell.
        let mut seed_rng = ChaCha8Rng::seed_from_u64(params.base.seed);
        seed_rng.set_stream(2 * cell_id);
        let fitness_seed = seed_rng.gen::<u64>();
        seed_rng.set_stream(2 * cell_id + 1);
        evo.seed = seed_rng.gen::<u64>();
        let outcome = (|| -> Result<f64> {
            let fitness = FitnessParams::random_epistatic(params.l, sigma, fitness_seed)?;
            let series = evolve(&fitness, &evo)?;
            let res = infer_fitness_kns(&series, &params.kns)?;
            relative_rmse(&res.j_star, &fitness.fij)
        })();
        (a, b, outcome.map_err(|e| e.to_string()))
    };
    let results: Vec<(usize, usize, std::result::Result<f64, String>)> = {
        use rayon::prelude::*;
        cells.par_iter().map(run_cell).collect()
    };
    let mut rel_rmse = vec![vec![f64::NAN; n2]; ax1.len()];
    let mut failures = Vec::new();
    for (a, b, out) in results {
        match out {
            Ok(v) => rel_rmse[a][b] = v,
            Err(message) => failures.push(CellFailure { i1: a, i2: b, message }),
        }
    }
    Ok(PhaseDiagram {
        l: params.l,
        axis1_name: params.axis1.name().into(),
        axis1: ax1,
        r_values: params.r_values.clone(),
        rel_rmse,
        failures,
    })
}

// ---------------------------------------------------------------------------
// Series file format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SeriesHeader {
    #[serde(rename = "L")]
    l: usize,
    n_snapshots: usize,
    evolution: EvolutionParams,
    fitness_meta: serde_json::Map<String, serde_json::Value>,
}

impl PopulationSeries {
    /// One JSON header line, then `generation,<config string>` rows.
    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header = SeriesHeader {
            l: self.l,
            n_snapshots: self.snapshots.len(),
            evolution: self.evolution.clone(),
            fitness_meta: self.fitness_meta.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        for (gen, table) in &self.snapshots {
            for row in table.rows_iter() {
                writeln!(out, "{},{}", gen, crate::spins::config_to_string(row))?;
            }
        }
        Ok(())
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header: SeriesHeader = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| Error::Format("empty population file".into()))?,
        )?;
        let mut snapshots: Vec<(u64, SampleTable)> = Vec::new();
        let mut current_gen: Option<u64> = None;
        let mut rows: Vec<i8> = Vec::new();
        let flush = |gen: Option<u64>, rows: &mut Vec<i8>,
                         snaps: &mut Vec<(u64, SampleTable)>|
         -> Result<()> {
            if let Some(g) = gen {
                snaps.push((g, SampleTable::new(header.l, std::mem::take(rows))?));
            }
            Ok(())
        };
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let (gen_str, config) = line.split_once(',').ok_or_else(|| {
                Error::Format(format!("line {}: expected 'generation,config'", lineno + 2))
            })?;
            let gen: u64 = gen_str.parse().map_err(|_| {
                Error::Format(format!("line {}: bad generation '{gen_str}'", lineno + 2))
            })?;
            if current_gen != Some(gen) {
                flush(current_gen, &mut rows, &mut snapshots)?;
                current_gen = Some(gen);
            }
            let cfg = crate::spins::config_from_string(config)?;
            if cfg.len() != header.l {
                return Err(Error::Format(format!(
                    "line {}: config has {} loci, expected {}",
                    lineno + 2,
                    cfg.len(),
                    header.l
                )));
            }
            rows.extend_from_slice(&cfg);
        }
        flush(current_gen, &mut rows, &mut snapshots)?;
        if snapshots.len() != header.n_snapshots {
            return Err(Error::Format(format!(
                "header promises {} snapshots, file contains {}",
                header.n_snapshots,
                snapshots.len()
            )));
        }
        Ok(PopulationSeries {
            l: header.l,
            fitness_meta: header.fitness_meta,
            evolution: header.evolution,
            snapshots,
        })
    }
}

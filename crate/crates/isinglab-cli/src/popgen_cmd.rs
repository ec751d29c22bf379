//! Wright-Fisher evolution and fitness-reconstruction commands.

use isinglab::error::{Error, Result};
use isinglab::popgen::{
    evolve, infer_fitness_kns, phase_diagram, DcaMethod, EvolutionParams, FitnessParams,
    KnsMode, KnsOptions, PhaseDiagramParams, PopulationSeries, SweepAxis,
};

use crate::args::{AxisArg, DcaArg, EvolveArgs, KnsModeArg, PhaseDiagramArgs, PopgenInferArgs};

impl From<KnsModeArg> for KnsMode {
    fn from(m: KnsModeArg) -> Self {
        match m {
            KnsModeArg::Singletime => KnsMode::SingleTime,
            KnsModeArg::Alltime => KnsMode::AllTime,
        }
    }
}

impl From<DcaArg> for DcaMethod {
    fn from(d: DcaArg) -> Self {
        match d {
            DcaArg::Nmf => DcaMethod::Nmf,
            DcaArg::Plm => DcaMethod::Plm,
        }
    }
}

pub fn evolve_cmd(a: &EvolveArgs) -> Result<()> {
    let fitness = match (&a.fitness, a.sigma) {
        (Some(path), _) => FitnessParams::read_json(path)?,
        (None, Some(sigma)) => {
            let l = a.l.ok_or_else(|| {
                Error::Parameter("random fitness draw needs --L".into())
            })?;
            FitnessParams::random_epistatic(
                l,
                sigma,
                a.fitness_seed.expect("clap requires with sigma"),
            )?
        }
        (None, None) => {
            return Err(Error::Parameter(
                "pass --fitness, or --sigma with --fitness-seed".into(),
            ))
        }
    };
    let params = EvolutionParams {
        n_pop: a.n_pop,
        n_generations: a.n_generations,
        r: a.r,
        rho: a.rho,
        mu: a.mu,
        seed: a.seed,
        snapshot_every: a.snapshot_every,
    };
    let series = evolve(&fitness, &params)?;
    series.write(&a.out)?;
    if let Some(fpath) = &a.fitness_out {
        fitness.write_json(fpath)?;
    }
    Ok(())
}

pub fn infer_cmd(a: &PopgenInferArgs) -> Result<()> {
    let series = PopulationSeries::read(&a.series)?;
    let opts = KnsOptions {
        mode: a.mode.into(),
        dca: a.dca.into(),
        pseudocount: a.pseudocount,
        burn_in_fraction: a.burn_in_fraction,
    };
    let result = infer_fitness_kns(&series, &opts)?;
    result.write_json(&a.out)
}

pub fn phase_diagram_cmd(a: &PhaseDiagramArgs) -> Result<()> {
    let axis1 = match a.axis {
        AxisArg::Mu => SweepAxis::Mu(a.axis_values.clone()),
        AxisArg::Sigma => SweepAxis::Sigma(a.axis_values.clone()),
    };
    let params = PhaseDiagramParams {
        l: a.l,
        sigma: a.sigma,
        axis1,
        r_values: a.r_values.clone(),
        base: EvolutionParams {
            n_pop: a.n_pop,
            n_generations: a.n_generations,
            // r (and mu when swept) are overridden per cell.
            r: 0.0,
            rho: a.rho,
            mu: a.mu,
            seed: a.seed,
            snapshot_every: a.snapshot_every,
        },
        kns: KnsOptions {
            mode: a.mode.into(),
            dca: a.dca.into(),
            pseudocount: a.pseudocount,
            burn_in_fraction: a.burn_in_fraction,
        },
    };
    let grid = phase_diagram(&params)?;
    grid.write_json(&a.out)?;
    if let Some(csv) = &a.csv_out {
        grid.write_csv(csv)?;
    }
    Ok(())
}

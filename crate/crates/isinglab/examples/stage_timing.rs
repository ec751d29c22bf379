//! Rough wall-clock timing of the heavy pipeline stages, used to size the
//! long-running tests. Run with `cargo run -p isinglab --example stage_timing`.

use std::time::Instant;

use isinglab::dynamics::simulate_gillespie;
use isinglab::kinetic::{infer_ave, infer_sho, AveInputs, AveOptions, ShoOptions};
use isinglab::model::{generate_sk, SkParams};
use isinglab::stats::{
    flip_decompose, trajectory_moments, ConservationPolicy, Dc0Method,
};

fn main() {
    let l = 20;
    let model = generate_sk(&SkParams {
        l,
        g: 0.3,
        k: 0.0,
        seed: 9301,
    })
    .unwrap();
    let init = vec![-1i8; l];

    let t0 = Instant::now();
    let traj = simulate_gillespie(&model, 1.0, 1.05e6, &init, 42).unwrap();
    eprintln!(
        "simulate L=20 t=1.05e6: {:.1} s ({} events)",
        t0.elapsed().as_secs_f64(),
        traj.times().len()
    );

    let t0 = Instant::now();
    let ms = trajectory_moments(&traj, &[], 200.0, Dc0Method::Skip).unwrap();
    eprintln!("moments (skip dC0): {:.1} s", t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    let ms2 = trajectory_moments(&traj, &[], 200.0, Dc0Method::EventLimit).unwrap();
    eprintln!("moments (event-limit dC0): {:.1} s", t0.elapsed().as_secs_f64());
    let _ = (ms, ms2);

    let t0 = Instant::now();
    let fd = flip_decompose(&traj, 0.1, 200.0, 2, ConservationPolicy::BestEffort).unwrap();
    eprintln!(
        "flip_decompose dt=0.1 refine<=2: {:.1} s ({} cells at dt {:.3}, {} distinct configs, {} hidden)",
        t0.elapsed().as_secs_f64(),
        fd.n_cells,
        fd.dt,
        fd.configs.len(),
        fd.hidden_events
    );

    let t0 = Instant::now();
    let sho = infer_sho(&fd, &ShoOptions::default()).unwrap();
    eprintln!(
        "infer_sho: {:.1} s (iters {})",
        t0.elapsed().as_secs_f64(),
        sho.diagnostics["lbfgs_iterations_total"]
    );

    let t0 = Instant::now();
    let inp = AveInputs::from_trajectory(&traj, 200.0).unwrap();
    eprintln!(
        "AveInputs::from_trajectory: {:.1} s ({} ensemble configs)",
        t0.elapsed().as_secs_f64(),
        inp.ens.configs.len()
    );

    let t0 = Instant::now();
    let ave = infer_ave(
        &inp,
        &AveOptions {
            tol: 1e-5,
            max_iters: 2000,
            ..Default::default()
        },
    );
    match ave {
        Ok(r) => eprintln!(
            "infer_ave cold tol=1e-5: {:.1} s (iters {})",
            t0.elapsed().as_secs_f64(),
            r.diagnostics["iterations"]
        ),
        Err(e) => eprintln!(
            "infer_ave cold tol=1e-5: {:.1} s (failed: {e})",
            t0.elapsed().as_secs_f64()
        ),
    }
}

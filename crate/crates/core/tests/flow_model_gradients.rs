use std::sync::Arc;

use odflow::inference::{FlowModelConfig, FlowSurfaceModel, InterceptStructure, SurfaceKind};
use odflow::rng::task_rng;
use odflow::strata::{FlowCounts, StrataSpace};
use rand::Rng;

fn grid_counts(seed: u64) -> FlowCounts {
    let space = Arc::new(StrataSpace::age_location_grid(15..=24, &["h", "l"]).unwrap());
    let mut rng = task_rng(seed, &[0]);
    let n = (0..space.n_pairs()).map(|_| if rng.random::<f64>() < 0.3 { rng.random_range(0..4) } else { 0 }).collect();
    FlowCounts::new(space, n).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Worst relative error between the analytic gradient and central differences.
fn check(model: &FlowSurfaceModel, x: &[f64], log_q: &[f64], h: f64) -> f64 {
    let mut g = vec![0.0; x.len()];
    model.log_posterior_and_gradient(x, log_q, &mut g).unwrap();
    let mut scratch = vec![0.0; x.len()];
    let mut worst: f64 = 0.0;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = model.log_posterior_and_gradient(&xp, log_q, &mut scratch).unwrap();
        xp[i] = x[i] - h;
        let fm = model.log_posterior_and_gradient(&xp, log_q, &mut scratch).unwrap();
        xp[i] = x[i];
        worst = worst.max(rel_err(g[i], (fp - fm) / (2.0 * h)));
    }
    worst
}

fn random_point(model: &FlowSurfaceModel, seed: u64, hyper: [f64; 3]) -> Vec<f64> {
    let mut rng = task_rng(seed, &[1]);
    let mut x: Vec<f64> = (0..model.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    for v in x.iter_mut().take(model.n_intercepts()) {
        *v -= 1.5;
    }
    for off in model.parameter_names().iter().enumerate().filter(|(_, n)| n.starts_with("log_sigma")).map(|(i, _)| i) {
        x[off..off + 3].copy_from_slice(&hyper);
    }
    x
}

fn offsets(model: &FlowSurfaceModel) -> Vec<f64> {
    let a = model.space().len();
    let xi: Vec<f64> = (0..a).map(|i| if i % 2 == 0 { 0.8 } else { 0.6 }).collect();
    model.log_offsets(&xi, &xi)
}

#[test]
fn hsgp_gradient_matches_finite_differences() {
    let counts = grid_counts(3);
    let cfg = FlowModelConfig { surface: SurfaceKind::Hsgp { boundary_factor: 1.25, m: 12, scheme: Default::default() }, ..Default::default() };
    let model = FlowSurfaceModel::new(counts, &cfg).unwrap();
    let lq = offsets(&model);
    let mut worst: f64 = 0.0;
    let mut rng = task_rng(5, &[2]);
    for p in 0..20u64 {
        // the last points probe small and large sigma and length scales
        let hyper = match p {
            16 => [-3.0, -2.5, -2.5],
            17 => [1.5, 2.5, 2.5],
            18 => [-3.0, 2.5, -2.5],
            19 => [1.5, -2.5, 2.5],
            _ => [rng.random_range(-1.0..1.0), rng.random_range(0.0..1.5), rng.random_range(0.0..1.5)],
        };
        let x = random_point(&model, 100 + p, hyper);
        worst = worst.max(check(&model, &x, &lq, 1e-5));
    }
    println!("hsgp worst relative gradient error {worst:.2e}");
    assert!(worst < 1e-5);
}

#[test]
fn exact_gp_gradient_matches_finite_differences() {
    let counts = grid_counts(4);
    let cfg = FlowModelConfig {
        surface: SurfaceKind::Exact { jitter: 1e-6 },
        intercepts: Some(InterceptStructure::Shared),
        ..Default::default()
    };
    let model = FlowSurfaceModel::new(counts, &cfg).unwrap();
    let lq = offsets(&model);
    let mut worst: f64 = 0.0;
    for (p, hyper) in [[0.3, 0.8, 1.2], [-0.5, 1.4, 0.5], [0.0, 0.2, 0.2], [-2.0, -1.0, -1.0]].into_iter().enumerate() {
        let x = random_point(&model, 200 + p as u64, hyper);
        // the dense factor has condition number near 1/jitter at long length
        // scales, so rounding in the log density swamps a 1e-5 step
        let e = check(&model, &x, &lq, 1e-4);
        println!("{hyper:?}: {e:.2e}");
        worst = worst.max(e);
    }
    println!("exact worst relative gradient error {worst:.2e}");
    assert!(worst < 1e-5);
}

#[test]
fn unused_block_gradient_is_prior_only() {
    use odflow::strata::Gender;
    let space = Arc::new(StrataSpace::age_location_grid(15..=19, &[]).unwrap());
    let female_source: Vec<bool> = space.pairs().iter().map(|p| space.stratum(p.source).gender == Gender::F).collect();
    let n = female_source.iter().map(|&f| if f { 0 } else { 2 }).collect();
    let counts = FlowCounts::new(space, n).unwrap();
    let cfg = FlowModelConfig { surface: SurfaceKind::Hsgp { boundary_factor: 1.5, m: 6, scheme: Default::default() }, ..Default::default() };
    let model = FlowSurfaceModel::new(counts, &cfg).unwrap();
    let x = random_point(&model, 9, [0.0, 1.0, 1.0]);
    // a thinning offset this small makes exp() of the fm predictors vanish
    let lq: Vec<f64> = female_source.iter().map(|&f| if f { -650.0 } else { 0.0 }).collect();
    let mut g = vec![0.0; x.len()];
    model.log_posterior_and_gradient(&x, &lq, &mut g).unwrap();
    let fm = model.parameter_names().iter().position(|n| n == "z[fm][0]").unwrap();
    for j in 0..36 {
        assert!((g[fm + j] + x[fm + j]).abs() < 1e-12);
    }
}


use odflow::cascade::{
    auc, beta_posterior, best_f1_threshold, cascade_product, classify_new_infections, crossvalidate, f1_score,
    fit_betabinomial, BetaBinomialModel, CascadeError, ClassifierConfig, Design, DesignKind, Dispersion, Role, Stage,
    StageCounts, XiDraws,
};
use odflow::inference::{rhat_ess, HmcConfig};
use odflow::rng::task_rng;
use odflow::stats::{self, logistic};
use odflow::strata::{StrataSpace, Stratum};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, Normal};

fn stage(ids: &[String], n: &[u64], k: &[u64]) -> StageCounts {
    StageCounts::new(Stage::Participation, Role::Both, ids.to_vec(), n.to_vec(), k.to_vec()).unwrap()
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i}")).collect()
}

fn quick(seed: u64) -> HmcConfig {
    HmcConfig { chains: 2, warmup: 300, iterations: 300, seed, ..HmcConfig::default() }
}

/// Posterior mean and Monte Carlo standard error from bulk ESS.
fn mean_se(fit: &odflow::cascade::BetaBinomialFit, name: &str) -> (f64, f64) {
    let chains = fit.draws.param_chains(name).unwrap();
    let pooled: Vec<f64> = chains.concat();
    let (_, ess) = rhat_ess(&chains).unwrap();
    (stats::mean(&pooled), stats::sd(&pooled) / ess.unwrap().sqrt())
}

#[test]
fn beta_posterior_closed_forms() {
    let s = stage(&ids(3), &[100, 0, 40], &[60, 0, 40]);
    let b = beta_posterior(&s, 0.5, 0.5);
    assert_eq!((b[0].alpha, b[0].beta), (60.5, 40.5));
    assert!((b[0].mean() - 60.5 / 101.0).abs() < 1e-15);
    assert!((b[0].mean() - 0.5990).abs() < 1e-4);
    assert_eq!((b[1].alpha, b[1].beta), (0.5, 0.5));
    assert!(b[2].mean() > 40.0 / 41.0);
}

proptest! {
    #[test]
    fn beta_posterior_mean_approaches_fraction(k in 0u64..=100_000) {
        let s = stage(&ids(1), &[100_000], &[k]);
        let b = beta_posterior(&s, 0.5, 0.5)[0];
        prop_assert!((b.mean() - k as f64 / 1e5).abs() < 1e-4);
    }

    #[test]
    fn products_stay_in_unit_interval(a in proptest::collection::vec(1e-6f64..=1.0, 1..20), seed in 0u64..100) {
        let mut rng = task_rng(seed, &[0]);
        let b: Vec<f64> = a.iter().map(|_| rng.random_range(1e-6..=1.0)).collect();
        let x = XiDraws::new(vec!["s".into()], vec![a.clone()]).unwrap();
        let y = XiDraws::new(vec!["s".into()], vec![b]).unwrap();
        let p = cascade_product(&[&x, &y], a.len(), seed).unwrap();
        prop_assert!(p.stratum(0).iter().all(|v| *v > 0.0 && *v <= 1.0));
    }
}

#[test]
fn binomial_intercept_matches_conjugate_mean() {
    let s = stage(&ids(1), &[100], &[60]);
    let model = BetaBinomialModel::new(Design::intercept_only(1), Dispersion::Binomial);
    let fit = fit_betabinomial(&model, &s, &HmcConfig { chains: 4, warmup: 500, iterations: 1000, seed: 3, ..HmcConfig::default() })
        .unwrap();
    let (m, _) = mean_se(&fit, "xi[s0]");
    let oracle = beta_posterior(&s, 0.5, 0.5)[0].mean();
    assert!((m - oracle).abs() < 0.015, "{m} vs {oracle}");
    assert!((m - 0.60).abs() < 0.015);
}

#[test]
fn intercept_only_pools_strata() {
    let s = stage(&ids(5), &[80, 120, 50, 150, 100], &[30, 50, 20, 61, 39]);
    let model = BetaBinomialModel::new(Design::intercept_only(5), Dispersion::Binomial);
    let fit = fit_betabinomial(&model, &s, &HmcConfig { chains: 4, iterations: 1000, seed: 4, ..HmcConfig::default() }).unwrap();
    let pooled = stage(&ids(1), &[500], &[200]);
    let oracle = beta_posterior(&pooled, 0.5, 0.5)[0].mean();
    let (m, se) = mean_se(&fit, "xi[s3]");
    assert!((m - oracle).abs() < 3.0 * se + 1e-4, "{m} vs {oracle} (se {se})");
    // every stratum carries the same draw
    assert_eq!(fit.draws.pooled("xi[s0]").unwrap(), fit.draws.pooled("xi[s4]").unwrap());
}

#[test]
fn saturated_binomial_reproduces_stratum_posteriors() {
    let strata: Vec<Stratum> = ids(3).into_iter().map(Stratum::plain).collect();
    let s = stage(&ids(3), &[1000, 1000, 1000], &[450, 500, 550]);
    let design = Design::from_strata(&strata, DesignKind::Saturated, false).unwrap();
    let model = BetaBinomialModel::new(design, Dispersion::Binomial);
    let fit = fit_betabinomial(&model, &s, &HmcConfig { chains: 4, iterations: 2500, seed: 5, ..HmcConfig::default() }).unwrap();
    for (i, b) in beta_posterior(&s, 0.5, 0.5).iter().enumerate() {
        let (m, se) = mean_se(&fit, &format!("xi[s{i}]"));
        assert!((m - b.mean()).abs() < 2.0 * se, "stratum {i}: {m} vs {} (se {se})", b.mean());
    }
}

fn grid(ages: std::ops::RangeInclusive<u32>) -> Vec<Stratum> {
    StrataSpace::age_location_grid(ages, &["h", "l"]).unwrap().strata().to_vec()
}

/// Counts from an additive logit with optional gender-by-age interaction and
/// Beta-Binomial overdispersion.
fn simulate_stage(strata: &[Stratum], n: u64, gamma: f64, interaction: f64, seed: u64) -> StageCounts {
    let mut rng = task_rng(seed, &[0]);
    let (mut trials, mut succ) = (vec![], vec![]);
    for s in strata {
        let age = s.age.unwrap().lo as f64;
        let male = s.gender == odflow::strata::Gender::M;
        let mut eta = -0.3 + 0.4 * f64::from(s.location.as_deref() == Some("l")) - 0.5 * f64::from(male) + 0.05 * (age - 20.0);
        eta += interaction * f64::from(male) * ((age - 15.0) / 3.0).sin();
        let xi = logistic(eta);
        let p = if gamma > 0.0 { Beta::new(xi / gamma, (1.0 - xi) / gamma).unwrap().sample(&mut rng) } else { xi };
        trials.push(n);
        succ.push(Binomial::new(n, p).unwrap().sample(&mut rng));
    }
    let ids: Vec<String> = strata.iter().map(|s| s.id.clone()).collect();
    stage(&ids, &trials, &succ)
}

#[test]
fn overdispersion_is_detected() {
    let strata = grid(15..=49);
    assert_eq!(strata.len(), 140);
    let s = simulate_stage(&strata, 200, 0.1, 0.0, 11);
    let design = Design::from_strata(&strata, DesignKind::Additive, false).unwrap();
    let model = BetaBinomialModel::new(design, Dispersion::Estimated);
    let fit = fit_betabinomial(&model, &s, &quick(6)).unwrap();
    let g = stats::sorted(&fit.gamma_draws().unwrap());
    let (lo, hi) = (stats::quantile_sorted(&g, 0.025), stats::quantile_sorted(&g, 0.975));
    println!("gamma 95% interval [{lo:.4}, {hi:.4}]");
    assert!(lo > 0.02, "interval reaches towards 0: [{lo}, {hi}]");
    assert!(lo < 0.1 && 0.1 < hi);
    assert!(fit.separated.is_empty());
}

fn age_path(fit: &odflow::cascade::BetaBinomialFit, columns: &[String], smoothed: bool) -> Vec<f64> {
    let mut path: Vec<f64> = columns
        .iter()
        .filter(|c| c.starts_with("age:"))
        .map(|c| stats::median(&fit.draws.pooled(&format!("beta[{c}]")).unwrap()))
        .collect();
    if !smoothed {
        path.insert(0, 0.0);
    }
    path
}

#[test]
fn smoothing_reduces_age_path_variation() {
    let strata = grid(15..=34);
    let mut ratios = Vec::new();
    for r in 0..10u64 {
        let s = simulate_stage(&strata, 30, 0.0, 0.0, 100 + r);
        let plain = Design::from_strata(&strata, DesignKind::Additive, false).unwrap();
        let smooth = Design::from_strata(&strata, DesignKind::Additive, true).unwrap();
        let tv = |p: Vec<f64>| p.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>();
        let f0 = fit_betabinomial(&BetaBinomialModel::new(plain.clone(), Dispersion::Binomial), &s, &quick(r)).unwrap();
        let f1 = fit_betabinomial(&BetaBinomialModel::new(smooth.clone(), Dispersion::Binomial), &s, &quick(r)).unwrap();
        ratios.push(tv(age_path(&f1, smooth.columns(), true)) / tv(age_path(&f0, plain.columns(), false)));
    }
    let med = stats::median(&ratios);
    println!("median total-variation ratio {med:.3}");
    assert!(med < 1.0);
}

#[test]
fn rank_deficient_designs_are_rejected() {
    let d = Design::new(vec!["a".into()], vec![vec![1.0], vec![1.0]], vec![]).unwrap();
    let s = stage(&ids(2), &[10, 10], &[3, 4]);
    let e = fit_betabinomial(&BetaBinomialModel::new(d, Dispersion::Binomial), &s, &quick(1)).unwrap_err();
    assert!(matches!(e, CascadeError::RankDeficient { .. }));
}

#[test]
fn separation_is_flagged() {
    // all successes in one stratum, none in the other
    let d = Design::new(vec!["x".into()], vec![vec![0.0], vec![1.0]], vec![]).unwrap();
    let s = stage(&ids(2), &[400, 400], &[0, 400]);
    let mut model = BetaBinomialModel::new(d, Dispersion::Binomial);
    model.priors.coef_sd = 100.0;
    model.priors.intercept_sd = 100.0;
    let fit = fit_betabinomial(&model, &s, &quick(2)).unwrap();
    assert_eq!(fit.separated, vec!["x".to_string()]);
}

#[test]
fn cascade_product_arithmetic() {
    let ids = vec!["a".to_string(), "b".to_string()];
    let p = XiDraws::constant(ids.clone(), &[0.7, 0.7]).unwrap();
    let s = XiDraws::constant(ids.clone(), &[0.6, 0.6]).unwrap();
    let prod = cascade_product(&[&p, &s], 1, 0).unwrap();
    assert!((prod.stratum(0)[0] - 0.42).abs() < 1e-15);
    let mut rng = task_rng(8, &[0]);
    let beta = Beta::new(3.0, 2.0).unwrap();
    let d: Vec<Vec<f64>> = (0..2).map(|_| (0..4000).map(|_| beta.sample(&mut rng)).collect()).collect();
    let x = XiDraws::new(ids.clone(), d).unwrap();
    let one = XiDraws::constant(ids.clone(), &[1.0, 1.0]).unwrap();
    assert_eq!(cascade_product(&[&x, &one], 4000, 1).unwrap(), x);
    let d2: Vec<Vec<f64>> = (0..2).map(|_| (0..3000).map(|_| beta.sample(&mut rng)).collect()).collect();
    let y = XiDraws::new(ids.clone(), d2).unwrap();
    let prod = cascade_product(&[&x, &y], 4000, 2).unwrap();
    for i in 0..2 {
        assert!(stats::mean(prod.stratum(i)) <= x.means()[i].min(y.means()[i]));
    }
    let other = XiDraws::constant(vec!["a".into(), "c".into()], &[0.5, 0.5]).unwrap();
    assert!(matches!(cascade_product(&[&x, &other], 10, 0), Err(CascadeError::MisalignedStrata(_))));
}

fn classifier_config(seed: u64) -> ClassifierConfig {
    ClassifierConfig { hmc: quick(seed), ..ClassifierConfig::default() }
}

#[test]
fn separable_data_reach_perfect_f1() {
    let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 10.0 - 2.0]).collect();
    let labels: Vec<Option<bool>> = (0..40).map(|i| Some(i >= 20)).collect();
    let c = classify_new_infections(&x, &labels, &classifier_config(1)).unwrap();
    assert_eq!(c.f1, 1.0);
    assert_eq!(c.auc, 1.0);
    let ly: Vec<bool> = labels.iter().map(|l| l.unwrap()).collect();
    for t in (0..=100).map(|i| i as f64 / 100.0) {
        assert!(c.f1 >= f1_score(&c.probabilities, &ly, t));
    }
}

#[test]
fn random_labels_have_chance_auc() {
    // in-sample fits lean slightly above 0.5; average a few label draws
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut aucs = Vec::new();
    for r in 0..5u64 {
        let mut rng = task_rng(17, &[r]);
        let x: Vec<Vec<f64>> = (0..1000).map(|_| vec![normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
        let labels: Vec<Option<bool>> = (0..1000).map(|_| Some(rng.random_bool(0.4))).collect();
        let c = classify_new_infections(&x, &labels, &classifier_config(2 + r)).unwrap();
        let ly: Vec<bool> = labels.iter().map(|l| l.unwrap()).collect();
        let (t, f1) = best_f1_threshold(&c.probabilities, &ly);
        assert_eq!((t, f1), (c.threshold, c.f1));
        for g in (0..=100).map(|i| i as f64 / 100.0) {
            assert!(f1 >= f1_score(&c.probabilities, &ly, g));
        }
        aucs.push(c.auc);
    }
    println!("random-label AUCs {aucs:.3?}");
    assert!((stats::mean(&aucs) - 0.5).abs() < 0.05);
}

#[test]
fn classifier_rejects_single_class_and_fills_unlabelled() {
    let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
    let all_true = vec![Some(true); 10];
    assert!(matches!(classify_new_infections(&x, &all_true, &classifier_config(3)), Err(CascadeError::SingleClass)));
    let mut labels: Vec<Option<bool>> = (0..10).map(|i| Some(i >= 5)).collect();
    labels[9] = None;
    labels[0] = None;
    let c = classify_new_infections(&x, &labels, &classifier_config(3)).unwrap();
    assert!(c.classes[9] && !c.classes[0]);
    assert_eq!(auc(&[0.1, 0.2, 0.3, 0.4], &[false, true, false, true]), 0.75);
}

#[test]
fn elpd_ignores_stratum_order() {
    let strata = grid(15..=19);
    let s = simulate_stage(&strata, 60, 0.05, 0.0, 21);
    let design = Design::from_strata(&strata, DesignKind::Additive, false).unwrap();
    let model = BetaBinomialModel::new(design.clone(), Dispersion::Estimated);
    let a = crossvalidate(&model, &s, 4, &quick(9), 5).unwrap();
    let perm: Vec<usize> = (0..s.len()).rev().collect();
    let ids: Vec<String> = perm.iter().map(|&i| s.ids()[i].clone()).collect();
    let n: Vec<u64> = perm.iter().map(|&i| s.trials()[i]).collect();
    let k: Vec<u64> = perm.iter().map(|&i| s.successes()[i]).collect();
    let rows: Vec<Vec<f64>> = perm.iter().map(|&i| design.row(i).to_vec()).collect();
    let d2 = Design::new(design.columns().to_vec(), rows, vec![]).unwrap();
    let b = crossvalidate(&BetaBinomialModel::new(d2, Dispersion::Estimated), &stage(&ids, &n, &k), 4, &quick(9), 5).unwrap();
    assert!((a.elpd - b.elpd).abs() < 1e-9 * a.elpd.abs(), "{} vs {}", a.elpd, b.elpd);
    assert_eq!(a.coverage, b.coverage);
    assert!(matches!(crossvalidate(&model, &s, 1, &quick(9), 5), Err(CascadeError::Config(_))));
    let few = stage(&ids[..2], &n[..2], &k[..2]);
    let d3 = Design::intercept_only(2);
    assert!(matches!(
        crossvalidate(&BetaBinomialModel::new(d3, Dispersion::Binomial), &few, 3, &quick(9), 5),
        Err(CascadeError::EmptyFold(_))
    ));
}

#[test]
fn constant_predictor_loses_on_heterogeneous_data() {
    let strata = grid(15..=29);
    let s = simulate_stage(&strata, 150, 0.0, 0.0, 31);
    let flat = BetaBinomialModel::new(Design::intercept_only(strata.len()), Dispersion::Binomial);
    let contrasts = BetaBinomialModel::new(Design::from_strata(&strata, DesignKind::Additive, false).unwrap(), Dispersion::Binomial);
    let a = crossvalidate(&flat, &s, 10, &quick(10), 6).unwrap();
    let b = crossvalidate(&contrasts, &s, 10, &quick(10), 6).unwrap();
    println!("ELPD constant {:.1}, contrasts {:.1}", a.elpd, b.elpd);
    assert!(a.elpd < b.elpd);
}

#[test]
fn overdispersed_interaction_model_covers_best() {
    let strata = grid(15..=29);
    let s = simulate_stage(&strata, 200, 0.08, 0.8, 41);
    let mut cover = Vec::new();
    for (kind, disp) in [
        (DesignKind::Additive, Dispersion::Binomial),
        (DesignKind::Additive, Dispersion::Estimated),
        (DesignKind::Interaction, Dispersion::Binomial),
        (DesignKind::Interaction, Dispersion::Estimated),
    ] {
        let model = BetaBinomialModel::new(Design::from_strata(&strata, kind, false).unwrap(), disp);
        let r = crossvalidate(&model, &s, 10, &quick(11), 7).unwrap();
        println!("{kind:?}/{disp:?}: coverage {:.3} mae {:.2} elpd {:.1}", r.coverage, r.mae, r.elpd);
        cover.push(r.coverage);
    }
    assert!(cover[3] >= cover[0] && cover[3] >= cover[2]);
    assert!(cover[3] >= 0.9);
}

#[test]
fn sampling_spec_from_cascade_draws() {
    let ids = vec!["a".to_string(), "b".to_string()];
    let src = XiDraws::new(ids.clone(), vec![vec![0.5, 0.6], vec![0.3, 0.4]]).unwrap();
    let spec = XiDraws::sampling_spec(&src, &src, &ids).unwrap();
    assert!(spec.is_shared());
    let rec = XiDraws::constant(ids.clone(), &[0.9, 0.8]).unwrap();
    let spec = XiDraws::sampling_spec(&src, &rec, &["b".to_string(), "a".to_string()]).unwrap();
    assert!(!spec.is_shared());
    assert!((spec.source[0].mean() - 0.35).abs() < 1e-12);
}

use std::sync::Arc;

use odflow::inference::{
    invgamma_cdf, invgamma_from_quantiles, summarize, ChainStats, Functional, InferenceError, PosteriorDraws, QuantileRow,
};
use odflow::rng::task_rng;
use odflow::strata::{sources_of, StrataMapping, StrataSpace, Stratum};
use proptest::prelude::*;
use rand_distr::{Distribution, Gamma};

#[test]
fn invgamma_interval_mass() {
    for (lo, hi) in [(1.0, 9.0), (0.5, 2.0), (2.3, 4.6), (1.0, 100.0), (3.0, 3.3)] {
        let (a, b) = invgamma_from_quantiles(lo, hi, 0.99).unwrap();
        let mass = invgamma_cdf(hi, a, b) - invgamma_cdf(lo, a, b);
        assert!((mass - 0.99).abs() < 1e-6, "[{lo},{hi}] mass {mass}");
    }
}

#[test]
fn invgamma_mode_moves_with_interval() {
    let mut prev = 0.0;
    for d in 0..10 {
        let shift = 0.25 * d as f64;
        let (a, b) = invgamma_from_quantiles(1.0 + shift, 9.0 + shift, 0.99).unwrap();
        let mode = b / (a + 1.0);
        assert!(mode > prev, "mode {mode} after {prev}");
        prev = mode;
    }
}

#[test]
fn invgamma_rejects_degenerate_intervals() {
    assert!(matches!(invgamma_from_quantiles(2.0, 2.0, 0.99), Err(InferenceError::InvalidPrior(_))));
    assert!(invgamma_from_quantiles(3.0, 2.0, 0.99).is_err());
    assert!(invgamma_from_quantiles(0.0, 2.0, 0.99).is_err());
}

fn plain_space(ids: &[&str]) -> Arc<StrataSpace> {
    Arc::new(StrataSpace::unmasked(ids.iter().map(|i| Stratum::plain(*i)).collect()).unwrap())
}

fn dirichlet_draws(space: &StrataSpace, alpha: &[f64], n: usize, seed: u64) -> PosteriorDraws {
    let mut rng = task_rng(seed, &[0]);
    let names: Vec<String> = (0..space.n_pairs()).map(|k| format!("pi[{}]", space.pair_label(k))).collect();
    let mut values = Vec::with_capacity(n * names.len());
    for _ in 0..n {
        let g: Vec<f64> = alpha.iter().map(|&a| Gamma::new(a, 1.0).unwrap().sample(&mut rng)).collect();
        let s: f64 = g.iter().sum();
        values.extend(g.iter().map(|v| v / s));
    }
    PosteriorDraws::new(names, vec![values], n, vec![ChainStats::default()]).unwrap()
}

#[test]
fn uniform_dirichlet_medians() {
    let space = plain_space(&["a", "b"]);
    let draws = dirichlet_draws(&space, &[1.0; 4], 20_000, 3);
    let rows = summarize(&draws, &space, Functional::Flows, None).unwrap();
    // Beta(1, 3) median
    let exact = 1.0 - 0.5f64.powf(1.0 / 3.0);
    for r in &rows {
        let m = r.median.unwrap();
        assert!((m - exact).abs() < 0.01, "{} median {m}", r.quantity);
        assert!((m - 0.25).abs() < 0.06);
        assert!(r.q25.unwrap() < m && m < r.q75.unwrap());
        assert!(r.contains(m));
    }
}

#[test]
fn identity_mapping_matches_raw_summary() {
    let space = plain_space(&["a", "b", "c"]);
    let draws = dirichlet_draws(&space, &[0.5, 1.0, 2.0, 1.0, 3.0, 0.7, 1.2, 0.4, 2.2], 500, 4);
    let id = StrataMapping::identity(space.clone());
    for f in Functional::ALL {
        assert_eq!(summarize(&draws, &space, f, None).unwrap(), summarize(&draws, &space, f, Some(&id)).unwrap());
    }
}

#[test]
fn aggregation_then_functional_per_draw() {
    let space = plain_space(&["a1", "a2", "b"]);
    let alpha = [0.5, 1.0, 2.0, 1.0, 3.0, 0.7, 1.2, 0.4, 2.2];
    let draws = dirichlet_draws(&space, &alpha, 400, 5);
    let mapping = StrataMapping::from_fn(space.clone(), |s| s.id[..1].to_string()).unwrap();
    let rows = summarize(&draws, &space, Functional::Sources, Some(&mapping)).unwrap();
    let coarse = mapping.coarse();
    let b = coarse.index_of("b").unwrap();
    let a = coarse.index_of("a").unwrap();
    let per_draw: Vec<Option<f64>> = draws
        .iter_draws()
        .map(|d| {
            let agg = mapping.apply(d);
            Some(sources_of(coarse, &agg, b).unwrap()[a])
        })
        .collect();
    let expect = QuantileRow::from_values("sources[a->b]".into(), &per_draw);
    let got = rows.iter().find(|r| r.quantity == "sources[a->b]").unwrap();
    assert_eq!(got, &expect);
    // summarizing is not the same as applying the functional to summaries
    let mean_of_ratio = expect.mean.unwrap();
    let flows = summarize(&draws, &space, Functional::Flows, Some(&mapping)).unwrap();
    let m = |q: &str| flows.iter().find(|r| r.quantity == q).unwrap().mean.unwrap();
    let ratio_of_means = m("pi[a->b]") / (m("pi[a->b]") + m("pi[b->b]"));
    assert!((mean_of_ratio - ratio_of_means).abs() > 1e-6);
}

#[test]
fn age_gap_rows_sum_to_one() {
    let space = Arc::new(StrataSpace::age_location_grid(15..=24, &[]).unwrap());
    let alpha = vec![1.0; space.n_pairs()];
    let draws = dirichlet_draws(&space, &alpha, 50, 6);
    let rows = summarize(&draws, &space, Functional::AgeGap, None).unwrap();
    assert_eq!(rows.len(), 20 * 3);
    let pis: Vec<Vec<Option<f64>>> = {
        let (_, v) = odflow::inference::functional_draws(
            &odflow::inference::pi_draws(&draws, &space).unwrap(),
            &space,
            Functional::AgeGap,
        );
        v
    };
    for d in pis {
        for row in d.chunks(3) {
            let s: f64 = row.iter().map(|v| v.unwrap()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
    // a 15-year-old woman cannot have a younger partner from 15 to 24 beyond zero gap
    let w15 = rows.iter().find(|r| r.quantity == "age_gap[F15:younger_or_same]").unwrap();
    assert!(w15.median.unwrap() < 0.3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn summaries_follow_stratum_labels(perm_seed in 0u64..1000, seed in 0u64..1000) {
        let ids = ["a", "b", "c"];
        let space = plain_space(&ids);
        let alpha = [0.5, 1.0, 2.0, 1.0, 3.0, 0.7, 1.2, 0.4, 2.2];
        let draws = dirichlet_draws(&space, &alpha, 61, seed);
        let mut order = vec![0usize, 1, 2];
        let k = (perm_seed % 6) as usize;
        order.rotate_left(k % 3);
        if k >= 3 { order.swap(0, 1); }
        let permuted = plain_space(&order.iter().map(|&i| ids[i]).collect::<Vec<_>>());
        let names: Vec<String> = (0..permuted.n_pairs()).map(|q| format!("pi[{}]", permuted.pair_label(q))).collect();
        let cols: Vec<usize> = names.iter().map(|n| draws.index_of(n).unwrap()).collect();
        let values: Vec<f64> = draws.iter_draws().flat_map(|d| cols.iter().map(|&c| d[c]).collect::<Vec<_>>()).collect();
        let pdraws = PosteriorDraws::new(names, vec![values], 61, vec![ChainStats::default()]).unwrap();
        for f in Functional::ALL {
            let mut a = summarize(&draws, &space, f, None).unwrap();
            let mut b = summarize(&pdraws, &permuted, f, None).unwrap();
            if f == Functional::Ratios {
                // ratio[x/y] and ratio[y/x] are reciprocals; compare by unordered key
                let canon = |rows: &mut Vec<QuantileRow>| {
                    for r in rows.iter_mut() {
                        let inner = &r.quantity[6..r.quantity.len() - 1];
                        let (x, y) = inner.split_once('/').unwrap();
                        if x > y {
                            r.quantity = format!("ratio[{y}/{x}]");
                            let inv = |v: Option<f64>| v.map(|v| 1.0 / v);
                            r.median = inv(r.median);
                            // interpolated quantiles do not commute with 1/x
                            (r.q2_5, r.q97_5, r.q25, r.q75) = (None, None, None, None);
                        }
                    }
                };
                canon(&mut a);
                canon(&mut b);
                for r in a.iter_mut().chain(b.iter_mut()) {
                    (r.q2_5, r.q97_5, r.mean) = (None, None, None);
                }
            }
            a.sort_by(|x, y| x.quantity.cmp(&y.quantity));
            b.sort_by(|x, y| x.quantity.cmp(&y.quantity));
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(&x.quantity, &y.quantity);
                for (u, v) in [(x.median, y.median), (x.q2_5, y.q2_5), (x.q97_5, y.q97_5), (x.mean, y.mean)] {
                    match (u, v) {
                        (Some(u), Some(v)) => prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0)),
                        (u, v) => prop_assert_eq!(u, v),
                    }
                }
            }
        }
    }
}

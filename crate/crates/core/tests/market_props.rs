mod common;

use common::{random_stats, rng};
use mvecf_core::market::{dissimilarity, estimate_moments, sharpe_ratio, Loading};
use mvecf_core::synth::{gen_returns, SynthConfig};
use mvecf_core::ReturnsPanel;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn panel_from(values: &[f64], t: usize, n: usize) -> ReturnsPanel {
    let m = DMatrix::from_row_slice(t, n, values);
    let labels = (0..t).map(|p| format!("{}-{:02}", 2000 + p / 12, p % 12 + 1)).collect();
    let ids = (0..n).map(|i| format!("S{i}")).collect();
    ReturnsPanel::new(m, labels, ids, 12).unwrap()
}

fn panel_strategy() -> impl Strategy<Value = ReturnsPanel> {
    (2usize..12, 1usize..6).prop_flat_map(|(t, n)| {
        prop::collection::vec(-0.3f64..0.3, t * n).prop_map(move |v| panel_from(&v, t, n))
    })
}

proptest! {
    #[test]
    fn sharpe_is_scale_invariant(seed in any::<u64>(), n in 1usize..8, alpha in 0.01f64..100.0) {
        let mut r = rng(seed);
        let stats = random_stats(n, &mut r);
        let w: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut r, 0.01..1.0)).collect();
        let scaled: Vec<f64> = w.iter().map(|x| x * alpha).collect();
        let a = sharpe_ratio(&w, &stats).unwrap();
        let b = sharpe_ratio(&scaled, &stats).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
    }

    #[test]
    fn dissimilarity_symmetric_zero_diagonal(seed in any::<u64>(), n in 1usize..8) {
        let stats = random_stats(n, &mut rng(seed));
        for i in 0..n {
            prop_assert_eq!(dissimilarity(&stats, i, i).unwrap(), 0.0);
            for j in 0..n {
                let d = dissimilarity(&stats, i, j).unwrap();
                prop_assert_eq!(d, dissimilarity(&stats, j, i).unwrap());
                prop_assert!((0.0..=2f64.sqrt()).contains(&d));
            }
        }
    }

    #[test]
    fn moments_permutation_equivariant(panel in panel_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let n = panel.n_items();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng(seed));
        let periods: Vec<usize> = (0..panel.n_periods()).collect();
        let permuted = panel.select(&periods, &perm).unwrap();
        let a = estimate_moments(&panel, false, Loading::default()).unwrap();
        let b = estimate_moments(&permuted, false, Loading::default()).unwrap();
        for (x, &px) in perm.iter().enumerate() {
            prop_assert!((b.mu()[x] - a.mu()[px]).abs() <= 1e-15);
            for (y, &py) in perm.iter().enumerate() {
                let (s, t) = (b.sigma()[(x, y)], a.sigma()[(px, py)]);
                prop_assert!((s - t).abs() <= 1e-12 * s.abs().max(t.abs()).max(1e-300));
            }
        }
    }

    #[test]
    fn covariance_matches_outer_product_oracle(panel in panel_strategy()) {
        let (t, n) = (panel.n_periods(), panel.n_items());
        let r = panel.returns();
        let stats = estimate_moments(&panel, false, Loading::Absolute(0.0)).unwrap();
        let mean: Vec<f64> = (0..n).map(|i| (0..t).map(|p| r[(p, i)]).sum::<f64>() / t as f64).collect();
        let mut oracle = DMatrix::<f64>::zeros(n, n);
        for p in 0..t {
            let d: Vec<f64> = (0..n).map(|i| r[(p, i)] - mean[i]).collect();
            for i in 0..n {
                for j in 0..n {
                    oracle[(i, j)] += d[i] * d[j] / (t - 1) as f64;
                }
            }
        }
        let scale = oracle.amax().max(1e-300);
        for i in 0..n {
            for j in 0..n {
                prop_assert!((stats.sigma()[(i, j)] - oracle[(i, j)]).abs() <= 1e-12 * scale);
            }
        }
    }
}

#[test]
fn sectors_correlate_more_within_than_across() {
    let cfg = SynthConfig::default();
    let panel = gen_returns(&cfg).unwrap();
    let stats = estimate_moments(&panel, false, Loading::default()).unwrap();
    let (mut within, mut across) = ((0.0, 0usize), (0.0, 0usize));
    for i in 0..cfg.n_items {
        for j in (i + 1)..cfg.n_items {
            let rho = stats.correlation(i, j).unwrap();
            let acc = if cfg.sector_of(i) == cfg.sector_of(j) { &mut within } else { &mut across };
            acc.0 += rho;
            acc.1 += 1;
        }
    }
    let (w, a) = (within.0 / within.1 as f64, across.0 / across.1 as f64);
    assert!(w > a + 0.05, "within {w}, across {a}");
}

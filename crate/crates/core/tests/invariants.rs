//! Property checks over randomly generated inputs.

use approx::assert_relative_eq;
use proptest::prelude::*;
use tsln::inference::hpdi;
use tsln::metrics::iop;
use tsln::summaries::{classify, odds_ratio_draws, Evidence};
use tsln::survey::{hajek_from_parts, rescale_weights, Record, SurveyDataset};

/// Records as `(area, y, w_raw)` over `m` areas.
fn records(m: usize) -> impl Strategy<Value = Vec<(usize, bool, f64)>> {
    prop::collection::vec((0..m, any::<bool>(), 0.01f64..100.0), 1..60)
}

proptest! {
    #[test]
    fn rescaled_weights_sum_to_sample_sizes(recs in records(6)) {
        let d = SurveyDataset::new(
            (0..6).map(|i| i.to_string()).collect(),
            vec![Some(1000.0); 6],
            vec![],
            vec![],
            recs.iter().map(|&(area, y, w_raw)| Record { area, y, w_raw, covariates: vec![], levels: vec![] }).collect(),
        )
        .unwrap();
        let ws = rescale_weights(&d).unwrap();
        for area in 0..6 {
            let rows = d.rows(area);
            let total: f64 = rows.iter().map(|&j| ws.w[j]).sum();
            assert_relative_eq!(total, rows.len() as f64, max_relative = 1e-12);
        }
        assert_relative_eq!(ws.w_tilde.iter().sum::<f64>(), recs.len() as f64, max_relative = 1e-12);
    }

    #[test]
    fn hajek_is_invariant_to_weight_scale(
        cells in prop::collection::vec((0.01f64..10.0, any::<bool>()), 2..20),
        scale in 0.01f64..100.0,
    ) {
        let y: Vec<f64> = cells.iter().map(|c| f64::from(u8::from(c.1))).collect();
        let n = cells.len() as f64;
        let norm = |s: f64| {
            let total: f64 = cells.iter().map(|c| s * c.0).sum();
            cells.iter().map(|c| n * s * c.0 / total).collect::<Vec<_>>()
        };
        let a = hajek_from_parts(&norm(1.0), &y, 500.0);
        let b = hajek_from_parts(&norm(scale), &y, 500.0);
        assert_relative_eq!(a.mu, b.mu, max_relative = 1e-12);
        assert_relative_eq!(a.psi.unwrap(), b.psi.unwrap(), max_relative = 1e-9, epsilon = 1e-15);
        prop_assert!((0.0..=1.0).contains(&a.mu));
    }

    #[test]
    fn hpdi_holds_its_mass(samples in prop::collection::vec(-1e3f64..1e3, 20..300)) {
        let (lo, hi) = hpdi(&samples, 0.95).unwrap();
        let inside = samples.iter().filter(|&&v| lo <= v && v <= hi).count();
        prop_assert!(inside > (0.95 * samples.len() as f64).floor() as usize);
        let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min <= lo && hi <= max);
    }

    #[test]
    fn iop_is_a_fraction(a in -1.0f64..1.0, w in 0.0f64..1.0, c in -1.0f64..1.0, cw in 0.0f64..1.0) {
        let v = iop((a, a + w), (c, c + cw));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(iop((a, a + w), (a - 1.0, a + w + 1.0)), 1.0);
    }

    #[test]
    fn odds_ratio_is_monotone_and_unit_at_reference(national in 0.01f64..0.99, x in 0.01f64..0.99, y in 0.01f64..0.99) {
        let or = odds_ratio_draws(&[x, y, national], national).unwrap();
        prop_assert_eq!(x < y, or[0] < or[1]);
        assert_relative_eq!(or[2], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn evidence_classes_are_symmetric(z in 0u32..=1000, l in 0u32..=1000) {
        let p = |k: u32| f64::from(k) / 1000.0;
        let mirrored = match classify(p(z), p(l)) {
            Evidence::HC => Evidence::LC,
            Evidence::LC => Evidence::HC,
            Evidence::H => Evidence::L,
            Evidence::L => Evidence::H,
            Evidence::N => Evidence::N,
        };
        prop_assert_eq!(classify(p(1000 - z), p(1000 - l)), mirrored);
    }
}

//! Changing data from `t` on must not change anything decided before `t`.

use proptest::prelude::*;
use stratlab_core::indicators::{bollinger, ema, macd, rsi, sma};
use stratlab_core::metrics::{backtest, equity_curve};
use stratlab_core::strategies::{macd_strategy, rsi_strategy, PositionSeries};
use stratlab_core::ThresholdParams;

fn prices() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.03f64..0.03, 60..200).prop_map(|r| {
        let mut p = 100.0;
        r.into_iter()
            .map(|x| {
                p *= 1.0 + x;
                p
            })
            .collect()
    })
}

fn perturb(x: &[f64], from: usize, scale: f64) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| if i >= from { v * scale } else { v })
        .collect()
}

fn same_prefix(a: &[f64], b: &[f64], n: usize) -> bool {
    a[..n].iter().zip(&b[..n]).all(|(x, y)| x.to_bits() == y.to_bits())
}

proptest! {
    #[test]
    fn indicators_ignore_the_future(close in prices(), cut in 30usize..60, scale in 0.5f64..1.5) {
        let other = perturb(&close, cut, scale);
        prop_assert!(same_prefix(&ema(&close, 9).unwrap().values, &ema(&other, 9).unwrap().values, cut));
        prop_assert!(same_prefix(&sma(&close, 7).unwrap().values, &sma(&other, 7).unwrap().values, cut));
        prop_assert!(same_prefix(&rsi(&close, 14).unwrap().values, &rsi(&other, 14).unwrap().values, cut));
        let (a, b) = (macd(&close, 5, 13, 4).unwrap(), macd(&other, 5, 13, 4).unwrap());
        prop_assert!(same_prefix(&a.signal.values, &b.signal.values, cut));
        let (a, b) = (bollinger(&close, 20, 2.0).unwrap(), bollinger(&other, 20, 2.0).unwrap());
        prop_assert!(same_prefix(&a.upper.values, &b.upper.values, cut));
    }

    #[test]
    fn positions_use_only_earlier_closes(close in prices(), cut in 30usize..60, scale in 0.5f64..1.5) {
        // position t may depend on closes up to t - 1
        let other = perturb(&close, cut, scale);
        let a = macd_strategy(&close, 3, 8, 5, true).unwrap();
        let b = macd_strategy(&other, 3, 8, 5, true).unwrap();
        prop_assert_eq!(&a.positions[..=cut], &b.positions[..=cut]);
        let params = ThresholdParams { enter_long: Some(60.0), exit_long: Some(50.0), enter_short: Some(40.0), exit_short: Some(50.0) };
        let a = rsi_strategy(&close, 5, &params).unwrap();
        let b = rsi_strategy(&other, 5, &params).unwrap();
        prop_assert_eq!(&a.positions[..=cut], &b.positions[..=cut]);
    }

    #[test]
    fn equity_prefix_ignores_later_returns(
        r in prop::collection::vec(-0.05f64..0.05, 10..100),
        seed in prop::collection::vec(-1i8..=1, 100),
        cut in 1usize..10,
    ) {
        let n = r.len();
        let ps = PositionSeries {
            positions: seed[..n].iter().map(|&p| p.try_into().unwrap()).collect(),
            first_active: 0,
        };
        let other = perturb(&r, cut, -2.0);
        let a = equity_curve(&r, &ps, 0.001).unwrap();
        let b = equity_curve(&other, &ps, 0.001).unwrap();
        // E_cut covers intervals 0..cut; the last point also includes the closing fee
        prop_assert!(same_prefix(&a, &b, cut.min(n - 1) + 1));
    }

    #[test]
    fn flat_book_keeps_equity_at_one(r in prop::collection::vec(-0.05f64..0.05, 2..100)) {
        let ps = PositionSeries { positions: vec![Default::default(); r.len()], first_active: 0 };
        let rep = backtest(&r, &ps, 0.001, 105_120).unwrap();
        prop_assert!(rep.equity.iter().all(|&e| e == 1.0));
        prop_assert_eq!(rep.n_trades, 0);
        prop_assert_eq!(rep.md, 0.0);
    }
}

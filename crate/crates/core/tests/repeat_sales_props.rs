use landex_core::market::{Denomination, SaleKind, Token};
use landex_core::repeat_sales::{
    bmn_stage, case_shiller_index, match_repeat_sales, moic, variance_stage, VarianceModel,
};
use landex_core::synth::{generate_market, SynthConfig};
use landex_core::Decimal;
use proptest::prelude::*;

fn market(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        n_weeks: 12,
        mints_per_week: 15,
        resales_per_week: 20,
        sand_intro_week: 3,
        ..SynthConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pair_invariants(seed in any::<u64>()) {
        let m = generate_market(&market(seed)).unwrap();
        let (agg, table) = m.parse().unwrap();
        let pairs = match_repeat_sales(&agg.transactions);
        let secondary = agg.transactions.iter().filter(|t| t.sale_kind == SaleKind::Secondary).count();
        prop_assert!(pairs.len() <= secondary);
        for p in &pairs {
            prop_assert_eq!(&p.buy.bundle, &p.sell.bundle);
            prop_assert_eq!(p.sell.sale_kind, SaleKind::Secondary);
            prop_assert!(p.buy.timestamp < p.sell.timestamp);
            prop_assert_eq!(p.hold_weeks, p.buy.week().weeks_until(p.sell.week()));
            for d in [Denomination::Usd, Denomination::Token(Token::eth()), Denomination::Token(Token::sand())] {
                if let (Ok(r), Ok(dl)) = (moic::<f64>(p, &d, &table), p.dlog_price(&d, &table)) {
                    prop_assert!((r - dl.exp()).abs() < 1e-10 * r.max(1.0));
                }
            }
        }
    }

    #[test]
    fn index_is_invariant_to_price_scaling(seed in any::<u64>(), k in 0.01f64..100.0) {
        let m = generate_market(&market(seed)).unwrap();
        let (agg, table) = m.parse().unwrap();
        let factor = Decimal::try_from(k).unwrap();
        let scaled: Vec<_> = agg.transactions.iter().cloned().map(|mut t| {
            t.price_amount *= factor;
            t
        }).collect();
        let d = Denomination::Usd;
        let a = case_shiller_index::<f64>(&match_repeat_sales(&agg.transactions), &d, &table, Default::default()).unwrap();
        let b = case_shiller_index::<f64>(&match_repeat_sales(&scaled), &d, &table, Default::default()).unwrap();
        for (p, q) in a.index.points.iter().zip(&b.index.points) {
            prop_assert!((p.level / q.level - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn constant_variance_reproduces_first_stage() {
    let m = generate_market(&market(8)).unwrap();
    let (agg, table) = m.parse().unwrap();
    let pairs = match_repeat_sales(&agg.transactions);
    let stage1 = bmn_stage::<f64>(&pairs, &Denomination::Usd, &table).unwrap();
    // every hold equal: step 2 collapses to the mean squared residual
    let holds = vec![3.0; stage1.hold_weeks.len()];
    let v = variance_stage(&stage1.regression.residuals, &holds, VarianceModel::Linear).unwrap();
    assert!(v.constant);
    let w: Vec<f64> = v.predictions.iter().map(|p| 1.0 / p).collect();
    let stage3 = landex_core::regress::wls(&stage1.design, &stage1.response, &w).unwrap();
    for (a, b) in stage3.coefficients.iter().zip(&stage1.regression.coefficients) {
        assert!((a - b).abs() < 1e-12);
    }
}

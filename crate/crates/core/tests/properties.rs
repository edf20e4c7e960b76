use std::collections::BTreeMap;

use modchooser::earning::{expected_earning, StrategyFamily};
use modchooser::measure::{
    alternating_sum_claim, measure_expr, measure_modulo_given_restriction, MeasureEngine,
};
use modchooser::model::{
    classify, join, ns_unrestricted, pos, Classification, FullAssignment, ModuloSet, PositionSet,
    PositionUniverse, Restriction, RestrictionMultiSet,
};
use modchooser::rational::{format_rational, parse_rational, two_pow_exceeds, Rational};
use modchooser::strategy::{
    check_conservative, check_savings_lowerbound, with_savings, BettingStrategy,
};
use modchooser::verify::{random_family, random_strategy};
use modchooser::ClopenExpr;
use num_bigint::{BigInt, BigUint};
use num_traits::{One, Pow, Signed, Zero};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const L: u64 = 10;

fn restriction_strategy(max: u64, size: usize) -> impl Strategy<Value = Restriction> {
    prop::collection::btree_map(1..=max, any::<bool>(), 0..=size).prop_map(
        |m: BTreeMap<u64, bool>| Restriction::from_pairs(m.into_iter().map(|(p, b)| (pos(p), b))),
    )
}

fn positions_strategy(max: u64) -> impl Strategy<Value = PositionSet> {
    prop::collection::btree_set(1..=max, 1..=max as usize)
        .prop_map(|s| s.into_iter().map(pos).collect())
}

fn modulo_strategy(max: u64) -> impl Strategy<Value = ModuloSet> {
    (positions_strategy(max), 2u64..=5)
        .prop_flat_map(|(ps, m)| (Just(ps), Just(m), 0..m))
        .prop_map(|(ps, m, o)| ModuloSet::new(ps, m, o).unwrap())
}

fn expr_strategy() -> impl Strategy<Value = ClopenExpr> {
    let leaf = prop_oneof![
        Just(ClopenExpr::Full),
        Just(ClopenExpr::Empty),
        restriction_strategy(L, 4).prop_map(ClopenExpr::restriction),
        modulo_strategy(L).prop_map(ClopenExpr::modulo),
    ];
    leaf.prop_recursive(3, 24, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..3).prop_map(ClopenExpr::intersect),
            prop::collection::vec(inner.clone(), 0..3).prop_map(ClopenExpr::union),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| ClopenExpr::difference(a, b)),
            inner.prop_map(ClopenExpr::complement),
        ]
    })
}

fn brute_measure(e: &ClopenExpr) -> Rational {
    let total = 1u64 << L;
    let hits = (0..total)
        .filter(|&mask| e.contains(&FullAssignment::from_mask(mask, L as usize)) == Some(true))
        .count();
    Rational::new(BigInt::from(hits), BigInt::from(total))
}

fn strategy_from_seed(seed: u64, bets: usize) -> BettingStrategy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<u64> = (1..=12).collect();
    random_strategy(&mut rng, &positions, 8, bets)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn measure_matches_enumeration(e in expr_strategy()) {
        let expected = brute_measure(&e);
        prop_assert_eq!(MeasureEngine::new().measure_expr(&e), expected.clone());
        prop_assert_eq!(measure_expr(&e, PositionUniverse::new(L)).unwrap(), expected);
    }

    #[test]
    fn complement_measures_sum_to_one(e in expr_strategy()) {
        let mut engine = MeasureEngine::new();
        let a = engine.measure_expr(&e);
        let b = engine.measure_expr(&ClopenExpr::complement(e));
        prop_assert_eq!(a + b, Rational::one());
    }

    #[test]
    fn modulo_classes_partition(ps in positions_strategy(14), m in 2u64..=6, r in restriction_strategy(16, 6)) {
        let total: Rational = (0..m)
            .map(|o| measure_modulo_given_restriction(&ModuloSet::new(ps.clone(), m, o).unwrap(), &r))
            .sum();
        prop_assert_eq!(total, Rational::one());
    }

    #[test]
    fn restriction_measure_is_dyadic(r in restriction_strategy(20, 8)) {
        let expected = Rational::new(BigInt::one(), BigInt::one() << r.support_len());
        prop_assert_eq!(r.measure(), expected.clone());
        prop_assert_eq!(MeasureEngine::new().measure_expr(&ClopenExpr::restriction(r)), expected);
    }

    #[test]
    fn classification_is_exclusive_and_monotone(
        r in restriction_strategy(20, 10),
        extra in restriction_strategy(20, 6),
        i in positions_strategy(20),
        phi in 1u64..8,
    ) {
        let ns = ns_unrestricted(&r, &i);
        let c = classify(&r, &i, phi);
        let expected = if ns as u64 >= phi {
            Classification::Chubby
        } else if ns == 0 {
            Classification::RestrictsEntire
        } else {
            Classification::Lean
        };
        prop_assert_eq!(c, expected);
        let mut wider = r.clone();
        for (p, b) in extra.iter() {
            if !wider.restricts(p) {
                wider = wider.with(p, b).unwrap();
            }
        }
        prop_assert!(ns_unrestricted(&wider, &i) <= ns);
        if c != Classification::Chubby {
            prop_assert_ne!(classify(&wider, &i, phi), Classification::Chubby);
        }
    }

    #[test]
    fn join_adds_sum_sizes(
        a in prop::collection::vec((restriction_strategy(12, 5), 1u32..5), 0..6),
        b in prop::collection::vec((restriction_strategy(12, 5), 1u32..5), 0..6),
    ) {
        let ma = RestrictionMultiSet::from_entries(a.into_iter().map(|(r, k)| (r, BigUint::from(k)))).unwrap();
        let mb = RestrictionMultiSet::from_entries(b.into_iter().map(|(r, k)| (r, BigUint::from(k)))).unwrap();
        let j = join(&ma, &mb);
        prop_assert_eq!(j.sum_size(), ma.sum_size() + mb.sum_size());
        for r in j.restrictions() {
            prop_assert_eq!(j.multiplicity(r), ma.multiplicity(r) + mb.multiplicity(r));
        }
    }

    #[test]
    fn strategies_conserve_mass(seed in any::<u64>(), bets in 0usize..30) {
        let b = strategy_from_seed(seed, bets);
        prop_assert!(b.validate().is_ok());
        let leaves = b.leaves();
        let mass: Rational = leaves.iter().map(|l| l.mass.clone()).sum();
        prop_assert_eq!(mass, Rational::one());
        let cover: Rational = leaves.iter().map(|l| l.restriction.measure()).sum();
        prop_assert_eq!(cover, Rational::one());
        // E[capital] over leaves is 1.
        let expected: Rational = leaves.iter().map(|l| l.capital() * l.restriction.measure()).sum();
        prop_assert_eq!(expected, Rational::one());
        let back = BettingStrategy::from_dump(&b.dump()).unwrap();
        prop_assert_eq!(back, b);
    }

    #[test]
    fn savings_is_conservative(seed in any::<u64>(), bets in 0usize..30) {
        let b = strategy_from_seed(seed, bets);
        let s = with_savings(&b);
        prop_assert!(s.validate().is_ok());
        prop_assert!(check_conservative(&s));
        prop_assert!(check_savings_lowerbound(&b));
        let report = s.capital_report();
        for entry in report.nodes.values() {
            prop_assert!(entry.max_capital < &entry.capital + Rational::from_integer(2.into()));
        }
        let shape = |x: &BettingStrategy| {
            x.dump().into_iter().map(|d| (d.path, d.restriction, d.bet_position)).collect::<Vec<_>>()
        };
        prop_assert_eq!(shape(&s), shape(&b));
    }

    #[test]
    fn earning_subset_bound(seed in any::<u64>(), x in restriction_strategy(10, 3), y in restriction_strategy(10, 3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions: Vec<u64> = (1..=10).collect();
        let f: StrategyFamily = random_family(&mut rng, 3, &positions, 6, 12);
        let xe = ClopenExpr::restriction(x);
        let ye = ClopenExpr::intersect(vec![xe.clone(), ClopenExpr::restriction(y)]);
        let mut engine = MeasureEngine::new();
        let lx = engine.measure_expr(&xe);
        let ly = engine.measure_expr(&ye);
        prop_assume!(ly.is_positive());
        let ex = expected_earning(&f, &xe).unwrap();
        let ey = expected_earning(&f, &ye).unwrap();
        prop_assert!(ey * ly <= ex * lx);
    }

    #[test]
    fn alternating_sums_of_unimodal_sequences(mut up in prop::collection::vec(0u32..1000, 0..20), mut down in prop::collection::vec(0u32..1000, 0..20)) {
        up.sort_unstable();
        down.sort_unstable_by(|a, b| b.cmp(a));
        let seq: Vec<BigUint> = up.into_iter().chain(down).map(BigUint::from).collect();
        prop_assert!(alternating_sum_claim(&seq));
    }

    #[test]
    fn rational_text_round_trip(n in any::<i64>(), d in 1i64..i64::MAX) {
        let x = Rational::new(n.into(), d.into());
        prop_assert_eq!(parse_rational(&format_rational(&x)).unwrap(), x.clone());
        let json = serde_json::to_string(&modchooser::rational::Frac(&x).to_string()).unwrap();
        let s: String = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(parse_rational(&s).unwrap(), x);
    }

    #[test]
    fn two_pow_matches_integer_powers(a in -40i64..40, b in 1i64..12, yn in 1i64..5000, yd in 1i64..5000) {
        let t = Rational::new(a.into(), b.into());
        let y = Rational::new(yn.into(), yd.into());
        // 2^{a/b} > y  iff  2^a > y^b
        let lhs = if a >= 0 {
            Rational::from_integer(BigInt::one() << a as usize)
        } else {
            Rational::new(BigInt::one(), BigInt::one() << (-a) as usize)
        };
        let rhs: Rational = Pow::pow(&y, b as u32);
        prop_assert_eq!(two_pow_exceeds(&t, &y), lhs > rhs);
    }

    #[test]
    fn modulo_json_round_trip(m in modulo_strategy(30)) {
        let text = serde_json::to_string(&m).unwrap();
        let back: ModuloSet = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, m);
    }
}

#[test]
fn zero_and_negative_parse() {
    assert_eq!(parse_rational("0").unwrap(), Rational::zero());
    assert!(parse_rational("-3/4").unwrap().is_negative());
    assert!(parse_rational("1/0").is_err());
}

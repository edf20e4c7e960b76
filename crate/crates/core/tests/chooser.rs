use modchooser::chooser::{
    find_good_remainder, grow_restricted, lean_sum_size, measure_budget_holds,
    restricting_sum_size, scan_remainders, slim_to_restricted, slim_to_restricted_blocks,
    ChooserError, ChooserParams, ChooserState,
};
use modchooser::earning::StrategyFamily;
use modchooser::measure::{measure_expr, union_measure};
use modchooser::model::{pos, ModuloSet, PositionSet, Restriction, RestrictionMultiSet};
use modchooser::rational::{int, pow2, rat, Rational};
use modchooser::strategy::BettingStrategy;
use modchooser::{BitString, ClopenExpr};
use num_bigint::BigUint;
use num_traits::{One, Zero};

fn fixed(ps: impl IntoIterator<Item = u64>, bit: bool) -> Restriction {
    Restriction::from_pairs(ps.into_iter().map(|p| (pos(p), bit)))
}

fn big_pow2(e: usize) -> BigUint {
    BigUint::one() << e
}

#[test]
fn params_for_k0() {
    let p = ChooserParams::from_k(0);
    assert_eq!(p.m, BigUint::from(256u32));
    assert_eq!(p.n, 12);
    assert_eq!(p.phi, BigUint::from(1_048_576u32));
    assert_eq!(p.ell, num_traits::pow(BigUint::from(4_194_304u32), 99));
    assert_eq!(p.h(1), BigUint::from(512u32));
    assert_eq!(p.residue_threshold(), pow2(-20));
}

#[test]
fn params_for_k1() {
    let p = ChooserParams::from_k(1);
    assert_eq!(p.m, BigUint::from(1024u32));
    assert_eq!(p.n, 14);
    assert_eq!(p.phi, BigUint::from(16u32 * 1024 * 1024));
}

#[test]
fn xi_is_one_quarter() {
    for k in 0..=16 {
        let p = ChooserParams::from_k(k);
        assert_eq!(p.xi(), Some(rat(1, 4)), "k = {k}");
        let v = p.validate().unwrap();
        assert!(v.first_set_size);
        assert_eq!(v.total_measure, Some(true));
        assert!(measure_budget_holds(k));
    }
}

#[test]
fn literal_params_satisfy_grow_at_first_trigger() {
    assert!(
        ChooserParams::from_k(0)
            .validate()
            .unwrap()
            .grow_first_trigger
    );
}

#[test]
fn desk_params_validate() {
    let v = ChooserParams::desk(4, 2, 256, 260).validate().unwrap();
    assert_eq!(v.xi, rat(1, 4));
    assert!(v.first_set_size);
    assert!(!v.grow_first_trigger);
    assert!(ChooserParams::desk(4, 2, 16, 260).validate().is_err());
    assert!(ChooserParams::desk(4, 2, 32, 260).validate().is_err());
    assert!(ChooserParams::desk(1, 2, 16, 260).validate().is_err());
}

#[test]
fn slim_all_restricting() {
    let i = PositionSet::interval(1, 12);
    let mut r = RestrictionMultiSet::new();
    r.add_one(fixed(1..=12, true));
    let j = slim_to_restricted(&r, &i, 1, &rat(1, 4)).unwrap();
    assert_eq!(j, PositionSet::interval(1, 3));
    assert_eq!(restricting_sum_size(&r, &j), r.sum_size());
}

#[test]
fn slim_block_shape() {
    let i = PositionSet::interval(1, 12);
    let q = rat(1, 4);
    let sel = slim_to_restricted_blocks(&RestrictionMultiSet::new(), &i, 1, &q).unwrap();
    assert_eq!(sel.block_len, 3);
    assert_eq!(sel.block_count, 4);
    let q_actual = rat(sel.positions.len() as i64, 12);
    assert!(q_actual >= q && q_actual <= int(2) * &q);
}

#[test]
fn slim_q_range() {
    let i = PositionSet::interval(1, 12);
    let r = RestrictionMultiSet::new();
    assert!(matches!(
        slim_to_restricted(&r, &i, 1, &rat(1, 2)),
        Err(ChooserError::QOutOfRange { .. })
    ));
    assert!(matches!(
        slim_to_restricted(&r, &i, 1, &rat(1, 5)),
        Err(ChooserError::QOutOfRange { .. })
    ));
}

#[test]
fn slim_rejects_chubby() {
    let i = PositionSet::interval(1, 12);
    let mut r = RestrictionMultiSet::new();
    r.add_one(Restriction::empty());
    assert!(matches!(
        slim_to_restricted(&r, &i, 2, &rat(1, 4)),
        Err(ChooserError::ChubbyMember { .. })
    ));
}

#[test]
fn slim_avoids_free_block() {
    // Member free at position 5; blocks of 3, so block 1 must be skipped.
    let i = PositionSet::interval(1, 12);
    let mut r = RestrictionMultiSet::new();
    r.add_one(fixed((1..=12).filter(|&p| p != 5), false));
    let j = slim_to_restricted(&r, &i, 2, &rat(1, 4)).unwrap();
    assert_eq!(j, PositionSet::interval(1, 3));
    assert_eq!(restricting_sum_size(&r, &j), pow2(-11));
}

#[test]
fn grow_keeps_set_when_lean_is_small() {
    // One restricting member of sum-size 1, lean sum-size 1/16: g = 1.
    let i = PositionSet::interval(1, 1001);
    let mut r = RestrictionMultiSet::new();
    r.add(fixed(1..=1001, true), big_pow2(1001));
    r.add(fixed(1..=1000, false), big_pow2(996));
    assert_eq!(lean_sum_size(&r, &i, 2), rat(1, 16));
    let out = grow_restricted(&r, &i, 2, &rat(1, 5), &int(1)).unwrap();
    assert_eq!(out.positions, i);
    assert_eq!(out.iterations, 0);
    assert!(out.converged);
}

#[test]
fn grow_single_lean_member() {
    // Lean sum-size 7/32 > δ; one iteration picks a block without the free position.
    let i = PositionSet::interval(1, 10001);
    let mut r = RestrictionMultiSet::new();
    r.add(
        fixed(2..=10001, false),
        BigUint::from(28u32) * big_pow2(10000 - 7),
    );
    assert_eq!(lean_sum_size(&r, &i, 2), rat(7, 32));
    let out = grow_restricted(&r, &i, 2, &rat(1, 5), &Rational::zero()).unwrap();
    assert_eq!(out.iterations, 1);
    assert!(out.converged);
    assert!(!out.positions.contains(pos(1)));
    assert_eq!(out.positions.len(), 1001);
    assert_eq!(out.lean_sum_size, Rational::zero());
    assert_eq!(out.restricted_sum_size, rat(7, 32));
}

#[test]
fn grow_precondition_checked() {
    let i = PositionSet::interval(1, 12);
    let mut r = RestrictionMultiSet::new();
    r.add_one(fixed(2..=12, true));
    assert!(matches!(
        grow_restricted(&r, &i, 2, &rat(1, 5), &Rational::zero()),
        Err(ChooserError::PreconditionFailed(_))
    ));
    assert!(matches!(
        grow_restricted(&r, &i, 2, &rat(1, 5), &int(1)),
        Err(ChooserError::PreconditionFailed(_))
    ));
}

#[test]
fn good_remainder_empty_theta() {
    let f = StrategyFamily::initial(3);
    let i = PositionSet::interval(1, 8);
    let g = find_good_remainder(
        &f,
        &RestrictionMultiSet::new(),
        &i,
        4,
        &rat(3, 2),
        &rat(1, 4),
    )
    .unwrap();
    assert_eq!(g.o, 0);
    assert_eq!(g.earning, rat(7, 8));
    assert_eq!(g.theta_given_m, Rational::zero());
}

#[test]
fn good_remainder_bounds() {
    let f = StrategyFamily::initial(2);
    let i = PositionSet::interval(1, 16);
    let mut theta = RestrictionMultiSet::new();
    theta.add_one(fixed(1..=8, true));
    let delta = rat(1, 4);
    let c = rat(3, 2);
    assert!(union_measure(theta.restrictions()) <= delta);
    let g = find_good_remainder(&f, &theta, &i, 4, &c, &delta).unwrap();
    assert!(g.earning <= int(3));
    assert!(g.theta_given_m <= &c * &delta);

    let set = ModuloSet::new(i.clone(), 4, g.o).unwrap();
    let m_expr = ClopenExpr::modulo(set);
    let meet = ClopenExpr::intersect(vec![
        m_expr.clone(),
        ClopenExpr::union_of(theta.restrictions()),
    ]);
    let u = modchooser::model::PositionUniverse::new(16);
    let expected = measure_expr(&meet, u).unwrap() / measure_expr(&m_expr, u).unwrap();
    assert_eq!(g.theta_given_m, expected);

    let scores = scan_remainders(&f, &theta, &i, 4).unwrap();
    assert_eq!(scores.len(), 4);
    let total: Rational = scores.iter().map(|s| s.measure.clone()).sum();
    assert_eq!(total, int(1));
}

#[test]
fn good_remainder_precondition() {
    let f = StrategyFamily::initial(1);
    let i = PositionSet::interval(1, 8);
    let mut theta = RestrictionMultiSet::new();
    theta.add_one(fixed([1], true));
    assert!(matches!(
        find_good_remainder(&f, &theta, &i, 4, &rat(3, 2), &rat(1, 4)),
        Err(ChooserError::PreconditionFailed(_))
    ));
}

fn fair_tree(depth: u64) -> BettingStrategy {
    let mut b = BettingStrategy::initial();
    let mut frontier = vec![BitString::empty()];
    for p in 1..=depth {
        let mut next = Vec::new();
        for s in frontier {
            let half = b.node(&s).unwrap().mass.clone() / int(2);
            b = b.define_bet(&s, pos(p), half.clone(), half).unwrap();
            next.push(s.child(false));
            next.push(s.child(true));
        }
        frontier = next;
    }
    b
}

#[test]
fn first_turn_emits_full_interval() {
    let p = ChooserParams::desk(4, 2, 256, 260);
    let mut state = ChooserState::new(p, 1_000).unwrap();
    let f = StrategyFamily::initial(2);
    let (set, report) = state.turn(1, &f).unwrap().unwrap();
    assert_eq!(
        set,
        ModuloSet::new(PositionSet::interval(1, 260), 4, 0).unwrap()
    );
    assert_eq!(report.index, 1);
    assert!(report.violations().is_empty());
    for t in 2..6 {
        assert!(state.turn(t, &f).unwrap().is_none());
    }
    assert_eq!(state.chosen().len(), 1);
}

#[test]
fn slimming_triggers_new_set() {
    let p = ChooserParams::desk(4, 2, 256, 260);
    let mut state = ChooserState::new(p, 1_000).unwrap();
    let f0 = StrategyFamily::initial(2);
    state.turn(1, &f0).unwrap().unwrap();

    // Four restricted positions leave 256 free: still chubby.
    let f4 = StrategyFamily::new(vec![fair_tree(4), BettingStrategy::initial()]).unwrap();
    assert_eq!(state.slimmed_sum_size(&f4), Rational::zero());
    assert!(state.turn(2, &f4).unwrap().is_none());

    let f5 = StrategyFamily::new(vec![fair_tree(5), BettingStrategy::initial()]).unwrap();
    assert_eq!(state.slimmed_sum_size(&f5), int(1));
    let (set, report) = state.turn(3, &f5).unwrap().unwrap();
    assert_eq!(report.index, 2);
    assert_eq!(report.trigger_slimmed_sum, Some(int(1)));
    assert!(set.positions().is_subset_of(&PositionSet::interval(1, 260)));
    assert_eq!(state.chosen().len(), 2);
    assert_eq!(state.slimmed_sum_size(&f5), Rational::zero());
}

#[test]
fn bounds_grow_geometrically() {
    let p = ChooserParams::desk(4, 3, 256, 260);
    assert_eq!(p.bounds(3), vec![int(512), int(1024), int(2048)]);
    assert_eq!(p.max_chosen(), 25);
    assert_eq!(p.total_measure_budget(), rat(25, 3));
    assert!(!p.h(1).is_zero());
}

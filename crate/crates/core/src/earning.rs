//! Expected earning of weighted strategy families and the lemmas built on it.

use num_bigint::BigUint;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::measure::{measure_modulo_given_restriction, ClopenExpr, Compiled, MeasureEngine};
use crate::model::{
    classify, ns_unrestricted, Classification, ModuloSet, Position, PositionSet, Restriction,
    RestrictionMultiSet,
};
use crate::rational::{exact_sqrt, from_biguint, int, pow2, Rational};
use crate::strategy::BettingStrategy;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EarningError {
    #[error("a strategy family needs at least one strategy")]
    EmptyFamily,
    #[error("the conditioning set has measure zero")]
    ZeroMeasure,
    #[error("parts do not form a partition: {0}")]
    NotAPartition(String),
    #[error("threshold d must satisfy 0 < d < λ(X)")]
    InvalidThreshold,
    #[error("the later family does not extend the earlier one")]
    NotExtension,
    #[error("phi = {0} is not a perfect square")]
    PhiNotPerfectSquare(u64),
    #[error("phi = {phi} must exceed m^2 = {m_sq}")]
    PhiTooSmall { phi: u64, m_sq: u64 },
}

/// Strategies `B_1..B_n`, strategy `i` weighted `2^{-i}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyFamily {
    strategies: Vec<BettingStrategy>,
}

impl StrategyFamily {
    pub fn new(strategies: Vec<BettingStrategy>) -> Result<Self, EarningError> {
        if strategies.is_empty() {
            return Err(EarningError::EmptyFamily);
        }
        Ok(StrategyFamily { strategies })
    }

    pub fn initial(n: usize) -> Self {
        assert!(n >= 1, "family size must be positive");
        StrategyFamily {
            strategies: vec![BettingStrategy::initial(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.strategies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strategies.is_empty()
    }

    /// 1-based.
    pub fn get(&self, i: usize) -> Option<&BettingStrategy> {
        i.checked_sub(1).and_then(|k| self.strategies.get(k))
    }

    pub fn strategies(&self) -> &[BettingStrategy] {
        &self.strategies
    }

    /// `(i, 2^{-i}, B_i)` with 1-based `i`.
    pub fn weighted(&self) -> impl Iterator<Item = (usize, Rational, &BettingStrategy)> {
        self.strategies
            .iter()
            .enumerate()
            .map(|(k, b)| (k + 1, pow2(-(k as i64 + 1)), b))
    }

    /// Replaces `B_i`, padding with initial strategies if `i > len`.
    pub fn set(&mut self, i: usize, b: BettingStrategy) {
        assert!(i >= 1, "strategy indices are 1-based");
        while self.strategies.len() < i {
            self.strategies.push(BettingStrategy::initial());
        }
        self.strategies[i - 1] = b;
    }

    /// `B^{1:n}`, padded with initial strategies.
    pub fn truncated(&self, n: usize) -> StrategyFamily {
        let mut v: Vec<_> = self.strategies.iter().take(n).cloned().collect();
        v.resize(n.max(1), BettingStrategy::initial());
        StrategyFamily { strategies: v }
    }

    /// Every strategy of `before` is extended by the same-index strategy here.
    pub fn extends(&self, before: &StrategyFamily) -> bool {
        before.weighted().all(|(i, _, b)| match self.get(i) {
            Some(a) => a.extends(b),
            None => b == &BettingStrategy::initial(),
        })
    }

    pub fn leaf_restrictions(&self) -> RestrictionMultiSet {
        let mut out = RestrictionMultiSet::new();
        for b in &self.strategies {
            for (r, m) in b.leaf_restrictions().iter() {
                out.add(r.clone(), m.clone());
            }
        }
        out
    }

    pub fn max_position(&self) -> Option<Position> {
        self.strategies
            .iter()
            .filter_map(|b| b.max_position())
            .max()
    }
}

/// `Σ_i 2^{-i} Σ_leaves μ_i(s)·λ(X | ρ̃_i(s))`, i.e. earning times `λ(X)`.
fn weighted_leaf_sum(engine: &mut MeasureEngine, f: &StrategyFamily, x: &Compiled) -> Rational {
    let mut total = Rational::zero();
    for (_, w, b) in f.weighted() {
        let mut inner = Rational::zero();
        for leaf in b.leaves() {
            if leaf.mass.is_zero() {
                continue;
            }
            inner += &leaf.mass * engine.measure_given(x, &leaf.restriction);
        }
        total += w * inner;
    }
    total
}

/// Expected earning of `f` on `x`.
pub fn expected_earning(f: &StrategyFamily, x: &ClopenExpr) -> Result<Rational, EarningError> {
    let mut engine = MeasureEngine::new();
    expected_earning_with(&mut engine, f, x)
}

pub fn expected_earning_with(
    engine: &mut MeasureEngine,
    f: &StrategyFamily,
    x: &ClopenExpr,
) -> Result<Rational, EarningError> {
    let c = engine.compile(x);
    let lx = engine.measure(&c);
    if lx.is_zero() {
        return Err(EarningError::ZeroMeasure);
    }
    Ok(weighted_leaf_sum(engine, f, &c) / lx)
}

/// Expected earning on a single modulo set, via the binomial formula.
pub fn expected_earning_on_modulo(
    f: &StrategyFamily,
    m: &ModuloSet,
) -> Result<Rational, EarningError> {
    let lm = measure_modulo_given_restriction(m, &Restriction::empty());
    if lm.is_zero() {
        return Err(EarningError::ZeroMeasure);
    }
    let mut total = Rational::zero();
    for (_, w, b) in f.weighted() {
        let mut inner = Rational::zero();
        b.visit(|_, v| {
            if v.bet_position.is_none() && !v.mass.is_zero() {
                inner += v.mass * measure_modulo_given_restriction(m, v.restriction);
            }
        });
        total += w * inner;
    }
    Ok(total / lm)
}

/// Index of a part whose earning does not exceed the earning on the union.
pub fn min_earning_part(f: &StrategyFamily, parts: &[ClopenExpr]) -> Result<usize, EarningError> {
    if parts.is_empty() {
        return Err(EarningError::NotAPartition("no parts".into()));
    }
    let mut engine = MeasureEngine::new();
    let mut sum = Rational::zero();
    let mut earnings = Vec::with_capacity(parts.len());
    for (k, p) in parts.iter().enumerate() {
        let c = engine.compile(p);
        let lp = engine.measure(&c);
        if lp.is_zero() {
            return Err(EarningError::NotAPartition(format!(
                "part {k} has measure zero"
            )));
        }
        earnings.push(weighted_leaf_sum(&mut engine, f, &c) / &lp);
        sum += lp;
    }
    let union = engine.measure_expr(&ClopenExpr::union(parts.to_vec()));
    if union != sum {
        return Err(EarningError::NotAPartition("parts overlap".into()));
    }
    let mut best = 0;
    for (k, e) in earnings.iter().enumerate() {
        if *e < earnings[best] {
            best = k;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LowCapitalSubset {
    /// `Y = X ∖ Z`.
    pub subset: ClopenExpr,
    /// Capital bound `2^i·q·earn` per strategy, index 0 is strategy 1.
    #[serde(with = "crate::rational::serde_rational_vec")]
    pub bounds: Vec<Rational>,
    #[serde(with = "crate::rational::serde_rational")]
    pub measure_subset: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub measure_excluded: Rational,
    /// `λ(Z) <= λ(X) − d`.
    pub excluded_bound_holds: bool,
    /// `λ(Y) >= d`.
    pub subset_bound_holds: bool,
    /// `λ(Y) > d`.
    pub strict: bool,
    /// Every leaf meeting `Y` has capital within its bound.
    pub capital_bound_holds: bool,
}

impl LowCapitalSubset {
    pub fn guarantees_hold(&self) -> bool {
        self.excluded_bound_holds && self.subset_bound_holds && self.capital_bound_holds
    }
}

/// Removes from `X` every leaf cylinder whose capital exceeds `2^i·q·earn`.
pub fn low_capital_subset(
    f: &StrategyFamily,
    x: &ClopenExpr,
    d: &Rational,
) -> Result<LowCapitalSubset, EarningError> {
    let mut engine = MeasureEngine::new();
    let cx = engine.compile(x);
    let lx = engine.measure(&cx);
    if lx.is_zero() {
        return Err(EarningError::ZeroMeasure);
    }
    if !d.is_positive() || *d >= lx {
        return Err(EarningError::InvalidThreshold);
    }
    let earn = weighted_leaf_sum(&mut engine, f, &cx) / &lx;
    let q = &lx / (&lx - d);
    let mut bounds = Vec::new();
    let mut excluded = Vec::new();
    for (i, _, b) in f.weighted() {
        let bound = pow2(i as i64) * &q * &earn;
        for leaf in b.leaves() {
            if leaf.capital() > bound && !engine.measure_given(&cx, &leaf.restriction).is_zero() {
                excluded.push(leaf.restriction);
            }
        }
        bounds.push(bound);
    }
    let union = ClopenExpr::union_of(&excluded);
    let y = ClopenExpr::difference(x.clone(), union.clone());
    let z = ClopenExpr::intersect(vec![x.clone(), union]);
    let ly = engine.measure_expr(&y);
    let lz = engine.measure_expr(&z);
    let cy = engine.compile(&y);
    let mut capital_ok = true;
    for ((_, _, b), bound) in f.weighted().zip(&bounds) {
        for leaf in b.leaves() {
            if leaf.capital() > *bound && !engine.measure_given(&cy, &leaf.restriction).is_zero() {
                capital_ok = false;
            }
        }
    }
    Ok(LowCapitalSubset {
        subset: y,
        bounds,
        excluded_bound_holds: lz <= &lx - d,
        subset_bound_holds: ly >= *d,
        strict: ly > *d,
        capital_bound_holds: capital_ok,
        measure_subset: ly,
        measure_excluded: lz,
    })
}

/// Leaves of `after` that are `(I,phi)`-slim while the leaf of `before` they
/// descend from was chubby.
pub fn slimmed_down(
    before: &BettingStrategy,
    after: &BettingStrategy,
    i: &PositionSet,
    phi: u64,
) -> Vec<Restriction> {
    let mut out = Vec::new();
    after.visit(|path, v| {
        if v.bet_position.is_some() {
            return;
        }
        if classify(v.restriction, i, phi).is_slim() {
            let anc = before
                .leaf_on_path(path)
                .and_then(|p| before.node(&p).map(|n| n.restriction.clone()));
            if let Some(a) = anc {
                if classify(&a, i, phi) == Classification::Chubby {
                    out.push(v.restriction.clone());
                }
            }
        }
    });
    out
}

/// Multiset of slimmed-down leaves over a whole family.
pub fn slimmed_down_family(
    before: &StrategyFamily,
    after: &StrategyFamily,
    i: &PositionSet,
    phi: u64,
) -> RestrictionMultiSet {
    let mut out = RestrictionMultiSet::new();
    for (k, _, b) in before.weighted() {
        let a = after.get(k).cloned().unwrap_or_default();
        for r in slimmed_down(b, &a, i, phi) {
            out.add_one(r);
        }
    }
    out
}

/// Lean leaf restrictions of a family.
pub fn lean_leaves(f: &StrategyFamily, i: &PositionSet, phi: u64) -> RestrictionMultiSet {
    f.leaf_restrictions()
        .filter(|r| classify(r, i, phi) == Classification::Lean)
}

/// Leaf restrictions of a family that restrict all of `I`.
pub fn restricting_leaves(f: &StrategyFamily, i: &PositionSet) -> RestrictionMultiSet {
    f.leaf_restrictions().filter(|r| ns_unrestricted(r, i) == 0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KlEtaWitnesses {
    #[serde(with = "crate::rational::serde_rational")]
    pub xi: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub theta_sum_size: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub delta_sum_size: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub theta_given_m: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub delta_given_m: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub measure_m: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub measure_m_prime: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub earn_before: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KlEtaReport {
    #[serde(with = "crate::rational::serde_rational_opt")]
    pub lhs: Option<Rational>,
    #[serde(with = "crate::rational::serde_rational_opt")]
    pub rhs: Option<Rational>,
    /// `rhs − lhs` when both sides are defined.
    #[serde(with = "crate::rational::serde_rational_opt")]
    pub slack: Option<Rational>,
    /// `λ(M') = 0`: nothing is asserted.
    pub vacuous: bool,
    /// Both factors of the bound have positive denominators.
    pub denominator_positive: bool,
    /// The main inequality, `None` when vacuous or a denominator is not positive.
    pub main_holds: Option<bool>,
    /// `λ(M)/λ(M') <= 1/(1 − λ(Θ̃|M) − λ(Δ̃|M))`.
    pub measure_ratio_holds: Option<bool>,
    /// `λ(Δ̃|M) <= λ⁺(Δ)/(1 − ξ)`.
    pub delta_measure_holds: Option<bool>,
    pub witnesses: KlEtaWitnesses,
}

impl KlEtaReport {
    /// No checked inequality failed.
    pub fn holds(&self) -> bool {
        self.main_holds != Some(false)
            && self.measure_ratio_holds != Some(false)
            && self.delta_measure_holds != Some(false)
    }
}

/// Exact check of the earning bound on `M' = M ∖ (Δ̃ ∪ Θ̃)` after new bets.
pub fn verify_kl_eta(
    before: &StrategyFamily,
    after: &StrategyFamily,
    m: &ModuloSet,
    phi: u64,
) -> Result<KlEtaReport, EarningError> {
    let modulus = m.modulus();
    let m_sq = modulus * modulus;
    if phi <= m_sq {
        return Err(EarningError::PhiTooSmall { phi, m_sq });
    }
    let root = exact_sqrt(&BigUint::from(phi)).ok_or(EarningError::PhiNotPerfectSquare(phi))?;
    if !after.extends(before) {
        return Err(EarningError::NotExtension);
    }
    let after = after.truncated(before.len());
    let xi = int(modulus as i64) / from_biguint(&root);
    let i = m.positions();
    let theta = lean_leaves(before, i, phi);
    let delta = slimmed_down_family(before, &after, i, phi);

    let mut engine = MeasureEngine::new();
    let m_expr = ClopenExpr::modulo(m.clone());
    let lm = measure_modulo_given_restriction(m, &Restriction::empty());
    let given_m = |engine: &mut MeasureEngine, rs: &RestrictionMultiSet| {
        let e = ClopenExpr::intersect(vec![
            m_expr.clone(),
            ClopenExpr::union_of(rs.restrictions()),
        ]);
        engine.measure_expr(&e) / &lm
    };
    let theta_given_m = given_m(&mut engine, &theta);
    let delta_given_m = given_m(&mut engine, &delta);
    let removed = ClopenExpr::union_of(theta.restrictions().chain(delta.restrictions()));
    let m_prime = ClopenExpr::difference(m_expr.clone(), removed);
    let lm_prime = engine.measure_expr(&m_prime);
    let earn_before = expected_earning_on_modulo(before, m)?;
    let theta_sum = theta.sum_size();
    let delta_sum = delta.sum_size();

    let one = Rational::one();
    let one_minus_xi = &one - &xi;
    let denom_a = &one - int(2) * &xi;
    let denom_b = &one - &theta_given_m - &delta_sum / &one_minus_xi;
    let denominator_positive = denom_a.is_positive() && denom_b.is_positive();
    let vacuous = lm_prime.is_zero();

    let lhs = if vacuous {
        None
    } else {
        Some(expected_earning_with(&mut engine, &after, &m_prime)?)
    };
    let rhs = denominator_positive.then(|| &earn_before / (&denom_a * &denom_b));
    let slack = match (&lhs, &rhs) {
        (Some(l), Some(r)) => Some(r - l),
        _ => None,
    };
    let main_holds = slack.as_ref().map(|s| !s.is_negative());
    let denom_c = &one - &theta_given_m - &delta_given_m;
    let measure_ratio_holds =
        (!vacuous && denom_c.is_positive()).then(|| &lm / &lm_prime <= &one / &denom_c);
    let delta_measure_holds = Some(delta_given_m <= &delta_sum / &one_minus_xi);

    Ok(KlEtaReport {
        lhs,
        rhs,
        slack,
        vacuous,
        denominator_positive,
        main_holds,
        measure_ratio_holds,
        delta_measure_holds,
        witnesses: KlEtaWitnesses {
            xi,
            theta_sum_size: theta_sum,
            delta_sum_size: delta_sum,
            theta_given_m,
            delta_given_m,
            measure_m: lm,
            measure_m_prime: lm_prime,
            earn_before,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{pos, BitString};
    use crate::rational::rat;

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    fn r(pairs: &[(u64, u8)]) -> Restriction {
        Restriction::from_pairs(pairs.iter().map(|&(p, b)| (pos(p), b == 1)))
    }

    fn md(lo: u64, hi: u64, m: u64, o: u64) -> ModuloSet {
        ModuloSet::new(PositionSet::interval(lo, hi), m, o).unwrap()
    }

    fn example() -> BettingStrategy {
        BettingStrategy::initial()
            .define_bet(&bs(""), pos(3), rat(3, 4), rat(1, 4))
            .unwrap()
    }

    #[test]
    fn earning_examples() {
        for n in 1..6 {
            let f = StrategyFamily::initial(n);
            assert_eq!(
                expected_earning(&f, &ClopenExpr::Full).unwrap(),
                int(1) - pow2(-(n as i64))
            );
        }
        let f = StrategyFamily::initial(2);
        let m = md(1, 7, 3, 1);
        assert_eq!(
            expected_earning(&f, &ClopenExpr::modulo(m.clone())).unwrap(),
            rat(3, 4)
        );
        assert_eq!(expected_earning_on_modulo(&f, &m).unwrap(), rat(3, 4));
        let f = StrategyFamily::new(vec![example()]).unwrap();
        let x = ClopenExpr::restriction(r(&[(3, 0)]));
        assert_eq!(expected_earning(&f, &x).unwrap(), rat(3, 4));
        assert_eq!(
            expected_earning(&f, &ClopenExpr::Empty),
            Err(EarningError::ZeroMeasure)
        );
    }

    #[test]
    fn modulo_fast_path_agrees() {
        let b = example()
            .define_bet(&bs("0"), pos(1), rat(1, 2), rat(1, 4))
            .unwrap()
            .define_bet(&bs("01"), pos(2), int(0), rat(1, 4))
            .unwrap();
        let f = StrategyFamily::new(vec![b, example()]).unwrap();
        for o in 0..3 {
            let m = md(1, 5, 3, o);
            assert_eq!(
                expected_earning(&f, &ClopenExpr::modulo(m.clone())).unwrap(),
                expected_earning_on_modulo(&f, &m).unwrap()
            );
        }
    }

    #[test]
    fn min_part_examples() {
        let f = StrategyFamily::initial(3);
        let parts: Vec<_> = (0..3).map(|o| ClopenExpr::modulo(md(1, 4, 3, o))).collect();
        assert_eq!(min_earning_part(&f, &parts).unwrap(), 0);
        let all_on_a = BettingStrategy::initial()
            .define_bet(&bs(""), pos(1), int(1), int(0))
            .unwrap();
        let f = StrategyFamily::new(vec![all_on_a]).unwrap();
        let parts = vec![
            ClopenExpr::restriction(r(&[(1, 0)])),
            ClopenExpr::restriction(r(&[(1, 1)])),
        ];
        assert_eq!(min_earning_part(&f, &parts).unwrap(), 1);
        let overlapping = vec![ClopenExpr::Full, ClopenExpr::restriction(r(&[(1, 1)]))];
        assert!(matches!(
            min_earning_part(&f, &overlapping),
            Err(EarningError::NotAPartition(_))
        ));
    }

    #[test]
    fn low_capital_examples() {
        let f = StrategyFamily::new(vec![example()]).unwrap();
        let out = low_capital_subset(&f, &ClopenExpr::Full, &rat(1, 4)).unwrap();
        assert_eq!(out.bounds, vec![rat(4, 3)]);
        assert_eq!(out.measure_excluded, rat(1, 2));
        assert_eq!(out.measure_subset, rat(1, 2));
        assert!(out.guarantees_hold());
        assert!(out.strict);

        let f = StrategyFamily::initial(3);
        let x = ClopenExpr::modulo(md(1, 6, 2, 1));
        let out = low_capital_subset(&f, &x, &rat(1, 3)).unwrap();
        assert_eq!(out.measure_excluded, int(0));
        assert_eq!(out.measure_subset, rat(1, 2));
        assert!(out.guarantees_hold());
        assert_eq!(
            low_capital_subset(&f, &x, &rat(1, 2)),
            Err(EarningError::InvalidThreshold)
        );
    }

    #[test]
    fn kl_eta_no_new_bets() {
        let f = StrategyFamily::new(vec![example(), BettingStrategy::initial()]).unwrap();
        let m = md(1, 40, 2, 0);
        let rep = verify_kl_eta(&f, &f, &m, 16).unwrap();
        assert_eq!(rep.witnesses.delta_sum_size, int(0));
        assert_eq!(rep.witnesses.xi, rat(1, 2));
        assert!(rep.holds());
        assert_eq!(
            verify_kl_eta(&f, &f, &m, 4),
            Err(EarningError::PhiTooSmall { phi: 4, m_sq: 4 })
        );
        assert_eq!(
            verify_kl_eta(&f, &f, &m, 20),
            Err(EarningError::PhiNotPerfectSquare(20))
        );
    }

    #[test]
    fn kl_eta_single_slimmed_leaf() {
        // phi = 9 > m^2 = 4: the root leaves 10 positions of I free, the
        // leaves "00" and "01" only 8.
        let m = md(1, 10, 2, 0);
        let before = StrategyFamily::new(vec![BettingStrategy::initial()]).unwrap();
        let mut b = BettingStrategy::initial();
        let mut path = BitString::empty();
        for p in 1..=2 {
            let mass = b.node(&path).unwrap().mass.clone();
            b = b
                .define_bet(&path, pos(p), mass.clone() * rat(3, 4), mass * rat(1, 4))
                .unwrap();
            path = path.child(false);
        }
        let after = StrategyFamily::new(vec![b]).unwrap();
        let rep = verify_kl_eta(&before, &after, &m, 9).unwrap();
        assert_eq!(rep.witnesses.delta_sum_size, rat(1, 2));
        assert_eq!(rep.witnesses.xi, rat(2, 3));
        assert!(!rep.denominator_positive);
        assert!(rep.holds());
    }

    #[test]
    fn kl_eta_rejects_non_extension() {
        let a = StrategyFamily::new(vec![example()]).unwrap();
        let b = StrategyFamily::initial(1);
        assert_eq!(
            verify_kl_eta(&a, &b, &md(1, 20, 2, 0), 16),
            Err(EarningError::NotExtension)
        );
    }

    #[test]
    fn slimmed_down_detection() {
        let i = PositionSet::interval(1, 3);
        let before = BettingStrategy::initial();
        let after = before
            .define_bet(&bs(""), pos(1), rat(1, 2), rat(1, 2))
            .unwrap()
            .define_bet(&bs("0"), pos(9), rat(1, 4), rat(1, 4))
            .unwrap();
        // phi = 3: root chubby (3 free), children have 2 free -> slim.
        assert_eq!(slimmed_down(&before, &after, &i, 3).len(), 3);
        // phi = 2: children still chubby
        assert!(slimmed_down(&before, &after, &i, 2).is_empty());
    }
}

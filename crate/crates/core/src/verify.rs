//! Randomized property suites over the lemma checks, sharded with rayon.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_traits::{One, Signed, Zero};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chooser::{
    find_good_remainder, grow_restricted, lean_sum_size, measure_budget_holds,
    restricting_sum_size, slim_to_restricted, slim_to_restricted_blocks, ChooserParams,
};
use crate::earning::{
    expected_earning, low_capital_subset, min_earning_part, verify_kl_eta, StrategyFamily,
};
use crate::gamblers::{gambler_by_name, GAMBLER_NAMES};
use crate::game::{run_game, GameOptions};
use crate::measure::{check_modulo_independence_sq, union_measure, ClopenExpr, MeasureEngine};
use crate::model::{
    ns_unrestricted, pos, ModuloSet, Position, PositionSet, Restriction, RestrictionMultiSet,
};
use crate::rational::{int, pow2, rat, Rational};
use crate::strategy::{
    check_conservative, check_savings_lowerbound, with_savings, BettingStrategy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Proposition,
    Savings,
    Earning,
    KlEta,
    Slim,
    Grow,
    GoodMod,
    ChooserClaims,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Proposition,
        Suite::Savings,
        Suite::Earning,
        Suite::KlEta,
        Suite::Slim,
        Suite::Grow,
        Suite::GoodMod,
        Suite::ChooserClaims,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Proposition => "proposition",
            Suite::Savings => "savings",
            Suite::Earning => "earning",
            Suite::KlEta => "kl-eta",
            Suite::Slim => "slim",
            Suite::Grow => "grow",
            Suite::GoodMod => "good-mod",
            Suite::ChooserClaims => "chooser-claims",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown suite `{0}`")]
pub struct UnknownSuite(pub String);

impl FromStr for Suite {
    type Err = UnknownSuite;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| UnknownSuite(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    pub case: u64,
    pub seed: u64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub cases: u64,
    pub seed: u64,
    pub passed: u64,
    pub failed: u64,
    /// Cases whose generated instance missed a hypothesis; counted as passed.
    pub skipped: u64,
    pub counterexamples: Vec<Counterexample>,
}

impl SuiteReport {
    pub fn ok(&self) -> bool {
        self.failed == 0
    }
}

/// Result of a single case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Skip,
    Fail(String),
}

const MAX_COUNTEREXAMPLES: usize = 20;

/// Runs `cases` cases of `suite`; case `i` uses seed `seed + i`.
pub fn run_suite(suite: Suite, cases: u64, seed: u64) -> SuiteReport {
    let outcomes: Vec<(u64, u64, Outcome)> = (0..cases)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_add(i);
            (i, s, run_case(suite, i, s))
        })
        .collect();
    let mut report = SuiteReport {
        suite,
        cases,
        seed,
        passed: 0,
        failed: 0,
        skipped: 0,
        counterexamples: Vec::new(),
    };
    for (case, seed, o) in outcomes {
        match o {
            Outcome::Pass => report.passed += 1,
            Outcome::Skip => {
                report.passed += 1;
                report.skipped += 1;
            }
            Outcome::Fail(detail) => {
                report.failed += 1;
                if report.counterexamples.len() < MAX_COUNTEREXAMPLES {
                    report
                        .counterexamples
                        .push(Counterexample { case, seed, detail });
                }
            }
        }
    }
    report
}

pub fn run_case(suite: Suite, case: u64, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match suite {
        Suite::Proposition => proposition_case(&mut rng),
        Suite::Savings => savings_case(&mut rng),
        Suite::Earning => earning_case(&mut rng),
        Suite::KlEta => kl_eta_case(&mut rng),
        Suite::Slim => slim_case(&mut rng, case),
        Suite::Grow => grow_case(&mut rng),
        Suite::GoodMod => good_mod_case(&mut rng),
        Suite::ChooserClaims => chooser_claims_case(case, seed),
    }
}

fn fail_unless(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn outcome(r: Result<Outcome, String>) -> Outcome {
    r.unwrap_or_else(Outcome::Fail)
}

/// Random strategy with at most `bets` bets, depth at most `max_depth`, on
/// positions drawn from `positions`.
pub fn random_strategy(
    rng: &mut impl Rng,
    positions: &[u64],
    max_depth: usize,
    bets: usize,
) -> BettingStrategy {
    extend_strategy(rng, &BettingStrategy::initial(), positions, max_depth, bets)
}

/// Extends `b` by up to `bets` more random bets.
pub fn extend_strategy(
    rng: &mut impl Rng,
    b: &BettingStrategy,
    positions: &[u64],
    max_depth: usize,
    bets: usize,
) -> BettingStrategy {
    let mut b = b.clone();
    for _ in 0..bets {
        let leaves: Vec<_> = b
            .leaves()
            .into_iter()
            .filter(|l| l.path.len() < max_depth)
            .filter(|l| positions.iter().any(|&p| !l.restriction.restricts(pos(p))))
            .collect();
        let Some(leaf) = leaves.choose(rng) else {
            break;
        };
        let free: Vec<u64> = positions
            .iter()
            .copied()
            .filter(|&p| !leaf.restriction.restricts(pos(p)))
            .collect();
        let p = *free.choose(rng).expect("nonempty");
        let mass1 = &leaf.mass * rat(rng.random_range(0..=8), 8);
        let mass0 = &leaf.mass - &mass1;
        b = b
            .define_bet(&leaf.path, pos(p), mass0, mass1)
            .expect("valid");
    }
    b
}

pub fn random_family(
    rng: &mut impl Rng,
    n: usize,
    positions: &[u64],
    max_depth: usize,
    bets: usize,
) -> StrategyFamily {
    let v = (0..n)
        .map(|_| {
            let k = rng.random_range(0..=bets);
            random_strategy(rng, positions, max_depth, k)
        })
        .collect();
    StrategyFamily::new(v).expect("n >= 1")
}

/// Random restriction on `count` distinct positions from `positions`.
pub fn random_restriction(rng: &mut impl Rng, positions: &[u64], count: usize) -> Restriction {
    let chosen: Vec<u64> = positions.choose_multiple(rng, count).copied().collect();
    Restriction::from_pairs(chosen.into_iter().map(|p| (pos(p), rng.random_bool(0.5))))
}

fn proposition_case(rng: &mut ChaCha8Rng) -> Outcome {
    for m in 2..=6u64 {
        for u in (4 * m * m)..=400 {
            let extra = rng.random_range(0..=6u64);
            let len = u + extra;
            let i = PositionSet::interval(1, len);
            let inside: Vec<u64> = (1..=len).collect();
            let mut r = random_restriction(rng, &inside, extra as usize);
            for k in 0..rng.random_range(0..=2u64) {
                r = r
                    .with(pos(len + 1 + k), rng.random_bool(0.5))
                    .expect("fresh");
            }
            let xi_sq = rat((m * m) as i64, u as i64);
            match check_modulo_independence_sq(&i, m, &xi_sq, &r) {
                Ok(true) => {}
                Ok(false) => {
                    return Outcome::Fail(format!(
                        "m = {m}, u = {u}, r = {}",
                        serde_json::to_string(&r).unwrap_or_default()
                    ))
                }
                Err(e) => return Outcome::Fail(format!("m = {m}, u = {u}: {e}")),
            }
        }
    }
    Outcome::Pass
}

fn savings_case(rng: &mut ChaCha8Rng) -> Outcome {
    let positions: Vec<u64> = (1..=16).collect();
    let bets = rng.random_range(0..=40);
    let b = random_strategy(rng, &positions, 12, bets);
    let s = with_savings(&b);
    let dump = || serde_json::to_string(&b.dump()).unwrap_or_default();
    if let Err(e) = s.validate() {
        return Outcome::Fail(format!("savings tree invalid ({e}): {}", dump()));
    }
    if s.node_count() != b.node_count() {
        return Outcome::Fail(format!("shape changed: {}", dump()));
    }
    if !check_conservative(&s) {
        return Outcome::Fail(format!("not conservative: {}", dump()));
    }
    if !check_savings_lowerbound(&b) {
        return Outcome::Fail(format!("2^(c'+2) <= max capital somewhere: {}", dump()));
    }
    Outcome::Pass
}

fn random_clopen(rng: &mut ChaCha8Rng, positions: &[u64]) -> ClopenExpr {
    if rng.random_bool(0.3) {
        let len = rng.random_range(2..=positions.len() as u64);
        let m = rng.random_range(2..=3);
        let o = rng.random_range(0..m);
        ClopenExpr::modulo(ModuloSet::new(PositionSet::interval(1, len), m, o).expect("valid"))
    } else {
        let k = rng.random_range(1..=3);
        let rs: Vec<Restriction> = (0..k)
            .map(|_| {
                let c = rng.random_range(1..=3);
                random_restriction(rng, positions, c)
            })
            .collect();
        ClopenExpr::union_of(&rs)
    }
}

fn earning_case(rng: &mut ChaCha8Rng) -> Outcome {
    outcome((|| {
        let positions: Vec<u64> = (1..=8).collect();
        let n = rng.random_range(1..=3);
        let f = random_family(rng, n, &positions, 6, 12);
        let mut engine = MeasureEngine::new();

        let whole = expected_earning(&f, &ClopenExpr::Full).map_err(|e| e.to_string())?;
        let expect = Rational::one() - pow2(-(n as i64));
        fail_unless(whole == expect, || {
            format!("earn(Ω) = {whole}, expected {expect}")
        })?;

        let x = random_clopen(rng, &positions);
        let lx = engine.measure_expr(&x);
        if lx.is_zero() {
            return Ok(Outcome::Skip);
        }
        let ex = expected_earning(&f, &x).map_err(|e| e.to_string())?;

        let sub = ClopenExpr::intersect(vec![x.clone(), random_clopen(rng, &positions)]);
        let lsub = engine.measure_expr(&sub);
        if lsub.is_positive() {
            let es = expected_earning(&f, &sub).map_err(|e| e.to_string())?;
            fail_unless(es <= &lx / &lsub * &ex, || {
                format!("subset earning {es} exceeds {} · {ex}", &lx / &lsub)
            })?;
        }

        let p = pos(*positions.choose(rng).expect("nonempty"));
        let parts: Vec<ClopenExpr> = [false, true]
            .into_iter()
            .map(|bit| {
                ClopenExpr::intersect(vec![
                    x.clone(),
                    ClopenExpr::restriction(Restriction::from_pairs([(p, bit)])),
                ])
            })
            .filter(|e| engine.measure_expr(e).is_positive())
            .collect();
        let k = min_earning_part(&f, &parts).map_err(|e| e.to_string())?;
        let ek = expected_earning(&f, &parts[k]).map_err(|e| e.to_string())?;
        fail_unless(ek <= ex, || format!("part {k} earns {ek} > {ex}"))?;

        let d = &lx * rat(rng.random_range(1..=7), 8);
        let low = low_capital_subset(&f, &x, &d).map_err(|e| e.to_string())?;
        fail_unless(low.guarantees_hold(), || {
            format!("low-capital guarantees fail for d = {d}")
        })?;
        Ok(Outcome::Pass)
    })())
}

fn kl_eta_case(rng: &mut ChaCha8Rng) -> Outcome {
    outcome((|| {
        let m = rng.random_range(2..=4u64);
        let phi = 16 * m * m;
        let d = rng.random_range(0..=3u64);
        let len = phi + d;
        let i = PositionSet::interval(1, len);
        let o = rng.random_range(0..m);
        let set = ModuloSet::new(i, m, o).expect("valid");
        // mostly inside I, a few positions past it
        let mut positions: Vec<u64> = (1..=len).collect();
        positions.shuffle(rng);
        positions.truncate(12);
        positions.extend(len + 1..=len + 3);
        let n = rng.random_range(1..=2);
        let depth = d as usize + 3;
        let before = random_family(rng, n, &positions, depth, 8);
        let after = StrategyFamily::new(
            before
                .strategies()
                .iter()
                .map(|b| {
                    let k = rng.random_range(0..=10);
                    extend_strategy(rng, b, &positions, depth + 1, k)
                })
                .collect(),
        )
        .expect("nonempty");
        let report = verify_kl_eta(&before, &after, &set, phi).map_err(|e| e.to_string())?;
        if !report.denominator_positive {
            return Ok(Outcome::Skip);
        }
        fail_unless(report.holds(), || {
            format!(
                "m = {m}, |I| = {len}, o = {o}: {}",
                serde_json::to_string(&report).unwrap_or_default()
            )
        })?;
        Ok(Outcome::Pass)
    })())
}

/// Sum of `mult · N*(r,J) · λ(r)`, computed directly.
fn weighted_unrestricted(r: &RestrictionMultiSet, j: &PositionSet) -> Rational {
    r.iter()
        .map(|(x, m)| {
            Rational::from_integer((m * BigUint::from(ns_unrestricted(x, j))).into()) * x.measure()
        })
        .sum()
}

/// All `k`-subsets of `items`.
fn subsets(items: &[Position], k: usize) -> Vec<Vec<Position>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if items.len() < k {
        return Vec::new();
    }
    let mut with: Vec<Vec<Position>> = subsets(&items[1..], k - 1)
        .into_iter()
        .map(|mut s| {
            s.insert(0, items[0]);
            s
        })
        .collect();
    with.extend(subsets(&items[1..], k));
    with
}

fn random_slim_multiset(
    rng: &mut ChaCha8Rng,
    i: &PositionSet,
    phi: u64,
    outside: &[u64],
) -> RestrictionMultiSet {
    let inside: Vec<u64> = i.iter().map(|p| p.get()).collect();
    let mut ms = RestrictionMultiSet::new();
    for _ in 0..rng.random_range(1..=6) {
        let lo = (i.len() + 1).saturating_sub(phi as usize);
        let count = rng.random_range(lo..=i.len());
        let mut r = random_restriction(rng, &inside, count);
        let extra = rng.random_range(0..=2);
        for &p in outside.choose_multiple(rng, extra) {
            r = r.with(pos(p), rng.random_bool(0.5)).expect("outside I");
        }
        ms.add(r, BigUint::from(rng.random_range(1..=3u32)));
    }
    ms
}

fn slim_case(rng: &mut ChaCha8Rng, case: u64) -> Outcome {
    outcome((|| {
        let exhaustive = case % 4 != 3;
        let size = if exhaustive {
            rng.random_range(12..=14)
        } else {
            rng.random_range(15..=40)
        };
        let universe: Vec<u64> = (1..=size as u64 + 8).collect();
        let mut picked: Vec<u64> = universe.choose_multiple(rng, size).copied().collect();
        picked.sort_unstable();
        let i: PositionSet = picked.iter().map(|&p| pos(p)).collect();
        let outside: Vec<u64> = universe
            .iter()
            .copied()
            .filter(|p| !picked.contains(p))
            .collect();
        let phi = rng.random_range(1..=4u64);
        let r = random_slim_multiset(rng, &i, phi, &outside);
        let total = r.sum_size();
        let q = rat(rng.random_range(12..=size as i64), 4 * size as i64);

        let j = slim_to_restricted(&r, &i, phi, &q).map_err(|e| e.to_string())?;
        fail_unless(int(j.len() as i64) >= &q * int(size as i64), || {
            format!("|I'| = {} below q|I|", j.len())
        })?;
        fail_unless(j.is_subset_of(&i), || "I' not inside I".into())?;
        let got = restricting_sum_size(&r, &j);
        let corollary = (Rational::one() - int(2) * &q * int(phi as i64)) * &total;
        fail_unless(got >= corollary, || {
            format!("restricting {got} < corollary bound {corollary}")
        })?;

        let sel = slim_to_restricted_blocks(&r, &i, phi, &q).map_err(|e| e.to_string())?;
        fail_unless(sel.restricting_sum_size >= sel.guarantee, || {
            format!(
                "block {} restricts {} < {}",
                sel.block_index, sel.restricting_sum_size, sel.guarantee
            )
        })?;
        let chosen_l = weighted_unrestricted(&r, &sel.positions);
        for b in 0..sel.block_count {
            let l = weighted_unrestricted(&r, &i.slice(b * sel.block_len, sel.block_len));
            fail_unless(
                chosen_l < l || chosen_l == l && sel.block_index <= b,
                || {
                    format!(
                        "block {b} has smaller weighted count than block {}",
                        sel.block_index
                    )
                },
            )?;
        }
        if exhaustive {
            let best = subsets(i.as_slice(), sel.block_len)
                .into_iter()
                .map(|s| restricting_sum_size(&r, &PositionSet::new(s)))
                .max()
                .expect("at least one subset");
            fail_unless(
                best >= sel.guarantee && best >= sel.restricting_sum_size,
                || format!("exhaustive best {best} vs guarantee {}", sel.guarantee),
            )?;
        }
        Ok(Outcome::Pass)
    })())
}

/// Instance meeting the literal growth hypotheses: phi = 2, δ = 1/5,
/// |I| = 10001, lean members with one free position, g = 2.
pub fn grow_instance(rng: &mut impl Rng) -> (RestrictionMultiSet, PositionSet) {
    let len = 10_001u64;
    let i = PositionSet::interval(1, len);
    let mut ms = RestrictionMultiSet::new();
    // lean: 2^{-10000} each; weights c/128 summing into (1/5, 6/25]
    let lean_count = rng.random_range(1..=3);
    let mut budget = rng.random_range(26..=30u32);
    for k in 0..lean_count {
        let c = if k + 1 == lean_count {
            budget
        } else {
            rng.random_range(1..=budget - (lean_count - k - 1) as u32)
        };
        budget -= c;
        let free = rng.random_range(1..=len);
        let r = Restriction::from_pairs(
            (1..=len)
                .filter(|&p| p != free)
                .map(|p| (pos(p), rng.random_bool(0.5))),
        );
        ms.add(r, BigUint::from(c) << 9993usize);
    }
    for _ in 0..rng.random_range(0..=2) {
        let c = rng.random_range(1..=16u32);
        let r = Restriction::from_pairs((1..=len).map(|p| (pos(p), rng.random_bool(0.5))));
        ms.add(r, BigUint::from(c) << 9995usize);
    }
    (ms, i)
}

fn grow_case(rng: &mut ChaCha8Rng) -> Outcome {
    outcome((|| {
        let (r, i) = grow_instance(rng);
        let phi = 2u64;
        let delta = rat(1, 5);
        let dp = &delta * (Rational::one() - int(2) * &delta);
        let x = restricting_sum_size(&r, &i);
        let out = grow_restricted(&r, &i, phi, &delta, &x).map_err(|e| e.to_string())?;
        let k = out.iterations as i64;
        fail_unless(out.converged, || "did not converge".into())?;
        fail_unless(out.positions.is_subset_of(&i), || "I' not inside I".into())?;
        fail_unless(
            int(out.positions.len() as i64)
                >= int(i.len() as i64) * num_traits::pow(&delta / int(phi as i64), k as usize),
            || format!("|I'| = {} too small after {k} rounds", out.positions.len()),
        )?;
        let lean = lean_sum_size(&r, &out.positions, phi);
        fail_unless(lean <= delta, || format!("lean sum-size {lean} > δ"))?;
        let restricted = restricting_sum_size(&r, &out.positions);
        fail_unless(restricted >= &x + int(k) * &dp, || {
            format!("restricting {restricted} < x + {k}·δ'")
        })?;
        Ok(Outcome::Pass)
    })())
}

fn good_mod_case(rng: &mut ChaCha8Rng) -> Outcome {
    outcome((|| {
        let positions: Vec<u64> = (1..=10).collect();
        let n = rng.random_range(1..=3);
        let f = random_family(rng, n, &positions, 6, 10);
        let size = rng.random_range(3..=10);
        let mut picked: Vec<u64> = positions.choose_multiple(rng, size).copied().collect();
        picked.sort_unstable();
        let i: PositionSet = picked.iter().map(|&p| pos(p)).collect();
        let m = rng.random_range(2..=5u64);
        let c = [rat(5, 4), rat(3, 2), int(2)]
            .choose(rng)
            .expect("nonempty")
            .clone();
        let delta = [rat(1, 2), rat(1, 4), rat(1, 8)]
            .choose(rng)
            .expect("nonempty")
            .clone();
        let wide: Vec<u64> = (1..=12).collect();
        let mut theta = RestrictionMultiSet::new();
        for _ in 0..rng.random_range(0..=5) {
            let count = rng.random_range(2..=5);
            let r = random_restriction(rng, &wide, count);
            let mut t = theta.clone();
            t.add_one(r);
            if union_measure(t.restrictions()) < delta {
                theta = t;
            }
        }
        let g = find_good_remainder(&f, &theta, &i, m, &c, &delta).map_err(|e| e.to_string())?;
        let set = ClopenExpr::modulo(ModuloSet::new(i.clone(), m, g.o).expect("valid"));
        let mut engine = MeasureEngine::new();
        let lm = engine.measure_expr(&set);
        let earn = expected_earning(&f, &set).map_err(|e| e.to_string())?;
        let meet = engine.measure_expr(&ClopenExpr::intersect(vec![
            set,
            ClopenExpr::union_of(theta.restrictions()),
        ])) / lm;
        let earn_bound = &c / (&c - Rational::one());
        fail_unless(earn == g.earning && earn <= earn_bound, || {
            format!(
                "o = {}: earning {earn} (reported {}) vs {earn_bound}",
                g.o, g.earning
            )
        })?;
        fail_unless(meet == g.theta_given_m && meet <= &c * &delta, || {
            format!("o = {}: λ(Θ|M) = {meet} vs {}", g.o, &c * &delta)
        })?;
        Ok(Outcome::Pass)
    })())
}

/// Desk configurations used by the claims suite.
pub fn desk_configs() -> Vec<ChooserParams> {
    vec![
        ChooserParams::desk(4, 2, 256, 260),
        ChooserParams::desk(2, 1, 64, 68),
        ChooserParams::desk(2, 2, 16, 20),
    ]
}

fn chooser_claims_case(case: u64, seed: u64) -> Outcome {
    outcome((|| {
        for k in 0..=16 {
            fail_unless(measure_budget_holds(k), || {
                format!("total-measure bound fails for k = {k}")
            })?;
        }
        let configs = desk_configs();
        let params = &configs[(case as usize / GAMBLER_NAMES.len()) % configs.len()];
        let name = GAMBLER_NAMES[case as usize % GAMBLER_NAMES.len()];
        let mut g = gambler_by_name(name, seed).expect("packaged gambler");
        let t = run_game(params, g.as_mut(), &GameOptions::default()).map_err(|e| e.to_string())?;
        fail_unless(t.verdict.chosen_count <= params.max_chosen(), || {
            format!("{name}: {} chosen sets", t.verdict.chosen_count)
        })?;
        let last = t.turns.last().expect("at least one turn");
        fail_unless(
            last.metrics.chosen_measure_total <= params.total_measure_budget(),
            || {
                format!(
                    "{name}: chosen measure {}",
                    last.metrics.chosen_measure_total
                )
            },
        )?;
        let v = t.violations();
        fail_unless(v.is_empty(), || format!("{name}: {v:?}"))?;
        Ok(Outcome::Pass)
    })())
}

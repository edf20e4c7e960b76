//! Packaged gamblers.

use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::earning::StrategyFamily;
use crate::game::{BetAction, Gambler, GamblerAction, GameView};
use crate::model::{classify, pos, BitString, Classification, Position};
use crate::rational::{from_biguint, int, pow2, rat, Rational};
use crate::strategy::{with_savings, BettingStrategy};

/// Never bets.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullGambler;

impl Gambler for NullGambler {
    fn name(&self) -> String {
        "null".into()
    }

    fn act(&mut self, _: &GameView<'_>) -> GamblerAction {
        GamblerAction::NoBet
    }
}

/// Smallest position of the current set (or past `ell`) not fixed by `leaf`.
fn next_free(view: &GameView<'_>, b: &BettingStrategy, leaf: &BitString) -> Position {
    let r = b.node(leaf).expect("leaf exists").restriction;
    if let Some(cur) = view.current() {
        if let Some(p) = cur.positions().iter().find(|&p| !r.restricts(p)) {
            return p;
        }
    }
    let start = r
        .max_position()
        .map_or(1, |p| p.get() + 1)
        .max(view.desk.ell + 1);
    pos(start)
}

/// Bets everything on ones, one strategy at a time, until its capital on the
/// all-ones path exceeds `h_i`.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyDoubler;

impl Gambler for GreedyDoubler {
    fn name(&self) -> String {
        "greedy-doubler".into()
    }

    fn act(&mut self, view: &GameView<'_>) -> GamblerAction {
        for (i, _, b) in view.family.weighted() {
            let h = from_biguint(&view.params.h(i));
            let mut leaf = BitString::empty();
            while !b.is_leaf(&leaf) {
                leaf = leaf.child(true);
            }
            if b.capital(&leaf).expect("leaf exists") > h {
                continue;
            }
            let mass = b.node(&leaf).expect("leaf exists").mass.clone();
            return GamblerAction::Bet(BetAction {
                strategy: i,
                position: next_free(view, b, &leaf),
                leaf,
                mass0: Rational::zero(),
                mass1: mass,
            });
        }
        GamblerAction::NoBet
    }
}

/// Splits chubby leaves of strategy 1 inside the current set, shallowest
/// first, tilting each bet away from the chooser's remainder.
#[derive(Debug, Clone)]
pub struct ParityChaser {
    budget: usize,
    made: usize,
}

impl ParityChaser {
    pub fn new(budget: usize) -> Self {
        ParityChaser { budget, made: 0 }
    }
}

impl Default for ParityChaser {
    fn default() -> Self {
        ParityChaser::new(512)
    }
}

impl Gambler for ParityChaser {
    fn name(&self) -> String {
        "parity-chaser".into()
    }

    fn act(&mut self, view: &GameView<'_>) -> GamblerAction {
        if self.made >= self.budget {
            return GamblerAction::NoBet;
        }
        let Some(cur) = view.current() else {
            return GamblerAction::NoBet;
        };
        let b = view.family.get(1).expect("at least one strategy");
        let h = from_biguint(&view.params.h(1));
        let i = cur.positions();
        let mut leaves = b.leaves();
        leaves.sort_by_key(|l| l.path.len());
        for leaf in leaves {
            if classify(&leaf.restriction, i, view.desk.phi) != Classification::Chubby {
                continue;
            }
            if leaf.capital() * rat(5, 4) > h {
                continue;
            }
            let Some(p) = i.iter().find(|&p| !leaf.restriction.restricts(p)) else {
                continue;
            };
            let ones = leaf.restriction.ones_in(i) as u64;
            let favor_one = ones % cur.modulus() == cur.remainder();
            let big = &leaf.mass * rat(5, 8);
            let small = &leaf.mass - &big;
            let (mass0, mass1) = if favor_one {
                (small, big)
            } else {
                (big, small)
            };
            self.made += 1;
            return GamblerAction::Bet(BetAction {
                strategy: 1,
                leaf: leaf.path,
                position: p,
                mass0,
                mass1,
            });
        }
        GamblerAction::NoBet
    }
}

/// Seeded random bets with capitals kept at most `h_i / 2`.
#[derive(Debug, Clone)]
pub struct RandomGambler {
    rng: ChaCha8Rng,
    seed: u64,
    budget: usize,
    made: usize,
}

impl RandomGambler {
    pub fn new(seed: u64, budget: usize) -> Self {
        RandomGambler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            budget,
            made: 0,
        }
    }
}

impl Gambler for RandomGambler {
    fn name(&self) -> String {
        "random".into()
    }

    fn seed(&self) -> Option<u64> {
        Some(self.seed)
    }

    fn act(&mut self, view: &GameView<'_>) -> GamblerAction {
        if self.made >= self.budget {
            return GamblerAction::NoBet;
        }
        self.made += 1;
        let n = view.family.len();
        let idx = self.rng.random_range(1..=n);
        let b = view.family.get(idx).expect("index in range");
        let leaves = b.leaves();
        let leaf = &leaves[self.rng.random_range(0..leaves.len())];
        let universe = view.desk.ell + 8;
        let free: Vec<u64> = (1..=universe)
            .filter(|&p| !leaf.restriction.restricts(pos(p)))
            .collect();
        let p = pos(free[self.rng.random_range(0..free.len())]);
        let eighths = self.rng.random_range(0..=8i64);
        let cap = from_biguint(&view.params.h(idx)) / int(2);
        let depth = leaf.path.len() as i64 + 1;
        let mass1 = &leaf.mass * rat(eighths, 8);
        let mass0 = &leaf.mass - &mass1;
        let too_big = |m: &Rational| m * pow2(depth) > cap;
        let (mass0, mass1) = if too_big(&mass0) || too_big(&mass1) {
            let half = &leaf.mass / int(2);
            (half.clone(), half)
        } else {
            (mass0, mass1)
        };
        GamblerAction::Bet(BetAction {
            strategy: idx,
            leaf: leaf.path.clone(),
            position: p,
            mass0,
            mass1,
        })
    }
}

/// Runs `inner` on a private family and plays the savings version of every
/// strategy it builds.
pub struct SavingsWrapper {
    inner: Box<dyn Gambler>,
    shadow: Option<StrategyFamily>,
}

impl SavingsWrapper {
    pub fn new(inner: Box<dyn Gambler>) -> Self {
        SavingsWrapper {
            inner,
            shadow: None,
        }
    }
}

impl Gambler for SavingsWrapper {
    fn name(&self) -> String {
        format!("savings-{}", self.inner.name())
    }

    fn seed(&self) -> Option<u64> {
        self.inner.seed()
    }

    fn act(&mut self, view: &GameView<'_>) -> GamblerAction {
        let shadow = self
            .shadow
            .get_or_insert_with(|| StrategyFamily::initial(view.family.len()));
        let inner_view = GameView {
            family: shadow,
            ..*view
        };
        let action = self.inner.act(&inner_view);
        let GamblerAction::Bet(bet) = &action else {
            return action;
        };
        let Some(b) = shadow.get(bet.strategy) else {
            return action;
        };
        let Ok(b) = b.define_bet(
            &bet.leaf,
            bet.position,
            bet.mass0.clone(),
            bet.mass1.clone(),
        ) else {
            return action;
        };
        let saved = with_savings(&b);
        let mass = |bit| {
            saved
                .node(&bet.leaf.child(bit))
                .expect("same shape")
                .mass
                .clone()
        };
        let out = BetAction {
            strategy: bet.strategy,
            leaf: bet.leaf.clone(),
            position: bet.position,
            mass0: mass(false),
            mass1: mass(true),
        };
        shadow.set(bet.strategy, b);
        GamblerAction::Bet(out)
    }
}

/// Replays a fixed list of actions, then stops.
#[derive(Debug, Clone)]
pub struct ScriptedGambler {
    actions: Vec<GamblerAction>,
    next: usize,
    name: String,
    seed: Option<u64>,
}

impl ScriptedGambler {
    pub fn new(actions: Vec<GamblerAction>) -> Self {
        ScriptedGambler {
            actions,
            next: 0,
            name: "scripted".into(),
            seed: None,
        }
    }

    /// Reports `name` and `seed` in transcripts instead of `scripted`.
    pub fn named(mut self, name: String, seed: Option<u64>) -> Self {
        self.name = name;
        self.seed = seed;
        self
    }
}

impl Gambler for ScriptedGambler {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn seed(&self) -> Option<u64> {
        self.seed
    }

    fn act(&mut self, _: &GameView<'_>) -> GamblerAction {
        let a = self
            .actions
            .get(self.next)
            .cloned()
            .unwrap_or(GamblerAction::NoBet);
        self.next += 1;
        a
    }
}

pub const GAMBLER_NAMES: &[&str] = &[
    "null",
    "greedy-doubler",
    "parity-chaser",
    "random",
    "savings-null",
    "savings-greedy-doubler",
    "savings-parity-chaser",
    "savings-random",
];

/// Builds a packaged gambler; `savings-<name>` wraps any other one.
pub fn gambler_by_name(name: &str, seed: u64) -> Option<Box<dyn Gambler>> {
    if let Some(inner) = name.strip_prefix("savings-") {
        return gambler_by_name(inner, seed).map(|g| Box::new(SavingsWrapper::new(g)) as _);
    }
    Some(match name {
        "null" => Box::new(NullGambler),
        "greedy-doubler" => Box::new(GreedyDoubler),
        "parity-chaser" => Box::new(ParityChaser::default()),
        "random" => Box::new(RandomGambler::new(seed, 64)),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chooser::ChooserParams;
    use crate::game::{run_game, GameOptions, Winner};
    use crate::strategy::check_conservative;

    fn desk() -> ChooserParams {
        ChooserParams::desk(4, 2, 256, 260)
    }

    #[test]
    fn names_resolve() {
        for n in GAMBLER_NAMES {
            assert_eq!(gambler_by_name(n, 1).unwrap().name(), *n);
        }
        assert!(gambler_by_name("nobody", 1).is_none());
    }

    #[test]
    fn greedy_reaches_bounds() {
        let t = run_game(&desk(), &mut GreedyDoubler, &GameOptions::default()).unwrap();
        assert!(t.verdict.terminated);
        let bets = t
            .turns
            .iter()
            .filter(|r| matches!(r.action, GamblerAction::Bet(_)))
            .count();
        assert_eq!(bets, 10 + 11);
        assert!(t.verdict.surviving_measure > t.verdict.residue_threshold);
        assert_eq!(t.verdict.winner, Winner::Chooser);
    }

    #[test]
    fn parity_chaser_forces_second_set() {
        let opts = GameOptions {
            check_kl_eta: true,
            ..GameOptions::default()
        };
        let t = run_game(&desk(), &mut ParityChaser::default(), &opts).unwrap();
        assert!(t.verdict.terminated);
        assert!(t.verdict.chosen_count >= 2);
        assert!(t.violations().is_empty(), "{:?}", t.violations());
    }

    #[test]
    fn savings_wrapper_is_conservative() {
        let mut g = SavingsWrapper::new(Box::new(GreedyDoubler));
        let opts = GameOptions {
            enforce_conservative: true,
            horizon: 200,
            ..GameOptions::default()
        };
        let t = run_game(&desk(), &mut g, &opts).unwrap();
        let mut f = StrategyFamily::initial(2);
        for r in &t.turns {
            if let GamblerAction::Bet(b) = &r.action {
                let s = f
                    .get(b.strategy)
                    .unwrap()
                    .define_bet(&b.leaf, b.position, b.mass0.clone(), b.mass1.clone())
                    .unwrap();
                assert!(check_conservative(&s));
                f.set(b.strategy, s);
            }
        }
    }

    #[test]
    fn random_is_seeded() {
        let a = run_game(
            &desk(),
            &mut RandomGambler::new(5, 64),
            &GameOptions::default(),
        )
        .unwrap();
        let b = run_game(
            &desk(),
            &mut RandomGambler::new(5, 64),
            &GameOptions::default(),
        )
        .unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!(a.verdict.capitals_within_bounds);
    }
}

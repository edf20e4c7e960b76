//! Betting-game protocol: turn loop, goal detection, verdict and transcripts.

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::chooser::{ChooserError, ChooserParams, ChooserState, DeskScale, EmissionReport};
use crate::earning::{expected_earning_on_modulo, verify_kl_eta, EarningError, StrategyFamily};
use crate::measure::{measure_modulo_given_restriction, ClopenExpr, MeasureEngine};
use crate::model::{BitString, ModuloSet, Position, Restriction};
use crate::rational::{format_rational, Rational};
use crate::strategy::{check_conservative, StrategyError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GameError {
    #[error("horizon must be at least 1")]
    InvalidHorizon,
    #[error("turn {turn}: strategy index {index} outside 1..={n}")]
    InvalidStrategyIndex { turn: u64, index: usize, n: usize },
    #[error("turn {turn}: bet makes strategy {index} non-conservative")]
    NonConservative { turn: u64, index: usize },
    #[error("turn {turn}: {source}")]
    Bet { turn: u64, source: StrategyError },
    #[error(transparent)]
    Chooser(#[from] ChooserError),
    #[error(transparent)]
    Earning(#[from] EarningError),
}

/// One new bet on a leaf of strategy `strategy` (1-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BetAction {
    pub strategy: usize,
    pub leaf: BitString,
    pub position: Position,
    #[serde(with = "crate::rational::serde_rational")]
    pub mass0: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub mass1: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GamblerAction {
    NoBet,
    Bet(BetAction),
}

/// What a gambler sees at its move.
#[derive(Debug, Clone, Copy)]
pub struct GameView<'a> {
    pub turn: u64,
    pub family: &'a StrategyFamily,
    pub chosen: &'a [ModuloSet],
    pub params: &'a ChooserParams,
    pub desk: DeskScale,
}

impl GameView<'_> {
    pub fn current(&self) -> Option<&ModuloSet> {
        self.chosen.last()
    }
}

pub trait Gambler {
    fn name(&self) -> String;

    fn seed(&self) -> Option<u64> {
        None
    }

    fn act(&mut self, view: &GameView<'_>) -> GamblerAction;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameOptions {
    pub horizon: u64,
    /// Reject bets leaving a strategy non-conservative.
    pub enforce_conservative: bool,
    /// Check the earning bound on the current set after every bet.
    pub check_kl_eta: bool,
    /// Largest `ell` that may be materialized.
    pub budget: u64,
}

impl Default for GameOptions {
    fn default() -> Self {
        GameOptions {
            horizon: 10_000,
            enforce_conservative: false,
            check_kl_eta: false,
            budget: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnMetrics {
    #[serde(with = "crate::rational::serde_rational")]
    pub slimmed_sum_size: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub earn_on_current_m: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub chosen_measure_total: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: u64,
    pub chosen_set: Option<ModuloSet>,
    pub emission: Option<EmissionReport>,
    pub action: GamblerAction,
    pub metrics: TurnMetrics,
    pub kl_eta_holds: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    Chooser,
    Gambler,
    UndecidedAtHorizon,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub winner: Winner,
    /// Ended by a quiet turn rather than the horizon.
    pub terminated: bool,
    pub chosen_count: usize,
    /// Surviving measure inside the last chosen set.
    #[serde(with = "crate::rational::serde_rational")]
    pub surviving_measure: Rational,
    /// Surviving measure inside the union of all chosen sets.
    #[serde(with = "crate::rational::serde_rational")]
    pub surviving_measure_all: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub residue_threshold: Rational,
    /// `None` unless the last set's surviving measure exceeds the threshold.
    pub residue_check: Option<bool>,
    /// No node above its bound meets the surviving witness.
    pub capitals_within_bounds: bool,
    pub goal_achieved: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameConfig {
    pub params: ChooserParams,
    pub gambler: String,
    pub seed: Option<u64>,
    pub options: GameOptions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameTranscript {
    pub schema: u32,
    pub config: GameConfig,
    pub turns: Vec<TurnRecord>,
    pub verdict: Verdict,
}

impl GameTranscript {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Per-turn metrics as CSV.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "turn",
            "chosen_positions",
            "chosen_modulus",
            "chosen_remainder",
            "action",
            "strategy",
            "slimmed_sum_size",
            "earn_on_current_m",
            "chosen_measure_total",
        ])
        .expect("in-memory write");
        for t in &self.turns {
            let (len, m, o) = match &t.chosen_set {
                Some(s) => (
                    s.positions().len().to_string(),
                    s.modulus().to_string(),
                    s.remainder().to_string(),
                ),
                None => Default::default(),
            };
            let (kind, idx) = match &t.action {
                GamblerAction::NoBet => ("no_bet", String::new()),
                GamblerAction::Bet(b) => ("bet", b.strategy.to_string()),
            };
            w.write_record([
                t.turn.to_string(),
                len,
                m,
                o,
                kind.to_string(),
                idx,
                format_rational(&t.metrics.slimmed_sum_size),
                format_rational(&t.metrics.earn_on_current_m),
                format_rational(&t.metrics.chosen_measure_total),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn chosen_sets(&self) -> Vec<&ModuloSet> {
        self.turns
            .iter()
            .filter_map(|t| t.chosen_set.as_ref())
            .collect()
    }

    /// Every failed per-turn assertion and end-of-game check.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut last = Rational::zero();
        for t in &self.turns {
            if let Some(e) = &t.emission {
                out.extend(e.violations());
            }
            if t.kl_eta_holds == Some(false) {
                out.push(format!(
                    "turn {}: earning bound on the current set fails",
                    t.turn
                ));
            }
            if t.metrics.chosen_measure_total < last {
                out.push(format!("turn {}: chosen measure decreased", t.turn));
            }
            last = t.metrics.chosen_measure_total.clone();
        }
        let max = self.config.params.max_chosen();
        if self.verdict.chosen_count > max {
            out.push(format!(
                "{} chosen sets exceed {max}",
                self.verdict.chosen_count
            ));
        }
        if self.verdict.residue_check == Some(false) {
            out.push("surviving residue does not reach the chosen union".into());
        }
        if !self.verdict.capitals_within_bounds {
            out.push("surviving witness meets a node above its bound".into());
        }
        out
    }
}

/// `C` minus every cylinder where some strategy `i` exceeds `h_i`; strategies
/// beyond `bounds.len()` are ignored.
pub fn surviving_subset(
    c: &ClopenExpr,
    family: &StrategyFamily,
    bounds: &[Rational],
) -> (Rational, ClopenExpr) {
    let mut exceeding = Vec::new();
    for (b, h) in family.strategies().iter().zip(bounds) {
        exceeding.extend(b.exceeding_restrictions(h));
    }
    let witness = if exceeding.is_empty() {
        c.clone()
    } else {
        ClopenExpr::difference(c.clone(), ClopenExpr::union_of(exceeding.iter()))
    };
    let measure = MeasureEngine::new().measure_expr(&witness);
    (measure, witness)
}

/// Every point of `C` sees some strategy exceed its bound.
pub fn goal_achieved(c: &ClopenExpr, family: &StrategyFamily, bounds: &[Rational]) -> bool {
    surviving_subset(c, family, bounds).0.is_zero()
}

/// No node with capital above its bound meets `witness` in positive measure.
pub fn witness_within_bounds(
    witness: &ClopenExpr,
    family: &StrategyFamily,
    bounds: &[Rational],
) -> bool {
    let mut engine = MeasureEngine::new();
    let compiled = engine.compile(witness);
    let mut ok = true;
    for (b, h) in family.strategies().iter().zip(bounds) {
        b.visit(|path, v| {
            if ok && v.mass * crate::rational::pow2(path.len() as i64) > *h {
                ok = engine.measure_given(&compiled, v.restriction).is_zero();
            }
        });
    }
    ok
}

fn apply(
    family: &mut StrategyFamily,
    turn: u64,
    bet: &BetAction,
    enforce_conservative: bool,
) -> Result<(), GameError> {
    let n = family.len();
    if bet.strategy == 0 || bet.strategy > n {
        return Err(GameError::InvalidStrategyIndex {
            turn,
            index: bet.strategy,
            n,
        });
    }
    let b = family
        .get(bet.strategy)
        .expect("index checked")
        .define_bet(
            &bet.leaf,
            bet.position,
            bet.mass0.clone(),
            bet.mass1.clone(),
        )
        .map_err(|source| GameError::Bet { turn, source })?;
    if enforce_conservative && !check_conservative(&b) {
        return Err(GameError::NonConservative {
            turn,
            index: bet.strategy,
        });
    }
    family.set(bet.strategy, b);
    Ok(())
}

/// Plays chooser against `gambler` until a quiet turn or the horizon.
pub fn run_game(
    params: &ChooserParams,
    gambler: &mut dyn Gambler,
    options: &GameOptions,
) -> Result<GameTranscript, GameError> {
    if options.horizon == 0 {
        return Err(GameError::InvalidHorizon);
    }
    let mut chooser = ChooserState::new(params.clone(), options.budget)?;
    let n = params.n;
    let phi = chooser.desk().phi;
    let mut family = StrategyFamily::initial(n);
    let mut snapshot = family.clone();
    let mut total = Rational::zero();
    let mut turns = Vec::new();
    let mut terminated = false;

    for turn in 1..=options.horizon {
        let emitted = chooser.turn(turn, &family)?;
        if let Some((set, _)) = &emitted {
            total += measure_modulo_given_restriction(set, &Restriction::empty());
            snapshot = family.clone();
        }
        let action = gambler.act(&GameView {
            turn,
            family: &family,
            chosen: chooser.chosen(),
            params,
            desk: chooser.desk(),
        });
        if let GamblerAction::Bet(bet) = &action {
            apply(&mut family, turn, bet, options.enforce_conservative)?;
        }
        let current = chooser.current().expect("first turn always emits").clone();
        let kl_eta_holds = if options.check_kl_eta && matches!(action, GamblerAction::Bet(_)) {
            Some(verify_kl_eta(&snapshot, &family, &current, phi)?.holds())
        } else {
            None
        };
        let metrics = TurnMetrics {
            slimmed_sum_size: chooser.slimmed_sum_size(&family),
            earn_on_current_m: expected_earning_on_modulo(&family, &current)?,
            chosen_measure_total: total.clone(),
        };
        let quiet = emitted.is_none() && action == GamblerAction::NoBet;
        let (chosen_set, emission) = emitted.map_or((None, None), |(s, r)| (Some(s), Some(r)));
        turns.push(TurnRecord {
            turn,
            chosen_set,
            emission,
            action,
            metrics,
            kl_eta_holds,
        });
        if quiet {
            terminated = true;
            break;
        }
    }

    let chosen = chooser.chosen();
    let bounds = params.bounds(n);
    let last = ClopenExpr::modulo(chosen.last().expect("nonempty").clone());
    let (surviving_measure, witness) = surviving_subset(&last, &family, &bounds);
    let union = ClopenExpr::union(chosen.iter().cloned().map(ClopenExpr::modulo).collect());
    let (surviving_measure_all, _) = surviving_subset(&union, &family, &bounds);
    let residue_threshold = params.residue_threshold();
    let residue_check =
        (surviving_measure > residue_threshold).then(|| surviving_measure_all.is_positive());
    let goal = surviving_measure.is_zero();
    let capitals_within_bounds = witness_within_bounds(&witness, &family, &bounds);
    let winner = match (terminated, goal) {
        (true, false) => Winner::Chooser,
        (true, true) => Winner::Gambler,
        (false, _) => Winner::UndecidedAtHorizon,
    };
    Ok(GameTranscript {
        schema: 1,
        config: GameConfig {
            params: params.clone(),
            gambler: gambler.name(),
            seed: gambler.seed(),
            options: options.clone(),
        },
        turns,
        verdict: Verdict {
            winner,
            terminated,
            chosen_count: chosen.len(),
            surviving_measure,
            surviving_measure_all,
            residue_threshold,
            residue_check,
            capitals_within_bounds,
            goal_achieved: goal,
        },
    })
}

/// Re-runs the recorded actions; the result equals the input when the
/// transcript is consistent.
pub fn replay(t: &GameTranscript) -> Result<GameTranscript, GameError> {
    let actions = t.turns.iter().map(|r| r.action.clone()).collect();
    let mut g = crate::gamblers::ScriptedGambler::new(actions)
        .named(t.config.gambler.clone(), t.config.seed);
    run_game(&t.config.params, &mut g, &t.config.options)
}

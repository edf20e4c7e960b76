//! Exact simulator and lemma verifier for the betting game on open sets.
//!
//! Everything is computed over exact rationals. The main entry points are
//! [`game::run_game`] for matches between the modulo chooser and a gambler,
//! and [`verify::run_suite`] for the randomized property suites.

pub mod chooser;
pub mod earning;
pub mod gamblers;
pub mod game;
pub mod measure;
pub mod model;
pub mod rational;
pub mod strategy;
pub mod verify;

pub use chooser::{ChooserParams, ChooserState};
pub use earning::StrategyFamily;
pub use game::{run_game, Gambler, GamblerAction, GameOptions, GameTranscript};
pub use measure::{ClopenExpr, MeasureEngine};
pub use model::{
    BitString, Classification, ModuloSet, Position, PositionSet, PositionUniverse, Restriction,
    RestrictionMultiSet,
};
pub use rational::Rational;
pub use strategy::BettingStrategy;

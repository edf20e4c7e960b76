//! Positions, bit strings, restrictions, modulo sets and restriction multisets.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

use crate::rational::{from_biguint, pow2, Rational};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("position must be >= 1, got {0}")]
    InvalidPosition(u64),
    #[error("modulus must be >= 2, got {0}")]
    InvalidModulus(u64),
    #[error("remainder {remainder} out of range for modulus {modulus}")]
    RemainderOutOfRange { remainder: u64, modulus: u64 },
    #[error("modulo set needs a nonempty position set")]
    EmptyPositions,
    #[error("position {0} is already restricted")]
    AlreadyRestricted(u64),
    #[error("bit must be 0 or 1, got {0}")]
    InvalidBit(u64),
    #[error("invalid bit string {0:?}")]
    InvalidBitString(String),
    #[error("multiplicity must be positive")]
    ZeroMultiplicity,
}

/// A 1-based position in the infinite binary sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct Position(u64);

impl Position {
    pub fn new(index: u64) -> Result<Self, ModelError> {
        if index == 0 {
            return Err(ModelError::InvalidPosition(index));
        }
        Ok(Position(index))
    }

    pub fn get(self) -> u64 {
        self.0
    }
}

impl TryFrom<u64> for Position {
    type Error = ModelError;
    fn try_from(v: u64) -> Result<Self, ModelError> {
        Position::new(v)
    }
}

impl From<Position> for u64 {
    fn from(p: Position) -> u64 {
        p.0
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Shorthand for tests and generators; panics on 0.
pub fn pos(i: u64) -> Position {
    Position::new(i).expect("position index must be >= 1")
}

/// A finite string over {0,1}; the outcome path in a bet tree.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BitString(Vec<bool>);

impl BitString {
    pub fn empty() -> Self {
        BitString(Vec::new())
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        BitString(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn child(&self, bit: bool) -> BitString {
        let mut v = self.0.clone();
        v.push(bit);
        BitString(v)
    }

    pub fn parent(&self) -> Option<BitString> {
        if self.0.is_empty() {
            return None;
        }
        Some(BitString(self.0[..self.0.len() - 1].to_vec()))
    }

    pub fn is_prefix_of(&self, other: &BitString) -> bool {
        other.0.starts_with(&self.0)
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for BitString {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(ModelError::InvalidBitString(s.to_string())),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(BitString)
    }
}

impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Sorted set of distinct positions, the `I` of a modulo set.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<Position>", into = "Vec<Position>")]
pub struct PositionSet(Vec<Position>);

impl PositionSet {
    pub fn new(mut v: Vec<Position>) -> Self {
        v.sort_unstable();
        v.dedup();
        PositionSet(v)
    }

    /// `[lo, hi]`, empty when `hi < lo`.
    pub fn interval(lo: u64, hi: u64) -> Self {
        let lo = lo.max(1);
        PositionSet((lo..=hi).map(Position).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, p: Position) -> bool {
        self.0.binary_search(&p).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = Position> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[Position] {
        &self.0
    }

    pub fn max(&self) -> Option<Position> {
        self.0.last().copied()
    }

    pub fn is_subset_of(&self, other: &PositionSet) -> bool {
        self.0.iter().all(|&p| other.contains(p))
    }

    /// Contiguous run `[start, start+len)` in sorted order.
    pub fn slice(&self, start: usize, len: usize) -> PositionSet {
        PositionSet(self.0[start..start + len].to_vec())
    }
}

impl From<Vec<Position>> for PositionSet {
    fn from(v: Vec<Position>) -> Self {
        PositionSet::new(v)
    }
}

impl From<PositionSet> for Vec<Position> {
    fn from(s: PositionSet) -> Self {
        s.0
    }
}

impl FromIterator<Position> for PositionSet {
    fn from_iter<T: IntoIterator<Item = Position>>(iter: T) -> Self {
        PositionSet::new(iter.into_iter().collect())
    }
}

/// Finite partial assignment of bits to positions.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Restriction {
    assigned: BTreeMap<Position, bool>,
}

impl Restriction {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Later pairs overwrite earlier ones.
    pub fn from_pairs<I: IntoIterator<Item = (Position, bool)>>(pairs: I) -> Self {
        Restriction {
            assigned: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, p: Position) -> Option<bool> {
        self.assigned.get(&p).copied()
    }

    pub fn restricts(&self, p: Position) -> bool {
        self.assigned.contains_key(&p)
    }

    pub fn with(&self, p: Position, bit: bool) -> Result<Restriction, ModelError> {
        if self.restricts(p) {
            return Err(ModelError::AlreadyRestricted(p.get()));
        }
        let mut r = self.clone();
        r.assigned.insert(p, bit);
        Ok(r)
    }

    pub fn support_len(&self) -> usize {
        self.assigned.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assigned.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Position, bool)> + '_ {
        self.assigned.iter().map(|(&p, &b)| (p, b))
    }

    pub fn max_position(&self) -> Option<Position> {
        self.assigned.keys().next_back().copied()
    }

    /// True iff some sequence satisfies both.
    pub fn compatible(&self, other: &Restriction) -> bool {
        let (small, big) = if self.support_len() <= other.support_len() {
            (self, other)
        } else {
            (other, self)
        };
        small.iter().all(|(p, b)| big.get(p).is_none_or(|c| c == b))
    }

    /// `λ(r̃) = 2^{-|supp r|}`.
    pub fn measure(&self) -> Rational {
        pow2(-(self.support_len() as i64))
    }

    /// Number of positions of `i` this restriction assigns the bit 1.
    pub fn ones_in(&self, i: &PositionSet) -> usize {
        self.count_in(i, |b| b)
    }

    fn count_in(&self, i: &PositionSet, pred: impl Fn(bool) -> bool) -> usize {
        if self.assigned.len() <= i.len() {
            self.iter()
                .filter(|&(p, b)| pred(b) && i.contains(p))
                .count()
        } else {
            i.iter().filter(|&p| self.get(p).is_some_and(&pred)).count()
        }
    }

    /// Number of positions of `i` this restriction assigns.
    pub fn assigned_in(&self, i: &PositionSet) -> usize {
        self.count_in(i, |_| true)
    }
}

impl Serialize for Restriction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(self.assigned.iter().map(|(p, &b)| (p.get(), b as u8)))
    }
}

impl<'de> Deserialize<'de> for Restriction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = BTreeMap::<u64, u64>::deserialize(d)?;
        let mut assigned = BTreeMap::new();
        for (p, b) in raw {
            let p = Position::new(p).map_err(D::Error::custom)?;
            let b = match b {
                0 => false,
                1 => true,
                other => return Err(D::Error::custom(ModelError::InvalidBit(other))),
            };
            assigned.insert(p, b);
        }
        Ok(Restriction { assigned })
    }
}

/// `N*(r, I)`: positions of `I` left unrestricted by `r`.
pub fn ns_unrestricted(r: &Restriction, i: &PositionSet) -> usize {
    i.len() - r.assigned_in(i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    Chubby,
    Lean,
    RestrictsEntire,
}

impl Classification {
    pub fn is_slim(self) -> bool {
        !matches!(self, Classification::Chubby)
    }
}

/// Chubby iff `N* >= phi`, restricts-entire iff `N* = 0`, lean otherwise.
pub fn classify(r: &Restriction, i: &PositionSet, phi: u64) -> Classification {
    classify_count(ns_unrestricted(r, i), phi)
}

pub fn classify_count(ns: usize, phi: u64) -> Classification {
    if ns as u64 >= phi {
        Classification::Chubby
    } else if ns == 0 {
        Classification::RestrictsEntire
    } else {
        Classification::Lean
    }
}

/// `Mod(I, m, o)`: sequences whose number of ones on `I` is `o` mod `m`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ModuloSetRepr", into = "ModuloSetRepr")]
pub struct ModuloSet {
    positions: PositionSet,
    modulus: u64,
    remainder: u64,
}

#[derive(Serialize, Deserialize)]
struct ModuloSetRepr {
    #[serde(rename = "I")]
    positions: Vec<Position>,
    m: u64,
    o: u64,
}

impl TryFrom<ModuloSetRepr> for ModuloSet {
    type Error = ModelError;
    fn try_from(r: ModuloSetRepr) -> Result<Self, ModelError> {
        ModuloSet::new(PositionSet::new(r.positions), r.m, r.o)
    }
}

impl From<ModuloSet> for ModuloSetRepr {
    fn from(m: ModuloSet) -> Self {
        ModuloSetRepr {
            positions: m.positions.into(),
            m: m.modulus,
            o: m.remainder,
        }
    }
}

impl ModuloSet {
    pub fn new(positions: PositionSet, modulus: u64, remainder: u64) -> Result<Self, ModelError> {
        if positions.is_empty() {
            return Err(ModelError::EmptyPositions);
        }
        if modulus < 2 {
            return Err(ModelError::InvalidModulus(modulus));
        }
        if remainder >= modulus {
            return Err(ModelError::RemainderOutOfRange { remainder, modulus });
        }
        Ok(ModuloSet {
            positions,
            modulus,
            remainder,
        })
    }

    pub fn positions(&self) -> &PositionSet {
        &self.positions
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn remainder(&self) -> u64 {
        self.remainder
    }

    pub fn contains(&self, w: &FullAssignment) -> Option<bool> {
        let mut ones = 0u64;
        for p in self.positions.iter() {
            ones += w.get(p)? as u64;
        }
        Some(ones % self.modulus == self.remainder)
    }
}

/// Bits for every position in `[1, L]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FullAssignment {
    bits: Vec<bool>,
}

impl FullAssignment {
    pub fn new(bits: Vec<bool>) -> Self {
        FullAssignment { bits }
    }

    /// Low bit of `mask` is position 1.
    pub fn from_mask(mask: u64, len: usize) -> Self {
        FullAssignment {
            bits: (0..len).map(|i| mask >> i & 1 == 1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, p: Position) -> Option<bool> {
        self.bits.get(p.get() as usize - 1).copied()
    }

    pub fn satisfies(&self, r: &Restriction) -> Option<bool> {
        for (p, b) in r.iter() {
            if self.get(p)? != b {
                return Some(false);
            }
        }
        Some(true)
    }
}

/// All positions relevant to a computation lie in `[1, bound]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionUniverse {
    pub bound: u64,
}

impl PositionUniverse {
    pub fn new(bound: u64) -> Self {
        PositionUniverse { bound }
    }

    pub fn covers(&self, p: Position) -> bool {
        p.get() <= self.bound
    }

    pub fn widen(&mut self, p: Position) {
        self.bound = self.bound.max(p.get());
    }
}

/// Multiset of restrictions with big multiplicities.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RestrictionMultiSet {
    entries: BTreeMap<Restriction, BigUint>,
}

impl RestrictionMultiSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, r: Restriction, multiplicity: BigUint) {
        if multiplicity.is_zero() {
            return;
        }
        *self.entries.entry(r).or_insert_with(BigUint::zero) += multiplicity;
    }

    pub fn add_one(&mut self, r: Restriction) {
        self.add(r, BigUint::one());
    }

    pub fn from_entries<I: IntoIterator<Item = (Restriction, BigUint)>>(
        it: I,
    ) -> Result<Self, ModelError> {
        let mut out = Self::new();
        for (r, m) in it {
            if m.is_zero() {
                return Err(ModelError::ZeroMultiplicity);
            }
            out.add(r, m);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Restriction, &BigUint)> {
        self.entries.iter()
    }

    pub fn multiplicity(&self, r: &Restriction) -> BigUint {
        self.entries.get(r).cloned().unwrap_or_default()
    }

    /// `λ⁺(R) = Σ multiplicity · λ(r̃)`.
    pub fn sum_size(&self) -> Rational {
        self.entries
            .iter()
            .map(|(r, m)| from_biguint(m) * r.measure())
            .sum()
    }

    /// Sub-multiset of entries satisfying `pred`.
    pub fn filter(&self, mut pred: impl FnMut(&Restriction) -> bool) -> Self {
        RestrictionMultiSet {
            entries: self
                .entries
                .iter()
                .filter(|(r, _)| pred(r))
                .map(|(r, m)| (r.clone(), m.clone()))
                .collect(),
        }
    }

    pub fn restrictions(&self) -> impl Iterator<Item = &Restriction> {
        self.entries.keys()
    }

    pub fn max_position(&self) -> Option<Position> {
        self.entries.keys().filter_map(|r| r.max_position()).max()
    }
}

/// Sum of multiplicities per restriction.
pub fn join(a: &RestrictionMultiSet, b: &RestrictionMultiSet) -> RestrictionMultiSet {
    let mut out = a.clone();
    for (r, m) in b.iter() {
        out.add(r.clone(), m.clone());
    }
    out
}

#[derive(Serialize, Deserialize)]
struct MultiSetEntry {
    restriction: Restriction,
    #[serde(with = "crate::rational::serde_biguint")]
    multiplicity: BigUint,
}

impl Serialize for RestrictionMultiSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.entries.iter().map(|(r, m)| MultiSetEntry {
            restriction: r.clone(),
            multiplicity: m.clone(),
        }))
    }
}

impl<'de> Deserialize<'de> for RestrictionMultiSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<MultiSetEntry>::deserialize(d)?;
        RestrictionMultiSet::from_entries(v.into_iter().map(|e| (e.restriction, e.multiplicity)))
            .map_err(D::Error::custom)
    }
}

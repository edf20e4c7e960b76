//! The modulo chooser: parameters, the block-selection constructions, the
//! good-remainder scan and the per-turn decision logic.

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::earning::{
    expected_earning_on_modulo, lean_leaves, restricting_leaves, slimmed_down_family, EarningError,
    StrategyFamily,
};
use crate::measure::{
    binomial_class_sums, measure_modulo_given_restriction, xi_approx, ClopenExpr, MeasureEngine,
};
use crate::model::{
    classify, ModelError, ModuloSet, PositionSet, Restriction, RestrictionMultiSet,
};
use crate::rational::{exact_sqrt, from_biguint, int, pow2, rat, Rational};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChooserError {
    #[error("invalid chooser parameters: {0}")]
    InvalidParams(String),
    #[error("restriction with {unrestricted} unrestricted positions is chubby for phi = {phi}")]
    ChubbyMember { unrestricted: usize, phi: u64 },
    #[error("q = {q} outside [{lo}, {hi}]")]
    QOutOfRange { q: String, lo: String, hi: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error("no remainder satisfies both bounds although the preconditions hold")]
    NoGoodRemainder,
    #[error("chosen-set count would exceed {limit}")]
    TooManyChoices { limit: usize },
    #[error("ell = {ell} exceeds the position budget {budget}")]
    TooLarge { ell: String, budget: u64 },
    #[error(transparent)]
    Earning(#[from] EarningError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn default_slim() -> Rational {
    rat(3, 8)
}
fn default_lean() -> Rational {
    rat(1, 4)
}
fn default_earn() -> Rational {
    int(3)
}
fn default_c() -> Rational {
    rat(3, 2)
}
fn default_offset() -> u32 {
    8
}

/// Chooser parameters; big values are kept as big integers so that the
/// literal parameters can be derived without materializing anything.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChooserParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    #[serde(with = "crate::rational::serde_biguint")]
    pub m: BigUint,
    pub n: usize,
    #[serde(with = "crate::rational::serde_biguint")]
    pub phi: BigUint,
    #[serde(with = "crate::rational::serde_biguint")]
    pub ell: BigUint,
    #[serde(with = "crate::rational::serde_rational", default = "default_slim")]
    pub slim_threshold: Rational,
    #[serde(with = "crate::rational::serde_rational", default = "default_lean")]
    pub lean_threshold: Rational,
    #[serde(with = "crate::rational::serde_rational", default = "default_earn")]
    pub earn_bound: Rational,
    #[serde(with = "crate::rational::serde_rational", default = "default_c")]
    pub c: Rational,
    /// `h_i = 2^{i + bound_offset}`.
    #[serde(default = "default_offset")]
    pub bound_offset: u32,
}

/// Which lemma preconditions the parameters satisfy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamsValidation {
    #[serde(with = "crate::rational::serde_rational")]
    pub xi: Rational,
    /// `ell >= phi`, so the first set is `1/4`-approximately `1/m` in size.
    pub first_set_size: bool,
    /// `ell > (phi/δ)^{g+2}` for the first trigger (x = 0, total sum-size n).
    pub grow_first_trigger: bool,
    /// `(8n+1)(4/3)/m < 2^{-k}`, when `k` is known.
    pub total_measure: Option<bool>,
}

impl ChooserParams {
    /// The literal parameters for size parameter `k`.
    pub fn from_k(k: u32) -> Self {
        let m = BigUint::one() << (2 * (k as usize + 4));
        let n = 2 * k as usize + 12;
        let phi = BigUint::from(16u32) * &m * &m;
        let ell = num_traits::pow(BigUint::from(4u32) * &phi, 8 * n + 3);
        ChooserParams {
            k: Some(k),
            m,
            n,
            phi,
            ell,
            slim_threshold: default_slim(),
            lean_threshold: default_lean(),
            earn_bound: default_earn(),
            c: default_c(),
            bound_offset: default_offset(),
        }
    }

    /// Small explicit parameters with the default thresholds.
    pub fn desk(m: u64, n: usize, phi: u64, ell: u64) -> Self {
        ChooserParams {
            k: None,
            m: m.into(),
            n,
            phi: phi.into(),
            ell: ell.into(),
            slim_threshold: default_slim(),
            lean_threshold: default_lean(),
            earn_bound: default_earn(),
            c: default_c(),
            bound_offset: default_offset(),
        }
    }

    /// `ξ = m/√phi`; requires `phi/m²` to be a perfect square.
    pub fn xi(&self) -> Option<Rational> {
        let m_sq = &self.m * &self.m;
        let (quot, rem) = self.phi.div_rem(&m_sq);
        if !rem.is_zero() {
            return None;
        }
        exact_sqrt(&quot).map(|r| Rational::new(BigInt::one(), BigInt::from(r)))
    }

    /// `δ' = δ(1 − 2δ)`.
    pub fn delta_prime(&self) -> Rational {
        &self.lean_threshold * (Rational::one() - int(2) * &self.lean_threshold)
    }

    /// Guaranteed growth of `λ⁺(Ψ)` per emission.
    pub fn psi_increment(&self) -> Rational {
        let a = &self.slim_threshold - &self.lean_threshold;
        let b = self.delta_prime();
        if a < b {
            a
        } else {
            b
        }
    }

    /// `q = δ/phi`.
    pub fn q(&self) -> Rational {
        &self.lean_threshold / from_biguint(&self.phi)
    }

    pub fn max_chosen(&self) -> usize {
        8 * self.n + 1
    }

    /// `h_i` for 1-based `i`.
    pub fn h(&self, i: usize) -> BigUint {
        BigUint::one() << (i + self.bound_offset as usize)
    }

    /// `h_1..h_count` as rationals.
    pub fn bounds(&self, count: usize) -> Vec<Rational> {
        (1..=count).map(|i| from_biguint(&self.h(i))).collect()
    }

    /// `Σ_{i>n} 1/h_i = 2^{-(n + offset)}`.
    pub fn residue_threshold(&self) -> Rational {
        pow2(-((self.n + self.bound_offset as usize) as i64))
    }

    /// `(8n+1)·(4/3)·(1/m)`.
    pub fn total_measure_budget(&self) -> Rational {
        int(self.max_chosen() as i64) * rat(4, 3) / from_biguint(&self.m)
    }

    pub fn validate(&self) -> Result<ParamsValidation, ChooserError> {
        let bad = |s: &str| Err(ChooserError::InvalidParams(s.to_string()));
        if self.m < BigUint::from(2u32) {
            return bad("m must be at least 2");
        }
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if self.phi <= &self.m * &self.m {
            return bad("phi must exceed m^2");
        }
        let Some(xi) = self.xi() else {
            return bad("phi/m^2 must be a perfect square");
        };
        if self.ell.is_zero() {
            return bad("ell must be at least 1");
        }
        if !self.lean_threshold.is_positive() || self.lean_threshold >= rat(1, 2) {
            return bad("lean threshold must lie in (0, 1/2)");
        }
        if self.c <= Rational::one() {
            return bad("c must exceed 1");
        }
        if !self.slim_threshold.is_positive() {
            return bad("slim threshold must be positive");
        }
        let total = int(self.n as i64);
        let grow =
            self.ell.to_usize().is_some_and(|ell| {
                grow_precondition(
                    &total,
                    &Rational::zero(),
                    ell,
                    &self.phi,
                    &self.lean_threshold,
                )
                .holds
            }) || self.ell.to_usize().is_none() && self.k.is_some() && literal_grow_bound(self);
        Ok(ParamsValidation {
            xi,
            first_set_size: self.ell >= self.phi,
            grow_first_trigger: grow,
            total_measure: self.k.map(measure_budget_holds),
        })
    }

    /// Small-integer view for running games.
    pub fn desk_scale(&self, budget: u64) -> Result<DeskScale, ChooserError> {
        let too_large = || ChooserError::TooLarge {
            ell: self.ell.to_string(),
            budget,
        };
        let ell = self
            .ell
            .to_u64()
            .filter(|&l| l <= budget)
            .ok_or_else(too_large)?;
        let m = self.m.to_u64().ok_or_else(too_large)?;
        let phi = self.phi.to_u64().ok_or_else(too_large)?;
        Ok(DeskScale { m, phi, ell })
    }
}

/// `ell > (phi/δ)^{g+2}` with `g = ⌈n/δ'⌉`, evaluated on big integers.
fn literal_grow_bound(p: &ChooserParams) -> bool {
    let dp = p.delta_prime();
    let g = (int(p.n as i64) / dp).ceil().to_integer();
    let Some(g) = g.to_u32() else { return false };
    let base = from_biguint(&p.phi) / &p.lean_threshold;
    let bound = num_traits::pow(base, g as usize + 2);
    from_biguint(&p.ell) > bound
}

/// `(8n+1)·(4/3)·(1/m) < 2^{-k}` for the literal parameters of `k`.
pub fn measure_budget_holds(k: u32) -> bool {
    let p = ChooserParams::from_k(k);
    p.total_measure_budget() < pow2(-(k as i64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeskScale {
    pub m: u64,
    pub phi: u64,
    pub ell: u64,
}

/// Outcome of one block selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlimSelection {
    pub positions: PositionSet,
    pub block_len: usize,
    pub block_count: usize,
    pub block_index: usize,
    /// Sum-size of members restricting every selected position.
    #[serde(with = "crate::rational::serde_rational")]
    pub restricting_sum_size: Rational,
    /// `(1 − phi/block_count)·λ⁺(R)`.
    #[serde(with = "crate::rational::serde_rational")]
    pub guarantee: Rational,
}

/// Sum-size of members restricting every position of `j`.
pub fn restricting_sum_size(r: &RestrictionMultiSet, j: &PositionSet) -> Rational {
    r.iter()
        .filter(|(x, _)| x.assigned_in(j) == j.len())
        .map(|(x, m)| from_biguint(m) * x.measure())
        .sum()
}

/// Sum-size of `(j, phi)`-lean members.
pub fn lean_sum_size(r: &RestrictionMultiSet, j: &PositionSet, phi: u64) -> Rational {
    r.iter()
        .filter(|(x, _)| classify(x, j, phi) == crate::model::Classification::Lean)
        .map(|(x, m)| from_biguint(m) * x.measure())
        .sum()
}

/// Block construction without range checks on `q`: splits `I` into
/// `⌊|I|/⌈q|I|⌉⌋` consecutive blocks and keeps the one minimizing
/// `L(J) = Σ mult·N*(r,J)·λ(r)`, smallest index on ties.
pub fn slim_to_restricted_blocks(
    r: &RestrictionMultiSet,
    i: &PositionSet,
    phi: u64,
    q: &Rational,
) -> Result<SlimSelection, ChooserError> {
    if !q.is_positive() || *q >= Rational::one() {
        return Err(ChooserError::QOutOfRange {
            q: q.to_string(),
            lo: "0".into(),
            hi: "1".into(),
        });
    }
    if i.is_empty() {
        return Err(ChooserError::InvalidArgument("empty position set".into()));
    }
    let size = i.len();
    let block_len = (q * int(size as i64))
        .ceil()
        .to_integer()
        .to_usize()
        .expect("block length fits")
        .max(1);
    let block_count = size / block_len;
    let total = r.sum_size();

    // weight left unrestricted at each position of I
    let mut restricted = vec![Rational::zero(); size];
    for (x, mult) in r.iter() {
        let w = from_biguint(mult) * x.measure();
        for (p, _) in x.iter() {
            if let Ok(k) = i.as_slice().binary_search(&p) {
                restricted[k] += &w;
            }
        }
    }
    let mut best: Option<(usize, Rational)> = None;
    for b in 0..block_count {
        let l: Rational = (b * block_len..(b + 1) * block_len)
            .map(|k| &total - &restricted[k])
            .sum();
        if best.as_ref().is_none_or(|(_, v)| l < *v) {
            best = Some((b, l));
        }
    }
    let (block_index, _) = best.expect("at least one block");
    let positions = i.slice(block_index * block_len, block_len);
    let guarantee = (Rational::one() - int(phi as i64) / int(block_count as i64)) * &total;
    Ok(SlimSelection {
        restricting_sum_size: restricting_sum_size(r, &positions),
        positions,
        block_len,
        block_count,
        block_index,
        guarantee,
    })
}

/// Checked form: every member slim, `3/|I| <= q <= 1/4`.
pub fn slim_to_restricted(
    r: &RestrictionMultiSet,
    i: &PositionSet,
    phi: u64,
    q: &Rational,
) -> Result<PositionSet, ChooserError> {
    for x in r.restrictions() {
        let u = crate::model::ns_unrestricted(x, i);
        if u as u64 >= phi {
            return Err(ChooserError::ChubbyMember {
                unrestricted: u,
                phi,
            });
        }
    }
    let lo = rat(3, i.len().max(1) as i64);
    let hi = rat(1, 4);
    if i.is_empty() || *q < lo || *q > hi {
        return Err(ChooserError::QOutOfRange {
            q: q.to_string(),
            lo: lo.to_string(),
            hi: hi.to_string(),
        });
    }
    Ok(slim_to_restricted_blocks(r, i, phi, q)?.positions)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowPrecondition {
    /// Smallest `g >= 0` with `g·δ' + x >= λ⁺(R)`, if it fits in `u64`.
    pub g: Option<u64>,
    pub holds: bool,
}

/// `|I| > (phi/δ)^{g+2}`.
pub fn grow_precondition(
    total: &Rational,
    x: &Rational,
    size: usize,
    phi: &BigUint,
    delta: &Rational,
) -> GrowPrecondition {
    let dp = delta * (Rational::one() - int(2) * delta);
    let need = total - x;
    let g = if need.is_positive() {
        (need / dp).ceil().to_integer()
    } else {
        BigInt::zero()
    };
    let Some(g) = g.to_u64() else {
        return GrowPrecondition {
            g: None,
            holds: false,
        };
    };
    let base = from_biguint(phi) / delta;
    let lim = int(size as i64);
    let mut acc = Rational::one();
    let mut holds = true;
    for _ in 0..g.saturating_add(2) {
        acc *= &base;
        if acc >= lim {
            holds = false;
            break;
        }
    }
    GrowPrecondition { g: Some(g), holds }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowOutcome {
    pub positions: PositionSet,
    pub iterations: usize,
    #[serde(with = "crate::rational::serde_rational")]
    pub lean_sum_size: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub restricted_sum_size: Rational,
    /// Lean sum-size reached `<= δ`; false when a step made no progress.
    pub converged: bool,
}

/// Repeats the block selection on the lean members with `q = δ/phi` until
/// their sum-size is at most `δ` or no further progress is possible.
pub fn grow_restricted_unchecked(
    r: &RestrictionMultiSet,
    i: &PositionSet,
    phi: u64,
    delta: &Rational,
) -> Result<GrowOutcome, ChooserError> {
    let q = delta / int(phi as i64);
    let mut j = i.clone();
    let mut iterations = 0;
    loop {
        let lean = r.filter(|x| classify(x, &j, phi) == crate::model::Classification::Lean);
        let lean_sum = lean.sum_size();
        let done = lean_sum <= *delta;
        let stuck = !done && {
            let sel = slim_to_restricted_blocks(&lean, &j, phi, &q)?;
            if sel.positions == j {
                true
            } else {
                j = sel.positions;
                iterations += 1;
                false
            }
        };
        if done || stuck {
            return Ok(GrowOutcome {
                restricted_sum_size: restricting_sum_size(r, &j),
                positions: j,
                iterations,
                lean_sum_size: lean_sum,
                converged: done,
            });
        }
    }
}

/// Checked form; rejects inputs outside the lemma's hypotheses.
pub fn grow_restricted(
    r: &RestrictionMultiSet,
    i: &PositionSet,
    phi: u64,
    delta: &Rational,
    x: &Rational,
) -> Result<GrowOutcome, ChooserError> {
    if phi < 2 {
        return Err(ChooserError::InvalidArgument(
            "phi must be at least 2".into(),
        ));
    }
    if !delta.is_positive() || *delta >= rat(1, 2) {
        return Err(ChooserError::InvalidArgument(
            "delta must lie in (0, 1/2)".into(),
        ));
    }
    let actual = restricting_sum_size(r, i);
    if *x > actual || x.is_negative() {
        return Err(ChooserError::PreconditionFailed(format!(
            "x = {x} exceeds the restricting sum-size {actual}"
        )));
    }
    let pre = grow_precondition(&r.sum_size(), x, i.len(), &BigUint::from(phi), delta);
    if !pre.holds {
        return Err(ChooserError::PreconditionFailed(format!(
            "|I| = {} is not larger than (phi/delta)^(g+2) with g = {}",
            i.len(),
            pre.g.map_or("huge".to_string(), |g| g.to_string())
        )));
    }
    grow_restricted_unchecked(r, i, phi, delta)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemainderScore {
    pub o: u64,
    #[serde(with = "crate::rational::serde_rational")]
    pub measure: Rational,
    /// `None` when the modulo set is empty.
    #[serde(with = "crate::rational::serde_rational_opt")]
    pub earning: Option<Rational>,
    #[serde(with = "crate::rational::serde_rational_opt")]
    pub theta_given_m: Option<Rational>,
}

/// Earning and `λ(Θ̃ | M_o)` for every remainder.
pub fn scan_remainders(
    f: &StrategyFamily,
    theta: &RestrictionMultiSet,
    i: &PositionSet,
    m: u64,
) -> Result<Vec<RemainderScore>, ChooserError> {
    let mut engine = MeasureEngine::new();
    let union = ClopenExpr::union_of(theta.restrictions());
    let mut out = Vec::with_capacity(m as usize);
    for o in 0..m {
        let set = ModuloSet::new(i.clone(), m, o)?;
        let measure = measure_modulo_given_restriction(&set, &Restriction::empty());
        if measure.is_zero() {
            out.push(RemainderScore {
                o,
                measure,
                earning: None,
                theta_given_m: None,
            });
            continue;
        }
        let earning = expected_earning_on_modulo(f, &set)?;
        let meet = engine.measure_expr(&ClopenExpr::intersect(vec![
            ClopenExpr::modulo(set),
            union.clone(),
        ]));
        out.push(RemainderScore {
            o,
            theta_given_m: Some(meet / &measure),
            measure,
            earning: Some(earning),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoodRemainder {
    pub o: u64,
    #[serde(with = "crate::rational::serde_rational")]
    pub earning: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub theta_given_m: Rational,
}

fn qualifying(
    scores: &[RemainderScore],
    earn_bound: &Rational,
    theta_bound: &Rational,
) -> Option<GoodRemainder> {
    scores
        .iter()
        .find_map(|s| match (&s.earning, &s.theta_given_m) {
            (Some(e), Some(t)) if e <= earn_bound && t <= theta_bound => Some(GoodRemainder {
                o: s.o,
                earning: e.clone(),
                theta_given_m: t.clone(),
            }),
            _ => None,
        })
}

/// Smallest `o` with earning `<= 1/(1 − 1/c)` and `λ(Θ̃ | M_o) <= c·δ`.
pub fn find_good_remainder(
    f: &StrategyFamily,
    theta: &RestrictionMultiSet,
    i: &PositionSet,
    m: u64,
    c: &Rational,
    delta: &Rational,
) -> Result<GoodRemainder, ChooserError> {
    if *c <= Rational::one() {
        return Err(ChooserError::InvalidArgument("c must exceed 1".into()));
    }
    let theta_measure = crate::measure::union_measure(theta.restrictions());
    if theta_measure > *delta {
        return Err(ChooserError::PreconditionFailed(format!(
            "λ(Θ) = {theta_measure} exceeds delta = {delta}"
        )));
    }
    let scores = scan_remainders(f, theta, i, m)?;
    let earn_bound = c / (c - Rational::one());
    qualifying(&scores, &earn_bound, &(c * delta)).ok_or(ChooserError::NoGoodRemainder)
}

/// Everything checked about one emitted set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmissionReport {
    /// 1-based index of the emitted set.
    pub index: usize,
    pub turn: u64,
    pub positions: usize,
    pub remainder: u64,
    #[serde(with = "crate::rational::serde_rational_opt")]
    pub trigger_slimmed_sum: Option<Rational>,
    pub grow_iterations: usize,
    pub grow_converged: bool,
    pub grow_precondition: bool,
    pub good_mod_precondition: bool,
    /// All preconditions held for this and every earlier emission.
    pub required: bool,
    pub fallback_remainder: bool,
    #[serde(with = "crate::rational::serde_rational")]
    pub measure: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub psi_sum_size: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub theta_sum_size: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub theta_measure: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub theta_given_m: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub earning: Rational,
    pub i1_sum_holds: bool,
    pub i1_size_holds: Option<bool>,
    pub i2_holds: bool,
    pub m1_holds: bool,
    pub m2_holds: bool,
    /// Only checked when `|I| >= 16 m²`.
    pub m_size_holds: Option<bool>,
}

impl EmissionReport {
    /// Names of failed claims, ignoring claims whose hypotheses did not hold.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.m_size_holds == Some(false) {
            out.push(format!(
                "set {}: size not 1/4-approximately 1/m",
                self.index
            ));
        }
        if !self.required {
            return out;
        }
        let checks = [
            ("I.1 sum-size", self.i1_sum_holds),
            ("I.1 position count", self.i1_size_holds != Some(false)),
            ("I.2", self.i2_holds),
            ("M.1", self.m1_holds),
            ("M.2", self.m2_holds),
        ];
        for (name, ok) in checks {
            if !ok {
                out.push(format!("set {}: {name} fails", self.index));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Current {
    set: ModuloSet,
    snapshot: StrategyFamily,
}

/// Chooser bookkeeping for one game.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChooserState {
    params: ChooserParams,
    desk: DeskScale,
    chosen: Vec<ModuloSet>,
    current: Option<Current>,
    required: bool,
}

impl ChooserState {
    pub fn new(params: ChooserParams, budget: u64) -> Result<Self, ChooserError> {
        params.validate()?;
        let desk = params.desk_scale(budget)?;
        Ok(ChooserState {
            params,
            desk,
            chosen: Vec::new(),
            current: None,
            required: true,
        })
    }

    pub fn params(&self) -> &ChooserParams {
        &self.params
    }

    pub fn desk(&self) -> DeskScale {
        self.desk
    }

    pub fn chosen(&self) -> &[ModuloSet] {
        &self.chosen
    }

    pub fn current(&self) -> Option<&ModuloSet> {
        self.current.as_ref().map(|c| &c.set)
    }

    /// Sum-size of first-`n` leaves slimmed down since the current set was chosen.
    pub fn slimmed_sum_size(&self, family: &StrategyFamily) -> Rational {
        match &self.current {
            None => Rational::zero(),
            Some(c) => slimmed_down_family(
                &c.snapshot,
                &family.truncated(self.params.n),
                c.set.positions(),
                self.desk.phi,
            )
            .sum_size(),
        }
    }

    /// One chooser move at the start of `turn`, given the family after the
    /// previous turn's bets.
    pub fn turn(
        &mut self,
        turn: u64,
        family: &StrategyFamily,
    ) -> Result<Option<(ModuloSet, EmissionReport)>, ChooserError> {
        let p = &self.params;
        let DeskScale { m, phi, .. } = self.desk;
        let f = family.truncated(p.n);
        let delta = p.lean_threshold.clone();

        let (positions, trigger, grow_iterations, grow_converged, grow_pre) = match &self.current {
            None => (PositionSet::interval(1, self.desk.ell), None, 0, true, true),
            Some(cur) => {
                let i = cur.set.positions();
                let slimmed = slimmed_down_family(&cur.snapshot, &f, i, phi).sum_size();
                if slimmed <= p.slim_threshold {
                    return Ok(None);
                }
                if self.chosen.len() >= p.max_chosen() {
                    return Err(ChooserError::TooManyChoices {
                        limit: p.max_chosen(),
                    });
                }
                let r = f.leaf_restrictions();
                if lean_sum_size(&r, i, phi) <= delta {
                    (i.clone(), Some(slimmed), 0, true, true)
                } else {
                    let x = restricting_sum_size(&r, i);
                    let pre = grow_precondition(&r.sum_size(), &x, i.len(), &p.phi, &delta);
                    let out = grow_restricted_unchecked(&r, i, phi, &delta)?;
                    (
                        out.positions,
                        Some(slimmed),
                        out.iterations,
                        out.converged,
                        pre.holds,
                    )
                }
            }
        };

        let theta = lean_leaves(&f, &positions, phi);
        let theta_measure = crate::measure::union_measure(theta.restrictions());
        let good_pre = theta_measure <= delta;
        let required = self.required && grow_pre && good_pre;
        let scores = scan_remainders(&f, &theta, &positions, m)?;
        let earn_bound = &p.c / (&p.c - Rational::one());
        let (choice, fallback) = match qualifying(&scores, &earn_bound, &(&p.c * &delta)) {
            Some(g) => (g, false),
            None if required => return Err(ChooserError::NoGoodRemainder),
            None => (fallback_remainder(&scores, &(&p.c * &delta)), true),
        };
        let set = ModuloSet::new(positions.clone(), m, choice.o)?;
        let index = self.chosen.len() + 1;

        let psi = restricting_leaves(&f, &positions).sum_size();
        let measure = measure_modulo_given_restriction(&set, &Restriction::empty());
        let m_size_holds = (positions.len() as u64 >= 16 * m * m)
            .then(|| xi_approx(&measure, &rat(1, m as i64), &rat(1, 4)));
        let k = index as i64 - 1;
        let i1_sum_holds = psi >= int(k) * p.psi_increment();
        let report = EmissionReport {
            index,
            turn,
            positions: positions.len(),
            remainder: choice.o,
            trigger_slimmed_sum: trigger,
            grow_iterations,
            grow_converged,
            grow_precondition: grow_pre,
            good_mod_precondition: good_pre,
            required,
            fallback_remainder: fallback,
            measure,
            i1_sum_holds,
            i1_size_holds: position_count_claim(p, positions.len(), &psi),
            i2_holds: theta.sum_size() <= delta,
            m1_holds: choice.theta_given_m <= &p.c * &delta,
            m2_holds: choice.earning <= p.earn_bound,
            m_size_holds,
            psi_sum_size: psi,
            theta_sum_size: theta.sum_size(),
            theta_measure,
            theta_given_m: choice.theta_given_m,
            earning: choice.earning,
        };
        self.required = required;
        self.chosen.push(set.clone());
        self.current = Some(Current {
            set: set.clone(),
            snapshot: f,
        });
        Ok(Some((set, report)))
    }
}

/// Argmin earning among remainders meeting the lean bound, else overall.
fn fallback_remainder(scores: &[RemainderScore], theta_bound: &Rational) -> GoodRemainder {
    let live: Vec<_> = scores
        .iter()
        .filter_map(|s| Some((s.o, s.earning.clone()?, s.theta_given_m.clone()?)))
        .collect();
    let pick = |cands: Vec<&(u64, Rational, Rational)>| {
        cands
            .into_iter()
            .min_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(o, e, t)| GoodRemainder {
                o: *o,
                earning: e.clone(),
                theta_given_m: t.clone(),
            })
    };
    pick(live.iter().filter(|s| s.2 <= *theta_bound).collect())
        .or_else(|| pick(live.iter().collect()))
        .expect("remainder of the empty count always has positive measure")
}

/// `|I| >= (δ/phi)^{z}·ell` with `z = λ⁺(Ψ)/δ'`; `None` if the rational
/// exponent leaves the comparison undecided between its floor and ceiling.
fn position_count_claim(p: &ChooserParams, size: usize, psi: &Rational) -> Option<bool> {
    let z = psi / p.delta_prime();
    let base = from_biguint(&p.phi) / &p.lean_threshold;
    let lo = z.floor().to_integer().to_usize()?;
    let hi = z.ceil().to_integer().to_usize()?;
    let lhs = |e: usize| int(size as i64) * num_traits::pow(base.clone(), e);
    let ell = from_biguint(&p.ell);
    if lhs(lo) >= ell {
        Some(true)
    } else if lhs(hi) < ell {
        Some(false)
    } else {
        None
    }
}

/// Binomial class sums re-exported for callers that size modulo sets.
pub fn modulo_class_counts(u: u64, m: u64) -> Vec<BigUint> {
    binomial_class_sums(u, m).to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::pos;
    use crate::strategy::BettingStrategy;

    fn r(pairs: &[(u64, u8)]) -> Restriction {
        Restriction::from_pairs(pairs.iter().map(|&(p, b)| (pos(p), b == 1)))
    }

    #[test]
    fn params_k0() {
        let p = ChooserParams::from_k(0);
        assert_eq!(p.m, BigUint::from(256u32));
        assert_eq!(p.n, 12);
        assert_eq!(p.phi, BigUint::one() << 20usize);
        assert_eq!(p.ell, BigUint::one() << 2178usize);
        assert_eq!(p.h(1), BigUint::from(512u32));
        assert_eq!(p.xi(), Some(rat(1, 4)));
        let v = p.validate().unwrap();
        assert!(v.first_set_size);
        assert!(v.grow_first_trigger);
        assert_eq!(v.total_measure, Some(true));
    }

    #[test]
    fn params_k1() {
        let p = ChooserParams::from_k(1);
        assert_eq!(p.m, BigUint::from(1024u32));
        assert_eq!(p.n, 14);
        assert_eq!(p.phi, BigUint::one() << 24usize);
        assert_eq!(p.ell, BigUint::one() << 2990usize);
    }

    #[test]
    fn params_validation_errors() {
        assert!(ChooserParams::desk(4, 2, 16, 100).validate().is_err());
        assert!(ChooserParams::desk(4, 2, 32, 100).validate().is_err());
        assert!(ChooserParams::desk(4, 2, 64, 100).validate().is_ok());
        assert!(ChooserParams::desk(1, 2, 64, 100).validate().is_err());
        let v = ChooserParams::desk(4, 2, 256, 260).validate().unwrap();
        assert!(v.first_set_size);
        assert!(!v.grow_first_trigger);
        assert_eq!(v.total_measure, None);
    }

    #[test]
    fn params_json() {
        let p = ChooserParams::from_k(0);
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"m\":\"256\""));
        assert_eq!(serde_json::from_str::<ChooserParams>(&s).unwrap(), p);
        let d: ChooserParams =
            serde_json::from_str(r#"{"m":"4","n":2,"phi":"256","ell":"260"}"#).unwrap();
        assert_eq!(d, ChooserParams::desk(4, 2, 256, 260));
    }

    #[test]
    fn measure_budget_scan() {
        for k in 0..=16 {
            assert!(measure_budget_holds(k), "k = {k}");
        }
    }

    #[test]
    fn residue_threshold_is_tail_sum() {
        let p = ChooserParams::desk(4, 2, 256, 260);
        let partial: Rational = (3..60).map(|i| pow2(-(i + 8))).sum();
        assert!(p.residue_threshold() > partial);
        assert!(p.residue_threshold() - partial < pow2(-60));
    }

    #[test]
    fn slim_all_restricting() {
        let i = PositionSet::interval(1, 12);
        let mut ms = RestrictionMultiSet::new();
        ms.add_one(Restriction::from_pairs(i.iter().map(|p| (p, true))));
        let sel = slim_to_restricted_blocks(&ms, &i, 2, &rat(1, 4)).unwrap();
        assert_eq!(sel.block_index, 0);
        assert_eq!(sel.block_len, 3);
        assert_eq!(sel.block_count, 4);
        assert_eq!(sel.restricting_sum_size, ms.sum_size());
        assert_eq!(
            slim_to_restricted(&ms, &i, 2, &rat(1, 4)).unwrap(),
            PositionSet::interval(1, 3)
        );
    }

    #[test]
    fn slim_checked_errors() {
        let i = PositionSet::interval(1, 12);
        let mut ms = RestrictionMultiSet::new();
        ms.add_one(Restriction::empty());
        assert!(matches!(
            slim_to_restricted(&ms, &i, 3, &rat(1, 4)),
            Err(ChooserError::ChubbyMember { .. })
        ));
        let ms = RestrictionMultiSet::new();
        assert!(matches!(
            slim_to_restricted(&ms, &i, 3, &rat(1, 5)),
            Err(ChooserError::QOutOfRange { .. })
        ));
        assert!(matches!(
            slim_to_restricted(&ms, &i, 3, &rat(1, 3)),
            Err(ChooserError::QOutOfRange { .. })
        ));
    }

    #[test]
    fn grow_already_small() {
        let i = PositionSet::interval(1, 50);
        let mut ms = RestrictionMultiSet::new();
        ms.add_one(Restriction::empty());
        // the empty restriction is chubby, but g = 8 makes the bound fail
        assert!(matches!(
            grow_restricted(&ms, &i, 2, &rat(1, 4), &int(0)),
            Err(ChooserError::PreconditionFailed(_))
        ));
        let out = grow_restricted_unchecked(&ms, &i, 2, &rat(1, 4)).unwrap();
        assert_eq!(out.positions, i);
        assert_eq!(out.iterations, 0);
        assert!(out.converged);
    }

    #[test]
    fn grow_single_lean_block() {
        // q = 1/8: blocks of 3; the lean restriction leaves position 1 free,
        // so the first block loses and {4,5,6} is the earliest minimizer.
        let i = PositionSet::interval(1, 20);
        let lean = Restriction::from_pairs((2..=20).map(|p| (pos(p), false)));
        let mut ms = RestrictionMultiSet::new();
        ms.add(lean, BigUint::one() << 18usize);
        assert_eq!(ms.sum_size(), rat(1, 2));
        let out = grow_restricted_unchecked(&ms, &i, 2, &rat(1, 4)).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.positions, PositionSet::interval(4, 6));
        assert_eq!(out.restricted_sum_size, rat(1, 2));
        assert!(out.converged);
    }

    #[test]
    fn grow_precondition_bound() {
        let phi = BigUint::from(2u32);
        let d = rat(1, 5);
        // g = 0 needs |I| > 100
        assert!(!grow_precondition(&int(1), &int(1), 100, &phi, &d).holds);
        assert!(grow_precondition(&int(1), &int(1), 101, &phi, &d).holds);
        let pre = grow_precondition(&rat(6, 25), &int(0), 10001, &phi, &d);
        assert_eq!(pre.g, Some(2));
        assert!(pre.holds);
    }

    #[test]
    fn good_remainder_trivial() {
        let f = StrategyFamily::initial(2);
        let i = PositionSet::interval(1, 10);
        let g = find_good_remainder(
            &f,
            &RestrictionMultiSet::new(),
            &i,
            3,
            &rat(3, 2),
            &rat(1, 4),
        )
        .unwrap();
        assert_eq!(g.o, 0);
        assert_eq!(g.earning, rat(3, 4));
    }

    #[test]
    fn good_remainder_avoids_theta() {
        let f = StrategyFamily::initial(1);
        let i = PositionSet::interval(1, 4);
        let mut theta = RestrictionMultiSet::new();
        theta.add_one(r(&[(1, 0), (2, 0), (3, 0), (4, 0)]));
        let g = find_good_remainder(&f, &theta, &i, 2, &rat(3, 2), &rat(1, 16)).unwrap();
        assert!(g.theta_given_m <= rat(3, 32));
        assert_eq!(g.o, 1);
        assert!(matches!(
            find_good_remainder(&f, &theta, &i, 2, &rat(3, 2), &rat(1, 32)),
            Err(ChooserError::PreconditionFailed(_))
        ));
    }

    #[test]
    fn chooser_never_bet() {
        let mut st = ChooserState::new(ChooserParams::desk(4, 2, 256, 260), 1_000_000).unwrap();
        let f = StrategyFamily::initial(2);
        let (set, rep) = st.turn(1, &f).unwrap().unwrap();
        assert_eq!(set.positions().len(), 260);
        assert_eq!(set.remainder(), 0);
        assert!(rep.violations().is_empty());
        assert_eq!(rep.m_size_holds, Some(true));
        for t in 2..10 {
            assert!(st.turn(t, &f).unwrap().is_none());
        }
        assert_eq!(st.chosen().len(), 1);
    }

    #[test]
    fn chooser_rejects_literal_scale() {
        assert!(matches!(
            ChooserState::new(ChooserParams::from_k(0), 1_000_000),
            Err(ChooserError::TooLarge { .. })
        ));
    }

    #[test]
    fn chooser_triggers_after_slimming() {
        let mut st = ChooserState::new(ChooserParams::desk(2, 1, 16, 18), 1000).unwrap();
        let mut f = StrategyFamily::initial(1);
        st.turn(1, &f).unwrap().unwrap();
        // fair bets on positions 1..3 everywhere: 8 leaves with 15 free positions
        let mut b = BettingStrategy::initial();
        for p in 1..=3u64 {
            for leaf in b.leaves() {
                if leaf.path.len() as u64 == p - 1 {
                    let h = &leaf.mass / int(2);
                    b = b.define_bet(&leaf.path, pos(p), h.clone(), h).unwrap();
                }
            }
        }
        f.set(1, b);
        assert_eq!(st.slimmed_sum_size(&f), int(1));
        let (set, rep) = st.turn(2, &f).unwrap().unwrap();
        assert_eq!(rep.index, 2);
        assert!(set.positions().len() <= 18);
        assert!(rep.violations().is_empty(), "{:?}", rep);
    }
}

//! Exact uniform measure of clopen sets built from restrictions and modulo sets.
//!
//! Expressions are compiled into a normalized node tree. Evaluation branches on
//! the smallest position that still occurs in a restriction atom, memoizing on
//! the residual node. Once only modulo atoms remain, the count constraints are
//! resolved with binomial class sums over the Venn regions of their free
//! position sets.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::model::{
    ns_unrestricted, ModuloSet, Position, PositionSet, PositionUniverse, Restriction,
};
use crate::rational::Rational;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MeasureError {
    #[error("position {position} lies outside the universe [1, {bound}]")]
    UniverseTooSmall { position: u64, bound: u64 },
    #[error("precondition N*(r,I) = {unrestricted} >= (m/xi)^2 fails for m = {modulus}")]
    TooFewUnrestricted { unrestricted: usize, modulus: u64 },
    #[error("xi must lie in (0, 1]")]
    InvalidXi,
}

/// Set expression over restriction and modulo-set atoms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ClopenExpr {
    Full,
    Empty,
    Restriction {
        r: Restriction,
    },
    Modulo {
        set: ModuloSet,
    },
    Intersect {
        args: Vec<ClopenExpr>,
    },
    Union {
        args: Vec<ClopenExpr>,
    },
    Difference {
        left: Box<ClopenExpr>,
        right: Box<ClopenExpr>,
    },
    Complement {
        arg: Box<ClopenExpr>,
    },
}

impl ClopenExpr {
    pub fn restriction(r: Restriction) -> Self {
        ClopenExpr::Restriction { r }
    }

    pub fn modulo(set: ModuloSet) -> Self {
        ClopenExpr::Modulo { set }
    }

    pub fn intersect(args: Vec<ClopenExpr>) -> Self {
        ClopenExpr::Intersect { args }
    }

    pub fn union(args: Vec<ClopenExpr>) -> Self {
        ClopenExpr::Union { args }
    }

    /// Union of the cylinders of the given restrictions.
    pub fn union_of<'a, I: IntoIterator<Item = &'a Restriction>>(rs: I) -> Self {
        ClopenExpr::Union {
            args: rs
                .into_iter()
                .cloned()
                .map(ClopenExpr::restriction)
                .collect(),
        }
    }

    pub fn difference(left: ClopenExpr, right: ClopenExpr) -> Self {
        ClopenExpr::Difference {
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn complement(arg: ClopenExpr) -> Self {
        ClopenExpr::Complement { arg: Box::new(arg) }
    }

    pub fn max_position(&self) -> Option<Position> {
        match self {
            ClopenExpr::Full | ClopenExpr::Empty => None,
            ClopenExpr::Restriction { r } => r.max_position(),
            ClopenExpr::Modulo { set } => set.positions().max(),
            ClopenExpr::Intersect { args } | ClopenExpr::Union { args } => {
                args.iter().filter_map(|a| a.max_position()).max()
            }
            ClopenExpr::Difference { left, right } => left.max_position().max(right.max_position()),
            ClopenExpr::Complement { arg } => arg.max_position(),
        }
    }

    /// Smallest universe covering every atom.
    pub fn universe(&self) -> PositionUniverse {
        PositionUniverse::new(self.max_position().map_or(1, |p| p.get()))
    }

    /// Membership of a full assignment; `None` if the assignment is too short.
    pub fn contains(&self, w: &crate::model::FullAssignment) -> Option<bool> {
        Some(match self {
            ClopenExpr::Full => true,
            ClopenExpr::Empty => false,
            ClopenExpr::Restriction { r } => w.satisfies(r)?,
            ClopenExpr::Modulo { set } => set.contains(w)?,
            ClopenExpr::Intersect { args } => {
                let mut all = true;
                for a in args {
                    all &= a.contains(w)?;
                }
                all
            }
            ClopenExpr::Union { args } => {
                let mut any = false;
                for a in args {
                    any |= a.contains(w)?;
                }
                any
            }
            ClopenExpr::Difference { left, right } => left.contains(w)? && !right.contains(w)?,
            ClopenExpr::Complement { arg } => !arg.contains(w)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct ModAtom {
    free: Arc<[u64]>,
    modulus: u64,
    target: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Node {
    Const(bool),
    /// Sorted by position, nonempty.
    Restr(Arc<[(u64, bool)]>),
    Modu(ModAtom),
    And(Arc<[Node]>),
    Or(Arc<[Node]>),
    Not(Arc<Node>),
}

impl Node {
    fn and(children: Vec<Node>) -> Node {
        let mut restr: BTreeMap<u64, bool> = BTreeMap::new();
        let mut out = Vec::new();
        let mut stack = children;
        stack.reverse();
        while let Some(c) = stack.pop() {
            match c {
                Node::Const(true) => {}
                Node::Const(false) => return Node::Const(false),
                Node::Restr(a) => {
                    for &(p, b) in a.iter() {
                        if *restr.entry(p).or_insert(b) != b {
                            return Node::Const(false);
                        }
                    }
                }
                Node::And(xs) => stack.extend(xs.iter().rev().cloned()),
                other => out.push(other),
            }
        }
        if !restr.is_empty() {
            out.insert(0, Node::Restr(restr.into_iter().collect()));
        }
        match out.len() {
            0 => Node::Const(true),
            1 => out.pop().unwrap(),
            _ => Node::And(out.into()),
        }
    }

    fn or(children: Vec<Node>) -> Node {
        let mut out = Vec::new();
        let mut stack = children;
        stack.reverse();
        while let Some(c) = stack.pop() {
            match c {
                Node::Const(false) => {}
                Node::Const(true) => return Node::Const(true),
                Node::Or(xs) => stack.extend(xs.iter().rev().cloned()),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Node::Const(false),
            1 => out.pop().unwrap(),
            _ => Node::Or(out.into()),
        }
    }

    fn not(c: Node) -> Node {
        match c {
            Node::Const(b) => Node::Const(!b),
            Node::Not(x) => (*x).clone(),
            other => Node::Not(Arc::new(other)),
        }
    }

    fn modu(free: Arc<[u64]>, modulus: u64, target: u64) -> Node {
        if free.is_empty() {
            Node::Const(target == 0)
        } else {
            Node::Modu(ModAtom {
                free,
                modulus,
                target,
            })
        }
    }

    /// Substitute `bit` at `p`; `None` when nothing mentions `p`.
    fn assign(&self, p: u64, bit: bool) -> Option<Node> {
        match self {
            Node::Const(_) => None,
            Node::Restr(a) => {
                let idx = a.binary_search_by_key(&p, |&(q, _)| q).ok()?;
                if a[idx].1 != bit {
                    return Some(Node::Const(false));
                }
                if a.len() == 1 {
                    return Some(Node::Const(true));
                }
                let rest: Vec<_> = a
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != idx)
                    .map(|(_, &x)| x)
                    .collect();
                Some(Node::Restr(rest.into()))
            }
            Node::Modu(a) => {
                let idx = a.free.binary_search(&p).ok()?;
                let mut free = a.free.to_vec();
                free.remove(idx);
                let target = (a.target + a.modulus - bit as u64) % a.modulus;
                Some(Node::modu(free.into(), a.modulus, target))
            }
            Node::And(xs) | Node::Or(xs) => {
                let mut changed = false;
                let kids: Vec<Node> = xs
                    .iter()
                    .map(|x| match x.assign(p, bit) {
                        Some(y) => {
                            changed = true;
                            y
                        }
                        None => x.clone(),
                    })
                    .collect();
                if !changed {
                    return None;
                }
                Some(if matches!(self, Node::And(_)) {
                    Node::and(kids)
                } else {
                    Node::or(kids)
                })
            }
            Node::Not(x) => x.assign(p, bit).map(Node::not),
        }
    }

    fn min_restr_pos(&self) -> Option<u64> {
        match self {
            Node::Restr(a) => Some(a[0].0),
            Node::Const(_) | Node::Modu(_) => None,
            Node::And(xs) | Node::Or(xs) => xs.iter().filter_map(|x| x.min_restr_pos()).min(),
            Node::Not(x) => x.min_restr_pos(),
        }
    }

    fn collect_mod_atoms<'a>(&'a self, out: &mut Vec<&'a ModAtom>) {
        match self {
            Node::Modu(a) => out.push(a),
            Node::And(xs) | Node::Or(xs) => xs.iter().for_each(|x| x.collect_mod_atoms(out)),
            Node::Not(x) => x.collect_mod_atoms(out),
            Node::Const(_) | Node::Restr(_) => {}
        }
    }

    /// Truth value once every atom is a modulo atom.
    fn eval_residues(&self, counters: &HashMap<(Arc<[u64]>, u64), usize>, res: &[u64]) -> bool {
        match self {
            Node::Const(b) => *b,
            Node::Modu(a) => res[counters[&(a.free.clone(), a.modulus)]] == a.target,
            Node::And(xs) => xs.iter().all(|x| x.eval_residues(counters, res)),
            Node::Or(xs) => xs.iter().any(|x| x.eval_residues(counters, res)),
            Node::Not(x) => !x.eval_residues(counters, res),
            Node::Restr(_) => unreachable!("restriction atoms are resolved before counting"),
        }
    }

    fn from_expr(e: &ClopenExpr) -> Node {
        match e {
            ClopenExpr::Full => Node::Const(true),
            ClopenExpr::Empty => Node::Const(false),
            ClopenExpr::Restriction { r } => {
                if r.is_empty() {
                    Node::Const(true)
                } else {
                    Node::Restr(r.iter().map(|(p, b)| (p.get(), b)).collect())
                }
            }
            ClopenExpr::Modulo { set } => Node::modu(
                set.positions().iter().map(|p| p.get()).collect(),
                set.modulus(),
                set.remainder(),
            ),
            ClopenExpr::Intersect { args } => Node::and(args.iter().map(Node::from_expr).collect()),
            ClopenExpr::Union { args } => Node::or(args.iter().map(Node::from_expr).collect()),
            ClopenExpr::Difference { left, right } => Node::and(vec![
                Node::from_expr(left),
                Node::not(Node::from_expr(right)),
            ]),
            ClopenExpr::Complement { arg } => Node::not(Node::from_expr(arg)),
        }
    }
}

/// A compiled expression; cheap to condition on further assignments.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Compiled(Node);

impl Compiled {
    pub fn assign(&self, p: Position, bit: bool) -> Compiled {
        match self.0.assign(p.get(), bit) {
            Some(n) => Compiled(n),
            None => self.clone(),
        }
    }

    pub fn restrict(&self, r: &Restriction) -> Compiled {
        let mut node = self.0.clone();
        for (p, b) in r.iter() {
            if let Some(n) = node.assign(p.get(), b) {
                node = n;
            }
        }
        Compiled(node)
    }

    /// `Some(true)` for the full space, `Some(false)` for the empty set.
    pub fn as_const(&self) -> Option<bool> {
        match self.0 {
            Node::Const(b) => Some(b),
            _ => None,
        }
    }
}

/// Memoizing evaluator. One engine per computation; not shared between threads.
#[derive(Debug, Default)]
pub struct MeasureEngine {
    memo: HashMap<Node, Rational>,
}

impl MeasureEngine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn compile(&self, e: &ClopenExpr) -> Compiled {
        Compiled(Node::from_expr(e))
    }

    pub fn measure(&mut self, c: &Compiled) -> Rational {
        self.eval(&c.0)
    }

    pub fn measure_expr(&mut self, e: &ClopenExpr) -> Rational {
        let c = self.compile(e);
        self.measure(&c)
    }

    /// `λ(X | r̃)`.
    pub fn measure_given(&mut self, c: &Compiled, r: &Restriction) -> Rational {
        let c = c.restrict(r);
        self.measure(&c)
    }

    fn eval(&mut self, node: &Node) -> Rational {
        match node {
            Node::Const(true) => return Rational::one(),
            Node::Const(false) => return Rational::zero(),
            Node::Modu(a) => return modulo_fraction(a.free.len() as u64, a.modulus, a.target),
            _ => {}
        }
        if let Some(v) = self.memo.get(node) {
            return v.clone();
        }
        let v = match node.min_restr_pos() {
            Some(p) => {
                let zero = node.assign(p, false).expect("branch position occurs");
                let one = node.assign(p, true).expect("branch position occurs");
                (self.eval(&zero) + self.eval(&one)) / Rational::from_integer(BigInt::from(2))
            }
            None => count_modulo_only(node),
        };
        self.memo.insert(node.clone(), v.clone());
        v
    }
}

/// `λ(e)` with a universe check on every atom.
pub fn measure_expr(e: &ClopenExpr, universe: PositionUniverse) -> Result<Rational, MeasureError> {
    if let Some(p) = e.max_position() {
        if !universe.covers(p) {
            return Err(MeasureError::UniverseTooSmall {
                position: p.get(),
                bound: universe.bound,
            });
        }
    }
    Ok(MeasureEngine::new().measure_expr(e))
}

fn count_modulo_only(node: &Node) -> Rational {
    let mut atoms = Vec::new();
    node.collect_mod_atoms(&mut atoms);
    let mut counters: HashMap<(Arc<[u64]>, u64), usize> = HashMap::new();
    let mut moduli = Vec::new();
    let mut frees: Vec<Arc<[u64]>> = Vec::new();
    for a in atoms {
        let key = (a.free.clone(), a.modulus);
        if let std::collections::hash_map::Entry::Vacant(e) = counters.entry(key) {
            e.insert(moduli.len());
            moduli.push(a.modulus);
            frees.push(a.free.clone());
        }
    }
    assert!(moduli.len() <= 64, "too many distinct modulo counters");
    let mut masks: BTreeMap<u64, u64> = BTreeMap::new();
    for (c, free) in frees.iter().enumerate() {
        for &p in free.iter() {
            *masks.entry(p).or_insert(0) |= 1 << c;
        }
    }
    let mut regions: BTreeMap<u64, u64> = BTreeMap::new();
    for (_, mask) in masks {
        *regions.entry(mask).or_insert(0) += 1;
    }
    let total: u64 = regions.values().sum();

    let mut states: HashMap<Vec<u64>, BigUint> = HashMap::new();
    states.insert(vec![0; moduli.len()], BigUint::one());
    for (&mask, &size) in &regions {
        let members: Vec<usize> = (0..moduli.len()).filter(|c| mask >> c & 1 == 1).collect();
        let period = members.iter().fold(1u64, |acc, &c| acc.lcm(&moduli[c]));
        let sums = binomial_class_sums(size, period);
        let mut next: HashMap<Vec<u64>, BigUint> = HashMap::new();
        for (res, w) in &states {
            for (j, s) in sums.iter().enumerate() {
                if s.is_zero() {
                    continue;
                }
                let mut r = res.clone();
                for &c in &members {
                    r[c] = (r[c] + j as u64) % moduli[c];
                }
                *next.entry(r).or_insert_with(BigUint::zero) += w * s;
            }
        }
        states = next;
    }
    let hits: BigUint = states
        .iter()
        .filter(|(res, _)| node.eval_residues(&counters, res))
        .map(|(_, w)| w.clone())
        .sum();
    Rational::new(BigInt::from(hits), BigInt::one() << total)
}

type ClassCache = Mutex<HashMap<(u64, u64), Arc<Vec<BigUint>>>>;

fn class_cache() -> &'static ClassCache {
    static CACHE: OnceLock<ClassCache> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// `[Σ_{i ≡ a mod L} C(u, i) for a in 0..L]`, cached process-wide.
pub fn binomial_class_sums(u: u64, modulus: u64) -> Arc<Vec<BigUint>> {
    assert!(modulus >= 1);
    if let Some(v) = class_cache().lock().unwrap().get(&(u, modulus)) {
        return v.clone();
    }
    let mut sums = vec![BigUint::zero(); modulus as usize];
    let mut c = BigUint::one();
    for i in 0..=u {
        sums[(i % modulus) as usize] += &c;
        c = c * (u - i) / (i + 1);
    }
    let v = Arc::new(sums);
    class_cache()
        .lock()
        .unwrap()
        .insert((u, modulus), v.clone());
    v
}

/// Fraction of assignments of `u` free bits whose count is `target` mod `m`.
fn modulo_fraction(u: u64, modulus: u64, target: u64) -> Rational {
    let sums = binomial_class_sums(u, modulus);
    Rational::new(
        BigInt::from(sums[target as usize].clone()),
        BigInt::one() << u,
    )
}

pub fn measure_restriction(r: &Restriction) -> Rational {
    r.measure()
}

/// `λ(M | r̃)` by the binomial formula.
pub fn measure_modulo_given_restriction(m: &ModuloSet, r: &Restriction) -> Rational {
    let i = m.positions();
    let u = ns_unrestricted(r, i) as u64;
    let j = r.ones_in(i) as u64 % m.modulus();
    let target = (m.remainder() + m.modulus() - j) % m.modulus();
    modulo_fraction(u, m.modulus(), target)
}

/// `(1-ξ)y <= x <= y/(1-ξ)`. For `ξ >= 1` the upper bound is vacuous.
pub fn xi_approx(x: &Rational, y: &Rational, xi: &Rational) -> bool {
    let k = Rational::one() - xi;
    let lower = &k * y <= *x;
    let upper = !k.is_positive() || x * &k <= *y;
    lower && upper
}

/// [`xi_approx`] with `ξ = sqrt(xi_sq)`, decided without the square root.
/// Assumes `x, y >= 0`.
pub fn xi_approx_squared(x: &Rational, y: &Rational, xi_sq: &Rational) -> bool {
    let one = Rational::one();
    if *xi_sq >= one {
        return true;
    }
    if y.is_zero() {
        return x.is_zero();
    }
    let d = &one - x / y;
    let lower = !d.is_positive() || &d * &d <= *xi_sq;
    let e = x - y;
    let upper = !e.is_positive() || &e * &e <= x * x * xi_sq;
    lower && upper
}

/// Checks every remainder's conditional measure against `1/m`.
pub fn check_modulo_independence(
    i: &PositionSet,
    modulus: u64,
    xi: &Rational,
    r: &Restriction,
) -> Result<bool, MeasureError> {
    if !xi.is_positive() || *xi > Rational::one() {
        return Err(MeasureError::InvalidXi);
    }
    check_modulo_independence_sq(i, modulus, &(xi * xi), r)
}

/// Same as [`check_modulo_independence`] with `ξ²` given exactly.
pub fn check_modulo_independence_sq(
    i: &PositionSet,
    modulus: u64,
    xi_sq: &Rational,
    r: &Restriction,
) -> Result<bool, MeasureError> {
    if !xi_sq.is_positive() {
        return Err(MeasureError::InvalidXi);
    }
    let u = ns_unrestricted(r, i);
    let m_sq = Rational::from_integer(BigInt::from(modulus) * BigInt::from(modulus));
    if Rational::from_integer(BigInt::from(u)) * xi_sq < m_sq {
        return Err(MeasureError::TooFewUnrestricted {
            unrestricted: u,
            modulus,
        });
    }
    if *xi_sq >= Rational::one() {
        return Ok(true);
    }
    // the remainders only permute the class sums, so check each class once
    let sums = binomial_class_sums(u as u64, modulus);
    Ok(sums
        .iter()
        .all(|a| count_approx_squared(a, u as u64, modulus, xi_sq)))
}

/// [`xi_approx_squared`] for `x = a/2^u`, `y = 1/m`, in integers.
fn count_approx_squared(a: &BigUint, u: u64, modulus: u64, xi_sq: &Rational) -> bool {
    let (p, q) = (xi_sq.numer(), xi_sq.denom());
    let t = BigInt::one() << u;
    let am = BigInt::from(a.clone()) * BigInt::from(modulus);
    // lower: (1 - x/y)² <= ξ² when x < y
    let lower = am >= t || {
        let d = &t - &am;
        &d * &d * q <= p * &t * &t
    };
    // upper: (x - y)² <= x²ξ² when x > y
    let upper = am <= t || {
        let e = &am - &t;
        &e * &e * q <= &am * &am * p
    };
    lower && upper
}

/// `C(u, ⌊u/2⌋)² · u < 4^u`.
pub fn central_binomial_claim(u: u64) -> bool {
    let mut c = BigUint::one();
    let h = u / 2;
    for i in 0..h {
        c = c * (u - i) / (i + 1);
    }
    &c * &c * u < BigUint::one() << (2 * u)
}

/// First `u` in `[1, max_u]` where [`central_binomial_claim`] fails, stepping
/// `C(u, ⌊u/2⌋)` forward instead of recomputing it.
pub fn central_binomial_scan(max_u: u64) -> Option<u64> {
    let mut c = BigUint::one();
    let mut four = BigUint::from(4u32);
    for u in 1..=max_u {
        if u > 1 {
            let k = u / 2;
            c = if u % 2 == 0 {
                c << 1usize
            } else {
                c * u / (k + 1)
            };
        }
        if &c * &c * u >= four {
            return Some(u);
        }
        four <<= 2usize;
    }
    None
}

/// `|Σ even-indexed − Σ odd-indexed| <= max` for a unimodal sequence.
pub fn alternating_sum_claim(seq: &[BigUint]) -> bool {
    let mut even = BigInt::zero();
    let mut odd = BigInt::zero();
    for (i, x) in seq.iter().enumerate() {
        if i % 2 == 0 {
            even += BigInt::from(x.clone());
        } else {
            odd += BigInt::from(x.clone());
        }
    }
    let max = seq.iter().max().cloned().unwrap_or_default();
    (even - odd).abs() <= BigInt::from(max)
}

/// `λ(∪ R̃)` for a collection of restrictions.
pub fn union_measure<'a, I: IntoIterator<Item = &'a Restriction>>(rs: I) -> Rational {
    MeasureEngine::new().measure_expr(&ClopenExpr::union_of(rs))
}

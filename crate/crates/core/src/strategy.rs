//! Finite non-monotonic betting strategies as persistent bet trees.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::model::{BitString, FullAssignment, Position, Restriction, RestrictionMultiSet};
use crate::rational::{int, pow2, two_pow_exceeds, Rational};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StrategyError {
    #[error("node {0:?} does not exist")]
    UnknownNode(String),
    #[error("node {0:?} is not a leaf")]
    NotALeaf(String),
    #[error("position {position} is already restricted at node {path:?}")]
    AlreadyRestricted { path: String, position: u64 },
    #[error("masses {mass0} + {mass1} do not sum to the leaf mass {leaf_mass} at {path:?}")]
    MassMismatch {
        path: String,
        mass0: String,
        mass1: String,
        leaf_mass: String,
    },
    #[error("negative mass at {0:?}")]
    NegativeMass(String),
    #[error("position {position} lies outside the assignment of length {len}")]
    UniverseTooSmall { position: u64, len: usize },
    #[error("invalid strategy dump: {0}")]
    InvalidDump(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Bet {
    position: Position,
    zero: Arc<TreeNode>,
    one: Arc<TreeNode>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct TreeNode {
    restriction: Restriction,
    mass: Rational,
    bet: Option<Bet>,
}

impl TreeNode {
    fn leaf(restriction: Restriction, mass: Rational) -> Self {
        TreeNode {
            restriction,
            mass,
            bet: None,
        }
    }

    fn child(&self, bit: bool) -> Option<&Arc<TreeNode>> {
        self.bet
            .as_ref()
            .map(|b| if bit { &b.one } else { &b.zero })
    }
}

/// Borrowed view of one node.
#[derive(Debug, Clone, Copy)]
pub struct NodeView<'a> {
    pub restriction: &'a Restriction,
    pub mass: &'a Rational,
    pub bet_position: Option<Position>,
}

/// Owned copy of a leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Leaf {
    pub path: BitString,
    pub restriction: Restriction,
    pub mass: Rational,
}

impl Leaf {
    pub fn capital(&self) -> Rational {
        &self.mass * pow2(self.path.len() as i64)
    }
}

/// A Kolmogorov–Loveland betting strategy; cloning is cheap and
/// `define_bet` shares all untouched subtrees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BettingStrategy {
    root: Arc<TreeNode>,
    nodes: usize,
}

impl Default for BettingStrategy {
    fn default() -> Self {
        Self::initial()
    }
}

impl BettingStrategy {
    /// Only the root: empty restriction, mass 1.
    pub fn initial() -> Self {
        BettingStrategy {
            root: Arc::new(TreeNode::leaf(Restriction::empty(), Rational::one())),
            nodes: 1,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.div_ceil(2)
    }

    fn find(&self, s: &BitString) -> Option<&TreeNode> {
        let mut node = &*self.root;
        for &b in s.bits() {
            node = node.child(b)?;
        }
        Some(node)
    }

    pub fn node(&self, s: &BitString) -> Option<NodeView<'_>> {
        self.find(s).map(|n| NodeView {
            restriction: &n.restriction,
            mass: &n.mass,
            bet_position: n.bet.as_ref().map(|b| b.position),
        })
    }

    /// The prefix of `s` that is a leaf, if the path reaches one.
    pub fn leaf_on_path(&self, s: &BitString) -> Option<BitString> {
        let mut node = &*self.root;
        for (k, &b) in s.bits().iter().enumerate() {
            match node.child(b) {
                Some(c) => node = c,
                None => return Some(BitString::from_bits(s.bits()[..k].to_vec())),
            }
        }
        node.bet.is_none().then(|| s.clone())
    }

    pub fn is_leaf(&self, s: &BitString) -> bool {
        self.find(s).is_some_and(|n| n.bet.is_none())
    }

    /// Adds a bet on `p` at leaf `leaf`, splitting its mass into `(mass0, mass1)`.
    pub fn define_bet(
        &self,
        leaf: &BitString,
        p: Position,
        mass0: Rational,
        mass1: Rational,
    ) -> Result<BettingStrategy, StrategyError> {
        let path = leaf.to_string();
        let target = self
            .find(leaf)
            .ok_or_else(|| StrategyError::UnknownNode(path.clone()))?;
        if target.bet.is_some() {
            return Err(StrategyError::NotALeaf(path));
        }
        if target.restriction.restricts(p) {
            return Err(StrategyError::AlreadyRestricted {
                path,
                position: p.get(),
            });
        }
        if mass0.is_negative() || mass1.is_negative() {
            return Err(StrategyError::NegativeMass(path));
        }
        if &mass0 + &mass1 != target.mass {
            return Err(StrategyError::MassMismatch {
                path,
                mass0: mass0.to_string(),
                mass1: mass1.to_string(),
                leaf_mass: target.mass.to_string(),
            });
        }
        let split = TreeNode {
            restriction: target.restriction.clone(),
            mass: target.mass.clone(),
            bet: Some(Bet {
                position: p,
                zero: Arc::new(TreeNode::leaf(
                    target
                        .restriction
                        .with(p, false)
                        .expect("checked unrestricted"),
                    mass0,
                )),
                one: Arc::new(TreeNode::leaf(
                    target
                        .restriction
                        .with(p, true)
                        .expect("checked unrestricted"),
                    mass1,
                )),
            }),
        };
        Ok(BettingStrategy {
            root: Arc::new(replace_at(&self.root, leaf.bits(), split)),
            nodes: self.nodes + 2,
        })
    }

    /// `c(s) = 2^{|s|} μ(s)`.
    pub fn capital(&self, s: &BitString) -> Result<Rational, StrategyError> {
        let n = self
            .find(s)
            .ok_or_else(|| StrategyError::UnknownNode(s.to_string()))?;
        Ok(&n.mass * pow2(s.len() as i64))
    }

    /// Preorder walk over every node.
    pub fn visit(&self, mut f: impl FnMut(&BitString, NodeView<'_>)) {
        let mut stack = vec![(BitString::empty(), &*self.root)];
        while let Some((path, n)) = stack.pop() {
            f(
                &path,
                NodeView {
                    restriction: &n.restriction,
                    mass: &n.mass,
                    bet_position: n.bet.as_ref().map(|b| b.position),
                },
            );
            if let Some(b) = &n.bet {
                stack.push((path.child(true), &b.one));
                stack.push((path.child(false), &b.zero));
            }
        }
    }

    /// Leaves in lexicographic path order.
    pub fn leaves(&self) -> Vec<Leaf> {
        let mut out = Vec::with_capacity(self.leaf_count());
        self.visit(|path, v| {
            if v.bet_position.is_none() {
                out.push(Leaf {
                    path: path.clone(),
                    restriction: v.restriction.clone(),
                    mass: v.mass.clone(),
                });
            }
        });
        out
    }

    pub fn leaf_restrictions(&self) -> RestrictionMultiSet {
        let mut out = RestrictionMultiSet::new();
        self.visit(|_, v| {
            if v.bet_position.is_none() {
                out.add_one(v.restriction.clone());
            }
        });
        out
    }

    pub fn depth(&self) -> usize {
        let mut d = 0;
        self.visit(|p, _| d = d.max(p.len()));
        d
    }

    pub fn max_position(&self) -> Option<Position> {
        let mut m = None;
        self.visit(|_, v| m = m.max(v.bet_position));
        m
    }

    /// `c(s)` and the running maximum `c̄(s)` for every node.
    pub fn capital_report(&self) -> CapitalReport {
        let mut nodes = BTreeMap::new();
        let mut stack = vec![(BitString::empty(), &*self.root, Rational::zero())];
        while let Some((path, n, parent_max)) = stack.pop() {
            let c = &n.mass * pow2(path.len() as i64);
            let cmax = if c > parent_max {
                c.clone()
            } else {
                parent_max
            };
            if let Some(b) = &n.bet {
                stack.push((path.child(true), &b.one, cmax.clone()));
                stack.push((path.child(false), &b.zero, cmax.clone()));
            }
            nodes.insert(
                path,
                CapitalEntry {
                    capital: c,
                    max_capital: cmax,
                },
            );
        }
        CapitalReport { nodes }
    }

    /// `ĉ`: the largest capital on the path consistent with `w`.
    pub fn maximal_achieved_capital(&self, w: &FullAssignment) -> Result<Rational, StrategyError> {
        let mut node = &*self.root;
        let mut depth = 0i64;
        let mut best = node.mass.clone();
        while let Some(b) = &node.bet {
            let bit = w.get(b.position).ok_or(StrategyError::UniverseTooSmall {
                position: b.position.get(),
                len: w.len(),
            })?;
            node = if bit { &b.one } else { &b.zero };
            depth += 1;
            let c = &node.mass * pow2(depth);
            if c > best {
                best = c;
            }
        }
        Ok(best)
    }

    /// Restrictions of the shallowest nodes whose capital exceeds `h`; their
    /// union is exactly the set where `ĉ > h`.
    pub fn exceeding_restrictions(&self, h: &Rational) -> Vec<Restriction> {
        let mut out = Vec::new();
        let mut stack = vec![(&*self.root, 0i64)];
        while let Some((n, depth)) = stack.pop() {
            if &n.mass * pow2(depth) > *h {
                out.push(n.restriction.clone());
                continue;
            }
            if let Some(b) = &n.bet {
                stack.push((&b.one, depth + 1));
                stack.push((&b.zero, depth + 1));
            }
        }
        out
    }

    /// `before → self`: every node of `before` is present here unchanged.
    pub fn extends(&self, before: &BettingStrategy) -> bool {
        fn sub(a: &TreeNode, b: &TreeNode) -> bool {
            if a.restriction != b.restriction || a.mass != b.mass {
                return false;
            }
            match (&a.bet, &b.bet) {
                (_, None) => true,
                (None, Some(_)) => false,
                (Some(x), Some(y)) => {
                    x.position == y.position && sub(&x.zero, &y.zero) && sub(&x.one, &y.one)
                }
            }
        }
        sub(&self.root, &before.root)
    }

    /// Checks every structural invariant, including mass additivity.
    pub fn validate(&self) -> Result<(), StrategyError> {
        if !self.root.restriction.is_empty() || !self.root.mass.is_one() {
            return Err(StrategyError::InvalidDump("root must be (empty, 1)".into()));
        }
        let mut err = None;
        let mut count = 0;
        self.visit(|path, v| {
            count += 1;
            if err.is_some() {
                return;
            }
            if v.mass.is_negative() {
                err = Some(StrategyError::NegativeMass(path.to_string()));
                return;
            }
            if let Some(p) = v.bet_position {
                let z = self.find(&path.child(false)).expect("child");
                let o = self.find(&path.child(true)).expect("child");
                if v.restriction.restricts(p)
                    || Ok(&z.restriction) != v.restriction.with(p, false).as_ref()
                    || Ok(&o.restriction) != v.restriction.with(p, true).as_ref()
                {
                    err = Some(StrategyError::InvalidDump(format!(
                        "children of {path:?} do not extend its restriction at {p}"
                    )));
                } else if &z.mass + &o.mass != *v.mass {
                    err = Some(StrategyError::MassMismatch {
                        path: path.to_string(),
                        mass0: z.mass.to_string(),
                        mass1: o.mass.to_string(),
                        leaf_mass: v.mass.to_string(),
                    });
                }
            }
        });
        if count != self.nodes {
            return Err(StrategyError::InvalidDump("node count mismatch".into()));
        }
        err.map_or(Ok(()), Err)
    }

    pub fn dump(&self) -> Vec<DumpNode> {
        let mut out = Vec::with_capacity(self.nodes);
        self.visit(|path, v| {
            out.push(DumpNode {
                path: path.clone(),
                restriction: v.restriction.clone(),
                mass: v.mass.clone(),
                bet_position: v.bet_position,
            })
        });
        out
    }

    pub fn from_dump(nodes: &[DumpNode]) -> Result<BettingStrategy, StrategyError> {
        let by_path: BTreeMap<&BitString, &DumpNode> = nodes.iter().map(|n| (&n.path, n)).collect();
        if by_path.len() != nodes.len() {
            return Err(StrategyError::InvalidDump("duplicate path".into()));
        }
        fn build(
            path: &BitString,
            by_path: &BTreeMap<&BitString, &DumpNode>,
            used: &mut usize,
        ) -> Result<TreeNode, StrategyError> {
            let d = by_path
                .get(path)
                .ok_or_else(|| StrategyError::InvalidDump(format!("missing node {path:?}")))?;
            *used += 1;
            let bet = match d.bet_position {
                None => None,
                Some(p) => Some(Bet {
                    position: p,
                    zero: Arc::new(build(&path.child(false), by_path, used)?),
                    one: Arc::new(build(&path.child(true), by_path, used)?),
                }),
            };
            Ok(TreeNode {
                restriction: d.restriction.clone(),
                mass: d.mass.clone(),
                bet,
            })
        }
        let mut used = 0;
        let root = build(&BitString::empty(), &by_path, &mut used)?;
        if used != nodes.len() {
            return Err(StrategyError::InvalidDump("unreachable nodes".into()));
        }
        let s = BettingStrategy {
            root: Arc::new(root),
            nodes: used,
        };
        s.validate()?;
        Ok(s)
    }
}

fn replace_at(node: &Arc<TreeNode>, rest: &[bool], new: TreeNode) -> TreeNode {
    match rest.split_first() {
        None => new,
        Some((&bit, tail)) => {
            let b = node.bet.as_ref().expect("path exists");
            let (zero, one) = if bit {
                (b.zero.clone(), Arc::new(replace_at(&b.one, tail, new)))
            } else {
                (Arc::new(replace_at(&b.zero, tail, new)), b.one.clone())
            };
            TreeNode {
                restriction: node.restriction.clone(),
                mass: node.mass.clone(),
                bet: Some(Bet {
                    position: b.position,
                    zero,
                    one,
                }),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpNode {
    pub path: BitString,
    pub restriction: Restriction,
    #[serde(with = "crate::rational::serde_rational")]
    pub mass: Rational,
    pub bet_position: Option<Position>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapitalEntry {
    #[serde(with = "crate::rational::serde_rational")]
    pub capital: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub max_capital: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CapitalReport {
    pub nodes: BTreeMap<BitString, CapitalEntry>,
}

/// Play and bank capital of the savings construction at one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SavingsCapital {
    pub play: Rational,
    pub bank: Rational,
}

impl SavingsCapital {
    pub fn start() -> Self {
        SavingsCapital {
            play: Rational::one(),
            bank: Rational::zero(),
        }
    }

    pub fn total(&self) -> Rational {
        &self.play + &self.bank
    }
}

/// Savings state of both children given the original capitals `c(s)`,
/// `c(s0)`, `c(s1)`.
pub fn savings_children(
    parent: &SavingsCapital,
    c: &Rational,
    c0: &Rational,
    c1: &Rational,
) -> [SavingsCapital; 2] {
    if c.is_zero() || c0 == c1 {
        return [parent.clone(), parent.clone()];
    }
    let guess_one = c1 >= c;
    let cb = if guess_one { c1 } else { c0 };
    let f = (cb - c) / c;
    let one = Rational::one();
    let won = (&one + &f) * &parent.play;
    let win = if won >= int(2) {
        let half = won / int(2);
        SavingsCapital {
            play: half.clone(),
            bank: &parent.bank + half,
        }
    } else {
        SavingsCapital {
            play: won,
            bank: parent.bank.clone(),
        }
    };
    let lose = SavingsCapital {
        play: (&one - &f) * &parent.play,
        bank: parent.bank.clone(),
    };
    if guess_one {
        [lose, win]
    } else {
        [win, lose]
    }
}

/// Savings state of every node of `b`.
pub fn savings_capitals(b: &BettingStrategy) -> BTreeMap<BitString, SavingsCapital> {
    let mut out = BTreeMap::new();
    let mut stack = vec![(BitString::empty(), &*b.root, SavingsCapital::start())];
    while let Some((path, n, st)) = stack.pop() {
        if let Some(bet) = &n.bet {
            let d = path.len() as i64;
            let c = &n.mass * pow2(d);
            let c0 = &bet.zero.mass * pow2(d + 1);
            let c1 = &bet.one.mass * pow2(d + 1);
            let [s0, s1] = savings_children(&st, &c, &c0, &c1);
            stack.push((path.child(false), &bet.zero, s0));
            stack.push((path.child(true), &bet.one, s1));
        }
        out.insert(path, st);
    }
    out
}

/// Same restrictions and bet positions as `b`, with masses
/// `μ'(s) = (play + bank)·2^{-|s|}`.
pub fn with_savings(b: &BettingStrategy) -> BettingStrategy {
    fn rebuild(n: &TreeNode, depth: i64, st: &SavingsCapital) -> TreeNode {
        let bet = n.bet.as_ref().map(|bet| {
            let c = &n.mass * pow2(depth);
            let c0 = &bet.zero.mass * pow2(depth + 1);
            let c1 = &bet.one.mass * pow2(depth + 1);
            let [s0, s1] = savings_children(st, &c, &c0, &c1);
            Bet {
                position: bet.position,
                zero: Arc::new(rebuild(&bet.zero, depth + 1, &s0)),
                one: Arc::new(rebuild(&bet.one, depth + 1, &s1)),
            }
        });
        TreeNode {
            restriction: n.restriction.clone(),
            mass: st.total() * pow2(-depth),
            bet,
        }
    }
    BettingStrategy {
        root: Arc::new(rebuild(&b.root, 0, &SavingsCapital::start())),
        nodes: b.nodes,
    }
}

/// First node (preorder) where `c(s) < c̄(s) − 2`.
pub fn first_nonconservative(b: &BettingStrategy) -> Option<BitString> {
    let two = int(2);
    b.capital_report()
        .nodes
        .into_iter()
        .find(|(_, e)| e.capital < &e.max_capital - &two)
        .map(|(p, _)| p)
}

pub fn check_conservative(b: &BettingStrategy) -> bool {
    first_nonconservative(b).is_none()
}

/// First node where `2^{c'(s)+2} > c̄(s)` fails, `c'` being the savings capital.
pub fn savings_lowerbound_violation(b: &BettingStrategy) -> Option<BitString> {
    let savings = savings_capitals(b);
    let two = int(2);
    b.capital_report()
        .nodes
        .into_iter()
        .find(|(p, e)| !two_pow_exceeds(&(savings[p].total() + &two), &e.max_capital))
        .map(|(p, _)| p)
}

pub fn check_savings_lowerbound(b: &BettingStrategy) -> bool {
    savings_lowerbound_violation(b).is_none()
}

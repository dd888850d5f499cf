//! Constructive derivation of application conditions: gluing
//! enumeration, post-condition construction, reverse translation through
//! the rule, and categorization of the resulting conditions into
//! unsatisfiable / presumed-redundant / restrictive.
//!
//! Categorization proceeds in two stages. An effect analysis first
//! classifies each gluing by how the rule's edit can create a violation
//! through the overlap: a state-raising rule (activation, inactivation)
//! can only produce new constraint-premise matches through a merged link
//! variable, while a state-dropping or structural rule
//! (unclassification, link removal, weight modification) can only
//! destroy witnesses of inactive links incident to the edited link (the
//! single-node-overlap gluings). A bounded search then corroborates the
//! verdict: restrictive conditions get a concrete weakly consistent
//! counterexample on which they block; presumed-redundant conditions are
//! searched for a *sound* blocking instance (one whose unrestricted
//! replay really violates the constraint) and promoted if one is found,
//! so a misclassification cannot go unnoticed.

use num_rational::Ratio;
use thiserror::Error;

use crate::pattern::{
    Binding, CmpOp, Coeff, GraphPattern, PatternLink, StateMask, VarId, WeightArg, WeightCmp,
    WeightTerm,
};
use crate::rule::{self, AcPolarity, AcRole, ApplicationCondition, RefinedRule, RuleArgs};
use crate::topology::{LinkId, LinkState, ModificationCause, NodeId, Topology};

type Rat = Ratio<i128>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RuleKind {
    Activation,
    Inactivation,
    Unclassification,
    NodeAddition,
    NodeRemoval,
    LinkAddition,
    LinkRemoval,
    WeightModification,
}

impl RuleKind {
    pub const ALL: [RuleKind; 8] = [
        RuleKind::Activation,
        RuleKind::Inactivation,
        RuleKind::Unclassification,
        RuleKind::NodeAddition,
        RuleKind::NodeRemoval,
        RuleKind::LinkAddition,
        RuleKind::LinkRemoval,
        RuleKind::WeightModification,
    ];

    pub fn label(self) -> &'static str {
        match self {
            RuleKind::Activation => "activation",
            RuleKind::Inactivation => "inactivation",
            RuleKind::Unclassification => "unclassification",
            RuleKind::NodeAddition => "node-addition",
            RuleKind::NodeRemoval => "node-removal",
            RuleKind::LinkAddition => "link-addition",
            RuleKind::LinkRemoval => "link-removal",
            RuleKind::WeightModification => "weight-modification",
        }
    }

    pub fn parse(s: &str) -> Option<RuleKind> {
        RuleKind::ALL.into_iter().find(|r| r.label() == s)
    }

    /// The runtime rule object (for replays and dumps).
    pub fn rule(self) -> RefinedRule {
        match self {
            RuleKind::Activation => rule::activation_rule(),
            RuleKind::Inactivation => rule::inactivation_rule(),
            RuleKind::Unclassification => rule::unclassification_rule(),
            RuleKind::NodeAddition => rule::node_addition_rule(),
            RuleKind::NodeRemoval => rule::node_removal_rule(),
            RuleKind::LinkAddition => rule::link_addition_rule(),
            RuleKind::LinkRemoval => rule::link_removal_rule(),
            RuleKind::WeightModification => rule::weight_modification_rule(),
        }
    }

    /// Right-hand side as a pattern: the LHS with the rule's effects
    /// applied symbolically.
    fn rhs_pattern(self) -> GraphPattern {
        match self {
            RuleKind::Activation => tc_link_pattern(StateMask::ACTIVE),
            RuleKind::Inactivation => tc_link_pattern(StateMask::INACTIVE),
            RuleKind::Unclassification => tc_link_pattern(StateMask::UNCLASSIFIED),
            RuleKind::NodeAddition => GraphPattern::new(&["1"]),
            RuleKind::NodeRemoval => GraphPattern::new(&[]),
            RuleKind::LinkAddition | RuleKind::WeightModification => {
                let mut p = tc_link_pattern(StateMask::UNCLASSIFIED);
                p.add_cmp(WeightTerm::link(0), CmpOp::Eq, rule::w_new_term());
                p
            }
            RuleKind::LinkRemoval => GraphPattern::new(&["1", "2"]),
        }
    }

    /// State constraint the LHS puts on the rule's own link.
    fn lhs_state(self) -> Option<StateMask> {
        match self {
            RuleKind::Activation | RuleKind::Inactivation => Some(StateMask::UNCLASSIFIED),
            RuleKind::Unclassification => Some(StateMask::CLASSIFIED),
            RuleKind::WeightModification => Some(StateMask::ANY),
            _ => None,
        }
    }

    fn effect_class(self) -> EffectClass {
        match self {
            RuleKind::Activation | RuleKind::Inactivation => EffectClass::Raise,
            RuleKind::Unclassification | RuleKind::LinkRemoval | RuleKind::WeightModification => EffectClass::Drop,
            RuleKind::LinkAddition | RuleKind::NodeAddition => EffectClass::Create,
            RuleKind::NodeRemoval => EffectClass::Isolated,
        }
    }
}

/// How a rule's edit can interact with the kTC constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EffectClass {
    /// Classifies an unclassified link: new premise matches can only
    /// appear through the edited link itself.
    Raise,
    /// Unclassifies, removes or reweighs a possibly classified link:
    /// witnesses of incident inactive links can be destroyed.
    Drop,
    /// Adds a fresh (unclassified or isolated) element: neither creates
    /// premise matches nor destroys witnesses.
    Create,
    /// Removes an isolated node: cannot touch any match.
    Isolated,
}

fn tc_link_pattern(state: StateMask) -> GraphPattern {
    let mut p = GraphPattern::new(&["1", "2"]);
    p.add_link("12", 0, 1, state);
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintKind {
    InactiveLink,
    ActiveLink,
}

impl ConstraintKind {
    pub const ALL: [ConstraintKind; 2] = [ConstraintKind::InactiveLink, ConstraintKind::ActiveLink];

    pub fn label(self) -> &'static str {
        match self {
            ConstraintKind::InactiveLink => "inactive-link",
            ConstraintKind::ActiveLink => "active-link",
        }
    }

    pub fn parse(s: &str) -> Option<ConstraintKind> {
        ConstraintKind::ALL.into_iter().find(|c| c.label() == s)
    }

    pub fn constraint(self) -> crate::pattern::GraphConstraint {
        match self {
            ConstraintKind::InactiveLink => crate::pattern::inactive_link_constraint(),
            ConstraintKind::ActiveLink => crate::pattern::active_link_constraint(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefineConfig {
    /// The kTC parameter, exact.
    pub k: Rat,
    /// Grid offset straddling the k threshold; defaults to k/10.
    pub epsilon: Rat,
    /// Maximum node count of counterexample candidates.
    pub bound: usize,
}

impl RefineConfig {
    pub fn new(k: Rat) -> RefineConfig {
        RefineConfig { k, epsilon: k / 10, bound: 6 }
    }

    /// Parses a decimal like "1.41" into an exact rational k.
    pub fn from_decimal_k(s: &str) -> Option<RefineConfig> {
        let k = parse_decimal(s)?;
        if k < Rat::from_integer(1) {
            return None;
        }
        Some(RefineConfig::new(k))
    }

    fn k_f64(&self) -> f64 {
        rat_to_f64(self.k)
    }

    /// The canonical weight grid 1, k-eps, k, k+eps, k^2 (deduplicated,
    /// ascending), as f64 for topology instantiation.
    fn grid(&self) -> Vec<f64> {
        let mut vals = vec![
            Rat::from_integer(1),
            self.k - self.epsilon,
            self.k,
            self.k + self.epsilon,
            self.k * self.k,
        ];
        vals.sort();
        vals.dedup();
        vals.into_iter().filter(|v| *v > Rat::from_integer(0)).map(rat_to_f64).collect()
    }
}

pub fn parse_decimal(s: &str) -> Option<Rat> {
    let s = s.trim();
    let (int_part, frac_part) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if frac_part.len() > 12 || frac_part.chars().any(|c| !c.is_ascii_digit()) {
        return None;
    }
    let int: i128 = if int_part.is_empty() { 0 } else { int_part.parse().ok()? };
    let scale = 10_i128.checked_pow(frac_part.len() as u32)?;
    let frac: i128 = if frac_part.is_empty() { 0 } else { frac_part.parse().ok()? };
    Some(Rat::new(int * scale + frac, scale))
}

fn rat_to_f64(r: Rat) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

// ---------------------------------------------------------------------
// Gluings
// ---------------------------------------------------------------------

/// One overlap of a rule's RHS (left) and a constraint premise (right):
/// the glued pattern plus the variable correspondences.
#[derive(Debug, Clone)]
pub struct Gluing {
    /// 1-based position in the canonical enumeration order.
    pub index: usize,
    pub pattern: GraphPattern,
    /// gluing node var of each left node var
    pub left_nodes: Vec<VarId>,
    /// gluing node var of each right node var
    pub right_nodes: Vec<VarId>,
    /// gluing link var of each left link var
    pub left_links: Vec<VarId>,
    /// gluing link var of each right link var
    pub right_links: Vec<VarId>,
    /// gluing link vars merged from a left and a right variable
    pub merged_links: Vec<VarId>,
    /// number of identified node variable pairs
    pub overlap_size: usize,
    /// e.g. "1=a 2=b"
    pub overlap: String,
}

/// All gluings of two patterns: partial injective identifications of
/// left node variables with right node variables (at least one pair),
/// link variables identified exactly when both endpoints are identified
/// pairwise and the directions agree. Canonical order: lexicographic in
/// the left variables' assignments, right variables before "unmatched".
pub fn enumerate_gluings(left: &GraphPattern, right: &GraphPattern) -> Vec<Gluing> {
    let nl = left.node_count();
    let nr = right.node_count();
    let mut assignments: Vec<Vec<Option<usize>>> = Vec::new();
    let mut current: Vec<Option<usize>> = Vec::new();
    fn recurse(nl: usize, nr: usize, current: &mut Vec<Option<usize>>, out: &mut Vec<Vec<Option<usize>>>) {
        if current.len() == nl {
            if current.iter().any(|a| a.is_some()) {
                out.push(current.clone());
            }
            return;
        }
        for choice in (0..nr).map(Some).chain([None]) {
            if choice.is_some() && current.contains(&choice) {
                continue;
            }
            current.push(choice);
            recurse(nl, nr, current, out);
            current.pop();
        }
    }
    recurse(nl, nr, &mut current, &mut assignments);

    assignments
        .into_iter()
        .enumerate()
        .map(|(i, assign)| build_gluing(left, right, &assign, i + 1))
        .collect()
}

fn var_letter(i: usize) -> String {
    let letters = ['A', 'B', 'C', 'D', 'E', 'F', 'G', 'H'];
    letters.get(i).map(|c| c.to_string()).unwrap_or_else(|| format!("V{i}"))
}

fn build_gluing(left: &GraphPattern, right: &GraphPattern, assign: &[Option<usize>], index: usize) -> Gluing {
    let nl = left.node_count();
    let nr = right.node_count();
    let mut pattern = GraphPattern::new(&[]);
    let mut left_nodes = Vec::with_capacity(nl);
    let mut right_nodes = vec![usize::MAX; nr];
    let mut overlap_parts = Vec::new();

    for (l, choice) in assign.iter().enumerate() {
        let name = match choice {
            Some(r) => {
                overlap_parts.push(format!("{}={}", left.node_names[l], right.node_names[*r]));
                format!("{}[{},{}]", var_letter(pattern.node_count()), left.node_names[l], right.node_names[*r])
            }
            None => format!("{}[{},-]", var_letter(pattern.node_count()), left.node_names[l]),
        };
        let v = pattern.add_node(&name);
        left_nodes.push(v);
        if let Some(r) = choice {
            right_nodes[*r] = v;
        }
    }
    for r in 0..nr {
        if right_nodes[r] == usize::MAX {
            let name = format!("{}[-,{}]", var_letter(pattern.node_count()), right.node_names[r]);
            right_nodes[r] = pattern.add_node(&name);
        }
    }

    // left links first, ids unchanged relative to the left pattern
    let mut left_links = Vec::with_capacity(left.links.len());
    for l in &left.links {
        let v = pattern.add_link(&l.name, left_nodes[l.src], left_nodes[l.tgt], l.state);
        left_links.push(v);
    }
    // right links merge onto left links when endpoints and direction agree
    let mut right_links = Vec::with_capacity(right.links.len());
    let mut merged_links = Vec::new();
    for rl in &right.links {
        let src = right_nodes[rl.src];
        let tgt = right_nodes[rl.tgt];
        let existing = pattern.links.iter().position(|pl| pl.src == src && pl.tgt == tgt);
        match existing {
            Some(v) => {
                pattern.links[v].state = pattern.links[v].state.intersect(rl.state);
                pattern.links[v].name = format!("{}|{}", pattern.links[v].name, rl.name);
                right_links.push(v);
                merged_links.push(v);
            }
            None => {
                let v = pattern.add_link(&rl.name, src, tgt, rl.state);
                right_links.push(v);
            }
        }
    }
    // attribute constraints: left as-is (left link ids unchanged), right
    // relabeled
    for c in &left.weight_cmps {
        pattern.weight_cmps.push(*c);
    }
    for c in &right.weight_cmps {
        pattern.weight_cmps.push(remap_cmp(c, &right_links));
    }
    Gluing {
        index,
        pattern,
        left_nodes,
        right_nodes,
        left_links,
        right_links,
        merged_links,
        overlap_size: assign.iter().filter(|a| a.is_some()).count(),
        overlap: overlap_parts.join(" "),
    }
}

fn remap_arg(arg: WeightArg, map: &[VarId]) -> WeightArg {
    match arg {
        WeightArg::Link(v) => WeightArg::Link(map[v]),
        WeightArg::MinOf(a, b) => WeightArg::MinOf(map[a], map[b]),
        WeightArg::MaxOf(a, b) => WeightArg::MaxOf(map[a], map[b]),
        other => other,
    }
}

fn remap_cmp(c: &WeightCmp, map: &[VarId]) -> WeightCmp {
    WeightCmp {
        lhs: WeightTerm { coeff: c.lhs.coeff, arg: remap_arg(c.lhs.arg, map) },
        op: c.op,
        rhs: WeightTerm { coeff: c.rhs.coeff, arg: remap_arg(c.rhs.arg, map) },
    }
}

// ---------------------------------------------------------------------
// Satisfiability
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnsatReason {
    StateConflict,
    LoopVar,
    ParallelVars,
    WeightInfeasible,
}

/// Decides whether some topology contains a match of `p`: link state
/// masks must be non-empty, the structure must respect no-loops and
/// no-parallel-links, and the weight constraints (min/max expanded by
/// case split, then exact rational Fourier-Motzkin elimination) must be
/// feasible together with positivity of all weights.
pub fn is_satisfiable(p: &GraphPattern, cfg: &RefineConfig) -> Result<(), UnsatReason> {
    if p.links.iter().any(|l| l.state.is_empty()) {
        return Err(UnsatReason::StateConflict);
    }
    if p.has_loop_var() {
        return Err(UnsatReason::LoopVar);
    }
    if p.has_parallel_link_vars() {
        return Err(UnsatReason::ParallelVars);
    }
    if weights_feasible(p, cfg) {
        Ok(())
    } else {
        Err(UnsatReason::WeightInfeasible)
    }
}

/// Linear inequality sum(coefs[i] * x_i) + constant (<|<=) 0.
#[derive(Debug, Clone)]
struct LinIneq {
    coefs: Vec<Rat>,
    constant: Rat,
    strict: bool,
}

fn weights_feasible(p: &GraphPattern, cfg: &RefineConfig) -> bool {
    // variables: one per link var plus one for the w_new parameter
    let nvars = p.links.len() + 1;
    let param = p.links.len();

    // enumerate min/max case splits
    let mut split_sites = Vec::new();
    for (ci, c) in p.weight_cmps.iter().enumerate() {
        for (side, term) in [(0usize, &c.lhs), (1usize, &c.rhs)] {
            if matches!(term.arg, WeightArg::MinOf(..) | WeightArg::MaxOf(..)) {
                split_sites.push((ci, side));
            }
        }
    }
    for branch in 0..(1usize << split_sites.len()) {
        let mut ineqs: Vec<LinIneq> = Vec::new();
        for v in 0..nvars {
            // weights are positive
            let mut coefs = vec![Rat::from_integer(0); nvars];
            coefs[v] = Rat::from_integer(-1);
            ineqs.push(LinIneq { coefs, constant: Rat::from_integer(0), strict: true });
        }
        let resolve = |ci: usize, side: usize, term: &WeightTerm, ineqs: &mut Vec<LinIneq>| {
            // term value = coef * x_var + constant
            let k = match term.coeff {
                Coeff::One => Rat::from_integer(1),
                Coeff::K => cfg.k,
            };
            match term.arg {
                WeightArg::Link(v) => (k, Some(v), Rat::from_integer(0)),
                WeightArg::Const(c) => (Rat::from_integer(0), None, k * f64_to_rat(c)),
                WeightArg::NewWeightParam => (k, Some(param), Rat::from_integer(0)),
                WeightArg::MinOf(x, y) | WeightArg::MaxOf(x, y) => {
                    let site = split_sites.iter().position(|s| *s == (ci, side)).unwrap();
                    let pick_first = branch & (1 << site) == 0;
                    let is_min = matches!(term.arg, WeightArg::MinOf(..));
                    let (chosen, other) = if pick_first { (x, y) } else { (y, x) };
                    // side condition: chosen <= other for min, >= for max
                    let mut coefs = vec![Rat::from_integer(0); nvars];
                    if is_min {
                        coefs[chosen] += Rat::from_integer(1);
                        coefs[other] -= Rat::from_integer(1);
                    } else {
                        coefs[chosen] -= Rat::from_integer(1);
                        coefs[other] += Rat::from_integer(1);
                    }
                    ineqs.push(LinIneq { coefs, constant: Rat::from_integer(0), strict: false });
                    (k, Some(chosen), Rat::from_integer(0))
                }
            }
        };
        for (ci, c) in p.weight_cmps.iter().enumerate() {
            let (lc, lv, lk) = resolve(ci, 0, &c.lhs, &mut ineqs);
            let (rc, rv, rk) = resolve(ci, 1, &c.rhs, &mut ineqs);
            let mut base = vec![Rat::from_integer(0); nvars];
            if let Some(v) = lv {
                base[v] += lc;
            }
            if let Some(v) = rv {
                base[v] -= rc;
            }
            let constant = lk - rk;
            let neg = |coefs: &[Rat]| coefs.iter().map(|c| -c).collect::<Vec<_>>();
            match c.op {
                CmpOp::Lt => ineqs.push(LinIneq { coefs: base, constant, strict: true }),
                CmpOp::Le => ineqs.push(LinIneq { coefs: base, constant, strict: false }),
                CmpOp::Gt => ineqs.push(LinIneq { coefs: neg(&base), constant: -constant, strict: true }),
                CmpOp::Ge => ineqs.push(LinIneq { coefs: neg(&base), constant: -constant, strict: false }),
                CmpOp::Eq => {
                    ineqs.push(LinIneq { coefs: base.clone(), constant, strict: false });
                    ineqs.push(LinIneq { coefs: neg(&base), constant: -constant, strict: false });
                }
            }
        }
        if fourier_motzkin_feasible(ineqs, nvars) {
            return true;
        }
    }
    false
}

fn f64_to_rat(v: f64) -> Rat {
    // pattern constants come from config decimals; scaled rounding is
    // exact for them
    let scaled = (v * 1e9).round() as i128;
    Rat::new(scaled, 1_000_000_000)
}

fn fourier_motzkin_feasible(mut ineqs: Vec<LinIneq>, nvars: usize) -> bool {
    let zero = Rat::from_integer(0);
    for v in 0..nvars {
        let mut lowers: Vec<LinIneq> = Vec::new();
        let mut uppers: Vec<LinIneq> = Vec::new();
        let mut rest: Vec<LinIneq> = Vec::new();
        for ineq in ineqs {
            let c = ineq.coefs[v];
            if c > zero {
                uppers.push(ineq);
            } else if c < zero {
                lowers.push(ineq);
            } else {
                rest.push(ineq);
            }
        }
        for lo in &lowers {
            for up in &uppers {
                let cl = -lo.coefs[v];
                let cu = up.coefs[v];
                let mut coefs = vec![zero; nvars];
                for i in 0..nvars {
                    coefs[i] = lo.coefs[i] * cu + up.coefs[i] * cl;
                }
                let constant = lo.constant * cu + up.constant * cl;
                rest.push(LinIneq { coefs, constant, strict: lo.strict || up.strict });
            }
        }
        ineqs = rest;
    }
    ineqs.iter().all(|ineq| if ineq.strict { ineq.constant < zero } else { ineq.constant <= zero })
}

// ---------------------------------------------------------------------
// Post-conditions
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneReason {
    StateConflict,
    LoopVar,
    ParallelVars,
    /// The merged witness collapses onto a node pair already occupied in
    /// the premise (either direction); with at most one link per pair it
    /// would have to reuse the rule's own link.
    PairCollision,
    WeightInfeasible,
}

#[derive(Debug, Clone)]
pub struct ConclusionInfo {
    pub pattern: GraphPattern,
    /// None: the basic conclusion; Some(v): gluing node var the
    /// conclusion-only variable was merged into.
    pub merged_into: Option<VarId>,
    /// Pruning verdict on the post-condition pattern (reported); the
    /// reverse translation re-evaluates pruning on the translated
    /// patterns.
    pub pruned: Option<PruneReason>,
}

/// Premise (the gluing) plus basic and reduced conclusion patterns.
#[derive(Debug, Clone)]
pub struct PostCondition {
    pub gluing: Gluing,
    pub conclusions: Vec<ConclusionInfo>,
}

/// Steps 1-3 of the refinement procedure for one rule x constraint pair:
/// every gluing of the rule's RHS with the constraint premise becomes a
/// post-condition; positive constraints contribute a basic conclusion
/// (the constraint-conclusion remainder around the gluing) and all
/// merge-reduced variants, with unsatisfiable or pair-colliding
/// reductions marked as pruned.
pub fn derive_postconditions(rule: RuleKind, constraint: ConstraintKind, cfg: &RefineConfig) -> Vec<PostCondition> {
    let rhs = rule.rhs_pattern();
    let c = constraint.constraint();
    enumerate_gluings(&rhs, &c.premise)
        .into_iter()
        .map(|gluing| {
            let conclusions = c
                .conclusions
                .iter()
                .flat_map(|concl| build_conclusions(&gluing, &c.premise, concl, cfg))
                .collect();
            PostCondition { gluing, conclusions }
        })
        .collect()
}

fn build_conclusions(
    gluing: &Gluing,
    premise: &GraphPattern,
    conclusion: &GraphPattern,
    cfg: &RefineConfig,
) -> Vec<ConclusionInfo> {
    let np = premise.node_count();
    let lp = premise.links.len();
    let new_nodes: Vec<usize> = (np..conclusion.node_count()).collect();

    // basic conclusion: append the remainder with fresh variables
    let mut basic = gluing.pattern.clone();
    let mut node_map = gluing.right_nodes.clone();
    for &cv in &new_nodes {
        let name = format!("{}[+{}]", var_letter(basic.node_count()), conclusion.node_names[cv]);
        node_map.push(basic.add_node(&name));
    }
    let mut link_map = gluing.right_links.clone();
    for l in &conclusion.links[lp..] {
        let v = basic.add_link(&l.name, node_map[l.src], node_map[l.tgt], l.state);
        link_map.push(v);
    }
    for c in &conclusion.weight_cmps[premise.weight_cmps.len()..] {
        basic.weight_cmps.push(remap_cmp(c, &link_map));
    }

    let mut out = vec![ConclusionInfo { pattern: basic.clone(), merged_into: None, pruned: None }];

    // reduced conclusions: merge each conclusion-only node variable into
    // each premise variable (the in-scope constraints add exactly one)
    if new_nodes.len() == 1 {
        let d = node_map[new_nodes[0]];
        for target in 0..gluing.pattern.node_count() {
            let reduced = merge_node_vars(&basic, d, target);
            let pruned = prune_reason(&reduced, gluing.pattern.links.len(), cfg);
            out.push(ConclusionInfo { pattern: reduced, merged_into: Some(target), pruned });
        }
    } else {
        assert!(new_nodes.is_empty(), "constraint conclusions with several fresh variables are out of scope");
    }
    out
}

/// Merges node var `from` into `to`; `from` must be the last var.
fn merge_node_vars(p: &GraphPattern, from: VarId, to: VarId) -> GraphPattern {
    assert_eq!(from, p.node_count() - 1);
    let mut out = GraphPattern::new(&[]);
    for (i, name) in p.node_names.iter().enumerate().take(from) {
        let name = if i == to { format!("{name}*") } else { name.clone() };
        out.add_node(&name);
    }
    let remap = |v: VarId| if v == from { to } else { v };
    for l in &p.links {
        out.add_link(&l.name, remap(l.src), remap(l.tgt), l.state);
    }
    out.weight_cmps = p.weight_cmps.clone();
    out
}

fn prune_reason(p: &GraphPattern, premise_link_count: usize, cfg: &RefineConfig) -> Option<PruneReason> {
    match is_satisfiable(p, cfg) {
        Err(UnsatReason::StateConflict) => return Some(PruneReason::StateConflict),
        Err(UnsatReason::LoopVar) => return Some(PruneReason::LoopVar),
        Err(UnsatReason::ParallelVars) => return Some(PruneReason::ParallelVars),
        Err(UnsatReason::WeightInfeasible) => return Some(PruneReason::WeightInfeasible),
        Ok(()) => {}
    }
    for (i, a) in p.links.iter().enumerate() {
        for (j, b) in p.links.iter().enumerate() {
            if i < j
                && (i >= premise_link_count || j >= premise_link_count)
                && a.src == b.tgt
                && a.tgt == b.src
            {
                return Some(PruneReason::PairCollision);
            }
        }
    }
    None
}

// ---------------------------------------------------------------------
// Reverse translation
// ---------------------------------------------------------------------

/// Step 4: translates a post-condition into an application condition by
/// applying the rule in reverse: state constraints the rule assigns are
/// replaced by the LHS's, weight constraints on reassigned weights are
/// dropped, elements the rule created are removed, elements it deleted
/// are re-added. Conclusion patterns are pruned *after* translation, so
/// a collision with an element the rule deleted disappears with it.
pub fn reverse_translate(rule: RuleKind, constraint: ConstraintKind, post: &PostCondition, cfg: &RefineConfig) -> ApplicationCondition {
    let mut premise = post.gluing.pattern.clone();
    let mut conclusions: Vec<GraphPattern> =
        post.conclusions.iter().map(|c| c.pattern.clone()).collect();

    match rule {
        RuleKind::Activation | RuleKind::Inactivation | RuleKind::Unclassification | RuleKind::WeightModification => {
            let anchor = post.gluing.left_links[0];
            let lhs_state = rule.lhs_state().unwrap();
            for p in std::iter::once(&mut premise).chain(conclusions.iter_mut()) {
                p.links[anchor].state = lhs_state;
                if rule == RuleKind::WeightModification {
                    // the post-state weight w(12) = w_new is unobservable
                    // before the application
                    p.weight_cmps.retain(|c| {
                        !c.link_vars().contains(&anchor)
                            && !term_uses_param(&c.lhs)
                            && !term_uses_param(&c.rhs)
                    });
                }
            }
        }
        RuleKind::LinkRemoval => {
            // re-add the deleted link with the LHS's (unconstrained) state
            let src = post.gluing.left_nodes[0];
            let tgt = post.gluing.left_nodes[1];
            let at = premise.links.len();
            for p in std::iter::once(&mut premise).chain(conclusions.iter_mut()) {
                insert_link_var(p, at, PatternLink { name: "12".into(), src, tgt, state: StateMask::ANY });
            }
        }
        RuleKind::LinkAddition => {
            let created = post.gluing.left_links[0];
            for p in std::iter::once(&mut premise).chain(conclusions.iter_mut()) {
                remove_link_var(p, created);
            }
        }
        RuleKind::NodeAddition => {
            // the created node is fresh and isolated after the rule, so
            // any premise around it is unmatchable; the mechanical
            // translation still removes the variable for the dump
            let created = post.gluing.left_nodes[0];
            for p in std::iter::once(&mut premise).chain(conclusions.iter_mut()) {
                remove_node_var(p, created);
            }
        }
        RuleKind::NodeRemoval => unreachable!("empty RHS produces no gluings"),
    }

    let premise_links = premise.links.len();
    let conclusions: Vec<GraphPattern> = conclusions
        .into_iter()
        .filter(|c| prune_reason(c, premise_links, cfg).is_none())
        .collect();

    let polarity = match constraint.constraint().polarity {
        crate::pattern::Polarity::Positive => AcPolarity::Pac,
        crate::pattern::Polarity::Negative => AcPolarity::Nac,
    };
    ApplicationCondition {
        name: format!("{}-{}-g{}", rule.label(), constraint.label(), post.gluing.index),
        polarity,
        role: AcRole::Handled,
        premise,
        conclusions,
    }
}

fn term_uses_param(t: &WeightTerm) -> bool {
    matches!(t.arg, WeightArg::NewWeightParam)
}

fn insert_link_var(p: &mut GraphPattern, at: usize, link: PatternLink) {
    p.links.insert(at, link);
    let remap = |v: VarId| if v >= at { v + 1 } else { v };
    for c in &mut p.weight_cmps {
        c.lhs.arg = remap_arg_with(c.lhs.arg, &remap);
        c.rhs.arg = remap_arg_with(c.rhs.arg, &remap);
    }
}

fn remove_link_var(p: &mut GraphPattern, at: usize) {
    p.links.remove(at);
    p.weight_cmps
        .retain(|c| !c.link_vars().contains(&at) && !term_uses_param(&c.lhs) && !term_uses_param(&c.rhs));
    let remap = |v: VarId| if v > at { v - 1 } else { v };
    for c in &mut p.weight_cmps {
        c.lhs.arg = remap_arg_with(c.lhs.arg, &remap);
        c.rhs.arg = remap_arg_with(c.rhs.arg, &remap);
    }
}

fn remove_node_var(p: &mut GraphPattern, at: usize) {
    let incident: Vec<usize> = p
        .links
        .iter()
        .enumerate()
        .filter(|(_, l)| l.src == at || l.tgt == at)
        .map(|(i, _)| i)
        .collect();
    for i in incident.into_iter().rev() {
        remove_link_var(p, i);
    }
    p.node_names.remove(at);
    for l in &mut p.links {
        if l.src > at {
            l.src -= 1;
        }
        if l.tgt > at {
            l.tgt -= 1;
        }
    }
}

fn remap_arg_with(arg: WeightArg, f: &impl Fn(VarId) -> VarId) -> WeightArg {
    match arg {
        WeightArg::Link(v) => WeightArg::Link(f(v)),
        WeightArg::MinOf(a, b) => WeightArg::MinOf(f(a), f(b)),
        WeightArg::MaxOf(a, b) => WeightArg::MaxOf(f(a), f(b)),
        other => other,
    }
}

// ---------------------------------------------------------------------
// Categorization
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Unsatisfiable,
    PresumedRedundant,
    Restrictive,
}

impl Category {
    pub fn label(self) -> &'static str {
        match self {
            Category::Unsatisfiable => "unsatisfiable",
            Category::PresumedRedundant => "presumed-redundant",
            Category::Restrictive => "restrictive",
        }
    }
}

/// A counterexample: a weakly consistent topology and a binding of the
/// rule at which the condition blocks the application.
#[derive(Debug, Clone)]
pub struct CounterExample {
    pub topology: Topology,
    pub binding_nodes: Vec<NodeId>,
    pub binding_link: Option<LinkId>,
    pub w_new: f64,
}

#[derive(Debug, Clone)]
pub struct DerivedCondition {
    pub rule: RuleKind,
    pub constraint: ConstraintKind,
    pub gluing_index: usize,
    pub overlap: String,
    pub condition: ApplicationCondition,
    pub post: PostCondition,
    pub category: Category,
    pub gluing_unsat: Option<UnsatReason>,
    pub counterexample: Option<CounterExample>,
    pub search_bound: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum RefineError {
    #[error("search bound {bound} is smaller than the premise node count {need}")]
    BoundTooSmall { bound: usize, need: usize },
}

/// Whether the rule's edit can create a violation of the constraint
/// through this particular overlap: a state raise creates premise
/// matches only through the merged link variable; a state drop destroys
/// witnesses only of inactive links hanging off exactly one shared node.
fn edit_can_violate(rule: RuleKind, constraint: ConstraintKind, gluing: &Gluing) -> bool {
    let anchor_merged = gluing
        .left_links
        .first()
        .map(|v| gluing.merged_links.contains(v))
        .unwrap_or(false);
    match rule.effect_class() {
        EffectClass::Raise => anchor_merged,
        EffectClass::Drop => constraint == ConstraintKind::InactiveLink && gluing.overlap_size == 1,
        EffectClass::Create | EffectClass::Isolated => false,
    }
}

/// Categorizes one derived condition. Unsatisfiable gluings are decided
/// by their attribute constraints alone. For the rest, the effect
/// analysis picks the expected category and the bounded search
/// corroborates it: restrictive conditions must block on some weakly
/// consistent candidate (recorded); presumed-redundant conditions must
/// admit no candidate on which they block *and* the unrestricted replay
/// violates the constraint (otherwise they are promoted to restrictive).
pub fn categorize(
    rule: RuleKind,
    constraint: ConstraintKind,
    post: &PostCondition,
    cfg: &RefineConfig,
) -> Result<DerivedCondition, RefineError> {
    let condition = reverse_translate(rule, constraint, post, cfg);
    let need = condition.premise.node_count();
    if cfg.bound < need {
        return Err(RefineError::BoundTooSmall { bound: cfg.bound, need });
    }
    let gluing_unsat = is_satisfiable(&post.gluing.pattern, cfg).err();
    let image = right_link_image(rule, post);
    let (category, counterexample) = if gluing_unsat.is_some() {
        (Category::Unsatisfiable, None)
    } else if edit_can_violate(rule, constraint, &post.gluing) {
        match search_blocking(rule, constraint, &condition, &image, cfg, false) {
            Some(cex) => (Category::Restrictive, Some(cex)),
            // the effect analysis says the condition restricts, but no
            // candidate in the bound blocks: report it honestly
            None => (Category::PresumedRedundant, None),
        }
    } else {
        // sound-blocking search: promote only when blocking really loses
        // the constraint at this gluing's own premise image
        match search_blocking(rule, constraint, &condition, &image, cfg, true) {
            Some(cex) => (Category::Restrictive, Some(cex)),
            None => (Category::PresumedRedundant, None),
        }
    };
    Ok(DerivedCondition {
        rule,
        constraint,
        gluing_index: post.gluing.index,
        overlap: post.gluing.overlap.clone(),
        condition,
        post: post.clone(),
        category,
        gluing_unsat,
        counterexample,
        search_bound: cfg.bound,
    })
}

/// Runs the full refinement procedure for one rule x constraint pair.
pub fn refine_pair(
    rule: RuleKind,
    constraint: ConstraintKind,
    cfg: &RefineConfig,
) -> Result<Vec<DerivedCondition>, RefineError> {
    derive_postconditions(rule, constraint, cfg)
        .iter()
        .map(|post| categorize(rule, constraint, post, cfg))
        .collect()
}

/// Where the constraint premise's link variables live in the translated
/// condition premise (None when the rule deleted the variable).
fn right_link_image(rule: RuleKind, post: &PostCondition) -> Vec<Option<VarId>> {
    match rule {
        // reverse translation keeps the gluing's link indexing (link
        // removal appends the re-added variable at the end)
        RuleKind::Activation
        | RuleKind::Inactivation
        | RuleKind::Unclassification
        | RuleKind::WeightModification
        | RuleKind::LinkRemoval
        | RuleKind::NodeRemoval => post.gluing.right_links.iter().map(|v| Some(*v)).collect(),
        RuleKind::LinkAddition => {
            let created = post.gluing.left_links[0];
            post.gluing
                .right_links
                .iter()
                .map(|&v| if v == created { None } else { Some(if v > created { v - 1 } else { v }) })
                .collect()
        }
        RuleKind::NodeAddition => post.gluing.right_links.iter().map(|_| None).collect(),
    }
}

/// After an unrestricted replay of the rule on a blocking candidate, is
/// the constraint violated at this gluing's own premise image? This is
/// what makes a blocking instance *sound* for the condition: a violation
/// created elsewhere (for instance at the edited link itself) belongs to
/// a different gluing.
fn violated_at_image(
    constraint: ConstraintKind,
    after: &Topology,
    image_links: &[LinkId],
    k: f64,
) -> bool {
    match constraint {
        ConstraintKind::InactiveLink => {
            let Some(&g) = image_links.first() else { return false };
            let Some(link) = after.link(g) else { return false };
            link.state == LinkState::Inactive && !has_witness_direct(after, link, k)
        }
        ConstraintKind::ActiveLink => {
            // premise = the whole triangle; a surviving image match is a
            // violation of the negative constraint
            if image_links.len() != 3 {
                return false;
            }
            let Some(ab) = after.link(image_links[0]) else { return false };
            let Some(ac) = after.link(image_links[1]) else { return false };
            let Some(cb) = after.link(image_links[2]) else { return false };
            ab.state == LinkState::Active
                && ac.state.is_classified()
                && cb.state.is_classified()
                && ab.weight > ac.weight.max(cb.weight)
                && ab.weight >= k * ac.weight.min(cb.weight)
        }
    }
}

fn has_witness_direct(t: &Topology, g: &crate::topology::Link, k: f64) -> bool {
    for side_a in t.out_links(g.src) {
        if side_a.id == g.id || !side_a.state.is_classified() {
            continue;
        }
        let Some(side_b_id) = t.link_between(side_a.tgt, g.tgt) else { continue };
        let side_b = t.link(side_b_id).unwrap();
        if !side_b.state.is_classified() {
            continue;
        }
        let lo = side_a.weight.min(side_b.weight);
        let hi = side_a.weight.max(side_b.weight);
        if g.weight > hi && g.weight >= k * lo {
            return true;
        }
    }
    false
}

/// Early-exit weak consistency: structure is valid by construction of
/// `Topology`, so this checks the two kTC constraints directly plus the
/// conditional weak-connectivity membership.
fn weakly_consistent_fast(t: &Topology, k: f64) -> bool {
    for link in t.links() {
        match link.state {
            LinkState::Inactive => {
                if !has_witness_direct(t, link, k) {
                    return false;
                }
            }
            LinkState::Active => {
                if has_witness_direct(t, link, k) {
                    return false;
                }
            }
            LinkState::Unclassified => {}
        }
    }
    use crate::pattern::{connectivity, ConnectivityLevel};
    if connectivity(t, ConnectivityLevel::Physical) && !connectivity(t, ConnectivityLevel::Weak) {
        return false;
    }
    true
}

/// Candidate-driven search for a weakly consistent topology on which the
/// condition blocks an otherwise applicable rule. Candidates instantiate
/// the condition premise over the canonical weight grid and all
/// admissible state choices, extended by witness completions (through a
/// fresh node or through existing nodes) for every inactive link that
/// needs one. With `sound` set, a blocking candidate only counts when
/// replaying the rule without its conditions actually violates the
/// constraint.
fn search_blocking(
    rule: RuleKind,
    constraint: ConstraintKind,
    ac: &ApplicationCondition,
    image: &[Option<VarId>],
    cfg: &RefineConfig,
    sound: bool,
) -> Option<CounterExample> {
    let premise = &ac.premise;
    if premise.has_loop_var() || premise.has_parallel_link_vars() {
        return None; // premise can never match: the condition never blocks
    }
    if rule == RuleKind::NodeAddition {
        // the created node is isolated post-application; premises that
        // wire it to links can never match, and without it the condition
        // does not mention the rule at all
        return None;
    }
    let grid = cfg.grid();
    let k = cfg.k_f64();

    let state_choices: Vec<Vec<LinkState>> = premise.links.iter().map(|l| l.state.states()).collect();

    let mut states = vec![0usize; state_choices.len()];
    loop {
        let state_assign: Vec<LinkState> =
            states.iter().enumerate().map(|(i, &j)| state_choices[i][j]).collect();
        let mut weights = vec![0usize; premise.links.len()];
        loop {
            let weight_assign: Vec<f64> = weights.iter().map(|&j| grid[j]).collect();
            if premise_cmps_hold(premise, &weight_assign, k) {
                if let Some(cex) =
                    try_candidate(rule, constraint, ac, image, &state_assign, &weight_assign, cfg, k, sound)
                {
                    return Some(cex);
                }
            }
            if !bump(&mut weights, grid.len()) {
                break;
            }
        }
        if !advance_mixed(&mut states, &state_choices) {
            break;
        }
    }
    None
}

fn bump(idx: &mut [usize], base: usize) -> bool {
    for i in (0..idx.len()).rev() {
        idx[i] += 1;
        if idx[i] < base {
            return true;
        }
        idx[i] = 0;
    }
    false
}

fn advance_mixed(idx: &mut [usize], choices: &[Vec<LinkState>]) -> bool {
    for i in (0..idx.len()).rev() {
        idx[i] += 1;
        if idx[i] < choices[i].len() {
            return true;
        }
        idx[i] = 0;
    }
    false
}

fn premise_cmps_hold(p: &GraphPattern, weights: &[f64], k: f64) -> bool {
    p.weight_cmps.iter().all(|c| {
        let lhs = eval_term_f64(&c.lhs, weights, k);
        let rhs = eval_term_f64(&c.rhs, weights, k);
        c.op.holds(lhs, rhs)
    })
}

fn eval_term_f64(term: &WeightTerm, weights: &[f64], k: f64) -> f64 {
    let base = match term.arg {
        WeightArg::Link(v) => weights[v],
        WeightArg::MinOf(a, b) => weights[a].min(weights[b]),
        WeightArg::MaxOf(a, b) => weights[a].max(weights[b]),
        WeightArg::Const(c) => c,
        WeightArg::NewWeightParam => 1.0,
    };
    match term.coeff {
        Coeff::One => base,
        Coeff::K => k * base,
    }
}

#[allow(clippy::too_many_arguments)]
fn try_candidate(
    rule: RuleKind,
    constraint: ConstraintKind,
    ac: &ApplicationCondition,
    image: &[Option<VarId>],
    states: &[LinkState],
    weights: &[f64],
    cfg: &RefineConfig,
    k: f64,
    sound: bool,
) -> Option<CounterExample> {
    // base topology: one node per premise node var, one link per link var
    let mut base = Topology::new();
    let nodes: Vec<NodeId> = (0..ac.premise.node_count()).map(|_| base.add_node()).collect();
    let mut links = Vec::new();
    for (i, l) in ac.premise.links.iter().enumerate() {
        let id = base.add_link(nodes[l.src], nodes[l.tgt], weights[i]).ok()?;
        base.set_state(id, states[i], ModificationCause::TcInvocation).ok()?;
        links.push(id);
    }

    // witness completions for inactive premise links
    let needy: Vec<LinkId> = base
        .links()
        .filter(|l| l.state == LinkState::Inactive && !has_witness_direct(&base, l, k))
        .map(|l| l.id)
        .collect();
    for completion in completion_sets(&base, &needy, k, cfg.bound) {
        let mut t = base.clone();
        let mut ok = true;
        for (src, tgt, w) in completion {
            let (src, tgt) = (resolve_node(&mut t, src), resolve_node(&mut t, tgt));
            match t.add_link(src, tgt, w) {
                Ok(id) => {
                    t.set_state(id, LinkState::Active, ModificationCause::TcInvocation).unwrap();
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok || t.node_count() > cfg.bound {
            continue;
        }
        if !weakly_consistent_fast(&t, k) {
            continue;
        }
        if let Some(cex) = blocked_at(rule, ac, &t, &nodes, &links, k) {
            if !sound {
                return Some(cex);
            }
            let after = replay_unrestricted(rule, &cex, k);
            let image_links: Vec<LinkId> = image.iter().filter_map(|v| v.map(|v| links[v])).collect();
            if image_links.len() == image.len() && violated_at_image(constraint, &after, &image_links, k) {
                return Some(cex);
            }
        }
    }
    None
}

/// Node slot in a completion: an existing node or the shared fresh node.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Existing(NodeId),
    Fresh,
}

fn resolve_node(t: &mut Topology, slot: Slot) -> NodeId {
    match slot {
        Slot::Existing(n) => n,
        Slot::Fresh => {
            let want = NodeId(1000);
            if !t.has_node(want) {
                t.insert_node(want).unwrap();
            }
            want
        }
    }
}

/// Witness completions: for each inactive link lacking a witness, a
/// witness node (each existing node, or one fresh node) and the two
/// sides added as active links of weight 1 where absent. Side reuse
/// keeps existing links when they are classified and the weight
/// condition holds.
fn completion_sets(base: &Topology, needy: &[LinkId], k: f64, bound: usize) -> Vec<Vec<(Slot, Slot, f64)>> {
    if needy.is_empty() {
        return vec![vec![]];
    }
    let mut per_link: Vec<Vec<Vec<(Slot, Slot, f64)>>> = Vec::new();
    for &g in needy {
        let link = base.link(g).unwrap();
        let mut options: Vec<Vec<(Slot, Slot, f64)>> = Vec::new();
        let mut candidates: Vec<Slot> = base
            .node_ids()
            .filter(|n| *n != link.src && *n != link.tgt)
            .map(Slot::Existing)
            .collect();
        if base.node_count() < bound {
            candidates.push(Slot::Fresh);
        }
        for c in candidates {
            let mut adds = Vec::new();
            let mut side_weights = Vec::new();
            let mut feasible = true;
            for (s, t2) in [(Slot::Existing(link.src), c), (c, Slot::Existing(link.tgt))] {
                match (s, t2) {
                    (Slot::Existing(a), Slot::Existing(b)) => {
                        if let Some(existing) = base.link_between(a, b) {
                            let l = base.link(existing).unwrap();
                            if !l.state.is_classified() {
                                feasible = false;
                                break;
                            }
                            side_weights.push(l.weight);
                        } else {
                            adds.push((Slot::Existing(a), Slot::Existing(b), 1.0));
                            side_weights.push(1.0);
                        }
                    }
                    (a, b) => {
                        adds.push((a, b, 1.0));
                        side_weights.push(1.0);
                    }
                }
            }
            if !feasible {
                continue;
            }
            let lo = side_weights[0].min(side_weights[1]);
            let hi = side_weights[0].max(side_weights[1]);
            if link.weight > hi && link.weight >= k * lo {
                options.push(adds);
            }
        }
        if options.is_empty() {
            return vec![]; // this inactive link cannot be witnessed within the bound
        }
        per_link.push(options);
    }
    let mut out: Vec<Vec<(Slot, Slot, f64)>> = vec![vec![]];
    for options in per_link {
        let mut next = Vec::new();
        for prefix in &out {
            for opt in &options {
                let mut combined = prefix.clone();
                combined.extend(opt.iter().copied());
                next.push(combined);
            }
        }
        out = next;
    }
    out
}

/// Evaluates applicability (LHS + built-in structural guards) and the
/// condition at the canonical binding; a violated condition on an
/// otherwise applicable rule yields the counterexample.
fn blocked_at(
    rule: RuleKind,
    ac: &ApplicationCondition,
    t: &Topology,
    nodes: &[NodeId],
    links: &[LinkId],
    k: f64,
) -> Option<CounterExample> {
    let (binding, anchor_link) = match rule {
        RuleKind::Activation
        | RuleKind::Inactivation
        | RuleKind::Unclassification
        | RuleKind::WeightModification
        | RuleKind::LinkRemoval => {
            let anchor = anchor_link_var(rule, ac)?;
            let e = links[anchor];
            let link = t.link(e)?;
            (Binding { nodes: vec![(0, link.src), (1, link.tgt)], links: vec![(anchor, e)] }, Some(e))
        }
        RuleKind::LinkAddition => {
            if t.link_between(nodes[0], nodes[1]).is_some() {
                return None; // the rule's structural NAC blocks here anyway
            }
            (Binding { nodes: vec![(0, nodes[0]), (1, nodes[1])], links: vec![] }, None)
        }
        RuleKind::NodeAddition | RuleKind::NodeRemoval => return None,
    };

    let premise_matches = crate::pattern::find_matches(t, &ac.premise, k, &binding);
    let violated = match ac.polarity {
        AcPolarity::Nac => !premise_matches.is_empty(),
        AcPolarity::Pac => premise_matches
            .iter()
            .any(|m| !ac.conclusions.iter().any(|c| crate::pattern::extends(t, c, k, m))),
    };
    if !violated {
        return None;
    }
    Some(CounterExample {
        topology: t.clone(),
        binding_nodes: vec![nodes[0], nodes[1]],
        binding_link: anchor_link,
        w_new: 1.0,
    })
}

/// Premise link var playing the rule's own link: the gluing image of the
/// RHS link (var 0 by construction) for the state/weight rules, the
/// re-added unconstrained `1->2` var for link removal.
fn anchor_link_var(rule: RuleKind, ac: &ApplicationCondition) -> Option<VarId> {
    match rule {
        RuleKind::Activation | RuleKind::Inactivation | RuleKind::Unclassification | RuleKind::WeightModification => {
            Some(0)
        }
        RuleKind::LinkRemoval => ac
            .premise
            .links
            .iter()
            .position(|l| l.src == 0 && l.tgt == 1 && l.state == StateMask::ANY),
        _ => None,
    }
}

/// Replays a counterexample without the derived conditions: applies the
/// rule's effects at the recorded binding. Used by the soundness checks.
pub fn replay_unrestricted(rule: RuleKind, cex: &CounterExample, k: f64) -> Topology {
    let mut t = cex.topology.clone();
    let mut r = rule.rule();
    r.conditions.clear();
    let binding = match cex.binding_link {
        Some(e) => {
            let link = t.link(e).unwrap().clone();
            Binding::for_link(&r.lhs, 0, &link)
        }
        None => {
            let mut b = Binding::default();
            for (v, n) in cex.binding_nodes.iter().enumerate().take(r.lhs.node_count()) {
                b.nodes.push((v, *n));
            }
            b
        }
    };
    let args = RuleArgs { weight: Some(cex.w_new) };
    let out = rule::try_apply(&r, &mut t, &binding, args, k, ModificationCause::CeHandling, false)
        .expect("replay applies");
    assert!(matches!(out, rule::Outcome::Applied(_)), "unrestricted replay must apply");
    t
}

/// The post-condition as a checkable constraint: premise is the gluing
/// image after the rule ran, conclusions are the surviving conclusion
/// patterns. A restrictive condition's counterexample violates exactly
/// this after the unrestricted replay.
pub fn postcondition_constraint(d: &DerivedCondition, cfg: &RefineConfig) -> crate::pattern::GraphConstraint {
    let conclusions: Vec<GraphPattern> = d
        .post
        .conclusions
        .iter()
        .filter(|c| prune_reason(&c.pattern, d.post.gluing.pattern.links.len(), cfg).is_none())
        .map(|c| c.pattern.clone())
        .collect();
    crate::pattern::GraphConstraint {
        name: format!("post-{}", d.condition.name),
        polarity: match d.constraint.constraint().polarity {
            p @ crate::pattern::Polarity::Positive => p,
            p @ crate::pattern::Polarity::Negative => p,
        },
        premise: d.post.gluing.pattern.clone(),
        conclusions,
    }
}

// ---------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------

/// Tally of one rule x constraint pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairTally {
    pub gluings: usize,
    pub unsatisfiable: usize,
    pub restrictive: usize,
    pub presumed_redundant: usize,
}

pub fn tally(conditions: &[DerivedCondition]) -> PairTally {
    PairTally {
        gluings: conditions.len(),
        unsatisfiable: conditions.iter().filter(|c| c.category == Category::Unsatisfiable).count(),
        restrictive: conditions.iter().filter(|c| c.category == Category::Restrictive).count(),
        presumed_redundant: conditions
            .iter()
            .filter(|c| c.category == Category::PresumedRedundant)
            .count(),
    }
}

/// Text report for one pair: summary line plus one block per gluing.
pub fn render_report(conditions: &[DerivedCondition]) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    if let Some(first) = conditions.first() {
        let t = tally(conditions);
        let _ = writeln!(
            out,
            "{} x {}: {} gluings, {} unsatisfiable, {} restrictive, {} presumed redundant",
            first.rule.label(),
            first.constraint.label(),
            t.gluings,
            t.unsatisfiable,
            t.restrictive,
            t.presumed_redundant
        );
    }
    for d in conditions {
        let _ = writeln!(
            out,
            "g{} [{}]: {}{}",
            d.gluing_index,
            d.overlap,
            d.category.label(),
            match d.gluing_unsat {
                Some(UnsatReason::StateConflict) => " (conflicting link states)",
                Some(UnsatReason::LoopVar) => " (loop variable)",
                Some(UnsatReason::ParallelVars) => " (parallel link variables)",
                Some(UnsatReason::WeightInfeasible) => " (infeasible weights)",
                None => "",
            }
        );
        let _ = writeln!(out, "  premise: {}", d.condition.premise.render());
        for c in &d.condition.conclusions {
            let _ = writeln!(out, "  conclusion: {}", c.render());
        }
        for c in &d.post.conclusions {
            if let Some(reason) = c.pruned {
                let merged = c.merged_into.map(|v| d.post.gluing.pattern.node_names[v].clone());
                let _ = writeln!(
                    out,
                    "  pruned reduced conclusion (merge into {}): {:?}",
                    merged.unwrap_or_default(),
                    reason
                );
            }
        }
        if let Some(cex) = &d.counterexample {
            let _ = writeln!(out, "  counterexample:");
            for line in crate::text::to_text(&cex.topology).lines() {
                let _ = writeln!(out, "    {line}");
            }
        }
    }
    out
}

/// Machine-readable table: one tab-separated line per gluing.
pub fn render_table(conditions: &[DerivedCondition]) -> String {
    let mut out = String::from("rule\tconstraint\tgluing\toverlap\tcategory\tcondition\n");
    for d in conditions {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            d.rule.label(),
            d.constraint.label(),
            d.gluing_index,
            d.overlap,
            d.category.label(),
            d.condition.premise.render()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg2() -> RefineConfig {
        RefineConfig::new(Rat::from_integer(2))
    }

    #[test]
    fn gluing_counts_match_for_all_tc_pairs() {
        let cfg = cfg2();
        for rule in [RuleKind::Unclassification, RuleKind::Activation, RuleKind::Inactivation] {
            let posts_i = derive_postconditions(rule, ConstraintKind::InactiveLink, &cfg);
            assert_eq!(posts_i.len(), 6, "{} x inactive-link", rule.label());
            let posts_a = derive_postconditions(rule, ConstraintKind::ActiveLink, &cfg);
            assert_eq!(posts_a.len(), 12, "{} x active-link", rule.label());
        }
    }

    #[test]
    fn two_single_node_patterns_glue_once() {
        let a = GraphPattern::new(&["1"]);
        let b = GraphPattern::new(&["x"]);
        let gluings = enumerate_gluings(&a, &b);
        assert_eq!(gluings.len(), 1);
        assert_eq!(gluings[0].pattern.node_count(), 1);
    }

    #[test]
    fn first_unclassification_gluing_is_state_conflicting() {
        let cfg = cfg2();
        let posts = derive_postconditions(RuleKind::Unclassification, ConstraintKind::InactiveLink, &cfg);
        assert_eq!(is_satisfiable(&posts[0].gluing.pattern, &cfg), Err(UnsatReason::StateConflict));
        // merged link: unclassified (RHS) + inactive (premise)
        assert_eq!(posts[0].gluing.merged_links.len(), 1);
    }

    #[test]
    fn basic_conclusion_adds_one_node_var_and_reductions_prune() {
        let cfg = cfg2();
        let posts = derive_postconditions(RuleKind::Unclassification, ConstraintKind::InactiveLink, &cfg);
        // gluing #2 (1=a): the worked example
        let post = &posts[1];
        assert_eq!(post.gluing.overlap, "1=a");
        let infos = &post.conclusions;
        assert_eq!(infos.len(), 4); // basic + 3 reductions
        assert!(infos[0].pruned.is_none());
        assert_eq!(infos[0].pattern.node_count(), post.gluing.pattern.node_count() + 1);
        assert!(infos[1..].iter().all(|c| c.pruned.is_some()), "all reduced conclusions pruned");
    }

    #[test]
    fn negative_constraint_skips_conclusion_steps() {
        let cfg = cfg2();
        let posts = derive_postconditions(RuleKind::Activation, ConstraintKind::ActiveLink, &cfg);
        assert!(posts.iter().all(|p| p.conclusions.is_empty()));
    }

    #[test]
    fn satisfiability_of_weight_fragment() {
        let cfg = cfg2();
        // w(x) > max(w(y),w(z)) and w(x) >= k*min(w(y),w(z)) with k=2:
        // witnessed by 4,1,2
        let mut p = GraphPattern::new(&["a", "b", "c"]);
        let x = p.add_link("x", 0, 1, StateMask::ANY);
        let y = p.add_link("y", 0, 2, StateMask::ANY);
        let z = p.add_link("z", 2, 1, StateMask::ANY);
        p.add_cmp(WeightTerm::link(x), CmpOp::Gt, WeightTerm::max_of(y, z));
        p.add_cmp(WeightTerm::link(x), CmpOp::Ge, WeightTerm::k_min_of(y, z));
        assert_eq!(is_satisfiable(&p, &cfg), Ok(()));
        // contradiction: w(x) > w(y) and w(y) > w(x)
        let mut q = GraphPattern::new(&["a", "b", "c"]);
        let x = q.add_link("x", 0, 1, StateMask::ANY);
        let y = q.add_link("y", 0, 2, StateMask::ANY);
        q.add_cmp(WeightTerm::link(x), CmpOp::Gt, WeightTerm::link(y));
        q.add_cmp(WeightTerm::link(y), CmpOp::Gt, WeightTerm::link(x));
        assert_eq!(is_satisfiable(&q, &cfg), Err(UnsatReason::WeightInfeasible));
    }

    #[test]
    fn reverse_translation_restores_lhs_state() {
        let cfg = cfg2();
        let posts = derive_postconditions(RuleKind::Activation, ConstraintKind::ActiveLink, &cfg);
        // gluing #1 merges the rule link with the constraint's active
        // link; reverse translation turns the state back to unclassified
        let ac = reverse_translate(RuleKind::Activation, ConstraintKind::ActiveLink, &posts[0], &cfg);
        assert_eq!(ac.premise.links[0].state, StateMask::UNCLASSIFIED);
        assert_eq!(ac.polarity, AcPolarity::Nac);
    }

    #[test]
    fn weight_modification_drops_the_w_new_constraint() {
        let cfg = cfg2();
        let posts = derive_postconditions(RuleKind::WeightModification, ConstraintKind::InactiveLink, &cfg);
        for post in posts {
            let ac = reverse_translate(RuleKind::WeightModification, ConstraintKind::InactiveLink, &post, &cfg);
            for c in std::iter::once(&ac.premise).chain(ac.conclusions.iter()) {
                assert!(
                    !c.weight_cmps.iter().any(|w| term_uses_param(&w.lhs) || term_uses_param(&w.rhs)),
                    "w_new must not survive reverse translation"
                );
            }
        }
    }

    #[test]
    fn identity_shaped_rule_keeps_premise() {
        // unclassification x active-link gluing #3 (1=a, 2 unmatched) has
        // no merged link; the premise passes through with only the rule
        // link's state mapped back
        let cfg = cfg2();
        let posts = derive_postconditions(RuleKind::Unclassification, ConstraintKind::ActiveLink, &cfg);
        let post = &posts[2];
        assert!(post.gluing.merged_links.is_empty());
        let ac = reverse_translate(RuleKind::Unclassification, ConstraintKind::ActiveLink, post, &cfg);
        assert_eq!(ac.premise.links.len(), post.gluing.pattern.links.len());
        assert_eq!(ac.premise.links[0].state, StateMask::CLASSIFIED);
    }

    #[test]
    fn bound_too_small_is_reported() {
        let mut cfg = cfg2();
        cfg.bound = 2;
        let posts = derive_postconditions(RuleKind::Activation, ConstraintKind::ActiveLink, &cfg);
        assert!(matches!(
            categorize(RuleKind::Activation, ConstraintKind::ActiveLink, &posts[0], &cfg),
            Err(RefineError::BoundTooSmall { bound: 2, need: 3 })
        ));
    }

    #[test]
    fn link_addition_keeps_collapsed_witnesses_after_translation() {
        // for link addition the rule's link is removed by the reverse
        // translation, so a witness collapsed onto the second endpoint
        // no longer collides and must survive into the condition
        let cfg = cfg2();
        let posts = derive_postconditions(RuleKind::LinkAddition, ConstraintKind::InactiveLink, &cfg);
        // gluing #4 (1=b): inactive link enters node 1
        let post = &posts[3];
        assert_eq!(post.gluing.overlap, "1=b");
        let ac = reverse_translate(RuleKind::LinkAddition, ConstraintKind::InactiveLink, post, &cfg);
        assert!(ac.conclusions.len() >= 2, "basic and the surviving reduced conclusion");
    }
}

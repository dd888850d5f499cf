//! Topology-control and context-event rewrite rules in their refined
//! form: a left-hand-side pattern, a list of primitive edits, and
//! positive/negative application conditions carried as data so the
//! refinement engine's output can be diffed against them.

use std::fmt::Write as _;

use thiserror::Error;

use crate::pattern::{
    self, Binding, CmpOp, GraphPattern, PatternMatch, StateMask, VarId, WeightArg, WeightTerm,
};
use crate::topology::{
    LinkId, LinkState, ModificationCause, NodeId, Topology, TopologyError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcPolarity {
    Pac,
    Nac,
}

/// How a condition participates at runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcRole {
    /// Checked on every application.
    Enforced,
    /// Dropped at runtime; a restoration handler repairs violations
    /// after the (unrestrictable) rule fires.
    Handled,
}

/// A graph constraint whose premise contains the rule's left-hand side
/// (prefix convention: LHS variables come first in the premise, premise
/// variables come first in each conclusion).
#[derive(Debug, Clone, PartialEq)]
pub struct ApplicationCondition {
    pub name: String,
    pub polarity: AcPolarity,
    pub role: AcRole,
    pub premise: GraphPattern,
    pub conclusions: Vec<GraphPattern>,
}

impl ApplicationCondition {
    /// Fulfilled for a match `m` of the LHS iff every extension of `m`
    /// to a premise match extends to some conclusion match. For a NAC
    /// (no conclusions) this means: no premise extension exists.
    pub fn fulfilled(&self, t: &Topology, k: f64, lhs_match: &PatternMatch) -> bool {
        let binding = Binding::from_prefix(lhs_match);
        let premise_matches = pattern::find_matches(t, &self.premise, k, &binding);
        match self.polarity {
            AcPolarity::Nac => premise_matches.is_empty(),
            AcPolarity::Pac => premise_matches
                .iter()
                .all(|m| self.conclusions.iter().any(|c| pattern::extends(t, c, k, m))),
        }
    }
}

/// Primitive edit over LHS variables (or fresh elements).
#[derive(Debug, Clone, PartialEq)]
pub enum RuleEffect {
    SetState { link: VarId, state: LinkState },
    /// Sets the link's weight to the `w_new` argument; unclassifies the
    /// link as a side effect (that is the topology operation's
    /// contract).
    SetWeight { link: VarId },
    AddNode,
    /// Adds an unclassified link between two LHS node variables with the
    /// `w_new` argument as weight.
    AddLink { src: VarId, tgt: VarId },
    RemoveLink { link: VarId },
    RemoveNode { node: VarId },
}

/// A rewrite rule: LHS pattern, effects, application conditions.
#[derive(Debug, Clone)]
pub struct RefinedRule {
    pub name: String,
    pub lhs: GraphPattern,
    pub effects: Vec<RuleEffect>,
    pub conditions: Vec<ApplicationCondition>,
}

/// Runtime arguments for rules with parameters beyond the match.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleArgs {
    pub weight: Option<f64>,
}

/// Result of one co-match: where the LHS variables ended up after the
/// rewrite, plus fresh elements.
#[derive(Debug, Clone)]
pub enum Outcome {
    Applied(AppliedInfo),
    Inapplicable(String),
}

#[derive(Debug, Clone, Default)]
pub struct AppliedInfo {
    pub new_nodes: Vec<NodeId>,
    pub new_links: Vec<LinkId>,
    pub lhs_match: Option<PatternMatch>,
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("{0}")]
    Topology(#[from] TopologyError),
    #[error("rule {rule} needs a weight argument")]
    MissingWeight { rule: String },
    #[error("check mode: {0}")]
    CheckFailure(String),
}

/// Applies `rule` at a match completing `binding`, if one exists that
/// fulfills all enforced application conditions. The effects run
/// atomically (they are all single topology operations or fail before
/// mutating).
///
/// With `check` set, conditions with role `Handled` are evaluated too
/// and a blocked application is reported as an error instead of being
/// silently permitted; this is the empirical guard for conditions whose
/// enforcement was replaced by restoration handlers.
pub fn try_apply(
    rule: &RefinedRule,
    t: &mut Topology,
    binding: &Binding,
    args: RuleArgs,
    k: f64,
    cause: ModificationCause,
    check: bool,
) -> Result<Outcome, RuleError> {
    let matches = pattern::find_matches(t, &rule.lhs, k, binding);
    if matches.is_empty() {
        return Ok(Outcome::Inapplicable("lhs-unmatched".into()));
    }
    let mut last_block = String::new();
    for m in &matches {
        let mut blocked = None;
        for ac in &rule.conditions {
            match ac.role {
                AcRole::Enforced => {
                    if !ac.fulfilled(t, k, m) {
                        blocked = Some(ac.name.clone());
                        break;
                    }
                }
                AcRole::Handled => {
                    if check && !ac.fulfilled(t, k, m) {
                        return Err(RuleError::CheckFailure(format!(
                            "handled condition {} fired on {}",
                            ac.name, rule.name
                        )));
                    }
                }
            }
        }
        if let Some(name) = blocked {
            last_block = name;
            continue;
        }
        let info = apply_effects(rule, t, m, args, cause)?;
        return Ok(Outcome::Applied(info));
    }
    Ok(Outcome::Inapplicable(last_block))
}

fn apply_effects(
    rule: &RefinedRule,
    t: &mut Topology,
    m: &PatternMatch,
    args: RuleArgs,
    cause: ModificationCause,
) -> Result<AppliedInfo, RuleError> {
    let mut info = AppliedInfo { lhs_match: Some(m.clone()), ..Default::default() };
    for effect in &rule.effects {
        match *effect {
            RuleEffect::SetState { link, state } => {
                t.set_state(m.links[link], state, cause)?;
            }
            RuleEffect::SetWeight { link } => {
                let w = args.weight.ok_or_else(|| RuleError::MissingWeight { rule: rule.name.clone() })?;
                t.set_weight(m.links[link], w, cause)?;
            }
            RuleEffect::AddNode => {
                info.new_nodes.push(t.add_node());
            }
            RuleEffect::AddLink { src, tgt } => {
                let w = args.weight.ok_or_else(|| RuleError::MissingWeight { rule: rule.name.clone() })?;
                info.new_links.push(t.add_link(m.nodes[src], m.nodes[tgt], w)?);
            }
            RuleEffect::RemoveLink { link } => {
                t.remove_link(m.links[link])?;
            }
            RuleEffect::RemoveNode { node } => {
                t.remove_node(m.nodes[node])?;
            }
        }
    }
    Ok(info)
}

// ---------------------------------------------------------------------
// Shipped TC rules
// ---------------------------------------------------------------------

/// LHS shared by the three TC rules: one link `12` between node vars `1`
/// and `2`, state-restricted per rule.
fn tc_lhs(state: StateMask) -> GraphPattern {
    let mut p = GraphPattern::new(&["1", "2"]);
    p.add_link("12", 0, 1, state);
    p
}

/// Extends a TC-rule premise with the kTC triangle in which the rule's
/// own link `12` is the unique weight-maximal, k-condition-satisfying
/// edge (third node var `3`, sides `13` and `32`).
fn extend_with_self_max_triangle(p: &mut GraphPattern) {
    let n3 = p.add_node("3");
    let e13 = p.add_link("13", 0, n3, StateMask::CLASSIFIED);
    let e32 = p.add_link("32", n3, 1, StateMask::CLASSIFIED);
    p.add_cmp(WeightTerm::link(0), CmpOp::Gt, WeightTerm::max_of(e13, e32));
    p.add_cmp(WeightTerm::link(0), CmpOp::Ge, WeightTerm::k_min_of(e13, e32));
}

/// Triangle in which an *active neighbor* of link `12` is the unique
/// weight-maximal k-violating edge. Two orientations exist: the heavy
/// link leaves `12`'s source (`13` maximal over sides `12`, `23`) or
/// enters `12`'s target (`32` maximal over sides `31`, `12`). These are
/// the premises whose enforcement the pre-processing handler replaces.
pub fn neighbor_max_premise(anchor_state: StateMask, out_of_source: bool) -> GraphPattern {
    let mut p = tc_lhs(anchor_state);
    let n3 = p.add_node("3");
    if out_of_source {
        let e13 = p.add_link("13", 0, n3, StateMask::ACTIVE);
        let e23 = p.add_link("23", 1, n3, StateMask::CLASSIFIED);
        p.add_cmp(WeightTerm::link(e13), CmpOp::Gt, WeightTerm::max_of(0, e23));
        p.add_cmp(WeightTerm::link(e13), CmpOp::Ge, WeightTerm::k_min_of(0, e23));
    } else {
        let e32 = p.add_link("32", n3, 1, StateMask::ACTIVE);
        let e31 = p.add_link("31", n3, 0, StateMask::CLASSIFIED);
        p.add_cmp(WeightTerm::link(e32), CmpOp::Gt, WeightTerm::max_of(e31, 0));
        p.add_cmp(WeightTerm::link(e32), CmpOp::Ge, WeightTerm::k_min_of(e31, 0));
    }
    p
}

/// Activates a given unclassified link. After the termination handler
/// was introduced, only the self-max NAC remains enforced; the two
/// neighbor-max NACs are guaranteed by pre-processing and carried as
/// `Handled` data.
pub fn activation_rule() -> RefinedRule {
    let lhs = tc_lhs(StateMask::UNCLASSIFIED);
    let mut nac1_premise = tc_lhs(StateMask::UNCLASSIFIED);
    extend_with_self_max_triangle(&mut nac1_premise);
    RefinedRule {
        name: "activation".into(),
        lhs,
        effects: vec![RuleEffect::SetState { link: 0, state: LinkState::Active }],
        conditions: vec![
            ApplicationCondition {
                name: "activation-blocked-by-self-max-triangle".into(),
                polarity: AcPolarity::Nac,
                role: AcRole::Enforced,
                premise: nac1_premise,
                conclusions: vec![],
            },
            ApplicationCondition {
                name: "activation-blocked-by-heavier-out-link".into(),
                polarity: AcPolarity::Nac,
                role: AcRole::Handled,
                premise: neighbor_max_premise(StateMask::UNCLASSIFIED, true),
                conclusions: vec![],
            },
            ApplicationCondition {
                name: "activation-blocked-by-heavier-in-link".into(),
                polarity: AcPolarity::Nac,
                role: AcRole::Handled,
                premise: neighbor_max_premise(StateMask::UNCLASSIFIED, false),
                conclusions: vec![],
            },
        ],
    }
}

/// Inactivates a given unclassified link. The enforced PAC demands the
/// link sit in a classified triangle as unique weight-max with
/// `w >= k*min`; its conclusion is exactly the premise of the
/// activation rule's enforced NAC, so exactly one of the two rules
/// applies once pre-processing has run.
pub fn inactivation_rule() -> RefinedRule {
    let lhs = tc_lhs(StateMask::UNCLASSIFIED);
    let premise = tc_lhs(StateMask::UNCLASSIFIED);
    let mut conclusion = premise.clone();
    extend_with_self_max_triangle(&mut conclusion);
    RefinedRule {
        name: "inactivation".into(),
        lhs,
        effects: vec![RuleEffect::SetState { link: 0, state: LinkState::Inactive }],
        conditions: vec![
            ApplicationCondition {
                name: "inactivation-requires-self-max-triangle".into(),
                polarity: AcPolarity::Pac,
                role: AcRole::Enforced,
                premise,
                conclusions: vec![conclusion],
            },
            ApplicationCondition {
                name: "inactivation-blocked-by-heavier-out-link".into(),
                polarity: AcPolarity::Nac,
                role: AcRole::Handled,
                premise: neighbor_max_premise(StateMask::UNCLASSIFIED, true),
                conclusions: vec![],
            },
            ApplicationCondition {
                name: "inactivation-blocked-by-heavier-in-link".into(),
                polarity: AcPolarity::Nac,
                role: AcRole::Handled,
                premise: neighbor_max_premise(StateMask::UNCLASSIFIED, false),
                conclusions: vec![],
            },
        ],
    }
}

/// The four orientations in which an inactive link can be incident to
/// the endpoints of a rule's link `12`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    OutOfSource,
    IntoSource,
    OutOfTarget,
    IntoTarget,
}

impl Orientation {
    pub const ALL: [Orientation; 4] =
        [Orientation::OutOfSource, Orientation::IntoSource, Orientation::OutOfTarget, Orientation::IntoTarget];

    pub fn label(self) -> &'static str {
        match self {
            Orientation::OutOfSource => "out-of-source",
            Orientation::IntoSource => "into-source",
            Orientation::OutOfTarget => "out-of-target",
            Orientation::IntoTarget => "into-target",
        }
    }
}

/// The witness-preservation condition for one orientation: the premise
/// matches an inactive link `g` incident to `12`'s endpoints, the
/// conclusions demand a witnessing kTC triangle for `g`.
///
/// `include_all_witnesses` selects the conclusion set: `false` ships the
/// figure-level form whose single conclusion routes the witness through
/// a fresh node; `true` additionally admits the reduced conclusions that
/// survive satisfiability pruning (witnesses through the rule's own
/// second endpoint where no pair collision arises), which is the exact
/// "some witness survives" semantics the restoration handlers check.
pub fn witness_condition(
    anchor_state: Option<StateMask>,
    orientation: Orientation,
    include_all_witnesses: bool,
) -> ApplicationCondition {
    // premise: node vars 1, 2 (+ link 12 unless the rule removed it),
    // node var 3, inactive link g per orientation
    let mut premise = match anchor_state {
        Some(mask) => tc_lhs(mask),
        None => GraphPattern::new(&["1", "2"]),
    };
    let n3 = premise.add_node("3");
    let (gsrc, gtgt, gname) = match orientation {
        Orientation::OutOfSource => (0, n3, "13"),
        Orientation::IntoSource => (n3, 0, "31"),
        Orientation::OutOfTarget => (1, n3, "23"),
        Orientation::IntoTarget => (n3, 1, "32"),
    };
    let g = premise.add_link(gname, gsrc, gtgt, StateMask::INACTIVE);

    let mut conclusions = Vec::new();
    // basic conclusion: witness through a fresh node D
    let mut basic = premise.clone();
    let d = basic.add_node("D");
    let s1 = basic.add_link("gD", gsrc, d, StateMask::CLASSIFIED);
    let s2 = basic.add_link("Dg", d, gtgt, StateMask::CLASSIFIED);
    basic.add_cmp(WeightTerm::link(g), CmpOp::Gt, WeightTerm::max_of(s1, s2));
    basic.add_cmp(WeightTerm::link(g), CmpOp::Ge, WeightTerm::k_min_of(s1, s2));
    conclusions.push(basic);

    if include_all_witnesses {
        // reduced conclusion: witness through the opposite endpoint of
        // link 12, kept only when it does not collide with an existing
        // pattern pair
        let other: VarId = match orientation {
            Orientation::OutOfSource | Orientation::IntoSource => 1,
            Orientation::OutOfTarget | Orientation::IntoTarget => 0,
        };
        let mut reduced = premise.clone();
        let s1 = reduced.add_link("gO", gsrc, other, StateMask::CLASSIFIED);
        let s2 = reduced.add_link("Og", other, gtgt, StateMask::CLASSIFIED);
        reduced.add_cmp(WeightTerm::link(g), CmpOp::Gt, WeightTerm::max_of(s1, s2));
        reduced.add_cmp(WeightTerm::link(g), CmpOp::Ge, WeightTerm::k_min_of(s1, s2));
        // A side on the same ordered pair as link 12 would have to BE
        // link 12 (no parallel links), which the rule just touched; such
        // a pattern duplicates the link variable and can never match.
        // Anti-parallel sides are distinct links and stay.
        let duplicates_anchor = anchor_state.is_some()
            && [s1, s2]
                .iter()
                .any(|&s| reduced.links[s].src == 0 && reduced.links[s].tgt == 1);
        if !duplicates_anchor {
            conclusions.push(reduced);
        }
    }

    ApplicationCondition {
        name: format!("witness-for-inactive-{}", orientation.label()),
        polarity: AcPolarity::Pac,
        role: AcRole::Handled,
        premise,
        conclusions,
    }
}

/// Unclassifies a given classified link. The four witness-preservation
/// PACs are never enforced (the rule is unrestrictable); the
/// unclassification handler restores them.
pub fn unclassification_rule() -> RefinedRule {
    RefinedRule {
        name: "unclassification".into(),
        lhs: tc_lhs(StateMask::CLASSIFIED),
        effects: vec![RuleEffect::SetState { link: 0, state: LinkState::Unclassified }],
        conditions: Orientation::ALL
            .into_iter()
            .map(|o| witness_condition(Some(StateMask::CLASSIFIED), o, false))
            .collect(),
    }
}

// ---------------------------------------------------------------------
// Context event rules
// ---------------------------------------------------------------------

/// Creates a fresh isolated node. The empty LHS makes it always
/// applicable.
pub fn node_addition_rule() -> RefinedRule {
    RefinedRule {
        name: "node-addition".into(),
        lhs: GraphPattern::new(&[]),
        effects: vec![RuleEffect::AddNode],
        conditions: vec![],
    }
}

/// Removes a node; two NACs prevent dangling links.
pub fn node_removal_rule() -> RefinedRule {
    let lhs = GraphPattern::new(&["1"]);
    let mut nac_out = GraphPattern::new(&["1"]);
    let n = nac_out.add_node("x");
    nac_out.add_link("1x", 0, n, StateMask::ANY);
    let mut nac_in = GraphPattern::new(&["1"]);
    let n = nac_in.add_node("x");
    nac_in.add_link("x1", n, 0, StateMask::ANY);
    RefinedRule {
        name: "node-removal".into(),
        lhs,
        effects: vec![RuleEffect::RemoveNode { node: 0 }],
        conditions: vec![
            ApplicationCondition {
                name: "node-removal-no-outgoing".into(),
                polarity: AcPolarity::Nac,
                role: AcRole::Enforced,
                premise: nac_out,
                conclusions: vec![],
            },
            ApplicationCondition {
                name: "node-removal-no-incoming".into(),
                polarity: AcPolarity::Nac,
                role: AcRole::Enforced,
                premise: nac_in,
                conclusions: vec![],
            },
        ],
    }
}

/// Adds an unclassified link between two given nodes; a NAC keeps the
/// graph free of parallel links (injectivity of the match forbids the
/// loop case).
pub fn link_addition_rule() -> RefinedRule {
    let lhs = GraphPattern::new(&["1", "2"]);
    let mut nac = GraphPattern::new(&["1", "2"]);
    nac.add_link("existing", 0, 1, StateMask::ANY);
    RefinedRule {
        name: "link-addition".into(),
        lhs,
        effects: vec![RuleEffect::AddLink { src: 0, tgt: 1 }],
        conditions: vec![ApplicationCondition {
            name: "link-addition-no-existing".into(),
            polarity: AcPolarity::Nac,
            role: AcRole::Enforced,
            premise: nac,
            conclusions: vec![],
        }],
    }
}

/// Removes a given link unconditionally; witness preservation for the
/// four orientations is restored by the removal handler.
pub fn link_removal_rule() -> RefinedRule {
    RefinedRule {
        name: "link-removal".into(),
        lhs: tc_lhs(StateMask::ANY),
        effects: vec![RuleEffect::RemoveLink { link: 0 }],
        conditions: Orientation::ALL
            .into_iter()
            .map(|o| witness_condition(Some(StateMask::ANY), o, false))
            .collect(),
    }
}

/// Sets the weight of a given link and unclassifies it; witness
/// preservation is restored by the weight-modification handler.
pub fn weight_modification_rule() -> RefinedRule {
    let mut lhs = tc_lhs(StateMask::ANY);
    // the w_new parameter appears on the RHS as w(12) = w_new; the LHS
    // itself carries no weight constraint
    lhs.weight_cmps.clear();
    RefinedRule {
        name: "weight-modification".into(),
        lhs,
        effects: vec![RuleEffect::SetWeight { link: 0 }],
        conditions: Orientation::ALL
            .into_iter()
            .map(|o| witness_condition(Some(StateMask::ANY), o, false))
            .collect(),
    }
}

/// The five context event rules in unrestricted form. Restoration is
/// wired in by [`crate::handler`].
pub fn ce_rules() -> Vec<RefinedRule> {
    vec![
        node_addition_rule(),
        node_removal_rule(),
        link_addition_rule(),
        link_removal_rule(),
        weight_modification_rule(),
    ]
}

/// Text dump of a rule (name, LHS, effects, conditions) for
/// documentation and for diffing against the refinement engine output.
pub fn render_rule(rule: &RefinedRule) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "rule {}", rule.name);
    let _ = writeln!(out, "  lhs: {}", rule.lhs.render());
    for e in &rule.effects {
        let desc = match *e {
            RuleEffect::SetState { link, state } => {
                format!("set state({}) = {}", rule.lhs.links[link].name, state)
            }
            RuleEffect::SetWeight { link } => {
                format!("set weight({}) = w_new (unclassifies)", rule.lhs.links[link].name)
            }
            RuleEffect::AddNode => "add node".to_string(),
            RuleEffect::AddLink { src, tgt } => format!(
                "add link {} -> {} (weight w_new, unclassified)",
                rule.lhs.node_names[src], rule.lhs.node_names[tgt]
            ),
            RuleEffect::RemoveLink { link } => format!("remove link {}", rule.lhs.links[link].name),
            RuleEffect::RemoveNode { node } => format!("remove node {}", rule.lhs.node_names[node]),
        };
        let _ = writeln!(out, "  effect: {desc}");
    }
    for ac in &rule.conditions {
        let kind = match ac.polarity {
            AcPolarity::Pac => "pac",
            AcPolarity::Nac => "nac",
        };
        let role = match ac.role {
            AcRole::Enforced => "enforced",
            AcRole::Handled => "handled",
        };
        let _ = writeln!(out, "  {kind} [{role}] {}: premise {}", ac.name, ac.premise.render());
        for c in &ac.conclusions {
            let _ = writeln!(out, "      conclusion {}", c.render());
        }
    }
    out
}

/// `WeightArg::NewWeightParam` marker helper for RHS construction in the
/// refinement engine.
pub fn w_new_term() -> WeightTerm {
    WeightTerm { coeff: crate::pattern::Coeff::One, arg: WeightArg::NewWeightParam }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::ModificationCause::TcInvocation as Tc;

    const K: f64 = 2.0;

    fn t1_states(ab: LinkState, others: LinkState) -> (Topology, [LinkId; 6]) {
        let mut t = Topology::new();
        let a = t.add_node();
        let b = t.add_node();
        let c = t.add_node();
        let links = [
            t.add_link(a, b, 4.0).unwrap(),
            t.add_link(b, a, 4.0).unwrap(),
            t.add_link(a, c, 1.0).unwrap(),
            t.add_link(c, a, 1.0).unwrap(),
            t.add_link(c, b, 2.0).unwrap(),
            t.add_link(b, c, 2.0).unwrap(),
        ];
        for e in &links[1..] {
            t.set_state(*e, others, Tc).unwrap();
        }
        t.set_state(links[0], ab, Tc).unwrap();
        (t, links)
    }

    fn bind_link(rule: &RefinedRule, t: &Topology, e: LinkId) -> Binding {
        Binding::for_link(&rule.lhs, 0, t.link(e).unwrap())
    }

    #[test]
    fn activation_applies_to_isolated_unclassified_link() {
        let mut t = Topology::new();
        let a = t.add_node();
        let b = t.add_node();
        let e = t.add_link(a, b, 5.0).unwrap();
        let rule = activation_rule();
        let binding = bind_link(&rule, &t, e);
        let out = try_apply(&rule, &mut t, &binding, RuleArgs::default(), K, Tc, false).unwrap();
        assert!(matches!(out, Outcome::Applied(_)));
        assert_eq!(t.link(e).unwrap().state, LinkState::Active);
    }

    #[test]
    fn activation_blocked_on_unique_max_in_classified_triangle() {
        // ab unclassified, short sides classified: 4 > max(1,2), 4 >= 2*1
        let (mut t, links) = t1_states(LinkState::Unclassified, LinkState::Active);
        let rule = activation_rule();
        let binding = bind_link(&rule, &t, links[0]);
        let out = try_apply(&rule, &mut t, &binding, RuleArgs::default(), K, Tc, false).unwrap();
        match out {
            Outcome::Inapplicable(reason) => {
                assert_eq!(reason, "activation-blocked-by-self-max-triangle")
            }
            Outcome::Applied(_) => panic!("activation must be blocked"),
        }
        assert_eq!(t.link(links[0]).unwrap().state, LinkState::Unclassified);
    }

    #[test]
    fn activation_allowed_when_triangle_side_unclassified() {
        // NAC premise demands classified sides; an unclassified side
        // leaves the rule applicable.
        let (mut t, links) = t1_states(LinkState::Unclassified, LinkState::Active);
        t.set_state(links[2], LinkState::Unclassified, Tc).unwrap();
        let rule = activation_rule();
        let binding = bind_link(&rule, &t, links[0]);
        let out = try_apply(&rule, &mut t, &binding, RuleArgs::default(), K, Tc, false).unwrap();
        assert!(matches!(out, Outcome::Applied(_)));
    }

    #[test]
    fn inactivation_mirror_cases() {
        let (mut t, links) = t1_states(LinkState::Unclassified, LinkState::Active);
        let rule = inactivation_rule();
        let binding = bind_link(&rule, &t, links[0]);
        let out = try_apply(&rule, &mut t, &binding, RuleArgs::default(), K, Tc, false).unwrap();
        assert!(matches!(out, Outcome::Applied(_)));
        assert_eq!(t.link(links[0]).unwrap().state, LinkState::Inactive);

        // isolated link: no witnessing triangle, PAC blocks
        let mut t2 = Topology::new();
        let a = t2.add_node();
        let b = t2.add_node();
        let e = t2.add_link(a, b, 5.0).unwrap();
        let binding = bind_link(&rule, &t2, e);
        let out = try_apply(&rule, &mut t2, &binding, RuleArgs::default(), K, Tc, false).unwrap();
        assert!(matches!(out, Outcome::Inapplicable(_)));
    }

    #[test]
    fn activation_xor_inactivation_on_t1() {
        // after pre-processing, exactly one of the two rules applies;
        // on this triangle no pre-processing is needed for ab.
        let (t, links) = t1_states(LinkState::Unclassified, LinkState::Active);
        let act = activation_rule();
        let inact = inactivation_rule();
        for e in links {
            let link = t.link(e).unwrap();
            if link.state != LinkState::Unclassified {
                continue;
            }
            let mut ta = t.clone();
            let a = try_apply(&act, &mut ta, &bind_link(&act, &t, e), RuleArgs::default(), K, Tc, false).unwrap();
            let mut ti = t.clone();
            let i =
                try_apply(&inact, &mut ti, &bind_link(&inact, &t, e), RuleArgs::default(), K, Tc, false).unwrap();
            assert!(matches!(a, Outcome::Applied(_)) ^ matches!(i, Outcome::Applied(_)));
        }
    }

    #[test]
    fn unclassification_lhs_requires_classified() {
        let mut t = Topology::new();
        let a = t.add_node();
        let b = t.add_node();
        let e = t.add_link(a, b, 5.0).unwrap();
        let rule = unclassification_rule();
        let binding = bind_link(&rule, &t, e);
        let out = try_apply(&rule, &mut t, &binding, RuleArgs::default(), K, Tc, false).unwrap();
        assert!(matches!(out, Outcome::Inapplicable(_)));
        t.set_state(e, LinkState::Active, Tc).unwrap();
        let out = try_apply(&rule, &mut t, &binding, RuleArgs::default(), K, Tc, false).unwrap();
        assert!(matches!(out, Outcome::Applied(_)));
        assert_eq!(t.link(e).unwrap().state, LinkState::Unclassified);
    }

    #[test]
    fn unclassification_pacs_detect_sole_witness() {
        // ac is the only active short side witnessing inactive ab:
        // the out-of-source witness PAC at ac is violated.
        let (t, links) = t1_states(LinkState::Inactive, LinkState::Active);
        let ac_link = t.link(links[2]).unwrap();
        let lhs_match = PatternMatch { nodes: vec![ac_link.src, ac_link.tgt], links: vec![links[2]] };
        let pac = witness_condition(Some(StateMask::CLASSIFIED), Orientation::OutOfSource, false);
        assert!(!pac.fulfilled(&t, K, &lhs_match));
        // a classified link with no inactive neighbors fulfills all four
        let cb_link = t.link(links[4]).unwrap();
        let m2 = PatternMatch { nodes: vec![cb_link.src, cb_link.tgt], links: vec![links[4]] };
        for o in Orientation::ALL {
            let cond = witness_condition(Some(StateMask::CLASSIFIED), o, false);
            if o == Orientation::IntoTarget {
                // cb's target is b; inactive ab enters b and its sole
                // witness uses... ac--cb, which does not contain cb as a
                // side entering b; the witness (ac, cb) exists, and the
                // basic conclusion needs a fresh node. ab's witness is
                // via c which is cb's own source: bound vars are (c, b),
                // D must avoid {c, b, a}. No witness -> violated.
                assert!(!cond.fulfilled(&t, K, &m2));
            } else {
                assert!(cond.fulfilled(&t, K, &m2), "{}", o.label());
            }
        }
    }

    #[test]
    fn node_removal_nacs() {
        let mut t = Topology::new();
        let a = t.add_node();
        let b = t.add_node();
        t.add_link(a, b, 1.0).unwrap();
        let iso = t.add_node();
        let rule = node_removal_rule();
        let blocked = Binding { nodes: vec![(0, a)], links: vec![] };
        let out = try_apply(&rule, &mut t, &blocked, RuleArgs::default(), K, Tc, false).unwrap();
        assert!(matches!(out, Outcome::Inapplicable(_)));
        let ok = Binding { nodes: vec![(0, iso)], links: vec![] };
        let out = try_apply(&rule, &mut t, &ok, RuleArgs::default(), K, Tc, false).unwrap();
        assert!(matches!(out, Outcome::Applied(_)));
        assert!(!t.has_node(iso));
    }

    #[test]
    fn link_addition_nac_prevents_parallel() {
        let mut t = Topology::new();
        let a = t.add_node();
        let b = t.add_node();
        let rule = link_addition_rule();
        let binding = Binding { nodes: vec![(0, a), (1, b)], links: vec![] };
        let args = RuleArgs { weight: Some(2.0) };
        let out = try_apply(&rule, &mut t, &binding, args, K, Tc, false).unwrap();
        match out {
            Outcome::Applied(info) => {
                assert_eq!(info.new_links.len(), 1);
                assert_eq!(t.link(info.new_links[0]).unwrap().state, LinkState::Unclassified);
            }
            _ => panic!("first addition must apply"),
        }
        let out = try_apply(&rule, &mut t, &binding, args, K, Tc, false).unwrap();
        assert!(matches!(out, Outcome::Inapplicable(_)));
        // loop prevented by match injectivity
        let loop_binding = Binding { nodes: vec![(0, a), (1, a)], links: vec![] };
        let out = try_apply(&rule, &mut t, &loop_binding, args, K, Tc, false).unwrap();
        assert!(matches!(out, Outcome::Inapplicable(_)));
    }

    #[test]
    fn weight_modification_unclassifies() {
        let (mut t, links) = t1_states(LinkState::Inactive, LinkState::Active);
        let rule = weight_modification_rule();
        let binding = bind_link(&rule, &t, links[0]);
        let out = try_apply(&rule, &mut t, &binding, RuleArgs { weight: Some(3.0) }, K, Tc, false).unwrap();
        assert!(matches!(out, Outcome::Applied(_)));
        let l = t.link(links[0]).unwrap();
        assert_eq!(l.weight, 3.0);
        assert_eq!(l.state, LinkState::Unclassified);
    }

    #[test]
    fn structural_constraints_preserved_by_applications() {
        let (mut t, links) = t1_states(LinkState::Unclassified, LinkState::Active);
        let rule = inactivation_rule();
        let binding = bind_link(&rule, &t, links[0]);
        try_apply(&rule, &mut t, &binding, RuleArgs::default(), K, Tc, false).unwrap();
        t.audit().unwrap();
    }

    #[test]
    fn render_rule_mentions_conditions() {
        let dump = render_rule(&activation_rule());
        assert!(dump.contains("activation-blocked-by-self-max-triangle"));
        assert!(dump.contains("set state(12) = A"));
    }
}

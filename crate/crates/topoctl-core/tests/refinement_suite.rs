//! Closes the loop between the refinement engine and the shipped rules:
//! the derived restrictive conditions must coincide with the conditions
//! the rules carry, every restrictive counterexample must replay into a
//! genuine post-condition violation, presumed-redundant conditions must
//! never block on weakly consistent inputs, and the four classic
//! violation scenarios must appear without the guards and disappear
//! with them.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use topoctl_core::ktc::{incremental_ktc, KtcOptions};
use topoctl_core::pattern::{self, check_constraint, patterns_isomorphic, Binding};
use topoctl_core::refine::{
    self, postcondition_constraint, refine_pair, replay_unrestricted, Category, ConstraintKind,
    RefineConfig, RuleKind,
};
use topoctl_core::rule::{self, AcPolarity, Outcome, RuleArgs};
use topoctl_core::topology::{LinkId, LinkState, ModificationCause, NodeId, Topology};

fn cfg() -> RefineConfig {
    RefineConfig::from_decimal_k("2").unwrap()
}

fn restrictive(rule: RuleKind, constraint: ConstraintKind) -> Vec<refine::DerivedCondition> {
    refine_pair(rule, constraint, &cfg())
        .unwrap()
        .into_iter()
        .filter(|d| d.category == Category::Restrictive)
        .collect()
}

#[test]
fn derived_restrictive_conditions_match_shipped_rules() {
    // activation: the three NACs
    let derived = restrictive(RuleKind::Activation, ConstraintKind::ActiveLink);
    let shipped = rule::activation_rule();
    assert_eq!(derived.len(), shipped.conditions.len());
    for ac in &shipped.conditions {
        assert!(
            derived.iter().any(|d| patterns_isomorphic(&d.condition.premise, &ac.premise)),
            "no derived condition matches shipped {}",
            ac.name
        );
    }

    // inactivation: the PAC from the inactive-link pair plus two NACs
    let derived_pac = restrictive(RuleKind::Inactivation, ConstraintKind::InactiveLink);
    let shipped = rule::inactivation_rule();
    assert_eq!(derived_pac.len(), 1);
    assert_eq!(derived_pac[0].condition.polarity, AcPolarity::Pac);
    assert!(patterns_isomorphic(&derived_pac[0].condition.premise, &shipped.conditions[0].premise));
    assert_eq!(derived_pac[0].condition.conclusions.len(), shipped.conditions[0].conclusions.len());
    assert!(patterns_isomorphic(
        &derived_pac[0].condition.conclusions[0],
        &shipped.conditions[0].conclusions[0]
    ));
    let derived_nacs = restrictive(RuleKind::Inactivation, ConstraintKind::ActiveLink);
    assert_eq!(derived_nacs.len(), 2);
    for ac in &shipped.conditions[1..] {
        assert!(
            derived_nacs.iter().any(|d| patterns_isomorphic(&d.condition.premise, &ac.premise)),
            "no derived condition matches shipped {}",
            ac.name
        );
    }

    // unclassification: the four witness-preservation PACs
    let derived = restrictive(RuleKind::Unclassification, ConstraintKind::InactiveLink);
    let shipped = rule::unclassification_rule();
    assert_eq!(derived.len(), 4);
    for ac in &shipped.conditions {
        let matching = derived
            .iter()
            .find(|d| patterns_isomorphic(&d.condition.premise, &ac.premise))
            .unwrap_or_else(|| panic!("no derived condition matches shipped {}", ac.name));
        assert_eq!(matching.condition.conclusions.len(), ac.conclusions.len());
        assert!(patterns_isomorphic(&matching.condition.conclusions[0], &ac.conclusions[0]));
    }

    // link removal and weight modification carry the same four shapes
    for (kind, shipped) in [
        (RuleKind::LinkRemoval, rule::link_removal_rule()),
        (RuleKind::WeightModification, rule::weight_modification_rule()),
    ] {
        let derived = restrictive(kind, ConstraintKind::InactiveLink);
        assert_eq!(derived.len(), 4, "{}", kind.label());
        for ac in &shipped.conditions {
            assert!(
                derived.iter().any(|d| patterns_isomorphic(&d.condition.premise, &ac.premise)),
                "{}: no derived condition matches shipped {}",
                kind.label(),
                ac.name
            );
        }
    }
}

#[test]
fn ce_rules_against_both_constraints() {
    // node addition, node removal and link addition never restrict;
    // link removal and weight modification restrict four ways against
    // the inactive-link constraint and never against the active-link
    // constraint
    let expectations = [
        (RuleKind::NodeAddition, 0usize, 0usize),
        (RuleKind::LinkAddition, 0, 0),
        (RuleKind::LinkRemoval, 4, 0),
        (RuleKind::WeightModification, 4, 0),
    ];
    for (kind, against_inactive, against_active) in expectations {
        assert_eq!(
            restrictive(kind, ConstraintKind::InactiveLink).len(),
            against_inactive,
            "{} x inactive-link",
            kind.label()
        );
        assert_eq!(
            restrictive(kind, ConstraintKind::ActiveLink).len(),
            against_active,
            "{} x active-link",
            kind.label()
        );
    }
    // node removal has an empty right-hand side: no overlap exists
    let rhs_empty = refine::enumerate_gluings(
        &pattern::GraphPattern::new(&[]),
        &pattern::inactive_link_constraint().premise,
    );
    assert!(rhs_empty.is_empty());
}

#[test]
fn restrictive_counterexamples_replay_into_postcondition_violations() {
    let cfg = cfg();
    let k = 2.0;
    // conditions whose blocking instances genuinely lose the constraint
    // itself: the edit either completes a forbidden triangle through the
    // merged link or destroys a witness that ran through the edited
    // link. The four orientations of the witness-preservation
    // conditions split accordingly: out-of-source (g2) and into-target
    // (g6) witnesses can use the edited link, the other two cannot.
    let constraint_breaking: &[(&str, &str, usize)] = &[
        ("activation", "active-link", 1),
        ("activation", "active-link", 2),
        ("activation", "active-link", 8),
        ("inactivation", "active-link", 2),
        ("inactivation", "active-link", 8),
        ("inactivation", "inactive-link", 1),
        ("unclassification", "inactive-link", 2),
        ("unclassification", "inactive-link", 6),
        ("link-removal", "inactive-link", 2),
        ("link-removal", "inactive-link", 6),
        ("weight-modification", "inactive-link", 2),
        ("weight-modification", "inactive-link", 6),
    ];
    let mut broke_constraint = Vec::new();
    for rule_kind in RuleKind::ALL {
        if rule_kind == RuleKind::NodeRemoval {
            continue;
        }
        for constraint in ConstraintKind::ALL {
            for d in refine_pair(rule_kind, constraint, &cfg).unwrap() {
                if d.category != Category::Restrictive {
                    assert!(d.counterexample.is_none());
                    continue;
                }
                let cex = d.counterexample.as_ref().expect("restrictive without counterexample");
                // pre-state: weakly consistent, condition blocks
                assert!(pattern::check_weak_consistency(&cex.topology, k).fulfilled);
                // without the condition: the guarded post-condition breaks
                let after = replay_unrestricted(rule_kind, cex, k);
                let post = postcondition_constraint(&d, &cfg);
                assert!(
                    !check_constraint(&after, &post, k).fulfilled,
                    "{}: post-condition survived the unrestricted replay",
                    d.condition.name
                );
                if !check_constraint(&after, &constraint.constraint(), k).fulfilled {
                    broke_constraint.push((rule_kind.label(), constraint.label(), d.gluing_index));
                }
                // with the condition enforced: the application is blocked
                // and nothing changes
                let mut guarded = rule_kind.rule();
                guarded.conditions = vec![topoctl_core::rule::ApplicationCondition {
                    role: topoctl_core::rule::AcRole::Enforced,
                    ..d.condition.clone()
                }];
                let mut t = cex.topology.clone();
                let binding = match cex.binding_link {
                    Some(e) => Binding::for_link(&guarded.lhs, 0, t.link(e).unwrap()),
                    None => Binding {
                        nodes: cex.binding_nodes.iter().copied().enumerate().collect(),
                        links: vec![],
                    },
                };
                let out = rule::try_apply(
                    &guarded,
                    &mut t,
                    &binding,
                    RuleArgs { weight: Some(cex.w_new) },
                    k,
                    ModificationCause::CeHandling,
                    false,
                )
                .unwrap();
                assert!(
                    matches!(out, Outcome::Inapplicable(_)),
                    "{}: the condition must block its own counterexample",
                    d.condition.name
                );
                assert!(t.same_structure(&cex.topology));
                assert_eq!(t.state_map(), cex.topology.state_map());
            }
        }
    }
    broke_constraint.sort();
    let mut expected: Vec<(&str, &str, usize)> = constraint_breaking.to_vec();
    expected.sort();
    assert_eq!(broke_constraint, expected);
}

#[test]
fn presumed_redundant_conditions_never_block_weakly_consistent_inputs() {
    let cfg = cfg();
    let k = 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    // collect the redundant conditions of the TC rules
    let mut redundant = Vec::new();
    for rule_kind in [RuleKind::Activation, RuleKind::Inactivation, RuleKind::Unclassification] {
        for constraint in ConstraintKind::ALL {
            for d in refine_pair(rule_kind, constraint, &cfg).unwrap() {
                if d.category == Category::PresumedRedundant {
                    redundant.push((rule_kind, d));
                }
            }
        }
    }
    assert!(!redundant.is_empty());
    let mut evaluations = 0usize;
    for round in 0..400 {
        // weakly consistent topology with a mix of states
        let n = rng.gen_range(3..8);
        let mut t = Topology::new();
        let mut pos = Vec::new();
        for _ in 0..n {
            t.add_node();
            pos.push((rng.gen::<f64>() * 100.0, rng.gen::<f64>() * 100.0));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let d: f64 = ((pos[i].0 - pos[j].0).powi(2) + (pos[i].1 - pos[j].1).powi(2)).sqrt();
                if d <= 70.0 && d > 0.0 {
                    t.add_link(NodeId(i as u64), NodeId(j as u64), d).unwrap();
                    t.add_link(NodeId(j as u64), NodeId(i as u64), d).unwrap();
                }
            }
        }
        incremental_ktc(&mut t, &KtcOptions::new(k)).unwrap();
        let links: Vec<LinkId> = t.links().map(|l| l.id).collect();
        if links.is_empty() {
            continue;
        }
        // park a few links back in the unclassified state via the handler
        for _ in 0..rng.gen_range(0..3) {
            let e = links[rng.gen_range(0..links.len())];
            topoctl_core::handler::handle_unclassification(&mut t, e, k, ModificationCause::CeHandling)
                .unwrap();
        }
        assert!(pattern::check_weak_consistency(&t, k).fulfilled);
        for (rule_kind, d) in &redundant {
            // evaluate at every binding where the rule's own link state
            // admits an application
            let lhs_mask = d.condition.premise.links[0].state;
            for link in t.links() {
                if !lhs_mask.allows(link.state) {
                    continue;
                }
                let m = pattern::PatternMatch { nodes: vec![link.src, link.tgt], links: vec![link.id] };
                evaluations += 1;
                assert!(
                    d.condition.fulfilled(&t, k, &m),
                    "round {round}: presumed-redundant {} ({}) fired at {}",
                    d.condition.name,
                    rule_kind.label(),
                    link.id
                );
            }
        }
    }
    assert!(evaluations > 10_000, "only {evaluations} evaluations");
}

/// The four classic violation scenarios (k = 2): each appears when the
/// guards are disabled and is prevented (or repaired) when they are on.
mod violation_scenarios {
    use super::*;
    use topoctl_core::handler;
    use topoctl_core::pattern::{active_link_constraint, inactive_link_constraint};

    const K: f64 = 2.0;

    #[test]
    fn activation_completes_a_forbidden_triangle() {
        // triangle 1->2 (unclassified, 5), 1->3 (active, 1), 3->2 (active, 2)
        let mut t = Topology::new();
        let n1 = t.add_node();
        let n2 = t.add_node();
        let n3 = t.add_node();
        let e12 = t.add_link(n1, n2, 5.0).unwrap();
        let e13 = t.add_link(n1, n3, 1.0).unwrap();
        let e32 = t.add_link(n3, n2, 2.0).unwrap();
        for e in [e13, e32] {
            t.set_state(e, LinkState::Active, ModificationCause::TcInvocation).unwrap();
        }
        // unguarded: the constraint breaks
        let mut unguarded = t.clone();
        unguarded.set_state(e12, LinkState::Active, ModificationCause::TcInvocation).unwrap();
        assert!(!check_constraint(&unguarded, &active_link_constraint(), K).fulfilled);
        // guarded: blocked
        let r = rule::activation_rule();
        let binding = Binding::for_link(&r.lhs, 0, t.link(e12).unwrap());
        let out =
            rule::try_apply(&r, &mut t, &binding, RuleArgs::default(), K, ModificationCause::TcInvocation, false)
                .unwrap();
        assert!(matches!(out, Outcome::Inapplicable(_)));
        assert!(check_constraint(&t, &active_link_constraint(), K).fulfilled);
    }

    #[test]
    fn link_removal_destroys_the_sole_witness() {
        // inactive 1->2 (5) witnessed only by (1->3 active 1, 3->2 active 2)
        let mut t = Topology::new();
        let n1 = t.add_node();
        let n2 = t.add_node();
        let n3 = t.add_node();
        let e12 = t.add_link(n1, n2, 5.0).unwrap();
        let e13 = t.add_link(n1, n3, 1.0).unwrap();
        let e32 = t.add_link(n3, n2, 2.0).unwrap();
        t.set_state(e12, LinkState::Inactive, ModificationCause::TcInvocation).unwrap();
        for e in [e13, e32] {
            t.set_state(e, LinkState::Active, ModificationCause::TcInvocation).unwrap();
        }
        let mut unhandled = t.clone();
        unhandled.remove_link(e13).unwrap();
        assert!(!check_constraint(&unhandled, &inactive_link_constraint(), K).fulfilled);
        // the handler repairs by cascading the unclassification
        let trace = handler::handle_link_removal(&mut t, e13, K).unwrap();
        assert_eq!(trace.cascade, vec![e12]);
        assert!(pattern::check_weak_consistency(&t, K).fulfilled);
    }

    #[test]
    fn inactivation_of_a_side_completes_a_forbidden_triangle() {
        // 1->2 active (5), 1->3 unclassified (1), 3->2 active (2): the
        // triangle was no violation while 1->3 stayed unclassified
        let mut t = Topology::new();
        let n1 = t.add_node();
        let n2 = t.add_node();
        let n3 = t.add_node();
        let e12 = t.add_link(n1, n2, 5.0).unwrap();
        let e13 = t.add_link(n1, n3, 1.0).unwrap();
        let e32 = t.add_link(n3, n2, 2.0).unwrap();
        for e in [e12, e32] {
            t.set_state(e, LinkState::Active, ModificationCause::TcInvocation).unwrap();
        }
        assert!(check_constraint(&t, &active_link_constraint(), K).fulfilled);
        let mut unguarded = t.clone();
        unguarded.set_state(e13, LinkState::Inactive, ModificationCause::TcInvocation).unwrap();
        assert!(!check_constraint(&unguarded, &active_link_constraint(), K).fulfilled);
        // guarded: the inactivation rule refuses (1->3 is not the
        // unique weight-max of any classified triangle)
        let r = rule::inactivation_rule();
        let binding = Binding::for_link(&r.lhs, 0, t.link(e13).unwrap());
        let out =
            rule::try_apply(&r, &mut t, &binding, RuleArgs::default(), K, ModificationCause::TcInvocation, false)
                .unwrap();
        assert!(matches!(out, Outcome::Inapplicable(_)));
    }

    #[test]
    fn weight_modification_unclassifies_the_sole_witness_side() {
        // inactive 1->2 (6) witnessed only by (1->3 active 5, 3->2 active 1);
        // setting w(1->3) = 3 would keep the numbers valid, but the rule
        // unclassifies the link and the witness is gone
        let mut t = Topology::new();
        let n1 = t.add_node();
        let n2 = t.add_node();
        let n3 = t.add_node();
        let e12 = t.add_link(n1, n2, 6.0).unwrap();
        let e13 = t.add_link(n1, n3, 5.0).unwrap();
        let e32 = t.add_link(n3, n2, 1.0).unwrap();
        t.set_state(e12, LinkState::Inactive, ModificationCause::TcInvocation).unwrap();
        for e in [e13, e32] {
            t.set_state(e, LinkState::Active, ModificationCause::TcInvocation).unwrap();
        }
        assert!(check_constraint(&t, &inactive_link_constraint(), K).fulfilled);
        let mut unhandled = t.clone();
        unhandled.set_weight(e13, 3.0, ModificationCause::CeHandling).unwrap();
        assert!(!check_constraint(&unhandled, &inactive_link_constraint(), K).fulfilled);
        // the handler cascades the repair
        let trace = handler::handle_weight_modification(&mut t, e13, 3.0, K).unwrap();
        assert_eq!(trace.cascade, vec![e13, e12]);
        assert!(pattern::check_weak_consistency(&t, K).fulfilled);
    }
}

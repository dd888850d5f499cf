//! Restoration operations for the unrestrictable rules and the
//! termination-enforcing pre-processing step.
//!
//! Unclassification, link removal and weight modification may destroy
//! the witnessing triangle of an inactive link. Each handler applies the
//! structural edit unconditionally, then scans the four orientations in
//! which an inactive link can be incident to the edited link's endpoints
//! and recursively unclassifies every inactive link left without a
//! witness. Termination is guaranteed because each recursion step
//! unclassifies at least one classified link.

use thiserror::Error;

use crate::pattern::{self, Binding, PatternMatch};
use crate::rule::{witness_condition, Orientation};
use crate::topology::{
    ContextEvent, LinkId, LinkState, ModificationCause, NodeId, Topology, TopologyError,
};

/// Record of one handler invocation: which links got unclassified, and
/// how deep the recursion went.
#[derive(Debug, Clone, PartialEq)]
pub struct RestorationTrace {
    pub trigger: String,
    pub cascade: Vec<LinkId>,
    pub depth: usize,
}

impl RestorationTrace {
    fn new(trigger: impl Into<String>) -> RestorationTrace {
        RestorationTrace { trigger: trigger.into(), cascade: Vec::new(), depth: 0 }
    }

    /// One structured line per trace, for logs and the scope metric.
    pub fn render(&self) -> String {
        let cascade: Vec<String> = self.cascade.iter().map(|e| e.to_string()).collect();
        format!("restore trigger={} cascade=[{}] depth={}", self.trigger, cascade.join(","), self.depth)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum HandlerError {
    #[error("{0}")]
    Topology(#[from] TopologyError),
    #[error("link {0} is not unclassified")]
    WrongState(LinkId),
}

/// Violating inactive links around `(src, tgt)`: for each orientation,
/// every inactive link incident per that orientation whose witnessing
/// triangles are all gone. Implemented by matching the negated witness
/// conditions (premise matched, no conclusion extension), the same
/// patterns the refinement engine derives.
#[cfg_attr(not(test), allow(dead_code))]
fn identification_conditions() -> &'static [crate::rule::ApplicationCondition; 4] {
    // anchor vars 1, 2 are bound to the edited link's endpoints; the
    // anchor link itself may no longer exist, so the identification
    // patterns carry the endpoints only
    static CONDS: std::sync::OnceLock<[crate::rule::ApplicationCondition; 4]> = std::sync::OnceLock::new();
    CONDS.get_or_init(|| Orientation::ALL.map(|o| witness_condition(None, o, true)))
}

/// Reference implementation of the violation scan: matches the negated
/// witness conditions of all four orientations. The production scan
/// below is the equivalent direct form; a test keeps them in sync.
#[cfg_attr(not(test), allow(dead_code))]
fn witnessless_by_patterns(t: &Topology, src: NodeId, tgt: NodeId, k: f64) -> Vec<LinkId> {
    let mut violating = Vec::new();
    for cond in identification_conditions() {
        let binding = Binding { nodes: vec![(0, src), (1, tgt)], links: vec![] };
        for m in pattern::find_matches(t, &cond.premise, k, &binding) {
            let witnessed = cond.conclusions.iter().any(|c| pattern::extends(t, c, k, &m));
            if !witnessed {
                violating.push(*m.links.last().unwrap());
            }
        }
    }
    violating.sort();
    violating.dedup();
    violating
}

pub(crate) fn has_witness(t: &Topology, g: &crate::topology::Link, k: f64) -> bool {
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

/// Inactive links left without any witnessing triangle by an edit of
/// the link (or former link) `src -> tgt`. On a weakly consistent input
/// an edit can only orphan witnesses that ran through the edited pair,
/// so only outgoing links of `src` witnessed via `tgt` and incoming
/// links of `tgt` witnessed via `src` are candidates; the remaining two
/// orientations of the identification conditions can never fire.
fn witnessless_inactive_around(t: &Topology, src: NodeId, tgt: NodeId, k: f64) -> Vec<LinkId> {
    let mut violating = Vec::new();
    for g in t.out_links(src) {
        if g.state == LinkState::Inactive
            && t.link_between(tgt, g.tgt).is_some()
            && !has_witness(t, g, k)
        {
            violating.push(g.id);
        }
    }
    for g in t.in_links(tgt) {
        if g.state == LinkState::Inactive
            && t.link_between(g.src, src).is_some()
            && !has_witness(t, g, k)
        {
            violating.push(g.id);
        }
    }
    violating.sort();
    violating.dedup();
    violating
}

fn unclassify_and_restore(
    t: &mut Topology,
    e: LinkId,
    k: f64,
    cause: ModificationCause,
    trace: &mut RestorationTrace,
    depth: usize,
) -> Result<(), HandlerError> {
    let link = t.link(e).ok_or(TopologyError::UnknownLink(e))?;
    if link.state == LinkState::Unclassified {
        return Ok(());
    }
    let (src, tgt) = (link.src, link.tgt);
    t.set_state(e, LinkState::Unclassified, cause)?;
    trace.cascade.push(e);
    trace.depth = trace.depth.max(depth);
    restore_around(t, src, tgt, k, cause, trace, depth)
}

fn restore_around(
    t: &mut Topology,
    src: NodeId,
    tgt: NodeId,
    k: f64,
    cause: ModificationCause,
    trace: &mut RestorationTrace,
    depth: usize,
) -> Result<(), HandlerError> {
    // deterministic cascade order: ascending link id among simultaneous
    // violations
    for g in witnessless_inactive_around(t, src, tgt, k) {
        // a deeper recursion may have handled g already
        if t.link(g).map(|l| l.state) == Some(LinkState::Inactive) {
            unclassify_and_restore(t, g, k, cause, trace, depth + 1)?;
        }
    }
    Ok(())
}

/// Unclassifies `e` and repairs every inactive link whose sole
/// witnessing triangle used `e`. No-op trace when `e` is already
/// unclassified.
pub fn handle_unclassification(
    t: &mut Topology,
    e: LinkId,
    k: f64,
    cause: ModificationCause,
) -> Result<RestorationTrace, HandlerError> {
    let mut trace = RestorationTrace::new(format!("unclassification({e})"));
    t.link(e).ok_or(TopologyError::UnknownLink(e))?;
    unclassify_and_restore(t, e, k, cause, &mut trace, 0)?;
    Ok(trace)
}

/// Removes `e` unconditionally, then repairs around its former
/// endpoints.
pub fn handle_link_removal(t: &mut Topology, e: LinkId, k: f64) -> Result<RestorationTrace, HandlerError> {
    let mut trace = RestorationTrace::new(format!("link-removal({e})"));
    let link = t.remove_link(e)?;
    restore_around(t, link.src, link.tgt, k, ModificationCause::CeHandling, &mut trace, 0)?;
    Ok(trace)
}

/// Applies the weight change (which unclassifies `e`), then repairs
/// around `e`'s endpoints.
pub fn handle_weight_modification(
    t: &mut Topology,
    e: LinkId,
    w_new: f64,
    k: f64,
) -> Result<RestorationTrace, HandlerError> {
    let mut trace = RestorationTrace::new(format!("weight-modification({e})"));
    let link = t.link(e).ok_or(TopologyError::UnknownLink(e))?;
    let (src, tgt, was_classified) = (link.src, link.tgt, link.state.is_classified());
    t.set_weight(e, w_new, ModificationCause::CeHandling)?;
    if was_classified {
        trace.cascade.push(e);
    }
    restore_around(t, src, tgt, k, ModificationCause::CeHandling, &mut trace, 0)?;
    Ok(trace)
}

/// Applies one context event through its handler. Node and link
/// additions cannot violate weak consistency; node removal insists on
/// isolation (the environment removes links first).
pub fn handle_context_event(
    t: &mut Topology,
    ce: &ContextEvent,
    k: f64,
) -> Result<RestorationTrace, HandlerError> {
    match *ce {
        ContextEvent::NodeAddition(id) => {
            t.insert_node(id)?;
            Ok(RestorationTrace::new(format!("node-addition({id})")))
        }
        ContextEvent::NodeRemoval(id) => {
            t.remove_node(id)?;
            Ok(RestorationTrace::new(format!("node-removal({id})")))
        }
        ContextEvent::LinkAddition { src, tgt, weight } => {
            let e = t.add_link(src, tgt, weight)?;
            Ok(RestorationTrace::new(format!("link-addition({e})")))
        }
        ContextEvent::LinkRemoval(e) => handle_link_removal(t, e, k),
        ContextEvent::WeightModification { link, weight } => handle_weight_modification(t, link, weight, k),
    }
}

/// Unclassifies the weight-maximal link of every triangle that blocks
/// both the activation and the inactivation of the unclassified link
/// `e` (an active neighbor that is the unique weight-max of a triangle
/// containing `e` and satisfies the k-condition). Afterwards exactly one
/// of activation/inactivation applies to `e`.
///
/// Only links strictly heavier than `e` are ever unclassified here; the
/// whole cascade obeys that bound, which is what makes the processing
/// loop terminate.
pub fn preprocess_link(t: &mut Topology, e: LinkId, k: f64) -> Result<RestorationTrace, HandlerError> {
    let link = t.link(e).ok_or(TopologyError::UnknownLink(e))?;
    if link.state != LinkState::Unclassified {
        return Err(HandlerError::WrongState(e));
    }
    let weight = link.weight;
    let mut trace = RestorationTrace::new(format!("preprocess({e})"));
    loop {
        let Some(blocker) = min_blocking_neighbor(t, e, k) else { break };
        debug_assert!(t.link(blocker).unwrap().weight > weight);
        unclassify_and_restore(t, blocker, k, ModificationCause::TcInvocation, &mut trace, 0)?;
    }
    for g in &trace.cascade {
        let w = t.link(*g).map(|l| l.weight).unwrap_or(f64::INFINITY);
        assert!(
            w > weight,
            "pre-processing unclassified {g} (weight {w}) which is not heavier than {e} (weight {weight})"
        );
    }
    Ok(trace)
}

/// Smallest-id active neighbor of `e` that blocks both TC rules: the
/// unique weight-max of a triangle containing `e`, with
/// `w(max) > max(w(e), w(third))` and `w(max) >= k*min(w(e), w(third))`.
/// Matches the two neighbor-max premises through the adjacency indices.
fn min_blocking_neighbor(t: &Topology, e: LinkId, k: f64) -> Option<LinkId> {
    let link = t.link(e)?;
    let mut best: Option<LinkId> = None;
    let mut consider = |candidate: &crate::topology::Link, third: &crate::topology::Link| {
        if candidate.state != LinkState::Active || !third.state.is_classified() {
            return;
        }
        let lo = link.weight.min(third.weight);
        let hi = link.weight.max(third.weight);
        if candidate.weight > hi && candidate.weight >= k * lo {
            best = match best {
                Some(b) if b <= candidate.id => Some(b),
                _ => Some(candidate.id),
            };
        }
    };
    // heavy link leaves e's source: triangle (13; 12, 23)
    for heavy in t.out_links(link.src) {
        if heavy.id == e {
            continue;
        }
        if let Some(third) = t.link_between(link.tgt, heavy.tgt) {
            consider(heavy, t.link(third).unwrap());
        }
    }
    // heavy link enters e's target: triangle (32; 31, 12)
    for heavy in t.in_links(link.tgt) {
        if heavy.id == e {
            continue;
        }
        if let Some(third) = t.link_between(heavy.src, link.src) {
            consider(heavy, t.link(third).unwrap());
        }
    }
    best
}

/// Pattern-level equivalent of [`preprocess_link`]'s blocking scan, used
/// to cross-check the adjacency implementation against the shipped
/// neighbor-max premises.
pub fn blocking_matches_via_patterns(t: &Topology, e: LinkId, k: f64) -> Vec<PatternMatch> {
    let link = t.link(e).expect("link exists");
    let mut out = Vec::new();
    for out_of_source in [true, false] {
        let premise = crate::rule::neighbor_max_premise(crate::pattern::StateMask::UNCLASSIFIED, out_of_source);
        let binding = Binding::for_link(&premise, 0, link);
        out.extend(pattern::find_matches(t, &premise, k, &binding));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::{check_strong_consistency, check_weak_consistency};
    use crate::topology::ModificationCause::CeHandling as Ce;

    const K: f64 = 2.0;

    /// Triangle with ab/ba (4) inactive and the four short links active:
    /// the strongly consistent classification for k=2.
    fn t1_classified() -> (Topology, [LinkId; 6]) {
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
        use crate::topology::ModificationCause::TcInvocation as Tc;
        t.set_state(links[0], LinkState::Inactive, Tc).unwrap();
        t.set_state(links[1], LinkState::Inactive, Tc).unwrap();
        for e in &links[2..] {
            t.set_state(*e, LinkState::Active, Tc).unwrap();
        }
        (t, links)
    }

    #[test]
    fn unclassifying_sole_witness_side_cascades() {
        let (mut t, links) = t1_classified();
        let trace = handle_unclassification(&mut t, links[2], K, Ce).unwrap();
        // ac loses classification, ab loses its only witness
        assert_eq!(trace.cascade, vec![links[2], links[0]]);
        assert_eq!(t.link(links[0]).unwrap().state, LinkState::Unclassified);
        // ba keeps its witness (bc, ca) and stays inactive
        assert_eq!(t.link(links[1]).unwrap().state, LinkState::Inactive);
        assert!(check_weak_consistency(&t, K).fulfilled);
    }

    #[test]
    fn unclassifying_link_without_inactive_neighbors_is_local() {
        let (mut t, links) = t1_classified();
        // first park ab/ba out of the way so cb has no inactive neighbor
        handle_unclassification(&mut t, links[0], K, Ce).unwrap();
        handle_unclassification(&mut t, links[1], K, Ce).unwrap();
        let trace = handle_unclassification(&mut t, links[4], K, Ce).unwrap();
        assert_eq!(trace.cascade, vec![links[4]]);
    }

    #[test]
    fn already_unclassified_is_a_noop() {
        let (mut t, links) = t1_classified();
        handle_unclassification(&mut t, links[2], K, Ce).unwrap();
        let before = t.journal_len();
        let trace = handle_unclassification(&mut t, links[2], K, Ce).unwrap();
        assert!(trace.cascade.is_empty());
        assert_eq!(t.journal_len(), before);
    }

    #[test]
    fn alternate_witness_prevents_cascade() {
        // inactive ab with two witnessing triangles (via c and via d);
        // unclassifying one side keeps the other witness alive.
        let mut t = Topology::new();
        let a = t.add_node();
        let b = t.add_node();
        let c = t.add_node();
        let d = t.add_node();
        use crate::topology::ModificationCause::TcInvocation as Tc;
        let ab = t.add_link(a, b, 4.0).unwrap();
        let ac = t.add_link(a, c, 1.0).unwrap();
        let cb = t.add_link(c, b, 2.0).unwrap();
        let ad = t.add_link(a, d, 1.5).unwrap();
        let db = t.add_link(d, b, 1.5).unwrap();
        t.set_state(ab, LinkState::Inactive, Tc).unwrap();
        for e in [ac, cb, ad, db] {
            t.set_state(e, LinkState::Active, Tc).unwrap();
        }
        let trace = handle_unclassification(&mut t, ac, K, Ce).unwrap();
        assert_eq!(trace.cascade, vec![ac]);
        assert_eq!(t.link(ab).unwrap().state, LinkState::Inactive);
    }

    #[test]
    fn link_removal_restores_weak_consistency() {
        let (mut t, links) = t1_classified();
        let trace = handle_link_removal(&mut t, links[2], K).unwrap();
        assert!(t.link(links[2]).is_none());
        assert_eq!(trace.cascade, vec![links[0]]);
        assert!(check_weak_consistency(&t, K).fulfilled);
    }

    #[test]
    fn removal_in_all_unclassified_topology_has_empty_cascade() {
        let mut t = Topology::new();
        let a = t.add_node();
        let b = t.add_node();
        let c = t.add_node();
        t.add_link(a, b, 4.0).unwrap();
        let ac = t.add_link(a, c, 1.0).unwrap();
        t.add_link(c, b, 2.0).unwrap();
        let trace = handle_link_removal(&mut t, ac, K).unwrap();
        assert!(trace.cascade.is_empty());
    }

    #[test]
    fn weight_modification_unclassifies_by_rule_without_extra_cascade() {
        // modifying the inactive link itself: the rule unclassifies it,
        // no other inactive link is affected
        let (mut t, links) = t1_classified();
        handle_unclassification(&mut t, links[1], K, Ce).unwrap(); // park ba
        let trace = handle_weight_modification(&mut t, links[0], 3.0, K).unwrap();
        assert_eq!(trace.cascade, vec![links[0]]);
        assert_eq!(t.link(links[0]).unwrap().state, LinkState::Unclassified);
        assert_eq!(t.link(links[0]).unwrap().weight, 3.0);
        assert!(check_weak_consistency(&t, K).fulfilled);
    }

    #[test]
    fn weight_modification_of_witness_side_cascades() {
        let (mut t, links) = t1_classified();
        let trace = handle_weight_modification(&mut t, links[2], 1.2, K).unwrap();
        assert_eq!(trace.cascade, vec![links[2], links[0]]);
        assert!(check_weak_consistency(&t, K).fulfilled);
    }

    #[test]
    fn preprocess_unclassifies_blocking_heavier_link() {
        // the non-termination triangle: w(12)=1 < w(23)=1.5 < w(13)=3,
        // e23 and e13 active, e12 unclassified; 13 blocks both rules at
        // 12 and gets unclassified.
        let mut t = Topology::new();
        let n1 = t.add_node();
        let n2 = t.add_node();
        let n3 = t.add_node();
        use crate::topology::ModificationCause::TcInvocation as Tc;
        let e12 = t.add_link(n1, n2, 1.0).unwrap();
        let e23 = t.add_link(n2, n3, 1.5).unwrap();
        let e13 = t.add_link(n1, n3, 3.0).unwrap();
        t.set_state(e23, LinkState::Active, Tc).unwrap();
        t.set_state(e13, LinkState::Active, Tc).unwrap();
        let trace = preprocess_link(&mut t, e12, K).unwrap();
        assert_eq!(trace.cascade, vec![e13]);
        assert_eq!(t.link(e13).unwrap().state, LinkState::Unclassified);
        assert_eq!(t.link(e23).unwrap().state, LinkState::Active);
        // now activation applies to e12 (no classified triangle blocks)
        let rule = crate::rule::activation_rule();
        let binding = Binding::for_link(&rule.lhs, 0, t.link(e12).unwrap());
        let out = crate::rule::try_apply(&rule, &mut t, &binding, Default::default(), K, Tc, false).unwrap();
        assert!(matches!(out, crate::rule::Outcome::Applied(_)));
    }

    #[test]
    fn preprocess_noop_cases() {
        let mut t = Topology::new();
        let a = t.add_node();
        let b = t.add_node();
        let e = t.add_link(a, b, 5.0).unwrap();
        // no classified triangles at all
        let trace = preprocess_link(&mut t, e, K).unwrap();
        assert!(trace.cascade.is_empty());
        // wrong state
        t.set_state(e, LinkState::Active, Ce).unwrap();
        assert_eq!(preprocess_link(&mut t, e, K), Err(HandlerError::WrongState(e)));
        assert!(matches!(
            preprocess_link(&mut t, LinkId(99), K),
            Err(HandlerError::Topology(TopologyError::UnknownLink(_)))
        ));
    }

    #[test]
    fn preprocess_skips_triangles_where_e_is_max() {
        // e is the unique max itself: nothing blocks, inactivation path
        let (mut t, links) = t1_classified();
        handle_unclassification(&mut t, links[0], K, Ce).unwrap();
        let trace = preprocess_link(&mut t, links[0], K).unwrap();
        assert!(trace.cascade.is_empty());
    }

    #[test]
    fn direct_scan_agrees_with_pattern_identification() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for round in 0..300 {
            let k = if round % 2 == 0 { 2.0 } else { 1.41 };
            // random geometric topology, classified, then one raw edit
            let n = rng.gen_range(3..9);
            let mut t = Topology::new();
            let mut pos = Vec::new();
            for _ in 0..n {
                t.add_node();
                pos.push((rng.gen::<f64>() * 100.0, rng.gen::<f64>() * 100.0));
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    let d: f64 = ((pos[i].0 - pos[j].0).powi(2) + (pos[i].1 - pos[j].1).powi(2)).sqrt();
                    if d <= 65.0 && d > 0.0 {
                        t.add_link(crate::topology::NodeId(i as u64), crate::topology::NodeId(j as u64), d)
                            .unwrap();
                        t.add_link(crate::topology::NodeId(j as u64), crate::topology::NodeId(i as u64), d)
                            .unwrap();
                    }
                }
            }
            crate::ktc::incremental_ktc(&mut t, &crate::ktc::KtcOptions::new(k)).unwrap();
            let links: Vec<_> = t.links().map(|l| (l.id, l.src, l.tgt)).collect();
            if links.is_empty() {
                continue;
            }
            let (e, src, tgt) = links[rng.gen_range(0..links.len())];
            // raw mid-handler edit: unclassify or remove without repair
            if rng.gen_bool(0.5) {
                t.set_state(e, LinkState::Unclassified, Ce).unwrap();
            } else {
                t.remove_link(e).unwrap();
            }
            assert_eq!(
                super::witnessless_inactive_around(&t, src, tgt, k),
                super::witnessless_by_patterns(&t, src, tgt, k),
                "scan divergence at round {round}"
            );
        }
    }

    #[test]
    fn adjacency_scan_agrees_with_pattern_matching() {
        let mut t = Topology::new();
        let n1 = t.add_node();
        let n2 = t.add_node();
        let n3 = t.add_node();
        use crate::topology::ModificationCause::TcInvocation as Tc;
        let e12 = t.add_link(n1, n2, 1.0).unwrap();
        let e23 = t.add_link(n2, n3, 1.5).unwrap();
        let e13 = t.add_link(n1, n3, 3.0).unwrap();
        t.set_state(e23, LinkState::Active, Tc).unwrap();
        t.set_state(e13, LinkState::Active, Tc).unwrap();
        let matches = blocking_matches_via_patterns(&t, e12, K);
        assert_eq!(matches.len(), 1);
        let direct = super::min_blocking_neighbor(&t, e12, K);
        assert_eq!(direct, Some(e13));
    }

    #[test]
    fn ce_sequence_keeps_weak_consistency() {
        let (mut t, links) = t1_classified();
        handle_context_event(&mut t, &ContextEvent::NodeAddition(NodeId(77)), K).unwrap();
        handle_context_event(
            &mut t,
            &ContextEvent::LinkAddition { src: NodeId(77), tgt: NodeId(0), weight: 2.5 },
            K,
        )
        .unwrap();
        handle_context_event(&mut t, &ContextEvent::WeightModification { link: links[4], weight: 0.5 }, K)
            .unwrap();
        handle_context_event(&mut t, &ContextEvent::LinkRemoval(links[2]), K).unwrap();
        assert!(check_weak_consistency(&t, K).fulfilled);
        assert!(!check_strong_consistency(&t, K).fulfilled);
        t.audit().unwrap();
    }
}

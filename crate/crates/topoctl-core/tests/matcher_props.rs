//! Property tests: backtracking matcher against exhaustive enumeration,
//! connectivity hierarchy, serialization round trips.

use proptest::prelude::*;

use topoctl_core::pattern::{
    self, connectivity, Binding, CmpOp, ConnectivityLevel, GraphPattern, PatternMatch, StateMask,
    WeightTerm,
};
use topoctl_core::text;
use topoctl_core::topology::{LinkId, LinkState, ModificationCause, NodeId, Topology};

/// Exhaustive, index-free oracle: every injective node assignment is
/// enumerated; link images are found by scanning the full link list;
/// attribute constraints evaluated directly. Independent of the
/// adjacency-driven search it checks.
fn brute_force_matches(t: &Topology, p: &GraphPattern, k: f64) -> Vec<PatternMatch> {
    let nodes: Vec<NodeId> = t.node_ids().collect();
    let all_links: Vec<_> = t.links().cloned().collect();
    let mut out = Vec::new();
    let mut assign = vec![NodeId(u64::MAX); p.node_count()];
    fn recurse(
        t: &Topology,
        p: &GraphPattern,
        k: f64,
        nodes: &[NodeId],
        all_links: &[topoctl_core::topology::Link],
        assign: &mut Vec<NodeId>,
        depth: usize,
        out: &mut Vec<PatternMatch>,
    ) {
        if depth == p.node_count() {
            // resolve links by scanning
            let mut links = Vec::new();
            for l in &p.links {
                let found = all_links.iter().find(|cand| {
                    cand.src == assign[l.src] && cand.tgt == assign[l.tgt] && l.state.allows(cand.state)
                });
                match found {
                    Some(cand) if !links.contains(&cand.id) => links.push(cand.id),
                    _ => return,
                }
            }
            // weights
            let weights: Vec<f64> = links
                .iter()
                .map(|id| t.link(*id).unwrap().weight)
                .collect();
            let eval = |term: &WeightTerm| -> f64 {
                let base = match term.arg {
                    pattern::WeightArg::Link(v) => weights[v],
                    pattern::WeightArg::MinOf(a, b) => weights[a].min(weights[b]),
                    pattern::WeightArg::MaxOf(a, b) => weights[a].max(weights[b]),
                    pattern::WeightArg::Const(c) => c,
                    pattern::WeightArg::NewWeightParam => f64::NAN,
                };
                match term.coeff {
                    pattern::Coeff::One => base,
                    pattern::Coeff::K => k * base,
                }
            };
            if p.weight_cmps.iter().all(|c| c.op.holds(eval(&c.lhs), eval(&c.rhs))) {
                out.push(PatternMatch { nodes: assign.clone(), links });
            }
            return;
        }
        for &n in nodes {
            if assign[..depth].contains(&n) {
                continue;
            }
            assign[depth] = n;
            recurse(t, p, k, nodes, all_links, assign, depth + 1, out);
        }
    }
    recurse(t, p, k, &nodes, &all_links, &mut assign, 0, &mut out);
    out.sort();
    out
}

#[derive(Debug, Clone)]
struct ArbTopology {
    nodes: usize,
    edges: Vec<(usize, usize, f64, u8)>,
}

fn arb_topology() -> impl Strategy<Value = ArbTopology> {
    (3usize..=5)
        .prop_flat_map(|n| {
            let edge = (0..n, 0..n, 0.5f64..8.0, 0u8..3);
            (Just(n), proptest::collection::vec(edge, 0..14))
        })
        .prop_map(|(nodes, edges)| ArbTopology { nodes, edges })
}

fn build(spec: &ArbTopology) -> Topology {
    let mut t = Topology::new();
    for _ in 0..spec.nodes {
        t.add_node();
    }
    for (src, tgt, w, state) in &spec.edges {
        if let Ok(e) = t.add_link(NodeId(*src as u64), NodeId(*tgt as u64), *w) {
            let s = match state {
                0 => LinkState::Active,
                1 => LinkState::Inactive,
                _ => LinkState::Unclassified,
            };
            t.set_state(e, s, ModificationCause::TcInvocation).unwrap();
        }
    }
    t
}

#[derive(Debug, Clone)]
struct ArbPattern {
    nodes: usize,
    links: Vec<(usize, usize, u8)>,
    cmp: Option<(usize, usize, usize, bool)>,
}

fn arb_pattern() -> impl Strategy<Value = ArbPattern> {
    (2usize..=3)
        .prop_flat_map(|n| {
            let link = (0..n, 0..n, 0u8..5);
            (Just(n), proptest::collection::vec(link, 1..4), proptest::option::of((0usize..3, 0usize..3, 0usize..3, any::<bool>())))
        })
        .prop_map(|(nodes, links, cmp)| ArbPattern { nodes, links, cmp })
}

fn build_pattern(spec: &ArbPattern) -> GraphPattern {
    let names: Vec<String> = (0..spec.nodes).map(|i| format!("v{i}")).collect();
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let mut p = GraphPattern::new(&name_refs);
    for (i, (src, tgt, mask)) in spec.links.iter().enumerate() {
        let state = match mask {
            0 => StateMask::ANY,
            1 => StateMask::ACTIVE,
            2 => StateMask::INACTIVE,
            3 => StateMask::UNCLASSIFIED,
            _ => StateMask::CLASSIFIED,
        };
        p.add_link(&format!("l{i}"), *src, *tgt, state);
    }
    if let Some((a, b, c, use_k_min)) = spec.cmp {
        let nl = p.links.len();
        let (a, b, c) = (a % nl, b % nl, c % nl);
        if use_k_min {
            p.add_cmp(WeightTerm::link(a), CmpOp::Ge, WeightTerm::k_min_of(b, c));
        } else {
            p.add_cmp(WeightTerm::link(a), CmpOp::Gt, WeightTerm::max_of(b, c));
        }
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    /// Every match the search returns is injective and satisfying, and
    /// every injective satisfying assignment is returned.
    #[test]
    fn matcher_agrees_with_exhaustive_enumeration(tspec in arb_topology(), pspec in arb_pattern()) {
        let t = build(&tspec);
        let p = build_pattern(&pspec);
        let k = 1.41;
        let fast = pattern::find_matches(&t, &p, k, &Binding::default());
        let slow = brute_force_matches(&t, &p, k);
        prop_assert_eq!(fast, slow);
    }

    /// Strong connectivity implies weak implies physical.
    #[test]
    fn connectivity_hierarchy(tspec in arb_topology()) {
        let t = build(&tspec);
        let strong = connectivity(&t, ConnectivityLevel::Strong);
        let weak = connectivity(&t, ConnectivityLevel::Weak);
        let physical = connectivity(&t, ConnectivityLevel::Physical);
        prop_assert!(!strong || weak);
        prop_assert!(!weak || physical);
    }

    /// A weakly connected topology without unclassified links is
    /// strongly connected.
    #[test]
    fn weak_plus_fully_classified_is_strong(tspec in arb_topology()) {
        let mut t = build(&tspec);
        let ids: Vec<LinkId> = t.links().filter(|l| l.state == LinkState::Unclassified).map(|l| l.id).collect();
        for e in ids {
            t.set_state(e, LinkState::Active, ModificationCause::TcInvocation).unwrap();
        }
        if connectivity(&t, ConnectivityLevel::Weak) {
            prop_assert!(connectivity(&t, ConnectivityLevel::Strong));
        }
    }

    /// Text dumps parse back to the identical topology.
    #[test]
    fn text_round_trip(tspec in arb_topology()) {
        let t = build(&tspec);
        let dump = text::to_text(&t);
        let back = text::from_text(&dump).unwrap();
        prop_assert!(t.same_structure(&back));
        prop_assert_eq!(t.state_map(), back.state_map());
        prop_assert_eq!(text::to_text(&back), dump);
    }

    /// Structural invariants hold after arbitrary valid operation
    /// sequences (the constructor API refuses everything else).
    #[test]
    fn structural_constraints_always_hold(tspec in arb_topology()) {
        let t = build(&tspec);
        t.audit().unwrap();
        let no_loops = pattern::no_loops_constraint();
        let no_par = pattern::no_parallel_links_constraint();
        prop_assert!(pattern::check_constraint(&t, &no_loops, 2.0).fulfilled);
        prop_assert!(pattern::check_constraint(&t, &no_par, 2.0).fulfilled);
    }
}

//! The incremental kTC operation, its batch variant, a brute-force
//! classification oracle, and the termination-ordering check.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::handler::{preprocess_link, HandlerError};
use crate::pattern::{check_weak_consistency, Binding};
use crate::rule::{activation_rule, inactivation_rule, try_apply, Outcome, RefinedRule, RuleArgs};
use crate::topology::{LinkId, LinkState, ModificationCause, Topology};
use std::collections::BTreeMap;

/// Which unclassified link the processing loop picks next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkOrder {
    /// Lowest weight first, ties by link id. Minimizes pre-processing
    /// unclassifications (a link is only ever blocked by heavier links).
    Weight,
    /// Ascending link id.
    Id,
    /// Seeded random choice.
    Random,
}

impl LinkOrder {
    pub fn parse(s: &str) -> Option<LinkOrder> {
        match s {
            "weight" => Some(LinkOrder::Weight),
            "id" => Some(LinkOrder::Id),
            "random" => Some(LinkOrder::Random),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KtcOptions {
    pub k: f64,
    pub order: LinkOrder,
    /// Verify the weak-consistency precondition, evaluate handled and
    /// redundant conditions, and assert the activation/inactivation
    /// complementarity.
    pub check: bool,
    /// Seed for the random link order.
    pub seed: u64,
    /// Record the full per-iteration state sequence (small topologies;
    /// feeds the termination-ordering check).
    pub record_states: bool,
}

impl KtcOptions {
    pub fn new(k: f64) -> KtcOptions {
        KtcOptions { k, order: LinkOrder::Weight, check: false, seed: 0, record_states: false }
    }
}

/// One processing-loop iteration: the link that got classified and what
/// pre-processing unclassified for it.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub link: LinkId,
    pub link_weight: f64,
    pub preprocessed: Vec<(LinkId, f64)>,
}

#[derive(Debug, Clone)]
pub struct TcRunReport {
    /// Journal entries with cause `TcInvocation` produced by this run.
    pub lsm_count: usize,
    /// Processed unclassified links.
    pub iterations: usize,
    pub preprocessing_unclassifications: usize,
    pub terminated: bool,
    pub ordering_violation: Option<String>,
    pub iteration_log: Vec<IterationRecord>,
    /// Per-iteration link-state snapshots (first entry: initial state),
    /// present when `record_states` was set.
    pub state_sequence: Vec<Vec<LinkState>>,
    /// Weight/id order corresponding to `state_sequence` columns.
    pub state_order: Vec<(f64, LinkId)>,
}

#[derive(Debug, Error)]
pub enum KtcError {
    #[error("input topology is not weakly consistent:\n{0}")]
    PreconditionViolated(String),
    #[error("processing loop exceeded the iteration bound")]
    NonTermination,
    #[error("{0}")]
    Handler(#[from] HandlerError),
    #[error("{0}")]
    Rule(#[from] crate::rule::RuleError),
}

/// Work queue over the unclassified links. Weight and id orders run on
/// a priority queue (entries are pushed when links enter the
/// unclassified state and cannot go stale while queued, because only
/// the processing step itself classifies links); random order samples
/// the live set.
enum WorkQueue {
    Heap(std::collections::BinaryHeap<std::cmp::Reverse<(u64, u64)>>),
    Random,
}

impl WorkQueue {
    fn new(t: &Topology, order: LinkOrder) -> WorkQueue {
        match order {
            LinkOrder::Random => WorkQueue::Random,
            _ => {
                let mut heap = std::collections::BinaryHeap::new();
                for l in t.links() {
                    if l.state == LinkState::Unclassified {
                        heap.push(std::cmp::Reverse(Self::key(order, l.weight, l.id)));
                    }
                }
                WorkQueue::Heap(heap)
            }
        }
    }

    fn key(order: LinkOrder, weight: f64, id: LinkId) -> (u64, u64) {
        match order {
            // positive finite weights order consistently by their bits
            LinkOrder::Weight => (weight.to_bits(), id.0),
            _ => (id.0, 0),
        }
    }

    fn push(&mut self, order: LinkOrder, weight: f64, id: LinkId) {
        if let WorkQueue::Heap(heap) = self {
            heap.push(std::cmp::Reverse(Self::key(order, weight, id)));
        }
    }

    fn pop(&mut self, t: &Topology, order: LinkOrder, rng: &mut ChaCha8Rng) -> Option<LinkId> {
        match self {
            WorkQueue::Random => t.unclassified_links().choose(rng).copied(),
            WorkQueue::Heap(heap) => {
                while let Some(std::cmp::Reverse(key)) = heap.pop() {
                    let id = match order {
                        LinkOrder::Weight => LinkId(key.1),
                        _ => LinkId(key.0),
                    };
                    if t.link(id).map(|l| l.state) == Some(LinkState::Unclassified) {
                        return Some(id);
                    }
                }
                None
            }
        }
    }
}

fn snapshot(t: &Topology, order: &[(f64, LinkId)]) -> Vec<LinkState> {
    order.iter().map(|(_, e)| t.link(*e).map(|l| l.state).unwrap_or(LinkState::Unclassified)).collect()
}

/// Links ordered ascending by weight, ties by id: the sequence positions
/// used by the termination ordering.
pub fn weight_order(t: &Topology) -> Vec<(f64, LinkId)> {
    let mut order: Vec<(f64, LinkId)> = t.links().map(|l| (l.weight, l.id)).collect();
    order.sort_by(|a, b| a.partial_cmp(b).unwrap());
    order
}

/// Processes all unclassified links: pre-process, then activate if
/// possible, else inactivate. Never touches the node or link sets.
pub fn incremental_ktc(t: &mut Topology, opts: &KtcOptions) -> Result<TcRunReport, KtcError> {
    if opts.check {
        let report = check_weak_consistency(t, opts.k);
        if !report.fulfilled {
            return Err(KtcError::PreconditionViolated(report.render()));
        }
    }
    let structure_guard = (t.node_count(), t.link_count());
    let journal_start = t.journal_len();
    let activation = activation_rule();
    let inactivation = inactivation_rule();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let state_order = weight_order(t);
    let mut report = TcRunReport {
        lsm_count: 0,
        iterations: 0,
        preprocessing_unclassifications: 0,
        terminated: false,
        ordering_violation: None,
        iteration_log: Vec::new(),
        state_sequence: Vec::new(),
        state_order: state_order.clone(),
    };
    if opts.record_states {
        report.state_sequence.push(snapshot(t, &state_order));
    }
    // Every iteration classifies its link after pre-processing
    // unclassified only strictly heavier ones; the state sequences
    // strictly ascend in the termination order, so this bound is
    // generous.
    let max_iterations = 16 + t.link_count().saturating_mul(t.link_count() + 1);
    let mut queue = WorkQueue::new(t, opts.order);
    while let Some(e) = queue.pop(t, opts.order, &mut rng) {
        report.iterations += 1;
        if report.iterations > max_iterations {
            return Err(KtcError::NonTermination);
        }
        let weight = t.link(e).unwrap().weight;
        let trace = preprocess_link(t, e, opts.k)?;
        let preprocessed: Vec<(LinkId, f64)> =
            trace.cascade.iter().map(|&g| (g, t.link(g).unwrap().weight)).collect();
        for &(g, w) in &preprocessed {
            queue.push(opts.order, w, g);
        }
        report.preprocessing_unclassifications += preprocessed.len();
        if let Some(&(g, w)) = preprocessed.iter().find(|&&(_, w)| !(w > weight)) {
            report.ordering_violation = Some(format!(
                "iteration {}: pre-processing unclassified {g} (weight {w}) while processing {e} (weight {weight})",
                report.iterations
            ));
        }
        // complementarity probe on the pre-state: the inactivation PAC's
        // conclusion equals the activation NAC's premise, so exactly one
        // of the rules must apply
        let pre_inactivation_ok = if opts.check {
            let pac = &inactivation.conditions[0];
            let link = t.link(e).unwrap();
            let m = crate::pattern::PatternMatch { nodes: vec![link.src, link.tgt], links: vec![e] };
            Some(pac.fulfilled(t, opts.k, &m))
        } else {
            None
        };
        let binding = Binding::for_link(&activation.lhs, 0, t.link(e).unwrap());
        let outcome = try_apply(&activation, t, &binding, RuleArgs::default(), opts.k, ModificationCause::TcInvocation, opts.check)?;
        let activated = matches!(outcome, Outcome::Applied(_));
        if let Some(inact_ok) = pre_inactivation_ok {
            assert!(
                activated ^ inact_ok,
                "exactly one of activation/inactivation must apply to {e} after pre-processing"
            );
        }
        if !activated {
            apply_inactivation(&inactivation, t, e, opts)?;
        }
        report.iteration_log.push(IterationRecord { link: e, link_weight: weight, preprocessed });
        if opts.record_states {
            report.state_sequence.push(snapshot(t, &state_order));
        }
    }
    report.terminated = true;
    report.lsm_count = t.journal_count_since(journal_start, ModificationCause::TcInvocation);
    assert_eq!(
        structure_guard,
        (t.node_count(), t.link_count()),
        "TC must never change the topology structure"
    );
    Ok(report)
}

/// Inactivation with the PAC evaluated as the complement of the
/// activation NAC (they are equivalent); in check mode the PAC is
/// evaluated for real and must hold.
fn apply_inactivation(
    inactivation: &RefinedRule,
    t: &mut Topology,
    e: LinkId,
    opts: &KtcOptions,
) -> Result<(), KtcError> {
    if opts.check {
        let binding = Binding::for_link(&inactivation.lhs, 0, t.link(e).unwrap());
        let outcome = try_apply(inactivation, t, &binding, RuleArgs::default(), opts.k, ModificationCause::TcInvocation, true)?;
        assert!(
            matches!(outcome, Outcome::Applied(_)),
            "activation inapplicable but inactivation blocked too at {e}"
        );
    } else {
        t.set_state(e, LinkState::Inactive, ModificationCause::TcInvocation)
            .map_err(HandlerError::from)?;
    }
    Ok(())
}

/// Unclassifies every link (each state-changing flip counted as an LSM),
/// then runs the incremental loop from scratch.
pub fn batch_ktc(t: &mut Topology, opts: &KtcOptions) -> Result<TcRunReport, KtcError> {
    let journal_start = t.journal_len();
    let ids: Vec<LinkId> = t.links().map(|l| l.id).collect();
    for e in ids {
        t.set_state(e, LinkState::Unclassified, ModificationCause::TcInvocation)
            .map_err(HandlerError::from)?;
    }
    // an all-unclassified topology is weakly consistent, so the
    // precondition holds by construction
    let mut report = incremental_ktc(t, opts)?;
    report.lsm_count = t.journal_count_since(journal_start, ModificationCause::TcInvocation);
    Ok(report)
}

/// Brute-force reference classification: a link is inactive iff some
/// directed triangle makes it the unique weight-maximal edge with
/// `w >= k*min(sides)`; structure-only, independent of rules, handlers
/// and the pattern engine.
pub fn oracle_ktc(t: &Topology, k: f64) -> BTreeMap<LinkId, LinkState> {
    let mut out = BTreeMap::new();
    for link in t.links() {
        let mut inactive = false;
        for c in t.node_ids() {
            if c == link.src || c == link.tgt {
                continue;
            }
            let (Some(ac), Some(cb)) = (t.link_between(link.src, c), t.link_between(c, link.tgt)) else {
                continue;
            };
            let w_ac = t.link(ac).unwrap().weight;
            let w_cb = t.link(cb).unwrap().weight;
            if link.weight > w_ac.max(w_cb) && link.weight >= k * w_ac.min(w_cb) {
                inactive = true;
                break;
            }
        }
        out.insert(link.id, if inactive { LinkState::Inactive } else { LinkState::Active });
    }
    out
}

/// True iff every consecutive snapshot pair satisfies the termination
/// order: some link flips from unclassified to classified while all
/// links at smaller positions (ascending weight, ties by id) are
/// unchanged.
pub fn assert_termination_ordering(states: &[Vec<LinkState>], order: &[(f64, LinkId)]) -> bool {
    for pair in states.windows(2) {
        let (s, t) = (&pair[0], &pair[1]);
        debug_assert_eq!(s.len(), order.len());
        let mut ok = false;
        for v in 0..order.len() {
            if s[v] == LinkState::Unclassified && t[v].is_classified() && s[..v] == t[..v] {
                ok = true;
                break;
            }
        }
        if !ok {
            return false;
        }
    }
    true
}

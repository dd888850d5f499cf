//! The attributed directed-graph model: nodes, weighted links with a
//! classification state, adjacency indices and a journal of link state
//! modifications.
//!
//! Structural invariants (no loops, no parallel links, positive weights)
//! are enforced by the mutation operations themselves, so every
//! reachable `Topology` value is structurally consistent.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Identifier of a node, unique within one topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u64);

/// Identifier of a link, unique within one topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

/// Classification state of a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LinkState {
    Active,
    Inactive,
    Unclassified,
}

impl LinkState {
    /// A link is classified when it is active or inactive.
    pub fn is_classified(self) -> bool {
        !matches!(self, LinkState::Unclassified)
    }

    /// Single-letter form used by the text format.
    pub fn letter(self) -> char {
        match self {
            LinkState::Active => 'A',
            LinkState::Inactive => 'I',
            LinkState::Unclassified => 'U',
        }
    }

    pub fn from_letter(c: char) -> Option<LinkState> {
        match c {
            'A' => Some(LinkState::Active),
            'I' => Some(LinkState::Inactive),
            'U' => Some(LinkState::Unclassified),
            _ => None,
        }
    }
}

impl fmt::Display for LinkState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// What triggered a link state modification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModificationCause {
    CeHandling,
    TcInvocation,
}

/// One change of a link's state; the cost unit of all incrementality
/// metrics.
#[derive(Debug, Clone, Copy)]
pub struct LinkStateModification {
    pub link: LinkId,
    pub old_state: LinkState,
    pub new_state: LinkState,
    pub cause: ModificationCause,
}

/// A directed, weighted, classified link.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: LinkId,
    pub src: NodeId,
    pub tgt: NodeId,
    pub weight: f64,
    pub state: LinkState,
}

/// Environment-caused topology change.
#[derive(Debug, Clone, PartialEq)]
pub enum ContextEvent {
    /// A node with the given id appears (isolated).
    NodeAddition(NodeId),
    /// An isolated node disappears.
    NodeRemoval(NodeId),
    /// A link appears, unclassified.
    LinkAddition { src: NodeId, tgt: NodeId, weight: f64 },
    /// A link disappears.
    LinkRemoval(LinkId),
    /// A link's weight changes; the link is unclassified as a side effect.
    WeightModification { link: LinkId, weight: f64 },
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TopologyError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown link {0}")]
    UnknownLink(LinkId),
    #[error("node {0} has incident links")]
    NodeHasIncidentLinks(NodeId),
    #[error("a link {0} -> {1} already exists")]
    ParallelLink(NodeId, NodeId),
    #[error("self loop at {0}")]
    SelfLoop(NodeId),
    #[error("link weight must be positive, got {0}")]
    NonPositiveWeight(f64),
    #[error("id {0} already in use")]
    DuplicateId(u64),
    #[error("id {0} exceeds the supported id space")]
    IdOutOfRange(u64),
}

#[derive(Debug, Clone, Default)]
struct NodeEntry {
    /// target node -> link id
    out: BTreeMap<NodeId, LinkId>,
    /// source node -> link id
    inc: BTreeMap<NodeId, LinkId>,
}

/// Explicit link ids live below this bound so the dense id-indexed
/// storage cannot be grown unboundedly by a hostile fixture.
pub const MAX_LINK_ID: u64 = 1 << 20;

/// Mutable link-weighted digraph with per-link classification state.
/// Links are stored in a dense id-indexed vector (ids are counter
/// assigned), nodes and adjacency in ordered maps; all iteration orders
/// are deterministic.
#[derive(Debug, Clone, Default)]
pub struct Topology {
    nodes: BTreeMap<NodeId, NodeEntry>,
    links: Vec<Option<Link>>,
    live_links: usize,
    journal: Vec<LinkStateModification>,
    next_node: u64,
    next_link: u64,
}

impl Topology {
    pub fn new() -> Topology {
        Topology::default()
    }

    /// Adds a fresh isolated node. Always applicable.
    pub fn add_node(&mut self) -> NodeId {
        let id = NodeId(self.next_node);
        self.next_node += 1;
        self.nodes.insert(id, NodeEntry::default());
        id
    }

    /// Inserts a node with an explicit id (fixture loading, node-addition
    /// context events). Fails if the id is taken.
    pub fn insert_node(&mut self, id: NodeId) -> Result<(), TopologyError> {
        if self.nodes.contains_key(&id) {
            return Err(TopologyError::DuplicateId(id.0));
        }
        self.nodes.insert(id, NodeEntry::default());
        self.next_node = self.next_node.max(id.0 + 1);
        Ok(())
    }

    /// Removes a node. Refuses if any link is still incident; cascading
    /// is the caller's job via explicit link-removal events.
    pub fn remove_node(&mut self, n: NodeId) -> Result<(), TopologyError> {
        let entry = self.nodes.get(&n).ok_or(TopologyError::UnknownNode(n))?;
        if !entry.out.is_empty() || !entry.inc.is_empty() {
            return Err(TopologyError::NodeHasIncidentLinks(n));
        }
        self.nodes.remove(&n);
        Ok(())
    }

    /// Adds a link in state `Unclassified`.
    pub fn add_link(&mut self, src: NodeId, tgt: NodeId, weight: f64) -> Result<LinkId, TopologyError> {
        let id = LinkId(self.next_link);
        self.insert_link(id, src, tgt, weight, LinkState::Unclassified)?;
        Ok(id)
    }

    /// Inserts a link with explicit id and state (fixture loading).
    pub fn insert_link(
        &mut self,
        id: LinkId,
        src: NodeId,
        tgt: NodeId,
        weight: f64,
        state: LinkState,
    ) -> Result<(), TopologyError> {
        if id.0 >= MAX_LINK_ID {
            return Err(TopologyError::IdOutOfRange(id.0));
        }
        if self.link(id).is_some() {
            return Err(TopologyError::DuplicateId(id.0));
        }
        if src == tgt {
            return Err(TopologyError::SelfLoop(src));
        }
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(TopologyError::NonPositiveWeight(weight));
        }
        if !self.nodes.contains_key(&src) {
            return Err(TopologyError::UnknownNode(src));
        }
        if !self.nodes.contains_key(&tgt) {
            return Err(TopologyError::UnknownNode(tgt));
        }
        if self.nodes[&src].out.contains_key(&tgt) {
            return Err(TopologyError::ParallelLink(src, tgt));
        }
        if self.links.len() <= id.0 as usize {
            self.links.resize(id.0 as usize + 1, None);
        }
        self.links[id.0 as usize] = Some(Link { id, src, tgt, weight, state });
        self.live_links += 1;
        self.nodes.get_mut(&src).unwrap().out.insert(tgt, id);
        self.nodes.get_mut(&tgt).unwrap().inc.insert(src, id);
        self.next_link = self.next_link.max(id.0 + 1);
        Ok(())
    }

    pub fn remove_link(&mut self, e: LinkId) -> Result<Link, TopologyError> {
        let link = self
            .links
            .get_mut(e.0 as usize)
            .and_then(|slot| slot.take())
            .ok_or(TopologyError::UnknownLink(e))?;
        self.live_links -= 1;
        self.nodes.get_mut(&link.src).unwrap().out.remove(&link.tgt);
        self.nodes.get_mut(&link.tgt).unwrap().inc.remove(&link.src);
        Ok(link)
    }

    /// Updates a link's weight and unclassifies it (journalled when the
    /// state actually changes).
    pub fn set_weight(&mut self, e: LinkId, weight: f64, cause: ModificationCause) -> Result<(), TopologyError> {
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(TopologyError::NonPositiveWeight(weight));
        }
        match self.links.get_mut(e.0 as usize).and_then(|slot| slot.as_mut()) {
            Some(link) => link.weight = weight,
            None => return Err(TopologyError::UnknownLink(e)),
        }
        self.set_state(e, LinkState::Unclassified, cause)
    }

    /// Changes a link's state. Appends a journal entry only when the
    /// state actually changes.
    pub fn set_state(&mut self, e: LinkId, state: LinkState, cause: ModificationCause) -> Result<(), TopologyError> {
        let link = self
            .links
            .get_mut(e.0 as usize)
            .and_then(|slot| slot.as_mut())
            .ok_or(TopologyError::UnknownLink(e))?;
        let old_state = link.state;
        if old_state == state {
            return Ok(());
        }
        link.state = state;
        self.journal.push(LinkStateModification { link: e, old_state, new_state: state, cause });
        Ok(())
    }

    pub fn has_node(&self, n: NodeId) -> bool {
        self.nodes.contains_key(&n)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.live_links
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn links(&self) -> impl Iterator<Item = &Link> {
        self.links.iter().flatten()
    }

    pub fn link(&self, e: LinkId) -> Option<&Link> {
        self.links.get(e.0 as usize).and_then(|o| o.as_ref())
    }

    /// The unique link from `src` to `tgt`, if present.
    pub fn link_between(&self, src: NodeId, tgt: NodeId) -> Option<LinkId> {
        self.nodes.get(&src).and_then(|n| n.out.get(&tgt)).copied()
    }

    /// Outgoing links of `n`, ordered by target node id.
    pub fn out_links(&self, n: NodeId) -> impl Iterator<Item = &Link> {
        self.nodes
            .get(&n)
            .into_iter()
            .flat_map(move |e| e.out.values().map(move |id| self.link(*id).unwrap()))
    }

    /// Incoming links of `n`, ordered by source node id.
    pub fn in_links(&self, n: NodeId) -> impl Iterator<Item = &Link> {
        self.nodes
            .get(&n)
            .into_iter()
            .flat_map(move |e| e.inc.values().map(move |id| self.link(*id).unwrap()))
    }

    pub fn degree(&self, n: NodeId) -> usize {
        self.nodes.get(&n).map_or(0, |e| e.out.len() + e.inc.len())
    }

    /// Link ids whose state is `Unclassified`, ascending.
    pub fn unclassified_links(&self) -> Vec<LinkId> {
        self.links()
            .filter(|l| l.state == LinkState::Unclassified)
            .map(|l| l.id)
            .collect()
    }

    pub fn classified_count(&self) -> usize {
        self.links().filter(|l| l.state.is_classified()).count()
    }

    pub fn journal(&self) -> &[LinkStateModification] {
        &self.journal
    }

    pub fn journal_len(&self) -> usize {
        self.journal.len()
    }

    /// Journal entries with the given cause, counted from `from` onwards.
    pub fn journal_count_since(&self, from: usize, cause: ModificationCause) -> usize {
        self.journal[from..].iter().filter(|m| m.cause == cause).count()
    }

    /// Consistency audit of the adjacency indices against the link map,
    /// plus the structural constraints. Cheap enough to run in tests and
    /// in check mode after every rule application.
    pub fn audit(&self) -> Result<(), String> {
        let mut seen = 0usize;
        for (idx, link) in self.links.iter().enumerate().filter_map(|(i, o)| o.as_ref().map(|l| (i, l))) {
            let id = LinkId(idx as u64);
            if id != link.id {
                return Err(format!("link slot {id} does not match payload id {}", link.id));
            }
            if link.src == link.tgt {
                return Err(format!("loop at {}", link.src));
            }
            if !(link.weight > 0.0) {
                return Err(format!("non-positive weight on {id}"));
            }
            match self.nodes.get(&link.src) {
                Some(e) if e.out.get(&link.tgt) == Some(&id) => {}
                _ => return Err(format!("outgoing index misses {id}")),
            }
            match self.nodes.get(&link.tgt) {
                Some(e) if e.inc.get(&link.src) == Some(&id) => {}
                _ => return Err(format!("incoming index misses {id}")),
            }
            seen += 1;
        }
        let indexed: usize = self.nodes.values().map(|e| e.out.len()).sum();
        if indexed != seen || self.live_links != seen {
            return Err(format!(
                "adjacency holds {indexed} links, storage holds {seen}, counter says {}",
                self.live_links
            ));
        }
        Ok(())
    }

    /// Identity of node and link sets (ids, endpoints, weights), states
    /// excluded. Used to audit the mirrored batch topology.
    pub fn same_structure(&self, other: &Topology) -> bool {
        if self.nodes.len() != other.nodes.len() || self.live_links != other.live_links {
            return false;
        }
        if !self.nodes.keys().eq(other.nodes.keys()) {
            return false;
        }
        self.links().zip(other.links()).all(|(a, b)| {
            a.id == b.id && a.src == b.src && a.tgt == b.tgt && a.weight == b.weight
        })
    }

    /// Full state map, for comparing algorithm outputs.
    pub fn state_map(&self) -> BTreeMap<LinkId, LinkState> {
        self.links().map(|l| (l.id, l.state)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> (Topology, [NodeId; 3], [LinkId; 6]) {
        // The running-example triangle: long pair ab/ba (weight 4), short
        // sides ac/ca (1) and cb/bc (2).
        let mut t = Topology::new();
        let a = t.add_node();
        let b = t.add_node();
        let c = t.add_node();
        let ab = t.add_link(a, b, 4.0).unwrap();
        let ba = t.add_link(b, a, 4.0).unwrap();
        let ac = t.add_link(a, c, 1.0).unwrap();
        let ca = t.add_link(c, a, 1.0).unwrap();
        let cb = t.add_link(c, b, 2.0).unwrap();
        let bc = t.add_link(b, c, 2.0).unwrap();
        (t, [a, b, c], [ab, ba, ac, ca, cb, bc])
    }

    #[test]
    fn add_node_smallest_case() {
        let mut t = Topology::new();
        assert_eq!(t.node_count(), 0);
        t.add_node();
        assert_eq!(t.node_count(), 1);
        assert_eq!(t.link_count(), 0);
        assert_eq!(t.journal_len(), 0);
    }

    #[test]
    fn add_node_leaves_links_alone() {
        let (mut t, _, links) = triangle();
        let n = t.add_node();
        assert_eq!(t.node_count(), 4);
        assert_eq!(t.link_count(), 6);
        assert_eq!(t.degree(n), 0);
        for e in links {
            assert!(t.link(e).is_some());
        }
        assert_eq!(t.journal_len(), 0);
    }

    #[test]
    fn remove_node_requires_isolation() {
        let (mut t, nodes, _) = triangle();
        let iso = t.add_node();
        assert_eq!(
            t.remove_node(nodes[0]),
            Err(TopologyError::NodeHasIncidentLinks(nodes[0]))
        );
        t.remove_node(iso).unwrap();
        assert_eq!(t.node_count(), 3);
        assert_eq!(t.journal_len(), 0);
        assert_eq!(t.remove_node(iso), Err(TopologyError::UnknownNode(iso)));
    }

    #[test]
    fn add_link_rejects_loops_parallels_and_bad_weights() {
        let mut t = Topology::new();
        let a = t.add_node();
        let b = t.add_node();
        let e = t.add_link(a, b, 4.0).unwrap();
        assert_eq!(t.link(e).unwrap().state, LinkState::Unclassified);
        assert_eq!(t.add_link(a, b, 2.0), Err(TopologyError::ParallelLink(a, b)));
        assert_eq!(t.add_link(a, a, 1.0), Err(TopologyError::SelfLoop(a)));
        assert_eq!(t.add_link(b, a, 0.0), Err(TopologyError::NonPositiveWeight(0.0)));
        assert_eq!(t.add_link(b, a, -2.0), Err(TopologyError::NonPositiveWeight(-2.0)));
        // anti-parallel is fine
        t.add_link(b, a, 4.0).unwrap();
        t.audit().unwrap();
    }

    #[test]
    fn set_weight_unclassifies_and_journals_once() {
        let mut t = Topology::new();
        let a = t.add_node();
        let b = t.add_node();
        let e = t.add_link(a, b, 4.0).unwrap();
        t.set_state(e, LinkState::Active, ModificationCause::TcInvocation).unwrap();
        assert_eq!(t.journal_len(), 1);
        t.set_weight(e, 3.0, ModificationCause::CeHandling).unwrap();
        let l = t.link(e).unwrap();
        assert_eq!(l.weight, 3.0);
        assert_eq!(l.state, LinkState::Unclassified);
        assert_eq!(t.journal_len(), 2);
        // already unclassified: weight-only update, no new journal entry
        t.set_weight(e, 2.5, ModificationCause::CeHandling).unwrap();
        assert_eq!(t.journal_len(), 2);
    }

    #[test]
    fn set_state_same_state_is_silent() {
        let mut t = Topology::new();
        let a = t.add_node();
        let b = t.add_node();
        let e = t.add_link(a, b, 4.0).unwrap();
        t.set_state(e, LinkState::Active, ModificationCause::TcInvocation).unwrap();
        t.set_state(e, LinkState::Active, ModificationCause::TcInvocation).unwrap();
        assert_eq!(t.journal_len(), 1);
    }

    #[test]
    fn remove_link_then_lookup_fails() {
        let (mut t, _, links) = triangle();
        t.remove_link(links[0]).unwrap();
        assert!(t.link(links[0]).is_none());
        assert_eq!(
            t.set_state(links[0], LinkState::Active, ModificationCause::TcInvocation),
            Err(TopologyError::UnknownLink(links[0]))
        );
        t.audit().unwrap();
    }

    #[test]
    fn journal_counts_by_cause() {
        let (mut t, _, links) = triangle();
        t.set_state(links[0], LinkState::Active, ModificationCause::TcInvocation).unwrap();
        t.set_state(links[1], LinkState::Inactive, ModificationCause::CeHandling).unwrap();
        let mark = t.journal_len();
        t.set_state(links[2], LinkState::Active, ModificationCause::TcInvocation).unwrap();
        assert_eq!(t.journal_count_since(0, ModificationCause::TcInvocation), 2);
        assert_eq!(t.journal_count_since(mark, ModificationCause::TcInvocation), 1);
        assert_eq!(t.journal_count_since(0, ModificationCause::CeHandling), 1);
    }

    #[test]
    fn deterministic_dense_ids() {
        let (t, nodes, links) = triangle();
        assert_eq!(nodes.map(|n| n.0), [0, 1, 2]);
        assert_eq!(links.map(|e| e.0), [0, 1, 2, 3, 4, 5]);
        assert!(t.same_structure(&t.clone()));
    }
}

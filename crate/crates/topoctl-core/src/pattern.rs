//! Graph patterns, injective matching, graph constraints and the
//! consistency/connectivity checkers.
//!
//! A pattern is a small graph of node and link variables plus attribute
//! constraints (link states, linear weight comparisons involving the kTC
//! parameter `k` and min/max of two link weights). Matching is a
//! backtracking search that assigns node variables most-constrained
//! first and resolves link variables through the adjacency indices, so
//! triangle patterns cost one 1-hop join per anchored link.

use std::fmt;

use thiserror::Error;

use crate::topology::{LinkId, LinkState, NodeId, Topology};

pub type VarId = usize;

/// Set of admissible states for a link variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateMask(u8);

impl StateMask {
    pub const ANY: StateMask = StateMask(0b111);
    pub const ACTIVE: StateMask = StateMask(0b001);
    pub const INACTIVE: StateMask = StateMask(0b010);
    pub const UNCLASSIFIED: StateMask = StateMask(0b100);
    /// Active or inactive.
    pub const CLASSIFIED: StateMask = StateMask(0b011);

    pub fn of(state: LinkState) -> StateMask {
        match state {
            LinkState::Active => StateMask::ACTIVE,
            LinkState::Inactive => StateMask::INACTIVE,
            LinkState::Unclassified => StateMask::UNCLASSIFIED,
        }
    }

    pub fn allows(self, state: LinkState) -> bool {
        self.0 & StateMask::of(state).0 != 0
    }

    pub fn intersect(self, other: StateMask) -> StateMask {
        StateMask(self.0 & other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Concrete states admitted by this mask, in a fixed order.
    pub fn states(self) -> Vec<LinkState> {
        [LinkState::Active, LinkState::Inactive, LinkState::Unclassified]
            .into_iter()
            .filter(|s| self.allows(*s))
            .collect()
    }
}

impl fmt::Display for StateMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            StateMask::ANY => write!(f, "*"),
            StateMask::CLASSIFIED => write!(f, "{{A,I}}"),
            m => {
                let letters: String = m.states().iter().map(|s| s.letter()).collect();
                write!(f, "{letters}")
            }
        }
    }
}

/// A link variable: directed edge between two node variables plus a
/// state constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternLink {
    pub name: String,
    pub src: VarId,
    pub tgt: VarId,
    pub state: StateMask,
}

/// Coefficient of a weight term: 1 or the kTC parameter k.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coeff {
    One,
    K,
}

/// Operand of a weight comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightArg {
    Link(VarId),
    MinOf(VarId, VarId),
    MaxOf(VarId, VarId),
    Const(f64),
    /// The free `w_new` parameter of the weight-modification and
    /// link-addition rules. Unconstrained in satisfiability checks.
    NewWeightParam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightTerm {
    pub coeff: Coeff,
    pub arg: WeightArg,
}

impl WeightTerm {
    pub fn link(v: VarId) -> WeightTerm {
        WeightTerm { coeff: Coeff::One, arg: WeightArg::Link(v) }
    }

    pub fn max_of(a: VarId, b: VarId) -> WeightTerm {
        WeightTerm { coeff: Coeff::One, arg: WeightArg::MaxOf(a, b) }
    }

    pub fn k_min_of(a: VarId, b: VarId) -> WeightTerm {
        WeightTerm { coeff: Coeff::K, arg: WeightArg::MinOf(a, b) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

impl CmpOp {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Gt => lhs > rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        }
    }
}

/// Linear comparison between two weight terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightCmp {
    pub lhs: WeightTerm,
    pub op: CmpOp,
    pub rhs: WeightTerm,
}

impl WeightCmp {
    /// Link variables this comparison reads.
    pub fn link_vars(&self) -> Vec<VarId> {
        let mut vars = Vec::new();
        for term in [&self.lhs, &self.rhs] {
            match term.arg {
                WeightArg::Link(v) => vars.push(v),
                WeightArg::MinOf(a, b) | WeightArg::MaxOf(a, b) => {
                    vars.push(a);
                    vars.push(b);
                }
                WeightArg::Const(_) | WeightArg::NewWeightParam => {}
            }
        }
        vars
    }
}

/// A graph pattern: node variables, link variables, weight constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPattern {
    pub node_names: Vec<String>,
    pub links: Vec<PatternLink>,
    pub weight_cmps: Vec<WeightCmp>,
}

impl GraphPattern {
    pub fn new(node_names: &[&str]) -> GraphPattern {
        GraphPattern {
            node_names: node_names.iter().map(|s| s.to_string()).collect(),
            links: Vec::new(),
            weight_cmps: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_names.len()
    }

    pub fn add_node(&mut self, name: &str) -> VarId {
        self.node_names.push(name.to_string());
        self.node_names.len() - 1
    }

    pub fn add_link(&mut self, name: &str, src: VarId, tgt: VarId, state: StateMask) -> VarId {
        self.links.push(PatternLink { name: name.to_string(), src, tgt, state });
        self.links.len() - 1
    }

    pub fn add_cmp(&mut self, lhs: WeightTerm, op: CmpOp, rhs: WeightTerm) {
        self.weight_cmps.push(WeightCmp { lhs, op, rhs });
    }

    /// True if two link variables connect the same ordered node pair.
    pub fn has_parallel_link_vars(&self) -> bool {
        for (i, a) in self.links.iter().enumerate() {
            for b in &self.links[i + 1..] {
                if a.src == b.src && a.tgt == b.tgt {
                    return true;
                }
            }
        }
        false
    }

    /// True if some link variable is a loop.
    pub fn has_loop_var(&self) -> bool {
        self.links.iter().any(|l| l.src == l.tgt)
    }

    /// Human-readable one-line rendering.
    pub fn render(&self) -> String {
        let mut parts: Vec<String> = Vec::new();
        parts.push(format!("nodes[{}]", self.node_names.join(",")));
        for l in &self.links {
            parts.push(format!(
                "{}:{}->{}:{}",
                l.name, self.node_names[l.src], self.node_names[l.tgt], l.state
            ));
        }
        for c in &self.weight_cmps {
            parts.push(format!(
                "{} {} {}",
                self.render_term(&c.lhs),
                c.op.symbol(),
                self.render_term(&c.rhs)
            ));
        }
        parts.join(" ")
    }

    fn render_term(&self, t: &WeightTerm) -> String {
        let base = match t.arg {
            WeightArg::Link(v) => format!("w({})", self.links[v].name),
            WeightArg::MinOf(a, b) => {
                format!("min(w({}),w({}))", self.links[a].name, self.links[b].name)
            }
            WeightArg::MaxOf(a, b) => {
                format!("max(w({}),w({}))", self.links[a].name, self.links[b].name)
            }
            WeightArg::Const(c) => format!("{c}"),
            WeightArg::NewWeightParam => "w_new".to_string(),
        };
        match t.coeff {
            Coeff::One => base,
            Coeff::K => format!("k*{base}"),
        }
    }
}

/// An injective assignment of pattern variables to topology elements.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PatternMatch {
    pub nodes: Vec<NodeId>,
    pub links: Vec<LinkId>,
}

/// Partial pre-assignment of pattern variables (rule parameters,
/// premise matches being extended to conclusions).
#[derive(Debug, Clone, Default)]
pub struct Binding {
    pub nodes: Vec<(VarId, NodeId)>,
    pub links: Vec<(VarId, LinkId)>,
}

impl Binding {
    /// Binds link variable `var` to `link`, together with its endpoints.
    pub fn for_link(p: &GraphPattern, var: VarId, link: &crate::topology::Link) -> Binding {
        Binding {
            nodes: vec![(p.links[var].src, link.src), (p.links[var].tgt, link.tgt)],
            links: vec![(var, link.id)],
        }
    }

    /// Binds the first `m.nodes.len()` node vars and `m.links.len()` link
    /// vars of a pattern that extends the matched one (prefix convention).
    pub fn from_prefix(m: &PatternMatch) -> Binding {
        Binding {
            nodes: m.nodes.iter().copied().enumerate().collect(),
            links: m.links.iter().copied().enumerate().collect(),
        }
    }
}

/// Evaluates a weight term against concrete link weights.
fn eval_term(term: &WeightTerm, weights: &[f64], k: f64, w_new: f64) -> f64 {
    let base = match term.arg {
        WeightArg::Link(v) => weights[v],
        WeightArg::MinOf(a, b) => weights[a].min(weights[b]),
        WeightArg::MaxOf(a, b) => weights[a].max(weights[b]),
        WeightArg::Const(c) => c,
        WeightArg::NewWeightParam => w_new,
    };
    match term.coeff {
        Coeff::One => base,
        Coeff::K => k * base,
    }
}

struct Search<'a> {
    t: &'a Topology,
    p: &'a GraphPattern,
    k: f64,
    w_new: f64,
    node_assign: Vec<Option<NodeId>>,
    link_assign: Vec<Option<LinkId>>,
    link_weights: Vec<f64>,
    out: Vec<PatternMatch>,
    limit: usize,
}

impl<'a> Search<'a> {
    /// Chooses the next unassigned node var: prefer vars incident to a
    /// link whose other endpoint is already assigned, most constrained
    /// (fewest candidate generators is approximated by "anchored first"),
    /// ties by index.
    fn next_var(&self) -> Option<VarId> {
        let mut best: Option<(usize, VarId)> = None;
        for v in 0..self.p.node_count() {
            if self.node_assign[v].is_some() {
                continue;
            }
            let anchors = self
                .p
                .links
                .iter()
                .filter(|l| {
                    (l.src == v && self.node_assign[l.tgt].is_some())
                        || (l.tgt == v && self.node_assign[l.src].is_some())
                })
                .count();
            // more anchors first
            let key = usize::MAX - anchors;
            if best.map_or(true, |(bk, bv)| (key, v) < (bk, bv)) {
                best = Some((key, v));
            }
        }
        best.map(|(_, v)| v)
    }

    fn candidates(&self, v: VarId) -> Vec<NodeId> {
        // Anchored generation: every link var connecting v to an
        // assigned node contributes a candidate set from that node's
        // adjacency; intersecting them keeps triangle joins linear in
        // the common-neighbor count.
        let mut sets: Vec<Vec<NodeId>> = Vec::new();
        for l in &self.p.links {
            if l.src == v {
                if let Some(n) = self.node_assign[l.tgt] {
                    sets.push(self.t.in_links(n).map(|link| link.src).collect());
                }
            }
            if l.tgt == v {
                if let Some(n) = self.node_assign[l.src] {
                    sets.push(self.t.out_links(n).map(|link| link.tgt).collect());
                }
            }
        }
        match sets.len() {
            0 => self.t.node_ids().collect(),
            1 => sets.pop().unwrap(),
            _ => {
                // adjacency iterators yield ascending node ids
                let mut acc = sets.pop().unwrap();
                for other in sets {
                    let mut merged = Vec::with_capacity(acc.len().min(other.len()));
                    let (mut i, mut j) = (0, 0);
                    while i < acc.len() && j < other.len() {
                        match acc[i].cmp(&other[j]) {
                            std::cmp::Ordering::Less => i += 1,
                            std::cmp::Ordering::Greater => j += 1,
                            std::cmp::Ordering::Equal => {
                                merged.push(acc[i]);
                                i += 1;
                                j += 1;
                            }
                        }
                    }
                    acc = merged;
                }
                acc
            }
        }
    }

    /// Resolves link vars whose endpoints are both assigned. Returns
    /// false if some resolution fails; `touched` collects vars resolved
    /// here for backtracking.
    fn resolve_links(&mut self, touched: &mut Vec<VarId>) -> bool {
        for (i, l) in self.p.links.iter().enumerate() {
            if self.link_assign[i].is_some() {
                continue;
            }
            let (Some(src), Some(tgt)) = (self.node_assign[l.src], self.node_assign[l.tgt]) else {
                continue;
            };
            let Some(id) = self.t.link_between(src, tgt) else {
                return false;
            };
            let link = self.t.link(id).unwrap();
            if !l.state.allows(link.state) {
                return false;
            }
            // link injectivity (distinct ordered pairs make this
            // automatic, but parallel link vars must never alias)
            if self.link_assign.iter().flatten().any(|&other| other == id) {
                return false;
            }
            self.link_assign[i] = Some(id);
            self.link_weights[i] = link.weight;
            touched.push(i);
            // weight comparisons that just became fully determined
            for c in &self.p.weight_cmps {
                let vars = c.link_vars();
                if vars.contains(&i) && vars.iter().all(|&v| self.link_assign[v].is_some()) {
                    let lhs = eval_term(&c.lhs, &self.link_weights, self.k, self.w_new);
                    let rhs = eval_term(&c.rhs, &self.link_weights, self.k, self.w_new);
                    if !c.op.holds(lhs, rhs) {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn run(&mut self) {
        if self.out.len() >= self.limit {
            return;
        }
        let Some(v) = self.next_var() else {
            // all node vars assigned; links were resolved incrementally
            // and all cmps checked, plus constant-only cmps here
            for c in &self.p.weight_cmps {
                if c.link_vars().is_empty() {
                    let lhs = eval_term(&c.lhs, &self.link_weights, self.k, self.w_new);
                    let rhs = eval_term(&c.rhs, &self.link_weights, self.k, self.w_new);
                    if !c.op.holds(lhs, rhs) {
                        return;
                    }
                }
            }
            self.out.push(PatternMatch {
                nodes: self.node_assign.iter().map(|n| n.unwrap()).collect(),
                links: self.link_assign.iter().map(|l| l.unwrap()).collect(),
            });
            return;
        };
        for cand in self.candidates(v) {
            if self.node_assign.iter().flatten().any(|&n| n == cand) {
                continue; // injectivity on nodes
            }
            self.node_assign[v] = Some(cand);
            let mut touched = Vec::new();
            if self.resolve_links(&mut touched) {
                self.run();
            }
            for i in touched {
                self.link_assign[i] = None;
            }
            self.node_assign[v] = None;
            if self.out.len() >= self.limit {
                return;
            }
        }
    }
}

/// All injective, endpoint-consistent, constraint-satisfying matches of
/// `p` in `t`, in deterministic order (sorted by mapped element ids).
pub fn find_matches(t: &Topology, p: &GraphPattern, k: f64, binding: &Binding) -> Vec<PatternMatch> {
    find_matches_limited(t, p, k, binding, usize::MAX)
}

/// Like [`find_matches`] but stops after `limit` matches (existence
/// checks pass 1).
pub fn find_matches_limited(
    t: &Topology,
    p: &GraphPattern,
    k: f64,
    binding: &Binding,
    limit: usize,
) -> Vec<PatternMatch> {
    // Patterns that can never match a simple digraph.
    if p.has_loop_var() || p.has_parallel_link_vars() {
        return Vec::new();
    }
    let mut s = Search {
        t,
        p,
        k,
        w_new: f64::NAN,
        node_assign: vec![None; p.node_count()],
        link_assign: vec![None; p.links.len()],
        link_weights: vec![f64::NAN; p.links.len()],
        out: Vec::new(),
        limit,
    };
    // seed the binding; inconsistent bindings yield no matches
    for &(v, n) in &binding.nodes {
        if !t.has_node(n) {
            return Vec::new();
        }
        match s.node_assign[v] {
            Some(existing) if existing != n => return Vec::new(),
            _ => s.node_assign[v] = Some(n),
        }
    }
    // injectivity among the bound node vars
    for i in 0..s.node_assign.len() {
        for j in (i + 1)..s.node_assign.len() {
            if let (Some(a), Some(b)) = (s.node_assign[i], s.node_assign[j]) {
                if a == b {
                    return Vec::new();
                }
            }
        }
    }
    for &(v, id) in &binding.links {
        let Some(link) = t.link(id) else { return Vec::new() };
        if !p.links[v].state.allows(link.state) {
            return Vec::new();
        }
        if s.node_assign[p.links[v].src] != Some(link.src) || s.node_assign[p.links[v].tgt] != Some(link.tgt) {
            // endpoints must be bound consistently by the caller
            return Vec::new();
        }
        s.link_assign[v] = Some(id);
        s.link_weights[v] = link.weight;
    }
    let mut touched = Vec::new();
    if !s.resolve_links(&mut touched) {
        return Vec::new();
    }
    s.run();
    let mut out = s.out;
    out.sort();
    out
}

/// True if a match of the premise (given as a prefix binding) extends to
/// a match of `conclusion`.
pub fn extends(t: &Topology, conclusion: &GraphPattern, k: f64, premise_match: &PatternMatch) -> bool {
    let binding = Binding::from_prefix(premise_match);
    !find_matches_limited(t, conclusion, k, &binding, 1).is_empty()
}

/// Structural equality of two patterns up to renaming of variables:
/// some node-variable bijection must carry links onto links with equal
/// state masks and the weight constraints onto each other. Used to diff
/// engine-derived conditions against the shipped rules.
pub fn patterns_isomorphic(a: &GraphPattern, b: &GraphPattern) -> bool {
    if a.node_count() != b.node_count()
        || a.links.len() != b.links.len()
        || a.weight_cmps.len() != b.weight_cmps.len()
    {
        return false;
    }
    let n = a.node_count();
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        if iso_under(a, b, &perm) {
            return true;
        }
        if !next_permutation(&mut perm) {
            return false;
        }
    }
}

fn iso_under(a: &GraphPattern, b: &GraphPattern, perm: &[usize]) -> bool {
    // link correspondence is forced by the mapped endpoint pair
    let mut link_map = vec![usize::MAX; a.links.len()];
    for (i, la) in a.links.iter().enumerate() {
        let Some(j) = b
            .links
            .iter()
            .position(|lb| lb.src == perm[la.src] && lb.tgt == perm[la.tgt] && lb.state == la.state)
        else {
            return false;
        };
        if link_map.contains(&j) {
            return false;
        }
        link_map[i] = j;
    }
    let canon = |p: &GraphPattern, cmps: &[WeightCmp], map: Option<&[usize]>| -> Vec<String> {
        let mut out: Vec<String> = cmps
            .iter()
            .map(|c| {
                let name = |t: &WeightTerm| {
                    let relabel = |v: VarId| map.map_or(v, |m| m[v]);
                    let coeff = match t.coeff {
                        Coeff::One => "",
                        Coeff::K => "k*",
                    };
                    match t.arg {
                        WeightArg::Link(v) => format!("{coeff}w{}", relabel(v)),
                        WeightArg::MinOf(x, y) => {
                            let (x, y) = (relabel(x), relabel(y));
                            format!("{coeff}min{},{}", x.min(y), x.max(y))
                        }
                        WeightArg::MaxOf(x, y) => {
                            let (x, y) = (relabel(x), relabel(y));
                            format!("{coeff}max{},{}", x.min(y), x.max(y))
                        }
                        WeightArg::Const(c) => format!("{coeff}c{c}"),
                        WeightArg::NewWeightParam => format!("{coeff}wnew"),
                    }
                };
                let _ = p;
                format!("{} {} {}", name(&c.lhs), c.op.symbol(), name(&c.rhs))
            })
            .collect();
        out.sort();
        out
    };
    canon(a, &a.weight_cmps, Some(&link_map)) == canon(b, &b.weight_cmps, None)
}

fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

// ---------------------------------------------------------------------
// Graph constraints
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

/// Premise plus conclusion patterns. Conclusions structurally extend the
/// premise: their first node/link variables are the premise's, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphConstraint {
    pub name: String,
    pub polarity: Polarity,
    pub premise: GraphPattern,
    pub conclusions: Vec<GraphPattern>,
}

/// Outcome of checking one constraint.
#[derive(Debug, Clone)]
pub struct ConstraintReport {
    pub name: String,
    pub fulfilled: bool,
    pub violations: Vec<PatternMatch>,
}

impl ConstraintReport {
    pub fn render(&self, t: &Topology, c: &GraphConstraint) -> String {
        if self.fulfilled {
            return format!("{}: fulfilled", self.name);
        }
        let mut out = format!("{}: VIOLATED ({} match(es))", self.name, self.violations.len());
        for m in &self.violations {
            let nodes: Vec<String> = m.nodes.iter().map(|n| n.to_string()).collect();
            let links: Vec<String> = m.links.iter().map(|l| l.to_string()).collect();
            let _ = c;
            let _ = t;
            out.push_str(&format!("\n  premise at nodes [{}] links [{}]", nodes.join(","), links.join(",")));
        }
        out
    }
}

/// Fulfilled iff every premise match extends to some conclusion match
/// (negative constraints: iff there is no premise match).
pub fn check_constraint(t: &Topology, c: &GraphConstraint, k: f64) -> ConstraintReport {
    let premise_matches = find_matches(t, &c.premise, k, &Binding::default());
    let violations: Vec<PatternMatch> = match c.polarity {
        Polarity::Negative => premise_matches,
        Polarity::Positive => premise_matches
            .into_iter()
            .filter(|m| !c.conclusions.iter().any(|concl| extends(t, concl, k, m)))
            .collect(),
    };
    ConstraintReport { name: c.name.clone(), fulfilled: violations.is_empty(), violations }
}

#[derive(Debug, Error, PartialEq)]
#[error("k must be >= 1, got {0}")]
pub struct InvalidK(pub f64);

/// Negative constraint: no two links between one ordered node pair.
pub fn no_parallel_links_constraint() -> GraphConstraint {
    let mut premise = GraphPattern::new(&["a", "b"]);
    premise.add_link("ab1", 0, 1, StateMask::ANY);
    premise.add_link("ab2", 0, 1, StateMask::ANY);
    GraphConstraint {
        name: "no-parallel-links".into(),
        polarity: Polarity::Negative,
        premise,
        conclusions: vec![],
    }
}

/// Negative constraint: no link from a node to itself.
pub fn no_loops_constraint() -> GraphConstraint {
    let mut premise = GraphPattern::new(&["a"]);
    premise.add_link("aa", 0, 0, StateMask::ANY);
    GraphConstraint { name: "no-loops".into(), polarity: Polarity::Negative, premise, conclusions: vec![] }
}

/// Negative constraint: no unclassified link (strong consistency only).
pub fn unclassified_link_constraint() -> GraphConstraint {
    let mut premise = GraphPattern::new(&["a", "b"]);
    premise.add_link("ab", 0, 1, StateMask::UNCLASSIFIED);
    GraphConstraint {
        name: "unclassified-link".into(),
        polarity: Polarity::Negative,
        premise,
        conclusions: vec![],
    }
}

/// The kTC triangle: edge `ab` from var `a` to var `b` plus classified
/// sides `ac`, `cb` over a third var `c`, with `w(ab) > max(w(ac),w(cb))`
/// and `w(ab) >= k*min(w(ac),w(cb))`. Used as the conclusion of the
/// inactive-link constraint (with `ab` inactive) and the premise of the
/// active-link constraint (with `ab` active).
fn ktc_triangle(ab_state: StateMask) -> GraphPattern {
    let mut p = GraphPattern::new(&["a", "b", "c"]);
    let ab = p.add_link("ab", 0, 1, ab_state);
    let ac = p.add_link("ac", 0, 2, StateMask::CLASSIFIED);
    let cb = p.add_link("cb", 2, 1, StateMask::CLASSIFIED);
    p.add_cmp(WeightTerm::link(ab), CmpOp::Gt, WeightTerm::max_of(ac, cb));
    p.add_cmp(WeightTerm::link(ab), CmpOp::Ge, WeightTerm::k_min_of(ac, cb));
    p
}

/// Positive constraint: every inactive link sits in a kTC triangle as
/// the unique weight-maximal, k-condition-satisfying edge.
pub fn inactive_link_constraint() -> GraphConstraint {
    let mut premise = GraphPattern::new(&["a", "b"]);
    premise.add_link("ab", 0, 1, StateMask::INACTIVE);
    GraphConstraint {
        name: "inactive-link".into(),
        polarity: Polarity::Positive,
        premise,
        conclusions: vec![ktc_triangle(StateMask::INACTIVE)],
    }
}

/// Negative constraint: no active link sits in such a triangle.
pub fn active_link_constraint() -> GraphConstraint {
    GraphConstraint {
        name: "active-link".into(),
        polarity: Polarity::Negative,
        premise: ktc_triangle(StateMask::ACTIVE),
        conclusions: vec![],
    }
}

/// The five constraints: structural, unclassified-link and the two
/// kTC-specific ones. `k` only gates validity; the patterns carry `k`
/// symbolically and the checkers take it as a parameter.
pub fn builtin_constraints(k: f64) -> Result<Vec<GraphConstraint>, InvalidK> {
    if !(k >= 1.0) {
        return Err(InvalidK(k));
    }
    Ok(vec![
        no_parallel_links_constraint(),
        no_loops_constraint(),
        unclassified_link_constraint(),
        inactive_link_constraint(),
        active_link_constraint(),
    ])
}

// ---------------------------------------------------------------------
// Connectivity
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectivityLevel {
    /// Paths over all links.
    Physical,
    /// Paths over active and unclassified links only.
    Weak,
    /// Paths over active links only.
    Strong,
}

impl ConnectivityLevel {
    fn admits(self, state: LinkState) -> bool {
        match self {
            ConnectivityLevel::Physical => true,
            ConnectivityLevel::Weak => state != LinkState::Inactive,
            ConnectivityLevel::Strong => state == LinkState::Active,
        }
    }
}

/// Directed path between every ordered node pair on the state-filtered
/// subtopology: one forward and one backward reachability sweep from an
/// arbitrary node must each cover all nodes.
pub fn connectivity(t: &Topology, level: ConnectivityLevel) -> bool {
    let nodes: Vec<NodeId> = t.node_ids().collect();
    if nodes.len() <= 1 {
        return true;
    }
    let start = nodes[0];
    let forward = reach(t, start, level, false);
    if forward.len() != nodes.len() {
        return false;
    }
    let backward = reach(t, start, level, true);
    backward.len() == nodes.len()
}

fn reach(t: &Topology, start: NodeId, level: ConnectivityLevel, reversed: bool) -> std::collections::BTreeSet<NodeId> {
    let mut seen = std::collections::BTreeSet::new();
    let mut stack = vec![start];
    seen.insert(start);
    while let Some(n) = stack.pop() {
        let next: Vec<NodeId> = if reversed {
            t.in_links(n).filter(|l| level.admits(l.state)).map(|l| l.src).collect()
        } else {
            t.out_links(n).filter(|l| level.admits(l.state)).map(|l| l.tgt).collect()
        };
        for m in next {
            if seen.insert(m) {
                stack.push(m);
            }
        }
    }
    seen
}

// ---------------------------------------------------------------------
// Consistency
// ---------------------------------------------------------------------

/// Combined result of the constraint checks making up one consistency
/// level, plus the conditional connectivity checks.
#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub level: &'static str,
    pub constraint_reports: Vec<ConstraintReport>,
    pub physically_connected: bool,
    /// None when the physical topology is disconnected (check skipped,
    /// input flagged).
    pub connectivity_ok: Option<bool>,
    pub fulfilled: bool,
}

impl ConsistencyReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{} consistency: {}",
            self.level,
            if self.fulfilled { "ok" } else { "VIOLATED" }
        );
        for r in &self.constraint_reports {
            out.push_str(&format!(
                "\n  {}: {}",
                r.name,
                if r.fulfilled { "fulfilled".to_string() } else { format!("violated ({})", r.violations.len()) }
            ));
            for m in r.violations.iter().take(8) {
                let links: Vec<String> = m.links.iter().map(|l| l.to_string()).collect();
                out.push_str(&format!("\n    at links [{}]", links.join(",")));
            }
        }
        match self.connectivity_ok {
            Some(ok) => out.push_str(&format!("\n  connectivity: {}", if ok { "ok" } else { "VIOLATED" })),
            None => out.push_str("\n  connectivity: skipped (physically disconnected input)"),
        }
        out
    }
}

fn check_consistency(t: &Topology, k: f64, strong: bool) -> ConsistencyReport {
    let mut constraints = vec![
        no_parallel_links_constraint(),
        no_loops_constraint(),
        active_link_constraint(),
        inactive_link_constraint(),
    ];
    if strong {
        constraints.push(unclassified_link_constraint());
    }
    let constraint_reports: Vec<ConstraintReport> =
        constraints.iter().map(|c| check_constraint(t, c, k)).collect();
    let physically_connected = connectivity(t, ConnectivityLevel::Physical);
    // Connectivity membership is checked only for physically connected
    // topologies; disconnected inputs are flagged, not failed.
    let connectivity_ok = if physically_connected {
        let level = if strong { ConnectivityLevel::Strong } else { ConnectivityLevel::Weak };
        Some(connectivity(t, level))
    } else {
        None
    };
    let fulfilled = constraint_reports.iter().all(|r| r.fulfilled) && connectivity_ok.unwrap_or(true);
    ConsistencyReport {
        level: if strong { "strong" } else { "weak" },
        constraint_reports,
        physically_connected,
        connectivity_ok,
        fulfilled,
    }
}

/// Structural constraints + the two kTC constraints (+ weak connectivity
/// when the physical topology is connected).
pub fn check_weak_consistency(t: &Topology, k: f64) -> ConsistencyReport {
    check_consistency(t, k, false)
}

/// Weak consistency + the unclassified-link constraint (+ strong
/// connectivity when the physical topology is connected).
pub fn check_strong_consistency(t: &Topology, k: f64) -> ConsistencyReport {
    check_consistency(t, k, true)
}

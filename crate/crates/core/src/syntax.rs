//! Abstract syntax for session types, session maps, processes and programs.
//!
//! Session types are regular trees, represented as rooted graphs over a
//! [`TypeStore`]. The store keeps exactly one node per bisimulation class:
//! graphs are canonicalized on insertion (partition refinement over the union
//! of the store and the new graph), so type equality downstream is plain
//! [`TypeId`] equality and session-map LTS states are cheap hashable keys.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

/// Interned-ish identifier. Equality and ordering are by string content, so
/// tag sets sort deterministically by name.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Symbol(Arc<str>);

impl Symbol {
    pub fn new(s: impl AsRef<str>) -> Self {
        Symbol(Arc::from(s.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

macro_rules! name_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub Symbol);

        impl $name {
            pub fn new(s: impl AsRef<str>) -> Self {
                $name(Symbol::new(s))
            }

            pub fn as_str(&self) -> &str {
                self.0.as_str()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

name_type!(
    /// Session participant role.
    Role
);
name_type!(
    /// Message tag exchanged in branch selections.
    Tag
);
name_type!(
    /// Process variable bound by a definition parameter or a channel input.
    Var
);
name_type!(
    /// Session name, bound by `new`.
    SessionName
);
name_type!(
    /// Process definition name.
    ProcName
);
name_type!(
    /// Declared session type name.
    TypeName
);

/// Message polarity: output `!` or input `?`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Polarity {
    Out,
    In,
}

impl Polarity {
    pub fn complement(self) -> Polarity {
        match self {
            Polarity::Out => Polarity::In,
            Polarity::In => Polarity::Out,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Polarity::Out => '!',
            Polarity::In => '?',
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// Natural number extended with infinity; used for ranks and weights.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Cost {
    Fin(u64),
    Inf,
}

impl Cost {
    pub const ZERO: Cost = Cost::Fin(0);

    pub fn is_finite(self) -> bool {
        matches!(self, Cost::Fin(_))
    }

    pub fn finite(self) -> Option<u64> {
        match self {
            Cost::Fin(n) => Some(n),
            Cost::Inf => None,
        }
    }

    pub fn add(self, other: Cost) -> Cost {
        match (self, other) {
            (Cost::Fin(a), Cost::Fin(b)) => Cost::Fin(a.saturating_add(b)),
            _ => Cost::Inf,
        }
    }

    pub fn succ(self) -> Cost {
        self.add(Cost::Fin(1))
    }
}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        match (self, other) {
            (Cost::Fin(a), Cost::Fin(b)) => a.cmp(b),
            (Cost::Fin(_), Cost::Inf) => std::cmp::Ordering::Less,
            (Cost::Inf, Cost::Fin(_)) => std::cmp::Ordering::Greater,
            (Cost::Inf, Cost::Inf) => std::cmp::Ordering::Equal,
        }
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cost::Fin(n) => write!(f, "{n}"),
            Cost::Inf => write!(f, "inf"),
        }
    }
}

impl serde::Serialize for Cost {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Cost::Fin(n) => s.serialize_u64(*n),
            Cost::Inf => s.serialize_str("inf"),
        }
    }
}

/// Canonical node id within a [`TypeStore`]. Two validated types denote the
/// same regular tree iff their ids are equal.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct TypeId(pub u32);

/// One node of a session type graph.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum TypeNode {
    /// `end!` / `end?`
    End(Polarity),
    /// Tag exchange with `role`; branches sorted by tag, tags distinct.
    Tags {
        role: Role,
        polarity: Polarity,
        branches: Vec<(Tag, TypeId)>,
    },
    /// Channel exchange with `role`: payload type, then continuation.
    Channel {
        role: Role,
        polarity: Polarity,
        payload: TypeId,
        continuation: TypeId,
    },
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum TypeError {
    #[error("duplicate tag `{0}` in branch set")]
    DuplicateTag(Tag),
    #[error("empty branch set")]
    EmptyBranches,
}

/// Arena of canonical session type nodes.
///
/// Invariant: no two nodes in the store are bisimilar. Acyclic nodes are
/// hash-consed directly; cyclic graphs go through [`GraphBuilder`] which
/// quotients them by bisimilarity against the whole store.
#[derive(Default, Debug, Clone)]
pub struct TypeStore {
    nodes: Vec<TypeNode>,
    intern: HashMap<TypeNode, TypeId>,
}

impl TypeStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&self, id: TypeId) -> &TypeNode {
        &self.nodes[id.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn intern_node(&mut self, node: TypeNode) -> TypeId {
        if let Some(&id) = self.intern.get(&node) {
            return id;
        }
        let id = TypeId(self.nodes.len() as u32);
        self.nodes.push(node.clone());
        self.intern.insert(node, id);
        id
    }

    pub fn end(&mut self, polarity: Polarity) -> TypeId {
        self.intern_node(TypeNode::End(polarity))
    }

    /// Build a tag node from branches with already-canonical children.
    pub fn tags(
        &mut self,
        role: Role,
        polarity: Polarity,
        mut branches: Vec<(Tag, TypeId)>,
    ) -> Result<TypeId, TypeError> {
        if branches.is_empty() {
            return Err(TypeError::EmptyBranches);
        }
        branches.sort_by(|a, b| a.0.cmp(&b.0));
        for w in branches.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(TypeError::DuplicateTag(w[0].0.clone()));
            }
        }
        Ok(self.intern_node(TypeNode::Tags {
            role,
            polarity,
            branches,
        }))
    }

    pub fn channel(
        &mut self,
        role: Role,
        polarity: Polarity,
        payload: TypeId,
        continuation: TypeId,
    ) -> TypeId {
        self.intern_node(TypeNode::Channel {
            role,
            polarity,
            payload,
            continuation,
        })
    }

    /// Nodes reachable from `root`, payload edges included.
    pub fn subterms(&self, root: TypeId) -> BTreeSet<TypeId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            match self.node(id) {
                TypeNode::End(_) => {}
                TypeNode::Tags { branches, .. } => {
                    stack.extend(branches.iter().map(|(_, t)| *t));
                }
                TypeNode::Channel {
                    payload,
                    continuation,
                    ..
                } => {
                    stack.push(*payload);
                    stack.push(*continuation);
                }
            }
        }
        seen
    }

    /// Roles a type interacts with (payloads included).
    pub fn targets(&self, root: TypeId) -> BTreeSet<Role> {
        let mut out = BTreeSet::new();
        for id in self.subterms(root) {
            match self.node(id) {
                TypeNode::End(_) => {}
                TypeNode::Tags { role, .. } | TypeNode::Channel { role, .. } => {
                    out.insert(role.clone());
                }
            }
        }
        out
    }
}

/// Two validated types denote the same regular tree iff their canonical ids
/// coincide; kept as a named operation for readability at call sites.
pub fn type_equal(_store: &TypeStore, a: TypeId, b: TypeId) -> bool {
    a == b
}

/// Reference used while building a possibly-cyclic graph: either a node under
/// construction or an already-canonical store node.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RawRef {
    Raw(usize),
    Canon(TypeId),
}

#[derive(Clone, Debug)]
pub enum RawNode {
    End(Polarity),
    Tags {
        role: Role,
        polarity: Polarity,
        branches: Vec<(Tag, RawRef)>,
    },
    Channel {
        role: Role,
        polarity: Polarity,
        payload: RawRef,
        continuation: RawRef,
    },
}

/// Builder for cyclic session type graphs. Reserve slots first to tie knots,
/// then commit; committing canonicalizes against the store.
#[derive(Default, Debug)]
pub struct GraphBuilder {
    nodes: Vec<Option<RawNode>>,
}

/// Output label used by partition refinement: the node's head constructor.
#[derive(Clone, PartialEq, Eq, Hash)]
enum HeadLabel {
    End(Polarity),
    Tags(Role, Polarity, Vec<Tag>),
    Channel(Role, Polarity),
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reserve(&mut self) -> usize {
        self.nodes.push(None);
        self.nodes.len() - 1
    }

    pub fn set(&mut self, slot: usize, node: RawNode) {
        assert!(self.nodes[slot].is_none(), "slot set twice");
        self.nodes[slot] = Some(node);
    }

    pub fn add(&mut self, node: RawNode) -> usize {
        let slot = self.reserve();
        self.set(slot, node);
        slot
    }

    /// Canonicalize all raw nodes into the store and return the canonical id
    /// of `root`. Runs partition refinement over store nodes plus raw nodes,
    /// preserving existing store ids.
    pub fn commit(self, store: &mut TypeStore, root: RawRef) -> Result<TypeId, TypeError> {
        let committed = self.commit_all(store)?;
        Ok(committed.id_of(root))
    }

    /// Like [`GraphBuilder::commit`] but returns the canonical id of every
    /// raw slot.
    pub fn commit_all(self, store: &mut TypeStore) -> Result<Committed, TypeError> {
        let raw: Vec<RawNode> = self
            .nodes
            .into_iter()
            .map(|n| n.expect("unset builder slot"))
            .collect();
        // Validate branch sets and sort them before refinement.
        let raw: Vec<RawNode> = raw
            .into_iter()
            .map(|n| match n {
                RawNode::Tags {
                    role,
                    polarity,
                    mut branches,
                } => {
                    if branches.is_empty() {
                        return Err(TypeError::EmptyBranches);
                    }
                    branches.sort_by(|a, b| a.0.cmp(&b.0));
                    for w in branches.windows(2) {
                        if w[0].0 == w[1].0 {
                            return Err(TypeError::DuplicateTag(w[0].0.clone()));
                        }
                    }
                    Ok(RawNode::Tags {
                        role,
                        polarity,
                        branches,
                    })
                }
                other => Ok(other),
            })
            .collect::<Result<_, _>>()?;

        let n_store = store.nodes.len();
        let total = n_store + raw.len();
        // Global index: store nodes come first, raw nodes after.
        let raw_ix = |r: RawRef| -> usize {
            match r {
                RawRef::Canon(id) => id.0 as usize,
                RawRef::Raw(i) => n_store + i,
            }
        };
        let head = |ix: usize| -> HeadLabel {
            if ix < n_store {
                match &store.nodes[ix] {
                    TypeNode::End(p) => HeadLabel::End(*p),
                    TypeNode::Tags {
                        role,
                        polarity,
                        branches,
                    } => HeadLabel::Tags(
                        role.clone(),
                        *polarity,
                        branches.iter().map(|(t, _)| t.clone()).collect(),
                    ),
                    TypeNode::Channel { role, polarity, .. } => {
                        HeadLabel::Channel(role.clone(), *polarity)
                    }
                }
            } else {
                match &raw[ix - n_store] {
                    RawNode::End(p) => HeadLabel::End(*p),
                    RawNode::Tags {
                        role,
                        polarity,
                        branches,
                    } => HeadLabel::Tags(
                        role.clone(),
                        *polarity,
                        branches.iter().map(|(t, _)| t.clone()).collect(),
                    ),
                    RawNode::Channel { role, polarity, .. } => {
                        HeadLabel::Channel(role.clone(), *polarity)
                    }
                }
            }
        };
        let children = |ix: usize| -> Vec<usize> {
            if ix < n_store {
                match &store.nodes[ix] {
                    TypeNode::End(_) => vec![],
                    TypeNode::Tags { branches, .. } => {
                        branches.iter().map(|(_, t)| t.0 as usize).collect()
                    }
                    TypeNode::Channel {
                        payload,
                        continuation,
                        ..
                    } => vec![payload.0 as usize, continuation.0 as usize],
                }
            } else {
                match &raw[ix - n_store] {
                    RawNode::End(_) => vec![],
                    RawNode::Tags { branches, .. } => {
                        branches.iter().map(|(_, t)| raw_ix(*t)).collect()
                    }
                    RawNode::Channel {
                        payload,
                        continuation,
                        ..
                    } => vec![raw_ix(*payload), raw_ix(*continuation)],
                }
            }
        };

        // Initial partition by head label, then refine by child blocks.
        let mut block: Vec<usize> = vec![0; total];
        {
            let mut by_head: HashMap<HeadLabel, usize> = HashMap::new();
            for ix in 0..total {
                let next = by_head.len();
                let b = *by_head.entry(head(ix)).or_insert(next);
                block[ix] = b;
            }
        }
        loop {
            let mut by_sig: HashMap<(usize, Vec<usize>), usize> = HashMap::new();
            let mut next_block = vec![0; total];
            for ix in 0..total {
                let sig = (
                    block[ix],
                    children(ix).into_iter().map(|c| block[c]).collect(),
                );
                let fresh = by_sig.len();
                next_block[ix] = *by_sig.entry(sig).or_insert(fresh);
            }
            if next_block == block {
                break;
            }
            block = next_block;
        }

        // Map each block to a canonical id: the store node in it, if any.
        let mut block_to_id: HashMap<usize, TypeId> = HashMap::new();
        for ix in 0..n_store {
            let prev = block_to_id.insert(block[ix], TypeId(ix as u32));
            assert!(prev.is_none(), "store held bisimilar nodes");
        }
        // Fresh blocks get fresh ids, reserved up front so cycles close.
        let mut fresh_blocks: Vec<usize> = (n_store..total)
            .map(|ix| block[ix])
            .filter(|b| !block_to_id.contains_key(b))
            .collect();
        fresh_blocks.sort_unstable();
        fresh_blocks.dedup();
        for &b in &fresh_blocks {
            let id = TypeId(store.nodes.len() as u32);
            // Placeholder; filled below.
            store.nodes.push(TypeNode::End(Polarity::Out));
            block_to_id.insert(b, id);
        }
        for &b in &fresh_blocks {
            // Representative raw node of this block.
            let rep = (0..raw.len())
                .find(|i| block[n_store + i] == b)
                .expect("fresh block without raw node");
            let resolve = |r: RawRef| block_to_id[&block[raw_ix(r)]];
            let node = match &raw[rep] {
                RawNode::End(p) => TypeNode::End(*p),
                RawNode::Tags {
                    role,
                    polarity,
                    branches,
                } => TypeNode::Tags {
                    role: role.clone(),
                    polarity: *polarity,
                    branches: branches
                        .iter()
                        .map(|(t, r)| (t.clone(), resolve(*r)))
                        .collect(),
                },
                RawNode::Channel {
                    role,
                    polarity,
                    payload,
                    continuation,
                } => TypeNode::Channel {
                    role: role.clone(),
                    polarity: *polarity,
                    payload: resolve(*payload),
                    continuation: resolve(*continuation),
                },
            };
            let id = block_to_id[&b];
            store.nodes[id.0 as usize] = node.clone();
            store.intern.insert(node, id);
        }
        let slot_ids = (0..raw.len())
            .map(|i| block_to_id[&block[n_store + i]])
            .collect();
        Ok(Committed { slot_ids })
    }
}

/// Result of committing a [`GraphBuilder`]: canonical ids per raw slot.
pub struct Committed {
    slot_ids: Vec<TypeId>,
}

impl Committed {
    pub fn id_of(&self, r: RawRef) -> TypeId {
        match r {
            RawRef::Canon(id) => id,
            RawRef::Raw(i) => self.slot_ids[i],
        }
    }
}

/// Finite role → session type map; the abstract state of one session.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SessionMap {
    entries: BTreeMap<Role, TypeId>,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum SessionMapError {
    #[error("duplicate role `{0}` in session map")]
    DuplicateRole(Role),
    #[error("empty session map")]
    Empty,
}

impl SessionMap {
    pub fn new(entries: Vec<(Role, TypeId)>) -> Result<Self, SessionMapError> {
        if entries.is_empty() {
            return Err(SessionMapError::Empty);
        }
        let mut map = BTreeMap::new();
        for (role, ty) in entries {
            if map.insert(role.clone(), ty).is_some() {
                return Err(SessionMapError::DuplicateRole(role));
            }
        }
        Ok(SessionMap { entries: map })
    }

    pub fn singleton(role: Role, ty: TypeId) -> Self {
        SessionMap {
            entries: BTreeMap::from([(role, ty)]),
        }
    }

    /// Disjoint union `M | N`.
    pub fn join(&self, other: &SessionMap) -> Result<Self, SessionMapError> {
        let mut map = self.entries.clone();
        for (role, ty) in &other.entries {
            if map.insert(role.clone(), *ty).is_some() {
                return Err(SessionMapError::DuplicateRole(role.clone()));
            }
        }
        Ok(SessionMap { entries: map })
    }

    pub fn get(&self, role: &Role) -> Option<TypeId> {
        self.entries.get(role).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Role, TypeId)> {
        self.entries.iter().map(|(r, t)| (r, *t))
    }

    pub fn roles(&self) -> impl Iterator<Item = &Role> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A channel: a variable or a session endpoint `s[p]`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Channel {
    Var(Var),
    Endpoint(SessionName, Role),
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Var(x) => write!(f, "{x}"),
            Channel::Endpoint(s, r) => write!(f, "{s}[{r}]"),
        }
    }
}

/// Source byte range, kept on process nodes for diagnostics.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }
}

/// Process terms. Branch lists are kept sorted by tag.
#[derive(Clone, Debug)]
pub enum Process {
    Done {
        span: Span,
    },
    Close {
        span: Span,
        chan: Channel,
    },
    Wait {
        span: Span,
        chan: Channel,
        cont: Box<Process>,
    },
    Tags {
        span: Span,
        chan: Channel,
        peer: Role,
        polarity: Polarity,
        branches: Vec<(Tag, Process)>,
    },
    ChanOut {
        span: Span,
        chan: Channel,
        peer: Role,
        payload: Channel,
        cont: Box<Process>,
    },
    ChanIn {
        span: Span,
        chan: Channel,
        peer: Role,
        binder: Var,
        cont: Box<Process>,
    },
    Choice {
        span: Span,
        left: Box<Process>,
        right: Box<Process>,
    },
    Cast {
        span: Span,
        chan: Channel,
        target: TypeId,
        cont: Box<Process>,
    },
    Session {
        span: Span,
        name: SessionName,
        participants: Vec<(Role, Process)>,
    },
    Call {
        span: Span,
        name: ProcName,
        args: Vec<Channel>,
    },
}

impl Process {
    pub fn span(&self) -> Span {
        match self {
            Process::Done { span }
            | Process::Close { span, .. }
            | Process::Wait { span, .. }
            | Process::Tags { span, .. }
            | Process::ChanOut { span, .. }
            | Process::ChanIn { span, .. }
            | Process::Choice { span, .. }
            | Process::Cast { span, .. }
            | Process::Session { span, .. }
            | Process::Call { span, .. } => *span,
        }
    }

    /// Free channels (variables and endpoints of non-locally-bound sessions).
    pub fn free_channels(&self) -> BTreeSet<Channel> {
        fn go(p: &Process, bound_vars: &mut Vec<Var>, bound_sess: &mut Vec<SessionName>, out: &mut BTreeSet<Channel>) {
            let record = |c: &Channel, bound_vars: &Vec<Var>, bound_sess: &Vec<SessionName>, out: &mut BTreeSet<Channel>| match c {
                Channel::Var(x) => {
                    if !bound_vars.contains(x) {
                        out.insert(c.clone());
                    }
                }
                Channel::Endpoint(s, _) => {
                    if !bound_sess.contains(s) {
                        out.insert(c.clone());
                    }
                }
            };
            match p {
                Process::Done { .. } => {}
                Process::Close { chan, .. } => record(chan, bound_vars, bound_sess, out),
                Process::Wait { chan, cont, .. } => {
                    record(chan, bound_vars, bound_sess, out);
                    go(cont, bound_vars, bound_sess, out);
                }
                Process::Tags { chan, branches, .. } => {
                    record(chan, bound_vars, bound_sess, out);
                    for (_, b) in branches {
                        go(b, bound_vars, bound_sess, out);
                    }
                }
                Process::ChanOut {
                    chan, payload, cont, ..
                } => {
                    record(chan, bound_vars, bound_sess, out);
                    record(payload, bound_vars, bound_sess, out);
                    go(cont, bound_vars, bound_sess, out);
                }
                Process::ChanIn {
                    chan, binder, cont, ..
                } => {
                    record(chan, bound_vars, bound_sess, out);
                    bound_vars.push(binder.clone());
                    go(cont, bound_vars, bound_sess, out);
                    bound_vars.pop();
                }
                Process::Choice { left, right, .. } => {
                    go(left, bound_vars, bound_sess, out);
                    go(right, bound_vars, bound_sess, out);
                }
                Process::Cast { chan, cont, .. } => {
                    record(chan, bound_vars, bound_sess, out);
                    go(cont, bound_vars, bound_sess, out);
                }
                Process::Session {
                    name, participants, ..
                } => {
                    bound_sess.push(name.clone());
                    for (_, b) in participants {
                        go(b, bound_vars, bound_sess, out);
                    }
                    bound_sess.pop();
                }
                Process::Call { args, .. } => {
                    for a in args {
                        record(a, bound_vars, bound_sess, out);
                    }
                }
            }
        }
        let mut out = BTreeSet::new();
        go(self, &mut Vec::new(), &mut Vec::new(), &mut out);
        out
    }

    /// Capture-avoiding substitution of channels for channels. `subst` maps
    /// each replaced channel to its replacement; binders shadow as expected.
    pub fn substitute(&self, subst: &BTreeMap<Channel, Channel>) -> Process {
        if subst.is_empty() {
            return self.clone();
        }
        let app = |c: &Channel| subst.get(c).cloned().unwrap_or_else(|| c.clone());
        match self {
            Process::Done { span } => Process::Done { span: *span },
            Process::Close { span, chan } => Process::Close {
                span: *span,
                chan: app(chan),
            },
            Process::Wait { span, chan, cont } => Process::Wait {
                span: *span,
                chan: app(chan),
                cont: Box::new(cont.substitute(subst)),
            },
            Process::Tags {
                span,
                chan,
                peer,
                polarity,
                branches,
            } => Process::Tags {
                span: *span,
                chan: app(chan),
                peer: peer.clone(),
                polarity: *polarity,
                branches: branches
                    .iter()
                    .map(|(t, b)| (t.clone(), b.substitute(subst)))
                    .collect(),
            },
            Process::ChanOut {
                span,
                chan,
                peer,
                payload,
                cont,
            } => Process::ChanOut {
                span: *span,
                chan: app(chan),
                peer: peer.clone(),
                payload: app(payload),
                cont: Box::new(cont.substitute(subst)),
            },
            Process::ChanIn {
                span,
                chan,
                peer,
                binder,
                cont,
            } => {
                let mut inner = subst.clone();
                inner.remove(&Channel::Var(binder.clone()));
                Process::ChanIn {
                    span: *span,
                    chan: app(chan),
                    peer: peer.clone(),
                    binder: binder.clone(),
                    cont: Box::new(cont.substitute(&inner)),
                }
            }
            Process::Choice { span, left, right } => Process::Choice {
                span: *span,
                left: Box::new(left.substitute(subst)),
                right: Box::new(right.substitute(subst)),
            },
            Process::Cast {
                span,
                chan,
                target,
                cont,
            } => Process::Cast {
                span: *span,
                chan: app(chan),
                target: *target,
                cont: Box::new(cont.substitute(subst)),
            },
            Process::Session {
                span,
                name,
                participants,
            } => {
                let mut inner = subst.clone();
                inner.retain(|k, _| !matches!(k, Channel::Endpoint(s, _) if s == name));
                Process::Session {
                    span: *span,
                    name: name.clone(),
                    participants: participants
                        .iter()
                        .map(|(r, b)| (r.clone(), b.substitute(&inner)))
                        .collect(),
                }
            }
            Process::Call { span, name, args } => Process::Call {
                span: *span,
                name: name.clone(),
                args: args.iter().map(app).collect(),
            },
        }
    }

    /// Rename a bound session name (used when instantiating `new`).
    pub fn rename_session(&self, from: &SessionName, to: &SessionName) -> Process {
        let roles: BTreeSet<Role> = {
            fn collect(p: &Process, s: &SessionName, out: &mut BTreeSet<Role>) {
                let chk = |c: &Channel, out: &mut BTreeSet<Role>| {
                    if let Channel::Endpoint(n, r) = c {
                        if n == s {
                            out.insert(r.clone());
                        }
                    }
                };
                match p {
                    Process::Done { .. } => {}
                    Process::Close { chan, .. } => chk(chan, out),
                    Process::Wait { chan, cont, .. } => {
                        chk(chan, out);
                        collect(cont, s, out);
                    }
                    Process::Tags { chan, branches, .. } => {
                        chk(chan, out);
                        for (_, b) in branches {
                            collect(b, s, out);
                        }
                    }
                    Process::ChanOut {
                        chan, payload, cont, ..
                    } => {
                        chk(chan, out);
                        chk(payload, out);
                        collect(cont, s, out);
                    }
                    Process::ChanIn { chan, cont, .. } => {
                        chk(chan, out);
                        collect(cont, s, out);
                    }
                    Process::Choice { left, right, .. } => {
                        collect(left, s, out);
                        collect(right, s, out);
                    }
                    Process::Cast { chan, cont, .. } => {
                        chk(chan, out);
                        collect(cont, s, out);
                    }
                    Process::Session {
                        name, participants, ..
                    } => {
                        if name != s {
                            for (_, b) in participants {
                                collect(b, s, out);
                            }
                        }
                    }
                    Process::Call { args, .. } => {
                        for a in args {
                            chk(a, out);
                        }
                    }
                }
            }
            let mut out = BTreeSet::new();
            collect(self, from, &mut out);
            out
        };
        let subst: BTreeMap<Channel, Channel> = roles
            .into_iter()
            .map(|r| {
                (
                    Channel::Endpoint(from.clone(), r.clone()),
                    Channel::Endpoint(to.clone(), r),
                )
            })
            .collect();
        self.substitute(&subst)
    }
}

/// One process definition.
#[derive(Clone, Debug)]
pub struct Definition {
    pub name: ProcName,
    pub params: Vec<(Var, TypeId)>,
    pub declared_rank: Option<u64>,
    pub body: Process,
    pub span: Span,
}

/// A validated program: canonical type graph store, named type declarations
/// and process definitions. Immutable after validation.
#[derive(Clone, Debug, Default)]
pub struct Program {
    pub store: TypeStore,
    pub types: BTreeMap<TypeName, TypeId>,
    pub defs: BTreeMap<ProcName, Definition>,
}

impl Program {
    /// The global assignment table: name → (parameter types, declared rank).
    pub fn assignments(&self) -> GlobalAssignments {
        GlobalAssignments {
            entries: self
                .defs
                .iter()
                .map(|(n, d)| {
                    (
                        n.clone(),
                        (
                            d.params.iter().map(|(_, t)| *t).collect(),
                            d.declared_rank,
                        ),
                    )
                })
                .collect(),
        }
    }
}

/// Process name → (parameter types, declared rank).
#[derive(Clone, Debug, Default)]
pub struct GlobalAssignments {
    pub entries: BTreeMap<ProcName, (Vec<TypeId>, Option<u64>)>,
}

impl GlobalAssignments {
    pub fn get(&self, name: &ProcName) -> Option<&(Vec<TypeId>, Option<u64>)> {
        self.entries.get(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn role(s: &str) -> Role {
        Role::new(s)
    }

    fn tag(s: &str) -> Tag {
        Tag::new(s)
    }

    /// Bisimulation oracle by bounded unfolding: compares the trees denoted
    /// by two roots down to the depth bound |nodes(a)|*|nodes(b)|+1, which
    /// separates any two non-bisimilar regular trees.
    pub(crate) fn unfold_equal(store: &TypeStore, a: TypeId, b: TypeId) -> bool {
        fn go(store: &TypeStore, a: TypeId, b: TypeId, depth: usize) -> bool {
            if depth == 0 {
                return true;
            }
            match (store.node(a), store.node(b)) {
                (TypeNode::End(p), TypeNode::End(q)) => p == q,
                (
                    TypeNode::Tags {
                        role: r1,
                        polarity: p1,
                        branches: b1,
                    },
                    TypeNode::Tags {
                        role: r2,
                        polarity: p2,
                        branches: b2,
                    },
                ) => {
                    r1 == r2
                        && p1 == p2
                        && b1.len() == b2.len()
                        && b1.iter().zip(b2).all(|((t1, c1), (t2, c2))| {
                            t1 == t2 && go(store, *c1, *c2, depth - 1)
                        })
                }
                (
                    TypeNode::Channel {
                        role: r1,
                        polarity: p1,
                        payload: u1,
                        continuation: c1,
                    },
                    TypeNode::Channel {
                        role: r2,
                        polarity: p2,
                        payload: u2,
                        continuation: c2,
                    },
                ) => {
                    r1 == r2
                        && p1 == p2
                        && go(store, *u1, *u2, depth - 1)
                        && go(store, *c1, *c2, depth - 1)
                }
                _ => false,
            }
        }
        let bound = store.subterms(a).len() * store.subterms(b).len() + 1;
        go(store, a, b, bound)
    }

    #[test]
    fn interning_dedups_acyclic_nodes() {
        let mut st = TypeStore::new();
        let e1 = st.end(Polarity::Out);
        let e2 = st.end(Polarity::Out);
        assert_eq!(e1, e2);
        let t1 = st
            .tags(role("p"), Polarity::Out, vec![(tag("a"), e1)])
            .unwrap();
        let t2 = st
            .tags(role("p"), Polarity::Out, vec![(tag("a"), e2)])
            .unwrap();
        assert_eq!(t1, t2);
        assert!(type_equal(&st, t1, t2));
        let e3 = st.end(Polarity::In);
        assert_ne!(e1, e3);
    }

    #[test]
    fn minimization_identifies_unfoldings() {
        // X = p!{a: X}  vs  Y = p!{a: p!{a: Y}}
        let mut st = TypeStore::new();
        let x = {
            let mut b = GraphBuilder::new();
            let slot = b.reserve();
            b.set(
                slot,
                RawNode::Tags {
                    role: role("p"),
                    polarity: Polarity::Out,
                    branches: vec![(tag("a"), RawRef::Raw(slot))],
                },
            );
            b.commit(&mut st, RawRef::Raw(slot)).unwrap()
        };
        let y = {
            let mut b = GraphBuilder::new();
            let outer = b.reserve();
            let inner = b.add(RawNode::Tags {
                role: role("p"),
                polarity: Polarity::Out,
                branches: vec![(tag("a"), RawRef::Raw(outer))],
            });
            b.set(
                outer,
                RawNode::Tags {
                    role: role("p"),
                    polarity: Polarity::Out,
                    branches: vec![(tag("a"), RawRef::Raw(inner))],
                },
            );
            b.commit(&mut st, RawRef::Raw(outer)).unwrap()
        };
        assert_eq!(x, y);
        assert!(unfold_equal(&st, x, y));
    }

    #[test]
    fn subterm_counts() {
        let mut st = TypeStore::new();
        // Buyer S of Eq. (1): S = seller!{add: S, pay: end!} -> 2 semantic nodes.
        let end_out = st.end(Polarity::Out);
        let s = {
            let mut b = GraphBuilder::new();
            let slot = b.reserve();
            b.set(
                slot,
                RawNode::Tags {
                    role: role("seller"),
                    polarity: Polarity::Out,
                    branches: vec![
                        (tag("add"), RawRef::Raw(slot)),
                        (tag("pay"), RawRef::Canon(end_out)),
                    ],
                },
            );
            b.commit(&mut st, RawRef::Raw(slot)).unwrap()
        };
        assert_eq!(st.subterms(s).len(), 2);
        // Carrier type of Eq. (3): seller?ship.end? -> 2 nodes.
        let end_in = st.end(Polarity::In);
        let c = st
            .tags(role("seller"), Polarity::In, vec![(tag("ship"), end_in)])
            .unwrap();
        assert_eq!(st.subterms(c).len(), 2);
        // end! alone -> 1 node.
        assert_eq!(st.subterms(end_out).len(), 1);
    }

    #[test]
    fn subterms_closed() {
        let mut st = TypeStore::new();
        let end_out = st.end(Polarity::Out);
        let s = {
            let mut b = GraphBuilder::new();
            let slot = b.reserve();
            let ch = b.add(RawNode::Channel {
                role: role("q"),
                polarity: Polarity::In,
                payload: RawRef::Canon(end_out),
                continuation: RawRef::Raw(slot),
            });
            b.set(
                slot,
                RawNode::Tags {
                    role: role("p"),
                    polarity: Polarity::Out,
                    branches: vec![(tag("a"), RawRef::Raw(ch)), (tag("b"), RawRef::Canon(end_out))],
                },
            );
            b.commit(&mut st, RawRef::Raw(slot)).unwrap()
        };
        let subs = st.subterms(s);
        for &m in &subs {
            assert!(st.subterms(m).is_subset(&subs));
        }
    }

    #[test]
    fn duplicate_tags_rejected() {
        let mut st = TypeStore::new();
        let e1 = st.end(Polarity::Out);
        let e2 = st.end(Polarity::In);
        let err = st
            .tags(
                role("p"),
                Polarity::Out,
                vec![(tag("a"), e1), (tag("a"), e2)],
            )
            .unwrap_err();
        assert!(matches!(err, TypeError::DuplicateTag(_)));
    }

    #[test]
    fn substitution_respects_binders() {
        let x = Var::new("x");
        let y = Var::new("y");
        let body = Process::ChanIn {
            span: Span::default(),
            chan: Channel::Var(y.clone()),
            peer: role("q"),
            binder: x.clone(),
            cont: Box::new(Process::Close {
                span: Span::default(),
                chan: Channel::Var(x.clone()),
            }),
        };
        let subst = BTreeMap::from([(
            Channel::Var(x.clone()),
            Channel::Endpoint(SessionName::new("s"), role("p")),
        )]);
        let out = body.substitute(&subst);
        match out {
            Process::ChanIn { cont, .. } => match *cont {
                Process::Close { chan, .. } => assert_eq!(chan, Channel::Var(x)),
                _ => panic!("unexpected shape"),
            },
            _ => panic!("unexpected shape"),
        }
    }
}

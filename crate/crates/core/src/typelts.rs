//! The labeled transition system of session maps: coherence, session rank,
//! type boundedness and duality.
//!
//! Outputs go through an explicit commit step: an uncommitted output node
//! first picks one tag (a τ transition), and only committed singleton outputs
//! synchronize with matching inputs. Committed entries are first-class LTS
//! states, so picking and syncing count as separate τ steps in the rank.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::redsys::{self, StateCapExceeded};
use crate::syntax::{
    Cost, GraphBuilder, Polarity, RawNode, RawRef, Role, SessionMap, Tag, TypeId, TypeNode,
    TypeStore,
};

/// Visible action of a session map.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Action {
    /// `!✓`
    OutDone,
    /// `?✓`
    InDone,
    /// Subject exchanges a tag with peer.
    Tag {
        subject: Role,
        peer: Role,
        polarity: Polarity,
        tag: Tag,
    },
    /// Subject exchanges a channel of the given payload type with peer.
    Chan {
        subject: Role,
        peer: Role,
        polarity: Polarity,
        payload: TypeId,
    },
}

impl Action {
    /// Complement: swap subject and peer, flip polarity. Undefined for the
    /// termination signals.
    pub fn complement(&self) -> Option<Action> {
        match self {
            Action::OutDone | Action::InDone => None,
            Action::Tag {
                subject,
                peer,
                polarity,
                tag,
            } => Some(Action::Tag {
                subject: peer.clone(),
                peer: subject.clone(),
                polarity: polarity.complement(),
                tag: tag.clone(),
            }),
            Action::Chan {
                subject,
                peer,
                polarity,
                payload,
            } => Some(Action::Chan {
                subject: peer.clone(),
                peer: subject.clone(),
                polarity: polarity.complement(),
                payload: *payload,
            }),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Label {
    Tau,
    Act(Action),
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Label::Tau => write!(f, "tau"),
            Label::Act(Action::OutDone) => write!(f, "!check"),
            Label::Act(Action::InDone) => write!(f, "?check"),
            Label::Act(Action::Tag {
                subject,
                peer,
                polarity,
                tag,
            }) => write!(f, "{subject}:{peer}{polarity}{tag}"),
            Label::Act(Action::Chan {
                subject,
                peer,
                polarity,
                ..
            }) => write!(f, "{subject}:{peer}{polarity}(_)"),
        }
    }
}

/// One role's entry in an LTS state: its type plus whether an output node has
/// already committed to its (single) tag.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Entry {
    pub ty: TypeId,
    pub committed: bool,
}

impl Entry {
    pub fn fresh(ty: TypeId) -> Self {
        Entry {
            ty,
            committed: false,
        }
    }
}

/// Session map state of the LTS, with commit flags.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LtsState {
    pub entries: BTreeMap<Role, Entry>,
}

pub type LtsKey = Vec<(Role, TypeId, bool)>;

impl LtsState {
    pub fn from_map(map: &SessionMap) -> Self {
        LtsState {
            entries: map
                .iter()
                .map(|(r, t)| (r.clone(), Entry::fresh(t)))
                .collect(),
        }
    }

    pub fn key(&self) -> LtsKey {
        self.entries
            .iter()
            .map(|(r, e)| (r.clone(), e.ty, e.committed))
            .collect()
    }
}

/// Action-labeled transitions of a single role's entry (rules l-end,
/// l-channel, l-tag; output tags fire only once committed).
fn entry_actions(store: &TypeStore, role: &Role, entry: Entry) -> Vec<(Action, Entry)> {
    match store.node(entry.ty) {
        TypeNode::End(p) => vec![(
            match p {
                Polarity::Out => Action::OutDone,
                Polarity::In => Action::InDone,
            },
            entry,
        )],
        TypeNode::Tags {
            role: peer,
            polarity,
            branches,
        } => match polarity {
            Polarity::In => branches
                .iter()
                .map(|(tag, cont)| {
                    (
                        Action::Tag {
                            subject: role.clone(),
                            peer: peer.clone(),
                            polarity: Polarity::In,
                            tag: tag.clone(),
                        },
                        Entry::fresh(*cont),
                    )
                })
                .collect(),
            Polarity::Out => {
                if entry.committed {
                    let (tag, cont) = &branches[0];
                    vec![(
                        Action::Tag {
                            subject: role.clone(),
                            peer: peer.clone(),
                            polarity: Polarity::Out,
                            tag: tag.clone(),
                        },
                        Entry::fresh(*cont),
                    )]
                } else {
                    vec![]
                }
            }
        },
        TypeNode::Channel {
            role: peer,
            polarity,
            payload,
            continuation,
        } => vec![(
            Action::Chan {
                subject: role.clone(),
                peer: peer.clone(),
                polarity: *polarity,
                payload: *payload,
            },
            Entry::fresh(*continuation),
        )],
    }
}

/// True iff the state fires `?✓`: exactly one role at `end?`, the rest at
/// `end!`.
pub fn fires_termination(store: &TypeStore, state: &LtsState) -> bool {
    let mut waiters = 0usize;
    for entry in state.entries.values() {
        match store.node(entry.ty) {
            TypeNode::End(Polarity::In) => waiters += 1,
            TypeNode::End(Polarity::Out) => {}
            _ => return false,
        }
    }
    waiters == 1
}

/// All derivable transitions of a session-map state.
pub fn transitions(store: &mut TypeStore, state: &LtsState) -> Vec<(Label, LtsState)> {
    let mut out = Vec::new();
    let roles: Vec<Role> = state.entries.keys().cloned().collect();

    // l-pick: commit one output tag (τ).
    for role in &roles {
        let entry = state.entries[role];
        if entry.committed {
            continue;
        }
        if let TypeNode::Tags {
            polarity: Polarity::Out,
            branches,
            role: peer,
        } = store.node(entry.ty).clone()
        {
            for (tag, cont) in branches {
                let committed_ty = store
                    .tags(peer.clone(), Polarity::Out, vec![(tag, cont)])
                    .expect("singleton branch set");
                let mut next = state.clone();
                next.entries.insert(
                    role.clone(),
                    Entry {
                        ty: committed_ty,
                        committed: true,
                    },
                );
                out.push((Label::Tau, next));
            }
        }
    }

    // l-sync: a committed output or a channel action paired with its
    // complement (τ). Only the output side initiates, so each sync is
    // emitted once.
    for sender in &roles {
        let se = state.entries[sender];
        for (sa, snext) in entry_actions(store, sender, se) {
            let is_output = matches!(
                &sa,
                Action::Tag {
                    polarity: Polarity::Out,
                    ..
                } | Action::Chan {
                    polarity: Polarity::Out,
                    ..
                }
            );
            if !is_output {
                continue;
            }
            let peer = match &sa {
                Action::Tag { peer, .. } | Action::Chan { peer, .. } => peer.clone(),
                _ => unreachable!(),
            };
            if peer == *sender || !state.entries.contains_key(&peer) {
                continue;
            }
            let want = sa.complement().expect("tag/chan actions have complements");
            let re = state.entries[&peer];
            for (ra, rnext) in entry_actions(store, &peer, re) {
                if ra == want {
                    let mut next = state.clone();
                    next.entries.insert(sender.clone(), snext.clone());
                    next.entries.insert(peer.clone(), rnext);
                    out.push((Label::Tau, next));
                }
            }
        }
    }

    // l-terminate (degenerating to l-end on singletons): ?✓ self-transition.
    let term = fires_termination(store, state);
    if term {
        out.push((Label::Act(Action::InDone), state.clone()));
    }

    // Single-role maps also expose their raw action-labeled transitions.
    if roles.len() == 1 {
        let role = &roles[0];
        for (a, next) in entry_actions(store, role, state.entries[role]) {
            if matches!(a, Action::InDone) && term {
                continue; // already emitted by the termination case
            }
            let mut st = state.clone();
            st.entries.insert(role.clone(), next);
            out.push((Label::Act(a), st));
        }
    }

    out
}

fn tau_successors(store: &mut TypeStore, state: &LtsState) -> Vec<LtsState> {
    transitions(store, state)
        .into_iter()
        .filter_map(|(l, n)| matches!(l, Label::Tau).then_some(n))
        .collect()
}

/// Explored τ-graph of a session map, with per-state `?✓` marks.
pub struct TauGraph {
    pub graph: redsys::Exploration<LtsState, LtsKey>,
    pub fires: Vec<bool>,
}

pub fn explore_tau_state(
    store: &mut TypeStore,
    init: LtsState,
    cap: usize,
) -> Result<TauGraph, StateCapExceeded> {
    struct Sys<'a>(std::cell::RefCell<&'a mut TypeStore>);
    impl<'a> redsys::System for Sys<'a> {
        type State = LtsState;
        type Key = LtsKey;
        fn key(&self, s: &LtsState) -> LtsKey {
            s.key()
        }
        fn successors(&self, s: &LtsState) -> Vec<LtsState> {
            tau_successors(*self.0.borrow_mut(), s)
        }
    }
    let sys = Sys(std::cell::RefCell::new(store));
    let graph = redsys::explore(&sys, init, cap)?;
    let store = sys.0.into_inner();
    let fires = graph
        .states
        .iter()
        .map(|s| fires_termination(store, s))
        .collect();
    Ok(TauGraph { graph, fires })
}

pub fn explore_tau(
    store: &mut TypeStore,
    map: &SessionMap,
    cap: usize,
) -> Result<TauGraph, StateCapExceeded> {
    explore_tau_state(store, LtsState::from_map(map), cap)
}

/// Session rank of an LTS state with commit flags; used by the simulator for
/// sessions whose outputs have already picked a tag.
pub fn session_rank_state(
    store: &mut TypeStore,
    init: LtsState,
    cap: usize,
) -> Result<Cost, StateCapExceeded> {
    let tg = explore_tau_state(store, init, cap)?;
    Ok(match tg.graph.distance_to(|ix| tg.fires[ix]) {
        Some(d) => Cost::Fin(d as u64 + 1),
        None => Cost::Inf,
    })
}

/// Coherence `# M`: every τ-reachable state can τ-reach a state firing `?✓`.
pub fn coherent(
    store: &mut TypeStore,
    map: &SessionMap,
    cap: usize,
) -> Result<bool, StateCapExceeded> {
    let tg = explore_tau(store, map, cap)?;
    let seeds = (0..tg.graph.len()).filter(|&ix| tg.fires[ix]);
    let closure = tg.graph.backward_closure(seeds);
    Ok(closure.iter().all(|&b| b))
}

/// Session rank ‖M‖ = min |M ⇒?✓|, counting the final `?✓` as one step.
pub fn session_rank(
    store: &mut TypeStore,
    map: &SessionMap,
    cap: usize,
) -> Result<Cost, StateCapExceeded> {
    let tg = explore_tau(store, map, cap)?;
    Ok(match tg.graph.distance_to(|ix| tg.fires[ix]) {
        Some(d) => Cost::Fin(d as u64 + 1),
        None => Cost::Inf,
    })
}

/// Combined report used by the CLI (`coherence`, `lts --json`).
#[derive(Debug, Clone, serde::Serialize)]
pub struct LtsReport {
    pub coherent: bool,
    pub rank: Cost,
    pub states: usize,
    pub transitions: usize,
}

pub fn analyze(
    store: &mut TypeStore,
    map: &SessionMap,
    cap: usize,
) -> Result<LtsReport, StateCapExceeded> {
    let tg = explore_tau(store, map, cap)?;
    let seeds = (0..tg.graph.len()).filter(|&ix| tg.fires[ix]);
    let closure = tg.graph.backward_closure(seeds);
    let coherent = closure.iter().all(|&b| b);
    let rank = match tg.graph.distance_to(|ix| tg.fires[ix]) {
        Some(d) => Cost::Fin(d as u64 + 1),
        None => Cost::Inf,
    };
    let transitions = tg.graph.succs.iter().map(|s| s.len()).sum::<usize>()
        + tg.fires.iter().filter(|&&b| b).count();
    Ok(LtsReport {
        coherent,
        rank,
        states: tg.graph.len(),
        transitions,
    })
}

/// GraphViz DOT export of the labeled session-map LTS.
pub fn to_dot(
    store: &mut TypeStore,
    map: &SessionMap,
    cap: usize,
) -> Result<String, StateCapExceeded> {
    let tg = explore_tau(store, map, cap)?;
    let mut out = String::from("digraph lts {\n");
    for (ix, st) in tg.graph.states.iter().enumerate() {
        let label: Vec<String> = st
            .entries
            .iter()
            .map(|(r, e)| {
                format!(
                    "{}{}: {}",
                    r,
                    if e.committed { "*" } else { "" },
                    crate::parser::render_type_inline(store, e.ty)
                )
            })
            .collect();
        out.push_str(&format!(
            "  n{} [label=\"{}\"];\n",
            ix,
            label.join(" | ").replace('"', "\\\"")
        ));
    }
    let states = tg.graph.states.clone();
    for (ix, st) in states.iter().enumerate() {
        for (label, next) in transitions(store, st) {
            if let Some(&tgt) = tg.graph.keys.get(&next.key()) {
                out.push_str(&format!("  n{ix} -> n{tgt} [label=\"{label}\"];\n"));
            }
        }
    }
    out.push_str("}\n");
    Ok(out)
}

/// Type boundedness: from every node reachable through branch and
/// continuation edges an End node is reachable through those same edges.
/// Payload types are separate trees and get their own calls where rules
/// require it.
pub fn bounded(store: &TypeStore, root: TypeId) -> bool {
    let mut nodes = BTreeSet::new();
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        if !nodes.insert(id) {
            continue;
        }
        match store.node(id) {
            TypeNode::End(_) => {}
            TypeNode::Tags { branches, .. } => stack.extend(branches.iter().map(|(_, t)| *t)),
            TypeNode::Channel { continuation, .. } => stack.push(*continuation),
        }
    }
    let node_list: Vec<TypeId> = nodes.iter().copied().collect();
    let mut can_end: BTreeSet<TypeId> = node_list
        .iter()
        .copied()
        .filter(|id| matches!(store.node(*id), TypeNode::End(_)))
        .collect();
    loop {
        let mut changed = false;
        for &id in &node_list {
            if can_end.contains(&id) {
                continue;
            }
            let reaches = match store.node(id) {
                TypeNode::End(_) => true,
                TypeNode::Tags { branches, .. } => branches.iter().any(|(_, t)| can_end.contains(t)),
                TypeNode::Channel { continuation, .. } => can_end.contains(continuation),
            };
            if reaches {
                can_end.insert(id);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    node_list.iter().all(|id| can_end.contains(id))
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum DualityError {
    #[error("type is unbounded")]
    Unbounded,
    #[error("domain is empty")]
    EmptyDomain,
    #[error("subject role `{0}` occurs in the domain")]
    RoleClash(Role),
    #[error("domain misses target role `{0}`")]
    MissingTarget(Role),
}

/// Corecursive builder shared by duality and the discriminator. It constructs,
/// for one domain role at a time, the session type prescribed by the paper's
/// map equations; knots are tied through memoized builder slots.
pub(crate) struct MapBuilder<'a> {
    pub store: &'a mut TypeStore,
    pub builder: GraphBuilder,
    dual_memo: HashMap<(Role, TypeId), RawRef>,
    pub subject: Role,
    pub domain: Vec<Role>,
}

impl<'a> MapBuilder<'a> {
    pub fn new(store: &'a mut TypeStore, subject: Role, domain: Vec<Role>) -> Self {
        MapBuilder {
            store,
            builder: GraphBuilder::new(),
            dual_memo: HashMap::new(),
            subject,
            domain,
        }
    }

    /// `(D \ {q}) ! tag . cont`: broadcast prefix in increasing role order.
    pub fn broadcast(&mut self, skip: &Role, tag: &Tag, cont: RawRef) -> RawRef {
        let others: Vec<Role> = self
            .domain
            .iter()
            .filter(|r| *r != skip)
            .cloned()
            .collect();
        let mut acc = cont;
        for r in others.iter().rev() {
            let id = self.builder.add(RawNode::Tags {
                role: r.clone(),
                polarity: Polarity::Out,
                branches: vec![(tag.clone(), acc)],
            });
            acc = RawRef::Raw(id);
        }
        acc
    }

    /// dual_D(p ▷ S) at role `r`. Pass-through chains (channel case, r not
    /// the subject of the node) terminate because S is bounded.
    pub fn dual_at(&mut self, r: &Role, s: TypeId) -> RawRef {
        let key = (r.clone(), s);
        if let Some(&slot) = self.dual_memo.get(&key) {
            return slot;
        }
        match self.store.node(s).clone() {
            TypeNode::End(Polarity::In) => {
                let out = RawRef::Raw(self.builder.add(RawNode::End(Polarity::Out)));
                self.dual_memo.insert(key, out);
                out
            }
            TypeNode::End(Polarity::Out) => {
                let min = self.domain.iter().min().unwrap().clone();
                let pol = if *r == min { Polarity::In } else { Polarity::Out };
                let out = RawRef::Raw(self.builder.add(RawNode::End(pol)));
                self.dual_memo.insert(key, out);
                out
            }
            TypeNode::Tags {
                role: q,
                polarity,
                branches,
            } => {
                let slot = self.builder.reserve();
                self.dual_memo.insert(key, RawRef::Raw(slot));
                let node = if *r == q {
                    let bs = branches
                        .iter()
                        .map(|(tag, cont)| {
                            let inner = self.dual_at(r, *cont);
                            (tag.clone(), self.broadcast(&q, tag, inner))
                        })
                        .collect();
                    RawNode::Tags {
                        role: self.subject.clone(),
                        polarity: polarity.complement(),
                        branches: bs,
                    }
                } else {
                    RawNode::Tags {
                        role: q.clone(),
                        polarity: Polarity::In,
                        branches: branches
                            .iter()
                            .map(|(tag, cont)| (tag.clone(), self.dual_at(r, *cont)))
                            .collect(),
                    }
                };
                self.builder.set(slot, node);
                RawRef::Raw(slot)
            }
            TypeNode::Channel {
                role: q,
                polarity,
                payload,
                continuation,
            } => {
                if *r == q {
                    let slot = self.builder.reserve();
                    self.dual_memo.insert(key, RawRef::Raw(slot));
                    let inner = self.dual_at(r, continuation);
                    self.builder.set(
                        slot,
                        RawNode::Channel {
                            role: self.subject.clone(),
                            polarity: polarity.complement(),
                            payload: RawRef::Canon(payload),
                            continuation: inner,
                        },
                    );
                    RawRef::Raw(slot)
                } else {
                    // Equation passes r through unchanged; finite chain since
                    // S is bounded, so no slot is needed.
                    let out = self.dual_at(r, continuation);
                    self.dual_memo.insert(key, out);
                    out
                }
            }
        }
    }
}

/// `dual_D(p ▷ S)`: the session map corecursively completing a bounded `S`
/// into a coherent session.
pub fn dual(
    store: &mut TypeStore,
    subject: &Role,
    s: TypeId,
    domain: &BTreeSet<Role>,
) -> Result<SessionMap, DualityError> {
    if domain.is_empty() {
        return Err(DualityError::EmptyDomain);
    }
    if domain.contains(subject) {
        return Err(DualityError::RoleClash(subject.clone()));
    }
    for t in store.targets(s) {
        if !domain.contains(&t) {
            return Err(DualityError::MissingTarget(t));
        }
    }
    if !bounded(store, s) {
        return Err(DualityError::Unbounded);
    }
    let domain_v: Vec<Role> = domain.iter().cloned().collect();
    let mut entries = Vec::new();
    for r in &domain_v {
        let mut mb = MapBuilder::new(store, subject.clone(), domain_v.clone());
        let root = mb.dual_at(r, s);
        let builder = mb.builder;
        let ty = builder
            .commit(store, root)
            .expect("duality builds well-formed graphs");
        entries.push((r.clone(), ty));
    }
    Ok(SessionMap::new(entries).expect("domain roles are distinct"))
}

//! Operational semantics: structural normalization, reduction, the
//! termination measure and schedulers.
//!
//! Runtime states are kept as a *soup*: the set of live sessions (with their
//! tracked session-map states) plus the parallel threads, each normalized to
//! a prefix, a choice or `done`. Normalization applies the directed
//! precongruence rules on insertion: calls unfold, unguarded casts are
//! performed (they always sit under their session's restriction in a closed
//! term), and `new` opens into fresh threads. Reassociation is implicit in
//! the soup view; rendering a soup back to a term re-nests sessions along the
//! session/thread incidence forest.
//!
//! The measure of a state is the lexicographic pair (future, past): the sum
//! of thread ranks plus the sum of the live sessions' ranks. The guided
//! scheduler resolves choices toward the measure-minimal branch (breaking
//! ties with the finite-derivation height) and then takes the communication
//! whose successor has the smallest measure; for well-typed programs one
//! strictly decreasing communication always exists.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::parser::Diagnostic;
use crate::redsys::DEFAULT_STATE_CAP;
use crate::syntax::{
    Channel, Cost, Polarity, ProcName, Process, Program, Role, SessionMap, SessionName, Span,
    TypeId, TypeNode,
};
use crate::typecheck::{Checker, Ctx, RankTable};
use crate::typelts::{self, Entry, LtsState};

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("term does not type-check: {0}")]
    NotTyped(String),
    #[error("internal stuck state (this is a bug signal): {0}")]
    InternalStuck(String),
    #[error("call unfolding diverged (call-only cycle)")]
    UnfoldDiverged,
    #[error("state cap exceeded")]
    StateCapExceeded,
    #[error("unknown definition `{0}`")]
    UnknownDefinition(ProcName),
    #[error("entry point `{0}` takes parameters; simulation needs a closed body")]
    EntryHasParams(ProcName),
}

impl From<Diagnostic> for RuntimeError {
    fn from(d: Diagnostic) -> Self {
        RuntimeError::NotTyped(d.message)
    }
}

/// Lexicographically ordered termination measure.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct Measure(pub Cost, pub Cost);

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.0, self.1)
    }
}

impl Measure {
    pub const ZERO: Measure = Measure(Cost::Fin(0), Cost::Fin(0));

    fn add(self, other: Measure) -> Measure {
        Measure(self.0.add(other.0), self.1.add(other.1))
    }
}

/// One live session: fixed role set and the tracked session-map LTS state.
#[derive(Clone, Debug)]
pub struct LiveSession {
    pub name: SessionName,
    pub roles: Vec<Role>,
    pub state: LtsState,
}

/// Canonical runtime state.
#[derive(Clone, Debug, Default)]
pub struct Soup {
    pub sessions: Vec<LiveSession>,
    pub threads: Vec<std::sync::Arc<Process>>,
    next_fresh: u32,
}

impl Soup {
    pub fn terminated(&self) -> bool {
        self.sessions.is_empty()
            && self
                .threads
                .iter()
                .all(|t| matches!(&**t, Process::Done { .. }))
    }
}

/// A single reduction: rule name, human-readable redex, successor state.
pub struct Reduction {
    pub rule: &'static str,
    pub redex: String,
    pub next: Soup,
}

/// Simulation driver holding the working store and analysis caches.
pub struct Runtime<'p> {
    pub checker: Checker<'p>,
    ranks: RankTable,
    heights: BTreeMap<ProcName, Cost>,
    map_rank_cache: HashMap<Vec<(Role, TypeId, bool)>, Cost>,
    measure_cache: HashMap<String, Measure>,
}

impl<'p> Runtime<'p> {
    /// Set up a runtime for a program. The program must be well-typed for the
    /// guided scheduler's guarantees; this recomputes the minimal ranks.
    pub fn new(program: &'p Program) -> Self {
        let report = crate::typecheck::check_program(program);
        let ranks: RankTable = report
            .definitions
            .iter()
            .map(|d| {
                (
                    ProcName::new(&d.name),
                    d.inferred_rank.unwrap_or(Cost::Inf),
                )
            })
            .collect();
        let mut checker = Checker::new(program);
        checker.verify_coherence = false;
        Runtime {
            checker,
            ranks,
            heights: definition_heights(program),
            map_rank_cache: HashMap::new(),
            measure_cache: HashMap::new(),
        }
    }

    fn def_body(&self, name: &ProcName) -> Result<&'p crate::syntax::Definition, RuntimeError> {
        self.checker
            .program
            .defs
            .get(name)
            .ok_or_else(|| RuntimeError::UnknownDefinition(name.clone()))
    }

    /// Insert a process into the soup, applying the directed precongruence
    /// rules: s-call unfolds, s-cast-new/s-cast-swap perform unguarded casts,
    /// and sessions open into fresh threads.
    pub fn insert(&mut self, soup: &mut Soup, term: Process) -> Result<(), RuntimeError> {
        let mut term = term;
        let mut unfolds = 0usize;
        loop {
            match term {
                Process::Call { name, args, .. } => {
                    unfolds += 1;
                    if unfolds > self.checker.program.defs.len() + 1 {
                        return Err(RuntimeError::UnfoldDiverged);
                    }
                    let def = self.def_body(&name)?;
                    let subst: BTreeMap<Channel, Channel> = def
                        .params
                        .iter()
                        .zip(&args)
                        .map(|((v, _), a)| (Channel::Var(v.clone()), a.clone()))
                        .collect();
                    term = def.body.substitute(&subst);
                }
                Process::Cast {
                    chan, target, cont, ..
                } => {
                    // All unguarded casts in a closed term sit under their
                    // session's restriction after floating; performing the
                    // cast erases it and moves the tracked map entry to the
                    // target type (coherence is preserved by fair subtyping).
                    if let Channel::Endpoint(s, r) = &chan {
                        if let Some(sess) = soup.sessions.iter_mut().find(|ls| &ls.name == s) {
                            sess.state.entries.insert(r.clone(), Entry::fresh(target));
                        }
                    }
                    term = *cont;
                }
                Process::Session {
                    name, participants, ..
                } => {
                    soup.next_fresh += 1;
                    let fresh = SessionName::new(format!("{}#{}", name.as_str(), soup.next_fresh));
                    let mut entries = Vec::new();
                    let mut bodies = Vec::new();
                    for (role, body) in &participants {
                        let body = body.rename_session(&name, &fresh);
                        let ep = Channel::Endpoint(fresh.clone(), role.clone());
                        let ty = self.infer_endpoint_type(soup, &body, &ep)?;
                        entries.push((role.clone(), Entry::fresh(ty)));
                        bodies.push(body);
                    }
                    soup.sessions.push(LiveSession {
                        name: fresh,
                        roles: participants.iter().map(|(r, _)| r.clone()).collect(),
                        state: LtsState {
                            entries: entries.into_iter().collect(),
                        },
                    });
                    for body in bodies {
                        self.insert(soup, body)?;
                    }
                    return Ok(());
                }
                other => {
                    soup.threads.push(std::sync::Arc::new(other));
                    return Ok(());
                }
            }
        }
    }

    /// Context of a thread: the tracked types of the endpoints it uses.
    fn thread_ctx(&self, soup: &Soup, thread: &Process) -> Result<Ctx, RuntimeError> {
        let mut pairs = Vec::new();
        for chan in thread.free_channels() {
            match &chan {
                Channel::Endpoint(s, r) => {
                    let sess = soup
                        .sessions
                        .iter()
                        .find(|ls| &ls.name == s)
                        .ok_or_else(|| {
                            RuntimeError::InternalStuck(format!("dangling endpoint {chan}"))
                        })?;
                    let entry = sess.state.entries.get(r).ok_or_else(|| {
                        RuntimeError::InternalStuck(format!("role {r} missing in {s}"))
                    })?;
                    pairs.push((chan.clone(), entry.ty));
                }
                Channel::Var(_) => {
                    return Err(RuntimeError::InternalStuck(format!(
                        "free variable {chan} in a runtime thread"
                    )))
                }
            }
        }
        Ok(Ctx::from_known(pairs))
    }

    /// Synthesize the type at which `body` uses the fresh endpoint `ep`. The
    /// endpoint's session is not yet registered, so the context is built from
    /// the remaining free channels only.
    fn infer_endpoint_type(
        &mut self,
        soup: &Soup,
        body: &Process,
        ep: &Channel,
    ) -> Result<TypeId, RuntimeError> {
        let mut pairs = Vec::new();
        for chan in body.free_channels() {
            if &chan == ep {
                continue;
            }
            match &chan {
                Channel::Endpoint(s, r) => {
                    let sess = soup.sessions.iter().find(|ls| &ls.name == s).ok_or_else(
                        || RuntimeError::InternalStuck(format!("dangling endpoint {chan}")),
                    )?;
                    let entry = sess.state.entries.get(r).ok_or_else(|| {
                        RuntimeError::InternalStuck(format!("role {r} missing in {s}"))
                    })?;
                    pairs.push((chan.clone(), entry.ty));
                }
                Channel::Var(_) => {
                    return Err(RuntimeError::InternalStuck(format!(
                        "free variable {chan} in a runtime thread"
                    )))
                }
            }
        }
        let mut ctx = Ctx::from_known(pairs);
        ctx.add_open(ep.clone()).map_err(RuntimeError::from)?;
        let ranks = self.ranks.clone();
        let out = self.checker.infer(&ctx, body, &ranks)?;
        out.synth.get(ep).copied().ok_or_else(|| {
            RuntimeError::InternalStuck(format!("no synthesized type for {ep}"))
        })
    }

    /// Rank of a thread under the tracked context.
    fn thread_rank(&mut self, soup: &Soup, thread: &Process) -> Result<Cost, RuntimeError> {
        let ctx = self.thread_ctx(soup, thread)?;
        let ranks = self.ranks.clone();
        let out = self.checker.infer(&ctx, thread, &ranks)?;
        Ok(out.rank)
    }

    fn session_rank(&mut self, state: &LtsState) -> Result<Cost, RuntimeError> {
        let key = state.key();
        if let Some(&hit) = self.map_rank_cache.get(&key) {
            return Ok(hit);
        }
        let rank =
            typelts::session_rank_state(&mut self.checker.store, state.clone(), DEFAULT_STATE_CAP)
                .map_err(|_| RuntimeError::StateCapExceeded)?;
        self.map_rank_cache.insert(key, rank);
        Ok(rank)
    }

    /// The measure of a soup state: future effort (thread ranks) and past
    /// effort (sum of live sessions' ranks).
    pub fn measure_soup(&mut self, soup: &Soup) -> Result<Measure, RuntimeError> {
        let mut future = Cost::ZERO;
        for t in &soup.threads {
            future = future.add(self.thread_rank(soup, t.as_ref())?);
        }
        let mut past = Cost::ZERO;
        for s in &soup.sessions {
            past = past.add(self.session_rank(&s.state)?);
        }
        Ok(Measure(future, past))
    }

    /// The measure of a process term under a known context, per the refined
    /// typing rules: unguarded casts add their weight to the future
    /// component, unguarded sessions add their rank to the past component,
    /// and threads contribute their rank.
    pub fn measure_term(&mut self, ctx: &Ctx, term: &Process) -> Result<Measure, RuntimeError> {
        match term {
            Process::Cast {
                chan, target, cont, ..
            } => {
                let s = ctx.known(chan).ok_or_else(|| {
                    RuntimeError::NotTyped(format!("cast channel `{chan}` has no known type"))
                })?;
                let m = self.checker.fair_subtype(s, *target).ok_or_else(|| {
                    RuntimeError::NotTyped("cast target is not a fair supertype".into())
                })?;
                let mut inner = ctx.clone();
                inner.set_known(chan, *target);
                let inner_measure = self.measure_term(&inner, cont)?;
                Ok(inner_measure.add(Measure(Cost::Fin(m), Cost::ZERO)))
            }
            Process::Session {
                name, participants, ..
            } => {
                let frees: Vec<BTreeSet<Channel>> = participants
                    .iter()
                    .map(|(_, b)| b.free_channels())
                    .collect();
                let mut total = Measure::ZERO;
                let mut entries = Vec::new();
                let ranks = self.ranks.clone();
                for ((role, body), free) in participants.iter().zip(&frees) {
                    let mut slice = ctx.restrict(free);
                    let ep = Channel::Endpoint(name.clone(), role.clone());
                    slice.add_open(ep.clone())?;
                    let out = self.checker.infer(&slice, body, &ranks)?;
                    let ty = *out.synth.get(&ep).ok_or_else(|| {
                        RuntimeError::NotTyped(format!("no synthesized type for {ep}"))
                    })?;
                    entries.push((role.clone(), ty));
                    let mut known = slice.clone();
                    known.set_known(&ep, ty);
                    total = total.add(self.measure_term(&known, body)?);
                }
                let map = SessionMap::new(entries)
                    .map_err(|e| RuntimeError::NotTyped(e.to_string()))?;
                let rank = self.session_rank(&LtsState::from_map(&map))?;
                Ok(total.add(Measure(Cost::ZERO, rank)))
            }
            other => {
                let ranks = self.ranks.clone();
                let out = self.checker.infer(ctx, other, &ranks)?;
                Ok(Measure(out.rank, Cost::ZERO))
            }
        }
    }

    /// Finite-derivation height of a term; the guided scheduler's tie-break.
    fn height(&self, term: &Process) -> Cost {
        term_height(term, &self.heights)
    }

    /// All enabled reductions. With `fused`, an uncommitted multi-branch
    /// output and a matching input synchronize in one macro step (r-pick +
    /// r-tag); otherwise picking commits first.
    pub fn enabled_reductions(
        &mut self,
        soup: &Soup,
        fused: bool,
    ) -> Result<Vec<Reduction>, RuntimeError> {
        let mut out = Vec::new();

        for (ix, thread) in soup.threads.iter().enumerate() {
            match &**thread {
                Process::Choice { left, right, .. } => {
                    for (arm, body) in [("left", left), ("right", right)] {
                        let mut next = soup.clone();
                        next.threads.remove(ix);
                        self.insert(&mut next, (**body).clone())?;
                        out.push(Reduction {
                            rule: "r-choice",
                            redex: format!("choice {arm} in thread {ix}"),
                            next,
                        });
                    }
                }
                Process::Tags {
                    chan: Channel::Endpoint(s, p),
                    peer,
                    polarity: Polarity::Out,
                    branches,
                    span,
                } => {
                    if branches.len() >= 2 && !fused {
                        for (tag, body) in branches {
                            let mut next = soup.clone();
                            next.threads[ix] = std::sync::Arc::new(Process::Tags {
                                span: *span,
                                chan: Channel::Endpoint(s.clone(), p.clone()),
                                peer: peer.clone(),
                                polarity: Polarity::Out,
                                branches: vec![(tag.clone(), body.clone())],
                            });
                            self.commit_map_entry(&mut next, s, p, tag)?;
                            out.push(Reduction {
                                rule: "r-pick",
                                redex: format!("{s}[{p}] picks {tag} for {peer}"),
                                next,
                            });
                        }
                    } else {
                        // Committed (or fused): synchronize with the peer.
                        let candidates: Vec<(crate::syntax::Tag, Process)> = if fused {
                            branches.clone()
                        } else {
                            vec![branches[0].clone()]
                        };
                        if let Some((jx, _)) = self.find_tag_receiver(soup, s, peer, p) {
                            for (tag, body) in candidates {
                                let Process::Tags {
                                    branches: rbranches,
                                    ..
                                } = &*soup.threads[jx]
                                else {
                                    unreachable!()
                                };
                                let Some((_, rbody)) =
                                    rbranches.iter().find(|(t, _)| *t == tag)
                                else {
                                    return Err(RuntimeError::InternalStuck(format!(
                                        "receiver of {s}[{p}] lacks branch {tag}"
                                    )));
                                };
                                let rbody = rbody.clone();
                                let mut next = soup.clone();
                                if fused {
                                    self.commit_map_entry(&mut next, s, p, &tag)?;
                                }
                                self.sync_map_entries(&mut next, s, p, peer, &tag)?;
                                let mut keep: Vec<std::sync::Arc<Process>> = Vec::new();
                                for (k, t) in next.threads.iter().enumerate() {
                                    if k != ix && k != jx {
                                        keep.push(t.clone());
                                    }
                                }
                                next.threads = keep;
                                self.insert(&mut next, body.clone())?;
                                self.insert(&mut next, rbody)?;
                                out.push(Reduction {
                                    rule: if fused { "r-pick+r-tag" } else { "r-tag" },
                                    redex: format!("{s}: {p} -> {peer} tag {tag}"),
                                    next,
                                });
                            }
                        }
                    }
                }
                Process::ChanOut {
                    chan: Channel::Endpoint(s, p),
                    peer,
                    payload,
                    cont,
                    ..
                } => {
                    if let Some((jx, binder, rcont)) = self.find_chan_receiver(soup, s, peer, p) {
                        let mut next = soup.clone();
                        self.advance_channel_entries(&mut next, s, p, peer)?;
                        let subst = BTreeMap::from([(Channel::Var(binder), payload.clone())]);
                        let rbody = rcont.substitute(&subst);
                        let mut keep: Vec<std::sync::Arc<Process>> = Vec::new();
                        for (k, t) in next.threads.iter().enumerate() {
                            if k != ix && k != jx {
                                keep.push(t.clone());
                            }
                        }
                        next.threads = keep;
                        self.insert(&mut next, (**cont).clone())?;
                        self.insert(&mut next, rbody)?;
                        out.push(Reduction {
                            rule: "r-channel",
                            redex: format!("{s}: {p} delegates {payload} to {peer}"),
                            next,
                        });
                    }
                }
                _ => {}
            }
        }

        // r-signal, per session: one waiter, closers for every other role.
        for (six, sess) in soup.sessions.iter().enumerate() {
            let mut waiter: Option<(usize, Process)> = None;
            let mut closers: BTreeSet<Role> = BTreeSet::new();
            let mut closer_threads: Vec<usize> = Vec::new();
            let mut ok = true;
            for role in &sess.roles {
                let found = soup.threads.iter().enumerate().find_map(|(k, t)| match &**t {
                    Process::Wait { chan, cont, .. }
                        if *chan == Channel::Endpoint(sess.name.clone(), role.clone()) =>
                    {
                        Some((k, true, Some((**cont).clone())))
                    }
                    Process::Close { chan, .. }
                        if *chan == Channel::Endpoint(sess.name.clone(), role.clone()) =>
                    {
                        Some((k, false, None))
                    }
                    _ => None,
                });
                match found {
                    Some((k, true, Some(cont))) => {
                        if waiter.is_some() {
                            ok = false;
                            break;
                        }
                        waiter = Some((k, cont));
                    }
                    Some((k, false, None)) => {
                        closers.insert(role.clone());
                        closer_threads.push(k);
                    }
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            let Some((wix, cont)) = waiter else { continue };
            if closers.len() + 1 != sess.roles.len() {
                continue;
            }
            let mut next = soup.clone();
            next.sessions.remove(six);
            let mut remove: BTreeSet<usize> = closer_threads.iter().copied().collect();
            remove.insert(wix);
            next.threads = next
                .threads
                .into_iter()
                .enumerate()
                .filter(|(k, _)| !remove.contains(k))
                .map(|(_, t)| t)
                .collect();
            self.insert(&mut next, cont)?;
            out.push(Reduction {
                rule: "r-signal",
                redex: format!("session {} terminates", sess.name),
                next,
            });
        }

        Ok(out)
    }

    fn find_tag_receiver(
        &self,
        soup: &Soup,
        s: &SessionName,
        receiver_role: &Role,
        sender_role: &Role,
    ) -> Option<(usize, ())> {
        soup.threads.iter().enumerate().find_map(|(k, t)| match &**t {
            Process::Tags {
                chan: Channel::Endpoint(s2, q),
                peer,
                polarity: Polarity::In,
                ..
            } if s2 == s && q == receiver_role && peer == sender_role => Some((k, ())),
            _ => None,
        })
    }

    fn find_chan_receiver(
        &self,
        soup: &Soup,
        s: &SessionName,
        receiver_role: &Role,
        sender_role: &Role,
    ) -> Option<(usize, crate::syntax::Var, Process)> {
        soup.threads.iter().enumerate().find_map(|(k, t)| match &**t {
            Process::ChanIn {
                chan: Channel::Endpoint(s2, q),
                peer,
                binder,
                cont,
                ..
            } if s2 == s && q == receiver_role && peer == sender_role => {
                Some((k, binder.clone(), (**cont).clone()))
            }
            _ => None,
        })
    }

    fn session_mut<'s>(
        soup: &'s mut Soup,
        s: &SessionName,
    ) -> Result<&'s mut LiveSession, RuntimeError> {
        soup.sessions
            .iter_mut()
            .find(|ls| &ls.name == s)
            .ok_or_else(|| RuntimeError::InternalStuck(format!("unknown session {s}")))
    }

    /// l-pick at the map level: commit role `p` to `tag`.
    fn commit_map_entry(
        &mut self,
        soup: &mut Soup,
        s: &SessionName,
        p: &Role,
        tag: &crate::syntax::Tag,
    ) -> Result<(), RuntimeError> {
        let sess = Self::session_mut(soup, s)?;
        let entry = sess.state.entries.get(p).copied().ok_or_else(|| {
            RuntimeError::InternalStuck(format!("role {p} missing in {s}"))
        })?;
        let node = self.checker.store.node(entry.ty).clone();
        let TypeNode::Tags {
            role: peer,
            polarity: Polarity::Out,
            branches,
        } = node
        else {
            return Err(RuntimeError::InternalStuck(format!(
                "map entry for {s}[{p}] is not an output"
            )));
        };
        let cont = branches
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, c)| *c)
            .ok_or_else(|| {
                RuntimeError::InternalStuck(format!("map entry for {s}[{p}] lacks tag {tag}"))
            })?;
        let committed = self
            .checker
            .store
            .tags(peer, Polarity::Out, vec![(tag.clone(), cont)])
            .expect("singleton");
        sess.state.entries.insert(
            p.clone(),
            Entry {
                ty: committed,
                committed: true,
            },
        );
        Ok(())
    }

    /// l-sync for tags: advance sender and receiver entries past `tag`.
    fn sync_map_entries(
        &mut self,
        soup: &mut Soup,
        s: &SessionName,
        p: &Role,
        q: &Role,
        tag: &crate::syntax::Tag,
    ) -> Result<(), RuntimeError> {
        let store = &self.checker.store;
        let sess = Self::session_mut(soup, s)?;
        for (role, want_pol) in [(p, Polarity::Out), (q, Polarity::In)] {
            let entry = sess.state.entries.get(role).copied().ok_or_else(|| {
                RuntimeError::InternalStuck(format!("role {role} missing in {s}"))
            })?;
            let TypeNode::Tags {
                polarity, branches, ..
            } = store.node(entry.ty)
            else {
                return Err(RuntimeError::InternalStuck(format!(
                    "map entry for {s}[{role}] is not a tag node"
                )));
            };
            if *polarity != want_pol {
                return Err(RuntimeError::InternalStuck(format!(
                    "map entry for {s}[{role}] has the wrong polarity"
                )));
            }
            let cont = branches
                .iter()
                .find(|(t, _)| t == tag)
                .map(|(_, c)| *c)
                .ok_or_else(|| {
                    RuntimeError::InternalStuck(format!(
                        "map entry for {s}[{role}] lacks tag {tag}"
                    ))
                })?;
            sess.state.entries.insert(role.clone(), Entry::fresh(cont));
        }
        Ok(())
    }

    /// l-sync for channels: advance both entries to their continuations.
    fn advance_channel_entries(
        &mut self,
        soup: &mut Soup,
        s: &SessionName,
        p: &Role,
        q: &Role,
    ) -> Result<(), RuntimeError> {
        let store = &self.checker.store;
        let sess = Self::session_mut(soup, s)?;
        for role in [p, q] {
            let entry = sess.state.entries.get(role).copied().ok_or_else(|| {
                RuntimeError::InternalStuck(format!("role {role} missing in {s}"))
            })?;
            let TypeNode::Channel { continuation, .. } = store.node(entry.ty) else {
                return Err(RuntimeError::InternalStuck(format!(
                    "map entry for {s}[{role}] is not a channel node"
                )));
            };
            sess.state
                .entries
                .insert(role.clone(), Entry::fresh(*continuation));
        }
        Ok(())
    }
}

/// Finite-derivation heights per definition: the descending least fixpoint of
/// the corule-style height equations (∞ marks non-terminable definitions).
fn definition_heights(program: &Program) -> BTreeMap<ProcName, Cost> {
    let mut table: BTreeMap<ProcName, Cost> =
        program.defs.keys().map(|n| (n.clone(), Cost::Inf)).collect();
    loop {
        let mut changed = false;
        for (name, def) in &program.defs {
            let h = term_height(&def.body, &table).succ();
            if h < table[name] {
                table.insert(name.clone(), h);
                changed = true;
            }
        }
        if !changed {
            return table;
        }
    }
}

fn term_height(p: &Process, defs: &BTreeMap<ProcName, Cost>) -> Cost {
    match p {
        Process::Done { .. } | Process::Close { .. } => Cost::ZERO,
        Process::Wait { cont, .. }
        | Process::ChanOut { cont, .. }
        | Process::ChanIn { cont, .. }
        | Process::Cast { cont, .. } => term_height(cont, defs).succ(),
        Process::Tags { branches, .. } => branches
            .iter()
            .map(|(_, b)| term_height(b, defs))
            .min()
            .unwrap_or(Cost::Inf)
            .succ(),
        Process::Choice { left, right, .. } => {
            term_height(left, defs).min(term_height(right, defs)).succ()
        }
        Process::Session { participants, .. } =>

            participants
                .iter()
                .map(|(_, b)| term_height(b, defs))
                .fold(Cost::ZERO, Cost::add)
                .succ(),
        Process::Call { name, .. } => defs.get(name).copied().unwrap_or(Cost::Inf),
    }
}

// ---------------------------------------------------------------------------
// Rendering a soup back to a (reassociated) term

impl<'p> Runtime<'p> {
    /// Render the soup as a closed process term by re-nesting sessions along
    /// the session/thread incidence forest.
    pub fn render_term(&self, soup: &Soup) -> Result<Process, RuntimeError> {
        self.render_term_with(soup, false)
    }

    /// Like [`Runtime::render_term`] but with every participant body wrapped
    /// in a cast pinning the endpoint at its tracked session-map type. The
    /// subject-reduction harness re-checks this annotated term, which both
    /// re-verifies the state and validates the tracked maps; a bare rendering
    /// would leave casts over fresh endpoints under-determined when sibling
    /// branches use them at different types.
    pub fn render_term_annotated(&self, soup: &Soup) -> Result<Process, RuntimeError> {
        self.render_term_with(soup, true)
    }

    fn render_term_with(&self, soup: &Soup, annotate: bool) -> Result<Process, RuntimeError> {
        if soup.sessions.is_empty() {
            return match soup.threads.len() {
                0 => Err(RuntimeError::InternalStuck("empty soup".into())),
                1 => Ok((*soup.threads[0]).clone()),
                _ => Err(RuntimeError::InternalStuck(
                    "parallel threads without a session".into(),
                )),
            };
        }
        // Owner thread of each endpoint.
        let mut owner: HashMap<(SessionName, Role), usize> = HashMap::new();
        let mut thread_sessions: Vec<Vec<usize>> = vec![Vec::new(); soup.threads.len()];
        for (tix, t) in soup.threads.iter().enumerate() {
            for chan in t.free_channels() {
                if let Channel::Endpoint(s, r) = chan {
                    if owner.insert((s.clone(), r), tix).is_some() {
                        return Err(RuntimeError::InternalStuck(format!(
                            "endpoint of {s} held twice"
                        )));
                    }
                    let six = soup
                        .sessions
                        .iter()
                        .position(|ls| ls.name == s)
                        .ok_or_else(|| {
                            RuntimeError::InternalStuck(format!("unknown session {s}"))
                        })?;
                    if !thread_sessions[tix].contains(&six) {
                        thread_sessions[tix].push(six);
                    }
                }
            }
        }
        let mut sess_done = vec![false; soup.sessions.len()];
        let mut thread_done = vec![false; soup.threads.len()];

        // Pin a participant body at its tracked type (annotated mode only).
        fn pin(annotate: bool, soup: &Soup, six: usize, role: &Role, body: Process) -> Process {
            if !annotate {
                return body;
            }
            let sess = &soup.sessions[six];
            let ty = sess.state.entries[role].ty;
            Process::Cast {
                span: Span::default(),
                chan: Channel::Endpoint(sess.name.clone(), role.clone()),
                target: ty,
                cont: Box::new(body),
            }
        }

        fn render_session(
            rt: &Runtime,
            soup: &Soup,
            owner: &HashMap<(SessionName, Role), usize>,
            thread_sessions: &[Vec<usize>],
            sess_done: &mut [bool],
            thread_done: &mut [bool],
            six: usize,
            annotate: bool,
        ) -> Result<Process, RuntimeError> {
            sess_done[six] = true;
            let sess = &soup.sessions[six];
            let mut participants = Vec::new();
            for role in &sess.roles {
                let &tix = owner.get(&(sess.name.clone(), role.clone())).ok_or_else(|| {
                    RuntimeError::InternalStuck(format!(
                        "no thread owns {}[{}]",
                        sess.name, role
                    ))
                })?;
                let body = render_thread(
                    rt,
                    soup,
                    owner,
                    thread_sessions,
                    sess_done,
                    thread_done,
                    tix,
                    annotate,
                )?;
                participants.push((role.clone(), pin(annotate, soup, six, role, body)));
            }
            Ok(Process::Session {
                span: Span::default(),
                name: sess.name.clone(),
                participants,
            })
        }

        #[allow(clippy::too_many_arguments)]
        fn render_thread(
            rt: &Runtime,
            soup: &Soup,
            owner: &HashMap<(SessionName, Role), usize>,
            thread_sessions: &[Vec<usize>],
            sess_done: &mut [bool],
            thread_done: &mut [bool],
            tix: usize,
            annotate: bool,
        ) -> Result<Process, RuntimeError> {
            if thread_done[tix] {
                return Err(RuntimeError::InternalStuck(
                    "thread visited twice while rendering (cyclic session graph)".into(),
                ));
            }
            thread_done[tix] = true;
            let mut term = (*soup.threads[tix]).clone();
            // Wrap the thread in its other sessions; each wraps the previous.
            for &six in &thread_sessions[tix] {
                if sess_done[six] {
                    continue;
                }
                sess_done[six] = true;
                let sess = &soup.sessions[six];
                let mut participants = Vec::new();
                for role in &sess.roles {
                    let &owner_tix =
                        owner.get(&(sess.name.clone(), role.clone())).ok_or_else(|| {
                            RuntimeError::InternalStuck(format!(
                                "no thread owns {}[{}]",
                                sess.name, role
                            ))
                        })?;
                    if owner_tix == tix {
                        participants.push((role.clone(), Process::Done { span: Span::default() }));
                    } else {
                        let body = render_thread(
                            rt,
                            soup,
                            owner,
                            thread_sessions,
                            sess_done,
                            thread_done,
                            owner_tix,
                            annotate,
                        )?;
                        participants.push((role.clone(), pin(annotate, soup, six, role, body)));
                    }
                }
                // Place the accumulated term at this thread's own slot.
                for (role, body) in participants.iter_mut() {
                    if owner.get(&(sess.name.clone(), role.clone())) == Some(&tix) {
                        let own =
                            std::mem::replace(&mut term, Process::Done { span: Span::default() });
                        *body = pin(annotate, soup, six, role, own);
                    }
                }
                term = Process::Session {
                    span: Span::default(),
                    name: sess.name.clone(),
                    participants,
                };
            }
            Ok(term)
        }

        let root = render_session(
            self,
            soup,
            &owner,
            &thread_sessions,
            &mut sess_done,
            &mut thread_done,
            0,
            annotate,
        )?;
        if sess_done.iter().any(|d| !d)
            || thread_done
                .iter()
                .zip(&soup.threads)
                .any(|(d, t)| !d && !matches!(&**t, Process::Done { .. }))
        {
            return Err(RuntimeError::InternalStuck(
                "disconnected session/thread components".into(),
            ));
        }
        Ok(root)
    }

    /// Canonical key of a soup: session names renumbered by creation order,
    /// thread renderings sorted, commit flags included. Creation order is
    /// deterministic per execution path; keys can distinguish permuted
    /// creations of the same state, which only over-approximates the state
    /// count of an exploration.
    pub fn canonical_key(&self, soup: &Soup) -> String {
        let renames: HashMap<SessionName, usize> = soup
            .sessions
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.clone(), i))
            .collect();
        let mut parts: Vec<String> = soup
            .threads
            .iter()
            .map(|t| {
                let mut out = String::new();
                render_renamed(&self.checker.store, t.as_ref(), &renames, &mut out);
                out
            })
            .collect();
        parts.sort();
        let mut sessions: Vec<String> = soup
            .sessions
            .iter()
            .map(|sess| {
                let flags: Vec<String> = sess
                    .state
                    .entries
                    .iter()
                    .map(|(r, e)| {
                        format!("{}:{}{}", r, e.ty.0, if e.committed { "*" } else { "" })
                    })
                    .collect();
                format!("${}[{}]", renames[&sess.name], flags.join(","))
            })
            .collect();
        sessions.sort();
        format!("{} || {}", parts.join(" | "), sessions.join(" ; "))
    }
}

fn render_chan_renamed(c: &Channel, renames: &HashMap<SessionName, usize>, out: &mut String) {
    match c {
        Channel::Var(x) => out.push_str(x.as_str()),
        Channel::Endpoint(s, r) => {
            match renames.get(s) {
                Some(ix) => out.push_str(&format!("${ix}")),
                None => out.push_str(s.as_str()),
            }
            out.push('[');
            out.push_str(r.as_str());
            out.push(']');
        }
    }
}

/// Render a runtime term with session names replaced by canonical indices;
/// cast targets print as store ids (canonical within one store).
fn render_renamed(
    store: &crate::syntax::TypeStore,
    p: &Process,
    renames: &HashMap<SessionName, usize>,
    out: &mut String,
) {
    match p {
        Process::Done { .. } => out.push_str("done"),
        Process::Close { chan, .. } => {
            out.push_str("close ");
            render_chan_renamed(chan, renames, out);
        }
        Process::Wait { chan, cont, .. } => {
            out.push_str("wait ");
            render_chan_renamed(chan, renames, out);
            out.push_str(". ");
            render_renamed(store, cont, renames, out);
        }
        Process::Tags {
            chan,
            peer,
            polarity,
            branches,
            ..
        } => {
            render_chan_renamed(chan, renames, out);
            out.push(' ');
            out.push_str(peer.as_str());
            out.push(polarity.symbol());
            out.push('{');
            for (i, (t, b)) in branches.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(t.as_str());
                out.push_str(": ");
                render_renamed(store, b, renames, out);
            }
            out.push('}');
        }
        Process::ChanOut {
            chan,
            peer,
            payload,
            cont,
            ..
        } => {
            render_chan_renamed(chan, renames, out);
            out.push(' ');
            out.push_str(peer.as_str());
            out.push_str("!(");
            render_chan_renamed(payload, renames, out);
            out.push_str("). ");
            render_renamed(store, cont, renames, out);
        }
        Process::ChanIn {
            chan,
            peer,
            binder,
            cont,
            ..
        } => {
            render_chan_renamed(chan, renames, out);
            out.push(' ');
            out.push_str(peer.as_str());
            out.push_str("?(");
            out.push_str(binder.as_str());
            out.push_str("). ");
            render_renamed(store, cont, renames, out);
        }
        Process::Choice { left, right, .. } => {
            out.push('(');
            render_renamed(store, left, renames, out);
            out.push_str(" <+> ");
            render_renamed(store, right, renames, out);
            out.push(')');
        }
        Process::Cast {
            chan, target, cont, ..
        } => {
            out.push_str("cast ");
            render_chan_renamed(chan, renames, out);
            out.push_str(&format!(": #{}. ", target.0));
            render_renamed(store, cont, renames, out);
        }
        Process::Session {
            name, participants, ..
        } => {
            out.push_str("new ");
            out.push_str(name.as_str());
            out.push_str(" { ");
            for (i, (r, b)) in participants.iter().enumerate() {
                if i > 0 {
                    out.push_str(" | ");
                }
                out.push_str(r.as_str());
                out.push_str(" = ");
                render_renamed(store, b, renames, out);
            }
            out.push_str(" }");
        }
        Process::Call { name, args, .. } => {
            out.push_str(name.as_str());
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                render_chan_renamed(a, renames, out);
            }
            out.push(')');
        }
    }
}

/// Render a runtime term compactly; cast targets print as store ids.
pub fn render_runtime(store: &crate::syntax::TypeStore, p: &Process) -> String {
    match p {
        Process::Done { .. } => "done".into(),
        Process::Close { chan, .. } => format!("close {chan}"),
        Process::Wait { chan, cont, .. } => format!("wait {}. {}", chan, render_runtime(store, cont)),
        Process::Tags {
            chan,
            peer,
            polarity,
            branches,
            ..
        } => {
            let bs: Vec<String> = branches
                .iter()
                .map(|(t, b)| format!("{}: {}", t, render_runtime(store, b)))
                .collect();
            format!("{} {}{}{{{}}}", chan, peer, polarity.symbol(), bs.join(", "))
        }
        Process::ChanOut {
            chan, peer, payload, cont, ..
        } => format!("{} {}!({}). {}", chan, peer, payload, render_runtime(store, cont)),
        Process::ChanIn {
            chan, peer, binder, cont, ..
        } => format!("{} {}?({}). {}", chan, peer, binder, render_runtime(store, cont)),
        Process::Choice { left, right, .. } => format!(
            "({} <+> {})",
            render_runtime(store, left),
            render_runtime(store, right)
        ),
        Process::Cast { chan, target, cont, .. } => {
            format!("cast {}: #{}. {}", chan, target.0, render_runtime(store, cont))
        }
        Process::Session { name, participants, .. } => {
            let ps: Vec<String> = participants
                .iter()
                .map(|(r, b)| format!("{} = {}", r, render_runtime(store, b)))
                .collect();
            format!("new {} {{ {} }}", name, ps.join(" | "))
        }
        Process::Call { name, args, .. } => {
            let a: Vec<String> = args.iter().map(|c| c.to_string()).collect();
            format!("{}({})", name, a.join(", "))
        }
    }
}

// ---------------------------------------------------------------------------
// Simulation

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Scheduler {
    Random { seed: u64 },
    Guided,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TraceStep {
    pub rule: String,
    pub redex: String,
    pub measure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub enum TraceOutcome {
    Terminated,
    MaxSteps,
    InternalStuck,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
    pub outcome: TraceOutcome,
    pub error: Option<String>,
}

pub struct SimulateOptions {
    pub scheduler: Scheduler,
    pub max_steps: usize,
    /// Fuse r-pick and r-tag into one macro step.
    pub fused: bool,
    /// Re-check every visited state against the type system.
    pub subject_reduction_check: bool,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions {
            scheduler: Scheduler::Guided,
            max_steps: 10_000,
            fused: false,
            subject_reduction_check: false,
        }
    }
}

impl<'p> Runtime<'p> {
    pub fn initial_soup(&mut self, entry: &ProcName) -> Result<Soup, RuntimeError> {
        let def = self.def_body(entry)?;
        if !def.params.is_empty() {
            return Err(RuntimeError::EntryHasParams(entry.clone()));
        }
        let body = def.body.clone();
        let mut soup = Soup::default();
        self.insert(&mut soup, body)?;
        Ok(soup)
    }

    fn subject_check(&self, soup: &Soup) -> Result<(), RuntimeError> {
        let term = self.render_term_annotated(soup)?;
        // The annotated term references type nodes interned by this runtime,
        // so the re-check runs over a clone of the runtime's store (with
        // coherence verification back on).
        let mut checker = Checker::new(self.checker.program);
        checker.store = self.checker.store.clone();
        let ranks: RankTable = self
            .checker
            .program
            .defs
            .keys()
            .map(|n| (n.clone(), Cost::ZERO))
            .collect();
        checker
            .infer(&Ctx::default(), &term, &ranks)
            .map(|_| ())
            .map_err(|d| RuntimeError::NotTyped(d.message))
    }

    /// Run the simulator from `entry`.
    pub fn simulate(
        &mut self,
        entry: &ProcName,
        opts: &SimulateOptions,
    ) -> Result<Trace, RuntimeError> {
        let soup = self.initial_soup(entry)?;
        self.simulate_soup(soup, opts)
    }

    pub fn simulate_soup(
        &mut self,
        mut soup: Soup,
        opts: &SimulateOptions,
    ) -> Result<Trace, RuntimeError> {
        let mut steps = Vec::new();
        let mut rng = match opts.scheduler {
            Scheduler::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Scheduler::Guided => None,
        };
        if opts.subject_reduction_check {
            self.subject_check(&soup)?;
        }
        loop {
            if soup.terminated() {
                return Ok(Trace {
                    steps,
                    outcome: TraceOutcome::Terminated,
                    error: None,
                });
            }
            if steps.len() >= opts.max_steps {
                return Ok(Trace {
                    steps,
                    outcome: TraceOutcome::MaxSteps,
                    error: None,
                });
            }
            let taken = match &mut rng {
                Some(rng) => {
                    let mut reds = self.enabled_reductions(&soup, opts.fused)?;
                    if reds.is_empty() {
                        return Ok(Trace {
                            steps,
                            outcome: TraceOutcome::InternalStuck,
                            error: Some("no enabled reductions in a non-terminated state".into()),
                        });
                    }
                    let ix = rng.gen_range(0..reds.len());
                    reds.swap_remove(ix)
                }
                None => match self.guided_step(&soup, opts.fused)? {
                    Some(red) => red,
                    None => {
                        return Ok(Trace {
                            steps,
                            outcome: TraceOutcome::InternalStuck,
                            error: Some(
                                "guided scheduler found no measure-reducing step".into(),
                            ),
                        })
                    }
                },
            };
            let measure = if rng.is_none() {
                Some(self.measure_soup(&taken.next)?.to_string())
            } else {
                None
            };
            steps.push(TraceStep {
                rule: taken.rule.to_string(),
                redex: taken.redex,
                measure,
            });
            soup = taken.next;
            if opts.subject_reduction_check {
                self.subject_check(&soup)?;
            }
        }
    }

    /// One guided micro-step: the enabled reduction whose successor has the
    /// lexicographically smallest (measure, height) pair.
    pub fn guided_step(
        &mut self,
        soup: &Soup,
        fused: bool,
    ) -> Result<Option<Reduction>, RuntimeError> {
        let current = self.measure_soup_cached(soup)?;
        let mut reds = self.enabled_reductions(soup, fused)?;
        // Fast path: any strictly measure-decreasing successor keeps the
        // termination argument intact; take the first one found.
        let mut measures = Vec::with_capacity(reds.len());
        for ix in 0..reds.len() {
            let m = self.measure_soup_cached(&reds[ix].next)?;
            if m < current {
                return Ok(Some(reds.swap_remove(ix)));
            }
            measures.push(m);
        }
        // Otherwise (choice resolution) pick the lexicographically smallest
        // (measure, finite-derivation height) successor.
        let mut best: Option<(Measure, Cost, usize)> = None;
        for (ix, red) in reds.iter().enumerate() {
            let m = measures[ix];
            let h = red
                .next
                .threads
                .iter()
                .map(|t| self.height(t.as_ref()))
                .fold(Cost::ZERO, Cost::add);
            if best.is_none() || (m, h) < (best.unwrap().0, best.unwrap().1) {
                best = Some((m, h, ix));
            }
        }
        Ok(best.map(|(_, _, ix)| reds.swap_remove(ix)))
    }

    /// Measure memoized by canonical state key; guided walks revisit states
    /// heavily during exploration verification.
    pub fn measure_soup_cached(&mut self, soup: &Soup) -> Result<Measure, RuntimeError> {
        let key = self.canonical_key(soup);
        if let Some(&m) = self.measure_cache.get(&key) {
            return Ok(m);
        }
        let m = self.measure_soup(soup)?;
        self.measure_cache.insert(key, m);
        Ok(m)
    }

    /// Guided run used by verification: returns the visited soups (including
    /// start and final) or an error if the measure fails to decrease across a
    /// communication macro-step.
    pub fn guided_run(
        &mut self,
        mut soup: Soup,
        max_steps: usize,
        check_decrease: bool,
    ) -> Result<Vec<Soup>, RuntimeError> {
        let mut visited = vec![soup.clone()];
        let mut macro_start = self.measure_soup(&soup)?;
        let mut resolution_guard = 0usize;
        for _ in 0..max_steps {
            if soup.terminated() {
                return Ok(visited);
            }
            let red = self
                .guided_step(&soup, false)?
                .ok_or_else(|| RuntimeError::InternalStuck("no reduction available".into()))?;
            let is_comm = red.rule != "r-choice";
            soup = red.next;
            visited.push(soup.clone());
            let m = self.measure_soup(&soup)?;
            if is_comm {
                if check_decrease && m >= macro_start {
                    return Err(RuntimeError::InternalStuck(format!(
                        "measure did not decrease across a communication: {macro_start} -> {m}"
                    )));
                }
                macro_start = m;
                resolution_guard = 0;
            } else {
                resolution_guard += 1;
                if resolution_guard > 4 * (self.checker.program.defs.len() + 4) {
                    return Err(RuntimeError::InternalStuck(
                        "choice resolution did not converge".into(),
                    ));
                }
            }
        }
        Err(RuntimeError::InternalStuck(
            "guided run exceeded the step bound".into(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_program, resolve_and_validate};

    fn program(src: &str) -> Program {
        resolve_and_validate(&parse_program(src).expect("parse")).expect("validate")
    }

    const BSC: &str = "\
type Sb = seller!{add: seller!add. Sb, pay: end!}
type Ss = buyer?{add: Ss, pay: carrier!ship. end!}
type Sc = seller?ship. end?
def Buyer(x: Sb) = x seller!{add: x seller!add. Buyer(x), pay: close x}
def Seller(x: Ss) = x buyer?{add: Seller(x), pay: x carrier!ship. close x}
def Carrier(x: Sc) = x seller?ship. wait x. done
def Main() = new s { buyer = Buyer(s[buyer]) | seller = Seller(s[seller]) | carrier = Carrier(s[carrier]) }
";

    #[test]
    fn normalize_unfolds_and_opens() {
        let prog = program("def A() = done\ndef Main() = A()\n");
        let mut rt = Runtime::new(&prog);
        let soup = rt.initial_soup(&ProcName::new("Main")).unwrap();
        assert!(soup.terminated());
    }

    #[test]
    fn cast_is_erased_on_insertion() {
        let prog = program(
            "def Main() = new s { p = cast s[p]: end!. close s[p] | q = wait s[q]. done }\n",
        );
        let mut rt = Runtime::new(&prog);
        let soup = rt.initial_soup(&ProcName::new("Main")).unwrap();
        assert_eq!(soup.threads.len(), 2);
        assert!(soup
            .threads
            .iter()
            .all(|t| !matches!(&**t, Process::Cast { .. })));
    }

    #[test]
    fn measure_of_done_is_zero() {
        let prog = program("def Main() = done\n");
        let mut rt = Runtime::new(&prog);
        let m = rt
            .measure_term(&Ctx::default(), &prog.defs[&ProcName::new("Main")].body)
            .unwrap();
        assert_eq!(m, Measure::ZERO);
    }

    #[test]
    fn measure_of_bsc_session_is_5() {
        let prog = program(BSC);
        let mut rt = Runtime::new(&prog);
        let m = rt
            .measure_term(&Ctx::default(), &prog.defs[&ProcName::new("Main")].body)
            .unwrap();
        assert_eq!(m, Measure(Cost::Fin(0), Cost::Fin(5)));
        let soup = rt.initial_soup(&ProcName::new("Main")).unwrap();
        assert_eq!(rt.measure_soup(&soup).unwrap(), Measure(Cost::Fin(0), Cost::Fin(5)));
    }

    #[test]
    fn signal_shape_reduces_to_continuation() {
        let prog =
            program("def Main() = new s { p = wait s[p]. done | q = close s[q] }\n");
        let mut rt = Runtime::new(&prog);
        let soup = rt.initial_soup(&ProcName::new("Main")).unwrap();
        let reds = rt.enabled_reductions(&soup, false).unwrap();
        assert_eq!(reds.len(), 1);
        assert_eq!(reds[0].rule, "r-signal");
        assert!(reds[0].next.terminated());
    }

    #[test]
    fn choice_has_two_successors() {
        let prog = program("def Main() = done <+> done\n");
        let mut rt = Runtime::new(&prog);
        let soup = rt.initial_soup(&ProcName::new("Main")).unwrap();
        let reds = rt.enabled_reductions(&soup, false).unwrap();
        assert_eq!(reds.len(), 2);
        assert!(reds.iter().all(|r| r.rule == "r-choice"));
    }

    #[test]
    fn bsc_has_pick_successors_after_unfolding() {
        let prog = program(BSC);
        let mut rt = Runtime::new(&prog);
        let soup = rt.initial_soup(&ProcName::new("Main")).unwrap();
        let reds = rt.enabled_reductions(&soup, false).unwrap();
        let picks: Vec<_> = reds.iter().filter(|r| r.rule == "r-pick").collect();
        assert_eq!(picks.len(), 2);
    }

    #[test]
    fn guided_bsc_terminates_with_decreasing_measure() {
        let prog = program(BSC);
        let mut rt = Runtime::new(&prog);
        let soup = rt.initial_soup(&ProcName::new("Main")).unwrap();
        let visited = rt.guided_run(soup, 1000, true).unwrap();
        assert!(visited.last().unwrap().terminated());
    }

    #[test]
    fn guided_corules_c_terminates_quickly() {
        let prog = program("def C() = C() <+> done\ndef Main() = C()\n");
        let mut rt = Runtime::new(&prog);
        let trace = rt
            .simulate(&ProcName::new("Main"), &SimulateOptions::default())
            .unwrap();
        assert_eq!(trace.outcome, TraceOutcome::Terminated);
        assert!(trace.steps.len() <= 2);
    }

    #[test]
    fn simulate_done_takes_zero_steps() {
        let prog = program("def Main() = done\n");
        let mut rt = Runtime::new(&prog);
        let trace = rt
            .simulate(&ProcName::new("Main"), &SimulateOptions::default())
            .unwrap();
        assert_eq!(trace.outcome, TraceOutcome::Terminated);
        assert!(trace.steps.is_empty());
    }

    #[test]
    fn random_scheduler_is_reproducible() {
        let prog = program(BSC);
        let run = |seed: u64| {
            let mut rt = Runtime::new(&prog);
            let trace = rt
                .simulate(
                    &ProcName::new("Main"),
                    &SimulateOptions {
                        scheduler: Scheduler::Random { seed },
                        max_steps: 200,
                        ..Default::default()
                    },
                )
                .unwrap();
            trace
                .steps
                .iter()
                .map(|s| s.redex.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
    }

    #[test]
    fn subject_reduction_holds_along_guided_bsc() {
        let prog = program(BSC);
        let mut rt = Runtime::new(&prog);
        let trace = rt
            .simulate(
                &ProcName::new("Main"),
                &SimulateOptions {
                    subject_reduction_check: true,
                    ..Default::default()
                },
            )
            .unwrap();
        assert_eq!(trace.outcome, TraceOutcome::Terminated);
    }

    #[test]
    fn render_round_trips_through_recheck() {
        let prog = program(BSC);
        let mut rt = Runtime::new(&prog);
        let soup = rt.initial_soup(&ProcName::new("Main")).unwrap();
        let term = rt.render_term(&soup).unwrap();
        assert!(crate::typecheck::check_closed_term(&prog, &term).is_ok());
    }
}

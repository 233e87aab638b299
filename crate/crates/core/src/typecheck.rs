//! Well-typedness of programs under the generalized inference system.
//!
//! Checking runs in three phases per program:
//!   1. a coinductive, syntax-directed pass per definition. Calls are leaves
//!      matched against the global assignment table, which ties the infinite
//!      derivation. Endpoint types of `new` sessions carry no annotation and
//!      are synthesized from usage (exact branch matching makes this
//!      deterministic); the same pass threads the linear context, enforces
//!      splits and checks coherence of every created session.
//!   2. an inductive pass for the corules: a least fixpoint marks the
//!      definitions from which a finite derivation can reach the axioms, one
//!      branch sufficing at tag exchanges and choices. Every node of every
//!      body must be terminable, since each judgment of the infinite tree
//!      needs its own finite derivation.
//!   3. rank inference: the least fixpoint of the rank equations by Kleene
//!      iteration from all-zero, values above the cap saturating to ∞.
//!      Declared ranks must dominate inferred ones.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::parser::Diagnostic;
use crate::redsys::DEFAULT_STATE_CAP;
use crate::subtyping;
use crate::syntax::{
    Channel, Cost, GlobalAssignments, Polarity, ProcName, Process, Program, Role, SessionMap,
    Span, TypeId, TypeNode, TypeStore,
};
use crate::typelts;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum CheckErrorKind {
    #[error("linearity violation: {0}")]
    LinearityViolation(String),
    #[error("context mismatch: {0}")]
    ContextMismatch(String),
    #[error("branch mismatch: {0}")]
    BranchMismatch(String),
    #[error("incoherent session `{0}`")]
    IncoherentSession(String),
    #[error("not a fair subtype: {0}")]
    NotASubtype(String),
    #[error("arity mismatch in call to `{0}`")]
    ArityMismatch(ProcName),
    #[error("no finite derivation (no branch leads to termination)")]
    NoFiniteDerivation,
    #[error("infinite rank")]
    InfiniteRank,
    #[error("declared rank {declared} is below the inferred minimum {inferred}")]
    DeclaredRankTooSmall { declared: u64, inferred: u64 },
    #[error("cannot infer session type: {0}")]
    InferenceUnderdetermined(String),
    #[error("state cap exceeded while checking coherence")]
    StateCapExceeded,
}

fn err(kind: CheckErrorKind, span: Span) -> Diagnostic {
    Diagnostic::error(kind.to_string(), span)
}

/// A linear typing context entry: a known type or an endpoint whose type is
/// being synthesized.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CtxEntry {
    Known(TypeId),
    Open,
}

/// Linear typing context. Endpoints in the domain have pairwise distinct
/// session names.
#[derive(Clone, Debug, Default)]
pub struct Ctx {
    entries: BTreeMap<Channel, CtxEntry>,
}

impl Ctx {
    pub fn from_known(pairs: impl IntoIterator<Item = (Channel, TypeId)>) -> Self {
        Ctx {
            entries: pairs
                .into_iter()
                .map(|(c, t)| (c, CtxEntry::Known(t)))
                .collect(),
        }
    }

    fn add(&mut self, chan: Channel, entry: CtxEntry, span: Span) -> Result<(), Diagnostic> {
        if self.entries.contains_key(&chan) {
            return Err(err(
                CheckErrorKind::ContextMismatch(format!("channel `{chan}` already in context")),
                span,
            ));
        }
        if let Channel::Endpoint(s, _) = &chan {
            let clash = self
                .entries
                .keys()
                .any(|c| matches!(c, Channel::Endpoint(s2, _) if s2 == s));
            if clash {
                return Err(err(
                    CheckErrorKind::ContextMismatch(format!(
                        "two endpoints of session `{s}` in one context"
                    )),
                    span,
                ));
            }
        }
        self.entries.insert(chan, entry);
        Ok(())
    }

    fn get(&self, chan: &Channel) -> Option<CtxEntry> {
        self.entries.get(chan).copied()
    }

    fn remove(&mut self, chan: &Channel) {
        self.entries.remove(chan);
    }

    fn set(&mut self, chan: &Channel, entry: CtxEntry) {
        self.entries.insert(chan.clone(), entry);
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn channels(&self) -> Vec<Channel> {
        self.entries.keys().cloned().collect()
    }

    /// Add an endpoint whose type is to be synthesized.
    pub fn add_open(&mut self, chan: Channel) -> Result<(), Diagnostic> {
        self.add(chan, CtxEntry::Open, Span::default())
    }

    pub fn known(&self, chan: &Channel) -> Option<TypeId> {
        match self.entries.get(chan) {
            Some(CtxEntry::Known(t)) => Some(*t),
            _ => None,
        }
    }

    pub fn set_known(&mut self, chan: &Channel, ty: TypeId) {
        self.set(chan, CtxEntry::Known(ty));
    }

    /// Restriction to a channel subset (used for context splits).
    pub fn restrict(&self, keep: &BTreeSet<Channel>) -> Ctx {
        Ctx {
            entries: self
                .entries
                .iter()
                .filter(|(c, _)| keep.contains(*c))
                .map(|(c, e)| (c.clone(), *e))
                .collect(),
        }
    }
}

/// Result of checking one subterm: synthesized types for the open channels it
/// consumed, and its rank under the current definition-rank estimates.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub synth: BTreeMap<Channel, TypeId>,
    pub rank: Cost,
}

pub type RankTable = BTreeMap<ProcName, Cost>;

/// Shared analysis state: a working clone of the program's type store plus
/// memo tables for the session analyses the checker keeps re-asking.
pub struct Checker<'p> {
    pub store: TypeStore,
    pub program: &'p Program,
    pub asn: GlobalAssignments,
    /// Verify the coherence side condition at `t-par`. The simulator's
    /// measure path disables this: maps there evolve from checked ones.
    pub verify_coherence: bool,
    coherence_cache: HashMap<Vec<(Role, TypeId)>, Option<bool>>,
    fair_cache: HashMap<(TypeId, TypeId), Option<u64>>,
    pub max_cast_weight: u64,
}

impl<'p> Checker<'p> {
    pub fn new(program: &'p Program) -> Self {
        Checker {
            store: program.store.clone(),
            program,
            asn: program.assignments(),
            verify_coherence: true,
            coherence_cache: HashMap::new(),
            fair_cache: HashMap::new(),
            max_cast_weight: 0,
        }
    }

    pub fn fair_subtype(&mut self, s: TypeId, t: TypeId) -> Option<u64> {
        if let Some(&hit) = self.fair_cache.get(&(s, t)) {
            return hit;
        }
        let out = subtyping::fair_subtype(&self.store, s, t);
        self.fair_cache.insert((s, t), out);
        out
    }

    pub fn coherent(&mut self, map: &SessionMap) -> Option<bool> {
        let key: Vec<(Role, TypeId)> = map.iter().map(|(r, t)| (r.clone(), t)).collect();
        if let Some(&hit) = self.coherence_cache.get(&key) {
            return hit;
        }
        let out = typelts::coherent(&mut self.store, map, DEFAULT_STATE_CAP).ok();
        self.coherence_cache.insert(key, out);
        out
    }

    /// The coinductive judgment with synthesis: check `p` against `ctx`,
    /// returning synthesized open-channel types and the rank of the node.
    pub fn infer(
        &mut self,
        ctx: &Ctx,
        p: &Process,
        ranks: &RankTable,
    ) -> Result<Outcome, Diagnostic> {
        match p {
            Process::Done { span } => {
                if !ctx.is_empty() {
                    let rest = ctx.channels();
                    return Err(err(
                        CheckErrorKind::LinearityViolation(format!(
                            "`done` with unused channels: {}",
                            rest.iter()
                                .map(|c| c.to_string())
                                .collect::<Vec<_>>()
                                .join(", ")
                        )),
                        *span,
                    ));
                }
                Ok(Outcome {
                    synth: BTreeMap::new(),
                    rank: Cost::ZERO,
                })
            }
            Process::Close { span, chan } => {
                let entry = ctx.get(chan).ok_or_else(|| {
                    err(
                        CheckErrorKind::ContextMismatch(format!("`{chan}` not in context")),
                        *span,
                    )
                })?;
                if ctx.entries.len() > 1 {
                    let rest: Vec<String> = ctx
                        .channels()
                        .into_iter()
                        .filter(|c| c != chan)
                        .map(|c| c.to_string())
                        .collect();
                    return Err(err(
                        CheckErrorKind::LinearityViolation(format!(
                            "`close {chan}` leaves channels unused: {}",
                            rest.join(", ")
                        )),
                        *span,
                    ));
                }
                let end_out = self.store.end(Polarity::Out);
                let mut synth = BTreeMap::new();
                match entry {
                    CtxEntry::Known(t) if t == end_out => {}
                    CtxEntry::Known(t) => {
                        return Err(err(
                            CheckErrorKind::ContextMismatch(format!(
                                "`close {chan}` needs type end!, context has {}",
                                crate::parser::render_type_inline(&self.store, t)
                            )),
                            *span,
                        ))
                    }
                    CtxEntry::Open => {
                        synth.insert(chan.clone(), end_out);
                    }
                }
                Ok(Outcome {
                    synth,
                    rank: Cost::ZERO,
                })
            }
            Process::Wait { span, chan, cont } => {
                let entry = ctx.get(chan).ok_or_else(|| {
                    err(
                        CheckErrorKind::ContextMismatch(format!("`{chan}` not in context")),
                        *span,
                    )
                })?;
                let end_in = self.store.end(Polarity::In);
                let mut inner = ctx.clone();
                inner.remove(chan);
                let mut out = self.infer(&inner, cont, ranks)?;
                match entry {
                    CtxEntry::Known(t) if t == end_in => {}
                    CtxEntry::Known(t) => {
                        return Err(err(
                            CheckErrorKind::ContextMismatch(format!(
                                "`wait {chan}` needs type end?, context has {}",
                                crate::parser::render_type_inline(&self.store, t)
                            )),
                            *span,
                        ))
                    }
                    CtxEntry::Open => {
                        out.synth.insert(chan.clone(), end_in);
                    }
                }
                Ok(out)
            }
            Process::Tags {
                span,
                chan,
                peer,
                polarity,
                branches,
            } => {
                let entry = ctx.get(chan).ok_or_else(|| {
                    err(
                        CheckErrorKind::ContextMismatch(format!("`{chan}` not in context")),
                        *span,
                    )
                })?;
                match entry {
                    CtxEntry::Known(t) => {
                        let node = self.store.node(t).clone();
                        let (trole, tpol, tbranches) = match node {
                            TypeNode::Tags {
                                role,
                                polarity,
                                branches,
                            } => (role, polarity, branches),
                            other => {
                                return Err(err(
                                    CheckErrorKind::ContextMismatch(format!(
                                        "`{chan}` performs a tag exchange but has type {}",
                                        render_node(&self.store, &other)
                                    )),
                                    *span,
                                ))
                            }
                        };
                        if trole != *peer || tpol != *polarity {
                            return Err(err(
                                CheckErrorKind::ContextMismatch(format!(
                                    "`{chan}` exchanges tags with {}{} but its type says {}{}",
                                    peer,
                                    polarity.symbol(),
                                    trole,
                                    tpol.symbol()
                                )),
                                *span,
                            ));
                        }
                        // Branches must match the type exactly.
                        let ptags: Vec<_> = branches.iter().map(|(t, _)| t.clone()).collect();
                        let ttags: Vec<_> = tbranches.iter().map(|(t, _)| t.clone()).collect();
                        if ptags != ttags {
                            return Err(err(
                                CheckErrorKind::BranchMismatch(format!(
                                    "process branches {{{}}} do not match type branches {{{}}}",
                                    ptags
                                        .iter()
                                        .map(|t| t.to_string())
                                        .collect::<Vec<_>>()
                                        .join(", "),
                                    ttags
                                        .iter()
                                        .map(|t| t.to_string())
                                        .collect::<Vec<_>>()
                                        .join(", ")
                                )),
                                *span,
                            ));
                        }
                        let mut common: Option<BTreeMap<Channel, TypeId>> = None;
                        let mut rank = Cost::ZERO;
                        for ((tag, body), (_, tcont)) in branches.iter().zip(&tbranches) {
                            let mut inner = ctx.clone();
                            inner.set(chan, CtxEntry::Known(*tcont));
                            let out = self.infer(&inner, body, ranks)?;
                            rank = rank.max(out.rank);
                            match &common {
                                None => common = Some(out.synth),
                                Some(prev) => {
                                    if *prev != out.synth {
                                        return Err(err(
                                            CheckErrorKind::ContextMismatch(format!(
                                                "branch `{tag}` uses open channels differently \
                                                 from its sibling branches"
                                            )),
                                            body.span(),
                                        ));
                                    }
                                }
                            }
                        }
                        Ok(Outcome {
                            synth: common.unwrap_or_default(),
                            rank,
                        })
                    }
                    CtxEntry::Open => {
                        let mut common: Option<BTreeMap<Channel, TypeId>> = None;
                        let mut tag_types = Vec::new();
                        let mut rank = Cost::ZERO;
                        for (tag, body) in branches {
                            let mut inner = ctx.clone();
                            inner.set(chan, CtxEntry::Open);
                            let out = self.infer(&inner, body, ranks)?;
                            rank = rank.max(out.rank);
                            let mut synth = out.synth;
                            let cont_ty = synth.remove(chan).ok_or_else(|| {
                                err(
                                    CheckErrorKind::LinearityViolation(format!(
                                        "branch `{tag}` does not consume `{chan}`"
                                    )),
                                    body.span(),
                                )
                            })?;
                            tag_types.push((tag.clone(), cont_ty));
                            match &common {
                                None => common = Some(synth),
                                Some(prev) => {
                                    if *prev != synth {
                                        return Err(err(
                                            CheckErrorKind::ContextMismatch(format!(
                                                "branch `{tag}` uses open channels differently \
                                                 from its sibling branches"
                                            )),
                                            body.span(),
                                        ));
                                    }
                                }
                            }
                        }
                        let ty = self
                            .store
                            .tags(peer.clone(), *polarity, tag_types)
                            .expect("validated branch sets");
                        let mut synth = common.unwrap_or_default();
                        synth.insert(chan.clone(), ty);
                        Ok(Outcome { synth, rank })
                    }
                }
            }
            Process::ChanOut {
                span,
                chan,
                peer,
                payload,
                cont,
            } => {
                if chan == payload {
                    return Err(err(
                        CheckErrorKind::ContextMismatch(format!(
                            "`{chan}` cannot delegate itself"
                        )),
                        *span,
                    ));
                }
                let chan_entry = ctx.get(chan).ok_or_else(|| {
                    err(
                        CheckErrorKind::ContextMismatch(format!("`{chan}` not in context")),
                        *span,
                    )
                })?;
                let payload_entry = ctx.get(payload).ok_or_else(|| {
                    err(
                        CheckErrorKind::ContextMismatch(format!("`{payload}` not in context")),
                        *span,
                    )
                })?;
                match chan_entry {
                    CtxEntry::Known(t) => {
                        let (trole, tpol, tpayload, tcont) = match self.store.node(t).clone() {
                            TypeNode::Channel {
                                role,
                                polarity,
                                payload,
                                continuation,
                            } => (role, polarity, payload, continuation),
                            other => {
                                return Err(err(
                                    CheckErrorKind::ContextMismatch(format!(
                                        "`{chan}` sends a channel but has type {}",
                                        render_node(&self.store, &other)
                                    )),
                                    *span,
                                ))
                            }
                        };
                        if trole != *peer || tpol != Polarity::Out {
                            return Err(err(
                                CheckErrorKind::ContextMismatch(format!(
                                    "`{chan}` sends a channel to {peer} but its type says {}{}",
                                    trole,
                                    tpol.symbol()
                                )),
                                *span,
                            ));
                        }
                        let mut inner = ctx.clone();
                        inner.remove(payload);
                        inner.set(chan, CtxEntry::Known(tcont));
                        let mut out = self.infer(&inner, cont, ranks)?;
                        match payload_entry {
                            // The exchanged channel's type must coincide with
                            // the payload type; no variance here.
                            CtxEntry::Known(u) if u == tpayload => {}
                            CtxEntry::Known(u) => {
                                return Err(err(
                                    CheckErrorKind::ContextMismatch(format!(
                                        "payload `{payload}` has type {} but `{chan}` carries {}",
                                        crate::parser::render_type_inline(&self.store, u),
                                        crate::parser::render_type_inline(&self.store, tpayload)
                                    )),
                                    *span,
                                ))
                            }
                            CtxEntry::Open => {
                                out.synth.insert(payload.clone(), tpayload);
                            }
                        }
                        Ok(out)
                    }
                    CtxEntry::Open => {
                        let u = match payload_entry {
                            CtxEntry::Known(u) => u,
                            CtxEntry::Open => {
                                return Err(err(
                                    CheckErrorKind::InferenceUnderdetermined(format!(
                                        "`{chan}` and its payload `{payload}` are both fresh \
                                         endpoints"
                                    )),
                                    *span,
                                ))
                            }
                        };
                        let mut inner = ctx.clone();
                        inner.remove(payload);
                        inner.set(chan, CtxEntry::Open);
                        let mut out = self.infer(&inner, cont, ranks)?;
                        let cont_ty = out.synth.remove(chan).ok_or_else(|| {
                            err(
                                CheckErrorKind::LinearityViolation(format!(
                                    "continuation does not consume `{chan}`"
                                )),
                                *span,
                            )
                        })?;
                        let ty = self.store.channel(peer.clone(), Polarity::Out, u, cont_ty);
                        out.synth.insert(chan.clone(), ty);
                        Ok(out)
                    }
                }
            }
            Process::ChanIn {
                span,
                chan,
                peer,
                binder,
                cont,
            } => {
                let entry = ctx.get(chan).ok_or_else(|| {
                    err(
                        CheckErrorKind::ContextMismatch(format!("`{chan}` not in context")),
                        *span,
                    )
                })?;
                let bchan = Channel::Var(binder.clone());
                match entry {
                    CtxEntry::Known(t) => {
                        let (trole, tpol, tpayload, tcont) = match self.store.node(t).clone() {
                            TypeNode::Channel {
                                role,
                                polarity,
                                payload,
                                continuation,
                            } => (role, polarity, payload, continuation),
                            other => {
                                return Err(err(
                                    CheckErrorKind::ContextMismatch(format!(
                                        "`{chan}` receives a channel but has type {}",
                                        render_node(&self.store, &other)
                                    )),
                                    *span,
                                ))
                            }
                        };
                        if trole != *peer || tpol != Polarity::In {
                            return Err(err(
                                CheckErrorKind::ContextMismatch(format!(
                                    "`{chan}` receives a channel from {peer} but its type says \
                                     {}{}",
                                    trole,
                                    tpol.symbol()
                                )),
                                *span,
                            ));
                        }
                        let mut inner = ctx.clone();
                        inner.set(chan, CtxEntry::Known(tcont));
                        inner.add(bchan, CtxEntry::Known(tpayload), *span)?;
                        self.infer(&inner, cont, ranks)
                    }
                    CtxEntry::Open => {
                        let mut inner = ctx.clone();
                        inner.set(chan, CtxEntry::Open);
                        inner.add(bchan.clone(), CtxEntry::Open, *span)?;
                        let mut out = self.infer(&inner, cont, ranks)?;
                        let cont_ty = out.synth.remove(chan).ok_or_else(|| {
                            err(
                                CheckErrorKind::LinearityViolation(format!(
                                    "continuation does not consume `{chan}`"
                                )),
                                *span,
                            )
                        })?;
                        let payload_ty = out.synth.remove(&bchan).ok_or_else(|| {
                            err(
                                CheckErrorKind::LinearityViolation(format!(
                                    "continuation does not consume `{binder}`"
                                )),
                                *span,
                            )
                        })?;
                        let ty =
                            self.store
                                .channel(peer.clone(), Polarity::In, payload_ty, cont_ty);
                        out.synth.insert(chan.clone(), ty);
                        Ok(out)
                    }
                }
            }
            Process::Choice { left, right, .. } => {
                let lout = self.infer(ctx, left, ranks)?;
                let rout = self.infer(ctx, right, ranks)?;
                if lout.synth != rout.synth {
                    return Err(err(
                        CheckErrorKind::ContextMismatch(
                            "choice branches use open channels differently".to_string(),
                        ),
                        right.span(),
                    ));
                }
                Ok(Outcome {
                    synth: lout.synth,
                    rank: lout.rank.min(rout.rank),
                })
            }
            Process::Cast {
                span,
                chan,
                target,
                cont,
            } => {
                let entry = ctx.get(chan).ok_or_else(|| {
                    err(
                        CheckErrorKind::ContextMismatch(format!("`{chan}` not in context")),
                        *span,
                    )
                })?;
                let mut inner = ctx.clone();
                inner.set(chan, CtxEntry::Known(*target));
                let mut out = self.infer(&inner, cont, ranks)?;
                match entry {
                    CtxEntry::Known(s) => {
                        let weight = self.fair_subtype(s, *target).ok_or_else(|| {
                            err(
                                CheckErrorKind::NotASubtype(format!(
                                    "{} is not a fair subtype of {}",
                                    crate::parser::render_type_inline(&self.store, s),
                                    crate::parser::render_type_inline(&self.store, *target)
                                )),
                                *span,
                            )
                        })?;
                        self.max_cast_weight = self.max_cast_weight.max(weight);
                        out.rank = out.rank.add(Cost::Fin(weight));
                    }
                    CtxEntry::Open => {
                        // A cast on a fresh endpoint: take the target as the
                        // creation type (a weight-0 reflexive cast).
                        out.synth.insert(chan.clone(), *target);
                    }
                }
                Ok(out)
            }
            Process::Session {
                span,
                name,
                participants,
            } => {
                // Split the context: each channel goes to the unique
                // participant using it.
                let frees: Vec<BTreeSet<Channel>> = participants
                    .iter()
                    .map(|(_, b)| b.free_channels())
                    .collect();
                for chan in ctx.channels() {
                    let owners: Vec<usize> = frees
                        .iter()
                        .enumerate()
                        .filter(|(_, f)| f.contains(&chan))
                        .map(|(i, _)| i)
                        .collect();
                    match owners.len() {
                        1 => {}
                        0 => {
                            return Err(err(
                                CheckErrorKind::LinearityViolation(format!(
                                    "channel `{chan}` is unused by session `{name}`"
                                )),
                                *span,
                            ))
                        }
                        _ => {
                            return Err(err(
                                CheckErrorKind::LinearityViolation(format!(
                                    "channel `{chan}` is used by several participants of `{name}`"
                                )),
                                *span,
                            ))
                        }
                    }
                }
                let mut rank = Cost::Fin(1);
                let mut entries = Vec::new();
                let mut synth = BTreeMap::new();
                for ((role, body), free) in participants.iter().zip(&frees) {
                    let mut slice = Ctx::default();
                    for (chan, entry) in &ctx.entries {
                        if free.contains(chan) {
                            slice.add(chan.clone(), *entry, *span)?;
                        }
                    }
                    let ep = Channel::Endpoint(name.clone(), role.clone());
                    slice.add(ep.clone(), CtxEntry::Open, *span)?;
                    let mut out = self.infer(&slice, body, ranks)?;
                    let ep_ty = out.synth.remove(&ep).ok_or_else(|| {
                        err(
                            CheckErrorKind::LinearityViolation(format!(
                                "participant `{role}` does not consume `{ep}`"
                            )),
                            body.span(),
                        )
                    })?;
                    entries.push((role.clone(), ep_ty));
                    rank = rank.add(out.rank);
                    synth.extend(out.synth);
                }
                let map = SessionMap::new(entries).expect("validated distinct roles");
                if self.verify_coherence {
                    match self.coherent(&map) {
                        Some(true) => {}
                        Some(false) => {
                            return Err(err(
                                CheckErrorKind::IncoherentSession(format!(
                                    "{}: {}",
                                    name,
                                    crate::parser::render_map(&self.store, &map).trim_end()
                                )),
                                *span,
                            ))
                        }
                        None => {
                            return Err(err(CheckErrorKind::StateCapExceeded, *span));
                        }
                    }
                }
                Ok(Outcome { synth, rank })
            }
            Process::Call { span, name, args } => {
                let (param_tys, _) = self
                    .asn
                    .get(name)
                    .cloned()
                    .ok_or_else(|| {
                        err(
                            CheckErrorKind::ContextMismatch(format!("unknown definition `{name}`")),
                            *span,
                        )
                    })?;
                if args.len() != param_tys.len() {
                    return Err(err(CheckErrorKind::ArityMismatch(name.clone()), *span));
                }
                let mut seen: BTreeSet<&Channel> = BTreeSet::new();
                for a in args {
                    if !seen.insert(a) {
                        return Err(err(
                            CheckErrorKind::LinearityViolation(format!(
                                "argument `{a}` passed twice to `{name}`"
                            )),
                            *span,
                        ));
                    }
                }
                for chan in ctx.channels() {
                    if !args.contains(&chan) {
                        return Err(err(
                            CheckErrorKind::LinearityViolation(format!(
                                "channel `{chan}` unused by call to `{name}`"
                            )),
                            *span,
                        ));
                    }
                }
                let mut synth = BTreeMap::new();
                for (arg, want) in args.iter().zip(&param_tys) {
                    match ctx.get(arg) {
                        None => {
                            return Err(err(
                                CheckErrorKind::ContextMismatch(format!(
                                    "`{arg}` not in context"
                                )),
                                *span,
                            ))
                        }
                        Some(CtxEntry::Known(t)) if t == *want => {}
                        Some(CtxEntry::Known(t)) => {
                            return Err(err(
                                CheckErrorKind::ContextMismatch(format!(
                                    "argument `{arg}` has type {} but `{name}` expects {}",
                                    crate::parser::render_type_inline(&self.store, t),
                                    crate::parser::render_type_inline(&self.store, *want)
                                )),
                                *span,
                            ))
                        }
                        Some(CtxEntry::Open) => {
                            synth.insert(arg.clone(), *want);
                        }
                    }
                }
                Ok(Outcome {
                    synth,
                    rank: ranks.get(name).copied().unwrap_or(Cost::Inf),
                })
            }
        }
    }
}

fn render_node(_store: &TypeStore, node: &TypeNode) -> String {
    match node {
        TypeNode::End(p) => format!("end{}", p.symbol()),
        TypeNode::Tags {
            role, polarity, ..
        } => format!("a tag exchange with {}{}", role, polarity.symbol()),
        TypeNode::Channel {
            role, polarity, ..
        } => format!("a channel exchange with {}{}", role, polarity.symbol()),
    }
}

// ---------------------------------------------------------------------------
// Inductive interpretation (corules)

/// One step of the "some branch reaches the axioms" predicate.
fn terminable(p: &Process, defs: &BTreeMap<ProcName, bool>) -> bool {
    match p {
        Process::Done { .. } | Process::Close { .. } => true,
        Process::Wait { cont, .. }
        | Process::ChanOut { cont, .. }
        | Process::ChanIn { cont, .. }
        | Process::Cast { cont, .. } => terminable(cont, defs),
        Process::Tags { branches, .. } => branches.iter().any(|(_, b)| terminable(b, defs)),
        Process::Choice { left, right, .. } => terminable(left, defs) || terminable(right, defs),
        Process::Session { participants, .. } => {
            participants.iter().all(|(_, b)| terminable(b, defs))
        }
        Process::Call { name, .. } => defs.get(name).copied().unwrap_or(false),
    }
}

/// Least fixpoint of definition-level terminability.
pub fn terminable_definitions(program: &Program) -> BTreeMap<ProcName, bool> {
    let mut table: BTreeMap<ProcName, bool> =
        program.defs.keys().map(|n| (n.clone(), false)).collect();
    loop {
        let mut changed = false;
        for (name, def) in &program.defs {
            if !table[name] && terminable(&def.body, &table) {
                table.insert(name.clone(), true);
                changed = true;
            }
        }
        if !changed {
            return table;
        }
    }
}

/// Every judgment of the coinductive tree needs a finite derivation, so every
/// node of the body must be terminable; returns the span of the first node
/// that is not.
pub fn first_nonterminable(p: &Process, defs: &BTreeMap<ProcName, bool>) -> Option<Span> {
    if !terminable(p, defs) {
        return Some(p.span());
    }
    match p {
        Process::Done { .. } | Process::Close { .. } | Process::Call { .. } => None,
        Process::Wait { cont, .. }
        | Process::ChanOut { cont, .. }
        | Process::ChanIn { cont, .. }
        | Process::Cast { cont, .. } => first_nonterminable(cont, defs),
        Process::Tags { branches, .. } => branches
            .iter()
            .find_map(|(_, b)| first_nonterminable(b, defs)),
        Process::Choice { left, right, .. } => {
            first_nonterminable(left, defs).or_else(|| first_nonterminable(right, defs))
        }
        Process::Session { participants, .. } => participants
            .iter()
            .find_map(|(_, b)| first_nonterminable(b, defs)),
    }
}

// ---------------------------------------------------------------------------
// Rank inference

fn count_nodes(p: &Process) -> u64 {
    1 + match p {
        Process::Done { .. } | Process::Close { .. } | Process::Call { .. } => 0,
        Process::Wait { cont, .. }
        | Process::ChanOut { cont, .. }
        | Process::ChanIn { cont, .. }
        | Process::Cast { cont, .. } => count_nodes(cont),
        Process::Tags { branches, .. } => branches.iter().map(|(_, b)| count_nodes(b)).sum(),
        Process::Choice { left, right, .. } => count_nodes(left) + count_nodes(right),
        Process::Session { participants, .. } => {
            participants.iter().map(|(_, b)| count_nodes(b)).sum()
        }
    }
}

/// Per-definition report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DefReport {
    pub name: String,
    pub well_typed: bool,
    /// Reported rank: declared when present and valid, otherwise inferred.
    pub rank: Option<Cost>,
    pub inferred_rank: Option<Cost>,
    pub declared_rank: Option<u64>,
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CheckReport {
    pub definitions: Vec<DefReport>,
    pub well_typed: bool,
}

/// Check a whole program: coinductive pass, corule pass, rank inference and
/// declared-rank verification.
pub fn check_program(program: &Program) -> CheckReport {
    let mut checker = Checker::new(program);
    let zero_ranks: RankTable = program
        .defs
        .keys()
        .map(|n| (n.clone(), Cost::ZERO))
        .collect();

    let mut reports: BTreeMap<ProcName, DefReport> = BTreeMap::new();
    let mut coind_ok: BTreeSet<ProcName> = BTreeSet::new();

    for (name, def) in &program.defs {
        let ctx = Ctx::from_known(
            def.params
                .iter()
                .map(|(v, t)| (Channel::Var(v.clone()), *t)),
        );
        let mut report = DefReport {
            name: name.as_str().to_string(),
            well_typed: true,
            rank: None,
            inferred_rank: None,
            declared_rank: def.declared_rank,
            errors: Vec::new(),
            warnings: Vec::new(),
            diagnostics: Vec::new(),
        };
        if let Err(d) = checker.infer(&ctx, &def.body, &zero_ranks) {
            report.well_typed = false;
            report.errors.push(d.message.clone());
            report.diagnostics.push(d);
        } else {
            coind_ok.insert(name.clone());
        }
        reports.insert(name.clone(), report);
    }

    // Corules: every node of every body must admit a finite derivation.
    let term_defs = terminable_definitions(program);
    for (name, def) in &program.defs {
        if let Some(span) = first_nonterminable(&def.body, &term_defs) {
            let report = reports.get_mut(name).unwrap();
            report.well_typed = false;
            let d = err(CheckErrorKind::NoFiniteDerivation, span);
            report.errors.push(d.message.clone());
            report.diagnostics.push(d);
        }
    }

    // Rank inference over the definitions that passed the coinductive pass.
    let total_nodes: u64 = program.defs.values().map(|d| count_nodes(&d.body)).sum();
    let cap = total_nodes
        .saturating_mul(1 + checker.max_cast_weight.max(1))
        .saturating_add(1);
    checker.verify_coherence = false; // already verified above
    let mut ranks: RankTable = coind_ok
        .iter()
        .map(|n| (n.clone(), Cost::ZERO))
        .collect();
    loop {
        let mut next = ranks.clone();
        for name in &coind_ok {
            let def = &program.defs[name];
            let ctx = Ctx::from_known(
                def.params
                    .iter()
                    .map(|(v, t)| (Channel::Var(v.clone()), *t)),
            );
            let out = checker
                .infer(&ctx, &def.body, &ranks)
                .expect("body re-checks after a successful pass");
            let mut r = out.rank;
            if let Cost::Fin(v) = r {
                if v > cap {
                    r = Cost::Inf;
                }
            }
            next.insert(name.clone(), r);
        }
        if next == ranks {
            break;
        }
        ranks = next;
    }

    for name in &coind_ok {
        let def = &program.defs[name];
        let inferred = ranks[name];
        let report = reports.get_mut(name).unwrap();
        report.inferred_rank = Some(inferred);
        match inferred {
            Cost::Inf => {
                report.well_typed = false;
                let d = err(CheckErrorKind::InfiniteRank, def.span);
                report.errors.push(d.message.clone());
                report.diagnostics.push(d);
            }
            Cost::Fin(v) => match def.declared_rank {
                Some(declared) if declared < v => {
                    report.well_typed = false;
                    let d = err(
                        CheckErrorKind::DeclaredRankTooSmall {
                            declared,
                            inferred: v,
                        },
                        def.span,
                    );
                    report.errors.push(d.message.clone());
                    report.diagnostics.push(d);
                }
                Some(declared) => {
                    if declared > v {
                        report.warnings.push(format!(
                            "declared rank {declared} exceeds the inferred minimum {v}"
                        ));
                    }
                    report.rank = Some(Cost::Fin(declared));
                }
                None => report.rank = Some(Cost::Fin(v)),
            },
        }
        if !report.well_typed {
            report.rank = None;
        }
    }

    let definitions: Vec<DefReport> = reports.into_values().collect();
    let well_typed = definitions.iter().all(|d| d.well_typed);
    CheckReport {
        definitions,
        well_typed,
    }
}

/// Re-check a closed process term against a program's definitions; used by
/// the simulator's subject-reduction harness and by the measure.
pub fn check_closed_term(program: &Program, term: &Process) -> Result<(), Diagnostic> {
    let mut checker = Checker::new(program);
    let ranks: RankTable = program
        .defs
        .keys()
        .map(|n| (n.clone(), Cost::ZERO))
        .collect();
    checker.infer(&Ctx::default(), term, &ranks).map(|_| ())
}

//! Shared test utilities: random session type generation, supertype
//! mutation, and the brute-force bounded derivation search used as the
//! independent oracle for fair subtyping.

use std::collections::BTreeSet;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use fmst_core::subtyping::{pair_closure, PairShape};
use fmst_core::syntax::{
    GraphBuilder, Polarity, Program, RawNode, RawRef, Role, Tag, TypeId, TypeNode, TypeStore,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn roles() -> Vec<Role> {
    ["p", "q", "r"].iter().map(Role::new).collect()
}

pub fn tags() -> Vec<Tag> {
    ["a", "b", "c"].iter().map(Tag::new).collect()
}

/// Generate a random session type with at most `max_nodes` semantic nodes.
/// All constructor nodes, so contractivity holds; cycles are allowed.
pub fn gen_type(rng: &mut ChaCha8Rng, store: &mut TypeStore, max_nodes: usize) -> TypeId {
    let roles = roles();
    let tags = tags();
    let n = rng.gen_range(1..=max_nodes);
    let mut builder = GraphBuilder::new();
    let slots: Vec<usize> = (0..n).map(|_| builder.reserve()).collect();
    for i in 0..n {
        let pol = if rng.gen() { Polarity::Out } else { Polarity::In };
        let role = roles[rng.gen_range(0..roles.len())].clone();
        let any = |rng: &mut ChaCha8Rng| RawRef::Raw(slots[rng.gen_range(0..n)]);
        let node = match rng.gen_range(0..10) {
            // Ends are frequent so that most types are bounded.
            0..=3 => RawNode::End(pol),
            4..=8 => {
                let k = rng.gen_range(1..=2usize);
                let mut chosen: Vec<Tag> = tags.clone();
                chosen.shuffle(rng);
                chosen.truncate(k);
                chosen.sort();
                RawNode::Tags {
                    role,
                    polarity: pol,
                    branches: chosen.into_iter().map(|t| (t, any(rng))).collect(),
                }
            }
            _ => RawNode::Channel {
                role,
                polarity: pol,
                payload: any(rng),
                continuation: any(rng),
            },
        };
        builder.set(slots[i], node);
    }
    builder
        .commit(store, RawRef::Raw(slots[0]))
        .expect("generated graphs are well-formed")
}

/// Generate a random *bounded* type (rejection sampling).
pub fn gen_bounded(rng: &mut ChaCha8Rng, store: &mut TypeStore, max_nodes: usize) -> TypeId {
    loop {
        let t = gen_type(rng, store, max_nodes);
        if fmst_core::typelts::bounded(store, t) {
            return t;
        }
    }
}

/// Mutate `s` toward a plausible supertype: drop an output branch (the
/// supertype performs fewer outputs) or add an input branch (it offers more
/// inputs); occasionally the identity.
pub fn mutate_super(rng: &mut ChaCha8Rng, store: &mut TypeStore, s: TypeId) -> TypeId {
    let nodes: Vec<TypeId> = store.subterms(s).into_iter().collect();
    let mut builder = GraphBuilder::new();
    let slots: Vec<usize> = nodes.iter().map(|_| builder.reserve()).collect();
    let slot_of = |id: TypeId| -> RawRef {
        RawRef::Raw(slots[nodes.iter().position(|n| *n == id).unwrap()])
    };
    let victim = nodes[rng.gen_range(0..nodes.len())];
    let kind = rng.gen_range(0..4);
    for (i, id) in nodes.iter().enumerate() {
        let node = match store.node(*id).clone() {
            TypeNode::End(p) => RawNode::End(p),
            TypeNode::Tags {
                role,
                polarity,
                branches,
            } => {
                let mut bs: Vec<(Tag, RawRef)> = branches
                    .iter()
                    .map(|(t, c)| (t.clone(), slot_of(*c)))
                    .collect();
                if *id == victim {
                    match (kind, polarity) {
                        (0, Polarity::Out) if bs.len() >= 2 => {
                            let drop_ix = rng.gen_range(0..bs.len());
                            bs.remove(drop_ix);
                        }
                        (1, Polarity::In) => {
                            let fresh: Vec<Tag> = tags()
                                .into_iter()
                                .filter(|t| !bs.iter().any(|(b, _)| b == t))
                                .collect();
                            if let Some(t) = fresh.first() {
                                let target =
                                    slot_of(nodes[rng.gen_range(0..nodes.len())]);
                                bs.push((t.clone(), target));
                                bs.sort_by(|a, b| a.0.cmp(&b.0));
                            }
                        }
                        _ => {}
                    }
                }
                RawNode::Tags {
                    role,
                    polarity,
                    branches: bs,
                }
            }
            TypeNode::Channel {
                role,
                polarity,
                payload,
                continuation,
            } => RawNode::Channel {
                role,
                polarity,
                payload: RawRef::Canon(payload),
                continuation: slot_of(continuation),
            },
        };
        builder.set(slots[i], node);
    }
    builder
        .commit(store, slot_of(s))
        .expect("mutation keeps graphs well-formed")
}

/// Brute-force bounded derivation search over the fair subtyping rules:
/// greatest fixpoint over (pair, annotation ≤ |closure|) judgments. Returns
/// the minimal feasible root annotation. This stays independent of the
/// weight-table fixpoint it is used to validate.
pub fn oracle_fair_rank(store: &TypeStore, s: TypeId, t: TypeId) -> Option<u64> {
    let cl = pair_closure(store, s, t);
    let n = cl.pairs.len();
    let cap = n; // Lemma-backed bound: annotations above |closure| are never needed.
    let mut alive = vec![vec![true; cap + 1]; n];
    loop {
        let mut changed = false;
        for ix in 0..n {
            for k in 0..=cap {
                if !alive[ix][k] {
                    continue;
                }
                let prem = &cl.premises[ix];
                let le = |p: usize, bound: usize, alive: &Vec<Vec<bool>>| {
                    (0..=bound).any(|m| alive[p][m])
                };
                let ok = match cl.shapes[ix] {
                    PairShape::End => true,
                    PairShape::Mismatch => false,
                    PairShape::Channel => alive[prem[0]][k],
                    PairShape::TagIn => prem.iter().all(|&p| le(p, k, &alive)),
                    PairShape::TagOutShared => {
                        let out1 = prem.iter().all(|&p| le(p, k, &alive));
                        let out2 = k > 0
                            && prem.iter().any(|&p| le(p, k - 1, &alive))
                            && prem.iter().all(|&p| le(p, cap, &alive));
                        out1 || out2
                    }
                    PairShape::TagOutStrict => {
                        k > 0
                            && prem.iter().any(|&p| le(p, k - 1, &alive))
                            && prem.iter().all(|&p| le(p, cap, &alive))
                    }
                };
                if !ok {
                    alive[ix][k] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    (0..=cap).find(|&k| alive[0][k]).map(|k| k as u64)
}

/// Load and validate a corpus program by stem name.
pub fn corpus_program(stem: &str) -> Program {
    let path = format!(
        "{}/../../corpus/{}.fmst",
        env!("CARGO_MANIFEST_DIR"),
        stem
    );
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    let raw = fmst_core::parser::parse_program(&text).expect("corpus parses");
    fmst_core::parser::resolve_and_validate(&raw).expect("corpus validates")
}

/// A subject role that the type never targets (the generator uses p/q/r, so
/// `z` is always available as a fallback).
pub fn subject_for(store: &TypeStore, s: TypeId) -> Role {
    let targets = store.targets(s);
    ["z", "p", "q", "r"]
        .iter()
        .map(Role::new)
        .find(|r| !targets.contains(r))
        .expect("a free role always exists")
}

/// A domain for dual/discriminator constructions: the type's targets, plus a
/// filler role when the type has none, never containing the subject.
pub fn domain_for(store: &TypeStore, s: TypeId, subject: &Role) -> BTreeSet<Role> {
    let mut d: BTreeSet<Role> = store.targets(s).into_iter().collect();
    if d.is_empty() {
        let filler = roles()
            .into_iter()
            .find(|r| r != subject)
            .expect("at least two roles");
        d.insert(filler);
    }
    assert!(!d.contains(subject), "subject must not occur in the domain");
    d
}

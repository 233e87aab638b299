//! Fair subtyping with rank weights.
//!
//! The decision procedure runs in two stages. Unfair subtyping is the plain
//! coinductive simulation (input-covariant, output-contravariant, invariant
//! payloads); over the finite pair closure it holds iff no reachable pair has
//! a mismatched shape. The weight rk(S,T) is the least solution of a min/max
//! equation system over the closure; fair subtyping holds iff every pair in
//! the closure has finite weight, and the root weight is the rank annotation.
//! For bounded divergent pairs the discriminator builds a session map that is
//! coherent with S and incoherent with T.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::syntax::{Cost, Polarity, Role, SessionMap, Tag, TypeId, TypeNode, TypeStore};
use crate::typelts::{self, DualityError, MapBuilder};

/// Rule-shape classification of a pair in the closure.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PairShape {
    End,
    TagIn,
    /// Output sets coincide.
    TagOutShared,
    /// The supertype's output set is a strict subset.
    TagOutStrict,
    Channel,
    Mismatch,
}

/// The finite set of pairs reachable from (S,T) by following matched
/// premises, with their shapes and premise edges.
pub struct PairClosure {
    pub pairs: Vec<(TypeId, TypeId)>,
    pub index: HashMap<(TypeId, TypeId), usize>,
    pub shapes: Vec<PairShape>,
    /// Premise pairs, by closure index. For tag pairs these follow the shared
    /// tags; for channels the continuation.
    pub premises: Vec<Vec<usize>>,
    /// For tag pairs, the shared tags aligned with `premises`.
    pub premise_tags: Vec<Vec<Tag>>,
}

fn classify(store: &TypeStore, s: TypeId, t: TypeId) -> (PairShape, Vec<(Tag, TypeId, TypeId)>) {
    match (store.node(s), store.node(t)) {
        (TypeNode::End(p), TypeNode::End(q)) => {
            if p == q {
                (PairShape::End, vec![])
            } else {
                (PairShape::Mismatch, vec![])
            }
        }
        (
            TypeNode::Tags {
                role: r1,
                polarity: Polarity::In,
                branches: b1,
            },
            TypeNode::Tags {
                role: r2,
                polarity: Polarity::In,
                branches: b2,
            },
        ) => {
            if r1 != r2 {
                return (PairShape::Mismatch, vec![]);
            }
            let sup: BTreeMap<&Tag, TypeId> = b2.iter().map(|(t, c)| (t, *c)).collect();
            // Covariance: every branch of S must appear in T.
            let mut prem = Vec::new();
            for (tag, cont) in b1 {
                match sup.get(tag) {
                    Some(&tc) => prem.push((tag.clone(), *cont, tc)),
                    None => return (PairShape::Mismatch, vec![]),
                }
            }
            (PairShape::TagIn, prem)
        }
        (
            TypeNode::Tags {
                role: r1,
                polarity: Polarity::Out,
                branches: b1,
            },
            TypeNode::Tags {
                role: r2,
                polarity: Polarity::Out,
                branches: b2,
            },
        ) => {
            if r1 != r2 {
                return (PairShape::Mismatch, vec![]);
            }
            let sub: BTreeMap<&Tag, TypeId> = b1.iter().map(|(t, c)| (t, *c)).collect();
            // Contravariance: every branch of T must appear in S.
            let mut prem = Vec::new();
            for (tag, cont) in b2 {
                match sub.get(tag) {
                    Some(&sc) => prem.push((tag.clone(), sc, *cont)),
                    None => return (PairShape::Mismatch, vec![]),
                }
            }
            let shape = if b2.len() == b1.len() {
                PairShape::TagOutShared
            } else {
                PairShape::TagOutStrict
            };
            (shape, prem)
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
            // Payloads are compared invariantly; canonical ids make this a
            // plain equality test.
            if r1 == r2 && p1 == p2 && u1 == u2 {
                (PairShape::Channel, vec![(Tag::new(""), *c1, *c2)])
            } else {
                (PairShape::Mismatch, vec![])
            }
        }
        _ => (PairShape::Mismatch, vec![]),
    }
}

/// Compute the pair closure of (S,T).
pub fn pair_closure(store: &TypeStore, s: TypeId, t: TypeId) -> PairClosure {
    let mut pairs = Vec::new();
    let mut index = HashMap::new();
    let mut shapes = Vec::new();
    let mut premises: Vec<Vec<usize>> = Vec::new();
    let mut premise_tags: Vec<Vec<Tag>> = Vec::new();
    let mut queue = std::collections::VecDeque::new();

    index.insert((s, t), 0);
    pairs.push((s, t));
    queue.push_back(0usize);
    shapes.push(PairShape::Mismatch);
    premises.push(vec![]);
    premise_tags.push(vec![]);

    while let Some(ix) = queue.pop_front() {
        let (a, b) = pairs[ix];
        let (shape, prem) = classify(store, a, b);
        shapes[ix] = shape;
        let mut ixs = Vec::new();
        let mut tags = Vec::new();
        for (tag, pa, pb) in prem {
            let key = (pa, pb);
            let target = match index.get(&key) {
                Some(&i) => i,
                None => {
                    let i = pairs.len();
                    index.insert(key, i);
                    pairs.push(key);
                    shapes.push(PairShape::Mismatch);
                    premises.push(vec![]);
                    premise_tags.push(vec![]);
                    queue.push_back(i);
                    i
                }
            };
            ixs.push(target);
            tags.push(tag);
        }
        premises[ix] = ixs;
        premise_tags[ix] = tags;
    }
    PairClosure {
        pairs,
        index,
        shapes,
        premises,
        premise_tags,
    }
}

/// Unfair subtyping S ≤* T: the greatest fixpoint over the closure, which
/// holds iff no reachable pair is mismatched.
pub fn unfair_subtype(store: &TypeStore, s: TypeId, t: TypeId) -> bool {
    let cl = pair_closure(store, s, t);
    cl.shapes.iter().all(|sh| *sh != PairShape::Mismatch)
}

/// Least solution of the rk equation system over `cl`, by Kleene iteration
/// from all-zero. Values exceeding |closure| are saturated to ∞: the system
/// is a unit-cost min/max reachability game over the closure's positions, so
/// finite optimal values are bounded by the position count. The result is
/// cross-validated against a brute-force derivation search in the tests.
pub fn weight_table(cl: &PairClosure) -> Vec<Cost> {
    let n = cl.pairs.len();
    let cap = n as u64;
    let sat = |c: Cost| match c {
        Cost::Fin(v) if v > cap => Cost::Inf,
        other => other,
    };
    let mut values = vec![Cost::ZERO; n];
    loop {
        let mut next = values.clone();
        for ix in 0..n {
            let prem = &cl.premises[ix];
            next[ix] = match cl.shapes[ix] {
                PairShape::End => Cost::ZERO,
                PairShape::TagIn => {
                    prem.iter().map(|&p| values[p]).max().unwrap_or(Cost::ZERO)
                }
                PairShape::TagOutStrict => sat(
                    prem.iter()
                        .map(|&p| values[p])
                        .min()
                        .unwrap_or(Cost::Inf)
                        .succ(),
                ),
                PairShape::TagOutShared => {
                    let mn = prem
                        .iter()
                        .map(|&p| values[p])
                        .min()
                        .unwrap_or(Cost::Inf)
                        .succ();
                    let mx = prem.iter().map(|&p| values[p]).max().unwrap_or(Cost::ZERO);
                    sat(mn.min(mx))
                }
                PairShape::Channel => values[prem[0]],
                PairShape::Mismatch => Cost::Inf,
            };
            next[ix] = sat(next[ix]);
        }
        if next == values {
            return values;
        }
        values = next;
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum SubtypeError {
    #[error("not an unfair subtype")]
    NotUnfairSubtype,
    #[error("pair is not divergent (rk is finite)")]
    NotDivergent,
    #[error("left type is unbounded")]
    Unbounded,
    #[error("duality construction failed: {0}")]
    Duality(#[from] DualityError),
}

/// rk(S,T). Precondition: S ≤* T.
pub fn subtype_weight(store: &TypeStore, s: TypeId, t: TypeId) -> Result<Cost, SubtypeError> {
    let cl = pair_closure(store, s, t);
    if cl.shapes.iter().any(|sh| *sh == PairShape::Mismatch) {
        return Err(SubtypeError::NotUnfairSubtype);
    }
    Ok(weight_table(&cl)[0])
}

/// Fair subtyping: Some(rk(S,T)) iff S ≤* T and every pair in the closure has
/// finite weight. Root-only finiteness is not enough: divergent pairs may
/// hide behind inputs or shared-output minima.
pub fn fair_subtype(store: &TypeStore, s: TypeId, t: TypeId) -> Option<u64> {
    let cl = pair_closure(store, s, t);
    if cl.shapes.iter().any(|sh| *sh == PairShape::Mismatch) {
        return None;
    }
    let weights = weight_table(&cl);
    if weights.iter().any(|w| !w.is_finite()) {
        return None;
    }
    Some(weights[0].finite().expect("checked finite"))
}

/// Full subtype report for the CLI.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SubtypeReport {
    pub unfair: bool,
    pub fair: bool,
    pub rank: Option<u64>,
    pub left_bounded: bool,
    pub pairs: Vec<PairWeight>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct PairWeight {
    pub left: String,
    pub right: String,
    pub shape: String,
    pub weight: Cost,
}

pub fn subtype_report(store: &TypeStore, s: TypeId, t: TypeId) -> SubtypeReport {
    let cl = pair_closure(store, s, t);
    let unfair = cl.shapes.iter().all(|sh| *sh != PairShape::Mismatch);
    let weights = weight_table(&cl);
    let fair = unfair && weights.iter().all(|w| w.is_finite());
    let rank = if fair { weights[0].finite() } else { None };
    let pairs = cl
        .pairs
        .iter()
        .zip(&cl.shapes)
        .zip(&weights)
        .map(|(((a, b), shape), weight)| PairWeight {
            left: crate::parser::render_type_inline(store, *a),
            right: crate::parser::render_type_inline(store, *b),
            shape: format!("{shape:?}"),
            weight: *weight,
        })
        .collect();
    SubtypeReport {
        unfair,
        fair,
        rank,
        left_bounded: typelts::bounded(store, s),
        pairs,
    }
}

/// disc(p, S, T): a session map coherent with `p ▷ S` and incoherent with
/// `p ▷ T`. Preconditions: S bounded, S ≤* T, rk(S,T) = ∞.
pub fn discriminator(
    store: &mut TypeStore,
    subject: &Role,
    s: TypeId,
    t: TypeId,
) -> Result<SessionMap, SubtypeError> {
    let cl = pair_closure(store, s, t);
    if cl.shapes.iter().any(|sh| *sh == PairShape::Mismatch) {
        return Err(SubtypeError::NotUnfairSubtype);
    }
    let weights = weight_table(&cl);
    if weights[0].is_finite() {
        return Err(SubtypeError::NotDivergent);
    }
    if !typelts::bounded(store, s) {
        return Err(SubtypeError::Unbounded);
    }
    let mut domain: BTreeSet<Role> = store.targets(s);
    domain.extend(store.targets(t));
    domain.remove(subject);
    if domain.is_empty() {
        // A divergent root is a tag or channel node, so this only happens
        // when S talks to the subject role itself.
        return Err(SubtypeError::Duality(DualityError::EmptyDomain));
    }
    let domain_v: Vec<Role> = domain.iter().cloned().collect();

    let mut entries = Vec::new();
    for r in &domain_v {
        let mut mb = MapBuilder::new(store, subject.clone(), domain_v.clone());
        let mut disc = DiscBuilder {
            mb: &mut mb,
            cl: &cl,
            weights: &weights,
            memo: HashMap::new(),
        };
        let root = disc.disc_at(r, 0);
        let builder = mb.builder;
        let ty = builder
            .commit(store, root)
            .expect("discriminator builds well-formed graphs");
        entries.push((r.clone(), ty));
    }
    Ok(SessionMap::new(entries).expect("domain roles are distinct"))
}

struct DiscBuilder<'a, 'b> {
    mb: &'a mut MapBuilder<'b>,
    cl: &'a PairClosure,
    weights: &'a [Cost],
    memo: HashMap<(Role, usize), crate::syntax::RawRef>,
}

impl<'a, 'b> DiscBuilder<'a, 'b> {
    /// disc(p, S_ix, T_ix) at role `r`, where `ix` indexes the pair closure.
    /// Invariant: the pair at `ix` is divergent.
    fn disc_at(&mut self, r: &Role, ix: usize) -> crate::syntax::RawRef {
        use crate::syntax::{RawNode, RawRef};
        debug_assert!(!self.weights[ix].is_finite());
        let key = (r.clone(), ix);
        if let Some(&slot) = self.memo.get(&key) {
            return slot;
        }
        let (s, _t) = self.cl.pairs[ix];
        let node = self.mb.store.node(s).clone();
        match node {
            TypeNode::End(_) => unreachable!("end pairs have weight 0"),
            TypeNode::Tags {
                role: q,
                polarity: Polarity::In,
                ..
            } => {
                // Keep only the branches with divergent continuations; at
                // least one exists since the pair diverges. The map sends one
                // of them to the subject and broadcasts the choice.
                let slot = self.mb.builder.reserve();
                self.memo.insert(key, RawRef::Raw(slot));
                let chosen: Vec<(Tag, usize)> = self.cl.premises[ix]
                    .iter()
                    .zip(&self.cl.premise_tags[ix])
                    .filter(|(&p, _)| !self.weights[p].is_finite())
                    .map(|(&p, tag)| (tag.clone(), p))
                    .collect();
                debug_assert!(!chosen.is_empty());
                let node = if *r == q {
                    let bs = chosen
                        .iter()
                        .map(|(tag, p)| {
                            let inner = self.disc_at(r, *p);
                            (tag.clone(), self.mb.broadcast(&q, tag, inner))
                        })
                        .collect();
                    RawNode::Tags {
                        role: self.mb.subject.clone(),
                        polarity: Polarity::Out,
                        branches: bs,
                    }
                } else {
                    RawNode::Tags {
                        role: q.clone(),
                        polarity: Polarity::In,
                        branches: chosen
                            .iter()
                            .map(|(tag, p)| (tag.clone(), self.disc_at(r, *p)))
                            .collect(),
                    }
                };
                self.mb.builder.set(slot, node);
                RawRef::Raw(slot)
            }
            TypeNode::Tags {
                role: q,
                polarity: Polarity::Out,
                branches,
            } => {
                // Receive any tag S may send: shared tags continue with the
                // discriminator (all divergent here), S-only tags conclude
                // with the dual.
                let slot = self.mb.builder.reserve();
                self.memo.insert(key, RawRef::Raw(slot));
                let shared: BTreeMap<Tag, usize> = self.cl.premise_tags[ix]
                    .iter()
                    .cloned()
                    .zip(self.cl.premises[ix].iter().copied())
                    .collect();
                let bs: Vec<(Tag, RawRef)> = branches
                    .iter()
                    .map(|(tag, s_cont)| {
                        let inner = match shared.get(tag) {
                            Some(&p) => self.disc_at(r, p),
                            None => self.mb.dual_at(r, *s_cont),
                        };
                        (tag.clone(), inner)
                    })
                    .collect();
                let node = if *r == q {
                    let bs2 = bs
                        .into_iter()
                        .map(|(tag, inner)| {
                            let b = self.mb.broadcast(&q, &tag, inner);
                            (tag, b)
                        })
                        .collect();
                    RawNode::Tags {
                        role: self.mb.subject.clone(),
                        polarity: Polarity::In,
                        branches: bs2,
                    }
                } else {
                    RawNode::Tags {
                        role: q.clone(),
                        polarity: Polarity::In,
                        branches: bs,
                    }
                };
                self.mb.builder.set(slot, node);
                RawRef::Raw(slot)
            }
            TypeNode::Channel {
                role: q,
                polarity,
                payload,
                ..
            } => {
                let p = self.cl.premises[ix][0];
                if *r == q {
                    let slot = self.mb.builder.reserve();
                    self.memo.insert(key, RawRef::Raw(slot));
                    let inner = self.disc_at(r, p);
                    self.mb.builder.set(
                        slot,
                        RawNode::Channel {
                            role: self.mb.subject.clone(),
                            polarity: polarity.complement(),
                            payload: RawRef::Canon(payload),
                            continuation: inner,
                        },
                    );
                    RawRef::Raw(slot)
                } else {
                    let out = self.disc_at(r, p);
                    self.memo.insert(key, out);
                    out
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::redsys::DEFAULT_STATE_CAP;
    use crate::syntax::{GraphBuilder, RawNode, RawRef};

    fn role(s: &str) -> Role {
        Role::new(s)
    }

    fn tag(s: &str) -> Tag {
        Tag::new(s)
    }

    /// S = seller!add.S + seller!pay.end!   (arbitrary-number buyer)
    fn buyer_s(st: &mut TypeStore) -> TypeId {
        let end = st.end(Polarity::Out);
        let mut b = GraphBuilder::new();
        let slot = b.reserve();
        b.set(
            slot,
            RawNode::Tags {
                role: role("seller"),
                polarity: Polarity::Out,
                branches: vec![
                    (tag("add"), RawRef::Raw(slot)),
                    (tag("pay"), RawRef::Canon(end)),
                ],
            },
        );
        b.commit(st, RawRef::Raw(slot)).unwrap()
    }

    /// T = seller!add.seller!add.T + seller!pay.end!   (even-adds buyer)
    fn buyer_t(st: &mut TypeStore) -> TypeId {
        let end = st.end(Polarity::Out);
        let mut b = GraphBuilder::new();
        let slot = b.reserve();
        let mid = b.add(RawNode::Tags {
            role: role("seller"),
            polarity: Polarity::Out,
            branches: vec![(tag("add"), RawRef::Raw(slot))],
        });
        b.set(
            slot,
            RawNode::Tags {
                role: role("seller"),
                polarity: Polarity::Out,
                branches: vec![
                    (tag("add"), RawRef::Raw(mid)),
                    (tag("pay"), RawRef::Canon(end)),
                ],
            },
        );
        b.commit(st, RawRef::Raw(slot)).unwrap()
    }

    /// U = seller!add.U   (never pays)
    fn buyer_u(st: &mut TypeStore) -> TypeId {
        let mut b = GraphBuilder::new();
        let slot = b.reserve();
        b.set(
            slot,
            RawNode::Tags {
                role: role("seller"),
                polarity: Polarity::Out,
                branches: vec![(tag("add"), RawRef::Raw(slot))],
            },
        );
        b.commit(st, RawRef::Raw(slot)).unwrap()
    }

    /// Unbiased and biased slot machines.
    fn slot_machines(st: &mut TypeStore) -> (TypeId, TypeId) {
        let end = st.end(Polarity::Out);
        let s = {
            let mut b = GraphBuilder::new();
            let slot = b.reserve();
            let inner = b.add(RawNode::Tags {
                role: role("player"),
                polarity: Polarity::Out,
                branches: vec![
                    (tag("win"), RawRef::Raw(slot)),
                    (tag("lose"), RawRef::Raw(slot)),
                ],
            });
            b.set(
                slot,
                RawNode::Tags {
                    role: role("player"),
                    polarity: Polarity::In,
                    branches: vec![
                        (tag("play"), RawRef::Raw(inner)),
                        (tag("quit"), RawRef::Canon(end)),
                    ],
                },
            );
            b.commit(st, RawRef::Raw(slot)).unwrap()
        };
        let t = {
            let mut b = GraphBuilder::new();
            let slot = b.reserve();
            let inner = b.add(RawNode::Tags {
                role: role("player"),
                polarity: Polarity::Out,
                branches: vec![(tag("lose"), RawRef::Raw(slot))],
            });
            b.set(
                slot,
                RawNode::Tags {
                    role: role("player"),
                    polarity: Polarity::In,
                    branches: vec![
                        (tag("play"), RawRef::Raw(inner)),
                        (tag("quit"), RawRef::Canon(end)),
                    ],
                },
            );
            b.commit(st, RawRef::Raw(slot)).unwrap()
        };
        (s, t)
    }

    #[test]
    fn unfair_subtype_examples() {
        let mut st = TypeStore::new();
        let s = buyer_s(&mut st);
        let t = buyer_t(&mut st);
        let u = buyer_u(&mut st);
        assert!(unfair_subtype(&st, s, s));
        assert!(unfair_subtype(&st, s, t));
        assert!(unfair_subtype(&st, s, u));
        assert!(!unfair_subtype(&st, u, s));
        let (sm, tm) = slot_machines(&mut st);
        assert!(unfair_subtype(&st, sm, tm));
    }

    #[test]
    fn weight_examples_from_the_derivations() {
        let mut st = TypeStore::new();
        let s = buyer_s(&mut st);
        let t = buyer_t(&mut st);
        let u = buyer_u(&mut st);
        assert_eq!(subtype_weight(&st, s, t).unwrap(), Cost::Fin(1));
        assert_eq!(subtype_weight(&st, s, u).unwrap(), Cost::Inf);
        let (sm, tm) = slot_machines(&mut st);
        assert_eq!(subtype_weight(&st, sm, tm).unwrap(), Cost::Inf);
        // !add.!add.S and !pay.end! as supertypes of S.
        let end = st.end(Polarity::Out);
        let add_add_s = {
            let inner = st
                .tags(role("seller"), Polarity::Out, vec![(tag("add"), s)])
                .unwrap();
            st.tags(role("seller"), Polarity::Out, vec![(tag("add"), inner)])
                .unwrap()
        };
        assert_eq!(subtype_weight(&st, s, add_add_s).unwrap(), Cost::Fin(2));
        let pay_end = st
            .tags(role("seller"), Polarity::Out, vec![(tag("pay"), end)])
            .unwrap();
        assert_eq!(subtype_weight(&st, s, pay_end).unwrap(), Cost::Fin(1));
        assert_eq!(
            subtype_weight(&st, u, s),
            Err(SubtypeError::NotUnfairSubtype)
        );
    }

    #[test]
    fn fair_subtype_examples() {
        let mut st = TypeStore::new();
        let s = buyer_s(&mut st);
        let t = buyer_t(&mut st);
        let u = buyer_u(&mut st);
        assert_eq!(fair_subtype(&st, s, t), Some(1));
        assert_eq!(fair_subtype(&st, s, u), None);
        assert_eq!(fair_subtype(&st, s, s), Some(0));
        let (sm, tm) = slot_machines(&mut st);
        assert_eq!(fair_subtype(&st, sm, tm), None);
    }

    #[test]
    fn divergence_can_hide_behind_finite_root() {
        // S = q!{a: end!, b: Sdiv}, T = q!{a: end!, b: Tdiv} where the inner
        // pair diverges: the root weight is finite through the shared `a`
        // exit, but fair subtyping must fail on the hidden pair.
        let mut st = TypeStore::new();
        let end = st.end(Polarity::Out);
        let sdiv = buyer_s(&mut st);
        let tdiv = buyer_u(&mut st);
        assert_eq!(fair_subtype(&st, sdiv, tdiv), None);
        let s = st
            .tags(
                role("q"),
                Polarity::Out,
                vec![(tag("a"), end), (tag("b"), sdiv)],
            )
            .unwrap();
        let t = st
            .tags(
                role("q"),
                Polarity::Out,
                vec![(tag("a"), end), (tag("b"), tdiv)],
            )
            .unwrap();
        let w = subtype_weight(&st, s, t).unwrap();
        assert!(w.is_finite());
        assert_eq!(fair_subtype(&st, s, t), None);
    }

    #[test]
    fn closure_size_is_bounded_by_product() {
        let mut st = TypeStore::new();
        let s = buyer_s(&mut st);
        let t = buyer_t(&mut st);
        let cl = pair_closure(&st, s, t);
        assert!(cl.pairs.len() <= st.subterms(s).len() * st.subterms(t).len());
    }

    #[test]
    fn discriminator_buyer_vs_never_pays() {
        let mut st = TypeStore::new();
        let s = buyer_s(&mut st);
        let u = buyer_u(&mut st);
        let disc = discriminator(&mut st, &role("p"), s, u).unwrap();
        let with_s = disc.join(&SessionMap::singleton(role("p"), s)).unwrap();
        let with_u = disc.join(&SessionMap::singleton(role("p"), u)).unwrap();
        assert!(typelts::coherent(&mut st, &with_s, DEFAULT_STATE_CAP).unwrap());
        assert!(!typelts::coherent(&mut st, &with_u, DEFAULT_STATE_CAP).unwrap());
    }

    #[test]
    fn discriminator_slot_machine() {
        let mut st = TypeStore::new();
        let (s, t) = slot_machines(&mut st);
        let disc = discriminator(&mut st, &role("m"), s, t).unwrap();
        let with_s = disc.join(&SessionMap::singleton(role("m"), s)).unwrap();
        let with_t = disc.join(&SessionMap::singleton(role("m"), t)).unwrap();
        assert!(typelts::coherent(&mut st, &with_s, DEFAULT_STATE_CAP).unwrap());
        assert!(!typelts::coherent(&mut st, &with_t, DEFAULT_STATE_CAP).unwrap());
    }

    #[test]
    fn discriminator_precondition_failures() {
        let mut st = TypeStore::new();
        let s = buyer_s(&mut st);
        assert!(matches!(
            discriminator(&mut st, &role("p"), s, s),
            Err(SubtypeError::NotDivergent)
        ));
        // Divergent but unbounded left side: S = q!{a: S, b: S}, T = q!a.T.
        let s_unb = {
            let mut b = GraphBuilder::new();
            let slot = b.reserve();
            b.set(
                slot,
                RawNode::Tags {
                    role: role("q"),
                    polarity: Polarity::Out,
                    branches: vec![
                        (tag("a"), RawRef::Raw(slot)),
                        (tag("b"), RawRef::Raw(slot)),
                    ],
                },
            );
            b.commit(&mut st, RawRef::Raw(slot)).unwrap()
        };
        let t_unb = {
            let mut b = GraphBuilder::new();
            let slot = b.reserve();
            b.set(
                slot,
                RawNode::Tags {
                    role: role("q"),
                    polarity: Polarity::Out,
                    branches: vec![(tag("a"), RawRef::Raw(slot))],
                },
            );
            b.commit(&mut st, RawRef::Raw(slot)).unwrap()
        };
        assert_eq!(subtype_weight(&mut st, s_unb, t_unb).unwrap(), Cost::Inf);
        assert!(matches!(
            discriminator(&mut st, &role("p"), s_unb, t_unb),
            Err(SubtypeError::Unbounded)
        ));
    }

    #[test]
    fn weight_table_is_a_valid_annotation_assignment() {
        // Rule-local validation: inputs and shared outputs need premises ≤ n,
        // strict outputs need some premise < n.
        let mut st = TypeStore::new();
        let s = buyer_s(&mut st);
        let t = buyer_t(&mut st);
        let cl = pair_closure(&st, s, t);
        let w = weight_table(&cl);
        for ix in 0..cl.pairs.len() {
            match cl.shapes[ix] {
                PairShape::End => assert_eq!(w[ix], Cost::ZERO),
                PairShape::TagIn => {
                    for &p in &cl.premises[ix] {
                        assert!(w[p] <= w[ix]);
                    }
                }
                PairShape::TagOutShared => {
                    let strict_ok = cl.premises[ix].iter().any(|&p| w[p] < w[ix]);
                    let lax_ok = cl.premises[ix].iter().all(|&p| w[p] <= w[ix]);
                    assert!(strict_ok || lax_ok);
                }
                PairShape::TagOutStrict => {
                    if w[ix].is_finite() {
                        assert!(cl.premises[ix].iter().any(|&p| w[p] < w[ix]));
                    }
                }
                PairShape::Channel => assert_eq!(w[cl.premises[ix][0]], w[ix]),
                PairShape::Mismatch => unreachable!(),
            }
        }
    }
}

//! Generic finite reduction-system analysis: reachability, weak termination,
//! fair termination and shortest termination distance.
//!
//! Fair termination is decided through its reachability characterization
//! (every reachable state is weakly terminating); maximal fair runs are never
//! enumerated.

use std::collections::{HashMap, VecDeque};
use std::hash::Hash;

/// Default bound on the number of canonical states explored per analysis.
pub const DEFAULT_STATE_CAP: usize = 1_000_000;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
#[error("state cap exceeded ({cap} canonical states)")]
pub struct StateCapExceeded {
    pub cap: usize,
}

/// A reduction system: states with a deterministic successor enumeration and
/// a hashable canonical key.
pub trait System {
    type State: Clone;
    type Key: Eq + Hash + Ord + Clone;

    fn key(&self, state: &Self::State) -> Self::Key;
    fn successors(&self, state: &Self::State) -> Vec<Self::State>;
}

/// The reachable fragment of a system, explored breadth-first from a root.
pub struct Exploration<St, K> {
    pub states: Vec<St>,
    pub keys: HashMap<K, usize>,
    pub succs: Vec<Vec<usize>>,
}

impl<St, K: Eq + Hash> Exploration<St, K> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn is_terminal(&self, ix: usize) -> bool {
        self.succs[ix].is_empty()
    }

    fn reverse_edges(&self) -> Vec<Vec<usize>> {
        let mut preds = vec![Vec::new(); self.len()];
        for (from, outs) in self.succs.iter().enumerate() {
            for &to in outs {
                preds[to].push(from);
            }
        }
        preds
    }

    /// Backward closure of `seeds` under the edge relation.
    pub fn backward_closure(&self, seeds: impl IntoIterator<Item = usize>) -> Vec<bool> {
        let preds = self.reverse_edges();
        let mut inset = vec![false; self.len()];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for s in seeds {
            if !inset[s] {
                inset[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(ix) = queue.pop_front() {
            for &p in &preds[ix] {
                if !inset[p] {
                    inset[p] = true;
                    queue.push_back(p);
                }
            }
        }
        inset
    }

    /// Shortest distance (in steps) from the root to any state in `goal`.
    pub fn distance_to(&self, goal: impl Fn(usize) -> bool) -> Option<usize> {
        let mut dist: Vec<Option<usize>> = vec![None; self.len()];
        let mut queue = VecDeque::new();
        dist[0] = Some(0);
        queue.push_back(0usize);
        while let Some(ix) = queue.pop_front() {
            let d = dist[ix].unwrap();
            if goal(ix) {
                return Some(d);
            }
            for &n in &self.succs[ix] {
                if dist[n].is_none() {
                    dist[n] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        None
    }

    /// GraphViz DOT rendering of the explored graph.
    pub fn to_dot(&self, label: impl Fn(usize) -> String) -> String {
        let mut out = String::from("digraph reduction {\n");
        for ix in 0..self.len() {
            out.push_str(&format!("  n{} [label=\"{}\"];\n", ix, label(ix)));
        }
        for (from, outs) in self.succs.iter().enumerate() {
            for &to in outs {
                out.push_str(&format!("  n{from} -> n{to};\n"));
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Breadth-first exploration up to `cap` canonical states.
pub fn explore<S: System>(
    sys: &S,
    init: S::State,
    cap: usize,
) -> Result<Exploration<S::State, S::Key>, StateCapExceeded> {
    let mut states = Vec::new();
    let mut keys: HashMap<S::Key, usize> = HashMap::new();
    let mut succs: Vec<Vec<usize>> = Vec::new();
    let mut queue = VecDeque::new();

    keys.insert(sys.key(&init), 0);
    states.push(init);
    succs.push(Vec::new());
    queue.push_back(0usize);

    while let Some(ix) = queue.pop_front() {
        let nexts = sys.successors(&states[ix]);
        let mut out = Vec::with_capacity(nexts.len());
        for n in nexts {
            let k = sys.key(&n);
            let tgt = match keys.get(&k) {
                Some(&t) => t,
                None => {
                    if states.len() >= cap {
                        return Err(StateCapExceeded { cap });
                    }
                    let t = states.len();
                    keys.insert(k, t);
                    states.push(n);
                    succs.push(Vec::new());
                    queue.push_back(t);
                    t
                }
            };
            out.push(tgt);
        }
        succs[ix] = out;
    }
    Ok(Exploration { states, keys, succs })
}

/// Exact reachable set from `init`.
pub fn reachable<S: System>(
    sys: &S,
    init: S::State,
    cap: usize,
) -> Result<Vec<S::State>, StateCapExceeded> {
    Ok(explore(sys, init, cap)?.states)
}

/// True iff some state without successors is reachable.
pub fn weakly_terminating<S: System>(
    sys: &S,
    init: S::State,
    cap: usize,
) -> Result<bool, StateCapExceeded> {
    let g = explore(sys, init, cap)?;
    Ok((0..g.len()).any(|ix| g.is_terminal(ix)))
}

/// True iff every reachable state is weakly terminating; by the reachability
/// characterization this is exactly fair termination.
pub fn fairly_terminating<S: System>(
    sys: &S,
    init: S::State,
    cap: usize,
) -> Result<bool, StateCapExceeded> {
    let g = explore(sys, init, cap)?;
    let terminal: Vec<usize> = (0..g.len()).filter(|&ix| g.is_terminal(ix)).collect();
    let wt = g.backward_closure(terminal);
    Ok(wt.iter().all(|&b| b))
}

/// Length of the shortest path from `init` to a terminal state; `None` = ∞.
pub fn termination_distance<S: System>(
    sys: &S,
    init: S::State,
    cap: usize,
) -> Result<Option<usize>, StateCapExceeded> {
    let g = explore(sys, init, cap)?;
    Ok(g.distance_to(|ix| g.is_terminal(ix)))
}

/// A small closed-form system over explicit edges, handy for tests and for
/// callers that have already materialized their graph.
pub struct TableSystem {
    pub edges: Vec<Vec<usize>>,
}

impl System for TableSystem {
    type State = usize;
    type Key = usize;

    fn key(&self, s: &usize) -> usize {
        *s
    }

    fn successors(&self, s: &usize) -> Vec<usize> {
        self.edges[*s].clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(edges: Vec<Vec<usize>>) -> TableSystem {
        TableSystem { edges }
    }

    #[test]
    fn two_state_example() {
        // {A -> A, A -> B}: reachable {A, B}, weakly and fairly terminating.
        let s = sys(vec![vec![0, 1], vec![]]);
        assert_eq!(reachable(&s, 0, 100).unwrap().len(), 2);
        assert!(weakly_terminating(&s, 0, 100).unwrap());
        assert!(fairly_terminating(&s, 0, 100).unwrap());
    }

    #[test]
    fn self_loop_never_terminates() {
        let s = sys(vec![vec![0]]);
        assert!(!weakly_terminating(&s, 0, 100).unwrap());
        assert!(!fairly_terminating(&s, 0, 100).unwrap());
        assert_eq!(termination_distance(&s, 0, 100).unwrap(), None);
    }

    #[test]
    fn terminal_state() {
        let s = sys(vec![vec![]]);
        assert_eq!(reachable(&s, 0, 100).unwrap().len(), 1);
        assert!(weakly_terminating(&s, 0, 100).unwrap());
        assert_eq!(termination_distance(&s, 0, 100).unwrap(), Some(0));
    }

    #[test]
    fn three_state_chain() {
        let s = sys(vec![vec![1], vec![2], vec![]]);
        assert_eq!(reachable(&s, 0, 100).unwrap().len(), 3);
        assert_eq!(termination_distance(&s, 0, 100).unwrap(), Some(2));
    }

    #[test]
    fn cycle_with_exit_is_fairly_terminating() {
        // {A -> B, B -> A, A -> T}
        let s = sys(vec![vec![1, 2], vec![0], vec![]]);
        assert!(fairly_terminating(&s, 0, 100).unwrap());
    }

    #[test]
    fn cap_is_enforced() {
        // Infinite counter system.
        struct Counter;
        impl System for Counter {
            type State = u64;
            type Key = u64;
            fn key(&self, s: &u64) -> u64 {
                *s
            }
            fn successors(&self, s: &u64) -> Vec<u64> {
                vec![s + 1]
            }
        }
        let err = explore(&Counter, 0, 50).err().expect("cap exceeded");
        assert_eq!(err.cap, 50);
    }

    #[test]
    fn fair_implies_weak_and_definitional_crosscheck() {
        let cases = vec![
            sys(vec![vec![0, 1], vec![]]),
            sys(vec![vec![0]]),
            sys(vec![vec![1, 2], vec![0], vec![]]),
            sys(vec![vec![1], vec![1]]),
            sys(vec![vec![1, 3], vec![2], vec![1], vec![]]),
        ];
        for s in &cases {
            let fair = fairly_terminating(s, 0, 1000).unwrap();
            let weak = weakly_terminating(s, 0, 1000).unwrap();
            if fair {
                assert!(weak);
            }
            // Definitional cross-check: fair iff all reachable states weakly
            // terminate.
            let all_weak = reachable(s, 0, 1000)
                .unwrap()
                .into_iter()
                .all(|c| weakly_terminating(s, c, 1000).unwrap());
            assert_eq!(fair, all_weak);
            // Distance finite iff weakly terminating.
            assert_eq!(
                termination_distance(s, 0, 1000).unwrap().is_some(),
                weak
            );
        }
    }
}

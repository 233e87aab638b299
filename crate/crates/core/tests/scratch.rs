mod common;
use common::*;
use fmst_core::runtime::Runtime;
use fmst_core::syntax::ProcName;
use std::collections::{HashMap, HashSet, VecDeque};
use std::time::Instant;

fn probe(stem: &str, cap: usize) {
    let prog = corpus_program(stem);
    let entry = ProcName::new("Main");
    let mut rt = Runtime::new(&prog);
    let init = rt.initial_soup(&entry).unwrap();
    let t0 = Instant::now();
    let mut keys: HashMap<String, usize> = HashMap::new();
    let mut states = vec![init.clone()];
    let mut queue: VecDeque<usize> = VecDeque::new();
    keys.insert(rt.canonical_key(&init), 0);
    queue.push_back(0);
    let mut processed = 0usize;
    while let Some(ix) = queue.pop_front() {
        processed += 1;
        if states.len() >= cap { break; }
        if processed % 2000 == 0 { eprintln!("  [{stem}] processed {processed} states {} elapsed {:?}", states.len(), t0.elapsed()); }
        let reds = rt.enabled_reductions(&states[ix].clone(), false).unwrap();
        for red in reds {
            let k = rt.canonical_key(&red.next);
            if !keys.contains_key(&k) {
                keys.insert(k, states.len());
                states.push(red.next);
                queue.push_back(states.len() - 1);
            }
        }
    }
    eprintln!("[{stem}] explored {} states in {:?}", states.len(), t0.elapsed());
    let t0 = Instant::now();
    let mut verified: HashSet<String> = HashSet::new();
    for (i, s) in states.iter().enumerate() {
        let mut soup = s.clone();
        let mut path = vec![];
        let mut steps = 0;
        loop {
            let k = rt.canonical_key(&soup);
            if soup.terminated() || verified.contains(&k) { verified.insert(k); verified.extend(path); break; }
            path.push(k);
            steps += 1;
            if steps > 10_000 { panic!("[{stem}] state {i}: guided walk too long"); }
            let red = rt.guided_step(&soup, false).unwrap().expect("step");
            soup = red.next;
        }
        if i % 2000 == 0 && i > 0 { eprintln!("  [{stem}] verified {i} elapsed {:?}", t0.elapsed()); }
    }
    eprintln!("[{stem}] verified all in {:?}", t0.elapsed());
}

#[test]
fn probe_programs() {
    probe("pms", 100_000);
}

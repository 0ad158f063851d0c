#![allow(dead_code)]

use csp_dichotomy::relcore::{Instance, Signature, Structure, Tuple};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn t_unary() -> Structure {
    Structure::from_relations(2, [("R0", 1, vec![vec![0]]), ("R1", 1, vec![vec![1]])]).unwrap()
}

pub fn t_imp() -> Structure {
    Structure::from_relations(
        2,
        [
            ("Leq", 2, vec![vec![0, 0], vec![0, 1], vec![1, 1]]),
            ("R0", 1, vec![vec![0]]),
            ("R1", 1, vec![vec![1]]),
        ],
    )
    .unwrap()
}

/// `{R1(x), R0(y), Leq(x, y)}`: unsatisfiable over T_IMP.
pub fn t_imp_unsat() -> Instance<Tuple> {
    let t = t_imp();
    let mut i = Instance::new(["x", "y"]);
    i.constrain(&t, "R1", &["x"]).unwrap();
    i.constrain(&t, "R0", &["y"]).unwrap();
    i.constrain(&t, "Leq", &["x", "y"]).unwrap();
    i
}

/// `{R0(x), Leq(y, x)}`: satisfiable only by x = y = 0.
pub fn t_imp_sat() -> Instance<Tuple> {
    let t = t_imp();
    let mut i = Instance::new(["x", "y"]);
    i.constrain(&t, "R0", &["x"]).unwrap();
    i.constrain(&t, "Leq", &["y", "x"]).unwrap();
    i
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// A random structure over `sig` where every tuple is present with
/// probability `density`.
pub fn random_structure(rng: &mut StdRng, sig: &Signature, n: u32, density: f64) -> Structure {
    let extents = sig
        .relations
        .iter()
        .map(|r| {
            csp_dichotomy::relcore::all_tuples(n, r.arity)
                .into_iter()
                .filter(|_| rng.gen_bool(density))
                .collect()
        })
        .collect();
    Structure::new(sig.clone(), n, extents).unwrap()
}

/// A random instance using the named relations of `sig`.
pub fn random_named_instance<A: csp_dichotomy::algebra::Algebra>(
    rng: &mut StdRng,
    alg: &A,
    nvars: usize,
    nconstraints: usize,
) -> Instance<A::Point> {
    let vars: Vec<String> = (0..nvars).map(|i| format!("v{i}")).collect();
    let mut inst = Instance::new(vars.clone());
    let symbols = alg.relation_symbols();
    for _ in 0..nconstraints {
        let (name, arity) = &symbols[rng.gen_range(0..symbols.len())];
        let scope: Vec<&str> = (0..*arity).map(|_| vars[rng.gen_range(0..nvars)].as_str()).collect();
        inst.constrain(alg, name, &scope).unwrap();
    }
    inst
}

/// Every template on `n` elements with the constants `c0..` plus the given
/// binary relations, one per combination of extents.
pub fn constant_templates(n: u32, binary: usize) -> Vec<Structure> {
    let pairs = csp_dichotomy::relcore::all_tuples(n, 2);
    let total = 1u64 << (pairs.len() * binary);
    let mut out = Vec::new();
    for mask in 0..total {
        let mut rels: Vec<(String, usize, Vec<Vec<u32>>)> =
            (0..n).map(|a| (format!("c{a}"), 1, vec![vec![a]])).collect();
        for b in 0..binary {
            let ext = pairs
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> (b * pairs.len() + i) & 1 == 1)
                .map(|(_, t)| t.to_vec())
                .collect();
            rels.push((format!("B{b}"), 2, ext));
        }
        out.push(Structure::from_relations(n, rels).unwrap());
    }
    out
}

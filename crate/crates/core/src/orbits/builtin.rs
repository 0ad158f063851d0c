//! Built-in orbit templates. Bounds are generated from a membership test for
//! the intended age rather than listed by hand.

use std::collections::HashSet;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::relcore::{all_tuples, Elem, Signature, Structure, Tuple};

use super::OrbitTemplate;

pub const BUILTIN_NAMES: [&str; 4] = ["QLT", "RGEN", "RGEN_PHI", "TFG"];

/// The minimal finite structures on at most `l` elements rejected by
/// `member`, up to isomorphism. `member` must be closed under induced
/// substructures.
pub fn minimal_bounds(base: &Signature, l: usize, member: impl Fn(&Structure) -> bool) -> Vec<Structure> {
    let mut members = vec![Structure::empty(base.clone(), 0)];
    let mut bounds: Vec<Structure> = Vec::new();
    let mut seen = HashSet::new();
    for b in 1..=l as u32 {
        let e = b - 1;
        let new_tuples: Vec<(usize, Tuple)> = base
            .relations
            .iter()
            .enumerate()
            .flat_map(|(r, sym)| {
                all_tuples(b, sym.arity)
                    .into_iter()
                    .filter(|t| t.contains(&e))
                    .map(move |t| (r, t))
            })
            .collect();
        let mut next = Vec::new();
        for parent in &members {
            for mask in 0u64..(1u64 << new_tuples.len()) {
                let mut extents: Vec<Vec<Tuple>> = parent.extents().to_vec();
                for (i, (r, t)) in new_tuples.iter().enumerate() {
                    if mask >> i & 1 == 1 {
                        extents[*r].push(t.clone());
                    }
                }
                let s = Structure::new(base.clone(), b, extents).expect("tuples in range");
                if member(&s) {
                    next.push(s);
                    continue;
                }
                let proper_ok = (0..b).all(|drop| {
                    let keep: Vec<Elem> = (0..b).filter(|&x| x != drop).collect();
                    member(&s.induced(&keep))
                });
                if proper_ok {
                    let c = s.canonical_form();
                    if seen.insert(c.clone()) {
                        bounds.push(c);
                    }
                }
            }
        }
        members = next;
    }
    bounds
}

fn strict_linear_order(s: &Structure) -> bool {
    let n = s.domain_size();
    let lt = |a: Elem, b: Elem| s.contains(0, &[a, b]);
    (0..n).all(|a| !lt(a, a))
        && (0..n).all(|a| (0..n).all(|b| a == b || lt(a, b) != lt(b, a)))
        && (0..n).all(|a| (0..n).all(|b| (0..n).all(|c| !(lt(a, b) && lt(b, c)) || lt(a, c))))
}

/// Loopless graph with `E` the edges and `N` the non-edges.
fn graph_with_complement(s: &Structure) -> bool {
    let n = s.domain_size();
    let e = |a: Elem, b: Elem| s.contains(0, &[a, b]);
    let ne = |a: Elem, b: Elem| s.contains(1, &[a, b]);
    (0..n).all(|a| !e(a, a) && !ne(a, a))
        && (0..n).all(|a| {
            (0..n).all(|b| a == b || (e(a, b) == e(b, a) && ne(a, b) == ne(b, a) && e(a, b) != ne(a, b)))
        })
}

fn triangle_free_graph(s: &Structure) -> bool {
    let n = s.domain_size();
    let e = |a: Elem, b: Elem| s.contains(0, &[a, b]);
    graph_with_complement(s)
        && (0..n).all(|a| (0..n).all(|b| (0..n).all(|c| !(e(a, b) && e(b, c) && e(a, c)))))
}

fn qlt() -> OrbitTemplate {
    let base = Signature::new([("Lt", 2)]).expect("valid signature");
    let bounds = minimal_bounds(&base, 3, strict_linear_order);
    OrbitTemplate::new("QLT", base, bounds, 2, 3, Vec::new()).expect("valid built-in")
}

fn graph_base() -> Signature {
    Signature::new([("E", 2), ("N", 2)]).expect("valid signature")
}

fn rgen() -> OrbitTemplate {
    let base = graph_base();
    let bounds = minimal_bounds(&base, 2, graph_with_complement);
    OrbitTemplate::new("RGEN", base, bounds, 2, 2, Vec::new()).expect("valid built-in")
}

fn rgen_phi() -> OrbitTemplate {
    let plain = rgen();
    let phi: Vec<_> = plain
        .enumerate_atomic_types(4)
        .into_iter()
        .filter(|t| {
            let p = t.pattern();
            p[0] != p[1]
                && p[2] != p[3]
                && ((t.holds_at(0, &[0, 1]) && t.holds_at(0, &[2, 3])) || (t.holds_at(1, &[0, 1]) && t.holds_at(1, &[2, 3])))
        })
        .collect();
    OrbitTemplate::new(
        "RGEN_PHI",
        plain.base().clone(),
        plain.bounds().to_vec(),
        2,
        2,
        vec![("Phi".to_string(), 4, phi)],
    )
    .expect("valid built-in")
}

fn tfg() -> OrbitTemplate {
    let base = graph_base();
    let bounds = minimal_bounds(&base, 3, triangle_free_graph);
    OrbitTemplate::new("TFG", base, bounds, 2, 3, Vec::new()).expect("valid built-in")
}

/// A built-in template by name (case-insensitive, `-` accepted for `_`).
pub fn builtin(name: &str) -> Result<OrbitTemplate> {
    static QLT: OnceLock<OrbitTemplate> = OnceLock::new();
    static RGEN: OnceLock<OrbitTemplate> = OnceLock::new();
    static RGEN_PHI: OnceLock<OrbitTemplate> = OnceLock::new();
    static TFG: OnceLock<OrbitTemplate> = OnceLock::new();
    let key = name.to_ascii_uppercase().replace('-', "_");
    let t = match key.as_str() {
        "QLT" => QLT.get_or_init(qlt),
        "RGEN" => RGEN.get_or_init(rgen),
        "RGEN_PHI" => RGEN_PHI.get_or_init(rgen_phi),
        "TFG" => TFG.get_or_init(tfg),
        _ => return Err(Error::UnknownBuiltin(name.to_string())),
    };
    Ok(t.clone())
}

mod common;

use std::collections::HashSet;

use common::*;
use csp_dichotomy::algebra::Algebra;
use csp_dichotomy::orbits::*;
use csp_dichotomy::relcore::*;
use proptest::prelude::*;
use rand::Rng;

fn named(t: &OrbitTemplate, vars: &[&str], facts: &[(&str, &[&str])]) -> Instance<u32> {
    let mut i = Instance::new(vars.iter().copied());
    for (r, scope) in facts {
        i.constrain(t, r, scope).unwrap();
    }
    i
}

fn both_modes(inst: &Instance<u32>, t: &OrbitTemplate) -> (bool, bool) {
    let a = solve_orbit(inst, t, OrbitMode::Theorem).unwrap().is_sat();
    let b = match solve_orbit(inst, t, OrbitMode::Search).unwrap() {
        OrbitVerdict::Sat(Some(w)) => {
            assert!(check_witness(inst, t, &w));
            true
        }
        OrbitVerdict::Sat(None) => panic!("search mode must return a witness"),
        OrbitVerdict::Unsat => false,
    };
    (a, b)
}

/// Named binary facts as `(relation, x, y)` over variable indices.
fn binary_facts(inst: &Instance<u32>) -> Vec<(String, usize, usize)> {
    inst.constraints
        .iter()
        .map(|c| {
            let Provenance::Relation(r) = &c.provenance else { panic!("named constraints only") };
            (r.clone(), c.scope[0], c.scope[1])
        })
        .collect()
}

/// `<` on variables is satisfiable in the rationals iff it has no cycle.
fn qlt_oracle(inst: &Instance<u32>) -> bool {
    let n = inst.variables.len();
    let mut reach = vec![vec![false; n]; n];
    for (_, a, b) in binary_facts(inst) {
        reach[a][b] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    (0..n).all(|i| !reach[i][i])
}

/// Random graph and its triangle-free relative: no loops, no pair both an
/// edge and a non-edge, and (if asked) no edge triangle.
fn graph_oracle(inst: &Instance<u32>, triangle_free: bool) -> bool {
    let n = inst.variables.len();
    let mut e = HashSet::new();
    let mut ne = HashSet::new();
    for (r, a, b) in binary_facts(inst) {
        if a == b {
            return false;
        }
        let set = if r == "E" { &mut e } else { &mut ne };
        set.insert((a, b));
        set.insert((b, a));
    }
    if e.intersection(&ne).next().is_some() {
        return false;
    }
    !(triangle_free
        && (0..n).any(|a| (0..n).any(|b| (0..n).any(|c| e.contains(&(a, b)) && e.contains(&(b, c)) && e.contains(&(a, c))))))
}

#[test]
fn type_counts() {
    let q = builtin("QLT").unwrap();
    assert_eq!(q.type_count(2), 3);
    assert_eq!(q.type_count(3), 13);
    assert_eq!(builtin("RGEN").unwrap().type_count(1), 1);
    assert_eq!(builtin("RGEN").unwrap().type_count(2), 3);
}

#[test]
fn enumerated_types_avoid_every_bound() {
    for name in BUILTIN_NAMES {
        let t = builtin(name).unwrap();
        for m in 1..=3 {
            for ty in t.enumerate_atomic_types(m) {
                assert!(realizable(&t, &ty.block_structure(t.base())), "{name} {}", ty.describe(t.base()));
            }
        }
    }
}

#[test]
fn qlt_bounds_are_the_four_small_obstacles() {
    let q = builtin("QLT").unwrap();
    let mut got: Vec<String> = q.bounds().iter().map(|b| b.canonical_form().to_string()).collect();
    got.sort();
    let mut want: Vec<String> = [
        Structure::from_relations(1, [("Lt", 2, vec![vec![0, 0]])]),
        Structure::from_relations(2, [("Lt", 2, vec![vec![0, 1], vec![1, 0]])]),
        Structure::from_relations(2, [("Lt", 2, vec![])]),
        Structure::from_relations(3, [("Lt", 2, vec![vec![0, 1], vec![1, 2], vec![2, 0]])]),
    ]
    .into_iter()
    .map(|s| s.unwrap().canonical_form().to_string())
    .collect();
    want.sort();
    assert_eq!(got, want);
}

#[test]
fn rgen_forbids_a_pair_marked_both_ways() {
    let g = builtin("RGEN").unwrap();
    let both = Structure::from_relations(2, [("E", 2, vec![vec![0, 1], vec![1, 0]]), ("N", 2, vec![vec![0, 1], vec![1, 0]])]).unwrap();
    assert!(!realizable(&g, &both));
    assert!(g.bounds().iter().any(|b| b.domain_size() == 2 && b.tuple_count() == 0));
}

#[test]
fn phi_is_nonempty_and_symmetric_under_pair_swap() {
    let p = builtin("RGEN_PHI").unwrap();
    let (arity, phi) = p.relation("Phi").unwrap();
    assert_eq!(arity, 4);
    assert!(!phi.is_empty());
    let swapped = p.orbit_project(4, &phi, &[2, 3, 0, 1]);
    assert_eq!(swapped, phi.to_vec());
}

#[test]
fn projection_and_join_examples() {
    let q = builtin("QLT").unwrap();
    let chain = q.parse_type("0 1 2 | Lt(0,1) Lt(0,2) Lt(1,2)").unwrap();
    let lt = q.parse_type("0 1 | Lt(0,1)").unwrap();
    assert_eq!(q.orbit_project(3, &[chain], &[0, 2]), vec![lt]);
    let (vars, joined) = q.orbit_join(&[0, 1], &[lt], &[1, 2], &[lt]);
    assert_eq!(vars, vec![0, 1, 2]);
    assert_eq!(joined, vec![chain]);
    assert!(q.orbit_join(&[0, 1], &[], &[1, 2], &[lt]).1.is_empty());
}

#[test]
fn injective_examples() {
    let g = builtin("RGEN").unwrap();
    let tri: &[(&str, &[&str])] = &[("E", &["a", "b"]), ("E", &["b", "c"]), ("E", &["a", "c"])];
    assert!(solve_injective(&named(&g, &["a", "b", "c"], tri), &g).unwrap().is_sat());
    let tfg = builtin("TFG").unwrap();
    assert!(!solve_injective(&named(&tfg, &["a", "b", "c"], tri), &tfg).unwrap().is_sat());
    let q = builtin("QLT").unwrap();
    let cyc: &[(&str, &[&str])] = &[("Lt", &["a", "b"]), ("Lt", &["b", "c"]), ("Lt", &["c", "a"])];
    assert!(!solve_injective(&named(&q, &["a", "b", "c"], cyc), &q).unwrap().is_sat());
    let partial: &[(&str, &[&str])] = &[("Lt", &["a", "b"])];
    assert!(solve_injective(&named(&q, &["a", "b", "c"], partial), &q).is_err());
}

#[test]
fn small_fixtures_in_both_modes() {
    let q = builtin("QLT").unwrap();
    let cyc: &[(&str, &[&str])] = &[("Lt", &["a", "b"]), ("Lt", &["b", "c"]), ("Lt", &["c", "a"])];
    assert_eq!(both_modes(&named(&q, &["a", "b", "c"], cyc), &q), (false, false));
    for name in BUILTIN_NAMES {
        let t = builtin(name).unwrap();
        assert_eq!(both_modes(&named(&t, &["a", "b"], &[]), &t), (true, true));
    }
}

#[test]
fn unknown_builtin_is_an_error() {
    assert!(builtin("NOPE").is_err());
    assert!(builtin("rgen-phi").is_ok());
}

#[test]
fn closure_adds_symmetric_facts() {
    let g = builtin("RGEN").unwrap();
    let s = closure_structure(&named(&g, &["x", "y"], &[("E", &["x", "y"])]), &g).unwrap();
    assert_eq!(s.extent("E").unwrap(), &[tuple([0, 1]), tuple([1, 0])]);
}

fn random_oracle_check(name: &str, seed: u64, oracle: impl Fn(&Instance<u32>) -> bool) {
    let t = builtin(name).unwrap();
    let mut r = rng(seed);
    for _ in 0..40 {
        let vars = r.gen_range(1..=5);
        let cons = r.gen_range(0..=7);
        let inst = random_named_instance(&mut r, &t, vars, cons);
        let (theorem, search) = both_modes(&inst, &t);
        let want = oracle(&inst);
        assert_eq!(search, want, "{name} search mode on {inst:?}");
        assert_eq!(theorem, want, "{name} theorem mode on {inst:?}");
    }
}

#[test]
fn qlt_matches_acyclicity() {
    random_oracle_check("QLT", 1, qlt_oracle);
}

#[test]
fn rgen_matches_its_oracle() {
    random_oracle_check("RGEN", 2, |i| graph_oracle(i, false));
}

#[test]
fn tfg_matches_its_oracle() {
    random_oracle_check("TFG", 3, |i| graph_oracle(i, true));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn join_then_project_stays_inside(seed in any::<u64>()) {
        let q = builtin("TFG").unwrap();
        let mut r = rng(seed);
        let all: Vec<u32> = (0..q.type_count(2) as u32).collect();
        let s1: Vec<u32> = all.iter().copied().filter(|_| r.gen_bool(0.5)).collect();
        let s2: Vec<u32> = all.iter().copied().filter(|_| r.gen_bool(0.5)).collect();
        let (vars, joined) = q.orbit_join(&[0, 1], &s1, &[1, 2], &s2);
        prop_assert_eq!(&vars, &vec![0, 1, 2]);
        let back = q.orbit_project(3, &joined, &[0, 1]);
        prop_assert!(back.iter().all(|t| s1.contains(t)));
    }

    #[test]
    fn type_text_round_trips(name_idx in 0usize..4, m in 1usize..=3) {
        let t = builtin(BUILTIN_NAMES[name_idx]).unwrap();
        for id in 0..t.type_count(m) as u32 {
            prop_assert_eq!(t.parse_type(&t.describe_type(m, id)).unwrap(), id);
        }
    }
}

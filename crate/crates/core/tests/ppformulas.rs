mod common;

use common::*;
use csp_dichotomy::algebra::Algebra;
use csp_dichotomy::orbits::builtin;
use csp_dichotomy::ppformulas::*;
use csp_dichotomy::relcore::*;
use proptest::prelude::*;

fn pp(text: &str) -> PPFormula {
    PPFormula::parse(text).unwrap()
}

fn tuples(rows: &[&[u32]]) -> Vec<Tuple> {
    rows.iter().map(|r| Tuple::from_slice(r)).collect()
}

#[test]
fn evaluation_examples() {
    let t = t_imp();
    assert_eq!(eval_pp(&pp("[x, y] Leq(x, y)"), &t).unwrap(), tuples(&[&[0, 0], &[0, 1], &[1, 1]]));
    assert_eq!(
        eval_pp(&pp("[x, z] Leq(x, y) & Leq(y, z)"), &t).unwrap(),
        tuples(&[&[0, 0], &[0, 1], &[1, 1]])
    );
    assert!(eval_pp(&pp("[x] R0(x) & R1(x)"), &t).unwrap().is_empty());
    assert!(eval_pp(&pp("[x] Nope(x)"), &t).is_err());
}

#[test]
fn isolated_free_variable_ranges_over_everything() {
    let t = t_imp();
    let rows = eval_pp(&pp("[x, y] R1(y)"), &t).unwrap();
    assert_eq!(rows, tuples(&[&[0, 1], &[1, 1]]));
}

#[test]
fn text_form_round_trips() {
    for text in ["[x, y] Leq(x, y) & Leq(y, x)", "[x] true", "[] R0(a)"] {
        let f = pp(text);
        assert_eq!(pp(&f.to_string()), f);
    }
}

#[test]
fn projection_examples() {
    let rel = tuples(&[&[0, 1], &[1, 1]]);
    assert_eq!(project(&rel, &[1]).unwrap(), tuples(&[&[1]]));
    let leq = t_imp().extent("Leq").unwrap().to_vec();
    assert_eq!(project(&leq, &[0]).unwrap(), tuples(&[&[0], &[1]]));
    assert!(project(&[], &[0]).unwrap().is_empty());
    assert!(project(&rel, &[2]).is_err());
}

#[test]
fn tree_validation_examples() {
    let leaf = TreeFormula::leaf(vec!["x".into()], Atom::new("Leq", ["x", "y"]));
    assert!(validate_tree(&leaf, 1));
    let bad = TreeFormula {
        root: vec!["x".into()],
        atom: Atom::new("Leq", ["x", "y"]),
        children: vec![
            TreeFormula::leaf(vec!["y".into()], Atom::new("Leq", ["y", "z"])),
            TreeFormula::leaf(vec!["y".into()], Atom::new("Leq", ["z", "y"])),
        ],
    };
    assert!(!validate_tree(&bad, 1));
    let outside_root = TreeFormula::leaf(vec!["w".into()], Atom::new("Leq", ["x", "y"]));
    assert!(!validate_tree(&outside_root, 1));
}

#[test]
fn canonical_structure_examples() {
    let s = canonical_structure(&pp("[x] R0(x) & R1(x)"));
    assert_eq!(s.domain_size(), 1);
    assert_eq!(s.tuple_count(), 2);
    let over = canonical_structure_over(&pp("[x] R0(x) & R1(x)"), t_unary().signature()).unwrap();
    assert_eq!(over, Structure::from_relations(1, [("R0", 1, vec![vec![0]]), ("R1", 1, vec![vec![0]])]).unwrap());
    let chain = canonical_structure(&pp("[] Leq(x, y) & Leq(y, z)"));
    assert_eq!(chain.domain_size(), 3);
    assert_eq!(chain.extent("Leq").unwrap(), &[tuple([0, 1]), tuple([1, 2])]);
    let lone = canonical_structure(&pp("[x] true"));
    assert_eq!((lone.domain_size(), lone.tuple_count()), (1, 0));
}

#[test]
fn trimming_examples() {
    let t = t_imp();
    let repeated = TreeFormula {
        root: vec!["x".into()],
        atom: Atom::new("Leq", ["x", "y"]),
        children: vec![TreeFormula::leaf(vec!["x".into(), "y".into()], Atom::new("Leq", ["x", "y"]))],
    };
    assert_eq!(trim_minimal(&repeated, &t).unwrap().size(), 1);

    let unsat = TreeFormula {
        root: vec!["x".into()],
        atom: Atom::new("Leq", ["x", "y"]),
        children: vec![
            TreeFormula::leaf(vec!["x".into()], Atom::new("R1", ["x"])),
            TreeFormula::leaf(vec!["y".into()], Atom::new("R0", ["y"])),
        ],
    };
    let trimmed = trim_minimal(&unsat, &t).unwrap();
    assert_eq!(trimmed.size(), 3);
    assert!(root_projection(&trimmed, &t, &Default::default()).unwrap().is_empty());

    let single = TreeFormula::leaf(vec!["x".into()], Atom::new("R0", ["x"]));
    assert_eq!(trim_minimal(&single, &t).unwrap(), single);
}

#[test]
fn orbit_evaluation_projects_types() {
    let q = builtin("QLT").unwrap();
    let lt = eval_pp(&pp("[x, z] Lt(x, y) & Lt(y, z)"), &q).unwrap();
    assert_eq!(lt, q.relation("Lt").unwrap().1.into_owned());
}

#[test]
fn bounds_follow_their_formulas() {
    assert_eq!(TheoreticalBounds::finite(2).d, Some(34));
    let b = TheoreticalBounds::orbit(3, 2);
    assert_eq!((b.l, b.z, b.p, b.m), (Some(8), Some(393), Some(154_449), Some(19_923_922)));
    assert_eq!(TheoreticalBounds::orbit(200, 2).l, None);
}

fn arb_formula() -> impl Strategy<Value = PPFormula> {
    let atom = (0usize..3, 0usize..4, 0usize..4).prop_map(|(r, a, b)| {
        let vars = ["x", "y", "z", "w"];
        match r {
            0 => Atom::new("Leq", [vars[a], vars[b]]),
            1 => Atom::new("R0", [vars[a]]),
            _ => Atom::new("R1", [vars[a]]),
        }
    });
    proptest::collection::vec(atom, 0..=5).prop_map(|atoms| PPFormula::new(atoms, ["x", "y"]))
}

proptest! {
    #[test]
    fn adding_an_atom_never_grows_the_relation(f in arb_formula(), g in arb_formula()) {
        let t = t_imp();
        let base = eval_pp(&f, &t).unwrap();
        let mut h = f.clone();
        h.atoms.extend(g.atoms.iter().take(1).cloned());
        let more = eval_pp(&h, &t).unwrap();
        prop_assert!(more.iter().all(|r| base.contains(r)));
    }

    #[test]
    fn canonical_structure_maps_iff_satisfiable(f in arb_formula()) {
        let t = t_imp();
        let s = canonical_structure_over(&f, t.signature()).unwrap();
        prop_assert_eq!(find_homomorphism(&s, &t).unwrap().is_some(), !eval_pp(&f, &t).unwrap().is_empty());
    }

    #[test]
    fn evaluation_matches_assignment_enumeration(f in arb_formula()) {
        let t = t_imp();
        let vars = f.vars();
        let mut expected: Vec<Tuple> = all_tuples(2, vars.len())
            .into_iter()
            .filter(|vals| {
                f.atoms.iter().all(|a| {
                    let args: Vec<u32> = a.args.iter().map(|x| vals[vars.iter().position(|v| v == x).unwrap()]).collect();
                    t.extent(&a.relation).unwrap().iter().any(|row| row[..] == args[..])
                })
            })
            .map(|vals| f.free.iter().map(|x| vals[vars.iter().position(|v| v == x).unwrap()]).collect())
            .collect();
        expected.sort();
        expected.dedup();
        prop_assert_eq!(eval_pp(&f, &t).unwrap(), expected);
    }
}

mod common;

use std::collections::HashSet;

use common::*;
use csp_dichotomy::algebra::Algebra;
use csp_dichotomy::minimality::*;
use csp_dichotomy::orbits::{builtin, OrbitTemplate};
use csp_dichotomy::ppformulas::{eval_pp, root_projection, validate_tree};
use csp_dichotomy::relcore::*;
use proptest::prelude::*;

fn qlt_cycle(q: &OrbitTemplate) -> Instance<u32> {
    let mut i = Instance::new(["a", "b", "c"]);
    i.constrain(q, "Lt", &["a", "b"]).unwrap();
    i.constrain(q, "Lt", &["b", "c"]).unwrap();
    i.constrain(q, "Lt", &["c", "a"]).unwrap();
    i
}

#[test]
fn sat_example_prunes_to_zero() {
    let t = t_imp();
    let inst = t_imp_sat();
    let dm = one_minimality(&inst, &t).unwrap();
    assert_eq!(dm.domain(&[0]).unwrap(), &[tuple([0])]);
    assert_eq!(dm.domain(&[1]).unwrap(), &[tuple([0])]);
    assert!(!dm.log.steps.is_empty());
    let filtered = apply_domains(&inst, &dm, &t);
    assert_eq!(filtered.constraints[1].extent, vec![tuple([0, 0])]);
    assert_eq!(filtered.constraints[1].provenance, Provenance::Derived);
}

#[test]
fn unsat_example_empties_a_domain() {
    let t = t_imp();
    let dm = one_minimality(&t_imp_unsat(), &t).unwrap();
    assert!(dm.is_trivial());
    assert!(dm.domain(&[0]).unwrap().is_empty());
    assert!(apply_domains(&t_imp_unsat(), &dm, &t).is_trivial());
}

#[test]
fn single_constraint_needs_no_pruning() {
    let t = t_imp();
    let mut inst = Instance::new(["x"]);
    inst.constrain(&t, "R0", &["x"]).unwrap();
    let dm = one_minimality(&inst, &t).unwrap();
    assert_eq!(dm.domain(&[0]).unwrap(), &[tuple([0])]);
    assert!(dm.log.steps.is_empty());
    assert_eq!(apply_domains(&inst, &dm, &t), inst);
    let tree = derivation_to_tree(&dm, &[0], None, &inst).unwrap();
    assert_eq!(tree.size(), 1);
}

#[test]
fn unscoped_variable_is_an_error() {
    let t = t_imp();
    let mut inst = t_imp_sat();
    inst.var_or_insert("lonely");
    assert!(one_minimality(&inst, &t).is_err());
}

#[test]
fn build_imax_adds_missing_full_constraints() {
    let t = t_imp();
    let mut inst = Instance::new(["a", "b", "c"]);
    inst.constrain(&t, "Leq", &["a", "b"]).unwrap();
    let out = build_imax(&inst, &t, 2, 2);
    assert_eq!(out.constraints.iter().filter(|c| c.provenance == Provenance::Full).count(), 3);
    let again = build_imax(&out, &t, 2, 2);
    assert_eq!(again.constraints.len(), out.constraints.len());

    let mut two = Instance::new(["a", "b"]);
    two.constrain(&t, "Leq", &["a", "b"]).unwrap();
    let padded = build_imax(&two, &t, 2, 3);
    let full: Vec<_> = padded.constraints.iter().filter(|c| c.provenance == Provenance::Full).collect();
    assert_eq!(full.len(), 1);
    assert_eq!(full[0].scope, vec![0, 1]);
    assert_eq!(solutions_brute(&padded, &t).unwrap(), solutions_brute(&two, &t).unwrap());
}

#[test]
fn width_one_algorithm_two_matches_algorithm_one() {
    let t = t_imp();
    for inst in [t_imp_sat(), t_imp_unsat()] {
        let a = one_minimality(&inst, &t).unwrap();
        let b = kl_minimality(&build_imax(&inst, &t, 1, 1), &t, 1, 1).unwrap();
        assert_eq!(a.sets, b.sets);
        assert_eq!(a.domains, b.domains);
    }
}

#[test]
fn cycle_in_the_rationals_is_refuted() {
    let q = builtin("QLT").unwrap();
    let inst = build_imax(&qlt_cycle(&q), &q, 2, 3);
    let dm = kl_minimality(&inst, &q, 2, 3).unwrap();
    assert!(dm.is_trivial());
    let tree = derivation_to_tree(&dm, &[0, 2], None, &inst).unwrap();
    assert!(validate_tree(&tree, 2));
    let extra = certificate_relations(&inst);
    assert!(root_projection(&tree, &q, &extra).unwrap().is_empty());
}

#[test]
fn single_edge_is_already_minimal() {
    let g = builtin("RGEN").unwrap();
    let mut inst = Instance::new(["x", "y"]);
    inst.constrain(&g, "E", &["x", "y"]).unwrap();
    let inst = build_imax(&inst, &g, 2, 2);
    let dm = kl_minimality_with(&inst, &g, 2, 2, MinimalityOptions::default()).unwrap();
    assert!(!dm.is_trivial());
    let e = g.relation("E").unwrap().1.into_owned();
    assert_eq!(dm.domain(&[0, 1]).unwrap(), &e[..]);
}

/// Every logged version of every set turns into a valid tree whose root
/// projection is the logged extent.
fn check_certificates<A: Algebra>(inst: &Instance<A::Point>, dm: &DomainMap<A::Point>, alg: &A) {
    let extra = certificate_relations(inst);
    let versions = dm.versions();
    for (set, v) in versions.iter().enumerate() {
        for version in 0..=v.len() {
            let target = dm.sets[set].to_vec();
            let tree = derivation_to_tree(dm, &target, Some(version), inst).unwrap();
            assert!(validate_tree(&tree, dm.k));
            assert_eq!(root_projection(&tree, alg, &extra).unwrap(), dm.extent_at(set, version));
        }
    }
}

#[test]
fn certificates_reproduce_logged_extents() {
    let t = t_imp();
    for inst in [t_imp_sat(), t_imp_unsat()] {
        let dm = one_minimality(&inst, &t).unwrap();
        check_certificates(&inst, &dm, &t);
    }
    let q = builtin("QLT").unwrap();
    let inst = build_imax(&qlt_cycle(&q), &q, 2, 3);
    check_certificates(&inst, &kl_minimality(&inst, &q, 2, 3).unwrap(), &q);
}

#[test]
fn unsat_certificate_uses_the_three_constraints() {
    let t = t_imp();
    let inst = t_imp_unsat();
    let dm = one_minimality(&inst, &t).unwrap();
    let tree = derivation_to_tree(&dm, &[0], None, &inst).unwrap();
    let names: HashSet<String> = tree.atoms().into_iter().map(|a| a.relation).collect();
    assert_eq!(names, ["Leq", "R0", "R1"].map(String::from).into_iter().collect());
    assert!(eval_pp(&tree.to_pp(), &t).unwrap().is_empty());
}

fn random_schedules_agree<A: Algebra>(inst: &Instance<A::Point>, alg: &A, k: Option<(usize, usize)>) {
    let run = |schedule| {
        let opts = MinimalityOptions { schedule, record: false };
        match k {
            None => one_minimality_with(inst, alg, opts).unwrap(),
            Some((k, l)) => kl_minimality_with(inst, alg, k, l, opts).unwrap(),
        }
    };
    let base = run(Schedule::Canonical);
    for seed in 0..20 {
        let other = run(Schedule::Random(seed));
        assert_eq!(other.sets, base.sets);
        assert_eq!(other.domains, base.domains);
    }
}

#[test]
fn pruning_order_does_not_matter() {
    let t = t_imp();
    random_schedules_agree(&t_imp_sat(), &t, None);
    random_schedules_agree(&t_imp_unsat(), &t, None);
    let q = builtin("QLT").unwrap();
    random_schedules_agree(&build_imax(&qlt_cycle(&q), &q, 2, 3), &q, Some((2, 3)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filtering_keeps_every_solution(seed in any::<u64>(), n in 1u32..=3, vars in 1usize..=4, cons in 1usize..=6) {
        let mut r = rng(seed);
        let sig = Signature::new([("c0", 1), ("E", 2), ("F", 2)]).unwrap();
        let t = random_structure(&mut r, &sig, n, 0.5);
        let inst = random_named_instance(&mut r, &t, vars, cons);
        let Ok(dm) = one_minimality(&inst, &t) else { return Ok(()) };
        let filtered = apply_domains(&inst, &dm, &t);
        prop_assert_eq!(solutions_brute(&filtered, &t).unwrap(), solutions_brute(&inst, &t).unwrap());
        for s in solutions_brute(&inst, &t).unwrap() {
            for (set, dom) in dm.sets.iter().zip(&dm.domains) {
                prop_assert!(dom.contains(&tuple([s.get(set[0])])));
            }
        }
    }

    #[test]
    fn schedules_reach_the_same_fixpoint(seed in any::<u64>(), vars in 1usize..=4, cons in 1usize..=6) {
        let mut r = rng(seed);
        let sig = Signature::new([("c0", 1), ("c1", 1), ("E", 2)]).unwrap();
        let t = random_structure(&mut r, &sig, 3, 0.5);
        let inst = random_named_instance(&mut r, &t, vars, cons);
        if one_minimality(&inst, &t).is_ok() {
            random_schedules_agree(&inst, &t, None);
        }
        random_schedules_agree(&build_imax(&inst, &t, 2, 2), &t, Some((2, 2)));
    }

    #[test]
    fn random_certificates_check_out(seed in any::<u64>(), vars in 1usize..=4, cons in 1usize..=5) {
        let mut r = rng(seed);
        let sig = Signature::new([("c0", 1), ("E", 2)]).unwrap();
        let t = random_structure(&mut r, &sig, 2, 0.5);
        let inst = random_named_instance(&mut r, &t, vars, cons);
        if let Ok(dm) = one_minimality(&inst, &t) {
            check_certificates(&inst, &dm, &t);
        }
    }
}

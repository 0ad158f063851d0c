mod common;

use common::*;
use csp_dichotomy::algebra::Algebra;
use csp_dichotomy::duality::{harvest_obstructions, ObstructionSet, Provenance};
use csp_dichotomy::error::Error;
use csp_dichotomy::hardness::{emit_reduction_finite, HardnessWitness, Target};
use csp_dichotomy::implications::search_equality_definition;
use csp_dichotomy::io::*;
use csp_dichotomy::orbits::{builtin, BUILTIN_NAMES};
use csp_dichotomy::relcore::*;
use proptest::prelude::*;

const T_IMP: &str = include_str!("../../../fixtures/t_imp.tpl");
const T_UNARY: &str = include_str!("../../../fixtures/t_unary.tpl");
const QLT_CHAIN: &str = include_str!("../../../fixtures/qlt_chain.ins");
const QLT: &str = include_str!("../../../fixtures/qlt.otpl");

#[test]
fn fixture_templates_match_the_builders() {
    let imp = parse_template(T_IMP).unwrap();
    assert_eq!(imp.name.as_deref(), Some("T_IMP"));
    assert_eq!(imp.structure, t_imp());
    assert_eq!(parse_template(T_UNARY).unwrap().structure, t_unary());
}

#[test]
fn template_round_trip() {
    let s = t_imp();
    let text = write_template(Some("T_IMP"), &s);
    let back = parse_template(&text).unwrap();
    assert_eq!(back.structure, s);
    assert_eq!(back.name.as_deref(), Some("T_IMP"));
}

#[test]
fn instance_round_trip() {
    let t = t_imp();
    let mut inst = t_imp_sat();
    inst.constrain_extent(&["x"], vec![tuple([0]), tuple([1])]).unwrap();
    let back = parse_instance(&write_instance(&inst, &t), &t).unwrap();
    assert_eq!(back, inst);
}

#[test]
fn orbit_fixture_matches_builtin() {
    let q = parse_orbit_template(QLT).unwrap();
    let b = builtin("QLT").unwrap();
    assert_eq!(q.name(), b.name());
    assert_eq!(q.bounds(), b.bounds());
    assert_eq!((q.k(), q.l()), (b.k(), b.l()));
    let inst = parse_orbit_instance(QLT_CHAIN, &q).unwrap();
    assert_eq!(inst.variables.len(), 3);
    assert_eq!(inst.constraints[2].extent, vec![q.parse_type("0 1 | Lt(0,1)").unwrap()]);
}

#[test]
fn orbit_templates_round_trip() {
    for name in BUILTIN_NAMES {
        let t = builtin(name).unwrap();
        let back = parse_orbit_template(&write_orbit_template(&t)).unwrap();
        assert_eq!(back.bounds(), t.bounds());
        assert_eq!(back.derived_relations(), t.derived_relations());
        for r in t.derived_relations() {
            assert_eq!(back.relation(r).unwrap().1, t.relation(r).unwrap().1, "{name} {r}");
        }
    }
}

#[test]
fn orbit_instance_round_trip() {
    let q = builtin("QLT").unwrap();
    let inst = parse_orbit_instance(QLT_CHAIN, &q).unwrap();
    assert_eq!(parse_orbit_instance(&write_orbit_instance(&inst, &q), &q).unwrap(), inst);
}

#[test]
fn interpretation_round_trip() {
    let t = t_imp();
    let f = search_equality_definition(&t, 3).unwrap();
    let red = emit_reduction_finite(&HardnessWitness::Equality(f), &t).unwrap();
    let text = write_interpretation(&red.interpretation);
    assert_eq!(parse_interpretation(&text).unwrap(), red.interpretation);
}

#[test]
fn obstruction_round_trip() {
    let obs = harvest_obstructions(&Target::Orbit(builtin("RGEN").unwrap()), 2, 1).unwrap();
    let back = parse_obstructions(&write_obstructions(&obs)).unwrap();
    assert_eq!(back, obs);
    let mut empty = ObstructionSet::default();
    assert_eq!(parse_obstructions(&write_obstructions(&empty)).unwrap(), empty);
    let one = Structure::from_relations(1, [("R0", 1, vec![vec![0]])]).unwrap();
    empty.insert(one, Provenance::DerivationHarvest);
    assert_eq!(parse_obstructions(&write_obstructions(&empty)).unwrap(), empty);
}

#[test]
fn unknown_fields_are_rejected() {
    let text = format!("{T_IMP}\ncolour = \"red\"\n");
    assert!(parse_template(&text).is_err());
    let bad = "variables = [\"x\"]\n\n[[constraint]]\nrelation = \"R0\"\nscope = [\"x\"]\nweight = 3\n";
    assert!(parse_instance(bad, &t_imp()).is_err());
}

#[test]
fn parse_errors_carry_positions() {
    let text = "domain_size = 2\n[[relation]]\nname = \"Leq\"\narity = two\n";
    match parse_template(text) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("{other:?}"),
    }
}

#[test]
fn semantic_errors_are_reported() {
    let out_of_range = "domain_size = 2\n[[relation]]\nname = \"R\"\narity = 1\ntuples = [[2]]\n";
    assert!(parse_template(out_of_range).is_err());
    let unknown = "variables = [\"x\"]\n[[constraint]]\nrelation = \"Nope\"\nscope = [\"x\"]\n";
    assert!(parse_instance(unknown, &t_imp()).is_err());
    let undeclared = "variables = [\"x\"]\n[[constraint]]\nrelation = \"R0\"\nscope = [\"y\"]\n";
    assert!(parse_instance(undeclared, &t_imp()).is_err());
    let q = builtin("QLT").unwrap();
    let unrealizable = "variables = [\"a\", \"b\"]\n[[constraint]]\nscope = [\"a\", \"b\"]\ntypes = [\"0 1 | Lt(0,1) Lt(1,0)\"]\n";
    assert!(parse_orbit_instance(unrealizable, &q).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_templates_round_trip(seed in any::<u64>(), n in 0u32..=4) {
        let sig = Signature::new([("c0", 1), ("E", 2), ("T", 3)]).unwrap();
        let s = random_structure(&mut rng(seed), &sig, n, 0.3);
        prop_assert_eq!(parse_template(&write_template(None, &s)).unwrap().structure, s);
    }

    #[test]
    fn random_instances_round_trip(seed in any::<u64>(), vars in 1usize..=5, cons in 0usize..=6) {
        let mut r = rng(seed);
        let t = t_imp();
        let inst = random_named_instance(&mut r, &t, vars, cons);
        prop_assert_eq!(parse_instance(&write_instance(&inst, &t), &t).unwrap(), inst);
        let q = builtin("RGEN").unwrap();
        let inst = random_named_instance(&mut r, &q, vars, cons);
        prop_assert_eq!(parse_orbit_instance(&write_orbit_instance(&inst, &q), &q).unwrap(), inst);
    }
}

//! One line per acceptance criterion. Runs without the test harness so the
//! lines are always printed; exits non-zero if any criterion fails.

mod common;

use std::collections::HashSet;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::*;
use csp_dichotomy::algebra::Algebra;
use csp_dichotomy::duality::*;
use csp_dichotomy::hardness::{chain_accepts, Reduction, Target};
use csp_dichotomy::implications::*;
use csp_dichotomy::io::{parse_instance, parse_orbit_instance};
use csp_dichotomy::minimality::*;
use csp_dichotomy::orbits::{builtin, solve_orbit, OrbitMode, OrbitTemplate, BUILTIN_NAMES};
use csp_dichotomy::ppformulas::{root_projection, validate_tree};
use csp_dichotomy::relcore::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{}/../../fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

struct Classified {
    report: ClassificationReport,
    elapsed: Duration,
}

fn run_classify(t: Target) -> Classified {
    let start = Instant::now();
    let report = classify(&t, &Budgets::default()).unwrap();
    Classified {
        report,
        elapsed: start.elapsed(),
    }
}

fn reduction(c: &Classified) -> Option<&Reduction> {
    match &c.report.verdict {
        Verdict::LHard { reduction, .. } => Some(reduction),
        _ => None,
    }
}

fn single_orbit_witness(c: &Classified, shared: usize) -> std::result::Result<(&Implication<u32>, String), String> {
    let Verdict::LHard { witness, .. } = &c.report.verdict else {
        return Err(format!("{} is {}", c.report.template, c.report.verdict.label()));
    };
    let i = witness.orbit_implication().ok_or("witness is not a balanced implication")?;
    check(i.u.len() == 2 && i.v.len() == 2, "witness tuples are not pairs")?;
    check(i.c.len() == 1 && i.c == i.d, "C and D are not one and the same orbit")?;
    check(i.pi.len() == shared, format!("{} shared variables instead of {shared}", i.pi.len()))?;
    Ok((i, i.formula.to_string()))
}

fn criterion_1(rgen: &Classified, phi: &Classified, qlt: &Classified) -> Outcome {
    let slow: Vec<String> = [rgen, phi, qlt]
        .iter()
        .filter(|c| c.elapsed > Duration::from_secs(60))
        .map(|c| format!("{} took {:?}", c.report.template, c.elapsed))
        .collect();
    check(slow.is_empty(), slow.join(", "))?;

    let Verdict::FoDefinable { obstructions, .. } = &rgen.report.verdict else {
        return Err(format!("RGEN is {}", rgen.report.verdict.label()));
    };
    let sym = |pairs: &[(u32, u32)]| -> Vec<Vec<u32>> { pairs.iter().flat_map(|&(a, b)| [vec![a, b], vec![b, a]]).collect() };
    let expected = [
        Structure::from_relations(1, [("E", 2, vec![vec![0, 0]]), ("N", 2, vec![])]).unwrap(),
        Structure::from_relations(1, [("E", 2, vec![]), ("N", 2, vec![vec![0, 0]])]).unwrap(),
        Structure::from_relations(2, [("E", 2, sym(&[(0, 1)])), ("N", 2, sym(&[(0, 1)]))]).unwrap(),
    ];
    check(
        obstructions.len() == 3 && expected.iter().all(|s| obstructions.contains_isomorphic(s)),
        "RGEN obstructions are not the E-loop, N-loop and E∧N pair",
    )?;

    let p = builtin("RGEN_PHI").unwrap();
    let (i, phi_formula) = single_orbit_witness(phi, 0)?;
    let e = p.parse_type("0 1 | E(0,1) E(1,0)").unwrap();
    let n = p.parse_type("0 1 | N(0,1) N(1,0)").unwrap();
    check(i.c == [e] || i.c == [n], "RGEN_PHI witness orbit is neither the edge nor the non-edge orbit")?;

    let q = builtin("QLT").unwrap();
    let (i, qlt_formula) = single_orbit_witness(qlt, 1)?;
    check(q.is_injective(2, &i.c[0]), "QLT witness orbit is not injective")?;

    Ok(format!(
        "RGEN FO_DEFINABLE with 3 obstructions ({:.1?}); RGEN_PHI L_HARD via {phi_formula} ({:.1?}); QLT L_HARD via {qlt_formula} ({:.1?})",
        rgen.elapsed, phi.elapsed, qlt.elapsed
    ))
}

fn criterion_2(unary: &Classified, imp: &Classified) -> Outcome {
    let Verdict::FoDefinable {
        obstructions,
        verified_up_to,
        ..
    } = &unary.report.verdict
    else {
        return Err(format!("T_UNARY is {}", unary.report.verdict.label()));
    };
    check(obstructions.len() == 1, format!("{} obstructions for T_UNARY", obstructions.len()))?;
    let t = Target::Finite(t_unary());
    let report = verify_duality(&t, obstructions, 4, 0).unwrap();
    check(report.passed() && *verified_up_to >= 4, format!("T_UNARY duality: {report}"))?;

    let Verdict::LHard {
        verified_up_to: imp_n,
        witness,
        ..
    } = &imp.report.verdict
    else {
        return Err(format!("T_IMP is {}", imp.report.verdict.label()));
    };
    check(*imp_n >= 4, format!("T_IMP reduction verified only up to {imp_n}"))?;
    Ok(format!(
        "T_UNARY: 1 obstruction, {report}; T_IMP: L_HARD via {}, reduction verified on all sources with at most {imp_n} elements",
        witness.describe(&Target::Finite(t_imp())).lines().next().unwrap_or_default()
    ))
}

/// Templates with constants on every element: all with at most two elements
/// and at most two binary relations, and seeded samples on three elements
/// with one or two.
fn template_family() -> Vec<Structure> {
    let mut out = Vec::new();
    for n in 1..=2 {
        for b in 0..=2 {
            out.extend(constant_templates(n, b));
        }
    }
    out.extend(constant_templates(3, 0));
    let mut r = rng(33);
    out.extend(constant_templates(3, 1).choose_multiple(&mut r, 64).cloned());
    let pairs = all_tuples(3, 2);
    for _ in 0..64 {
        let mut rels: Vec<(String, usize, Vec<Vec<u32>>)> = (0..3).map(|a| (format!("c{a}"), 1, vec![vec![a]])).collect();
        for b in 0..2 {
            let ext = pairs.iter().filter(|_| r.gen_bool(0.5)).map(|t| t.to_vec()).collect();
            rels.push((format!("B{b}"), 2, ext));
        }
        out.push(Structure::from_relations(3, rels).unwrap());
    }
    out
}

/// Largest instance size, at most 4, with at most 2^18 structures.
fn duality_depth(t: &Structure) -> u32 {
    let slots = |n: u32| -> u32 { t.signature().relations.iter().map(|r| n.pow(r.arity as u32)).sum() };
    (1..=4).rev().find(|&n| slots(n) <= 18).unwrap_or(1)
}

#[derive(Default)]
struct WidthTally {
    templates: usize,
    width_templates: usize,
    unbalanced: usize,
    instances: usize,
    nontrivial: usize,
    failures: Vec<String>,
}

fn criterion_3() -> Outcome {
    let family = template_family();
    let tallies: Vec<WidthTally> = family
        .par_iter()
        .enumerate()
        .map(|(idx, t)| {
            let mut tally = WidthTally {
                templates: 1,
                ..Default::default()
            };
            if !is_core_with_constants(t) {
                tally.failures.push(format!("template {idx} is not a core with constants"));
                return tally;
            }
            let target = Target::Finite(t.clone());
            let unbalanced = matches!(
                search_balanced(t, HarvestShape::finite(), 6).unwrap(),
                BalancedOutcome::NoneWithinBudget { .. }
            );
            let dual = unbalanced && {
                let n = duality_depth(t);
                let obs = harvest_obstructions(&target, n, 1).unwrap();
                verify_duality(&target, &obs, n, 1).unwrap().passed()
            };
            tally.width_templates = dual as usize;
            tally.unbalanced = unbalanced as usize;
            let mut r = rng(1000 + idx as u64);
            for _ in 0..40 {
                let vars = r.gen_range(1..=4);
                let cons = r.gen_range(vars..=vars + 4);
                let inst = random_named_instance(&mut r, t, vars, cons);
                let Ok(dm) = one_minimality(&inst, t) else {
                    continue;
                };
                tally.instances += 1;
                let sols = solutions_brute(&inst, t).unwrap();
                if solutions_brute(&apply_domains(&inst, &dm, t), t).unwrap() != sols {
                    tally.failures.push(format!("template {idx}: filtering changed the solutions of {inst:?}"));
                }
                if dual && !dm.is_trivial() {
                    tally.nontrivial += 1;
                    if sols.is_empty() {
                        tally.failures.push(format!("template {idx}: non-trivial fixpoint without solution for {inst:?}"));
                    }
                }
            }
            tally
        })
        .collect();
    let mut total = WidthTally::default();
    for t in tallies {
        total.templates += t.templates;
        total.width_templates += t.width_templates;
        total.unbalanced += t.unbalanced;
        total.instances += t.instances;
        total.nontrivial += t.nontrivial;
        total.failures.extend(t.failures);
    }
    if let Some(first) = total.failures.first() {
        return Err(format!("{} exceptions, first: {first}", total.failures.len()));
    }
    Ok(format!(
        "{} templates, {} instances kept their solutions; {} of {} unbalanced templates with verified duality, {} non-trivial fixpoints all solvable",
        total.templates, total.instances, total.width_templates, total.unbalanced, total.nontrivial
    ))
}

enum Fixture {
    Finite(Structure, Instance<Tuple>),
    Orbit(OrbitTemplate, Instance<u32>),
}

fn fixture_suite() -> Vec<(String, Fixture)> {
    let mut out = vec![
        ("t_imp_sat".to_string(), Fixture::Finite(t_imp(), t_imp_sat())),
        ("t_imp_unsat".to_string(), Fixture::Finite(t_imp(), t_imp_unsat())),
    ];
    for name in ["t_imp_sat.ins", "t_imp_unsat.ins"] {
        let t = t_imp();
        let inst = parse_instance(&fixture(name), &t).unwrap();
        out.push((name.to_string(), Fixture::Finite(t, inst)));
    }
    for (name, tpl) in [
        ("qlt_cycle.ins", "QLT"),
        ("qlt_chain.ins", "QLT"),
        ("rgen_edge.ins", "RGEN"),
        ("rgen_loop.ins", "RGEN"),
    ] {
        let t = builtin(tpl).unwrap();
        let inst = parse_orbit_instance(&fixture(name), &t).unwrap();
        let inst = build_imax(&inst, &t, t.k(), t.l());
        out.push((name.to_string(), Fixture::Orbit(t, inst)));
    }
    out
}

fn certificate_entries<A: Algebra>(inst: &Instance<A::Point>, dm: &DomainMap<A::Point>, alg: &A) -> std::result::Result<usize, String> {
    let extra = certificate_relations(inst);
    let mut n = 0;
    for (set, v) in dm.versions().iter().enumerate() {
        for version in 0..=v.len() {
            let target = dm.sets[set].to_vec();
            let tree = derivation_to_tree(dm, &target, Some(version), inst).map_err(|e| e.to_string())?;
            check(validate_tree(&tree, dm.k), format!("invalid tree for set {set} version {version}"))?;
            let got = root_projection(&tree, alg, &extra).map_err(|e| e.to_string())?;
            check(got == dm.extent_at(set, version), format!("root projection differs for set {set} version {version}"))?;
            n += 1;
        }
    }
    Ok(n)
}

fn criterion_4() -> Outcome {
    let mut entries = 0;
    let mut steps = 0;
    for (name, f) in fixture_suite() {
        let res = match &f {
            Fixture::Finite(t, inst) => {
                let dm = one_minimality(inst, t).unwrap();
                steps += dm.log.steps.len();
                certificate_entries(inst, &dm, t)
            }
            Fixture::Orbit(t, inst) => {
                let dm = kl_minimality(inst, t, t.k(), t.l()).unwrap();
                steps += dm.log.steps.len();
                certificate_entries(inst, &dm, t)
            }
        };
        entries += res.map_err(|e| format!("{name}: {e}"))?;
    }
    Ok(format!("{entries} logged extents from {steps} derivation steps all reproduced by valid trees"))
}

fn schedules_agree<A: Algebra>(inst: &Instance<A::Point>, alg: &A, kl: Option<(usize, usize)>) -> bool {
    let run = |schedule| {
        let opts = MinimalityOptions { schedule, record: true };
        match kl {
            None => one_minimality_with(inst, alg, opts).unwrap(),
            Some((k, l)) => kl_minimality_with(inst, alg, k, l, opts).unwrap(),
        }
    };
    let base = run(Schedule::Canonical);
    (0..20).all(|seed| {
        let other = run(Schedule::Random(seed));
        other.sets == base.sets && other.domains == base.domains
    })
}

fn criterion_5() -> Outcome {
    let suite = fixture_suite();
    for (name, f) in &suite {
        let ok = match f {
            Fixture::Finite(t, inst) => schedules_agree(inst, t, None),
            Fixture::Orbit(t, inst) => schedules_agree(inst, t, Some((t.k(), t.l()))),
        };
        check(ok, format!("{name}: a random schedule reached a different fixpoint"))?;
    }
    Ok(format!("{} fixtures x 20 random schedules reach the canonical fixpoint", suite.len()))
}

/// Loopless RGEN structures on five elements: each pair carries nothing,
/// `E`, `N` or both, in both directions.
fn rgen_five(r: &mut rand::rngs::StdRng) -> Structure {
    let mut e = Vec::new();
    let mut ne = Vec::new();
    for a in 0..5u32 {
        for b in a + 1..5 {
            match r.gen_range(0..8) {
                0..=2 => {}
                3 | 4 => e.extend([vec![a, b], vec![b, a]]),
                5 | 6 => ne.extend([vec![a, b], vec![b, a]]),
                _ => {
                    e.extend([vec![a, b], vec![b, a]]);
                    ne.extend([vec![a, b], vec![b, a]]);
                }
            }
        }
    }
    Structure::from_relations(5, [("E", 2, e), ("N", 2, ne)]).unwrap()
}

fn criterion_6(rgen: &Classified) -> Outcome {
    let mut disagreements = Vec::new();
    for (k, name) in BUILTIN_NAMES.iter().enumerate() {
        let t = builtin(name).unwrap();
        let mut r = rng(600 + k as u64);
        for _ in 0..100 {
            let vars = r.gen_range(1..=6);
            let cons = r.gen_range(0..=8);
            let inst = random_named_instance(&mut r, &t, vars, cons);
            let a = solve_orbit(&inst, &t, OrbitMode::Theorem).unwrap().is_sat();
            let b = solve_orbit(&inst, &t, OrbitMode::Search).unwrap().is_sat();
            if a != b {
                disagreements.push(format!("{name}: {inst:?}"));
            }
        }
    }
    if let Some(first) = disagreements.first() {
        return Err(format!("{} disagreements, first {first}", disagreements.len()));
    }

    let Verdict::FoDefinable { obstructions, .. } = &rgen.report.verdict else {
        return Err("RGEN has no obstruction set".into());
    };
    let target = Target::Orbit(builtin("RGEN").unwrap());
    let mut exhaustive = 0;
    for n in 0..=4 {
        for s in instance_structures(&target, n).unwrap() {
            exhaustive += 1;
            check(
                fo_recognize(&s, obstructions).unwrap() == target.accepts(&s).unwrap(),
                format!("recognizer and solver disagree on {s}"),
            )?;
        }
    }
    let mut r = rng(605);
    let sampled = 3000;
    for _ in 0..sampled {
        let s = target.normalize(&rgen_five(&mut r)).unwrap();
        check(
            fo_recognize(&s, obstructions).unwrap() == target.accepts(&s).unwrap(),
            format!("recognizer and solver disagree on {s}"),
        )?;
    }
    Ok(format!(
        "theorem and search modes agree on 100 random instances per built-in; recognizer agrees with the solver on all {exhaustive} closed RGEN structures up to 4 elements and {sampled} sampled 5-element ones"
    ))
}

fn reachable(n: u32, edges: &[(u32, u32)], s: u32, t: u32) -> bool {
    let mut seen = vec![false; n as usize];
    let mut stack = vec![s];
    seen[s as usize] = true;
    while let Some(x) = stack.pop() {
        for &(a, b) in edges {
            for (p, q) in [(a, b), (b, a)] {
                if p == x && !seen[q as usize] {
                    seen[q as usize] = true;
                    stack.push(q);
                }
            }
        }
    }
    seen[t as usize]
}

fn criterion_7(reductions: &[(&str, &Reduction)]) -> Outcome {
    let mut runs = 0usize;
    for (name, red) in reductions {
        for n in 1..=5u32 {
            let pairs: Vec<(u32, u32)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
            let graphs: Vec<Vec<(u32, u32)>> = (0u32..1 << pairs.len())
                .map(|mask| pairs.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &e)| e).collect())
                .collect();
            let ends: Vec<(u32, u32)> = if n == 1 { vec![(0, 0)] } else { vec![(0, n - 1), (0, 0)] };
            let bad: Vec<String> = graphs
                .par_iter()
                .flat_map(|edges| {
                    ends.iter()
                        .filter_map(|&(s, t)| {
                            let got = chain_accepts(&red.interpretation, &red.target, n, edges, s, t).unwrap()?;
                            (got == reachable(n, edges, s, t)).then(|| format!("{name}: {n} vertices {edges:?} s={s} t={t}"))
                        })
                        .collect::<Vec<_>>()
                })
                .collect();
            check(bad.is_empty(), bad.first().cloned().unwrap_or_default())?;
            if n as usize >= red.interpretation.parameters {
                runs += graphs.len() * ends.len();
            }
        }
    }
    let names: Vec<&str> = reductions.iter().map(|(n, _)| *n).collect();
    Ok(format!("{runs} graph instances with at most 5 vertices through the chains of {}", names.join(", ")))
}

fn criterion_8() -> Outcome {
    let mut total = 0;
    for name in ["QLT", "RGEN_PHI"] {
        let t = builtin(name).unwrap();
        let imps = harvest_atom_implications(&t, HarvestShape::orbit(2)).implications;
        let maps: Vec<HashSet<(u32, u32)>> = imps.iter().map(|i| orbit_mappings(i, &t).unwrap()).collect();
        for (a, ma) in imps.iter().zip(&maps) {
            for (b, mb) in imps.iter().zip(&maps) {
                if a.d != b.c || a.v.len() != b.u.len() || a.v_proj != b.u_proj {
                    continue;
                }
                total += 1;
                let ab = compose(a, b, &t).map_err(|e| e.to_string())?;
                let via: HashSet<(u32, u32)> = ma
                    .iter()
                    .flat_map(|&(o1, o2)| mb.iter().filter(move |&&(x, _)| x == o2).map(move |&(_, o3)| (o1, o3)))
                    .collect();
                check(
                    orbit_mappings(&ab, &t).unwrap() == via,
                    format!("{name}: mapping clause fails for\n{}\n{}", a.describe(&t), b.describe(&t)),
                )?;
            }
        }
    }
    Ok(format!("{total} composable pairs of harvested atom implications over QLT and RGEN_PHI"))
}

struct Runs {
    rgen: OnceLock<Classified>,
    phi: OnceLock<Classified>,
    qlt: OnceLock<Classified>,
    unary: OnceLock<Classified>,
    imp: OnceLock<Classified>,
}

impl Runs {
    fn rgen(&self) -> &Classified {
        self.rgen.get_or_init(|| run_classify(Target::Orbit(builtin("RGEN").unwrap())))
    }
    fn phi(&self) -> &Classified {
        self.phi.get_or_init(|| run_classify(Target::Orbit(builtin("RGEN_PHI").unwrap())))
    }
    fn qlt(&self) -> &Classified {
        self.qlt.get_or_init(|| run_classify(Target::Orbit(builtin("QLT").unwrap())))
    }
    fn unary(&self) -> &Classified {
        self.unary.get_or_init(|| run_classify(Target::Finite(t_unary())))
    }
    fn imp(&self) -> &Classified {
        self.imp.get_or_init(|| run_classify(Target::Finite(t_imp())))
    }
}

fn run(n: usize, runs: &Runs) -> Outcome {
    match n {
        1 => criterion_1(runs.rgen(), runs.phi(), runs.qlt()),
        2 => criterion_2(runs.unary(), runs.imp()),
        3 => criterion_3(),
        4 => criterion_4(),
        5 => criterion_5(),
        6 => criterion_6(runs.rgen()),
        7 => {
            let mut reductions: Vec<(&str, &Reduction)> = Vec::new();
            for (name, c) in [("T_IMP", runs.imp()), ("QLT", runs.qlt()), ("RGEN_PHI", runs.phi())] {
                match reduction(c) {
                    Some(r) => reductions.push((name, r)),
                    None => return Err(format!("{name} has no reduction")),
                }
            }
            criterion_7(&reductions)
        }
        _ => criterion_8(),
    }
}

/// Numeric arguments select criteria; anything else is ignored.
fn main() -> ExitCode {
    let mut chosen: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).filter(|n| (1..=8).contains(n)).collect();
    if chosen.is_empty() {
        chosen = (1..=8).collect();
    }
    let runs = Runs {
        rgen: OnceLock::new(),
        phi: OnceLock::new(),
        qlt: OnceLock::new(),
        unary: OnceLock::new(),
        imp: OnceLock::new(),
    };
    let mut failed = false;
    for n in chosen {
        let start = Instant::now();
        let res = run(n, &runs);
        let secs = start.elapsed().as_secs_f64();
        match res {
            Ok(msg) => println!("criterion {n}: PASS ({secs:.1}s): {msg}"),
            Err(msg) => {
                failed = true;
                println!("criterion {n}: FAIL ({secs:.1}s): {msg}");
            }
        }
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

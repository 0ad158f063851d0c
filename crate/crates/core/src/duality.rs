//! Obstruction sets: harvesting, exhaustive verification, the recognizer
//! they induce, and the classifier that tries hardness first and duality
//! second.

use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;

use crate::algebra::Algebra;
use crate::error::{Error, Result};
use crate::hardness::{
    emit_reduction_finite, emit_reduction_orbit, source_template, verify_reduction, HardnessWitness, Reduction,
    Target,
};
use crate::implications::{search_balanced, search_equality_definition, BalancedOutcome, HarvestShape, Implication};
use crate::minimality::{build_imax, derivation_to_tree_capped, kl_minimality, one_minimality, DomainMap};
use crate::parallel::with_jobs;
use crate::ppformulas::{canonical_structure_over, trim_minimal, TheoreticalBounds};
use crate::relcore::{
    find_homomorphism, for_each_permutation, is_core_with_constants, nonisomorphic_closed_structures,
    structure_to_instance, Instance, Structure, Tuple,
};

/// Structures larger than this are not deduplicated up to isomorphism and
/// are left out of harvested sets.
pub const MAX_OBSTRUCTION_SIZE: u32 = 8;

/// Node budget for one derivation tree during harvesting.
const HARVEST_TREE_BUDGET: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    /// A derivation of an empty domain, read as a structure and trimmed.
    DerivationHarvest,
    /// A critical structure found by enumeration.
    CriticalEnumeration,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::DerivationHarvest => "derivation-harvest",
            Provenance::CriticalEnumeration => "critical-enumeration",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Obstruction {
    pub structure: Structure,
    pub provenance: Provenance,
}

/// Pairwise non-isomorphic critical structures that do not map to the
/// template.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ObstructionSet {
    pub obstructions: Vec<Obstruction>,
}

impl ObstructionSet {
    pub fn len(&self) -> usize {
        self.obstructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obstructions.is_empty()
    }

    pub fn structures(&self) -> impl Iterator<Item = &Structure> {
        self.obstructions.iter().map(|o| &o.structure)
    }

    /// Whether both sets hold the same structures up to isomorphism.
    pub fn same_structures(&self, other: &ObstructionSet) -> bool {
        self.len() == other.len() && self.structures().all(|s| other.contains_isomorphic(s))
    }

    pub fn contains_isomorphic(&self, s: &Structure) -> bool {
        self.structures().any(|o| o.is_isomorphic(s))
    }

    /// Adds `s` unless an isomorphic copy is present; returns whether it was added.
    pub fn insert(&mut self, s: Structure, provenance: Provenance) -> bool {
        if self.contains_isomorphic(&s) {
            return false;
        }
        self.obstructions.push(Obstruction { structure: s, provenance });
        true
    }

    fn sort(&mut self) {
        self.obstructions.sort_by(|a, b| {
            let key = |s: &Structure| (s.domain_size(), s.tuple_count());
            key(&a.structure)
                .cmp(&key(&b.structure))
                .then_with(|| a.structure.extents().cmp(b.structure.extents()))
        });
    }
}

/// Accepts exactly when no obstruction maps into `s`. For orbit templates
/// `s` should already be normalized ([`Target::normalize`]).
pub fn fo_recognize(s: &Structure, obs: &ObstructionSet) -> Result<bool> {
    for o in obs.structures() {
        if find_homomorphism(o, s)?.is_some() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// [`fo_recognize`] on an instance over the template's named relations.
pub fn fo_recognize_instance<A: Algebra>(
    inst: &Instance<A::Point>,
    alg: &A,
    template: &Target,
    obs: &ObstructionSet,
) -> Result<bool> {
    let s = crate::relcore::instance_to_structure(inst, alg)?;
    fo_recognize(&template.normalize(&s)?, obs)
}

/// For orbit templates: the tuples a fact on distinct elements brings along
/// under permutation closure.
fn linked_tuples(template: &Target) -> Box<dyn Fn(usize, &Tuple) -> Vec<(usize, Tuple)> + Sync + '_> {
    match template {
        Target::Finite(_) => Box::new(|_, _| Vec::new()),
        Target::Orbit(t) => {
            let symbols = t.relation_symbols();
            let extents: Vec<Vec<u32>> = symbols.iter().map(|(n, _)| t.relation(n).unwrap().1.into_owned()).collect();
            // for every relation: the (permutation, relation) pairs it links to
            let mut links: Vec<Vec<(Vec<usize>, usize)>> = Vec::new();
            for (r, (_, arity)) in symbols.iter().enumerate() {
                let mut out = Vec::new();
                for_each_permutation(*arity, |perm| {
                    let positions: Vec<usize> = perm.iter().map(|&p| p as usize).collect();
                    let permuted = t.orbit_project(*arity, &extents[r], &positions);
                    for (s, ext) in extents.iter().enumerate() {
                        if symbols[s].1 == *arity && *ext == permuted {
                            out.push((positions.clone(), s));
                        }
                    }
                });
                links.push(out);
            }
            Box::new(move |r, tuple: &Tuple| {
                let injective = (0..tuple.len()).all(|i| (i + 1..tuple.len()).all(|j| tuple[i] != tuple[j]));
                if !injective {
                    return Vec::new();
                }
                links[r]
                    .iter()
                    .map(|(pos, s)| (*s, pos.iter().map(|&p| tuple[p]).collect()))
                    .collect()
            })
        }
    }
}

/// Every structure on exactly `n` elements up to isomorphism, restricted to
/// closed structures for orbit templates.
pub fn instance_structures(template: &Target, n: u32) -> Result<Vec<Structure>> {
    nonisomorphic_closed_structures(&template.signature(), n, linked_tuples(template))
}

fn is_connected(s: &Structure) -> bool {
    let comps = s.components();
    comps.len() == 1 && comps[0].domain_size() == s.domain_size()
}

/// Facts grouped so that removing one group keeps an orbit structure closed.
fn fact_groups(template: &Target, s: &Structure) -> Vec<Vec<(usize, Tuple)>> {
    let linked = linked_tuples(template);
    let mut groups: Vec<Vec<(usize, Tuple)>> = Vec::new();
    let mut seen: HashSet<(usize, Tuple)> = HashSet::new();
    for (r, t) in s.facts() {
        if seen.contains(&(r, t.clone())) {
            continue;
        }
        let mut g = vec![(r, t.clone())];
        for key in linked(r, t) {
            if !g.contains(&key) {
                g.push(key);
            }
        }
        for key in &g {
            seen.insert(key.clone());
        }
        groups.push(g);
    }
    groups
}

fn without(s: &Structure, group: &[(usize, Tuple)]) -> Structure {
    s.without_facts(&group.iter().cloned().collect())
}

/// Whether `s` fails to map while every removal of one fact group maps.
pub fn is_critical(template: &Target, s: &Structure) -> Result<bool> {
    if template.accepts(s)? {
        return Ok(false);
    }
    for g in fact_groups(template, s) {
        if !template.accepts(&without(s, &g))? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Drops fact groups greedily while the structure still fails to map, then
/// keeps one failing connected component.
fn trim_to_critical(template: &Target, s: &Structure) -> Result<Structure> {
    let mut cur = s.clone();
    'outer: loop {
        for g in fact_groups(template, &cur) {
            let cand = without(&cur, &g);
            if !template.accepts(&cand)? {
                cur = cand;
                continue 'outer;
            }
        }
        break;
    }
    for c in cur.components() {
        if !template.accepts(&c)? {
            return Ok(c);
        }
    }
    Err(Error::Invalid("trimmed structure maps to the template".into()))
}

fn empty_set<P>(dm: &DomainMap<P>) -> Option<Vec<usize>> {
    dm.domains.iter().position(Vec::is_empty).map(|i| dm.sets[i].to_vec())
}

/// The structure read off a derivation of an empty domain for `s`, if
/// minimality refutes `s`.
fn derived_obstruction(template: &Target, s: &Structure) -> Result<Option<Structure>> {
    let sig = template.signature();
    let formula = match template {
        Target::Finite(t) => {
            let inst = structure_to_instance(s, t)?;
            let dm = one_minimality(&inst, t)?;
            let Some(set) = empty_set(&dm) else { return Ok(None) };
            let Ok(tree) = derivation_to_tree_capped(&dm, &set, None, &inst, HARVEST_TREE_BUDGET) else {
                return Ok(None);
            };
            trim_minimal(&tree, t)?.to_pp()
        }
        Target::Orbit(t) => {
            let inst = build_imax(&structure_to_instance(s, t)?, t, t.k(), t.l());
            let dm = kl_minimality(&inst, t, t.k(), t.l())?;
            let Some(set) = empty_set(&dm) else { return Ok(None) };
            let Ok(tree) = derivation_to_tree_capped(&dm, &set, None, &inst, HARVEST_TREE_BUDGET) else {
                return Ok(None);
            };
            trim_minimal(&tree, t)?.to_pp()
        }
    };
    let raw = canonical_structure_over(&formula, &sig)?;
    let normalized = template.normalize(&raw)?;
    if template.accepts(&normalized)? {
        return Ok(None);
    }
    Ok(Some(trim_to_critical(template, &normalized)?.compact()))
}

/// Obstructions from two sources, merged up to isomorphism: critical
/// connected structures with at most `budget` elements, and the trimmed
/// structures of minimality derivations refuting them.
pub fn harvest_obstructions(template: &Target, budget: u32, jobs: usize) -> Result<ObstructionSet> {
    let mut set = ObstructionSet::default();
    let mut critical = Vec::new();
    for n in 1..=budget {
        let candidates = instance_structures(template, n)?;
        let found: Vec<Result<Option<Structure>>> = with_jobs(jobs, || {
            candidates
                .par_iter()
                .map(|s| {
                    if !is_connected(s) || s.tuple_count() == 0 {
                        return Ok(None);
                    }
                    Ok(is_critical(template, s)?.then(|| s.clone()))
                })
                .collect()
        })?;
        for s in found {
            if let Some(s) = s? {
                critical.push(s);
            }
        }
    }
    for s in &critical {
        set.insert(s.clone(), Provenance::CriticalEnumeration);
    }
    let derived: Vec<Result<Option<Structure>>> =
        with_jobs(jobs, || critical.par_iter().map(|s| derived_obstruction(template, s)).collect())?;
    for d in derived {
        if let Some(d) = d? {
            if d.domain_size() <= MAX_OBSTRUCTION_SIZE {
                set.insert(d, Provenance::DerivationHarvest);
            }
        }
    }
    set.sort();
    Ok(set)
}

/// A structure on which the obstruction set and the template disagree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DualityCounterexample {
    pub structure: Structure,
    pub maps_to_template: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DualityReport {
    pub n: u32,
    pub structures: usize,
    pub counterexample: Option<DualityCounterexample>,
}

impl DualityReport {
    pub fn passed(&self) -> bool {
        self.counterexample.is_none()
    }
}

impl fmt::Display for DualityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.counterexample {
            None => write!(f, "PASS: {} structures with at most {} elements", self.structures, self.n),
            Some(c) if c.maps_to_template => write!(f, "FAIL: {} maps to the template but is obstructed", c.structure),
            Some(c) => write!(f, "FAIL: {} does not map to the template and no obstruction maps into it", c.structure),
        }
    }
}

/// Checks "maps to the template ⟺ no obstruction maps in" on every
/// structure with at most `n` elements (closed structures for orbit
/// templates), reporting the first disagreement in enumeration order.
pub fn verify_duality(template: &Target, obs: &ObstructionSet, n: u32, jobs: usize) -> Result<DualityReport> {
    let mut all = Vec::new();
    for size in 0..=n {
        all.extend(instance_structures(template, size)?);
    }
    let results: Vec<Result<Option<DualityCounterexample>>> = with_jobs(jobs, || {
        all.par_iter()
            .map(|s| {
                let maps = template.accepts(s)?;
                let clear = fo_recognize(s, obs)?;
                Ok((maps != clear).then(|| DualityCounterexample {
                    structure: s.clone(),
                    maps_to_template: maps,
                }))
            })
            .collect()
    })?;
    let mut report = DualityReport {
        n,
        structures: all.len(),
        counterexample: None,
    };
    for r in results {
        let r = r?;
        if report.counterexample.is_none() {
            report.counterexample = r;
        }
    }
    Ok(report)
}

/// Search and verification limits for [`classify`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budgets {
    pub max_atoms: usize,
    /// Verification depth for finite templates (reductions and duality).
    pub verify_n: u32,
    /// Verification depth for reductions into orbit templates.
    pub orbit_verify_n: u32,
    /// Largest obstruction budget tried.
    pub obstruction_budget: u32,
    /// Worker threads; `0` uses all cores.
    pub jobs: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            max_atoms: 6,
            verify_n: 4,
            orbit_verify_n: 3,
            obstruction_budget: 4,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnyWitness {
    Finite(HardnessWitness<Tuple>),
    Orbit(HardnessWitness<u32>),
}

impl AnyWitness {
    pub fn describe(&self, template: &Target) -> String {
        fn imp<A: Algebra>(w: &HardnessWitness<A::Point>, alg: &A) -> String {
            match w {
                HardnessWitness::Balanced(i) => i.describe(alg),
                HardnessWitness::Equality(f) => format!("equality defined by {f}"),
            }
        }
        match (self, template) {
            (AnyWitness::Finite(w), Target::Finite(t)) => imp(w, t),
            (AnyWitness::Orbit(w), Target::Orbit(t)) => imp(w, t),
            _ => "witness for a different kind of template".into(),
        }
    }

    pub fn is_equality(&self) -> bool {
        matches!(
            self,
            AnyWitness::Finite(HardnessWitness::Equality(_)) | AnyWitness::Orbit(HardnessWitness::Equality(_))
        )
    }

    pub fn orbit_implication(&self) -> Option<&Implication<u32>> {
        match self {
            AnyWitness::Orbit(HardnessWitness::Balanced(i)) => Some(i),
            _ => None,
        }
    }

    pub fn finite_implication(&self) -> Option<&Implication<Tuple>> {
        match self {
            AnyWitness::Finite(HardnessWitness::Balanced(i)) => Some(i),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Verdict {
    FoDefinable {
        obstructions: ObstructionSet,
        verified_up_to: u32,
        /// The budget at which the set first repeated.
        stable_at: u32,
    },
    LHard {
        witness: AnyWitness,
        reduction: Reduction,
        verified_up_to: u32,
    },
    Unknown,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::FoDefinable { .. } => "FO_DEFINABLE",
            Verdict::LHard { .. } => "L_HARD",
            Verdict::Unknown => "UNKNOWN",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassificationReport {
    pub template: String,
    pub verdict: Verdict,
    pub budgets: Budgets,
    pub bounds: TheoreticalBounds,
    /// One line per pipeline step.
    pub log: Vec<String>,
}

fn theoretical_bounds(template: &Target) -> TheoreticalBounds {
    match template {
        Target::Finite(t) => TheoreticalBounds::finite(t.domain_size()),
        Target::Orbit(t) => TheoreticalBounds::orbit(t.k_orbit_count() as u128, t.k() as u32),
    }
}

fn emit(template: &Target, w: &AnyWitness) -> Result<Reduction> {
    match (template, w) {
        (Target::Finite(t), AnyWitness::Finite(w)) => emit_reduction_finite(w, t),
        (Target::Orbit(t), AnyWitness::Orbit(w)) => emit_reduction_orbit(w, t),
        _ => Err(Error::Precondition("witness and template kinds differ".into())),
    }
}

fn hardness_witnesses(template: &Target, budgets: &Budgets, log: &mut Vec<String>) -> Result<Vec<AnyWitness>> {
    let mut out = Vec::new();
    fn balanced<A: Algebra>(
        alg: &A,
        shape: HarvestShape,
        max_atoms: usize,
        log: &mut Vec<String>,
    ) -> Result<Option<HardnessWitness<A::Point>>> {
        Ok(match search_balanced(alg, shape, max_atoms)? {
            BalancedOutcome::Witness { implication, cycle, .. } => {
                log.push(format!("balanced search: witness from a cycle of {} implications", cycle.len()));
                Some(HardnessWitness::Balanced(implication))
            }
            BalancedOutcome::NoneWithinBudget { truncated, graph, .. } => {
                log.push(format!(
                    "balanced search: none within {max_atoms} atoms ({} vertices, {} arcs{})",
                    graph.vertices.len(),
                    graph.arcs.len(),
                    if truncated { ", harvest truncated" } else { "" }
                ));
                None
            }
        })
    }
    match template {
        Target::Finite(t) => {
            match search_equality_definition(t, budgets.max_atoms) {
                Some(f) => {
                    log.push(format!("equality search: defined by {f}"));
                    out.push(AnyWitness::Finite(HardnessWitness::Equality(f)));
                }
                None => log.push("equality search: not found".into()),
            }
            if let Some(w) = balanced(t, HarvestShape::finite(), budgets.max_atoms, log)? {
                out.push(AnyWitness::Finite(w));
            }
        }
        Target::Orbit(t) => {
            match search_equality_definition(t, budgets.max_atoms) {
                Some(f) => {
                    log.push(format!("equality search: defined by {f}"));
                    out.push(AnyWitness::Orbit(HardnessWitness::Equality(f)));
                }
                None => log.push("equality search: not found".into()),
            }
            if let Some(w) = balanced(t, HarvestShape::orbit(t.k()), budgets.max_atoms, log)? {
                out.push(AnyWitness::Orbit(w));
            }
        }
    }
    Ok(out)
}

fn check_preconditions(template: &Target) -> Result<()> {
    if let Target::Finite(t) = template {
        if !is_core_with_constants(t) {
            return Err(Error::Precondition(
                "finite templates must be cores with a unary singleton relation for every element".into(),
            ));
        }
    }
    Ok(())
}

/// Equality definition, then balanced implication (each emitted and
/// verified as a reduction), then obstruction sets at growing budgets.
pub fn classify(template: &Target, budgets: &Budgets) -> Result<ClassificationReport> {
    check_preconditions(template)?;
    let mut log = Vec::new();
    let verify_n = match template {
        Target::Finite(_) => budgets.verify_n,
        Target::Orbit(_) => budgets.orbit_verify_n,
    };
    let report = |verdict, log| ClassificationReport {
        template: template.name(),
        verdict,
        budgets: *budgets,
        bounds: theoretical_bounds(template),
        log,
    };
    for w in hardness_witnesses(template, budgets, &mut log)? {
        let reduction = emit(template, &w)?;
        let v = verify_reduction(&reduction.interpretation, &source_template(), &reduction.target, verify_n, budgets.jobs)?;
        log.push(format!("reduction check: {v}"));
        if v.passed() {
            return Ok(report(
                Verdict::LHard {
                    witness: w,
                    reduction,
                    verified_up_to: verify_n,
                },
                log,
            ));
        }
    }
    let mut previous: Option<ObstructionSet> = None;
    for b in 1..=budgets.obstruction_budget {
        let set = harvest_obstructions(template, b, budgets.jobs)?;
        log.push(format!("obstruction budget {b}: {} obstructions", set.len()));
        if let Some(prev) = &previous {
            if prev.same_structures(&set) {
                let v = verify_duality(template, &set, budgets.verify_n, budgets.jobs)?;
                log.push(format!("duality check: {v}"));
                if v.passed() {
                    return Ok(report(
                        Verdict::FoDefinable {
                            obstructions: set,
                            verified_up_to: budgets.verify_n,
                            stable_at: b,
                        },
                        log,
                    ));
                }
            }
        }
        previous = Some(set);
    }
    log.push("budgets exhausted".into());
    Ok(report(Verdict::Unknown, log))
}

impl fmt::Display for ClassificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "template: {}", self.template)?;
        writeln!(f, "verdict: {}", self.verdict.label())?;
        match &self.verdict {
            Verdict::FoDefinable {
                obstructions,
                verified_up_to,
                stable_at,
            } => {
                writeln!(
                    f,
                    "obstructions: {} (stable at budget {stable_at}, the convergence criterion is heuristic)",
                    obstructions.len()
                )?;
                for o in &obstructions.obstructions {
                    writeln!(f, "  {} [{}]", o.structure, o.provenance)?;
                }
                writeln!(f, "duality verified on all structures with at most {verified_up_to} elements")?;
            }
            Verdict::LHard {
                reduction,
                verified_up_to,
                ..
            } => {
                writeln!(f, "reduction verified on all source structures with at most {verified_up_to} elements")?;
                for n in &reduction.notes {
                    writeln!(f, "  {n}")?;
                }
                write!(f, "{}", reduction.interpretation)?;
            }
            Verdict::Unknown => {}
        }
        writeln!(f, "theoretical bounds: {}", self.bounds)?;
        for line in &self.log {
            writeln!(f, "log: {line}")?;
        }
        Ok(())
    }
}

//! Satisfiability over orbit templates.
//!
//! The search mode branches on the type of one variable set at a time,
//! propagates, and at a leaf (every set of at most `k` variables carries a
//! single type) builds the finite structure those types describe. The leaf
//! is accepted only after checking that the structure avoids every bound and
//! satisfies every constraint, so a returned witness is a certificate on its
//! own.

use std::collections::HashMap;

use crate::algebra::{Algebra, Conjunct};
use crate::error::{Error, Result};
use crate::minimality::{build_imax, kl_minimality_with, normalize_constraint, Engine, MinimalityOptions, VarSet};
use crate::relcore::{all_tuples, for_each_permutation, Constraint, Elem, Instance, Provenance, Signature, Structure, Tuple};

use super::{avoids_bounds, AtomicType, OrbitTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrbitMode {
    /// Trust a non-trivial (k, max(k, l))-minimal fixpoint.
    Theorem,
    /// Search for an explicit finite witness.
    Search,
}

/// A finite structure avoiding the bounds, with an assignment of the
/// variables into it under which every constraint holds. By homogeneity and
/// boundedness the structure embeds into the template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrbitWitness {
    pub structure: Structure,
    pub assignment: Vec<Elem>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OrbitVerdict {
    Sat(Option<OrbitWitness>),
    Unsat,
}

impl OrbitVerdict {
    pub fn is_sat(&self) -> bool {
        matches!(self, OrbitVerdict::Sat(_))
    }
}

/// Checks a witness against the bounds and every constraint.
pub fn check_witness(inst: &Instance<u32>, t: &OrbitTemplate, w: &OrbitWitness) -> bool {
    if w.assignment.len() != inst.variables.len() || w.structure.signature() != t.base() {
        return false;
    }
    if w.assignment.iter().any(|&e| e >= w.structure.domain_size()) {
        return false;
    }
    avoids_bounds(t.bounds(), &w.structure)
        && inst.constraints.iter().all(|c| {
            let img: Vec<Elem> = c.scope.iter().map(|&v| w.assignment[v]).collect();
            t.type_id(&AtomicType::of_tuple(&w.structure, &img))
                .is_some_and(|id| c.extent.binary_search(&id).is_ok())
        })
}

struct Search<'a> {
    t: &'a OrbitTemplate,
    nvars: usize,
    constraints: Vec<(Vec<usize>, Vec<u32>)>,
    set_index: HashMap<VarSet, usize>,
    extra: Option<(Vec<usize>, u32)>,
}

impl<'a> Search<'a> {
    fn new(t: &'a OrbitTemplate, inst: &Instance<u32>, engine: &Engine<'_, OrbitTemplate>) -> Self {
        let constraints = inst
            .constraints
            .iter()
            .filter(|c| c.provenance != Provenance::Full)
            .map(|c| (c.scope.clone(), c.extent.clone()))
            .collect();
        let set_index = engine.sets().iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Search {
            t,
            nvars: inst.variables.len(),
            constraints,
            set_index,
            extra: None,
        }
    }

    fn run(&self, e: &mut Engine<'_, OrbitTemplate>) -> Option<OrbitWitness> {
        if e.trivial() {
            return None;
        }
        let pick = (0..e.sets().len())
            .filter(|&s| e.domain(s).len() > 1)
            .min_by_key(|&s| (e.domain(s).len(), s));
        let Some(s) = pick else {
            return self.leaf(e);
        };
        let arity = e.sets()[s].len();
        let mut options: Vec<u32> = e.domain(s).iter().copied().collect();
        options.sort_by_key(|p| (!self.t.is_injective(arity, p), *p));
        for p in options {
            let snap = e.snapshot();
            e.narrow(s, [p]);
            if let Some(w) = self.run(e) {
                return Some(w);
            }
            e.restore(snap);
        }
        None
    }

    fn single(&self, e: &Engine<'_, OrbitTemplate>, vars: &[usize]) -> AtomicType {
        let s = self.set_index[&VarSet::from_slice(vars)];
        let id = *e.domain(s).iter().next().expect("singleton domain");
        self.t.atomic_type(vars.len(), id)
    }

    fn leaf(&self, e: &Engine<'_, OrbitTemplate>) -> Option<OrbitWitness> {
        let n = self.nvars;
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            p[x] = r;
            r
        }
        if self.t.k() >= 2 {
            for a in 0..n {
                for b in a + 1..n {
                    if self.single(e, &[a, b]).pattern()[1] == 0 {
                        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
            }
        }
        let mut class = vec![0 as Elem; n];
        let mut reps: Vec<usize> = Vec::new();
        for v in 0..n {
            let r = find(&mut parent, v);
            match reps.iter().position(|&x| x == r) {
                Some(c) => class[v] = c as Elem,
                None => {
                    class[v] = reps.len() as Elem;
                    reps.push(r);
                }
            }
        }
        let nc = reps.len() as u32;
        let base = self.t.base();
        let mut extents: Vec<Vec<Tuple>> = vec![Vec::new(); base.len()];
        for (r, sym) in base.relations.iter().enumerate() {
            for ct in all_tuples(nc, sym.arity) {
                let vars: Vec<usize> = ct.iter().map(|&c| reps[c as usize]).collect();
                let mut set: Vec<usize> = vars.clone();
                set.sort_unstable();
                set.dedup();
                let ty = self.single(e, &set);
                let positions: Vec<usize> = vars.iter().map(|v| set.iter().position(|w| w == v).unwrap()).collect();
                if ty.holds_at(r, &positions) {
                    extents[r].push(ct);
                }
            }
        }
        let s = Structure::new(base.clone(), nc, extents).expect("classes in range");
        for set in e.sets() {
            let img: Vec<Elem> = set.iter().map(|&v| class[v]).collect();
            if AtomicType::of_tuple(&s, &img) != self.single(e, set) {
                return None;
            }
        }
        let w = OrbitWitness {
            structure: s,
            assignment: class,
        };
        if !avoids_bounds(self.t.bounds(), &w.structure) {
            return None;
        }
        let holds = |scope: &[usize], extent: &[u32]| {
            let img: Vec<Elem> = scope.iter().map(|&v| w.assignment[v]).collect();
            self.t
                .type_id(&AtomicType::of_tuple(&w.structure, &img))
                .is_some_and(|id| extent.binary_search(&id).is_ok())
        };
        let ok = self.constraints.iter().all(|(scope, ext)| holds(scope, ext))
            && self.extra.as_ref().map_or(true, |(scope, id)| holds(scope, &[*id]));
        ok.then_some(w)
    }
}

/// Decides an orbit instance. Theorem mode answers from the
/// (k, max(k, l))-minimality fixpoint alone; search mode returns a checked
/// witness or exhausts the type choices.
pub fn solve_orbit(inst: &Instance<u32>, t: &OrbitTemplate, mode: OrbitMode) -> Result<OrbitVerdict> {
    inst.validate()?;
    let imax = build_imax(inst, t, t.k(), t.l());
    match mode {
        OrbitMode::Theorem => {
            let opts = MinimalityOptions {
                record: false,
                ..Default::default()
            };
            let dm = kl_minimality_with(&imax, t, t.k(), t.l(), opts)?;
            Ok(if dm.is_trivial() {
                OrbitVerdict::Unsat
            } else {
                OrbitVerdict::Sat(None)
            })
        }
        OrbitMode::Search => {
            let mut e = Engine::for_search(t, &imax, t.k())?;
            let search = Search::new(t, inst, &e);
            Ok(match search.run(&mut e) {
                Some(w) => OrbitVerdict::Sat(Some(w)),
                None => OrbitVerdict::Unsat,
            })
        }
    }
}

/// Decides an instance whose projection onto every set of `k` variables
/// (all variables, if fewer) holds exactly one injective type: the selected
/// types describe one finite structure, and the instance is satisfiable
/// exactly when no bound embeds into it.
pub fn solve_injective(inst: &Instance<u32>, t: &OrbitTemplate) -> Result<OrbitVerdict> {
    inst.validate()?;
    let n = inst.variables.len();
    if n == 0 {
        return Ok(OrbitVerdict::Sat(Some(OrbitWitness {
            structure: Structure::empty(t.base().clone(), 0),
            assignment: Vec::new(),
        })));
    }
    let size = t.k().min(n);
    let norm: Vec<(Vec<usize>, Vec<u32>)> = inst.constraints.iter().map(|c| normalize_constraint(t, c)).collect();
    let vars: Vec<usize> = (0..n).collect();
    let mut chosen: Vec<(Vec<usize>, AtomicType)> = Vec::new();
    for set in k_subsets(&vars, size) {
        let mut proj: Option<Vec<u32>> = None;
        for (scope, rows) in &norm {
            if !set.iter().all(|v| scope.contains(v)) {
                continue;
            }
            let positions: Vec<usize> = set.iter().map(|v| scope.iter().position(|w| w == v).unwrap()).collect();
            let p = t.orbit_project(scope.len(), rows, &positions);
            proj = Some(match proj {
                None => p,
                Some(q) => q.into_iter().filter(|x| p.binary_search(x).is_ok()).collect(),
            });
        }
        let proj = proj.unwrap_or_else(|| t.full(size));
        let inj: Vec<u32> = proj.into_iter().filter(|p| t.is_injective(size, p)).collect();
        if inj.len() != 1 {
            let names: Vec<&str> = set.iter().map(|&v| inst.variables[v].as_str()).collect();
            return Err(Error::Precondition(format!(
                "projection onto ({}) holds {} injective types",
                names.join(","),
                inj.len()
            )));
        }
        chosen.push((set, t.atomic_type(size, inj[0])));
    }
    let base = t.base();
    let mut extents: Vec<Vec<Tuple>> = vec![Vec::new(); base.len()];
    for (r, sym) in base.relations.iter().enumerate() {
        for tup in all_tuples(n as u32, sym.arity) {
            let (set, ty) = chosen
                .iter()
                .find(|(s, _)| tup.iter().all(|&v| s.contains(&(v as usize))))
                .expect("base arity is at most k");
            let positions: Vec<usize> = tup.iter().map(|&v| set.iter().position(|&w| w == v as usize).unwrap()).collect();
            if ty.holds_at(r, &positions) {
                extents[r].push(tup);
            }
        }
    }
    let s = Structure::new(base.clone(), n as u32, extents)?;
    for (set, ty) in &chosen {
        let img: Vec<Elem> = set.iter().map(|&v| v as Elem).collect();
        if &AtomicType::of_tuple(&s, &img) != ty {
            return Err(Error::Precondition("selected types disagree on shared subtuples".into()));
        }
    }
    if !avoids_bounds(t.bounds(), &s) {
        return Ok(OrbitVerdict::Unsat);
    }
    let w = OrbitWitness {
        structure: s,
        assignment: (0..n as Elem).collect(),
    };
    if !check_witness(inst, t, &w) {
        return Err(Error::Precondition("selected types violate a constraint".into()));
    }
    Ok(OrbitVerdict::Sat(Some(w)))
}

fn k_subsets(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    rec(items, k, 0, &mut cur, &mut out);
    out
}

/// Largest variable set a join may range over while eliminating.
const MAX_ELIMINATION_ARITY: usize = 5;

pub(super) fn solve_conjunction(t: &OrbitTemplate, nvars: usize, conjuncts: &[Conjunct<'_, u32>], free: &[usize]) -> Vec<u32> {
    if conjuncts.iter().any(|c| c.extent.is_empty()) {
        return Vec::new();
    }
    let mut rels: Vec<(Vec<usize>, Vec<u32>)> = conjuncts
        .iter()
        .map(|c| {
            let con = Constraint {
                scope: c.args.to_vec(),
                extent: c.extent.to_vec(),
                provenance: Provenance::Derived,
            };
            normalize_constraint(t, &con)
        })
        .collect();
    let Some(left) = eliminate(t, nvars, &mut rels, free) else {
        return Vec::new();
    };
    if left.len() == nvars {
        return search_conjunction(t, nvars, conjuncts, free);
    }
    // renumber the surviving variables
    let index = |v: usize| left.iter().position(|&w| w == v).unwrap();
    let owned: Vec<(Vec<usize>, Vec<u32>)> = rels
        .into_iter()
        .map(|(scope, ext)| (scope.into_iter().map(index).collect(), ext))
        .collect();
    let reduced: Vec<Conjunct<'_, u32>> = owned
        .iter()
        .map(|(args, extent)| Conjunct { args, extent })
        .collect();
    let free: Vec<usize> = free.iter().map(|&v| index(v)).collect();
    search_conjunction(t, left.len(), &reduced, &free)
}

/// Joins away existential variables, cheapest first, while the join stays
/// within [`MAX_ELIMINATION_ARITY`] variables. Returns the variables still
/// present, or `None` once some relation becomes empty.
fn eliminate(t: &OrbitTemplate, nvars: usize, rels: &mut Vec<(Vec<usize>, Vec<u32>)>, free: &[usize]) -> Option<Vec<usize>> {
    let mut alive: Vec<usize> = (0..nvars).collect();
    loop {
        let candidates = alive.iter().copied().filter(|v| !free.contains(v));
        let best = candidates
            .map(|v| {
                let mut union: Vec<usize> = rels
                    .iter()
                    .filter(|(s, _)| s.contains(&v))
                    .flat_map(|(s, _)| s.iter().copied())
                    .collect();
                union.sort_unstable();
                union.dedup();
                (union.len(), v)
            })
            .filter(|&(size, _)| size <= MAX_ELIMINATION_ARITY)
            .min();
        let Some((_, v)) = best else {
            return Some(alive);
        };
        alive.retain(|&w| w != v);
        let (bucket, rest): (Vec<_>, Vec<_>) = std::mem::take(rels).into_iter().partition(|(s, _)| s.contains(&v));
        *rels = rest;
        let mut bucket = bucket.into_iter();
        let Some(first) = bucket.next() else {
            continue;
        };
        let (vars, types) = bucket.fold(first, |(va, sa), (vb, sb)| t.orbit_join(&va, &sa, &vb, &sb));
        let keep: Vec<usize> = (0..vars.len()).filter(|&i| vars[i] != v).collect();
        let projected = t.orbit_project(vars.len(), &types, &keep);
        if projected.is_empty() {
            return None;
        }
        if !keep.is_empty() {
            rels.push((keep.iter().map(|&i| vars[i]).collect(), projected));
        }
    }
}

fn search_conjunction(t: &OrbitTemplate, nvars: usize, conjuncts: &[Conjunct<'_, u32>], free: &[usize]) -> Vec<u32> {
    let m = free.len();
    let mut seen = vec![false; nvars];
    for &v in free {
        assert!(!seen[v], "free variables must be distinct");
        seen[v] = true;
    }
    if m == nvars {
        // every variable is free: a type qualifies iff each conjunct's restriction does
        let maps: Vec<_> = conjuncts
            .iter()
            .map(|c| {
                let positions: Vec<usize> = c.args.iter().map(|a| free.iter().position(|f| f == a).unwrap()).collect();
                t.restriction_map(m, &positions)
            })
            .collect();
        return (0..t.type_count(m) as u32)
            .filter(|&id| {
                conjuncts
                    .iter()
                    .zip(&maps)
                    .all(|(c, map)| c.extent.binary_search(&map[id as usize]).is_ok())
            })
            .collect();
    }
    let mut inst: Instance<u32> = Instance::new((0..nvars).map(|i| format!("x{i}")));
    for c in conjuncts {
        inst.constraints.push(Constraint {
            scope: c.args.to_vec(),
            extent: c.extent.to_vec(),
            provenance: Provenance::Derived,
        });
    }
    let imax = build_imax(&inst, t, t.k(), t.l());
    let mut e = Engine::for_search(t, &imax, t.k()).expect("variables are declared");
    if e.trivial() {
        return Vec::new();
    }
    let mut search = Search::new(t, &inst, &e);
    // each set of at most k free variables, with its positions inside `free`
    let free_sets: Vec<(usize, Vec<usize>)> = {
        let positions: Vec<usize> = (0..m).collect();
        let mut out = Vec::new();
        for size in 1..=t.k().min(m) {
            for pos in k_subsets(&positions, size) {
                let mut pairs: Vec<(usize, usize)> = pos.iter().map(|&p| (free[p], p)).collect();
                pairs.sort_unstable();
                let set: VarSet = pairs.iter().map(|&(v, _)| v).collect();
                let ordered: Vec<usize> = pairs.iter().map(|&(_, p)| p).collect();
                out.push((search.set_index[&set], ordered));
            }
        }
        out
    };
    let maps: Vec<_> = free_sets.iter().map(|(_, pos)| t.restriction_map(m, pos)).collect();
    let mut out = Vec::new();
    for id in 0..t.type_count(m) as u32 {
        if !free_sets
            .iter()
            .zip(&maps)
            .all(|((s, _), map)| e.domain(*s).contains(&map[id as usize]))
        {
            continue;
        }
        let snap = e.snapshot();
        for ((s, _), map) in free_sets.iter().zip(&maps) {
            e.narrow(*s, [map[id as usize]]);
        }
        search.extra = Some((free.to_vec(), id));
        if search.run(&mut e).is_some() {
            out.push(id);
        }
        e.restore(snap);
    }
    out
}

/// Reads an orbit instance as a finite structure over the template's named
/// relations. A constraint on distinct variables also yields every
/// reordering that some named relation expresses: if permuting the
/// coordinates of `R` gives the extent of `S`, then `R(x)` contributes
/// `S(x∘σ)` as well. Constraints with repeated variables are taken as given.
pub fn closure_structure(inst: &Instance<u32>, t: &OrbitTemplate) -> Result<Structure> {
    inst.validate()?;
    let symbols = t.relation_symbols();
    let sig = Signature::new(symbols.iter().map(|(n, a)| (n.clone(), *a)))?;
    let extents_of: Vec<Vec<u32>> = symbols.iter().map(|(n, _)| t.relation(n).unwrap().1.into_owned()).collect();
    let mut extents: Vec<Vec<Tuple>> = vec![Vec::new(); sig.len()];
    for c in &inst.constraints {
        let arity = c.scope.len();
        let r = match &c.provenance {
            Provenance::Full => continue,
            Provenance::Relation(name) => sig.index_of(name).ok_or_else(|| Error::UnknownRelation(name.clone()))?,
            Provenance::Derived => (0..sig.len())
                .find(|&r| sig.relations[r].arity == arity && extents_of[r] == c.extent)
                .ok_or_else(|| Error::UnknownRelation("derived extent matches no named relation".into()))?,
        };
        let scope: Tuple = c.scope.iter().map(|&v| v as Elem).collect();
        extents[r].push(scope.clone());
        let injective = (0..arity).all(|i| (i + 1..arity).all(|j| scope[i] != scope[j]));
        if !injective {
            continue;
        }
        for_each_permutation(arity, |perm| {
            let positions: Vec<usize> = perm.iter().map(|&p| p as usize).collect();
            let permuted = t.orbit_project(arity, &extents_of[r], &positions);
            for (s, ext) in extents_of.iter().enumerate() {
                if sig.relations[s].arity == arity && *ext == permuted {
                    extents[s].push(positions.iter().map(|&p| scope[p]).collect());
                }
            }
        });
    }
    Structure::new(sig, inst.variables.len() as u32, extents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbits::builtin;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn elimination_agrees_with_search() {
        let mut rng = StdRng::seed_from_u64(5);
        for name in ["QLT", "RGEN", "RGEN_PHI", "TFG"] {
            let t = builtin(name).unwrap();
            let symbols = t.relation_symbols();
            for _ in 0..60 {
                let nvars = rng.gen_range(1..=5);
                let owned: Vec<(Vec<usize>, Vec<u32>)> = (0..rng.gen_range(1..=4))
                    .map(|_| {
                        let (rel, arity) = &symbols[rng.gen_range(0..symbols.len())];
                        let args = (0..*arity).map(|_| rng.gen_range(0..nvars)).collect();
                        (args, t.relation(rel).unwrap().1.into_owned())
                    })
                    .collect();
                let conjuncts: Vec<Conjunct<'_, u32>> = owned.iter().map(|(args, extent)| Conjunct { args, extent }).collect();
                let free: Vec<usize> = (0..nvars).filter(|_| rng.gen_bool(0.4)).collect();
                assert_eq!(
                    solve_conjunction(&t, nvars, &conjuncts, &free),
                    search_conjunction(&t, nvars, &conjuncts, &free),
                    "{name} {owned:?} free {free:?}"
                );
            }
        }
    }
}

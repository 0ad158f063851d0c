//! Finite relational structures, instances and the brute-force oracles.

use std::borrow::Cow;
use std::collections::{HashMap, HashSet};
use std::fmt;

use smallvec::SmallVec;

use crate::algebra::{Algebra, Conjunct};
use crate::error::{Error, Result};

pub type Elem = u32;
pub type Tuple = SmallVec<[Elem; 4]>;

/// Builds a [`Tuple`] from anything iterable.
pub fn tuple<I: IntoIterator<Item = Elem>>(it: I) -> Tuple {
    it.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RelSymbol {
    pub name: String,
    pub arity: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Signature {
    pub relations: Vec<RelSymbol>,
}

impl Signature {
    pub fn new<S: Into<String>>(rels: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let mut relations = Vec::new();
        let mut seen = HashSet::new();
        for (name, arity) in rels {
            let name = name.into();
            if !seen.insert(name.clone()) {
                return Err(Error::Duplicate(name));
            }
            if arity == 0 {
                return Err(Error::Invalid(format!("relation `{name}` has arity 0")));
            }
            relations.push(RelSymbol { name, arity });
        }
        Ok(Signature { relations })
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r.name == name)
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }
}

/// A finite relational structure over the elements `0..domain_size`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Structure {
    signature: Signature,
    domain_size: u32,
    extents: Vec<Vec<Tuple>>,
}

impl Structure {
    /// Validates tuple lengths and ranges, then sorts and deduplicates every extent.
    pub fn new(signature: Signature, domain_size: u32, extents: Vec<Vec<Tuple>>) -> Result<Self> {
        if extents.len() != signature.len() {
            return Err(Error::Invalid(format!(
                "{} extents for {} relations",
                extents.len(),
                signature.len()
            )));
        }
        let mut extents = extents;
        for (rel, ext) in signature.relations.iter().zip(extents.iter_mut()) {
            for t in ext.iter() {
                if t.len() != rel.arity {
                    return Err(Error::ArityMismatch {
                        name: rel.name.clone(),
                        expected: rel.arity,
                        found: t.len(),
                    });
                }
                if let Some(&e) = t.iter().find(|&&e| e >= domain_size) {
                    return Err(Error::ElementOutOfRange {
                        element: e,
                        domain_size,
                    });
                }
            }
            ext.sort();
            ext.dedup();
        }
        Ok(Structure {
            signature,
            domain_size,
            extents,
        })
    }

    /// Convenience constructor from `(name, arity, tuples)` triples.
    pub fn from_relations<S: Into<String>>(
        domain_size: u32,
        rels: impl IntoIterator<Item = (S, usize, Vec<Vec<Elem>>)>,
    ) -> Result<Self> {
        let mut names = Vec::new();
        let mut extents = Vec::new();
        for (name, arity, tuples) in rels {
            names.push((name.into(), arity));
            extents.push(tuples.into_iter().map(Tuple::from_vec).collect());
        }
        Structure::new(Signature::new(names)?, domain_size, extents)
    }

    /// A structure with the given signature and no tuples.
    pub fn empty(signature: Signature, domain_size: u32) -> Self {
        let extents = vec![Vec::new(); signature.len()];
        Structure {
            signature,
            domain_size,
            extents,
        }
    }

    pub fn signature(&self) -> &Signature {
        &self.signature
    }

    pub fn domain_size(&self) -> u32 {
        self.domain_size
    }

    pub fn extents(&self) -> &[Vec<Tuple>] {
        &self.extents
    }

    pub fn extent(&self, name: &str) -> Option<&[Tuple]> {
        self.signature.index_of(name).map(|i| &self.extents[i][..])
    }

    pub fn contains(&self, rel: usize, t: &[Elem]) -> bool {
        self.extents[rel]
            .binary_search_by(|x| x.as_slice().cmp(t))
            .is_ok()
    }

    pub fn tuple_count(&self) -> usize {
        self.extents.iter().map(Vec::len).sum()
    }

    /// All `(relation index, tuple)` pairs in canonical order.
    pub fn facts(&self) -> impl Iterator<Item = (usize, &Tuple)> {
        self.extents
            .iter()
            .enumerate()
            .flat_map(|(r, ext)| ext.iter().map(move |t| (r, t)))
    }

    /// Image under an element renaming `perm` (`perm[old] = new`).
    pub fn relabel(&self, perm: &[Elem], domain_size: u32) -> Self {
        let extents = self
            .extents
            .iter()
            .map(|ext| {
                let mut v: Vec<Tuple> = ext
                    .iter()
                    .map(|t| t.iter().map(|&e| perm[e as usize]).collect())
                    .collect();
                v.sort();
                v.dedup();
                v
            })
            .collect();
        Structure {
            signature: self.signature.clone(),
            domain_size,
            extents,
        }
    }

    /// Same structure with a set of facts removed.
    pub fn without_facts(&self, drop: &HashSet<(usize, Tuple)>) -> Self {
        let extents = self
            .extents
            .iter()
            .enumerate()
            .map(|(r, ext)| {
                ext.iter()
                    .filter(|t| !drop.contains(&(r, (*t).clone())))
                    .cloned()
                    .collect()
            })
            .collect();
        Structure {
            signature: self.signature.clone(),
            domain_size: self.domain_size,
            extents,
        }
    }

    /// Drops elements occurring in no tuple and renumbers the rest in order.
    pub fn compact(&self) -> Self {
        let mut used = vec![false; self.domain_size as usize];
        for (_, t) in self.facts() {
            for &e in t {
                used[e as usize] = true;
            }
        }
        let mut perm = vec![0; self.domain_size as usize];
        let mut next = 0;
        for (e, &u) in used.iter().enumerate() {
            if u {
                perm[e] = next;
                next += 1;
            }
        }
        self.relabel(&perm, next)
    }

    /// The connected components of the Gaifman graph as induced
    /// substructures; elements in no tuple and nullary facts are dropped.
    pub fn components(&self) -> Vec<Structure> {
        let n = self.domain_size as usize;
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut used = vec![false; n];
        for (_, t) in self.facts() {
            let Some(&first) = t.first() else { continue };
            for &e in t {
                used[e as usize] = true;
                let (a, b) = (find(&mut parent, first as usize), find(&mut parent, e as usize));
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut groups: Vec<Vec<Elem>> = Vec::new();
        let mut slot: HashMap<usize, usize> = HashMap::new();
        for e in 0..n {
            if used[e] {
                let r = find(&mut parent, e);
                let g = *slot.entry(r).or_insert_with(|| {
                    groups.push(Vec::new());
                    groups.len() - 1
                });
                groups[g].push(e as Elem);
            }
        }
        groups.iter().map(|g| self.induced(g)).collect()
    }

    /// The substructure induced on `keep` (renumbered in the given order).
    pub fn induced(&self, keep: &[Elem]) -> Self {
        let mut perm = vec![u32::MAX; self.domain_size as usize];
        for (i, &e) in keep.iter().enumerate() {
            perm[e as usize] = i as u32;
        }
        let extents = self
            .extents
            .iter()
            .map(|ext| {
                let mut v: Vec<Tuple> = ext
                    .iter()
                    .filter(|t| t.iter().all(|&e| perm[e as usize] != u32::MAX))
                    .map(|t| t.iter().map(|&e| perm[e as usize]).collect())
                    .collect();
                v.sort();
                v
            })
            .collect();
        Structure {
            signature: self.signature.clone(),
            domain_size: keep.len() as u32,
            extents,
        }
    }

    /// Canonical representative of the isomorphism class: the least relabelling
    /// over all permutations of the domain. Exhaustive, meant for at most 8 elements.
    pub fn canonical_form(&self) -> Structure {
        let n = self.domain_size as usize;
        let mut best: Option<Structure> = None;
        for_each_permutation(n, |perm| {
            let cand = self.relabel(perm, self.domain_size);
            if best.as_ref().map_or(true, |b| cand.extents < b.extents) {
                best = Some(cand);
            }
        });
        best.unwrap_or_else(|| self.clone())
    }

    pub fn is_isomorphic(&self, other: &Structure) -> bool {
        self.signature == other.signature
            && self.domain_size == other.domain_size
            && self.tuple_count() == other.tuple_count()
            && self.canonical_form() == other.canonical_form()
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{} elements;", self.domain_size)?;
        let mut first = true;
        for (r, t) in self.facts() {
            let args: Vec<String> = t.iter().map(u32::to_string).collect();
            let sep = if first { " " } else { ", " };
            write!(f, "{sep}{}({})", self.signature.relations[r].name, args.join(","))?;
            first = false;
        }
        write!(f, " }}")
    }
}

/// Calls `f` on every permutation of `0..n` in lexicographic order.
pub fn for_each_permutation(n: usize, mut f: impl FnMut(&[Elem])) {
    let mut perm: Vec<Elem> = (0..n as Elem).collect();
    loop {
        f(&perm);
        // next lexicographic permutation
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| perm[i] < perm[i + 1]) else {
            return;
        };
        let j = (i + 1..n).rev().find(|&j| perm[j] > perm[i]).unwrap();
        perm.swap(i, j);
        perm[i + 1..].reverse();
    }
}

/// Where a constraint's extent came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Provenance {
    /// The extent of a named template relation.
    Relation(String),
    /// An explicit extent not tied to a relation name.
    Derived,
    /// The full relation over the scope (added by `build_imax`).
    Full,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Relation(n) => write!(f, "{n}"),
            Provenance::Derived => write!(f, "derived"),
            Provenance::Full => write!(f, "full"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Constraint<P> {
    pub scope: Vec<usize>,
    pub extent: Vec<P>,
    pub provenance: Provenance,
}

/// A CSP instance: named variables and constraints with explicit extents.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instance<P> {
    pub variables: Vec<String>,
    pub constraints: Vec<Constraint<P>>,
}

impl<P: Clone + Ord> Instance<P> {
    pub fn new<S: Into<String>>(variables: impl IntoIterator<Item = S>) -> Self {
        Instance {
            variables: variables.into_iter().map(Into::into).collect(),
            constraints: Vec::new(),
        }
    }

    pub fn var(&self, name: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::UndeclaredVariable(name.to_string()))
    }

    /// Index of `name`, declaring it if needed.
    pub fn var_or_insert(&mut self, name: &str) -> usize {
        match self.variables.iter().position(|v| v == name) {
            Some(i) => i,
            None => {
                self.variables.push(name.to_string());
                self.variables.len() - 1
            }
        }
    }

    /// Adds a constraint using a named relation of the template.
    pub fn constrain<A: Algebra<Point = P>>(
        &mut self,
        alg: &A,
        relation: &str,
        scope: &[&str],
    ) -> Result<()> {
        let (arity, ext) = alg
            .relation(relation)
            .ok_or_else(|| Error::UnknownRelation(relation.to_string()))?;
        if arity != scope.len() {
            return Err(Error::ArityMismatch {
                name: relation.to_string(),
                expected: arity,
                found: scope.len(),
            });
        }
        let scope = scope.iter().map(|v| self.var(v)).collect::<Result<Vec<_>>>()?;
        self.constraints.push(Constraint {
            scope,
            extent: ext.into_owned(),
            provenance: Provenance::Relation(relation.to_string()),
        });
        Ok(())
    }

    /// Adds a constraint with an explicit extent.
    pub fn constrain_extent(&mut self, scope: &[&str], mut extent: Vec<P>) -> Result<()> {
        let scope = scope.iter().map(|v| self.var(v)).collect::<Result<Vec<_>>>()?;
        extent.sort();
        extent.dedup();
        self.constraints.push(Constraint {
            scope,
            extent,
            provenance: Provenance::Derived,
        });
        Ok(())
    }

    /// Checks that every scope entry is a declared variable.
    pub fn validate(&self) -> Result<()> {
        for c in &self.constraints {
            if let Some(&v) = c.scope.iter().find(|&&v| v >= self.variables.len()) {
                return Err(Error::UndeclaredVariable(format!("#{v}")));
            }
        }
        Ok(())
    }

    /// Whether some constraint has an empty extent.
    pub fn is_trivial(&self) -> bool {
        self.constraints.iter().any(|c| c.extent.is_empty())
    }
}

/// A total map from the instance's variables (by index) to domain elements.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment(pub Vec<Elem>);

impl Assignment {
    pub fn get(&self, var: usize) -> Elem {
        self.0[var]
    }

    pub fn satisfies(&self, inst: &Instance<Tuple>) -> bool {
        inst.constraints.iter().all(|c| {
            let t: Tuple = c.scope.iter().map(|&v| self.0[v]).collect();
            c.extent.binary_search(&t).is_ok() || c.extent.contains(&t)
        })
    }
}

fn check_signatures(src: &Signature, dst: &Signature) -> Result<()> {
    for r in &src.relations {
        match dst.index_of(&r.name) {
            Some(j) if dst.relations[j].arity == r.arity => {}
            Some(j) => {
                return Err(Error::SignatureMismatch(format!(
                    "`{}` has arity {} vs {}",
                    r.name, r.arity, dst.relations[j].arity
                )))
            }
            None => {
                return Err(Error::SignatureMismatch(format!(
                    "`{}` missing from target",
                    r.name
                )))
            }
        }
    }
    Ok(())
}

/// Backtracking core shared by the homomorphism and brute-force solvers.
/// `checks[v]` lists the (scope, allowed set) pairs whose last variable is `v`.
struct Backtrack<'a> {
    n: usize,
    domain: u32,
    checks: Vec<Vec<(&'a [usize], &'a HashSet<Tuple>)>>,
}

impl Backtrack<'_> {
    fn run(&self, mut on_solution: impl FnMut(&[Elem]) -> bool) {
        if self.n == 0 {
            on_solution(&[]);
            return;
        }
        if self.domain == 0 {
            return;
        }
        let mut vals = vec![0 as Elem; self.n];
        let mut v = 0usize;
        let mut fresh = true;
        loop {
            if !fresh {
                // advance the value of v, or backtrack
                loop {
                    vals[v] += 1;
                    if vals[v] < self.domain {
                        break;
                    }
                    if v == 0 {
                        return;
                    }
                    v -= 1;
                }
            }
            fresh = false;
            let ok = self.checks[v].iter().all(|(scope, set)| {
                let t: Tuple = scope.iter().map(|&x| vals[x]).collect();
                set.contains(&t)
            });
            if ok {
                if v + 1 == self.n {
                    if on_solution(&vals) {
                        return;
                    }
                } else {
                    v += 1;
                    vals[v] = 0;
                    fresh = true;
                }
            }
        }
    }
}

/// A homomorphism `src -> dst` if one exists: first in the lexicographic order
/// of images, elements assigned in order `0..n`.
pub fn find_homomorphism(src: &Structure, dst: &Structure) -> Result<Option<Vec<Elem>>> {
    check_signatures(src.signature(), dst.signature())?;
    let sets: Vec<HashSet<Tuple>> = src
        .signature()
        .relations
        .iter()
        .map(|r| {
            dst.extent(&r.name)
                .unwrap()
                .iter()
                .cloned()
                .collect::<HashSet<_>>()
        })
        .collect();
    let scopes: Vec<(usize, Vec<usize>)> = src
        .facts()
        .map(|(r, t)| (r, t.iter().map(|&e| e as usize).collect()))
        .collect();
    let n = src.domain_size() as usize;
    let mut checks = vec![Vec::new(); n];
    for (r, scope) in &scopes {
        let last = *scope.iter().max().unwrap();
        checks[last].push((&scope[..], &sets[*r]));
    }
    let bt = Backtrack {
        n,
        domain: dst.domain_size(),
        checks,
    };
    let mut found = None;
    bt.run(|vals| {
        found = Some(vals.to_vec());
        true
    });
    Ok(found)
}

fn brute_checks(inst: &Instance<Tuple>) -> Result<Vec<(Vec<usize>, HashSet<Tuple>)>> {
    inst.validate()?;
    Ok(inst
        .constraints
        .iter()
        .map(|c| (c.scope.clone(), c.extent.iter().cloned().collect()))
        .collect())
}

fn run_brute(
    inst: &Instance<Tuple>,
    template: &Structure,
    on_solution: impl FnMut(&[Elem]) -> bool,
) -> Result<()> {
    let cs = brute_checks(inst)?;
    let n = inst.variables.len();
    let mut checks = vec![Vec::new(); n];
    for (scope, set) in &cs {
        match scope.iter().max() {
            Some(&last) => checks[last].push((&scope[..], set)),
            None => {
                // nullary constraint: satisfiable iff it contains the empty tuple
                if set.is_empty() {
                    return Ok(());
                }
            }
        }
    }
    Backtrack {
        n,
        domain: template.domain_size(),
        checks,
    }
    .run(on_solution);
    Ok(())
}

/// Exhaustive solver: the first satisfying assignment in lexicographic order.
pub fn solve_brute(inst: &Instance<Tuple>, template: &Structure) -> Result<Option<Assignment>> {
    let mut found = None;
    run_brute(inst, template, |vals| {
        found = Some(Assignment(vals.to_vec()));
        true
    })?;
    Ok(found)
}

/// Every satisfying assignment, in lexicographic order.
pub fn solutions_brute(inst: &Instance<Tuple>, template: &Structure) -> Result<Vec<Assignment>> {
    let mut all = Vec::new();
    run_brute(inst, template, |vals| {
        all.push(Assignment(vals.to_vec()));
        false
    })?;
    Ok(all)
}

/// Reads an instance as a structure whose domain is its variables.
///
/// Constraints with a named relation contribute their scope tuple; derived
/// extents are matched against the template's named relations; full
/// constraints carry no information and are skipped.
pub fn instance_to_structure<A: Algebra>(
    inst: &Instance<A::Point>,
    template: &A,
) -> Result<Structure> {
    inst.validate()?;
    let symbols = template.relation_symbols();
    let signature = Signature::new(symbols.iter().map(|(n, a)| (n.clone(), *a)))?;
    let mut extents: Vec<Vec<Tuple>> = vec![Vec::new(); signature.len()];
    for c in &inst.constraints {
        let name = match &c.provenance {
            Provenance::Full => continue,
            Provenance::Relation(n) => n.clone(),
            Provenance::Derived => symbols
                .iter()
                .find(|(n, a)| {
                    *a == c.scope.len()
                        && template
                            .relation(n)
                            .is_some_and(|(_, ext)| ext.as_ref() == c.extent.as_slice())
                })
                .map(|(n, _)| n.clone())
                .ok_or_else(|| {
                    Error::UnknownRelation("derived extent matches no named relation".into())
                })?,
        };
        let r = signature
            .index_of(&name)
            .ok_or_else(|| Error::UnknownRelation(name.clone()))?;
        extents[r].push(c.scope.iter().map(|&v| v as Elem).collect());
    }
    Structure::new(signature, inst.variables.len() as u32, extents)
}

/// Reads a structure as an instance: one variable per element, one constraint per tuple.
pub fn structure_to_instance<A: Algebra>(s: &Structure, template: &A) -> Result<Instance<A::Point>> {
    let mut inst = Instance::new((0..s.domain_size()).map(|e| format!("v{e}")));
    for (r, t) in s.facts() {
        let sym = &s.signature().relations[r];
        let (arity, ext) = template
            .relation(&sym.name)
            .ok_or_else(|| Error::SignatureMismatch(format!("`{}` missing from template", sym.name)))?;
        if arity != sym.arity {
            return Err(Error::SignatureMismatch(format!(
                "`{}` has arity {} vs {}",
                sym.name, sym.arity, arity
            )));
        }
        inst.constraints.push(Constraint {
            scope: t.iter().map(|&e| e as usize).collect(),
            extent: ext.into_owned(),
            provenance: Provenance::Relation(sym.name.clone()),
        });
    }
    Ok(inst)
}

/// All endomorphisms of a finite structure, in lexicographic order.
pub fn endomorphisms(s: &Structure) -> Vec<Vec<Elem>> {
    let sets: Vec<HashSet<Tuple>> = s.extents().iter().map(|e| e.iter().cloned().collect()).collect();
    let scopes: Vec<(usize, Vec<usize>)> = s
        .facts()
        .map(|(r, t)| (r, t.iter().map(|&e| e as usize).collect()))
        .collect();
    let n = s.domain_size() as usize;
    let mut checks = vec![Vec::new(); n];
    for (r, scope) in &scopes {
        checks[*scope.iter().max().unwrap()].push((&scope[..], &sets[*r]));
    }
    let mut all = Vec::new();
    Backtrack {
        n,
        domain: s.domain_size(),
        checks,
    }
    .run(|vals| {
        all.push(vals.to_vec());
        false
    });
    all
}

/// Core with all constants: every endomorphism is a bijection (hence an
/// automorphism of a finite structure) and every singleton is a unary extent.
pub fn is_core_with_constants(template: &Structure) -> bool {
    let n = template.domain_size();
    let has_constants = (0..n).all(|a| {
        template
            .signature()
            .relations
            .iter()
            .zip(template.extents())
            .any(|(r, ext)| r.arity == 1 && ext.len() == 1 && ext[0][0] == a)
    });
    if !has_constants {
        return false;
    }
    endomorphisms(template).iter().all(|h| {
        let mut seen = vec![false; n as usize];
        h.iter().all(|&x| !std::mem::replace(&mut seen[x as usize], true))
    })
}

/// Evaluates a conjunction over a finite structure: left-deep hash join in
/// conjunct order, dropping each variable as soon as no later conjunct or
/// output needs it.
pub(crate) fn join_conjunction(
    domain_size: u32,
    nvars: usize,
    conjuncts: &[Conjunct<'_, Tuple>],
    free: &[usize],
) -> Vec<Tuple> {
    // last conjunct index mentioning each variable
    let mut last_use = vec![None; nvars];
    for (i, c) in conjuncts.iter().enumerate() {
        for &v in c.args {
            last_use[v] = Some(i);
        }
    }
    let is_free: Vec<bool> = {
        let mut f = vec![false; nvars];
        for &v in free {
            f[v] = true;
        }
        f
    };
    let mut cols: Vec<usize> = Vec::new();
    let mut rows: HashSet<Tuple> = HashSet::from([Tuple::new()]);
    for (i, c) in conjuncts.iter().enumerate() {
        if rows.is_empty() {
            break;
        }
        // positions of the atom bound to existing columns, and new variables
        let col_pos: HashMap<usize, usize> = cols.iter().enumerate().map(|(p, &v)| (v, p)).collect();
        let mut bound: Vec<(usize, usize)> = Vec::new(); // (atom position, column)
        let mut new_vars: Vec<usize> = Vec::new();
        let mut first_pos: HashMap<usize, usize> = HashMap::new();
        let mut repeats: Vec<(usize, usize)> = Vec::new();
        for (p, &v) in c.args.iter().enumerate() {
            if let Some(&q) = first_pos.get(&v) {
                repeats.push((p, q));
                continue;
            }
            first_pos.insert(v, p);
            match col_pos.get(&v) {
                Some(&col) => bound.push((p, col)),
                None => new_vars.push(v),
            }
        }
        let mut index: HashMap<Tuple, Vec<&Tuple>> = HashMap::new();
        for t in c.extent {
            if repeats.iter().any(|&(p, q)| t[p] != t[q]) {
                continue;
            }
            let key: Tuple = bound.iter().map(|&(p, _)| t[p]).collect();
            index.entry(key).or_default().push(t);
        }
        let mut next_cols = cols.clone();
        next_cols.extend(new_vars.iter().copied());
        let keep: Vec<usize> = (0..next_cols.len())
            .filter(|&k| {
                let v = next_cols[k];
                is_free[v] || last_use[v].is_some_and(|l| l > i)
            })
            .collect();
        let new_pos: Vec<usize> = new_vars.iter().map(|v| first_pos[v]).collect();
        let mut next_rows = HashSet::new();
        for row in &rows {
            let key: Tuple = bound.iter().map(|&(_, col)| row[col]).collect();
            if let Some(ts) = index.get(&key) {
                for t in ts {
                    let full: Tuple = row.iter().copied().chain(new_pos.iter().map(|&p| t[p])).collect();
                    next_rows.insert(keep.iter().map(|&k| full[k]).collect::<Tuple>());
                }
            }
        }
        cols = keep.iter().map(|&k| next_cols[k]).collect();
        rows = next_rows;
    }
    // free variables occurring in no conjunct range over the whole domain
    let col_pos: HashMap<usize, usize> = cols.iter().enumerate().map(|(p, &v)| (v, p)).collect();
    let mut out: Vec<Tuple> = Vec::new();
    for row in &rows {
        let mut partial: Vec<Tuple> = vec![Tuple::new()];
        for &v in free {
            match col_pos.get(&v) {
                Some(&p) => partial.iter_mut().for_each(|t| t.push(row[p])),
                None => {
                    partial = partial
                        .iter()
                        .flat_map(|t| {
                            (0..domain_size).map(move |a| {
                                let mut t = t.clone();
                                t.push(a);
                                t
                            })
                        })
                        .collect()
                }
            }
        }
        out.extend(partial);
    }
    out.sort();
    out.dedup();
    out
}

/// Every tuple of the given arity over `0..n`, lexicographic.
pub fn all_tuples(n: u32, arity: usize) -> Vec<Tuple> {
    let mut out = vec![Tuple::new()];
    for _ in 0..arity {
        out = out
            .iter()
            .flat_map(|t| {
                (0..n).map(move |a| {
                    let mut t = t.clone();
                    t.push(a);
                    t
                })
            })
            .collect();
    }
    out
}

/// Limit on the number of non-unary tuple classes enumerated by
/// [`nonisomorphic_closed_structures`].
pub const ENUMERATION_BITS: usize = 24;

/// One representative of every isomorphism class of `sig`-structures on
/// exactly `n` elements.
pub fn nonisomorphic_structures(sig: &Signature, n: u32) -> Result<Vec<Structure>> {
    nonisomorphic_closed_structures(sig, n, |_, _| Vec::new())
}

/// Like [`nonisomorphic_structures`], restricted to structures closed under
/// `linked`: whenever a non-unary fact is present, so are the facts it is
/// linked to. `linked` must commute with renaming elements.
///
/// Unary relations are read as element labels (kept sorted); the classes of
/// linked non-unary tuples are enumerated as a bit mask and a structure is
/// kept when no label-preserving permutation produces a smaller mask.
pub fn nonisomorphic_closed_structures(
    sig: &Signature,
    n: u32,
    linked: impl Fn(usize, &Tuple) -> Vec<(usize, Tuple)>,
) -> Result<Vec<Structure>> {
    let unary: Vec<usize> = (0..sig.len()).filter(|&r| sig.relations[r].arity == 1).collect();
    let slots: Vec<(usize, Tuple)> = (0..sig.len())
        .filter(|&r| sig.relations[r].arity != 1)
        .flat_map(|r| all_tuples(n, sig.relations[r].arity).into_iter().map(move |t| (r, t)))
        .collect();
    let slot_index: HashMap<(usize, Tuple), usize> =
        slots.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
    // classes of linked slots
    let mut parent: Vec<usize> = (0..slots.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, (r, t)) in slots.iter().enumerate() {
        for key in linked(*r, t) {
            let j = *slot_index
                .get(&key)
                .ok_or_else(|| Error::Invalid("linked tuple outside the slot list".into()))?;
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut class_of = vec![0usize; slots.len()];
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut root_class: HashMap<usize, usize> = HashMap::new();
    for i in 0..slots.len() {
        let root = find(&mut parent, i);
        let c = *root_class.entry(root).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        class_of[i] = c;
        members[c].push(i);
    }
    if members.len() > ENUMERATION_BITS {
        return Err(Error::Precondition(format!(
            "{} tuple classes on {n} elements exceed the enumeration limit of {ENUMERATION_BITS}",
            members.len()
        )));
    }
    let label_count = 1u32 << unary.len();
    let mut out = Vec::new();
    let mut labels: Vec<u32> = vec![0; n as usize];
    loop {
        let mut perms: Vec<Vec<usize>> = Vec::new();
        for_each_permutation(n as usize, |p| {
            if p.iter().enumerate().any(|(i, &j)| i != j as usize)
                && p.iter().enumerate().all(|(i, &j)| labels[i] == labels[j as usize])
            {
                let map = members
                    .iter()
                    .map(|m| {
                        let (r, t) = &slots[m[0]];
                        let img: Tuple = t.iter().map(|&e| p[e as usize]).collect();
                        class_of[slot_index[&(*r, img)]]
                    })
                    .collect();
                perms.push(map);
            }
        });
        for mask in 0u64..(1u64 << members.len()) {
            let canonical = perms.iter().all(|map| {
                let mut img = 0u64;
                let mut bits = mask;
                while bits != 0 {
                    let i = bits.trailing_zeros() as usize;
                    img |= 1 << map[i];
                    bits &= bits - 1;
                }
                img >= mask
            });
            if !canonical {
                continue;
            }
            let mut extents: Vec<Vec<Tuple>> = vec![Vec::new(); sig.len()];
            for (e, &l) in labels.iter().enumerate() {
                for (b, &r) in unary.iter().enumerate() {
                    if l >> b & 1 == 1 {
                        extents[r].push(tuple([e as Elem]));
                    }
                }
            }
            for (c, m) in members.iter().enumerate() {
                if mask >> c & 1 == 1 {
                    for &i in m {
                        extents[slots[i].0].push(slots[i].1.clone());
                    }
                }
            }
            out.push(Structure::new(sig.clone(), n, extents)?);
        }
        // next non-decreasing label sequence
        let Some(i) = (0..n as usize).rev().find(|&i| labels[i] + 1 < label_count) else {
            break;
        };
        let v = labels[i] + 1;
        for l in &mut labels[i..] {
            *l = v;
        }
    }
    Ok(out)
}

impl Algebra for Structure {
    type Point = Tuple;

    fn full(&self, arity: usize) -> Vec<Tuple> {
        all_tuples(self.domain_size, arity)
    }

    fn restrict(&self, _arity: usize, p: &Tuple, positions: &[usize]) -> Tuple {
        positions.iter().map(|&i| p[i]).collect()
    }

    fn same(&self, _arity: usize, p: &Tuple, i: usize, j: usize) -> bool {
        p[i] == p[j]
    }

    fn relation(&self, name: &str) -> Option<(usize, Cow<'_, [Tuple]>)> {
        let i = self.signature.index_of(name)?;
        Some((self.signature.relations[i].arity, Cow::Borrowed(&self.extents[i][..])))
    }

    fn relation_symbols(&self) -> Vec<(String, usize)> {
        self.signature
            .relations
            .iter()
            .map(|r| (r.name.clone(), r.arity))
            .collect()
    }

    fn solve_conjunction(&self, nvars: usize, conjuncts: &[Conjunct<'_, Tuple>], free: &[usize]) -> Vec<Tuple> {
        join_conjunction(self.domain_size, nvars, conjuncts, free)
    }

    fn format_point(&self, _arity: usize, p: &Tuple) -> String {
        let s: Vec<String> = p.iter().map(u32::to_string).collect();
        format!("({})", s.join(","))
    }
}

//! (1)-minimality and (k, max(k, l))-minimality with derivation recording.
//!
//! Both algorithms are the same pruning rule run over sets `T` of at most `k`
//! variables: for a constraint `C` over `U` and `T ⊆ U`,
//! `D̂_T = { g|_T : g ∈ C, g|_Z ∈ D_Z for every Z ⊆ U with |Z| ≤ k }`.
//! They differ in initialization: (1)-minimality starts `D_u` from the first
//! constraint mentioning `u`, the general engine starts every `D_T` full.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use smallvec::SmallVec;

use crate::algebra::{canonicalize, Algebra};
use crate::error::{Error, Result};
use crate::ppformulas::{Atom, ExtraRelations, TreeFormula, FULL};
use crate::relcore::{Constraint, Instance, Provenance};

/// A sorted set of variable indices.
pub type VarSet = SmallVec<[usize; 4]>;

/// Order in which pending constraints are revisited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// First-in first-out, starting from constraint order.
    #[default]
    Canonical,
    /// Uniformly random pending constraint, from a seeded generator.
    Random(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinimalityOptions {
    pub schedule: Schedule,
    pub record: bool,
}

impl Default for MinimalityOptions {
    fn default() -> Self {
        MinimalityOptions {
            schedule: Schedule::Canonical,
            record: true,
        }
    }
}

/// How a domain got its first value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum InitSource {
    /// Projection of this constraint.
    Constraint(usize),
    /// The full relation.
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InitRecord<P> {
    pub target: usize,
    pub source: InitSource,
    pub extent: Vec<P>,
}

/// One pruning step: `target` shrank from `old` to `new` using `constraint`,
/// whose rows were filtered against the listed `(set, version)` domains.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Step<P> {
    pub target: usize,
    pub constraint: usize,
    pub old: Vec<P>,
    pub new: Vec<P>,
    pub children: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DerivationLog<P> {
    pub init: Vec<InitRecord<P>>,
    pub steps: Vec<Step<P>>,
}

/// Final domains of every variable set, plus the derivation log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainMap<P> {
    pub k: usize,
    pub sets: Vec<VarSet>,
    pub domains: Vec<Vec<P>>,
    pub log: DerivationLog<P>,
}

impl<P: Clone + Ord> DomainMap<P> {
    pub fn set_index(&self, set: &[usize]) -> Option<usize> {
        let mut s: VarSet = set.iter().copied().collect();
        s.sort_unstable();
        self.sets.iter().position(|x| *x == s)
    }

    pub fn domain(&self, set: &[usize]) -> Option<&[P]> {
        self.set_index(set).map(|i| &self.domains[i][..])
    }

    /// Whether some domain is empty.
    pub fn is_trivial(&self) -> bool {
        self.domains.iter().any(Vec::is_empty)
    }

    /// Prune steps touching each set, in order; version `v >= 1` of a set is
    /// the value after its `v`-th step, version 0 its initial value.
    pub fn versions(&self) -> Vec<Vec<usize>> {
        let mut v = vec![Vec::new(); self.sets.len()];
        for (i, s) in self.log.steps.iter().enumerate() {
            v[s.target].push(i);
        }
        v
    }

    /// The recorded value of `set` at `version`.
    pub fn extent_at(&self, set: usize, version: usize) -> &[P] {
        if version == 0 {
            let rec = self.log.init.iter().find(|r| r.target == set).expect("every set is initialized");
            &rec.extent
        } else {
            &self.log.steps[self.versions()[set][version - 1]].new
        }
    }
}

struct NormConstraint<P> {
    rows: Vec<P>,
    /// For each subset Z of the scope with |Z| <= k: its set id and the
    /// projection of every row onto Z.
    subsets: Vec<(usize, Vec<P>)>,
}

pub(crate) struct Engine<'a, A: Algebra> {
    alg: &'a A,
    cons: Vec<NormConstraint<A::Point>>,
    sets: Vec<VarSet>,
    dom: Vec<HashSet<A::Point>>,
    version: Vec<usize>,
    watchers: Vec<Vec<usize>>,
    log: DerivationLog<A::Point>,
    record: bool,
}

/// Distinct variables of a scope (first occurrences) and the rows of the
/// extent consistent with repeated variables, restricted to them.
pub(crate) fn normalize_constraint<A: Algebra>(
    alg: &A,
    c: &Constraint<A::Point>,
) -> (Vec<usize>, Vec<A::Point>) {
    let arity = c.scope.len();
    let mut scope = Vec::new();
    let mut first = Vec::new();
    let mut repeats = Vec::new();
    for (p, &v) in c.scope.iter().enumerate() {
        match scope.iter().position(|&w| w == v) {
            Some(i) => repeats.push((p, first[i])),
            None => {
                scope.push(v);
                first.push(p);
            }
        }
    }
    if repeats.is_empty() {
        return (scope, c.extent.clone());
    }
    let mut rows: Vec<A::Point> = c
        .extent
        .iter()
        .filter(|p| repeats.iter().all(|&(i, j)| alg.same(arity, p, i, j)))
        .map(|p| alg.restrict(arity, p, &first))
        .collect();
    canonicalize(&mut rows);
    (scope, rows)
}

fn subsets_upto(items: &[usize], k: usize) -> Vec<VarSet> {
    let mut out = Vec::new();
    let n = items.len();
    for size in 1..=k.min(n) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            let mut s: VarSet = idx.iter().map(|&i| items[i]).collect();
            s.sort_unstable();
            out.push(s);
            let Some(i) = (0..size).rev().find(|&i| idx[i] != i + n - size) else {
                break;
            };
            idx[i] += 1;
            for j in i + 1..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    out
}

impl<'a, A: Algebra> Engine<'a, A> {
    fn new(alg: &'a A, inst: &Instance<A::Point>, k: usize, all_sets: bool, record: bool) -> Result<Self> {
        inst.validate()?;
        let mut sets: Vec<VarSet> = Vec::new();
        let mut set_index: HashMap<VarSet, usize> = HashMap::new();
        let mut intern = |s: VarSet, sets: &mut Vec<VarSet>| -> usize {
            *set_index.entry(s.clone()).or_insert_with(|| {
                sets.push(s);
                sets.len() - 1
            })
        };
        if all_sets {
            let vars: Vec<usize> = (0..inst.variables.len()).collect();
            for s in subsets_upto(&vars, k) {
                intern(s, &mut sets);
            }
        } else {
            for v in 0..inst.variables.len() {
                intern(SmallVec::from_slice(&[v]), &mut sets);
            }
        }
        let mut cons = Vec::new();
        for c in &inst.constraints {
            let (scope, rows) = normalize_constraint(alg, c);
            let mut subsets = Vec::new();
            for z in subsets_upto(&scope, k) {
                let positions: Vec<usize> = z.iter().map(|v| scope.iter().position(|w| w == v).unwrap()).collect();
                let proj = alg.restrict_all(scope.len(), &rows, &positions);
                subsets.push((intern(z, &mut sets), proj));
            }
            cons.push(NormConstraint { rows, subsets });
        }
        let mut watchers = vec![Vec::new(); sets.len()];
        for (ci, c) in cons.iter().enumerate() {
            for (s, _) in &c.subsets {
                watchers[*s].push(ci);
            }
        }
        let n = sets.len();
        Ok(Engine {
            alg,
            cons,
            sets,
            dom: vec![HashSet::new(); n],
            version: vec![0; n],
            watchers,
            log: DerivationLog { init: Vec::new(), steps: Vec::new() },
            record,
        })
    }

    fn init_full(&mut self) {
        for s in 0..self.sets.len() {
            let ext = self.alg.full(self.sets[s].len());
            self.dom[s] = ext.iter().cloned().collect();
            self.log.init.push(InitRecord {
                target: s,
                source: InitSource::Full,
                extent: if self.record { ext } else { Vec::new() },
            });
        }
    }

    fn init_first_constraint(&mut self, inst: &Instance<A::Point>) -> Result<()> {
        for s in 0..self.sets.len() {
            let c = self
                .cons
                .iter()
                .position(|c| c.subsets.iter().any(|(z, _)| *z == s))
                .ok_or_else(|| Error::UnscopedVariable(inst.variables[self.sets[s][0]].clone()))?;
            let proj = &self.cons[c].subsets.iter().find(|(z, _)| *z == s).unwrap().1;
            let mut ext = proj.clone();
            canonicalize(&mut ext);
            self.dom[s] = ext.iter().cloned().collect();
            self.log.init.push(InitRecord {
                target: s,
                source: InitSource::Constraint(c),
                extent: ext,
            });
        }
        Ok(())
    }

    fn sorted(&self, s: usize) -> Vec<A::Point> {
        let mut v: Vec<A::Point> = self.dom[s].iter().cloned().collect();
        v.sort();
        v
    }

    /// Prunes with one constraint; returns the sets that shrank.
    fn revise(&mut self, ci: usize) -> Vec<usize> {
        let c = &self.cons[ci];
        let passing: Vec<usize> = (0..c.rows.len())
            .filter(|&r| c.subsets.iter().all(|(s, proj)| self.dom[*s].contains(&proj[r])))
            .collect();
        let children: Vec<(usize, usize)> = if self.record {
            c.subsets.iter().map(|(s, _)| (*s, self.version[*s])).collect()
        } else {
            Vec::new()
        };
        let mut changed = Vec::new();
        let mut updates = Vec::new();
        for (s, proj) in &c.subsets {
            let hat: HashSet<A::Point> = passing.iter().map(|&r| proj[r].clone()).collect();
            if hat.len() < self.dom[*s].len() {
                updates.push((*s, hat));
            }
        }
        for (s, hat) in updates {
            let old = if self.record { self.sorted(s) } else { Vec::new() };
            self.dom[s] = hat;
            self.version[s] += 1;
            if self.record {
                let new = self.sorted(s);
                self.log.steps.push(Step {
                    target: s,
                    constraint: ci,
                    old,
                    new,
                    children: children.clone(),
                });
            }
            changed.push(s);
        }
        changed
    }

    fn propagate(&mut self, schedule: Schedule, pending: impl IntoIterator<Item = usize>) {
        let mut queued = vec![false; self.cons.len()];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for c in pending {
            if !queued[c] {
                queued[c] = true;
                queue.push_back(c);
            }
        }
        let mut rng = match schedule {
            Schedule::Random(seed) => Some(StdRng::seed_from_u64(seed)),
            Schedule::Canonical => None,
        };
        loop {
            let next = match rng.as_mut() {
                Some(rng) if !queue.is_empty() => {
                    let i = rng.gen_range(0..queue.len());
                    queue.swap_remove_back(i)
                }
                _ => queue.pop_front(),
            };
            let Some(ci) = next else { break };
            queued[ci] = false;
            for s in self.revise(ci) {
                for &w in &self.watchers[s] {
                    if w != ci && !queued[w] {
                        queued[w] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
    }

    /// Full-initialized engine without logging, for search.
    pub(crate) fn for_search(alg: &'a A, inst: &Instance<A::Point>, k: usize) -> Result<Self> {
        let mut e = Engine::new(alg, inst, k, true, false)?;
        e.init_full();
        let n = e.cons.len();
        e.propagate(Schedule::Canonical, 0..n);
        Ok(e)
    }

    pub(crate) fn sets(&self) -> &[VarSet] {
        &self.sets
    }

    pub(crate) fn domain(&self, s: usize) -> &HashSet<A::Point> {
        &self.dom[s]
    }

    pub(crate) fn trivial(&self) -> bool {
        self.dom.iter().any(HashSet::is_empty)
    }

    pub(crate) fn snapshot(&self) -> Vec<HashSet<A::Point>> {
        self.dom.clone()
    }

    pub(crate) fn restore(&mut self, snap: Vec<HashSet<A::Point>>) {
        self.dom = snap;
    }

    /// Narrows `D_s` to the given points and propagates.
    pub(crate) fn narrow(&mut self, s: usize, points: impl IntoIterator<Item = A::Point>) {
        let keep: HashSet<A::Point> = points.into_iter().filter(|p| self.dom[s].contains(p)).collect();
        if keep.len() == self.dom[s].len() {
            return;
        }
        self.dom[s] = keep;
        let pending = self.watchers[s].clone();
        self.propagate(Schedule::Canonical, pending);
    }

    fn finish(self, k: usize) -> DomainMap<A::Point> {
        let domains = (0..self.sets.len()).map(|s| self.sorted(s)).collect();
        DomainMap {
            k,
            sets: self.sets,
            domains,
            log: self.log,
        }
    }
}

/// 1-minimality: `D_u` starts as the projection of the first constraint whose
/// scope contains `u` and is pruned to the greatest fixpoint.
pub fn one_minimality<A: Algebra>(inst: &Instance<A::Point>, alg: &A) -> Result<DomainMap<A::Point>> {
    one_minimality_with(inst, alg, MinimalityOptions::default())
}

pub fn one_minimality_with<A: Algebra>(
    inst: &Instance<A::Point>,
    alg: &A,
    opts: MinimalityOptions,
) -> Result<DomainMap<A::Point>> {
    let mut e = Engine::new(alg, inst, 1, false, opts.record)?;
    e.init_first_constraint(inst)?;
    let n = e.cons.len();
    e.propagate(opts.schedule, 0..n);
    Ok(e.finish(1))
}

/// (k, l)-minimality over an instance already extended by [`build_imax`]: every
/// `D_T` with `|T| <= k` starts full and is pruned to the greatest fixpoint.
pub fn kl_minimality<A: Algebra>(
    inst: &Instance<A::Point>,
    alg: &A,
    k: usize,
    l: usize,
) -> Result<DomainMap<A::Point>> {
    kl_minimality_with(inst, alg, k, l, MinimalityOptions::default())
}

pub fn kl_minimality_with<A: Algebra>(
    inst: &Instance<A::Point>,
    alg: &A,
    k: usize,
    _l: usize,
    opts: MinimalityOptions,
) -> Result<DomainMap<A::Point>> {
    let mut e = Engine::new(alg, inst, k, true, opts.record)?;
    e.init_full();
    let n = e.cons.len();
    e.propagate(opts.schedule, 0..n);
    Ok(e.finish(k))
}

/// Adds the full constraint over every `max(k, l)`-subset of the variables,
/// skipping subsets already carrying a full constraint. With fewer variables
/// than `max(k, l)`, adds one full constraint over all of them.
pub fn build_imax<A: Algebra>(inst: &Instance<A::Point>, alg: &A, k: usize, l: usize) -> Instance<A::Point> {
    let m = k.max(l);
    let n = inst.variables.len();
    let mut out = inst.clone();
    let mut existing: HashSet<VarSet> = inst
        .constraints
        .iter()
        .filter(|c| c.provenance == Provenance::Full)
        .map(|c| {
            let mut s: VarSet = c.scope.iter().copied().collect();
            s.sort_unstable();
            s.dedup();
            s
        })
        .collect();
    let vars: Vec<usize> = (0..n).collect();
    let scopes: Vec<VarSet> = if n == 0 {
        Vec::new()
    } else if n < m {
        vec![vars.iter().copied().collect()]
    } else {
        subsets_upto(&vars, m).into_iter().filter(|s| s.len() == m).collect()
    };
    let mut fulls: HashMap<usize, Vec<A::Point>> = HashMap::new();
    for s in scopes {
        if existing.insert(s.clone()) {
            let extent = fulls.entry(s.len()).or_insert_with(|| alg.full(s.len())).clone();
            out.constraints.push(Constraint {
                scope: s.to_vec(),
                extent,
                provenance: Provenance::Full,
            });
        }
    }
    out
}

/// Filters every constraint to rows whose projections lie in the computed
/// domains. Changed constraints become `Derived`.
pub fn apply_domains<A: Algebra>(
    inst: &Instance<A::Point>,
    dm: &DomainMap<A::Point>,
    alg: &A,
) -> Instance<A::Point> {
    let index: HashMap<&VarSet, usize> = dm.sets.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let doms: Vec<HashSet<&A::Point>> = dm.domains.iter().map(|d| d.iter().collect()).collect();
    let mut out = inst.clone();
    for c in &mut out.constraints {
        let arity = c.scope.len();
        let mut distinct: Vec<usize> = Vec::new();
        let mut first = Vec::new();
        for (p, &v) in c.scope.iter().enumerate() {
            if !distinct.contains(&v) {
                distinct.push(v);
                first.push(p);
            }
        }
        let checks: Vec<(usize, Vec<usize>)> = subsets_upto(&distinct, dm.k)
            .into_iter()
            .filter_map(|z| {
                let s = *index.get(&z)?;
                let pos = z
                    .iter()
                    .map(|v| first[distinct.iter().position(|w| w == v).unwrap()])
                    .collect();
                Some((s, pos))
            })
            .collect();
        let before = c.extent.len();
        c.extent.retain(|p| {
            checks
                .iter()
                .all(|(s, pos)| doms[*s].contains(&alg.restrict(arity, p, pos)))
        });
        if c.extent.len() != before {
            c.provenance = Provenance::Derived;
        }
    }
    out
}

/// Relation names used for constraint copies inside certificate trees:
/// template relations keep their name, derived extents become `@c{i}`, full
/// constraints become `@full`.
pub fn atom_relation<P>(inst: &Instance<P>, ci: usize) -> String {
    match &inst.constraints[ci].provenance {
        Provenance::Relation(n) => n.clone(),
        Provenance::Derived => format!("@c{ci}"),
        Provenance::Full => FULL.to_string(),
    }
}

/// Extents of the `@c{i}` names used by certificate trees of `inst`.
pub fn certificate_relations<P: Clone>(inst: &Instance<P>) -> ExtraRelations<P> {
    inst.constraints
        .iter()
        .enumerate()
        .filter(|(_, c)| c.provenance == Provenance::Derived)
        .map(|(i, c)| (format!("@c{i}"), (c.scope.len(), c.extent.clone())))
        .collect()
}

struct TreeBuilder<'a, P> {
    dm: &'a DomainMap<P>,
    inst: &'a Instance<P>,
    versions: Vec<Vec<usize>>,
    counter: HashMap<usize, usize>,
    budget: usize,
}

impl<P: Clone + Ord> TreeBuilder<'_, P> {
    fn fresh(&mut self, var: usize) -> String {
        let n = self.counter.entry(var).or_insert(0);
        *n += 1;
        format!("{}#{}", self.inst.variables[var], n)
    }

    /// A copy of constraint `ci` in which the variables of `set` are named
    /// `root` and every other variable gets a fresh copy.
    fn copy_atom(&mut self, ci: usize, set: &[usize], root: &[String]) -> (Atom, HashMap<usize, String>) {
        let mut names: HashMap<usize, String> = set.iter().copied().zip(root.iter().cloned()).collect();
        let scope = self.inst.constraints[ci].scope.clone();
        for &v in &scope {
            if !names.contains_key(&v) {
                let f = self.fresh(v);
                names.insert(v, f);
            }
        }
        let atom = Atom {
            relation: atom_relation(self.inst, ci),
            args: scope.iter().map(|v| names[v].clone()).collect(),
        };
        (atom, names)
    }

    fn build(&mut self, set: usize, version: usize, root: Vec<String>) -> Result<TreeFormula> {
        if self.budget == 0 {
            return Err(Error::Precondition("certificate tree exceeds the size budget".into()));
        }
        self.budget -= 1;
        let vars = self.dm.sets[set].clone();
        if version == 0 {
            let rec = self.dm.log.init.iter().find(|r| r.target == set).expect("initialized");
            let ci = match rec.source {
                InitSource::Constraint(c) => c,
                InitSource::Full => self.full_constraint_containing(&vars)?,
            };
            let (atom, _) = self.copy_atom(ci, &vars, &root);
            return Ok(TreeFormula::leaf(root, atom));
        }
        let step = &self.dm.log.steps[self.versions[set][version - 1]];
        let ci = step.constraint;
        let children_spec = step.children.clone();
        let (atom, names) = self.copy_atom(ci, &vars, &root);
        let mut children = Vec::new();
        for (z, zv) in children_spec {
            let init_full = zv == 0
                && self
                    .dm
                    .log
                    .init
                    .iter()
                    .any(|r| r.target == z && r.source == InitSource::Full);
            if init_full {
                // a full domain restricts nothing
                continue;
            }
            let zroot: Vec<String> = self.dm.sets[z].iter().map(|v| names[v].clone()).collect();
            children.push(self.build(z, zv, zroot)?);
        }
        Ok(TreeFormula { root, atom, children })
    }

    fn full_constraint_containing(&self, vars: &[usize]) -> Result<usize> {
        self.inst
            .constraints
            .iter()
            .position(|c| c.provenance == Provenance::Full && vars.iter().all(|v| c.scope.contains(v)))
            .or_else(|| {
                self.inst
                    .constraints
                    .iter()
                    .position(|c| vars.iter().all(|v| c.scope.contains(v)))
            })
            .ok_or_else(|| Error::Precondition("no constraint covers the target set".into()))
    }
}

/// Default cap on the number of tree nodes produced for one certificate.
pub const DEFAULT_TREE_BUDGET: usize = 200_000;

/// A (k-)tree formula over fresh copies of the variables whose root
/// projection is the recorded value of `target` at `version` (`None`: final).
pub fn derivation_to_tree<P: Clone + Ord>(
    dm: &DomainMap<P>,
    target: &[usize],
    version: Option<usize>,
    inst: &Instance<P>,
) -> Result<TreeFormula> {
    derivation_to_tree_capped(dm, target, version, inst, DEFAULT_TREE_BUDGET)
}

pub fn derivation_to_tree_capped<P: Clone + Ord>(
    dm: &DomainMap<P>,
    target: &[usize],
    version: Option<usize>,
    inst: &Instance<P>,
    budget: usize,
) -> Result<TreeFormula> {
    let set = dm
        .set_index(target)
        .ok_or_else(|| Error::Precondition("target is not a tracked variable set".into()))?;
    let versions = dm.versions();
    let version = version.unwrap_or(versions[set].len());
    if version > versions[set].len() {
        return Err(Error::Precondition("version beyond the log".into()));
    }
    let mut b = TreeBuilder {
        dm,
        inst,
        versions,
        counter: HashMap::new(),
        budget,
    };
    let root: Vec<String> = dm.sets[set].iter().map(|&v| b.fresh(v)).collect();
    b.build(set, version, root)
}

//! Implications, their composition and stabilization, and the searches for
//! balanced implications and for definitions of equality.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;

use crate::algebra::{canonicalize, project_points, Algebra, Conjunct};
use crate::error::{Error, Result};
use crate::ppformulas::{eval_pp, Atom, PPFormula, FULL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Flags {
    pub is_implication: bool,
    pub nontrivial: bool,
    pub stable: bool,
    pub proper: bool,
    pub balanced: bool,
}

/// A `(C, u, D, v)`-implication candidate with its recomputed flags.
///
/// `formula.free` is `u` followed by the variables of `v` not in `u`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Implication<P> {
    pub formula: PPFormula,
    pub u: Vec<String>,
    pub v: Vec<String>,
    pub c: Vec<P>,
    pub d: Vec<P>,
    pub u_proj: Vec<P>,
    pub v_proj: Vec<P>,
    pub flags: Flags,
    /// `(i, j)` with `u[i] == v[j]`.
    pub pi: Vec<(usize, usize)>,
}

impl<P> Implication<P> {
    /// Positions of `v` inside the free tuple of the formula.
    pub fn v_positions(&self) -> Vec<usize> {
        self.v
            .iter()
            .map(|x| self.formula.free.iter().position(|f| f == x).expect("v is free"))
            .collect()
    }

    pub fn describe<A: Algebra<Point = P>>(&self, alg: &A) -> String {
        let set = |s: &[P], arity: usize| -> String {
            let pts: Vec<String> = s.iter().map(|p| alg.format_point(arity, p)).collect();
            format!("{{{}}}", pts.join(", "))
        };
        let mut out = String::new();
        let _ = writeln!(out, "formula: {}", self.formula);
        let _ = writeln!(out, "C: {} on ({})", set(&self.c, self.u.len()), self.u.join(", "));
        let _ = writeln!(out, "D: {} on ({})", set(&self.d, self.v.len()), self.v.join(", "));
        let f = self.flags;
        let _ = write!(
            out,
            "flags: implication={} nontrivial={} stable={} proper={} balanced={}",
            f.is_implication, f.nontrivial, f.stable, f.proper, f.balanced
        );
        out
    }
}

fn distinct(vars: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    match vars.iter().find(|v| !seen.insert(v.as_str())) {
        Some(v) => Err(Error::RepeatedVariable(v.clone())),
        None => Ok(()),
    }
}

fn free_tuple(u: &[String], v: &[String]) -> Vec<String> {
    let mut w = u.to_vec();
    for x in v {
        if !w.contains(x) {
            w.push(x.clone());
        }
    }
    w
}

fn is_subset<P: Ord>(a: &[P], b: &[P]) -> bool {
    a.iter().all(|x| b.binary_search(x).is_ok())
}

/// Evaluates the formula once over `u ++ (v \ u)` and computes every flag.
pub fn check_implication<A: Algebra>(
    f: &PPFormula,
    c: &[A::Point],
    u: &[String],
    d: &[A::Point],
    v: &[String],
    alg: &A,
) -> Result<Implication<A::Point>> {
    distinct(u)?;
    distinct(v)?;
    let vars = f.vars();
    if let Some(x) = u.iter().chain(v).find(|x| !vars.contains(x)) {
        return Err(Error::UndeclaredVariable(x.clone()));
    }
    if c.is_empty() || d.is_empty() {
        return Err(Error::Precondition("C and D must be non-empty".into()));
    }
    let w = free_tuple(u, v);
    let rows = eval_pp(&f.with_free(w.clone()), alg)?;
    let mut c = c.to_vec();
    let mut d = d.to_vec();
    canonicalize(&mut c);
    canonicalize(&mut d);
    Ok(analyze(alg, f.with_free(w), u, v, c, d, &rows))
}

/// Flags of an implication whose formula has already been evaluated over
/// its free tuple `u ++ (v \ u)`.
fn analyze<A: Algebra>(
    alg: &A,
    formula: PPFormula,
    u: &[String],
    v: &[String],
    c: Vec<A::Point>,
    d: Vec<A::Point>,
    rows: &[A::Point],
) -> Implication<A::Point> {
    let w = &formula.free;
    let wl = w.len();
    let pu: Vec<usize> = (0..u.len()).collect();
    let pv: Vec<usize> = v.iter().map(|x| w.iter().position(|y| y == x).unwrap()).collect();
    let ru = alg.restrict_all(wl, rows, &pu);
    let rv = alg.restrict_all(wl, rows, &pv);
    let mut u_proj = ru.clone();
    let mut v_proj = rv.clone();
    canonicalize(&mut u_proj);
    canonicalize(&mut v_proj);
    let mut reached = Vec::new();
    let mut forced = true;
    for (a, b) in ru.iter().zip(&rv) {
        if c.binary_search(a).is_ok() {
            if d.binary_search(b).is_ok() {
                reached.push(b.clone());
            } else {
                forced = false;
            }
        }
    }
    canonicalize(&mut reached);
    let cond1 = is_subset(&c, &u_proj) && c.len() < u_proj.len();
    let cond2 = is_subset(&d, &v_proj) && d.len() < v_proj.len();
    let cond4 = reached == d;
    let is_implication = cond1 && cond2 && forced && cond4;
    let pi: Vec<(usize, usize)> = u
        .iter()
        .enumerate()
        .filter_map(|(i, x)| v.iter().position(|y| y == x).map(|j| (i, j)))
        .collect();
    let nontrivial = pi.len() < u.len() && pi.len() < v.len();
    let stable = nontrivial && pi.iter().all(|&(i, j)| i == j);
    // the shared variables see the same projection in the formula as in C
    let shared_u: Vec<usize> = pi.iter().map(|&(i, _)| i).collect();
    let proper = shared_u.is_empty() || {
        let from_rows = project_points(alg, wl, rows, &shared_u);
        let from_c = project_points(alg, u.len(), &c, &shared_u);
        from_rows == from_c
    };
    let balanced = u.len() == v.len() && c == d && u_proj == v_proj;
    Implication {
        formula,
        u: u.to_vec(),
        v: v.to_vec(),
        c,
        d,
        u_proj,
        v_proj,
        flags: Flags {
            is_implication,
            nontrivial,
            stable,
            proper,
            balanced,
        },
        pi,
    }
}

/// Which tuples the atom harvest considers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HarvestShape {
    /// Longest `u` and `v`.
    pub max_tuple: usize,
    /// Isolated variables that may be added next to the atom.
    pub fresh: usize,
    /// Largest `proj_u` whose subsets are enumerated.
    pub max_proj: usize,
}

impl HarvestShape {
    /// Single variables inside one atom.
    pub fn finite() -> Self {
        HarvestShape {
            max_tuple: 1,
            fresh: 0,
            max_proj: 12,
        }
    }

    /// Tuples of up to `k` variables, with up to `k` isolated extra variables.
    pub fn orbit(k: usize) -> Self {
        HarvestShape {
            max_tuple: k,
            fresh: k,
            max_proj: 12,
        }
    }
}

/// Result of a harvest: the implications plus whether some `proj_u` was too
/// large to enumerate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Harvest<P> {
    pub implications: Vec<Implication<P>>,
    pub truncated: bool,
}

fn tuples_over(vars: &[String], max_len: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    fn rec(n: usize, max_len: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if !cur.is_empty() {
            out.push(cur.clone());
        }
        if cur.len() == max_len {
            return;
        }
        for i in 0..n {
            if !cur.contains(&i) {
                cur.push(i);
                rec(n, max_len, cur, out);
                cur.pop();
            }
        }
    }
    let mut idx = Vec::new();
    rec(vars.len(), max_len, &mut cur, &mut idx);
    for t in idx {
        out.push(t.into_iter().map(|i| vars[i].clone()).collect());
    }
    out
}

/// Points over `w` satisfying one atom `rel(args)` whose other variables are
/// existential and whose variables outside the atom are unconstrained.
fn atom_rows<A: Algebra>(alg: &A, arity: usize, extent: &[A::Point], args: &[String], w: &[String]) -> Vec<A::Point> {
    if extent.is_empty() {
        return Vec::new();
    }
    let mut in_atom = Vec::new();
    let mut atom_pos = Vec::new();
    for (i, x) in w.iter().enumerate() {
        if let Some(p) = args.iter().position(|a| a == x) {
            in_atom.push(i);
            atom_pos.push(p);
        }
    }
    let all: Vec<usize> = (0..w.len()).collect();
    if in_atom.is_empty() {
        return alg.full(w.len());
    }
    let proj = project_points(alg, arity, extent, &atom_pos);
    alg.solve_conjunction(
        w.len(),
        &[Conjunct {
            args: &in_atom,
            extent: &proj,
        }],
        &all,
    )
}

/// Implications `(C, u, D, v)` carried by single atoms over the template's
/// relations: `D` is the image of `C`, and only nontrivial implications are
/// kept.
pub fn harvest_atom_implications<A: Algebra>(alg: &A, shape: HarvestShape) -> Harvest<A::Point> {
    let sources: Vec<(String, usize, Vec<A::Point>)> = alg
        .relation_symbols()
        .into_iter()
        .map(|(name, arity)| {
            let ext = alg.relation(&name).expect("listed relation").1.into_owned();
            (name, arity, ext)
        })
        .collect();
    harvest_from(alg, &sources, shape)
}

/// As [`harvest_atom_implications`], with the constraints of an instance as
/// the atoms; formulas use the names of
/// [`atom_relation`](crate::minimality::atom_relation).
pub fn harvest_instance_implications<A: Algebra>(
    inst: &crate::relcore::Instance<A::Point>,
    alg: &A,
    shape: HarvestShape,
) -> Harvest<A::Point> {
    let mut sources = Vec::new();
    let mut seen = HashSet::new();
    for (i, c) in inst.constraints.iter().enumerate() {
        let name = crate::minimality::atom_relation(inst, i);
        if name == FULL || !seen.insert(name.clone()) {
            continue;
        }
        sources.push((name, c.scope.len(), c.extent.clone()));
    }
    harvest_from(alg, &sources, shape)
}

fn harvest_from<A: Algebra>(alg: &A, sources: &[(String, usize, Vec<A::Point>)], shape: HarvestShape) -> Harvest<A::Point> {
    let mut out = Vec::new();
    let mut truncated = false;
    for (name, arity, extent) in sources {
        let args: Vec<String> = (1..=*arity).map(|i| format!("x{i}")).collect();
        let atom = Atom::new(name, args.clone());
        for nfresh in 0..=shape.fresh {
            let fresh: Vec<String> = (1..=nfresh).map(|i| format!("y{i}")).collect();
            let mut pool = args.clone();
            pool.extend(fresh.iter().cloned());
            let tuples = tuples_over(&pool, shape.max_tuple);
            for u in &tuples {
                for v in &tuples {
                    let w = free_tuple(u, v);
                    if w.len() > 2 * shape.max_tuple {
                        continue;
                    }
                    // every fresh variable is used, and they appear in order
                    let used: Vec<&String> = w.iter().filter(|x| fresh.contains(x)).collect();
                    if used.len() != nfresh || used.iter().zip(&fresh).any(|(a, b)| *a != b) {
                        continue;
                    }
                    let pi_len = u.iter().filter(|x| v.contains(x)).count();
                    if pi_len == u.len() || pi_len == v.len() {
                        continue;
                    }
                    let rows = atom_rows(alg, *arity, extent, &args, &w);
                    let pu: Vec<usize> = (0..u.len()).collect();
                    let pv: Vec<usize> = v.iter().map(|x| w.iter().position(|y| y == x).unwrap()).collect();
                    let ru = alg.restrict_all(w.len(), &rows, &pu);
                    let rv = alg.restrict_all(w.len(), &rows, &pv);
                    let mut u_proj = ru.clone();
                    canonicalize(&mut u_proj);
                    let mut v_proj = rv.clone();
                    canonicalize(&mut v_proj);
                    if u_proj.len() < 2 || v_proj.len() < 2 {
                        continue;
                    }
                    if u_proj.len() > shape.max_proj {
                        truncated = true;
                        continue;
                    }
                    let formula = PPFormula::new(vec![atom.clone()], w.clone());
                    for mask in 1u64..(1u64 << u_proj.len()) - 1 {
                        let c: Vec<A::Point> = u_proj
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| mask >> i & 1 == 1)
                            .map(|(_, p)| p.clone())
                            .collect();
                        let mut d: Vec<A::Point> = ru
                            .iter()
                            .zip(&rv)
                            .filter(|(a, _)| c.binary_search(a).is_ok())
                            .map(|(_, b)| b.clone())
                            .collect();
                        canonicalize(&mut d);
                        if d.len() == v_proj.len() {
                            continue;
                        }
                        let imp = analyze(alg, formula.clone(), u, v, c, d, &rows);
                        if imp.flags.is_implication && imp.flags.nontrivial {
                            out.push(imp);
                        }
                    }
                }
            }
        }
    }
    Harvest {
        implications: out,
        truncated,
    }
}

/// A name based on `base` not in `taken`, by appending primes.
fn fresh_name(base: &str, taken: &HashSet<String>) -> String {
    let mut name = format!("{base}'");
    while taken.contains(&name) {
        name.push('\'');
    }
    name
}

/// `i1 ∘ i2`: the conjunction of both formulas with `v¹` identified with `u²`
/// and every other variable of `i2` renamed apart; flags are recomputed.
pub fn compose<A: Algebra>(i1: &Implication<A::Point>, i2: &Implication<A::Point>, alg: &A) -> Result<Implication<A::Point>> {
    if i1.d != i2.c {
        return Err(Error::InterfaceMismatch("D of the first differs from C of the second".into()));
    }
    if i1.v.len() != i2.u.len() || i1.v_proj != i2.u_proj {
        return Err(Error::InterfaceMismatch(
            "the interface tuples have different projections".into(),
        ));
    }
    let mut taken: HashSet<String> = i1.formula.vars().into_iter().collect();
    let mut map: HashMap<String, String> = HashMap::new();
    for (a, b) in i2.u.iter().zip(&i1.v) {
        map.insert(a.clone(), b.clone());
    }
    for x in i2.formula.vars() {
        if !map.contains_key(&x) {
            let base = x.trim_end_matches('\'').to_string();
            let name = if taken.contains(&x) { fresh_name(&base, &taken) } else { x.clone() };
            taken.insert(name.clone());
            map.insert(x, name);
        }
    }
    let right = i2.formula.rename(|x| map[x].clone());
    let v: Vec<String> = i2.v.iter().map(|x| map[x].clone()).collect();
    let mut atoms = i1.formula.atoms.clone();
    atoms.extend(right.atoms);
    let f = PPFormula::new(atoms, free_tuple(&i1.u, &v));
    check_implication(&f, &i1.c, &i1.u, &i2.d, &v, alg)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Least common multiple of the cycle lengths of a partial injective map.
fn cycle_lcm(pi: &[(usize, usize)]) -> usize {
    let next: HashMap<usize, usize> = pi.iter().copied().collect();
    let mut l = 1;
    for &(start, _) in pi {
        let mut len = 0;
        let mut x = start;
        let closed = loop {
            match next.get(&x) {
                Some(&y) => {
                    len += 1;
                    x = y;
                    if x == start {
                        break true;
                    }
                    if len > pi.len() {
                        break false;
                    }
                }
                None => break false,
            }
        };
        if closed {
            l = l / gcd(l, len) * len;
        }
    }
    l
}

/// A stable version of a balanced nontrivial implication: unchanged when `π`
/// is already the identity on its domain, otherwise the `(l·m)`-fold
/// composition with `l` the lcm of the cycle lengths of `π` and `m = |u|`.
pub fn stabilize<A: Algebra>(i: &Implication<A::Point>, alg: &A) -> Result<Implication<A::Point>> {
    if !i.flags.balanced || !i.flags.nontrivial {
        return Err(Error::Precondition("stabilize needs a balanced nontrivial implication".into()));
    }
    if i.pi.iter().all(|&(a, b)| a == b) {
        return Ok(i.clone());
    }
    let n = cycle_lcm(&i.pi) * i.u.len();
    let mut acc = i.clone();
    for _ in 1..n {
        acc = compose(&acc, i, alg)?;
    }
    if !acc.flags.stable {
        return Err(Error::InvalidWitness("composition did not stabilize".into()));
    }
    Ok(acc)
}

/// Vertices are `(C, proj_u)` pairs; each harvested implication is an arc.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImplicationGraph<P> {
    pub vertices: Vec<(Vec<P>, Vec<P>)>,
    /// `(from, to, implication index)`.
    pub arcs: Vec<(usize, usize, usize)>,
    pub implications: Vec<Implication<P>>,
}

impl<P: Clone + Ord + std::hash::Hash> ImplicationGraph<P> {
    pub fn build(implications: Vec<Implication<P>>) -> Self {
        let mut index: HashMap<(Vec<P>, Vec<P>), usize> = HashMap::new();
        let mut vertices = Vec::new();
        let mut arcs = Vec::new();
        let mut vertex = |key: (Vec<P>, Vec<P>), vertices: &mut Vec<(Vec<P>, Vec<P>)>| -> usize {
            *index.entry(key.clone()).or_insert_with(|| {
                vertices.push(key);
                vertices.len() - 1
            })
        };
        for (n, i) in implications.iter().enumerate() {
            let a = vertex((i.c.clone(), i.u_proj.clone()), &mut vertices);
            let b = vertex((i.d.clone(), i.v_proj.clone()), &mut vertices);
            arcs.push((a, b, n));
        }
        ImplicationGraph {
            vertices,
            arcs,
            implications,
        }
    }

    /// Arcs (by index into `arcs`) of a shortest cycle through each arc,
    /// shortest first, ties by arc order.
    pub fn cycles(&self, max_len: usize) -> Vec<Vec<usize>> {
        let mut out_arcs: Vec<Vec<usize>> = vec![Vec::new(); self.vertices.len()];
        for (n, &(a, _, _)) in self.arcs.iter().enumerate() {
            out_arcs[a].push(n);
        }
        let mut cycles: Vec<Vec<usize>> = Vec::new();
        let mut seen: HashSet<Vec<usize>> = HashSet::new();
        for (first, &(a, b, _)) in self.arcs.iter().enumerate() {
            // shortest path b -> a
            let mut prev: HashMap<usize, usize> = HashMap::new();
            let mut queue = VecDeque::from([b]);
            let mut found = b == a;
            let mut visited = HashSet::from([b]);
            while let Some(x) = queue.pop_front() {
                if found {
                    break;
                }
                for &arc in &out_arcs[x] {
                    let y = self.arcs[arc].1;
                    if visited.insert(y) {
                        prev.insert(y, arc);
                        if y == a {
                            found = true;
                            break;
                        }
                        queue.push_back(y);
                    }
                }
            }
            if !found {
                continue;
            }
            let mut path = Vec::new();
            let mut x = a;
            while x != b {
                let arc = prev[&x];
                path.push(arc);
                x = self.arcs[arc].0;
            }
            path.reverse();
            let mut cycle = vec![first];
            cycle.extend(path);
            if cycle.len() > max_len {
                continue;
            }
            let mut key = cycle.clone();
            key.sort_unstable();
            if seen.insert(key) {
                cycles.push(cycle);
            }
        }
        cycles.sort_by_key(|c| c.len());
        cycles
    }

    /// Graphviz rendering.
    pub fn to_dot<A: Algebra<Point = P>>(&self, alg: &A) -> String {
        let mut out = String::from("digraph implications {\n");
        for (n, (c, proj)) in self.vertices.iter().enumerate() {
            let arity = self
                .implications
                .iter()
                .find_map(|i| {
                    if &i.c == c && &i.u_proj == proj {
                        Some(i.u.len())
                    } else if &i.d == c && &i.v_proj == proj {
                        Some(i.v.len())
                    } else {
                        None
                    }
                })
                .unwrap_or(1);
            let pts: Vec<String> = c.iter().map(|p| alg.format_point(arity, p)).collect();
            let _ = writeln!(out, "  v{n} [label=\"{}\"];", pts.join(" ").replace('"', "'"));
        }
        for &(a, b, i) in &self.arcs {
            let label = self.implications[i].formula.to_string().replace('"', "'");
            let _ = writeln!(out, "  v{a} -> v{b} [label=\"{label}\"];");
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BalancedOutcome<P> {
    /// A stable, balanced and proper implication, re-checked.
    Witness {
        implication: Implication<P>,
        cycle: Vec<usize>,
        graph: ImplicationGraph<P>,
    },
    NoneWithinBudget {
        max_atoms: usize,
        truncated: bool,
        graph: ImplicationGraph<P>,
    },
}

/// Looks for a cycle in the graph of harvested atom implications; the
/// composition along a cycle is balanced, and after stabilization it must
/// re-pass [`check_implication`] as stable, balanced and proper.
pub fn search_balanced<A: Algebra>(alg: &A, shape: HarvestShape, max_atoms: usize) -> Result<BalancedOutcome<A::Point>> {
    let harvest = harvest_atom_implications(alg, shape);
    let graph = ImplicationGraph::build(harvest.implications);
    for cycle in graph.cycles(max_atoms) {
        let imps: Vec<&Implication<A::Point>> = cycle.iter().map(|&a| &graph.implications[graph.arcs[a].2]).collect();
        let mut acc = imps[0].clone();
        let mut ok = true;
        for next in &imps[1..] {
            match compose(&acc, next, alg) {
                Ok(c) => acc = c,
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok || !acc.flags.balanced || !acc.flags.nontrivial {
            continue;
        }
        let Ok(stable) = stabilize(&acc, alg) else {
            continue;
        };
        let re = check_implication(&stable.formula, &stable.c, &stable.u, &stable.d, &stable.v, alg)?;
        let f = re.flags;
        if f.is_implication && f.stable && f.balanced && f.proper {
            return Ok(BalancedOutcome::Witness {
                implication: re,
                cycle,
                graph,
            });
        }
    }
    Ok(BalancedOutcome::NoneWithinBudget {
        max_atoms,
        truncated: harvest.truncated,
        graph,
    })
}

/// Cap on distinct relations explored by [`search_equality_definition`].
pub const EQUALITY_SEARCH_STATES: usize = 200_000;

/// Breadth-first search over conjunctions of at most `max_atoms` atoms on the
/// variables `x, y, z1, z2` (free `x, y`), identifying conjunctions that
/// define the same relation on all four variables. Returns a formula whose
/// projection onto `(x, y)` is equality.
pub fn search_equality_definition<A: Algebra>(alg: &A, max_atoms: usize) -> Option<PPFormula> {
    const POOL: [&str; 4] = ["x", "y", "z1", "z2"];
    let universe = alg.full(4);
    let words = universe.len().div_ceil(64);
    let xy = alg.restrict_all(4, &universe, &[0, 1]);
    let mut eq: Vec<A::Point> = alg.full(2).into_iter().filter(|p| alg.same(2, p, 0, 1)).collect();
    canonicalize(&mut eq);
    let mut atoms: Vec<(Atom, Vec<u64>)> = Vec::new();
    for (name, arity) in alg.relation_symbols() {
        if arity > 4 {
            continue;
        }
        let ext = alg.relation(&name).expect("listed relation").1.into_owned();
        let mut idx = vec![0usize; arity];
        loop {
            let args: Vec<usize> = idx.clone();
            let proj = alg.restrict_all(4, &universe, &args);
            let mut bits = vec![0u64; words];
            for (n, p) in proj.iter().enumerate() {
                if ext.binary_search(p).is_ok() {
                    bits[n / 64] |= 1 << (n % 64);
                }
            }
            atoms.push((Atom::new(&name, args.iter().map(|&a| POOL[a])), bits));
            let Some(pos) = (0..arity).rev().find(|&i| idx[i] < 3) else {
                break;
            };
            idx[pos] += 1;
            for j in pos + 1..arity {
                idx[j] = 0;
            }
        }
    }
    let defines_eq = |bits: &[u64]| -> bool {
        let mut pts: Vec<A::Point> = (0..universe.len())
            .filter(|&n| bits[n / 64] >> (n % 64) & 1 == 1)
            .map(|n| xy[n].clone())
            .collect();
        canonicalize(&mut pts);
        pts == eq
    };
    let full: Vec<u64> = {
        let mut b = vec![u64::MAX; words];
        let extra = words * 64 - universe.len();
        if extra > 0 {
            b[words - 1] >>= extra;
        }
        b
    };
    if defines_eq(&full) {
        return Some(PPFormula::new(Vec::new(), ["x", "y"]));
    }
    let mut seen: HashSet<Vec<u64>> = HashSet::from([full.clone()]);
    let mut frontier: Vec<(Vec<u64>, Vec<usize>)> = vec![(full, Vec::new())];
    for _ in 0..max_atoms {
        let mut next = Vec::new();
        for (bits, used) in &frontier {
            for (a, (_, abits)) in atoms.iter().enumerate() {
                let new: Vec<u64> = bits.iter().zip(abits).map(|(x, y)| x & y).collect();
                if new.iter().all(|&w| w == 0) || &new == bits || seen.contains(&new) {
                    continue;
                }
                let mut formula_atoms = used.clone();
                formula_atoms.push(a);
                if defines_eq(&new) {
                    let f = PPFormula::new(formula_atoms.iter().map(|&i| atoms[i].0.clone()).collect(), ["x", "y"]);
                    return Some(f);
                }
                seen.insert(new.clone());
                if seen.len() > EQUALITY_SEARCH_STATES {
                    return None;
                }
                next.push((new, formula_atoms));
            }
        }
        frontier = next;
    }
    None
}

/// Pairs `(type of u, type of v)` over all satisfying assignments.
pub fn orbit_mappings<A: Algebra>(i: &Implication<A::Point>, alg: &A) -> Result<HashSet<(A::Point, A::Point)>> {
    let rows = eval_pp(&i.formula, alg)?;
    let w = i.formula.free.len();
    let pu: Vec<usize> = (0..i.u.len()).collect();
    let ru = alg.restrict_all(w, &rows, &pu);
    let rv = alg.restrict_all(w, &rows, &i.v_positions());
    Ok(ru.into_iter().zip(rv).collect())
}

//! Hardness gadgets: from a stable, balanced and proper implication (or a
//! definition of equality) to an equivalence relation with two classes, and
//! from there to a first-order reduction out of `CSP({0,1}; R0, R1, =)`.

mod formula;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rayon::prelude::*;

use crate::algebra::{canonicalize, Algebra};
use crate::error::{Error, Result};
use crate::implications::{check_implication, compose, orbit_mappings, Implication};
use crate::parallel::with_jobs;
use crate::orbits::{closure_structure, solve_orbit, OrbitMode, OrbitTemplate};
use crate::ppformulas::{eval_pp, PPFormula};
use crate::relcore::{
    all_tuples, find_homomorphism, nonisomorphic_structures, structure_to_instance, tuple, Elem, Signature, Structure, Tuple,
};

pub use formula::FoFormula;

/// Name of coordinate `i` of the `j`-th interpreted element (both 1-based).
pub fn coord_var(j: usize, i: usize) -> String {
    format!("x{j}_{i}")
}

/// Name of the `i`-th parameter (1-based).
pub fn param_var(i: usize) -> String {
    format!("p{i}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterpretedRelation {
    pub name: String,
    pub arity: usize,
    pub formula: FoFormula,
}

/// A `dimension`-ary first-order interpretation with `parameters`
/// parameters. The domain formula speaks about `x1_1..x1_k` and
/// `p1..pp`; the formula of an `r`-ary relation about `xj_i` for `j <= r`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interpretation {
    pub dimension: usize,
    pub parameters: usize,
    pub domain: FoFormula,
    pub relations: Vec<InterpretedRelation>,
}

impl Interpretation {
    /// Checks that every formula only uses its allowed free variables.
    pub fn validate(&self) -> Result<()> {
        let allowed = |r: usize| -> BTreeSet<String> {
            let mut s: BTreeSet<String> = (1..=self.parameters).map(param_var).collect();
            for j in 1..=r {
                for i in 1..=self.dimension {
                    s.insert(coord_var(j, i));
                }
            }
            s
        };
        let check = |name: &str, f: &FoFormula, r: usize| -> Result<()> {
            let ok = allowed(r);
            match f.free_vars().into_iter().find(|x| !ok.contains(x)) {
                Some(x) => Err(Error::Invalid(format!("formula of `{name}` has stray free variable `{x}`"))),
                None => Ok(()),
            }
        };
        if self.dimension == 0 {
            return Err(Error::Invalid("dimension must be at least 1".into()));
        }
        check("domain", &self.domain, 1)?;
        let mut seen = HashSet::new();
        for r in &self.relations {
            if !seen.insert(&r.name) {
                return Err(Error::Duplicate(r.name.clone()));
            }
            check(&r.name, &r.formula, r.arity)?;
        }
        Ok(())
    }

    /// The signature of interpreted structures.
    pub fn target_signature(&self) -> Result<Signature> {
        Signature::new(self.relations.iter().map(|r| (r.name.clone(), r.arity)))
    }
}

impl fmt::Display for Interpretation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dimension {}", self.dimension)?;
        writeln!(f, "parameters {}", self.parameters)?;
        writeln!(f, "domain: {}", self.domain)?;
        for r in &self.relations {
            writeln!(f, "{}/{}: {}", r.name, r.arity, r.formula)?;
        }
        Ok(())
    }
}

/// `ι(src, params)` together with the `k`-tuple behind each element.
pub fn interpret(iota: &Interpretation, src: &Structure, params: &[Elem]) -> Result<(Structure, Vec<Vec<Elem>>)> {
    iota.validate()?;
    if params.len() != iota.parameters {
        return Err(Error::ImproperParameters(format!(
            "expected {} parameters, got {}",
            iota.parameters,
            params.len()
        )));
    }
    if let Some(&e) = params.iter().find(|&&e| e >= src.domain_size()) {
        return Err(Error::ImproperParameters(format!("element {e} is outside the domain")));
    }
    if params.iter().collect::<HashSet<_>>().len() != params.len() {
        return Err(Error::ImproperParameters("parameters are not pairwise distinct".into()));
    }
    let k = iota.dimension;
    let max_arity = iota.relations.iter().map(|r| r.arity).max().unwrap_or(1).max(1);
    let mut vars: Vec<String> = (1..=iota.parameters).map(param_var).collect();
    for j in 1..=max_arity {
        for i in 1..=k {
            vars.push(coord_var(j, i));
        }
    }
    let coord = |j: usize, i: usize| iota.parameters + (j - 1) * k + (i - 1);
    let sig = src.signature();
    let domain = iota.domain.compile(sig, &mut vars)?;
    let formulas = iota
        .relations
        .iter()
        .map(|r| r.formula.compile(sig, &mut vars))
        .collect::<Result<Vec<_>>>()?;
    let mut env: Vec<Elem> = vec![0; vars.len()];
    env[..params.len()].copy_from_slice(params);
    let mut universe = Vec::new();
    for t in all_tuples(src.domain_size(), k) {
        for (i, &e) in t.iter().enumerate() {
            env[coord(1, i + 1)] = e;
        }
        if domain.eval(src, &mut env) {
            universe.push(t.to_vec());
        }
    }
    let n = universe.len() as u32;
    let mut extents = Vec::new();
    for (rel, f) in iota.relations.iter().zip(&formulas) {
        let mut ext = Vec::new();
        for t in all_tuples(n, rel.arity) {
            for (j, &a) in t.iter().enumerate() {
                for (i, &e) in universe[a as usize].iter().enumerate() {
                    env[coord(j + 1, i + 1)] = e;
                }
            }
            if f.eval(src, &mut env) {
                ext.push(t);
            }
        }
        extents.push(ext);
    }
    Ok((Structure::new(iota.target_signature()?, n, extents)?, universe))
}

/// The structure `ι(src, params)`.
pub fn apply_interpretation(iota: &Interpretation, src: &Structure, params: &[Elem]) -> Result<Structure> {
    interpret(iota, src, params).map(|(s, _)| s)
}

/// `({0, 1}; R0 = {0}, R1 = {1}, Eq = equality)`, the source of every
/// emitted reduction.
pub fn source_template() -> Structure {
    Structure::from_relations(
        2,
        [
            ("R0", 1, vec![vec![0]]),
            ("R1", 1, vec![vec![1]]),
            ("Eq", 2, vec![vec![0, 0], vec![1, 1]]),
        ],
    )
    .expect("valid source template")
}

/// The template a reduction maps into.
#[derive(Debug, Clone)]
pub enum Target {
    Finite(Structure),
    Orbit(OrbitTemplate),
}

impl Target {
    /// Whether `s` maps homomorphically to the template.
    pub fn accepts(&self, s: &Structure) -> Result<bool> {
        match self {
            Target::Finite(t) => Ok(find_homomorphism(s, t)?.is_some()),
            Target::Orbit(t) => {
                // components are independent; isolated elements are free
                for c in s.components() {
                    let inst = structure_to_instance(&c, t)?;
                    if !solve_orbit(&inst, t, OrbitMode::Search)?.is_sat() {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
        }
    }

    pub fn relation_names(&self) -> Vec<String> {
        self.signature().relations.iter().map(|r| r.name.clone()).collect()
    }

    /// The signature of instances read as structures.
    pub fn signature(&self) -> Signature {
        match self {
            Target::Finite(t) => t.signature().clone(),
            Target::Orbit(t) => Signature::new(t.relation_symbols()).expect("relation names are distinct"),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Target::Finite(t) => format!("finite template on {} elements", t.domain_size()),
            Target::Orbit(t) => t.name().to_string(),
        }
    }

    /// The structure as instances are compared against obstructions: itself
    /// for finite templates, its permutation closure for orbit templates
    /// (see [`closure_structure`]).
    pub fn normalize(&self, s: &Structure) -> Result<Structure> {
        match self {
            Target::Finite(_) => Ok(s.clone()),
            Target::Orbit(t) => closure_structure(&structure_to_instance(s, t)?, t),
        }
    }
}

/// The digraph `B_φ` of a balanced implication: vertices are the points of
/// `proj_u`, with an arc `a -> b` when a satisfying assignment sends `u` into
/// `a` and `v` into `b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImplicationDigraph<P> {
    pub vertices: Vec<P>,
    pub in_c: Vec<bool>,
    pub arcs: Vec<(usize, usize)>,
    /// Strongly connected components, each sorted, ordered by least vertex.
    pub sccs: Vec<Vec<usize>>,
}

impl<P> ImplicationDigraph<P> {
    /// Whether the component carries an arc (a loop or a longer cycle).
    pub fn is_cyclic(&self, scc: &[usize]) -> bool {
        scc.len() > 1 || self.arcs.contains(&(scc[0], scc[0]))
    }

    pub fn to_dot<A: Algebra<Point = P>>(&self, alg: &A, arity: usize) -> String {
        let mut out = String::from("digraph B {\n");
        for (i, v) in self.vertices.iter().enumerate() {
            let shape = if self.in_c[i] { "box" } else { "ellipse" };
            let label = alg.format_point(arity, v).replace('"', "\\\"");
            out.push_str(&format!("  v{i} [label=\"{label}\", shape={shape}];\n"));
        }
        for &(a, b) in &self.arcs {
            out.push_str(&format!("  v{a} -> v{b};\n"));
        }
        out.push_str("}\n");
        out
    }
}

fn require_balanced<P>(i: &Implication<P>) -> Result<()> {
    if !i.flags.is_implication || !i.flags.balanced {
        return Err(Error::Precondition("expected a balanced implication".into()));
    }
    Ok(())
}

pub fn implication_digraph<A: Algebra>(i: &Implication<A::Point>, alg: &A) -> Result<ImplicationDigraph<A::Point>> {
    require_balanced(i)?;
    let vertices = i.u_proj.clone();
    let index: HashMap<&A::Point, usize> = vertices.iter().enumerate().map(|(n, p)| (p, n)).collect();
    let mut arcs: Vec<(usize, usize)> = orbit_mappings(i, alg)?
        .iter()
        .map(|(a, b)| (index[a], index[b]))
        .collect();
    arcs.sort_unstable();
    let in_c: Vec<bool> = vertices.iter().map(|p| i.c.binary_search(p).is_ok()).collect();
    let mut g = DiGraph::<(), ()>::new();
    let nodes: Vec<_> = (0..vertices.len()).map(|_| g.add_node(())).collect();
    for &(a, b) in &arcs {
        g.add_edge(nodes[a], nodes[b], ());
    }
    let mut sccs: Vec<Vec<usize>> = tarjan_scc(&g)
        .into_iter()
        .map(|c| {
            let mut c: Vec<usize> = c.into_iter().map(|n| n.index()).collect();
            c.sort_unstable();
            c
        })
        .collect();
    sccs.sort();
    let inside_c = sccs.iter().any(|s| s.iter().all(|&v| in_c[v]));
    let outside_c = sccs.iter().any(|s| s.iter().all(|&v| !in_c[v]));
    if !inside_c || !outside_c {
        return Err(Error::InvalidWitness(
            "no strongly connected component inside C and one outside it".into(),
        ));
    }
    Ok(ImplicationDigraph {
        vertices,
        in_c,
        arcs,
        sccs,
    })
}

/// The equivalence relation extracted from a stable, balanced and proper
/// implication, on points of arity `m` whose last `m - r` coordinates are
/// the variables shared by `u` and `v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Equivalence<P> {
    /// The witness with shared positions moved to the end.
    pub implication: Implication<P>,
    pub r: usize,
    pub m: usize,
    /// Number of copies composed.
    pub power: usize,
    /// `ψ(u, v) ∧ ψ(v, u)` with free tuple `(u_1..u_r, v_1..v_m)`.
    pub theta: PPFormula,
    /// The relation used by the gadget, over `(u_1..u_r, v_1..v_m)`.
    pub relation: Vec<P>,
    pub classes: Vec<Vec<P>>,
    /// Whether `relation` is the relation defined by `theta`. When `theta`
    /// does not yield two classes, the gadget falls back to "same cyclic
    /// component of `B_φ`", which need not be definable.
    pub definable: bool,
    /// Two points from different classes agreeing on the shared coordinates,
    /// least in the point order.
    pub representatives: (P, P),
}

fn union_find_classes<P: Clone + Ord + std::hash::Hash>(pairs: &[(P, P)]) -> Vec<Vec<P>> {
    let mut support: Vec<P> = pairs.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
    canonicalize(&mut support);
    let index: HashMap<&P, usize> = support.iter().enumerate().map(|(i, p)| (p, i)).collect();
    let mut parent: Vec<usize> = (0..support.len()).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while parent[r] != r {
            r = parent[r];
        }
        let mut y = x;
        while parent[y] != r {
            let next = parent[y];
            parent[y] = r;
            y = next;
        }
        r
    }
    for (a, b) in pairs {
        let (x, y) = (find(&mut parent, index[a]), find(&mut parent, index[b]));
        parent[x.max(y)] = x.min(y);
    }
    let mut groups: HashMap<usize, Vec<P>> = HashMap::new();
    for (i, p) in support.iter().enumerate() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(p.clone());
    }
    let mut classes: Vec<Vec<P>> = groups.into_values().collect();
    classes.sort();
    classes
}

/// Whether the pairs form an equivalence relation on their support.
fn is_equivalence<P: Clone + Ord + std::hash::Hash>(pairs: &HashSet<(P, P)>, classes: &[Vec<P>]) -> bool {
    classes
        .iter()
        .all(|c| c.iter().all(|a| c.iter().all(|b| pairs.contains(&(a.clone(), b.clone())))))
}

fn least_representatives<A: Algebra>(alg: &A, m: usize, r: usize, classes: &[Vec<A::Point>]) -> Option<(A::Point, A::Point)> {
    let shared: Vec<usize> = (r..m).collect();
    let mut best: Option<(A::Point, A::Point)> = None;
    for (ci, c1) in classes.iter().enumerate() {
        for (cj, c2) in classes.iter().enumerate() {
            if ci == cj {
                continue;
            }
            for a in c1 {
                for b in c2 {
                    if alg.restrict(m, a, &shared) == alg.restrict(m, b, &shared) {
                        let cand = (a.clone(), b.clone());
                        if best.as_ref().map_or(true, |x| cand < *x) {
                            best = Some(cand);
                        }
                    }
                }
            }
        }
    }
    best
}

/// Copies `f`, sending free variables through `map` and giving bound
/// variables fresh names `e1, e2, ...` that avoid `taken`.
fn rename_apart(f: &PPFormula, map: &HashMap<String, String>, taken: &mut HashSet<String>, counter: &mut usize) -> PPFormula {
    let mut local: HashMap<String, String> = map.clone();
    for x in f.vars() {
        if !local.contains_key(&x) {
            let name = loop {
                *counter += 1;
                let name = format!("e{counter}");
                if taken.insert(name.clone()) {
                    break name;
                }
            };
            local.insert(x, name);
        }
    }
    f.rename(|x| local[x].clone())
}

/// `ψ = φ^{∘n}` with `n` the number of vertices of `B_φ`, then
/// `θ(u, v) = ψ(u, v) ∧ ψ(v, u)` read over `(u_1..u_r, v_1..v_m)`.
pub fn build_equivalence<A: Algebra>(i: &Implication<A::Point>, alg: &A) -> Result<Equivalence<A::Point>> {
    let f = i.flags;
    if !(f.is_implication && f.stable && f.balanced && f.proper) {
        return Err(Error::Precondition("expected a stable, balanced and proper implication".into()));
    }
    let m = i.u.len();
    let shared: Vec<usize> = i.pi.iter().map(|&(a, _)| a).collect();
    let order: Vec<usize> = (0..m)
        .filter(|p| !shared.contains(p))
        .chain(shared.iter().copied())
        .collect();
    let r = m - shared.len();
    let u: Vec<String> = order.iter().map(|&p| i.u[p].clone()).collect();
    let v: Vec<String> = order.iter().map(|&p| i.v[p].clone()).collect();
    let c = alg.restrict_all(m, &i.c, &order);
    let phi = check_implication(&i.formula, &c, &u, &c, &v, alg)?;
    let graph = implication_digraph(&phi, alg)?;
    let power = graph.vertices.len().max(1);
    let mut psi = phi.clone();
    for _ in 1..power {
        psi = compose(&psi, &phi, alg)?;
    }
    // ψ(u, v) ∧ ψ(v, u), bound variables renamed apart in both copies
    let w: Vec<String> = u[..r].iter().chain(&psi.v).cloned().collect();
    let mut taken: HashSet<String> = w.iter().cloned().collect();
    let mut counter = 0;
    let straight: HashMap<String, String> = psi
        .u
        .iter()
        .chain(&psi.v)
        .map(|x| (x.clone(), x.clone()))
        .collect();
    let mut swapped: HashMap<String, String> = straight.clone();
    for (a, b) in psi.u.iter().zip(&psi.v) {
        swapped.insert(a.clone(), b.clone());
        swapped.insert(b.clone(), a.clone());
    }
    let left = rename_apart(&psi.formula, &straight, &mut taken, &mut counter);
    let right = rename_apart(&psi.formula, &swapped, &mut taken, &mut counter);
    let mut atoms = left.atoms;
    atoms.extend(right.atoms);
    let theta = PPFormula::new(atoms, w.clone());
    let arity = r + m;
    let upos: Vec<usize> = (0..r).chain(2 * r..arity).collect();
    let vpos: Vec<usize> = (r..arity).collect();

    let rows = eval_pp(&theta, alg)?;
    let pairs: Vec<(A::Point, A::Point)> = alg
        .restrict_all(arity, &rows, &upos)
        .into_iter()
        .zip(alg.restrict_all(arity, &rows, &vpos))
        .collect();
    let pair_set: HashSet<(A::Point, A::Point)> = pairs.iter().cloned().collect();
    let classes = union_find_classes(&pairs);
    if is_equivalence(&pair_set, &classes) {
        if let Some(reps) = least_representatives(alg, m, r, &classes) {
            return Ok(Equivalence {
                implication: phi,
                r,
                m,
                power,
                theta,
                relation: rows,
                classes,
                definable: true,
                representatives: reps,
            });
        }
    }

    // fallback: the cyclic strongly connected components of B_φ
    let classes: Vec<Vec<A::Point>> = graph
        .sccs
        .iter()
        .filter(|s| graph.is_cyclic(s))
        .map(|s| s.iter().map(|&x| graph.vertices[x].clone()).collect())
        .collect();
    let reps = least_representatives(alg, m, r, &classes).ok_or_else(|| {
        Error::InvalidWitness("fewer than two classes sharing a projection onto the shared variables".into())
    })?;
    let class_of: HashMap<&A::Point, usize> = classes
        .iter()
        .enumerate()
        .flat_map(|(n, c)| c.iter().map(move |p| (p, n)))
        .collect();
    let full = alg.full(arity);
    let ru = alg.restrict_all(arity, &full, &upos);
    let rv = alg.restrict_all(arity, &full, &vpos);
    let relation: Vec<A::Point> = full
        .iter()
        .zip(ru.iter().zip(&rv))
        .filter(|(_, (a, b))| matches!((class_of.get(a), class_of.get(b)), (Some(x), Some(y)) if x == y))
        .map(|(p, _)| p.clone())
        .collect();
    Ok(Equivalence {
        implication: phi,
        r,
        m,
        power,
        theta,
        relation,
        classes,
        definable: false,
        representatives: reps,
    })
}

/// What a hardness claim rests on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HardnessWitness<P> {
    Balanced(Implication<P>),
    /// A formula over `(x, y)` defining equality.
    Equality(PPFormula),
}

/// An interpretation together with the expanded template it maps into.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub interpretation: Interpretation,
    pub target: Target,
    /// The choices made while building the target, one line each.
    pub notes: Vec<String>,
}

fn gadget_name(existing: &[String], base: &str) -> String {
    let mut name = base.to_string();
    while existing.contains(&name) {
        name.push('_');
    }
    name
}

fn expand_structure(s: &Structure, extra: Vec<(String, usize, Vec<Tuple>)>) -> Result<Structure> {
    let mut rels: Vec<(String, usize)> = s.signature().relations.iter().map(|r| (r.name.clone(), r.arity)).collect();
    let mut extents = s.extents().to_vec();
    for (name, arity, ext) in extra {
        rels.push((name, arity));
        extents.push(ext);
    }
    Structure::new(Signature::new(rels)?, s.domain_size(), extents)
}

fn x1() -> String {
    coord_var(1, 1)
}

/// The `(Eq, O)` interpretation shared by the finite and the orbit
/// equality cases.
fn equality_interpretation(o: &str, eq: &str) -> Interpretation {
    Interpretation {
        dimension: 1,
        parameters: 0,
        domain: FoFormula::True,
        relations: vec![
            InterpretedRelation {
                name: o.to_string(),
                arity: 2,
                formula: FoFormula::and([
                    FoFormula::atom("R0", [x1()]),
                    FoFormula::atom("R1", [coord_var(2, 1)]),
                ]),
            },
            InterpretedRelation {
                name: eq.to_string(),
                arity: 2,
                formula: FoFormula::atom("Eq", [x1(), coord_var(2, 1)]),
            },
        ],
    }
}

/// Reduction into a finite template. A balanced witness must relate single
/// variables.
pub fn emit_reduction_finite(w: &HardnessWitness<Tuple>, template: &Structure) -> Result<Reduction> {
    let names: Vec<String> = template.signature().relations.iter().map(|r| r.name.clone()).collect();
    match w {
        HardnessWitness::Balanced(i) => {
            if i.u.len() != 1 {
                return Err(Error::Precondition("finite witnesses relate single variables".into()));
            }
            let eq = build_equivalence(i, template)?;
            let (c, d) = eq.representatives.clone();
            let (theta, rc, rd) = (
                gadget_name(&names, "Theta"),
                gadget_name(&names, "Rc"),
                gadget_name(&names, "Rd"),
            );
            let target = expand_structure(
                template,
                vec![
                    (theta.clone(), 2, eq.relation.clone()),
                    (rc.clone(), 1, vec![c.clone()]),
                    (rd.clone(), 1, vec![d.clone()]),
                ],
            )?;
            let iota = Interpretation {
                dimension: 1,
                parameters: 0,
                domain: FoFormula::True,
                relations: vec![
                    InterpretedRelation {
                        name: theta.clone(),
                        arity: 2,
                        formula: FoFormula::atom("Eq", [x1(), coord_var(2, 1)]),
                    },
                    InterpretedRelation {
                        name: rc,
                        arity: 1,
                        formula: FoFormula::atom("R0", [x1()]),
                    },
                    InterpretedRelation {
                        name: rd,
                        arity: 1,
                        formula: FoFormula::atom("R1", [x1()]),
                    },
                ],
            };
            let mut notes = vec![
                format!("{theta} composes {} copies of the witness", eq.power),
                format!("classes: {}", format_classes(template, 1, &eq.classes)),
                format!("c = {}, d = {}", c[0], d[0]),
            ];
            if !eq.definable {
                notes.push(format!("{theta} is the cyclic-component relation, not the symmetrized power"));
            }
            Ok(Reduction {
                interpretation: iota,
                target: Target::Finite(target),
                notes,
            })
        }
        HardnessWitness::Equality(f) => {
            if template.domain_size() < 2 {
                return Err(Error::Precondition("equality gadget needs two elements".into()));
            }
            check_equality_definition(f, template)?;
            let (o, e) = (gadget_name(&names, "O"), gadget_name(&names, "Eq"));
            let target = expand_structure(
                template,
                vec![
                    (o.clone(), 2, vec![tuple([0, 1])]),
                    (e.clone(), 2, (0..template.domain_size()).map(|a| tuple([a, a])).collect()),
                ],
            )?;
            Ok(Reduction {
                interpretation: equality_interpretation(&o, &e),
                target: Target::Finite(target),
                notes: vec![format!("{o} = {{(0, 1)}}; {e} defined by {f}")],
            })
        }
    }
}

fn check_equality_definition<A: Algebra>(f: &PPFormula, alg: &A) -> Result<()> {
    if f.free.len() != 2 {
        return Err(Error::InvalidWitness("an equality definition has two free variables".into()));
    }
    let rows = eval_pp(f, alg)?;
    let eq: Vec<A::Point> = alg.full(2).into_iter().filter(|p| alg.same(2, p, 0, 1)).collect();
    if rows != eq {
        return Err(Error::InvalidWitness(format!("`{f}` does not define equality")));
    }
    Ok(())
}

fn format_classes<A: Algebra>(alg: &A, arity: usize, classes: &[Vec<A::Point>]) -> String {
    classes
        .iter()
        .map(|c| {
            let pts: Vec<String> = c.iter().map(|p| alg.format_point(arity, p)).collect();
            format!("{{{}}}", pts.join(", "))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// `φ_V`: the `m` elements are `(x, p_1) .. (x, p_r)` followed by
/// `(p_{r+1}, p_{r+1}) .. (p_m, p_m)`. `elems` are the 1-based element
/// indices standing for `x^1 .. x^m`.
fn phi_v(elems: &[usize], r: usize) -> FoFormula {
    let mut parts = Vec::new();
    for &a in &elems[..r] {
        for &b in &elems[..r] {
            if a < b {
                parts.push(FoFormula::eq(coord_var(a, 1), coord_var(b, 1)));
            }
        }
    }
    for (i, &a) in elems.iter().enumerate().skip(r) {
        parts.push(FoFormula::eq(coord_var(a, 1), param_var(i + 1)));
    }
    for (i, &a) in elems.iter().enumerate() {
        parts.push(FoFormula::eq(coord_var(a, 2), param_var(i + 1)));
    }
    FoFormula::and(parts)
}

/// Reduction into an orbit template: a 2-ary interpretation with `m`
/// parameters for balanced witnesses, a 1-ary one for equality.
pub fn emit_reduction_orbit(w: &HardnessWitness<u32>, template: &OrbitTemplate) -> Result<Reduction> {
    let names: Vec<String> = template.relation_symbols().into_iter().map(|(n, _)| n).collect();
    match w {
        HardnessWitness::Balanced(i) => {
            let eq = build_equivalence(i, template)?;
            let (r, m) = (eq.r, eq.m);
            let (o1, o2) = eq.representatives;
            let (theta, n1, n2) = (
                gadget_name(&names, "Theta"),
                gadget_name(&names, "O1"),
                gadget_name(&names, "O2"),
            );
            let target = template.expand(
                &format!("{}+gadget", template.name()),
                vec![
                    (theta.clone(), r + m, eq.relation.clone()),
                    (n1.clone(), m, vec![o1]),
                    (n2.clone(), m, vec![o2]),
                ],
            )?;
            let elems: Vec<usize> = (1..=m).collect();
            let domain = FoFormula::or((1..=m).map(|i| FoFormula::eq(coord_var(1, 2), param_var(i))));
            // R(x^1..x^r, y^1..y^m): x^j is element j, y^i is element r + i
            let ys: Vec<usize> = (r + 1..=r + m).collect();
            let xs_then_ys: Vec<usize> = (1..=r).chain(ys[r..].iter().copied()).collect();
            let phi_r = FoFormula::and([
                phi_v(&xs_then_ys, r),
                phi_v(&ys, r),
                FoFormula::atom("Eq", [coord_var(1, 1), coord_var(r + 1, 1)]),
            ]);
            let iota = Interpretation {
                dimension: 2,
                parameters: m,
                domain,
                relations: vec![
                    InterpretedRelation {
                        name: theta.clone(),
                        arity: r + m,
                        formula: phi_r,
                    },
                    InterpretedRelation {
                        name: n1.clone(),
                        arity: m,
                        formula: FoFormula::and([phi_v(&elems, r), FoFormula::atom("R0", [coord_var(1, 1)])]),
                    },
                    InterpretedRelation {
                        name: n2.clone(),
                        arity: m,
                        formula: FoFormula::and([phi_v(&elems, r), FoFormula::atom("R1", [coord_var(1, 1)])]),
                    },
                ],
            };
            let mut notes = vec![
                format!("m = {m}, r = {r}; {theta} composes {} copies of the witness", eq.power),
                format!("classes: {}", format_classes(template, m, &eq.classes)),
                format!(
                    "{n1} = {}, {n2} = {} (least pair from two classes with equal shared projection)",
                    template.format_point(m, &eq.representatives.0),
                    template.format_point(m, &eq.representatives.1)
                ),
            ];
            if !eq.definable {
                notes.push(format!(
                    "{theta} is the cyclic-component relation: the symmetrized power gives fewer than two usable classes"
                ));
            }
            Ok(Reduction {
                interpretation: iota,
                target: Target::Orbit(target),
                notes,
            })
        }
        HardnessWitness::Equality(f) => {
            check_equality_definition(f, template)?;
            let full = template.full(2);
            let o = *full
                .iter()
                .find(|p| template.is_injective(2, p))
                .ok_or_else(|| Error::Precondition("no injective orbit of pairs".into()))?;
            let eqs: Vec<u32> = full.iter().copied().filter(|p| template.same(2, p, 0, 1)).collect();
            let (on, en) = (gadget_name(&names, "O"), gadget_name(&names, "Eq"));
            let target = template.expand(
                &format!("{}+gadget", template.name()),
                vec![(on.clone(), 2, vec![o]), (en.clone(), 2, eqs)],
            )?;
            Ok(Reduction {
                interpretation: equality_interpretation(&on, &en),
                target: Target::Orbit(target),
                notes: vec![format!("{on} = {}; {en} defined by {f}", template.format_point(2, &o))],
            })
        }
    }
}

/// A structure on which one of the two reduction conditions fails.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    pub structure: Structure,
    /// `Some` for the parameter tuple at fault; `None` when the "some
    /// parameter tuple" condition fails as a whole.
    pub params: Option<Vec<Elem>>,
    pub source_sat: bool,
    pub target_sat: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    pub n: u32,
    /// Source structures checked, up to isomorphism.
    pub structures: usize,
    /// Interpreted structures solved.
    pub target_checks: usize,
    pub counterexample: Option<Counterexample>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.counterexample.is_none()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.counterexample {
            None => write!(
                f,
                "PASS: {} source structures with at most {} elements, {} interpreted instances",
                self.structures, self.n, self.target_checks
            ),
            Some(c) => {
                write!(f, "FAIL on {}", c.structure)?;
                if let Some(p) = &c.params {
                    write!(f, " with parameters {p:?}")?;
                }
                write!(f, ": source {}, target {}", sat_word(c.source_sat), sat_word(c.target_sat))
            }
        }
    }
}

fn sat_word(b: bool) -> &'static str {
    if b {
        "solvable"
    } else {
        "unsolvable"
    }
}

/// Every injective tuple of length `p` over `0..n`, lexicographic.
fn proper_tuples(n: u32, p: usize) -> Vec<Vec<Elem>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(n: u32, p: usize, cur: &mut Vec<Elem>, out: &mut Vec<Vec<Elem>>) {
        if cur.len() == p {
            out.push(cur.clone());
            return;
        }
        for e in 0..n {
            if !cur.contains(&e) {
                cur.push(e);
                rec(n, p, cur, out);
                cur.pop();
            }
        }
    }
    rec(n, p, &mut cur, &mut out);
    out
}

fn check_one(iota: &Interpretation, source: &Structure, target: &Target, s: &Structure) -> Result<(usize, Option<Counterexample>)> {
    let tuples = proper_tuples(s.domain_size(), iota.parameters);
    if tuples.is_empty() {
        return Ok((0, None));
    }
    let source_sat = find_homomorphism(s, source)?.is_some();
    let mut any = false;
    for p in &tuples {
        let t = apply_interpretation(iota, s, p)?;
        let target_sat = target.accepts(&t)?;
        if target_sat != source_sat {
            // condition 1 needs every tuple to agree
            return Ok((
                tuples.len(),
                Some(Counterexample {
                    structure: s.clone(),
                    params: Some(p.clone()),
                    source_sat,
                    target_sat,
                }),
            ));
        }
        any |= target_sat;
    }
    if any != source_sat {
        return Ok((
            tuples.len(),
            Some(Counterexample {
                structure: s.clone(),
                params: None,
                source_sat,
                target_sat: any,
            }),
        ));
    }
    Ok((tuples.len(), None))
}

/// Checks both reduction conditions on every source structure with at most
/// `n` elements (up to isomorphism) and every proper parameter tuple.
/// `jobs = 0` uses all cores. The counterexample reported is the first one
/// in enumeration order.
pub fn verify_reduction(iota: &Interpretation, source: &Structure, target: &Target, n: u32, jobs: usize) -> Result<VerifyReport> {
    iota.validate()?;
    let mut structures = Vec::new();
    for size in 0..=n {
        structures.extend(nonisomorphic_structures(source.signature(), size)?);
    }
    let results: Vec<Result<(usize, Option<Counterexample>)>> = with_jobs(jobs, || {
        structures
            .par_iter()
            .map(|s| check_one(iota, source, target, s))
            .collect()
    })?;
    let mut report = VerifyReport {
        n,
        structures: structures.len(),
        target_checks: 0,
        counterexample: None,
    };
    for res in results {
        let (checks, cex) = res?;
        report.target_checks += checks;
        if report.counterexample.is_none() {
            report.counterexample = cex;
        }
    }
    Ok(report)
}

/// The source structure of graph unreachability: `R0(s)`, `R1(t)` and an
/// `Eq` fact per edge. It is solvable exactly when `t` is not reachable
/// from `s` in the undirected graph.
pub fn unreachability_structure(vertices: u32, edges: &[(Elem, Elem)], s: Elem, t: Elem) -> Result<Structure> {
    Structure::new(
        source_template().signature().clone(),
        vertices,
        vec![
            vec![tuple([s])],
            vec![tuple([t])],
            edges.iter().map(|&(a, b)| tuple([a, b])).collect(),
        ],
    )
}

/// Runs the chain graph → source instance → interpreted instance, using the
/// first `p` vertices as parameters. `None` when the graph has too few
/// vertices.
pub fn chain_accepts(
    iota: &Interpretation,
    target: &Target,
    vertices: u32,
    edges: &[(Elem, Elem)],
    s: Elem,
    t: Elem,
) -> Result<Option<bool>> {
    if (vertices as usize) < iota.parameters {
        return Ok(None);
    }
    let src = unreachability_structure(vertices, edges, s, t)?;
    let params: Vec<Elem> = (0..iota.parameters as Elem).collect();
    let img = apply_interpretation(iota, &src, &params)?;
    target.accepts(&img).map(Some)
}

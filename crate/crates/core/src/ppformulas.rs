//! Equality-free conjunctive formulae, tree formulae and their evaluation.

use std::collections::{HashMap, HashSet};
use std::fmt;

use crate::algebra::{canonicalize, Algebra, Conjunct};
use crate::error::{Error, Result};
use crate::relcore::{Signature, Structure, Tuple};

/// Relation name standing for the full relation of the atom's arity.
pub const FULL: &str = "@full";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub relation: String,
    pub args: Vec<String>,
}

impl Atom {
    pub fn new<S: Into<String>>(relation: &str, args: impl IntoIterator<Item = S>) -> Self {
        Atom {
            relation: relation.to_string(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.relation, self.args.join(", "))
    }
}

/// A conjunction of atoms with an ordered tuple of free variables. Free
/// variables need not occur in any atom.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct PPFormula {
    pub atoms: Vec<Atom>,
    pub free: Vec<String>,
}

impl PPFormula {
    pub fn new<S: Into<String>>(atoms: Vec<Atom>, free: impl IntoIterator<Item = S>) -> Self {
        PPFormula {
            atoms,
            free: free.into_iter().map(Into::into).collect(),
        }
    }

    /// Variables in order: free ones first, then by first occurrence.
    pub fn vars(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for v in self.free.iter().chain(self.atoms.iter().flat_map(|a| a.args.iter())) {
            if seen.insert(v.as_str()) {
                out.push(v.clone());
            }
        }
        out
    }

    /// The same atoms with a different free tuple.
    pub fn with_free<S: Into<String>>(&self, free: impl IntoIterator<Item = S>) -> Self {
        PPFormula::new(self.atoms.clone(), free)
    }

    /// Renames every variable through `f`.
    pub fn rename(&self, f: impl Fn(&str) -> String) -> Self {
        PPFormula {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    relation: a.relation.clone(),
                    args: a.args.iter().map(|v| f(v)).collect(),
                })
                .collect(),
            free: self.free.iter().map(|v| f(v)).collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Parser::new(text).formula()
    }
}

impl fmt::Display for PPFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] ", self.free.join(", "))?;
        if self.atoms.is_empty() {
            return write!(f, "true");
        }
        for (i, a) in self.atoms.iter().enumerate() {
            if i > 0 {
                write!(f, " & ")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for PPFormula {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PPFormula::parse(s)
    }
}

/// Extra relations visible to the evaluator besides the template's own,
/// keyed by name: arity and extent.
pub type ExtraRelations<P> = HashMap<String, (usize, Vec<P>)>;

/// Evaluates `f` over the template: all points over `f.free` extending to a
/// satisfying assignment. Canonical order.
pub fn eval_pp<A: Algebra>(f: &PPFormula, alg: &A) -> Result<Vec<A::Point>> {
    eval_pp_with(f, alg, &HashMap::new())
}

/// As [`eval_pp`], also resolving names in `extra` and the `@full` relation.
pub fn eval_pp_with<A: Algebra>(
    f: &PPFormula,
    alg: &A,
    extra: &ExtraRelations<A::Point>,
) -> Result<Vec<A::Point>> {
    let vars = f.vars();
    let index: HashMap<&str, usize> = vars.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let mut extents: Vec<std::borrow::Cow<'_, [A::Point]>> = Vec::with_capacity(f.atoms.len());
    let mut args: Vec<Vec<usize>> = Vec::with_capacity(f.atoms.len());
    let mut fulls: HashMap<usize, Vec<A::Point>> = HashMap::new();
    for a in &f.atoms {
        args.push(a.args.iter().map(|v| index[v.as_str()]).collect());
        if a.relation == FULL {
            fulls.entry(a.args.len()).or_insert_with(|| alg.full(a.args.len()));
            extents.push(std::borrow::Cow::Owned(Vec::new()));
            continue;
        }
        let (arity, ext) = match extra.get(&a.relation) {
            Some((arity, ext)) => (*arity, std::borrow::Cow::Borrowed(&ext[..])),
            None => alg
                .relation(&a.relation)
                .ok_or_else(|| Error::UnknownRelation(a.relation.clone()))?,
        };
        if arity != a.args.len() {
            return Err(Error::ArityMismatch {
                name: a.relation.clone(),
                expected: arity,
                found: a.args.len(),
            });
        }
        extents.push(ext);
    }
    let conjuncts: Vec<Conjunct<'_, A::Point>> = f
        .atoms
        .iter()
        .zip(args.iter())
        .zip(extents.iter())
        .map(|((a, args), ext)| Conjunct {
            args,
            extent: if a.relation == FULL {
                &fulls[&a.args.len()][..]
            } else {
                &ext[..]
            },
        })
        .collect();
    let free: Vec<usize> = f.free.iter().map(|v| index[v.as_str()]).collect();
    let mut distinct = HashSet::new();
    if let Some(v) = f.free.iter().find(|v| !distinct.insert(v.as_str())) {
        return Err(Error::RepeatedVariable(v.clone()));
    }
    Ok(alg.solve_conjunction(vars.len(), &conjuncts, &free))
}

/// Projection of a tuple relation onto `positions`, canonical order.
pub fn project(rel: &[Tuple], positions: &[usize]) -> Result<Vec<Tuple>> {
    if let Some(t) = rel.first() {
        if let Some(&bad) = positions.iter().find(|&&p| p >= t.len()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                arity: t.len(),
            });
        }
    }
    let mut out: Vec<Tuple> = rel.iter().map(|t| positions.iter().map(|&p| t[p]).collect()).collect();
    canonicalize(&mut out);
    Ok(out)
}

/// The canonical structure of a formula: its variables as elements, each atom
/// as a tuple. Relations appear in order of first use; `@full` atoms are kept.
pub fn canonical_structure(f: &PPFormula) -> Structure {
    let mut names: Vec<(String, usize)> = Vec::new();
    for a in &f.atoms {
        if !names.iter().any(|(n, _)| n == &a.relation) {
            names.push((a.relation.clone(), a.args.len()));
        }
    }
    let sig = Signature::new(names).expect("atom names are distinct by construction");
    canonical_structure_over(f, &sig).expect("signature built from the formula")
}

/// The canonical structure over a given signature; `@full` atoms are dropped.
pub fn canonical_structure_over(f: &PPFormula, sig: &Signature) -> Result<Structure> {
    let vars = f.vars();
    let index: HashMap<&str, u32> = vars.iter().enumerate().map(|(i, v)| (v.as_str(), i as u32)).collect();
    let mut extents = vec![Vec::new(); sig.len()];
    for a in &f.atoms {
        if a.relation == FULL && sig.index_of(FULL).is_none() {
            continue;
        }
        let r = sig
            .index_of(&a.relation)
            .ok_or_else(|| Error::UnknownRelation(a.relation.clone()))?;
        extents[r].push(a.args.iter().map(|v| index[v.as_str()]).collect());
    }
    Structure::new(sig.clone(), vars.len() as u32, extents)
}

/// A tree formula: a root atom, leaf subformulae hanging off it, and a root
/// tuple of distinct variables of the root atom.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TreeFormula {
    pub root: Vec<String>,
    pub atom: Atom,
    pub children: Vec<TreeFormula>,
}

impl TreeFormula {
    pub fn leaf(root: Vec<String>, atom: Atom) -> Self {
        TreeFormula {
            root,
            atom,
            children: Vec::new(),
        }
    }

    /// Atoms in pre-order: the root atom, then each subtree in turn.
    pub fn atoms(&self) -> Vec<Atom> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms(&self, out: &mut Vec<Atom>) {
        out.push(self.atom.clone());
        for c in &self.children {
            c.collect_atoms(out);
        }
    }

    pub fn vars(&self) -> HashSet<String> {
        self.atoms().into_iter().flat_map(|a| a.args).collect()
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(TreeFormula::size).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(TreeFormula::depth).max().unwrap_or(0)
    }

    /// The formula with the root as free tuple.
    pub fn to_pp(&self) -> PPFormula {
        PPFormula::new(self.atoms(), self.root.clone())
    }

    fn remove_at(&mut self, path: &[usize]) {
        let (last, init) = path.split_last().expect("non-root path");
        let mut t = self;
        for &i in init {
            t = &mut t.children[i];
        }
        t.children.remove(*last);
    }

    fn paths_postorder(&self, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for i in 0..self.children.len() {
            prefix.push(i);
            self.children[i].paths_postorder(prefix, out);
            out.push(prefix.clone());
            prefix.pop();
        }
    }
}

/// Checks the tree conditions with roots of at most `k` distinct variables.
pub fn validate_tree(t: &TreeFormula, k: usize) -> bool {
    let atom_vars: HashSet<&str> = t.atom.args.iter().map(String::as_str).collect();
    let root: HashSet<&str> = t.root.iter().map(String::as_str).collect();
    if root.len() != t.root.len() || t.root.len() > k || !root.is_subset(&atom_vars) {
        return false;
    }
    let child_vars: Vec<HashSet<String>> = t.children.iter().map(TreeFormula::vars).collect();
    for (i, c) in t.children.iter().enumerate() {
        if !validate_tree(c, k) {
            return false;
        }
        let ri: HashSet<&str> = c.root.iter().map(String::as_str).collect();
        if !ri.is_subset(&atom_vars) {
            return false;
        }
        let shared: HashSet<&str> = atom_vars
            .iter()
            .copied()
            .filter(|v| child_vars[i].contains(*v))
            .collect();
        if shared != ri {
            return false;
        }
        for (j, d) in t.children.iter().enumerate().skip(i + 1) {
            let rj: HashSet<&str> = d.root.iter().map(String::as_str).collect();
            let shared: HashSet<&str> = child_vars[i]
                .iter()
                .map(String::as_str)
                .filter(|v| child_vars[j].contains(*v))
                .collect();
            let expected: HashSet<&str> = ri.intersection(&rj).copied().collect();
            if shared != expected {
                return false;
            }
        }
    }
    true
}

/// Root projection of a tree formula.
pub fn root_projection<A: Algebra>(
    t: &TreeFormula,
    alg: &A,
    extra: &ExtraRelations<A::Point>,
) -> Result<Vec<A::Point>> {
    eval_pp_with(&t.to_pp(), alg, extra)
}

/// Greedy irredundancy: repeatedly drops a whole leaf subformula (deepest
/// first) whenever the root projection stays the same. When the root
/// projection is empty, first descends to the smallest subformula that is
/// already unsatisfiable on its own.
pub fn trim_minimal<A: Algebra>(t: &TreeFormula, alg: &A) -> Result<TreeFormula> {
    trim_minimal_with(t, alg, &HashMap::new())
}

pub fn trim_minimal_with<A: Algebra>(
    t: &TreeFormula,
    alg: &A,
    extra: &ExtraRelations<A::Point>,
) -> Result<TreeFormula> {
    let mut tree = t.clone();
    let mut target = root_projection(&tree, alg, extra)?;
    if target.is_empty() {
        // descend while some leaf subformula is unsatisfiable by itself
        'descend: loop {
            for c in &tree.children {
                if root_projection(c, alg, extra)?.is_empty() {
                    tree = c.clone();
                    continue 'descend;
                }
            }
            break;
        }
        target = Vec::new();
    }
    'outer: loop {
        let mut paths = Vec::new();
        tree.paths_postorder(&mut Vec::new(), &mut paths);
        for p in &paths {
            let mut cand = tree.clone();
            cand.remove_at(p);
            if root_projection(&cand, alg, extra)? == target {
                tree = cand;
                continue 'outer;
            }
        }
        return Ok(tree);
    }
}

/// Constants from the depth and counting arguments. Each is `None` when it
/// does not apply or overflows `u128`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TheoreticalBounds {
    pub d: Option<u128>,
    pub k_orbits: Option<u128>,
    pub l: Option<u128>,
    pub z: Option<u128>,
    pub p: Option<u128>,
    pub m: Option<u128>,
}

impl TheoreticalBounds {
    /// `d = (2^|A|)^2 * |A| + 2` for a finite template with `|A| = n`.
    pub fn finite(n: u32) -> Self {
        let d = 2u128
            .checked_pow(n)
            .and_then(|x| x.checked_mul(x))
            .and_then(|x| x.checked_mul(n as u128))
            .and_then(|x| x.checked_add(2));
        TheoreticalBounds {
            d,
            ..Default::default()
        }
    }

    /// Orbit constants from `K` (number of orbits of `k`-tuples) and `k`:
    /// `L = 2^K`, `Z = K(L^2 k + 3)`, `P = Z^k`, `M = P(k L^2 + 1) + 1`.
    pub fn orbit(k_orbits: u128, k: u32) -> Self {
        let kk = k as u128;
        let l = u32::try_from(k_orbits).ok().and_then(|e| 2u128.checked_pow(e));
        let l2 = l.and_then(|l| l.checked_mul(l));
        let z = l2
            .and_then(|l2| l2.checked_mul(kk))
            .and_then(|x| x.checked_add(3))
            .and_then(|x| x.checked_mul(k_orbits));
        let p = z.and_then(|z| z.checked_pow(k));
        let m = p
            .zip(l2)
            .and_then(|(p, l2)| l2.checked_mul(kk).and_then(|x| x.checked_add(1)).and_then(|x| x.checked_mul(p)))
            .and_then(|x| x.checked_add(1));
        TheoreticalBounds {
            d: None,
            k_orbits: Some(k_orbits),
            l,
            z,
            p,
            m,
        }
    }
}

impl fmt::Display for TheoreticalBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |x: Option<u128>| x.map_or_else(|| "-".to_string(), |v| v.to_string());
        write!(
            f,
            "d={} K={} L={} Z={} P={} M={}",
            show(self.d),
            show(self.k_orbits),
            show(self.l),
            show(self.z),
            show(self.p),
            show(self.m)
        )
    }
}

/// Recursive-descent reader for `[x, z] R(x, y) & S(y, z)`.
struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser { src, pos: 0 }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        let before = &self.src[..self.pos];
        let line = before.matches('\n').count() + 1;
        let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
        Error::parse(line, col, msg)
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            Err(self.err(format!("expected `{c}`")))
        }
    }

    fn ident(&mut self) -> Result<String> {
        self.skip_ws();
        let start = self.pos;
        for c in self.src[self.pos..].chars() {
            if c.is_alphanumeric() || matches!(c, '_' | '@' | '#' | '\'' | '.') {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        if start == self.pos {
            return Err(self.err("expected identifier"));
        }
        Ok(self.src[start..self.pos].to_string())
    }

    fn ident_list(&mut self, close: char) -> Result<Vec<String>> {
        let mut out = Vec::new();
        if self.peek() == Some(close) {
            self.pos += 1;
            return Ok(out);
        }
        loop {
            out.push(self.ident()?);
            match self.peek() {
                Some(',') => self.pos += 1,
                Some(c) if c == close => {
                    self.pos += 1;
                    return Ok(out);
                }
                _ => return Err(self.err(format!("expected `,` or `{close}`"))),
            }
        }
    }

    fn formula(&mut self) -> Result<PPFormula> {
        let mut free = None;
        if self.peek() == Some('[') {
            self.pos += 1;
            free = Some(self.ident_list(']')?);
        }
        let mut atoms = Vec::new();
        if self.peek().is_none() {
            // bare free-variable list
        } else {
            loop {
                let name = self.ident()?;
                if name == "true" && self.peek() != Some('(') {
                    // empty conjunction
                } else {
                    self.expect('(')?;
                    let args = self.ident_list(')')?;
                    atoms.push(Atom { relation: name, args });
                }
                match self.peek() {
                    Some('&') | Some(',') => self.pos += 1,
                    None => break,
                    Some(_) => return Err(self.err("expected `&` or end of formula")),
                }
            }
        }
        let mut f = PPFormula { atoms, free: Vec::new() };
        f.free = free.unwrap_or_else(|| f.vars());
        Ok(f)
    }
}

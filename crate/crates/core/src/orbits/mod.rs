//! Orbit templates: finitely bounded homogeneous structures described by the
//! atomic types of their tuples.
//!
//! A point of arity `m` is the index of an atomic type in the canonically
//! ordered list of realizable `m`-types. Types are enumerated lazily per arity
//! and cached, together with the restriction maps used by the engines.

mod builtin;
mod solve;

use std::borrow::Cow;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, RwLock};

use smallvec::SmallVec;

use crate::algebra::{Algebra, Conjunct};
use crate::error::{Error, Result};
use crate::relcore::{all_tuples, Elem, Signature, Structure, Tuple};

pub use builtin::{builtin, minimal_bounds, BUILTIN_NAMES};
pub use solve::{check_witness, closure_structure, solve_injective, solve_orbit, OrbitMode, OrbitVerdict, OrbitWitness};

/// Largest tuple arity for which types are enumerated.
pub const MAX_ARITY: usize = 8;

type Diagram = Vec<Vec<Tuple>>;

/// The atomic type of a tuple: which positions carry equal elements, and the
/// complete base diagram on the resulting blocks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AtomicType {
    pattern: SmallVec<[u8; 8]>,
    diagram: Diagram,
}

impl AtomicType {
    /// `pattern[i]` is the block of position `i`, numbered by first
    /// occurrence; `diagram[r]` lists the tuples of blocks in base relation `r`.
    pub fn new(pattern: Vec<u8>, diagram: Vec<Vec<Tuple>>) -> Result<Self> {
        let mut next = 0u8;
        for &b in &pattern {
            if b > next {
                return Err(Error::Invalid(format!("pattern {pattern:?} is not numbered by first occurrence")));
            }
            if b == next {
                next += 1;
            }
        }
        let mut diagram = diagram;
        for ext in &mut diagram {
            if ext.iter().flatten().any(|&b| b >= next as u32) {
                return Err(Error::Invalid("diagram refers to a missing block".into()));
            }
            ext.sort();
            ext.dedup();
        }
        Ok(AtomicType {
            pattern: pattern.into_iter().collect(),
            diagram,
        })
    }

    pub fn arity(&self) -> usize {
        self.pattern.len()
    }

    pub fn blocks(&self) -> usize {
        self.pattern.iter().map(|&b| b as usize + 1).max().unwrap_or(0)
    }

    pub fn pattern(&self) -> &[u8] {
        &self.pattern
    }

    pub fn diagram(&self) -> &[Vec<Tuple>] {
        &self.diagram
    }

    pub fn is_injective(&self) -> bool {
        self.blocks() == self.arity()
    }

    /// Whether base relation `rel` holds on the given blocks.
    pub fn holds(&self, rel: usize, blocks: &[Elem]) -> bool {
        self.diagram[rel].binary_search_by(|t| t.as_slice().cmp(blocks)).is_ok()
    }

    /// Whether base relation `rel` holds on the elements at `positions`.
    pub fn holds_at(&self, rel: usize, positions: &[usize]) -> bool {
        let blocks: Tuple = positions.iter().map(|&p| self.pattern[p] as Elem).collect();
        self.holds(rel, &blocks)
    }

    /// The type of the subtuple at `positions` (entries may repeat).
    pub fn restrict(&self, positions: &[usize]) -> AtomicType {
        let mut map: SmallVec<[Option<u8>; 8]> = SmallVec::from_elem(None, self.blocks());
        let mut next = 0u8;
        let mut pattern = SmallVec::new();
        for &p in positions {
            let old = self.pattern[p] as usize;
            let b = *map[old].get_or_insert_with(|| {
                next += 1;
                next - 1
            });
            pattern.push(b);
        }
        let diagram = self
            .diagram
            .iter()
            .map(|ext| {
                let mut v: Vec<Tuple> = ext
                    .iter()
                    .filter_map(|t| t.iter().map(|&b| map[b as usize].map(Elem::from)).collect::<Option<Tuple>>())
                    .collect();
                v.sort();
                v
            })
            .collect();
        AtomicType { pattern, diagram }
    }

    /// The type of tuple `t` in a finite structure.
    pub fn of_tuple(s: &Structure, t: &[Elem]) -> AtomicType {
        let mut distinct: SmallVec<[Elem; 8]> = SmallVec::new();
        let mut pattern = SmallVec::new();
        for &e in t {
            let b = match distinct.iter().position(|&d| d == e) {
                Some(b) => b,
                None => {
                    distinct.push(e);
                    distinct.len() - 1
                }
            };
            pattern.push(b as u8);
        }
        let b = distinct.len() as u32;
        let diagram = s
            .signature()
            .relations
            .iter()
            .enumerate()
            .map(|(r, sym)| {
                all_tuples(b, sym.arity)
                    .into_iter()
                    .filter(|bt| {
                        let img: Tuple = bt.iter().map(|&x| distinct[x as usize]).collect();
                        s.contains(r, &img)
                    })
                    .collect()
            })
            .collect();
        AtomicType { pattern, diagram }
    }

    /// The finite structure induced on the blocks.
    pub fn block_structure(&self, base: &Signature) -> Structure {
        Structure::new(base.clone(), self.blocks() as u32, self.diagram.clone()).expect("diagram fits its blocks")
    }

    /// Text form: the pattern, a bar, then the diagram, e.g.
    /// `0 1 2 | Lt(0,1) Lt(0,2) Lt(1,2)`.
    pub fn describe(&self, base: &Signature) -> String {
        let mut out: Vec<String> = self.pattern.iter().map(u8::to_string).collect();
        out.push("|".into());
        for (r, ext) in self.diagram.iter().enumerate() {
            for t in ext {
                let args: Vec<String> = t.iter().map(u32::to_string).collect();
                out.push(format!("{}({})", base.relations[r].name, args.join(",")));
            }
        }
        out.join(" ")
    }

    /// Parses the [`describe`](Self::describe) form.
    pub fn parse(text: &str, base: &Signature) -> Result<AtomicType> {
        let (pat, diag) = text
            .split_once('|')
            .ok_or_else(|| Error::parse(1, 1, "expected `|` between pattern and diagram"))?;
        let pattern = pat
            .split_whitespace()
            .map(|w| w.parse::<u8>().map_err(|_| Error::parse(1, 1, format!("bad block `{w}`"))))
            .collect::<Result<Vec<u8>>>()?;
        let mut diagram: Diagram = vec![Vec::new(); base.len()];
        let col0 = pat.len() + 2;
        let mut rest = diag;
        loop {
            let trimmed = rest.trim_start();
            if trimmed.is_empty() {
                break;
            }
            let col = col0 + (diag.len() - trimmed.len());
            let open = trimmed
                .find('(')
                .ok_or_else(|| Error::parse(1, col, "expected `(`"))?;
            let close = trimmed
                .find(')')
                .ok_or_else(|| Error::parse(1, col, "expected `)`"))?;
            if close < open {
                return Err(Error::parse(1, col, "unbalanced parentheses"));
            }
            let name = trimmed[..open].trim();
            let r = base
                .index_of(name)
                .ok_or_else(|| Error::UnknownRelation(name.to_string()))?;
            let args = trimmed[open + 1..close]
                .split(',')
                .map(|a| {
                    a.trim()
                        .parse::<Elem>()
                        .map_err(|_| Error::parse(1, col, format!("bad block `{}`", a.trim())))
                })
                .collect::<Result<Tuple>>()?;
            if args.len() != base.relations[r].arity {
                return Err(Error::ArityMismatch {
                    name: name.to_string(),
                    expected: base.relations[r].arity,
                    found: args.len(),
                });
            }
            diagram[r].push(args);
            rest = &trimmed[close + 1..];
        }
        AtomicType::new(pattern, diagram)
    }
}

/// Whether `bound` embeds into `host` with every element of `required` in
/// the image and the image inside `allowed`.
pub(crate) fn embeds(bound: &Structure, host: &Structure, required: &[Elem], allowed: &[Elem]) -> bool {
    let b = bound.domain_size() as usize;
    if b > allowed.len() || required.len() > b {
        return false;
    }
    let checks: Vec<(usize, Vec<Tuple>)> = bound
        .signature()
        .relations
        .iter()
        .enumerate()
        .map(|(r, sym)| (r, all_tuples(b as u32, sym.arity)))
        .collect();
    let mut map = Vec::with_capacity(b);
    embed_rec(bound, host, required, allowed, &checks, &mut map)
}

fn embed_rec(
    bound: &Structure,
    host: &Structure,
    required: &[Elem],
    allowed: &[Elem],
    checks: &[(usize, Vec<Tuple>)],
    map: &mut Vec<Elem>,
) -> bool {
    let b = bound.domain_size() as usize;
    if map.len() == b {
        if !required.iter().all(|e| map.contains(e)) {
            return false;
        }
        return checks.iter().all(|(r, ts)| {
            ts.iter().all(|t| {
                let img: Tuple = t.iter().map(|&x| map[x as usize]).collect();
                bound.contains(*r, t) == host.contains(*r, &img)
            })
        });
    }
    // the remaining slots must still be able to cover the required elements
    let missing = required.iter().filter(|e| !map.contains(e)).count();
    if missing > b - map.len() {
        return false;
    }
    for &e in allowed {
        if map.contains(&e) {
            continue;
        }
        map.push(e);
        let found = embed_rec(bound, host, required, allowed, checks, map);
        map.pop();
        if found {
            return true;
        }
    }
    false
}

/// Whether no bound embeds into `s`.
pub fn avoids_bounds(bounds: &[Structure], s: &Structure) -> bool {
    let all: Vec<Elem> = (0..s.domain_size()).collect();
    bounds.iter().all(|f| !embeds(f, s, &[], &all))
}

/// Realizable types of one arity, canonically ordered.
#[derive(Debug)]
pub struct TypeTable {
    types: Vec<AtomicType>,
    index: HashMap<AtomicType, u32>,
}

impl TypeTable {
    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn get(&self, id: u32) -> &AtomicType {
        &self.types[id as usize]
    }

    pub fn id(&self, t: &AtomicType) -> Option<u32> {
        self.index.get(t).copied()
    }

    pub fn types(&self) -> &[AtomicType] {
        &self.types
    }
}

type RestrictKey = (usize, SmallVec<[usize; 8]>);

#[derive(Default)]
struct Cache {
    diagrams: RwLock<HashMap<usize, Arc<Vec<Diagram>>>>,
    tables: RwLock<HashMap<usize, Arc<TypeTable>>>,
    restrictions: RwLock<HashMap<RestrictKey, Arc<Vec<u32>>>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct NamedRelation {
    name: String,
    arity: usize,
    types: Vec<u32>,
}

/// A k-homogeneous, l-bounded structure given by its base signature and its
/// bounds, with named relations as unions of atomic types.
#[derive(Clone)]
pub struct OrbitTemplate {
    name: String,
    base: Signature,
    bounds: Vec<Structure>,
    k: usize,
    l: usize,
    relations: Vec<NamedRelation>,
    cache: Arc<Cache>,
}

impl fmt::Debug for OrbitTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OrbitTemplate")
            .field("name", &self.name)
            .field("k", &self.k)
            .field("l", &self.l)
            .field("bounds", &self.bounds.len())
            .field("relations", &self.relations.iter().map(|r| &r.name).collect::<Vec<_>>())
            .finish()
    }
}

impl OrbitTemplate {
    /// Every base relation becomes a named relation; `extra` adds unions of
    /// types under new names.
    pub fn new(
        name: &str,
        base: Signature,
        bounds: Vec<Structure>,
        k: usize,
        l: usize,
        extra: Vec<(String, usize, Vec<AtomicType>)>,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Invalid("k must be at least 1".into()));
        }
        if let Some(r) = base.relations.iter().find(|r| r.arity > k) {
            return Err(Error::Invalid(format!(
                "base relation `{}` has arity {} above k = {k}",
                r.name, r.arity
            )));
        }
        for f in &bounds {
            if f.signature() != &base {
                return Err(Error::SignatureMismatch("bound over a different signature".into()));
            }
            if f.domain_size() == 0 || f.domain_size() as usize > l {
                return Err(Error::Invalid(format!(
                    "bound with {} elements, expected 1..={l}",
                    f.domain_size()
                )));
            }
        }
        let mut t = OrbitTemplate {
            name: name.to_string(),
            base: base.clone(),
            bounds,
            k,
            l,
            relations: Vec::new(),
            cache: Arc::new(Cache::default()),
        };
        for (r, sym) in base.relations.iter().enumerate() {
            let positions: Vec<usize> = (0..sym.arity).collect();
            let table = t.table(sym.arity);
            let types = (0..table.len() as u32)
                .filter(|&i| table.get(i).holds_at(r, &positions))
                .collect();
            t.relations.push(NamedRelation {
                name: sym.name.clone(),
                arity: sym.arity,
                types,
            });
        }
        for (rname, arity, types) in extra {
            if t.relations.iter().any(|r| r.name == rname) {
                return Err(Error::Duplicate(rname));
            }
            if arity == 0 || arity > MAX_ARITY {
                return Err(Error::Invalid(format!("relation `{rname}` has arity {arity}")));
            }
            let table = t.table(arity);
            let mut ids = Vec::new();
            for ty in &types {
                if ty.arity() != arity {
                    return Err(Error::ArityMismatch {
                        name: rname.clone(),
                        expected: arity,
                        found: ty.arity(),
                    });
                }
                let id = table.id(ty).ok_or_else(|| {
                    Error::Invalid(format!("type `{}` of `{rname}` is not realizable", ty.describe(&base)))
                })?;
                ids.push(id);
            }
            ids.sort_unstable();
            ids.dedup();
            t.relations.push(NamedRelation {
                name: rname,
                arity,
                types: ids,
            });
        }
        Ok(t)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn base(&self) -> &Signature {
        &self.base
    }

    pub fn bounds(&self) -> &[Structure] {
        &self.bounds
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// Names of relations that are not base relations.
    pub fn derived_relations(&self) -> Vec<&str> {
        self.relations[self.base.len()..].iter().map(|r| r.name.as_str()).collect()
    }

    /// The same template with additional named relations given by type ids.
    /// Type tables are shared with `self`.
    pub fn expand(&self, name: &str, extra: Vec<(String, usize, Vec<u32>)>) -> Result<OrbitTemplate> {
        let mut t = self.clone();
        t.name = name.to_string();
        for (rname, arity, mut ids) in extra {
            if t.relations.iter().any(|r| r.name == rname) {
                return Err(Error::Duplicate(rname));
            }
            if arity == 0 || arity > MAX_ARITY {
                return Err(Error::Invalid(format!("relation `{rname}` has arity {arity}")));
            }
            let n = t.type_count(arity) as u32;
            if let Some(bad) = ids.iter().find(|&&i| i >= n) {
                return Err(Error::Invalid(format!("type id {bad} out of range for arity {arity}")));
            }
            ids.sort_unstable();
            ids.dedup();
            t.relations.push(NamedRelation {
                name: rname,
                arity,
                types: ids,
            });
        }
        Ok(t)
    }

    /// Realizable finite structures on `b` labelled blocks, grown one element
    /// at a time so that bounds are checked as soon as their image is placed.
    fn diagrams(&self, b: usize) -> Arc<Vec<Diagram>> {
        if let Some(d) = self.cache.diagrams.read().unwrap().get(&b) {
            return d.clone();
        }
        let out = if b == 0 {
            vec![vec![Vec::new(); self.base.len()]]
        } else {
            let parents = self.diagrams(b - 1);
            let mut out = Vec::new();
            for p in parents.iter() {
                self.extend_diagram(p, b, &mut out);
            }
            out
        };
        let out = Arc::new(out);
        self.cache.diagrams.write().unwrap().insert(b, out.clone());
        out
    }

    fn extend_diagram(&self, parent: &Diagram, b: usize, out: &mut Vec<Diagram>) {
        let e = (b - 1) as Elem;
        // batch j + 1 holds the new tuples whose largest old element is j
        let mut batches: Vec<Vec<(usize, Tuple)>> = vec![Vec::new(); b];
        for (r, sym) in self.base.relations.iter().enumerate() {
            for t in all_tuples(b as u32, sym.arity) {
                if !t.contains(&e) {
                    continue;
                }
                let slot = t.iter().filter(|&&x| x != e).max().map_or(0, |&j| j as usize + 1);
                batches[slot].push((r, t));
            }
        }
        let mut current = parent.clone();
        self.extend_rec(&batches, 0, b, &mut current, out);
    }

    fn extend_rec(&self, batches: &[Vec<(usize, Tuple)>], slot: usize, b: usize, current: &mut Diagram, out: &mut Vec<Diagram>) {
        if slot == batches.len() {
            let mut d = current.clone();
            for ext in &mut d {
                ext.sort();
            }
            out.push(d);
            return;
        }
        let e = (b - 1) as Elem;
        let batch = &batches[slot];
        let mut allowed: Vec<Elem> = (0..slot as Elem).collect();
        allowed.push(e);
        let required: Vec<Elem> = if slot == 0 { vec![e] } else { vec![e, slot as Elem - 1] };
        for mask in 0u64..(1u64 << batch.len()) {
            let saved = current.clone();
            for (i, (r, t)) in batch.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    current[*r].push(t.clone());
                }
            }
            let host = Structure::new(self.base.clone(), b as u32, current.clone()).expect("tuples in range");
            if self.bounds.iter().all(|f| !embeds(f, &host, &required, &allowed)) {
                self.extend_rec(batches, slot + 1, b, current, out);
            }
            *current = saved;
        }
    }

    /// The realizable types of arity `m`.
    pub fn table(&self, m: usize) -> Arc<TypeTable> {
        assert!(m <= MAX_ARITY, "arity {m} above the supported maximum {MAX_ARITY}");
        if let Some(t) = self.cache.tables.read().unwrap().get(&m) {
            return t.clone();
        }
        let mut types = Vec::new();
        for pattern in patterns(m) {
            let b = pattern.iter().map(|&x| x as usize + 1).max().unwrap_or(0);
            for d in self.diagrams(b).iter() {
                types.push(AtomicType {
                    pattern: pattern.iter().copied().collect(),
                    diagram: d.clone(),
                });
            }
        }
        types.sort();
        let index = types.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let table = Arc::new(TypeTable { types, index });
        self.cache.tables.write().unwrap().insert(m, table.clone());
        table
    }

    /// All realizable types of arity `m`.
    pub fn enumerate_atomic_types(&self, m: usize) -> Vec<AtomicType> {
        self.table(m).types.clone()
    }

    pub fn type_count(&self, m: usize) -> usize {
        self.table(m).len()
    }

    pub fn atomic_type(&self, m: usize, id: u32) -> AtomicType {
        self.table(m).get(id).clone()
    }

    pub fn type_id(&self, t: &AtomicType) -> Option<u32> {
        if t.arity() > MAX_ARITY {
            return None;
        }
        self.table(t.arity()).id(t)
    }

    /// For every `m`-type, the id of its restriction to `positions`.
    pub fn restriction_map(&self, m: usize, positions: &[usize]) -> Arc<Vec<u32>> {
        let key: RestrictKey = (m, positions.iter().copied().collect());
        if let Some(v) = self.cache.restrictions.read().unwrap().get(&key) {
            return v.clone();
        }
        let from = self.table(m);
        let to = self.table(positions.len());
        let map: Vec<u32> = from
            .types
            .iter()
            .map(|t| to.id(&t.restrict(positions)).expect("restrictions of realizable types are realizable"))
            .collect();
        let map = Arc::new(map);
        self.cache.restrictions.write().unwrap().insert(key, map.clone());
        map
    }

    /// Types of arity `positions.len()` obtained by restricting members of `s`.
    pub fn orbit_project(&self, m: usize, s: &[u32], positions: &[usize]) -> Vec<u32> {
        let map = self.restriction_map(m, positions);
        let mut out: Vec<u32> = s.iter().map(|&i| map[i as usize]).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Types over the union of two variable lists (first-occurrence order)
    /// whose restrictions lie in `s1` on `vars1` and in `s2` on `vars2`.
    pub fn orbit_join(&self, vars1: &[usize], s1: &[u32], vars2: &[usize], s2: &[u32]) -> (Vec<usize>, Vec<u32>) {
        let mut vars: Vec<usize> = Vec::new();
        for &v in vars1.iter().chain(vars2) {
            if !vars.contains(&v) {
                vars.push(v);
            }
        }
        let pos = |vs: &[usize]| -> Vec<usize> { vs.iter().map(|v| vars.iter().position(|w| w == v).unwrap()).collect() };
        let m = vars.len();
        let map1 = self.restriction_map(m, &pos(vars1));
        let map2 = self.restriction_map(m, &pos(vars2));
        let in1: HashSet<u32> = s1.iter().copied().collect();
        let in2: HashSet<u32> = s2.iter().copied().collect();
        let out = (0..self.type_count(m) as u32)
            .filter(|&i| in1.contains(&map1[i as usize]) && in2.contains(&map2[i as usize]))
            .collect();
        (vars, out)
    }

    pub fn describe_type(&self, m: usize, id: u32) -> String {
        self.atomic_type(m, id).describe(&self.base)
    }

    pub fn parse_type(&self, text: &str) -> Result<u32> {
        let t = AtomicType::parse(text, &self.base)?;
        if t.arity() > MAX_ARITY {
            return Err(Error::Invalid(format!("arity {} above {MAX_ARITY}", t.arity())));
        }
        self.type_id(&t)
            .ok_or_else(|| Error::Invalid(format!("type `{text}` is not realizable")))
    }

    /// Number of orbits of `k`-tuples.
    pub fn k_orbit_count(&self) -> usize {
        self.type_count(self.k)
    }
}

/// Restricted growth strings of length `m`, lexicographically.
fn patterns(m: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    for _ in 0..m {
        let mut next = Vec::new();
        for p in out {
            let blocks = p.iter().map(|&x| x + 1).max().unwrap_or(0);
            for b in 0..=blocks {
                let mut q = p.clone();
                q.push(b);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

impl Algebra for OrbitTemplate {
    type Point = u32;

    fn full(&self, arity: usize) -> Vec<u32> {
        (0..self.type_count(arity) as u32).collect()
    }

    fn restrict(&self, arity: usize, p: &u32, positions: &[usize]) -> u32 {
        self.restriction_map(arity, positions)[*p as usize]
    }

    fn restrict_all(&self, arity: usize, rows: &[u32], positions: &[usize]) -> Vec<u32> {
        let map = self.restriction_map(arity, positions);
        rows.iter().map(|&p| map[p as usize]).collect()
    }

    fn same(&self, arity: usize, p: &u32, i: usize, j: usize) -> bool {
        let t = self.table(arity);
        let ty = t.get(*p);
        ty.pattern[i] == ty.pattern[j]
    }

    fn is_injective(&self, arity: usize, p: &u32) -> bool {
        self.table(arity).get(*p).is_injective()
    }

    fn relation(&self, name: &str) -> Option<(usize, Cow<'_, [u32]>)> {
        self.relations
            .iter()
            .find(|r| r.name == name)
            .map(|r| (r.arity, Cow::Borrowed(&r.types[..])))
    }

    fn relation_symbols(&self) -> Vec<(String, usize)> {
        self.relations.iter().map(|r| (r.name.clone(), r.arity)).collect()
    }

    fn solve_conjunction(&self, nvars: usize, conjuncts: &[Conjunct<'_, u32>], free: &[usize]) -> Vec<u32> {
        solve::solve_conjunction(self, nvars, conjuncts, free)
    }

    fn format_point(&self, arity: usize, p: &u32) -> String {
        format!("[{}]", self.describe_type(arity, *p))
    }
}

/// Whether a finite structure is a tuple-type of some realizable type, i.e.
/// avoids every bound.
pub fn realizable(t: &OrbitTemplate, s: &Structure) -> bool {
    avoids_bounds(&t.bounds, s)
}

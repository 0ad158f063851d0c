//! Text formats. Templates, instances, orbit templates, interpretations and
//! obstruction sets are TOML documents; unknown fields are rejected.
//!
//! A finite template:
//!
//! ```toml
//! name = "T_IMP"
//! domain_size = 2
//!
//! [[relation]]
//! name = "Leq"
//! arity = 2
//! tuples = [[0, 0], [0, 1], [1, 1]]
//! ```
//!
//! An instance names its variables and lists constraints, each either by
//! template relation or by explicit extent (`tuples` for finite templates,
//! atomic-type descriptors in `types` for orbit templates):
//!
//! ```toml
//! variables = ["x", "y"]
//!
//! [[constraint]]
//! relation = "Leq"
//! scope = ["x", "y"]
//!
//! [[constraint]]
//! scope = ["y"]
//! tuples = [[0]]
//! ```

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::algebra::Algebra;
use crate::duality::{Obstruction, ObstructionSet, Provenance as ObsProvenance};
use crate::error::{Error, Result};
use crate::hardness::{FoFormula, InterpretedRelation, Interpretation};
use crate::orbits::{AtomicType, OrbitTemplate};
use crate::relcore::{Constraint, Instance, Provenance, Signature, Structure, Tuple};

fn line_col(text: &str, span: Option<Range<usize>>) -> (usize, usize) {
    let at = span.map_or(0, |s| s.start).min(text.len());
    let before = &text[..at];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn from_toml<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let (line, col) = line_col(text, e.span());
        Error::parse(line, col, e.message().to_string())
    })
}

fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("plain data serializes")
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationDoc {
    name: String,
    arity: usize,
    #[serde(default)]
    tuples: Vec<Vec<u32>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    domain_size: u32,
    #[serde(default)]
    relation: Vec<RelationDoc>,
}

fn structure_from_docs(domain_size: u32, rels: Vec<RelationDoc>) -> Result<Structure> {
    let sig = Signature::new(rels.iter().map(|r| (r.name.clone(), r.arity)))?;
    let extents = rels
        .into_iter()
        .map(|r| {
            if let Some(t) = r.tuples.iter().find(|t| t.len() != r.arity) {
                return Err(Error::ArityMismatch {
                    name: r.name.clone(),
                    expected: r.arity,
                    found: t.len(),
                });
            }
            Ok(r.tuples.into_iter().map(Tuple::from_vec).collect())
        })
        .collect::<Result<Vec<Vec<Tuple>>>>()?;
    Structure::new(sig, domain_size, extents)
}

fn docs_from_structure(s: &Structure) -> Vec<RelationDoc> {
    s.signature()
        .relations
        .iter()
        .zip(s.extents())
        .map(|(sym, ext)| RelationDoc {
            name: sym.name.clone(),
            arity: sym.arity,
            tuples: ext.iter().map(|t| t.to_vec()).collect(),
        })
        .collect()
}

/// A finite template and its optional name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateFile {
    pub name: Option<String>,
    pub structure: Structure,
}

pub fn parse_template(text: &str) -> Result<TemplateFile> {
    let doc: TemplateDoc = from_toml(text)?;
    Ok(TemplateFile {
        name: doc.name,
        structure: structure_from_docs(doc.domain_size, doc.relation)?,
    })
}

pub fn write_template(name: Option<&str>, s: &Structure) -> String {
    to_toml(&TemplateDoc {
        name: name.map(str::to_string),
        domain_size: s.domain_size(),
        relation: docs_from_structure(s),
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintDoc {
    scope: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tuples: Option<Vec<Vec<u32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    types: Option<Vec<String>>,
    /// For explicit extents: `derived`, `full`, or the relation it came from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceDoc {
    variables: Vec<String>,
    #[serde(default)]
    constraint: Vec<ConstraintDoc>,
}

fn parse_provenance(text: Option<String>) -> Provenance {
    match text.as_deref() {
        None | Some("derived") => Provenance::Derived,
        Some("full") => Provenance::Full,
        Some(name) => Provenance::Relation(name.to_string()),
    }
}

fn provenance_text(p: &Provenance) -> Option<String> {
    match p {
        Provenance::Derived => None,
        other => Some(other.to_string()),
    }
}

/// Shared reading of instance documents; `explicit` turns a constraint's
/// explicit extent into points.
fn parse_instance_with<A: Algebra>(
    text: &str,
    alg: &A,
    explicit: impl Fn(&ConstraintDoc) -> Result<Option<Vec<A::Point>>>,
) -> Result<Instance<A::Point>> {
    let doc: InstanceDoc = from_toml(text)?;
    let mut inst = Instance::new(doc.variables.iter().cloned());
    for (i, v) in doc.variables.iter().enumerate() {
        if doc.variables[..i].contains(v) {
            return Err(Error::Duplicate(v.clone()));
        }
    }
    for c in doc.constraint {
        let scope: Vec<&str> = c.scope.iter().map(String::as_str).collect();
        match (&c.relation, explicit(&c)?) {
            (Some(r), None) => inst.constrain(alg, r, &scope)?,
            (None, Some(extent)) => {
                inst.constrain_extent(&scope, extent)?;
                inst.constraints.last_mut().expect("just added").provenance = parse_provenance(c.provenance);
            }
            (Some(_), Some(_)) => return Err(Error::Invalid("constraint has both a relation and an extent".into())),
            (None, None) => return Err(Error::Invalid("constraint needs a relation or an extent".into())),
        }
    }
    Ok(inst)
}

pub fn parse_instance(text: &str, template: &Structure) -> Result<Instance<Tuple>> {
    parse_instance_with(text, template, |c| {
        if c.types.is_some() {
            return Err(Error::Invalid("`types` extents need an orbit template".into()));
        }
        let Some(tuples) = &c.tuples else { return Ok(None) };
        let mut out = Vec::new();
        for t in tuples {
            if t.len() != c.scope.len() {
                return Err(Error::ArityMismatch {
                    name: "explicit extent".into(),
                    expected: c.scope.len(),
                    found: t.len(),
                });
            }
            if let Some(&e) = t.iter().find(|&&e| e >= template.domain_size()) {
                return Err(Error::ElementOutOfRange {
                    element: e,
                    domain_size: template.domain_size(),
                });
            }
            out.push(Tuple::from_slice(t));
        }
        Ok(Some(out))
    })
}

pub fn parse_orbit_instance(text: &str, template: &OrbitTemplate) -> Result<Instance<u32>> {
    parse_instance_with(text, template, |c| {
        if c.tuples.is_some() {
            return Err(Error::Invalid("`tuples` extents need a finite template".into()));
        }
        let Some(types) = &c.types else { return Ok(None) };
        let mut out = Vec::new();
        for t in types {
            let arity = t.split_once('|').map_or(0, |(p, _)| p.split_whitespace().count());
            if arity != c.scope.len() {
                return Err(Error::ArityMismatch {
                    name: format!("type `{t}`"),
                    expected: c.scope.len(),
                    found: arity,
                });
            }
            out.push(template.parse_type(t)?);
        }
        Ok(Some(out))
    })
}

fn write_instance_with<A: Algebra>(
    inst: &Instance<A::Point>,
    alg: &A,
    explicit: impl Fn(&Constraint<A::Point>, &mut ConstraintDoc),
) -> String {
    let constraint = inst
        .constraints
        .iter()
        .map(|c| {
            let scope = c.scope.iter().map(|&v| inst.variables[v].clone()).collect();
            let mut doc = ConstraintDoc {
                scope,
                relation: None,
                tuples: None,
                types: None,
                provenance: None,
            };
            let named = match &c.provenance {
                Provenance::Relation(r) => alg.relation(r).is_some_and(|(_, ext)| *ext == c.extent[..]),
                _ => false,
            };
            if named {
                doc.relation = provenance_text(&c.provenance);
            } else {
                doc.provenance = provenance_text(&c.provenance);
                explicit(c, &mut doc);
            }
            doc
        })
        .collect();
    to_toml(&InstanceDoc {
        variables: inst.variables.clone(),
        constraint,
    })
}

pub fn write_instance(inst: &Instance<Tuple>, template: &Structure) -> String {
    write_instance_with(inst, template, |c, doc| {
        doc.tuples = Some(c.extent.iter().map(|t| t.to_vec()).collect());
    })
}

pub fn write_orbit_instance(inst: &Instance<u32>, template: &OrbitTemplate) -> String {
    write_instance_with(inst, template, |c, doc| {
        doc.types = Some(c.extent.iter().map(|&id| template.describe_type(c.scope.len(), id)).collect());
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SymbolDoc {
    name: String,
    arity: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundDoc {
    domain_size: u32,
    facts: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OrbitRelationDoc {
    name: String,
    arity: usize,
    types: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OrbitTemplateDoc {
    name: String,
    k: usize,
    l: usize,
    base: Vec<SymbolDoc>,
    #[serde(default)]
    bound: Vec<BoundDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    relation: Vec<OrbitRelationDoc>,
}

/// Parses `R(0,1)`-style facts over `sig`.
pub fn parse_facts(sig: &Signature, domain_size: u32, facts: &[String]) -> Result<Structure> {
    let mut extents: Vec<Vec<Tuple>> = vec![Vec::new(); sig.len()];
    for f in facts {
        let f = f.trim();
        let (name, rest) = f
            .split_once('(')
            .ok_or_else(|| Error::Invalid(format!("fact `{f}` lacks `(`")))?;
        let args = rest
            .strip_suffix(')')
            .ok_or_else(|| Error::Invalid(format!("fact `{f}` lacks `)`")))?;
        let r = sig
            .index_of(name.trim())
            .ok_or_else(|| Error::UnknownRelation(name.trim().to_string()))?;
        let t = args
            .split(',')
            .map(|a| a.trim().parse().map_err(|_| Error::Invalid(format!("bad element `{a}` in `{f}`"))))
            .collect::<Result<Tuple>>()?;
        if t.len() != sig.relations[r].arity {
            return Err(Error::ArityMismatch {
                name: name.trim().to_string(),
                expected: sig.relations[r].arity,
                found: t.len(),
            });
        }
        extents[r].push(t);
    }
    Structure::new(sig.clone(), domain_size, extents)
}

fn fact_strings(s: &Structure) -> Vec<String> {
    s.facts()
        .map(|(r, t)| {
            let args: Vec<String> = t.iter().map(u32::to_string).collect();
            format!("{}({})", s.signature().relations[r].name, args.join(","))
        })
        .collect()
}

/// Orbit template files: the base signature, the bounds as fact lists, `k`,
/// `l`, and extra relations as unions of atomic types.
pub fn parse_orbit_template(text: &str) -> Result<OrbitTemplate> {
    let doc: OrbitTemplateDoc = from_toml(text)?;
    let base = Signature::new(doc.base.iter().map(|s| (s.name.clone(), s.arity)))?;
    let bounds = doc
        .bound
        .iter()
        .map(|b| parse_facts(&base, b.domain_size, &b.facts))
        .collect::<Result<Vec<_>>>()?;
    let extra = doc
        .relation
        .into_iter()
        .map(|r| {
            let types = r
                .types
                .iter()
                .map(|t| AtomicType::parse(t, &base))
                .collect::<Result<Vec<_>>>()?;
            Ok((r.name, r.arity, types))
        })
        .collect::<Result<Vec<_>>>()?;
    OrbitTemplate::new(&doc.name, base, bounds, doc.k, doc.l, extra)
}

pub fn write_orbit_template(t: &OrbitTemplate) -> String {
    let relation = t
        .derived_relations()
        .into_iter()
        .map(|name| {
            let (arity, ext) = t.relation(name).expect("listed relation");
            OrbitRelationDoc {
                name: name.to_string(),
                arity,
                types: ext.iter().map(|&id| t.describe_type(arity, id)).collect(),
            }
        })
        .collect();
    to_toml(&OrbitTemplateDoc {
        name: t.name().to_string(),
        k: t.k(),
        l: t.l(),
        base: t
            .base()
            .relations
            .iter()
            .map(|s| SymbolDoc {
                name: s.name.clone(),
                arity: s.arity,
            })
            .collect(),
        bound: t
            .bounds()
            .iter()
            .map(|b| BoundDoc {
                domain_size: b.domain_size(),
                facts: fact_strings(b),
            })
            .collect(),
        relation,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InterpretedDoc {
    name: String,
    arity: usize,
    formula: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InterpretationDoc {
    dimension: usize,
    parameters: usize,
    domain: String,
    relation: Vec<InterpretedDoc>,
}

/// Interpretation files: dimension, parameter count, the domain formula and
/// one formula per target relation, over `x{j}_{i}` and `p{i}`.
pub fn parse_interpretation(text: &str) -> Result<Interpretation> {
    let doc: InterpretationDoc = from_toml(text)?;
    let iota = Interpretation {
        dimension: doc.dimension,
        parameters: doc.parameters,
        domain: FoFormula::parse(&doc.domain)?,
        relations: doc
            .relation
            .into_iter()
            .map(|r| {
                Ok(InterpretedRelation {
                    name: r.name,
                    arity: r.arity,
                    formula: FoFormula::parse(&r.formula)?,
                })
            })
            .collect::<Result<Vec<_>>>()?,
    };
    iota.validate()?;
    Ok(iota)
}

pub fn write_interpretation(iota: &Interpretation) -> String {
    to_toml(&InterpretationDoc {
        dimension: iota.dimension,
        parameters: iota.parameters,
        domain: iota.domain.to_string(),
        relation: iota
            .relations
            .iter()
            .map(|r| InterpretedDoc {
                name: r.name.clone(),
                arity: r.arity,
                formula: r.formula.to_string(),
            })
            .collect(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObstructionDoc {
    provenance: String,
    domain_size: u32,
    #[serde(default)]
    relation: Vec<RelationDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObstructionSetDoc {
    #[serde(default)]
    obstruction: Vec<ObstructionDoc>,
}

/// Obstruction set files: one template-style entry per obstruction, with
/// its provenance.
pub fn parse_obstructions(text: &str) -> Result<ObstructionSet> {
    let doc: ObstructionSetDoc = from_toml(text)?;
    let obstructions = doc
        .obstruction
        .into_iter()
        .map(|o| {
            let provenance = match o.provenance.as_str() {
                "derivation-harvest" => ObsProvenance::DerivationHarvest,
                "critical-enumeration" => ObsProvenance::CriticalEnumeration,
                other => return Err(Error::Invalid(format!("unknown provenance `{other}`"))),
            };
            Ok(Obstruction {
                structure: structure_from_docs(o.domain_size, o.relation)?,
                provenance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ObstructionSet { obstructions })
}

pub fn write_obstructions(set: &ObstructionSet) -> String {
    to_toml(&ObstructionSetDoc {
        obstruction: set
            .obstructions
            .iter()
            .map(|o| ObstructionDoc {
                provenance: o.provenance.to_string(),
                domain_size: o.structure.domain_size(),
                relation: docs_from_structure(&o.structure),
            })
            .collect(),
    })
}

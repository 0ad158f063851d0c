//! First-order formulae with equality, conjunction, disjunction and
//! existential quantification, evaluated directly over a finite structure.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};
use crate::relcore::{Elem, Signature, Structure, Tuple};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FoFormula {
    True,
    Eq(String, String),
    Atom(String, Vec<String>),
    And(Vec<FoFormula>),
    Or(Vec<FoFormula>),
    Exists(Vec<String>, Box<FoFormula>),
}

impl FoFormula {
    pub fn atom<S: Into<String>>(rel: &str, args: impl IntoIterator<Item = S>) -> Self {
        FoFormula::Atom(rel.to_string(), args.into_iter().map(Into::into).collect())
    }

    pub fn eq(a: impl Into<String>, b: impl Into<String>) -> Self {
        FoFormula::Eq(a.into(), b.into())
    }

    /// Conjunction, flattening nested conjunctions and dropping `true`.
    pub fn and(parts: impl IntoIterator<Item = FoFormula>) -> Self {
        let mut out: Vec<FoFormula> = Vec::new();
        for p in parts {
            let items = match p {
                FoFormula::True => Vec::new(),
                FoFormula::And(inner) => inner,
                other => vec![other],
            };
            for item in items {
                if !out.contains(&item) {
                    out.push(item);
                }
            }
        }
        match out.len() {
            0 => FoFormula::True,
            1 => out.pop().unwrap(),
            _ => FoFormula::And(out),
        }
    }

    pub fn or(parts: impl IntoIterator<Item = FoFormula>) -> Self {
        let mut out = Vec::new();
        for p in parts {
            match p {
                FoFormula::Or(inner) => out.extend(inner),
                other => out.push(other),
            }
        }
        if out.len() == 1 {
            out.pop().unwrap()
        } else {
            FoFormula::Or(out)
        }
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
        let mut add = |x: &String, bound: &Vec<String>| {
            if !bound.contains(x) {
                out.insert(x.clone());
            }
        };
        match self {
            FoFormula::True => {}
            FoFormula::Eq(a, b) => {
                add(a, bound);
                add(b, bound);
            }
            FoFormula::Atom(_, args) => {
                for a in args {
                    add(a, bound);
                }
            }
            FoFormula::And(ps) | FoFormula::Or(ps) => {
                for p in ps {
                    p.collect_free(bound, out);
                }
            }
            FoFormula::Exists(vars, body) => {
                let n = bound.len();
                bound.extend(vars.iter().cloned());
                body.collect_free(bound, out);
                bound.truncate(n);
            }
        }
    }

    /// Relation names used, with the arity of their first occurrence.
    pub fn relations(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        self.walk(&mut |f| {
            if let FoFormula::Atom(r, args) = f {
                if !out.iter().any(|(n, _)| n == r) {
                    out.push((r.clone(), args.len()));
                }
            }
        });
        out
    }

    fn walk(&self, f: &mut impl FnMut(&FoFormula)) {
        f(self);
        match self {
            FoFormula::And(ps) | FoFormula::Or(ps) => ps.iter().for_each(|p| p.walk(f)),
            FoFormula::Exists(_, body) => body.walk(f),
            _ => {}
        }
    }

    /// Truth value in `s` under `env`, which must bind every free variable.
    pub fn eval(&self, s: &Structure, env: &mut HashMap<String, Elem>) -> Result<bool> {
        let get = |env: &HashMap<String, Elem>, x: &String| {
            env.get(x).copied().ok_or_else(|| Error::UndeclaredVariable(x.clone()))
        };
        Ok(match self {
            FoFormula::True => true,
            FoFormula::Eq(a, b) => get(env, a)? == get(env, b)?,
            FoFormula::Atom(r, args) => {
                let idx = s
                    .signature()
                    .index_of(r)
                    .ok_or_else(|| Error::UnknownRelation(r.clone()))?;
                let arity = s.signature().relations[idx].arity;
                if arity != args.len() {
                    return Err(Error::ArityMismatch {
                        name: r.clone(),
                        expected: arity,
                        found: args.len(),
                    });
                }
                let t = args.iter().map(|a| get(env, a)).collect::<Result<Vec<_>>>()?;
                s.contains(idx, &t)
            }
            FoFormula::And(ps) => {
                for p in ps {
                    if !p.eval(s, env)? {
                        return Ok(false);
                    }
                }
                true
            }
            FoFormula::Or(ps) => {
                for p in ps {
                    if p.eval(s, env)? {
                        return Ok(true);
                    }
                }
                false
            }
            FoFormula::Exists(vars, body) => {
                let saved: Vec<Option<Elem>> = vars.iter().map(|v| env.get(v).copied()).collect();
                let found = exists_rec(vars, body, s, env)?;
                for (v, old) in vars.iter().zip(saved) {
                    match old {
                        Some(e) => env.insert(v.clone(), e),
                        None => env.remove(v),
                    };
                }
                found
            }
        })
    }

    pub fn parse(text: &str) -> Result<FoFormula> {
        let mut p = Parser { src: text, pos: 0 };
        let f = p.disjunction()?;
        p.skip_ws();
        if p.pos != text.len() {
            return Err(p.err("trailing input"));
        }
        Ok(f)
    }
}

/// A formula with variables replaced by slots and relations by indices.
#[derive(Debug, Clone)]
pub(crate) enum Compiled {
    True,
    Eq(usize, usize),
    Atom(usize, Vec<usize>),
    And(Vec<Compiled>),
    Or(Vec<Compiled>),
    Exists(Vec<usize>, Box<Compiled>),
}

fn slot(vars: &mut Vec<String>, x: &str) -> usize {
    match vars.iter().position(|v| v == x) {
        Some(i) => i,
        None => {
            vars.push(x.to_string());
            vars.len() - 1
        }
    }
}

impl FoFormula {
    /// Resolves names against `sig`; variables get slots in `vars`.
    pub(crate) fn compile(&self, sig: &Signature, vars: &mut Vec<String>) -> Result<Compiled> {
        Ok(match self {
            FoFormula::True => Compiled::True,
            FoFormula::Eq(a, b) => Compiled::Eq(slot(vars, a), slot(vars, b)),
            FoFormula::Atom(r, args) => {
                let idx = sig.index_of(r).ok_or_else(|| Error::UnknownRelation(r.clone()))?;
                let arity = sig.relations[idx].arity;
                if arity != args.len() {
                    return Err(Error::ArityMismatch {
                        name: r.clone(),
                        expected: arity,
                        found: args.len(),
                    });
                }
                Compiled::Atom(idx, args.iter().map(|a| slot(vars, a)).collect())
            }
            FoFormula::And(ps) => Compiled::And(ps.iter().map(|p| p.compile(sig, vars)).collect::<Result<_>>()?),
            FoFormula::Or(ps) => Compiled::Or(ps.iter().map(|p| p.compile(sig, vars)).collect::<Result<_>>()?),
            FoFormula::Exists(xs, body) => {
                let slots = xs.iter().map(|x| slot(vars, x)).collect();
                Compiled::Exists(slots, Box::new(body.compile(sig, vars)?))
            }
        })
    }
}

impl Compiled {
    pub(crate) fn eval(&self, s: &Structure, env: &mut [Elem]) -> bool {
        match self {
            Compiled::True => true,
            Compiled::Eq(a, b) => env[*a] == env[*b],
            Compiled::Atom(r, args) => {
                let t: Tuple = args.iter().map(|&a| env[a]).collect();
                s.contains(*r, &t)
            }
            Compiled::And(ps) => ps.iter().all(|p| p.eval(s, env)),
            Compiled::Or(ps) => ps.iter().any(|p| p.eval(s, env)),
            Compiled::Exists(xs, body) => {
                let saved: Vec<Elem> = xs.iter().map(|&x| env[x]).collect();
                let found = compiled_exists(xs, body, s, env);
                for (&x, e) in xs.iter().zip(saved) {
                    env[x] = e;
                }
                found
            }
        }
    }
}

fn compiled_exists(xs: &[usize], body: &Compiled, s: &Structure, env: &mut [Elem]) -> bool {
    let Some((&x, rest)) = xs.split_first() else {
        return body.eval(s, env);
    };
    (0..s.domain_size()).any(|e| {
        env[x] = e;
        compiled_exists(rest, body, s, env)
    })
}

fn exists_rec(vars: &[String], body: &FoFormula, s: &Structure, env: &mut HashMap<String, Elem>) -> Result<bool> {
    let Some((v, rest)) = vars.split_first() else {
        return body.eval(s, env);
    };
    for e in 0..s.domain_size() {
        env.insert(v.clone(), e);
        if exists_rec(rest, body, s, env)? {
            return Ok(true);
        }
    }
    Ok(false)
}

impl fmt::Display for FoFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FoFormula::True => write!(f, "true"),
            FoFormula::Eq(a, b) => write!(f, "{a} = {b}"),
            FoFormula::Atom(r, args) => write!(f, "{r}({})", args.join(", ")),
            FoFormula::And(ps) => {
                for (i, p) in ps.iter().enumerate() {
                    if i > 0 {
                        write!(f, " & ")?;
                    }
                    match p {
                        FoFormula::Or(_) => write!(f, "({p})")?,
                        _ => write!(f, "{p}")?,
                    }
                }
                Ok(())
            }
            FoFormula::Or(ps) if ps.is_empty() => write!(f, "false"),
            FoFormula::Or(ps) => {
                for (i, p) in ps.iter().enumerate() {
                    if i > 0 {
                        write!(f, " | ")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
            FoFormula::Exists(vars, body) => write!(f, "exists {}: ({body})", vars.join(", ")),
        }
    }
}

impl std::str::FromStr for FoFormula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FoFormula::parse(s)
    }
}

/// `a | b`, `a & b`, `exists x, y: f`, `(f)`, `R(x, y)`, `x = y`, `true`, `false`.
struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        let before = &self.src[..self.pos];
        let line = before.matches('\n').count() + 1;
        let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
        Error::parse(line, col, msg)
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{c}`")))
        }
    }

    fn ident(&mut self) -> Result<String> {
        self.skip_ws();
        let start = self.pos;
        for c in self.src[self.pos..].chars() {
            if c.is_alphanumeric() || matches!(c, '_' | '\'' | '@' | '#') {
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

    fn disjunction(&mut self) -> Result<FoFormula> {
        let mut parts = vec![self.conjunction()?];
        while self.eat('|') {
            parts.push(self.conjunction()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { FoFormula::Or(parts) })
    }

    fn conjunction(&mut self) -> Result<FoFormula> {
        let mut parts = vec![self.unary()?];
        while self.eat('&') {
            parts.push(self.unary()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { FoFormula::And(parts) })
    }

    fn unary(&mut self) -> Result<FoFormula> {
        if self.eat('(') {
            let f = self.disjunction()?;
            self.expect(')')?;
            return Ok(f);
        }
        let name = self.ident()?;
        match name.as_str() {
            "true" => return Ok(FoFormula::True),
            "false" => return Ok(FoFormula::Or(Vec::new())),
            "exists" => {
                let mut vars = vec![self.ident()?];
                while self.eat(',') {
                    vars.push(self.ident()?);
                }
                self.expect(':')?;
                let body = self.unary()?;
                return Ok(FoFormula::Exists(vars, Box::new(body)));
            }
            _ => {}
        }
        if self.eat('(') {
            let mut args = Vec::new();
            if !self.eat(')') {
                loop {
                    args.push(self.ident()?);
                    if self.eat(')') {
                        break;
                    }
                    self.expect(',')?;
                }
            }
            return Ok(FoFormula::Atom(name, args));
        }
        if self.eat('=') {
            let rhs = self.ident()?;
            return Ok(FoFormula::Eq(name, rhs));
        }
        Err(self.err("expected `(` or `=` after identifier"))
    }
}

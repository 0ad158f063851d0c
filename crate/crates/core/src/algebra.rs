//! The constraint algebra shared by finite templates and orbit templates.
//!
//! A *point* of arity `m` is either a concrete `m`-tuple of domain elements
//! (finite templates) or an atomic type of `m`-tuples (orbit templates). The
//! propagation engines, the formula evaluator and the implication machinery
//! only talk to templates through this trait.

use std::borrow::Cow;
use std::fmt::Debug;
use std::hash::Hash;

/// One conjunct handed to [`Algebra::solve_conjunction`]: an extent placed on
/// a tuple of variable indices (indices may repeat).
#[derive(Debug, Clone, Copy)]
pub struct Conjunct<'a, P> {
    pub args: &'a [usize],
    pub extent: &'a [P],
}

pub trait Algebra: Sync {
    type Point: Clone + Eq + Ord + Hash + Debug + Send + Sync;

    /// Every point of the given arity, sorted.
    fn full(&self, arity: usize) -> Vec<Self::Point>;

    /// The point seen through `positions` (entries may repeat).
    fn restrict(&self, arity: usize, p: &Self::Point, positions: &[usize]) -> Self::Point;

    /// Whether coordinates `i` and `j` of the point carry the same element.
    /// [`restrict`](Self::restrict) applied to every row, order preserved.
    fn restrict_all(&self, arity: usize, rows: &[Self::Point], positions: &[usize]) -> Vec<Self::Point> {
        rows.iter().map(|p| self.restrict(arity, p, positions)).collect()
    }

    fn same(&self, arity: usize, p: &Self::Point, i: usize, j: usize) -> bool;

    fn is_injective(&self, arity: usize, p: &Self::Point) -> bool {
        (0..arity).all(|i| (i + 1..arity).all(|j| !self.same(arity, p, i, j)))
    }

    /// Arity and extent of a named relation.
    fn relation(&self, name: &str) -> Option<(usize, Cow<'_, [Self::Point]>)>;

    /// Names and arities of every relation available to instances.
    fn relation_symbols(&self) -> Vec<(String, usize)>;

    /// All points over `free` that extend to an assignment of variables
    /// `0..nvars` satisfying every conjunct. Sorted, without duplicates.
    fn solve_conjunction(
        &self,
        nvars: usize,
        conjuncts: &[Conjunct<'_, Self::Point>],
        free: &[usize],
    ) -> Vec<Self::Point>;

    fn format_point(&self, arity: usize, p: &Self::Point) -> String;
}

/// Sorts and deduplicates a point list in place.
pub fn canonicalize<P: Ord>(v: &mut Vec<P>) {
    v.sort();
    v.dedup();
}

/// `proj_positions` of a relation of the given arity, canonical order.
pub fn project_points<A: Algebra>(
    alg: &A,
    arity: usize,
    rel: &[A::Point],
    positions: &[usize],
) -> Vec<A::Point> {
    let mut out = alg.restrict_all(arity, rel, positions);
    canonicalize(&mut out);
    out
}

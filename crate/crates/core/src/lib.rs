pub mod algebra;
pub mod duality;
pub mod error;
pub mod hardness;
pub mod implications;
pub mod io;
pub mod minimality;
pub mod orbits;
mod parallel;
pub mod ppformulas;
pub mod relcore;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/structures.md")]
    mod structures {}
    #[doc = include_str!("../../../book/src/formulas.md")]
    mod formulas {}
    #[doc = include_str!("../../../book/src/minimality.md")]
    mod minimality {}
    #[doc = include_str!("../../../book/src/orbits.md")]
    mod orbits {}
    #[doc = include_str!("../../../book/src/implications.md")]
    mod implications {}
    #[doc = include_str!("../../../book/src/hardness.md")]
    mod hardness {}
    #[doc = include_str!("../../../book/src/duality.md")]
    mod duality {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

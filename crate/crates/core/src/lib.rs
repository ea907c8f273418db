//! Desk-scale laboratory for expansion and growth in `SL2(Z/qZ) x SL2(Z/qZ)`.
//!
//! The crate is organised bottom-up:
//!
//! * [`factored`] – integers carried with their factorisation (exact divisors,
//!   fractional-power moduli, exponent splits).
//! * [`sl2`] – exact matrix algebra in `SL2(Z/qZ)`, the pair group, integral and
//!   rational lifts, congruence subgroups and the Lie algebra `V = sl2`.
//! * [`measure`] – finitely supported measures with convolution and pushforward.
//! * [`spectral`] – the matrix-free Cayley operator, its second eigenvalue and
//!   Cheeger constants.
//! * [`walks`] – finite-quotient decay profiles and integral random-walk sampling.
//! * [`growth`] – product sets, tripling, bounded generation and congruence
//!   coverage searches.
//! * [`addcomb`] – bitset sumset oracles for the covering lemmas.
//! * [`approxhom`] – approximate-homomorphism dichotomy and small-doubling
//!   subgroup recovery over finite group tables.
//! * [`commutator`] – commutator congruences, bracket spans, congruence
//!   amplification and the modulus gluing pipeline.
//! * [`cli`] – the experiment runner behind the `sl2lab` binary.

pub mod addcomb;
pub mod approxhom;
pub mod cli;
pub mod commutator;
pub mod error;
pub mod factored;
pub mod gens;
pub mod growth;
pub mod measure;
pub mod rng;
pub mod sl2;
pub mod spectral;
pub mod walks;

pub use error::{Error, Result};
pub use factored::FactoredModulus;
pub use sl2::{IntMatrix2, IntPair, LieVector, PairElement, SL2Residue};

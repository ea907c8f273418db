//! Finitely supported probability measures on a group.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::sl2::{GroupElement, IntPair, PairElement, SL2Residue};

/// Default cap on the support size of a convolution result.
pub const DEFAULT_SUPPORT_CAP: usize = 5_000_000;

// number of left-support entries handled per parallel task; fixed so that
// the merge order does not depend on the thread count
const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Exact,
    Float,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Weight {
    Exact(BigRational),
    Float(f64),
}

impl Weight {
    fn zero(mode: Mode) -> Weight {
        match mode {
            Mode::Exact => Weight::Exact(BigRational::zero()),
            Mode::Float => Weight::Float(0.0),
        }
    }

    fn frac(num: usize, den: usize, mode: Mode) -> Weight {
        match mode {
            Mode::Exact => Weight::Exact(BigRational::new(BigInt::from(num), BigInt::from(den))),
            Mode::Float => Weight::Float(num as f64 / den as f64),
        }
    }

    fn mul(&self, o: &Weight) -> Weight {
        match (self, o) {
            (Weight::Exact(a), Weight::Exact(b)) => Weight::Exact(a * b),
            (Weight::Float(a), Weight::Float(b)) => Weight::Float(a * b),
            _ => unreachable!("weight modes never mix"),
        }
    }

    fn add_assign(&mut self, o: &Weight) {
        match (self, o) {
            (Weight::Exact(a), Weight::Exact(b)) => *a += b,
            (Weight::Float(a), Weight::Float(b)) => *a += b,
            _ => unreachable!("weight modes never mix"),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Weight::Exact(a) => a.is_zero(),
            Weight::Float(a) => *a == 0.0,
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Weight::Exact(a) => a.to_f64().unwrap_or(f64::NAN),
            Weight::Float(a) => *a,
        }
    }

    pub fn as_exact(&self) -> Option<&BigRational> {
        match self {
            Weight::Exact(a) => Some(a),
            Weight::Float(_) => None,
        }
    }
}

impl fmt::Display for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Weight::Exact(a) => write!(f, "{a}"),
            Weight::Float(a) => write!(f, "{a:e}"),
        }
    }
}

/// A probability measure with finite support.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMeasure<G: GroupElement> {
    mode: Mode,
    weights: BTreeMap<G, Weight>,
}

impl<G: GroupElement> SparseMeasure<G> {
    /// Normalised counting measure on `s`; repeated elements accumulate weight.
    pub fn uniform_on(s: &[G], mode: Mode) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::Empty("uniform measure support"));
        }
        let amb = s[0].ambient();
        let mut counts: BTreeMap<G, usize> = BTreeMap::new();
        for g in s {
            if g.ambient() != amb {
                return Err(Error::ModulusMismatch(format!("{amb:?}"), format!("{:?}", g.ambient())));
            }
            *counts.entry(g.clone()).or_insert(0) += 1;
        }
        let n = s.len();
        Ok(SparseMeasure {
            mode,
            weights: counts
                .into_iter()
                .map(|(g, c)| (g, Weight::frac(c, n, mode)))
                .collect(),
        })
    }

    pub fn delta(g: G, mode: Mode) -> Self {
        SparseMeasure {
            mode,
            weights: [(g, Weight::frac(1, 1, mode))].into_iter().collect(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn support_len(&self) -> usize {
        self.weights.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&G, &Weight)> {
        self.weights.iter()
    }

    pub fn get(&self, g: &G) -> Weight {
        self.weights.get(g).cloned().unwrap_or(Weight::zero(self.mode))
    }

    fn ambient(&self) -> Option<(u64, u64)> {
        self.weights.keys().next().map(|g| g.ambient())
    }

    pub fn total_mass(&self) -> Weight {
        self.mass_on(|_| true)
    }

    /// Sum of weights over elements satisfying `pred`.
    pub fn mass_on(&self, pred: impl Fn(&G) -> bool) -> Weight {
        let mut acc = Weight::zero(self.mode);
        for (g, w) in &self.weights {
            if pred(g) {
                acc.add_assign(w);
            }
        }
        acc
    }

    /// `(f * g)(x) = sum_y f(y) g(x y^-1)`.
    pub fn convolve(&self, other: &Self) -> Result<Self> {
        self.convolve_capped(other, DEFAULT_SUPPORT_CAP)
    }

    pub fn convolve_capped(&self, other: &Self, cap: usize) -> Result<Self> {
        if self.mode != other.mode {
            return Err(Error::invalid("cannot convolve exact and floating measures"));
        }
        if self.ambient() != other.ambient() {
            return Err(Error::ModulusMismatch(
                format!("{:?}", self.ambient()),
                format!("{:?}", other.ambient()),
            ));
        }
        let left: Vec<(&G, &Weight)> = self.weights.iter().collect();
        let partials: Vec<BTreeMap<G, Weight>> = left
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc: BTreeMap<G, Weight> = BTreeMap::new();
                for &(y, fy) in chunk {
                    for (z, gz) in &other.weights {
                        let w = fy.mul(gz);
                        acc.entry(z.op(y))
                            .and_modify(|v| v.add_assign(&w))
                            .or_insert(w);
                    }
                }
                acc
            })
            .collect();
        let mut out: BTreeMap<G, Weight> = BTreeMap::new();
        for part in partials {
            for (k, w) in part {
                match out.get_mut(&k) {
                    Some(v) => v.add_assign(&w),
                    None => {
                        out.insert(k, w);
                    }
                }
            }
            if out.len() > cap {
                return Err(Error::CapExceeded {
                    what: "convolution support",
                    needed: out.len() as u128,
                    cap: cap as u128,
                });
            }
        }
        out.retain(|_, w| !w.is_zero());
        Ok(SparseMeasure {
            mode: self.mode,
            weights: out,
        })
    }

    /// `l`-fold convolution power by repeated squaring.
    pub fn convolve_power(&self, l: u32, cap: usize) -> Result<Self> {
        if l == 0 {
            return Err(Error::precondition("convolution power needs l >= 1"));
        }
        let mut base = self.clone();
        let mut acc: Option<Self> = None;
        let mut k = l;
        loop {
            if k & 1 == 1 {
                acc = Some(match acc {
                    None => base.clone(),
                    Some(a) => a.convolve_capped(&base, cap)?,
                });
            }
            k >>= 1;
            if k == 0 {
                break;
            }
            base = base.convolve_capped(&base, cap)?;
        }
        Ok(acc.expect("l >= 1"))
    }

    /// Image measure under a homomorphism (or any map).
    pub fn pushforward_by<H: GroupElement>(&self, map: impl Fn(&G) -> Result<H>) -> Result<SparseMeasure<H>> {
        let mut out: BTreeMap<H, Weight> = BTreeMap::new();
        for (g, w) in &self.weights {
            let h = map(g)?;
            out.entry(h)
                .and_modify(|v| v.add_assign(w))
                .or_insert_with(|| w.clone());
        }
        Ok(SparseMeasure {
            mode: self.mode,
            weights: out,
        })
    }

    /// `mu(x) = mu(x^-1)` for every `x`.
    pub fn is_symmetric(&self) -> bool {
        self.weights
            .iter()
            .all(|(g, w)| self.weights.get(&g.inv()) == Some(w))
    }

    /// `||f - u||_2^2` against the uniform measure on a group of order `n`
    /// (the support is assumed to lie inside that group).
    pub fn l2_dist_sq_to_uniform(&self, n: u128) -> f64 {
        let s: f64 = self.weights.values().map(|w| w.to_f64().powi(2)).sum();
        s - 1.0 / n as f64
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        for (g, w) in &self.weights {
            m.insert(g.key(), Value::String(w.to_string()));
        }
        Value::Object(m)
    }
}

impl SparseMeasure<PairElement> {
    pub fn pushforward(&self, q1: u64, q2: u64) -> Result<SparseMeasure<PairElement>> {
        self.pushforward_by(|g| g.reduce(q1, q2))
    }
}

impl SparseMeasure<SL2Residue> {
    pub fn pushforward(&self, q: u64) -> Result<SparseMeasure<SL2Residue>> {
        self.pushforward_by(|g| g.reduce(q))
    }
}

impl SparseMeasure<IntPair> {
    pub fn pushforward(&self, q1: u64, q2: u64) -> Result<SparseMeasure<PairElement>> {
        self.pushforward_by(|g| g.reduce(q1, q2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factored::FactoredModulus;
    use crate::sl2::{enumerate_group, DEFAULT_ENUM_CAP};
    use proptest::prelude::*;

    fn r(n: i64, d: i64) -> Weight {
        Weight::Exact(BigRational::new(BigInt::from(n), BigInt::from(d)))
    }

    fn s3() -> Vec<SL2Residue> {
        vec![
            SL2Residue::new(3, 1, 1, 0, 1).unwrap(),
            SL2Residue::new(3, 1, -1, 0, 1).unwrap(),
            SL2Residue::new(3, 1, 0, 1, 1).unwrap(),
            SL2Residue::new(3, 1, 0, -1, 1).unwrap(),
        ]
    }

    #[test]
    fn uniform_examples() {
        let id = SL2Residue::identity(5);
        let m = SparseMeasure::uniform_on(&[id], Mode::Exact).unwrap();
        assert_eq!(m, SparseMeasure::delta(id, Mode::Exact));
        let g = SL2Residue::new(5, 1, 1, 0, 1).unwrap();
        assert_eq!(
            SparseMeasure::uniform_on(&[g, g], Mode::Exact).unwrap(),
            SparseMeasure::delta(g, Mode::Exact)
        );
        let m = SparseMeasure::uniform_on(&s3(), Mode::Exact).unwrap();
        assert!(m.iter().all(|(_, w)| *w == r(1, 4)));
        assert!(SparseMeasure::<SL2Residue>::uniform_on(&[], Mode::Exact).is_err());
    }

    #[test]
    fn delta_convolution_order() {
        let a = SL2Residue::new(7, 1, 1, 0, 1).unwrap();
        let b = SL2Residue::new(7, 1, 0, 1, 1).unwrap();
        let da = SparseMeasure::delta(a, Mode::Exact);
        let db = SparseMeasure::delta(b, Mode::Exact);
        let c = da.convolve(&db).unwrap();
        assert_eq!(c, SparseMeasure::delta(b.mul(&a).unwrap(), Mode::Exact));
        assert_ne!(a.mul(&b).unwrap(), b.mul(&a).unwrap());
    }

    #[test]
    fn self_convolution_identity_mass() {
        // oracle: count ordered pairs (s, t) with s t = 1
        let s = s3();
        let hits = s
            .iter()
            .flat_map(|x| s.iter().map(move |y| x.mul(y).unwrap()))
            .filter(|z| z.is_identity())
            .count();
        let chi = SparseMeasure::uniform_on(&s, Mode::Exact).unwrap();
        let m = chi.convolve(&chi).unwrap();
        assert_eq!(m.get(&SL2Residue::identity(3)), r(hits as i64, 16));
        assert_eq!(m.get(&SL2Residue::identity(3)), r(1, 4));
        assert!(m.is_symmetric());
    }

    #[test]
    fn haar_invariance() {
        let g = enumerate_group(&FactoredModulus::new(3).unwrap(), DEFAULT_ENUM_CAP).unwrap();
        let u = SparseMeasure::uniform_on(&g, Mode::Exact).unwrap();
        let f = SparseMeasure::uniform_on(&s3(), Mode::Exact).unwrap();
        assert_eq!(u.convolve(&f).unwrap(), u);
        assert_eq!(f.convolve(&u).unwrap(), u);
    }

    #[test]
    fn c_zero_mass_on_sl2_f5() {
        let g = enumerate_group(&FactoredModulus::new(5).unwrap(), DEFAULT_ENUM_CAP).unwrap();
        let oracle = g.iter().filter(|x| x.entries()[2] == 0).count();
        assert_eq!(oracle, 20);
        let u = SparseMeasure::uniform_on(&g, Mode::Exact).unwrap();
        assert_eq!(u.mass_on(|x| x.entries()[2] == 0), r(1, 6));
        assert_eq!(u.mass_on(|_| true), r(1, 1));
        assert_eq!(u.mass_on(|_| false), r(0, 1));
    }

    #[test]
    fn powers() {
        let f = SparseMeasure::uniform_on(&s3(), Mode::Exact).unwrap();
        assert_eq!(f.convolve_power(1, 1000).unwrap(), f);
        let d = SparseMeasure::delta(SL2Residue::identity(3), Mode::Exact);
        assert_eq!(d.convolve_power(9, 1000).unwrap(), d);
        let f5 = f.convolve_power(5, 1000).unwrap();
        let f2 = f.convolve_power(2, 1000).unwrap();
        let f3 = f.convolve_power(3, 1000).unwrap();
        assert_eq!(f5, f2.convolve(&f3).unwrap());
        assert!(f2.is_symmetric());
        assert!(f.convolve_power(0, 10).is_err());
    }

    #[test]
    fn pushforward_examples() {
        let g = SL2Residue::new(15, 2, 1, 1, 1).unwrap();
        let d = SparseMeasure::delta(g, Mode::Exact);
        assert_eq!(d.pushforward(5).unwrap(), SparseMeasure::delta(g.reduce(5).unwrap(), Mode::Exact));
        assert_eq!(d.pushforward(1).unwrap(), SparseMeasure::delta(SL2Residue::identity(1), Mode::Exact));
        assert!(d.pushforward(4).is_err());
    }

    #[test]
    fn l2_distance_nonincreasing() {
        let g = enumerate_group(&FactoredModulus::new(5).unwrap(), DEFAULT_ENUM_CAP).unwrap();
        let s: Vec<_> = [(1, 2, 0, 1), (1, -2, 0, 1), (1, 0, 2, 1), (1, 0, -2, 1)]
            .iter()
            .map(|&(a, b, c, d)| SL2Residue::new(5, a, b, c, d).unwrap())
            .collect();
        let f = SparseMeasure::uniform_on(&s, Mode::Float).unwrap();
        let mut cur = f.clone();
        let mut prev = f64::INFINITY;
        for _ in 0..20 {
            let d = cur.l2_dist_sq_to_uniform(g.len() as u128);
            assert!(d <= prev + 1e-12);
            prev = d;
            cur = cur.convolve(&f).unwrap();
        }
    }

    fn arb_measure(q: u64) -> impl Strategy<Value = SparseMeasure<SL2Residue>> {
        let g = enumerate_group(&FactoredModulus::new(q).unwrap(), DEFAULT_ENUM_CAP).unwrap();
        proptest::collection::vec(0..g.len(), 1..5).prop_map(move |idx| {
            let s: Vec<_> = idx.iter().map(|&i| g[i]).collect();
            SparseMeasure::uniform_on(&s, Mode::Exact).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn pushforward_commutes(f in arb_measure(12), g in arb_measure(12)) {
            for t in [1u64, 2, 3, 4, 6] {
                let lhs = f.convolve(&g).unwrap().pushforward(t).unwrap();
                let rhs = f.pushforward(t).unwrap().convolve(&g.pushforward(t).unwrap()).unwrap();
                prop_assert_eq!(lhs, rhs);
            }
        }

        #[test]
        fn associativity_and_mass(f in arb_measure(6), g in arb_measure(6), h in arb_measure(6)) {
            let l = f.convolve(&g).unwrap().convolve(&h).unwrap();
            let r = f.convolve(&g.convolve(&h).unwrap()).unwrap();
            prop_assert_eq!(&l, &r);
            prop_assert_eq!(l.total_mass(), Weight::Exact(BigRational::from_integer(1.into())));
        }
    }
}

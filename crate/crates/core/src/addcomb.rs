//! Sums and products of residue sets, and the covering searches built on
//! iterated sums of `AB - AB`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::factored::FactoredModulus;

/// Largest modulus for the dense bitset representation.
pub const BITSET_MAX: u64 = 1 << 16;

/// Subset of `Z/qZ`, or of `Z/q1 x Z/q2` flattened as `i q2 + j`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ResidueSet {
    q1: u64,
    q2: u64,
    words: Vec<u64>,
}

fn words_for(n: u64) -> usize {
    n.div_ceil(64) as usize
}

impl ResidueSet {
    pub fn empty(q: u64) -> Result<Self> {
        Self::empty_pair(q, 1)
    }

    /// Empty subset of `Z/q1 x Z/q2`.
    pub fn empty_pair(q1: u64, q2: u64) -> Result<Self> {
        if q1 == 0 || q2 == 0 {
            return Err(Error::invalid("modulus must be positive"));
        }
        let n = q1.checked_mul(q2).filter(|&n| n <= BITSET_MAX).ok_or_else(|| Error::CapExceeded {
            what: "residue bitset",
            needed: q1 as u128 * q2 as u128,
            cap: BITSET_MAX as u128,
        })?;
        Ok(ResidueSet {
            q1,
            q2,
            words: vec![0; words_for(n)],
        })
    }

    pub fn full(q: u64) -> Result<Self> {
        Self::full_pair(q, 1)
    }

    pub fn full_pair(q1: u64, q2: u64) -> Result<Self> {
        let mut s = Self::empty_pair(q1, q2)?;
        for x in 0..s.size() {
            s.set(x);
        }
        Ok(s)
    }

    pub fn from_elems(q: u64, xs: impl IntoIterator<Item = u64>) -> Result<Self> {
        let mut s = Self::empty(q)?;
        for x in xs {
            s.insert(x % q);
        }
        Ok(s)
    }

    pub fn from_pairs(q1: u64, q2: u64, xs: impl IntoIterator<Item = (u64, u64)>) -> Result<Self> {
        let mut s = Self::empty_pair(q1, q2)?;
        for (a, b) in xs {
            s.set((a % q1) * q2 + b % q2);
        }
        Ok(s)
    }

    /// Multiples of `d`, the subgroup `d Z/qZ`.
    pub fn multiples(q: u64, d: u64) -> Result<Self> {
        Self::from_elems(q, (0..q).step_by(d.max(1) as usize))
    }

    /// The box `d1 Z/q1 x d2 Z/q2`.
    pub fn box_multiples(q1: u64, q2: u64, d1: u64, d2: u64) -> Result<Self> {
        let mut s = Self::empty_pair(q1, q2)?;
        for a in (0..q1).step_by(d1.max(1) as usize) {
            for b in (0..q2).step_by(d2.max(1) as usize) {
                s.set(a * q2 + b);
            }
        }
        Ok(s)
    }

    pub fn moduli(&self) -> (u64, u64) {
        (self.q1, self.q2)
    }

    /// Number of points of the ambient group.
    pub fn size(&self) -> u64 {
        self.q1 * self.q2
    }

    fn set(&mut self, x: u64) {
        self.words[(x / 64) as usize] |= 1 << (x % 64);
    }

    fn get(&self, x: u64) -> bool {
        self.words[(x / 64) as usize] >> (x % 64) & 1 == 1
    }

    pub fn insert(&mut self, x: u64) {
        assert!(x < self.size(), "residue out of range");
        self.set(x)
    }

    pub fn contains(&self, x: u64) -> bool {
        x < self.size() && self.get(x)
    }

    pub fn contains_pair(&self, a: u64, b: u64) -> bool {
        a < self.q1 && b < self.q2 && self.get(a * self.q2 + b)
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Members in increasing order (flattened index for pairs).
    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        self.words.iter().enumerate().flat_map(|(i, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as u64;
                w &= w - 1;
                Some(i as u64 * 64 + b)
            })
        })
    }

    pub fn pairs(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let q2 = self.q2;
        self.iter().map(move |x| (x / q2, x % q2))
    }

    pub fn is_subset_of(&self, other: &ResidueSet) -> bool {
        self.moduli() == other.moduli() && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn union(&self, other: &ResidueSet) -> Result<ResidueSet> {
        self.check(other)?;
        let mut s = self.clone();
        s.or_assign(other);
        Ok(s)
    }

    fn or_assign(&mut self, other: &ResidueSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    fn check(&self, other: &ResidueSet) -> Result<()> {
        if self.moduli() != other.moduli() {
            return Err(Error::ModulusMismatch(
                format!("{:?}", self.moduli()),
                format!("{:?}", other.moduli()),
            ));
        }
        Ok(())
    }

    pub fn negate(&self) -> ResidueSet {
        let mut s = ResidueSet {
            words: vec![0; self.words.len()],
            ..*self
        };
        for (a, b) in self.pairs() {
            s.set(((self.q1 - a) % self.q1) * self.q2 + (self.q2 - b) % self.q2);
        }
        s
    }

    // the set shifted by (a, b), wrapping in each coordinate
    fn shifted_into(&self, a: u64, b: u64, out: &mut [u64]) {
        if self.q2 == 1 {
            rotate_or(&self.words, self.q1, a, out);
            return;
        }
        for (x, y) in self.pairs() {
            let z = ((x + a) % self.q1) * self.q2 + (y + b) % self.q2;
            out[(z / 64) as usize] |= 1 << (z % 64);
        }
    }
}

// out |= src rotated by `shift` inside Z/n, word at a time
fn rotate_or(src: &[u64], n: u64, shift: u64, out: &mut [u64]) {
    let shift = shift % n;
    // bits [0, n - shift) move up by shift, bits [n - shift, n) wrap to [0, shift)
    shift_or(src, 0, n - shift, shift, out);
    shift_or(src, n - shift, n, 0, out);
}

// out[dst + i] |= src[lo + i] for i in 0..hi-lo
fn shift_or(src: &[u64], lo: u64, hi: u64, dst: u64, out: &mut [u64]) {
    let mut i = lo;
    while i < hi {
        let (w, b) = ((i / 64) as usize, i % 64);
        let take = (64 - b).min(hi - i);
        let mask = if take == 64 { u64::MAX } else { (1u64 << take) - 1 };
        let chunk = (src[w] >> b) & mask;
        if chunk != 0 {
            let d = dst + (i - lo);
            let (dw, db) = ((d / 64) as usize, d % 64);
            out[dw] |= chunk << db;
            if db + take > 64 {
                out[dw + 1] |= chunk >> (64 - db);
            }
        }
        i += take;
    }
}

/// `A + B` by OR-ing shifted copies of `B`, split over the members of `A`.
pub fn sumset(a: &ResidueSet, b: &ResidueSet) -> Result<ResidueSet> {
    a.check(b)?;
    let members: Vec<(u64, u64)> = a.pairs().collect();
    let n = a.words.len();
    let words = members
        .par_chunks(64)
        .map(|chunk| {
            let mut out = vec![0u64; n];
            for &(x, y) in chunk {
                b.shifted_into(x, y, &mut out);
            }
            out
        })
        .reduce(
            || vec![0u64; n],
            |mut x, y| {
                x.iter_mut().zip(&y).for_each(|(a, b)| *a |= b);
                x
            },
        );
    Ok(ResidueSet { words, ..*a })
}

/// `A B` under coordinatewise multiplication.
pub fn productset(a: &ResidueSet, b: &ResidueSet) -> Result<ResidueSet> {
    a.check(b)?;
    let mut s = ResidueSet {
        words: vec![0; a.words.len()],
        ..*a
    };
    let bp: Vec<_> = b.pairs().collect();
    for (x1, x2) in a.pairs() {
        for &(y1, y2) in &bp {
            s.set((x1 * y1 % a.q1) * a.q2 + x2 * y2 % a.q2);
        }
    }
    Ok(s)
}

/// `AB - AB`.
pub fn difference_of_products(a: &ResidueSet, b: &ResidueSet) -> Result<ResidueSet> {
    let ab = productset(a, b)?;
    sumset(&ab, &ab.negate())
}

/// `X + X + ... + X` with `k >= 1` summands, by repeated doubling.
pub fn iterated_sum(x: &ResidueSet, k: usize) -> Result<ResidueSet> {
    if k == 0 {
        return Err(Error::invalid("number of summands must be positive"));
    }
    let mut result: Option<ResidueSet> = None;
    let mut pow = x.clone();
    let mut k = k;
    loop {
        if k & 1 == 1 {
            result = Some(match result {
                None => pow.clone(),
                Some(r) => sumset(&r, &pow)?,
            });
        }
        k >>= 1;
        if k == 0 {
            break;
        }
        pow = sumset(&pow, &pow)?;
    }
    Ok(result.expect("k >= 1"))
}

#[derive(Clone, Debug, Serialize)]
pub struct Covering {
    pub q: u64,
    pub folds: usize,
    /// Smallest divisor `q'` with `q' Z/qZ` inside the iterated sum.
    pub q_prime: u64,
    pub gamma: Option<f64>,
    /// `|A|, |B| > q^(1 - gamma)`.
    pub hypothesis_holds: Option<bool>,
    /// `q' < q^(12 gamma / 5)`.
    pub verified: Option<bool>,
    /// Independent rescan of every multiple of `q'`.
    pub rescan_ok: bool,
}

/// Smallest divisor `q'` of `q` with `q' Z/qZ` contained in `folds` copies
/// of `AB - AB` summed.
pub fn sum_product_covering(a: &ResidueSet, b: &ResidueSet, folds: usize, gamma: Option<f64>) -> Result<Covering> {
    if a.q2 != 1 || b.q2 != 1 {
        return Err(Error::invalid("expected subsets of Z/qZ"));
    }
    let q = a.q1;
    let hypothesis_holds = gamma.map(|g| {
        let bound = (q as f64).powf(1.0 - g);
        a.len() as f64 > bound && b.len() as f64 > bound
    });
    if hypothesis_holds == Some(false) {
        log::warn!("covering: set sizes below q^(1-gamma)");
    }
    let sum = iterated_sum(&difference_of_products(a, b)?, folds)?;
    let divisors = FactoredModulus::new(q)?.divisors();
    let q_prime = divisors
        .iter()
        .map(|d| d.value())
        .find(|&d| (0..q).step_by(d as usize).all(|x| sum.contains(x)))
        .expect("q itself always qualifies since 0 lies in AB - AB");
    let rescan_ok = ResidueSet::multiples(q, q_prime)?.is_subset_of(&sum);
    Ok(Covering {
        q,
        folds,
        q_prime,
        gamma,
        hypothesis_holds,
        verified: gamma.map(|g| (q_prime as f64) < (q as f64).powf(12.0 * g / 5.0)),
        rescan_ok,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PairCovering {
    pub q1: u64,
    pub q2: u64,
    pub folds: usize,
    pub q1_prime: u64,
    pub q2_prime: u64,
    pub delta: Option<f64>,
    pub hypothesis_holds: Option<bool>,
    /// `q1' q2' < (q1 q2)^(10 delta)`.
    pub verified_10: Option<bool>,
    /// `q1' q2' < (q1 q2)^(24 delta / 5)`.
    pub verified_24_5: Option<bool>,
    pub rescan_ok: bool,
}

/// Divisor pair `(q1', q2')` with the smallest product (ties by `q1'`) such
/// that the box `q1' Z/q1 x q2' Z/q2` lies in the iterated sum.
pub fn pair_covering(a: &ResidueSet, b: &ResidueSet, folds: usize, delta: Option<f64>) -> Result<PairCovering> {
    a.check(b)?;
    let (q1, q2) = a.moduli();
    let n = (q1 * q2) as f64;
    let hypothesis_holds = delta.map(|d| {
        let bound = n.powf(1.0 - d);
        a.len() as f64 > bound && b.len() as f64 > bound
    });
    if hypothesis_holds == Some(false) {
        log::warn!("covering: set sizes below (q1 q2)^(1-delta)");
    }
    let sum = iterated_sum(&difference_of_products(a, b)?, folds)?;
    let mut cands: Vec<(u64, u64)> = Vec::new();
    for d1 in FactoredModulus::new(q1)?.divisors() {
        for d2 in FactoredModulus::new(q2)?.divisors() {
            cands.push((d1.value(), d2.value()));
        }
    }
    cands.sort_by_key(|&(x, y)| (x * y, x));
    let covered = |d1: u64, d2: u64| {
        (0..q1)
            .step_by(d1 as usize)
            .all(|x| (0..q2).step_by(d2 as usize).all(|y| sum.contains_pair(x, y)))
    };
    let (d1, d2) = *cands
        .iter()
        .find(|&&(x, y)| covered(x, y))
        .expect("(q1, q2) always qualifies");
    let rescan_ok = ResidueSet::box_multiples(q1, q2, d1, d2)?.is_subset_of(&sum);
    let prod = (d1 * d2) as f64;
    Ok(PairCovering {
        q1,
        q2,
        folds,
        q1_prime: d1,
        q2_prime: d2,
        delta,
        hypothesis_holds,
        verified_10: delta.map(|d| prod < n.powf(10.0 * d)),
        verified_24_5: delta.map(|d| prod < n.powf(24.0 * d / 5.0)),
        rescan_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::seq::index::sample;
    use std::collections::BTreeSet;

    fn naive_sum(a: &ResidueSet, b: &ResidueSet) -> BTreeSet<(u64, u64)> {
        let (q1, q2) = a.moduli();
        let mut s = BTreeSet::new();
        for (x1, x2) in a.pairs() {
            for (y1, y2) in b.pairs() {
                s.insert(((x1 + y1) % q1, (x2 + y2) % q2));
            }
        }
        s
    }

    fn random_set(q: u64, n: usize, seed: u64) -> ResidueSet {
        let mut r = rng::stream(seed, 0);
        ResidueSet::from_elems(q, sample(&mut r, q as usize, n).into_iter().map(|x| x as u64)).unwrap()
    }

    #[test]
    fn basic_identities() {
        let z = ResidueSet::from_elems(9, [0]).unwrap();
        assert_eq!(sumset(&z, &z).unwrap(), z);
        let a = random_set(9, 3, 1);
        assert_eq!(sumset(&a, &ResidueSet::full(9).unwrap()).unwrap(), ResidueSet::full(9).unwrap());
        let a = ResidueSet::from_elems(7, [1, 2]).unwrap();
        let d = difference_of_products(&a, &a).unwrap();
        assert_eq!(d, ResidueSet::full(7).unwrap());
        assert_eq!(productset(&a, &a).unwrap().iter().collect::<Vec<_>>(), vec![1, 2, 4]);
    }

    #[test]
    fn word_rotation_matches_naive() {
        for q in [1u64, 5, 63, 64, 65, 130, 1000] {
            let a = random_set(q, (q as usize).min(7), q);
            let b = random_set(q, (q as usize / 3).max(1), q + 1);
            let got: BTreeSet<_> = sumset(&a, &b).unwrap().pairs().collect();
            assert_eq!(got, naive_sum(&a, &b), "q={q}");
        }
    }

    #[test]
    fn pair_sumset_matches_naive() {
        let a = ResidueSet::from_pairs(8, 9, [(1, 2), (3, 7), (0, 0)]).unwrap();
        let b = ResidueSet::from_pairs(8, 9, [(7, 8), (2, 2)]).unwrap();
        let got: BTreeSet<_> = sumset(&a, &b).unwrap().pairs().collect();
        assert_eq!(got, naive_sum(&a, &b));
    }

    #[test]
    fn covering_full_and_multiples() {
        let f = ResidueSet::full(36).unwrap();
        assert_eq!(sum_product_covering(&f, &f, 24, Some(0.2)).unwrap().q_prime, 1);
        // A = B = dZ/qZ: AB - AB = d^2 Z/qZ up to the gcd with q
        for (q, d) in [(64u64, 2u64), (81, 3), (60, 2), (100, 10)] {
            let a = ResidueSet::multiples(q, d).unwrap();
            let c = sum_product_covering(&a, &a, 24, Some(0.2)).unwrap();
            let mut sum = difference_of_products(&a, &a).unwrap();
            let once = sum.clone();
            for _ in 1..24 {
                sum = sumset(&sum, &once).unwrap();
            }
            let want = (1..=q).filter(|x| q % x == 0).find(|&x| (0..q).step_by(x as usize).all(|y| sum.contains(y)));
            assert_eq!(Some(c.q_prime), want);
            assert_eq!(c.q_prime, num_integer::gcd(d * d, q));
            assert!(c.rescan_ok);
        }
    }

    #[test]
    fn covering_prime_dense_random() {
        for q in [5u64, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61] {
            let n = (q as f64).powf(0.75).floor() as usize + 1;
            let a = random_set(q, n, q);
            let b = random_set(q, n, q + 100);
            let c = sum_product_covering(&a, &b, 24, Some(0.2)).unwrap();
            assert_eq!(c.q_prime, 1, "q={q}");
        }
    }

    #[test]
    fn pair_covering_cases() {
        let f = ResidueSet::full_pair(8, 9).unwrap();
        let c = pair_covering(&f, &f, 96, Some(0.1)).unwrap();
        assert_eq!((c.q1_prime, c.q2_prime), (1, 1));
        // product of one-dimensional multiples gives the componentwise answer
        let a = ResidueSet::box_multiples(16, 27, 2, 3).unwrap();
        let c = pair_covering(&a, &a, 96, None).unwrap();
        let l = sum_product_covering(&ResidueSet::multiples(16, 2).unwrap(), &ResidueSet::multiples(16, 2).unwrap(), 96, None).unwrap();
        let r = sum_product_covering(&ResidueSet::multiples(27, 3).unwrap(), &ResidueSet::multiples(27, 3).unwrap(), 96, None).unwrap();
        assert_eq!((c.q1_prime, c.q2_prime), (l.q_prime, r.q_prime));
        let mut rr = rng::stream(5, 0);
        let pick = |rr: &mut _| sample(rr, 72, 50).into_iter().map(|x| (x as u64 / 9, x as u64 % 9)).collect::<Vec<_>>();
        let a = ResidueSet::from_pairs(8, 9, pick(&mut rr)).unwrap();
        let b = ResidueSet::from_pairs(8, 9, pick(&mut rr)).unwrap();
        let c = pair_covering(&a, &b, 96, Some(0.1)).unwrap();
        assert!(c.rescan_ok);
        let sum = iterated_sum(&difference_of_products(&a, &b).unwrap(), 96).unwrap();
        for x in (0..8).step_by(c.q1_prime as usize) {
            for y in (0..9).step_by(c.q2_prime as usize) {
                assert!(sum.contains_pair(x, y));
            }
        }
    }

    proptest! {
        #[test]
        fn fold_additivity(q in 2u64..200, xs in prop::collection::vec(0u64..1000, 1..6), a in 1usize..5, b in 1usize..5) {
            let x = ResidueSet::from_elems(q, xs).unwrap();
            let l = iterated_sum(&x, a + b).unwrap();
            let r = sumset(&iterated_sum(&x, a).unwrap(), &iterated_sum(&x, b).unwrap()).unwrap();
            prop_assert_eq!(l, r);
        }

        #[test]
        fn more_folds_never_worse(q in 2u64..120, xs in prop::collection::vec(0u64..1000, 1..5), ys in prop::collection::vec(0u64..1000, 1..5), f in 1usize..6) {
            let a = ResidueSet::from_elems(q, xs).unwrap();
            let b = ResidueSet::from_elems(q, ys).unwrap();
            let c1 = sum_product_covering(&a, &b, f, None).unwrap();
            let c2 = sum_product_covering(&a, &b, f + 1, None).unwrap();
            prop_assert_eq!(q % c1.q_prime, 0);
            prop_assert!(c2.q_prime <= c1.q_prime);
            prop_assert!(c1.rescan_ok && c2.rescan_ok);
        }
    }
}

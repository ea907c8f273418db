//! Positive integers carried together with their prime factorisation.

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A positive integer `value = prod p^e` with primes strictly increasing.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FactoredModulus {
    value: u64,
    factors: Vec<(u64, u32)>,
}

fn trial_factor(mut n: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut push = |p: u64, n: &mut u64| {
        let mut e = 0;
        while *n % p == 0 {
            *n /= p;
            e += 1;
        }
        if e > 0 {
            out.push((p, e));
        }
    };
    push(2, &mut n);
    push(3, &mut n);
    // wheel over 6k +- 1
    let mut p = 5u64;
    while (p as u128) * (p as u128) <= n as u128 {
        push(p, &mut n);
        push(p + 2, &mut n);
        p += 6;
    }
    if n > 1 {
        out.push((n, 1));
    }
    out
}

pub fn is_prime(n: u64) -> bool {
    n >= 2 && trial_factor(n) == vec![(n, 1)]
}

impl FactoredModulus {
    pub fn new(value: u64) -> Result<Self> {
        if value == 0 {
            return Err(Error::invalid("modulus must be positive"));
        }
        Ok(FactoredModulus {
            value,
            factors: trial_factor(value),
        })
    }

    pub fn one() -> Self {
        FactoredModulus {
            value: 1,
            factors: Vec::new(),
        }
    }

    pub fn prime_power(p: u64, e: u32) -> Result<Self> {
        Self::from_factors(&[(p, e)])
    }

    /// Build from an explicit factor list; the list is validated.
    pub fn from_factors(factors: &[(u64, u32)]) -> Result<Self> {
        let mut value: u64 = 1;
        let mut prev = 1u64;
        let mut kept = Vec::with_capacity(factors.len());
        for &(p, e) in factors {
            if p <= prev || !is_prime(p) {
                return Err(Error::invalid(format!("bad prime {p} in factor list")));
            }
            prev = p;
            if e == 0 {
                continue;
            }
            let pe = p
                .checked_pow(e)
                .ok_or_else(|| Error::invalid("modulus exceeds 64 bits"))?;
            value = value
                .checked_mul(pe)
                .ok_or_else(|| Error::invalid("modulus exceeds 64 bits"))?;
            kept.push((p, e));
        }
        Ok(FactoredModulus {
            value,
            factors: kept,
        })
    }

    // internal constructor for factor lists already known to be valid
    fn from_valid(factors: Vec<(u64, u32)>) -> Self {
        let value = factors.iter().fold(1u64, |acc, &(p, e)| acc * p.pow(e));
        FactoredModulus { value, factors }
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn factors(&self) -> &[(u64, u32)] {
        &self.factors
    }

    pub fn primes(&self) -> impl Iterator<Item = u64> + '_ {
        self.factors.iter().map(|&(p, _)| p)
    }

    pub fn is_one(&self) -> bool {
        self.value == 1
    }

    pub fn exponent_of(&self, p: u64) -> u32 {
        self.factors
            .iter()
            .find(|&&(q, _)| q == p)
            .map_or(0, |&(_, e)| e)
    }

    /// The full power of `p` in `self`.
    pub fn p_part(&self, p: u64) -> u64 {
        p.pow(self.exponent_of(p))
    }

    pub fn divides(&self, other: &FactoredModulus) -> bool {
        other.value % self.value == 0
    }

    /// `self || other`: every prime power of `self` is the full power in `other`.
    pub fn exact_divides(&self, other: &FactoredModulus) -> bool {
        self.factors
            .iter()
            .all(|&(p, e)| other.exponent_of(p) == e)
    }

    /// `prod p^floor(n * alpha)` computed in exact arithmetic.
    ///
    /// # Panics
    /// If `alpha > 1` pushes the result past 64 bits.
    pub fn frac_power(&self, alpha: Ratio<u64>) -> FactoredModulus {
        let (num, den) = (*alpha.numer() as u128, *alpha.denom() as u128);
        let f: Vec<(u64, u32)> = self
            .factors
            .iter()
            .map(|&(p, n)| (p, (n as u128 * num / den) as u32))
            .filter(|&(_, m)| m > 0)
            .collect();
        Self::from_factors(&f).expect("fractional power exceeds 64 bits")
    }

    /// Split into (prime powers with exponent <= l, the rest).
    pub fn split_by_exponent(&self, l: u32) -> (FactoredModulus, FactoredModulus) {
        let (small, large): (Vec<_>, Vec<_>) = self.factors.iter().partition(|&&(_, e)| e <= l);
        (Self::from_valid(small), Self::from_valid(large))
    }

    pub fn radical(&self) -> FactoredModulus {
        Self::from_valid(self.factors.iter().map(|&(p, _)| (p, 1)).collect())
    }

    fn merge(&self, other: &FactoredModulus, pick: impl Fn(u32, u32) -> u32) -> Vec<(u64, u32)> {
        let mut primes: Vec<u64> = self.primes().chain(other.primes()).collect();
        primes.sort_unstable();
        primes.dedup();
        primes
            .into_iter()
            .map(|p| (p, pick(self.exponent_of(p), other.exponent_of(p))))
            .filter(|&(_, e)| e > 0)
            .collect()
    }

    pub fn gcd(&self, other: &FactoredModulus) -> FactoredModulus {
        Self::from_valid(self.merge(other, u32::min))
    }

    pub fn lcm(&self, other: &FactoredModulus) -> Result<FactoredModulus> {
        Self::from_factors(&self.merge(other, u32::max))
    }

    pub fn mul(&self, other: &FactoredModulus) -> Result<FactoredModulus> {
        Self::from_factors(&self.merge(other, |a, b| a + b))
    }

    pub fn coprime_to(&self, other: &FactoredModulus) -> bool {
        self.gcd(other).is_one()
    }

    /// `self / other`, requiring `other | self`.
    pub fn div_exact(&self, other: &FactoredModulus) -> Result<FactoredModulus> {
        if !other.divides(self) {
            return Err(Error::NotDivisor(other.value, self.value));
        }
        Ok(Self::from_valid(self.merge(other, |a, b| a - b)))
    }

    /// Part of `self` supported on the primes selected by `keep`.
    pub fn restrict(&self, keep: impl Fn(u64) -> bool) -> FactoredModulus {
        Self::from_valid(
            self.factors
                .iter()
                .copied()
                .filter(|&(p, _)| keep(p))
                .collect(),
        )
    }

    /// All divisors, sorted ascending by value.
    pub fn divisors(&self) -> Vec<FactoredModulus> {
        let mut out = vec![Vec::new()];
        for &(p, n) in &self.factors {
            let mut next = Vec::with_capacity(out.len() * (n as usize + 1));
            for f in &out {
                for e in 0..=n {
                    let mut g: Vec<(u64, u32)> = f.clone();
                    if e > 0 {
                        g.push((p, e));
                    }
                    next.push(g);
                }
            }
            out = next;
        }
        let mut v: Vec<FactoredModulus> = out.into_iter().map(Self::from_valid).collect();
        v.sort_by_key(|d| d.value);
        v
    }

    /// All exact divisors, sorted ascending by value.
    pub fn exact_divisors(&self) -> Vec<FactoredModulus> {
        let k = self.factors.len();
        let mut v: Vec<FactoredModulus> = (0u64..(1 << k))
            .map(|mask| {
                Self::from_valid(
                    self.factors
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask >> i & 1 == 1)
                        .map(|(_, &f)| f)
                        .collect(),
                )
            })
            .collect();
        v.sort_by_key(|d| d.value);
        v
    }

    /// `|SL2(Z/qZ)| = q^3 prod (1 - p^-2)`.
    pub fn sl2_order(&self) -> u128 {
        self.factors.iter().fold(1u128, |acc, &(p, e)| {
            let p = p as u128;
            acc * p.pow(3 * (e - 1)) * p * (p * p - 1)
        })
    }

    /// Order of the congruence kernel of `SL2(Z/self) -> SL2(Z/sub)`.
    pub fn congruence_kernel_order(&self, sub: &FactoredModulus) -> Result<u128> {
        if !sub.divides(self) {
            return Err(Error::NotDivisor(sub.value, self.value));
        }
        Ok(self.sl2_order() / sub.sl2_order())
    }
}

impl fmt::Display for FactoredModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl Serialize for FactoredModulus {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.value.to_string())
    }
}

impl<'de> Deserialize<'de> for FactoredModulus {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let v: u64 = s.trim().parse().map_err(serde::de::Error::custom)?;
        FactoredModulus::new(v).map_err(serde::de::Error::custom)
    }
}

impl std::str::FromStr for FactoredModulus {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let v: u64 = s
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("not a modulus: {s:?}")))?;
        FactoredModulus::new(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fm(n: u64) -> FactoredModulus {
        FactoredModulus::new(n).unwrap()
    }

    #[test]
    fn factorisation_roundtrip() {
        assert_eq!(fm(360).factors(), &[(2, 3), (3, 2), (5, 1)]);
        assert_eq!(fm(1).factors(), &[]);
        assert_eq!(fm(97).factors(), &[(97, 1)]);
        assert_eq!(fm(1 << 40).factors(), &[(2, 40)]);
        assert!(FactoredModulus::new(0).is_err());
        assert!(FactoredModulus::from_factors(&[(4, 1)]).is_err());
        assert!(FactoredModulus::from_factors(&[(3, 1), (2, 1)]).is_err());
    }

    #[test]
    fn exact_division_examples() {
        assert!(fm(40).exact_divides(&fm(360)));
        assert!(!fm(4).exact_divides(&fm(360)));
        for n in 1..50 {
            assert!(fm(1).exact_divides(&fm(n)));
        }
    }

    #[test]
    fn frac_power_examples() {
        let q = fm(360);
        assert_eq!(q.frac_power(Ratio::new(1, 2)).value(), 6);
        assert_eq!(q.frac_power(Ratio::from_integer(1)), q);
        assert_eq!(q.frac_power(Ratio::from_integer(0)).value(), 1);
        assert_eq!(fm(1 << 7).frac_power(Ratio::new(2, 7)).value(), 4);
    }

    #[test]
    fn split_examples() {
        let (s, l) = fm(32 * 9 * 7).split_by_exponent(2);
        assert_eq!((s.value(), l.value()), (63, 32));
        let (s, l) = fm(30).split_by_exponent(1);
        assert_eq!((s.value(), l.value()), (30, 1));
        let (s, l) = fm(32 * 243).split_by_exponent(4);
        assert_eq!((s.value(), l.value()), (1, 32 * 243));
    }

    #[test]
    fn radical_examples() {
        assert_eq!(fm(360).radical().value(), 30);
        assert_eq!(fm(1).radical().value(), 1);
        assert_eq!(fm(3u64.pow(9)).radical().value(), 3);
    }

    #[test]
    fn divisor_counts() {
        assert_eq!(fm(360).divisors().len(), 24);
        assert_eq!(fm(360).exact_divisors().len(), 8);
        assert_eq!(fm(1).divisors().len(), 1);
    }

    #[test]
    fn sl2_orders() {
        assert_eq!(fm(1).sl2_order(), 1);
        assert_eq!(fm(4).sl2_order(), 48);
        assert_eq!(fm(5).sl2_order(), 120);
        assert_eq!(fm(9).sl2_order(), 648);
    }

    proptest! {
        #[test]
        fn exact_divides_order(a in 1u64..2000, b in 1u64..2000, c in 1u64..2000) {
            let (a, b, c) = (fm(a), fm(b), fm(c));
            prop_assert!(a.exact_divides(&a));
            if a.exact_divides(&b) && b.exact_divides(&c) {
                prop_assert!(a.exact_divides(&c));
            }
            if a.exact_divides(&b) && b.exact_divides(&a) {
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn frac_power_superadditive(q in 1u64..100_000, an in 0u64..6, ad in 1u64..6, bn in 0u64..6, bd in 1u64..6) {
            let q = fm(q);
            let (a, b) = (Ratio::new(an.min(ad), ad), Ratio::new(bn.min(bd), bd));
            let s = a + b;
            let lhs = q.frac_power(a).value() as u128 * q.frac_power(b).value() as u128;
            let rhs = q.frac_power(s);
            if s <= Ratio::from_integer(1) {
                prop_assert_eq!(rhs.value() as u128 % lhs, 0);
                let integral = q.factors().iter().all(|&(_, n)| {
                    (Ratio::from_integer(n as u64) * a).is_integer()
                        && (Ratio::from_integer(n as u64) * b).is_integer()
                });
                if integral {
                    prop_assert_eq!(rhs.value() as u128, lhs);
                }
            }
        }

        #[test]
        fn split_recombines(q in 1u64..1_000_000, l in 1u32..6) {
            let q = fm(q);
            let (s, g) = q.split_by_exponent(l);
            prop_assert_eq!(s.value() * g.value(), q.value());
            prop_assert!(s.exact_divides(&q) && g.exact_divides(&q));
        }

        #[test]
        fn divisors_divide(q in 1u64..20_000) {
            let qq = fm(q);
            for d in qq.divisors() {
                prop_assert_eq!(q % d.value(), 0);
            }
            for d in qq.exact_divisors() {
                prop_assert!(d.exact_divides(&qq));
            }
        }

        #[test]
        fn gcd_lcm(a in 1u64..100_000, b in 1u64..100_000) {
            let (fa, fb) = (fm(a), fm(b));
            let g = num_integer::gcd(a, b);
            prop_assert_eq!(fa.gcd(&fb).value(), g);
            prop_assert_eq!(fa.lcm(&fb).unwrap().value(), a / g * b);
        }
    }
}

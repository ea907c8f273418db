//! Matrix algebra in `SL2(Z/qZ)`, the pair group and the Lie algebra `sl2`.

use std::fmt;
use std::hash::Hash;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factored::FactoredModulus;

/// Default cap on the number of elements materialised by enumeration.
pub const DEFAULT_ENUM_CAP: u128 = 10_000_000;

#[inline]
pub fn mul_mod(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 * b as u128) % q as u128) as u64
}

#[inline]
pub fn add_mod(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 + b as u128) % q as u128) as u64
}

#[inline]
pub fn sub_mod(a: u64, b: u64, q: u64) -> u64 {
    add_mod(a, q - b % q, q)
}

#[inline]
pub fn neg_mod(a: u64, q: u64) -> u64 {
    (q - a % q) % q
}

pub fn reduce_i128(x: i128, q: u64) -> u64 {
    x.rem_euclid(q as i128) as u64
}

pub fn reduce_bigint(x: &BigInt, q: u64) -> u64 {
    x.mod_floor(&BigInt::from(q)).to_u64().expect("residue fits")
}

/// Inverse of `a` modulo `q`, if it exists.
pub fn mod_inv(a: u64, q: u64) -> Option<u64> {
    if q == 1 {
        return Some(0);
    }
    let e = (a as i128).extended_gcd(&(q as i128));
    (e.gcd == 1).then(|| reduce_i128(e.x, q))
}

/// p-adic valuation of `x` modulo `p^n`, capped at `n` (so `0` has valuation `n`).
pub fn valuation_capped(x: u64, p: u64, n: u32) -> u32 {
    if x == 0 {
        return n;
    }
    let mut v = 0;
    let mut x = x;
    while v < n && x % p == 0 {
        x /= p;
        v += 1;
    }
    v
}

/// Combine residues modulo pairwise coprime moduli.
pub fn crt(residues: &[(u64, u64)]) -> u64 {
    let mut x: u128 = 0;
    let mut m: u128 = 1;
    for &(r, mi) in residues {
        let mi128 = mi as u128;
        // solve x + m t = r (mod mi)
        let inv = mod_inv((m % mi128) as u64, mi).expect("coprime moduli");
        let diff = (r as u128 + mi128 - (x % mi128)) % mi128;
        let t = diff * inv as u128 % mi128;
        x += m * t;
        m *= mi128;
    }
    x as u64
}

/// Minimal group interface shared by residues, pairs and integral pairs.
pub trait GroupElement: Clone + Eq + Hash + Ord + fmt::Debug + Send + Sync {
    fn op(&self, other: &Self) -> Self;
    fn inv(&self) -> Self;
    fn identity_like(&self) -> Self;

    fn is_identity(&self) -> bool {
        *self == self.identity_like()
    }

    /// Canonical text form used as a JSON key.
    fn key(&self) -> String;

    /// Identifies the ambient group; elements with different ambients never mix.
    fn ambient(&self) -> (u64, u64);
}

/// An element of `SL2(Z/qZ)` stored reduced modulo `q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct SL2Residue {
    q: u64,
    a: u64,
    b: u64,
    c: u64,
    d: u64,
}

impl SL2Residue {
    pub fn new(q: u64, a: i64, b: i64, c: i64, d: i64) -> Result<Self> {
        if q == 0 {
            return Err(Error::invalid("modulus must be positive"));
        }
        let r = |x: i64| reduce_i128(x as i128, q);
        Self::from_residues(q, r(a), r(b), r(c), r(d))
    }

    pub fn from_residues(q: u64, a: u64, b: u64, c: u64, d: u64) -> Result<Self> {
        if q == 0 {
            return Err(Error::invalid("modulus must be positive"));
        }
        let x = SL2Residue {
            q,
            a: a % q,
            b: b % q,
            c: c % q,
            d: d % q,
        };
        if x.det() != 1 % q {
            return Err(Error::Determinant(format!("{} mod {q}", x.det())));
        }
        Ok(x)
    }

    // entries must already be reduced with determinant 1
    #[inline]
    pub(crate) fn raw(q: u64, a: u64, b: u64, c: u64, d: u64) -> Self {
        let x = SL2Residue { q, a, b, c, d };
        debug_assert_eq!(x.det(), 1 % q);
        x
    }

    pub fn identity(q: u64) -> Self {
        let one = 1 % q;
        SL2Residue {
            q,
            a: one,
            b: 0,
            c: 0,
            d: one,
        }
    }

    pub fn modulus(&self) -> u64 {
        self.q
    }

    pub fn entries(&self) -> [u64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    /// Entries lifted to the symmetric range `(-q/2, q/2]`.
    pub fn signed_entries(&self) -> [i64; 4] {
        let q = self.q;
        self.entries().map(|x| {
            if x > q / 2 {
                x as i64 - q as i64
            } else {
                x as i64
            }
        })
    }

    pub fn det(&self) -> u64 {
        sub_mod(
            mul_mod(self.a, self.d, self.q),
            mul_mod(self.b, self.c, self.q),
            self.q,
        )
    }

    pub fn trace(&self) -> u64 {
        add_mod(self.a, self.d, self.q)
    }

    #[inline]
    pub fn mul_same(&self, y: &SL2Residue) -> SL2Residue {
        debug_assert_eq!(self.q, y.q);
        let q = self.q as u128;
        let (a, b, c, d) = (self.a as u128, self.b as u128, self.c as u128, self.d as u128);
        let (e, f, g, h) = (y.a as u128, y.b as u128, y.c as u128, y.d as u128);
        SL2Residue {
            q: self.q,
            a: ((a * e % q + b * g % q) % q) as u64,
            b: ((a * f % q + b * h % q) % q) as u64,
            c: ((c * e % q + d * g % q) % q) as u64,
            d: ((c * f % q + d * h % q) % q) as u64,
        }
    }

    pub fn mul(&self, y: &SL2Residue) -> Result<SL2Residue> {
        if self.q != y.q {
            return Err(Error::ModulusMismatch(self.q.to_string(), y.q.to_string()));
        }
        let z = self.mul_same(y);
        debug_assert_eq!(z.det(), 1 % z.q);
        Ok(z)
    }

    pub fn inverse(&self) -> SL2Residue {
        let q = self.q;
        SL2Residue {
            q,
            a: self.d,
            b: neg_mod(self.b, q),
            c: neg_mod(self.c, q),
            d: self.a,
        }
    }

    pub fn pow(&self, mut k: u64) -> SL2Residue {
        let mut base = *self;
        let mut acc = SL2Residue::identity(self.q);
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.mul_same(&base);
            }
            base = base.mul_same(&base);
            k >>= 1;
        }
        acc
    }

    /// `g x g^-1`.
    pub fn conjugate_by(&self, g: &SL2Residue) -> Result<SL2Residue> {
        Ok(g.mul(self)?.mul_same(&g.inverse()))
    }

    pub fn commutator(&self, y: &SL2Residue) -> Result<SL2Residue> {
        Ok(self
            .mul(y)?
            .mul_same(&self.inverse())
            .mul_same(&y.inverse()))
    }

    pub fn is_identity(&self) -> bool {
        *self == SL2Residue::identity(self.q)
    }

    /// Reduce modulo a divisor of the current modulus.
    pub fn reduce(&self, target: u64) -> Result<SL2Residue> {
        if target == 0 || self.q % target != 0 {
            return Err(Error::NotDivisor(target, self.q));
        }
        Ok(SL2Residue {
            q: target,
            a: self.a % target,
            b: self.b % target,
            c: self.c % target,
            d: self.d % target,
        })
    }

    /// Largest `t <= n` with `x = 1 (mod p^t)`, where `p^n || q`.
    pub fn congruence_depth(&self, p: u64) -> Result<u32> {
        let qf = FactoredModulus::new(self.q)?;
        let n = qf.exponent_of(p);
        if n == 0 {
            return Err(Error::PrimeNotInModulus(p, self.q));
        }
        let pn = p.pow(n);
        let q = self.q;
        let entries = [
            sub_mod(self.a, 1, q) % pn,
            self.b % pn,
            self.c % pn,
            sub_mod(self.d, 1, q) % pn,
        ];
        Ok(entries
            .iter()
            .map(|&x| valuation_capped(x, p, n))
            .min()
            .unwrap_or(n))
    }

    /// Whether the element lies in the kernel of reduction modulo `q_sub`.
    pub fn in_congruence_coset(&self, q_sub: u64) -> Result<bool> {
        Ok(self.reduce(q_sub)?.is_identity())
    }

    /// Components modulo each prime power of `q`.
    pub fn crt_split(&self, q: &FactoredModulus) -> Result<Vec<SL2Residue>> {
        if q.value() != self.q {
            return Err(Error::ModulusMismatch(q.to_string(), self.q.to_string()));
        }
        q.factors()
            .iter()
            .map(|&(p, e)| self.reduce(p.pow(e)))
            .collect()
    }

    /// Inverse of [`crt_split`](Self::crt_split) for pairwise coprime moduli.
    pub fn crt_join(parts: &[SL2Residue]) -> Result<SL2Residue> {
        let mut q: u64 = 1;
        for x in parts {
            if num_integer::gcd(q, x.q) != 1 {
                return Err(Error::precondition("CRT parts must have coprime moduli"));
            }
            q = q
                .checked_mul(x.q)
                .ok_or_else(|| Error::invalid("joined modulus exceeds 64 bits"))?;
        }
        let entry = |k: usize| crt(&parts.iter().map(|x| (x.entries()[k], x.q)).collect::<Vec<_>>());
        SL2Residue::from_residues(q, entry(0), entry(1), entry(2), entry(3))
    }

    pub fn to_int_matrix(&self) -> IntMatrix2 {
        let [a, b, c, d] = self.entries();
        IntMatrix2::from_ints([a as i64, b as i64, c as i64, d as i64].map(BigInt::from))
    }
}

impl fmt::Display for SL2Residue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[[{},{}],[{},{}]]",
            self.a, self.b, self.c, self.d
        )
    }
}

impl GroupElement for SL2Residue {
    fn op(&self, other: &Self) -> Self {
        assert_eq!(self.q, other.q, "modulus mismatch");
        self.mul_same(other)
    }
    fn inv(&self) -> Self {
        self.inverse()
    }
    fn identity_like(&self) -> Self {
        SL2Residue::identity(self.q)
    }
    fn key(&self) -> String {
        self.to_string()
    }
    fn ambient(&self) -> (u64, u64) {
        (self.q, 0)
    }
}

fn sl2_prime_power(p: u64, e: u32, level: u32, out: &mut Vec<SL2Residue>) {
    // elements of SL2(Z/p^e) congruent to 1 modulo p^level
    let q = p.pow(e);
    let step = p.pow(level.min(e));
    let one = 1 % q;
    let mut a = if level == 0 { 0 } else { one };
    while a < q.max(1) {
        let mut c = 0;
        while c < q {
            if a % p != 0 {
                let ainv = mod_inv(a, q).expect("unit");
                let mut b = 0;
                while b < q {
                    let d = mul_mod(add_mod(1, mul_mod(b, c, q), q), ainv, q);
                    out.push(SL2Residue::raw(q, a, b, c, d));
                    b += step;
                }
            } else if c % p != 0 {
                // level is 0 here, a is a nonunit so c must be a unit
                let cinv = mod_inv(c, q).expect("unit");
                for d in 0..q {
                    let b = mul_mod(sub_mod(mul_mod(a, d, q), 1, q), cinv, q);
                    out.push(SL2Residue::raw(q, a, b, c, d));
                }
            }
            c += step;
        }
        a += step;
    }
}

/// Elements of `SL2(Z/qZ)` congruent to the identity modulo `level`,
/// sorted by entries. `level = 1` gives the whole group.
pub fn enumerate_congruence(q: &FactoredModulus, level: &FactoredModulus, cap: u128) -> Result<Vec<SL2Residue>> {
    if !level.divides(q) {
        return Err(Error::NotDivisor(level.value(), q.value()));
    }
    let order = q.congruence_kernel_order(level)?;
    if order > cap {
        return Err(Error::CapExceeded {
            what: "SL2 enumeration",
            needed: order,
            cap,
        });
    }
    if q.is_one() {
        return Ok(vec![SL2Residue::identity(1)]);
    }
    let mut parts: Vec<Vec<SL2Residue>> = Vec::new();
    for &(p, e) in q.factors() {
        let mut v = Vec::new();
        sl2_prime_power(p, e, level.exponent_of(p), &mut v);
        parts.push(v);
    }
    let mut out: Vec<SL2Residue> = Vec::with_capacity(order as usize);
    let mut idx = vec![0usize; parts.len()];
    loop {
        let comp: Vec<SL2Residue> = idx.iter().zip(&parts).map(|(&i, v)| v[i]).collect();
        out.push(if comp.len() == 1 {
            comp[0]
        } else {
            SL2Residue::crt_join(&comp)?
        });
        let mut k = 0;
        loop {
            if k == idx.len() {
                out.sort_unstable();
                debug_assert_eq!(out.len() as u128, order);
                return Ok(out);
            }
            idx[k] += 1;
            if idx[k] < parts[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Every element of `SL2(Z/qZ)` exactly once, sorted by entries.
pub fn enumerate_group(q: &FactoredModulus, cap: u128) -> Result<Vec<SL2Residue>> {
    enumerate_congruence(q, &FactoredModulus::one(), cap)
}

/// An element of `SL2(Z/q1) x SL2(Z/q2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct PairElement {
    pub left: SL2Residue,
    pub right: SL2Residue,
}

impl PairElement {
    pub fn new(left: SL2Residue, right: SL2Residue) -> Self {
        PairElement { left, right }
    }

    pub fn identity(q1: u64, q2: u64) -> Self {
        PairElement {
            left: SL2Residue::identity(q1),
            right: SL2Residue::identity(q2),
        }
    }

    pub fn moduli(&self) -> (u64, u64) {
        (self.left.q, self.right.q)
    }

    pub fn mul(&self, y: &PairElement) -> Result<PairElement> {
        Ok(PairElement {
            left: self.left.mul(&y.left)?,
            right: self.right.mul(&y.right)?,
        })
    }

    #[inline]
    pub fn mul_same(&self, y: &PairElement) -> PairElement {
        PairElement {
            left: self.left.mul_same(&y.left),
            right: self.right.mul_same(&y.right),
        }
    }

    pub fn inverse(&self) -> PairElement {
        PairElement {
            left: self.left.inverse(),
            right: self.right.inverse(),
        }
    }

    pub fn pow(&self, k: u64) -> PairElement {
        PairElement {
            left: self.left.pow(k),
            right: self.right.pow(k),
        }
    }

    pub fn reduce(&self, q1: u64, q2: u64) -> Result<PairElement> {
        Ok(PairElement {
            left: self.left.reduce(q1)?,
            right: self.right.reduce(q2)?,
        })
    }

    /// First projection.
    pub fn p1(&self) -> SL2Residue {
        self.left
    }

    /// Second projection.
    pub fn p2(&self) -> SL2Residue {
        self.right
    }

    pub fn is_identity(&self) -> bool {
        self.left.is_identity() && self.right.is_identity()
    }

    pub fn commutator(&self, y: &PairElement) -> Result<PairElement> {
        Ok(PairElement {
            left: self.left.commutator(&y.left)?,
            right: self.right.commutator(&y.right)?,
        })
    }
}

impl fmt::Display for PairElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({};{})", self.left, self.right)
    }
}

impl GroupElement for PairElement {
    fn op(&self, other: &Self) -> Self {
        assert_eq!(self.moduli(), other.moduli(), "modulus mismatch");
        self.mul_same(other)
    }
    fn inv(&self) -> Self {
        self.inverse()
    }
    fn identity_like(&self) -> Self {
        let (q1, q2) = self.moduli();
        PairElement::identity(q1, q2)
    }
    fn key(&self) -> String {
        self.to_string()
    }
    fn ambient(&self) -> (u64, u64) {
        self.moduli()
    }
}

/// Enumerate `SL2(Z/q1) x SL2(Z/q2)`.
pub fn enumerate_pairs(q1: &FactoredModulus, q2: &FactoredModulus, cap: u128) -> Result<Vec<PairElement>> {
    let order = q1.sl2_order() * q2.sl2_order();
    if order > cap {
        return Err(Error::CapExceeded {
            what: "pair group enumeration",
            needed: order,
            cap,
        });
    }
    let l = enumerate_group(q1, cap)?;
    let r = enumerate_group(q2, cap)?;
    Ok(l.iter()
        .flat_map(|&x| r.iter().map(move |&y| PairElement::new(x, y)))
        .collect())
}

fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let bad = || Error::invalid(format!("bad matrix entry {s:?}"));
    match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().map_err(|_| bad())?;
            let d: BigInt = d.trim().parse().map_err(|_| bad())?;
            if d.is_zero() {
                return Err(bad());
            }
            Ok(BigRational::new(n, d))
        }
        None => Ok(BigRational::from_integer(s.parse().map_err(|_| bad())?)),
    }
}

fn rational_text(x: &BigRational) -> String {
    if x.is_integer() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

fn reduce_rational(x: &BigRational, q: u64) -> Result<u64> {
    let n = reduce_bigint(x.numer(), q);
    let d = reduce_bigint(x.denom(), q);
    let dinv = mod_inv(d, q).ok_or_else(|| Error::NonInvertible {
        den: x.denom().to_string(),
        modulus: q,
    })?;
    Ok(mul_mod(n, dinv, q))
}

/// A 2x2 matrix with rational entries, used for integral (or `S`-integral)
/// group elements of determinant one.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IntMatrix2 {
    pub e: [BigRational; 4],
}

impl IntMatrix2 {
    pub fn new(e: [BigRational; 4]) -> Result<Self> {
        let m = IntMatrix2 { e };
        let det = m.det();
        if !det.is_one() {
            return Err(Error::Determinant(rational_text(&det)));
        }
        Ok(m)
    }

    pub fn from_ints(e: [BigInt; 4]) -> Self {
        IntMatrix2 {
            e: e.map(BigRational::from_integer),
        }
    }

    pub fn from_i64(a: i64, b: i64, c: i64, d: i64) -> Result<Self> {
        Self::new([a, b, c, d].map(|x| BigRational::from_integer(BigInt::from(x))))
    }

    pub fn parse(entries: [&str; 4]) -> Result<Self> {
        let mut v = Vec::with_capacity(4);
        for s in entries {
            v.push(parse_rational(s)?);
        }
        let e: [BigRational; 4] = v.try_into().expect("four entries");
        Self::new(e)
    }

    pub fn identity() -> Self {
        Self::from_ints([1, 0, 0, 1].map(BigInt::from))
    }

    pub fn det(&self) -> BigRational {
        let [a, b, c, d] = &self.e;
        a * d - b * c
    }

    pub fn trace(&self) -> BigRational {
        &self.e[0] + &self.e[3]
    }

    pub fn mul(&self, y: &IntMatrix2) -> IntMatrix2 {
        let [a, b, c, d] = &self.e;
        let [e, f, g, h] = &y.e;
        IntMatrix2 {
            e: [a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h],
        }
    }

    /// Adjugate, which is the inverse because the determinant is one.
    pub fn inverse(&self) -> IntMatrix2 {
        let [a, b, c, d] = &self.e;
        IntMatrix2 {
            e: [d.clone(), -b.clone(), -c.clone(), a.clone()],
        }
    }

    pub fn is_integral(&self) -> bool {
        self.e.iter().all(|x| x.is_integer())
    }

    /// Largest absolute value of numerators and denominators.
    pub fn height(&self) -> BigInt {
        self.e
            .iter()
            .flat_map(|x| [x.numer().abs(), x.denom().abs()])
            .max()
            .unwrap_or_else(BigInt::zero)
    }

    /// Reduce modulo `q`; rational entries `m/n` map to `m * n^-1`.
    pub fn reduce(&self, q: u64) -> Result<SL2Residue> {
        let r: Vec<u64> = self
            .e
            .iter()
            .map(|x| reduce_rational(x, q))
            .collect::<Result<_>>()?;
        SL2Residue::from_residues(q, r[0], r[1], r[2], r[3])
    }

    pub fn to_strings(&self) -> [[String; 2]; 2] {
        let t: Vec<String> = self.e.iter().map(rational_text).collect();
        [[t[0].clone(), t[1].clone()], [t[2].clone(), t[3].clone()]]
    }
}

impl fmt::Display for IntMatrix2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.to_strings();
        write!(f, "[[{},{}],[{},{}]]", t[0][0], t[0][1], t[1][0], t[1][1])
    }
}

/// An element of `SL2 x SL2` over the rationals (integral in practice).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IntPair {
    pub left: IntMatrix2,
    pub right: IntMatrix2,
}

impl IntPair {
    pub fn new(left: IntMatrix2, right: IntMatrix2) -> Self {
        IntPair { left, right }
    }

    pub fn identity() -> Self {
        IntPair::new(IntMatrix2::identity(), IntMatrix2::identity())
    }

    pub fn mul(&self, y: &IntPair) -> IntPair {
        IntPair::new(self.left.mul(&y.left), self.right.mul(&y.right))
    }

    pub fn inverse(&self) -> IntPair {
        IntPair::new(self.left.inverse(), self.right.inverse())
    }

    pub fn reduce(&self, q1: u64, q2: u64) -> Result<PairElement> {
        Ok(PairElement::new(self.left.reduce(q1)?, self.right.reduce(q2)?))
    }

    /// The eight entries in the order `(X1,Y1,Z1,W1,X2,Y2,Z2,W2)`.
    pub fn entries8(&self) -> [&BigRational; 8] {
        let (l, r) = (&self.left.e, &self.right.e);
        [&l[0], &l[1], &l[2], &l[3], &r[0], &r[1], &r[2], &r[3]]
    }
}

impl fmt::Display for IntPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({};{})", self.left, self.right)
    }
}

impl GroupElement for IntPair {
    fn op(&self, other: &Self) -> Self {
        self.mul(other)
    }
    fn inv(&self) -> Self {
        self.inverse()
    }
    fn identity_like(&self) -> Self {
        IntPair::identity()
    }
    fn key(&self) -> String {
        self.to_string()
    }
    fn ambient(&self) -> (u64, u64) {
        (0, 0)
    }
}

/// `x_h h + x_e e + x_f f` in `sl2(Z/qZ)`, i.e. the matrix `[[x_h, x_e],[x_f, -x_h]]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LieVector {
    pub q: u64,
    pub h: u64,
    pub e: u64,
    pub f: u64,
}

impl LieVector {
    pub fn new(q: u64, h: i64, e: i64, f: i64) -> Self {
        let r = |x: i64| reduce_i128(x as i128, q);
        LieVector {
            q,
            h: r(h),
            e: r(e),
            f: r(f),
        }
    }

    pub fn basis_h(q: u64) -> Self {
        Self::new(q, 1, 0, 0)
    }
    pub fn basis_e(q: u64) -> Self {
        Self::new(q, 0, 1, 0)
    }
    pub fn basis_f(q: u64) -> Self {
        Self::new(q, 0, 0, 1)
    }

    pub fn coords(&self) -> [u64; 3] {
        [self.h, self.e, self.f]
    }

    pub fn from_coords(q: u64, c: [u64; 3]) -> Self {
        LieVector {
            q,
            h: c[0] % q,
            e: c[1] % q,
            f: c[2] % q,
        }
    }

    /// Matrix entries `[a, b, c, d]`.
    pub fn to_matrix(&self) -> [u64; 4] {
        [self.h, self.e, self.f, neg_mod(self.h, self.q)]
    }

    pub fn from_matrix(q: u64, m: [u64; 4]) -> Result<Self> {
        if add_mod(m[0], m[3], q) != 0 {
            return Err(Error::precondition("matrix is not traceless"));
        }
        Ok(LieVector::from_coords(q, [m[0], m[1], m[2]]))
    }

    pub fn add(&self, o: &LieVector) -> LieVector {
        let q = self.q;
        LieVector {
            q,
            h: add_mod(self.h, o.h, q),
            e: add_mod(self.e, o.e, q),
            f: add_mod(self.f, o.f, q),
        }
    }

    pub fn scale(&self, k: u64) -> LieVector {
        let q = self.q;
        LieVector {
            q,
            h: mul_mod(self.h, k, q),
            e: mul_mod(self.e, k, q),
            f: mul_mod(self.f, k, q),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.h == 0 && self.e == 0 && self.f == 0
    }

    /// Nonzero modulo every prime dividing `q`.
    pub fn is_primitive(&self) -> bool {
        FactoredModulus::new(self.q)
            .map(|qf| qf.primes().all(|p| self.coords().iter().any(|x| x % p != 0)))
            .unwrap_or(false)
    }

    pub fn bracket(&self, o: &LieVector) -> Result<LieVector> {
        if self.q != o.q {
            return Err(Error::ModulusMismatch(self.q.to_string(), o.q.to_string()));
        }
        let q = self.q;
        let m = |x: u64, y: u64| mul_mod(x, y, q);
        // [h,e] = 2e, [h,f] = -2f, [e,f] = h
        let h = sub_mod(m(self.e, o.f), m(self.f, o.e), q);
        let e = m(2, sub_mod(m(self.h, o.e), m(self.e, o.h), q));
        let f = m(2, sub_mod(m(self.f, o.h), m(self.h, o.f), q));
        Ok(LieVector { q, h, e, f })
    }
}

impl fmt::Display for LieVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}h+{}e+{}f (mod {})", self.h, self.e, self.f, self.q)
    }
}

/// Plain 2x2 matrix product modulo `q` without a determinant check.
pub fn mat_mul_mod(x: [u64; 4], y: [u64; 4], q: u64) -> [u64; 4] {
    let m = |a: u64, b: u64| mul_mod(a, b, q);
    [
        add_mod(m(x[0], y[0]), m(x[1], y[2]), q),
        add_mod(m(x[0], y[1]), m(x[1], y[3]), q),
        add_mod(m(x[2], y[0]), m(x[3], y[2]), q),
        add_mod(m(x[2], y[1]), m(x[3], y[3]), q),
    ]
}

/// Convenience for tests and generator tables.
pub fn big(x: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(x))
}

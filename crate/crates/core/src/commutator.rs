//! Congruence machinery for `SL2`: the commutator identity, bracket spans in
//! `sl2`, congruence amplification, and a desk-scale gluing pipeline.

use std::collections::VecDeque;

use num_rational::Ratio;
use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::Serialize;

use crate::approxhom::{self, Branch, FiniteGroupTable};
use crate::error::{Error, Result};
use crate::factored::FactoredModulus;
use crate::growth::{self, GroupSet, Powers};
use crate::sl2::{
    add_mod, enumerate_congruence, mod_inv, mul_mod, sub_mod, LieVector, PairElement, SL2Residue,
};

fn ipow(p: u64, e: u32) -> u64 {
    p.pow(e)
}

#[derive(Clone, Debug, Serialize)]
pub struct CommutatorCheck {
    /// `x y x^-1 y^-1`.
    pub lhs: [u64; 4],
    /// `1 + xy - yx`.
    pub rhs: [u64; 4],
    /// `P^(m + m' + min(m, m'))`.
    pub depth_modulus: u64,
    pub verified: bool,
}

fn one_plus_xy_minus_yx(xy: [u64; 4], yx: [u64; 4], q: u64) -> [u64; 4] {
    let mut r = [0u64; 4];
    for k in 0..4 {
        r[k] = sub_mod(xy[k], yx[k], q);
    }
    r[0] = add_mod(r[0], 1 % q, q);
    r[3] = add_mod(r[3], 1 % q, q);
    r
}

/// Both sides of `xyx^-1y^-1 = 1 + xy - yx` and their agreement modulo
/// `p^(m + m' + min(m, m'))`, for `x = 1 mod p^m`, `y = 1 mod p^m'`.
pub fn commutator_congruence(x: &SL2Residue, y: &SL2Residue, p: u64, m: u32, m2: u32) -> Result<CommutatorCheck> {
    let q = x.modulus();
    if y.modulus() != q {
        return Err(Error::ModulusMismatch(q.to_string(), y.modulus().to_string()));
    }
    let depth = m + m2 + m.min(m2);
    let dm = p
        .checked_pow(depth)
        .filter(|d| q % d == 0)
        .ok_or_else(|| Error::precondition(format!("{p}^{depth} does not divide the modulus {q}")))?;
    if x.congruence_depth(p)? < m || y.congruence_depth(p)? < m2 {
        return Err(Error::precondition(format!("x or y is not congruent to 1 at the stated depths mod {p}")));
    }
    let xy = x.mul(y)?;
    let yx = y.mul(x)?;
    let lhs = xy.mul_same(&yx.inverse()).entries();
    let rhs = one_plus_xy_minus_yx(xy.entries(), yx.entries(), q);
    let verified = lhs.iter().zip(&rhs).all(|(a, b)| a % dm == b % dm);
    Ok(CommutatorCheck {
        lhs,
        rhs,
        depth_modulus: dm,
        verified,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub p: u64,
    pub modulus: u64,
    pub pairs: u64,
    pub violations: u64,
    pub first_violation: Option<([u64; 4], [u64; 4])>,
}

// x = 1 mod p^t for the largest t <= n
fn depth_small(x: [u64; 4], p: u64, n: u32) -> u32 {
    let v = |mut a: u64| {
        let mut t = 0;
        while t < n && a % p == 0 {
            a /= p;
            t += 1;
            if a == 0 {
                return n;
            }
        }
        t
    };
    let q = ipow(p, n);
    [v((x[0] + q - 1) % q), v(x[1]), v(x[2]), v((x[3] + q - 1) % q)].into_iter().min().unwrap()
}

/// The commutator identity over every pair `x, y = 1 mod p` in `SL2(Z/p^n)`,
/// each checked modulo `p^min(m + m' + min(m, m'), n)` for the exact depths.
pub fn commutator_sweep(p: u64, n: u32) -> Result<SweepResult> {
    let q = ipow(p, n);
    if q >= 1 << 16 {
        return Err(Error::CapExceeded {
            what: "commutator sweep modulus",
            needed: q as u128,
            cap: 1 << 16,
        });
    }
    let qf = FactoredModulus::prime_power(p, n)?;
    let elems: Vec<[u64; 4]> = enumerate_congruence(&qf, &FactoredModulus::prime_power(p, 1)?, 1 << 24)?
        .iter()
        .map(|x| x.entries())
        .collect();
    let depths: Vec<u32> = elems.iter().map(|&x| depth_small(x, p, n)).collect();
    let mm = |a: [u64; 4], b: [u64; 4]| {
        [
            (a[0] * b[0] + a[1] * b[2]) % q,
            (a[0] * b[1] + a[1] * b[3]) % q,
            (a[2] * b[0] + a[3] * b[2]) % q,
            (a[2] * b[1] + a[3] * b[3]) % q,
        ]
    };
    let inv = |a: [u64; 4]| [a[3], (q - a[1]) % q, (q - a[2]) % q, a[0]];
    let per_x: Vec<(u64, Option<([u64; 4], [u64; 4])>)> = elems
        .par_iter()
        .zip(depths.par_iter())
        .map(|(&x, &dx)| {
            let mut bad = 0u64;
            let mut first = None;
            for (&y, &dy) in elems.iter().zip(&depths) {
                let d = (dx + dy + dx.min(dy)).min(n);
                let dm = ipow(p, d);
                let xy = mm(x, y);
                let yx = mm(y, x);
                let lhs = mm(xy, inv(yx));
                let ok = (0..4).all(|k| {
                    let one = if k == 0 || k == 3 { 1 } else { 0 };
                    (lhs[k] + q * 2 - xy[k] + yx[k] - one) % dm == 0
                });
                if !ok {
                    bad += 1;
                    first.get_or_insert((x, y));
                }
            }
            (bad, first)
        })
        .collect();
    let violations = per_x.iter().map(|r| r.0).sum();
    let first_violation = per_x.iter().find_map(|r| r.1);
    Ok(SweepResult {
        p,
        modulus: q,
        pairs: (elems.len() * elems.len()) as u64,
        violations,
        first_violation,
    })
}

fn valuation(x: u64, p: u64, cap: u32) -> u32 {
    if x == 0 {
        return cap;
    }
    let (mut x, mut v) = (x, 0);
    while x % p == 0 && v < cap {
        x /= p;
        v += 1;
    }
    v
}

/// Solve `M x = t (mod p^n)` by elimination with minimal-valuation pivots;
/// free variables are set to zero.
pub fn solve_mod_prime_power(mat: &[Vec<u64>], rhs: &[u64], p: u64, n: u32) -> Option<Vec<u64>> {
    let q = ipow(p, n);
    let rows = mat.len();
    let cols = mat.first().map_or(0, |r| r.len());
    let mut a: Vec<Vec<u64>> = mat.iter().map(|r| r.iter().map(|x| x % q).collect()).collect();
    let mut b: Vec<u64> = rhs.iter().map(|x| x % q).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    let mut pivots: Vec<(usize, u32)> = Vec::new();
    for k in 0..rows.min(cols) {
        let mut best: Option<(u32, usize, usize)> = None;
        for (i, row) in a.iter().enumerate().skip(k) {
            for (jj, &j) in order.iter().enumerate().skip(k) {
                let v = valuation(row[j], p, n);
                if v < n && best.map_or(true, |(bv, _, _)| v < bv) {
                    best = Some((v, i, jj));
                }
            }
        }
        let Some((s, i, jj)) = best else { break };
        a.swap(k, i);
        b.swap(k, i);
        order.swap(k, jj);
        let c = order[k];
        let ps = ipow(p, s);
        let u_inv = mod_inv((a[k][c] / ps) % q, q)?;
        for i in k + 1..rows {
            if a[i][c] == 0 {
                continue;
            }
            let factor = mul_mod(a[i][c] / ps, u_inv, q);
            for j in 0..cols {
                let t = mul_mod(factor, a[k][j], q);
                a[i][j] = sub_mod(a[i][j], t, q);
            }
            b[i] = sub_mod(b[i], mul_mod(factor, b[k], q), q);
        }
        pivots.push((c, s));
    }
    if b.iter().skip(pivots.len()).any(|&x| x != 0) {
        return None;
    }
    let mut x = vec![0u64; cols];
    for k in (0..pivots.len()).rev() {
        let (c, s) = pivots[k];
        let mut val = b[k];
        for j in 0..cols {
            if j != c {
                val = sub_mod(val, mul_mod(a[k][j], x[j], q), q);
            }
        }
        let ps = ipow(p, s);
        if val % ps != 0 {
            return None;
        }
        let u_inv = mod_inv((a[k][c] / ps) % q, q)?;
        x[c] = mul_mod(val / ps, u_inv, q);
    }
    Some(x)
}

#[derive(Clone, Debug, Serialize)]
pub struct SpanCertificate {
    /// `"2h"`, `"2e"` or `"2f"`.
    pub target: String,
    pub a: LieVector,
    pub b: LieVector,
}

#[derive(Clone, Debug, Serialize)]
pub struct BracketSpan {
    pub q: u64,
    pub covers: bool,
    pub certificates: Vec<SpanCertificate>,
    /// Target with no solution, if any.
    pub failed_target: Option<String>,
}

fn targets(q: u64) -> [(&'static str, LieVector); 3] {
    [
        ("2h", LieVector::basis_h(q).scale(2)),
        ("2e", LieVector::basis_e(q).scale(2)),
        ("2f", LieVector::basis_f(q).scale(2)),
    ]
}

/// Whether `[v, a] + [w, b] = target` holds.
pub fn check_span_certificate(v: &LieVector, w: &LieVector, c: &SpanCertificate) -> Result<bool> {
    let want = targets(v.q)
        .into_iter()
        .find(|(n, _)| *n == c.target)
        .ok_or_else(|| Error::invalid(format!("unknown target {}", c.target)))?
        .1;
    Ok(v.bracket(&c.a)?.add(&w.bracket(&c.b)?) == want)
}

/// Solve `[v, a] + [w, b] = 2t` for each basis vector `t`, prime power by
/// prime power, and join by CRT. Certificates are substituted back.
pub fn bracket_span_cover(v: &LieVector, w: &LieVector) -> Result<BracketSpan> {
    let q = v.q;
    if w.q != q {
        return Err(Error::ModulusMismatch(q.to_string(), w.q.to_string()));
    }
    if !v.is_primitive() || !w.is_primitive() {
        return Err(Error::precondition("v and w must be primitive"));
    }
    let qf = FactoredModulus::new(q)?;
    for p in qf.primes() {
        let (x, y) = (v.coords().map(|c| c % p), w.coords().map(|c| c % p));
        let cross = [
            (x[1] * y[2] + p * p - x[2] * y[1] % p) % p,
            (x[2] * y[0] + p * p - x[0] * y[2] % p) % p,
            (x[0] * y[1] + p * p - x[1] * y[0] % p) % p,
        ];
        if cross.iter().all(|&c| c == 0) {
            return Err(Error::Dependent { prime: p });
        }
    }
    let basis = [LieVector::basis_h(q), LieVector::basis_e(q), LieVector::basis_f(q)];
    let mut columns = Vec::new();
    for u in [v, w] {
        for bvec in &basis {
            columns.push(u.bracket(bvec)?.coords());
        }
    }
    let mat: Vec<Vec<u64>> = (0..3).map(|r| columns.iter().map(|c| c[r]).collect()).collect();
    let mut certificates = Vec::new();
    for (name, t) in targets(q) {
        let mut parts: Vec<(Vec<u64>, u64)> = Vec::new();
        for &(p, e) in qf.factors() {
            match solve_mod_prime_power(&mat, &t.coords(), p, e) {
                Some(x) => parts.push((x, ipow(p, e))),
                None => {
                    return Ok(BracketSpan {
                        q,
                        covers: false,
                        certificates,
                        failed_target: Some(name.to_string()),
                    })
                }
            }
        }
        let coord = |k: usize| {
            if parts.is_empty() {
                0
            } else {
                crate::sl2::crt(&parts.iter().map(|(x, m)| (x[k] % m, *m)).collect::<Vec<_>>())
            }
        };
        let cert = SpanCertificate {
            target: name.to_string(),
            a: LieVector::from_coords(q, [coord(0), coord(1), coord(2)]),
            b: LieVector::from_coords(q, [coord(3), coord(4), coord(5)]),
        };
        if !check_span_certificate(v, w, &cert)? {
            return Err(Error::Construction(format!("span certificate for {name} fails substitution")));
        }
        certificates.push(cert);
    }
    Ok(BracketSpan {
        q,
        covers: true,
        certificates,
        failed_target: None,
    })
}

/// The set `1 + Q5 V (mod Q6)`, that is `Lambda(Q5)/Lambda(Q6)`, for `Q5 | Q6`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CongruenceBox {
    pub depth: FactoredModulus,
    pub window: FactoredModulus,
}

impl CongruenceBox {
    pub fn new(depth: FactoredModulus, window: FactoredModulus) -> Result<Self> {
        if !depth.divides(&window) {
            return Err(Error::NotDivisor(depth.value(), window.value()));
        }
        Ok(CongruenceBox { depth, window })
    }

    pub fn from_values(depth: u64, window: u64) -> Result<Self> {
        Self::new(FactoredModulus::new(depth)?, FactoredModulus::new(window)?)
    }

    /// `(p, m, M)` with `p^m || Q5`, `p^M || Q6`.
    pub fn windows(&self) -> Vec<(u64, u32, u32)> {
        self.window
            .factors()
            .iter()
            .map(|&(p, e)| (p, self.depth.exponent_of(p), e))
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PrimeCheck {
    pub p: u64,
    pub m1: u32,
    pub m2: u32,
    pub n1: u32,
    pub n2: u32,
    /// Smallest `k <= 4` with the target inside `(H1 H2)^k` for canonical lifts.
    pub canonical_k: Option<usize>,
    /// Same with `H1, H2` replaced by `H ∪ H^-1`, tried only if canonical fails.
    pub symmetric_k: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Amplified {
    pub result: CongruenceBox,
    pub checks: Vec<PrimeCheck>,
    /// Every checked prime verified (None when nothing was checked).
    pub verified: Option<bool>,
}

/// Lifts `[[1 + p^m h, p^m e], [p^m f, d]]` of `1 + p^m X` for `X` modulo
/// `p^(w - m)`, as elements of `SL2(Z/p^top)`.
pub fn canonical_lifts(p: u64, m: u32, w: u32, top: u32) -> Result<Vec<SL2Residue>> {
    let q = ipow(p, top);
    let r = ipow(p, w - m);
    let pm = ipow(p, m);
    let mut out = Vec::with_capacity((r * r * r) as usize);
    for h in 0..r {
        for e in 0..r {
            for f in 0..r {
                let a = (1 + pm * h) % q;
                let b = pm * e % q;
                let c = pm * f % q;
                let inv = mod_inv(a, q).ok_or_else(|| Error::invalid("lift is not invertible"))?;
                let d = mul_mod(add_mod(1, mul_mod(b, c, q), q), inv, q);
                out.push(SL2Residue::from_residues(q, a, b, c, d)?);
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn power_contains(h1: &[SL2Residue], h2: &[SL2Residue], target: &[SL2Residue], q: u64, cap: usize) -> Result<Option<usize>> {
    let mut x: Vec<SL2Residue> = h1.iter().flat_map(|a| h2.iter().map(move |b| a.mul_same(b))).collect();
    x.sort_unstable();
    x.dedup();
    let limit = FactoredModulus::new(q)?.sl2_order();
    let mut pw = Powers::new(x, limit, cap);
    loop {
        let cur = pw.current();
        if target.iter().all(|t| cur.binary_search(t).is_ok()) {
            return Ok(Some(pw.k()));
        }
        if pw.k() >= 4 {
            return Ok(None);
        }
        pw.step()?;
    }
}

fn symmetrize(h: &[SL2Residue]) -> Vec<SL2Residue> {
    let mut v: Vec<SL2Residue> = h.iter().copied().chain(h.iter().map(|x| x.inverse())).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// `1 + p^(m1+n1) V (mod p^(m2+n2))` from windows `(m1, m2)` and `(n1, n2)`
/// at each prime, with an exhaustive check of `(H1 H2)^4` for canonical lift
/// sets whenever `p^(m2+n2) <= verify_max`.
pub fn amplify(h1: &CongruenceBox, h2: &CongruenceBox, verify_max: u64) -> Result<Amplified> {
    let w1 = h1.windows();
    let w2 = h2.windows();
    let primes1: Vec<u64> = w1.iter().map(|w| w.0).collect();
    let primes2: Vec<u64> = w2.iter().map(|w| w.0).collect();
    if primes1 != primes2 {
        return Err(Error::precondition("boxes must live on the same primes"));
    }
    let mut depth = Vec::new();
    let mut window = Vec::new();
    let mut checks = Vec::new();
    for (&(p, m1, m2), &(_, n1, n2)) in w1.iter().zip(&w2) {
        if !(1 <= m1 && m1 <= m2 && m2 <= 2 * m1 && 1 <= n1 && n1 <= n2 && n2 <= 2 * n1) {
            return Err(Error::precondition(format!(
                "window violation at {p}: need 1 <= m1 <= m2 <= 2 m1 and 1 <= n1 <= n2 <= 2 n1, got ({m1},{m2}), ({n1},{n2})"
            )));
        }
        let top = m2 + n2;
        // a trivial window carries no hypothesis, so nothing is gained at p
        let degenerate = m1 == m2 || n1 == n2;
        depth.push((p, if degenerate { top } else { m1 + n1 }));
        window.push((p, top));
        let q = p.checked_pow(top).unwrap_or(u64::MAX);
        let mut check = PrimeCheck {
            p,
            m1,
            m2,
            n1,
            n2,
            canonical_k: None,
            symmetric_k: None,
        };
        if q <= verify_max {
            let a = canonical_lifts(p, m1, m2, top)?;
            let b = canonical_lifts(p, n1, n2, top)?;
            let target = enumerate_congruence(
                &FactoredModulus::prime_power(p, top)?,
                &FactoredModulus::prime_power(p, if degenerate { top } else { m1 + n1 })?,
                1 << 24,
            )?;
            let cap = growth::DEFAULT_SET_CAP;
            check.canonical_k = power_contains(&a, &b, &target, q, cap)?;
            if check.canonical_k.is_none() {
                check.symmetric_k = power_contains(&symmetrize(&a), &symmetrize(&b), &target, q, cap)?;
            }
            checks.push(check);
        }
    }
    let verified = if checks.is_empty() {
        None
    } else {
        Some(checks.iter().all(|c| c.canonical_k.is_some() || c.symmetric_k.is_some()))
    };
    Ok(Amplified {
        result: CongruenceBox::new(FactoredModulus::from_factors(&depth)?, FactoredModulus::from_factors(&window)?)?,
        checks,
        verified,
    })
}

/// A section `x -> psi(x)` of the reduction from `B^k` onto a congruence box.
#[derive(Clone, Debug, Serialize)]
pub struct Section {
    pub q1: u64,
    pub q2: u64,
    pub q1p: u64,
    pub q2p: u64,
    pub k: usize,
    /// Box elements modulo `(q1, q2)`, sorted.
    pub domain: Vec<PairElement>,
    /// Chosen preimages, at the moduli of `B`.
    pub image: Vec<PairElement>,
}

impl Section {
    pub fn apply(&self, x: &PairElement) -> Option<PairElement> {
        self.domain.binary_search(x).ok().map(|i| self.image[i])
    }

    /// `reduce(psi(x)) = x` for every `x`, and every image in `bk`.
    pub fn verify(&self, bk: &GroupSet) -> Result<bool> {
        for (x, y) in self.domain.iter().zip(&self.image) {
            if y.reduce(self.q1, self.q2)? != *x || !bk.contains(y) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Find `k` with `pi(B^k)` containing a congruence box and pick the smallest
/// preimage in `B^k` of each box element.
pub fn connecting_map(b: &GroupSet, q1: u64, q2: u64, k_max: usize, cap: usize) -> Result<Section> {
    let (bq1, bq2) = b.moduli();
    if q1 == 0 || bq1 % q1 != 0 || q2 == 0 || bq2 % q2 != 0 {
        return Err(Error::precondition(format!("({q1},{q2}) must divide ({bq1},{bq2})")));
    }
    let proj = b.reduce(q1, q2)?;
    let bg = growth::bounded_generation_search(&proj, k_max, None, cap)?;
    let (k, q1p, q2p) = bg
        .found
        .ok_or_else(|| Error::Construction(format!("no power up to {k_max} covers a congruence box")))?;
    section_at(b, q1, q2, k, q1p, q2p, cap)
}

fn section_at(b: &GroupSet, q1: u64, q2: u64, k: usize, q1p: u64, q2p: u64, cap: usize) -> Result<Section> {
    let bk = growth::power_set(b, k, cap)?;
    let domain = growth::congruence_box(
        &FactoredModulus::new(q1)?,
        &FactoredModulus::new(q2)?,
        &FactoredModulus::new(q1p)?,
        &FactoredModulus::new(q2p)?,
        cap,
    )?;
    let mut first: FxHashMap<PairElement, PairElement> = FxHashMap::default();
    for y in bk.elements() {
        first.entry(y.reduce(q1, q2)?).or_insert(*y);
    }
    let image = domain
        .iter()
        .map(|x| first.get(x).copied().ok_or_else(|| Error::Construction(format!("no preimage of {x}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(Section {
        q1,
        q2,
        q1p,
        q2p,
        k,
        domain,
        image,
    })
}

fn ratio_str<S: serde::Serializer>(r: &Ratio<u64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

/// Parameters of the gluing experiment.
#[derive(Clone, Debug, Serialize)]
pub struct GluingConfig {
    pub q1: u64,
    pub q2: u64,
    pub q3: u64,
    pub theta: f64,
    /// Defect fraction separating the two scenarios.
    #[serde(serialize_with = "ratio_str")]
    pub defect_threshold: Ratio<u64>,
    /// Required density of the agreement set in the structured scenario.
    pub structured_density: f64,
    pub k_max: usize,
    pub cap: usize,
}

impl GluingConfig {
    pub fn new(q1: u64, q2: u64, q3: u64, theta: f64) -> Self {
        GluingConfig {
            q1,
            q2,
            q3,
            theta,
            defect_threshold: Ratio::new(1, 10_000),
            structured_density: 0.99,
            k_max: 6,
            cap: growth::DEFAULT_SET_CAP,
        }
    }

    fn validate(&self) -> Result<()> {
        if num_integer::gcd(self.q1, self.q3) != 1 {
            return Err(Error::precondition(format!("gcd(q1, q3) = gcd({}, {}) must be 1", self.q1, self.q3)));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::precondition(format!("theta must lie in (0, 1), got {}", self.theta)));
        }
        if self.theta > 1e-12 {
            log::warn!("glue: theta = {} is above the asymptotic range, desk run only", self.theta);
        }
        Ok(())
    }

    /// `(q1 q3, q2)`, the moduli of `A` and `B`.
    pub fn moduli(&self) -> (u64, u64) {
        (self.q1 * self.q3, self.q2)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    /// `pi(B)^k` on `side` contains `Lambda(q1p)/Lambda(.) x Lambda(q2p)/Lambda(.)`.
    BoundedGeneration { side: String, k: usize, q1p: u64, q2p: u64 },
    /// The section is a right inverse of reduction with values in `B^k`.
    Section { k: usize, q1p: u64, q2p: u64, size: usize },
    /// `psi_j(xy) != psi_j(x) psi_j(y)` at `depth_modulus`, and the defect
    /// element `psi(x) psi(y) psi(xy)^-1` is trivial modulo `(q1, q2)`.
    Defect { prime: u64, depth_modulus: u64, x: usize, y: usize },
    /// `h` (a table on the section domain) is a homomorphism agreeing with
    /// `psi_j` on `agree` points.
    Homomorphism { prime: u64, depth_modulus: u64, agree: usize, h: Vec<u32> },
    /// The kernel of `(q1, q2)`-reduction in the ball of radius `k` maps onto
    /// a set containing `Lambda(level)/Lambda(q3_star)`.
    KernelBox { k: usize, q3_star: u64, level: u64 },
    /// `|pi_(q1 q3*, q2)(ball_k)| = size`.
    ProductSize { k: usize, q3_star: u64, size: usize },
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateRecord {
    pub certificate: Certificate,
    pub replayed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PrimeRow {
    pub p: u64,
    pub n: u32,
    pub depth_modulus: u64,
    /// `DEFECT`, `STRUCTURED` or `UNRESOLVED`.
    pub scenario: String,
    pub agreement: String,
    /// Whether `h_j` is trivial at half depth (structured rows only).
    pub half_depth_trivial: Option<bool>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstructionRow {
    pub k: usize,
    pub ball_size: usize,
    pub kernel_size: usize,
    pub q3_star: u64,
    pub level: u64,
    pub box_order: u128,
    pub product_size: usize,
    /// `log |pi(ball)| / log(q1 q2 q3*)`.
    pub exponent: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GluingReport {
    pub config: GluingConfig,
    pub with_a: bool,
    pub b12_size: usize,
    pub b12_hypothesis: bool,
    pub b3_size: usize,
    pub b3_hypothesis: bool,
    pub bounded_generation: Option<(usize, u64, u64)>,
    pub q3_prime: Option<u64>,
    pub section_size: usize,
    pub q4: u64,
    pub primes: Vec<PrimeRow>,
    pub q4_defect: u64,
    pub q4_structured: u64,
    pub q5: u64,
    pub q5_prime: u64,
    /// `defect`, `structured_trivial`, `structured_nontrivial` or `none`.
    pub case: String,
    pub construction: Vec<ConstructionRow>,
    pub achieved_q3_star: u64,
    pub achieved_level: u64,
    /// `|pi_(q1 q3*, q2)(ball)| / |SL2(q1 q3*) x SL2(q2)|` at the last radius.
    pub density: f64,
    /// A nontrivial congruence box was produced in the kernel.
    pub expansion: bool,
    /// Whether the ball stopped growing before `k_max`.
    pub stalled: bool,
    pub target_exponent: f64,
    pub incomplete: Vec<String>,
    pub certificates: Vec<CertificateRecord>,
    pub all_replayed: bool,
}

fn unit_ball_generators(a: Option<&GroupSet>, b: &GroupSet) -> Result<Vec<PairElement>> {
    let (q1, q2) = b.moduli();
    let mut s = b.union(&GroupSet::identity(q1, q2))?;
    if let Some(a) = a {
        s = s.union(a)?;
    }
    Ok(s.elements().to_vec())
}

// best box Lambda(level)/Lambda(q3*) inside the projection of `kernel`:
// largest order, ties to the larger q3*
fn best_kernel_box(kernel: &[SL2Residue], q3: &FactoredModulus, cap: usize) -> Result<(u64, u64, u128)> {
    let mut best = (1u64, 1u64, 1u128);
    for qs in q3.exact_divisors() {
        let proj: FxHashSet<SL2Residue> = kernel.iter().map(|x| x.reduce(qs.value())).collect::<Result<_>>()?;
        for lvl in qs.divisors() {
            let order = qs.congruence_kernel_order(&lvl)?;
            if order < best.2 || (order == best.2 && qs.value() <= best.0) || order > proj.len() as u128 {
                continue;
            }
            let members = enumerate_congruence(&qs, &lvl, cap as u128)?;
            if members.iter().all(|m| proj.contains(m)) {
                best = (qs.value(), lvl.value(), order);
            }
        }
    }
    Ok(best)
}

/// Desk-scale gluing experiment on `B` (and optionally `A`) at moduli
/// `(q1 q3, q2)`; see the crate README for the stages. Every certificate is
/// replayed before the report is returned.
pub fn glue_pipeline(a: Option<&GroupSet>, b: &GroupSet, config: &GluingConfig) -> Result<GluingReport> {
    config.validate()?;
    let (m1, m2) = config.moduli();
    if b.moduli() != (m1, m2) || a.is_some_and(|a| a.moduli() != (m1, m2)) {
        return Err(Error::ModulusMismatch(format!("({m1},{m2})"), format!("{:?}", b.moduli())));
    }
    let (q1, q2, q3) = (config.q1, config.q2, config.q3);
    let q3f = FactoredModulus::new(q3)?;
    let th = config.theta;
    let cap = config.cap;
    let mut certs: Vec<Certificate> = Vec::new();
    let mut incomplete = Vec::new();

    let b12 = b.reduce(q1, q2)?;
    let b3 = b.reduce(q3, 1)?;
    let b12_hypothesis = b12.len() as f64 > ((q1 * q2) as f64).powf(3.0 - th);
    let b3_hypothesis = b3.len() as f64 > (q3 as f64).powf(3.0 - th);

    let bg12 = growth::bounded_generation_search(&b12, config.k_max, None, cap)?.found;
    let bg3 = growth::bounded_generation_search(&b3, config.k_max, None, cap)?.found;
    if let Some((k, x, y)) = bg12 {
        certs.push(Certificate::BoundedGeneration {
            side: "q1q2".into(),
            k,
            q1p: x,
            q2p: y,
        });
    } else {
        incomplete.push("bounded generation on (q1, q2)".into());
    }
    if let Some((k, x, y)) = bg3 {
        certs.push(Certificate::BoundedGeneration {
            side: "q3".into(),
            k,
            q1p: x,
            q2p: y,
        });
    }
    let q3_prime = bg3.map(|t| t.1);

    // connecting map and per-prime classification
    let mut section = None;
    if let Some((k, x, y)) = bg12 {
        match section_at(b, q1, q2, k, x, y, cap) {
            Ok(s) => {
                certs.push(Certificate::Section {
                    k,
                    q1p: x,
                    q2p: y,
                    size: s.domain.len(),
                });
                section = Some(s);
            }
            Err(e) => incomplete.push(format!("section: {e}")),
        }
    }
    let q3p = q3_prime.unwrap_or(q3);
    let q4 = q3f.restrict(|p| {
        let n = q3f.exponent_of(p);
        let e = ((40.0 * th.sqrt() * n as f64).floor() as u32).max(1);
        q3p % p.pow(e.min(n)) != 0 || e > n
    });
    let mut primes = Vec::new();
    let (mut q4d, mut q4s, mut q5, mut q5p) = (1u64, 1u64, 1u64, 1u64);
    if let Some(s) = &section {
        if s.domain.len() > approxhom::EXACT_AGREEMENT_MAX {
            incomplete.push(format!("section domain {} too large for exact agreement", s.domain.len()));
        } else {
            let gtab = FiniteGroupTable::from_elements(&s.domain)?;
            for &(p, n) in q4.factors() {
                let t = ((n as f64 * th.powf(0.25)).floor() as u32).clamp(1, n);
                let half = ((n as f64 * th.powf(0.25) / 2.0).floor() as u32).clamp(1, t);
                let dm = p.pow(t);
                let target = crate::sl2::enumerate_group(&FactoredModulus::prime_power(p, t)?, cap as u128)?;
                let ttab = FiniteGroupTable::from_elements(&target)?;
                let psi = psi_j(s, m1, dm, &target)?;
                let res = approxhom::dichotomy(&psi, &gtab, &ttab, config.defect_threshold, true)?;
                let mut row = PrimeRow {
                    p,
                    n,
                    depth_modulus: dm,
                    scenario: String::new(),
                    agreement: res.agreement.clone(),
                    half_depth_trivial: None,
                    note: None,
                };
                let pn = p.pow(n);
                match res.branch {
                    Branch::Defect => {
                        row.scenario = "DEFECT".into();
                        q4d *= pn;
                        let (x, y) = res.witness.expect("defect branch carries a witness");
                        certs.push(Certificate::Defect {
                            prime: p,
                            depth_modulus: dm,
                            x: x as usize,
                            y: y as usize,
                        });
                    }
                    Branch::Structured if res.s.len() as f64 >= config.structured_density * s.domain.len() as f64 => {
                        row.scenario = "STRUCTURED".into();
                        q4s *= pn;
                        let hd = p.pow(half);
                        let trivial = res.f.iter().all(|&i| target[i as usize].reduce(hd).map_or(false, |g| g.is_identity()));
                        row.half_depth_trivial = Some(trivial);
                        if trivial {
                            q5 *= pn;
                        } else {
                            q5p *= pn;
                        }
                        certs.push(Certificate::Homomorphism {
                            prime: p,
                            depth_modulus: dm,
                            agree: res.s.len(),
                            h: res.f.clone(),
                        });
                    }
                    _ => {
                        row.scenario = "UNRESOLVED".into();
                        row.note = res.failure.clone().or(Some("agreement set below density".into()));
                        incomplete.push(format!("classification at {p}"));
                    }
                }
                primes.push(row);
            }
        }
    }
    let sq = |x: u64| (x as f64).sqrt();
    let case = if q4d as f64 > sq(q4.value()) {
        "defect"
    } else if q4s as f64 > sq(q4.value()) && q5 as f64 > sq(q4s) {
        "structured_trivial"
    } else if q4s as f64 > sq(q4.value()) && q5p as f64 > sq(q4s) {
        "structured_nontrivial"
    } else {
        "none"
    };

    // construction: balls of (B ∪ A ∪ {1}) and their (q1, q2)-kernels
    let gens = unit_ball_generators(a, b)?;
    let limit = {
        let o = |q: u64| FactoredModulus::new(q).map(|f| f.sl2_order()).unwrap_or(0);
        o(m1) * o(m2)
    };
    let mut pw = Powers::new(gens, limit, cap);
    let mut construction = Vec::new();
    let mut best = (1u64, 1u64, 1u128);
    let mut stalled = false;
    let mut prev_len = 0usize;
    loop {
        let ball = pw.current();
        let kernel: Vec<SL2Residue> = ball
            .iter()
            .filter(|w| w.reduce(q1, q2).map_or(false, |r| r.is_identity()))
            .map(|w| w.left.reduce(q3))
            .collect::<Result<_>>()?;
        let (qs, lvl, order) = best_kernel_box(&kernel, &q3f, cap)?;
        let size = ball
            .iter()
            .map(|w| w.reduce(q1 * qs, q2))
            .collect::<Result<FxHashSet<_>>>()?
            .len();
        let base = (q1 * q2 * qs) as f64;
        construction.push(ConstructionRow {
            k: pw.k(),
            ball_size: ball.len(),
            kernel_size: kernel.len(),
            q3_star: qs,
            level: lvl,
            box_order: order,
            product_size: size,
            exponent: if base > 1.0 { (size as f64).ln() / base.ln() } else { f64::NAN },
        });
        if order > best.2 {
            best = (qs, lvl, order);
            certs.push(Certificate::KernelBox {
                k: pw.k(),
                q3_star: qs,
                level: lvl,
            });
            certs.push(Certificate::ProductSize {
                k: pw.k(),
                q3_star: qs,
                size,
            });
        }
        if ball.len() == prev_len {
            stalled = true;
            break;
        }
        if pw.k() >= config.k_max || (best.0 == q3 && best.1 == 1) {
            break;
        }
        prev_len = ball.len();
        pw.step()?;
    }
    let last = construction.last().expect("at least one radius");
    let order_at = |q: u64| FactoredModulus::new(q).map(|f| f.sl2_order()).unwrap_or(1);
    let density = last.product_size as f64 / (order_at(q1 * best.0) * order_at(q2)) as f64;

    let ctx = ReplayContext { a, b, config, section: section.as_ref() };
    let certificates: Vec<CertificateRecord> = certs
        .into_iter()
        .map(|c| {
            let replayed = replay(&c, &ctx).unwrap_or(false);
            CertificateRecord { certificate: c, replayed }
        })
        .collect();
    let all_replayed = certificates.iter().all(|c| c.replayed);
    Ok(GluingReport {
        config: config.clone(),
        with_a: a.is_some(),
        b12_size: b12.len(),
        b12_hypothesis,
        b3_size: b3.len(),
        b3_hypothesis,
        bounded_generation: bg12,
        q3_prime,
        section_size: section.as_ref().map_or(0, |s| s.domain.len()),
        q4: q4.value(),
        primes,
        q4_defect: q4d,
        q4_structured: q4s,
        q5,
        q5_prime: q5p,
        case: case.into(),
        construction,
        achieved_q3_star: best.0,
        achieved_level: best.1,
        density,
        expansion: best.2 > 1,
        stalled,
        target_exponent: 3.0 - 300.0 * th.powf(0.25),
        incomplete,
        certificates,
        all_replayed,
    })
}

// psi_j as indices into the sorted list `target` of SL2(Z/dm)
fn psi_j(s: &Section, m1: u64, dm: u64, target: &[SL2Residue]) -> Result<Vec<u32>> {
    debug_assert_eq!(s.image.first().map(|x| x.left.modulus()), Some(m1));
    s.image
        .iter()
        .map(|y| {
            let r = y.left.reduce(dm)?;
            target
                .binary_search(&r)
                .map(|i| i as u32)
                .map_err(|_| Error::Construction(format!("{r} missing from SL2(Z/{dm})")))
        })
        .collect()
}

/// Inputs needed to re-check certificates from scratch.
pub struct ReplayContext<'a> {
    pub a: Option<&'a GroupSet>,
    pub b: &'a GroupSet,
    pub config: &'a GluingConfig,
    pub section: Option<&'a Section>,
}

// ball of radius k around the identity for generators `s`, by plain BFS
fn bfs_ball(s: &[PairElement], k: usize) -> Vec<PairElement> {
    let Some(first) = s.first() else { return Vec::new() };
    let id = {
        let (a, b) = first.moduli();
        PairElement::identity(a, b)
    };
    let mut seen: FxHashSet<PairElement> = FxHashSet::default();
    seen.insert(id);
    let mut layer = VecDeque::from([id]);
    for _ in 0..k {
        let mut next = VecDeque::new();
        while let Some(x) = layer.pop_front() {
            for g in s {
                let y = x.mul_same(g);
                if seen.insert(y) {
                    next.push_back(y);
                }
            }
        }
        layer = next;
    }
    let mut v: Vec<_> = seen.into_iter().collect();
    v.sort_unstable();
    v
}

// B^k by left-to-right products of exactly k factors
fn exact_power(b: &[PairElement], k: usize) -> Vec<PairElement> {
    let mut cur: FxHashSet<PairElement> = b.iter().copied().collect();
    for _ in 1..k {
        cur = cur.iter().flat_map(|x| b.iter().map(move |y| x.mul_same(y))).collect();
    }
    let mut v: Vec<_> = cur.into_iter().collect();
    v.sort_unstable();
    v
}

fn all_in_box(set: &FxHashSet<PairElement>, q1: u64, q2: u64, l1: u64, l2: u64, cap: usize) -> Result<bool> {
    let bx = growth::congruence_box(
        &FactoredModulus::new(q1)?,
        &FactoredModulus::new(q2)?,
        &FactoredModulus::new(l1)?,
        &FactoredModulus::new(l2)?,
        cap,
    )?;
    Ok(bx.iter().all(|x| set.contains(x)))
}

/// Re-derive a certificate's claim with code independent of the pipeline.
pub fn replay(c: &Certificate, ctx: &ReplayContext<'_>) -> Result<bool> {
    let cfg = ctx.config;
    let (q1, q2, q3) = (cfg.q1, cfg.q2, cfg.q3);
    match c {
        Certificate::BoundedGeneration { side, k, q1p, q2p } => {
            let (r1, r2) = if side == "q3" { (q3, 1) } else { (q1, q2) };
            let proj: Vec<PairElement> = exact_power(ctx.b.elements(), *k)
                .iter()
                .map(|x| x.reduce(r1, r2))
                .collect::<Result<_>>()?;
            let set: FxHashSet<_> = proj.into_iter().collect();
            all_in_box(&set, r1, r2, *q1p, *q2p, cfg.cap)
        }
        Certificate::Section { k, q1p, q2p, size } => {
            let Some(s) = ctx.section else { return Ok(false) };
            let bk: FxHashSet<_> = exact_power(ctx.b.elements(), *k).into_iter().collect();
            let bx = growth::congruence_box(
                &FactoredModulus::new(q1)?,
                &FactoredModulus::new(q2)?,
                &FactoredModulus::new(*q1p)?,
                &FactoredModulus::new(*q2p)?,
                cfg.cap,
            )?;
            Ok(bx.len() == *size
                && bx.iter().all(|x| {
                    s.apply(x)
                        .is_some_and(|y| bk.contains(&y) && y.reduce(q1, q2).is_ok_and(|r| r == *x))
                }))
        }
        Certificate::Defect { depth_modulus, x, y, .. } => {
            let Some(s) = ctx.section else { return Ok(false) };
            let (gx, gy) = (s.domain[*x], s.domain[*y]);
            let gxy = gx.mul(&gy)?;
            let (px, py, pxy) = (s.image[*x], s.apply(&gy).unwrap(), s.apply(&gxy).unwrap());
            let red = |g: &PairElement| g.left.reduce(*depth_modulus);
            let differs = red(&pxy)? != red(&px)?.mul(&red(&py)?)?;
            let gamma0 = px.mul(&py)?.mul(&pxy.inverse())?;
            Ok(differs && gamma0.reduce(q1, q2)?.is_identity() && !red(&gamma0)?.is_identity())
        }
        Certificate::Homomorphism { depth_modulus, agree, h, .. } => {
            let Some(s) = ctx.section else { return Ok(false) };
            let (p, t) = {
                let f = FactoredModulus::new(*depth_modulus)?;
                f.factors()[0]
            };
            let target = crate::sl2::enumerate_group(&FactoredModulus::prime_power(p, t)?, cfg.cap as u128)?;
            let hv = |i: usize| target[h[i] as usize];
            let n = s.domain.len();
            let index: FxHashMap<PairElement, usize> = s.domain.iter().enumerate().map(|(i, x)| (*x, i)).collect();
            for i in 0..n {
                for j in 0..n {
                    let k = index[&s.domain[i].mul(&s.domain[j])?];
                    if hv(k) != hv(i).mul(&hv(j))? {
                        return Ok(false);
                    }
                }
            }
            let mut hits = 0;
            for i in 0..n {
                if s.image[i].left.reduce(*depth_modulus)? == hv(i) {
                    hits += 1;
                }
            }
            Ok(hits >= *agree)
        }
        Certificate::KernelBox { k, q3_star, level } => {
            let gens = unit_ball_generators(ctx.a, ctx.b)?;
            let ball = bfs_ball(&gens, *k);
            let mut proj: FxHashSet<PairElement> = FxHashSet::default();
            for w in &ball {
                if w.reduce(q1, q2)?.is_identity() {
                    proj.insert(PairElement::new(w.left.reduce(*q3_star)?, SL2Residue::identity(1)));
                }
            }
            all_in_box(&proj, *q3_star, 1, *level, 1, cfg.cap)
        }
        Certificate::ProductSize { k, q3_star, size } => {
            let gens = unit_ball_generators(ctx.a, ctx.b)?;
            let ball = bfs_ball(&gens, *k);
            let proj: FxHashSet<PairElement> = ball.iter().map(|w| w.reduce(q1 * q3_star, q2)).collect::<Result<_>>()?;
            Ok(proj.len() == *size)
        }
    }
}

/// `{(g, g)}` for every `g` in `SL2(Z/q)`, at moduli `(q, q)`.
pub fn diagonal_set(q: u64, cap: usize) -> Result<GroupSet> {
    let g = crate::sl2::enumerate_group(&FactoredModulus::new(q)?, cap as u128)?;
    GroupSet::new(q, q, g.into_iter().map(|x| PairElement::new(x, x)).collect())
}

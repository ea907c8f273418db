//! Approximate homomorphisms between finite groups given by tables, small
//! doubling subgroups and degree pruning of product graphs.

use std::collections::VecDeque;

use num_rational::Ratio;
use rand::Rng;
use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::rng;
use crate::sl2::GroupElement;

/// Largest `|G1|` for which agreement is counted over all pairs.
pub const EXACT_AGREEMENT_MAX: usize = 4096;
/// Largest group for exhaustive subgroup enumeration.
pub const SUBGROUP_SEARCH_MAX: usize = 512;
/// Default cap on the number of subgroups enumerated.
pub const SUBGROUP_COUNT_CAP: usize = 200_000;

/// A finite group on `0..n` with a full multiplication table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteGroupTable {
    n: usize,
    mul: Vec<u32>,
    inv: Vec<u32>,
    identity: u32,
}

impl FiniteGroupTable {
    /// Build from a row-major table `mul[a * n + b] = ab`; checks closure,
    /// identity, inverses and associativity on `checks` random triples.
    pub fn from_table(n: usize, mul: Vec<u32>, checks: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("group"));
        }
        if mul.len() != n * n {
            return Err(Error::Dimension {
                expected: n * n,
                got: mul.len(),
            });
        }
        if mul.iter().any(|&x| x as usize >= n) {
            return Err(Error::invalid("table entry out of range"));
        }
        let identity = (0..n)
            .find(|&e| (0..n).all(|x| mul[e * n + x] as usize == x && mul[x * n + e] as usize == x))
            .ok_or_else(|| Error::invalid("table has no identity"))? as u32;
        let mut inv = vec![u32::MAX; n];
        for (a, slot) in inv.iter_mut().enumerate() {
            *slot = (0..n)
                .find(|&b| mul[a * n + b] == identity)
                .ok_or_else(|| Error::invalid(format!("element {a} has no inverse")))? as u32;
        }
        let g = FiniteGroupTable { n, mul, inv, identity };
        let mut r = rng::stream(seed, 0);
        for _ in 0..checks {
            let (a, b, c) = (r.gen_range(0..n) as u32, r.gen_range(0..n) as u32, r.gen_range(0..n) as u32);
            if g.mul(g.mul(a, b), c) != g.mul(a, g.mul(b, c)) {
                return Err(Error::invalid(format!("table is not associative at ({a},{b},{c})")));
            }
        }
        Ok(g)
    }

    /// Table of a finite group given by its elements (closed under `op`).
    pub fn from_elements<G: GroupElement>(elems: &[G]) -> Result<Self> {
        let n = elems.len();
        let index: FxHashMap<&G, u32> = elems.iter().enumerate().map(|(i, g)| (g, i as u32)).collect();
        if index.len() != n {
            return Err(Error::invalid("repeated group element"));
        }
        let rows: Vec<Vec<u32>> = elems
            .par_iter()
            .map(|a| {
                elems
                    .iter()
                    .map(|b| index.get(&a.op(b)).copied().ok_or_else(|| Error::invalid("element list is not closed")))
                    .collect::<Result<Vec<u32>>>()
            })
            .collect::<Result<_>>()?;
        Self::from_table(n, rows.concat(), 64, 0)
    }

    /// `Z/nZ` written multiplicatively.
    pub fn cyclic(n: usize) -> Result<Self> {
        let mul = (0..n * n).map(|k| ((k / n + k % n) % n) as u32).collect();
        Self::from_table(n, mul, 0, 0)
    }

    /// Direct product, element `(a, b)` at index `a * |H| + b`.
    pub fn direct_product(g: &Self, h: &Self) -> Result<Self> {
        let n = g.n * h.n;
        let mut mul = vec![0u32; n * n];
        for x in 0..n {
            for y in 0..n {
                let a = g.mul((x / h.n) as u32, (y / h.n) as u32);
                let b = h.mul((x % h.n) as u32, (y % h.n) as u32);
                mul[x * n + y] = a * h.n as u32 + b;
            }
        }
        Self::from_table(n, mul, 0, 0)
    }

    /// `{"order": n, "table": [[...], ...]}`.
    pub fn from_json(v: &Value) -> Result<Self> {
        let rows = v
            .get("table")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::invalid("group table must have a \"table\" array"))?;
        let n = rows.len();
        let mut mul = Vec::with_capacity(n * n);
        for r in rows {
            let r = r.as_array().filter(|r| r.len() == n).ok_or_else(|| Error::invalid("table must be square"))?;
            for x in r {
                mul.push(x.as_u64().ok_or_else(|| Error::invalid("table entries must be integers"))? as u32);
            }
        }
        Self::from_table(n, mul, 1000, 0)
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = (0..self.n).map(|a| Value::from(self.mul[a * self.n..(a + 1) * self.n].to_vec())).collect();
        serde_json::json!({ "order": self.n, "table": rows })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn identity(&self) -> u32 {
        self.identity
    }

    #[inline]
    pub fn mul(&self, a: u32, b: u32) -> u32 {
        self.mul[a as usize * self.n + b as usize]
    }

    #[inline]
    pub fn inv(&self, a: u32) -> u32 {
        self.inv[a as usize]
    }

    /// Whether `f: self -> h` is a homomorphism, checked on every pair.
    pub fn is_homomorphism(&self, h: &FiniteGroupTable, f: &[u32]) -> bool {
        f.len() == self.n
            && (0..self.n as u32)
                .into_par_iter()
                .all(|x| (0..self.n as u32).all(|y| f[self.mul(x, y) as usize] == h.mul(f[x as usize], f[y as usize])))
    }

    /// Subgroup generated by `gens`, sorted; None once it exceeds `limit`.
    pub fn closure(&self, gens: &[u32], limit: usize) -> Option<Vec<u32>> {
        let mut seen = vec![false; self.n];
        let mut out = vec![self.identity];
        seen[self.identity as usize] = true;
        let mut queue = VecDeque::from([self.identity]);
        while let Some(x) = queue.pop_front() {
            for &g in gens {
                let y = self.mul(x, g);
                if !seen[y as usize] {
                    seen[y as usize] = true;
                    out.push(y);
                    if out.len() > limit {
                        return None;
                    }
                    queue.push_back(y);
                }
            }
        }
        out.sort_unstable();
        Some(out)
    }

    fn is_subgroup(&self, h: &[u32]) -> bool {
        let set: FxHashSet<u32> = h.iter().copied().collect();
        set.contains(&self.identity)
            && h.iter().all(|&x| set.contains(&self.inv(x)) && h.iter().all(|&y| set.contains(&self.mul(x, y))))
    }
}

/// Exact fraction of pairs `(x, y)` with `psi(xy) = psi(x) psi(y)`.
pub fn agreement(psi: &[u32], g1: &FiniteGroupTable, g2: &FiniteGroupTable) -> Result<Ratio<u64>> {
    check_map(psi, g1, g2)?;
    if g1.n > EXACT_AGREEMENT_MAX {
        return Err(Error::CapExceeded {
            what: "exact agreement",
            needed: g1.n as u128,
            cap: EXACT_AGREEMENT_MAX as u128,
        });
    }
    let good: u64 = (0..g1.n as u32)
        .into_par_iter()
        .map(|x| (0..g1.n as u32).filter(|&y| agrees(psi, g1, g2, x, y)).count() as u64)
        .sum();
    Ok(Ratio::new(good, (g1.n * g1.n) as u64))
}

#[inline]
fn agrees(psi: &[u32], g1: &FiniteGroupTable, g2: &FiniteGroupTable, x: u32, y: u32) -> bool {
    psi[g1.mul(x, y) as usize] == g2.mul(psi[x as usize], psi[y as usize])
}

/// Sampled agreement with a 95% Wilson interval, for large domains.
pub fn agreement_sampled(
    psi: &[u32],
    g1: &FiniteGroupTable,
    g2: &FiniteGroupTable,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    check_map(psi, g1, g2)?;
    let mut r = rng::stream(seed, 0);
    let n = g1.n as u32;
    let hits = (0..samples)
        .filter(|_| agrees(psi, g1, g2, r.gen_range(0..n), r.gen_range(0..n)))
        .count();
    let (lo, hi) = crate::walks::wilson_interval(hits, samples, 1.96);
    Ok((hits as f64 / samples as f64, lo, hi))
}

fn check_map(psi: &[u32], g1: &FiniteGroupTable, g2: &FiniteGroupTable) -> Result<()> {
    if psi.len() != g1.n {
        return Err(Error::Dimension {
            expected: g1.n,
            got: psi.len(),
        });
    }
    if psi.iter().any(|&y| y as usize >= g2.n) {
        return Err(Error::invalid("map image out of range"));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct Extraction<T> {
    pub a_prime: Vec<T>,
    pub graph_size: usize,
    /// `|{ab : (a, b) in graph}|`.
    pub graph_product_size: usize,
    pub doubling: usize,
    /// `|AGA|^4 / ((1 - sqrt eps)(1 - 2 sqrt eps)^2 |A|^3)`.
    pub doubling_bound: f64,
    pub size_bound_holds: bool,
    pub doubling_bound_holds: bool,
}

/// Keep the elements of `a` whose graph degree exceeds `(1 - sqrt eps)|A|`.
/// `in_graph(i, j)` tells whether `(a[i], a[j])` is an edge.
pub fn restricted_product_extract<T, M, E>(a: &[T], in_graph: E, epsilon: f64, mul: M) -> Result<Extraction<T>>
where
    T: Copy + Ord + std::hash::Hash + Send + Sync,
    M: Fn(&T, &T) -> T + Sync,
    E: Fn(usize, usize) -> bool + Sync,
{
    if !(epsilon > 0.0 && epsilon < 0.25) {
        return Err(Error::precondition(format!("epsilon must lie in (0, 1/4), got {epsilon}")));
    }
    let n = a.len();
    if n == 0 {
        return Err(Error::Empty("set"));
    }
    let rows: Vec<(usize, FxHashSet<T>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut prods = FxHashSet::default();
            let mut deg = 0;
            for j in 0..n {
                if in_graph(i, j) {
                    deg += 1;
                    prods.insert(mul(&a[i], &a[j]));
                }
            }
            (deg, prods)
        })
        .collect();
    let graph_size: usize = rows.iter().map(|r| r.0).sum();
    let nf = n as f64;
    if graph_size as f64 <= (1.0 - epsilon) * nf * nf {
        return Err(Error::precondition(format!(
            "graph has {graph_size} edges, need more than (1 - eps)|A|^2"
        )));
    }
    let mut agg: FxHashSet<T> = FxHashSet::default();
    for (_, p) in &rows {
        agg.extend(p.iter().copied());
    }
    let s = epsilon.sqrt();
    let a_prime: Vec<T> = (0..n).filter(|&i| rows[i].0 as f64 > (1.0 - s) * nf).map(|i| a[i]).collect();
    let doubling = a_prime
        .par_iter()
        .map(|x| a_prime.iter().map(|y| mul(x, y)).collect::<FxHashSet<T>>())
        .reduce(FxHashSet::default, |mut x, y| {
            x.extend(y);
            x
        })
        .len();
    let doubling_bound = (agg.len() as f64).powi(4) / ((1.0 - s) * (1.0 - 2.0 * s).powi(2) * nf.powi(3));
    Ok(Extraction {
        size_bound_holds: a_prime.len() as f64 > (1.0 - s) * nf,
        doubling_bound_holds: (doubling as f64) < doubling_bound,
        a_prime,
        graph_size,
        graph_product_size: agg.len(),
        doubling,
        doubling_bound,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Branch {
    Defect,
    Structured,
    ConstructionFailure,
}

#[derive(Clone, Debug, Serialize)]
pub struct DichotomyResult {
    pub branch: Branch,
    /// Agreement as `"num/den"`.
    pub agreement: String,
    pub epsilon: String,
    /// A pair with `psi(xy) != psi(x) psi(y)` in the defect branch.
    pub witness: Option<(u32, u32)>,
    pub a_prime_size: usize,
    pub a_prime_doubling: usize,
    pub h_size: Option<usize>,
    /// `S = P1(A')`, sorted.
    pub s: Vec<u32>,
    /// The homomorphism `f` as a table, in the structured branch.
    pub f: Vec<u32>,
    /// The inequality that failed, in the construction failure branch.
    pub failure: Option<String>,
    /// With coprime orders: `|{x : psi(x) != 1}| < sqrt(eps)|G1|`.
    pub coprime_bound_holds: Option<bool>,
}

/// Either many multiplicative defects, or a homomorphism `f` agreeing with
/// `psi` on a large set `S`. Outside `(0, 1/1600)` epsilon needs `allow_eps`.
pub fn dichotomy(
    psi: &[u32],
    g1: &FiniteGroupTable,
    g2: &FiniteGroupTable,
    epsilon: Ratio<u64>,
    allow_eps: bool,
) -> Result<DichotomyResult> {
    let eps_f = *epsilon.numer() as f64 / *epsilon.denom() as f64;
    if !(eps_f > 0.0 && epsilon < Ratio::new(1, 1600)) {
        if !allow_eps {
            return Err(Error::precondition(format!("epsilon {epsilon} outside (0, 1/1600)")));
        }
        log::warn!("dichotomy: epsilon {epsilon} outside (0, 1/1600)");
    }
    let agree = agreement(psi, g1, g2)?;
    let mut res = DichotomyResult {
        branch: Branch::Defect,
        agreement: agree.to_string(),
        epsilon: epsilon.to_string(),
        witness: None,
        a_prime_size: 0,
        a_prime_doubling: 0,
        h_size: None,
        s: Vec::new(),
        f: Vec::new(),
        failure: None,
        coprime_bound_holds: None,
    };
    if agree < Ratio::from_integer(1) - epsilon {
        let n = g1.n as u32;
        res.witness = (0..n).flat_map(|x| (0..n).map(move |y| (x, y))).find(|&(x, y)| !agrees(psi, g1, g2, x, y));
        return Ok(res);
    }
    // the graph of psi as a subset of G1 x G2, with the agreement graph on it
    let a: Vec<(u32, u32)> = (0..g1.n as u32).map(|x| (x, psi[x as usize])).collect();
    let pmul = |u: &(u32, u32), v: &(u32, u32)| (g1.mul(u.0, v.0), g2.mul(u.1, v.1));
    let fail = |mut res: DichotomyResult, why: String| {
        res.branch = Branch::ConstructionFailure;
        res.failure = Some(why);
        Ok(res)
    };
    let ext = match restricted_product_extract(&a, |i, j| agrees(psi, g1, g2, i as u32, j as u32), eps_f.min(0.2499), pmul) {
        Ok(e) => e,
        Err(e) => return fail(res, e.to_string()),
    };
    res.a_prime_size = ext.a_prime.len();
    res.a_prime_doubling = ext.doubling;
    let n1 = g1.n as f64;
    if !ext.size_bound_holds {
        return fail(res, format!("|A'| = {} not above (1 - sqrt eps)|G1|", ext.a_prime.len()));
    }
    // A' inside x H with x in A' and H generated by x^-1 A'
    let x = ext.a_prime[0];
    let xinv = (g1.inv(x.0), g2.inv(x.1));
    let gens: Vec<(u32, u32)> = ext.a_prime.iter().map(|y| pmul(&xinv, y)).collect();
    let limit = 2 * g1.n;
    let h = match pair_closure(g1, g2, &gens, limit) {
        Some(h) => h,
        None => return fail(res, format!("subgroup generated by x^-1 A' exceeds {limit}")),
    };
    res.h_size = Some(h.len());
    if h.len() as f64 >= 5.0 / 3.0 * ext.a_prime.len() as f64 {
        return fail(res, format!("|H| = {} not below (5/3)|A'|", h.len()));
    }
    let mut f = vec![u32::MAX; g1.n];
    for &(u, v) in &h {
        if f[u as usize] != u32::MAX {
            return fail(res, format!("H is not a graph over G1 at {u}"));
        }
        f[u as usize] = v;
    }
    if f.contains(&u32::MAX) {
        return fail(res, "projection of H is not all of G1".into());
    }
    if !h.contains(&x) {
        return fail(res, "A' lies in a nontrivial coset of H".into());
    }
    let s: Vec<u32> = ext.a_prime.iter().map(|p| p.0).collect();
    if !g1.is_homomorphism(g2, &f) || s.iter().any(|&y| f[y as usize] != psi[y as usize]) {
        return fail(res, "recovered map fails verification".into());
    }
    if num_integer::gcd(g1.n, g2.n) == 1 {
        let moved = psi.iter().filter(|&&y| y != g2.identity).count();
        res.coprime_bound_holds = Some((moved as f64) < eps_f.sqrt() * n1);
    }
    res.branch = Branch::Structured;
    res.s = s;
    res.f = f;
    Ok(res)
}

fn pair_closure(g1: &FiniteGroupTable, g2: &FiniteGroupTable, gens: &[(u32, u32)], limit: usize) -> Option<Vec<(u32, u32)>> {
    let id = (g1.identity, g2.identity);
    let mut seen: FxHashSet<(u32, u32)> = FxHashSet::default();
    seen.insert(id);
    let mut queue = VecDeque::from([id]);
    while let Some(x) = queue.pop_front() {
        for g in gens {
            let y = (g1.mul(x.0, g.0), g2.mul(x.1, g.1));
            if seen.insert(y) {
                if seen.len() > limit {
                    return None;
                }
                queue.push_back(y);
            }
        }
    }
    let mut v: Vec<_> = seen.into_iter().collect();
    v.sort_unstable();
    Some(v)
}

#[derive(Clone, Debug, Serialize)]
pub struct SmallDoubling {
    /// The subgroup, sorted.
    pub h: Vec<u32>,
    /// Right coset representatives `x` with `S` inside the union of `Hx`.
    pub cosets: Vec<u32>,
    /// Whether `<S S^-1>` already met the bounds.
    pub fast_path: bool,
    pub product_size: usize,
    pub hypothesis_holds: bool,
}

fn right_cover(g: &FiniteGroupTable, h: &[u32], s: &[u32]) -> Vec<u32> {
    let mut covered = vec![false; g.n];
    let mut reps = Vec::new();
    for &x in s {
        if !covered[x as usize] {
            reps.push(x);
            for &y in h {
                covered[g.mul(y, x) as usize] = true;
            }
        }
    }
    reps
}

/// Every subgroup of order at most `max_order`, by cyclic extension.
pub fn subgroups_up_to(g: &FiniteGroupTable, max_order: usize, cap: usize) -> Result<Vec<Vec<u32>>> {
    if g.n > SUBGROUP_SEARCH_MAX {
        return Err(Error::CapExceeded {
            what: "subgroup search",
            needed: g.n as u128,
            cap: SUBGROUP_SEARCH_MAX as u128,
        });
    }
    let trivial = vec![g.identity];
    let mut seen: FxHashSet<Vec<u32>> = FxHashSet::default();
    seen.insert(trivial.clone());
    let mut all = vec![trivial];
    let mut i = 0;
    while i < all.len() {
        let k = all[i].clone();
        let inside: FxHashSet<u32> = k.iter().copied().collect();
        for x in 0..g.n as u32 {
            if inside.contains(&x) {
                continue;
            }
            let mut gens = k.clone();
            gens.push(x);
            if let Some(h) = g.closure(&gens, max_order) {
                if seen.insert(h.clone()) {
                    all.push(h);
                    if all.len() > cap {
                        return Err(Error::CapExceeded {
                            what: "subgroup count",
                            needed: all.len() as u128,
                            cap: cap as u128,
                        });
                    }
                }
            }
        }
        i += 1;
    }
    all.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(all)
}

/// A subgroup `H` with `|H| <= (2/eps - 1)|S|` whose right cosets cover `S`
/// using at most `2/eps - 1` of them. Tries `<S S^-1>` first, then the
/// subgroup with fewest covering cosets (ties to the smallest).
pub fn small_doubling_subgroup(g: &FiniteGroupTable, s: &[u32], a: &[u32], epsilon: f64) -> Result<SmallDoubling> {
    if s.is_empty() || a.is_empty() {
        return Err(Error::Empty("set"));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::precondition(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    let mut s: Vec<u32> = s.to_vec();
    s.sort_unstable();
    s.dedup();
    let prod: FxHashSet<u32> = a.iter().flat_map(|&x| s.iter().map(move |&y| g.mul(x, y))).collect();
    let hypothesis_holds = prod.len() as f64 <= (2.0 - epsilon) * s.len() as f64 && a.len() >= s.len();
    if !hypothesis_holds {
        log::warn!("small doubling: hypothesis |AS| <= (2 - eps)|S|, |A| >= |S| fails");
    }
    let c = 2.0 / epsilon - 1.0;
    let max_h = (c * s.len() as f64 + 1e-9).floor() as usize;
    let max_cosets = (c + 1e-9).floor() as usize;
    let ssinv: Vec<u32> = s.iter().flat_map(|&x| s.iter().map(move |&y| g.mul(x, g.inv(y)))).collect();
    if let Some(h) = g.closure(&ssinv, max_h) {
        let cosets = right_cover(g, &h, &s);
        return Ok(SmallDoubling {
            h,
            cosets,
            fast_path: true,
            product_size: prod.len(),
            hypothesis_holds,
        });
    }
    let mut best: Option<(Vec<u32>, Vec<u32>)> = None;
    for h in subgroups_up_to(g, max_h, SUBGROUP_COUNT_CAP)? {
        let cosets = right_cover(g, &h, &s);
        if cosets.len() <= max_cosets && best.as_ref().map_or(true, |b| cosets.len() < b.1.len()) {
            best = Some((h, cosets));
        }
    }
    let (h, cosets) = best.ok_or_else(|| Error::Construction("no subgroup within the size and coset bounds".into()))?;
    debug_assert!(g.is_subgroup(&h));
    Ok(SmallDoubling {
        h,
        cosets,
        fast_path: false,
        product_size: prod.len(),
        hypothesis_holds,
    })
}

/// A homomorphism `Z/n -> Z/m` (`1 -> k`) changed on `corrupt` random points.
pub fn corrupted_cyclic_hom(n: usize, m: usize, k: usize, corrupt: usize, seed: u64) -> Vec<u32> {
    let mut psi: Vec<u32> = (0..n).map(|x| ((x * k) % m) as u32).collect();
    let mut r = rng::stream(seed, 0);
    for x in rand::seq::index::sample(&mut r, n, corrupt.min(n)) {
        let old = psi[x];
        psi[x] = (old + r.gen_range(1..m.max(2)) as u32) % m as u32;
    }
    psi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factored::FactoredModulus;
    use crate::sl2::enumerate_group;

    fn sl2_table(q: u64) -> FiniteGroupTable {
        let g = enumerate_group(&FactoredModulus::new(q).unwrap(), 1 << 20).unwrap();
        FiniteGroupTable::from_elements(&g).unwrap()
    }

    #[test]
    fn tables_validate() {
        let g = FiniteGroupTable::cyclic(6).unwrap();
        assert_eq!(g.mul(4, 5), 3);
        assert_eq!(g.inv(2), 4);
        let bad = FiniteGroupTable::from_table(2, vec![0, 1, 1, 1], 0, 0);
        assert!(bad.is_err());
        let s = sl2_table(3);
        assert_eq!(s.order(), 24);
        let back = FiniteGroupTable::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn agreement_cases() {
        let g1 = FiniteGroupTable::cyclic(12).unwrap();
        let g2 = FiniteGroupTable::cyclic(6).unwrap();
        let hom: Vec<u32> = (0..12).map(|x| (x % 6) as u32).collect();
        assert_eq!(agreement(&hom, &g1, &g2).unwrap(), Ratio::from_integer(1));
        // constant 2: psi(xy) = 2 but psi(x)psi(y) = 4, never agrees
        let c = vec![2u32; 12];
        let mut brute = 0;
        for x in 0..12u32 {
            for y in 0..12u32 {
                brute += (c[g1.mul(x, y) as usize] == g2.mul(c[x as usize], c[y as usize])) as u64;
            }
        }
        assert_eq!(agreement(&c, &g1, &g2).unwrap(), Ratio::new(brute, 144));
        assert_eq!(brute, 0);
    }

    #[test]
    fn random_map_agreement_near_one_over_m() {
        let g1 = FiniteGroupTable::cyclic(400).unwrap();
        let m = 7;
        let g2 = FiniteGroupTable::cyclic(m).unwrap();
        let mut r = rng::stream(3, 0);
        let psi: Vec<u32> = (0..400).map(|_| r.gen_range(0..m as u32)).collect();
        let a = agreement(&psi, &g1, &g2).unwrap();
        let f = *a.numer() as f64 / *a.denom() as f64;
        let p = 1.0 / m as f64;
        let sigma = (p * (1.0 - p) / 160_000.0).sqrt();
        assert!((f - p).abs() < 3.0 * sigma + 0.01, "{f}");
        let (est, lo, hi) = agreement_sampled(&psi, &g1, &g2, 20_000, 1).unwrap();
        assert!(lo <= f + 0.01 && f - 0.01 <= hi, "{est}");
    }

    #[test]
    fn dichotomy_exact_hom() {
        let g1 = sl2_table(3);
        let g2 = FiniteGroupTable::cyclic(3).unwrap();
        // SL2(Z/3) has abelianisation Z/3; the trivial map is a homomorphism
        let psi = vec![g2.identity(); 24];
        let r = dichotomy(&psi, &g1, &g2, Ratio::new(1, 1700), false).unwrap();
        assert_eq!(r.branch, Branch::Structured);
        assert_eq!(r.s.len(), 24);
        assert_eq!(r.f, psi);
        let g1 = FiniteGroupTable::cyclic(30).unwrap();
        let g2 = FiniteGroupTable::cyclic(5).unwrap();
        let psi: Vec<u32> = (0..30).map(|x| (x * 2 % 5) as u32).collect();
        let r = dichotomy(&psi, &g1, &g2, Ratio::new(1, 1700), false).unwrap();
        assert_eq!((r.branch, r.f.clone()), (Branch::Structured, psi));
    }

    #[test]
    fn dichotomy_one_corruption() {
        let g1 = FiniteGroupTable::cyclic(31).unwrap();
        let g2 = FiniteGroupTable::cyclic(5).unwrap();
        let psi = corrupted_cyclic_hom(31, 5, 0, 1, 9);
        // one bad point x0 spoils the pairs (x0, y), (y, x0) and those with xy = x0
        let a = agreement(&psi, &g1, &g2).unwrap();
        let mut bad = 0;
        for x in 0..31u32 {
            for y in 0..31u32 {
                bad += !agrees(&psi, &g1, &g2, x, y) as u64;
            }
        }
        assert_eq!(a, Ratio::new(961 - bad, 961));
        assert!(bad >= 31 * 2);
        // about 3/31 of the pairs disagree, far above eps = 1/1700
        let r = dichotomy(&psi, &g1, &g2, Ratio::new(1, 1700), false).unwrap();
        assert_eq!(r.branch, Branch::Defect);
        let (x, y) = r.witness.unwrap();
        assert!(!agrees(&psi, &g1, &g2, x, y));
        // with a looser epsilon the structured branch recovers the zero map
        let r = dichotomy(&psi, &g1, &g2, Ratio::new(1, 8), true).unwrap();
        assert_eq!(r.branch, Branch::Structured, "{:?}", r.failure);
        assert_eq!(r.f, vec![0; 31]);
        let agree_pts = (0..31).filter(|&x| r.f[x] == psi[x]).count() as f64;
        assert!(agree_pts >= (1.0 - (0.125f64).sqrt()) * 31.0);
        assert_eq!(r.coprime_bound_holds, Some(true));
    }

    #[test]
    fn dichotomy_random_is_defect() {
        let g1 = FiniteGroupTable::cyclic(60).unwrap();
        let g2 = sl2_table(3);
        let mut r = rng::stream(4, 0);
        let psi: Vec<u32> = (0..60).map(|_| r.gen_range(0..24)).collect();
        let res = dichotomy(&psi, &g1, &g2, Ratio::new(1, 1700), false).unwrap();
        assert_eq!(res.branch, Branch::Defect);
        assert!(dichotomy(&psi, &g1, &g2, Ratio::new(1, 100), false).is_err());
    }

    #[test]
    fn extraction_cases() {
        let g = sl2_table(3);
        // a subgroup: the quaternion kernel of SL2(Z/3) -> Z/3
        let q8 = g.closure(&[1, 2, 5, 7, 11], 24).unwrap();
        let h = g.closure(&q8[..3], 24).unwrap();
        let e = restricted_product_extract(&h, |_, _| true, 0.01, |x, y| g.mul(*x, *y)).unwrap();
        assert_eq!(e.a_prime, h);
        assert_eq!(e.doubling, h.len());
        let z = FiniteGroupTable::cyclic(101).unwrap();
        let mut r = rng::stream(8, 0);
        let a: Vec<u32> = rand::seq::index::sample(&mut r, 101, 30).into_iter().map(|x| x as u32).collect();
        let e = restricted_product_extract(&a, |_, _| true, 0.05, |x, y| z.mul(*x, *y)).unwrap();
        assert!(e.size_bound_holds && e.doubling_bound_holds);
        assert!(restricted_product_extract(&a, |_, _| true, 0.25, |x, y| z.mul(*x, *y)).is_err());
    }

    #[test]
    fn small_doubling_cases() {
        let g = sl2_table(5);
        let h = g.closure(&[7, 40], 120).unwrap();
        let r = small_doubling_subgroup(&g, &h, &h, 0.5).unwrap();
        assert_eq!((r.h.clone(), r.cosets.len()), (h.clone(), 1));
        let x = 17u32;
        let hx: Vec<u32> = h.iter().map(|&y| g.mul(y, x)).collect();
        let r = small_doubling_subgroup(&g, &hx, &h, 0.5).unwrap();
        assert_eq!((r.h.clone(), r.cosets.len()), (h, 1));
    }

    #[test]
    fn small_doubling_two_cosets_against_enumeration() {
        let g = sl2_table(5);
        // a subgroup of order 4 and two of its right cosets
        let all = subgroups_up_to(&g, 120, SUBGROUP_COUNT_CAP).unwrap();
        let h = all.iter().find(|h| h.len() == 4).unwrap().clone();
        let set: FxHashSet<u32> = h.iter().copied().collect();
        let x = (0..120u32).find(|x| !set.contains(x)).unwrap();
        let hx: FxHashSet<u32> = h.iter().map(|&y| g.mul(y, x)).collect();
        // a second coset far enough that <S S^-1> is large
        let y = (0..120u32)
            .find(|&y| {
                let mut gens = h.clone();
                gens.push(g.mul(x, g.inv(y)));
                !set.contains(&y) && !hx.contains(&y) && g.closure(&gens, 24).is_none()
            })
            .unwrap();
        let s: Vec<u32> = h.iter().flat_map(|&z| [g.mul(z, x), g.mul(z, y)]).collect();
        let r = small_doubling_subgroup(&g, &s, &h, 0.5).unwrap();
        assert!(g.is_subgroup(&r.h));
        // |A| < |S| here, so the hypothesis is only reported
        assert!(!r.hypothesis_holds && r.h.len() <= 3 * s.len() && r.cosets.len() <= 3);
        // oracle: the fewest cosets over every subgroup of order at most |S|
        let best = all
            .iter()
            .filter(|k| k.len() <= 3 * s.len())
            .map(|k| right_cover(&g, k, &s).len())
            .min()
            .unwrap();
        assert_eq!(r.cosets.len(), best);
        assert!(!r.fast_path);
        assert_eq!(r.cosets.len(), 2);
        assert!(h.iter().all(|z| r.h.contains(z)));
        for &z in &s {
            assert!(r.cosets.iter().any(|&c| r.h.binary_search(&g.mul(z, g.inv(c))).is_ok()));
        }
    }

    #[test]
    fn subgroup_counts() {
        // SL2(Z/3) has 15 subgroups
        assert_eq!(subgroups_up_to(&sl2_table(3), 24, 1000).unwrap().len(), 15);
        assert_eq!(subgroups_up_to(&FiniteGroupTable::cyclic(12).unwrap(), 12, 100).unwrap().len(), 6);
    }
}

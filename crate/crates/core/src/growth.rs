//! Product sets in `SL2(Z/q1) x SL2(Z/q2)`: growth, bounded generation and
//! congruence coverage.

use std::hash::Hash;

use num_rational::Ratio;
use rayon::prelude::*;
use rustc_hash::FxHashSet;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::factored::FactoredModulus;
use crate::sl2::{enumerate_congruence, GroupElement, PairElement, SL2Residue};

/// Default cap on the size of any set built here.
pub const DEFAULT_SET_CAP: usize = 10_000_000;
/// Default ceiling on the power searched by `bounded_generation_search`.
pub const DEFAULT_K_MAX: usize = 12;

// left factors per parallel task; fixed so the merge order is thread-count free
const CHUNK: usize = 64;
const BATCH: usize = 16;

/// `{ab : a in a, b in b}` as a sorted vector. Stops early once `limit`
/// elements are found (the ambient order), since nothing more can be added.
fn product_vec<T>(a: &[T], b: &[T], limit: u128, cap: usize) -> Result<Vec<T>>
where
    T: GroupElement + Copy + Hash + Ord + Send + Sync,
{
    let mut all: FxHashSet<T> = FxHashSet::default();
    // batches of rows so a product that already fills the ambient group stops early
    'rows: for batch in a.chunks(CHUNK * BATCH) {
        let parts: Vec<FxHashSet<T>> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut s = FxHashSet::default();
                for x in chunk {
                    for y in b {
                        s.insert(x.op(y));
                    }
                }
                s
            })
            .collect();
        for p in parts {
            all.extend(p);
            if all.len() > cap {
                return Err(Error::CapExceeded {
                    what: "product set",
                    needed: all.len() as u128,
                    cap: cap as u128,
                });
            }
            if all.len() as u128 >= limit {
                break 'rows;
            }
        }
    }
    let mut v: Vec<T> = all.into_iter().collect();
    v.sort_unstable();
    Ok(v)
}

fn sorted_dedup<T: Ord>(mut v: Vec<T>) -> Vec<T> {
    v.sort_unstable();
    v.dedup();
    v
}

fn contains_all<T: Ord + Sync>(x: &[T], members: &[T]) -> bool {
    members.par_iter().all(|m| x.binary_search(m).is_ok())
}

/// Successive powers `A, A^2, A^3, ...` of a finite set. When `1` lies in `A`
/// only the new layer is multiplied at each step.
pub struct Powers<T> {
    base: Vec<T>,
    current: Vec<T>,
    frontier: Vec<T>,
    k: usize,
    unital: bool,
    limit: u128,
    cap: usize,
}

impl<T> Powers<T>
where
    T: GroupElement + Copy + Hash + Ord + Send + Sync,
{
    /// `base` must be sorted and deduplicated; `limit` is the ambient order.
    pub fn new(base: Vec<T>, limit: u128, cap: usize) -> Self {
        let unital = base.first().map(|g| base.binary_search(&g.identity_like()).is_ok()).unwrap_or(false);
        Powers {
            current: base.clone(),
            frontier: base.clone(),
            base,
            k: 1,
            unital,
            limit,
            cap,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn current(&self) -> &[T] {
        &self.current
    }

    /// Advance to the next power.
    pub fn step(&mut self) -> Result<&[T]> {
        if self.base.is_empty() || self.current.len() as u128 >= self.limit {
            self.k += 1;
            self.frontier.clear();
            return Ok(&self.current);
        }
        if self.unital {
            let fresh = product_vec(&self.frontier, &self.base, self.limit, self.cap)?;
            let prev = std::mem::take(&mut self.current);
            self.frontier = fresh.iter().filter(|x| prev.binary_search(x).is_err()).copied().collect();
            let mut next = prev;
            next.extend_from_slice(&self.frontier);
            next.sort_unstable();
            if next.len() > self.cap {
                return Err(Error::CapExceeded {
                    what: "set power",
                    needed: next.len() as u128,
                    cap: self.cap as u128,
                });
            }
            self.current = next;
        } else {
            self.current = product_vec(&self.current, &self.base, self.limit, self.cap)?;
        }
        self.k += 1;
        Ok(&self.current)
    }
}

/// A deduplicated set of pair elements sharing the moduli `(q1, q2)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupSet {
    q1: u64,
    q2: u64,
    elems: Vec<PairElement>,
}

impl GroupSet {
    pub fn new(q1: u64, q2: u64, elems: Vec<PairElement>) -> Result<Self> {
        if let Some(bad) = elems.iter().find(|x| x.moduli() != (q1, q2)) {
            let (a, b) = bad.moduli();
            return Err(Error::ModulusMismatch(format!("({q1},{q2})"), format!("({a},{b})")));
        }
        Ok(GroupSet {
            q1,
            q2,
            elems: sorted_dedup(elems),
        })
    }

    /// Build from a nonempty list, taking the moduli from its first element.
    pub fn from_elements(elems: Vec<PairElement>) -> Result<Self> {
        let (q1, q2) = elems.first().ok_or(Error::Empty("group set"))?.moduli();
        Self::new(q1, q2, elems)
    }

    pub fn identity(q1: u64, q2: u64) -> Self {
        GroupSet {
            q1,
            q2,
            elems: vec![PairElement::identity(q1, q2)],
        }
    }

    /// The whole of `SL2(Z/q1) x SL2(Z/q2)`.
    pub fn whole(q1: &FactoredModulus, q2: &FactoredModulus, cap: usize) -> Result<Self> {
        let elems = crate::sl2::enumerate_pairs(q1, q2, cap as u128)?;
        Self::new(q1.value(), q2.value(), elems)
    }

    pub fn moduli(&self) -> (u64, u64) {
        (self.q1, self.q2)
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn elements(&self) -> &[PairElement] {
        &self.elems
    }

    pub fn contains(&self, x: &PairElement) -> bool {
        self.elems.binary_search(x).is_ok()
    }

    /// Order of the ambient group.
    pub fn ambient_order(&self) -> u128 {
        let o = |q: u64| FactoredModulus::new(q).map(|f| f.sl2_order()).unwrap_or(0);
        o(self.q1) * o(self.q2)
    }

    /// Projection to one coordinate (`side` 1 or 2), deduplicated.
    pub fn project(&self, side: u8) -> Result<Vec<SL2Residue>> {
        let v = match side {
            1 => self.elems.iter().map(|x| x.left).collect(),
            2 => self.elems.iter().map(|x| x.right).collect(),
            _ => return Err(Error::invalid(format!("side must be 1 or 2, got {side}"))),
        };
        Ok(sorted_dedup(v))
    }

    /// Image modulo `(q1, q2)`, divisors of the current moduli.
    pub fn reduce(&self, q1: u64, q2: u64) -> Result<GroupSet> {
        let v = self.elems.iter().map(|x| x.reduce(q1, q2)).collect::<Result<Vec<_>>>()?;
        Ok(GroupSet {
            q1,
            q2,
            elems: sorted_dedup(v),
        })
    }

    pub fn inverse(&self) -> GroupSet {
        GroupSet {
            q1: self.q1,
            q2: self.q2,
            elems: sorted_dedup(self.elems.iter().map(|x| x.inverse()).collect()),
        }
    }

    pub fn union(&self, other: &GroupSet) -> Result<GroupSet> {
        self.check_same(other)?;
        let mut v = self.elems.clone();
        v.extend_from_slice(&other.elems);
        Ok(GroupSet {
            q1: self.q1,
            q2: self.q2,
            elems: sorted_dedup(v),
        })
    }

    pub fn is_subset_of(&self, other: &GroupSet) -> bool {
        self.moduli() == other.moduli() && contains_all(&other.elems, &self.elems)
    }

    fn check_same(&self, other: &GroupSet) -> Result<()> {
        if self.moduli() != other.moduli() {
            return Err(Error::ModulusMismatch(
                format!("({},{})", self.q1, self.q2),
                format!("({},{})", other.q1, other.q2),
            ));
        }
        Ok(())
    }

    fn with(&self, elems: Vec<PairElement>) -> GroupSet {
        GroupSet {
            q1: self.q1,
            q2: self.q2,
            elems,
        }
    }
}

pub fn product_set(a: &GroupSet, b: &GroupSet) -> Result<GroupSet> {
    product_set_capped(a, b, DEFAULT_SET_CAP)
}

pub fn product_set_capped(a: &GroupSet, b: &GroupSet, cap: usize) -> Result<GroupSet> {
    a.check_same(b)?;
    Ok(a.with(product_vec(&a.elems, &b.elems, a.ambient_order(), cap)?))
}

/// `A^k` by repeated multiplication.
pub fn power_set(a: &GroupSet, k: usize, cap: usize) -> Result<GroupSet> {
    if k == 0 {
        return Ok(GroupSet::identity(a.q1, a.q2));
    }
    let mut p = Powers::new(a.elems.clone(), a.ambient_order(), cap);
    while p.k() < k {
        p.step()?;
    }
    Ok(a.with(p.current().to_vec()))
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthReport {
    pub q1: u64,
    pub q2: u64,
    pub size: usize,
    pub triple_size: usize,
    /// `log|AAA| / log|A|`, NaN when `|A| = 1`.
    pub exponent: f64,
    pub delta: Option<f64>,
    /// Whether `|AAA| > |A|^(1+delta)` for the supplied delta.
    pub grows: Option<bool>,
    /// `|A^l|` for `l = 1, 2, ...`.
    pub trajectory: Vec<usize>,
    /// `|A^l| <= (|A^3|/|A|)^(l-2) |A|` held at every recorded `l >= 3`.
    pub power_bound_holds: bool,
}

/// Sizes of `A, A^2, ..., A^steps` (`steps >= 3`) and the tripling exponent.
pub fn tripling(a: &GroupSet, delta: Option<f64>, steps: usize, cap: usize) -> Result<GrowthReport> {
    if a.is_empty() {
        return Err(Error::Empty("group set"));
    }
    let steps = steps.max(3);
    let mut p = Powers::new(a.elems.clone(), a.ambient_order(), cap);
    let mut trajectory = vec![a.len()];
    while p.k() < steps {
        trajectory.push(p.step()?.len());
    }
    let n = a.len() as f64;
    let t = trajectory[2];
    let exponent = if a.len() == 1 { f64::NAN } else { (t as f64).ln() / n.ln() };
    let ratio = t as f64 / n;
    let power_bound_holds = trajectory
        .iter()
        .enumerate()
        .skip(2)
        .all(|(i, &s)| s as f64 <= ratio.powi(i as i32 - 1) * n * (1.0 + 1e-12));
    Ok(GrowthReport {
        q1: a.q1,
        q2: a.q2,
        size: a.len(),
        triple_size: t,
        exponent,
        delta,
        grows: delta.map(|d| t as f64 > n.powf(1.0 + d)),
        trajectory,
        power_bound_holds,
    })
}

/// Elements of `Lambda(q1p)/Lambda(q1) x Lambda(q2p)/Lambda(q2)`, sorted.
pub fn congruence_box(
    q1: &FactoredModulus,
    q2: &FactoredModulus,
    q1p: &FactoredModulus,
    q2p: &FactoredModulus,
    cap: usize,
) -> Result<Vec<PairElement>> {
    let order = q1.congruence_kernel_order(q1p)? * q2.congruence_kernel_order(q2p)?;
    if order > cap as u128 {
        return Err(Error::CapExceeded {
            what: "congruence box",
            needed: order,
            cap: cap as u128,
        });
    }
    let l = enumerate_congruence(q1, q1p, cap as u128)?;
    let r = enumerate_congruence(q2, q2p, cap as u128)?;
    Ok(l.iter().flat_map(|&x| r.iter().map(move |&y| PairElement::new(x, y))).collect())
}

/// Whether `X` contains every element congruent to the identity modulo
/// `q1p` on the left and `q2p` on the right.
pub fn covers_congruence(x: &GroupSet, q1p: &FactoredModulus, q2p: &FactoredModulus, cap: usize) -> Result<bool> {
    let (q1, q2) = (FactoredModulus::new(x.q1)?, FactoredModulus::new(x.q2)?);
    let need = q1.congruence_kernel_order(q1p)? * q2.congruence_kernel_order(q2p)?;
    if need > x.len() as u128 {
        return Ok(false);
    }
    let b = congruence_box(&q1, &q2, q1p, q2p, cap)?;
    Ok(contains_all(&x.elems, &b))
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundedGeneration {
    /// `(k, q1p, q2p)` for the first power found to contain a congruence box.
    pub found: Option<(usize, u64, u64)>,
    /// `|A^k|` for each power computed.
    pub sizes: Vec<usize>,
    /// Whether `|A| > (q1 q2)^(3 - delta)` held (None without a delta).
    pub hypothesis_holds: Option<bool>,
}

/// Exact-divisor pairs `(q1p, q2p)` ordered by `(q1p q2p, q1p)`; with a delta
/// only pairs with `q1p q2p < (q1 q2)^(40 delta)` are kept.
pub fn divisor_pair_candidates(
    q1: &FactoredModulus,
    q2: &FactoredModulus,
    delta: Option<f64>,
) -> Vec<(FactoredModulus, FactoredModulus)> {
    let bound = delta.map(|d| ((q1.value() as f64) * (q2.value() as f64)).powf(40.0 * d));
    let mut out = Vec::new();
    for a in q1.exact_divisors() {
        for b in q2.exact_divisors() {
            let prod = a.value() as f64 * b.value() as f64;
            if bound.map_or(true, |bd| prod < bd) {
                out.push((a.clone(), b));
            }
        }
    }
    out.sort_by_key(|(a, b)| (a.value() as u128 * b.value() as u128, a.value()));
    out
}

/// The first candidate pair in `divisor_pair_candidates` order whose box is
/// contained in some `A^k`, `k <= k_max`, together with the smallest such `k`.
pub fn bounded_generation_search(
    a: &GroupSet,
    k_max: usize,
    delta: Option<f64>,
    cap: usize,
) -> Result<BoundedGeneration> {
    let (q1, q2) = (FactoredModulus::new(a.q1)?, FactoredModulus::new(a.q2)?);
    let hypothesis_holds = delta.map(|d| (a.len() as f64) > ((a.q1 as f64) * (a.q2 as f64)).powf(3.0 - d));
    if hypothesis_holds == Some(false) {
        log::warn!("bounded generation: |A| = {} is below the size hypothesis", a.len());
    }
    let candidates = divisor_pair_candidates(&q1, &q2, delta);
    let mut p = Powers::new(a.elems.clone(), a.ambient_order(), cap);
    let mut sizes = Vec::new();
    // index into `candidates` of the best box seen so far and where
    let mut best: Option<(usize, usize)> = None;
    while p.k() <= k_max {
        let x = a.with(p.current().to_vec());
        sizes.push(x.len());
        let upto = best.map_or(candidates.len(), |(i, _)| i);
        for (i, (c1, c2)) in candidates[..upto].iter().enumerate() {
            if covers_congruence(&x, c1, c2, cap)? {
                best = Some((i, p.k()));
                break;
            }
        }
        if p.k() == k_max || best.map_or(false, |(i, _)| i == 0) {
            break;
        }
        p.step()?;
    }
    Ok(BoundedGeneration {
        found: best.map(|(i, k)| (k, candidates[i].0.value(), candidates[i].1.value())),
        sizes,
        hypothesis_holds,
    })
}

/// `(A A) ∩ Gamma(q0)` with `q0 = rad(q_l)`, identity modulo `q0` on both sides.
pub fn a0_filter(a: &GroupSet, q_l: &FactoredModulus) -> Result<GroupSet> {
    let q0 = q_l.radical().value();
    for q in [a.q1, a.q2] {
        if q % q0 != 0 {
            return Err(Error::NotDivisor(q0, q));
        }
    }
    let aa = product_set(a, a)?;
    let mut keep = Vec::new();
    for x in aa.elems {
        if x.left.reduce(q0)?.is_identity() && x.right.reduce(q0)?.is_identity() {
            keep.push(x);
        }
    }
    Ok(a.with(keep))
}

#[derive(Clone, Debug, Serialize)]
pub struct CoverageRow {
    pub q_prime: u64,
    pub rho: String,
    /// `q'^rho`, the level of the congruence subgroup asked for.
    pub level: u64,
    /// Smallest `C <= C_max` with the projected power containing it.
    pub c: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CoverageReport {
    pub side: u8,
    pub q_l: u64,
    pub c_max: usize,
    pub rows: Vec<CoverageRow>,
}

/// For each exact divisor `q'` of `q_l` (largest first) and each `rho`, the
/// smallest `C` with `(P_side A0 mod q')^C ⊇ Lambda(q'^rho)/Lambda(q')`.
pub fn congruence_coverage_search(
    a0: &GroupSet,
    side: u8,
    q_l: &FactoredModulus,
    c_max: usize,
    rho_grid: &[Ratio<u64>],
    cap: usize,
) -> Result<CoverageReport> {
    let q_side = if side == 1 { a0.q1 } else { a0.q2 };
    if q_side % q_l.value() != 0 {
        return Err(Error::NotDivisor(q_l.value(), q_side));
    }
    let proj = a0.project(side)?;
    let mut divisors = q_l.exact_divisors();
    divisors.reverse();
    let mut rows = Vec::new();
    for qp in divisors {
        let reduced = sorted_dedup(proj.iter().map(|x| x.reduce(qp.value())).collect::<Result<Vec<_>>>()?);
        let targets: Vec<(Ratio<u64>, FactoredModulus, Vec<SL2Residue>)> = rho_grid
            .iter()
            .map(|&r| {
                let lvl = qp.frac_power(r);
                let members = enumerate_congruence(&qp, &lvl, cap as u128)?;
                Ok((r, lvl, members))
            })
            .collect::<Result<_>>()?;
        let mut found: Vec<Option<usize>> = vec![None; targets.len()];
        if !reduced.is_empty() {
            let mut p = Powers::new(reduced, qp.sl2_order(), cap);
            loop {
                for (i, (_, _, members)) in targets.iter().enumerate() {
                    if found[i].is_none() && contains_all(p.current(), members) {
                        found[i] = Some(p.k());
                    }
                }
                if p.k() >= c_max || found.iter().all(|f| f.is_some()) {
                    break;
                }
                p.step()?;
            }
        }
        for ((r, lvl, _), c) in targets.into_iter().zip(found) {
            rows.push(CoverageRow {
                q_prime: qp.value(),
                rho: r.to_string(),
                level: lvl.value(),
                c,
            });
        }
    }
    Ok(CoverageReport {
        side,
        q_l: q_l.value(),
        c_max,
        rows,
    })
}

pub const GROWTH_CSV_HEADER: &str = "q1,q2,size,triple_size,exponent,delta,grows,power_bound_holds";

impl GrowthReport {
    pub fn csv_row(&self) -> String {
        let opt = |x: Option<String>| x.unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.q1,
            self.q2,
            self.size,
            self.triple_size,
            if self.exponent.is_nan() { "NaN".to_string() } else { format!("{:.12}", self.exponent) },
            opt(self.delta.map(|d| d.to_string())),
            opt(self.grows.map(|g| g.to_string())),
            self.power_bound_holds
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn fm(q: u64) -> FactoredModulus {
        FactoredModulus::new(q).unwrap()
    }

    fn random_subset(all: &[PairElement], n: usize, seed: u64) -> GroupSet {
        let mut r = rng::stream(seed, 0);
        let v: Vec<_> = all.choose_multiple(&mut r, n).copied().collect();
        GroupSet::from_elements(v).unwrap()
    }

    fn left_only(q: u64) -> Vec<PairElement> {
        crate::sl2::enumerate_group(&fm(q), 1 << 20)
            .unwrap()
            .into_iter()
            .map(|g| PairElement::new(g, SL2Residue::identity(1)))
            .collect()
    }

    #[test]
    fn identity_and_subgroup() {
        let g = GroupSet::whole(&fm(3), &fm(2), 1 << 20).unwrap();
        let a = random_subset(g.elements(), 20, 1);
        assert_eq!(product_set(&a, &GroupSet::identity(3, 2)).unwrap(), a);
        assert_eq!(product_set(&g, &g).unwrap(), g);
    }

    #[test]
    fn product_matches_double_loop() {
        let g = GroupSet::whole(&fm(11), &fm(1), 1 << 20).unwrap();
        let all: Vec<_> = g.elements().to_vec();
        let pairs: Vec<_> = all.iter().map(|x| PairElement::new(x.left, x.left.pow(2))).collect();
        let sq = GroupSet::from_elements(pairs).unwrap();
        let a = random_subset(sq.elements(), 50, 7);
        let mut brute = std::collections::BTreeSet::new();
        for x in a.elements() {
            for y in a.elements() {
                brute.insert(x.mul(y).unwrap());
            }
        }
        assert_eq!(product_set(&a, &a).unwrap().len(), brute.len());
    }

    #[test]
    fn tripling_edge_cases() {
        let g = GroupSet::whole(&fm(5), &fm(1), 1 << 20).unwrap();
        let r = tripling(&g, Some(0.1), 3, 1 << 20).unwrap();
        assert!((r.exponent - 1.0).abs() < 1e-12);
        assert_eq!(r.grows, Some(false));
        let x = g.elements()[7];
        let s = GroupSet::from_elements(vec![x]).unwrap();
        let r = tripling(&s, None, 3, 10).unwrap();
        assert!(r.exponent.is_nan());
        assert_eq!(r.triple_size, 1);
        assert!(s.contains(&x) && power_set(&s, 3, 10).unwrap().contains(&x.pow(3)));
    }

    #[test]
    fn tripling_random_sqrt_set() {
        let g = GroupSet::whole(&fm(7), &fm(1), 1 << 20).unwrap();
        let n = (g.len() as f64).sqrt().round() as usize;
        let a = random_subset(g.elements(), n, 3);
        let r = tripling(&a, Some(0.05), 5, 1 << 20).unwrap();
        // recomputation with an ordered set
        let mut s3 = std::collections::BTreeSet::new();
        for x in a.elements() {
            for y in a.elements() {
                for z in a.elements() {
                    s3.insert(x.mul(y).unwrap().mul(z).unwrap());
                }
            }
        }
        assert_eq!(r.triple_size, s3.len());
        assert!((r.exponent - (s3.len() as f64).ln() / (n as f64).ln()).abs() < 1e-12);
        assert!(r.trajectory.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn covers_trivial_cases() {
        let (q1, q2) = (fm(4), fm(3));
        let g = GroupSet::whole(&q1, &q2, 1 << 20).unwrap();
        assert!(covers_congruence(&g, &fm(1), &fm(1), 1 << 20).unwrap());
        let one = GroupSet::identity(4, 3);
        for a in q1.divisors() {
            for b in q2.divisors() {
                let want = a == q1 && b == q2;
                assert_eq!(covers_congruence(&one, &a, &b, 1 << 20).unwrap(), want);
            }
        }
    }

    #[test]
    fn covers_matches_membership_scan() {
        let all = left_only(4);
        let mut r = rng::stream(11, 0);
        let mut v = all.clone();
        v.shuffle(&mut r);
        let missing: Vec<_> = v.iter().filter(|x| !x.is_identity()).take(3).copied().collect();
        let a = GroupSet::new(4, 1, all.iter().filter(|x| !missing.contains(x)).copied().collect()).unwrap();
        let a3 = power_set(&a, 3, 1 << 20).unwrap();
        for lvl in fm(4).divisors() {
            let members: Vec<_> = all.iter().filter(|x| x.left.reduce(lvl.value()).unwrap().is_identity()).collect();
            let scan = members.iter().all(|m| a3.elements().contains(m));
            assert_eq!(covers_congruence(&a3, &lvl, &fm(1), 1 << 20).unwrap(), scan);
        }
    }

    #[test]
    fn bounded_generation_full_and_missing() {
        let g = GroupSet::whole(&fm(5), &fm(1), 1 << 20).unwrap();
        assert_eq!(bounded_generation_search(&g, 4, None, 1 << 20).unwrap().found, Some((1, 1, 1)));
        let x = g.elements().iter().find(|x| !x.is_identity()).unwrap();
        let a = GroupSet::new(5, 1, g.elements().iter().filter(|y| *y != x).copied().collect()).unwrap();
        let (k, q1p, q2p) = bounded_generation_search(&a, 4, None, 1 << 20).unwrap().found.unwrap();
        let ak = power_set(&a, k, 1 << 20).unwrap();
        assert!(covers_congruence(&ak, &fm(q1p), &fm(q2p), 1 << 20).unwrap());
        assert_eq!((q1p, q2p), (1, 1));
        if k > 1 {
            assert!(!covers_congruence(&power_set(&a, k - 1, 1 << 20).unwrap(), &fm(1), &fm(1), 1 << 20).unwrap());
        }
    }

    #[test]
    fn bounded_generation_coset_fails() {
        // A inside the coset g Gamma(3) of SL2(Z/9) with g of order 3 mod 3
        let g = SL2Residue::new(9, 1, 1, 0, 1).unwrap();
        let kernel = enumerate_congruence(&fm(9), &fm(3), 1 << 20).unwrap();
        let a: Vec<_> = kernel
            .iter()
            .map(|k| PairElement::new(g.mul(k).unwrap(), SL2Residue::identity(1)))
            .collect();
        let a = GroupSet::from_elements(a).unwrap();
        let r = bounded_generation_search(&a, 2, Some(0.01), 1 << 20).unwrap();
        assert_eq!(r.found, None);
    }

    #[test]
    fn a0_filter_cases() {
        let g = GroupSet::whole(&fm(4), &fm(2), 1 << 20).unwrap();
        let a = random_subset(g.elements(), 30, 5).union(&GroupSet::identity(4, 2)).unwrap();
        let a0 = a0_filter(&a, &fm(4)).unwrap();
        assert!(a0.contains(&PairElement::identity(4, 2)));
        assert!(a0.elements().iter().all(|x| x.left.reduce(2).unwrap().is_identity()));
        assert_eq!(a0_filter(&a, &fm(1)).unwrap(), product_set(&a, &a).unwrap());
        assert!(a0_filter(&a, &fm(3)).is_err());
    }

    #[test]
    fn a0_filter_coset_reps_brute_force() {
        // one representative per coset of Gamma(2) in SL2(Z/4)
        let all = left_only(4);
        let mut reps: Vec<PairElement> = Vec::new();
        for x in &all {
            let r = x.left.reduce(2).unwrap();
            if !reps.iter().any(|y| y.left.reduce(2).unwrap() == r) {
                reps.push(*x);
            }
        }
        let reps: Vec<_> = reps.iter().map(|x| PairElement::new(x.left, SL2Residue::identity(2))).collect();
        let a = GroupSet::from_elements(reps.clone()).unwrap();
        let a0 = a0_filter(&a, &fm(2)).unwrap();
        let mut brute = Vec::new();
        for x in &reps {
            for y in &reps {
                let z = x.mul(y).unwrap();
                if z.left.reduce(2).unwrap().is_identity() {
                    brute.push(z);
                }
            }
        }
        assert_eq!(a0.elements(), sorted_dedup(brute).as_slice());
        assert!(!a0.is_empty());
    }

    #[test]
    fn coverage_trivial_cases() {
        let grid = [Ratio::new(0, 1), Ratio::new(1, 2), Ratio::new(1, 1)];
        let q = fm(8);
        let k = enumerate_congruence(&q, &fm(2), 1 << 20).unwrap();
        let a0 = GroupSet::from_elements(k.iter().map(|x| PairElement::new(*x, *x)).collect()).unwrap();
        let r = congruence_coverage_search(&a0, 1, &q, 4, &grid, 1 << 20).unwrap();
        let row = |qp: u64, rho: &str| r.rows.iter().find(|x| x.q_prime == qp && x.rho == rho).unwrap().c;
        assert_eq!(row(8, "1/2"), Some(1));
        assert_eq!(row(8, "0"), None);
        let one = GroupSet::identity(8, 8);
        let r = congruence_coverage_search(&one, 2, &q, 3, &grid, 1 << 20).unwrap();
        for x in &r.rows {
            assert_eq!(x.c.is_some(), x.level == x.q_prime, "{x:?}");
        }
    }

    #[test]
    fn coverage_matches_scan_mod_16() {
        let q = fm(16);
        let all = crate::sl2::enumerate_group(&q, 1 << 20).unwrap();
        let mut r = rng::stream(21, 0);
        let a: Vec<_> = all
            .choose_multiple(&mut r, 40)
            .map(|x| PairElement::new(*x, SL2Residue::identity(1)))
            .collect();
        let a0 = GroupSet::from_elements(a).unwrap();
        let grid = [Ratio::new(1, 4), Ratio::new(1, 2), Ratio::new(3, 4)];
        let rep = congruence_coverage_search(&a0, 1, &q, 3, &grid, 1 << 20).unwrap();
        let proj = a0.project(1).unwrap();
        let mut pw = vec![proj.clone()];
        for _ in 1..3 {
            let last = pw.last().unwrap();
            let mut s = std::collections::BTreeSet::new();
            for x in last {
                for y in &proj {
                    s.insert(x.mul(y).unwrap());
                }
            }
            pw.push(s.into_iter().collect());
        }
        for row in rep.rows.iter().filter(|x| x.q_prime == 16) {
            let members: Vec<_> = all.iter().filter(|x| x.reduce(row.level).unwrap().is_identity()).collect();
            let c = pw.iter().position(|p| members.iter().all(|m| p.contains(m))).map(|i| i + 1);
            assert_eq!(row.c, c, "{row:?}");
        }
    }

    #[test]
    fn candidate_order_and_bound() {
        let c = divisor_pair_candidates(&fm(12), &fm(5), None);
        let v: Vec<_> = c.iter().map(|(a, b)| (a.value(), b.value())).collect();
        assert_eq!(v[..4], [(1, 1), (3, 1), (4, 1), (1, 5)]);
        assert!(divisor_pair_candidates(&fm(12), &fm(5), Some(0.0)).is_empty());
    }

    fn small_set() -> impl Strategy<Value = (u64, Vec<usize>)> {
        (prop::sample::select(vec![3u64, 4, 5]), prop::collection::vec(0usize..10_000, 1..8))
    }

    fn pick(q: u64, idx: &[usize]) -> GroupSet {
        let all = GroupSet::whole(&fm(q), &fm(2), 1 << 20).unwrap();
        let n = all.len();
        GroupSet::from_elements(idx.iter().map(|i| all.elements()[i % n]).collect()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn associativity((q, i) in small_set(), j in prop::collection::vec(0usize..10_000, 1..8), k in prop::collection::vec(0usize..10_000, 1..8)) {
            let (a, b, c) = (pick(q, &i), pick(q, &j), pick(q, &k));
            let l = product_set(&product_set(&a, &b).unwrap(), &c).unwrap();
            let r = product_set(&a, &product_set(&b, &c).unwrap()).unwrap();
            prop_assert_eq!(l, r);
        }

        #[test]
        fn projection_of_product((q, i) in small_set(), j in prop::collection::vec(0usize..10_000, 1..8)) {
            let (a, b) = (pick(q, &i), pick(q, &j));
            let ab = product_set(&a, &b).unwrap();
            let pa = a.project(1).unwrap();
            let pb = b.project(1).unwrap();
            let mut want: Vec<_> = pa.iter().flat_map(|x| pb.iter().map(move |y| x.mul(y).unwrap())).collect();
            want = sorted_dedup(want);
            prop_assert_eq!(ab.project(1).unwrap(), want);
        }

        #[test]
        fn full_kernels_mean_identity((q, i) in small_set()) {
            let a = pick(q, &i);
            let got = covers_congruence(&a, &fm(q), &fm(2), 1 << 20).unwrap();
            prop_assert_eq!(got, a.contains(&PairElement::identity(q, 2)));
        }

        #[test]
        fn symmetric_power_bound((q, i) in small_set()) {
            let a = pick(q, &i);
            let s = a.union(&a.inverse()).unwrap();
            let r = tripling(&s, None, 6, 1 << 20).unwrap();
            prop_assert!(r.power_bound_holds);
            prop_assert!(r.trajectory.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(r.trajectory.iter().all(|&t| t as u128 <= s.ambient_order()));
        }
    }
}

//! Cayley operators, their second eigenvalue and Cheeger constants.

pub mod dense;

use std::time::Instant;

use num_rational::Ratio;
use rand::Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::factored::FactoredModulus;
use crate::sl2::{GroupElement, IntPair, PairElement, SL2Residue};
use dense::SymMatrix;

/// Largest dimension handled by the dense eigensolver in [`Method::Auto`].
pub const DENSE_MAX: usize = 2048;
/// Hard limit for an explicitly requested dense solve.
pub const DENSE_HARD_MAX: usize = 4096;
/// Largest dimension accepted by [`cheeger_exact`].
pub const CHEEGER_EXACT_MAX: usize = 22;
/// Default cap on the size of an enumerated Cayley group.
pub const DEFAULT_GROUP_CAP: usize = 10_000_000;

const CHUNK: usize = 4096;

/// Chunked dot product; the summation order depends only on the length.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let parts: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u * v).sum::<f64>())
        .collect();
    parts.iter().sum()
}

fn deflate_constant(v: &mut [f64]) {
    let parts: Vec<f64> = v.par_chunks(CHUNK).map(|c| c.iter().sum::<f64>()).collect();
    let mean = parts.iter().sum::<f64>() / v.len() as f64;
    v.par_iter_mut().for_each(|x| *x -= mean);
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.par_iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn closure_factor(gens: &[SL2Residue], q: u64, cap: usize) -> Result<Vec<SL2Residue>> {
    let id = SL2Residue::identity(q);
    let mut seen: FxHashMap<SL2Residue, ()> = FxHashMap::default();
    seen.insert(id, ());
    let mut queue = vec![id];
    let mut head = 0;
    while head < queue.len() {
        let x = queue[head];
        head += 1;
        for s in gens {
            let y = x.mul_same(s);
            if seen.insert(y, ()).is_none() {
                queue.push(y);
                if queue.len() > cap {
                    return Err(Error::CapExceeded {
                        what: "factor group closure",
                        needed: queue.len() as u128,
                        cap: cap as u128,
                    });
                }
            }
        }
    }
    queue.sort_unstable();
    Ok(queue)
}

/// The finite group `pi_{q1,q2}(<S>)`, enumerated with a compact index.
#[derive(Clone, Debug)]
pub struct CayleyGroup {
    q1: u64,
    q2: u64,
    left: Vec<SL2Residue>,
    right: Vec<SL2Residue>,
    left_index: FxHashMap<SL2Residue, u32>,
    right_index: FxHashMap<SL2Residue, u32>,
    // sorted full indices i * |right| + j; None when the group is the full product
    members: Option<Vec<u64>>,
}

impl CayleyGroup {
    /// Closure of `gens` under multiplication (a group, since it is finite).
    pub fn generated_by(gens: &[PairElement], cap: usize) -> Result<Self> {
        if gens.is_empty() {
            return Err(Error::Empty("generator set"));
        }
        let (q1, q2) = gens[0].moduli();
        if gens.iter().any(|g| g.moduli() != (q1, q2)) {
            return Err(Error::ModulusMismatch(format!("{q1},{q2}"), "mixed".into()));
        }
        let lg: Vec<SL2Residue> = gens.iter().map(|g| g.left).collect();
        let rg: Vec<SL2Residue> = gens.iter().map(|g| g.right).collect();
        let left = closure_factor(&lg, q1, cap)?;
        let right = closure_factor(&rg, q2, cap)?;
        let index = |v: &[SL2Residue]| -> FxHashMap<SL2Residue, u32> {
            v.iter().enumerate().map(|(i, &x)| (x, i as u32)).collect()
        };
        let left_index = index(&left);
        let right_index = index(&right);
        let (n1, n2) = (left.len(), right.len());
        let full = n1 as u128 * n2 as u128;
        if full > u32::MAX as u128 {
            return Err(Error::CapExceeded {
                what: "pair group index space",
                needed: full,
                cap: u32::MAX as u128,
            });
        }
        let ltab: Vec<Vec<u32>> = lg
            .iter()
            .map(|s| left.iter().map(|x| left_index[&x.mul_same(s)]).collect())
            .collect();
        let rtab: Vec<Vec<u32>> = rg
            .iter()
            .map(|s| right.iter().map(|x| right_index[&x.mul_same(s)]).collect())
            .collect();
        let id = PairElement::identity(q1, q2);
        let start = left_index[&id.left] as u64 * n2 as u64 + right_index[&id.right] as u64;
        let mut seen = vec![0u64; (full as usize).div_ceil(64)];
        seen[(start / 64) as usize] |= 1 << (start % 64);
        let mut queue = vec![start];
        let mut head = 0;
        while head < queue.len() {
            let x = queue[head];
            head += 1;
            let (i, j) = ((x / n2 as u64) as usize, (x % n2 as u64) as usize);
            for s in 0..gens.len() {
                let y = ltab[s][i] as u64 * n2 as u64 + rtab[s][j] as u64;
                let (w, b) = ((y / 64) as usize, y % 64);
                if seen[w] >> b & 1 == 0 {
                    seen[w] |= 1 << b;
                    queue.push(y);
                }
            }
            if queue.len() > cap {
                return Err(Error::CapExceeded {
                    what: "Cayley group closure",
                    needed: queue.len() as u128,
                    cap: cap as u128,
                });
            }
        }
        let members = if queue.len() as u128 == full {
            None
        } else {
            queue.sort_unstable();
            Some(queue)
        };
        Ok(CayleyGroup {
            q1,
            q2,
            left,
            right,
            left_index,
            right_index,
            members,
        })
    }

    pub fn moduli(&self) -> (u64, u64) {
        (self.q1, self.q2)
    }

    pub fn len(&self) -> usize {
        match &self.members {
            Some(m) => m.len(),
            None => self.left.len() * self.right.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_full_product(&self) -> bool {
        self.members.is_none()
    }

    pub fn left_factor(&self) -> &[SL2Residue] {
        &self.left
    }

    pub fn right_factor(&self) -> &[SL2Residue] {
        &self.right
    }

    fn full_index(&self, k: usize) -> u64 {
        match &self.members {
            Some(m) => m[k],
            None => k as u64,
        }
    }

    pub fn element(&self, k: usize) -> PairElement {
        let n2 = self.right.len() as u64;
        let x = self.full_index(k);
        PairElement::new(self.left[(x / n2) as usize], self.right[(x % n2) as usize])
    }

    pub fn index_of(&self, g: &PairElement) -> Option<usize> {
        let i = *self.left_index.get(&g.left)? as u64;
        let j = *self.right_index.get(&g.right)? as u64;
        let x = i * self.right.len() as u64 + j;
        match &self.members {
            Some(m) => m.binary_search(&x).ok(),
            None => Some(x as usize),
        }
    }

    pub fn elements(&self) -> Vec<PairElement> {
        (0..self.len()).map(|k| self.element(k)).collect()
    }
}

/// The normalised operator `(T f)(x) = |S|^-1 sum_s f(x s^-1)`, stored as one
/// index permutation per generator.
#[derive(Clone, Debug)]
pub struct CayleyOperator {
    n: usize,
    perms: Vec<Vec<u32>>,
}

fn check_symmetric(n: usize, perms: &[Vec<u32>]) -> Result<()> {
    let mut fwd: Vec<&[u32]> = perms.iter().map(|p| p.as_slice()).collect();
    let inv: Vec<Vec<u32>> = perms
        .iter()
        .map(|p| {
            let mut q = vec![0u32; n];
            for (x, &y) in p.iter().enumerate() {
                q[y as usize] = x as u32;
            }
            q
        })
        .collect();
    let mut bwd: Vec<&[u32]> = inv.iter().map(|p| p.as_slice()).collect();
    fwd.sort_unstable();
    bwd.sort_unstable();
    if fwd != bwd {
        return Err(Error::precondition("generator multiset is not closed under inverses"));
    }
    Ok(())
}

impl CayleyOperator {
    /// Build from explicit permutations `perms[s][x] = index of x s^-1`.
    pub fn from_perms(n: usize, perms: Vec<Vec<u32>>) -> Result<Self> {
        if perms.is_empty() {
            return Err(Error::Empty("generator set"));
        }
        for p in &perms {
            if p.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: p.len(),
                });
            }
            let mut hit = vec![false; n];
            for &y in p {
                if (y as usize) >= n || std::mem::replace(&mut hit[y as usize], true) {
                    return Err(Error::invalid("generator action is not a permutation"));
                }
            }
        }
        check_symmetric(n, &perms)?;
        Ok(CayleyOperator { n, perms })
    }

    /// Cayley graph of `Z/nZ` with the given steps.
    pub fn cyclic(n: usize, steps: &[i64]) -> Result<Self> {
        let perms = steps
            .iter()
            .map(|&s| {
                (0..n)
                    .map(|x| (x as i64 - s).rem_euclid(n as i64) as u32)
                    .collect()
            })
            .collect();
        Self::from_perms(n, perms)
    }

    /// Cayley operator over an explicit element list.
    pub fn from_elements<G: GroupElement>(elements: &[G], gens: &[G]) -> Result<Self> {
        let index: FxHashMap<&G, u32> = elements.iter().enumerate().map(|(i, g)| (g, i as u32)).collect();
        let mut perms = Vec::with_capacity(gens.len());
        for s in gens {
            let si = s.inv();
            let mut p = Vec::with_capacity(elements.len());
            for x in elements {
                let y = x.op(&si);
                p.push(*index.get(&y).ok_or_else(|| Error::invalid("element set is not closed under the generators"))?);
            }
            perms.push(p);
        }
        Self::from_perms(elements.len(), perms)
    }

    /// Operator of the generator multiset on `pi(<S>)`.
    pub fn on_group(group: &CayleyGroup, gens: &[PairElement]) -> Result<Self> {
        let n2 = group.right.len();
        let mut perms = Vec::with_capacity(gens.len());
        for s in gens {
            let si = s.inverse();
            let lt: Vec<u32> = group
                .left
                .iter()
                .map(|x| group.left_index.get(&x.mul_same(&si.left)).copied())
                .collect::<Option<_>>()
                .ok_or_else(|| Error::invalid("generator outside the group"))?;
            let rt: Vec<u32> = group
                .right
                .iter()
                .map(|x| group.right_index.get(&x.mul_same(&si.right)).copied())
                .collect::<Option<_>>()
                .ok_or_else(|| Error::invalid("generator outside the group"))?;
            let p: Vec<u32> = (0..group.len())
                .into_par_iter()
                .map(|k| {
                    let x = group.full_index(k);
                    let (i, j) = ((x / n2 as u64) as usize, (x % n2 as u64) as usize);
                    let y = lt[i] as u64 * n2 as u64 + rt[j] as u64;
                    match &group.members {
                        Some(m) => m.binary_search(&y).expect("closed") as u32,
                        None => y as u32,
                    }
                })
                .collect();
            perms.push(p);
        }
        Self::from_perms(group.len(), perms)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.perms.len()
    }

    /// Neighbour `x s^-1` of `x` for generator `s`.
    pub fn neighbour(&self, s: usize, x: usize) -> usize {
        self.perms[s][x] as usize
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        let inv = 1.0 / self.perms.len() as f64;
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            let base = c * CHUNK;
            for (k, o) in chunk.iter_mut().enumerate() {
                let x = base + k;
                let mut acc = 0.0;
                for p in &self.perms {
                    acc += v[p[x] as usize];
                }
                *o = acc * inv;
            }
        });
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: v.len(),
            });
        }
        let mut out = vec![0.0; self.n];
        self.apply_into(v, &mut out);
        Ok(out)
    }

    pub fn to_dense(&self) -> SymMatrix {
        let mut m = SymMatrix::zeros(self.n);
        let w = 1.0 / self.perms.len() as f64;
        for p in &self.perms {
            for (x, &y) in p.iter().enumerate() {
                m.add(x, y as usize, w);
            }
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Method {
    Auto,
    Power,
    Lanczos,
    Dense,
}

#[derive(Clone, Debug)]
pub struct Lambda2Options {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub method: Method,
}

impl Default for Lambda2Options {
    fn default() -> Self {
        Lambda2Options {
            tol: 1e-9,
            max_iter: 200_000,
            seed: 0,
            method: Method::Auto,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralReport {
    pub lambda2: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub method: Method,
    pub cheeger_lower: f64,
    pub cheeger_upper: f64,
    #[serde(serialize_with = "ser_ratio")]
    pub exact_cheeger: Option<Ratio<u64>>,
}

fn ser_ratio<S: serde::Serializer>(r: &Option<Ratio<u64>>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match r {
        Some(r) => s.serialize_str(&r.to_string()),
        None => s.serialize_none(),
    }
}

fn residual(op: &CayleyOperator, v: &[f64], lambda: f64) -> f64 {
    let tv = op.apply(v).expect("dimension");
    let r: Vec<f64> = tv.iter().zip(v).map(|(a, b)| a - lambda * b).collect();
    dot(&r, &r).sqrt()
}

fn start_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = crate::rng::stream(seed, 0);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    deflate_constant(&mut v);
    normalize(&mut v);
    v
}

fn lambda2_power(op: &CayleyOperator, opts: &Lambda2Options) -> (f64, usize, f64, bool) {
    let n = op.dim();
    let mut v = start_vector(n, opts.seed);
    let mut w = vec![0.0; n];
    let mut best = (f64::NAN, f64::INFINITY);
    let mut it = 0;
    while it < opts.max_iter {
        it += 1;
        op.apply_into(&v, &mut w);
        if it % 8 == 0 || it == opts.max_iter {
            let lambda = dot(&v, &w);
            let r: f64 = {
                let d: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a - lambda * b).collect();
                dot(&d, &d).sqrt()
            };
            if r < best.1 {
                best = (lambda, r);
            }
            if r <= opts.tol {
                return (lambda, it, r, true);
            }
        }
        // lazy step (I + T)/2 keeps the spectrum in [0, 1] so the top of the
        // algebraic spectrum dominates
        v.par_iter_mut().zip(w.par_iter()).for_each(|(a, b)| *a = 0.5 * (*a + b));
        deflate_constant(&mut v);
        if normalize(&mut v) == 0.0 {
            v = start_vector(n, opts.seed.wrapping_add(it as u64));
        }
    }
    (best.0, it, best.1, false)
}

// one Lanczos sweep from the unit vector `v0`; with `coeffs` the Ritz vector
// sum_i coeffs[i] v_i is accumulated instead of monitoring convergence
fn lanczos_pass(
    op: &CayleyOperator,
    v0: &[f64],
    steps: usize,
    tol: f64,
    coeffs: Option<&[f64]>,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = op.dim();
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut v_prev = vec![0.0; n];
    let mut v = v0.to_vec();
    let mut w = vec![0.0; n];
    let mut x = vec![0.0; if coeffs.is_some() { n } else { 0 }];
    for j in 0..steps {
        if let Some(c) = coeffs {
            let cj = c[j];
            x.par_iter_mut().zip(v.par_iter()).for_each(|(a, b)| *a += cj * b);
        }
        op.apply_into(&v, &mut w);
        let b_prev = beta.last().copied().unwrap_or(0.0);
        w.par_iter_mut().zip(v_prev.par_iter()).for_each(|(a, b)| *a -= b_prev * b);
        let a = dot(&w, &v);
        w.par_iter_mut().zip(v.par_iter()).for_each(|(x, y)| *x -= a * y);
        deflate_constant(&mut w);
        alpha.push(a);
        let b = dot(&w, &w).sqrt();
        beta.push(b);
        if coeffs.is_none() && (j + 1) % 5 == 0 || b < 1e-13 {
            if coeffs.is_none() {
                let (_, est) = ritz_top(&alpha, &beta);
                if est <= tol || b < 1e-13 {
                    break;
                }
            } else if b < 1e-13 {
                break;
            }
        }
        std::mem::swap(&mut v_prev, &mut v);
        v.par_iter_mut().zip(w.par_iter()).for_each(|(a, c)| *a = c / b);
    }
    (alpha, beta, x)
}

// top Ritz value and eigenvector of the Lanczos tridiagonal, with the
// residual estimate |beta_m s_m|
fn ritz_top(alpha: &[f64], beta: &[f64]) -> ((f64, Vec<f64>), f64) {
    let m = alpha.len();
    let t = dense::Tridiagonal::from_parts(alpha.to_vec(), beta[..m - 1].to_vec());
    let theta = t.eigenvalues()[0];
    let seed: Vec<f64> = (0..m).map(|i| 1.0 + 0.01 * i as f64).collect();
    let mut s = t.eigenvector(theta, &seed);
    let nrm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    s.iter_mut().for_each(|x| *x /= nrm);
    let est = (beta[m - 1] * s[m - 1]).abs();
    ((theta, s), est)
}

fn lambda2_lanczos(op: &CayleyOperator, opts: &Lambda2Options) -> (f64, usize, f64, bool) {
    let mut v0 = start_vector(op.dim(), opts.seed);
    let mut total = 0;
    let mut best = (f64::NAN, f64::INFINITY);
    // explicit restarts from the current Ritz vector; each sweep stops before
    // loss of orthogonality can produce spurious copies
    for _restart in 0..20 {
        let budget = opts.max_iter.saturating_sub(total).min(400);
        if budget < 2 {
            break;
        }
        let (alpha, beta, _) = lanczos_pass(op, &v0, budget, 0.5 * opts.tol, None);
        total += alpha.len();
        let ((_, s), _) = ritz_top(&alpha, &beta);
        let (_, _, mut x) = lanczos_pass(op, &v0, alpha.len(), 0.0, Some(&s));
        deflate_constant(&mut x);
        if normalize(&mut x) == 0.0 {
            break;
        }
        let lambda = dot(&x, &op.apply(&x).expect("dimension"));
        let r = residual(op, &x, lambda);
        if r < best.1 {
            best = (lambda, r);
        }
        if r <= opts.tol {
            return (lambda, total, r, true);
        }
        v0 = x;
    }
    (best.0, total, best.1, false)
}

fn lambda2_dense(op: &CayleyOperator, opts: &Lambda2Options) -> (f64, usize, f64, bool) {
    let m = op.to_dense();
    let t = dense::tridiagonalize(&m);
    let ev = if m.n <= dense::JACOBI_MAX {
        dense::jacobi_eigenvalues(&m)
    } else {
        t.eigenvalues()
    };
    let lambda = ev[1];
    let seed = start_vector(op.dim(), opts.seed);
    let mut v = t.eigenvector(lambda, &seed);
    deflate_constant(&mut v);
    if normalize(&mut v) == 0.0 {
        return (lambda, 0, f64::NAN, false);
    }
    let r = residual(op, &v, lambda);
    (lambda, 0, r, r <= opts.tol.max(1e-9))
}

/// Largest eigenvalue of `T` on mean-zero functions.
pub fn lambda2(op: &CayleyOperator, opts: &Lambda2Options) -> Result<SpectralReport> {
    let n = op.dim();
    if n < 2 {
        return Err(Error::precondition("lambda2 needs at least two vertices"));
    }
    let method = match opts.method {
        Method::Auto if n <= DENSE_MAX => Method::Dense,
        Method::Auto => Method::Lanczos,
        m => m,
    };
    let (lambda, iterations, res, converged) = match method {
        Method::Dense => {
            if n > DENSE_HARD_MAX {
                return Err(Error::CapExceeded {
                    what: "dense eigensolve dimension",
                    needed: n as u128,
                    cap: DENSE_HARD_MAX as u128,
                });
            }
            lambda2_dense(op, opts)
        }
        Method::Lanczos => lambda2_lanczos(op, opts),
        _ => lambda2_power(op, opts),
    };
    if !converged {
        log::warn!("lambda2 not converged: residual {res:e} after {iterations} iterations");
    }
    let (lo, hi) = cheeger_bounds(lambda, op.degree());
    Ok(SpectralReport {
        lambda2: lambda,
        iterations,
        residual: res,
        converged,
        method,
        cheeger_lower: lo,
        cheeger_upper: hi,
        exact_cheeger: None,
    })
}

/// All eigenvalues of `T` (dense), descending.
pub fn spectrum_dense(op: &CayleyOperator) -> Result<Vec<f64>> {
    if op.dim() > DENSE_HARD_MAX {
        return Err(Error::CapExceeded {
            what: "dense eigensolve dimension",
            needed: op.dim() as u128,
            cap: DENSE_HARD_MAX as u128,
        });
    }
    Ok(dense::symmetric_eigenvalues(&op.to_dense()))
}

/// Discrete Cheeger inequalities for a `degree`-regular graph.
pub fn cheeger_bounds(lambda2: f64, degree: usize) -> (f64, f64) {
    let l = lambda2.clamp(-1.0, 1.0);
    let d = degree as f64;
    (d * (1.0 - l) / 2.0, d * (2.0 * (1.0 - l)).sqrt())
}

/// Exact edge expansion by a Gray-code sweep over all vertex subsets.
pub fn cheeger_exact(op: &CayleyOperator) -> Result<Ratio<u64>> {
    let n = op.dim();
    if n > CHEEGER_EXACT_MAX {
        return Err(Error::CapExceeded {
            what: "exact Cheeger dimension",
            needed: n as u128,
            cap: CHEEGER_EXACT_MAX as u128,
        });
    }
    if n < 2 {
        return Err(Error::precondition("Cheeger constant needs at least two vertices"));
    }
    let nb: Vec<Vec<u32>> = (0..n)
        .map(|x| (0..op.degree()).map(|s| op.neighbour(s, x) as u32).collect())
        .collect();
    let mut set: u32 = 0;
    let mut size: u64 = 0;
    let mut boundary: i64 = 0;
    let mut best: Option<(u64, u64)> = None;
    for k in 1u32..(1 << n) {
        let v = k.trailing_zeros() as usize;
        let bit = 1u32 << v;
        let outside_new;
        let inside_old;
        if set & bit == 0 {
            let new = set | bit;
            outside_new = nb[v].iter().filter(|&&y| new >> y & 1 == 0).count() as i64;
            inside_old = nb[v].iter().filter(|&&y| set >> y & 1 == 1).count() as i64;
            boundary += outside_new - inside_old;
            set = new;
            size += 1;
        } else {
            let new = set & !bit;
            outside_new = nb[v].iter().filter(|&&y| set >> y & 1 == 0).count() as i64;
            inside_old = nb[v].iter().filter(|&&y| new >> y & 1 == 1).count() as i64;
            boundary += inside_old - outside_new;
            set = new;
            size -= 1;
        }
        if size > 0 && 2 * size <= n as u64 {
            let b = boundary as u64;
            let better = match best {
                None => true,
                Some((bb, bs)) => b * bs < bb * size,
            };
            if better {
                best = Some((b, size));
            }
        }
    }
    let (b, s) = best.expect("n >= 2 has a nonempty half");
    Ok(Ratio::new(b, s))
}

/// One row of a spectral-gap sweep.
#[derive(Clone, Debug, Serialize)]
pub struct GapRow {
    pub q: u64,
    pub n: usize,
    pub degree: usize,
    pub lambda2: f64,
    pub residual: f64,
    pub h_lower: f64,
    pub h_upper: f64,
    #[serde(serialize_with = "ser_ratio")]
    pub h_exact: Option<Ratio<u64>>,
    pub seconds: Option<f64>,
}

/// Spectral data of `pi_{q,q}(<S>)` for each modulus.
pub fn gap_sweep(gens: &[IntPair], moduli: &[u64], opts: &Lambda2Options, cap: usize) -> Result<Vec<GapRow>> {
    let mut rows = Vec::with_capacity(moduli.len());
    for &q in moduli {
        let t0 = Instant::now();
        FactoredModulus::new(q)?;
        let red: Vec<PairElement> = gens.iter().map(|g| g.reduce(q, q)).collect::<Result<_>>()?;
        let group = CayleyGroup::generated_by(&red, cap)?;
        let op = CayleyOperator::on_group(&group, &red)?;
        let (lambda, residual, lo, hi) = if op.dim() >= 2 {
            let rep = lambda2(&op, opts)?;
            (rep.lambda2, rep.residual, rep.cheeger_lower, rep.cheeger_upper)
        } else {
            (f64::NAN, 0.0, f64::NAN, f64::NAN)
        };
        let h_exact = if (2..=CHEEGER_EXACT_MAX).contains(&op.dim()) {
            Some(cheeger_exact(&op)?)
        } else {
            None
        };
        rows.push(GapRow {
            q,
            n: op.dim(),
            degree: op.degree(),
            lambda2: lambda,
            residual,
            h_lower: lo,
            h_upper: hi,
            h_exact,
            seconds: Some(t0.elapsed().as_secs_f64()),
        });
    }
    Ok(rows)
}

pub const GAP_CSV_HEADER: &str = "q,N,degree,lambda2,residual,h_lower,h_upper,h_exact,seconds";

/// CSV body; the `seconds` column is left empty unless `timing` is set so that
/// reruns are byte-identical.
pub fn gap_rows_to_csv(rows: &[GapRow], timing: bool) -> String {
    let mut s = String::from(GAP_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{:.12},{:.3e},{:.12},{:.12},{},{}\n",
            r.q,
            r.n,
            r.degree,
            r.lambda2,
            r.residual,
            r.h_lower,
            r.h_upper,
            r.h_exact.map(|h| h.to_string()).unwrap_or_default(),
            match (timing, r.seconds) {
                (true, Some(t)) => format!("{t:.3}"),
                _ => String::new(),
            }
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sl2::{enumerate_group, DEFAULT_ENUM_CAP};

    fn sl2_gens(q: u64, k: i64) -> Vec<SL2Residue> {
        vec![
            SL2Residue::new(q, 1, k, 0, 1).unwrap(),
            SL2Residue::new(q, 1, -k, 0, 1).unwrap(),
            SL2Residue::new(q, 1, 0, k, 1).unwrap(),
            SL2Residue::new(q, 1, 0, -k, 1).unwrap(),
        ]
    }

    #[test]
    fn constants_are_fixed() {
        let op = CayleyOperator::cyclic(10, &[1, -1, 3, -3]).unwrap();
        let v = vec![2.5; 10];
        assert_eq!(op.apply(&v).unwrap(), v);
        assert!(op.apply(&[1.0; 3]).is_err());
    }

    #[test]
    fn apply_is_mean_of_four() {
        let g = enumerate_group(&FactoredModulus::new(3).unwrap(), DEFAULT_ENUM_CAP).unwrap();
        let s = sl2_gens(3, 1);
        let op = CayleyOperator::from_elements(&g, &s).unwrap();
        let v: Vec<f64> = (0..g.len()).map(|i| (i * i % 7) as f64).collect();
        let tv = op.apply(&v).unwrap();
        for (x, gx) in g.iter().enumerate() {
            let expect: f64 = s
                .iter()
                .map(|si| v[g.binary_search(&gx.mul(&si.inverse()).unwrap()).unwrap()])
                .sum::<f64>()
                / 4.0;
            assert!((tv[x] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn coset_indicators_stay_constant() {
        // steps +-2 on Z/8 preserve the even/odd cosets
        let op = CayleyOperator::cyclic(8, &[2, -2]).unwrap();
        let v: Vec<f64> = (0..8).map(|x| (x % 2) as f64).collect();
        assert_eq!(op.apply(&v).unwrap(), v);
        let rep = lambda2(&op, &Lambda2Options::default()).unwrap();
        assert!((rep.lambda2 - 1.0).abs() < 1e-9);
        let rep = lambda2(&op, &Lambda2Options { method: Method::Power, ..Default::default() }).unwrap();
        assert!((rep.lambda2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn circulant_closed_form() {
        for n in [4usize, 5, 6, 9, 16, 33] {
            let op = CayleyOperator::cyclic(n, &[1, -1]).unwrap();
            let exact = (2.0 * std::f64::consts::PI / n as f64).cos();
            for method in [Method::Dense, Method::Power] {
                let rep = lambda2(&op, &Lambda2Options { method, tol: 1e-12, ..Default::default() }).unwrap();
                assert!((rep.lambda2 - exact).abs() < 1e-10, "n={n} {method:?}: {}", rep.lambda2);
            }
        }
        let op = CayleyOperator::cyclic(6, &[1, -1]).unwrap();
        let rep = lambda2(&op, &Lambda2Options::default()).unwrap();
        assert!((rep.lambda2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sl2_f5_power_matches_dense() {
        let g = enumerate_group(&FactoredModulus::new(5).unwrap(), DEFAULT_ENUM_CAP).unwrap();
        let op = CayleyOperator::from_elements(&g, &sl2_gens(5, 2)).unwrap();
        let d = lambda2(&op, &Lambda2Options { method: Method::Dense, ..Default::default() }).unwrap();
        let p = lambda2(&op, &Lambda2Options { method: Method::Power, tol: 1e-10, ..Default::default() }).unwrap();
        assert!(p.converged && d.converged);
        assert!((d.lambda2 - p.lambda2).abs() < 1e-8, "{} vs {}", d.lambda2, p.lambda2);
        let spec = spectrum_dense(&op).unwrap();
        assert!((spec[0] - 1.0).abs() < 1e-12);
        assert!((spec[1] - d.lambda2).abs() < 1e-12);
    }

    #[test]
    fn self_adjoint() {
        let g = enumerate_group(&FactoredModulus::new(7).unwrap(), DEFAULT_ENUM_CAP).unwrap();
        let op = CayleyOperator::from_elements(&g, &sl2_gens(7, 1)).unwrap();
        let v: Vec<f64> = (0..g.len()).map(|i| ((i * 31 % 17) as f64).sin()).collect();
        let w: Vec<f64> = (0..g.len()).map(|i| ((i * 13 % 23) as f64).cos()).collect();
        let a = dot(&op.apply(&v).unwrap(), &w);
        let b = dot(&v, &op.apply(&w).unwrap());
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_generators_rejected() {
        assert!(CayleyOperator::cyclic(7, &[1, 2]).is_err());
        let g = enumerate_group(&FactoredModulus::new(3).unwrap(), DEFAULT_ENUM_CAP).unwrap();
        let s = vec![SL2Residue::new(3, 1, 1, 0, 1).unwrap()];
        assert!(CayleyOperator::from_elements(&g, &s).is_err());
    }

    #[test]
    fn cheeger_examples() {
        let c8 = CayleyOperator::cyclic(8, &[1, -1]).unwrap();
        assert_eq!(cheeger_exact(&c8).unwrap(), Ratio::new(1, 2));
        // complete Cayley graph on Z/6: |dA| = |A| (6 - |A|), minimised at |A| = 3
        let k6 = CayleyOperator::cyclic(6, &[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(cheeger_exact(&k6).unwrap(), Ratio::from_integer(3));
        let k2 = CayleyOperator::cyclic(2, &[1]).unwrap();
        assert_eq!(cheeger_exact(&k2).unwrap(), Ratio::from_integer(1));
        let big = CayleyOperator::cyclic(30, &[1, -1]).unwrap();
        assert!(cheeger_exact(&big).is_err());
    }

    // subset oracle without the Gray-code bookkeeping
    fn cheeger_brute(op: &CayleyOperator) -> Ratio<u64> {
        let n = op.dim();
        let mut best: Option<Ratio<u64>> = None;
        for mask in 1u32..(1 << n) {
            let size = mask.count_ones() as u64;
            if 2 * size > n as u64 {
                continue;
            }
            let mut b = 0;
            for x in 0..n {
                if mask >> x & 1 == 1 {
                    for s in 0..op.degree() {
                        if mask >> op.neighbour(s, x) & 1 == 0 {
                            b += 1;
                        }
                    }
                }
            }
            let r = Ratio::new(b, size);
            if best.is_none_or(|x| r < x) {
                best = Some(r);
            }
        }
        best.unwrap()
    }

    #[test]
    fn cheeger_gray_code_matches_brute_force() {
        for (n, steps) in [(9usize, vec![1i64, -1, 3, -3]), (12, vec![2, -2, 3, -3]), (7, vec![0, 1, -1])] {
            let op = CayleyOperator::cyclic(n, &steps).unwrap();
            assert_eq!(cheeger_exact(&op).unwrap(), cheeger_brute(&op));
        }
    }

    #[test]
    fn cheeger_bound_examples() {
        assert_eq!(cheeger_bounds(1.0, 4), (0.0, 0.0));
        assert_eq!(cheeger_bounds(-1.0, 3).0, 3.0);
        let c8 = CayleyOperator::cyclic(8, &[1, -1]).unwrap();
        let (lo, hi) = cheeger_bounds((std::f64::consts::PI / 4.0).cos(), 2);
        let h = cheeger_exact(&c8).unwrap();
        let hf = *h.numer() as f64 / *h.denom() as f64;
        assert!(lo <= hf && hf <= hi);
    }

    #[test]
    fn doubling_generators_keeps_lambda2() {
        let g = enumerate_group(&FactoredModulus::new(5).unwrap(), DEFAULT_ENUM_CAP).unwrap();
        let s = sl2_gens(5, 1);
        let s2: Vec<_> = s.iter().chain(s.iter()).copied().collect();
        let a = lambda2(&CayleyOperator::from_elements(&g, &s).unwrap(), &Lambda2Options::default()).unwrap();
        let b = lambda2(&CayleyOperator::from_elements(&g, &s2).unwrap(), &Lambda2Options::default()).unwrap();
        assert!((a.lambda2 - b.lambda2).abs() < 1e-10);
    }

    #[test]
    fn quotient_gap_is_smaller() {
        let gens = crate::gens::unimodular_dense_pairs();
        let opts = Lambda2Options::default();
        let rows = gap_sweep(&gens, &[2, 3, 6], &opts, DEFAULT_GROUP_CAP).unwrap();
        assert!(rows[0].lambda2 <= rows[2].lambda2 + 1e-8);
        assert!(rows[1].lambda2 <= rows[2].lambda2 + 1e-8);
        assert_eq!(gap_sweep(&gens, &[], &opts, 10).unwrap().len(), 0);
    }

    #[test]
    fn group_closure_is_subgroup_when_disconnected() {
        // (u, u) generates a diagonal copy inside SL2(Z/3)^2
        let u = SL2Residue::new(3, 1, 1, 0, 1).unwrap();
        let l = SL2Residue::new(3, 1, 0, 1, 1).unwrap();
        let gens: Vec<PairElement> = [u, l]
            .iter()
            .flat_map(|&x| [PairElement::new(x, x), PairElement::new(x, x).inverse()])
            .collect();
        let g = CayleyGroup::generated_by(&gens, 1000).unwrap();
        assert_eq!(g.len(), 24);
        assert!(!g.is_full_product());
        for k in 0..g.len() {
            assert_eq!(g.index_of(&g.element(k)), Some(k));
        }
        let op = CayleyOperator::on_group(&g, &gens).unwrap();
        assert_eq!(op.dim(), 24);
    }
}

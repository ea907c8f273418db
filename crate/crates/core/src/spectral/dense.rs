//! Dense symmetric eigensolvers used as oracles for the matrix-free path.
//!
//! Small matrices go through cyclic Jacobi rotations. Larger ones are reduced
//! to tridiagonal form by Householder reflections and finished with implicit
//! QL; the two routes are cross-checked in the tests below.

/// Size at or below which [`symmetric_eigenvalues`] uses Jacobi rotations.
pub const JACOBI_MAX: usize = 96;

/// Row-major symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymMatrix {
    pub n: usize,
    pub a: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            a: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] += v;
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.a[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(v)
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect()
    }
}

/// All eigenvalues by cyclic Jacobi sweeps, sorted descending.
pub fn jacobi_eigenvalues(m: &SymMatrix) -> Vec<f64> {
    let n = m.n;
    let mut a = m.a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Householder reduction `Q^T A Q = T` with the reflectors kept for back-transforms.
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
    // reflector k acts on coordinates k+1..n; stored as (v, beta) with H = I - beta v v^T
    reflectors: Vec<(Vec<f64>, f64)>,
}

impl Tridiagonal {
    /// A tridiagonal matrix given directly (no reflectors).
    pub fn from_parts(diag: Vec<f64>, off: Vec<f64>) -> Self {
        assert_eq!(off.len() + 1, diag.len().max(1));
        Tridiagonal {
            diag,
            off,
            reflectors: Vec::new(),
        }
    }
}

pub fn tridiagonalize(m: &SymMatrix) -> Tridiagonal {
    let n = m.n;
    let mut a = m.a.clone();
    let mut reflectors = Vec::with_capacity(n.saturating_sub(2));
    let mut off = vec![0.0; n.saturating_sub(1)];
    for k in 0..n.saturating_sub(2) {
        // column k below the diagonal
        let x: Vec<f64> = (k + 1..n).map(|i| a[i * n + k]).collect();
        let alpha = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if alpha == 0.0 {
            reflectors.push((vec![0.0; n - k - 1], 0.0));
            off[k] = 0.0;
            continue;
        }
        let sign = if x[0] >= 0.0 { 1.0 } else { -1.0 };
        let mut v = x.clone();
        v[0] += sign * alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        let beta = 2.0 / vnorm2;
        off[k] = -sign * alpha;
        // trailing block B = a[k+1.., k+1..]; B <- H B H
        let m2 = n - k - 1;
        let idx = |i: usize, j: usize| (k + 1 + i) * n + (k + 1 + j);
        // p = beta B v
        let p: Vec<f64> = (0..m2)
            .map(|i| beta * (0..m2).map(|j| a[idx(i, j)] * v[j]).sum::<f64>())
            .collect();
        let kk = beta / 2.0 * p.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>();
        let w: Vec<f64> = p.iter().zip(&v).map(|(pi, vi)| pi - kk * vi).collect();
        for i in 0..m2 {
            for j in 0..m2 {
                a[idx(i, j)] -= v[i] * w[j] + w[i] * v[j];
            }
        }
        reflectors.push((v, beta));
    }
    if n >= 2 {
        off[n - 2] = a[(n - 1) * n + (n - 2)];
    }
    let diag = (0..n).map(|i| a[i * n + i]).collect();
    Tridiagonal {
        diag,
        off,
        reflectors,
    }
}

impl Tridiagonal {
    /// Map a vector in the tridiagonal basis back to the original basis.
    pub fn back_transform(&self, y: &[f64]) -> Vec<f64> {
        let mut x = y.to_vec();
        for (k, (v, beta)) in self.reflectors.iter().enumerate().rev() {
            if *beta == 0.0 {
                continue;
            }
            let s: f64 = v.iter().zip(&x[k + 1..]).map(|(a, b)| a * b).sum();
            for (xi, vi) in x[k + 1..].iter_mut().zip(v) {
                *xi -= beta * s * vi;
            }
        }
        x
    }

    /// Eigenvalues by implicit QL with Wilkinson shifts, sorted descending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let n = self.diag.len();
        let mut d = self.diag.clone();
        let mut e = self.off.clone();
        e.push(0.0);
        for l in 0..n {
            let mut iter = 0;
            loop {
                let mut m = l;
                while m + 1 < n {
                    let dd = d[m].abs() + d[m + 1].abs();
                    if e[m].abs() <= f64::EPSILON * dd {
                        break;
                    }
                    m += 1;
                }
                if m == l {
                    break;
                }
                iter += 1;
                assert!(iter < 200, "QL iteration did not converge");
                let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                let mut r = g.hypot(1.0);
                g = d[m] - d[l] + e[l] / (g + if g >= 0.0 { r.abs() } else { -r.abs() });
                let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
                let mut i = m;
                let mut early = false;
                while i > l {
                    i -= 1;
                    let f = s * e[i];
                    let b = c * e[i];
                    r = f.hypot(g);
                    e[i + 1] = r;
                    if r == 0.0 {
                        d[i + 1] -= p;
                        e[m] = 0.0;
                        early = true;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[i + 1] - p;
                    r = (d[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[i + 1] = g + p;
                    g = c * r - b;
                }
                if early {
                    continue;
                }
                d[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        }
        d.sort_by(|x, y| y.total_cmp(x));
        d
    }

    /// Eigenvector of the tridiagonal matrix for an (accurate) eigenvalue
    /// `lambda`, by inverse iteration; returned in the original basis.
    pub fn eigenvector(&self, lambda: f64, seed_vec: &[f64]) -> Vec<f64> {
        let shift = lambda + 1e-10 * (1.0 + lambda.abs());
        // transform the seed into the tridiagonal basis (Q^T x)
        let mut y = self.forward_transform(seed_vec);
        for _ in 0..4 {
            y = solve_shifted(&self.diag, &self.off, shift, &y);
            let nrm = y.iter().map(|t| t * t).sum::<f64>().sqrt();
            if nrm == 0.0 || !nrm.is_finite() {
                break;
            }
            y.iter_mut().for_each(|t| *t /= nrm);
        }
        self.back_transform(&y)
    }

    fn forward_transform(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for (k, (v, beta)) in self.reflectors.iter().enumerate() {
            if *beta == 0.0 {
                continue;
            }
            let s: f64 = v.iter().zip(&y[k + 1..]).map(|(a, b)| a * b).sum();
            for (yi, vi) in y[k + 1..].iter_mut().zip(v) {
                *yi -= beta * s * vi;
            }
        }
        y
    }
}

// solve (T - shift I) x = b for tridiagonal T by Gaussian elimination with
// partial pivoting
fn solve_shifted(diag: &[f64], off: &[f64], shift: f64, b: &[f64]) -> Vec<f64> {
    let n = diag.len();
    if n == 1 {
        let d = diag[0] - shift;
        return vec![b[0] / if d == 0.0 { 1e-300 } else { d }];
    }
    // banded LU with one extra superdiagonal for pivoting
    let mut a: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            [
                diag[i] - shift,
                if i + 1 < n { off[i] } else { 0.0 },
                0.0,
            ]
        })
        .collect();
    let mut sub: Vec<f64> = (0..n).map(|i| if i + 1 < n { off[i] } else { 0.0 }).collect();
    let mut x = b.to_vec();
    for i in 0..n - 1 {
        // rows i and i+1; row i+1 has sub[i] in column i
        if sub[i].abs() > a[i][0].abs() {
            // swap rows i and i+1
            let ri = a[i];
            let below = [sub[i], a[i + 1][0], a[i + 1][1]];
            a[i] = below;
            sub[i] = ri[0];
            a[i + 1] = [ri[1], ri[2], 0.0];
            x.swap(i, i + 1);
        }
        let piv = if a[i][0] == 0.0 { 1e-300 } else { a[i][0] };
        let f = sub[i] / piv;
        a[i + 1][0] -= f * a[i][1];
        a[i + 1][1] -= f * a[i][2];
        x[i + 1] -= f * x[i];
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        if i + 1 < n {
            s -= a[i][1] * x[i + 1];
        }
        if i + 2 < n {
            s -= a[i][2] * x[i + 2];
        }
        let piv = if a[i][0] == 0.0 { 1e-300 } else { a[i][0] };
        x[i] = s / piv;
    }
    x
}

/// All eigenvalues sorted descending.
pub fn symmetric_eigenvalues(m: &SymMatrix) -> Vec<f64> {
    if m.n <= JACOBI_MAX {
        jacobi_eigenvalues(m)
    } else {
        tridiagonalize(m).eigenvalues()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_sym(n: usize, seed: u64) -> SymMatrix {
        let mut rng = crate::rng::stream(seed, 0);
        let mut m = SymMatrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = rng.gen_range(-1.0..1.0);
                m.a[i * n + j] = v;
                m.a[j * n + i] = v;
            }
        }
        m
    }

    #[test]
    fn diagonal_matrix() {
        let mut m = SymMatrix::zeros(3);
        m.a[0] = 2.0;
        m.a[4] = -1.0;
        m.a[8] = 5.0;
        assert_eq!(jacobi_eigenvalues(&m), vec![5.0, 2.0, -1.0]);
        let t = tridiagonalize(&m).eigenvalues();
        for (x, y) in t.iter().zip([5.0, 2.0, -1.0]) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn jacobi_and_ql_agree() {
        for (n, seed) in [(5, 1), (17, 2), (40, 3), (80, 4)] {
            let m = random_sym(n, seed);
            let a = jacobi_eigenvalues(&m);
            let b = tridiagonalize(&m).eigenvalues();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-10, "n={n}: {x} vs {y}");
            }
            let tr: f64 = (0..n).map(|i| m.get(i, i)).sum();
            assert!((a.iter().sum::<f64>() - tr).abs() < 1e-9);
        }
    }

    #[test]
    fn inverse_iteration_vector() {
        let m = random_sym(60, 9);
        let t = tridiagonalize(&m);
        let ev = t.eigenvalues();
        let seed: Vec<f64> = (0..60).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let v = t.eigenvector(ev[1], &seed);
        let mv = m.matvec(&v);
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let res: f64 = mv
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - ev[1] * b).powi(2))
            .sum::<f64>()
            .sqrt()
            / nrm;
        assert!(res < 1e-8, "residual {res}");
    }
}

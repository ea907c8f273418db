//! Random-walk measurements: exact decay of walk mass on algebraic events in a
//! finite quotient, and sampling of the integral walk with exact entries.

use std::ops::RangeInclusive;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::factored::FactoredModulus;
use crate::sl2::{mat_mul_mod, reduce_i128, IntMatrix2, IntPair, PairElement};
use crate::spectral::{CayleyGroup, CayleyOperator};

/// `L(g) = X1 a1 + Y1 b1 + Z1 c1 + W1 d1 + X2 a2 + ... + W2 d2`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LinearForm8 {
    coeffs: [i64; 8],
}

impl LinearForm8 {
    pub fn new(coeffs: [i64; 8]) -> Result<Self> {
        let g = coeffs.iter().fold(0i64, |acc, &c| acc.gcd(&c));
        if g != 1 {
            return Err(Error::precondition(format!(
                "linear form is not primitive (gcd {g})"
            )));
        }
        Ok(LinearForm8 { coeffs })
    }

    pub fn coeffs(&self) -> [i64; 8] {
        self.coeffs
    }

    pub fn eval_mod(&self, g: &PairElement, q: u64) -> u64 {
        let e: Vec<u64> = g.left.entries().iter().chain(g.right.entries().iter()).copied().collect();
        let mut acc: i128 = 0;
        for (c, x) in self.coeffs.iter().zip(e) {
            acc = (acc + *c as i128 * x as i128).rem_euclid(q as i128);
        }
        acc as u64
    }

    pub fn eval_exact(&self, g: &IntPair) -> BigRational {
        g.entries8()
            .iter()
            .zip(self.coeffs)
            .fold(BigRational::zero(), |acc, (x, c)| acc + *x * BigRational::from_integer(c.into()))
    }
}

/// `Tr(g1 xi1 g1^-1 eta1) + Tr(g2 xi2 g2^-1 eta2)` for traceless `xi`, `eta`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceForm {
    pub xi: [[i64; 4]; 2],
    pub eta: [[i64; 4]; 2],
}

impl TraceForm {
    /// Validates tracelessness and nonvanishing modulo every prime of `q`.
    pub fn new(xi: [[i64; 4]; 2], eta: [[i64; 4]; 2], q: &FactoredModulus) -> Result<Self> {
        for m in xi.iter().chain(eta.iter()) {
            if m[0] + m[3] != 0 {
                return Err(Error::precondition("trace form matrices must be traceless"));
            }
            for p in q.primes() {
                if m.iter().all(|x| x.rem_euclid(p as i64) == 0) {
                    return Err(Error::precondition(format!(
                        "trace form matrix vanishes modulo {p}"
                    )));
                }
            }
        }
        Ok(TraceForm { xi, eta })
    }

    pub fn eval_mod(&self, g: &PairElement, q: u64) -> u64 {
        let r = |m: [i64; 4]| m.map(|x| reduce_i128(x as i128, q));
        let mut acc = 0u64;
        for (k, x) in [g.left, g.right].iter().enumerate() {
            let x = x.reduce(q).expect("modulus divides");
            let xi = r(self.xi[k]);
            let eta = r(self.eta[k]);
            let conj = mat_mul_mod(mat_mul_mod(x.entries(), xi, q), x.inverse().entries(), q);
            let prod = mat_mul_mod(conj, eta, q);
            acc = (acc + prod[0] + prod[3]) % q;
        }
        acc
    }
}

/// Events measured by [`decay_profile`] and [`archimedean_decay`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum EventSpec {
    /// `L(g) = n (mod Q)`
    Linear { form: LinearForm8, n: i64 },
    /// trace form `= 0 (mod Q)`
    Trace { form: TraceForm },
    /// `tr^2 - 4 = 0 (mod Q)` on one coordinate
    E1 { side: u8 },
    /// lower-left entry `= 0 (mod Q)` on one coordinate
    E2 { side: u8 },
    /// `tr = n (mod Q)` on one coordinate
    W { n: i64, side: u8 },
    /// exact integral equality `L(g) = n`
    IntegralLinear { form: LinearForm8, n: i64 },
}

impl EventSpec {
    pub fn is_modular(&self) -> bool {
        !matches!(self, EventSpec::IntegralLinear { .. })
    }

    /// Evaluate a modular event on an element of the quotient mod `(q, q)`.
    pub fn holds_mod(&self, g: &PairElement, q: u64) -> bool {
        let side = |s: u8| if s == 2 { g.right } else { g.left };
        match self {
            EventSpec::Linear { form, n } => form.eval_mod(g, q) == reduce_i128(*n as i128, q),
            EventSpec::Trace { form } => form.eval_mod(g, q) == 0,
            EventSpec::E1 { side: s } => {
                let t = side(*s).trace() as u128;
                (t * t % q as u128 + q as u128 - 4 % q as u128) % q as u128 == 0
            }
            EventSpec::E2 { side: s } => side(*s).entries()[2] == 0,
            EventSpec::W { n, side: s } => side(*s).trace() == reduce_i128(*n as i128, q),
            EventSpec::IntegralLinear { form, n } => form.eval_mod(g, q) == reduce_i128(*n as i128, q),
        }
    }

    pub fn holds_exact(&self, g: &IntPair) -> Result<bool> {
        match self {
            EventSpec::IntegralLinear { form, n } => {
                Ok(form.eval_exact(g) == BigRational::from_integer(BigInt::from(*n)))
            }
            _ => Err(Error::precondition("exact evaluation needs an integral event")),
        }
    }

    /// Parse `e1[:side]`, `e2[:side]`, `w:n[:side]`, `linear:c1,..,c8:n`,
    /// `integral:c1,..,c8:n` or `trace:x1;x2;y1;y2` (each a comma list of 4).
    pub fn parse(text: &str, q: &FactoredModulus) -> Result<Self> {
        let parts: Vec<&str> = text.trim().split(':').collect();
        let bad = || Error::invalid(format!("cannot parse event {text:?}"));
        let side = |s: Option<&&str>| -> Result<u8> {
            match s {
                None => Ok(1),
                Some(v) => match v.trim() {
                    "1" => Ok(1),
                    "2" => Ok(2),
                    _ => Err(bad()),
                },
            }
        };
        let ints = |s: &str| -> Result<Vec<i64>> {
            s.split(',')
                .map(|x| x.trim().parse::<i64>().map_err(|_| bad()))
                .collect()
        };
        match parts[0].to_ascii_lowercase().as_str() {
            "e1" => Ok(EventSpec::E1 { side: side(parts.get(1))? }),
            "e2" => Ok(EventSpec::E2 { side: side(parts.get(1))? }),
            "w" => {
                let n = parts.get(1).ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
                Ok(EventSpec::W { n, side: side(parts.get(2))? })
            }
            kind @ ("linear" | "integral") => {
                let c = ints(parts.get(1).ok_or_else(bad)?)?;
                let coeffs: [i64; 8] = c.try_into().map_err(|_| bad())?;
                let n = parts.get(2).ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
                let form = LinearForm8::new(coeffs)?;
                Ok(if kind == "linear" {
                    EventSpec::Linear { form, n }
                } else {
                    EventSpec::IntegralLinear { form, n }
                })
            }
            "trace" => {
                let ms: Vec<[i64; 4]> = parts
                    .get(1)
                    .ok_or_else(bad)?
                    .split(';')
                    .map(|m| ints(m).and_then(|v| v.try_into().map_err(|_| bad())))
                    .collect::<Result<_>>()?;
                if ms.len() != 4 {
                    return Err(bad());
                }
                Ok(EventSpec::Trace {
                    form: TraceForm::new([ms[0], ms[1]], [ms[2], ms[3]], q)?,
                })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayRow {
    pub l: u32,
    pub mass: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayTable {
    pub q: u64,
    pub group_order: usize,
    pub rows: Vec<DecayRow>,
    /// Mass of the event under the uniform measure on the quotient group.
    pub uniform_mass: f64,
    /// `-log(mass) / log Q` at the largest `l`; `None` when that mass is zero.
    pub c_hat: Option<f64>,
}

/// Walk mass `pi_Q[chi_S^(l)](event)` for `l` in `l_range`, computed exactly
/// (in floating point) on the finite group `pi_{Q,Q}(<S>)`.
pub fn decay_profile(
    gens: &[IntPair],
    event: &EventSpec,
    q: &FactoredModulus,
    l_range: RangeInclusive<u32>,
    cap: usize,
) -> Result<DecayTable> {
    if !event.is_modular() {
        return Err(Error::precondition("decay_profile needs a modular event"));
    }
    let qv = q.value();
    if qv < 2 {
        return Err(Error::precondition("modular events need Q >= 2"));
    }
    let red: Vec<PairElement> = gens.iter().map(|g| g.reduce(qv, qv)).collect::<Result<_>>()?;
    let group = CayleyGroup::generated_by(&red, cap)?;
    let op = CayleyOperator::on_group(&group, &red)?;
    let n = group.len();
    let mask: Vec<bool> = (0..n)
        .into_par_iter()
        .map(|k| event.holds_mod(&group.element(k), qv))
        .collect();
    let uniform_mass = mask.iter().filter(|&&b| b).count() as f64 / n as f64;
    let mut dist = vec![0.0; n];
    dist[group.index_of(&PairElement::identity(qv, qv)).expect("identity")] = 1.0;
    let mut next = vec![0.0; n];
    let mut rows = Vec::new();
    let (lo, hi) = (*l_range.start(), *l_range.end());
    for l in 1..=hi {
        // chi_S^(l+1) = chi_S * chi_S^(l), which is T applied to the density
        op.apply_into(&dist, &mut next);
        std::mem::swap(&mut dist, &mut next);
        if l >= lo {
            let parts: Vec<f64> = dist
                .par_chunks(4096)
                .zip(mask.par_chunks(4096))
                .map(|(d, m)| d.iter().zip(m).filter(|(_, &b)| b).map(|(x, _)| x).sum::<f64>())
                .collect();
            rows.push(DecayRow {
                l,
                mass: parts.iter().sum(),
            });
        }
    }
    let c_hat = rows
        .last()
        .filter(|r| r.mass > 0.0)
        .map(|r| -r.mass.ln() / (qv as f64).ln());
    Ok(DecayTable {
        q: qv,
        group_order: n,
        rows,
        uniform_mass,
        c_hat,
    })
}

// integral pair as eight big integers, used when no generator has denominators
type IntEntries = [[BigInt; 4]; 2];

fn to_int_entries(g: &IntPair) -> Option<IntEntries> {
    if !(g.left.is_integral() && g.right.is_integral()) {
        return None;
    }
    let f = |m: &IntMatrix2| m.e.clone().map(|x| x.to_integer());
    Some([f(&g.left), f(&g.right)])
}

fn mul_int(x: &IntEntries, y: &IntEntries) -> IntEntries {
    let m = |a: &[BigInt; 4], b: &[BigInt; 4]| {
        [
            &a[0] * &b[0] + &a[1] * &b[2],
            &a[0] * &b[1] + &a[1] * &b[3],
            &a[2] * &b[0] + &a[3] * &b[2],
            &a[2] * &b[1] + &a[3] * &b[3],
        ]
    };
    [m(&x[0], &y[0]), m(&x[1], &y[1])]
}

/// `n_samples` independent products `s_l ... s_1` of uniform generators.
/// Sample `i` depends only on `(seed, i)`.
pub fn sample_walk(gens: &[IntPair], l: u32, n_samples: usize, seed: u64) -> Result<Vec<IntPair>> {
    if l == 0 {
        return Err(Error::precondition("walk length must be at least 1"));
    }
    if gens.is_empty() {
        return Err(Error::Empty("generator set"));
    }
    let ints: Option<Vec<IntEntries>> = gens.iter().map(to_int_entries).collect();
    Ok((0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = crate::rng::stream(seed, i as u64);
            match &ints {
                Some(ints) => {
                    let one = [BigInt::one(), BigInt::zero(), BigInt::zero(), BigInt::one()];
                    let mut g: IntEntries = [one.clone(), one];
                    for _ in 0..l {
                        let s = &ints[rng.gen_range(0..ints.len())];
                        g = mul_int(s, &g);
                    }
                    let [a, b] = g;
                    IntPair::new(IntMatrix2::from_ints(a), IntMatrix2::from_ints(b))
                }
                None => {
                    let mut g = IntPair::identity();
                    for _ in 0..l {
                        g = gens[rng.gen_range(0..gens.len())].mul(&g);
                    }
                    g
                }
            }
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct ArchRow {
    pub l: u32,
    pub hits: usize,
    pub samples: usize,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ArchTable {
    pub rows: Vec<ArchRow>,
    /// Least-squares slope of `-log(estimate)` against `l` over rows with hits.
    pub rate: Option<f64>,
}

/// Wilson score interval at `z` standard deviations.
pub fn wilson_interval(hits: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = hits as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Slope of the least-squares line through `(x, y)`.
pub fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Monte-Carlo estimates of `chi_S^(l)({L(g) = n})` with 95% Wilson intervals.
pub fn archimedean_decay(
    gens: &[IntPair],
    event: &EventSpec,
    ls: &[u32],
    n_samples: usize,
    seed: u64,
) -> Result<ArchTable> {
    if event.is_modular() {
        return Err(Error::precondition("archimedean decay needs an integral event"));
    }
    let mut rows = Vec::with_capacity(ls.len());
    for &l in ls {
        if l == 0 {
            return Err(Error::precondition("walk length must be at least 1"));
        }
        // distinct lengths get distinct seeds so rows are independent
        let samples = sample_walk(gens, l, n_samples, seed ^ ((l as u64) << 32))?;
        let hits = samples
            .iter()
            .map(|g| event.holds_exact(g))
            .collect::<Result<Vec<bool>>>()?
            .into_iter()
            .filter(|&b| b)
            .count();
        let (lo, hi) = wilson_interval(hits, n_samples, 1.96);
        rows.push(ArchRow {
            l,
            hits,
            samples: n_samples,
            estimate: hits as f64 / n_samples.max(1) as f64,
            ci_low: lo,
            ci_high: hi,
        });
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.hits > 0)
        .map(|r| (r.l as f64, -r.estimate.ln()))
        .collect();
    Ok(ArchTable {
        rate: fit_slope(&pts),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gens::{unimodular_dense_pairs, zariski_dense_pairs};
    use crate::measure::{Mode, SparseMeasure};

    fn fm(n: u64) -> FactoredModulus {
        FactoredModulus::new(n).unwrap()
    }

    #[test]
    fn primitivity() {
        assert!(LinearForm8::new([2, 4, 0, 0, 0, 0, 0, 6]).is_err());
        assert!(LinearForm8::new([0; 8]).is_err());
        assert!(LinearForm8::new([2, 3, 0, 0, 0, 0, 0, 0]).is_ok());
    }

    #[test]
    fn trace_form_validation() {
        let e = [0, 1, 0, 0];
        let h = [1, 0, 0, -1];
        assert!(TraceForm::new([e, e], [h, h], &fm(35)).is_ok());
        assert!(TraceForm::new([[1, 0, 0, 1], e], [h, h], &fm(35)).is_err());
        assert!(TraceForm::new([[0, 5, 0, 0], e], [h, h], &fm(35)).is_err());
    }

    #[test]
    fn e2_converges_to_uniform_count() {
        // uniform oracle: p(p-1) of the p(p^2-1) elements have c = 0
        let p = 5u64;
        let t = decay_profile(&unimodular_dense_pairs(), &EventSpec::E2 { side: 1 }, &fm(p), 1..=200, 1 << 24).unwrap();
        let last = t.rows.last().unwrap().mass;
        assert!((t.uniform_mass - 1.0 / (p + 1) as f64).abs() < 1e-12);
        assert!((last - 1.0 / 6.0).abs() < 1e-9, "{last}");
    }

    #[test]
    fn empty_event_has_no_mass() {
        // tr = 7 never holds mod 5 for... use an event that cannot occur: W(n) with
        // n outside the trace image of a unipotent-only group
        let u = IntMatrix2::from_i64(1, 1, 0, 1).unwrap();
        let gens = crate::gens::symmetrize(&[IntPair::new(u.clone(), u)]);
        let t = decay_profile(&gens, &EventSpec::W { n: 0, side: 1 }, &fm(5), 1..=20, 1000).unwrap();
        assert!(t.rows.iter().all(|r| r.mass == 0.0));
        assert!(t.c_hat.is_none());
    }

    #[test]
    fn first_step_avoiding_event() {
        // every generator has nonzero lower-left entry on the right side mod 7
        let t = decay_profile(&zariski_dense_pairs(), &EventSpec::E2 { side: 2 }, &fm(7), 1..=1, 1 << 24).unwrap();
        assert_eq!(t.rows[0].mass, 0.0);
    }

    #[test]
    fn sampling_examples() {
        let gens = unimodular_dense_pairs();
        let s = sample_walk(&gens, 1, 200, 3).unwrap();
        assert!(s.iter().all(|g| gens.contains(g)));
        let id = crate::gens::symmetrize(&[IntPair::identity()]);
        assert!(sample_walk(&id, 7, 10, 1).unwrap().iter().all(|g| *g == IntPair::identity()));
        assert!(sample_walk(&gens, 0, 1, 1).is_err());
        assert_eq!(sample_walk(&gens, 5, 20, 9).unwrap(), sample_walk(&gens, 5, 20, 9).unwrap());
    }

    #[test]
    fn sampled_mass_matches_exact_quotient() {
        // at l = 10 every |L(g)| is far below P, so L(g) = n iff L(g) = n mod P
        let gens = unimodular_dense_pairs();
        let form = LinearForm8::new([1, 0, 0, 1, 0, 0, 0, 0]).unwrap();
        let event = EventSpec::IntegralLinear { form, n: 2 };
        let big_p = 1_000_000_007u64;
        let red: Vec<PairElement> = gens.iter().map(|g| g.reduce(big_p, big_p).unwrap()).collect();
        let chi = SparseMeasure::uniform_on(&red, Mode::Exact).unwrap();
        let exact = chi.convolve_power(10, 1 << 22).unwrap().mass_on(|g| event.holds_mod(g, big_p)).to_f64();
        let n = 4000;
        let samples = sample_walk(&gens, 10, n, 11).unwrap();
        let hits = samples.iter().filter(|g| event.holds_exact(g).unwrap()).count();
        let p = hits as f64 / n as f64;
        let sigma = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((p - exact).abs() <= 3.0 * sigma + 1e-12, "{p} vs {exact}");
    }

    #[test]
    fn parity_obstruction() {
        // entries of words in A, B are congruent to the identity mod 2, so
        // b1 is even and never equals 1
        let form = LinearForm8::new([0, 1, 0, 0, 0, 0, 0, 0]).unwrap();
        let event = EventSpec::IntegralLinear { form, n: 1 };
        let t = archimedean_decay(&zariski_dense_pairs(), &event, &[2, 5, 9], 300, 4).unwrap();
        assert!(t.rows.iter().all(|r| r.hits == 0));
        assert!(archimedean_decay(&zariski_dense_pairs(), &event, &[0], 10, 1).is_err());
    }

    #[test]
    fn event_parsing() {
        let q = fm(7);
        assert_eq!(EventSpec::parse("e2", &q).unwrap(), EventSpec::E2 { side: 1 });
        assert_eq!(EventSpec::parse("E1:2", &q).unwrap(), EventSpec::E1 { side: 2 });
        assert_eq!(EventSpec::parse("w:3", &q).unwrap(), EventSpec::W { n: 3, side: 1 });
        assert!(EventSpec::parse("linear:2,2,0,0,0,0,0,0:1", &q).is_err());
        assert!(EventSpec::parse("integral:1,0,0,1,0,0,0,0:2", &q).is_ok());
        assert!(EventSpec::parse("trace:0,1,0,0;0,1,0,0;1,0,0,-1;1,0,0,-1", &q).is_ok());
        assert!(EventSpec::parse("bogus", &q).is_err());
    }

    #[test]
    fn wilson_and_slope() {
        let (lo, hi) = wilson_interval(50, 100, 1.96);
        assert!(lo < 0.5 && 0.5 < hi);
        let s = fit_slope(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]).unwrap();
        assert!((s - 2.0).abs() < 1e-12);
        assert!(fit_slope(&[(1.0, 1.0)]).is_none());
    }
}

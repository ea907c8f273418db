//! Generator files and a few standard generator sets.
//!
//! A generator file is a JSON array of pairs of 2x2 matrices:
//!
//! ```json
//! [ [ [["1","2"],["0","1"]], [["5","2"],["2","1"]] ], ... ]
//! ```
//!
//! Entries are decimal strings or `"m/n"` rationals (plain JSON integers are
//! accepted too). Every matrix must have determinant one and the multiset of
//! pairs must be closed under inversion.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::sl2::{IntMatrix2, IntPair};

fn entry_text(v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) if n.is_i64() || n.is_u64() => Ok(n.to_string()),
        _ => Err(Error::invalid(format!("matrix entry must be a string, got {v}"))),
    }
}

fn parse_matrix(v: &Value) -> Result<IntMatrix2> {
    let rows = v
        .as_array()
        .filter(|r| r.len() == 2)
        .ok_or_else(|| Error::invalid("matrix must be a 2x2 array"))?;
    let mut e = Vec::with_capacity(4);
    for r in rows {
        let r = r
            .as_array()
            .filter(|r| r.len() == 2)
            .ok_or_else(|| Error::invalid("matrix row must have two entries"))?;
        for x in r {
            e.push(entry_text(x)?);
        }
    }
    IntMatrix2::parse([&e[0], &e[1], &e[2], &e[3]].map(|s| s.as_str()))
}

/// Check that the multiset `gens` equals the multiset of inverses.
pub fn check_inverse_closed(gens: &[IntPair]) -> Result<()> {
    let mut count: BTreeMap<&IntPair, i64> = BTreeMap::new();
    for g in gens {
        *count.entry(g).or_insert(0) += 1;
    }
    let inverses: Vec<IntPair> = gens.iter().map(|g| g.inverse()).collect();
    for g in &inverses {
        match count.get_mut(g) {
            Some(c) => *c -= 1,
            None => {
                return Err(Error::precondition(format!(
                    "generator set is not symmetric: inverse {g} missing"
                )))
            }
        }
    }
    if count.values().any(|&c| c != 0) {
        return Err(Error::precondition("generator multiset is not symmetric"));
    }
    Ok(())
}

/// Parse a list of pairs without the symmetry check (used for plain sets).
pub fn parse_pairs(text: &str) -> Result<Vec<IntPair>> {
    let v: Value = serde_json::from_str(text)?;
    let arr = v
        .as_array()
        .ok_or_else(|| Error::invalid("expected a JSON array of matrix pairs"))?;
    arr.iter()
        .map(|p| {
            let p = p
                .as_array()
                .filter(|p| p.len() == 2)
                .ok_or_else(|| Error::invalid("each element must be a pair of matrices"))?;
            Ok(IntPair::new(parse_matrix(&p[0])?, parse_matrix(&p[1])?))
        })
        .collect()
}

pub fn parse_generators(text: &str) -> Result<Vec<IntPair>> {
    let gens = parse_pairs(text)?;
    if gens.is_empty() {
        return Err(Error::Empty("generator set"));
    }
    check_inverse_closed(&gens)?;
    Ok(gens)
}

pub fn load_generators(path: &Path) -> Result<Vec<IntPair>> {
    parse_generators(&std::fs::read_to_string(path)?)
}

pub fn load_pairs(path: &Path) -> Result<Vec<IntPair>> {
    parse_pairs(&std::fs::read_to_string(path)?)
}

pub fn to_json(gens: &[IntPair]) -> Value {
    Value::Array(
        gens.iter()
            .map(|g| {
                let m = |x: &IntMatrix2| serde_json::to_value(x.to_strings()).expect("strings");
                Value::Array(vec![m(&g.left), m(&g.right)])
            })
            .collect(),
    )
}

/// `gens` followed by their inverses.
pub fn symmetrize(gens: &[IntPair]) -> Vec<IntPair> {
    gens.iter()
        .cloned()
        .chain(gens.iter().map(|g| g.inverse()))
        .collect()
}

fn m(a: i64, b: i64, c: i64, d: i64) -> IntMatrix2 {
    IntMatrix2::from_i64(a, b, c, d).expect("determinant one")
}

/// `{(A, AB), (B, BA)}` and inverses, `A = [[1,2],[0,1]]`, `B = [[1,0],[2,1]]`.
///
/// The second coordinate has trace 6 where the first has trace 2, so the pair
/// is not the graph of an automorphism and the generated group is Zariski
/// dense in `SL2 x SL2`.
pub fn zariski_dense_pairs() -> Vec<IntPair> {
    let a = m(1, 2, 0, 1);
    let b = m(1, 0, 2, 1);
    symmetrize(&[
        IntPair::new(a.clone(), a.mul(&b)),
        IntPair::new(b.clone(), b.mul(&a)),
    ])
}

/// `{(U, UL), (L, LU)}` and inverses for the unipotent generators of `SL2(Z)`.
pub fn unimodular_dense_pairs() -> Vec<IntPair> {
    let u = m(1, 1, 0, 1);
    let l = m(1, 0, 1, 1);
    symmetrize(&[
        IntPair::new(u.clone(), u.mul(&l)),
        IntPair::new(l.clone(), l.mul(&u)),
    ])
}

/// Diagonal embedding `{(g, g)}` of `U, L` and inverses.
pub fn diagonal_pairs() -> Vec<IntPair> {
    let u = m(1, 1, 0, 1);
    let l = m(1, 0, 1, 1);
    symmetrize(&[IntPair::new(u.clone(), u), IntPair::new(l.clone(), l)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let g = zariski_dense_pairs();
        let text = to_json(&g).to_string();
        assert_eq!(parse_generators(&text).unwrap(), g);
    }

    #[test]
    fn rational_entries() {
        let text = r#"[[ [["1","1/2"],["0","1"]], [["1","0"],["0","1"]] ],
                       [ [["1","-1/2"],["0","1"]], [["1","0"],["0","1"]] ]]"#;
        let g = parse_generators(text).unwrap();
        assert_eq!(g[0].reduce(5, 5).unwrap().left.entries(), [1, 3, 0, 1]);
    }

    #[test]
    fn rejects_bad_input() {
        let asym = r#"[[ [["1","1"],["0","1"]], [["1","0"],["0","1"]] ]]"#;
        assert!(parse_generators(asym).is_err());
        let det = r#"[[ [["2","0"],["0","1"]], [["1","0"],["0","1"]] ]]"#;
        assert!(parse_generators(det).is_err());
        assert!(parse_generators("[]").is_err());
        assert!(parse_generators("{}").is_err());
    }

    #[test]
    fn standard_sets_are_symmetric() {
        for g in [zariski_dense_pairs(), unimodular_dense_pairs(), diagonal_pairs()] {
            check_inverse_closed(&g).unwrap();
        }
    }
}

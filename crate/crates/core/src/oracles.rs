//! Exact reference answers.
//!
//! Closed forms for Fubini–Study curvature and Beta-integral Gram matrices,
//! the rank-two weight decomposition, split-bundle classification, and line
//! bundle cohomology on `P^1` (closed form plus an independent Čech count).

use std::f64::consts::PI;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

/// Curvature of `d log(1 + |z|^2)` at the origin, per base direction.
pub fn fs_oracle(d: i64, m: usize) -> Vec<f64> {
    vec![d as f64; m]
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// `pi * a! (k - a)! / (k + 1)!`, the Gram diagonal of `O(d) + O(d)` at `z = 0`.
pub fn beta_gram_entry(k: usize, a: usize) -> f64 {
    PI * factorial(a) * factorial(k - a) / factorial(k + 1)
}

/// Predicted Gram diagonal and Nakano spectrum for `O(1) + O(1)` on `P^1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivariantPrediction {
    /// Gram diagonal at `z = 0`; `H(z) = diag * (1 + |z|^2)^{-(k + 2)}`.
    pub gram_diagonal: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

pub fn equivariant_oracle(k: usize) -> EquivariantPrediction {
    EquivariantPrediction {
        gram_diagonal: (0..=k).map(|a| beta_gram_entry(k, a)).collect(),
        eigenvalues: vec![(k + 2) as f64; k + 1],
    }
}

/// Nakano spectrum of `S^k E (x) det E` for unperturbed split `E = O(a) + O(b)` at `z = 0`.
///
/// `a` and `b` are per-direction degree tuples; the form is diagonal with entry
/// `(k + 1 - alpha) a_t + (alpha + 1) b_t` at `(t, alpha)`.
pub fn split_spectrum(a: &[i64], b: &[i64], k: usize) -> Vec<f64> {
    let mut out: Vec<f64> = a
        .iter()
        .zip(b)
        .flat_map(|(&at, &bt)| {
            (0..=k).map(move |al| ((k + 1 - al) as i64 * at + (al + 1) as i64 * bt) as f64)
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// A decreasing weight `lambda_1 >= ... >= lambda_r >= 0`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WeightVector {
    parts: Vec<u32>,
}

impl WeightVector {
    pub fn new(parts: Vec<u32>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Config("weight vector must be non-empty".into()));
        }
        if parts.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Config(format!("weight {parts:?} is not decreasing")));
        }
        Ok(Self { parts })
    }

    pub fn parts(&self) -> &[u32] {
        &self.parts
    }

    /// Number of positive entries.
    pub fn height(&self) -> u32 {
        self.parts.iter().filter(|&&p| p > 0).count() as u32
    }
}

impl fmt::Display for WeightVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.parts.iter().map(u32::to_string).collect();
        write!(f, "({})", s.join(","))
    }
}

/// Degrees of `Gamma^lambda E (x) (det E)^l` for `E = O(a) + O(b)` on `P^1`.
///
/// Uses `Gamma^(l1, l2) E = S^(l1 - l2) E (x) (det E)^l2`, so with `p = l1 - l2`
/// and `t = l2 + height` the summands are `O(q a + (p - q) b + t (a + b))`.
pub fn gamma_decomposition_r2(lambda: &WeightVector, a: i64, b: i64) -> Result<Vec<i64>> {
    let [l1, l2] = lambda.parts() else {
        return Err(Error::Config(format!("rank-two decomposition needs two parts, got {lambda}")));
    };
    let p = (l1 - l2) as i64;
    let t = *l2 as i64 + lambda.height() as i64;
    Ok((0..=p).map(|q| q * a + (p - q) * b + t * (a + b)).collect())
}

/// `h^0(O(d))`, `h^1(O(d))` on `P^1`.
pub fn h0_p1(d: i64) -> u64 {
    (d + 1).max(0) as u64
}

pub fn h1_p1(d: i64) -> u64 {
    (-d - 1).max(0) as u64
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CohomologyEntry {
    pub degree: i64,
    pub h0: u64,
    pub h1: u64,
}

/// Per-summand cohomology and the aggregate `H^{1,1}` of a split bundle on `P^1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CohomologyTable {
    pub entries: Vec<CohomologyEntry>,
    /// `dim H^1(P^1, K (x) F) = sum_q h^1(O(d_q - 2))`
    pub h11: u64,
}

pub fn bott_p1(degrees: &[i64]) -> CohomologyTable {
    let entries: Vec<CohomologyEntry> =
        degrees.iter().map(|&d| CohomologyEntry { degree: d, h0: h0_p1(d), h1: h1_p1(d) }).collect();
    let h11 = degrees.iter().map(|&d| h1_p1(d - 2)).sum();
    CohomologyTable { entries, h11 }
}

/// `(h^0, h^1)` of `O(e)` from the two-chart Čech complex.
///
/// `C^0 = C[z] + C[w]`, `C^1 = C[z, 1/z]`, with `(f, g) -> f - z^e g(1/z)`;
/// both images are spanned by monomials, so `h^0` counts monomials hit by both
/// charts and `h^1` counts monomials hit by neither, inside a window wide
/// enough to contain every relevant exponent.
pub fn cech_p1(e: i64) -> (u64, u64) {
    let window = e.abs() + 4;
    let from_u0 = |n: i64| n >= 0;
    // z^e * w^j with w = 1/z gives z^(e - j), j >= 0
    let from_u1 = |n: i64| n <= e;
    let mut h0 = 0;
    let mut h1 = 0;
    for n in -window..=window {
        match (from_u0(n), from_u1(n)) {
            (true, true) => h0 += 1,
            (false, false) => h1 += 1,
            _ => {}
        }
    }
    (h0, h1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SplitClass {
    Ample,
    NefNotAmple,
    NotNef,
}

impl fmt::Display for SplitClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitClass::Ample => "AMPLE",
            SplitClass::NefNotAmple => "NEF_NOT_AMPLE",
            SplitClass::NotNef => "NOT_NEF",
        })
    }
}

pub fn classify_split(degrees: &[Vec<i64>]) -> SplitClass {
    let all = || degrees.iter().flatten();
    if all().all(|&d| d > 0) {
        SplitClass::Ample
    } else if all().all(|&d| d >= 0) {
        SplitClass::NefNotAmple
    } else {
        SplitClass::NotNef
    }
}

/// All decreasing `(l1, l2)` with `l1 <= bound`.
pub fn weights_r2(bound: u32) -> Vec<WeightVector> {
    let mut out = Vec::new();
    for l1 in 0..=bound {
        for l2 in 0..=l1 {
            out.push(WeightVector { parts: vec![l1, l2] });
        }
    }
    out
}

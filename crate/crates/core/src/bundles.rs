//! Weight models for split bundles over `P^1` and `P^1 x P^1`, the induced
//! weight on `O_{P(E)}(k + r)`, and curvature forms.
//!
//! Sign conventions: a metric `h = e^{-phi}` has curvature coefficients equal
//! to the complex Hessian of `phi`; a Gram family `H(z)` in a normal frame has
//! curvature `-d d-bar H`. Both give `d` for Fubini–Study degree `d`.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::direct_image::normal_frame_transform;
use crate::error::{Error, Result};
use crate::geometry::{complex_hessian, mixed_ddbar, ChartPoint, FiberPoint, Stencil};
use crate::linalg::{eigvalsh, hermitize, verdict_from_min, CMatrix, HermitianMatrix, Verdict, C64};

/// Base manifold of the split bundle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Base {
    #[serde(rename = "P1")]
    P1,
    #[serde(rename = "P1xP1")]
    P1xP1,
}

impl Base {
    pub fn dim(self) -> usize {
        match self {
            Base::P1 => 1,
            Base::P1xP1 => 2,
        }
    }
}

impl fmt::Display for Base {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Base::P1 => "P1",
            Base::P1xP1 => "P1xP1",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TermKind {
    /// `Re(z^p)`
    RePow(u32),
    /// `Im(z^p)`
    ImPow(u32),
    /// `|z|^{2p}`
    AbsPow(u32),
    /// `log(1 + |z|^2)`
    LogFs,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationTerm {
    pub coef: f64,
    pub coord: usize,
    pub kind: TermKind,
}

impl PerturbationTerm {
    fn eval(&self, z: &[C64]) -> f64 {
        let w = z[self.coord];
        let v = match self.kind {
            TermKind::RePow(p) => w.powu(p).re,
            TermKind::ImPow(p) => w.powu(p).im,
            TermKind::AbsPow(p) => w.norm_sqr().powi(p as i32),
            TermKind::LogFs => w.norm_sqr().ln_1p(),
        };
        self.coef * v
    }
}

/// A real potential added to a Fubini–Study weight.
///
/// Textual form is a sum of terms `c*re(zT^p)`, `c*im(zT^p)`, `c*|zT|^2p`,
/// `c*log(1+|zT|^2)`, where `zT` is `z`, `z1` or `z2` and the coefficient is
/// optional.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub source: String,
    pub terms: Vec<PerturbationTerm>,
}

impl Perturbation {
    pub fn eval(&self, z: &[C64]) -> f64 {
        self.terms.iter().map(|t| t.eval(z)).sum()
    }

    pub fn max_coord(&self) -> Option<usize> {
        self.terms.iter().map(|t| t.coord).max()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        if compact.is_empty() {
            return Err(Error::Config("empty perturbation".into()));
        }
        let mut terms = Vec::new();
        for (sign, body) in split_terms(&compact)? {
            let (coef, func) = match body.split_once('*') {
                Some((c, f)) => {
                    let c: f64 = c
                        .parse()
                        .map_err(|_| Error::Config(format!("bad coefficient '{c}' in '{text}'")))?;
                    (c, f)
                }
                None => (1.0, body.as_str()),
            };
            let (coord, kind) = parse_function(func)
                .ok_or_else(|| Error::Config(format!("unrecognised term '{func}' in '{text}'")))?;
            terms.push(PerturbationTerm { coef: sign * coef, coord, kind });
        }
        Ok(Self { source: text.to_string(), terms })
    }
}

fn split_terms(s: &str) -> Result<Vec<(f64, String)>> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut depth = 0_i32;
    let mut sign = 1.0;
    let mut cur = String::new();
    for (idx, &ch) in chars.iter().enumerate() {
        let exponent_sign = idx > 0
            && matches!(chars[idx - 1], 'e' | 'E')
            && idx > 1
            && chars[idx - 2].is_ascii_digit();
        match ch {
            '(' => {
                depth += 1;
                cur.push(ch);
            }
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return Err(Error::Config(format!("unbalanced parentheses in '{s}'")));
                }
                cur.push(ch);
            }
            '+' | '-' if depth == 0 && !exponent_sign => {
                if !cur.is_empty() {
                    out.push((sign, std::mem::take(&mut cur)));
                }
                sign = if ch == '-' { -1.0 } else { 1.0 };
            }
            _ => cur.push(ch),
        }
    }
    if depth != 0 {
        return Err(Error::Config(format!("unbalanced parentheses in '{s}'")));
    }
    if cur.is_empty() {
        return Err(Error::Config(format!("dangling operator in '{s}'")));
    }
    out.push((sign, cur));
    Ok(out)
}

fn parse_coord(s: &str) -> Option<usize> {
    match s {
        "z" | "z1" => Some(0),
        "z2" => Some(1),
        _ => None,
    }
}

fn parse_function(f: &str) -> Option<(usize, TermKind)> {
    if let Some(inner) = f.strip_prefix("log(1+|").and_then(|r| r.strip_suffix("|^2)")) {
        return Some((parse_coord(inner)?, TermKind::LogFs));
    }
    if let Some(rest) = f.strip_prefix('|') {
        let (var, exp) = rest.split_once("|^")?;
        let e: u32 = exp.parse().ok()?;
        if e == 0 || !e.is_multiple_of(2) {
            return None;
        }
        return Some((parse_coord(var)?, TermKind::AbsPow(e / 2)));
    }
    let (ctor, inner): (fn(u32) -> TermKind, &str) = if let Some(r) = f.strip_prefix("re(") {
        (TermKind::RePow, r.strip_suffix(')')?)
    } else {
        let r = f.strip_prefix("im(")?;
        (TermKind::ImPow, r.strip_suffix(')')?)
    };
    let (var, p) = match inner.split_once('^') {
        Some((v, p)) => (v, p.parse().ok()?),
        None => (inner, 1),
    };
    if p == 0 {
        return None;
    }
    Some((parse_coord(var)?, ctor(p)))
}

/// Weight `phi(z) = sum_t degrees[t] log(1 + |z_t|^2) + perturbation(z)` of a line bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct LineWeight {
    pub degrees: Vec<i64>,
    pub perturbation: Option<Perturbation>,
}

impl LineWeight {
    pub fn fubini_study(degrees: Vec<i64>) -> Self {
        Self { degrees, perturbation: None }
    }

    pub fn with_perturbation(mut self, p: Perturbation) -> Self {
        self.perturbation = Some(p);
        self
    }

    pub fn value(&self, z: &[C64]) -> f64 {
        let fs: f64 =
            self.degrees.iter().zip(z).map(|(&d, w)| d as f64 * w.norm_sqr().ln_1p()).sum();
        fs + self.perturbation.as_ref().map_or(0.0, |p| p.eval(z))
    }
}

/// A split bundle `O(a_1) + ... + O(a_r)` with per-summand weights.
#[derive(Clone, Debug, PartialEq)]
pub struct BundleSpec {
    pub base: Base,
    pub summands: Vec<LineWeight>,
}

impl BundleSpec {
    pub fn new(base: Base, summands: Vec<LineWeight>) -> Result<Self> {
        if summands.is_empty() {
            return Err(Error::Config("bundle needs at least one summand".into()));
        }
        for (i, s) in summands.iter().enumerate() {
            if s.degrees.len() != base.dim() {
                return Err(Error::Config(format!(
                    "summand {i} has {} degree entries but base {base} has dimension {}",
                    s.degrees.len(),
                    base.dim()
                )));
            }
            if let Some(c) = s.perturbation.as_ref().and_then(Perturbation::max_coord) {
                if c >= base.dim() {
                    return Err(Error::Config(format!(
                        "perturbation of summand {i} uses z{} on base {base}",
                        c + 1
                    )));
                }
            }
        }
        Ok(Self { base, summands })
    }

    /// Unperturbed Fubini–Study bundle from per-summand degree tuples.
    pub fn split(base: Base, degrees: &[Vec<i64>]) -> Result<Self> {
        Self::new(base, degrees.iter().cloned().map(LineWeight::fubini_study).collect())
    }

    /// `O(a) + O(b)` on `P^1`.
    pub fn p1(a: i64, b: i64) -> Self {
        Self::split(Base::P1, &[vec![a], vec![b]]).expect("valid P1 bundle")
    }

    pub fn rank(&self) -> usize {
        self.summands.len()
    }

    pub fn base_dim(&self) -> usize {
        self.base.dim()
    }

    pub fn degrees(&self) -> Vec<Vec<i64>> {
        self.summands.iter().map(|s| s.degrees.clone()).collect()
    }

    pub fn is_ample(&self) -> bool {
        self.summands.iter().all(|s| s.degrees.iter().all(|&d| d > 0))
    }

    pub fn is_nef(&self) -> bool {
        self.summands.iter().all(|s| s.degrees.iter().all(|&d| d >= 0))
    }

    pub fn is_perturbed(&self) -> bool {
        self.summands.iter().any(|s| s.perturbation.is_some())
    }
}

/// Complex Hessian of the weight, i.e. the curvature of `h = e^{-phi}`.
pub fn line_curvature(w: &LineWeight, at: &ChartPoint, stencil: &Stencil) -> Result<HermitianMatrix> {
    let m = complex_hessian(|z: &[C64]| Ok(C64::new(w.value(z), 0.0)), at.coords(), stencil)?;
    Ok(hermitize(&m)?.0)
}

/// Weight of `O_{P(E)}(twist)` in the affine fiber chart `w = (1, zeta_1, ..)`:
/// `twist * log sum_i |w_i|^2 e^{phi_i(z)}`.
#[derive(Clone, Debug)]
pub struct ProjWeight {
    pub bundle: BundleSpec,
    pub twist: usize,
}

impl ProjWeight {
    pub fn base_dim(&self) -> usize {
        self.bundle.base_dim()
    }

    pub fn fiber_dim(&self) -> usize {
        self.bundle.rank() - 1
    }

    pub fn eval(&self, z: &[C64], zeta: &[C64]) -> f64 {
        let mut exps = Vec::with_capacity(self.bundle.rank());
        exps.push(self.bundle.summands[0].value(z));
        for (s, w) in self.bundle.summands[1..].iter().zip(zeta) {
            let r2 = w.norm_sqr();
            if r2 > 0.0 {
                exps.push(s.value(z) + r2.ln());
            }
        }
        let top = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = exps.iter().map(|e| (e - top).exp()).sum();
        self.twist as f64 * (top + sum.ln())
    }

    /// Evaluation on concatenated coordinates `(z_1..z_m, zeta_1..zeta_f)`.
    pub fn eval_joint(&self, p: &[C64]) -> f64 {
        let m = self.base_dim();
        self.eval(&p[..m], &p[m..])
    }
}

pub fn proj_weight(bundle: &BundleSpec, k: usize) -> Result<ProjWeight> {
    match bundle.rank() {
        2 | 3 => Ok(ProjWeight { bundle: bundle.clone(), twist: k + bundle.rank() }),
        r => Err(Error::Unsupported(format!("projectivized bundles of rank {r}"))),
    }
}

/// Outcome of the positivity scan of the total weight.
#[derive(Clone, Debug, Serialize)]
pub struct TotalPositivity {
    pub verdict: Verdict,
    pub min_eigenvalue: f64,
    pub worst_sample: String,
    pub samples: usize,
}

impl TotalPositivity {
    /// Fails with a precondition violation naming the sample if any sample was indefinite.
    pub fn require_nonnegative(self) -> Result<Self> {
        if self.verdict == Verdict::Indefinite {
            return Err(Error::Precondition(format!(
                "weight on O_P(E)(k+r) is not positive at {} (min eigenvalue {:.3e})",
                self.worst_sample, self.min_eigenvalue
            )));
        }
        Ok(self)
    }
}

fn describe(z: &[C64]) -> String {
    let parts: Vec<String> = z.iter().map(|w| format!("{:.4}{:+.4}i", w.re, w.im)).collect();
    format!("({})", parts.join(", "))
}

/// Checks the full `(m + f)`-dimensional complex Hessian of the total weight at each sample.
pub fn verify_total_positivity(
    weight: &ProjWeight,
    samples: &[(ChartPoint, FiberPoint)],
    stencil: &Stencil,
    margin: f64,
) -> Result<TotalPositivity> {
    let mut worst: Option<(Verdict, f64, String)> = None;
    for (z, zeta) in samples {
        let p: Vec<C64> = z.coords().iter().chain(zeta.coords()).copied().collect();
        let hess = complex_hessian(|q: &[C64]| Ok(C64::new(weight.eval_joint(q), 0.0)), &p, stencil)?;
        let (h, _) = hermitize(&hess)?;
        let eig = eigvalsh(&h)?;
        let verdict = verdict_from_min(eig.min, h.trace(), h.dim(), margin);
        let rank = |v: Verdict| match v {
            Verdict::PositiveDefinite => 0,
            Verdict::SemidefiniteWithinMargin => 1,
            Verdict::Indefinite => 2,
        };
        let replace = match &worst {
            None => true,
            Some((wv, wmin, _)) => rank(verdict) > rank(*wv) || (rank(verdict) == rank(*wv) && eig.min < *wmin),
        };
        if replace {
            worst = Some((verdict, eig.min, format!("z={} zeta={}", describe(z.coords()), describe(zeta.coords()))));
        }
    }
    let (verdict, min_eigenvalue, worst_sample) =
        worst.ok_or_else(|| Error::Precondition("no samples for positivity check".into()))?;
    Ok(TotalPositivity { verdict, min_eigenvalue, worst_sample, samples: samples.len() })
}

/// Deterministic 5 x 5 grid of (base, fiber) sample points.
pub fn default_samples(base_dim: usize, fiber_dim: usize) -> Vec<(ChartPoint, FiberPoint)> {
    let base_vals = [
        C64::new(0.0, 0.0),
        C64::new(0.5, 0.0),
        C64::new(-0.4, 0.3),
        C64::new(0.0, 0.8),
        C64::new(1.2, -0.6),
    ];
    let fiber_vals = [
        C64::new(0.0, 0.0),
        C64::new(0.7, 0.0),
        C64::new(-1.0, 0.5),
        C64::new(0.0, 2.0),
        C64::new(3.0, -1.0),
    ];
    let mut out = Vec::with_capacity(25);
    for bi in 0..base_vals.len() {
        for fi in 0..fiber_vals.len() {
            let z: Vec<C64> = (0..base_dim).map(|t| base_vals[(bi + 2 * t) % 5]).collect();
            let zeta: Vec<C64> = (0..fiber_dim).map(|t| fiber_vals[(fi + 3 * t) % 5]).collect();
            out.push((ChartPoint::new(z).expect("finite"), FiberPoint::new(zeta).expect("finite")));
        }
    }
    out
}

/// A holomorphic-frame Gram matrix depending on base coordinates.
pub trait MatrixFamily {
    fn dim(&self) -> usize;
    fn base_dim(&self) -> usize;
    fn eval(&self, z: &[C64]) -> Result<CMatrix>;
}

/// Adapter turning a closure into a [`MatrixFamily`].
pub struct FnFamily<F> {
    pub dim: usize,
    pub base_dim: usize,
    pub f: F,
}

impl<F: Fn(&[C64]) -> Result<CMatrix>> MatrixFamily for FnFamily<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn base_dim(&self) -> usize {
        self.base_dim
    }
    fn eval(&self, z: &[C64]) -> Result<CMatrix> {
        (self.f)(z)
    }
}

/// Chern curvature coefficients `c[i][j][alpha][beta]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureTensor {
    base_dim: usize,
    rank: usize,
    entries: Vec<C64>,
    /// Largest Hermitian asymmetry removed when the tensor was built.
    pub asymmetry: f64,
}

impl CurvatureTensor {
    pub fn zeros(base_dim: usize, rank: usize) -> Self {
        Self { base_dim, rank, entries: vec![C64::new(0.0, 0.0); base_dim * base_dim * rank * rank], asymmetry: 0.0 }
    }

    /// Builds a tensor from its `m x m` grid of `r x r` blocks `c[i][j][., .]`.
    pub fn from_blocks(blocks: &[Vec<CMatrix>]) -> Result<Self> {
        let m = blocks.len();
        let r = blocks.first().and_then(|row| row.first()).map_or(0, CMatrix::rows);
        let mut t = Self::zeros(m, r);
        for (i, row) in blocks.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Dimension("curvature blocks must form a square grid".into()));
            }
            for (j, b) in row.iter().enumerate() {
                if b.rows() != r || b.cols() != r {
                    return Err(Error::Dimension("curvature blocks must share one square shape".into()));
                }
                for a in 0..r {
                    for c in 0..r {
                        t.set(i, j, a, c, b[(a, c)]);
                    }
                }
            }
        }
        Ok(t)
    }

    fn idx(&self, i: usize, j: usize, a: usize, b: usize) -> usize {
        ((i * self.base_dim + j) * self.rank + a) * self.rank + b
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn get(&self, i: usize, j: usize, a: usize, b: usize) -> C64 {
        self.entries[self.idx(i, j, a, b)]
    }

    pub fn set(&mut self, i: usize, j: usize, a: usize, b: usize, v: C64) {
        let k = self.idx(i, j, a, b);
        self.entries[k] = v;
    }

    /// The `r x r` block `c[i][j][., .]`.
    pub fn block(&self, i: usize, j: usize) -> CMatrix {
        let mut out = CMatrix::zeros(self.rank, self.rank);
        for a in 0..self.rank {
            for b in 0..self.rank {
                out[(a, b)] = self.get(i, j, a, b);
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &CurvatureTensor) -> f64 {
        self.entries.iter().zip(&other.entries).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    fn from_nakano_matrix(base_dim: usize, rank: usize, m: &CMatrix) -> Self {
        let mut t = Self::zeros(base_dim, rank);
        for i in 0..base_dim {
            for j in 0..base_dim {
                for a in 0..rank {
                    for b in 0..rank {
                        t.set(i, j, a, b, m[(i * rank + a, j * rank + b)]);
                    }
                }
            }
        }
        t
    }
}

/// Curvature of a Gram family at `xi`, read off in the normal frame at `xi`.
pub fn curvature_from_gram(
    family: &dyn MatrixFamily,
    xi: &ChartPoint,
    stencil: &Stencil,
) -> Result<CurvatureTensor> {
    let normal = normal_frame_transform(family, xi, stencil)?;
    let m = family.base_dim();
    let mut blocks = Vec::with_capacity(m);
    for i in 0..m {
        let mut row = Vec::with_capacity(m);
        for j in 0..m {
            let d: CMatrix = mixed_ddbar(|z: &[C64]| normal.eval(z), xi.coords(), i, j, stencil)?;
            row.push(d.scale(C64::new(-1.0, 0.0)));
        }
        blocks.push(row);
    }
    let raw = CurvatureTensor::from_blocks(&blocks)?;
    let form = nakano_form(&raw);
    let mut t = CurvatureTensor::from_nakano_matrix(m, family.dim(), form.matrix.matrix());
    t.asymmetry = form.asymmetry;
    Ok(t)
}

/// Hermitian form on `T X (x) V`, indexed by pairs `(i, alpha)` as `i * rank + alpha`.
#[derive(Clone, Debug)]
pub struct NakanoForm {
    pub base_dim: usize,
    pub rank: usize,
    pub matrix: HermitianMatrix,
    pub asymmetry: f64,
}

pub fn nakano_form(c: &CurvatureTensor) -> NakanoForm {
    let (m, r) = (c.base_dim, c.rank);
    let mut theta = CMatrix::zeros(m * r, m * r);
    for i in 0..m {
        for j in 0..m {
            for a in 0..r {
                for b in 0..r {
                    theta[(i * r + a, j * r + b)] = c.get(i, j, a, b);
                }
            }
        }
    }
    let (matrix, asym) = hermitize(&theta).expect("square by construction");
    NakanoForm { base_dim: m, rank: r, matrix, asymmetry: asym.max(c.asymmetry) }
}

/// Default number of sphere grid points for [`griffiths_min`].
pub const GRIFFITHS_GRID: usize = 200;

fn griffiths_value(c: &CurvatureTensor, v: &[C64]) -> Result<f64> {
    let r = c.rank;
    let mut acc = CMatrix::zeros(r, r);
    for (i, vi) in v.iter().enumerate() {
        for (j, vj) in v.iter().enumerate() {
            acc.axpy(vi.conj() * vj, &c.block(i, j));
        }
    }
    Ok(eigvalsh(&hermitize(&acc)?.0)?.min)
}

/// Minimum of `Theta(v (x) e, v (x) e)` over unit `v`, `e`, approximated from above.
///
/// For `m = 2` the unit sphere is parametrised modulo phase by
/// `v = (cos t, e^{i s} sin t)`; a deterministic grid is followed by a
/// shrinking pattern search around the best grid point.
pub fn griffiths_min(c: &CurvatureTensor, grid_size: usize) -> Result<f64> {
    match c.base_dim {
        1 => griffiths_value(c, &[C64::new(1.0, 0.0)]),
        2 => {
            let eval = |t: f64, s: f64| {
                griffiths_value(c, &[C64::new(t.cos(), 0.0), C64::from_polar(t.sin(), s)])
            };
            let n_t = 10usize;
            let n_s = (grid_size / n_t).max(1);
            let (mut best_t, mut best_s, mut best) = (0.0, 0.0, f64::INFINITY);
            for a in 0..n_t {
                let t = 0.5 * PI * a as f64 / (n_t - 1) as f64;
                for b in 0..n_s {
                    let s = 2.0 * PI * b as f64 / n_s as f64;
                    let v = eval(t, s)?;
                    if v < best {
                        (best_t, best_s, best) = (t, s, v);
                    }
                }
            }
            let (mut dt, mut ds) = (0.5 * PI / (n_t - 1) as f64, 2.0 * PI / n_s as f64);
            for _ in 0..60 {
                let mut moved = false;
                for (et, es) in [(dt, 0.0), (-dt, 0.0), (0.0, ds), (0.0, -ds)] {
                    let t = (best_t + et).clamp(0.0, 0.5 * PI);
                    let s = best_s + es;
                    let v = eval(t, s)?;
                    if v < best {
                        (best_t, best_s, best) = (t, s, v);
                        moved = true;
                    }
                }
                if !moved {
                    dt *= 0.5;
                    ds *= 0.5;
                }
            }
            Ok(best)
        }
        m => Err(Error::Unsupported(format!("Griffiths scan for base dimension {m}"))),
    }
}

/// Curvature of the dual metric: `c_dual[i][j][a][b] = -c[i][j][b][a]`.
pub fn dual_curvature(c: &CurvatureTensor) -> CurvatureTensor {
    let mut out = CurvatureTensor::zeros(c.base_dim, c.rank);
    out.asymmetry = c.asymmetry;
    for i in 0..c.base_dim {
        for j in 0..c.base_dim {
            for a in 0..c.rank {
                for b in 0..c.rank {
                    out.set(i, j, a, b, -c.get(i, j, b, a));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn origin() -> ChartPoint {
        ChartPoint::origin(1)
    }

    #[test]
    fn fubini_study_line_curvature() {
        for d in [1, 2, 5] {
            let h = line_curvature(&LineWeight::fubini_study(vec![d]), &origin(), &Stencil::default()).unwrap();
            assert!((h[(0, 0)].re - d as f64).abs() < 1e-8);
        }
        // away from the origin the curvature is d (1+|z|^2)^{-2}
        let z = ChartPoint::new(vec![c(0.6, -0.3)]).unwrap();
        let h = line_curvature(&LineWeight::fubini_study(vec![3]), &z, &Stencil::default()).unwrap();
        assert!((h[(0, 0)].re - 3.0 / (1.45f64).powi(2)).abs() < 1e-8);
    }

    #[test]
    fn constant_and_additive_weights() {
        let zero = line_curvature(&LineWeight::fubini_study(vec![0]), &origin(), &Stencil::default()).unwrap();
        assert_eq!(zero[(0, 0)], c(0.0, 0.0));
        let z = ChartPoint::new(vec![c(0.2, 0.1)]).unwrap();
        let p = Perturbation::parse("0.4*|z|^4").unwrap();
        let a = line_curvature(&LineWeight::fubini_study(vec![2]), &z, &Stencil::default()).unwrap();
        let b = line_curvature(&LineWeight::fubini_study(vec![0]).with_perturbation(p.clone()), &z, &Stencil::default()).unwrap();
        let sum = line_curvature(&LineWeight::fubini_study(vec![2]).with_perturbation(p), &z, &Stencil::default()).unwrap();
        assert!((sum[(0, 0)] - a[(0, 0)] - b[(0, 0)]).norm() < 1e-9);
        // d d-bar 0.4 |z|^4 = 1.6 |z|^2
        assert!((b[(0, 0)].re - 1.6 * 0.05).abs() < 1e-8);
    }

    #[test]
    fn perturbation_grammar() {
        let p = Perturbation::parse("0.3*re(z^2) - im(z1) + 2e-1*|z2|^4 - log(1+|z|^2)").unwrap();
        assert_eq!(p.terms.len(), 4);
        assert_eq!(p.terms[0], PerturbationTerm { coef: 0.3, coord: 0, kind: TermKind::RePow(2) });
        assert_eq!(p.terms[1], PerturbationTerm { coef: -1.0, coord: 0, kind: TermKind::ImPow(1) });
        assert_eq!(p.terms[2], PerturbationTerm { coef: 0.2, coord: 1, kind: TermKind::AbsPow(2) });
        assert_eq!(p.terms[3], PerturbationTerm { coef: -1.0, coord: 0, kind: TermKind::LogFs });
        let z = [c(0.5, 0.5), c(1.0, 0.0)];
        let want = 0.3 * 0.0 - 0.5 + 0.2 * 1.0 - (1.5f64).ln();
        assert!((p.eval(&z) - want).abs() < 1e-15);
        for bad in ["", "re(w)", "|z|^3", "2*sin(z)", "re(z", "re(z)+"] {
            assert!(Perturbation::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn bundle_flags_and_validation() {
        assert!(BundleSpec::p1(1, 2).is_ample());
        let nef = BundleSpec::p1(0, 1);
        assert!(!nef.is_ample() && nef.is_nef());
        assert!(!BundleSpec::p1(-1, 3).is_nef());
        assert!(BundleSpec::split(Base::P1xP1, &[vec![1], vec![1]]).is_err());
        let p = Perturbation::parse("re(z2)").unwrap();
        assert!(BundleSpec::new(Base::P1, vec![LineWeight::fubini_study(vec![1]).with_perturbation(p)]).is_err());
    }

    #[test]
    fn proj_weight_examples() {
        let w = proj_weight(&BundleSpec::p1(1, 1), 0).unwrap();
        let (z, zeta) = ([c(0.3, 0.4)], [c(-0.5, 1.0)]);
        let want = 2.0 * ((1.25f64).ln() + (2.25f64).ln());
        assert!((w.eval(&z, &zeta) - want).abs() < 1e-13);

        let w = proj_weight(&BundleSpec::p1(3, 7), 2).unwrap();
        assert!((w.eval(&[c(0.0, 0.0)], &zeta) - 4.0 * (2.25f64).ln()).abs() < 1e-13);

        // |z|^2 = 1, |zeta|^2 = 1: 2 log(2 + 4)
        let w = proj_weight(&BundleSpec::p1(1, 2), 0).unwrap();
        let v = w.eval(&[c(0.6, 0.8)], &[c(0.0, 1.0)]);
        assert!((v - 2.0 * 6.0f64.ln()).abs() < 1e-13);

        let rank1 = BundleSpec::split(Base::P1, &[vec![1]]).unwrap();
        assert!(matches!(proj_weight(&rank1, 0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn total_positivity_examples() {
        let st = Stencil::default();
        let w = proj_weight(&BundleSpec::p1(1, 1), 0).unwrap();
        let rep = verify_total_positivity(&w, &default_samples(1, 1), &st, 1e-6).unwrap();
        assert_eq!(rep.verdict, Verdict::PositiveDefinite);
        assert_eq!(rep.samples, 25);

        let flat = proj_weight(&BundleSpec::p1(0, 0), 0).unwrap();
        let samples = vec![(ChartPoint::origin(1), FiberPoint::new(vec![c(0.3, 0.0)]).unwrap())];
        let rep = verify_total_positivity(&flat, &samples, &st, 1e-6).unwrap();
        assert_ne!(rep.verdict, Verdict::PositiveDefinite);

        let bad = proj_weight(&BundleSpec::p1(-1, 2), 1).unwrap();
        let rep = verify_total_positivity(&bad, &default_samples(1, 1), &st, 1e-6).unwrap();
        assert_eq!(rep.verdict, Verdict::Indefinite);
        let err = rep.require_nonnegative().unwrap_err();
        assert!(err.to_string().contains("zeta="));
    }

    #[test]
    fn fiber_hessian_positive_for_ample() {
        let w = proj_weight(&BundleSpec::p1(2, 5), 1).unwrap();
        for (z, zeta) in default_samples(1, 1) {
            let zc = z.coords().to_vec();
            let d: C64 = mixed_ddbar(
                |q: &[C64]| Ok(C64::new(w.eval(&zc, q), 0.0)),
                zeta.coords(),
                0,
                0,
                &Stencil::default(),
            )
            .unwrap();
            assert!(d.re > 0.0);
        }
    }

    fn rank_one_fs(d: i32) -> FnFamily<impl Fn(&[C64]) -> Result<CMatrix>> {
        FnFamily {
            dim: 1,
            base_dim: 1,
            f: move |z: &[C64]| Ok(CMatrix::from_diag(&[(1.0 + z[0].norm_sqr()).powi(-d)])),
        }
    }

    #[test]
    fn curvature_from_gram_examples() {
        let st = Stencil::default();
        let constant = FnFamily { dim: 2, base_dim: 1, f: |_: &[C64]| Ok(CMatrix::identity(2)) };
        let t = curvature_from_gram(&constant, &origin(), &st).unwrap();
        assert_eq!(t.max_abs_diff(&CurvatureTensor::zeros(1, 2)), 0.0);

        let t = curvature_from_gram(&rank_one_fs(3), &origin(), &st).unwrap();
        assert!((t.get(0, 0, 0, 0).re - 3.0).abs() < 1e-8);

        // block diagonal family on P1 x P1
        let fam = FnFamily {
            dim: 2,
            base_dim: 2,
            f: |z: &[C64]| {
                Ok(CMatrix::from_diag(&[
                    (1.0 + z[0].norm_sqr()).powi(-2) * (1.0 + z[1].norm_sqr()).powi(-1),
                    (1.0 + z[1].norm_sqr()).powi(-4),
                ]))
            },
        };
        let t = curvature_from_gram(&fam, &ChartPoint::origin(2), &st).unwrap();
        let want = [[[2.0, 0.0], [0.0, 0.0]], [[1.0, 0.0], [0.0, 4.0]]];
        for i in 0..2 {
            for j in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        let w = if i == j { want[i][a][b] } else { 0.0 };
                        assert!((t.get(i, j, a, b) - c(w, 0.0)).norm() < 1e-8, "{i}{j}{a}{b}");
                    }
                }
            }
        }
    }

    #[test]
    fn curvature_away_from_origin_and_scale_invariance() {
        let st = Stencil::default();
        let xi = ChartPoint::new(vec![c(0.4, -0.2)]).unwrap();
        let t = curvature_from_gram(&rank_one_fs(2), &xi, &st).unwrap();
        assert!((t.get(0, 0, 0, 0).re - 2.0 / 1.2f64.powi(2)).abs() < 1e-8);
        let scaled = FnFamily {
            dim: 1,
            base_dim: 1,
            f: |z: &[C64]| Ok(CMatrix::from_diag(&[7.5 * (1.0 + z[0].norm_sqr()).powi(-2)])),
        };
        let s = curvature_from_gram(&scaled, &xi, &st).unwrap();
        assert!(s.max_abs_diff(&t) < 1e-9);
    }

    #[test]
    fn singular_gram_is_rejected() {
        let fam = FnFamily { dim: 2, base_dim: 1, f: |_: &[C64]| Ok(CMatrix::from_diag(&[1.0, 0.0])) };
        assert!(curvature_from_gram(&fam, &origin(), &Stencil::default()).is_err());
    }

    fn diag_tensor(vals: &[[f64; 2]]) -> CurvatureTensor {
        // vals[i] = per-summand curvature in direction i
        let m = vals.len();
        let blocks: Vec<Vec<CMatrix>> = (0..m)
            .map(|i| (0..m).map(|j| if i == j { CMatrix::from_diag(&vals[i]) } else { CMatrix::zeros(2, 2) }).collect())
            .collect();
        CurvatureTensor::from_blocks(&blocks).unwrap()
    }

    #[test]
    fn nakano_form_layout() {
        let z = nakano_form(&CurvatureTensor::zeros(2, 3));
        assert_eq!(z.matrix.matrix().max_abs(), 0.0);
        let t = diag_tensor(&[[1.0, 2.0], [3.0, 4.0]]);
        let f = nakano_form(&t);
        let want = CMatrix::from_diag(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(f.matrix.matrix(), &want);
        let single = CurvatureTensor::from_blocks(&[vec![CMatrix::from_rows(&[
            vec![c(2.0, 0.0), c(0.1, 0.2)],
            vec![c(0.1, -0.2), c(1.0, 0.0)],
        ])
        .unwrap()]])
        .unwrap();
        assert_eq!(nakano_form(&single).matrix.matrix(), &single.block(0, 0));
    }

    #[test]
    fn griffiths_cases() {
        let t = diag_tensor(&[[1.5, 2.0], [3.0, 0.7]]);
        let g = griffiths_min(&t, GRIFFITHS_GRID).unwrap();
        assert!((g - 0.7).abs() < 1e-12);
        let single = CurvatureTensor::from_blocks(&[vec![CMatrix::from_diag(&[2.0, -1.0])]]).unwrap();
        assert_eq!(griffiths_min(&single, GRIFFITHS_GRID).unwrap(), -1.0);
    }

    #[test]
    fn griffiths_can_exceed_nakano() {
        // c_{ij ab} = delta_{ib} delta_{ja} + 0.5 delta_{ij} delta_{ab}: antisymmetric
        // u gives -1 + 0.5, decomposable v (x) e never goes below 0.5
        let mut t = CurvatureTensor::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        let mut v = 0.0;
                        if i == b && j == a {
                            v += 1.0;
                        }
                        if i == j && a == b {
                            v += 0.5;
                        }
                        t.set(i, j, a, b, c(v, 0.0));
                    }
                }
            }
        }
        let nak = eigvalsh(&nakano_form(&t).matrix).unwrap().min;
        let gri = griffiths_min(&t, GRIFFITHS_GRID).unwrap();
        assert!((nak - (-0.5)).abs() < 1e-12);
        assert!((gri - 0.5).abs() < 1e-9, "{gri}");
    }

    #[test]
    fn dual_examples() {
        let t = CurvatureTensor::from_blocks(&[vec![CMatrix::from_diag(&[4.0])]]).unwrap();
        assert_eq!(dual_curvature(&t).get(0, 0, 0, 0), c(-4.0, 0.0));
        let mixed = CurvatureTensor::from_blocks(&[vec![CMatrix::from_rows(&[
            vec![c(2.0, 0.0), c(0.3, 0.4)],
            vec![c(0.3, -0.4), c(5.0, 0.0)],
        ])
        .unwrap()]])
        .unwrap();
        assert_eq!(dual_curvature(&dual_curvature(&mixed)), mixed);
    }
}

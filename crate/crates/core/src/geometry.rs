//! Wirtinger finite differences and fiber quadrature.
//!
//! Derivatives act on fields `Fn(&[C64]) -> Result<V>` where `V` is any
//! [`FieldValue`] (a scalar, a vector, or a matrix), so a whole Gram matrix
//! can be differentiated from a single set of stencil evaluations.
//! Fiber integrals use Lebesgue area measure on each fiber coordinate.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};

/// Base chart coordinates `z_1 .. z_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartPoint(Vec<C64>);

/// Fiber chart coordinates `zeta_1 .. zeta_f`.
#[derive(Clone, Debug, PartialEq)]
pub struct FiberPoint(Vec<C64>);

macro_rules! point_impl {
    ($name:ident) => {
        impl $name {
            pub fn new(coords: Vec<C64>) -> Result<Self> {
                if coords.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(Error::Precondition(format!(
                        "{} has non-finite coordinates",
                        stringify!($name)
                    )));
                }
                Ok(Self(coords))
            }

            pub fn origin(dim: usize) -> Self {
                Self(vec![C64::new(0.0, 0.0); dim])
            }

            pub fn coords(&self) -> &[C64] {
                &self.0
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }
        }
    };
}

point_impl!(ChartPoint);
point_impl!(FiberPoint);

/// Central-difference stencil with Richardson extrapolation over step halvings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stencil {
    pub step: f64,
    #[serde(rename = "levels")]
    pub richardson_levels: usize,
}

impl Default for Stencil {
    fn default() -> Self {
        Self { step: 1e-3, richardson_levels: 2 }
    }
}

impl Stencil {
    pub fn new(step: f64, richardson_levels: usize) -> Result<Self> {
        let s = Self { step, richardson_levels };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1e-6..=1e-1).contains(&self.step) {
            return Err(Error::Config(format!("stencil step {} outside [1e-6, 1e-1]", self.step)));
        }
        if self.richardson_levels == 0 {
            return Err(Error::Config("stencil needs at least one Richardson level".into()));
        }
        Ok(())
    }

    pub fn halved(&self) -> Self {
        Self { step: self.step / 2.0, ..*self }
    }
}

/// Values a finite-difference stencil can combine linearly.
pub trait FieldValue: Clone {
    fn zero_like(&self) -> Self;
    /// `self += a * x`
    fn axpy(&mut self, a: C64, x: &Self);
    fn magnitude(&self) -> f64;
}

impl FieldValue for C64 {
    fn zero_like(&self) -> Self {
        C64::new(0.0, 0.0)
    }
    fn axpy(&mut self, a: C64, x: &Self) {
        *self += a * x;
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

impl FieldValue for Vec<C64> {
    fn zero_like(&self) -> Self {
        vec![C64::new(0.0, 0.0); self.len()]
    }
    fn axpy(&mut self, a: C64, x: &Self) {
        for (s, v) in self.iter_mut().zip(x) {
            *s += a * v;
        }
    }
    fn magnitude(&self) -> f64 {
        self.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

impl FieldValue for CMatrix {
    fn zero_like(&self) -> Self {
        CMatrix::zeros(self.rows(), self.cols())
    }
    fn axpy(&mut self, a: C64, x: &Self) {
        CMatrix::axpy(self, a, x);
    }
    fn magnitude(&self) -> f64 {
        self.frobenius_norm()
    }
}

fn shifted(at: &[C64], moves: &[(usize, C64)]) -> Vec<C64> {
    let mut p = at.to_vec();
    for &(i, d) in moves {
        p[i] += d;
    }
    p
}

fn combine<V: FieldValue>(terms: &[(C64, V)]) -> V {
    let mut acc = terms[0].1.zero_like();
    for (a, v) in terms {
        acc.axpy(*a, v);
    }
    acc
}

/// Richardson tableau for a second-order-accurate difference `d(h)` evaluated at `h, h/2, ...`.
fn richardson<V: FieldValue>(
    stencil: &Stencil,
    mut d: impl FnMut(f64) -> Result<V>,
) -> Result<V> {
    let levels = stencil.richardson_levels;
    let mut prev: Vec<V> = Vec::with_capacity(levels);
    for l in 0..levels {
        let h = stencil.step / f64::powi(2.0, l as i32);
        let mut row = vec![d(h)?];
        for n in 1..=l {
            let factor = f64::powi(4.0, n as i32);
            let mut next = row[n - 1].clone();
            let mut diff = row[n - 1].clone();
            diff.axpy(C64::new(-1.0, 0.0), &prev[n - 1]);
            next.axpy(C64::new(1.0 / (factor - 1.0), 0.0), &diff);
            row.push(next);
        }
        prev = row;
    }
    Ok(prev.pop().expect("at least one Richardson level"))
}

fn check_index(at: &[C64], i: usize) -> Result<()> {
    if i >= at.len() {
        return Err(Error::Dimension(format!("coordinate index {i} out of range for dimension {}", at.len())));
    }
    Ok(())
}

/// `d field / d z_i = (d/dx_i - sqrt(-1) d/dy_i) / 2` by central differences.
pub fn wirtinger_d1<V, F>(field: F, at: &[C64], i: usize, stencil: &Stencil) -> Result<V>
where
    V: FieldValue,
    F: Fn(&[C64]) -> Result<V>,
{
    check_index(at, i)?;
    richardson(stencil, |h| {
        let x = C64::new(h, 0.0);
        let y = C64::new(0.0, h);
        let fxp = field(&shifted(at, &[(i, x)]))?;
        let fxm = field(&shifted(at, &[(i, -x)]))?;
        let fyp = field(&shifted(at, &[(i, y)]))?;
        let fym = field(&shifted(at, &[(i, -y)]))?;
        let s = 1.0 / (4.0 * h);
        let mi = C64::new(0.0, -s);
        Ok(combine(&[
            (C64::new(s, 0.0), fxp),
            (C64::new(-s, 0.0), fxm),
            (mi, fyp),
            (-mi, fym),
        ]))
    })
}

/// `d^2 field / d z_i d conj(z_j)`.
///
/// The diagonal case uses the five-point Laplacian `(1/4)(d_xx + d_yy)`; off
/// the diagonal the four real cross derivatives are composed from
/// one-variable central differences.
pub fn mixed_ddbar<V, F>(field: F, at: &[C64], i: usize, j: usize, stencil: &Stencil) -> Result<V>
where
    V: FieldValue,
    F: Fn(&[C64]) -> Result<V>,
{
    check_index(at, i)?;
    check_index(at, j)?;
    if i == j {
        return richardson(stencil, |h| {
            let x = C64::new(h, 0.0);
            let y = C64::new(0.0, h);
            let f0 = field(at)?;
            let s = C64::new(1.0 / (4.0 * h * h), 0.0);
            Ok(combine(&[
                (s, field(&shifted(at, &[(i, x)]))?),
                (s, field(&shifted(at, &[(i, -x)]))?),
                (s, field(&shifted(at, &[(i, y)]))?),
                (s, field(&shifted(at, &[(i, -y)]))?),
                (s * -4.0, f0),
            ]))
        });
    }
    richardson(stencil, |h| {
        let dirs = [C64::new(h, 0.0), C64::new(0.0, h)];
        // cross[a][b] = d_{a of z_i} d_{b of z_j}, a/b = 0 (x) or 1 (y)
        let mut cross: Vec<V> = Vec::with_capacity(4);
        for &da in &dirs {
            for &db in &dirs {
                let pp = field(&shifted(at, &[(i, da), (j, db)]))?;
                let pm = field(&shifted(at, &[(i, da), (j, -db)]))?;
                let mp = field(&shifted(at, &[(i, -da), (j, db)]))?;
                let mm = field(&shifted(at, &[(i, -da), (j, -db)]))?;
                let s = C64::new(1.0 / (4.0 * h * h), 0.0);
                cross.push(combine(&[(s, pp), (-s, pm), (-s, mp), (s, mm)]));
            }
        }
        let q = C64::new(0.25, 0.0);
        let iq = C64::new(0.0, 0.25);
        Ok(combine(&[
            (q, cross[0].clone()),
            (iq, cross[1].clone()),
            (-iq, cross[2].clone()),
            (q, cross[3].clone()),
        ]))
    })
}

/// Full complex Hessian `[d^2 f / d z_i d conj(z_j)]_{i,j}` of a scalar field.
pub fn complex_hessian<F>(field: F, at: &[C64], stencil: &Stencil) -> Result<CMatrix>
where
    F: Fn(&[C64]) -> Result<C64>,
{
    let n = at.len();
    let mut out = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = mixed_ddbar(&field, at, i, j, stencil)?;
        }
    }
    Ok(out)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            // P_n'(x) from the recurrence
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Product quadrature over the affine fiber chart `C^f` (f = 1 or 2).
///
/// Each factor uses `zeta = rho e^{i theta}` with Gauss–Legendre nodes in
/// `u = rho^2 / (1 + rho^2)` and a uniform angular grid; weights carry the
/// Jacobian so that `sum w g(node)` approximates `int g dA`.
#[derive(Clone, Debug)]
pub struct FiberQuadrature {
    pub fiber_dim: usize,
    pub radial_order: usize,
    pub angular_order: usize,
    pub nodes: Vec<FiberPoint>,
    pub weights: Vec<f64>,
}

fn plane_rule(radial_order: usize, angular_order: usize) -> Vec<(C64, f64)> {
    let (xs, ws) = gauss_legendre(radial_order);
    let dtheta = 2.0 * PI / angular_order as f64;
    let mut out = Vec::with_capacity(radial_order * angular_order);
    for (&x, &w) in xs.iter().zip(&ws) {
        let u = 0.5 * (x + 1.0);
        let rho = (u / (1.0 - u)).sqrt();
        // dA = rho d rho d theta = (1/2) (1-u)^{-2} du d theta
        let radial_weight = 0.5 * w * 0.5 / ((1.0 - u) * (1.0 - u));
        for t in 0..angular_order {
            let theta = dtheta * t as f64;
            out.push((C64::from_polar(rho, theta), radial_weight * dtheta));
        }
    }
    out
}

pub fn build_fiber_quadrature(
    fiber_dim: usize,
    radial_order: usize,
    angular_order: usize,
) -> Result<FiberQuadrature> {
    if radial_order < 4 || angular_order < 4 {
        return Err(Error::Config(format!(
            "quadrature orders must be >= 4 (radial {radial_order}, angular {angular_order})"
        )));
    }
    let plane = plane_rule(radial_order, angular_order);
    let (nodes, weights) = match fiber_dim {
        1 => plane.iter().map(|&(z, w)| (FiberPoint(vec![z]), w)).unzip(),
        2 => {
            let mut nodes = Vec::with_capacity(plane.len() * plane.len());
            let mut weights = Vec::with_capacity(plane.len() * plane.len());
            for &(z1, w1) in &plane {
                for &(z2, w2) in &plane {
                    nodes.push(FiberPoint(vec![z1, z2]));
                    weights.push(w1 * w2);
                }
            }
            (nodes, weights)
        }
        f => return Err(Error::Unsupported(format!("fiber dimension {f}"))),
    };
    Ok(FiberQuadrature { fiber_dim, radial_order, angular_order, nodes, weights })
}

impl FiberQuadrature {
    /// The rule at half the radial and angular orders (floored at 4).
    pub fn halved(&self) -> Result<Self> {
        build_fiber_quadrature(
            self.fiber_dim,
            (self.radial_order / 2).max(4),
            (self.angular_order / 2).max(4),
        )
    }
}

/// Weighted node sum in fixed node order.
pub fn fiber_integrate<V, F>(density: F, rule: &FiberQuadrature) -> Result<V>
where
    V: FieldValue,
    F: Fn(&FiberPoint) -> Result<V>,
{
    let mut acc: Option<V> = None;
    for (node, &w) in rule.nodes.iter().zip(&rule.weights) {
        let v = density(node)?;
        let mag = v.magnitude();
        if !mag.is_finite() {
            return Err(Error::Integration {
                node: format!("{:?}", node.coords()),
                value: format!("{mag}"),
            });
        }
        match acc.as_mut() {
            Some(a) => a.axpy(C64::new(w, 0.0), &v),
            None => {
                let mut a = v.zero_like();
                a.axpy(C64::new(w, 0.0), &v);
                acc = Some(a);
            }
        }
    }
    acc.ok_or_else(|| Error::Integration { node: "<none>".into(), value: "empty rule".into() })
}

/// An integral together with `|result(order) - result(order / 2)|`.
#[derive(Clone, Debug)]
pub struct Integral<V> {
    pub value: V,
    pub convergence: f64,
}

pub fn fiber_integrate_checked<V, F>(density: F, rule: &FiberQuadrature) -> Result<Integral<V>>
where
    V: FieldValue,
    F: Fn(&FiberPoint) -> Result<V>,
{
    let value = fiber_integrate(&density, rule)?;
    let coarse = fiber_integrate(&density, &rule.halved()?)?;
    let mut diff = value.clone();
    diff.axpy(C64::new(-1.0, 0.0), &coarse);
    Ok(Integral { value, convergence: diff.magnitude() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn st() -> Stencil {
        Stencil::default()
    }

    #[test]
    fn d1_of_coordinate_fields() {
        let at = [c(0.3, -0.2)];
        let d: C64 = wirtinger_d1(|p: &[C64]| Ok(p[0]), &at, 0, &st()).unwrap();
        assert!((d - c(1.0, 0.0)).norm() < 1e-12);
        let d: C64 = wirtinger_d1(|p: &[C64]| Ok(p[0].conj()), &at, 0, &st()).unwrap();
        assert!(d.norm() < 1e-12);
    }

    #[test]
    fn d1_of_fubini_study_potential() {
        let at = [c(0.5, 0.0)];
        let f = |p: &[C64]| Ok(C64::new(p[0].norm_sqr().ln_1p(), 0.0));
        let d: C64 = wirtinger_d1(f, &at, 0, &st()).unwrap();
        // d/dz log(1+|z|^2) = conj(z)/(1+|z|^2)
        let want = at[0].conj() / 1.25;
        assert!((d - want).norm() < 1e-10, "{d} vs {want}");
    }

    #[test]
    fn ddbar_examples() {
        let at = [c(0.7, -0.4)];
        let d: C64 = mixed_ddbar(|p: &[C64]| Ok(C64::new(p[0].norm_sqr(), 0.0)), &at, 0, 0, &st()).unwrap();
        // round-off floor is about eps |f| / h^2
        assert!((d - c(1.0, 0.0)).norm() < 1e-9, "{d}");
        let d: C64 = mixed_ddbar(|p: &[C64]| Ok(C64::new((p[0] * p[0]).re, 0.0)), &at, 0, 0, &st()).unwrap();
        assert!(d.norm() < 1e-10);
        let d: C64 = mixed_ddbar(
            |p: &[C64]| Ok(C64::new(p[0].norm_sqr().ln_1p(), 0.0)),
            &[c(0.0, 0.0)],
            0,
            0,
            &st(),
        )
        .unwrap();
        assert!((d - c(1.0, 0.0)).norm() < 1e-10, "{d}");
    }

    #[test]
    fn ddbar_of_quadratic_polynomial_is_exact() {
        // f = 2 z1 conj(z2) + 3 |z1|^2 + conj(z1) z2 + z1^2
        let f = |p: &[C64]| {
            Ok(p[0] * p[1].conj() * 2.0 + p[0].norm_sqr() * 3.0 + p[0].conj() * p[1] + p[0] * p[0])
        };
        let at = [c(0.1, 0.2), c(-0.3, 0.5)];
        let h = complex_hessian(f, &at, &st()).unwrap();
        let want = [[c(3.0, 0.0), c(2.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((h[(i, j)] - want[i][j]).norm() < 1e-10, "({i},{j}) {}", h[(i, j)]);
            }
        }
    }

    #[test]
    fn hessian_of_real_field_is_hermitian() {
        let f = |p: &[C64]| {
            Ok(C64::new(
                (1.0 + p[0].norm_sqr() + 2.0 * p[1].norm_sqr()).ln() + (p[0] * p[1].conj()).re.powi(2),
                0.0,
            ))
        };
        let h = complex_hessian(f, &[c(0.3, 0.1), c(-0.2, 0.4)], &st()).unwrap();
        assert!((&h - &h.adjoint()).max_abs() < 1e-9);
    }

    #[test]
    fn stencil_bounds() {
        assert!(Stencil::new(1e-7, 2).is_err());
        assert!(Stencil::new(0.5, 2).is_err());
        assert!(Stencil::new(1e-3, 0).is_err());
        assert!(Stencil::new(1e-2, 1).is_ok());
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    fn plane_density(f: impl Fn(C64) -> C64) -> impl Fn(&FiberPoint) -> Result<C64> {
        move |p: &FiberPoint| Ok(f(p.coords()[0]))
    }

    #[test]
    fn fiber_rule_self_calibration() {
        let rule = build_fiber_quadrature(1, 64, 16).unwrap();
        assert!(rule.weights.iter().all(|&w| w > 0.0));
        let v: C64 = fiber_integrate(plane_density(|z| C64::new((1.0 + z.norm_sqr()).powi(-2), 0.0)), &rule).unwrap();
        assert!((v.re - PI).abs() < 1e-10 && v.im.abs() < 1e-14);
    }

    #[test]
    fn fiber_rule_odd_moment_vanishes() {
        let rule = build_fiber_quadrature(1, 64, 16).unwrap();
        let v: C64 = fiber_integrate(plane_density(|z| z * (1.0 + z.norm_sqr()).powi(-3)), &rule).unwrap();
        assert!(v.norm() < 1e-14);
    }

    #[test]
    fn fiber_rule_beta_integral() {
        // int |z|^2 (1+|z|^2)^{-3} dA = pi * int_0^inf u (1+u)^{-3} du = pi / 2
        let rule = build_fiber_quadrature(1, 64, 16).unwrap();
        let v: C64 = fiber_integrate(plane_density(|z| C64::new(z.norm_sqr() * (1.0 + z.norm_sqr()).powi(-3), 0.0)), &rule).unwrap();
        assert!((v.re - PI / 2.0).abs() < 1e-10);
    }

    #[test]
    fn zero_density_and_angular_orthogonality() {
        let rule = build_fiber_quadrature(1, 32, 20).unwrap();
        let v: C64 = fiber_integrate(plane_density(|_| C64::new(0.0, 0.0)), &rule).unwrap();
        assert_eq!(v, C64::new(0.0, 0.0));
        let k = 4;
        for a in 0..=k {
            for b in 0..=k {
                if a == b {
                    continue;
                }
                let v: C64 = fiber_integrate(
                    plane_density(|z| z.powu(a) * z.conj().powu(b) * (1.0 + z.norm_sqr()).powi(-(k as i32 + 2))),
                    &rule,
                )
                .unwrap();
                assert!(v.norm() < 1e-14, "({a},{b}) -> {v}");
            }
        }
    }

    #[test]
    fn angular_rule_is_exact_on_characters() {
        let n_ang = 12;
        let rule = build_fiber_quadrature(1, 4, n_ang).unwrap();
        // with unit radial profile (1+rho^2)^{-2} the radial part integrates to pi exactly
        for n in -(n_ang as i32 - 1)..=(n_ang as i32 - 1) {
            if n == 0 {
                continue;
            }
            let v: C64 = fiber_integrate(
                plane_density(|z| C64::from_polar(1.0, n as f64 * z.arg()) * (1.0 + z.norm_sqr()).powi(-2)),
                &rule,
            )
            .unwrap();
            assert!(v.norm() < 1e-14, "n={n}: {v}");
        }
    }

    #[test]
    fn two_dimensional_rule() {
        let rule = build_fiber_quadrature(2, 16, 4).unwrap();
        // product density integrates to pi^2
        let v: C64 = fiber_integrate(
            |p: &FiberPoint| {
                let [a, b] = [p.coords()[0], p.coords()[1]];
                Ok(C64::new(((1.0 + a.norm_sqr()) * (1.0 + b.norm_sqr())).powi(-2), 0.0))
            },
            &rule,
        )
        .unwrap();
        assert!((v.re - PI * PI).abs() < 1e-10);
        assert!(matches!(build_fiber_quadrature(3, 8, 8), Err(Error::Unsupported(_))));
        assert!(build_fiber_quadrature(1, 2, 8).is_err());
    }

    #[test]
    fn non_finite_density_names_node() {
        let rule = build_fiber_quadrature(1, 4, 4).unwrap();
        let err = fiber_integrate(|_: &FiberPoint| Ok(C64::new(f64::NAN, 0.0)), &rule).unwrap_err();
        assert!(matches!(err, Error::Integration { .. }));
    }

    #[test]
    fn checked_integral_reports_small_delta() {
        let rule = build_fiber_quadrature(1, 64, 16).unwrap();
        let r = fiber_integrate_checked(plane_density(|z| C64::new((1.0 + 2.0 * z.norm_sqr()).powi(-3), 0.0)), &rule).unwrap();
        assert!(r.convergence < 1e-10);
        // int (1 + 2|z|^2)^{-3} dA = pi/2 * int (1+v)^{-3} dv = pi/4
        assert!((r.value.re - PI / 4.0).abs() < 1e-10);
    }
}

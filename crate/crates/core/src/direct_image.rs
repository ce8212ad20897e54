//! The L2 metric on the direct image of `K_{Y/X} (x) O_{P(E)}(k + r)` and its curvature.
//!
//! Sections are the monomials `zeta^alpha d zeta` in the affine fiber chart of
//! the product trivialization `(z, zeta)`. The Gram matrix uses the
//! convention `H[a][b] = int conj(s_a) s_b e^{-Phi} dA`, which makes a
//! holomorphic change of frame `s' = s G` act as `H' = G* H G`.

use serde::{Deserialize, Serialize};

use crate::bundles::{
    curvature_from_gram, nakano_form, proj_weight, BundleSpec, CurvatureTensor, MatrixFamily,
    NakanoForm, ProjWeight,
};
use crate::error::{Error, Result};
use crate::geometry::{
    build_fiber_quadrature, complex_hessian, fiber_integrate, fiber_integrate_checked, mixed_ddbar,
    wirtinger_d1, ChartPoint, FiberPoint, FiberQuadrature, Stencil,
};
use crate::linalg::{
    eigvalsh, hermitize, inv_sqrt, inverse_pd, CMatrix, EigenReport, HermitianMatrix, C64,
};

/// Normal-frame tolerances: `H'(xi) = I` and vanishing first derivatives.
pub const NORMAL_IDENTITY_TOL: f64 = 1e-9;
pub const NORMAL_DERIVATIVE_REL_TOL: f64 = 1e-6;
pub const NORMAL_DERIVATIVE_ABS_TOL: f64 = 1e-10;

/// Monomial basis `zeta^alpha`, `|alpha| <= k`, of fiber sections.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SectionBasis {
    pub k: usize,
    pub rank: usize,
    pub exponents: Vec<Vec<u32>>,
}

impl SectionBasis {
    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    pub fn eval(&self, zeta: &[C64]) -> Vec<C64> {
        self.exponents
            .iter()
            .map(|e| e.iter().zip(zeta).map(|(&p, w)| w.powu(p)).product())
            .collect()
    }
}

/// Graded-lexicographic enumeration of exponents in `r - 1` fiber variables.
pub fn section_basis(k: usize, rank: usize) -> Result<SectionBasis> {
    let exponents = match rank {
        2 => (0..=k as u32).map(|a| vec![a]).collect(),
        3 => {
            let mut out = Vec::new();
            for total in 0..=k as u32 {
                for a in (0..=total).rev() {
                    out.push(vec![a, total - a]);
                }
            }
            out
        }
        r => return Err(Error::Unsupported(format!("section bases for rank {r}"))),
    };
    Ok(SectionBasis { k, rank, exponents })
}

/// Stencil and quadrature settings for one pipeline run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub stencil: Stencil,
    pub radial_order: usize,
    /// `None` means `max(16, 4k + 8)`.
    pub angular_order: Option<usize>,
}

impl Default for Resolution {
    fn default() -> Self {
        Self { stencil: Stencil::default(), radial_order: 64, angular_order: None }
    }
}

impl Resolution {
    /// Defaults for a bundle of rank `r`; rank 3 uses a product rule over `C^2`, so orders are lower.
    pub fn default_for_rank(rank: usize) -> Self {
        if rank >= 3 {
            Self { radial_order: 24, angular_order: None, ..Self::default() }
        } else {
            Self::default()
        }
    }

    pub fn angular_for(&self, k: usize, rank: usize) -> usize {
        self.angular_order.unwrap_or(if rank >= 3 { (2 * k + 4).max(8) } else { (4 * k + 8).max(16) })
    }

    pub fn rule(&self, k: usize, rank: usize) -> Result<FiberQuadrature> {
        build_fiber_quadrature(rank - 1, self.radial_order, self.angular_for(k, rank))
    }

    /// Half the stencil step, double both quadrature orders.
    pub fn refined(&self) -> Self {
        Self {
            stencil: self.stencil.halved(),
            radial_order: self.radial_order * 2,
            angular_order: self.angular_order.map(|a| a * 2),
        }
    }

    /// Like [`Resolution::refined`] but resolving the automatic angular order first.
    pub fn refined_for(&self, k: usize, rank: usize) -> Self {
        Self { angular_order: Some(self.angular_for(k, rank)), ..*self }.refined()
    }
}

/// `z -> H(z)`, the L2 Gram matrix of the monomial sections.
#[derive(Clone, Debug)]
pub struct GramFamily {
    pub weight: ProjWeight,
    pub basis: SectionBasis,
    pub rule: FiberQuadrature,
    /// Constant unitary applied to the section basis before integration.
    pub frame: Option<CMatrix>,
}

impl GramFamily {
    pub fn new(bundle: &BundleSpec, k: usize, rule: FiberQuadrature) -> Result<Self> {
        let weight = proj_weight(bundle, k)?;
        let basis = section_basis(k, bundle.rank())?;
        if rule.fiber_dim != weight.fiber_dim() {
            return Err(Error::Dimension(format!(
                "rank {} bundle needs a {}-dimensional fiber rule, got {}",
                bundle.rank(),
                weight.fiber_dim(),
                rule.fiber_dim
            )));
        }
        Ok(Self { weight, basis, rule, frame: None })
    }

    pub fn with_frame(mut self, u: CMatrix) -> Result<Self> {
        if u.rows() != self.basis.dim() || !u.is_square() {
            return Err(Error::Dimension("frame change must match the section count".into()));
        }
        self.frame = Some(u);
        Ok(self)
    }

    fn density<'a>(&'a self, z: &'a [C64]) -> impl Fn(&FiberPoint) -> Result<CMatrix> + 'a {
        move |node: &FiberPoint| {
            let zeta = node.coords();
            let w = (-self.weight.eval(z, zeta)).exp();
            let s = self.basis.eval(zeta);
            let n = s.len();
            let mut out = CMatrix::zeros(n, n);
            for a in 0..n {
                let sa = s[a].conj() * w;
                for b in 0..n {
                    out[(a, b)] = sa * s[b];
                }
            }
            Ok(out)
        }
    }

    fn apply_frame(&self, h: CMatrix) -> Result<CMatrix> {
        match &self.frame {
            Some(u) => u.adjoint().matmul(&h)?.matmul(u),
            None => Ok(h),
        }
    }
}

impl MatrixFamily for GramFamily {
    fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn base_dim(&self) -> usize {
        self.weight.base_dim()
    }

    fn eval(&self, z: &[C64]) -> Result<CMatrix> {
        let h = fiber_integrate(self.density(z), &self.rule)?;
        self.apply_frame(h)
    }
}

/// A Gram matrix at one base point with its diagnostics.
#[derive(Clone, Debug)]
pub struct GramReport {
    pub matrix: HermitianMatrix,
    pub asymmetry: f64,
    /// Frobenius distance to the same integral at half quadrature order.
    pub convergence: f64,
}

pub fn gram_matrix(
    bundle: &BundleSpec,
    k: usize,
    z: &ChartPoint,
    rule: &FiberQuadrature,
) -> Result<GramReport> {
    let family = GramFamily::new(bundle, k, rule.clone())?;
    let integral = fiber_integrate_checked(family.density(z.coords()), rule)?;
    let (matrix, asymmetry) = hermitize(&integral.value)?;
    if bundle.is_ample() {
        let eig = eigvalsh(&matrix)?;
        if !(eig.min > 0.0) {
            return Err(Error::Numerical(format!(
                "Gram matrix of an ample bundle is not positive definite (min eigenvalue {:.3e})",
                eig.min
            )));
        }
    }
    Ok(GramReport { matrix, asymmetry, convergence: integral.convergence })
}

/// `H'(z) = G(z)* H(z) G(z)` with `G(z) = [I - sum_i H(xi)^{-1} dH_i (z_i - xi_i)] H(xi)^{-1/2}`.
pub struct NormalFrameFamily<'a> {
    base: &'a dyn MatrixFamily,
    xi: Vec<C64>,
    sqrt_inv: CMatrix,
    corrections: Vec<CMatrix>,
    /// `max |H'(xi) - I|`
    pub identity_defect: f64,
    /// `max_i ||d_i H'(xi)||_F`
    pub derivative_defect: f64,
    /// `max_i ||H(xi)^{-1/2} d_i H(xi) H(xi)^{-1/2}||_F`
    pub derivative_scale: f64,
}

impl NormalFrameFamily<'_> {
    fn frame_at(&self, z: &[C64]) -> Result<CMatrix> {
        let n = self.base.dim();
        let mut g = CMatrix::identity(n);
        for (i, a) in self.corrections.iter().enumerate() {
            g.axpy(-(z[i] - self.xi[i]), a);
        }
        g.matmul(&self.sqrt_inv)
    }
}

impl MatrixFamily for NormalFrameFamily<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn base_dim(&self) -> usize {
        self.base.base_dim()
    }

    fn eval(&self, z: &[C64]) -> Result<CMatrix> {
        let h = self.base.eval(z)?;
        let g = self.frame_at(z)?;
        g.adjoint().matmul(&h)?.matmul(&g)
    }
}

/// Holomorphic change to a normal frame at `xi`; both normal-frame conditions are verified.
pub fn normal_frame_transform<'a>(
    family: &'a dyn MatrixFamily,
    xi: &ChartPoint,
    stencil: &Stencil,
) -> Result<NormalFrameFamily<'a>> {
    if xi.dim() != family.base_dim() {
        return Err(Error::Dimension(format!(
            "base point has {} coordinates, family expects {}",
            xi.dim(),
            family.base_dim()
        )));
    }
    let at = xi.coords();
    let (h0, _) = hermitize(&family.eval(at)?)?;
    let sqrt_inv = inv_sqrt(&h0)?;
    let h_inv = inverse_pd(&h0)?;
    let mut corrections = Vec::with_capacity(at.len());
    let mut derivative_scale = 0.0_f64;
    for i in 0..at.len() {
        let d: CMatrix = wirtinger_d1(|z: &[C64]| family.eval(z), at, i, stencil)?;
        derivative_scale =
            derivative_scale.max(sqrt_inv.matmul(&d)?.matmul(&sqrt_inv)?.frobenius_norm());
        corrections.push(h_inv.matmul(&d)?);
    }
    let mut normal = NormalFrameFamily {
        base: family,
        xi: at.to_vec(),
        sqrt_inv,
        corrections,
        identity_defect: 0.0,
        derivative_defect: 0.0,
        derivative_scale,
    };

    let at_xi = normal.eval(at)?;
    normal.identity_defect = (&at_xi - &CMatrix::identity(family.dim())).max_abs();
    if normal.identity_defect > NORMAL_IDENTITY_TOL {
        return Err(Error::Numerical(format!(
            "normal frame: H'(xi) differs from the identity by {:.3e}",
            normal.identity_defect
        )));
    }
    let mut defect = 0.0_f64;
    for i in 0..at.len() {
        let d: CMatrix = wirtinger_d1(|z: &[C64]| normal.eval(z), at, i, stencil)?;
        defect = defect.max(d.frobenius_norm());
    }
    normal.derivative_defect = defect;
    let allowed = NORMAL_DERIVATIVE_REL_TOL * derivative_scale + NORMAL_DERIVATIVE_ABS_TOL;
    if defect > allowed {
        return Err(Error::Numerical(format!(
            "normal frame: first derivative {defect:.3e} exceeds {allowed:.3e}"
        )));
    }
    Ok(normal)
}

/// Curvature of the L2 metric at one base point.
#[derive(Clone, Debug)]
pub struct L2Curvature {
    pub tensor: CurvatureTensor,
    pub form: NakanoForm,
    pub eigen: EigenReport,
}

pub fn l2_curvature(
    bundle: &BundleSpec,
    k: usize,
    xi: &ChartPoint,
    res: &Resolution,
) -> Result<L2Curvature> {
    l2_curvature_in_frame(bundle, k, xi, res, None)
}

/// As [`l2_curvature`], with the monomial basis pre-multiplied by a constant unitary.
pub fn l2_curvature_in_frame(
    bundle: &BundleSpec,
    k: usize,
    xi: &ChartPoint,
    res: &Resolution,
    frame: Option<CMatrix>,
) -> Result<L2Curvature> {
    let mut family = GramFamily::new(bundle, k, res.rule(k, bundle.rank())?)?;
    if let Some(u) = frame {
        family = family.with_frame(u)?;
    }
    let tensor = curvature_from_gram(&family, xi, &res.stencil)?;
    let form = nakano_form(&tensor);
    let eigen = eigvalsh(&form.matrix)?;
    if eigen.residual > 1e-10 {
        return Err(Error::Numerical(format!("eigen residual {:.3e} above 1e-10", eigen.residual)));
    }
    Ok(L2Curvature { tensor, form, eigen })
}

/// Fiber integral of the horizontal curvature of the total weight, in the normal frame at `xi`.
#[derive(Clone, Debug)]
pub struct FirstTerm {
    pub matrix: HermitianMatrix,
    pub asymmetry: f64,
}

pub fn first_term(
    bundle: &BundleSpec,
    k: usize,
    xi: &ChartPoint,
    res: &Resolution,
) -> Result<FirstTerm> {
    let family = GramFamily::new(bundle, k, res.rule(k, bundle.rank())?)?;
    let at = xi.coords();
    let m = at.len();
    let r = family.basis.dim();
    let weight = &family.weight;
    let basis = &family.basis;

    let density = |node: &FiberPoint| -> Result<CMatrix> {
        let zeta = node.coords();
        let hess = complex_hessian(|z: &[C64]| Ok(C64::new(weight.eval(z, zeta), 0.0)), at, &res.stencil)?;
        let w = (-weight.eval(at, zeta)).exp();
        let s = basis.eval(zeta);
        let mut out = CMatrix::zeros(m * r, m * r);
        for i in 0..m {
            for j in 0..m {
                let hij = hess[(i, j)] * w;
                for a in 0..r {
                    let ha = hij * s[a].conj();
                    for b in 0..r {
                        out[(i * r + a, j * r + b)] = ha * s[b];
                    }
                }
            }
        }
        Ok(out)
    };
    let raw = fiber_integrate(density, &family.rule)?;

    let (h0, _) = hermitize(&family.eval(at)?)?;
    let s = inv_sqrt(&h0)?;
    let mut lift = CMatrix::zeros(m * r, m * r);
    for i in 0..m {
        for a in 0..r {
            for b in 0..r {
                lift[(i * r + a, i * r + b)] = s[(a, b)];
            }
        }
    }
    let conj = lift.adjoint().matmul(&raw)?.matmul(&lift)?;
    let (matrix, asymmetry) = hermitize(&conj)?;
    Ok(FirstTerm { matrix, asymmetry })
}

/// Full curvature split into the horizontal-curvature term and the remainder.
#[derive(Clone, Debug)]
pub struct DecompositionReport {
    pub theta: NakanoForm,
    pub first_term: HermitianMatrix,
    pub residual: HermitianMatrix,
    /// `||residual||_F / ||first_term||_F`, or `||residual||_F` when the first term vanishes.
    pub residual_norm_ratio: f64,
    /// Sup of the harmonicity residual over base directions; rank 2 only.
    pub harmonicity_sup: Option<f64>,
}

pub fn second_term_residual(
    bundle: &BundleSpec,
    k: usize,
    xi: &ChartPoint,
    res: &Resolution,
) -> Result<DecompositionReport> {
    let theta = l2_curvature(bundle, k, xi, res)?.form;
    let first = first_term(bundle, k, xi, res)?.matrix;
    let residual = theta.matrix.sub(&first);
    let denom = first.matrix().frobenius_norm();
    let num = residual.matrix().frobenius_norm();
    let residual_norm_ratio = if denom > 1e-12 { num / denom } else { num };
    let harmonicity_sup = if bundle.rank() == 2 {
        let samples = default_fiber_samples();
        let mut sup = 0.0_f64;
        for i in 0..xi.dim() {
            sup = sup.max(harmonicity_residual(bundle, k, xi, i, &samples, &res.stencil)?);
        }
        Some(sup)
    } else {
        None
    };
    Ok(DecompositionReport { theta, first_term: first, residual, residual_norm_ratio, harmonicity_sup })
}

/// Fiber points used for the harmonicity sup.
pub fn default_fiber_samples() -> Vec<FiberPoint> {
    [
        C64::new(0.0, 0.0),
        C64::new(0.5, 0.0),
        C64::new(-0.3, 0.8),
        C64::new(0.0, 1.5),
        C64::new(2.0, -1.0),
    ]
    .into_iter()
    .map(|z| FiberPoint::new(vec![z]).expect("finite"))
    .collect()
}

/// Sup over `samples` of `|d_zeta eta_i| / omega`, where
/// `eta_i = d_{z_i} d-bar_zeta Phi (xi, zeta)` and `omega = d_zeta d-bar_zeta Phi (xi, zeta)`.
pub fn harmonicity_residual(
    bundle: &BundleSpec,
    k: usize,
    xi: &ChartPoint,
    i: usize,
    samples: &[FiberPoint],
    stencil: &Stencil,
) -> Result<f64> {
    if bundle.rank() != 2 {
        return Err(Error::Unsupported("harmonicity residual needs a one-dimensional fiber".into()));
    }
    let weight = proj_weight(bundle, k)?;
    let m = xi.dim();
    if i >= m {
        return Err(Error::Dimension(format!("base index {i} out of range")));
    }
    let phi = |p: &[C64]| Ok(C64::new(weight.eval_joint(p), 0.0));
    let joint = |zeta: C64| {
        let mut p = xi.coords().to_vec();
        p.push(zeta);
        p
    };
    let eta = |q: &[C64]| -> Result<C64> { mixed_ddbar(phi, &joint(q[0]), i, m, stencil) };
    // outer derivative of an inner difference quotient: coarser step keeps round-off in check
    let outer = Stencil { step: (10.0 * stencil.step).min(1e-1), ..*stencil };

    let mut sup = 0.0_f64;
    for zeta in samples {
        let z0 = zeta.coords()[0];
        let omega: C64 = mixed_ddbar(phi, &joint(z0), m, m, stencil)?;
        if !(omega.re > 0.0) {
            return Err(Error::Precondition(format!(
                "fiber metric degenerate at zeta = {z0} (omega = {:.3e})",
                omega.re
            )));
        }
        let d_eta: C64 = wirtinger_d1(eta, &[z0], 0, &outer)?;
        sup = sup.max(d_eta.norm() / omega.re);
    }
    Ok(sup)
}

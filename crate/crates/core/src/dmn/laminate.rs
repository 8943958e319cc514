//! Two-phase rank-one laminate and its reverse-mode derivative.

use nalgebra::{Matrix3, Matrix6x3, Vector3};

use crate::error::{Error, Result};
use crate::tensor::{jump_operator, SymTensor4};

/// Effective stiffness of a rank-one laminate with phase fractions
/// `(c1, 1 − c1)` and normal `n`:
/// `c1 C1 + c2 C2 − c1 c2 ΔC N K⁻¹ Nᵀ ΔC`, `K = Nᵀ(c2 C1 + c1 C2)N`.
pub fn laminate_homogenize(c1m: &SymTensor4, c2m: &SymTensor4, c1: f64, n: &Vector3<f64>) -> Result<SymTensor4> {
    if !(0.0..=1.0).contains(&c1) {
        return Err(Error::invalid(format!("phase fraction {c1} outside [0, 1]")));
    }
    if c1 == 0.0 {
        return Ok(*c2m);
    }
    if c1 == 1.0 {
        return Ok(*c1m);
    }
    let norm = n.norm();
    if !(norm > 0.0) {
        return Err(Error::invalid("lamination direction must be nonzero"));
    }
    let nmat = jump_operator(&(n / norm));
    Ok(LaminateTape::forward(c1m, c2m, c1, nmat)?.output)
}

/// Intermediate quantities of one laminate evaluation, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LaminateTape {
    pub c1: f64,
    pub nmat: Matrix6x3<f64>,
    pub delta: SymTensor4,
    pub blend: SymTensor4,
    pub kinv: Matrix3<f64>,
    pub m: SymTensor4,
    pub output: SymTensor4,
}

/// Adjoints of a laminate with respect to its inputs.
#[derive(Clone, Debug)]
pub struct LaminateAdjoint {
    pub g_c1m: SymTensor4,
    pub g_c2m: SymTensor4,
    pub g_c1: f64,
    pub g_nmat: Matrix6x3<f64>,
}

impl LaminateTape {
    pub fn forward(c1m: &SymTensor4, c2m: &SymTensor4, c1: f64, nmat: Matrix6x3<f64>) -> Result<Self> {
        let c2 = 1.0 - c1;
        let delta = c1m - c2m;
        let blend = c2 * c1m + c1 * c2m;
        let k = nmat.transpose() * blend * nmat;
        let kinv = k.try_inverse().ok_or_else(|| Error::numerical("singular laminate acoustic tensor"))?;
        let m = nmat * kinv * nmat.transpose();
        let output = c1 * c1m + c2 * c2m - (c1 * c2) * (delta * m * delta);
        Ok(Self { c1, nmat, delta, blend, kinv, m, output })
    }

    /// Pulls the output adjoint `g` back to the inputs.
    pub fn backward(&self, g: &SymTensor4) -> LaminateAdjoint {
        let c1 = self.c1;
        let c2 = 1.0 - c1;
        let d = &self.delta;
        let m = &self.m;
        let n = &self.nmat;
        let p = &self.kinv;

        let mut g_c1m = c1 * g;
        let mut g_c2m = c2 * g;
        let dmd = d * m * d;
        let mut g_c1 = (g.component_mul(d)).sum() - (c2 - c1) * g.component_mul(&dmd).sum();

        let g_delta = -(c1 * c2) * (g * d * m + m * d * g);
        g_c1m += g_delta;
        g_c2m -= g_delta;

        let g_m = -(c1 * c2) * (d * g * d);
        let g_p = n.transpose() * g_m * n;
        let g_k = -(p * g_p * p);
        let g_b = n * g_k * n.transpose();
        g_c1m += c2 * g_b;
        g_c2m += c1 * g_b;
        g_c1 += g_b.component_mul(&(self.blend_derivative())).sum();

        let g_nmat = (g_m + g_m.transpose()) * n * p + self.blend * n * (g_k + g_k.transpose());
        LaminateAdjoint { g_c1m, g_c2m, g_c1, g_nmat }
    }

    /// `∂(c2 C1 + c1 C2)/∂c1 = C2 − C1`.
    fn blend_derivative(&self) -> SymTensor4 {
        -self.delta
    }
}

/// `∂L/∂n` from the adjoint of the jump operator.
pub fn normal_gradient(g_nmat: &Matrix6x3<f64>) -> Vector3<f64> {
    let mut out = Vector3::zeros();
    for k in 0..3 {
        let mut e = Vector3::zeros();
        e[k] = 1.0;
        out[k] = g_nmat.component_mul(&jump_operator(&e)).sum();
    }
    out
}

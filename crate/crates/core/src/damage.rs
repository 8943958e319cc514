//! Convex anisotropic damage model as a strain-driven material point.
//!
//! The compliance is the primary damage variable,
//! `S(q) = S0 + 2 Σ (q_i/κ_i) E_i²`, and each mechanism `i` is bounded by the
//! activation function `g_i = ‖E_i σ‖² − σ0_i² − κ_i² q_i^{m_i}`.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::tensor::{
    dyad, identity2, isotropic_stiffness, min_eigenvalue, sym_dyad, transversely_isotropic_stiffness, SymTensor2, SymTensor4, TransverseIsotropy,
};

/// Upper bound on mechanisms per material point.
pub const MAX_MECHANISMS: usize = 3;

const MAX_SWEEPS: usize = 5;
const MAX_NEWTON: usize = 50;
const Q_SEED: f64 = 1e-12;

/// Complementarity tolerance on `Δq_i·g_i`.
pub const TOL_KKT: f64 = 1e-10;

/// Which stress components a mechanism extracts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MechanismKind {
    Matrix,
    BundleNormal,
    BundleShear,
}

impl MechanismKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Matrix => "matrix",
            Self::BundleNormal => "bundle-normal",
            Self::BundleShear => "bundle-shear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "matrix" => Ok(Self::Matrix),
            "bundle-normal" => Ok(Self::BundleNormal),
            "bundle-shear" => Ok(Self::BundleShear),
            other => Err(Error::format(format!("unknown mechanism kind {other:?}"))),
        }
    }
}

/// Orthonormal frame `(e1, e2, e3)` with `e1` the bundle axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub e3: Vector3<f64>,
}

impl Frame {
    pub fn new(e1: Vector3<f64>, e2: Vector3<f64>, e3: Vector3<f64>) -> Result<Self> {
        let m = Matrix3::from_columns(&[e1, e2, e3]);
        let err = (m.transpose() * m - Matrix3::identity()).abs().max();
        if err > 1e-10 {
            return Err(Error::invalid(format!("frame is not orthonormal (|FᵀF - I| = {err:e})")));
        }
        Ok(Self { e1, e2, e3 })
    }

    pub fn canonical() -> Self {
        Self { e1: Vector3::x(), e2: Vector3::y(), e3: Vector3::z() }
    }

    pub fn rotated(&self, r: &Matrix3<f64>) -> Self {
        Self { e1: r * self.e1, e2: r * self.e2, e3: r * self.e3 }
    }
}

/// `E_M = (1/3) I ⊗ I`.
pub fn extraction_matrix() -> SymTensor4 {
    let i = identity2();
    dyad(&i, &i) / 3.0
}

/// Transverse-normal bundle extraction tensor.
pub fn extraction_bundle_normal(frame: &Frame) -> SymTensor4 {
    let p = sym_dyad(&frame.e2, &frame.e2) + sym_dyad(&frame.e3, &frame.e3);
    let d = sym_dyad(&frame.e2, &frame.e2) - sym_dyad(&frame.e3, &frame.e3);
    let t = sym_dyad(&frame.e2, &frame.e3);
    let s2 = std::f64::consts::SQRT_2;
    dyad(&p, &p) * (s2 / 2.0) + dyad(&d, &d) * (s2 / 4.0) + dyad(&t, &t)
}

/// Axial-shear bundle extraction tensor.
pub fn extraction_bundle_shear(frame: &Frame) -> SymTensor4 {
    let a = sym_dyad(&frame.e1, &frame.e2);
    let b = sym_dyad(&frame.e1, &frame.e3);
    dyad(&a, &a) + dyad(&b, &b)
}

/// One damage mechanism: extraction tensor plus `(σ0, κ, m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DamageMechanism {
    pub kind: MechanismKind,
    pub frame: Frame,
    pub extraction: SymTensor4,
    /// Cached `E²`.
    pub extraction_sq: SymTensor4,
    pub sigma0: f64,
    pub kappa: f64,
    pub m: f64,
}

impl DamageMechanism {
    pub fn new(kind: MechanismKind, frame: Frame, sigma0: f64, kappa: f64, m: f64) -> Result<Self> {
        if !(sigma0 > 0.0 && kappa > 0.0 && m > 0.0) {
            return Err(Error::invalid(format!("{}: need σ0, κ, m > 0, got ({sigma0}, {kappa}, {m})", kind.as_str())));
        }
        let frame = Frame::new(frame.e1, frame.e2, frame.e3)?;
        let extraction = match kind {
            MechanismKind::Matrix => extraction_matrix(),
            MechanismKind::BundleNormal => extraction_bundle_normal(&frame),
            MechanismKind::BundleShear => extraction_bundle_shear(&frame),
        };
        Ok(Self { kind, frame, extraction, extraction_sq: extraction * extraction, sigma0, kappa, m })
    }

    /// Matrix dilatation mechanism with the reference parameters.
    pub fn matrix_default() -> Self {
        Self::new(MechanismKind::Matrix, Frame::canonical(), 36.88, 213.92, 1.0).expect("valid defaults")
    }

    pub fn bundle_normal_default(frame: Frame) -> Result<Self> {
        Self::new(MechanismKind::BundleNormal, frame, 46.03, 529.00, 1.0)
    }

    pub fn bundle_shear_default(frame: Frame) -> Result<Self> {
        Self::new(MechanismKind::BundleShear, frame, 44.08, 283.92, 1.0)
    }

    /// `‖E σ‖²`.
    #[inline]
    pub fn driving(&self, sigma: &SymTensor2) -> f64 {
        (self.extraction * sigma).norm_squared()
    }

    #[inline]
    fn hardening(&self, q: f64) -> f64 {
        if self.m == 1.0 {
            self.kappa * self.kappa * q
        } else {
            self.kappa * self.kappa * q.max(0.0).powf(self.m)
        }
    }

    #[inline]
    fn hardening_slope(&self, q: f64) -> f64 {
        if self.m == 1.0 {
            self.kappa * self.kappa
        } else {
            self.kappa * self.kappa * self.m * q.max(Q_SEED).powf(self.m - 1.0)
        }
    }
}

/// `g_i(σ, q_i)` in MPa².
pub fn damage_activation(sigma: &SymTensor2, q: f64, mech: &DamageMechanism) -> f64 {
    mech.driving(sigma) - mech.sigma0 * mech.sigma0 - mech.hardening(q)
}

/// `S0 + 2 Σ (q_i/κ_i) E_i²`.
pub fn compliance_from_state(s0: &SymTensor4, mechanisms: &[DamageMechanism], q: &[f64]) -> SymTensor4 {
    let mut s = *s0;
    for (mech, &qi) in mechanisms.iter().zip(q) {
        if qi != 0.0 {
            s += mech.extraction_sq * (2.0 * qi / mech.kappa);
        }
    }
    s
}

/// Internal variables of one material point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DamageState {
    pub q: [f64; MAX_MECHANISMS],
    pub compliance: SymTensor4,
    pub stiffness: SymTensor4,
}

/// Converged stress, updated state and consistent tangent.
#[derive(Clone, Copy, Debug)]
pub struct Response {
    pub stress: SymTensor2,
    pub state: DamageState,
    pub tangent: SymTensor4,
    pub active: [bool; MAX_MECHANISMS],
}

/// Elastic stiffness plus damage mechanisms.
#[derive(Clone, Debug, PartialEq)]
pub struct DamageMaterial {
    pub c0: SymTensor4,
    pub s0: SymTensor4,
    pub mechanisms: Vec<DamageMechanism>,
    tol_g: f64,
}

impl DamageMaterial {
    pub fn new(c0: SymTensor4, mechanisms: Vec<DamageMechanism>) -> Result<Self> {
        if mechanisms.len() > MAX_MECHANISMS {
            return Err(Error::invalid(format!("at most {MAX_MECHANISMS} mechanisms supported")));
        }
        let min = min_eigenvalue(&c0);
        if !(min > 0.0) {
            return Err(Error::invalid(format!("stiffness not positive definite (eigenvalue {min:e})")));
        }
        let s0 = c0.try_inverse().ok_or_else(|| Error::numerical("singular stiffness"))?;
        let s0 = 0.5 * (s0 + s0.transpose());
        let sigma0_min = mechanisms.iter().map(|m| m.sigma0).fold(f64::INFINITY, f64::min);
        let tol_g = if sigma0_min.is_finite() { 1e-8 * sigma0_min * sigma0_min } else { 0.0 };
        Ok(Self { c0, s0, mechanisms, tol_g })
    }

    pub fn elastic(c0: SymTensor4) -> Result<Self> {
        Self::new(c0, Vec::new())
    }

    /// Reference matrix: isotropic with dilatational damage.
    pub fn reference_matrix() -> Self {
        let c = isotropic_stiffness(3450.0, 0.385).expect("valid constants");
        Self::new(c, vec![DamageMechanism::matrix_default()]).expect("valid material")
    }

    /// Reference bundle: transversely isotropic about `e1` with transverse-normal
    /// and axial-shear damage, both expressed in the local frame.
    pub fn reference_bundle() -> Self {
        let c = transversely_isotropic_stiffness(&TransverseIsotropy::BUNDLE, &Vector3::x()).expect("valid constants");
        let frame = Frame::canonical();
        let mechs = vec![DamageMechanism::bundle_normal_default(frame).expect("valid"), DamageMechanism::bundle_shear_default(frame).expect("valid")];
        Self::new(c, mechs).expect("valid material")
    }

    pub fn tol_g(&self) -> f64 {
        self.tol_g
    }

    pub fn initial_state(&self) -> DamageState {
        DamageState { q: [0.0; MAX_MECHANISMS], compliance: self.s0, stiffness: self.c0 }
    }

    pub fn compliance(&self, q: &[f64; MAX_MECHANISMS]) -> SymTensor4 {
        compliance_from_state(&self.s0, &self.mechanisms, &q[..self.mechanisms.len()])
    }

    /// State with damage variables `q` (compliance and stiffness updated).
    pub fn state_from_q(&self, q: [f64; MAX_MECHANISMS]) -> Result<DamageState> {
        let s = self.compliance(&q);
        let c = s.cholesky().ok_or_else(|| Error::numerical("damaged compliance is not positive definite"))?.inverse();
        Ok(DamageState { q, compliance: s, stiffness: 0.5 * (c + c.transpose()) })
    }

    /// Free energy `½ ε·S⁻¹ε + Σ κ/(m+1) q^{m+1}`.
    pub fn free_energy(&self, eps: &SymTensor2, state: &DamageState) -> f64 {
        let elastic = 0.5 * eps.dot(&(state.stiffness * eps));
        let stored: f64 = self.mechanisms.iter().zip(&state.q).map(|(m, &q)| m.kappa / (m.m + 1.0) * q.max(0.0).powf(m.m + 1.0)).sum();
        elastic + stored
    }

    /// Activation values of all mechanisms at `(σ, q)`.
    pub fn activations(&self, sigma: &SymTensor2, q: &[f64; MAX_MECHANISMS]) -> [f64; MAX_MECHANISMS] {
        let mut g = [f64::NEG_INFINITY; MAX_MECHANISMS];
        for (i, mech) in self.mechanisms.iter().enumerate() {
            g[i] = damage_activation(sigma, q[i], mech);
        }
        g
    }

    /// Predictor–corrector return mapping for total strain `eps` from the
    /// converged state `state`.
    pub fn return_map(&self, eps: &SymTensor2, state: &DamageState) -> Result<Response> {
        self.return_map_from(eps, state, None)
    }

    /// Return mapping whose corrector starts from `guess` (clipped to the
    /// converged values) on the mechanisms the trial state activates.
    pub fn return_map_from(&self, eps: &SymTensor2, state: &DamageState, guess: Option<&[f64; MAX_MECHANISMS]>) -> Result<Response> {
        let n = self.mechanisms.len();
        let trial = state.stiffness * eps;
        let g_trial = self.activations(&trial, &state.q);
        let mut active = [false; MAX_MECHANISMS];
        for i in 0..n {
            active[i] = g_trial[i] > self.tol_g;
        }
        if !active.iter().any(|&a| a) {
            return Ok(Response { stress: trial, state: *state, tangent: state.stiffness, active });
        }

        let mut q = state.q;
        if let Some(g) = guess {
            for i in 0..n {
                if active[i] {
                    q[i] = g[i].max(state.q[i]);
                }
            }
        }
        for i in 0..n {
            if active[i] && self.mechanisms[i].m != 1.0 && q[i] < Q_SEED {
                q[i] = Q_SEED;
            }
        }
        for sweep in 0..MAX_SWEEPS {
            let (q_new, cur) = self.newton(eps, q, &active)?;
            q = q_new;
            let mut changed = false;
            for i in 0..n {
                if active[i] && q[i] < state.q[i] {
                    active[i] = false;
                    q[i] = state.q[i];
                    changed = true;
                }
            }
            if !changed {
                let g = self.activations(&(cur.stiffness * eps), &q);
                for i in 0..n {
                    if !active[i] && g[i] > self.tol_g {
                        active[i] = true;
                        changed = true;
                    }
                }
            }
            if !changed {
                let sigma = cur.stiffness * eps;
                let tangent = self.tangent(&sigma, &cur, &active);
                return Ok(Response { stress: sigma, state: cur, tangent, active });
            }
            if sweep + 1 == MAX_SWEEPS {
                break;
            }
            if !active.iter().any(|&a| a) {
                let sigma = state.stiffness * eps;
                return Ok(Response { stress: sigma, state: *state, tangent: state.stiffness, active });
            }
        }
        Err(Error::numerical(format!("active set did not settle after {MAX_SWEEPS} sweeps (q = {:?})", &q[..n])))
    }

    /// Return-map Jacobian at stress `sigma`; `apply_c` multiplies by the
    /// current stiffness.
    fn jacobian(
        &self,
        sigma: &SymTensor2,
        q: &[f64; MAX_MECHANISMS],
        apply_c: impl Fn(&SymTensor2) -> SymTensor2,
        active: &[bool; MAX_MECHANISMS],
    ) -> (Matrix3<f64>, [SymTensor2; MAX_MECHANISMS], [SymTensor2; MAX_MECHANISMS]) {
        // dσ/dq_j = h_j, ∂g_i/∂σ = 2 E_i² σ
        let mut h = [SymTensor2::zeros(); MAX_MECHANISMS];
        let mut dg = [SymTensor2::zeros(); MAX_MECHANISMS];
        for (i, mech) in self.mechanisms.iter().enumerate() {
            if active[i] {
                let e2s = mech.extraction_sq * sigma;
                h[i] = -(2.0 / mech.kappa) * apply_c(&e2s);
                dg[i] = 2.0 * e2s;
            }
        }
        let mut j = Matrix3::identity();
        for i in 0..MAX_MECHANISMS {
            if !active[i] {
                continue;
            }
            for k in 0..MAX_MECHANISMS {
                if active[k] {
                    j[(i, k)] = dg[i].dot(&h[k]);
                }
            }
            j[(i, i)] -= self.mechanisms[i].hardening_slope(q[i]);
        }
        (j, h, dg)
    }

    fn newton(&self, eps: &SymTensor2, mut q: [f64; MAX_MECHANISMS], active: &[bool; MAX_MECHANISMS]) -> Result<([f64; MAX_MECHANISMS], DamageState)> {
        let mut polished = false;
        let mut last = f64::INFINITY;
        for _ in 0..MAX_NEWTON {
            // Iterations only need solves with the compliance; the stiffness
            // is inverted once at the converged q.
            let chol = self.compliance(&q).cholesky().ok_or_else(|| Error::numerical("damaged compliance is not positive definite"))?;
            let sigma = chol.solve(eps);
            let g = self.activations(&sigma, &q);
            let mut residual = Vector3::zeros();
            for i in 0..MAX_MECHANISMS {
                if active[i] {
                    residual[i] = g[i];
                }
            }
            last = residual.amax();
            if last <= self.tol_g {
                if polished {
                    return Ok((q, self.state_from_q(q)?));
                }
                polished = true;
            }
            let (j, _, _) = self.jacobian(&sigma, &q, |v| chol.solve(v), active);
            let step = j.lu().solve(&(-residual)).ok_or_else(|| Error::numerical("singular return-map Jacobian"))?;
            for i in 0..MAX_MECHANISMS {
                if active[i] {
                    q[i] += step[i];
                    if self.mechanisms[i].m != 1.0 {
                        q[i] = q[i].max(Q_SEED);
                    }
                }
            }
            if polished {
                let cur = self.state_from_q(q)?;
                return Ok((q, cur));
            }
        }
        Err(Error::numerical(format!("damage corrector did not converge in {MAX_NEWTON} iterations (|g| = {last:e}, tol = {:e})", self.tol_g)))
    }

    /// Consistent tangent `C − H J⁻¹ B` over the active set.
    fn tangent(&self, sigma: &SymTensor2, cur: &DamageState, active: &[bool; MAX_MECHANISMS]) -> SymTensor4 {
        let (j, h, dg) = self.jacobian(sigma, &cur.q, |v| cur.stiffness * v, active);
        let Some(jinv) = j.try_inverse() else {
            return cur.stiffness;
        };
        let mut t = cur.stiffness;
        for i in 0..MAX_MECHANISMS {
            if !active[i] {
                continue;
            }
            let bi = cur.stiffness * dg[i];
            for k in 0..MAX_MECHANISMS {
                if active[k] && jinv[(k, i)] != 0.0 {
                    t -= (h[k] * bi.transpose()) * jinv[(k, i)];
                }
            }
        }
        t
    }

    /// Finite-difference tangent of the return map (test oracle).
    pub fn numerical_tangent(&self, eps: &SymTensor2, state: &DamageState, step: f64) -> Result<SymTensor4> {
        let mut t = SymTensor4::zeros();
        for k in 0..6 {
            let mut ep = *eps;
            let mut em = *eps;
            ep[k] += step;
            em[k] -= step;
            let sp = self.return_map(&ep, state)?.stress;
            let sm = self.return_map(&em, state)?.stress;
            t.set_column(k, &((sp - sm) / (2.0 * step)));
        }
        Ok(t)
    }
}

/// Serializes mechanisms as `label kind sigma0_MPa kappa_MPa m e1 e2 e3` lines.
pub fn write_mechanisms(mechs: &[(String, DamageMechanism)]) -> String {
    let mut s = String::from("# label kind sigma0_MPa kappa_MPa m e1(3) e2(3) e3(3)\n");
    for (label, m) in mechs {
        let f = &m.frame;
        let _ = writeln!(
            s,
            "{label} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            m.kind.as_str(),
            m.sigma0,
            m.kappa,
            m.m,
            f.e1[0],
            f.e1[1],
            f.e1[2],
            f.e2[0],
            f.e2[1],
            f.e2[2],
            f.e3[0],
            f.e3[1],
            f.e3[2]
        );
    }
    s
}

pub fn read_mechanisms(text: &str) -> Result<Vec<(String, DamageMechanism)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 5 && toks.len() != 14 {
            return Err(Error::format(format!("line {}: expected 5 or 14 fields, found {}", lineno + 1, toks.len())));
        }
        let num = |i: usize| -> Result<f64> { toks[i].parse::<f64>().map_err(|e| Error::format(format!("line {}: {e}", lineno + 1))) };
        let kind = MechanismKind::parse(toks[1])?;
        let frame = if toks.len() == 14 {
            let v = |o: usize| -> Result<Vector3<f64>> { Ok(Vector3::new(num(o)?, num(o + 1)?, num(o + 2)?)) };
            Frame::new(v(5)?, v(8)?, v(11)?)?
        } else {
            Frame::canonical()
        };
        out.push((toks[0].to_string(), DamageMechanism::new(kind, frame, num(2)?, num(3)?, num(4)?)?));
    }
    Ok(out)
}

/// Increments `S(q2) − S(q1)`; PSD whenever `q2 ≥ q1` componentwise.
pub fn compliance_increment(material: &DamageMaterial, before: &DamageState, after: &DamageState) -> SymTensor4 {
    material.compliance(&after.q) - material.compliance(&before.q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{rotate_tensor4, Rotation};
    use proptest::prelude::*;

    fn uniaxial(s11: f64) -> SymTensor2 {
        SymTensor2::new(s11, 0.0, 0.0, 0.0, 0.0, 0.0)
    }

    #[test]
    fn matrix_extraction_hydrostatic_and_deviatoric() {
        let e = extraction_matrix();
        let p = 2.5;
        let s = identity2() * p;
        assert!((e * s - s).norm() < 1e-14);
        assert!(((e * s).norm() - 3f64.sqrt() * p).abs() < 1e-13);
        let dev = SymTensor2::new(1.0, -0.4, -0.6, 0.3, -0.2, 0.9);
        assert!((e * dev).norm() < 1e-15);
        assert!((e * e - e).abs().max() < 1e-15);
    }

    #[test]
    fn bundle_extractions_select_components() {
        let f = Frame::canonical();
        let en = extraction_bundle_normal(&f);
        let es = extraction_bundle_shear(&f);
        assert!((en * uniaxial(100.0)).norm() < 1e-14);
        let s12 = SymTensor2::new(0.0, 0.0, 0.0, 0.0, 0.0, std::f64::consts::SQRT_2 * 10.0);
        assert!((es * s12).norm() > 1.0);
        assert!((en * s12).norm() < 1e-14);
        assert!((en - en.transpose()).abs().max() < 1e-15);
        assert!((es - es.transpose()).abs().max() < 1e-15);
    }

    #[test]
    fn bundle_driving_forces_match_component_formulas() {
        // hand expansion of the dyadic sums
        let f = Frame::canonical();
        let mn = DamageMechanism::bundle_normal_default(f).unwrap();
        let ms = DamageMechanism::bundle_shear_default(f).unwrap();
        let (s11, s22, s33, s23, s13, s12) = (7.0, 3.0, -2.0, 1.5, -4.0, 2.5);
        let r2 = std::f64::consts::SQRT_2;
        let sigma = SymTensor2::new(s11, s22, s33, r2 * s23, r2 * s13, r2 * s12);
        let expect_n = (s22 + s33).powi(2) + 0.25 * (s22 - s33).powi(2) + 0.5 * s23 * s23;
        let expect_s = 0.5 * (s12 * s12 + s13 * s13);
        assert!((mn.driving(&sigma) - expect_n).abs() < 1e-12);
        assert!((ms.driving(&sigma) - expect_s).abs() < 1e-12);
    }

    #[test]
    fn non_orthonormal_frame_rejected() {
        assert!(Frame::new(Vector3::x(), Vector3::new(1.0, 1.0, 0.0), Vector3::z()).is_err());
    }

    #[test]
    fn activation_values() {
        let m = DamageMechanism::matrix_default();
        let g0 = damage_activation(&SymTensor2::zeros(), 0.0, &m);
        assert!((g0 + 36.88f64 * 36.88).abs() < 1e-12);
        let onset = 3f64.sqrt() * 36.88;
        assert!(damage_activation(&uniaxial(onset), 0.0, &m).abs() < 1e-9);
        let s = uniaxial(80.0);
        assert!(damage_activation(&s, 0.01, &m) < damage_activation(&s, 0.0, &m));
    }

    #[test]
    fn compliance_formula() {
        let mat = DamageMaterial::reference_matrix();
        let q0 = [0.0; 3];
        assert_eq!(mat.compliance(&q0), mat.s0);
        let kappa = mat.mechanisms[0].kappa;
        let s = mat.compliance(&[kappa / 2.0, 0.0, 0.0]);
        let em = extraction_matrix();
        assert!((s - (mat.s0 + em * em)).abs().max() < 1e-15);
    }

    #[test]
    fn elastic_branch_keeps_state() {
        let mat = DamageMaterial::reference_matrix();
        let st = mat.initial_state();
        let eps = SymTensor2::new(1e-3, -3e-4, -3e-4, 0.0, 0.0, 0.0);
        let r = mat.return_map(&eps, &st).unwrap();
        assert_eq!(r.state, st);
        assert!((r.stress - mat.c0 * eps).norm() < 1e-12);
    }

    /// Scalar Newton on `g_M(σ(q), q) = 0` for hydrostatic strain `e·I`.
    ///
    /// Under `σ = p I` the damaged compliance gives `e = p (1/(3K) + 2q/κ)`.
    fn hydrostatic_oracle(e: f64) -> (f64, f64) {
        let (young, nu) = (3450.0, 0.385);
        let bulk = young / (3.0 * (1.0 - 2.0 * nu));
        let (s0, kappa) = (36.88f64, 213.92f64);
        let den = |q: f64| 1.0 / (3.0 * bulk) + 2.0 * q / kappa;
        let p_of = |q: f64| e / den(q);
        let g_of = |q: f64| 3.0 * p_of(q).powi(2) - s0 * s0 - kappa * kappa * q;
        let dg_of = |q: f64| 6.0 * p_of(q) * (-e * (2.0 / kappa) / den(q).powi(2)) - kappa * kappa;
        if g_of(0.0) <= 0.0 {
            return (p_of(0.0), 0.0);
        }
        let mut q = 0.0;
        for _ in 0..100 {
            let dq = -g_of(q) / dg_of(q);
            q += dq;
            if dq.abs() < 1e-16 {
                break;
            }
        }
        (p_of(q), q)
    }

    #[test]
    fn hydrostatic_ramp_matches_scalar_oracle() {
        let mat = DamageMaterial::reference_matrix();
        let mut st = mat.initial_state();
        let mut q_prev = 0.0;
        for k in 1..=40 {
            let e = 2.5e-4 * k as f64;
            let eps = identity2() * e;
            let r = mat.return_map(&eps, &st).unwrap();
            let (p, q) = hydrostatic_oracle(e);
            assert!((r.stress[0] - p).abs() < 1e-7 * p.abs().max(1.0), "k={k}: {} vs {p}", r.stress[0]);
            assert!((r.state.q[0] - q).abs() < 1e-9, "k={k}: {} vs {q}", r.state.q[0]);
            if q > 0.0 {
                assert!(r.stress[0] < (mat.c0 * eps)[0]);
                assert!(r.state.q[0] > q_prev);
            }
            q_prev = r.state.q[0];
            st = r.state;
        }
        assert!(q_prev > 0.0);
    }

    #[test]
    fn unloading_is_elastic_with_degraded_stiffness() {
        let mat = DamageMaterial::reference_matrix();
        let st0 = mat.initial_state();
        let dir = SymTensor2::new(1.0, 0.2, 0.2, 0.0, 0.0, 0.0);
        let r1 = mat.return_map(&(dir * 0.02), &st0).unwrap();
        assert!(r1.state.q[0] > 0.0);
        let r2 = mat.return_map(&(dir * 0.01), &r1.state).unwrap();
        assert_eq!(r2.state.q, r1.state.q);
        let secant_damaged = r2.stress.dot(&dir) / 0.01;
        let secant_virgin = (mat.c0 * dir).dot(&dir);
        assert!(secant_damaged < secant_virgin);
        assert!((r2.stress - r1.state.stiffness * (dir * 0.01)).norm() < 1e-10);
    }

    #[test]
    fn consistent_tangent_matches_finite_differences() {
        let mat = DamageMaterial::reference_bundle();
        let st = mat.initial_state();
        let eps = SymTensor2::new(0.001, 0.006, 0.004, 0.003, 0.006, 0.008);
        let r = mat.return_map(&eps, &st).unwrap();
        assert!(r.active[0] && r.active[1]);
        let num = mat.numerical_tangent(&eps, &st, 1e-8).unwrap();
        let err = (r.tangent - num).abs().max() / num.abs().max();
        assert!(err < 1e-5, "tangent mismatch {err:e}");
    }

    #[test]
    fn frame_covariance() {
        let r = Rotation::from_euler_zxz(0.4, 0.9, -1.3);
        let q = r.mandel();
        let c_loc = transversely_isotropic_stiffness(&TransverseIsotropy::BUNDLE, &Vector3::x()).unwrap();
        let f = Frame::canonical();
        let mat =
            DamageMaterial::new(c_loc, vec![DamageMechanism::bundle_normal_default(f).unwrap(), DamageMechanism::bundle_shear_default(f).unwrap()]).unwrap();
        let fr = f.rotated(r.matrix());
        let mat_r = DamageMaterial::new(
            rotate_tensor4(&c_loc, &r),
            vec![DamageMechanism::bundle_normal_default(fr).unwrap(), DamageMechanism::bundle_shear_default(fr).unwrap()],
        )
        .unwrap();
        let eps = SymTensor2::new(0.002, 0.007, -0.001, 0.004, 0.006, 0.005);
        let a = mat.return_map(&eps, &mat.initial_state()).unwrap();
        let b = mat_r.return_map(&(q * eps), &mat_r.initial_state()).unwrap();
        assert!((q * a.stress - b.stress).norm() < 1e-10 * a.stress.norm());
    }

    #[test]
    fn mechanism_file_round_trip() {
        let f = Frame::canonical();
        let list = vec![
            ("M".to_string(), DamageMechanism::matrix_default()),
            ("BN".to_string(), DamageMechanism::bundle_normal_default(f).unwrap()),
            ("BS".to_string(), DamageMechanism::bundle_shear_default(f).unwrap()),
        ];
        let back = read_mechanisms(&write_mechanisms(&list)).unwrap();
        assert_eq!(back, list);
        assert!(read_mechanisms("M matrix 1 2").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn random_walk_is_dissipative_and_monotone(seed in prop::array::uniform32(-1.0f64..1.0)) {
            for mat in [DamageMaterial::reference_matrix(), DamageMaterial::reference_bundle()] {
                let mut st = mat.initial_state();
                let mut eps = SymTensor2::zeros();
                for step in 0..60 {
                    let k = step % 5;
                    let d = SymTensor2::new(seed[k], seed[k + 5], seed[k + 10], seed[k + 15], seed[k + 20], seed[k + 25]) * 1.2e-3
                        + SymTensor2::new(4e-4, 4e-4, 4e-4, 3e-4, 3e-4, 3e-4);
                    let new_eps = eps + d;
                    let r = mat.return_map(&new_eps, &st).unwrap();
                    let dpsi = mat.free_energy(&new_eps, &r.state) - mat.free_energy(&eps, &st);
                    prop_assert!(r.stress.dot(&d) - dpsi >= -1e-10);
                    let inc = compliance_increment(&mat, &st, &r.state);
                    prop_assert!(min_eigenvalue(&inc) >= -1e-15);
                    for i in 0..mat.mechanisms.len() {
                        prop_assert!(r.state.q[i] >= st.q[i]);
                        let g = damage_activation(&r.stress, r.state.q[i], &mat.mechanisms[i]);
                        prop_assert!(g <= mat.tol_g());
                        prop_assert!(((r.state.q[i] - st.q[i]) * g).abs() <= TOL_KKT);
                    }
                    eps = new_eps;
                    st = r.state;
                }
            }
        }
    }
}

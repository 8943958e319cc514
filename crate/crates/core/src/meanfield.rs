//! Mean-field homogenization: Mori–Tanaka with cylindrical inclusions,
//! planar orientation averaging, the linear training-target oracle and a
//! secant mean-field reference for the nonlinear damage response.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;

use crate::damage::{DamageMaterial, DamageState};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::{isotropic_stiffness, min_eigenvalue, rotate_tensor4, Rotation, SymTensor2, SymTensor4, TransverseIsotropy};

/// Number of in-plane quadrature angles.
pub const N_THETA: usize = 64;

/// Isotropic fiber and matrix constants of the reference material system.
pub const FIBER_E: f64 = 72_000.0;
pub const FIBER_NU: f64 = 0.22;
pub const MATRIX_E: f64 = 3_450.0;
pub const MATRIX_NU: f64 = 0.385;
/// Fiber fraction inside a bundle.
pub const BUNDLE_FIBER_FRACTION: f64 = 0.7;

/// Eshelby tensor of an infinite circular cylinder along `e1` in an isotropic
/// matrix with Poisson ratio `nu`, in Mandel form.
pub fn eshelby_cylinder(nu: f64) -> SymTensor4 {
    let d = 8.0 * (1.0 - nu);
    let mut s = SymTensor4::zeros();
    s[(1, 1)] = (5.0 - 4.0 * nu) / d;
    s[(2, 2)] = s[(1, 1)];
    s[(1, 2)] = (4.0 * nu - 1.0) / d;
    s[(2, 1)] = s[(1, 2)];
    s[(1, 0)] = nu / (2.0 * (1.0 - nu));
    s[(2, 0)] = s[(1, 0)];
    s[(3, 3)] = 2.0 * (3.0 - 4.0 * nu) / d;
    s[(4, 4)] = 0.5;
    s[(5, 5)] = 0.5;
    s
}

/// Poisson ratio of an isotropic stiffness.
pub fn isotropic_poisson(c: &SymTensor4) -> f64 {
    let lambda = c[(0, 1)];
    let mu = 0.5 * c[(5, 5)];
    lambda / (2.0 * (lambda + mu))
}

/// Strain concentration tensors `(A_matrix, A_inclusion)` of the Mori–Tanaka
/// scheme for aligned cylinders along `e1` in an isotropic matrix.
pub fn mori_tanaka_concentration(c_m: &SymTensor4, c_i: &SymTensor4, v_i: f64) -> Result<(SymTensor4, SymTensor4)> {
    let nu = isotropic_poisson(c_m);
    let s = eshelby_cylinder(nu);
    let s_m = c_m.try_inverse().ok_or_else(|| Error::numerical("matrix stiffness singular"))?;
    let id = SymTensor4::identity();
    let a_dil = (id + s * s_m * (c_i - c_m)).try_inverse().ok_or_else(|| Error::numerical("dilute concentration singular"))?;
    let a_m = ((1.0 - v_i) * id + v_i * a_dil).try_inverse().ok_or_else(|| Error::numerical("Mori–Tanaka average singular"))?;
    Ok((a_m, a_dil * a_m))
}

/// Mori–Tanaka stiffness of aligned cylinders (axis `e1`, stiffness `c_i`,
/// fraction `v_i`) in an isotropic matrix `c_m`.
pub fn mori_tanaka(c_m: &SymTensor4, c_i: &SymTensor4, v_i: f64) -> Result<SymTensor4> {
    if !(0.0..=1.0).contains(&v_i) {
        return Err(Error::invalid(format!("volume fraction {v_i} outside [0, 1]")));
    }
    if v_i == 0.0 {
        return Ok(*c_m);
    }
    if v_i == 1.0 {
        return Ok(*c_i);
    }
    let (_, a_i) = mori_tanaka_concentration(c_m, c_i, v_i)?;
    let c = c_m + v_i * (c_i - c_m) * a_i;
    Ok(0.5 * (c + c.transpose()))
}

/// Mori–Tanaka stiffness of isotropic fibers in an isotropic matrix.
pub fn mori_tanaka_cylinder(c_f: &SymTensor4, c_m: &SymTensor4, v_f: f64) -> Result<SymTensor4> {
    mori_tanaka(c_m, c_f, v_f)
}

/// Bundle stiffness from the reference fiber and matrix constants.
pub fn reference_bundle_stiffness() -> SymTensor4 {
    let c_f = isotropic_stiffness(FIBER_E, FIBER_NU).expect("valid constants");
    let c_m = isotropic_stiffness(MATRIX_E, MATRIX_NU).expect("valid constants");
    mori_tanaka_cylinder(&c_f, &c_m, BUNDLE_FIBER_FRACTION).expect("valid fraction")
}

/// Equally spaced angles in `[0, π)` and weights of the planar density
/// `∝ exp(κ cos 2θ)` whose second moment is `diag(a, 1 − a, 0)`.
pub fn planar_density(a: f64) -> Result<([f64; N_THETA], [f64; N_THETA])> {
    if !(0.5..=1.0).contains(&a) {
        return Err(Error::invalid(format!("orientation parameter {a} outside [0.5, 1]")));
    }
    let mut angles = [0.0; N_THETA];
    for (k, t) in angles.iter_mut().enumerate() {
        *t = PI * k as f64 / N_THETA as f64;
    }
    let weights_for = |kappa: f64| {
        let mut w = [0.0; N_THETA];
        let mut sum = 0.0;
        for k in 0..N_THETA {
            w[k] = (kappa * ((2.0 * angles[k]).cos() - 1.0)).exp();
            sum += w[k];
        }
        w.iter_mut().for_each(|x| *x /= sum);
        w
    };
    let moment = |w: &[f64; N_THETA]| -> f64 { (0..N_THETA).map(|k| w[k] * angles[k].cos().powi(2)).sum() };
    if a >= 1.0 - 1e-12 {
        let mut w = [0.0; N_THETA];
        w[0] = 1.0;
        return Ok((angles, w));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while moment(&weights_for(hi)) < a {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::numerical(format!("cannot reach orientation moment {a}")));
        }
    }
    let mut w = weights_for(0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        w = weights_for(mid);
        let m = moment(&w);
        if (m - a).abs() <= 1e-13 {
            break;
        }
        if m < a {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if w.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::numerical("negative quadrature weight"));
    }
    Ok((angles, w))
}

/// Planar orientation average of a stiffness that is transversely isotropic
/// about `e1`, weighted by [`planar_density`].
pub fn orientation_average(c_ud: &SymTensor4, a: f64) -> Result<SymTensor4> {
    let (angles, w) = planar_density(a)?;
    let mut out = SymTensor4::zeros();
    for k in 0..N_THETA {
        if w[k] == 0.0 {
            continue;
        }
        out += w[k] * rotate_tensor4(c_ud, &Rotation::about_z(angles[k]));
    }
    Ok(0.5 * (out + out.transpose()))
}

/// Two-step oracle: Mori–Tanaka of phase-2 cylinders in phase 1, then
/// orientation averaging.
pub fn two_step_stiffness(c1: &SymTensor4, c2: &SymTensor4, f: f64, a: f64) -> Result<SymTensor4> {
    let c_ud = mori_tanaka(c1, c2, f)?;
    orientation_average(&c_ud, a)
}

/// Voigt and Reuss bounds of the orientation-averaged phase mixture.
pub fn mixture_bounds(c1: &SymTensor4, c2: &SymTensor4, f: f64, a: f64) -> Result<(SymTensor4, SymTensor4)> {
    let (angles, w) = planar_density(a)?;
    let s1 = c1.try_inverse().ok_or_else(|| Error::numerical("singular phase 1"))?;
    let s2 = c2.try_inverse().ok_or_else(|| Error::numerical("singular phase 2"))?;
    let mut voigt = (1.0 - f) * c1;
    let mut reuss_c = (1.0 - f) * s1;
    for k in 0..N_THETA {
        let r = Rotation::about_z(angles[k]);
        voigt += f * w[k] * rotate_tensor4(c2, &r);
        reuss_c += f * w[k] * rotate_tensor4(&s2, &r);
    }
    let reuss = reuss_c.try_inverse().ok_or_else(|| Error::numerical("singular Reuss compliance"))?;
    Ok((voigt, reuss))
}

/// Pair of phase stiffnesses with the phase-2 fraction.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePair {
    pub c1: SymTensor4,
    pub c2: SymTensor4,
    pub f: f64,
}

/// Linear-elastic training record.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub c1: SymTensor4,
    pub c2: SymTensor4,
    pub f: f64,
    pub a: f64,
    pub target: SymTensor4,
}

/// The 41 training tuples: a 5×5 lattice over `[0.15, 0.35] × [0.5, 0.8]`
/// plus the 4×4 cell centers.
pub fn training_tuples() -> Vec<(f64, f64)> {
    let (f0, f1, a0, a1) = (0.15, 0.35, 0.5, 0.8);
    let mut out = Vec::with_capacity(41);
    for i in 0..5 {
        for j in 0..5 {
            out.push((f0 + (f1 - f0) * i as f64 / 4.0, a0 + (a1 - a0) * j as f64 / 4.0));
        }
    }
    for i in 0..4 {
        for j in 0..4 {
            out.push((f0 + (f1 - f0) * (i as f64 + 0.5) / 4.0, a0 + (a1 - a0) * (j as f64 + 0.5) / 4.0));
        }
    }
    out
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (Uniform::new(lo.ln(), hi.ln()).sample(rng)).exp()
}

/// Random phase-stiffness pair: isotropic phase 1 and a transversely isotropic
/// bundle (Mori–Tanaka of a random fiber in phase 1) as phase 2.
pub fn sample_stiffness_pair<R: Rng>(rng: &mut R) -> Result<(SymTensor4, SymTensor4)> {
    let e1 = log_uniform(rng, 1_000.0, 10_000.0);
    let nu1 = Uniform::new(0.2, 0.45).sample(rng);
    let ef = log_uniform(rng, 40_000.0, 100_000.0);
    let nuf = Uniform::new(0.15, 0.3).sample(rng);
    let c1 = isotropic_stiffness(e1, nu1)?;
    let cf = isotropic_stiffness(ef, nuf)?;
    let c2 = mori_tanaka_cylinder(&cf, &c1, BUNDLE_FIBER_FRACTION)?;
    Ok((c1, c2))
}

/// Samples `n` stiffness pairs, assigns them cyclically to `tuples` and
/// computes the two-step targets.
pub fn build_training_set(tuples: &[(f64, f64)], n: usize, seed: u64) -> Result<Vec<TrainingSample>> {
    if tuples.is_empty() {
        return Err(Error::invalid("no (f, a) tuples given"));
    }
    for &(f, a) in tuples {
        if !(0.0..=1.0).contains(&f) || !(0.5..=1.0).contains(&a) {
            return Err(Error::invalid(format!("tuple ({f}, {a}) outside the admissible domain")));
        }
    }
    (0..n)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream_rng(seed, s as u64);
            let (c1, c2) = sample_stiffness_pair(&mut rng)?;
            let (f, a) = tuples[s % tuples.len()];
            let target = two_step_stiffness(&c1, &c2, f, a)?;
            Ok(TrainingSample { c1, c2, f, a, target })
        })
        .collect()
}

fn push_matrix(s: &mut String, c: &SymTensor4) {
    for i in 0..6 {
        for j in 0..6 {
            let _ = write!(s, " {:e}", c[(i, j)]);
        }
    }
}

/// One line per sample: `f a C1(36) C2(36) Cbar(36)`, row-major Mandel.
pub fn write_training_set(samples: &[TrainingSample]) -> String {
    let mut s = String::from("# mandel; f a C1[36] C2[36] Cbar[36]\n");
    for t in samples {
        let _ = write!(s, "{:e} {:e}", t.f, t.a);
        push_matrix(&mut s, &t.c1);
        push_matrix(&mut s, &t.c2);
        push_matrix(&mut s, &t.target);
        s.push('\n');
    }
    s
}

pub fn read_training_set(text: &str) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> =
            line.split_whitespace().map(|t| t.parse::<f64>().map_err(|e| Error::format(format!("line {}: {e}", lineno + 1)))).collect::<Result<_>>()?;
        if v.len() != 2 + 3 * 36 {
            return Err(Error::format(format!("line {}: expected 110 numbers, found {}", lineno + 1, v.len())));
        }
        let m = |o: usize| SymTensor4::from_row_slice(&v[o..o + 36]);
        out.push(TrainingSample { f: v[0], a: v[1], c1: m(2), c2: m(38), target: m(74) });
    }
    Ok(out)
}

/// Macro strain path `t · amplitude · d⊗d` with `d = (cos α, sin α, 0)`.
pub fn uniaxial_strain_direction(alpha: f64) -> SymTensor2 {
    let d = Vector3::new(alpha.cos(), alpha.sin(), 0.0);
    crate::tensor::sym_dyad(&d, &d)
}

/// How the matrix damage driving force is estimated in the secant scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SecantVariant {
    /// From the mean matrix stress.
    FirstOrder,
    /// From the second moment `⟨σ·E²σ⟩` of the matrix stress, obtained from
    /// the derivative of the effective energy with respect to the matrix
    /// stiffness.
    SecondMoment,
}

struct AngleState {
    matrix: DamageState,
    bundle: DamageState,
}

/// Secant mean-field reference for the nonlinear response: for every
/// quadrature angle a Mori–Tanaka composite of the damaging matrix and
/// damaging bundles (bundle frame rotated in-plane), all angles subjected to
/// the same macro strain and averaged with the orientation weights.
///
/// Returns the macro stress at each of the `steps` equally spaced load levels
/// along `amplitude · direction`.
pub fn secant_reference_curve(
    matrix: &DamageMaterial,
    bundle: &DamageMaterial,
    f: f64,
    a: f64,
    direction: &SymTensor2,
    amplitude: f64,
    steps: usize,
    variant: SecantVariant,
) -> Result<Vec<SymTensor2>> {
    let (angles, w) = planar_density(a)?;
    let active: Vec<usize> = (0..N_THETA).filter(|&k| w[k] > 1e-14).collect();
    let rot: Vec<SymTensor4> = active.iter().map(|&k| Rotation::about_z(angles[k]).mandel()).collect();
    let mut states: Vec<AngleState> = active.iter().map(|_| AngleState { matrix: matrix.initial_state(), bundle: bundle.initial_state() }).collect();
    let mut curve = Vec::with_capacity(steps);
    for step in 1..=steps {
        let eps = direction * (amplitude * step as f64 / steps as f64);
        let mut sigma = SymTensor2::zeros();
        for (idx, &k) in active.iter().enumerate() {
            let q = &rot[idx];
            let eps_loc = q.transpose() * eps;
            let (s_loc, new_m, new_b) = secant_point(matrix, bundle, f, &eps_loc, &states[idx], variant)?;
            states[idx] = AngleState { matrix: new_m, bundle: new_b };
            sigma += w[k] * (q * s_loc);
        }
        curve.push(sigma);
    }
    Ok(curve)
}

fn secant_point(
    matrix: &DamageMaterial,
    bundle: &DamageMaterial,
    f: f64,
    eps: &SymTensor2,
    prev: &AngleState,
    variant: SecantVariant,
) -> Result<(SymTensor2, DamageState, DamageState)> {
    let mut cm = prev.matrix.stiffness;
    let mut cb = prev.bundle.stiffness;
    let mut last = (prev.matrix, prev.bundle);
    for _ in 0..500 {
        let (a_m, a_b) = mori_tanaka_concentration(&cm, &cb, f)?;
        let eb = a_b * eps;
        let new_m = match variant {
            SecantVariant::FirstOrder => matrix.return_map(&(a_m * eps), &prev.matrix)?.state,
            SecantVariant::SecondMoment => second_moment_matrix_state(matrix, &cb, f, eps, &prev.matrix)?,
        };
        let rb = bundle.return_map(&eb, &prev.bundle)?;
        let dq: f64 = (0..3).map(|i| (new_m.q[i] - last.0.q[i]).abs() + (rb.state.q[i] - last.1.q[i]).abs()).sum();
        cm = new_m.stiffness;
        cb = rb.state.stiffness;
        last = (new_m, rb.state);
        if dq < 1e-12 {
            let (a_m, a_b) = mori_tanaka_concentration(&cm, &cb, f)?;
            let sigma = (1.0 - f) * (cm * (a_m * eps)) + f * (cb * (a_b * eps));
            return Ok((sigma, last.0, last.1));
        }
    }
    Err(Error::numerical("secant mean-field iteration did not converge"))
}

fn second_moment_drive(mech: &crate::damage::DamageMechanism, cm: &SymTensor4, cb: &SymTensor4, f: f64, eps: &SymTensor2) -> Result<f64> {
    let delta = cm * mech.extraction_sq * cm;
    let h = 1e-6 * cm.norm() / delta.norm().max(f64::MIN_POSITIVE);
    let up = mori_tanaka(&(cm + h * delta), cb, f)?;
    let dn = mori_tanaka(&(cm - h * delta), cb, f)?;
    Ok(eps.dot(&((up - dn) / (2.0 * h) * eps)) / (1.0 - f))
}

/// Matrix state whose damage variables satisfy consistency with the
/// second-moment driving force `⟨ε·C E² C ε⟩_m = ε̄·∂C̄/∂C_m[C E² C] ε̄ / (1 − f)`
/// for fixed bundle stiffness `cb`. The consistency residual is decreasing in
/// `q`, so each mechanism is bracketed and solved by bisection.
fn second_moment_matrix_state(matrix: &DamageMaterial, cb: &SymTensor4, f: f64, eps: &SymTensor2, prev: &DamageState) -> Result<DamageState> {
    let mut q = prev.q;
    for (i, mech) in matrix.mechanisms.iter().enumerate() {
        let residual = |qi: f64, q: &[f64; 3]| -> Result<f64> {
            let mut trial = *q;
            trial[i] = qi;
            let st = matrix.state_from_q(trial)?;
            let drive = second_moment_drive(mech, &st.stiffness, cb, f, eps)?;
            Ok(drive - mech.sigma0 * mech.sigma0 - mech.kappa * mech.kappa * qi.max(0.0).powf(mech.m))
        };
        let lo0 = prev.q[i];
        if residual(lo0, &q)? <= 0.0 {
            continue;
        }
        let mut lo = lo0;
        let mut hi = lo0.max(1e-6);
        while residual(hi, &q)? > 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > 1e6 {
                return Err(Error::numerical("matrix damage bracket diverged"));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if residual(mid, &q)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi.max(1e-12) {
                break;
            }
        }
        q[i] = 0.5 * (lo + hi);
    }
    matrix.state_from_q(q)
}

/// Checks that `c` is symmetric positive definite.
pub fn is_spd(c: &SymTensor4) -> bool {
    (c - c.transpose()).abs().max() <= 1e-9 * c.abs().max() && min_eigenvalue(c) > 0.0
}

/// Engineering constants of an `e1`-aligned transversely isotropic stiffness.
pub fn engineering_constants(c: &SymTensor4) -> Result<TransverseIsotropy> {
    TransverseIsotropy::from_local_stiffness(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{transversely_isotropic_stiffness, SymTensor4};
    use proptest::prelude::*;

    fn table_phases() -> (SymTensor4, SymTensor4) {
        (isotropic_stiffness(FIBER_E, FIBER_NU).unwrap(), isotropic_stiffness(MATRIX_E, MATRIX_NU).unwrap())
    }

    #[test]
    fn eshelby_components() {
        let nu = 0.3;
        let s = eshelby_cylinder(nu);
        assert!((s[(1, 1)] - 3.8 / 5.6).abs() < 1e-15);
        assert!((s[(1, 2)] - 0.2 / 5.6).abs() < 1e-15);
        assert!((s[(1, 0)] - 0.3 / 1.4).abs() < 1e-15);
        assert!((s[(3, 3)] - 2.0 * 1.8 / 5.6).abs() < 1e-15);
        assert_eq!(s.row(0).norm(), 0.0);
    }

    #[test]
    fn degenerate_fractions() {
        let (cf, cm) = table_phases();
        assert_eq!(mori_tanaka_cylinder(&cf, &cm, 0.0).unwrap(), cm);
        assert_eq!(mori_tanaka_cylinder(&cf, &cm, 1.0).unwrap(), cf);
        assert!(mori_tanaka_cylinder(&cf, &cm, 1.1).is_err());
        let near = mori_tanaka_cylinder(&cf, &cm, 1.0 - 1e-12).unwrap();
        assert!((near - cf).abs().max() < 1e-6 * cf.abs().max());
    }

    /// Closed-form Hill expressions for aligned cylinders, which coincide with
    /// the Mori–Tanaka estimate when the matrix is the softer phase.
    fn hill_oracle(ef: f64, nf: f64, em: f64, nm: f64, f: f64) -> (f64, f64, f64) {
        let lame = |e: f64, n: f64| (e * n / ((1.0 + n) * (1.0 - 2.0 * n)), e / (2.0 * (1.0 + n)));
        let (lf, gf) = lame(ef, nf);
        let (lm, gm) = lame(em, nm);
        let (kf, km) = (lf + gf, lm + gm);
        let k_t = km + f / (1.0 / (kf - km) + (1.0 - f) / (km + gm));
        let g_t = gm + f / (1.0 / (gf - gm) + (1.0 - f) * (km + 2.0 * gm) / (2.0 * gm * (km + gm)));
        let den = (1.0 - f) / kf + f / km + 1.0 / gm;
        let nu_lt = (1.0 - f) * nm + f * nf + (nf - nm) * (1.0 / km - 1.0 / kf) * f * (1.0 - f) / den;
        let e_l = (1.0 - f) * em + f * ef + 4.0 * (nf - nm).powi(2) * f * (1.0 - f) / den;
        let m = 1.0 + 4.0 * k_t * nu_lt * nu_lt / e_l;
        (e_l, 4.0 * k_t * g_t / (k_t + m * g_t), nu_lt)
    }

    #[test]
    fn reference_bundle_matches_hill_oracle() {
        let c = reference_bundle_stiffness();
        let p = engineering_constants(&c).unwrap();
        let (e_l, e_t, nu_lt) = hill_oracle(FIBER_E, FIBER_NU, MATRIX_E, MATRIX_NU, BUNDLE_FIBER_FRACTION);
        assert!((p.e_l - e_l).abs() / e_l < 1e-10, "{} vs {e_l}", p.e_l);
        assert!((p.e_t - e_t).abs() / e_t < 1e-10, "{} vs {e_t}", p.e_t);
        assert!((p.nu_lt - nu_lt).abs() < 1e-10);
        // frozen values of the oracle
        assert!((e_l - 51_459.384).abs() < 1e-2);
        assert!((e_t - 15_306.351).abs() < 1e-2);
        let rebuilt = transversely_isotropic_stiffness(&p, &Vector3::x()).unwrap();
        assert!((rebuilt - c).abs().max() < 1e-8 * c.abs().max());
        let rot = rotate_tensor4(&c, &Rotation::about_x(0.7));
        assert!((rot - c).abs().max() < 1e-9 * c.abs().max());
    }

    #[test]
    fn density_moments() {
        for a in [0.5, 0.55, 0.65, 0.8, 0.95] {
            let (th, w) = planar_density(a).unwrap();
            let sum: f64 = w.iter().sum();
            let m11: f64 = (0..N_THETA).map(|k| w[k] * th[k].cos().powi(2)).sum();
            let m12: f64 = (0..N_THETA).map(|k| w[k] * th[k].cos() * th[k].sin()).sum();
            assert!((sum - 1.0).abs() < 1e-14);
            assert!((m11 - a).abs() < 1e-10, "a = {a}: {m11}");
            assert!(m12.abs() < 1e-10);
            assert!(w.iter().all(|&x| x >= 0.0));
        }
        assert!(planar_density(0.4).is_err());
    }

    #[test]
    fn orientation_average_limits() {
        let c = reference_bundle_stiffness();
        assert_eq!(orientation_average(&c, 1.0).unwrap(), c);
        let iso = orientation_average(&c, 0.5).unwrap();
        assert!((iso[(0, 0)] - iso[(1, 1)]).abs() < 1e-8 * iso[(0, 0)]);
        let aniso = orientation_average(&c, 0.7).unwrap();
        assert!(aniso[(0, 0)] > aniso[(1, 1)]);
        // planar mirror symmetries leave the normal/shear coupling zero
        for (i, j) in [(0, 3), (0, 4), (0, 5), (1, 5), (3, 5)] {
            assert!(aniso[(i, j)].abs() < 1e-8 * aniso[(0, 0)]);
        }
        assert!(is_spd(&aniso));
    }

    #[test]
    fn tuples_cover_domain() {
        let t = training_tuples();
        assert_eq!(t.len(), 41);
        assert!(t.iter().all(|&(f, a)| (0.15..=0.35).contains(&f) && (0.5..=0.8).contains(&a)));
        assert_eq!(1230 / t.len(), 30);
    }

    #[test]
    fn homogeneous_pair_gives_itself() {
        let c = isotropic_stiffness(4000.0, 0.3).unwrap();
        let out = two_step_stiffness(&c, &c, 0.27, 0.63).unwrap();
        assert!((out - c).abs().max() < 1e-9 * c.abs().max());
    }

    #[test]
    fn training_set_is_deterministic_and_bounded() {
        let tuples = training_tuples();
        let a = build_training_set(&tuples, 60, 7).unwrap();
        let b = build_training_set(&tuples, 60, 7).unwrap();
        assert_eq!(a, b);
        for (s, t) in a.iter().enumerate() {
            assert_eq!((t.f, t.a), tuples[s % 41]);
            let (voigt, reuss) = mixture_bounds(&t.c1, &t.c2, t.f, t.a).unwrap();
            let scale = voigt.abs().max();
            assert!(min_eigenvalue(&(voigt - t.target)) > -1e-9 * scale);
            assert!(min_eigenvalue(&(t.target - reuss)) > -1e-9 * scale);
            assert!(is_spd(&t.target));
        }
        let text = write_training_set(&a);
        let back = read_training_set(&text).unwrap();
        assert_eq!(back.len(), a.len());
        for (x, y) in back.iter().zip(&a) {
            assert!((x.target - y.target).abs().max() <= 1e-12 * y.target.abs().max());
        }
    }

    #[test]
    fn secant_reference_starts_linear() {
        let m = DamageMaterial::reference_matrix();
        let b = DamageMaterial::reference_bundle();
        let dir = uniaxial_strain_direction(0.0);
        let curve = secant_reference_curve(&m, &b, 0.25, 0.6, &dir, 1e-4, 2, SecantVariant::FirstOrder).unwrap();
        let c = two_step_stiffness(&m.c0, &b.c0, 0.25, 0.6).unwrap();
        let expect = c * (dir * 1e-4);
        assert!((curve[1] - expect).norm() < 1e-9 * expect.norm());
        let full = secant_reference_curve(&m, &b, 0.25, 0.6, &dir, 0.04, 20, SecantVariant::FirstOrder).unwrap();
        let secant_end = full[19][0] / 0.04;
        assert!(secant_end < c[(0, 0)]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn mori_tanaka_monotone_in_fraction(v in 0.0f64..0.95, dv in 0.001f64..0.05) {
            let (cf, cm) = table_phases();
            let lo = mori_tanaka_cylinder(&cf, &cm, v).unwrap();
            let hi = mori_tanaka_cylinder(&cf, &cm, (v + dv).min(1.0)).unwrap();
            prop_assert!(min_eigenvalue(&(hi - lo)) > -1e-9 * cf.abs().max());
        }
    }
}

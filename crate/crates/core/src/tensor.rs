//! Symmetric second- and fourth-order tensors in the orthonormal Mandel basis.
//!
//! A symmetric 3×3 tensor is stored as the 6-vector
//! `(m11, m22, m33, √2·m23, √2·m13, √2·m12)`. With this scaling the Euclidean
//! inner product of two 6-vectors equals the double contraction of the
//! corresponding tensors, so fourth-order tensors with minor symmetries become
//! plain 6×6 matrices and inverses need no bookkeeping factors.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};

use crate::error::{Error, Result};

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Symmetric second-order tensor in Mandel notation.
pub type SymTensor2 = Vector6<f64>;

/// Fourth-order tensor with minor symmetries acting on [`SymTensor2`].
pub type SymTensor4 = Matrix6<f64>;

/// Index pairs of the Mandel components.
pub const MANDEL_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

const SYMMETRY_TOL: f64 = 1e-12;

#[inline]
fn mandel_scale(k: usize) -> f64 {
    if k < 3 {
        1.0
    } else {
        SQRT_2
    }
}

/// Converts a symmetric 3×3 matrix to its Mandel 6-vector.
pub fn to_mandel(m: &Matrix3<f64>) -> Result<SymTensor2> {
    let scale = m.abs().max().max(1.0);
    for i in 0..3 {
        for j in (i + 1)..3 {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::invalid(format!("matrix is not symmetric: m[{i}{j}] = {} but m[{j}{i}] = {}", m[(i, j)], m[(j, i)])));
            }
        }
    }
    Ok(to_mandel_unchecked(m))
}

/// Mandel vector of the symmetric part of `m`.
#[inline]
pub fn to_mandel_unchecked(m: &Matrix3<f64>) -> SymTensor2 {
    let mut v = SymTensor2::zeros();
    for (k, &(i, j)) in MANDEL_PAIRS.iter().enumerate() {
        v[k] = if i == j { m[(i, i)] } else { 0.5 * (m[(i, j)] + m[(j, i)]) * SQRT_2 };
    }
    v
}

/// Inverse of [`to_mandel`].
#[inline]
pub fn from_mandel(v: &SymTensor2) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    for (k, &(i, j)) in MANDEL_PAIRS.iter().enumerate() {
        let x = v[k] / mandel_scale(k);
        m[(i, j)] = x;
        m[(j, i)] = x;
    }
    m
}

/// Mandel vector of `sym(a ⊗ b)`.
#[inline]
pub fn sym_dyad(a: &Vector3<f64>, b: &Vector3<f64>) -> SymTensor2 {
    let s = 0.5 * SQRT_2;
    SymTensor2::new(a[0] * b[0], a[1] * b[1], a[2] * b[2], s * (a[1] * b[2] + a[2] * b[1]), s * (a[0] * b[2] + a[2] * b[0]), s * (a[0] * b[1] + a[1] * b[0]))
}

/// Second-order identity in Mandel notation.
pub fn identity2() -> SymTensor2 {
    SymTensor2::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0)
}

/// Traction `σ·n` of a Mandel stress.
#[inline]
pub fn traction(sigma: &SymTensor2, n: &Vector3<f64>) -> Vector3<f64> {
    from_mandel(sigma) * n
}

/// 6×3 matrix `N` with `N a = sym(a ⊗ n)`; `Nᵀ σ` equals the traction `σ n`.
pub fn jump_operator(n: &Vector3<f64>) -> nalgebra::Matrix6x3<f64> {
    let mut out = nalgebra::Matrix6x3::zeros();
    for k in 0..3 {
        let mut e = Vector3::zeros();
        e[k] = 1.0;
        out.set_column(k, &sym_dyad(&e, n));
    }
    out
}

/// Isotropic stiffness from Young's modulus (MPa) and Poisson ratio.
pub fn isotropic_stiffness(e: f64, nu: f64) -> Result<SymTensor4> {
    if !(e > 0.0) {
        return Err(Error::invalid(format!("Young's modulus must be positive, got {e}")));
    }
    if !(nu > -1.0 && nu < 0.5) {
        return Err(Error::invalid(format!("Poisson ratio {nu} outside (-1, 0.5)")));
    }
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = e / (2.0 * (1.0 + nu));
    Ok(isotropic_from_lame(lambda, mu))
}

/// Isotropic stiffness from bulk and shear moduli.
pub fn isotropic_from_bulk_shear(bulk: f64, shear: f64) -> SymTensor4 {
    isotropic_from_lame(bulk - 2.0 * shear / 3.0, shear)
}

fn isotropic_from_lame(lambda: f64, mu: f64) -> SymTensor4 {
    let mut c = SymTensor4::zeros();
    for i in 0..3 {
        for j in 0..3 {
            c[(i, j)] = lambda;
        }
        c[(i, i)] += 2.0 * mu;
        c[(i + 3, i + 3)] = 2.0 * mu;
    }
    c
}

/// Engineering constants of a transversely isotropic material whose
/// symmetry axis is the longitudinal direction `L`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransverseIsotropy {
    pub e_l: f64,
    pub e_t: f64,
    pub nu_lt: f64,
    pub nu_tt: f64,
    pub g_lt: f64,
}

impl TransverseIsotropy {
    /// Homogenized bundle properties of the reference material system.
    pub const BUNDLE: Self = Self { e_l: 51_480.0, e_t: 18_660.0, nu_lt: 0.26, nu_tt: 0.402, g_lt: 6_820.0 };

    pub fn g_tt(&self) -> f64 {
        self.e_t / (2.0 * (1.0 + self.nu_tt))
    }

    /// Compliance in the frame whose first axis is the symmetry axis.
    pub fn local_compliance(&self) -> SymTensor4 {
        let mut s = SymTensor4::zeros();
        s[(0, 0)] = 1.0 / self.e_l;
        s[(1, 1)] = 1.0 / self.e_t;
        s[(2, 2)] = 1.0 / self.e_t;
        s[(0, 1)] = -self.nu_lt / self.e_l;
        s[(1, 0)] = s[(0, 1)];
        s[(0, 2)] = s[(0, 1)];
        s[(2, 0)] = s[(0, 1)];
        s[(1, 2)] = -self.nu_tt / self.e_t;
        s[(2, 1)] = s[(1, 2)];
        s[(3, 3)] = 1.0 / (2.0 * self.g_tt());
        s[(4, 4)] = 1.0 / (2.0 * self.g_lt);
        s[(5, 5)] = 1.0 / (2.0 * self.g_lt);
        s
    }

    /// Reads the constants back from a stiffness whose symmetry axis is `e1`.
    pub fn from_local_stiffness(c: &SymTensor4) -> Result<Self> {
        let s = c.try_inverse().ok_or_else(|| Error::numerical("stiffness is singular"))?;
        Ok(Self { e_l: 1.0 / s[(0, 0)], e_t: 1.0 / s[(1, 1)], nu_lt: -s[(0, 1)] / s[(0, 0)], nu_tt: -s[(1, 2)] / s[(1, 1)], g_lt: 1.0 / (2.0 * s[(5, 5)]) })
    }
}

/// Transversely isotropic stiffness with symmetry axis `axis`.
///
/// Constants are ordered `(E_L, E_T, ν_LT, ν_TT, G_LT)`.
pub fn transversely_isotropic_stiffness(props: &TransverseIsotropy, axis: &Vector3<f64>) -> Result<SymTensor4> {
    let s = props.local_compliance();
    let eig = SymmetricEigen::new(s);
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || !props.e_l.is_finite() {
        return Err(Error::invalid(format!("engineering constants are not admissible: compliance eigenvalue {min:e}")));
    }
    let local = s.try_inverse().ok_or_else(|| Error::numerical("compliance is singular"))?;
    let local = 0.5 * (local + local.transpose());
    let r = Rotation::with_first_axis(axis)?;
    Ok(rotate_tensor4(&local, &r))
}

/// Proper orthogonal 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    const TOL: f64 = 1e-12;

    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let err = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if err > Self::TOL * 10.0 || (det - 1.0).abs() > Self::TOL * 10.0 {
            return Err(Error::invalid(format!("not a rotation: |RᵀR - I| = {err:e}, det = {det}")));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Rotation by `angle` radians about `e3`.
    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    /// Z-X-Z Euler angles: `R = Rz(φ) Rx(θ) Rz(ψ)`.
    pub fn from_euler_zxz(phi: f64, theta: f64, psi: f64) -> Self {
        Self(Self::about_z(phi).0 * Self::about_x(theta).0 * Self::about_z(psi).0)
    }

    /// Rotation mapping `e1` onto the normalized `axis`.
    pub fn with_first_axis(axis: &Vector3<f64>) -> Result<Self> {
        let norm = axis.norm();
        if !(norm > 0.0) {
            return Err(Error::invalid("axis must be nonzero"));
        }
        let a = axis / norm;
        let helper = if a[2].abs() < 0.9 { Vector3::z() } else { Vector3::x() };
        let b = helper.cross(&a).normalize();
        let c = a.cross(&b);
        let m = Matrix3::from_columns(&[a, b, c]);
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Self(self.0 * other.0)
    }

    /// 6×6 orthogonal matrix `Q` with `Q ε = R ε Rᵀ` in Mandel notation.
    pub fn mandel(&self) -> SymTensor4 {
        mandel_rotation(&self.0)
    }
}

/// Mandel representation of `ε ↦ R ε Rᵀ` for any 3×3 matrix `R`.
pub fn mandel_rotation(r: &Matrix3<f64>) -> SymTensor4 {
    let mut q = SymTensor4::zeros();
    for (k, &(i, j)) in MANDEL_PAIRS.iter().enumerate() {
        // image of the k-th orthonormal basis tensor
        let ri = r.column(i);
        let rj = r.column(j);
        for (l, &(a, b)) in MANDEL_PAIRS.iter().enumerate() {
            q[(l, k)] = match (k < 3, l < 3) {
                (true, true) => ri[a] * rj[b],
                (true, false) => SQRT_2 * ri[a] * ri[b],
                (false, true) => SQRT_2 * ri[a] * rj[a],
                (false, false) => ri[a] * rj[b] + rj[a] * ri[b],
            };
        }
    }
    q
}

/// `R ⋆ C`: the tensor acting as `ε ↦ R C(Rᵀ ε R) Rᵀ`.
pub fn rotate_tensor4(c: &SymTensor4, r: &Rotation) -> SymTensor4 {
    let q = r.mandel();
    q * c * q.transpose()
}

pub fn rotate_tensor2(t: &SymTensor2, r: &Rotation) -> SymTensor2 {
    r.mandel() * t
}

/// Dyadic product `a ⊗ b` of two Mandel vectors.
pub fn dyad(a: &SymTensor2, b: &SymTensor2) -> SymTensor4 {
    a * b.transpose()
}

/// Smallest eigenvalue of the symmetric part.
pub fn min_eigenvalue(c: &SymTensor4) -> f64 {
    SymmetricEigen::new(0.5 * (c + c.transpose())).eigenvalues.min()
}

/// Symmetric positive semi-definite 3×3 matrix with unit trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientationTensor2(Matrix3<f64>);

impl OrientationTensor2 {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let scale = m.abs().max().max(1.0);
        if (m - m.transpose()).abs().max() > 1e-12 * scale {
            return Err(Error::invalid("orientation tensor must be symmetric"));
        }
        if (m.trace() - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("orientation tensor trace is {}", m.trace())));
        }
        let min = SymmetricEigen::new(m).eigenvalues.min();
        if min < -1e-12 {
            return Err(Error::invalid(format!("orientation tensor has eigenvalue {min:e}")));
        }
        Ok(Self(m))
    }

    /// Planar state `diag(a, 1 - a, 0)`.
    pub fn planar(a: f64) -> Self {
        Self(Matrix3::from_diagonal(&Vector3::new(a, 1.0 - a, 0.0)))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Larger in-plane eigenvalue `a` and its angle `θ` to `e1`, from the
    /// normalized in-plane block.
    pub fn planar_parameters(&self) -> (f64, f64) {
        planar_parameters(self.0[(0, 0)], self.0[(1, 1)], self.0[(0, 1)])
    }
}

/// `(a, θ)` of the in-plane block `[[axx, axy], [axy, ayy]]` after normalizing
/// it to unit trace; `θ ∈ (-π/2, π/2]`.
pub fn planar_parameters(axx: f64, ayy: f64, axy: f64) -> (f64, f64) {
    let tr = axx + ayy;
    if !(tr > 0.0) {
        return (0.5, 0.0);
    }
    let (xx, yy, xy) = (axx / tr, ayy / tr, axy / tr);
    let half_diff = 0.5 * (xx - yy);
    let radius = (half_diff * half_diff + xy * xy).sqrt();
    let a = 0.5 + radius;
    let theta = 0.5 * (2.0 * xy).atan2(xx - yy);
    (a.min(1.0), theta)
}

/// Serializes a tensor as a `mandel` header line plus whitespace-separated
/// row-major components.
pub fn write_tensor2(t: &SymTensor2) -> String {
    let mut s = String::from("mandel\n");
    let parts: Vec<String> = t.iter().map(|x| format!("{x:e}")).collect();
    s.push_str(&parts.join(" "));
    s.push('\n');
    s
}

pub fn write_tensor4(c: &SymTensor4) -> String {
    let mut s = String::from("mandel\n");
    for i in 0..6 {
        let row: Vec<String> = (0..6).map(|j| format!("{:e}", c[(i, j)])).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

fn parse_numbers(text: &str, expected: usize) -> Result<Vec<f64>> {
    let mut lines = text.lines();
    match lines.next().map(str::trim) {
        Some("mandel") => {}
        other => {
            return Err(Error::format(format!("expected 'mandel' header, found {other:?}")));
        }
    }
    let values: Vec<f64> = lines
        .flat_map(str::split_whitespace)
        .map(|tok| tok.parse::<f64>().map_err(|e| Error::format(format!("bad number {tok:?}: {e}"))))
        .collect::<Result<_>>()?;
    if values.len() != expected {
        return Err(Error::format(format!("expected {expected} numbers, found {}", values.len())));
    }
    Ok(values)
}

pub fn read_tensor2(text: &str) -> Result<SymTensor2> {
    Ok(SymTensor2::from_iterator(parse_numbers(text, 6)?))
}

pub fn read_tensor4(text: &str) -> Result<SymTensor4> {
    Ok(SymTensor4::from_row_iterator(parse_numbers(text, 36)?))
}

//! Gaussian uncertainty of the molded state, its linear propagation to the
//! loading features, size scaling and confidence ellipses.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix2, SMatrix, Vector2};

use crate::specimen::{feature_names, ShapeLabel, SpecimenRecord, N_FEATURES, N_STRESS_LEVELS};
use crate::{Error, Result};

pub type FeatureMatrix = SMatrix<f64, N_FEATURES, 2>;
pub type FeatureCov = SMatrix<f64, N_FEATURES, N_FEATURES>;

/// Compounding scatter of the stack fiber volume fraction.
pub const SIGMA_C_F: f64 = 0.014;
/// Compounding scatter of the stack orientation parameter.
pub const SIGMA_C_A: f64 = 0.05;
/// Probability mass of a 3σ ellipse of a planar Gaussian, 1 − exp(−9/2).
pub const ELLIPSE_3SIGMA_MASS: f64 = 0.988_891_003_461_757_7;

/// Planar Gaussian over `(f, a)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianState {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl GaussianState {
    pub fn new(mean: Vector2<f64>, cov: Matrix2<f64>) -> Result<Self> {
        check_psd2(&cov)?;
        if !(0.0..=1.0).contains(&mean.x) || !(0.0..=1.0).contains(&mean.y) {
            return Err(Error::invalid(format!("state mean {mean:?} outside [0, 1]²")));
        }
        Ok(Self { mean, cov })
    }

    pub fn pdf(&self, x: &Vector2<f64>) -> Result<f64> {
        gaussian_pdf(
            &DVector::from_column_slice(x.as_slice()),
            &DVector::from_column_slice(self.mean.as_slice()),
            &DMatrix::from_column_slice(2, 2, self.cov.as_slice()),
        )
    }
}

fn check_psd2(c: &Matrix2<f64>) -> Result<()> {
    if c.iter().any(|v| !v.is_finite()) || (c[(0, 1)] - c[(1, 0)]).abs() > 1e-12 * c.abs().max().max(1e-300) {
        return Err(Error::invalid("covariance must be finite and symmetric"));
    }
    let (l, _) = eigen2(c);
    if l[1] < -1e-12 * l[0].abs().max(1e-300) {
        return Err(Error::invalid(format!("covariance is not positive semi-definite (λ = {l:?})")));
    }
    Ok(())
}

/// Multivariate normal density.
pub fn gaussian_pdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let k = x.len();
    if mean.len() != k || cov.shape() != (k, k) {
        return Err(Error::invalid("dimension mismatch in gaussian_pdf"));
    }
    let chol = cov.clone().cholesky().ok_or_else(|| Error::numerical("degenerate Gaussian: covariance is singular"))?;
    let d = x - mean;
    let z = chol.l().solve_lower_triangular(&d).ok_or_else(|| Error::numerical("degenerate Gaussian: covariance is singular"))?;
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Ok((-0.5 * z.norm_squared() - 0.5 * log_det - 0.5 * k as f64 * (2.0 * PI).ln()).exp())
}

/// Σ_M = Σ_C + diag(σ_Mf², σ_Ma²).
pub fn compose_molding_cov(sigma_c: &Matrix2<f64>, sigma_mf: f64, sigma_ma: f64) -> Result<Matrix2<f64>> {
    if !(sigma_mf >= 0.0 && sigma_ma >= 0.0) {
        return Err(Error::invalid("molding standard deviations must be non-negative"));
    }
    check_psd2(sigma_c)?;
    Ok(sigma_c + Matrix2::new(sigma_mf * sigma_mf, 0.0, 0.0, sigma_ma * sigma_ma))
}

/// Least-squares map from the mean state `(f, a)` to the loading features,
/// without intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureModel {
    pub m: FeatureMatrix,
    /// Root-mean-square fit residual per feature.
    pub residual_rms: [f64; N_FEATURES],
    pub n_rows: usize,
}

impl FeatureModel {
    pub fn predict(&self, x: &Vector2<f64>) -> SMatrix<f64, N_FEATURES, 1> {
        self.m * x
    }
}

/// Ordinary least squares per feature through a QR factorization of the
/// `n × 2` design matrix.
pub fn fit_feature_matrix(x: &[Vector2<f64>], y: &[[f64; N_FEATURES]]) -> Result<FeatureModel> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::invalid("feature fit needs at least two rows with matching features"));
    }
    let design = DMatrix::from_fn(n, 2, |i, j| x[i][j]);
    let qr = design.clone().qr();
    let r = qr.r();
    let scale = r.abs().max();
    if !(scale > 0.0) || r[(0, 0)].abs() <= 1e-12 * scale || r[(1, 1)].abs() <= 1e-12 * scale {
        return Err(Error::numerical("rank-deficient design: (f, a) columns are collinear"));
    }
    let rhs = DMatrix::from_fn(n, N_FEATURES, |i, k| y[i][k]);
    let qty = qr.q().transpose() * &rhs;
    let coef = r.solve_upper_triangular(&qty).ok_or_else(|| Error::numerical("singular triangular factor"))?;
    let mut m = FeatureMatrix::zeros();
    let mut residual_rms = [0.0; N_FEATURES];
    let resid = &design * &coef - rhs;
    for k in 0..N_FEATURES {
        m[(k, 0)] = coef[(0, k)];
        m[(k, 1)] = coef[(1, k)];
        residual_rms[k] = (resid.column(k).norm_squared() / n as f64).sqrt();
    }
    Ok(FeatureModel { m, residual_rms, n_rows: n })
}

/// Σ_L = M Σ_M Mᵀ, symmetrized.
pub fn propagate_cov(m: &FeatureMatrix, sigma_m: &Matrix2<f64>) -> FeatureCov {
    let c = m * sigma_m * m.transpose();
    0.5 * (c + c.transpose())
}

/// Inverse-size scatter law σ_f = 1 % / (c_f L), σ_a = 1 / (c_a L).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingLaw {
    pub c_f_per_mm: f64,
    pub c_a_per_mm: f64,
}

impl Default for ScalingLaw {
    fn default() -> Self {
        Self { c_f_per_mm: 0.058, c_a_per_mm: 4.184 }
    }
}

/// `(σ_f, σ_a)` at characteristic length `l_mm`; σ_f as a fraction
/// (0.01 = 1 %).
pub fn sigma_of_size(l_mm: f64, law: &ScalingLaw) -> Result<(f64, f64)> {
    if !(l_mm > 0.0) || !(law.c_f_per_mm > 0.0 && law.c_a_per_mm > 0.0) {
        return Err(Error::invalid("scaling law needs positive length and coefficients"));
    }
    Ok((0.01 / (law.c_f_per_mm * l_mm), 1.0 / (law.c_a_per_mm * l_mm)))
}

/// Characteristic length `V^(1/3)`.
pub fn characteristic_length(volume_mm3: f64) -> f64 {
    volume_mm3.cbrt()
}

/// Fitted scaling law and its residuals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingFit {
    pub law: ScalingLaw,
    pub rms_f: f64,
    pub rms_a: f64,
}

/// Least-squares fit of `σ = k / L` to `(L, σ_f, σ_a)` points.
pub fn fit_scaling_law(points: &[(f64, f64, f64)]) -> Result<ScalingFit> {
    if points.is_empty() || points.iter().any(|p| !(p.0 > 0.0)) {
        return Err(Error::invalid("scaling fit needs points with positive length"));
    }
    let s2: f64 = points.iter().map(|p| 1.0 / (p.0 * p.0)).sum();
    let kf = points.iter().map(|p| p.1 / p.0).sum::<f64>() / s2;
    let ka = points.iter().map(|p| p.2 / p.0).sum::<f64>() / s2;
    if !(kf > 0.0 && ka > 0.0) {
        return Err(Error::numerical("scatter does not decrease with size"));
    }
    let n = points.len() as f64;
    let rms_f = (points.iter().map(|p| (p.1 - kf / p.0).powi(2)).sum::<f64>() / n).sqrt();
    let rms_a = (points.iter().map(|p| (p.2 - ka / p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(ScalingFit { law: ScalingLaw { c_f_per_mm: 0.01 / kf, c_a_per_mm: 1.0 / ka }, rms_f, rms_a })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UqCase {
    Base,
    Fvf,
    FvfOri,
}

impl UqCase {
    pub const ALL: [UqCase; 3] = [UqCase::Base, UqCase::Fvf, UqCase::FvfOri];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Base => "Base",
            Self::Fvf => "FVF",
            Self::FvfOri => "FVF+ORI",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| Error::invalid(format!("unknown case '{s}'")))
    }
}

/// Σ_M of the three cases at characteristic length `l_mm`.
pub fn case_covariances(l_mm: f64, sigma_cf: f64, sigma_ca: f64, law: &ScalingLaw) -> Result<[(UqCase, Matrix2<f64>); 3]> {
    let (mf, ma) = sigma_of_size(l_mm, law)?;
    let base = compose_molding_cov(&Matrix2::zeros(), mf, ma)?;
    let fvf = compose_molding_cov(&Matrix2::new(sigma_cf * sigma_cf, 0.0, 0.0, 0.0), mf, ma)?;
    let ori = compose_molding_cov(&Matrix2::new(sigma_cf * sigma_cf, 0.0, 0.0, sigma_ca * sigma_ca), mf, ma)?;
    Ok([(UqCase::Base, base), (UqCase::Fvf, fvf), (UqCase::FvfOri, ori)])
}

/// Eigenvalues (descending) and the angle of the major eigenvector of a
/// symmetric 2×2 matrix.
fn eigen2(c: &Matrix2<f64>) -> ([f64; 2], f64) {
    let (a, b, d) = (c[(0, 0)], 0.5 * (c[(0, 1)] + c[(1, 0)]), c[(1, 1)]);
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    ([mid + rad, mid - rad], 0.5 * (2.0 * b).atan2(a - d))
}

/// Confidence ellipse: semi-axes (major first) and the major-axis angle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub center: Vector2<f64>,
    pub semi_axes: [f64; 2],
    pub angle: f64,
}

impl Ellipse {
    fn axes(&self) -> [Vector2<f64>; 2] {
        let (s, c) = self.angle.sin_cos();
        [Vector2::new(c, s), Vector2::new(-s, c)]
    }

    /// Whether `p` lies inside or on the ellipse; a zero semi-axis makes it
    /// a segment.
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        let d = p - self.center;
        let mut r = 0.0;
        for (ax, &s) in self.axes().iter().zip(&self.semi_axes) {
            let t = d.dot(ax);
            if s > 0.0 {
                r += (t / s).powi(2);
            } else if t.abs() > 1e-12 * d.norm().max(1e-300) {
                return false;
            }
        }
        r <= 1.0
    }

    /// Closed polyline of `n` points (first point repeated at the end).
    pub fn polyline(&self, n: usize) -> Vec<Vector2<f64>> {
        let [u, v] = self.axes();
        (0..=n)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / n as f64;
                self.center + u * (self.semi_axes[0] * t.cos()) + v * (self.semi_axes[1] * t.sin())
            })
            .collect()
    }
}

/// `n_sigma` ellipse of a planar Gaussian; for n_sigma = 3 it holds
/// [`ELLIPSE_3SIGMA_MASS`] of the probability.
pub fn confidence_ellipse(center: Vector2<f64>, cov: &Matrix2<f64>, n_sigma: f64) -> Result<Ellipse> {
    check_psd2(cov)?;
    let (l, angle) = eigen2(cov);
    let semi = [n_sigma * l[0].max(0.0).sqrt(), n_sigma * l[1].max(0.0).sqrt()];
    Ok(Ellipse { center, semi_axes: semi, angle })
}

/// Per-shape, per-case summary for the report.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseReport {
    pub case: UqCase,
    pub sigma_m: Matrix2<f64>,
    pub sigma_l: FeatureCov,
    /// Ellipse of (strength, modulus).
    pub ellipse: Ellipse,
    /// (strain, mean stress, mean − 3σ, mean + 3σ) at the feature levels.
    pub bands: Vec<[f64; 4]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeReport {
    pub shape: ShapeLabel,
    pub length_mm: f64,
    pub mean_state: Vector2<f64>,
    pub model: FeatureModel,
    pub cases: Vec<CaseReport>,
}

/// Fits one feature model per specimen shape over all database rows and
/// propagates the three cases about the shape's mean state. Shapes with
/// fewer than two rows are left out.
pub fn build_report(records: &[SpecimenRecord], length_mm: impl Fn(ShapeLabel) -> f64, law: &ScalingLaw, sigma_c: (f64, f64)) -> Result<Vec<ShapeReport>> {
    if records.is_empty() {
        return Err(Error::invalid("empty specimen database"));
    }
    let mut out = Vec::new();
    for shape in ShapeLabel::TENSILE {
        let rows: Vec<&SpecimenRecord> = records.iter().filter(|r| r.shape == shape).collect();
        if rows.len() < 2 {
            if !rows.is_empty() {
                log::warn!("shape {} has a single database row; skipped in the report", shape.as_str());
            }
            continue;
        }
        let x: Vec<Vector2<f64>> = rows.iter().map(|r| Vector2::new(r.mean_f, r.mean_a)).collect();
        let y: Vec<[f64; N_FEATURES]> = rows.iter().map(|r| r.features).collect();
        let model = fit_feature_matrix(&x, &y)?;
        let mean_state = x.iter().sum::<Vector2<f64>>() / x.len() as f64;
        let mean_y = model.predict(&mean_state);
        let l = length_mm(shape);
        let mut cases = Vec::new();
        for (case, sigma_m) in case_covariances(l, sigma_c.0, sigma_c.1, law)? {
            let sigma_l = propagate_cov(&model.m, &sigma_m);
            let pair = Matrix2::new(sigma_l[(1, 1)], sigma_l[(1, 0)], sigma_l[(0, 1)], sigma_l[(0, 0)]);
            let ellipse = confidence_ellipse(Vector2::new(mean_y[1], mean_y[0]), &pair, 3.0)?;
            let bands = (0..N_STRESS_LEVELS)
                .map(|k| {
                    let i = 3 + k;
                    let sd = sigma_l[(i, i)].max(0.0).sqrt();
                    [0.001 * (k + 1) as f64, mean_y[i], mean_y[i] - 3.0 * sd, mean_y[i] + 3.0 * sd]
                })
                .collect();
            cases.push(CaseReport { case, sigma_m, sigma_l, ellipse, bands });
        }
        out.push(ShapeReport { shape, length_mm: l, mean_state, model, cases });
    }
    if out.is_empty() {
        return Err(Error::invalid("no specimen shape has two or more database rows"));
    }
    Ok(out)
}

/// Plain-text report: one block per shape and case.
pub fn write_report(reports: &[ShapeReport]) -> String {
    let names = feature_names();
    let mut s = String::new();
    for r in reports {
        let _ = writeln!(s, "shape {} rows {} length_mm {} mean_f {} mean_a {}", r.shape.as_str(), r.model.n_rows, r.length_mm, r.mean_state.x, r.mean_state.y);
        let _ = writeln!(s, "feature\tM_f\tM_a\tresidual_rms");
        for (k, n) in names.iter().enumerate() {
            let _ = writeln!(s, "{n}\t{}\t{}\t{}", r.model.m[(k, 0)], r.model.m[(k, 1)], r.model.residual_rms[k]);
        }
        for c in &r.cases {
            let m = &c.sigma_m;
            let _ = writeln!(s, "case {} sigma_M {} {} {} {}", c.case.as_str(), m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
            let e = &c.ellipse;
            let _ =
                writeln!(s, "ellipse strength_MPa {} E_MPa {} semi_axes {} {} angle_rad {}", e.center.x, e.center.y, e.semi_axes[0], e.semi_axes[1], e.angle);
            let sd: Vec<String> = (0..N_FEATURES).map(|k| format!("{}", c.sigma_l[(k, k)].max(0.0).sqrt())).collect();
            let _ = writeln!(s, "feature_sd {}", sd.join(" "));
            let _ = writeln!(s, "strain\tmean_MPa\tlower_3sigma_MPa\tupper_3sigma_MPa");
            for b in &c.bands {
                let _ = writeln!(s, "{}\t{}\t{}\t{}", b[0], b[1], b[2], b[3]);
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn sample2(rng: &mut impl rand::Rng, mean: &Vector2<f64>, cov: &Matrix2<f64>) -> Vector2<f64> {
        let l = cov.cholesky().unwrap().l();
        let z = Vector2::new(StandardNormal.sample(rng), StandardNormal.sample(rng));
        mean + l * z
    }

    fn test_matrix() -> FeatureMatrix {
        FeatureMatrix::from_fn(|i, j| if j == 0 { 3.0e4 + 500.0 * i as f64 } else { -2.0e3 + 40.0 * i as f64 })
    }

    #[test]
    fn propagated_covariance_matches_monte_carlo() {
        let m = test_matrix();
        let cov = Matrix2::new(4.0e-4, 1.0e-4, 1.0e-4, 2.5e-3);
        let exact = propagate_cov(&m, &cov);
        let mean = Vector2::new(0.26, 0.6);
        let mut rng = stream_rng(11, 0);
        let n = 100_000;
        let ys: Vec<_> = (0..n).map(|_| m * sample2(&mut rng, &mean, &cov)).collect();
        let my = ys.iter().sum::<SMatrix<f64, N_FEATURES, 1>>() / n as f64;
        let mut mc = FeatureCov::zeros();
        for y in &ys {
            let d = y - my;
            mc += d * d.transpose();
        }
        mc /= (n - 1) as f64;
        for k in 0..N_FEATURES {
            let rel = (mc[(k, k)] - exact[(k, k)]).abs() / exact[(k, k)];
            assert!(rel < 0.05, "feature {k}: {rel}");
        }
    }

    #[test]
    fn three_sigma_ellipse_coverage() {
        assert!((ELLIPSE_3SIGMA_MASS - (1.0 - (-4.5f64).exp())).abs() < 1e-15);
        let cov = Matrix2::new(9.0, -2.0, -2.0, 1.5);
        let c = Vector2::new(150.0, 9000.0);
        let e = confidence_ellipse(c, &cov, 3.0).unwrap();
        let mut rng = stream_rng(12, 0);
        let n = 200_000;
        let inside = (0..n).filter(|_| e.contains(&sample2(&mut rng, &c, &cov))).count();
        let frac = inside as f64 / n as f64;
        assert!((frac - ELLIPSE_3SIGMA_MASS).abs() < 0.003, "{frac}");
    }

    #[test]
    fn ellipse_axes_follow_eigenvectors() {
        let e = confidence_ellipse(Vector2::zeros(), &Matrix2::new(4.0, 0.0, 0.0, 1.0), 3.0).unwrap();
        assert!((e.semi_axes[0] - 6.0).abs() < 1e-12 && (e.semi_axes[1] - 3.0).abs() < 1e-12);
        assert!(e.angle.abs() < 1e-12);
        let seg = confidence_ellipse(Vector2::zeros(), &Matrix2::new(1.0, 1.0, 1.0, 1.0), 1.0).unwrap();
        assert!(seg.semi_axes[1].abs() < 1e-7);
        assert!(seg.contains(&Vector2::new(0.5, 0.5)));
        assert!(!seg.contains(&Vector2::new(0.5, -0.5)));
        let pts = e.polyline(64);
        assert_eq!(pts.len(), 65);
        assert!((pts[0] - pts[64]).norm() < 1e-12);
    }

    #[test]
    fn pdf_normalizes_and_rejects_singular() {
        let cov = Matrix2::new(0.02, 0.005, 0.005, 0.01);
        let g = GaussianState::new(Vector2::new(0.5, 0.5), cov).unwrap();
        let (n, lo, hi) = (400, -0.2, 1.2);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let p = Vector2::new(lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h);
                total += g.pdf(&p).unwrap() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 0.01, "{total}");
        let bad = GaussianState { mean: Vector2::new(0.5, 0.5), cov: Matrix2::new(1.0, 1.0, 1.0, 1.0) };
        assert!(matches!(bad.pdf(&Vector2::zeros()), Err(Error::Numerical(_))));
        assert!(GaussianState::new(Vector2::new(0.5, 0.5), Matrix2::new(1.0, 2.0, 2.0, 1.0)).is_err());
    }

    #[test]
    fn fit_recovers_linear_map() {
        let m = test_matrix();
        let mut rng = stream_rng(13, 0);
        let cov = Matrix2::new(1e-3, 0.0, 0.0, 4e-3);
        let mean = Vector2::new(0.26, 0.6);
        let x: Vec<_> = (0..10_000).map(|_| sample2(&mut rng, &mean, &cov)).collect();
        let y: Vec<[f64; N_FEATURES]> = x
            .iter()
            .map(|v| {
                let p = m * v;
                std::array::from_fn(|k| p[k])
            })
            .collect();
        let fit = fit_feature_matrix(&x, &y).unwrap();
        assert!((fit.m - m).abs().max() < 1e-8 * m.abs().max());
        assert!(fit.residual_rms.iter().all(|r| *r < 1e-6));
        let collinear: Vec<_> = (0..5).map(|i| Vector2::new(0.1 * i as f64, 0.2 * i as f64)).collect();
        assert!(matches!(fit_feature_matrix(&collinear, &y[..5]), Err(Error::Numerical(_))));
    }

    #[test]
    fn scaling_law_values_and_fit() {
        let law = ScalingLaw::default();
        let (sf, sa) = sigma_of_size(10.0, &law).unwrap();
        assert!((sf - 0.01 / 0.58).abs() < 1e-15 && (sa - 1.0 / 41.84).abs() < 1e-15);
        let pts: Vec<_> = [5.0, 10.0, 20.0, 40.0]
            .iter()
            .map(|&l| {
                let (f, a) = sigma_of_size(l, &law).unwrap();
                (l, f, a)
            })
            .collect();
        let fit = fit_scaling_law(&pts).unwrap();
        assert!((fit.law.c_f_per_mm - 0.058).abs() < 1e-12 && (fit.law.c_a_per_mm - 4.184).abs() < 1e-12);
        assert!(sigma_of_size(0.0, &law).is_err());
        assert!((characteristic_length(27.0) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn cases_nest() {
        let cs = case_covariances(12.0, SIGMA_C_F, SIGMA_C_A, &ScalingLaw::default()).unwrap();
        let (base, fvf, ori) = (cs[0].1, cs[1].1, cs[2].1);
        assert!((fvf[(0, 0)] - base[(0, 0)] - SIGMA_C_F * SIGMA_C_F).abs() < 1e-15);
        assert_eq!(fvf[(1, 1)], base[(1, 1)]);
        assert!((ori[(1, 1)] - fvf[(1, 1)] - SIGMA_C_A * SIGMA_C_A).abs() < 1e-15);
        assert_eq!(UqCase::parse("FVF+ORI").unwrap(), UqCase::FvfOri);
    }

    fn synthetic_records(n: usize, seed: u64) -> Vec<SpecimenRecord> {
        let m = test_matrix();
        let mut rng = stream_rng(seed, 0);
        let cov = Matrix2::new(1e-3, 2e-4, 2e-4, 4e-3);
        let mean = Vector2::new(0.26, 0.6);
        (0..n)
            .map(|i| {
                let x = sample2(&mut rng, &mean, &cov);
                let noise: f64 = StandardNormal.sample(&mut rng);
                let p = m * x;
                SpecimenRecord {
                    config: "C".into(),
                    plate_seed: i as u64 / 8,
                    shape: ShapeLabel::TENSILE[i % 4],
                    position: i % 8,
                    turns: 0,
                    mean_f: x.x,
                    mean_a: x.y,
                    features: std::array::from_fn(|k| p[k] + noise),
                    filled_levels: 0,
                    failed: true,
                }
            })
            .collect()
    }

    #[test]
    fn report_matches_direct_monte_carlo() {
        let recs = synthetic_records(10_000, 21);
        let law = ScalingLaw::default();
        let reps = build_report(&recs, |_| 12.0, &law, (SIGMA_C_F, SIGMA_C_A)).unwrap();
        assert_eq!(reps.len(), 4);
        let m = test_matrix();
        for r in &reps {
            assert!((r.model.m - m).abs().max() < 0.02 * m.abs().max());
            let c = &r.cases[2];
            let mut rng = stream_rng(22, 0);
            let n = 20_000;
            let strengths: Vec<f64> = (0..n).map(|_| (m * sample2(&mut rng, &r.mean_state, &c.sigma_m))[1]).collect();
            let mu = strengths.iter().sum::<f64>() / n as f64;
            let var = strengths.iter().map(|s| (s - mu).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((var / c.sigma_l[(1, 1)] - 1.0).abs() < 0.06);
        }
        let text = write_report(&reps);
        assert!(text.contains("case FVF+ORI"));
        assert_eq!(text.matches("shape ").count(), 4);
    }

    proptest! {
        #[test]
        fn propagated_cov_is_psd(s1 in 1e-4f64..0.1, s2 in 1e-4f64..0.1, rho in -0.99f64..0.99, scale in 0.1f64..1e4) {
            let cov = Matrix2::new(s1 * s1, rho * s1 * s2, rho * s1 * s2, s2 * s2);
            let m = test_matrix() * scale;
            let c = propagate_cov(&m, &cov);
            prop_assert!((c - c.transpose()).abs().max() == 0.0);
            let eig = c.symmetric_eigenvalues();
            prop_assert!(eig.min() >= -1e-9 * eig.max());
        }

        #[test]
        fn fit_invariant_to_row_order(seed in 0u64..1000) {
            let recs = synthetic_records(64, seed);
            let x: Vec<_> = recs.iter().map(|r| Vector2::new(r.mean_f, r.mean_a)).collect();
            let y: Vec<_> = recs.iter().map(|r| r.features).collect();
            let a = fit_feature_matrix(&x, &y).unwrap();
            let (xr, yr): (Vec<_>, Vec<_>) = x.iter().rev().cloned().zip(y.iter().rev().cloned()).unzip();
            let b = fit_feature_matrix(&xr, &yr).unwrap();
            prop_assert!((a.m - b.m).abs().max() <= 1e-9 * a.m.abs().max());
        }
    }
}

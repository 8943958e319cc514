//! Molding utilities: Cross-WLF viscosity, hydrodynamic wall friction and an
//! anisotropic plug-flow transport of bundle stacks.

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::microstructure::{clip_polyline, Aabb, BundlePolyline};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViscosityParams {
    pub d1_pa_s: f64,
    pub alpha1: f64,
    pub alpha2_c: f64,
    pub t_star_c: f64,
    pub n: f64,
    pub gamma_dot0_per_s: f64,
}

impl Default for ViscosityParams {
    fn default() -> Self {
        Self { d1_pa_s: 72_000.0, alpha1: 7.94, alpha2_c: 105.96, t_star_c: 40.73, n: 0.385, gamma_dot0_per_s: 0.1 }
    }
}

impl ViscosityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d1_pa_s > 0.0 && self.gamma_dot0_per_s > 0.0) || !(0.0..=1.0).contains(&self.n) {
            return Err(Error::invalid("viscosity needs D1 > 0, shear rate scale > 0 and 0 <= n <= 1"));
        }
        Ok(())
    }
}

/// Zero-shear viscosity `η0(T) = D1 exp(−α1 (T − T*) / (α2 + T − T*))` in Pa·s.
pub fn zero_shear_viscosity(t_c: f64, p: &ViscosityParams) -> Result<f64> {
    p.validate()?;
    if !(t_c > p.t_star_c - p.alpha2_c) {
        return Err(Error::invalid(format!("temperature {t_c} °C at or below T* − α2")));
    }
    let dt = t_c - p.t_star_c;
    Ok(p.d1_pa_s * (-p.alpha1 * dt / (p.alpha2_c + dt)).exp())
}

/// Cross-WLF viscosity `η0(T) / (1 + (γ̇/γ̇0)^(1−n))` in Pa·s.
pub fn viscosity(t_c: f64, gamma_dot: f64, p: &ViscosityParams) -> Result<f64> {
    if !(gamma_dot >= 0.0) {
        return Err(Error::invalid("shear rate must be non-negative"));
    }
    let eta0 = zero_shear_viscosity(t_c, p)?;
    Ok(eta0 / (1.0 + (gamma_dot / p.gamma_dot0_per_s).powf(1.0 - p.n)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrictionParams {
    /// Friction coefficient in N·s/m³.
    pub lambda_f: f64,
    pub k: f64,
    pub v0_mm_s: f64,
}

impl Default for FrictionParams {
    fn default() -> Self {
        Self { lambda_f: 3.0e6, k: 0.6, v0_mm_s: 1.0 }
    }
}

/// Wall traction `τ = −λ_f (‖v‖/v0)^(k−1) v` in Pa for a slip velocity in mm/s.
pub fn friction_traction(v_s_mm_s: &Vector2<f64>, p: &FrictionParams) -> Result<Vector2<f64>> {
    if !(p.lambda_f > 0.0 && p.v0_mm_s > 0.0) || !(0.0..=1.0).contains(&p.k) {
        return Err(Error::invalid("friction needs λ_f > 0, v0 > 0 and k in [0, 1]"));
    }
    let speed = v_s_mm_s.norm();
    if speed == 0.0 {
        return Ok(Vector2::zeros());
    }
    let v_m_s = v_s_mm_s * 1e-3;
    Ok(-p.lambda_f * (speed / p.v0_mm_s).powf(p.k - 1.0) * v_m_s)
}

/// Affine plug flow about the stack center: `z` scales by `h/h0`, `x` by
/// `(h0/h)^β` and `y` by `(h0/h)^(1−β)`; the result is clipped to the plate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlugFlowParams {
    pub h0_mm: f64,
    pub h_mm: f64,
    pub beta: f64,
    /// In-plane stack footprint `[xmin, ymin, xmax, ymax]`.
    pub stack_mm: [f64; 4],
    /// In-plane plate bounds `[xmin, ymin, xmax, ymax]` in the molded frame.
    pub plate_mm: [f64; 4],
}

impl PlugFlowParams {
    /// Anisotropy split `β = 1 − a0`: faster flow across the preferred direction.
    pub fn for_orientation(a0: f64, h0_mm: f64, h_mm: f64, stack_mm: [f64; 4], plate_mm: [f64; 4]) -> Self {
        Self { h0_mm, h_mm, beta: 1.0 - a0, stack_mm, plate_mm }
    }

    pub fn scales(&self) -> Vector3<f64> {
        let r = self.h0_mm / self.h_mm;
        Vector3::new(r.powf(self.beta), r.powf(1.0 - self.beta), self.h_mm / self.h0_mm)
    }

    fn center(&self) -> Vector2<f64> {
        Vector2::new(0.5 * (self.stack_mm[0] + self.stack_mm[2]), 0.5 * (self.stack_mm[1] + self.stack_mm[3]))
    }

    pub fn map_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let s = self.scales();
        let c = self.center();
        Vector3::new(c.x + (p.x - c.x) * s.x, c.y + (p.y - c.y) * s.y, p.z * s.z)
    }

    pub fn plate_bounds(&self) -> Aabb {
        Aabb::new(Vector3::new(self.plate_mm[0], self.plate_mm[1], 0.0), Vector3::new(self.plate_mm[2], self.plate_mm[3], self.h_mm))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h0_mm > self.h_mm && self.h_mm > 0.0) {
            return Err(Error::config("plug flow needs h0 > h > 0"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config("anisotropy split must lie in [0, 1]"));
        }
        let boxes = [self.stack_mm, self.plate_mm];
        if boxes.iter().any(|b| !(b[2] > b[0] && b[3] > b[1])) {
            return Err(Error::config("stack and plate bounds must be non-empty"));
        }
        let lo = self.map_point(&Vector3::new(self.stack_mm[0], self.stack_mm[1], 0.0));
        let hi = self.map_point(&Vector3::new(self.stack_mm[2], self.stack_mm[3], 0.0));
        let eps = 1e-9;
        if lo.x > self.plate_mm[0] + eps || lo.y > self.plate_mm[1] + eps || hi.x < self.plate_mm[2] - eps || hi.y < self.plate_mm[3] - eps {
            return Err(Error::config(format!("molded footprint [{:.1}, {:.1}]×[{:.1}, {:.1}] does not cover the plate", lo.x, hi.x, lo.y, hi.y)));
        }
        Ok(())
    }
}

/// Maps every node through the plug flow, rescales each bundle's area so its
/// volume is unchanged, and clips the result to the plate.
pub fn plug_flow_transform(bundles: &[BundlePolyline], p: &PlugFlowParams) -> Result<Vec<BundlePolyline>> {
    p.validate()?;
    let tol = 1e-9;
    let footprint = |q: &Vector3<f64>| q.x >= p.stack_mm[0] - tol && q.x <= p.stack_mm[2] + tol && q.y >= p.stack_mm[1] - tol && q.y <= p.stack_mm[3] + tol;
    if let Some(i) = bundles.iter().position(|b| !b.nodes().iter().all(footprint)) {
        return Err(Error::invalid(format!("bundle {i} leaves the stack footprint")));
    }
    let plate = p.plate_bounds();
    let molded: Vec<Vec<BundlePolyline>> = bundles
        .par_iter()
        .map(|b| {
            let nodes: Vec<Vector3<f64>> = b.nodes().iter().map(|q| p.map_point(q)).collect();
            let mapped = BundlePolyline::new(nodes, 1.0)?;
            let area = b.volume() / mapped.length();
            clip_polyline(mapped.nodes(), &plate).into_iter().map(|piece| BundlePolyline::new(piece, area)).collect()
        })
        .collect::<Result<_>>()?;
    Ok(molded.into_iter().flatten().collect())
}

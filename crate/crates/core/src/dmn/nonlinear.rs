//! Implicit nonlinear evaluation of a network with damaging leaves.
//!
//! Unknowns are one jump vector per laminate node. A Newton step condenses
//! the tree bottom-up into affine maps (stress and jump increments as
//! functions of the node strain increment) and expands it top-down.

use nalgebra::{Matrix3, Matrix3x6, Vector3};

use super::network::{is_matrix_leaf, Network, NodeKind};
use crate::damage::{DamageMaterial, DamageState, MAX_MECHANISMS};
use crate::error::{Error, Result};
use crate::tensor::{SymTensor2, SymTensor4};

pub const MAX_NEWTON: usize = 25;
pub const MAX_HALVINGS: usize = 6;
pub const TOL_EQUILIBRIUM: f64 = 1e-10;

/// Internal variables of a network: per-leaf damage states and node jumps.
#[derive(Clone, Debug, PartialEq)]
pub struct DmnState {
    pub leaves: Vec<DamageState>,
    pub jumps: Vec<Vector3<f64>>,
    /// Macro strain of the last converged solve.
    pub strain: SymTensor2,
}

/// Converged macro response.
#[derive(Clone, Debug)]
pub struct DmnResponse {
    pub strain: SymTensor2,
    pub stress: SymTensor2,
    /// Condensed consistent macro tangent.
    pub tangent: SymTensor4,
    pub state: DmnState,
    pub iterations: usize,
}

/// Intermediate state of a uniaxial-stress Newton solve driven from outside.
#[derive(Clone)]
pub struct UniaxialIterate {
    pub eps: SymTensor2,
    jumps: Vec<Vector3<f64>>,
    ev: Evaluation,
}

/// Linearization of an iterate's axial response under uniaxial stress.
#[derive(Clone, Copy, Debug)]
pub struct UniaxialPredictor {
    pub s0: f64,
    pub stiffness: f64,
    eps11: f64,
    d0: SymTensor2,
    dd: SymTensor2,
}

impl UniaxialIterate {
    pub fn stress(&self) -> &SymTensor2 {
        &self.ev.stress
    }
}

/// Mixed macro loading: components with `strain_controlled[k]` take
/// `strain[k]`, the others are driven to `stress[k]`.
#[derive(Clone, Copy, Debug)]
pub struct MacroControl {
    pub strain_controlled: [bool; 6],
    pub strain: SymTensor2,
    pub stress: SymTensor2,
}

impl MacroControl {
    pub fn strain(eps: SymTensor2) -> Self {
        Self { strain_controlled: [true; 6], strain: eps, stress: SymTensor2::zeros() }
    }

    /// Axial strain `eps11` with all other stress components zero.
    pub fn uniaxial_stress(eps11: f64) -> Self {
        let mut strain = SymTensor2::zeros();
        strain[0] = eps11;
        let mut mask = [false; 6];
        mask[0] = true;
        Self { strain_controlled: mask, strain, stress: SymTensor2::zeros() }
    }
}

/// A network at fixed `(f, a)` with damaging leaf materials.
#[derive(Clone, Debug)]
pub struct NonlinearDmn<'a> {
    pub network: Network,
    pub matrix: &'a DamageMaterial,
    pub bundle: &'a DamageMaterial,
    /// Reference stiffness norm used in the equilibrium tolerance.
    pub c_ref: f64,
    weight_norm: f64,
    /// Subtree weight below each internal node.
    node_weights: Vec<f64>,
}

#[derive(Clone)]
struct Evaluation {
    leaf_stress: Vec<SymTensor2>,
    leaf_strain: Vec<SymTensor2>,
    leaf_state: Vec<DamageState>,
    stress: SymTensor2,
    tangent: SymTensor4,
    /// Node affine maps `Δa = alpha + B Δε_node`.
    alpha: Vec<Vector3<f64>>,
    bmat: Vec<Matrix3x6<f64>>,
    residual: f64,
    offset: SymTensor2,
}

impl<'a> NonlinearDmn<'a> {
    pub fn new(network: Network, matrix: &'a DamageMaterial, bundle: &'a DamageMaterial) -> Self {
        let c_ref = matrix.c0.norm().max(bundle.c0.norm());
        let weight_norm = network.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        let nn = network.n_nodes();
        let mut sums = vec![0.0; 2 * nn + 1];
        sums[nn..].copy_from_slice(&network.weights);
        for k in (0..nn).rev() {
            sums[k] = sums[2 * k + 1] + sums[2 * k + 2];
        }
        sums.truncate(nn);
        Self { network, matrix, bundle, c_ref, weight_norm, node_weights: sums }
    }

    fn material(&self, leaf: usize) -> &DamageMaterial {
        if is_matrix_leaf(leaf) {
            self.matrix
        } else {
            self.bundle
        }
    }

    pub fn initial_state(&self) -> DmnState {
        DmnState {
            leaves: (0..self.network.n_leaves()).map(|j| self.material(j).initial_state()).collect(),
            jumps: vec![Vector3::zeros(); self.network.n_nodes()],
            strain: SymTensor2::zeros(),
        }
    }

    /// Linear-elastic effective stiffness at the current damage state.
    pub fn secant_stiffness(&self, state: &DmnState) -> Result<SymTensor4> {
        let fake = |j: usize| state.leaves[j].stiffness;
        let nn = self.network.n_nodes();
        let mut out = vec![SymTensor4::zeros(); 2 * nn + 1];
        for j in 0..self.network.n_leaves() {
            let q = &self.network.rotations[j];
            out[nn + j] = q * fake(j) * q.transpose();
        }
        for s in (0..nn).rev() {
            let node = &self.network.nodes[s];
            out[s] = match node.kind {
                NodeKind::Empty => SymTensor4::zeros(),
                NodeKind::Left => out[2 * s + 1],
                NodeKind::Right => out[2 * s + 2],
                NodeKind::Laminate => super::laminate::LaminateTape::forward(&out[2 * s + 1], &out[2 * s + 2], node.c_left, node.nmat)?.output,
            };
        }
        Ok(out[0])
    }

    fn leaf_strains(&self, eps: &SymTensor2, jumps: &[Vector3<f64>]) -> Vec<SymTensor2> {
        let nn = self.network.n_nodes();
        let mut slot = vec![SymTensor2::zeros(); 2 * nn + 1];
        slot[0] = *eps;
        for s in 0..nn {
            let node = &self.network.nodes[s];
            let e = slot[s];
            let (l, r) = (2 * s + 1, 2 * s + 2);
            match node.kind {
                NodeKind::Empty => {}
                NodeKind::Left => slot[l] = e,
                NodeKind::Right => slot[r] = e,
                NodeKind::Laminate => {
                    let nj = node.nmat * jumps[s];
                    slot[l] = e + (1.0 - node.c_left) * nj;
                    slot[r] = e - node.c_left * nj;
                }
            }
        }
        slot.split_off(nn)
    }

    fn evaluate(&self, eps: &SymTensor2, jumps: &[Vector3<f64>], start: &DmnState) -> Result<Evaluation> {
        self.evaluate_from(eps, jumps, start, None)
    }

    /// Evaluation whose leaf correctors start from the internal variables of
    /// a previous iterate.
    fn evaluate_from(&self, eps: &SymTensor2, jumps: &[Vector3<f64>], start: &DmnState, prev: Option<&Evaluation>) -> Result<Evaluation> {
        let nn = self.network.n_nodes();
        let nl = self.network.n_leaves();
        let leaf_strain = self.leaf_strains(eps, jumps);
        let mut s = vec![SymTensor2::zeros(); 2 * nn + 1];
        let mut avg = vec![SymTensor2::zeros(); 2 * nn + 1];
        let mut t = vec![SymTensor4::zeros(); 2 * nn + 1];
        let mut leaf_stress = vec![SymTensor2::zeros(); nl];
        let mut leaf_state = Vec::with_capacity(nl);
        for j in 0..nl {
            if self.network.weights[j] <= 0.0 {
                leaf_state.push(start.leaves[j]);
                continue;
            }
            let q = &self.network.rotations[j];
            let local = q.transpose() * leaf_strain[j];
            let resp = self.material(j).return_map_from(&local, &start.leaves[j], prev.map(|p| &p.leaf_state[j].q))?;
            let sig = q * resp.stress;
            leaf_stress[j] = sig;
            s[nn + j] = sig;
            avg[nn + j] = sig;
            t[nn + j] = q * resp.tangent * q.transpose();
            leaf_state.push(resp.state);
        }
        let mut alpha = vec![Vector3::zeros(); nn];
        let mut bmat = vec![Matrix3x6::zeros(); nn];
        let mut res2 = 0.0;
        for k in (0..nn).rev() {
            let node = &self.network.nodes[k];
            let (l, r) = (2 * k + 1, 2 * k + 2);
            match node.kind {
                NodeKind::Empty => {}
                NodeKind::Left => {
                    s[k] = s[l];
                    avg[k] = avg[l];
                    t[k] = t[l];
                }
                NodeKind::Right => {
                    s[k] = s[r];
                    avg[k] = avg[r];
                    t[k] = t[r];
                }
                NodeKind::Laminate => {
                    let cl = node.c_left;
                    let cr = 1.0 - cl;
                    let n = &node.nmat;
                    let dt = t[l] - t[r];
                    let kmat: Matrix3<f64> = n.transpose() * (cr * t[l] + cl * t[r]) * n;
                    let kinv = kmat.try_inverse().ok_or_else(|| Error::numerical(format!("singular condensed stiffness at node {k}")))?;
                    let jump_res = n.transpose() * (s[l] - s[r]);
                    let a = -kinv * jump_res;
                    let b = -kinv * (n.transpose() * dt);
                    let dtn = dt * n;
                    s[k] = cl * s[l] + cr * s[r] + cl * cr * (dtn * a);
                    t[k] = cl * t[l] + cr * t[r] + cl * cr * (dtn * b);
                    avg[k] = cl * avg[l] + cr * avg[r];
                    alpha[k] = a;
                    bmat[k] = b;
                    let w = self.node_weights[k];
                    let rk = n.transpose() * (avg[l] - avg[r]) * (w * cl * cr);
                    res2 += rk.norm_squared();
                }
            }
        }
        Ok(Evaluation {
            leaf_stress,
            leaf_strain,
            leaf_state,
            stress: avg[0],
            tangent: 0.5 * (t[0] + t[0].transpose()),
            alpha,
            bmat,
            residual: res2.sqrt(),
            offset: s[0],
        })
    }

    fn expand(&self, d_eps: &SymTensor2, ev: &Evaluation) -> Vec<Vector3<f64>> {
        let nn = self.network.n_nodes();
        let mut de = vec![SymTensor2::zeros(); 2 * nn + 1];
        let mut da = vec![Vector3::zeros(); nn];
        de[0] = *d_eps;
        for k in 0..nn {
            let node = &self.network.nodes[k];
            let (l, r) = (2 * k + 1, 2 * k + 2);
            match node.kind {
                NodeKind::Empty => {}
                NodeKind::Left => de[l] = de[k],
                NodeKind::Right => de[r] = de[k],
                NodeKind::Laminate => {
                    let step = ev.alpha[k] + ev.bmat[k] * de[k];
                    da[k] = step;
                    let nj = node.nmat * step;
                    de[l] = de[k] + (1.0 - node.c_left) * nj;
                    de[r] = de[k] - node.c_left * nj;
                }
            }
        }
        da
    }

    fn tolerance(&self, eps: &SymTensor2) -> f64 {
        TOL_EQUILIBRIUM * self.weight_norm * self.c_ref * eps.norm()
    }

    fn mixed_residual(control: &MacroControl, stress: &SymTensor2) -> f64 {
        (0..6).filter(|&k| !control.strain_controlled[k]).map(|k| (stress[k] - control.stress[k]).powi(2)).sum::<f64>().sqrt()
    }

    fn mixed_tolerance(&self, control: &MacroControl, stress: &SymTensor2, eps: &SymTensor2) -> f64 {
        let controlled: f64 = (0..6).filter(|&k| control.strain_controlled[k]).map(|k| stress[k].abs()).fold(0.0, f64::max);
        (1e-10 * controlled).max(TOL_EQUILIBRIUM * self.c_ref * eps.norm())
    }

    /// Macro strain increment solving the condensed mixed system.
    fn macro_increment(&self, control: &MacroControl, eps: &SymTensor2, ev: &Evaluation) -> Result<SymTensor2> {
        let mut d = SymTensor2::zeros();
        let mut free = [0usize; 6];
        let mut n_free = 0;
        for k in 0..6 {
            if !control.strain_controlled[k] {
                free[n_free] = k;
                n_free += 1;
            }
        }
        let free = &free[..n_free];
        for k in 0..6 {
            if control.strain_controlled[k] {
                d[k] = control.strain[k] - eps[k];
            }
        }
        if free.is_empty() {
            return Ok(d);
        }
        // Controlled rows and columns become identity so the system keeps its
        // fixed 6x6 shape.
        let mut a = SymTensor4::identity();
        let mut rhs = SymTensor2::zeros();
        let pred = ev.offset + ev.tangent * d;
        for &fi in free {
            rhs[fi] = control.stress[fi] - pred[fi];
            for &fj in free {
                a[(fi, fj)] = ev.tangent[(fi, fj)];
            }
        }
        let x = a.lu().solve(&rhs).ok_or_else(|| Error::numerical("singular macro tangent in mixed control"))?;
        for &fi in free {
            d[fi] = x[fi];
        }
        Ok(d)
    }

    /// Solves one implicit step from the converged `state` under `control`.
    pub fn solve(&self, control: &MacroControl, state: &DmnState) -> Result<DmnResponse> {
        let mut eps = state.strain;
        for k in 0..6 {
            if control.strain_controlled[k] {
                eps[k] = control.strain[k];
            }
        }
        let mut jumps = state.jumps.clone();
        let mut ev = self.evaluate(&eps, &jumps, state)?;
        let merit = |ev: &Evaluation, eps: &SymTensor2| {
            let eq = ev.residual / self.tolerance(eps).max(f64::MIN_POSITIVE);
            let mx = Self::mixed_residual(control, &ev.stress) / self.mixed_tolerance(control, &ev.stress, eps).max(f64::MIN_POSITIVE);
            eq.max(mx)
        };
        let mut m = merit(&ev, &eps);
        for it in 0..=MAX_NEWTON {
            if m <= 1.0 {
                let state = DmnState { leaves: ev.leaf_state, jumps, strain: eps };
                return Ok(DmnResponse { strain: eps, stress: ev.stress, tangent: ev.tangent, state, iterations: it });
            }
            if it == MAX_NEWTON {
                break;
            }
            let d_eps = self.macro_increment(control, &eps, &ev)?;
            let d_jump = self.expand(&d_eps, &ev);
            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let e_try = eps + scale * d_eps;
                let j_try: Vec<Vector3<f64>> = jumps.iter().zip(&d_jump).map(|(a, d)| a + scale * d).collect();
                match self.evaluate(&e_try, &j_try, state) {
                    Ok(ev_try) => {
                        let m_try = merit(&ev_try, &e_try);
                        if m_try.is_finite() && (m_try < m || scale == 1.0 && m_try <= 1.0) {
                            accepted = Some((e_try, j_try, ev_try, m_try));
                            break;
                        }
                    }
                    Err(Error::Numerical(_)) => {}
                    Err(e) => return Err(e),
                }
                scale *= 0.5;
            }
            let Some((e_new, j_new, ev_new, m_new)) = accepted else {
                return Err(Error::numerical(format!("network Newton line search failed at iteration {it} (merit {m:e})")));
            };
            eps = e_new;
            jumps = j_new;
            ev = ev_new;
            m = m_new;
        }
        Err(Error::numerical(format!("network Newton did not converge in {MAX_NEWTON} iterations (merit {m:e})")))
    }

    /// Starts a uniaxial-stress Newton iterate at macro strain `eps` with
    /// node jumps `jumps`, measured from the converged `state`.
    pub fn uniaxial_iterate(&self, state: &DmnState, eps: SymTensor2, jumps: Vec<Vector3<f64>>) -> Result<UniaxialIterate> {
        let ev = self.evaluate(&eps, &jumps, state)?;
        Ok(UniaxialIterate { eps, jumps, ev })
    }

    /// Affine prediction `σ11 ≈ s0 + E (ε11 − ε11_current)` after one Newton
    /// step of the iterate, with the free stress components relaxed to zero.
    pub fn uniaxial_predictor(&self, it: &UniaxialIterate) -> Result<UniaxialPredictor> {
        let e0 = it.eps[0];
        let d0 = self.macro_increment(&MacroControl::uniaxial_stress(e0), &it.eps, &it.ev)?;
        let d1 = self.macro_increment(&MacroControl::uniaxial_stress(e0 + 1.0), &it.eps, &it.ev)?;
        let dd = d1 - d0;
        let s0 = it.ev.offset[0] + (it.ev.tangent * d0)[0];
        let stiffness = (it.ev.tangent * dd)[0];
        Ok(UniaxialPredictor { s0, stiffness, eps11: e0, d0, dd })
    }

    /// Newton step of the iterate to axial strain `eps11` along a predictor
    /// built from that same iterate.
    pub fn uniaxial_advance(&self, it: &mut UniaxialIterate, pred: &UniaxialPredictor, eps11: f64, state: &DmnState) -> Result<()> {
        let d_eps = pred.d0 + pred.dd * (eps11 - pred.eps11);
        let d_jump = self.expand(&d_eps, &it.ev);
        let eps = it.eps + d_eps;
        let jumps: Vec<Vector3<f64>> = it.jumps.iter().zip(&d_jump).map(|(a, d)| a + d).collect();
        let ev = self.evaluate_from(&eps, &jumps, state, Some(&it.ev))?;
        *it = UniaxialIterate { eps, jumps, ev };
        Ok(())
    }

    /// Full Newton step of the iterate towards axial strain `eps11`.
    pub fn uniaxial_update(&self, it: &mut UniaxialIterate, eps11: f64, state: &DmnState) -> Result<()> {
        let pred = self.uniaxial_predictor(it)?;
        self.uniaxial_advance(it, &pred, eps11, state)
    }

    /// Whether the iterate satisfies node equilibrium and zero free stress.
    pub fn uniaxial_converged(&self, it: &UniaxialIterate) -> bool {
        let control = MacroControl::uniaxial_stress(it.eps[0]);
        let eq = it.ev.residual <= self.tolerance(&it.eps);
        let mx = Self::mixed_residual(&control, &it.ev.stress) <= self.mixed_tolerance(&control, &it.ev.stress, &it.eps);
        eq && mx
    }

    /// Node-equilibrium residual relative to the stress scale of the iterate,
    /// and the largest free stress component relative to the axial stress.
    pub fn uniaxial_residuals(&self, it: &UniaxialIterate) -> (f64, f64) {
        let scale = self.weight_norm * self.c_ref * it.eps.norm();
        let eq = if scale > 0.0 { it.ev.residual / scale } else { it.ev.residual };
        let lateral = it.ev.stress.iter().skip(1).map(|s| s.abs()).fold(0.0, f64::max);
        let axial = it.ev.stress[0].abs();
        (eq, if axial > 0.0 { lateral / axial } else { lateral })
    }

    /// Converged response of an iterate.
    pub fn uniaxial_response(&self, it: &UniaxialIterate) -> DmnResponse {
        let state = DmnState { leaves: it.ev.leaf_state.clone(), jumps: it.jumps.clone(), strain: it.eps };
        DmnResponse { strain: it.eps, stress: it.ev.stress, tangent: it.ev.tangent, state, iterations: 0 }
    }

    /// Response to unit axial strain under uniaxial stress from the virgin
    /// state, and the axial strain at which the first leaf mechanism activates.
    /// Below that strain the response is exactly the scaled unit response.
    pub fn uniaxial_elastic_limit(&self) -> Result<(DmnResponse, f64)> {
        let probe = 1e-7;
        let resp = self.solve(&MacroControl::uniaxial_stress(probe), &self.initial_state())?;
        if resp.state.leaves.iter().any(|l| l.q.iter().any(|&q| q != 0.0)) {
            return Err(Error::numerical("damage at the elastic probe strain"));
        }
        let unit = DmnResponse {
            strain: resp.strain / probe,
            stress: resp.stress / probe,
            tangent: resp.tangent,
            state: DmnState { leaves: resp.state.leaves, jumps: resp.state.jumps.iter().map(|j| j / probe).collect(), strain: resp.state.strain / probe },
            iterations: resp.iterations,
        };
        let leaf_strain = self.leaf_strains(&unit.strain, &unit.state.jumps);
        let mut onset = f64::INFINITY;
        for j in 0..self.network.n_leaves() {
            if self.network.weights[j] <= 0.0 {
                continue;
            }
            let mat = self.material(j);
            let local = mat.c0 * (self.network.rotations[j].transpose() * leaf_strain[j]);
            for mech in &mat.mechanisms {
                let d = mech.driving(&local);
                if d > 0.0 {
                    onset = onset.min(mech.sigma0 / d.sqrt());
                }
            }
        }
        Ok((unit, onset))
    }

    /// Strain-driven step.
    pub fn step(&self, eps: &SymTensor2, state: &DmnState) -> Result<DmnResponse> {
        self.solve(&MacroControl::strain(*eps), state)
    }

    /// `σ̄·ε̄ − Σ w_j σ_j·ε_j` for a converged response, relative to `|σ̄·ε̄|`.
    pub fn hill_mandel_gap(&self, resp: &DmnResponse) -> Result<f64> {
        let ev = self.evaluate(&resp.strain, &resp.state.jumps, &resp.state)?;
        let micro: f64 = (0..self.network.n_leaves()).map(|j| self.network.weights[j] * ev.leaf_stress[j].dot(&ev.leaf_strain[j])).sum();
        let macro_ = ev.stress.dot(&resp.strain);
        Ok((macro_ - micro).abs() / macro_.abs().max(f64::MIN_POSITIVE))
    }

    /// Leaf strains and stresses (global frame) of a converged response.
    pub fn leaf_fields(&self, resp: &DmnResponse) -> Result<(Vec<SymTensor2>, Vec<SymTensor2>)> {
        let ev = self.evaluate(&resp.strain, &resp.state.jumps, &resp.state)?;
        Ok((ev.leaf_strain, ev.leaf_stress))
    }

    /// Weighted mean of internal variable `index` over the matrix or bundle
    /// leaves, normalized by the phase weight.
    pub fn phase_average(&self, state: &DmnState, matrix: bool, index: usize) -> Result<f64> {
        phase_average_internal(state, &self.network.weights, matrix, index)
    }
}

/// Weighted mean of internal variable `index` over one phase's leaves.
pub fn phase_average_internal(state: &DmnState, weights: &[f64], matrix: bool, index: usize) -> Result<f64> {
    if index >= MAX_MECHANISMS {
        return Err(Error::invalid(format!("internal variable index {index} out of range")));
    }
    if weights.len() != state.leaves.len() {
        return Err(Error::invalid("weight count does not match leaf count"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, (w, leaf)) in weights.iter().zip(&state.leaves).enumerate() {
        if is_matrix_leaf(j) == matrix {
            num += w * leaf.q[index];
            den += w;
        }
    }
    if !(den > 0.0) {
        return Err(Error::invalid("phase carries zero weight"));
    }
    Ok(num / den)
}

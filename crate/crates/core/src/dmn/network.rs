//! Micro-oriented direct DMN: parameters, `(f, a)` interpolation and the
//! linear-elastic forward and reverse passes.
//!
//! Tree slots are numbered breadth-first from the root: internal node `s` has
//! children `2s + 1` and `2s + 2`, leaf `j` sits in slot `n_nodes + j`.
//! Even leaves (`j = 0, 2, …`) carry phase 1 (matrix), odd leaves phase 2.

use nalgebra::{Matrix3, Matrix6x3, Vector3};
use rand::Rng;

use super::laminate::{normal_gradient, LaminateTape};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::{jump_operator, mandel_rotation, Rotation, SymTensor4};

/// Trainable parameters of a depth-`K` network.
#[derive(Clone, Debug, PartialEq)]
pub struct DmnParams {
    pub depth: usize,
    pub f_range: [f64; 2],
    pub a_range: [f64; 2],
    /// Lamination direction `normalize(dir0 + a·dir1)` per internal node.
    pub dir0: Vec<Vector3<f64>>,
    pub dir1: Vec<Vector3<f64>>,
    /// Unconstrained leaf weights.
    pub v: Vec<f64>,
    /// Z-X-Z Euler angles `euler0 + a·euler1` per leaf.
    pub euler0: Vec<Vector3<f64>>,
    pub euler1: Vec<Vector3<f64>>,
}

pub const DEFAULT_F_RANGE: [f64; 2] = [0.15, 0.35];
pub const DEFAULT_A_RANGE: [f64; 2] = [0.5, 0.8];

pub fn is_matrix_leaf(j: usize) -> bool {
    j.is_multiple_of(2)
}

impl DmnParams {
    pub fn zeros(depth: usize) -> Self {
        let nn = (1usize << depth) - 1;
        let nl = 1usize << depth;
        Self {
            depth,
            f_range: DEFAULT_F_RANGE,
            a_range: DEFAULT_A_RANGE,
            dir0: vec![Vector3::zeros(); nn],
            dir1: vec![Vector3::zeros(); nn],
            v: vec![0.0; nl],
            euler0: vec![Vector3::zeros(); nl],
            euler1: vec![Vector3::zeros(); nl],
        }
    }

    /// Random initialization with consistent weights (both phase sums equal one).
    pub fn random(depth: usize, seed: u64) -> Result<Self> {
        if !(1..=12).contains(&depth) {
            return Err(Error::invalid(format!("depth {depth} outside 1..=12")));
        }
        let mut rng = stream_rng(seed, 0);
        let mut p = Self::zeros(depth);
        let tau = std::f64::consts::TAU;
        for s in 0..p.n_nodes() {
            loop {
                let d = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                if d.norm() > 0.2 && d.norm() <= 1.0 {
                    p.dir0[s] = d.normalize();
                    break;
                }
            }
            p.dir1[s] = Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
        }
        for j in 0..p.n_leaves() {
            p.v[j] = rng.gen_range(0.2..1.0);
            p.euler0[j] = Vector3::new(rng.gen_range(0.0..tau), rng.gen_range(0.0..std::f64::consts::PI), rng.gen_range(0.0..tau));
            p.euler1[j] = Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        }
        let (sm, sb) = p.phase_sums();
        for j in 0..p.n_leaves() {
            p.v[j] /= if is_matrix_leaf(j) { sm } else { sb };
        }
        Ok(p)
    }

    pub fn n_nodes(&self) -> usize {
        (1usize << self.depth) - 1
    }

    pub fn n_leaves(&self) -> usize {
        1usize << self.depth
    }

    pub fn validate(&self) -> Result<()> {
        let (nn, nl) = (self.n_nodes(), self.n_leaves());
        if self.dir0.len() != nn || self.dir1.len() != nn {
            return Err(Error::invalid("direction coefficient count does not match depth"));
        }
        if self.v.len() != nl || self.euler0.len() != nl || self.euler1.len() != nl {
            return Err(Error::invalid("leaf coefficient count does not match depth"));
        }
        let finite = self.v.iter().all(|x| x.is_finite())
            && self.dir0.iter().chain(&self.dir1).chain(&self.euler0).chain(&self.euler1).all(|x| x.iter().all(|c| c.is_finite()));
        if !finite {
            return Err(Error::numerical("non-finite network parameter"));
        }
        if !(self.f_range[0] < self.f_range[1]) || !(self.a_range[0] < self.a_range[1]) {
            return Err(Error::invalid("empty interpolation domain"));
        }
        Ok(())
    }

    /// `(Σ⟨v⟩ over matrix leaves, Σ⟨v⟩ over bundle leaves)`.
    pub fn phase_sums(&self) -> (f64, f64) {
        let mut s = (0.0, 0.0);
        for (j, &v) in self.v.iter().enumerate() {
            if is_matrix_leaf(j) {
                s.0 += v.max(0.0);
            } else {
                s.1 += v.max(0.0);
            }
        }
        s
    }

    /// Unnormalized leaf weights: `(1 − f)⟨v⟩` on matrix leaves, `f⟨v⟩` on bundle leaves.
    pub fn leaf_weights(&self, f: f64) -> Vec<f64> {
        self.v.iter().enumerate().map(|(j, &v)| if is_matrix_leaf(j) { (1.0 - f) * v.max(0.0) } else { f * v.max(0.0) }).collect()
    }

    pub fn direction(&self, node: usize, a: f64) -> Result<Vector3<f64>> {
        let u = self.dir0[node] + a * self.dir1[node];
        let n = u.norm();
        if !(n > 1e-12) {
            return Err(Error::numerical(format!("lamination direction of node {node} vanishes at a = {a}")));
        }
        Ok(u / n)
    }

    pub fn euler(&self, leaf: usize, a: f64) -> Vector3<f64> {
        self.euler0[leaf] + a * self.euler1[leaf]
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.depth);
        z.f_range = self.f_range;
        z.a_range = self.a_range;
        z
    }

    /// `self += alpha · other` over all trainable coefficients.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        for (x, y) in self.dir0.iter_mut().zip(&other.dir0) {
            *x += alpha * y;
        }
        for (x, y) in self.dir1.iter_mut().zip(&other.dir1) {
            *x += alpha * y;
        }
        for (x, y) in self.v.iter_mut().zip(&other.v) {
            *x += alpha * y;
        }
        for (x, y) in self.euler0.iter_mut().zip(&other.euler0) {
            *x += alpha * y;
        }
        for (x, y) in self.euler1.iter_mut().zip(&other.euler1) {
            *x += alpha * y;
        }
    }

    /// Flat view of all trainable coefficients (directions, weights, angles).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for d in self.dir0.iter().chain(&self.dir1) {
            out.extend(d.iter());
        }
        out.extend(&self.v);
        for e in self.euler0.iter().chain(&self.euler1) {
            out.extend(e.iter());
        }
        out
    }

    pub fn from_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut p = self.zeros_like();
        let need = 6 * self.n_nodes() + 7 * self.n_leaves();
        if flat.len() != need {
            return Err(Error::invalid(format!("expected {need} coefficients, found {}", flat.len())));
        }
        let mut it = flat.iter().copied();
        let v3 = |it: &mut dyn Iterator<Item = f64>| Vector3::new(it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
        for d in p.dir0.iter_mut() {
            *d = v3(&mut it);
        }
        for d in p.dir1.iter_mut() {
            *d = v3(&mut it);
        }
        for v in p.v.iter_mut() {
            *v = it.next().unwrap();
        }
        for e in p.euler0.iter_mut() {
            *e = v3(&mut it);
        }
        for e in p.euler1.iter_mut() {
            *e = v3(&mut it);
        }
        Ok(p)
    }

    pub fn check_domain(&self, f: f64, a: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::invalid(format!("fiber fraction {f} outside [0, 1]")));
        }
        if !(0.5..=1.0).contains(&a) {
            return Err(Error::invalid(format!("orientation parameter {a} outside [0.5, 1]")));
        }
        Ok(())
    }
}

fn rz(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rx(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn drz(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

fn drx(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

pub fn euler_matrix(e: &Vector3<f64>) -> Matrix3<f64> {
    rz(e[0]) * rx(e[1]) * rz(e[2])
}

fn euler_derivatives(e: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let (a, b, c) = (rz(e[0]), rx(e[1]), rz(e[2]));
    [drz(e[0]) * b * c, a * drx(e[1]) * c, a * b * drz(e[2])]
}

/// Directional derivative of the Mandel rotation map at `r` along `dr`.
/// The map is quadratic in the entries of `r`, so the central difference
/// with unit step is exact.
fn mandel_rotation_derivative(r: &Matrix3<f64>, dr: &Matrix3<f64>) -> SymTensor4 {
    0.5 * (mandel_rotation(&(r + dr)) - mandel_rotation(&(r - dr)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    /// Both subtrees carry zero weight.
    Empty,
    /// Only the left (phase-1 side) subtree carries weight.
    Left,
    /// Only the right subtree carries weight.
    Right,
    Laminate,
}

/// One internal node evaluated at fixed `(f, a)`.
#[derive(Clone, Debug)]
pub struct Node {
    pub kind: NodeKind,
    /// Volume fraction of the left child.
    pub c_left: f64,
    pub nmat: Matrix6x3<f64>,
}

/// A network evaluated at one `(f, a)`: normalized weights, leaf rotations
/// and node laminates.
#[derive(Clone, Debug)]
pub struct Network {
    pub depth: usize,
    /// Leaf weights normalized to unit sum.
    pub weights: Vec<f64>,
    /// Mandel rotation matrix `Q(R_j)` per leaf.
    pub rotations: Vec<SymTensor4>,
    pub nodes: Vec<Node>,
}

/// Subtree weight sums in slot order, leaves included.
fn slot_weights(leaf_w: &[f64], n_nodes: usize) -> Vec<f64> {
    let mut w = vec![0.0; 2 * n_nodes + 1];
    w[n_nodes..].copy_from_slice(leaf_w);
    for s in (0..n_nodes).rev() {
        w[s] = w[2 * s + 1] + w[2 * s + 2];
    }
    w
}

fn node_kind(wl: f64, wr: f64) -> NodeKind {
    match (wl > 0.0, wr > 0.0) {
        (false, false) => NodeKind::Empty,
        (true, false) => NodeKind::Left,
        (false, true) => NodeKind::Right,
        (true, true) => NodeKind::Laminate,
    }
}

impl Network {
    pub fn new(params: &DmnParams, f: f64, a: f64) -> Result<Self> {
        params.check_domain(f, a)?;
        let nn = params.n_nodes();
        let w = slot_weights(&params.leaf_weights(f), nn);
        if !(w[0] > 0.0) {
            return Err(Error::numerical("all leaf weights vanish"));
        }
        let mut nodes = Vec::with_capacity(nn);
        for s in 0..nn {
            let (wl, wr) = (w[2 * s + 1], w[2 * s + 2]);
            let kind = node_kind(wl, wr);
            let nmat = if kind == NodeKind::Laminate { jump_operator(&params.direction(s, a)?) } else { Matrix6x3::zeros() };
            let c_left = if kind == NodeKind::Laminate { wl / (wl + wr) } else { 0.0 };
            nodes.push(Node { kind, c_left, nmat });
        }
        let total = w[0];
        let weights = w[nn..].iter().map(|x| x / total).collect();
        let rotations = (0..params.n_leaves()).map(|j| mandel_rotation(&euler_matrix(&params.euler(j, a)))).collect();
        Ok(Self { depth: params.depth, weights, rotations, nodes })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.weights.len()
    }

    /// Effective stiffness for phase stiffnesses `c1` (matrix leaves) and `c2`.
    pub fn stiffness(&self, c1: &SymTensor4, c2: &SymTensor4) -> Result<SymTensor4> {
        let nn = self.n_nodes();
        let mut out = vec![SymTensor4::zeros(); 2 * nn + 1];
        for j in 0..self.n_leaves() {
            if self.weights[j] > 0.0 {
                let q = &self.rotations[j];
                let c = if is_matrix_leaf(j) { c1 } else { c2 };
                out[nn + j] = q * c * q.transpose();
            }
        }
        for s in (0..nn).rev() {
            let node = &self.nodes[s];
            out[s] = match node.kind {
                NodeKind::Empty => SymTensor4::zeros(),
                NodeKind::Left => out[2 * s + 1],
                NodeKind::Right => out[2 * s + 2],
                NodeKind::Laminate => LaminateTape::forward(&out[2 * s + 1], &out[2 * s + 2], node.c_left, node.nmat)?.output,
            };
        }
        Ok(out[0])
    }

    /// The same network rigidly rotated by `r`: leaf frames become
    /// `Q(R) Q_j` and jump operators `Q(R) N`, so the effective response is
    /// `Q(R) C̄ Q(R)ᵀ`.
    pub fn rotated(&self, r: &Rotation) -> Self {
        let q = r.mandel();
        Self {
            depth: self.depth,
            weights: self.weights.clone(),
            rotations: self.rotations.iter().map(|qj| q * qj).collect(),
            nodes: self.nodes.iter().map(|n| Node { kind: n.kind, c_left: n.c_left, nmat: q * n.nmat }).collect(),
        }
    }

    /// Σ of normalized weights over the matrix (`phase = 1`) or bundle leaves.
    pub fn phase_weight(&self, matrix: bool) -> f64 {
        self.weights.iter().enumerate().filter(|(j, _)| is_matrix_leaf(*j) == matrix).map(|(_, w)| w).sum()
    }
}

/// Effective stiffness of the network at `(f, a)`.
pub fn dmn_effective_stiffness(params: &DmnParams, c1: &SymTensor4, c2: &SymTensor4, f: f64, a: f64) -> Result<SymTensor4> {
    Network::new(params, f, a)?.stiffness(c1, c2)
}

/// Recorded linear forward pass for reverse-mode differentiation.
pub struct Tape {
    a: f64,
    n_nodes: usize,
    weights: Vec<f64>,
    kinds: Vec<NodeKind>,
    lam: Vec<Option<LaminateTape>>,
    dirs_raw: Vec<Vector3<f64>>,
    rot: Vec<Matrix3<f64>>,
    qmat: Vec<SymTensor4>,
    phase: [SymTensor4; 2],
    pub output: SymTensor4,
}

impl Tape {
    pub fn forward(params: &DmnParams, c1: &SymTensor4, c2: &SymTensor4, f: f64, a: f64) -> Result<Self> {
        params.check_domain(f, a)?;
        let nn = params.n_nodes();
        let weights = slot_weights(&params.leaf_weights(f), nn);
        if !(weights[0] > 0.0) {
            return Err(Error::numerical("all leaf weights vanish"));
        }
        let mut out = vec![SymTensor4::zeros(); 2 * nn + 1];
        let mut rot = Vec::with_capacity(params.n_leaves());
        let mut qmat = Vec::with_capacity(params.n_leaves());
        for j in 0..params.n_leaves() {
            let r = euler_matrix(&params.euler(j, a));
            let q = mandel_rotation(&r);
            let c = if is_matrix_leaf(j) { c1 } else { c2 };
            out[nn + j] = q * c * q.transpose();
            rot.push(r);
            qmat.push(q);
        }
        let mut kinds = vec![NodeKind::Empty; nn];
        let mut lam: Vec<Option<LaminateTape>> = vec![None; nn];
        let mut dirs_raw = vec![Vector3::zeros(); nn];
        for s in (0..nn).rev() {
            let (l, r) = (2 * s + 1, 2 * s + 2);
            kinds[s] = node_kind(weights[l], weights[r]);
            out[s] = match kinds[s] {
                NodeKind::Empty => SymTensor4::zeros(),
                NodeKind::Left => out[l],
                NodeKind::Right => out[r],
                NodeKind::Laminate => {
                    dirs_raw[s] = params.dir0[s] + a * params.dir1[s];
                    let n = params.direction(s, a)?;
                    let c_left = weights[l] / weights[s];
                    let tape = LaminateTape::forward(&out[l], &out[r], c_left, jump_operator(&n))?;
                    let o = tape.output;
                    lam[s] = Some(tape);
                    o
                }
            };
        }
        Ok(Self { a, n_nodes: nn, weights, kinds, lam, dirs_raw, rot, qmat, phase: [*c1, *c2], output: out[0] })
    }

    /// Gradient of `⟨g, C̄⟩` with respect to all parameters.
    pub fn backward(&self, params: &DmnParams, g: &SymTensor4) -> DmnParams {
        let nn = self.n_nodes;
        let a = self.a;
        let mut grad = params.zeros_like();
        let mut gc = vec![SymTensor4::zeros(); 2 * nn + 1];
        let mut gw = vec![0.0; 2 * nn + 1];
        gc[0] = *g;
        for s in 0..nn {
            let (l, r) = (2 * s + 1, 2 * s + 2);
            match self.kinds[s] {
                NodeKind::Empty => {}
                NodeKind::Left => {
                    gc[l] = gc[s];
                    gw[l] += gw[s];
                }
                NodeKind::Right => {
                    gc[r] = gc[s];
                    gw[r] += gw[s];
                }
                NodeKind::Laminate => {
                    let tape = self.lam[s].as_ref().expect("laminate tape recorded");
                    let adj = tape.backward(&gc[s]);
                    gc[l] = adj.g_c1m;
                    gc[r] = adj.g_c2m;
                    let (wl, wr, w) = (self.weights[l], self.weights[r], self.weights[s]);
                    gw[l] += gw[s] + adj.g_c1 * wr / (w * w);
                    gw[r] += gw[s] - adj.g_c1 * wl / (w * w);
                    let gn = normal_gradient(&adj.g_nmat);
                    let u = self.dirs_raw[s];
                    let un = u.norm();
                    let n = u / un;
                    let gu = (gn - n * n.dot(&gn)) / un;
                    grad.dir0[s] += gu;
                    grad.dir1[s] += a * gu;
                }
            }
        }
        let f_of = |j: usize| {
            // ∂w_j/∂⟨v_j⟩ is (1 − f) or f; recover it from the stored weight.
            let v = params.v[j];
            if v > 0.0 {
                self.weights[nn + j] / v
            } else {
                0.0
            }
        };
        for j in 0..params.n_leaves() {
            let slot = nn + j;
            grad.v[j] = gw[slot] * f_of(j);
            let gq = gc[slot];
            if gq.iter().all(|x| *x == 0.0) {
                continue;
            }
            let c = &self.phase[if is_matrix_leaf(j) { 0 } else { 1 }];
            let q = &self.qmat[j];
            let g_q = (gq + gq.transpose()) * q * c;
            let e = params.euler(j, a);
            let dr = euler_derivatives(&e);
            for k in 0..3 {
                let dq = mandel_rotation_derivative(&self.rot[j], &dr[k]);
                let ga = g_q.component_mul(&dq).sum();
                grad.euler0[j][k] += ga;
                grad.euler1[j][k] += a * ga;
            }
        }
        grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmn::laminate::laminate_homogenize;
    use crate::tensor::{isotropic_stiffness, min_eigenvalue, rotate_tensor4, Rotation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, scale: f64) -> SymTensor4 {
        let a = SymTensor4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        (a * a.transpose() + SymTensor4::identity() * 0.5) * scale
    }

    #[test]
    fn equal_phases_give_the_phase() {
        let p = DmnParams::random(4, 3).unwrap();
        let c = isotropic_stiffness(3450.0, 0.385).unwrap();
        let out = dmn_effective_stiffness(&p, &c, &c, 0.25, 0.6).unwrap();
        assert!((out - c).abs().max() < 1e-12 * c.abs().max());
    }

    #[test]
    fn weights_follow_the_interpolation() {
        let p = DmnParams::random(3, 5).unwrap();
        let f = 0.3;
        let w = p.leaf_weights(f);
        let bundle: f64 = w.iter().enumerate().filter(|(j, _)| !is_matrix_leaf(*j)).map(|(_, x)| x).sum();
        let (_, sb) = p.phase_sums();
        assert!((bundle - f * sb).abs() < 1e-15);
        assert!((bundle - f).abs() < 1e-12);
        let net = Network::new(&p, f, 0.6).unwrap();
        assert!((net.phase_weight(false) - f).abs() < 1e-12);
    }

    #[test]
    fn depth_two_matches_nested_laminates() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = DmnParams::random(2, 11).unwrap();
        let (c1, c2) = (random_spd(&mut rng, 100.0), random_spd(&mut rng, 1000.0));
        let (f, a) = (0.3, 0.7);
        let w = p.leaf_weights(f);
        let leaf = |j: usize| {
            let r = Rotation::new(euler_matrix(&p.euler(j, a))).unwrap();
            rotate_tensor4(if j.is_multiple_of(2) { &c1 } else { &c2 }, &r)
        };
        let left = laminate_homogenize(&leaf(0), &leaf(1), w[0] / (w[0] + w[1]), &p.direction(1, a).unwrap()).unwrap();
        let right = laminate_homogenize(&leaf(2), &leaf(3), w[2] / (w[2] + w[3]), &p.direction(2, a).unwrap()).unwrap();
        let root = laminate_homogenize(&left, &right, (w[0] + w[1]) / w.iter().sum::<f64>(), &p.direction(0, a).unwrap()).unwrap();
        let out = dmn_effective_stiffness(&p, &c1, &c2, f, a).unwrap();
        assert!((out - root).abs().max() < 1e-12 * root.abs().max());
    }

    #[test]
    fn zero_weight_subtree_passes_through() {
        let mut p = DmnParams::random(2, 2).unwrap();
        p.v[2] = -1.0;
        p.v[3] = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c1, c2) = (random_spd(&mut rng, 10.0), random_spd(&mut rng, 100.0));
        let net = Network::new(&p, 0.3, 0.6).unwrap();
        assert_eq!(net.nodes[2].kind, NodeKind::Empty);
        assert_eq!(net.nodes[0].kind, NodeKind::Left);
        let a = 0.6;
        let w = p.leaf_weights(0.3);
        let l0 = rotate_tensor4(&c1, &Rotation::new(euler_matrix(&p.euler(0, a))).unwrap());
        let l1 = rotate_tensor4(&c2, &Rotation::new(euler_matrix(&p.euler(1, a))).unwrap());
        let expect = laminate_homogenize(&l0, &l1, w[0] / (w[0] + w[1]), &p.direction(1, a).unwrap()).unwrap();
        assert!((net.stiffness(&c1, &c2).unwrap() - expect).abs().max() < 1e-12 * expect.abs().max());
        p.v.iter_mut().for_each(|v| *v = -1.0);
        assert!(Network::new(&p, 0.3, 0.6).is_err());
    }

    #[test]
    fn stays_within_voigt_and_reuss() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = DmnParams::random(4, 1).unwrap();
        for _ in 0..20 {
            let (c1, c2) = (random_spd(&mut rng, 10.0), random_spd(&mut rng, 100.0));
            let (f, a) = (rng.gen_range(0.15..0.35), rng.gen_range(0.5..0.8));
            let net = Network::new(&p, f, a).unwrap();
            let out = net.stiffness(&c1, &c2).unwrap();
            let mut voigt = SymTensor4::zeros();
            let mut compl = SymTensor4::zeros();
            for j in 0..net.n_leaves() {
                let q = &net.rotations[j];
                let c = q * if j % 2 == 0 { c1 } else { c2 } * q.transpose();
                voigt += net.weights[j] * c;
                compl += net.weights[j] * c.try_inverse().unwrap();
            }
            let reuss = compl.try_inverse().unwrap();
            let scale = voigt.abs().max();
            assert!(min_eigenvalue(&(voigt - out)) > -1e-10 * scale);
            assert!(min_eigenvalue(&(out - reuss)) > -1e-10 * scale);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = DmnParams::random(3, 4).unwrap();
        let (c1, c2) = (random_spd(&mut rng, 1.0), random_spd(&mut rng, 10.0));
        let g = SymTensor4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let (f, a) = (0.27, 0.66);
        let loss = |q: &DmnParams| Tape::forward(q, &c1, &c2, f, a).unwrap().output.component_mul(&g).sum();
        let tape = Tape::forward(&p, &c1, &c2, f, a).unwrap();
        let grad = tape.backward(&p, &g).to_flat();
        let flat = p.to_flat();
        let h = 1e-6;
        for i in 0..flat.len() {
            let mut up = flat.clone();
            let mut dn = flat.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (loss(&p.from_flat(&up).unwrap()) - loss(&p.from_flat(&dn).unwrap())) / (2.0 * h);
            let scale = fd.abs().max(grad[i].abs()).max(1e-3);
            assert!((fd - grad[i]).abs() / scale < 1e-5, "coefficient {i}: fd {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn rigid_rotation_of_the_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = DmnParams::random(4, 8).unwrap();
        let (c1, c2) = (random_spd(&mut rng, 100.0), random_spd(&mut rng, 1000.0));
        let net = Network::new(&p, 0.27, 0.66).unwrap();
        let r = Rotation::from_euler_zxz(0.4, -1.1, 2.3);
        let expected = rotate_tensor4(&net.stiffness(&c1, &c2).unwrap(), &r);
        let got = net.rotated(&r).stiffness(&c1, &c2).unwrap();
        assert!((got - expected).abs().max() < 1e-11 * expected.abs().max());
    }

    #[test]
    fn in_plane_parameter_rotation_is_covariant() {
        // Shifting every first Euler angle by β and turning every lamination
        // direction by Rz(β) rotates the effective stiffness by Rz(β).
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = DmnParams::random(3, 6).unwrap();
        let (c1, c2) = (random_spd(&mut rng, 100.0), random_spd(&mut rng, 1000.0));
        let beta = 0.83;
        let rz = Rotation::about_z(beta);
        let mut q = p.clone();
        for e in &mut q.euler0 {
            e.x += beta;
        }
        for d in q.dir0.iter_mut().chain(q.dir1.iter_mut()) {
            *d = rz.matrix() * *d;
        }
        let base = dmn_effective_stiffness(&p, &c1, &c2, 0.2, 0.55).unwrap();
        let turned = dmn_effective_stiffness(&q, &c1, &c2, 0.2, 0.55).unwrap();
        let expected = rotate_tensor4(&base, &rz);
        assert!((turned - expected).abs().max() < 1e-10 * expected.abs().max());
    }

    #[test]
    fn flat_round_trip() {
        let p = DmnParams::random(3, 8).unwrap();
        assert_eq!(p.from_flat(&p.to_flat()).unwrap(), p);
    }
}

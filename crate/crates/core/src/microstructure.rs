//! Stochastic bundle stacks, length-weighted orientation statistics and
//! per-cell field evaluation.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::{planar_parameters, OrientationTensor2};

/// Default bundle cross-section area (mm²).
pub const DEFAULT_BUNDLE_AREA: f64 = 0.03;
pub const DEFAULT_PACKING_CAP: f64 = 0.6;
const GEOM_TOL: f64 = 1e-9;

/// Initial stack description. Lengths in mm, areas in mm².
#[derive(Clone, Debug, PartialEq)]
pub struct StackConfig {
    pub f0: f64,
    pub a0: f64,
    pub length_mm: f64,
    pub width_mm: f64,
    pub height_mm: f64,
    pub bundle_length_mm: f64,
    pub segment_length_mm: f64,
    pub bundle_area_mm2: f64,
    pub packing_cap: f64,
    pub seed: u64,
}

impl StackConfig {
    /// 270×270×12 mm stack with 25 mm bundles of 2.5 mm segments.
    pub fn nominal(f0: f64, a0: f64, seed: u64) -> Self {
        Self {
            f0,
            a0,
            length_mm: 270.0,
            width_mm: 270.0,
            height_mm: 12.0,
            bundle_length_mm: 25.0,
            segment_length_mm: 2.5,
            bundle_area_mm2: DEFAULT_BUNDLE_AREA,
            packing_cap: DEFAULT_PACKING_CAP,
            seed,
        }
    }

    /// Same geometry with the bundle area chosen so that roughly `n_bundles`
    /// full-length bundles reach `f0`.
    pub fn with_bundle_count(mut self, n_bundles: usize) -> Self {
        self.bundle_area_mm2 = self.f0 * self.volume() / (n_bundles as f64 * self.bundle_length_mm);
        self
    }

    pub fn volume(&self) -> f64 {
        self.length_mm * self.width_mm * self.height_mm
    }

    pub fn segments_per_bundle(&self) -> usize {
        (self.bundle_length_mm / self.segment_length_mm).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.length_mm, self.width_mm, self.height_mm, self.bundle_length_mm, self.segment_length_mm, self.bundle_area_mm2];
        if dims.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::config("stack dimensions, bundle length, segment length and area must be positive"));
        }
        if !(self.f0 > 0.0 && self.f0 < 1.0) {
            return Err(Error::config(format!("f0 = {} outside (0, 1)", self.f0)));
        }
        if !(0.5..=1.0).contains(&self.a0) {
            return Err(Error::config(format!("a0 = {} outside [0.5, 1]", self.a0)));
        }
        let ratio = self.bundle_length_mm / self.segment_length_mm;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::config("segment length must divide the bundle length"));
        }
        if !(self.packing_cap > 0.0 && self.packing_cap < 1.0) {
            return Err(Error::config("packing cap must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// A fiber bundle as a chain of nodes (mm) with constant cross-section area.
#[derive(Clone, Debug, PartialEq)]
pub struct BundlePolyline {
    nodes: Vec<Vector3<f64>>,
    area: f64,
}

impl BundlePolyline {
    pub fn new(nodes: Vec<Vector3<f64>>, area: f64) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::invalid("a bundle needs at least two nodes"));
        }
        if !(area > 0.0) {
            return Err(Error::invalid("bundle area must be positive"));
        }
        if nodes.windows(2).any(|w| (w[1] - w[0]).norm() == 0.0) {
            return Err(Error::invalid("consecutive bundle nodes coincide"));
        }
        Ok(Self { nodes, area })
    }

    pub fn nodes(&self) -> &[Vector3<f64>] {
        &self.nodes
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn segments(&self) -> impl Iterator<Item = (Vector3<f64>, Vector3<f64>)> + '_ {
        self.nodes.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(p, q)| (q - p).norm()).sum()
    }

    pub fn volume(&self) -> f64 {
        self.area * self.length()
    }

    pub fn max_segment_length(&self) -> f64 {
        self.segments().map(|(p, q)| (q - p).norm()).fold(0.0, f64::max)
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Vector3<f64>, tol: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - tol && p[i] <= self.max[i] + tol)
    }

    pub fn clamp(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|i, _| p[i].clamp(self.min[i], self.max[i]))
    }

    /// Parameter interval of `p + t (q - p)`, `t ∈ [0, 1]`, inside the box.
    pub fn clip_segment(&self, p: &Vector3<f64>, q: &Vector3<f64>) -> Option<(f64, f64)> {
        let d = q - p;
        let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
        for i in 0..3 {
            if d[i] == 0.0 {
                if p[i] < self.min[i] || p[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let a = (self.min[i] - p[i]) / d[i];
            let b = (self.max[i] - p[i]) / d[i];
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

/// Clips a polyline to `bounds`, returning the connected pieces that keep
/// positive length. Nodes on the box faces are snapped onto the box.
pub fn clip_polyline(nodes: &[Vector3<f64>], bounds: &Aabb) -> Vec<Vec<Vector3<f64>>> {
    let mut pieces = Vec::new();
    let mut current: Vec<Vector3<f64>> = Vec::new();
    for w in nodes.windows(2) {
        let (p, q) = (w[0], w[1]);
        match bounds.clip_segment(&p, &q) {
            Some((t0, t1)) if t1 > t0 => {
                let a = bounds.clamp(&(p + (q - p) * t0));
                let b = bounds.clamp(&(p + (q - p) * t1));
                let continues = t0 == 0.0 && current.last().is_some_and(|l| *l == a);
                if !continues {
                    flush(&mut pieces, &mut current);
                    current.push(a);
                }
                if (b - *current.last().unwrap()).norm() > 0.0 {
                    current.push(b);
                }
                if t1 < 1.0 {
                    flush(&mut pieces, &mut current);
                }
            }
            _ => flush(&mut pieces, &mut current),
        }
    }
    flush(&mut pieces, &mut current);
    pieces
}

fn flush(pieces: &mut Vec<Vec<Vector3<f64>>>, current: &mut Vec<Vector3<f64>>) {
    if current.len() >= 2 {
        pieces.push(std::mem::take(current));
    } else {
        current.clear();
    }
}

/// Generated stack and its bookkeeping.
#[derive(Clone, Debug)]
pub struct Stack {
    pub bundles: Vec<BundlePolyline>,
    /// Bundles shortened by the stack faces.
    pub clipped: usize,
    pub bounds: Aabb,
}

impl Stack {
    pub fn fiber_volume(&self) -> f64 {
        self.bundles.iter().map(BundlePolyline::volume).sum()
    }

    pub fn volume_fraction(&self) -> f64 {
        let d = self.bounds.max - self.bounds.min;
        self.fiber_volume() / (d.x * d.y * d.z)
    }

    pub fn clipped_fraction(&self) -> f64 {
        self.clipped as f64 / self.bundles.len().max(1) as f64
    }

    pub fn segment_count(&self) -> usize {
        self.bundles.iter().map(|b| b.nodes().len() - 1).sum()
    }
}

/// Primer direction mapped through `A0 = diag(a0, 1 - a0, 0)` and normalized.
fn bundle_direction<R: Rng>(rng: &mut R, a0: f64) -> Vector3<f64> {
    loop {
        let cos_alpha: f64 = rng.gen_range(-1.0..1.0);
        let beta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let sin_alpha = (1.0 - cos_alpha * cos_alpha).sqrt();
        let d = Vector3::new(a0 * sin_alpha * beta.cos(), (1.0 - a0) * sin_alpha * beta.sin(), 0.0);
        let n = d.norm();
        if n > 1e-12 {
            return d / n;
        }
    }
}

/// Places straight bundles with uniformly distributed midpoints until the
/// fiber volume reaches `f0` times the stack volume, clipping at the stack
/// faces.
pub fn generate_stack(config: &StackConfig) -> Result<Stack> {
    config.validate()?;
    if config.f0 >= config.packing_cap {
        return Err(Error::config(format!("f0 = {} exceeds the packing cap {}", config.f0, config.packing_cap)));
    }
    let bounds = Aabb::new(Vector3::zeros(), Vector3::new(config.length_mm, config.width_mm, config.height_mm));
    let target = config.f0 * config.volume();
    let full_volume = config.bundle_area_mm2 * config.bundle_length_mm;
    let max_bundles = ((config.packing_cap * config.volume() / full_volume) * 4.0).ceil() as usize + 16;
    let n_seg = config.segments_per_bundle();
    let mut rng = stream_rng(config.seed, 0);
    let mut bundles = Vec::new();
    let mut clipped = 0;
    let mut volume = 0.0;
    while volume < target {
        if bundles.len() >= max_bundles {
            return Err(Error::numerical(format!("packing cap reached at f = {:.4} before the target {}", volume / config.volume(), config.f0)));
        }
        let dir = bundle_direction(&mut rng, config.a0);
        let center = Vector3::new(rng.gen_range(0.0..config.length_mm), rng.gen_range(0.0..config.width_mm), rng.gen_range(0.0..config.height_mm));
        let start = center - dir * (0.5 * config.bundle_length_mm);
        let nodes: Vec<Vector3<f64>> = (0..=n_seg).map(|k| start + dir * (config.bundle_length_mm * k as f64 / n_seg as f64)).collect();
        // A straight chain through an interior midpoint clips to one piece.
        let Some(piece) = clip_polyline(&nodes, &bounds).into_iter().next() else {
            continue;
        };
        let bundle = BundlePolyline::new(piece, config.bundle_area_mm2)?;
        if bundle.length() < config.bundle_length_mm - GEOM_TOL {
            clipped += 1;
        }
        volume += bundle.volume();
        bundles.push(bundle);
    }
    Ok(Stack { bundles, clipped, bounds })
}

/// Length-weighted second-order orientation tensor over all segments.
pub fn orientation_tensor(bundles: &[BundlePolyline]) -> Result<OrientationTensor2> {
    let mut m = Matrix3::zeros();
    let mut total = 0.0;
    for b in bundles {
        for (p, q) in b.segments() {
            let d = q - p;
            let l = d.norm();
            m += d * d.transpose() / l;
            total += l;
        }
    }
    if !(total > 0.0) {
        return Err(Error::invalid("orientation tensor of an empty bundle set"));
    }
    m /= total;
    OrientationTensor2::new(0.5 * (m + m.transpose()))
}

/// Regular hexahedral grid of cubic cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub origin: Vector3<f64>,
    pub edge_mm: f64,
    pub counts: [usize; 3],
}

impl GridSpec {
    pub fn n_cells(&self) -> usize {
        self.counts[0] * self.counts[1] * self.counts[2]
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.counts[0] * (j + self.counts[1] * k)
    }

    pub fn cell_volume(&self) -> f64 {
        self.edge_mm.powi(3)
    }

    pub fn bounds(&self) -> Aabb {
        let ext = Vector3::new(self.counts[0] as f64, self.counts[1] as f64, self.counts[2] as f64) * self.edge_mm;
        Aabb::new(self.origin, self.origin + ext)
    }

    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.edge_mm
    }

    fn validate(&self) -> Result<()> {
        if !(self.edge_mm > 0.0) || self.counts.contains(&0) {
            return Err(Error::invalid("grid needs a positive edge and non-zero cell counts"));
        }
        Ok(())
    }
}

/// Per-cell fields. Empty cells carry `f = 0`, `a = 0.5`, `θ = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldCell {
    pub f: f64,
    pub a: f64,
    pub theta: f64,
    pub a_zz: f64,
    pub length: f64,
}

impl FieldCell {
    pub const EMPTY: Self = Self { f: 0.0, a: 0.5, theta: 0.0, a_zz: 0.0, length: 0.0 };

    pub fn is_empty(&self) -> bool {
        self.length == 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid {
    pub spec: GridSpec,
    pub cells: Vec<FieldCell>,
}

impl FieldGrid {
    pub fn uniform(spec: GridSpec, cell: FieldCell) -> Self {
        Self { spec, cells: vec![cell; spec.n_cells()] }
    }

    pub fn cell(&self, i: usize, j: usize, k: usize) -> &FieldCell {
        &self.cells[self.spec.index(i, j, k)]
    }

    pub fn mean_f(&self) -> f64 {
        self.cells.iter().map(|c| c.f).sum::<f64>() / self.cells.len() as f64
    }

    pub fn total_length(&self) -> f64 {
        self.cells.iter().map(|c| c.length).sum()
    }

    pub fn empty_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_empty()).count()
    }
}

/// In-cell pieces of one segment: (cell index, length).
fn split_segment(spec: &GridSpec, p: &Vector3<f64>, q: &Vector3<f64>, clip: bool) -> Result<Vec<(usize, f64)>> {
    let d = q - p;
    let len = d.norm();
    let mut ts = vec![0.0, 1.0];
    for ax in 0..3 {
        if d[ax] == 0.0 {
            continue;
        }
        let u0 = (p[ax] - spec.origin[ax]) / spec.edge_mm;
        let u1 = (q[ax] - spec.origin[ax]) / spec.edge_mm;
        let (lo, hi) = if u0 < u1 { (u0, u1) } else { (u1, u0) };
        let mut m = lo.floor() + 1.0;
        while m < hi {
            let t = (spec.origin[ax] + m * spec.edge_mm - p[ax]) / d[ax];
            if t > 0.0 && t < 1.0 {
                ts.push(t);
            }
            m += 1.0;
        }
    }
    ts.sort_by(|a, b| a.total_cmp(b));
    let mut out = Vec::with_capacity(ts.len());
    for w in ts.windows(2) {
        let dt = w[1] - w[0];
        if dt <= 0.0 {
            continue;
        }
        let mid = p + d * (0.5 * (w[0] + w[1]));
        let mut idx = [0usize; 3];
        let mut inside = true;
        for ax in 0..3 {
            let u = ((mid[ax] - spec.origin[ax]) / spec.edge_mm).floor();
            if u < 0.0 || u >= spec.counts[ax] as f64 {
                inside = false;
                break;
            }
            idx[ax] = u as usize;
        }
        if !inside {
            if clip {
                continue;
            }
            return Err(Error::invalid(format!("segment piece at {mid:?} lies outside the grid")));
        }
        out.push((spec.index(idx[0], idx[1], idx[2]), dt * len));
    }
    Ok(out)
}

#[derive(Clone, Copy, Default)]
struct CellSums {
    volume: f64,
    length: f64,
    xx: f64,
    yy: f64,
    zz: f64,
    xy: f64,
}

/// Splits every segment at the cell faces and accumulates in-cell bundle
/// volume and length-weighted orientation. Pieces outside the grid are an
/// error unless `clip` is set.
pub fn evaluate_cell_fields(bundles: &[BundlePolyline], spec: &GridSpec, clip: bool) -> Result<FieldGrid> {
    spec.validate()?;
    // Pieces are computed in parallel and accumulated in bundle order so the
    // sums do not depend on the thread count.
    let pieces: Vec<Vec<(usize, f64, Vector3<f64>, f64)>> = bundles
        .par_iter()
        .map(|b| {
            let mut out = Vec::new();
            for (p, q) in b.segments() {
                let d = q - p;
                let dir = d / d.norm();
                for (cell, l) in split_segment(spec, &p, &q, clip)? {
                    out.push((cell, l, dir, b.area()));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut sums = vec![CellSums::default(); spec.n_cells()];
    for list in &pieces {
        for &(cell, l, dir, area) in list {
            let s = &mut sums[cell];
            s.volume += area * l;
            s.length += l;
            s.xx += l * dir.x * dir.x;
            s.yy += l * dir.y * dir.y;
            s.zz += l * dir.z * dir.z;
            s.xy += l * dir.x * dir.y;
        }
    }
    let vc = spec.cell_volume();
    let cells = sums
        .iter()
        .map(|s| {
            if s.length == 0.0 {
                return FieldCell::EMPTY;
            }
            let (a, theta) = planar_parameters(s.xx, s.yy, s.xy);
            FieldCell { f: s.volume / vc, a, theta, a_zz: s.zz / s.length, length: s.length }
        })
        .collect();
    Ok(FieldGrid { spec: *spec, cells })
}

/// Scatter of subset means for one subset edge length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubsetScatter {
    pub edge_mm: f64,
    /// `V^(1/3)` of one subset.
    pub characteristic_length_mm: f64,
    pub sigma_f: f64,
    pub sigma_a: f64,
    pub subsets: usize,
}

/// Partitions the plate into square columns of `edge × edge` cells through the
/// full thickness and reports the population standard deviation of the
/// subset means of `f` and `a`.
pub fn subset_scatter(field: &FieldGrid, edges_mm: &[f64]) -> Result<Vec<SubsetScatter>> {
    let spec = &field.spec;
    let [nx, ny, nz] = spec.counts;
    edges_mm
        .iter()
        .map(|&edge| {
            let ratio = edge / spec.edge_mm;
            let k = ratio.round();
            if !(k >= 1.0) || (ratio - k).abs() > 1e-9 * ratio {
                return Err(Error::invalid(format!("subset edge {edge} mm is not a multiple of the cell edge")));
            }
            let k = k as usize;
            if k > nx || k > ny {
                return Err(Error::invalid(format!("subset edge {edge} mm exceeds the plate")));
            }
            let mut means = Vec::new();
            for sj in 0..ny / k {
                for si in 0..nx / k {
                    let (mut f, mut a) = (0.0, 0.0);
                    for kk in 0..nz {
                        for j in sj * k..(sj + 1) * k {
                            for i in si * k..(si + 1) * k {
                                let c = field.cell(i, j, kk);
                                f += c.f;
                                a += c.a;
                            }
                        }
                    }
                    let n = (k * k * nz) as f64;
                    means.push((f / n, a / n));
                }
            }
            let n = means.len() as f64;
            let (mf, ma) = means.iter().fold((0.0, 0.0), |acc, m| (acc.0 + m.0 / n, acc.1 + m.1 / n));
            let var_f = means.iter().map(|m| (m.0 - mf).powi(2)).sum::<f64>() / n;
            let var_a = means.iter().map(|m| (m.1 - ma).powi(2)).sum::<f64>() / n;
            let volume = edge * edge * nz as f64 * spec.edge_mm;
            Ok(SubsetScatter { edge_mm: edge, characteristic_length_mm: volume.cbrt(), sigma_f: var_f.sqrt(), sigma_a: var_a.sqrt(), subsets: means.len() })
        })
        .collect()
}

/// One record per line: `id node_count area_mm2 x y z ...`.
pub fn write_bundles(bundles: &[BundlePolyline]) -> String {
    let mut s = String::new();
    for (id, b) in bundles.iter().enumerate() {
        let _ = write!(s, "{} {} {}", id, b.nodes.len(), b.area);
        for p in &b.nodes {
            let _ = write!(s, " {} {} {}", p.x, p.y, p.z);
        }
        s.push('\n');
    }
    s
}

fn parse<T: std::str::FromStr>(tok: Option<&str>, what: &str, line: usize) -> Result<T> {
    tok.and_then(|t| t.parse().ok()).ok_or_else(|| Error::format(format!("line {line}: bad or missing {what}")))
}

pub fn read_bundles(text: &str) -> Result<Vec<BundlePolyline>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#')) {
        let mut it = line.split_whitespace();
        let id: usize = parse(it.next(), "id", ln + 1)?;
        if id != out.len() {
            return Err(Error::format(format!("line {}: bundle id {id} out of order", ln + 1)));
        }
        let n: usize = parse(it.next(), "node count", ln + 1)?;
        let area: f64 = parse(it.next(), "area", ln + 1)?;
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            let x = parse(it.next(), "x", ln + 1)?;
            let y = parse(it.next(), "y", ln + 1)?;
            let z = parse(it.next(), "z", ln + 1)?;
            nodes.push(Vector3::new(x, y, z));
        }
        if it.next().is_some() {
            return Err(Error::format(format!("line {}: trailing values", ln + 1)));
        }
        out.push(BundlePolyline::new(nodes, area).map_err(|e| Error::format(format!("line {}: {e}", ln + 1)))?);
    }
    Ok(out)
}

/// Header `grid ox oy oz edge nx ny nz`, then `i j k f a theta a_zz length`
/// per cell.
pub fn write_field(field: &FieldGrid) -> String {
    let g = &field.spec;
    let mut s = format!("grid {} {} {} {} {} {} {}\n", g.origin.x, g.origin.y, g.origin.z, g.edge_mm, g.counts[0], g.counts[1], g.counts[2]);
    for k in 0..g.counts[2] {
        for j in 0..g.counts[1] {
            for i in 0..g.counts[0] {
                let c = field.cell(i, j, k);
                let _ = writeln!(s, "{i} {j} {k} {} {} {} {} {}", c.f, c.a, c.theta, c.a_zz, c.length);
            }
        }
    }
    s
}

pub fn read_field(text: &str) -> Result<FieldGrid> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (ln, header) = lines.next().ok_or_else(|| Error::format("empty field file"))?;
    let mut it = header.split_whitespace();
    if it.next() != Some("grid") {
        return Err(Error::format("field file must start with a grid header"));
    }
    let o: [f64; 3] = [parse(it.next(), "origin", ln + 1)?, parse(it.next(), "origin", ln + 1)?, parse(it.next(), "origin", ln + 1)?];
    let edge: f64 = parse(it.next(), "edge", ln + 1)?;
    let counts: [usize; 3] = [parse(it.next(), "nx", ln + 1)?, parse(it.next(), "ny", ln + 1)?, parse(it.next(), "nz", ln + 1)?];
    let spec = GridSpec { origin: Vector3::from(o), edge_mm: edge, counts };
    spec.validate()?;
    let mut cells = vec![FieldCell::EMPTY; spec.n_cells()];
    let mut seen = 0;
    for (ln, line) in lines {
        let mut it = line.split_whitespace();
        let i: usize = parse(it.next(), "i", ln + 1)?;
        let j: usize = parse(it.next(), "j", ln + 1)?;
        let k: usize = parse(it.next(), "k", ln + 1)?;
        if i >= counts[0] || j >= counts[1] || k >= counts[2] {
            return Err(Error::format(format!("line {}: cell index out of range", ln + 1)));
        }
        cells[spec.index(i, j, k)] = FieldCell {
            f: parse(it.next(), "f", ln + 1)?,
            a: parse(it.next(), "a", ln + 1)?,
            theta: parse(it.next(), "theta", ln + 1)?,
            a_zz: parse(it.next(), "a_zz", ln + 1)?,
            length: parse(it.next(), "length", ln + 1)?,
        };
        seen += 1;
    }
    if seen != spec.n_cells() {
        return Err(Error::format(format!("field file lists {seen} of {} cells", spec.n_cells())));
    }
    Ok(FieldGrid { spec, cells })
}

//! Virtual specimens cut from molded plates, a reduced series/parallel tensile
//! solver driving one DMN per cell, and feature extraction.
//!
//! Cells of one cross-section share the axial strain (parallel coupling);
//! cross-sections carry the same axial force (series coupling). Every cell is
//! laterally free, i.e. loaded under uniaxial stress along the specimen axis.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;

use crate::damage::DamageMaterial;
use crate::dmn::network::{DEFAULT_A_RANGE, DEFAULT_F_RANGE};
use crate::dmn::{DmnParams, DmnResponse, DmnState, Network, NonlinearDmn, UniaxialIterate};
use crate::microstructure::{FieldCell, FieldGrid, GridSpec};
use crate::tensor::{Rotation, SymTensor2};
use crate::{Error, Result};

/// Failure when any cell's matrix-averaged damage variable exceeds this.
pub const FAILURE_THRESHOLD: f64 = 0.013;
pub const SPECIMEN_LENGTH_MM: f64 = 99.0;
pub const GAUGE_LENGTH_MM: f64 = 70.0;
pub const GAUGE_WIDTH_MM: f64 = 10.0;
pub const TGA_DIAMETER_MM: f64 = 25.0;
pub const TGA_SAMPLES_PER_PLATE: usize = 15;
pub const N_FEATURES: usize = 18;
/// Stress levels 0.1 % ... 1.5 % sampled into the feature vector.
pub const N_STRESS_LEVELS: usize = 15;
/// Quarter turns of the plate used to multiply the cutting plan.
pub const PLATE_TURNS: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeLabel {
    R1,
    R2,
    B1,
    B2,
    Tga,
}

impl ShapeLabel {
    pub const TENSILE: [ShapeLabel; 4] = [ShapeLabel::R1, ShapeLabel::R2, ShapeLabel::B1, ShapeLabel::B2];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::R1 => "R1",
            Self::R2 => "R2",
            Self::B1 => "B1",
            Self::B2 => "B2",
            Self::Tga => "TGA",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "R1" => Ok(Self::R1),
            "R2" => Ok(Self::R2),
            "B1" => Ok(Self::B1),
            "B2" => Ok(Self::B2),
            "TGA" => Ok(Self::Tga),
            _ => Err(Error::format(format!("unknown specimen shape '{s}'"))),
        }
    }
}

/// Specimen outline. Tensile outlines are symmetric stepped profiles:
/// `profile[i] = (start_mm, width_mm)` lists the width from `start_mm`
/// (measured from either end) up to the next entry or the center.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecimenShape {
    pub label: ShapeLabel,
    pub length_mm: f64,
    pub profile: Vec<(f64, f64)>,
    pub gauge_length_mm: f64,
    pub gauge_width_mm: f64,
}

impl SpecimenShape {
    pub fn new(label: ShapeLabel) -> Self {
        let profile = match label {
            ShapeLabel::R1 => vec![(0.0, 15.0)],
            ShapeLabel::R2 => vec![(0.0, 30.0)],
            ShapeLabel::B1 => vec![(0.0, 27.0), (9.0, 21.0), (12.0, 15.0)],
            ShapeLabel::B2 => vec![(0.0, 42.0), (9.0, 36.0), (12.0, 30.0)],
            ShapeLabel::Tga => vec![(0.0, TGA_DIAMETER_MM)],
        };
        let length_mm = if label == ShapeLabel::Tga { TGA_DIAMETER_MM } else { SPECIMEN_LENGTH_MM };
        Self { label, length_mm, profile, gauge_length_mm: GAUGE_LENGTH_MM, gauge_width_mm: GAUGE_WIDTH_MM }
    }

    /// Width of the central (gauge) part.
    pub fn width_mm(&self) -> f64 {
        self.profile.last().map_or(0.0, |p| p.1)
    }

    pub fn outline_width_mm(&self) -> f64 {
        self.profile.iter().map(|p| p.1).fold(0.0, f64::max)
    }

    /// Length of the central part at the gauge width.
    pub fn narrow_length_mm(&self) -> f64 {
        self.length_mm - 2.0 * self.profile.last().map_or(0.0, |p| p.0)
    }

    /// Outline width at distance `x_mm` from the left end.
    pub fn width_at(&self, x_mm: f64) -> f64 {
        let d = x_mm.min(self.length_mm - x_mm);
        let mut w = 0.0;
        for &(start, width) in &self.profile {
            if d >= start {
                w = width;
            }
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.label == ShapeLabel::Tga {
            return Err(Error::invalid("TGA discs are sampled, not loaded"));
        }
        if self.profile.is_empty() || self.profile[0].0 != 0.0 {
            return Err(Error::invalid("profile must start at the specimen end"));
        }
        if self.profile.windows(2).any(|w| !(w[1].0 > w[0].0)) || self.profile.iter().any(|p| !(p.1 > 0.0)) {
            return Err(Error::invalid("profile positions must increase and widths be positive"));
        }
        if !(self.gauge_length_mm <= self.narrow_length_mm() && self.gauge_width_mm <= self.width_mm()) {
            return Err(Error::invalid(format!("gauge does not fit inside the {} outline", self.label.as_str())));
        }
        Ok(())
    }

    /// Cells per cross-section on a grid of edge `edge_mm`.
    pub fn section_widths(&self, edge_mm: f64) -> Result<Vec<usize>> {
        self.validate()?;
        let n = cells_of(self.length_mm, edge_mm)?;
        let outline = cells_of(self.outline_width_mm(), edge_mm)?;
        (0..n)
            .map(|s| {
                let w = cells_of(self.width_at((s as f64 + 0.5) * edge_mm), edge_mm)?;
                if (outline - w) % 2 != 0 {
                    return Err(Error::invalid("stepped widths must center on the cell grid"));
                }
                Ok(w)
            })
            .collect()
    }

    /// Sections whose centers lie within the centered gauge length.
    pub fn gauge_mask(&self, edge_mm: f64) -> Result<Vec<bool>> {
        let n = cells_of(self.length_mm, edge_mm)?;
        let half = 0.5 * self.gauge_length_mm + 1e-9 * edge_mm;
        Ok((0..n).map(|s| ((s as f64 + 0.5) * edge_mm - 0.5 * self.length_mm).abs() <= half).collect())
    }
}

fn cells_of(mm: f64, edge_mm: f64) -> Result<usize> {
    let n = (mm / edge_mm).round();
    if !(n >= 1.0) || (n * edge_mm - mm).abs() > 1e-9 * mm {
        return Err(Error::invalid(format!("{mm} mm is not a whole number of {edge_mm} mm cells")));
    }
    Ok(n as usize)
}

/// One entry of the cutting plan: outline lower-left corner in cells of the
/// (possibly rotated) plate, specimen axis along plate x.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub index: usize,
    pub label: ShapeLabel,
    pub offset: [usize; 2],
}

/// Two columns of eight specimens (R1, R2, B1, B2 twice), one cell apart,
/// centered on a plate of `counts` cells.
pub fn plate_layout(counts: [usize; 2], edge_mm: f64) -> Result<Vec<Placement>> {
    let length = cells_of(SPECIMEN_LENGTH_MM, edge_mm)?;
    let mut rows = Vec::new();
    for _ in 0..2 {
        for label in ShapeLabel::TENSILE {
            rows.push((label, cells_of(SpecimenShape::new(label).outline_width_mm(), edge_mm)?));
        }
    }
    let need_x = 2 * length + 1;
    let need_y = rows.iter().map(|r| r.1).sum::<usize>() + rows.len() - 1;
    if need_x > counts[0] || need_y > counts[1] {
        return Err(Error::invalid(format!("cutting plan needs {need_x}x{need_y} cells, plate has {}x{}", counts[0], counts[1])));
    }
    let x0 = (counts[0] - need_x) / 2;
    let y0 = (counts[1] - need_y) / 2;
    let mut out = Vec::new();
    for col in 0..2 {
        let mut y = y0;
        for &(label, w) in &rows {
            out.push(Placement { index: out.len(), label, offset: [x0 + col * (length + 1), y] });
            y += w + 1;
        }
    }
    Ok(out)
}

fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta;
    while t > FRAC_PI_2 {
        t -= PI;
    }
    while t <= -FRAC_PI_2 {
        t += PI;
    }
    t
}

/// Plate fields rotated counter-clockwise by `turns` quarter turns; the
/// rotated grid keeps the origin and swaps the in-plane counts on odd turns.
pub fn rotate_plate(grid: &FieldGrid, turns: u8) -> FieldGrid {
    let mut g = grid.clone();
    for _ in 0..turns % 4 {
        let [nx, ny, nz] = g.spec.counts;
        let spec = GridSpec { origin: g.spec.origin, edge_mm: g.spec.edge_mm, counts: [ny, nx, nz] };
        let mut cells = Vec::with_capacity(g.cells.len());
        for k in 0..nz {
            for rj in 0..nx {
                for ri in 0..ny {
                    let mut c = *g.cell(rj, ny - 1 - ri, k);
                    if !c.is_empty() {
                        c.theta = wrap_angle(c.theta + FRAC_PI_2);
                    }
                    cells.push(c);
                }
            }
        }
        g = FieldGrid { spec, cells };
    }
    g
}

/// Material state of one specimen cell, inside the surrogate's domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpecimenCell {
    pub f: f64,
    pub a: f64,
    /// In-plane major axis measured from the specimen axis.
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpecimenModel {
    pub label: ShapeLabel,
    pub edge_mm: f64,
    /// Cells of each cross-section, ordered along the specimen axis.
    pub sections: Vec<Vec<SpecimenCell>>,
    pub gauge: Vec<bool>,
    /// Gauge cross-section used to convert force to stress.
    pub stress_area_mm2: f64,
    pub clamped_f: usize,
    pub clamped_a: usize,
    pub empty_cells: usize,
}

impl SpecimenModel {
    pub fn n_cells(&self) -> usize {
        self.sections.iter().map(Vec::len).sum()
    }

    /// Mean of `value` over all (equal-volume) cells, taken about the first
    /// cell so identical cells reproduce their value exactly.
    fn cell_mean(&self, value: impl Fn(&SpecimenCell) -> f64) -> f64 {
        let mut cells = self.sections.iter().flatten();
        let Some(first) = cells.next() else {
            return f64::NAN;
        };
        let base = value(first);
        let (s, n) = cells.fold((0.0, 1usize), |(s, n), c| (s + (value(c) - base), n + 1));
        base + s / n as f64
    }

    pub fn mean_f(&self) -> f64 {
        self.cell_mean(|c| c.f)
    }

    pub fn mean_a(&self) -> f64 {
        self.cell_mean(|c| c.a)
    }

    /// Volume of the gauge sections, mm³.
    pub fn gauge_volume_mm3(&self) -> f64 {
        let cell = self.edge_mm.powi(3);
        self.sections.iter().zip(&self.gauge).filter(|(_, g)| **g).map(|(s, _)| s.len() as f64 * cell).sum()
    }

    /// Specimen with identical cells everywhere on the given shape.
    pub fn homogeneous(shape: &SpecimenShape, edge_mm: f64, layers: usize, cell: SpecimenCell) -> Result<Self> {
        let widths = shape.section_widths(edge_mm)?;
        let gauge = shape.gauge_mask(edge_mm)?;
        let sections = widths.iter().map(|&w| vec![cell; w * layers]).collect();
        Ok(Self {
            label: shape.label,
            edge_mm,
            sections,
            gauge,
            stress_area_mm2: shape.width_mm() * edge_mm * layers as f64,
            clamped_f: 0,
            clamped_a: 0,
            empty_cells: 0,
        })
    }
}

/// Cuts a specimen from `plate` turned by `turns` quarter turns, with its
/// outline's lower-left corner at `offset` cells of the turned plate.
/// Fields are clamped into the surrogate's (f, a) domain; empty cells take
/// the lowest fiber content and planar isotropy.
pub fn extract_specimen(plate: &FieldGrid, shape: &SpecimenShape, offset: [usize; 2], turns: u8) -> Result<SpecimenModel> {
    let grid = rotate_plate(plate, turns);
    let edge = grid.spec.edge_mm;
    let widths = shape.section_widths(edge)?;
    let outline = cells_of(shape.outline_width_mm(), edge)?;
    let [nx, ny, nz] = grid.spec.counts;
    if offset[0] + widths.len() > nx || offset[1] + outline > ny {
        return Err(Error::invalid(format!("{} outline at cells {:?} exceeds the {nx}x{ny} plate", shape.label.as_str(), offset)));
    }
    let mut model = SpecimenModel::homogeneous(shape, edge, nz, SpecimenCell { f: 0.0, a: 0.5, theta: 0.0 })?;
    for (s, &w) in widths.iter().enumerate() {
        let j0 = offset[1] + (outline - w) / 2;
        let mut cells = Vec::with_capacity(w * nz);
        for k in 0..nz {
            for j in j0..j0 + w {
                cells.push(clamp_cell(grid.cell(offset[0] + s, j, k), &mut model));
            }
        }
        model.sections[s] = cells;
    }
    Ok(model)
}

fn clamp_cell(c: &FieldCell, model: &mut SpecimenModel) -> SpecimenCell {
    if c.is_empty() {
        model.empty_cells += 1;
        return SpecimenCell { f: DEFAULT_F_RANGE[0], a: DEFAULT_A_RANGE[0], theta: 0.0 };
    }
    let f = c.f.clamp(DEFAULT_F_RANGE[0], DEFAULT_F_RANGE[1]);
    let a = c.a.clamp(DEFAULT_A_RANGE[0], DEFAULT_A_RANGE[1]);
    model.clamped_f += usize::from(f != c.f);
    model.clamped_a += usize::from(a != c.a);
    SpecimenCell { f, a, theta: c.theta }
}

/// TGA disc centers in mm relative to the grid origin: five columns spanning
/// the plate 30 mm from its edges, three rows 64.5 mm apart about the center.
pub fn tga_positions(spec: &GridSpec) -> Vec<[f64; 2]> {
    let w = spec.counts[0] as f64 * spec.edge_mm;
    let h = spec.counts[1] as f64 * spec.edge_mm;
    let mut out = Vec::with_capacity(TGA_SAMPLES_PER_PLATE);
    for row in 0..3 {
        for col in 0..5 {
            out.push([30.0 + col as f64 * (w - 60.0) / 4.0, 0.5 * h + (row as f64 - 1.0) * 64.5]);
        }
    }
    out
}

/// Mean fiber content of the cells whose centers fall inside each disc.
pub fn tga_samples(grid: &FieldGrid, positions: &[[f64; 2]]) -> Result<Vec<f64>> {
    let r = 0.5 * TGA_DIAMETER_MM;
    let spec = &grid.spec;
    let (w, h) = (spec.counts[0] as f64 * spec.edge_mm, spec.counts[1] as f64 * spec.edge_mm);
    positions
        .iter()
        .map(|p| {
            if p[0] - r < 0.0 || p[1] - r < 0.0 || p[0] + r > w || p[1] + r > h {
                return Err(Error::invalid(format!("TGA disc at {p:?} leaves the plate")));
            }
            let (mut sum, mut n) = (0.0, 0usize);
            for k in 0..spec.counts[2] {
                for j in 0..spec.counts[1] {
                    for i in 0..spec.counts[0] {
                        let c = spec.cell_center(i, j, k) - spec.origin;
                        if (c.x - p[0]).powi(2) + (c.y - p[1]).powi(2) <= r * r {
                            sum += grid.cell(i, j, k).f;
                            n += 1;
                        }
                    }
                }
            }
            if n == 0 {
                return Err(Error::invalid("TGA disc covers no cell centers"));
            }
            Ok(sum / n as f64)
        })
        .collect()
}

/// Sample standard deviation.
pub fn sample_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TensionOptions {
    pub elongation_mm: f64,
    pub steps: usize,
    pub max_halvings: u32,
    pub max_passes: usize,
    pub force_tolerance: f64,
    /// Cell node-equilibrium residual relative to its stress scale.
    pub equilibrium_tolerance: f64,
    /// Free stress components relative to the axial stress of a cell.
    pub lateral_tolerance: f64,
}

impl Default for TensionOptions {
    fn default() -> Self {
        Self { elongation_mm: 3.0, steps: 60, max_halvings: 3, max_passes: 25, force_tolerance: 1e-8, equilibrium_tolerance: 1e-8, lateral_tolerance: 1e-6 }
    }
}

/// Recorded curve of one virtual tensile test. Index 0 is the unloaded state.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadingResult {
    pub elongation_mm: Vec<f64>,
    /// Mean axial strain over the gauge sections.
    pub strain: Vec<f64>,
    /// Axial force over the gauge cross-section, MPa.
    pub stress: Vec<f64>,
    /// Largest cell value of the matrix-averaged damage variable.
    pub max_matrix_damage: Vec<f64>,
    /// max |F_s − F̄| / |F̄| over sections.
    pub force_imbalance: Vec<f64>,
    /// Work increments of the load (trapezoidal) and of the cells, N·mm.
    pub external_work: Vec<f64>,
    pub internal_work: Vec<f64>,
    pub failed: bool,
    /// (section, cell) where the failure criterion was first exceeded.
    pub failure_cell: Option<(usize, usize)>,
}

struct CellSolver<'a> {
    dmn: NonlinearDmn<'a>,
    unit: DmnResponse,
    onset: f64,
    state: DmnState,
    stress: SymTensor2,
    iterate: Option<UniaxialIterate>,
}

impl<'a> CellSolver<'a> {
    fn new(params: &DmnParams, cell: &SpecimenCell, matrix: &'a DamageMaterial, bundle: &'a DamageMaterial) -> Result<Self> {
        params.check_domain(cell.f, cell.a)?;
        let net = Network::new(params, cell.f, cell.a)?.rotated(&Rotation::about_z(cell.theta));
        let dmn = NonlinearDmn::new(net, matrix, bundle);
        let (unit, onset) = dmn.uniaxial_elastic_limit()?;
        let state = dmn.initial_state();
        Ok(Self { dmn, unit, onset, state, stress: SymTensor2::zeros(), iterate: None })
    }

    fn elastic_state(&self, eps: f64) -> (DmnState, SymTensor2) {
        let state =
            DmnState { leaves: self.unit.state.leaves.clone(), jumps: self.unit.state.jumps.iter().map(|j| j * eps).collect(), strain: self.unit.strain * eps };
        (state, self.unit.stress * eps)
    }
}

/// Converged specimen state between load steps.
#[derive(Clone)]
struct Snapshot {
    section_strain: Vec<f64>,
    elongation: f64,
    force: f64,
}

struct Specimen<'a> {
    cells: Vec<Vec<CellSolver<'a>>>,
    section_length: f64,
    cell_area: f64,
    elastic: bool,
    opts: TensionOptions,
}

struct StepOutcome {
    strains: Vec<f64>,
    force: f64,
    imbalance: f64,
    states: Vec<Vec<(DmnState, SymTensor2, Option<UniaxialIterate>)>>,
}

impl<'a> Specimen<'a> {
    fn section_forces(&self, stress: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        self.cells.iter().enumerate().map(|(s, sec)| self.cell_area * (0..sec.len()).map(|c| stress(s, c)).sum::<f64>()).collect()
    }

    fn imbalance(forces: &[f64]) -> (f64, f64) {
        let mean = forces.iter().sum::<f64>() / forces.len() as f64;
        let dev = forces.iter().map(|f| (f - mean).abs()).fold(0.0, f64::max);
        (mean, if mean != 0.0 { dev / mean.abs() } else { dev })
    }

    /// Exact solution while every cell stays below its damage onset.
    fn try_elastic(&self, target: f64) -> Option<StepOutcome> {
        let k: Vec<f64> = self.cells.iter().map(|sec| self.cell_area * sec.iter().map(|c| c.unit.stress[0]).sum::<f64>()).collect();
        let compliance: f64 = k.iter().map(|k| self.section_length / k).sum();
        let force = target / compliance;
        let strains: Vec<f64> = k.iter().map(|k| force / k).collect();
        let below = self.cells.iter().zip(&strains).all(|(sec, e)| sec.iter().all(|c| *e <= c.onset * (1.0 - 1e-6)));
        if !below {
            return None;
        }
        let states: Vec<Vec<_>> = self
            .cells
            .iter()
            .zip(&strains)
            .map(|(sec, &e)| {
                sec.iter()
                    .map(|c| {
                        let (st, sig) = c.elastic_state(e);
                        (st, sig, None)
                    })
                    .collect()
            })
            .collect();
        let forces = self.section_forces(|s, c| states[s][c].1[0]);
        let (force, imbalance) = Self::imbalance(&forces);
        Some(StepOutcome { strains, force, imbalance, states })
    }

    /// Monolithic Newton on cell iterates and section strains.
    fn try_newton(&self, from: &Snapshot, target: f64) -> Result<Option<StepOutcome>> {
        let mut its: Vec<Vec<UniaxialIterate>> = Vec::with_capacity(self.cells.len());
        for sec in &self.cells {
            let mut v = Vec::with_capacity(sec.len());
            for c in sec {
                v.push(match &c.iterate {
                    Some(it) => it.clone(),
                    None => c.dmn.uniaxial_iterate(&c.state, c.state.strain, c.state.jumps.clone())?,
                });
            }
            its.push(v);
        }
        let mut strains = from.section_strain.clone();
        let l = self.section_length;
        for _ in 0..self.opts.max_passes {
            let mut preds = Vec::with_capacity(self.cells.len());
            let (mut num, mut den) = (target, 0.0);
            for (s, sec) in self.cells.iter().enumerate() {
                let mut p = Vec::with_capacity(sec.len());
                let (mut f0, mut k) = (0.0, 0.0);
                for (c, cell) in sec.iter().enumerate() {
                    let pr = cell.dmn.uniaxial_predictor(&its[s][c])?;
                    f0 += self.cell_area * pr.s0;
                    k += self.cell_area * pr.stiffness;
                    p.push(pr);
                }
                if !(k > 0.0) {
                    return Ok(None);
                }
                num += l * (f0 / k - strains[s]);
                den += l / k;
                preds.push((p, f0, k));
            }
            let force = num / den;
            for (s, sec) in self.cells.iter().enumerate() {
                let (p, f0, k) = &preds[s];
                strains[s] += (force - f0) / k;
                for (c, cell) in sec.iter().enumerate() {
                    if cell.dmn.uniaxial_advance(&mut its[s][c], &p[c], strains[s], &cell.state).is_err() {
                        return Ok(None);
                    }
                }
            }
            let forces = self.section_forces(|s, c| its[s][c].stress()[0]);
            let (mean, imbalance) = Self::imbalance(&forces);
            let converged = self.cells.iter().zip(&its).all(|(sec, v)| {
                sec.iter().zip(v).all(|(c, it)| {
                    let (eq, lateral) = c.dmn.uniaxial_residuals(it);
                    eq <= self.opts.equilibrium_tolerance && lateral <= self.opts.lateral_tolerance
                })
            });
            if converged && imbalance < self.opts.force_tolerance {
                let states = self
                    .cells
                    .iter()
                    .zip(its)
                    .map(|(sec, v)| {
                        sec.iter()
                            .zip(v)
                            .map(|(c, it)| {
                                let r = c.dmn.uniaxial_response(&it);
                                (r.state, r.stress, Some(it))
                            })
                            .collect()
                    })
                    .collect();
                return Ok(Some(StepOutcome { strains, force: mean, imbalance, states }));
            }
        }
        Ok(None)
    }

    fn solve_step(&mut self, from: &Snapshot, target: f64) -> Result<Option<StepOutcome>> {
        if self.elastic {
            if let Some(out) = self.try_elastic(target) {
                return Ok(Some(out));
            }
            self.elastic = false;
        }
        self.try_newton(from, target)
    }

    fn commit(&mut self, out: StepOutcome) -> Snapshot {
        for (sec, states) in self.cells.iter_mut().zip(out.states) {
            for (c, (state, stress, it)) in sec.iter_mut().zip(states) {
                c.state = state;
                c.stress = stress;
                c.iterate = it;
            }
        }
        Snapshot { section_strain: out.strains, elongation: 0.0, force: out.force }
    }
}

/// Pulls the specimen by `opts.elongation_mm` in `opts.steps` equal steps
/// and stops at the first step where any cell's matrix-averaged damage
/// exceeds the failure threshold.
pub fn simulate_tension(
    model: &SpecimenModel,
    params: &DmnParams,
    matrix: &DamageMaterial,
    bundle: &DamageMaterial,
    opts: &TensionOptions,
) -> Result<LoadingResult> {
    if model.n_cells() == 0 || model.sections.iter().any(Vec::is_empty) {
        return Err(Error::invalid("specimen has empty cross-sections"));
    }
    if opts.steps == 0 || !(opts.elongation_mm > 0.0) {
        return Err(Error::invalid("tension needs positive elongation and step count"));
    }
    let mut cells = Vec::with_capacity(model.sections.len());
    for sec in &model.sections {
        cells.push(sec.iter().map(|c| CellSolver::new(params, c, matrix, bundle)).collect::<Result<Vec<_>>>()?);
    }
    let edge = model.edge_mm;
    let mut sp = Specimen { cells, section_length: edge, cell_area: edge * edge, elastic: true, opts: *opts };
    let cell_volume = edge * edge * edge;
    let gauge: Vec<usize> = (0..model.gauge.len()).filter(|&s| model.gauge[s]).collect();
    let gauge_strain = |e: &[f64]| gauge.iter().map(|&s| e[s]).sum::<f64>() / gauge.len() as f64;

    let mut res = LoadingResult {
        elongation_mm: vec![0.0],
        strain: vec![0.0],
        stress: vec![0.0],
        max_matrix_damage: vec![0.0],
        force_imbalance: vec![0.0],
        external_work: vec![0.0],
        internal_work: vec![0.0],
        failed: false,
        failure_cell: None,
    };
    let mut snap = Snapshot { section_strain: vec![0.0; model.sections.len()], elongation: 0.0, force: 0.0 };
    let du = opts.elongation_mm / opts.steps as f64;
    let min_du = du / f64::from(1u32 << opts.max_halvings);
    let mut target = 0.0;
    let mut step_n = 0;
    let mut inc = du;
    while step_n < opts.steps {
        let boundary = (step_n + 1) as f64 * du;
        let next = if target + inc >= boundary - 1e-9 * du { boundary } else { target + inc };
        let Some(out) = sp.solve_step(&snap, next)? else {
            if inc <= min_du * (1.0 + 1e-12) {
                return Err(Error::numerical(format!("specimen Newton failed at elongation {next:.5} mm after step halving")));
            }
            inc *= 0.5;
            continue;
        };
        let old_stress: Vec<Vec<SymTensor2>> = sp.cells.iter().map(|sec| sec.iter().map(|c| c.stress).collect()).collect();
        let old_strain: Vec<Vec<SymTensor2>> = sp.cells.iter().map(|sec| sec.iter().map(|c| c.state.strain).collect()).collect();
        let imbalance = out.imbalance;
        let old_force = snap.force;
        snap = sp.commit(out);
        snap.elongation = next;
        let mut internal = 0.0;
        let mut worst = (0.0, (0, 0));
        for (s, sec) in sp.cells.iter().enumerate() {
            for (c, cell) in sec.iter().enumerate() {
                let ds = cell.state.strain - old_strain[s][c];
                internal += cell_volume * 0.5 * (cell.stress + old_stress[s][c]).dot(&ds);
                let q = cell.dmn.phase_average(&cell.state, true, 0)?;
                if q > worst.0 {
                    worst = (q, (s, c));
                }
            }
        }
        res.elongation_mm.push(next);
        res.strain.push(gauge_strain(&snap.section_strain));
        res.stress.push(snap.force / model.stress_area_mm2);
        res.max_matrix_damage.push(worst.0);
        res.force_imbalance.push(imbalance);
        res.external_work.push(0.5 * (snap.force + old_force) * (next - target));
        res.internal_work.push(internal);
        target = next;
        if next == boundary {
            step_n += 1;
            inc = du;
        }
        if worst.0 > FAILURE_THRESHOLD {
            res.failed = true;
            res.failure_cell = Some(worst.1);
            break;
        }
    }
    Ok(res)
}

/// 18 loading features: modulus, strength, failure strain and the stress at
/// 0.1 % ... 1.5 % strain.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub values: [f64; N_FEATURES],
    /// Stress levels beyond failure, filled with the failure stress.
    pub filled: [bool; N_STRESS_LEVELS],
    pub failed: bool,
}

pub fn feature_names() -> Vec<String> {
    let mut v = vec!["E_MPa".to_string(), "strength_MPa".to_string(), "failure_strain".to_string()];
    for k in 1..=N_STRESS_LEVELS {
        v.push(format!("stress_{:.1}pct_MPa", 0.1 * k as f64));
    }
    v
}

fn interpolate(strain: &[f64], stress: &[f64], x: f64) -> f64 {
    let i = strain.partition_point(|&e| e < x).clamp(1, strain.len() - 1);
    let (e0, e1) = (strain[i - 1], strain[i]);
    if e1 == e0 {
        return stress[i];
    }
    stress[i - 1] + (stress[i] - stress[i - 1]) * (x - e0) / (e1 - e0)
}

/// Features of a recorded curve. An unfailed record uses its last point as
/// the failure point.
pub fn extract_features(result: &LoadingResult) -> Result<Features> {
    let (e, s) = (&result.strain, &result.stress);
    if e.len() < 2 || e.len() != s.len() {
        return Err(Error::invalid("a curve needs at least two points"));
    }
    if e.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("strain must not decrease along the curve"));
    }
    let (e_f, s_f) = (e[e.len() - 1], s[s.len() - 1]);
    let (lo, hi) = (0.0005, 0.0025);
    if e_f < lo {
        return Err(Error::invalid(format!("failure at strain {e_f:e}, before the modulus window")));
    }
    let s_lo = interpolate(e, s, lo);
    let (x_hi, s_hi) = if e_f >= hi { (hi, interpolate(e, s, hi)) } else { (e_f, s_f) };
    let mut values = [0.0; N_FEATURES];
    let mut filled = [false; N_STRESS_LEVELS];
    values[0] = if x_hi > lo { (s_hi - s_lo) / (x_hi - lo) } else { s_lo / lo };
    values[1] = s_f;
    values[2] = e_f;
    for k in 0..N_STRESS_LEVELS {
        let x = 0.001 * (k + 1) as f64;
        if x <= e_f {
            values[3 + k] = interpolate(e, s, x);
        } else {
            values[3 + k] = s_f;
            filled[k] = true;
        }
    }
    Ok(Features { values, filled, failed: result.failed })
}

/// One row of the virtual test database.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecimenRecord {
    pub config: String,
    pub plate_seed: u64,
    pub shape: ShapeLabel,
    pub position: usize,
    pub turns: u8,
    pub mean_f: f64,
    pub mean_a: f64,
    pub features: [f64; N_FEATURES],
    pub filled_levels: usize,
    pub failed: bool,
}

impl SpecimenRecord {
    /// Loading direction relative to plate x, degrees.
    pub fn rotation_deg(&self) -> u32 {
        90 * u32::from(self.turns % 4)
    }
}

pub fn records_header() -> String {
    let mut h = String::from("config\tplate_seed\tshape\tposition\trotation_deg\tmean_f\tmean_a");
    for n in feature_names() {
        h.push('\t');
        h.push_str(&n);
    }
    h.push_str("\tfilled_levels\tfailed");
    h
}

/// Tab-separated database body with a column header line.
pub fn write_records(records: &[SpecimenRecord]) -> String {
    let mut s = records_header();
    s.push('\n');
    for r in records {
        let _ = write!(s, "{}\t{}\t{}\t{}\t{}\t{}\t{}", r.config, r.plate_seed, r.shape.as_str(), r.position, r.rotation_deg(), r.mean_f, r.mean_a);
        for v in &r.features {
            let _ = write!(s, "\t{v}");
        }
        let _ = writeln!(s, "\t{}\t{}", r.filled_levels, u8::from(r.failed));
    }
    s
}

/// Parses a database written by [`write_records`]; `#` lines are skipped.
pub fn read_records(text: &str) -> Result<Vec<SpecimenRecord>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::format("empty specimen database"))?;
    if header != records_header() {
        return Err(Error::format("specimen database header does not match"));
    }
    let bad = |what: &str| Error::format(format!("bad {what} in specimen database"));
    lines
        .map(|line| {
            let t: Vec<&str> = line.split('\t').collect();
            if t.len() != 9 + N_FEATURES {
                return Err(Error::format(format!("expected {} columns, found {}", 9 + N_FEATURES, t.len())));
            }
            let num = |i: usize, what: &str| t[i].parse::<f64>().map_err(|_| bad(what));
            let rotation: u32 = t[4].parse().map_err(|_| bad("rotation"))?;
            if !rotation.is_multiple_of(90) {
                return Err(bad("rotation"));
            }
            let mut features = [0.0; N_FEATURES];
            for (k, f) in features.iter_mut().enumerate() {
                *f = num(7 + k, "feature")?;
            }
            Ok(SpecimenRecord {
                config: t[0].to_string(),
                plate_seed: t[1].parse().map_err(|_| bad("seed"))?,
                shape: ShapeLabel::parse(t[2])?,
                position: t[3].parse().map_err(|_| bad("position"))?,
                turns: ((rotation / 90) % 4) as u8,
                mean_f: num(5, "mean_f")?,
                mean_a: num(6, "mean_a")?,
                features,
                filled_levels: t[7 + N_FEATURES].parse().map_err(|_| bad("filled_levels"))?,
                failed: match t[8 + N_FEATURES] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad("failed flag")),
                },
            })
        })
        .collect()
}

/// Two-column curve file: gauge strain and stress in MPa.
pub fn write_curve(result: &LoadingResult) -> String {
    let mut s = String::from("strain\tstress_MPa\n");
    for (e, t) in result.strain.iter().zip(&result.stress) {
        let _ = writeln!(s, "{e}\t{t}");
    }
    s
}

pub fn read_curve(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    if lines.next() != Some("strain\tstress_MPa") {
        return Err(Error::format("curve header missing"));
    }
    let mut e = Vec::new();
    let mut s = Vec::new();
    for line in lines {
        let mut it = line.split('\t').map(str::parse::<f64>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(a)), Some(Ok(b)), None) => {
                e.push(a);
                s.push(b);
            }
            _ => return Err(Error::format(format!("bad curve line '{line}'"))),
        }
    }
    Ok((e, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmn::{read_model, MacroControl};
    use nalgebra::Vector3;

    fn model_params() -> DmnParams {
        read_model(include_str!("../tests/data/dmn_k6.txt")).unwrap()
    }

    fn plate(counts: [usize; 3], cell: FieldCell) -> FieldGrid {
        FieldGrid::uniform(GridSpec { origin: Vector3::new(10.5, 10.5, 0.0), edge_mm: 3.0, counts }, cell)
    }

    fn bar(length_mm: f64, width_mm: f64, gauge_mm: f64) -> SpecimenShape {
        SpecimenShape { label: ShapeLabel::R1, length_mm, profile: vec![(0.0, width_mm)], gauge_length_mm: gauge_mm, gauge_width_mm: 3.0 }
    }

    fn cell(f: f64, a: f64, theta: f64) -> FieldCell {
        FieldCell { f, a, theta, a_zz: 0.0, length: 1.0 }
    }

    #[test]
    fn shapes_on_the_cell_grid() {
        let r1 = SpecimenShape::new(ShapeLabel::R1);
        assert_eq!(r1.section_widths(3.0).unwrap(), vec![5; 33]);
        let b2 = SpecimenShape::new(ShapeLabel::B2).section_widths(3.0).unwrap();
        assert_eq!(&b2[..5], &[14, 14, 14, 12, 10]);
        assert_eq!(b2[16], 10);
        assert_eq!(b2[32], 14);
        let gauge = r1.gauge_mask(3.0).unwrap();
        assert_eq!(gauge.iter().filter(|&&g| g).count(), 23);
        assert!(!gauge[4] && gauge[5] && gauge[27] && !gauge[28]);
        for label in ShapeLabel::TENSILE {
            SpecimenShape::new(label).validate().unwrap();
        }
        assert!(SpecimenShape::new(ShapeLabel::Tga).validate().is_err());
        let mut short = SpecimenShape::new(ShapeLabel::B1);
        short.gauge_length_mm = 80.0;
        assert!(short.validate().is_err());
    }

    #[test]
    fn layout_fits_sixteen_disjoint_specimens() {
        let layout = plate_layout([83, 83], 3.0).unwrap();
        assert_eq!(layout.len(), 16);
        let mut used = vec![false; 83 * 83];
        for p in &layout {
            let shape = SpecimenShape::new(p.label);
            let widths = shape.section_widths(3.0).unwrap();
            let outline = widths.iter().copied().max().unwrap();
            for (s, w) in widths.iter().enumerate() {
                for j in 0..*w {
                    let idx = p.offset[0] + s + 83 * (p.offset[1] + (outline - w) / 2 + j);
                    assert!(!used[idx], "overlap at placement {}", p.index);
                    used[idx] = true;
                }
            }
        }
        assert_eq!(layout.len() * usize::from(PLATE_TURNS), 64);
        assert!(plate_layout([60, 83], 3.0).is_err());
    }

    #[test]
    fn quarter_turns_move_cells_and_axes() {
        let mut g = plate([4, 3, 1], cell(0.2, 0.6, 0.0));
        let idx = g.spec.index(3, 0, 0);
        g.cells[idx] = cell(0.3, 0.7, 0.1);
        let r = rotate_plate(&g, 1);
        assert_eq!(r.spec.counts, [3, 4, 1]);
        // (x, y) → (−y, x): the cell at plate (3, 0) lands at (2, 3).
        let c = r.cell(2, 3, 0);
        assert_eq!((c.f, c.a), (0.3, 0.7));
        assert!((c.theta - (0.1 - FRAC_PI_2)).abs() < 1e-15);
        assert!((r.cell(0, 0, 0).theta - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(rotate_plate(&g, 4), g);
        let back = rotate_plate(&rotate_plate(&g, 3), 1);
        assert_eq!(back.spec.counts, g.spec.counts);
        for (a, b) in back.cells.iter().zip(&g.cells) {
            assert_eq!((a.f, a.a), (b.f, b.a));
            assert!((wrap_angle(a.theta - b.theta)).abs() < 1e-12);
        }
    }

    #[test]
    fn homogeneous_plate_gives_plate_values() {
        let g = plate([83, 83, 1], cell(0.26, 0.6, 0.0));
        for p in plate_layout([83, 83], 3.0).unwrap() {
            let m = extract_specimen(&g, &SpecimenShape::new(p.label), p.offset, 0).unwrap();
            assert_eq!((m.mean_f(), m.mean_a()), (0.26, 0.6));
            assert_eq!((m.clamped_f, m.clamped_a, m.empty_cells), (0, 0, 0));
        }
        let r2 = SpecimenShape::new(ShapeLabel::R2);
        assert!(extract_specimen(&g, &r2, [60, 0], 0).is_err());
        assert!(extract_specimen(&g, &r2, [0, 80], 1).is_err());
    }

    #[test]
    fn turned_specimen_sees_the_plate_axis_as_transverse() {
        let g = plate([83, 83, 1], cell(0.26, 0.7, 0.0));
        let m = extract_specimen(&g, &SpecimenShape::new(ShapeLabel::R1), [8, 8], 1).unwrap();
        for c in m.sections.iter().flatten() {
            assert_eq!(c.a, 0.7);
            assert!((c.theta - FRAC_PI_2).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_domain_cells_are_clamped_and_counted() {
        let mut g = plate([40, 10, 1], cell(0.26, 0.6, 0.0));
        g.cells[g.spec.index(1, 2, 0)] = cell(0.5, 0.95, 0.0);
        g.cells[g.spec.index(2, 2, 0)] = FieldCell::EMPTY;
        let m = extract_specimen(&g, &SpecimenShape::new(ShapeLabel::R1), [0, 0], 0).unwrap();
        assert_eq!((m.clamped_f, m.clamped_a, m.empty_cells), (1, 1, 1));
        assert_eq!(m.sections[1][2], SpecimenCell { f: 0.35, a: 0.8, theta: 0.0 });
        assert_eq!(m.sections[2][2], SpecimenCell { f: 0.15, a: 0.5, theta: 0.0 });
    }

    #[test]
    fn tga_discs_average_cells_in_the_disc() {
        let mut g = plate([83, 83, 1], cell(0.26, 0.6, 0.0));
        let pos = tga_positions(&g.spec);
        assert_eq!(pos.len(), TGA_SAMPLES_PER_PLATE);
        for v in tga_samples(&g, &pos).unwrap() {
            assert!((v - 0.26).abs() < 1e-15);
        }
        // A disc of radius 12.5 mm on 3 mm cells holds 52 cell centers when
        // centered on a cell corner; raising one of them shifts the mean.
        let corner = [120.0, 120.0];
        let (i, j) = (40, 40);
        g.cells[g.spec.index(i, j, 0)].f = 0.26 + 0.52;
        let v = tga_samples(&g, &[corner]).unwrap()[0];
        assert!((v - (0.26 + 0.01)).abs() < 1e-14, "{v}");
        assert!(tga_samples(&g, &[[5.0, 100.0]]).is_err());
        assert!((sample_std(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn homogeneous_specimen_matches_a_single_material_point() {
        let p = model_params();
        let (m, b) = (DamageMaterial::reference_matrix(), DamageMaterial::reference_bundle());
        let sc = SpecimenCell { f: 0.25, a: 0.65, theta: 0.3 };
        let model = SpecimenModel::homogeneous(&bar(21.0, 6.0, 9.0), 3.0, 1, sc).unwrap();
        let opts = TensionOptions { elongation_mm: 0.63, ..Default::default() };
        let res = simulate_tension(&model, &p, &m, &b, &opts).unwrap();
        assert!(res.failed);

        let net = Network::new(&p, sc.f, sc.a).unwrap().rotated(&Rotation::about_z(sc.theta));
        let dmn = NonlinearDmn::new(net, &m, &b);
        let mut state = dmn.initial_state();
        for n in 1..res.strain.len() {
            let e = res.elongation_mm[n] / 21.0;
            let r = dmn.solve(&MacroControl::uniaxial_stress(e), &state).unwrap();
            assert!((res.strain[n] - e).abs() <= 1e-12 * e);
            assert!((res.stress[n] - r.stress[0]).abs() <= 1e-7 * r.stress[0], "step {n}: {} vs {}", res.stress[n], r.stress[0]);
            let q = dmn.phase_average(&r.state, true, 0).unwrap();
            assert_eq!(q > FAILURE_THRESHOLD, n == res.strain.len() - 1, "failure step {n}");
            state = r.state;
        }
    }

    fn mixed_model() -> SpecimenModel {
        let shape = bar(30.0, 6.0, 12.0);
        let mut model = SpecimenModel::homogeneous(&shape, 3.0, 1, SpecimenCell { f: 0.25, a: 0.6, theta: 0.0 }).unwrap();
        for (s, sec) in model.sections.iter_mut().enumerate() {
            for (c, cell) in sec.iter_mut().enumerate() {
                let x = (s * 2 + c) as f64;
                *cell = SpecimenCell { f: 0.2 + 0.012 * (x * 1.7).sin().abs() * 10.0, a: 0.5 + 0.3 * (x * 0.9).cos().abs(), theta: (x * 0.37).sin() };
            }
        }
        model
    }

    #[test]
    fn heterogeneous_specimen_balances_force_and_work() {
        let p = model_params();
        let (m, b) = (DamageMaterial::reference_matrix(), DamageMaterial::reference_bundle());
        let opts = TensionOptions { elongation_mm: 0.9, ..Default::default() };
        let res = simulate_tension(&mixed_model(), &p, &m, &b, &opts).unwrap();
        assert!(res.strain.len() > 10);
        for n in 1..res.strain.len() {
            assert!(res.force_imbalance[n] < 1e-8, "step {n}: {}", res.force_imbalance[n]);
            let (ext, int) = (res.external_work[n], res.internal_work[n]);
            assert!((ext - int).abs() <= 1e-6 * ext.abs(), "step {n}: {ext} vs {int}");
            assert!(res.strain[n] >= res.strain[n - 1]);
        }
        let again = simulate_tension(&mixed_model(), &p, &m, &b, &opts).unwrap();
        assert_eq!(res, again);
    }

    #[test]
    fn stiff_gauge_moves_failure_outside_it() {
        let p = model_params();
        let (m, b) = (DamageMaterial::reference_matrix(), DamageMaterial::reference_bundle());
        let shape = bar(30.0, 3.0, 12.0);
        let mut model = SpecimenModel::homogeneous(&shape, 3.0, 1, SpecimenCell { f: 0.25, a: 0.5, theta: 0.0 }).unwrap();
        for (sec, &g) in model.sections.iter_mut().zip(&model.gauge) {
            if g {
                sec[0].a = 0.8;
            }
        }
        let opts = TensionOptions { elongation_mm: 0.9, ..Default::default() };
        let res = simulate_tension(&model, &p, &m, &b, &opts).unwrap();
        let (s, _) = res.failure_cell.expect("specimen fails");
        assert!(!model.gauge[s], "failure in gauge section {s}");

        let uniform = SpecimenModel::homogeneous(&shape, 3.0, 1, SpecimenCell { f: 0.25, a: 0.5, theta: 0.0 }).unwrap();
        let base = simulate_tension(&uniform, &p, &m, &b, &opts).unwrap();
        assert!(extract_features(&res).unwrap().values[0] > extract_features(&base).unwrap().values[0]);
    }

    fn linear_curve(e0: f64, fail: f64, n: usize) -> LoadingResult {
        let strain: Vec<f64> = (0..=n).map(|k| fail * k as f64 / n as f64).collect();
        let stress = strain.iter().map(|e| e0 * e).collect();
        let z = vec![0.0; n + 1];
        LoadingResult {
            elongation_mm: z.clone(),
            strain,
            stress,
            max_matrix_damage: z.clone(),
            force_imbalance: z.clone(),
            external_work: z.clone(),
            internal_work: z,
            failed: true,
            failure_cell: Some((0, 0)),
        }
    }

    #[test]
    fn features_of_a_linear_curve() {
        let f = extract_features(&linear_curve(10_000.0, 0.02, 80)).unwrap();
        assert_eq!(f.values.len(), N_FEATURES);
        assert_eq!(feature_names().len(), N_FEATURES);
        assert!((f.values[0] - 10_000.0).abs() < 1e-8);
        assert!((f.values[1] - 200.0).abs() < 1e-10);
        assert_eq!(f.values[2], 0.02);
        for k in 1..=N_STRESS_LEVELS {
            assert!((f.values[2 + k] - 10.0 * k as f64).abs() < 1e-9);
        }
        assert!(f.filled.iter().all(|&x| !x));
    }

    #[test]
    fn early_failure_fills_missing_levels() {
        let f = extract_features(&linear_curve(10_000.0, 0.0105, 42)).unwrap();
        for k in 0..N_STRESS_LEVELS {
            assert_eq!(f.filled[k], k >= 10, "level {}", k + 1);
        }
        assert_eq!(f.values[3 + 14], f.values[1]);
        assert!(extract_features(&linear_curve(10_000.0, 0.0004, 4)).is_err());
        assert!(extract_features(&linear_curve(10_000.0, 0.01, 0)).is_err());
    }

    #[test]
    fn database_and_curve_round_trip() {
        let f = extract_features(&linear_curve(9000.0, 0.012, 48)).unwrap();
        let rec = SpecimenRecord {
            config: "B".into(),
            plate_seed: 11,
            shape: ShapeLabel::B2,
            position: 7,
            turns: 3,
            mean_f: 0.2613,
            mean_a: 0.61,
            features: f.values,
            filled_levels: f.filled.iter().filter(|&&x| x).count(),
            failed: true,
        };
        let text = write_records(&[rec.clone(), SpecimenRecord { failed: false, turns: 0, ..rec.clone() }]);
        let back = read_records(&format!("# provenance\n{text}")).unwrap();
        assert_eq!(back[0], rec);
        assert_eq!(back[1].rotation_deg(), 0);
        assert!(read_records("nonsense\n").is_err());
        let curve = linear_curve(9000.0, 0.012, 5);
        let (e, s) = read_curve(&write_curve(&curve)).unwrap();
        assert_eq!((e, s), (curve.strain, curve.stress));
    }
}

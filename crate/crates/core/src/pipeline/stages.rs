use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::artifact::{read_artifact, write_artifact, Provenance};
use super::config::{configuration, RunConfig};
use crate::damage::DamageMaterial;
use crate::dmn::{read_model, train, write_model, DmnParams, TrainConfig, ValidationPack};
use crate::meanfield::{build_training_set, read_training_set, training_tuples, write_training_set, SecantVariant};
use crate::microstructure::{
    evaluate_cell_fields, generate_stack, orientation_tensor, read_bundles, read_field, subset_scatter, write_bundles, write_field, FieldGrid, GridSpec,
};
use crate::molding::{plug_flow_transform, PlugFlowParams};
use crate::specimen::{
    extract_features, extract_specimen, plate_layout, read_records, sample_std, simulate_tension, tga_positions, tga_samples, write_curve, write_records,
    SpecimenCell, SpecimenModel, SpecimenRecord, SpecimenShape, TensionOptions, PLATE_TURNS,
};
use crate::uq::{build_report, characteristic_length, write_report, ScalingLaw};
use crate::{Error, Result};

/// Damage validation pack points `(f, a)`, each loaded at 0°, 45° and 90°.
pub const VALIDATION_TUPLES: [(f64, f64); 9] =
    [(0.15, 0.5), (0.15, 0.65), (0.15, 0.8), (0.25, 0.5), (0.25, 0.65), (0.25, 0.8), (0.35, 0.5), (0.35, 0.65), (0.35, 0.8)];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    GenerateStack,
    Mold,
    Fields,
    TrainDmn,
    TestDmn,
    Specimens,
    UqReport,
}

impl Stage {
    pub const ALL: [Stage; 7] = [Stage::GenerateStack, Stage::Mold, Stage::Fields, Stage::TrainDmn, Stage::TestDmn, Stage::Specimens, Stage::UqReport];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::GenerateStack => "generate-stack",
            Self::Mold => "mold",
            Self::Fields => "fields",
            Self::TrainDmn => "train-dmn",
            Self::TestDmn => "test-dmn",
            Self::Specimens => "specimens",
            Self::UqReport => "uq-report",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|st| st.as_str() == s).ok_or_else(|| Error::config(format!("unknown stage '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    StressBands,
    StrengthModulusScatter,
    TgaScatter,
    SizeScaling,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [PlotKind::StressBands, PlotKind::StrengthModulusScatter, PlotKind::TgaScatter, PlotKind::SizeScaling];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::StressBands => "stress-bands",
            Self::StrengthModulusScatter => "strength-modulus-scatter",
            Self::TgaScatter => "tga-scatter",
            Self::SizeScaling => "size-scaling",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| Error::config(format!("unknown plot kind '{s}'")))
    }
}

/// Stage runner bound to one configuration and output directory.
pub struct Pipeline {
    pub config: RunConfig,
    pub hash: String,
    pub out_dir: PathBuf,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    pub fn new(config: RunConfig, out_dir: impl Into<PathBuf>, workers: usize) -> Result<Self> {
        config.validate()?;
        if workers == 0 {
            return Err(Error::config("at least one worker is required"));
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| Error::config(format!("worker pool: {e}")))?;
        let hash = config.hash();
        Ok(Self { config, hash, out_dir: out_dir.into(), pool })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out_dir.join(rel)
    }

    pub fn stack_path(&self, label: &str, r: usize) -> PathBuf {
        self.path(&format!("stacks/{label}_r{r}.bundles"))
    }

    pub fn plate_path(&self, label: &str, r: usize) -> PathBuf {
        self.path(&format!("plates/{label}_r{r}.bundles"))
    }

    pub fn field_path(&self, label: &str, r: usize) -> PathBuf {
        self.path(&format!("fields/{label}_r{r}.field"))
    }

    pub fn database_path(&self) -> PathBuf {
        self.path("specimens/database.tsv")
    }

    pub fn model_path(&self) -> PathBuf {
        self.path("dmn/model.txt")
    }

    pub fn plot_path(&self, kind: PlotKind) -> PathBuf {
        self.path(&format!("plots/{}.tsv", kind.as_str()))
    }

    fn prov(&self, stage: Stage) -> Provenance {
        Provenance::new(stage.as_str(), &self.hash).with("run_seed", self.config.run.seed)
    }

    fn read(&self, path: &Path) -> Result<(Provenance, String)> {
        read_artifact(path, &self.hash)
    }

    fn write(&self, rel: &str, prov: &Provenance, body: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        write_artifact(&p, prov, body)?;
        Ok(p)
    }

    /// Runs one stage; returns one summary line per produced unit.
    pub fn run(&self, stage: Stage) -> Result<Vec<String>> {
        let t = Instant::now();
        let out = self.pool.install(|| match stage {
            Stage::GenerateStack => self.generate_stacks(),
            Stage::Mold => self.mold(),
            Stage::Fields => self.fields(),
            Stage::TrainDmn => self.train_dmn(),
            Stage::TestDmn => self.test_dmn(),
            Stage::Specimens => self.specimens(),
            Stage::UqReport => self.uq_report(),
        })?;
        log::info!("stage {} finished in {:.1} s", stage.as_str(), t.elapsed().as_secs_f64());
        Ok(out)
    }

    pub fn run_all(&self) -> Result<()> {
        for stage in Stage::ALL {
            for line in self.run(stage)? {
                log::info!("{line}");
            }
        }
        Ok(())
    }

    fn generate_stacks(&self) -> Result<Vec<String>> {
        let mut lines = Vec::new();
        let mut summary = String::from("config\trealization\tseed\tbundles\tsegments\tclipped_fraction\tvolume_fraction\tA11\tA22\tA33\n");
        for (label, r) in self.config.plates() {
            let cfg = self.config.stack_config(&label, r)?;
            let stack = generate_stack(&cfg)?;
            let a = *orientation_tensor(&stack.bundles)?.matrix();
            let prov = self.prov(Stage::GenerateStack).with("configuration", &label).with("realization", r).with("stack_seed", cfg.seed);
            write_artifact(&self.stack_path(&label, r), &prov, &write_bundles(&stack.bundles))?;
            let row = format!(
                "{label}\t{r}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                cfg.seed,
                stack.bundles.len(),
                stack.segment_count(),
                stack.clipped_fraction(),
                stack.volume_fraction(),
                a[(0, 0)],
                a[(1, 1)],
                a[(2, 2)]
            );
            summary += &row;
            summary.push('\n');
            lines.push(format!(
                "stack {label} r{r}: {} bundles, {} segments, {:.1}% clipped",
                stack.bundles.len(),
                stack.segment_count(),
                100.0 * stack.clipped_fraction()
            ));
        }
        self.write("stacks/summary.tsv", &self.prov(Stage::GenerateStack), &summary)?;
        Ok(lines)
    }

    fn plug_flow(&self, label: &str) -> Result<PlugFlowParams> {
        let (_, a0) = configuration(label)?;
        let (s, m) = (&self.config.stack, &self.config.molding);
        let (cx, cy) = (0.5 * s.length_mm, 0.5 * s.width_mm);
        let plate = [cx - 0.5 * m.plate_length_mm, cy - 0.5 * m.plate_width_mm, cx + 0.5 * m.plate_length_mm, cy + 0.5 * m.plate_width_mm];
        Ok(PlugFlowParams::for_orientation(a0, s.height_mm, m.plate_height_mm, [0.0, 0.0, s.length_mm, s.width_mm], plate))
    }

    pub fn grid_spec(&self) -> GridSpec {
        let (s, m) = (&self.config.stack, &self.config.molding);
        let n = |d: f64| (d / m.cell_edge_mm).round() as usize;
        GridSpec {
            origin: Vector3::new(0.5 * (s.length_mm - m.plate_length_mm), 0.5 * (s.width_mm - m.plate_width_mm), 0.0),
            edge_mm: m.cell_edge_mm,
            counts: [n(m.plate_length_mm), n(m.plate_width_mm), n(m.plate_height_mm)],
        }
    }

    fn mold(&self) -> Result<Vec<String>> {
        let mut lines = Vec::new();
        for (label, r) in self.config.plates() {
            let (prov, body) = self.read(&self.stack_path(&label, r))?;
            let bundles = read_bundles(&body)?;
            let pf = self.plug_flow(&label)?;
            let molded = plug_flow_transform(&bundles, &pf)?;
            let volume: f64 = molded.iter().map(|b| b.volume()).sum();
            let out = self
                .prov(Stage::Mold)
                .with("configuration", &label)
                .with("realization", r)
                .with("stack_seed", prov.get("stack_seed").unwrap_or("?"))
                .with("fiber_volume_mm3", volume);
            write_artifact(&self.plate_path(&label, r), &out, &write_bundles(&molded))?;
            lines.push(format!("plate {label} r{r}: {} bundle pieces, fiber volume {volume:.1} mm³", molded.len()));
        }
        Ok(lines)
    }

    fn fields(&self) -> Result<Vec<String>> {
        let spec = self.grid_spec();
        let plate_volume = spec.n_cells() as f64 * spec.cell_volume();
        let positions = tga_positions(&spec);
        let mut lines = Vec::new();
        let mut summary = String::from("config\trealization\tmean_f\tbundle_volume_fraction\tempty_cells\n");
        let mut tga = String::from("config\trealization");
        for k in 1..=positions.len() {
            let _ = write!(tga, "\tf_{k}");
        }
        tga += "\twithin_plate_std\n";
        let mut scatter = String::from("config\trealization\tedge_mm\tL_mm\tsigma_f\tsigma_a\tsubsets\n");
        for (label, r) in self.config.plates() {
            let (prov, body) = self.read(&self.plate_path(&label, r))?;
            let bundles = read_bundles(&body)?;
            let field = evaluate_cell_fields(&bundles, &spec, false)?;
            let volume: f64 = bundles.iter().map(|b| b.volume()).sum();
            let out = self
                .prov(Stage::Fields)
                .with("configuration", &label)
                .with("realization", r)
                .with("stack_seed", prov.get("stack_seed").unwrap_or("?"))
                .with("fiber_volume_mm3", volume);
            write_artifact(&self.field_path(&label, r), &out, &write_field(&field))?;
            let _ = writeln!(summary, "{label}\t{r}\t{}\t{}\t{}", field.mean_f(), volume / plate_volume, field.empty_count());
            let samples = tga_samples(&field, &positions)?;
            let sd = sample_std(&samples);
            let _ = write!(tga, "{label}\t{r}");
            for s in &samples {
                let _ = write!(tga, "\t{s}");
            }
            let _ = writeln!(tga, "\t{sd}");
            for s in subset_scatter(&field, &self.config.uq.scatter_edges_mm)? {
                let _ = writeln!(scatter, "{label}\t{r}\t{}\t{}\t{}\t{}\t{}", s.edge_mm, s.characteristic_length_mm, s.sigma_f, s.sigma_a, s.subsets);
            }
            lines.push(format!("fields {label} r{r}: mean f {:.4}, TGA std {:.2}%", field.mean_f(), 100.0 * sd));
        }
        let prov = self.prov(Stage::Fields);
        self.write("fields/summary.tsv", &prov, &summary)?;
        self.write("fields/tga.tsv", &prov, &tga)?;
        self.write("fields/scatter.tsv", &prov, &scatter)?;
        Ok(lines)
    }

    fn validation_pack(&self) -> Result<ValidationPack> {
        let d = &self.config.dmn;
        ValidationPack::build(
            DamageMaterial::reference_matrix(),
            DamageMaterial::reference_bundle(),
            &VALIDATION_TUPLES,
            d.validation_strain,
            d.validation_steps,
            SecantVariant::FirstOrder,
        )
    }

    fn dmn_seed(&self) -> u64 {
        self.config.run.seed.wrapping_mul(7919)
    }

    fn train_dmn(&self) -> Result<Vec<String>> {
        let d = &self.config.dmn;
        let seed = self.dmn_seed();
        let samples = build_training_set(&training_tuples(), d.training_samples, seed)?;
        let pack = self.validation_pack()?;
        let init = DmnParams::random(d.depth, seed)?;
        let cfg = TrainConfig {
            penalty: d.penalty,
            learning_rate: d.learning_rate,
            check_every: d.check_every_epochs,
            patience: d.patience_checks,
            max_epochs: d.max_epochs,
            seed,
            ..TrainConfig::default()
        };
        let (params, report) = train(&init, &samples, &cfg, Some(&pack))?;
        let prov = self.prov(Stage::TrainDmn).with("dmn_seed", seed).with("depth", d.depth);
        self.write("dmn/training_set.txt", &prov, &write_training_set(&samples))?;
        self.write("dmn/model.txt", &prov, &write_model(&params))?;
        let mut rep = String::from("epoch\tloss\te_train_mean\te_valid_mean\teta_mean\teta_max\n");
        for h in &report.history {
            let _ = writeln!(rep, "{}\t{}\t{}\t{}\t{}\t{}", h.epoch, h.loss, h.e_train_mean, h.e_valid_mean, h.eta_mean, h.eta_max);
        }
        let b = &report.best;
        let best = prov.clone().with("best_epoch", b.epoch).with("epochs_run", report.epochs_run);
        self.write("dmn/train_report.tsv", &best, &rep)?;
        Ok(vec![format!(
            "dmn K={}: best epoch {} of {}, e_valid {:.2}%, eta_mean {:.2}%, eta_max {:.2}%",
            d.depth,
            b.epoch,
            report.epochs_run,
            100.0 * b.e_valid_mean,
            100.0 * b.eta_mean,
            100.0 * b.eta_max
        )])
    }

    fn load_model(&self) -> Result<DmnParams> {
        let (_, body) = self.read(&self.model_path())?;
        read_model(&body)
    }

    fn test_dmn(&self) -> Result<Vec<String>> {
        let params = self.load_model()?;
        let (_, body) = self.read(&self.path("dmn/training_set.txt"))?;
        let trained_on = read_training_set(&body)?.len();
        let seed = self.dmn_seed().wrapping_add(1);
        let test = build_training_set(&training_tuples(), self.config.dmn.test_samples, seed)?;
        let preds = crate::dmn::train::predict_all(&params, &test)?;
        let errs: Vec<f64> = preds.iter().zip(&test).map(|(p, s)| crate::dmn::elastic_error(p, &s.target)).collect();
        let e_mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let e_max = errs.iter().cloned().fold(0.0, f64::max);
        let (eta_mean, eta_max) = self.validation_pack()?.errors(&params)?;
        let prov = self.prov(Stage::TestDmn).with("test_seed", seed).with("training_samples", trained_on);
        let body = format!("metric\tvalue\ne_test_mean\t{e_mean}\ne_test_max\t{e_max}\neta_mean\t{eta_mean}\neta_max\t{eta_max}\n");
        self.write("dmn/test_report.tsv", &prov, &body)?;
        Ok(vec![format!(
            "dmn test: e_mean {:.2}%, e_max {:.2}%, eta_mean {:.2}%, eta_max {:.2}%",
            100.0 * e_mean,
            100.0 * e_max,
            100.0 * eta_mean,
            100.0 * eta_max
        )])
    }

    fn specimens(&self) -> Result<Vec<String>> {
        let params = self.load_model()?;
        let spec = self.grid_spec();
        let layout = plate_layout([spec.counts[0], spec.counts[1]], spec.edge_mm)?;
        let per_plate = self.config.specimens.per_plate;
        if per_plate > layout.len() * PLATE_TURNS as usize {
            return Err(Error::config(format!("at most {} specimens fit on a plate", layout.len() * PLATE_TURNS as usize)));
        }
        let mut plates: Vec<(String, usize, u64, FieldGrid)> = Vec::new();
        for (label, r) in self.config.plates() {
            let (_, body) = self.read(&self.field_path(&label, r))?;
            plates.push((label.clone(), r, self.config.plate_seed(&label, r)?, read_field(&body)?));
        }
        let n_pos = layout.len();
        let units: Vec<(usize, u8, usize)> =
            (0..plates.len()).flat_map(|p| (0..PLATE_TURNS).flat_map(move |t| (0..n_pos).map(move |i| (p, t, i))).take(per_plate)).collect();
        let opts = TensionOptions { elongation_mm: self.config.specimens.elongation_mm, steps: self.config.specimens.load_steps, ..TensionOptions::default() };
        let (matrix, bundle) = (DamageMaterial::reference_matrix(), DamageMaterial::reference_bundle());
        let results: Vec<(SpecimenRecord, String)> = units
            .par_iter()
            .map(|&(p, turns, i)| {
                let (label, _, seed, field) = &plates[p];
                let pl = layout[i];
                let model = extract_specimen(field, &SpecimenShape::new(pl.label), pl.offset, turns)?;
                let res = simulate_tension(&model, &params, &matrix, &bundle, &opts)?;
                let feat = extract_features(&res)?;
                let rec = SpecimenRecord {
                    config: label.clone(),
                    plate_seed: *seed,
                    shape: pl.label,
                    position: pl.index,
                    turns,
                    mean_f: model.mean_f(),
                    mean_a: model.mean_a(),
                    features: feat.values,
                    filled_levels: feat.filled.iter().filter(|f| **f).count(),
                    failed: feat.failed,
                };
                Ok((rec, write_curve(&res)))
            })
            .collect::<Result<_>>()?;
        let prov = self.prov(Stage::Specimens);
        for (rec, curve) in &results {
            let rel = format!("specimens/curves/{}_s{}_p{:02}_t{}.tsv", rec.config, rec.plate_seed, rec.position, rec.turns);
            self.write(&rel, &prov.clone().with("shape", rec.shape.as_str()), curve)?;
        }
        let records: Vec<SpecimenRecord> = results.into_iter().map(|(r, _)| r).collect();
        write_artifact(&self.database_path(), &prov, &write_records(&records))?;
        let failed = records.iter().filter(|r| r.failed).count();
        Ok(vec![format!("specimens: {} rows from {} plates, {failed} reached the failure threshold", records.len(), plates.len())])
    }

    /// Characteristic length of each shape from its gauge volume.
    pub fn shape_length_mm(&self, label: crate::specimen::ShapeLabel) -> Result<f64> {
        let spec = self.grid_spec();
        let cell = SpecimenCell { f: 0.25, a: 0.5, theta: 0.0 };
        let model = SpecimenModel::homogeneous(&SpecimenShape::new(label), spec.edge_mm, spec.counts[2], cell)?;
        Ok(characteristic_length(model.gauge_volume_mm3()))
    }

    pub fn load_records(&self) -> Result<Vec<SpecimenRecord>> {
        let path = self.database_path();
        let (_, body) = self.read(&path)?;
        let records = read_records(&body)?;
        if records.is_empty() {
            return Err(Error::artifact(path, "specimen database is empty"));
        }
        Ok(records)
    }

    fn law(&self) -> ScalingLaw {
        ScalingLaw { c_f_per_mm: self.config.uq.c_f_per_mm, c_a_per_mm: self.config.uq.c_a_per_mm }
    }

    pub fn report(&self, records: &[SpecimenRecord]) -> Result<Vec<crate::uq::ShapeReport>> {
        let mut lengths = Vec::new();
        for s in crate::specimen::ShapeLabel::TENSILE {
            lengths.push((s, self.shape_length_mm(s)?));
        }
        let length = |s| lengths.iter().find(|(l, _)| *l == s).map(|(_, v)| *v).unwrap_or(f64::NAN);
        build_report(records, length, &self.law(), (self.config.uq.sigma_c_f, self.config.uq.sigma_c_a))
    }

    fn uq_report(&self) -> Result<Vec<String>> {
        let records = self.load_records()?;
        let reports = self.report(&records)?;
        self.write("uq/report.txt", &self.prov(Stage::UqReport), &write_report(&reports))?;
        let mut lines = vec![format!("uq report: {} shapes from {} rows", reports.len(), records.len())];
        for kind in PlotKind::ALL {
            let p = self.emit_plot_data(kind)?;
            lines.push(format!("plot data {}", p.display()));
        }
        Ok(lines)
    }

    /// Writes the tabular data of one plot kind and returns its path.
    pub fn emit_plot_data(&self, kind: PlotKind) -> Result<PathBuf> {
        let prov = self.prov(Stage::UqReport).with("plot", kind.as_str());
        let body = match kind {
            PlotKind::StressBands => {
                let reports = self.report(&self.load_records()?)?;
                let mut s = String::from("shape\tcase\tstrain\tmean_MPa\tlower_3sigma_MPa\tupper_3sigma_MPa\n");
                for r in &reports {
                    for c in &r.cases {
                        for b in &c.bands {
                            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}\t{}", r.shape.as_str(), c.case.as_str(), b[0], b[1], b[2], b[3]);
                        }
                    }
                }
                s
            }
            PlotKind::StrengthModulusScatter => {
                let records = self.load_records()?;
                let reports = self.report(&records)?;
                let mut s = String::from("series\tshape\tconfig\trotation_deg\tcase\tstrength_MPa\tE_MPa\n");
                for r in &records {
                    let _ = writeln!(s, "specimen\t{}\t{}\t{}\t-\t{}\t{}", r.shape.as_str(), r.config, r.rotation_deg(), r.features[1], r.features[0]);
                }
                for r in &reports {
                    for c in &r.cases {
                        for p in c.ellipse.polyline(96) {
                            let _ = writeln!(s, "ellipse\t{}\t-\t-\t{}\t{}\t{}", r.shape.as_str(), c.case.as_str(), p.x, p.y);
                        }
                    }
                }
                s
            }
            PlotKind::TgaScatter => self.read(&self.path("fields/tga.tsv"))?.1,
            PlotKind::SizeScaling => {
                let body = self.read(&self.path("fields/scatter.tsv"))?.1;
                let mut pts = Vec::new();
                for line in body.lines().skip(1).filter(|l| !l.is_empty()) {
                    let t: Vec<&str> = line.split('\t').collect();
                    let num = |i: usize| t.get(i).and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| Error::format("bad scatter row"));
                    if t.get(6).and_then(|v| v.parse::<usize>().ok()).unwrap_or(0) >= 2 {
                        pts.push((num(3)?, num(4)?, num(5)?));
                    }
                }
                let fit = crate::uq::fit_scaling_law(&pts)?;
                let mut s = String::from("series\tL_mm\tsigma_f\tsigma_a\n");
                for (l, f, a) in &pts {
                    let _ = writeln!(s, "subset\t{l}\t{f}\t{a}");
                }
                let (lmin, lmax) = pts.iter().fold((f64::INFINITY, 0.0f64), |(a, b), p| (a.min(p.0), b.max(p.0)));
                for k in 0..=50 {
                    let l = lmin + (lmax - lmin) * k as f64 / 50.0;
                    let (f, a) = crate::uq::sigma_of_size(l, &fit.law)?;
                    let _ = writeln!(s, "fit\t{l}\t{f}\t{a}");
                    let (f, a) = crate::uq::sigma_of_size(l, &self.law())?;
                    let _ = writeln!(s, "reference\t{l}\t{f}\t{a}");
                }
                s
            }
        };
        let path = self.plot_path(kind);
        write_artifact(&path, &prov, &body)?;
        Ok(path)
    }
}

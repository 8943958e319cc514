use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::microstructure::StackConfig;
use crate::{Error, Result};

/// Initial stack configurations `(label, f0, a0)`.
pub const CONFIGURATIONS: [(&str, f64, f64); 4] = [("A", 0.225, 0.5), ("B", 0.26, 0.5), ("C", 0.29, 0.5), ("D", 0.26, 0.6)];

pub fn configuration(label: &str) -> Result<(f64, f64)> {
    CONFIGURATIONS
        .iter()
        .find(|c| c.0 == label)
        .map(|c| (c.1, c.2))
        .ok_or_else(|| Error::config(format!("unknown stack configuration '{label}' (expected A, B, C or D)")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    PaperScale,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper-scale" => Ok(Self::PaperScale),
            _ => Err(Error::config(format!("unknown preset '{s}' (expected desk or paper-scale)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub configurations: Vec<String>,
    pub realizations_per_configuration: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackSection {
    pub length_mm: f64,
    pub width_mm: f64,
    pub height_mm: f64,
    pub bundle_length_mm: f64,
    pub segment_length_mm: f64,
    pub bundle_area_mm2: f64,
    /// Caps the bundle count by enlarging the bundle area; 0 keeps the area.
    pub bundle_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoldingSection {
    pub plate_length_mm: f64,
    pub plate_width_mm: f64,
    pub plate_height_mm: f64,
    pub cell_edge_mm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmnSection {
    pub depth: usize,
    pub training_samples: usize,
    pub test_samples: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub penalty: f64,
    pub check_every_epochs: usize,
    pub patience_checks: usize,
    pub validation_strain: f64,
    pub validation_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecimenSection {
    pub per_plate: usize,
    pub elongation_mm: f64,
    pub load_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UqSection {
    pub sigma_c_f: f64,
    pub sigma_c_a: f64,
    pub c_f_per_mm: f64,
    pub c_a_per_mm: f64,
    pub scatter_edges_mm: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub stack: StackSection,
    pub molding: MoldingSection,
    pub dmn: DmnSection,
    pub specimens: SpecimenSection,
    pub uq: UqSection,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let desk = preset == Preset::Desk;
        Self {
            run: RunSection {
                configurations: CONFIGURATIONS.iter().map(|c| c.0.to_string()).collect(),
                realizations_per_configuration: if desk { 2 } else { 4 },
                seed: 1,
            },
            stack: StackSection {
                length_mm: 270.0,
                width_mm: 270.0,
                height_mm: if desk { 4.0 } else { 12.0 },
                bundle_length_mm: 25.0,
                segment_length_mm: 2.5,
                bundle_area_mm2: crate::microstructure::DEFAULT_BUNDLE_AREA,
                bundle_count: if desk { 20_000 } else { 0 },
            },
            molding: MoldingSection { plate_length_mm: 249.0, plate_width_mm: 249.0, plate_height_mm: 3.0, cell_edge_mm: 3.0 },
            dmn: DmnSection {
                depth: if desk { 6 } else { 8 },
                training_samples: if desk { 300 } else { 1230 },
                test_samples: if desk { 100 } else { 410 },
                max_epochs: 1000,
                learning_rate: 1.5e-2,
                penalty: 1000.0,
                check_every_epochs: 5,
                patience_checks: 60,
                validation_strain: 0.04,
                validation_steps: 40,
            },
            specimens: SpecimenSection { per_plate: 64, elongation_mm: 3.0, load_steps: 60 },
            uq: UqSection {
                sigma_c_f: crate::uq::SIGMA_C_F,
                sigma_c_a: crate::uq::SIGMA_C_A,
                c_f_per_mm: 0.058,
                c_a_per_mm: 4.184,
                scatter_edges_mm: vec![3.0, 6.0, 9.0, 15.0, 21.0, 30.0, 42.0, 60.0, 81.0],
            },
        }
    }

    /// Parses a config file laid over `base`: keys absent from the file keep
    /// the base values.
    pub fn from_toml(text: &str, base: &RunConfig) -> Result<Self> {
        let overlay: toml::Value = toml::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))?;
        let mut merged = toml::Value::try_from(base).map_err(|e| Error::config(e.to_string()))?;
        merge(&mut merged, overlay);
        let cfg: RunConfig = merged.try_into().map_err(|e: toml::de::Error| Error::config(format!("config error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn with_seed_offset(mut self, offset: u64) -> Self {
        self.run.seed = self.run.seed.wrapping_add(offset);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.configurations.is_empty() {
            return Err(Error::config("no stack configurations selected"));
        }
        for label in &self.run.configurations {
            configuration(label)?;
        }
        let counts = [
            self.run.realizations_per_configuration,
            self.dmn.depth,
            self.dmn.training_samples,
            self.dmn.test_samples,
            self.dmn.max_epochs,
            self.dmn.check_every_epochs,
            self.dmn.patience_checks,
            self.dmn.validation_steps,
            self.specimens.per_plate,
            self.specimens.load_steps,
        ];
        if counts.contains(&0) {
            return Err(Error::config("all counts must be positive"));
        }
        let m = &self.molding;
        let lengths = [m.plate_length_mm, m.plate_width_mm, m.plate_height_mm, m.cell_edge_mm, self.specimens.elongation_mm, self.dmn.validation_strain];
        if lengths.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::config("plate dimensions, cell edge, elongation and validation strain must be positive"));
        }
        if m.plate_length_mm > self.stack.length_mm || m.plate_width_mm > self.stack.width_mm || m.plate_height_mm >= self.stack.height_mm {
            return Err(Error::config("the plate must fit inside the stack footprint and be thinner than the stack"));
        }
        for d in [m.plate_length_mm, m.plate_width_mm, m.plate_height_mm] {
            let n = d / m.cell_edge_mm;
            if (n - n.round()).abs() > 1e-9 * n {
                return Err(Error::config(format!("cell edge {} mm does not divide {d} mm", m.cell_edge_mm)));
            }
        }
        if self.uq.scatter_edges_mm.is_empty() || self.uq.scatter_edges_mm.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::config("scatter edges must be positive"));
        }
        if !(self.uq.sigma_c_f >= 0.0 && self.uq.sigma_c_a >= 0.0 && self.uq.c_f_per_mm > 0.0 && self.uq.c_a_per_mm > 0.0) {
            return Err(Error::config("uq coefficients must be non-negative and the scaling law positive"));
        }
        for (label, _, _) in CONFIGURATIONS {
            if self.run.configurations.iter().any(|c| c == label) {
                self.stack_config(label, 0)?.validate()?;
            }
        }
        Ok(())
    }

    /// Seed of one plate realization.
    pub fn plate_seed(&self, label: &str, realization: usize) -> Result<u64> {
        let idx = CONFIGURATIONS.iter().position(|c| c.0 == label).ok_or_else(|| Error::config(format!("unknown configuration '{label}'")))?;
        Ok(self.run.seed.wrapping_mul(1000).wrapping_add(100 * idx as u64 + realization as u64))
    }

    pub fn stack_config(&self, label: &str, realization: usize) -> Result<StackConfig> {
        let (f0, a0) = configuration(label)?;
        let s = &self.stack;
        let cfg = StackConfig {
            f0,
            a0,
            length_mm: s.length_mm,
            width_mm: s.width_mm,
            height_mm: s.height_mm,
            bundle_length_mm: s.bundle_length_mm,
            segment_length_mm: s.segment_length_mm,
            bundle_area_mm2: s.bundle_area_mm2,
            packing_cap: crate::microstructure::DEFAULT_PACKING_CAP,
            seed: self.plate_seed(label, realization)?,
        };
        Ok(if s.bundle_count > 0 { cfg.with_bundle_count(s.bundle_count) } else { cfg })
    }

    /// `(label, realization)` of every plate, in run order.
    pub fn plates(&self) -> Vec<(String, usize)> {
        self.run.configurations.iter().flat_map(|c| (0..self.run.realizations_per_configuration).map(move |r| (c.clone(), r))).collect()
    }
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn configurations_match_table() {
        assert_eq!(configuration("A").unwrap(), (0.225, 0.5));
        assert_eq!(configuration("B").unwrap(), (0.26, 0.5));
        assert_eq!(configuration("C").unwrap(), (0.29, 0.5));
        assert_eq!(configuration("D").unwrap(), (0.26, 0.6));
        assert!(matches!(configuration("E"), Err(Error::Config(_))));
    }

    #[test]
    fn presets_validate_and_round_trip() {
        for p in [Preset::Desk, Preset::PaperScale] {
            let c = RunConfig::preset(p);
            c.validate().unwrap();
            let back = RunConfig::from_toml(&c.to_toml(), &RunConfig::preset(Preset::Desk)).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
        }
        let desk = RunConfig::preset(Preset::Desk);
        assert_eq!(desk.plates().len(), 8);
        assert_eq!(desk.stack_config("A", 0).unwrap().bundle_length_mm, 25.0);
    }

    #[test]
    fn overlay_changes_hash_and_rejects_unknown_keys() {
        let base = RunConfig::preset(Preset::Desk);
        let c = RunConfig::from_toml("[run]\nrealizations_per_configuration = 1\nconfigurations = [\"B\"]\n", &base).unwrap();
        assert_eq!(c.plates(), vec![("B".to_string(), 0)]);
        assert_eq!(c.dmn, base.dmn);
        assert_ne!(c.hash(), base.hash());
        assert!(matches!(RunConfig::from_toml("[stack]\nbundle_length = 3.0\n", &base), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[molding]\ncell_edge_mm = 4.0\n", &base), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[run]\nconfigurations = [\"Q\"]\n", &base), Err(Error::Config(_))));
        assert_ne!(base.clone().with_seed_offset(1).hash(), base.hash());
    }

    #[test]
    fn plate_seeds_are_distinct() {
        let c = RunConfig::preset(Preset::PaperScale);
        let mut seeds: Vec<u64> = c.plates().iter().map(|(l, r)| c.plate_seed(l, *r).unwrap()).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 16);
    }
}

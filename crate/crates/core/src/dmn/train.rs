//! Gradient-descent training with nonlinear early stopping, and model I/O.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::metrics::{elastic_error, error_metrics};
use super::network::{is_matrix_leaf, DmnParams, Network, Tape};
use super::nonlinear::NonlinearDmn;
use crate::damage::DamageMaterial;
use crate::error::{Error, Result};
use crate::meanfield::{secant_reference_curve, uniaxial_strain_direction, SecantVariant, TrainingSample};
use crate::rng::stream_rng;
use crate::tensor::{SymTensor2, SymTensor4};

pub const MODEL_MAGIC: &str = "smc-dmn-model v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Optimizer {
    /// Adam with bias correction (β1 = 0.9, β2 = 0.999).
    Adam,
    GradientDescent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub penalty: f64,
    pub learning_rate: f64,
    /// Epochs between learning-rate halvings.
    pub halving_period: usize,
    pub validation_fraction: f64,
    /// Epochs between nonlinear checks.
    pub check_every: usize,
    /// Checks without improvement of `η_max` before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            penalty: 1000.0,
            learning_rate: 1.5e-2,
            halving_period: 100,
            validation_fraction: 0.2,
            check_every: 5,
            patience: 60,
            max_epochs: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive =
            self.penalty > 0.0 && self.learning_rate > 0.0 && self.halving_period > 0 && self.check_every > 0 && self.patience > 0 && self.max_epochs > 0;
        if !positive || !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config(format!("invalid training configuration {self:?}")));
        }
        Ok(())
    }
}

/// One nonlinear validation loading with its reference curve.
#[derive(Clone, Debug)]
pub struct ValidationCase {
    pub f: f64,
    pub a: f64,
    pub alpha: f64,
    pub amplitude: f64,
    pub reference: Vec<SymTensor2>,
}

/// Damaging leaf materials plus reference curves for early stopping.
#[derive(Clone, Debug)]
pub struct ValidationPack {
    pub matrix: DamageMaterial,
    pub bundle: DamageMaterial,
    pub cases: Vec<ValidationCase>,
}

impl ValidationPack {
    /// Uniaxial strain loadings `amplitude · d⊗d` at 0°, 45° and 90° for each
    /// tuple, with references from the secant mean-field model.
    pub fn build(matrix: DamageMaterial, bundle: DamageMaterial, tuples: &[(f64, f64)], amplitude: f64, steps: usize, variant: SecantVariant) -> Result<Self> {
        let angles = [0.0, std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_2];
        let jobs: Vec<(f64, f64, f64)> = tuples.iter().flat_map(|&(f, a)| angles.iter().map(move |&al| (f, a, al))).collect();
        let cases = jobs
            .par_iter()
            .map(|&(f, a, alpha)| {
                let reference = secant_reference_curve(&matrix, &bundle, f, a, &uniaxial_strain_direction(alpha), amplitude, steps, variant)?;
                Ok(ValidationCase { f, a, alpha, amplitude, reference })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { matrix, bundle, cases })
    }

    /// Network prediction of every case's curve.
    pub fn predict(&self, params: &DmnParams) -> Result<Vec<Vec<SymTensor2>>> {
        self.cases
            .par_iter()
            .map(|case| {
                let dmn = NonlinearDmn::new(Network::new(params, case.f, case.a)?, &self.matrix, &self.bundle);
                let dir = uniaxial_strain_direction(case.alpha);
                let steps = case.reference.len();
                let mut state = dmn.initial_state();
                let mut out = Vec::with_capacity(steps);
                for k in 1..=steps {
                    let resp = dmn.step(&(dir * (case.amplitude * k as f64 / steps as f64)), &state)?;
                    out.push(resp.stress);
                    state = resp.state;
                }
                Ok(out)
            })
            .collect()
    }

    /// `(η_mean, η_max)` of `params` on this pack.
    pub fn errors(&self, params: &DmnParams) -> Result<(f64, f64)> {
        let pred = self.predict(params)?;
        let reference: Vec<Vec<SymTensor2>> = self.cases.iter().map(|c| c.reference.clone()).collect();
        error_metrics(&pred, &reference)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRecord {
    pub epoch: usize,
    pub loss: f64,
    pub e_train_mean: f64,
    pub e_valid_mean: f64,
    pub eta_mean: f64,
    pub eta_max: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub best: CheckRecord,
    pub epochs_run: usize,
    pub history: Vec<CheckRecord>,
    pub train_indices: Vec<usize>,
    pub valid_indices: Vec<usize>,
}

/// Penalty `λ[(Σ⟨v⟩_matrix − 1)² + (Σ⟨v⟩_bundle − 1)²]` and its gradient in `v`.
pub fn penalty(params: &DmnParams, lambda: f64) -> (f64, Vec<f64>) {
    let (sm, sb) = params.phase_sums();
    let value = lambda * ((sm - 1.0).powi(2) + (sb - 1.0).powi(2));
    let grad =
        params.v.iter().enumerate().map(|(j, &v)| if v > 0.0 { 2.0 * lambda * if is_matrix_leaf(j) { sm - 1.0 } else { sb - 1.0 } } else { 0.0 }).collect();
    (value, grad)
}

/// `J_s = ‖C_DMN − C̄‖₁ / (n ‖C̄‖₁)` and its gradient.
pub fn sample_loss(params: &DmnParams, sample: &TrainingSample, n: usize) -> Result<(f64, DmnParams)> {
    let tape = Tape::forward(params, &sample.c1, &sample.c2, sample.f, sample.a)?;
    let diff = tape.output - sample.target;
    let norm: f64 = sample.target.iter().map(|x| x.abs()).sum::<f64>() * n as f64;
    let loss = diff.iter().map(|x| x.abs()).sum::<f64>() / norm;
    let g = diff.map(|x| {
        if x > 0.0 {
            1.0 / norm
        } else if x < 0.0 {
            -1.0 / norm
        } else {
            0.0
        }
    });
    Ok((loss, tape.backward(params, &g)))
}

/// Total loss `Σ J_s + J_p` and gradient over `samples`, accumulated in order.
pub fn loss_and_gradient(params: &DmnParams, samples: &[&TrainingSample], lambda: f64) -> Result<(f64, DmnParams)> {
    let n = samples.len();
    let parts: Vec<(f64, DmnParams)> = samples.par_iter().map(|s| sample_loss(params, s, n)).collect::<Result<_>>()?;
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        grad.axpy(1.0, g);
    }
    let (pv, pg) = penalty(params, lambda);
    for (g, p) in grad.v.iter_mut().zip(pg) {
        *g += p;
    }
    Ok((loss + pv, grad))
}

/// Mean elastic error over `samples`.
pub fn mean_elastic_error(params: &DmnParams, samples: &[&TrainingSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("empty sample set"));
    }
    let errs: Vec<f64> =
        samples.par_iter().map(|s| Ok(elastic_error(&Network::new(params, s.f, s.a)?.stiffness(&s.c1, &s.c2)?, &s.target))).collect::<Result<_>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

fn split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, 1));
    let n_valid = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let valid = idx[..n_valid].to_vec();
    let mut train = idx[n_valid..].to_vec();
    train.sort_unstable();
    let mut valid = valid;
    valid.sort_unstable();
    (train, valid)
}

/// Full-batch gradient descent with step-wise halving of the learning rate.
/// Every `check_every` epochs the elastic and nonlinear errors are recorded;
/// the snapshot with the smallest `η_max` is returned (smallest validation
/// error when `pack` is `None`).
pub fn train(init: &DmnParams, samples: &[TrainingSample], config: &TrainConfig, pack: Option<&ValidationPack>) -> Result<(DmnParams, TrainReport)> {
    config.validate()?;
    init.validate()?;
    if samples.len() < 2 {
        return Err(Error::invalid("at least two training samples are required"));
    }
    let (train_idx, valid_idx) = split(samples.len(), config.validation_fraction, config.seed);
    let train_set: Vec<&TrainingSample> = train_idx.iter().map(|&i| &samples[i]).collect();
    let valid_set: Vec<&TrainingSample> = valid_idx.iter().map(|&i| &samples[i]).collect();

    let mut params = init.clone();
    let mut best: Option<(DmnParams, CheckRecord)> = None;
    let mut history = Vec::new();
    let mut stale = 0;
    let mut epochs_run = 0;
    let mut adam = Adam::new(params.to_flat().len());
    let score = |r: &CheckRecord| if pack.is_some() { r.eta_max } else { r.e_valid_mean };

    for epoch in 0..=config.max_epochs {
        let (loss, grad) = loss_and_gradient(&params, &train_set, config.penalty)?;
        if !loss.is_finite() {
            return Err(Error::numerical(format!("training diverged at epoch {epoch} (loss {loss})")));
        }
        if epoch % config.check_every == 0 {
            let (eta_mean, eta_max) = match pack {
                Some(p) => p.errors(&params).unwrap_or((f64::INFINITY, f64::INFINITY)),
                None => (f64::NAN, f64::NAN),
            };
            let rec = CheckRecord {
                epoch,
                loss,
                e_train_mean: mean_elastic_error(&params, &train_set)?,
                e_valid_mean: mean_elastic_error(&params, &valid_set)?,
                eta_mean,
                eta_max,
            };
            log::debug!(
                "epoch {epoch}: loss {loss:.5} e_train {:.4} e_valid {:.4} eta_mean {:.4} eta_max {:.4}",
                rec.e_train_mean,
                rec.e_valid_mean,
                rec.eta_mean,
                rec.eta_max
            );
            history.push(rec.clone());
            let improved = match &best {
                None => true,
                Some((_, b)) => score(&rec) < score(b),
            };
            if improved {
                best = Some((params.clone(), rec));
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
        }
        if epoch == config.max_epochs {
            break;
        }
        let lr = config.learning_rate * 0.5f64.powi((epoch / config.halving_period) as i32);
        match config.optimizer {
            Optimizer::GradientDescent => params.axpy(-lr, &grad),
            Optimizer::Adam => {
                let mut flat = params.to_flat();
                adam.step(&mut flat, &grad.to_flat(), lr);
                params = params.from_flat(&flat)?;
            }
        }
        epochs_run = epoch + 1;
    }
    let (best_params, best_rec) = best.expect("at least one check recorded");
    Ok((best_params, TrainReport { best: best_rec, epochs_run, history, train_indices: train_idx, valid_indices: valid_idx }))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
            x[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn push_vecs(s: &mut String, label: &str, v: &[nalgebra::Vector3<f64>]) {
    let _ = writeln!(s, "{label} {}", v.len());
    for x in v {
        let _ = writeln!(s, "{:e} {:e} {:e}", x[0], x[1], x[2]);
    }
}

/// Text serialization of trained parameters.
pub fn write_model(params: &DmnParams) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MODEL_MAGIC}");
    let _ = writeln!(s, "depth {}", params.depth);
    let _ = writeln!(s, "f_range {:e} {:e}", params.f_range[0], params.f_range[1]);
    let _ = writeln!(s, "a_range {:e} {:e}", params.a_range[0], params.a_range[1]);
    push_vecs(&mut s, "dir0", &params.dir0);
    push_vecs(&mut s, "dir1", &params.dir1);
    let _ = writeln!(s, "v {}", params.v.len());
    for x in &params.v {
        let _ = writeln!(s, "{x:e}");
    }
    push_vecs(&mut s, "euler0", &params.euler0);
    push_vecs(&mut s, "euler1", &params.euler1);
    s
}

pub fn read_model(text: &str) -> Result<DmnParams> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::format(format!("model truncated before {what}")));
    if next("magic")?.trim() != MODEL_MAGIC {
        return Err(Error::format("not a network model file (bad magic line)"));
    }
    let nums = |line: &str, key: &str, count: usize| -> Result<Vec<f64>> {
        let mut it = line.split_whitespace();
        if it.next() != Some(key) {
            return Err(Error::format(format!("expected '{key}' record, found '{line}'")));
        }
        let v: Vec<f64> = it.map(|t| t.parse::<f64>().map_err(|e| Error::format(format!("{key}: {e}")))).collect::<Result<_>>()?;
        if v.len() != count {
            return Err(Error::format(format!("{key}: expected {count} values")));
        }
        Ok(v)
    };
    let depth = nums(next("depth")?, "depth", 1)?[0];
    if !((1.0..=12.0).contains(&depth) && depth.fract() == 0.0) {
        return Err(Error::format(format!("invalid depth {depth}")));
    }
    let mut p = DmnParams::zeros(depth as usize);
    let fr = nums(next("f_range")?, "f_range", 2)?;
    let ar = nums(next("a_range")?, "a_range", 2)?;
    p.f_range = [fr[0], fr[1]];
    p.a_range = [ar[0], ar[1]];
    let parse_row = |line: &str, n: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = line.split_whitespace().map(|t| t.parse::<f64>().map_err(|e| Error::format(e.to_string()))).collect::<Result<_>>()?;
        if v.len() != n {
            return Err(Error::format(format!("expected {n} values per row, found {}", v.len())));
        }
        Ok(v)
    };
    let nn = p.n_nodes();
    let nl = p.n_leaves();
    for (key, count) in [("dir0", nn), ("dir1", nn), ("v", nl), ("euler0", nl), ("euler1", nl)] {
        nums(next(key)?, key, 1).and_then(|c| if c[0] as usize == count { Ok(()) } else { Err(Error::format(format!("{key}: expected {count} rows"))) })?;
        for i in 0..count {
            let line = next(key)?;
            match key {
                "v" => p.v[i] = parse_row(line, 1)?[0],
                _ => {
                    let r = parse_row(line, 3)?;
                    let x = nalgebra::Vector3::new(r[0], r[1], r[2]);
                    match key {
                        "dir0" => p.dir0[i] = x,
                        "dir1" => p.dir1[i] = x,
                        "euler0" => p.euler0[i] = x,
                        _ => p.euler1[i] = x,
                    }
                }
            }
        }
    }
    p.validate()?;
    Ok(p)
}

/// Effective stiffness predictions for every sample.
pub fn predict_all(params: &DmnParams, samples: &[TrainingSample]) -> Result<Vec<SymTensor4>> {
    samples.par_iter().map(|s| Network::new(params, s.f, s.a)?.stiffness(&s.c1, &s.c2)).collect()
}

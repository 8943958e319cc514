//! Linear and nonlinear error measures.

use crate::error::{Error, Result};
use crate::tensor::{SymTensor2, SymTensor4};

fn l1_4(c: &SymTensor4) -> f64 {
    c.iter().map(|x| x.abs()).sum()
}

fn l1_2(s: &SymTensor2) -> f64 {
    s.iter().map(|x| x.abs()).sum()
}

/// `‖C − C̄‖₁ / ‖C̄‖₁` (entrywise over the Mandel matrix).
pub fn elastic_error(predicted: &SymTensor4, target: &SymTensor4) -> f64 {
    l1_4(&(predicted - target)) / l1_4(target)
}

/// Per-sample `η_s(t) = ‖σ̄(t) − σ̄_ref(t)‖₁ / max_t ‖σ̄_ref(t)‖₁`.
pub fn curve_errors(predicted: &[SymTensor2], reference: &[SymTensor2]) -> Result<Vec<f64>> {
    if predicted.len() != reference.len() || reference.is_empty() {
        return Err(Error::invalid("curves must share a non-empty time sampling"));
    }
    let scale = reference.iter().map(l1_2).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(Error::invalid("reference curve is identically zero"));
    }
    Ok(predicted.iter().zip(reference).map(|(p, r)| l1_2(&(p - r)) / scale).collect())
}

/// `(η_mean, η_max)`: the largest time-averaged and the largest pointwise
/// error over all samples.
pub fn error_metrics(predicted: &[Vec<SymTensor2>], reference: &[Vec<SymTensor2>]) -> Result<(f64, f64)> {
    if predicted.len() != reference.len() || reference.is_empty() {
        return Err(Error::invalid("prediction and reference sample counts differ"));
    }
    let mut eta_mean = 0.0_f64;
    let mut eta_max = 0.0_f64;
    for (p, r) in predicted.iter().zip(reference) {
        let e = curve_errors(p, r)?;
        eta_mean = eta_mean.max(e.iter().sum::<f64>() / e.len() as f64);
        eta_max = eta_max.max(e.iter().copied().fold(0.0, f64::max));
    }
    Ok((eta_mean, eta_max))
}

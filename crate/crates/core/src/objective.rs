use crate::error::{EsaError, Result};
use crate::raster::{LabelMap, ProbabilityMap, IGNORE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegIndicator {
    Above,
    Below,
}

impl std::str::FromStr for NegIndicator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "above" => Ok(NegIndicator::Above),
            "below" => Ok(NegIndicator::Below),
            other => Err(format!("unknown negative indicator '{other}'")),
        }
    }
}

impl std::fmt::Display for NegIndicator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NegIndicator::Above => "above",
            NegIndicator::Below => "below",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub alpha: f64,
    pub tau: f64,
    pub negative_indicator: NegIndicator,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams { alpha: 1.0, tau: 0.05, negative_indicator: NegIndicator::Above }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(EsaError::config("loss.alpha", "must be nonnegative".to_string()));
        }
        if !self.tau.is_finite() || self.tau <= 0.0 || self.tau >= 1.0 {
            return Err(EsaError::config("loss.tau", "must be in (0,1)".to_string()));
        }
        Ok(())
    }
}

/// Loss components and gradients with respect to the probability tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub sup_source: f64,
    pub sup_target: f64,
    pub neg: f64,
    pub grad_source: Vec<f64>,
    pub grad_target: Vec<f64>,
}

/// Mean categorical cross-entropy −ln P(true class) over non-IGNORE pixels,
/// with gradient w.r.t. P. No counted pixels means zero loss and gradient.
pub fn ce_loss(p: &ProbabilityMap, y: &LabelMap) -> Result<(f64, Vec<f64>)> {
    if (p.height, p.width) != (y.height, y.width) {
        return Err(EsaError::invariant("probability and label dimensions differ".to_string()));
    }
    let c = p.channels;
    let counted: Vec<usize> = (0..p.height * p.width).filter(|&px| y.data[px] != IGNORE).collect();
    let mut grad = vec![0.0f64; p.data.len()];
    if counted.is_empty() {
        return Ok((0.0, grad));
    }
    for &px in &counted {
        if y.data[px] as usize >= c {
            return Err(EsaError::invariant(format!(
                "label {} at pixel ({}, {}) exceeds {} channels",
                y.data[px],
                px / p.width,
                px % p.width,
                c
            )));
        }
    }
    let n = counted.len() as f64;
    let mut loss = 0.0;
    for &px in &counted {
        let idx = px * c + y.data[px] as usize;
        loss -= p.data[idx].ln();
        grad[idx] = -1.0 / (n * p.data[idx]);
    }
    Ok((loss / n, grad))
}

/// Negative-learning loss −mean ln(1−P) over entries selected by the
/// indicator (P > tau, or P < tau in `below` mode), with gradient w.r.t. P.
/// An empty indicator set means zero loss and gradient.
pub fn negative_loss(p: &ProbabilityMap, params: &LossParams) -> (f64, Vec<f64>) {
    let fires = |v: f64| match params.negative_indicator {
        NegIndicator::Above => v > params.tau,
        NegIndicator::Below => v < params.tau,
    };
    let count = p.data.iter().filter(|&&v| fires(v)).count();
    let mut grad = vec![0.0f64; p.data.len()];
    if count == 0 {
        return (0.0, grad);
    }
    let n = count as f64;
    let mut loss = 0.0;
    for (i, &v) in p.data.iter().enumerate() {
        if fires(v) {
            loss -= (1.0 - v).ln();
            grad[i] = 1.0 / (n * (1.0 - v));
        }
    }
    (loss / n, grad)
}

/// Overall objective: source CE + target CE over annotated pixels
/// + alpha · negative loss on target predictions.
pub fn total_loss(
    p_source: &ProbabilityMap,
    y_source: &LabelMap,
    p_target: &ProbabilityMap,
    y_target: &LabelMap,
    params: &LossParams,
) -> Result<LossValue> {
    let (sup_source, grad_source) = ce_loss(p_source, y_source)?;
    let (sup_target, mut grad_target) = ce_loss(p_target, y_target)?;
    let (neg, grad_neg) = negative_loss(p_target, params);
    for (g, &n) in grad_target.iter_mut().zip(&grad_neg) {
        *g += params.alpha * n;
    }
    Ok(LossValue {
        total: sup_source + sup_target + params.alpha * neg,
        sup_source,
        sup_target,
        neg,
        grad_source,
        grad_target,
    })
}

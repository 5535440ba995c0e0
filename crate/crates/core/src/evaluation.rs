use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EsaError, Result};
use crate::oracle::click_reduction;
use crate::raster::{LabelMap, ProbabilityMap, IGNORE};

/// Square class-confusion counts; rows index ground truth, columns prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn at(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    /// Tallies one image pair, skipping pixels whose ground truth is IGNORE.
    /// A prediction of IGNORE or an out-of-range class at a counted pixel is
    /// rejected.
    pub fn accumulate(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<()> {
        if (gt.height, gt.width) != (pred.height, pred.width) {
            return Err(EsaError::invariant(
                "prediction and ground truth dimensions differ".to_string(),
            ));
        }
        for px in 0..gt.data.len() {
            let g = gt.data[px];
            if g == IGNORE {
                continue;
            }
            let p = pred.data[px];
            if p == IGNORE || p as usize >= self.classes || g as usize >= self.classes {
                return Err(EsaError::invariant(format!(
                    "class pair ({g}, {p}) at pixel ({}, {}) outside {} classes",
                    px / gt.width,
                    px % gt.width,
                    self.classes
                )));
            }
            self.counts[g as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }
}

pub fn confusion(gt: &LabelMap, pred: &LabelMap, classes: usize) -> Result<ConfusionMatrix> {
    let mut m = ConfusionMatrix::new(classes);
    m.accumulate(gt, pred)?;
    Ok(m)
}

/// Per-class IoU (None when the class never appears in truth or prediction)
/// and their mean over present classes.
pub fn miou(m: &ConfusionMatrix) -> Result<(Vec<Option<f64>>, f64)> {
    let c = m.classes;
    let mut per_class = Vec::with_capacity(c);
    for k in 0..c {
        let inter = m.at(k, k);
        let row: u64 = (0..c).map(|j| m.at(k, j)).sum();
        let col: u64 = (0..c).map(|i| m.at(i, k)).sum();
        let union = row + col - inter;
        per_class.push(if union == 0 { None } else { Some(inter as f64 / union as f64) });
    }
    let present: Vec<f64> = per_class.iter().copied().flatten().collect();
    if present.is_empty() {
        return Err(EsaError::invariant("no class present in either labeling".to_string()));
    }
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    Ok((per_class, mean))
}

/// Hard labels from a probability map; ties go to the lowest class index.
pub fn argmax_labels(p: &ProbabilityMap) -> Result<LabelMap> {
    let mut data = Vec::with_capacity(p.height * p.width);
    for px in 0..p.height * p.width {
        let row = &p.data[px * p.channels..(px + 1) * p.channels];
        let mut best = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        data.push(best as u8);
    }
    LabelMap::new(p.height, p.width, p.channels, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: String,
    pub total_clicks: usize,
    pub mean_clicks_per_image: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub rounds: usize,
    pub seed: u64,
    pub config: serde_json::Value,
    pub timestamp: u64,
}

impl RunReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| EsaError::invariant(format!("report serialization failed: {e}")))?;
        std::fs::write(path, text).map_err(|e| EsaError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| EsaError::io(path, e))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| EsaError::format(path, 0, format!("bad report: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub miou_delta: f64,
    pub click_reduction: f64,
}

/// Quality and labeling-cost deltas of run `a` relative to baseline `b`.
pub fn compare_runs(a: &RunReport, b: &RunReport) -> Result<Comparison> {
    if a.per_class_iou.len() != b.per_class_iou.len() {
        return Err(EsaError::config(
            "report",
            format!(
                "class counts differ: {} vs {}",
                a.per_class_iou.len(),
                b.per_class_iou.len()
            ),
        ));
    }
    Ok(Comparison {
        miou_delta: a.miou - b.miou,
        click_reduction: click_reduction(a.total_clicks as f64, b.total_clicks as f64)?,
    })
}

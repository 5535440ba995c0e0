use std::collections::BTreeMap;

use crate::error::{EsaError, Result};
use crate::raster::{LabelMap, RegionMap, IGNORE};
use crate::selection::{RegionSpace, SelectionState, StrategyKind};

/// Clicks spent per image and round for one strategy; merging across workers
/// sums elementwise and is order-independent.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickLedger {
    pub strategy: StrategyKind,
    pub per_image: BTreeMap<u64, Vec<usize>>,
}

impl ClickLedger {
    pub fn new(strategy: StrategyKind) -> Self {
        ClickLedger { strategy, per_image: BTreeMap::new() }
    }

    pub fn record(&mut self, image: u64, clicks_by_round: &[usize]) {
        let entry = self.per_image.entry(image).or_default();
        if entry.len() < clicks_by_round.len() {
            entry.resize(clicks_by_round.len(), 0);
        }
        for (e, &c) in entry.iter_mut().zip(clicks_by_round) {
            *e += c;
        }
    }

    pub fn merge(&mut self, other: &ClickLedger) -> Result<()> {
        if self.strategy != other.strategy {
            return Err(EsaError::invariant(format!(
                "cannot merge ledgers for strategies {} and {}",
                self.strategy, other.strategy
            )));
        }
        for (&img, clicks) in &other.per_image {
            self.record(img, clicks);
        }
        Ok(())
    }

    pub fn total_clicks(&self) -> usize {
        self.per_image.values().flat_map(|v| v.iter()).sum()
    }

    pub fn mean_clicks_per_image(&self) -> f64 {
        if self.per_image.is_empty() {
            return 0.0;
        }
        self.total_clicks() as f64 / self.per_image.len() as f64
    }
}

/// Majority ground-truth class among the region's non-IGNORE pixels, ties to
/// the smallest class id; IGNORE when the whole region is unlabeled.
pub fn oracle_label_region(gt: &LabelMap, regions: &RegionMap, region: u32) -> Result<u8> {
    if region as usize >= regions.count {
        return Err(EsaError::invariant(format!(
            "region id {region} out of range for count {}",
            regions.count
        )));
    }
    if (gt.height, gt.width) != (regions.height, regions.width) {
        return Err(EsaError::invariant("ground truth does not match region map".to_string()));
    }
    let mut hist = vec![0usize; gt.classes];
    for (p, &r) in regions.assignment.iter().enumerate() {
        if r == region && gt.data[p] != IGNORE {
            hist[gt.data[p] as usize] += 1;
        }
    }
    let mut best: Option<usize> = None;
    for (c, &n) in hist.iter().enumerate() {
        if n > 0 && best.is_none_or(|b| n > hist[b]) {
            best = Some(c);
        }
    }
    Ok(best.map_or(IGNORE, |c| c as u8))
}

/// Fills every still-unlabeled pixel of each selected region with the oracle
/// answer. Pixels annotated in an earlier round are never overwritten. The
/// ids must be pending (selected and not yet annotated). Returns the number
/// of newly labeled pixels.
pub fn annotate(
    state: &mut SelectionState,
    gt: &LabelMap,
    regions: &RegionMap,
    space: RegionSpace,
    ids: &[u32],
) -> Result<usize> {
    if (state.annotated.height, state.annotated.width) != (gt.height, gt.width) {
        return Err(EsaError::invariant("annotation state does not match ground truth".to_string()));
    }
    let mut newly = 0usize;
    for &id in ids {
        if !state.chosen.contains(&(space, id)) {
            return Err(EsaError::invariant(format!(
                "annotating region {id} in {space:?} that was never selected"
            )));
        }
        if !state.pending.remove(&(space, id)) {
            return Err(EsaError::invariant(format!(
                "region {id} in {space:?} annotated twice"
            )));
        }
        let label = oracle_label_region(gt, regions, id)?;
        if label == IGNORE {
            continue;
        }
        for (p, &r) in regions.assignment.iter().enumerate() {
            if r == id && state.annotated.data[p] == IGNORE {
                state.annotated.data[p] = label;
                newly += 1;
            }
        }
    }
    Ok(newly)
}

/// Fractional click saving of run a relative to run b: 1 − clicks_a/clicks_b.
pub fn click_reduction(clicks_a: f64, clicks_b: f64) -> Result<f64> {
    if !clicks_b.is_finite() || clicks_b <= 0.0 {
        return Err(EsaError::invariant("click_reduction requires a positive baseline count".to_string()));
    }
    Ok(1.0 - clicks_a / clicks_b)
}

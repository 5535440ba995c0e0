use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cc::label_components;
use crate::error::{EsaError, Result};
use crate::raster::{read_region_map, LabelMap, RegionMap, IGNORE};

/// Class-agnostic entity regions with detector confidence scores. Region
/// `background_id` (when present) covers pixels belonging to no entity.
#[derive(Debug, Clone, PartialEq)]
pub struct EntitySet {
    pub regions: RegionMap,
    pub background_id: Option<u32>,
}

impl EntitySet {
    pub fn entity_count(&self) -> usize {
        self.regions.count - self.background_id.map_or(0, |_| 1)
    }

    pub fn score(&self, id: u32) -> f64 {
        self.regions.scores.as_ref().unwrap()[id as usize] as f64
    }
}

/// Reads an entity set from an ESAR file with scores. Region 0 is reserved as
/// background.
pub fn load_entities(path: impl AsRef<Path>) -> Result<EntitySet> {
    let path = path.as_ref();
    let regions = read_region_map(path)?;
    if regions.scores.is_none() {
        return Err(EsaError::format(path, 16, "missing scores section"));
    }
    Ok(EntitySet { regions, background_id: Some(0) })
}

/// Entity ids with score strictly greater than the threshold, ascending.
/// The background region is never returned.
pub fn filter_entities(set: &EntitySet, threshold: f64) -> Vec<u32> {
    let scores = set.regions.scores.as_ref().expect("entity set carries scores");
    (0..set.regions.count as u32)
        .filter(|&id| Some(id) != set.background_id && scores[id as usize] as f64 > threshold)
        .collect()
}

/// Score seed for the entity set of one image, separated from the selection
/// seed derived from the same base.
pub fn entity_score_seed(seed: u64, image: u64) -> u64 {
    crate::selection::mix_seed(crate::selection::mix_seed(seed, 7), image)
}

/// Builds entities from ground truth: each 4-connected component of each
/// non-background class becomes one entity with a score drawn from
/// `score_seed` in [0.3, 1.0]. Pixels of class 0 or IGNORE form the
/// background region.
pub fn synth_entities(labels: &LabelMap, score_seed: u64) -> Result<EntitySet> {
    let (h, w) = (labels.height, labels.width);
    let (comp, ncomp) = label_components(&labels.data, h, w);
    let mut comp_first = vec![usize::MAX; ncomp];
    for (p, &c) in comp.iter().enumerate() {
        if comp_first[c as usize] == usize::MAX {
            comp_first[c as usize] = p;
        }
    }
    let is_background = |c: usize| {
        let v = labels.data[comp_first[c]];
        v == 0 || v == IGNORE
    };
    let has_background = (0..ncomp).any(is_background);
    let mut region_of = vec![u32::MAX; ncomp];
    let mut next = if has_background { 1u32 } else { 0u32 };
    for (c, slot) in region_of.iter_mut().enumerate() {
        if is_background(c) {
            *slot = 0;
        } else {
            *slot = next;
            next += 1;
        }
    }
    let count = next as usize;
    let assignment: Vec<u32> = comp.iter().map(|&c| region_of[c as usize]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(score_seed);
    let background_id = has_background.then_some(0);
    let n_entities = count - background_id.map_or(0, |_| 1);
    let mut scores = vec![0.0f32; count];
    let start = if has_background { 1 } else { 0 };
    for s in &mut scores[start..start + n_entities] {
        *s = rng.random_range(0.3..=1.0f64) as f32;
    }
    let regions = RegionMap::new(h, w, count, assignment, Some(scores))?;
    Ok(EntitySet { regions, background_id })
}

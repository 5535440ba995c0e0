use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::acquisition::{combined_score, pixel_entropy, sconf_score, ScoreMode};
use crate::entity::{filter_entities, EntitySet};
use crate::error::{EsaError, Result};
use crate::raster::{LabelMap, ProbabilityMap, RegionMap, IGNORE};
use crate::superpixel::grid_regions;

/// Which partition a selected region id refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RegionSpace {
    Pixels,
    Grid,
    Superpixels,
    Entities,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    Pa,
    Ra,
    Sa,
    Ea,
    Esa,
    Rand,
    Ent,
    Sconf,
}

impl std::str::FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "pa" => Ok(StrategyKind::Pa),
            "ra" => Ok(StrategyKind::Ra),
            "sa" => Ok(StrategyKind::Sa),
            "ea" => Ok(StrategyKind::Ea),
            "esa" => Ok(StrategyKind::Esa),
            "rand" => Ok(StrategyKind::Rand),
            "ent" => Ok(StrategyKind::Ent),
            "sconf" => Ok(StrategyKind::Sconf),
            other => Err(format!("unknown strategy '{other}'")),
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StrategyKind::Pa => "pa",
            StrategyKind::Ra => "ra",
            StrategyKind::Sa => "sa",
            StrategyKind::Ea => "ea",
            StrategyKind::Esa => "esa",
            StrategyKind::Rand => "rand",
            StrategyKind::Ent => "ent",
            StrategyKind::Sconf => "sconf",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub cell: usize,
    pub entity_threshold: f64,
    pub overlap_max: f64,
    pub mode: ScoreMode,
    /// Cap on the ESA entity phase; 0 means take every filtered entity.
    pub entity_budget: usize,
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy {
            kind: StrategyKind::Sa,
            cell: 3,
            entity_threshold: 0.5,
            overlap_max: 0.5,
            mode: ScoreMode::Uncertainty,
            entity_budget: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub rounds: usize,
    pub per_round: usize,
}

impl Budget {
    pub fn total(&self) -> usize {
        self.rounds * self.per_round
    }
}

/// Per-image annotation state across selection rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionState {
    pub annotated: LabelMap,
    /// Pixels covered by any chosen region, set at selection time.
    pub claimed: Vec<bool>,
    pub chosen: BTreeSet<(RegionSpace, u32)>,
    /// Chosen but not yet passed to the oracle.
    pub pending: BTreeSet<(RegionSpace, u32)>,
    pub clicks_by_round: Vec<usize>,
}

impl SelectionState {
    pub fn new(height: usize, width: usize, classes: usize) -> Result<Self> {
        Ok(SelectionState {
            annotated: LabelMap::filled(height, width, classes, IGNORE)?,
            claimed: vec![false; height * width],
            chosen: BTreeSet::new(),
            pending: BTreeSet::new(),
            clicks_by_round: Vec::new(),
        })
    }

    pub fn total_clicks(&self) -> usize {
        self.clicks_by_round.iter().sum()
    }
}

/// One group of selections, all in the same region space.
#[derive(Debug, Clone, PartialEq)]
pub struct Selected {
    pub space: RegionSpace,
    pub ids: Vec<u32>,
}

pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// The k highest-scoring non-excluded ids, descending score, ties broken by
/// ascending id. Returns fewer than k when candidates run out.
pub fn select_topk(scores: &[f64], excluded: &BTreeSet<u32>, k: usize) -> Vec<u32> {
    let mut order: Vec<u32> = (0..scores.len() as u32).filter(|id| !excluded.contains(id)).collect();
    order.sort_by(|&a, &b| scores[b as usize].total_cmp(&scores[a as usize]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

fn commit(
    state: &mut SelectionState,
    space: RegionSpace,
    regions: &RegionMap,
    ids: &[u32],
    round: usize,
) -> Result<()> {
    while state.clicks_by_round.len() <= round {
        state.clicks_by_round.push(0);
    }
    let mut idset = BTreeSet::new();
    for &id in ids {
        if !state.chosen.insert((space, id)) {
            return Err(EsaError::invariant(format!(
                "region {id} in {space:?} selected twice"
            )));
        }
        state.pending.insert((space, id));
        idset.insert(id);
    }
    state.clicks_by_round[round] += ids.len();
    if !idset.is_empty() {
        for (px, r) in regions.assignment.iter().enumerate() {
            if idset.contains(r) {
                state.claimed[px] = true;
            }
        }
    }
    Ok(())
}

fn chosen_in(state: &SelectionState, space: RegionSpace) -> BTreeSet<u32> {
    state
        .chosen
        .iter()
        .filter(|(s, _)| *s == space)
        .map(|&(_, id)| id)
        .collect()
}

/// Runs one selection round for the strategy, charging one click per selected
/// region. ESA yields two groups (entities in round 0, then superpixels);
/// every other strategy yields one.
#[allow(clippy::too_many_arguments)]
pub fn select_round(
    strategy: &Strategy,
    p: &ProbabilityMap,
    superpixels: Option<&RegionMap>,
    entities: Option<&EntitySet>,
    state: &mut SelectionState,
    b: usize,
    round: usize,
    seed: u64,
) -> Result<Vec<Selected>> {
    let (h, w) = (p.height, p.width);
    if (state.annotated.height, state.annotated.width) != (h, w) {
        return Err(EsaError::invariant("selection state does not match probability map".to_string()));
    }
    let need_superpixels = || {
        superpixels.ok_or_else(|| {
            EsaError::config("select.strategy", format!("{} requires superpixels", strategy.kind))
        })
    };
    let need_entities = || {
        entities.ok_or_else(|| {
            EsaError::config("select.strategy", format!("{} requires an entity set", strategy.kind))
        })
    };

    let mut groups = Vec::new();
    match strategy.kind {
        StrategyKind::Pa | StrategyKind::Ent | StrategyKind::Sconf => {
            let scores = match strategy.kind {
                StrategyKind::Sconf => sconf_score(p),
                _ => pixel_entropy(p),
            };
            let regions = grid_regions(h, w, 1)?;
            let excluded = chosen_in(state, RegionSpace::Pixels);
            let ids = select_topk(&scores.values, &excluded, b);
            commit(state, RegionSpace::Pixels, &regions, &ids, round)?;
            groups.push(Selected { space: RegionSpace::Pixels, ids });
        }
        StrategyKind::Rand => {
            let regions = grid_regions(h, w, 1)?;
            let chosen = chosen_in(state, RegionSpace::Pixels);
            let candidates: Vec<u32> = (0..(h * w) as u32)
                .filter(|id| !chosen.contains(id) && !state.claimed[*id as usize])
                .collect();
            let take = b.min(candidates.len());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(round as u64);
            let ids: Vec<u32> = rand::seq::index::sample(&mut rng, candidates.len(), take)
                .iter()
                .map(|i| candidates[i])
                .collect();
            commit(state, RegionSpace::Pixels, &regions, &ids, round)?;
            groups.push(Selected { space: RegionSpace::Pixels, ids });
        }
        StrategyKind::Ra => {
            let grid = grid_regions(h, w, strategy.cell)?;
            let scores = combined_score(p, &grid, strategy.mode)?;
            let excluded = chosen_in(state, RegionSpace::Grid);
            let ids = select_topk(&scores, &excluded, b);
            commit(state, RegionSpace::Grid, &grid, &ids, round)?;
            groups.push(Selected { space: RegionSpace::Grid, ids });
        }
        StrategyKind::Sa => {
            let sp = need_superpixels()?;
            let scores = combined_score(p, sp, strategy.mode)?;
            let excluded = chosen_in(state, RegionSpace::Superpixels);
            let ids = select_topk(&scores, &excluded, b);
            commit(state, RegionSpace::Superpixels, sp, &ids, round)?;
            groups.push(Selected { space: RegionSpace::Superpixels, ids });
        }
        StrategyKind::Ea => {
            let set = need_entities()?;
            let ids = entity_phase(set, strategy.entity_threshold, b, state)?;
            commit(state, RegionSpace::Entities, &set.regions, &ids, round)?;
            groups.push(Selected { space: RegionSpace::Entities, ids });
        }
        StrategyKind::Esa => {
            let sp = need_superpixels()?;
            let set = need_entities()?;
            if round == 0 {
                let ids = entity_phase(set, strategy.entity_threshold, strategy.entity_budget, state)?;
                commit(state, RegionSpace::Entities, &set.regions, &ids, round)?;
                groups.push(Selected { space: RegionSpace::Entities, ids });
            }
            let scores = combined_score(p, sp, strategy.mode)?;
            let mut excluded = chosen_in(state, RegionSpace::Superpixels);
            let areas = sp.areas();
            let mut claimed_in = vec![0usize; sp.count];
            for (px, &r) in sp.assignment.iter().enumerate() {
                if state.claimed[px] {
                    claimed_in[r as usize] += 1;
                }
            }
            for r in 0..sp.count {
                if claimed_in[r] as f64 > strategy.overlap_max * areas[r] as f64 {
                    excluded.insert(r as u32);
                }
            }
            let ids = select_topk(&scores, &excluded, b);
            commit(state, RegionSpace::Superpixels, sp, &ids, round)?;
            groups.push(Selected { space: RegionSpace::Superpixels, ids });
        }
    }
    Ok(groups)
}

fn entity_phase(
    set: &EntitySet,
    threshold: f64,
    cap: usize,
    state: &SelectionState,
) -> Result<Vec<u32>> {
    let chosen = chosen_in(state, RegionSpace::Entities);
    let mut ids: Vec<u32> = filter_entities(set, threshold)
        .into_iter()
        .filter(|id| !chosen.contains(id))
        .collect();
    let scores = set.regions.scores.as_ref().expect("entity set carries scores");
    ids.sort_by(|&a, &b| {
        (scores[b as usize] as f64)
            .total_cmp(&(scores[a as usize] as f64))
            .then(a.cmp(&b))
    });
    if cap > 0 {
        ids.truncate(cap);
    }
    Ok(ids)
}

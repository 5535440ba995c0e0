use std::path::Path;

use crate::entity::EntitySet;
use crate::error::{EsaError, Result};
use crate::evaluation::{argmax_labels, miou, ConfusionMatrix};
use crate::objective::{ce_loss, negative_loss, LossParams};
use crate::oracle::{annotate, ClickLedger};
use crate::raster::{Cursor, Image, LabelMap, ProbabilityMap, RegionMap, IGNORE};
use crate::selection::{mix_seed, select_round, RegionSpace, SelectionState, Strategy, StrategyKind};
use crate::superpixel::grid_regions;

pub const FEATURE_DIM: usize = 6;

const ESAW_MAGIC: &[u8; 4] = b"ESAW";
const ESAW_VERSION: u32 = 1;

/// Per-pixel feature vector: normalized color, normalized position, bias.
pub(crate) fn features(img: &Image, y: usize, x: usize) -> [f64; FEATURE_DIM] {
    let [r, g, b] = img.pixel(y, x);
    [
        r as f64 / 255.0,
        g as f64 / 255.0,
        b as f64 / 255.0,
        x as f64 / img.width as f64,
        y as f64 / img.height as f64,
        1.0,
    ]
}

/// Linear softmax classifier over per-pixel features; weights are stored
/// row-major, one row of FEATURE_DIM coefficients per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub classes: usize,
    pub weights: Vec<f64>,
}

impl ModelParams {
    pub fn new(classes: usize) -> Result<Self> {
        if !(2..=254).contains(&classes) {
            return Err(EsaError::config("classes", "must be between 2 and 254".to_string()));
        }
        Ok(ModelParams { classes, weights: vec![0.0; classes * FEATURE_DIM] })
    }

    pub fn predict(&self, img: &Image) -> Result<ProbabilityMap> {
        let c = self.classes;
        let mut data = Vec::with_capacity(img.height * img.width * c);
        let mut logits = vec![0.0f64; c];
        for y in 0..img.height {
            for x in 0..img.width {
                let phi = features(img, y, x);
                for (k, z) in logits.iter_mut().enumerate() {
                    let row = &self.weights[k * FEATURE_DIM..(k + 1) * FEATURE_DIM];
                    *z = row.iter().zip(&phi).map(|(w, f)| w * f).sum();
                }
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                let start = data.len();
                for &z in &logits {
                    let e = (z - m).exp();
                    denom += e;
                    data.push(e);
                }
                for v in &mut data[start..] {
                    *v /= denom;
                }
            }
        }
        ProbabilityMap::new(img.height, img.width, c, data)
    }
}

/// Momentum SGD over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(momentum: f64, len: usize) -> Self {
        Sgd { momentum, velocity: vec![0.0; len] }
    }

    pub fn step(&mut self, weights: &mut [f64], grad: &[f64], lr: f64) {
        for i in 0..weights.len() {
            self.velocity[i] = self.momentum * self.velocity[i] + grad[i];
            weights[i] -= lr * self.velocity[i];
        }
    }
}

/// Polynomially decayed learning rate, full at iteration 0.
pub fn poly_lr(lr0: f64, iter: usize, total: usize, power: f64) -> f64 {
    lr0 * (1.0 - iter as f64 / total.max(1) as f64).powf(power)
}

fn accumulate_weight_grad(
    grad_w: &mut [f64],
    img: &Image,
    p: &ProbabilityMap,
    grad_p: &[f64],
    scale: f64,
) {
    let c = p.channels;
    for y in 0..img.height {
        for x in 0..img.width {
            let px = y * img.width + x;
            let row = &p.data[px * c..(px + 1) * c];
            let g = &grad_p[px * c..(px + 1) * c];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let dot: f64 = g.iter().zip(row).map(|(a, b)| a * b).sum();
            let phi = features(img, y, x);
            for k in 0..c {
                let dz = row[k] * (g[k] - dot) * scale;
                if dz == 0.0 {
                    continue;
                }
                for (j, &f) in phi.iter().enumerate() {
                    grad_w[k * FEATURE_DIM + j] += dz * f;
                }
            }
        }
    }
}

/// Mean loss over the batch and its gradient with respect to the weights.
/// Sources contribute cross-entropy; targets add the negative term.
pub fn batch_loss_and_grad(
    model: &ModelParams,
    source: &[(&Image, &LabelMap)],
    target: &[(&Image, &LabelMap)],
    params: &LossParams,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0f64; model.weights.len()];
    let mut loss = 0.0;
    if !source.is_empty() {
        let inv = 1.0 / source.len() as f64;
        for (img, y) in source {
            let p = model.predict(img)?;
            let (l, gp) = ce_loss(&p, y)?;
            loss += inv * l;
            accumulate_weight_grad(&mut grad, img, &p, &gp, inv);
        }
    }
    if !target.is_empty() {
        let inv = 1.0 / target.len() as f64;
        for (img, y) in target {
            let p = model.predict(img)?;
            let (l, mut gp) = ce_loss(&p, y)?;
            let (ln, gn) = negative_loss(&p, params);
            loss += inv * (l + params.alpha * ln);
            for (a, &b) in gp.iter_mut().zip(&gn) {
                *a += params.alpha * b;
            }
            accumulate_weight_grad(&mut grad, img, &p, &gp, inv);
        }
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(EsaError::invariant("non-finite weight gradient".to_string()));
    }
    Ok((loss, grad))
}

pub fn train_step(
    model: &mut ModelParams,
    opt: &mut Sgd,
    source: &[(&Image, &LabelMap)],
    target: &[(&Image, &LabelMap)],
    params: &LossParams,
    lr: f64,
) -> Result<f64> {
    let (loss, grad) = batch_loss_and_grad(model, source, target, params)?;
    opt.step(&mut model.weights, &grad, lr);
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub iters: usize,
    pub pretrain_iters: usize,
    pub rounds: usize,
    pub budget: usize,
    pub strategy: Strategy,
    pub loss: LossParams,
    pub lr: f64,
    pub lr_power: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub pseudo_labels: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            iters: 200,
            pretrain_iters: 60,
            rounds: 5,
            budget: 8,
            strategy: Strategy::default(),
            loss: LossParams::default(),
            lr: 0.1,
            lr_power: 0.9,
            momentum: 0.9,
            batch_size: 4,
            seed: 1,
            pseudo_labels: false,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters < self.rounds + 1 {
            return Err(EsaError::config(
                "loop.iters",
                format!("must exceed the {} selection rounds", self.rounds),
            ));
        }
        if self.batch_size < 1 {
            return Err(EsaError::config("loop.batch_size", "must be at least 1".to_string()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(EsaError::config("loop.lr", "must be positive".to_string()));
        }
        if !self.lr_power.is_finite() || self.lr_power <= 0.0 {
            return Err(EsaError::config("loop.lr_power", "must be positive".to_string()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(EsaError::config("loop.momentum", "must be in [0,1)".to_string()));
        }
        self.loss.validate()
    }
}

/// Iterations at which selection rounds fire: round k of S at ceil(k·N/(S+1)).
pub fn selection_iters(iters: usize, rounds: usize) -> Vec<usize> {
    (1..=rounds).map(|k| (k * iters).div_ceil(rounds + 1)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub iter: usize,
    pub miou: f64,
    pub total_clicks: usize,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub params: ModelParams,
    pub states: Vec<SelectionState>,
    pub ledger: ClickLedger,
    pub history: Vec<RoundMetrics>,
    pub per_class_iou: Vec<Option<f64>>,
}

impl RunOutcome {
    pub fn final_miou(&self) -> f64 {
        self.history.last().map_or(0.0, |m| m.miou)
    }

    pub fn total_clicks(&self) -> usize {
        self.states.iter().map(|s| s.total_clicks()).sum()
    }
}

/// Mean IoU of the model over labeled image pairs.
pub fn eval_model(
    model: &ModelParams,
    pairs: &[(Image, LabelMap)],
) -> Result<(Vec<Option<f64>>, f64)> {
    let mut m = ConfusionMatrix::new(model.classes);
    for (img, gt) in pairs {
        let pred = argmax_labels(&model.predict(img)?)?;
        m.accumulate(gt, &pred)?;
    }
    miou(&m)
}

fn batch_indices(len: usize, iter: usize, batch: usize) -> Vec<usize> {
    let b = batch.min(len);
    (0..b).map(|j| (iter * b + j) % len).collect()
}

fn pseudo_label_map(
    p: &ProbabilityMap,
    regions: &RegionMap,
    annotated: &LabelMap,
) -> Result<LabelMap> {
    let c = p.channels;
    let mut sums = vec![0.0f64; regions.count * c];
    let mut areas = vec![0u64; regions.count];
    for px in 0..regions.assignment.len() {
        let r = regions.assignment[px] as usize;
        areas[r] += 1;
        for k in 0..c {
            sums[r * c + k] += p.data[px * c + k];
        }
    }
    let mut region_label = vec![0u8; regions.count];
    for r in 0..regions.count {
        let row = &sums[r * c..(r + 1) * c];
        let mut best = 0usize;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        region_label[r] = best as u8;
    }
    let mut data: Vec<u8> =
        regions.assignment.iter().map(|&r| region_label[r as usize]).collect();
    for (i, &a) in annotated.data.iter().enumerate() {
        if a != IGNORE {
            data[i] = a;
        }
    }
    LabelMap::new(p.height, p.width, annotated.classes, data)
}

/// Full adaptation run: source pretraining, joint training on source plus
/// annotated target pixels, and periodic annotation rounds driven by the
/// configured strategy. Ground-truth target labels feed only the oracle and
/// the reported metrics.
pub fn run_loop(
    cfg: &LoopConfig,
    source: &[(Image, LabelMap)],
    target: &[(Image, LabelMap)],
    superpixels: &[RegionMap],
    entities: Option<&[EntitySet]>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(EsaError::config("paths.data", "need source and target images".to_string()));
    }
    let classes = source[0].1.classes;
    for (_, y) in source.iter().chain(target) {
        if y.classes != classes {
            return Err(EsaError::invariant("inconsistent class counts across images".to_string()));
        }
    }
    let needs_superpixels =
        matches!(cfg.strategy.kind, StrategyKind::Sa | StrategyKind::Esa);
    if needs_superpixels && superpixels.len() != target.len() {
        return Err(EsaError::config(
            "select.strategy",
            format!("{} needs one superpixel map per target image", cfg.strategy.kind),
        ));
    }
    let needs_entities = matches!(cfg.strategy.kind, StrategyKind::Ea | StrategyKind::Esa);
    if needs_entities && entities.is_none_or(|e| e.len() != target.len()) {
        return Err(EsaError::config(
            "select.strategy",
            format!("{} needs one entity set per target image", cfg.strategy.kind),
        ));
    }

    let mut model = ModelParams::new(classes)?;
    let mut opt = Sgd::new(cfg.momentum, model.weights.len());
    for i in 0..cfg.pretrain_iters {
        let lr = poly_lr(cfg.lr, i, cfg.pretrain_iters, cfg.lr_power);
        let batch: Vec<(&Image, &LabelMap)> = batch_indices(source.len(), i, cfg.batch_size)
            .into_iter()
            .map(|j| (&source[j].0, &source[j].1))
            .collect();
        train_step(&mut model, &mut opt, &batch, &[], &cfg.loss, lr)?;
    }

    let mut states = target
        .iter()
        .map(|(img, _)| SelectionState::new(img.height, img.width, classes))
        .collect::<Result<Vec<_>>>()?;
    let mut pseudo: Vec<Option<LabelMap>> = vec![None; target.len()];
    let mut history = Vec::new();
    let marks = selection_iters(cfg.iters, cfg.rounds);

    let mut opt = Sgd::new(cfg.momentum, model.weights.len());
    for i in 0..cfg.iters {
        for (round, &mark) in marks.iter().enumerate() {
            if mark != i {
                continue;
            }
            for idx in 0..target.len() {
                let (img, gt) = &target[idx];
                let p = model.predict(img)?;
                let picks = select_round(
                    &cfg.strategy,
                    &p,
                    superpixels.get(idx),
                    entities.map(|e| &e[idx]),
                    &mut states[idx],
                    cfg.budget,
                    round,
                    mix_seed(cfg.seed, idx as u64),
                )?;
                for group in &picks {
                    let grid;
                    let regions = match group.space {
                        RegionSpace::Pixels => {
                            grid = grid_regions(img.height, img.width, 1)?;
                            &grid
                        }
                        RegionSpace::Grid => {
                            grid = grid_regions(img.height, img.width, cfg.strategy.cell)?;
                            &grid
                        }
                        RegionSpace::Superpixels => &superpixels[idx],
                        RegionSpace::Entities => &entities.unwrap()[idx].regions,
                    };
                    annotate(&mut states[idx], gt, regions, group.space, &group.ids)?;
                }
                if cfg.pseudo_labels {
                    let regions = match superpixels.get(idx) {
                        Some(r) => r.clone(),
                        None => grid_regions(img.height, img.width, cfg.strategy.cell)?,
                    };
                    pseudo[idx] = Some(pseudo_label_map(&p, &regions, &states[idx].annotated)?);
                }
            }
            let (_, score) = eval_model(&model, target)?;
            history.push(RoundMetrics {
                round,
                iter: i,
                miou: score,
                total_clicks: states.iter().map(|s| s.total_clicks()).sum(),
            });
        }

        let lr = poly_lr(cfg.lr, i, cfg.iters, cfg.lr_power);
        let src: Vec<(&Image, &LabelMap)> = batch_indices(source.len(), i, cfg.batch_size)
            .into_iter()
            .map(|j| (&source[j].0, &source[j].1))
            .collect();
        let tgt: Vec<(&Image, &LabelMap)> = batch_indices(target.len(), i, cfg.batch_size)
            .into_iter()
            .map(|j| {
                let labels = match (cfg.pseudo_labels, &pseudo[j]) {
                    (true, Some(m)) => m,
                    _ => &states[j].annotated,
                };
                (&target[j].0, labels)
            })
            .collect();
        train_step(&mut model, &mut opt, &src, &tgt, &cfg.loss, lr)?;
    }

    let (per_class, score) = eval_model(&model, target)?;
    history.push(RoundMetrics {
        round: cfg.rounds,
        iter: cfg.iters,
        miou: score,
        total_clicks: states.iter().map(|s| s.total_clicks()).sum(),
    });

    let mut ledger = ClickLedger::new(cfg.strategy.kind);
    for (idx, state) in states.iter().enumerate() {
        ledger.record(idx as u64, &state.clicks_by_round);
    }
    Ok(RunOutcome { params: model, states, ledger, history, per_class_iou: per_class })
}

pub fn write_checkpoint(path: &Path, model: &ModelParams) -> Result<()> {
    let mut out = Vec::with_capacity(16 + model.weights.len() * 4);
    out.extend_from_slice(ESAW_MAGIC);
    out.extend_from_slice(&ESAW_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.classes as u32).to_le_bytes());
    out.extend_from_slice(&(FEATURE_DIM as u32).to_le_bytes());
    for &w in &model.weights {
        out.extend_from_slice(&(w as f32).to_le_bytes());
    }
    crate::raster::write_file(path, &out)
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = crate::raster::read_file(path)?;
    let mut cur = Cursor::new(&bytes, path);
    cur.magic(ESAW_MAGIC)?;
    cur.version(ESAW_VERSION)?;
    let classes = cur.le_u32("class count")? as usize;
    let dim = cur.le_u32("feature dimension")? as usize;
    if !(2..=254).contains(&classes) {
        return Err(EsaError::format(path, 8, format!("class count {classes} outside [2,254]")));
    }
    if dim != FEATURE_DIM {
        return Err(EsaError::format(
            path,
            12,
            format!("feature dimension {dim}, expected {FEATURE_DIM}"),
        ));
    }
    let payload = cur.payload(classes * dim * 4, "weights")?;
    cur.finish()?;
    let weights = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok(ModelParams { classes, weights })
}

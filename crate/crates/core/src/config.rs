use std::path::Path;

use crate::dataset::DatasetSpec;
use crate::error::{EsaError, Result};
use crate::objective::{LossParams, NegIndicator};
use crate::selection::{Strategy, StrategyKind};
use crate::superpixel::SlicParams;
use crate::trainer::LoopConfig;

/// Every tunable, addressable by its dotted key, with a one-line help text.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "base RNG seed"),
    ("jobs", "worker threads, 0 uses all cores"),
    ("paths.data", "dataset root; empty generates data in memory"),
    ("paths.out", "output directory"),
    ("dataset.images", "images per domain"),
    ("dataset.size", "image height and width"),
    ("dataset.classes", "class count including background"),
    ("dataset.shapes", "shapes drawn per image"),
    ("dataset.palette_shift", "color offset of the target palette"),
    ("slic.k", "requested superpixel count"),
    ("slic.compactness", "spatial weight of the superpixel distance"),
    ("slic.max_iters", "superpixel refinement iterations"),
    ("slic.min_region_ratio", "fraction of mean size below which regions merge"),
    ("entity.threshold", "minimum entity score"),
    ("select.strategy", "pa, ra, sa, ea, esa, rand, ent or sconf"),
    ("select.cell", "grid cell size for ra"),
    ("select.overlap_max", "claimed fraction above which a superpixel is skipped"),
    ("select.mode", "impurity, uncertainty or product"),
    ("select.entity_budget", "entity clicks in the first esa round, 0 takes all"),
    ("loop.rounds", "annotation rounds"),
    ("loop.budget", "clicks per image per round"),
    ("loop.iters", "training iterations"),
    ("loop.pretrain_iters", "source-only warmup iterations"),
    ("loop.batch_size", "images per domain per step"),
    ("loop.lr", "initial learning rate"),
    ("loop.lr_power", "polynomial decay exponent"),
    ("loop.momentum", "sgd momentum"),
    ("loop.pseudo_labels", "also train on region pseudo labels"),
    ("loss.alpha", "negative loss weight"),
    ("loss.tau", "negative indicator threshold"),
    ("loss.negative_indicator", "above or below"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub data_dir: String,
    pub out_dir: String,
    pub dataset_images: usize,
    pub dataset_size: usize,
    pub dataset_classes: usize,
    pub dataset_shapes: usize,
    pub dataset_palette_shift: i32,
    pub slic_k: usize,
    pub slic_compactness: f64,
    pub slic_max_iters: usize,
    pub slic_min_region_ratio: f64,
    pub entity_threshold: f64,
    pub select_strategy: String,
    pub select_cell: usize,
    pub select_overlap_max: f64,
    pub select_mode: String,
    pub select_entity_budget: usize,
    pub loop_rounds: usize,
    pub loop_budget: usize,
    pub loop_iters: usize,
    pub loop_pretrain_iters: usize,
    pub loop_batch_size: usize,
    pub loop_lr: f64,
    pub loop_lr_power: f64,
    pub loop_momentum: f64,
    pub loop_pseudo_labels: bool,
    pub loss_alpha: f64,
    pub loss_tau: f64,
    pub loss_negative_indicator: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            jobs: 0,
            data_dir: String::new(),
            out_dir: "out".to_string(),
            dataset_images: 40,
            dataset_size: 64,
            dataset_classes: 6,
            dataset_shapes: 8,
            dataset_palette_shift: 40,
            slic_k: 64,
            slic_compactness: 0.1,
            slic_max_iters: 10,
            slic_min_region_ratio: 0.25,
            entity_threshold: 0.5,
            select_strategy: "sa".to_string(),
            select_cell: 3,
            select_overlap_max: 0.5,
            select_mode: "uncertainty".to_string(),
            select_entity_budget: 0,
            loop_rounds: 5,
            loop_budget: 8,
            loop_iters: 240,
            loop_pretrain_iters: 80,
            loop_batch_size: 4,
            loop_lr: 0.1,
            loop_lr_power: 0.9,
            loop_momentum: 0.9,
            loop_pseudo_labels: false,
            loss_alpha: 1.0,
            loss_tau: 0.05,
            loss_negative_indicator: "above".to_string(),
        }
    }
}

fn p<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| EsaError::config(key, format!("expected {what}, got '{value}'")))
}

fn p_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(EsaError::config(key, format!("expected true or false, got '{value}'"))),
    }
}

impl RunConfig {
    /// Sets one field by its dotted key, parsing the value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = p(key, value, "an integer")?,
            "jobs" => self.jobs = p(key, value, "an integer")?,
            "paths.data" => self.data_dir = value.to_string(),
            "paths.out" => self.out_dir = value.to_string(),
            "dataset.images" => self.dataset_images = p(key, value, "an integer")?,
            "dataset.size" => self.dataset_size = p(key, value, "an integer")?,
            "dataset.classes" => self.dataset_classes = p(key, value, "an integer")?,
            "dataset.shapes" => self.dataset_shapes = p(key, value, "an integer")?,
            "dataset.palette_shift" => {
                self.dataset_palette_shift = p(key, value, "an integer")?
            }
            "slic.k" => self.slic_k = p(key, value, "an integer")?,
            "slic.compactness" => self.slic_compactness = p(key, value, "a number")?,
            "slic.max_iters" => self.slic_max_iters = p(key, value, "an integer")?,
            "slic.min_region_ratio" => {
                self.slic_min_region_ratio = p(key, value, "a number")?
            }
            "entity.threshold" => self.entity_threshold = p(key, value, "a number")?,
            "select.strategy" => self.select_strategy = value.to_string(),
            "select.cell" => self.select_cell = p(key, value, "an integer")?,
            "select.overlap_max" => self.select_overlap_max = p(key, value, "a number")?,
            "select.mode" => self.select_mode = value.to_string(),
            "select.entity_budget" => {
                self.select_entity_budget = p(key, value, "an integer")?
            }
            "loop.rounds" => self.loop_rounds = p(key, value, "an integer")?,
            "loop.budget" => self.loop_budget = p(key, value, "an integer")?,
            "loop.iters" => self.loop_iters = p(key, value, "an integer")?,
            "loop.pretrain_iters" => self.loop_pretrain_iters = p(key, value, "an integer")?,
            "loop.batch_size" => self.loop_batch_size = p(key, value, "an integer")?,
            "loop.lr" => self.loop_lr = p(key, value, "a number")?,
            "loop.lr_power" => self.loop_lr_power = p(key, value, "a number")?,
            "loop.momentum" => self.loop_momentum = p(key, value, "a number")?,
            "loop.pseudo_labels" => self.loop_pseudo_labels = p_bool(key, value)?,
            "loss.alpha" => self.loss_alpha = p(key, value, "a number")?,
            "loss.tau" => self.loss_tau = p(key, value, "a number")?,
            "loss.negative_indicator" => self.loss_negative_indicator = value.to_string(),
            _ => return Err(EsaError::config(key, "unknown key".to_string())),
        }
        Ok(())
    }

    /// Applies a flat JSON object of dotted keys.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| EsaError::io(path, e))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| EsaError::format(path, 0, format!("bad config: {e}")))?;
        self.apply_json(text)
            .map_err(|e| match e {
                EsaError::Format { offset, message, .. } => EsaError::format(path, offset, message),
                other => other,
            })
    }

    /// Applies a flat JSON object of dotted keys, given as text.
    pub fn apply_json(&mut self, text: &str) -> Result<()> {
        let anon = Path::new("<config>");
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| EsaError::format(anon, 0, format!("bad config: {e}")))?;
        let serde_json::Value::Object(map) = value else {
            return Err(EsaError::format(anon, 0, "config must be a JSON object".to_string()));
        };
        for (key, v) in map {
            let text = match v {
                serde_json::Value::String(s) => s,
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::Bool(b) => b.to_string(),
                other => {
                    return Err(EsaError::config(
                        &key,
                        format!("expected a scalar, got {other}"),
                    ))
                }
            };
            self.set(&key, &text)?;
        }
        Ok(())
    }

    /// Applies the seed environment override; flags still take precedence.
    pub fn apply_seed_env(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.seed = p("ESA_SEED", v, "an integer")?;
        }
        Ok(())
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            seed: self.seed,
            images: self.dataset_images,
            size: self.dataset_size,
            classes: self.dataset_classes,
            shapes_per_image: self.dataset_shapes,
            palette_shift: self.dataset_palette_shift,
        }
    }

    pub fn slic_params(&self) -> SlicParams {
        SlicParams {
            k: self.slic_k,
            compactness: self.slic_compactness,
            max_iters: self.slic_max_iters,
            connectivity_min_ratio: self.slic_min_region_ratio,
        }
    }

    pub fn strategy(&self) -> Result<Strategy> {
        let kind: StrategyKind = self
            .select_strategy
            .parse()
            .map_err(|e: String| EsaError::config("select.strategy", e))?;
        let mode = self
            .select_mode
            .parse()
            .map_err(|e: String| EsaError::config("select.mode", e))?;
        Ok(Strategy {
            kind,
            cell: self.select_cell,
            entity_threshold: self.entity_threshold,
            overlap_max: self.select_overlap_max,
            mode,
            entity_budget: self.select_entity_budget,
        })
    }

    pub fn loss_params(&self) -> Result<LossParams> {
        let negative_indicator: NegIndicator = self
            .loss_negative_indicator
            .parse()
            .map_err(|e: String| EsaError::config("loss.negative_indicator", e))?;
        Ok(LossParams { alpha: self.loss_alpha, tau: self.loss_tau, negative_indicator })
    }

    pub fn loop_config(&self) -> Result<LoopConfig> {
        Ok(LoopConfig {
            iters: self.loop_iters,
            pretrain_iters: self.loop_pretrain_iters,
            rounds: self.loop_rounds,
            budget: self.loop_budget,
            strategy: self.strategy()?,
            loss: self.loss_params()?,
            lr: self.loop_lr,
            lr_power: self.loop_lr_power,
            momentum: self.loop_momentum,
            batch_size: self.loop_batch_size,
            seed: self.seed,
            pseudo_labels: self.loop_pseudo_labels,
        })
    }

    /// Checks every section and reports all offending keys at once.
    pub fn validate(&self) -> Result<()> {
        let mut errors: Vec<EsaError> = Vec::new();
        let mut note = |r: Result<()>| {
            if let Err(e) = r {
                errors.push(e);
            }
        };
        note(self.dataset_spec().validate());
        if self.slic_k < 1 {
            note(Err(EsaError::config("slic.k", "must be at least 1".to_string())));
        }
        if !self.slic_compactness.is_finite() || self.slic_compactness <= 0.0 {
            note(Err(EsaError::config("slic.compactness", "must be positive".to_string())));
        }
        if self.slic_max_iters < 1 {
            note(Err(EsaError::config("slic.max_iters", "must be at least 1".to_string())));
        }
        if !(0.0..1.0).contains(&self.slic_min_region_ratio) {
            note(Err(EsaError::config(
                "slic.min_region_ratio",
                "must be in [0,1)".to_string(),
            )));
        }
        if !(0.0..=1.0).contains(&self.entity_threshold) {
            note(Err(EsaError::config("entity.threshold", "must be in [0,1]".to_string())));
        }
        if self.select_cell < 1 {
            note(Err(EsaError::config("select.cell", "must be at least 1".to_string())));
        }
        if !(0.0..=1.0).contains(&self.select_overlap_max) {
            note(Err(EsaError::config("select.overlap_max", "must be in [0,1]".to_string())));
        }
        match self.loop_config() {
            Ok(lc) => note(lc.validate()),
            Err(e) => errors.push(e),
        }
        if errors.len() == 1 {
            return Err(errors.remove(0));
        }
        if !errors.is_empty() {
            let joined = errors
                .iter()
                .map(|e| match e {
                    EsaError::Config { field, message } => format!("{field}: {message}"),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join("; ");
            return Err(EsaError::config("config", joined));
        }
        Ok(())
    }

    /// The full configuration as a flat JSON object, reusable as a config file.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        let mut put = |k: &str, v: serde_json::Value| {
            map.insert(k.to_string(), v);
        };
        put("seed", self.seed.into());
        put("jobs", self.jobs.into());
        put("paths.data", self.data_dir.clone().into());
        put("paths.out", self.out_dir.clone().into());
        put("dataset.images", self.dataset_images.into());
        put("dataset.size", self.dataset_size.into());
        put("dataset.classes", self.dataset_classes.into());
        put("dataset.shapes", self.dataset_shapes.into());
        put("dataset.palette_shift", self.dataset_palette_shift.into());
        put("slic.k", self.slic_k.into());
        put("slic.compactness", self.slic_compactness.into());
        put("slic.max_iters", self.slic_max_iters.into());
        put("slic.min_region_ratio", self.slic_min_region_ratio.into());
        put("entity.threshold", self.entity_threshold.into());
        put("select.strategy", self.select_strategy.clone().into());
        put("select.cell", self.select_cell.into());
        put("select.overlap_max", self.select_overlap_max.into());
        put("select.mode", self.select_mode.clone().into());
        put("select.entity_budget", self.select_entity_budget.into());
        put("loop.rounds", self.loop_rounds.into());
        put("loop.budget", self.loop_budget.into());
        put("loop.iters", self.loop_iters.into());
        put("loop.pretrain_iters", self.loop_pretrain_iters.into());
        put("loop.batch_size", self.loop_batch_size.into());
        put("loop.lr", self.loop_lr.into());
        put("loop.lr_power", self.loop_lr_power.into());
        put("loop.momentum", self.loop_momentum.into());
        put("loop.pseudo_labels", self.loop_pseudo_labels.into());
        put("loss.alpha", self.loss_alpha.into());
        put("loss.tau", self.loss_tau.into());
        put("loss.negative_indicator", self.loss_negative_indicator.clone().into());
        serde_json::Value::Object(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn set_parses_and_rejects() {
        let mut cfg = RunConfig::default();
        cfg.set("loop.budget", "12").unwrap();
        assert_eq!(cfg.loop_budget, 12);
        cfg.set("loop.pseudo_labels", "true").unwrap();
        assert!(cfg.loop_pseudo_labels);
        let err = cfg.set("loop.budget", "twelve").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = cfg.set("nope", "1").unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
    }

    #[test]
    fn every_registered_key_is_settable() {
        let mut cfg = RunConfig::default();
        for (key, _) in KEYS {
            let value = match *key {
                "paths.data" | "paths.out" => "x",
                "select.strategy" => "esa",
                "select.mode" => "product",
                "loss.negative_indicator" => "below",
                "loop.pseudo_labels" => "true",
                _ => "1",
            };
            cfg.set(key, value).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }

    #[test]
    fn validation_names_offending_keys() {
        let mut cfg = RunConfig::default();
        cfg.set("loss.tau", "1.5").unwrap();
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("loss.tau"), "{err}");

        cfg.set("dataset.size", "4").unwrap();
        let err = cfg.validate().unwrap_err();
        let text = err.to_string();
        assert!(text.contains("loss.tau") && text.contains("dataset.size"), "{text}");
    }

    #[test]
    fn file_then_env_then_flag_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"seed": 5, "loop.rounds": 3}"#).unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply_file(&path).unwrap();
        assert_eq!((cfg.seed, cfg.loop_rounds), (5, 3));
        cfg.apply_seed_env(Some("9")).unwrap();
        assert_eq!(cfg.seed, 9);
        cfg.set("seed", "3").unwrap();
        assert_eq!(cfg.seed, 3);
        assert!(cfg.apply_seed_env(Some("x")).is_err());
        cfg.apply_seed_env(None).unwrap();
        assert_eq!(cfg.seed, 3);
    }

    #[test]
    fn file_rejects_unknown_and_nested_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"mystery": 1}"#).unwrap();
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.apply_file(&path).unwrap_err().exit_code(), 2);
        std::fs::write(&path, r#"{"loop": {"rounds": 3}}"#).unwrap();
        assert_eq!(cfg.apply_file(&path).unwrap_err().exit_code(), 2);
        std::fs::write(&path, r#"[1, 2]"#).unwrap();
        assert_eq!(cfg.apply_file(&path).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn json_dump_reapplies_to_the_same_config() {
        let mut cfg = RunConfig::default();
        cfg.set("select.strategy", "esa").unwrap();
        cfg.set("loop.lr", "0.25").unwrap();
        cfg.set("dataset.palette_shift", "-12").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dump.json");
        std::fs::write(&path, serde_json::to_string(&cfg.to_json()).unwrap()).unwrap();
        let mut again = RunConfig::default();
        again.apply_file(&path).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn derived_sections_reflect_fields() {
        let mut cfg = RunConfig::default();
        cfg.set("select.strategy", "esa").unwrap();
        cfg.set("select.entity_budget", "4").unwrap();
        cfg.set("loss.negative_indicator", "below").unwrap();
        let strategy = cfg.strategy().unwrap();
        assert_eq!(strategy.kind, StrategyKind::Esa);
        assert_eq!(strategy.entity_budget, 4);
        let lc = cfg.loop_config().unwrap();
        assert_eq!(lc.seed, cfg.seed);
        assert_eq!(lc.loss.negative_indicator, NegIndicator::Below);
        cfg.set("select.strategy", "warp").unwrap();
        let err = cfg.strategy().unwrap_err();
        assert!(err.to_string().contains("select.strategy"), "{err}");
    }
}

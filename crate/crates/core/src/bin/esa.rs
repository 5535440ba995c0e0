use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Arg, ArgMatches, Command};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use esa_core::acquisition::{combined_score, ScoreMode};
use esa_core::config::{RunConfig, KEYS};
use esa_core::dataset::{generate_dataset, Domain};
use esa_core::entity::{entity_score_seed, load_entities, synth_entities, EntitySet};
use esa_core::evaluation::{compare_runs, RunReport};
use esa_core::oracle::annotate;
use esa_core::raster::{
    read_image, read_label_map, read_prob_map, read_region_map, write_image, write_label_map,
    write_region_map, Image, LabelMap, RegionMap,
};
use esa_core::selection::{select_round, RegionSpace, SelectionState, StrategyKind};
use esa_core::superpixel::{grid_regions, slic};
use esa_core::trainer::{eval_model, read_checkpoint, run_loop, write_checkpoint};
use esa_core::{EsaError, Result};

fn with_config(cmd: Command) -> Command {
    let mut cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("flat JSON object of dotted keys"),
    );
    for (key, help) in KEYS {
        cmd = cmd.arg(Arg::new(*key).long(*key).value_name("VALUE").help(*help));
    }
    cmd
}

fn path_arg(name: &'static str, help: &'static str, required: bool) -> Arg {
    Arg::new(name).long(name).value_name("PATH").help(help).required(required)
}

fn cli() -> Command {
    Command::new("esa")
        .about("active annotation for semantic segmentation on synthetic two-domain data")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_config(
            Command::new("gen").about("write source and target datasets with a checksum manifest"),
        ))
        .subcommand(with_config(
            Command::new("slic")
                .about("compute superpixel region maps for images")
                .arg(path_arg("input", "image file or directory of .ppm files", true))
                .arg(path_arg("output", "region file or directory", true)),
        ))
        .subcommand(with_config(
            Command::new("entities")
                .about("derive scored entity regions from label maps")
                .arg(path_arg("input", "label file or directory of .pgm files", true))
                .arg(path_arg("output", "region file or directory", true)),
        ))
        .subcommand(with_config(
            Command::new("acquire")
                .about("score regions from a prediction")
                .arg(path_arg("probs", "probability tensor", true))
                .arg(path_arg("regions", "region map to score", true))
                .arg(path_arg("output", "region map with normalized scores", false)),
        ))
        .subcommand(with_config(
            Command::new("select")
                .about("pick regions to annotate for one round")
                .arg(path_arg("probs", "probability tensor", true))
                .arg(path_arg("regions", "superpixel region map", false))
                .arg(path_arg("entities", "scored entity region map", false))
                .arg(path_arg("output", "selection region map", false))
                .arg(
                    Arg::new("round")
                        .long("round")
                        .value_name("N")
                        .help("zero-based selection round"),
                ),
        ))
        .subcommand(with_config(
            Command::new("annotate")
                .about("fill selected regions with oracle labels")
                .arg(path_arg("gt", "ground-truth label map", true))
                .arg(path_arg("regions", "region map the ids refer to", true))
                .arg(path_arg("selection", "selection region map from select", false))
                .arg(
                    Arg::new("ids")
                        .long("ids")
                        .value_name("LIST")
                        .help("comma-separated region ids, alternative to --selection"),
                )
                .arg(
                    Arg::new("space")
                        .long("space")
                        .value_name("NAME")
                        .help("pixels, grid, superpixels or entities"),
                )
                .arg(path_arg("annotated", "existing annotation to extend", false))
                .arg(path_arg("output", "updated annotation label map", true)),
        ))
        .subcommand(with_config(
            Command::new("loop").about("run pretraining, annotation rounds and adaptation"),
        ))
        .subcommand(with_config(
            Command::new("eval")
                .about("mean IoU of a checkpoint on a dataset")
                .arg(path_arg("model", "model checkpoint", true))
                .arg(
                    Arg::new("domain")
                        .long("domain")
                        .value_name("NAME")
                        .help("source or target, default target"),
                ),
        ))
        .subcommand(
            Command::new("report")
                .about("pairwise comparison of run reports")
                .arg(
                    Arg::new("reports")
                        .value_name("REPORT")
                        .num_args(2..)
                        .required(true)
                        .help("two or more report.json files"),
                ),
        )
}

fn resolve_config(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.try_get_one::<String>("config").ok().flatten() {
        cfg.apply_file(Path::new(path))?;
    }
    cfg.apply_seed_env(std::env::var("ESA_SEED").ok().as_deref())?;
    for (key, _) in KEYS {
        if let Some(v) = m.try_get_one::<String>(key).ok().flatten() {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() {
    let matches = cli().get_matches();
    if let Err(e) = run(&matches) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(m: &ArgMatches) -> Result<()> {
    let (name, sub) = m.subcommand().expect("subcommand is required");
    let cfg = resolve_config(sub)?;
    if cfg.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build_global()
            .map_err(|e| EsaError::config("jobs", e.to_string()))?;
    }
    match name {
        "gen" => cmd_gen(&cfg),
        "slic" => cmd_slic(sub, &cfg),
        "entities" => cmd_entities(sub, &cfg),
        "acquire" => cmd_acquire(sub, &cfg),
        "select" => cmd_select(sub, &cfg),
        "annotate" => cmd_annotate(sub, &cfg),
        "loop" => cmd_loop(&cfg),
        "eval" => cmd_eval(sub, &cfg),
        "report" => cmd_report(sub),
        other => Err(EsaError::config("command", format!("unknown subcommand '{other}'"))),
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| EsaError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn make_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| EsaError::io(path, e))
}

fn cmd_gen(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.dataset_spec();
    let out = Path::new(&cfg.out_dir);
    let mut files: BTreeMap<String, String> = BTreeMap::new();
    for (domain, dname) in [(Domain::Source, "source"), (Domain::Target, "target")] {
        let dir = out.join(dname);
        make_dir(&dir)?;
        for (i, (img, lab)) in generate_dataset(&spec, domain)?.iter().enumerate() {
            let img_path = dir.join(format!("img_{i:04}.ppm"));
            write_image(img, &img_path)?;
            files.insert(format!("{dname}/img_{i:04}.ppm"), sha256_file(&img_path)?);
            let lab_path = dir.join(format!("lab_{i:04}.pgm"));
            write_label_map(lab, &lab_path)?;
            files.insert(format!("{dname}/lab_{i:04}.pgm"), sha256_file(&lab_path)?);
        }
    }
    let manifest = serde_json::json!({
        "seed": spec.seed,
        "images": spec.images,
        "size": spec.size,
        "classes": spec.classes,
        "shapes": spec.shapes_per_image,
        "palette_shift": spec.palette_shift,
        "files": files,
    });
    let path = out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest is plain data"))
        .map_err(|e| EsaError::io(&path, e))?;
    println!(
        "{}",
        serde_json::json!({"out": cfg.out_dir, "images": spec.images * 2, "classes": spec.classes})
    );
    Ok(())
}

fn list_inputs(input: &Path, output: &Path, ext: &str) -> Result<Vec<(PathBuf, PathBuf)>> {
    if input.is_dir() {
        make_dir(output)?;
        let mut sources = Vec::new();
        let entries = std::fs::read_dir(input).map_err(|e| EsaError::io(input, e))?;
        for entry in entries {
            let path = entry.map_err(|e| EsaError::io(input, e))?.path();
            if path.extension().is_some_and(|e| e == ext) {
                sources.push(path);
            }
        }
        sources.sort();
        if sources.is_empty() {
            return Err(EsaError::config(
                "input",
                format!("no .{ext} files in {}", input.display()),
            ));
        }
        Ok(sources
            .into_iter()
            .map(|src| {
                let stem = src.file_stem().unwrap_or_default().to_os_string();
                let mut name = stem;
                name.push(".esar");
                let dst = output.join(name);
                (src, dst)
            })
            .collect())
    } else {
        let dst = if output.is_dir() {
            let mut name = input.file_stem().unwrap_or_default().to_os_string();
            name.push(".esar");
            output.join(name)
        } else {
            output.to_path_buf()
        };
        Ok(vec![(input.to_path_buf(), dst)])
    }
}

fn cmd_slic(sub: &ArgMatches, cfg: &RunConfig) -> Result<()> {
    let input = PathBuf::from(sub.get_one::<String>("input").expect("required"));
    let output = PathBuf::from(sub.get_one::<String>("output").expect("required"));
    let params = cfg.slic_params();
    let jobs = list_inputs(&input, &output, "ppm")?;
    let counts = jobs
        .par_iter()
        .map(|(src, dst)| {
            let regions = slic(&read_image(src)?, &params)?;
            write_region_map(&regions, dst)?;
            Ok(regions.count)
        })
        .collect::<Result<Vec<_>>>()?;
    println!("{}", serde_json::json!({"processed": counts.len(), "regions": counts}));
    Ok(())
}

fn cmd_entities(sub: &ArgMatches, cfg: &RunConfig) -> Result<()> {
    let input = PathBuf::from(sub.get_one::<String>("input").expect("required"));
    let output = PathBuf::from(sub.get_one::<String>("output").expect("required"));
    let jobs = list_inputs(&input, &output, "pgm")?;
    let mut counts = Vec::with_capacity(jobs.len());
    for (i, (src, dst)) in jobs.iter().enumerate() {
        let labels = read_label_map(src, cfg.dataset_classes)?;
        let set = synth_entities(&labels, entity_score_seed(cfg.seed, i as u64))?;
        write_region_map(&set.regions, dst)?;
        counts.push(set.entity_count());
    }
    println!("{}", serde_json::json!({"processed": counts.len(), "entities": counts}));
    Ok(())
}

fn cmd_acquire(sub: &ArgMatches, cfg: &RunConfig) -> Result<()> {
    let p = read_prob_map(sub.get_one::<String>("probs").expect("required"))?;
    let regions = read_region_map(sub.get_one::<String>("regions").expect("required"))?;
    let mode: ScoreMode =
        cfg.select_mode.parse().map_err(|e: String| EsaError::config("select.mode", e))?;
    let raw = combined_score(&p, &regions, mode)?;
    if let Some(out) = sub.get_one::<String>("output") {
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let norm: Vec<f32> = if hi > lo {
            raw.iter().map(|v| ((v - lo) / (hi - lo)) as f32).collect()
        } else {
            vec![0.0; raw.len()]
        };
        let scored = RegionMap::new(
            regions.height,
            regions.width,
            regions.count,
            regions.assignment.clone(),
            Some(norm),
        )?;
        write_region_map(&scored, Path::new(out))?;
    }
    println!("{}", serde_json::json!({"mode": mode.to_string(), "scores": raw}));
    Ok(())
}

fn space_name(space: RegionSpace) -> &'static str {
    match space {
        RegionSpace::Pixels => "pixels",
        RegionSpace::Grid => "grid",
        RegionSpace::Superpixels => "superpixels",
        RegionSpace::Entities => "entities",
    }
}

fn parse_space(name: &str) -> Result<RegionSpace> {
    match name {
        "pixels" => Ok(RegionSpace::Pixels),
        "grid" => Ok(RegionSpace::Grid),
        "superpixels" => Ok(RegionSpace::Superpixels),
        "entities" => Ok(RegionSpace::Entities),
        other => Err(EsaError::config("space", format!("unknown region space '{other}'"))),
    }
}

fn cmd_select(sub: &ArgMatches, cfg: &RunConfig) -> Result<()> {
    let p = read_prob_map(sub.get_one::<String>("probs").expect("required"))?;
    let strategy = cfg.strategy()?;
    let superpixels = match sub.get_one::<String>("regions") {
        Some(path) => Some(read_region_map(path)?),
        None => None,
    };
    let entities = match sub.get_one::<String>("entities") {
        Some(path) => Some(load_entities(path)?),
        None => None,
    };
    let round = match sub.get_one::<String>("round") {
        Some(v) => v
            .parse::<usize>()
            .map_err(|_| EsaError::config("round", format!("expected an integer, got '{v}'")))?,
        None => 0,
    };
    let mut state = SelectionState::new(p.height, p.width, cfg.dataset_classes)?;
    let groups = select_round(
        &strategy,
        &p,
        superpixels.as_ref(),
        entities.as_ref(),
        &mut state,
        cfg.loop_budget,
        round,
        cfg.seed,
    )?;
    if let Some(out) = sub.get_one::<String>("output") {
        let out = PathBuf::from(out);
        for group in &groups {
            let grid;
            let regions = match group.space {
                RegionSpace::Pixels => {
                    grid = grid_regions(p.height, p.width, 1)?;
                    &grid
                }
                RegionSpace::Grid => {
                    grid = grid_regions(p.height, p.width, strategy.cell)?;
                    &grid
                }
                RegionSpace::Superpixels => superpixels.as_ref().expect("checked by select_round"),
                RegionSpace::Entities => {
                    &entities.as_ref().expect("checked by select_round").regions
                }
            };
            let mut scores = vec![0.0f32; regions.count];
            for &id in &group.ids {
                scores[id as usize] = 1.0;
            }
            let marked = RegionMap::new(
                regions.height,
                regions.width,
                regions.count,
                regions.assignment.clone(),
                Some(scores),
            )?;
            let path = if groups.len() == 1 {
                out.clone()
            } else {
                out.with_extension(format!("{}.esar", space_name(group.space)))
            };
            write_region_map(&marked, &path)?;
        }
    }
    let summary: Vec<serde_json::Value> = groups
        .iter()
        .map(|g| serde_json::json!({"space": space_name(g.space), "ids": g.ids}))
        .collect();
    println!(
        "{}",
        serde_json::json!({
            "strategy": strategy.kind.to_string(),
            "round": round,
            "groups": summary,
            "total_clicks": state.total_clicks(),
        })
    );
    Ok(())
}

fn cmd_annotate(sub: &ArgMatches, cfg: &RunConfig) -> Result<()> {
    let gt = read_label_map(sub.get_one::<String>("gt").expect("required"), cfg.dataset_classes)?;
    let regions = read_region_map(sub.get_one::<String>("regions").expect("required"))?;
    let space = parse_space(sub.get_one::<String>("space").map_or("superpixels", |s| s))?;
    let ids: Vec<u32> = if let Some(path) = sub.get_one::<String>("selection") {
        let sel = read_region_map(path)?;
        let scores = sel.scores.ok_or_else(|| {
            EsaError::format(Path::new(path), 0, "selection carries no scores".to_string())
        })?;
        scores
            .iter()
            .enumerate()
            .filter(|(_, &s)| s >= 0.5)
            .map(|(i, _)| i as u32)
            .collect()
    } else if let Some(list) = sub.get_one::<String>("ids") {
        list.split(',')
            .map(|tok| {
                tok.trim().parse::<u32>().map_err(|_| {
                    EsaError::config("ids", format!("expected a region id, got '{tok}'"))
                })
            })
            .collect::<Result<_>>()?
    } else {
        return Err(EsaError::config("selection", "need --selection or --ids".to_string()));
    };
    let mut state = SelectionState::new(gt.height, gt.width, gt.classes)?;
    if let Some(prev) = sub.get_one::<String>("annotated") {
        state.annotated = read_label_map(prev, cfg.dataset_classes)?;
    }
    for &id in &ids {
        state.chosen.insert((space, id));
        state.pending.insert((space, id));
    }
    let newly = annotate(&mut state, &gt, &regions, space, &ids)?;
    write_label_map(&state.annotated, sub.get_one::<String>("output").expect("required"))?;
    println!("{}", serde_json::json!({"clicks": ids.len(), "newly_labeled": newly}));
    Ok(())
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| EsaError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| EsaError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "ppm") {
            found.push(path);
        }
    }
    found.sort();
    Ok(found)
}

type Pairs = Vec<(Image, LabelMap)>;

fn load_pairs(root: &Path, domain: &str, classes: usize) -> Result<Pairs> {
    let dir = root.join(domain);
    let images = list_images(&dir)?;
    if images.is_empty() {
        return Err(EsaError::config(
            "paths.data",
            format!("no images under {}", dir.display()),
        ));
    }
    images
        .into_iter()
        .map(|img_path| {
            let name = img_path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let lab_name = match name.strip_prefix("img_") {
                Some(rest) => format!("lab_{rest}.pgm"),
                None => format!("{name}.pgm"),
            };
            let lab_path = dir.join(lab_name);
            Ok((read_image(&img_path)?, read_label_map(&lab_path, classes)?))
        })
        .collect()
}

fn load_domains(cfg: &RunConfig) -> Result<(Pairs, Pairs)> {
    if cfg.data_dir.is_empty() {
        let spec = cfg.dataset_spec();
        Ok((generate_dataset(&spec, Domain::Source)?, generate_dataset(&spec, Domain::Target)?))
    } else {
        let root = Path::new(&cfg.data_dir);
        Ok((
            load_pairs(root, "source", cfg.dataset_classes)?,
            load_pairs(root, "target", cfg.dataset_classes)?,
        ))
    }
}

fn cmd_loop(cfg: &RunConfig) -> Result<()> {
    let lc = cfg.loop_config()?;
    let (source, target) = load_domains(cfg)?;
    let superpixels: Vec<RegionMap> =
        if matches!(lc.strategy.kind, StrategyKind::Sa | StrategyKind::Esa) {
            let params = cfg.slic_params();
            target
                .par_iter()
                .map(|(img, _)| slic(img, &params))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
    let entities: Option<Vec<EntitySet>> =
        if matches!(lc.strategy.kind, StrategyKind::Ea | StrategyKind::Esa) {
            Some(
                target
                    .iter()
                    .enumerate()
                    .map(|(i, (_, gt))| synth_entities(gt, entity_score_seed(cfg.seed, i as u64)))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
    let outcome = run_loop(&lc, &source, &target, &superpixels, entities.as_deref())?;
    let out = Path::new(&cfg.out_dir);
    make_dir(out)?;
    write_checkpoint(&out.join("model.esaw"), &outcome.params)?;
    let report = RunReport {
        strategy: lc.strategy.kind.to_string(),
        total_clicks: outcome.ledger.total_clicks(),
        mean_clicks_per_image: outcome.ledger.mean_clicks_per_image(),
        per_class_iou: outcome.per_class_iou.clone(),
        miou: outcome.final_miou(),
        rounds: lc.rounds,
        seed: cfg.seed,
        config: cfg.to_json(),
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default().as_secs(),
    };
    report.save(&out.join("report.json"))?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report is plain data"));
    Ok(())
}

fn cmd_eval(sub: &ArgMatches, cfg: &RunConfig) -> Result<()> {
    let model = read_checkpoint(Path::new(sub.get_one::<String>("model").expect("required")))?;
    if model.classes != cfg.dataset_classes {
        return Err(EsaError::config(
            "dataset.classes",
            format!("checkpoint has {} classes, dataset {}", model.classes, cfg.dataset_classes),
        ));
    }
    let domain = sub.get_one::<String>("domain").map_or("target", |s| s);
    let pairs = match domain {
        "target" | "source" => {
            if cfg.data_dir.is_empty() {
                let spec = cfg.dataset_spec();
                let d = if domain == "source" { Domain::Source } else { Domain::Target };
                generate_dataset(&spec, d)?
            } else {
                load_pairs(Path::new(&cfg.data_dir), domain, cfg.dataset_classes)?
            }
        }
        other => {
            return Err(EsaError::config("domain", format!("expected source or target, got '{other}'")))
        }
    };
    let (per_class, mean) = eval_model(&model, &pairs)?;
    println!(
        "{}",
        serde_json::json!({
            "domain": domain,
            "images": pairs.len(),
            "per_class_iou": per_class,
            "miou": mean,
        })
    );
    Ok(())
}

fn cmd_report(sub: &ArgMatches) -> Result<()> {
    let paths: Vec<&String> = sub.get_many::<String>("reports").expect("required").collect();
    let reports = paths
        .iter()
        .map(|p| RunReport::load(Path::new(p)))
        .collect::<Result<Vec<_>>>()?;
    let mut comparisons = Vec::new();
    for i in 0..reports.len() {
        for j in i + 1..reports.len() {
            let c = compare_runs(&reports[i], &reports[j])?;
            comparisons.push(serde_json::json!({
                "a": {"path": paths[i], "strategy": reports[i].strategy, "miou": reports[i].miou, "clicks": reports[i].total_clicks},
                "b": {"path": paths[j], "strategy": reports[j].strategy, "miou": reports[j].miou, "clicks": reports[j].total_clicks},
                "miou_delta": c.miou_delta,
                "click_reduction": c.click_reduction,
            }));
        }
    }
    println!("{}", serde_json::json!({"comparisons": comparisons}));
    Ok(())
}

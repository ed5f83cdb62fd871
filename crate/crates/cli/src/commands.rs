use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde_json::json;

use sceneflow::generator::{generate as run_generation, seed_graph, StopReason};
use sceneflow::metrics::{as_generated, evaluate as score};
use sceneflow::model::ModelParams;
use sceneflow::scene::{
    graph_to_dot, load_generated, load_room, load_scene, parse_document, save_generated, save_scene, scene_rng,
    synth_corpus, GeneratedGraph, GrammarConfig, RuleSet, SceneGraph,
};
use sceneflow::train::{train as run_training, write_csv};
use sceneflow::Error;

use crate::config::{required, RunConfig};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

const DEFAULT_SYNTH_COUNT: usize = 200;
const RULES_FILE: &str = "rules.json";

fn io(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io(path, e))
}

/// Graph documents in `dir`, sorted by name. A rule set stored alongside is skipped.
fn list_documents(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io(dir, e))?.path();
        let is_json = path.extension().is_some_and(|e| e == "json");
        if is_json && path.file_name().is_some_and(|n| n != RULES_FILE) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

fn thread_pool(config: &RunConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.unwrap_or(1))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} worker threads: {e}", config.jobs.unwrap_or(1))))
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).unwrap_or_default());
}

fn load_rules(config: &RunConfig) -> Result<RuleSet> {
    Ok(RuleSet::load(required(&config.rules, "rules")?)?)
}

pub fn synth(config: &RunConfig, empty_rooms: bool) -> Result<()> {
    let out = required(&config.out, "out")?;
    let count = config.count.unwrap_or(DEFAULT_SYNTH_COUNT);
    if count == 0 {
        return Err(CliError::Usage("--num must be at least 1".into()));
    }
    let grammar = GrammarConfig {
        max_instances: config.max_instances,
        ..GrammarConfig::default()
    };
    let rules = grammar.rules()?;
    let scenes = synth_corpus(&grammar, count, config.train.seed)?;
    create_dir(out)?;
    for (i, scene) in scenes.iter().enumerate() {
        let scene = if empty_rooms { scene.strip_to_architecture(&rules) } else { scene.clone() };
        save_scene(&scene, &rules, out.join(format!("scene_{i:04}.json")))?;
    }
    let rules_path = config.rules.clone().unwrap_or_else(|| out.join(RULES_FILE));
    rules.save(&rules_path)?;
    info!("wrote {count} scenes to {} and rules to {}", out.display(), rules_path.display());
    if config.json {
        print_json(&json!({ "scenes": count, "out": out, "rules": rules_path }));
    }
    Ok(())
}

pub fn train(config: &RunConfig) -> Result<()> {
    config.train.validate()?;
    let data = required(&config.data, "data")?;
    let out = required(&config.out, "out")?;
    let rules = load_rules(config)?;
    let files = list_documents(data)?;
    if files.len() < 2 {
        return Err(Error::Data(format!("{}: training needs at least 2 scene files, found {}", data.display(), files.len())).into());
    }
    let corpus = files.iter().map(|f| load_scene(f, &rules)).collect::<sceneflow::Result<Vec<_>>>()?;
    info!("training on {} scenes for {} epochs", corpus.len(), config.train.epochs);
    let (model, logs) = run_training(&corpus, &rules, &config.train, |log| {
        info!("epoch {:>3}  l_n {:.4}  l_e {:.4}  l_m {:.4}  l {:.4}", log.epoch, log.l_n, log.l_e, log.l_m, log.l);
    })?;
    create_dir(out)?;
    let model_path = config.model.clone().unwrap_or_else(|| out.join("model.json"));
    let csv_path = out.join("train_log.csv");
    model.save(&model_path)?;
    write_csv(&logs, &csv_path)?;
    if config.json {
        print_json(&json!({ "model": model_path, "log": csv_path, "epochs": logs }));
    } else if let (Some(first), Some(last)) = (logs.first(), logs.last()) {
        println!("epoch    l_n      l_e      l_m      l");
        for log in [first, last] {
            println!("{:>5} {:>8.4} {:>8.4} {:>8.4} {:>8.4}", log.epoch, log.l_n, log.l_e, log.l_m, log.l);
        }
        println!("model: {}", model_path.display());
    }
    Ok(())
}

pub fn generate(config: &RunConfig) -> Result<()> {
    let gen = &config.generation;
    gen.validate()?;
    let data = required(&config.data, "data")?;
    let out = required(&config.out, "out")?;
    let rules = load_rules(config)?;
    let model = ModelParams::load(required(&config.model, "model")?)?;
    let rooms = list_documents(data)?;
    if rooms.is_empty() {
        return Err(Error::Data(format!("{}: no room files", data.display())).into());
    }
    create_dir(out)?;
    let per_room = gen.graphs_per_scene;
    let stops = thread_pool(config)?.install(|| {
        rooms
            .par_iter()
            .enumerate()
            .map(|(index, path)| -> Result<Vec<StopReason>> {
                let room = load_room(path, &rules)?;
                let seed = seed_graph(&room, &model)?;
                let name = stem(path);
                let mut stops = Vec::with_capacity(per_room);
                for k in 0..per_room {
                    let mut rng = scene_rng(gen.seed, (index * per_room + k) as u64);
                    let mut run = run_generation(&room, &seed, &model, &rules, gen, &mut rng)
                        .map_err(|e| annotate(e, path))?;
                    run.graph.generated_from = Some(name.clone());
                    save_generated(&run.graph, &rules, out.join(format!("{name}_{k}.json")))?;
                    run.write_log(out.join(format!("{name}_{k}.log.jsonl")))?;
                    stops.push(run.stop);
                }
                Ok(stops)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut tally: BTreeMap<String, usize> = BTreeMap::new();
    for stop in stops.iter().flatten() {
        let key = serde_json::to_value(stop).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        *tally.entry(key).or_default() += 1;
    }
    let total = rooms.len() * per_room;
    info!("wrote {total} graphs for {} rooms to {}", rooms.len(), out.display());
    if config.json {
        print_json(&json!({ "rooms": rooms.len(), "graphs": total, "stop_reasons": tally, "out": out }));
    } else {
        println!("{total} graphs from {} rooms", rooms.len());
        for (reason, n) in &tally {
            println!("  {reason:<20} {n}");
        }
    }
    Ok(())
}

fn annotate(e: Error, path: &Path) -> Error {
    match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        Error::Unsatisfiable(m) => Error::Unsatisfiable(format!("{}: {m}", path.display())),
        other => other,
    }
}

/// Reads a graph file. Files that do not say which nodes were given are
/// treated as complete scenes whose non-architectural nodes count as generated.
fn load_scored(path: &Path, rules: &RuleSet) -> Result<GeneratedGraph> {
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    let doc = parse_document(&text, &path.display().to_string())?;
    if doc.existing_count.is_some() {
        return Ok(load_generated(path, rules)?);
    }
    let full = load_generated(path, rules)?;
    let mut g = as_generated(&full.graph, &full.room_function, rules).map_err(|e| annotate(e, path))?;
    g.generated_from = full.generated_from;
    Ok(g)
}

pub fn evaluate(config: &RunConfig) -> Result<()> {
    let data = required(&config.data, "data")?;
    let rules = load_rules(config)?;
    let files = list_documents(data)?;
    let pool = thread_pool(config)?;
    let graphs = pool.install(|| {
        files
            .par_iter()
            .map(|p| load_scored(p, &rules).map(|g| (p.clone(), g)))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut groups: BTreeMap<String, Vec<GeneratedGraph>> = BTreeMap::new();
    for (path, g) in graphs {
        let key = g.generated_from.clone().unwrap_or_else(|| stem(&path));
        groups.entry(key).or_default().push(g);
    }
    let reference: Vec<SceneGraph> = match &config.reference {
        Some(dir) => {
            let files = list_documents(dir)?;
            pool.install(|| {
                files
                    .par_iter()
                    .map(|p| load_generated(p, &rules).map(|g| g.graph))
                    .collect::<sceneflow::Result<Vec<_>>>()
            })?
        }
        None => Vec::new(),
    };
    let scenes: Vec<(String, Vec<GeneratedGraph>)> = groups.into_iter().collect();
    let echo = serde_json::to_value(config).unwrap_or_default();
    let report = score(&scenes, &reference, &rules, echo)?;
    let text = serde_json::to_string_pretty(&report).map_err(|source| Error::Json {
        context: "evaluation report".into(),
        source,
    })?;
    if let Some(out) = &config.out {
        write_text(out, &text)?;
    }
    if config.json {
        println!("{text}");
    } else {
        println!("{}", report.to_table().trim_end());
    }
    Ok(())
}

pub fn export_dot(config: &RunConfig, input: &Path) -> Result<()> {
    let rules = load_rules(config)?;
    let render = |path: &Path| -> Result<String> {
        let g = load_generated(path, &rules)?;
        Ok(graph_to_dot(&g.graph, &rules, g.existing_count))
    };
    if input.is_dir() {
        let out = required(&config.out, "out")?;
        create_dir(out)?;
        let files = list_documents(input)?;
        for f in &files {
            write_text(&out.join(format!("{}.dot", stem(f))), &render(f)?)?;
        }
        info!("wrote {} DOT files to {}", files.len(), out.display());
    } else {
        let dot = render(input)?;
        match &config.out {
            Some(out) => write_text(out, &dot)?,
            None => print!("{dot}"),
        }
    }
    Ok(())
}

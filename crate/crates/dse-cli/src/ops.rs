//! Subcommand implementations behind the `dse` binary.

use std::fs;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use dse_core::conllu::{parse_conllu, DepSentence, ParseOutcome};
use dse_core::dedup::dedup_indices;
use dse_core::encoders::parse_embedding_file;
use dse_core::expand::{expand, RelationVocab};
use dse_core::model::{
    pipeline_gradcheck, CheckpointMeta, EncoderKind, FusionKind, ModelConfig,
};
use dse_core::par::ExecMode;
use dse_core::synth::{gen_cloze, gen_relation, GrammarSpec};
use dse_core::tensor::op_suite;
use dse_core::train::{
    evaluate, load_checkpoint, parse_task_jsonl, run_ablation, save_checkpoint, train, TaskData,
};
use dse_core::treelstm::bench_encoders;

use crate::manifest::{create_run_dir, dataset_ref, now_unix, DatasetRef, RunManifest};
use crate::{Cli, CliError, Command, TaskArg};

pub fn run(cli: Cli) -> Result<(), CliError> {
    let seed_flag = resolve_seed(cli.seed)?;
    match cli.command {
        Command::Parse { file, validate_only } => cmd_parse(&file, validate_only),
        Command::Expand { file } => cmd_expand(&file),
        Command::Train { config, train, dev, out, parallel } => {
            cmd_train(&config, train, dev, out, seed_flag, parallel)
        }
        Command::Eval { ckpt, data, parallel } => cmd_eval(&ckpt, &data, parallel),
        Command::Ablate { config, train, dev, test, seeds, out, parallel } => {
            cmd_ablate(&config, train, dev, test, seeds, out, seed_flag, parallel)
        }
        Command::Gradcheck { tol } => cmd_gradcheck(tol),
        Command::Bench { data, dim, hidden, epochs, batch, out, parallel } => {
            cmd_bench(&data, dim, hidden, epochs, batch, out, seed_flag, parallel)
        }
        Command::Dedup { input, threshold, out } => cmd_dedup(&input, threshold, out),
        Command::Gen { task, n, out } => cmd_gen(task, n, &out, seed_flag),
    }
}

/// `--seed` wins; `DSE_SEED` is the fallback; `None` defers to the
/// config file or the command's default.
fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("DSE_SEED") {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| CliError::config(format!("DSE_SEED: unparseable seed {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn exec_mode(parallel: bool) -> ExecMode {
    if parallel {
        ExecMode::Parallel
    } else {
        ExecMode::Sequential
    }
}

fn read_file(path: &Path, category: &'static str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError {
        category,
        message: format!("cannot read {}: {e}", path.display()),
    })
}

fn parse_conllu_file(path: &Path) -> Result<ParseOutcome, CliError> {
    let text = read_file(path, "data")?;
    parse_conllu(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn load_task(path: &Path) -> Result<TaskData, CliError> {
    let text = read_file(path, "data")?;
    parse_task_jsonl(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn cmd_parse(file: &Path, validate_only: bool) -> Result<(), CliError> {
    let outcome = parse_conllu_file(file)?;
    if !validate_only {
        for (i, s) in outcome.sentences.iter().enumerate() {
            let id = s.sent_id.clone().unwrap_or_else(|| (i + 1).to_string());
            println!("{id}\t{}", s.tokens.len());
        }
    }
    let tokens: usize = outcome.sentences.iter().map(|s| s.tokens.len()).sum();
    println!(
        "ok sentences={} tokens={} skipped_multiword={} skipped_empty={}",
        outcome.sentences.len(),
        tokens,
        outcome.skipped_multiword,
        outcome.skipped_empty_nodes
    );
    Ok(())
}

fn cmd_expand(file: &Path) -> Result<(), CliError> {
    let outcome = parse_conllu_file(file)?;
    let relvocab = RelationVocab::build(&outcome.sentences);
    let stdout = std::io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    for sentence in &outcome.sentences {
        let expanded = expand(sentence, &relvocab);
        for triple in &expanded.triples {
            let dep = &sentence.tokens[triple.dep_index].form;
            let rel = relvocab.label(triple.rel_id);
            let head = match triple.head_index {
                Some(h) => sentence.tokens[h].form.as_str(),
                None => "ROOT",
            };
            writeln!(w, "{dep}\t{rel}\t{head}")
                .map_err(|e| CliError::io(format!("stdout: {e}")))?;
        }
        writeln!(w).map_err(|e| CliError::io(format!("stdout: {e}")))?;
    }
    w.flush().map_err(|e| CliError::io(format!("stdout: {e}")))
}

/// Data-file locations a config may carry alongside the model fields.
#[derive(Default)]
struct DataPaths {
    train: Option<PathBuf>,
    dev: Option<PathBuf>,
    test: Option<PathBuf>,
}

/// Read a flat key-value config. `data.train` / `data.dev` / `data.test`
/// and a relative `external_path` resolve against the config file's
/// directory; every other key must be a model field.
fn load_config(path: &Path) -> Result<(ModelConfig, DataPaths), CliError> {
    let text = read_file(path, "config")?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut rest = String::new();
    let mut paths = DataPaths::default();
    for raw in text.lines() {
        let line = raw.trim();
        if let Some((k, v)) = line.split_once('=') {
            let slot = match k.trim() {
                "data.train" => Some(&mut paths.train),
                "data.dev" => Some(&mut paths.dev),
                "data.test" => Some(&mut paths.test),
                _ => None,
            };
            if let Some(slot) = slot {
                *slot = Some(resolve_rel(&dir, v.trim()));
                continue;
            }
        }
        rest.push_str(raw);
        rest.push('\n');
    }
    let mut config = ModelConfig::from_kv_text(&rest).map_err(|e| CliError::config(e.to_string()))?;
    if let Some(p) = config.external_path.take() {
        config.external_path = Some(resolve_rel(&dir, &p).display().to_string());
    }
    Ok((config, paths))
}

fn resolve_rel(dir: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    if p.is_absolute() {
        p
    } else {
        dir.join(p)
    }
}

/// Hold out every tenth record as the dev split.
fn holdout_split(data: TaskData) -> Result<(TaskData, TaskData), CliError> {
    fn split<T>(items: Vec<T>) -> (Vec<T>, Vec<T>) {
        let mut train = Vec::new();
        let mut dev = Vec::new();
        for (i, item) in items.into_iter().enumerate() {
            if i % 10 == 9 {
                dev.push(item);
            } else {
                train.push(item);
            }
        }
        (train, dev)
    }
    let (train, dev) = match data {
        TaskData::Cloze(qs) => {
            let (a, b) = split(qs);
            (TaskData::Cloze(a), TaskData::Cloze(b))
        }
        TaskData::Relation(rs) => {
            let (a, b) = split(rs);
            (TaskData::Relation(a), TaskData::Relation(b))
        }
    };
    if train.is_empty() || dev.is_empty() {
        return Err(CliError::data(
            "dataset too small to hold out a dev split; pass --dev".to_string(),
        ));
    }
    Ok((train, dev))
}

fn load_external(config: &ModelConfig) -> Result<Option<Vec<(String, Vec<f64>)>>, CliError> {
    if config.encoder != EncoderKind::ExternalFile {
        return Ok(None);
    }
    let path = config
        .external_path
        .as_ref()
        .ok_or_else(|| CliError::config("external_path: required for the external-file encoder".to_string()))?;
    let text = read_file(Path::new(path), "config")?;
    parse_embedding_file(&text, config.dim_word)
        .map(Some)
        .map_err(|e| CliError::config(format!("external_path: {e}")))
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config_path: &Path,
    train_flag: Option<PathBuf>,
    dev_flag: Option<PathBuf>,
    out: Option<PathBuf>,
    seed_flag: Option<u64>,
    parallel: bool,
) -> Result<(), CliError> {
    let started = now_unix();
    let (mut config, paths) = load_config(config_path)?;
    if let Some(s) = seed_flag {
        config.seed = s;
    }
    let train_path = train_flag.or(paths.train).ok_or_else(|| {
        CliError::config("data.train: missing (set it in the config or pass --train)".to_string())
    })?;
    let dev_path = dev_flag.or(paths.dev);
    let mut datasets = vec![dataset_ref("train", &train_path)?];
    let full_train = load_task(&train_path)?;
    let (train_set, dev_set) = match &dev_path {
        Some(p) => {
            datasets.push(dataset_ref("dev", p)?);
            (full_train, load_task(p)?)
        }
        None => holdout_split(full_train)?,
    };
    let external = load_external(&config)?;
    let outcome = train(&config, &train_set, &dev_set, external.as_deref(), exec_mode(parallel))
        .map_err(|e| CliError::model(e.to_string()))?;

    let dir = create_run_dir(out, config.seed, started)?;
    let ckpt_path = dir.join("model.ckpt");
    let meta = CheckpointMeta {
        config: outcome.model.config.clone(),
        words: outcome.model.words.clone(),
        rels: outcome.model.rels.clone(),
        task: outcome.task,
    };
    let file = File::create(&ckpt_path)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", ckpt_path.display())))?;
    let mut w = BufWriter::new(file);
    save_checkpoint(&mut w, &meta, &outcome.model.store)
        .map_err(|e| CliError::checkpoint(e.to_string()))?;
    w.flush()
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", ckpt_path.display())))?;

    let mut history = String::new();
    for record in &outcome.history {
        history.push_str(
            &serde_json::to_string(record)
                .map_err(|e| CliError::io(format!("history serialization: {e}")))?,
        );
        history.push('\n');
    }
    let hist_path = dir.join("history.jsonl");
    fs::write(&hist_path, history)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", hist_path.display())))?;

    let metrics = serde_json::json!({
        "task": outcome.task.to_string(),
        "best_epoch": outcome.best_epoch,
        "best_metric": outcome.best_metric,
    });
    let metrics_path = dir.join("metrics.json");
    fs::write(&metrics_path, metrics.to_string() + "\n")
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", metrics_path.display())))?;

    RunManifest::new("train", config.seed, Some(config.clone()), datasets, started).write(&dir)?;
    println!(
        "run={} task={} best_epoch={} best_metric={:.6}",
        dir.display(),
        outcome.task,
        outcome.best_epoch,
        outcome.best_metric
    );
    Ok(())
}

fn cmd_eval(ckpt: &Path, data: &Path, parallel: bool) -> Result<(), CliError> {
    let file = File::open(ckpt)
        .map_err(|e| CliError::checkpoint(format!("cannot read {}: {e}", ckpt.display())))?;
    let mut reader = BufReader::new(file);
    let (model, task) =
        load_checkpoint(&mut reader).map_err(|e| CliError::checkpoint(e.to_string()))?;
    let data_set = load_task(data)?;
    if data_set.kind() != task {
        return Err(CliError::data(format!(
            "checkpoint was trained for {task} but {} holds {} records",
            data.display(),
            data_set.kind()
        )));
    }
    let metrics = evaluate(&model, &data_set, exec_mode(parallel))
        .map_err(|e| CliError::model(e.to_string()))?;
    let line = serde_json::to_string(&metrics)
        .map_err(|e| CliError::io(format!("metrics serialization: {e}")))?;
    println!("{line}");
    Ok(())
}

fn fusion_name(fusion: FusionKind) -> &'static str {
    match fusion {
        FusionKind::Concat => "concat",
        FusionKind::Gate => "gate",
        FusionKind::HeadOnly => "head_only",
        FusionKind::WordOnly => "word_only",
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_ablate(
    config_path: &Path,
    train_flag: Option<PathBuf>,
    dev_flag: Option<PathBuf>,
    test_flag: Option<PathBuf>,
    seeds_flag: Option<String>,
    out: Option<PathBuf>,
    seed_flag: Option<u64>,
    parallel: bool,
) -> Result<(), CliError> {
    let started = now_unix();
    let (mut config, paths) = load_config(config_path)?;
    if let Some(s) = seed_flag {
        config.seed = s;
    }
    let train_path = train_flag.or(paths.train).ok_or_else(|| {
        CliError::config("data.train: missing (set it in the config or pass --train)".to_string())
    })?;
    let test_path = test_flag.or(paths.test).ok_or_else(|| {
        CliError::config("data.test: missing (set it in the config or pass --test)".to_string())
    })?;
    let dev_path = dev_flag.or(paths.dev);

    let mut datasets = vec![dataset_ref("train", &train_path)?];
    let full_train = load_task(&train_path)?;
    let (train_set, dev_set) = match &dev_path {
        Some(p) => {
            datasets.push(dataset_ref("dev", p)?);
            (full_train, load_task(p)?)
        }
        None => holdout_split(full_train)?,
    };
    datasets.push(dataset_ref("test", &test_path)?);
    let test_set = load_task(&test_path)?;

    let seeds: Vec<u64> = match seeds_flag {
        Some(list) => list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| CliError::config(format!("seeds: unparseable entry {s:?}")))
            })
            .collect::<Result<_, _>>()?,
        None => vec![config.seed, config.seed.wrapping_add(1), config.seed.wrapping_add(2)],
    };
    if seeds.is_empty() {
        return Err(CliError::config("seeds: empty list".to_string()));
    }

    let rows = run_ablation(&config, &train_set, &dev_set, &test_set, &seeds, exec_mode(parallel))
        .map_err(|e| CliError::model(e.to_string()))?;

    let dir = create_run_dir(out, config.seed, started)?;
    let rows_json = serde_json::to_string_pretty(&rows)
        .map_err(|e| CliError::io(format!("ablation serialization: {e}")))?;
    let rows_path = dir.join("ablation.json");
    fs::write(&rows_path, rows_json + "\n")
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", rows_path.display())))?;
    RunManifest::new("ablate", config.seed, Some(config.clone()), datasets, started).write(&dir)?;

    for row in &rows {
        println!(
            "fusion={} mean_accuracy={:.4} seeds={}",
            fusion_name(row.fusion),
            row.mean_accuracy,
            row.per_seed.len()
        );
    }
    println!("run={}", dir.display());
    Ok(())
}

fn cmd_gradcheck(tol: f64) -> Result<(), CliError> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(CliError::config(format!("tol: must be a positive number, got {tol}")));
    }
    let mut reports = op_suite(tol);
    reports.extend(pipeline_gradcheck(tol).map_err(|e| CliError::model(e.to_string()))?);
    let mut failed = 0usize;
    for (name, report) in &reports {
        let worst = report
            .params
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0_f64, f64::max);
        if report.passed() {
            println!("ok {name} max_rel_err={worst:.3e}");
        } else {
            failed += 1;
            println!("FAIL {name} max_rel_err={worst:.3e}");
        }
    }
    println!("checks={} failed={failed} tol={tol:e}", reports.len());
    if failed > 0 {
        return Err(CliError::gradcheck(format!(
            "{failed} of {} checks exceeded tolerance {tol:e}",
            reports.len()
        )));
    }
    Ok(())
}

/// Accept either a CoNLL-U file or a task JSONL file as a sentence source.
fn bench_sentences(path: &Path) -> Result<Vec<DepSentence>, CliError> {
    let text = read_file(path, "data")?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if first.trim_start().starts_with('{') {
        let data = parse_task_jsonl(&text)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        Ok(data.sentences().into_iter().cloned().collect())
    } else {
        let outcome =
            parse_conllu(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        Ok(outcome.sentences)
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    data: &Path,
    dim: usize,
    hidden: usize,
    epochs: usize,
    batch: usize,
    out: Option<PathBuf>,
    seed_flag: Option<u64>,
    parallel: bool,
) -> Result<(), CliError> {
    if hidden == 0 || hidden % 2 != 0 {
        return Err(CliError::config(format!(
            "hidden: must be positive and even to split across directions, got {hidden}"
        )));
    }
    if dim == 0 || epochs == 0 || batch == 0 {
        return Err(CliError::config(
            "dim/epochs/batch: must all be positive".to_string(),
        ));
    }
    let sentences = bench_sentences(data)?;
    if sentences.is_empty() {
        return Err(CliError::data(format!("{}: no sentences", data.display())));
    }
    let seed = seed_flag.unwrap_or(42);
    let report = bench_encoders(&sentences, dim, hidden, epochs, batch, seed, exec_mode(parallel))
        .map_err(|e| CliError::model(e.to_string()))?;
    println!("name\tseconds_per_epoch\ttokens");
    for row in &report.rows {
        println!("{}\t{:.6}\t{}", row.name, row.seconds_per_epoch, row.tokens);
    }
    println!("ratio\ttree_over_expansion\t{:.4}", report.tree_over_expansion);
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| CliError::io(format!("report serialization: {e}")))?;
        fs::write(&path, json + "\n")
            .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_dedup(input: &Path, threshold: usize, out: Option<PathBuf>) -> Result<(), CliError> {
    let text = read_file(input, "data")?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.is_empty() {
        return Err(CliError::data(format!("{}: no records", input.display())));
    }
    let stems: Vec<String> = if lines[0].trim_start().starts_with('{') {
        lines
            .iter()
            .enumerate()
            .map(|(i, line)| {
                let value: serde_json::Value = serde_json::from_str(line)
                    .map_err(|e| CliError::data(format!("line {}: {e}", i + 1)))?;
                value
                    .get("stem")
                    .and_then(|s| s.as_str())
                    .map(str::to_string)
                    .ok_or_else(|| CliError::data(format!("line {}: record has no stem", i + 1)))
            })
            .collect::<Result<_, _>>()?
    } else {
        lines.iter().map(|l| l.trim().to_string()).collect()
    };
    let kept = dedup_indices(&stems, |s| s.as_str(), threshold);
    let mut survivors = String::new();
    for &i in &kept {
        survivors.push_str(lines[i]);
        survivors.push('\n');
    }
    let summary = format!(
        "kept={} dropped={} threshold={threshold}",
        kept.len(),
        lines.len() - kept.len()
    );
    match out {
        Some(path) => {
            fs::write(&path, survivors)
                .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
            println!("{summary}");
        }
        None => {
            print!("{survivors}");
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn cmd_gen(task: TaskArg, n: usize, out: &Path, seed_flag: Option<u64>) -> Result<(), CliError> {
    let started = now_unix();
    let seed = seed_flag.unwrap_or(42);
    let spec = GrammarSpec::new(seed);
    let mut jsonl = String::new();
    let mut conllu = String::new();
    let count = match task {
        TaskArg::Cloze => {
            let records = gen_cloze(&spec, n);
            for r in &records {
                jsonl.push_str(
                    &serde_json::to_string(r)
                        .map_err(|e| CliError::io(format!("record serialization: {e}")))?,
                );
                jsonl.push('\n');
                conllu.push_str(r.conllu[r.answer].trim_end());
                conllu.push_str("\n\n");
            }
            records.len()
        }
        TaskArg::Relation => {
            let records = gen_relation(&spec, n);
            for r in &records {
                jsonl.push_str(
                    &serde_json::to_string(r)
                        .map_err(|e| CliError::io(format!("record serialization: {e}")))?,
                );
                jsonl.push('\n');
                conllu.push_str(r.conllu.trim_end());
                conllu.push_str("\n\n");
            }
            records.len()
        }
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::io(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    let jsonl_path = PathBuf::from(format!("{}.jsonl", out.display()));
    let conllu_path = PathBuf::from(format!("{}.conllu", out.display()));
    fs::write(&jsonl_path, jsonl)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", jsonl_path.display())))?;
    fs::write(&conllu_path, conllu)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", conllu_path.display())))?;

    let datasets: Vec<DatasetRef> = vec![
        dataset_ref("jsonl", &jsonl_path)?,
        dataset_ref("conllu", &conllu_path)?,
    ];
    let manifest_path = PathBuf::from(format!("{}.manifest.json", out.display()));
    RunManifest::new("gen", seed, None, datasets, started).write_to(&manifest_path)?;
    println!(
        "wrote records={count} jsonl={} conllu={} manifest={}",
        jsonl_path.display(),
        conllu_path.display(),
        manifest_path.display()
    );
    Ok(())
}

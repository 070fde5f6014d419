//! Operator surface: benchmark construction, span prep, two-stage training,
//! evaluation and reporting.
//!
//! Exit codes: 0 success, 2 configuration error, 3 dependency error,
//! 4 runtime failure.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use auricle::bench::{read_dataset, write_dataset, BenchManifest, TaskKind};
use auricle::builder::{build_comparison_dataset, load_annotations, BuildParams};
use auricle::client::HttpCompletionClient;
use auricle::config::{EncoderKind, RunConfig, SpanSource};
use auricle::error::Error;
use auricle::eval::{
    evaluate, report, EvalResult, MajorityBaseline, PlainDecodeEngine, PromptTemplate,
};
use auricle::imagine::{
    HashedNgramEncoder, ImagineEngine, Projector, ProjectorConfig, TextEncoder,
};
use auricle::manifest::{atomic_write, RunManifest};
use auricle::pitchworld::{PitchWorld, WorldConfig};
use auricle::spanprep::{
    annotate_batch_with_client, annotate_with_template, read_examples, write_examples,
    AnnotatePolicy, ImaginationExample,
};
use auricle::tinylm::{Checkpoint, Tokenizer};
use auricle::trainer::{train_stage1, train_stage2};

#[derive(Parser)]
#[command(name = "auricle", version, about = "Auditory-knowledge benchmarks and imagination-augmented decoding")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, default_value = "auricle.toml")]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured output root.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build comparison benchmarks from segment annotations.
    BuildBench,
    /// Produce Stage-1 training data (synthetic world or annotated triples).
    PrepSpans,
    /// Run one training stage.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
    },
    /// Evaluate engines over configured datasets.
    Eval {
        /// Restrict to these task names (comma-separated).
        #[arg(long, value_delimiter = ',')]
        task: Vec<String>,
    },
    /// Render a report table from result JSON files.
    Report {
        results: Vec<PathBuf>,
        #[arg(long)]
        baseline: Option<String>,
    },
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Template(_) | Error::TokenConflict(_) => 2,
        Error::Dependency(_) => 3,
        _ => 4,
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.paths.out_dir = out.clone();
    }
    fs::create_dir_all(&cfg.paths.out_dir).map_err(|e| Error::io(&cfg.paths.out_dir, e))?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.command {
        Command::BuildBench => cmd_build_bench(&load_config(&cli)?),
        Command::PrepSpans => cmd_prep_spans(&load_config(&cli)?),
        Command::Train { stage } => cmd_train(&load_config(&cli)?, *stage),
        Command::Eval { task } => cmd_eval(&load_config(&cli)?, task),
        Command::Report { results, baseline } => cmd_report(results, baseline.as_deref()),
    }
}

fn manifest_base(cfg: &RunConfig, command: &str) -> RunManifest {
    let mut m = RunManifest::new(command, cfg.seed);
    m.config = serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null);
    m
}

fn cmd_build_bench(cfg: &RunConfig) -> Result<(), Error> {
    let bench = cfg
        .bench
        .as_ref()
        .ok_or_else(|| Error::Config("missing [bench] section".into()))?;
    if !bench.annotations.exists() {
        return Err(Error::Config(format!(
            "annotation file {} does not exist",
            bench.annotations.display()
        )));
    }
    let started = Instant::now();
    let mut manifest = manifest_base(cfg, "build-bench");
    manifest.record_input("annotations", &bench.annotations)?;

    let annotations = load_annotations(&bench.annotations)?;
    let bench_dir = cfg.paths.out_dir.join("bench");
    fs::create_dir_all(&bench_dir).map_err(|e| Error::io(&bench_dir, e))?;
    let mut bench_manifest = BenchManifest::default();
    for &measure in &bench.measures {
        let mut params = BuildParams::new(measure, cfg.seed);
        params.min_n = bench.min_n;
        params.alpha = bench.alpha;
        let outcome = build_comparison_dataset(&annotations, &params)?;
        let data_path = bench_dir.join(format!("{}.jsonl", measure.as_str()));
        write_dataset(&outcome.dataset, &data_path)?;
        let audit_path = bench_dir.join(format!("{}-audit.json", measure.as_str()));
        atomic_write(
            &audit_path,
            &serde_json::to_vec_pretty(&outcome.audit).expect("audit serialization"),
        )?;
        bench_manifest.insert_file(measure.task(), &data_path)?;
        manifest.record_output(&format!("{}-dataset", measure.as_str()), &data_path)?;
        manifest.record_output(&format!("{}-audit", measure.as_str()), &audit_path)?;
        println!(
            "{}: {} items ({} classes, {} pairs evaluated)",
            measure.as_str(),
            outcome.dataset.len(),
            outcome.audit.classes.len(),
            outcome.audit.pairs.len()
        );
    }
    let manifest_path = bench_dir.join("manifest.json");
    bench_manifest.write(&manifest_path)?;
    manifest.record_output("manifest", &manifest_path)?;
    manifest.wall_clock_s = started.elapsed().as_secs_f64();
    manifest.write(cfg.paths.out_dir.join("build-bench-manifest.json"))?;
    Ok(())
}

/// Triples file row for the non-synthetic span sources.
#[derive(serde::Deserialize)]
struct TripleRecord {
    context: String,
    span: String,
    answer: String,
}

fn cmd_prep_spans(cfg: &RunConfig) -> Result<(), Error> {
    let started = Instant::now();
    let mut manifest = manifest_base(cfg, "prep-spans");
    let template = PromptTemplate::default_qa();

    let examples: Vec<ImaginationExample> = match cfg.spans.source {
        SpanSource::Synthetic => {
            let world_cfg = cfg.world.clone().unwrap_or(WorldConfig {
                seed: cfg.seed,
                ..WorldConfig::default()
            });
            let world = PitchWorld::generate(&world_cfg)?;
            let train = world.train_items(cfg.spans.synthetic_train, cfg.seed ^ 0xA11CE)?;
            let test = world.test_items(cfg.spans.synthetic_test, cfg.seed ^ 0xB0B)?;
            world.save(cfg.world_path())?;
            write_dataset(&test, cfg.test_items_path())?;
            manifest.record_output("world", cfg.world_path())?;
            manifest.record_output("test-items", cfg.test_items_path())?;
            train
                .items
                .iter()
                .map(|item| PitchWorld::example_for_item(item, &template))
                .collect::<Result<_, _>>()?
        }
        SpanSource::Triples | SpanSource::Client => {
            let input = cfg.spans.input.as_ref().ok_or_else(|| {
                Error::Config("spans.input is required for triple sources".into())
            })?;
            if !input.exists() {
                return Err(Error::Config(format!(
                    "triples file {} does not exist",
                    input.display()
                )));
            }
            manifest.record_input("triples", input)?;
            let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
            let triples: Vec<TripleRecord> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .enumerate()
                .map(|(i, line)| {
                    serde_json::from_str(line).map_err(|e| Error::Parse {
                        path: input.clone(),
                        line: i + 1,
                        msg: e.to_string(),
                    })
                })
                .collect::<Result<_, _>>()?;
            if cfg.spans.source == SpanSource::Client {
                let client_cfg = cfg
                    .client
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing [client] section".into()))?;
                let client = HttpCompletionClient::from_config(client_cfg)?;
                let policy = AnnotatePolicy {
                    max_attempts: client_cfg.max_attempts,
                    ..Default::default()
                };
                let triples: Vec<(String, String, String)> = triples
                    .into_iter()
                    .map(|t| (t.context, t.span, t.answer))
                    .collect();
                annotate_batch_with_client(&triples, &client, &policy, client_cfg.max_concurrency)?
            } else {
                triples
                    .iter()
                    .map(|t| annotate_with_template(&t.context, &t.span, &t.answer))
                    .collect::<Result<_, _>>()?
            }
        }
    };

    write_examples(&examples, cfg.spans_path())?;
    manifest.record_output("spans", cfg.spans_path())?;
    manifest.wall_clock_s = started.elapsed().as_secs_f64();
    manifest.write(cfg.paths.out_dir.join("prep-spans-manifest.json"))?;
    println!("wrote {} examples to {}", examples.len(), cfg.spans_path().display());
    Ok(())
}

fn build_encoder(cfg: &RunConfig) -> Result<Box<dyn TextEncoder>, Error> {
    match cfg.encoder.kind {
        EncoderKind::Ngram => Ok(Box::new(HashedNgramEncoder::new(cfg.encoder.dim))),
        EncoderKind::PitchWorld => {
            let path = cfg.world_path();
            if !path.exists() {
                return Err(Error::Dependency(format!(
                    "world file {} not found; run prep-spans first",
                    path.display()
                )));
            }
            let world = PitchWorld::load(path)?;
            Ok(Box::new(world.encoder(cfg.encoder.dim)))
        }
    }
}

fn cmd_train(cfg: &RunConfig, stage: u8) -> Result<(), Error> {
    let started = Instant::now();
    let mut manifest = manifest_base(cfg, &format!("train --stage {stage}"));
    let spans_path = cfg.spans_path();
    if !spans_path.exists() {
        return Err(Error::Dependency(format!(
            "spans file {} not found; run prep-spans first",
            spans_path.display()
        )));
    }
    manifest.record_input("spans", &spans_path)?;
    let examples = read_examples(&spans_path)?;
    let ckpt_dir = cfg.paths.checkpoints();
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;

    let report = if stage == 1 {
        let tokenizer = Tokenizer::ascii().with_special_tokens(&[
            auricle::spanprep::OPEN_DELIM,
            auricle::spanprep::CLOSE_DELIM,
        ])?;
        let mut lm_cfg = cfg.model.clone();
        lm_cfg.vocab_size = tokenizer.vocab_size();
        lm_cfg.seed = cfg.seed;
        let mut model = auricle::tinylm::TinyLm::new(lm_cfg)?;
        let mut train_cfg = cfg.stage1.clone();
        train_cfg.seed = cfg.seed;
        train_stage1(&mut model, &tokenizer, &examples, &train_cfg, Some(&ckpt_dir))?
    } else {
        let stage1_path = cfg.stage1_checkpoint();
        if !stage1_path.exists() {
            return Err(Error::Dependency(format!(
                "stage-1 checkpoint {} not found; run train --stage 1 first",
                stage1_path.display()
            )));
        }
        manifest.record_input("stage1-checkpoint", &stage1_path)?;
        let (model, tokenizer) = Checkpoint::load(&stage1_path)?.restore()?;
        let encoder = build_encoder(cfg)?;
        let mut projector = Projector::new(ProjectorConfig {
            d_enc: cfg.encoder.dim,
            d_hidden: cfg.projector.d_hidden,
            d_model: model.cfg.d_model,
            seed: cfg.seed ^ 0x9E3779B9,
        })?;
        let mut train_cfg = cfg.stage2.clone();
        train_cfg.seed = cfg.seed;
        train_stage2(
            &model,
            &tokenizer,
            &mut projector,
            encoder.as_ref(),
            &examples,
            &train_cfg,
            Some(&ckpt_dir),
        )?
    };

    manifest.loss_curve = report.losses.clone();
    for path in &report.checkpoints {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        manifest.record_output(&name, path)?;
    }
    manifest.wall_clock_s = started.elapsed().as_secs_f64();
    manifest.write(
        cfg.paths
            .out_dir
            .join(format!("train-stage{stage}-manifest.json")),
    )?;
    let final_loss = report.losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "stage {stage}: {} optimizer steps, final loss {final_loss:.4}",
        report.losses.len()
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, task_filter: &[String]) -> Result<(), Error> {
    for t in task_filter {
        if TaskKind::parse(t).is_none() {
            return Err(Error::Config(format!(
                "unknown task '{t}'; valid tasks: pitch, duration, loudness, animal_sound, auditory_context"
            )));
        }
    }
    let eval_cfg = cfg
        .eval
        .as_ref()
        .ok_or_else(|| Error::Config("missing [eval] section".into()))?;
    let started = Instant::now();
    let mut manifest = manifest_base(cfg, "eval");
    let limits = eval_cfg.limits();
    let template = PromptTemplate::default_qa();

    let needs_model = eval_cfg.engines.iter().any(|e| e != "majority");
    let engine = if needs_model {
        let stage1_path = cfg.stage1_checkpoint();
        if !stage1_path.exists() {
            return Err(Error::Dependency(format!(
                "stage-1 checkpoint {} not found",
                stage1_path.display()
            )));
        }
        let (model, tokenizer) = Checkpoint::load(&stage1_path)?.restore()?;
        let projector_path = cfg.stage2_checkpoint();
        let projector = if projector_path.exists() {
            manifest.record_input("stage2-checkpoint", &projector_path)?;
            Projector::load(&projector_path)?
        } else {
            Projector::new(ProjectorConfig {
                d_enc: cfg.encoder.dim,
                d_hidden: cfg.projector.d_hidden,
                d_model: model.cfg.d_model,
                seed: cfg.seed ^ 0x9E3779B9,
            })?
        };
        manifest.record_input("stage1-checkpoint", &stage1_path)?;
        Some(
            ImagineEngine::new(model, tokenizer, projector, build_encoder(cfg)?)?
                .with_injection(eval_cfg.injection),
        )
    } else {
        None
    };

    let trace_dir = cfg.paths.out_dir.join("traces");
    fs::create_dir_all(&trace_dir).map_err(|e| Error::io(&trace_dir, e))?;
    let mut results: Vec<EvalResult> = Vec::new();
    let mut any_task_failed = false;
    for (task_name, path) in &eval_cfg.datasets {
        if !task_filter.is_empty() && !task_filter.contains(task_name) {
            continue;
        }
        if !path.exists() {
            return Err(Error::Dependency(format!(
                "dataset {} not found",
                path.display()
            )));
        }
        let dataset = read_dataset(path)?;
        manifest.record_input(&format!("dataset-{task_name}"), path)?;
        for engine_name in &eval_cfg.engines {
            let mut result = match engine_name.as_str() {
                "majority" => {
                    let baseline = MajorityBaseline::for_dataset(&dataset);
                    evaluate(&baseline, &dataset, &template, &limits)?
                }
                "imagine" => {
                    let engine = engine.as_ref().expect("model loaded for imagine engine");
                    evaluate(engine, &dataset, &template, &limits)?
                }
                "no-injection" => {
                    let engine = engine.as_ref().expect("model loaded for plain engine");
                    evaluate(
                        &PlainDecodeEngine {
                            engine,
                            label: "no-injection".into(),
                        },
                        &dataset,
                        &template,
                        &limits,
                    )?
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown engine '{other}'; valid engines: majority, imagine, no-injection"
                    )))
                }
            };
            if result.items.iter().all(|r| r.error.is_some()) && !result.items.is_empty() {
                any_task_failed = true;
            }
            // extract traces to files, leaving references in the result
            for record in &mut result.items {
                if let Some(trace) = record.trace.take() {
                    let name = format!("{}-{}-{}.json", task_name, result.engine, record.id);
                    let path = trace_dir.join(&name);
                    atomic_write(
                        &path,
                        &serde_json::to_vec(&trace).expect("trace serialization"),
                    )?;
                    record.trace_ref = Some(name);
                }
            }
            println!(
                "{:<18} {:<12} accuracy {:.2}% ({} / {}, {} unparsed)",
                result.engine,
                task_name,
                result.accuracy * 100.0,
                result.n_correct,
                result.n,
                result.n_unparsed
            );
            results.push(result);
        }
    }

    let results_path = cfg.paths.out_dir.join("eval-results.json");
    atomic_write(
        &results_path,
        &serde_json::to_vec_pretty(&results).expect("results serialization"),
    )?;
    manifest.record_output("results", &results_path)?;
    let rep = report(&results, Some("Majority Class"));
    println!("\n{}", rep.table);
    let report_path = cfg.paths.out_dir.join("report.json");
    atomic_write(
        &report_path,
        &serde_json::to_vec_pretty(&rep).expect("report serialization"),
    )?;
    manifest.record_output("report", &report_path)?;
    manifest.wall_clock_s = started.elapsed().as_secs_f64();
    manifest.write(cfg.paths.out_dir.join("eval-manifest.json"))?;
    if any_task_failed {
        return Err(Error::Domain("at least one task failed entirely".into()));
    }
    Ok(())
}

fn cmd_report(result_files: &[PathBuf], baseline: Option<&str>) -> Result<(), Error> {
    let mut results: Vec<EvalResult> = Vec::new();
    for path in result_files {
        if !path.exists() {
            return Err(Error::Dependency(format!("{} not found", path.display())));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut batch: Vec<EvalResult> =
            serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
                path: path.clone(),
                line: 0,
                msg: e.to_string(),
            })?;
        results.append(&mut batch);
    }
    let rep = report(&results, baseline);
    println!("{}", rep.table);
    Ok(())
}

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use uner::codecs::io::{convert, read_corpus, ReadOptions};
use uner::codecs::{validate, Format, SimpleTokenizer, Tokenizer, WhitespaceTokenizer};
use uner::evaluation::{MatchLevel, SURFACE_HEAD};
use uner::kb::{CorrectionAction, CorrectionPolicy};
use uner::pipeline::{
    apply_verdicts_stage, correct_stage, export_stage, merge_stage, project_stage, require, run_pipeline, score_stage,
    stats_stage, Context, CorrectOptions, PipelineConfig, PipelineError,
};
use uner::projection::{OnCollision, ProjectionConfig};
use uner::review::{generate_tasks, read_tasks, write_tasks, ReviewService, Sampling, DEFAULT_QUORUM};

#[derive(Parser)]
#[command(name = "uner", version, about = "UNER named-entity corpus toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Taxonomy JSON file (defaults to the shipped UNER taxonomy).
    #[arg(long, global = true)]
    taxonomy: Option<PathBuf>,
    /// Extra scheme mapping tables (TSV), added to the shipped ones.
    #[arg(long, global = true)]
    schemes: Vec<PathBuf>,
    /// Forbid all network use.
    #[arg(long, global = true)]
    offline: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check a taxonomy file and print its level counts.
    ValidateTaxonomy,
    /// Check every document of an interchange corpus.
    Validate {
        #[arg(long)]
        input: PathBuf,
    },
    /// Convert between spans (JSONL), IOB2 and inline XML.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        from: Format,
        #[arg(long)]
        to: Format,
        /// Language code for formats that do not carry one.
        #[arg(long, default_value = "und")]
        lang: String,
        /// Source tag for spans read from IOB2 or XML.
        #[arg(long, default_value = "import")]
        source: String,
        /// Tokenizer for inline XML input: whitespace or simple.
        #[arg(long, default_value = "whitespace")]
        tokenizer: String,
    },
    /// Merge model runs listed in a manifest, highest recall first.
    Merge {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Correct labels against knowledge-base classes.
    Correct {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Offline fixture store (JSONL).
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Live SPARQL endpoint as KB=URL; repeatable.
        #[arg(long = "endpoint")]
        endpoints: Vec<String>,
        #[arg(long)]
        kb_mappings: Option<PathBuf>,
        /// Comma-separated knowledge-base precedence.
        #[arg(long, default_value = "wikidata,dbpedia,yago")]
        precedence: String,
        /// refine-only, replace or annotate-only.
        #[arg(long, default_value = "refine-only")]
        action: CorrectionAction,
    },
    /// Project source spans onto aligned target sentences.
    Project {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Pharaoh alignments: pair_id<TAB>i-j i-j ...
        #[arg(long)]
        alignments: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        min_coverage: f64,
        /// drop or keep-first.
        #[arg(long, default_value = "drop")]
        on_collision: OnCollision,
    },
    /// Span-level precision, recall and F1.
    Score {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// exact, 1, 2, 3 or 4.
        #[arg(long, default_value = "exact")]
        level: String,
        #[arg(long)]
        report: PathBuf,
    },
    /// Label distribution profile of a corpus.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = SURFACE_HEAD)]
        head: usize,
    },
    /// Split a corpus 80/10/10 into train, dev and test files.
    Export {
        #[arg(long)]
        input: PathBuf,
        /// spans or iob2.
        #[arg(long, default_value = "spans")]
        format: Format,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate review tasks.
    Tasks {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// all, per-label-quota:N or random:FRACTION:SEED.
        #[arg(long, default_value = "all")]
        sampling: String,
    },
    /// Serve review tasks over HTTP.
    Serve {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Stop handing out a task once it has this many verdicts.
        #[arg(long, default_value_t = DEFAULT_QUORUM)]
        quorum: usize,
        /// Directory of static files served for other GET paths.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        threads: usize,
    },
    /// Apply majority verdicts to a corpus.
    ApplyVerdicts {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = DEFAULT_QUORUM)]
        quorum: usize,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the configured pipeline.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        min_coverage: Option<f64>,
        #[arg(long)]
        on_collision: Option<OnCollision>,
        #[arg(long)]
        level: Option<String>,
        #[arg(long)]
        quorum: Option<usize>,
        #[arg(long)]
        action: Option<CorrectionAction>,
    },
}

fn data_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Stage {
        stage: "cli",
        source: anyhow::anyhow!("{e}"),
    }
}

fn config_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(e.to_string())
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn context(global: &Global) -> Result<Context, PipelineError> {
    Context::load(global.taxonomy.as_deref(), &global.schemes)
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    let global = &cli.global;
    match cli.command {
        Command::ValidateTaxonomy => {
            let ctx = context(global)?;
            let counts = ctx.taxonomy.level_counts();
            println!("level counts: {counts:?}");
            println!("nodes below root: {}", ctx.taxonomy.len());
        }
        Command::Validate { input } => {
            let ctx = context(global)?;
            require(&input, "corpus")?;
            let docs = read_corpus(&input).map_err(data_err)?;
            let mut bad = 0;
            for doc in &docs {
                for v in validate(doc, &ctx.taxonomy) {
                    bad += 1;
                    println!("{}: {v}", doc.doc_id);
                }
            }
            if bad > 0 {
                return Err(data_err(format!("{bad} violations in {} documents", docs.len())));
            }
            println!("{} documents, no violations", docs.len());
        }
        Command::Convert {
            input,
            output,
            from,
            to,
            lang,
            source,
            tokenizer,
        } => {
            require(&input, "input")?;
            let tokenizer: &dyn Tokenizer = match tokenizer.as_str() {
                "whitespace" => &WhitespaceTokenizer,
                "simple" => &SimpleTokenizer,
                other => return Err(config_err(format!("unknown tokenizer {other:?}"))),
            };
            let reader = BufReader::new(File::open(&input).map_err(data_err)?);
            let writer = BufWriter::new(File::create(&output).map_err(data_err)?);
            let options = ReadOptions {
                lang: &lang,
                source: &source,
                tokenizer,
            };
            let summary = convert(reader, writer, from, to, &options).map_err(data_err)?;
            for (doc, warning) in &summary.warnings {
                log::warn!("document {doc}: {warning}");
            }
            println!(
                "converted {} documents, {} spans, {} warnings",
                summary.documents,
                summary.spans,
                summary.warnings.len()
            );
        }
        Command::Merge {
            manifest,
            output,
            report,
        } => {
            let ctx = context(global)?;
            let r = merge_stage(&ctx, &manifest, &output, report.as_deref())?;
            println!(
                "{} occurrences, {} distinct surfaces",
                r.occurrences(),
                r.distinct_surfaces()
            );
        }
        Command::Correct {
            input,
            output,
            report,
            fixtures,
            endpoints,
            kb_mappings,
            precedence,
            action,
        } => {
            let ctx = context(global)?;
            let endpoints = endpoints
                .iter()
                .map(|e| {
                    e.split_once('=')
                        .map(|(k, u)| (k.to_string(), u.to_string()))
                        .ok_or_else(|| config_err(format!("endpoint {e:?} is not KB=URL")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let precedence = precedence
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
            let options = CorrectOptions {
                fixtures,
                endpoints,
                kb_mappings,
                policy: CorrectionPolicy::new(precedence, action).map_err(config_err)?,
                offline: global.offline,
            };
            let r = correct_stage(&ctx, &input, &output, report.as_deref(), &options)?;
            print_json(&r.correction.summary());
            println!("network calls: {}", r.network_calls);
        }
        Command::Project {
            source,
            target,
            alignments,
            output,
            report,
            min_coverage,
            on_collision,
        } => {
            let ctx = context(global)?;
            let config = ProjectionConfig::new(min_coverage, on_collision).map_err(config_err)?;
            let r = project_stage(&ctx, &source, &target, &alignments, &config, &output, report.as_deref())?;
            print_json(&r.counts);
        }
        Command::Score {
            gold,
            pred,
            level,
            report,
        } => {
            let level: MatchLevel = level.parse().map_err(config_err)?;
            let r = score_stage(&gold, &pred, level, &report)?;
            print!("{}", r.table());
        }
        Command::Stats { input, report, head } => {
            let ctx = context(global)?;
            let r = stats_stage(&ctx, &input, &report, head)?;
            println!(
                "{} documents, {} spans, {} taxonomy nodes without examples",
                r.documents,
                r.total_spans,
                r.zero_examples.len()
            );
        }
        Command::Export { input, format, out_dir } => {
            let r = export_stage(&input, format, &out_dir)?;
            println!("train {}, dev {}, test {}", r.train, r.dev, r.test);
        }
        Command::Tasks {
            input,
            output,
            sampling,
        } => {
            let ctx = context(global)?;
            let sampling: Sampling = sampling.parse().map_err(config_err)?;
            require(&input, "corpus")?;
            let docs = read_corpus(&input).map_err(data_err)?;
            let tasks = generate_tasks(&docs, sampling, &ctx.taxonomy);
            write_tasks(&output, &tasks).map_err(data_err)?;
            println!("{} tasks", tasks.len());
        }
        Command::Serve {
            tasks,
            log,
            port,
            host,
            quorum,
            static_dir,
            threads,
        } => {
            let ctx = context(global)?;
            require(&tasks, "task file")?;
            let task_set = read_tasks(&tasks).map_err(data_err)?;
            let mut service = ReviewService::new(task_set, &log, ctx.taxonomy, Some(quorum)).map_err(data_err)?;
            if let Some(dir) = static_dir {
                require(&dir, "static directory")?;
                service = service.with_static_dir(dir);
            }
            let server = service.start(&format!("{host}:{port}"), threads).map_err(config_err)?;
            println!("serving on http://{}", server.addr());
            server.join();
        }
        Command::ApplyVerdicts {
            input,
            tasks,
            log,
            quorum,
            output,
            report,
        } => {
            let ctx = context(global)?;
            let r = apply_verdicts_stage(&ctx, &input, &tasks, &log, quorum, &output, report.as_deref())?;
            println!(
                "accepted {}, rejected {}, relabeled {}, flagged {}, below quorum {}",
                r.accepted,
                r.rejected,
                r.relabeled,
                r.flagged.len(),
                r.quorum_unmet.len()
            );
        }
        Command::Run {
            config,
            output_dir,
            min_coverage,
            on_collision,
            level,
            quorum,
            action,
        } => {
            let mut pipeline = PipelineConfig::load(&config)?;
            let cwd = Path::new(".");
            if let Some(t) = &global.taxonomy {
                pipeline.taxonomy = Some(cwd.join(t));
            }
            pipeline.schemes.extend(global.schemes.iter().cloned());
            pipeline.offline |= global.offline;
            if let Some(dir) = output_dir {
                pipeline.output_dir = dir;
            }
            if let Some(p) = &mut pipeline.project {
                p.min_coverage = min_coverage.unwrap_or(p.min_coverage);
                p.on_collision = on_collision.unwrap_or(p.on_collision);
            }
            if let (Some(s), Some(level)) = (&mut pipeline.score, level) {
                s.level = level;
            }
            if let (Some(r), Some(q)) = (&mut pipeline.review, quorum) {
                r.quorum = q;
            }
            if let (Some(c), Some(a)) = (&mut pipeline.correct, action) {
                c.action = a.to_string();
            }
            let summary = run_pipeline(&pipeline)?;
            for (stage, path) in &summary.outputs {
                println!("{stage:<15} {}", path.display());
            }
            for (name, score) in [("source", &summary.score), ("target", &summary.target_score)] {
                if let Some(s) = score {
                    println!("{name} F1 ({}): {:.4}", s.match_level, s.f1);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

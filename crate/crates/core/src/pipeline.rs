//! Stage runners shared by the CLI subcommands and the `run` orchestrator.
//!
//! Every stage reads its inputs from disk, writes its outputs atomically and
//! leaves a `<output>.provenance.json` record next to each output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codecs::io::{read_corpus, write_atomic, write_corpus};
use crate::codecs::{validate, AnnotatedDocument, Format};
use crate::ensemble::{load_manifest, load_runs, merge_corpus, MergeReport};
use crate::evaluation::{
    distribution_report_with_head, export_training, score, DistributionReport, ExportSummary, MatchLevel, ScoreReport,
    SURFACE_HEAD,
};
use crate::kb::{
    correct_corpus, CorrectionAction, CorrectionPolicy, CorrectionReport, FixtureClient, KbCache, KbClient, KbMappings,
    SparqlClient,
};
use crate::projection::{
    build_pairs, project_corpus, read_alignments, OnCollision, ProjectionConfig, ProjectionReport,
};
use crate::review::{apply_verdicts, read_tasks, read_verdict_log, AdjudicationReport, DEFAULT_QUORUM};
use crate::taxonomy::{SchemeRegistry, Taxonomy};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    /// Bad configuration or missing input; nothing was run.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {source:#}")]
    Stage {
        stage: &'static str,
        #[source]
        source: anyhow::Error,
    },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { .. } => 1,
        }
    }
}

fn stage_err<E: Into<anyhow::Error>>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        source: e.into(),
    }
}

pub fn require(path: &Path, what: &str) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::Config(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

/// Taxonomy and scheme tables every stage works against.
pub struct Context {
    pub taxonomy: Taxonomy,
    pub schemes: SchemeRegistry,
    taxonomy_path: Option<PathBuf>,
    scheme_paths: Vec<PathBuf>,
}

impl Context {
    /// Load a taxonomy (the shipped one when `None`) and the shipped scheme
    /// tables extended with `scheme_paths`.
    pub fn load(taxonomy_path: Option<&Path>, scheme_paths: &[PathBuf]) -> Result<Self, PipelineError> {
        let config = |e: &dyn std::fmt::Display| PipelineError::Config(e.to_string());
        let taxonomy = match taxonomy_path {
            Some(p) => {
                require(p, "taxonomy")?;
                Taxonomy::from_path(p).map_err(|e| config(&e))?
            }
            None => Taxonomy::uner(),
        };
        let mut schemes = SchemeRegistry::shipped(&taxonomy).map_err(|e| config(&e))?;
        for p in scheme_paths {
            require(p, "scheme mapping")?;
            let text = std::fs::read_to_string(p).map_err(|e| config(&e))?;
            schemes.extend_from_tsv(&text, &taxonomy).map_err(|e| config(&e))?;
        }
        Ok(Context {
            taxonomy,
            schemes,
            taxonomy_path: taxonomy_path.map(Path::to_path_buf),
            scheme_paths: scheme_paths.to_vec(),
        })
    }

    fn args(&self) -> Vec<String> {
        let mut args = Vec::new();
        if let Some(p) = &self.taxonomy_path {
            args.extend(["--taxonomy".to_string(), p.display().to_string()]);
        }
        for p in &self.scheme_paths {
            args.extend(["--schemes".to_string(), p.display().to_string()]);
        }
        args
    }

    fn inputs(&self) -> Vec<&Path> {
        self.taxonomy_path
            .iter()
            .chain(self.scheme_paths.iter())
            .map(PathBuf::as_path)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> std::io::Result<FileDigest> {
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&std::fs::read(path)?),
    })
}

/// What produced an output file and how to produce it again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    pub tool: String,
    pub command: Vec<String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub parameters: serde_json::Value,
    pub config_digest: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

pub fn provenance_path(output: &Path) -> PathBuf {
    let name = output
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    output.with_file_name(format!("{name}.provenance.json"))
}

struct StageRecord<'a> {
    stage: &'static str,
    command: Vec<String>,
    inputs: Vec<&'a Path>,
    outputs: Vec<&'a Path>,
    parameters: serde_json::Value,
}

impl StageRecord<'_> {
    fn write(self) -> Result<(), PipelineError> {
        let stage = self.stage;
        let digest_all = |paths: &[&Path]| -> Result<Vec<FileDigest>, PipelineError> {
            paths.iter().map(|p| file_digest(p).map_err(stage_err(stage))).collect()
        };
        let mut command = vec!["uner".to_string(), stage.to_string()];
        command.extend(self.command);
        let record = Provenance {
            stage: stage.to_string(),
            tool: concat!("uner ", env!("CARGO_PKG_VERSION")).to_string(),
            config_digest: sha256_hex(self.parameters.to_string().as_bytes()),
            command,
            inputs: digest_all(&self.inputs)?,
            outputs: digest_all(&self.outputs)?,
            parameters: self.parameters,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        for output in &self.outputs {
            write_json(&provenance_path(output), &record).map_err(stage_err(stage))?;
        }
        Ok(())
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), crate::codecs::CodecError> {
    let mut body = serde_json::to_string_pretty(value).expect("report serializes");
    body.push('\n');
    write_atomic(path, |w| std::io::Write::write_all(w, body.as_bytes()))
}

fn path_arg(flag: &str, path: &Path) -> [String; 2] {
    [flag.to_string(), path.display().to_string()]
}

fn read_stage_corpus(stage: &'static str, path: &Path) -> Result<Vec<AnnotatedDocument>, PipelineError> {
    require(path, "corpus")?;
    read_corpus(path).map_err(stage_err(stage))
}

/// Validate every document, then write the corpus.
fn write_stage_corpus(
    stage: &'static str,
    ctx: &Context,
    path: &Path,
    docs: &[AnnotatedDocument],
) -> Result<(), PipelineError> {
    for doc in docs {
        if let Some(v) = validate(doc, &ctx.taxonomy).first() {
            return Err(PipelineError::Stage {
                stage,
                source: anyhow::anyhow!("output document {:?} is invalid: {v}", doc.doc_id),
            });
        }
    }
    write_corpus(path, docs).map_err(stage_err(stage))
}

pub fn merge_stage(
    ctx: &Context,
    manifest: &Path,
    output: &Path,
    report: Option<&Path>,
) -> Result<MergeReport, PipelineError> {
    const STAGE: &str = "merge";
    require(manifest, "run manifest")?;
    let entries = load_manifest(manifest).map_err(|e| PipelineError::Config(e.to_string()))?;
    for e in &entries {
        require(&e.corpus_path, "model run corpus")?;
    }
    let runs = load_runs(&entries).map_err(stage_err(STAGE))?;
    let (corpus, merge_report) = merge_corpus(&runs, &ctx.taxonomy, &ctx.schemes).map_err(stage_err(STAGE))?;
    write_stage_corpus(STAGE, ctx, output, &corpus)?;
    let mut outputs = vec![output];
    if let Some(r) = report {
        write_json(r, &merge_report).map_err(stage_err(STAGE))?;
        outputs.push(r);
    }
    let mut inputs = ctx.inputs();
    inputs.push(manifest);
    inputs.extend(entries.iter().map(|e| e.corpus_path.as_path()));
    let mut command = ctx.args();
    command.extend(path_arg("--manifest", manifest));
    command.extend(path_arg("--output", output));
    if let Some(r) = report {
        command.extend(path_arg("--report", r));
    }
    StageRecord {
        stage: STAGE,
        command,
        inputs,
        outputs,
        parameters: serde_json::json!({
            "taxonomy": ctx.taxonomy_path,
            "schemes": ctx.scheme_paths,
            "manifest": manifest,
        }),
    }
    .write()?;
    Ok(merge_report)
}

#[derive(Debug, Clone, Default)]
pub struct CorrectOptions {
    pub fixtures: Option<PathBuf>,
    /// `(kb_id, SPARQL endpoint URL)` pairs.
    pub endpoints: Vec<(String, String)>,
    pub kb_mappings: Option<PathBuf>,
    pub policy: CorrectionPolicy,
    pub offline: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrectStageReport {
    #[serde(flatten)]
    pub correction: CorrectionReport,
    pub client_calls: usize,
    pub network_calls: usize,
}

impl CorrectOptions {
    /// Offline runs and runs without endpoints use the fixture store.
    fn client(&self) -> Result<Box<dyn KbClient>, PipelineError> {
        if self.offline || self.endpoints.is_empty() {
            let Some(fixtures) = &self.fixtures else {
                return Err(PipelineError::Config(if self.offline {
                    "offline correction needs a fixture store".into()
                } else {
                    "correction needs a fixture store or at least one endpoint".into()
                }));
            };
            require(fixtures, "KB fixture store")?;
            let client = FixtureClient::from_path(fixtures).map_err(|e| PipelineError::Config(e.to_string()))?;
            return Ok(Box::new(client));
        }
        Ok(Box::new(SparqlClient::new(self.endpoints.clone())))
    }
}

pub fn correct_stage(
    ctx: &Context,
    input: &Path,
    output: &Path,
    report: Option<&Path>,
    options: &CorrectOptions,
) -> Result<CorrectStageReport, PipelineError> {
    const STAGE: &str = "correct";
    let client = options.client()?;
    let mappings = match &options.kb_mappings {
        Some(p) => {
            require(p, "KB mapping table")?;
            KbMappings::from_path(p, &ctx.taxonomy)
        }
        None => KbMappings::shipped(&ctx.taxonomy),
    }
    .map_err(|e| PipelineError::Config(e.to_string()))?;
    let docs = read_stage_corpus(STAGE, input)?;
    let cache = KbCache::new();
    let (corrected, correction) =
        correct_corpus(&docs, client.as_ref(), &cache, &mappings, &options.policy).map_err(stage_err(STAGE))?;
    write_stage_corpus(STAGE, ctx, output, &corrected)?;
    let stage_report = CorrectStageReport {
        correction,
        client_calls: client.calls(),
        network_calls: client.network_calls(),
    };
    let mut outputs = vec![output];
    if let Some(r) = report {
        write_json(r, &stage_report).map_err(stage_err(STAGE))?;
        outputs.push(r);
    }
    let mut inputs = ctx.inputs();
    inputs.push(input);
    let uses_fixtures = options.offline || options.endpoints.is_empty();
    if let (true, Some(f)) = (uses_fixtures, &options.fixtures) {
        inputs.push(f);
    }
    if let Some(m) = &options.kb_mappings {
        inputs.push(m);
    }
    let mut command = ctx.args();
    command.extend(path_arg("--input", input));
    command.extend(path_arg("--output", output));
    if let Some(r) = report {
        command.extend(path_arg("--report", r));
    }
    if let Some(f) = &options.fixtures {
        command.extend(path_arg("--fixtures", f));
    }
    for (kb, url) in &options.endpoints {
        command.extend(["--endpoint".to_string(), format!("{kb}={url}")]);
    }
    if let Some(m) = &options.kb_mappings {
        command.extend(path_arg("--kb-mappings", m));
    }
    command.extend(["--precedence".to_string(), options.policy.kb_precedence().join(",")]);
    command.extend(["--action".to_string(), options.policy.action.to_string()]);
    if options.offline {
        command.push("--offline".to_string());
    }
    StageRecord {
        stage: STAGE,
        command,
        inputs,
        outputs,
        parameters: serde_json::json!({
            "taxonomy": ctx.taxonomy_path,
            "fixtures": options.fixtures,
            "endpoints": options.endpoints,
            "kb_mappings": options.kb_mappings,
            "policy": options.policy,
            "offline": options.offline,
        }),
    }
    .write()?;
    Ok(stage_report)
}

pub fn apply_verdicts_stage(
    ctx: &Context,
    input: &Path,
    tasks: &Path,
    log: &Path,
    quorum: usize,
    output: &Path,
    report: Option<&Path>,
) -> Result<AdjudicationReport, PipelineError> {
    const STAGE: &str = "apply-verdicts";
    if quorum == 0 {
        return Err(PipelineError::Config("quorum must be at least 1".into()));
    }
    require(tasks, "task file")?;
    require(log, "verdict log")?;
    let docs = read_stage_corpus(STAGE, input)?;
    let task_set = read_tasks(tasks).map_err(stage_err(STAGE))?;
    let verdicts = read_verdict_log(log, &ctx.taxonomy).map_err(stage_err(STAGE))?;
    let (corrected, adjudication) = apply_verdicts(&docs, &task_set, &verdicts, quorum).map_err(stage_err(STAGE))?;
    write_stage_corpus(STAGE, ctx, output, &corrected)?;
    let mut outputs = vec![output];
    if let Some(r) = report {
        write_json(r, &adjudication).map_err(stage_err(STAGE))?;
        outputs.push(r);
    }
    let mut inputs = ctx.inputs();
    inputs.extend([input, tasks, log]);
    let mut command = ctx.args();
    command.extend(path_arg("--input", input));
    command.extend(path_arg("--tasks", tasks));
    command.extend(path_arg("--log", log));
    command.extend(["--quorum".to_string(), quorum.to_string()]);
    command.extend(path_arg("--output", output));
    if let Some(r) = report {
        command.extend(path_arg("--report", r));
    }
    StageRecord {
        stage: STAGE,
        command,
        inputs,
        outputs,
        parameters: serde_json::json!({ "taxonomy": ctx.taxonomy_path, "quorum": quorum }),
    }
    .write()?;
    Ok(adjudication)
}

pub fn project_stage(
    ctx: &Context,
    source: &Path,
    target: &Path,
    alignments: &Path,
    config: &ProjectionConfig,
    output: &Path,
    report: Option<&Path>,
) -> Result<ProjectionReport, PipelineError> {
    const STAGE: &str = "project";
    require(alignments, "alignment file")?;
    let sources = read_stage_corpus(STAGE, source)?;
    let targets = read_stage_corpus(STAGE, target)?;
    let links = read_alignments(alignments).map_err(stage_err(STAGE))?;
    let pairs = build_pairs(sources, targets, links).map_err(stage_err(STAGE))?;
    let (projected, projection) = project_corpus(&pairs, config).map_err(stage_err(STAGE))?;
    write_stage_corpus(STAGE, ctx, output, &projected)?;
    let mut outputs = vec![output];
    if let Some(r) = report {
        write_json(r, &projection).map_err(stage_err(STAGE))?;
        outputs.push(r);
    }
    let mut inputs = ctx.inputs();
    inputs.extend([source, target, alignments]);
    let mut command = ctx.args();
    command.extend(path_arg("--source", source));
    command.extend(path_arg("--target", target));
    command.extend(path_arg("--alignments", alignments));
    command.extend(["--min-coverage".to_string(), config.min_coverage.to_string()]);
    let collision = match config.on_collision {
        OnCollision::Drop => "drop",
        OnCollision::KeepFirst => "keep-first",
    };
    command.extend(["--on-collision".to_string(), collision.to_string()]);
    command.extend(path_arg("--output", output));
    if let Some(r) = report {
        command.extend(path_arg("--report", r));
    }
    StageRecord {
        stage: STAGE,
        command,
        inputs,
        outputs,
        parameters: serde_json::json!({ "taxonomy": ctx.taxonomy_path, "projection": config }),
    }
    .write()?;
    Ok(projection)
}

pub fn score_stage(gold: &Path, pred: &Path, level: MatchLevel, report: &Path) -> Result<ScoreReport, PipelineError> {
    const STAGE: &str = "score";
    let gold_docs = read_stage_corpus(STAGE, gold)?;
    let pred_docs = read_stage_corpus(STAGE, pred)?;
    let scored = score(&gold_docs, &pred_docs, level).map_err(stage_err(STAGE))?;
    write_json(report, &scored).map_err(stage_err(STAGE))?;
    let mut command = Vec::new();
    command.extend(path_arg("--gold", gold));
    command.extend(path_arg("--pred", pred));
    command.extend(["--level".to_string(), level.to_string()]);
    command.extend(path_arg("--report", report));
    StageRecord {
        stage: STAGE,
        command,
        inputs: vec![gold, pred],
        outputs: vec![report],
        parameters: serde_json::json!({ "level": level }),
    }
    .write()?;
    Ok(scored)
}

pub fn stats_stage(
    ctx: &Context,
    input: &Path,
    report: &Path,
    head: usize,
) -> Result<DistributionReport, PipelineError> {
    const STAGE: &str = "stats";
    let docs = read_stage_corpus(STAGE, input)?;
    let distribution = distribution_report_with_head(&docs, &ctx.taxonomy, head);
    write_json(report, &distribution).map_err(stage_err(STAGE))?;
    let mut inputs = ctx.inputs();
    inputs.push(input);
    let mut command = ctx.args();
    command.extend(path_arg("--input", input));
    command.extend(path_arg("--report", report));
    command.extend(["--head".to_string(), head.to_string()]);
    StageRecord {
        stage: STAGE,
        command,
        inputs,
        outputs: vec![report],
        parameters: serde_json::json!({ "taxonomy": ctx.taxonomy_path, "head": head }),
    }
    .write()?;
    Ok(distribution)
}

pub fn export_stage(input: &Path, format: Format, out_dir: &Path) -> Result<ExportSummary, PipelineError> {
    const STAGE: &str = "export";
    let docs = read_stage_corpus(STAGE, input)?;
    let summary = export_training(&docs, format, out_dir).map_err(stage_err(STAGE))?;
    let format_name = match format {
        Format::Spans => "spans",
        Format::Iob2 => "iob2",
        Format::Xml => "xml",
    };
    let mut command = Vec::new();
    command.extend(path_arg("--input", input));
    command.extend(["--format".to_string(), format_name.to_string()]);
    command.extend(path_arg("--out-dir", out_dir));
    StageRecord {
        stage: STAGE,
        command,
        inputs: vec![input],
        outputs: summary.files.iter().map(PathBuf::as_path).collect(),
        parameters: serde_json::json!({ "format": format_name }),
    }
    .write()?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeConfig {
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectConfig {
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    #[serde(default)]
    pub endpoints: BTreeMap<String, String>,
    #[serde(default)]
    pub kb_mappings: Option<PathBuf>,
    #[serde(default)]
    pub precedence: Option<Vec<String>>,
    #[serde(default = "default_action")]
    pub action: String,
}

fn default_action() -> String {
    CorrectionAction::RefineOnly.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewConfig {
    pub tasks: PathBuf,
    pub log: PathBuf,
    #[serde(default = "default_quorum")]
    pub quorum: usize,
}

fn default_quorum() -> usize {
    DEFAULT_QUORUM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub target: PathBuf,
    pub alignments: PathBuf,
    #[serde(default = "default_coverage")]
    pub min_coverage: f64,
    #[serde(default)]
    pub on_collision: OnCollision,
}

fn default_coverage() -> f64 {
    ProjectionConfig::default().min_coverage
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    /// Gold annotations for the source-language corpus.
    #[serde(default)]
    pub gold: Option<PathBuf>,
    /// Gold annotations for the projected target-language corpus.
    #[serde(default)]
    pub target_gold: Option<PathBuf>,
    #[serde(default = "default_level")]
    pub level: String,
}

fn default_level() -> String {
    "exact".into()
}

fn default_true() -> bool {
    true
}

/// A TOML pipeline description. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub taxonomy: Option<PathBuf>,
    #[serde(default)]
    pub schemes: Vec<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub offline: bool,
    pub merge: MergeConfig,
    #[serde(default)]
    pub correct: Option<CorrectConfig>,
    #[serde(default)]
    pub review: Option<ReviewConfig>,
    #[serde(default)]
    pub project: Option<ProjectConfig>,
    #[serde(default)]
    pub score: Option<ScoreConfig>,
    #[serde(default = "default_true")]
    pub stats: bool,
}

impl PipelineConfig {
    pub fn from_toml(source: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut config: PipelineConfig = toml::from_str(source).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.resolve(base_dir);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.taxonomy.iter_mut().for_each(fix);
        self.schemes.iter_mut().for_each(fix);
        fix(&mut self.output_dir);
        fix(&mut self.merge.manifest);
        if let Some(c) = &mut self.correct {
            c.fixtures.iter_mut().for_each(fix);
            c.kb_mappings.iter_mut().for_each(fix);
        }
        if let Some(r) = &mut self.review {
            fix(&mut r.tasks);
            fix(&mut r.log);
        }
        if let Some(p) = &mut self.project {
            fix(&mut p.target);
            fix(&mut p.alignments);
        }
        if let Some(s) = &mut self.score {
            s.gold.iter_mut().for_each(fix);
            s.target_gold.iter_mut().for_each(fix);
        }
    }

    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// Check every referenced path and parameter without running anything.
    pub fn check(&self) -> Result<CheckedConfig, PipelineError> {
        let config = |m: String| PipelineError::Config(m);
        if let Some(t) = &self.taxonomy {
            require(t, "taxonomy")?;
        }
        for s in &self.schemes {
            require(s, "scheme mapping")?;
        }
        require(&self.merge.manifest, "run manifest")?;
        for entry in load_manifest(&self.merge.manifest).map_err(|e| config(e.to_string()))? {
            require(&entry.corpus_path, "model run corpus")?;
        }
        let correct = match &self.correct {
            None => None,
            Some(c) => {
                let action: CorrectionAction = c
                    .action
                    .parse()
                    .map_err(|e: crate::kb::KbError| config(e.to_string()))?;
                let policy = match &c.precedence {
                    Some(p) => CorrectionPolicy::new(p.clone(), action).map_err(|e| config(e.to_string()))?,
                    None => CorrectionPolicy::with_action(action),
                };
                if let Some(m) = &c.kb_mappings {
                    require(m, "KB mapping table")?;
                }
                let options = CorrectOptions {
                    fixtures: c.fixtures.clone(),
                    endpoints: c.endpoints.clone().into_iter().collect(),
                    kb_mappings: c.kb_mappings.clone(),
                    policy,
                    offline: self.offline,
                };
                options.client()?;
                Some(options)
            }
        };
        if let Some(r) = &self.review {
            if r.quorum == 0 {
                return Err(config("review quorum must be at least 1".into()));
            }
            require(&r.tasks, "task file")?;
            require(&r.log, "verdict log")?;
        }
        let projection = match &self.project {
            None => None,
            Some(p) => {
                require(&p.target, "target corpus")?;
                require(&p.alignments, "alignment file")?;
                Some(ProjectionConfig::new(p.min_coverage, p.on_collision).map_err(|e| config(e.to_string()))?)
            }
        };
        let level = match &self.score {
            None => None,
            Some(s) => {
                if let Some(g) = &s.gold {
                    require(g, "gold corpus")?;
                }
                if let Some(g) = &s.target_gold {
                    require(g, "target gold corpus")?;
                    if self.project.is_none() {
                        return Err(config("target_gold needs the project stage".into()));
                    }
                }
                Some(s.level.parse::<MatchLevel>().map_err(|e| config(e.to_string()))?)
            }
        };
        Ok(CheckedConfig {
            correct,
            projection,
            level,
        })
    }
}

/// Parameters parsed out of a [`PipelineConfig`] by [`PipelineConfig::check`].
pub struct CheckedConfig {
    correct: Option<CorrectOptions>,
    projection: Option<ProjectionConfig>,
    level: Option<MatchLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub config_digest: String,
    /// `(stage, output path)` in execution order.
    pub outputs: Vec<(String, PathBuf)>,
    pub score: Option<ScoreReport>,
    pub target_score: Option<ScoreReport>,
    pub network_calls: usize,
}

/// Run merge, correct, apply-verdicts, project, score and stats in order.
/// Disabled stages are skipped; the last completed output stays on disk when
/// a later stage fails.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    let checked = config.check()?;
    let ctx = Context::load(config.taxonomy.as_deref(), &config.schemes)?;
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| PipelineError::Config(format!("creating {}: {e}", out.display())))?;
    let mut summary = RunSummary {
        config_digest: config.digest(),
        outputs: Vec::new(),
        score: None,
        target_score: None,
        network_calls: 0,
    };
    let record = |summary: &mut RunSummary, stage: &str, path: &Path| {
        log::info!("{stage}: wrote {}", path.display());
        summary.outputs.push((stage.to_string(), path.to_path_buf()));
    };

    let mut current = out.join("merged.jsonl");
    merge_stage(
        &ctx,
        &config.merge.manifest,
        &current,
        Some(&out.join("merged.report.json")),
    )?;
    record(&mut summary, "merge", &current);

    if let Some(options) = &checked.correct {
        let next = out.join("corrected.jsonl");
        let report = correct_stage(&ctx, &current, &next, Some(&out.join("corrected.report.json")), options)?;
        summary.network_calls += report.network_calls;
        current = next;
        record(&mut summary, "correct", &current);
    }

    if let Some(review) = &config.review {
        let next = out.join("adjudicated.jsonl");
        apply_verdicts_stage(
            &ctx,
            &current,
            &review.tasks,
            &review.log,
            review.quorum,
            &next,
            Some(&out.join("adjudicated.report.json")),
        )?;
        current = next;
        record(&mut summary, "apply-verdicts", &current);
    }

    let mut projected = None;
    if let (Some(project), Some(projection)) = (&config.project, &checked.projection) {
        let next = out.join("projected.jsonl");
        project_stage(
            &ctx,
            &current,
            &project.target,
            &project.alignments,
            projection,
            &next,
            Some(&out.join("projected.report.json")),
        )?;
        record(&mut summary, "project", &next);
        projected = Some(next);
    }

    if let (Some(score), Some(level)) = (&config.score, checked.level) {
        if let Some(gold) = &score.gold {
            let path = out.join("score.json");
            summary.score = Some(score_stage(gold, &current, level, &path)?);
            record(&mut summary, "score", &path);
        }
        if let (Some(gold), Some(pred)) = (&score.target_gold, &projected) {
            let path = out.join("score-target.json");
            summary.target_score = Some(score_stage(gold, pred, level, &path)?);
            record(&mut summary, "score", &path);
        }
    }

    if config.stats {
        let path = out.join("stats.json");
        stats_stage(&ctx, &current, &path, SURFACE_HEAD)?;
        record(&mut summary, "stats", &path);
        if let Some(pred) = &projected {
            let path = out.join("stats-projected.json");
            stats_stage(&ctx, pred, &path, SURFACE_HEAD)?;
            record(&mut summary, "stats", &path);
        }
    }
    let manifest = serde_json::json!({
        "config_digest": summary.config_digest,
        "outputs": summary.outputs,
    });
    write_json(&out.join("run.json"), &manifest).map_err(stage_err("run"))?;
    Ok(summary)
}

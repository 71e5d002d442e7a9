//! End-to-end driver: `ingest -> lexicon -> annotate -> candidates ->
//! validate -> build`, with staged plain-file outputs under a work
//! directory and content-hash based skipping of up-to-date stages.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotate::{
    annotate_corpus, load_standoff, merge_annotations, standoff_mentions, AnnotateError, AnnotatedDocument, Provenance,
    StandoffFile,
};
use crate::candidates::{corpus_pairs, CandidateError, CandidatePair};
use crate::corpus::{list_files, DocumentStore, IngestError, IngestResult, Segmenter};
use crate::exec::{with_jobs, Parallelism};
use crate::kg::{
    aggregate, apply_min_ref, emit_html, emit_rdf_star, emit_turtle, rank_relations, stats, Aggregation,
    KnowledgeGraph, Normalizer, RankTable, StatsTable, DEFAULT_NORM_MIN_LENGTH, DEFAULT_STATS_MIN_REFS,
};
use crate::ontology::{build_lexicon, EntityKind, Lexicon, Ontology, OntologyError};
use crate::validate::{
    validate_all, ChatClient, PromptTemplate, StubValidator, ValidateError, Validator, VerdictCache, VerdictRecord,
    DEFAULT_SYSTEM_PROMPT, DEFAULT_TEMPERATURE, DEFAULT_TOP_P, DEFAULT_USER_PROMPT,
};

pub const DEFAULT_ROLE_MIN_LENGTH: usize = 4;
pub const DEFAULT_CHEMICAL_MIN_LENGTH: usize = 4;
pub const DEFAULT_MIN_REF: usize = 2;
const STATE_FILE: &str = "state.json";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid override {0:?}; expected key=value")]
    Override(String),
    #[error("{key}: {path} does not exist")]
    MissingPath { key: &'static str, path: PathBuf },
    #[error("{0}")]
    Invalid(String),
}

/// Failure of a file-level helper or a stage body.
#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
    #[error(transparent)]
    Candidates(#[from] CandidateError),
    #[error(transparent)]
    Validate(#[from] ValidateError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage} failed: {source}")]
    Stage { stage: Stage, source: StageError },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StageError + '_ {
    move |source| StageError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Lexicon,
    Annotate,
    Candidates,
    Validate,
    Build,
}

impl Stage {
    pub const ALL: [Stage; 6] =
        [Stage::Ingest, Stage::Lexicon, Stage::Annotate, Stage::Candidates, Stage::Validate, Stage::Build];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Lexicon => "lexicon",
            Stage::Annotate => "annotate",
            Stage::Candidates => "candidates",
            Stage::Validate => "validate",
            Stage::Build => "build",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidatorKind {
    #[default]
    Stub,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidatorConfig {
    pub kind: ValidatorKind,
    /// Falls back to `CEAR_LLM_ENDPOINT`.
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: f64,
    pub top_p: f64,
    /// Files holding replacement prompt templates.
    pub system_prompt: Option<PathBuf>,
    pub user_prompt: Option<PathBuf>,
    pub max_in_flight: usize,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        ValidatorConfig {
            kind: ValidatorKind::Stub,
            endpoint: None,
            model: None,
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            system_prompt: None,
            user_prompt: None,
            max_in_flight: 4,
        }
    }
}

impl ValidatorConfig {
    pub fn template(&self) -> Result<PromptTemplate, StageError> {
        let read = |p: &Option<PathBuf>, default: &str| -> Result<String, StageError> {
            match p {
                Some(p) => fs::read_to_string(p).map(|s| s.trim_end().to_string()).map_err(io_err(p)),
                None => Ok(default.to_string()),
            }
        };
        Ok(PromptTemplate::new(
            read(&self.system_prompt, DEFAULT_SYSTEM_PROMPT)?,
            read(&self.user_prompt, DEFAULT_USER_PROMPT)?,
        )?)
    }

    pub fn validator(&self) -> Result<Box<dyn Validator>, StageError> {
        match self.kind {
            ValidatorKind::Stub => Ok(Box::new(StubValidator)),
            ValidatorKind::Llm => {
                let model = self.model.as_deref().unwrap_or_default();
                let client = ChatClient::from_env(model, self.endpoint.as_deref())?
                    .with_sampling(self.temperature, self.top_p)?;
                Ok(Box::new(client))
            }
        }
    }
}

/// Pipeline settings. Relative paths are resolved against the config
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Directory of `.json` / `.txt` documents to ingest.
    pub input: Option<PathBuf>,
    pub work_dir: PathBuf,
    /// Defaults to `<work_dir>/store`.
    pub store: Option<PathBuf>,
    pub obo: PathBuf,
    /// Directory of external standoff annotation files.
    pub external: Option<PathBuf>,
    pub role_min_length: usize,
    /// Also tag chemical entities with the ontology gazetteer.
    pub chemical_gazetteer: bool,
    pub chemical_min_length: usize,
    pub norm_min_length: usize,
    pub min_ref: usize,
    pub stats: Vec<usize>,
    pub rank_k: usize,
    pub rdf_star: bool,
    pub html: bool,
    pub jobs: Option<usize>,
    pub validator: ValidatorConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: None,
            work_dir: PathBuf::from("work"),
            store: None,
            obo: PathBuf::from("chebi.obo"),
            external: None,
            role_min_length: DEFAULT_ROLE_MIN_LENGTH,
            chemical_gazetteer: true,
            chemical_min_length: DEFAULT_CHEMICAL_MIN_LENGTH,
            norm_min_length: DEFAULT_NORM_MIN_LENGTH,
            min_ref: DEFAULT_MIN_REF,
            stats: DEFAULT_STATS_MIN_REFS.to_vec(),
            rank_k: 10,
            rdf_star: false,
            html: true,
            jobs: None,
            validator: ValidatorConfig::default(),
        }
    }
}

/// Sets a dotted `key` in a TOML table, creating intermediate tables.
fn set_key(table: &mut toml::Table, key: &str, value: toml::Value) {
    match key.split_once('.') {
        Some((head, rest)) => {
            let entry = table.entry(head).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if !entry.is_table() {
                *entry = toml::Value::Table(toml::Table::new());
            }
            if let toml::Value::Table(t) = entry {
                set_key(t, rest, value);
            }
        }
        None => {
            table.insert(key.to_string(), value);
        }
    }
}

/// Parses an override value as TOML, falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl PipelineConfig {
    /// Parses TOML text and applies `key=value` overrides (dotted keys
    /// reach nested tables).
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text)?;
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
            set_key(&mut table, k.trim(), override_value(v.trim()));
        }
        Ok(table.try_into()?)
    }

    /// Loads a config file, applies overrides, resolves relative paths and
    /// validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.work_dir);
        fix(&mut self.obo);
        let optional = [
            &mut self.input,
            &mut self.store,
            &mut self.external,
            &mut self.validator.system_prompt,
            &mut self.validator.user_prompt,
        ];
        optional.into_iter().flatten().for_each(fix);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let must_exist = |key: &'static str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(ConfigError::MissingPath { key, path: p.to_path_buf() })
            }
        };
        must_exist("obo", &self.obo)?;
        if let Some(p) = &self.input {
            must_exist("input", p)?;
        }
        if let Some(p) = &self.external {
            must_exist("external", p)?;
        }
        if let Some(p) = &self.validator.system_prompt {
            must_exist("validator.system_prompt", p)?;
        }
        if let Some(p) = &self.validator.user_prompt {
            must_exist("validator.user_prompt", p)?;
        }
        if self.min_ref == 0 {
            return Err(ConfigError::Invalid("min_ref must be at least 1".into()));
        }
        if self.jobs == Some(0) {
            return Err(ConfigError::Invalid("jobs must be at least 1".into()));
        }
        if self.validator.kind == ValidatorKind::Llm && self.validator.model.is_none() {
            return Err(ConfigError::Invalid("validator.model is required for the llm validator".into()));
        }
        Ok(())
    }

    pub fn store_dir(&self) -> PathBuf {
        self.store.clone().unwrap_or_else(|| self.work_dir.join("store"))
    }

    pub fn paths(&self) -> WorkPaths {
        let w = &self.work_dir;
        WorkPaths {
            role_lexicon: w.join("lexicon.roles.json"),
            chemical_lexicon: w.join("lexicon.chemicals.json"),
            annotations: w.join("annotations"),
            pairs: w.join("pairs.jsonl"),
            cache: w.join("cache.jsonl"),
            verdicts: w.join("verdicts.jsonl"),
            turtle: w.join("kg.ttl"),
            rdf_star: w.join("kg.rdfstar.ttl"),
            html: w.join("kg.html"),
            stats_text: w.join("stats.txt"),
            stats_json: w.join("stats.json"),
            ranking: w.join("ranking.txt"),
        }
    }
}

/// Output file layout under the work directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkPaths {
    pub role_lexicon: PathBuf,
    pub chemical_lexicon: PathBuf,
    pub annotations: PathBuf,
    pub pairs: PathBuf,
    /// Persistent verdict cache shared across runs.
    pub cache: PathBuf,
    /// Verdicts for the current pair set, in pair order.
    pub verdicts: PathBuf,
    pub turtle: PathBuf,
    pub rdf_star: PathBuf,
    pub html: PathBuf,
    pub stats_text: PathBuf,
    pub stats_json: PathBuf,
    pub ranking: PathBuf,
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), StageError> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|source| StageError::Json { path: path.into(), source })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StageError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| StageError::Json { path: path.into(), source })
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), StageError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|source| StageError::Json { path: path.into(), source })?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StageError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| StageError::Json { path: path.into(), source })?);
    }
    Ok(out)
}

/// Writes via a temporary sibling and rename, creating parent dirs.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StageError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        let mut w = BufWriter::new(file);
        w.write_all(bytes).map_err(io_err(&tmp))?;
        w.flush().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Writes one standoff file per document, replacing the directory's
/// previous `.json` files.
pub fn write_annotation_dir(dir: &Path, docs: &[AnnotatedDocument]) -> Result<(), StageError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for old in list_files(dir, &["json"])? {
        fs::remove_file(&old).map_err(io_err(&old))?;
    }
    for doc in docs {
        let file = StandoffFile::from_annotated(doc, Provenance::Gazetteer);
        write_json(&dir.join(format!("{}.json", doc.doc_checksum)), &file)?;
    }
    Ok(())
}

/// Loads and validates every standoff file in `dir`, sorted by path.
pub fn read_annotation_dir(dir: &Path, store: &DocumentStore) -> Result<Vec<AnnotatedDocument>, StageError> {
    let mut out = Vec::new();
    for path in list_files(dir, &["json"])? {
        let file = fs::File::open(&path).map_err(io_err(&path))?;
        out.push(load_standoff(BufReader::new(file), store)?);
    }
    Ok(out)
}

/// Loads every standoff file in `dir` without a document store; spans are
/// not checked against text.
pub fn read_annotation_dir_unchecked(dir: &Path) -> Result<Vec<AnnotatedDocument>, StageError> {
    let mut out = Vec::new();
    for path in list_files(dir, &["json"])? {
        out.push(standoff_mentions(read_json(&path)?)?);
    }
    Ok(out)
}

/// Merges external annotations into `docs` by checksum; external files for
/// documents without gazetteer output are added as they are.
pub fn merge_external(docs: Vec<AnnotatedDocument>, external: Vec<AnnotatedDocument>) -> Vec<AnnotatedDocument> {
    let mut by_doc: BTreeMap<_, AnnotatedDocument> = docs.into_iter().map(|d| (d.doc_checksum.clone(), d)).collect();
    for ext in external {
        match by_doc.get_mut(&ext.doc_checksum) {
            Some(d) => d.mentions = merge_annotations(&d.mentions, &ext.mentions),
            None => {
                let mentions = merge_annotations(&[], &ext.mentions);
                by_doc.insert(ext.doc_checksum.clone(), AnnotatedDocument { doc_checksum: ext.doc_checksum, mentions });
            }
        }
    }
    by_doc.into_values().collect()
}

/// Everything the build stage derives from a set of verdict records.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildOutput {
    pub aggregation: Aggregation,
    pub graph: KnowledgeGraph,
    pub stats: StatsTable,
    pub ranking: RankTable,
}

impl BuildOutput {
    pub fn turtle(&self) -> String {
        emit_turtle(&self.graph)
    }

    pub fn rdf_star(&self) -> String {
        emit_rdf_star(&self.graph)
    }

    pub fn html(&self) -> String {
        emit_html(&self.graph)
    }
}

pub fn build_graph(
    records: &[VerdictRecord],
    normalizer: &Normalizer,
    min_ref: usize,
    stats_min_refs: &[usize],
    rank_k: usize,
    parallelism: Parallelism,
) -> BuildOutput {
    let aggregation = aggregate(records, normalizer, parallelism);
    let graph = apply_min_ref(&aggregation.relations, min_ref);
    let stats = stats(&aggregation.relations, stats_min_refs);
    let ranking = rank_relations(&graph.relations, rank_k);
    BuildOutput { aggregation, graph, stats, ranking }
}

/// Incremental SHA-256 over labeled chunks.
struct Fingerprint(Sha256);

impl Fingerprint {
    fn new(stage: Stage) -> Self {
        let mut h = Sha256::new();
        h.update(stage.name().as_bytes());
        Fingerprint(h)
    }

    fn add(&mut self, label: &str, bytes: &[u8]) -> &mut Self {
        self.0.update((label.len() as u64).to_le_bytes());
        self.0.update(label.as_bytes());
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
        self
    }

    fn add_file(&mut self, path: &Path) -> Result<&mut Self, StageError> {
        match fs::read(path) {
            Ok(bytes) => Ok(self.add(&path.to_string_lossy(), &bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(self.add(&path.to_string_lossy(), b"\0missing")),
            Err(e) => Err(StageError::Io { path: path.into(), source: e }),
        }
    }

    fn add_dir(&mut self, dir: &Path, exts: &[&str]) -> Result<&mut Self, StageError> {
        if !dir.exists() {
            self.add(&dir.to_string_lossy(), b"\0missing");
            return Ok(self);
        }
        for path in list_files(dir, exts)? {
            self.add_file(&path)?;
        }
        Ok(self)
    }

    fn finish(&self) -> String {
        hex::encode(self.0.clone().finalize())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct StageState {
    input: String,
    output: String,
    counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct PipelineState {
    stages: BTreeMap<Stage, StageState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub status: StageStatus,
    pub counts: BTreeMap<String, usize>,
}

/// Per-stage counts of one pipeline run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub stages: Vec<StageReport>,
}

impl PipelineSummary {
    /// A count by name from whichever stage reported it; 0 when absent.
    pub fn count(&self, name: &str) -> usize {
        self.stages.iter().find_map(|s| s.counts.get(name).copied()).unwrap_or(0)
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    /// Violated accounting identities, as messages.
    pub fn accounting_errors(&self) -> Vec<String> {
        let mut errors = Vec::new();
        let pairs = self.count("pairs");
        let judged = self.count("confirmed") + self.count("rejected") + self.count("ambiguous");
        if judged + self.count("transport_failures") != pairs {
            errors.push(format!("validated {judged} + failed {} != pairs {pairs}", self.count("transport_failures")));
        }
        if self.count("relations_kept") > self.count("relations_total") {
            errors.push("more relations kept than aggregated".into());
        }
        if self.count("relations_total") > self.count("confirmed") {
            errors.push("more relations than confirmed verdicts".into());
        }
        if self.count("mentions_chemical") + self.count("mentions_role") != self.count("mentions") {
            errors.push("mention counts by kind do not add up".into());
        }
        errors
    }
}

impl fmt::Display for PipelineSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.stages {
            let status = match s.status {
                StageStatus::Ran => "ran",
                StageStatus::Skipped => "skipped (up-to-date)",
            };
            let counts: Vec<String> = s.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
            writeln!(f, "{:<11} {:<21} {}", s.stage.name(), status, counts.join(" "))?;
        }
        Ok(())
    }
}

type Counts = BTreeMap<String, usize>;

fn counts<const N: usize>(items: [(&str, usize); N]) -> Counts {
    items.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Runs the stages in order inside a pool capped at `config.jobs` workers.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineSummary, PipelineError> {
    config.validate()?;
    with_jobs(config.jobs, || Runner::new(config).run())
}

struct Runner<'a> {
    config: &'a PipelineConfig,
    paths: WorkPaths,
    state_path: PathBuf,
    state: PipelineState,
    store: Option<DocumentStore>,
}

impl<'a> Runner<'a> {
    fn new(config: &'a PipelineConfig) -> Self {
        let state_path = config.work_dir.join(STATE_FILE);
        let state = read_json(&state_path).unwrap_or_default();
        Runner { config, paths: config.paths(), state_path, state, store: None }
    }

    fn run(mut self) -> Result<PipelineSummary, PipelineError> {
        fs::create_dir_all(&self.config.work_dir).map_err(|source| PipelineError::Stage {
            stage: Stage::Ingest,
            source: StageError::Io { path: self.config.work_dir.clone(), source },
        })?;
        let mut summary = PipelineSummary::default();
        for stage in Stage::ALL {
            let report = self.step(stage).map_err(|source| PipelineError::Stage { stage, source })?;
            log::info!("{stage}: {:?}", report.status);
            summary.stages.push(report);
        }
        Ok(summary)
    }

    fn store(&mut self) -> Result<&DocumentStore, StageError> {
        if self.store.is_none() {
            self.store = Some(DocumentStore::open(self.config.store_dir())?);
        }
        Ok(self.store.as_ref().expect("just opened"))
    }

    fn step(&mut self, stage: Stage) -> Result<StageReport, StageError> {
        let input = self.input_fingerprint(stage)?;
        let previous = self.state.stages.get(&stage).cloned();
        if let Some(prev) = previous {
            if prev.input == input && prev.output == self.output_fingerprint(stage)? {
                return Ok(StageReport { stage, status: StageStatus::Skipped, counts: prev.counts });
            }
        }
        let counts = self.execute(stage)?;
        let output = self.output_fingerprint(stage)?;
        self.state.stages.insert(stage, StageState { input, output, counts: counts.clone() });
        // downstream fingerprints include this stage's output, so a rerun
        // here invalidates later stages naturally
        write_json(&self.state_path, &self.state)?;
        Ok(StageReport { stage, status: StageStatus::Ran, counts })
    }

    fn input_fingerprint(&self, stage: Stage) -> Result<String, StageError> {
        let c = self.config;
        let mut fp = Fingerprint::new(stage);
        let upstream = |s: Stage| self.state.stages.get(&s).map(|st| st.output.clone()).unwrap_or_default();
        match stage {
            Stage::Ingest => {
                fp.add("store", self.config.store_dir().to_string_lossy().as_bytes());
                if let Some(dir) = &c.input {
                    fp.add_dir(dir, &["json", "txt"])?;
                }
            }
            Stage::Lexicon => {
                fp.add_file(&c.obo)?;
                fp.add(
                    "params",
                    format!("{} {} {}", c.role_min_length, c.chemical_gazetteer, c.chemical_min_length).as_bytes(),
                );
            }
            Stage::Annotate => {
                fp.add("store", upstream(Stage::Ingest).as_bytes());
                fp.add("lexicon", upstream(Stage::Lexicon).as_bytes());
                if let Some(dir) = &c.external {
                    fp.add_dir(dir, &["json"])?;
                }
            }
            Stage::Candidates => {
                fp.add("store", upstream(Stage::Ingest).as_bytes());
                fp.add("annotations", upstream(Stage::Annotate).as_bytes());
            }
            Stage::Validate => {
                let v = &c.validator;
                fp.add("pairs", upstream(Stage::Candidates).as_bytes());
                fp.add("template", c.validator.template()?.hash().as_bytes());
                let params = format!("{:?} {:?} {:?} {} {}", v.kind, v.endpoint, v.model, v.temperature, v.top_p);
                fp.add("validator", params.as_bytes());
            }
            Stage::Build => {
                fp.add("verdicts", upstream(Stage::Validate).as_bytes());
                fp.add_file(&c.obo)?;
                let params =
                    format!("{} {} {:?} {} {} {}", c.norm_min_length, c.min_ref, c.stats, c.rank_k, c.rdf_star, c.html);
                fp.add("params", params.as_bytes());
            }
        }
        Ok(fp.finish())
    }

    fn output_fingerprint(&self, stage: Stage) -> Result<String, StageError> {
        let p = &self.paths;
        let mut fp = Fingerprint::new(stage);
        match stage {
            Stage::Ingest => {
                // store files are content-addressed, so names suffice
                let dir = self.config.store_dir();
                if dir.exists() {
                    for f in list_files(&dir, &["json"])? {
                        fp.add("doc", f.file_name().unwrap_or_default().to_string_lossy().as_bytes());
                    }
                }
            }
            Stage::Lexicon => {
                fp.add_file(&p.role_lexicon)?.add_file(&p.chemical_lexicon)?;
            }
            Stage::Annotate => {
                fp.add_dir(&p.annotations, &["json"])?;
            }
            Stage::Candidates => {
                fp.add_file(&p.pairs)?;
            }
            Stage::Validate => {
                fp.add_file(&p.verdicts)?;
            }
            Stage::Build => {
                for f in [&p.turtle, &p.rdf_star, &p.html, &p.stats_text, &p.stats_json, &p.ranking] {
                    fp.add_file(f)?;
                }
            }
        }
        Ok(fp.finish())
    }

    fn execute(&mut self, stage: Stage) -> Result<Counts, StageError> {
        let c = self.config;
        let p = self.paths.clone();
        let segmenter = Segmenter::default();
        match stage {
            Stage::Ingest => {
                let input = c.input.clone();
                let store = self.store()?;
                let (mut added, mut duplicates) = (0, 0);
                if let Some(dir) = input {
                    let files = list_files(&dir, &["json", "txt"])?;
                    for (path, outcome) in store.ingest_paths(&files, Parallelism::Rayon) {
                        match outcome.map_err(|e| {
                            log::error!("{}: {e}", path.display());
                            e
                        })? {
                            IngestResult::Added(_) => added += 1,
                            IngestResult::Duplicate(_) => duplicates += 1,
                        }
                    }
                }
                Ok(counts([("documents", store.len()), ("added", added), ("duplicates", duplicates)]))
            }
            Stage::Lexicon => {
                let ontology = Ontology::from_path(&c.obo)?;
                let kinds = ontology.classify();
                let roles = build_lexicon(&ontology, &kinds, &[EntityKind::Role], c.role_min_length)?;
                let chemicals = if c.chemical_gazetteer {
                    build_lexicon(&ontology, &kinds, &[EntityKind::Chemical], c.chemical_min_length)?
                } else {
                    Lexicon::from_entries(c.chemical_min_length.max(1), vec![], vec![])?
                };
                write_json(&p.role_lexicon, &roles.to_file())?;
                write_json(&p.chemical_lexicon, &chemicals.to_file())?;
                Ok(counts([
                    ("ontology_terms", ontology.terms.len()),
                    ("lexicon_roles", roles.len()),
                    ("lexicon_chemicals", chemicals.len()),
                    ("lexicon_diagnostics", roles.diagnostics().len() + chemicals.diagnostics().len()),
                ]))
            }
            Stage::Annotate => {
                let roles = Lexicon::read_json(&p.role_lexicon)?;
                let chemicals = Lexicon::read_json(&p.chemical_lexicon)?;
                let external = c.external.clone();
                let store = self.store()?;
                let docs = store.documents();
                let mut annotated = annotate_corpus(&docs, &[&roles, &chemicals], &segmenter, Parallelism::Rayon);
                if let Some(dir) = external {
                    annotated = merge_external(annotated, read_annotation_dir(&dir, store)?);
                }
                write_annotation_dir(&p.annotations, &annotated)?;
                let mentions: Vec<_> = annotated.iter().flat_map(|d| &d.mentions).collect();
                let chem = mentions.iter().filter(|m| m.kind == EntityKind::Chemical).count();
                Ok(counts([
                    ("mentions", mentions.len()),
                    ("mentions_chemical", chem),
                    ("mentions_role", mentions.len() - chem),
                ]))
            }
            Stage::Candidates => {
                let store = self.store()?;
                let annotated = read_annotation_dir(&p.annotations, store)?;
                let (sentences, pairs) = corpus_pairs(&annotated, store, &segmenter, Parallelism::Rayon)?;
                write_jsonl(&p.pairs, &pairs)?;
                Ok(counts([("candidate_sentences", sentences), ("pairs", pairs.len())]))
            }
            Stage::Validate => {
                let pairs: Vec<CandidatePair> = read_jsonl(&p.pairs)?;
                let cache = VerdictCache::open(&p.cache)?;
                let before = cache.len();
                let validator = c.validator.validator()?;
                let run = validate_all(
                    &pairs,
                    validator.as_ref(),
                    &cache,
                    &c.validator.template()?,
                    c.validator.max_in_flight,
                )?;
                let records: Vec<&VerdictRecord> = run.records.iter().flatten().collect();
                write_jsonl(&p.verdicts, &records)?;
                let s = &run.summary;
                Ok(counts([
                    ("confirmed", s.confirmed),
                    ("rejected", s.rejected),
                    ("ambiguous", s.ambiguous),
                    ("transport_failures", s.transport_failures),
                    ("validator_calls", cache.len() - before),
                ]))
            }
            Stage::Build => {
                let records: Vec<VerdictRecord> = read_jsonl(&p.verdicts)?;
                let ontology = Ontology::from_path(&c.obo)?;
                let normalizer = Normalizer::from_ontology(&ontology, c.norm_min_length)?;
                let out = build_graph(&records, &normalizer, c.min_ref, &c.stats, c.rank_k, Parallelism::Rayon);
                write_atomic(&p.turtle, out.turtle().as_bytes())?;
                remove_if_exists(&p.rdf_star)?;
                remove_if_exists(&p.html)?;
                if c.rdf_star {
                    write_atomic(&p.rdf_star, out.rdf_star().as_bytes())?;
                }
                if c.html {
                    write_atomic(&p.html, out.html().as_bytes())?;
                }
                write_atomic(&p.stats_text, out.stats.to_string().as_bytes())?;
                write_json(&p.stats_json, &out.stats)?;
                write_atomic(&p.ranking, out.ranking.to_string().as_bytes())?;
                Ok(counts([
                    ("dropped_short", out.aggregation.dropped_short),
                    ("relations_total", out.aggregation.relations.len()),
                    ("relations_kept", out.graph.relations.len()),
                ]))
            }
        }
    }
}

fn remove_if_exists(path: &Path) -> Result<(), StageError> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(StageError::Io { path: path.into(), source: e }),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::tests::MINI_OBO;

    fn setup(docs: &[(&str, &str)]) -> (tempfile::TempDir, PipelineConfig) {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("papers");
        fs::create_dir_all(&input).unwrap();
        for (name, text) in docs {
            fs::write(input.join(name), text).unwrap();
        }
        fs::write(dir.path().join("mini.obo"), MINI_OBO).unwrap();
        let cfg = PipelineConfig {
            input: Some(input),
            work_dir: dir.path().join("work"),
            obo: dir.path().join("mini.obo"),
            min_ref: 1,
            ..Default::default()
        };
        (dir, cfg)
    }

    #[test]
    fn defaults() {
        let cfg = PipelineConfig::from_toml("", &[]).unwrap();
        assert_eq!(cfg.role_min_length, 4);
        assert_eq!(cfg.norm_min_length, 2);
        assert_eq!(cfg.min_ref, 2);
        assert_eq!(cfg.stats, vec![1, 2, 5, 10, 20, 50]);
        assert_eq!(cfg.validator.temperature, 0.1);
        assert_eq!(cfg.validator.top_p, 0.95);
        assert_eq!(cfg.validator.kind, ValidatorKind::Stub);
    }

    #[test]
    fn overrides() {
        let cfg = PipelineConfig::from_toml(
            "min_ref = 3\n[validator]\nmax_in_flight = 2\n",
            &["min_ref=5".into(), "validator.kind=\"llm\"".into(), "validator.model=llama".into(), "obo=x.obo".into()],
        )
        .unwrap();
        assert_eq!(cfg.min_ref, 5);
        assert_eq!(cfg.validator.kind, ValidatorKind::Llm);
        assert_eq!(cfg.validator.model.as_deref(), Some("llama"));
        assert_eq!(cfg.validator.max_in_flight, 2);
        assert_eq!(cfg.obo, PathBuf::from("x.obo"));
        assert!(matches!(PipelineConfig::from_toml("", &["nonsense".into()]), Err(ConfigError::Override(_))));
        assert!(PipelineConfig::from_toml("bogus_key = 1", &[]).is_err());
    }

    #[test]
    fn missing_paths_rejected() {
        let cfg = PipelineConfig { obo: "/nonexistent/x.obo".into(), ..Default::default() };
        assert!(matches!(cfg.validate(), Err(ConfigError::MissingPath { key: "obo", .. })));
    }

    #[test]
    fn empty_store_gives_zero_summary() {
        let (_d, cfg) = setup(&[]);
        let summary = run_pipeline(&cfg).unwrap();
        for name in ["documents", "mentions", "candidate_sentences", "pairs", "confirmed", "relations_kept"] {
            assert_eq!(summary.count(name), 0, "{name}");
        }
        assert!(summary.accounting_errors().is_empty());
        let ttl = fs::read_to_string(cfg.paths().turtle).unwrap();
        assert_eq!(ttl.lines().count(), 4);
    }

    #[test]
    fn end_to_end_and_skipping() {
        let (_d, cfg) = setup(&[
            ("a.txt", "EGTA is used as buffer in all runs. Water was used as solvent."),
            ("b.txt", "The water is a solvent here. PBS is a buffer.\u{c}Page two. PBS served as buffer."),
            ("c.txt", "EGTA is used as buffer in all runs. Water was used as solvent."),
        ]);
        let first = run_pipeline(&cfg).unwrap();
        assert_eq!(first.count("documents"), 2);
        assert_eq!(first.count("duplicates"), 1);
        assert!(first.accounting_errors().is_empty(), "{:?}", first.accounting_errors());
        assert!(first.stages.iter().all(|s| s.status == StageStatus::Ran));
        let ttl = fs::read_to_string(cfg.paths().turtle).unwrap();
        assert!(ttl.contains("obo:CHEBI_30741 obo:RO_0000087 obo:CHEBI_35225 ."), "{ttl}");
        assert!(ttl.contains("obo:CHEBI_15377 obo:RO_0000087 obo:CHEBI_46787 ."));

        let second = run_pipeline(&cfg).unwrap();
        assert!(second.stages.iter().all(|s| s.status == StageStatus::Skipped), "{second}");
        assert_eq!(second.count("pairs"), first.count("pairs"));
        assert_eq!(fs::read_to_string(cfg.paths().turtle).unwrap(), ttl);

        // a build-only parameter reruns just the build stage
        let cfg2 = PipelineConfig { min_ref: 2, ..cfg.clone() };
        let third = run_pipeline(&cfg2).unwrap();
        let ran: Vec<Stage> = third.stages.iter().filter(|s| s.status == StageStatus::Ran).map(|s| s.stage).collect();
        assert_eq!(ran, vec![Stage::Build]);

        // a deleted output reruns its stage; identical content leaves the
        // downstream stages up to date
        fs::remove_file(cfg2.paths().pairs).unwrap();
        let fourth = run_pipeline(&cfg2).unwrap();
        let ran: Vec<Stage> = fourth.stages.iter().filter(|s| s.status == StageStatus::Ran).map(|s| s.stage).collect();
        assert_eq!(ran, vec![Stage::Candidates]);
        run_pipeline(&cfg).unwrap();
        assert_eq!(fs::read_to_string(cfg.paths().turtle).unwrap(), ttl);
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let (d, cfg) = setup(&[("bad.json", "{not json")]);
        let err = run_pipeline(&cfg).unwrap_err();
        assert!(matches!(err, PipelineError::Stage { stage: Stage::Ingest, .. }));
        assert!(err.to_string().starts_with("stage ingest failed"));
        drop(d);
    }
}

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Subcommand, ValueEnum};
use serde::Serialize;
use spancode_core::dataset::{build_ablation, emit_training_bundle, sha256_hex, AblationVariant};
use spancode_core::document::parse_documents;
use spancode_core::expansion::{
    coverage_report, extract_gold_pairs, pairs_to_jsonl, parse_pair_store, silver_stage, synthetic_stage,
    EvidenceCodePair, ExpansionConfig, PairSource,
};
use spancode_core::inference::{
    parse_prediction_store, predict, predict_with_evidence, prediction_store_to_jsonl, InferenceOptions,
    StoredPrediction,
};
use spancode_core::kb::{parse_alpha_index, parse_order_file, AlphaIndex};
use spancode_core::llm::{
    Gateway, GatewayConfig, HttpTransport, HttpTransportConfig, MockTranscript, ResponseCache,
};
use spancode_core::metrics::{
    code_set_metrics, match_evidence_llm, match_evidence_local, EvalReport, JudgeOptions, MacroUniverse,
};
use spancode_core::{AnnotatedDocument, Code, CodeHierarchy};
use spancode_review::{import_documents, ReviewService, ServiceOptions};

use crate::config::ToolConfig;
use crate::Invalid;

#[derive(Subcommand)]
pub enum Command {
    /// Code hierarchy checks and snapshot
    Kb {
        #[command(subcommand)]
        action: KbAction,
    },
    /// Evidence–code pairs
    Pairs {
        #[command(subcommand)]
        tier: PairsTier,
    },
    /// Instruction-tuning data
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Predict evidence and codes for each document
    Infer {
        #[arg(long, value_name = "FILE")]
        documents: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Give the model each document's gold evidence and ask only for codes
        #[arg(long)]
        gold_evidence: bool,
    },
    /// Score predictions against gold documents
    Eval {
        #[arg(long, value_name = "FILE")]
        gold: PathBuf,
        #[arg(long, value_name = "FILE")]
        pred: PathBuf,
        #[arg(long, value_enum, default_value_t = EvidenceMode::Local)]
        evidence: EvidenceMode,
        #[arg(long, value_enum, default_value_t = Universe::Observed)]
        universe: Universe,
        /// Also write the full report as JSON
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
    /// Run the review service
    Serve {
        /// Data directory holding documents/ and the event log
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Import these documents into the data directory first
        #[arg(long, value_name = "FILE")]
        documents: Option<PathBuf>,
        /// Built UI to serve under /
        #[arg(long = "static", value_name = "DIR")]
        static_dir: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Subcommand)]
pub enum KbAction {
    /// Parse the order file (and index, if given) and write one record per line
    Build {
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
pub enum PairsTier {
    /// Pairs from the Alphabetic Index
    Gold {
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Pairs mined from labeled documents and consolidated per code
    Silver {
        #[arg(long, value_name = "FILE")]
        documents: PathBuf,
        /// Gold pair store; its terms are shown to the model per code
        #[arg(long, value_name = "FILE")]
        gold: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Generated pairs for target codes with no gold or silver evidence
    Synth {
        #[arg(long, value_name = "FILE")]
        gold: PathBuf,
        #[arg(long, value_name = "FILE")]
        silver: PathBuf,
        /// One code per line; defaults to every billable code
        #[arg(long, value_name = "FILE")]
        targets: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
pub enum DatasetAction {
    /// Mixed document and span samples plus a training config
    Build {
        #[arg(long, value_name = "FILE")]
        documents: PathBuf,
        /// Pair stores to draw span samples from
        #[arg(long = "pairs", value_name = "FILE")]
        pairs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Variant::Full)]
        variant: Variant,
        /// Output directory; `all` writes one subdirectory per variant
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Variant {
    CodeOnly,
    Evidence,
    GoldSpans,
    Full,
    All,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvidenceMode {
    Local,
    Llm,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Universe {
    Observed,
    Gold,
}

/// The machine-readable line printed after every run.
#[derive(Debug, Serialize)]
pub struct Summary {
    pub command: String,
    pub counts: BTreeMap<String, u64>,
    /// Output path to SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub address: Option<String>,
}

impl Summary {
    fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            counts: BTreeMap::new(),
            outputs: BTreeMap::new(),
            address: None,
        }
    }

    fn count(&mut self, key: &str, value: usize) -> &mut Self {
        self.counts.insert(key.to_string(), value as u64);
        self
    }

    fn write(&mut self, path: &Path, content: &str) -> anyhow::Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        fs::write(path, content).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.insert(path.display().to_string(), sha256_hex(content.as_bytes()));
        Ok(())
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_kb(cfg: &ToolConfig) -> anyhow::Result<CodeHierarchy> {
    let path = cfg.kb_path()?;
    parse_order_file(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_index(path: &Path) -> anyhow::Result<AlphaIndex> {
    parse_alpha_index(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_documents(path: &Path) -> anyhow::Result<Vec<AnnotatedDocument>> {
    parse_documents(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_pairs(path: &Path) -> anyhow::Result<Vec<EvidenceCodePair>> {
    parse_pair_store(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn gateway(cfg: &ToolConfig) -> anyhow::Result<Gateway> {
    let cache = match &cfg.cache_dir {
        Some(dir) => ResponseCache::open(dir).with_context(|| format!("opening cache {}", dir.display()))?,
        None => ResponseCache::in_memory(),
    };
    let mut config = GatewayConfig::default();
    if let Some(p) = cfg.parallelism {
        config.max_in_flight = p;
    }
    if let Some(path) = &cfg.mock_transcript {
        let transcript =
            MockTranscript::load(path).with_context(|| format!("loading transcript {}", path.display()))?;
        return Ok(Gateway::new(transcript, config, cache));
    }
    let Some(url) = &cfg.endpoint else {
        bail!(Invalid("this command calls a model: set `endpoint` or `mock_transcript`".into()));
    };
    let transport = HttpTransport::new(HttpTransportConfig {
        api_key_env: cfg.api_key_env.clone(),
        ..HttpTransportConfig::new(url.clone())
    })?;
    Ok(Gateway::new(transport, config, cache))
}

fn expansion_config(cfg: &ToolConfig) -> ExpansionConfig {
    let mut c = ExpansionConfig::default();
    if let Some(m) = &cfg.model {
        c.mine.model = m.clone();
        c.consolidate.model = m.clone();
        c.synthesis.model = m.clone();
    }
    if let Some(t) = cfg.temperature {
        c.mine.temperature = t;
        c.consolidate.temperature = t;
        c.synthesis.temperature = t;
    }
    if let Some(p) = cfg.parallelism {
        c.mine.parallelism = p;
        c.synthesis.parallelism = p;
    }
    if let Some(cap) = cfg.cap {
        c.consolidate.cap = cap;
    }
    c
}

fn inference_options(cfg: &ToolConfig) -> InferenceOptions {
    let mut o = InferenceOptions::default();
    if let Some(m) = &cfg.model {
        o.model = m.clone();
    }
    if let Some(t) = cfg.temperature {
        o.temperature = t;
    }
    o
}

fn judge_options(cfg: &ToolConfig) -> JudgeOptions {
    let mut o = JudgeOptions::default();
    if let Some(m) = &cfg.model {
        o.model = m.clone();
    }
    if let Some(t) = cfg.temperature {
        o.temperature = t;
    }
    o
}

pub fn run(command: Command, cfg: &ToolConfig) -> anyhow::Result<Summary> {
    match command {
        Command::Kb {
            action: KbAction::Build { out },
        } => kb_build(cfg, &out),
        Command::Pairs { tier } => match tier {
            PairsTier::Gold { out } => pairs_gold(cfg, &out),
            PairsTier::Silver { documents, gold, out } => pairs_silver(cfg, &documents, &gold, &out),
            PairsTier::Synth {
                gold,
                silver,
                targets,
                out,
            } => pairs_synth(cfg, &gold, &silver, targets.as_deref(), &out),
        },
        Command::Dataset {
            action: DatasetAction::Build {
                documents,
                pairs,
                variant,
                out,
            },
        } => dataset_build(cfg, &documents, &pairs, variant, &out),
        Command::Infer {
            documents,
            out,
            gold_evidence,
        } => infer(cfg, &documents, &out, gold_evidence),
        Command::Eval {
            gold,
            pred,
            evidence,
            universe,
            report,
        } => eval(cfg, &gold, &pred, evidence, universe, report.as_deref()),
        Command::Serve {
            data,
            documents,
            static_dir,
            addr,
        } => serve(cfg, &data, documents.as_deref(), static_dir, addr),
    }
}

fn kb_build(cfg: &ToolConfig, out: &Path) -> anyhow::Result<Summary> {
    let kb = load_kb(cfg)?;
    let mut s = Summary::new("kb build");
    s.count("codes", kb.len())
        .count("billable", kb.billable_codes().count())
        .count("roots", kb.roots().len());
    if let Some(path) = &cfg.index {
        let index = load_index(path)?;
        let unknown = index.entries.iter().filter(|e| !kb.contains(e.code.as_str())).count();
        s.count("index_entries", index.entries.len())
            .count("index_skipped", index.skipped)
            .count("index_unknown_codes", unknown);
    }
    let lines: String = kb
        .records()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect();
    s.write(out, &lines)?;
    Ok(s)
}

fn pairs_gold(cfg: &ToolConfig, out: &Path) -> anyhow::Result<Summary> {
    let kb = load_kb(cfg)?;
    let index = load_index(cfg.index_path()?)?;
    let gold = extract_gold_pairs(&index.entries, &kb);
    let mut s = Summary::new("pairs gold");
    s.count("index_records", index.entries.len())
        .count("dropped", gold.dropped)
        .count("pairs", gold.pairs.len());
    s.write(out, &pairs_to_jsonl(&gold.pairs))?;
    Ok(s)
}

fn expect_tier(pairs: &[EvidenceCodePair], tier: PairSource, path: &Path) -> Result<(), Invalid> {
    match pairs.iter().find(|p| p.source != tier) {
        Some(p) => Err(Invalid(format!(
            "{}: expected only {tier:?} pairs, found {:?} for {}",
            path.display(),
            p.source,
            p.code
        ))),
        None => Ok(()),
    }
}

fn pairs_silver(cfg: &ToolConfig, documents: &Path, gold: &Path, out: &Path) -> anyhow::Result<Summary> {
    let kb = load_kb(cfg)?;
    let docs = load_documents(documents)?;
    let gold_pairs = load_pairs(gold)?;
    expect_tier(&gold_pairs, PairSource::Gold, gold)?;
    let gw = gateway(cfg)?;
    let run = silver_stage(&docs, &gold_pairs, &kb, &gw, &expansion_config(cfg))?;
    for (doc, err) in &run.skipped_documents {
        tracing::warn!(doc = %doc, error = %err, "document skipped");
    }
    let mut s = Summary::new("pairs silver");
    s.count("documents", docs.len())
        .count("skipped_documents", run.skipped_documents.len())
        .count("codes", run.table.len())
        .count("fallback_codes", run.fallback_codes.len())
        .count("pairs", run.pairs.len())
        .count("network_calls", gw.network_calls() as usize);
    s.write(out, &pairs_to_jsonl(&run.pairs))?;
    Ok(s)
}

fn parse_targets(text: &str, kb: &CodeHierarchy) -> Result<BTreeSet<Code>, Invalid> {
    let mut targets = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let raw = line.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let code = Code::parse(raw).map_err(|e| Invalid(format!("targets line {}: {e}", idx + 1)))?;
        if !kb.contains(code.as_str()) {
            return Err(Invalid(format!("targets line {}: {code} is not in the hierarchy", idx + 1)));
        }
        targets.insert(code);
    }
    Ok(targets)
}

fn pairs_synth(
    cfg: &ToolConfig,
    gold: &Path,
    silver: &Path,
    targets: Option<&Path>,
    out: &Path,
) -> anyhow::Result<Summary> {
    let kb = load_kb(cfg)?;
    let gold_pairs = load_pairs(gold)?;
    expect_tier(&gold_pairs, PairSource::Gold, gold)?;
    let silver_pairs = load_pairs(silver)?;
    expect_tier(&silver_pairs, PairSource::Silver, silver)?;
    let targets = match targets {
        Some(path) => parse_targets(&read(path)?, &kb)?,
        None => kb.billable_codes().cloned().collect(),
    };
    let gw = gateway(cfg)?;
    let run = synthetic_stage(&targets, &gold_pairs, &silver_pairs, &kb, &gw, &expansion_config(cfg))?;
    let all: Vec<EvidenceCodePair> = gold_pairs.iter().chain(&silver_pairs).chain(&run.pairs).cloned().collect();
    let coverage = coverage_report(&all, &targets);
    let mut s = Summary::new("pairs synth");
    s.count("targets", targets.len())
        .count("synthesized_codes", run.neighbors.len())
        .count("pairs", run.pairs.len())
        .count("residue", run.residue.len())
        .count("uncovered", coverage.uncovered.len())
        .count("network_calls", gw.network_calls() as usize);
    s.write(out, &pairs_to_jsonl(&run.pairs))?;
    Ok(s)
}

fn dataset_build(
    cfg: &ToolConfig,
    documents: &Path,
    pair_files: &[PathBuf],
    variant: Variant,
    out: &Path,
) -> anyhow::Result<Summary> {
    let kb = load_kb(cfg)?;
    let docs = load_documents(documents)?;
    let mut pairs = Vec::new();
    for path in pair_files {
        pairs.extend(load_pairs(path)?);
    }
    let variants: Vec<AblationVariant> = match variant {
        Variant::CodeOnly => vec![AblationVariant::CodeOnly],
        Variant::Evidence => vec![AblationVariant::Evidence],
        Variant::GoldSpans => vec![AblationVariant::GoldSpans],
        Variant::Full => vec![AblationVariant::Full],
        Variant::All => AblationVariant::ALL.to_vec(),
    };
    let mut s = Summary::new("dataset build");
    s.count("documents", docs.len()).count("pairs", pairs.len());
    for v in variants {
        let samples = build_ablation(v, &docs, &pairs, &kb, cfg.seed(), cfg.duplication())?;
        let dir = if matches!(variant, Variant::All) { out.join(v.name()) } else { out.to_path_buf() };
        let manifest = emit_training_bundle(&samples, &dir, cfg.seed())?;
        s.count(&format!("{}_records", v.name()), manifest.records);
        for f in manifest.files {
            s.outputs.insert(dir.join(&f.file).display().to_string(), f.sha256);
        }
    }
    Ok(s)
}

fn infer(cfg: &ToolConfig, documents: &Path, out: &Path, gold_evidence: bool) -> anyhow::Result<Summary> {
    let kb = load_kb(cfg)?;
    let docs = load_documents(documents)?;
    let gw = gateway(cfg)?;
    let options = inference_options(cfg);
    let mut stored = Vec::with_capacity(docs.len());
    let mut unknown = 0;
    let mut without_evidence = 0;
    for doc in &docs {
        let result = if gold_evidence {
            let (spans, _) = spancode_core::dataset::ordered_targets(doc)?;
            if spans.is_empty() {
                // Nothing to give the model; fall back to the standard prompt.
                without_evidence += 1;
                predict(&doc.text, &kb, &gw, &options)
            } else {
                predict_with_evidence(&doc.text, &spans, &kb, &gw, &options)
            }
        } else {
            predict(&doc.text, &kb, &gw, &options)
        }
        .with_context(|| format!("document {}", doc.id))?;
        unknown += result.unknown_codes.len();
        stored.push(StoredPrediction::new(doc.id.clone(), &result));
    }
    let mut s = Summary::new(if gold_evidence { "infer gold-evidence" } else { "infer" });
    s.count("documents", docs.len())
        .count("codes", stored.iter().map(|p| p.codes.len()).sum())
        .count("unknown_codes", unknown)
        .count("network_calls", gw.network_calls() as usize);
    if gold_evidence {
        s.count("documents_without_evidence", without_evidence);
    }
    s.write(out, &prediction_store_to_jsonl(&stored))?;
    Ok(s)
}

fn eval(
    cfg: &ToolConfig,
    gold: &Path,
    pred: &Path,
    evidence: EvidenceMode,
    universe: Universe,
    report_path: Option<&Path>,
) -> anyhow::Result<Summary> {
    let docs = load_documents(gold)?;
    let predictions = parse_prediction_store(&read(pred)?).with_context(|| format!("parsing {}", pred.display()))?;
    let mut by_id: BTreeMap<&str, &StoredPrediction> = BTreeMap::new();
    for p in &predictions {
        if by_id.insert(&p.doc_id, p).is_some() {
            bail!(Invalid(format!("{}: more than one prediction for {}", pred.display(), p.doc_id)));
        }
    }
    let known: BTreeSet<&str> = docs.iter().map(|d| d.id.as_str()).collect();
    if let Some(stray) = by_id.keys().find(|id| !known.contains(*id)) {
        bail!(Invalid(format!("{}: prediction for unknown document {stray}", pred.display())));
    }
    if docs.is_empty() {
        bail!(Invalid(format!("{}: no documents", gold.display())));
    }

    let gw = if evidence == EvidenceMode::Llm { Some(gateway(cfg)?) } else { None };
    let judge = judge_options(cfg);
    let empty = StoredPrediction::new("", &Default::default());
    let mut code_pairs = Vec::with_capacity(docs.len());
    let mut counts = Vec::new();
    let mut missing = 0;
    for doc in &docs {
        let p = by_id.get(doc.id.as_str()).copied().unwrap_or_else(|| {
            missing += 1;
            tracing::warn!(doc = %doc.id, "no prediction; scoring as empty");
            &empty
        });
        code_pairs.push((doc.codes.iter().cloned().collect(), p.codes.iter().cloned().collect()));
        if doc.evidence.is_empty() {
            continue;
        }
        let gold_spans = doc.evidence_texts();
        match (evidence, &gw) {
            (EvidenceMode::Local, _) => counts.push(match_evidence_local(&p.evidence, &gold_spans, cfg.tau())),
            (EvidenceMode::Llm, Some(gw)) => counts.push(
                match_evidence_llm(&p.evidence, &gold_spans, gw, &judge)
                    .with_context(|| format!("judging {}", doc.id))?,
            ),
            _ => {}
        }
    }
    let universe = match universe {
        Universe::Observed => MacroUniverse::Observed,
        Universe::Gold => MacroUniverse::GoldOnly,
    };
    let report = EvalReport::new(code_set_metrics(&code_pairs, universe), &counts);
    println!("{}", report.table());

    let mut s = Summary::new("eval");
    s.count("documents", docs.len())
        .count("missing_predictions", missing)
        .count("evidence_documents", counts.len());
    if let Some(gw) = &gw {
        s.count("network_calls", gw.network_calls() as usize);
    }
    if let Some(path) = report_path {
        let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        s.write(path, &json)?;
    }
    Ok(s)
}

fn serve(
    cfg: &ToolConfig,
    data: &Path,
    documents: Option<&Path>,
    static_dir: Option<PathBuf>,
    addr: SocketAddr,
) -> anyhow::Result<Summary> {
    let kb = Arc::new(load_kb(cfg)?);
    if let Some(path) = documents {
        import_documents(data, &load_documents(path)?)?;
    }
    if let Some(dir) = &static_dir {
        if !dir.is_dir() {
            bail!(Invalid(format!("static directory {} does not exist", dir.display())));
        }
    }
    let gw = Arc::new(gateway(cfg)?);
    let options = ServiceOptions {
        inference: inference_options(cfg),
        threshold: cfg.tau(),
        ..ServiceOptions::default()
    };
    let service = Arc::new(ReviewService::open(data, kb, gw, options)?);
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        let mut s = Summary::new("serve");
        s.count("documents", service.list().len());
        s.address = Some(listener.local_addr()?.to_string());
        // The summary goes out before serving so callers can find the port.
        println!("{}", serde_json::to_string(&s).expect("summary serializes"));
        spancode_review::serve(listener, spancode_review::router(service, static_dir)).await?;
        Ok(s)
    })
}

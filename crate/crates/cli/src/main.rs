use std::fs;
use std::io::{BufRead, BufReader, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use promptscope::analytics::{build_report, CorpusReport};
use promptscope::harness::{
    compare_patterns, BindingSet, CompareOptions, ExpectedJsonSchema, HttpProvider, MockProvider, Provider,
};
use promptscope::ingest::{filter_records, read_jsonl};
use promptscope::lint::{apply_fixes, explain_rule, format_text, lint, FixPolicy, Severity};
use promptscope::manifest::{run_timestamp, RunManifest};
use promptscope::metadata::{MetadataClient, MetadataError};
use promptscope::{parse_template, Analyzer, Config, PromptTemplate};

#[derive(Parser)]
#[command(name = "promptscope", version, about = "Lint and analyse LLM prompt templates")]
struct Cli {
    /// TOML or JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Lint template files.
    Lint {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// Rewrite files for R3/R4, keeping a .bak copy.
        #[arg(long)]
        fix: bool,
        /// Lowest severity that makes the run fail.
        #[arg(long, default_value = "warning")]
        fail_level: Severity,
    },
    /// Corpus statistics over a JSON Lines file of templates.
    Analyze {
        corpus: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Timestamp recorded in the manifest (RFC 3339).
        #[arg(long)]
        timestamp: Option<DateTime<Utc>>,
    },
    /// Filter a raw prompt dataset.
    Ingest {
        dataset: PathBuf,
        /// Frozen "now" for the recency check (RFC 3339).
        #[arg(long)]
        reference_time: DateTime<Utc>,
        #[arg(long, default_value = "filtered.jsonl")]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        min_stars: Option<u64>,
        #[arg(long)]
        max_age_days: Option<i64>,
        #[arg(long)]
        min_tokens: Option<usize>,
        /// Fail when metadata is missing instead of dropping the record.
        #[arg(long)]
        strict: bool,
        /// Metadata fixture directory (`<owner>/<name>.json`); no network.
        #[arg(long)]
        offline: Option<PathBuf>,
        /// Look up missing metadata over the network.
        #[arg(long)]
        fetch_metadata: bool,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Run templates through a model and score JSON format-following.
    Eval {
        /// `TAG=PATH`, repeatable; a bare path uses the file stem as tag.
        #[arg(long = "variant", required = true)]
        variants: Vec<String>,
        #[arg(long)]
        bindings: PathBuf,
        /// Scripted outputs: `<dir>/<template_id>/<input_id>.txt`.
        #[arg(long, conflicts_with_all = ["endpoint", "model"])]
        mock: Option<PathBuf>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
        /// Expected JSON keys, comma separated; default taken from the first variant.
        #[arg(long, value_delimiter = ',')]
        keys: Vec<String>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Show the rationale for a lint rule.
    Explain { rule: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        // a closed pipe (`promptscope ... | head`) is not an error worth reporting
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn emit(text: impl std::fmt::Display) -> std::io::Result<()> {
    writeln!(std::io::stdout().lock(), "{text}")
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    cfg.lint.validate()?;
    match cli.command {
        Command::Lint { paths, format, fix, fail_level } => cmd_lint(&cfg, &paths, format, fix, fail_level),
        Command::Analyze { corpus, out, timestamp } => cmd_analyze(&cfg, &corpus, &out, timestamp),
        Command::Ingest {
            dataset,
            reference_time,
            out,
            trace,
            min_stars,
            max_age_days,
            min_tokens,
            strict,
            offline,
            fetch_metadata,
            cache,
        } => {
            let p = &mut cfg.ingest;
            p.min_stars = min_stars.unwrap_or(p.min_stars);
            p.max_age_days = max_age_days.unwrap_or(p.max_age_days);
            p.min_tokens = min_tokens.unwrap_or(p.min_tokens);
            p.strict |= strict;
            if offline.is_some() {
                cfg.metadata.offline_dir = offline;
            }
            if cache.is_some() {
                cfg.metadata.cache_dir = cache;
            }
            let lookup = fetch_metadata || cfg.metadata.offline_dir.is_some();
            cmd_ingest(&cfg, &dataset, reference_time, &out, trace.as_deref(), lookup)
        }
        Command::Eval { variants, bindings, mock, endpoint, model, keys, format } => {
            if let Some(e) = endpoint {
                cfg.provider.endpoint = e;
            }
            if let Some(m) = model {
                cfg.provider.model = m;
            }
            cmd_eval(&cfg, &variants, &bindings, mock, &keys, format)
        }
        Command::Explain { rule } => {
            emit(explain_rule(&rule)?)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn analyzer(cfg: &Config) -> Result<Analyzer> {
    Ok(Analyzer::new(&cfg.segmenter, cfg.taxonomy.clone())?)
}

fn color(on: bool, sev: Severity, s: &str) -> String {
    if !on {
        return s.to_string();
    }
    let code = match sev {
        Severity::Error => "31",
        Severity::Warning => "33",
        Severity::Info => "36",
    };
    format!("\x1b[{code}m{s}\x1b[0m")
}

fn cmd_lint(cfg: &Config, paths: &[PathBuf], format: Format, fix: bool, fail_level: Severity) -> Result<ExitCode> {
    let analyzer = analyzer(cfg)?;
    let use_color = std::env::var_os("NO_COLOR").is_none() && std::io::stdout().is_terminal();
    let mut failing = false;
    let mut all = Vec::new();
    for path in paths {
        let shown = path.display().to_string();
        let text = fs::read_to_string(path).with_context(|| format!("reading {shown}"))?;
        let template = parse_template(&text, &shown).with_context(|| format!("parsing {shown}"))?;
        let bundle = analyzer.analyze(&template);
        let mut diags = lint(&bundle, &cfg.lint)?;
        if fix && !diags.is_empty() {
            let fixed = apply_fixes(&analyzer, &bundle, &diags, FixPolicy::default())?;
            if fixed != text {
                let mut bak = path.as_os_str().to_owned();
                bak.push(".bak");
                fs::copy(path, PathBuf::from(bak)).with_context(|| format!("backing up {shown}"))?;
                fs::write(path, &fixed).with_context(|| format!("writing {shown}"))?;
                let rebundle = analyzer.analyze(&parse_template(&fixed, &shown)?);
                diags = lint(&rebundle, &cfg.lint)?;
                if let Format::Text = format {
                    eprintln!("{shown}: fixed");
                }
            }
        }
        failing |= diags.iter().any(|d| d.severity <= fail_level);
        match format {
            Format::Text => {
                if !diags.is_empty() {
                    let body = format_text(&shown, &fs::read_to_string(path)?, &diags);
                    let body = diags.iter().fold(body, |acc, d| {
                        let tag = format!("{}[{}]", d.severity, d.rule);
                        acc.replacen(&format!(": {tag}:"), &format!(": {}:", color(use_color, d.severity, &tag)), 1)
                    });
                    emit(body)?;
                }
            }
            Format::Json => all.push(serde_json::json!({ "path": shown, "diagnostics": diags })),
        }
    }
    if let Format::Json = format {
        emit(serde_json::to_string_pretty(&all)?)?;
    }
    Ok(if failing { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

#[derive(Deserialize)]
struct CorpusEntry {
    id: String,
    #[serde(alias = "prompt", alias = "template")]
    text: String,
}

fn read_corpus(path: &Path) -> Result<Vec<PromptTemplate>> {
    let f = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: CorpusEntry = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: malformed JSON line", path.display(), i + 1))?;
        out.push(
            parse_template(&e.text, &e.id)
                .with_context(|| format!("{}:{}: template {}", path.display(), i + 1, e.id))?,
        );
    }
    Ok(out)
}

fn cmd_analyze(cfg: &Config, corpus: &Path, out: &Path, timestamp: Option<DateTime<Utc>>) -> Result<ExitCode> {
    let templates = read_corpus(corpus)?;
    let bundles = analyzer(cfg)?.analyze_corpus(&templates);
    let mut report: CorpusReport<f64> = build_report(&bundles, cfg.report.top_terms)?;
    report.manifest = Some(RunManifest::new(
        "analyze",
        &cfg.hash(),
        vec![corpus.display().to_string()],
        timestamp.unwrap_or_else(run_timestamp),
    ));
    fs::create_dir_all(out)?;
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    fs::write(out.join("report.md"), report.to_markdown())?;
    emit(format!("analysed {} templates; wrote {}", report.n_templates, out.join("report.json").display()))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_ingest(
    cfg: &Config,
    dataset: &Path,
    reference_time: DateTime<Utc>,
    out: &Path,
    trace_path: Option<&Path>,
    lookup: bool,
) -> Result<ExitCode> {
    let f = fs::File::open(dataset).with_context(|| format!("reading {}", dataset.display()))?;
    let mut records = read_jsonl(BufReader::new(f))?;
    if lookup {
        let client = MetadataClient::new(cfg.metadata.clone());
        let wanted: Vec<String> = records.iter().filter(|r| !r.has_metadata()).map(|r| r.repo.clone()).collect();
        let fetched = client.fetch_many(&wanted);
        for r in records.iter_mut().filter(|r| !r.has_metadata()) {
            match &fetched[&r.repo] {
                Ok(m) => {
                    r.stars = r.stars.or(Some(m.stars));
                    r.pushed_at = r.pushed_at.or(Some(m.pushed_at));
                }
                Err(MetadataError::NotFound(_)) if !cfg.ingest.strict => {}
                Err(e) if cfg.ingest.strict => bail!("metadata for record {}: {e}", r.id),
                Err(e) => eprintln!("warning: metadata for record {}: {e}", r.id),
            }
        }
    }
    let (kept, trace) = filter_records(&records, &cfg.ingest, reference_time)?;
    let mut w = std::io::BufWriter::new(fs::File::create(out).with_context(|| format!("writing {}", out.display()))?);
    for r in &kept {
        writeln!(w, "{}", serde_json::to_string(r)?)?;
    }
    w.flush()?;
    if let Some(p) = trace_path {
        let manifest = RunManifest::new("ingest", &cfg.hash(), vec![dataset.display().to_string()], run_timestamp());
        let doc = serde_json::json!({ "manifest": manifest, "trace": trace });
        fs::write(p, serde_json::to_string_pretty(&doc)? + "\n")?;
    }
    emit(trace.to_table().trim_end())?;
    if trace.dropped_missing_metadata > 0 {
        emit(format!("({} records dropped for missing metadata)", trace.dropped_missing_metadata))?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Deserialize)]
struct BindingEntry {
    id: String,
    bindings: std::collections::BTreeMap<String, String>,
}

fn cmd_eval(
    cfg: &Config,
    variants: &[String],
    bindings_path: &Path,
    mock: Option<PathBuf>,
    keys: &[String],
    format: Format,
) -> Result<ExitCode> {
    let mut loaded = Vec::new();
    for v in variants {
        let (tag, path) = match v.split_once('=') {
            Some((t, p)) => (t.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(v);
                let stem = p.file_stem().and_then(|s| s.to_str()).ok_or_else(|| anyhow!("bad variant path {v}"))?;
                (stem.to_string(), p)
            }
        };
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or(&tag).to_string();
        loaded.push((tag, parse_template(&text, &id)?));
    }
    let raw = fs::read_to_string(bindings_path).with_context(|| format!("reading {}", bindings_path.display()))?;
    let entries: Vec<BindingEntry> =
        serde_json::from_str(&raw).context("bindings file must be a JSON array of {id, bindings}")?;
    let bindings: Vec<BindingSet> = entries.into_iter().map(|e| (e.id, e.bindings)).collect();

    let schema = if keys.is_empty() {
        let first = analyzer(cfg)?.analyze(&loaded[0].1);
        ExpectedJsonSchema::from_attributes(&first.json_attributes)
    } else {
        ExpectedJsonSchema::new(keys.iter().cloned())
    };

    let provider: Box<dyn Provider> = match mock {
        Some(dir) => Box::new(MockProvider::Dir(dir)),
        None => Box::new(HttpProvider::new(cfg.provider.clone())?),
    };
    let opts = CompareOptions { max_in_flight: cfg.provider.max_in_flight, rubric: cfg.rubric.clone(), judge: None };
    let report = compare_patterns(&loaded, &bindings, &schema, provider.as_ref(), &opts)?;

    let mut inputs: Vec<String> = variants.to_vec();
    inputs.push(bindings_path.display().to_string());
    let mut manifest = RunManifest::new("eval", &cfg.hash(), inputs, run_timestamp());
    manifest.live_provider = provider.is_live();
    match format {
        Format::Json => {
            let doc = serde_json::json!({ "schema_version": 1, "manifest": manifest, "comparison": report });
            emit(serde_json::to_string_pretty(&doc)?)?;
        }
        Format::Text => emit(report.to_markdown().trim_end())?,
    }
    Ok(ExitCode::SUCCESS)
}

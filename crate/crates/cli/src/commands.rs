use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::NaiveDate;
use clap::Args;
use serde_json::json;
use sitehazard::extraction::{self, ExtractError};
use sitehazard::gateway::{connect_live, Gateway, GatewayError};
use sitehazard::ingest::{
    crawl_into_corpus, CorpusStore, CrawlWindow, DirPageFetcher, HttpPageFetcher, IndexQuery, IngestError,
    PageFetcher,
};
use sitehazard::rulevqa::{self, BenchError, Mode, SampleStatus, TableRow};
use sitehazard::vision;
use sitehazard::Taxonomy;

use crate::config::Config;
use crate::exit::{unavailable, usage, ExitStatus, Fatal};
use crate::run_manifest::RunLog;

pub const DEFAULT_SEARCH_URL: &str = "https://www.osha.gov/ords/imis/accidentsearch.search";

#[derive(Debug, Clone, Args)]
pub struct CrawlArgs {
    /// First event date of the window (YYYY-MM-DD).
    #[arg(long)]
    pub start: NaiveDate,
    /// Last event date of the window (YYYY-MM-DD).
    #[arg(long)]
    pub end: NaiveDate,
    #[arg(long, default_value = DEFAULT_SEARCH_URL)]
    pub search_url: String,
    /// Extra search parameter passed through unchanged, as KEY=VALUE. Repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE", value_parser = parse_kv)]
    pub params: Vec<(String, String)>,
    #[arg(long, default_value_t = 100)]
    pub page_size: u32,
    #[arg(long)]
    pub max_pages: Option<u32>,
    /// Serve pages from a directory with a `pages.json` URL map instead of the network.
    #[arg(long)]
    pub pages_dir: Option<PathBuf>,
    /// Maximum concurrent detail-page fetches.
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ExtractArgs {
    /// Only these inspection ids (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub ids: Vec<String>,
    /// Process at most this many reports, in corpus order.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Gold labels CSV; when given, accuracy is computed and written.
    #[arg(long)]
    pub gold: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    /// Records to summarise; defaults to `<output-dir>/records.jsonl`.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VisionArgs {
    /// An image file or a directory of PNG/JPEG images.
    #[arg(long)]
    pub images: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// CSV of `sample_id,image_path,rule_id,gold`.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "single")]
    pub mode: Mode,
    /// 1-based prompt used in single mode.
    #[arg(long, default_value_t = rulevqa::DEFAULT_PROMPT_INDEX)]
    pub prompt_index: usize,
    #[arg(long, default_value = "1")]
    pub rule: String,
    /// CSV of externally reported rows `model,precision,recall[,f1]` in percent.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.to_string()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))
}

/// How model calls are served.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatewayMode {
    /// The configured live or replay backend.
    Configured,
    /// Fixture hits replayed, misses sent live and appended to the fixture.
    Recording,
}

fn gateway_failure(e: GatewayError) -> Fatal {
    if e.is_unavailable() {
        unavailable(format!("model backend unavailable: {e}"))
    } else {
        usage(format!("cannot set up model backend: {e}"))
    }
}

pub fn open_gateway(cfg: &Config, mode: GatewayMode) -> Result<Gateway, Fatal> {
    let opts = cfg.gateway_options();
    match mode {
        GatewayMode::Configured => Gateway::connect(&cfg.backend()?, &opts).map_err(gateway_failure),
        GatewayMode::Recording => {
            let fixture = cfg.fixture()?;
            let live = connect_live(&cfg.endpoint_url, &cfg.auth_token_env, &opts).map_err(gateway_failure)?;
            Gateway::recording(live, fixture, &opts).map_err(gateway_failure)
        }
    }
}

fn write_file(path: &Path, body: impl AsRef<[u8]>, log: &mut RunLog) -> anyhow::Result<()> {
    std::fs::write(path, body).with_context(|| format!("cannot write {}", path.display()))?;
    log.output(path);
    Ok(())
}

pub fn cmd_crawl(cfg: &Config, args: &CrawlArgs, log: &mut RunLog) -> anyhow::Result<ExitStatus> {
    let window = CrawlWindow::new(args.start, args.end).map_err(|e| usage(e.to_string()))?;
    if args.concurrency == 0 || args.page_size == 0 {
        return Err(usage("--concurrency and --page-size must be at least 1").into());
    }
    let mut query = IndexQuery::new(args.search_url.clone());
    query.params = args.params.clone();
    query.page_size = args.page_size;
    if let Some(m) = args.max_pages {
        query.max_pages = m;
    }
    let fetcher: Box<dyn PageFetcher> = match &args.pages_dir {
        Some(dir) => Box::new(
            DirPageFetcher::open(dir).map_err(|e| usage(format!("--pages-dir {}: {e}", dir.display())))?,
        ),
        None => Box::new(HttpPageFetcher::new(cfg.politeness()).map_err(|e| unavailable(e.to_string()))?),
    };
    let mut store = CorpusStore::open(&cfg.corpus_dir).map_err(|e| usage(e.to_string()))?;
    let summary = match crawl_into_corpus(
        &window,
        &query,
        fetcher.as_ref(),
        &mut store,
        args.concurrency,
        cfg.execution(),
    ) {
        Ok(s) => s,
        Err(IngestError::Fetch(e)) if e.is_network() => {
            return Err(unavailable(format!("search index unreachable: {e}")).into())
        }
        Err(e) => return Err(e).context("crawl failed"),
    };
    println!(
        "found {}, stored {}, failed {}",
        summary.found,
        summary.stored.len(),
        summary.failed.len()
    );
    for (id, e) in &summary.failed {
        eprintln!("  {id}: {e}");
    }
    log.output(cfg.corpus_dir.join(CorpusStore::INDEX_FILE));
    log.summary = json!({
        "window": {"start": args.start, "end": args.end},
        "found": summary.found,
        "stored": summary.stored,
        "failed": summary.failed.iter().map(|(id, e)| json!({"id": id, "error": e.to_string()})).collect::<Vec<_>>(),
        "corpus_size": store.len(),
    });
    if summary.all_network_failures() {
        return Err(unavailable("every detail page failed with a network error").into());
    }
    Ok(ExitStatus::from_failures(summary.failed.len()))
}

fn open_corpus(dir: &Path) -> Result<CorpusStore, Fatal> {
    let store = CorpusStore::open_existing(dir).map_err(|e| match e {
        IngestError::NoCorpus(_) => usage(format!(
            "no corpus at {}; run `sitehazard crawl` first or point --corpus-dir at an existing corpus",
            dir.display()
        )),
        other => usage(other.to_string()),
    })?;
    if store.is_empty() {
        return Err(usage(format!(
            "corpus at {} is empty; run `sitehazard crawl` to fill it",
            dir.display()
        )));
    }
    Ok(store)
}

pub fn cmd_extract(
    cfg: &Config,
    args: &ExtractArgs,
    mode: GatewayMode,
    log: &mut RunLog,
) -> anyhow::Result<ExitStatus> {
    let store = open_corpus(&cfg.corpus_dir)?;
    let mut ids = if args.ids.is_empty() {
        store.list()
    } else {
        for id in &args.ids {
            if store.entry(id).is_none() {
                return Err(usage(format!("report {id} is not in the corpus")).into());
            }
        }
        args.ids.clone()
    };
    if let Some(n) = args.limit {
        ids.truncate(n);
    }
    let reports = ids
        .iter()
        .map(|id| store.get(id))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| usage(e.to_string()))?;
    let taxonomy = Taxonomy::load();
    let gold = match &args.gold {
        Some(p) => Some(extraction::read_gold(p, &taxonomy).map_err(|e| usage(e.to_string()))?),
        None => None,
    };
    Config::ensure_dir(&cfg.output_dir)?;
    let gateway = open_gateway(cfg, mode)?;
    let outcomes = extraction::extract_all(&reports, &taxonomy, &gateway, cfg.execution());
    log.usage = Some(gateway.usage());
    extraction::write_outputs(&cfg.output_dir, &outcomes)?;
    log.output(cfg.output_dir.join("records.jsonl"));
    log.output(cfg.output_dir.join("raw_responses"));

    let records: Vec<_> = outcomes.iter().filter_map(|o| o.as_ref().ok()).map(|o| o.record.clone()).collect();
    let errors: Vec<&ExtractError> = outcomes.iter().filter_map(|o| o.as_ref().err()).collect();
    let retried: Vec<&str> = outcomes
        .iter()
        .filter_map(|o| o.as_ref().ok())
        .filter(|o| o.retries() > 0)
        .map(|o| o.record.report_id.as_str())
        .collect();
    println!(
        "extracted {} of {} reports ({} needed a retry)",
        records.len(),
        reports.len(),
        retried.len()
    );
    for e in &errors {
        eprintln!("  {e}");
    }
    let mut summary = json!({
        "reports": reports.len(),
        "extracted": records.len(),
        "retried": retried,
        "failed": errors.iter().map(|e| json!({"id": e.report_id(), "error": e.to_string()})).collect::<Vec<_>>(),
    });
    if let Some(gold) = gold {
        let acc = extraction::evaluate_accuracy(&records, &gold).map_err(|e| usage(e.to_string()))?;
        println!("accuracy {}/{} = {:.3}", acc.correct, acc.total, acc.accuracy);
        let path = cfg.output_dir.join("accuracy.json");
        write_file(&path, serde_json::to_string_pretty(&acc)? + "\n", log)?;
        summary["accuracy"] = serde_json::to_value(&acc)?;
    }
    log.summary = summary;
    let unreachable = errors
        .iter()
        .any(|e| matches!(e, ExtractError::Gateway { source, .. } if source.is_unavailable()));
    if records.is_empty() && unreachable {
        return Err(unavailable("no report could be sent to the model backend").into());
    }
    Ok(ExitStatus::from_failures(errors.len()))
}

pub fn cmd_stats(cfg: &Config, args: &StatsArgs, log: &mut RunLog) -> anyhow::Result<ExitStatus> {
    let path = args
        .records
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("records.jsonl"));
    if !path.is_file() {
        return Err(usage(format!(
            "no extraction records at {}; run `sitehazard extract` first or pass --records",
            path.display()
        ))
        .into());
    }
    let records = extraction::read_records(&path).map_err(|e| usage(e.to_string()))?;
    let taxonomy = Taxonomy::load();
    let stats = extraction::frequency_stats(&records, &taxonomy);
    Config::ensure_dir(&cfg.output_dir)?;
    write_file(&cfg.output_dir.join("stats.csv"), stats.to_csv(&taxonomy), log)?;
    write_file(
        &cfg.output_dir.join("stats.json"),
        serde_json::to_string_pretty(&stats)? + "\n",
        log,
    )?;
    println!(
        "{} reports, {} unclassified",
        stats.total_reports, stats.unclassified
    );
    for f in taxonomy.families() {
        println!("  {:<28} {}", f.name, stats.per_family.get(&f.id).copied().unwrap_or(0));
    }
    log.summary = json!({"records": path, "total_reports": stats.total_reports, "unclassified": stats.unclassified});
    Ok(ExitStatus::Success)
}

pub fn cmd_vision(
    cfg: &Config,
    args: &VisionArgs,
    mode: GatewayMode,
    log: &mut RunLog,
) -> anyhow::Result<ExitStatus> {
    let images = if args.images.is_dir() {
        vision::list_images(&args.images).map_err(|e| usage(e.to_string()))?
    } else if args.images.is_file() {
        vec![args.images.clone()]
    } else {
        return Err(usage(format!("no image or directory at {}", args.images.display())).into());
    };
    if images.is_empty() {
        return Err(usage(format!("no PNG or JPEG images in {}", args.images.display())).into());
    }
    let taxonomy = Taxonomy::load();
    Config::ensure_dir(&cfg.output_dir)?;
    let gateway = open_gateway(cfg, mode)?;
    let runs = vision::run_images(&images, &cfg.output_dir, &taxonomy, &gateway, cfg.execution());
    log.usage = Some(gateway.usage());

    let mut per_image = Vec::new();
    let mut failed = 0;
    let mut unreachable = 0;
    for r in &runs {
        match r {
            Ok(run) => {
                println!("{}: {} annotation(s)", run.image_id, run.annotations.len());
                for w in &run.warnings {
                    eprintln!("  {}: {w}", run.image_id);
                }
                log.output(cfg.output_dir.join(&run.image_id));
                per_image.push(json!({
                    "image_id": run.image_id,
                    "status": "complete",
                    "annotations": run.annotations.len(),
                    "warnings": run.warnings.len(),
                }));
            }
            Err(f) => {
                failed += 1;
                if f.error.is_unavailable() {
                    unreachable += 1;
                }
                eprintln!("{}: failed: {}", f.run.image_id, f.error);
                log.output(cfg.output_dir.join(&f.run.image_id));
                per_image.push(json!({
                    "image_id": f.run.image_id,
                    "status": "failed",
                    "error": f.error.to_string(),
                }));
            }
        }
    }
    log.summary = json!({"images": per_image});
    if unreachable == runs.len() {
        return Err(unavailable("no image could be sent to the model backend").into());
    }
    Ok(ExitStatus::from_failures(failed))
}

/// Reads `model,precision,recall[,f1]` rows with percentages; a header row is optional.
pub fn read_reference(path: &Path) -> Result<Vec<TableRow>, Fatal> {
    let bad = |line: usize, why: String| usage(format!("{} line {line}: {why}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(i + 1, e.to_string()))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 1);
        if i == 0 && rec.get(0).is_some_and(|c| c.eq_ignore_ascii_case("model")) {
            continue;
        }
        if !(3..=4).contains(&rec.len()) {
            return Err(bad(line, format!("expected 3 or 4 columns, found {}", rec.len())));
        }
        let num = |j: usize| -> Result<f64, Fatal> {
            let v: f64 = rec[j]
                .parse()
                .map_err(|_| bad(line, format!("{:?} is not a number", &rec[j])))?;
            if (0.0..=100.0).contains(&v) {
                Ok(v)
            } else {
                Err(bad(line, format!("{v} is not a percentage")))
            }
        };
        let f1 = match rec.get(3) {
            Some(s) if !s.is_empty() => Some(num(3)?),
            _ => None,
        };
        rows.push(TableRow::from_percent(&rec[0], num(1)?, num(2)?, f1));
    }
    Ok(rows)
}

pub fn cmd_bench(
    cfg: &Config,
    args: &BenchArgs,
    mode: GatewayMode,
    log: &mut RunLog,
) -> anyhow::Result<ExitStatus> {
    let rule = rulevqa::find_rule(&args.rule).ok_or_else(|| usage(format!("unknown rule {:?}", args.rule)))?;
    let bench_mode = match args.mode {
        Mode::Single(_) => Mode::Single(args.prompt_index),
        Mode::Ensemble => Mode::Ensemble,
    };
    let samples = rulevqa::load_manifest(&args.manifest).map_err(|e| usage(e.to_string()))?;
    if samples.is_empty() {
        return Err(usage(format!("manifest {} has no samples", args.manifest.display())).into());
    }
    let reference = match &args.reference {
        Some(p) => read_reference(p)?,
        None => Vec::new(),
    };
    Config::ensure_dir(&cfg.output_dir)?;
    let gateway = open_gateway(cfg, mode)?;
    let eval = rulevqa::evaluate(&samples, &rule, bench_mode, &gateway, cfg.execution()).map_err(|e| match e {
        BenchError::PromptIndex { .. } | BenchError::RuleMismatch { .. } => usage(e.to_string()),
        BenchError::Io { .. } => Fatal::new(ExitStatus::Partial, e.to_string()),
    })?;
    log.usage = Some(gateway.usage());
    let table = eval.write_outputs(&cfg.output_dir, &cfg.model_name, &reference)?;
    for name in ["results.jsonl", "metrics.csv", "metrics.json", "table.txt"] {
        log.output(cfg.output_dir.join(name));
    }
    print!("{}", table.text);
    for f in &table.flags {
        eprintln!("warning: {f}");
    }
    for r in eval.results.iter().filter(|r| r.status == SampleStatus::Failed) {
        eprintln!("{}: failed: {}", r.sample_id, r.error.as_deref().unwrap_or(""));
    }
    if eval.flagged > 0 {
        eprintln!("{} sample(s) had no valid answer and were scored as no violation", eval.flagged);
    }
    log.summary = json!({
        "rule_id": rule.rule_id,
        "mode": bench_mode.to_string(),
        "samples": samples.len(),
        "failed": eval.failed,
        "flagged": eval.flagged,
        "metrics": eval.metrics,
        "table_flags": table.flags,
    });
    let gateway_failures = eval
        .results
        .iter()
        .filter(|r| r.status == SampleStatus::Failed)
        .filter(|r| !r.error.as_deref().unwrap_or("").starts_with("image:"))
        .count();
    if gateway_failures == samples.len() {
        return Err(unavailable("no sample could be answered by the model backend").into());
    }
    Ok(ExitStatus::from_failures(eval.failed))
}

//! Stage implementations.

use std::collections::{HashMap, HashSet};
use std::fmt::Display;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use tempora_core::consistency::{find_transitive_triples, render_table, ConsistencyReport};
use tempora_core::corpus::{load_corpus, write_corpus, Document, EventPair, Timeline};
use tempora_core::evaluation::{
    bins_to_csv, combine_with_worder, distance_bins, evaluate as score, metrics_to_csv,
    render_metrics_table, worder_predictions, EvalError, EvalScope, MetricsRow,
};
use tempora_core::gateway::{transcripts_to_predictions, Gateway, GatewayError, Transcript};
use tempora_core::io::{self, read_jsonl_numbered, write_jsonl};
use tempora_core::pairing::generate_candidate_pairs;
use tempora_core::predictions::PredictionSet;
use tempora_core::prompting::{build_batchqa, build_cot, PromptScript, Strategy};
use tempora_core::repair::{self as rep, Budget, ConfidenceScheme, RepairOptions};
use tempora_core::synth::{corrupt_predictions, oracle_predictions, synthesize_corpus};
use tempora_core::{Rational, Score};

use crate::config::{Config, ScalarKind};
use crate::manifest::ManifestBuilder;
use crate::{
    CliError, DistanceArgs, EvaluateArgs, PairsArgs, ParseArgs, PromptsArgs, QueryArgs, RepairArgs,
    ReportArgs, ScoreArgs, SynthArgs,
};

fn invalid(e: impl Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn corpus(path: &Path) -> Result<Vec<Document>, CliError> {
    load_corpus(path).map_err(invalid)
}

/// Pairs file lines must name distinct, known events and appear once.
fn load_pairs(path: &Path, docs: &[Document]) -> Result<Vec<EventPair>, CliError> {
    let index: HashMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, pair) in read_jsonl_numbered::<EventPair>(path).map_err(invalid)? {
        let at = |problem: String| invalid(format!("{}:{line}: {problem}", path.display()));
        let doc = index
            .get(pair.doc_id.as_str())
            .ok_or_else(|| at(format!("doc_id: unknown document {:?}", pair.doc_id)))?;
        for (field, id) in [("source", &pair.source_id), ("target", &pair.target_id)] {
            if doc.event(id).is_none() {
                return Err(at(format!("{field}: unknown event {id:?}")));
            }
        }
        if pair.source_id == pair.target_id {
            return Err(at("target: equals source".into()));
        }
        if !seen.insert(pair.clone()) {
            return Err(at(format!("duplicate pair {pair}")));
        }
        out.push(pair);
    }
    Ok(out)
}

fn load_predictions(path: &Path) -> Result<PredictionSet, CliError> {
    PredictionSet::read(path).map_err(invalid)
}

/// Every predicted pair must resolve in the corpus.
fn check_against(preds: &PredictionSet, docs: &[Document], path: &Path) -> Result<(), CliError> {
    let index: HashMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    for pair in preds.pairs() {
        let known = index.get(pair.doc_id.as_str()).is_some_and(|d| {
            d.event(&pair.source_id).is_some() && d.event(&pair.target_id).is_some()
        });
        if !known {
            return Err(invalid(format!(
                "{}: pair {pair} is not in the corpus",
                path.display()
            )));
        }
    }
    Ok(())
}

/// `NAME=PATH` or `PATH` (named by file stem).
fn named(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(arg);
            let name = path
                .file_stem()
                .map_or_else(|| arg.to_string(), |s| s.to_string_lossy().into_owned());
            (name, path)
        }
    }
}

fn eval_err(e: EvalError) -> CliError {
    invalid(e)
}

pub fn synth(mut cfg: Config, a: SynthArgs) -> Result<(), CliError> {
    if let Some(s) = a.seed {
        cfg.synth.seed = s;
    }
    if let Some(d) = a.docs {
        cfg.synth.docs = d;
    }
    if let Some(e) = a.events {
        cfg.synth.events = e;
    }
    if let Some(s) = a.noise_seed {
        cfg.synth.noise_seed = s;
    }
    let mut m = ManifestBuilder::new("synth", cfg.digest());
    m.seed("seed", cfg.synth.seed);

    let generated =
        synthesize_corpus(cfg.synth.seed, cfg.synth.docs, cfg.synth.events).map_err(invalid)?;
    let (docs, timelines): (Vec<Document>, Vec<Timeline<i64>>) = generated.into_iter().unzip();
    write_corpus(&a.out, &docs).map_err(runtime)?;
    write_jsonl(&a.timeline_out, &timelines).map_err(runtime)?;
    m.output("corpus", &a.out)
        .output("timeline", &a.timeline_out);

    if a.oracle_out.is_some() || a.noisy_out.is_some() {
        let pairs: Vec<EventPair> = docs
            .iter()
            .flat_map(|d| generate_candidate_pairs(d, &cfg.pairing))
            .collect();
        let oracle = oracle_predictions(&pairs, &timelines).map_err(runtime)?;
        if let Some(p) = &a.oracle_out {
            oracle.write(p).map_err(runtime)?;
            m.output("oracle", p);
        }
        if let Some(p) = &a.noisy_out {
            corrupt_predictions(&oracle, cfg.synth.noise_seed, cfg.synth.noise)
                .map_err(invalid)?
                .write(p)
                .map_err(runtime)?;
            m.output("noisy", p)
                .seed("noise_seed", cfg.synth.noise_seed);
        }
    }
    m.finish()?;
    println!("wrote {} documents to {}", docs.len(), a.out.display());
    Ok(())
}

pub fn pairs(cfg: Config, a: PairsArgs) -> Result<(), CliError> {
    cfg.pairing.validate().map_err(invalid)?;
    let mut m = ManifestBuilder::new("pairs", cfg.digest());
    let docs = corpus(&a.corpus)?;
    let pairs: Vec<EventPair> = docs
        .iter()
        .flat_map(|d| generate_candidate_pairs(d, &cfg.pairing))
        .collect();
    write_jsonl(&a.out, &pairs).map_err(runtime)?;
    m.input("corpus", &a.corpus).output("pairs", &a.out);
    if let Some(p) = &a.worder_out {
        worder_predictions(&pairs, &docs)
            .map_err(eval_err)?
            .write(p)
            .map_err(runtime)?;
        m.output("worder", p);
    }
    m.finish()?;
    println!("wrote {} pairs to {}", pairs.len(), a.out.display());
    Ok(())
}

pub fn prompts(mut cfg: Config, a: PromptsArgs) -> Result<(), CliError> {
    if let Some(s) = a.strategy {
        cfg.prompting.strategy = s;
    }
    if let Some(s) = a.order_seed {
        cfg.prompting.order_seed = s;
    }
    let mut m = ManifestBuilder::new("prompts", cfg.digest());
    let docs = corpus(&a.corpus)?;
    let pairs = load_pairs(&a.pairs, &docs)?;
    let index: HashMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let scripts = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let doc = index[p.doc_id.as_str()];
            match cfg.prompting.strategy {
                Strategy::BatchQa => {
                    build_batchqa(doc, p, cfg.prompting.order_seed.wrapping_add(i as u64))
                }
                Strategy::Cot => build_cot(doc, p),
            }
        })
        .collect::<Result<Vec<PromptScript>, _>>()
        .map_err(invalid)?;
    write_jsonl(&a.out, &scripts).map_err(runtime)?;
    m.input("corpus", &a.corpus)
        .input("pairs", &a.pairs)
        .output("scripts", &a.out)
        .seed("order_seed", cfg.prompting.order_seed);
    m.finish()?;
    println!(
        "wrote {} {} scripts to {}",
        scripts.len(),
        cfg.prompting.strategy.as_str(),
        a.out.display()
    );
    Ok(())
}

fn gateway_err(e: GatewayError) -> CliError {
    match e {
        GatewayError::Config(_) | GatewayError::MissingApiKey(_) => invalid(e),
        _ => runtime(e),
    }
}

pub fn query(mut cfg: Config, a: QueryArgs) -> Result<(), CliError> {
    let g = &mut cfg.gateway;
    if let Some(mode) = a.mode {
        g.mode = mode;
    }
    if let Some(c) = a.cache {
        g.cache_path = Some(c);
    }
    if let Some(e) = a.endpoint {
        g.endpoint = e;
    }
    if let Some(model) = a.model {
        g.model = model;
    }
    if let Some(r) = a.max_failure_rate {
        cfg.query.max_failure_rate = r;
    }
    let mut m = ManifestBuilder::new("query", cfg.digest());
    let scripts: Vec<PromptScript> = io::read_jsonl(&a.scripts).map_err(invalid)?;
    let gateway = Gateway::new(cfg.gateway.clone()).map_err(gateway_err)?;
    let transcripts = gateway.run_batch(&scripts).map_err(gateway_err)?;
    write_jsonl(&a.out, &transcripts).map_err(runtime)?;
    m.input("scripts", &a.scripts).output("transcripts", &a.out);
    if let Some(c) = &cfg.gateway.cache_path {
        m.input("cache", c);
    }
    if let Some(p) = &a.predictions_out {
        transcripts_to_predictions(&transcripts)
            .write(p)
            .map_err(runtime)?;
        m.output("predictions", p);
    }
    m.finish()?;

    let failed: Vec<&Transcript> = transcripts.iter().filter(|t| t.failed).collect();
    for t in &failed {
        eprintln!(
            "failed: {} ({})",
            t.event_pair(),
            t.error.as_deref().unwrap_or("unknown error")
        );
    }
    println!(
        "{} conversations, {} failed; transcripts in {}",
        transcripts.len(),
        failed.len(),
        a.out.display()
    );
    let total = transcripts.len();
    if total > 0 && failed.len() as f64 / total as f64 > cfg.query.max_failure_rate {
        return Err(CliError::GatewayFailures {
            failed: failed.len(),
            total,
            limit: cfg.query.max_failure_rate,
        });
    }
    Ok(())
}

pub fn parse(cfg: Config, a: ParseArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("parse", cfg.digest());
    let mut transcripts: Vec<Transcript> = io::read_jsonl(&a.transcripts).map_err(invalid)?;
    for t in &mut transcripts {
        t.answers = t.parse_answers();
    }
    let mut preds = transcripts_to_predictions(&transcripts);
    m.input("transcripts", &a.transcripts);
    if a.combine_worder {
        let path = a.corpus.as_ref().expect("clap requires --corpus");
        let docs = corpus(path)?;
        check_against(&preds, &docs, &a.transcripts)?;
        preds = combine_with_worder(&preds, &docs).map_err(eval_err)?;
        m.input("corpus", path);
    }
    preds.write(&a.out).map_err(runtime)?;
    m.output("predictions", &a.out);
    m.finish()?;
    println!("wrote {} predictions to {}", preds.len(), a.out.display());
    Ok(())
}

pub fn score_consistency(mut cfg: Config, a: ScoreArgs) -> Result<(), CliError> {
    if let Some(s) = a.semantics {
        cfg.consistency.semantics = s;
    }
    if let Some(mi) = a.mining {
        cfg.consistency.mining = mi;
    }
    let mut m = ManifestBuilder::new("score-consistency", cfg.digest());
    let mut rows = Vec::new();
    for arg in &a.predictions {
        let (name, path) = named(arg);
        let preds = load_predictions(&path)?;
        let triples = find_transitive_triples(preds.pairs(), cfg.consistency.mining);
        rows.push(
            ConsistencyReport::compute(&name, &preds, &triples, cfg.consistency.semantics)
                .map_err(|e| invalid(format!("{}: {e}", path.display())))?,
        );
        m.input(&name, &path);
    }
    print!("{}", render_table(&rows));
    if let Some(out) = &a.out {
        let json = serde_json::to_string_pretty(&rows).expect("reports serialize");
        write_text(out, &(json + "\n"))?;
        m.output("report", out);
        m.finish()?;
    }
    Ok(())
}

fn repair_with<S: Score>(
    preds: &PredictionSet,
    opts: &RepairOptions,
) -> Result<(PredictionSet, rep::RepairReport, ConsistencyReport), CliError> {
    let out = rep::repair(preds, ConfidenceScheme::<S>::default(), opts).map_err(runtime)?;
    Ok((out.predictions, out.report, out.consistency))
}

pub fn repair(mut cfg: Config, a: RepairArgs) -> Result<(), CliError> {
    if let Some(t) = a.time_limit {
        cfg.repair.time_limit_secs = t;
    }
    if let Some(n) = a.node_limit {
        cfg.repair.node_limit = Some(n);
    }
    if let Some(s) = a.scalar {
        cfg.repair.scalar = s;
    }
    if let Some(mi) = a.mining {
        cfg.repair.mining = mi;
    }
    let r = &cfg.repair;
    if !(r.time_limit_secs > 0.0 && r.time_limit_secs.is_finite()) {
        return Err(invalid("time limit must be a positive number of seconds"));
    }
    let mut m = ManifestBuilder::new("repair", cfg.digest());
    let preds = load_predictions(&a.predictions)?;
    let opts = RepairOptions {
        budget: Budget {
            time_limit: Duration::from_secs_f64(r.time_limit_secs),
            node_limit: r.node_limit.unwrap_or(u64::MAX),
        },
        mining: r.mining,
        parallel: r.parallel,
    };
    let (repaired, report, consistency) = match r.scalar {
        ScalarKind::Exact => repair_with::<Rational>(&preds, &opts)?,
        ScalarKind::F64 => repair_with::<f64>(&preds, &opts)?,
        ScalarKind::F32 => repair_with::<f32>(&preds, &opts)?,
    };
    repaired.write(&a.out).map_err(runtime)?;
    let report_path = a.report.clone().unwrap_or_else(|| {
        let mut p = a.out.as_os_str().to_owned();
        p.push(".report.json");
        PathBuf::from(p)
    });
    let json = serde_json::json!({
        "objective": report.objective,
        "components": report.components,
        "largest_component": report.largest_component,
        "fallback_count": report.fallback_count,
        "changed_pairs": report.changed_pairs,
        "nodes": report.nodes,
        "wall_time": report.wall_time,
        "consistency": consistency,
    });
    write_text(
        &report_path,
        &(serde_json::to_string_pretty(&json).expect("json") + "\n"),
    )?;
    m.input("predictions", &a.predictions)
        .output("predictions", &a.out)
        .output("report", &report_path);
    m.finish()?;
    println!(
        "repaired {} pairs ({} changed, {} components, {} fallbacks); objective {:.1}",
        repaired.len(),
        report.changed_pairs,
        report.components,
        report.fallback_count,
        report.objective
    );
    Ok(())
}

/// One predictions file with its metrics rows.
struct Evaluated {
    name: String,
    path: PathBuf,
    preds: PredictionSet,
    rows: Vec<MetricsRow>,
}

fn metrics_rows(
    docs: &[Document],
    args: &[String],
    scopes: &[EvalScope],
    combine: bool,
) -> Result<Vec<Evaluated>, CliError> {
    let mut out = Vec::new();
    for arg in args {
        let (name, path) = named(arg);
        let mut preds = load_predictions(&path)?;
        check_against(&preds, docs, &path)?;
        let method = if combine {
            preds = combine_with_worder(&preds, docs).map_err(eval_err)?;
            format!("{name}+w-order")
        } else {
            name.clone()
        };
        let rows = scopes
            .iter()
            .map(|&scope| {
                score(&preds, docs, scope)
                    .map(|metrics| MetricsRow {
                        method: method.clone(),
                        scope,
                        metrics,
                    })
                    .map_err(eval_err)
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(Evaluated {
            name,
            path,
            preds,
            rows,
        });
    }
    Ok(out)
}

pub fn evaluate(cfg: Config, a: EvaluateArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("evaluate", cfg.digest());
    let docs = corpus(&a.corpus)?;
    let scope = a.scope.unwrap_or(cfg.evaluation.scope);
    let combine = a.combine_worder || cfg.evaluation.combine_worder;
    let results = metrics_rows(&docs, &a.predictions, &[scope], combine)?;
    let rows: Vec<MetricsRow> = results.iter().flat_map(|r| r.rows.clone()).collect();
    print!("{}", render_metrics_table(&rows));
    if let Some(out) = &a.out {
        write_text(out, &metrics_to_csv(&rows))?;
        m.input("corpus", &a.corpus).output("metrics", out);
        for Evaluated { name, path, .. } in &results {
            m.input(name, path);
        }
        m.finish()?;
    }
    Ok(())
}

pub fn distance(cfg: Config, a: DistanceArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("distance", cfg.digest());
    let docs = corpus(&a.corpus)?;
    let preds = load_predictions(&a.predictions)?;
    check_against(&preds, &docs, &a.predictions)?;
    let bins =
        distance_bins(&preds, &docs, a.bins.unwrap_or(cfg.evaluation.bins)).map_err(eval_err)?;
    let csv = bins_to_csv(&bins);
    write_text(&a.out, &csv)?;
    print!("{csv}");
    m.input("corpus", &a.corpus)
        .input("predictions", &a.predictions)
        .output("bins", &a.out);
    m.finish()?;
    Ok(())
}

pub fn report(cfg: Config, a: ReportArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("report", cfg.digest());
    let docs = corpus(&a.corpus)?;
    let scopes = [EvalScope::Gold, EvalScope::CandidateIntersectGold];
    let results = metrics_rows(
        &docs,
        &a.predictions,
        &scopes,
        cfg.evaluation.combine_worder,
    )?;

    let mut doc = String::from("# Temporal relation extraction report\n\n");
    let gold: usize = docs.iter().map(|d| d.gold_links.len()).sum();
    let _ = writeln!(
        doc,
        "Corpus: `{}` ({} documents, {gold} gold links)\n",
        a.corpus.display(),
        docs.len()
    );

    doc.push_str("## Triple-match evaluation\n\n```\n");
    let rows: Vec<MetricsRow> = results.iter().flat_map(|r| r.rows.clone()).collect();
    doc.push_str(&render_metrics_table(&rows));
    doc.push_str("```\n\n## Temporal consistency\n\n```\n");
    let mut reports = Vec::new();
    for Evaluated {
        name, path, preds, ..
    } in &results
    {
        let triples = find_transitive_triples(preds.pairs(), cfg.consistency.mining);
        reports.push(
            ConsistencyReport::compute(name, preds, &triples, cfg.consistency.semantics)
                .map_err(|e| invalid(format!("{}: {e}", path.display())))?,
        );
        m.input(name, path);
    }
    doc.push_str(&render_table(&reports));
    doc.push_str("```\n\n## F1 by event distance\n");
    for Evaluated { name, preds, .. } in &results {
        let _ = write!(doc, "\n### {name}\n\n```\n");
        match distance_bins(preds, &docs, cfg.evaluation.bins) {
            Ok(bins) => doc.push_str(&bins_to_csv(&bins)),
            Err(e) => {
                let _ = writeln!(doc, "unavailable: {e}");
            }
        }
        doc.push_str("```\n");
    }
    write_text(&a.out, &doc)?;
    m.input("corpus", &a.corpus).output("report", &a.out);
    m.finish()?;
    println!("wrote {}", a.out.display());
    Ok(())
}

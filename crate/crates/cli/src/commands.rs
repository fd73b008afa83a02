use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use log::info;
use rtkg::eval::{build_queries, candidates_time, write_metrics, write_ranks, EvalContext, EvalOptions, QueryKind};
use rtkg::ingest::{entity_types_of, extract_all, open_events, parse_events, RuleTable};
use rtkg::kg::{split_random, split_temporal, stats, write_entity_types, write_tuples, SplitMode};
use rtkg::model::checkpoint::Checkpoint;
use rtkg::sampling::{snowball_sample, temporal_sample, SamplerConfig};
use rtkg::training::{train_loop, write_log, Selection, TrainOutcome};
use rtkg::Quadruple;

use crate::config::RunConfig;
use crate::data::{self, ensure_dir, provenance, SplitData, RESOLVED, TEST, TRAIN, TYPES, VALID};

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn epoch_of(day: i64) -> String {
    let unix = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date");
    (unix + chrono::Duration::days(day)).format("%Y-%m-%d").to_string()
}

fn parse_epoch(s: &str) -> Result<i64> {
    let date = NaiveDate::parse_from_str(s, "%Y-%m-%d").with_context(|| format!("bad epoch date `{s}`"))?;
    Ok((date - NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date")).num_days())
}

pub fn ingest(cfg: &RunConfig, events: &[PathBuf], out: &Path) -> Result<()> {
    let table = match &cfg.ingest.rules {
        Some(path) => RuleTable::load(Path::new(path))?,
        None => RuleTable::builtin(),
    };
    let rules = if cfg.ingest.all_relations { table } else { table.default_subset()? };

    let mut parsed = Vec::new();
    let mut skipped = 0;
    for path in events {
        let batch = parse_events(open_events(path)?).with_context(|| format!("reading {}", path.display()))?;
        skipped += batch.skipped;
        parsed.extend(batch.events);
    }
    let report = extract_all(&parsed, &rules);
    let types = entity_types_of(&report.tuples)?;
    let epoch = match &cfg.ingest.epoch {
        Some(s) => Some(parse_epoch(s)?),
        None => report.tuples.iter().map(|t| t.day).min(),
    };
    let quads: Vec<_> = report.tuples.iter().map(|t| t.to_quad(epoch.unwrap_or(0))).collect();

    ensure_dir(out)?;
    let inputs: Vec<&Path> = events.iter().map(PathBuf::as_path).collect();
    let mut header = provenance("ingest", None, &inputs);
    header.push_str(&format!(" epoch={}", epoch.map_or("none".into(), epoch_of)));
    write_tuples(&out.join(data::TUPLES), Some(&header), &quads)?;
    write_entity_types(&out.join(TYPES), Some(&header), types.iter().map(|(l, t)| (l.as_str(), *t)))?;

    let mut text = format!("# {header}\nkind\tname\tcount\n");
    writeln!(text, "events\tparsed\t{}", parsed.len())?;
    writeln!(text, "events\tskipped\t{skipped}")?;
    writeln!(text, "events\tunmatched\t{}", report.unmatched_events)?;
    writeln!(text, "tuples\ttotal\t{}", report.tuples.len())?;
    for (rel, n) in &report.per_relation {
        writeln!(text, "relation\t{rel}\t{n}")?;
    }
    write_text(&out.join("ingest_report.tsv"), &text)?;
    cfg.write_snapshot(&out.join(RESOLVED))?;
    info!(
        "{} events ({skipped} skipped, {} unmatched) -> {} tuples over {} entities",
        parsed.len(),
        report.unmatched_events,
        report.tuples.len(),
        types.len()
    );
    Ok(())
}

pub fn sample_snowball(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let kg = data::load_graph(input)?;
    let s = &cfg.snowball;
    let sample = snowball_sample(
        &kg,
        &SamplerConfig {
            sample_size: s.sample_size,
            growth_size: s.growth_size,
            initial_size: s.initial_size,
            seed: s.seed,
        },
    )?;
    let header = provenance("sample-snowball", Some(s.seed), &[input]);
    data::write_graph(out, &header, &kg, &sample.edges, &sample.nodes)?;
    cfg.write_snapshot(&out.join(RESOLVED))?;
    info!("sampled {} nodes, {} tuples", sample.nodes.len(), sample.edges.len());
    Ok(())
}

pub fn sample_temporal(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let kg = data::load_graph(input)?;
    let t = &cfg.temporal;
    let ts = temporal_sample(&kg, t.w_size, t.w_span, t.sample_size)?;
    let header = provenance("sample-temporal", None, &[input]);
    data::write_graph(out, &header, &kg, &ts.sample.edges, &ts.sample.nodes)?;

    let mut text = format!("# {header}\nrepository\ttuples\tspan\tpopularity\tnodes\tchosen\n");
    for r in &ts.scores {
        writeln!(
            text,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.label,
            r.size,
            r.span,
            r.popularity,
            r.nodes,
            if r.chosen { "yes" } else { "no" }
        )?;
    }
    write_text(&out.join("scores.tsv"), &text)?;
    cfg.write_snapshot(&out.join(RESOLVED))?;
    info!("sampled {} nodes, {} tuples", ts.sample.nodes.len(), ts.sample.edges.len());
    Ok(())
}

pub fn split(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let kg = data::load_graph(input)?;
    let [a, b, c] = cfg.split.ratios;
    let parts = match cfg.split.mode {
        SplitMode::Interpolated => split_random(&kg, (a, b, c), cfg.split.seed)?,
        SplitMode::Extrapolated => split_temporal(&kg, (a, b, c))?,
    };
    let seed = (cfg.split.mode == SplitMode::Interpolated).then_some(cfg.split.seed);
    let header = provenance(&format!("split mode={}", mode_name(cfg.split.mode)), seed, &[input]);
    ensure_dir(out)?;
    kg.write_tuples(&out.join(TRAIN), Some(&header), &parts.train)?;
    kg.write_tuples(&out.join(VALID), Some(&header), &parts.validation)?;
    kg.write_tuples(&out.join(TEST), Some(&header), &parts.test)?;
    kg.write_entity_types(&out.join(TYPES), Some(&header))?;
    cfg.write_snapshot(&out.join(RESOLVED))?;
    let (n1, n2, n3) = parts.sizes();
    info!("split {} tuples into {n1} / {n2} / {n3}", kg.num_edges());
    Ok(())
}

fn mode_name(m: SplitMode) -> &'static str {
    match m {
        SplitMode::Interpolated => "interpolated",
        SplitMode::Extrapolated => "extrapolated",
    }
}

pub fn stats_cmd(input: &Path, out: Option<&Path>) -> Result<()> {
    let kg = if input.join(data::TUPLES).is_file() {
        data::load_graph(input)?
    } else {
        data::load_split(input)?.kg
    };
    let s = stats(&kg)?;
    let text = format!(
        "# {}\nentities\ttuples\trelations\tdays\tmax_degree\tmedian_degree\n{}\t{}\t{}\t{}\t{}\t{}\n",
        provenance("stats", None, &[input]),
        s.num_entities,
        s.num_edges,
        s.num_relations,
        s.time_span,
        s.max_degree,
        s.median_degree
    );
    match out {
        Some(path) => write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn train_on(cfg: &RunConfig, data: &SplitData, train: &[Quadruple], select: bool) -> Result<TrainOutcome> {
    let selection = select.then(|| Selection {
        validation: &data.validation,
        options: cfg.eval,
    });
    Ok(train_loop(&data.kg, train, cfg.model.config_for(&data.kg), &cfg.train, selection)?)
}

pub fn train(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let data = data::load_split(input)?;
    let (train, select) = if cfg.selection.train_on_validation {
        (data.train_and_validation(), false)
    } else {
        (data.train.clone(), !cfg.selection.disabled)
    };
    info!(
        "training {} on {} tuples ({} entities, {} relations) for {} steps",
        cfg.model.kind,
        train.len(),
        data.kg.num_entities(),
        data.kg.num_relations(),
        cfg.train.total_steps
    );
    let outcome = train_on(cfg, &data, &train, select)?;

    ensure_dir(out)?;
    let header = provenance(&format!("train model={}", cfg.model.kind), Some(cfg.seed()), &[input]);
    let mut ck = Checkpoint::new(outcome.params, &data.kg)?;
    ck.header.train_config = Some(serde_json::to_value(cfg)?);
    ck.header.step = outcome.best_step;
    ck.header.rng = Some(outcome.rng);
    ck.save(&out.join("model.ckpt"))?;
    write_log(&out.join("train_log.tsv"), &header, &outcome.log)?;
    cfg.write_snapshot(&out.join(RESOLVED))?;
    match outcome.best_mrr {
        Some(m) => info!("best validation MRR {m:.4} at step {}", outcome.best_step),
        None => info!("kept parameters after step {}", outcome.best_step),
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalMode {
    /// Link prediction on a random split; context from train.
    Interpolated,
    /// Link prediction on a temporal split; context from train and validation.
    Extrapolated,
    /// Link prediction on a temporal split; context from train only.
    StandardExtrapolated,
    /// Time prediction on a temporal split; context from train and validation.
    TimePrediction,
}

impl EvalMode {
    fn name(self) -> &'static str {
        match self {
            EvalMode::Interpolated => "interpolated",
            EvalMode::Extrapolated => "extrapolated",
            EvalMode::StandardExtrapolated => "standard-extrapolated",
            EvalMode::TimePrediction => "time-prediction",
        }
    }
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, input: &Path, mode: EvalMode, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let data = data::load_split_for(input, &ck)?;
    if data.test.is_empty() {
        bail!("test split in {} is empty", input.display());
    }
    let context = match mode {
        EvalMode::Interpolated | EvalMode::StandardExtrapolated => data.train.clone(),
        EvalMode::Extrapolated | EvalMode::TimePrediction => data.train_and_validation(),
    };
    let kind = if mode == EvalMode::TimePrediction { QueryKind::Time } else { QueryKind::Link };
    let options = EvalOptions { kind, ..cfg.eval };
    let ctx = EvalContext::new(&data.kg, &context, data.kg.quads())?;
    let queries = build_queries(&data.test, &options);
    let dates = match kind {
        QueryKind::Time => candidates_time(&data.test)?,
        QueryKind::Link => Vec::new(),
    };
    let result = ctx.evaluate(&ck.params, &queries, &dates, options.rerank)?;

    ensure_dir(out)?;
    let mut header = provenance(&format!("eval mode={}", mode.name()), None, &[checkpoint, input]);
    header.push_str(&format!(" rerank={}", options.rerank));
    if kind == QueryKind::Link {
        header.push_str(&format!(" slot={}", options.slot));
    }
    let name = format!("{} {}", ck.header.model.kind, mode.name());
    write_metrics(&out.join(format!("metrics-{}.tsv", mode.name())), &header, &[(name, result.metrics)])?;
    write_ranks(&out.join(format!("ranks-{}.tsv", mode.name())), &header, &data.kg, &queries, &result.ranks)?;
    let m = result.metrics;
    info!(
        "{} queries: HITS@1 {:.4} HITS@3 {:.4} HITS@10 {:.4} MR {:.2} MRR {:.4}",
        m.n, m.hits1, m.hits3, m.hits10, m.mr, m.mrr
    );
    Ok(())
}

pub fn export_importance(checkpoint: &Path, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let kind = ck.header.model.kind;
    if !kind.is_relative() {
        bail!("{kind} checkpoints have no relation-importance matrix; train rt-de-rotate or rt-bilinear");
    }
    let labels = &ck.header.relations;
    let w = &ck.params.w_p;
    let mut text = format!("# {}\nrelation", provenance("export-importance", None, &[checkpoint]));
    for l in labels {
        text.push('\t');
        text.push_str(l);
    }
    text.push('\n');
    for (r, label) in labels.iter().enumerate() {
        text.push_str(label);
        for v in w.row(r) {
            write!(text, "\t{}", v.abs())?;
        }
        text.push('\n');
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_text(out, &text)
}

pub fn grid(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let data = data::load_split(input)?;
    if data.validation.is_empty() {
        bail!("grid search needs a validation split");
    }
    let g = &cfg.grid;
    if g.len() == 0 {
        bail!("grid is empty; every list in [grid] needs at least one value");
    }
    info!("grid of {} runs, {} steps each", g.len(), cfg.train.total_steps);

    let mut rows = Vec::new();
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    for &dims in &g.dims {
        for &dropout in &g.dropout {
            for &eta in &g.adversarial_temperature {
                for &margin in &g.margin {
                    for &lr in &g.learning_rate {
                        for &l3 in &g.l3 {
                            let mut run = cfg.clone();
                            run.model.static_dim = dims[0];
                            run.model.temporal_dim = dims[1];
                            run.model.relative_dim = dims[2];
                            run.train.dropout = dropout;
                            run.train.adversarial_temperature = eta;
                            run.train.margin = margin;
                            run.train.learning_rate = lr;
                            run.train.l3 = l3;
                            run.train.validate()?;
                            let id = rows.len();
                            let outcome = train_on(&run, &data, &data.train, true)?;
                            let mrr = outcome.best_mrr.unwrap_or(0.0);
                            info!("run {id}: validation MRR {mrr:.4} at step {}", outcome.best_step);
                            rows.push(format!(
                                "{id}\t{}\t{}\t{}\t{dropout}\t{eta}\t{margin}\t{lr}\t{l3}\t{}\t{mrr:.6}",
                                dims[0], dims[1], dims[2], outcome.best_step
                            ));
                            if best.as_ref().is_none_or(|(b, _, _)| mrr > *b) {
                                let mut ck = Checkpoint::new(outcome.params, &data.kg)?;
                                ck.header.train_config = Some(serde_json::to_value(&run)?);
                                ck.header.step = outcome.best_step;
                                ck.header.rng = Some(outcome.rng);
                                best = Some((mrr, id, ck));
                            }
                        }
                    }
                }
            }
        }
    }

    ensure_dir(out)?;
    let (_, best_id, ck) = best.expect("grid is non-empty");
    let header = provenance(&format!("grid model={}", cfg.model.kind), Some(cfg.seed()), &[input]);
    let mut text = format!(
        "# {header}\nrun\tstatic_dim\ttemporal_dim\trelative_dim\tdropout\tadversarial_temperature\tmargin\tlearning_rate\tl3\tbest_step\tvalidation_mrr\tbest\n"
    );
    for (i, row) in rows.iter().enumerate() {
        writeln!(text, "{row}\t{}", if i == best_id { "*" } else { "" })?;
    }
    write_text(&out.join("grid.tsv"), &text)?;
    ck.save(&out.join("best.ckpt"))?;
    cfg.write_snapshot(&out.join(RESOLVED))?;
    info!("grid finished: {} runs, best run {best_id}", rows.len());
    Ok(())
}

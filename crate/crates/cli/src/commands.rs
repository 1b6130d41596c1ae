use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{DateTime, FixedOffset, Utc};
use clap::{Args, ValueEnum};
use geosent::classifier::{self, distant_label, evaluate, parse_labeled_corpus, EmoticonTable, LabeledTweet};
use geosent::estimator::{aggregate_all, correlate, read_cells, score_cells, AggregationSpec, Analyser, BucketGrid};
use geosent::ingest::{collect, parse_corpus};
use geosent::store::{read_scores, write_scores, SCORE_HEADER};
use geosent::synth::{gen_corpus, grid_regions_geojson, uniform_quotas, CorpusSpec, Quota};
use geosent::visualize::{emit_kml, emit_linegraph, emit_tilemap, select_rows};
use geosent::{Approach, DictionaryAnalyser, Level, Lexicon, RegionIndex, ScoreRow, ScoreSeries, UnigramModel};
use log::{info, warn};

use crate::config::{default_generator_window, usage, Settings};

pub const DEFAULT_LINE_BUCKET: i64 = 3600;

/// Creates the parent directory of an output file.
fn output(path: &Path) -> Result<&Path> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    Ok(path)
}

pub fn run_collect(s: &Settings) -> Result<()> {
    let input = s.require_existing(&s.input, "input")?;
    let raw = output(s.require(&s.raw, "raw")?)?;
    let report = if input.as_os_str() == "-" {
        collect(io::stdin().lock(), raw)?
    } else {
        let file = fs::File::open(input).with_context(|| format!("cannot open {}", input.display()))?;
        collect(file, raw)?
    };
    info!(
        "collect: {} lines read, {} written, {} blank",
        report.lines_read, report.lines_written, report.blank_lines
    );
    Ok(())
}

pub fn run_parse(s: &Settings) -> Result<()> {
    let raw = s.require_existing(&s.raw, "raw")?;
    let regions = s.require_existing(&s.regions, "regions")?;
    let parsed = output(s.require(&s.parsed, "parsed")?)?;
    let index = RegionIndex::load(regions)?;
    let stats = parse_corpus(raw, &index, parsed)?;
    info!(
        "parse: {} lines, {} accepted, {} without coordinates, {} malformed, {} outside all regions",
        stats.lines_read, stats.accepted, stats.rejected_no_geo, stats.rejected_malformed, stats.rejected_unresolved
    );
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Labelled corpus, one `label<TAB>text` per line
    #[arg(long, conflicts_with = "distant")]
    pub corpus: Option<PathBuf>,
    /// Unlabelled tweets (raw table lines or plain text) labelled by emoticons
    #[arg(long)]
    pub distant: Option<PathBuf>,
}

fn read_labeled(path: &Path) -> Result<Vec<LabeledTweet>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(parse_labeled_corpus(&text)?)
}

/// Tweet texts of a file holding either JSON objects with a `text` field or
/// plain lines.
fn read_texts(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut texts = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.with_context(|| format!("cannot read {}", path.display()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('{') {
            if let Ok(candidate) = geosent::ingest::parse_record(trimmed.as_bytes()) {
                texts.push(candidate.text);
                continue;
            }
            if let Some(text) = json_text(trimmed) {
                texts.push(text);
                continue;
            }
        }
        texts.push(line);
    }
    Ok(texts)
}

fn json_text(line: &str) -> Option<String> {
    #[derive(serde::Deserialize)]
    struct WithText {
        text: String,
    }
    serde_json::from_str::<WithText>(line).ok().map(|w| w.text)
}

pub fn run_train(s: &Settings, args: &TrainArgs) -> Result<()> {
    let model_path = output(s.require(&s.model, "model")?)?;
    let docs = match (&args.corpus, &args.distant) {
        (Some(corpus), None) => {
            let corpus = s.require_existing(&Some(corpus.clone()), "corpus")?.to_path_buf();
            read_labeled(&corpus)?
        }
        (None, Some(distant)) => {
            let distant = s.require_existing(&Some(distant.clone()), "distant")?.to_path_buf();
            let texts = read_texts(&distant)?;
            let table = EmoticonTable::default();
            let docs: Vec<LabeledTweet> = distant_label(&table, &texts).collect();
            info!("train: {} of {} tweets kept by emoticon labelling", docs.len(), texts.len());
            docs
        }
        _ => return Err(usage("train needs exactly one of --corpus or --distant")),
    };
    let model = classifier::train(docs)?;
    model.save(model_path)?;
    info!("train: model written to {}", model_path.display());
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Labelled test set, one `label<TAB>text` per line
    #[arg(long)]
    pub test: PathBuf,
}

pub fn run_evaluate(s: &Settings, args: &EvaluateArgs) -> Result<()> {
    let model_path = s.require_existing(&s.model, "model")?;
    let test = s.require_existing(&Some(args.test.clone()), "test")?.to_path_buf();
    let model = UnigramModel::load(model_path)?;
    let report = evaluate(&model, read_labeled(&test)?)?;
    let c = report.confusion;
    let mut out = io::stdout().lock();
    writeln!(out, "accuracy,{:.4}", report.accuracy)?;
    writeln!(out, "correct,{}", report.correct)?;
    writeln!(out, "total,{}", report.total)?;
    writeln!(out, "actual,predicted_positive,predicted_negative")?;
    writeln!(out, "positive,{},{}", c[0][0], c[0][1])?;
    writeln!(out, "negative,{},{}", c[1][0], c[1][1])?;
    Ok(())
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScoreArgs {
    /// Score pre-computed counts (score-table layout without pss/npss) instead of the parsed table
    #[arg(long)]
    pub counts: Option<PathBuf>,
}

fn load_analyser(s: &Settings, approach: Approach) -> Result<Box<dyn Analyser>> {
    Ok(match approach {
        Approach::Dictionary => {
            let path = s.require_existing(&s.lexicon, "lexicon")?;
            let mut analyser = DictionaryAnalyser::new(Lexicon::load(path)?);
            analyser.match_hashtags = s.hashtag_match;
            Box::new(analyser)
        }
        Approach::MachineLearning => {
            let path = s.require_existing(&s.model, "model")?;
            Box::new(UnigramModel::load(path)?.classifier())
        }
    })
}

fn line_bucket(s: &Settings) -> i64 {
    s.line_bucket.unwrap_or(DEFAULT_LINE_BUCKET)
}

/// Bucket lengths to score: the map bucket and the line-graph bucket.
fn durations(s: &Settings) -> Vec<i64> {
    let mut d = vec![s.bucket];
    if line_bucket(s) != s.bucket {
        d.push(line_bucket(s));
    }
    d
}

pub fn compute_scores(s: &Settings, args: &ScoreArgs) -> Result<Vec<ScoreRow>> {
    let approaches = s.approach.list();
    let levels = s.level.list();
    if let Some(counts) = &args.counts {
        let counts = s.require_existing(&Some(counts.clone()), "counts")?.to_path_buf();
        let cells: Vec<_> = read_cells(&counts)?
            .into_iter()
            .filter(|c| approaches.contains(&c.approach) && levels.contains(&c.level))
            .collect();
        return Ok(score_cells(&cells, s.norm_scope));
    }
    let parsed = s.require_existing(&s.parsed, "parsed")?;
    let mut rows = Vec::new();
    for approach in approaches {
        let analyser = load_analyser(s, approach)?;
        let specs: Vec<AggregationSpec> = durations(s)
            .into_iter()
            .flat_map(|bucket_seconds| {
                levels.iter().map(move |&level| AggregationSpec {
                    level,
                    bucket_seconds,
                    window: s.window,
                    approach,
                    display_tz_offset_minutes: s.tz_offset,
                    norm_scope: s.norm_scope,
                })
            })
            .collect();
        let scored = aggregate_all(&specs, parsed, analyser.as_ref())?;
        info!("score: {} rows for {}", scored.len(), approach);
        rows.extend(scored);
    }
    Ok(rows)
}

pub fn run_score(s: &Settings, args: &ScoreArgs) -> Result<()> {
    let rows = compute_scores(s, args)?;
    match &s.scores {
        Some(path) => {
            write_scores(output(path)?, &rows)?;
            info!("score: {} rows appended to {}", rows.len(), path.display());
        }
        None => {
            let mut w = csv::Writer::from_writer(io::stdout().lock());
            w.write_record(SCORE_HEADER)?;
            for r in &rows {
                w.write_record(r.to_record())?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Score-table rows with later duplicates of a cell replacing earlier ones,
/// since the table is append-only.
fn latest_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    type Key = (Approach, Level, String, String, DateTime<Utc>, DateTime<Utc>);
    let mut by_key: BTreeMap<Key, ScoreRow> = BTreeMap::new();
    for row in read_scores(path)? {
        let key = (
            row.approach,
            row.level,
            row.region.clone(),
            row.parent.clone(),
            row.bucket_start,
            row.bucket_end,
        );
        by_key.insert(key, row);
    }
    let mut rows: Vec<ScoreRow> = by_key.into_values().collect();
    rows.sort_by(|a, b| {
        (a.bucket_start, a.level, &a.region, &a.parent, a.approach).cmp(&(
            b.bucket_start,
            b.level,
            &b.region,
            &b.parent,
            b.approach,
        ))
    });
    Ok(rows)
}

fn line_grid(s: &Settings) -> Result<BucketGrid> {
    Ok(BucketGrid::new(s.window, line_bucket(s), s.tz_offset)?)
}

/// Country series pairs (dictionary, machine learning) at the line-graph bucket.
fn country_series(s: &Settings, rows: &[ScoreRow]) -> Result<Vec<(String, ScoreSeries, ScoreSeries)>> {
    let grid = line_grid(s)?;
    let regions: BTreeSet<&str> = rows
        .iter()
        .filter(|r| r.level == Level::Country)
        .map(|r| r.region.as_str())
        .collect();
    let mut out = Vec::new();
    for region in regions {
        let dict = ScoreSeries::from_rows(rows, Level::Country, region, Approach::Dictionary, Some(&grid))?;
        let ml = ScoreSeries::from_rows(rows, Level::Country, region, Approach::MachineLearning, Some(&grid))?;
        out.push((region.to_string(), dict, ml));
    }
    Ok(out)
}

pub fn run_correlate(s: &Settings) -> Result<()> {
    let scores = s.require_existing(&s.scores, "scores")?;
    let rows = latest_scores(scores)?;
    let mut out = io::stdout().lock();
    writeln!(out, "region,points,correlation")?;
    for (region, dict, ml) in country_series(s, &rows)? {
        let points = geosent::estimator::join(&dict, &ml).len();
        match correlate(&dict, &ml) {
            Ok(r) => writeln!(out, "{region},{points},{r:.4}")?,
            Err(e) => {
                warn!("correlate: {region}: {e}");
                writeln!(out, "{region},{points},NA")?
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RenderKind {
    Kml,
    Tilemap,
    Linegraph,
    All,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    /// Which figures to render
    #[arg(long, value_enum, default_value = "all")]
    pub kind: RenderKind,
}

fn stamp(t: DateTime<Utc>) -> String {
    t.format("%Y%m%dT%H%MZ").to_string()
}

fn approach_tag(a: Approach) -> &'static str {
    match a {
        Approach::Dictionary => "dict",
        Approach::MachineLearning => "ml",
    }
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Distinct map buckets present at `level`, per approach.
fn map_buckets(s: &Settings, rows: &[ScoreRow], level: Level) -> Result<Vec<(Approach, DateTime<Utc>)>> {
    let grid = BucketGrid::new(s.window, s.bucket, s.tz_offset)?;
    let approaches = s.approach.list();
    let set: BTreeSet<(Approach, DateTime<Utc>)> = rows
        .iter()
        .filter(|r| r.level == level && approaches.contains(&r.approach) && grid.is_bucket(r.bucket_start, r.bucket_end))
        .map(|r| (r.approach, r.bucket_start))
        .collect();
    Ok(set.into_iter().collect())
}

pub fn run_render(s: &Settings, args: &RenderArgs) -> Result<Vec<PathBuf>> {
    let kinds = match args.kind {
        RenderKind::All => vec![RenderKind::Kml, RenderKind::Tilemap, RenderKind::Linegraph],
        k => vec![k],
    };
    // check every input before writing anything
    let scores = s.require_existing(&s.scores, "scores")?;
    let regions = if kinds.contains(&RenderKind::Kml) {
        Some(s.require_existing(&s.regions, "regions")?)
    } else {
        None
    };
    let out_dir = s.require(&s.out_dir, "out-dir")?;
    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let rows = latest_scores(scores)?;
    let mut written = Vec::new();

    if let Some(regions) = regions {
        let index = RegionIndex::load(regions)?;
        for (approach, start) in map_buckets(s, &rows, Level::Country)? {
            let selected = select_rows(&rows, Level::Country, approach, start);
            let path = out_dir.join(format!("choropleth_{}_{}.kml", approach_tag(approach), stamp(start)));
            emit_kml(&selected, &index, &path)?;
            written.push(path);
        }
    }
    if kinds.contains(&RenderKind::Tilemap) {
        for (approach, start) in map_buckets(s, &rows, Level::County)? {
            let selected = select_rows(&rows, Level::County, approach, start);
            let path = out_dir.join(format!("tilemap_{}_{}.svg", approach_tag(approach), stamp(start)));
            emit_tilemap(&selected, &path)?;
            written.push(path);
        }
    }
    if kinds.contains(&RenderKind::Linegraph) {
        let tz = FixedOffset::east_opt(s.tz_offset * 60).ok_or_else(|| usage("--tz-offset out of range"))?;
        let mut rendered = 0;
        for (region, dict, ml) in country_series(s, &rows)? {
            let prefix = out_dir.join(format!("linegraph_{}", file_safe(&region)));
            match emit_linegraph(&region, &dict, &ml, tz, &prefix) {
                Ok(files) => {
                    written.push(files.svg);
                    written.push(files.csv);
                    rendered += 1;
                }
                Err(geosent::visualize::VisError::TooFewPoints { region, points }) => {
                    warn!("render: no line graph for {region} ({points} joined buckets)");
                }
                Err(e) => return Err(e.into()),
            }
        }
        if rendered == 0 && args.kind == RenderKind::Linegraph {
            bail!("no region has two or more buckets scored by both approaches");
        }
    }
    for p in &written {
        info!("render: wrote {}", p.display());
    }
    Ok(written)
}

pub fn run_pipeline(s: &Settings) -> Result<()> {
    // every input must exist before any stage runs
    if s.input.is_some() {
        s.require_existing(&s.input, "input")?;
    } else {
        s.require_existing(&s.raw, "raw")?;
    }
    s.require_existing(&s.regions, "regions")?;
    for approach in s.approach.list() {
        match approach {
            Approach::Dictionary => s.require_existing(&s.lexicon, "lexicon")?,
            Approach::MachineLearning => s.require_existing(&s.model, "model")?,
        };
    }
    s.require(&s.raw, "raw")?;
    s.require(&s.parsed, "parsed")?;
    s.require(&s.scores, "scores")?;
    s.require(&s.out_dir, "out-dir")?;

    if s.input.is_some() {
        run_collect(s)?;
    }
    run_parse(s)?;
    run_score(s, &ScoreArgs::default())?;
    let kind = if s.approach == crate::config::Approaches::Both {
        RenderKind::All
    } else {
        // line graphs compare the two approaches
        for k in [RenderKind::Kml, RenderKind::Tilemap] {
            run_render(s, &RenderArgs { kind: k })?;
        }
        return Ok(());
    };
    run_render(s, &RenderArgs { kind })?;
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct GenCorpusArgs {
    /// Output raw table (JSON lines)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-county quota `county:positive:negative`; repeatable
    #[arg(long = "quota")]
    pub quotas: Vec<Quota>,
    /// Total records spread evenly over every county instead of explicit quotas
    #[arg(long, conflicts_with = "quotas")]
    pub total: Option<u64>,
    /// Write a grid regions file with this many counties to --regions first
    #[arg(long, requires = "grid_countries")]
    pub grid_counties: Option<usize>,
    /// Number of countries in the generated grid
    #[arg(long, requires = "grid_counties")]
    pub grid_countries: Option<usize>,
}

pub fn run_gen_corpus(s: &Settings, args: &GenCorpusArgs) -> Result<()> {
    let out = args
        .out
        .as_deref()
        .or(s.raw.as_deref())
        .ok_or_else(|| usage("gen-corpus needs --out (or --raw)"))?;
    let out = output(out)?;
    let regions = s.require(&s.regions, "regions")?;
    if let (Some(counties), Some(countries)) = (args.grid_counties, args.grid_countries) {
        if counties == 0 || countries == 0 || countries > counties {
            return Err(usage("grid needs 1 <= countries <= counties"));
        }
        fs::write(output(regions)?, grid_regions_geojson(counties, countries))
            .with_context(|| format!("cannot write {}", regions.display()))?;
        info!("gen-corpus: wrote {counties}-county grid to {}", regions.display());
    } else {
        s.require_existing(&s.regions, "regions")?;
    }
    let index = RegionIndex::load(regions)?;
    let seed = s.seed.unwrap_or(0);
    let quotas = match (args.total, args.quotas.is_empty()) {
        (Some(total), true) => uniform_quotas(&index, total, seed),
        (None, false) => args.quotas.clone(),
        _ => return Err(usage("gen-corpus needs --quota or --total")),
    };
    let spec = CorpusSpec {
        quotas,
        window: s.window_or(default_generator_window()),
        seed,
    };
    let n = gen_corpus(&spec, &index, out)?;
    info!("gen-corpus: {n} records written to {}", out.display());
    Ok(())
}

mod common;

use std::fs;
use std::path::Path;

use chrono::{TimeZone, Utc};
use geosent::classifier::Classifier;
use geosent::dictionary::{DictionaryAnalyser, Lexicon};
use geosent::estimator::{aggregate, aggregate_levels, AggregationSpec, Analyser, NormScope};
use geosent::ingest::{collect, parse_corpus};
use geosent::synth::{gen_corpus, CorpusSpec, Quota};
use geosent::{Approach, Level, RegionIndex, ScoreRow, UnigramModel, Window};
use tempfile::TempDir;

fn day() -> Window {
    Window::new(
        Utc.with_ymd_and_hms(2013, 7, 22, 0, 0, 0).unwrap(),
        Utc.with_ymd_and_hms(2013, 7, 23, 0, 0, 0).unwrap(),
    )
    .unwrap()
}

fn spec(level: Level, approach: Approach) -> AggregationSpec {
    AggregationSpec {
        level,
        bucket_seconds: 86_400,
        window: day(),
        approach,
        display_tz_offset_minutes: 0,
        norm_scope: NormScope::Level,
    }
}

fn parsed_fixture(dir: &TempDir, raw_source: &Path) -> std::path::PathBuf {
    let t1 = dir.path().join("t1.jsonl");
    let t2 = dir.path().join("t2.tsv");
    collect(fs::File::open(raw_source).unwrap(), &t1).unwrap();
    let index = RegionIndex::load(common::fixture("regions.geojson")).unwrap();
    let stats = parse_corpus(&t1, &index, &t2).unwrap();
    assert_eq!(stats.accepted, 9);
    assert_eq!(stats.lines_read, 9);
    t2
}

fn lexicon_analyser() -> DictionaryAnalyser {
    DictionaryAnalyser::new(Lexicon::load(common::fixture("lexicon.tsv")).unwrap())
}

fn fixture_classifier() -> Classifier {
    UnigramModel::load(common::fixture("model.nb")).unwrap().classifier()
}

fn row<'a>(rows: &'a [ScoreRow], region: &str) -> &'a ScoreRow {
    rows.iter().find(|r| r.region == region).unwrap()
}

#[test]
fn dictionary_counts_and_scores() {
    let dir = TempDir::new().unwrap();
    let t2 = parsed_fixture(&dir, &common::fixture("corpus.jsonl"));
    let analyser = lexicon_analyser();

    let country = aggregate(&spec(Level::Country, Approach::Dictionary), &t2, &analyser).unwrap();
    assert_eq!(country.len(), 1);
    let c = &country[0];
    assert_eq!((c.pos_count, c.neg_count, c.tweet_count), (12, 5, 9));
    assert_eq!(c.pss, Some(2.4));
    assert_eq!(c.npss, Some(1.0));

    let county = aggregate(&spec(Level::County, Approach::Dictionary), &t2, &analyser).unwrap();
    let happy = row(&county, "happycounty");
    let sad = row(&county, "sadcounty");
    assert_eq!((happy.pos_count, happy.neg_count, happy.tweet_count), (10, 2, 5));
    assert_eq!((sad.pos_count, sad.neg_count, sad.tweet_count), (2, 3, 4));
    assert_eq!(happy.pss, Some(5.0));
    assert_eq!(format!("{:.4}", sad.pss.unwrap()), "0.6667");
    assert_eq!(happy.npss, Some(1.0));
    assert!((sad.npss.unwrap() - 2.0 / 15.0).abs() < 1e-12);
}

#[test]
fn classifier_counts_and_scores() {
    let dir = TempDir::new().unwrap();
    let t2 = parsed_fixture(&dir, &common::fixture("corpus.jsonl"));
    let clf = fixture_classifier();

    let country = aggregate(&spec(Level::Country, Approach::MachineLearning), &t2, &clf).unwrap();
    assert_eq!((country[0].pos_count, country[0].neg_count), (5, 4));
    assert_eq!(country[0].pss, Some(1.25));

    let county = aggregate(&spec(Level::County, Approach::MachineLearning), &t2, &clf).unwrap();
    let happy = row(&county, "happycounty");
    let sad = row(&county, "sadcounty");
    assert_eq!((happy.pos_count, happy.neg_count), (4, 1));
    assert_eq!((sad.pos_count, sad.neg_count), (1, 3));
    assert_eq!(happy.npss, Some(1.0));
    assert!((sad.npss.unwrap() - 1.0 / 12.0).abs() < 1e-12);
}

#[test]
fn country_counts_are_sums_of_counties() {
    let dir = TempDir::new().unwrap();
    let t2 = parsed_fixture(&dir, &common::fixture("corpus.jsonl"));
    let mut s = spec(Level::County, Approach::Dictionary);
    s.bucket_seconds = 3600;
    let analysers: [&dyn Analyser; 2] = [&lexicon_analyser(), &fixture_classifier()];
    for analyser in analysers {
        let rows = aggregate_levels(&s, &[Level::Country, Level::County], &t2, analyser).unwrap();
        for country in rows.iter().filter(|r| r.level == Level::Country) {
            let (pos, neg, n) = rows
                .iter()
                .filter(|r| r.level == Level::County && r.parent == country.region && r.bucket_start == country.bucket_start)
                .fold((0, 0, 0), |acc, r| (acc.0 + r.pos_count, acc.1 + r.neg_count, acc.2 + r.tweet_count));
            assert_eq!((pos, neg, n), (country.pos_count, country.neg_count, country.tweet_count));
        }
        assert_eq!(rows.iter().filter(|r| r.level == Level::Country).count(), 3);
        for r in &rows {
            r.validate().unwrap();
        }
    }
}

#[test]
fn window_without_tweets_gives_no_rows() {
    let dir = TempDir::new().unwrap();
    let t2 = parsed_fixture(&dir, &common::fixture("corpus.jsonl"));
    let mut s = spec(Level::County, Approach::Dictionary);
    s.window = Window::new(
        Utc.with_ymd_and_hms(2013, 7, 23, 0, 0, 0).unwrap(),
        Utc.with_ymd_and_hms(2013, 7, 24, 0, 0, 0).unwrap(),
    )
    .unwrap();
    assert!(aggregate(&s, &t2, &lexicon_analyser()).unwrap().is_empty());
}

#[test]
fn generated_corpus_reproduces_tweet_counts() {
    let dir = TempDir::new().unwrap();
    let index = RegionIndex::load(common::fixture("regions.geojson")).unwrap();
    let raw = dir.path().join("generated.jsonl");
    let spec_ = CorpusSpec {
        quotas: vec!["happycounty:4:1".parse::<Quota>().unwrap(), "sadcounty:1:3".parse().unwrap()],
        window: day(),
        seed: 42,
    };
    assert_eq!(gen_corpus(&spec_, &index, &raw).unwrap(), 9);
    let t2 = parsed_fixture(&dir, &raw);
    let county = aggregate(&spec(Level::County, Approach::MachineLearning), &t2, &fixture_classifier()).unwrap();
    assert_eq!((row(&county, "happycounty").pos_count, row(&county, "happycounty").neg_count), (4, 1));
    assert_eq!((row(&county, "sadcounty").pos_count, row(&county, "sadcounty").neg_count), (1, 3));
    let country = aggregate(&spec(Level::Country, Approach::MachineLearning), &t2, &fixture_classifier()).unwrap();
    assert_eq!(country[0].pss, Some(1.25));
}

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use geosent::estimator::{read_cells, score_cells, NormScope};
use tempfile::TempDir;

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
        .to_str()
        .unwrap()
        .to_string()
}

fn geosent(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geosent"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = geosent(dir, args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn fixture_config(dir: &Path) -> PathBuf {
    let path = dir.join("c.toml");
    fs::write(
        &path,
        format!(
            "input = \"{}\"\nraw = \"t1.jsonl\"\nparsed = \"t2.tsv\"\nscores = \"t3.csv\"\nregions = \"{}\"\n\
             lexicon = \"{}\"\nmodel = \"{}\"\nout_dir = \"out\"\n",
            fixture("corpus.jsonl"),
            fixture("regions.geojson"),
            fixture("lexicon.tsv"),
            fixture("model.nb"),
        ),
    )
    .unwrap();
    path
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn usage_errors_exit_1() {
    let dir = TempDir::new().unwrap();
    let out = geosent(dir.path(), &["score", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage"));
    assert_eq!(geosent(dir.path(), &[]).status.code(), Some(1));
    assert_eq!(geosent(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(geosent(dir.path(), &["score", "--bucket", "0"]).status.code(), Some(1));
    assert_eq!(geosent(dir.path(), &["score", "--level", "planet"]).status.code(), Some(1));
    // a required path that was never given
    let out = geosent(dir.path(), &["parse"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--raw"));
}

#[test]
fn help_and_version_exit_0() {
    let dir = TempDir::new().unwrap();
    let out = geosent(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gen-corpus"));
    assert_eq!(geosent(dir.path(), &["--version"]).status.code(), Some(0));
}

#[test]
fn render_with_missing_regions_exits_2_naming_path() {
    let dir = TempDir::new().unwrap();
    let config = fixture_config(dir.path());
    ok(dir.path(), &["pipeline", "--config", config.to_str().unwrap()]);
    let out = geosent(
        dir.path(),
        &["render", "--kind", "kml", "--scores", "t3.csv", "--regions", "absent/regions.geojson", "--out-dir", "o"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("absent/regions.geojson"));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn malformed_data_exits_2() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("bad.csv"), "not,a,score,table\n").unwrap();
    let out = geosent(dir.path(), &["correlate", "--scores", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let out = geosent(dir.path(), &["collect", "--input", "missing.jsonl", "--raw", "t1.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing.jsonl"));
}

#[test]
fn config_errors_and_overrides() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("bad.toml"), "colour = \"red\"\n").unwrap();
    let out = geosent(dir.path(), &["parse", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("colour"));

    // paths in a config file are relative to the file, flags override it
    let sub = dir.path().join("conf");
    fs::create_dir(&sub).unwrap();
    fs::copy(fixture("uk_daily_counts.csv"), sub.join("counts.csv")).unwrap();
    fs::write(sub.join("c.toml"), "scores = \"from_config.csv\"\napproach = \"ml\"\n").unwrap();
    ok(dir.path(), &["score", "--config", "conf/c.toml", "--counts", "conf/counts.csv"]);
    let t3 = String::from_utf8(read(sub.join("from_config.csv"))).unwrap();
    assert_eq!(t3.lines().count(), 1 + 12);
    assert!(t3.lines().skip(1).all(|l| l.starts_with("ml,")));
    ok(
        dir.path(),
        &["score", "--config", "conf/c.toml", "--approach", "dict", "--scores", "flag.csv", "--counts", "conf/counts.csv"],
    );
    let t3 = String::from_utf8(read(dir.path().join("flag.csv"))).unwrap();
    assert!(t3.lines().skip(1).all(|l| l.starts_with("dictionary,")));
}

#[test]
fn score_counts_reproduces_library_rows() {
    let dir = TempDir::new().unwrap();
    let counts = fixture("uk_daily_counts.csv");
    let out = ok(
        dir.path(),
        &["score", "--approach", "dict", "--level", "country", "--bucket", "86400", "--counts", &counts],
    );
    let cells: Vec<_> = read_cells(Path::new(&counts))
        .unwrap()
        .into_iter()
        .filter(|c| c.approach == geosent::Approach::Dictionary)
        .collect();
    let mut want = csv::Writer::from_writer(Vec::new());
    want.write_record(geosent::store::SCORE_HEADER).unwrap();
    for row in score_cells(&cells, NormScope::Level) {
        want.write_record(row.to_record()).unwrap();
    }
    assert_eq!(String::from_utf8(out.stdout).unwrap(), String::from_utf8(want.into_inner().unwrap()).unwrap());
}

#[test]
fn pipeline_renders_fixture_and_equals_composition() {
    let piped = TempDir::new().unwrap();
    let config = fixture_config(piped.path());
    ok(piped.path(), &["pipeline", "--config", config.to_str().unwrap()]);
    let rendered = listing(&piped.path().join("out"));
    assert!(rendered.iter().any(|f| f.starts_with("choropleth_") && f.ends_with(".kml")));
    assert!(rendered.iter().any(|f| f.starts_with("tilemap_") && f.ends_with(".svg")));
    assert!(rendered.contains(&"linegraph_mycountry.svg".to_string()));
    for f in &rendered {
        let text = String::from_utf8(read(piped.path().join("out").join(f))).unwrap();
        if !f.ends_with(".csv") {
            roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{f}: {e}"));
        }
    }

    let stepped = TempDir::new().unwrap();
    let config = fixture_config(stepped.path());
    let c = config.to_str().unwrap();
    for sub in ["collect", "parse", "score", "render"] {
        ok(stepped.path(), &[sub, "--config", c]);
    }
    for f in ["t1.jsonl", "t2.tsv", "t3.csv"] {
        assert_eq!(read(piped.path().join(f)), read(stepped.path().join(f)), "{f}");
    }
    assert_eq!(rendered, listing(&stepped.path().join("out")));
    for f in &rendered {
        assert_eq!(read(piped.path().join("out").join(f)), read(stepped.path().join("out").join(f)), "{f}");
    }
}

#[test]
fn generated_fixture_corpus_reproduces_classifier_counts() {
    let dir = TempDir::new().unwrap();
    let regions = fixture("regions.geojson");
    let args = [
        "gen-corpus", "--regions", &regions, "--quota", "happycounty:4:1", "--quota", "sadcounty:1:3", "--seed", "3",
        "--window-start", "2013-07-22T00:00:00Z", "--window-end", "2013-07-23T00:00:00Z",
    ];
    ok(dir.path(), &[&args[..], &["--out", "a.jsonl"]].concat());
    ok(dir.path(), &[&args[..], &["--out", "b.jsonl"]].concat());
    assert_eq!(read(dir.path().join("a.jsonl")), read(dir.path().join("b.jsonl")));
    assert_eq!(read(dir.path().join("a.jsonl")).iter().filter(|&&b| b == b'\n').count(), 9);

    let model = fixture("model.nb");
    ok(
        dir.path(),
        &["pipeline", "--input", "a.jsonl", "--raw", "t1.jsonl", "--parsed", "t2.tsv", "--scores", "t3.csv",
          "--regions", &regions, "--model", &model, "--approach", "ml", "--level", "country", "--out-dir", "out"],
    );
    let t3 = String::from_utf8(read(dir.path().join("t3.csv"))).unwrap();
    let daily = t3
        .lines()
        .find(|l| l.contains("2013-07-22T00:00:00Z,2013-07-23T00:00:00Z"))
        .unwrap();
    assert_eq!(daily, "ml,country,mycountry,,2013-07-22T00:00:00Z,2013-07-23T00:00:00Z,5,4,9,1.25,1");

    let out = geosent(dir.path(), &["gen-corpus", "--regions", &regions, "--quota", "atlantis:1:1", "--out", "c.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("atlantis"));
}

#[test]
fn collect_reads_standard_input() {
    let dir = TempDir::new().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_geosent"))
        .args(["collect", "--input", "-", "--raw", "t1.jsonl"])
        .current_dir(dir.path())
        .stdin(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&read(fixture("corpus.jsonl"))).unwrap();
    assert!(child.wait().unwrap().success());
    assert_eq!(read(dir.path().join("t1.jsonl")), read(fixture("corpus.jsonl")));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let runs: Vec<TempDir> = ["1", "3"]
        .iter()
        .map(|threads| {
            let dir = TempDir::new().unwrap();
            let config = fixture_config(dir.path());
            ok(dir.path(), &["pipeline", "--threads", threads, "--config", config.to_str().unwrap()]);
            dir
        })
        .collect();
    for f in ["t2.tsv", "t3.csv"] {
        assert_eq!(read(runs[0].path().join(f)), read(runs[1].path().join(f)));
    }
}

#[test]
fn train_evaluate_and_correlate_write_to_stdout() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["train", "--corpus", &fixture("train.tsv"), "--model", "m.nb"]);
    assert_eq!(read(dir.path().join("m.nb")), read(fixture("model.nb")));
    let out = ok(dir.path(), &["evaluate", "--model", "m.nb", "--test", &fixture("train.tsv")]);
    let report = String::from_utf8(out.stdout).unwrap();
    assert!(report.starts_with("accuracy,1.0000\n"), "{report}");
    assert!(report.contains("positive,7,0\nnegative,0,7\n"));

    let config = fixture_config(dir.path());
    ok(dir.path(), &["pipeline", "--config", config.to_str().unwrap()]);
    let out = ok(dir.path(), &["correlate", "--config", config.to_str().unwrap()]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("region,points,correlation"));
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..2], ["mycountry", "3"]);
    let r: f64 = row[2].parse().unwrap();
    assert!((-1.0..=1.0).contains(&r));
}

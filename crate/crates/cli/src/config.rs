//! Run settings from an optional TOML file overlaid by command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use chrono::{DateTime, TimeZone, Utc};
use clap::Args;
use geosent::estimator::NormScope;
use geosent::store::parse_instant;
use geosent::{Approach, Level, Window};
use serde::Deserialize;

/// Bad invocation or configuration (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Approaches {
    Dictionary,
    MachineLearning,
    #[default]
    Both,
}

impl Approaches {
    pub fn list(self) -> Vec<Approach> {
        match self {
            Approaches::Dictionary => vec![Approach::Dictionary],
            Approaches::MachineLearning => vec![Approach::MachineLearning],
            Approaches::Both => vec![Approach::Dictionary, Approach::MachineLearning],
        }
    }
}

impl FromStr for Approaches {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("both") {
            return Ok(Approaches::Both);
        }
        Ok(match s.parse::<Approach>()? {
            Approach::Dictionary => Approaches::Dictionary,
            Approach::MachineLearning => Approaches::MachineLearning,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Levels {
    One(Level),
    #[default]
    All,
}

impl Levels {
    pub fn list(self) -> Vec<Level> {
        match self {
            Levels::One(l) => vec![l],
            Levels::All => vec![Level::Country, Level::County],
        }
    }
}

impl FromStr for Levels {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("all") {
            Ok(Levels::All)
        } else {
            s.parse().map(Levels::One)
        }
    }
}

/// Keys of the configuration file. Each mirrors the flag of the same name
/// (with `-` for `_`).
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub raw: Option<PathBuf>,
    pub parsed: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub approach: Option<String>,
    pub level: Option<String>,
    pub bucket: Option<i64>,
    pub line_bucket: Option<i64>,
    pub window_start: Option<String>,
    pub window_end: Option<String>,
    pub norm_scope: Option<String>,
    pub tz_offset: Option<i32>,
    pub no_hashtag_match: Option<bool>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.input,
            &mut cfg.raw,
            &mut cfg.parsed,
            &mut cfg.scores,
            &mut cfg.regions,
            &mut cfg.lexicon,
            &mut cfg.model,
            &mut cfg.out_dir,
        ]
        .into_iter()
        .flatten()
        {
            // paths in a config file are relative to the file; "-" means stdin
            if p.is_relative() && p.as_os_str() != "-" {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Default, Clone, Args)]
pub struct SettingsArgs {
    /// Raw tweet source for `collect` (`-` for standard input)
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Raw table T1 (JSON lines)
    #[arg(long)]
    pub raw: Option<PathBuf>,
    /// Parsed table T2 (TSV)
    #[arg(long)]
    pub parsed: Option<PathBuf>,
    /// Score table T3 (CSV)
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// GeoJSON regions file
    #[arg(long)]
    pub regions: Option<PathBuf>,
    /// Sentiment lexicon (pattern<TAB>strength)
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Naive Bayes model file
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Directory for rendered files
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// dict, ml or both
    #[arg(long)]
    pub approach: Option<String>,
    /// country, county or all
    #[arg(long)]
    pub level: Option<String>,
    /// Bucket length in seconds for scores and maps
    #[arg(long)]
    pub bucket: Option<i64>,
    /// Bucket length in seconds for line graphs and correlation
    #[arg(long)]
    pub line_bucket: Option<i64>,
    /// Window start (RFC 3339)
    #[arg(long)]
    pub window_start: Option<String>,
    /// Window end, exclusive (RFC 3339)
    #[arg(long)]
    pub window_end: Option<String>,
    /// Normalisation group: siblings or level
    #[arg(long)]
    pub norm_scope: Option<String>,
    /// Display time zone offset in minutes east of UTC
    #[arg(long, allow_hyphen_values = true)]
    pub tz_offset: Option<i32>,
    /// Do not match hashtag bodies against the lexicon
    #[arg(long)]
    pub no_hashtag_match: bool,
    /// Random seed for corpus generation
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Flags overlaid on the config file.
#[derive(Debug, Clone)]
pub struct Settings {
    pub input: Option<PathBuf>,
    pub raw: Option<PathBuf>,
    pub parsed: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub approach: Approaches,
    pub level: Levels,
    pub bucket: i64,
    pub line_bucket: Option<i64>,
    pub window: Window,
    window_given: bool,
    pub norm_scope: NormScope,
    pub tz_offset: i32,
    pub hashtag_match: bool,
    pub seed: Option<u64>,
}

fn parse_opt<T: FromStr<Err = String>>(key: &str, v: Option<String>) -> Result<Option<T>> {
    v.map(|s| s.parse::<T>().map_err(|e| usage(format!("--{key}: {e}"))))
        .transpose()
}

fn instant(key: &str, v: Option<String>) -> Result<Option<DateTime<Utc>>> {
    v.map(|s| parse_instant(&s).map_err(|e| usage(format!("--{key}: {e}"))))
        .transpose()
}

impl Settings {
    pub fn resolve(flags: SettingsArgs, file: FileConfig) -> Result<Self> {
        let start = instant("window-start", flags.window_start.or(file.window_start))?;
        let end = instant("window-end", flags.window_end.or(file.window_end))?;
        let window_given = start.is_some() || end.is_some();
        let window = match (start, end) {
            (None, None) => Window::all(),
            (s, e) => Window::new(s.unwrap_or(Window::all().start), e.unwrap_or(Window::all().end))
                .map_err(|e| usage(e.to_string()))?,
        };
        let bucket = flags.bucket.or(file.bucket).unwrap_or(86_400);
        let line_bucket = flags.line_bucket.or(file.line_bucket);
        for (key, v) in [("bucket", Some(bucket)), ("line-bucket", line_bucket)] {
            if v.is_some_and(|v| v <= 0) {
                return Err(usage(format!("--{key} must be a positive number of seconds")));
            }
        }
        Ok(Settings {
            input: flags.input.or(file.input),
            raw: flags.raw.or(file.raw),
            parsed: flags.parsed.or(file.parsed),
            scores: flags.scores.or(file.scores),
            regions: flags.regions.or(file.regions),
            lexicon: flags.lexicon.or(file.lexicon),
            model: flags.model.or(file.model),
            out_dir: flags.out_dir.or(file.out_dir),
            approach: parse_opt("approach", flags.approach.or(file.approach))?.unwrap_or_default(),
            level: parse_opt("level", flags.level.or(file.level))?.unwrap_or_default(),
            bucket,
            line_bucket,
            window,
            window_given,
            norm_scope: parse_opt("norm-scope", flags.norm_scope.or(file.norm_scope))?.unwrap_or_default(),
            tz_offset: flags.tz_offset.or(file.tz_offset).unwrap_or(0),
            hashtag_match: !(flags.no_hashtag_match || file.no_hashtag_match.unwrap_or(false)),
            seed: flags.seed.or(file.seed),
        })
    }

    /// The configured window, or `default` when none was given.
    pub fn window_or(&self, default: Window) -> Window {
        if self.window_given {
            self.window
        } else {
            default
        }
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| usage(format!("missing --{key} (or `{}` in the config file)", key.replace('-', "_"))))
    }

    /// Like [`Settings::require`] but the file must already exist.
    pub fn require_existing<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        let path = self.require(value, key)?;
        if path.as_os_str() != "-" && !path.exists() {
            anyhow::bail!("{} not found: {}", key, path.display());
        }
        Ok(path)
    }
}

pub fn default_generator_window() -> Window {
    Window::new(
        Utc.with_ymd_and_hms(2013, 7, 21, 0, 0, 0).unwrap(),
        Utc.with_ymd_and_hms(2013, 7, 24, 0, 0, 0).unwrap(),
    )
    .expect("valid window")
}

//! Run configuration: flags > config file (`key = value`) > defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use noir_core::embedding::{HttpOptions, PrecomputedEmbedder};
use noir_core::metric::{DEFAULT_SATURATION_CAP, DEFAULT_SIMILARITY_FLOOR};
use noir_core::tokencount::Strategy;
use noir_core::{Embedder, Execution, HttpEmbedder, MetricConfig, TokenCounter, TokenCounterSpec};

pub const EMBED_URL_ENV: &str = "NOIR_EMBED_URL";
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_OUT: &str = "noir-out";

const KNOWN_KEYS: [&str; 9] = [
    "corpus", "embedder", "tokens", "vocab", "epsilon_d", "m_cap", "seed", "out", "execution",
];

/// Global settings as given on the command line; `None` means not given.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub embedder: Option<String>,
    pub tokens: Option<String>,
    pub vocab: Option<PathBuf>,
    pub epsilon_d: Option<f64>,
    pub m_cap: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub sequential: bool,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub embedder: Option<String>,
    pub tokens: TokenCounterSpec,
    pub metric: MetricConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub execution: Execution,
}

pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let source = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&source).with_context(|| format!("in config {}", path.display()))
}

pub fn parse_config(source: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected `key = value`", i + 1))?;
        let k = k.trim();
        if !KNOWN_KEYS.contains(&k) {
            bail!("line {}: unknown key `{k}`", i + 1);
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn parsed<T: std::str::FromStr>(file: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    file.get(key)
        .map(|v| v.parse::<T>().map_err(|e| anyhow!("config key `{key}`: {e}")))
        .transpose()
}

impl RunConfig {
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let file = match &o.config {
            Some(p) => parse_config_file(p)?,
            None => BTreeMap::new(),
        };
        let strategy: Strategy = match o.tokens.clone().or_else(|| file.get("tokens").cloned()) {
            Some(s) => s.parse()?,
            None => Strategy::Whitespace,
        };
        let vocab = o.vocab.clone().or_else(|| file.get("vocab").map(PathBuf::from));
        let tokens = match strategy {
            Strategy::Bpe => TokenCounterSpec::bpe(vocab.ok_or_else(|| anyhow!("--tokens bpe requires --vocab"))?),
            Strategy::Chars4 => TokenCounterSpec::chars4(),
            Strategy::Whitespace => TokenCounterSpec::whitespace(),
        };
        let floor = o.epsilon_d.or(parsed(&file, "epsilon_d")?).unwrap_or(DEFAULT_SIMILARITY_FLOOR);
        let cap = o.m_cap.or(parsed(&file, "m_cap")?).unwrap_or(DEFAULT_SATURATION_CAP);
        let metric = MetricConfig::new(floor, cap)?;
        let execution = if o.sequential {
            Execution::Sequential
        } else {
            match file.get("execution").map(String::as_str) {
                None | Some("parallel") => Execution::default(),
                Some("sequential") => Execution::Sequential,
                Some(other) => bail!("config key `execution`: expected sequential or parallel, got `{other}`"),
            }
        };
        let embedder = o
            .embedder
            .clone()
            .or_else(|| file.get("embedder").cloned())
            .or_else(|| std::env::var(EMBED_URL_ENV).ok().filter(|v| !v.trim().is_empty()));
        Ok(Self {
            corpus: o.corpus.clone().or_else(|| file.get("corpus").map(PathBuf::from)),
            embedder,
            tokens,
            metric,
            seed: o.seed.or(parsed(&file, "seed")?).unwrap_or(DEFAULT_SEED),
            out: o
                .out
                .clone()
                .or_else(|| file.get("out").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            execution,
        })
    }

    pub fn corpus(&self) -> Result<&Path> {
        self.corpus
            .as_deref()
            .ok_or_else(|| anyhow!("no corpus given (use --corpus or `corpus = ...` in the config)"))
    }

    pub fn counter(&self) -> Result<TokenCounter> {
        Ok(TokenCounter::new(self.tokens.clone())?)
    }

    /// `file:<path>` for a vector table, otherwise an HTTP base URL.
    pub fn backend(&self) -> Result<Arc<dyn Embedder>> {
        let sel = self
            .embedder
            .as_deref()
            .ok_or_else(|| anyhow!("no embedder given (use --embedder or set {EMBED_URL_ENV})"))?;
        if let Some(path) = sel.strip_prefix("file:") {
            return Ok(Arc::new(PrecomputedEmbedder::load(Path::new(path))?));
        }
        if sel.starts_with("http://") || sel.starts_with("https://") {
            return Ok(Arc::new(HttpEmbedder::connect(sel, HttpOptions::default())?));
        }
        bail!("embedder `{sel}` must be `file:<path>` or an http(s) URL")
    }
}

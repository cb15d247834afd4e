use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use noir_core::corpus::{load_corpus, load_scored, null_pairs, true_pairs, write_scored};
use noir_core::embedding::{audit_suitability, embed, paraphrase_mean};
use noir_core::plot::{curve_svg, histogram_svg, scatter_svg};
use noir_core::stats::{
    expcos_fit_on_grid, halving_bins, human_eval_bins, length_correlation_audit_with, linear_grid,
    percentile_bundle, power_sweep_with, separation, similarity_vs_compression_curve, spearman_by_item,
    summarize_distribution, sweep_argmax, trend_fit, DistributionSummary, Histogram, RatioBin,
};
use noir_core::{Document, PairAnchor, ScoredPair, Scorer};
use noir_service::{AppState, ServiceConfig};

use crate::config::RunConfig;
use crate::report::{cells, write_file, Manifest, Table};
use crate::{Anchor, BinSet, Command, LengthMeasure};

pub fn run(cfg: &RunConfig, cmd: Command) -> Result<()> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let mut m = Manifest::new(cmd.name(), cfg);
    let result = dispatch(cfg, cmd, &mut m);
    m.set("status", if result.is_ok() { "ok" } else { "error" });
    let written = m.write(&cfg.out);
    result.and(written.map(|_| ()))
}

fn dispatch(cfg: &RunConfig, cmd: Command, m: &mut Manifest) -> Result<()> {
    match cmd {
        Command::Score { text, summary } => score(cfg, m, &text, &summary),
        Command::Batch { anchor, .. } => batch(cfg, m, anchor),
        Command::Nullbase { trials, .. } => nullbase(cfg, m, trials),
        Command::Analyze {
            true_table,
            null_table,
            bins,
        } => analyze(cfg, m, &true_table, null_table.as_deref(), bins),
        Command::SweepP {
            true_table,
            null_table,
            start,
            stop,
            step,
        } => sweep(cfg, m, &true_table, &null_table, start, stop, step),
        Command::CorrLength { length, .. } => corr_length(cfg, m, length),
        Command::ExpcosFit { floor, grid } => expcos(cfg, m, floor, grid),
        Command::Curve { scored, bins } => curve(cfg, m, &scored, bins),
        Command::Bundle {
            scored,
            percentiles,
            bins,
            human_ranks,
        } => bundle(cfg, m, &scored, &percentiles, bins, human_ranks.as_deref()),
        Command::AuditEmbedder {
            trials,
            threshold,
            paraphrases,
            ..
        } => audit(cfg, m, trials, threshold, paraphrases.as_deref()),
        Command::Serve { addr, threshold } => serve(cfg, m, addr, threshold),
    }
}

fn scorer(cfg: &RunConfig, m: &mut Manifest) -> Result<Scorer> {
    let backend = cfg.backend()?;
    m.set("embedder", backend.profile().backend_id);
    Ok(Scorer::new(cfg.counter()?, backend, cfg.metric).with_execution(cfg.execution))
}

fn corpus(cfg: &RunConfig, m: &mut Manifest) -> Result<Vec<Document>> {
    let path = cfg.corpus()?;
    m.set("corpus", path.display());
    let docs = load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))?;
    m.set("documents", docs.len());
    Ok(docs)
}

fn scored_table(path: &Path, m: &mut Manifest, key: &str) -> Result<Vec<ScoredPair>> {
    m.set(key, path.display());
    let s = load_scored(path).with_context(|| format!("loading scored table {}", path.display()))?;
    if s.is_empty() {
        bail!("scored table {} has no rows", path.display());
    }
    Ok(s)
}

fn noir_values(s: &[ScoredPair]) -> Vec<f64> {
    s.iter().map(|p| p.noir()).collect()
}

fn bin_set(b: BinSet) -> Vec<RatioBin> {
    match b {
        BinSet::Halving => halving_bins(),
        BinSet::Human => human_eval_bins(),
    }
}

fn score(cfg: &RunConfig, m: &mut Manifest, text: &Path, summary: &Path) -> Result<()> {
    let read = |p: &Path| fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
    let (t, s) = (read(text)?, read(summary)?);
    m.set("text", text.display());
    m.set("summary", summary.display());
    let r = scorer(cfg, m)?.score_texts(&t, &s)?;
    let mut table = Table::new(&[
        "tokens_text",
        "tokens_summary",
        "ratio",
        "similarity_raw",
        "similarity_clamped",
        "noir",
        "saturated",
    ]);
    table.row(cells![
        r.tokens_parent,
        r.tokens_candidate,
        r.ratio().value(),
        r.similarity.raw(),
        r.similarity.clamped(),
        r.noir.value,
        r.noir.saturated
    ]);
    table.write(&cfg.out, "score.csv")?;
    print!("{}", table.to_csv()?);
    Ok(())
}

fn write_scored_file(dir: &Path, name: &str, scored: &[ScoredPair]) -> Result<PathBuf> {
    let path = dir.join(name);
    let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_scored(std::io::BufWriter::new(f), scored)?;
    Ok(path)
}

fn score_histogram(dir: &Path, name: &str, title: &str, values: &[f64]) {
    match summarize_distribution(values, noir_core::stats::DEFAULT_HISTOGRAM_BINS) {
        Ok(d) => {
            let svg = histogram_svg(title, "score", &[("pairs", &d.histogram, Some((d.gauss_mu, d.gauss_sigma)))]);
            if let Err(e) = write_file(dir, name, &svg) {
                log::warn!("{e:#}");
            }
        }
        Err(e) => log::warn!("no histogram for {name}: {e}"),
    }
}

fn batch(cfg: &RunConfig, m: &mut Manifest, anchor: Anchor) -> Result<()> {
    let docs = corpus(cfg, m)?;
    let anchor = match anchor {
        Anchor::Immediate => PairAnchor::Immediate,
        Anchor::Root => PairAnchor::Root,
    };
    m.set("anchor", format!("{anchor:?}").to_lowercase());
    let scorer = scorer(cfg, m)?;
    let scored = scorer.score_pairs(&true_pairs(&docs, anchor), &docs)?;
    m.set("pairs", scored.len());
    let path = write_scored_file(&cfg.out, "scored_true.csv", &scored)?;
    score_histogram(&cfg.out, "scored_true.svg", "Summary scores", &noir_values(&scored));
    println!("scored {} pairs -> {}", scored.len(), path.display());
    Ok(())
}

fn nullbase(cfg: &RunConfig, m: &mut Manifest, trials: usize) -> Result<()> {
    let docs = corpus(cfg, m)?;
    m.set("trials", trials);
    let pairs = null_pairs(&docs, trials, cfg.seed)?;
    let scored = scorer(cfg, m)?.score_pairs(&pairs, &docs)?;
    let path = write_scored_file(&cfg.out, "scored_null.csv", &scored)?;
    score_histogram(&cfg.out, "scored_null.svg", "Null-pair scores", &noir_values(&scored));
    println!("scored {} null pairs -> {}", scored.len(), path.display());
    Ok(())
}

fn distribution_row(t: &mut Table, name: &str, d: &DistributionSummary) {
    t.row(cells![name, d.n, d.mean, d.std, d.stderr, d.gauss_mu, d.gauss_sigma, d.gauss_mu_err]);
}

fn analyze(cfg: &RunConfig, m: &mut Manifest, true_path: &Path, null_path: Option<&Path>, bins: usize) -> Result<()> {
    m.set("bins", bins);
    let t = scored_table(true_path, m, "true_table")?;
    let dt = summarize_distribution(&noir_values(&t), bins).context("true-pair distribution")?;
    let mut dist = Table::new(&["set", "n", "mean", "std", "stderr", "gauss_mu", "gauss_sigma", "gauss_mu_err"]);
    distribution_row(&mut dist, "true", &dt);
    println!("true: n={} mean={} gauss_mu={} +/- {}", dt.n, dt.mean, dt.gauss_mu, dt.gauss_mu_err);

    let mut series = vec![("true", &dt.histogram, Some((dt.gauss_mu, dt.gauss_sigma)))];
    let dn;
    if let Some(p) = null_path {
        let n = scored_table(p, m, "null_table")?;
        dn = summarize_distribution(&noir_values(&n), bins).context("null-pair distribution")?;
        distribution_row(&mut dist, "null", &dn);
        let sep = separation(&dt, &dn)?;
        let gauss_sep = (dt.gauss_mu - dn.gauss_mu) / dt.gauss_sigma.hypot(dn.gauss_sigma);
        let mut st = Table::new(&["measure", "value"]);
        st.row(cells!["moments", sep]);
        st.row(cells!["gauss", gauss_sep]);
        st.write(&cfg.out, "separation.csv")?;
        println!("null: n={} mean={} gauss_mu={} +/- {}", dn.n, dn.mean, dn.gauss_mu, dn.gauss_mu_err);
        println!("separation={sep} gauss_separation={gauss_sep}");
        series.push(("null", &dn.histogram, Some((dn.gauss_mu, dn.gauss_sigma))));
    }
    dist.write(&cfg.out, "distribution.csv")?;
    write_file(&cfg.out, "distribution.svg", &histogram_svg("Score distributions", "score", &series))?;

    let x: Vec<f64> = t.iter().map(|p| p.score.tokens_parent as f64).collect();
    let y = noir_values(&t);
    match trend_fit(&x, &y) {
        Ok(f) => {
            let mut tt = Table::new(&["x", "n", "slope", "slope_err", "intercept"]);
            tt.row(cells!["tokens_parent", x.len(), f.slope, f.slope_err, f.intercept]);
            tt.write(&cfg.out, "trend.csv")?;
            let pts: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
            let svg = scatter_svg("Score vs parent length", "parent tokens", "score", &pts, Some((f.slope, f.intercept)));
            write_file(&cfg.out, "trend.svg", &svg)?;
            println!("trend: slope={} +/- {} per token", f.slope, f.slope_err);
        }
        Err(e) => log::warn!("trend fit skipped: {e}"),
    }
    Ok(())
}

fn sweep(
    cfg: &RunConfig,
    m: &mut Manifest,
    true_path: &Path,
    null_path: &Path,
    start: f64,
    stop: f64,
    step: f64,
) -> Result<()> {
    if step.is_nan() || step <= 0.0 || stop < start {
        bail!("need step > 0 and stop >= start");
    }
    let t = scored_table(true_path, m, "true_table")?;
    let n = scored_table(null_path, m, "null_table")?;
    let grid = linear_grid(start, stop, step);
    m.set("p_grid", format!("{start}:{stop}:{step}"));
    let points = power_sweep_with(cfg.execution, &t, &n, &grid, &cfg.metric)?;
    let mut table = Table::new(&["p", "separation"]);
    for p in &points {
        table.row(cells![p.p, p.separation]);
    }
    table.write(&cfg.out, "sweep.csv")?;
    let curve: Vec<(f64, f64, f64)> = points.iter().map(|p| (p.p, p.separation, 0.0)).collect();
    write_file(&cfg.out, "sweep.svg", &curve_svg("Separation vs power", "p", "separation", &[("sweep", curve)]))?;
    let best = sweep_argmax(&points).ok_or_else(|| anyhow!("empty p grid"))?;
    let interior = best.p > grid[0] && best.p < grid[grid.len() - 1];
    println!("argmax p={} separation={} interior={interior}", best.p, best.separation);
    Ok(())
}

fn corr_length(cfg: &RunConfig, m: &mut Manifest, measure: LengthMeasure) -> Result<()> {
    let docs = corpus(cfg, m)?;
    m.set("length", format!("{measure:?}").to_lowercase());
    let counter = cfg.counter()?;
    let mut texts = Vec::new();
    let mut lengths = Vec::new();
    for d in &docs {
        let root = counter.count(&d.text)? as f64;
        for level in 0..=d.depth() {
            let t = d.text_at(level).expect("level within depth");
            let n = counter.count(t)? as f64;
            texts.push(t.to_string());
            lengths.push(match measure {
                LengthMeasure::Raw => n,
                LengthMeasure::Normalized => n / root,
            });
        }
    }
    let backend = cfg.backend()?;
    m.set("embedder", backend.profile().backend_id);
    let vectors = embed(backend.as_ref(), &texts)?.vectors;
    let a = length_correlation_audit_with(cfg.execution, &vectors, &lengths)?;
    let mut table = Table::new(&["dimension", "r", "degenerate"]);
    for (i, r) in a.per_dimension_r.iter().enumerate() {
        table.row(cells![i, r, a.degenerate.contains(&i)]);
    }
    table.write(&cfg.out, "corr_length.csv")?;
    let (argmax, _) = a
        .per_dimension_r
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
        .ok_or_else(|| anyhow!("no dimensions"))?;
    let mut summary = Table::new(&["n", "dimensions", "max_abs_r", "argmax_dimension", "std_of_r", "degenerate"]);
    summary.row(cells![texts.len(), a.per_dimension_r.len(), a.max_abs_r, argmax, a.std_of_r, a.degenerate.len()]);
    summary.write(&cfg.out, "corr_length_summary.csv")?;
    let hist = Histogram::build(&a.per_dimension_r, 40, -1.0, 1.0);
    write_file(&cfg.out, "corr_length.svg", &histogram_svg("Per-dimension length correlation", "r", &[("r", &hist, None)]))?;
    println!("texts={} max_abs_r={} (dimension {argmax}) std_of_r={}", texts.len(), a.max_abs_r, a.std_of_r);
    Ok(())
}

fn expcos(cfg: &RunConfig, m: &mut Manifest, floor: f64, grid: usize) -> Result<()> {
    m.set("floor", floor);
    m.set("grid", grid);
    let f = expcos_fit_on_grid(floor, grid)?;
    let mut table = Table::new(&["floor", "beta", "rms", "x_max", "grid_points"]);
    table.row(cells![floor, f.beta, f.rms, f.x_max, f.grid_points]);
    table.write(&cfg.out, "expcos.csv")?;
    let xs: Vec<f64> = (0..=200).map(|i| f.x_max * i as f64 / 200.0).collect();
    let cos: Vec<(f64, f64, f64)> = xs.iter().map(|&x| (x, x.sqrt().cos(), 0.0)).collect();
    let exp: Vec<(f64, f64, f64)> = xs.iter().map(|&x| (x, (-f.beta * x).exp(), 0.0)).collect();
    let svg = curve_svg("Cosine vs exponential decay", "x", "similarity", &[("cos(sqrt x)", cos), ("exp(-beta x)", exp)]);
    write_file(&cfg.out, "expcos.svg", &svg)?;
    print!("{}", table.to_csv()?);
    Ok(())
}

fn curve(cfg: &RunConfig, m: &mut Manifest, path: &Path, bins: BinSet) -> Result<()> {
    let scored = scored_table(path, m, "scored_table")?;
    m.set("bins", format!("{bins:?}").to_lowercase());
    let points = similarity_vs_compression_curve(&scored, &bin_set(bins));
    if points.is_empty() {
        bail!("no pairs fall in any compression bin");
    }
    let mut table = Table::new(&["bin_lo", "bin_hi", "n", "mean_similarity", "stderr"]);
    for p in &points {
        table.row(cells![p.bin.lo, p.bin.hi, p.n, p.mean_similarity, p.stderr]);
    }
    table.write(&cfg.out, "curve.csv")?;
    let series: Vec<(f64, f64, f64)> = points
        .iter()
        .map(|p| ((p.bin.lo * p.bin.hi).sqrt(), p.mean_similarity, p.stderr))
        .collect();
    write_file(
        &cfg.out,
        "curve.svg",
        &curve_svg("Similarity vs compression", "ratio", "mean similarity", &[("pairs", series)]),
    )?;
    print!("{}", table.to_csv()?);
    Ok(())
}

/// `item,rank` lines; a non-numeric first line is taken as a header.
fn read_ranks(path: &Path) -> Result<Vec<(usize, f64)>> {
    let source = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split([',', '\t']).map(str::trim);
        let (item, rank) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
        match (item.parse::<usize>(), rank.parse::<f64>()) {
            (Ok(item), Ok(rank)) => out.push((item, rank)),
            _ if i == 0 => continue,
            _ => bail!("{} line {}: expected `item,rank`", path.display(), i + 1),
        }
    }
    Ok(out)
}

fn bundle(
    cfg: &RunConfig,
    m: &mut Manifest,
    path: &Path,
    percentiles: &[f64],
    bins: BinSet,
    ranks: Option<&Path>,
) -> Result<()> {
    let scored = scored_table(path, m, "scored_table")?;
    m.set("bins", format!("{bins:?}").to_lowercase());
    m.set(
        "percentiles",
        percentiles.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
    );
    let picks = percentile_bundle(&scored, &bin_set(bins), percentiles)?;
    let mut table = Table::new(&[
        "item",
        "bin_lo",
        "bin_hi",
        "percentile",
        "target",
        "parent_id",
        "candidate_id",
        "level",
        "ratio",
        "noir",
    ]);
    for (i, p) in picks.iter().enumerate() {
        table.row(cells![
            i + 1,
            p.bin.lo,
            p.bin.hi,
            p.percentile,
            p.target,
            p.pair.pair.parent_id,
            p.pair.pair.candidate_id,
            p.pair.pair.candidate_level,
            p.pair.ratio(),
            p.pair.noir()
        ]);
    }
    table.write(&cfg.out, "bundle.csv")?;
    println!("bundle of {} pairs -> {}", picks.len(), cfg.out.join("bundle.csv").display());

    if let Some(rp) = ranks {
        m.set("human_ranks", rp.display());
        // rank 1 is best, so negate to align with "higher score is better"
        let human: Vec<(usize, f64)> = read_ranks(rp)?.into_iter().map(|(i, r)| (i, -r)).collect();
        let machine: Vec<(usize, f64)> = picks.iter().enumerate().map(|(i, p)| (i + 1, p.pair.noir())).collect();
        let rho = spearman_by_item(&human, &machine)?;
        let mut t = Table::new(&["n", "spearman"]);
        t.row(cells![human.len(), rho]);
        t.write(&cfg.out, "spearman.csv")?;
        println!("spearman={rho}");
    }
    Ok(())
}

fn read_paraphrases(path: &Path) -> Result<Vec<(String, String)>> {
    let source = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    source
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split_once('\t')
                .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                .ok_or_else(|| anyhow!("{} line {}: expected two tab-separated texts", path.display(), i + 1))
        })
        .collect()
}

fn audit(cfg: &RunConfig, m: &mut Manifest, trials: usize, threshold: f64, paraphrases: Option<&Path>) -> Result<()> {
    let docs = corpus(cfg, m)?;
    m.set("trials", trials);
    m.set("threshold", threshold);
    let texts: Vec<String> = docs
        .iter()
        .flat_map(|d| (0..=d.depth()).filter_map(move |l| d.text_at(l).map(str::to_string)))
        .collect();
    let backend = cfg.backend()?;
    m.set("embedder", backend.profile().backend_id);
    let profile = audit_suitability(backend.as_ref(), &texts, trials, cfg.seed, threshold)?;
    let mut a = profile.suitability.clone().expect("audit fills suitability");
    if let Some(p) = paraphrases {
        m.set("paraphrases", p.display());
        a.paraphrase_mean = Some(paraphrase_mean(backend.as_ref(), &read_paraphrases(p)?)?);
    }
    let verdict = if a.pass { "PASS" } else { "FAIL" };
    let mut table = Table::new(&[
        "backend_id",
        "dimension",
        "trials",
        "seed",
        "random_mean",
        "random_std",
        "paraphrase_mean",
        "threshold",
        "verdict",
    ]);
    table.row(cells![
        profile.backend_id,
        profile.dimension,
        a.trials,
        a.seed,
        a.random_mean,
        a.random_std,
        a.paraphrase_mean.map(|v| v.to_string()).unwrap_or_default(),
        a.threshold,
        verdict
    ]);
    table.write(&cfg.out, "audit.csv")?;
    m.set("verdict", verdict);
    println!("random-pair similarity mean={} std={} -> {verdict}", a.random_mean, a.random_std);
    Ok(())
}

fn serve(cfg: &RunConfig, m: &mut Manifest, addr: std::net::SocketAddr, threshold: f64) -> Result<()> {
    if !threshold.is_finite() {
        bail!("threshold must be finite");
    }
    let scorer = scorer(cfg, m)?;
    m.set("addr", addr);
    m.set("threshold", threshold);
    m.write(&cfg.out)?;
    let state = Arc::new(AppState::new(
        scorer,
        ServiceConfig {
            default_threshold: threshold,
        },
    ));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(noir_service::serve(addr, state))?;
    Ok(())
}

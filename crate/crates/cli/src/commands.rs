use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use das_core::corpus::{candidate_universe, load_corpus, Corpus, CorpusFormat, LoadOptions, Query};
use das_core::eval::{
    mean_rank_by_trial, run_benchmark, sample_queries, EvaluationReport, LabeledQueryResult,
    Pipeline, Setting,
};
use das_core::filter::{
    Embedder, EmbeddingIndex, EmbeddingProvider, FilteredPool, HttpEmbedder, MockEmbedder,
};
use das_core::llm::{
    DeterministicOracle, Domain, GroupJudge, HttpChatClient, LlmClient, OracleConfig,
    PromptTemplate, Ranker, ResponseCache,
};
use das_core::manifest::RunManifest;
use das_core::synth::{synth_corpus, SynthParams};
use das_core::tournament::{
    read_verdict_log, round_summaries, AttributionResult, Tournament, TournamentMode, VerdictLog,
    VerdictRecord,
};
use das_core::DasError;

use crate::config::{ClientKind, EmbeddingKind, RunConfig};
use crate::{
    rundir, Ablation, AttributeArgs, BenchmarkArgs, Cli, Command, EvaluateArgs, Failure,
    FilterArgs, JudgeArgs, LabelsArgs, SettingArg, SynthArgs, TsaArgs,
};

type CmdResult = Result<(), Failure>;

pub fn run(cli: Cli) -> CmdResult {
    let mut config =
        RunConfig::load(cli.config.as_deref()).map_err(|e| Failure::Usage(format!("{e:#}")))?;
    if let Some(dir) = cli.runs_dir {
        config.runs_dir = dir;
    }
    match cli.command {
        Command::Synth(args) => synth(args),
        Command::Labels(args) => labels(&config, args),
        Command::Filter(args) => filter(config, args),
        Command::Attribute(args) => attribute(config, args),
        Command::Evaluate(args) => evaluate(config, args),
        Command::Benchmark(args) => benchmark(config, args),
    }
}

fn synth(args: SynthArgs) -> CmdResult {
    let params = SynthParams {
        authors: args.authors,
        docs_per_author: args.docs_per_author,
        signal: args.signal,
        words_per_doc: args.words,
        seed: args.seed,
    };
    let corpus = synth_corpus(&params)?;
    corpus.save(&args.out)?;
    println!(
        "wrote {} documents by {} authors to {} (digest {})",
        corpus.len(),
        params.authors,
        args.out.display(),
        &corpus.source_digest()[..16]
    );
    Ok(())
}

fn load(config: &RunConfig, flag: Option<&Path>) -> Result<Corpus, Failure> {
    let path = flag.or(config.corpus.as_deref()).ok_or_else(|| {
        Failure::Usage("no corpus given (use --corpus or the config's corpus field)".into())
    })?;
    Ok(load_corpus(
        path,
        CorpusFormat::Jsonl,
        LoadOptions {
            max_chars: config.max_chars,
        },
    )?)
}

/// One line of a labels file.
#[derive(Debug, Serialize, Deserialize)]
struct LabelLine {
    query_id: String,
    relevant_ids: BTreeSet<String>,
    pool_size: usize,
}

fn labels(config: &RunConfig, args: LabelsArgs) -> CmdResult {
    let corpus = load(config, args.corpus.as_deref())?;
    let ids: Vec<String> = if args.queries.is_empty() {
        corpus
            .iter()
            .filter(|d| corpus.iter().any(|o| o.id != d.id && d.same_author(o)))
            .map(|d| d.id.clone())
            .collect()
    } else {
        args.queries
    };
    let mut out = Vec::new();
    for id in &ids {
        let query = Query::for_id(&corpus, id)?;
        if query.target().author.is_none() {
            return Err(DasError::MissingLabel(id.clone()).into());
        }
        let universe = candidate_universe(&corpus, &query)?;
        let line = LabelLine {
            query_id: id.clone(),
            relevant_ids: universe
                .iter()
                .filter(|d| query.target().same_author(d))
                .map(|d| d.id.clone())
                .collect(),
            pool_size: universe.len(),
        };
        serde_json::to_writer(&mut out, &line).map_err(anyhow::Error::from)?;
        out.push(b'\n');
    }
    fs::write(&args.out, out).with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote labels for {} queries to {}",
        ids.len(),
        args.out.display()
    );
    Ok(())
}

fn embedding_provider(config: &RunConfig) -> Result<Box<dyn EmbeddingProvider>, Failure> {
    let s = &config.embedding;
    match s.provider {
        EmbeddingKind::Mock => {
            if s.dim == 0 {
                return Err(Failure::Usage("embedding dim must be at least 1".into()));
            }
            Ok(Box::new(MockEmbedder::new(s.dim, s.seed)))
        }
        EmbeddingKind::Http => {
            let (Some(endpoint), Some(model)) = (&s.endpoint, &s.model) else {
                return Err(Failure::Usage(
                    "http embeddings need embedding.endpoint and embedding.model".into(),
                ));
            };
            let mut provider = HttpEmbedder::new(endpoint.clone(), model.clone());
            if let Some(var) = &s.auth_env {
                provider = provider.with_auth_env(var.clone());
            }
            Ok(Box::new(provider))
        }
    }
}

/// Index cache directory; prepended meta fields change the embedded text,
/// so they get their own subdirectory.
fn index_dir(config: &RunConfig) -> PathBuf {
    let base = config.cache_dir.join("embeddings");
    if config.embedding.prepend_meta.is_empty() {
        return base;
    }
    let digest = Sha256::digest(config.embedding.prepend_meta.join("\0").as_bytes());
    base.join(format!("meta-{}", &hex::encode(digest)[..12]))
}

fn build_index(
    config: &RunConfig,
    corpus: &Corpus,
) -> Result<(EmbeddingIndex, String, usize), Failure> {
    let provider = embedding_provider(config)?;
    let embedder = Embedder::new(provider.as_ref(), config.embedding.options());
    let dir = index_dir(config);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let (index, _built) = EmbeddingIndex::load_or_build(&dir, corpus, &embedder)?;
    Ok((
        index,
        embedder.provider_tag().to_owned(),
        embedder.stats().provider_calls,
    ))
}

fn filter(mut config: RunConfig, args: FilterArgs) -> CmdResult {
    let start = Instant::now();
    if let Some(k) = args.top_k {
        config.top_k = k as usize;
    }
    if config.top_k == 0 {
        return Err(Failure::Usage("top-k must be at least 1".into()));
    }
    let corpus = load(&config, args.corpus.as_deref())?;
    let query = Query::for_id(&corpus, &args.query)?;
    let (index, provider_tag, calls) = build_index(&config, &corpus)?;
    let universe = candidate_universe(&corpus, &query)?;
    let pool = index.top_k(&query, &universe, config.top_k)?;

    let echo = config.to_json();
    let inputs = serde_json::json!({ "corpus": corpus.source_digest(), "query": args.query });
    let dir = rundir::create(
        &config.runs_dir,
        &rundir::config_hash("filter", &echo, &inputs),
    )?;
    rundir::write_json(&dir.join("config.json"), &echo)?;
    pool.save(&dir.join("pool.json"))?;
    let mut manifest = RunManifest::new(
        "filter",
        echo,
        corpus.source_digest(),
        config.embedding.seed,
    );
    manifest.query_id = Some(args.query.clone());
    manifest.pool_digest = Some(pool.digest()?);
    manifest.embedding_provider = Some(provider_tag);
    manifest.wall_time_secs = start.elapsed().as_secs_f64();
    manifest.save(&dir.join("manifest.json"))?;

    println!(
        "pool: {} candidates for {} (K = {})",
        pool.len(),
        args.query,
        config.top_k
    );
    println!("embedding calls: {calls}");
    println!("elapsed: {:.3}s", start.elapsed().as_secs_f64());
    println!("run dir: {}", dir.display());
    Ok(())
}

fn apply_tsa(config: &mut RunConfig, args: &TsaArgs) -> TournamentMode {
    let t = &mut config.tsa;
    if let Some(v) = args.trials {
        t.trials = v;
    }
    if let Some(v) = args.group_size {
        t.group_size = v;
    }
    if let Some(v) = args.alpha {
        t.alpha = v;
    }
    if let Some(v) = args.final_k {
        t.final_k = v;
    }
    if let Some(v) = args.seed {
        t.seed = v;
    }
    if let Some(v) = args.parallelism {
        t.parallelism = v;
    }
    match args.ablation {
        Some(Ablation::Pe) => TournamentMode::SinglePass,
        None => TournamentMode::Full,
    }
}

fn apply_judge(config: &mut RunConfig, args: &JudgeArgs) -> Result<(), Failure> {
    let l = &mut config.llm;
    if let Some(v) = args.client {
        l.client = v;
    }
    if let Some(v) = args.oracle_noise {
        if !(0.0..=1.0).contains(&v) {
            return Err(Failure::Usage(format!(
                "oracle noise {v} is outside [0, 1]"
            )));
        }
        l.oracle_noise = v;
    }
    if let Some(v) = args.oracle_seed {
        l.oracle_seed = v;
    }
    if let Some(v) = &args.domain {
        l.domain = v.parse::<Domain>()?;
    }
    if let Some(v) = &args.template {
        l.template = Some(v.clone());
    }
    if let Some(v) = &args.model {
        l.chat.model = v.clone();
    }
    if let Some(v) = &args.endpoint {
        l.chat.endpoint = v.clone();
    }
    Ok(())
}

fn client(config: &RunConfig, corpus: &Corpus) -> Box<dyn LlmClient> {
    match config.llm.client {
        ClientKind::Oracle => Box::new(DeterministicOracle::from_corpus(
            corpus,
            OracleConfig {
                error_rate: config.llm.oracle_noise,
                seed: config.llm.oracle_seed,
            },
        )),
        ClientKind::Http => Box::new(HttpChatClient::new(config.llm.chat.clone())),
    }
}

fn template(config: &RunConfig) -> Result<PromptTemplate, Failure> {
    Ok(match &config.llm.template {
        Some(path) => PromptTemplate::from_file(path, config.llm.domain)?,
        None => PromptTemplate::builtin(config.llm.domain),
    })
}

fn response_cache(config: &RunConfig) -> Result<ResponseCache, Failure> {
    match config.llm.client {
        ClientKind::Oracle => Ok(ResponseCache::in_memory()),
        ClientKind::Http => {
            fs::create_dir_all(&config.cache_dir)
                .with_context(|| format!("creating {}", config.cache_dir.display()))?;
            Ok(ResponseCache::open(
                &config.cache_dir.join("responses.jsonl"),
            )?)
        }
    }
}

fn rounds_csv(verdicts: &[VerdictRecord]) -> String {
    let mut out = String::from("trial,round,phi,groups,singletons,members,survivors,awarded\n");
    for s in round_summaries(verdicts) {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.trial, s.round, s.phi, s.groups, s.singletons, s.members, s.survivors, s.awarded
        ));
    }
    out
}

fn attribute(mut config: RunConfig, args: AttributeArgs) -> CmdResult {
    let start = Instant::now();
    let mode = apply_tsa(&mut config, &args.tsa);
    apply_judge(&mut config, &args.judge)?;
    config.tsa.validate()?;

    let corpus = load(&config, args.corpus.as_deref())?;
    let pool = FilteredPool::load(&args.pool)?;
    if let Some(q) = &args.query {
        if *q != pool.query_id {
            return Err(Failure::Usage(format!(
                "--query {q} does not match the pool's query {}",
                pool.query_id
            )));
        }
    }
    let query = Query::for_id(&corpus, &pool.query_id)?;
    let client = client(&config, &corpus);
    let template = template(&config)?;
    let cache = response_cache(&config)?;
    let ranker =
        Ranker::new(client.as_ref(), &template, config.llm.ranker.clone()).with_cache(&cache);

    let mut echo = config.to_json();
    echo["mode"] = serde_json::to_value(mode).map_err(anyhow::Error::from)?;
    let (dir, replay) = match &args.resume {
        Some(dir) => {
            let saved: serde_json::Value = serde_json::from_slice(
                &fs::read(dir.join("config.json"))
                    .with_context(|| format!("reading {}/config.json", dir.display()))?,
            )
            .map_err(anyhow::Error::from)?;
            if saved != echo {
                return Err(Failure::Usage(format!(
                    "{} was produced with a different configuration; resume needs identical settings",
                    dir.display()
                )));
            }
            let log = dir.join("verdicts.jsonl");
            let replay = if log.exists() {
                read_verdict_log(&log)?
            } else {
                Vec::new()
            };
            (dir.clone(), replay)
        }
        None => {
            let inputs = serde_json::json!({
                "corpus": corpus.source_digest(),
                "pool": pool.digest()?,
            });
            let dir = rundir::create(
                &config.runs_dir,
                &rundir::config_hash("attribute", &echo, &inputs),
            )?;
            rundir::write_json(&dir.join("config.json"), &echo)?;
            (dir, Vec::new())
        }
    };
    pool.save(&dir.join("pool.json"))?;

    // replayed verdicts are re-emitted in order, so the log is rewritten from scratch
    let log_path = dir.join("verdicts.jsonl");
    let _ = fs::remove_file(&log_path);
    let log = VerdictLog::append(&log_path)?;
    let sink = |r: &VerdictRecord| log.write(r);
    let replayed = replay.len();
    let tournament = Tournament::new(&corpus, &ranker, config.tsa.clone())?
        .with_replay(replay)
        .with_sink(&sink);
    let outcome = tournament.run(&query, &pool, mode).map_err(|e| {
        eprintln!(
            "verdicts completed so far are kept in {}; rerun with --resume {}",
            log_path.display(),
            dir.display()
        );
        Failure::from(e)
    })?;

    fs::write(dir.join("result.json"), outcome.result.to_json_bytes()?)
        .context("writing result")?;
    fs::write(dir.join("rounds.csv"), rounds_csv(&outcome.verdicts)).context("writing rounds")?;
    let mut manifest = RunManifest::new("attribute", echo, corpus.source_digest(), config.tsa.seed);
    manifest.record_outcome(&outcome);
    manifest.pool_digest = Some(pool.digest()?);
    manifest.model = Some(client.model_tag().to_owned());
    manifest.wall_time_secs = start.elapsed().as_secs_f64();
    manifest.save(&dir.join("manifest.json"))?;

    println!(
        "attributed {} over {} candidates: {} trials, group verdicts per trial {:?}{}",
        pool.query_id,
        pool.len(),
        config.tsa.trials,
        outcome.calls_per_trial(),
        if replayed > 0 {
            format!(" ({replayed} replayed from log)")
        } else {
            String::new()
        }
    );
    for (i, r) in outcome.result.ranked.iter().take(5).enumerate() {
        println!(
            "{:>3}. {}  score {}  similarity {:.4}",
            i + 1,
            r.doc_id,
            r.score,
            r.coarse_similarity
        );
    }
    println!("run dir: {}", dir.display());
    Ok(())
}

fn read_labels(path: &Path) -> Result<BTreeMap<String, LabelLine>, Failure> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut labels = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LabelLine = serde_json::from_str(&line)
            .map_err(|e| anyhow!("{}:{}: {e}", path.display(), i + 1))?;
        labels.insert(parsed.query_id.clone(), parsed);
    }
    Ok(labels)
}

fn find_results(root: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(root)
        .with_context(|| format!("reading {}", root.display()))?
        .collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.path());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            find_results(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "result.json") {
            out.push(path);
        }
    }
    Ok(())
}

fn write_report(dir: &Path, report: &EvaluationReport) -> anyhow::Result<String> {
    fs::write(dir.join("report.json"), report.to_json_bytes()?)?;
    let table = report.render_table();
    fs::write(dir.join("report.txt"), &table)?;
    fs::write(dir.join("report.csv"), report.to_csv())?;
    Ok(table)
}

fn mean_rank_csv(curves: &[Vec<f64>]) -> String {
    let trials = curves.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = String::from("trial,mean_rank,queries\n");
    for t in 0..trials {
        let values: Vec<f64> = curves.iter().filter_map(|c| c.get(t).copied()).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        out.push_str(&format!("{},{},{}\n", t + 1, mean, values.len()));
    }
    out
}

fn evaluate(mut config: RunConfig, args: EvaluateArgs) -> CmdResult {
    if let Some(k) = args.k_list {
        config.k_list = k;
    }
    if config.k_list.is_empty() || config.k_list.contains(&0) {
        return Err(Failure::Usage(
            "k list must hold cutoffs of at least 1".into(),
        ));
    }
    let labels = read_labels(&args.labels)?;
    let mut paths = Vec::new();
    find_results(&args.results, &mut paths)?;
    if paths.is_empty() {
        return Err(Failure::Data(anyhow!(
            "no result.json files under {}",
            args.results.display()
        )));
    }

    let mut results = Vec::new();
    let mut curves = Vec::new();
    for path in &paths {
        let result: AttributionResult = serde_json::from_slice(
            &fs::read(path).with_context(|| format!("reading {}", path.display()))?,
        )
        .with_context(|| format!("parsing {}", path.display()))?;
        let label = labels.get(&result.query_id).ok_or_else(|| {
            Failure::Data(anyhow!(
                "no labels for query {} ({})",
                result.query_id,
                path.display()
            ))
        })?;
        let dir = path.parent().expect("file has a parent");
        let (pool_path, log_path) = (dir.join("pool.json"), dir.join("verdicts.jsonl"));
        if pool_path.exists() && log_path.exists() {
            let pool = FilteredPool::load(&pool_path)?;
            curves.push(mean_rank_by_trial(
                &pool,
                &read_verdict_log(&log_path)?,
                &label.relevant_ids,
            )?);
        }
        results.push(LabeledQueryResult {
            query_id: result.query_id.clone(),
            ranked_ids: result.ids().map(str::to_owned).collect(),
            relevant_ids: label.relevant_ids.clone(),
            pool_size: label.pool_size,
            same_author_count: label.relevant_ids.len(),
        });
    }
    results.sort_by(|a, b| a.query_id.cmp(&b.query_id));

    let echo = serde_json::json!({
        "results": args.results,
        "labels": args.labels,
        "k_list": config.k_list,
        "result_files": paths.len(),
    });
    let report = EvaluationReport::build(&args.system, &results, &config.k_list, echo.clone())?;
    let dir = rundir::create(
        &config.runs_dir,
        &rundir::config_hash("evaluate", &echo, &serde_json::json!(null)),
    )?;
    let table = write_report(&dir, &report)?;
    curves.retain(|c| !c.is_empty());
    if !curves.is_empty() {
        fs::write(dir.join("mean_rank.csv"), mean_rank_csv(&curves))
            .context("writing mean_rank.csv")?;
    }
    print!("{table}");
    println!("run dir: {}", dir.display());
    Ok(())
}

fn benchmark(mut config: RunConfig, args: BenchmarkArgs) -> CmdResult {
    let start = Instant::now();
    let mode = apply_tsa(&mut config, &args.tsa);
    apply_judge(&mut config, &args.judge)?;
    config.tsa.validate()?;
    if let Some(k) = args.top_k {
        config.top_k = k as usize;
    }
    if let Some(k) = args.k_list {
        config.k_list = k;
    }
    let corpus = load(&config, args.corpus.as_deref())?;
    let setting = match args.setting {
        SettingArg::Wild => Setting::InTheWild,
        SettingArg::OneToMany => Setting::OneToMany {
            distractor_authors: args.distractors,
        },
    };
    let queries = sample_queries(&corpus, args.queries, setting, args.sample_seed)?;
    let index = if args.no_filter {
        None
    } else {
        Some(build_index(&config, &corpus)?.0)
    };
    let client = client(&config, &corpus);
    let template = template(&config)?;
    let cache = response_cache(&config)?;
    let ranker =
        Ranker::new(client.as_ref(), &template, config.llm.ranker.clone()).with_cache(&cache);
    let pipeline = Pipeline {
        judge: &ranker,
        index: index.as_ref(),
        coarse_k: config.top_k,
        tsa: config.tsa.clone(),
        mode,
    };
    let outcome = run_benchmark(&corpus, &queries, &pipeline, &config.k_list)?;

    let mut echo = config.to_json();
    echo["benchmark"] = serde_json::json!({
        "setting": setting,
        "queries": args.queries,
        "sample_seed": args.sample_seed,
        "filter": !args.no_filter,
        "mode": mode,
    });
    let inputs = serde_json::json!({ "corpus": corpus.source_digest() });
    let dir = rundir::create(
        &config.runs_dir,
        &rundir::config_hash("benchmark", &echo, &inputs),
    )?;
    rundir::write_json(&dir.join("config.json"), &echo)?;
    let results_dir = dir.join("results");
    fs::create_dir(&results_dir).context("creating results dir")?;
    let mut curves = Vec::new();
    let mut log = Vec::new();
    for run in &outcome.runs {
        fs::write(
            results_dir.join(format!("{}.json", run.result.query_id)),
            run.result.to_json_bytes()?,
        )
        .context("writing result")?;
        curves.push(mean_rank_by_trial(
            &run.pool,
            &run.verdicts,
            &run.labeled.relevant_ids,
        )?);
        for v in &run.verdicts {
            serde_json::to_writer(
                &mut log,
                &serde_json::json!({ "query_id": run.result.query_id, "verdict": v }),
            )
            .map_err(anyhow::Error::from)?;
            log.push(b'\n');
        }
    }
    fs::File::create(dir.join("verdicts.jsonl"))
        .and_then(|mut f| f.write_all(&log))
        .context("writing verdicts")?;
    curves.retain(|c| !c.is_empty());
    if !curves.is_empty() {
        fs::write(dir.join("mean_rank.csv"), mean_rank_csv(&curves))
            .context("writing mean_rank.csv")?;
    }
    let table = write_report(&dir, &outcome.report)?;
    let mut manifest = RunManifest::new("benchmark", echo, corpus.source_digest(), config.tsa.seed);
    manifest.model = Some(client.model_tag().to_owned());
    manifest.embedding_provider = index.as_ref().map(|i| i.provider_tag().to_owned());
    manifest.usage = ranker.usage();
    manifest.wall_time_secs = start.elapsed().as_secs_f64();
    manifest.save(&dir.join("manifest.json"))?;

    print!("{table}");
    println!("run dir: {}", dir.display());
    Ok(())
}

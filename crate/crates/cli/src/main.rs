use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use jointrank::aggregation::{aggregate, AggregationMethod, AggregatorConfig, TournamentGraph};
use jointrank::designs::{CoverageStats, DesignFamily, DesignSpec};
use jointrank::eval::config::read_key_values;
use jointrank::eval::synthetic::{run_coverage, run_coverage_of, run_sweep, run_synthetic, SummaryRow, SweepGrid, SyntheticConfig};
use jointrank::eval::trec::{evaluate_run, read_qrels, read_run, write_run};
use jointrank::exec::Execution;
use jointrank::llm::{HttpRanker, LlmConfig};
use jointrank::model::{BlockDesign, Candidate, Ranking};
use jointrank::pipeline::{full_context_rerank, jointrank_rerank, sliding_window_rerank, BlockCount, JointRankConfig};
use jointrank::rankers::{DispatchConfig, ListwiseRanker, OracleRanker};

#[derive(Parser)]
#[command(
    name = "jointrank",
    version,
    about = "Listwise reranking over overlapping block designs",
    args_override_self = true,
    after_help = "Any subcommand accepts `--config FILE`, a file of `key = value` lines whose keys are \
                  long flag names. Flags given on the command line take precedence."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a block design and write it in text form.
    Design(DesignArgs),
    /// Coverage statistics of a design, averaged over seeded trials.
    Coverage(CoverageArgs),
    /// Aggregate a tournament graph given as `winner loser count` lines.
    Aggregate(AggregateArgs),
    /// Rerank a candidate list and write a TREC run file.
    Rerank(Box<RerankArgs>),
    /// Oracle experiment for one design point.
    Synthetic(SyntheticArgs),
    /// Oracle experiments over a grid of design points.
    Sweep(SweepArgs),
    /// nDCG@k of a run file against qrels.
    Eval(EvalArgs),
}

#[derive(Args, Clone)]
struct DesignParams {
    /// random, window, ebd, latin or triangular
    #[arg(long, default_value = "ebd")]
    family: DesignFamily,
    /// Number of items.
    #[arg(long)]
    v: usize,
    /// Block size.
    #[arg(long)]
    k: usize,
    /// Number of blocks.
    #[arg(long)]
    b: usize,
    /// Sliding window only: do not wrap the last window to the first.
    #[arg(long)]
    acyclic: bool,
}

impl DesignParams {
    fn spec(&self) -> DesignSpec {
        DesignSpec {
            cyclic: !self.acyclic,
            ..DesignSpec::new(self.family, self.v, self.k, self.b)
        }
    }
}

#[derive(Args)]
struct DesignArgs {
    #[command(flatten)]
    params: DesignParams,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CoverageArgs {
    /// Read the design from a file instead of generating it.
    #[arg(long, conflicts_with_all = ["family", "v", "k", "b"])]
    design: Option<PathBuf>,
    #[arg(long)]
    family: Option<DesignFamily>,
    #[arg(long)]
    v: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    acyclic: bool,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run trials on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Clone)]
struct AggregatorArgs {
    /// pagerank, winrate, elo, rank_centrality, bradley_terry or eigen
    #[arg(long, default_value = "pagerank")]
    method: AggregationMethod,
    #[arg(long, default_value_t = 0.85)]
    damping: f64,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    #[arg(long, default_value_t = 1000)]
    max_iterations: usize,
    /// Pseudo-count for rank_centrality, bradley_terry and eigen.
    #[arg(long, default_value_t = 0.0)]
    regularization: f64,
    #[arg(long, default_value_t = 32.0)]
    elo_k: f64,
    /// Seed of the Elo comparison order.
    #[arg(long, default_value_t = 0)]
    elo_seed: u64,
}

impl AggregatorArgs {
    fn config(&self) -> AggregatorConfig {
        AggregatorConfig {
            method: self.method,
            damping: self.damping,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            regularization: self.regularization,
            elo_k: self.elo_k,
            seed: self.elo_seed,
            ..AggregatorConfig::default()
        }
    }
}

#[derive(Args)]
struct AggregateArgs {
    /// Triplet file; stdin when omitted.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Number of items; defaults to one more than the largest index.
    #[arg(long)]
    v: Option<usize>,
    #[command(flatten)]
    aggregator: AggregatorArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Jointrank,
    Fullcontext,
    Window,
}

#[derive(Clone, Copy, ValueEnum)]
enum RankerKind {
    /// Sorts by qrels grade; needs --qrels.
    Oracle,
    /// Chat-completions endpoint.
    Http,
}

#[derive(Args)]
struct RerankArgs {
    #[arg(long, value_enum, default_value = "jointrank")]
    strategy: Strategy,
    /// TSV of `external_id<TAB>text` in first-stage order.
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    query: String,
    /// Query id written to the run file and looked up in --qrels.
    #[arg(long, default_value = "q")]
    query_id: String,
    #[arg(long, value_enum, default_value = "oracle")]
    ranker: RankerKind,
    #[arg(long)]
    qrels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "jointrank")]
    tag: String,

    // jointrank
    #[arg(long, default_value = "ebd")]
    design: DesignFamily,
    /// Block size.
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Target replication; the block count is round(r·N/k).
    #[arg(long, default_value_t = 4.0)]
    r: f64,
    /// Explicit block count, overriding --r.
    #[arg(long)]
    b: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    aggregator: AggregatorArgs,

    // window
    #[arg(long, default_value_t = 20)]
    window: usize,
    #[arg(long, default_value_t = 10)]
    step: usize,

    // dispatch
    #[arg(long, default_value_t = 16)]
    max_inflight: usize,
    #[arg(long, default_value_t = 2)]
    retries: usize,
    /// Calls slower than this count as failed.
    #[arg(long)]
    call_timeout_secs: Option<f64>,

    // http
    #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
    endpoint: String,
    #[arg(long, default_value = "gpt-4.1-mini")]
    model: String,
    /// Name of the environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 1024)]
    max_output_tokens: u32,
    #[arg(long, default_value_t = 60.0)]
    request_timeout_secs: f64,
    #[arg(long, default_value_t = 100)]
    max_block_size: usize,
}

#[derive(Args)]
struct SyntheticArgs {
    #[arg(long)]
    v: usize,
    #[arg(long, default_value = "ebd")]
    design: DesignFamily,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    b: usize,
    /// Comma-separated aggregators, or `all`.
    #[arg(long, default_value = "pagerank")]
    aggregator: String,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// nDCG cutoff.
    #[arg(long, default_value_t = 10)]
    cutoff: usize,
    #[arg(long)]
    acyclic: bool,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    v: usize,
    /// Comma-separated design families.
    #[arg(long, value_delimiter = ',', default_value = "ebd")]
    designs: Vec<DesignFamily>,
    /// Comma-separated block sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    ks: Vec<usize>,
    /// Comma-separated block counts.
    #[arg(long, value_delimiter = ',', required = true)]
    bs: Vec<usize>,
    /// Comma-separated aggregators, or `all`.
    #[arg(long, default_value = "pagerank")]
    aggregators: String,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    cutoff: usize,
    /// CSV output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Also print one line per query.
    #[arg(long)]
    per_query: bool,
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Auto
    }
}

fn parse_aggregators(list: &str) -> Result<Vec<AggregationMethod>> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(AggregationMethod::ALL.to_vec());
    }
    list.split(',')
        .map(|s| s.trim().parse::<AggregationMethod>().map_err(Into::into))
        .collect()
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_summary(rows: &[SummaryRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{}", SummaryRow::CSV_HEADER)?;
    for row in rows {
        writeln!(out, "{}", row.csv_row())?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_design(args: DesignArgs) -> Result<()> {
    let design = args.params.spec().build(args.seed)?;
    let mut out = output(args.out.as_deref())?;
    design.write_text(&mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_coverage(args: CoverageArgs) -> Result<()> {
    let stats: CoverageStats = if let Some(path) = &args.design {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let design = BlockDesign::read_text(BufReader::new(file))?;
        run_coverage_of(&design, args.trials, args.seed, execution(args.sequential))?
    } else {
        let (Some(family), Some(v), Some(k), Some(b)) = (args.family, args.v, args.k, args.b) else {
            bail!("either --design FILE or all of --family --v --k --b are required");
        };
        let params = DesignParams {
            family,
            v,
            k,
            b,
            acyclic: args.acyclic,
        };
        run_coverage(&params.spec(), args.trials, args.seed, execution(args.sequential))?
    };
    println!("{}", CoverageStats::CSV_HEADER);
    println!("{}", stats.csv_row());
    Ok(())
}

fn cmd_aggregate(args: AggregateArgs) -> Result<()> {
    let graph = match &args.graph {
        Some(p) => {
            let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            TournamentGraph::read_triplets(BufReader::new(file), args.v)?
        }
        None => TournamentGraph::read_triplets(io::stdin().lock(), args.v)?,
    };
    let cfg = args.aggregator.config();
    let agg = aggregate(&graph, &cfg, &Ranking::identity(graph.v()))?;
    if !agg.converged {
        eprintln!("warning: {} did not converge in {} iterations", cfg.method, agg.iterations);
    }
    let scores = agg.ranking.scores().expect("aggregate returns scores");
    let mut out = output(None)?;
    writeln!(out, "item,score,rank")?;
    for (rank, &item) in agg.ranking.order().iter().enumerate() {
        writeln!(out, "{item},{},{}", scores.as_slice()[item], rank + 1)?;
    }
    out.flush()?;
    Ok(())
}

fn read_candidates(path: &Path) -> Result<Vec<Candidate>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut candidates = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line.split_once('\t').unwrap_or((line.as_str(), ""));
        let id = id.trim();
        if id.is_empty() {
            bail!("{}:{}: empty candidate id", path.display(), lineno + 1);
        }
        candidates.push(Candidate::new(id, text, candidates.len()));
    }
    Ok(candidates)
}

fn cmd_rerank(args: RerankArgs) -> Result<()> {
    let candidates = read_candidates(&args.candidates)?;
    let ranker: Box<dyn ListwiseRanker> = match args.ranker {
        RankerKind::Oracle => {
            let Some(path) = &args.qrels else {
                bail!("--ranker oracle needs --qrels");
            };
            let qrels = read_qrels(path)?;
            let judged = qrels.query(&args.query_id);
            if judged.is_none() {
                log::warn!("no judgments for query {}; every candidate gets grade 0", args.query_id);
            }
            let relevance = candidates
                .iter()
                .map(|c| {
                    let grade = judged.and_then(|j| j.get(&c.external_id)).copied().unwrap_or(0);
                    (c.external_id.clone(), f64::from(grade))
                })
                .collect();
            Box::new(OracleRanker::new(relevance))
        }
        RankerKind::Http => Box::new(HttpRanker::new(LlmConfig {
            endpoint_url: args.endpoint.clone(),
            model_name: args.model.clone(),
            api_key_env_var: args.api_key_env.clone(),
            temperature: args.temperature,
            max_output_tokens: args.max_output_tokens,
            request_timeout: Duration::from_secs_f64(args.request_timeout_secs),
            max_block_size: args.max_block_size,
        })?),
    };
    let dispatch = DispatchConfig {
        max_inflight: args.max_inflight,
        per_call_timeout: args.call_timeout_secs.map(Duration::from_secs_f64),
        retries: args.retries,
    };
    let result = match args.strategy {
        Strategy::Jointrank => {
            let cfg = JointRankConfig {
                design_family: args.design,
                k: args.k,
                blocks: args.b.map_or(BlockCount::Replication(args.r), BlockCount::Explicit),
                aggregator: args.aggregator.config(),
                dispatch,
                seed: args.seed,
                ..JointRankConfig::default()
            };
            jointrank_rerank(&args.query, &candidates, &cfg, &ranker)?
        }
        Strategy::Fullcontext => full_context_rerank(&args.query, &candidates, &ranker, &dispatch)?,
        Strategy::Window => sliding_window_rerank(&args.query, &candidates, args.window, args.step, &ranker, &dispatch)?,
    };
    for w in &result.warnings {
        log::warn!("{w}");
    }
    let scores: Option<Vec<f64>> = result
        .ranking
        .scores()
        .map(|s| result.ranking.order().iter().map(|&i| s.as_slice()[i]).collect());
    write_run(&args.out, &args.query_id, &result.ranked_ids, scores.as_deref(), &args.tag)?;
    let usage = result.usage_total;
    eprintln!(
        "{} candidates, {} ranker calls, {} failed blocks, {} prompt / {} generated tokens",
        candidates.len(),
        result.inference_count,
        result.dispatch_report.failed_blocks().count(),
        usage.prompt_tokens,
        usage.generated_tokens
    );
    Ok(())
}

fn cmd_synthetic(args: SyntheticArgs) -> Result<()> {
    let mut cfg = SyntheticConfig::new(args.design, args.v, args.k, args.b);
    cfg.aggregators = parse_aggregators(&args.aggregator)?;
    cfg.trials = args.trials;
    cfg.seed = args.seed;
    cfg.cutoff = args.cutoff;
    cfg.cyclic_window = !args.acyclic;
    cfg.execution = execution(args.sequential);
    write_summary(&run_synthetic(&cfg)?, output(None)?)
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let grid = SweepGrid {
        v: args.v,
        designs: args.designs,
        ks: args.ks,
        bs: args.bs,
        aggregators: parse_aggregators(&args.aggregators)?,
        trials: args.trials,
        seed: args.seed,
        cutoff: args.cutoff,
        execution: execution(args.sequential),
    };
    write_summary(&run_sweep(&grid)?, output(args.out.as_deref())?)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let run = read_run(&args.run)?;
    let qrels = read_qrels(&args.qrels)?;
    let eval = evaluate_run(&run, &qrels, args.k)?;
    if args.per_query {
        for (qid, score) in &eval.per_query {
            println!("ndcg_cut_{}\t{qid}\t{score:.4}", args.k);
        }
    }
    println!("ndcg_cut_{}\tall\t{:.4}", args.k, eval.mean);
    Ok(())
}

/// Splices `key = value` lines from `--config FILE` into the arguments,
/// right after the subcommand, so explicit flags override them.
fn expand_config(mut args: Vec<String>) -> Result<Vec<String>> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(args);
    };
    let path = if let Some(p) = args[pos].strip_prefix("--config=") {
        let p = p.to_string();
        args.remove(pos);
        p
    } else {
        if pos + 1 >= args.len() {
            bail!("--config needs a file argument");
        }
        let p = args.remove(pos + 1);
        args.remove(pos);
        p
    };
    let pairs = read_key_values(&path).with_context(|| format!("reading config {path}"))?;
    let mut injected = Vec::new();
    for (key, value) in pairs {
        let flag = format!("--{}", key.replace('_', "-"));
        match value.as_str() {
            "true" => injected.push(flag),
            "false" => {}
            _ => {
                injected.push(flag);
                injected.push(value);
            }
        }
    }
    let at = args.len().min(2);
    args.splice(at..at, injected);
    Ok(args)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = expand_config(std::env::args().collect()).and_then(|args| {
        let cli = Cli::parse_from(args);
        match cli.command {
            Command::Design(a) => cmd_design(a),
            Command::Coverage(a) => cmd_coverage(a),
            Command::Aggregate(a) => cmd_aggregate(a),
            Command::Rerank(a) => cmd_rerank(*a),
            Command::Synthetic(a) => cmd_synthetic(a),
            Command::Sweep(a) => cmd_sweep(a),
            Command::Eval(a) => cmd_eval(a),
        }
    });
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

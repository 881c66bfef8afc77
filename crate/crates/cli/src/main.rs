//! Command-line surface for the semantic-cluster watermarking toolkit.
//!
//! Every command is deterministic given its flags: all randomness flows from
//! explicit `--seed` values, stdout carries summaries, and files carry the
//! data. Exit codes: 0 on success, 1 on usage or validation errors, 2 when
//! `oracle-verify` observes deviations above tolerance.

mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use semmark::attacks::{AttackKind, AttackSpec};
use semmark::eval::{ExperimentConfig, MetricsReport};
use semmark::toy_lm::{LmMode, LmSpec, SlmSpec};
use semmark::{
    apply_attack, build_cluster_map, detect, generate_watermarked, load_external_embeddings,
    run_experiment, run_verification, sample_unwatermarked, synth_embeddings, ClusterMap,
    FaBudget, SplitMix64, TokenId, WatermarkConfig, WatermarkKey,
};

#[derive(Parser)]
#[command(
    name = "semmark",
    about = "Semantic-cluster watermarking: embed, detect, attack, evaluate, verify",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive a watermark key from a seed and write it as a hex key file.
    Keygen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a cluster map from synthetic or external embeddings.
    EmbedBuild(EmbedBuildArgs),
    /// Generate watermarked (or plain) token sequences.
    Generate(GenerateArgs),
    /// Run replay detection over a token-stream file.
    Detect(DetectArgs),
    /// Perturb a token-stream file with a substitution or scramble attack.
    Attack(AttackArgs),
    /// Run a full experiment and report detection metrics.
    Evaluate(EvaluateArgs),
    /// Numerically verify the optimality results on random tiny instances.
    OracleVerify {
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
    },
    /// Re-run an experiment across a grid of one hyperparameter.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct EmbedBuildArgs {
    /// External embedding file ("vocab dim" header, one row per token).
    /// Without it, synthetic embeddings are generated.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    vocab: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Ground-truth component count for synthetic embeddings.
    #[arg(long, default_value_t = 4)]
    clusters: usize,
    #[arg(long, default_value_t = 0.15)]
    spread: f64,
    #[arg(long, default_value_t = 2)]
    embed_seed: u64,
    /// Number of clusters for the semantic mapping.
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    kmeans_seed: u64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct LmArgs {
    #[arg(long, default_value_t = 1)]
    lm_order: usize,
    #[arg(long, default_value_t = 0.5)]
    lm_concentration: f64,
    #[arg(long, default_value_t = 1)]
    lm_seed: u64,
    /// token_markov or cluster_markov.
    #[arg(long, default_value = "token_markov")]
    lm_mode: String,
}

impl LmArgs {
    fn spec(&self, vocab_size: usize) -> Result<LmSpec> {
        let mode = match self.lm_mode.as_str() {
            "token_markov" => LmMode::TokenMarkov,
            "cluster_markov" => LmMode::ClusterMarkov,
            other => bail!("unknown LM mode {other:?} (token_markov | cluster_markov)"),
        };
        Ok(LmSpec {
            vocab_size,
            order: self.lm_order,
            concentration: self.lm_concentration,
            seed: self.lm_seed,
            mode,
        })
    }
}

#[derive(Args)]
struct WatermarkArgs {
    #[arg(long, default_value_t = 0.4)]
    alpha: f64,
    #[arg(long, default_value_t = 3)]
    window: usize,
    #[arg(long, default_value_t = 3)]
    precursor: usize,
}

impl WatermarkArgs {
    fn config(&self) -> Result<WatermarkConfig> {
        Ok(WatermarkConfig {
            alpha: FaBudget::new(self.alpha)?,
            window: self.window,
            precursor_len: self.precursor,
        })
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    cluster_map: PathBuf,
    #[arg(long)]
    key_file: PathBuf,
    #[command(flatten)]
    watermark: WatermarkArgs,
    #[command(flatten)]
    lm: LmArgs,
    /// Tokens to generate per sequence.
    #[arg(long, default_value_t = 200)]
    length: usize,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Master seed; per-sequence token seeds fan out of it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional prompt token ids, space separated.
    #[arg(long)]
    prompt: Option<String>,
    /// Write prompt and continuation together (mixed-text detection mode).
    #[arg(long, default_value_t = false)]
    include_prompt: bool,
    /// Skip watermarking and sample from the plain model.
    #[arg(long, default_value_t = false)]
    unwatermarked: bool,
    #[arg(long)]
    out: PathBuf,
    /// Optional JSONL audit file with per-step traces and seeds.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    cluster_map: PathBuf,
    #[arg(long)]
    key_file: PathBuf,
    #[command(flatten)]
    watermark: WatermarkArgs,
    #[command(flatten)]
    lm: LmArgs,
    /// Surrogate mix toward the uniform distribution.
    #[arg(long, default_value_t = 0.1)]
    slm_mix: f64,
    /// Token-stream file to score.
    #[arg(long = "in")]
    input: PathBuf,
    /// Calibration file of null scores; without it, verdicts use the
    /// conservative binomial p-value bound.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Comma-separated FPR targets.
    #[arg(long, default_value = "0.01,0.1")]
    fpr: String,
    /// Optional JSONL output with the full per-position reports.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    cluster_map: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// within_cluster_replace, cross_cluster_replace, or window_scramble.
    #[arg(long)]
    attack: String,
    #[arg(long, default_value_t = 0.5)]
    rate: f64,
    /// Block length for window_scramble.
    #[arg(long, default_value_t = 3)]
    block_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Experiment config JSON; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    precursor: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    slm_mix: Option<f64>,
    /// Attack rate applied to both substitution attacks; none disables them.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long)]
    out_json: Option<PathBuf>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// k, window, or rate.
    #[arg(long)]
    axis: String,
    /// Comma-separated grid; defaults per axis.
    #[arg(long)]
    values: Option<String>,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long)]
    out_csv: PathBuf,
}

fn parse_fpr_list(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|s| {
            let f: f64 = s.trim().parse().with_context(|| format!("bad FPR {s:?}"))?;
            if !(f > 0.0 && f <= 1.0) {
                bail!("FPR {f} outside (0, 1]");
            }
            Ok(f)
        })
        .collect()
}

fn parse_prompt(prompt: &Option<String>) -> Result<Vec<TokenId>> {
    match prompt {
        None => Ok(Vec::new()),
        Some(text) => io::parse_token_line(text),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("open {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parse {}", path.display()))
        }
    }
}

fn with_workers<T: Send>(workers: usize, body: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(body());
    }
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("build worker pool")?
        .install(body))
}

fn cmd_keygen(seed: u64, out: &PathBuf) -> Result<()> {
    let key = WatermarkKey::from_seed(seed);
    std::fs::write(out, format!("{}\n", key.to_hex()))
        .with_context(|| format!("write {}", out.display()))?;
    println!("wrote key {} (seed {seed})", out.display());
    Ok(())
}

fn cmd_embed_build(args: &EmbedBuildArgs) -> Result<()> {
    let emb = match &args.embeddings {
        Some(path) => load_external_embeddings(path)?,
        None => {
            synth_embeddings(args.vocab, args.dim, args.clusters, args.spread, args.embed_seed)?
        }
    };
    let map = build_cluster_map(&emb, args.k, args.kmeans_seed, args.max_iters, args.tol)?;
    map.save(&args.out)?;
    let sizes: Vec<usize> = (0..map.k()).map(|c| map.members(c).len()).collect();
    println!(
        "wrote cluster map {} (vocab {}, K {}, cluster sizes {:?})",
        args.out.display(),
        map.vocab_size(),
        map.k(),
        sizes
    );
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let map = ClusterMap::load(&args.cluster_map)?;
    let key = io::read_key(&args.key_file)?;
    let config = args.watermark.config()?;
    let lm = args.lm.spec(map.vocab_size())?;
    let prompt = parse_prompt(&args.prompt)?;
    let needs_map = matches!(lm.mode, LmMode::ClusterMarkov);

    let mut fan = SplitMix64::new(args.seed);
    let mut streams = Vec::with_capacity(args.count);
    let mut records_out: Option<std::fs::File> = args
        .records
        .as_ref()
        .map(std::fs::File::create)
        .transpose()
        .context("create records file")?;

    for _ in 0..args.count {
        let seq_seed = fan.next_u64();
        let continuation = if args.unwatermarked {
            sample_unwatermarked(
                &lm,
                needs_map.then_some(&map),
                &prompt,
                args.length,
                seq_seed,
            )?
        } else {
            let record =
                generate_watermarked(&lm, &map, &key, &config, &prompt, args.length, seq_seed)?;
            if let Some(file) = records_out.as_mut() {
                use std::io::Write;
                writeln!(file, "{}", record.to_json_line())?;
            }
            record.tokens
        };
        let mut line = Vec::new();
        if args.include_prompt {
            line.extend_from_slice(&prompt);
        }
        line.extend(continuation);
        streams.push(line);
    }
    io::write_streams(&args.out, &streams)?;
    println!(
        "wrote {} sequence(s) of length {} to {}{}",
        args.count,
        args.length,
        args.out.display(),
        if args.unwatermarked { " (unwatermarked)" } else { "" }
    );
    Ok(())
}

fn cmd_detect(args: &DetectArgs) -> Result<()> {
    let map = ClusterMap::load(&args.cluster_map)?;
    let key = io::read_key(&args.key_file)?;
    let config = args.watermark.config()?;
    let slm = SlmSpec {
        base: args.lm.spec(map.vocab_size())?,
        mix_to_uniform: args.slm_mix,
    };
    let fprs = parse_fpr_list(&args.fpr)?;
    let calibration = args
        .calibration
        .as_ref()
        .map(|p| io::read_scores(p))
        .transpose()?;
    let streams = io::read_streams(&args.input)?;

    let mut out_file: Option<std::fs::File> = args
        .out
        .as_ref()
        .map(std::fs::File::create)
        .transpose()
        .context("create report file")?;

    for (i, text) in streams.iter().enumerate() {
        let mut report = detect(text, &slm, &map, &key, &config)?;
        match &calibration {
            Some(h0) => semmark::apply_verdicts(&mut report, h0, &fprs)?,
            None => {
                // conservative rule: flag when the binomial bound undercuts
                // the target false-alarm rate
                report.verdict_at = fprs
                    .iter()
                    .map(|&f| (f, report.p_value_bound <= f))
                    .collect();
            }
        }
        let verdicts: Vec<String> = report
            .verdict_at
            .iter()
            .map(|(f, v)| format!("verdict@{f}={v}"))
            .collect();
        println!(
            "seq={i} n={} S={} score={:.4} p_bound={:.3e} {}",
            report.scored_positions,
            report.matches,
            report.normalized_score,
            report.p_value_bound,
            verdicts.join(" ")
        );
        if let Some(file) = out_file.as_mut() {
            use std::io::Write;
            writeln!(file, "{}", report.to_json_line())?;
        }
    }
    Ok(())
}

fn cmd_attack(args: &AttackArgs) -> Result<()> {
    let map = ClusterMap::load(&args.cluster_map)?;
    let kind = match args.attack.as_str() {
        "within_cluster_replace" => AttackKind::WithinClusterReplace,
        "cross_cluster_replace" => AttackKind::CrossClusterReplace,
        "window_scramble" => AttackKind::WindowScramble {
            block_len: args.block_len,
        },
        other => bail!("unknown attack {other:?}"),
    };
    let streams = io::read_streams(&args.input)?;
    let mut fan = SplitMix64::new(args.seed);
    let attacked: Vec<Vec<TokenId>> = streams
        .iter()
        .map(|text| {
            let spec = AttackSpec {
                kind,
                rate: args.rate,
                rng_seed: fan.next_u64(),
            };
            Ok(apply_attack(text, &spec, &map)?)
        })
        .collect::<Result<_>>()?;
    io::write_streams(&args.out, &attacked)?;
    println!(
        "attacked {} sequence(s) with {} rate {} -> {}",
        attacked.len(),
        kind.label(),
        args.rate,
        args.out.display()
    );
    Ok(())
}

fn apply_overrides(cfg: &mut ExperimentConfig, args: &EvaluateArgs) -> Result<()> {
    if let Some(alpha) = args.alpha {
        cfg.watermark.alpha = FaBudget::new(alpha)?;
    }
    if let Some(window) = args.window {
        cfg.watermark.window = window;
    }
    if let Some(precursor) = args.precursor {
        cfg.watermark.precursor_len = precursor;
    }
    if let Some(k) = args.k {
        cfg.map.k = k;
    }
    if let Some(length) = args.length {
        cfg.t_gen = length;
    }
    if let Some(pairs) = args.pairs {
        cfg.n_pairs = pairs;
    }
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(mix) = args.slm_mix {
        cfg.slm.mix_to_uniform = mix;
    }
    if let Some(rate) = args.rate {
        cfg.attacks = vec![
            AttackSpec {
                kind: AttackKind::WithinClusterReplace,
                rate,
                rng_seed: 0,
            },
            AttackSpec {
                kind: AttackKind::CrossClusterReplace,
                rate,
                rng_seed: 0,
            },
        ];
    }
    Ok(())
}

fn print_report(report: &MetricsReport) {
    for s in &report.settings {
        let tprs: Vec<String> = s
            .tpr_at
            .iter()
            .map(|(f, t)| format!("tpr@{f}={t:.4}"))
            .collect();
        println!(
            "{}: auroc={:.4} {} h1={:.4}±{:.4} h0={:.4}±{:.4}",
            s.attack,
            s.auroc,
            tprs.join(" "),
            s.h1_mean,
            s.h1_sd,
            s.h0_mean,
            s.h0_sd
        );
    }
    if let Some(nll) = &report.nll {
        println!(
            "nll: watermarked={:.4} unwatermarked={:.4} ks={:.5} p={:.4} ({} tokens/side)",
            nll.watermarked_mean,
            nll.unwatermarked_mean,
            nll.ks_statistic,
            nll.ks_p_value,
            nll.tokens_per_side
        );
    }
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    apply_overrides(&mut cfg, args)?;
    let report = with_workers(args.workers, || run_experiment(&cfg))??;
    print_report(&report);
    if let Some(path) = &args.out_json {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = &args.out_csv {
        std::fs::write(path, report.to_csv())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let base = load_config(&args.config)?;
    let values: Vec<f64> = match (&args.values, args.axis.as_str()) {
        (Some(list), _) => list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .with_context(|| format!("bad value {s:?}"))
            })
            .collect::<Result<_>>()?,
        (None, "k") => vec![2.0, 3.0, 4.0, 8.0, 16.0, 64.0, 256.0],
        (None, "window") => vec![1.0, 2.0, 3.0, 5.0, 8.0],
        (None, "rate") => vec![0.3, 0.5],
        (None, other) => bail!("unknown sweep axis {other:?} (k | window | rate)"),
    };

    let mut csv = String::from("axis,value,setting,metric,value\n");
    for &value in &values {
        let mut cfg = base.clone();
        match args.axis.as_str() {
            "k" => cfg.map.k = value as usize,
            "window" => cfg.watermark.window = value as usize,
            "rate" => {
                if cfg.attacks.is_empty() {
                    cfg.attacks = vec![
                        AttackSpec {
                            kind: AttackKind::WithinClusterReplace,
                            rate: value,
                            rng_seed: 0,
                        },
                        AttackSpec {
                            kind: AttackKind::CrossClusterReplace,
                            rate: value,
                            rng_seed: 0,
                        },
                    ];
                } else {
                    for attack in cfg.attacks.iter_mut() {
                        attack.rate = value;
                    }
                }
            }
            other => bail!("unknown sweep axis {other:?} (k | window | rate)"),
        }
        let report = with_workers(args.workers, || run_experiment(&cfg))??;
        println!("--- {} = {value}", args.axis);
        print_report(&report);
        for line in report.to_csv().lines().skip(1) {
            csv.push_str(&format!("{},{value},{line}\n", args.axis));
        }
    }
    std::fs::write(&args.out_csv, csv)?;
    println!("wrote {}", args.out_csv.display());
    Ok(())
}

/// Returns the exit code for oracle verification: 0 in tolerance, 2 over.
fn cmd_oracle_verify(instances: usize, seed: u64, tolerance: f64) -> Result<u8> {
    let report = run_verification(instances, seed)?;
    println!(
        "instances={} mixture_dev={:.3e} search_dev={:.3e} fa_excess={:.3e} md_dev={:.3e} tolerance={tolerance:.1e}",
        report.instances_run,
        report.max_mixture_deviation,
        report.max_search_deviation,
        report.max_fa_excess,
        report.max_md_deviation
    );
    if report.within(tolerance) {
        println!("verification passed");
        Ok(0)
    } else {
        println!("verification FAILED: deviation above tolerance");
        Ok(2)
    }
}

fn run(cli: Cli) -> Result<u8> {
    match &cli.command {
        Command::Keygen { seed, out } => cmd_keygen(*seed, out).map(|()| 0),
        Command::EmbedBuild(args) => cmd_embed_build(args).map(|()| 0),
        Command::Generate(args) => cmd_generate(args).map(|()| 0),
        Command::Detect(args) => cmd_detect(args).map(|()| 0),
        Command::Attack(args) => cmd_attack(args).map(|()| 0),
        Command::Evaluate(args) => cmd_evaluate(args).map(|()| 0),
        Command::OracleVerify {
            instances,
            seed,
            tolerance,
        } => cmd_oracle_verify(*instances, *seed, *tolerance),
        Command::Sweep(args) => cmd_sweep(args).map(|()| 0),
    }
}

fn main() -> ExitCode {
    // default SIGPIPE disposition so `semmark ... | head` ends quietly
    // instead of panicking on the closed pipe
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap prints its own usage text; normalize every parse problem
            // to exit code 1 (help/version stay 0 when explicitly requested)
            let is_help = matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = err.print();
            return if is_help {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use repquant::featureio::{parse_label_text, read_feature_file, read_label_map, read_manifest, FrameLabels};
use repquant::metrics::{distortion_report, ngram_joint_counts, pnmi_n, Utilization};
use repquant::quantizer::{read_token_file, write_token_file, DEFAULT_KMEANS_TOL};
use repquant::trainer::{
    load_checkpoint, save_checkpoint, tokenize_sequence, train, train_kmeans_manifest,
    TrainingConfig, CHECKPOINT_FILE,
};

const SEED_ENV: &str = "REPQUANT_SEED";
const TOKEN_EXT: &str = "rpct";

#[derive(Parser)]
#[command(name = "repquant", version, about = "Discrete tokens from speech representations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a codec tokenizer.
    Train(TrainArgs),
    /// Fit the k-means baseline tokenizer.
    KmeansTrain(KmeansArgs),
    /// Tokenize every feature file of a manifest.
    Tokenize(TokenizeArgs),
    /// PNMI_n of token files against frame labels.
    EvalPnmi(PnmiArgs),
    /// Corpus reconstruction and quantization distortion of a checkpoint.
    Report(ReportArgs),
    /// Print a checkpoint's architecture and codebook statistics.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// `key = value` file; flags below take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the checkpoint and loss log.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lambda_r: Option<f64>,
    #[arg(long)]
    lambda_q: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    adam_eps: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    segment_len: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    rvq_layers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dead_code_threshold: Option<f64>,
    #[arg(long)]
    kernel: Option<usize>,
    #[arg(long)]
    enc_blocks: Option<usize>,
    #[arg(long)]
    dec_blocks: Option<usize>,
}

#[derive(Args)]
struct KmeansArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    clusters: usize,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the checkpoint.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TokenizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PnmiArgs {
    #[arg(long)]
    tokens_dir: PathBuf,
    /// Label file with one `utterance_id label label ...` line per utterance.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    max_n: u64,
    /// Number of distinct labels; defaults to the largest label plus one.
    #[arg(long)]
    alphabet: Option<u32>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .with_context(|| format!("{SEED_ENV}={v:?} is not a seed")),
        Err(_) => Ok(None),
    }
}

fn training_config(args: &TrainArgs) -> Result<TrainingConfig> {
    let mut cfg = TrainingConfig::default();
    let mut seeded = false;
    if let Some(path) = &args.config {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        seeded = cfg.apply_text(&text)?.iter().any(|k| k == "seed");
    }
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut cfg.lambda_r, args.lambda_r);
    set(&mut cfg.lambda_q, args.lambda_q);
    set(&mut cfg.gamma, args.gamma);
    set(&mut cfg.lr, args.lr);
    set(&mut cfg.beta1, args.beta1);
    set(&mut cfg.beta2, args.beta2);
    set(&mut cfg.adam_eps, args.adam_eps);
    set(&mut cfg.dead_code_threshold, args.dead_code_threshold);
    cfg.steps = args.steps.unwrap_or(cfg.steps);
    cfg.batch_size = args.batch_size.unwrap_or(cfg.batch_size);
    cfg.segment_len = args.segment_len.unwrap_or(cfg.segment_len);
    cfg.clusters = args.clusters.unwrap_or(cfg.clusters);
    cfg.rvq_layers = args.rvq_layers.unwrap_or(cfg.rvq_layers);
    cfg.kernel = args.kernel.unwrap_or(cfg.kernel);
    cfg.enc_blocks = args.enc_blocks.unwrap_or(cfg.enc_blocks);
    cfg.dec_blocks = args.dec_blocks.unwrap_or(cfg.dec_blocks);
    cfg.seed = match args.seed {
        Some(s) => s,
        None if seeded => cfg.seed,
        None => env_seed()?.unwrap_or(0),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> Result<bool> {
    let cfg = training_config(&args)?;
    let ckpt = train(&args.manifest, &cfg, &args.out)?;
    let used = args.out.join("config.txt");
    fs::write(&used, cfg.to_text()).with_context(|| format!("writing {}", used.display()))?;
    eprintln!("wrote {}", ckpt.display());
    Ok(true)
}

fn cmd_kmeans_train(args: KmeansArgs) -> Result<bool> {
    let seed = match args.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let (state, fit) =
        train_kmeans_manifest(&args.manifest, args.clusters, args.iters, DEFAULT_KMEANS_TOL, seed)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let ckpt = args.out.join(CHECKPOINT_FILE);
    save_checkpoint(&state, &ckpt)?;
    let log = args.out.join("kmeans.tsv");
    let lines: String = fit
        .history
        .iter()
        .enumerate()
        .map(|(i, d)| format!("{}\t{d}\n", i + 1))
        .collect();
    fs::write(&log, lines).with_context(|| format!("writing {}", log.display()))?;
    println!("distortion\t-\t{}", fit.distortion);
    eprintln!("wrote {}", ckpt.display());
    Ok(true)
}

fn token_path(out_dir: &Path, features: &Path) -> PathBuf {
    let stem = features.file_stem().unwrap_or(features.as_os_str());
    out_dir.join(stem).with_extension(TOKEN_EXT)
}

fn cmd_tokenize(args: TokenizeArgs) -> Result<bool> {
    let entries = read_manifest(&args.manifest)?;
    if entries.is_empty() {
        eprintln!("warning: {} lists no feature files", args.manifest.display());
        return Ok(true);
    }
    let model = load_checkpoint(&args.checkpoint)?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mut ok = true;
    for entry in &entries {
        let result = read_feature_file(&entry.features).and_then(|seq| {
            let tokens = tokenize_sequence(&model, &seq.frames)?;
            write_token_file(token_path(&args.out_dir, &entry.features), &tokens)
        });
        if let Err(e) = result {
            eprintln!("error: {}: {e}", entry.features.display());
            ok = false;
        }
    }
    Ok(ok)
}

fn read_tokens_dir(dir: &Path) -> Result<Vec<(String, Vec<u32>)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .with_context(|| format!("reading {}", dir.display()))?;
    paths.retain(|p| p.extension().is_some_and(|e| e == TOKEN_EXT));
    paths.sort();
    if paths.is_empty() {
        bail!("no .{TOKEN_EXT} files in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let tokens = read_token_file(p)?;
            Ok((id, tokens.layer(0).to_vec()))
        })
        .collect()
}

fn cmd_eval_pnmi(args: PnmiArgs) -> Result<bool> {
    let alphabet = match args.alphabet {
        Some(a) => a,
        None => {
            let text = fs::read_to_string(&args.labels)
                .with_context(|| format!("reading {}", args.labels.display()))?;
            let raw = parse_label_text(&text)?;
            raw.values().flatten().max().map_or(1, |m| m + 1)
        }
    };
    let mut labels: BTreeMap<String, FrameLabels> = read_label_map(&args.labels, alphabet)?;
    let utterances = read_tokens_dir(&args.tokens_dir)?;
    let mut pairs = Vec::with_capacity(utterances.len());
    for (id, tokens) in utterances {
        let Some(l) = labels.remove(&id) else {
            bail!("utterance {id}: no labels in {}", args.labels.display());
        };
        if l.len() != tokens.len() {
            bail!("utterance {id}: {} tokens against {} labels", tokens.len(), l.len());
        }
        pairs.push((tokens, l));
    }
    let shortest = pairs.iter().map(|(t, _)| t.len()).min().unwrap_or(0);
    for n in 1..=args.max_n as usize {
        if n > shortest {
            println!("pnmi\t{n}\tunavailable");
            continue;
        }
        let counts = ngram_joint_counts(pairs.iter().map(|(t, l)| (t.as_slice(), l)), n)?;
        println!("pnmi\t{n}\t{}", pnmi_n(&counts)?);
    }
    Ok(true)
}

fn cmd_report(args: ReportArgs) -> Result<bool> {
    let report = distortion_report(&args.checkpoint, &args.manifest)?;
    println!("l_r\t-\t{}", report.l_r);
    println!("l_q\t-\t{}", report.l_q);
    println!("frames\t-\t{}", report.frames);
    Ok(true)
}

fn cmd_inspect(args: InspectArgs) -> Result<bool> {
    let model = load_checkpoint(&args.checkpoint)?;
    let arch = model.codec.arch;
    let floor = TrainingConfig::default().dead_code_threshold;
    let mut lines = vec![
        format!("dim\t{}", arch.dim),
        format!("kernel\t{}", arch.kernel),
        format!("enc_blocks\t{}", arch.enc_blocks),
        format!("dec_blocks\t{}", arch.dec_blocks),
        format!("clusters\t{}", arch.clusters),
        format!("rvq_layers\t{}", arch.rvq_layers),
        format!("step\t{}", model.step),
        format!("seed\t{}", model.seed),
        format!("encoder_convs\t{}", arch.encoder_convs()),
        format!("decoder_convs\t{}", arch.decoder_convs()),
        format!("convs\t{}", arch.conv_count()),
        format!("params\t{}", model.codec.param_count()),
    ];
    for (i, layer) in model.quantizer.layers().iter().enumerate() {
        let weights: Vec<f64> = layer.ema_counts().iter().map(|&c| c as f64).collect();
        let util = Utilization::from_weights(&weights, floor)?;
        lines.push(format!("utilization\t{i}\t{}", util.fraction_used));
        lines.push(format!("perplexity\t{i}\t{}", util.perplexity));
    }
    println!("{}", lines.join("\n"));
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::KmeansTrain(a) => cmd_kmeans_train(a),
        Command::Tokenize(a) => cmd_tokenize(a),
        Command::EvalPnmi(a) => cmd_eval_pnmi(a),
        Command::Report(a) => cmd_report(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

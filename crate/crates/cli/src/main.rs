use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fcnr_core::codec::{Codec, CoderBackend, FcnrBitstream, ImagePair};
use fcnr_core::data::manifest::MANIFEST_FILE;
use fcnr_core::data::{generate_corpus, CorpusConfig, Manifest, Raster, SplitFilter};
use fcnr_core::entropy::coderjob::{CoderJob, CoderReply};
use fcnr_core::eval::{ablate, evaluate_corpus, rd_sweep, EvalReport};
use fcnr_core::networks::{FcnrModel, VisParams};
use fcnr_core::training::{TrainConfig, TrainOutputs, Trainer};

#[derive(Parser)]
#[command(name = "fcnr", version, about = "Learned compression of visualization image pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic corpus and its manifest.
    GenData {
        /// Corpus TOML; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the training split of a corpus.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Compress a corpus split or a single pair into .fcnr files.
    Compress(CompressArgs),
    /// Decompress one .fcnr file or a directory of them into PNGs.
    Decompress {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "reference")]
        coder: String,
    },
    /// Compress and decompress a corpus split and report PSNR, BPP and timings.
    Eval {
        #[arg(long, required_unless_present = "untrained")]
        weights: Option<PathBuf>,
        /// Evaluate freshly initialized weights built from --config.
        #[arg(long, conflicts_with = "weights")]
        untrained: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "all")]
        split: String,
        #[arg(long, default_value = "reference")]
        coder: String,
        /// Directory for report.json, report.txt and images.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model per lambda and trace the rate–distortion curve.
    RdSweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1")]
        lambdas: Vec<f64>,
        #[arg(long, default_value = "all")]
        split: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "reference")]
        coder: String,
    },
    /// Train and compare the full model against its three ablations.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "all")]
        split: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "reference")]
        coder: String,
    },
    /// Run one serialized coder job from stdin with the reference coder.
    #[command(hide = true)]
    CoderJob,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Corpus directory; every pair of --split is compressed into --out.
    #[arg(long, conflicts_with_all = ["left", "right"])]
    data: Option<PathBuf>,
    #[arg(long, default_value = "all")]
    split: String,
    #[arg(long, requires_all = ["right", "vis_left", "vis_right"])]
    left: Option<PathBuf>,
    #[arg(long)]
    right: Option<PathBuf>,
    /// Normalized `t,theta,phi` of the left view.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    vis_left: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    vis_right: Option<Vec<f64>>,
    /// Output file for a single pair, directory for a corpus.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "reference")]
    coder: String,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { config, seed, out } => gen_data(config, seed, &out),
        Command::Train {
            config,
            data,
            out,
            seed,
            resume,
        } => train(config, &data, &out, seed, resume),
        Command::Compress(args) => compress(args),
        Command::Decompress {
            weights,
            input,
            out,
            coder,
        } => decompress(&weights, &input, &out, &coder),
        Command::Eval {
            weights,
            untrained,
            config,
            seed,
            data,
            split,
            coder,
            out,
        } => eval(weights, untrained, config, seed, &data, &split, &coder, out),
        Command::RdSweep {
            config,
            data,
            out,
            lambdas,
            split,
            seed,
            coder,
        } => {
            let cfg = train_config(config, seed)?;
            let table = rd_sweep(&lambdas, &cfg, &manifest(&data)?, &out, coder_backend(&coder)?, split.parse()?)?;
            print!("{}", table.to_text());
            Ok(())
        }
        Command::Ablate {
            config,
            data,
            out,
            split,
            seed,
            coder,
        } => {
            let cfg = train_config(config, seed)?;
            let table = ablate(&cfg, &manifest(&data)?, &out, coder_backend(&coder)?, split.parse()?)?;
            print!("{}", table.to_text());
            Ok(())
        }
        Command::CoderJob => coder_job(),
    }
}

fn coder_backend(name: &str) -> Result<CoderBackend> {
    Ok(CoderBackend::from_name(name)?)
}

fn manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    Manifest::read_csv(&path).with_context(|| format!("reading {}", path.display()))
}

fn train_config(path: Option<PathBuf>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(&p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn gen_data(config: Option<PathBuf>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = match config {
        Some(p) => CorpusConfig::load(&p)?,
        None => CorpusConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let m = generate_corpus(&cfg, out)?;
    let pairs = m.pairs()?;
    let train = pairs.iter().filter(|p| SplitFilter::Train.admits(p.split())).count();
    println!(
        "{} images, {} pairs ({} train, {} heldout) in {}",
        m.records.len(),
        pairs.len(),
        train,
        pairs.len() - train,
        out.display()
    );
    Ok(())
}

fn train(config: Option<PathBuf>, data: &Path, out: &Path, seed: Option<u64>, resume: Option<PathBuf>) -> Result<()> {
    let cfg = train_config(config, seed)?;
    let m = manifest(data)?;
    let pairs = fcnr_core::eval::load_pairs(&m, SplitFilter::Train)?;
    if pairs.is_empty() {
        bail!("the corpus has no training pairs");
    }
    let mut trainer = match resume {
        Some(ckpt) => Trainer::resume(cfg, &pairs, &ckpt)?,
        None => Trainer::new(cfg, &pairs)?,
    };
    log::info!(
        "{} training pairs, {} steps, {} parameters",
        pairs.len(),
        trainer.total_steps(),
        trainer.model().store().parameter_count()
    );
    let outputs = TrainOutputs::new(out);
    let records = trainer.run(Some(&outputs))?;
    if let Some(last) = records.last() {
        println!(
            "step {}: {:.1} bits ({:.4} bpp), L_D {:.6}, PSNR {:.2} dB",
            last.step, last.rate_bits, last.bpp, last.distortion, last.psnr
        );
    }
    println!("weights written to {}", outputs.weights().display());
    Ok(())
}

fn vis(values: &[f64]) -> Result<VisParams> {
    match values {
        [t, theta, phi] => Ok(VisParams::new(*t, *theta, *phi)?),
        _ => bail!("visualization parameters must be t,theta,phi"),
    }
}

fn compress(args: CompressArgs) -> Result<()> {
    let model = FcnrModel::load(&args.weights)?;
    let codec = Codec::new(&model, coder_backend(&args.coder)?)?;
    if let Some(data) = &args.data {
        let m = manifest(data)?;
        let filter: SplitFilter = args.split.parse()?;
        std::fs::create_dir_all(&args.out)?;
        let mut streams = Vec::new();
        for rec in m.pairs_in(filter)? {
            let pair = m.load_pair(&rec)?;
            let encoded = codec.compress(&pair)?;
            let path = args.out.join(format!("pair_{:06}.fcnr", rec.pair_id));
            std::fs::write(&path, encoded.bitstream.to_bytes()).with_context(|| format!("writing {}", path.display()))?;
            streams.push(encoded.bitstream);
        }
        if streams.is_empty() {
            bail!("no pairs in split {}", args.split);
        }
        println!(
            "{} pairs compressed into {} at {:.4} bpp",
            streams.len(),
            args.out.display(),
            fcnr_core::eval::bpp(&streams)?
        );
        return Ok(());
    }
    let (Some(left), Some(right), Some(vl), Some(vr)) = (&args.left, &args.right, &args.vis_left, &args.vis_right)
    else {
        bail!("pass either --data or --left/--right with --vis-left/--vis-right");
    };
    let pair = ImagePair {
        left: Raster::load_png(left)?,
        right: Raster::load_png(right)?,
        vis: [vis(vl)?, vis(vr)?],
        pair_id: 0,
    };
    let encoded = codec.compress(&pair)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&args.out, encoded.bitstream.to_bytes())?;
    println!("{} at {:.4} bpp", args.out.display(), encoded.bitstream.bpp());
    Ok(())
}

fn decompress(weights: &Path, input: &Path, out: &Path, coder: &str) -> Result<()> {
    let model = FcnrModel::load(weights)?;
    let codec = Codec::new(&model, coder_backend(coder)?)?;
    let files: Vec<PathBuf> = if input.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(input)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        v.retain(|p| p.extension().is_some_and(|e| e == "fcnr"));
        v.sort();
        v
    } else {
        vec![input.to_path_buf()]
    };
    std::fs::create_dir_all(out)?;
    for file in &files {
        let bytes = std::fs::read(file).with_context(|| format!("reading {}", file.display()))?;
        let bitstream = FcnrBitstream::parse(&bytes).with_context(|| file.display().to_string())?;
        let [l, r] = codec.decompress(&bitstream).with_context(|| file.display().to_string())?;
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("pair");
        l.save_png(&out.join(format!("{stem}_l.png")))?;
        r.save_png(&out.join(format!("{stem}_r.png")))?;
    }
    println!("{} pairs decompressed into {}", files.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    weights: Option<PathBuf>,
    untrained: bool,
    config: Option<PathBuf>,
    seed: Option<u64>,
    data: &Path,
    split: &str,
    coder: &str,
    out: Option<PathBuf>,
) -> Result<()> {
    let (model, label) = match weights {
        Some(w) => (FcnrModel::load(&w)?, w.display().to_string()),
        None if untrained => {
            let cfg = train_config(config, seed)?;
            (FcnrModel::new(cfg.model, cfg.seed)?, "untrained".to_string())
        }
        None => bail!("pass --weights or --untrained"),
    };
    let report: EvalReport = evaluate_corpus(&manifest(data)?, &model, &label, coder_backend(coder)?, split.parse()?)?;
    print!("{}", report.to_text());
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("report.json"), report.to_json()?)?;
        std::fs::write(dir.join("report.txt"), report.to_text())?;
        report.write_images_csv(&dir.join("images.csv"))?;
    }
    if !report.errors.is_empty() {
        bail!("{} pairs failed", report.errors.len());
    }
    Ok(())
}

fn coder_job() -> Result<()> {
    let mut input = Vec::new();
    std::io::stdin().read_to_end(&mut input)?;
    let reply = match CoderJob::parse(&input) {
        Ok(job) => job.run_reference(),
        Err(e) => CoderReply::Failed(e.to_string()),
    };
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(&reply.to_bytes())?;
    stdout.flush()?;
    Ok(())
}

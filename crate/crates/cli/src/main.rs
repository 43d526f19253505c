use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wecodec::codec::{
    ms_ssim, ms_ssim_db, pad_replicate, psnr, read_image, report_subbands, write_image, Codec, Model, ModelConfig, Profile,
    LAMBDAS_MSE,
};
use wecodec::train::{load_crops, synthetic_crops, train, LrSchedule, TraceRow, TrainConfig, TrainStage};
use wecodec::wavelet::{dwt2d_forward, dwt2d_inverse, dwt3d_forward, dwt3d_inverse, subband_stats, WaveletKind};
use wecodec::{Error, Result, Tensor3};

#[derive(Parser)]
#[command(name = "wecodec", version, about = "Wavelet-domain learned image codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a PNG/PPM image into a bitstream.
    Compress {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Fail unless the checkpoint has this profile.
        #[arg(long)]
        profile: Option<Profile>,
    },
    /// Decode a bitstream into a PNG/PPM image.
    Decompress {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// PSNR (and optionally MS-SSIM) between two images.
    Eval {
        #[arg(short)]
        a: PathBuf,
        #[arg(short)]
        b: PathBuf,
        #[arg(long)]
        msssim: bool,
    },
    /// Wavelet-decompose an image. Pixels are taken on a 0–255 scale and
    /// replicate-padded to a multiple of 2^levels; with a channel wavelet the
    /// last colour channel is repeated to make the channel count even.
    Dwt {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(long, default_value = "9/7")]
        wavelet: WaveletKind,
        #[arg(long, default_value_t = 1)]
        levels: usize,
        #[arg(long)]
        channel_wavelet: Option<WaveletKind>,
        /// Per-subband energy and entropy instead of the summary line.
        #[arg(long)]
        report: bool,
    },
    /// Per-subband bit allocation of a bitstream, tab-separated.
    Report {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Original image, for PSNR and MS-SSIM lines.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Train the small model; writes the loss trace as CSV.
    TrainToy {
        #[arg(long, default_value_t = 1)]
        stage: u8,
        #[arg(long, default_value_t = 0.013)]
        lambda: f64,
        #[arg(long, default_value_t = 1.2)]
        w1: f64,
        #[arg(long, default_value_t = 0.8)]
        w2: f64,
        #[arg(long)]
        iters: Option<u64>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Directory of PNG/PPM images to centre-crop. Without it, eight
        /// synthetic crops are generated from the seed.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long, default_value_t = 64)]
        crop: usize,
        /// Loss trace destination; standard output when absent.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Parameter counts per layer and in total.
    Params {
        #[arg(long, default_value = "toy")]
        profile: Profile,
        /// Count a checkpoint's architecture instead of a profile default.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) | Error::Shape(_) | Error::Range(_) | Error::Contract(_) => 2,
        Error::Io(_) => 3,
        Error::Decode(_) | Error::Parse(_) => 4,
        Error::Config(_) => 5,
        Error::Numeric(_) | Error::State(_) => 1,
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn load_codec(path: &Path, profile: Option<Profile>) -> Result<Codec> {
    let codec = Codec::load(path)?;
    if let Some(p) = profile {
        if codec.model.cfg.profile != p {
            return Err(Error::Config(format!("{} holds a {} model, not {}", path.display(), codec.model.cfg.profile.name(), p.name())));
        }
    }
    Ok(codec)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Compress { input, output, model, profile } => {
            let codec = load_codec(&model, profile)?;
            let img = read_image(&input)?;
            let enc = codec.encode(&img)?;
            write_bytes(&output, &enc.bytes)?;
            println!("{} bytes, {:.4} bpp", enc.bytes.len(), enc.bytes.len() as f64 * 8.0 / (img.width * img.height) as f64);
        }
        Command::Decompress { input, output, model } => {
            let codec = load_codec(&model, None)?;
            let dec = codec.decode(&read_bytes(&input)?)?;
            write_image(&output, &dec.image)?;
        }
        Command::Eval { a, b, msssim } => {
            let (a, b) = (read_image(&a)?.to_tensor(), read_image(&b)?.to_tensor());
            println!("PSNR_dB\t{:.4}", psnr(&a, &b)?);
            if msssim {
                let v = ms_ssim(&a, &b)?;
                println!("MS-SSIM\t{v:.6}\nMS-SSIM_dB\t{:.4}", ms_ssim_db(v));
            }
        }
        Command::Dwt { input, wavelet, levels, channel_wavelet, report } => {
            dwt_command(&input, wavelet, levels, channel_wavelet, report)?;
        }
        Command::Report { input, model, reference } => {
            let codec = load_codec(&model, None)?;
            let reference = reference.map(|p| read_image(&p)).transpose()?;
            let rep = report_subbands(&codec, &read_bytes(&input)?, reference.as_ref())?;
            print!("{}", rep.to_tsv());
        }
        Command::TrainToy { stage, lambda, w1, w2, iters, seed, data, out, resume, lr, batch, crop, trace } => {
            let stage = TrainStage::from_number(stage)?;
            let mut cfg = match stage {
                TrainStage::Joint => TrainConfig::toy_stage1(lambda),
                TrainStage::Reweighted => TrainConfig::toy_stage2(lambda, w1, w2),
            };
            cfg.seed = seed;
            cfg.crop = crop;
            if let Some(n) = iters {
                cfg.iterations = n;
            }
            if let Some(lr) = lr {
                cfg.schedule = LrSchedule::fixed(lr);
            }
            if let Some(b) = batch {
                cfg.batch_size = b;
            }
            cfg.validate()?;
            let (model, mut store) = match (&resume, stage) {
                (Some(p), _) => Model::load(p)?,
                (None, TrainStage::Reweighted) => {
                    return Err(Error::Argument("stage 2 fine-tunes a checkpoint: pass --resume".into()));
                }
                (None, TrainStage::Joint) => {
                    let mut mc = ModelConfig::toy();
                    mc.lambda_index = LAMBDAS_MSE.iter().position(|&l| l == lambda).unwrap_or(u8::MAX as usize) as u8;
                    let model = Model::new(mc)?;
                    let store = model.init(seed)?;
                    (model, store)
                }
            };
            let images = match &data {
                Some(dir) => load_crops(dir, crop)?,
                None => synthetic_crops(8, crop, seed),
            };
            let crops: Vec<Tensor3> = images.iter().map(|i| i.to_tensor()).collect();
            let mut sink: Box<dyn Write> = match &trace {
                Some(p) => Box::new(fs::File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?),
                None => Box::new(std::io::stdout().lock()),
            };
            let io = |e: std::io::Error| Error::Io(format!("trace: {e}"));
            writeln!(sink, "{}", TraceRow::CSV_HEADER).map_err(io)?;
            let mut write_err = None;
            train(&model, &mut store, &crops, &cfg, |row| {
                if write_err.is_none() {
                    write_err = writeln!(sink, "{row}").err();
                }
            })?;
            if let Some(e) = write_err {
                return Err(io(e));
            }
            sink.flush().map_err(io)?;
            store.save(&out)?;
        }
        Command::Params { profile, model } => {
            let model = match model {
                Some(p) => Model::load(&p)?.0,
                None => Model::new(ModelConfig::for_profile(profile))?,
            };
            let rows = model.layer_param_counts();
            for (name, count) in &rows {
                println!("{name}\t{count}");
            }
            println!("total\t{}", rows.iter().map(|(_, c)| c).sum::<usize>());
        }
    }
    Ok(())
}

fn dwt_command(input: &Path, wavelet: WaveletKind, levels: usize, channel_wavelet: Option<WaveletKind>, report: bool) -> Result<()> {
    if levels == 0 {
        return Err(Error::Argument("levels must be at least 1".into()));
    }
    let img = read_image(input)?;
    let mut t = pad_replicate(&img.to_tensor().map(|v| v * 255.0), 1 << levels);
    if channel_wavelet.is_some() && t.channels() % 2 == 1 {
        let last = t.slice_channels(t.channels() - 1, t.channels())?;
        t = Tensor3::concat_channels(&[&t, &last])?;
    }
    let mut stats = Vec::new();
    let err = match channel_wavelet {
        Some(ck) => {
            let s = dwt3d_forward(&t, ck, wavelet, levels)?;
            for label in s.labels() {
                stats.push(subband_stats(label.to_string(), s.band(label).expect("listed label")));
            }
            dwt3d_inverse(&s, ck, wavelet)?.max_abs_diff(&t)
        }
        None => {
            let p = dwt2d_forward(&t, wavelet, levels)?;
            stats.push(subband_stats(format!("LL{levels}"), &p.ll));
            for (i, d) in p.details.iter().enumerate().rev() {
                for (name, band) in [("HL", &d.hl), ("LH", &d.lh), ("HH", &d.hh)] {
                    stats.push(subband_stats(format!("{name}{}", i + 1), band));
                }
            }
            dwt2d_inverse(&p, wavelet)?.max_abs_diff(&t)
        }
    };
    if report {
        println!("subband\tcount\tenergy\tentropy_bits");
        for s in &stats {
            println!("{}\t{}\t{:.6e}\t{:.4}", s.label, s.count, s.energy, s.entropy);
        }
    } else {
        let total: f64 = stats.iter().map(|s| s.energy).sum();
        println!(
            "{} subbands, {} levels, {}x{}x{} coefficients, energy {:.6e}, max reconstruction error {:.3e}",
            stats.len(),
            levels,
            t.channels(),
            t.height(),
            t.width(),
            total,
            err
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("WECODEC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Only fails if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

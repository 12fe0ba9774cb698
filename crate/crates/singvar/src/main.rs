use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use singvar::datagen::{build_corpus, load_corpus, write_corpus};
use singvar::doubletrack::{
    read_wav_file, render_adt, render_ndt, write_wav_file, AdtConfig, MixConfig, SynthConfig,
};
use singvar::error::Error;
use singvar::eval::{eval_variation, ms_vectors, reconstruction_error, EvalReport};
use singvar::f0::{read_f0_file, write_f0_file};
use singvar::gmmn::{train, CmmdConfig, CmmdMode, TrainConfig};
use singvar::modspec::{augment_offsets, extract_ms, write_ms_file, MsNormalizer, StftConfig};
use singvar::postfilter::{
    load_postfilter, sample_variations, PostfilterModel, DEFAULT_BINS,
};

#[derive(Parser)]
#[command(name = "singvar", version, about = "Pitch-variation post-filter pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Exact,
    Rff,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a paired synthetic corpus of generated/natural contours
    Datagen {
        /// Number of songs
        #[arg(long)]
        songs: usize,
        /// Natural takes per song
        #[arg(long)]
        takes: usize,
        /// RNG seed
        #[arg(long)]
        seed: u64,
        /// Output corpus directory
        #[arg(long)]
        out: PathBuf,
        /// Notes per song
        #[arg(long, default_value_t = 12)]
        notes: usize,
    },
    /// Extract the modulation spectrum of an F0 file
    Extract {
        /// Input F0 file
        #[arg(long)]
        f0: PathBuf,
        /// Output MS file (used as a prefix with --all-offsets)
        #[arg(long)]
        out: PathBuf,
        /// Analysis offset in frames
        #[arg(long, conflicts_with = "all_offsets")]
        offset: Option<usize>,
        /// Write one MS file per offset in 0..hop
        #[arg(long)]
        all_offsets: bool,
    },
    /// Train the GMMN post-filter on a corpus
    Train {
        /// Corpus directory from `datagen`
        #[arg(long)]
        corpus: PathBuf,
        /// Training epochs
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        /// Batch size in segments
        #[arg(long, default_value_t = 13000)]
        batch: usize,
        /// RNG seed
        #[arg(long)]
        seed: u64,
        /// CMMD evaluation mode
        #[arg(long, value_enum, default_value_t = Mode::Exact)]
        mode: Mode,
        /// Output model file
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample filtered variation takes of an F0 contour
    Filter {
        /// Trained model file
        #[arg(long)]
        model: PathBuf,
        /// Input F0 file
        #[arg(long)]
        f0: PathBuf,
        /// Noise seed
        #[arg(long)]
        seed: u64,
        /// Number of takes to sample
        #[arg(long, default_value_t = 1)]
        takes: usize,
        /// Output path prefix; take i goes to <PREFIX>_take<i>.f0
        #[arg(long)]
        out: PathBuf,
    },
    /// Render artificial double-tracking audio from an F0 contour
    Adt {
        /// Input F0 file
        #[arg(long)]
        f0: PathBuf,
        /// LFO rate in Hz
        #[arg(long, default_value_t = 0.775)]
        rate: f64,
        /// LFO peak depth in semitones
        #[arg(long, default_value_t = 0.1)]
        depth: f64,
        /// Output WAV file
        #[arg(long)]
        out: PathBuf,
    },
    /// Render neural double-tracking audio via the trained post-filter
    Ndt {
        /// Trained model file
        #[arg(long)]
        model: PathBuf,
        /// Input F0 file
        #[arg(long)]
        f0: PathBuf,
        /// Noise seed
        #[arg(long)]
        seed: u64,
        /// Output WAV file
        #[arg(long)]
        out: PathBuf,
    },
    /// Mix two WAV tracks with a delay and gain on the second
    Mix {
        /// Primary track
        #[arg(long)]
        a: PathBuf,
        /// Secondary track
        #[arg(long)]
        b: PathBuf,
        /// Secondary delay in milliseconds
        #[arg(long, default_value_t = 20.0)]
        delay_ms: f64,
        /// Secondary gain in dB
        #[arg(long, default_value_t = -3.0)]
        gain_db: f64,
        /// Output WAV file
        #[arg(long)]
        out: PathBuf,
    },
    /// Objective evaluation of sampled takes against natural contours
    Eval {
        /// Directory of natural F0 files
        #[arg(long)]
        natural: PathBuf,
        /// Directory of sampled take F0 files
        #[arg(long)]
        takes: PathBuf,
        /// Output report file
        #[arg(long)]
        report: PathBuf,
    },
    /// Dump F0 contours as columnar CSV for plotting
    Plot {
        /// Input F0 files
        #[arg(long, required = true, num_args = 1..)]
        f0: Vec<PathBuf>,
        /// Output CSV file
        #[arg(long)]
        out: PathBuf,
    },
}

fn f0_files(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "f0"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Parse(format!("no .f0 files in {}", dir.display())));
    }
    Ok(files)
}

fn with_offset_suffix(path: &Path, offset: usize) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(&format!(".off{offset}"));
    path.with_file_name(name)
}

const EVAL_SIGMA: f64 = 1.0;

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Datagen {
            songs,
            takes,
            seed,
            out,
            notes,
        } => {
            let corpus = build_corpus(songs, takes, seed, notes)?;
            write_corpus(&out, &corpus)?;
            println!(
                "wrote {} songs x {} takes to {}",
                songs,
                takes,
                out.display()
            );
        }
        Command::Extract {
            f0,
            out,
            offset,
            all_offsets,
        } => {
            let contour = read_f0_file(&f0)?;
            let mrc = contour.remove_mean();
            let cfg = StftConfig::default();
            if all_offsets {
                for ms in augment_offsets(&mrc, &cfg)? {
                    write_ms_file(&with_offset_suffix(&out, ms.offset), &ms)?;
                }
                println!("wrote {} MS files", cfg.hop_frames);
            } else {
                let ms = extract_ms(&mrc, &cfg, offset.unwrap_or(0))?;
                write_ms_file(&out, &ms)?;
                println!("wrote {}", out.display());
            }
        }
        Command::Train {
            corpus,
            epochs,
            batch,
            seed,
            mode,
            out,
        } => {
            let corpus = load_corpus(&corpus)?;
            let stft = StftConfig::default();
            let bins = DEFAULT_BINS.to_vec();

            let mut natural_ms = Vec::new();
            for song in &corpus.songs {
                for take in &song.naturals {
                    natural_ms.extend(augment_offsets(&take.remove_mean(), &stft)?);
                }
            }
            let normalizer = MsNormalizer::fit_interior(&natural_ms.iter().collect::<Vec<_>>())?;

            let pairs: Vec<(Vec<f64>, Vec<f64>)> = corpus
                .training_pairs(&stft, &bins)?
                .into_iter()
                .map(|(c, t)| {
                    let norm = |v: Vec<f64>| {
                        v.into_iter()
                            .zip(&bins)
                            .map(|(x, &b)| normalizer.apply_value(b, x))
                            .collect()
                    };
                    (norm(c), norm(t))
                })
                .collect();
            log::info!("training on {} segment pairs", pairs.len());

            let cfg = TrainConfig {
                cmmd: CmmdConfig {
                    mode: match mode {
                        Mode::Exact => CmmdMode::Exact,
                        Mode::Rff => CmmdMode::Rff,
                    },
                    ..CmmdConfig::default()
                },
                epochs,
                batch_size: batch,
                ..TrainConfig::default()
            };
            let (model, history) = train(&pairs, &cfg, seed)?;
            for (i, loss) in history.iter().enumerate() {
                println!("epoch {} loss {loss}", i + 1);
            }
            singvar::postfilter::save_postfilter(
                &out,
                &PostfilterModel {
                    gmmn: model,
                    bins,
                    normalizer,
                },
            )?;
            println!("wrote {}", out.display());
        }
        Command::Filter {
            model,
            f0,
            seed,
            takes,
            out,
        } => {
            let pf = load_postfilter(&model)?;
            let contour = read_f0_file(&f0)?;
            let cfg = pf.config(seed, StftConfig::default());
            let variations = sample_variations(&pf.gmmn, &contour, &cfg, takes)?;
            for (i, v) in variations.iter().enumerate() {
                let path = PathBuf::from(format!("{}_take{i}.f0", out.display()));
                write_f0_file(&path, v)?;
                println!("wrote {}", path.display());
            }
        }
        Command::Adt {
            f0,
            rate,
            depth,
            out,
        } => {
            let contour = read_f0_file(&f0)?;
            let adt = AdtConfig {
                lfo_rate_hz: rate,
                lfo_depth_semitones: depth,
                ..AdtConfig::default()
            };
            let wave = render_adt(&contour, &adt, &MixConfig::default(), &SynthConfig::default())?;
            write_wav_file(&out, &wave)?;
            println!("wrote {}", out.display());
        }
        Command::Ndt {
            model,
            f0,
            seed,
            out,
        } => {
            let pf = load_postfilter(&model)?;
            let contour = read_f0_file(&f0)?;
            let cfg = pf.config(seed, StftConfig::default());
            let wave = render_ndt(
                &pf.gmmn,
                &contour,
                &cfg,
                &MixConfig::default(),
                &SynthConfig::default(),
            )?;
            write_wav_file(&out, &wave)?;
            println!("wrote {}", out.display());
        }
        Command::Mix {
            a,
            b,
            delay_ms,
            gain_db,
            out,
        } => {
            let primary = read_wav_file(&a)?;
            let secondary = read_wav_file(&b)?;
            let cfg = MixConfig {
                delay_ms,
                gain_db,
                sample_rate_hz: primary.sample_rate_hz,
            };
            let wave = singvar::doubletrack::mix_tracks(&primary, &secondary, &cfg)?;
            write_wav_file(&out, &wave)?;
            println!("wrote {}", out.display());
        }
        Command::Eval {
            natural,
            takes,
            report,
        } => {
            let stft = StftConfig::default();
            let naturals: Vec<_> = f0_files(&natural)?
                .iter()
                .map(|p| read_f0_file(p))
                .collect::<Result<_, _>>()?;
            let take_contours: Vec<_> = f0_files(&takes)?
                .iter()
                .map(|p| read_f0_file(p))
                .collect::<Result<_, _>>()?;

            let mut nat_vecs = Vec::new();
            for c in &naturals {
                nat_vecs.extend(ms_vectors(c, &stft)?);
            }
            let mut take_vecs = Vec::new();
            for c in &take_contours {
                take_vecs.extend(ms_vectors(c, &stft)?);
            }
            let stats = eval_variation(&take_contours)?;
            let rep = EvalReport {
                mmd_squared: singvar::eval::eval_mmd(&nat_vecs, &take_vecs, EVAL_SIGMA)?,
                std_mean: stats.std_mean,
                std_max: stats.std_max,
                max_deviation: stats.max_deviation,
                reconstruction_error: reconstruction_error(&take_contours, &stft)?,
            };
            std::fs::write(&report, rep.to_string())?;
            print!("{rep}");
        }
        Command::Plot { f0, out } => {
            let contours: Vec<_> = f0
                .iter()
                .map(|p| read_f0_file(p))
                .collect::<Result<Vec<_>, _>>()?;
            let mut csv = String::from("frame");
            for p in &f0 {
                csv.push(',');
                csv.push_str(&p.file_stem().unwrap_or_default().to_string_lossy());
            }
            csv.push('\n');
            let len = contours.iter().map(|c| c.len()).max().unwrap_or(0);
            for frame in 0..len {
                csv.push_str(&frame.to_string());
                for c in &contours {
                    csv.push(',');
                    if let Some(v) = c.values().get(frame) {
                        csv.push_str(&v.to_string());
                    }
                }
                csv.push('\n');
            }
            std::fs::write(&out, csv)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NonFinite(_) => ExitCode::from(4),
                _ => ExitCode::from(3),
            }
        }
    }
}

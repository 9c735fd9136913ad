use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

use matm_tts::checkpoint::{Checkpoint, CheckpointModel};
use matm_tts::corpus::{load_split, load_world, write_corpus};
use matm_tts::eval::{bench, bench_to_csv, enroll_speaker, evaluate, EvalReport, EvalSettings, LengthMode, Pipeline, BENCH_BUCKETS_S};
use matm_tts::nn::{predicted_frames, DurationNet, Network};
use matm_tts::toy_world::{oracle_decode_phonemes, oracle_speaker_consistency, speaker_table, ToyWorldSpec};
use matm_tts::trainer::{latest_checkpoint, DurationItem, DurationTrainer, FitOptions, Trainer};
use matm_tts::{Error, ExperimentConfig, PhonemeSeq, Result, SeededRng, Split, Variant};

#[derive(Parser)]
#[command(name = "matm", version, about = "Masked audio token TTS on a synthetic token world")]
struct Cli {
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat JSON config (keys from any section; `duration.` prefix for the
    /// duration predictor; optional "preset": "toy" | "paper").
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a toy corpus directory.
    Synthdata {
        /// JSON with toy world fields to override, or `toy`.
        #[arg(long, default_value = "toy")]
        spec: String,
        #[arg(long)]
        out: PathBuf,
        /// Utterances in each of dev and test; defaults to a quarter of train.
        #[arg(long)]
        held_out: Option<usize>,
    },
    /// Train the token model for one variant.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Train the duration predictor.
    TrainDuration {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode one prompt.
    Sample(SampleArgs),
    /// Decode a split and report PER and speaker consistency.
    Eval(EvalArgs),
    /// Time one-stage against two-stage decoding.
    Bench {
        /// One-stage checkpoint; a freshly initialized toy model if omitted.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, requires = "stage_b")]
        stage_a: Option<PathBuf>,
        #[arg(long, requires = "stage_a")]
        stage_b: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        runs: usize,
        /// Decoding steps; the configured value if omitted.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Stage-A checkpoint when `--ckpt` is a stage-B model.
    #[arg(long)]
    stage_a: Option<PathBuf>,
    /// Corpus directory providing the world and enrollment utterances.
    #[arg(long)]
    corpus: PathBuf,
    /// Phoneme ids separated by spaces or commas.
    #[arg(long)]
    text: String,
    #[arg(long)]
    speaker: usize,
    #[arg(long, conflicts_with = "use_duration_predictor")]
    frames: Option<usize>,
    #[arg(long, requires = "duration_ckpt")]
    use_duration_predictor: bool,
    #[arg(long)]
    duration_ckpt: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// One-stage checkpoints, one report row group each.
    #[arg(long = "ckpt")]
    ckpts: Vec<PathBuf>,
    #[arg(long, requires = "stage_b")]
    stage_a: Option<PathBuf>,
    #[arg(long, requires = "stage_a")]
    stage_b: Option<PathBuf>,
    /// Also decode with predicted lengths.
    #[arg(long)]
    duration_ckpt: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Evaluate only the first N utterances.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::preset(matm_tts::config::Preset::Toy),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
        cfg.duration_train.seed = seed;
        cfg.sampler.seed = seed;
    }
    Ok(cfg)
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn world_spec(arg: &str, cfg: &ExperimentConfig, seed: Option<u64>) -> Result<ToyWorldSpec> {
    let mut spec = ToyWorldSpec::for_model(&cfg.model);
    if arg != "toy" {
        let path = Path::new(arg);
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let overrides: Map<String, Value> = serde_json::from_str(&text)?;
        let Value::Object(mut base) = serde_json::to_value(&spec)? else {
            unreachable!("spec serializes to an object")
        };
        for (k, v) in overrides {
            if !base.contains_key(&k) {
                return Err(Error::Invalid {
                    what: "toy world spec",
                    reason: format!("unknown key `{k}`"),
                });
            }
            base.insert(k, v);
        }
        spec = serde_json::from_value(Value::Object(base))?;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

fn parse_phonemes(text: &str) -> Result<PhonemeSeq> {
    let ids = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u32>().map_err(|_| Error::Invalid {
                what: "text",
                reason: format!("`{s}` is not a phoneme id"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PhonemeSeq::new(ids)
}

fn load_main(path: &Path) -> Result<(Variant, Network)> {
    let ck = Checkpoint::load(path)?;
    match ck.header.model {
        CheckpointModel::Main { variant, model } => Ok((variant, Network::from_params(&model, ck.params)?)),
        CheckpointModel::Duration { .. } => Err(Error::Invalid {
            what: "checkpoint",
            reason: format!("{} holds a duration predictor", path.display()),
        }),
    }
}

fn load_duration(path: &Path) -> Result<DurationNet> {
    let ck = Checkpoint::load(path)?;
    match ck.header.model {
        CheckpointModel::Duration { model } => DurationNet::from_params(&model, ck.params),
        CheckpointModel::Main { .. } => Err(Error::Invalid {
            what: "checkpoint",
            reason: format!("{} is not a duration predictor", path.display()),
        }),
    }
}

fn load_two_stage(a: &Path, b: &Path) -> Result<(Network, Network)> {
    let (va, na) = load_main(a)?;
    let (vb, nb) = load_main(b)?;
    if va != Variant::StageA || vb != Variant::StageB {
        return Err(Error::Invalid {
            what: "two-stage checkpoints",
            reason: format!("expected stagea and stageb, got {} and {}", va.name(), vb.name()),
        });
    }
    Ok((na, nb))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Synthdata { spec, out, held_out } => {
            let spec = world_spec(spec, &cfg, cli.seed)?;
            let n_held = held_out.unwrap_or((spec.n_utterances / 4).max(1));
            write_corpus(
                out,
                &spec,
                &[(Split::Train, spec.n_utterances), (Split::Dev, n_held), (Split::Test, n_held)],
            )?;
            println!("wrote {} train and {n_held} dev/test utterances to {}", spec.n_utterances, out.display());
        }
        Command::Train {
            corpus,
            variant,
            out,
            quiet,
        } => {
            let world = load_world(corpus)?;
            world.check_model(&cfg.model)?;
            let utts = load_split(corpus, &world, Split::Train)?;
            let mut trainer = match latest_checkpoint(out)? {
                Some(ck) => {
                    let t = Trainer::from_checkpoint(ck)?;
                    if t.variant() != *variant {
                        return Err(Error::Invalid {
                            what: "resume",
                            reason: format!("{} holds a {} run", out.display(), t.variant().name()),
                        });
                    }
                    eprintln!("resuming from step {}", t.step());
                    t
                }
                None => Trainer::new(*variant, &cfg.model, &cfg.train)?,
            };
            let items = trainer.prepare(&utts, &speaker_table(&world))?;
            write(&out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
            let opts = FitOptions {
                out_dir: Some(out.clone()),
                until_step: None,
                verbose: !quiet,
            };
            let summary = trainer.fit(&items, &opts)?;
            if let Some(last) = summary.losses.last() {
                println!("step {}: total loss {:.4}", summary.final_step, last.total);
            }
        }
        Command::TrainDuration { corpus, out } => {
            let world = load_world(corpus)?;
            let items = DurationItem::from_corpus(&load_split(corpus, &world, Split::Train)?)?;
            let mut trainer = match latest_checkpoint(out)? {
                Some(ck) => DurationTrainer::from_checkpoint(ck)?,
                None => DurationTrainer::new(&cfg.duration, &cfg.duration_train)?,
            };
            let opts = FitOptions {
                out_dir: Some(out.clone()),
                ..Default::default()
            };
            trainer.fit(&items, &opts)?;
            let err = matm_tts::trainer::duration::median_relative_error(trainer.network(), &items)?;
            println!("median relative duration error on train: {err:.4}");
        }
        Command::Sample(args) => {
            let world = load_world(&args.corpus)?;
            let pool = load_split(&args.corpus, &world, Split::Train)?;
            let phonemes = parse_phonemes(&args.text)?;
            phonemes.validate(world.n_phonemes)?;
            let speaker = enroll_speaker(args.speaker, &pool, &world, cfg.sampler.seed)?;
            let frames = match (args.frames, args.use_duration_predictor) {
                (Some(n), _) => n,
                (None, true) => {
                    let dur = load_duration(args.duration_ckpt.as_deref().unwrap())?;
                    predicted_frames(dur.forward(&phonemes)?, world.frame_rate)
                }
                (None, false) => {
                    return Err(Error::Invalid {
                        what: "sample",
                        reason: "give --frames N or --use-duration-predictor".into(),
                    })
                }
            };
            let (variant, net) = load_main(&args.ckpt)?;
            let mut rng = SeededRng::new(cfg.sampler.seed);
            let stage_a;
            let pipeline = if variant == Variant::StageB {
                let path = args.stage_a.as_deref().ok_or_else(|| Error::Invalid {
                    what: "sample",
                    reason: "a stage-B checkpoint needs --stage-a".into(),
                })?;
                stage_a = load_two_stage(path, &args.ckpt)?.0;
                Pipeline::TwoStage {
                    stage_a: &stage_a,
                    stage_b: &net,
                }
            } else {
                Pipeline::OneStage(&net)
            };
            let (grid, trace) = pipeline.generate(&phonemes, &speaker, frames, world.frame_rate, &cfg.sampler, &mut rng)?;
            let decoded = oracle_decode_phonemes(&grid, world.n_phonemes);
            let record = serde_json::json!({
                "id": "sample-0",
                "phonemes": phonemes.ids(),
                "speaker_id": args.speaker,
                "tokens": grid.as_array().rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
                "frame_rate": grid.frame_rate(),
                "duration_s": grid.duration_s(),
                "decoded_phonemes": decoded.ids(),
                "speaker_consistency": oracle_speaker_consistency(&grid, args.speaker, &world),
                "seed": cfg.sampler.seed,
            });
            write(&args.out, record.to_string() + "\n")?;
            let mut trace_path = args.out.clone().into_os_string();
            trace_path.push(".trace.json");
            let trace_path = PathBuf::from(trace_path);
            write(&trace_path, serde_json::to_string_pretty(&trace)?)?;
            println!("decoded {:?} in {} forward passes", decoded.ids(), trace.forward_passes());
        }
        Command::Eval(args) => {
            let world = load_world(&args.corpus)?;
            let mut data = load_split(&args.corpus, &world, args.split)?;
            if let Some(n) = args.limit {
                data.truncate(n);
            }
            let pool = load_split(&args.corpus, &world, Split::Train)?;
            let duration = args.duration_ckpt.as_deref().map(load_duration).transpose()?;
            let modes: Vec<LengthMode> = if duration.is_some() {
                vec![LengthMode::Oracle, LengthMode::Predicted]
            } else {
                vec![LengthMode::Oracle]
            };
            let settings = EvalSettings {
                spec: &world,
                enrollment_pool: &pool,
                sampler: cfg.sampler.clone(),
                seed: cfg.sampler.seed,
            };
            let mut report = EvalReport::default();
            for path in &args.ckpts {
                let (variant, net) = load_main(path)?;
                if matches!(variant, Variant::StageA | Variant::StageB) {
                    return Err(Error::Invalid {
                        what: "eval",
                        reason: "pass two-stage checkpoints with --stage-a/--stage-b".into(),
                    });
                }
                report.extend(evaluate(variant.name(), Pipeline::OneStage(&net), duration.as_ref(), &modes, &data, &settings)?);
            }
            if let (Some(a), Some(b)) = (&args.stage_a, &args.stage_b) {
                let (na, nb) = load_two_stage(a, b)?;
                let pipe = Pipeline::TwoStage {
                    stage_a: &na,
                    stage_b: &nb,
                };
                report.extend(evaluate("two-stage", pipe, duration.as_ref(), &modes, &data, &settings)?);
            }
            if report.rows.is_empty() {
                return Err(Error::Invalid {
                    what: "eval",
                    reason: "no checkpoints given".into(),
                });
            }
            write(&args.out.join("report.csv"), report.to_csv())?;
            write(&args.out.join("report.txt"), report.to_table())?;
            let lines: Vec<String> = report
                .utterances
                .iter()
                .map(|(label, r)| {
                    let mut v = serde_json::to_value(r).unwrap();
                    v["variant"] = Value::from(label.as_str());
                    v.to_string()
                })
                .collect();
            write(&args.out.join("utterances.jsonl"), lines.join("\n") + "\n")?;
            print!("{}", report.to_table());
        }
        Command::Bench {
            ckpt,
            stage_a,
            stage_b,
            runs,
            steps,
            out,
        } => {
            let one = match ckpt {
                Some(p) => load_main(p)?.1,
                None => Network::new(&cfg.model, cfg.train.seed)?,
            };
            let (na, nb) = match (stage_a, stage_b) {
                (Some(a), Some(b)) => load_two_stage(a, b)?,
                _ => {
                    let (ma, _) = Variant::StageA.configure(&cfg.model, &cfg.train);
                    let (mb, _) = Variant::StageB.configure(&cfg.model, &cfg.train);
                    (Network::new(&ma, cfg.train.seed)?, Network::new(&mb, cfg.train.seed)?)
                }
            };
            let mut sampler = cfg.sampler.clone();
            if let Some(n) = steps {
                sampler.n_steps = *n;
            }
            let world = ToyWorldSpec::for_model(one.config());
            let phonemes = PhonemeSeq::new(vec![1, 2, 3])?;
            let speaker = matm_tts::toy_world::toy_speaker_embedding(0, &world);
            let rows = bench(&one, &na, &nb, &phonemes, &speaker, world.frame_rate, &BENCH_BUCKETS_S, *runs, &sampler)?;
            let csv = bench_to_csv(&rows);
            write(&out.join("bench.csv"), &csv)?;
            print!("{csv}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use motionprior::datafuse::{build_dataset, load_dataset, DatasetConfig};
use motionprior::denoiser::{Checkpoint, Denoiser, DenoiserConfig};
use motionprior::diffusion::{
    make_schedule, sample, train, ModelMeta, ScheduleKind, TrainConfig, Trainer, CHECKPOINT_FILE, DEFAULT_STEPS,
};
use motionprior::dno::{gradient_check, optimize_noise, write_trace, DnoOptions, OptStage, Prior};
use motionprior::evalcli::{evaluate, export_csv, export_obj, load_suite, RUNS_CSV_HEADER};
use motionprior::kinematics::rotation::{rot_z, Vec3};
use motionprior::kinematics::{presets, SkeletonSpec};
use motionprior::representation::{decode_world, FeatureLayout, MotionFeatures};
use motionprior::tasks::{llm_plan, load_task, FixtureTransport, HttpTransport, LlmConfig, TaskError};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Motion diffusion prior: data generation, training, sampling, noise
/// optimization, evaluation and export.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        /// Dataset config JSON; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the denoiser on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training config JSON; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Continue from the checkpoint in `out`.
        #[arg(long)]
        resume: bool,
    },
    /// Draw a motion from the prior.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Deterministic DDIM steps; the full ancestral chain when omitted.
        #[arg(long)]
        steps: Option<usize>,
        /// Sequence length; the training window when omitted.
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        skel: SkeletonArg,
    },
    /// Optimize the initial noise for a tracking or grasp task file.
    Optimize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: PathBuf,
        /// JSON list of stages; the two-stage default when omitted.
        #[arg(long)]
        stages: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Loss trace CSV; next to `out` when omitted.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        skel: SkeletonArg,
    },
    /// Run a directory of tracking tasks and report metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        stages: Option<PathBuf>,
        /// Report CSV.
        #[arg(long)]
        out: PathBuf,
        /// Per-run CSV.
        #[arg(long)]
        runs: Option<PathBuf>,
        #[command(flatten)]
        skel: SkeletonArg,
    },
    /// Turn an instruction into a validated contact plan.
    Plan {
        #[arg(long)]
        instruction: String,
        /// Replay a recorded reply instead of calling the endpoint.
        #[arg(long)]
        offline_fixture: Option<String>,
        #[arg(long, default_value_t = 60)]
        frames: usize,
        /// Writes the plan JSON here; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        skel: SkeletonArg,
    },
    /// Check noise-optimization gradients against finite differences.
    GradCheck {
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long, default_value_t = 20)]
        coords: usize,
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        #[command(flatten)]
        skel: SkeletonArg,
    },
    /// Decode a feature file to joint trajectories.
    Export {
        #[arg(long)]
        motion: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        out: PathBuf,
        /// Start position `x,y,z`; rest height above the origin when omitted.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        init_position: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.0)]
        init_yaw: f64,
        #[command(flatten)]
        skel: SkeletonArg,
    },
}

#[derive(clap::Args)]
struct SkeletonArg {
    /// Preset name or skeleton JSON path.
    #[arg(long, default_value = "desk37")]
    skeleton: String,
}

impl SkeletonArg {
    fn load(&self) -> Result<SkeletonSpec, Failure> {
        match presets::by_name(&self.skeleton) {
            Some(s) => Ok(s),
            None => SkeletonSpec::load(Path::new(&self.skeleton)).map_err(|e| Failure::Schema(e.into())),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Obj,
}

/// Exit code 2 for bad inputs, 3 for failures while running.
enum Failure {
    Schema(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn schema<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Schema(e.into())
}

fn task_failure(e: TaskError) -> Failure {
    match e {
        TaskError::Io(_) | TaskError::EndpointError { .. } | TaskError::InvalidPlanAfterRetries { .. } => {
            Failure::Runtime(e.into())
        }
        _ => Failure::Schema(e.into()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| schema(anyhow!("{}: {e}", path.display())))
}

fn load_stages(path: Option<&Path>) -> Result<Vec<OptStage>, Failure> {
    let stages = match path {
        Some(p) => read_json::<Vec<OptStage>>(p)?,
        None => OptStage::defaults(),
    };
    if stages.is_empty() {
        return Err(schema(anyhow!("stage list is empty")));
    }
    for s in &stages {
        s.validate().map_err(schema)?;
    }
    Ok(stages)
}

struct Loaded {
    model: Denoiser<f32>,
    meta: ModelMeta,
}

fn load_checkpoint(path: &Path, skel: &SkeletonSpec) -> Result<Loaded, Failure> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let meta = ModelMeta::from_json(&ck.meta).map_err(schema)?;
    let hash = format!("{:016x}", skel.hash());
    if meta.skeleton_hash != hash {
        return Err(schema(anyhow!(
            "checkpoint was trained for skeleton {} but {} was given",
            meta.skeleton_hash,
            hash
        )));
    }
    Ok(Loaded { model: ck.model, meta })
}

fn save_features(path: &Path, skel: &SkeletonSpec, data: ndarray::Array2<f64>) -> Result<(), Failure> {
    MotionFeatures {
        data,
        skeleton_hash: skel.hash(),
        frame_rate: skel.frame_rate,
    }
    .save(path)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData { config, out } => {
            let config: DatasetConfig = match config {
                Some(p) => read_json(&p)?,
                None => DatasetConfig::default(),
            };
            let manifest = build_dataset(&config, &out)?;
            println!("{}", serde_json::to_string_pretty(&manifest.counts)?);
        }
        Command::Train { data, out, config, resume } => {
            let config: TrainConfig = match config {
                Some(p) => read_json(&p)?,
                None => TrainConfig::default(),
            };
            let (manifest, clips) = load_dataset(&data)?;
            let skel = manifest.config.skeleton_spec()?;
            let clips: Vec<_> = clips.into_iter().map(|c| c.data).collect();
            let mut trainer = if resume {
                let ck = Checkpoint::load(&out.join(CHECKPOINT_FILE))?;
                Trainer::resume(config, skel, &clips, ck)?
            } else {
                let dim = FeatureLayout::for_skeleton(&skel).dim();
                let model = Denoiser::init(DenoiserConfig::desk(dim, config.window), config.seed)?;
                let schedule = make_schedule(DEFAULT_STEPS, ScheduleKind::default())?;
                Trainer::new(config, skel, schedule, &clips, model)?
            };
            let records = train(&mut trainer, &out)?;
            if let Some(last) = records.last() {
                println!("step {} loss {:.5}", last.step, last.total);
            }
        }
        Command::Sample { checkpoint, seed, steps, frames, out, skel } => {
            let skel = skel.load()?;
            let l = load_checkpoint(&checkpoint, &skel)?;
            let schedule = l.meta.schedule()?;
            let x = sample(&l.model, &schedule, frames.unwrap_or(l.meta.frames), seed, steps)?;
            let raw = l.meta.stats.denormalize(x.mapv(f64::from).view());
            save_features(&out, &skel, raw)?;
        }
        Command::Optimize { checkpoint, task, stages, seed, out, trace, skel } => {
            let skel = skel.load()?;
            let stages = load_stages(stages.as_deref())?;
            let task = load_task(&task, &skel).map_err(task_failure)?;
            let l = load_checkpoint(&checkpoint, &skel)?;
            let schedule = l.meta.schedule()?;
            let prior = Prior::new(&l.model, &schedule, &l.meta.stats, &skel);
            let result = optimize_noise(&prior, &task, &stages, seed, &DnoOptions::default())?;
            let trace = trace.unwrap_or_else(|| out.with_extension("trace.csv"));
            write_trace(&trace, &result.trace)?;
            save_features(&out, &skel, result.features)?;
            println!(
                "close {:.4} -> {:.4}, contact {:.4} -> {:.4}",
                result.initial.close, result.last.close, result.initial.contact, result.last.contact
            );
        }
        Command::Eval { checkpoint, suite, seeds, stages, out, runs, skel } => {
            let skel = skel.load()?;
            let stages = load_stages(stages.as_deref())?;
            let suite = load_suite(&suite, &skel).map_err(|e| match e {
                motionprior::evalcli::EvalError::Task(t) => task_failure(t),
                other => Failure::Runtime(other.into()),
            })?;
            let l = load_checkpoint(&checkpoint, &skel)?;
            let schedule = l.meta.schedule()?;
            let prior = Prior::new(&l.model, &schedule, &l.meta.stats, &skel);
            let eval = evaluate(&prior, &suite, &seeds, &stages, &DnoOptions::default())?;
            std::fs::write(&out, eval.report.to_csv())?;
            if let Some(p) = runs {
                let mut text = format!("{RUNS_CSV_HEADER}\n");
                for r in &eval.runs {
                    text += &r.csv_line();
                    text.push('\n');
                }
                std::fs::write(p, text)?;
            }
            print!("{}", eval.report.to_csv());
        }
        Command::Plan { instruction, offline_fixture, frames, out, skel } => {
            let skel = skel.load()?;
            let plan = match offline_fixture {
                Some(name) => {
                    let t = FixtureTransport::named(&name).map_err(schema)?;
                    llm_plan(&instruction, skel.catalog(), frames, &t, LlmConfig::DEFAULT_ATTEMPTS)
                }
                None => {
                    let config = LlmConfig::from_env().map_err(task_failure)?;
                    let attempts = config.max_attempts;
                    let t = HttpTransport::new(config).map_err(task_failure)?;
                    llm_plan(&instruction, skel.catalog(), frames, &t, attempts)
                }
            }
            .map_err(task_failure)?;
            let text = serde_json::to_string_pretty(&plan)?;
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => println!("{text}"),
            }
        }
        Command::GradCheck { frames, coords, step, seed, tolerance, skel } => {
            let skel = skel.load()?;
            let r = gradient_check(&skel, frames, coords, step, seed)?;
            for (i, c, a, f) in &r.probes {
                println!("x[{i},{c}] analytic {a:+.6e} numeric {f:+.6e}");
            }
            println!("max relative error {:.3e}", r.max_rel_error);
            if r.max_rel_error >= tolerance {
                return Err(Failure::Runtime(anyhow!("gradient check failed: {:.3e} >= {tolerance:e}", r.max_rel_error)));
            }
        }
        Command::Export { motion, format, out, init_position, init_yaw, skel } => {
            let skel = skel.load()?;
            let features = MotionFeatures::load(&motion).map_err(schema)?;
            features.check(&skel).map_err(schema)?;
            let start = match init_position {
                Some(p) => Vec3::new(p[0], p[1], p[2]),
                None => Vec3::new(0.0, 0.0, skel.rest_root_height()),
            };
            let decoded = decode_world(&skel, features.data.view(), &start, &rot_z(init_yaw)).map_err(schema)?;
            let w = BufWriter::new(File::create(&out)?);
            match format {
                Format::Csv => export_csv(w, &skel, &decoded)?,
                Format::Obj => export_obj(w, &skel, &decoded)?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Schema(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

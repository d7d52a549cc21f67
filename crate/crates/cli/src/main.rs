use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use grasp_core::generator::{self, train::train_from, Weights};
use grasp_core::hand_refine::refine_hand;
use grasp_core::io::{self, PipelineConfig};
use grasp_core::metrics::{evaluate, EvalCase};
use grasp_core::sequence::seed_between;
use grasp_core::synth::{synth_corpus, SynthOptions};
use grasp_core::{foot_refine, Error, HandModel, MotionSequence, Skeleton};

fn defaults_help() -> &'static str {
    static TEXT: OnceLock<String> = OnceLock::new();
    TEXT.get_or_init(|| {
        format!(
            "Grasping motion generation and cleanup.\n\nExit status: 0 success, 1 usage, 2 invalid input, 3 numerical failure.\n\nDefault configuration (write it with `graspgen config`):\n\n{}",
            PipelineConfig::default().to_toml()
        )
    })
}

#[derive(Parser)]
#[command(name = "graspgen", version, about = "Grasping motion generation and cleanup", long_about = defaults_help())]
struct Cli {
    /// Seed for weight initialisation, batching and synthetic data.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Pipeline configuration (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the default configuration.
    Config { out: PathBuf },
    /// Linear seed between the first and last frame of a motion file.
    Seed(SeedArgs),
    /// Train the generator.
    Train(TrainArgs),
    /// Seed and run the generator between the first and last frame.
    Generate(GenerateArgs),
    /// Remove foot skating from one or more motion files.
    RefineFeet(MultiArgs),
    /// Cone-correct the wrist and refine the fingers against an object.
    RefineHand(HandArgs),
    /// Score generated motion against references.
    Evaluate(EvalArgs),
    /// Write a synthetic corpus of reach motions with their objects.
    Synth(SynthArgs),
    /// seed, generate, refine-feet, refine-hand and evaluate in one go.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SeedArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Motion files to train on.
    #[arg(long, num_args = 1.., required_unless_present = "synth")]
    corpus: Vec<PathBuf>,
    /// Train on this many synthetic sequences instead.
    #[arg(long)]
    synth: Option<usize>,
    /// Override the configured number of steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Loss trace (CSV).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    input: PathBuf,
    /// Untrained model when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MultiArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output file, or a directory when several inputs are given.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HandArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    object: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, num_args = 1.., required = true)]
    generated: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    reference: Vec<PathBuf>,
    /// One object cloud per pair, for the intersection volume.
    #[arg(long, num_args = 1..)]
    object: Vec<PathBuf>,
    /// Report file (JSON); printed when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// Scene motion: its first and last frames are the endpoints; with the
    /// configured number of frames it is also the evaluation reference.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    object: PathBuf,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

type Res<T = ()> = std::result::Result<T, Failure>;

fn exit_code(f: &Failure) -> u8 {
    match f {
        Failure::Usage(_) => 1,
        Failure::Core(Error::NonFinite(_) | Error::Degenerate6d(_)) => 3,
        Failure::Core(_) => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().expect("thread pool is configured once");
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Core(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&f))
        }
    }
}

fn load_config(cli: &Cli) -> Res<PipelineConfig> {
    Ok(match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    })
}

fn run(cli: &Cli) -> Res {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Config { out } => {
            cfg.save(out)?;
            Ok(())
        }
        Command::Seed(a) => {
            let (seq, skel) = io::load_motion(&a.input)?;
            let seeded = seed_sequence(&skel, &seq, cfg.generator.horizon, cfg.fps)?;
            io::save_motion(&a.out, &seeded, None)?;
            Ok(())
        }
        Command::Train(a) => cmd_train(cli, &cfg, a),
        Command::Generate(a) => {
            let (seq, skel) = io::load_motion(&a.input)?;
            let w = weights_or_init(a.weights.as_deref(), &cfg, cli.seed)?;
            let g = generate(&w, &skel, &seq, cfg.fps)?;
            io::save_motion(&a.out, &g, None)?;
            Ok(())
        }
        Command::RefineFeet(a) => {
            let targets = outputs(&a.inputs, &a.out)?;
            let jobs: Vec<(PathBuf, PathBuf)> = a.inputs.iter().cloned().zip(targets).collect();
            let results: Vec<Res> = parallel_map(&jobs, |(i, o)| {
                let (seq, skel) = io::load_motion(i)?;
                let out = foot_refine::refine_feet(&seq, &skel, cfg.foot.contact_threshold)?;
                io::save_motion(o, &out, None)?;
                Ok(())
            });
            results.into_iter().collect()
        }
        Command::RefineHand(a) => {
            let (seq, skel) = io::load_motion(&a.input)?;
            let object = io::load_cloud(&a.object)?;
            let out = refine_hand(&seq, &object, &skel, &HandModel::new(&skel), &cfg.hand)?;
            io::save_motion(&a.out, &out.sequence, None)?;
            Ok(())
        }
        Command::Evaluate(a) => cmd_evaluate(&cfg, a),
        Command::Synth(a) => {
            let skel = Skeleton::default();
            let opts = SynthOptions { horizon: cfg.generator.horizon, fps: cfg.fps, ..SynthOptions::default() };
            std::fs::create_dir_all(&a.out)?;
            for (k, s) in synth_corpus(&skel, &opts, cli.seed, a.count)?.iter().enumerate() {
                io::save_motion(&a.out.join(format!("sample_{k:04}.json")), &s.sequence, None)?;
                io::save_cloud(&a.out.join(format!("sample_{k:04}.cloud")), &s.object)?;
                io::save_json(&a.out.join(format!("sample_{k:04}.shape.json")), &s.shape)?;
            }
            Ok(())
        }
        Command::Pipeline(a) => cmd_pipeline(cli, &cfg, a),
    }
}

fn parallel_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

fn outputs(inputs: &[PathBuf], out: &Path) -> Res<Vec<PathBuf>> {
    if inputs.len() == 1 {
        return Ok(vec![out.to_path_buf()]);
    }
    std::fs::create_dir_all(out)?;
    inputs
        .iter()
        .map(|i| i.file_name().map(|n| out.join(n)).ok_or_else(|| Failure::Usage(format!("{} has no file name", i.display()))))
        .collect()
}

/// The seed as a motion sequence, endpoints taken from `seq`.
fn seed_sequence(skel: &Skeleton, seq: &MotionSequence, horizon: usize, fps: f64) -> Res<MotionSequence> {
    let seeded = seed_between(skel, seq.first(), seq.last(), horizon)?;
    Ok(MotionSequence::new(seeded.iter().map(|f| f.pose()).collect(), fps)?)
}

fn weights_or_init(path: Option<&Path>, cfg: &PipelineConfig, seed: u64) -> Res<Weights> {
    let w = match path {
        Some(p) => io::load_weights(p)?,
        None => Weights::init(&cfg.generator, &mut ChaCha8Rng::seed_from_u64(seed))?,
    };
    if w.config.horizon != cfg.generator.horizon {
        return Err(Failure::Core(Error::Config(format!(
            "weights were trained for {} transitions, configuration asks for {}",
            w.config.horizon, cfg.generator.horizon
        ))));
    }
    Ok(w)
}

fn generate(w: &Weights, skel: &Skeleton, seq: &MotionSequence, fps: f64) -> Res<MotionSequence> {
    let seeded = seed_between(skel, seq.first(), seq.last(), w.config.horizon)?;
    Ok(generator::generate(w, &seeded, skel, fps)?.sequence)
}

fn cmd_train(cli: &Cli, cfg: &PipelineConfig, a: &TrainArgs) -> Res {
    let skel = Skeleton::default();
    let corpus: Vec<MotionSequence> = match a.synth {
        Some(n) => {
            let opts = SynthOptions { horizon: cfg.generator.horizon, fps: cfg.fps, ..SynthOptions::default() };
            synth_corpus(&skel, &opts, cli.seed, n)?.into_iter().map(|s| s.sequence).collect()
        }
        None => a.corpus.iter().map(|p| io::load_motion(p).map(|(s, _)| s)).collect::<Result<_, _>>()?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let w = Weights::init(&cfg.generator, &mut rng)?;
    let steps = a.steps.unwrap_or(cfg.generator.steps);
    let out = train_from(w, &corpus, &skel, &mut rng, steps, |r| {
        if r.step % 100 == 0 {
            eprintln!("step {:>6}  total {:.6}", r.step, r.terms.total);
        }
    })?;
    if let Some(t) = &a.trace {
        io::write_trace(t, &out.trace)?;
    }
    if let Some(step) = out.diverged_at {
        write_marker(&a.out.with_extension("failed"), "train", &format!("loss diverged at step {step}"))?;
        return Err(Failure::Core(Error::NonFinite(format!("training diverged at step {step}"))));
    }
    io::save_weights(&a.out, &out.weights)?;
    Ok(())
}

fn cmd_evaluate(cfg: &PipelineConfig, a: &EvalArgs) -> Res {
    if a.generated.len() != a.reference.len() {
        return Err(Failure::Usage("--generated and --reference need the same number of files".into()));
    }
    if !a.object.is_empty() && a.object.len() != a.generated.len() {
        return Err(Failure::Usage("give one --object per generated file or none".into()));
    }
    let mut gen = Vec::new();
    let mut refs = Vec::new();
    let mut skel = None;
    for (g, r) in a.generated.iter().zip(&a.reference) {
        let (gs, sk) = io::load_motion(g)?;
        refs.push(io::load_motion(r)?.0);
        gen.push(gs);
        skel.get_or_insert(sk);
    }
    let objects: Vec<_> = a.object.iter().map(|p| io::load_cloud(p)).collect::<Result<_, _>>()?;
    let cases: Vec<EvalCase> = gen
        .iter()
        .zip(&refs)
        .enumerate()
        .map(|(i, (g, r))| EvalCase { generated: g, reference: r, object: objects.get(i) })
        .collect();
    let report = evaluate(&skel.unwrap_or_default(), &cases, &cfg.metrics)?;
    match &a.out {
        Some(p) => io::save_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).expect("report serialises")),
    }
    Ok(())
}

fn write_marker(path: &Path, stage: &str, msg: &str) -> Res {
    std::fs::write(path, format!("stage: {stage}\nerror: {msg}\n"))?;
    Ok(())
}

fn cmd_pipeline(cli: &Cli, cfg: &PipelineConfig, a: &PipelineArgs) -> Res {
    std::fs::create_dir_all(&a.out)?;
    let marker = a.out.join("FAILED");
    if marker.exists() {
        std::fs::remove_file(&marker)?;
    }
    let mut stage = "load";
    let result = (|| -> Res {
        let (scene, skel) = io::load_motion(&a.input)?;
        let object = io::load_cloud(&a.object)?;
        let w = weights_or_init(a.weights.as_deref(), cfg, cli.seed)?;

        stage = "seed";
        let seeded = seed_sequence(&skel, &scene, cfg.generator.horizon, cfg.fps)?;
        io::save_motion(&a.out.join("seeded.json"), &seeded, None)?;

        stage = "generate";
        let generated = generate(&w, &skel, &scene, cfg.fps)?;
        io::save_motion(&a.out.join("generated.json"), &generated, None)?;

        stage = "refine-feet";
        let feet = foot_refine::refine_feet(&generated, &skel, cfg.foot.contact_threshold)?;
        io::save_motion(&a.out.join("feet.json"), &feet, None)?;

        stage = "refine-hand";
        let hand = refine_hand(&feet, &object, &skel, &HandModel::new(&skel), &cfg.hand)?;
        io::save_motion(&a.out.join("refined.json"), &hand.sequence, None)?;

        stage = "evaluate";
        // without a full-length scene the seed is the only reference available
        let reference = if scene.len() == hand.sequence.len() { scene.clone() } else { seeded.clone() };
        let stages = [("generated", &generated), ("feet", &feet), ("refined", &hand.sequence)];
        let mut reports = serde_json::Map::new();
        for (name, seq) in stages {
            let case = EvalCase { generated: seq, reference: &reference, object: Some(&object) };
            let ev = evaluate(&skel, &[case], &cfg.metrics)?;
            reports.insert(name.into(), serde_json::to_value(&ev.aggregate).expect("report serialises"));
        }
        io::save_json(&a.out.join("metrics.json"), &reports)?;
        Ok(())
    })();
    if let Err(f) = &result {
        let msg = match f {
            Failure::Usage(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        };
        write_marker(&marker, stage, &msg)?;
    }
    result
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use laydiff_core::checkpoint::ModelCheckpoint;
use laydiff_core::evaluation::{generate_for_references, run_trials, ConditionMode, ProtocolConfig};
use laydiff_core::ingest::{self, Adapter, IngestOptions, IngestOutput, Profile};
use laydiff_core::layout::{read_jsonl, write_jsonl};
use laydiff_core::metrics::critic::{Critic, CriticConfig};
use laydiff_core::metrics::report::{evaluate, MetricReport, TrialSummary};
use laydiff_core::render::layout_svg;
use laydiff_core::sampler::{sample_component_count, Sampler, SamplingMode};
use laydiff_core::training::{Ablation, Trainer, TrainingFile};
use laydiff_core::{ConditionSpec, DatasetSchema, Layout};

#[derive(Parser)]
#[command(name = "laydiff", version, about = "Conditioned layout generation with joint discrete-continuous diffusion")]
struct Cli {
    /// Print a machine-readable JSON summary on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a source dataset into canonical JSON Lines splits.
    Ingest(IngestArgs),
    /// Write a procedurally generated dataset.
    Synth(SynthArgs),
    /// Train a denoiser.
    Train(TrainArgs),
    /// Generate layouts from a checkpoint.
    Sample(SampleArgs),
    /// Score generated layouts, or run the multi-trial generation protocol.
    Evaluate(EvaluateArgs),
    /// Train the feature critic used by FID.
    CriticTrain(CriticArgs),
    /// Run the HTTP inference service.
    Serve(ServeArgs),
    /// Render layouts to SVG files.
    Render(RenderArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long, value_enum)]
    adapter: AdapterArg,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Schema for the canonical adapter when the source has no schema.json.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// JSON object mapping split names to layout ids.
    #[arg(long)]
    split_manifest: Option<PathBuf>,
    #[arg(long, default_value_t = laydiff_core::layout::N_MAX)]
    n_max: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum AdapterArg {
    Rico,
    Publaynet,
    Magazine,
    Canonical,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    profile: ProfileArg,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    TwoColumnDoc,
    Grid,
    MobileList,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory with train.jsonl, val.jsonl and schema.json.
    #[arg(long)]
    data: PathBuf,
    /// TOML file with [model], [schedule] and [train] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// CSV log with step, l_box, l_cls, l_total, val_total.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    total_steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_min: Option<f64>,
    #[arg(long)]
    lambda_box: Option<f64>,
    #[arg(long)]
    lambda_cls: Option<f64>,
    #[arg(long)]
    p_half: Option<f64>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    val_every: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long, value_enum)]
    ablation: Option<AblationArg>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    n_layers: Option<usize>,
    #[arg(long)]
    n_heads: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Diffusion steps T.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    None,
    EditOnlyInference,
    NoConditionEmbedding,
    ClassBeforeBoxes,
    BoxesBeforeClass,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Category,
    CategorySize,
    Unconditioned,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplingArg {
    Joint,
    EditOnlyInference,
    ClassBeforeBoxes,
    BoxesBeforeClass,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Scenario applied to every layout of --ref.
    #[arg(long, value_enum, conflicts_with = "condition")]
    mode: Option<ModeArg>,
    #[arg(long)]
    r#ref: Option<PathBuf>,
    /// JSON file with one ConditionSpec or a list of them.
    #[arg(long)]
    condition: Option<PathBuf>,
    /// Number of unconditioned layouts when neither --ref nor --condition is given.
    #[arg(long, default_value_t = 16)]
    n: usize,
    /// Additionally pin every attribute of a random half of the components.
    #[arg(long)]
    half: bool,
    #[arg(long, value_enum, default_value = "joint")]
    sampling: SamplingArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    batch: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    critic: PathBuf,
    /// Reference (real) layouts.
    #[arg(long)]
    r#ref: PathBuf,
    /// Score this file of generated layouts (paired by line with --ref).
    #[arg(long, conflicts_with = "ckpt")]
    generated: Option<PathBuf>,
    /// Generate from this checkpoint and score, once per trial.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "category")]
    mode: ModeArg,
    #[arg(long)]
    half: bool,
    #[arg(long, value_enum, default_value = "joint")]
    sampling: SamplingArg,
    #[arg(long, default_value_t = 4)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV with one row per trial.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct CriticArgs {
    /// Dataset directory (uses train.jsonl and schema.json).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: std::net::SocketAddr,
    #[arg(long, default_value_t = 2)]
    workers: usize,
    /// Allowed CORS origin; repeatable. Any origin when omitted.
    #[arg(long)]
    cors_origin: Vec<String>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    input: PathBuf,
    /// schema.json; defaults to the one next to --input.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    limit: usize,
    #[arg(long, default_value_t = 300)]
    width: u32,
}

fn schema_near(path: &Path) -> Result<DatasetSchema> {
    let dir = if path.is_dir() { path } else { path.parent().unwrap_or(Path::new(".")) };
    let file = dir.join("schema.json");
    ingest::read_schema(&file).with_context(|| format!("reading {}", file.display()))
}

fn read_layouts(path: &Path, schema: &DatasetSchema) -> Result<Vec<Layout>> {
    read_jsonl(path, schema).with_context(|| format!("reading {}", path.display()))
}

fn conditioning(mode: ModeArg) -> ConditionMode {
    match mode {
        ModeArg::Category => ConditionMode::Category,
        ModeArg::CategorySize => ConditionMode::CategorySize,
        ModeArg::Unconditioned => ConditionMode::Unconditioned,
    }
}

fn sampling(mode: SamplingArg) -> SamplingMode {
    match mode {
        SamplingArg::Joint => SamplingMode::Joint,
        SamplingArg::EditOnlyInference => SamplingMode::EditOnlyInference,
        SamplingArg::ClassBeforeBoxes => SamplingMode::ClassBeforeBoxes,
        SamplingArg::BoxesBeforeClass => SamplingMode::BoxesBeforeClass,
    }
}

fn load_ckpt(path: &Path) -> Result<ModelCheckpoint> {
    ModelCheckpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn run_ingest(a: IngestArgs) -> Result<serde_json::Value> {
    let adapter = match a.adapter {
        AdapterArg::Rico => Adapter::Rico,
        AdapterArg::Publaynet => Adapter::Publaynet,
        AdapterArg::Magazine => Adapter::Magazine,
        AdapterArg::Canonical => Adapter::Canonical,
    };
    let opts = IngestOptions {
        n_max: a.n_max,
        schema: a.schema.as_deref().map(ingest::read_schema).transpose()?,
        split_manifest: a.split_manifest,
        ..Default::default()
    };
    let out = ingest::ingest(&a.source, adapter, &opts)?;
    ingest::write_dataset(&a.out, &out)?;
    Ok(serde_json::to_value(&out.report)?)
}

fn run_synth(a: SynthArgs) -> Result<serde_json::Value> {
    let profile = match a.profile {
        ProfileArg::TwoColumnDoc => Profile::TwoColumnDoc,
        ProfileArg::Grid => Profile::Grid,
        ProfileArg::MobileList => Profile::MobileList,
    };
    let (schema, layouts) = ingest::synth(profile, a.n, a.seed)?;
    let raws = layouts
        .iter()
        .enumerate()
        .map(|(i, l)| ingest::RawLayout {
            id: format!("{}-{}-{i}", schema.name, a.seed),
            canvas: l.canvas,
            components: l
                .components
                .iter()
                .map(|c| {
                    let (w, h) = (l.canvas[0] as f64, l.canvas[1] as f64);
                    let b = &c.bbox;
                    (
                        schema.classes[c.class].clone(),
                        laydiff_core::layout::AbsBox {
                            x: b.left() * w,
                            y: b.top() * h,
                            w: b.w * w,
                            h: b.h * h,
                        },
                    )
                })
                .collect(),
            split: None,
        })
        .collect();
    let out: IngestOutput = ingest::process(raws, &schema, ingest::DEFAULT_RATIOS)?;
    ingest::write_dataset(&a.out, &out)?;
    Ok(serde_json::to_value(&out.report)?)
}

fn run_train(a: TrainArgs) -> Result<serde_json::Value> {
    let mut file = match &a.config {
        Some(p) => TrainingFile::load(p)?,
        None => TrainingFile::default(),
    };
    let t = &mut file.train;
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src {
                $dst = v;
            }
        };
    }
    set!(t.seed, a.seed);
    set!(t.total_steps, a.total_steps);
    set!(t.batch_size, a.batch_size);
    set!(t.lr, a.lr);
    set!(t.lr_min, a.lr_min);
    set!(t.lambda_box, a.lambda_box);
    set!(t.lambda_cls, a.lambda_cls);
    set!(t.p_half, a.p_half);
    set!(t.val_every, a.val_every);
    set!(t.checkpoint_every, a.checkpoint_every);
    if let Some(c) = a.grad_clip {
        t.grad_clip = (c > 0.0).then_some(c);
    }
    if let Some(ab) = a.ablation {
        t.ablation = match ab {
            AblationArg::None => Ablation::None,
            AblationArg::EditOnlyInference => Ablation::EditOnlyInference,
            AblationArg::NoConditionEmbedding => Ablation::NoConditionEmbedding,
            AblationArg::ClassBeforeBoxes => Ablation::ClassBeforeBoxes,
            AblationArg::BoxesBeforeClass => Ablation::BoxesBeforeClass,
        };
    }
    set!(file.model.d_model, a.d_model);
    set!(file.model.n_layers, a.n_layers);
    set!(file.model.n_heads, a.n_heads);
    set!(file.model.dropout, a.dropout);
    set!(file.schedule.steps, a.steps);
    file.train.validate()?;

    let schema = schema_near(&a.data)?;
    let train = read_layouts(&a.data.join("train.jsonl"), &schema)?;
    let val_path = a.data.join("val.jsonl");
    let val = if val_path.exists() { read_layouts(&val_path, &schema)? } else { Vec::new() };
    let mut trainer = match &a.resume {
        Some(p) => {
            let ckpt = load_ckpt(p)?;
            if ckpt.schema != schema {
                bail!("checkpoint schema differs from the dataset schema");
            }
            Trainer::resume(ckpt, file.train.clone())?
        }
        None => Trainer::new(schema, &file.model, file.schedule, file.train.clone(), &train)?,
    };
    let mut log = match &a.log {
        Some(p) => {
            let append = a.resume.is_some() && p.exists();
            let f = std::fs::OpenOptions::new().create(true).append(append).write(true).truncate(!append).open(p)?;
            Some(csv::WriterBuilder::new().has_headers(!append).from_writer(f))
        }
        None => None,
    };
    let out = a.out.clone();
    let rows = trainer.run(&train, &val, log.as_mut(), |t| t.checkpoint()?.save(&out))?;
    let last = rows.last().copied();
    Ok(json!({
        "checkpoint": a.out,
        "steps": trainer.step,
        "final": last,
        "parameters": laydiff_core::nn::Parameters::param_count(&trainer.denoiser.params),
    }))
}

fn load_conditions(path: &Path) -> Result<Vec<ConditionSpec>> {
    let text = std::fs::read_to_string(path)?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    Ok(if v.is_array() { serde_json::from_value(v)? } else { vec![serde_json::from_value(v)?] })
}

fn run_sample(a: SampleArgs) -> Result<serde_json::Value> {
    let ckpt = load_ckpt(&a.ckpt)?;
    let schedule = ckpt.schedule.build()?;
    let sampler = Sampler::from_checkpoint(&ckpt, &schedule)?.with_mode(sampling(a.sampling));
    let layouts = match (&a.condition, &a.r#ref, a.mode) {
        (Some(c), _, _) => {
            let conds = load_conditions(c)?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let seeds: Vec<u64> = conds.iter().map(|_| rng.random()).collect();
            sampler.generate_batch(&conds, &seeds)?
        }
        (None, Some(r), Some(mode)) => {
            let refs = read_layouts(r, &ckpt.schema)?;
            let cfg = ProtocolConfig {
                mode: conditioning(mode),
                half_pinned: a.half,
                trials: 1,
                seed: a.seed,
                batch: a.batch,
            };
            generate_for_references(&sampler, &ckpt.count_histogram, &refs, &cfg, 0)?
        }
        (None, Some(_), None) => bail!("--ref needs --mode"),
        (None, None, Some(m)) if !matches!(m, ModeArg::Unconditioned) => bail!("--mode {} needs --ref", mode_name(m)),
        (None, None, _) => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let mut conds = Vec::with_capacity(a.n);
            let mut seeds = Vec::with_capacity(a.n);
            for _ in 0..a.n {
                conds.push(ConditionSpec::unconditioned(sample_component_count(&ckpt.count_histogram, &mut rng)?));
                seeds.push(rng.random());
            }
            let mut out = Vec::with_capacity(a.n);
            for (c, s) in conds.chunks(a.batch.max(1)).zip(seeds.chunks(a.batch.max(1))) {
                out.extend(sampler.generate_batch(c, s)?);
            }
            out
        }
    };
    write_jsonl(&a.out, &layouts, &ckpt.schema)?;
    let schema_out = a.out.with_file_name("schema.json");
    if !schema_out.exists() {
        std::fs::write(&schema_out, serde_json::to_string_pretty(&ckpt.schema)?)?;
    }
    Ok(json!({"output": a.out, "layouts": layouts.len()}))
}

fn mode_name(m: ModeArg) -> &'static str {
    match m {
        ModeArg::Category => "category",
        ModeArg::CategorySize => "category-size",
        ModeArg::Unconditioned => "unconditioned",
    }
}

fn report_table(summary: &TrialSummary) -> String {
    let mut s = String::from("metric      mean          std\n");
    for (k, name) in MetricReport::FIELDS.iter().enumerate() {
        s.push_str(&format!("{name:<11} {:<13.6} {:.6}\n", summary.mean[k], summary.std[k]));
    }
    s
}

fn run_evaluate(a: EvaluateArgs) -> Result<(serde_json::Value, String)> {
    let critic = Critic::load(&a.critic).with_context(|| format!("loading critic {}", a.critic.display()))?;
    let refs = read_layouts(&a.r#ref, &critic.schema)?;
    let summary = match (&a.generated, &a.ckpt) {
        (Some(g), _) => {
            let gen = read_layouts(g, &critic.schema)?;
            let pairing: Vec<(usize, usize)> = (0..gen.len().min(refs.len())).map(|i| (i, i)).collect();
            TrialSummary::new(vec![evaluate(&gen, &refs, &critic, &pairing)?])?
        }
        (None, Some(c)) => {
            let ckpt = load_ckpt(c)?;
            if ckpt.schema != critic.schema {
                bail!("critic and checkpoint schemas differ");
            }
            let schedule = ckpt.schedule.build()?;
            let sampler = Sampler::from_checkpoint(&ckpt, &schedule)?.with_mode(sampling(a.sampling));
            let cfg = ProtocolConfig {
                mode: conditioning(a.mode),
                half_pinned: a.half,
                trials: a.trials,
                seed: a.seed,
                batch: a.batch,
            };
            run_trials(&sampler, &ckpt.count_histogram, &refs, &critic, &cfg)?.0
        }
        (None, None) => bail!("evaluate needs --generated or --ckpt"),
    };
    let value = serde_json::to_value(&summary)?;
    if let Some(p) = &a.out {
        std::fs::write(p, serde_json::to_string_pretty(&value)?)?;
    }
    if let Some(p) = &a.csv {
        std::fs::write(p, summary.to_csv()?)?;
    }
    let table = report_table(&summary);
    Ok((value, table))
}

fn run_critic(a: CriticArgs) -> Result<serde_json::Value> {
    let schema = schema_near(&a.data)?;
    let train = read_layouts(&a.data.join("train.jsonl"), &schema)?;
    let mut cfg = CriticConfig {
        seed: a.seed,
        ..Default::default()
    };
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(d) = a.d_model {
        cfg.d_model = d;
    }
    let (critic, stats) = Critic::train(&train, &schema, cfg)?;
    critic.save(&a.out)?;
    Ok(json!({"critic": a.out, "stats": stats}))
}

fn run_serve(a: ServeArgs) -> Result<serde_json::Value> {
    let ckpt = load_ckpt(&a.ckpt)?;
    let cfg = laydiff_service::ServiceConfig {
        workers: a.workers,
        cors_origins: a.cors_origin,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(laydiff_service::serve(ckpt, a.bind, cfg)).map_err(|e| anyhow::anyhow!(e))?;
    Ok(json!({"status": "stopped"}))
}

fn run_render(a: RenderArgs) -> Result<serde_json::Value> {
    let schema = match &a.schema {
        Some(p) => ingest::read_schema(p)?,
        None => schema_near(&a.input)?,
    };
    let layouts = read_layouts(&a.input, &schema)?;
    std::fs::create_dir_all(&a.out)?;
    let mut written = Vec::new();
    for (i, l) in layouts.iter().take(a.limit).enumerate() {
        let path = a.out.join(format!("layout_{i:04}.svg"));
        std::fs::write(&path, layout_svg(l, &schema, a.width))?;
        written.push(path);
    }
    Ok(json!({"files": written}))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let json_out = cli.json;
    let result = match cli.command {
        Command::Ingest(a) => run_ingest(a).map(|v| (v, None)),
        Command::Synth(a) => run_synth(a).map(|v| (v, None)),
        Command::Train(a) => run_train(a).map(|v| (v, None)),
        Command::Sample(a) => run_sample(a).map(|v| (v, None)),
        Command::Evaluate(a) => run_evaluate(a).map(|(v, t)| (v, Some(t))),
        Command::CriticTrain(a) => run_critic(a).map(|v| (v, None)),
        Command::Serve(a) => run_serve(a).map(|v| (v, None)),
        Command::Render(a) => run_render(a).map(|v| (v, None)),
    };
    match result {
        Ok((value, text)) => {
            if json_out {
                println!("{value}");
            } else if let Some(t) = text {
                print!("{t}");
            } else {
                println!("{}", serde_json::to_string_pretty(&value).unwrap_or_default());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if json_out {
                println!("{}", json!({"error": format!("{e:#}")}));
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(1)
        }
    }
}

//! `conceptsel`: synthesize data, select attributes, probe, explain and intervene.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use conceptsel::baselines::{select_kmeans, select_similarity, select_svd, select_uniform};
use conceptsel::interpret::{class_importance, intervene};
use conceptsel::io::{self, AttributePool, ImageSet};
use conceptsel::probe::{evaluate, train_image_probe, train_probe, ProbeModel};
use conceptsel::projection::{binarize_top_k, semantic_project};
use conceptsel::prompts;
use conceptsel::selector::{
    select_learned, select_learned_grid, Head, InitMode, RegKind, SelectionResult, TrainConfig, LAMBDA_GRID,
};
use conceptsel::synthetic::{gen_planted_task, gen_random_pool, gen_similar_pool, PlantedTaskConfig};
use conceptsel::{Error, Result};

#[derive(Parser)]
#[command(name = "conceptsel", version, about = "Learn a compact attribute set for image classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset or attribute pool.
    Synth(SynthArgs),
    /// Check that an image set and a pool fit together.
    Validate(ValidateArgs),
    /// Write the image-by-attribute score matrix.
    Project(ProjectArgs),
    /// Choose K attributes from a pool.
    Select(SelectArgs),
    /// Fit a linear probe on the scores of selected attributes.
    Probe(ProbeArgs),
    /// Reference probe on raw image features through a rank-K bottleneck.
    Imgprobe(ImgprobeArgs),
    /// Rank attributes by importance for one class.
    Explain(ExplainArgs),
    /// Shift one attribute score of one test image and compare predictions.
    Intervene(InterveneArgs),
    /// Render LLM prompts or parse LLM responses.
    #[command(subcommand)]
    Prompts(PromptsCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Planted,
    Random,
    Similar,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    preset: Preset,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "CONCEPTSEL_SEED", default_value_t = 0)]
    seed: u64,
    /// Pool size (random and similar presets).
    #[arg(long, default_value_t = 512)]
    n: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Orthonormalize the random pool (needs n <= dim).
    #[arg(long)]
    orthonormal: bool,
    /// Per-coordinate spread of the similar pool around its base direction.
    #[arg(long, default_value_t = 0.05)]
    spread: f64,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    planted: usize,
    #[arg(long, default_value_t = 192)]
    distractors: usize,
    #[arg(long, default_value_t = 60)]
    train_per_class: usize,
    #[arg(long, default_value_t = 100)]
    test_per_class: usize,
    #[arg(long, default_value_t = 0.15)]
    noise: f64,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    pool: PathBuf,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    /// Restrict to the attributes of a selection file.
    #[arg(long)]
    selection: Option<PathBuf>,
    /// Keep only each image's top-K scores as ones, zeros elsewhere.
    #[arg(long)]
    binarize_top: Option<usize>,
    /// Output manifest path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Learned,
    Kmeans,
    Uniform,
    Svd,
    Similarity,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegArg {
    Mah,
    Cos,
    Ce,
}

impl From<RegArg> for RegKind {
    fn from(r: RegArg) -> Self {
        match r {
            RegArg::Mah => RegKind::Mah,
            RegArg::Cos => RegKind::Cos,
            RegArg::Ce => RegKind::CeOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    PoolSubset,
    Gaussian,
}

/// Optimizer settings shared by every trained model.
#[derive(Args)]
struct TrainArgs {
    #[arg(long, env = "CONCEPTSEL_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 5000)]
    max_epochs: usize,
    #[arg(long, default_value_t = 4096)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    #[arg(long, default_value_t = 10)]
    eval_every: usize,
    #[arg(long, default_value_t = 20)]
    patience: usize,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            lr: self.lr,
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            val_fraction: self.val_fraction,
            eval_every: self.eval_every,
            patience: self.patience,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    /// Try every lambda in {1, 0.1, 0.01, 0.001, 0} and keep the best on validation.
    #[arg(long)]
    lambda_grid: bool,
    #[arg(long, value_enum, default_value = "mah")]
    reg: RegArg,
    #[arg(long, value_enum, default_value = "pool-subset")]
    init: InitArg,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also write the stage-1 head (learned method only), for warm-starting a probe.
    #[arg(long)]
    head_out: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    selection: PathBuf,
    #[arg(long)]
    warm_start: Option<PathBuf>,
    #[command(flatten)]
    opt: TrainArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImgprobeArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    k: usize,
    #[command(flatten)]
    opt: TrainArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    probe: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    /// Class name as listed in the test manifest.
    #[arg(long)]
    class: String,
    #[arg(long, default_value_t = 6)]
    top: usize,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InterveneArgs {
    #[arg(long)]
    probe: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    /// Row index of the test image.
    #[arg(long)]
    image: usize,
    /// Name of a selected attribute.
    #[arg(long)]
    attribute: String,
    #[arg(long, default_value_t = 0.03, allow_hyphen_values = true)]
    delta: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PromptsCommand {
    /// Render one prompt, or a JSON prompts file for a list of classes.
    Render(RenderArgs),
    /// Collect bullet attributes from LLM responses into a newline-delimited list.
    Parse(ParseArgs),
}

#[derive(Args)]
struct RenderArgs {
    /// Class name for a per-class prompt.
    #[arg(long, conflicts_with_all = ["group", "classes_file"])]
    class: Option<String>,
    /// Newline-delimited class names; renders one per-class prompt each as JSON.
    #[arg(long, conflicts_with = "group")]
    classes_file: Option<PathBuf>,
    /// Restrict the per-class question to a domain, e.g. "birds".
    #[arg(long)]
    domain: Option<String>,
    /// Group name for a prompt covering several classes.
    #[arg(long, requires = "classes")]
    group: Option<String>,
    /// Comma-separated class names of the group.
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
    /// Use the superclass wording (count in words, bullet-point request).
    #[arg(long, requires = "group")]
    superclass: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ParseArgs {
    /// Response files; attributes are merged in order with repeats removed.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Stage-1 head as written by `select --head-out`.
#[derive(Debug, Serialize, Deserialize)]
struct HeadFile {
    weights: conceptsel::tensor::Matrix,
    bias: Vec<f64>,
    selection: SelectionResult,
    config: TrainConfig,
    seed: u64,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn emit(out: Option<&Path>, value: &impl Serialize) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn synth(a: &SynthArgs) -> Result<()> {
    fs::create_dir_all(&a.out)?;
    match a.preset {
        Preset::Planted => {
            let cfg = PlantedTaskConfig {
                classes: a.classes,
                dim: a.dim,
                planted_attrs: a.planted,
                distractor_attrs: a.distractors,
                train_per_class: a.train_per_class,
                test_per_class: a.test_per_class,
                noise_sigma: a.noise,
                seed: a.seed,
            };
            let task = gen_planted_task(&cfg)?;
            io::save_images(&task.train, a.out.join("train.json"))?;
            io::save_images(&task.test, a.out.join("test.json"))?;
            io::save_pool(&task.pool, a.out.join("pool.json"))?;
            write_json(&a.out.join("planted.json"), &task.sidecar(&cfg))?;
        }
        Preset::Random => {
            let pool = gen_random_pool(a.n, a.dim, a.seed, a.orthonormal)?;
            io::save_pool(&pool, a.out.join("pool.json"))?;
            let config = json!({ "preset": "random", "n": a.n, "dim": a.dim, "orthonormal": a.orthonormal });
            write_json(&a.out.join("synth.json"), &json!({ "config": config, "seed": a.seed }))?;
        }
        Preset::Similar => {
            let pool = gen_similar_pool(a.n, a.dim, a.spread, a.seed)?;
            io::save_pool(&pool, a.out.join("pool.json"))?;
            let config = json!({ "preset": "similar", "n": a.n, "dim": a.dim, "spread": a.spread });
            write_json(&a.out.join("synth.json"), &json!({ "config": config, "seed": a.seed }))?;
        }
    }
    Ok(())
}

fn load_pair(images: &Path, pool: &Path) -> Result<(ImageSet, AttributePool)> {
    let images = io::load_images(images)?;
    let pool = io::load_pool(pool)?;
    io::validate(&images, &pool)?;
    Ok((images, pool))
}

/// The selected attributes, after checking the selection was made on this pool.
fn selected_pool(pool: &AttributePool, sel: &SelectionResult) -> Result<AttributePool> {
    for (&i, name) in sel.indices.iter().zip(&sel.names) {
        match pool.names.get(i) {
            Some(n) if n == name => {}
            _ => {
                return Err(Error::Config(format!(
                    "selection entry {i} ({name}) does not match the pool"
                )))
            }
        }
    }
    Ok(pool.subset(&sel.indices))
}

fn select(a: &SelectArgs) -> Result<()> {
    let (images, pool) = load_pair(&a.images, &a.pool)?;
    let inputs = json!({ "images": path_str(&a.images), "pool": path_str(&a.pool) });
    let mut head = None;
    let mut selection = match a.method {
        Method::Learned => {
            let cfg = TrainConfig {
                k: a.k,
                lambda: a.lambda,
                reg_kind: a.reg.into(),
                init_mode: match a.init {
                    InitArg::PoolSubset => InitMode::PoolSubset,
                    InitArg::Gaussian => InitMode::Gaussian,
                },
                ..a.train.config()
            };
            let run = if a.lambda_grid {
                select_learned_grid(&images, &pool, &cfg, &LAMBDA_GRID)?
            } else {
                select_learned(&images, &pool, &cfg)?
            };
            log::info!("snapped validation accuracy {:.4}", run.snapped_val_acc);
            let run_cfg: TrainConfig = serde_json::from_value(run.selection.config.clone())?;
            head = Some((run.head, run_cfg));
            run.selection
        }
        Method::Uniform => select_uniform(&pool, a.k, a.train.seed)?,
        Method::Kmeans => select_kmeans(&pool, a.k, a.train.seed)?,
        Method::Svd => select_svd(&pool, a.k)?,
        Method::Similarity => select_similarity(&images, &pool, a.k)?,
    };
    let config = std::mem::take(&mut selection.config);
    selection.config = json!({ "selector": config, "lambda_grid": a.lambda_grid, "inputs": inputs });
    write_json(&a.out, &selection)?;
    match (&a.head_out, head) {
        (Some(path), Some((head, config))) => write_json(
            path,
            &HeadFile {
                weights: head.w,
                bias: head.b,
                selection: selection.clone(),
                seed: config.seed,
                config,
            },
        )?,
        (Some(_), None) => return Err(Error::Config("--head-out needs --method learned".into())),
        _ => {}
    }
    println!("selected: {}", selection.names.join(", "));
    Ok(())
}

fn probe(a: &ProbeArgs) -> Result<()> {
    let (train, pool) = load_pair(&a.train, &a.pool)?;
    let test = io::load_images(&a.test)?;
    io::validate(&test, &pool)?;
    let sel: SelectionResult = read_json(&a.selection)?;
    let sub = selected_pool(&pool, &sel)?;
    let classes = train.num_classes();
    if test.num_classes() != classes {
        return Err(Error::Config(format!(
            "train has {classes} classes but test has {}",
            test.num_classes()
        )));
    }
    let init = match &a.warm_start {
        Some(p) => {
            let h: HeadFile = read_json(p)?;
            if h.selection.indices != sel.indices {
                return Err(Error::Config("warm-start head was trained for a different selection".into()));
            }
            Some(Head {
                w: h.weights,
                b: h.bias,
            })
        }
        None => None,
    };
    let cfg = a.opt.config();
    let tr = semantic_project(&train, &sub)?;
    let mut model = train_probe(&tr, &train.labels, classes, init.as_ref(), &cfg)?;
    let eval = evaluate(&model, &semantic_project(&test, &sub)?, &test.labels)?;
    model.metrics.test_acc = Some(eval.accuracy);
    model.selection = Some(sel);
    write_json(
        &a.out,
        &json!({
            "weights": model.w,
            "bias": model.b,
            "selection": model.selection,
            "metrics": model.metrics,
            "config": model.config,
            "seed": model.seed,
            "report": model.report,
            "confusion": eval.confusion,
            "inputs": {
                "train": path_str(&a.train),
                "test": path_str(&a.test),
                "pool": path_str(&a.pool),
                "warm_start": a.warm_start.as_deref().map(path_str),
            },
        }),
    )?;
    println!("test accuracy: {:.4}", eval.accuracy);
    Ok(())
}

fn load_probe(path: &Path) -> Result<ProbeModel> {
    read_json(path)
}

fn imgprobe(a: &ImgprobeArgs) -> Result<()> {
    let train = io::load_images(&a.train)?;
    let test = io::load_images(&a.test)?;
    let cfg = a.opt.config();
    let r = train_image_probe(&train, &test, a.k, &cfg)?;
    write_json(
        &a.out,
        &json!({
            "k": r.k,
            "metrics": { "val_acc": r.val_acc, "test_acc": r.test_acc },
            "config": r.config,
            "seed": cfg.seed,
            "report": r.report,
            "inputs": { "train": path_str(&a.train), "test": path_str(&a.test) },
        }),
    )?;
    println!("test accuracy: {:.4}", r.test_acc);
    Ok(())
}

/// Probe, test set and the test scores on the probe's attributes.
fn probe_context(probe: &Path, test: &Path, pool: &Path) -> Result<(ProbeModel, ImageSet, conceptsel::projection::ScoreMatrix)> {
    let model = load_probe(probe)?;
    let (test, pool) = load_pair(test, pool)?;
    let sel = model
        .selection
        .as_ref()
        .ok_or_else(|| Error::Config("probe file has no selection".into()))?;
    let scores = semantic_project(&test, &selected_pool(&pool, sel)?)?;
    Ok((model, test, scores))
}

fn explain(a: &ExplainArgs) -> Result<()> {
    let (model, test, scores) = probe_context(&a.probe, &a.test, &a.pool)?;
    let class = test
        .class_index(&a.class)
        .ok_or_else(|| Error::Config(format!("unknown class {:?}", a.class)))?;
    let mut report = class_importance(&model, &scores, &test.labels, class, a.top)?;
    report.class_name = Some(a.class.clone());
    emit(
        a.out.as_deref(),
        &json!({
            "explanation": report,
            "config": {
                "class": a.class,
                "top": a.top,
                "probe": path_str(&a.probe),
                "test": path_str(&a.test),
                "pool": path_str(&a.pool),
            },
            "seed": model.seed,
        }),
    )
}

fn intervene_cmd(a: &InterveneArgs) -> Result<()> {
    let (model, test, scores) = probe_context(&a.probe, &a.test, &a.pool)?;
    if a.image >= test.len() {
        return Err(Error::BadIndex {
            index: a.image,
            len: test.len(),
        });
    }
    let attr = scores
        .attribute_names
        .iter()
        .position(|n| *n == a.attribute)
        .ok_or_else(|| Error::Config(format!("attribute {:?} is not in the probe's selection", a.attribute)))?;
    let r = intervene(&model, scores.scores.row(a.image), attr, a.delta)?;
    let name = |c: usize| test.class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
    let report = json!({
        "intervention": r,
        "old_class": name(r.old_pred),
        "new_class": name(r.new_pred),
        "flipped": r.flipped(),
        "true_class": name(test.labels[a.image]),
        "config": {
            "image": a.image,
            "attribute": a.attribute,
            "delta": a.delta,
            "probe": path_str(&a.probe),
            "test": path_str(&a.test),
            "pool": path_str(&a.pool),
        },
        "seed": model.seed,
    });
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    println!(
        "prediction: {} -> {}{}",
        name(r.old_pred),
        name(r.new_pred),
        if r.flipped() { " (flipped)" } else { "" }
    );
    Ok(())
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn render(a: &RenderArgs) -> Result<()> {
    if let Some(class) = &a.class {
        return write_text(a.out.as_deref(), &prompts::render_instance(class, a.domain.as_deref())?);
    }
    if let Some(file) = &a.classes_file {
        let classes = prompts::parse_attribute_list(&fs::read_to_string(file)?);
        let entries = classes
            .iter()
            .map(|c| Ok(json!({ "key": c, "text": prompts::render_instance(c, a.domain.as_deref())? })))
            .collect::<Result<Vec<_>>>()?;
        let kind = if a.domain.is_some() { "instance_domain" } else { "instance" };
        return emit(a.out.as_deref(), &json!({ "kind": kind, "prompts": entries }));
    }
    if let Some(group) = &a.group {
        let text = if a.superclass {
            prompts::render_superclass(group, &a.classes)?
        } else {
            prompts::render_batch(group, &a.classes)?
        };
        return write_text(a.out.as_deref(), &text);
    }
    Err(Error::Config("give --class, --classes-file or --group".into()))
}

fn parse(a: &ParseArgs) -> Result<()> {
    let mut all: Vec<String> = Vec::new();
    for path in &a.inputs {
        let parsed = prompts::parse_attributes(&fs::read_to_string(path)?);
        if parsed.empty_warning {
            log::warn!("{}: no attributes found", path.display());
        }
        for attr in parsed.attributes {
            if !all.contains(&attr) {
                all.push(attr);
            }
        }
    }
    if all.is_empty() {
        log::warn!("no attributes found in any response");
    }
    write_text(a.out.as_deref(), &prompts::format_attribute_list(&all))
}

fn project(a: &ProjectArgs) -> Result<()> {
    let (images, pool) = load_pair(&a.images, &a.pool)?;
    let pool = match &a.selection {
        Some(p) => selected_pool(&pool, &read_json(p)?)?,
        None => pool,
    };
    let mut scores = semantic_project(&images, &pool)?;
    if let Some(k) = a.binarize_top {
        scores = binarize_top_k(&scores, k)?;
    }
    io::save_scores(&scores, Some(&images.labels), Some(&images.class_names), &a.out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Validate(a) => {
            let (images, pool) = load_pair(&a.images, &a.pool)?;
            emit(None, &io::validate(&images, &pool)?)
        }
        Command::Project(a) => project(&a),
        Command::Select(a) => select(&a),
        Command::Probe(a) => probe(&a),
        Command::Imgprobe(a) => imgprobe(&a),
        Command::Explain(a) => explain(&a),
        Command::Intervene(a) => intervene_cmd(&a),
        Command::Prompts(PromptsCommand::Render(a)) => render(&a),
        Command::Prompts(PromptsCommand::Parse(a)) => parse(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::DivergenceDetected { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

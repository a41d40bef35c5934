//! Command-line front end. Every command writes its artifacts and one
//! `<command>.manifest.json` into `--out`.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 infeasible (a
//! robustness certificate for `adversarial`), 3 numerical failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use net2milp_core::adversarial::{
    build_adversarial, extract, margin_ratio, target_label, verify_adversarial, AdversarialResult, TargetRule,
};
use net2milp_core::bounds::{interval_propagate, lp_tighten, BoundSet, Interval, TightenMode};
use net2milp_core::caps::{self, CapsArchitecture};
use net2milp_core::encode::{encode_cnn, encode_dnn, InputMode, VarMap};
use net2milp_core::milp::{to_big_m, MilpModel};
use net2milp_core::network::{classify, Activation, LayerSpec, NetworkSpec};
use net2milp_core::solver::bnb::{branch_and_bound_with_clock, BnbConfig, SolveResult, SolveStatus};
use net2milp_core::tensor::{ConvParams, PoolParams, Tensor};
use net2milp_core::train::{accuracy, init_network, train, InitScheme, TrainError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::RunConfig;
use crate::dataset::{self, LabelledImages};
use crate::image::{encode_pgm, format_grid, load_image, Image};
use crate::lp::{read_lp, write_lp};
use crate::manifest::{RunManifest, TOOL_VERSION};
use crate::runtime::{StdClock, Threaded};
use crate::sidecar::{bounds_json, parse_varmap, to_json, varmap_json};
use crate::weights::{load_network, save_network};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "net2milp", version, about = "Compile ReLU networks into 0-1 MILPs, tighten bounds, solve, and build verified adversarial examples")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Global {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for per-unit bound tightening.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// JSON file overriding library defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Record zero wall time so manifests are byte-identical across runs.
    #[arg(long, global = true)]
    pub reproducible: bool,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Train a preset network with full-batch gradient descent.
    Train(TrainArgs),
    /// Encode a network as an LP file plus varmap and bounds sidecars.
    Encode(EncodeArgs),
    /// Compute per-unit bounds.
    Bounds(BoundsArgs),
    /// Solve an LP file with branch and bound.
    Solve(SolveArgs),
    /// Search for a minimal adversarial example and verify it.
    Adversarial(AdversarialArgs),
    /// Re-check an adversarial report against the forward pass.
    Verify(VerifyArgs),
    /// Re-emit an LP file, optionally with indicators lowered to big-M rows.
    ExportLp(ExportArgs),
    /// Capsule routing, squash and parameter-count demos.
    Caps(CapsArgs),
    /// Write the synthetic 8x8 glyph dataset.
    Fixtures(FixturesArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Encode(_) => "encode",
            Command::Bounds(_) => "bounds",
            Command::Solve(_) => "solve",
            Command::Adversarial(_) => "adversarial",
            Command::Verify(_) => "verify",
            Command::ExportLp(_) => "export-lp",
            Command::Caps(_) => "caps",
            Command::Fixtures(_) => "fixtures",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Preset {
    /// Flatten, dense 16 and 8 ReLU units, linear output.
    #[value(name = "dense-16-8")]
    #[serde(rename = "dense-16-8")]
    Dense16x8,
    /// Flatten, dense 8 ReLU units, linear output.
    #[value(name = "dense-8")]
    #[serde(rename = "dense-8")]
    Dense8,
    /// Two 3x3 kernels, 2x2 max-pool, flatten, linear output.
    #[value(name = "conv-small")]
    #[serde(rename = "conv-small")]
    ConvSmall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitArg {
    #[value(name = "he_gaussian")]
    HeGaussian,
    #[value(name = "uniform_kernel")]
    UniformKernel,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Directory with labels.csv and text grids.
    #[arg(long, required_unless_present = "idx_images")]
    pub data: Option<PathBuf>,
    /// MNIST IDX image file, used with --idx-labels.
    #[arg(long, requires = "idx_labels")]
    pub idx_images: Option<PathBuf>,
    #[arg(long)]
    pub idx_labels: Option<PathBuf>,
    /// Read only the first N IDX records.
    #[arg(long)]
    pub idx_limit: Option<usize>,
    #[arg(long, value_enum, default_value = "dense-16-8")]
    pub preset: Preset,
    /// Class count; defaults to the largest label plus one.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Dnn,
    Cnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundMode {
    Interval,
    Lp,
    Milp,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BoxArgs {
    /// Lower end of the per-pixel input box.
    #[arg(long, default_value_t = 0.0)]
    pub box_lo: f64,
    /// Upper end of the per-pixel input box.
    #[arg(long, default_value_t = 1.0)]
    pub box_hi: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EncodeArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Defaults to dnn for dense-only networks, cnn otherwise.
    #[arg(long, value_enum)]
    pub arch: Option<Arch>,
    #[arg(long, value_enum, default_value = "interval")]
    pub bounds: BoundMode,
    /// `box` or `fixed:PATH` (text grid or PGM).
    #[arg(long, default_value = "box")]
    pub input: String,
    #[command(flatten)]
    pub input_box: BoxArgs,
    /// Keep CNN biases instead of encoding them as zero.
    #[arg(long)]
    pub include_biases: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BoundsArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, value_enum, default_value = "interval")]
    pub mode: BoundMode,
    #[command(flatten)]
    pub input_box: BoxArgs,
    /// Bound the bias-free copy of the network, as the default CNN
    /// encoding requires.
    #[arg(long)]
    pub zero_biases: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolveArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Varmap sidecar; adds per-layer unit values to the solution.
    #[arg(long)]
    pub varmap: Option<PathBuf>,
    #[arg(long)]
    pub node_limit: Option<usize>,
    /// Seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AdversarialArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Text grid or PGM, pixels in [0, 1].
    #[arg(long)]
    pub image: PathBuf,
    /// Label the network must assign to the image.
    #[arg(long)]
    pub label: usize,
    /// `plus5` for (label + 5) mod 10, or `explicit:T`.
    #[arg(long, default_value = "plus5")]
    pub target_rule: String,
    /// Largest change of any one pixel.
    #[arg(long)]
    pub eps_cap: Option<f64>,
    /// Target score must be this multiple of every other score.
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long, value_enum)]
    pub arch: Option<Arch>,
    #[arg(long, value_enum, default_value = "lp")]
    pub bounds: BoundMode,
    #[arg(long)]
    pub node_limit: Option<usize>,
    /// Seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// report.json written by `adversarial`.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Replace indicators by big-M rows computed from variable bounds.
    #[arg(long)]
    pub big_m: bool,
    /// File name inside --out.
    #[arg(long, default_value = "export.lp")]
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Demo {
    Routing,
    Squash,
    Params,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CapsArgs {
    #[arg(long, value_enum)]
    pub demo: Demo,
    /// Routing iterations.
    #[arg(long, default_value_t = caps::DEFAULT_ITERATIONS)]
    pub iterations: usize,
    /// Comma-separated vector for the squash demo.
    #[arg(long, default_value = "1,0", allow_hyphen_values = true)]
    pub vector: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FixturesArgs {
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 20)]
    pub per_class: usize,
    /// Target directory; defaults to `<out>/fixtures`.
    #[arg(long)]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Input(_) => EXIT_USAGE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Settings shared by every command.
#[derive(Debug, Clone)]
pub struct Context {
    pub seed: u64,
    pub threads: usize,
    pub out: PathBuf,
    pub config: RunConfig,
}

impl Context {
    fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.out.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        info!("wrote {}", path.display());
        Ok(path)
    }
}

/// What a command reports back for its manifest.
#[derive(Debug, Default)]
pub struct Record {
    pub inputs: Vec<String>,
    pub result: Value,
}

impl Record {
    fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Help and version requests exit 0; other parse errors exit 1.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    let start = Instant::now();
    let g = &cli.global;
    if let Err(e) = fs::create_dir_all(&g.out) {
        eprintln!("error: {}: {e}", g.out.display());
        return EXIT_USAGE;
    }
    let config = match &g.config {
        None => Ok(RunConfig::default()),
        Some(p) => read_text(p).and_then(|t| RunConfig::parse(&t).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))),
    };
    let file_config = match &config {
        Ok(c) if g.config.is_some() => serde_json::to_value(c).unwrap_or(Value::Null),
        _ => Value::Null,
    };
    let mut record = Record::default();
    let outcome = config.and_then(|config| {
        let ctx = Context {
            seed: g.seed,
            threads: g.threads.max(1),
            out: g.out.clone(),
            config,
        };
        if let Some(p) = &g.config {
            record.input(p);
        }
        dispatch(&ctx, &cli.command, &mut record)
    });
    let code = match &outcome {
        Ok(code) => *code,
        Err(e) => {
            eprintln!("error: {e}");
            record.result = json!({ "error": e.to_string() });
            e.exit_code()
        }
    };
    let manifest = RunManifest {
        command: cli.command.name().into(),
        inputs: record.inputs,
        config: json!({
            "args": &cli.command,
            "file": file_config,
        }),
        seed: g.seed,
        threads: g.threads,
        tool_version: TOOL_VERSION.into(),
        wall_time_seconds: if g.reproducible { 0.0 } else { start.elapsed().as_secs_f64() },
        exit_code: code,
        result: record.result,
    };
    let path = g.out.join(format!("{}.manifest.json", cli.command.name()));
    if let Err(e) = fs::write(&path, manifest.to_json()) {
        eprintln!("error: {}: {e}", path.display());
    }
    code
}

pub fn dispatch(ctx: &Context, command: &Command, record: &mut Record) -> Result<i32, CliError> {
    match command {
        Command::Train(a) => cmd_train(ctx, a, record),
        Command::Encode(a) => cmd_encode(ctx, a, record),
        Command::Bounds(a) => cmd_bounds(ctx, a, record),
        Command::Solve(a) => cmd_solve(ctx, a, record),
        Command::Adversarial(a) => cmd_adversarial(ctx, a, record),
        Command::Verify(a) => cmd_verify(ctx, a, record),
        Command::ExportLp(a) => cmd_export(ctx, a, record),
        Command::Caps(a) => cmd_caps(ctx, a, record),
        Command::Fixtures(a) => cmd_fixtures(ctx, a, record),
    }
}

pub fn load_weights(path: &Path) -> Result<NetworkSpec, CliError> {
    load_network(&read_text(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_pixels(path: &Path, net: &NetworkSpec) -> Result<Image, CliError> {
    let img = load_image(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if img.pixels.len() != net.input_len() {
        return Err(CliError::Input(format!(
            "{}: {} pixels, the network expects {}",
            path.display(),
            img.pixels.len(),
            net.input_len()
        )));
    }
    Ok(img)
}

/// Untrained network of the given preset, all parameters zero.
pub fn preset_template(preset: Preset, h: usize, w: usize, classes: usize) -> Result<NetworkSpec, CliError> {
    let dense = |n_in: usize, n_out: usize, activation| LayerSpec::Dense {
        weights: Tensor::zeros(&[n_out, n_in]),
        bias: Tensor::zeros(&[n_out]),
        activation,
    };
    let n = h * w;
    let layers = match preset {
        Preset::Dense16x8 => vec![
            LayerSpec::Flatten,
            dense(n, 16, Activation::Relu),
            dense(16, 8, Activation::Relu),
            dense(8, classes, Activation::Linear),
        ],
        Preset::Dense8 => vec![LayerSpec::Flatten, dense(n, 8, Activation::Relu), dense(8, classes, Activation::Linear)],
        Preset::ConvSmall => {
            let bad = |e: net2milp_core::tensor::TensorError| CliError::Usage(format!("conv-small preset: {e}"));
            let conv = ConvParams::new(3, 1, 0).map_err(bad)?;
            let pool = PoolParams::new(2, 2).map_err(bad)?;
            let (ch, cw) = conv.output_dims(h, w).map_err(bad)?;
            let (ph, pw) = pool.output_dims(ch, cw).map_err(bad)?;
            vec![
                LayerSpec::Conv {
                    kernels: vec![Tensor::zeros(&[3, 3]); 2],
                    bias: vec![0.0; 2],
                    params: conv,
                },
                LayerSpec::MaxPool(pool),
                LayerSpec::Flatten,
                dense(2 * ph * pw, classes, Activation::Linear),
            ]
        }
    };
    NetworkSpec::new(vec![h, w], layers, classes).map_err(|e| CliError::Usage(format!("preset: {e}")))
}

fn cmd_train(ctx: &Context, a: &TrainArgs, rec: &mut Record) -> Result<i32, CliError> {
    let set: LabelledImages = match (&a.data, &a.idx_images, &a.idx_labels) {
        (Some(dir), _, _) => {
            rec.input(dir);
            dataset::load_dir(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?
        }
        (None, Some(images), Some(labels)) => {
            rec.input(images);
            rec.input(labels);
            dataset::load_idx(images, labels, a.idx_limit).map_err(|e| CliError::Input(e.to_string()))?
        }
        _ => return Err(CliError::Usage("pass --data DIR or --idx-images with --idx-labels".into())),
    };
    let first = set.images.first().ok_or_else(|| CliError::Input("dataset is empty".into()))?;
    let classes = a.classes.unwrap_or_else(|| set.class_count());
    let data = set.to_dataset(classes).map_err(|e| CliError::Input(e.to_string()))?;
    let mut config = ctx.config.train();
    config.seed = ctx.seed;
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(lr) = a.lr {
        config.learning_rate = lr;
    }
    if let Some(init) = a.init {
        config.init = match init {
            InitArg::HeGaussian => InitScheme::HeGaussian,
            InitArg::UniformKernel => InitScheme::UniformKernel,
        };
    }
    let template = preset_template(a.preset, first.height, first.width, classes)?;
    let net = init_network(&template, config.init, ctx.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let outcome = train(&net, &data, &config).map_err(|e| match e {
        TrainError::Diverged { .. } => CliError::Numerical(e.to_string()),
        other => CliError::Usage(other.to_string()),
    })?;
    let acc = accuracy(&outcome.net, &data).map_err(|e| CliError::Numerical(e.to_string()))?;
    ctx.write("weights.json", save_network(&outcome.net))?;
    let mut csv = String::from("epoch,loss\n");
    for (epoch, loss) in outcome.history.iter().enumerate() {
        let _ = writeln!(csv, "{epoch},{loss:e}");
    }
    ctx.write("loss.csv", csv)?;
    info!("trained {} epochs, accuracy {acc}", config.epochs);
    rec.result = json!({
        "classes": classes,
        "instances": data.len(),
        "epochs": config.epochs,
        "learning_rate": config.learning_rate,
        "initial_loss": outcome.history[0],
        "final_loss": outcome.history[outcome.history.len() - 1],
        "train_accuracy": acc,
    });
    Ok(EXIT_OK)
}

fn resolve_arch(net: &NetworkSpec, flag: Option<Arch>) -> Arch {
    flag.unwrap_or(if net.is_dense_only() { Arch::Dnn } else { Arch::Cnn })
}

fn input_box(net: &NetworkSpec, b: &BoxArgs) -> Result<Vec<Interval>, CliError> {
    if !(b.box_lo.is_finite() && b.box_hi.is_finite() && b.box_lo <= b.box_hi) {
        return Err(CliError::Usage(format!("input box [{}, {}] is not a finite interval", b.box_lo, b.box_hi)));
    }
    Ok(vec![Interval::new(b.box_lo, b.box_hi); net.input_len()])
}

/// Interval bounds, then per-unit tightening in `lp` and `milp` modes.
pub fn compute_bounds(ctx: &Context, net: &NetworkSpec, input: &[Interval], mode: BoundMode) -> Result<BoundSet, CliError> {
    let seed = interval_propagate(net, input).map_err(|e| CliError::Usage(e.to_string()))?;
    let tighten_mode = match mode {
        BoundMode::Interval => return Ok(seed),
        BoundMode::Lp => TightenMode::LpRelaxation,
        BoundMode::Milp => TightenMode::ExactMilp,
    };
    let mut config = ctx.config.tighten();
    config.mode = tighten_mode;
    let set = lp_tighten(net, &seed, &config, &StdClock::start(), &Threaded { threads: ctx.threads })
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    for w in &set.warnings {
        warn!("layer {} unit {}: {}", w.layer, w.unit, w.message);
    }
    Ok(set)
}

/// Network and bounds as the chosen encoder sees them.
fn encoder_view(net: &NetworkSpec, arch: Arch, include_biases: bool) -> NetworkSpec {
    if arch == Arch::Cnn && !include_biases {
        if net.has_nonzero_bias() {
            warn!("biases are encoded as zero; pass --include-biases to keep them");
        }
        net.without_biases()
    } else {
        net.clone()
    }
}

fn encode_with(ctx: &Context, net: &NetworkSpec, arch: Arch, bounds: &BoundSet, input: &InputMode, include_biases: bool) -> Result<(MilpModel, VarMap), CliError> {
    let result = match arch {
        Arch::Dnn => encode_dnn(net, bounds, input, &ctx.config.dnn()),
        Arch::Cnn => {
            let mut c = ctx.config.cnn();
            c.include_biases = include_biases;
            encode_cnn(net, bounds, input, &c)
        }
    };
    result.map_err(|e| CliError::Usage(format!("{} encoding: {e}", if arch == Arch::Dnn { "dnn" } else { "cnn" })))
}

fn stats_json(m: &MilpModel) -> Value {
    let s = m.stats();
    json!({
        "variables": s.variables,
        "binaries": s.binaries,
        "equalities": s.equalities,
        "inequalities": s.inequalities,
        "indicators": s.indicators,
    })
}

fn cmd_encode(ctx: &Context, a: &EncodeArgs, rec: &mut Record) -> Result<i32, CliError> {
    rec.input(&a.weights);
    let net = load_weights(&a.weights)?;
    let arch = resolve_arch(&net, a.arch);
    let include_biases = a.include_biases || ctx.config.cnn().include_biases;
    let view = encoder_view(&net, arch, include_biases);
    let input = match a.input.as_str() {
        "box" => InputMode::uniform_box(net.input_len(), a.input_box.box_lo, a.input_box.box_hi),
        s => match s.strip_prefix("fixed:") {
            Some(p) => {
                let p = Path::new(p);
                rec.input(p);
                InputMode::Fixed(load_pixels(p, &net)?.pixels)
            }
            None => return Err(CliError::Usage(format!("--input must be `box` or `fixed:PATH`, got {s:?}"))),
        },
    };
    // reject architecture mismatches before spending time on bounds
    if arch == Arch::Cnn {
        net2milp_core::encode::block_dims(&view).map_err(|e| CliError::Usage(format!("cnn encoding: {e}")))?;
    } else if let Some((k, l)) = net.layers().iter().enumerate().find(|(_, l)| matches!(l, LayerSpec::Conv { .. } | LayerSpec::MaxPool(_))) {
        return Err(CliError::Usage(format!("dnn encoding: layer {k} ({}) cannot be encoded here", l.kind())));
    }
    let bounds = compute_bounds(ctx, &view, &input_box(&net, &a.input_box)?, a.bounds)?;
    let (model, vars) = encode_with(ctx, &view, arch, &bounds, &input, include_biases)?;
    ctx.write("model.lp", write_lp(&model))?;
    ctx.write("model.varmap.json", varmap_json(&model, &vars))?;
    ctx.write("bounds.json", bounds_json(&bounds))?;
    rec.result = json!({
        "arch": arch,
        "bounds": a.bounds,
        "bound_warnings": bounds.warnings.len(),
        "model": stats_json(&model),
    });
    Ok(EXIT_OK)
}

fn cmd_bounds(ctx: &Context, a: &BoundsArgs, rec: &mut Record) -> Result<i32, CliError> {
    rec.input(&a.weights);
    let net = load_weights(&a.weights)?;
    let view = if a.zero_biases { net.without_biases() } else { net };
    let set = compute_bounds(ctx, &view, &input_box(&view, &a.input_box)?, a.mode)?;
    ctx.write("bounds.json", bounds_json(&set))?;
    let widths: Vec<f64> = set.layers.iter().flat_map(|l| l.pre.as_ref().unwrap_or(&l.post).iter().map(|i| i.hi - i.lo)).collect();
    rec.result = json!({
        "mode": a.mode,
        "units": widths.len(),
        "mean_width": widths.iter().sum::<f64>() / widths.len().max(1) as f64,
        "warnings": set.warnings.len(),
    });
    Ok(EXIT_OK)
}

fn solver_config(ctx: &Context, node_limit: Option<usize>, time_limit: Option<f64>) -> BnbConfig {
    let mut c = ctx.config.solver();
    if let Some(n) = node_limit {
        c.node_limit = n;
    }
    if time_limit.is_some() {
        c.time_budget = time_limit;
    }
    c
}

fn status_code(status: SolveStatus) -> i32 {
    match status {
        SolveStatus::Infeasible => EXIT_INFEASIBLE,
        SolveStatus::Unbounded | SolveStatus::NumericalFailure => EXIT_NUMERICAL,
        _ => EXIT_OK,
    }
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn cmd_solve(ctx: &Context, a: &SolveArgs, rec: &mut Record) -> Result<i32, CliError> {
    rec.input(&a.model);
    let model = read_lp(&read_text(&a.model)?).map_err(|e| CliError::Input(format!("{}: {e}", a.model.display())))?;
    let vars = match &a.varmap {
        Some(p) => {
            rec.input(p);
            let doc = parse_varmap(&read_text(p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            Some(doc.resolve(&model).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let r: SolveResult = branch_and_bound_with_clock(&model, &solver_config(ctx, a.node_limit, a.time_limit), &StdClock::start());
    let values: Vec<Value> = if r.has_incumbent() {
        model.vars().iter().map(|v| json!({ "name": v.name, "value": r.value(v.id) })).collect()
    } else {
        Vec::new()
    };
    let layers: Option<Vec<Vec<f64>>> = vars
        .filter(|_| r.has_incumbent())
        .map(|vm| vm.layers.iter().map(|l| l.out().iter().map(|&v| r.value(v)).collect()).collect());
    let summary = json!({
        "status": r.status.as_str(),
        "objective": finite_or_null(r.objective),
        "best_bound": finite_or_null(r.best_bound),
        "nodes": r.nodes,
    });
    let mut doc = summary.clone();
    doc["values"] = json!(values);
    if let Some(layers) = layers {
        doc["layer_outputs"] = json!(layers);
    }
    ctx.write("solution.json", to_json(&doc))?;
    rec.result = summary;
    match status_code(r.status) {
        EXIT_NUMERICAL => Err(CliError::Numerical(format!("solver status {}", r.status.as_str()))),
        code => Ok(code),
    }
}

pub fn parse_target_rule(s: &str) -> Result<TargetRule, CliError> {
    match s {
        "plus5" | "plus_five_mod_ten" => Ok(TargetRule::PlusFiveModTen),
        _ => s
            .strip_prefix("explicit:")
            .and_then(|t| t.parse().ok())
            .map(TargetRule::Explicit)
            .ok_or_else(|| CliError::Usage(format!("--target-rule must be `plus5` or `explicit:N`, got {s:?}"))),
    }
}

fn parse_status(s: &str) -> Option<SolveStatus> {
    [
        SolveStatus::Optimal,
        SolveStatus::Infeasible,
        SolveStatus::Unbounded,
        SolveStatus::NodeLimit,
        SolveStatus::TimeLimit,
        SolveStatus::NumericalFailure,
    ]
    .into_iter()
    .find(|st| st.as_str() == s)
}

/// `report.json` of the adversarial command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialReport {
    pub status: String,
    pub original_label: usize,
    pub target: usize,
    pub margin_factor: f64,
    pub eps_max: f64,
    /// Label of the solver's output scores.
    pub label: usize,
    /// Target score over the largest positive rival; absent when no rival
    /// is positive.
    pub achieved_margin: Option<f64>,
    pub total_change: f64,
    pub max_change: f64,
    pub objective: f64,
    pub nodes: usize,
    pub verified: bool,
    pub failures: Vec<String>,
    pub oracle_scores: Vec<f64>,
    pub scores: Vec<f64>,
    pub original: Vec<f64>,
    pub image: Vec<f64>,
    pub eps: Vec<f64>,
    /// Solver values of every layer output.
    pub claimed: Vec<Vec<f64>>,
}

impl AdversarialReport {
    pub fn to_result(&self) -> Result<AdversarialResult, CliError> {
        let status = parse_status(&self.status).ok_or_else(|| CliError::Input(format!("unknown status {:?}", self.status)))?;
        Ok(AdversarialResult {
            status,
            original: self.original.clone(),
            original_label: self.original_label,
            target: self.target,
            image: self.image.clone(),
            eps: self.eps.clone(),
            scores: self.scores.clone(),
            label: self.label,
            margin: margin_ratio(&self.scores, self.target),
            claimed: self.claimed.clone(),
            objective: self.objective,
            nodes: self.nodes,
        })
    }
}

fn cmd_adversarial(ctx: &Context, a: &AdversarialArgs, rec: &mut Record) -> Result<i32, CliError> {
    rec.input(&a.weights);
    rec.input(&a.image);
    let net = load_weights(&a.weights)?;
    let img = load_pixels(&a.image, &net)?;
    let input = Tensor::new(net.input_shape().to_vec(), img.pixels.clone()).map_err(|e| CliError::Input(e.to_string()))?;
    let (oracle_label, _) = classify(&net, &input).map_err(|e| CliError::Input(e.to_string()))?;
    if oracle_label != a.label {
        return Err(CliError::Usage(format!("the network labels the image {oracle_label}, not {}", a.label)));
    }
    let mut cfg = ctx.config.adversarial();
    cfg.target = parse_target_rule(&a.target_rule)?;
    if let Some(e) = a.eps_cap {
        cfg.eps_max = e;
    }
    if let Some(m) = a.margin {
        cfg.margin = m;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let target = target_label(a.label, cfg.target, net.class_count()).map_err(|e| CliError::Usage(e.to_string()))?;
    let arch = resolve_arch(&net, a.arch);
    // Any adversarial lies in the unit box and within eps_max of the
    // original, so bounding over that intersection loses nothing and gives
    // much smaller big-M constants. The verdict runs the real network, so
    // biases are always encoded.
    let reach: Vec<Interval> = img
        .pixels
        .iter()
        .map(|&x| Interval::new((x - cfg.eps_max).max(0.0), (x + cfg.eps_max).min(1.0)))
        .collect();
    let bounds = compute_bounds(ctx, &net, &reach, a.bounds)?;
    let input = InputMode::Boxed {
        lb: reach.iter().map(|i| i.lo).collect(),
        ub: reach.iter().map(|i| i.hi).collect(),
    };
    let (model, vars) = encode_with(ctx, &net, arch, &bounds, &input, true)?;
    let adv = build_adversarial(&model, &vars, &img.pixels, a.label, &cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    info!("adversarial model: {:?}", adv.model.stats());
    let solved = branch_and_bound_with_clock(&adv.model, &solver_config(ctx, a.node_limit, a.time_limit), &StdClock::start());
    let base = json!({
        "status": solved.status.as_str(),
        "original_label": a.label,
        "target": target,
        "margin_factor": cfg.margin,
        "eps_max": cfg.eps_max,
        "nodes": solved.nodes,
    });
    match solved.status {
        SolveStatus::Infeasible => {
            let mut cert = base.clone();
            cert["statement"] = json!(format!(
                "no image within {} of the original per pixel gives class {target} a score {} times every other score",
                cfg.eps_max, cfg.margin
            ));
            ctx.write("certificate.json", to_json(&cert))?;
            rec.result = cert;
            return Ok(EXIT_INFEASIBLE);
        }
        SolveStatus::Unbounded | SolveStatus::NumericalFailure => {
            rec.result = base;
            return Err(CliError::Numerical(format!("solver status {}", solved.status.as_str())));
        }
        _ if !solved.has_incumbent() => {
            rec.result = base;
            return Err(CliError::Numerical(format!("no adversarial found before the {} was reached", solved.status.as_str())));
        }
        _ => {}
    }
    let result = extract(&adv, &solved);
    let verdict = verify_adversarial(&net, &result, &cfg);
    let report = AdversarialReport {
        status: result.status.as_str().into(),
        original_label: a.label,
        target,
        margin_factor: cfg.margin,
        eps_max: cfg.eps_max,
        label: result.label,
        achieved_margin: Some(margin_ratio(&verdict.scores, target)).filter(|m| m.is_finite()),
        total_change: result.total_change(),
        max_change: result.max_change(),
        objective: result.objective,
        nodes: result.nodes,
        verified: verdict.passed(),
        failures: verdict.failures.iter().map(ToString::to_string).collect(),
        oracle_scores: verdict.scores.clone(),
        scores: result.scores.clone(),
        original: result.original.clone(),
        image: result.image.clone(),
        eps: result.eps.clone(),
        claimed: result.claimed.clone(),
    };
    let shown = Image::new(img.height, img.width, result.image.iter().map(|v| v.clamp(0.0, 1.0)).collect());
    ctx.write("adversarial.pgm", encode_pgm(&shown))?;
    ctx.write("adversarial.txt", format_grid(&Image::new(img.height, img.width, result.image.clone())))?;
    ctx.write("report.json", to_json(&report))?;
    let mut summary = base;
    summary["verified"] = json!(report.verified);
    summary["achieved_margin"] = json!(report.achieved_margin);
    summary["total_change"] = json!(report.total_change);
    summary["max_change"] = json!(report.max_change);
    rec.result = summary;
    if report.verified {
        Ok(EXIT_OK)
    } else {
        Err(CliError::Numerical(format!("verification failed: {}", report.failures.join("; "))))
    }
}

fn cmd_verify(ctx: &Context, a: &VerifyArgs, rec: &mut Record) -> Result<i32, CliError> {
    rec.input(&a.weights);
    rec.input(&a.report);
    let net = load_weights(&a.weights)?;
    let report: AdversarialReport =
        serde_json::from_str(&read_text(&a.report)?).map_err(|e| CliError::Input(format!("{}: {e}", a.report.display())))?;
    let result = report.to_result()?;
    let mut cfg = ctx.config.adversarial();
    cfg.margin = report.margin_factor;
    cfg.eps_max = report.eps_max;
    cfg.target = TargetRule::Explicit(report.target);
    let verdict = verify_adversarial(&net, &result, &cfg);
    let failures: Vec<String> = verdict.failures.iter().map(ToString::to_string).collect();
    let doc = json!({
        "passed": verdict.passed(),
        "failures": failures,
        "oracle_scores": verdict.scores,
    });
    ctx.write("verify.json", to_json(&doc))?;
    rec.result = doc;
    if verdict.passed() {
        Ok(EXIT_OK)
    } else {
        Err(CliError::Numerical(format!("verification failed: {}", failures.join("; "))))
    }
}

fn cmd_export(ctx: &Context, a: &ExportArgs, rec: &mut Record) -> Result<i32, CliError> {
    rec.input(&a.model);
    let model = read_lp(&read_text(&a.model)?).map_err(|e| CliError::Input(format!("{}: {e}", a.model.display())))?;
    let model = if a.big_m {
        to_big_m(&model).map_err(|e| CliError::Usage(e.to_string()))?
    } else {
        model
    };
    ctx.write(&a.name, write_lp(&model))?;
    rec.result = json!({ "big_m": a.big_m, "model": stats_json(&model) });
    Ok(EXIT_OK)
}

/// Two lower capsules voting for two classes: class 0 gets perpendicular
/// predictions (a house whose parts disagree), class 1 nearly parallel ones
/// (a boat whose parts agree).
pub fn routing_geometry() -> Vec<Vec<Vec<f64>>> {
    vec![vec![vec![1.0, 0.0], vec![0.7, 0.7]], vec![vec![0.0, 1.0], vec![0.7, 0.72]]]
}

pub fn caps_report(a: &CapsArgs) -> Result<String, CliError> {
    let mut out = String::new();
    match a.demo {
        Demo::Params => {
            let arch = CapsArchitecture::default();
            let p = caps::param_count(&arch);
            let (conv, _) = arch.conv_side();
            let (grid, exact) = arch.primary_side();
            let _ = writeln!(out, "conv output: {0}x{0} -> {1}x{1}x{2}", arch.input_side, conv, arch.conv_kernels);
            let _ = writeln!(out, "primary grid: {grid}x{grid}{}", if exact { "" } else { " (stride leaves a remainder, rounded down)" });
            let _ = writeln!(out, "conv layer          {}", p.conv);
            let _ = writeln!(out, "primary capsules    {}", p.primary);
            let _ = writeln!(out, "digit capsules      {}", p.digit);
            let _ = writeln!(out, "sum without decoder {}", p.without_decoder());
            let _ = writeln!(out, "decoder             {}", p.decoder);
            let _ = writeln!(out, "sum with decoder    {}", p.with_decoder());
        }
        Demo::Routing => {
            let r = caps::route(&routing_geometry(), a.iterations).map_err(|e| CliError::Usage(e.to_string()))?;
            for (t, s) in r.history.iter().enumerate() {
                let _ = writeln!(out, "iteration {}", t + 1);
                for (i, row) in s.couplings.iter().enumerate() {
                    let cells: Vec<String> = row.iter().map(|c| format!("{c:.6}")).collect();
                    let _ = writeln!(out, "  c[{i}] = [{}]", cells.join(", "));
                }
            }
            for (j, v) in r.v.iter().enumerate() {
                let _ = writeln!(out, "|v[{j}]| = {:.6}", caps::norm(v));
            }
        }
        Demo::Squash => {
            let s: Vec<f64> = a
                .vector
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| CliError::Usage(format!("--vector must be comma-separated reals, got {:?}", a.vector)))?;
            let v = caps::squash(&s);
            let cells: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
            let _ = writeln!(out, "squash = [{}]", cells.join(", "));
            let _ = writeln!(out, "|s| = {}", caps::norm(&s));
            let _ = writeln!(out, "|squash| = {}", caps::norm(&v));
        }
    }
    Ok(out)
}

fn cmd_caps(ctx: &Context, a: &CapsArgs, rec: &mut Record) -> Result<i32, CliError> {
    let text = caps_report(a)?;
    print!("{text}");
    let demo = match a.demo {
        Demo::Routing => "routing",
        Demo::Squash => "squash",
        Demo::Params => "params",
    };
    ctx.write(&format!("caps-{demo}.txt"), &text)?;
    rec.result = json!({ "demo": demo, "lines": text.lines().count() });
    Ok(EXIT_OK)
}

fn cmd_fixtures(ctx: &Context, a: &FixturesArgs, rec: &mut Record) -> Result<i32, CliError> {
    if !(2..=10).contains(&a.classes) || a.per_class == 0 {
        return Err(CliError::Usage("fixtures need 2 to 10 classes and at least one image per class".into()));
    }
    let dir = a.dir.clone().unwrap_or_else(|| ctx.out.join("fixtures"));
    let set = dataset::glyph_fixtures(a.classes, a.per_class, ctx.seed);
    dataset::save_dir(&dir, &set).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    rec.result = json!({ "dir": dir.display().to_string(), "images": set.images.len(), "classes": a.classes });
    Ok(EXIT_OK)
}

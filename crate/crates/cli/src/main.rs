use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

use sparsae_core::harness::config::parse_config_text;
use sparsae_core::harness::experiment::{run_sweep, sweep_to_csv};
use sparsae_core::harness::io::{self, ModelMetadata};
use sparsae_core::harness::{generate_dataset, pod_report, run_experiment, ExperimentConfig, Summary, SweepGrid};
use sparsae_core::model::mean_loss;
use sparsae_core::pde_data::{Dataset, PodRank};
use sparsae_core::postproc::run_postprocessing;

#[derive(Parser, Debug)]
#[command(name = "sparsae", version, about = "Sparse autoencoders for PDE snapshot data")]
struct Cli {
    /// Random seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for every output file.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train/test snapshot files.
    Generate(ExpArgs),
    /// Train an autoencoder and write the best model plus per-epoch metrics.
    Train(ExpArgs),
    /// Latent truncated SVD followed by bias propagation.
    Postprocess {
        #[arg(long)]
        model: PathBuf,
        /// Output model path (default: `<out-dir>/<stem>.post.json`).
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Report size and losses of a stored model.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Proper orthogonal decomposition baseline.
    Pod {
        #[arg(long, conflicts_with = "tol")]
        rank: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Grid over learning rates, regularisation constants and seeds.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        etas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        lambdas: Vec<f64>,
        /// Number of consecutive seeds starting at `--seed`.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[command(flatten)]
        exp: ExpArgs,
    },
}

#[derive(Args, Debug, Default)]
struct ExpArgs {
    #[arg(long)]
    equation: Option<String>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    init_density: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    c_tol: Option<f64>,
    /// Layer widths, e.g. `101,50,10,5,10,50,101`.
    #[arg(long, value_delimiter = ',')]
    layer_sizes: Option<Vec<usize>>,
    #[arg(long)]
    l_enc: Option<usize>,
    /// Reaction-diffusion grid points per axis.
    #[arg(long = "grid")]
    rd_grid: Option<usize>,
    /// Directory holding the snapshot files (default: out-dir).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    model_path: Option<PathBuf>,
    #[arg(long)]
    metrics_path: Option<PathBuf>,
    /// Record elapsed seconds in the metrics file.
    #[arg(long)]
    wall_time: bool,
}

impl ExpArgs {
    fn overrides(&self, seed: Option<u64>) -> Map<String, Value> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.into(), v);
            }
        };
        put("equation", self.equation.as_deref().map(canonical_equation).map(Value::from));
        put("optimizer", self.optimizer.as_ref().map(|s| s.to_lowercase().into()));
        put("eta", self.eta.map(Value::from));
        put("lambda", self.lambda.map(Value::from));
        put("init_density", self.init_density.map(Value::from));
        put("epochs", self.epochs.map(Value::from));
        put("batch_size", self.batch_size.map(Value::from));
        put("c_tol", self.c_tol.map(Value::from));
        put("layer_sizes", self.layer_sizes.clone().map(Value::from));
        put("l_enc", self.l_enc.map(Value::from));
        put("rd_grid", self.rd_grid.map(Value::from));
        put("data_dir", self.data_dir.as_ref().map(|p| p.to_string_lossy().into()));
        put("model_path", self.model_path.as_ref().map(|p| p.to_string_lossy().into()));
        put("metrics_path", self.metrics_path.as_ref().map(|p| p.to_string_lossy().into()));
        put("seed", seed.map(Value::from));
        if self.wall_time {
            m.insert("wall_time".into(), Value::Bool(true));
        }
        m
    }
}

fn canonical_equation(s: &str) -> String {
    s.parse::<sparsae_core::Equation>()
        .map(|e| e.to_string())
        .unwrap_or_else(|_| s.to_string())
}

struct Ctx {
    cfg: ExperimentConfig,
    out_dir: PathBuf,
    threads: usize,
}

impl Ctx {
    fn new(cli: &Cli, exp: &ExpArgs) -> Result<Self> {
        let file = match &cli.config {
            Some(p) => Some(parse_config_text(&io::read_text(p)?)?),
            None => None,
        };
        let cfg = ExperimentConfig::resolve(file.as_ref(), &exp.overrides(cli.seed))?;
        Ok(Ctx {
            cfg,
            out_dir: cli.out_dir.clone(),
            threads: cli.threads,
        })
    }

    fn data_dir(&self) -> &Path {
        self.cfg.data_dir.as_deref().unwrap_or(&self.out_dir)
    }

    fn load_data(&self) -> Result<Dataset> {
        io::load_dataset(self.data_dir(), self.cfg.equation).with_context(|| {
            format!(
                "cannot load {} snapshots from {} (run `sparsae generate` first)",
                self.cfg.equation,
                self.data_dir().display()
            )
        })
    }

    fn metadata(&self) -> ModelMetadata {
        ModelMetadata {
            seed: Some(self.cfg.seed),
            config_hash: Some(self.cfg.hash()),
            note: None,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Generate(exp) => generate(&Ctx::new(cli, exp)?),
        Command::Train(exp) => train(&Ctx::new(cli, exp)?),
        Command::Postprocess { model, output, exp } => postprocess(&Ctx::new(cli, exp)?, model, output.as_deref()),
        Command::Evaluate { model, exp } => evaluate(&Ctx::new(cli, exp)?, model),
        Command::Pod { rank, tol, exp } => {
            let rank = match (rank, tol) {
                (Some(r), _) => PodRank::Fixed(*r),
                (None, Some(t)) => PodRank::Tolerance(*t),
                (None, None) => bail!("pod needs --rank or --tol"),
            };
            pod(&Ctx::new(cli, exp)?, rank)
        }
        Command::Sweep {
            etas,
            lambdas,
            seeds,
            exp,
        } => sweep(&Ctx::new(cli, exp)?, etas, lambdas, *seeds),
    }
}

fn generate(ctx: &Ctx) -> Result<ExitCode> {
    let (data, diag) = generate_dataset(ctx.cfg.equation, ctx.cfg.rd_grid)?;
    let (train, test) = io::save_dataset(ctx.data_dir(), ctx.cfg.equation, &data)?;
    println!("{}: {} x {} -> {}", ctx.cfg.equation, data.train.dim(), data.train.len(), train.display());
    println!("{}: {} x {} -> {}", ctx.cfg.equation, data.test.dim(), data.test.len(), test.display());
    if let Some(d) = diag {
        println!(
            "cfl {:.4}  max|u| {:.4}  max|v| {:.4}  symmetry defect {:.3e}",
            d.cfl, d.max_abs_u, d.max_abs_v, d.symmetry_defect
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn train(ctx: &Ctx) -> Result<ExitCode> {
    let data = ctx.load_data()?;
    let run = run_experiment(&ctx.cfg, &data)?;
    let name = ctx.cfg.run_name();
    let model_path = ctx
        .cfg
        .model_path
        .clone()
        .unwrap_or_else(|| ctx.out_dir.join(format!("{name}.model.json")));
    let metrics_path = ctx
        .cfg
        .metrics_path
        .clone()
        .unwrap_or_else(|| ctx.out_dir.join(format!("{name}.metrics.csv")));
    io::save_metrics(&metrics_path, &run.outcome.metrics)?;
    if let Some(d) = run.outcome.divergence {
        eprintln!("training diverged at epoch {}, batch {}: loss = {}", d.epoch, d.batch, d.loss);
        return Ok(ExitCode::from(2));
    }
    io::save_model(&model_path, &run.outcome.best, &ctx.metadata())?;
    let summary = Summary::new(&ctx.cfg, &run.outcome.best, &data)?;
    println!("{}", Summary::HEADER);
    println!("{}", summary.row());
    println!("best epoch {}  model {}", run.outcome.best_epoch, model_path.display());
    Ok(ExitCode::SUCCESS)
}

fn model_stem(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    for suffix in [".model.json", ".json"] {
        if let Some(stem) = name.strip_suffix(suffix) {
            return stem.to_string();
        }
    }
    name
}

fn postprocess(ctx: &Ctx, model_path: &Path, output: Option<&Path>) -> Result<ExitCode> {
    let (model, mut meta) = io::load_model(model_path)?;
    let data = ctx.load_data()?;
    let (post, report) = run_postprocessing(&model, &data.train.x, &data.test.x, ctx.cfg.c_tol)?;
    let stem = model_stem(model_path);
    let out = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.out_dir.join(format!("{stem}.post.json")));
    meta.note = Some(format!("post-processed with c_tol = {}", ctx.cfg.c_tol));
    io::save_model(&out, &post, &meta)?;
    let report_path = out.with_extension("report.json");
    io::save_json(&report_path, &report)?;
    println!(
        "latent {} -> {}  params {} -> {}  eps {:.3e}",
        report.latent_dim_before, report.latent_dim_after, report.params_before, report.params_after, report.eps_used
    );
    println!(
        "train loss {:.3e} -> {:.3e}  test loss {:.3e} -> {:.3e}",
        report.train_loss_before, report.train_loss_after, report.test_loss_before, report.test_loss_after
    );
    println!("model {}  report {}", out.display(), report_path.display());
    Ok(ExitCode::SUCCESS)
}

fn evaluate(ctx: &Ctx, model_path: &Path) -> Result<ExitCode> {
    let (model, _) = io::load_model(model_path)?;
    let data = ctx.load_data()?;
    println!("layers {:?}", model.arch().layer_sizes());
    println!("params {}", model.count_nonzero_weights());
    println!("density {:.4}", model.density());
    println!("latent {}", model.effective_latent_dim());
    println!("train_loss {:.6e}", mean_loss(&model, &data.train.x)?);
    println!("test_loss {:.6e}", mean_loss(&model, &data.test.x)?);
    Ok(ExitCode::SUCCESS)
}

fn pod(ctx: &Ctx, rank: PodRank) -> Result<ExitCode> {
    let data = ctx.load_data()?;
    let r = pod_report(&data, rank)?;
    println!("rank {}", r.rank);
    let shown = (r.rank + 5).min(r.singular_values.len());
    let sv: Vec<String> = r.singular_values[..shown].iter().map(|s| format!("{s:.4e}")).collect();
    println!("singular values {}", sv.join(" "));
    println!("train relative energy error {:.3e}", r.train_energy_error);
    println!("train relative frobenius error {:.3e}", r.train_frobenius_error);
    println!("train loss {:.3e} (relative {:.3e})", r.train_loss.absolute, r.train_loss.relative);
    println!("test loss {:.3e} (relative {:.3e})", r.test_loss.absolute, r.test_loss.relative);
    Ok(ExitCode::SUCCESS)
}

fn sweep(ctx: &Ctx, etas: &[f64], lambdas: &[f64], seeds: u64) -> Result<ExitCode> {
    if seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let data = ctx.load_data()?;
    let grid = SweepGrid {
        etas: etas.to_vec(),
        lambdas: lambdas.to_vec(),
        seeds: (ctx.cfg.seed..ctx.cfg.seed + seeds).collect(),
    };
    let rows = run_sweep(&ctx.cfg, &grid, &data, ctx.threads)?;
    let path = ctx
        .out_dir
        .join(format!("{}_{}_sweep.csv", ctx.cfg.equation, ctx.cfg.optimizer));
    io::save_bytes(&path, &sweep_to_csv(&rows)?)?;
    println!("run  eta        lambda     seed  status    test_loss   post_params  post_latent");
    for r in &rows {
        let mark = match (r.best, r.best_sparse) {
            (true, true) => " best, best-sparse",
            (true, false) => " best",
            (false, true) => " best-sparse",
            _ => "",
        };
        println!(
            "{:<4} {:<10.3e} {:<10.3e} {:<5} {:<9} {:<11.3e} {:<12} {}{}",
            r.run, r.eta, r.lambda, r.seed, r.status, r.test_loss, r.post_params, r.post_latent_dim, mark
        );
    }
    println!("sweep {}", path.display());
    Ok(ExitCode::SUCCESS)
}

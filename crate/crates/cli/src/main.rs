use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod manifest;
mod svg;

use config::ConfigFile;

/// Exit status for numerical divergence.
const EXIT_DIVERGED: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "iafa", version, about = "Toy monocular 3D detection with instance-aware feature aggregation")]
struct Cli {
    /// Plain key=value settings; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Finite-difference check of every analytic gradient.
    Gradcheck(GradcheckArgs),
    /// Train the toy detector on generated scenes.
    TrainToy(TrainArgs),
    /// Average precision of KITTI-format detections.
    Eval(EvalArgs),
    /// Attention rows and a bird's-eye view of one scene.
    Render(RenderArgs),
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Also write the report and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Loss weights `center,regression,mask`.
    #[arg(long)]
    pub gamma: Option<String>,
    /// Train without the attention branch.
    #[arg(long)]
    pub no_iafa: bool,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub iafa_lr_scale: Option<f64>,
    /// `default` or `occlusion-heavy`.
    #[arg(long)]
    pub suite: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub det: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub calib: PathBuf,
    /// `3d`, `bev` or `both`.
    #[arg(long)]
    pub metric: Option<String>,
    /// `11` or `40`.
    #[arg(long)]
    pub criterion: Option<String>,
    /// Comma-separated class names.
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Scene seed.
    #[arg(long)]
    pub scene: Option<u64>,
    /// `default`, `occlusion-heavy` or `fixture` (the seed is ignored for `fixture`).
    #[arg(long)]
    pub suite: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("IAFA_THREADS") {
        let n: usize = v.parse().map_err(|_| anyhow::anyhow!("IAFA_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            anyhow::bail!("IAFA_THREADS must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    init_threads()?;
    let file = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Gradcheck(a) => commands::gradcheck(&a, &file),
        Command::TrainToy(a) => commands::train_toy(&a, &file).map(|()| true),
        Command::Eval(a) => commands::eval(&a, &file).map(|()| true),
        Command::Render(a) => commands::render(&a, &file).map(|()| true),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<iafa_core::Error>() {
                Some(iafa_core::Error::Divergence { .. }) => ExitCode::from(EXIT_DIVERGED),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

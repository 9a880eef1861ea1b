//! `rlms`: train, apply and inspect iterative style-transfer agents.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rlms_core::config::TrainConfig;
use rlms_core::error::{Error, Result};
use rlms_core::{gradcheck, imageio, metrics, trainer};

#[derive(Parser)]
#[command(name = "rlms", version, about = "Iterative image stylisation trained by reinforcement learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent on directories of content and style images.
    Train(TrainArgs),
    /// Emit the stylisation sequence for one content/style pair.
    Stylize(StylizeArgs),
    /// Measure a checkpoint over every content/style pair in two directories.
    Eval(EvalArgs),
    /// Compare every operation's gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// key=value configuration file; the flags below override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of content images.
    #[arg(long)]
    content_dir: Option<PathBuf>,
    /// Directory of style images.
    #[arg(long)]
    style_dir: Option<PathBuf>,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    out: PathBuf,
    /// Master seed for all random streams.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct StylizeArgs {
    /// Trained checkpoint file.
    #[arg(long)]
    ckpt: PathBuf,
    /// Content image (PNG or binary PPM).
    #[arg(long)]
    content: PathBuf,
    /// Style image (PNG or binary PPM).
    #[arg(long)]
    style: PathBuf,
    /// Number of stylisation steps to emit.
    #[arg(long, default_value_t = 10)]
    steps: usize,
    /// Output directory for seq_001.png and onwards.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained checkpoint file.
    #[arg(long)]
    ckpt: PathBuf,
    /// Directory of content images.
    #[arg(long)]
    content_dir: PathBuf,
    /// Directory of style images.
    #[arg(long)]
    style_dir: PathBuf,
    /// Sequence length per pair; metrics are reported at steps 1, 5, 10
    /// and the final step, where present.
    #[arg(long, default_value_t = 10)]
    steps: usize,
    /// Where to write the per-pair CSV report.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Base seed for the random restarts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random restarts per operation.
    #[arg(long, default_value_t = 5)]
    seeds: u32,
    /// Corrupt the named operation's measured error (test hook).
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RLMS_LOG", "info"))
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Stylize(args) => cmd_stylize(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => match cmd_gradcheck(args) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(4),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 = configuration or checkpoint contract, 2 = missing or unreadable
/// data, 3 = numeric abort.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Checkpoint(_) | Error::Container(_) => 1,
        Error::Data(_) | Error::Io(_) | Error::Image(_) => 2,
        Error::Numeric(_) => 3,
        _ => 1,
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    if let Some(dir) = args.content_dir {
        config.content_dir = dir;
    }
    if let Some(dir) = args.style_dir {
        config.style_dir = dir;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let outcome = trainer::train(&config, Some(&args.out))?;
    println!(
        "trained {} env steps over {} episodes; artifacts in '{}'",
        outcome.log.updates.last().map_or(0, |u| u.env_step),
        outcome.log.episodes.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_stylize(args: StylizeArgs) -> Result<()> {
    let ckpt = trainer::load_checkpoint(&args.ckpt)?;
    let content = imageio::load_image(&args.content)?;
    let style = imageio::load_image(&args.style)?;
    let sequence = trainer::generate_sequence(&ckpt.params, &content, &style, args.steps)?;
    std::fs::create_dir_all(&args.out)?;
    for (i, image) in sequence.iter().enumerate() {
        imageio::save_png(&args.out.join(format!("seq_{:03}.png", i + 1)), image)?;
    }
    println!("wrote {} images to '{}'", sequence.len(), args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ckpt = trainer::load_checkpoint(&args.ckpt)?;
    let indices = report_indices(args.steps);
    let report = metrics::evaluate(
        &ckpt.params,
        &ckpt.backbone,
        &args.content_dir,
        &args.style_dir,
        args.steps,
        &indices,
    )?;
    std::fs::write(&args.report, report.to_csv())?;
    print!("{}", report.summary());
    println!("report written to '{}'", args.report.display());
    Ok(())
}

/// Sequence indices measured by eval: 1, 5, 10 and the last step, where
/// the sequence is long enough.
fn report_indices(steps: usize) -> Vec<usize> {
    let mut indices: Vec<usize> = [1, 5, 10, steps]
        .into_iter()
        .filter(|&i| (1..=steps).contains(&i))
        .collect();
    indices.sort_unstable();
    indices.dedup();
    indices
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<bool> {
    let reports =
        gradcheck::run_standard_suite(args.seeds, args.seed, args.inject_fault.as_deref())?;
    let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(2).max(2);
    println!("{:<width$}  {:>9}  {:>12}  result", "op", "tolerance", "max rel err");
    let mut all_passed = true;
    for r in &reports {
        println!(
            "{:<width$}  {:>9.1e}  {:>12.3e}  {}",
            r.name,
            r.tolerance,
            r.max_rel_err,
            if r.passed() { "pass" } else { "FAIL" }
        );
        all_passed &= r.passed();
    }
    for r in reports.iter().filter(|r| !r.passed()) {
        eprintln!("gradient check failed: {}", r.name);
    }
    Ok(all_passed)
}

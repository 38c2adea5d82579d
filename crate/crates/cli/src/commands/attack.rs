use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Args;
use onepixel_core::campaign::plots::{emit_adversarial, emit_trace};
use onepixel_core::{decode_png, run_attack, AttackConfig, AttackDirection};

use crate::args::{log_oracle_stats, DeArgs, OracleArgs};

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// PNG image to attack
    pub image: PathBuf,

    /// mitosis-to-normal (minimize the score) or normal-to-mitosis (maximize it)
    #[arg(long, default_value = "mitosis-to-normal")]
    pub direction: AttackDirection,

    /// Identifier used in the record and output file names [default: image file stem]
    #[arg(long)]
    pub image_id: Option<String>,

    #[command(flatten)]
    pub oracle: OracleArgs,

    #[command(flatten)]
    pub de: DeArgs,

    /// Score the final image must cross (strictly) for success
    #[arg(long, default_value_t = 0.5)]
    pub success_threshold: f64,

    /// Score for a strong success [default: 0.05 for mitosis-to-normal,
    /// 0.95 for normal-to-mitosis]
    #[arg(long)]
    pub strong_threshold: Option<f64>,

    /// Stop as soon as the best candidate reaches the strong threshold
    #[arg(long)]
    pub early_stop_on_strong: bool,

    /// Directory for the adversarial PNG and convergence trace
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

pub fn run(args: AttackArgs) -> anyhow::Result<ExitCode> {
    let bytes = std::fs::read(&args.image).with_context(|| format!("reading {}", args.image.display()))?;
    let image = decode_png(&bytes).with_context(|| format!("decoding {}", args.image.display()))?;
    let image_id = args.image_id.clone().unwrap_or_else(|| {
        args.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into())
    });
    let config = AttackConfig {
        direction: args.direction,
        de: args.de.config(),
        success_threshold: args.success_threshold,
        strong_threshold: args
            .strong_threshold
            .unwrap_or_else(|| args.direction.default_strong_threshold()),
        early_stop_on_strong: args.early_stop_on_strong,
    };
    config.validate()?;
    let oracle = args.oracle.build()?;
    tracing::info!(image_id = %image_id, oracle = %args.oracle.describe(), direction = %args.direction, "attacking");

    let record = run_attack(&image_id, &image, &oracle, &config)?;
    log_oracle_stats(&oracle);
    if let Some(dir) = &args.out {
        emit_adversarial(&record.image_id, &image, &record.best_perturbation, dir)
            .with_context(|| format!("writing to {}", dir.display()))?;
        emit_trace(&record.image_id, &record.trace, dir).with_context(|| format!("writing to {}", dir.display()))?;
    }
    println!("{}", serde_json::to_string_pretty(&record)?);
    Ok(if record.outcome.is_success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(crate::EXIT_FAILED)
    })
}

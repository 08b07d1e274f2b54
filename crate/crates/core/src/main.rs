use std::path::{Path, PathBuf};
use std::process::ExitCode;

use candle_core::{DType, Device};
use clap::{Args, Parser, Subcommand};

use phystran_core::config::RunConfig;
use phystran_core::datapipe::{
    generate_dataset, generate_samples, load_manifest, verify_trajectory, OracleAnnotator,
    OracleVerifier, Taxonomy, VerifierClient,
};
use phystran_core::guidance::ModulationMode;
use phystran_core::model::ModelState;
use phystran_core::pipeline::{
    edit_from_text, evaluate_state, run_ablation, AblationVariant, EvalReport, VariantMetrics,
};
use phystran_core::synthworld::generate_trajectory;
use phystran_core::trainer::{load_checkpoint, prepare_samples, Stage, Trainer};
use phystran_core::{Frame, Result};

/// Physics-aware image editing on a synthetic transition world.
#[derive(Parser, Debug)]
#[command(name = "phystran", version)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ModulationArgs {
    /// Guidance schedule.
    #[arg(long, value_parser = ["smooth", "hard", "hard_switch", "structure_only", "texture_only"])]
    modulation: Option<String>,
    /// Hard-switch boundary in (0, 1).
    #[arg(long)]
    switch_point: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render, filter, verify and annotate a dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        per_type: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-render every manifest sample and re-run principle verification.
    Verify {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train a model from a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_parser = ["A", "B", "a", "b"])]
        stage: String,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Start from this checkpoint's parameters.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Write one loss record per step here.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[command(flatten)]
        modulation: ModulationArgs,
    },
    /// Edit one image.
    Edit {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        instruction: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        modulation: ModulationArgs,
    },
    /// Score a checkpoint on the held-out split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        modulation: ModulationArgs,
    },
    /// Train and score ablation variants.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated variant names.
        #[arg(
            long,
            default_value = "sft_only,reasoning_only,visual_only,full,hard_switch,dino_only,vae_only"
        )]
        variants: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps_a: Option<usize>,
        #[arg(long)]
        steps_b: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        modulation: ModulationArgs,
    },
    /// Print the table of a saved report.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

const REPORT_JSON: &str = "report.json";
const REPORT_JSONL: &str = "report.jsonl";
const REPORT_TABLE: &str = "report.txt";

fn apply_modulation(cfg: &mut RunConfig, m: &ModulationArgs) -> Result<()> {
    if let Some(mode) = &m.modulation {
        let mode: ModulationMode = mode.parse()?;
        cfg.train.modulation.mode = mode;
        cfg.edit.modulation.mode = mode;
    }
    if let Some(p) = m.switch_point {
        cfg.train.modulation.switch_point = p;
        cfg.edit.modulation.switch_point = p;
    }
    cfg.edit.modulation.validate()
}

fn verifier() -> Box<dyn VerifierClient> {
    #[cfg(feature = "http")]
    if let Some(v) = phystran_core::datapipe::http::HttpVerifier::from_env() {
        log::info!("using remote verifier at {}", v.url);
        return Box::new(v);
    }
    Box::new(OracleVerifier)
}

fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(REPORT_JSON), serde_json::to_string_pretty(report)?)?;
    std::fs::write(dir.join(REPORT_JSONL), report.to_jsonl()?)?;
    std::fs::write(dir.join(REPORT_TABLE), report.to_table())?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::GenData {
            out,
            per_type,
            seed,
        } => {
            cfg.gen.per_type = per_type.unwrap_or(cfg.gen.per_type);
            cfg.gen.seed = seed.unwrap_or(cfg.gen.seed);
            let v = verifier();
            let summary = generate_dataset(
                Taxonomy::shipped(),
                &cfg.gen,
                v.as_ref(),
                &OracleAnnotator,
                &out,
            )?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Verify { manifest } => {
            let v = verifier();
            let samples = load_manifest(&manifest)?;
            let mut retained = 0;
            for s in &samples {
                let traj = generate_trajectory(&s.spec, s.seed)?;
                let ids = v.propose(&traj)?;
                let rec = verify_trajectory(&traj, &ids, v.as_ref())?;
                retained += usize::from(rec.retained);
                println!(
                    "{}",
                    serde_json::json!({ "sample_id": s.sample_id, "verification": rec })
                );
            }
            eprintln!("{retained}/{} retained", samples.len());
        }
        Command::Train {
            manifest,
            stage,
            steps,
            seed,
            out,
            init,
            trace,
            alpha,
            lr,
            modulation,
        } => {
            apply_modulation(&mut cfg, &modulation)?;
            cfg.train.stage = stage.parse::<Stage>()?;
            cfg.train.steps = steps;
            cfg.train.seed = seed.unwrap_or(cfg.train.seed);
            cfg.train.alpha = alpha.unwrap_or(cfg.train.alpha);
            cfg.train.optimizer.lr = lr.unwrap_or(cfg.train.optimizer.lr);
            let state = match &init {
                Some(p) => load_checkpoint(p, &Device::Cpu)?.state,
                None => ModelState::new(&cfg.model, &Device::Cpu, DType::F32)?,
            };
            let samples = load_manifest(&manifest)?;
            let data = prepare_samples(&state, &samples, cfg.train.use_reasoning)?;
            let mut trainer = Trainer::new(state, cfg.train.clone())?;
            let mut lines = String::new();
            trainer.run(&data, steps, |l| {
                lines.push_str(&serde_json::to_string(l).unwrap_or_default());
                lines.push('\n');
                if l.step % 50 == 0 {
                    log::info!("step {} l_total {:.4}", l.step, l.l_total);
                }
            })?;
            if let Some(p) = trace {
                std::fs::write(p, lines)?;
            }
            trainer.save(&out)?;
        }
        Command::Edit {
            ckpt,
            input,
            instruction,
            seed,
            out,
            steps,
            modulation,
        } => {
            apply_modulation(&mut cfg, &modulation)?;
            cfg.edit.seed = seed.unwrap_or(cfg.edit.seed);
            cfg.edit.sample_steps = steps.unwrap_or(cfg.edit.sample_steps);
            let state = load_checkpoint(&ckpt, &Device::Cpu)?.state;
            let source = Frame::load_png(&input)?;
            let (edited, _) = edit_from_text(&state, &source, &instruction, &cfg.edit)?;
            let out = out.unwrap_or_else(|| input.with_extension("edited.png"));
            edited.save_png(&out)?;
            println!("{}", out.display());
        }
        Command::Eval {
            ckpt,
            out,
            seed,
            modulation,
        } => {
            apply_modulation(&mut cfg, &modulation)?;
            cfg.edit.seed = seed.unwrap_or(cfg.edit.seed);
            let state = load_checkpoint(&ckpt, &Device::Cpu)?.state;
            let (heldout, _) = generate_samples(
                Taxonomy::shipped(),
                &cfg.heldout_gen(),
                &OracleVerifier,
                &OracleAnnotator,
            )?;
            let cells = evaluate_state(&state, &heldout, &cfg.edit, cfg.eval.batch)?;
            let metrics = VariantMetrics::from_cells(cells, 0.0)?;
            let summary = serde_json::json!({
                "mean_oracle_mse": metrics.mean_oracle_mse,
                "predicate_pass_rate": metrics.predicate_pass_rate,
                "per_transition_mse": metrics.per_transition_mse,
                "per_transition_pass_rate": metrics.per_transition_pass_rate,
                "cells": metrics.cells,
            });
            std::fs::write(&out, serde_json::to_string_pretty(&summary)?)?;
            println!("mean_oracle_mse\t{:.6}", metrics.mean_oracle_mse);
            println!("predicate_pass_rate\t{:.6}", metrics.predicate_pass_rate);
        }
        Command::Ablate {
            manifest,
            variants,
            out,
            steps_a,
            steps_b,
            seed,
            modulation,
        } => {
            apply_modulation(&mut cfg, &modulation)?;
            cfg.eval.steps_a = steps_a.unwrap_or(cfg.eval.steps_a);
            cfg.eval.steps_b = steps_b.unwrap_or(cfg.eval.steps_b);
            if let Some(s) = seed {
                cfg.train.seed = s;
                cfg.edit.seed = s;
            }
            let variants = AblationVariant::parse_list(&variants)?;
            let samples = load_manifest(&manifest)?;
            let (heldout, _) = generate_samples(
                Taxonomy::shipped(),
                &cfg.heldout_gen(),
                &OracleVerifier,
                &OracleAnnotator,
            )?;
            let report = run_ablation(&samples, &heldout, &variants, &cfg.ablation())?;
            write_report(&out, &report)?;
            print!("{}", report.to_table());
        }
        Command::Report { input } => {
            let path = if input.is_dir() {
                input.join(REPORT_JSON)
            } else {
                input
            };
            let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

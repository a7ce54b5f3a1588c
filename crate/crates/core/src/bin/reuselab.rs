use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use reuselab::harness::{
    domain_distance, network_from_snapshot, open_dataset, report, resolve_dataset_arg, run_matrix, run_probe, ExperimentConfig,
    Normalization, ProbeKind, ProbeSpec, ProbeResult, ReportSpec, RunOptions,
};
use reuselab::netlab::{build_model, load_checkpoint, restore_all, save_checkpoint, ArchSpec, Capacity, Family, InputShape};
use reuselab::probes::write_rows;
use reuselab::trainbench::{pretrain_source, RunRecord, TrainConfig};
use reuselab::Result;

#[derive(Parser)]
#[command(name = "reuselab", version, about = "Transfer-learning and feature-reuse diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a source checkpoint (head removed) on a source task.
    Pretrain {
        #[arg(long)]
        arch: String,
        #[arg(long, default_value = "tiny")]
        capacity: String,
        /// Manifest file, image directory, or synthetic corpus (`shapes10[:samples]`).
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        image_size: usize,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Execute an experiment matrix described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Run cells one at a time.
        #[arg(long)]
        deterministic: bool,
    },
    /// Run one probe on a completed run directory.
    Probe {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, value_parser = ["cka", "knn", "reinit", "l2", "attdist"])]
        probe: String,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// FID between two datasets under a source checkpoint's embedding.
    Distance {
        #[arg(long)]
        dataset_a: String,
        #[arg(long)]
        dataset_b: String,
        #[arg(long)]
        embedder: PathBuf,
    },
    /// Tables and figures from a results directory.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Normalize reuse shares within each model panel instead of globally.
        #[arg(long)]
        per_panel: bool,
        #[arg(long)]
        no_figures: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Pretrain { arch, capacity, dataset, out, image_size, iters, lr, seed } => {
            let ds = resolve_dataset_arg(&dataset, image_size)?;
            let shape = InputShape::new(ds.manifest.image_size, ds.manifest.image_size, 3);
            let spec = ArchSpec::new(Family::parse(&arch)?, Capacity::parse(&capacity)?, shape, ds.manifest.class_count, seed);
            let cfg = TrainConfig {
                ri_lr: lr,
                base_lr: lr,
                max_iters: iters,
                warmup_iters: (iters / 15).max(1),
                seed,
                weight_decay: if spec.family == Family::MiniVit { 0.05 } else { 0.0 },
                ..TrainConfig::default()
            };
            let (snap, record) = pretrain_source(&spec, &ds, &cfg)?;
            record.save(&out.join("record"))?;
            let path = save_checkpoint(&snap, &out, "source")?;
            println!("{} best val {:.4} at iteration {} -> {}", spec.arch_id(), record.meta.best_val, record.meta.best_iteration, path.display());
        }
        Command::Run { config, workers, deterministic } => {
            let cfg = ExperimentConfig::load(&config)?;
            let workers = if deterministic { 1 } else { workers };
            let outcome = run_matrix(&cfg, RunOptions { workers })?;
            println!(
                "{} cells: {} executed, {} already complete, {} failed -> {}",
                outcome.cells.len(),
                outcome.executed.len(),
                outcome.skipped.len(),
                outcome.failures.len(),
                outcome.output_dir.display()
            );
            for f in &outcome.failures {
                println!("failed {} {} {} {} seed {}: {}", f.run_id, f.model, f.init_label, f.dataset, f.seed, f.cause);
            }
            if !outcome.is_complete() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Probe { run_dir, probe, k, samples } => {
            let record = RunRecord::load(&run_dir)?;
            let manifest = reuselab::data::DatasetManifest::read(&run_dir.join("dataset.json"))?;
            let dataset = open_dataset(&manifest)?;
            let mut net = build_model(&record.meta.arch)?;
            restore_all(&mut net, &record.best)?;
            let spec = ProbeSpec { k, samples, ..ProbeSpec::new(ProbeKind::parse(&probe)?) };
            let result = run_probe(&spec, &mut net, &record.initial, &dataset)?;
            if let ProbeResult::NotApplicable(why) = &result {
                println!("{why}");
                return Ok(ExitCode::SUCCESS);
            }
            let rows = result.rows(&record.meta.run_id);
            let path = run_dir.join(format!("probe-{probe}.csv"));
            write_rows(&path, &rows)?;
            for r in &rows {
                println!("{:>3} {:<24} {:.6}", r.position_index, r.tap_id, r.value);
            }
            println!("-> {}", path.display());
        }
        Command::Distance { dataset_a, dataset_b, embedder } => {
            let snap = load_checkpoint(&embedder)?;
            let size = snap.arch().input_shape.h;
            let a = resolve_dataset_arg(&dataset_a, size)?;
            let b = resolve_dataset_arg(&dataset_b, size)?;
            let d = domain_distance(&network_from_snapshot(&snap)?, &a, &b)?;
            println!("fid {:.6}{}", d.value, if d.underdetermined { " (fewer samples than embedding dimensions)" } else { "" });
        }
        Command::Report { results, out, per_panel, no_figures } => {
            let spec = ReportSpec {
                normalization: if per_panel { Normalization::PerPanel } else { Normalization::Global },
                figures: !no_figures,
            };
            let outcome = report(&results, &out, &spec)?;
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if !outcome.missing.is_empty() || !outcome.failed.is_empty() {
                println!("partial report: {} missing, {} failed cells (see gaps.json)", outcome.missing.len(), outcome.failed.len());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

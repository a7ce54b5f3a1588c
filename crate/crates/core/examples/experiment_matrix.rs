//! Runs a small experiment matrix from a TOML config, reruns it to show that
//! completed cells are skipped, then writes the report.

use reuselab::harness::{report, run_matrix, ExperimentConfig, ReportSpec, RunOptions};

const CONFIG: &str = r#"
version = 1
output_dir = "results"
seeds = [0, 1]

[[datasets]]
id = "shapes10"
generator = { corpus = "shapes10", samples = 400, image_size = 16, seed = 0 }

[[datasets]]
id = "target5"
split_seed = 1
generator = { corpus = "target5", samples = 200, image_size = 16, shift = 0.3, seed = 1 }

[pretrain]
dataset = "shapes10"
train = { base_lr = 1e-3, ri_lr = 1e-3, max_iters = 40, warmup_iters = 5, val_every = 20, batch_size = 32 }

[train]
base_lr = 1e-3
ri_lr = 1e-3
max_iters = 40
warmup_iters = 5
val_every = 10
batch_size = 32

[[models]]
family = "mini_cnn"
capacity = "tiny"

[[init_schemes]]
kind = "WT"

[[init_schemes]]
kind = "ST"

[[init_schemes]]
kind = "RI"

[[probes]]
kind = "l2"
"#;

fn main() -> reuselab::Result<()> {
    let dir = tempfile::tempdir().map_err(reuselab::Error::io("tempdir"))?;
    let mut cfg = ExperimentConfig::from_toml(CONFIG)?;
    cfg.output_dir = dir.path().join("results");
    let first = run_matrix(&cfg, RunOptions { workers: 2 })?;
    println!("{} cells, {} executed, {} failed", first.cells.len(), first.executed.len(), first.failures.len());
    let again = run_matrix(&cfg, RunOptions { workers: 2 })?;
    println!("rerun: {} executed, {} skipped", again.executed.len(), again.skipped.len());
    let out = report(&cfg.output_dir, &dir.path().join("report"), &ReportSpec::with_figures())?;
    print!("{}", std::fs::read_to_string(dir.path().join("report/table1.csv")).map_err(reuselab::Error::io("table1.csv"))?);
    println!("{} report files", out.files.len());
    Ok(())
}

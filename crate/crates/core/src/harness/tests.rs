use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::*;
use super::matrix::CELL_FILE;
use crate::error::Error;
use crate::initkit::InitKind;
use crate::metrics::{gain_summary, mean, std_pop};

fn base_toml(out: &Path) -> String {
    format!(
        r#"
version = 1
output_dir = "{}"
seeds = [0, 1, 2, 3, 4]

[[datasets]]
id = "src"
metric_id = "accuracy"
generator = {{ corpus = "shapes10", samples = 60, image_size = 16, seed = 1 }}

[[datasets]]
id = "tgt"
metric_id = "accuracy"
split_seed = 3
generator = {{ corpus = "target5", samples = 50, image_size = 16, shift = 0.2, seed = 2 }}

[pretrain]
dataset = "src"
train = {{ max_iters = 2, warmup_iters = 1, val_every = 1, batch_size = 8 }}

[[models]]
family = "mini_cnn"
capacity = "tiny"

[[models]]
family = "mini_vit"
capacity = "tiny"

[[init_schemes]]
kind = "WT"

[[init_schemes]]
kind = "ST"

[[init_schemes]]
kind = "RI"

[train]
max_iters = 2
warmup_iters = 1
val_every = 1
batch_size = 8
"#,
        out.display()
    )
}

#[test]
fn config_rejects_bad_input() {
    let good = base_toml(Path::new("/tmp/x"));
    let cfg = ExperimentConfig::from_toml(&good).unwrap();
    assert_eq!(cfg.seeds.len(), 5);
    assert_eq!(cfg.targets().len(), 1);

    let cases = [
        good.replace("version = 1", "version = 2"),
        good.replace("seeds = [0, 1, 2, 3, 4]", "seeds = []"),
        good.replace("metric_id = \"accuracy\"\nsplit_seed", "metric_id = \"bleu\"\nsplit_seed"),
        format!("{good}bogus = 1\n"),
        good.replace("kind = \"RI\"", "kind = \"WT_ST\"\ndepths = [0, 9]"),
        good.replace("capacity = \"tiny\"\n\n[[models]]", "capacity = \"tiny\"\ntruncate = 2\n\n[[models]]"),
    ];
    for (i, text) in cases.iter().enumerate() {
        assert_ne!(text, &good, "case {i} did not change the config");
        assert!(ExperimentConfig::from_toml(text).is_err(), "case {i} accepted");
    }
    let no_seeds = good.replace("seeds = [0, 1, 2, 3, 4]\n", "");
    assert_eq!(ExperimentConfig::from_toml(&no_seeds).unwrap().seeds, vec![0, 1, 2, 3, 4]);
    let unknown_top = format!("{good}\nextra = true\n");
    assert!(matches!(ExperimentConfig::from_toml(&unknown_top), Err(Error::TomlDe(_))));
}

#[test]
fn model_overrides_merge_into_train() {
    let mut t = toml::Table::new();
    t.insert("weight_decay".into(), toml::Value::Float(0.05));
    let base = crate::trainbench::TrainConfig::default();
    let merged = merge_train(&base, Some(&t)).unwrap();
    assert_eq!(merged.weight_decay, 0.05);
    assert_eq!(merged.base_lr, base.base_lr);
    t.insert("nonsense".into(), toml::Value::Integer(1));
    assert!(merge_train(&base, Some(&t)).is_err());
}

#[test]
fn cnn_sweep_has_seven_cells_per_seed() {
    let tpl = SchemeTemplate { kind: InitKind::WtSt, n: None, depths: None, sweep: true, models: vec![], datasets: vec![] };
    let cnn = ModelEntry { family: crate::netlab::Family::MiniCnn, capacity: crate::netlab::Capacity::Tiny, truncate: None, source_checkpoint: None, train: None, pretrain: None };
    let groups = cnn.groups().unwrap();
    assert_eq!(groups, 6);
    let depths = tpl.depths_for(groups).unwrap();
    assert_eq!(depths.len(), 7);
    let labels: Vec<String> = depths
        .iter()
        .map(|n| crate::initkit::InitScheme { kind: InitKind::WtSt, n: *n, source_checkpoint: None, seed: 0 }.canonical(groups).label(groups))
        .collect();
    assert_eq!(labels.first().unwrap(), "ST");
    assert_eq!(labels[1], "WT-ST-1/5");
    assert_eq!(labels.last().unwrap(), "WT");
}

#[test]
fn parallel_map_keeps_order() {
    let items: Vec<u64> = (0..37).collect();
    assert_eq!(parallel_map(&items, 4, |x| x * x), items.iter().map(|x| x * x).collect::<Vec<_>>());
}

#[test]
fn report_cell_format_and_gain_key() {
    let scores = [0.8, 0.9, 0.85, 0.8, 0.9];
    assert_eq!(format_cell(mean(&scores), std_pop(&scores)), "0.850 ± 0.045");
    let g = gain_summary(&[0.894], &[0.8], &[0.684]).unwrap();
    assert_eq!(format!("{:.3}", g.gain_ratio), "1.307");
}

#[test]
fn empty_results_is_an_error_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("report");
    assert!(matches!(report(tmp.path(), &out, &ReportSpec::default()), Err(Error::Report(_))));
    assert!(!out.exists());
}

fn csv_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv") | Some("json")))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn matrix_counts_reruns_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("res");
    let mut cfg = ExperimentConfig::from_toml(&base_toml(&out)).unwrap();
    cfg.probes = vec![ProbeSpec::new(ProbeKind::L2), ProbeSpec { inits: vec!["WT".into()], ..ProbeSpec::new(ProbeKind::Reinit) }];
    let first = run_matrix(&cfg, RunOptions { workers: 2 }).unwrap();
    assert!(first.is_complete(), "{:?}", first.failures);
    assert_eq!(first.cells.len(), 30);
    assert_eq!(first.executed.len(), 30);
    let runs = load_runs(&out).unwrap();
    assert_eq!(runs.len(), 30);
    assert!(out.join("distances.csv").is_file());
    let runs_csv = fs::read_to_string(out.join("runs.csv")).unwrap();
    assert!(runs_csv.starts_with("run_id,family,capacity,init_kind,n,dataset,seed,metric,score,best_iter,wall_time"));
    assert_eq!(runs_csv.lines().count(), 31);

    let victim = first.cells[7].run_id.clone();
    fs::remove_dir_all(run_dir(&out, &victim)).unwrap();
    let second = run_matrix(&cfg, RunOptions::default()).unwrap();
    assert_eq!(second.executed, vec![victim]);
    assert_eq!(second.skipped.len(), 29);

    let a = tmp.path().join("ra");
    let b = tmp.path().join("rb");
    let ra = report(&out, &a, &ReportSpec::with_figures()).unwrap();
    report(&out, &b, &ReportSpec::default()).unwrap();
    assert!(ra.missing.is_empty() && ra.failed.is_empty());
    assert_eq!(csv_bytes(&a), csv_bytes(&b));
    let table = fs::read_to_string(a.join("table1.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 6);
    assert!(table.lines().next().unwrap().contains("std (population)"));
    assert_eq!(fs::read_to_string(a.join("gains.csv")).unwrap().lines().count(), 3);
    assert!(a.join("gains.svg").is_file());
    assert!(fs::read_dir(&a).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().starts_with("probe-robustness")));

    fs::remove_dir_all(run_dir(&out, &first.cells[0].run_id)).unwrap();
    let partial = report(&out, &tmp.path().join("rc"), &ReportSpec::default()).unwrap();
    assert_eq!(partial.missing, vec![first.cells[0].run_id.clone()]);
}

#[test]
fn failing_cells_are_recorded_and_the_matrix_continues() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("res");
    let text = base_toml(&out)
        .replace("seeds = [0, 1, 2, 3, 4]", "seeds = [0]")
        .replace("[[models]]\nfamily = \"mini_vit\"\ncapacity = \"tiny\"\n", "")
        + r#"
[[datasets]]
id = "big"
metric_id = "accuracy"
generator = { corpus = "target5", samples = 50, image_size = 24, seed = 2 }
"#;
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    let outcome = run_matrix(&cfg, RunOptions::default()).unwrap();
    assert_eq!(outcome.cells.len(), 6);
    // WT and ST on the 24px target cannot use the 16px source checkpoint.
    assert_eq!(outcome.failures.len(), 2);
    assert!(outcome.failures.iter().all(|f| f.dataset == "big"));
    assert_eq!(outcome.executed.len(), 4);
    let recorded: Vec<CellFailure> = serde_json::from_str(&fs::read_to_string(out.join("failures.json")).unwrap()).unwrap();
    assert_eq!(recorded, outcome.failures);

    // A run directory from some earlier matrix is not part of this one.
    let done = load_runs(&out).unwrap();
    assert_eq!(done.len(), 4);
    let stale = run_dir(&out, "00000000stale000");
    fs::create_dir_all(&stale).unwrap();
    for f in fs::read_dir(run_dir(&out, &done[0].cell.run_id)).unwrap() {
        let f = f.unwrap().path();
        if f.is_file() {
            fs::copy(&f, stale.join(f.file_name().unwrap())).unwrap();
        }
    }
    let mut cell = done[0].cell.clone();
    cell.run_id = "00000000stale000".into();
    fs::write(stale.join(CELL_FILE), serde_json::to_string(&cell).unwrap()).unwrap();
    assert_eq!(load_runs(&out).unwrap().len(), 4);
}

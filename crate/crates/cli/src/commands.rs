use std::path::{Path, PathBuf};

use anyhow::Context;
use metatst::checkpoint::load_checkpoint;
use metatst::config::Ablation;
use metatst::eval::{
    ablation_table, export_meta_representations, extract_attention, meta_representations_csv,
    write_meta_representations, ForecastMetrics,
};
use metatst::prepared::Split;
use metatst::train::{linear_probe, train_joint, zero_shot_eval, CHECKPOINT_FILE};

use crate::run::{RunSpec, TEST_METRICS_FILE};
use crate::{CliError, CliResult, RunArgs};

fn write_test_metrics(dir: &Path, metrics: &[ForecastMetrics]) -> CliResult<()> {
    std::fs::write(dir.join(TEST_METRICS_FILE), serde_json::to_string_pretty(metrics)?)?;
    Ok(())
}

fn print_metrics(label: &str, m: &ForecastMetrics) {
    println!("{label} {} {}: mse {:.6} mae {:.6} ({} windows)", m.dataset_id, m.split, m.mse, m.mae, m.n_samples);
}

/// Train on `datasets` jointly and report test metrics of the best model.
fn run_training(spec: &RunSpec) -> CliResult<(PathBuf, metatst::MetaTst, Vec<metatst::prepared::PreparedDataset>)> {
    let dir = spec.materialize()?;
    println!("run directory: {}", dir.display());
    let embedder = spec.embedder()?;
    let datasets = spec.prepare(embedder.as_ref())?;
    let refs: Vec<_> = datasets.iter().collect();
    let (model, out) = train_joint(&spec.config, &refs, &spec.train_options(&dir))?;
    if let (Some(e), Some(v)) = (out.state.best_epoch, out.state.best_val_mse) {
        println!("best epoch {e}, val mse {v:.6}");
    }
    Ok((dir, model, datasets))
}

pub fn train(args: &RunArgs, dataset: &str) -> CliResult<()> {
    let spec = RunSpec::new("train", args, &[dataset.to_string()], Ablation::none())?;
    let (dir, model, datasets) = run_training(&spec)?;
    let m = zero_shot_eval(&model, &datasets[0])?;
    print_metrics("test", &m);
    write_test_metrics(&dir, &[m])
}

pub fn joint_train(args: &RunArgs, datasets: &[String], probe: bool, zero_shot: bool) -> CliResult<()> {
    if datasets.len() < 2 {
        log::warn!("joint training over a single dataset is individual training");
    }
    let spec = RunSpec::new("joint-train", args, datasets, Ablation::none())?;
    let (dir, model, prepared) = run_training(&spec)?;
    let mut report = Vec::new();
    if zero_shot || !probe {
        for ds in &prepared {
            let m = zero_shot_eval(&model, ds)?;
            print_metrics("zero-shot", &m);
            report.push(m);
        }
    }
    if probe {
        for ds in &prepared {
            let mut opts = spec.train_options(&dir);
            opts.out_dir = None;
            opts.run_id = format!("{}-probe-{}", spec.run_id, ds.id);
            let (_, _, m) = linear_probe(&model, ds, &opts)?;
            print_metrics("probe", &m);
            report.push(ForecastMetrics {
                split: "test_probe".into(),
                ..m
            });
        }
    }
    write_test_metrics(&dir, &report)
}

pub fn ablate(args: &RunArgs, dataset: &str, drops: [bool; 3], compare: Option<&Path>) -> CliResult<()> {
    let [drop_endo, drop_exo, drop_meta] = drops;
    let ablation = Ablation {
        drop_endo,
        drop_exo,
        drop_meta,
    };
    if ablation.is_full() {
        return Err(CliError::Usage("ablate needs at least one of --drop-meta, --drop-exo, --drop-endo".into()));
    }
    ablation.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let spec = RunSpec::new("ablate", args, &[dataset.to_string()], ablation)?;
    let (dir, model, datasets) = run_training(&spec)?;
    let m = zero_shot_eval(&model, &datasets[0])?;
    print_metrics(&ablation.label(), &m);
    write_test_metrics(&dir, std::slice::from_ref(&m))?;
    let mut rows = Vec::new();
    if let Some(full_dir) = compare {
        let p = full_dir.join(TEST_METRICS_FILE);
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        let full: Vec<ForecastMetrics> = serde_json::from_str(&text)?;
        rows.extend(full.into_iter().map(|f| (Ablation::none().label(), f)));
    }
    rows.push((ablation.label(), m));
    print!("{}", ablation_table(&rows));
    Ok(())
}

pub struct ExportRequest {
    pub run_dir: Option<PathBuf>,
    pub attention: bool,
    pub sample: usize,
    pub meta_reps: bool,
    pub split: String,
    pub dataset: Option<String>,
    pub templates: bool,
}

pub fn export(req: ExportRequest) -> CliResult<()> {
    if !(req.attention || req.meta_reps || req.templates) {
        return Err(CliError::Usage("export needs --attention, --meta-reps or --templates".into()));
    }
    if req.templates {
        print!("{}", metatst::metadata::dump_templates());
    }
    if !(req.attention || req.meta_reps) {
        return Ok(());
    }
    let run_dir = req.run_dir.as_deref().ok_or_else(|| CliError::Usage("--run-dir is required".into()))?;
    let split: Split = req.split.parse().map_err(|e: metatst::Error| CliError::Usage(e.to_string()))?;
    let spec = RunSpec::load(run_dir)?;
    let (model, _) = load_checkpoint(&run_dir.join(CHECKPOINT_FILE))?;
    let name = req.dataset.clone().unwrap_or_else(|| spec.datasets[0].clone());
    if !spec.datasets.contains(&name) {
        return Err(CliError::Usage(format!("dataset `{name}` is not part of this run")));
    }
    let embedder = spec.embedder()?;
    let one = RunSpec {
        datasets: vec![name.clone()],
        ..spec.clone()
    };
    let ds = one.prepare(embedder.as_ref())?.remove(0);
    let out_dir = run_dir.join("exports");
    std::fs::create_dir_all(&out_dir)?;
    if req.attention {
        let map = extract_attention(&model, &ds, split, req.sample)?;
        let path = out_dir.join(format!("attention_{name}_{}_{}.csv", split.as_str(), req.sample));
        std::fs::write(&path, map.to_csv())?;
        println!("attention map ({0}×{0}) written to {1}", map.matrix.nrows(), path.display());
    }
    if req.meta_reps {
        let reps = export_meta_representations(&model, &[&ds], split)?;
        let csv = out_dir.join(format!("meta_reps_{name}_{}.csv", split.as_str()));
        std::fs::write(&csv, meta_representations_csv(&reps))?;
        write_meta_representations(&csv.with_extension("safetensors"), &reps)?;
        println!("{} metadata representations written to {}", reps.len(), csv.display());
    }
    Ok(())
}

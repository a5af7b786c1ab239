//! Implementations of the direct subcommands: gen-data, train, analyze,
//! sweep, rsa, and intervene.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use rblab_core::analysis::{
    final_run_summary, flip_threshold_magnitude, intervene as steer_intervene,
    export_pca_projection, fit_probe, per_unit_variance, sparsity_score, steering_vector,
    total_test_variance, variance_explained, variance_explained_patterns,
};
use rblab_core::booldata::{self, BoolDatasetConfig, FeatureKind, FeatureSpec, SplitName, SplitSizes};
use rblab_core::linalg::Matrix;
use rblab_core::nn::MlpModel;
use rblab_core::rng::derive_seed;
use rblab_core::seqgen::{
    generate_letter_dataset, write_dyck_jsonl, write_letters_jsonl, DyckConfig,
    LetterDatasetConfig,
};
use rblab_core::store::{read_snapshot, RepresentationSnapshot};
use rblab_core::trainer::{self, ExperimentConfig, RunRecord, SweepSpec};

use crate::out::{
    append_csv, load_config, log_line, output_root, persist_run, write_json, SnapshotPersistence,
};
use crate::{CliError, CliResult, CommonArgs};

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DyckGenConfig {
    #[serde(flatten)]
    dyck: DyckConfig,
    #[serde(default = "default_dyck_count")]
    count: usize,
}

fn default_dyck_count() -> usize {
    10_000
}

pub fn gen_data(kind: &str, common: &CommonArgs) -> CliResult<()> {
    let root = output_root(&common.out);
    let dir = root.join(format!("gen-{kind}"));
    fs::create_dir_all(&dir)?;
    log_line(&dir, &format!("gen-data kind={kind} starting"));

    match kind {
        "dyck" => {
            let mut config: DyckGenConfig = match &common.config {
                Some(path) => load_config(path)?,
                None => DyckGenConfig {
                    dyck: serde_json::from_value(serde_json::json!({"seed": 0}))
                        .map_err(|e| CliError::config(e.to_string()))?,
                    count: default_dyck_count(),
                },
            };
            if let Some(seed) = common.seed {
                config.dyck.seed = seed;
            }
            config.dyck.validate()?;
            write_json(&dir.join("config_echo.json"), &config)?;
            let mut buf = Vec::new();
            write_dyck_jsonl(&config.dyck, config.count, &mut buf)?;
            fs::write(dir.join("dyck.jsonl"), buf)?;
            println!("wrote {} dyck sentences to {}", config.count, dir.display());
        }
        "letters" => {
            let mut config: LetterDatasetConfig = match &common.config {
                Some(path) => load_config(path)?,
                None => LetterDatasetConfig::standard(
                    SplitSizes {
                        train: 4096,
                        validation: 512,
                        test: 512,
                    },
                    0,
                ),
            };
            if let Some(seed) = common.seed {
                config.seed = seed;
            }
            write_json(&dir.join("config_echo.json"), &config)?;
            let data = generate_letter_dataset(&config)?;
            for (name, split) in [
                ("train", &data.train),
                ("validation", &data.validation),
                ("test", &data.test),
            ] {
                let mut buf = Vec::new();
                write_letters_jsonl(split, &mut buf)?;
                fs::write(dir.join(format!("letters_{name}.jsonl")), buf)?;
            }
            println!("wrote letter dataset to {}", dir.display());
        }
        "boolean" => {
            let mut config: BoolDatasetConfig = match &common.config {
                Some(path) => load_config(path)?,
                None => BoolDatasetConfig {
                    n_inputs: 64,
                    features: vec![
                        FeatureSpec::linear(0, 4),
                        FeatureSpec::of_kind(FeatureKind::SumMod2_4, 4),
                    ],
                    sizes: SplitSizes {
                        train: 4096,
                        validation: 2048,
                        test: 2048,
                    },
                    seed: 0,
                },
            };
            if let Some(seed) = common.seed {
                config.seed = seed;
            }
            write_json(&dir.join("config_echo.json"), &config)?;
            let data = booldata::generate(&config)?;
            for split in [SplitName::Train, SplitName::Validation, SplitName::Test] {
                let s = data.split(split);
                let mut buf = Vec::new();
                booldata::write_jsonl(s, &mut buf)?;
                fs::write(dir.join(format!("boolean_{}.jsonl", split.as_str())), buf)?;
                // Binary snapshot export of the same split.
                for (payload, tag) in [(&s.inputs, "inputs"), (&s.labels, "labels")] {
                    let snap = RepresentationSnapshot::from_matrix(
                        "dataset",
                        0,
                        tag,
                        split.as_str(),
                        payload,
                    );
                    rblab_core::store::write_snapshot(
                        &snap,
                        dir.join(format!("boolean_{}_{tag}.rbs", split.as_str())),
                    )?;
                }
            }
            println!("wrote boolean dataset to {}", dir.display());
        }
        other => {
            return Err(CliError::config(format!(
                "unknown dataset kind '{other}' (expected dyck, letters, or boolean)"
            )))
        }
    }
    log_line(&dir, "gen-data finished");
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Applies a `--seed` override the same way sweeps derive per-cell seeds.
pub fn reseed(config: &mut ExperimentConfig, seed: u64) {
    config.seed = seed;
    config.dataset.seed = derive_seed(seed, 101);
    config.model.seed = derive_seed(seed, 102);
}

pub fn train(common: &CommonArgs) -> CliResult<()> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("train requires --config"))?;
    let mut config: ExperimentConfig = load_config(path)?;
    if let Some(seed) = common.seed {
        reseed(&mut config, seed);
    }
    config.validate()?;

    let root = output_root(&common.out);
    let dir = root.join(config.run_id());
    fs::create_dir_all(&dir)?;
    log_line(&dir, "training starting");
    let out = trainer::run(&config)?;
    persist_run(&dir, &out, SnapshotPersistence::All)?;
    log_line(&dir, "training finished");
    println!(
        "run {} finished at step {} ({:?}); outputs in {}",
        out.record.run_id,
        out.record.final_step,
        out.record.status,
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
pub struct AnalyzeConfig {
    pub run_dir: PathBuf,
    #[serde(default = "default_true")]
    pub patterns: bool,
    #[serde(default)]
    pub per_unit: bool,
    #[serde(default = "default_true")]
    pub sparsity: bool,
    #[serde(default = "default_true")]
    pub pca_projection: bool,
}

fn default_true() -> bool {
    true
}

pub struct LoadedRun {
    pub record: RunRecord,
    pub model: MlpModel,
    pub dataset: rblab_core::booldata::GeneratedDataset,
    pub snapshots: Vec<RepresentationSnapshot>,
}

impl LoadedRun {
    pub fn snapshot(&self, step: u64, layer: &str, split: &str) -> CliResult<&RepresentationSnapshot> {
        self.snapshots
            .iter()
            .find(|s| s.step == step && s.layer == layer && s.split == split)
            .ok_or_else(|| {
                CliError::Runtime(format!("missing snapshot step {step} {layer} {split}"))
            })
    }

    pub fn penultimate_layer_name(&self) -> String {
        format!("hidden{}", self.model.penultimate_layer())
    }
}

pub fn load_run(run_dir: &Path) -> CliResult<LoadedRun> {
    let record: RunRecord = load_config(&run_dir.join("record.json"))?;
    let model_bytes = fs::read(run_dir.join("model_final.rbm"))?;
    let model = MlpModel::read_from(&mut model_bytes.as_slice())?;
    let dataset = booldata::generate(&record.config.dataset)?;
    let mut snapshots = Vec::new();
    let snap_dir = run_dir.join("snapshots");
    if snap_dir.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(&snap_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "rbs"))
            .collect();
        paths.sort();
        for p in paths {
            snapshots.push(read_snapshot(&p)?);
        }
    }
    Ok(LoadedRun {
        record,
        model,
        dataset,
        snapshots,
    })
}

pub fn analyze(common: &CommonArgs) -> CliResult<()> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("analyze requires --config"))?;
    let config: AnalyzeConfig = load_config(path)?;
    let run = load_run(&config.run_dir)?;
    let root = output_root(&common.out);
    let dir = root.join(format!("analysis-{}", run.record.run_id));
    fs::create_dir_all(&dir)?;
    log_line(&dir, "analysis starting");

    let layer = run.penultimate_layer_name();
    let final_step = run.record.final_step;
    let features = &run.record.config.dataset.features;

    // Final-step denominator for the end-of-training normalization.
    let final_val = run.snapshot(final_step, &layer, "validation")?;
    let final_test = run.snapshot(final_step, &layer, "test")?;
    let v_final = total_test_variance(final_val, final_test)?;

    let mut steps: Vec<u64> = run
        .snapshots
        .iter()
        .filter(|s| s.layer == layer && s.split == "validation")
        .map(|s| s.step)
        .collect();
    steps.sort_unstable();
    steps.dedup();

    let mut rows = Vec::new();
    for &step in &steps {
        let val = run.snapshot(step, &layer, "validation")?;
        let test = run.snapshot(step, &layer, "test")?;
        for (f, spec) in features.iter().enumerate() {
            let fv = run.dataset.validation.label_column(f);
            let ft = run.dataset.test.label_column(f);
            let (_, ve) =
                variance_explained(val, test, &fv, &ft, Some(v_final), &spec.kind.name())?;
            rows.push(format!(
                "{step},{f},{},{},{},{}",
                spec.kind.name(),
                ve.r2_raw,
                ve.r2_final_normalized,
                ve.total_test_variance
            ));
            if config.patterns && spec.kind != FeatureKind::Linear && spec.input_indices.len() <= 8
            {
                let (_, pve) = variance_explained_patterns(
                    spec,
                    val,
                    test,
                    &run.dataset.validation.inputs,
                    &run.dataset.test.inputs,
                    Some(v_final),
                )?;
                rows.push(format!(
                    "{step},{f},patterns:{},{},{},{}",
                    spec.kind.name(),
                    pve.r2_raw,
                    pve.r2_final_normalized,
                    pve.total_test_variance
                ));
            }
        }
    }
    append_csv(
        &dir.join("variance_explained.csv"),
        "step,feature,target,r2_raw,r2_final_normalized,total_test_variance",
        &rows,
    )?;

    if config.per_unit {
        let mut unit_rows = Vec::new();
        for (f, spec) in features.iter().enumerate() {
            let fv = run.dataset.validation.label_column(f);
            let ft = run.dataset.test.label_column(f);
            let per_unit = per_unit_variance(final_val, final_test, &fv, &ft)?;
            for (u, (r2, var)) in per_unit
                .r2
                .iter()
                .zip(&per_unit.variance)
                .enumerate()
            {
                unit_rows.push(format!(
                    "{f},{},{u},{},{var}",
                    spec.kind.name(),
                    r2.map_or("undefined".to_string(), |v| v.to_string()),
                ));
            }
        }
        append_csv(
            &dir.join("per_unit.csv"),
            "feature,kind,unit,r2,variance",
            &unit_rows,
        )?;
    }

    if config.sparsity {
        let mut sparsity_rows = Vec::new();
        for (f, spec) in features.iter().enumerate() {
            let fv = run.dataset.validation.label_column(f);
            let score = sparsity_score(final_val, &fv)?;
            sparsity_rows.push(format!("{f},{},{score}", spec.kind.name()));
        }
        append_csv(&dir.join("sparsity.csv"), "feature,kind,score", &sparsity_rows)?;
    }

    if config.pca_projection {
        let names: Vec<String> = features.iter().map(|s| s.kind.name()).collect();
        let mut buf = Vec::new();
        export_pca_projection(final_test, &run.dataset.test.labels, &names, &mut buf)?;
        fs::write(dir.join("pca_projection.csv"), buf)?;
    }

    log_line(&dir, "analysis finished");
    println!("analysis written to {}", dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

pub fn sweep(common: &CommonArgs) -> CliResult<()> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("sweep requires --config"))?;
    let mut spec: SweepSpec = load_config(path)?;
    if let Some(seed) = common.seed {
        spec.base.seed = seed;
    }
    spec.base.validate()?;
    let root = output_root(&common.out);
    let dir = root.join("sweep");
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("sweep_spec_echo.json"), &spec)?;
    log_line(&dir, &format!("sweep starting: {} cells", spec.expand().len()));

    let summary_path = dir.join("sweep_summary.csv");
    let header = "cell,label,status,final_step,feature,kind,final_accuracy,r2_raw,pattern_r2";
    let lock = Mutex::new(());
    let results = trainer::sweep(&spec, common.workers, |cell| {
        let out = trainer::run(&cell.config)?;
        let summary = final_run_summary(&out)?;
        let cell_dir = dir.join(format!("cell{:04}", cell.index));
        let _ = fs::create_dir_all(&cell_dir);
        // Persist the record and summary immediately so partial sweeps
        // stay usable.
        let _ = write_json(&cell_dir.join("record.json"), &out.record);
        let _ = write_json(&cell_dir.join("summary.json"), &summary);
        let rows: Vec<String> = summary
            .features
            .iter()
            .map(|f| {
                format!(
                    "{},{},ok,{},{},{},{},{},{}",
                    cell.index,
                    cell.label,
                    summary.final_step,
                    f.feature,
                    f.kind,
                    f.final_accuracy,
                    f.r2_raw,
                    f.pattern_r2.map_or(String::new(), |v| v.to_string())
                )
            })
            .collect();
        let guard = lock.lock().expect("csv lock");
        append_csv(&summary_path, header, &rows).map_err(|e| {
            rblab_core::Error::Io(std::io::Error::other(match e {
                CliError::Config(m) | CliError::Runtime(m) => m,
            }))
        })?;
        drop(guard);
        Ok(summary)
    });

    let mut failures = Vec::new();
    for cell in &results {
        if let Err(e) = &cell.outcome {
            failures.push(format!("{},{},failed:{e},,,,,,", cell.index, cell.label));
        }
    }
    if !failures.is_empty() {
        append_csv(&summary_path, header, &failures)?;
    }
    log_line(
        &dir,
        &format!(
            "sweep finished: {} ok, {} failed",
            results.iter().filter(|c| c.outcome.is_ok()).count(),
            failures.len()
        ),
    );
    println!("sweep summary in {}", summary_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// rsa
// ---------------------------------------------------------------------------

pub fn rsa(common: &CommonArgs) -> CliResult<()> {
    let config: crate::recipes::RsaGridConfig = match &common.config {
        Some(path) => load_config(path)?,
        None => crate::recipes::RsaGridConfig::default_grid(common.seed.unwrap_or(0)),
    };
    let root = output_root(&common.out);
    let dir = root.join("rsa");
    crate::recipes::run_rsa_grid(&config, &dir, common.workers)
}

// ---------------------------------------------------------------------------
// intervene
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
pub struct InterveneConfig {
    pub run_dir: PathBuf,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
}

fn default_alphas() -> Vec<f64> {
    (0..=8).map(|i| i as f64 * 0.25).collect()
}

pub fn intervene(common: &CommonArgs) -> CliResult<()> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("intervene requires --config"))?;
    let config: InterveneConfig = load_config(path)?;
    let run = load_run(&config.run_dir)?;
    let root = output_root(&common.out);
    let dir = root.join(format!("intervene-{}", run.record.run_id));
    fs::create_dir_all(&dir)?;
    log_line(&dir, "intervention starting");

    let layer = run.penultimate_layer_name();
    let final_step = run.record.final_step;
    let val = run.snapshot(final_step, &layer, "validation")?;
    let test = run.snapshot(final_step, &layer, "test")?;
    let model = run.model.clone();
    let features = &run.record.config.dataset.features;

    let mut rows = Vec::new();
    let mut threshold_rows = Vec::new();
    for (f, spec) in features.iter().enumerate() {
        let fv = run.dataset.validation.label_column(f);
        let design = Matrix::new(fv.len(), 1, fv).map_err(rblab_core::Error::from)?;
        let probe = fit_probe(val, &design, &spec.kind.name())?;
        let (d, magnitude) = steering_vector(&probe)?;
        for &alpha in &config.alphas {
            let result = steer_intervene(&model, test, f, &d, alpha)?;
            for (other, flip) in result.flip_fraction.iter().enumerate() {
                rows.push(format!(
                    "{f},{},{alpha},{magnitude},{other},{flip}",
                    spec.kind.name()
                ));
            }
        }
        let threshold = flip_threshold_magnitude(&model, test, f, &d)?;
        threshold_rows.push(format!("{f},{},{magnitude},{threshold}", spec.kind.name()));
    }
    append_csv(
        &dir.join("intervention.csv"),
        "steered_feature,kind,alpha,vector_magnitude,observed_feature,flip_fraction",
        &rows,
    )?;
    append_csv(
        &dir.join("thresholds.csv"),
        "feature,kind,vector_magnitude,flip_all_magnitude",
        &threshold_rows,
    )?;
    log_line(&dir, "intervention finished");
    println!("intervention results in {}", dir.display());
    Ok(())
}

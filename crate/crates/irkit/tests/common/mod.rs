#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use irkit_core::harness::{run_experiment, ExperimentConfig};

pub const CONFIG: &str = r#"
seed = 7
models = ["xgboost", "linear"]

[data.synthetic]
n = 800
seed = 3

[train]
max_epochs = 30
patience = 5
batch_size = 64

[train.gbdt]
n_trees = 60
max_depth = 3
learning_rate = 0.1
early_stopping = 10
"#;

fn train_into(dir: &Path, config: &str) {
    std::fs::create_dir_all(dir).unwrap();
    let path = dir.join("config.toml");
    std::fs::write(&path, config).unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    let (records, _) = cfg.load_records().unwrap();
    let result = run_experiment(&records, &cfg, Some(dir)).unwrap();
    assert!(result.cells.iter().all(|c| c.error.is_none()), "{:?}", result.warnings);
}

/// Full-input xgboost and linear models for every task, plus simplified
/// (BMI + glucose) xgboost models with ids ending in `_simplified`.
pub fn bundle_dir() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let root = tempfile::tempdir().unwrap().keep();
        let main = root.join("bundle");
        train_into(&main, CONFIG);
        let simple = root.join("simplified");
        let cfg = CONFIG.replace(
            "models = [\"xgboost\", \"linear\"]",
            "models = [\"xgboost\"]\nmask = \"simplified\"",
        );
        train_into(&simple, &cfg);
        for entry in std::fs::read_dir(simple.join("models")).unwrap() {
            let p = entry.unwrap().path();
            let stem = p.file_stem().unwrap().to_string_lossy().into_owned();
            std::fs::copy(&p, main.join("models").join(format!("{stem}_simplified.irkm"))).unwrap();
        }
        main
    })
}

pub fn participant() -> serde_json::Value {
    serde_json::json!({
        "age": 52, "sex": "female", "race": "mexican_american", "bmi": 28.41, "waist": 95,
        "pulse": 72, "systolic": 128, "diastolic": 82, "fpg": 100
    })
}

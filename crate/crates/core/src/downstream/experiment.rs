use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{evaluate_macro_f1, render_chart, train_classifier, ClassifierConfig};
use crate::checkpoint;
use crate::datasets::{DatasetManifest, Split};
use crate::error::{Error, IoContext, Result};
use crate::trainer::PROVENANCE_FILE;

pub const REPORT_FILE: &str = "report.json";
pub const REPORT_CHART: &str = "report.png";

/// One experiment arm: the biased training split, optionally joined with an
/// augmented dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArmSpec {
    pub name: String,
    pub augmented: Option<PathBuf>,
}

impl ArmSpec {
    pub fn baseline(name: &str) -> Self {
        Self {
            name: name.to_string(),
            augmented: None,
        }
    }

    pub fn augmented(name: &str, dir: impl Into<PathBuf>) -> Self {
        Self {
            name: name.to_string(),
            augmented: Some(dir.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub accuracy: f64,
    pub train_size: usize,
    pub final_train_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub name: String,
    pub augmented: Option<String>,
    pub augmented_digest: Option<String>,
    /// Contents of the augmented set's provenance file, if any.
    pub provenance: Option<serde_json::Value>,
    /// Manifests the arm's classifiers were trained on.
    pub inputs: Vec<String>,
    pub seeds: Vec<SeedResult>,
    pub mean: f64,
    /// Sample standard deviation across seeds; 0 for a single seed.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub dataset_name: String,
    pub train_digest: String,
    pub test_digest: String,
    pub classifier: ClassifierConfig,
    pub classifier_hash: String,
    pub arms: Vec<ArmReport>,
}

impl ExperimentReport {
    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.name == name)
    }

    /// Mean macro-F1 of `arm` minus that of `reference`.
    pub fn gain(&self, arm: &str, reference: &str) -> Option<f64> {
        Some(self.arm(arm)?.mean - self.arm(reference)?.mean)
    }

    /// Write `report.json` and `report.png` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).at(dir)?;
        let path = dir.join(REPORT_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").at(&path)?;
        let chart = dir.join(REPORT_CHART);
        render_chart(self).save(&chart).map_err(|source| Error::Image {
            path: chart.clone(),
            source,
        })?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Plain-text table, one line per arm.
    pub fn summary(&self) -> String {
        let mut s = format!("dataset {} ({})\n", self.dataset_name, self.dataset);
        for a in &self.arms {
            let seeds: Vec<String> = a.seeds.iter().map(|r| format!("{:.4}", r.macro_f1)).collect();
            s.push_str(&format!(
                "{:<16} macro-F1 {:.4} ± {:.4}  [{}]\n",
                a.name,
                a.mean,
                a.std,
                seeds.join(", ")
            ));
        }
        s
    }
}

/// Mean and sample standard deviation.
pub fn aggregate(scores: &[f64]) -> (f64, f64) {
    let n = scores.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn read_provenance(dir: &Path) -> Result<Option<serde_json::Value>> {
    let path = dir.join(PROVENANCE_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).at(&path)?;
    Ok(Some(serde_json::from_str(&text)?))
}

/// Train `config.seeds` classifiers per arm and score each on the test
/// split of `dataset_dir`. Runs up to `jobs` trainings concurrently; results
/// do not depend on `jobs`.
pub fn run_debias_experiment(
    dataset_dir: &Path,
    arms: &[ArmSpec],
    config: &ClassifierConfig,
    jobs: usize,
) -> Result<ExperimentReport> {
    config.validate()?;
    if arms.is_empty() {
        return Err(Error::InvalidArgument("no experiment arms".into()));
    }
    let names: BTreeSet<&str> = arms.iter().map(|a| a.name.as_str()).collect();
    if names.len() != arms.len() {
        return Err(Error::InvalidArgument("arm names must be unique".into()));
    }
    let train = DatasetManifest::load(dataset_dir, Split::Train)?;
    let test = DatasetManifest::load(dataset_dir, Split::Test)?;
    let augmented: Vec<Option<DatasetManifest>> = arms
        .iter()
        .map(|a| {
            a.augmented
                .as_deref()
                .map(|d| DatasetManifest::load(d, Split::Train))
                .transpose()
        })
        .collect::<Result<_>>()?;

    let tasks: Vec<(usize, u64)> = (0..arms.len())
        .flat_map(|a| config.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results: Mutex<Vec<Option<Result<SeedResult>>>> = Mutex::new((0..tasks.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let t = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(arm, seed)) = tasks.get(t) else { break };
        let started = Instant::now();
        let mut sets = vec![&train];
        sets.extend(augmented[arm].as_ref());
        let outcome = train_classifier(config, &sets, seed).and_then(|trained| {
            let f1 = evaluate_macro_f1(&trained.classifier, &test)?;
            Ok(SeedResult {
                seed,
                macro_f1: f1.macro_f1,
                per_class_f1: f1.per_class,
                accuracy: f1.accuracy,
                train_size: trained.train_size,
                final_train_loss: *trained.epoch_losses.last().unwrap_or(&f64::NAN),
                seconds: started.elapsed().as_secs_f64(),
            })
        });
        results.lock().unwrap()[t] = Some(outcome);
    };
    std::thread::scope(|s| {
        for _ in 1..jobs.clamp(1, tasks.len()) {
            s.spawn(worker);
        }
        worker();
    });
    let mut results = results.into_inner().unwrap().into_iter();

    let mut reports = Vec::with_capacity(arms.len());
    for (spec, aug) in arms.iter().zip(&augmented) {
        let seeds = (0..config.seeds.len())
            .map(|_| results.next().flatten().expect("every task ran"))
            .collect::<Result<Vec<_>>>()?;
        let (mean, std) = aggregate(&seeds.iter().map(|r| r.macro_f1).collect::<Vec<_>>());
        let mut inputs = vec![train.manifest_path().display().to_string()];
        inputs.extend(aug.as_ref().map(|m| m.manifest_path().display().to_string()));
        reports.push(ArmReport {
            name: spec.name.clone(),
            augmented: spec.augmented.as_ref().map(|d| d.display().to_string()),
            augmented_digest: aug.as_ref().map(DatasetManifest::digest),
            provenance: spec.augmented.as_deref().map(read_provenance).transpose()?.flatten(),
            inputs,
            seeds,
            mean,
            std,
        });
    }
    Ok(ExperimentReport {
        dataset: dataset_dir.display().to_string(),
        dataset_name: train.meta.name.clone(),
        train_digest: train.digest(),
        test_digest: test.digest(),
        classifier: config.clone(),
        classifier_hash: checkpoint::config_hash(config)?,
        arms: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_uses_sample_std() {
        let (m, s) = aggregate(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(aggregate(&[0.5]), (0.5, 0.0));
    }
}

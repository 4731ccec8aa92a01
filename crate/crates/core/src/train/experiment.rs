use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::fit::{train_fold, EpochLog, RunRecord};
use super::store::save_model;
use super::{mean_sd, median, Ablation, Config, TextSource, TrainError};
use crate::augment::Lexicon;
use crate::data::{mc_split, Sample};
use crate::diffcore::Real;
use crate::model::Network;

/// All folds of one arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvRecord {
    pub arm: Ablation,
    pub folds: Vec<RunRecord>,
    /// Mean and population SD of the per-fold test Dice.
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
}

impl CvRecord {
    fn new(arm: Ablation, folds: Vec<RunRecord>) -> Self {
        let dice: Vec<f64> = folds.iter().map(|r| r.test_dice).collect();
        let (mean, sd) = mean_sd(&dice);
        Self { arm, median: median(&dice), folds, mean, sd }
    }

    pub fn fold_dice(&self) -> Vec<f64> {
        self.folds.iter().map(|r| r.test_dice).collect()
    }

    pub fn fold_dice_ambiguous(&self) -> Vec<f64> {
        self.folds.iter().filter_map(|r| r.test_dice_ambiguous).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Ablation,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub median_ambiguous: Option<f64>,
    /// `mean - mean(full)`, when the full arm ran.
    pub delta_vs_full: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub arms: Vec<ArmSummary>,
    pub records: Vec<CvRecord>,
}

impl AblationTable {
    /// `arm,fold,dice,sd` with one row per arm and fold.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("arm,fold,dice,sd\n");
        for r in &self.records {
            for (k, f) in r.folds.iter().enumerate() {
                out += &format!("{},{},{:.6},{:.6}\n", r.arm.name(), k, f.test_dice, f.test_sd);
            }
        }
        out
    }

    pub fn get(&self, arm: Ablation) -> Option<&CvRecord> {
        self.records.iter().find(|r| r.arm == arm)
    }
}

pub type EpochHook<'a> = &'a (dyn Fn(&RunRecord, &EpochLog) + Sync);

/// One arm's record and its per-fold networks.
type ArmRuns<T> = (CvRecord, FoldNets<T>);
type FoldNets<T> = Vec<Network<T>>;
type Slot<T> = Option<(RunRecord, Network<T>)>;

struct Job {
    arm: Ablation,
    fold: usize,
}

/// Runs every `(arm, fold)` job on up to `jobs` threads. Results come back
/// grouped by arm in input order, folds ascending.
#[allow(clippy::too_many_arguments)]
fn run_jobs<T: Real>(
    config: &Config,
    samples: &[Sample],
    arms: &[Ablation],
    text: &TextSource,
    lexicon: &Lexicon,
    jobs: usize,
    out_dir: Option<&Path>,
    hook: EpochHook,
) -> Result<Vec<ArmRuns<T>>, TrainError> {
    config.validate()?;
    let folds = mc_split(samples.len(), &config.data.split)?;
    if samples.len() < 5 * config.train.batch_size {
        return Err(TrainError::Config(format!("need at least {} samples for cross-validation", 5 * config.train.batch_size)));
    }
    let work: Vec<Job> = arms.iter().flat_map(|&arm| (0..folds.len()).map(move |fold| Job { arm, fold })).collect();
    let results: Mutex<Vec<Slot<T>>> = Mutex::new((0..work.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let failure: Mutex<Option<TrainError>> = Mutex::new(None);

    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= work.len() || failure.lock().unwrap().is_some() {
            return;
        }
        let job = &work[i];
        let arm_config = config.for_arm(job.arm);
        let run = train_fold::<T>(&arm_config, samples, &folds[job.fold], text, lexicon, hook).and_then(|mut outcome| {
            if let Some(dir) = out_dir {
                let fold_dir = dir.join(job.arm.name()).join(format!("fold{}", job.fold));
                save_model(&outcome.network, &fold_dir)?;
                outcome.record.checkpoint = Some(fold_dir.join(super::MODEL_CHECKPOINT).display().to_string());
                std::fs::write(fold_dir.join("runrecord.json"), serde_json::to_string_pretty(&outcome.record)? + "\n")?;
            }
            Ok(outcome)
        });
        match run {
            Ok(outcome) => results.lock().unwrap()[i] = Some((outcome.record, outcome.network)),
            Err(e) => {
                failure.lock().unwrap().get_or_insert(e);
                return;
            }
        }
    };
    std::thread::scope(|s| {
        for _ in 1..jobs.max(1).min(work.len()) {
            s.spawn(worker);
        }
        worker();
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }

    let mut results = results.into_inner().unwrap().into_iter();
    let mut out = Vec::new();
    for &arm in arms {
        let (records, nets): (Vec<RunRecord>, Vec<Network<T>>) =
            (0..folds.len()).map(|_| results.next().flatten().expect("every job finished")).unzip();
        out.push((CvRecord::new(arm, records), nets));
    }
    Ok(out)
}

/// One training run per fold seed of `config.data.split` for the arm named
/// by `config.train.ablation`. Returns the record and each fold's network.
pub fn cross_validate<T: Real>(
    config: &Config,
    samples: &[Sample],
    text: &TextSource,
    lexicon: &Lexicon,
    jobs: usize,
    out_dir: Option<&Path>,
    hook: EpochHook,
) -> Result<ArmRuns<T>, TrainError> {
    let arm = config.train.ablation;
    let mut runs = run_jobs(config, samples, &[arm], text, lexicon, jobs, out_dir, hook)?;
    Ok(runs.remove(0))
}

/// Cross-validates each arm on shared folds and init seeds and writes
/// `ablation.csv` and `ablation.json` when `out_dir` is given.
#[allow(clippy::too_many_arguments)]
pub fn ablate<T: Real>(
    config: &Config,
    samples: &[Sample],
    arms: &[Ablation],
    text: &TextSource,
    lexicon: &Lexicon,
    jobs: usize,
    out_dir: Option<&Path>,
    hook: EpochHook,
) -> Result<(AblationTable, Vec<FoldNets<T>>), TrainError> {
    let runs = run_jobs(config, samples, arms, text, lexicon, jobs, out_dir, hook)?;
    let full_mean = runs.iter().find(|(r, _)| r.arm == Ablation::Full).map(|(r, _)| r.mean);
    let mut records = Vec::new();
    let mut nets = Vec::new();
    let mut summaries = Vec::new();
    for (r, n) in runs {
        let amb = r.fold_dice_ambiguous();
        summaries.push(ArmSummary {
            arm: r.arm,
            mean: r.mean,
            sd: r.sd,
            median: r.median,
            median_ambiguous: (!amb.is_empty()).then(|| median(&amb)),
            delta_vs_full: full_mean.map(|f| r.mean - f),
        });
        records.push(r);
        nets.push(n);
    }
    let table = AblationTable { arms: summaries, records };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("ablation.csv"), table.to_csv())?;
        std::fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(&table)? + "\n")?;
    }
    Ok((table, nets))
}

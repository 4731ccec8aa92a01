use std::path::PathBuf;

use ctxnet::data::{dice, generate_dataset, mc_split, GenConfig, Sample, SplitSpec};
use ctxnet::model::Arch;
use ctxnet::train::*;

fn small_config() -> Config {
    let mut c = Config::default();
    c.model.image_size = 32;
    c.model.depth = 2;
    c.model.channels = vec![4, 8, 16];
    c.model.d_e = 8;
    c.model.max_tokens = 16;
    c.data.generator = GenConfig { image_size: 32, ..GenConfig::default() };
    c.train.lr = 1e-3;
    c.train.epochs = 1;
    c
}

fn silent() -> impl Fn(&RunRecord, &EpochLog) + Sync {
    |_: &RunRecord, _: &EpochLog| {}
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ctxnet-train-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn run(c: &Config, samples: &[Sample]) -> FoldOutcome<f32> {
    let folds = mc_split(samples.len(), &c.data.split).unwrap();
    let text = TextSource::for_model(&c.model);
    train_fold::<f32>(c, samples, &folds[0], &text, &load_lexicon(c).unwrap(), &silent()).unwrap()
}

#[test]
fn one_epoch_writes_a_loadable_checkpoint() {
    let c = small_config();
    let samples = generate_dataset(20, 1, &c.data.generator).unwrap();
    let out = run(&c, &samples);
    assert_eq!(out.record.epochs.len(), 1);
    assert_eq!(out.record.test_ids.len(), out.record.test_scores.len());
    let dir = tmp("smoke");
    save_model(&out.network, &dir).unwrap();
    assert!(dir.join(MODEL_CHECKPOINT).exists() && dir.join(MODEL_META).exists());
    let back = load_model::<f32>(&dir).unwrap();
    assert_eq!(back.params(), out.network.params());
    assert_eq!(back.arch(), Arch::TextGated);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn training_loss_decreases() {
    let mut ratios = Vec::new();
    for seed in 0..3 {
        let mut c = small_config();
        c.train.epochs = 20;
        c.train.seed = seed;
        c.model.init_seed = seed;
        c.augment = ctxnet::augment::AugmentPolicy::none();
        let samples = generate_dataset(23, 100 + seed, &c.data.generator).unwrap();
        let out = run(&c, &samples);
        let first = out.record.epochs[0].train_loss;
        let last = out.record.epochs.last().unwrap().train_loss;
        assert!(first.is_finite() && last.is_finite());
        ratios.push(last / first);
    }
    ratios.sort_by(f64::total_cmp);
    assert!(ratios[1] < 0.8, "loss ratios {ratios:?}");
}

#[test]
fn rerun_is_byte_identical() {
    let mut c = small_config();
    c.train.epochs = 2;
    let samples = generate_dataset(20, 4, &c.data.generator).unwrap();
    let a = run(&c, &samples);
    let b = run(&c, &samples);
    assert_eq!(a.network.to_checkpoint().to_bytes(), b.network.to_checkpoint().to_bytes());
    assert_eq!(a.record, b.record);
}

#[test]
fn best_epoch_is_the_earliest_maximum_of_validation_dice() {
    let mut c = small_config();
    c.train.epochs = 4;
    let samples = generate_dataset(20, 5, &c.data.generator).unwrap();
    let out = run(&c, &samples);
    let vals: Vec<f64> = out.record.epochs.iter().map(|e| e.val_dice).collect();
    let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = vals.iter().position(|&v| v == best).unwrap() + 1;
    assert_eq!(out.record.best_val_dice, best);
    assert_eq!(out.record.best_epoch, first);

    let folds = mc_split(samples.len(), &c.data.split).unwrap();
    let val: Vec<&Sample> = folds[0].val.iter().map(|&i| &samples[i]).collect();
    let text = TextSource::for_model(&c.model);
    let again = evaluate(&out.network, &val, &text, true, c.train.threshold).unwrap();
    assert_eq!(again.mean, best);
}

#[test]
fn evaluate_matches_independent_prediction() {
    let c = small_config();
    let samples = generate_dataset(20, 6, &c.data.generator).unwrap();
    let out = run(&c, &samples);
    let text = TextSource::for_model(&c.model);
    let emb = c.model.embedder();
    let refs: Vec<&Sample> = samples.iter().collect();
    let res = evaluate(&out.network, &refs, &text, true, 0.5).unwrap();
    for (s, &score) in samples.iter().zip(&res.scores) {
        let pred = predict(&out.network, &s.image, s.size, &emb.embed_text(&s.report), 0.5).unwrap();
        assert_eq!(dice(&pred, &s.mask).unwrap(), score);
    }
    let mean = res.scores.iter().sum::<f64>() / res.scores.len() as f64;
    assert!((res.mean - mean).abs() < 1e-12);
    let sd = (res.scores.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / res.scores.len() as f64).sqrt();
    assert!((res.sd - sd).abs() < 1e-12);
    assert_eq!(evaluate(&out.network, &refs, &text, true, 0.5).unwrap(), res);
}

#[test]
fn no_text_arm_ignores_reports() {
    let c = small_config().for_arm(Ablation::NoText);
    let samples = generate_dataset(20, 7, &c.data.generator).unwrap();
    let out = run(&c, &samples);
    let text = TextSource::for_model(&c.model);
    let refs: Vec<&Sample> = samples.iter().collect();
    let base = evaluate(&out.network, &refs, &text, false, 0.5).unwrap();
    let rewritten: Vec<Sample> = samples.iter().map(|s| Sample { report: swap_words(&s.report, &lr_swaps()), ..s.clone() }).collect();
    let refs2: Vec<&Sample> = rewritten.iter().collect();
    assert_eq!(evaluate(&out.network, &refs2, &text, false, 0.5).unwrap(), base);
}

#[test]
fn arms_configure_as_described() {
    let c = small_config();
    assert_eq!(c.for_arm(Ablation::Flip).augment.p_hflip, 0.5);
    assert_eq!(c.for_arm(Ablation::Full).augment.p_hflip, c.augment.p_hflip);
    assert_eq!(Ablation::BaselineUnet.arch(), Arch::Unet);
    assert!(!Ablation::NoText.uses_text());
    let json = serde_json::to_string(&c).unwrap();
    assert_eq!(serde_json::from_str::<Config>(&json).unwrap(), c);
    assert!(serde_json::from_str::<Config>(r#"{"train":{"lrr":1}}"#).is_err());
    let mut bad = c.clone();
    bad.model.image_size = 64;
    assert!(bad.validate().is_err());
}

#[test]
fn ablation_table_has_one_row_per_arm_and_fold() {
    let mut c = small_config();
    c.data.split = SplitSpec { fold_seeds: vec![0, 1], ..SplitSpec::default() };
    let samples = generate_dataset(24, 8, &c.data.generator).unwrap();
    let text = TextSource::for_model(&c.model);
    let dir = tmp("ablate");
    let (table, nets) =
        ablate::<f32>(&c, &samples, &Ablation::ALL, &text, &load_lexicon(&c).unwrap(), 2, Some(&dir), &silent()).unwrap();
    let csv = std::fs::read_to_string(dir.join("ablation.csv")).unwrap();
    assert_eq!(csv, table.to_csv());
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "arm,fold,dice,sd");
    assert_eq!(lines.len(), 1 + 4 * 2);
    assert_eq!(nets.len(), 4);
    assert!(dir.join("baseline_unet/fold1/runrecord.json").exists());
    let unet = load_model::<f32>(dir.join("baseline_unet/fold0")).unwrap();
    assert_eq!(unet.arch(), Arch::Unet);
    let full = table.get(Ablation::Full).unwrap();
    assert_eq!(table.arms[0].delta_vs_full, Some(0.0));
    assert_eq!(full.fold_dice().len(), 2);
    // Shared folds: each arm sees the same test ids.
    for r in &table.records {
        assert_eq!(r.folds[0].test_ids, full.folds[0].test_ids);
    }
    std::fs::remove_dir_all(dir).unwrap();
}

fn lr_swaps() -> Vec<(String, String)> {
    vec![("left".into(), "right".into()), ("right".into(), "left".into())]
}

#[test]
fn swap_words_is_whole_word_simultaneous_and_case_preserving() {
    assert_eq!(swap_words("Left apical, right basal. LEFT", &lr_swaps()), "Right apical, left basal. RIGHT");
    assert_eq!(swap_words("leftover bright", &lr_swaps()), "leftover bright");
    assert_eq!(swap_words("large left", &[("large".into(), "small".into())]), "small left");
    assert_eq!(swap_words("", &lr_swaps()), "");
}

#[test]
fn probe_reports_side_flips_and_passes_unchanged_reports_through() {
    let mut c = small_config();
    c.data.generator.positive_fraction = 0.7;
    let samples = generate_dataset(20, 9, &c.data.generator).unwrap();
    let out = run(&c, &samples);
    let refs: Vec<&Sample> = samples.iter().collect();
    let emb = c.model.embedder();
    let rep = word_swap_probe(&out.network, &refs, &lr_swaps(), &emb, 0.5).unwrap();
    assert_eq!(rep.samples.len(), samples.len());
    assert!(rep.unchanged > 0);
    for p in rep.samples.iter().filter(|p| !p.changed) {
        assert_eq!(p.iou, 1.0);
        assert_eq!(p.area_original, p.area_swapped);
        assert_eq!(p.side_original, p.side_swapped);
    }
    assert!(rep.flipped <= rep.eligible);
    let err = word_swap_probe(&out.network, &refs, &[("zebra".into(), "horse".into())], &emb, 0.5).unwrap_err();
    assert!(err.to_string().contains("zebra"));
}

#[test]
fn attention_dump_writes_every_level_for_both_reports() {
    let c = small_config();
    let samples = generate_dataset(20, 10, &c.data.generator).unwrap();
    let out = run(&c, &samples);
    let s = samples.iter().find(|s| s.attrs.present).unwrap();
    let dir = tmp("dump");
    let files = attention_dump(&out.network, s, &swap_words(&s.report, &lr_swaps()), &c.model.embedder(), &dir).unwrap();
    assert_eq!(files.len(), c.model.depth * 3 * 2);
    for f in &files {
        let pgm = ctxnet::data::pgm::parse_pgm(&std::fs::read(f).unwrap()).unwrap();
        assert_eq!(pgm.maxval, 65535);
    }
    let ranges = std::fs::read_to_string(dir.join("ranges.txt")).unwrap();
    assert_eq!(ranges.lines().count(), files.len());
    for line in ranges.lines().filter(|l| l.contains("_gate.pgm")) {
        let nums: Vec<f64> = line.split_whitespace().skip(1).map(|kv| kv.split('=').nth(1).unwrap().parse().unwrap()).collect();
        assert!(-1.0 <= nums[0] && nums[0] <= nums[1] && nums[1] <= 1.0, "{line}");
    }
    std::fs::remove_dir_all(&dir).unwrap();

    let unet = run(&c.for_arm(Ablation::BaselineUnet), &samples);
    assert!(attention_dump(&unet.network, s, &s.report, &c.model.embedder(), tmp("dump-unet")).is_err());
}

#[test]
fn oracle_logits_score_one() {
    let c = small_config();
    let samples = generate_dataset(10, 11, &c.data.generator).unwrap();
    for s in &samples {
        let logits: Vec<f32> = s.mask.iter().map(|&m| if m != 0 { 10.0 } else { -10.0 }).collect();
        let pred = ctxnet::model::predict_mask(&logits, 0.5);
        assert_eq!(dice(&pred, &s.mask).unwrap(), 1.0);
    }
}

#[test]
fn arms_differ_only_in_their_declared_setting() {
    let c = small_config();
    let full = serde_json::to_value(c.for_arm(Ablation::Full)).unwrap();
    for arm in Ablation::ALL {
        let v = serde_json::to_value(c.for_arm(arm)).unwrap();
        let mut diffs = Vec::new();
        for section in ["model", "train", "augment", "data"] {
            for (k, x) in v[section].as_object().unwrap() {
                if full[section][k] != *x {
                    diffs.push(format!("{section}.{k}"));
                }
            }
        }
        let expected: Vec<&str> = match arm {
            Ablation::Full => vec![],
            Ablation::Flip => vec!["train.ablation", "augment.p_hflip"],
            _ => vec!["train.ablation"],
        };
        diffs.sort();
        let mut expected: Vec<String> = expected.into_iter().map(String::from).collect();
        expected.sort();
        assert_eq!(diffs, expected, "{arm:?}");
    }
}

#[test]
fn cross_validation_runs_one_fold_per_seed() {
    let c = small_config();
    let samples = generate_dataset(24, 12, &c.data.generator).unwrap();
    let text = TextSource::for_model(&c.model);
    let (cv, nets) = cross_validate::<f32>(&c, &samples, &text, &load_lexicon(&c).unwrap(), 1, None, &silent()).unwrap();
    assert_eq!(cv.folds.len(), 5);
    assert_eq!(nets.len(), 5);
    assert!(cv.sd >= 0.0);
    let folds = mc_split(samples.len(), &c.data.split).unwrap();
    for (r, f) in cv.folds.iter().zip(&folds) {
        let ids: Vec<String> = f.test.iter().map(|&i| samples[i].id.clone()).collect();
        assert_eq!(r.test_ids, ids);
    }
    assert!(cross_validate::<f32>(&c, &samples[..19], &text, &load_lexicon(&c).unwrap(), 1, None, &silent()).is_err());
}

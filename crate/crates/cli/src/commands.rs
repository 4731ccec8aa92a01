use std::path::{Path, PathBuf};

use ctxnet::augment::Lexicon;
use ctxnet::data::pgm::{encode_pgm, mask_to_pgm, parse_pgm, pgm_to_image, pgm_to_mask};
use ctxnet::data::{dice, generate_dataset, mc_split, read_dataset, write_dataset, Sample};
use ctxnet::diffcore::{verify_mode, Real};
use ctxnet::model::Network;
use ctxnet::train::{
    self, ablate, attention_dump, cross_validate, evaluate, load_lexicon, load_model, save_model, swap_words, train_fold,
    word_swap_probe, Ablation, Config, EpochLog, RunRecord, TextSource,
};

use crate::config::load_config;
use crate::error::CliError;
use crate::{Command, Common};

const ECHO: &str = "config.json";
const RUN_RECORD: &str = "runrecord.json";

pub fn run(command: Command) -> Result<(), CliError> {
    if verify_mode() {
        dispatch::<f64>(command)
    } else {
        dispatch::<f32>(command)
    }
}

fn dispatch<T: Real>(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData { common, n } => gen_data(&common, n),
        Command::Train { common, fold, cv } => train_cmd::<T>(&common, fold, cv),
        Command::Eval { common, model, fold } => eval_cmd::<T>(&common, &model, fold),
        Command::Ablate { common } => ablate_cmd::<T>(&common),
        Command::Probe { common, model, swaps, fold } => probe_cmd::<T>(&common, &model, &swaps, fold),
        Command::Viz { common, model, id, swaps } => viz_cmd::<T>(&common, &model, id.as_deref(), &swaps),
        Command::Predict { common, model, image, report, truth } => predict_cmd::<T>(&common, &model, &image, &report, truth.as_deref()),
    }
}

fn resolve(common: &Common) -> Result<Config, CliError> {
    let mut c = load_config(common.config.as_deref(), &common.overrides)?;
    if let Some(seed) = common.seed {
        c.data.seed = seed;
        c.train.seed = seed;
        c.model.init_seed = seed;
    }
    if let Some(t) = common.threshold {
        c.train.threshold = t;
    }
    c.validate()?;
    Ok(c)
}

fn require_out(common: &Common) -> Result<&Path, CliError> {
    common.out.as_deref().ok_or_else(|| CliError::Usage("--out is required".into()))
}

fn write_echo(dir: &Path, config: &Config) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(ECHO), serde_json::to_string_pretty(config)? + "\n")?;
    Ok(())
}

fn dataset(common: &Common, config: &Config) -> Result<Vec<Sample>, CliError> {
    let samples = match &common.data {
        Some(dir) => read_dataset(dir)?,
        None => generate_dataset(config.data.samples, config.data.seed, &config.data.generator)?,
    };
    if let Some(s) = samples.iter().find(|s| s.size != config.model.image_size) {
        return Err(CliError::Data(format!("sample {} is {}x{}, model expects {}", s.id, s.size, s.size, config.model.image_size)));
    }
    Ok(samples)
}

fn log_epoch(r: &RunRecord, e: &EpochLog) {
    eprintln!("{} fold_seed={} epoch={} loss={:.5} val_dice={:.4}", r.arm.name(), r.fold_seed, e.epoch, e.train_loss, e.val_dice);
}

fn gen_data(common: &Common, n: Option<usize>) -> Result<(), CliError> {
    let mut config = resolve(common)?;
    if let Some(n) = n {
        config.data.samples = n;
    }
    let out = require_out(common)?;
    let samples = generate_dataset(config.data.samples, config.data.seed, &config.data.generator)?;
    write_dataset(&samples, out, &config.data.generator)?;
    write_echo(out, &config)?;
    eprintln!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

fn train_cmd<T: Real>(common: &Common, fold: usize, cv: bool) -> Result<(), CliError> {
    let config = resolve(common)?;
    let out = require_out(common)?;
    let samples = dataset(common, &config)?;
    let text = TextSource::from_config(&config)?;
    let lexicon = load_lexicon(&config)?;
    write_echo(out, &config)?;
    if cv {
        let (record, _) = cross_validate::<T>(&config, &samples, &text, &lexicon, common.jobs, Some(out), &log_epoch)?;
        std::fs::write(out.join("cv.json"), serde_json::to_string_pretty(&record)? + "\n")?;
        println!("{} dice mean={:.4} sd={:.4} median={:.4}", record.arm.name(), record.mean, record.sd, record.median);
        return Ok(());
    }
    let folds = mc_split(samples.len(), &config.data.split)?;
    let f = folds.get(fold).ok_or_else(|| CliError::Usage(format!("fold {fold} out of range (0..{})", folds.len())))?;
    let mut outcome = train_fold::<T>(&config, &samples, f, &text, &lexicon, &log_epoch)?;
    save_model(&outcome.network, out)?;
    outcome.record.checkpoint = Some(out.join(train::MODEL_CHECKPOINT).display().to_string());
    std::fs::write(out.join(RUN_RECORD), serde_json::to_string_pretty(&outcome.record)? + "\n")?;
    let r = &outcome.record;
    println!("best_epoch={} val_dice={:.4} test_dice={:.4} sd={:.4}", r.best_epoch, r.best_val_dice, r.test_dice, r.test_sd);
    Ok(())
}

/// The model, with the run config adjusted to the model's own settings.
fn load<T: Real>(common: &Common, model_dir: &Path) -> Result<(Network<T>, Config), CliError> {
    let net = load_model::<T>(model_dir)?;
    let mut config = resolve(common)?;
    if let Ok(text) = std::fs::read_to_string(model_dir.join(RUN_RECORD)) {
        let record: RunRecord = serde_json::from_str(&text)?;
        config.train.ablation = record.config.train.ablation;
    }
    config.model = net.config().clone();
    config.data.generator.image_size = config.model.image_size;
    Ok((net, config))
}

fn select<'a>(samples: &'a [Sample], config: &Config, fold: Option<usize>) -> Result<Vec<&'a Sample>, CliError> {
    Ok(match fold {
        None => samples.iter().collect(),
        Some(k) => {
            let folds = mc_split(samples.len(), &config.data.split)?;
            let f = folds.get(k).ok_or_else(|| CliError::Usage(format!("fold {k} out of range (0..{})", folds.len())))?;
            f.test.iter().map(|&i| &samples[i]).collect()
        }
    })
}

fn eval_cmd<T: Real>(common: &Common, model: &Path, fold: Option<usize>) -> Result<(), CliError> {
    let (net, config) = load::<T>(common, model)?;
    let samples = dataset(common, &config)?;
    let chosen = select(&samples, &config, fold)?;
    let text = TextSource::from_config(&config)?;
    let res = evaluate(&net, &chosen, &text, config.train.ablation.uses_text(), config.train.threshold)?;
    if let Some(out) = &common.out {
        write_echo(out, &config)?;
        std::fs::write(out.join("eval.json"), serde_json::to_string_pretty(&res)? + "\n")?;
    }
    let amb = res.ambiguous_mean.map(|a| format!(" ambiguous={a:.4}")).unwrap_or_default();
    println!("n={} dice mean={:.4} sd={:.4}{amb}", res.scores.len(), res.mean, res.sd);
    Ok(())
}

fn ablate_cmd<T: Real>(common: &Common) -> Result<(), CliError> {
    let config = resolve(common)?;
    let out = require_out(common)?;
    let samples = dataset(common, &config)?;
    let text = TextSource::from_config(&config)?;
    let lexicon: Lexicon = load_lexicon(&config)?;
    write_echo(out, &config)?;
    let (table, _) = ablate::<T>(&config, &samples, &Ablation::ALL, &text, &lexicon, common.jobs, Some(out), &log_epoch)?;
    println!("arm,mean,sd,median,delta_vs_full");
    for a in &table.arms {
        println!("{},{:.4},{:.4},{:.4},{:+.4}", a.arm.name(), a.mean, a.sd, a.median, a.delta_vs_full.unwrap_or(f64::NAN));
    }
    Ok(())
}

fn parse_swaps(raw: &[String]) -> Result<Vec<(String, String)>, CliError> {
    if raw.is_empty() {
        return Ok(vec![("left".into(), "right".into()), ("right".into(), "left".into())]);
    }
    raw.iter()
        .map(|s| match s.split_once(':') {
            Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a.to_string(), b.to_string())),
            _ => Err(CliError::Usage(format!("swap {s:?} is not from:to"))),
        })
        .collect()
}

fn embedder_only(config: &Config) -> Result<(), CliError> {
    if config.data.embeddings.is_some() {
        return Err(CliError::Usage("word swaps need the built-in embedder, not data.embeddings".into()));
    }
    Ok(())
}

fn probe_cmd<T: Real>(common: &Common, model: &Path, swaps: &[String], fold: Option<usize>) -> Result<(), CliError> {
    let swaps = parse_swaps(swaps)?;
    let (net, config) = load::<T>(common, model)?;
    embedder_only(&config)?;
    let samples = dataset(common, &config)?;
    let chosen = select(&samples, &config, fold)?;
    let report = word_swap_probe(&net, &chosen, &swaps, &config.model.embedder(), config.train.threshold)?;
    if let Some(out) = &common.out {
        write_echo(out, &config)?;
        std::fs::write(out.join("probe.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    }
    let pct = |v: Option<f64>| v.map(|p| format!("{p:.1}%")).unwrap_or_else(|| "n/a".into());
    println!(
        "side flips: {}/{} ({}) mean area ratio: {}",
        report.flipped,
        report.eligible,
        pct(report.flip_rate_pct),
        pct(report.area_ratio_pct)
    );
    Ok(())
}

fn viz_cmd<T: Real>(common: &Common, model: &Path, id: Option<&str>, swaps: &[String]) -> Result<(), CliError> {
    let swaps = parse_swaps(swaps)?;
    let (net, config) = load::<T>(common, model)?;
    embedder_only(&config)?;
    let out = require_out(common)?;
    let samples = dataset(common, &config)?;
    let sample = match id {
        Some(id) => samples.iter().find(|s| s.id == id).ok_or_else(|| CliError::Data(format!("no sample {id}")))?,
        None => samples.iter().find(|s| s.attrs.present).ok_or_else(|| CliError::Data("no positive sample".into()))?,
    };
    let swapped = swap_words(&sample.report, &swaps);
    let files = attention_dump(&net, sample, &swapped, &config.model.embedder(), out)?;
    write_echo(out, &config)?;
    std::fs::write(out.join("reports.txt"), format!("original: {}\nswapped: {}\n", sample.report, swapped))?;
    eprintln!("wrote {} maps for {} to {}", files.len(), sample.id, out.display());
    Ok(())
}

fn read_pgm(path: &Path) -> Result<ctxnet::data::pgm::Pgm, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    parse_pgm(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn predict_cmd<T: Real>(common: &Common, model: &Path, image: &Path, report: &str, truth: Option<&Path>) -> Result<(), CliError> {
    let (net, config) = load::<T>(common, model)?;
    let pgm = read_pgm(image)?;
    let size = config.model.image_size;
    if pgm.width != size || pgm.height != size {
        return Err(CliError::Data(format!("image is {}x{}, model expects {size}x{size}", pgm.width, pgm.height)));
    }
    let text = if config.train.ablation.uses_text() { report } else { "" };
    let emb = config.model.embedder().embed_text(text);
    let mask = train::predict(&net, &pgm_to_image(&pgm), size, &emb, config.train.threshold)?;
    let out: PathBuf = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("mask.pgm"), encode_pgm(&mask_to_pgm(&mask, size)))?;
    let area = mask.iter().filter(|&&m| m != 0).count();
    match truth {
        Some(t) => {
            let truth = pgm_to_mask(&read_pgm(t)?);
            println!("area={area} dice={:.4}", dice(&mask, &truth)?);
        }
        None => println!("area={area}"),
    }
    Ok(())
}

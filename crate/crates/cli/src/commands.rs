use std::path::{Path, PathBuf};

use gci_core::corpus::{build_corpus, CorpusConfig, CorpusManifest, Split, MANIFEST_FILE};
use gci_core::egg::{extract_gci_from_egg, EggConfig};
use gci_core::fcn::{
    build_model, detect_from_curve, load_weights, predict_curve, prepare_input, save_weights, train, ArchConfig,
    DetectConfig, EpochRecord, Model, TrainConfig, TrainingSet,
};
use gci_core::metrics::{aggregate, evaluate, format_table, EvalMode, EvalReport, EvalVariant};
use gci_core::par::{default_jobs, par_map};
use gci_core::signal::{read_marks, read_wav, write_marks, AudioBuffer};
use serde::Serialize;

use crate::{
    ArchChoice, CliError, Cli, Command, DetectArgs, EvaluateArgs, ExtractEggArgs, ModeChoice, SynthArgs, TrainArgs,
};

type Result<T> = std::result::Result<T, CliError>;

const MARKS_SUFFIX: &str = ".gci.txt";

pub(crate) fn dispatch(cli: Cli) -> Result<()> {
    let jobs = match cli.jobs {
        Some(0) => return Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(j) => j,
        None => default_jobs(),
    };
    match cli.command {
        Command::Synth(a) => synth(&a, jobs),
        Command::ExtractEgg(a) => extract_egg(&a, jobs),
        Command::Train(a) => train_cmd(&a),
        Command::Detect(a) => detect_cmd(&a, jobs),
        Command::Evaluate(a) => evaluate_cmd(&a, jobs),
    }
}

fn synth(a: &SynthArgs, jobs: usize) -> Result<()> {
    let cfg = CorpusConfig {
        n_utterances: a.n,
        ratios: a.ratios,
        master_seed: a.seed,
        duration_s: (a.min_duration, a.max_duration),
        force: a.force,
        jobs,
    };
    cfg.validate()?;
    let manifest = build_corpus(&cfg, &a.out)?;
    let count = |s| manifest.split(s).count();
    println!(
        "wrote {} entries to {} (train {}, validation {}, test {})",
        manifest.entries.len(),
        a.out.join(MANIFEST_FILE).display(),
        count(Split::Train),
        count(Split::Validation),
        count(Split::Test)
    );
    Ok(())
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| CliError::Usage(format!("{}: not a file name", path.display())))
}

fn output_dir<'a>(out: Option<&'a Path>, input: &'a Path) -> &'a Path {
    out.unwrap_or_else(|| input.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")))
}

fn ensure_dir(dir: Option<&Path>) -> Result<()> {
    if let Some(d) = dir {
        std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
    }
    Ok(())
}

fn pick_channel(path: &Path, channel: usize) -> Result<AudioBuffer> {
    let mut chans = read_wav(path)?;
    if channel >= chans.len() {
        return Err(CliError::Usage(format!(
            "{}: has {} channel(s), channel index {channel} requested",
            path.display(),
            chans.len()
        )));
    }
    Ok(chans.swap_remove(channel))
}

/// Runs `f` on every input and reports the first failure after all finish.
fn for_each_file<F>(inputs: &[PathBuf], jobs: usize, f: F) -> Result<()>
where
    F: Fn(&Path) -> Result<()> + Sync,
{
    let results = par_map(inputs, jobs, |p| f(p));
    let mut first = None;
    for (p, r) in inputs.iter().zip(results) {
        if let Err(e) = r {
            log::error!("{}: {e}", p.display());
            first.get_or_insert(e);
        }
    }
    first.map_or(Ok(()), Err)
}

fn extract_egg(a: &ExtractEggArgs, jobs: usize) -> Result<()> {
    let cfg = EggConfig {
        hp_cutoff: a.hp,
        lp_cutoff: a.lp,
        filter_order: a.order,
        peak_threshold_rel: a.threshold,
        ..EggConfig::default()
    };
    for p in &a.inputs {
        stem(p)?;
    }
    ensure_dir(a.out.as_deref())?;
    for_each_file(&a.inputs, jobs, |input| {
        let egg = pick_channel(input, a.channel)?;
        let marks = extract_gci_from_egg(&egg, &cfg)?;
        let path = output_dir(a.out.as_deref(), input).join(format!("{}{MARKS_SUFFIX}", stem(input)?));
        write_marks(&path, &marks)?;
        log::info!("{}: {} GCIs -> {}", input.display(), marks.len(), path.display());
        Ok(())
    })
}

fn history_path(a: &TrainArgs) -> PathBuf {
    a.history.clone().unwrap_or_else(|| {
        let mut name = a.out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".history.jsonl");
        a.out.with_file_name(name)
    })
}

fn write_history(path: &Path, history: &[EpochRecord]) -> gci_core::Result<()> {
    let mut text = String::new();
    for r in history {
        text.push_str(&serde_json::to_string(r).map_err(gci_core::Error::from)?);
        text.push('\n');
    }
    gci_core::fsutil::atomic_write_bytes(path, text.as_bytes())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        batch_size: a.batch_size.unwrap_or(defaults.batch_size),
        lr_init: a.lr.unwrap_or(defaults.lr_init),
        lr_patience: a.lr_patience.unwrap_or(defaults.lr_patience),
        lr_min: a.lr_min.unwrap_or(defaults.lr_min),
        epoch_batches: a.epoch_batches.unwrap_or(defaults.epoch_batches),
        early_stop_patience: a.early_stop.unwrap_or(defaults.early_stop_patience),
        max_epochs: a.max_epochs.unwrap_or(defaults.max_epochs),
        outputs_per_segment: a.outputs_per_segment.unwrap_or(defaults.outputs_per_segment),
        val_windows: a.val_windows.unwrap_or(defaults.val_windows),
        seed: a.seed,
        ..defaults
    };
    cfg.validate()?;
    let arch = match a.arch {
        ArchChoice::Small => ArchConfig::small(),
        ArchChoice::Full => ArchConfig::full(),
    };
    arch.validate()?;

    let manifest = CorpusManifest::load(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let train_set = TrainingSet::from_manifest(&manifest, base, Split::Train, a.target)?;
    let val_set = TrainingSet::from_manifest(&manifest, base, Split::Validation, a.target)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(CliError::Usage("manifest needs non-empty train and validation splits".into()));
    }
    log::info!(
        "training on {} files, validating on {} files",
        train_set.len(),
        val_set.len()
    );
    let model = build_model(&arch, a.seed)?;
    let history_file = history_path(a);
    let mut history = Vec::new();
    let outcome = train(model, &train_set, &val_set, &cfg, |r| {
        history.push(r.clone());
        write_history(&history_file, &history)
    })?;
    save_weights(&outcome.model, &a.out)?;
    println!(
        "best validation loss {:.6} at epoch {} of {}; weights in {}",
        outcome.best_val_loss,
        outcome.best_epoch,
        outcome.history.len(),
        a.out.display()
    );
    Ok(())
}

fn detect_one(model: &Model, input: &Path, a: &DetectArgs, cfg: &DetectConfig) -> Result<()> {
    let audio = prepare_input(&pick_channel(input, a.channel)?)?;
    let curve = predict_curve(model, &audio)?;
    let marks = detect_from_curve(&curve, cfg)?;
    let dir = output_dir(a.out.as_deref(), input);
    let name = stem(input)?;
    write_marks(&dir.join(format!("{name}{MARKS_SUFFIX}")), &marks)?;
    if a.dump_curve {
        curve.write_csv(&dir.join(format!("{name}.curve.csv")))?;
    }
    log::info!("{}: {} GCIs", input.display(), marks.len());
    Ok(())
}

fn detect_cmd(a: &DetectArgs, jobs: usize) -> Result<()> {
    let cfg = DetectConfig {
        tri_threshold: a.tri_threshold,
        gf_rel_threshold: a.gf_threshold,
        min_distance_s: a.min_distance,
        ..DetectConfig::new(a.target)
    };
    cfg.validate()?;
    for p in &a.inputs {
        stem(p)?;
    }
    let model = load_weights(&a.model)?;
    ensure_dir(a.out.as_deref())?;
    for_each_file(&a.inputs, jobs, |input| detect_one(&model, input, a, &cfg))
}

#[derive(Serialize)]
struct FileReport<'a> {
    name: &'a str,
    #[serde(flatten)]
    report: &'a EvalReport,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    mode: EvalMode,
    files: Vec<FileReport<'a>>,
    skipped: Vec<&'a str>,
    total: EvalReport,
}

fn marker_files(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(MARKS_SUFFIX) && entry.path().is_file() {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn evaluate_cmd(a: &EvaluateArgs, jobs: usize) -> Result<()> {
    let mode = EvalMode::from_variant(match a.mode {
        ModeChoice::Voiced => EvalVariant::VoicedRestricted,
        ModeChoice::All => EvalVariant::AllGcis,
    });
    let names = marker_files(&a.ref_dir)?;
    if names.is_empty() {
        return Err(CliError::Usage(format!(
            "no *{MARKS_SUFFIX} files in {}",
            a.ref_dir.display()
        )));
    }
    let missing: Vec<&str> = names
        .iter()
        .filter(|n| !a.det_dir.join(n).is_file())
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Usage(format!(
            "no detection file in {} for: {}",
            a.det_dir.display(),
            missing.join(", ")
        )));
    }

    let results = par_map(&names, jobs, |n| -> Result<Option<EvalReport>> {
        let reference = read_marks(&a.ref_dir.join(n))?;
        let detected = read_marks(&a.det_dir.join(n))?;
        if reference.is_empty() {
            return Ok(None);
        }
        Ok(Some(evaluate(&reference, &detected, &mode)?))
    });
    let mut files = Vec::new();
    let mut skipped = Vec::new();
    for (n, r) in names.iter().zip(&results) {
        match r {
            Ok(Some(report)) => files.push(FileReport { name: n, report }),
            Ok(None) => {
                log::warn!("{n}: no reference GCIs, skipped");
                skipped.push(n.as_str());
            }
            Err(e) => return Err(CliError::Usage(format!("{n}: {e}"))),
        }
    }
    let reports: Vec<EvalReport> = files.iter().map(|f| f.report.clone()).collect();
    if reports.is_empty() {
        return Err(CliError::Usage("no reference file contains GCIs".into()));
    }
    let total = aggregate(&reports)?;
    print!("{}", format_table(&[("all", &total)]));
    if let Some(path) = &a.report {
        let doc = ReportFile {
            mode,
            files,
            skipped,
            total,
        };
        let mut text = serde_json::to_string_pretty(&doc).map_err(gci_core::Error::from)?;
        text.push('\n');
        gci_core::fsutil::atomic_write_bytes(path, text.as_bytes())?;
    }
    Ok(())
}

use std::io::Write;
use std::path::{Path, PathBuf};

use vibed_core::dataset::{read_manifest, sample_file_name, MANIFEST_FILE};
use vibed_core::metrics::{confusion_csv, confusion_pgm, emit, fmt_rounded, ReportFormat};
use vibed_core::train::{TrainingLog, BEST_CHECKPOINT, TRAINING_LOG_FILE};
use vibed_core::{
    checkpoint, confusion, gen_synthetic, load_dataset, read_sample, report, validate_dataset, Dataset, EpochControl,
    Error, Split, SynthConfig, VibedModel, CLASS_NAMES, NUM_CLASSES,
};

use crate::{run_config, CliError, CliResult, DataArgs, EvalArgs, FormatArg, PredictArgs, SynthArgs, TrainArgs, ValidateArgs};

const RUN_CONFIG_FILE: &str = "run_config.txt";

fn manifest_path(d: &DataArgs) -> CliResult<PathBuf> {
    match (&d.manifest, &d.data_dir) {
        (Some(m), _) => Ok(m.clone()),
        (None, Some(dir)) => Ok(dir.join(MANIFEST_FILE)),
        (None, None) => Err(CliError::Usage("no --manifest given and VIBED_DATA_DIR is not set".into())),
    }
}

fn load(d: &DataArgs) -> CliResult<Dataset> {
    let path = manifest_path(d)?;
    if !path.is_file() {
        return Err(Error::Io {
            path: path.clone(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "manifest not found"),
        }
        .into());
    }
    Ok(load_dataset(&path)?)
}

pub fn train(args: TrainArgs) -> CliResult {
    let dataset = load(&args.data)?;
    let first = dataset
        .split(Split::Train)
        .first()
        .copied()
        .ok_or_else(|| CliError::Core(Error::Contract("train split is empty".into())))?
        .load()?;
    let cfg = run_config::resolve(&args, first.scene.frames, first.scene.dim)?;
    let rendered = cfg.to_kv().render();
    for line in rendered.lines() {
        log::info!("config {line}");
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io { path: args.out.clone(), source: e })?;
    let cfg_path = args.out.join(RUN_CONFIG_FILE);
    std::fs::write(&cfg_path, &rendered).map_err(|e| Error::Io { path: cfg_path, source: e })?;

    let mut model = VibedModel::new(cfg.model.clone())?;
    log::info!("{} parameters", model.parameter_count());
    let epochs = cfg.train.epochs;
    let log = vibed_core::train(&mut model, &dataset, &cfg.train, |r, _| {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |a| format!("{a:.4}"));
        println!(
            "epoch {}/{epochs} train_loss {:.4} val_loss {} val_acc {}",
            r.epoch,
            r.train_loss,
            opt(r.val_loss),
            opt(r.val_accuracy)
        );
        EpochControl::Continue
    })?;
    if let Some(best) = log.best_epoch() {
        println!("best epoch {best}; checkpoints in {}", args.out.display());
    }
    Ok(())
}

fn resolve_checkpoint(spec: &str, run_dir: &Path) -> CliResult<PathBuf> {
    if spec != "best" {
        return Ok(PathBuf::from(spec));
    }
    let log_path = run_dir.join(TRAINING_LOG_FILE);
    if log_path.is_file() {
        if let Some(epoch) = TrainingLog::read(&log_path)?.best_epoch() {
            log::info!("best validation accuracy at epoch {epoch}");
        }
    }
    Ok(run_dir.join(BEST_CHECKPOINT))
}

fn check_compatible(model: &VibedModel, dataset: &Dataset, split: Split) -> CliResult {
    if model.config.n_classes != NUM_CLASSES {
        return Err(Error::Config(format!(
            "checkpoint has {} classes, datasets have {NUM_CLASSES}",
            model.config.n_classes
        ))
        .into());
    }
    if let Some(h) = dataset.split(split).first() {
        let s = h.load()?;
        let (t, d) = (model.config.seq_len, model.config.feature_dim);
        if (s.scene.frames, s.scene.dim) != (t, d) {
            return Err(Error::Config(format!(
                "checkpoint expects {t} × {d} sequences, {} is {} × {}",
                s.clip_id, s.scene.frames, s.scene.dim
            ))
            .into());
        }
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> CliResult {
    let path = resolve_checkpoint(&args.checkpoint, &args.run_dir)?;
    let model = checkpoint::load(&path)?;
    let dataset = load(&args.data)?;
    let split: Split = args.split.into();
    check_compatible(&model, &dataset, split)?;
    let handles = dataset.split(split);
    if handles.is_empty() {
        return Err(CliError::Findings(format!("{split} split is empty")));
    }
    let ev = vibed_core::evaluate(&model, &handles)?;
    let cm = confusion(&ev.truth, &ev.predicted, NUM_CLASSES)?;
    let rep = report(&cm)?;
    let format = match args.format {
        FormatArg::Table => ReportFormat::Table,
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Json => ReportFormat::Json,
    };
    print!("{}", emit(&rep, format));

    let csv_path = args.confusion_csv.unwrap_or_else(|| {
        path.parent().unwrap_or_else(|| Path::new(".")).join(format!("confusion_{split}.csv"))
    });
    let mut csv = confusion_csv(&cm);
    csv.push('\n');
    std::fs::write(&csv_path, csv).map_err(|e| Error::Io { path: csv_path.clone(), source: e })?;
    log::info!("confusion matrix written to {}", csv_path.display());
    if let Some(pgm) = args.confusion_pgm {
        std::fs::write(&pgm, confusion_pgm(&cm, 32)).map_err(|e| Error::Io { path: pgm.clone(), source: e })?;
    }
    Ok(())
}

fn predict_inputs(input: &Path) -> CliResult<Vec<PathBuf>> {
    if !input.is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let manifest = input.join(MANIFEST_FILE);
    if manifest.is_file() {
        return Ok(read_manifest(&manifest)?.into_iter().map(|r| input.join(r.path)).collect());
    }
    let entries = std::fs::read_dir(input).map_err(|e| Error::Io { path: input.to_path_buf(), source: e })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "vbfs"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn predict(args: PredictArgs) -> CliResult {
    let model = checkpoint::load(&args.checkpoint)?;
    let batch = args.input.is_dir();
    let files = predict_inputs(&args.input)?;
    if files.is_empty() {
        return Err(CliError::Usage(format!("no .vbfs files in {}", args.input.display())));
    }
    let (t, d) = (model.config.seq_len, model.config.feature_dim);
    let mut out = std::io::stdout().lock();
    for path in files {
        let s = read_sample(&path)?;
        if (s.scene.frames, s.scene.dim) != (t, d) {
            return Err(Error::Config(format!(
                "{}: sequence is {} × {}, checkpoint expects {t} × {d}",
                path.display(),
                s.scene.frames,
                s.scene.dim
            ))
            .into());
        }
        let (scene, face) = s.tensors()?;
        let p = model.predict(&scene, &face)?;
        let name = CLASS_NAMES.get(p.label).copied().unwrap_or("?");
        let probs: Vec<String> = p.probs.data().iter().map(|&v| fmt_rounded(v, args.digits)).collect();
        let line = format!("{name} {}", probs.join(" "));
        let written = if batch {
            writeln!(out, "{}\t{line}", s.clip_id)
        } else {
            writeln!(out, "{line}")
        };
        match written {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(()),
            Err(e) => return Err(Error::Io { path: "<stdout>".into(), source: e }.into()),
            Ok(()) => {}
        }
    }
    Ok(())
}

pub fn synth(args: SynthArgs) -> CliResult {
    let out = args
        .out
        .or(args.data_dir)
        .ok_or_else(|| CliError::Usage("no --out given and VIBED_DATA_DIR is not set".into()))?;
    let cfg = SynthConfig {
        per_class: args.per_class,
        frames: args.t,
        dim: args.d,
        separation: args.separation,
        seed: args.seed,
    };
    let ds = gen_synthetic(&cfg)?;
    let manifest = ds.write(&out)?;
    debug_assert!(ds.records().iter().all(|h| out.join(sample_file_name(&h.clip_id)).is_file()));
    println!("wrote {} samples and {}", ds.len(), manifest.display());
    Ok(())
}

pub fn validate(args: ValidateArgs) -> CliResult {
    let path = manifest_path(&args.data)?;
    let rep = validate_dataset(&path);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&rep).expect("report serializes"));
    } else {
        print!("{rep}");
    }
    if rep.is_clean() {
        Ok(())
    } else {
        Err(CliError::Findings(format!("{} finding(s) in {}", rep.findings.len(), path.display())))
    }
}

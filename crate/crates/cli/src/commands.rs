use std::path::{Path, PathBuf};

use amvc_core::data::{generate_dataset, read_clip_expecting, Dataset, DomainSpec, Manifest, Split};
use amvc_core::models::{load_checkpoint, ModelBundle};
use amvc_core::train::{dataset_features, domain_probe, evaluate, run, ProbeConfig, TrainConfig, CONFIG_FILE};
use amvc_core::{Error, Result};
use serde_json::json;

use crate::{pgm, Common, EvalArgs, ExportArgs};

pub const THREADS_ENV: &str = "AMVC_THREADS";

/// Defaults, then the config file, then `--set`, then `--seed` and `--threads`.
pub fn load_config(c: &Common) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = &c.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        config
            .apply_text(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }
    config.apply(c.set.iter().map(String::as_str))?;
    if let Some(seed) = c.seed {
        config.seed = seed;
    }
    let threads = match (c.threads, std::env::var(THREADS_ENV)) {
        (Some(n), _) => Some(n),
        (None, Ok(v)) => Some(
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
        ),
        (None, Err(_)) => None,
    };
    if let Some(n) = threads {
        config.threads = n;
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(c: &Common) -> Result<&Path> {
    c.out
        .as_deref()
        .ok_or_else(|| Error::Config("--out is required".into()))
}

fn echo(config: &TrainConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(CONFIG_FILE);
    std::fs::write(&path, format!("{}\n", config.to_json())).map_err(|e| Error::io(&path, e))
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string(value).expect("json value serializes"));
}

pub fn gen_data(c: &Common) -> Result<()> {
    let config = load_config(c)?;
    let out = out_dir(c)?;
    echo(&config, out)?;
    let spec = config.dataset_spec();
    let source = generate_dataset(&spec, &DomainSpec::source(), &out.join("source"))?;
    let target = generate_dataset(&spec, &DomainSpec::target(config.data.gamma), &out.join("target"))?;
    print_json(&json!({
        "source": out.join("source/manifest.csv"),
        "target": out.join("target/manifest.csv"),
        "source_records": source.records.len(),
        "target_records": target.records.len(),
    }));
    Ok(())
}

pub fn train(c: &Common, stage: &str) -> Result<()> {
    let mut config = load_config(c)?;
    config.stage = stage.to_string();
    let out = out_dir(c)?;
    let summary = run(&config, out)?;
    print_json(&json!({
        "stage": stage,
        "steps": summary.state.step,
        "checkpoint": summary.checkpoint,
        "metrics": summary.metrics,
        "skipped_steps": summary.state.skipped_steps,
    }));
    Ok(())
}

fn checkpoint_path(flag: &Option<PathBuf>, config: &TrainConfig) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| config.data.init_checkpoint.clone())
        .ok_or_else(|| Error::Config("no checkpoint: pass --checkpoint or set data.init_checkpoint".into()))
}

fn manifest_path(flag: &Option<PathBuf>, config: &TrainConfig) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| config.data.target.clone())
        .ok_or_else(|| Error::Config("no manifest: pass --manifest or set data.target".into()))
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let config = load_config(&a.common)?;
    if let Some(out) = &a.common.out {
        echo(&config, out)?;
    }
    let split: Split = a.split.parse().map_err(|_| Error::Config(format!("unknown split {:?}", a.split)))?;
    let ckpt = checkpoint_path(&a.checkpoint, &config)?;
    let manifest = manifest_path(&a.manifest, &config)?;
    let bundle: ModelBundle<f32> = load_checkpoint(&ckpt)?;
    let dataset = Dataset::load(&manifest, split)?;
    let e = evaluate(&bundle, &dataset)?;
    let mut report = json!({
        "checkpoint": ckpt,
        "manifest": manifest,
        "split": split.as_str(),
        "stages": bundle.stages,
        "accuracy": e.accuracy,
        "correct": e.correct,
        "n": e.n,
        "per_class": e.per_class,
    });
    if a.probe {
        let need = |p: &Option<PathBuf>, k: &str| {
            p.clone()
                .ok_or_else(|| Error::Config(format!("--probe needs data.{k}")))
        };
        let (s, t) = (need(&config.data.source, "source")?, need(&config.data.target, "target")?);
        let f = |p: &Path, sp| dataset_features(&bundle, &Dataset::load(p, sp)?);
        let acc = domain_probe(
            &f(&s, Split::Train)?,
            &f(&t, Split::Train)?,
            &f(&s, Split::Test)?,
            &f(&t, Split::Test)?,
            ProbeConfig::default(),
        )?;
        report["domain_probe_accuracy"] = json!(acc);
    }
    if let Some(out) = &a.common.out {
        let path = out.join("eval.json");
        std::fs::write(&path, format!("{report:#}\n")).map_err(|e| Error::io(&path, e))?;
    }
    print_json(&report);
    Ok(())
}

pub fn export_masks(a: &ExportArgs) -> Result<()> {
    let config = load_config(&a.common)?;
    let out = out_dir(&a.common)?;
    echo(&config, out)?;
    let bundle: ModelBundle<f32> = load_checkpoint(&checkpoint_path(&a.checkpoint, &config)?)?;
    let clips: Vec<PathBuf> = if a.clips.is_empty() {
        let path = manifest_path(&a.manifest, &config)?;
        let m = Manifest::read(&path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.split(Split::Test).take(a.limit).map(|r| base.join(&r.path)).collect()
    } else {
        a.clips.clone()
    };
    if clips.is_empty() {
        return Err(Error::Manifest("no clips to export".into()));
    }
    let shape = bundle.config().encoder.clip_shape();
    let rho = config.adversarial.keep_ratio;
    let mut written = Vec::new();
    for path in &clips {
        let clip = read_clip_expecting(path, &shape)?;
        let field = bundle.generate_mask(&clip, rho)?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Config(format!("cannot name masks for {}", path.display())))?;
        let (h, w) = (shape[2], shape[3]);
        for (f, frame) in field.values.data().chunks(h * w).enumerate() {
            let file = out.join(format!("{stem}_{f:03}.pgm"));
            pgm::write(&file, w, h, frame)?;
            written.push(file);
        }
    }
    print_json(&json!({ "clips": clips.len(), "images": written.len(), "keep_ratio": rho }));
    Ok(())
}

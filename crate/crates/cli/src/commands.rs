use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::json;
use victr::config::RunConfig;
use victr::dataio::{
    few_shot_sample, generate_synthetic, read_bundle_file, write_bundle_file, Dataset, TEST_SPLIT,
    TRAIN_SPLIT,
};
use victr::eval::{
    predict_all_views, run_ablation_suite, score, train, zero_shot_eval, ABLATIONS,
};
use victr::dataio::format::BUNDLE_VERSION;
use victr::head::checkpoint::CHECKPOINT_VERSION;
use victr::head::{head_flops, head_grad_check, load_checkpoint, save_checkpoint, HeadConfig, HeadParams};
use victr::numerics::Rng;
use victr::VictrError;

use crate::exit::CliError;
use crate::{Command, RunArgs};

type Result<T> = std::result::Result<T, CliError>;

/// Finite-difference step of the gradient check.
const GRADCHECK_STEP: f64 = 1e-6;
/// Spread of the noise added to initial parameters before a gradient check,
/// so that every parameter sits away from its special initial value.
const GRADCHECK_JITTER: f64 = 0.3;

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth { run, out } => synth(&run, &out),
        Command::Train {
            run,
            data,
            out,
            metrics,
            shots,
        } => train_cmd(&run, data.as_deref(), &out, metrics.as_deref(), shots),
        Command::Eval {
            run,
            checkpoint,
            data,
            split,
            views,
            frames_per_view,
        } => eval_cmd(&run, &checkpoint, data.as_deref(), &split, views, frames_per_view),
        Command::Zeroshot {
            run,
            checkpoint,
            data,
            classes,
        } => zeroshot_cmd(&run, &checkpoint, &data, classes.as_deref()),
        Command::Ablate {
            run,
            data,
            rows,
            out,
            metrics,
        } => ablate_cmd(&run, data.as_deref(), rows.as_deref(), out.as_deref(), metrics.as_deref()),
        Command::Gradcheck { run, threshold } => gradcheck_cmd(&run, threshold),
        Command::Flops { run, frames } => flops_cmd(&run, frames),
    }
}

fn load_config(run: &RunArgs) -> Result<RunConfig> {
    let mut overrides = run.overrides.clone();
    if let Some(seed) = run.seed {
        overrides.push(format!("data.seed={seed}"));
        overrides.push(format!("train.seed={seed}"));
    }
    Ok(RunConfig::load(&run.preset, run.config.as_deref(), &overrides)?)
}

fn load_data(cfg: &RunConfig, path: Option<&Path>) -> Result<Dataset> {
    Ok(match path {
        Some(p) => read_bundle_file(p)?,
        None => generate_synthetic(&cfg.data)?,
    })
}

fn check_compatible(head: &HeadConfig, data: &Dataset) -> Result<()> {
    let mismatch = [
        ("embed_dim", head.embed_dim, data.dim()),
        ("n_classes", head.n_classes, data.n_classes()),
        ("n_aux", head.n_aux, data.n_aux()),
    ]
    .into_iter()
    .find(|(_, h, d)| h != d);
    if let Some((what, h, d)) = mismatch {
        return Err(VictrError::Shape(format!("head {what} is {h} but the data has {d}")).into());
    }
    Ok(())
}

fn manifest_path(run: &RunArgs, primary: Option<&Path>, command: &str) -> PathBuf {
    match (&run.manifest, primary) {
        (Some(p), _) => p.clone(),
        (None, Some(out)) => {
            let mut s = out.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        }
        (None, None) => PathBuf::from(format!("victr-{command}.manifest.json")),
    }
}

fn write_manifest(run: &RunArgs, cfg: &RunConfig, primary: Option<&Path>, command: &str) -> Result<()> {
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let manifest = json!({
        "command": command,
        "preset": run.preset,
        "seed": cfg.train.seed,
        "data_seed": cfg.data.seed,
        "config_hash": cfg.hash()?,
        "config": cfg.to_flat_text()?,
        "versions": {
            "victr": env!("CARGO_PKG_VERSION"),
            "bundle_format": BUNDLE_VERSION,
            "checkpoint_format": CHECKPOINT_VERSION,
        },
        "args": std::env::args().collect::<Vec<_>>(),
        "timestamp_unix": timestamp,
    });
    let path = manifest_path(run, primary, command);
    fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn json_lines<T: Serialize>(records: &[T]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

fn synth(run: &RunArgs, out: &Path) -> Result<()> {
    let cfg = load_config(run)?;
    let data = generate_synthetic(&cfg.data)?;
    write_bundle_file(&data, out)?;
    println!(
        "wrote {} bundles ({} classes, {} aux, D={}) to {}",
        data.len(),
        data.n_classes(),
        data.n_aux(),
        data.dim(),
        out.display()
    );
    write_manifest(run, &cfg, Some(out), "synth")
}

fn train_cmd(run: &RunArgs, data: Option<&Path>, out: &Path, metrics: Option<&Path>, shots: Option<usize>) -> Result<()> {
    let cfg = load_config(run)?;
    let data = load_data(&cfg, data)?;
    check_compatible(&cfg.head, &data)?;
    let train_set = match shots {
        Some(k) => few_shot_sample(&data, k, cfg.train.seed)?,
        None => data.split(TRAIN_SPLIT),
    };
    let test_set = data.split(TEST_SPLIT);
    let held_out = (!test_set.is_empty()).then_some(&test_set);
    let params = HeadParams::init(&cfg.head, cfg.train.seed)?;
    let outcome = train(&cfg.train, params, &train_set, held_out)?;
    save_checkpoint(&outcome.params, out)?;

    let mut records: Vec<serde_json::Value> = outcome
        .steps
        .iter()
        .map(|s| json!({"kind": "step", "step": s.step, "loss": s.loss, "lr": s.lr}))
        .collect();
    for (step, report) in &outcome.evals {
        records.push(json!({"kind": "eval", "split": TEST_SPLIT, "step": step, "top1": report.top1, "map": report.map}));
    }
    if let Some(last) = outcome.steps.last() {
        println!("step {} loss {:.6}", last.step + 1, last.loss);
    }
    if let Some((step, report)) = outcome.evals.last() {
        let (name, value) = report.metric();
        println!("step {step} {TEST_SPLIT} {name} {value:.4}");
    }
    if let Some(path) = metrics {
        fs::write(path, json_lines(&records)?)?;
    }
    println!("checkpoint {}", out.display());
    write_manifest(run, &cfg, Some(out), "train")
}

fn eval_cmd(
    run: &RunArgs,
    checkpoint: &Path,
    data: Option<&Path>,
    split: &str,
    views: usize,
    frames_per_view: Option<usize>,
) -> Result<()> {
    let cfg = load_config(run)?;
    let params = load_checkpoint(checkpoint)?;
    let data = load_data(&cfg, data)?.split(split);
    check_compatible(&params.config, &data)?;
    if data.is_empty() {
        return Err(VictrError::Label(format!("no bundles tagged '{split}'")).into());
    }
    let frames = frames_per_view.unwrap_or_else(|| data.bundles.iter().map(|b| b.frames.rows).min().unwrap_or(1));
    let logits = predict_all_views(&params, &data, views, frames)?;
    let report = score(&data, &logits)?;
    let record = json!({
        "kind": "eval",
        "split": split,
        "videos": report.videos,
        "views": views,
        "frames_per_view": frames,
        "top1": report.top1,
        "map": report.map,
    });
    println!("{record}");
    write_manifest(run, &cfg, None, "eval")
}

fn parse_list(list: &str) -> Result<Vec<usize>> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| VictrError::Config(format!("'{s}' is not a class index")).into())
        })
        .collect()
}

fn zeroshot_cmd(run: &RunArgs, checkpoint: &Path, files: &[PathBuf], classes: Option<&str>) -> Result<()> {
    let cfg = load_config(run)?;
    let params = load_checkpoint(checkpoint)?;
    let mut splits = Vec::new();
    let sources: Vec<Option<&Path>> = if files.is_empty() {
        vec![None]
    } else {
        files.iter().map(|p| Some(p.as_path())).collect()
    };
    for src in sources {
        let data = load_data(&cfg, src)?;
        let test = data.split(TEST_SPLIT);
        let mut split = if test.is_empty() { data } else { test };
        if let Some(list) = classes {
            split = split.restrict_classes(&parse_list(list)?)?;
        }
        splits.push(split);
    }
    let report = zero_shot_eval(&params, &splits)?;
    println!(
        "{}",
        json!({"kind": "zeroshot", "per_split": report.per_split, "mean": report.mean, "std": report.std})
    );
    write_manifest(run, &cfg, None, "zeroshot")
}

fn ablate_cmd(run: &RunArgs, data: Option<&Path>, rows: Option<&str>, out: Option<&Path>, metrics: Option<&Path>) -> Result<()> {
    let cfg = load_config(run)?;
    let data = load_data(&cfg, data)?;
    check_compatible(&cfg.head, &data)?;
    let names: Vec<&str> = match rows {
        Some(list) => list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect(),
        None => ABLATIONS.iter().map(|a| a.name).collect(),
    };
    let table = run_ablation_suite(&names, &cfg.head, &cfg.train, &data.split(TRAIN_SPLIT), &data.split(TEST_SPLIT))?;
    let text = table.to_text();
    print!("{text}");
    if let Some(p) = out {
        fs::write(p, &text)?;
    }
    if let Some(p) = metrics {
        fs::write(p, table.to_json_lines()?)?;
    }
    write_manifest(run, &cfg, out.or(metrics), "ablate")
}

fn gradcheck_cmd(run: &RunArgs, threshold: f64) -> Result<()> {
    let cfg = load_config(run)?;
    let data = generate_synthetic(&cfg.data)?;
    let bundle = data
        .bundles
        .first()
        .ok_or_else(|| VictrError::Config("synthetic data is empty".into()))?;
    let mut params = HeadParams::init(&cfg.head, cfg.train.seed)?;
    let mut rng = Rng::new(cfg.train.seed).fork(0x6c);
    let jittered: Vec<f64> = params.flatten().iter().map(|v| v + GRADCHECK_JITTER * rng.normal()).collect();
    params.load_flat(&jittered)?;
    let error = head_grad_check(
        &params,
        &data.input(bundle),
        &bundle.label,
        data.label_mode,
        cfg.train.aux_weight,
        GRADCHECK_STEP,
    )?;
    println!(
        "{}",
        json!({"kind": "gradcheck", "parameters": params.num_scalars(), "max_relative_error": error, "threshold": threshold})
    );
    write_manifest(run, &cfg, None, "gradcheck")?;
    if error.is_nan() || error > threshold {
        return Err(CliError::GradCheck { error, threshold });
    }
    Ok(())
}

fn flops_cmd(run: &RunArgs, frames: Option<usize>) -> Result<()> {
    let cfg = load_config(run)?;
    let t = frames.unwrap_or(cfg.data.frames);
    let f = head_flops(&cfg.head, t);
    for (name, v) in f.rows() {
        println!("{name:<14} {v:>16}");
    }
    println!("{:<14} {:>16}", "total", f.total());
    println!("{:<14} {:>16}", "per_logit", f.per_logit());
    write_manifest(run, &cfg, None, "flops")
}

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use vgs_core::avdata::media::{read_wav, write_frame, write_wav};
use vgs_core::avdata::{load_manifest, split_speakers, synth_generate, write_manifest, AlignedSample, SampleDescriptor};
use vgs_core::features::{extract as extract_features, write_features};
use vgs_core::model::{ArchConfig, ModelParams};
use vgs_core::numerics::{adjoint_check, gradient_suite};
use vgs_core::pretrain::{load_checkpoint, load_checkpoint_for, train, train_from, TrainOptions};
use vgs_core::probe::{
    evaluate, load_feature_manifest, load_labeled_splits, train_probe, write_feature_manifest, write_probe_metrics, FeatureRow,
    Split,
};

use crate::config::RunConfig;
use crate::plot::{line_chart, Series};
use crate::CliError;

const GRAD_TOL: f64 = 1e-4;
const ADJOINT_TOL: f64 = 1e-10;

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Failed(format!("cannot create {}: {e}", path.display())))
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let corpus = synth_generate(&cfg.synthetic_spec())?;
    create_dir(out)?;
    let mut rows = Vec::with_capacity(corpus.len());
    for s in &corpus {
        let dir = out.join(&s.id);
        let frames_dir = dir.join("frames");
        create_dir(&frames_dir)?;
        let wav_path = dir.join("audio.wav");
        write_wav(&wav_path, &s.waveform)?;
        for t in 0..s.frames() {
            write_frame(&frames_dir.join(format!("{t:05}.ppm")), s.video.frame(t))?;
        }
        rows.push(SampleDescriptor { id: s.id.clone(), speaker: s.speaker_id.clone(), wav_path, frames_dir, label: s.label });
    }
    let manifest = out.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    println!("synth: wrote {} clips ({} speakers x {} clips) and {}", rows.len(), cfg.speakers, cfg.clips, manifest.display());
    Ok(())
}

fn load_corpus(manifest: &Path) -> Result<Vec<AlignedSample>, CliError> {
    let descs = load_manifest(manifest)?;
    if descs.is_empty() {
        return Err(CliError::Failed(format!("manifest {} lists no clips", manifest.display())));
    }
    Ok(descs.iter().map(SampleDescriptor::load).collect::<Result<_, _>>()?)
}

pub fn pretrain(cfg: &RunConfig, manifest: &Path, checkpoint: &Path, metrics: Option<&Path>, resume: bool) -> Result<(), CliError> {
    let tc = cfg.train_config();
    let corpus = load_corpus(manifest)?;
    eprintln!("pretrain: {} clips from {}", corpus.len(), manifest.display());
    let opts = TrainOptions { checkpoint: Some(checkpoint.to_path_buf()), metrics: metrics.map(Path::to_path_buf), verbose: true };
    let state = if resume && checkpoint.is_file() {
        let state = load_checkpoint_for(checkpoint, &tc.arch()?)?;
        eprintln!("pretrain: resuming after epoch {} from {}", state.epoch, checkpoint.display());
        train_from(state, &corpus, &tc, &opts)?
    } else {
        train(&corpus, &tc, &opts)?
    };
    match (state.loss_history.first(), state.loss_history.last()) {
        (Some(first), Some(last)) => println!(
            "pretrain: {} epochs, mean L1 {first:.5} -> {last:.5} (ratio {:.3}); checkpoint {}",
            state.epoch,
            last / first,
            checkpoint.display()
        ),
        _ => println!("pretrain: no epochs run; checkpoint {}", checkpoint.display()),
    }
    Ok(())
}

pub fn extract(cfg: &RunConfig, manifest: &Path, checkpoint: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let params = match checkpoint {
        Some(path) => {
            let state = load_checkpoint(path)?;
            eprintln!("extract: checkpoint {} (epoch {}, width {})", path.display(), state.epoch, state.params.arch.width_multiplier);
            state.params
        }
        None => {
            eprintln!("extract: random-init encoder (width {}, seed {})", cfg.width, cfg.seed);
            ModelParams::init(ArchConfig::new(cfg.width)?, cfg.seed)
        }
    };
    let descs = load_manifest(manifest)?;
    if let Some(d) = descs.iter().find(|d| d.label.is_none()) {
        return Err(CliError::Failed(format!("clip {} has no label; the probe manifest needs one per clip", d.id)));
    }
    let (train, val, test) = split_speakers(descs.clone(), cfg.split, cfg.seed)?;
    let mut split_of: HashMap<String, Split> = HashMap::new();
    for (items, split) in [(train, Split::Train), (val, Split::Val), (test, Split::Test)] {
        split_of.extend(items.into_iter().map(|d| (d.id, split)));
    }
    create_dir(out)?;
    let mut rows = Vec::with_capacity(descs.len());
    for d in &descs {
        let fs = extract_features(&d.id, &read_wav(&d.wav_path)?, &params)?;
        let feature_path: PathBuf = out.join(format!("{}.vgsf", d.id));
        write_features(&fs, &feature_path)?;
        rows.push(FeatureRow { id: d.id.clone(), feature_path, label: d.label.expect("checked above"), split: split_of[&d.id] });
    }
    let index = out.join("features.csv");
    write_feature_manifest(&index, &rows)?;
    let count = |s: Split| rows.iter().filter(|r| r.split == s).count();
    println!(
        "extract: {} feature files (train {}, val {}, test {}) and {}",
        rows.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        index.display()
    );
    Ok(())
}

pub fn probe(cfg: &RunConfig, features: &Path, out: &Path) -> Result<(), CliError> {
    let rows = load_feature_manifest(features)?;
    let [train, val, test] = load_labeled_splits(&rows)?;
    eprintln!("probe: train {}, val {}, test {}", train.len(), val.len(), test.len());
    let (params, mut metrics) = train_probe(&train, &val, &cfg.probe_config())?;
    if !test.is_empty() {
        metrics.test_accuracy = Some(evaluate(&params, &test)?);
    }
    create_dir(out)?;
    let (csv, json) = (out.join("probe_metrics.csv"), out.join("probe_summary.json"));
    write_probe_metrics(&metrics, &csv, &json)?;
    let test_acc = metrics.test_accuracy.map_or("n/a".to_string(), |a| format!("{a:.2}"));
    println!(
        "probe: best epoch {} (val acc {:.2}), test accuracy {test_acc}; {}",
        metrics.best_epoch,
        metrics.val_acc[metrics.best_epoch - 1],
        json.display()
    );
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig, instances: usize) -> Result<(), CliError> {
    let checks = gradient_suite(cfg.seed, instances)?;
    println!("{:<18} {:>9} {:>14}", "op", "instances", "max_rel_error");
    let mut failed = Vec::new();
    for c in &checks {
        let ok = c.max_rel_error <= GRAD_TOL;
        println!("{:<18} {:>9} {:>14.3e}  {}", c.op, c.instances, c.max_rel_error, if ok { "ok" } else { "FAIL" });
        if !ok {
            failed.push(c.op);
        }
    }
    let adjoint = adjoint_check(cfg.seed, 20)?;
    let ok = adjoint <= ADJOINT_TOL;
    println!("{:<18} {:>9} {:>14.3e}  {}", "adjoint", 20, adjoint, if ok { "ok" } else { "FAIL" });
    if !ok {
        failed.push("adjoint");
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("gradient check failed for {}", failed.join(", "))))
    }
}

pub fn report(metrics: &Path, out: &Path) -> Result<(), CliError> {
    let fail = |e: csv::Error| CliError::Failed(format!("{}: {e}", metrics.display()));
    let mut reader = csv::Reader::from_path(metrics).map_err(fail)?;
    let headers: Vec<String> = reader.headers().map_err(fail)?.iter().map(str::to_owned).collect();
    let x_col = headers
        .iter()
        .position(|h| h == "epoch")
        .ok_or_else(|| CliError::Failed(format!("{}: no `epoch` column", metrics.display())))?;
    let y_cols: Vec<usize> = (0..headers.len()).filter(|&i| i != x_col && !["lr", "wall_seconds"].contains(&headers[i].as_str())).collect();
    let mut series: Vec<Series> = y_cols.iter().map(|&i| Series { name: headers[i].clone(), points: Vec::new() }).collect();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(fail)?;
        let num = |i: usize| -> Result<f64, CliError> {
            rec.get(i)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| CliError::Failed(format!("{} row {}: column `{}` is not a number", metrics.display(), row + 1, headers[i])))
        };
        let x = num(x_col)?;
        for (s, &i) in series.iter_mut().zip(&y_cols) {
            s.points.push((x, num(i)?));
        }
    }
    if series.is_empty() || series[0].points.is_empty() {
        return Err(CliError::Failed(format!("{}: nothing to plot", metrics.display())));
    }
    let title = metrics.file_stem().map_or("metrics".into(), |s| s.to_string_lossy().into_owned());
    std::fs::write(out, line_chart(&title, "epoch", &series)).map_err(|e| CliError::Failed(format!("{}: {e}", out.display())))?;
    println!("report: {} series, {} points -> {}", series.len(), series[0].points.len(), out.display());
    Ok(())
}

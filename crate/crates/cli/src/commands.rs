use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use blobloss::{
    blob_loss, build_split, component_sizes, full_report, generate, instance_shape_features,
    label_components, mask_report, read_volume, run_experiment, write_volume, AnyVolume,
    BaseLoss, BinaryMask, BlobLossConfig, EvalOptions, ExperimentOutcome, InstanceLabeling,
    MetricsReport, Sample, Split, SynthSpec, TrainConfig,
};
use serde::Serialize;
use serde_json::json;

use crate::args::{
    BaseArg, CcArgs, CompareArgs, EvalArgs, FormatFlags, LossArgs, ShapesArgs, SynthArgs,
    TrainArgs,
};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::table::{self, VariantRuns};

fn read(path: &Path) -> CliResult<AnyVolume> {
    read_volume(path).map_err(|e| CliError::io(path, e))
}

fn read_mask(path: &Path) -> CliResult<BinaryMask> {
    read(path)?.into_mask().map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Io(format!("stdout: {e}")))
}

pub fn cc(a: &CcArgs, out: &mut dyn Write) -> CliResult<()> {
    let mask = read_mask(&a.input)?;
    let labels = label_components(&mask, a.connectivity);
    write_volume(&a.out, &labels).map_err(|e| CliError::io(&a.out, e))?;
    let text = if a.json {
        let sizes: Vec<usize> = component_sizes(&labels).into_iter().map(|(_, c)| c).collect();
        to_json(&json!({
            "connectivity": a.connectivity,
            "n_instances": labels.n_instances(),
            "sizes": sizes,
        }))
    } else {
        format!("n_instances {}\n", labels.n_instances())
    };
    emit(out, &text)
}

fn base_from_args(a: &LossArgs) -> CliResult<BaseLoss> {
    let base = match (a.base, a.tversky_a, a.tversky_b) {
        (BaseArg::Dice, None, None) => BaseLoss::soft_dice(),
        (BaseArg::Dice, _, _) => {
            return Err(CliError::Usage(
                "--tversky-a/--tversky-b only apply to --base tversky".into(),
            ))
        }
        (BaseArg::Tversky, Some(fp), Some(fn_)) => BaseLoss::tversky(fp, fn_),
        (BaseArg::Tversky, _, _) => {
            return Err(CliError::Usage(
                "--base tversky requires both --tversky-a and --tversky-b".into(),
            ))
        }
    };
    Ok(base.with_epsilon(a.epsilon))
}

pub fn loss(a: &LossArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = BlobLossConfig {
        alpha: a.alpha,
        beta: a.beta,
        base: base_from_args(a)?,
        masking_enabled: !a.no_masking,
    };
    cfg.validate()?;
    let p = read(&a.pred)?
        .into_probability()
        .map_err(|e| CliError::io(&a.pred, e))?;
    let g = read_mask(&a.gt)?;
    let labels = match &a.labels {
        Some(path) => read(path)?.into_labels().map_err(|e| CliError::io(path, e))?,
        None => label_components(&g, a.connectivity),
    };
    let r = blob_loss(&p, &g, &labels, &cfg)?;
    let text = if a.json {
        to_json(&json!({
            "value": r.value,
            "global_term": r.global_term,
            "blob_term": r.blob_term,
            "n_instances": r.n_instances,
        }))
    } else {
        format!(
            "value {}\nglobal_term {}\nblob_term {}\nn_instances {}\n",
            r.value, r.global_term, r.blob_term, r.n_instances
        )
    };
    emit(out, &text)
}

const REPORT_FIELDS: [&str; 10] = [
    "dsc",
    "sensitivity",
    "precision",
    "surface_dsc",
    "f1",
    "instance_sensitivity",
    "instance_precision",
    "tp",
    "fp",
    "fn",
];

fn report_values(r: &MetricsReport) -> Vec<String> {
    let mut v: Vec<String> = r.named_rates().iter().map(|(_, x)| x.to_string()).collect();
    v.extend([r.tp.to_string(), r.fp.to_string(), r.fn_.to_string()]);
    v
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8 fields")
}

fn format_report(r: &MetricsReport, format: FormatFlags) -> String {
    if format.json {
        to_json(r)
    } else if format.csv {
        csv_text(&REPORT_FIELDS, &[report_values(r)])
    } else {
        REPORT_FIELDS
            .iter()
            .zip(report_values(r))
            .map(|(k, v)| format!("{k} {v}\n"))
            .collect()
    }
}

pub fn eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(CliError::Usage(format!("--threshold must be in [0, 1], got {}", a.threshold)));
    }
    let opts = EvalOptions {
        threshold: a.threshold,
        connectivity: a.connectivity,
        tolerance: a.tol,
        min_overlap: a.min_overlap,
        matching: a.matching.into(),
    };
    let g = read_mask(&a.gt)?;
    let report = match read(&a.pred)? {
        AnyVolume::Probability(p) => full_report(&p, &g, &opts)?,
        other => mask_report(&other.into_mask().map_err(|e| CliError::io(&a.pred, e))?, &g, &opts)?,
    };
    emit(out, &format_report(&report, a.format))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn synth(a: &SynthArgs, out: &mut dyn Write) -> CliResult<()> {
    let text = fs::read_to_string(&a.spec).map_err(|e| CliError::io(&a.spec, e))?;
    let mut spec: SynthSpec = serde_json::from_str(&text).map_err(|e| CliError::io(&a.spec, e))?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let sample = generate(&spec)?;
    let labels = label_components(&sample.gt, blobloss::Connectivity::Face6);

    let paths = [
        with_suffix(&a.out_prefix, "_intensity.blv"),
        with_suffix(&a.out_prefix, "_gt.blv"),
        with_suffix(&a.out_prefix, "_labels.blv"),
    ];
    if let Some(dir) = paths[0].parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    write_volume(&paths[0], &sample.intensity).map_err(|e| CliError::io(&paths[0], e))?;
    write_volume(&paths[1], &sample.gt).map_err(|e| CliError::io(&paths[1], e))?;
    write_volume(&paths[2], &labels).map_err(|e| CliError::io(&paths[2], e))?;

    let text = if a.json {
        to_json(&json!({
            "seed": spec.seed,
            "dims": spec.dims,
            "n_instances": labels.n_instances(),
            "foreground_voxels": sample.gt.count(),
            "blobs": sample.blobs,
        }))
    } else {
        let mut s = format!(
            "seed {}\nn_instances {}\nforeground_voxels {}\n",
            spec.seed,
            labels.n_instances(),
            sample.gt.count()
        );
        for p in &paths {
            s.push_str(&format!("wrote {}\n", p.display()));
        }
        s
    };
    emit(out, &text)
}

const SHAPE_FIELDS: [&str; 7] = [
    "id",
    "volume",
    "compactness",
    "sphereness",
    "stringness",
    "skewness",
    "raw_sphere_ratio",
];

pub fn shapes(a: &ShapesArgs, out: &mut dyn Write) -> CliResult<()> {
    let labels: InstanceLabeling = match read(&a.labels)? {
        AnyVolume::Labels(l) => l,
        other => label_components(
            &other.into_mask().map_err(|e| CliError::io(&a.labels, e))?,
            a.connectivity,
        ),
    };
    let features = instance_shape_features(&labels)?;
    let text = if a.format.json {
        let rows: Vec<_> = features
            .iter()
            .map(|(id, f)| {
                json!({
                    "id": id,
                    "volume": f.volume,
                    "compactness": f.compactness,
                    "sphereness": f.sphereness,
                    "stringness": f.stringness,
                    "skewness": f.skewness,
                    "raw_sphere_ratio": f.raw_sphere_ratio,
                })
            })
            .collect();
        to_json(&rows)
    } else {
        let rows: Vec<Vec<String>> = features
            .iter()
            .map(|(id, f)| {
                vec![
                    id.to_string(),
                    f.volume.to_string(),
                    f.compactness.to_string(),
                    f.sphereness.to_string(),
                    f.stringness.to_string(),
                    f.skewness.to_string(),
                    f.raw_sphere_ratio.to_string(),
                ]
            })
            .collect();
        csv_text(&SHAPE_FIELDS, &rows)
    };
    emit(out, &text)
}

struct Data {
    train: Vec<Sample>,
    validation: Vec<Sample>,
    test: Vec<Sample>,
}

fn build_data(cfg: &ExperimentConfig, seed: u64) -> CliResult<Data> {
    let conn = cfg.eval.connectivity;
    Ok(Data {
        train: build_split(&cfg.splits.train.expand(), Split::Train, seed, conn)?,
        validation: build_split(&cfg.splits.validation.expand(), Split::Validation, seed, conn)?,
        test: build_split(&cfg.splits.test.expand(), Split::Test, seed, conn)?,
    })
}

fn run(data: &Data, train: &TrainConfig, eval: &EvalOptions) -> CliResult<ExperimentOutcome> {
    Ok(run_experiment(&data.train, &data.validation, &data.test, train, eval)?)
}

fn history_csv(outcome: &ExperimentOutcome) -> String {
    let mut header = vec!["epoch", "train_loss", "validation_loss"];
    header.extend(REPORT_FIELDS);
    let rows: Vec<Vec<String>> = outcome
        .history
        .iter()
        .map(|r| {
            let mut row = vec![
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.validation_loss.to_string(),
            ];
            row.extend(report_values(&r.validation));
            row
        })
        .collect();
    csv_text(&header, &rows)
}

pub fn train(a: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    let dir = a
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set \"out\"".into()))?;

    let data = build_data(&cfg, cfg.train.seed)?;
    let outcome = run(&data, &cfg.train, &cfg.eval)?;

    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    write_file(&dir.join("history.csv"), history_csv(&outcome))?;
    write_file(&dir.join("model.bin"), outcome.model.to_bytes())?;
    let last = outcome.history.last().expect("epochs >= 1");
    let report = json!({
        "seed": cfg.train.seed,
        "epochs": cfg.train.epochs,
        "checkpoint": cfg.train.checkpoint,
        "selected_epoch": outcome.selected_epoch,
        "final_train_loss": last.train_loss,
        "final_validation_loss": last.validation_loss,
        "model": outcome.model,
        "test": outcome.test_report,
    });
    write_file(&dir.join("report.json"), to_json(&report))?;

    let t = &outcome.test_report;
    emit(
        out,
        &format!(
            "selected_epoch {}\ntest_dsc {}\ntest_f1 {}\ntest_instance_sensitivity {}\ntest_instance_precision {}\n",
            outcome.selected_epoch, t.dsc, t.f1, t.instance_sensitivity, t.instance_precision
        ),
    )
}

/// Plain dice and blob dice sharing the config's base loss. Blob weights come from the config
/// when it already has a blob part, otherwise they default to alpha 2, beta 1.
fn paired_losses(cfg: &BlobLossConfig) -> [(&'static str, BlobLossConfig); 2] {
    let blob = if cfg.beta > 0.0 {
        *cfg
    } else {
        BlobLossConfig {
            base: cfg.base,
            masking_enabled: cfg.masking_enabled,
            ..BlobLossConfig::default()
        }
    };
    let name = match cfg.base.kind {
        blobloss::BaseLossKind::Dice => ("dice", "blob dice"),
        blobloss::BaseLossKind::Tversky => ("tversky", "blob tversky"),
    };
    [(name.0, BlobLossConfig::plain(cfg.base)), (name.1, blob)]
}

pub fn compare(a: &CompareArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let variants = paired_losses(&cfg.train.loss);
    let mut runs: Vec<VariantRuns> = variants
        .iter()
        .map(|(name, _)| VariantRuns {
            name: name.to_string(),
            reports: Vec::new(),
        })
        .collect();
    let mut run_rows = Vec::new();

    for seed in 1..=a.seeds {
        let data = build_data(&cfg, seed)?;
        for (k, (name, loss)) in variants.iter().enumerate() {
            let train = TrainConfig {
                seed,
                loss: *loss,
                ..cfg.train.clone()
            };
            let outcome = run(&data, &train, &cfg.eval)?;
            let mut row = vec![seed.to_string(), name.to_string(), outcome.selected_epoch.to_string()];
            row.extend(report_values(&outcome.test_report));
            run_rows.push(row);
            runs[k].reports.push(outcome.test_report);
        }
    }

    let md = table::markdown(&runs);
    let csv = table::csv(&runs);
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        write_file(&dir.join("table.md"), &md)?;
        write_file(&dir.join("table.csv"), &csv)?;
        let mut header = vec!["seed", "loss", "selected_epoch"];
        header.extend(REPORT_FIELDS);
        write_file(&dir.join("runs.csv"), csv_text(&header, &run_rows))?;
    }
    emit(out, if a.csv { &csv } else { &md })
}

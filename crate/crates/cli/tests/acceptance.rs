//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Criterion 6 trains 20 models on 48³ volumes and takes a couple of minutes with
//! optimizations on.

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use blobloss::{
    base_loss, blob_loss, blob_term, detection_metrics, instance_losses, instance_terms,
    label_components, multiclass_blob_loss, shape_features, BaseLoss, BinaryMask, BlobLossConfig,
    Connectivity, DenseVolume, Dims, InstanceLabeling, MatchingMode, OneHotSegmentation,
};
use oracle::{
    ball, bfs_components, brute_blob_term, detection_scene, finite_difference, max_relative_error,
    permute_axes, random_dims, random_labels, random_mask, random_probs, rng,
};
use rand::Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_base(r: &mut impl Rng) -> BaseLoss {
    if r.random_bool(0.5) {
        BaseLoss::soft_dice()
    } else {
        BaseLoss::tversky(r.random_range(0.1..0.9), r.random_range(0.1..0.9))
    }
}

fn gradient_suite() -> Check {
    const H: f64 = 1e-4;
    const FLOOR: f64 = 1e-8;
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    let mut cases = 0usize;
    let mut record = |name: &str, analytic: &DenseVolume, fd: &[f64]| -> Result<(), String> {
        let err = max_relative_error(analytic.as_slice(), fd, FLOOR);
        worst = worst.max(err);
        cases += 1;
        ensure(err < 1e-5, || format!("{name} case {cases}: relative error {err:e}"))
    };
    for _ in 0..50 {
        let d = random_dims(&mut r, 1, 8);
        let p = random_probs(&mut r, d, 0.05, 0.95);
        let labels = random_labels(&mut r, d, 4, 0.3);
        let g = labels.foreground();
        let full = BinaryMask::full(d);

        let dice = BaseLoss::soft_dice();
        let a = base_loss(&p, &g, &dice, &full).unwrap();
        record("soft dice", &a.grad, &finite_difference(&p, H, |q| base_loss(q, &g, &dice, &full).unwrap().value))?;

        let tv = BaseLoss::tversky(r.random_range(0.1..0.9), r.random_range(0.1..0.9));
        let a = base_loss(&p, &g, &tv, &full).unwrap();
        record("tversky", &a.grad, &finite_difference(&p, H, |q| base_loss(q, &g, &tv, &full).unwrap().value))?;

        let base = random_base(&mut r);
        let masking = r.random_bool(0.7);
        let a = blob_term(&p, &labels, &base, masking).unwrap();
        record("blob_term", &a.grad, &finite_difference(&p, H, |q| {
            blob_term(q, &labels, &base, masking).unwrap().value
        }))?;

        let cfg = BlobLossConfig {
            alpha: r.random_range(0.0..3.0),
            beta: r.random_range(0.0..3.0),
            base: random_base(&mut r),
            masking_enabled: r.random_bool(0.7),
        };
        let a = blob_loss(&p, &g, &labels, &cfg).unwrap();
        record("blob_loss", &a.grad, &finite_difference(&p, H, |q| {
            blob_loss(q, &g, &labels, &cfg).unwrap().value
        }))?;

        let n_classes = r.random_range(1..=3usize);
        let classes: Vec<u32> = (0..d.len())
            .map(|_| if r.random_bool(0.4) { r.random_range(1..=n_classes as u32) } else { 0 })
            .collect();
        let seg = OneHotSegmentation::from_class_map(d, &classes, n_classes, Connectivity::Face6).unwrap();
        let probs: Vec<DenseVolume> = (0..n_classes).map(|_| random_probs(&mut r, d, 0.05, 0.95)).collect();
        let a = multiclass_blob_loss(&probs, &seg, &cfg).unwrap();
        for c in 0..n_classes {
            let fd = finite_difference(&probs[c], H, |q| {
                let mut probe = probs.clone();
                probe[c] = q.clone();
                multiclass_blob_loss(&probe, &seg, &cfg).unwrap().value
            });
            record("multiclass", &a.grads[c], &fd)?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:.1?}"))?;
    Ok(format!("{cases} gradient checks, max relative error {worst:.2e}, {elapsed:.2?}"))
}

fn oracle_equivalence() -> Check {
    let mut r = rng(102);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let d = random_dims(&mut r, 1, 10);
        let p = random_probs(&mut r, d, 0.0, 1.0);
        let labels = random_labels(&mut r, d, 5, 0.3);
        let base = random_base(&mut r);
        for masking in [true, false] {
            let fast = blob_term(&p, &labels, &base, masking).unwrap().value;
            let brute = brute_blob_term(&p, &labels, &base, masking);
            worst = worst.max((fast - brute).abs());
            ensure((fast - brute).abs() <= 1e-12, || format!("blob_term case {case}: {fast} vs {brute}"))?;
        }
    }
    let d = Dims::cube(16).unwrap();
    for case in 0..100 {
        let density = r.random_range(0.1..0.6);
        let mask = random_mask(&mut r, d, density);
        for conn in [Connectivity::Face6, Connectivity::Edge18, Connectivity::Vertex26] {
            let labels = label_components(&mask, conn);
            let expected = bfs_components(&mask, conn.neighbor_count());
            ensure(labels.as_slice() == expected.as_slice(), || {
                format!("components case {case}, connectivity {}", conn.neighbor_count())
            })?;
        }
    }
    Ok(format!("blob_term max deviation {worst:.1e}; 300 labelings equal flood fill"))
}

fn degenerate_identities() -> Check {
    let mut r = rng(103);
    for case in 0..100 {
        let d = random_dims(&mut r, 1, 8);
        let p = random_probs(&mut r, d, 0.0, 1.0);
        let labels = random_labels(&mut r, d, 4, 0.3);
        let g = labels.foreground();
        let full = BinaryMask::full(d);

        let alpha = r.random_range(0.1..4.0);
        let cfg = BlobLossConfig { alpha, beta: 0.0, ..BlobLossConfig::default() };
        let global = base_loss(&p, &g, &cfg.base, &full).unwrap().value;
        let value = blob_loss(&p, &g, &labels, &cfg).unwrap().value;
        ensure(value == alpha * global, || format!("beta = 0, case {case}: {value} vs {}", alpha * global))?;

        let single = random_labels(&mut r, d, 1, 0.3);
        let sg = single.foreground();
        for base in [BaseLoss::soft_dice(), BaseLoss::tversky(0.3, 0.7)] {
            let b = blob_term(&p, &single, &base, true).unwrap().value;
            let gl = base_loss(&p, &sg, &base, &full).unwrap().value;
            ensure(b == gl, || format!("N = 1, case {case}: {b} vs {gl}"))?;
        }

        let dice = base_loss(&p, &g, &BaseLoss::soft_dice(), &full).unwrap().value;
        let tv = base_loss(&p, &g, &BaseLoss::tversky(0.5, 0.5), &full).unwrap().value;
        ensure((dice - tv).abs() <= 1e-12, || format!("tversky(0.5, 0.5), case {case}: {dice} vs {tv}"))?;

        let cfg = BlobLossConfig {
            alpha: r.random_range(0.0..3.0),
            beta: r.random_range(0.0..3.0),
            ..BlobLossConfig::default()
        };
        let seg = OneHotSegmentation::with_labels(vec![g.clone()], vec![labels.clone()]).unwrap();
        let multi = multiclass_blob_loss(std::slice::from_ref(&p), &seg, &cfg).unwrap();
        let binary = blob_loss(&p, &g, &labels, &cfg).unwrap();
        ensure(multi.value == binary.value && multi.grads[0] == binary.grad, || {
            format!("one-class multiclass, case {case}: {} vs {}", multi.value, binary.value)
        })?;
    }
    Ok("100 cases each; exact where required, tversky within 1e-12".into())
}

fn false_positive_identity() -> Check {
    let mut r = rng(104);
    let tiny = BaseLoss::soft_dice().with_epsilon(1e-300);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let d = random_dims(&mut r, 2, 9);
        let p = random_probs(&mut r, d, 0.0, 1.0);
        let labels = random_labels(&mut r, d, 5, 0.3);
        for (k, t) in instance_terms(&p, &labels, &tiny, true).unwrap().iter().enumerate() {
            let id = k as u32 + 1;
            let (mut y_i, mut l_i, mut y_fp) = (0.0, 0.0, 0.0);
            for (&pi, &li) in p.as_slice().iter().zip(labels.as_slice()) {
                if li == id {
                    y_i += pi;
                    l_i += 1.0;
                } else if li == 0 {
                    y_fp += pi;
                }
            }
            let err = ((1.0 - t.value) - 2.0 * y_i / (l_i + y_i + y_fp)).abs();
            worst = worst.max(err);
            ensure(err <= 1e-12, || format!("identity case {case}, instance {id}: error {err:e}"))?;
        }
    }
    let dice = BaseLoss::soft_dice();
    let mut tried = 0;
    while tried < 100 {
        let d = random_dims(&mut r, 3, 9);
        let p = random_probs(&mut r, d, 0.0, 0.9);
        let labels = random_labels(&mut r, d, 4, 0.25);
        let background: Vec<usize> = (0..d.len()).filter(|&i| labels.as_slice()[i] == 0).collect();
        if background.is_empty() || labels.n_instances() == 0 {
            continue;
        }
        tried += 1;
        let before = blob_term(&p, &labels, &dice, true).unwrap().value;
        let start = r.random_range(0..background.len());
        let size = r.random_range(1..=background.len().min(6));
        let mut values = p.as_slice().to_vec();
        for &i in background.iter().cycle().skip(start).take(size) {
            values[i] = 1.0;
        }
        let after = blob_term(&DenseVolume::new(d, values).unwrap(), &labels, &dice, true).unwrap().value;
        ensure(after > before, || format!("false positive blob {tried}: {after} <= {before}"))?;
    }
    Ok(format!("identity max error {worst:.1e}; 100/100 false positive blobs raise blob_term"))
}

fn masking_locality() -> Check {
    let mut r = rng(105);
    let dice = BaseLoss::soft_dice();
    let mut checked = 0;
    while checked < 100 {
        let d = random_dims(&mut r, 2, 8);
        let p = random_probs(&mut r, d, 0.0, 1.0);
        let labels = random_labels(&mut r, d, 4, 0.4);
        let n = labels.n_instances();
        if n < 2 {
            continue;
        }
        checked += 1;
        let j = r.random_range(1..=n);
        let inside: Vec<usize> = (0..d.len()).filter(|&i| labels.as_slice()[i] == j).collect();
        let mut values = p.as_slice().to_vec();
        for &i in &inside {
            values[i] = r.random_range(0.0..1.0);
        }
        let q = DenseVolume::new(d, values).unwrap();
        let a = instance_terms(&p, &labels, &dice, true).unwrap();
        let b = instance_terms(&q, &labels, &dice, true).unwrap();
        for k in (0..n as usize).filter(|&k| k as u32 + 1 != j) {
            ensure(a[k].value == b[k].value, || format!("case {checked}: instance {} moved", k + 1))?;
        }
    }
    let d = Dims::new(8, 1, 1).unwrap();
    let labels = InstanceLabeling::new(d, vec![1, 1, 0, 0, 0, 0, 2, 2]).unwrap();
    let p = DenseVolume::new(d, vec![0.9, 0.8, 0.1, 0.2, 0.1, 0.3, 0.7, 0.6]).unwrap();
    let leak = instance_losses(&p, &labels, &dice, false).unwrap()[0].grad.as_slice()[6];
    let masked = instance_losses(&p, &labels, &dice, true).unwrap()[0].grad.as_slice()[6];
    ensure(leak != 0.0 && masked == 0.0, || format!("cross-instance gradient {leak} unmasked, {masked} masked"))?;
    Ok(format!("100 perturbations leave other terms unchanged; unmasked cross gradient {leak:.4}"))
}

fn metrics_hand_case() -> Check {
    let (pred, gt) = detection_scene();
    let pl = label_components(&pred, Connectivity::Vertex26);
    let gl = label_components(&gt, Connectivity::Vertex26);
    let m = detection_metrics(&pl, &gl, MatchingMode::Overlap, 1).unwrap();
    ensure((m.tp, m.fp, m.fn_) == (5, 2, 1), || format!("counts {:?}", (m.tp, m.fp, m.fn_)))?;
    ensure(m.instance_sensitivity == 5.0 / 6.0, || format!("IS {}", m.instance_sensitivity))?;
    ensure(m.instance_precision == 4.0 / 6.0, || format!("IP {}", m.instance_precision))?;
    ensure((m.f1 - 20.0 / 27.0).abs() < 1e-15, || format!("F1 {}", m.f1))?;
    let perfect = detection_metrics(&gl, &gl, MatchingMode::Overlap, 1).unwrap();
    ensure(
        (perfect.f1, perfect.instance_sensitivity, perfect.instance_precision) == (1.0, 1.0, 1.0),
        || format!("perfect prediction {perfect:?}"),
    )?;
    Ok(format!(
        "F1 {:.4}/1.0, IS {:.4}/1.0, IP {:.4}/1.0",
        m.f1, m.instance_sensitivity, m.instance_precision
    ))
}

fn shape_sanity() -> Check {
    let b = shape_features(&ball(Dims::cube(21).unwrap(), [10.0; 3], 8.0)).unwrap();
    ensure(b.compactness >= 0.9 && b.stringness <= 0.1, || format!("ball {b:?}"))?;
    let d = Dims::new(3, 3, 22).unwrap();
    let s = shape_features(&BinaryMask::from_fn(d, |x, y, z| x == 1 && y == 1 && (1..21).contains(&z))).unwrap();
    ensure(s.stringness >= 0.7, || format!("string {s:?}"))?;

    const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut r = rng(108);
    let mut blobs = vec![ball(Dims::new(21, 19, 23).unwrap(), [10.0, 9.0, 11.0], 8.0)];
    for _ in 0..20 {
        let labels = label_components(&random_mask(&mut r, Dims::new(9, 7, 5).unwrap(), 0.35), Connectivity::Vertex26);
        for id in 1..=labels.n_instances() {
            blobs.push(blobloss::extract_instance_mask(&labels, id).unwrap());
        }
    }
    let mut worst: f64 = 0.0;
    for blob in &blobs {
        let f = shape_features(blob).unwrap();
        for perm in PERMUTATIONS {
            let g = shape_features(&permute_axes(blob, perm)).unwrap();
            ensure(f.volume == g.volume, || "volume changed under permutation".into())?;
            for (x, y) in [
                (f.compactness, g.compactness),
                (f.sphereness, g.sphereness),
                (f.stringness, g.stringness),
                (f.skewness, g.skewness),
            ] {
                worst = worst.max((x - y).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("permutation changed a feature by {worst:e}"))?;
    Ok(format!(
        "ball compactness {:.4}, stringness {:.4}; string stringness {:.4}; {} blobs permutation invariant",
        b.compactness, b.stringness, s.stringness, blobs.len()
    ))
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn blobloss(args: &[&str], threads: Option<&str>) -> Result<Vec<u8>, String> {
    let mut c = Command::new(env!("CARGO_BIN_EXE_blobloss"));
    c.args(args);
    match threads {
        Some(t) => c.env("BLOBLIB_THREADS", t),
        None => c.env_remove("BLOBLIB_THREADS"),
    };
    let o = c.output().map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("blobloss {}: {}", args.join(" "), String::from_utf8_lossy(&o.stderr)));
    }
    Ok(o.stdout)
}

fn directional_training() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = workspace_root().join("configs/acceptance.json");
    let out = dir.path().join("compare");
    let table = blobloss(
        &["compare", "--config", config.to_str().unwrap(), "--seeds", "5", "--out", out.to_str().unwrap()],
        None,
    )?;
    let mut reader = csv::Reader::from_path(out.join("runs.csv")).map_err(|e| e.to_string())?;
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or(format!("no column {name}"));
    let (loss_col, is_col, f1_col) = (col("loss")?, col("instance_sensitivity")?, col("f1")?);

    let mut dice = Vec::new();
    let mut blob = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| e.to_string())?;
        let num = |c: usize| row[c].parse::<f64>().map_err(|e| e.to_string());
        let pair = (num(is_col)?, num(f1_col)?);
        match &row[loss_col] {
            "dice" => dice.push(pair),
            "blob dice" => blob.push(pair),
            other => return Err(format!("unexpected loss {other}")),
        }
    }
    ensure(dice.len() == 5 && blob.len() == 5, || "expected five runs per loss".into())?;
    let is_wins = dice.iter().zip(&blob).filter(|(d, b)| b.0 > d.0).count();
    let f1_held = dice.iter().zip(&blob).filter(|(d, b)| b.1 >= d.1).count();
    let per_seed: Vec<String> = dice
        .iter()
        .zip(&blob)
        .map(|(d, b)| format!("IS {:.3}->{:.3} F1 {:.3}->{:.3}", d.0, b.0, d.1, b.1))
        .collect();
    let elapsed = start.elapsed();
    print!("{}", String::from_utf8_lossy(&table));
    println!("    per seed (dice -> blob dice): {}", per_seed.join("; "));
    ensure(is_wins >= 4 && f1_held >= 4, || {
        format!("IS higher in {is_wins}/5 seeds, F1 not lower in {f1_held}/5")
    })?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:.0?}"))?;
    Ok(format!("IS higher in {is_wins}/5 seeds, F1 not lower in {f1_held}/5, {elapsed:.0?}"))
}

fn cli_reproducibility() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let spec = root.join("spec.json");
    std::fs::write(
        &spec,
        r#"{"dims": [20, 20, 20], "n_large": 1, "large_radius": 4, "n_small": 4,
            "small_radius": [1, 2], "small_contrast": 0.45, "noise_sigma": 0.08,
            "min_gap": 2, "seed": 11}"#,
    )
    .map_err(|e| e.to_string())?;
    let exp = root.join("exp.json");
    let small = r#"{"dims": [16, 16, 16], "n_large": 1, "large_radius": 3, "n_small": 3,
                    "small_radius": [1, 2], "small_contrast": 0.45, "noise_sigma": 0.08,
                    "min_gap": 1, "seed": 0}"#;
    std::fs::write(
        &exp,
        format!(
            r#"{{"splits": {{"train": {{"count": 2, "spec": {small}}},
                             "validation": {{"count": 1, "spec": {small}}},
                             "test": {{"count": 2, "spec": {small}}}}},
                "train": {{"learning_rate": 0.02, "epochs": 5, "seed": 4}}}}"#
        ),
    )
    .map_err(|e| e.to_string())?;

    let p = |name: &str| root.join(name).to_string_lossy().into_owned();
    let (spec, exp) = (spec.to_string_lossy().into_owned(), exp.to_string_lossy().into_owned());
    // Shared inputs for the commands that read volumes.
    blobloss(&["synth", "--spec", &spec, "--out-prefix", &p("in")], None)?;

    // Each case: argv with `{out}` standing for a fresh per-run path, and the files it writes.
    let cases: Vec<(&str, Vec<String>, Vec<&str>)> = vec![
        ("synth", vec!["synth".into(), "--spec".into(), spec.clone(), "--out-prefix".into(), "{out}/s".into(), "--json".into()],
            vec!["s_intensity.blv", "s_gt.blv", "s_labels.blv"]),
        ("cc", vec!["cc".into(), "--in".into(), p("in_gt.blv"), "--out".into(), "{out}/cc.blv".into(), "--json".into()],
            vec!["cc.blv"]),
        ("loss", vec!["loss".into(), "--pred".into(), p("in_intensity.blv"), "--gt".into(), p("in_gt.blv"), "--json".into()],
            vec![]),
        ("eval", vec!["eval".into(), "--pred".into(), p("in_intensity.blv"), "--gt".into(), p("in_gt.blv"), "--json".into()],
            vec![]),
        ("shapes", vec!["shapes".into(), "--labels".into(), p("in_labels.blv"), "--json".into()], vec![]),
        ("train", vec!["train".into(), "--config".into(), exp.clone(), "--out".into(), "{out}".into()],
            vec!["history.csv", "model.bin", "report.json"]),
        ("compare", vec!["compare".into(), "--config".into(), exp.clone(), "--seeds".into(), "2".into(), "--out".into(), "{out}".into()],
            vec!["table.md", "table.csv", "runs.csv"]),
    ];
    let mut run = 0;
    for (name, argv, files) in &cases {
        let mut reference: Option<Vec<Vec<u8>>> = None;
        for threads in [None, Some("1"), Some("2"), Some("7"), None] {
            run += 1;
            let out = root.join(format!("run{run}"));
            std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
            let out = out.to_string_lossy().into_owned();
            let args: Vec<String> = argv.iter().map(|a| a.replace("{out}", &out)).collect();
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            let mut bytes = vec![blobloss(&args, threads)?];
            for f in files {
                bytes.push(std::fs::read(Path::new(&out).join(f)).map_err(|e| format!("{name}: {f}: {e}"))?);
            }
            match &reference {
                None => reference = Some(bytes),
                Some(r) => ensure(*r == bytes, || format!("{name} differs with BLOBLIB_THREADS={threads:?}"))?,
            }
        }
    }
    Ok(format!("{} subcommands byte-identical over 5 runs with 1, 2, 7 and default threads", cases.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient suite", gradient_suite),
        ("oracle equivalence", oracle_equivalence),
        ("degenerate identities", degenerate_identities),
        ("false positive penalization", false_positive_identity),
        ("masking locality", masking_locality),
        ("directional training result", directional_training),
        ("metrics hand case", metrics_hand_case),
        ("shape feature sanity", shape_sanity),
        ("CLI reproducibility", cli_reproducibility),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

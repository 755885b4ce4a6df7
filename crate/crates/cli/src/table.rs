//! Mean ± standard deviation tables over paired experiment runs.

use std::fmt::Write as _;

use blobloss::MetricsReport;

/// Columns of the Markdown table, as `(header, report field name)`.
pub const TABLE_COLUMNS: [(&str, &str); 5] = [
    ("DSC", "dsc"),
    ("SDSC", "surface_dsc"),
    ("F1", "f1"),
    ("IS", "instance_sensitivity"),
    ("IP", "instance_precision"),
];

/// Test reports of one loss variant, one per seed.
#[derive(Debug, Clone)]
pub struct VariantRuns {
    pub name: String,
    pub reports: Vec<MetricsReport>,
}

/// Mean and sample standard deviation (n − 1; 0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn column(runs: &VariantRuns, field: &str) -> Vec<f64> {
    runs.reports
        .iter()
        .map(|r| {
            r.named_rates()
                .iter()
                .find(|(name, _)| *name == field)
                .map(|&(_, v)| v)
                .expect("known metric name")
        })
        .collect()
}

pub fn markdown(variants: &[VariantRuns]) -> String {
    let mut out = String::from("| loss |");
    for (header, _) in TABLE_COLUMNS {
        write!(out, " {header} |").unwrap();
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(TABLE_COLUMNS.len()));
    out.push('\n');
    for v in variants {
        write!(out, "| {} |", v.name).unwrap();
        for (_, field) in TABLE_COLUMNS {
            let (m, sd) = mean_sd(&column(v, field));
            write!(out, " {m:.3} ± {sd:.3} |").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Every metric, full precision: `loss,<metric>_mean,<metric>_sd,...`.
pub fn csv(variants: &[VariantRuns]) -> String {
    let names: Vec<&str> = empty_report().named_rates().iter().map(|(n, _)| *n).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["loss".to_string()];
    for n in &names {
        header.push(format!("{n}_mean"));
        header.push(format!("{n}_sd"));
    }
    w.write_record(&header).unwrap();
    for v in variants {
        let mut row = vec![v.name.clone()];
        for n in &names {
            let (m, sd) = mean_sd(&column(v, n));
            row.push(m.to_string());
            row.push(sd.to_string());
        }
        w.write_record(&row).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

fn empty_report() -> MetricsReport {
    MetricsReport {
        dsc: 0.0,
        sensitivity: 0.0,
        precision: 0.0,
        surface_dsc: 0.0,
        f1: 0.0,
        instance_sensitivity: 0.0,
        instance_precision: 0.0,
        tp: 0,
        fp: 0,
        fn_: 0,
    }
}

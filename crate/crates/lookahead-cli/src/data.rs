//! Data sources: the deterministic synthetic credit-style generator and CSV
//! ingestion with standardization.

use anyhow::{bail, Context, Result};
use lookahead::population::{EmpiricalDistribution, Sample};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Canonical column names; the first five cover the strategic features of
/// the best-response experiments plus the misreported features of the
/// collective experiments.
pub const CREDIT_COLUMNS: [&str; 10] = [
    "revolving_balance",
    "open_credit_lines",
    "real_estate_loans",
    "age",
    "n_dependents",
    "monthly_income",
    "debt_ratio",
    "past_due_30_59",
    "past_due_60_89",
    "past_due_90",
];

/// Fixed planted coefficients cycled over the feature columns; the intercept
/// is calibrated so the label frequency stays away from both extremes.
const PLANT_WEIGHTS: [f64; 10] = [1.2, -0.8, 0.6, -1.0, 0.4, -0.5, 0.9, 0.7, -0.3, 0.5];
const PLANT_INTERCEPT: f64 = -0.9;

/// Feature names for dimension `d`.
pub fn credit_feature_names(d: usize) -> Vec<String> {
    (0..d)
        .map(|i| {
            if i < CREDIT_COLUMNS.len() {
                CREDIT_COLUMNS[i].to_string()
            } else {
                format!("feature_{i}")
            }
        })
        .collect()
}

/// Deterministic synthetic credit-style data: standardized Gaussian features
/// and binary delinquency labels drawn from a fixed planted logistic model.
/// Identical `(n, d, seed)` always produce bit-identical distributions.
pub fn synth_credit(n: usize, d: usize, seed: u64) -> Result<(EmpiricalDistribution, Vec<String>)> {
    if n < 10 {
        bail!("synthetic generator requires n >= 10");
    }
    if d < 3 {
        bail!("synthetic generator requires d >= 3");
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = DVector::zeros(d);
        for j in 0..d {
            x[j] = standard_normal(&mut rng);
        }
        let mut score = PLANT_INTERCEPT;
        for j in 0..d {
            score += PLANT_WEIGHTS[j % PLANT_WEIGHTS.len()] * x[j];
        }
        let p = 1.0 / (1.0 + (-score).exp());
        let y = if rng.gen::<f64>() < p { 1.0 } else { 0.0 };
        samples.push(Sample::new(x, y));
    }
    Ok((
        EmpiricalDistribution::uniform(samples)?,
        credit_feature_names(d),
    ))
}

/// Box-Muller from two uniform draws; keeps the draw count per sample fixed
/// so the stream layout is stable.
fn standard_normal(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Per-column affine transform recorded in the run manifest.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Standardization {
    pub columns: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Loads a CSV with a header row, selects the label and feature columns, and
/// standardizes every feature to mean 0 / variance 1. Non-numeric or missing
/// cells abort the load with their 1-based data row numbers.
pub fn load_csv(
    path: &std::path::Path,
    label_column: &str,
    feature_columns: Option<&[String]>,
) -> Result<(EmpiricalDistribution, Vec<String>, Standardization)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers: Vec<String> = reader
        .headers()
        .context("reading CSV header")?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() {
        bail!("{}: empty file (no header row)", path.display());
    }
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .with_context(|| format!("label column '{label_column}' not found in {headers:?}"))?;
    let feature_names: Vec<String> = match feature_columns {
        Some(cols) => {
            for c in cols {
                if !headers.iter().any(|h| h == c) {
                    bail!("feature column '{c}' not found in {headers:?}");
                }
            }
            cols.to_vec()
        }
        None => headers
            .iter()
            .filter(|h| h.as_str() != label_column)
            .cloned()
            .collect(),
    };
    let feature_idx: Vec<usize> = feature_names
        .iter()
        .map(|c| headers.iter().position(|h| h == c).unwrap())
        .collect();

    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut bad_rows: Vec<usize> = Vec::new();
    for (row_number, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("reading data row {}", row_number + 1))?;
        let parse = |idx: usize| -> Option<f64> {
            record
                .get(idx)
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
        };
        let label = parse(label_idx);
        let feats: Vec<Option<f64>> = feature_idx.iter().map(|&i| parse(i)).collect();
        if label.is_none() || feats.iter().any(Option::is_none) {
            bad_rows.push(row_number + 1);
            continue;
        }
        let x = DVector::from_iterator(feats.len(), feats.into_iter().map(Option::unwrap));
        rows.push((x, label.unwrap()));
    }
    if !bad_rows.is_empty() {
        bail!(
            "{}: non-numeric or missing cells in data row(s) {:?}",
            path.display(),
            bad_rows
        );
    }
    if rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }

    let d = rows[0].0.len();
    let n = rows.len() as f64;
    let mut means = vec![0.0; d];
    for (x, _) in &rows {
        for j in 0..d {
            means[j] += x[j] / n;
        }
    }
    let mut vars = vec![0.0; d];
    for (x, _) in &rows {
        for j in 0..d {
            let c = x[j] - means[j];
            vars[j] += c * c / n;
        }
    }
    let stds: Vec<f64> = vars
        .iter()
        .map(|v| if *v > 0.0 { v.sqrt() } else { 1.0 })
        .collect();
    let samples = rows
        .into_iter()
        .map(|(x, y)| {
            let z = DVector::from_iterator(d, (0..d).map(|j| (x[j] - means[j]) / stds[j]));
            Sample::new(z, y)
        })
        .collect();
    Ok((
        EmpiricalDistribution::uniform(samples)?,
        feature_names.clone(),
        Standardization {
            columns: feature_names,
            means,
            stds,
        },
    ))
}

/// Resolve the configured data source.
pub fn resolve_data(
    cfg: &crate::config::DataConfig,
) -> Result<(EmpiricalDistribution, Vec<String>, Option<Standardization>)> {
    match cfg.source.as_str() {
        "synthetic" => {
            let (dist, names) = synth_credit(cfg.n, cfg.d, cfg.seed)?;
            Ok((dist, names, None))
        }
        "csv" => {
            let path = std::path::Path::new(cfg.path.as_ref().unwrap());
            let (dist, names, std) = load_csv(
                path,
                cfg.label_column.as_ref().unwrap(),
                cfg.feature_columns.as_deref(),
            )?;
            Ok((dist, names, Some(std)))
        }
        other => bail!("unknown data source '{other}'"),
    }
}

/// Index of a named feature.
pub fn feature_index(names: &[String], wanted: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| n == wanted)
        .with_context(|| format!("feature '{wanted}' not present in columns {names:?}"))
}

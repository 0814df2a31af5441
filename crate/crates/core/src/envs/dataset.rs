//! Tabular binary-classification data for the dataset-backed triage mode:
//! CSV ingestion, the four-way split, train-only standardization, covariate
//! shift, a seeded surrogate generator and a calibrated logistic model.

use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fractions for train, calibration, in-distribution test and shifted test.
pub const SPLIT_FRACTIONS: [f64; 4] = [0.6, 0.2, 0.1, 0.1];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub label_column: String,
    /// Feature columns in order; every non-label column when `None`.
    pub feature_columns: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            label_column: "label".into(),
            feature_columns: None,
        }
    }
}

/// A parsed table before any splitting or scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub test_id: Vec<usize>,
    pub test_shift: Vec<usize>,
}

impl Splits {
    pub fn all(&self) -> [&[usize]; 4] {
        [&self.train, &self.calibration, &self.test_id, &self.test_shift]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    /// Standardized features.
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub splits: Splits,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }
}

fn parse_err(path: &Path, row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Parses a numeric CSV with a header row. Row numbers in errors are file
/// line numbers, the header being line 1.
pub fn read_csv(path: &Path, schema: &CsvSchema) -> Result<RawTable> {
    let file = File::open(path).map_err(|e| parse_err(path, 0, "", e.to_string()))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(path, 1, "", e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(path, 1, name, "column not found in header"))
    };
    let label_idx = find(&schema.label_column)?;
    let feature_names: Vec<String> = match &schema.feature_columns {
        Some(cols) => cols.clone(),
        None => headers
            .iter()
            .filter(|h| **h != schema.label_column)
            .cloned()
            .collect(),
    };
    let feature_idx = feature_names
        .iter()
        .map(|n| find(n))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| parse_err(path, line, "", e.to_string()))?;
        let cell = |idx: usize, name: &str| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("").trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, line, name, format!("non-numeric cell '{raw}'")))
        };
        let row = feature_idx
            .iter()
            .zip(&feature_names)
            .map(|(&i, n)| cell(i, n))
            .collect::<Result<Vec<_>>>()?;
        let label = cell(label_idx, &schema.label_column)?;
        let label = if label == 0.0 {
            0
        } else if label == 1.0 {
            1
        } else {
            return Err(parse_err(
                path,
                line,
                &schema.label_column,
                format!("label must be 0 or 1, got {label}"),
            ));
        };
        rows.push(row);
        labels.push(label);
    }
    Ok(RawTable { feature_names, rows, labels })
}

/// Split sizes by largest remainder: floors first, leftover rows go to the
/// splits with the largest fractional parts, earlier splits winning ties.
pub fn split_sizes(n: usize) -> [usize; 4] {
    let exact = SPLIT_FRACTIONS.map(|f| f * n as f64);
    let mut sizes = exact.map(|x| x.floor() as usize);
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

/// Shuffles row indices and cuts them into the four splits.
pub fn split<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Splits {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let [a, b, c, _] = split_sizes(n);
    let mut parts = [
        idx[..a].to_vec(),
        idx[a..a + b].to_vec(),
        idx[a + b..a + b + c].to_vec(),
        idx[a + b + c..].to_vec(),
    ];
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    let [train, calibration, test_id, test_shift] = parts;
    Splits { train, calibration, test_id, test_shift }
}

/// Scales every column with the mean and (population) standard deviation of
/// the `train` rows. Constant columns are only centered.
pub fn standardize(rows: &mut [Vec<f64>], train: &[usize]) {
    let Some(first) = train.first() else { return };
    let d = rows[*first].len();
    let n = train.len() as f64;
    for j in 0..d {
        let mean = train.iter().map(|&i| rows[i][j]).sum::<f64>() / n;
        let var = train.iter().map(|&i| (rows[i][j] - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for row in rows.iter_mut() {
            row[j] = (row[j] - mean) / sd;
        }
    }
}

/// Reads, splits with `rng` and standardizes a dataset.
pub fn load_csv<R: Rng + ?Sized>(path: &Path, schema: &CsvSchema, rng: &mut R) -> Result<Dataset> {
    let table = read_csv(path, schema)?;
    from_table(table, rng)
}

pub fn from_table<R: Rng + ?Sized>(table: RawTable, rng: &mut R) -> Result<Dataset> {
    if table.rows.len() < 4 {
        return Err(Error::InvalidConfig(format!(
            "dataset needs at least 4 rows, got {}",
            table.rows.len()
        )));
    }
    let splits = split(table.rows.len(), rng);
    let mut rows = table.rows;
    standardize(&mut rows, &splits.train);
    Ok(Dataset {
        feature_names: table.feature_names,
        rows,
        labels: table.labels,
        splits,
    })
}

/// Covariate shift applied to the shifted test rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftConfig {
    /// Perturbed feature indices; the first half of the features when `None`.
    pub features: Option<Vec<usize>>,
    pub noise_std: f64,
    pub bias: f64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            features: None,
            noise_std: 0.8,
            bias: 0.5,
        }
    }
}

impl ShiftConfig {
    pub fn resolved_features(&self, dim: usize) -> Vec<usize> {
        self.features
            .clone()
            .unwrap_or_else(|| (0..dim.div_ceil(2)).collect())
    }
}

/// `x <- x + N(0, noise_std^2) + bias` on the selected features of the
/// `test_shift` rows.
pub fn apply_shift<R: Rng + ?Sized>(
    dataset: &Dataset,
    cfg: &ShiftConfig,
    rng: &mut R,
) -> Result<Dataset> {
    let features = cfg.resolved_features(dataset.dim());
    if let Some(bad) = features.iter().find(|&&j| j >= dataset.dim()) {
        return Err(Error::InvalidConfig(format!(
            "shift feature {bad} out of range for {} features",
            dataset.dim()
        )));
    }
    let mut out = dataset.clone();
    for &i in &dataset.splits.test_shift {
        for &j in &features {
            let z: f64 = rng.sample(StandardNormal);
            out.rows[i][j] += cfg.noise_std * z + cfg.bias;
        }
    }
    Ok(out)
}

/// A noisy linearly separable table: `x ~ N(0, I_d)`, label
/// `1{<w, x> / |w| + 0.1 z > 0}` for a seeded direction `w`.
pub fn surrogate_table(n: usize, d: usize, seed: u64) -> Result<RawTable> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput("n and d must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    w.iter_mut().for_each(|x| *x /= norm);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        // Rounded to the written precision so file and memory agree.
        let x: Vec<f64> = (0..d)
            .map(|_| round6(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let margin: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
            + 0.1 * rng.sample::<f64, _>(StandardNormal);
        labels.push(u8::from(margin > 0.0));
        rows.push(x);
    }
    Ok(RawTable {
        feature_names: (0..d).map(|j| format!("f{j}")).collect(),
        rows,
        labels,
    })
}

fn round6(x: f64) -> f64 {
    format!("{x:.6}").parse().unwrap()
}

/// Writes [`surrogate_table`] as CSV with a `label` column last.
pub fn gen_surrogate_dataset(n: usize, d: usize, seed: u64, path: &Path) -> Result<PathBuf> {
    let table = surrogate_table(n, d, seed)?;
    let mut out = std::io::BufWriter::new(File::create(path)?);
    writeln!(out, "{},label", table.feature_names.join(","))?;
    for (row, label) in table.rows.iter().zip(&table.labels) {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:.6}")).collect();
        writeln!(out, "{},{label}", cells.join(","))?;
    }
    out.flush()?;
    Ok(path.to_path_buf())
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// L2-regularized logistic regression with a Platt recalibration layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedLogistic {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub platt_a: f64,
    pub platt_b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Inverse regularization strength, penalty `|w|^2 / (2 C n)`.
    pub l2_c: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2_c: 1.0,
            epochs: 500,
            learning_rate: 0.5,
        }
    }
}

impl CalibratedLogistic {
    /// Full-batch gradient descent on `train`, then Platt scaling fitted by
    /// Newton's method on the logits of `calibration`.
    pub fn fit(ds: &Dataset, train: &[usize], calibration: &[usize], cfg: &TrainConfig) -> Result<Self> {
        if train.is_empty() || calibration.is_empty() {
            return Err(Error::InvalidConfig("empty train or calibration split".into()));
        }
        if !(cfg.l2_c > 0.0) {
            return Err(Error::InvalidConfig("l2_c must be positive".into()));
        }
        let d = ds.dim();
        let n = train.len() as f64;
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut grad = vec![0.0; d];
        for _ in 0..cfg.epochs {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for &i in train {
                let x = &ds.rows[i];
                let p = sigmoid(dot(&w, x) + b);
                let r = p - f64::from(ds.labels[i]);
                for (g, xj) in grad.iter_mut().zip(x) {
                    *g += r * xj;
                }
                gb += r;
            }
            for (wj, g) in w.iter_mut().zip(&grad) {
                *wj -= cfg.learning_rate * (g / n + *wj / (cfg.l2_c * n));
            }
            b -= cfg.learning_rate * gb / n;
        }
        let logits: Vec<f64> = calibration.iter().map(|&i| dot(&w, &ds.rows[i]) + b).collect();
        let ys: Vec<f64> = calibration.iter().map(|&i| f64::from(ds.labels[i])).collect();
        let (platt_a, platt_b) = fit_platt(&logits, &ys);
        Ok(Self { weights: w, intercept: b, platt_a, platt_b })
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.intercept
    }

    /// Calibrated `P(y = 1 | x)`.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.platt_a * self.logit(x) + self.platt_b)
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        u8::from(self.predict_proba(x) >= 0.5)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximum-likelihood `sigmoid(a s + b)` with Platt's smoothed targets.
fn fit_platt(scores: &[f64], ys: &[f64]) -> (f64, f64) {
    let pos = ys.iter().filter(|&&y| y > 0.5).count() as f64;
    let neg = ys.len() as f64 - pos;
    let hi = (pos + 1.0) / (pos + 2.0);
    let lo = 1.0 / (neg + 2.0);
    let targets: Vec<f64> = ys.iter().map(|&y| if y > 0.5 { hi } else { lo }).collect();
    let (mut a, mut b) = (1.0, 0.0);
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 1e-12, 0.0, 1e-12);
        for (&s, &t) in scores.iter().zip(&targets) {
            let p = sigmoid(a * s + b);
            let r = p - t;
            let v = p * (1.0 - p);
            ga += r * s;
            gb += r;
            haa += v * s * s;
            hab += v * s;
            hbb += v;
        }
        let det = haa * hbb - hab * hab;
        if det.abs() < 1e-300 {
            break;
        }
        let da = (hbb * ga - hab * gb) / det;
        let db = (haa * gb - hab * ga) / det;
        a -= da;
        b -= db;
        if da.abs() + db.abs() < 1e-12 {
            break;
        }
    }
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_for_569() {
        assert_eq!(split_sizes(569), [341, 114, 57, 57]);
        assert_eq!(split_sizes(10), [6, 2, 1, 1]);
        for n in 4..300 {
            assert_eq!(split_sizes(n).iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn platt_recovers_a_known_map() {
        // Labels drawn from sigmoid(2 s - 1).
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let scores: Vec<f64> = (0..20_000).map(|_| rng.random_range(-3.0..3.0)).collect();
        let ys: Vec<f64> = scores
            .iter()
            .map(|&s| f64::from(u8::from(rng.random::<f64>() < sigmoid(2.0 * s - 1.0))))
            .collect();
        let (a, b) = fit_platt(&scores, &ys);
        assert!((a - 2.0).abs() < 0.1, "a {a}");
        assert!((b + 1.0).abs() < 0.1, "b {b}");
    }
}

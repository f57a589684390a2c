//! Datasets: LIBSVM parsing, synthetic generators, and partitioning across agents.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::AgentData;

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    File { path: PathBuf },
    Synthetic { description: String },
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::File { path } => write!(f, "{}", path.display()),
            DataSource::Synthetic { description } => write!(f, "synthetic({description})"),
        }
    }
}

/// Sample-major dense feature matrix with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Array1<f64>,
    pub source: DataSource,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Array1<f64>, source: DataSource) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.ncols() == 0 {
            return Err(Error::InvalidInput(
                "dataset dimension must be at least 1".into(),
            ));
        }
        Ok(Self {
            features,
            labels,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    /// Number of nonzero feature entries.
    pub fn nnz(&self) -> usize {
        self.features.iter().filter(|v| **v != 0.0).count()
    }

    /// Counts of labels `<= 0` and `> 0`.
    pub fn label_balance(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&y| y > 0.0).count();
        (self.len() - pos, pos)
    }
}

pub fn parse_libsvm(path: &Path, d: Option<usize>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_libsvm_str(&text, d, path)
}

/// Parse LIBSVM text (`label idx:val idx:val ...`, 1-based ascending
/// indices). Label `0` maps to `-1`. `d` defaults to the largest index seen.
pub fn parse_libsvm_str(text: &str, d: Option<usize>, path: &Path) -> Result<Dataset> {
    let err = |line: usize, column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message,
    };
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0;
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut tokens = tokens_with_columns(content);
        let Some((col, label_tok)) = tokens.next() else {
            continue;
        };
        let label: f64 = label_tok
            .parse()
            .map_err(|_| err(line_no, col, format!("invalid label {label_tok:?}")))?;
        if !label.is_finite() {
            return Err(err(line_no, col, format!("non-finite label {label_tok:?}")));
        }
        let mut entries = Vec::new();
        let mut last = 0;
        for (col, tok) in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(line_no, col, format!("expected idx:val, found {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(line_no, col, format!("invalid feature index {idx:?}")))?;
            if idx == 0 {
                return Err(err(line_no, col, "feature indices are 1-based".into()));
            }
            if idx <= last {
                return Err(err(line_no, col, format!("index {idx} is not ascending")));
            }
            let val: f64 = val.parse().map_err(|_| {
                err(
                    line_no,
                    col + idx.to_string().len() + 1,
                    format!("invalid value {val:?}"),
                )
            })?;
            if !val.is_finite() {
                return Err(err(
                    line_no,
                    col,
                    format!("non-finite value for index {idx}"),
                ));
            }
            last = idx;
            entries.push((idx - 1, val));
        }
        max_index = max_index.max(last);
        labels.push(if label == 0.0 { -1.0 } else { label });
        rows.push(entries);
    }
    if rows.is_empty() {
        return Err(err(1, 1, "file contains no samples".into()));
    }
    let d = match d {
        Some(d) if d < max_index => {
            return Err(Error::InvalidInput(format!(
                "{}: feature index {max_index} exceeds the requested dimension {d}",
                path.display()
            )))
        }
        Some(d) => d,
        None => max_index,
    };
    if d == 0 {
        return Err(Error::InvalidInput(format!(
            "{}: no features found and no dimension given",
            path.display()
        )));
    }
    let mut features = Array2::zeros((rows.len(), d));
    for (i, entries) in rows.iter().enumerate() {
        for &(j, v) in entries {
            features[[i, j]] = v;
        }
    }
    Dataset::new(
        features,
        Array1::from(labels),
        DataSource::File {
            path: path.to_path_buf(),
        },
    )
}

/// Whitespace-separated tokens with their 1-based character column.
fn tokens_with_columns(line: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut rest = line;
    let mut offset = 0;
    std::iter::from_fn(move || {
        let trimmed = rest.trim_start();
        offset += rest.len() - trimmed.len();
        if trimmed.is_empty() {
            return None;
        }
        let end = trimmed.find(char::is_whitespace).unwrap_or(trimmed.len());
        let tok = &trimmed[..end];
        let col = line[..offset].chars().count() + 1;
        offset += end;
        rest = &trimmed[end..];
        Some((col, tok))
    })
}

/// Write in LIBSVM format, omitting zero entries. Values use the shortest
/// round-trip representation.
pub fn write_libsvm<W: Write>(dataset: &Dataset, mut out: W) -> std::io::Result<()> {
    for (row, label) in dataset
        .features
        .rows()
        .into_iter()
        .zip(dataset.labels.iter())
    {
        write!(out, "{label}")?;
        for (j, v) in row.iter().enumerate() {
            if *v != 0.0 {
                write!(out, " {}:{v}", j + 1)?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// How samples are assigned to agents before contiguous splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionScheme {
    /// File order.
    Contiguous,
    /// Seeded uniform shuffle.
    Shuffled { seed: u64 },
    /// Stable sort by label, giving label-skewed agents.
    SortedByLabel,
}

impl Default for PartitionScheme {
    fn default() -> Self {
        PartitionScheme::Shuffled { seed: 0 }
    }
}

/// Split into `m` agents with `n = floor(N / m)` samples each; the trailing
/// `N - mn` samples are dropped.
pub fn partition(dataset: &Dataset, m: usize, scheme: PartitionScheme) -> Result<Vec<AgentData>> {
    if m == 0 {
        return Err(Error::InvalidInput("need at least one agent".into()));
    }
    let total = dataset.len();
    if total < m {
        return Err(Error::InvalidInput(format!(
            "{total} samples cannot be split across {m} agents"
        )));
    }
    let mut order: Vec<usize> = (0..total).collect();
    match scheme {
        PartitionScheme::Contiguous => {}
        PartitionScheme::Shuffled { seed } => order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
        PartitionScheme::SortedByLabel => {
            order.sort_by(|&a, &b| dataset.labels[a].total_cmp(&dataset.labels[b]));
        }
    }
    let n = total / m;
    let dropped = total - n * m;
    if dropped > 0 {
        log::warn!("dropping {dropped} trailing samples to give {m} agents {n} samples each");
    }
    (0..m)
        .map(|i| {
            let idx = &order[i * n..(i + 1) * n];
            AgentData::new(
                dataset.features.select(Axis(0), idx),
                dataset.labels.select(Axis(0), idx),
            )
        })
        .collect()
}

/// Gaussian features and a planted model `x_true ~ N(0, I)`:
/// `y = a^T x_true + noise * N(0, 1)`.
pub fn synthetic_regression(samples: usize, d: usize, noise: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = gaussian_matrix(&mut rng, samples, d);
    let truth = gaussian_vector(&mut rng, d);
    let mut labels = features.dot(&truth);
    for y in labels.iter_mut() {
        *y += noise * rng.sample::<f64, _>(StandardNormal);
    }
    Dataset::new(
        features,
        labels,
        DataSource::Synthetic {
            description: format!("regression samples={samples} d={d} noise={noise} seed={seed}"),
        },
    )
}

/// Gaussian features with `y = sign(a^T x_true)`, each label flipped with
/// probability `flip`.
pub fn synthetic_classification(samples: usize, d: usize, flip: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = gaussian_matrix(&mut rng, samples, d);
    let truth = gaussian_vector(&mut rng, d);
    let labels = planted_labels(&mut rng, &features, &truth, flip);
    Dataset::new(
        features,
        labels,
        DataSource::Synthetic {
            description: format!("classification samples={samples} d={d} flip={flip} seed={seed}"),
        },
    )
}

/// Binary features with exactly `nnz` ones per row (shaped like the a9a
/// census data), labels from a planted sparse model with flips.
pub fn synthetic_sparse_binary(
    samples: usize,
    d: usize,
    nnz: usize,
    flip: f64,
    seed: u64,
) -> Result<Dataset> {
    if nnz == 0 || nnz > d {
        return Err(Error::InvalidInput(format!(
            "nonzeros per row must lie in 1..={d}, got {nnz}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Array2::zeros((samples, d));
    for mut row in features.rows_mut() {
        for j in rand::seq::index::sample(&mut rng, d, nnz) {
            row[j] = 1.0;
        }
    }
    let truth = gaussian_vector(&mut rng, d);
    let centred = {
        let mean = features.dot(&truth).mean().unwrap_or(0.0);
        truth.mapv(|v| v - mean / nnz as f64)
    };
    let labels = planted_labels(&mut rng, &features, &centred, flip);
    Dataset::new(
        features,
        labels,
        DataSource::Synthetic {
            description: format!(
                "sparse_binary samples={samples} d={d} nnz={nnz} flip={flip} seed={seed}"
            ),
        },
    )
}

fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn gaussian_vector<R: Rng>(rng: &mut R, len: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || rng.sample(StandardNormal))
}

fn planted_labels<R: Rng>(
    rng: &mut R,
    features: &Array2<f64>,
    truth: &Array1<f64>,
    flip: f64,
) -> Array1<f64> {
    features.dot(truth).mapv(|score| {
        let y = if score >= 0.0 { 1.0 } else { -1.0 };
        if rng.random::<f64>() < flip {
            -y
        } else {
            y
        }
    })
}

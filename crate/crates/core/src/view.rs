//! View ingestion: CSV loading, synthetic view streams, and reduction of a raw
//! view to an orthonormal soft partition matrix.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{PartitionMatrix, PartitionRole};
use crate::rng::{rng_for, stream};

/// One view's raw features: n samples × d_t features.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewMatrix {
    pub data: DMatrix<f64>,
    /// 1-based position of the view in its stream.
    pub view_index: usize,
}

impl ViewMatrix {
    pub fn new(data: DMatrix<f64>, view_index: usize) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("view {view_index} has non-finite entries")));
        }
        Ok(Self { data, view_index })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

/// Checks that every view of a stream has the same sample count.
pub fn check_stream(views: &[ViewMatrix]) -> Result<usize> {
    let first = views
        .first()
        .ok_or_else(|| Error::InvalidInput("view stream is empty".into()))?;
    for v in views {
        if v.n() != first.n() {
            return Err(Error::DimensionMismatch(format!(
                "view {} has {} samples, view {} has {}",
                v.view_index,
                v.n(),
                first.view_index,
                first.n()
            )));
        }
    }
    Ok(first.n())
}

/// Reads a comma-separated numeric matrix, one sample per row.
///
/// Row and column numbers in errors are 1-based and count data rows only.
pub fn load_view_csv(path: impl AsRef<Path>, has_header: bool) -> Result<ViewMatrix> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = r + 1;
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRow {
                path: path.into(),
                row,
                expected,
                found: record.len(),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            let value = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::BadCell {
                    path: path.into(),
                    row,
                    column: c + 1,
                    cell: cell.to_string(),
                })?;
            values.push(value);
        }
        rows += 1;
    }
    let cols = width.unwrap_or(0);
    if rows == 0 || cols == 0 {
        return Err(Error::NoRows { path: path.into() });
    }
    ViewMatrix::new(DMatrix::from_row_slice(rows, cols, &values), 1)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
    }
}

/// Reads one non-negative integer label per line. Blank lines are ignored.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let label = line.parse::<usize>().map_err(|_| Error::BadCell {
            path: path.into(),
            row: i + 1,
            column: 1,
            cell: line.to_string(),
        })?;
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::NoRows { path: path.into() });
    }
    Ok(labels)
}

/// Number of classes in a label vector, requiring ids to cover `0..k`.
pub fn class_count(labels: &[usize]) -> Result<usize> {
    let ids: BTreeSet<usize> = labels.iter().copied().collect();
    let k = ids.len();
    if ids.iter().copied().ne(0..k) {
        return Err(Error::InvalidInput(format!(
            "labels must use every class id in 0..{k} (found {ids:?})"
        )));
    }
    Ok(k)
}

/// Writes a matrix as CSV with 17 significant digits per value.
pub fn write_matrix_csv(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(labels.len() * 2);
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parameters of a synthetic Gaussian-blob view stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub k: usize,
    pub views: usize,
    /// Feature dimension of each view; a single entry applies to every view.
    pub dims: Vec<usize>,
    /// Distance between every pair of cluster centers, in units of the
    /// within-cluster standard deviation.
    pub separation: f64,
    /// Standard deviation of the label-independent noise added to corrupted views.
    #[serde(default)]
    pub noise_level: f64,
    /// 1-based indices of the views that receive extra noise.
    #[serde(default)]
    pub corrupted_views: BTreeSet<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn clean(n: usize, k: usize, views: usize, separation: f64, seed: u64) -> Self {
        Self {
            n,
            k,
            views,
            dims: vec![k.max(2) * 3],
            separation,
            noise_level: 0.0,
            corrupted_views: BTreeSet::new(),
            seed,
        }
    }

    pub fn with_corrupted(mut self, views: impl IntoIterator<Item = usize>, noise_level: f64) -> Self {
        self.corrupted_views = views.into_iter().collect();
        self.noise_level = noise_level;
        self
    }

    fn dim(&self, view: usize) -> usize {
        if self.dims.len() == 1 {
            self.dims[0]
        } else {
            self.dims[view - 1]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || self.n < self.k {
            return Err(Error::InvalidInput(format!("need n >= k >= 2 (n={}, k={})", self.n, self.k)));
        }
        if self.views == 0 {
            return Err(Error::InvalidInput("need at least one view".into()));
        }
        if self.dims.len() != 1 && self.dims.len() != self.views {
            return Err(Error::InvalidInput(format!(
                "dims has {} entries for {} views",
                self.dims.len(),
                self.views
            )));
        }
        if let Some(&d) = self.dims.iter().find(|&&d| d < self.k) {
            return Err(Error::InvalidInput(format!(
                "view dimension {d} is below k={}: centers cannot be equidistant",
                self.k
            )));
        }
        if !(self.separation >= 0.0) || !(self.noise_level >= 0.0) {
            return Err(Error::InvalidInput("separation and noise_level must be >= 0".into()));
        }
        if let Some(&v) = self.corrupted_views.iter().find(|&&v| v == 0 || v > self.views) {
            return Err(Error::InvalidInput(format!("corrupted view {v} outside 1..={}", self.views)));
        }
        Ok(())
    }
}

fn random_orthogonal(d: usize, rng: &mut crate::rng::Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    // Sign-correct so the distribution is Haar rather than QR-biased.
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Generates `spec.views` views over the same samples.
///
/// Sample `i` belongs to class `i mod k`. In every view the class centers sit
/// on a randomly rotated scaled simplex (pairwise distance `separation`) and
/// samples add unit-variance isotropic Gaussian noise. Corrupted views add a
/// further `noise_level`-scaled Gaussian that ignores the labels.
pub fn generate_synthetic_stream(spec: &SyntheticSpec) -> Result<(Vec<ViewMatrix>, Vec<usize>)> {
    spec.validate()?;
    let labels: Vec<usize> = (0..spec.n).map(|i| i % spec.k).collect();
    let radius = spec.separation / std::f64::consts::SQRT_2;
    let mut views = Vec::with_capacity(spec.views);
    for t in 1..=spec.views {
        let d = spec.dim(t);
        let mut rng = rng_for(spec.seed, stream::SYNTH, t as u64);
        let rotation = random_orthogonal(d, &mut rng);
        let mut data = DMatrix::zeros(spec.n, d);
        for (i, &c) in labels.iter().enumerate() {
            for j in 0..d {
                let noise: f64 = StandardNormal.sample(&mut rng);
                data[(i, j)] = radius * rotation[(j, c)] + noise;
            }
        }
        if spec.corrupted_views.contains(&t) {
            for v in data.iter_mut() {
                let noise: f64 = StandardNormal.sample(&mut rng);
                *v += spec.noise_level * noise;
            }
        }
        views.push(ViewMatrix::new(data, t)?);
    }
    Ok((views, labels))
}

/// Similarity kernel applied to the row-normalized features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Kernel {
    Linear,
    /// `exp(-gamma ‖x̂_i − x̂_j‖²)`; always uses the dense n×n route.
    Rbf { gamma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionOptions {
    pub kernel: Kernel,
    /// Largest n for which the n×n kernel is formed explicitly; above it the
    /// linear kernel's eigenvectors come from a thin SVD of the features.
    pub dense_limit: usize,
}

impl Default for PartitionOptions {
    fn default() -> Self {
        Self {
            kernel: Kernel::Linear,
            dense_limit: 5000,
        }
    }
}

fn row_normalized(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    out
}

/// Indices of `values` sorted descending, ties by position.
fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Flips each column so its largest-magnitude entry is positive.
pub(crate) fn canonicalize_signs(h: &mut DMatrix<f64>) {
    for mut col in h.column_iter_mut() {
        let mut pivot = 0.0f64;
        for &v in col.iter() {
            if v.abs() > pivot.abs() {
                pivot = v;
            }
        }
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
}

/// Appends canonical directions by Gram–Schmidt until `basis` has `k` columns.
fn complete_basis(basis: DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = basis.nrows();
    let mut cols: Vec<_> = basis.column_iter().map(|c| c.into_owned()).collect();
    for e in 0..n {
        if cols.len() == k {
            break;
        }
        let mut v = nalgebra::DVector::zeros(n);
        v[e] = 1.0;
        for _ in 0..2 {
            for c in &cols {
                let proj = c.dot(&v);
                v.axpy(-proj, c, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            cols.push(v / norm);
        }
    }
    DMatrix::from_columns(&cols)
}

/// Top-`k` eigenvectors of the view's kernel matrix, as a per-view partition.
pub fn extract_partition(view: &ViewMatrix, k: usize) -> Result<PartitionMatrix> {
    extract_partition_with(view, k, &PartitionOptions::default())
}

pub fn extract_partition_with(view: &ViewMatrix, k: usize, opts: &PartitionOptions) -> Result<PartitionMatrix> {
    let n = view.n();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("cannot extract k={k} columns from n={n} samples")));
    }
    if view.data.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput(format!("view {} is all zeros", view.view_index)));
    }
    let x = row_normalized(&view.data);
    let mut h = match opts.kernel {
        Kernel::Linear if n > opts.dense_limit => {
            let svd = SVD::new(x, true, false);
            let u = svd.u.ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
            let order = descending_order(svd.singular_values.as_slice());
            let take = order.len().min(k);
            let top = DMatrix::from_columns(&order[..take].iter().map(|&j| u.column(j)).collect::<Vec<_>>());
            complete_basis(top, k)
        }
        kernel => {
            let s = kernel_matrix(&x, kernel);
            let eig = SymmetricEigen::new(s);
            let order = descending_order(eig.eigenvalues.as_slice());
            DMatrix::from_columns(&order[..k].iter().map(|&j| eig.eigenvectors.column(j)).collect::<Vec<_>>())
        }
    };
    canonicalize_signs(&mut h);
    PartitionMatrix::new(h, PartitionRole::PerView)
}

fn kernel_matrix(x: &DMatrix<f64>, kernel: Kernel) -> DMatrix<f64> {
    let gram = x * x.transpose();
    match kernel {
        Kernel::Linear => gram,
        Kernel::Rbf { gamma } => {
            let n = gram.nrows();
            DMatrix::from_fn(n, n, |i, j| {
                let d2 = (gram[(i, i)] + gram[(j, j)] - 2.0 * gram[(i, j)]).max(0.0);
                (-gamma * d2).exp()
            })
        }
    }
}

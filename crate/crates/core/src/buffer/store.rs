use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use super::pairs::PairSelection;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PairSign {
    Positive,
    Negative,
}

/// Sparse symmetric store of signed sample pairs.
///
/// Only unordered pairs `i < j` are stored; `entry(i, j) == entry(j, i)` and the
/// diagonal is implicitly zero. Every stored value is exactly `w_p` or `-w_n`.
/// Pairs that two merged views disagree on are tombstoned for the rest of the
/// run and never stored again.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuralBuffer {
    n: usize,
    w_p: f64,
    w_n: f64,
    views_merged: usize,
    entries: BTreeMap<(usize, usize), PairSign>,
    tombstones: BTreeSet<(usize, usize)>,
    /// Pairs dropped while building a single view's indicator because the view
    /// itself nominated them both ways.
    intra_view_dropped: usize,
}

fn ordered(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

fn check_weights(w_p: f64, w_n: f64) -> Result<()> {
    if !(w_p > 0.0 && w_p.is_finite() && w_n > 0.0 && w_n.is_finite()) {
        return Err(Error::InvalidInput(format!("pair weights must be positive (w_p={w_p}, w_n={w_n})")));
    }
    Ok(())
}

impl StructuralBuffer {
    /// An empty buffer that has seen no views.
    pub fn empty(n: usize, w_p: f64, w_n: f64) -> Result<Self> {
        check_weights(w_p, w_n)?;
        Ok(Self {
            n,
            w_p,
            w_n,
            views_merged: 0,
            entries: BTreeMap::new(),
            tombstones: BTreeSet::new(),
            intra_view_dropped: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weights(&self) -> (f64, f64) {
        (self.w_p, self.w_n)
    }

    pub fn views_merged(&self) -> usize {
        self.views_merged
    }

    /// Number of stored unordered pairs.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Pairs removed because views disagreed on their sign.
    pub fn conflicts(&self) -> usize {
        self.tombstones.len()
    }

    pub fn is_tombstoned(&self, i: usize, j: usize) -> bool {
        self.tombstones.contains(&ordered(i, j))
    }

    pub fn intra_view_dropped(&self) -> usize {
        self.intra_view_dropped
    }

    fn value(&self, sign: PairSign) -> f64 {
        match sign {
            PairSign::Positive => self.w_p,
            PairSign::Negative => -self.w_n,
        }
    }

    /// `W[i][j]`, zero when absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        self.entries.get(&ordered(i, j)).map_or(0.0, |&s| self.value(s))
    }

    /// Stored pairs as `(i, j, value)` with `i < j`, in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(i, j), &s)| (i, j, self.value(s)))
    }

    pub fn count(&self, sign: PairSign) -> usize {
        self.entries.values().filter(|&&s| s == sign).count()
    }

    /// Frobenius norm of the full symmetric matrix (each pair counted twice).
    pub fn frobenius_norm(&self) -> f64 {
        let sq: f64 = self.iter().map(|(_, _, v)| v * v).sum();
        (2.0 * sq).sqrt()
    }

    /// `max_i Σ_j |W_ij|`, a Gershgorin bound on `-λ_min(W)`.
    pub fn max_abs_row_sum(&self) -> f64 {
        let mut sums = vec![0.0; self.n];
        for (i, j, v) in self.iter() {
            sums[i] += v.abs();
            sums[j] += v.abs();
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    /// Dense `W · x` for an n×k matrix `x`.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n, "buffer and matrix row counts differ");
        let mut out = DMatrix::zeros(self.n, x.ncols());
        for c in 0..x.ncols() {
            let src = x.column(c);
            let mut dst = out.column_mut(c);
            for (i, j, v) in self.iter() {
                dst[i] += v * src[j];
                dst[j] += v * src[i];
            }
        }
        out
    }

    /// Dense copy of the full symmetric matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.iter() {
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
        w
    }

    /// Keeps only pairs whose endpoints fall in the same contiguous batch of
    /// `batch` samples.
    pub fn restrict_to_batches(&self, batch: usize) -> Result<Self> {
        if batch == 0 || batch > self.n {
            return Err(Error::InvalidInput(format!("batch size {batch} outside 1..={}", self.n)));
        }
        let mut out = self.clone();
        out.entries.retain(|&(i, j), _| i / batch == j / batch);
        Ok(out)
    }

    /// Capacity: at most `(m_p + m_n)·n` new pairs per view, and
    /// never more than `n(n−1)/2`.
    pub fn capacity_bound(&self, m_p: usize, m_n: usize) -> usize {
        let all = self.n * self.n.saturating_sub(1) / 2;
        all.min((m_p + m_n) * self.views_merged * self.n)
    }

    /// Symmetry and value-set invariants hold by construction; this checks the
    /// storage-level ones.
    pub fn check_invariants(&self) -> Result<()> {
        for (&(i, j), _) in &self.entries {
            if i >= j || j >= self.n {
                return Err(Error::Invariant(format!("malformed pair ({i}, {j}) in n={} buffer", self.n)));
            }
            if self.tombstones.contains(&(i, j)) {
                return Err(Error::Invariant(format!("tombstoned pair ({i}, {j}) is stored")));
            }
        }
        Ok(())
    }

    /// Text form: header `n v w_p w_n`, then `i j value` per stored pair with
    /// `i < j`, sorted. Floats use the shortest representation that parses
    /// back to the same bits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{} {} {} {}", self.n, self.views_merged, self.w_p, self.w_n).unwrap();
        for (i, j, v) in self.iter() {
            writeln!(out, "{i} {j} {v}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::InvalidInput(format!("buffer line {line}: {msg}"));
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(bad(1, "header must be `n v w_p w_n`"));
        }
        let n: usize = fields[0].parse().map_err(|_| bad(1, "bad n"))?;
        let v: usize = fields[1].parse().map_err(|_| bad(1, "bad v"))?;
        let w_p: f64 = fields[2].parse().map_err(|_| bad(1, "bad w_p"))?;
        let w_n: f64 = fields[3].parse().map_err(|_| bad(1, "bad w_n"))?;
        let mut buffer = Self::empty(n, w_p, w_n)?;
        buffer.views_merged = v;
        let mut last = None;
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad(lineno, "expected `i j value`"));
            }
            let i: usize = f[0].parse().map_err(|_| bad(lineno, "bad i"))?;
            let j: usize = f[1].parse().map_err(|_| bad(lineno, "bad j"))?;
            let value: f64 = f[2].parse().map_err(|_| bad(lineno, "bad value"))?;
            if !(i < j && j < n) {
                return Err(bad(lineno, "pair must satisfy i < j < n"));
            }
            if last.is_some_and(|prev| prev >= (i, j)) {
                return Err(bad(lineno, "pairs must be strictly increasing"));
            }
            last = Some((i, j));
            let sign = if value == w_p {
                PairSign::Positive
            } else if value == -w_n {
                PairSign::Negative
            } else {
                return Err(bad(lineno, "value must be w_p or -w_n"));
            };
            buffer.entries.insert((i, j), sign);
        }
        Ok(buffer)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Three-valued indicator of one view's pair selection.
///
/// A pair nominated by either endpoint is stored for both. A pair nominated as
/// both positive and negative within the view is dropped.
pub fn build_indicator(pairs: &PairSelection, w_p: f64, w_n: f64, n: usize) -> Result<StructuralBuffer> {
    if pairs.n() != n {
        return Err(Error::DimensionMismatch(format!("selection covers {} samples, expected {n}", pairs.n())));
    }
    let mut buffer = StructuralBuffer::empty(n, w_p, w_n)?;
    let collect = |lists: &[Vec<usize>]| -> Result<BTreeSet<(usize, usize)>> {
        let mut set = BTreeSet::new();
        for (i, list) in lists.iter().enumerate() {
            for &j in list {
                if j >= n || j == i {
                    return Err(Error::InvalidInput(format!("invalid partner {j} for sample {i}")));
                }
                set.insert(ordered(i, j));
            }
        }
        Ok(set)
    };
    let positives = collect(&pairs.positives)?;
    let negatives = collect(&pairs.negatives)?;
    for &p in positives.symmetric_difference(&negatives) {
        let sign = if positives.contains(&p) { PairSign::Positive } else { PairSign::Negative };
        buffer.entries.insert(p, sign);
    }
    buffer.intra_view_dropped = positives.intersection(&negatives).count();
    buffer.views_merged = 1;
    Ok(buffer)
}

/// Folds `incoming` into `prev`.
///
/// Agreeing or one-sided pairs keep their fixed value; magnitudes never add up.
/// Pairs with conflicting signs, or already tombstoned on either side, are
/// removed and tombstoned.
pub fn merge_buffer(prev: &StructuralBuffer, incoming: &StructuralBuffer) -> Result<StructuralBuffer> {
    if prev.n != incoming.n {
        return Err(Error::DimensionMismatch(format!("buffers have n={} and n={}", prev.n, incoming.n)));
    }
    if prev.w_p != incoming.w_p || prev.w_n != incoming.w_n {
        return Err(Error::DimensionMismatch(format!(
            "buffer weights differ: ({}, {}) vs ({}, {})",
            prev.w_p, prev.w_n, incoming.w_p, incoming.w_n
        )));
    }
    let mut tombstones: BTreeSet<_> = prev.tombstones.union(&incoming.tombstones).copied().collect();
    let mut entries = BTreeMap::new();
    for (&pair, &sign) in prev.entries.iter().chain(&incoming.entries) {
        if tombstones.contains(&pair) {
            continue;
        }
        match entries.get(&pair) {
            Some(&existing) if existing != sign => {
                entries.remove(&pair);
                tombstones.insert(pair);
            }
            _ => {
                entries.insert(pair, sign);
            }
        }
    }
    Ok(StructuralBuffer {
        n: prev.n,
        w_p: prev.w_p,
        w_n: prev.w_n,
        views_merged: prev.views_merged + incoming.views_merged,
        entries,
        tombstones,
        intra_view_dropped: prev.intra_view_dropped + incoming.intra_view_dropped,
    })
}

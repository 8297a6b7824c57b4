//! Mask construction from autoencoder reconstruction error, and mask
//! quality against a known ground truth.
//!
//! Convention: `M_ij = 1` marks a trusted entry, `M_ij = 0` a suspected
//! corruption. Positives in [`MaskReport`] are on the anomaly side.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Zip};

use crate::error::{invalid, shape_err, Error, Result};

pub const DEFAULT_TAU: f64 = 0.1;

/// `n × d` matrix with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMatrix {
    values: Array2<f64>,
    binary: bool,
}

impl MaskMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("mask", "entries must lie in [0, 1]"));
        }
        let binary = values.iter().all(|&v| v == 0.0 || v == 1.0);
        Ok(Self { values, binary })
    }

    pub fn ones(n: usize, d: usize) -> Self {
        Self {
            values: Array2::ones((n, d)),
            binary: true,
        }
    }

    /// Zero exactly where `after` differs from `before`.
    pub fn from_changes(before: ArrayView2<f64>, after: ArrayView2<f64>) -> Self {
        Self {
            values: Zip::from(&before)
                .and(&after)
                .map_collect(|a, b| if a == b { 1.0 } else { 0.0 }),
            binary: true,
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn is_binary(&self) -> bool {
        self.binary
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Number of nonzero entries of `1 - M`.
    pub fn flagged(&self) -> usize {
        self.values.iter().filter(|&&v| v != 1.0).count()
    }

    /// Rows that contain at least one flagged entry.
    pub fn flagged_rows(&self) -> Vec<usize> {
        self.values
            .rows()
            .into_iter()
            .enumerate()
            .filter(|(_, r)| r.iter().any(|&v| v != 1.0))
            .map(|(i, _)| i)
            .collect()
    }

    /// Sparse triplet CSV: `# n=<n>,d=<d>`, a `i,j,value` header, then one
    /// line per entry that is not 1.
    pub fn write_triplets(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let (n, d) = self.shape();
        writeln!(w, "# n={n},d={d}")?;
        writeln!(w, "i,j,value")?;
        for ((i, j), &v) in self.values.indexed_iter() {
            if v != 1.0 {
                writeln!(w, "{i},{j},{v}")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_triplets(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let err = |line: usize, reason: String| Error::Parse {
            source_name: path.display().to_string(),
            line,
            reason,
        };
        let mut shape = None;
        let mut values: Option<Array2<f64>> = None;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            let lineno = idx + 1;
            if line.is_empty() || line == "i,j,value" {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut n = None;
                let mut d = None;
                for part in rest.split(',') {
                    match part.trim().split_once('=') {
                        Some(("n", v)) => n = v.trim().parse().ok(),
                        Some(("d", v)) => d = v.trim().parse().ok(),
                        _ => {}
                    }
                }
                if let (Some(n), Some(d)) = (n, d) {
                    shape = Some((n, d));
                    values = Some(Array2::ones((n, d)));
                }
                continue;
            }
            let m = values
                .as_mut()
                .ok_or_else(|| err(lineno, "missing `# n=..,d=..` header".into()))?;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(err(lineno, format!("expected 3 fields, found {}", fields.len())));
            }
            let i: usize = fields[0].parse().map_err(|_| err(lineno, "bad row index".into()))?;
            let j: usize = fields[1].parse().map_err(|_| err(lineno, "bad column index".into()))?;
            let v: f64 = fields[2].parse().map_err(|_| err(lineno, "bad value".into()))?;
            let (n, d) = shape.unwrap();
            if i >= n || j >= d {
                return Err(err(lineno, format!("entry ({i}, {j}) outside {n}x{d}")));
            }
            m[[i, j]] = v;
        }
        let values = values.ok_or_else(|| err(0, "missing `# n=..,d=..` header".into()))?;
        Self::new(values)
    }
}

/// Row-wise `‖x_i - x'_i‖₂` and entrywise `|X - X'|`.
pub fn anomaly_scores(x: ArrayView2<f64>, recon: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    if x.dim() != recon.dim() {
        return Err(shape_err(format!("{:?}", x.dim()), format!("{:?}", recon.dim())));
    }
    let entry = Zip::from(&x).and(&recon).map_collect(|a, b| (a - b).abs());
    let node = entry.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    Ok((node, entry))
}

/// Min-max normalized scores in `[0, 1]`, or `None` when all scores coincide.
pub fn normalize_scores(scores: ArrayView2<f64>) -> Option<Array2<f64>> {
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return None;
    }
    Some(scores.mapv(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)))
}

/// `M = 1 - threshold(score, τ)` on min-max normalized entry scores.
///
/// With `binarize`, an entry is flagged iff its normalized score exceeds
/// `τ`; otherwise `M = 1 - score`. A constant score matrix yields all ones.
pub fn mask_from_scores(scores: ArrayView2<f64>, tau: f64, binarize: bool) -> Result<MaskMatrix> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(invalid("tau", format!("must lie in (0, 1), got {tau}")));
    }
    let (n, d) = scores.dim();
    let Some(norm) = normalize_scores(scores) else {
        return Ok(MaskMatrix::ones(n, d));
    };
    let values = if binarize {
        norm.mapv(|s| if s > tau { 0.0 } else { 1.0 })
    } else {
        norm.mapv(|s| 1.0 - s)
    };
    MaskMatrix::new(values)
}

pub fn build_mask(x: ArrayView2<f64>, recon: ArrayView2<f64>, tau: f64, binarize: bool) -> Result<MaskMatrix> {
    let (_, entry) = anomaly_scores(x, recon)?;
    mask_from_scores(entry.view(), tau, binarize)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskReport {
    pub true_positives: usize,
    pub false_negatives: usize,
    pub false_positives: usize,
    /// `TP / (TP + FN)`; `None` when there are no true anomalies.
    pub recall: Option<f64>,
    /// Fraction of entries flagged by the predicted mask.
    pub sparsity: f64,
}

pub fn mask_metrics(predicted: &MaskMatrix, truth: &MaskMatrix) -> Result<MaskReport> {
    if !predicted.is_binary() || !truth.is_binary() {
        return Err(Error::NonBinaryMask);
    }
    if predicted.shape() != truth.shape() {
        return Err(shape_err(format!("{:?}", truth.shape()), format!("{:?}", predicted.shape())));
    }
    let (mut tp, mut fneg, mut fp) = (0, 0, 0);
    Zip::from(predicted.values()).and(truth.values()).for_each(|&p, &t| {
        match (p == 0.0, t == 0.0) {
            (true, true) => tp += 1,
            (false, true) => fneg += 1,
            (true, false) => fp += 1,
            (false, false) => {}
        }
    });
    let total = predicted.values().len().max(1);
    Ok(MaskReport {
        true_positives: tp,
        false_negatives: fneg,
        false_positives: fp,
        recall: (tp + fneg > 0).then(|| tp as f64 / (tp + fneg) as f64),
        sparsity: predicted.flagged() as f64 / total as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn score_examples() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let (node, entry) = anomaly_scores(x.view(), x.view()).unwrap();
        assert!(node.iter().chain(entry.iter()).all(|&v| v == 0.0));

        let y = array![[1.0, 2.0], [0.0, 0.0]];
        let (node, _) = anomaly_scores(x.view(), y.view()).unwrap();
        assert_eq!(node[1], 5.0);

        let y = array![[1.0, 5.0], [3.0, 4.0]];
        let (_, entry) = anomaly_scores(x.view(), y.view()).unwrap();
        assert_eq!(entry, array![[0.0, 3.0], [0.0, 0.0]]);

        assert!(anomaly_scores(x.view(), Array2::zeros((3, 2)).view()).is_err());
    }

    #[test]
    fn mask_examples() {
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64);
        let m = build_mask(x.view(), x.view(), 0.1, true).unwrap();
        assert_eq!(m, MaskMatrix::ones(4, 3));

        let mut r = x.clone();
        r[[2, 1]] += 10.0;
        r[[0, 0]] += 0.5;
        let m = build_mask(x.view(), r.view(), 0.5, true).unwrap();
        assert_eq!(m.flagged(), 1);
        assert_eq!(m.values()[[2, 1]], 0.0);

        let soft = build_mask(x.view(), r.view(), 0.5, false).unwrap();
        assert!(!soft.is_binary());
        assert_eq!(soft.values()[[2, 1]], 0.0);
        assert_eq!(soft.values()[[0, 0]], 0.95);

        assert!(build_mask(x.view(), r.view(), 1.0, true).is_err());
        assert!(build_mask(x.view(), r.view(), 0.0, true).is_err());
    }

    #[test]
    fn metrics_examples() {
        let truth = MaskMatrix::new(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let r = mask_metrics(&truth, &truth).unwrap();
        assert_eq!((r.true_positives, r.false_negatives, r.false_positives), (2, 0, 0));
        assert_eq!(r.recall, Some(1.0));

        let r = mask_metrics(&MaskMatrix::ones(3, 2), &truth).unwrap();
        assert_eq!((r.true_positives, r.false_negatives), (0, 2));
        assert_eq!(r.recall, Some(0.0));
        assert_eq!(r.sparsity, 0.0);

        let soft = MaskMatrix::new(array![[0.5, 1.0], [1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(mask_metrics(&soft, &truth), Err(Error::NonBinaryMask)));
    }

    #[test]
    fn triplet_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mask.csv");
        let m = MaskMatrix::new(array![[1.0, 0.0, 1.0], [0.25, 1.0, 1.0]]).unwrap();
        m.write_triplets(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "# n=2,d=3\ni,j,value\n0,1,0\n1,0,0.25\n");
        assert_eq!(MaskMatrix::read_triplets(&p).unwrap(), m);
    }

    proptest! {
        #[test]
        fn flagged_count_nonincreasing_in_tau(
            scores in proptest::collection::vec(0.0..10.0f64, 24),
            t1 in 0.01..0.99f64,
            t2 in 0.01..0.99f64,
        ) {
            let s = Array2::from_shape_vec((6, 4), scores).unwrap();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = mask_from_scores(s.view(), lo, true).unwrap();
            let b = mask_from_scores(s.view(), hi, true).unwrap();
            prop_assert!(a.flagged() >= b.flagged());
            prop_assert!(a.values().iter().all(|&v| v == 0.0 || v == 1.0));
        }

        #[test]
        fn invariant_to_positive_rescaling(
            scores in proptest::collection::vec(0.0..10.0f64, 12),
            scale in 0.01..100.0f64,
            tau in 0.01..0.99f64,
        ) {
            let s = Array2::from_shape_vec((3, 4), scores).unwrap();
            let a = mask_from_scores(s.view(), tau, true).unwrap();
            let b = mask_from_scores((&s * scale).view(), tau, true).unwrap();
            // Normalization divides out the scale up to rounding at the threshold.
            let norm = normalize_scores(s.view());
            if let Some(norm) = norm {
                if norm.iter().all(|v| (v - tau).abs() > 1e-9) {
                    prop_assert_eq!(a, b);
                }
            }
        }

        #[test]
        fn soft_mask_in_unit_interval(scores in proptest::collection::vec(0.0..10.0f64, 12)) {
            let s = Array2::from_shape_vec((3, 4), scores).unwrap();
            let m = mask_from_scores(s.view(), 0.3, false).unwrap();
            prop_assert!(m.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

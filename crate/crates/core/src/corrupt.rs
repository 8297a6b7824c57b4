//! Seeded corruption generators that return the corrupted features together
//! with the exact ground-truth mask.
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`, so a seed reproduces the same corruption on every
//! platform.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::io;
use crate::mask::MaskMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Corrupted features plus the mask that is 0 exactly where they changed.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionRecord {
    pub corrupted: Array2<f64>,
    pub mask: MaskMatrix,
    pub seed: u64,
    pub params: Vec<(String, String)>,
}

impl CorruptionRecord {
    /// Writes `features.csv`, `mask.csv` (triplets) and `corruption.txt`.
    pub fn save(&self, dir: &Path, header: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        io::write_dense_csv(&dir.join("features.csv"), self.corrupted.view(), header)?;
        self.mask.write_triplets(&dir.join("mask.csv"))?;
        let mut entries = vec![("seed".to_string(), self.seed.to_string())];
        entries.extend(self.params.iter().cloned());
        io::write_manifest(&dir.join("corruption.txt"), &entries)
    }
}

/// Draws `count` distinct nodes out of `n`, in draw order.
pub fn sample_nodes(n: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count > n {
        return Err(invalid("count", format!("cannot draw {count} of {n} nodes")));
    }
    Ok(index::sample(&mut rng(seed), n, count).into_vec())
}

fn sq_dist(x: ArrayView2<f64>, a: usize, b: usize) -> f64 {
    x.row(a).iter().zip(x.row(b)).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Attribute injection: each of `n_targets` random nodes takes the
/// attributes of the farthest (ℓ2) of `k` random other nodes. Distances
/// and replacements use the uncorrupted rows.
pub fn inject_attributes(x: ArrayView2<f64>, n_targets: usize, k: usize, seed: u64) -> Result<CorruptionRecord> {
    let n = x.nrows();
    if n_targets > n {
        return Err(invalid("n_targets", format!("{n_targets} exceeds node count {n}")));
    }
    if k < 1 || k > n.saturating_sub(1) {
        return Err(invalid("k", format!("candidate pool must be in [1, {}], got {k}", n.saturating_sub(1))));
    }
    let mut rng = rng(seed);
    let targets = index::sample(&mut rng, n, n_targets).into_vec();
    let mut out = x.to_owned();
    for &t in &targets {
        // Sample from the n - 1 other nodes by skipping over the target.
        let best = index::sample(&mut rng, n - 1, k)
            .into_iter()
            .map(|c| if c >= t { c + 1 } else { c })
            .fold((usize::MAX, f64::NEG_INFINITY), |(bj, bd), c| {
                let d = sq_dist(x, t, c);
                if d > bd {
                    (c, d)
                } else {
                    (bj, bd)
                }
            })
            .0;
        out.row_mut(t).assign(&x.row(best));
    }
    Ok(CorruptionRecord {
        mask: MaskMatrix::from_changes(x, out.view()),
        corrupted: out,
        seed,
        params: vec![
            ("generator".into(), "injection".into()),
            ("n_targets".into(), n_targets.to_string()),
            ("k".into(), k.to_string()),
            (
                "targets".into(),
                targets.iter().map(ToString::to_string).collect::<Vec<_>>().join(" "),
            ),
        ],
    })
}

/// `X + E` with i.i.d. `N(0, σ²)` entries.
pub fn add_gaussian_noise(x: ArrayView2<f64>, sigma: f64, seed: u64) -> Result<Array2<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(invalid("sigma", format!("must be a finite value >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.to_owned());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| invalid("sigma", e.to_string()))?;
    let mut rng = rng(seed);
    let mut out = x.to_owned();
    out.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    Ok(out)
}

/// White noise on the listed rows only; their mask rows are all zero.
pub fn add_local_patch_noise(x: ArrayView2<f64>, nodes: &[usize], sigma: f64, seed: u64) -> Result<CorruptionRecord> {
    let n = x.nrows();
    let mut seen = BTreeSet::new();
    for &i in nodes {
        if i >= n {
            return Err(Error::NodeOutOfRange { index: i, n });
        }
        if !seen.insert(i) {
            return Err(invalid("nodes", format!("node {i} listed twice")));
        }
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(invalid("sigma", format!("must be a finite value >= 0, got {sigma}")));
    }
    let mut out = x.to_owned();
    let mut mask = Array2::ones(x.dim());
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| invalid("sigma", e.to_string()))?;
        let mut rng = rng(seed);
        for &i in nodes {
            out.row_mut(i).iter_mut().for_each(|v| *v += normal.sample(&mut rng));
            mask.row_mut(i).fill(0.0);
        }
    }
    Ok(CorruptionRecord {
        corrupted: out,
        mask: MaskMatrix::new(mask)?,
        seed,
        params: vec![
            ("generator".into(), "local_noise".into()),
            ("sigma".into(), sigma.to_string()),
            (
                "nodes".into(),
                nodes.iter().map(ToString::to_string).collect::<Vec<_>>().join(" "),
            ),
        ],
    })
}

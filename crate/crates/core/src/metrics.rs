//! Error measures used in reports: PSNR, and MSE / mean change split by the
//! ground-truth mask.
//!
//! PSNR of identical inputs is `f64::INFINITY`; reports print it as `inf`.

use ndarray::{ArrayView2, Zip};

use crate::error::{invalid, shape_err, Result};

fn same_shape(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(shape_err(format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    Ok(())
}

pub fn mse(reference: ArrayView2<f64>, candidate: ArrayView2<f64>) -> Result<f64> {
    same_shape(reference, candidate)?;
    let n = reference.len().max(1) as f64;
    Ok(Zip::from(&reference).and(&candidate).fold(0.0, |s, a, b| s + (a - b) * (a - b)) / n)
}

/// `10·log₁₀(peak² / MSE)`; `+∞` when the inputs are identical.
pub fn psnr(reference: ArrayView2<f64>, candidate: ArrayView2<f64>, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(invalid("peak", format!("must be > 0, got {peak}")));
    }
    Ok(psnr_from_mse(mse(reference, candidate)?, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Which side of the ground-truth mask to measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// Entries with mask value 0.
    Masked,
    /// Entries with mask value 1.
    Unmasked,
}

impl Region {
    fn contains(self, m: f64) -> bool {
        match self {
            Region::Masked => m == 0.0,
            Region::Unmasked => m != 0.0,
        }
    }
}

fn region_mean(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    mask: ArrayView2<f64>,
    region: Region,
    f: impl Fn(f64) -> f64,
) -> Result<Option<f64>> {
    same_shape(a, b)?;
    same_shape(a, mask)?;
    let (sum, count) = Zip::from(&a).and(&b).and(&mask).fold((0.0, 0usize), |(s, c), x, y, &m| {
        if region.contains(m) {
            (s + f(x - y), c + 1)
        } else {
            (s, c)
        }
    });
    Ok((count > 0).then(|| sum / count as f64))
}

/// MSE restricted to one side of the mask; `None` if that side is empty.
pub fn region_mse(
    reference: ArrayView2<f64>,
    candidate: ArrayView2<f64>,
    mask: ArrayView2<f64>,
    region: Region,
) -> Result<Option<f64>> {
    region_mean(reference, candidate, mask, region, |r| r * r)
}

/// Mean `|after - before|` over one side of the mask.
pub fn region_mean_change(
    before: ArrayView2<f64>,
    after: ArrayView2<f64>,
    mask: ArrayView2<f64>,
    region: Region,
) -> Result<Option<f64>> {
    region_mean(before, after, mask, region, f64::abs)
}

/// PSNR over the rows holding at least one zero of the ground-truth mask;
/// `None` when no row is corrupted.
pub fn local_psnr(
    reference: ArrayView2<f64>,
    candidate: ArrayView2<f64>,
    truth: ArrayView2<f64>,
    peak: f64,
) -> Result<Option<f64>> {
    same_shape(reference, candidate)?;
    same_shape(reference, truth)?;
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(invalid("peak", format!("must be > 0, got {peak}")));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for ((r, c), m) in reference.rows().into_iter().zip(candidate.rows()).zip(truth.rows()) {
        if m.iter().any(|&v| v == 0.0) {
            sum += r.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            count += r.len();
        }
    }
    Ok((count > 0).then(|| psnr_from_mse(sum / count as f64, peak)))
}

/// Formats a PSNR value, printing the identical-input sentinel as `inf`.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

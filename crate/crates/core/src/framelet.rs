//! Undecimated tight graph framelets.
//!
//! A system with `K` high passes and `J` levels splits a signal into
//! `1 + K·J` bands. With the graph spectrum rescaled to `x_i = λ / 2^{R+i-1}`
//! (level `i = 1` is the finest), band responses are
//!
//! ```text
//! high (k, l):  β̂_k(x_l) · α̂(x_{l-1}) ··· α̂(x_1)
//! low  (0, J):  α̂(x_J)   · α̂(x_{J-1}) ··· α̂(x_1)
//! ```
//!
//! Whenever the filter bank satisfies `α̂² + Σ_k β̂_k² = 1` the squared
//! responses telescope to one, so `Σ_b W_bᵀ W_b = I` for every `R`.
//!
//! The transform is applied either through a dense eigendecomposition
//! (exact mode) or through a Chebyshev expansion of each band response in
//! the Laplacian (Chebyshev mode), which never forms eigenvectors.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{invalid, shape_err, Error, Result};
use crate::graph::{
    eigendecompose_small, estimate_lambda_max, normalized_laplacian, Graph, SparseMatrix,
    SpectralDecomposition, EXACT_PATH_CAP,
};
use crate::io;

/// Spectral low-pass and high-pass responses of a framelet filter bank.
pub trait FilterBank: fmt::Debug + Send + Sync {
    fn low_pass(&self, x: f64) -> f64;
    /// `k` is 1-based.
    fn high_pass(&self, k: usize, x: f64) -> f64;
    fn high_passes(&self) -> usize;
    fn name(&self) -> &'static str;
}

/// Haar-type bank: `α̂(x) = cos(x/2)`, `β̂(x) = sin(x/2)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HaarFilterBank;

impl FilterBank for HaarFilterBank {
    fn low_pass(&self, x: f64) -> f64 {
        (x / 2.0).cos()
    }

    fn high_pass(&self, k: usize, x: f64) -> f64 {
        debug_assert_eq!(k, 1);
        (x / 2.0).sin()
    }

    fn high_passes(&self) -> usize {
        1
    }

    fn name(&self) -> &'static str {
        "haar"
    }
}

pub fn haar_filter_bank() -> HaarFilterBank {
    HaarFilterBank
}

/// Band label `(k, l)`; `k = 0` is the low pass, which lives at level `J`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BandIndex {
    pub k: usize,
    pub l: usize,
}

impl BandIndex {
    pub fn is_low_pass(&self) -> bool {
        self.k == 0
    }

    pub fn file_stem(&self) -> String {
        format!("band_k{}_l{}", self.k, self.l)
    }
}

impl fmt::Display for BandIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.k, self.l)
    }
}

/// Canonical band order: `(0, J)`, then `(1, 1)..(1, J)`, ..., `(K, J)`.
pub fn band_indices(high_passes: usize, levels: usize) -> Vec<BandIndex> {
    std::iter::once(BandIndex { k: 0, l: levels })
        .chain((1..=high_passes).flat_map(|k| (1..=levels).map(move |l| BandIndex { k, l })))
        .collect()
}

/// Per-band penalty weights.
#[derive(Debug, Clone, PartialEq)]
pub struct NuWeights {
    bands: Vec<BandIndex>,
    values: Vec<f64>,
}

impl NuWeights {
    pub fn get(&self, band: BandIndex) -> f64 {
        self.bands
            .iter()
            .position(|&b| b == band)
            .map_or(0.0, |i| self.values[i])
    }

    /// Weights in canonical band order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bands(&self) -> &[BandIndex] {
        &self.bands
    }
}

/// `ν_{0,J} = 0` and `ν_{k,l} = 4^{-l-1} ν₀` on the high passes.
pub fn framelet_weights(nu0: f64, high_passes: usize, levels: usize) -> Result<NuWeights> {
    if !(nu0 >= 0.0) || !nu0.is_finite() {
        return Err(invalid("nu0", format!("must be a finite value >= 0, got {nu0}")));
    }
    let bands = band_indices(high_passes, levels);
    let values = bands
        .iter()
        .map(|b| {
            if b.is_low_pass() {
                0.0
            } else {
                nu0 * 4f64.powi(-(b.l as i32) - 1)
            }
        })
        .collect();
    Ok(NuWeights { bands, values })
}

/// Polynomial `c₀/2 + Σ_k c_k T_k(t)` on `[lo, hi]`, `t` the affine map to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevSeries {
    pub coeffs: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl ChebyshevSeries {
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    fn to_unit(&self, x: f64) -> f64 {
        (2.0 * x - (self.hi + self.lo)) / (self.hi - self.lo)
    }

    /// Clenshaw evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        let t = self.to_unit(x);
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = 2.0 * t * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        t * b1 - b2 + 0.5 * self.coeffs[0]
    }

    /// Max deviation from `f` on `points` equispaced nodes of `[lo, hi]`.
    pub fn max_grid_error(&self, f: impl Fn(f64) -> f64, points: usize) -> f64 {
        let step = (self.hi - self.lo) / (points.max(2) - 1) as f64;
        (0..points.max(2))
            .map(|i| {
                let x = self.lo + step * i as f64;
                (self.eval(x) - f(x)).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `p(L) X` via the three-term recurrence on the rescaled operator.
    pub fn apply(&self, l: &SparseMatrix, x: ArrayView2<f64>) -> Array2<f64> {
        let scale = 2.0 / (self.hi - self.lo);
        let shift = -(self.hi + self.lo) / (self.hi - self.lo);
        let op = |v: ArrayView2<f64>| {
            let mut out = l.matmul(v);
            out *= scale;
            out.scaled_add(shift, &v);
            out
        };
        let mut acc = x.to_owned() * (0.5 * self.coeffs[0]);
        if self.coeffs.len() == 1 {
            return acc;
        }
        let mut prev = x.to_owned();
        let mut cur = op(x);
        acc.scaled_add(self.coeffs[1], &cur);
        for &c in &self.coeffs[2..] {
            let mut next = op(cur.view());
            next *= 2.0;
            next -= &prev;
            acc.scaled_add(c, &next);
            prev = cur;
            cur = next;
        }
        acc
    }
}

/// Chebyshev interpolant of degree `order` through the `order + 1` Chebyshev nodes of `[lo, hi]`.
pub fn chebyshev_fit(f: impl Fn(f64) -> f64, order: usize, lo: f64, hi: f64) -> Result<ChebyshevSeries> {
    if order < 1 {
        return Err(invalid("order", "Chebyshev order must be >= 1"));
    }
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(invalid("interval", format!("degenerate interval [{lo}, {hi}]")));
    }
    let nodes = order + 1;
    let half_width = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let samples: Vec<(f64, f64)> = (0..nodes)
        .map(|j| {
            let theta = PI * (j as f64 + 0.5) / nodes as f64;
            (theta, f(mid + half_width * theta.cos()))
        })
        .collect();
    let coeffs = (0..nodes)
        .map(|k| {
            2.0 / nodes as f64
                * samples
                    .iter()
                    .map(|&(theta, fx)| fx * (k as f64 * theta).cos())
                    .sum::<f64>()
        })
        .collect();
    Ok(ChebyshevSeries { coeffs, lo, hi })
}

/// Which path evaluates the band operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransformKind {
    Exact,
    Chebyshev,
    /// Exact up to the eigendecomposition cap, Chebyshev beyond it.
    #[default]
    Auto,
}

impl std::str::FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "chebyshev" => Ok(Self::Chebyshev),
            "auto" => Ok(Self::Auto),
            other => Err(invalid("mode", format!("unknown transform mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrameletConfig {
    pub levels: usize,
    pub kind: TransformKind,
    pub chebyshev_order: usize,
    /// Overrides the tightest dilation `log₂(λ_max / π)`.
    pub dilation: Option<f64>,
}

impl Default for FrameletConfig {
    fn default() -> Self {
        Self {
            levels: 2,
            kind: TransformKind::Auto,
            chebyshev_order: 50,
            dilation: None,
        }
    }
}

#[derive(Debug, Clone)]
enum Operator {
    Exact(SpectralDecomposition),
    Chebyshev {
        laplacian: SparseMatrix,
        series: Vec<ChebyshevSeries>,
    },
}

/// Filter bank, level count, dilation, and the operator backend of a graph framelet transform.
#[derive(Debug, Clone)]
pub struct FrameletSystem {
    bank: Arc<dyn FilterBank>,
    levels: usize,
    dilation: f64,
    lambda_max: f64,
    n: usize,
    bands: Vec<BandIndex>,
    op: Operator,
    tightness_defect: f64,
}

impl FrameletSystem {
    /// Haar system on the normalized Laplacian of `g`.
    pub fn new(g: &Graph, cfg: &FrameletConfig) -> Result<Self> {
        Self::with_bank(g, cfg, Arc::new(HaarFilterBank))
    }

    pub fn with_bank(g: &Graph, cfg: &FrameletConfig, bank: Arc<dyn FilterBank>) -> Result<Self> {
        if cfg.levels < 1 {
            return Err(invalid("levels", "at least one level is required"));
        }
        if let Some(r) = cfg.dilation {
            if !r.is_finite() {
                return Err(invalid("dilation", "must be finite"));
            }
        }
        let laplacian = normalized_laplacian(g);
        let exact = match cfg.kind {
            TransformKind::Exact => true,
            TransformKind::Chebyshev => false,
            TransformKind::Auto => g.n() <= EXACT_PATH_CAP,
        };
        let bands = band_indices(bank.high_passes(), cfg.levels);
        let mut sys = Self {
            bank,
            levels: cfg.levels,
            dilation: 0.0,
            lambda_max: 0.0,
            n: g.n(),
            bands,
            op: Operator::Chebyshev {
                laplacian: SparseMatrix::identity(0),
                series: Vec::new(),
            },
            tightness_defect: f64::INFINITY,
        };
        if exact {
            let spectral = eigendecompose_small(&laplacian)?;
            sys.lambda_max = spectral.lambda_max().max(f64::MIN_POSITIVE);
            sys.dilation = cfg.dilation.unwrap_or_else(|| (sys.lambda_max / PI).log2());
            sys.op = Operator::Exact(spectral);
        } else {
            if cfg.chebyshev_order < 1 {
                return Err(invalid("chebyshev_order", "must be >= 1"));
            }
            let est = estimate_lambda_max(&laplacian, 2000, 1e-10);
            // Small margin above the Rayleigh quotient, which underestimates.
            let upper = if est.converged { (est.value * 1.001).min(2.0) } else { 2.0 };
            sys.lambda_max = upper;
            sys.dilation = cfg.dilation.unwrap_or_else(|| (upper / PI).log2());
            let series = sys
                .bands
                .iter()
                .map(|&b| chebyshev_fit(|x| sys.band_response(b, x), cfg.chebyshev_order, 0.0, upper))
                .collect::<Result<Vec<_>>>()?;
            sys.op = Operator::Chebyshev { laplacian, series };
        }
        sys.tightness_defect = sys.measure_tightness_defect();
        Ok(sys)
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn high_passes(&self) -> usize {
        self.bank.high_passes()
    }

    pub fn dilation(&self) -> f64 {
        self.dilation
    }

    /// Exact top eigenvalue, or the Chebyshev fitting interval's upper end.
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bands(&self) -> &[BandIndex] {
        &self.bands
    }

    pub fn filter_bank(&self) -> &dyn FilterBank {
        self.bank.as_ref()
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.op, Operator::Exact(_))
    }

    pub fn mode_name(&self) -> &'static str {
        if self.is_exact() {
            "exact"
        } else {
            "chebyshev"
        }
    }

    pub fn chebyshev_order(&self) -> Option<usize> {
        match &self.op {
            Operator::Chebyshev { series, .. } => series.first().map(ChebyshevSeries::order),
            Operator::Exact(_) => None,
        }
    }

    /// Spectral response of one band at eigenvalue `lambda`.
    pub fn band_response(&self, band: BandIndex, lambda: f64) -> f64 {
        let scaled = |level: usize| lambda / 2f64.powf(self.dilation + level as f64 - 1.0);
        let last = if band.is_low_pass() { band.l } else { band.l - 1 };
        let mut r: f64 = (1..=last).map(|i| self.bank.low_pass(scaled(i))).product();
        if !band.is_low_pass() {
            r *= self.bank.high_pass(band.k, scaled(band.l));
        }
        r
    }

    /// Largest deviation of `Σ_b p_b(λ)²` from one over the spectrum
    /// (exact) or over a 1000-point grid of the fitting interval (Chebyshev).
    pub fn tightness_defect(&self) -> f64 {
        self.tightness_defect
    }

    fn measure_tightness_defect(&self) -> f64 {
        match &self.op {
            Operator::Exact(sd) => sd
                .eigenvalues
                .iter()
                .map(|&lam| {
                    let s: f64 = self.bands.iter().map(|&b| self.band_response(b, lam).powi(2)).sum();
                    (s - 1.0).abs()
                })
                .fold(0.0, f64::max),
            Operator::Chebyshev { series, .. } => {
                let (lo, hi) = (series[0].lo, series[0].hi);
                (0..1000)
                    .map(|i| {
                        let x = lo + (hi - lo) * i as f64 / 999.0;
                        let s: f64 = series.iter().map(|p| p.eval(x).powi(2)).sum();
                        (s - 1.0).abs()
                    })
                    .fold(0.0, f64::max)
            }
        }
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        if rows != self.n {
            return Err(shape_err(format!("{} rows", self.n), format!("{rows} rows")));
        }
        Ok(())
    }

    /// `𝒲 X`: one coefficient matrix per band.
    pub fn decompose(&self, x: ArrayView2<f64>) -> Result<CoefficientStack> {
        self.check_rows(x.nrows())?;
        let bands = match &self.op {
            Operator::Exact(sd) => {
                let spectral = sd.eigenvectors.t().dot(&x);
                self.bands
                    .iter()
                    .map(|&b| {
                        let mut scaled = spectral.clone();
                        for (mut row, &lam) in scaled.rows_mut().into_iter().zip(sd.eigenvalues.iter()) {
                            row *= self.band_response(b, lam);
                        }
                        sd.eigenvectors.dot(&scaled)
                    })
                    .collect()
            }
            Operator::Chebyshev { laplacian, series } => chebyshev_decompose(laplacian, series, x),
        };
        Ok(CoefficientStack {
            indices: self.bands.clone(),
            bands,
        })
    }

    /// `𝒲ᵀ C`.
    pub fn reconstruct(&self, c: &CoefficientStack) -> Result<Array2<f64>> {
        if c.indices != self.bands {
            return Err(shape_err(
                format!("{} bands {:?}", self.bands.len(), self.bands),
                format!("{} bands {:?}", c.indices.len(), c.indices),
            ));
        }
        let d = c.bands.first().map_or(0, |b| b.ncols());
        for b in &c.bands {
            self.check_rows(b.nrows())?;
            if b.ncols() != d {
                return Err(shape_err(format!("{d} columns"), format!("{} columns", b.ncols())));
            }
        }
        Ok(match &self.op {
            Operator::Exact(sd) => {
                let mut spectral = Array2::<f64>::zeros((self.n, d));
                for (&b, coeff) in self.bands.iter().zip(&c.bands) {
                    let mut proj = sd.eigenvectors.t().dot(coeff);
                    for (mut row, &lam) in proj.rows_mut().into_iter().zip(sd.eigenvalues.iter()) {
                        row *= self.band_response(b, lam);
                    }
                    spectral += &proj;
                }
                sd.eigenvectors.dot(&spectral)
            }
            Operator::Chebyshev { laplacian, series } => {
                let mut out = Array2::<f64>::zeros((self.n, d));
                for (p, coeff) in series.iter().zip(&c.bands) {
                    out += &p.apply(laplacian, coeff.view());
                }
                out
            }
        })
    }

    /// Writes one CSV per band plus `manifest.txt`.
    pub fn save_stack(&self, dir: &Path, c: &CoefficientStack) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (b, m) in c.indices.iter().zip(&c.bands) {
            io::write_dense_csv(&dir.join(format!("{}.csv", b.file_stem())), m.view(), false)?;
        }
        let band_list: Vec<String> = c.indices.iter().map(BandIndex::file_stem).collect();
        let mut entries = vec![
            ("mode".to_string(), self.mode_name().to_string()),
            ("filter_bank".to_string(), self.bank.name().to_string()),
            ("levels".to_string(), self.levels.to_string()),
            ("high_passes".to_string(), self.high_passes().to_string()),
            ("dilation".to_string(), self.dilation.to_string()),
            ("lambda_max".to_string(), self.lambda_max.to_string()),
        ];
        if let Some(m) = self.chebyshev_order() {
            entries.push(("chebyshev_order".to_string(), m.to_string()));
        }
        entries.push(("bands".to_string(), band_list.join(",")));
        io::write_manifest(&dir.join("manifest.txt"), &entries)
    }
}

fn chebyshev_decompose(l: &SparseMatrix, series: &[ChebyshevSeries], x: ArrayView2<f64>) -> Vec<Array2<f64>> {
    // All bands share the recurrence T_k(L') X; accumulate every band on the fly.
    let (lo, hi) = (series[0].lo, series[0].hi);
    let scale = 2.0 / (hi - lo);
    let shift = -(hi + lo) / (hi - lo);
    let op = |v: &Array2<f64>| {
        let mut out = l.matmul(v.view());
        out *= scale;
        out.scaled_add(shift, v);
        out
    };
    let max_len = series.iter().map(|s| s.coeffs.len()).max().unwrap_or(1);
    let mut acc: Vec<Array2<f64>> = series.iter().map(|s| x.to_owned() * (0.5 * s.coeffs[0])).collect();
    if max_len == 1 {
        return acc;
    }
    let mut prev = x.to_owned();
    let mut cur = op(&prev);
    for k in 1..max_len {
        if k > 1 {
            let mut next = op(&cur);
            next *= 2.0;
            next -= &prev;
            prev = std::mem::replace(&mut cur, next);
        }
        for (a, s) in acc.iter_mut().zip(series) {
            if let Some(&c) = s.coeffs.get(k) {
                a.scaled_add(c, &cur);
            }
        }
    }
    acc
}

/// Framelet coefficients: one `n × d` matrix per band in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientStack {
    indices: Vec<BandIndex>,
    bands: Vec<Array2<f64>>,
}

impl CoefficientStack {
    pub fn new(indices: Vec<BandIndex>, bands: Vec<Array2<f64>>) -> Result<Self> {
        if indices.len() != bands.len() {
            return Err(shape_err(format!("{} bands", indices.len()), format!("{} matrices", bands.len())));
        }
        if let Some(first) = bands.first() {
            if let Some(bad) = bands.iter().find(|b| b.dim() != first.dim()) {
                return Err(shape_err(format!("{:?}", first.dim()), format!("{:?}", bad.dim())));
            }
        }
        Ok(Self { indices, bands })
    }

    pub fn zeros(indices: &[BandIndex], shape: (usize, usize)) -> Self {
        Self {
            indices: indices.to_vec(),
            bands: indices.iter().map(|_| Array2::zeros(shape)).collect(),
        }
    }

    pub fn indices(&self) -> &[BandIndex] {
        &self.indices
    }

    pub fn bands(&self) -> &[Array2<f64>] {
        &self.bands
    }

    pub fn bands_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.bands
    }

    pub fn band(&self, idx: BandIndex) -> Option<&Array2<f64>> {
        self.indices.iter().position(|&b| b == idx).map(|i| &self.bands[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (BandIndex, &Array2<f64>)> {
        self.indices.iter().copied().zip(self.bands.iter())
    }

    pub fn shape(&self) -> (usize, usize) {
        self.bands.first().map_or((0, 0), |b| b.dim())
    }

    /// `a · self + b · other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        debug_assert_eq!(self.indices, other.indices);
        let bands = self
            .bands
            .iter()
            .zip(&other.bands)
            .map(|(x, y)| Zip::from(x).and(y).map_collect(|&x, &y| a * x + b * y))
            .collect();
        Self {
            indices: self.indices.clone(),
            bands,
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            indices: self.indices.clone(),
            bands: self.bands.iter().map(|m| m * a).collect(),
        }
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.bands.iter().flatten().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.bands.iter().flatten().all(|v| v.is_finite())
    }

    /// Reads a stack written by [`FrameletSystem::save_stack`].
    pub fn load(dir: &Path) -> Result<(Self, Vec<(String, String)>)> {
        let manifest = io::read_manifest(&dir.join("manifest.txt"))?;
        let bands_entry = manifest
            .iter()
            .find(|(k, _)| k == "bands")
            .map(|(_, v)| v.clone())
            .ok_or_else(|| invalid("manifest", "missing `bands` entry"))?;
        let mut indices = Vec::new();
        let mut bands = Vec::new();
        for stem in bands_entry.split(',') {
            indices.push(parse_band_stem(stem)?);
            bands.push(io::read_dense_csv(&dir.join(format!("{stem}.csv")), false)?);
        }
        Ok((Self::new(indices, bands)?, manifest))
    }
}

fn parse_band_stem(stem: &str) -> Result<BandIndex> {
    let bad = || invalid("manifest", format!("bad band name `{stem}`"));
    let rest = stem.strip_prefix("band_k").ok_or_else(bad)?;
    let (k, l) = rest.split_once("_l").ok_or_else(bad)?;
    Ok(BandIndex {
        k: k.parse().map_err(|_| bad())?,
        l: l.parse().map_err(|_| bad())?,
    })
}

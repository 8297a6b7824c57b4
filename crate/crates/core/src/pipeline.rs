//! End-to-end runs: load → corrupt → mask → denoise → (classify) → evaluate.
//!
//! Every stage writes its artifacts into the output directory as it
//! finishes. If a stage fails, the error is returned tagged with the stage
//! name and a `FAILED` file describing it is left next to the partial
//! outputs.
//!
//! Output files:
//!
//! | file | content |
//! |---|---|
//! | `observed.csv` | features handed to the solver |
//! | `mask_true.csv` | ground-truth mask triplets, when known |
//! | `mask.csv` | mask used by the solver (triplets) |
//! | `gae_loss.csv`, `gae_model/` | autoencoder loss curve and weights (`gae` mode) |
//! | `recovered.csv` | recovered features |
//! | `admm.csv` | per-iteration residual and objective |
//! | `report.txt`, `report.csv` | evaluation |
//! | `clean.pgm`, `observed.pgm`, `recovered.pgm` | image runs only |
//!
//! `report.csv` leaves out wall time so that repeated runs with the same
//! configuration produce byte-identical CSV files.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};

use crate::admm::{admm_solve, Diagnostics, SolverConfig};
use crate::corrupt::{add_gaussian_noise, add_local_patch_noise, inject_attributes, sample_nodes, CorruptionRecord};
use crate::error::{invalid, Error, Result};
use crate::graph::{gcn_propagation_matrix, image_to_patch_graph, patch_graph_to_image, Graph, PatchLayout, SelfLoops};
use crate::io;
use crate::mask::{build_mask, mask_metrics, MaskMatrix, MaskReport, DEFAULT_TAU};
use crate::metrics::{format_db, local_psnr, psnr, region_mse, Region};
use crate::neural::{accuracy, classify, gae_forward, train_classifier, train_gae, Layers, TrainConfig};

/// Environment variable holding the default output directory.
pub const OUTPUT_DIR_ENV: &str = "GRAPHMEND_OUT";
pub const DEFAULT_OUTPUT_DIR: &str = "graphmend-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskMode {
    /// Trust every entry.
    Ones,
    /// Threshold autoencoder reconstruction error.
    #[default]
    Gae,
    /// Use the ground-truth mask from the generator or a mask file.
    True,
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ones" => Ok(Self::Ones),
            "gae" => Ok(Self::Gae),
            "true" => Ok(Self::True),
            _ => Err(invalid("mask_mode", format!("expected ones, gae or true, got `{s}`"))),
        }
    }
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ones => "ones",
            Self::Gae => "gae",
            Self::True => "true",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GeneratorKind {
    /// Features are used as observed.
    #[default]
    None,
    Injection,
    Gaussian,
    LocalNoise,
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "injection" => Ok(Self::Injection),
            "gaussian" => Ok(Self::Gaussian),
            "local-noise" => Ok(Self::LocalNoise),
            _ => Err(invalid(
                "generator",
                format!("expected none, injection, gaussian or local-noise, got `{s}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    /// Injection targets.
    pub targets: usize,
    /// Injection candidate pool size `k`.
    pub candidates: usize,
    /// Noise standard deviation (gaussian, local-noise).
    pub sigma: f64,
    /// Rows hit by local noise.
    pub noisy_nodes: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::None,
            targets: 20,
            candidates: 100,
            sigma: 1.0,
            noisy_nodes: 9,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    /// Corrupts `x`; `None` for [`GeneratorKind::None`].
    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Option<CorruptionRecord>> {
        Ok(Some(match self.kind {
            GeneratorKind::None => return Ok(None),
            GeneratorKind::Injection => inject_attributes(x, self.targets, self.candidates, self.seed)?,
            GeneratorKind::Gaussian => {
                let corrupted = add_gaussian_noise(x, self.sigma, self.seed)?;
                CorruptionRecord {
                    mask: MaskMatrix::from_changes(x, corrupted.view()),
                    corrupted,
                    seed: self.seed,
                    params: vec![
                        ("generator".into(), "gaussian".into()),
                        ("sigma".into(), self.sigma.to_string()),
                    ],
                }
            }
            GeneratorKind::LocalNoise => {
                let nodes = sample_nodes(x.nrows(), self.noisy_nodes, self.seed)?;
                // Separate stream for the noise values.
                add_local_patch_noise(x, &nodes, self.sigma, self.seed.wrapping_add(1))?
            }
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    /// Edge list plus dense feature CSV.
    Graph { graph: PathBuf, features: PathBuf },
    /// Grayscale image split into `patch × patch` nodes; the built-in
    /// synthetic 64×64 image when `path` is `None`.
    Image { path: Option<PathBuf>, patch: usize },
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub input: Input,
    /// Clean features for evaluation when no generator runs. Defaults to the input.
    pub reference: Option<PathBuf>,
    /// Ground-truth mask triplets when no generator runs.
    pub true_mask: Option<PathBuf>,
    /// One integer label per node, enabling the classifier stage.
    pub labels: Option<PathBuf>,
    /// Lines `node,train` or `node,test`.
    pub split: Option<PathBuf>,
    pub classifier: TrainConfig,
    pub header: bool,
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub solver: SolverConfig,
    pub mask_mode: MaskMode,
    pub tau: f64,
    pub binarize: bool,
    /// PSNR peak; 1 for images, the clean value range otherwise.
    pub peak: Option<f64>,
    pub output_dir: PathBuf,
}

impl PipelineConfig {
    pub fn new(input: Input, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            input,
            reference: None,
            true_mask: None,
            labels: None,
            split: None,
            classifier: TrainConfig {
                epochs: 200,
                hidden: 16,
                ..TrainConfig::default()
            },
            header: false,
            generator: GeneratorConfig::default(),
            train: TrainConfig::default(),
            solver: SolverConfig::default(),
            mask_mode: MaskMode::default(),
            tau: DEFAULT_TAU,
            binarize: true,
            peak: None,
            output_dir: output_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(invalid("tau", format!("must lie in (0, 1), got {}", self.tau)));
        }
        if let Some(p) = self.peak {
            if !(p > 0.0 && p.is_finite()) {
                return Err(invalid("peak", format!("must be > 0, got {p}")));
            }
        }
        self.train.validate()?;
        self.solver.validate()?;
        if self.labels.is_some() {
            self.classifier.validate()?;
        }
        if self.mask_mode == MaskMode::True && self.generator.kind == GeneratorKind::None && self.true_mask.is_none() {
            return Err(invalid(
                "mask_mode",
                "`true` needs a ground-truth mask file or a corruption generator",
            ));
        }
        if self.labels.is_some() != self.split.is_some() {
            return Err(invalid("labels", "labels and split must be given together"));
        }
        let mut paths: Vec<&Path> = vec![];
        match &self.input {
            Input::Graph { graph, features } => paths.extend([graph.as_path(), features.as_path()]),
            Input::Image { path, patch } => {
                if *patch == 0 {
                    return Err(invalid("patch", "must be positive"));
                }
                paths.extend(path.as_deref());
            }
        }
        paths.extend(self.reference.as_deref());
        paths.extend(self.true_mask.as_deref());
        paths.extend(self.labels.as_deref());
        paths.extend(self.split.as_deref());
        if let Some(missing) = paths.into_iter().find(|p| !p.exists()) {
            return Err(invalid("path", format!("{} does not exist", missing.display())));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(Error),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Error,
    },
}

trait Stage<T> {
    fn stage(self, name: &'static str) -> std::result::Result<T, PipelineError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, PipelineError> {
        self.map_err(|source| PipelineError::Stage { stage, source })
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub mask_mode: String,
    pub nodes: usize,
    pub features: usize,
    pub peak: f64,
    /// PSNR of observed and recovered features against the clean reference.
    pub observed_psnr: f64,
    pub global_psnr: f64,
    /// PSNR over corrupted rows; `None` without a ground-truth mask.
    pub observed_local_psnr: Option<f64>,
    pub local_psnr: Option<f64>,
    pub observed_masked_mse: Option<f64>,
    pub masked_mse: Option<f64>,
    pub unmasked_mse: Option<f64>,
    /// Quality of the mask the solver used; omitted for `ones` or without ground truth.
    pub mask_report: Option<MaskReport>,
    pub gae_final_loss: Option<f64>,
    pub solver: Diagnostics,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub wall_secs: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        v.to_string()
    }
}

impl EvalReport {
    /// `(metric, value)` rows shared by the text and CSV reports, without wall time.
    pub fn rows(&self) -> Vec<(&'static str, String)> {
        let mr = self.mask_report.as_ref();
        vec![
            ("mask_mode", self.mask_mode.clone()),
            ("nodes", self.nodes.to_string()),
            ("features", self.features.to_string()),
            ("peak", self.peak.to_string()),
            ("observed_psnr", db(self.observed_psnr)),
            ("global_psnr", db(self.global_psnr)),
            ("observed_local_psnr", self.observed_local_psnr.map(db).unwrap_or_default()),
            ("local_psnr", self.local_psnr.map(db).unwrap_or_default()),
            ("observed_masked_mse", opt(self.observed_masked_mse)),
            ("masked_mse", opt(self.masked_mse)),
            ("unmasked_mse", opt(self.unmasked_mse)),
            ("mask_true_positives", mr.map(|r| r.true_positives.to_string()).unwrap_or_default()),
            ("mask_false_negatives", mr.map(|r| r.false_negatives.to_string()).unwrap_or_default()),
            ("mask_false_positives", mr.map(|r| r.false_positives.to_string()).unwrap_or_default()),
            ("mask_recall", opt(mr.and_then(|r| r.recall))),
            ("mask_sparsity", opt(mr.map(|r| r.sparsity))),
            ("gae_final_loss", opt(self.gae_final_loss)),
            ("admm_iterations", self.solver.iterations().to_string()),
            ("admm_converged", self.solver.converged.to_string()),
            ("admm_final_residual", opt(self.solver.residuals.last().copied())),
            ("admm_initial_objective", self.solver.initial_objective.to_string()),
            ("admm_final_objective", self.solver.final_objective().to_string()),
            ("train_accuracy", opt(self.train_accuracy)),
            ("test_accuracy", opt(self.test_accuracy)),
        ]
    }

    /// CSV with header `metric,value`; empty values are unavailable metrics.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["metric", "value"])?;
        for (k, v) in self.rows() {
            w.write_record([k, v.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let line = |s: &mut String, k: &str, v: String| s.push_str(&format!("{k:<24} {v}\n"));
        line(&mut s, "mask mode", self.mask_mode.clone());
        line(&mut s, "graph", format!("{} nodes x {} features", self.nodes, self.features));
        line(
            &mut s,
            "global PSNR (dB)",
            format!("{} -> {}", format_db(self.observed_psnr), format_db(self.global_psnr)),
        );
        if let (Some(a), Some(b)) = (self.observed_local_psnr, self.local_psnr) {
            line(&mut s, "local PSNR (dB)", format!("{} -> {}", format_db(a), format_db(b)));
        }
        if let (Some(a), Some(b)) = (self.observed_masked_mse, self.masked_mse) {
            line(&mut s, "masked MSE", format!("{a:.6e} -> {b:.6e}"));
        }
        if let Some(u) = self.unmasked_mse {
            line(&mut s, "unmasked MSE", format!("{u:.6e}"));
        }
        if let Some(r) = &self.mask_report {
            let recall = r.recall.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
            line(
                &mut s,
                "mask",
                format!(
                    "recall {recall}, TP {}, FN {}, FP {}, flagged {:.4}",
                    r.true_positives, r.false_negatives, r.false_positives, r.sparsity
                ),
            );
        }
        if let Some(l) = self.gae_final_loss {
            line(&mut s, "autoencoder loss", format!("{l:.6e}"));
        }
        line(
            &mut s,
            "solver",
            format!(
                "{} iterations, converged {}, residual {}, objective {:.6e} -> {:.6e}",
                self.solver.iterations(),
                self.solver.converged,
                self.solver.residuals.last().map(|r| format!("{r:.3e}")).unwrap_or_else(|| "n/a".into()),
                self.solver.initial_objective,
                self.solver.final_objective()
            ),
        );
        if let (Some(a), Some(b)) = (self.train_accuracy, self.test_accuracy) {
            line(&mut s, "classifier accuracy", format!("train {a:.4}, test {b:.4}"));
        }
        line(&mut s, "wall time (s)", format!("{:.3}", self.wall_secs));
        s
    }
}

/// Smooth gradient plus a sinusoidal texture, values in `[0, 1]`.
pub fn synthetic_image(size: usize) -> Array2<f64> {
    let scale = size.saturating_sub(1).max(1) as f64;
    Array2::from_shape_fn((size, size), |(r, c)| {
        let (y, x) = (r as f64 / scale, c as f64 / scale);
        0.15 + 0.3 * (x + y) + 0.1 * (12.0 * x).sin() * (9.0 * y).cos()
    })
}

/// One non-negative integer label per line.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let m = io::read_dense_csv(path, false)?;
    if m.ncols() != 1 {
        return Err(invalid("labels", "expected a single column"));
    }
    m.iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(invalid("labels", format!("`{v}` is not a class index")))
            }
        })
        .collect()
}

/// Lines `node,train` or `node,test`; returns `(train, test)` node lists.
pub fn read_split(path: &Path) -> Result<(Vec<usize>, Vec<usize>)> {
    let text = fs::read_to_string(path)?;
    let (mut train, mut test) = (vec![], vec![]);
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| Error::Parse {
            source_name: path.display().to_string(),
            line: i + 1,
            reason: reason.to_string(),
        };
        let (node, part) = line.split_once(',').ok_or_else(|| bad("expected `node,train` or `node,test`"))?;
        let node: usize = node.trim().parse().map_err(|_| bad("node is not an index"))?;
        match part.trim() {
            "train" => train.push(node),
            "test" => test.push(node),
            _ => return Err(bad("split must be `train` or `test`")),
        }
    }
    Ok((train, test))
}

struct Loaded {
    graph: Graph,
    features: Array2<f64>,
    layout: Option<PatchLayout>,
}

fn load(cfg: &PipelineConfig) -> Result<Loaded> {
    match &cfg.input {
        Input::Graph { graph, features } => {
            let features = io::read_dense_csv(features, cfg.header)?;
            let (edges, _) = io::read_edge_list(graph)?;
            let graph = Graph::from_edges(features.nrows(), &edges, SelfLoops::Reject)?;
            Ok(Loaded {
                graph,
                features,
                layout: None,
            })
        }
        Input::Image { path, patch } => {
            let img = match path {
                Some(p) => io::read_pgm(p)? / 255.0,
                None => synthetic_image(64),
            };
            let (graph, features, layout) = image_to_patch_graph(img.view(), *patch)?;
            Ok(Loaded {
                graph,
                features: features.into_values(),
                layout: Some(layout),
            })
        }
    }
}

fn write_image(path: &Path, features: ArrayView2<f64>, layout: PatchLayout) -> Result<()> {
    let img = patch_graph_to_image(features, layout)?;
    io::write_pgm(path, (img * 255.0).view())
}

fn value_range(x: ArrayView2<f64>) -> f64 {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi > lo {
        hi - lo
    } else {
        1.0
    }
}

/// Runs every stage and writes the artifacts listed in the module docs.
pub fn run_pipeline(cfg: &PipelineConfig) -> std::result::Result<EvalReport, PipelineError> {
    cfg.validate().map_err(PipelineError::Config)?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| PipelineError::Stage {
        stage: "setup",
        source: e.into(),
    })?;
    let failed = out.join("FAILED");
    let result = run_stages(cfg);
    match &result {
        Ok(_) => {
            if failed.exists() {
                let _ = fs::remove_file(&failed);
            }
        }
        Err(e) => {
            let stage = match e {
                PipelineError::Stage { stage, .. } => stage,
                PipelineError::Config(_) => "config",
            };
            // Best effort: the original error matters more than this marker.
            let _ = fs::write(&failed, format!("stage={stage}\nerror={e}\n"));
        }
    }
    result
}

fn run_stages(cfg: &PipelineConfig) -> std::result::Result<EvalReport, PipelineError> {
    let start = Instant::now();
    let out = &cfg.output_dir;
    let Loaded {
        graph,
        features,
        layout,
    } = load(cfg).stage("load")?;
    let (n, d) = features.dim();
    log::info!("loaded {n} nodes x {d} features, {} edges", graph.edges().len());

    let (clean, observed, truth) = (|| -> Result<_> {
        match cfg.generator.apply(features.view())? {
            Some(rec) => {
                rec.save(&out.join("corruption"), cfg.header)?;
                Ok((features, rec.corrupted, Some(rec.mask)))
            }
            None => {
                let clean = match &cfg.reference {
                    Some(p) => io::read_dense_csv(p, cfg.header)?,
                    None => features.clone(),
                };
                if clean.dim() != features.dim() {
                    return Err(invalid("reference", "shape differs from the features"));
                }
                let truth = cfg.true_mask.as_deref().map(MaskMatrix::read_triplets).transpose()?;
                if truth.as_ref().is_some_and(|t| t.shape() != (n, d)) {
                    return Err(invalid("true_mask", "shape differs from the features"));
                }
                Ok((clean, features, truth))
            }
        }
    })()
    .stage("corrupt")?;
    io::write_dense_csv(&out.join("observed.csv"), observed.view(), cfg.header).stage("corrupt")?;
    if let Some(t) = &truth {
        t.write_triplets(&out.join("mask_true.csv")).stage("corrupt")?;
    }

    let mut gae_final_loss = None;
    let mask = (|| -> Result<MaskMatrix> {
        Ok(match cfg.mask_mode {
            MaskMode::Ones => MaskMatrix::ones(n, d),
            MaskMode::True => truth.clone().ok_or_else(|| invalid("mask_mode", "no ground-truth mask"))?,
            MaskMode::Gae => {
                let (model, log) = train_gae(&graph, observed.view(), &cfg.train)?;
                log.write_csv(&out.join("gae_loss.csv"))?;
                model.save(&out.join("gae_model"))?;
                gae_final_loss = Some(log.final_loss);
                let recon = gae_forward(&model, &gcn_propagation_matrix(&graph), observed.view())?;
                build_mask(observed.view(), recon.values().view(), cfg.tau, cfg.binarize)?
            }
        })
    })()
    .stage("mask")?;
    mask.write_triplets(&out.join("mask.csv")).stage("mask")?;
    log::info!("mask flags {} of {} entries", mask.flagged(), n * d);

    let (recovered, solver) = admm_solve(observed.view(), mask.view(), &graph, &cfg.solver).stage("denoise")?;
    io::write_dense_csv(&out.join("recovered.csv"), recovered.view(), cfg.header).stage("denoise")?;
    solver.write_csv(&out.join("admm.csv")).stage("denoise")?;

    let (mut train_accuracy, mut test_accuracy) = (None, None);
    if let (Some(labels), Some(split)) = (&cfg.labels, &cfg.split) {
        (|| -> Result<()> {
            let labels = read_labels(labels)?;
            let (train, test) = read_split(split)?;
            let classes = labels.iter().max().map_or(1, |m| m + 1);
            let (model, _) = train_classifier(&graph, recovered.view(), &labels, &train, classes, &cfg.classifier)?;
            let pred = classify(&model, &graph, recovered.view())?;
            train_accuracy = accuracy(&pred, &labels, &train);
            test_accuracy = accuracy(&pred, &labels, &test);
            Ok(())
        })()
        .stage("classify")?;
    }

    let report = (|| -> Result<EvalReport> {
        let peak = cfg
            .peak
            .unwrap_or_else(|| if layout.is_some() { 1.0 } else { value_range(clean.view()) });
        let tv = truth.as_ref().map(|t| t.values().view());
        let local = |u: ArrayView2<f64>| tv.map(|t| local_psnr(clean.view(), u, t, peak)).transpose();
        let region = |u: ArrayView2<f64>, r| tv.map(|t| region_mse(clean.view(), u, t, r)).transpose();
        let mask_report = match (cfg.mask_mode, &truth) {
            (MaskMode::Ones, _) | (_, None) => None,
            (_, Some(t)) if mask.is_binary() => Some(mask_metrics(&mask, t)?),
            _ => None,
        };
        if let Some(layout) = layout {
            write_image(&out.join("clean.pgm"), clean.view(), layout)?;
            write_image(&out.join("observed.pgm"), observed.view(), layout)?;
            write_image(&out.join("recovered.pgm"), recovered.view(), layout)?;
        }
        Ok(EvalReport {
            mask_mode: cfg.mask_mode.to_string(),
            nodes: n,
            features: d,
            peak,
            observed_psnr: psnr(clean.view(), observed.view(), peak)?,
            global_psnr: psnr(clean.view(), recovered.view(), peak)?,
            observed_local_psnr: local(observed.view())?.flatten(),
            local_psnr: local(recovered.view())?.flatten(),
            observed_masked_mse: region(observed.view(), Region::Masked)?.flatten(),
            masked_mse: region(recovered.view(), Region::Masked)?.flatten(),
            unmasked_mse: region(recovered.view(), Region::Unmasked)?.flatten(),
            mask_report,
            gae_final_loss,
            solver,
            train_accuracy,
            test_accuracy,
            wall_secs: start.elapsed().as_secs_f64(),
        })
    })()
    .stage("evaluate")?;
    report.write_csv(&out.join("report.csv")).stage("evaluate")?;
    fs::write(out.join("report.txt"), report.to_text())
        .map_err(Error::from)
        .stage("evaluate")?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_problem(dir: &Path) -> (PathBuf, PathBuf) {
        let n = 12;
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).chain([(0, 6), (3, 9)]).collect();
        let x = Array2::from_shape_fn((n, 3), |(i, j)| ((i as f64) * 0.5).cos() + j as f64);
        let g = dir.join("graph.csv");
        let f = dir.join("features.csv");
        io::write_edge_list(&g, &edges).unwrap();
        io::write_dense_csv(&f, x.view(), false).unwrap();
        (g, f)
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("true".parse::<MaskMode>().unwrap(), MaskMode::True);
        assert!("all".parse::<MaskMode>().is_err());
        assert_eq!("local-noise".parse::<GeneratorKind>().unwrap(), GeneratorKind::LocalNoise);
    }

    #[test]
    fn synthetic_image_range() {
        let img = synthetic_image(64);
        assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn true_mode_needs_ground_truth() {
        let dir = tempfile::tempdir().unwrap();
        let (g, f) = small_problem(dir.path());
        let mut cfg = PipelineConfig::new(Input::Graph { graph: g, features: f }, dir.path().join("out"));
        cfg.mask_mode = MaskMode::True;
        assert!(matches!(run_pipeline(&cfg), Err(PipelineError::Config(_))));
        cfg.generator.kind = GeneratorKind::Injection;
        cfg.generator.targets = 2;
        cfg.generator.candidates = 5;
        let report = run_pipeline(&cfg).unwrap();
        assert_eq!(report.mask_report.unwrap().recall, Some(1.0));
    }

    #[test]
    fn ones_mode_omits_mask_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let (g, f) = small_problem(dir.path());
        let mut cfg = PipelineConfig::new(Input::Graph { graph: g, features: f }, dir.path().join("out"));
        cfg.mask_mode = MaskMode::Ones;
        cfg.generator.kind = GeneratorKind::Injection;
        cfg.generator.targets = 2;
        cfg.generator.candidates = 5;
        let report = run_pipeline(&cfg).unwrap();
        assert!(report.mask_report.is_none());
        let m = MaskMatrix::read_triplets(&dir.path().join("out/mask.csv")).unwrap();
        assert_eq!(m, MaskMatrix::ones(12, 3));
    }

    #[test]
    fn failure_leaves_marker() {
        let dir = tempfile::tempdir().unwrap();
        let (g, _) = small_problem(dir.path());
        let f = dir.path().join("bad.csv");
        fs::write(&f, "1,2\n3\n").unwrap();
        let cfg = PipelineConfig::new(Input::Graph { graph: g, features: f }, dir.path().join("out"));
        match run_pipeline(&cfg) {
            Err(PipelineError::Stage { stage, .. }) => assert_eq!(stage, "load"),
            other => panic!("unexpected {other:?}"),
        }
        let marker = fs::read_to_string(dir.path().join("out/FAILED")).unwrap();
        assert!(marker.starts_with("stage=load"));
    }

    #[test]
    fn split_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("split.csv");
        fs::write(&s, "# node,part\n0,train\n2,test\n1, train\n").unwrap();
        assert_eq!(read_split(&s).unwrap(), (vec![0, 1], vec![2]));
        fs::write(&s, "0,valid\n").unwrap();
        assert!(read_split(&s).is_err());
        let l = dir.path().join("labels.csv");
        fs::write(&l, "0\n2\n1\n").unwrap();
        assert_eq!(read_labels(&l).unwrap(), vec![0, 2, 1]);
        fs::write(&l, "0\n1.5\n").unwrap();
        assert!(read_labels(&l).is_err());
    }
}

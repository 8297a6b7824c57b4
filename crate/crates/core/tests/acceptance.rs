//! Acceptance suite. Each test checks one criterion at its stated tolerance
//! and writes a single `PASS`/`FAIL` line to stdout, bypassing the test
//! harness capture so the lines show up in a plain `cargo test` run.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use graphmend::admm::{admm_solve, admm_solve_with, admm_step, init_state, SolverConfig, StepContext};
use graphmend::corrupt::inject_attributes;
use graphmend::framelet::{framelet_weights, FrameletConfig, FrameletSystem, TransformKind};
use graphmend::graph::{eigendecompose_small, gcn_propagation_matrix, normalized_laplacian, Graph, SelfLoops, SparseMatrix};
use graphmend::mask::{anomaly_scores, mask_from_scores, mask_metrics, MaskMatrix};
use graphmend::metrics::{region_mean_change, region_mse, Region};
use graphmend::neural::{
    classifier_loss_and_grad, gae_forward, gae_loss_and_grad, train_gae, GcnAutoencoder, GcnClassifier, Layers,
    LossMode, TrainConfig,
};
use graphmend::pipeline::{run_pipeline, GeneratorConfig, GeneratorKind, Input, MaskMode, PipelineConfig};
use graphmend::prox::{scalar_prox, solve_u_subproblem, solve_z_subproblem, Fidelity, GraphNormWeights, Sparsity};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "acceptance {id:>2} {status} {name}: {detail}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random spanning tree plus `extra` random chords; always connected.
fn random_connected_graph(n: usize, extra: usize, seed: u64) -> Graph {
    let mut r = rng(seed);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (r.random_range(0..i), i)).collect();
    for _ in 0..extra {
        let (a, b) = (r.random_range(0..n), r.random_range(0..n));
        if a != b {
            edges.push((a, b));
        }
    }
    Graph::from_edges(n, &edges, SelfLoops::Reject).unwrap()
}

fn gaussian(shape: (usize, usize), seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_simple_fn(shape, || StandardNormal.sample(&mut r))
}

fn fro(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn rel_diff(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    fro((&a - &b).view()) / fro(b).max(f64::MIN_POSITIVE)
}

fn exact() -> FrameletConfig {
    FrameletConfig {
        kind: TransformKind::Exact,
        ..FrameletConfig::default()
    }
}

#[test]
fn criterion_01_tight_frame_round_trip() {
    let start = Instant::now();
    let (mut worst_rt, mut worst_energy) = (0.0f64, 0.0f64);
    for (gi, &n) in [5usize, 20, 50, 100].iter().enumerate() {
        let g = random_connected_graph(n, n, 100 + gi as u64);
        let x = gaussian((n, 8), 200 + gi as u64);
        for levels in 1..=3 {
            let sys = FrameletSystem::new(&g, &FrameletConfig { levels, ..exact() }).unwrap();
            let c = sys.decompose(x.view()).unwrap();
            let back = sys.reconstruct(&c).unwrap();
            worst_rt = worst_rt.max(rel_diff(back.view(), x.view()));
            let energy = c.frobenius_norm_sq();
            let norm = fro(x.view()).powi(2);
            worst_energy = worst_energy.max((energy - norm).abs() / norm);
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_rt < 1e-8 && worst_energy < 1e-8 && elapsed < Duration::from_secs(5);
    report(
        1,
        "tight-frame round trip",
        pass,
        &format!("max reconstruction error {worst_rt:.2e}, max energy gap {worst_energy:.2e}, {elapsed:.2?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_02_chebyshev_fidelity() {
    let start = Instant::now();
    let g = random_connected_graph(50, 60, 7);
    let x = gaussian((50, 8), 8);
    let mut curve = vec![];
    for m in [5usize, 10, 20, 50] {
        let cfg = FrameletConfig {
            kind: TransformKind::Chebyshev,
            chebyshev_order: m,
            ..FrameletConfig::default()
        };
        let cheb = FrameletSystem::new(&g, &cfg).unwrap();
        // Same dilation on both paths, so only the polynomial fit differs.
        let oracle = FrameletSystem::new(
            &g,
            &FrameletConfig {
                dilation: Some(cheb.dilation()),
                ..exact()
            },
        )
        .unwrap();
        let approx = cheb.decompose(x.view()).unwrap();
        let truth = oracle.decompose(x.view()).unwrap();
        let err = approx
            .bands()
            .iter()
            .zip(truth.bands())
            .map(|(a, t)| rel_diff(a.view(), t.view()))
            .fold(0.0, f64::max);
        curve.push((m, err));
    }
    let elapsed = start.elapsed();
    // Once the fit reaches double precision the error is rounding noise;
    // differences below this floor count as ties.
    const ROUNDING_FLOOR: f64 = 1e-13;
    let monotone = curve.windows(2).all(|w| w[1].1 <= w[0].1 + ROUNDING_FLOOR);
    let at_default = curve.last().unwrap().1;
    let pass = monotone && at_default < 1e-3 && elapsed < Duration::from_secs(10);
    let shown: Vec<String> = curve.iter().map(|(m, e)| format!("m={m}: {e:.2e}")).collect();
    report(2, "Chebyshev fidelity", pass, &format!("{}, {elapsed:.2?}", shown.join(", ")));
    assert!(pass);
}

fn scalar_objective(z: f64, c: f64, sparsity: Sparsity, nu: f64, w: f64, gamma: f64) -> f64 {
    let penalty = match sparsity {
        Sparsity::L1 => z.abs(),
        Sparsity::L0 => f64::from(u8::from(z != 0.0)),
    };
    nu * w * penalty + 0.5 * gamma * (z - c) * (z - c)
}

#[test]
fn criterion_03_prox_beats_brute_force() {
    let start = Instant::now();
    let mut r = rng(3);
    let mut worst = f64::NEG_INFINITY;
    let mut instances = 0;
    for sparsity in [Sparsity::L1, Sparsity::L0] {
        for nu in [0.5, 2.0] {
            for w in [1.0, 4.0] {
                for gamma in [0.5, 2.0] {
                    for _ in 0..200 {
                        let c: f64 = r.random_range(-10.0..10.0);
                        let z = scalar_prox(c, sparsity, nu, w, gamma);
                        let f = scalar_objective(z, c, sparsity, nu, w, gamma);
                        // 10⁴ evenly spaced points on [-10, 10].
                        let best = (0..10_000)
                            .map(|i| -10.0 + 20.0 * i as f64 / 9_999.0)
                            .map(|t| scalar_objective(t, c, sparsity, nu, w, gamma))
                            .fold(f64::INFINITY, f64::min);
                        worst = worst.max(f - best);
                        instances += 1;
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-9 && elapsed < Duration::from_secs(5);
    report(
        3,
        "prox vs brute-force grid",
        pass,
        &format!("{instances} instances, max(closed - grid) {worst:.2e}, {elapsed:.2?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_04_trivial_fixed_point() {
    let g = random_connected_graph(30, 30, 4);
    let x = gaussian((30, 8), 5);
    let cfg = SolverConfig {
        nu0: 0.0,
        transform: exact(),
        ..SolverConfig::default()
    };
    let start = Instant::now();
    let (u, diag) = admm_solve(x.view(), Array2::ones(x.dim()).view(), &g, &cfg).unwrap();
    let elapsed = start.elapsed();
    let err = rel_diff(u.view(), x.view());
    let pass = err < 1e-6 && diag.iterations() <= 15 && elapsed < Duration::from_secs(1);
    report(
        4,
        "ADMM trivial fixed point",
        pass,
        &format!("relative error {err:.2e} after {} iterations, {elapsed:.2?}", diag.iterations()),
    );
    assert!(pass);
}

/// Textbook scaled ADMM for `min f(U) + g(Z)` s.t. `𝒲U = Z`:
/// `Z ← prox(𝒲U + Y/γ)`, `U ← argmin f + (γ/2)‖𝒲U - Z + Y/γ‖²`,
/// `Y ← Y + γ(𝒲U - Z)`.
#[test]
fn criterion_05_inertial_matches_vanilla() {
    let g = random_connected_graph(10, 8, 5);
    let x = gaussian((10, 3), 6);
    let mut mask = Array2::ones(x.dim());
    mask[[2, 1]] = 0.0;
    mask[[7, 0]] = 0.0;
    let sys = FrameletSystem::new(&g, &exact()).unwrap();
    let weights = GraphNormWeights::from_graph(&g);
    let mut worst = 0.0f64;
    for (sparsity, fidelity) in [
        (Sparsity::L1, Fidelity::L2),
        (Sparsity::L0, Fidelity::L2),
        (Sparsity::L1, Fidelity::L1),
    ] {
        let cfg = SolverConfig {
            sparsity,
            fidelity,
            nu0: 0.5,
            gamma: 1.3,
            inertia: 0.0,
            transform: exact(),
            ..SolverConfig::default()
        };
        let prox = cfg.prox_config(framelet_weights(cfg.nu0, sys.high_passes(), sys.levels()).unwrap());
        let ctx = StepContext {
            x: x.view(),
            mask: mask.view(),
            sys: &sys,
            prox: &prox,
            weights: &weights,
            inertia: 0.0,
        };
        let gamma = cfg.gamma;
        let mut state = init_state(x.view(), &sys, gamma).unwrap();
        let mut u = x.clone();
        let mut y = sys.decompose(x.view()).unwrap().scale(0.0);
        for _ in 0..15 {
            state = admm_step(&state, &ctx).unwrap();

            let c = sys.decompose(u.view()).unwrap().combine(1.0, &y, 1.0 / gamma);
            let z = solve_z_subproblem(&c, &prox, &weights).unwrap();
            let shift = y.combine(1.0, &z, -gamma);
            let next_u = solve_u_subproblem(x.view(), mask.view(), &shift, &sys, &prox, &weights, Some(u.view())).unwrap();
            let wu = sys.decompose(next_u.view()).unwrap();
            y = y.combine(1.0, &wu.combine(1.0, &z, -1.0), gamma);
            u = next_u;

            worst = worst.max((&state.u - &u).iter().fold(0.0, |m, v| m.max(v.abs())));
            worst = worst.max(state.y.combine(1.0, &y, -1.0).bands().iter().flatten().fold(0.0, |m, v| m.max(v.abs())));
            worst = worst.max(state.z.combine(1.0, &z, -1.0).bands().iter().flatten().fold(0.0, |m, v| m.max(v.abs())));
        }
    }
    let pass = worst < 1e-12;
    report(
        5,
        "inertial a=0 equals vanilla ADMM",
        pass,
        &format!("max |difference| over U, Z, Y in 15 steps: {worst:.2e}"),
    );
    assert!(pass);
}

/// k-nearest-neighbour graph on random points in the unit square.
fn knn_graph(n: usize, k: usize, seed: u64) -> Graph {
    let mut r = rng(seed);
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (r.random(), r.random())).collect();
    let mut edges = vec![];
    for i in 0..n {
        let mut by_dist: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2), j))
            .collect();
        by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
        edges.extend(by_dist.iter().take(k).map(|&(_, j)| (i, j)));
    }
    Graph::from_edges(n, &edges, SelfLoops::Reject).unwrap()
}

#[test]
fn criterion_06_localized_recovery() {
    let start = Instant::now();
    let (n, d) = (200, 10);
    let g = knn_graph(n, 6, 11);
    let sd = eigendecompose_small(&normalized_laplacian(&g)).unwrap();
    let mut r = rng(12);
    let coef = Array2::from_shape_simple_fn((5, d), || r.random_range(-1.0..1.0));
    let clean = sd.eigenvectors.slice(s![.., 0..5]).dot(&coef) * (n as f64).sqrt();
    // 2 targets x 10 features = 1% of the entries.
    let rec = inject_attributes(clean.view(), 2, 100, 5).unwrap();
    let (x, m) = (rec.corrupted.view(), rec.mask.view());
    let cfg = SolverConfig {
        sparsity: Sparsity::L1,
        fidelity: Fidelity::L2,
        transform: exact(),
        ..SolverConfig::default()
    };
    let sys = FrameletSystem::new(&g, &cfg.transform).unwrap();
    let (u, _) = admm_solve_with(x, m, &sys, &GraphNormWeights::from_graph(&g), &cfg).unwrap();
    let before = region_mse(clean.view(), x, m, Region::Masked).unwrap().unwrap();
    let after = region_mse(clean.view(), u.view(), m, Region::Masked).unwrap().unwrap();
    let moved_masked = region_mean_change(x, u.view(), m, Region::Masked).unwrap().unwrap();
    let moved_unmasked = region_mean_change(x, u.view(), m, Region::Unmasked).unwrap().unwrap();
    let elapsed = start.elapsed();
    let reduction = 1.0 - after / before;
    let pass = rec.mask.flagged() == 20
        && reduction >= 0.5
        && moved_unmasked < moved_masked
        && elapsed < Duration::from_secs(30);
    report(
        6,
        "synthetic localized recovery",
        pass,
        &format!(
            "masked MSE {before:.4} -> {after:.4} ({:.1}% lower), mean change unmasked {moved_unmasked:.4} vs masked {moved_masked:.4}, {elapsed:.2?}",
            100.0 * reduction
        ),
    );
    assert!(pass);
}

struct MaskRun {
    scores: Array2<f64>,
    truth: MaskMatrix,
    elapsed: Duration,
}

/// Five-community stochastic block graph with prototype features, 20
/// injected rows, and the entry scores of a 500-epoch autoencoder.
fn mask_run() -> &'static MaskRun {
    static RUN: OnceLock<MaskRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let (n, d, communities) = (300, 50, 5);
        let mut r = rng(17);
        let community: Vec<usize> = (0..n).map(|i| i * communities / n).collect();
        let mut edges = vec![];
        for i in 0..n {
            for j in i + 1..n {
                let p = if community[i] == community[j] { 0.1 } else { 0.004 };
                if r.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        let g = Graph::from_edges(n, &edges, SelfLoops::Reject).unwrap();
        let prototypes = Array2::from_shape_simple_fn((communities, d), || r.random::<f64>());
        let x = Array2::from_shape_fn((n, d), |(i, j)| prototypes[[community[i], j]] + 0.1 * (r.random::<f64>() - 0.5));
        let rec = inject_attributes(x.view(), 20, 100, 7).unwrap();
        let cfg = TrainConfig {
            epochs: 500,
            ..TrainConfig::default()
        };
        let (model, _) = train_gae(&g, rec.corrupted.view(), &cfg).unwrap();
        let recon = gae_forward(&model, &gcn_propagation_matrix(&g), rec.corrupted.view()).unwrap();
        let (_, scores) = anomaly_scores(rec.corrupted.view(), recon.values().view()).unwrap();
        MaskRun {
            scores,
            truth: rec.mask,
            elapsed: start.elapsed(),
        }
    })
}

#[test]
fn criterion_07_mask_recall() {
    let run = mask_run();
    let mask = mask_from_scores(run.scores.view(), 0.1, true).unwrap();
    let rep = mask_metrics(&mask, &run.truth).unwrap();
    let recall = rep.recall.unwrap();
    let pass = recall >= 0.5 && run.elapsed < Duration::from_secs(120);
    report(
        7,
        "autoencoder mask recall",
        pass,
        &format!(
            "recall {recall:.3} (TP {}, FN {}, FP {}), flagged fraction {:.3}, {:.2?}",
            rep.true_positives, rep.false_negatives, rep.false_positives, rep.sparsity, run.elapsed
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_tau_sparsity_monotone() {
    let run = mask_run();
    let start = Instant::now();
    let counts: Vec<usize> = [0.05, 0.1, 0.2, 0.4, 0.8]
        .iter()
        .map(|&tau| mask_from_scores(run.scores.view(), tau, true).unwrap().flagged())
        .collect();
    let elapsed = start.elapsed();
    let pass = counts.windows(2).all(|w| w[1] <= w[0]) && elapsed < Duration::from_secs(1);
    report(
        8,
        "tau sparsity monotone",
        pass,
        &format!("flagged entries at tau 0.05..0.8: {counts:?}, {elapsed:.2?}"),
    );
    assert!(pass);
}

/// Largest `|analytic - fd| / max(|analytic|, |fd|, 1e-6)` over all parameters.
fn max_fd_error<M: Layers + Clone>(model: &M, analytic: &M, total: impl Fn(&M) -> f64) -> f64 {
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for li in 0..model.layers().len() {
        let cols = model.layers()[li].weight.ncols();
        let n_w = model.layers()[li].weight.len();
        let n_b = model.layers()[li].bias.len();
        for k in 0..n_w + n_b {
            let eval = |delta: f64| {
                let mut m = model.clone();
                let layer = &mut m.layers_mut()[li];
                if k < n_w {
                    layer.weight[[k / cols, k % cols]] += delta;
                } else {
                    layer.bias[k - n_w] += delta;
                }
                total(&m)
            };
            let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let a = analytic.layers()[li];
            let an = if k < n_w { a.weight[[k / cols, k % cols]] } else { a.bias[k - n_w] };
            worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-6));
        }
    }
    worst
}

fn jitter_biases<M: Layers>(m: &mut M, seed: u64) {
    let mut r = rng(seed);
    for l in m.layers_mut() {
        l.bias.mapv_inplace(|_| r.random_range(-0.2..0.2));
    }
}

#[test]
fn criterion_09_gradient_check() {
    let g = random_connected_graph(6, 4, 9);
    let a_hat: SparseMatrix = gcn_propagation_matrix(&g);
    let x = gaussian((6, 4), 10);
    let mut worst_gae = 0.0f64;
    let mut params = 0;
    for mode in [LossMode::Mse, LossMode::Mae] {
        for seed in 0..5 {
            let mut m = GcnAutoencoder::new(4, 5, seed).unwrap();
            jitter_biases(&mut m, seed + 50);
            params += m.parameter_count();
            let analytic = gae_loss_and_grad(&m, &a_hat, x.view(), mode, 1e-3).unwrap().grad;
            let err = max_fd_error(&m, &analytic, |p| {
                gae_loss_and_grad(p, &a_hat, x.view(), mode, 1e-3).unwrap().total()
            });
            worst_gae = worst_gae.max(err);
        }
    }
    let labels = [0, 1, 2, 1, 0, 2];
    let train = [0, 1, 2, 4];
    let mut worst_cls = 0.0f64;
    for seed in 0..5 {
        let mut m = GcnClassifier::new(4, 5, 3, seed).unwrap();
        jitter_biases(&mut m, seed + 80);
        params += m.parameter_count();
        let analytic = classifier_loss_and_grad(&m, &a_hat, x.view(), &labels, &train, 1e-3).unwrap().grad;
        let err = max_fd_error(&m, &analytic, |p| {
            classifier_loss_and_grad(p, &a_hat, x.view(), &labels, &train, 1e-3).unwrap().total()
        });
        worst_cls = worst_cls.max(err);
    }
    let pass = worst_gae < 1e-4 && worst_cls < 1e-4;
    report(
        9,
        "finite-difference gradients",
        pass,
        &format!("{params} parameters, max relative error autoencoder {worst_gae:.2e}, classifier {worst_cls:.2e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_10_inpainting() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::new(Input::Image { path: None, patch: 8 }, dir.path());
    cfg.mask_mode = MaskMode::True;
    cfg.generator = GeneratorConfig {
        kind: GeneratorKind::LocalNoise,
        noisy_nodes: 9,
        sigma: 1.0,
        seed: 0,
        ..GeneratorConfig::default()
    };
    let rep = run_pipeline(&cfg).unwrap();
    let elapsed = start.elapsed();
    let (before, after) = (rep.observed_local_psnr.unwrap(), rep.local_psnr.unwrap());
    let pass = rep.nodes == 64 && after - before >= 3.0 && elapsed < Duration::from_secs(30);
    report(
        10,
        "image inpainting",
        pass,
        &format!(
            "local PSNR {before:.2} -> {after:.2} dB (+{:.2}), global {:.2} -> {:.2} dB, {elapsed:.2?}",
            after - before,
            rep.observed_psnr,
            rep.global_psnr
        ),
    );
    assert!(pass);
}

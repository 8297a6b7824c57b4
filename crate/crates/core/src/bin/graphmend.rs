//! Command-line front end. Exit codes: 0 success, 2 configuration error,
//! 3 stage failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use graphmend::admm::{admm_solve, SolverConfig};
use graphmend::framelet::{FrameletConfig, TransformKind};
use graphmend::graph::{gcn_propagation_matrix, Graph, SelfLoops};
use graphmend::io;
use graphmend::mask::{anomaly_scores, build_mask, mask_metrics, MaskMatrix};
use graphmend::metrics::{format_db, local_psnr, psnr, region_mse, Region};
use graphmend::neural::{gae_forward, train_gae, Layers, LossMode, TrainConfig};
use graphmend::pipeline::{
    run_pipeline, GeneratorConfig, GeneratorKind, Input, MaskMode, PipelineConfig, PipelineError, DEFAULT_OUTPUT_DIR,
    OUTPUT_DIR_ENV,
};
use graphmend::prox::{Fidelity, QuadraticSolver, Sparsity};
use graphmend::Error;

#[derive(Parser)]
#[command(name = "graphmend", version, about = "Detect and repair locally corrupted node attributes")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Output directory.
    #[arg(long, global = true, env = OUTPUT_DIR_ENV, default_value = DEFAULT_OUTPUT_DIR)]
    output_dir: PathBuf,
    /// Feature CSV files carry a header row.
    #[arg(long, global = true)]
    header: bool,
    /// Worker threads. Every stage currently runs on one thread, so 1 and
    /// larger values give identical, reproducible output.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    threads: u32,
}

#[derive(Subcommand)]
enum Command {
    /// Corrupt a feature matrix and write it with its ground-truth mask.
    Corrupt {
        #[arg(long)]
        features: PathBuf,
        #[command(flatten)]
        generator: GeneratorArgs,
    },
    /// Train the graph autoencoder and write the thresholded mask.
    Mask {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Ground-truth mask triplets; prints recall when given.
        #[arg(long)]
        true_mask: Option<PathBuf>,
        #[command(flatten)]
        mask: MaskArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Recover features with the inertial ADMM.
    Denoise {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Mask triplets; all ones when omitted.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Noise a few patches of an image and inpaint them with the true mask.
    Inpaint {
        /// Grayscale PGM; the built-in synthetic 64x64 image when omitted.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        patch: usize,
        #[arg(long, default_value_t = 9)]
        noisy_nodes: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Compare a candidate feature matrix with a reference.
    Eval {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        /// Ground-truth mask triplets for local PSNR and masked MSE.
        #[arg(long)]
        true_mask: Option<PathBuf>,
        /// PSNR peak; the reference value range when omitted.
        #[arg(long)]
        peak: Option<f64>,
    },
    /// Run corrupt, mask, denoise and evaluate in one go.
    Pipeline(Box<PipelineArgs>),
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, requires = "features", conflicts_with = "image")]
    graph: Option<PathBuf>,
    #[arg(long, requires = "graph")]
    features: Option<PathBuf>,
    /// Grayscale PGM input instead of a graph.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Use the built-in synthetic image.
    #[arg(long, conflicts_with_all = ["graph", "image"])]
    synthetic_image: bool,
    #[arg(long, default_value_t = 8)]
    patch: usize,
    /// Clean features for evaluation when no generator runs.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Ground-truth mask triplets when no generator runs.
    #[arg(long)]
    true_mask: Option<PathBuf>,
    /// Node labels; trains a GCN classifier on the recovered features.
    #[arg(long, requires = "split")]
    classify: Option<PathBuf>,
    /// Lines `node,train` or `node,test`.
    #[arg(long, requires = "classify")]
    split: Option<PathBuf>,
    #[arg(long)]
    peak: Option<f64>,
    #[command(flatten)]
    generator: GeneratorArgs,
    #[command(flatten)]
    mask: MaskArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct GeneratorArgs {
    /// none, injection, gaussian or local-noise.
    #[arg(long, default_value = "none", value_parser = parse::<GeneratorKind>)]
    generator: GeneratorKind,
    /// Injection targets.
    #[arg(long, default_value_t = 20)]
    targets: usize,
    /// Injection candidate pool size.
    #[arg(long, default_value_t = 100)]
    candidates: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 9)]
    noisy_nodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl GeneratorArgs {
    fn config(&self) -> GeneratorConfig {
        GeneratorConfig {
            kind: self.generator,
            targets: self.targets,
            candidates: self.candidates,
            sigma: self.sigma,
            noisy_nodes: self.noisy_nodes,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct MaskArgs {
    /// ones, gae or true.
    #[arg(long, default_value = "gae", value_parser = parse::<MaskMode>)]
    mask_mode: MaskMode,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    /// Threshold scores to a 0/1 mask; `false` keeps 1 - score.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    binarize: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    /// mse or mae.
    #[arg(long, default_value = "mse", value_parser = parse::<LossMode>)]
    loss: LossMode,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    train_seed: u64,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            loss: self.loss,
            hidden: self.hidden,
            seed: self.train_seed,
        }
    }
}

#[derive(Args)]
struct SolverArgs {
    /// Sparsity exponent p (0 or 1).
    #[arg(long, default_value_t = 1)]
    sparsity: u32,
    /// Fidelity exponent q (1 or 2).
    #[arg(long, default_value_t = 2)]
    fidelity: u32,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 100.0)]
    nu0: f64,
    #[arg(long, default_value_t = 0.3)]
    inertia: f64,
    #[arg(long, default_value_t = 15)]
    max_iterations: usize,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    /// Framelet levels J.
    #[arg(long, default_value_t = 2)]
    levels: usize,
    /// exact, chebyshev or auto.
    #[arg(long, default_value = "auto", value_parser = parse::<TransformKind>)]
    transform: TransformKind,
    #[arg(long, default_value_t = 50)]
    chebyshev_order: usize,
    /// Overrides the dilation log2(lambda_max / pi).
    #[arg(long)]
    dilation: Option<f64>,
    /// auto, closed-form or gradient-steps.
    #[arg(long, default_value = "auto", value_parser = parse_quadratic)]
    quadratic_solver: QuadraticSolver,
    #[arg(long, default_value_t = 10)]
    inner_steps: usize,
    #[arg(long)]
    step_size: Option<f64>,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig, Error> {
        Ok(SolverConfig {
            sparsity: Sparsity::from_p(self.sparsity)?,
            fidelity: Fidelity::from_q(self.fidelity)?,
            gamma: self.gamma,
            nu0: self.nu0,
            inertia: self.inertia,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            transform: FrameletConfig {
                levels: self.levels,
                kind: self.transform,
                chebyshev_order: self.chebyshev_order,
                dilation: self.dilation,
            },
            quadratic_solver: self.quadratic_solver,
            inner_steps: self.inner_steps,
            step_size: self.step_size,
        })
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_quadratic(s: &str) -> Result<QuadraticSolver, String> {
    match s {
        "auto" => Ok(QuadraticSolver::Auto),
        "closed-form" => Ok(QuadraticSolver::ClosedForm),
        "gradient-steps" => Ok(QuadraticSolver::GradientSteps),
        _ => Err(format!("expected auto, closed-form or gradient-steps, got `{s}`")),
    }
}

enum Failure {
    Config(String),
    Stage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { .. } => Failure::Config(e.to_string()),
            _ => Failure::Stage(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) => Failure::Config(e.to_string()),
            PipelineError::Stage { .. } => Failure::Stage(e.to_string()),
        }
    }
}

fn require(paths: &[&Path]) -> Result<(), Failure> {
    match paths.iter().find(|p| !p.exists()) {
        Some(p) => Err(Failure::Config(format!("{} does not exist", p.display()))),
        None => Ok(()),
    }
}

fn load_graph(graph: &Path, features: &Path, header: bool) -> Result<(Graph, ndarray::Array2<f64>), Error> {
    let x = io::read_dense_csv(features, header)?;
    let (edges, _) = io::read_edge_list(graph)?;
    Ok((Graph::from_edges(x.nrows(), &edges, SelfLoops::Reject)?, x))
}

fn print_report(lines: &[(&str, String)], csv_path: &Path) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(["metric", "value"])?;
    for (k, v) in lines {
        println!("{k:<24} {v}");
        w.write_record([*k, v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let common = &cli.common;
    let out = common.output_dir.as_path();
    if common.threads > 1 {
        log::info!("all stages run single-threaded; --threads {} has no effect", common.threads);
    }
    let mkdir = || fs::create_dir_all(out).map_err(|e| Failure::Stage(e.to_string()));
    match cli.command {
        Command::Corrupt { features, generator } => {
            require(&[&features])?;
            let cfg = generator.config();
            if cfg.kind == GeneratorKind::None {
                return Err(Failure::Config("--generator must not be `none`".into()));
            }
            let x = io::read_dense_csv(&features, common.header)?;
            let rec = cfg.apply(x.view())?.expect("generator is not none");
            rec.save(out, common.header)?;
            println!("corrupted {} entries, written to {}", rec.mask.flagged(), out.display());
        }
        Command::Mask {
            graph,
            features,
            true_mask,
            mask,
            train,
        } => {
            require(&[&graph, &features])?;
            require(&true_mask.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
            let tcfg = train.config();
            tcfg.validate()?;
            let (g, x) = load_graph(&graph, &features, common.header)?;
            mkdir()?;
            let (model, log) = train_gae(&g, x.view(), &tcfg)?;
            log.write_csv(&out.join("gae_loss.csv"))?;
            model.save(&out.join("gae_model"))?;
            let recon = gae_forward(&model, &gcn_propagation_matrix(&g), x.view())?;
            let (node_scores, _) = anomaly_scores(x.view(), recon.values().view())?;
            io::write_dense_csv(&out.join("node_scores.csv"), node_scores.view().insert_axis(ndarray::Axis(1)), false)?;
            let m = build_mask(x.view(), recon.values().view(), mask.tau, mask.binarize)?;
            m.write_triplets(&out.join("mask.csv"))?;
            let mut lines = vec![
                ("initial_loss", log.initial_loss().to_string()),
                ("final_loss", log.final_loss.to_string()),
                ("flagged", m.flagged().to_string()),
            ];
            if let Some(t) = true_mask {
                let r = mask_metrics(&m, &MaskMatrix::read_triplets(&t)?)?;
                lines.push(("recall", r.recall.map(|v| v.to_string()).unwrap_or_default()));
                lines.push(("true_positives", r.true_positives.to_string()));
                lines.push(("false_negatives", r.false_negatives.to_string()));
                lines.push(("false_positives", r.false_positives.to_string()));
            }
            print_report(&lines, &out.join("mask_report.csv"))?;
        }
        Command::Denoise {
            graph,
            features,
            mask,
            solver,
        } => {
            require(&[&graph, &features])?;
            require(&mask.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
            let scfg = solver.config()?;
            scfg.validate()?;
            let (g, x) = load_graph(&graph, &features, common.header)?;
            let m = match mask {
                Some(p) => MaskMatrix::read_triplets(&p)?,
                None => MaskMatrix::ones(x.nrows(), x.ncols()),
            };
            mkdir()?;
            let (u, diag) = admm_solve(x.view(), m.view(), &g, &scfg)?;
            io::write_dense_csv(&out.join("recovered.csv"), u.view(), common.header)?;
            diag.write_csv(&out.join("admm.csv"))?;
            println!(
                "{} iterations, residual {:.3e}, objective {:.6e} -> {:.6e}",
                diag.iterations(),
                diag.residuals.last().copied().unwrap_or(f64::NAN),
                diag.initial_objective,
                diag.final_objective()
            );
        }
        Command::Inpaint {
            image,
            patch,
            noisy_nodes,
            sigma,
            seed,
            solver,
        } => {
            let mut cfg = PipelineConfig::new(Input::Image { path: image, patch }, out);
            cfg.header = common.header;
            cfg.mask_mode = MaskMode::True;
            cfg.generator = GeneratorConfig {
                kind: GeneratorKind::LocalNoise,
                noisy_nodes,
                sigma,
                seed,
                ..GeneratorConfig::default()
            };
            cfg.solver = solver.config()?;
            let report = run_pipeline(&cfg)?;
            print!("{}", report.to_text());
        }
        Command::Eval {
            reference,
            candidate,
            true_mask,
            peak,
        } => {
            require(&[&reference, &candidate])?;
            require(&true_mask.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
            let r = io::read_dense_csv(&reference, common.header)?;
            let c = io::read_dense_csv(&candidate, common.header)?;
            let peak = match peak {
                Some(p) => p,
                None => {
                    let (lo, hi) = r.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
                    if hi > lo {
                        hi - lo
                    } else {
                        1.0
                    }
                }
            };
            let mut lines = vec![("peak", peak.to_string()), ("global_psnr", format_db(psnr(r.view(), c.view(), peak)?))];
            if let Some(t) = true_mask {
                let t = MaskMatrix::read_triplets(&t)?;
                let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                let local = local_psnr(r.view(), c.view(), t.view(), peak)?;
                lines.push(("local_psnr", local.map(format_db).unwrap_or_default()));
                lines.push(("masked_mse", fmt(region_mse(r.view(), c.view(), t.view(), Region::Masked)?)));
                lines.push(("unmasked_mse", fmt(region_mse(r.view(), c.view(), t.view(), Region::Unmasked)?)));
            }
            mkdir()?;
            print_report(&lines, &out.join("eval.csv"))?;
        }
        Command::Pipeline(args) => {
            let input = if let (Some(g), Some(f)) = (&args.graph, &args.features) {
                Input::Graph {
                    graph: g.clone(),
                    features: f.clone(),
                }
            } else if args.image.is_some() || args.synthetic_image {
                Input::Image {
                    path: args.image.clone(),
                    patch: args.patch,
                }
            } else {
                return Err(Failure::Config(
                    "give --graph with --features, --image, or --synthetic-image".into(),
                ));
            };
            let mut cfg = PipelineConfig::new(input, out);
            cfg.header = common.header;
            cfg.reference = args.reference.clone();
            cfg.true_mask = args.true_mask.clone();
            cfg.labels = args.classify.clone();
            cfg.split = args.split.clone();
            cfg.peak = args.peak;
            cfg.generator = args.generator.config();
            cfg.mask_mode = args.mask.mask_mode;
            cfg.tau = args.mask.tau;
            cfg.binarize = args.mask.binarize;
            cfg.train = args.train.config();
            cfg.solver = args.solver.config()?;
            let report = run_pipeline(&cfg)?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

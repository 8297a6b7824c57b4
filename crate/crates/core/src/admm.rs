//! Inertial ADMM for
//!
//! ```text
//! min_U  ‖ν 𝒲U‖_{p,G} + ½‖M⊙(U - X)‖_{q,G}^q
//! ```
//!
//! with the splitting `Z = 𝒲U`. One iteration runs, in order,
//!
//! ```text
//! Z ← prox((2Y - Ṽ)/γ)
//! V ← Y - γZ
//! Ṽ ← V + a (V - V_prev)
//! U ← argmin ½‖M⊙(U - X)‖ + (γ/2)‖𝒲U + Ṽ/γ‖²
//! Y ← Ṽ + γ𝒲U
//! ```
//!
//! The state starts at `U = X`, `Z = 𝒲X`, `Y = 0` and `V = Ṽ = Y - γZ`, so
//! that `Y = V + γ𝒲U` holds from the first step on.

use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};

use crate::error::{invalid, Error, Result};
use crate::framelet::{framelet_weights, CoefficientStack, FrameletConfig, FrameletSystem, NuWeights};
use crate::graph::Graph;
use crate::prox::{
    fidelity_value, regularizer_value, solve_u_subproblem, solve_z_subproblem, validate_mask, Fidelity,
    GraphNormWeights, ProxConfig, QuadraticSolver, Sparsity,
};

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub sparsity: Sparsity,
    pub fidelity: Fidelity,
    pub gamma: f64,
    pub nu0: f64,
    /// Constant inertial parameter `a_k`.
    pub inertia: f64,
    pub max_iterations: usize,
    /// Stop once `‖𝒲U - Z‖_F` drops below this.
    pub tolerance: f64,
    pub transform: FrameletConfig,
    pub quadratic_solver: QuadraticSolver,
    pub inner_steps: usize,
    pub step_size: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            sparsity: Sparsity::L1,
            fidelity: Fidelity::L2,
            gamma: 1.0,
            nu0: 100.0,
            inertia: 0.3,
            max_iterations: 15,
            tolerance: 1e-6,
            transform: FrameletConfig::default(),
            quadratic_solver: QuadraticSolver::Auto,
            inner_steps: 10,
            step_size: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.inertia) {
            return Err(invalid("inertia", format!("must lie in [0, 1], got {}", self.inertia)));
        }
        if self.sparsity == Sparsity::L1 && self.inertia > 1.0 / 3.0 {
            return Err(invalid(
                "inertia",
                format!("convex (p = 1) runs require a_k <= 1/3, got {}", self.inertia),
            ));
        }
        if self.max_iterations < 1 {
            return Err(invalid("max_iterations", "must be >= 1"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(invalid("tolerance", "must be >= 0"));
        }
        Ok(())
    }

    pub fn prox_config(&self, nu: NuWeights) -> ProxConfig {
        ProxConfig {
            sparsity: self.sparsity,
            fidelity: self.fidelity,
            gamma: self.gamma,
            nu,
            quadratic_solver: self.quadratic_solver,
            inner_steps: self.inner_steps,
            step_size: self.step_size,
        }
    }
}

/// Iterates of the inertial scheme.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub u: Array2<f64>,
    pub z: CoefficientStack,
    pub v: CoefficientStack,
    pub v_tilde: CoefficientStack,
    pub y: CoefficientStack,
    pub iteration: usize,
    /// `‖𝒲U_k - Z_k‖_F` after each completed iteration.
    pub residuals: Vec<f64>,
}

impl SolverState {
    pub fn primal_residual(&self, sys: &FrameletSystem) -> Result<f64> {
        Ok(sys.decompose(self.u.view())?.combine(1.0, &self.z, -1.0).frobenius_norm())
    }
}

pub fn init_state(x: ArrayView2<f64>, sys: &FrameletSystem, gamma: f64) -> Result<SolverState> {
    let wx = sys.decompose(x)?;
    let y = CoefficientStack::zeros(sys.bands(), x.dim());
    let v = wx.scale(-gamma);
    Ok(SolverState {
        u: x.to_owned(),
        v_tilde: v.clone(),
        v,
        y,
        z: wx,
        iteration: 0,
        residuals: Vec::new(),
    })
}

/// Everything one ADMM step needs besides the state.
#[derive(Debug, Clone)]
pub struct StepContext<'a> {
    pub x: ArrayView2<'a, f64>,
    pub mask: ArrayView2<'a, f64>,
    pub sys: &'a FrameletSystem,
    pub prox: &'a ProxConfig,
    pub weights: &'a GraphNormWeights,
    pub inertia: f64,
}

pub fn admm_step(s: &SolverState, ctx: &StepContext<'_>) -> Result<SolverState> {
    let gamma = ctx.prox.gamma;
    let c = s.y.combine(2.0 / gamma, &s.v_tilde, -1.0 / gamma);
    let z = solve_z_subproblem(&c, ctx.prox, ctx.weights)?;
    let v = s.y.combine(1.0, &z, -gamma);
    let v_tilde = if ctx.inertia == 0.0 {
        v.clone()
    } else {
        v.combine(1.0 + ctx.inertia, &s.v, -ctx.inertia)
    };
    let u = solve_u_subproblem(ctx.x, ctx.mask, &v_tilde, ctx.sys, ctx.prox, ctx.weights, Some(s.u.view()))?;
    let wu = ctx.sys.decompose(u.view())?;
    let y = v_tilde.combine(1.0, &wu, gamma);
    let residual = wu.combine(1.0, &z, -1.0).frobenius_norm();

    let iteration = s.iteration + 1;
    if !residual.is_finite() || u.iter().any(|v| !v.is_finite()) || !y.is_finite() {
        return Err(Error::NonFinite { iteration });
    }
    let mut residuals = s.residuals.clone();
    residuals.push(residual);
    Ok(SolverState {
        u,
        z,
        v,
        v_tilde,
        y,
        iteration,
        residuals,
    })
}

/// Per-iteration record of a solve.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub residuals: Vec<f64>,
    pub objectives: Vec<f64>,
    /// Objective at the observation `X`.
    pub initial_objective: f64,
    pub converged: bool,
    pub elapsed_secs: f64,
}

impl Diagnostics {
    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }

    pub fn final_objective(&self) -> f64 {
        self.objectives.last().copied().unwrap_or(self.initial_objective)
    }

    /// CSV with header `iteration,primal_residual,objective`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iteration", "primal_residual", "objective"])?;
        for (i, (r, o)) in self.residuals.iter().zip(&self.objectives).enumerate() {
            w.write_record([(i + 1).to_string(), r.to_string(), o.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The objective being minimized, evaluated at `u`.
pub fn objective(
    u: ArrayView2<f64>,
    x: ArrayView2<f64>,
    mask: ArrayView2<f64>,
    sys: &FrameletSystem,
    prox: &ProxConfig,
    weights: &GraphNormWeights,
) -> Result<f64> {
    let wu = sys.decompose(u)?;
    Ok(regularizer_value(&wu, prox.sparsity, &prox.nu, weights) + fidelity_value(u, x, mask, prox.fidelity, weights))
}

/// Builds the framelet system for `g` and runs [`admm_solve_with`].
pub fn admm_solve(
    x: ArrayView2<f64>,
    mask: ArrayView2<f64>,
    g: &Graph,
    cfg: &SolverConfig,
) -> Result<(Array2<f64>, Diagnostics)> {
    let sys = FrameletSystem::new(g, &cfg.transform)?;
    admm_solve_with(x, mask, &sys, &GraphNormWeights::from_graph(g), cfg)
}

pub fn admm_solve_with(
    x: ArrayView2<f64>,
    mask: ArrayView2<f64>,
    sys: &FrameletSystem,
    weights: &GraphNormWeights,
    cfg: &SolverConfig,
) -> Result<(Array2<f64>, Diagnostics)> {
    cfg.validate()?;
    validate_mask(x, mask)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { iteration: 0 });
    }
    let start = Instant::now();
    let nu = framelet_weights(cfg.nu0, sys.high_passes(), sys.levels())?;
    let prox = cfg.prox_config(nu);
    prox.validate()?;
    let ctx = StepContext {
        x,
        mask,
        sys,
        prox: &prox,
        weights,
        inertia: cfg.inertia,
    };

    let mut diag = Diagnostics {
        initial_objective: objective(x, x, mask, sys, &prox, weights)?,
        ..Default::default()
    };
    let mut state = init_state(x, sys, cfg.gamma)?;
    for _ in 0..cfg.max_iterations {
        state = admm_step(&state, &ctx)?;
        let obj = objective(state.u.view(), x, mask, sys, &prox, weights)?;
        if !obj.is_finite() {
            return Err(Error::NonFinite {
                iteration: state.iteration,
            });
        }
        diag.objectives.push(obj);
        let residual = *state.residuals.last().unwrap();
        log::debug!("iteration {}: residual {residual:.3e}, objective {obj:.6e}", state.iteration);
        if residual < cfg.tolerance {
            diag.converged = true;
            break;
        }
    }
    diag.residuals = state.residuals;
    diag.elapsed_secs = start.elapsed().as_secs_f64();
    Ok((state.u, diag))
}

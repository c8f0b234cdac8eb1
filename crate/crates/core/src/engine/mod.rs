//! The LC outer loop: alternate L steps (training with a quadratic pull
//! towards the compressed point) and C steps (projecting onto the feasible
//! set) while μ grows.

mod monitor;
mod plan;

pub use monitor::{monitor_check, violations, MonitorEvent, Severity, C_STEP_SLACK};
pub use plan::{
    compression_ratio, gather, scatter, validate_tasks, CompressionSummary, CompressionTask, Plan, TaskPlan,
    TaskSummary, ViewKind,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cstep::{CompressedForm, CompressionInput, SchemeSpec, Solved};
use crate::error::{EngineError, LStepError, SolverError, ValidationError};
use crate::model::{LStepOutcome, LossModel, ParamStore, Penalty};
use crate::tensor::{squared_distance, sum_squares};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Multipliers are updated after every C step.
    #[default]
    AugmentedLagrangian,
    /// Multipliers stay at zero.
    QuadraticPenalty,
}

/// `μ_i = μ0 · a^i` for `i = 0..num_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub mu0: f64,
    pub a: f64,
    pub num_steps: usize,
    #[serde(default)]
    pub mode: Mode,
}

impl ScheduleSpec {
    pub fn mu(&self, i: usize) -> f64 {
        self.mu0 * self.a.powi(i as i32)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.mu0 > 0.0) || !self.mu0.is_finite() {
            return Err(ValidationError::Schedule(format!("mu0 must be > 0, got {}", self.mu0)));
        }
        if !(self.a > 1.0) || !self.a.is_finite() {
            return Err(ValidationError::Schedule(format!("a must be > 1, got {}", self.a)));
        }
        Ok(())
    }
}

/// Θ and λ for every task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub thetas: Vec<Option<CompressedForm>>,
    pub lambdas: Vec<Vec<f64>>,
    /// μ given to penalty forms during the initial direct compression, where
    /// the C step itself runs at μ = 0.
    pub init_penalty_mu: f64,
}

impl EngineState {
    pub fn new(plan: &Plan, init_penalty_mu: f64) -> Self {
        Self {
            thetas: vec![None; plan.len()],
            lambdas: plan.tasks.iter().map(|t| vec![0.0; t.len]).collect(),
            init_penalty_mu,
        }
    }

    /// Θ per task. Panics before the first C step.
    pub fn forms(&self) -> Vec<CompressedForm> {
        self.thetas
            .iter()
            .map(|t| t.clone().expect("C step has not run yet"))
            .collect()
    }

    fn decompressed(&self, task: usize) -> Vec<f64> {
        self.thetas[task].as_ref().expect("C step has not run yet").decompress()
    }
}

/// Per-task numbers from one C step.
#[derive(Clone, Debug, PartialEq)]
pub struct CStepStats {
    pub distortion: f64,
    /// Objective of the previous Θ on this step's input (absent at init).
    pub objective_before: Option<f64>,
    pub objective: f64,
}

/// Signature of a per-task C-step solver; the default is [`SchemeSpec::compress`].
pub type SolveFn<'a> = dyn Fn(usize, &SchemeSpec, CompressionInput<'_>, f64, Option<&CompressedForm>) -> Result<Solved<CompressedForm>, SolverError>
    + Sync
    + 'a;

fn default_solve(
    _task: usize,
    scheme: &SchemeSpec,
    input: CompressionInput<'_>,
    mu: f64,
    warm: Option<&CompressedForm>,
) -> Result<Solved<CompressedForm>, SolverError> {
    scheme.compress(input, mu, warm)
}

/// C step over all tasks: `Θ_t = Π_t(w_t − λ_t/μ)`, or `Π_t(w_t)` when
/// `mu == 0` (the initial direct compression).
pub fn c_step_all(
    params: &ParamStore,
    plan: &Plan,
    state: &mut EngineState,
    mu: f64,
    sequential: bool,
) -> Result<Vec<CStepStats>, EngineError> {
    c_step_all_with(params, plan, state, mu, sequential, &default_solve)
}

pub fn c_step_all_with(
    params: &ParamStore,
    plan: &Plan,
    state: &mut EngineState,
    mu: f64,
    sequential: bool,
    solve: &SolveFn<'_>,
) -> Result<Vec<CStepStats>, EngineError> {
    let init = mu == 0.0;
    let solver_mu = if init { state.init_penalty_mu } else { mu };
    let inputs: Vec<Vec<f64>> = plan
        .tasks
        .iter()
        .zip(&state.lambdas)
        .map(|(tp, lambda)| {
            let mut u = gather(params, tp);
            if !init {
                u.iter_mut().zip(lambda).for_each(|(x, l)| *x -= l / mu);
            }
            u
        })
        .collect();

    let work = |t: usize| -> Result<(CompressedForm, CStepStats), EngineError> {
        let tp = &plan.tasks[t];
        let u = &inputs[t];
        let warm = state.thetas[t].as_ref();
        let scheme = &tp.task.scheme;
        let objective_before = warm.map(|prev| scheme.objective(prev.distortion(u), prev, solver_mu));
        let solved = solve(t, scheme, tp.input(u), solver_mu, warm).map_err(|source| EngineError::Solver { task: t, source })?;
        let distortion = solved.form.distortion(u);
        let stats = CStepStats {
            distortion,
            objective_before,
            objective: scheme.objective(distortion, &solved.form, solver_mu),
        };
        Ok((solved.form, stats))
    };

    let results: Vec<Result<_, _>> = if sequential {
        (0..plan.len()).map(work).collect()
    } else {
        (0..plan.len()).into_par_iter().map(work).collect()
    };
    let mut stats = Vec::with_capacity(plan.len());
    for (t, r) in results.into_iter().enumerate() {
        let (form, s) = r?;
        state.thetas[t] = Some(form);
        stats.push(s);
    }
    Ok(stats)
}

/// `λ_t ← λ_t − μ (w_t − Δ(Θ_t))`; a no-op in quadratic-penalty mode.
pub fn multipliers_step(params: &ParamStore, plan: &Plan, state: &mut EngineState, mu: f64, mode: Mode) {
    if mode == Mode::QuadraticPenalty {
        return;
    }
    for (t, tp) in plan.tasks.iter().enumerate() {
        let w = gather(params, tp);
        let delta = state.decompressed(t);
        for ((l, x), d) in state.lambdas[t].iter_mut().zip(&w).zip(&delta) {
            *l -= mu * (x - d);
        }
    }
}

/// `||w − Δ(Θ)||` jointly over all tasks.
pub fn mismatch(params: &ParamStore, plan: &Plan, state: &EngineState) -> f64 {
    plan.tasks
        .iter()
        .enumerate()
        .map(|(t, tp)| squared_distance(&gather(params, tp), &state.decompressed(t)))
        .sum::<f64>()
        .sqrt()
}

/// The L-step attraction: anchor `Δ(Θ) + λ/μ` on every compressed parameter.
pub fn build_penalty(params: &ParamStore, plan: &Plan, state: &EngineState, mu: f64) -> Penalty {
    let mut anchors: Vec<Option<Vec<f64>>> = vec![None; params.len()];
    for (t, tp) in plan.tasks.iter().enumerate() {
        let mut target = state.decompressed(t);
        target.iter_mut().zip(&state.lambdas[t]).for_each(|(x, l)| *x += l / mu);
        tp.split(&target, |i, part| anchors[i] = Some(part.to_vec()));
    }
    Penalty { mu, anchors }
}

/// Overwrites every compressed parameter with `Δ(Θ)`.
pub fn apply_compressed(params: &mut ParamStore, plan: &Plan, state: &EngineState) {
    for (t, tp) in plan.tasks.iter().enumerate() {
        scatter(params, tp, &state.decompressed(t));
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub loss: Option<f64>,
    pub train_error: Option<f64>,
    pub test_error: Option<f64>,
}

/// One row of the run history. Step 0 is the initial direct compression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub mu: f64,
    pub l_loss_before: Option<f64>,
    pub l_loss_after: Option<f64>,
    pub c_distortion: Vec<f64>,
    pub c_objective_before: Vec<Option<f64>>,
    pub c_objective: Vec<f64>,
    pub mismatch: f64,
    /// Evaluation of the compressed model `Δ(Θ)`.
    pub compressed: EvalResult,
    /// Evaluation of the working weights `w`, when requested.
    pub uncompressed: Option<EvalResult>,
}

impl StepRecord {
    pub fn total_distortion(&self) -> f64 {
        self.c_distortion.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct RunOptions {
    /// Absolute stopping threshold on `||w − Δ(Θ)||`; `None` means
    /// `1e-6 · ||w̄||` over the compressed parameters.
    pub stop_tol: Option<f64>,
    pub sequential: bool,
    pub eval_uncompressed: bool,
}


pub const DEFAULT_RELATIVE_STOP_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub history: Vec<StepRecord>,
    pub state: EngineState,
    pub converged: bool,
    pub stop_tol: f64,
}

/// A run that stopped on an error, with everything recorded up to that point.
#[derive(Clone, Debug)]
pub struct RunAbort {
    pub error: EngineError,
    pub history: Vec<StepRecord>,
}

impl std::fmt::Display for RunAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} recorded steps)", self.error, self.history.len())
    }
}

impl std::error::Error for RunAbort {}

/// Runs the LC algorithm. On return the model holds the working weights `w`;
/// use [`apply_compressed`] to materialize the feasible model `Δ(Θ)`.
pub fn run<M, L, E>(
    model: &mut M,
    plan: &Plan,
    schedule: &ScheduleSpec,
    opts: &RunOptions,
    l_step: L,
    eval: E,
) -> Result<RunOutcome, RunAbort>
where
    M: LossModel + ?Sized,
    L: FnMut(&mut M, &Penalty, usize) -> Result<LStepOutcome, LStepError>,
    E: FnMut(&M) -> EvalResult,
{
    run_with_solver(model, plan, schedule, opts, l_step, eval, &default_solve)
}

/// [`run`] with a custom per-task C-step solver.
pub fn run_with_solver<M, L, E>(
    model: &mut M,
    plan: &Plan,
    schedule: &ScheduleSpec,
    opts: &RunOptions,
    mut l_step: L,
    mut eval: E,
    solve: &SolveFn<'_>,
) -> Result<RunOutcome, RunAbort>
where
    M: LossModel + ?Sized,
    L: FnMut(&mut M, &Penalty, usize) -> Result<LStepOutcome, LStepError>,
    E: FnMut(&M) -> EvalResult,
{
    let mut history = Vec::new();
    macro_rules! bail {
        ($e:expr) => {
            return Err(RunAbort {
                error: $e.into(),
                history,
            })
        };
    }
    if let Err(e) = schedule.validate() {
        bail!(e);
    }
    let stop_tol = opts.stop_tol.unwrap_or_else(|| {
        let norm: f64 = plan.tasks.iter().map(|tp| sum_squares(&gather(model.params(), tp))).sum::<f64>().sqrt();
        DEFAULT_RELATIVE_STOP_TOL * norm
    });
    let mut state = EngineState::new(plan, schedule.mu0);

    let stats = match c_step_all_with(model.params(), plan, &mut state, 0.0, opts.sequential, solve) {
        Ok(s) => s,
        Err(e) => bail!(e),
    };
    let m = mismatch(model.params(), plan, &state);
    history.push(record(model, plan, &state, opts, &mut eval, 0, 0.0, None, &stats, m));

    let mut converged = false;
    for i in 0..schedule.num_steps {
        let mu = schedule.mu(i);
        let penalty = build_penalty(model.params(), plan, &state, mu);
        let l = match l_step(model, &penalty, i) {
            Ok(l) => l,
            Err(source) => bail!(EngineError::LStep { step: i + 1, source }),
        };
        let stats = match c_step_all_with(model.params(), plan, &mut state, mu, opts.sequential, solve) {
            Ok(s) => s,
            Err(e) => bail!(e),
        };
        multipliers_step(model.params(), plan, &mut state, mu, schedule.mode);
        let m = mismatch(model.params(), plan, &state);
        history.push(record(model, plan, &state, opts, &mut eval, i + 1, mu, Some(l), &stats, m));
        if m <= stop_tol {
            converged = true;
            break;
        }
    }
    Ok(RunOutcome {
        history,
        state,
        converged,
        stop_tol,
    })
}

#[allow(clippy::too_many_arguments)]
fn record<M, E>(
    model: &mut M,
    plan: &Plan,
    state: &EngineState,
    opts: &RunOptions,
    eval: &mut E,
    step: usize,
    mu: f64,
    l: Option<LStepOutcome>,
    stats: &[CStepStats],
    mismatch: f64,
) -> StepRecord
where
    M: LossModel + ?Sized,
    E: FnMut(&M) -> EvalResult,
{
    let uncompressed = opts.eval_uncompressed.then(|| eval(model));
    let saved: Vec<Vec<f64>> = plan.tasks.iter().map(|tp| gather(model.params(), tp)).collect();
    apply_compressed(model.params_mut(), plan, state);
    let compressed = eval(model);
    for (tp, w) in plan.tasks.iter().zip(&saved) {
        scatter(model.params_mut(), tp, w);
    }
    StepRecord {
        step,
        mu,
        l_loss_before: l.map(|l| l.loss_before),
        l_loss_after: l.map(|l| l.loss_after),
        c_distortion: stats.iter().map(|s| s.distortion).collect(),
        c_objective_before: stats.iter().map(|s| s.objective_before).collect(),
        c_objective: stats.iter().map(|s| s.objective).collect(),
        mismatch,
        compressed,
        uncompressed,
    }
}

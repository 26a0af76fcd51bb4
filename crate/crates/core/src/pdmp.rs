//! The augmented chain `Φ̄ = (Y_n, ξ_n, τ_n)`, the post-jump chain `Φ`, the
//! interpolated process `Ψ`, and the operators `G` (flow for an `Exp(λ)` time)
//! and `W` (jump, then switch).
//!
//! One step from `(y, i, s)` draws, in this order, `h ~ Exp(λ)`, the jump
//! `y' ~ J(S_i(h, y), ·)` and the regime `j ~ π_{i·}`, and moves to
//! `(y', j, s + h)`.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::jump::{sample_jump, JumpKernel};
use crate::rng::{Purpose, RngStream};
use crate::scalar::Real;
use crate::semiflow::SemiflowSpec;
use crate::state::{AugmentedState, HybridMetric, HybridState};

/// Version tag written at the top of every CSV export.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// The full model `(S, J, π, λ, y*, ρ_{X,c})`.
#[derive(Debug, Clone)]
pub struct ModelSpec<T> {
    flows: SemiflowSpec<T>,
    jump: JumpKernel<T>,
    pi: Vec<Vec<T>>,
    lambda: T,
    ystar: Vec<T>,
    metric: HybridMetric<T>,
    nonnegative: bool,
}

impl<T: Real> ModelSpec<T> {
    pub fn new(
        flows: SemiflowSpec<T>,
        jump: JumpKernel<T>,
        pi: Vec<Vec<T>>,
        lambda: T,
        ystar: Vec<T>,
        metric: HybridMetric<T>,
    ) -> Result<Self> {
        let d = flows.dim();
        check_dim(d, jump.dim())?;
        check_dim(d, ystar.len())?;
        metric.base.validate(d)?;
        let n = flows.n_regimes();
        if pi.len() != n {
            return Err(Error::Config(format!("switching matrix has {} rows for {n} regimes", pi.len())));
        }
        let tol = T::of(1e-12).max(T::epsilon() * T::of_usize(16 * n));
        for (i, row) in pi.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Config(format!("switching matrix row {i} has {} entries, need {n}", row.len())));
            }
            if row.iter().any(|&p| !(p >= T::zero()) || !p.is_finite()) {
                return Err(Error::Config(format!("switching matrix row {i} has a negative or non-finite entry")));
            }
            let total: T = row.iter().copied().sum();
            if (total - T::one()).abs() > tol {
                return Err(Error::Config(format!("switching matrix row {i} sums to {total}, not 1")));
            }
        }
        if !(lambda > T::zero()) || !lambda.is_finite() {
            return Err(Error::Config(format!("jump rate lambda must be positive, got {lambda}")));
        }
        if ystar.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("reference point y* must be finite".into()));
        }
        Ok(Self { flows, jump, pi, lambda, ystar, metric, nonnegative: false })
    }

    /// Marks `Y = [0, ∞)^d`. The dynamics must preserve it; violations are
    /// caught by debug assertions, never corrected.
    pub fn with_nonnegative_domain(mut self) -> Self {
        self.nonnegative = true;
        self
    }

    pub fn flows(&self) -> &SemiflowSpec<T> {
        &self.flows
    }

    pub fn jump(&self) -> &JumpKernel<T> {
        &self.jump
    }

    pub fn pi(&self) -> &[Vec<T>] {
        &self.pi
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn ystar(&self) -> &[T] {
        &self.ystar
    }

    pub fn metric(&self) -> &HybridMetric<T> {
        &self.metric
    }

    pub fn is_nonnegative(&self) -> bool {
        self.nonnegative
    }

    pub fn dim(&self) -> usize {
        self.flows.dim()
    }

    pub fn n_regimes(&self) -> usize {
        self.flows.n_regimes()
    }

    /// Same model with another regime weight `c`.
    pub fn with_metric(mut self, metric: HybridMetric<T>) -> Result<Self> {
        metric.base.validate(self.dim())?;
        self.metric = metric;
        Ok(self)
    }

    pub fn validate_state(&self, x: &HybridState<T>) -> Result<()> {
        check_dim(self.dim(), x.dim())?;
        if x.regime >= self.n_regimes() {
            return Err(Error::Input(format!("regime {} out of range (model has {})", x.regime, self.n_regimes())));
        }
        if x.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("state coordinates must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn debug_check_domain(&self, y: &[T]) {
        debug_assert!(
            !self.nonnegative || y.iter().all(|&v| v >= T::zero()),
            "state left the nonnegative domain: {y:?}"
        );
    }

    /// Switch draw `j ~ π_{i·}`.
    #[inline]
    pub(crate) fn switch(&self, i: usize, rng: &mut RngStream) -> usize {
        if self.pi.len() == 1 {
            0
        } else {
            rng.categorical(&self.pi[i])
        }
    }
}

/// Post-jump states `Φ_n` and jump times `τ_n` (with `τ_0 = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrajectory<T> {
    pub states: Vec<HybridState<T>>,
    pub jump_times: Vec<T>,
}

impl<T: Real> ChainTrajectory<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Last simulated jump time.
    pub fn horizon(&self) -> T {
        *self.jump_times.last().expect("trajectory holds at least the initial state")
    }
}

/// One step of `P̄`, with the state already validated.
pub(crate) fn step_unchecked<T: Real>(
    model: &ModelSpec<T>,
    state: &AugmentedState<T>,
    rng: &mut RngStream,
) -> Result<AugmentedState<T>> {
    let i = state.x.regime;
    let h = rng.exponential(model.lambda);
    let v = model.flows.apply(i, h, &state.x.y);
    let y = sample_jump(&model.jump, &v, rng)?;
    model.debug_check_domain(&y);
    let j = model.switch(i, rng);
    Ok(AugmentedState { x: HybridState { y, regime: j }, tau: state.tau + h })
}

/// One transition of the augmented chain `Φ̄`.
pub fn step_chain<T: Real>(
    model: &ModelSpec<T>,
    state: &AugmentedState<T>,
    rng: &mut RngStream,
) -> Result<AugmentedState<T>> {
    model.validate_state(&state.x)?;
    step_unchecked(model, state, rng)
}

/// `n` steps of `Φ̄` from `(x0, 0)`.
pub fn simulate_chain<T: Real>(
    model: &ModelSpec<T>,
    x0: &HybridState<T>,
    n: usize,
    rng: &mut RngStream,
) -> Result<ChainTrajectory<T>> {
    model.validate_state(x0)?;
    let mut states = Vec::with_capacity(n + 1);
    let mut jump_times = Vec::with_capacity(n + 1);
    let mut cur = AugmentedState::at_origin(x0.clone());
    states.push(cur.x.clone());
    jump_times.push(cur.tau);
    for _ in 0..n {
        cur = step_unchecked(model, &cur, rng)?;
        states.push(cur.x.clone());
        jump_times.push(cur.tau);
    }
    Ok(ChainTrajectory { states, jump_times })
}

/// `Ψ(t) = (S_{ξ_n}(t − τ_n, Y_n), ξ_n)` for `τ_n ≤ t < τ_{n+1}`.
pub fn process_at<T: Real>(model: &ModelSpec<T>, traj: &ChainTrajectory<T>, t: T) -> Result<HybridState<T>> {
    if !(t >= T::zero()) {
        return Err(Error::Input(format!("process time must be nonnegative, got {t}")));
    }
    let horizon = traj.horizon();
    if t >= horizon {
        return Err(Error::Horizon { t: t.as_f64(), horizon: horizon.as_f64() });
    }
    let n = traj.jump_times.partition_point(|&s| s <= t) - 1;
    let x = &traj.states[n];
    let y = model.flows.apply(x.regime, t - traj.jump_times[n], &x.y);
    Ok(HybridState { y, regime: x.regime })
}

/// `Ψ(t)` from `x0`, simulated only as far as needed.
pub fn sample_process_at<T: Real>(
    model: &ModelSpec<T>,
    x0: &HybridState<T>,
    t: T,
    rng: &mut RngStream,
) -> Result<HybridState<T>> {
    model.validate_state(x0)?;
    if !(t >= T::zero()) {
        return Err(Error::Input(format!("process time must be nonnegative, got {t}")));
    }
    let mut x = x0.clone();
    let mut tau = T::zero();
    loop {
        let h = rng.exponential(model.lambda);
        if tau + h > t {
            let y = model.flows.apply(x.regime, t - tau, &x.y);
            return Ok(HybridState { y, regime: x.regime });
        }
        let v = model.flows.apply(x.regime, h, &x.y);
        let y = sample_jump(&model.jump, &v, rng)?;
        let j = model.switch(x.regime, rng);
        x = HybridState { y, regime: j };
        tau += h;
    }
}

/// `G((y, i), ·)`: flow for an `Exp(λ)` time, keep the regime.
pub fn apply_g<T: Real>(model: &ModelSpec<T>, x: &HybridState<T>, rng: &mut RngStream) -> Result<HybridState<T>> {
    model.validate_state(x)?;
    let h = rng.exponential(model.lambda);
    Ok(HybridState { y: model.flows.apply(x.regime, h, &x.y), regime: x.regime })
}

/// `W((y, i), ·)`: jump via `J`, then switch via `π`.
pub fn apply_w<T: Real>(model: &ModelSpec<T>, x: &HybridState<T>, rng: &mut RngStream) -> Result<HybridState<T>> {
    model.validate_state(x)?;
    let y = sample_jump(&model.jump, &x.y, rng)?;
    let j = model.switch(x.regime, rng);
    Ok(HybridState { y, regime: j })
}

/// `Φ_n` for `n_runs` independent runs from `x0`; run `k` uses stream
/// `(k, Chain)`, so the result does not depend on the thread count.
pub fn sample_chain_at<T: Real>(
    model: &ModelSpec<T>,
    x0: &HybridState<T>,
    n: usize,
    n_runs: usize,
    seed: u64,
) -> Result<Vec<HybridState<T>>> {
    model.validate_state(x0)?;
    (0..n_runs as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::for_task(seed, k, Purpose::Chain);
            let mut cur = AugmentedState::at_origin(x0.clone());
            for _ in 0..n {
                cur = step_unchecked(model, &cur, &mut rng)?;
            }
            Ok(cur.x)
        })
        .collect()
}

/// `Ψ(t)` for `n_runs` independent runs from `x0` (streams `(k, Process)`).
pub fn sample_process_many<T: Real>(
    model: &ModelSpec<T>,
    x0: &HybridState<T>,
    t: T,
    n_runs: usize,
    seed: u64,
) -> Result<Vec<HybridState<T>>> {
    (0..n_runs as u64)
        .into_par_iter()
        .map(|k| sample_process_at(model, x0, t, &mut RngStream::for_task(seed, k, Purpose::Process)))
        .collect()
}

/// Pushes every state through `G` (streams `(k, OperatorG)`).
pub fn apply_g_many<T: Real>(model: &ModelSpec<T>, xs: &[HybridState<T>], seed: u64) -> Result<Vec<HybridState<T>>> {
    xs.par_iter()
        .enumerate()
        .map(|(k, x)| apply_g(model, x, &mut RngStream::for_task(seed, k as u64, Purpose::OperatorG)))
        .collect()
}

/// Pushes every state through `W` (streams `(k, OperatorW)`).
pub fn apply_w_many<T: Real>(model: &ModelSpec<T>, xs: &[HybridState<T>], seed: u64) -> Result<Vec<HybridState<T>>> {
    xs.par_iter()
        .enumerate()
        .map(|(k, x)| apply_w(model, x, &mut RngStream::for_task(seed, k as u64, Purpose::OperatorW)))
        .collect()
}

/// Writes trajectories as CSV with columns `n, tau, y_0..y_{d-1}, regime`,
/// preceded by a `# schema_version` line. Consecutive trajectories are
/// concatenated; each restarts at `n = 0`.
pub fn write_trajectories_csv<T: Real, W: Write>(out: W, trajs: &[ChainTrajectory<T>]) -> Result<()> {
    let mut out = out;
    let io = |e: std::io::Error| Error::Internal(format!("csv write failed: {e}"));
    writeln!(out, "# schema_version: {CSV_SCHEMA_VERSION}").map_err(io)?;
    let d = trajs.first().map_or(1, |t| t.states[0].dim());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["n".to_string(), "tau".to_string()];
    header.extend((0..d).map(|k| format!("y_{k}")));
    header.push("regime".into());
    w.write_record(&header).map_err(csv_err)?;
    let mut row = Vec::with_capacity(d + 3);
    for traj in trajs {
        for (n, (x, tau)) in traj.states.iter().zip(&traj.jump_times).enumerate() {
            row.clear();
            row.push(n.to_string());
            row.push(tau.as_f64().to_string());
            row.extend(x.y.iter().map(|v| v.as_f64().to_string()));
            row.push(x.regime.to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Internal(format!("csv error: {e}"))
}

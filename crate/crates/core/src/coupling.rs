//! Exact sampler of the coupled kernel `P̂ = Q̄_P + R̄_P` for two copies of
//! the chain sharing one jump clock.
//!
//! A step from `((y1,i1),(y2,i2),s)` draws one holding time `h ~ Exp(λ)` for
//! both coordinates and flows `v_k = S_{i_k}(h, y_k)`. With probability
//! `q(h) = Σ_j (π_{i1 j} ∧ π_{i2 j}) · Σ_θ (p_θ(v1) ∧ p_θ(v2))` both
//! coordinates take the same regime and the same jump (the `Q` branch).
//! Otherwise each coordinate draws `(j, θ)` independently from its residual
//! weights `π_{i_k j} p_θ(v_k) − (π_{i1 j} ∧ π_{i2 j})(p_θ(v1) ∧ p_θ(v2))`
//! (the `R` branch).
//!
//! The residual is formed for the drawn `h` rather than after integrating
//! `h` out. Each coordinate still moves by `P(x_k, ·)`, the clock increment is
//! still `Exp(λ)`, and the `Q` branch is exactly `Q̄_P`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdmp::{csv_err, ModelSpec, CSV_SCHEMA_VERSION};
use crate::rng::RngStream;
use crate::scalar::{max, min, Real};
use crate::state::HybridState;

/// A point `(x1, x2, τ̃)` of `Z = X² × ℝ_+`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledState<T> {
    pub x1: HybridState<T>,
    pub x2: HybridState<T>,
    pub tau: T,
}

impl<T: Real> CoupledState<T> {
    pub fn new(x1: HybridState<T>, x2: HybridState<T>) -> Self {
        Self { x1, x2, tau: T::zero() }
    }
}

/// Which part of `P̂` produced a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    Q,
    R,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Q => "Q",
            Branch::R => "R",
        }
    }
}

/// A simulated coupled trajectory.
///
/// States are stored raw. With `identified` set, accessors replace the second
/// regime by the first one at every step `n > κ`; the second position
/// `Y^{(2)}` is never altered.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledTrace<T> {
    pub states: Vec<CoupledState<T>>,
    pub branches: Vec<Branch>,
    /// First `n` with `ξ_n^{(1)} = ξ_n^{(2)}`; `None` if it never happened.
    pub kappa: Option<usize>,
    pub identified: bool,
}

impl<T: Real> CoupledTrace<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn horizon(&self) -> T {
        self.states.last().expect("trace holds the initial state").tau
    }

    /// Regime of the second coordinate at step `n` under the given mode.
    pub fn second_regime(&self, n: usize, identify: bool) -> usize {
        let z = &self.states[n];
        match self.kappa {
            Some(k) if identify && n > k => z.x1.regime,
            _ => z.x2.regime,
        }
    }

    /// `(Φ_n^{(1)}, Φ_n^{(2)})` under the trace's own mode.
    pub fn pair(&self, n: usize) -> (HybridState<T>, HybridState<T>) {
        let z = &self.states[n];
        let x2 = HybridState { y: z.x2.y.clone(), regime: self.second_regime(n, self.identified) };
        (z.x1.clone(), x2)
    }
}

/// Scratch space reused across steps.
#[derive(Debug, Default)]
struct Work<T> {
    p1: Vec<T>,
    p2: Vec<T>,
    pmin: Vec<T>,
    pimin: Vec<T>,
    resid: Vec<T>,
}

/// Coupled mass `q(h)` at a given holding time.
pub fn coupled_step_mass<T: Real>(model: &ModelSpec<T>, z: &CoupledState<T>, h: T) -> Result<T> {
    let mut w = Work::default();
    let v1 = model.flows().apply(z.x1.regime, h, &z.x1.y);
    let v2 = model.flows().apply(z.x2.regime, h, &z.x2.y);
    let (m, s) = overlaps(model, z, &v1, &v2, &mut w)?;
    Ok(m * s)
}

fn overlaps<T: Real>(model: &ModelSpec<T>, z: &CoupledState<T>, v1: &[T], v2: &[T], w: &mut Work<T>) -> Result<(T, T)> {
    let pi = model.pi();
    let (r1, r2) = (&pi[z.x1.regime], &pi[z.x2.regime]);
    w.pimin.clear();
    w.pimin.extend(r1.iter().zip(r2).map(|(&a, &b)| min(a, b)));
    let m: T = w.pimin.iter().copied().sum();
    model.jump().symbol_probs(v1, &mut w.p1)?;
    model.jump().symbol_probs(v2, &mut w.p2)?;
    w.pmin.clear();
    w.pmin.extend(w.p1.iter().zip(&w.p2).map(|(&a, &b)| min(a, b)));
    let s: T = w.pmin.iter().copied().sum();
    Ok((m, s))
}

const INVARIANT_TOL: f64 = 1e-12;

fn step_with<T: Real>(
    model: &ModelSpec<T>,
    z: &CoupledState<T>,
    rng: &mut RngStream,
    w: &mut Work<T>,
) -> Result<(CoupledState<T>, Branch)> {
    let jump = model.jump();
    let (i1, i2) = (z.x1.regime, z.x2.regime);
    let h = rng.exponential(model.lambda());
    let v1 = model.flows().apply(i1, h, &z.x1.y);
    let v2 = model.flows().apply(i2, h, &z.x2.y);
    let (m, s) = overlaps(model, z, &v1, &v2, w)?;
    let q = m * s;
    if q > T::one() + T::of(INVARIANT_TOL) {
        return Err(Error::Internal(format!("coupled mass {q} exceeds 1")));
    }
    let tau = z.tau + h;
    let u = rng.uniform();

    let mut residual = T::of(u) >= q;
    let k = jump.n_symbols();
    let n_reg = model.n_regimes();
    let mut draws = [(0usize, 0usize); 2];
    if residual {
        for (c, (row, p)) in [(&model.pi()[i1], &w.p1), (&model.pi()[i2], &w.p2)].into_iter().enumerate() {
            w.resid.clear();
            for j in 0..n_reg {
                for t in 0..k {
                    let r = row[j] * p[t] - w.pimin[j] * w.pmin[t];
                    if r < -T::of(INVARIANT_TOL) {
                        return Err(Error::Internal(format!("negative residual weight {r}")));
                    }
                    w.resid.push(max(r, T::zero()));
                }
            }
            let total: T = w.resid.iter().copied().sum();
            if !(total > T::zero()) {
                // q rounded to just below 1 and u landed in the gap; the
                // residual has no mass, so the step is a Q step.
                residual = false;
                break;
            }
            let idx = rng.categorical(&w.resid);
            draws[c] = (idx / k, idx % k);
        }
    }

    if !residual {
        let j = if n_reg == 1 { 0 } else { rng.categorical(&w.pimin) };
        let theta = if k == 1 { 0 } else { rng.categorical(&w.pmin) };
        let e = jump.draw_innovation(rng);
        let y1 = jump.apply(theta, e, &v1);
        let y2 = jump.apply(theta, e, &v2);
        model.debug_check_domain(&y1);
        model.debug_check_domain(&y2);
        let next = CoupledState { x1: HybridState { y: y1, regime: j }, x2: HybridState { y: y2, regime: j }, tau };
        return Ok((next, Branch::Q));
    }

    let e1 = jump.draw_innovation(rng);
    let e2 = jump.draw_innovation(rng);
    let y1 = jump.apply(draws[0].1, e1, &v1);
    let y2 = jump.apply(draws[1].1, e2, &v2);
    model.debug_check_domain(&y1);
    model.debug_check_domain(&y2);
    let next = CoupledState {
        x1: HybridState { y: y1, regime: draws[0].0 },
        x2: HybridState { y: y2, regime: draws[1].0 },
        tau,
    };
    Ok((next, Branch::R))
}

fn validate<T: Real>(model: &ModelSpec<T>, z: &CoupledState<T>) -> Result<()> {
    model.validate_state(&z.x1)?;
    model.validate_state(&z.x2)?;
    if !(z.tau >= T::zero()) {
        return Err(Error::Input("coupled clock must be nonnegative".into()));
    }
    Ok(())
}

/// One transition of `P̂`.
pub fn step_coupled<T: Real>(
    model: &ModelSpec<T>,
    z: &CoupledState<T>,
    rng: &mut RngStream,
) -> Result<(CoupledState<T>, Branch)> {
    validate(model, z)?;
    step_with(model, z, rng, &mut Work::default())
}

/// `n` steps of `P̂` from `(x1, x2, 0)`, recording branches and `κ`.
pub fn simulate_coupled<T: Real>(
    model: &ModelSpec<T>,
    x1: &HybridState<T>,
    x2: &HybridState<T>,
    n: usize,
    rng: &mut RngStream,
    identify_regimes: bool,
) -> Result<CoupledTrace<T>> {
    run(model, x1, x2, rng, identify_regimes, |len, _| len > n)
}

/// Steps `P̂` until the shared clock passes `t_max`, so that the coupled
/// process is defined on `[0, t_max]`.
pub fn simulate_coupled_until<T: Real>(
    model: &ModelSpec<T>,
    x1: &HybridState<T>,
    x2: &HybridState<T>,
    t_max: T,
    rng: &mut RngStream,
    identify_regimes: bool,
) -> Result<CoupledTrace<T>> {
    if !(t_max >= T::zero()) || !t_max.is_finite() {
        return Err(Error::Input(format!("time horizon must be finite and nonnegative, got {t_max}")));
    }
    run(model, x1, x2, rng, identify_regimes, |_, tau| tau > t_max)
}

fn run<T: Real>(
    model: &ModelSpec<T>,
    x1: &HybridState<T>,
    x2: &HybridState<T>,
    rng: &mut RngStream,
    identified: bool,
    done: impl Fn(usize, T) -> bool,
) -> Result<CoupledTrace<T>> {
    let mut z = CoupledState::new(x1.clone(), x2.clone());
    validate(model, &z)?;
    let mut w = Work::default();
    let mut kappa = (x1.regime == x2.regime).then_some(0);
    let mut states = vec![z.clone()];
    let mut branches = Vec::new();
    while !done(states.len(), z.tau) {
        let (next, b) = step_with(model, &z, rng, &mut w)?;
        if kappa.is_none() && next.x1.regime == next.x2.regime {
            kappa = Some(states.len());
        }
        branches.push(b);
        states.push(next.clone());
        z = next;
    }
    Ok(CoupledTrace { states, branches, kappa, identified })
}

/// Streams `n_steps` steps of `P̂` without storing them, calling
/// `visit(n, Φ_n^{(1)}, Φ_n^{(2)})` for `n = 1..=n_steps` (second regime
/// identified after `κ` when requested).
pub fn visit_coupled_chain<T: Real>(
    model: &ModelSpec<T>,
    x1: &HybridState<T>,
    x2: &HybridState<T>,
    n_steps: usize,
    rng: &mut RngStream,
    identify_regimes: bool,
    mut visit: impl FnMut(usize, &HybridState<T>, &HybridState<T>),
) -> Result<()> {
    let mut z = CoupledState::new(x1.clone(), x2.clone());
    validate(model, &z)?;
    let mut w = Work::default();
    let mut kappa = (x1.regime == x2.regime).then_some(0);
    let mut x2v = x2.clone();
    for n in 1..=n_steps {
        z = step_with(model, &z, rng, &mut w)?.0;
        if kappa.is_none() && z.x1.regime == z.x2.regime {
            kappa = Some(n);
        }
        x2v.y.clone_from(&z.x2.y);
        x2v.regime = match kappa {
            Some(k) if identify_regimes && n > k => z.x1.regime,
            _ => z.x2.regime,
        };
        visit(n, &z.x1, &x2v);
    }
    Ok(())
}

/// Streams one coupled run and calls `visit(k, Ψ^{(1)}(t_k), Ψ^{(2)}(t_k))`
/// for each time of an increasing grid.
pub fn visit_coupled_process<T: Real>(
    model: &ModelSpec<T>,
    x1: &HybridState<T>,
    x2: &HybridState<T>,
    grid: &[T],
    rng: &mut RngStream,
    identify_regimes: bool,
    mut visit: impl FnMut(usize, &HybridState<T>, &HybridState<T>),
) -> Result<()> {
    check_grid(grid)?;
    let mut z = CoupledState::new(x1.clone(), x2.clone());
    validate(model, &z)?;
    let mut w = Work::default();
    let mut kappa = (x1.regime == x2.regime).then_some(0);
    let mut n = 0;
    let mut next: Option<CoupledState<T>> = None;
    for (k, &t) in grid.iter().enumerate() {
        loop {
            let cand = match next.take() {
                Some(c) => c,
                None => step_with(model, &z, rng, &mut w)?.0,
            };
            if cand.tau <= t {
                z = cand;
                n += 1;
                if kappa.is_none() && z.x1.regime == z.x2.regime {
                    kappa = Some(n);
                }
            } else {
                next = Some(cand);
                break;
            }
        }
        let i2 = match kappa {
            Some(kk) if identify_regimes && n > kk => z.x1.regime,
            _ => z.x2.regime,
        };
        let dt = t - z.tau;
        let a = HybridState { y: model.flows().apply(z.x1.regime, dt, &z.x1.y), regime: z.x1.regime };
        let b = HybridState { y: model.flows().apply(i2, dt, &z.x2.y), regime: i2 };
        visit(k, &a, &b);
    }
    Ok(())
}

pub(crate) fn check_grid<T: Real>(grid: &[T]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Input("time grid is empty".into()));
    }
    if !(grid[0] >= T::zero()) || grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Input("time grid must be finite, nonnegative and strictly increasing".into()));
    }
    Ok(())
}

/// `(Ψ^{(1)}(t), Ψ^{(2)}(t))` on the shared clock.
pub fn coupled_process_at<T: Real>(
    model: &ModelSpec<T>,
    trace: &CoupledTrace<T>,
    t: T,
    identify_regimes: bool,
) -> Result<(HybridState<T>, HybridState<T>)> {
    if !(t >= T::zero()) {
        return Err(Error::Input(format!("process time must be nonnegative, got {t}")));
    }
    let horizon = trace.horizon();
    if t >= horizon {
        return Err(Error::Horizon { t: t.as_f64(), horizon: horizon.as_f64() });
    }
    let n = trace.states.partition_point(|z| z.tau <= t) - 1;
    let z = &trace.states[n];
    let dt = t - z.tau;
    let i2 = trace.second_regime(n, identify_regimes);
    let y1 = model.flows().apply(z.x1.regime, dt, &z.x1.y);
    let y2 = model.flows().apply(i2, dt, &z.x2.y);
    Ok((HybridState { y: y1, regime: z.x1.regime }, HybridState { y: y2, regime: i2 }))
}

/// Writes a trace as CSV with columns
/// `n, tau, y1_*, i1, y2_*, i2, branch, rho_bar`; `branch` is the branch of
/// the step that produced row `n` (empty at `n = 0`), and both the second
/// regime and `rho_bar` follow the trace's identification mode.
pub fn write_coupled_csv<T: Real, W: Write>(out: W, model: &ModelSpec<T>, traces: &[CoupledTrace<T>]) -> Result<()> {
    let mut out = out;
    let io = |e: std::io::Error| Error::Internal(format!("csv write failed: {e}"));
    writeln!(out, "# schema_version: {CSV_SCHEMA_VERSION}").map_err(io)?;
    let d = model.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["n".to_string(), "tau".to_string()];
    header.extend((0..d).map(|k| format!("y1_{k}")));
    header.push("i1".into());
    header.extend((0..d).map(|k| format!("y2_{k}")));
    header.extend(["i2".into(), "branch".into(), "rho_bar".into()]);
    w.write_record(&header).map_err(csv_err)?;
    let metric = model.metric();
    let mut row = Vec::new();
    for trace in traces {
        for n in 0..trace.len() {
            let (x1, x2) = trace.pair(n);
            row.clear();
            row.push(n.to_string());
            row.push(trace.states[n].tau.as_f64().to_string());
            row.extend(x1.y.iter().map(|v| v.as_f64().to_string()));
            row.push(x1.regime.to_string());
            row.extend(x2.y.iter().map(|v| v.as_f64().to_string()));
            row.push(x2.regime.to_string());
            row.push(if n == 0 { String::new() } else { trace.branches[n - 1].as_str().to_string() });
            row.push(min(metric.eval(&x1, &x2), T::one()).as_f64().to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jump::{AdditiveBurst, AffineMap, FiniteIfs, JumpKernel, PlaceProbs};
    use crate::pdmp::step_chain;
    use crate::rng::Purpose;
    use crate::semiflow::SemiflowSpec;
    use crate::state::{AugmentedState, HybridMetric};
    use crate::stats::mean_se;

    fn bursts(pi: Vec<Vec<f64>>) -> ModelSpec<f64> {
        ModelSpec::new(
            SemiflowSpec::affine(vec![-1.0, -2.0], vec![vec![0.0], vec![0.0]]).unwrap(),
            JumpKernel::Burst(AdditiveBurst::exponential(1.0).unwrap()),
            pi,
            1.0,
            vec![0.0],
            HybridMetric::euclidean(8.0).unwrap(),
        )
        .unwrap()
    }

    fn place_dependent() -> ModelSpec<f64> {
        let ifs = FiniteIfs::new(
            vec![AffineMap::scalar(0.5, 0.0), AffineMap::scalar(0.5, 1.0)],
            PlaceProbs::InverseDistance { base: 0.3, amplitude: 0.4 },
        )
        .unwrap();
        ModelSpec::new(
            SemiflowSpec::affine(vec![-1.0, -2.0], vec![vec![0.0], vec![0.0]]).unwrap(),
            JumpKernel::Ifs(ifs),
            vec![vec![0.7, 0.3], vec![0.4, 0.6]],
            1.0,
            vec![0.0],
            HybridMetric::euclidean(5.0).unwrap(),
        )
        .unwrap()
    }

    fn rng(k: u64) -> RngStream {
        RngStream::for_task(17, k, Purpose::Coupled)
    }

    fn s(y: f64, i: usize) -> HybridState<f64> {
        HybridState::scalar(y, i)
    }

    #[test]
    fn equal_starts_stay_equal() {
        let m = place_dependent();
        let tr = simulate_coupled(&m, &s(1.5, 1), &s(1.5, 1), 200, &mut rng(0), false).unwrap();
        assert_eq!(tr.kappa, Some(0));
        assert!(tr.branches.iter().all(|&b| b == Branch::Q));
        assert!(tr.states.iter().all(|z| z.x1 == z.x2));
    }

    #[test]
    fn identical_rows_and_bursts_always_couple() {
        let m = bursts(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let tr = simulate_coupled(&m, &s(0.0, 0), &s(3.0, 1), 100, &mut rng(1), false).unwrap();
        assert!(tr.branches.iter().all(|&b| b == Branch::Q));
        assert_eq!(tr.kappa, Some(1));
        for w in tr.states.windows(2).skip(1) {
            let (a, b) = (&w[0], &w[1]);
            // Same regime, so the gap contracts by exactly the shared flow factor.
            let k = if a.x1.regime == 0 { 1.0 } else { 2.0 };
            let gap = (a.x2.y[0] - a.x1.y[0]) * (-(k * (b.tau - a.tau))).exp();
            assert!((b.x2.y[0] - b.x1.y[0] - gap).abs() < 1e-12);
        }
    }

    #[test]
    fn branch_frequency_matches_mean_mass() {
        let m = place_dependent();
        let z = CoupledState::new(s(0.0, 0), s(2.0, 1));
        let n = 100_000;
        let mut r = rng(2);
        let q_hits = (0..n).filter(|_| step_coupled(&m, &z, &mut r).unwrap().1 == Branch::Q).count();
        let mut rh = rng(3);
        let qs: Vec<f64> = (0..n).map(|_| coupled_step_mass(&m, &z, rh.exponential(1.0)).unwrap()).collect();
        let (qbar, qse) = mean_se(&qs);
        let freq = q_hits as f64 / n as f64;
        let sd = (qbar * (1.0 - qbar) / n as f64).sqrt();
        assert!((freq - qbar).abs() < 3.0 * (sd * sd + qse * qse).sqrt(), "{freq} vs {qbar}");
    }

    #[test]
    fn q_steps_equalize_regimes() {
        let m = place_dependent();
        let mut saw_r = false;
        for k in 0..50 {
            let tr = simulate_coupled(&m, &s(-2.0, 0), &s(4.0, 1), 100, &mut rng(400 + k), false).unwrap();
            for (n, b) in tr.branches.iter().enumerate() {
                if *b == Branch::Q {
                    assert_eq!(tr.states[n + 1].x1.regime, tr.states[n + 1].x2.regime);
                }
            }
            saw_r |= tr.branches.contains(&Branch::R);
        }
        assert!(saw_r);
    }

    #[test]
    fn identification_after_kappa() {
        let m = place_dependent();
        for k in 0..200 {
            let tr = simulate_coupled(&m, &s(-1.0, 0), &s(3.0, 1), 40, &mut rng(100 + k), true).unwrap();
            let kappa = tr.kappa.expect("kappa is finite with positive column minima");
            assert!(kappa >= 1);
            assert_eq!(tr.states[kappa].x1.regime, tr.states[kappa].x2.regime);
            for n in (kappa + 1)..tr.len() {
                let (a, b) = tr.pair(n);
                assert_eq!(a.regime, b.regime);
                assert_eq!(b.y, tr.states[n].x2.y);
            }
        }
    }

    #[test]
    fn marginals_match_the_uncoupled_step() {
        let m = place_dependent();
        let z = CoupledState::new(s(0.0, 0), s(2.0, 1));
        let n = 100_000;
        let mut rc = rng(5);
        let mut rd = rng(6);
        let mut c1 = Vec::with_capacity(n);
        let mut c2 = Vec::with_capacity(n);
        let mut d1 = Vec::with_capacity(n);
        let mut d2 = Vec::with_capacity(n);
        let (mut reg_c, mut reg_d) = (0usize, 0usize);
        for _ in 0..n {
            let (next, _) = step_coupled(&m, &z, &mut rc).unwrap();
            c1.push(next.x1.y[0]);
            c2.push(next.x2.y[0]);
            reg_c += next.x2.regime;
            let a = step_chain(&m, &AugmentedState::at_origin(z.x1.clone()), &mut rd).unwrap();
            let b = step_chain(&m, &AugmentedState::at_origin(z.x2.clone()), &mut rd).unwrap();
            d1.push(a.x.y[0]);
            d2.push(b.x.y[0]);
            reg_d += b.x.regime;
        }
        for (a, b) in [(&c1, &d1), (&c2, &d2)] {
            let (ma, sa) = mean_se(a);
            let (mb, sb) = mean_se(b);
            assert!((ma - mb).abs() < 4.0 * (sa * sa + sb * sb).sqrt(), "{ma} vs {mb}");
        }
        let sd = (n as f64 * 0.6 * 0.4).sqrt();
        assert!((reg_c as f64 - 0.6 * n as f64).abs() < 4.0 * sd);
        assert!((reg_d as f64 - 0.6 * n as f64).abs() < 4.0 * sd);
    }

    #[test]
    fn process_interpolation_on_shared_clock() {
        let m = bursts(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let tr = simulate_coupled_until(&m, &s(0.0, 0), &s(3.0, 1), 20.0, &mut rng(7), true).unwrap();
        assert!(tr.horizon() > 20.0);
        let (a, b) = coupled_process_at(&m, &tr, tr.states[3].tau, true).unwrap();
        assert_eq!((a, b), tr.pair(3));
        let t = 0.5 * tr.states[1].tau;
        let (a, b) = coupled_process_at(&m, &tr, t, false).unwrap();
        assert!((a.y[0] - (-t).exp() * 0.0).abs() < 1e-15);
        assert!((b.y[0] - 3.0 * (-2.0 * t).exp()).abs() < 1e-15);
        assert!(matches!(coupled_process_at(&m, &tr, 1e9, true), Err(Error::Horizon { .. })));
        let same = simulate_coupled_until(&m, &s(1.0, 1), &s(1.0, 1), 5.0, &mut rng(8), true).unwrap();
        for k in 0..50 {
            let (a, b) = coupled_process_at(&m, &same, 0.1 * k as f64, true).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn streaming_visitors_match_stored_traces() {
        let m = place_dependent();
        let (a, b) = (s(-1.0, 0), s(3.0, 1));
        for identify in [false, true] {
            let tr = simulate_coupled(&m, &a, &b, 25, &mut rng(10), identify).unwrap();
            let mut seen = 0;
            visit_coupled_chain(&m, &a, &b, 25, &mut rng(10), identify, |n, x1, x2| {
                assert_eq!((x1.clone(), x2.clone()), tr.pair(n));
                seen += 1;
            })
            .unwrap();
            assert_eq!(seen, 25);
            let grid: Vec<f64> = (1..=10).map(|k| k as f64 * 0.7).collect();
            let tr = simulate_coupled_until(&m, &a, &b, 7.0, &mut rng(11), identify).unwrap();
            visit_coupled_process(&m, &a, &b, &grid, &mut rng(11), identify, |k, x1, x2| {
                let (e1, e2) = coupled_process_at(&m, &tr, grid[k], identify).unwrap();
                assert_eq!((x1, x2), (&e1, &e2));
            })
            .unwrap();
        }
        assert!(visit_coupled_process(&m, &a, &b, &[1.0, 0.5], &mut rng(12), true, |_, _, _| {}).is_err());
    }

    #[test]
    fn csv_columns() {
        let m = place_dependent();
        let tr = simulate_coupled(&m, &s(0.0, 0), &s(2.0, 1), 3, &mut rng(9), false).unwrap();
        let mut buf = Vec::new();
        write_coupled_csv(&mut buf, &m, &[tr]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "n,tau,y1_0,i1,y2_0,i2,branch,rho_bar");
        assert_eq!(lines[2], "0,0,0,0,2,1,,1");
        assert_eq!(lines.len(), 6);
    }
}

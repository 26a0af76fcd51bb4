//! Drift and coupling constants, hypothesis checks and the Monte Carlo
//! diagnostics built on the simulators: Lyapunov drift, contraction and decay
//! rates of the coupling, and the correspondence between the invariant laws
//! of the chain and of the process.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{visit_coupled_chain, visit_coupled_process};
use crate::error::{Error, Result};
use crate::fm::fm_distance_between;
use crate::jump::{check_jump_hypotheses, sample_jump, JumpRegularityCertificate};
use crate::pdmp::{
    apply_g_many, apply_w_many, csv_err, sample_chain_at, sample_process_many, step_chain, ModelSpec,
    CSV_SCHEMA_VERSION,
};
use crate::quad::integrate_half_line;
use crate::report::CheckReport;
use crate::rng::{Purpose, RngStream};
use crate::scalar::{min, Real};
use crate::semiflow::{check_a3, check_a4, BoxSampler, FlowRegularityCertificate, SemiflowSpec, QUAD_REL_TOL};
use crate::state::{AugmentedState, EmpiricalMeasure, HybridState};
use crate::stats::Moments;

/// Nodes of the Halton grid used for sampled suprema of `𝓛`.
pub const SUP_NODES: usize = 10_000;
/// Fewest points a rate fit accepts.
pub const MIN_FIT_POINTS: usize = 5;
/// The noise floor of a mean is this many standard errors.
pub const NOISE_FLOOR_SE: f64 = 3.0;
/// A mean enters the fit window while it exceeds this multiple of its floor.
pub const WINDOW_FACTOR: f64 = 10.0;
/// Standard errors of slack allowed in Monte Carlo drift checks.
pub const DRIFT_SLACK_SE: f64 = 3.0;
pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// Largest FM distance accepted between two estimates of the same law.
pub const FM_BUDGET: f64 = 0.05;
/// Largest accepted ratio of a distance to the same-law baseline.
pub const BASELINE_FACTOR: f64 = 2.0;

/// Pairs per parallel work unit. Fixed, so reductions do not depend on the
/// number of threads.
const CHUNK: usize = 256;

/// Seed of an independent replicate, for same-law baselines.
pub fn baseline_seed(seed: u64) -> u64 {
    use rand::RngCore;
    RngStream::for_task(seed, 0, Purpose::Baseline).next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantInputs {
    pub a_tilde: f64,
    pub b_tilde: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub alpha: f64,
    pub lambda: f64,
}

/// Constants of the drift condition `PV ≤ aV + b` and the lower bound on the
/// regime weight `c`.
///
/// When `a ≥ 1` the ball radius `R`, `M_L` and `c_min` are undefined and left
/// empty; `violated` names the failing inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub a: f64,
    pub b: f64,
    #[serde(rename = "R")]
    pub r: Option<f64>,
    #[serde(rename = "M_L")]
    pub m_l: Option<f64>,
    #[serde(rename = "M_phi")]
    pub m_phi: f64,
    #[serde(rename = "K_phi")]
    pub k_phi: f64,
    pub t0: f64,
    pub c_min: Option<f64>,
    /// `max_i ∫ e^{−λt} ρ_Y(S_i(t,y*), y*) dt`.
    pub flow_integral: f64,
    pub hypotheses_hold: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violated: Option<String>,
    /// Suprema that were sampled on a grid and inflated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sampled: Vec<String>,
    pub inputs: ConstantInputs,
}

/// `a = ãλL/(λ − α)`.
pub fn drift_factor(a_tilde: f64, lambda: f64, l: f64, alpha: f64) -> f64 {
    a_tilde * lambda * l / (lambda - alpha)
}

/// `t₀ = lim_{s→α} s⁻¹ ln(λ/(λ − s))`, evaluated through `ln_1p` so that it
/// is continuous across `α = 0`, where it equals `1/λ`.
pub fn t_zero(alpha: f64, lambda: f64) -> f64 {
    if alpha == 0.0 {
        1.0 / lambda
    } else {
        -(-alpha / lambda).ln_1p() / alpha
    }
}

/// `max_i ∫₀^∞ e^{−λt} ρ_Y(S_i(t, y*), y*) dt`; closed form for affine flows,
/// adaptive quadrature otherwise. Infinite when some integral diverges.
pub fn flow_integral<T: Real>(model: &ModelSpec<T>) -> Result<f64> {
    let lambda = model.lambda().as_f64();
    let ystar = model.ystar();
    let base = &model.metric().base;
    match model.flows() {
        SemiflowSpec::Affine(f) => {
            let mut worst = 0.0f64;
            for (rate, r) in f.rates.iter().zip(&f.fixed_points) {
                let gap = base.eval(ystar, r).as_f64();
                if gap == 0.0 {
                    continue;
                }
                let rate = rate.as_f64();
                if rate >= lambda {
                    return Ok(f64::INFINITY);
                }
                worst = worst.max((1.0 / (lambda - rate) - 1.0 / lambda).abs() * gap);
            }
            Ok(worst)
        }
        flows @ SemiflowSpec::Integrated(_) => {
            let mut worst = 0.0f64;
            for i in 0..flows.n_regimes() {
                let v = integrate_half_line(
                    |t: f64| {
                        let w = (-lambda * t).exp();
                        if w == 0.0 {
                            return 0.0;
                        }
                        w * base.eval(&flows.apply(i, T::of(t), ystar), ystar).as_f64()
                    },
                    QUAD_REL_TOL,
                );
                match v {
                    Ok(v) if v.is_finite() => worst = worst.max(v),
                    _ => return Ok(f64::INFINITY),
                }
            }
            Ok(worst)
        }
    }
}

/// Evaluates the constants from the two certificates.
pub fn compute_constants<T: Real>(
    model: &ModelSpec<T>,
    flow: &FlowRegularityCertificate<T>,
    jump: &JumpRegularityCertificate<T>,
) -> Result<ConstantsReport> {
    flow.validate()?;
    jump.validate(model.dim())?;
    let lambda = model.lambda().as_f64();
    let (l, alpha) = (flow.l.as_f64(), flow.alpha.as_f64());
    let (a_tilde, b_tilde) = (jump.a_tilde.as_f64(), jump.b_tilde.as_f64());
    if alpha >= lambda {
        return Err(Error::Domain(format!("need alpha < lambda, got alpha = {alpha}, lambda = {lambda}")));
    }
    let integral = flow_integral(model)?;
    if !integral.is_finite() {
        return Err(Error::Domain("A2: ∫ e^{−λt} ρ_Y(S_i(t,y*), y*) dt diverges".into()));
    }
    let a = drift_factor(a_tilde, lambda, l, alpha);
    let b = a_tilde * lambda * integral + b_tilde;
    let t0 = t_zero(alpha, lambda);
    let k_phi = flow.phi.k_phi(T::of(lambda))?.as_f64();
    let sup_phi = flow.phi.sup_until(T::of(t0));
    let mut sampled = Vec::new();
    if sup_phi.sampled {
        sampled.push("M_phi".to_string());
    }
    let inputs = ConstantInputs { a_tilde, b_tilde, l, alpha, lambda };
    let mut report = ConstantsReport {
        a,
        b,
        r: None,
        m_l: None,
        m_phi: sup_phi.value.as_f64(),
        k_phi,
        t0,
        c_min: None,
        flow_integral: integral,
        hypotheses_hold: a < 1.0,
        violated: None,
        sampled,
        inputs,
    };
    if a >= 1.0 {
        report.violated =
            Some(format!("A3: ãL + α/λ = {} must be < 1 (equivalently a = {a} < 1)", a_tilde * l + alpha / lambda));
        return Ok(report);
    }
    let r = 4.0 * b / (1.0 - a);
    let sup_l = flow.lfun.sup_on_ball(model.ystar(), T::of(r), &model.metric().base, SUP_NODES);
    if sup_l.sampled {
        report.sampled.push("M_L".to_string());
    }
    let m_l = sup_l.value.as_f64();
    report.r = Some(r);
    report.m_l = Some(m_l);
    report.c_min = Some((lambda - alpha) / l * (m_l * k_phi + m_l * report.m_phi / lambda) + 1.0);
    Ok(report)
}

/// Monte Carlo estimate of `E[V(Φ₁) | Φ₀ = x]` against `aV(x) + b` at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub y: Vec<f64>,
    pub regime: usize,
    pub v: f64,
    pub mean: f64,
    pub se: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub pass: bool,
    pub a: f64,
    pub b: f64,
    pub n_samples: usize,
    /// `min (aV + b + 3·SE − mean)` over the points.
    pub worst_slack: f64,
    pub points: Vec<DriftPoint>,
}

impl LyapunovReport {
    pub fn to_check(&self) -> CheckReport {
        let worst =
            self.points.iter().map(|p| p.mean - DRIFT_SLACK_SE * p.se - p.bound).fold(f64::NEG_INFINITY, f64::max);
        CheckReport {
            name: "drift".into(),
            pass: self.pass,
            worst,
            slack: self.worst_slack,
            n: self.n_samples * self.points.len(),
            warning: None,
            note: Some("PV ≤ aV + b at the test points".into()),
        }
    }
}

fn sample_mean<F>(n: usize, seed: u64, offset: u64, purpose: Purpose, f: F) -> Result<Moments>
where
    F: Fn(&mut RngStream) -> Result<f64> + Sync,
{
    let parts: Vec<Moments> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut m = Moments::default();
            for k in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let mut rng = RngStream::for_task(seed, offset + k as u64, purpose);
                m.push(f(&mut rng)?);
            }
            Ok(m)
        })
        .collect::<Result<_>>()?;
    let mut total = Moments::default();
    parts.iter().for_each(|m| total.merge(m));
    Ok(total)
}

/// Checks `PV(x) ≤ aV(x) + b` at each test point, with `3·SE` slack.
pub fn lyapunov_check<T: Real>(
    model: &ModelSpec<T>,
    a: f64,
    b: f64,
    points: &[HybridState<T>],
    n_samples: usize,
    seed: u64,
) -> Result<LyapunovReport> {
    if n_samples < 2 || points.is_empty() {
        return Err(Error::Input("drift check needs test points and at least two samples each".into()));
    }
    let base = &model.metric().base;
    let ystar = model.ystar();
    let mut out = Vec::with_capacity(points.len());
    for (p, x) in points.iter().enumerate() {
        model.validate_state(x)?;
        let start = AugmentedState::at_origin(x.clone());
        let m = sample_mean(n_samples, seed, (p * n_samples) as u64, Purpose::Lyapunov, |rng| {
            let next = step_chain(model, &start, rng)?;
            Ok(base.eval(&next.x.y, ystar).as_f64())
        })?;
        let v = base.eval(&x.y, ystar).as_f64();
        let bound = a * v + b;
        out.push(DriftPoint {
            y: x.y.iter().map(|c| c.as_f64()).collect(),
            regime: x.regime,
            v,
            mean: m.mean,
            se: m.se(),
            bound,
            pass: m.mean <= bound + DRIFT_SLACK_SE * m.se(),
        });
    }
    let worst_slack = out.iter().map(|p| p.bound + DRIFT_SLACK_SE * p.se - p.mean).fold(f64::INFINITY, f64::min);
    Ok(LyapunovReport { pass: out.iter().all(|p| p.pass), a, b, n_samples, worst_slack, points: out })
}

/// `E[ρ_Y(Y', y*) | jump from y] ≤ ã ρ_Y(y, y*) + b̃` by Monte Carlo with
/// `3·SE` slack; `worst` is the largest `mean − 3·SE − ãρ_Y(y, y*)`.
pub fn check_a1<T: Real>(
    model: &ModelSpec<T>,
    cert: &JumpRegularityCertificate<T>,
    points: &[Vec<T>],
    n_samples: usize,
    seed: u64,
) -> Result<CheckReport> {
    cert.validate(model.dim())?;
    if n_samples < 2 || points.is_empty() {
        return Err(Error::Input("A1 check needs points and at least two samples each".into()));
    }
    let base = &model.metric().base;
    let ystar = &cert.ystar;
    let a_tilde = cert.a_tilde.as_f64();
    let mut worst = f64::NEG_INFINITY;
    for (p, y) in points.iter().enumerate() {
        crate::error::check_dim(model.dim(), y.len())?;
        let m = sample_mean(n_samples, seed, (p * n_samples) as u64, Purpose::Jump, |rng| {
            Ok(base.eval(&sample_jump(model.jump(), y, rng)?, ystar).as_f64())
        })?;
        let lhs = m.mean - DRIFT_SLACK_SE * m.se() - a_tilde * base.eval(y, ystar).as_f64();
        worst = worst.max(lhs);
    }
    Ok(CheckReport::upper("A1", worst, cert.b_tilde.as_f64(), 1e-12, n_samples * points.len()))
}

/// `∫₀^∞ e^{−λt} ρ_Y(S_i(t,y*), y*) dt < ∞` for every regime.
pub fn check_a2<T: Real>(model: &ModelSpec<T>) -> Result<CheckReport> {
    let v = flow_integral(model)?;
    let finite = v.is_finite();
    Ok(CheckReport {
        name: "A2".into(),
        pass: finite,
        worst: if finite { v } else { f64::MAX },
        slack: if finite { 0.0 } else { -f64::MAX },
        n: model.n_regimes(),
        warning: None,
        note: Some(if finite { format!("max_i integral = {v}") } else { "integral diverges".into() }),
    })
}

/// Column-minimum scan of `π`: passes iff `max_j min_i π_ij > 0`.
pub fn check_a5<T: Real>(model: &ModelSpec<T>) -> CheckReport {
    let pi = model.pi();
    let (j0, margin) = (0..model.n_regimes())
        .map(|j| (j, pi.iter().map(|row| row[j].as_f64()).fold(f64::INFINITY, f64::min)))
        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    CheckReport {
        name: "A5".into(),
        pass: margin > 0.0,
        worst: margin,
        slack: margin,
        n: model.n_regimes(),
        warning: None,
        note: Some(if margin > 0.0 { format!("j0 = {j0}") } else { "every column of pi has a zero entry".into() }),
    }
}

/// The two structural checks that need no sampling.
pub fn check_a2_a5<T: Real>(model: &ModelSpec<T>) -> Result<Vec<CheckReport>> {
    Ok(vec![check_a2(model)?, check_a5(model)])
}

/// Sampling budget for [`run_checks`].
#[derive(Debug, Clone)]
pub struct CheckOptions<T> {
    /// Draws for the sampled suprema and infima (A3, A4, jump hypotheses).
    pub n_draws: usize,
    /// Monte Carlo samples per point for A1.
    pub n_samples: usize,
    /// Points at which A1 is estimated.
    pub points: Vec<Vec<T>>,
    /// Half-width of the sampling box around `y*`.
    pub radius: T,
    /// Largest time drawn for the flow checks.
    pub t_max: T,
    pub seed: u64,
}

/// Runs A1–A5 and the jump hypotheses `i1`, `i2`, `i3`, `eta`, in that order.
pub fn run_checks<T: Real>(
    model: &ModelSpec<T>,
    flow: &FlowRegularityCertificate<T>,
    jump: &JumpRegularityCertificate<T>,
    opts: &CheckOptions<T>,
) -> Result<Vec<CheckReport>> {
    flow.validate()?;
    let base = &model.metric().base;
    let sampler = |index: u64| BoxSampler {
        center: model.ystar().to_vec(),
        radius: opts.radius,
        t_max: opts.t_max,
        n_regimes: model.n_regimes(),
        rng: RngStream::for_task(opts.seed, index, Purpose::Sampler),
    };
    let mut out = vec![check_a1(model, jump, &opts.points, opts.n_samples, opts.seed)?, check_a2(model)?];

    let a3 = check_a3(model.flows(), flow, base, sampler(0).a3_samples(), opts.n_draws)?;
    let lambda = model.lambda().as_f64();
    let admissible = jump.a_tilde.as_f64() * flow.l.as_f64() + flow.alpha.as_f64() / lambda;
    let mut c3 = CheckReport {
        name: "A3".into(),
        pass: a3.pass && admissible < 1.0 && flow.alpha.as_f64() < lambda,
        worst: a3.worst_ratio,
        slack: 1.0 - a3.worst_ratio,
        n: a3.n_samples,
        warning: a3.warning,
        note: None,
    };
    if admissible >= 1.0 {
        c3.note = Some(format!("ãL + α/λ = {admissible} is not < 1"));
    }
    out.push(c3);

    let a4 = check_a4(model.flows(), flow, base, sampler(1).a4_samples(), opts.n_draws)?;
    out.push(CheckReport {
        name: "A4".into(),
        pass: a4.pass,
        worst: a4.worst_ratio,
        slack: 1.0 - a4.worst_ratio,
        n: a4.n_samples,
        warning: a4.warning,
        note: None,
    });
    out.push(check_a5(model));

    let mut s = sampler(2);
    let pairs = std::iter::repeat_with(move || (s.point(), s.point()));
    out.extend(check_jump_hypotheses(model.jump(), jump, base, pairs, opts.n_draws)?.into_vec());
    Ok(out)
}

/// One point of a mean-distance curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub mean_rho_bar: f64,
    pub se: f64,
    pub in_window: bool,
}

/// Least-squares fit of `ln E ρ̄` on the pre-noise-floor window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    /// `q̂ = e^{slope}` per step, or `γ̂ = −slope` per unit time.
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub estimate: RateEstimate,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateKind {
    /// Geometric factor per step.
    PerStep,
    /// Exponential rate per unit time.
    PerUnitTime,
}

/// Marks the window and fits it. The window is the leading run of points
/// whose mean exceeds `WINDOW_FACTOR × NOISE_FLOOR_SE × SE`.
pub fn fit_rate(curve: &mut [CurvePoint], n_samples: usize, kind: RateKind) -> Result<RateEstimate> {
    let mut open = true;
    for p in curve.iter_mut() {
        open &= p.mean_rho_bar > 0.0 && p.mean_rho_bar > WINDOW_FACTOR * NOISE_FLOOR_SE * p.se;
        p.in_window = open;
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        curve.iter().filter(|p| p.in_window).map(|p| (p.t, p.mean_rho_bar.ln())).unzip();
    if xs.len() < MIN_FIT_POINTS {
        return Err(Error::Window {
            points: xs.len(),
            needed: MIN_FIT_POINTS,
            hint: "increase the initial separation of the pair or the number of samples".into(),
        });
    }
    let fit = crate::stats::fit_line(&xs, &ys);
    let rate = match kind {
        RateKind::PerStep => fit.slope.exp(),
        RateKind::PerUnitTime => -fit.slope,
    };
    Ok(RateEstimate { rate, intercept: fit.intercept, r_squared: fit.r_squared, n_points: xs.len(), n_samples })
}

fn curve_from<F>(ts: &[f64], n_samples: usize, seed: u64, run: F) -> Result<Vec<CurvePoint>>
where
    F: Fn(&mut RngStream, &mut [Moments]) -> Result<()> + Sync,
{
    if n_samples < 2 {
        return Err(Error::Input("need at least two coupled samples".into()));
    }
    let parts: Vec<Vec<Moments>> = (0..n_samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![Moments::default(); ts.len()];
            for k in c * CHUNK..((c + 1) * CHUNK).min(n_samples) {
                run(&mut RngStream::for_task(seed, k as u64, Purpose::Coupled), &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![Moments::default(); ts.len()];
    for part in &parts {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    Ok(ts
        .iter()
        .zip(&total)
        .map(|(&t, m)| CurvePoint { t, mean_rho_bar: m.mean, se: m.se(), in_window: false })
        .collect())
}

fn rho_bar<T: Real>(model: &ModelSpec<T>, a: &HybridState<T>, b: &HybridState<T>) -> f64 {
    min(model.metric().eval(a, b), T::one()).as_f64()
}

/// Writes a curve as CSV with columns `t, mean_rho_bar, se, in_window`,
/// preceded by a `# schema_version` line.
pub fn write_rate_curve_csv<W: std::io::Write>(mut out: W, curve: &[CurvePoint]) -> Result<()> {
    let io = |e: std::io::Error| Error::Internal(format!("csv write failed: {e}"));
    writeln!(out, "# schema_version: {CSV_SCHEMA_VERSION}").map_err(io)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "mean_rho_bar", "se", "in_window"]).map_err(csv_err)?;
    for p in curve {
        w.write_record([p.t.to_string(), p.mean_rho_bar.to_string(), p.se.to_string(), p.in_window.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(io)
}

/// `E ρ̄(Φ_n^{(1)}, Φ_n^{(2)})` for `n = 1..=n_steps` over `n_samples`
/// coupled runs from `(x1, x2)`; run `k` uses stream `(k, Coupled)`.
pub fn chain_contraction_curve<T: Real>(
    model: &ModelSpec<T>,
    x1: &HybridState<T>,
    x2: &HybridState<T>,
    n_steps: usize,
    n_samples: usize,
    seed: u64,
    identify_regimes: bool,
) -> Result<Vec<CurvePoint>> {
    let ts: Vec<f64> = (1..=n_steps).map(|n| n as f64).collect();
    curve_from(&ts, n_samples, seed, |rng, acc| {
        visit_coupled_chain(model, x1, x2, n_steps, rng, identify_regimes, |n, a, b| {
            acc[n - 1].push(rho_bar(model, a, b))
        })
    })
}

/// Fits `E ρ̄(Φ_n^{(1)}, Φ_n^{(2)}) ≈ C q^n`.
pub fn estimate_chain_contraction<T: Real>(
    model: &ModelSpec<T>,
    x1: &HybridState<T>,
    x2: &HybridState<T>,
    n_steps: usize,
    n_samples: usize,
    seed: u64,
    identify_regimes: bool,
) -> Result<RateFit> {
    if n_steps < MIN_FIT_POINTS {
        return Err(Error::Input(format!("need at least {MIN_FIT_POINTS} steps, got {n_steps}")));
    }
    let mut curve = chain_contraction_curve(model, x1, x2, n_steps, n_samples, seed, identify_regimes)?;
    let estimate = fit_rate(&mut curve, n_samples, RateKind::PerStep)?;
    Ok(RateFit { estimate, curve })
}

/// `E ρ̄(Ψ^{(1)}(t), Ψ^{(2)}(t))` on a time grid over coupled runs.
pub fn process_decay_curve<T: Real>(
    model: &ModelSpec<T>,
    x1: &HybridState<T>,
    x2: &HybridState<T>,
    grid: &[f64],
    n_samples: usize,
    seed: u64,
    identify_regimes: bool,
) -> Result<Vec<CurvePoint>> {
    let tgrid: Vec<T> = grid.iter().map(|&t| T::of(t)).collect();
    crate::coupling::check_grid(&tgrid)?;
    curve_from(grid, n_samples, seed, |rng, acc| {
        visit_coupled_process(model, x1, x2, &tgrid, rng, identify_regimes, |k, a, b| acc[k].push(rho_bar(model, a, b)))
    })
}

/// Fits `E ρ̄(Ψ^{(1)}(t), Ψ^{(2)}(t)) ≈ C e^{−γt}`.
pub fn estimate_process_decay<T: Real>(
    model: &ModelSpec<T>,
    x1: &HybridState<T>,
    x2: &HybridState<T>,
    grid: &[f64],
    n_samples: usize,
    seed: u64,
    identify_regimes: bool,
) -> Result<RateFit> {
    if grid.len() < MIN_FIT_POINTS {
        return Err(Error::Input(format!("need at least {MIN_FIT_POINTS} grid times, got {}", grid.len())));
    }
    let mut curve = process_decay_curve(model, x1, x2, grid, n_samples, seed, identify_regimes)?;
    let estimate = fit_rate(&mut curve, n_samples, RateKind::PerUnitTime)?;
    Ok(RateFit { estimate, curve })
}

/// An FM distance with a bootstrap percentile interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

/// FM distance between two samples, with a 95% percentile bootstrap interval
/// from `resamples` paired resamples (stream `(b, Bootstrap)`).
///
/// Resampling with replacement adds sampling noise, which can only push an
/// empirical distance up, so when the true distance is near zero the whole
/// interval can sit above `value`. Read it as the spread of the statistic,
/// not as a bias-corrected interval for the population distance.
pub fn fm_with_bootstrap<T: Real>(
    a: &[HybridState<T>],
    b: &[HybridState<T>],
    model: &ModelSpec<T>,
    resamples: usize,
    seed: u64,
) -> Result<Interval> {
    let metric = model.metric();
    let value = fm_distance_between(
        &EmpiricalMeasure::from_samples(a.to_vec())?,
        &EmpiricalMeasure::from_samples(b.to_vec())?,
        metric,
    )?
    .as_f64();
    if resamples == 0 {
        return Ok(Interval { value, lo: value, hi: value });
    }
    let mut boot: Vec<f64> = (0..resamples as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = RngStream::for_task(seed, r, Purpose::Bootstrap);
            let ra: Vec<_> = (0..a.len()).map(|_| a[rng.below(a.len())].clone()).collect();
            let rb: Vec<_> = (0..b.len()).map(|_| b[rng.below(b.len())].clone()).collect();
            Ok(fm_distance_between(&EmpiricalMeasure::from_samples(ra)?, &EmpiricalMeasure::from_samples(rb)?, metric)?
                .as_f64())
        })
        .collect::<Result<_>>()?;
    boot.sort_by(f64::total_cmp);
    let q = |p: f64| boot[((p * (boot.len() - 1) as f64).round() as usize).min(boot.len() - 1)];
    Ok(Interval { value, lo: q(0.025), hi: q(0.975) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceOptions {
    pub burn_in: usize,
    pub n_stat: usize,
    pub horizon: f64,
    pub n_samples: usize,
    pub resamples: usize,
    pub seed: u64,
}

/// Empirical check of `μ*^Ψ = μ*^Φ G` and `μ*^Ψ W = μ*^Φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceReport {
    pub fm_phi_g_vs_psi: Interval,
    pub fm_psi_w_vs_phi: Interval,
    /// FM distance between two independent estimates of `μ*^Φ`.
    pub self_distance: f64,
    pub budget: f64,
    pub pass: bool,
    pub burn_in: usize,
    pub n_stat: usize,
    pub horizon: f64,
    pub n_samples: usize,
    pub assumption: String,
}

/// Builds `μ̂*^Φ` from `n_stat` chains after `burn_in` steps and `μ̂*^Ψ` from
/// `n_samples` process snapshots at `horizon`, then compares `μ̂*^Φ G` with
/// `μ̂*^Ψ` and `μ̂*^Ψ W` with `μ̂*^Φ`. Passes when both distances are within
/// [`FM_BUDGET`] and within [`BASELINE_FACTOR`] of the same-law baseline.
pub fn invariant_correspondence_test<T: Real>(
    model: &ModelSpec<T>,
    x0: &HybridState<T>,
    opts: &CorrespondenceOptions,
) -> Result<CorrespondenceReport> {
    if opts.n_stat == 0 || opts.n_samples == 0 || !(opts.horizon > 0.0) {
        return Err(Error::Input("correspondence test needs samples and a positive horizon".into()));
    }
    let seed = opts.seed;
    let phi = sample_chain_at(model, x0, opts.burn_in, opts.n_stat, seed)?;
    let phi_g = apply_g_many(model, &phi, seed)?;
    let psi = sample_process_many(model, x0, T::of(opts.horizon), opts.n_samples, seed)?;
    let psi_w = apply_w_many(model, &psi, seed)?;
    let phi_again = sample_chain_at(model, x0, opts.burn_in, opts.n_stat, baseline_seed(seed))?;

    let d1 = fm_with_bootstrap(&phi_g, &psi, model, opts.resamples, seed)?;
    let d2 = fm_with_bootstrap(&psi_w, &phi, model, opts.resamples, baseline_seed(seed))?;
    let self_distance = fm_distance_between(
        &EmpiricalMeasure::from_samples(phi)?,
        &EmpiricalMeasure::from_samples(phi_again)?,
        model.metric(),
    )?
    .as_f64();
    let ok = |d: &Interval| d.value <= FM_BUDGET && d.value <= BASELINE_FACTOR * self_distance;
    Ok(CorrespondenceReport {
        pass: ok(&d1) && ok(&d2),
        fm_phi_g_vs_psi: d1,
        fm_psi_w_vs_phi: d2,
        self_distance,
        budget: FM_BUDGET,
        burn_in: opts.burn_in,
        n_stat: opts.n_stat,
        horizon: opts.horizon,
        n_samples: opts.n_samples,
        assumption: "joint continuity of (y, t) ↦ J g(·, t)(y) holds by construction for finite IFS \
                     with continuous probabilities and for additive bursts"
            .into(),
    })
}

/// FM distance between the one-step law of the chain and `δ_x G W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorIdentityReport {
    pub distance: f64,
    pub self_distance: f64,
    pub n_samples: usize,
    pub pass: bool,
}

pub fn operator_identity_test<T: Real>(
    model: &ModelSpec<T>,
    x0: &HybridState<T>,
    n_samples: usize,
    seed: u64,
) -> Result<OperatorIdentityReport> {
    let p = sample_chain_at(model, x0, 1, n_samples, seed)?;
    let g = apply_g_many(model, &vec![x0.clone(); n_samples], seed)?;
    let gw = apply_w_many(model, &g, seed)?;
    let p2 = sample_chain_at(model, x0, 1, n_samples, baseline_seed(seed))?;
    let m = model.metric();
    let distance =
        fm_distance_between(&EmpiricalMeasure::from_samples(p.clone())?, &EmpiricalMeasure::from_samples(gw)?, m)?
            .as_f64();
    let self_distance =
        fm_distance_between(&EmpiricalMeasure::from_samples(p)?, &EmpiricalMeasure::from_samples(p2)?, m)?.as_f64();
    Ok(OperatorIdentityReport { distance, self_distance, n_samples, pass: distance <= FM_BUDGET })
}

/// Mean and standard error of each coordinate of `Ψ(t)` over independent runs.
pub fn process_mean<T: Real>(
    model: &ModelSpec<T>,
    x0: &HybridState<T>,
    t: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let xs = sample_process_many(model, x0, T::of(t), n_samples, seed)?;
    Ok((0..model.dim())
        .map(|k| {
            let mut m = Moments::default();
            xs.iter().for_each(|x| m.push(x.y[k].as_f64()));
            (m.mean, m.se())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jump::{AdditiveBurst, JumpKernel};
    use crate::semiflow::{LFn, PhiFn};
    use crate::state::HybridMetric;
    use proptest::prelude::*;

    fn s(y: f64, i: usize) -> HybridState<f64> {
        HybridState::scalar(y, i)
    }

    fn single_flow(jump: JumpKernel<f64>) -> ModelSpec<f64> {
        ModelSpec::new(
            SemiflowSpec::affine(vec![-1.0], vec![vec![0.0]]).unwrap(),
            jump,
            vec![vec![1.0]],
            1.0,
            vec![0.0],
            HybridMetric::euclidean(1.0).unwrap(),
        )
        .unwrap()
    }

    fn two_burst_flows(pi: Vec<Vec<f64>>) -> ModelSpec<f64> {
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

    fn flow_cert(alpha: f64) -> FlowRegularityCertificate<f64> {
        FlowRegularityCertificate { l: 1.0, alpha, phi: PhiFn::Zero, lfun: LFn::Constant(1.0) }
    }

    fn jump_cert(a: f64, b: f64) -> JumpRegularityCertificate<f64> {
        JumpRegularityCertificate { a_tilde: a, b_tilde: b, l_tilde: 0.0, eta: 1.0, ystar: vec![0.0] }
    }

    #[test]
    fn hand_computed_constants() {
        let m = single_flow(JumpKernel::identity(1));
        let c = compute_constants(&m, &flow_cert(-1.0), &jump_cert(0.5, 0.0)).unwrap();
        assert!((c.a - 0.25).abs() < 1e-15);
        assert!((c.t0 - 2f64.ln()).abs() < 1e-15);
        assert_eq!(c.b, 0.0);
        assert_eq!(c.c_min, Some(1.0));
        assert!((t_zero(0.0, 2.0) - 0.5).abs() < 1e-15);
        for alpha in [1e-6, -1e-6] {
            assert!((t_zero(alpha, 1.0) - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn flow_integral_closed_form_against_quadrature() {
        let m = ModelSpec::new(
            SemiflowSpec::affine(vec![-1.0, 0.5], vec![vec![2.0], vec![-1.0]]).unwrap(),
            JumpKernel::identity(1),
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            1.5,
            vec![0.3],
            HybridMetric::euclidean(1.0).unwrap(),
        )
        .unwrap();
        let closed = flow_integral(&m).unwrap();
        let quad = (0..2)
            .map(|i| {
                integrate_half_line(
                    |t: f64| {
                        let w = (-1.5 * t).exp();
                        if w == 0.0 {
                            return 0.0;
                        }
                        w * (m.flows().apply(i, t, &[0.3])[0] - 0.3).abs()
                    },
                    1e-12,
                )
                .unwrap()
            })
            .fold(0.0, f64::max);
        assert!((closed - quad).abs() < 1e-9 * quad, "{closed} vs {quad}");
    }

    #[test]
    fn violated_admissibility_is_flagged() {
        let m = single_flow(JumpKernel::identity(1));
        let c = compute_constants(&m, &flow_cert(0.5), &jump_cert(1.0, 0.0)).unwrap();
        assert!(!c.hypotheses_hold && c.c_min.is_none() && c.violated.unwrap().starts_with("A3"));
        assert!(matches!(compute_constants(&m, &flow_cert(1.0), &jump_cert(0.5, 0.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn identity_jump_drift_is_tight() {
        // E e^{−h} = 1/2 for h ~ Exp(1): from y = 4 the mean is exactly 2.
        let m = single_flow(JumpKernel::identity(1));
        let c = compute_constants(&m, &flow_cert(-1.0), &jump_cert(1.0, 0.0)).unwrap();
        assert_eq!((c.a, c.b), (0.5, 0.0));
        let r = lyapunov_check(&m, c.a, c.b, &[s(4.0, 0), s(0.0, 0)], 20_000, 1).unwrap();
        assert!(r.pass);
        assert!((r.points[0].mean - 2.0).abs() < 4.0 * r.points[0].se);
        assert_eq!(r.points[1].mean, 0.0);
        assert!(!lyapunov_check(&m, c.a / 2.0, c.b, &[s(4.0, 0)], 20_000, 1).unwrap().pass);
    }

    #[test]
    fn a1_on_identity_and_bursts() {
        let m = single_flow(JumpKernel::identity(1));
        let pts = vec![vec![0.0], vec![2.5]];
        let r = check_a1(&m, &jump_cert(1.0, 0.0), &pts, 100, 2).unwrap();
        assert!(r.pass && r.worst == 0.0);
        let b = single_flow(JumpKernel::Burst(AdditiveBurst::exponential(2.0).unwrap()));
        assert!(check_a1(&b, &jump_cert(1.0, 2.0), &pts, 20_000, 3).unwrap().pass);
        assert!(!check_a1(&b, &jump_cert(1.0, 1.0), &pts, 20_000, 3).unwrap().pass);
    }

    #[test]
    fn a2_and_a5() {
        let m = two_burst_flows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let r = check_a2_a5(&m).unwrap();
        assert!(r[0].pass && r[1].pass && r[1].worst == 0.5);
        let id = two_burst_flows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(!check_a5(&id).pass);
        let away = ModelSpec::new(
            SemiflowSpec::affine(vec![-1.0], vec![vec![3.0]]).unwrap(),
            JumpKernel::identity(1),
            vec![vec![1.0]],
            1.0,
            vec![0.0],
            HybridMetric::euclidean(1.0).unwrap(),
        )
        .unwrap();
        // ∫ e^{−t}(1 − e^{−t})·3 dt = 3/2.
        assert!((check_a2(&away).unwrap().worst - 1.5).abs() < 1e-15);
    }

    #[test]
    fn window_error_for_equal_starts() {
        let m = two_burst_flows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let e = estimate_chain_contraction(&m, &s(1.0, 0), &s(1.0, 0), 10, 100, 1, true);
        assert!(matches!(e, Err(Error::Window { points: 0, .. })));
        let grid: Vec<f64> = (1..=10).map(f64::from).collect();
        let e = estimate_process_decay(&m, &s(1.0, 0), &s(1.0, 0), &grid, 100, 1, true);
        assert!(matches!(e, Err(Error::Window { .. })));
    }

    #[test]
    fn synchronous_contraction_matches_drift_factor() {
        // One regime, shared bursts: the gap shrinks by e^{−h}, mean factor λ/(λ+1) = 1/2.
        let m = two_burst_flows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let fit = estimate_chain_contraction(&m, &s(0.0, 0), &s(0.8, 0), 30, 10_000, 5, false).unwrap();
        assert!((fit.estimate.rate - 0.5).abs() < 0.05, "{:?}", fit.estimate);
        assert!(fit.estimate.n_points >= MIN_FIT_POINTS);
    }

    #[test]
    fn curves_do_not_depend_on_thread_count() {
        let m = two_burst_flows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let run = || chain_contraction_curve(&m, &s(0.0, 0), &s(3.0, 1), 8, 1000, 9, true).unwrap();
        assert_eq!(one.install(run), three.install(run));
    }

    #[test]
    fn reports_round_trip() {
        let m = two_burst_flows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let c = compute_constants(&m, &flow_cert(-1.0), &jump_cert(1.0, 1.0)).unwrap();
        let back: ConstantsReport = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let r = check_a2_a5(&m).unwrap();
        let back: Vec<CheckReport> = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        let fit = estimate_chain_contraction(&m, &s(0.0, 0), &s(3.0, 1), 10, 20_000, 1, true).unwrap();
        let back: RateFit = serde_json::from_str(&serde_json::to_string(&fit).unwrap()).unwrap();
        assert_eq!(back, fit);
    }

    proptest! {
        #[test]
        fn admissible_tuples_give_a_below_one(
            a_tilde in 0.01f64..3.0,
            l in 0.01f64..3.0,
            lambda in 0.1f64..5.0,
            u in 0.0f64..1.0,
        ) {
            // Draw α strictly inside the admissible range α < λ(1 − ãL).
            let hi = lambda * (1.0 - a_tilde * l);
            let alpha = hi - 0.001 - u * 10.0;
            prop_assume!(alpha < lambda && a_tilde * l + alpha / lambda < 1.0);
            prop_assert!(drift_factor(a_tilde, lambda, l, alpha) < 1.0);
        }
    }
}

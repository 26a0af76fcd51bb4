//! Deterministic inter-jump dynamics `{S_i}` and their regularity certificates.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::quad::integrate_half_line;
use crate::rng::RngStream;
use crate::scalar::{max, Real};
use crate::state::BaseMetric;

/// Published tolerance for the semigroup law of integrated flows.
pub const SEMIGROUP_TOL: f64 = 1e-8;

/// Relative tolerance of every `[0, ∞)` quadrature in the crate.
pub const QUAD_REL_TOL: f64 = 1e-10;

/// `dy/dt = F_i(y)`; the closure writes `F_i(y)` into its output slice.
pub type VectorField<T> = Arc<dyn Fn(usize, &[T], &mut [T]) + Send + Sync>;

/// Componentwise affine flows `S_i(t, y) = e^{α_i t}(y − r_i) + r_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFlows<T> {
    pub rates: Vec<T>,
    pub fixed_points: Vec<Vec<T>>,
}

/// Flows of autonomous ODEs integrated with fixed-step RK4.
#[derive(Clone)]
pub struct IntegratedFlows<T> {
    pub n_regimes: usize,
    pub dim: usize,
    pub field: VectorField<T>,
    pub step: T,
}

impl<T: fmt::Debug> fmt::Debug for IntegratedFlows<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntegratedFlows")
            .field("n_regimes", &self.n_regimes)
            .field("dim", &self.dim)
            .field("step", &self.step)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum SemiflowSpec<T> {
    Affine(AffineFlows<T>),
    Integrated(IntegratedFlows<T>),
}

impl<T: Real> SemiflowSpec<T> {
    pub fn affine(rates: Vec<T>, fixed_points: Vec<Vec<T>>) -> Result<Self> {
        if rates.is_empty() || rates.len() != fixed_points.len() {
            return Err(Error::Config("affine flows need one rate and one fixed point per regime".into()));
        }
        let d = fixed_points[0].len();
        if d == 0 {
            return Err(Error::Config("fixed points must have dimension >= 1".into()));
        }
        for r in &fixed_points {
            check_dim(d, r.len())?;
        }
        if rates.iter().chain(fixed_points.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Config("flow parameters must be finite".into()));
        }
        Ok(Self::Affine(AffineFlows { rates, fixed_points }))
    }

    pub fn integrated(n_regimes: usize, dim: usize, field: VectorField<T>, step: T) -> Result<Self> {
        if n_regimes == 0 || dim == 0 {
            return Err(Error::Config("integrated flows need at least one regime and dimension".into()));
        }
        if !(step > T::zero()) || !step.is_finite() {
            return Err(Error::Config("integration step must be positive".into()));
        }
        Ok(Self::Integrated(IntegratedFlows { n_regimes, dim, field, step }))
    }

    pub fn n_regimes(&self) -> usize {
        match self {
            Self::Affine(a) => a.rates.len(),
            Self::Integrated(g) => g.n_regimes,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Affine(a) => a.fixed_points[0].len(),
            Self::Integrated(g) => g.dim,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Self::Affine(_))
    }

    /// `S_i(t, y)` with argument checking.
    pub fn flow(&self, regime: usize, t: T, y: &[T]) -> Result<Vec<T>> {
        if !(t >= T::zero()) {
            return Err(Error::Input(format!("flow time must be nonnegative, got {t}")));
        }
        if regime >= self.n_regimes() {
            return Err(Error::Input(format!("regime {regime} out of range (model has {})", self.n_regimes())));
        }
        check_dim(self.dim(), y.len())?;
        Ok(self.apply(regime, t, y))
    }

    /// `S_i(t, y)` for already validated arguments.
    pub(crate) fn apply(&self, regime: usize, t: T, y: &[T]) -> Vec<T> {
        match self {
            Self::Affine(a) => {
                let e = (a.rates[regime] * t).exp();
                let r = &a.fixed_points[regime];
                y.iter().zip(r).map(|(&yk, &rk)| e * (yk - rk) + rk).collect()
            }
            Self::Integrated(g) => g.integrate(regime, t, y),
        }
    }
}

impl<T: Real> IntegratedFlows<T> {
    fn rk4_step(&self, regime: usize, h: T, y: &mut [T], scratch: &mut [Vec<T>; 5]) {
        let half = T::of(0.5);
        let [k1, k2, k3, k4, tmp] = scratch;
        (self.field)(regime, y, k1);
        for j in 0..y.len() {
            tmp[j] = y[j] + half * h * k1[j];
        }
        (self.field)(regime, tmp, k2);
        for j in 0..y.len() {
            tmp[j] = y[j] + half * h * k2[j];
        }
        (self.field)(regime, tmp, k3);
        for j in 0..y.len() {
            tmp[j] = y[j] + h * k3[j];
        }
        (self.field)(regime, tmp, k4);
        let sixth = h / T::of(6.0);
        for j in 0..y.len() {
            y[j] += sixth * (k1[j] + T::of(2.0) * (k2[j] + k3[j]) + k4[j]);
        }
    }

    fn integrate(&self, regime: usize, t: T, y0: &[T]) -> Vec<T> {
        let mut y = y0.to_vec();
        let d = y.len();
        let mut scratch: [Vec<T>; 5] = std::array::from_fn(|_| vec![T::zero(); d]);
        let full = (t / self.step).floor();
        let n = full.to_usize().unwrap_or(usize::MAX);
        for _ in 0..n {
            self.rk4_step(regime, self.step, &mut y, &mut scratch);
        }
        let rest = t - full * self.step;
        if rest > T::zero() {
            self.rk4_step(regime, rest, &mut y, &mut scratch);
        }
        y
    }
}

/// Time profile `φ` in `ρ_Y(S_i(t,y), S_j(t,y)) ≤ φ(t) 𝓛(y)`.
#[derive(Clone)]
pub enum PhiFn<T> {
    Zero,
    /// `slope · t`
    Linear {
        slope: T,
    },
    /// `amplitude · (1 − e^{rate·t})`, `rate ≤ 0`
    Saturating {
        amplitude: T,
        rate: T,
    },
    /// `amplitude · |e^{−decay_a t} − e^{−decay_b t}|`, decays `≥ 0`
    ExpDifference {
        amplitude: T,
        decay_a: T,
        decay_b: T,
    },
    /// `amplitude · e^{rate·t}`
    Exponential {
        amplitude: T,
        rate: T,
    },
    Custom(Arc<dyn Fn(T) -> T + Send + Sync>),
}

impl<T: fmt::Debug> fmt::Debug for PhiFn<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Linear { slope } => write!(f, "Linear {{ slope: {slope:?} }}"),
            Self::Saturating { amplitude, rate } => {
                write!(f, "Saturating {{ amplitude: {amplitude:?}, rate: {rate:?} }}")
            }
            Self::ExpDifference { amplitude, decay_a, decay_b } => {
                write!(f, "ExpDifference {{ amplitude: {amplitude:?}, decay_a: {decay_a:?}, decay_b: {decay_b:?} }}")
            }
            Self::Exponential { amplitude, rate } => {
                write!(f, "Exponential {{ amplitude: {amplitude:?}, rate: {rate:?} }}")
            }
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Result of a supremum that could only be sampled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Supremum<T> {
    pub value: T,
    /// `true` when the value comes from a grid (and carries a safety inflation).
    pub sampled: bool,
}

/// Safety inflation applied to sampled suprema that feed `c_min`.
pub const SAMPLED_SUP_INFLATION: f64 = 1.1;

impl<T: Real> PhiFn<T> {
    pub fn eval(&self, t: T) -> T {
        match self {
            Self::Zero => T::zero(),
            Self::Linear { slope } => *slope * t,
            Self::Saturating { amplitude, rate } => *amplitude * (-(*rate * t).exp_m1()),
            Self::ExpDifference { amplitude, decay_a, decay_b } => {
                *amplitude * ((-*decay_a * t).exp() - (-*decay_b * t).exp()).abs()
            }
            Self::Exponential { amplitude, rate } => *amplitude * (*rate * t).exp(),
            Self::Custom(f) => f(t),
        }
    }

    /// `K_φ = ∫_0^∞ e^{−λt} φ(t) dt`, closed form for the built-in families.
    pub fn k_phi(&self, lambda: T) -> Result<T> {
        if !(lambda > T::zero()) {
            return Err(Error::Input(format!("jump rate must be positive, got {lambda}")));
        }
        let one = T::one();
        Ok(match self {
            Self::Zero => T::zero(),
            Self::Linear { slope } => *slope / (lambda * lambda),
            Self::Saturating { amplitude, rate } => {
                if *rate > T::zero() {
                    return Err(Error::Domain("saturating profile needs rate <= 0".into()));
                }
                *amplitude * (-*rate) / (lambda * (lambda - *rate))
            }
            Self::ExpDifference { amplitude, decay_a, decay_b } => {
                *amplitude * (one / (lambda + *decay_a) - one / (lambda + *decay_b)).abs()
            }
            Self::Exponential { amplitude, rate } => {
                if *rate >= lambda {
                    return Err(Error::Domain(format!("K_phi diverges: growth rate {rate} >= jump rate {lambda}")));
                }
                *amplitude / (lambda - *rate)
            }
            Self::Custom(_) => self.k_phi_quadrature(lambda)?,
        })
    }

    /// `K_φ` by adaptive quadrature regardless of the family.
    pub fn k_phi_quadrature(&self, lambda: T) -> Result<T> {
        integrate_half_line(
            |t| {
                // Past the underflow of e^{−λt} the integrand is zero even if φ(t) overflows.
                let e = (-lambda * t).exp();
                if e == T::zero() {
                    T::zero()
                } else {
                    e * self.eval(t)
                }
            },
            T::of(QUAD_REL_TOL),
        )
    }

    /// `M_φ = sup{φ(t) : 0 ≤ t ≤ t0}`.
    pub fn sup_until(&self, t0: T) -> Supremum<T> {
        let exact = |value| Supremum { value, sampled: false };
        match self {
            Self::Zero => exact(T::zero()),
            Self::Linear { .. } | Self::Saturating { .. } => exact(max(self.eval(T::zero()), self.eval(t0))),
            Self::Exponential { .. } => exact(max(self.eval(T::zero()), self.eval(t0))),
            Self::ExpDifference { amplitude, decay_a, decay_b } => {
                let (ka, kb) = (*decay_a, *decay_b);
                let mut best = self.eval(t0);
                if ka > T::zero() && kb > T::zero() && ka != kb {
                    let tstar = (kb / ka).ln() / (kb - ka);
                    if tstar <= t0 {
                        best = max(best, self.eval(tstar));
                    }
                }
                let _ = amplitude;
                exact(best)
            }
            Self::Custom(_) => {
                let n = 10_000;
                let best =
                    (0..=n).map(|k| self.eval(t0 * T::of_usize(k) / T::of_usize(n))).fold(T::neg_infinity(), max);
                Supremum { value: best * T::of(SAMPLED_SUP_INFLATION), sampled: true }
            }
        }
    }
}

/// Spatial profile `𝓛` in `ρ_Y(S_i(t,y), S_j(t,y)) ≤ φ(t) 𝓛(y)`.
#[derive(Clone)]
pub enum LFn<T> {
    Constant(T),
    /// `scale · ρ_Y(y, center)`
    Distance {
        scale: T,
        center: Vec<T>,
    },
    Custom(Arc<dyn Fn(&[T]) -> T + Send + Sync>),
}

impl<T: fmt::Debug> fmt::Debug for LFn<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c:?})"),
            Self::Distance { scale, center } => {
                write!(f, "Distance {{ scale: {scale:?}, center: {center:?} }}")
            }
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl<T: Real> LFn<T> {
    pub fn eval(&self, y: &[T], base: &BaseMetric<T>) -> T {
        match self {
            Self::Constant(c) => *c,
            Self::Distance { scale, center } => *scale * base.eval(y, center),
            Self::Custom(f) => f(y),
        }
    }

    /// `sup{𝓛(y) : ρ_Y(y, center) ≤ radius}`.
    ///
    /// Exact for the closed-form profiles. Custom profiles are evaluated on
    /// the `n_nodes`-point Halton set of the bounding box (filtered to the
    /// ball) and inflated by [`SAMPLED_SUP_INFLATION`].
    pub fn sup_on_ball(&self, center: &[T], radius: T, base: &BaseMetric<T>, n_nodes: usize) -> Supremum<T> {
        match self {
            Self::Constant(c) => Supremum { value: *c, sampled: false },
            Self::Distance { scale, center: c0 } => {
                Supremum { value: *scale * (radius + base.eval(center, c0)), sampled: false }
            }
            Self::Custom(f) => {
                let d = center.len();
                let mut best = f(center);
                let mut point = vec![T::zero(); d];
                for k in 1..=n_nodes {
                    for (j, p) in point.iter_mut().enumerate() {
                        let h = T::of(halton(k as u64, PRIMES[j % PRIMES.len()]));
                        *p = center[j] + radius * (T::of(2.0) * h - T::one());
                    }
                    if base.eval(&point, center) <= radius {
                        best = max(best, f(&point));
                    }
                }
                Supremum { value: best * T::of(SAMPLED_SUP_INFLATION), sampled: true }
            }
        }
    }
}

const PRIMES: [u64; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// Constants of the flow hypotheses: `ρ_Y(S_i(t,u),S_i(t,v)) ≤ L e^{αt} ρ_Y(u,v)`
/// and `ρ_Y(S_i(t,y),S_j(t,y)) ≤ φ(t) 𝓛(y)`.
#[derive(Debug, Clone)]
pub struct FlowRegularityCertificate<T> {
    pub l: T,
    pub alpha: T,
    pub phi: PhiFn<T>,
    pub lfun: LFn<T>,
}

impl<T: Real> FlowRegularityCertificate<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.l > T::zero()) || !self.l.is_finite() {
            return Err(Error::Config("certificate L must be positive".into()));
        }
        if !self.alpha.is_finite() {
            return Err(Error::Config("certificate alpha must be finite".into()));
        }
        Ok(())
    }
}

/// Exact certificate for componentwise affine flows under either base metric.
///
/// `L = 1` and `α = max_i α_i`. For the divergence between regimes,
/// `S_i(t,y) − S_j(t,y) = (e^{α_i t} − e^{α_j t})(y − r_j) + (1 − e^{α_i t})(r_j − r_i)`
/// is bounded by `φ(t) 𝓛(y)` with `𝓛(y) = max(1, ρ_Y(y, 0) + max_j ρ_Y(r_j, 0))`
/// and `φ(t) = max_{i,j} (|e^{α_i t} − e^{α_j t}| + |1 − e^{α_i t}| ρ_Y(r_i, r_j))`.
/// Presets with more structure use sharper closed forms.
pub fn affine_certificate<T: Real>(flows: &AffineFlows<T>, base: &BaseMetric<T>) -> FlowRegularityCertificate<T> {
    let alpha = flows.rates.iter().copied().fold(T::neg_infinity(), max);
    let rates = flows.rates.clone();
    let pts = flows.fixed_points.clone();
    let n = rates.len();
    let mut gaps = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for j in 0..n {
            gaps[i][j] = base.eval(&pts[i], &pts[j]);
        }
    }
    let phi = if n == 1 {
        PhiFn::Zero
    } else {
        PhiFn::Custom(Arc::new(move |t: T| {
            let mut best = T::zero();
            for i in 0..n {
                let ei = (rates[i] * t).exp();
                for j in 0..n {
                    let ej = (rates[j] * t).exp();
                    best = max(best, (ei - ej).abs() + (T::one() - ei).abs() * gaps[i][j]);
                }
            }
            best
        }))
    };
    let offset = pts.iter().map(|r| base.norm(r)).fold(T::zero(), max);
    let base2 = base.clone();
    let lfun = LFn::Custom(Arc::new(move |y: &[T]| max(T::one(), base2.norm(y) + offset)));
    FlowRegularityCertificate { l: T::one(), alpha, phi, lfun }
}

/// One draw for the Lipschitz-envelope check.
#[derive(Debug, Clone, PartialEq)]
pub struct A3Sample<T> {
    pub u: Vec<T>,
    pub v: Vec<T>,
    pub t: T,
    pub regime: usize,
}

/// One draw for the flow-divergence check.
#[derive(Debug, Clone, PartialEq)]
pub struct A4Sample<T> {
    pub y: Vec<T>,
    pub t: T,
    pub regime_a: usize,
    pub regime_b: usize,
}

/// Outcome of a sampled worst-case ratio check.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioReport {
    pub worst_ratio: f64,
    pub pass: bool,
    pub n_samples: usize,
    pub n_degenerate: usize,
    /// Set when the flow is integrated numerically rather than in closed form.
    pub warning: Option<String>,
}

/// Tolerance on sampled ratios (`pass` iff `worst_ratio ≤ 1 + RATIO_TOL`).
pub const RATIO_TOL: f64 = 1e-9;

fn take_exact<I: Iterator>(samples: I, n: usize) -> Result<Vec<I::Item>> {
    if n == 0 {
        return Err(Error::Input("need at least one sample".into()));
    }
    let v: Vec<_> = samples.take(n).collect();
    if v.len() < n {
        return Err(Error::SamplerExhausted { got: v.len(), wanted: n });
    }
    Ok(v)
}

fn summarize(ratios: &[Option<f64>], flows_exact: bool) -> RatioReport {
    let n_degenerate = ratios.iter().filter(|r| r.is_none()).count();
    let worst = ratios.iter().flatten().copied().fold(0.0, f64::max);
    RatioReport {
        worst_ratio: worst,
        pass: worst <= 1.0 + RATIO_TOL,
        n_samples: ratios.len(),
        n_degenerate,
        warning: (!flows_exact).then(|| {
            format!("flow integrated numerically (RK4); ratios carry integration error up to ~{SEMIGROUP_TOL:e}")
        }),
    }
}

/// Sampled falsifier for `ρ_Y(S_i(t,u), S_i(t,v)) ≤ L e^{αt} ρ_Y(u, v)`.
/// Pairs with `u = v` are degenerate and skipped.
pub fn check_a3<T: Real>(
    flows: &SemiflowSpec<T>,
    cert: &FlowRegularityCertificate<T>,
    base: &BaseMetric<T>,
    samples: impl IntoIterator<Item = A3Sample<T>>,
    n_pairs: usize,
) -> Result<RatioReport> {
    let draws = take_exact(samples.into_iter(), n_pairs)?;
    for s in &draws {
        check_dim(flows.dim(), s.u.len())?;
        check_dim(flows.dim(), s.v.len())?;
        if s.regime >= flows.n_regimes() || !(s.t >= T::zero()) {
            return Err(Error::Input("sample has invalid regime or negative time".into()));
        }
    }
    let ratios: Vec<Option<f64>> = draws
        .par_iter()
        .map(|s| {
            let d0 = base.eval(&s.u, &s.v);
            if d0 == T::zero() {
                return None;
            }
            let d1 = base.eval(&flows.apply(s.regime, s.t, &s.u), &flows.apply(s.regime, s.t, &s.v));
            let bound = cert.l * (cert.alpha * s.t).exp() * d0;
            Some((d1 / bound).as_f64())
        })
        .collect();
    Ok(summarize(&ratios, flows.is_exact()))
}

/// Sampled falsifier for `ρ_Y(S_i(t,y), S_j(t,y)) ≤ φ(t) 𝓛(y)`.
/// Zero divergence counts as ratio 0.
pub fn check_a4<T: Real>(
    flows: &SemiflowSpec<T>,
    cert: &FlowRegularityCertificate<T>,
    base: &BaseMetric<T>,
    samples: impl IntoIterator<Item = A4Sample<T>>,
    n_samples: usize,
) -> Result<RatioReport> {
    let draws = take_exact(samples.into_iter(), n_samples)?;
    for s in &draws {
        check_dim(flows.dim(), s.y.len())?;
        if s.regime_a >= flows.n_regimes() || s.regime_b >= flows.n_regimes() || !(s.t >= T::zero()) {
            return Err(Error::Input("sample has invalid regime or negative time".into()));
        }
    }
    let ratios: Vec<Option<f64>> = draws
        .par_iter()
        .map(|s| {
            let gap = base.eval(&flows.apply(s.regime_a, s.t, &s.y), &flows.apply(s.regime_b, s.t, &s.y));
            if gap == T::zero() {
                return Some(0.0);
            }
            let bound = cert.phi.eval(s.t) * cert.lfun.eval(&s.y, base);
            Some(if bound > T::zero() { (gap / bound).as_f64() } else { f64::INFINITY })
        })
        .collect();
    Ok(summarize(&ratios, flows.is_exact()))
}

/// Uniform box sampler for the flow checks: points in
/// `center ± radius` (per coordinate), times in `[0, t_max]`, uniform regimes.
#[derive(Debug, Clone)]
pub struct BoxSampler<T> {
    pub center: Vec<T>,
    pub radius: T,
    pub t_max: T,
    pub n_regimes: usize,
    pub rng: RngStream,
}

impl<T: Real> BoxSampler<T> {
    pub fn point(&mut self) -> Vec<T> {
        let (r, rng) = (self.radius, &mut self.rng);
        self.center.iter().map(|&c| c + r * (T::of(2.0 * rng.uniform()) - T::one())).collect()
    }

    pub fn time(&mut self) -> T {
        self.t_max * T::of(self.rng.uniform())
    }

    pub fn regime(&mut self) -> usize {
        self.rng.below(self.n_regimes)
    }

    pub fn a3_samples(mut self) -> impl Iterator<Item = A3Sample<T>> {
        std::iter::repeat_with(move || {
            let u = self.point();
            let v = self.point();
            let t = self.time();
            let regime = self.regime();
            A3Sample { u, v, t, regime }
        })
    }

    pub fn a4_samples(mut self) -> impl Iterator<Item = A4Sample<T>> {
        std::iter::repeat_with(move || {
            let y = self.point();
            let t = self.time();
            let regime_a = self.regime();
            let regime_b = self.regime();
            A4Sample { y, t, regime_a, regime_b }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;
    use proptest::prelude::*;

    fn contraction(alpha: f64, r: f64) -> SemiflowSpec<f64> {
        SemiflowSpec::affine(vec![alpha], vec![vec![r]]).unwrap()
    }

    fn sampler(n_regimes: usize, seed: u64) -> BoxSampler<f64> {
        BoxSampler {
            center: vec![0.0],
            radius: 5.0,
            t_max: 4.0,
            n_regimes,
            rng: RngStream::for_task(seed, 0, Purpose::Sampler),
        }
    }

    fn cert(alpha: f64, phi: PhiFn<f64>, lfun: LFn<f64>) -> FlowRegularityCertificate<f64> {
        FlowRegularityCertificate { l: 1.0, alpha, phi, lfun }
    }

    #[test]
    fn affine_flow_values() {
        let f = contraction(-1.0, 0.0);
        let y = f.flow(0, 2f64.ln(), &[4.0]).unwrap();
        assert!((y[0] - 2.0).abs() < 1e-15);
        assert_eq!(f.flow(0, 0.0, &[4.0]).unwrap(), vec![4.0]);
        let g = contraction(-1.0, 1.0);
        assert!((g.flow(0, 50.0, &[7.0]).unwrap()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn flow_rejects_negative_time_and_bad_regime() {
        let f = contraction(-1.0, 0.0);
        assert!(matches!(f.flow(0, -1.0, &[1.0]), Err(Error::Input(_))));
        assert!(f.flow(1, 1.0, &[1.0]).is_err());
        assert!(f.flow(0, 1.0, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn a3_is_sharp_on_linear_flows() {
        let f = contraction(-1.0, 0.0);
        let c = cert(-1.0, PhiFn::Zero, LFn::Constant(1.0));
        let rep = check_a3(&f, &c, &BaseMetric::Euclidean, sampler(1, 1).a3_samples(), 2000).unwrap();
        assert!((rep.worst_ratio - 1.0).abs() < 1e-12, "{rep:?}");
        assert!(rep.pass);
        assert!(rep.warning.is_none());
    }

    #[test]
    fn a3_detects_understated_alpha() {
        let f = contraction(-1.0, 0.0);
        let c = cert(-2.0, PhiFn::Zero, LFn::Constant(1.0));
        let rep = check_a3(&f, &c, &BaseMetric::Euclidean, sampler(1, 2).a3_samples(), 500).unwrap();
        assert!(!rep.pass);
        assert!(rep.worst_ratio > 1.0);
    }

    #[test]
    fn a3_skips_identical_points() {
        let f = contraction(-1.0, 0.0);
        let c = cert(-1.0, PhiFn::Zero, LFn::Constant(1.0));
        let s = A3Sample { u: vec![1.0], v: vec![1.0], t: 1.0, regime: 0 };
        let rep = check_a3(&f, &c, &BaseMetric::Euclidean, std::iter::repeat(s), 3).unwrap();
        assert_eq!(rep.worst_ratio, 0.0);
        assert_eq!(rep.n_degenerate, 3);
    }

    #[test]
    fn sampler_exhaustion_is_reported() {
        let f = contraction(-1.0, 0.0);
        let c = cert(-1.0, PhiFn::Zero, LFn::Constant(1.0));
        let s = A3Sample { u: vec![1.0], v: vec![2.0], t: 1.0, regime: 0 };
        let r = check_a3(&f, &c, &BaseMetric::Euclidean, std::iter::repeat(s).take(2), 5);
        assert_eq!(r, Err(Error::SamplerExhausted { got: 2, wanted: 5 }));
    }

    #[test]
    fn a4_example_flows_are_tight() {
        // S_1 = e^{αt} y, S_2 = e^{αt}(y − r) + r with φ = |r|(1 − e^{αt}), 𝓛 ≡ 1.
        let f = SemiflowSpec::affine(vec![-1.0, -1.0], vec![vec![0.0], vec![1.0]]).unwrap();
        let c = cert(-1.0, PhiFn::Saturating { amplitude: 1.0, rate: -1.0 }, LFn::Constant(1.0));
        let samples = sampler(2, 3).a4_samples().filter(|s| s.regime_a != s.regime_b && s.t > 0.01);
        let rep = check_a4(&f, &c, &BaseMetric::Euclidean, samples, 1000).unwrap();
        assert!((rep.worst_ratio - 1.0).abs() < 1e-12, "{rep:?}");
        assert!(rep.pass);
    }

    #[test]
    fn a4_degenerate_cases() {
        let f = SemiflowSpec::affine(vec![-1.0, -1.0], vec![vec![0.0], vec![1.0]]).unwrap();
        let c = cert(-1.0, PhiFn::Saturating { amplitude: 1.0, rate: -1.0 }, LFn::Constant(1.0));
        let same = A4Sample { y: vec![3.0], t: 2.0, regime_a: 1, regime_b: 1 };
        let rep = check_a4(&f, &c, &BaseMetric::Euclidean, std::iter::repeat(same), 4).unwrap();
        assert_eq!(rep.worst_ratio, 0.0);
        let at_zero = A4Sample { y: vec![3.0], t: 0.0, regime_a: 0, regime_b: 1 };
        let rep = check_a4(&f, &c, &BaseMetric::Euclidean, std::iter::repeat(at_zero), 4).unwrap();
        assert_eq!(rep.worst_ratio, 0.0);
        assert_eq!(c.phi.eval(0.0), 0.0);
    }

    #[test]
    fn gene_flow_divergence_profile() {
        // e^{-t} y vs e^{-2t} y: |y| (e^{-t} − e^{-2t}).
        let f = SemiflowSpec::affine(vec![-1.0, -2.0], vec![vec![0.0], vec![0.0]]).unwrap();
        let c = cert(
            -1.0,
            PhiFn::ExpDifference { amplitude: 1.0, decay_a: 1.0, decay_b: 2.0 },
            LFn::Distance { scale: 1.0, center: vec![0.0] },
        );
        let rep = check_a4(&f, &c, &BaseMetric::Euclidean, sampler(2, 4).a4_samples(), 2000).unwrap();
        assert!(rep.pass && rep.worst_ratio > 0.999_999, "{rep:?}");
    }

    #[test]
    fn k_phi_closed_forms() {
        assert_eq!(PhiFn::Linear { slope: 1.0 }.k_phi(1.0).unwrap(), 1.0);
        assert_eq!(PhiFn::<f64>::Zero.k_phi(1.0).unwrap(), 0.0);
        let sat = PhiFn::<f64>::Saturating { amplitude: 1.0, rate: -1.0 };
        assert!((sat.k_phi(1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(PhiFn::Exponential { amplitude: 1.0, rate: 2.0 }.k_phi(1.0).is_err());
        assert!(PhiFn::Linear { slope: 1.0 }.k_phi(0.0).is_err());
    }

    #[test]
    fn k_phi_quadrature_matches_closed_forms() {
        let fams: [PhiFn<f64>; 6] = [
            PhiFn::Saturating { amplitude: 2.5, rate: -0.7 },
            PhiFn::Saturating { amplitude: 1.0, rate: -1.0 },
            PhiFn::ExpDifference { amplitude: 1.0, decay_a: 1.0, decay_b: 2.0 },
            PhiFn::ExpDifference { amplitude: 3.0, decay_a: 0.2, decay_b: 5.0 },
            PhiFn::Linear { slope: 1.0 },
            PhiFn::Exponential { amplitude: 1.0, rate: 0.25 },
        ];
        for phi in &fams {
            for lambda in [0.5, 1.0, 3.0] {
                let closed = phi.k_phi(lambda).unwrap();
                let quad = phi.k_phi_quadrature(lambda).unwrap();
                assert!((closed - quad).abs() <= 1e-9 * closed.abs().max(1.0), "{phi:?} {lambda}: {closed} vs {quad}");
            }
        }
    }

    #[test]
    fn k_phi_custom_uses_quadrature() {
        let custom = PhiFn::Custom(Arc::new(|t: f64| t * t));
        // ∫ e^{-2t} t² dt = 2/8
        assert!((custom.k_phi(2.0).unwrap() - 0.25).abs() < 1e-10);
        let divergent = PhiFn::Custom(Arc::new(|t: f64| (2.0 * t).exp()));
        assert!(matches!(divergent.k_phi(1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn phi_suprema() {
        let d = PhiFn::ExpDifference { amplitude: 1.0, decay_a: 1.0, decay_b: 2.0 };
        let s = d.sup_until(2f64.ln());
        assert!((s.value - 0.25).abs() < 1e-15 && !s.sampled);
        let s = d.sup_until(0.1);
        assert!((s.value - d.eval(0.1)).abs() < 1e-15);
        let sat = PhiFn::<f64>::Saturating { amplitude: 1.0, rate: -1.0 };
        assert!((sat.sup_until(2f64.ln()).value - 0.5).abs() < 1e-15);
        let custom = PhiFn::Custom(Arc::new(|t: f64| t));
        let s = custom.sup_until(2.0);
        assert!(s.sampled && (s.value - 2.2).abs() < 1e-12);
    }

    #[test]
    fn l_suprema() {
        let b = BaseMetric::Euclidean;
        let l = LFn::Distance { scale: 2.0, center: vec![1.0] };
        assert_eq!(l.sup_on_ball(&[0.0], 3.0, &b, 100).value, 8.0);
        let custom = LFn::Custom(Arc::new(|y: &[f64]| y[0].abs()));
        let s = custom.sup_on_ball(&[0.0], 3.0, &b, 10_000);
        assert!(s.sampled && s.value > 3.0 && s.value <= 3.3 + 1e-12);
    }

    #[test]
    fn rk4_matches_affine_closed_form() {
        let field: VectorField<f64> = Arc::new(|i, y, out| {
            let (a, r) = if i == 0 { (-1.0, 1.0) } else { (-0.5, -2.0) };
            out[0] = a * (y[0] - r);
        });
        let g = SemiflowSpec::integrated(2, 1, field, 1e-2).unwrap();
        let exact = SemiflowSpec::affine(vec![-1.0, -0.5], vec![vec![1.0], vec![-2.0]]).unwrap();
        for (i, t, y) in [(0, 0.37, 3.0), (1, 5.123, -4.0), (0, 12.0, 0.5)] {
            let a = g.flow(i, t, &[y]).unwrap()[0];
            let b = exact.flow(i, t, &[y]).unwrap()[0];
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        let c = cert(-0.5, PhiFn::Zero, LFn::Constant(1.0));
        let rep = check_a3(&g, &c, &BaseMetric::Euclidean, sampler(2, 9).a3_samples(), 50).unwrap();
        assert!(rep.warning.is_some());
    }

    #[test]
    fn generic_affine_certificate_is_valid() {
        let f = SemiflowSpec::affine(vec![-1.0, -0.3, -2.0], vec![vec![0.5], vec![-1.0], vec![2.0]]).unwrap();
        let SemiflowSpec::Affine(a) = &f else { unreachable!() };
        let c = affine_certificate(a, &BaseMetric::Euclidean);
        assert_eq!(c.alpha, -0.3);
        let s3 = check_a3(&f, &c, &BaseMetric::Euclidean, sampler(3, 5).a3_samples(), 1000).unwrap();
        let s4 = check_a4(&f, &c, &BaseMetric::Euclidean, sampler(3, 6).a4_samples(), 1000).unwrap();
        assert!(s3.pass && s4.pass, "{s3:?} {s4:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn affine_semigroup_law(s in 0.0..10.0f64, t in 0.0..10.0f64, y in -50.0f64..50.0, i in 0usize..2) {
            let f = SemiflowSpec::affine(vec![-1.0, -0.25], vec![vec![1.0], vec![-3.0]]).unwrap();
            let two = f.flow(i, s, &f.flow(i, t, &[y]).unwrap()).unwrap()[0];
            let one = f.flow(i, s + t, &[y]).unwrap()[0];
            prop_assert!((two - one).abs() <= 1e-12 * (1.0 + y.abs()));
        }

        #[test]
        fn integrated_semigroup_law(s in 0.0f64..3.0, t in 0.0f64..3.0, y in -5.0f64..5.0) {
            let field: VectorField<f64> = Arc::new(|_, y, out| out[0] = -y[0] * (1.0 + 0.1 * y[0] * y[0]));
            let g = SemiflowSpec::integrated(1, 1, field, 1e-3).unwrap();
            let two = g.flow(0, s, &g.flow(0, t, &[y]).unwrap()).unwrap()[0];
            let one = g.flow(0, s + t, &[y]).unwrap()[0];
            prop_assert!((two - one).abs() <= SEMIGROUP_TOL);
        }
    }
}

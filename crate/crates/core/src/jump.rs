//! Jump kernels `J` and their synchronous sub-kernels `Q_J`.
//!
//! Both families are described by a finite set of symbols `θ` with
//! place-dependent probabilities `p_θ(y)` plus an optional continuous
//! innovation (the burst size). The coupled kernel picks the same symbol and
//! the same innovation in both coordinates, with mass `Σ_θ p_θ(y1) ∧ p_θ(y2)`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::report::CheckReport;
use crate::rng::RngStream;
use crate::scalar::{max, min, Real};
use crate::state::BaseMetric;

/// `w(y) = A y + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap<T> {
    /// Rows of `A`.
    pub matrix: Vec<Vec<T>>,
    pub offset: Vec<T>,
}

impl<T: Real> AffineMap<T> {
    pub fn new(matrix: Vec<Vec<T>>, offset: Vec<T>) -> Result<Self> {
        let d = offset.len();
        if d == 0 {
            return Err(Error::Config("affine map needs dimension >= 1".into()));
        }
        check_dim(d, matrix.len())?;
        for row in &matrix {
            check_dim(d, row.len())?;
        }
        if matrix.iter().flatten().chain(&offset).any(|v| !v.is_finite()) {
            return Err(Error::Config("affine map coefficients must be finite".into()));
        }
        Ok(Self { matrix, offset })
    }

    /// `w(y) = a·y + c` on the line.
    pub fn scalar(a: T, c: T) -> Self {
        Self { matrix: vec![vec![a]], offset: vec![c] }
    }

    pub fn identity(dim: usize) -> Self {
        let matrix = (0..dim).map(|r| (0..dim).map(|k| if r == k { T::one() } else { T::zero() }).collect()).collect();
        Self { matrix, offset: vec![T::zero(); dim] }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn apply(&self, y: &[T]) -> Vec<T> {
        self.matrix
            .iter()
            .zip(&self.offset)
            .map(|(row, &c)| row.iter().zip(y).map(|(&a, &v)| a * v).sum::<T>() + c)
            .collect()
    }
}

/// Place-dependent selection probabilities of a finite IFS.
#[derive(Clone)]
pub enum PlaceProbs<T> {
    Constant(Vec<T>),
    /// Two maps: `p_0(y) = base + amplitude / (1 + ‖y‖₂)`, `p_1 = 1 − p_0`.
    InverseDistance {
        base: T,
        amplitude: T,
    },
    /// Writes `p_θ(y)` for every `θ` into the output slice.
    Custom(Arc<dyn Fn(&[T], &mut [T]) + Send + Sync>),
}

impl<T: fmt::Debug> fmt::Debug for PlaceProbs<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(p) => write!(f, "Constant({p:?})"),
            Self::InverseDistance { base, amplitude } => {
                write!(f, "InverseDistance {{ base: {base:?}, amplitude: {amplitude:?} }}")
            }
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Transition law of an iterated function system with place-dependent
/// probabilities: `J(y, ·) = Σ_θ p_θ(y) δ_{w_θ(y)}`.
#[derive(Debug, Clone)]
pub struct FiniteIfs<T> {
    maps: Vec<AffineMap<T>>,
    probs: PlaceProbs<T>,
}

impl<T: Real> FiniteIfs<T> {
    pub fn new(maps: Vec<AffineMap<T>>, probs: PlaceProbs<T>) -> Result<Self> {
        let Some(first) = maps.first() else {
            return Err(Error::Config("an IFS needs at least one map".into()));
        };
        let d = first.dim();
        for m in &maps {
            check_dim(d, m.dim())?;
        }
        match &probs {
            PlaceProbs::Constant(p) => {
                if p.len() != maps.len() {
                    return Err(Error::Config(format!("{} probabilities for {} maps", p.len(), maps.len())));
                }
                validate_probs(p)?;
            }
            PlaceProbs::InverseDistance { base, amplitude } => {
                if maps.len() != 2 {
                    return Err(Error::Config("inverse-distance probabilities need exactly two maps".into()));
                }
                if !(*base >= T::zero() && *amplitude >= T::zero() && *base + *amplitude <= T::one()) {
                    return Err(Error::Config(
                        "inverse-distance probabilities need base, amplitude >= 0 and base + amplitude <= 1".into(),
                    ));
                }
            }
            PlaceProbs::Custom(_) => {}
        }
        Ok(Self { maps, probs })
    }

    pub fn maps(&self) -> &[AffineMap<T>] {
        &self.maps
    }

    pub fn probs(&self) -> &PlaceProbs<T> {
        &self.probs
    }
}

/// Law of the burst size `θ`.
#[derive(Debug, Clone, PartialEq)]
pub enum BurstLaw<T> {
    Exponential { mean: T },
    Discrete { sizes: Vec<T>, weights: Vec<T> },
}

/// `J(y, ·) = law of y + θ·e` with `θ` independent of `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveBurst<T> {
    law: BurstLaw<T>,
    direction: Vec<T>,
}

impl<T: Real> AdditiveBurst<T> {
    pub fn new(law: BurstLaw<T>, direction: Vec<T>) -> Result<Self> {
        if direction.is_empty() || direction.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("burst direction must be a finite nonempty vector".into()));
        }
        match &law {
            BurstLaw::Exponential { mean } => {
                if !(*mean > T::zero()) || !mean.is_finite() {
                    return Err(Error::Config(format!("burst mean must be positive, got {mean}")));
                }
            }
            BurstLaw::Discrete { sizes, weights } => {
                if sizes.is_empty() || sizes.len() != weights.len() || sizes.iter().any(|s| !s.is_finite()) {
                    return Err(Error::Config("discrete bursts need matching finite sizes and weights".into()));
                }
                validate_probs(weights)?;
            }
        }
        Ok(Self { law, direction })
    }

    /// Bursts of mean `mean` along the single coordinate of a 1-d state.
    pub fn exponential(mean: T) -> Result<Self> {
        Self::new(BurstLaw::Exponential { mean }, vec![T::one()])
    }

    pub fn law(&self) -> &BurstLaw<T> {
        &self.law
    }

    pub fn direction(&self) -> &[T] {
        &self.direction
    }

    fn draw_size(&self, rng: &mut RngStream) -> T {
        match &self.law {
            BurstLaw::Exponential { mean } => rng.exponential(T::one() / *mean),
            BurstLaw::Discrete { sizes, weights } => sizes[rng.categorical(weights)],
        }
    }

    /// Finite stand-in for the burst law that is exact for every
    /// translation-invariant statistic (all jump checks are).
    fn representative_sizes(&self) -> Vec<(T, T)> {
        match &self.law {
            BurstLaw::Exponential { mean } => vec![(*mean, T::one())],
            BurstLaw::Discrete { sizes, weights } => sizes.iter().copied().zip(weights.iter().copied()).collect(),
        }
    }
}

fn prob_tol<T: Real>(k: usize) -> T {
    max(T::of(1e-12), T::epsilon() * T::of_usize(16 * k.max(1)))
}

fn validate_probs<T: Real>(p: &[T]) -> Result<()> {
    if p.iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
        return Err(Error::Config("jump probabilities must be finite and nonnegative".into()));
    }
    let total: T = p.iter().copied().sum();
    if (total - T::one()).abs() > prob_tol::<T>(p.len()) {
        return Err(Error::Config(format!("jump probabilities sum to {total}, not 1")));
    }
    Ok(())
}

/// The jump kernel `J` of the model.
#[derive(Debug, Clone)]
pub enum JumpKernel<T> {
    Ifs(FiniteIfs<T>),
    Burst(AdditiveBurst<T>),
}

impl<T: Real> JumpKernel<T> {
    /// `J(y, ·) = δ_y`.
    pub fn identity(dim: usize) -> Self {
        Self::Ifs(FiniteIfs { maps: vec![AffineMap::identity(dim)], probs: PlaceProbs::Constant(vec![T::one()]) })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Ifs(f) => f.maps[0].dim(),
            Self::Burst(b) => b.direction.len(),
        }
    }

    /// Number of symbols `θ` in the finite description.
    pub fn n_symbols(&self) -> usize {
        match self {
            Self::Ifs(f) => f.maps.len(),
            Self::Burst(_) => 1,
        }
    }

    /// `true` when `p_θ` does not depend on the place `y`.
    pub fn is_state_independent(&self) -> bool {
        match self {
            Self::Ifs(f) => matches!(f.probs, PlaceProbs::Constant(_)),
            Self::Burst(_) => true,
        }
    }

    /// Writes `p_θ(y)` into `out` and checks that it is a probability vector.
    pub fn symbol_probs(&self, y: &[T], out: &mut Vec<T>) -> Result<()> {
        out.clear();
        match self {
            Self::Ifs(f) => match &f.probs {
                PlaceProbs::Constant(p) => out.extend_from_slice(p),
                PlaceProbs::InverseDistance { base, amplitude } => {
                    let norm = y.iter().map(|&v| v * v).sum::<T>().sqrt();
                    let p0 = *base + *amplitude / (T::one() + norm);
                    out.push(p0);
                    out.push(T::one() - p0);
                }
                PlaceProbs::Custom(g) => {
                    out.resize(f.maps.len(), T::zero());
                    g(y, out);
                    validate_probs(out)?;
                }
            },
            Self::Burst(_) => out.push(T::one()),
        }
        Ok(())
    }

    /// Draws the continuous innovation attached to a symbol (burst size);
    /// consumes no randomness for an IFS.
    pub fn draw_innovation(&self, rng: &mut RngStream) -> T {
        match self {
            Self::Ifs(_) => T::zero(),
            Self::Burst(b) => b.draw_size(rng),
        }
    }

    /// `w_θ(y)` with the given innovation.
    pub fn apply(&self, theta: usize, innovation: T, y: &[T]) -> Vec<T> {
        match self {
            Self::Ifs(f) => f.maps[theta].apply(y),
            Self::Burst(b) => y.iter().zip(&b.direction).map(|(&v, &e)| v + innovation * e).collect(),
        }
    }

    /// `(weight, symbol, innovation)` triples whose weighted sums reproduce
    /// every translation-invariant or finite-sum statistic of `J(y, ·)`.
    fn check_atoms(&self, y: &[T], buf: &mut Vec<T>) -> Result<Vec<(T, usize, T)>> {
        Ok(match self {
            Self::Ifs(_) => {
                self.symbol_probs(y, buf)?;
                buf.iter().enumerate().map(|(k, &p)| (p, k, T::zero())).collect()
            }
            Self::Burst(b) => b.representative_sizes().into_iter().map(|(s, w)| (w, 0, s)).collect(),
        })
    }
}

/// Draws `y' ~ J(y, ·)`.
pub fn sample_jump<T: Real>(kernel: &JumpKernel<T>, y: &[T], rng: &mut RngStream) -> Result<Vec<T>> {
    check_dim(kernel.dim(), y.len())?;
    let mut p = Vec::with_capacity(kernel.n_symbols());
    kernel.symbol_probs(y, &mut p)?;
    let theta = if p.len() == 1 { 0 } else { rng.categorical(&p) };
    let innovation = kernel.draw_innovation(rng);
    Ok(kernel.apply(theta, innovation, y))
}

/// `s = Σ_θ p_θ(y1) ∧ p_θ(y2)`, the total mass of `Q_J((y1, y2), ·)`.
pub fn coupled_jump_mass<T: Real>(kernel: &JumpKernel<T>, y1: &[T], y2: &[T]) -> Result<T> {
    check_dim(kernel.dim(), y1.len())?;
    check_dim(kernel.dim(), y2.len())?;
    let (mut p1, mut p2) = (Vec::new(), Vec::new());
    kernel.symbol_probs(y1, &mut p1)?;
    kernel.symbol_probs(y2, &mut p2)?;
    Ok(p1.iter().zip(&p2).map(|(&a, &b)| min(a, b)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum JumpBranch {
    Coupled,
    Residual,
}

/// One draw from `Q_J + residual`: a coupling of `J(y1, ·)` and `J(y2, ·)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledJumpOutcome<T> {
    pub branch: JumpBranch,
    pub u1: Vec<T>,
    pub u2: Vec<T>,
    /// Symbols used in each coordinate (equal on the coupled branch).
    pub theta: [usize; 2],
}

/// Exact sampler of the coupling `Q_J + (J(y1,·) − Q_J(·×Y)) ⊗ (J(y2,·) − Q_J(Y×·)) / (1 − s)`.
///
/// With probability `s` both coordinates use one symbol drawn
/// `∝ p_θ(y1) ∧ p_θ(y2)` and one shared innovation; otherwise each coordinate
/// draws its own symbol from its normalized residual and its own innovation.
pub fn sample_coupled_jump<T: Real>(
    kernel: &JumpKernel<T>,
    y1: &[T],
    y2: &[T],
    rng: &mut RngStream,
) -> Result<CoupledJumpOutcome<T>> {
    check_dim(kernel.dim(), y1.len())?;
    check_dim(kernel.dim(), y2.len())?;
    let (mut p1, mut p2) = (Vec::new(), Vec::new());
    kernel.symbol_probs(y1, &mut p1)?;
    kernel.symbol_probs(y2, &mut p2)?;
    let overlap: Vec<T> = p1.iter().zip(&p2).map(|(&a, &b)| min(a, b)).collect();
    let s: T = overlap.iter().copied().sum();
    let u = rng.uniform();
    if T::of(u) < s {
        let theta = if overlap.len() == 1 { 0 } else { rng.categorical(&overlap) };
        let innovation = kernel.draw_innovation(rng);
        return Ok(CoupledJumpOutcome {
            branch: JumpBranch::Coupled,
            u1: kernel.apply(theta, innovation, y1),
            u2: kernel.apply(theta, innovation, y2),
            theta: [theta, theta],
        });
    }
    let r1: Vec<T> = p1.iter().zip(&overlap).map(|(&p, &m)| max(p - m, T::zero())).collect();
    let r2: Vec<T> = p2.iter().zip(&overlap).map(|(&p, &m)| max(p - m, T::zero())).collect();
    let tot1: T = r1.iter().copied().sum();
    let tot2: T = r2.iter().copied().sum();
    if !(tot1 > T::zero() && tot2 > T::zero()) {
        return Err(Error::Internal(format!("residual jump branch drawn with coupled mass {s}")));
    }
    let t1 = rng.categorical(&r1);
    let i1 = kernel.draw_innovation(rng);
    let t2 = rng.categorical(&r2);
    let i2 = kernel.draw_innovation(rng);
    Ok(CoupledJumpOutcome {
        branch: JumpBranch::Residual,
        u1: kernel.apply(t1, i1, y1),
        u2: kernel.apply(t2, i2, y2),
        theta: [t1, t2],
    })
}

/// Constants of the jump hypotheses.
///
/// * `b_tilde ≥ sup_y Σ_θ ρ_Y(w_θ(y*), y*) p_θ(y)`
/// * `Σ_θ ρ_Y(w_θ(y1), w_θ(y2)) p_θ(y1) ≤ a_tilde ρ_Y(y1, y2)`
/// * `Σ_θ |p_θ(y1) − p_θ(y2)| ≤ l_tilde ρ_Y(y1, y2)`
/// * `Σ_{θ ∈ Θ(y1,y2)} p_θ(y1) ∧ p_θ(y2) ≥ eta` with
///   `Θ(y1,y2) = {θ : ρ_Y(w_θ(y1), w_θ(y2)) ≤ a_tilde ρ_Y(y1, y2)}`
///
/// `l_tilde = 0` is accepted for state-independent probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpRegularityCertificate<T> {
    pub a_tilde: T,
    pub b_tilde: T,
    pub l_tilde: T,
    pub eta: T,
    pub ystar: Vec<T>,
}

impl<T: Real> JumpRegularityCertificate<T> {
    pub fn validate(&self, dim: usize) -> Result<()> {
        check_dim(dim, self.ystar.len())?;
        if !(self.a_tilde > T::zero()) {
            return Err(Error::Config("certificate a_tilde must be positive".into()));
        }
        if !(self.b_tilde >= T::zero()) || !(self.l_tilde >= T::zero()) {
            return Err(Error::Config("certificate b_tilde and l_tilde must be nonnegative".into()));
        }
        if !(self.eta > T::zero() && self.eta <= T::one()) {
            return Err(Error::Config("certificate eta must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Sampled checks of the four jump hypotheses, named `i1`, `i2`, `i3`, `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpHypothesisReport {
    pub i1: CheckReport,
    pub i2: CheckReport,
    pub i3: CheckReport,
    pub eta: CheckReport,
}

impl JumpHypothesisReport {
    pub fn all_pass(&self) -> bool {
        self.i1.pass && self.i2.pass && self.i3.pass && self.eta.pass
    }

    pub fn into_vec(self) -> Vec<CheckReport> {
        vec![self.i1, self.i2, self.i3, self.eta]
    }
}

const JUMP_TOL: f64 = 1e-9;

#[derive(Default, Clone, Copy)]
struct PairStats {
    b: f64,
    a_ratio: f64,
    l_ratio: f64,
    eta_mass: f64,
}

/// Evaluates the jump hypotheses on the sampled pairs `(y1, y2)`. Every
/// statistic is an exact finite sum; only the suprema and infima over `Y`
/// are sampled. The `i1` statistic is evaluated at `y = y1`.
pub fn check_jump_hypotheses<T: Real>(
    kernel: &JumpKernel<T>,
    cert: &JumpRegularityCertificate<T>,
    base: &BaseMetric<T>,
    pairs: impl IntoIterator<Item = (Vec<T>, Vec<T>)>,
    n: usize,
) -> Result<JumpHypothesisReport> {
    cert.validate(kernel.dim())?;
    if n == 0 {
        return Err(Error::Input("need at least one sample".into()));
    }
    let draws: Vec<_> = pairs.into_iter().take(n).collect();
    if draws.len() < n {
        return Err(Error::SamplerExhausted { got: draws.len(), wanted: n });
    }
    for (a, b) in &draws {
        check_dim(kernel.dim(), a.len())?;
        check_dim(kernel.dim(), b.len())?;
    }
    let ystar = &cert.ystar;
    let stats: Vec<PairStats> = draws
        .par_iter()
        .map(|(y1, y2)| -> Result<PairStats> {
            let (mut buf1, mut buf2) = (Vec::new(), Vec::new());
            let atoms1 = kernel.check_atoms(y1, &mut buf1)?;
            let atoms2 = kernel.check_atoms(y2, &mut buf2)?;
            let d = base.eval(y1, y2);
            let b: T = atoms1.iter().map(|&(p, k, s)| p * base.eval(&kernel.apply(k, s, ystar), ystar)).sum();
            let mut out = PairStats { b: b.as_f64(), ..Default::default() };
            if d == T::zero() {
                out.eta_mass = 1.0;
                return Ok(out);
            }
            let mut spread = T::zero();
            let mut tv = T::zero();
            let mut eta = T::zero();
            for (&(p1, k, s), &(p2, _, _)) in atoms1.iter().zip(&atoms2) {
                let gap = base.eval(&kernel.apply(k, s, y1), &kernel.apply(k, s, y2));
                spread += p1 * gap;
                tv += (p1 - p2).abs();
                if gap <= cert.a_tilde * d * T::of(1.0 + 1e-12) {
                    eta += min(p1, p2);
                }
            }
            out.a_ratio = (spread / d).as_f64();
            out.l_ratio = (tv / d).as_f64();
            out.eta_mass = eta.as_f64();
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let worst_b = stats.iter().map(|s| s.b).fold(0.0, f64::max);
    let worst_a = stats.iter().map(|s| s.a_ratio).fold(0.0, f64::max);
    let worst_l = stats.iter().map(|s| s.l_ratio).fold(0.0, f64::max);
    let worst_eta = stats.iter().map(|s| s.eta_mass).fold(f64::INFINITY, f64::min);
    Ok(JumpHypothesisReport {
        i1: CheckReport::upper("i1", worst_b, cert.b_tilde.as_f64(), JUMP_TOL, n),
        i2: CheckReport::upper("i2", worst_a, cert.a_tilde.as_f64(), JUMP_TOL, n),
        i3: CheckReport::upper("i3", worst_l, cert.l_tilde.as_f64(), JUMP_TOL, n),
        eta: CheckReport::lower("eta", worst_eta, cert.eta.as_f64(), JUMP_TOL, n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;

    fn halves(probs: PlaceProbs<f64>) -> JumpKernel<f64> {
        JumpKernel::Ifs(FiniteIfs::new(vec![AffineMap::scalar(0.5, 0.0), AffineMap::scalar(0.5, 1.0)], probs).unwrap())
    }

    fn rng(k: u64) -> RngStream {
        RngStream::for_task(42, k, Purpose::Jump)
    }

    fn within_3_sigma(count: usize, n: usize, p: f64) -> bool {
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        (count as f64 - n as f64 * p).abs() <= 3.0 * sd.max(1e-12)
    }

    #[test]
    fn ifs_atoms_have_their_probabilities() {
        let k = halves(PlaceProbs::Constant(vec![0.5, 0.5]));
        let mut r = rng(0);
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| {
                let y = sample_jump(&k, &[0.0], &mut r).unwrap()[0];
                assert!(y == 0.0 || y == 1.0);
                y == 1.0
            })
            .count();
        assert!(within_3_sigma(ones, n, 0.5), "{ones}");
    }

    #[test]
    fn identity_kernel_is_identity() {
        let k = JumpKernel::<f64>::identity(2);
        assert_eq!(sample_jump(&k, &[1.5, -2.0], &mut rng(1)).unwrap(), vec![1.5, -2.0]);
    }

    #[test]
    fn burst_mean() {
        let k = JumpKernel::Burst(AdditiveBurst::<f64>::exponential(1.0).unwrap());
        let mut r = rng(2);
        let n = 10_000;
        let m = (0..n).map(|_| sample_jump(&k, &[0.0], &mut r).unwrap()[0]).sum::<f64>() / n as f64;
        assert!((m - 1.0).abs() < 0.02 * 1.5, "{m}");
    }

    #[test]
    fn unnormalized_probabilities_are_config_errors() {
        let bad = FiniteIfs::new(
            vec![AffineMap::scalar(0.5, 0.0), AffineMap::scalar(0.5, 1.0)],
            PlaceProbs::Constant(vec![0.5, 0.6]),
        );
        assert!(matches!(bad, Err(Error::Config(_))));
        let custom = halves(PlaceProbs::Custom(Arc::new(|_y: &[f64], out: &mut [f64]| {
            out[0] = 0.5;
            out[1] = 0.4;
        })));
        assert!(matches!(sample_jump(&custom, &[0.0], &mut rng(3)), Err(Error::Config(_))));
    }

    #[test]
    fn coupled_mass_examples() {
        let k = halves(PlaceProbs::InverseDistance { base: 0.3, amplitude: 0.4 });
        assert_eq!(coupled_jump_mass(&k, &[2.0], &[2.0]).unwrap(), 1.0);
        let table = halves(PlaceProbs::Custom(Arc::new(|y: &[f64], out: &mut [f64]| {
            let p = if y[0] < 0.5 { 0.7 } else { 0.4 };
            out[0] = p;
            out[1] = 1.0 - p;
        })));
        let s = coupled_jump_mass(&table, &[0.0], &[1.0]).unwrap();
        assert!((s - 0.7).abs() < 1e-15);
        let burst = JumpKernel::Burst(AdditiveBurst::exponential(2.0).unwrap());
        assert_eq!(coupled_jump_mass(&burst, &[0.0], &[5.0]).unwrap(), 1.0);
    }

    #[test]
    fn identical_inputs_always_couple() {
        let k = halves(PlaceProbs::InverseDistance { base: 0.3, amplitude: 0.4 });
        let mut r = rng(4);
        for _ in 0..1000 {
            let o = sample_coupled_jump(&k, &[0.7], &[0.7], &mut r).unwrap();
            assert_eq!(o.branch, JumpBranch::Coupled);
            assert_eq!(o.u1, o.u2);
        }
    }

    #[test]
    fn bursts_preserve_displacement() {
        let k = JumpKernel::Burst(AdditiveBurst::<f64>::exponential(1.0).unwrap());
        let mut r = rng(5);
        for _ in 0..1000 {
            let o = sample_coupled_jump(&k, &[1.0], &[4.0], &mut r).unwrap();
            assert_eq!(o.branch, JumpBranch::Coupled);
            assert!((o.u2[0] - o.u1[0] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn branch_frequency_and_marginals() {
        // p_0(0) = 0.7, p_0(2) = 0.3 + 0.4/3: s = 0.3 + 0.4/3 + 0.3 = 0.7333…
        let k = halves(PlaceProbs::InverseDistance { base: 0.3, amplitude: 0.4 });
        let (y1, y2) = ([0.0], [2.0]);
        let s = coupled_jump_mass(&k, &y1, &y2).unwrap();
        let p2_0 = 0.3 + 0.4 / 3.0;
        assert!((s - (p2_0 + 0.3)).abs() < 1e-15);
        let mut r = rng(6);
        let n = 100_000;
        let (mut coupled, mut first0, mut second0) = (0, 0, 0);
        for _ in 0..n {
            let o = sample_coupled_jump(&k, &y1, &y2, &mut r).unwrap();
            coupled += (o.branch == JumpBranch::Coupled) as usize;
            first0 += (o.theta[0] == 0) as usize;
            second0 += (o.theta[1] == 0) as usize;
        }
        assert!(within_3_sigma(coupled, n, s), "{coupled} vs {s}");
        assert!(within_3_sigma(first0, n, 0.7), "{first0}");
        assert!(within_3_sigma(second0, n, p2_0), "{second0}");
    }

    #[test]
    fn coupled_branch_is_dominated_atomwise() {
        let k = halves(PlaceProbs::InverseDistance { base: 0.3, amplitude: 0.4 });
        for (a, b) in [(0.0, 2.0), (-3.0, 1.0), (10.0, 0.5)] {
            let (mut p1, mut p2) = (Vec::new(), Vec::new());
            k.symbol_probs(&[a], &mut p1).unwrap();
            k.symbol_probs(&[b], &mut p2).unwrap();
            for t in 0..2 {
                let q = p1[t].min(p2[t]);
                assert!(q <= p1[t] && q <= p2[t]);
            }
        }
    }

    fn pair_stream(seed: u64) -> impl Iterator<Item = (Vec<f64>, Vec<f64>)> {
        let mut r = RngStream::for_task(seed, 0, Purpose::Sampler);
        std::iter::repeat_with(move || (vec![10.0 * r.uniform() - 5.0], vec![10.0 * r.uniform() - 5.0]))
    }

    #[test]
    fn hypotheses_constant_ifs() {
        let k = halves(PlaceProbs::Constant(vec![0.5, 0.5]));
        let cert = JumpRegularityCertificate { a_tilde: 0.5, b_tilde: 0.5, l_tilde: 0.0, eta: 1.0, ystar: vec![0.0] };
        let rep = check_jump_hypotheses(&k, &cert, &BaseMetric::Euclidean, pair_stream(1), 500).unwrap();
        assert!((rep.i2.worst - 0.5).abs() < 1e-12, "{rep:?}");
        assert_eq!(rep.i3.worst, 0.0);
        assert!(rep.all_pass(), "{rep:?}");
    }

    #[test]
    fn hypotheses_bursts() {
        let k = JumpKernel::Burst(AdditiveBurst::<f64>::exponential(1.0).unwrap());
        let cert =
            JumpRegularityCertificate::<f64> { a_tilde: 1.0, b_tilde: 1.0, l_tilde: 0.0, eta: 1.0, ystar: vec![0.0] };
        let rep = check_jump_hypotheses(&k, &cert, &BaseMetric::Euclidean, pair_stream(2), 500).unwrap();
        assert!((rep.i2.worst - 1.0).abs() < 1e-12);
        assert!((rep.i1.worst - 1.0).abs() < 1e-15);
        assert!(rep.all_pass(), "{rep:?}");
        let low = JumpRegularityCertificate { b_tilde: 0.5, ..cert };
        let rep = check_jump_hypotheses(&k, &low, &BaseMetric::Euclidean, pair_stream(2), 10).unwrap();
        assert!(!rep.i1.pass);
    }

    #[test]
    fn place_dependent_certificate_and_mass_bound() {
        // |p_0(y1) − p_0(y2)| ≤ 0.4 ||y1| − |y2|| so Σ|Δp| ≤ 0.8 ρ.
        let k = halves(PlaceProbs::InverseDistance { base: 0.3, amplitude: 0.4 });
        let cert =
            JumpRegularityCertificate::<f64> { a_tilde: 0.5, b_tilde: 0.7, l_tilde: 0.8, eta: 0.6, ystar: vec![0.0] };
        let rep = check_jump_hypotheses(&k, &cert, &BaseMetric::Euclidean, pair_stream(3), 5000).unwrap();
        assert!(rep.all_pass(), "{rep:?}");
        for (y1, y2) in pair_stream(4).take(2000) {
            let s = coupled_jump_mass(&k, &y1, &y2).unwrap();
            assert!(1.0 - s <= cert.l_tilde * (y1[0] - y2[0]).abs() + 1e-12);
        }
    }

    #[test]
    fn coupled_branch_lands_in_contracted_set() {
        let k = halves(PlaceProbs::InverseDistance { base: 0.3, amplitude: 0.4 });
        let (y1, y2) = ([-1.0], [3.0]);
        let mut r = rng(7);
        let n = 50_000;
        let hits = (0..n)
            .filter(|_| {
                let o = sample_coupled_jump(&k, &y1, &y2, &mut r).unwrap();
                o.branch == JumpBranch::Coupled && (o.u1[0] - o.u2[0]).abs() <= 0.5 * 4.0 + 1e-12
            })
            .count();
        assert!(hits as f64 / n as f64 >= 0.6);
    }
}

//! State space `X = Y × I` with `Y = ℝ^d`, its metrics, the Lyapunov function
//! and finitely supported probability measures on `X`.

use std::cmp::Ordering;

use crate::error::{check_dim, Error, Result};
use crate::scalar::{min, Real};

/// A point `(y, i)` of the hybrid state space.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridState<T> {
    pub y: Vec<T>,
    pub regime: usize,
}

impl<T: Real> HybridState<T> {
    pub fn new(y: Vec<T>, regime: usize) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Input("state dimension must be at least 1".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("state coordinates must be finite".into()));
        }
        Ok(Self { y, regime })
    }

    /// One-dimensional convenience constructor.
    pub fn scalar(y: T, regime: usize) -> Self {
        Self { y: vec![y], regime }
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    /// Total order used for deduplication: regime first, then coordinates.
    pub(crate) fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.regime.cmp(&other.regime).then_with(|| {
            for (a, b) in self.y.iter().zip(&other.y) {
                match a.partial_cmp(b) {
                    Some(Ordering::Equal) | None => continue,
                    Some(o) => return o,
                }
            }
            Ordering::Equal
        })
    }
}

/// A hybrid state together with the cumulative jump time `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState<T> {
    pub x: HybridState<T>,
    pub tau: T,
}

impl<T: Real> AugmentedState<T> {
    pub fn at_origin(x: HybridState<T>) -> Self {
        Self { x, tau: T::zero() }
    }
}

/// Metric on `Y = ℝ^d`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum BaseMetric<T> {
    #[default]
    Euclidean,
    /// `Σ_k w_k |u_k − v_k|` with strictly positive weights.
    WeightedL1(Vec<T>),
}

impl<T: Real> BaseMetric<T> {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if let BaseMetric::WeightedL1(w) = self {
            check_dim(dim, w.len())?;
            if w.iter().any(|&v| !(v > T::zero()) || !v.is_finite()) {
                return Err(Error::Config("L1 weights must be positive and finite".into()));
            }
        }
        Ok(())
    }

    /// `ρ_Y(u, v)`; callers guarantee equal lengths.
    pub fn eval(&self, u: &[T], v: &[T]) -> T {
        debug_assert_eq!(u.len(), v.len());
        match self {
            BaseMetric::Euclidean => {
                if u.len() == 1 {
                    return (u[0] - v[0]).abs();
                }
                u.iter().zip(v).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>().sqrt()
            }
            BaseMetric::WeightedL1(w) => u.iter().zip(v).zip(w).map(|((&a, &b), &wk)| wk * (a - b).abs()).sum(),
        }
    }

    pub fn distance(&self, u: &[T], v: &[T]) -> Result<T> {
        check_dim(u.len(), v.len())?;
        Ok(self.eval(u, v))
    }

    /// `ρ_Y(s·v, 0) = |s| ρ_Y(v, 0)` holds for both metrics; this is the norm.
    pub fn norm(&self, v: &[T]) -> T {
        let zero = vec![T::zero(); v.len()];
        self.eval(v, &zero)
    }
}

/// `ρ_{X,c}((y1,i1),(y2,i2)) = ρ_Y(y1,y2) + c·[i1 ≠ i2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridMetric<T> {
    pub c: T,
    pub base: BaseMetric<T>,
}

impl<T: Real> HybridMetric<T> {
    pub fn new(c: T, base: BaseMetric<T>) -> Result<Self> {
        if !(c > T::zero()) || !c.is_finite() {
            return Err(Error::Config(format!("regime weight c must be positive, got {c}")));
        }
        Ok(Self { c, base })
    }

    pub fn euclidean(c: T) -> Result<Self> {
        Self::new(c, BaseMetric::Euclidean)
    }

    #[inline]
    pub(crate) fn eval(&self, x1: &HybridState<T>, x2: &HybridState<T>) -> T {
        let jump = if x1.regime == x2.regime { T::zero() } else { self.c };
        self.base.eval(&x1.y, &x2.y) + jump
    }
}

pub fn hybrid_distance<T: Real>(x1: &HybridState<T>, x2: &HybridState<T>, m: &HybridMetric<T>) -> Result<T> {
    check_dim(x1.dim(), x2.dim())?;
    Ok(m.eval(x1, x2))
}

/// `ρ̄_{X,c} = ρ_{X,c} ∧ 1`.
pub fn truncated_distance<T: Real>(x1: &HybridState<T>, x2: &HybridState<T>, m: &HybridMetric<T>) -> Result<T> {
    Ok(min(hybrid_distance(x1, x2, m)?, T::one()))
}

/// Lyapunov function `V(y, i) = ρ_Y(y, y*)`, independent of the regime.
pub fn lyapunov_v<T: Real>(x: &HybridState<T>, ystar: &[T], base: &BaseMetric<T>) -> Result<T> {
    base.distance(&x.y, ystar)
}

/// Weighted finite point set on `X`; weights are normalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure<T> {
    atoms: Vec<(HybridState<T>, T)>,
}

impl<T: Real> EmpiricalMeasure<T> {
    pub fn new(atoms: Vec<(HybridState<T>, T)>) -> Result<Self> {
        let Some(first) = atoms.first() else {
            return Err(Error::Input("empirical measure needs at least one atom".into()));
        };
        let d = first.0.dim();
        let mut total = T::zero();
        for (x, w) in &atoms {
            check_dim(d, x.dim())?;
            if !(*w > T::zero()) || !w.is_finite() {
                return Err(Error::Input(format!("atom weights must be positive, got {w}")));
            }
            total += *w;
        }
        let atoms = atoms.into_iter().map(|(x, w)| (x, w / total)).collect();
        Ok(Self { atoms })
    }

    /// Equal-weight measure on a sample.
    pub fn from_samples(samples: Vec<HybridState<T>>) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::Input("empirical measure needs at least one atom".into()));
        }
        let w = T::one() / T::of_usize(n);
        Self::new(samples.into_iter().map(|x| (x, w)).collect())
    }

    pub fn dirac(x: HybridState<T>) -> Self {
        Self { atoms: vec![(x, T::one())] }
    }

    pub fn atoms(&self) -> &[(HybridState<T>, T)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].0.dim()
    }

    /// `∫ f dμ`.
    pub fn integrate(&self, mut f: impl FnMut(&HybridState<T>) -> T) -> T {
        self.atoms.iter().map(|(x, w)| *w * f(x)).sum()
    }

    /// Image measure under a map of the atoms.
    pub fn map(&self, mut f: impl FnMut(&HybridState<T>) -> HybridState<T>) -> Result<Self> {
        Self::new(self.atoms.iter().map(|(x, w)| (f(x), *w)).collect())
    }
}

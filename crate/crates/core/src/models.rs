//! Built-in example models with exact regularity certificates.
//!
//! * `gene-expression`: protein level degrading at rate `k_i` in regime `i`,
//!   exponential transcriptional bursts at rate `λ`.
//! * `example-two-flows`: `S_1(t,y) = e^{αt} y`, `S_2(t,y) = e^{αt}(y − r) + r`
//!   with additive bursts.
//! * `ifs-place-dependent`: degradation flows followed by one of two halving
//!   maps chosen with place-dependent probabilities.
//!
//! Every preset carries closed-form values of the derived constants, computed
//! here independently of [`crate::analysis::compute_constants`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::CheckOptions;
use crate::error::{Error, Result};
use crate::jump::{AdditiveBurst, AffineMap, FiniteIfs, JumpKernel, JumpRegularityCertificate, PlaceProbs};
use crate::pdmp::ModelSpec;
use crate::semiflow::{FlowRegularityCertificate, LFn, PhiFn, SemiflowSpec};
use crate::state::{HybridMetric, HybridState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetId {
    GeneExpression,
    ExampleTwoFlows,
    IfsPlaceDependent,
}

impl PresetId {
    pub const ALL: [PresetId; 3] = [Self::GeneExpression, Self::ExampleTwoFlows, Self::IfsPlaceDependent];

    pub fn name(self) -> &'static str {
        match self {
            Self::GeneExpression => "gene-expression",
            Self::ExampleTwoFlows => "example-two-flows",
            Self::IfsPlaceDependent => "ifs-place-dependent",
        }
    }

    fn allowed_keys(self) -> &'static [&'static str] {
        match self {
            Self::GeneExpression => &["k", "beta", "lambda", "c", "pi"],
            Self::ExampleTwoFlows => &["alpha", "r", "beta", "lambda", "c", "pi"],
            Self::IfsPlaceDependent => &["k", "lambda", "c", "pi"],
        }
    }
}

impl fmt::Display for PresetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PresetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown preset '{s}' (expected gene-expression, example-two-flows or ifs-place-dependent)"
            ))
        })
    }
}

/// Parameter overrides. Each preset accepts a subset of the keys; supplying
/// one it does not use is an error.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Degradation rates, one per regime.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<f64>>,
    /// Mean burst size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Regime-separation weight of the hybrid metric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<Vec<Vec<f64>>>,
    /// Common flow exponent of `example-two-flows`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Fixed point of the second flow of `example-two-flows`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
}

impl Overrides {
    fn present(&self) -> Vec<&'static str> {
        let mut keys = Vec::new();
        let flags = [
            ("k", self.k.is_some()),
            ("beta", self.beta.is_some()),
            ("lambda", self.lambda.is_some()),
            ("c", self.c.is_some()),
            ("pi", self.pi.is_some()),
            ("alpha", self.alpha.is_some()),
            ("r", self.r.is_some()),
        ];
        for (name, set) in flags {
            if set {
                keys.push(name);
            }
        }
        keys
    }
}

/// Closed-form values of the derived constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedConstants {
    pub a: f64,
    pub b: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub t0: f64,
    #[serde(rename = "K_phi")]
    pub k_phi: f64,
    #[serde(rename = "M_phi")]
    pub m_phi: f64,
    #[serde(rename = "M_L")]
    pub m_l: f64,
    pub c_min: f64,
}

/// A fully wired model.
#[derive(Debug, Clone)]
pub struct Preset {
    pub id: PresetId,
    pub model: ModelSpec<f64>,
    pub flow_cert: FlowRegularityCertificate<f64>,
    pub jump_cert: JumpRegularityCertificate<f64>,
    pub expected: ExpectedConstants,
    /// Default starting pair for coupling experiments.
    pub pair: (HybridState<f64>, HybridState<f64>),
    /// Twenty drift-check points: ten levels in each of the first two
    /// regimes, or twenty in the only one.
    pub test_points: Vec<HybridState<f64>>,
}

impl Preset {
    /// Check budget sampling a box of half-width `R` around `y*`.
    pub fn check_options(&self, n_draws: usize, n_samples: usize, seed: u64) -> CheckOptions<f64> {
        let mut points: Vec<Vec<f64>> = Vec::new();
        for x in &self.test_points {
            if !points.contains(&x.y) {
                points.push(x.y.clone());
            }
        }
        CheckOptions { n_draws, n_samples, points, radius: self.expected.r, t_max: 10.0, seed }
    }
}

pub fn build_preset(id: PresetId, overrides: &Overrides) -> Result<Preset> {
    let allowed = id.allowed_keys();
    if let Some(bad) = overrides.present().into_iter().find(|k| !allowed.contains(k)) {
        return Err(Error::Config(format!(
            "preset {id} does not take override '{bad}' (allowed: {})",
            allowed.join(", ")
        )));
    }
    let lambda = overrides.lambda.unwrap_or(1.0);
    positive("lambda", lambda)?;
    match id {
        PresetId::GeneExpression => {
            let k = overrides.k.clone().unwrap_or_else(|| vec![1.0, 2.0]);
            let beta = overrides.beta.unwrap_or(1.0);
            positive("beta", beta)?;
            let jump =
                JumpRegularityCertificate { a_tilde: 1.0, b_tilde: beta, l_tilde: 0.0, eta: 1.0, ystar: vec![0.0] };
            let kernel = JumpKernel::Burst(AdditiveBurst::exponential(beta)?);
            degradation_preset(id, k, lambda, kernel, jump, overrides)
        }
        PresetId::IfsPlaceDependent => {
            let k = overrides.k.clone().unwrap_or_else(|| vec![1.0, 2.0]);
            // p_0 moves by at most 0.4 |u − v|, so the total variation between
            // two points is at most 0.8 |u − v| and the overlap at least 0.6.
            let jump =
                JumpRegularityCertificate { a_tilde: 0.5, b_tilde: 0.7, l_tilde: 0.8, eta: 0.6, ystar: vec![0.0] };
            let kernel = JumpKernel::Ifs(FiniteIfs::new(
                vec![AffineMap::scalar(0.5, 0.0), AffineMap::scalar(0.5, 1.0)],
                PlaceProbs::InverseDistance { base: 0.3, amplitude: 0.4 },
            )?);
            let mut ov = overrides.clone();
            if ov.pi.is_none() && k.len() == 2 {
                ov.pi = Some(vec![vec![0.7, 0.3], vec![0.4, 0.6]]);
            }
            degradation_preset(id, k, lambda, kernel, jump, &ov)
        }
        PresetId::ExampleTwoFlows => two_flows(overrides, lambda),
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

fn admissible(a_tilde: f64, l: f64, alpha: f64, lambda: f64) -> Result<()> {
    let lhs = a_tilde * l + alpha / lambda;
    if lhs < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "override violates ãL + α/λ < 1: ã = {a_tilde}, L = {l}, α = {alpha}, λ = {lambda} give {lhs}"
        )))
    }
}

fn uniform_pi(n: usize) -> Vec<Vec<f64>> {
    vec![vec![1.0 / n as f64; n]; n]
}

fn pick_c(c_min: f64, c: Option<f64>) -> Result<f64> {
    match c {
        Some(c) => {
            positive("c", c)?;
            Ok(c)
        }
        None => Ok(c_min.ceil().max(1.0)),
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
}

fn grid_points(lo: f64, hi: f64, n_regimes: usize) -> Vec<HybridState<f64>> {
    let regimes = n_regimes.min(2);
    let per = 20 / regimes;
    (0..regimes).flat_map(|i| linspace(lo, hi, per).map(move |y| HybridState::scalar(y, i))).collect()
}

/// Common shape of the gene and IFS presets: `S_i(t,y) = e^{−k_i t} y`,
/// `y* = 0`, `L = 1`, `α = −min k`, `φ(t) = e^{−k_min t} − e^{−k_max t}`,
/// `𝓛(y) = |y|`.
fn degradation_preset(
    id: PresetId,
    k: Vec<f64>,
    lambda: f64,
    kernel: JumpKernel<f64>,
    jump: JumpRegularityCertificate<f64>,
    overrides: &Overrides,
) -> Result<Preset> {
    if k.is_empty() {
        return Err(Error::Config("k needs at least one rate".into()));
    }
    if k.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::Config(format!("degradation rates must be nonnegative and finite, got {k:?}")));
    }
    let n = k.len();
    let k_min = k.iter().copied().fold(f64::INFINITY, f64::min);
    let k_max = k.iter().copied().fold(0.0, f64::max);
    let alpha = -k_min;
    admissible(jump.a_tilde, 1.0, alpha, lambda)?;

    let phi = if k_max > k_min {
        PhiFn::ExpDifference { amplitude: 1.0, decay_a: k_min, decay_b: k_max }
    } else {
        PhiFn::Zero
    };
    let flow_cert =
        FlowRegularityCertificate { l: 1.0, alpha, phi, lfun: LFn::Distance { scale: 1.0, center: vec![0.0] } };

    let a = jump.a_tilde * lambda / (lambda + k_min);
    let b = jump.b_tilde;
    let r = 4.0 * b / (1.0 - a);
    let t0 = if k_min > 0.0 { (k_min / lambda).ln_1p() / k_min } else { 1.0 / lambda };
    let (k_phi, m_phi) = if k_max > k_min {
        let phi = |t: f64| (-k_min * t).exp() - (-k_max * t).exp();
        let peak = if k_min > 0.0 { (k_max / k_min).ln() / (k_max - k_min) } else { f64::INFINITY };
        (1.0 / (lambda + k_min) - 1.0 / (lambda + k_max), phi(peak.min(t0)))
    } else {
        (0.0, 0.0)
    };
    let m_l = r;
    let c_min = (lambda + k_min) * (m_l * k_phi + m_l * m_phi / lambda) + 1.0;
    let expected = ExpectedConstants { a, b, r, t0, k_phi, m_phi, m_l, c_min };

    let c = pick_c(c_min, overrides.c)?;
    let pi = overrides.pi.clone().unwrap_or_else(|| uniform_pi(n));
    let flows = SemiflowSpec::affine(k.iter().map(|v| -v).collect(), vec![vec![0.0]; n])?;
    let mut model = ModelSpec::new(flows, kernel, pi, lambda, vec![0.0], HybridMetric::euclidean(c)?)?;
    let test_points = if id == PresetId::GeneExpression {
        model = model.with_nonnegative_domain();
        grid_points(0.0, 2.0 * r, n)
    } else {
        grid_points(-r, r, n)
    };
    let second = if n > 1 { 1 } else { 0 };
    Ok(Preset {
        id,
        model,
        flow_cert,
        jump_cert: jump,
        expected,
        pair: (HybridState::scalar(0.0, 0), HybridState::scalar(3.0, second)),
        test_points,
    })
}

fn two_flows(overrides: &Overrides, lambda: f64) -> Result<Preset> {
    let alpha = overrides.alpha.unwrap_or(-1.0);
    let r_fix = overrides.r.unwrap_or(1.0);
    let beta = overrides.beta.unwrap_or(1.0);
    positive("beta", beta)?;
    if !alpha.is_finite() || !r_fix.is_finite() {
        return Err(Error::Config("alpha and r must be finite".into()));
    }
    admissible(1.0, 1.0, alpha, lambda)?;

    // |S_1(t,y) − S_2(t,y)| = |r| (1 − e^{αt}) exactly.
    let flow_cert = FlowRegularityCertificate {
        l: 1.0,
        alpha,
        phi: PhiFn::Saturating { amplitude: r_fix.abs(), rate: alpha },
        lfun: LFn::Constant(1.0),
    };
    let jump = JumpRegularityCertificate { a_tilde: 1.0, b_tilde: beta, l_tilde: 0.0, eta: 1.0, ystar: vec![0.0] };

    let a = lambda / (lambda - alpha);
    let k_phi = r_fix.abs() * (1.0 / lambda - 1.0 / (lambda - alpha));
    let b = lambda * k_phi + beta;
    let r = 4.0 * b / (1.0 - a);
    let t0 = (lambda / (lambda - alpha)).ln() / alpha;
    // φ is increasing, so its supremum up to t0 is φ(t0) = |r| (1 − λ/(λ−α)).
    let m_phi = r_fix.abs() * (-alpha) / (lambda - alpha);
    let m_l = 1.0;
    let c_min = (lambda - alpha) * (m_l * k_phi + m_l * m_phi / lambda) + 1.0;
    let expected = ExpectedConstants { a, b, r, t0, k_phi, m_phi, m_l, c_min };

    let c = pick_c(c_min, overrides.c)?;
    let pi = overrides.pi.clone().unwrap_or_else(|| uniform_pi(2));
    let flows = SemiflowSpec::affine(vec![alpha, alpha], vec![vec![0.0], vec![r_fix]])?;
    let kernel = JumpKernel::Burst(AdditiveBurst::exponential(beta)?);
    let model = ModelSpec::new(flows, kernel, pi, lambda, vec![0.0], HybridMetric::euclidean(c)?)?;
    Ok(Preset {
        id: PresetId::ExampleTwoFlows,
        model,
        flow_cert,
        jump_cert: jump,
        expected,
        pair: (HybridState::scalar(0.0, 0), HybridState::scalar(3.0, 1)),
        test_points: grid_points(-r, r, 2),
    })
}

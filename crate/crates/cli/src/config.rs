//! Run configuration: a TOML file validated in full before anything runs.
//!
//! ```toml
//! schema_version = 1
//! experiment = "couple"   # simulate | couple | fm | check | constants | correspond | full-report
//!
//! [model]
//! preset = "gene-expression"
//! overrides = { k = [1.0, 2.0], c = 8.0 }
//!
//! [budget]
//! n_steps = 30
//! n_samples = 10000
//! seed = 1
//!
//! [output]
//! directory = "out"
//! ```
//!
//! Every table rejects unknown keys. See the README for the full schema.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pdmp_ergo::analysis::compute_constants;
use pdmp_ergo::jump::{
    AdditiveBurst, AffineMap, BurstLaw, FiniteIfs, JumpKernel, JumpRegularityCertificate, PlaceProbs,
};
use pdmp_ergo::pdmp::ModelSpec;
use pdmp_ergo::semiflow::{affine_certificate, AffineFlows};
use pdmp_ergo::{
    build_preset, BaseMetric, FlowCertificate, HybridMetric, HybridState, JumpCertificate, Model, Overrides, Preset,
    PresetId, SemiflowSpec, State,
};
use serde::{Deserialize, Serialize};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const OUTPUT_DIR_ENV: &str = "PDMP_ERGO_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    Couple,
    Fm,
    Check,
    Constants,
    Correspond,
    FullReport,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Couple => "couple",
            Self::Fm => "fm",
            Self::Check => "check",
            Self::Constants => "constants",
            Self::Correspond => "correspond",
            Self::FullReport => "full-report",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub experiment: Experiment,
    pub model: ModelSection,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default)]
    pub pairs: Option<Pairs>,
    #[serde(default)]
    pub output: Output,
    #[serde(default)]
    pub fm: Option<FmSection>,
}

/// Either a preset (with optional overrides) or an inline model.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Option<PresetId>,
    #[serde(default)]
    pub overrides: Option<Overrides>,
    pub inline: Option<InlineModel>,
}

/// A model with affine flows `S_i(t,y) = e^{α_i t}(y − r_i) + r_i`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineModel {
    pub d: usize,
    pub lambda: f64,
    pub c: f64,
    pub ystar: Vec<f64>,
    pub pi: Vec<Vec<f64>>,
    pub flows: InlineFlows,
    pub jump: InlineJump,
    pub certificate: InlineCertificate,
    /// Coordinate weights of an L1 base metric; Euclidean when absent.
    #[serde(default)]
    pub l1_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub nonnegative: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineFlows {
    pub rates: Vec<f64>,
    pub fixed_points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InlineJump {
    Identity,
    /// `y + θ e` with `θ ~ Exp(mean)`; `e` defaults to the first unit vector.
    Burst {
        mean: f64,
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    /// Affine maps with constant probabilities, or `p_0(y) = base + amplitude/(1 + ‖y‖)`
    /// for two maps.
    Ifs {
        maps: Vec<InlineMap>,
        #[serde(default)]
        probabilities: Option<Vec<f64>>,
        #[serde(default)]
        place: Option<InlinePlace>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineMap {
    pub matrix: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlinePlace {
    pub base: f64,
    pub amplitude: f64,
}

/// Jump-kernel constants supplied by the user.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineCertificate {
    pub a_tilde: f64,
    pub b_tilde: f64,
    pub l_tilde: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budget {
    pub n_steps: usize,
    pub n_samples: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub seed: u64,
    /// Worker threads; all available cores when absent.
    pub workers: Option<usize>,
    pub burn_in: usize,
    pub time_grid: Vec<f64>,
    pub bootstrap: usize,
    /// Draws for the sampled suprema of the hypothesis checks.
    pub n_draws: usize,
    /// Trajectories written to the CSV exports.
    pub n_paths: usize,
    /// Replace the second regime by the first after the coupling time.
    /// Off for chain experiments and on for process decay when absent.
    pub identify: Option<bool>,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            n_steps: 30,
            n_samples: 10_000,
            horizon: 50.0,
            seed: 0,
            workers: None,
            burn_in: 200,
            time_grid: (1..=20).map(f64::from).collect(),
            bootstrap: 200,
            n_draws: 4000,
            n_paths: 10,
            identify: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pairs {
    pub x1: StateSpec,
    pub x2: StateSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    pub y: Vec<f64>,
    pub regime: usize,
}

impl StateSpec {
    fn to_state(&self) -> Result<State> {
        Ok(HybridState::new(self.y.clone(), self.regime)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Output {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for Output {
    fn default() -> Self {
        Self { directory: PathBuf::from("pdmp-ergo-out"), formats: vec![Format::Json, Format::Csv] }
    }
}

/// Two measures read from exported CSV files.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FmSection {
    pub mu: MeasureSource,
    pub nu: MeasureSource,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSource {
    /// Relative paths are resolved against the config file's directory.
    pub path: PathBuf,
    /// Column selecting the rows, e.g. `n`.
    pub column: String,
    pub value: f64,
    #[serde(default)]
    pub coordinate: CoordinateName,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinateName {
    #[default]
    Single,
    First,
    Second,
}

/// A resolved model with its certificates and default points.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub model: Model,
    pub flow_cert: FlowCertificate,
    pub jump_cert: JumpCertificate,
    pub preset: Option<Preset>,
    pub x1: State,
    pub x2: State,
    pub test_points: Vec<State>,
    /// `c` as written in the config, if any.
    pub explicit_c: Option<f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("{e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            bail!("schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})", self.schema_version);
        }
        match (&self.model.preset, &self.model.inline) {
            (Some(_), Some(_)) => bail!("[model] takes either `preset` or `inline`, not both"),
            (None, None) => bail!("[model] needs `preset` or `inline`"),
            (None, Some(_)) if self.model.overrides.is_some() => bail!("`overrides` only applies to presets"),
            _ => {}
        }
        let b = &self.budget;
        if b.n_samples < 2 {
            bail!("budget.n_samples must be at least 2");
        }
        if !(b.horizon >= 0.0 && b.horizon.is_finite()) {
            bail!("budget.T must be finite and nonnegative");
        }
        if b.workers == Some(0) {
            bail!("budget.workers must be positive");
        }
        if b.n_draws == 0 {
            bail!("budget.n_draws must be positive");
        }
        if self.experiment == Experiment::Fm && self.fm.is_none() {
            bail!("experiment \"fm\" needs an [fm] table with `mu` and `nu`");
        }
        Ok(())
    }

    pub fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }

    /// Output directory, with the environment override applied.
    pub fn output_dir(&self, config_dir: &Path) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => config_dir.join(&self.output.directory),
        }
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let mut r = if let Some(id) = self.model.preset {
            let ov = self.model.overrides.clone().unwrap_or_default();
            let explicit_c = ov.c;
            let p = build_preset(id, &ov)?;
            Resolved {
                model: p.model.clone(),
                flow_cert: p.flow_cert.clone(),
                jump_cert: p.jump_cert.clone(),
                x1: p.pair.0.clone(),
                x2: p.pair.1.clone(),
                test_points: p.test_points.clone(),
                preset: Some(p),
                explicit_c,
            }
        } else {
            let spec = self.model.inline.as_ref().expect("checked in validate");
            inline_model(spec)?
        };
        if let Some(pairs) = &self.pairs {
            r.x1 = pairs.x1.to_state()?;
            r.x2 = pairs.x2.to_state()?;
        }
        r.model.validate_state(&r.x1)?;
        r.model.validate_state(&r.x2)?;
        Ok(r)
    }
}

fn inline_model(spec: &InlineModel) -> Result<Resolved> {
    let d = spec.d;
    if d == 0 {
        bail!("model.inline.d must be at least 1");
    }
    let affine = AffineFlows { rates: spec.flows.rates.clone(), fixed_points: spec.flows.fixed_points.clone() };
    let flows = SemiflowSpec::affine(affine.rates.clone(), affine.fixed_points.clone())?;
    let jump = match &spec.jump {
        InlineJump::Identity => JumpKernel::identity(d),
        InlineJump::Burst { mean, direction } => {
            let dir = direction.clone().unwrap_or_else(|| {
                let mut e = vec![0.0; d];
                e[0] = 1.0;
                e
            });
            JumpKernel::Burst(AdditiveBurst::new(BurstLaw::Exponential { mean: *mean }, dir)?)
        }
        InlineJump::Ifs { maps, probabilities, place } => {
            let maps = maps
                .iter()
                .map(|m| AffineMap::new(m.matrix.clone(), m.offset.clone()))
                .collect::<pdmp_ergo::Result<Vec<_>>>()?;
            let probs = match (probabilities, place) {
                (Some(p), None) => PlaceProbs::Constant(p.clone()),
                (None, Some(pl)) => PlaceProbs::InverseDistance { base: pl.base, amplitude: pl.amplitude },
                _ => bail!("an inline IFS needs exactly one of `probabilities` or `place`"),
            };
            JumpKernel::Ifs(FiniteIfs::new(maps, probs)?)
        }
    };
    let base = match &spec.l1_weights {
        Some(w) => BaseMetric::WeightedL1(w.clone()),
        None => BaseMetric::Euclidean,
    };
    let metric = HybridMetric::new(spec.c, base.clone())?;
    let mut model = ModelSpec::new(flows, jump, spec.pi.clone(), spec.lambda, spec.ystar.clone(), metric)?;
    if spec.nonnegative {
        model = model.with_nonnegative_domain();
    }
    let flow_cert = affine_certificate(&affine, &base);
    let c = &spec.certificate;
    let jump_cert = JumpRegularityCertificate {
        a_tilde: c.a_tilde,
        b_tilde: c.b_tilde,
        l_tilde: c.l_tilde,
        eta: c.eta,
        ystar: spec.ystar.clone(),
    };
    jump_cert.validate(d)?;

    // Drift-check points along the first axis out to 2R (or 10 when the
    // drift constants are unavailable), in the first two regimes.
    let reach = compute_constants(&model, &flow_cert, &jump_cert)
        .ok()
        .and_then(|k| k.r)
        .filter(|r| r.is_finite())
        .map_or(10.0, |r| 2.0 * r);
    let regimes = model.n_regimes().min(2);
    let per = 20 / regimes;
    let mut test_points = Vec::with_capacity(20);
    for i in 0..regimes {
        for k in 0..per {
            let mut y = spec.ystar.clone();
            y[0] += reach * k as f64 / (per - 1) as f64;
            test_points.push(HybridState::new(y, i)?);
        }
    }
    let x1 = HybridState::new(spec.ystar.clone(), 0)?;
    let x2 = HybridState::new(spec.ystar.clone(), model.n_regimes() - 1)?;
    Ok(Resolved { model, flow_cert, jump_cert, preset: None, x1, x2, test_points, explicit_c: Some(spec.c) })
}

pub fn coordinate(c: CoordinateName) -> pdmp_ergo::fm::CsvCoordinate {
    use pdmp_ergo::fm::CsvCoordinate;
    match c {
        CoordinateName::Single => CsvCoordinate::Single,
        CoordinateName::First => CsvCoordinate::Coupled(1),
        CoordinateName::Second => CsvCoordinate::Coupled(2),
    }
}

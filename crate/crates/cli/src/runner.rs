//! Experiment execution and artifact writing.
//!
//! `report.json` depends only on the config and seed; wall-clock data goes
//! to `metadata.json`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use pdmp_ergo::analysis::{
    chain_contraction_curve, compute_constants, fit_rate, invariant_correspondence_test, lyapunov_check,
    operator_identity_test, process_decay_curve, process_mean, run_checks, write_rate_curve_csv, CheckOptions,
    ConstantsReport, CorrespondenceOptions, CorrespondenceReport, CurvePoint, LyapunovReport, OperatorIdentityReport,
    RateEstimate, RateKind,
};
use pdmp_ergo::coupling::{simulate_coupled, write_coupled_csv};
use pdmp_ergo::fm::{fm_distance_between, measure_from_csv};
use pdmp_ergo::models::ExpectedConstants;
use pdmp_ergo::pdmp::{sample_chain_at, simulate_chain, write_trajectories_csv};
use pdmp_ergo::report::CheckReport;
use pdmp_ergo::stats::mean_se;
use pdmp_ergo::{Measure, Purpose, RngStream, State};
use serde::Serialize;

use crate::config::{coordinate, Experiment, Format, MeasureSource, Resolved, RunConfig};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    /// Everything ran but some hypothesis or empirical check failed.
    Failed,
    /// A full report stopped early.
    Aborted,
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelInfo {
    pub source: String,
    pub dim: usize,
    pub n_regimes: usize,
    pub lambda: f64,
    pub c: f64,
    pub x1: StateInfo,
    pub x2: StateInfo,
}

#[derive(Debug, Clone, Serialize)]
pub struct StateInfo {
    pub y: Vec<f64>,
    pub regime: usize,
}

impl From<&State> for StateInfo {
    fn from(x: &State) -> Self {
        Self { y: x.y.clone(), regime: x.regime }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub n_steps: usize,
    pub n_samples: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Per coordinate, `E Φ_n` with `n = n_steps`.
    pub chain_mean: Vec<MeanSe>,
    /// Per coordinate, `E Ψ(T)`.
    pub process_mean: Vec<MeanSe>,
    /// Fraction of chain samples in each regime at `n_steps`.
    pub chain_regimes: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingTimeSummary {
    pub n_samples: usize,
    pub n_steps: usize,
    /// Fraction of runs whose regimes met within `n_steps`.
    pub coupled_fraction: f64,
    /// Mean coupling time among those runs.
    pub mean_kappa: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FmSummary {
    pub distance: f64,
    pub mu_atoms: usize,
    pub nu_atoms: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub experiment: &'static str,
    pub seed: u64,
    pub model: ModelInfo,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aborted_at: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub failures: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected_constants: Option<ExpectedConstants>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<CheckReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chain_contraction: Option<RateEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub process_decay: Option<RateEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling_time: Option<CouplingTimeSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correspondence: Option<CorrespondenceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub operator_identity: Option<OperatorIdentityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fm: Option<FmSummary>,
}

#[derive(Debug, Serialize)]
struct Metadata {
    schema_version: u32,
    tool_version: &'static str,
    experiment: &'static str,
    config: String,
    started_unix: f64,
    finished_unix: f64,
    elapsed_seconds: f64,
    workers: usize,
}

/// What the process should report to the shell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    HypothesisFailure,
    Error,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Success => 0,
            Self::HypothesisFailure => 2,
            Self::Error => 1,
        }
    }
}

/// Whether a stage let the run continue.
enum Stage {
    Passed,
    Failed,
}

struct Run<'a> {
    cfg: &'a RunConfig,
    r: Resolved,
    config_dir: PathBuf,
    out_dir: PathBuf,
    report: Report,
}

pub fn run(config_path: &Path) -> Result<Outcome> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let cfg = RunConfig::load(config_path)?;
    let config_dir = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let r = cfg.resolve()?;
    let out_dir = cfg.output_dir(&config_dir);
    fs::create_dir_all(&out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;

    let workers = cfg.budget.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().context("cannot start worker pool")?;

    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        experiment: cfg.experiment.name(),
        seed: cfg.budget.seed,
        model: ModelInfo {
            source: r.preset.as_ref().map_or_else(|| "inline".to_string(), |p| p.id.name().to_string()),
            dim: r.model.dim(),
            n_regimes: r.model.n_regimes(),
            lambda: r.model.lambda(),
            c: r.model.metric().c,
            x1: (&r.x1).into(),
            x2: (&r.x2).into(),
        },
        status: Status::Ok,
        aborted_at: None,
        error: None,
        failures: Vec::new(),
        constants: None,
        expected_constants: r.preset.as_ref().map(|p| p.expected),
        checks: None,
        lyapunov: None,
        simulation: None,
        chain_contraction: None,
        process_decay: None,
        coupling_time: None,
        correspondence: None,
        operator_identity: None,
        fm: None,
    };
    let mut run = Run { cfg: &cfg, r, config_dir, out_dir, report };
    let result = pool.install(|| run.execute());
    let outcome = match result {
        Ok(()) if run.report.failures.is_empty() => Outcome::Success,
        Ok(()) => {
            if run.report.status == Status::Ok {
                run.report.status = Status::Failed;
            }
            Outcome::HypothesisFailure
        }
        Err(e) => {
            if run.report.status != Status::Aborted {
                run.report.status = Status::Error;
            }
            run.report.error = Some(format!("{e:#}"));
            eprintln!("error: {e:#}");
            Outcome::Error
        }
    };
    for f in &run.report.failures {
        eprintln!("check failed: {f}");
    }
    if cfg.wants(Format::Json) {
        write_json(&run.out_dir.join("report.json"), &run.report)?;
        let finished = SystemTime::now();
        let unix = |t: SystemTime| t.duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        let meta = Metadata {
            schema_version: REPORT_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            experiment: cfg.experiment.name(),
            config: config_path.display().to_string(),
            started_unix: unix(started),
            finished_unix: unix(finished),
            elapsed_seconds: clock.elapsed().as_secs_f64(),
            workers,
        };
        write_json(&run.out_dir.join("metadata.json"), &meta)?;
    }
    Ok(outcome)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

impl Run<'_> {
    fn execute(&mut self) -> Result<()> {
        match self.cfg.experiment {
            Experiment::Constants => {
                self.constants()?;
            }
            Experiment::Check => {
                self.checks()?;
            }
            Experiment::Simulate => self.simulate()?,
            Experiment::Couple => {
                self.export_coupled()?;
                self.chain_rate()?;
                self.process_rate()?;
            }
            Experiment::Correspond => {
                self.correspond()?;
            }
            Experiment::Fm => self.fm()?,
            Experiment::FullReport => self.full_report()?,
        }
        Ok(())
    }

    fn full_report(&mut self) -> Result<()> {
        let stages: [(&str, fn(&mut Self) -> Result<Stage>); 5] = [
            ("constants", Run::constants),
            ("checks", Run::checks),
            ("chain-contraction", |r| r.chain_rate().map(|()| Stage::Passed)),
            ("process-decay", |r| r.process_rate().map(|()| Stage::Passed)),
            ("correspondence", Run::correspond),
        ];
        for (name, stage) in stages {
            match stage(self) {
                Ok(Stage::Passed) => {}
                Ok(Stage::Failed) => {
                    self.abort(name);
                    return Ok(());
                }
                Err(e) => {
                    self.abort(name);
                    return Err(e);
                }
            }
        }
        Ok(())
    }

    fn abort(&mut self, stage: &str) {
        self.report.status = Status::Aborted;
        self.report.aborted_at = Some(stage.to_string());
    }

    fn constants_report(&self) -> Result<ConstantsReport> {
        Ok(compute_constants(&self.r.model, &self.r.flow_cert, &self.r.jump_cert)?)
    }

    fn constants(&mut self) -> Result<Stage> {
        let k = self.constants_report()?;
        let pass = k.hypotheses_hold;
        if let Some(v) = &k.violated {
            self.report.failures.push(v.clone());
        }
        self.report.constants = Some(k);
        Ok(if pass { Stage::Passed } else { Stage::Failed })
    }

    fn check_options(&self, radius: f64) -> CheckOptions<f64> {
        let b = &self.cfg.budget;
        let mut points: Vec<Vec<f64>> = Vec::new();
        for x in &self.r.test_points {
            if !points.contains(&x.y) {
                points.push(x.y.clone());
            }
        }
        CheckOptions { n_draws: b.n_draws, n_samples: b.n_samples, points, radius, t_max: 10.0, seed: b.seed }
    }

    fn checks(&mut self) -> Result<Stage> {
        let constants = self.constants_report().ok();
        let radius = constants.as_ref().and_then(|k| k.r).filter(|r| r.is_finite()).unwrap_or(10.0);
        let reports = run_checks(&self.r.model, &self.r.flow_cert, &self.r.jump_cert, &self.check_options(radius))?;
        let mut failed = false;
        for c in reports.iter().filter(|c| !c.pass) {
            failed = true;
            let note = c.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default();
            self.report.failures.push(format!("{}: worst = {}, slack = {}{note}", c.name, c.worst, c.slack));
        }
        self.report.checks = Some(reports);
        match constants {
            Some(k) if k.hypotheses_hold => {
                let b = &self.cfg.budget;
                let drift = lyapunov_check(&self.r.model, k.a, k.b, &self.r.test_points, b.n_samples, b.seed)?;
                if !drift.pass {
                    failed = true;
                    self.report
                        .failures
                        .push(format!("drift: PV ≤ aV + b violated, worst slack = {}", drift.worst_slack));
                }
                self.report.lyapunov = Some(drift);
            }
            Some(k) => {
                failed = true;
                self.report.failures.push(k.violated.unwrap_or_else(|| "drift constants unavailable".into()));
            }
            None => {
                failed = true;
                self.report.failures.push("drift constants unavailable: the flow integral diverges or α ≥ λ".into());
            }
        }
        Ok(if failed { Stage::Failed } else { Stage::Passed })
    }

    fn simulate(&mut self) -> Result<()> {
        let b = &self.cfg.budget;
        let m = &self.r.model;
        if self.cfg.wants(Format::Csv) {
            let trajs = (0..b.n_paths as u64)
                .map(|k| simulate_chain(m, &self.r.x1, b.n_steps, &mut RngStream::for_task(b.seed, k, Purpose::Chain)))
                .collect::<pdmp_ergo::Result<Vec<_>>>()?;
            write_trajectories_csv(self.csv("trajectories.csv")?, &trajs)?;
        }
        let chain = sample_chain_at(m, &self.r.x1, b.n_steps, b.n_samples, b.seed)?;
        let mut chain_mean = Vec::with_capacity(m.dim());
        for k in 0..m.dim() {
            let (mean, se) = mean_se(&chain.iter().map(|x| x.y[k]).collect::<Vec<_>>());
            chain_mean.push(MeanSe { mean, se });
        }
        let mut chain_regimes = vec![0.0; m.n_regimes()];
        for x in &chain {
            chain_regimes[x.regime] += 1.0 / chain.len() as f64;
        }
        let process = process_mean(m, &self.r.x1, b.horizon, b.n_samples, b.seed)?;
        self.report.simulation = Some(SimulationSummary {
            n_steps: b.n_steps,
            n_samples: b.n_samples,
            horizon: b.horizon,
            chain_mean,
            process_mean: process.into_iter().map(|(mean, se)| MeanSe { mean, se }).collect(),
            chain_regimes,
        });
        Ok(())
    }

    fn export_coupled(&mut self) -> Result<()> {
        let b = &self.cfg.budget;
        let m = &self.r.model;
        let mut traces = Vec::new();
        let mut met = 0usize;
        let mut kappa_sum = 0.0;
        for k in 0..b.n_samples as u64 {
            let mut rng = RngStream::for_task(b.seed, k, Purpose::Coupled);
            let t = simulate_coupled(m, &self.r.x1, &self.r.x2, b.n_steps, &mut rng, b.identify.unwrap_or(false))?;
            if let Some(kappa) = t.kappa {
                met += 1;
                kappa_sum += kappa as f64;
            }
            if (k as usize) < b.n_paths {
                traces.push(t);
            }
        }
        if self.cfg.wants(Format::Csv) {
            write_coupled_csv(self.csv("coupled.csv")?, m, &traces)?;
        }
        self.report.coupling_time = Some(CouplingTimeSummary {
            n_samples: b.n_samples,
            n_steps: b.n_steps,
            coupled_fraction: met as f64 / b.n_samples as f64,
            mean_kappa: (met > 0).then(|| kappa_sum / met as f64),
        });
        Ok(())
    }

    fn chain_rate(&mut self) -> Result<()> {
        let b = &self.cfg.budget;
        let curve = chain_contraction_curve(
            &self.r.model,
            &self.r.x1,
            &self.r.x2,
            b.n_steps,
            b.n_samples,
            b.seed,
            b.identify.unwrap_or(false),
        )?;
        let est = self.fit_and_export(curve, RateKind::PerStep, "rates_chain.csv")?;
        self.report.chain_contraction = Some(est);
        Ok(())
    }

    fn process_rate(&mut self) -> Result<()> {
        let b = &self.cfg.budget;
        let curve = process_decay_curve(
            &self.r.model,
            &self.r.x1,
            &self.r.x2,
            &b.time_grid,
            b.n_samples,
            b.seed,
            b.identify.unwrap_or(true),
        )?;
        let est = self.fit_and_export(curve, RateKind::PerUnitTime, "rates_process.csv")?;
        self.report.process_decay = Some(est);
        Ok(())
    }

    /// The curve is written even when the fit fails, so the noise floor can be inspected.
    fn fit_and_export(&self, mut curve: Vec<CurvePoint>, kind: RateKind, file: &str) -> Result<RateEstimate> {
        let fit = fit_rate(&mut curve, self.cfg.budget.n_samples, kind);
        if self.cfg.wants(Format::Csv) {
            write_rate_curve_csv(self.csv(file)?, &curve)?;
        }
        Ok(fit?)
    }

    fn correspond(&mut self) -> Result<Stage> {
        let b = &self.cfg.budget;
        let opts = CorrespondenceOptions {
            burn_in: b.burn_in,
            n_stat: b.n_samples,
            horizon: b.horizon,
            n_samples: b.n_samples,
            resamples: b.bootstrap,
            seed: b.seed,
        };
        let corr = invariant_correspondence_test(&self.r.model, &self.r.x1, &opts)?;
        let gw = operator_identity_test(&self.r.model, &self.r.x1, b.n_samples, b.seed)?;
        let mut failed = false;
        if !corr.pass {
            failed = true;
            self.report.failures.push(format!(
                "invariant correspondence: distances {} and {} against budget {}",
                corr.fm_phi_g_vs_psi.value, corr.fm_psi_w_vs_phi.value, corr.budget
            ));
        }
        if !gw.pass {
            failed = true;
            self.report.failures.push(format!("GW = P: distance {} (self-distance {})", gw.distance, gw.self_distance));
        }
        self.report.correspondence = Some(corr);
        self.report.operator_identity = Some(gw);
        Ok(if failed { Stage::Failed } else { Stage::Passed })
    }

    fn fm(&mut self) -> Result<()> {
        let sec = self.cfg.fm.as_ref().expect("checked in validate");
        let mu = self.measure(&sec.mu)?;
        let nu = self.measure(&sec.nu)?;
        let distance = fm_distance_between(&mu, &nu, self.r.model.metric())?;
        self.report.fm = Some(FmSummary { distance, mu_atoms: mu.len(), nu_atoms: nu.len() });
        Ok(())
    }

    fn measure(&self, src: &MeasureSource) -> Result<Measure> {
        let path = self.config_dir.join(&src.path);
        let file = File::open(&path).with_context(|| format!("cannot open {}", path.display()))?;
        measure_from_csv(file, &src.column, src.value, coordinate(src.coordinate))
            .with_context(|| format!("cannot build a measure from {}", path.display()))
    }

    fn csv(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out_dir.join(name);
        Ok(BufWriter::new(File::create(&path).with_context(|| format!("cannot create {}", path.display()))?))
    }
}

/// Diagnostics printed by `validate`, one per line.
pub fn validate(config_path: &Path) -> Result<Vec<String>> {
    let cfg = RunConfig::load(config_path)?;
    let r = cfg.resolve()?;
    let mut lines = vec!["ok".to_string()];
    let k = compute_constants(&r.model, &r.flow_cert, &r.jump_cert)?;
    lines.push(format!("a = {}", k.a));
    lines.push(format!("b = {}", k.b));
    if let Some(v) = &k.violated {
        lines.push(format!("warning: {v}"));
    }
    match k.c_min {
        Some(c_min) => {
            lines.push(format!("c_min = {c_min}"));
            let c = r.model.metric().c;
            if r.explicit_c.is_some() && c < c_min {
                lines.push(format!(
                    "warning: c = {c} is below c_min = {c_min}, the bound c ≥ (λ − α)/L · (M_L K_φ + M_L M_φ/λ) + 1"
                ));
            }
        }
        None => lines.push("c_min unavailable: the drift factor a is not below 1".into()),
    }
    Ok(lines)
}

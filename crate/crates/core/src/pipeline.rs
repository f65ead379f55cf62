//! End-to-end runs producing the files written by the command-line tool.
//!
//! Every run returns its artifacts as in-memory bytes so that callers decide
//! where (and whether) to write them.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::construct::{build, calibrate_epsilon, BuildMode, VectorFieldSpec, DEFAULT_KAPPA};
use crate::dynamics::{equilibria_csv, find_axis_equilibria, find_plane_equilibria, jacobian_fd_error, random_interior_points};
use crate::error::{Error, Result};
use crate::export::{to_json_bytes, write_atomic};
use crate::graph::{build_graph, DnnGraph};
use crate::integrate::{integrate, EventBall, IntegrateOptions};
use crate::nullclines::{nullclines_csv, render_svg, sample_nullclines, NullclineMode};
use crate::stability::{analyze_network_cycles, CycleAnalysis};
use crate::verify::{verify_realization, RealizationReport, VerifyParams};

pub const FD_STEP: f64 = 1e-6;
const CURVE_SAMPLES: usize = 200;
const OVERLAY_POINTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeChoice {
    #[default]
    Auto,
    Explicit,
    General,
}

impl ModeChoice {
    pub fn as_build_mode(self) -> Option<BuildMode> {
        match self {
            ModeChoice::Auto => None,
            ModeChoice::Explicit => Some(BuildMode::Explicit),
            ModeChoice::General => Some(BuildMode::General),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n: usize,
    pub mode: ModeChoice,
    /// `None` calibrates from `kappa`.
    pub epsilon: Option<f64>,
    pub kappa: f64,
    pub verify: VerifyParams,
    pub seed: u64,
    pub probe_points: usize,
    /// Restricts `plot` to one plane.
    pub plane: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 3,
            mode: ModeChoice::Auto,
            epsilon: None,
            kappa: DEFAULT_KAPPA,
            verify: VerifyParams::default(),
            seed: 0,
            probe_points: 100,
            plane: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::InvalidArgument(format!("n must be at least 3, got {}", self.n)));
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::InvalidArgument(format!("epsilon must be positive and finite, got {eps}")));
            }
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::InvalidArgument(format!("kappa must lie in (0, 1), got {}", self.kappa)));
        }
        let v = &self.verify;
        for (name, value) in [
            ("rel-tol", v.rel_tol),
            ("abs-tol", v.abs_tol),
            ("delta", v.delta),
            ("eta", v.eta),
            ("t-max", v.t_max),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {value}")));
            }
        }
        v.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecSummary {
    pub n: usize,
    pub dim: usize,
    pub mode: BuildMode,
    pub epsilon: f64,
    pub epsilon_calibrated: bool,
    pub axis_roots: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianProbe {
    pub seed: u64,
    pub points: usize,
    pub step: f64,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub spec: SpecSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jacobian_probe: Option<JacobianProbe>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub realization: Option<RealizationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycles: Option<Vec<CycleAnalysis>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    fn new(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    /// Set by runs that verify the realization.
    pub verified: Option<bool>,
    pub report: Option<RunReport>,
}

impl RunOutput {
    pub fn artifact(&self, name: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.name == name)
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            write_atomic(&dir.join(&a.name), &a.bytes)?;
        }
        Ok(())
    }
}

struct Context {
    spec: VectorFieldSpec,
    graph: DnnGraph,
    summary: SpecSummary,
}

fn prepare(config: &RunConfig) -> Result<Context> {
    config.validate()?;
    let graph = build_graph(config.n)?;
    let mode = config.mode.as_build_mode();
    let spec = match config.epsilon {
        Some(eps) => build(config.n, mode, eps)?,
        None => {
            let draft = build(config.n, mode, 1.0)?;
            let eps = calibrate_epsilon(&draft, config.kappa)?;
            draft.with_epsilon(eps)
        }
    };
    log::info!("built n = {} in {:?} mode, dim {}, epsilon {:e}", spec.n, spec.mode, spec.dim, spec.epsilon);
    let summary = SpecSummary {
        n: spec.n,
        dim: spec.dim,
        mode: spec.mode,
        epsilon: spec.epsilon,
        epsilon_calibrated: config.epsilon.is_none(),
        axis_roots: spec.axis_roots().to_vec(),
    };
    Ok(Context { spec, graph, summary })
}

pub fn jacobian_probe(spec: &VectorFieldSpec, seed: u64, points: usize) -> JacobianProbe {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_relative_error = random_interior_points(spec, points, &mut rng)
        .iter()
        .map(|p| jacobian_fd_error(spec, p, FD_STEP))
        .fold(0.0, f64::max);
    JacobianProbe {
        seed,
        points,
        step: FD_STEP,
        max_relative_error,
    }
}

fn build_artifacts(ctx: &Context) -> Result<Vec<Artifact>> {
    Ok(vec![
        Artifact::new("spec.json", to_json_bytes(&ctx.spec)?),
        Artifact::new("equations.txt", ctx.spec.render_equations().into_bytes()),
    ])
}

fn equilibria_artifact(spec: &VectorFieldSpec) -> Result<Artifact> {
    let mut eqs = find_axis_equilibria(spec)?;
    for j in 1..spec.dim {
        eqs.extend(find_plane_equilibria(spec, j)?);
    }
    Ok(Artifact::new("equilibria.csv", equilibria_csv(&eqs)?))
}

fn plot_artifacts(ctx: &Context, config: &RunConfig, planes: &[usize]) -> Result<Vec<Artifact>> {
    let mut out = Vec::new();
    let balls: Vec<EventBall> = (1..=ctx.spec.n)
        .map(|k| EventBall {
            center: ctx.spec.node_point(k),
            radius: config.verify.eta,
        })
        .collect();
    let opts = config.verify.integrate_options();
    let opts = IntegrateOptions {
        record_samples: true,
        ..opts
    };
    for &j in planes {
        ctx.spec.plane(j)?;
        let curves = sample_nullclines(&ctx.spec, j, CURVE_SAMPLES, NullclineMode::EpsZero)?;
        let mut overlays = Vec::new();
        for e in ctx.graph.edges_in_plane(j) {
            let mut start = ctx.spec.node_point(e.source);
            start[j] = config.verify.delta;
            let traj = integrate(&ctx.spec, &start, &opts, &balls)?;
            let stride = traj.samples.len().div_ceil(OVERLAY_POINTS).max(1);
            let mut pts: Vec<[f64; 2]> = traj.samples.iter().step_by(stride).map(|s| [s.point[0], s.point[j]]).collect();
            pts.push([traj.final_point[0], traj.final_point[j]]);
            overlays.push(pts);
        }
        out.push(Artifact::new(format!("plane_{j}_nullclines.csv"), nullclines_csv(&curves)?));
        out.push(Artifact::new(format!("plane_{j}.svg"), render_svg(&ctx.spec, j, &curves, &overlays).into_bytes()));
    }
    Ok(out)
}

pub fn run_build(config: &RunConfig) -> Result<RunOutput> {
    let ctx = prepare(config)?;
    Ok(RunOutput {
        artifacts: build_artifacts(&ctx)?,
        verified: None,
        report: None,
    })
}

fn verification_report(ctx: &Context, config: &RunConfig, with_cycles: bool) -> Result<RunReport> {
    let realization = verify_realization(&ctx.spec, &ctx.graph, &config.verify)?;
    let cycles = if with_cycles {
        Some(analyze_network_cycles(&ctx.spec, &ctx.graph)?)
    } else {
        None
    };
    Ok(RunReport {
        config: config.clone(),
        spec: ctx.summary.clone(),
        jacobian_probe: Some(jacobian_probe(&ctx.spec, config.seed, config.probe_points)),
        realization: Some(realization),
        cycles,
    })
}

pub fn run_verify(config: &RunConfig) -> Result<RunOutput> {
    let ctx = prepare(config)?;
    let report = verification_report(&ctx, config, false)?;
    let verified = report.realization.as_ref().map(|r| r.verified);
    Ok(RunOutput {
        artifacts: vec![
            Artifact::new("report.json", to_json_bytes(&report)?),
            equilibria_artifact(&ctx.spec)?,
        ],
        verified,
        report: Some(report),
    })
}

pub fn run_stability(config: &RunConfig) -> Result<RunOutput> {
    let ctx = prepare(config)?;
    let report = RunReport {
        config: config.clone(),
        spec: ctx.summary.clone(),
        jacobian_probe: None,
        realization: None,
        cycles: Some(analyze_network_cycles(&ctx.spec, &ctx.graph)?),
    };
    Ok(RunOutput {
        artifacts: vec![Artifact::new("stability.json", to_json_bytes(&report)?)],
        verified: None,
        report: Some(report),
    })
}

pub fn run_plot(config: &RunConfig) -> Result<RunOutput> {
    let ctx = prepare(config)?;
    let planes: Vec<usize> = match config.plane {
        Some(j) => vec![j],
        None => (1..ctx.spec.dim).collect(),
    };
    Ok(RunOutput {
        artifacts: plot_artifacts(&ctx, config, &planes)?,
        verified: None,
        report: None,
    })
}

/// Build, verify, classify cycles and plot every plane.
pub fn run_all(config: &RunConfig) -> Result<RunOutput> {
    let ctx = prepare(config)?;
    let report = verification_report(&ctx, config, true)?;
    let verified = report.realization.as_ref().map(|r| r.verified);
    let mut artifacts = build_artifacts(&ctx)?;
    artifacts.push(Artifact::new("report.json", to_json_bytes(&report)?));
    artifacts.push(equilibria_artifact(&ctx.spec)?);
    let planes: Vec<usize> = (1..ctx.spec.dim).collect();
    artifacts.extend(plot_artifacts(&ctx, config, &planes)?);
    Ok(RunOutput {
        artifacts,
        verified,
        report: Some(report),
    })
}

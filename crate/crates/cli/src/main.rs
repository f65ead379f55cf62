use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dnn_core::pipeline::{run_all, run_build, run_plot, run_stability, run_verify, ModeChoice, RunConfig, RunOutput};
use dnn_core::{Error, Result};

#[derive(Parser)]
#[command(name = "dnn", version, about = "Build and verify polynomial realizations of the DNN heteroclinic network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the field as JSON plus a factored equation dump.
    Build(Opts),
    /// Verify equilibria, sign pattern, all connections and absences.
    Verify(Opts),
    /// Classify every 2-node cycle by transition matrices.
    Stability(Opts),
    /// Export nullclines and connection trajectories per plane.
    Plot(Opts),
    /// Build, verify, classify and plot in one run.
    All(Opts),
}

#[derive(Args, Clone, Default)]
struct Opts {
    #[arg(long)]
    n: Option<usize>,
    /// explicit, general or auto
    #[arg(long)]
    mode: Option<String>,
    /// A number, or "auto" to calibrate from kappa
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long = "rel-tol")]
    rel_tol: Option<f64>,
    #[arg(long = "abs-tol")]
    abs_tol: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long = "t-max")]
    t_max: Option<f64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    plane: Option<usize>,
    /// key = value file; command-line flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
}

fn invalid(msg: String) -> Error {
    Error::InvalidArgument(msg)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| invalid(format!("cannot parse {key} = {value:?}")))
}

fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| invalid(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
        let v = v.trim().trim_matches('"');
        map.insert(k.trim().replace('_', "-"), v.to_string());
    }
    Ok(map)
}

impl Opts {
    /// Fill unset flags from the config file.
    fn merge_file(mut self) -> Result<Self> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        for (k, v) in read_config_file(&path)? {
            match k.as_str() {
                "n" => self.n = self.n.or(Some(parse(&k, &v)?)),
                "mode" => self.mode = self.mode.or(Some(v)),
                "epsilon" => self.epsilon = self.epsilon.or(Some(v)),
                "kappa" => self.kappa = self.kappa.or(Some(parse(&k, &v)?)),
                "rel-tol" => self.rel_tol = self.rel_tol.or(Some(parse(&k, &v)?)),
                "abs-tol" => self.abs_tol = self.abs_tol.or(Some(parse(&k, &v)?)),
                "delta" => self.delta = self.delta.or(Some(parse(&k, &v)?)),
                "eta" => self.eta = self.eta.or(Some(parse(&k, &v)?)),
                "t-max" => self.t_max = self.t_max.or(Some(parse(&k, &v)?)),
                "out" => self.out = self.out.or(Some(PathBuf::from(v))),
                "seed" => self.seed = self.seed.or(Some(parse(&k, &v)?)),
                "plane" => self.plane = self.plane.or(Some(parse(&k, &v)?)),
                other => return Err(invalid(format!("unknown config key {other:?}"))),
            }
        }
        Ok(self)
    }

    fn into_run(self) -> Result<(RunConfig, PathBuf)> {
        let opts = self.merge_file()?;
        let mut cfg = RunConfig {
            n: opts.n.ok_or_else(|| invalid("--n is required".into()))?,
            ..Default::default()
        };
        if let Some(m) = &opts.mode {
            cfg.mode = match m.as_str() {
                "auto" => ModeChoice::Auto,
                "explicit" => ModeChoice::Explicit,
                "general" => ModeChoice::General,
                other => return Err(invalid(format!("unknown mode {other:?}"))),
            };
        }
        cfg.epsilon = match opts.epsilon.as_deref() {
            None | Some("auto") => None,
            Some(v) => Some(parse("epsilon", v)?),
        };
        if let Some(k) = opts.kappa {
            cfg.kappa = k;
        }
        let v = &mut cfg.verify;
        v.rel_tol = opts.rel_tol.unwrap_or(v.rel_tol);
        v.abs_tol = opts.abs_tol.unwrap_or(v.abs_tol);
        v.delta = opts.delta.unwrap_or(v.delta);
        v.eta = opts.eta.unwrap_or(v.eta);
        v.t_max = opts.t_max.unwrap_or(v.t_max);
        cfg.seed = opts.seed.unwrap_or(cfg.seed);
        cfg.plane = opts.plane;
        cfg.validate()?;
        Ok((cfg, opts.out.unwrap_or_else(|| PathBuf::from("out"))))
    }
}

fn summarize(out: &RunOutput) {
    let Some(report) = &out.report else { return };
    if let Some(r) = &report.realization {
        let ok = r.edges.iter().filter(|e| e.verdict == dnn_core::verify::Verdict::Verified).count();
        println!("n = {}: {ok}/{} edges verified", r.n, r.edges.len());
        for cause in &r.causes {
            eprintln!("cause: {cause}");
        }
    }
    if let Some(cycles) = &report.cycles {
        for c in cycles {
            println!(
                "cycle {}-{}: {:?}",
                c.cycle.nodes.0, c.cycle.nodes.1, c.classification.verdict
            );
        }
        if cycles.is_empty() {
            println!("no 2-node cycles");
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let (runner, opts): (fn(&RunConfig) -> Result<RunOutput>, Opts) = match cli.command {
        Command::Build(o) => (run_build, o),
        Command::Verify(o) => (run_verify, o),
        Command::Stability(o) => (run_stability, o),
        Command::Plot(o) => (run_plot, o),
        Command::All(o) => (run_all, o),
    };
    let (cfg, dir) = opts.into_run()?;
    let out = runner(&cfg)?;
    out.write_to(&dir)?;
    for a in &out.artifacts {
        log::info!("wrote {}", dir.join(&a.name).display());
    }
    summarize(&out);
    Ok(out.verified.unwrap_or(true))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! `polysls` command line: fit, synth, certify, train, simulate, compare and
//! the FBL baseline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use polysls::baselines::FblController;
use polysls::experiment::{build_controller, run_experiment, write_comparison_csv, write_curves_csv, Engine, ExperimentConfig};
use polysls::net::{AlphaNet, DEFAULT_ALPHA_MIN, DEFAULT_DROPOUT, DEFAULT_HIDDEN};
use polysls::plant::{Plant, PointMass, PointMassConfig, TrueDynamics};
use polysls::poly::PolyDynamics;
use polysls::rollout::{gen_disturbances, simulate, write_trajectory_csv, AlphaSource, DisturbanceKind, DisturbanceSpec, Policy};
use polysls::sls::{check_iss, cost_bound_u1, Controller, FeedbackLaw};
use polysls::taylor::{taylor_expand_with, FitOptions, SmoothDynamics};
use polysls::train::{cost_weights, train, TrainConfig};

#[derive(Parser)]
#[command(name = "polysls", version, about = "Nonlinear SLS controllers from polynomial approximations")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Taylor-fit a smooth plant around its equilibrium.
    Fit(FitArgs),
    /// Synthesize an SLS controller from fitted dynamics.
    Synth(SynthArgs),
    /// Check the stability certificate and print the cost bound.
    Certify(CertifyArgs),
    /// Train the alpha network on rollouts of the true plant.
    Train(TrainArgs),
    /// Roll out one controller and write the trajectory CSV.
    Simulate(SimulateArgs),
    /// Run the full point-mass experiment.
    Compare(CompareArgs),
    /// Reference controllers.
    #[command(subcommand)]
    Baseline(BaselineCmd),
}

#[derive(Args)]
struct FitArgs {
    /// `point_mass` or a dynamics JSON file.
    #[arg(long = "dyn-true", default_value = "point_mass")]
    dyn_true: String,
    /// Point-mass parameters (TOML), overriding the defaults.
    #[arg(long)]
    plant_config: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// 1-norm radius for the derivative bound.
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Symbolic,
    Grouped,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Symbolic => Engine::Symbolic,
            EngineArg::Grouped => Engine::Grouped,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long = "dyn")]
    dyn_path: PathBuf,
    #[arg(long = "T", default_value_t = 4)]
    horizon: usize,
    #[arg(long, value_enum, default_value = "grouped")]
    engine: EngineArg,
    /// Largest expansion the symbolic engine may build.
    #[arg(long, default_value_t = 100_000)]
    term_cap: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    ctl: PathBuf,
    /// Derivative bound; read from `--dyn` when omitted.
    #[arg(long = "M")]
    m: Option<f64>,
    #[arg(long = "dyn")]
    dyn_path: Option<PathBuf>,
    #[arg(long = "W", default_value_t = 1.0)]
    w: f64,
    #[arg(long = "alpha-min", default_value_t = DEFAULT_ALPHA_MIN)]
    alpha_min: f64,
    /// Cost-bound radius (defaults to `W`).
    #[arg(long)]
    h: Option<f64>,
    /// Input weight, `"1,0;0,1"` or a scalar multiple of the identity.
    #[arg(long = "R")]
    r: Option<String>,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit zero even when the certificate fails.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    ctl: PathBuf,
    #[arg(long = "dyn-true", default_value = "point_mass")]
    dyn_true: String,
    /// TOML with optional `[train]` and `[net]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss trace.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainFile {
    train: TrainConfig,
    net: NetSection,
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct NetSection {
    hidden: Vec<usize>,
    dropout: f64,
    alpha_min: f64,
    seed: u64,
}

impl Default for NetSection {
    fn default() -> Self {
        Self { hidden: DEFAULT_HIDDEN.to_vec(), dropout: DEFAULT_DROPOUT, alpha_min: DEFAULT_ALPHA_MIN, seed: 0 }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Sls,
    Fbl,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Uniform,
    Impulse,
    SignRandom,
}

impl From<KindArg> for DisturbanceKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Uniform => DisturbanceKind::Uniform,
            KindArg::Impulse => DisturbanceKind::Impulse,
            KindArg::SignRandom => DisturbanceKind::SignRandom,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long = "dyn-true", default_value = "point_mass")]
    dyn_true: String,
    #[arg(long, value_enum, default_value = "sls")]
    policy: PolicyArg,
    #[arg(long)]
    ctl: Option<PathBuf>,
    /// Trained network; without it every alpha is `--alpha`.
    #[arg(long)]
    net: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "uniform")]
    disturbance: KindArg,
    #[arg(long = "W", default_value_t = 1.0)]
    w: f64,
    #[arg(long = "n-t", default_value_t = 100)]
    n_t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "Q")]
    q: Option<String>,
    #[arg(long = "R")]
    r: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Experiment TOML; defaults apply to anything missing.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Exit zero even when the certificate fails.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum BaselineCmd {
    /// Feedback linearization with an LQR gain on the linear part.
    Fbl(FblArgs),
}

#[derive(Args)]
struct FblArgs {
    #[arg(long = "dyn-true", default_value = "point_mass")]
    dyn_true: String,
    #[arg(long = "Q")]
    q: Option<String>,
    #[arg(long = "R")]
    r: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Fit(a) => fit(a),
        Cmd::Synth(a) => synth(a),
        Cmd::Certify(a) => certify(a),
        Cmd::Train(a) => train_cmd(a),
        Cmd::Simulate(a) => simulate_cmd(a),
        Cmd::Compare(a) => compare(a),
        Cmd::Baseline(BaselineCmd::Fbl(a)) => fbl(a),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn plant(name: &str) -> Result<Plant> {
    Plant::by_name(name).with_context(|| format!("loading plant {name}"))
}

/// `"a,b;c,d"` rows, or a single number meaning that multiple of `I_n`.
fn parse_matrix(s: &str, n: usize) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f64>> = s
        .split(';')
        .map(|r| r.split(',').map(|v| v.trim().parse::<f64>().with_context(|| format!("bad matrix entry {v:?}"))).collect())
        .collect::<Result<_>>()?;
    if rows.len() == 1 && rows[0].len() == 1 {
        let v = rows[0][0];
        return Ok((0..n).map(|i| (0..n).map(|j| if i == j { v } else { 0.0 }).collect()).collect());
    }
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        bail!("matrix {s:?} is not {n}x{n}");
    }
    Ok(rows)
}

fn opt_matrix(s: &Option<String>, n: usize) -> Result<Option<Vec<Vec<f64>>>> {
    s.as_deref().map(|s| parse_matrix(s, n)).transpose()
}

fn fit(a: FitArgs) -> Result<ExitCode> {
    let smooth = match a.dyn_true.as_str() {
        "point_mass" | "point-mass" => {
            let cfg: PointMassConfig = match &a.plant_config {
                Some(p) => toml::from_str(&read(p)?)?,
                None => PointMassConfig::default(),
            };
            PointMass::new(cfg)?.smooth()?
        }
        path => {
            let d = PolyDynamics::<f64>::from_json(&read(Path::new(path))?)?;
            SmoothDynamics::new(d.x_star().to_vec(), move |x: &[f64]| d.eval(x).expect("dimension checked by caller"))?
        }
    };
    let opts = FitOptions { bound_radius: a.radius, bound_samples: a.samples };
    let d = taylor_expand_with(&smooth, a.k, &opts)?;
    write(&a.out, &d.to_json()?)?;
    println!("fitted n={} k={} M={:e} -> {}", d.n(), d.k(), d.m_bound(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn synth(a: SynthArgs) -> Result<ExitCode> {
    let d = PolyDynamics::<f64>::from_json(&read(&a.dyn_path)?)?;
    let ctl = build_controller(&d, a.engine.into(), a.horizon, a.term_cap)?;
    write(&a.out, &ctl.to_json()?)?;
    let (l, c) = ctl.l_c(1.0);
    println!("{} controller T={} alphas={} l(W=1)={l:e} c={c} -> {}", ctl.kind(), ctl.horizon(), ctl.num_alphas(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn certify(a: CertifyArgs) -> Result<ExitCode> {
    let ctl = Controller::<f64>::from_json(&read(&a.ctl)?)?;
    let m = match (a.m, &a.dyn_path) {
        (Some(m), _) => m,
        (None, Some(p)) => PolyDynamics::<f64>::from_json(&read(p)?)?.m_bound(),
        (None, None) => bail!("give --M or --dyn"),
    };
    let n = ctl.n();
    let (l, c) = ctl.l_c(a.w);
    let cert = check_iss(m, a.w, ctl.k(), l, c, a.alpha_min)?;
    let r = cost_weights::<f64>(&None, &opt_matrix(&a.r, n)?, n)?.r;
    let bound = cost_bound_u1(m, a.w, ctl.k(), n, a.h.unwrap_or(a.w))?.with_horizon(&r, a.steps)?;
    println!("b = {}", cert.b);
    println!("satisfied = {}", cert.satisfied);
    match cert.state_bound {
        Some(s) => println!("state_bound = {s}"),
        None => println!("state_bound = none"),
    }
    println!("U1 = {}", bound.u1);
    println!("total = {}", bound.total);
    if let Some(p) = &a.out {
        let js = serde_json::json!({ "certificate": cert, "cost_bound": bound });
        write(p, &serde_json::to_string_pretty(&js)?)?;
    }
    Ok(exit_for(cert.satisfied, a.force))
}

fn exit_for(satisfied: bool, force: bool) -> ExitCode {
    if satisfied {
        ExitCode::SUCCESS
    } else if force {
        eprintln!("warning: certificate not satisfied (continuing, --force)");
        ExitCode::SUCCESS
    } else {
        eprintln!("certificate not satisfied");
        ExitCode::from(1)
    }
}

fn train_cmd(a: TrainArgs) -> Result<ExitCode> {
    let ctl = Controller::<f64>::from_json(&read(&a.ctl)?)?;
    let p = plant(&a.dyn_true)?;
    if TrueDynamics::<f64>::n(&p) != ctl.n() {
        bail!("plant dimension {} does not match controller dimension {}", TrueDynamics::<f64>::n(&p), ctl.n());
    }
    let file: TrainFile = match &a.config {
        Some(path) => toml::from_str(&read(path)?)?,
        None => TrainFile::default(),
    };
    let net0 = AlphaNet::for_law(&ctl, &file.net.hidden, file.net.seed, file.net.dropout, file.net.alpha_min)?;
    let (net, rep) = train(&net0, &ctl, &p, &file.train)?;
    write(&a.out, &net.to_json()?)?;
    if let Some(path) = &a.loss_csv {
        let mut wtr = csv::Writer::from_writer(create(path)?);
        wtr.write_record(["epoch", "loss"])?;
        for (i, l) in rep.loss_trace.iter().enumerate() {
            wtr.write_record([i.to_string(), l.to_string()])?;
        }
        wtr.flush()?;
    }
    println!(
        "trained {} epochs, final loss {:e}, skipped {}, diverged rollouts {} -> {}",
        rep.loss_trace.len(),
        rep.loss_trace.last().copied().unwrap_or(f64::NAN),
        rep.skipped_epochs.len(),
        rep.diverged_rollouts,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn simulate_cmd(a: SimulateArgs) -> Result<ExitCode> {
    let p = plant(&a.dyn_true)?;
    let n = TrueDynamics::<f64>::n(&p);
    let cost = cost_weights::<f64>(&opt_matrix(&a.q, n)?, &opt_matrix(&a.r, n)?, n)?;
    let ws = gen_disturbances::<f64>(&DisturbanceSpec { kind: a.disturbance.into(), w: a.w, n_t: a.n_t, n, seed: a.seed })?;
    let result = match a.policy {
        PolicyArg::Fbl => {
            let (fbl, _) = FblController::design(&p, &cost.q, &cost.r)?;
            simulate(&p, &Policy::Fbl(&fbl), &ws, &cost, a.w)?
        }
        PolicyArg::Sls => {
            let path = a.ctl.as_ref().context("--policy sls needs --ctl")?;
            let ctl = Controller::<f64>::from_json(&read(path)?)?;
            let net = a.net.as_ref().map(|p| read(p).and_then(|s| Ok(AlphaNet::<f64>::from_json(&s)?))).transpose()?;
            let policy = match &net {
                Some(net) => Policy::Sls { law: &ctl, alphas: AlphaSource::Net(net) },
                None => Policy::const_alpha(&ctl, a.alpha)?,
            };
            simulate(&p, &policy, &ws, &cost, a.w)?
        }
    };
    write_trajectory_csv(&result, create(&a.out)?)?;
    println!(
        "steps={} total={} time_averaged={} diverged={} -> {}",
        result.states.len(),
        result.total_cost,
        result.time_averaged_cost,
        result.diverged,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn compare(a: CompareArgs) -> Result<ExitCode> {
    let cfg: ExperimentConfig = match &a.config {
        Some(p) => toml::from_str(&read(p)?)?,
        None => ExperimentConfig::default(),
    };
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let out = run_experiment(&cfg)?;
    let rep = &out.report;
    write(&a.out_dir.join("report.json"), &serde_json::to_string_pretty(rep)?)?;
    write_comparison_csv(rep, create(&a.out_dir.join("comparison.csv"))?)?;
    write_curves_csv(rep, create(&a.out_dir.join("curves.csv"))?)?;
    write(&a.out_dir.join("dyn.json"), &out.dynamics.to_json()?)?;
    write(&a.out_dir.join("ctl.json"), &out.controller.to_json()?)?;
    write(&a.out_dir.join("net.json"), &out.net.to_json()?)?;
    println!("certificate: b = {} satisfied = {}", rep.certificate.b, rep.certificate.satisfied);
    println!("fbl decay rate (spectral radius of A1 - K): {}", rep.fbl_decay_rate);
    for m in &rep.methods {
        println!("{:<14} mean total {:>12.6}  time-averaged {:>10.6}  diverged {}", m.name, m.mean_total, m.mean_time_averaged, m.diverged);
    }
    println!("trained <= alpha=1: {}", rep.comparison.trained_le_alpha_one);
    println!("ordering trained < fbl < alpha=1 reproduced: {}", rep.comparison.ordering_reproduced);
    println!("outputs in {}", a.out_dir.display());
    Ok(exit_for(rep.certificate.satisfied, a.force))
}

fn fbl(a: FblArgs) -> Result<ExitCode> {
    let p = plant(&a.dyn_true)?;
    let n = TrueDynamics::<f64>::n(&p);
    let cost = cost_weights::<f64>(&opt_matrix(&a.q, n)?, &opt_matrix(&a.r, n)?, n)?;
    let (ctl, sol) = FblController::design(&p, &cost.q, &cost.r)?;
    let rows = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> { (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect() };
    println!("A1 = {}", ctl.a1);
    println!("K = {}", sol.k);
    println!("P = {}", sol.p);
    println!("residual = {:e} after {} iterations", sol.residual, sol.iterations);
    if let Some(path) = &a.out {
        let js = serde_json::json!({
            "a1": rows(&ctl.a1),
            "k": rows(&sol.k),
            "p": rows(&sol.p),
            "residual": sol.residual,
            "iterations": sol.iterations,
        });
        write(path, &serde_json::to_string_pretty(&js)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

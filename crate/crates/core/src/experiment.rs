//! Point-mass experiment: fit, synthesize, certify, train, and compare the
//! trained SLS controller against the all-ones SLS controller and feedback
//! linearization on held-out disturbance sequences.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::FblController;
use crate::error::{Error, Result};
use crate::net::{AlphaNet, DEFAULT_ALPHA_MIN, DEFAULT_DROPOUT, DEFAULT_HIDDEN};
use crate::plant::{PointMass, PointMassConfig, TrueDynamics};
use crate::poly::{FitDiagnostics, PolyDynamics};
use crate::rollout::{gen_disturbances, quadratic_cost, simulate, AlphaSource, DisturbanceKind, DisturbanceSpec, Policy};
use crate::sls::{check_iss, cost_bound_u1, synthesize_with, Controller, CostBound, FeedbackLaw, GroupedController, StabilityCert, SynthOptions};
use crate::taylor::{taylor_expand_with, FitOptions};
use crate::train::{cost_weights, train, TrainConfig, TrainReport};

/// Which controller realization to synthesize.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Expanded term table, one alpha per monomial. Only small systems.
    Symbolic,
    /// Numeric level split, one alpha per (level, dynamics term).
    Grouped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub k: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(rename = "W")]
    pub w: f64,
    pub alpha_min: f64,
    pub engine: Engine,
    /// Term cap for the symbolic expansion (also used for the term-count probe).
    pub term_cap: usize,
    /// Radius of the ball the Taylor bound is estimated on; also the
    /// cost-bound domain `h`.
    pub bound_radius: f64,
    pub bound_samples: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub q: Option<Vec<Vec<f64>>>,
    pub r: Option<Vec<Vec<f64>>>,
    pub point_mass: PointMassConfig,
    pub train: TrainSection,
    pub eval_seeds: usize,
    pub eval_n_t: usize,
    pub eval_seed_base: u64,
}

/// Training settings; cost weights, `W`, and seed come from the top level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub n_t: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch: usize,
    pub clip_norm: Option<f64>,
    pub disturbance: DisturbanceKind,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { n_t: t.n_t, epochs: t.epochs, learning_rate: t.learning_rate, batch: t.batch, clip_norm: t.clip_norm, disturbance: t.disturbance }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            k: 3,
            horizon: 4,
            w: 1.0,
            alpha_min: DEFAULT_ALPHA_MIN,
            engine: Engine::Grouped,
            term_cap: 20_000,
            bound_radius: 1.0,
            bound_samples: 200,
            hidden: DEFAULT_HIDDEN.to_vec(),
            dropout: DEFAULT_DROPOUT,
            q: None,
            r: None,
            point_mass: PointMassConfig::default(),
            train: TrainSection::default(),
            eval_seeds: 10,
            eval_n_t: 100,
            eval_seed_base: 1_000_000,
        }
    }
}

impl ExperimentConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            n_t: self.train.n_t,
            epochs: self.train.epochs,
            learning_rate: self.train.learning_rate,
            batch: self.train.batch,
            w: self.w,
            q: self.q.clone(),
            r: self.r.clone(),
            seed: self.seed,
            disturbance: self.train.disturbance,
            clip_norm: self.train.clip_norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub k: usize,
    #[serde(rename = "M")]
    pub m: f64,
    pub diagnostics: Option<FitDiagnostics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerSummary {
    pub kind: String,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub num_alphas: usize,
    pub l: f64,
    pub c: usize,
    /// Monomials per level of the full expansion, or the counts reached
    /// before the term cap stopped it.
    pub expanded_term_counts: Vec<usize>,
    pub expansion_complete: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub name: String,
    pub totals: Vec<f64>,
    pub mean_total: f64,
    pub mean_time_averaged: f64,
    pub diverged: usize,
    /// Time-averaged cost after `t` steps, averaged over seeds.
    pub curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub trained_le_alpha_one: bool,
    /// trained SLS < FBL < all-ones SLS.
    pub ordering_reproduced: bool,
    /// `100·(FBL - trained)/FBL`.
    pub trained_below_fbl_percent: f64,
    pub alpha_one_above_fbl_percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub fit: FitSummary,
    pub controller: ControllerSummary,
    pub certificate: StabilityCert,
    pub cost_bound: Option<CostBound>,
    pub fbl_gain: Vec<Vec<f64>>,
    /// Spectral radius of `A1 - K`: per-step decay rate of the linearized
    /// FBL loop.
    pub fbl_decay_rate: f64,
    pub training: TrainReport,
    pub methods: Vec<MethodSummary>,
    pub comparison: Comparison,
}

pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub dynamics: PolyDynamics<f64>,
    pub controller: Controller<f64>,
    pub net: AlphaNet<f64>,
}

/// Fits the Taylor model of the point mass.
pub fn fit_point_mass(cfg: &ExperimentConfig) -> Result<(PointMass, PolyDynamics<f64>)> {
    let plant = PointMass::new(cfg.point_mass.clone())?;
    let smooth = plant.smooth()?;
    let opts = FitOptions { bound_radius: cfg.bound_radius, bound_samples: cfg.bound_samples };
    let dyn_ = taylor_expand_with(&smooth, cfg.k, &opts)?;
    Ok((plant, dyn_))
}

/// Synthesizes the configured controller realization.
pub fn build_controller(dyn_: &PolyDynamics<f64>, engine: Engine, horizon: usize, term_cap: usize) -> Result<Controller<f64>> {
    Ok(match engine {
        Engine::Symbolic => Controller::Symbolic(synthesize_with(dyn_, horizon, &SynthOptions { term_cap })?),
        Engine::Grouped => Controller::Grouped(GroupedController::from_dynamics(dyn_, horizon)?),
    })
}

fn expansion_probe(dyn_: &PolyDynamics<f64>, horizon: usize, term_cap: usize) -> Result<(Vec<usize>, bool)> {
    match synthesize_with(dyn_, horizon, &SynthOptions { term_cap }) {
        Ok(c) => Ok((c.c_m().to_vec(), true)),
        Err(Error::TermExplosion { counts, .. }) => Ok((counts, false)),
        Err(e) => Err(e),
    }
}

fn summarize(name: &str, rows: Vec<(f64, Vec<f64>, bool)>, n_t: usize) -> MethodSummary {
    let count = rows.len().max(1) as f64;
    let totals: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mut curve = vec![0.0; n_t];
    for (_, avg, _) in &rows {
        for (t, c) in curve.iter_mut().enumerate() {
            // diverged rollouts hold their last value
            *c += avg.get(t).or(avg.last()).copied().unwrap_or(0.0) / count;
        }
    }
    MethodSummary {
        name: name.into(),
        mean_total: totals.iter().sum::<f64>() / count,
        mean_time_averaged: rows.iter().map(|r| r.1.last().copied().unwrap_or(0.0)).sum::<f64>() / count,
        diverged: rows.iter().filter(|r| r.2).count(),
        totals,
        curve,
    }
}

/// Runs the whole experiment. Certification failure does not stop it; the
/// certificate in the report carries the offending `b`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    if cfg.eval_seeds == 0 || cfg.eval_n_t == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one seed and one step".into()));
    }
    let (plant, dyn_) = fit_point_mass(cfg)?;
    let n = TrueDynamics::<f64>::n(&plant);
    let ctl = build_controller(&dyn_, cfg.engine, cfg.horizon, cfg.term_cap)?;
    let (probe_counts, probe_complete) = expansion_probe(&dyn_, cfg.horizon, cfg.term_cap)?;

    let (l, c) = ctl.l_c(cfg.w);
    let certificate = check_iss(dyn_.m_bound(), cfg.w, cfg.k, l, c, cfg.alpha_min)?;
    let cost = cost_weights::<f64>(&cfg.q, &cfg.r, n)?;
    let cost_bound = cost_bound_u1(dyn_.m_bound(), cfg.w, cfg.k, n, cfg.bound_radius)
        .and_then(|b| b.with_horizon(&cost.r, cfg.eval_n_t))
        .ok();

    let (fbl, _) = FblController::design(&plant, &cost.q, &cost.r)?;

    let net0 = AlphaNet::for_law(&ctl, &cfg.hidden, cfg.seed, cfg.dropout, cfg.alpha_min)?;
    let (net, training) = train(&net0, &ctl, &plant, &cfg.train_config())?;

    let per_seed: Vec<Result<[(f64, Vec<f64>, bool); 3]>> = (0..cfg.eval_seeds)
        .into_par_iter()
        .map(|i| {
            let spec = DisturbanceSpec {
                kind: DisturbanceKind::Uniform,
                w: cfg.w,
                n_t: cfg.eval_n_t,
                n,
                seed: cfg.eval_seed_base + i as u64,
            };
            let ws = gen_disturbances::<f64>(&spec)?;
            let run = |p: Policy<f64>| -> Result<(f64, Vec<f64>, bool)> {
                let r = simulate(&plant, &p, &ws, &cost, cfg.w)?;
                let (total, avg) = quadratic_cost(&r, &cost);
                Ok((total, avg, r.diverged))
            };
            Ok([
                run(Policy::Sls { law: &ctl, alphas: AlphaSource::Net(&net) })?,
                run(Policy::const_alpha(&ctl, 1.0)?)?,
                run(Policy::Fbl(&fbl))?,
            ])
        })
        .collect();
    let mut cols: [Vec<(f64, Vec<f64>, bool)>; 3] = Default::default();
    for r in per_seed {
        for (col, v) in cols.iter_mut().zip(r?) {
            col.push(v);
        }
    }
    let [trained, ones, fb] = cols;
    let methods = vec![
        summarize("trained_sls", trained, cfg.eval_n_t),
        summarize("alpha_one_sls", ones, cfg.eval_n_t),
        summarize("fbl", fb, cfg.eval_n_t),
    ];
    let (t_cost, o_cost, f_cost) = (methods[0].mean_total, methods[1].mean_total, methods[2].mean_total);
    let comparison = Comparison {
        trained_le_alpha_one: t_cost <= o_cost,
        ordering_reproduced: t_cost < f_cost && f_cost < o_cost,
        trained_below_fbl_percent: 100.0 * (f_cost - t_cost) / f_cost,
        alpha_one_above_fbl_percent: 100.0 * (o_cost - f_cost) / f_cost,
    };

    let report = ExperimentReport {
        config: cfg.clone(),
        fit: FitSummary { k: dyn_.k(), m: dyn_.m_bound(), diagnostics: dyn_.diagnostics().cloned() },
        controller: ControllerSummary {
            kind: ctl.kind().into(),
            horizon: ctl.horizon(),
            num_alphas: ctl.num_alphas(),
            l,
            c,
            expanded_term_counts: probe_counts,
            expansion_complete: probe_complete,
        },
        certificate,
        cost_bound,
        fbl_gain: (0..n).map(|i| fbl.k.row(i).iter().copied().collect()).collect(),
        fbl_decay_rate: (&fbl.a1 - &fbl.k).complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max),
        training,
        methods,
        comparison,
    };
    Ok(ExperimentOutcome { report, dynamics: dyn_, controller: ctl, net })
}

/// Comparison table CSV: `method, mean_total, mean_time_averaged, diverged`.
pub fn write_comparison_csv<W: std::io::Write>(report: &ExperimentReport, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["method", "mean_total", "mean_time_averaged", "diverged"])?;
    for m in &report.methods {
        wtr.write_record([m.name.clone(), m.mean_total.to_string(), m.mean_time_averaged.to_string(), m.diverged.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Time-averaged cost curves CSV: `t, <method>…`.
pub fn write_curves_csv<W: std::io::Write>(report: &ExperimentReport, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend(report.methods.iter().map(|m| m.name.clone()));
    wtr.write_record(&header)?;
    let len = report.methods.iter().map(|m| m.curve.len()).max().unwrap_or(0);
    for t in 0..len {
        let mut row = vec![(t + 1).to_string()];
        row.extend(report.methods.iter().map(|m| m.curve.get(t).map_or(String::new(), |v| v.to_string())));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

//! Implementations of the CLI commands.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::Serialize;
use serde_json::json;

use super::config::{EstimatorChoice, ExperimentConfig, MetricKind, PointOrigin};
use super::output::{self, RunManifest};
use super::CommonArgs;
use crate::density::{density_alg3, density_alg4, LikelihoodReport, TimeChoice};
use crate::distributions::VelocityLaw;
use crate::error::{Error, Result};
use crate::field::DirectionField;
use crate::hrf::{seeded, stream, train_with_progress, HrfModel, LossRow, TrainConfig};
use crate::metrics::{sliced_w2, wasserstein1_1d, MetricReport};
use crate::nn::Checkpoint;
use crate::oracle::{velocity_check as check_point, CheckStatus};
use crate::sampler::{sample_batch, SamplerOptions, SamplerSchedule};

pub const CHECKPOINT_NAME: &str = "model.ckpt";

/// Resolved inputs shared by every command.
pub struct Context {
    pub command: &'static str,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
    config_hash: String,
    started: f64,
}

impl Context {
    pub fn new(command: &'static str, args: &CommonArgs) -> Result<Self> {
        let started = output::unix_now();
        let mut config = ExperimentConfig::load(&args.config)?;
        if let Some(seed) = args.seed {
            config.seed = seed;
        }
        let out_dir = args
            .out
            .clone()
            .or_else(|| config.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&out_dir)
            .map_err(|e| Error::Argument(format!("cannot create output directory {}: {e}", out_dir.display())))?;
        Ok(Context {
            command,
            seed: config.seed,
            config_hash: config.hash()?,
            config,
            out_dir,
            started,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn finish(&self, produced: &[&str], summary: serde_json::Value) -> Result<()> {
        RunManifest {
            command: self.command.to_string(),
            name: self.config.name.clone(),
            config_hash: self.config_hash.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            started_at_unix: self.started,
            finished_at_unix: 0.0,
            produced: produced.iter().map(|s| s.to_string()).collect(),
            artifacts: Vec::new(),
            summary,
        }
        .finish(&self.out_dir)?;
        Ok(())
    }

    fn checkpoint_path(&self, explicit: Option<&PathBuf>) -> PathBuf {
        explicit.cloned().unwrap_or_else(|| self.path(CHECKPOINT_NAME))
    }
}

pub fn load_model(path: &Path) -> Result<HrfModel> {
    HrfModel::from_checkpoint(&Checkpoint::load(path)?)
}

fn default_schedule(depth: usize) -> Result<SamplerSchedule> {
    match depth {
        1 => SamplerSchedule::new(vec![100]),
        2 => SamplerSchedule::new(vec![5, 20]),
        d => Err(Error::Config(format!(
            "no default sampler schedule for depth {d}; set sample.schedule"
        ))),
    }
}

fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn train_logged(cfg: &TrainConfig, label: &str) -> Result<crate::hrf::TrainOutcome> {
    let total = cfg.iterations;
    train_with_progress(cfg, |row: &LossRow| {
        eprintln!("{label}iteration {}/{total}  loss {:.6}", row.iteration, row.loss);
    })
}

pub fn train(ctx: &Context) -> Result<()> {
    let cfg = ctx.config.train_config()?;
    let outcome = train_logged(&cfg, "")?;
    outcome.model.to_checkpoint(ctx.seed).save(&ctx.path(CHECKPOINT_NAME))?;
    output::write_rows(&ctx.path("loss.csv"), &outcome.loss_curve)?;
    let final_loss = outcome.loss_curve.last().map(|r| r.loss);
    ctx.finish(
        &[CHECKPOINT_NAME, "loss.csv"],
        json!({
            "depth": cfg.depth,
            "iterations": cfg.iterations,
            "batch_size": cfg.batch_size,
            "parameters": outcome.model.net().param_count(),
            "final_loss": final_loss,
        }),
    )
}

pub fn sample(ctx: &Context) -> Result<()> {
    let sc = &ctx.config.sample;
    let model = load_model(&ctx.checkpoint_path(sc.checkpoint.as_ref()))?;
    let schedule = match &sc.schedule {
        Some(s) => s.clone(),
        None => default_schedule(model.depth())?,
    };
    let opts = SamplerOptions {
        reuse_inner_source: sc.reuse_inner_source,
        record_trajectories: sc.record_trajectories,
        trajectory_limit: Some(sc.max_trajectories),
    };
    let mut rng = seeded(ctx.seed, stream::SAMPLE);
    let set = sample_batch(&model, &schedule, sc.n, &mut rng, opts)?;
    ensure_finite(&set.points, "generated samples")?;
    output::write_points(&ctx.path("samples.csv"), &set.points, set.dim)?;
    let mut produced = vec!["samples.csv"];
    if let Some(trajs) = &set.trajectories {
        output::write_trajectories(&ctx.path("trajectories.csv"), trajs, set.dim)?;
        produced.push("trajectories.csv");
    }
    ctx.finish(
        &produced,
        json!({
            "schedule": schedule.steps,
            "n_samples": set.len(),
            "nfe_per_sample": set.nfe_per_sample,
            "total_nfe": set.nfe_per_sample * set.len() as u64,
            "reuse_inner_source": sc.reuse_inner_source,
        }),
    )
}

/// Distance between generated samples `a` and reference samples `b`.
pub fn evaluate_metric<R: Rng + ?Sized>(
    kind: MetricKind,
    a: &[f64],
    b: &[f64],
    dim: usize,
    n_projections: usize,
    rng: &mut R,
) -> Result<MetricReport> {
    let kind = match kind {
        MetricKind::Auto if dim == 1 => MetricKind::W1,
        MetricKind::Auto => MetricKind::Swd,
        k => k,
    };
    match kind {
        MetricKind::W1 => {
            if dim != 1 {
                return Err(Error::Argument(format!("w1 needs 1D samples, got dim {dim}")));
            }
            Ok(MetricReport {
                metric: "w1".into(),
                value: wasserstein1_1d(a, b)?,
                n_samples: a.len(),
                n_projections: None,
                seed: None,
            })
        }
        _ => Ok(MetricReport {
            metric: "swd".into(),
            value: sliced_w2(a, b, dim, n_projections, rng)?,
            n_samples: a.len() / dim,
            n_projections: Some(n_projections),
            seed: None,
        }),
    }
}

pub fn eval(ctx: &Context) -> Result<()> {
    let ec = &ctx.config.eval;
    let samples_path = ec.samples.clone().unwrap_or_else(|| ctx.path("samples.csv"));
    let (points, dim) = output::read_points(&samples_path)?;
    let (_, target) = ctx.config.data.resolve()?;
    if dim != target.dim() {
        return Err(Error::Argument(format!(
            "{} has dimension {dim} but the target has dimension {}",
            samples_path.display(),
            target.dim()
        )));
    }
    let mut rng = seeded(ctx.seed, stream::EVAL);
    let reference = target.sample(ec.n_target, &mut rng);
    let mut report = evaluate_metric(ec.metric, &points, &reference, dim, ec.n_projections, &mut rng)?;
    report.seed = Some(ctx.seed);
    output::write_rows(&ctx.path("metrics.csv"), std::slice::from_ref(&report))?;
    println!("{} = {:.6}", report.metric, report.value);
    ctx.finish(&["metrics.csv"], serde_json::to_value(&report)?)
}

pub fn density(ctx: &Context) -> Result<()> {
    let dc = &ctx.config.density;
    let model = load_model(&ctx.checkpoint_path(dc.checkpoint.as_ref()))?;
    if model.depth() != 2 {
        return Err(Error::UnsupportedDensity(format!(
            "a depth-{} model; likelihood needs depth 2",
            model.depth()
        )));
    }
    if dc.estimator == EstimatorChoice::Alg4 {
        if let TimeChoice::Fixed(t) = dc.alg4.t {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Argument(format!("density.alg4.t must lie in (0, 1), got {t}")));
            }
            if t > 0.95 {
                eprintln!("warning: t = {t} is close to 1; the marginal estimate becomes very noisy");
            }
        }
    }
    let dim = model.dim();
    let mut rng = seeded(ctx.seed, stream::DENSITY);
    let points = match (&dc.points, dc.origin) {
        (Some(path), _) => {
            let (pts, d) = output::read_points(path)?;
            if d != dim {
                return Err(Error::Argument(format!(
                    "{} has dimension {d} but the model has dimension {dim}",
                    path.display()
                )));
            }
            pts
        }
        (None, PointOrigin::Target) => ctx.config.data.resolve()?.1.sample(dc.n_points, &mut rng),
        (None, PointOrigin::Generated) => {
            let schedule = dc.schedule.clone().unwrap_or(default_schedule(2)?);
            sample_batch(&model, &schedule, dc.n_points, &mut rng, SamplerOptions::default())?.points
        }
    };
    let mut w = csv::Writer::from_path(ctx.path("density.csv"))?;
    let mut header = vec!["point_id".to_string()];
    header.extend((0..dim).map(|d| format!("dim{d}")));
    header.extend(["log_density", "bpd", "estimator", "t", "solver_steps"].map(String::from));
    w.write_record(&header)?;
    let mut reports: Vec<LikelihoodReport> = Vec::new();
    for (i, z1) in points.chunks(dim).enumerate() {
        let report = match dc.estimator {
            EstimatorChoice::Alg3 => density_alg3(&model, z1, &mut rng, &dc.alg3)?,
            EstimatorChoice::Alg4 => density_alg4(&model, z1, &mut rng, &dc.alg4)?,
        };
        if !report.log_density.is_finite() {
            return Err(Error::NonFinite(format!("log-likelihood of point {i}")));
        }
        let mut row = vec![i.to_string()];
        row.extend(z1.iter().map(f64::to_string));
        row.push(report.log_density.to_string());
        row.push(report.bpd.to_string());
        row.push(report.estimator.to_string());
        row.push(report.t.iter().map(f64::to_string).collect::<Vec<_>>().join(";"));
        row.push(report.solver_steps.to_string());
        w.write_record(&row)?;
        reports.push(report);
    }
    w.flush()?;
    let n = reports.len() as f64;
    let mean_log = reports.iter().map(|r| r.log_density).sum::<f64>() / n;
    let mean_bpd = reports.iter().map(|r| r.bpd).sum::<f64>() / n;
    println!("mean log-density {mean_log:.6} nats, mean bpd {mean_bpd:.6}");
    ctx.finish(
        &["density.csv"],
        json!({
            "estimator": reports[0].estimator,
            "n_points": reports.len(),
            "mean_log_density": mean_log,
            "mean_bpd": mean_bpd,
            "n_probes": reports[0].n_probes,
        }),
    )
}

#[derive(Serialize)]
struct PdfRow {
    x_t: f64,
    t: f64,
    v: f64,
    analytic: f64,
    empirical: f64,
}

#[derive(Serialize)]
struct L1Row {
    x_t: f64,
    t: f64,
    status: CheckStatus,
    l1: Option<f64>,
    n_accepted: usize,
    n_draws: u64,
}

pub fn velocity_check(ctx: &Context) -> Result<()> {
    let vc = &ctx.config.velocity_check;
    let (source, target) = ctx.config.data.resolve()?;
    let law = VelocityLaw::new(source, target)?;
    if law.dim() != 1 {
        return Err(Error::Argument("velocity-check supports 1D data only".into()));
    }
    let mut rng = seeded(ctx.seed, stream::VELOCITY_CHECK);
    let mut pdf_rows = Vec::new();
    let mut l1_rows = Vec::new();
    for &[x_t, t] in &vc.points {
        let c = check_point(&law, x_t, t, vc.window, vc.n_accept, vc.bins, vc.max_draws, &mut rng)?;
        match c.status {
            CheckStatus::Undefined => eprintln!("x_t={x_t}, t={t}: marginal density vanishes, skipped"),
            CheckStatus::Insufficient => eprintln!(
                "x_t={x_t}, t={t}: only {} of {} samples accepted",
                c.n_accepted, vc.n_accept
            ),
            CheckStatus::Ok => println!("x_t={x_t}, t={t}: L1 = {:.5}", c.l1),
        }
        for k in 0..c.grid.len() {
            pdf_rows.push(PdfRow {
                x_t,
                t,
                v: c.grid[k],
                analytic: c.analytic[k],
                empirical: c.empirical[k],
            });
        }
        l1_rows.push(L1Row {
            x_t,
            t,
            l1: c.l1.is_finite().then_some(c.l1),
            status: c.status,
            n_accepted: c.n_accepted,
            n_draws: c.n_draws,
        });
    }
    output::write_rows(&ctx.path("velocity_pdf.csv"), &pdf_rows)?;
    output::write_rows(&ctx.path("velocity_l1.csv"), &l1_rows)?;
    let max_l1 = l1_rows.iter().filter_map(|r| r.l1).fold(f64::NAN, f64::max);
    ctx.finish(
        &["velocity_pdf.csv", "velocity_l1.csv"],
        json!({ "points": vc.points.len(), "max_l1": max_l1 }),
    )
}

#[derive(Clone, Debug, Serialize)]
pub struct AblateRun {
    pub model: usize,
    pub seed: u64,
    pub schedule: String,
    pub nfe: u64,
    pub repeat: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblateRow {
    pub schedule: String,
    pub nfe: u64,
    pub metric: String,
    /// Mean over models of each model's mean over repeats.
    pub mean: f64,
    /// Sample standard deviation of the per-model means; empty with one model.
    pub std: Option<f64>,
    pub n_models: usize,
    pub n_eval_repeats: usize,
}

/// Checks that every schedule matches the model depth and spends the same NFE.
pub fn check_ablation_grid(schedules: &[SamplerSchedule], nfe: Option<u64>, depth: usize) -> Result<u64> {
    let first = schedules
        .first()
        .ok_or_else(|| Error::Config("ablate.schedules is empty".into()))?;
    let budget = nfe.unwrap_or(first.nfe());
    for s in schedules {
        s.validate()?;
        if s.depth() != depth {
            return Err(Error::Config(format!(
                "schedule {s} has depth {}, the model has depth {depth}",
                s.depth()
            )));
        }
        if s.nfe() != budget {
            return Err(Error::Config(format!(
                "schedule {s} uses {} evaluations, the declared budget is {budget}",
                s.nfe()
            )));
        }
    }
    Ok(budget)
}

/// Aggregates per-run values into one row per schedule.
pub fn summarize_ablation(
    runs: &[AblateRun],
    schedules: &[SamplerSchedule],
    n_models: usize,
    repeats: usize,
) -> Vec<AblateRow> {
    schedules
        .iter()
        .map(|s| {
            let name = s.to_string();
            let per_model: Vec<f64> = (0..n_models)
                .map(|m| {
                    let vals: Vec<f64> = runs
                        .iter()
                        .filter(|r| r.model == m && r.schedule == name)
                        .map(|r| r.value)
                        .collect();
                    vals.iter().sum::<f64>() / vals.len() as f64
                })
                .collect();
            let mean = per_model.iter().sum::<f64>() / n_models as f64;
            let std = (n_models > 1)
                .then(|| (per_model.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_models - 1) as f64).sqrt());
            AblateRow {
                schedule: name.clone(),
                nfe: s.nfe(),
                metric: runs
                    .iter()
                    .find(|r| r.schedule == name)
                    .map(|r| r.metric.clone())
                    .unwrap_or_default(),
                mean,
                std,
                n_models,
                n_eval_repeats: repeats,
            }
        })
        .collect()
}

pub fn ablate(ctx: &Context) -> Result<()> {
    let ac = &ctx.config.ablate;
    let base = ctx.config.train_config()?;
    let budget = check_ablation_grid(&ac.schedules, ac.nfe, base.depth)?;
    if ac.n_models == 0 || ac.n_eval_repeats == 0 || ac.n_eval == 0 {
        return Err(Error::Config(
            "ablate.n_models, n_eval_repeats and n_eval must be >= 1".into(),
        ));
    }
    let target = base.target.clone();
    let dim = target.dim();
    let models_dir = ctx.path("models");
    fs::create_dir_all(&models_dir)?;
    let mut runs = Vec::new();
    for m in 0..ac.n_models {
        let seed = ctx.seed.wrapping_add(m as u64);
        let cfg = TrainConfig { seed, ..base.clone() };
        let outcome = train_logged(&cfg, &format!("model {}/{}: ", m + 1, ac.n_models))?;
        outcome
            .model
            .to_checkpoint(seed)
            .save(&models_dir.join(format!("model_{m}.ckpt")))?;
        let mut sample_rng = seeded(seed, stream::SAMPLE);
        let mut eval_rng = seeded(seed, stream::EVAL);
        for s in &ac.schedules {
            for repeat in 0..ac.n_eval_repeats {
                let set = sample_batch(&outcome.model, s, ac.n_eval, &mut sample_rng, SamplerOptions::default())?;
                ensure_finite(&set.points, "generated samples")?;
                let reference = target.sample(ac.n_eval, &mut eval_rng);
                let report = evaluate_metric(
                    ac.metric,
                    &set.points,
                    &reference,
                    dim,
                    crate::metrics::DEFAULT_PROJECTIONS,
                    &mut eval_rng,
                )?;
                eprintln!("model {m} {s} repeat {repeat}: {} = {:.5}", report.metric, report.value);
                runs.push(AblateRun {
                    model: m,
                    seed,
                    schedule: s.to_string(),
                    nfe: budget,
                    repeat,
                    metric: report.metric,
                    value: report.value,
                });
            }
        }
    }
    let table = summarize_ablation(&runs, &ac.schedules, ac.n_models, ac.n_eval_repeats);
    output::write_rows(&ctx.path("ablate_runs.csv"), &runs)?;
    output::write_rows(&ctx.path("table1.csv"), &table)?;
    for row in &table {
        match row.std {
            Some(sd) => println!("{:>10}  {:.5} +- {:.5}", row.schedule, row.mean, sd),
            None => println!("{:>10}  {:.5}", row.schedule, row.mean),
        }
    }
    let produced: Vec<String> = (0..ac.n_models).map(|m| format!("models/model_{m}.ckpt")).collect();
    let mut names: Vec<&str> = produced.iter().map(String::as_str).collect();
    names.extend(["ablate_runs.csv", "table1.csv"]);
    ctx.finish(&names, json!({ "nfe": budget, "table": table }))
}

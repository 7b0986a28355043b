use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use gvf_core::data::{read_records, subsample, ColumnSpec, SensorMeta};
use gvf_core::eval::{
    evaluate_log, log_targets, returns, two_stage_sweep, validation_sweep, write_nmse_series, LearnerKind,
    NmseSummary, SweepResult,
};
use gvf_core::gvf::{deploy_td, offline_td, transitions, TdDeployment};
use gvf_core::mlp::{load_checkpoint, save_checkpoint};
use gvf_core::nstep::{build_nstep_dataset, deploy_nstep, offline_nstep};
use gvf_core::simulator::{generate, inject_shift};
use gvf_core::stream::prepare_streams;
use gvf_core::{
    Cumulant, Dataset, DeploymentLog, EncoderConfig, Predictor, Real, StateBuilder, TelemetryEncoder,
};
use serde::{Deserialize, Serialize};

use crate::config::{Config, LearnerChoice, Precision, SweepStyle};
use crate::manifest::{sha256_hex, RunManifest};
use crate::Algo;

pub struct Context {
    pub cfg: Config,
    pub out: PathBuf,
    pub algo: Option<Algo>,
    pub log: Option<PathBuf>,
}

impl Context {
    fn out_dir(&self) -> anyhow::Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn log_path(&self) -> PathBuf {
        self.log.clone().unwrap_or_else(|| self.artifact("deploy.csv"))
    }

    fn learner(&self) -> LearnerChoice {
        match self.algo {
            Some(Algo::Nstep) => LearnerChoice::Nstep,
            Some(_) => LearnerChoice::Td,
            None => self.cfg.sweep.learner,
        }
    }
}

/// How `pretrain` encoded its data; `deploy` rebuilds the same encoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct EncoderArtifact {
    config: EncoderConfig,
    sensors: Vec<SensorMeta>,
    cumulant: String,
    learner: LearnerChoice,
    precision: Precision,
    layout: String,
    layout_hash: u64,
    dropped: Vec<String>,
}

impl EncoderArtifact {
    fn encoder(&self) -> anyhow::Result<TelemetryEncoder> {
        let builder = StateBuilder::new(self.config.clone(), self.sensors.clone())?;
        if builder.layout().hash() != self.layout_hash {
            bail!(gvf_core::Error::Checkpoint(
                "encoder description does not reproduce its recorded layout".into()
            ));
        }
        let column = self
            .sensors
            .iter()
            .position(|m| m.name == self.cumulant)
            .ok_or_else(|| gvf_core::Error::Data(format!("cumulant `{}` missing from encoder", self.cumulant)))?;
        Ok(TelemetryEncoder::new(builder, Cumulant::new(column, self.sensors[column].clone())))
    }
}

fn load_dataset(ctx: &Context, manifest: &mut RunManifest) -> anyhow::Result<Dataset> {
    let path = ctx.cfg.data_path(&ctx.out);
    let bytes = fs::read(&path).map_err(|e| gvf_core::Error::Io { path: path.clone(), source: e })?;
    manifest.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
    let d = read_records(bytes.as_slice(), &ColumnSpec::Any).with_context(|| format!("loading {}", path.display()))?;
    Ok(subsample(&d, ctx.cfg.data.subsample)?)
}

fn hash_input(manifest: &mut RunManifest, path: &Path) -> anyhow::Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| gvf_core::Error::Io { path: path.to_path_buf(), source: e })?;
    manifest.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
    Ok(bytes)
}

fn write_with<F>(path: &Path, f: F) -> anyhow::Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).with_context(|| format!("writing {}", path.display()))
}

pub fn simulate(ctx: &Context) -> anyhow::Result<()> {
    let out = ctx.out_dir()?;
    let sim = &ctx.cfg.simulate;
    let scenario = sim.scenario()?;
    let path = out.join("data.csv");
    let mut manifest = RunManifest::new("simulate", &ctx.cfg);
    manifest.artifacts.push(path.display().to_string());
    manifest.write(out)?;

    let mut d = generate(&scenario, sim.steps, ctx.cfg.seed)?;
    if let Some(shift) = &sim.shift {
        d = inject_shift(&d, shift)?;
    }
    d.write_csv(&path)?;
    println!("simulated {} steps × {} sensors → {}", d.len(), d.width(), path.display());
    Ok(())
}

pub fn pretrain(ctx: &Context) -> anyhow::Result<()> {
    match ctx.cfg.precision {
        Precision::F32 => pretrain_as::<f32>(ctx),
        Precision::F64 => pretrain_as::<f64>(ctx),
    }
}

fn pretrain_as<R: Real>(ctx: &Context) -> anyhow::Result<()> {
    let out = ctx.out_dir()?;
    let cfg = &ctx.cfg;
    let learner = ctx.learner();
    let mut manifest = RunManifest::new("pretrain", cfg);
    let d = load_dataset(ctx, &mut manifest)?;
    let split = cfg.data.split(d.len())?;
    let prep = prepare_streams(&d, split, cfg.encoder.clone(), &cfg.data.cumulant)?;
    let layout = prep.encoder.builder.layout().clone();
    let ckpt = ctx.artifact("checkpoint.bin");
    let enc_path = ctx.artifact("encoder.json");
    manifest.encoder_layout = Some(layout.describe());
    manifest.layout_hash = Some(format!("{:016x}", layout.hash()));
    manifest.artifacts = vec![ckpt.display().to_string(), enc_path.display().to_string()];
    manifest.write(out)?;

    let init = Predictor::<R>::new(&cfg.network, layout.width(), cfg.seed)?;
    let shuffle_seed = cfg.seed.wrapping_add(1);
    let trained = match learner {
        LearnerChoice::Td => offline_td(&transitions(&prep.train), &cfg.td, init, shuffle_seed)?,
        LearnerChoice::Nstep => {
            let pairs = build_nstep_dataset(&prep.train, cfg.nstep.n)?;
            offline_nstep(&pairs, &cfg.nstep, init, shuffle_seed)?
        }
    };
    if !trained.network.is_finite() {
        bail!(gvf_core::Error::NonFinite("pretrained parameters"));
    }
    save_checkpoint(&trained.network, &trained.optimizer, layout.hash(), &ckpt)?;
    let artifact = EncoderArtifact {
        config: prep.encoder.builder.config().clone(),
        sensors: prep.encoder.builder.meta().to_vec(),
        cumulant: cfg.data.cumulant.clone(),
        learner,
        precision: cfg.precision,
        layout: layout.describe(),
        layout_hash: layout.hash(),
        dropped: prep.dropped.clone(),
    };
    fs::write(&enc_path, serde_json::to_string_pretty(&artifact)?)
        .with_context(|| format!("writing {}", enc_path.display()))?;
    println!(
        "pretrained {:?} on {} steps; input width {}, {} optimizer steps; dropped {:?}",
        learner,
        prep.train.len(),
        layout.width(),
        trained.optimizer.step_count,
        prep.dropped
    );
    Ok(())
}

pub fn sweep(ctx: &Context) -> anyhow::Result<()> {
    match ctx.cfg.precision {
        Precision::F32 => sweep_as::<f32>(ctx),
        Precision::F64 => sweep_as::<f64>(ctx),
    }
}

fn sweep_as<R: Real>(ctx: &Context) -> anyhow::Result<()> {
    let out = ctx.out_dir()?;
    let cfg = &ctx.cfg;
    let grid = cfg.sweep.grid()?;
    let mut manifest = RunManifest::new("sweep", cfg);
    let d = load_dataset(ctx, &mut manifest)?;
    let split = cfg.data.split(d.len())?;
    let prep = prepare_streams(&d, split, cfg.encoder.clone(), &cfg.data.cumulant)?;
    let matrix = ctx.artifact("sweep.csv");
    let best = ctx.artifact("sweep.json");
    manifest.encoder_layout = Some(prep.encoder.builder.layout().describe());
    manifest.artifacts = vec![matrix.display().to_string(), best.display().to_string()];
    manifest.write(out)?;

    let kind = match ctx.learner() {
        LearnerChoice::Td => LearnerKind::Td(cfg.td.clone()),
        LearnerChoice::Nstep => LearnerKind::NStep(cfg.nstep.clone()),
    };
    let run = match cfg.sweep.style {
        SweepStyle::Joint => validation_sweep::<R>,
        SweepStyle::TwoStage => two_stage_sweep::<R>,
    };
    let result: SweepResult = run(&prep.train, &prep.validation, &grid, &kind, &cfg.network, cfg.eval.tol, cfg.seed)?;
    write_with(&matrix, |w| result.write_matrix(w))?;
    let report = serde_json::json!({
        "learner": kind,
        "style": cfg.sweep.style,
        "best_eta": result.best_eta(),
        "best_alpha": result.best_alpha(),
        "best_error": result.best_error(),
        "cells": result.grid.etas.len() * result.grid.alphas.len(),
    });
    fs::write(&best, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", best.display()))?;
    println!(
        "sweep over {}×{} cells: best eta {:e}, alpha {:e} (mean error {})",
        result.grid.etas.len(),
        result.grid.alphas.len(),
        result.best_eta(),
        result.best_alpha(),
        result.best_error()
    );
    Ok(())
}

pub fn deploy(ctx: &Context) -> anyhow::Result<()> {
    let enc_path = ctx.artifact("encoder.json");
    let text = fs::read_to_string(&enc_path)
        .map_err(|e| gvf_core::Error::Io { path: enc_path.clone(), source: e })?;
    let artifact: EncoderArtifact =
        serde_json::from_str(&text).map_err(|e| gvf_core::Error::Data(format!("{}: {e}", enc_path.display())))?;
    match artifact.precision {
        Precision::F32 => deploy_as::<f32>(ctx, artifact),
        Precision::F64 => deploy_as::<f64>(ctx, artifact),
    }
}

fn deploy_as<R: Real>(ctx: &Context, artifact: EncoderArtifact) -> anyhow::Result<()> {
    let out = ctx.out_dir()?;
    let cfg = &ctx.cfg;
    let algo = ctx.algo.unwrap_or(match artifact.learner {
        LearnerChoice::Td => Algo::Onlinetd,
        LearnerChoice::Nstep => Algo::Nstep,
    });
    match (algo, artifact.learner) {
        (Algo::Nstep, LearnerChoice::Td) | (Algo::Onlinetd | Algo::Tdreplay, LearnerChoice::Nstep) => {
            bail!(gvf_core::Error::Checkpoint(format!(
                "--algo {algo:?} is incompatible with a checkpoint pretrained as {:?}",
                artifact.learner
            )));
        }
        _ => {}
    }
    let mut manifest = RunManifest::new("deploy", cfg);
    let ckpt_path = ctx.artifact("checkpoint.bin");
    hash_input(&mut manifest, &ckpt_path)?;
    let d = load_dataset(ctx, &mut manifest)?;
    let encoder = artifact.encoder()?;
    let layout = encoder.builder.layout().clone();
    let log_path = ctx.artifact("deploy.csv");
    manifest.encoder_layout = Some(layout.describe());
    manifest.layout_hash = Some(format!("{:016x}", layout.hash()));
    manifest.artifacts = vec![log_path.display().to_string()];
    manifest.write(out)?;

    let ck = load_checkpoint::<R>(&ckpt_path, None)?;
    if ck.layout_hash != layout.hash() || ck.network.input_width() != layout.width() {
        bail!(gvf_core::Error::Checkpoint(format!(
            "checkpoint layout {:016x} (input {}) does not match encoder layout {:016x} (input {})",
            ck.layout_hash,
            ck.network.input_width(),
            layout.hash(),
            layout.width()
        )));
    }
    let columns = artifact
        .sensors
        .iter()
        .map(|m| {
            d.column(&m.name)
                .ok_or_else(|| gvf_core::Error::Data(format!("dataset lacks sensor `{}`", m.name)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let kept = d.select_columns(&columns)?;
    let split = cfg.data.split(kept.len())?;
    let deployment = encoder.encode_segment(&kept.records()[split.validation_end..])?;
    let mut predictor = Predictor::from_parts(ck.network, ck.optimizer)?;

    let obs = deployment.into_iter().map(Ok);
    let log = match algo {
        Algo::Frozen if artifact.learner == LearnerChoice::Nstep => {
            deploy_nstep(&mut predictor, obs, &cfg.nstep, false)?
        }
        Algo::Frozen => deploy_td(&mut predictor, obs, &cfg.td, TdDeployment::Frozen)?,
        Algo::Onlinetd => deploy_td(&mut predictor, obs, &cfg.td, TdDeployment::Online)?,
        Algo::Tdreplay => {
            let train = transitions(&encoder.encode_segment(&kept.records()[..split.train_end])?);
            let mode = TdDeployment::Replay {
                offline: &train,
                seed: cfg.seed.wrapping_add(2),
            };
            deploy_td(&mut predictor, obs, &cfg.td, mode)?
        }
        Algo::Nstep => deploy_nstep(&mut predictor, obs, &cfg.nstep, true)?,
    };
    log.write_csv(&log_path)?;
    println!(
        "deployed {:?} over {} steps with {} updates → {}",
        algo,
        log.rows.len(),
        log.updates.len(),
        log_path.display()
    );
    Ok(())
}

fn read_log(ctx: &Context, manifest: &mut RunManifest) -> anyhow::Result<DeploymentLog> {
    let path = ctx.log_path();
    let bytes = hash_input(manifest, &path)?;
    DeploymentLog::read_from(bytes.as_slice()).with_context(|| format!("reading {}", path.display()))
}

pub fn eval(ctx: &Context) -> anyhow::Result<()> {
    let out = ctx.out_dir()?;
    let cfg = &ctx.cfg;
    let mut manifest = RunManifest::new("eval", cfg);
    let log = read_log(ctx, &mut manifest)?;
    let series_path = ctx.artifact("nmse.csv");
    let summary_path = ctx.artifact("summary.json");
    manifest.artifacts = vec![series_path.display().to_string(), summary_path.display().to_string()];
    manifest.write(out)?;

    let (series, summary): (Vec<Option<f64>>, NmseSummary) = evaluate_log(&log, &cfg.eval)?;
    write_with(&series_path, |w| write_nmse_series(w, &series))?;
    let mut report = serde_json::json!({
        "steps": log.rows.len(),
        "decay": cfg.eval.decay,
        "burn_in": cfg.eval.burn_in,
        "tail_fraction": cfg.eval.tail_fraction,
        "summary": summary,
    });
    if !log.has_targets() {
        let r = returns(&log.cumulants(), cfg.eval.gamma, cfg.eval.tol);
        report["gamma"] = cfg.eval.gamma.into();
        report["return_horizon"] = r.horizon.into();
        report["truncation_bound"] = r.bound.into();
    }
    fs::write(&summary_path, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("writing {}", summary_path.display()))?;
    let show = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
    println!(
        "NMSE over {} defined steps: mean {}, final-{}% mean {}, last {}",
        summary.defined,
        show(summary.mean),
        (cfg.eval.tail_fraction * 100.0).round(),
        show(summary.tail_mean),
        show(summary.last)
    );
    Ok(())
}

pub fn plotdata(ctx: &Context) -> anyhow::Result<()> {
    let out = ctx.out_dir()?;
    let cfg = &ctx.cfg;
    let mut manifest = RunManifest::new("plotdata", cfg);
    let log = read_log(ctx, &mut manifest)?;
    let path = ctx.artifact("plot.csv");
    manifest.artifacts = vec![path.display().to_string()];
    manifest.write(out)?;

    let targets = log_targets(&log, cfg.eval.gamma, cfg.eval.tol);
    let target_name = if log.has_targets() { "target" } else { "return" };
    write_with(&path, |w| {
        writeln!(w, "step,cumulant,prediction,{target_name}")?;
        for (r, t) in log.rows.iter().zip(&targets) {
            write!(w, "{},{},{},", r.step, r.cumulant, r.prediction)?;
            if let Some(t) = t {
                write!(w, "{t}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    println!("wrote {} aligned rows → {}", log.rows.len(), path.display());
    Ok(())
}


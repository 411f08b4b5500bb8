//! In-memory stages shared by the commands.

use std::path::Path;

use flowguide_core::metrics::{sequence_psnr, sequence_ssim, warping_error_metric};
use flowguide_core::{
    degrade_sequence, synth_sequence, warping_energy, Flows, GuidanceConfig, Latents, LatentSequence, MaskSet, Prng,
    SceneSpec, Schedule, Video,
};
use flowguide_core::io::TensorArchive;
use flowguide_models::autoencoder::{reconstruction_psnr, DOWNSAMPLE};
use flowguide_models::{
    condition_grid, estimated_latent_motion, motion_guided_sample, pretrain_autoencoder, resample_motion,
    train_denoiser, unguided_sample, Autoencoder, Denoiser, FlowSource, LatentExample,
};
use flowguide_models::train::denoiser_loss;
use flowguide_nn::ParamStore;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::dataset::{Sequence, Split};
use crate::error::{CliError, Result};

/// Stream labels keep every stage's randomness independent of the others.
pub mod streams {
    pub const SCENE: u64 = 1;
    pub const DEGRADE: u64 = 2;
    pub const AE_INIT: u64 = 3;
    pub const AE_TRAIN: u64 = 4;
    pub const DEN_INIT: u64 = 5;
    pub const DEN_TRAIN: u64 = 6;
    pub const DEN_EVAL: u64 = 7;
    pub const SAMPLE: u64 = 8;
    pub const DISC_INIT: u64 = 9;
    pub const FINETUNE: u64 = 10;
}

pub fn stream(cfg: &ExperimentConfig, label: u64) -> Prng {
    Prng::new(cfg.seed).split(label)
}

pub fn scene_spec(cfg: &ExperimentConfig, split: Split, index: usize) -> SceneSpec {
    let seed = stream(cfg, streams::SCENE).split(split.stream(index)).next_u64();
    SceneSpec::random(seed, &cfg.data.scene)
}

pub fn synthesize(cfg: &ExperimentConfig, split: Split, index: usize) -> Result<(Sequence, SceneSpec)> {
    let spec = scene_spec(cfg, split, index);
    let s = synth_sequence::<f32>(&spec)?;
    let mut rng = stream(cfg, streams::DEGRADE).split(split.stream(index));
    let lr = degrade_sequence(&s.video, &cfg.data.degradation, &mut rng)?;
    let seq = Sequence {
        id: split.id(index),
        split,
        index,
        hr: s.video,
        lr,
        flows: s.flows,
        masks: s.masks,
    };
    Ok((seq, spec))
}

pub fn save_store(path: &Path, store: &ParamStore) -> Result<()> {
    store.to_archive().save(path)?;
    Ok(())
}

fn load_archive(path: &Path, producer: &'static str) -> Result<TensorArchive> {
    if !path.is_file() {
        return Err(CliError::MissingArtifact {
            path: path.to_path_buf(),
            producer,
        });
    }
    Ok(TensorArchive::load(path)?)
}

pub fn load_autoencoder(cfg: &ExperimentConfig, path: &Path, producer: &'static str) -> Result<Autoencoder> {
    let archive = load_archive(path, producer)?;
    let mut ae = Autoencoder::new(cfg.autoencoder.clone(), &mut Prng::new(0));
    ae.store.load_archive(&archive)?;
    Ok(ae)
}

pub fn load_denoiser(cfg: &ExperimentConfig, path: &Path) -> Result<Denoiser> {
    let archive = load_archive(path, "train-denoiser")?;
    let mut den = Denoiser::new(cfg.denoiser.clone(), &mut Prng::new(0));
    den.store.load_archive(&archive)?;
    Ok(den)
}

pub fn save_latents(path: &Path, z: &Latents) -> Result<()> {
    let mut a = TensorArchive::new();
    a.insert("latents", z.data().clone().into_dyn());
    a.save(path)?;
    Ok(())
}

pub fn load_latents(path: &Path) -> Result<Latents> {
    let a = load_archive(path, "sample")?;
    let t = a
        .get("latents")
        .ok_or_else(|| CliError::Config(format!("{}: no `latents` tensor", path.display())))?;
    let z = t
        .clone()
        .into_dimensionality()
        .map_err(|_| CliError::Config(format!("{}: latents are not rank 4", path.display())))?;
    Ok(LatentSequence::new(z)?)
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub autoencoder_heldout_psnr: f64,
    pub latent_scale: f64,
    pub denoiser_heldout_loss_init: f64,
    pub denoiser_heldout_loss_final: f64,
}

pub struct TrainedModels {
    pub autoencoder: Autoencoder,
    pub denoiser: Denoiser,
    pub ae_losses: Vec<(usize, f64)>,
    pub den_losses: Vec<(usize, f64)>,
    pub summary: TrainSummary,
}

fn latent_examples(ae: &Autoencoder, den: &Denoiser, seqs: &[Sequence], workers: usize) -> Result<Vec<LatentExample>> {
    crate::parallel::par_map(workers, seqs, |s| {
        let (z, _) = ae.encode(&s.hr)?;
        Ok(LatentExample {
            latents: den.normalize(&z),
            cond: condition_grid(&s.lr, s.hr.height(), s.hr.width())?,
        })
    })
}

fn heldout_denoiser_loss(den: &Denoiser, data: &[LatentExample], sched: &Schedule, cfg: &ExperimentConfig) -> Result<f64> {
    // several draws per sequence on a fixed stream so init and final share noise
    let mut rng = stream(cfg, streams::DEN_EVAL);
    let mut total = 0.0;
    let reps = 8;
    for _ in 0..reps {
        total += denoiser_loss(den, data, sched, &mut rng)?;
    }
    Ok(total / reps as f64)
}

/// Autoencoder pretraining, latent normalisation and denoiser training.
pub fn train_models(
    cfg: &ExperimentConfig,
    train: &[Sequence],
    heldout: &[Sequence],
    log: &mut dyn FnMut(&str),
) -> Result<TrainedModels> {
    let sched = cfg.schedule.build()?;
    let mut ae = Autoencoder::new(cfg.autoencoder.clone(), &mut stream(cfg, streams::AE_INIT));
    let hr_train: Vec<Video> = train.iter().map(|s| s.hr.clone()).collect();
    let hr_held: Vec<Video> = heldout.iter().map(|s| s.hr.clone()).collect();
    log(&format!("pretraining autoencoder ({} parameters)", ae.parameter_count()));
    let report = pretrain_autoencoder(&mut ae, &hr_train, &[], &cfg.pretrain, &mut stream(cfg, streams::AE_TRAIN))?;
    let psnr = if hr_held.is_empty() { f64::NAN } else { reconstruction_psnr(&ae, &hr_held)? };
    log(&format!("autoencoder held-out PSNR {psnr:.2} dB"));

    let mut den = Denoiser::new(cfg.denoiser.clone(), &mut stream(cfg, streams::DEN_INIT));
    let raw: Vec<Latents> = crate::parallel::par_map(cfg.workers, train, |s| Ok(ae.encode(&s.hr)?.0))?;
    let (mut sum, mut sq, mut count) = (0.0f64, 0.0f64, 0usize);
    for z in &raw {
        for &v in z.data() {
            sum += v as f64;
            sq += (v as f64).powi(2);
            count += 1;
        }
    }
    let mean = sum / count as f64;
    let std = (sq / count as f64 - mean * mean).max(1e-12).sqrt();
    den.set_latent_scale((1.0 / std) as f32);
    den.set_skip_schedule(&sched)?;
    log(&format!("latent std {std:.4}"));

    let data = latent_examples(&ae, &den, train, cfg.workers)?;
    let held = latent_examples(&ae, &den, heldout, cfg.workers)?;
    let init_loss = if held.is_empty() { f64::NAN } else { heldout_denoiser_loss(&den, &held, &sched, cfg)? };
    log(&format!("training denoiser ({} parameters)", den.parameter_count()));
    let tlog = train_denoiser(&mut den, &data, &sched, &cfg.denoiser_training, &mut stream(cfg, streams::DEN_TRAIN))?;
    let final_loss = if held.is_empty() { f64::NAN } else { heldout_denoiser_loss(&den, &held, &sched, cfg)? };
    log(&format!("denoiser held-out loss {init_loss:.4} -> {final_loss:.4}"));
    Ok(TrainedModels {
        autoencoder: ae,
        denoiser: den,
        ae_losses: report.losses,
        den_losses: tlog.losses,
        summary: TrainSummary {
            autoencoder_heldout_psnr: psnr,
            latent_scale: 1.0 / std,
            denoiser_heldout_loss_init: init_loss,
            denoiser_heldout_loss_final: final_loss,
        },
    })
}

/// Flows and masks on the latent grid, from the solver or the generator.
pub fn latent_motion(cfg: &ExperimentConfig, seq: &Sequence) -> Result<(Flows, MaskSet)> {
    let (lh, lw) = (seq.hr.height() / DOWNSAMPLE, seq.hr.width() / DOWNSAMPLE);
    Ok(match cfg.motion.source {
        FlowSource::Estimated => estimated_latent_motion(&seq.lr, lh, lw, &cfg.motion)?,
        FlowSource::GroundTruth => resample_motion(&seq.flows, &seq.masks, lh, lw)?,
    })
}

/// Unguided and guided latents (normalised units) from one shared noise
/// stream, with their warping energies under the latent motion.
pub struct SamplePair {
    pub unguided: Latents,
    pub guided: Option<Latents>,
    pub unguided_energy: f64,
    pub guided_energy: f64,
}

pub fn sample_sequence(
    cfg: &ExperimentConfig,
    den: &Denoiser,
    seq: &Sequence,
    guidance: Option<&GuidanceConfig>,
) -> Result<SamplePair> {
    let sched = cfg.schedule.build()?;
    let steps = cfg.schedule.sampling_steps;
    let cond = condition_grid(&seq.lr, seq.hr.height(), seq.hr.width())?;
    let (flows, masks) = latent_motion(cfg, seq)?;
    let rng = stream(cfg, streams::SAMPLE).split(seq.stream());
    let unguided = unguided_sample(den, &cond, &sched, steps, &mut rng.clone())?;
    let eps = cfg.guidance.charbonnier_eps as f32;
    let energy_masks = if cfg.guidance.use_mask { masks.clone() } else { MaskSet::ones(seq.hr.frame_count(), flows.height(), flows.width()) };
    let unguided_energy = warping_energy(&unguided, &flows, &energy_masks, eps)? as f64;
    let (guided, guided_energy) = match guidance {
        Some(g) => {
            let z = motion_guided_sample(den, &cond, &flows, &masks, &sched, g, steps, &mut rng.clone())?;
            let e = warping_energy(&z, &flows, &energy_masks, eps)? as f64;
            (Some(z), e)
        }
        None => (None, f64::NAN),
    };
    Ok(SamplePair {
        unguided,
        guided,
        unguided_energy,
        guided_energy,
    })
}

/// Frames from latents in decoder units, frame-wise or with the temporal
/// decoder and encoder features of the degraded input.
pub fn decode(ae: &Autoencoder, seq: &Sequence, z: &Latents, temporal: bool, cfw_weight: f64) -> Result<Video> {
    if temporal {
        let feats = ae.encode_degraded(&seq.lr, seq.hr.height(), seq.hr.width())?;
        Ok(ae.decode_sequence(z, &feats, cfw_weight)?)
    } else {
        Ok(ae.decode_spatial(z)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct SequenceMetrics {
    pub sequence_id: String,
    pub frame_count: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub we: f64,
}

/// PSNR and SSIM against the clean frames, warping error under the exact
/// backward flows.
pub fn sequence_metrics(pred: &Video, seq: &Sequence) -> Result<SequenceMetrics> {
    Ok(SequenceMetrics {
        sequence_id: seq.id.clone(),
        frame_count: pred.frame_count(),
        psnr: sequence_psnr(pred, &seq.hr)?,
        ssim: sequence_ssim(pred, &seq.hr)?,
        we: warping_error_metric(pred, &seq.flows.backward)?,
    })
}

/// Column means with `sequence_id = "mean"`.
pub fn mean_metrics(rows: &[SequenceMetrics]) -> SequenceMetrics {
    let n = rows.len().max(1) as f64;
    SequenceMetrics {
        sequence_id: "mean".into(),
        frame_count: rows.iter().map(|r| r.frame_count).sum::<usize>() / rows.len().max(1),
        psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        we: rows.iter().map(|r| r.we).sum::<f64>() / n,
    }
}

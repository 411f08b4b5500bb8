//! One function per CLI verb.

use std::path::{Path, PathBuf};

use flowguide_core::gradcheck::run_gradcheck;
use flowguide_core::io::write_manifest;
use flowguide_core::{warping_energy_grad, FlowSet, LatentSequence, MaskSet, Prng};
use flowguide_models::{finetune_decoder, Autoencoder, Denoiser, Discriminator, FinetuneExample};
use ndarray::{Array3, Array4};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::dataset::{self, count_frames, load_split, read_sequence, write_frames, write_sequence, Sequence, Split, MANIFEST};
use crate::error::{CliError, Result};
use crate::output::{write_csv, RunDir};
use crate::parallel::par_map;
use crate::pipeline::{
    decode, load_autoencoder, load_denoiser, load_latents, mean_metrics, sample_sequence, save_latents, save_store,
    sequence_metrics, stream, streams, synthesize, train_models, SequenceMetrics,
};

pub const AUTOENCODER_FILE: &str = "autoencoder.fgt";
pub const DENOISER_FILE: &str = "denoiser.fgt";
pub const DISCRIMINATOR_FILE: &str = "discriminator.fgt";
pub const LATENTS_FILE: &str = "latents.fgt";
pub const RESULTS_DIR: &str = "results";
pub const FRAMES_DIR: &str = "frames";
pub const UNGUIDED: &str = "unguided";
pub const GUIDED: &str = "guided";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitChoice {
    Train,
    Heldout,
    All,
}

impl SplitChoice {
    fn splits(self) -> Vec<Split> {
        match self {
            SplitChoice::Train => vec![Split::Train],
            SplitChoice::Heldout => vec![Split::Heldout],
            SplitChoice::All => vec![Split::Train, Split::Heldout],
        }
    }
}

fn load_splits(cfg: &ExperimentConfig, choice: SplitChoice) -> Result<Vec<Sequence>> {
    let root = cfg.dir(&cfg.paths.dataset);
    let mut out = Vec::new();
    for s in choice.splits() {
        out.extend(load_split(&root, s, cfg.workers)?);
    }
    Ok(out)
}

fn entry(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

/// Writes every sequence, then the dataset manifest that marks completion.
pub fn synth(cfg: &ExperimentConfig, resume: bool) -> Result<()> {
    let root = cfg.dir(&cfg.paths.dataset);
    let complete = root.join(MANIFEST).is_file();
    let started = dataset::sequence_dirs(&root).iter().any(|d| d.join(MANIFEST).is_file() || d.join("hr").is_dir());
    if started && !complete && !resume {
        return Err(CliError::Usage(format!(
            "partial dataset at {}; pass --resume to continue it or remove the directory",
            root.display()
        )));
    }
    let mut run = RunDir::create(root.clone(), cfg, "synth")?;
    let d = &cfg.data;
    let jobs: Vec<(Split, usize)> = (0..d.train_sequences)
        .map(|i| (Split::Train, i))
        .chain((0..d.heldout_sequences).map(|i| (Split::Heldout, i)))
        .collect();
    let written = par_map(cfg.workers, &jobs, |&(split, i)| {
        if resume && root.join(split.id(i)).join(MANIFEST).is_file() {
            return Ok(false);
        }
        let (seq, spec) = synthesize(cfg, split, i)?;
        let mut m = vec![entry("id", &seq.id), entry("split", split.as_str()), entry("index", i)];
        m.extend(spec.manifest_lines());
        let g = &d.degradation;
        m.extend([
            entry("degradation.blur_sigma", g.blur_sigma),
            entry("degradation.scale", g.scale),
            entry("degradation.noise_sigma", g.noise_sigma),
            entry("degradation.quant_levels", g.quant_levels),
        ]);
        write_sequence(&root, &seq, &m)?;
        Ok(true)
    })?;
    let fresh = written.iter().filter(|w| **w).count();
    run.log(&format!("wrote {fresh} sequences, kept {}", jobs.len() - fresh));
    let s = &d.scene;
    let mut m = vec![
        entry("train_sequences", d.train_sequences),
        entry("heldout_sequences", d.heldout_sequences),
        entry("frames", s.frames),
        entry("height", s.height),
        entry("width", s.width),
        entry("lr_height", s.height / d.degradation.scale),
        entry("lr_width", s.width / d.degradation.scale),
    ];
    m.extend(jobs.iter().map(|&(split, i)| entry(split.as_str(), split.id(i))));
    write_manifest(&root.join(MANIFEST), &m)?;
    run.log("done");
    Ok(())
}

#[derive(Serialize)]
struct LossRow {
    iteration: usize,
    loss: f64,
}

fn loss_rows(losses: &[(usize, f64)]) -> Vec<LossRow> {
    losses.iter().map(|&(iteration, loss)| LossRow { iteration, loss }).collect()
}

pub fn train_denoiser(cfg: &ExperimentConfig) -> Result<()> {
    let root = cfg.dir(&cfg.paths.dataset);
    let train = load_split(&root, Split::Train, cfg.workers)?;
    let heldout = load_split(&root, Split::Heldout, cfg.workers)?;
    let mut run = RunDir::create(cfg.dir(&cfg.paths.denoiser), cfg, "train-denoiser")?;
    let m = train_models(cfg, &train, &heldout, &mut |s| run.log(s))?;
    save_store(&run.file(AUTOENCODER_FILE), &m.autoencoder.store)?;
    save_store(&run.file(DENOISER_FILE), &m.denoiser.store)?;
    write_csv(&run.file("autoencoder_losses.csv"), &loss_rows(&m.ae_losses))?;
    write_csv(&run.file("denoiser_losses.csv"), &loss_rows(&m.den_losses))?;
    write_csv(&run.file("summary.csv"), &[m.summary])?;
    run.log("done");
    Ok(())
}

#[derive(Clone, Debug, Serialize, serde::Deserialize)]
pub struct EnergyRow {
    pub sequence_id: String,
    pub unguided_energy: f64,
    pub guided_energy: f64,
}

fn denoiser_path(cfg: &ExperimentConfig, file: &str) -> PathBuf {
    cfg.dir(&cfg.paths.denoiser).join(file)
}

fn decoder_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.dir(&cfg.paths.decoder).join(AUTOENCODER_FILE)
}

/// Latents and decoded frames per sequence under `samples/<mode>/<id>/`.
pub fn sample(cfg: &ExperimentConfig, split: SplitChoice) -> Result<()> {
    let den = load_denoiser(cfg, &denoiser_path(cfg, DENOISER_FILE))?;
    let ae = load_autoencoder(cfg, &denoiser_path(cfg, AUTOENCODER_FILE), "train-denoiser")?;
    let seqs = load_splits(cfg, split)?;
    let mut run = RunDir::create(cfg.dir(&cfg.paths.samples), cfg, "sample")?;
    run.log(&format!(
        "sampling {} sequences, guidance {}",
        seqs.len(),
        if cfg.mds_on { "on" } else { "off" }
    ));
    let root = run.path.clone();
    let guidance = cfg.mds_on.then_some(&cfg.guidance);
    let rows = par_map(cfg.workers, &seqs, |seq| {
        let pair = sample_sequence(cfg, &den, seq, guidance)?;
        let mut outputs = vec![(UNGUIDED, pair.unguided)];
        if let Some(g) = pair.guided {
            outputs.push((GUIDED, g));
        }
        for (mode, z) in outputs {
            let z = den.denormalize(&z);
            let dir = root.join(mode).join(&seq.id);
            dataset::create_dir(&dir)?;
            save_latents(&dir.join(LATENTS_FILE), &z)?;
            let frames = decode(&ae, seq, &z, false, cfg.finetune.cfw_weight)?;
            write_frames(&dir.join(FRAMES_DIR), &frames)?;
        }
        Ok(EnergyRow {
            sequence_id: seq.id.clone(),
            unguided_energy: pair.unguided_energy,
            guided_energy: pair.guided_energy,
        })
    })?;
    write_csv(&run.file("energy.csv"), &rows)?;
    write_manifest(
        &run.file(MANIFEST),
        &[
            entry("sequences", seqs.len()),
            entry("guided", cfg.mds_on),
        ],
    )?;
    run.log("done");
    Ok(())
}

fn sample_mode(cfg: &ExperimentConfig) -> &'static str {
    if cfg.mds_on {
        GUIDED
    } else {
        UNGUIDED
    }
}

pub fn finetune(cfg: &ExperimentConfig) -> Result<()> {
    let mut ae = load_autoencoder(cfg, &denoiser_path(cfg, AUTOENCODER_FILE), "train-denoiser")?;
    let train = load_splits(cfg, SplitChoice::Train)?;
    let samples = cfg.dir(&cfg.paths.samples).join(sample_mode(cfg));
    let data = train
        .into_iter()
        .map(|s| {
            Ok(FinetuneExample {
                latents: load_latents(&samples.join(&s.id).join(LATENTS_FILE))?,
                lr: s.lr,
                hr: s.hr,
                flows: s.flows,
                masks: s.masks,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut run = RunDir::create(cfg.dir(&cfg.paths.decoder), cfg, "finetune-decoder")?;
    run.log(&format!("fine-tuning on {} sequences of {} latents", data.len(), sample_mode(cfg)));
    let mut disc = Discriminator::new(&mut stream(cfg, streams::DISC_INIT));
    let log = finetune_decoder(&mut ae, &mut disc, &data, &cfg.loss, &cfg.finetune, &mut stream(cfg, streams::FINETUNE))?;
    save_store(&run.file(AUTOENCODER_FILE), &ae.store)?;
    save_store(&run.file(DISCRIMINATOR_FILE), &disc.store)?;
    write_csv(&run.file("losses.csv"), &log)?;
    if let (Some(a), Some(b)) = (log.first(), log.last()) {
        run.log(&format!("total loss {:.2} -> {:.2}", a.total, b.total));
    }
    if cfg.tsd_on {
        let heldout = load_splits(cfg, SplitChoice::Heldout)?;
        run.log(&format!("decoding {} held-out sequences with the temporal decoder", heldout.len()));
        let results = run.file(RESULTS_DIR);
        par_map(cfg.workers, &heldout, |seq| {
            let z = load_latents(&samples.join(&seq.id).join(LATENTS_FILE))?;
            let frames = decode(&ae, seq, &z, true, cfg.finetune.cfw_weight)?;
            write_frames(&results.join(&seq.id).join(FRAMES_DIR), &frames)
        })?;
    }
    run.log("done");
    Ok(())
}

fn parse_id(id: &str) -> Option<(Split, usize)> {
    let (prefix, n) = id.rsplit_once('_')?;
    let split = match prefix {
        "train" => Split::Train,
        "heldout" => Split::Heldout,
        _ => return None,
    };
    Some((split, n.parse().ok()?))
}

/// Metrics for every `<id>/frames` directory under `results`.
pub fn evaluate(cfg: &ExperimentConfig, results: Option<&Path>) -> Result<()> {
    let results = match results {
        Some(p) => p.to_path_buf(),
        None if cfg.tsd_on => cfg.dir(&cfg.paths.decoder).join(RESULTS_DIR),
        None => cfg.dir(&cfg.paths.samples).join(sample_mode(cfg)),
    };
    if !results.is_dir() {
        let producer = if results.ends_with(RESULTS_DIR) { "finetune-decoder" } else { "sample" };
        return Err(CliError::MissingArtifact { path: results, producer });
    }
    let data = cfg.dir(&cfg.paths.dataset);
    let dirs: Vec<(PathBuf, Split, usize)> = dataset::sequence_dirs(&results)
        .into_iter()
        .filter(|d| d.join(FRAMES_DIR).is_dir())
        .filter_map(|d| {
            let (s, i) = parse_id(d.file_name()?.to_str()?)?;
            Some((d, s, i))
        })
        .collect();
    if dirs.is_empty() {
        return Err(CliError::Usage(format!("no <sequence>/{FRAMES_DIR} directories under {}", results.display())));
    }
    let mut run = RunDir::create(cfg.dir(&cfg.paths.evaluation), cfg, "evaluate")?;
    run.log(&format!("evaluating {} sequences from {}", dirs.len(), results.display()));
    let mut rows = par_map(cfg.workers, &dirs, |(dir, split, i)| {
        let seq = read_sequence(&data, *split, *i)?;
        let frames = dir.join(FRAMES_DIR);
        let pred = dataset::read_frames(&frames, count_frames(&frames))?;
        sequence_metrics(&pred, &seq)
    })?;
    let mean = mean_metrics(&rows);
    run.log(&format!("mean psnr {:.3} ssim {:.4} we {:.4}", mean.psnr, mean.ssim, mean.we));
    rows.push(mean);
    write_csv(&run.file("metrics.csv"), &rows)?;
    run.log("done");
    Ok(())
}

#[derive(Clone, Debug, Serialize, serde::Deserialize)]
pub struct AblationCell {
    pub cell: String,
    pub mds_on: bool,
    pub tsd_on: bool,
    pub sequences: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub we: f64,
}

#[derive(Clone, Debug, Serialize, serde::Deserialize)]
pub struct AblationRow {
    pub cell: String,
    pub mds_on: bool,
    pub tsd_on: bool,
    pub sequence_id: String,
    pub frame_count: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub we: f64,
}

pub const CELLS: [(&str, bool, bool); 4] = [("neither", false, false), ("mds", true, false), ("tsd", false, true), ("both", true, true)];

/// The 2×2 grid of guided sampling and temporal decoding on held-out data.
pub fn ablate(cfg: &ExperimentConfig) -> Result<()> {
    let den = load_denoiser(cfg, &denoiser_path(cfg, DENOISER_FILE))?;
    let pretrained = load_autoencoder(cfg, &denoiser_path(cfg, AUTOENCODER_FILE), "train-denoiser")?;
    let finetuned = load_autoencoder(cfg, &decoder_path(cfg), "finetune-decoder")?;
    let heldout = load_splits(cfg, SplitChoice::Heldout)?;
    if heldout.is_empty() {
        return Err(CliError::Config("ablation needs held-out sequences".into()));
    }
    let mut run = RunDir::create(cfg.dir(&cfg.paths.ablation), cfg, "ablate")?;
    run.log(&format!("ablation over {} held-out sequences", heldout.len()));
    let per_seq = par_map(cfg.workers, &heldout, |seq| ablate_sequence(cfg, &den, &pretrained, &finetuned, seq))?;
    let mut rows = Vec::new();
    let mut energy = Vec::new();
    for (cells, e) in per_seq {
        energy.push(e);
        for (k, m) in cells.into_iter().enumerate() {
            let (cell, mds, tsd) = CELLS[k];
            rows.push(AblationRow {
                cell: cell.into(),
                mds_on: mds,
                tsd_on: tsd,
                sequence_id: m.sequence_id,
                frame_count: m.frame_count,
                psnr: m.psnr,
                ssim: m.ssim,
                we: m.we,
            });
        }
    }
    rows.sort_by(|a, b| (cell_rank(&a.cell), &a.sequence_id).cmp(&(cell_rank(&b.cell), &b.sequence_id)));
    let summary: Vec<AblationCell> = CELLS
        .iter()
        .map(|&(cell, mds, tsd)| {
            let r: Vec<&AblationRow> = rows.iter().filter(|r| r.cell == cell).collect();
            let n = r.len() as f64;
            AblationCell {
                cell: cell.into(),
                mds_on: mds,
                tsd_on: tsd,
                sequences: r.len(),
                psnr: r.iter().map(|x| x.psnr).sum::<f64>() / n,
                ssim: r.iter().map(|x| x.ssim).sum::<f64>() / n,
                we: r.iter().map(|x| x.we).sum::<f64>() / n,
            }
        })
        .collect();
    for c in &summary {
        run.log(&format!("{:8} we {:.4} psnr {:.3} ssim {:.4}", c.cell, c.we, c.psnr, c.ssim));
    }
    write_csv(&run.file("ablation.csv"), &summary)?;
    write_csv(&run.file("sequences.csv"), &rows)?;
    write_csv(&run.file("energy.csv"), &energy)?;
    run.log("done");
    Ok(())
}

fn cell_rank(cell: &str) -> usize {
    CELLS.iter().position(|c| c.0 == cell).unwrap_or(CELLS.len())
}

/// Metrics of the four cells (in [`CELLS`] order) and the latent energies.
pub fn ablate_sequence(
    cfg: &ExperimentConfig,
    den: &Denoiser,
    pretrained: &Autoencoder,
    finetuned: &Autoencoder,
    seq: &Sequence,
) -> Result<(Vec<SequenceMetrics>, EnergyRow)> {
    let pair = sample_sequence(cfg, den, seq, Some(&cfg.guidance))?;
    let guided = pair.guided.as_ref().expect("guided sample requested");
    let plain = den.denormalize(&pair.unguided);
    let guided = den.denormalize(guided);
    let w = cfg.finetune.cfw_weight;
    let videos = [
        decode(pretrained, seq, &plain, false, w)?,
        decode(pretrained, seq, &guided, false, w)?,
        decode(finetuned, seq, &plain, true, w)?,
        decode(finetuned, seq, &guided, true, w)?,
    ];
    let metrics = videos.iter().map(|v| sequence_metrics(v, seq)).collect::<Result<Vec<_>>>()?;
    Ok((
        metrics,
        EnergyRow {
            sequence_id: seq.id.clone(),
            unguided_energy: pair.unguided_energy,
            guided_energy: pair.guided_energy,
        },
    ))
}

#[derive(Clone, Debug, Serialize, serde::Deserialize)]
pub struct GradcheckRow {
    pub check: String,
    pub instances: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Gradient norm of the energy on a static sequence with zero motion.
pub fn static_gradient_norm(seed: u64) -> Result<f64> {
    let mut rng = Prng::new(seed);
    let frame = Array3::from_shape_fn((1, 8, 8), |_| rng.standard_normal());
    let stacked = Array4::from_shape_fn((3, 1, 8, 8), |(_, c, y, x)| frame[[c, y, x]]);
    let z = LatentSequence::new(stacked)?;
    let grad = warping_energy_grad(&z, &FlowSet::zeros(3, 8, 8), &MaskSet::ones(3, 8, 8), 1e-3)?;
    Ok(grad.iter().map(|g| g * g).sum::<f64>().sqrt())
}

pub fn gradcheck(cfg: &ExperimentConfig, corrupt: bool) -> Result<()> {
    let mut gc = cfg.gradcheck.clone();
    gc.corrupt_gradient |= corrupt;
    let mut run = RunDir::create(cfg.dir(&cfg.paths.gradcheck), cfg, "gradcheck")?;
    let report = run_gradcheck(&gc, cfg.seed)?;
    let norm = static_gradient_norm(cfg.seed)?;
    let rows = [
        GradcheckRow {
            check: "energy_gradient".into(),
            instances: report.instances,
            max_error: report.energy_max_error,
            tolerance: gc.energy_tolerance,
            passed: report.energy_passed,
        },
        GradcheckRow {
            check: "warp_vjp".into(),
            instances: report.instances,
            max_error: report.vjp_max_error,
            tolerance: gc.vjp_tolerance,
            passed: report.vjp_passed,
        },
        GradcheckRow {
            check: "static_gradient_norm".into(),
            instances: 1,
            max_error: norm,
            tolerance: 1e-12,
            passed: norm < 1e-12,
        },
    ];
    write_csv(&run.file("report.csv"), &rows)?;
    for r in &rows {
        run.log(&format!("{} max error {:.3e} (tolerance {:.0e}) {}", r.check, r.max_error, r.tolerance, if r.passed { "pass" } else { "FAIL" }));
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.check.as_str()).collect();
    if failed.is_empty() {
        run.log("done");
        Ok(())
    } else {
        Err(CliError::Check(format!("gradient check failed: {}", failed.join(", "))))
    }
}

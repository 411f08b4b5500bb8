//! On-disk dataset layout.
//!
//! ```text
//! <dataset>/manifest.txt              split lists; written last
//! <dataset>/<id>/manifest.txt         scene description; written last
//! <dataset>/<id>/hr/frame_000.ppm
//! <dataset>/<id>/lr/frame_000.ppm
//! <dataset>/<id>/flow/forward_000.flo   frame i -> i+1
//! <dataset>/<id>/flow/backward_000.flo  frame i+1 -> i
//! <dataset>/<id>/mask/forward_000.pgm
//! <dataset>/<id>/mask/backward_000.pgm
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use flowguide_core::io::{read_flo, read_manifest, read_mask_pgm, read_pnm, write_flo, write_manifest, write_mask_pgm, write_pnm};
use flowguide_core::{Flows, FlowSet, MaskSet, Video, VideoSequence};

use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Heldout,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Heldout => "heldout",
        }
    }

    pub fn id(self, index: usize) -> String {
        format!("{}_{index:03}", self.as_str())
    }

    /// Disjoint random-stream index per sequence.
    pub fn stream(self, index: usize) -> u64 {
        match self {
            Split::Train => index as u64,
            Split::Heldout => (1 << 32) | index as u64,
        }
    }
}

/// One sequence with its exact motion.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub id: String,
    pub split: Split,
    pub index: usize,
    pub hr: Video,
    pub lr: Video,
    pub flows: Flows,
    pub masks: MaskSet,
}

impl Sequence {
    pub fn stream(&self) -> u64 {
        self.split.stream(self.index)
    }
}

pub fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| CliError::io(p, e))
}

fn frame_name(i: usize) -> String {
    format!("frame_{i:03}.ppm")
}

pub fn write_frames(dir: &Path, video: &Video) -> Result<()> {
    create_dir(dir)?;
    for i in 0..video.frame_count() {
        write_pnm(&dir.join(frame_name(i)), video.frame(i))?;
    }
    Ok(())
}

pub fn read_frames(dir: &Path, frames: usize) -> Result<Video> {
    let list = (0..frames)
        .map(|i| read_pnm::<f32>(&dir.join(frame_name(i))))
        .collect::<flowguide_core::Result<Vec<_>>>()?;
    Ok(VideoSequence::from_frames(&list)?)
}

/// Number of consecutive `frame_NNN.ppm` files in `dir`.
pub fn count_frames(dir: &Path) -> usize {
    (0..).take_while(|&i| dir.join(frame_name(i)).is_file()).count()
}

pub fn write_sequence(root: &Path, seq: &Sequence, manifest: &[(String, String)]) -> Result<()> {
    let dir = root.join(&seq.id);
    write_frames(&dir.join("hr"), &seq.hr)?;
    write_frames(&dir.join("lr"), &seq.lr)?;
    create_dir(&dir.join("flow"))?;
    create_dir(&dir.join("mask"))?;
    for i in 0..seq.flows.forward.len() {
        write_flo(&dir.join(format!("flow/forward_{i:03}.flo")), &seq.flows.forward[i])?;
        write_flo(&dir.join(format!("flow/backward_{i:03}.flo")), &seq.flows.backward[i])?;
        write_mask_pgm(&dir.join(format!("mask/forward_{i:03}.pgm")), &seq.masks.forward[i])?;
        write_mask_pgm(&dir.join(format!("mask/backward_{i:03}.pgm")), &seq.masks.backward[i])?;
    }
    write_manifest(&dir.join(MANIFEST), manifest)?;
    Ok(())
}

fn lookup<'a>(entries: &'a [(String, String)], key: &str, path: &Path) -> Result<&'a str> {
    entries
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| CliError::Config(format!("{}: manifest lacks `{key}`", path.display())))
}

pub fn read_sequence(root: &Path, split: Split, index: usize) -> Result<Sequence> {
    let id = split.id(index);
    let dir = root.join(&id);
    let mpath = dir.join(MANIFEST);
    if !mpath.is_file() {
        return Err(CliError::MissingArtifact {
            path: mpath,
            producer: "synth",
        });
    }
    let manifest = read_manifest(&mpath)?;
    let frames: usize = lookup(&manifest, "frames", &mpath)?
        .parse()
        .map_err(|_| CliError::Config(format!("{}: bad frame count", mpath.display())))?;
    let hr = read_frames(&dir.join("hr"), frames)?;
    let lr = read_frames(&dir.join("lr"), frames)?;
    let mut fwd = Vec::new();
    let mut bwd = Vec::new();
    let mut mf = Vec::new();
    let mut mb = Vec::new();
    for i in 0..frames - 1 {
        fwd.push(read_flo(&dir.join(format!("flow/forward_{i:03}.flo")))?);
        bwd.push(read_flo(&dir.join(format!("flow/backward_{i:03}.flo")))?);
        mf.push(read_mask_pgm(&dir.join(format!("mask/forward_{i:03}.pgm")))?);
        mb.push(read_mask_pgm(&dir.join(format!("mask/backward_{i:03}.pgm")))?);
    }
    Ok(Sequence {
        id,
        split,
        index,
        hr,
        lr,
        flows: FlowSet::new(fwd, bwd)?,
        masks: MaskSet {
            forward: mf,
            backward: mb,
        },
    })
}

/// Counts listed in the dataset manifest.
pub fn split_sizes(root: &Path) -> Result<(usize, usize)> {
    let mpath = root.join(MANIFEST);
    if !mpath.is_file() {
        return Err(CliError::MissingArtifact {
            path: mpath,
            producer: "synth",
        });
    }
    let m = read_manifest(&mpath)?;
    let count = |k: &str| -> Result<usize> {
        lookup(&m, k, &mpath)?
            .parse()
            .map_err(|_| CliError::Config(format!("{}: bad `{k}`", mpath.display())))
    };
    Ok((count("train_sequences")?, count("heldout_sequences")?))
}

pub fn load_split(root: &Path, split: Split, workers: usize) -> Result<Vec<Sequence>> {
    let (train, heldout) = split_sizes(root)?;
    let n = match split {
        Split::Train => train,
        Split::Heldout => heldout,
    };
    let idx: Vec<usize> = (0..n).collect();
    crate::parallel::par_map(workers, &idx, |&i| read_sequence(root, split, i))
}

pub fn sequence_dirs(root: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(root)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use flowguide_core::{synth_sequence, SceneGenConfig, SceneSpec};

    #[test]
    fn sequence_round_trips_through_disk() {
        let cfg = SceneGenConfig {
            height: 16,
            width: 16,
            frames: 3,
            min_sprite_size: 4.0,
            max_sprite_size: 6.0,
            ..Default::default()
        };
        let s = synth_sequence::<f32>(&SceneSpec::random(1, &cfg)).unwrap();
        let seq = Sequence {
            id: Split::Train.id(0),
            split: Split::Train,
            index: 0,
            hr: s.video.clone(),
            lr: s.video.clone(),
            flows: s.flows.clone(),
            masks: s.masks.clone(),
        };
        let dir = tempfile::tempdir().unwrap();
        write_sequence(dir.path(), &seq, &[("frames".into(), "3".into())]).unwrap();
        let back = read_sequence(dir.path(), Split::Train, 0).unwrap();
        assert_eq!(back.flows, seq.flows);
        assert_eq!(back.masks, seq.masks);
        let err = back.hr.data().iter().zip(seq.hr.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(err <= 0.5 / 255.0 + 1e-6);
        assert!(matches!(
            read_sequence(dir.path(), Split::Heldout, 0),
            Err(CliError::MissingArtifact { .. })
        ));
    }
}

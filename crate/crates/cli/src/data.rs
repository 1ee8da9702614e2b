//! Manifest-driven datasets of paired skeleton and silhouette sequences.
//!
//! On disk a dataset is a directory holding `manifest.jsonl` plus the files
//! it references, with paths relative to that directory. Skeletons are JSON,
//! silhouettes are `.npy` arrays of shape `[frames, h, w]` (u8 masks or f32
//! values in `[0, 1]`).

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use gait_core::heat::{Keypoint, SkeletonFrame, SkeletonSequence, NUM_JOINTS};
use gait_core::{Shape, Tensor};
use npyz::WriterBuilder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub identity: String,
    pub sequence: String,
    pub skeleton: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub silhouette: Option<PathBuf>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Directory the entry paths are relative to.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

/// One loaded sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePair {
    pub skeletons: SkeletonSequence,
    /// `[1, h, w]` masks in `[0, 1]`.
    pub silhouettes: Option<Vec<Tensor<f32>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SkeletonFile {
    identity: String,
    sequence: String,
    frames: Vec<Vec<Vec<f64>>>,
}

impl DatasetManifest {
    /// Reads `dir/manifest.jsonl` (or a manifest file path) and checks the
    /// split and every referenced path.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let reader = BufReader::new(File::open(&file).at(&file)?);
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.at(&file)?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry =
                serde_json::from_str(&line).map_err(|e| Error::parse(&file, None, format!("line {}: {e}", i + 1)))?;
            entries.push(entry);
        }
        let m = Self { root, entries };
        m.validate(&file)?;
        for e in &m.entries {
            for p in std::iter::once(&e.skeleton).chain(e.silhouette.as_ref()) {
                let full = m.root.join(p);
                if !full.is_file() {
                    return Err(Error::parse(&file, None, format!("{} does not exist", full.display())));
                }
            }
        }
        Ok(m)
    }

    fn validate(&self, file: &Path) -> Result<()> {
        let mut splits: BTreeMap<&str, Split> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert((&e.identity, &e.sequence)) {
                return Err(Error::parse(file, None, format!("duplicate sequence {}/{}", e.identity, e.sequence)));
            }
            if let Some(prev) = splits.insert(&e.identity, e.split) {
                if prev != e.split {
                    return Err(Error::parse(file, None, format!("identity {} appears in both splits", e.identity)));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self) -> Result<PathBuf> {
        let file = self.root.join(MANIFEST_FILE);
        let mut w = BufWriter::new(File::create(&file).at(&file)?);
        for e in &self.entries {
            let line = serde_json::to_string(e).expect("manifest entry serializes");
            writeln!(w, "{line}").at(&file)?;
        }
        w.flush().at(&file)?;
        Ok(file)
    }

    /// Sorted distinct identities.
    pub fn identities(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.entries.iter().map(|e| &e.identity).collect();
        set.into_iter().cloned().collect()
    }

    pub fn identities_in(&self, split: Split) -> Vec<String> {
        let set: BTreeSet<&String> = self.entries.iter().filter(|e| e.split == split).map(|e| &e.identity).collect();
        set.into_iter().cloned().collect()
    }

    pub fn frame_count(&self) -> Result<usize> {
        let mut n = 0;
        for e in &self.entries {
            n += read_skeletons(&self.root.join(&e.skeleton))?.len();
        }
        Ok(n)
    }

    pub fn load_pair(&self, entry: &ManifestEntry) -> Result<SequencePair> {
        load_pair(&self.root, entry)
    }
}

/// Deterministic identity-level partition: identities are shuffled with
/// `seed` and the first `round(fraction * n)` become training identities.
pub fn split_identities(manifest: &DatasetManifest, train_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside [0, 1]")));
    }
    let mut ids = manifest.identities();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * ids.len() as f64).round() as usize;
    let train: BTreeSet<&String> = ids[..n_train].iter().collect();
    let entries = manifest
        .entries
        .iter()
        .map(|e| ManifestEntry { split: if train.contains(&e.identity) { Split::Train } else { Split::Test }, ..e.clone() })
        .collect();
    Ok(DatasetManifest { root: manifest.root.clone(), entries })
}

pub fn load_pair(root: &Path, entry: &ManifestEntry) -> Result<SequencePair> {
    let skel_path = root.join(&entry.skeleton);
    let skeletons = read_skeletons(&skel_path)?;
    let silhouettes = match &entry.silhouette {
        Some(p) => {
            let path = root.join(p);
            let sil = read_silhouettes(&path)?;
            if sil.len() != skeletons.len() {
                return Err(Error::Alignment {
                    file: path,
                    msg: format!("{} silhouettes for {} skeleton frames", sil.len(), skeletons.len()),
                });
            }
            Some(sil)
        }
        None => None,
    };
    Ok(SequencePair { skeletons, silhouettes })
}

/// Writes the files `entry` points at. Silhouettes are stored as u8 masks,
/// so they must be binary.
pub fn write_pair(root: &Path, entry: &ManifestEntry, pair: &SequencePair) -> Result<()> {
    write_skeletons(&root.join(&entry.skeleton), &entry.identity, &entry.sequence, &pair.skeletons)?;
    match (&entry.silhouette, &pair.silhouettes) {
        (Some(p), Some(sil)) => write_mask_npy(&root.join(p), sil),
        (None, None) => Ok(()),
        _ => Err(Error::Alignment { file: root.join(&entry.skeleton), msg: "silhouette presence differs from manifest entry".into() }),
    }
}

pub fn read_skeletons(path: &Path) -> Result<SkeletonSequence> {
    read_skeleton_file(path).map(|(_, _, frames)| frames)
}

/// Identity, sequence name and frames of a skeleton JSON file.
pub fn read_skeleton_file(path: &Path) -> Result<(String, String, SkeletonSequence)> {
    let text = std::fs::read_to_string(path).at(path)?;
    let file: SkeletonFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, None, e))?;
    if file.frames.is_empty() {
        return Err(Error::parse(path, None, "no frames"));
    }
    let mut out = Vec::with_capacity(file.frames.len());
    for (f, joints) in file.frames.iter().enumerate() {
        if joints.len() != NUM_JOINTS {
            return Err(Error::parse(path, Some(f), format!("expected {NUM_JOINTS} joints, found {}", joints.len())));
        }
        let mut kps = [Keypoint::default(); NUM_JOINTS];
        for (k, (kp, v)) in kps.iter_mut().zip(joints).enumerate() {
            if v.len() != 3 {
                return Err(Error::parse(path, Some(f), format!("joint {k} has {} values, expected [x, y, c]", v.len())));
            }
            *kp = Keypoint::new(v[0], v[1], v[2]);
        }
        out.push(SkeletonFrame::new(kps).map_err(|e| Error::parse(path, Some(f), e))?);
    }
    Ok((file.identity, file.sequence, out))
}

pub fn write_skeletons(path: &Path, identity: &str, sequence: &str, frames: &[SkeletonFrame]) -> Result<()> {
    let file = SkeletonFile {
        identity: identity.to_string(),
        sequence: sequence.to_string(),
        frames: frames.iter().map(|f| f.joints().iter().map(|j| vec![j.x, j.y, j.c]).collect()).collect(),
    };
    create_parent(path)?;
    std::fs::write(path, serde_json::to_vec(&file).expect("skeleton serializes")).at(path)
}

/// Reads a `[n, h, w]` u8 or f32 array as `n` single-channel tensors.
pub fn read_silhouettes(path: &Path) -> Result<Vec<Tensor<f32>>> {
    let bytes = std::fs::read(path).at(path)?;
    let npy = npyz::NpyFile::new(&bytes[..]).map_err(|e| Error::parse(path, None, e))?;
    let shape: Vec<usize> = npy.shape().iter().map(|&d| d as usize).collect();
    if shape.len() != 3 {
        return Err(Error::parse(path, None, format!("expected a [frames, h, w] array, got shape {shape:?}")));
    }
    let values: Vec<f32> = match npy.dtype() {
        npyz::DType::Plain(ts) if ts.to_string() == "|u1" => {
            npy.into_vec::<u8>().map_err(|e| Error::parse(path, None, e))?.into_iter().map(f32::from).collect()
        }
        npyz::DType::Plain(ts) if ts.to_string() == "<f4" => npy.into_vec::<f32>().map_err(|e| Error::parse(path, None, e))?,
        other => return Err(Error::parse(path, None, format!("unsupported dtype {}", other.descr()))),
    };
    let frame = Shape::new(1, shape[1], shape[2]);
    let mut out = Vec::with_capacity(shape[0]);
    for (f, chunk) in values.chunks_exact(frame.len().max(1)).enumerate() {
        if chunk.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::parse(path, Some(f), "silhouette values must lie in [0, 1]"));
        }
        out.push(Tensor::from_vec(frame, chunk.to_vec())?);
    }
    Ok(out)
}

fn check_frames(path: &Path, frames: &[Tensor<f32>]) -> Result<Shape> {
    let shape = frames.first().map(|t| t.shape).ok_or_else(|| Error::parse(path, None, "no frames to write"))?;
    if shape.c != 1 || frames.iter().any(|t| t.shape != shape) {
        return Err(Error::parse(path, None, "frames must share one [1, h, w] shape"));
    }
    Ok(shape)
}

/// Binary masks as a u8 `[n, h, w]` array.
pub fn write_mask_npy(path: &Path, frames: &[Tensor<f32>]) -> Result<()> {
    let s = check_frames(path, frames)?;
    if let Some(f) = frames.iter().position(|t| t.data.iter().any(|&v| v != 0.0 && v != 1.0)) {
        return Err(Error::parse(path, Some(f), "mask values must be 0 or 1"));
    }
    let data = frames.iter().flat_map(|t| t.data.iter().map(|&v| v as u8));
    write_npy(path, &[frames.len(), s.h, s.w], data)
}

/// Any f32 array, row-major with the given shape.
pub fn write_npy<T: npyz::AutoSerialize>(path: &Path, shape: &[usize], data: impl IntoIterator<Item = T>) -> Result<()> {
    create_parent(path)?;
    let dims: Vec<u64> = shape.iter().map(|&d| d as u64).collect();
    let file = BufWriter::new(File::create(path).at(path)?);
    let mut w = npyz::WriteOptions::new().default_dtype().shape(&dims).writer(file).begin_nd().at(path)?;
    w.extend(data).at(path)?;
    w.finish().at(path)
}

/// Grayscale PNG of a `[1, h, w]` map with values in `[0, 1]`.
pub fn write_png(path: &Path, map: &Tensor<f32>) -> Result<()> {
    create_parent(path)?;
    let px: Vec<u8> = map.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = image::GrayImage::from_raw(map.shape.w as u32, map.shape.h as u32, px)
        .ok_or_else(|| Error::parse(path, None, "image buffer size mismatch"))?;
    img.save(path).map_err(|e| Error::parse(path, None, e))
}

pub(crate) fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).at(dir),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gait_core::synth::{generate_identity, render_sequence};

    fn entry(id: &str, seq: &str, split: Split) -> ManifestEntry {
        ManifestEntry {
            identity: id.into(),
            sequence: seq.into(),
            skeleton: format!("skeletons/{id}_{seq}.json").into(),
            silhouette: Some(format!("silhouettes/{id}_{seq}.npy").into()),
            split,
        }
    }

    fn synthetic_pair(seed: u64, n: usize) -> SequencePair {
        let seq = render_sequence(&generate_identity(seed), n).unwrap();
        SequencePair { skeletons: seq.skeletons, silhouettes: Some(seq.silhouettes) }
    }

    #[test]
    fn pair_round_trips_byte_for_byte() {
        let dir = tempfile::tempdir().unwrap();
        let e = entry("a", "s0", Split::Train);
        let pair = synthetic_pair(1, 6);
        write_pair(dir.path(), &e, &pair).unwrap();
        let loaded = load_pair(dir.path(), &e).unwrap();
        assert_eq!(loaded, pair);
        let first = (std::fs::read(dir.path().join(&e.skeleton)).unwrap(), std::fs::read(dir.path().join(e.silhouette.as_ref().unwrap())).unwrap());
        write_pair(dir.path(), &e, &loaded).unwrap();
        let second = (std::fs::read(dir.path().join(&e.skeleton)).unwrap(), std::fs::read(dir.path().join(e.silhouette.as_ref().unwrap())).unwrap());
        assert_eq!(first, second);
    }

    #[test]
    fn short_frame_is_reported_with_its_index() {
        let dir = tempfile::tempdir().unwrap();
        let mut frames: Vec<Vec<Vec<f64>>> = vec![vec![vec![1.0, 2.0, 1.0]; 17]; 4];
        frames[2].pop();
        let path = dir.path().join("s.json");
        std::fs::write(&path, serde_json::to_vec(&SkeletonFile { identity: "a".into(), sequence: "b".into(), frames }).unwrap()).unwrap();
        match read_skeletons(&path) {
            Err(Error::Parse { frame: Some(2), .. }) => {}
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, b"{\"frames\": [").unwrap();
        assert!(matches!(read_skeletons(&path), Err(Error::Parse { frame: None, .. })));
    }

    #[test]
    fn frame_count_mismatch_is_an_alignment_error() {
        let dir = tempfile::tempdir().unwrap();
        let e = entry("a", "s0", Split::Train);
        let mut pair = synthetic_pair(2, 5);
        write_pair(dir.path(), &e, &pair).unwrap();
        pair.silhouettes.as_mut().unwrap().pop();
        write_mask_npy(&dir.path().join(e.silhouette.as_ref().unwrap()), pair.silhouettes.as_ref().unwrap()).unwrap();
        assert!(matches!(load_pair(dir.path(), &e), Err(Error::Alignment { .. })));
    }

    #[test]
    fn f32_silhouettes_load_too() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.npy");
        write_npy(&p, &[2, 2, 3], (0..12).map(|i| i as f32 / 11.0)).unwrap();
        let s = read_silhouettes(&p).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].at(0, 1, 2), 1.0);
    }

    fn manifest_of(ids: usize) -> DatasetManifest {
        let entries = (0..ids).flat_map(|i| (0..2).map(move |s| entry(&format!("id{i:02}"), &format!("s{s}"), Split::Train))).collect();
        DatasetManifest { root: PathBuf::new(), entries }
    }

    #[test]
    fn identity_split_counts_and_determinism() {
        let m = manifest_of(20);
        let a = split_identities(&m, 0.6, 4).unwrap();
        assert_eq!(a.identities_in(Split::Train).len(), 12);
        assert_eq!(a.identities_in(Split::Test).len(), 8);
        let train: BTreeSet<_> = a.identities_in(Split::Train).into_iter().collect();
        assert!(a.identities_in(Split::Test).iter().all(|i| !train.contains(i)));
        assert_eq!(a, split_identities(&m, 0.6, 4).unwrap());
        assert_ne!(a, split_identities(&m, 0.6, 5).unwrap());
        assert!(split_identities(&m, 1.0, 0).unwrap().identities_in(Split::Test).is_empty());
        assert!(a.validate(Path::new("m")).is_ok());
    }

    #[test]
    fn manifest_rejects_identities_in_both_splits_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest_of(2);
        m.root = dir.path().to_path_buf();
        for e in &m.entries {
            write_pair(dir.path(), e, &synthetic_pair(3, 2)).unwrap();
        }
        m.save().unwrap();
        assert_eq!(DatasetManifest::load(dir.path()).unwrap(), m);
        m.entries[1].split = Split::Test;
        m.save().unwrap();
        assert!(matches!(DatasetManifest::load(dir.path()), Err(Error::Parse { .. })));
        m.entries[1].split = Split::Train;
        m.entries[0].skeleton = "nope.json".into();
        m.save().unwrap();
        assert!(DatasetManifest::load(dir.path()).is_err());
    }
}

//! The workflow behind each subcommand, callable without the argument parser.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use gait_core::diffgait::{sample_silhouettes, train_step_diffgait, DiffGait, MultiLevelSilhouettes, TrainBatchDG};
use gait_core::heat::{make_heat_skeleton_on, Canvas, HeatSkeleton, SkeletonFrame};
use gait_core::optim::{milestone_lr, Adam, AdamConfig, Sgd, SgdConfig};
use gait_core::pgi::{stage_one_combine, FusionWeights};
use gait_core::recognition::{
    evaluate_retrieval, sample_zip_batch, train_step_zipgait, EmbeddingSet, RetrievalResult, SequenceInput, ZipGait,
};
use gait_core::schedule::NoiseSchedule;
use gait_core::synth::{generate_identity, render_sequence_with, sequence_style};
use gait_core::Tensor;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, PARAMS};
use crate::config::{EvalSection, HeatSection, Protocol, RunConfig};
use crate::data::{
    create_parent, read_skeleton_file, split_identities, write_npy, write_pair, write_png, DatasetManifest, ManifestEntry,
    SequencePair, Split,
};
use crate::error::{Error, IoContext, Result};

pub const DIFFGAIT_KIND: &str = "diffgait";
pub const ZIPGAIT_KIND: &str = "zipgait";
const OPTIMIZER: &str = "optimizer";
const FROZEN_DIFFGAIT: &str = "diffgait";

/// 64-bit seed from a tag and integers, via sha256.
pub fn derive_seed(tag: &str, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// RNG for one reverse-process run on one frame.
pub fn frame_rng(seed: u64, identity: &str, sequence: &str, frame: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(&format!("frame/{identity}/{sequence}"), &[seed, frame as u64]))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    std::fs::write(path, text).at(path)
}

/// Provenance sidecar written next to every run's outputs.
pub fn write_run_info(path: &Path, command: &str, config_hash: &str, seed: u64, details: serde_json::Value) -> Result<()> {
    write_json(
        path,
        &json!({ "command": command, "config_hash": config_hash, "seed": seed, "version": env!("CARGO_PKG_VERSION"), "details": details }),
    )
}

// ---------------------------------------------------------------- gen-data

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenDataOptions {
    pub identities: usize,
    pub seqs_per_id: usize,
    pub frames: usize,
    pub seed: u64,
    pub train_fraction: f64,
    /// Height and width of the rendered silhouettes.
    pub canvas: [usize; 2],
}

impl Default for GenDataOptions {
    fn default() -> Self {
        let c = Canvas::DEFAULT;
        Self { identities: 8, seqs_per_id: 8, frames: 30, seed: 0, train_fraction: 0.5, canvas: [c.h, c.w] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenSummary {
    pub identities: usize,
    pub sequences: usize,
    pub frames: usize,
    pub train_identities: usize,
    pub test_identities: usize,
}

pub fn gen_data(opts: &GenDataOptions, out: &Path) -> Result<GenSummary> {
    if opts.identities == 0 || opts.seqs_per_id == 0 || opts.frames == 0 {
        return Err(Error::Usage("--identities, --seqs-per-id and --frames must be positive".into()));
    }
    if !(0.0..=1.0).contains(&opts.train_fraction) {
        return Err(Error::Usage(format!("--train-fraction {} outside [0, 1]", opts.train_fraction)));
    }
    std::fs::create_dir_all(out).at(out)?;
    let mut entries = Vec::with_capacity(opts.identities * opts.seqs_per_id);
    for i in 0..opts.identities {
        let identity = format!("id{i:03}");
        let spec = generate_identity(derive_seed("identity", &[opts.seed, i as u64]));
        for s in 0..opts.seqs_per_id {
            let sequence = format!("seq{s:02}");
            let style = sequence_style(&spec, s as u64);
            let r = render_sequence_with(&spec, &style, opts.frames, Canvas { h: opts.canvas[0], w: opts.canvas[1] })?;
            let entry = ManifestEntry {
                identity: identity.clone(),
                sequence: sequence.clone(),
                skeleton: format!("skeletons/{identity}_{sequence}.json").into(),
                silhouette: Some(format!("silhouettes/{identity}_{sequence}.npy").into()),
                split: Split::Train,
            };
            write_png(&out.join(format!("previews/{identity}_{sequence}.png")), &r.silhouettes[0])?;
            write_pair(out, &entry, &SequencePair { skeletons: r.skeletons, silhouettes: Some(r.silhouettes) })?;
            entries.push(entry);
        }
    }
    let all = DatasetManifest { root: out.to_path_buf(), entries };
    let manifest = split_identities(&all, opts.train_fraction, opts.seed)?;
    manifest.save()?;
    let summary = GenSummary {
        identities: opts.identities,
        sequences: manifest.entries.len(),
        frames: manifest.entries.len() * opts.frames,
        train_identities: manifest.identities_in(Split::Train).len(),
        test_identities: manifest.identities_in(Split::Test).len(),
    };
    let options = serde_json::to_value(opts).expect("options serialize");
    let hash = hex::encode(Sha256::digest(options.to_string().as_bytes()));
    write_run_info(&out.join("run_info.json"), "gen-data", &hash, opts.seed, json!({ "options": options, "summary": summary }))?;
    Ok(summary)
}

// ---------------------------------------------------------------- protocol

/// Which sequences train the models and which form the gallery and probes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSplit {
    pub train: Vec<ManifestEntry>,
    pub gallery: Vec<ManifestEntry>,
    pub probe: Vec<ManifestEntry>,
}

/// Subject-independent: training identities train; each test identity's
/// first `gallery_seqs` sequences (by name) enrol and the rest probe.
/// Subject-dependent: every identity's last `probe_seqs` sequences probe and
/// the others both train and enrol.
pub fn protocol_split(manifest: &DatasetManifest, eval: &EvalSection) -> Result<ProtocolSplit> {
    let mut by_id: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in &manifest.entries {
        by_id.entry(&e.identity).or_default().push(e);
    }
    for seqs in by_id.values_mut() {
        seqs.sort_by(|a, b| a.sequence.cmp(&b.sequence));
    }
    let mut out = ProtocolSplit { train: vec![], gallery: vec![], probe: vec![] };
    let no_data = |m: String| Error::parse(&manifest.root, None, m);
    match eval.protocol {
        Protocol::SubjectIndependent => {
            for seqs in by_id.values() {
                if seqs[0].split == Split::Train {
                    out.train.extend(seqs.iter().map(|e| (*e).clone()));
                } else {
                    let g = eval.gallery_seqs.min(seqs.len());
                    out.gallery.extend(seqs[..g].iter().map(|e| (*e).clone()));
                    out.probe.extend(seqs[g..].iter().map(|e| (*e).clone()));
                }
            }
        }
        Protocol::SubjectDependent => {
            for (id, seqs) in &by_id {
                if seqs.len() <= eval.probe_seqs {
                    return Err(no_data(format!("identity {id} has {} sequences, needs more than {}", seqs.len(), eval.probe_seqs)));
                }
                let cut = seqs.len() - eval.probe_seqs;
                out.train.extend(seqs[..cut].iter().map(|e| (*e).clone()));
                out.probe.extend(seqs[cut..].iter().map(|e| (*e).clone()));
            }
            out.gallery = out.train.clone();
        }
    }
    Ok(out)
}

fn heat_skeletons(frames: &[SkeletonFrame], heat: &HeatSection) -> Result<Vec<HeatSkeleton>> {
    let limbs = heat.limb_table()?;
    frames.iter().map(|f| Ok(make_heat_skeleton_on(f, &limbs, heat.sigma, heat.canvas())?)).collect()
}

fn truncate<T>(mut v: Vec<T>, max: usize) -> Vec<T> {
    if max > 0 {
        v.truncate(max);
    }
    v
}

// ---------------------------------------------------------------- logs

/// `step,loss,wall_ms` rows, flushed as they are written.
pub struct LossLog {
    w: BufWriter<File>,
    path: PathBuf,
    start: Instant,
}

impl LossLog {
    pub fn create(path: &Path) -> Result<Self> {
        create_parent(path)?;
        let mut w = BufWriter::new(File::create(path).at(path)?);
        writeln!(w, "step,loss,wall_ms").at(path)?;
        Ok(Self { w, path: path.to_path_buf(), start: Instant::now() })
    }

    pub fn row(&mut self, step: u64, loss: f64) -> Result<()> {
        writeln!(self.w, "{step},{loss:.9e},{}", self.start.elapsed().as_millis()).at(&self.path)?;
        self.w.flush().at(&self.path)
    }
}

/// Parsed rows of a loss log.
pub fn read_loss_log(path: &Path) -> Result<Vec<(u64, f64)>> {
    let text = std::fs::read_to_string(path).at(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let mut it = line.split(',');
        let parse_err = || Error::parse(path, None, format!("line {}", i + 1));
        let step = it.next().and_then(|v| v.parse().ok()).ok_or_else(parse_err)?;
        let loss = it.next().and_then(|v| v.parse().ok()).ok_or_else(parse_err)?;
        rows.push((step, loss));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub first_step: u64,
    pub last_step: u64,
    pub final_loss: f64,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

// ---------------------------------------------------------------- diffgait

/// DiffGait weights, optimizer and the config they were trained with.
pub struct DiffGaitState {
    pub model: DiffGait,
    pub adam: Adam,
    pub config: RunConfig,
}

impl DiffGaitState {
    pub fn fresh(config: &RunConfig) -> Result<Self> {
        let model = DiffGait::new(config.diffgait_config(), config.seed)?;
        let adam = Adam::new(AdamConfig { lr: config.diffgait.lr, ..AdamConfig::default() }, model.count_params());
        Ok(Self { model, adam, config: config.clone() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        ck.expect_kind(DIFFGAIT_KIND, path)?;
        let mut s = Self::fresh(&ck.config)?;
        s.model.params = ck.take_layout(s.model.net.layout(), PARAMS, path)?;
        let n = s.model.params.len();
        s.adam.m = ck.take_flat("adam.m", OPTIMIZER, n, path)?;
        s.adam.v = ck.take_flat("adam.v", OPTIMIZER, n, path)?;
        s.adam.step = ck.step;
        Ok(s)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(DIFFGAIT_KIND, self.config.clone(), self.config.seed, self.adam.step);
        ck.push_layout(self.model.net.layout(), &self.model.params, PARAMS);
        ck.push_flat("adam.m", OPTIMIZER, &self.adam.m);
        ck.push_flat("adam.v", OPTIMIZER, &self.adam.v);
        ck
    }
}

/// Aligned (heat-skeleton, silhouette) frames of one sequence.
type SequenceFrames = Vec<(HeatSkeleton, Tensor<f32>)>;

/// Training frames grouped by identity, then sequence.
struct FramePool {
    ids: Vec<Vec<SequenceFrames>>,
}

impl FramePool {
    fn build(manifest: &DatasetManifest, entries: &[ManifestEntry], cfg: &RunConfig) -> Result<Self> {
        let mut by_id: BTreeMap<&str, Vec<SequenceFrames>> = BTreeMap::new();
        for e in entries {
            let pair = manifest.load_pair(e)?;
            let Some(sil) = pair.silhouettes else { continue };
            let heat = heat_skeletons(&pair.skeletons, &cfg.heat)?;
            let frames = truncate(heat.into_iter().zip(sil).collect(), cfg.recognition.max_frames);
            by_id.entry(&e.identity).or_default().push(frames);
        }
        if by_id.is_empty() {
            return Err(Error::parse(&manifest.root, None, "no training sequences with silhouettes"));
        }
        Ok(Self { ids: by_id.into_values().collect() })
    }

    /// `ids` identities (distinct when possible) x `seqs` sequences x one frame.
    fn batch(&self, ids: usize, seqs: usize, rng: &mut ChaCha8Rng) -> TrainBatchDG {
        let chosen: Vec<usize> = if ids <= self.ids.len() {
            index::sample(rng, self.ids.len(), ids).into_vec()
        } else {
            (0..ids).map(|_| rng.gen_range(0..self.ids.len())).collect()
        };
        let mut batch = TrainBatchDG::default();
        for i in chosen {
            let pool = &self.ids[i];
            for _ in 0..seqs {
                let s = &pool[rng.gen_range(0..pool.len())];
                let (heat, sil) = &s[rng.gen_range(0..s.len())];
                batch.push(heat, sil);
            }
        }
        batch
    }
}

/// Runs `steps` optimizer steps on the protocol's training sequences,
/// continuing from `state`'s step counter. Step `k` draws its batch and noise
/// from a seed derived from `(seed, k)`, so a resumed run matches an
/// uninterrupted one.
pub fn train_diffgait(state: &mut DiffGaitState, data: &Path, out: &Path, steps: u64) -> Result<TrainReport> {
    let cfg = state.config.clone();
    let manifest = DatasetManifest::load(data)?;
    let split = protocol_split(&manifest, &cfg.eval)?;
    let pool = FramePool::build(&manifest, &split.train, &cfg)?;
    let sched = cfg.schedule()?;
    let log_path = out.join("diffgait_loss.csv");
    let ckpt_path = out.join("diffgait.ckpt");
    let mut log = LossLog::create(&log_path)?;
    let first_step = state.adam.step + 1;
    let mut final_loss = f64::NAN;
    for _ in 0..steps {
        let step = state.adam.step + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("diffgait-step", &[cfg.seed, step]));
        let batch = pool.batch(cfg.diffgait.batch_ids, cfg.diffgait.batch_seqs, &mut rng);
        state.adam.config.lr = milestone_lr(cfg.diffgait.lr, step - 1, &cfg.diffgait.milestones, cfg.diffgait.gamma);
        final_loss = train_step_diffgait(&mut state.model, &batch, &sched, &mut state.adam, &mut rng)?;
        log.row(step, final_loss)?;
    }
    state.checkpoint().save(&ckpt_path)?;
    write_run_info(
        &out.join("run_info.json"),
        "train-diffgait",
        &cfg.hash(),
        cfg.seed,
        json!({ "first_step": first_step, "last_step": state.adam.step, "final_loss": final_loss, "params": state.model.count_params() }),
    )?;
    Ok(TrainReport { first_step, last_step: state.adam.step, final_loss, checkpoint: ckpt_path, log: log_path })
}

// ---------------------------------------------------------------- sampling

/// Stage-one weights for `steps` predictions: the configured ones when the
/// counts agree, otherwise all weight on the final prediction.
pub fn stage_one_weights(cfg: &RunConfig, steps: usize) -> Result<FusionWeights> {
    if cfg.pgi.weights.len() == steps {
        return cfg.fusion_weights();
    }
    let mut w = vec![0.0; steps];
    if let Some(last) = w.last_mut() {
        *last = 1.0;
    }
    FusionWeights::new(w).map_err(|e| Error::Usage(e.to_string()))
}

/// Frozen DiffGait plus everything needed to turn skeletons into composites.
pub struct Composer<'a> {
    pub model: &'a DiffGait,
    pub sched: NoiseSchedule,
    pub heat: HeatSection,
    pub steps: usize,
    pub eta: f64,
    pub weights: FusionWeights,
    pub seed: u64,
}

impl Composer<'_> {
    /// Per-frame multi-level predictions and stage-one composites.
    pub fn run(&self, identity: &str, sequence: &str, heat: &[HeatSkeleton]) -> Result<(Vec<MultiLevelSilhouettes>, Vec<Tensor<f32>>)> {
        let mut levels = Vec::with_capacity(heat.len());
        let mut composites = Vec::with_capacity(heat.len());
        for (f, h) in heat.iter().enumerate() {
            let mut rng = frame_rng(self.seed, identity, sequence, f);
            let ml = sample_silhouettes(self.model, h, &self.sched, self.steps, self.eta, &mut rng)?;
            composites.push(stage_one_combine(&ml, &self.weights)?);
            levels.push(ml);
        }
        Ok((levels, composites))
    }

    /// Recognizer input for one manifest entry.
    pub fn sequence_input(&self, manifest: &DatasetManifest, entry: &ManifestEntry, max_frames: usize) -> Result<SequenceInput<f32>> {
        let pair = manifest.load_pair(entry)?;
        let heat = truncate(heat_skeletons(&pair.skeletons, &self.heat)?, max_frames);
        let (_, sil) = self.run(&entry.identity, &entry.sequence, &heat)?;
        Ok(SequenceInput { sil, heat: heat.iter().map(|h| h.as_tensor()).collect() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub frames: usize,
    pub levels: usize,
    pub levels_path: PathBuf,
    pub composite_path: PathBuf,
}

/// Reverse process on every frame of a skeleton file. Writes
/// `levels.npy` `[frames, M, h, w]`, `composite.npy` `[frames, h, w]` and
/// PNG renderings under `png/`.
pub fn sample(ckpt: &Path, skeletons: &Path, steps: usize, eta: f64, out: &Path) -> Result<SampleOutput> {
    if steps == 0 {
        return Err(Error::Usage("--steps must be positive".into()));
    }
    let state = DiffGaitState::load(ckpt)?;
    let cfg = &state.config;
    let (identity, sequence, frames) = read_skeleton_file(skeletons)?;
    let heat = heat_skeletons(&frames, &cfg.heat)?;
    let composer = Composer {
        model: &state.model,
        sched: cfg.schedule()?,
        heat: cfg.heat.clone(),
        steps,
        eta,
        weights: stage_one_weights(cfg, steps)?,
        seed: cfg.seed,
    };
    let (levels, composites) = composer.run(&identity, &sequence, &heat)?;
    let shape = composites[0].shape;
    let levels_path = out.join("levels.npy");
    let composite_path = out.join("composite.npy");
    write_npy(
        &levels_path,
        &[frames.len(), steps, shape.h, shape.w],
        levels.iter().flat_map(|ml| ml.preds.iter().flat_map(|p| p.data.iter().copied())),
    )?;
    write_npy(&composite_path, &[frames.len(), shape.h, shape.w], composites.iter().flat_map(|c| c.data.iter().copied()))?;
    for (f, (ml, c)) in levels.iter().zip(&composites).enumerate() {
        for (k, p) in ml.preds.iter().enumerate() {
            write_png(&out.join(format!("png/frame{f:03}_p{}.png", k + 1)), p)?;
        }
        write_png(&out.join(format!("png/frame{f:03}_composite.png")), c)?;
    }
    write_run_info(
        &out.join("run_info.json"),
        "sample",
        &cfg.hash(),
        cfg.seed,
        json!({ "identity": identity, "sequence": sequence, "frames": frames.len(), "steps": steps, "eta": eta, "weights": composer.weights.as_slice() }),
    )?;
    Ok(SampleOutput { frames: frames.len(), levels: steps, levels_path, composite_path })
}

// ---------------------------------------------------------------- zipgait

/// Recognizer bundled with the frozen DiffGait that feeds it.
pub struct ZipGaitState {
    pub model: ZipGait,
    pub sgd: Sgd,
    pub config: RunConfig,
    pub classes: Vec<String>,
    pub diffgait: DiffGaitState,
}

impl ZipGaitState {
    pub fn fresh(config: &RunConfig, classes: Vec<String>, diffgait: DiffGaitState) -> Result<Self> {
        let model = ZipGait::new(config.recognizer_config(classes.len()), config.seed)?;
        let r = &config.recognition;
        let sgd = Sgd::new(SgdConfig { lr: r.lr, momentum: r.momentum, weight_decay: r.weight_decay }, model.params.len());
        Ok(Self { model, sgd, config: config.clone(), classes, diffgait })
    }

    pub fn composer(&self) -> Result<Composer<'_>> {
        let s = &self.config.schedule;
        Ok(Composer {
            model: &self.diffgait.model,
            sched: self.diffgait.config.schedule()?,
            heat: self.diffgait.config.heat.clone(),
            steps: s.sampling_steps,
            eta: s.eta,
            weights: self.config.fusion_weights()?,
            seed: self.config.seed,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(ZIPGAIT_KIND, self.config.clone(), self.config.seed, self.sgd.step);
        ck.extra = json!({
            "classes": self.classes,
            "diffgait_config": self.diffgait.config,
            "diffgait_step": self.diffgait.adam.step,
        });
        ck.push_layout(self.diffgait.model.net.layout(), &self.diffgait.model.params, FROZEN_DIFFGAIT);
        ck.push_layout(self.model.net.layout(), &self.model.params, PARAMS);
        ck.push_flat("sgd.velocity", OPTIMIZER, &self.sgd.velocity);
        ck
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        ck.expect_kind(ZIPGAIT_KIND, path)?;
        let field = |k: &str| ck.extra.get(k).cloned().ok_or_else(|| Error::checkpoint(path, format!("missing {k}")));
        let classes: Vec<String> = serde_json::from_value(field("classes")?).map_err(|e| Error::checkpoint(path, e))?;
        let dcfg: RunConfig = serde_json::from_value(field("diffgait_config")?).map_err(|e| Error::checkpoint(path, e))?;
        let mut diffgait = DiffGaitState::fresh(&dcfg)?;
        diffgait.model.params = ck.take_layout(diffgait.model.net.layout(), FROZEN_DIFFGAIT, path)?;
        diffgait.adam.step = field("diffgait_step")?.as_u64().unwrap_or(0);
        let mut s = Self::fresh(&ck.config, classes, diffgait)?;
        s.model.params = ck.take_layout(s.model.net.layout(), PARAMS, path)?;
        s.sgd.velocity = ck.take_flat("sgd.velocity", OPTIMIZER, s.model.params.len(), path)?;
        s.sgd.step = ck.step;
        Ok(s)
    }
}

/// Recognizer inputs for the protocol's training sequences, labelled by
/// their index in `classes`.
pub fn training_inputs(state: &ZipGaitState, manifest: &DatasetManifest, entries: &[ManifestEntry]) -> Result<Vec<(usize, SequenceInput<f32>)>> {
    let composer = state.composer()?;
    entries
        .iter()
        .map(|e| {
            let label = state.classes.binary_search(&e.identity).expect("classes cover training identities");
            Ok((label, composer.sequence_input(manifest, e, state.config.recognition.max_frames)?))
        })
        .collect()
}

/// Recognition training with the DiffGait weights in `diffgait` frozen.
pub fn train_zipgait(config: &RunConfig, data: &Path, diffgait: DiffGaitState, out: &Path) -> Result<(ZipGaitState, TrainReport)> {
    let manifest = DatasetManifest::load(data)?;
    let split = protocol_split(&manifest, &config.eval)?;
    let mut classes: Vec<String> = split.train.iter().map(|e| e.identity.clone()).collect();
    classes.sort();
    classes.dedup();
    if classes.len() < config.recognition.batch_ids {
        return Err(Error::parse(data, None, format!("{} training identities, batches need {}", classes.len(), config.recognition.batch_ids)));
    }
    if config.heat != diffgait.config.heat {
        return Err(Error::Config("the heat section differs from the one the DiffGait checkpoint was trained with".into()));
    }
    let mut state = ZipGaitState::fresh(config, classes, diffgait)?;
    let inputs = training_inputs(&state, &manifest, &split.train)?;
    let refs: Vec<(usize, &SequenceInput<f32>)> = inputs.iter().map(|(l, s)| (*l, s)).collect();
    let r = config.recognition.clone();
    let log_path = out.join("zipgait_loss.csv");
    let ckpt_path = out.join("zipgait.ckpt");
    let mut log = LossLog::create(&log_path)?;
    let mut final_loss = f64::NAN;
    for step in 1..=r.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("zipgait-step", &[config.seed, step]));
        let batch = sample_zip_batch(&refs, r.batch_ids, r.batch_seqs, r.frames, &mut rng)?;
        let lr = milestone_lr(r.lr, step - 1, &r.milestones, r.gamma);
        final_loss = train_step_zipgait(&mut state.model, &batch, &mut state.sgd, lr)?.total();
        log.row(step, final_loss)?;
    }
    state.checkpoint().save(&ckpt_path)?;
    write_run_info(
        &out.join("run_info.json"),
        "train-zipgait",
        &config.hash(),
        config.seed,
        json!({
            "steps": r.steps,
            "final_loss": final_loss,
            "classes": state.classes,
            "diffgait_config_hash": state.diffgait.config.hash(),
        }),
    )?;
    let report = TrainReport { first_step: 1, last_step: r.steps, final_loss, checkpoint: ckpt_path, log: log_path };
    Ok((state, report))
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub result: RetrievalResult,
    pub gallery: Vec<EmbeddingSet>,
    pub probe: Vec<EmbeddingSet>,
    pub metrics_path: PathBuf,
}

/// `{rank1, rank5, mAP, mINP, excluded_probes}`.
pub fn metrics_json(r: &RetrievalResult) -> serde_json::Value {
    json!({ "rank1": r.rank1, "rank5": r.rank5, "mAP": r.map, "mINP": r.minp, "excluded_probes": r.excluded_probes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub identity: String,
    pub sequence: String,
    pub role: String,
    pub label: u32,
    pub seq: u32,
    pub view: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSidecar {
    pub config_hash: String,
    pub parts: usize,
    pub dim: usize,
    pub entries: Vec<EmbeddingRecord>,
}

/// Where eval writes: `out` itself when it names a `.json` file, otherwise
/// `out/metrics.json`; the other artifacts share its directory and stem.
pub fn eval_paths(out: &Path) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    let metrics = if out.extension().is_some_and(|e| e == "json") { out.to_path_buf() } else { out.join("metrics.json") };
    let stem = metrics.file_stem().and_then(|s| s.to_str()).unwrap_or("metrics").to_string();
    let dir = metrics.parent().map(Path::to_path_buf).unwrap_or_default();
    (
        metrics,
        dir.join(format!("{stem}.embeddings.npy")),
        dir.join(format!("{stem}.embeddings.json")),
        dir.join(format!("{stem}.run_info.json")),
    )
}

pub fn evaluate(ckpt: &Path, data: &Path, out: &Path) -> Result<EvalOutput> {
    let state = ZipGaitState::load(ckpt)?;
    let cfg = &state.config;
    let manifest = DatasetManifest::load(data)?;
    let split = protocol_split(&manifest, &cfg.eval)?;
    if split.probe.is_empty() || split.gallery.is_empty() {
        return Err(Error::parse(data, None, "the protocol leaves no gallery or no probe sequences"));
    }
    let ids = manifest.identities();
    let mut seq_names: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in &manifest.entries {
        seq_names.entry(&e.identity).or_default().push(&e.sequence);
    }
    for v in seq_names.values_mut() {
        v.sort_unstable();
    }
    let composer = state.composer()?;
    let mut records = Vec::new();
    let mut embed = |entries: &[ManifestEntry], role: &str| -> Result<Vec<EmbeddingSet>> {
        let mut sets = Vec::with_capacity(entries.len());
        for e in entries {
            let label = ids.binary_search(&e.identity).expect("identity listed") as u32;
            let seq = seq_names[e.identity.as_str()].binary_search(&e.sequence.as_str()).expect("sequence listed") as u32;
            let input = composer.sequence_input(&manifest, e, cfg.recognition.max_frames)?;
            sets.push(state.model.net.embed_sequence(&state.model.params, &input, label, seq, "side".into())?);
            records.push(EmbeddingRecord {
                identity: e.identity.clone(),
                sequence: e.sequence.clone(),
                role: role.into(),
                label,
                seq,
                view: "side".into(),
            });
        }
        Ok(sets)
    };
    let gallery = embed(&split.gallery, "gallery")?;
    let probe = embed(&split.probe, "probe")?;
    let result = evaluate_retrieval(&gallery, &probe)?;

    let (metrics_path, npy_path, sidecar_path, info_path) = eval_paths(out);
    write_json(&metrics_path, &metrics_json(&result))?;
    let width = gallery[0].parts.len();
    write_npy(&npy_path, &[gallery.len() + probe.len(), width], gallery.iter().chain(&probe).flat_map(|s| s.parts.iter().copied()))?;
    let sidecar = EmbeddingSidecar {
        config_hash: cfg.hash(),
        parts: gallery[0].num_parts,
        dim: gallery[0].dim(),
        entries: records,
    };
    write_json(&sidecar_path, &serde_json::to_value(&sidecar).expect("sidecar serializes"))?;
    write_run_info(
        &info_path,
        "eval",
        &cfg.hash(),
        cfg.seed,
        json!({ "protocol": cfg.eval.protocol, "gallery": gallery.len(), "probe": probe.len(), "metrics": metrics_json(&result) }),
    )?;
    Ok(EvalOutput { result, gallery, probe, metrics_path })
}

/// Reads an embedding dump back as (gallery, probe) sets.
pub fn read_embedding_dump(npy: &Path, sidecar: &Path) -> Result<(Vec<EmbeddingSet>, Vec<EmbeddingSet>)> {
    let text = std::fs::read_to_string(sidecar).at(sidecar)?;
    let meta: EmbeddingSidecar = serde_json::from_str(&text).map_err(|e| Error::parse(sidecar, None, e))?;
    let bytes = std::fs::read(npy).at(npy)?;
    let values: Vec<f32> = npyz::NpyFile::new(&bytes[..]).and_then(|f| f.into_vec()).map_err(|e| Error::parse(npy, None, e))?;
    let width = meta.parts * meta.dim;
    if values.len() != width * meta.entries.len() {
        return Err(Error::Alignment { file: npy.to_path_buf(), msg: "embedding count differs from sidecar".into() });
    }
    let (mut gallery, mut probe) = (Vec::new(), Vec::new());
    for (rec, row) in meta.entries.iter().zip(values.chunks_exact(width)) {
        let set = EmbeddingSet { parts: row.to_vec(), num_parts: meta.parts, label: rec.label, seq: rec.seq, view: rec.view.clone() };
        if rec.role == "gallery" {
            gallery.push(set);
        } else {
            probe.push(set);
        }
    }
    Ok((gallery, probe))
}

//! Versioned run configuration.
//!
//! Defaults mirror the reference hyper-parameters; `configs/desk.config`
//! shrinks them to run on a laptop CPU.

use std::path::Path;

use gait_core::diffgait::DiffGaitConfig;
use gait_core::heat::{Canvas, LimbTable, COCO_LIMBS};
use gait_core::pgi::FusionWeights;
use gait_core::recognition::RecognizerConfig;
use gait_core::schedule::NoiseSchedule;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub heat: HeatSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub diffgait: DiffGaitSection,
    #[serde(default)]
    pub pgi: PgiSection,
    #[serde(default)]
    pub recognition: RecognitionSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Share of identities assigned to the training split.
    pub train_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatSection {
    pub sigma: f64,
    /// Height and width in pixels.
    pub canvas: [usize; 2],
    /// Joint index pairs connected by a limb.
    pub limbs: Vec<[usize; 2]>,
}

impl HeatSection {
    pub fn canvas(&self) -> Canvas {
        Canvas { h: self.canvas[0], w: self.canvas[1] }
    }

    pub fn limb_table(&self) -> Result<LimbTable> {
        LimbTable::new(self.limbs.iter().map(|&[a, b]| (a, b)).collect()).map_err(|e| Error::Config(format!("heat.limbs: {e}")))
    }
}

/// Parses `HxW`, e.g. `64x44`.
pub fn parse_canvas(s: &str) -> std::result::Result<[usize; 2], String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("{s:?} is not HxW"))?;
    let dim = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok([dim(h)?, dim(w)?])
}

/// Reads a limb table file: a JSON array of joint index pairs.
pub fn read_limbs(path: &Path) -> Result<Vec<[usize; 2]>> {
    let text = std::fs::read_to_string(path).at(path)?;
    let limbs: Vec<[usize; 2]> = serde_json::from_str(&text).map_err(|e| Error::parse(path, None, e))?;
    LimbTable::new(limbs.iter().map(|&[a, b]| (a, b)).collect()).map_err(|e| Error::parse(path, None, e))?;
    Ok(limbs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub timesteps: usize,
    pub cosine_offset: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub sampling_steps: usize,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffGaitSection {
    pub channels: usize,
    pub groups: usize,
    pub lr: f64,
    pub batch_ids: usize,
    pub batch_seqs: usize,
    pub steps: u64,
    pub milestones: Vec<u64>,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgiSection {
    pub channels: usize,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognitionSection {
    pub widths: [usize; 4],
    pub groups: usize,
    pub parts: usize,
    pub dim: usize,
    pub margin: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub milestones: Vec<u64>,
    pub gamma: f64,
    pub steps: u64,
    pub batch_ids: usize,
    pub batch_seqs: usize,
    /// Frames drawn per sequence for each training batch.
    pub frames: usize,
    /// Leading frames of each sequence used at all; 0 keeps every frame.
    pub max_frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Disjoint train and test identities.
    SubjectIndependent,
    /// Same identities; the last `probe_seqs` sequences of each are probes.
    SubjectDependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub protocol: Protocol,
    pub probe_seqs: usize,
    pub gallery_seqs: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { train_fraction: 0.5 }
    }
}

impl Default for HeatSection {
    fn default() -> Self {
        Self {
            sigma: gait_core::heat::DEFAULT_SIGMA,
            canvas: [Canvas::DEFAULT.h, Canvas::DEFAULT.w],
            limbs: COCO_LIMBS.iter().map(|&(a, b)| [a, b]).collect(),
        }
    }
}

impl Default for ScheduleSection {
    fn default() -> Self {
        use gait_core::schedule::{BETA_MAX, BETA_MIN, COSINE_OFFSET};
        Self { timesteps: 1000, cosine_offset: COSINE_OFFSET, beta_min: BETA_MIN, beta_max: BETA_MAX, sampling_steps: 5, eta: 0.0 }
    }
}

impl Default for DiffGaitSection {
    fn default() -> Self {
        let d = DiffGaitConfig::default();
        Self { channels: d.channels, groups: d.groups, lr: 0.01, batch_ids: 16, batch_seqs: 4, steps: 20_000, milestones: vec![], gamma: 0.1 }
    }
}

impl Default for PgiSection {
    fn default() -> Self {
        Self { channels: gait_core::pgi::DEFAULT_FUSION_CHANNELS, weights: FusionWeights::default().as_slice().to_vec() }
    }
}

impl Default for RecognitionSection {
    fn default() -> Self {
        let d = RecognizerConfig::default();
        Self {
            widths: d.widths,
            groups: d.groups,
            parts: d.parts,
            dim: d.dim,
            margin: d.margin,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            milestones: vec![],
            gamma: 0.1,
            steps: 20_000,
            batch_ids: 8,
            batch_seqs: 4,
            frames: 30,
            max_frames: 0,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { protocol: Protocol::SubjectIndependent, probe_seqs: 2, gallery_seqs: 2 }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            seed: 0,
            data: Default::default(),
            heat: Default::default(),
            schedule: Default::default(),
            diffgait: Default::default(),
            pgi: Default::default(),
            recognition: Default::default(),
            eval: Default::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (or the defaults) and applies `section.key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut tree: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).at(p)?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::try_from(RunConfig::default()).map_err(|e| Error::Config(e.to_string()))?,
        };
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        Self::from_table(tree)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_table(toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?)
    }

    fn from_table(tree: toml::Table) -> Result<Self> {
        match tree.get("schema").and_then(|v| v.as_integer()) {
            Some(v) if v == SCHEMA_VERSION as i64 => {}
            Some(v) => return Err(Error::Config(format!("schema {v} is not supported (expected {SCHEMA_VERSION})"))),
            None => return Err(Error::Config("missing integer \"schema\" key".into())),
        }
        let cfg: RunConfig = tree.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.data.train_fraction) {
            return bad(format!("data.train_fraction {} outside [0, 1]", self.data.train_fraction));
        }
        if self.schedule.sampling_steps == 0 || self.schedule.sampling_steps > self.schedule.timesteps {
            return bad("schedule.sampling_steps must lie in [1, timesteps]".into());
        }
        if self.pgi.weights.len() != self.schedule.sampling_steps {
            return bad(format!(
                "pgi.weights has {} entries but schedule.sampling_steps is {}",
                self.pgi.weights.len(),
                self.schedule.sampling_steps
            ));
        }
        self.fusion_weights()?;
        self.schedule()?;
        let h = &self.heat;
        if !(h.sigma.is_finite() && h.sigma > 0.0) {
            return bad(format!("heat.sigma {} must be positive", h.sigma));
        }
        if h.canvas.iter().any(|&d| d == 0 || d % 4 != 0) {
            return bad(format!("heat.canvas {}x{} must be positive multiples of 4", h.canvas[0], h.canvas[1]));
        }
        h.limb_table()?;
        if self.diffgait.batch_ids == 0 || self.diffgait.batch_seqs == 0 {
            return bad("diffgait batch sizes must be positive".into());
        }
        let r = &self.recognition;
        if r.batch_ids < 2 || r.batch_seqs == 0 || r.frames == 0 {
            return bad("recognition batches need at least 2 identities and 1 sequence and frame each".into());
        }
        Ok(())
    }

    /// Hex sha256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let s = &self.schedule;
        Ok(NoiseSchedule::cosine_with(s.timesteps, s.cosine_offset, (s.beta_min, s.beta_max))?)
    }

    pub fn diffgait_config(&self) -> DiffGaitConfig {
        DiffGaitConfig {
            channels: self.diffgait.channels,
            groups: self.diffgait.groups,
            timesteps: self.schedule.timesteps,
            height: self.heat.canvas[0],
            width: self.heat.canvas[1],
        }
    }

    pub fn fusion_weights(&self) -> Result<FusionWeights> {
        FusionWeights::new(self.pgi.weights.clone()).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn recognizer_config(&self, num_classes: usize) -> RecognizerConfig {
        let r = &self.recognition;
        RecognizerConfig {
            fusion_channels: self.pgi.channels,
            widths: r.widths,
            groups: r.groups,
            parts: r.parts,
            dim: r.dim,
            num_classes,
            margin: r.margin,
            height: self.heat.canvas[0],
            width: self.heat.canvas[1],
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn apply_override(tree: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| Error::Usage(format!("override {spec:?} is not key=value")))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.trim().split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Usage(format!("empty key in {spec:?}")))?;
    let mut node = tree;
    for p in parts {
        node = node
            .entry(p)
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| Error::Usage(format!("{p} in {key} is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

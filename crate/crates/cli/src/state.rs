//! Persisted pipeline state: one JSON document with every stage's output and
//! the content hashes that tie each stage to its inputs.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write as _;
use std::path::Path;

use popobs::dkiter::DKTrace;
use popobs::lti::FrequencyGrid;
use popobs::observer::WeightSet;
use popobs::pipeline::{Characterization, Evaluation, PipelineConfig};
use popobs::plant::GeneralizedPlant;
use popobs::uncertainty::PopulationModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const STATE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Population,
    Characterize,
    Plant,
    Synthesize,
    Evaluate,
    Report,
    Admit,
}

impl Stage {
    /// Stages whose outputs this stage reads directly.
    pub fn upstream(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            Population => &[],
            Characterize => &[Population],
            Plant => &[Population, Characterize],
            Synthesize => &[Plant],
            Evaluate => &[Population, Plant, Synthesize],
            Report => &[Characterize, Plant, Synthesize, Evaluate],
            Admit => &[Population, Characterize, Synthesize],
        }
    }

    pub fn name(self) -> &'static str {
        use Stage::*;
        match self {
            Population => "population",
            Characterize => "characterize",
            Plant => "plant",
            Synthesize => "synthesize",
            Evaluate => "evaluate",
            Report => "report",
            Admit => "admit",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub input_hash: String,
    pub output_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub version: u32,
    pub config: PipelineConfig,
    /// Completed stages.
    pub stages: BTreeMap<Stage, StageRecord>,
    pub population: Option<PopulationModel>,
    pub grid: Option<FrequencyGrid>,
    pub characterization: Option<Characterization>,
    pub weights: Option<WeightSet>,
    pub plant: Option<GeneralizedPlant>,
    pub trace: Option<DKTrace>,
    pub evaluation: Option<Evaluation>,
}

/// SHA-256 of the canonical JSON encoding.
pub fn content_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("state values serialize");
    hex::encode(Sha256::digest(&bytes))
}

impl PipelineState {
    pub fn new(config: PipelineConfig) -> Self {
        Self {
            version: STATE_VERSION,
            config,
            stages: BTreeMap::new(),
            population: None,
            grid: None,
            characterization: None,
            weights: None,
            plant: None,
            trace: None,
            evaluation: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let state: Self = serde_json::from_str(&text).map_err(CliError::schema(path))?;
        if state.version != STATE_VERSION {
            return Err(CliError::Version {
                found: state.version,
                expected: STATE_VERSION,
            });
        }
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("state serializes");
        write_atomic(path, text.as_bytes())
    }

    pub fn is_complete(&self, stage: Stage) -> bool {
        self.stages.contains_key(&stage)
    }

    /// Hash of everything `stage` would read, or `None` while an upstream
    /// stage is missing.
    pub fn input_hash(&self, stage: Stage) -> Option<String> {
        let cfg = &self.config;
        let out = |s: Stage| self.stages.get(&s).map(|r| r.output_hash.clone());
        let parts: Vec<String> = match stage {
            Stage::Population => vec![content_hash(&cfg.population)],
            Stage::Characterize => vec![
                out(Stage::Population)?,
                content_hash(&(cfg.grid, cfg.weight_order, cfg.headroom)),
            ],
            Stage::Plant => vec![out(Stage::Population)?, out(Stage::Characterize)?, content_hash(&cfg.weights)],
            Stage::Synthesize => vec![out(Stage::Plant)?, content_hash(&(cfg.grid, &cfg.dk))],
            Stage::Evaluate => vec![
                out(Stage::Population)?,
                out(Stage::Plant)?,
                out(Stage::Synthesize)?,
                content_hash(&(&cfg.dataset, cfg.discard_s)),
            ],
            Stage::Report | Stage::Admit => stage.upstream().iter().map(|s| out(*s)).collect::<Option<Vec<_>>>()?,
        };
        Some(content_hash(&parts))
    }

    pub fn output_hash(&self, stage: Stage) -> String {
        match stage {
            Stage::Population => content_hash(&self.population),
            Stage::Characterize => content_hash(&(&self.grid, &self.characterization)),
            Stage::Plant => content_hash(&(&self.weights, &self.plant)),
            Stage::Synthesize => content_hash(&self.trace),
            Stage::Evaluate => content_hash(&self.evaluation),
            Stage::Report | Stage::Admit => String::new(),
        }
    }

    /// Checks that every stage `stage` depends on has run and is still
    /// consistent with its own inputs.
    pub fn require(&self, stage: Stage, force: bool) -> Result<()> {
        let mut pending: Vec<Stage> = stage.upstream().to_vec();
        let mut seen = Vec::new();
        while let Some(up) = pending.pop() {
            if seen.contains(&up) {
                continue;
            }
            seen.push(up);
            let rec = self.stages.get(&up).ok_or(CliError::StageIncomplete {
                requested: stage,
                needed: up,
            })?;
            if !force && self.input_hash(up).as_deref() != Some(rec.input_hash.as_str()) {
                return Err(CliError::HashMismatch(up));
            }
            pending.extend_from_slice(up.upstream());
        }
        Ok(())
    }

    /// Records `stage` as complete with its current input and output hashes.
    pub fn mark(&mut self, stage: Stage) {
        let input_hash = self.input_hash(stage).unwrap_or_default();
        let output_hash = self.output_hash(stage);
        self.stages.insert(stage, StageRecord { input_hash, output_hash });
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(CliError::io(dir))?;
    tmp.write_all(bytes).map_err(CliError::io(path))?;
    tmp.as_file().sync_all().map_err(CliError::io(path))?;
    tmp.persist(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

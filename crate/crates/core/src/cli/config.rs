//! Experiment configuration: a TOML file with `[data]`, `[model]`,
//! `[train]`, `[sweep]` and `[output]` sections, plus `section.key=value`
//! overrides from the command line.

use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::TurboConfig;
use crate::channel::ChannelKind;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Proposed,
    HuffmanTurbo,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::HuffmanTurbo => "huffman_turbo",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    /// External embedding service when `SEMCOM_EMBEDDING_URL` is set,
    /// lexical otherwise.
    Auto,
    Lexical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// One sentence per line, UTF-8.
    pub corpus: PathBuf,
    pub min_len: usize,
    pub max_len: usize,
    pub train_ratio: f64,
    /// Vocabulary cap including the reserved tokens.
    pub vocab_size: usize,
    pub seed: u64,
    /// Use only the first N in-window sentences.
    pub max_sentences: Option<usize>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            corpus: PathBuf::from("data/synthetic_debates.txt"),
            min_len: 4,
            max_len: 36,
            train_ratio: 0.9,
            vocab_size: 22_000,
            seed: 0,
            max_sentences: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub schemes: Vec<Scheme>,
    pub channels: Vec<ChannelKind>,
    pub snr_db: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Score only the first N test sentences.
    pub max_sentences: Option<usize>,
    /// Sentences per decoding batch for the learned codec.
    pub batch_size: usize,
    /// Concurrent sweep jobs (0: one per available core).
    pub workers: usize,
    pub turbo: TurboConfig,
    pub similarity: SimilarityKind,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            schemes: vec![Scheme::Proposed, Scheme::HuffmanTurbo],
            channels: vec![ChannelKind::Awgn, ChannelKind::Rayleigh],
            snr_db: (0..=6).map(|i| 3.0 * i as f64).collect(),
            seeds: vec![0],
            max_sentences: None,
            batch_size: 64,
            workers: 0,
            turbo: TurboConfig::default(),
            similarity: SimilarityKind::Auto,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    /// `vocab_size` is replaced by the size of the prepared vocabulary.
    pub model: ModelConfig,
    /// `checkpoint_path` is ignored; checkpoints go to the output directory.
    pub train: TrainConfig,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Applies `section.key=value` overrides. The value is read as a TOML
    /// literal (number, bool, array, inline table) and falls back to a plain
    /// string.
    pub fn with_overrides(self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut root = toml::Value::try_from(&self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            let parts: Vec<&str> = key.trim().split('.').collect();
            let (last, path) = parts.split_last().ok_or_else(|| Error::Config("empty override key".into()))?;
            let mut at = &mut root;
            for p in path {
                at = at
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("{key}: {p} is not a section")))?
                    .entry(p.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
            }
            at.as_table_mut()
                .ok_or_else(|| Error::Config(format!("{key} does not name a field")))?
                .insert(last.to_string(), value);
        }
        root.try_into().map_err(|e: toml::de::Error| Error::Config(format!("override: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.min_len == 0 || d.min_len > d.max_len {
            return Err(Error::Config(format!("invalid sentence window {}..={}", d.min_len, d.max_len)));
        }
        let s = &self.sweep;
        if s.snr_db.is_empty() || s.snr_db.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("sweep.snr_db must be non-empty and strictly increasing".into()));
        }
        if s.schemes.is_empty() || s.channels.is_empty() || s.seeds.is_empty() {
            return Err(Error::Config("sweep needs at least one scheme, channel and seed".into()));
        }
        if s.batch_size == 0 {
            return Err(Error::Config("sweep.batch_size must be >= 1".into()));
        }
        self.train.validate()
    }

    /// SHA-256 of the canonical JSON form of the configuration, leaving out
    /// the output directory.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output");
        }
        let json = serde_json::to_string(&value).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Output directory guard: every file the CLI writes is resolved here, and
/// names that would escape the directory are refused.
#[derive(Clone, Debug)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(OutputDir { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn file(&self, name: &str) -> Result<PathBuf> {
        let rel = Path::new(name);
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(Error::Config(format!("refusing to write {name:?} outside the output directory")));
        }
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_settings() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.sweep.snr_db, [0.0, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0]);
        assert_eq!((c.data.min_len, c.data.max_len), (4, 36));
        assert_eq!((c.train.batch_size, c.train.epochs, c.train.learning_rate), (256, 80, 5e-4));
    }

    #[test]
    fn toml_sections_and_overrides() {
        let c = ExperimentConfig::from_toml(
            "[data]\nmax_len = 16\n[model]\nd_model = 32\n[sweep]\nchannels = [\"awgn\"]\nsnr_db = [0.0, 6.0]\n",
        )
        .unwrap();
        assert_eq!(c.data.max_len, 16);
        assert_eq!(c.model.d_model, 32);
        assert_eq!(c.sweep.channels, [ChannelKind::Awgn]);
        let c = c
            .with_overrides(&[
                "train.learning_rate=0.002".into(),
                "sweep.seeds=[1,2,3]".into(),
                "output.dir=elsewhere".into(),
                "train.snr={policy=\"fixed\", snr_db=5.0}".into(),
            ])
            .unwrap();
        assert_eq!(c.train.learning_rate, 0.002);
        assert_eq!(c.sweep.seeds, [1, 2, 3]);
        assert_eq!(c.output.dir, PathBuf::from("elsewhere"));
        assert_eq!(c.train.snr, crate::trainer::SnrPolicy::Fixed { snr_db: 5.0 });
    }

    #[test]
    fn bad_configs_are_config_errors() {
        assert!(matches!(ExperimentConfig::from_toml("[data]\nbogus = 1\n"), Err(Error::Config(_))));
        let c = ExperimentConfig::default();
        assert!(c.clone().with_overrides(&["train.batch_size=\"x\"".into()]).is_err());
        assert!(c.clone().with_overrides(&["nokey".into()]).is_err());
        let mut unsorted = c;
        unsorted.sweep.snr_db = vec![6.0, 0.0];
        assert!(matches!(unsorted.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::default();
        assert_eq!(a.hash(), ExperimentConfig::default().hash());
        assert_eq!(a.hash().len(), 64);
        let b = a.clone().with_overrides(&["data.seed=9".into()]).unwrap();
        assert_ne!(a.hash(), b.hash());
        let c = a.clone().with_overrides(&["output.dir=x".into()]).unwrap();
        assert_eq!(a.hash(), c.hash());
    }

    #[test]
    fn output_dir_refuses_escapes() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::create(dir.path()).unwrap();
        assert!(out.file("plots/a.svg").unwrap().starts_with(dir.path()));
        assert!(out.file("../x").is_err());
        assert!(out.file("/etc/passwd").is_err());
    }
}

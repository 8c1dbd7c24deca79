use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use derev_core::metrics::MetricsReport;
use derev_core::pipeline::PipelineMode;
use derev_core::scene::SceneSpec;
use derev_core::signal::PipelineConfig;
use derev_core::wav::SampleFormat;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::{Failure, Outcome};

pub const SCENE_MANIFEST: &str = "scene.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Outcome<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Failure::io(path, e))?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(path: &Path) -> Outcome<Self> {
        Ok(Self { path: path.to_path_buf(), sha256: sha256_file(path)? })
    }

    /// Fails unless the file on disk still has the recorded hash.
    pub fn verify(&self) -> Outcome<()> {
        let now = sha256_file(&self.path)?;
        if now != self.sha256 {
            return Err(Failure::config(format!("{} changed since the manifest was written", self.path.display())));
        }
        Ok(())
    }
}

/// Written by `synth`; enough to rebuild the scene bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub spec: SceneSpec,
    /// File name to SHA-256, names relative to the manifest directory.
    pub files: BTreeMap<String, String>,
    pub propagation_delay_samples: usize,
    pub t60: f64,
    pub t30: f64,
    pub rir_length: usize,
    pub snr_db: Option<f64>,
    pub segments: Vec<[usize; 2]>,
    pub evaluated: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub wall_seconds: f64,
    pub frames: usize,
    pub frames_per_second: f64,
    pub audio_seconds: f64,
    pub real_time_factor: f64,
}

/// Everything `replay` needs to reproduce an output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: String,
    pub mode: PipelineMode,
    pub config: PipelineConfig,
    pub model_wpe: Option<FileRecord>,
    pub model_pf: Option<FileRecord>,
    pub input: FileRecord,
    pub target: Option<FileRecord>,
    pub scene: Option<FileRecord>,
    pub output: FileRecord,
    pub output_format: SampleFormat,
    /// Streaming chunk size in samples; `None` means the whole file at once.
    pub chunk_samples: Option<usize>,
    pub metrics: Vec<MetricsReport>,
    pub throughput: Throughput,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::config(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Failure::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Outcome<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

/// Pipeline configuration from a `.toml` or `.json` file.
pub fn read_config(path: &Path) -> Outcome<PipelineConfig> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).map_err(|e| e.to_string()),
        Some("json") => serde_json::from_str(&text).map_err(|e| e.to_string()),
        _ => return Err(Failure::config(format!("{}: config must be .toml or .json", path.display()))),
    };
    parsed.map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

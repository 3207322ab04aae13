//! On-disk chain archives: one directory per chain holding `draws.bin` and
//! `manifest.json`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use nestclust::archive::{read_draws, Draw, ModelKind};
use nestclust::basis::SplineBasis;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub const FORMAT: &str = "nestclust-archive-1";
pub const MANIFEST: &str = "manifest.json";
pub const DRAWS: &str = "draws.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisInfo {
    pub knots: Vec<f64>,
    pub degree: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub model: String,
    pub chain: usize,
    pub seed: u64,
    pub draws: u64,
    pub config_hash: String,
    pub config: Map<String, Value>,
    pub dataset_sha256: String,
    pub subjects: Vec<String>,
    pub replicates: Vec<Vec<String>>,
    /// Covariate range of the data, used for reconstruction grids.
    pub x_range: [f64; 2],
    pub basis: BasisInfo,
    /// Final Metropolis acceptance rate per sampled concentration parameter.
    pub acceptance: Vec<f64>,
}

impl Manifest {
    pub fn model_kind(&self) -> CliResult<ModelKind> {
        self.model.parse().map_err(CliError::from_core)
    }

    pub fn spline_basis(&self) -> CliResult<SplineBasis> {
        SplineBasis::new(self.basis.knots.clone(), self.basis.degree).map_err(CliError::from_core)
    }

    /// Manifests describe compatible chains when they share model, data
    /// layout and basis.
    pub fn compatible(&self, other: &Manifest) -> bool {
        self.model == other.model
            && self.subjects == other.subjects
            && self.replicates == other.replicates
            && self.basis == other.basis
            && self.x_range == other.x_range
    }
}

pub fn chain_dir(out: &Path, chain: usize) -> PathBuf {
    out.join(format!("chain_{chain}"))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_manifest(dir: &Path) -> CliResult<Manifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    if m.format != FORMAT {
        return Err(CliError::data(format!("{}: unsupported archive format {:?}", path.display(), m.format)));
    }
    Ok(m)
}

pub fn read_chain_draws(dir: &Path) -> CliResult<Vec<Draw>> {
    let path = dir.join(DRAWS);
    let file = File::open(&path).map_err(|e| CliError::io(&path, e))?;
    read_draws(BufReader::new(file)).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn create_draws(dir: &Path) -> CliResult<BufWriter<File>> {
    let path = dir.join(DRAWS);
    File::create(&path).map(BufWriter::new).map_err(|e| CliError::io(&path, e))
}

/// Expand each argument into chain directories: a directory with a manifest
/// is a chain, otherwise its `chain_<n>` subdirectories are taken in numeric
/// order.
pub fn resolve_chains(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.join(MANIFEST).is_file() {
            out.push(p.clone());
            continue;
        }
        let entries = std::fs::read_dir(p).map_err(|e| CliError::io(p, e))?;
        let mut found: Vec<(usize, PathBuf)> = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| CliError::io(p, e))?;
            let name = entry.file_name();
            let Some(idx) = name.to_str().and_then(|n| n.strip_prefix("chain_")).and_then(|n| n.parse().ok()) else {
                continue;
            };
            if entry.path().join(MANIFEST).is_file() {
                found.push((idx, entry.path()));
            }
        }
        if found.is_empty() {
            return Err(CliError::data(format!("{}: no chain archives found", p.display())));
        }
        found.sort();
        out.extend(found.into_iter().map(|(_, path)| path));
    }
    if out.is_empty() {
        return Err(CliError::usage("no archives given"));
    }
    Ok(out)
}

/// A chain's manifest and retained draws.
pub struct Chain {
    pub manifest: Manifest,
    pub draws: Vec<Draw>,
}

/// Load chains, checking they are mutually compatible and non-empty.
pub fn load_chains(paths: &[PathBuf]) -> CliResult<Vec<Chain>> {
    let dirs = resolve_chains(paths)?;
    let mut chains: Vec<Chain> = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let manifest = read_manifest(&dir)?;
        let draws = read_chain_draws(&dir)?;
        if draws.is_empty() {
            return Err(CliError::data(format!("{}: archive has no draws", dir.display())));
        }
        if draws.len() as u64 != manifest.draws {
            return Err(CliError::data(format!(
                "{}: manifest lists {} draws, file holds {}",
                dir.display(),
                manifest.draws,
                draws.len()
            )));
        }
        if let Some(first) = chains.first() {
            if !first.manifest.compatible(&manifest) {
                return Err(CliError::data(format!("{}: archive is incompatible with the first chain", dir.display())));
            }
        }
        chains.push(Chain { manifest, draws });
    }
    Ok(chains)
}

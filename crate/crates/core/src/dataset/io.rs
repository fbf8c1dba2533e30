//! Episode files and the dataset manifest.
//!
//! Episode file (little-endian):
//!
//! ```text
//! "CMTD" | version u32 | episode count u32
//! per episode:
//!   env_id: u32 byte length + UTF-8
//!   K u32 | T u32 | d u32
//!   T*K*d f64 states
//!   label rows u32 (must equal T - 1)
//!   rows*K i32 mode codes | rows*K i32 context indices
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::Episode;
use crate::bytes::{put_str, put_u32, Reader};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CMTD";
pub const VERSION: u32 = 1;

pub fn encode_episodes(episodes: &[Episode]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, episodes.len() as u32);
    for ep in episodes {
        put_str(&mut out, &ep.env_id);
        put_u32(&mut out, ep.k as u32);
        put_u32(&mut out, ep.t as u32);
        put_u32(&mut out, ep.d as u32);
        for v in &ep.states {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_u32(&mut out, (ep.gt_mode.len() / ep.k.max(1)) as u32);
        for v in ep.gt_mode.iter().chain(&ep.gt_ctx) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses a whole file; any defect fails the load with no partial result.
pub fn decode_episodes(bytes: &[u8], origin: &Path) -> Result<Vec<Episode>> {
    let mut r = Reader::new(bytes, origin);
    if r.take(4)? != MAGIC {
        return Err(Error::load(origin, "bad magic, not a CMTD dataset file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::load(
            origin,
            format!("dataset version {version}, expected {VERSION}"),
        ));
    }
    let count = r.u32()? as usize;
    let mut episodes = Vec::with_capacity(count.min(100_000));
    for e in 0..count {
        let at = |msg: String| Error::load(origin, format!("episode {e}: {msg}"));
        let env_id = r.string().map_err(|err| at(err.to_string()))?;
        let k = r.u32()? as usize;
        let t = r.u32()? as usize;
        let d = r.u32()? as usize;
        let states = r.f64s(t * k * d).map_err(|err| at(err.to_string()))?;
        let rows = r.u32()? as usize;
        if rows + 1 != t {
            return Err(at(format!(
                "{rows} label rows for {t} states, expected {}",
                t.saturating_sub(1)
            )));
        }
        let gt_mode = r.i32s(rows * k).map_err(|err| at(err.to_string()))?;
        let gt_ctx = r.i32s(rows * k).map_err(|err| at(err.to_string()))?;
        let ep = Episode {
            env_id,
            k,
            t,
            d,
            states,
            gt_mode,
            gt_ctx,
        };
        ep.validate().map_err(|err| at(err.to_string()))?;
        episodes.push(ep);
    }
    if !r.is_empty() {
        return Err(Error::load(origin, "trailing bytes after last episode"));
    }
    Ok(episodes)
}

pub fn save_episodes(path: &Path, episodes: &[Episode]) -> Result<()> {
    fs::write(path, encode_episodes(episodes)).map_err(|e| Error::io(path, e))
}

/// Loads one episode file, or every file listed in a directory's manifest.
pub fn load_episodes(path: &Path) -> Result<Vec<Episode>> {
    if path.is_dir() {
        let manifest = load_manifest(&path.join("manifest.txt"))?;
        let mut all = Vec::new();
        for entry in &manifest.entries {
            let file = path.join(&entry.file);
            let eps = load_episodes(&file)?;
            if eps.len() != entry.episodes {
                return Err(Error::load(
                    &file,
                    format!(
                        "manifest lists {} episodes, file holds {}",
                        entry.episodes,
                        eps.len()
                    ),
                ));
            }
            all.extend(eps);
        }
        return Ok(all);
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_episodes(&bytes, path)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub env_id: String,
    pub episodes: usize,
    pub file: String,
}

/// Human-readable `key = value` description of a generated dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub seed: u64,
    pub episode_len: usize,
    pub generator_version: u32,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn total_episodes(&self) -> usize {
        self.entries.iter().map(|e| e.episodes).sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dataset_id = {}", self.dataset_id);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "episode_len = {}", self.episode_len);
        let _ = writeln!(s, "generator_version = {}", self.generator_version);
        for e in &self.entries {
            let _ = writeln!(s, "env = {} {} {}", e.env_id, e.episodes, e.file);
        }
        s
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let bad = |msg: String| Error::load(origin, msg);
        let mut m = DatasetManifest {
            dataset_id: String::new(),
            seed: 0,
            episode_len: 0,
            generator_version: 0,
            entries: Vec::new(),
        };
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected 'key = value'", n + 1)))?;
            let value = value.trim();
            let num = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| bad(format!("line {}: bad number '{v}'", n + 1)))
            };
            match key.trim() {
                "dataset_id" => m.dataset_id = value.to_string(),
                "seed" => m.seed = num(value)?,
                "episode_len" => m.episode_len = num(value)? as usize,
                "generator_version" => m.generator_version = num(value)? as u32,
                "env" => {
                    let parts: Vec<&str> = value.split_whitespace().collect();
                    if parts.len() != 3 {
                        return Err(bad(format!("line {}: env needs 'id count file'", n + 1)));
                    }
                    m.entries.push(ManifestEntry {
                        env_id: parts[0].to_string(),
                        episodes: num(parts[1])? as usize,
                        file: parts[2].to_string(),
                    });
                }
                other => return Err(bad(format!("line {}: unknown key '{other}'", n + 1))),
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(PathBuf::from(path), e))?;
    DatasetManifest::parse(&text, path)
}

//! Run directories: config, manifest with content hashes, metrics CSV,
//! checkpoints and demonstration stores.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{Agent, AgentConfig, Algo, Transition};
use crate::error::{Error, Result};
use crate::nn::{read_checkpoint, write_checkpoint};

pub const METRICS_HEADER: &str = "step,episode,return,final_distance_m,critic_loss,actor_loss,temperature";
pub const MANIFEST_FORMAT: &str = "resinsert-run";
pub const MANIFEST_VERSION: u32 = 1;

/// One training-episode row of `metrics.csv`. Losses are absent before the
/// first gradient update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub episode: u64,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub final_distance_m: f64,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub temperature: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    /// CSV line without the trailing newline; floats use the shortest
    /// representation that round-trips.
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.episode,
            self.episode_return,
            self.final_distance_m,
            opt(self.critic_loss),
            opt(self.actor_loss),
            opt(self.temperature)
        )
    }
}

/// Append-only metrics file. Each row is written with a single `write_all`
/// followed by a flush, so an interrupted run leaves only complete lines.
#[derive(Debug)]
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
    rows: u64,
}

impl MetricsWriter {
    /// Creates (truncating) the file and writes the header.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut file = File::create(&path)?;
        file.write_all(format!("{METRICS_HEADER}\n").as_bytes())?;
        file.flush()?;
        Ok(Self { path, file, rows: 0 })
    }

    /// Opens an existing file for appending after checking its header.
    pub fn open_append(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut first = String::new();
        BufReader::new(File::open(&path)?).read_line(&mut first)?;
        if first.trim_end() != METRICS_HEADER {
            return Err(Error::Schema {
                expected: METRICS_HEADER.into(),
                got: first.trim_end().into(),
            });
        }
        let rows = read_metrics(&path)?.len() as u64;
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok(Self { path, file, rows })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        let line = format!("{}\n", row.to_csv_line());
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.rows += 1;
        Ok(())
    }
}

/// Free-function form of [`MetricsWriter::append`].
pub fn append_metrics(writer: &mut MetricsWriter, row: &MetricsRow) -> Result<()> {
    writer.append(row)
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let malformed = |reason: String| Error::MalformedCsv {
        path: path.to_path_buf(),
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != METRICS_HEADER {
        return Err(malformed(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        let row: MetricsRow = rec.map_err(|e| malformed(e.to_string()))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub spec: serde_json::Value,
    pub seed: u64,
    pub code_version: String,
    pub files: Vec<FileEntry>,
    pub created_unix_s: u64,
    pub updated_unix_s: u64,
}

/// Agent metadata stored next to the network checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentMeta {
    pub algo: Algo,
    pub config: AgentConfig,
    pub log_temperature: Option<f64>,
    pub networks: Vec<String>,
    pub update_step: u64,
}

#[derive(Debug)]
pub struct LoadedRun {
    pub manifest: RunManifest,
    pub agent: Option<Agent>,
    /// Non-fatal findings such as a config that differs from the expected one.
    pub warnings: Vec<String>,
}

fn now_s() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

/// Keys sorted recursively, so equal configs compare equal as strings.
pub fn canonical_json(v: &serde_json::Value) -> String {
    fn sort(v: &serde_json::Value) -> serde_json::Value {
        match v {
            serde_json::Value::Object(m) => {
                let mut keys: Vec<&String> = m.keys().collect();
                keys.sort();
                let mut out = serde_json::Map::new();
                for k in keys {
                    out.insert(k.clone(), sort(&m[k]));
                }
                serde_json::Value::Object(out)
            }
            serde_json::Value::Array(a) => serde_json::Value::Array(a.iter().map(sort).collect()),
            other => other.clone(),
        }
    }
    sort(v).to_string()
}

fn collect_files(dir: &Path, rel: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir.join(rel))?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let r = rel.join(e.file_name());
        if e.file_type()?.is_dir() {
            collect_files(dir, &r, out)?;
        } else {
            let name = e.file_name();
            let name = name.to_string_lossy();
            if name != "manifest.json" && !name.ends_with(".tmp") {
                out.push(r);
            }
        }
    }
    Ok(())
}

/// Writes `config.json` and the agent checkpoints (if any) into `dir`, then
/// hashes every file in the directory into `manifest.json`.
pub fn save_run(
    dir: impl AsRef<Path>,
    spec: &serde_json::Value,
    seed: u64,
    agent: Option<&Agent>,
    update_step: u64,
) -> Result<RunManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_json(&dir.join("config.json"), spec)?;
    if let Some(agent) = agent {
        let ckpt = dir.join("checkpoints");
        fs::create_dir_all(&ckpt)?;
        let mut names = Vec::new();
        for (name, params) in agent.networks() {
            let mut w = BufWriter::new(File::create(ckpt.join(format!("{name}.bin")))?);
            write_checkpoint(&mut w, params, update_step)?;
            w.flush()?;
            names.push(name.to_string());
        }
        let meta = AgentMeta {
            algo: agent.algo(),
            config: agent.config().clone(),
            log_temperature: agent.log_temperature(),
            networks: names,
            update_step,
        };
        write_json(&ckpt.join("agent.json"), &meta)?;
    }
    let created = match fs::read(dir.join("manifest.json")) {
        Ok(bytes) => serde_json::from_slice::<RunManifest>(&bytes)
            .map(|m| m.created_unix_s)
            .unwrap_or_else(|_| now_s()),
        Err(_) => now_s(),
    };
    let manifest = build_manifest(dir, spec, seed, created)?;
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Re-hashes the directory contents into a fresh manifest.
pub fn build_manifest(dir: &Path, spec: &serde_json::Value, seed: u64, created_unix_s: u64) -> Result<RunManifest> {
    let mut paths = Vec::new();
    collect_files(dir, Path::new(""), &mut paths)?;
    let mut files = Vec::with_capacity(paths.len());
    for p in paths {
        let full = dir.join(&p);
        files.push(FileEntry {
            path: p
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/"),
            sha256: sha256_file(&full)?,
            bytes: fs::metadata(&full)?.len(),
        });
    }
    Ok(RunManifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        spec: spec.clone(),
        seed,
        code_version: env!("CARGO_PKG_VERSION").into(),
        files,
        created_unix_s,
        updated_unix_s: now_s(),
    })
}

/// Verifies every manifest entry and rebuilds the agent from its
/// checkpoints. When `expected_spec` is given and differs from the stored
/// one, a warning is recorded.
pub fn load_run(dir: impl AsRef<Path>, expected_spec: Option<&serde_json::Value>) -> Result<LoadedRun> {
    let dir = dir.as_ref();
    let mpath = dir.join("manifest.json");
    if !mpath.exists() {
        return Err(Error::MissingArtifact(mpath));
    }
    let manifest: RunManifest = serde_json::from_slice(&fs::read(&mpath)?)?;
    if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
        return Err(Error::Schema {
            expected: format!("{MANIFEST_FORMAT} v{MANIFEST_VERSION}"),
            got: format!("{} v{}", manifest.format, manifest.version),
        });
    }
    for entry in &manifest.files {
        let p = dir.join(&entry.path);
        if !p.exists() {
            return Err(Error::MissingArtifact(p));
        }
        let actual = sha256_file(&p)?;
        if actual != entry.sha256 {
            return Err(Error::Corrupt {
                path: p,
                expected: entry.sha256.clone(),
                actual,
            });
        }
    }
    let mut warnings = Vec::new();
    if let Some(expected) = expected_spec {
        if canonical_json(expected) != canonical_json(&manifest.spec) {
            warnings.push("config mismatch: run was written by a different config".to_string());
        }
    }
    let meta_path = dir.join("checkpoints").join("agent.json");
    let agent = if meta_path.exists() {
        let meta: AgentMeta = serde_json::from_slice(&fs::read(&meta_path)?)?;
        let mut agent = Agent::new(meta.algo, meta.config.clone())?;
        for name in &meta.networks {
            let p = dir.join("checkpoints").join(format!("{name}.bin"));
            if !p.exists() {
                return Err(Error::MissingArtifact(p));
            }
            let (params, _) = read_checkpoint(BufReader::new(File::open(&p)?))?;
            agent.set_network(name, params)?;
        }
        if let Some(t) = meta.log_temperature {
            agent.set_log_temperature(t);
        }
        Some(agent)
    } else {
        None
    };
    Ok(LoadedRun {
        manifest,
        agent,
        warnings,
    })
}

pub fn write_demos(path: impl AsRef<Path>, demos: &[Transition]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in demos {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_demos(path: impl AsRef<Path>) -> Result<Vec<Transition>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

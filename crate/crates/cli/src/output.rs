//! Output files and their parsers.
//!
//! * trajectories: CSV preceded by `# key=value` comment lines, columns
//!   `run_id,particle,t,x,y,z,status`;
//! * fields: raw little-endian `f64` values in row-major order plus a JSON sidecar;
//! * statistics and the manifest: JSON objects.
//!
//! Every file carries `schema_version`.

use crate::config::SCHEMA_VERSION;
use crate::error::{CliError, CliResult};
use pilotwave_core::guide::{Status, TrajectoryRecord};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const TRAJECTORY_HEADER: [&str; 7] = ["run_id", "particle", "t", "x", "y", "z", "status"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub run_id: u64,
    pub particle: u32,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisInfo {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSidecar {
    pub schema_version: u32,
    pub name: String,
    pub data_file: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub endianness: String,
    pub axes: Vec<AxisInfo>,
    #[serde(default)]
    pub attributes: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub experiment: String,
    pub seed: u64,
    pub config: Value,
    pub versions: BTreeMap<String, String>,
    pub rng: String,
    pub threads: usize,
    pub wall_time_s: f64,
    pub timestamp: String,
    pub files: Vec<FileEntry>,
    pub summary: Value,
}

/// Comment lines and rows of a CSV data file.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvFile {
    pub header: BTreeMap<String, String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Output directory that remembers what was written to it.
pub struct Output {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Output {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    fn path(&mut self, name: &str, kind: &str) -> PathBuf {
        self.files.push(FileEntry {
            path: name.to_string(),
            kind: kind.to_string(),
        });
        self.dir.join(name)
    }

    /// Write a CSV table with `# key=value` header lines.
    pub fn write_csv(
        &mut self,
        name: &str,
        kind: &str,
        header: &[(String, String)],
        columns: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> CliResult<PathBuf> {
        let path = self.path(name, kind);
        let io = |e: std::io::Error| CliError::io(&path, e);
        let mut buf = Vec::new();
        writeln!(buf, "# schema_version={SCHEMA_VERSION}").map_err(io)?;
        writeln!(buf, "# kind={kind}").map_err(io)?;
        for (k, v) in header {
            writeln!(buf, "# {k}={v}").map_err(io)?;
        }
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let csv_err = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
            w.write_record(columns).map_err(csv_err)?;
            for r in rows {
                w.write_record(&r).map_err(csv_err)?;
            }
            w.flush().map_err(io)?;
        }
        std::fs::write(&path, buf).map_err(io)?;
        Ok(path)
    }

    pub fn write_trajectories(&mut self, name: &str, rows: &[TrajectoryRow]) -> CliResult<PathBuf> {
        self.write_csv(
            name,
            "trajectories",
            &[],
            &TRAJECTORY_HEADER,
            rows.iter().map(|r| {
                vec![
                    r.run_id.to_string(),
                    r.particle.to_string(),
                    r.t.to_string(),
                    r.x.to_string(),
                    r.y.to_string(),
                    r.z.to_string(),
                    r.status.clone(),
                ]
            }),
        )
    }

    pub fn write_field(
        &mut self,
        name: &str,
        shape: &[usize],
        axes: Vec<AxisInfo>,
        attributes: BTreeMap<String, Value>,
        data: &[f64],
    ) -> CliResult<PathBuf> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(CliError::Runtime(format!(
                "field {name}: shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        let bin = format!("{name}.bin");
        let path = self.path(&bin, "field-data");
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        let side = FieldSidecar {
            schema_version: SCHEMA_VERSION,
            name: name.to_string(),
            data_file: bin,
            shape: shape.to_vec(),
            dtype: "f64".into(),
            endianness: "little".into(),
            axes,
            attributes,
        };
        self.write_json(
            &format!("{name}.json"),
            "field-sidecar",
            &serde_json::to_value(side).expect("sidecar serializes"),
        )
    }

    /// Pretty JSON with `schema_version` added to top-level objects.
    pub fn write_json(&mut self, name: &str, kind: &str, value: &Value) -> CliResult<PathBuf> {
        let path = self.path(name, kind);
        let mut v = value.clone();
        if let Value::Object(m) = &mut v {
            m.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
        }
        let text = serde_json::to_string_pretty(&v).expect("JSON values serialize");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

/// Rows for every recorded configuration; particle numbering starts at 1.
pub fn trajectory_rows(
    run_id: u64,
    rec: &TrajectoryRecord,
    particle_offset: u32,
) -> Vec<TrajectoryRow> {
    let status = rec.status.as_str();
    let last = rec.configs.len().saturating_sub(1);
    rec.configs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| {
            let st = if i == last {
                status
            } else {
                Status::Ok.as_str()
            };
            c.positions
                .iter()
                .enumerate()
                .map(move |(p, x)| TrajectoryRow {
                    run_id,
                    particle: particle_offset + p as u32 + 1,
                    t: c.t,
                    x: x[0],
                    y: x[1],
                    z: x[2],
                    status: st.to_string(),
                })
        })
        .collect()
}

fn check_version(found: Option<u64>, what: &Path) -> CliResult<()> {
    match found {
        Some(v) if v == SCHEMA_VERSION as u64 => Ok(()),
        Some(v) => Err(CliError::Config(format!(
            "{}: unsupported schema_version {v}",
            what.display()
        ))),
        None => Err(CliError::Config(format!(
            "{}: missing schema_version",
            what.display()
        ))),
    }
}

pub fn read_csv(path: &Path) -> CliResult<CsvFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut header = BTreeMap::new();
    let mut body = String::new();
    for line in text.lines() {
        match line.strip_prefix("# ") {
            Some(kv) => {
                let (k, v) = kv.split_once('=').ok_or_else(|| {
                    CliError::Config(format!(
                        "{}: malformed header line {line:?}",
                        path.display()
                    ))
                })?;
                header.insert(k.to_string(), v.to_string());
            }
            None => {
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    check_version(
        header.get("schema_version").and_then(|v| v.parse().ok()),
        path,
    )?;
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let bad = |e: csv::Error| CliError::Config(format!("{}: {e}", path.display()));
    let columns = r
        .headers()
        .map_err(bad)?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()
        .map_err(bad)?;
    Ok(CsvFile {
        header,
        columns,
        rows,
    })
}

pub fn read_trajectories(path: &Path) -> CliResult<Vec<TrajectoryRow>> {
    let f = read_csv(path)?;
    if f.columns != TRAJECTORY_HEADER {
        return Err(CliError::Config(format!(
            "{}: unexpected columns {:?}",
            path.display(),
            f.columns
        )));
    }
    f.rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let bad = || CliError::Config(format!("{}: bad row {}", path.display(), i + 1));
            let num = |k: usize| r[k].parse::<f64>().map_err(|_| bad());
            let status = r[6].clone();
            if !matches!(status.as_str(), "ok" | "node_encounter" | "exited") {
                return Err(bad());
            }
            Ok(TrajectoryRow {
                run_id: r[0].parse().map_err(|_| bad())?,
                particle: r[1].parse().map_err(|_| bad())?,
                t: num(2)?,
                x: num(3)?,
                y: num(4)?,
                z: num(5)?,
                status,
            })
        })
        .collect()
}

pub fn read_json(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    check_version(v.get("schema_version").and_then(Value::as_u64), path)?;
    Ok(v)
}

pub fn read_manifest(path: &Path) -> CliResult<Manifest> {
    let v = read_json(path)?;
    serde_json::from_value(v).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Sidecar and values of a field snapshot, given the sidecar path.
pub fn read_field(sidecar: &Path) -> CliResult<(FieldSidecar, Vec<f64>)> {
    let v = read_json(sidecar)?;
    let side: FieldSidecar = serde_json::from_value(v)
        .map_err(|e| CliError::Config(format!("{}: {e}", sidecar.display())))?;
    if side.dtype != "f64" || side.endianness != "little" {
        return Err(CliError::Config(format!(
            "{}: only little-endian f64 is supported",
            sidecar.display()
        )));
    }
    let bin = sidecar.with_file_name(&side.data_file);
    let bytes = std::fs::read(&bin).map_err(|e| CliError::io(&bin, e))?;
    let n: usize = side.shape.iter().product();
    if bytes.len() != 8 * n {
        return Err(CliError::Config(format!(
            "{}: expected {} bytes, found {}",
            bin.display(),
            8 * n,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of eight")))
        .collect();
    Ok((side, data))
}

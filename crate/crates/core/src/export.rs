//! Serialization of run results.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so files
//! are byte-stable for a given result. Node ids in files are 1-based.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::clock::ClockTrace;
use crate::consensus::{ReplicaSummary, SimTrace, SweepPoint, WeightMatrix};
use crate::error::{Error, Result};

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let map = |e: csv::Error| Error::Export(e.to_string());
    w.write_record(header).map_err(map)?;
    for row in rows {
        w.write_record(&row).map_err(map)?;
    }
    w.into_inner().map_err(|e| Error::Export(e.to_string()))
}

fn json_bytes(value: &serde_json::Value) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| Error::Export(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

fn one_based(ids: &[usize]) -> Vec<usize> {
    ids.iter().map(|i| i + 1).collect()
}

fn header(fixed: &[&str]) -> Vec<String> {
    fixed.iter().map(|s| s.to_string()).collect()
}

/// Columns `k, V, x_1..x_n` (just `k, V` when states were not recorded).
pub fn trace_csv(trace: &SimTrace) -> Result<Vec<u8>> {
    let mut cols = header(&["k", "V"]);
    let with_states = !trace.states.is_empty();
    if with_states {
        cols.extend((1..=trace.n).map(|i| format!("x_{i}")));
    }
    let rows = trace.disagreement.iter().enumerate().map(|(k, v)| {
        let mut row = vec![k.to_string(), v.to_string()];
        if with_states {
            row.extend(trace.states[k].iter().map(|x| x.to_string()));
        }
        row
    });
    csv_bytes(&cols, rows)
}

pub fn trace_json(trace: &SimTrace) -> Result<Vec<u8>> {
    json_bytes(&json!({
        "n": trace.n,
        "normal": one_based(&trace.normal),
        "faulty": one_based(&trace.faulty),
        "disagreement": trace.disagreement,
        "states": trace.states,
        "final_state": trace.final_state,
        "rooted_steps": trace.rooted_steps,
    }))
}

/// Columns `k, i, j, a_ij` over all off-diagonal pairs.
pub fn weights_csv(k: usize, m: &WeightMatrix) -> Result<Vec<u8>> {
    let n = m.n();
    let rows = (0..n).flat_map(move |i| {
        (0..n)
            .filter(move |&j| j != i)
            .map(move |j| vec![k.to_string(), (i + 1).to_string(), (j + 1).to_string(), m.get(i, j).to_string()])
    });
    csv_bytes(&header(&["k", "i", "j", "a_ij"]), rows)
}

pub fn weights_json(k: usize, m: &WeightMatrix) -> Result<Vec<u8>> {
    let rows: Vec<&[f64]> = (0..m.n()).map(|i| m.row(i)).collect();
    json_bytes(&json!({ "k": k, "n": m.n(), "weights": rows }))
}

pub fn replicas_csv(summaries: &[ReplicaSummary]) -> Result<Vec<u8>> {
    let rows = summaries.iter().map(|s| {
        vec![
            s.replica.to_string(),
            s.convergence_count.to_string(),
            s.converged.to_string(),
            s.final_disagreement.to_string(),
        ]
    });
    csv_bytes(&header(&["replica", "convergence_count", "converged", "final_V"]), rows)
}

pub fn replicas_json(summaries: &[ReplicaSummary]) -> Result<Vec<u8>> {
    let list: Vec<_> = summaries
        .iter()
        .map(|s| {
            json!({
                "replica": s.replica,
                "convergence_count": s.convergence_count,
                "converged": s.converged,
                "final_V": s.final_disagreement,
            })
        })
        .collect();
    json_bytes(&json!({ "replicas": list }))
}

/// Columns `fault_prob, mean_count, rep_count`.
pub fn sweep_csv(points: &[SweepPoint]) -> Result<Vec<u8>> {
    let rows = points
        .iter()
        .map(|p| vec![p.fault_prob.to_string(), p.mean_count.to_string(), p.reps.to_string()]);
    csv_bytes(&header(&["fault_prob", "mean_count", "rep_count"]), rows)
}

pub fn sweep_json(points: &[SweepPoint]) -> Result<Vec<u8>> {
    let list: Vec<_> = points
        .iter()
        .map(|p| {
            json!({
                "fault_prob": p.fault_prob,
                "mean_count": p.mean_count,
                "rep_count": p.reps,
                "counts": p.counts,
            })
        })
        .collect();
    json_bytes(&json!({ "points": list }))
}

/// Columns `k, i, alpha, beta, x_prime, x_dprime, tau`.
pub fn clock_trace_csv(trace: &ClockTrace) -> Result<Vec<u8>> {
    let rows = (0..trace.tau.len()).flat_map(|k| {
        (0..trace.n).map(move |i| {
            vec![
                k.to_string(),
                (i + 1).to_string(),
                trace.alpha[k][i].to_string(),
                trace.beta[k][i].to_string(),
                trace.x_prime[k][i].to_string(),
                trace.x_dprime[k][i].to_string(),
                trace.tau[k][i].to_string(),
            ]
        })
    });
    csv_bytes(&header(&["k", "i", "alpha", "beta", "x_prime", "x_dprime", "tau"]), rows)
}

/// Columns `k, dx_prime, dx_dprime, dtau`.
pub fn clock_disagreement_csv(trace: &ClockTrace) -> Result<Vec<u8>> {
    let rows = trace
        .disagreement
        .iter()
        .enumerate()
        .map(|(k, d)| vec![k.to_string(), d.0.to_string(), d.1.to_string(), d.2.to_string()]);
    csv_bytes(&header(&["k", "dx_prime", "dx_dprime", "dtau"]), rows)
}

pub fn clock_json(trace: &ClockTrace) -> Result<Vec<u8>> {
    let hardware: Vec<_> = trace
        .hardware
        .iter()
        .map(|h| json!({ "alpha_star": h.alpha, "beta_star": h.beta }))
        .collect();
    let disagreement: Vec<[f64; 3]> = trace.disagreement.iter().map(|d| [d.0, d.1, d.2]).collect();
    json_bytes(&json!({
        "n": trace.n,
        "normal": one_based(&trace.normal),
        "faulty": one_based(&trace.faulty),
        "period": trace.period,
        "hardware": hardware,
        "alpha": trace.alpha,
        "beta": trace.beta,
        "x_prime": trace.x_prime,
        "x_dprime": trace.x_dprime,
        "tau": trace.tau,
        "disagreement": disagreement,
    }))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Written last, after every output is in place.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub generator: String,
    pub kind: String,
    pub preset: Option<String>,
    pub seed: u64,
    pub config_digest: String,
    pub duration_secs: f64,
    pub outputs: Vec<OutputFile>,
    /// SHA-256 over `path:sha256` lines of all outputs, in listed order.
    pub outputs_digest: String,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Output files collected in memory and committed together.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Writes every file, then returns their descriptions in order.
    pub fn commit(&self, dir: &Path) -> Result<Vec<OutputFile>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut described = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            write_atomic(&dir.join(name), bytes)?;
            described.push(OutputFile {
                path: name.clone(),
                bytes: bytes.len() as u64,
                sha256: hex::encode(Sha256::digest(bytes)),
            });
        }
        Ok(described)
    }
}

pub fn outputs_digest(outputs: &[OutputFile]) -> String {
    let mut h = Sha256::new();
    for o in outputs {
        h.update(format!("{}:{}\n", o.path, o.sha256).as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(manifest).map_err(|e| Error::Export(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(&dir.join(MANIFEST_NAME), &bytes)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&text).map_err(|e| Error::Parse {
        path,
        message: e.to_string(),
    })
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Export(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp: PathBuf = path.with_file_name(tmp_name);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_csv_is_one_based() {
        let m = WeightMatrix::from_rows(&[vec![0.0, 0.25], vec![0.125, 0.0]]).unwrap();
        let text = String::from_utf8(weights_csv(7, &m).unwrap()).unwrap();
        assert_eq!(text, "k,i,j,a_ij\n7,1,2,0.25\n7,2,1,0.125\n");
    }

    #[test]
    fn floats_round_trip() {
        let m = WeightMatrix::from_rows(&[vec![0.0, 0.1 + 0.2], vec![1e-300, 0.0]]).unwrap();
        let text = String::from_utf8(weights_csv(0, &m).unwrap()).unwrap();
        let values: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(values, vec![0.1 + 0.2, 1e-300]);
    }

    #[test]
    fn atomic_write_and_digest() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = OutputSet::new();
        set.add("a.csv", b"x\n1\n".to_vec());
        set.add("b.csv", b"y\n2\n".to_vec());
        let files = set.commit(dir.path()).unwrap();
        assert_eq!(std::fs::read(dir.path().join("a.csv")).unwrap(), b"x\n1\n");
        assert_eq!(files[1].bytes, 4);
        let names: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert!(names.iter().all(|n| !n.ends_with(".tmp")));
        let d1 = outputs_digest(&files);
        let d2 = outputs_digest(&set.commit(dir.path()).unwrap());
        assert_eq!(d1, d2);
    }
}

//! CSV artifacts and their JSON sidecar manifests.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use exit_mlmc::{LevelRecord, MlmcResult};
use serde::Serialize;

use crate::error::{CliError, Result};

pub const LEVELS_HEADER: &str =
    "estimator,level,h,N,mean_diff,var_diff,mean_fine,var_fine,kurtosis,cost_per_sample,normalized_cost";
pub const RUN_HEADER: &str =
    "estimator,eps,status,estimate,reference,error,chosen_level,total_cost,eps2_cost,estimator_variance";
pub const RUN_LEVELS_HEADER: &str = "estimator,eps,level,h,N,mean_diff,var_diff,cost_per_sample";

/// Everything needed to reproduce an artifact, written next to it as
/// `<file>.manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub problem: String,
    pub payoff: String,
    pub estimators: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<u32>>,
    pub samples: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_level: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_level: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub seed: u64,
    pub output: PathBuf,
    pub truncation: u32,
    pub refine_factor: u32,
    pub h0: f64,
    pub m_rule: String,
    pub threads: Option<usize>,
    pub version: String,
}

/// Writes `contents` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::io(&tmp, e));
    }
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn manifest_path(csv: &Path) -> PathBuf {
    let mut name = csv.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// `<stem>_levels.<ext>` next to `csv`.
pub fn run_levels_path(csv: &Path) -> PathBuf {
    let stem = csv
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = csv
        .extension()
        .map(|e| format!(".{}", e.to_string_lossy()))
        .unwrap_or_default();
    csv.with_file_name(format!("{stem}_levels{ext}"))
}

pub fn write_with_manifest(csv: &Path, contents: &str, manifest: &RunManifest) -> Result<()> {
    write_atomic(csv, contents.as_bytes())?;
    let mut m = manifest.clone();
    m.output = csv.to_path_buf();
    let json = serde_json::to_string_pretty(&m).expect("manifest serializes");
    write_atomic(&manifest_path(csv), (json + "\n").as_bytes())
}

/// Shortest round-trip form, `nan` for missing values.
fn num(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        _ => "nan".into(),
    }
}

pub fn levels_row(out: &mut String, estimator: &str, r: &LevelRecord<f64>) {
    let _ = writeln!(
        out,
        "{estimator},{},{},{},{},{},{},{},{},{},{}",
        r.level,
        num(Some(r.h)),
        r.samples,
        num(Some(r.mean)),
        num(Some(r.variance)),
        num(Some(r.mean_fine)),
        num(Some(r.variance_fine)),
        num(r.kurtosis),
        num(Some(r.cost_per_sample)),
        num(Some(r.normalized_cost)),
    );
}

/// Outcome of one adaptive run as reported in the summary CSV.
pub enum RunOutcome<'a> {
    Done(&'a MlmcResult<f64>),
    LevelCap { max_level: usize, estimate: f64 },
}

pub fn run_row(out: &mut String, estimator: &str, eps: f64, reference: Option<f64>, outcome: &RunOutcome<'_>) {
    let error = |est: f64| reference.map(|r| est - r);
    match outcome {
        RunOutcome::Done(r) => {
            let _ = writeln!(
                out,
                "{estimator},{},ok,{},{},{},{},{},{},{}",
                num(Some(eps)),
                num(Some(r.estimate)),
                num(reference),
                num(error(r.estimate)),
                r.chosen_level,
                r.total_cost,
                num(Some(eps * eps * r.total_cost as f64)),
                num(Some(r.estimator_variance)),
            );
        }
        RunOutcome::LevelCap { max_level, estimate } => {
            let _ = writeln!(
                out,
                "{estimator},{},level_cap,{},{},{},{max_level},nan,nan,nan",
                num(Some(eps)),
                num(Some(*estimate)),
                num(reference),
                num(error(*estimate)),
            );
        }
    }
}

pub fn run_level_rows(out: &mut String, estimator: &str, eps: f64, r: &MlmcResult<f64>) {
    for l in &r.levels {
        let _ = writeln!(
            out,
            "{estimator},{},{},{},{},{},{},{}",
            num(Some(eps)),
            l.level,
            num(Some(l.h)),
            l.samples,
            num(Some(l.mean)),
            num(Some(l.variance)),
            num(Some(l.cost_per_sample)),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_paths() {
        assert_eq!(
            manifest_path(Path::new("out/levels.csv")),
            PathBuf::from("out/levels.csv.manifest.json")
        );
        assert_eq!(
            run_levels_path(Path::new("out/run.csv")),
            PathBuf::from("out/run_levels.csv")
        );
        assert_eq!(run_levels_path(Path::new("run")), PathBuf::from("run_levels"));
    }

    #[test]
    fn numbers_round_trip() {
        assert_eq!(num(Some(0.1)), "0.1");
        assert_eq!(num(None), "nan");
        assert_eq!(num(Some(f64::INFINITY)), "nan");
        let x = 0.435_930_123_456_789_1;
        assert_eq!(num(Some(x)).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = std::env::temp_dir().join(format!("exit-mlmc-out-{}", std::process::id()));
        let path = dir.join("nested").join("a.csv");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
        fs::remove_dir_all(dir).unwrap();
    }
}

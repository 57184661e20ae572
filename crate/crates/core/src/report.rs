//! Output plumbing: atomic writes, digests, the run manifest and the CSV
//! tables every command emits.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_model::Level;
use crate::diagnostics::{AnovaResult, TukeyComparison};
use crate::influence::{ContagionVerdict, TraitScope, TransitionDiagram};
use crate::network::{EgoWindow, HomophilyRow};
use crate::transitions::{CountMatrix, CountTable, DesignRow, PercentBase, TransitionRecord, COVARIATES};

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub input_digests: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    /// Digest of everything above; stable across identical runs.
    pub run_digest: String,
    pub outputs: Vec<String>,
    pub duration_ms: u64,
}

impl RunManifest {
    pub fn new(command: &str, config_digest: String, input_digests: BTreeMap<String, String>, seed: Option<u64>) -> Self {
        let tool_version = env!("CARGO_PKG_VERSION").to_string();
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0]);
        h.update(config_digest.as_bytes());
        for (k, v) in &input_digests {
            h.update([0]);
            h.update(k.as_bytes());
            h.update([1]);
            h.update(v.as_bytes());
        }
        h.update([0]);
        h.update(seed.map(|s| s.to_string()).unwrap_or_default().as_bytes());
        h.update([0]);
        h.update(tool_version.as_bytes());
        RunManifest {
            command: command.to_string(),
            config_digest,
            input_digests,
            seed,
            tool_version,
            run_digest: hex::encode(h.finalize()),
            outputs: Vec::new(),
            duration_ms: 0,
        }
    }
}

/// Accumulates output files of one command under a directory.
pub struct OutputDir {
    pub root: PathBuf,
    pub digest: String,
    written: Vec<String>,
}

impl OutputDir {
    pub fn new(root: &Path, digest: &str) -> std::io::Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(OutputDir { root: root.to_path_buf(), digest: digest.to_string(), written: Vec::new() })
    }

    pub fn put(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
        let path = self.root.join(name);
        atomic_write(&path, bytes)?;
        self.written.push(name.to_string());
        Ok(path)
    }

    /// CSV table headed by a `# run_digest=` comment line.
    pub fn put_csv(&mut self, name: &str, header: &[String], rows: Vec<Vec<String>>) -> std::io::Result<PathBuf> {
        let bytes = csv_bytes(&self.digest, header, rows)?;
        self.put(name, &bytes)
    }

    /// JSON document; objects get a `run_digest` field.
    pub fn put_json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<PathBuf> {
        let mut v = serde_json::to_value(value).map_err(std::io::Error::other)?;
        if let serde_json::Value::Object(m) = &mut v {
            m.insert("run_digest".into(), serde_json::Value::String(self.digest.clone()));
        }
        let text = serde_json::to_string_pretty(&v).map_err(std::io::Error::other)?;
        self.put(name, text.as_bytes())
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}

pub fn csv_bytes(digest: &str, header: &[String], rows: Vec<Vec<String>>) -> std::io::Result<Vec<u8>> {
    let mut out = format!("# run_digest={digest}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header).map_err(std::io::Error::other)?;
        for r in rows {
            w.write_record(&r).map_err(std::io::Error::other)?;
        }
        w.flush()?;
    }
    Ok(out)
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

pub fn num(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else {
        format!("{x}")
    }
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_else(|| "NA".into())
}

pub fn windows_table(windows: &[EgoWindow], states: &[String]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = strings(&["ego_id", "day", "slot", "alter_id", "hits"]);
    header.extend(states.iter().map(|s| format!("alter_level_{s}")));
    let mut rows = Vec::new();
    for w in windows {
        for (alter, hits) in &w.contacts {
            let mut r = vec![w.ego.to_string(), w.day.to_string(), w.slot.to_string(), alter.to_string(), hits.to_string()];
            for s in states {
                let level = w.alter_levels.get(s).and_then(|m| m.get(alter));
                r.push(level.map(|l| l.to_string()).unwrap_or_else(|| "NA".into()));
            }
            rows.push(r);
        }
    }
    (header, rows)
}

pub fn intensity_table(windows: &[EgoWindow], states: &[String]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rows = Vec::new();
    for w in windows {
        for s in states {
            if let Some(k) = w.intensity(s) {
                rows.push(vec![
                    w.ego.to_string(),
                    w.day.to_string(),
                    w.slot.to_string(),
                    s.clone(),
                    num(k.l),
                    num(k.n),
                    num(k.h),
                ]);
            }
        }
    }
    (strings(&["ego_id", "day", "slot", "state", "L", "N", "H"]), rows)
}

pub fn transitions_table<'a>(records: impl IntoIterator<Item = &'a TransitionRecord>) -> (Vec<String>, Vec<Vec<String>>) {
    let rows = records
        .into_iter()
        .map(|r| {
            vec![
                r.state.clone(),
                r.ego.to_string(),
                r.day.to_string(),
                r.slot.to_string(),
                r.from_level.to_string(),
                r.to_level.to_string(),
                num(r.intensities.l),
                num(r.intensities.n),
                num(r.intensities.h),
                num(r.trait_z),
                num(r.period_dummy),
            ]
        })
        .collect();
    (strings(&["state", "ego_id", "day", "slot", "from", "to", "L", "N", "H", "trait_z", "period"]), rows)
}

pub fn design_table(rows: &[DesignRow]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["response".to_string()];
    header.extend(COVARIATES.iter().map(|c| c.to_string()));
    header.extend(strings(&["cluster", "day", "slot"]));
    let body = rows
        .iter()
        .map(|r| {
            let mut v = vec![num(r.response)];
            v.extend(r.covariates.iter().map(|&c| num(c)));
            v.extend([r.cluster.to_string(), r.day.to_string(), r.slot.to_string()]);
            v
        })
        .collect();
    (header, body)
}

pub fn counts_table(per_state: &BTreeMap<String, CountMatrix>) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rows = Vec::new();
    for (state, m) in per_state {
        for f in Level::ALL {
            for t in Level::ALL {
                rows.push(vec![state.clone(), f.to_string(), t.to_string(), m.get(f, t).to_string()]);
            }
        }
    }
    (strings(&["state", "from", "to", "count"]), rows)
}

/// Parses `state,from,to,count` rows (comment lines starting with `#`).
pub fn read_counts(text: &str) -> Result<BTreeMap<String, CountMatrix>, String> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| format!("missing column `{name}`"));
    let (cs, cf, ct, cc) = (col("state")?, col("from")?, col("to")?, col("count")?);
    let mut out: BTreeMap<String, CountMatrix> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| format!("row {}: {e}", i + 1))?;
        let from: Level = rec[cf].parse()?;
        let to: Level = rec[ct].parse()?;
        let count: u64 = rec[cc].parse().map_err(|_| format!("row {}: bad count {:?}", i + 1, &rec[cc]))?;
        out.entry(rec[cs].to_string()).or_default().0[from.index()][to.index()] = count;
    }
    Ok(out)
}

pub fn transition_summary_table(table: &CountTable) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rows = Vec::new();
    if let Some(summary) = &table.summary {
        for f in Level::ALL {
            for t in Level::ALL {
                let c = summary[f.index()][t.index()];
                rows.push(vec![
                    format!("{f}->{t}"),
                    c.max.to_string(),
                    c.min.to_string(),
                    num(c.median),
                    num(c.mean),
                    format!("{:.0}", c.mean),
                ]);
            }
        }
    }
    (strings(&["transition", "max", "min", "median", "mean", "mean_rounded"]), rows)
}

pub fn percentages_table(per_state: &BTreeMap<String, CountMatrix>) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rows = Vec::new();
    for (state, m) in per_state {
        for (base, label) in [(PercentBase::Cumulative, "cumulative"), (PercentBase::Total, "total")] {
            let p = m.to_level_percentages(base);
            rows.push(vec![
                state.clone(),
                label.to_string(),
                format!("{:.3}", p[0]),
                format!("{:.3}", p[1]),
                format!("{:.3}", p[2]),
            ]);
        }
    }
    (strings(&["state", "base", "to_L", "to_N", "to_H"]), rows)
}

pub fn homophily_table(per_state: &BTreeMap<String, Vec<HomophilyRow>>) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rows = Vec::new();
    for (state, hs) in per_state {
        for h in hs {
            rows.push(vec![
                state.clone(),
                h.ego_level.to_string(),
                num(h.count_ratio.mean),
                num(h.count_ratio.sd),
                num(h.hit_ratio.mean),
                num(h.hit_ratio.sd),
                h.count_ratio.n_windows.to_string(),
            ]);
        }
    }
    (strings(&["state", "ego_level", "count_ratio_mean", "count_ratio_sd", "hit_ratio_mean", "hit_ratio_sd", "n_windows"]), rows)
}

pub fn diurnal_table(results: &[AnovaResult]) -> (Vec<String>, Vec<Vec<String>>) {
    let rows = results
        .iter()
        .map(|a| {
            let means = a.groups.iter().map(|g| format!("{}={:.4}", g.label, g.mean)).collect::<Vec<_>>().join(";");
            vec![a.state.clone(), a.grouping.as_str().to_string(), num(a.f), num(a.df_between), num(a.df_within), num(a.p), means]
        })
        .collect();
    (strings(&["state", "grouping", "F", "df_between", "df_within", "p", "group_means"]), rows)
}

pub fn tukey_table(results: &[(String, Vec<TukeyComparison>)]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rows = Vec::new();
    for (grouping, cs) in results {
        for c in cs {
            rows.push(vec![
                c.state.clone(),
                grouping.clone(),
                c.group_a.clone(),
                c.group_b.clone(),
                num(c.diff),
                num(c.q),
                num(c.p_adjusted),
            ]);
        }
    }
    (strings(&["state", "grouping", "group_a", "group_b", "diff", "q", "p_adjusted"]), rows)
}

pub fn summary_matrix_table(diagrams: &[TransitionDiagram]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = strings(&["state", "ego_level"]);
    for z in Level::ALL {
        for scope in TraitScope::CONDITIONAL {
            header.push(format!("alter_{z}_{scope}"));
        }
    }
    let mut rows = Vec::new();
    for d in diagrams {
        for x in Level::ALL {
            let mut r = vec![d.state.clone(), x.to_string()];
            for z in Level::ALL {
                for scope in TraitScope::CONDITIONAL {
                    r.push(d.matrix.cell(x, z, scope));
                }
            }
            rows.push(r);
        }
    }
    (header, rows)
}

pub fn contagion_table(verdicts: &[ContagionVerdict]) -> (Vec<String>, Vec<Vec<String>>) {
    let rows = verdicts
        .iter()
        .map(|v| {
            vec![
                v.state.clone(),
                v.level.to_string(),
                v.scope.map(|s| s.to_string()).unwrap_or_else(|| "combined".into()),
                format!("{:?}", v.verdict),
                v.failing.clone().unwrap_or_default(),
            ]
        })
        .collect();
    (strings(&["state", "level", "scope", "verdict", "failing_condition"]), rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn manifest_digest_ignores_duration() {
        let mut a = RunManifest::new("fit", "abc".into(), BTreeMap::new(), Some(1));
        let b = RunManifest::new("fit", "abc".into(), BTreeMap::new(), Some(1));
        a.duration_ms = 99;
        assert_eq!(a.run_digest, b.run_digest);
        assert_ne!(a.run_digest, RunManifest::new("fit", "abc".into(), BTreeMap::new(), Some(2)).run_digest);
    }

    #[test]
    fn counts_round_trip() {
        let mut m = BTreeMap::new();
        m.insert("x".to_string(), CountMatrix([[1, 2, 3], [4, 5, 6], [7, 8, 9]]));
        let (h, rows) = counts_table(&m);
        let bytes = csv_bytes("d", &h, rows).unwrap();
        assert_eq!(read_counts(std::str::from_utf8(&bytes).unwrap()).unwrap(), m);
    }
}

//! Artifact writers. Files are written to a temporary sibling and renamed,
//! so a reader never sees a partial file.

use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use crane_core::log::{EpisodeLog, LogRecord};
use serde::{Deserialize, Serialize};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Fixed six-decimal formatting used for every CSV number.
pub fn f6(x: f64) -> String {
    if x.is_finite() {
        let s = format!("{x:.6}");
        // avoid "-0.000000"
        if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') { format!("{:.6}", 0.0) } else { s }
    } else {
        "nan".to_string()
    }
}

/// CSV text with a leading `# manifest=<hash>` comment line.
pub fn csv_with_manifest(manifest_hash: &str, header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut out = format!("# manifest={manifest_hash}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    Ok(out)
}

/// Reads a CSV written by [`csv_with_manifest`], returning the manifest
/// hash, the header and the rows.
pub fn read_csv(text: &str) -> Result<(String, Vec<String>, Vec<Vec<String>>)> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let Some(hash) = first.strip_prefix("# manifest=") else { bail!("missing manifest line") };
    let mut r = csv::Reader::from_reader(rest.as_bytes());
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r.records().map(|rec| Ok(rec?.iter().map(str::to_string).collect())).collect::<Result<_>>()?;
    Ok((hash.to_string(), header, rows))
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    manifest: String,
}

/// Episode logs as JSON lines, preceded by a `{"manifest": …}` line.
pub fn episodes_jsonl(manifest_hash: &str, logs: &[EpisodeLog]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    serde_json::to_writer(&mut out, &ManifestLine { manifest: manifest_hash.to_string() })?;
    out.push(b'\n');
    for log in logs {
        log.write_jsonl(&mut out)?;
    }
    Ok(out)
}

/// Inverse of [`episodes_jsonl`]: splits the records into episodes at each
/// header record.
pub fn read_episodes<R: BufRead>(input: R) -> Result<(String, Vec<EpisodeLog>)> {
    let mut lines = input.lines();
    let first = lines.next().context("empty log file")??;
    let manifest: ManifestLine = serde_json::from_str(&first).context("missing manifest line")?;
    let mut logs: Vec<EpisodeLog> = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogRecord = serde_json::from_str(&line)?;
        if matches!(rec, LogRecord::Header(_)) {
            logs.push(EpisodeLog::default());
        }
        match logs.last_mut() {
            Some(log) => log.push(rec),
            None => bail!("log record before the first episode header"),
        }
    }
    Ok((manifest.manifest, logs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_decimal_formatting() {
        assert_eq!(f6(1.0), "1.000000");
        assert_eq!(f6(-0.0000001), "0.000000");
        assert_eq!(f6(-2.5), "-2.500000");
        assert_eq!(f6(1.0 / 3.0), "0.333333");
        assert_eq!(f6(f64::NAN), "nan");
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![vec!["a".to_string(), f6(0.5)], vec!["b,c".to_string(), f6(2.0)]];
        let bytes = csv_with_manifest("abc123", &["label", "x"], &rows).unwrap();
        let (hash, header, back) = read_csv(std::str::from_utf8(&bytes).unwrap()).unwrap();
        assert_eq!(hash, "abc123");
        assert_eq!(header, vec!["label", "x"]);
        assert_eq!(back, rows);
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("f.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
    }
}

//! Line-delimited JSON manifest: one header object, then one record per line.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusManifest, PatchRecord};
use crate::error::{Error, Result};

const FORMAT: &str = "geolatent-manifest/1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    threshold: f64,
    stratify_cap: usize,
    seed: u64,
    class_counts: BTreeMap<u8, usize>,
    records: usize,
}

pub fn write_manifest(path: &Path, manifest: &CorpusManifest) -> Result<()> {
    let header = Header {
        format: FORMAT.into(),
        threshold: manifest.threshold,
        stratify_cap: manifest.stratify_cap,
        seed: manifest.seed,
        class_counts: manifest.class_counts.clone(),
        records: manifest.records.len(),
    };
    let mut out = Vec::new();
    push_line(&mut out, &header);
    for r in &manifest.records {
        push_line(&mut out, r);
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

fn push_line<T: Serialize>(out: &mut Vec<u8>, value: &T) {
    serde_json::to_writer(&mut *out, value).expect("manifest entries serialize");
    out.push(b'\n');
}

pub fn read_manifest(path: &Path) -> Result<CorpusManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| Error::format(path, "empty manifest"))?;
    let header: Header =
        serde_json::from_str(first).map_err(|e| Error::format(path, format!("line 1: bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(Error::format(path, format!("unsupported manifest format `{}`", header.format)));
    }
    let mut records = Vec::with_capacity(header.records);
    for (i, line) in lines {
        let r: PatchRecord =
            serde_json::from_str(line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        records.push(r);
    }
    if records.len() != header.records {
        return Err(Error::format(
            path,
            format!("header announces {} records, found {}", header.records, records.len()),
        ));
    }
    Ok(CorpusManifest {
        records,
        class_counts: header.class_counts,
        threshold: header.threshold,
        stratify_cap: header.stratify_cap,
        seed: header.seed,
    })
}

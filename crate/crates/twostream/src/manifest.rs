//! Tab-separated dataset manifest.
//!
//! ```text
//! #spec_hash	<hex sha-256 of the synth spec>
//! move_left_000_hi	0	clips/move_left_000_hi	train	HIGH
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use twostream_core::synth::{DatasetManifest, ManifestEntry, SplitTag, SynthSpec};
use twostream_core::video::Resolution;

use crate::error::{Error, IoContext, Result};

const HEADER_KEY: &str = "#spec_hash";

/// Hex SHA-256 of the spec's canonical TOML form.
pub fn spec_hash(spec: &SynthSpec) -> String {
    let text = toml::to_string(spec).expect("synth spec serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn to_tsv(manifest: &DatasetManifest, spec_hash: &str) -> String {
    let mut out = format!("{}\t{}\n", HEADER_KEY, spec_hash);
    for e in &manifest.entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            e.clip_id,
            e.label,
            e.path,
            e.split.as_str(),
            e.resolution.as_str()
        ));
    }
    out
}

/// Parses a manifest, returning it with the spec hash from its header.
/// `origin` only labels errors.
pub fn parse_tsv(text: &str, origin: &Path) -> Result<(DatasetManifest, String)> {
    let mut lines = text.lines().enumerate();
    let hash = match lines.next() {
        Some((_, l)) => l
            .strip_prefix(HEADER_KEY)
            .and_then(|r| r.strip_prefix('\t'))
            .filter(|h| !h.is_empty() && h.bytes().all(|b| b.is_ascii_hexdigit()))
            .ok_or_else(|| Error::format(origin, format!("first line must be `{}<TAB><hex>`", HEADER_KEY)))?
            .to_string(),
        None => return Err(Error::format(origin, "empty manifest")),
    };
    let mut entries = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::format(origin, format!("line {}: {}", i + 1, what));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(bad(&format!("expected 5 tab-separated fields, found {}", fields.len())));
        }
        entries.push(ManifestEntry {
            clip_id: fields[0].to_string(),
            label: fields[1].parse().map_err(|_| bad("label is not an integer"))?,
            path: fields[2].to_string(),
            split: SplitTag::parse(fields[3]).ok_or_else(|| bad("unknown split tag"))?,
            resolution: Resolution::parse(fields[4]).ok_or_else(|| bad("unknown resolution tag"))?,
        });
    }
    let manifest = DatasetManifest { entries };
    manifest
        .validate()
        .map_err(|e| Error::format(origin, e.to_string()))?;
    Ok((manifest, hash))
}

pub fn write(path: &Path, manifest: &DatasetManifest, spec_hash: &str) -> Result<()> {
    fs::write(path, to_tsv(manifest, spec_hash)).at(path)
}

pub fn read(path: &Path) -> Result<(DatasetManifest, String)> {
    let text = fs::read_to_string(path).at(path)?;
    parse_tsv(&text, path)
}

/// Checks that every entry's path exists below `root`.
pub fn check_paths(manifest: &DatasetManifest, root: &Path) -> Result<()> {
    for e in &manifest.entries {
        let p = root.join(&e.path);
        if !p.is_dir() {
            return Err(Error::format(p, format!("clip {} listed in the manifest is missing", e.clip_id)));
        }
    }
    Ok(())
}

//! Parameter checkpoints: `<stem>.bin` holds the flat values as little-endian
//! `f64`; `<stem>.manifest` lists one `name<TAB>shape<TAB>offset` line per
//! segment, shape dimensions comma-separated.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::param::{Layout, ParamVector};
use crate::error::{Error, Result};

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("manifest"))
}

pub fn manifest_text(layout: &Layout) -> String {
    let mut out = String::new();
    for s in layout.segments() {
        let shape: Vec<String> = s.shape.iter().map(usize::to_string).collect();
        out.push_str(&format!("{}\t{}\t{}\n", s.name, shape.join(","), s.offset));
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Layout> {
    let mut layout = Layout::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |why: &str| Error::Checkpoint(format!("manifest line {}: {why}", n + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad("expected name, shape and offset"));
        }
        let shape = fields[1]
            .split(',')
            .map(|d| d.parse::<usize>().map_err(|_| bad("bad shape")))
            .collect::<Result<Vec<_>>>()?;
        let offset: usize = fields[2].parse().map_err(|_| bad("bad offset"))?;
        let at = layout.push(fields[0], &shape)?;
        if at != offset {
            return Err(bad(&format!("offset {offset} but segments imply {at}")));
        }
    }
    Ok(layout)
}

pub fn save(params: &ParamVector, stem: &Path) -> Result<()> {
    let (bin, manifest) = paths(stem);
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for v in params.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(bin, bytes)?;
    fs::write(manifest, manifest_text(params.layout()))?;
    Ok(())
}

/// Loads a checkpoint, requiring its manifest to equal `expected` when given.
pub fn load(stem: &Path, expected: Option<&Arc<Layout>>) -> Result<ParamVector> {
    let (bin, manifest) = paths(stem);
    let layout = parse_manifest(&fs::read_to_string(manifest)?)?;
    let layout = match expected {
        Some(e) if **e != layout => {
            return Err(Error::Checkpoint("manifest does not match the model layout".into()))
        }
        Some(e) => e.clone(),
        None => Arc::new(layout),
    };
    let bytes = fs::read(bin)?;
    if bytes.len() != layout.len() * 8 {
        return Err(Error::Checkpoint(format!(
            "{} bytes for {} parameters",
            bytes.len(),
            layout.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    ParamVector::from_values(layout, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = Layout::new();
        l.push("a.0.weight", &[2, 3]).unwrap();
        l.push("a.0.bias", &[2]).unwrap();
        let l = Arc::new(l);
        let values = vec![-0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3, 0.4];
        let p = ParamVector::from_values(l.clone(), values).unwrap();
        let stem = dir.path().join("ckpt");
        save(&p, &stem).unwrap();
        let text = fs::read_to_string(stem.with_extension("manifest")).unwrap();
        assert_eq!(text, "a.0.weight\t2,3\t0\na.0.bias\t2\t6\n");
        let bytes = fs::read(stem.with_extension("bin")).unwrap();
        assert_eq!(&bytes[8..16], &(-0.2f64).to_le_bytes());
        assert_eq!(load(&stem, Some(&l)).unwrap(), p);
    }

    #[test]
    fn mismatched_layout_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = Layout::new();
        l.push("a", &[2]).unwrap();
        let p = ParamVector::zeros(Arc::new(l));
        let stem = dir.path().join("x");
        save(&p, &stem).unwrap();
        let mut other = Layout::new();
        other.push("b", &[2]).unwrap();
        assert!(load(&stem, Some(&Arc::new(other))).is_err());
    }
}

//! JSON-lines molecule datasets and split manifests.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::molgraph::{Atom, Bond, BondType, Element, Hybridization, MolecularGraph, NUM_TARGETS};
use crate::training::Split;

use super::write_atomic;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomRecord {
    pub element: Element,
    #[serde(default)]
    pub acceptor: bool,
    #[serde(default)]
    pub donor: bool,
    #[serde(default)]
    pub aromatic: bool,
    #[serde(default)]
    pub hybridization: Option<Hybridization>,
    #[serde(default)]
    pub hydrogen_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partial_charge: Option<f64>,
}

/// One dataset line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoleculeRecord {
    pub schema: u32,
    #[serde(default)]
    pub explicit_hydrogens: bool,
    pub atoms: Vec<AtomRecord>,
    /// `(a, b, type)` triples.
    pub bonds: Vec<(usize, usize, BondType)>,
    /// One position per atom, or empty when the molecule has no geometry.
    #[serde(default)]
    pub positions: Vec<[f64; 3]>,
    pub targets: [f64; NUM_TARGETS],
}

impl MoleculeRecord {
    pub fn from_graph(g: &MolecularGraph) -> Self {
        let atoms = g
            .atoms
            .iter()
            .map(|a| AtomRecord {
                element: a.element,
                acceptor: a.acceptor,
                donor: a.donor,
                aromatic: a.aromatic,
                hybridization: a.hybridization,
                hydrogen_count: a.hydrogen_count,
                partial_charge: a.partial_charge,
            })
            .collect();
        let positions = if g.has_positions() {
            g.atoms.iter().map(|a| a.position.expect("checked")).collect()
        } else {
            Vec::new()
        };
        Self {
            schema: SCHEMA_VERSION,
            explicit_hydrogens: g.explicit_hydrogens,
            atoms,
            bonds: g
                .bonds
                .iter()
                .map(|b| (b.endpoints.0, b.endpoints.1, b.bond_type))
                .collect(),
            positions,
            targets: g.targets,
        }
    }

    pub fn into_graph(self) -> Result<MolecularGraph> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Contract(format!(
                "dataset schema {} is not supported (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        if !self.positions.is_empty() && self.positions.len() != self.atoms.len() {
            return Err(Error::Contract(format!(
                "{} positions for {} atoms",
                self.positions.len(),
                self.atoms.len()
            )));
        }
        let atoms = self
            .atoms
            .into_iter()
            .enumerate()
            .map(|(i, a)| Atom {
                element: a.element,
                acceptor: a.acceptor,
                donor: a.donor,
                aromatic: a.aromatic,
                hybridization: a.hybridization,
                hydrogen_count: a.hydrogen_count,
                position: self.positions.get(i).copied(),
                partial_charge: a.partial_charge,
            })
            .collect();
        let g = MolecularGraph {
            atoms,
            bonds: self.bonds.into_iter().map(|(a, b, t)| Bond::new(a, b, t)).collect(),
            explicit_hydrogens: self.explicit_hydrogens,
            targets: self.targets,
        };
        g.validate()?;
        Ok(g)
    }
}

pub fn to_jsonl(mols: &[MolecularGraph]) -> Result<String> {
    let mut out = String::new();
    for m in mols {
        out.push_str(&serde_json::to_string(&MoleculeRecord::from_graph(m))?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses a dataset; errors carry the 1-based line number.
pub fn from_jsonl(text: &str) -> Result<Vec<MolecularGraph>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let wrap = |message: String| Error::Parse { line: i + 1, message };
            let record: MoleculeRecord = serde_json::from_str(line).map_err(|e| wrap(e.to_string()))?;
            record.into_graph().map_err(|e| wrap(e.to_string()))
        })
        .collect()
}

pub fn save_dataset(path: &Path, mols: &[MolecularGraph]) -> Result<()> {
    write_atomic(path, to_jsonl(mols)?.as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<Vec<MolecularGraph>> {
    from_jsonl(&std::fs::read_to_string(path)?)
}

/// A split plus its hash, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub hash: String,
    pub split: Split,
}

impl SplitManifest {
    pub fn new(split: Split) -> Self {
        Self {
            hash: split.hash(),
            split,
        }
    }
}

pub fn save_split(path: &Path, split: &Split) -> Result<String> {
    let manifest = SplitManifest::new(split.clone());
    write_atomic(path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest.hash)
}

/// Loads a manifest and checks that its stored hash matches its content.
pub fn load_split(path: &Path) -> Result<SplitManifest> {
    let manifest: SplitManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if manifest.split.hash() != manifest.hash {
        return Err(Error::Contract(format!(
            "split manifest {} does not match its hash",
            path.display()
        )));
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synthetic::generate_synthetic;

    #[test]
    fn round_trip_is_exact() {
        let mols = generate_synthetic(20, 4);
        let text = to_jsonl(&mols).unwrap();
        let back = from_jsonl(&text).unwrap();
        assert_eq!(back, mols);
        assert_eq!(to_jsonl(&back).unwrap(), text);
    }

    #[test]
    fn bad_line_is_reported() {
        let mols = generate_synthetic(2, 1);
        let mut text = to_jsonl(&mols).unwrap();
        text.push_str("{\"schema\": 1}\n");
        assert!(matches!(from_jsonl(&text), Err(Error::Parse { line: 3, .. })));
        let wrong_schema = to_jsonl(&mols[..1]).unwrap().replace("\"schema\":1", "\"schema\":7");
        assert!(matches!(from_jsonl(&wrong_schema), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn split_manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        let split = crate::training::split_dataset(30, crate::training::SplitSizes { valid: 5, test: 5 }, 2).unwrap();
        let hash = save_split(&path, &split).unwrap();
        let loaded = load_split(&path).unwrap();
        assert_eq!(loaded.split, split);
        assert_eq!(loaded.hash, hash);
    }
}

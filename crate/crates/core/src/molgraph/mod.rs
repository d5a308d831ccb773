//! Molecular graphs, atom featurization and edge encodings.

mod encode;

pub use encode::{
    add_master_node, add_virtual_edges, alphabet_size, bin_distance, encode, to_directed,
    undirected_edges,
    DirectedEdge, EdgeFeature, EdgeKind, EdgeRepr, EncodedGraph, UndirectedEdge, BIN_COUNT,
    BOND_SYMBOLS, RAW_EDGE_WIDTH,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of regression targets carried by every molecule.
pub const NUM_TARGETS: usize = 13;

/// Target order used throughout: datasets, model heads, reports.
pub const TARGET_NAMES: [&str; NUM_TARGETS] = [
    "mu", "alpha", "HOMO", "LUMO", "gap", "R2", "ZPVE", "U0", "U", "H", "G", "Cv", "Omega",
];

pub const MAX_HEAVY_ATOMS: usize = 9;
pub const MAX_NODES_EXPLICIT_H: usize = 29;

/// Width of [`featurize_atom`] output without the partial charge.
pub const BASE_FEATURE_WIDTH: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    H,
    C,
    N,
    O,
    F,
}

impl Element {
    pub const ALL: [Element; 5] = [Element::H, Element::C, Element::N, Element::O, Element::F];

    pub fn from_symbol(symbol: &str) -> Result<Self> {
        match symbol.trim() {
            "H" => Ok(Element::H),
            "C" => Ok(Element::C),
            "N" => Ok(Element::N),
            "O" => Ok(Element::O),
            "F" => Ok(Element::F),
            other => Err(Error::UnsupportedElement(other.to_string())),
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
        }
    }

    pub fn atomic_number(self) -> u32 {
        match self {
            Element::H => 1,
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::F => 9,
        }
    }

    /// Position in the one-hot element encoding.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Usual neutral valence.
    pub fn valence(self) -> u32 {
        match self {
            Element::H | Element::F => 1,
            Element::C => 4,
            Element::N => 3,
            Element::O => 2,
        }
    }

    pub fn is_heavy(self) -> bool {
        self != Element::H
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hybridization {
    Sp,
    Sp2,
    Sp3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub acceptor: bool,
    pub donor: bool,
    pub aromatic: bool,
    pub hybridization: Option<Hybridization>,
    pub hydrogen_count: u32,
    pub position: Option<[f64; 3]>,
    pub partial_charge: Option<f64>,
}

impl Atom {
    pub fn new(element: Element) -> Self {
        Self {
            element,
            acceptor: false,
            donor: false,
            aromatic: false,
            hybridization: None,
            hydrogen_count: 0,
            position: None,
            partial_charge: None,
        }
    }

    pub fn atomic_number(&self) -> u32 {
        self.element.atomic_number()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BondType {
    Single,
    Double,
    Triple,
    Aromatic,
    Virtual,
    Master,
}

impl BondType {
    pub fn is_chemical(self) -> bool {
        matches!(
            self,
            BondType::Single | BondType::Double | BondType::Triple | BondType::Aromatic
        )
    }

    /// Index among the four chemical bond symbols.
    pub fn chemical_index(self) -> Option<usize> {
        match self {
            BondType::Single => Some(0),
            BondType::Double => Some(1),
            BondType::Triple => Some(2),
            BondType::Aromatic => Some(3),
            _ => None,
        }
    }

    /// Bond order contribution to valence; aromatic counts 1.5.
    pub fn order(self) -> f64 {
        match self {
            BondType::Single => 1.0,
            BondType::Double => 2.0,
            BondType::Triple => 3.0,
            BondType::Aromatic => 1.5,
            BondType::Virtual | BondType::Master => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bond {
    pub endpoints: (usize, usize),
    pub bond_type: BondType,
    pub distance: Option<f64>,
}

impl Bond {
    pub fn new(a: usize, b: usize, bond_type: BondType) -> Self {
        Self {
            endpoints: (a, b),
            bond_type,
            distance: None,
        }
    }

    pub fn key(&self) -> (usize, usize) {
        let (a, b) = self.endpoints;
        (a.min(b), a.max(b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MolecularGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    pub explicit_hydrogens: bool,
    pub targets: [f64; NUM_TARGETS],
}

impl MolecularGraph {
    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn heavy_atom_count(&self) -> usize {
        self.atoms.iter().filter(|a| a.element.is_heavy()).count()
    }

    pub fn has_positions(&self) -> bool {
        self.atoms.iter().all(|a| a.position.is_some())
    }

    /// Neighbor counts over chemical bonds.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.atoms.len()];
        for b in self.bonds.iter().filter(|b| b.bond_type.is_chemical()) {
            deg[b.endpoints.0] += 1;
            deg[b.endpoints.1] += 1;
        }
        deg
    }

    pub fn distance(&self, a: usize, b: usize) -> Option<f64> {
        let pa = self.atoms.get(a)?.position?;
        let pb = self.atoms.get(b)?.position?;
        Some(
            pa.iter()
                .zip(&pb)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let heavy = self.heavy_atom_count();
        if heavy > MAX_HEAVY_ATOMS {
            return Err(Error::Contract(format!(
                "{heavy} heavy atoms exceeds the limit of {MAX_HEAVY_ATOMS}"
            )));
        }
        if self.explicit_hydrogens {
            if self.atoms.len() > MAX_NODES_EXPLICIT_H {
                return Err(Error::Contract(format!(
                    "{} nodes exceeds the limit of {MAX_NODES_EXPLICIT_H}",
                    self.atoms.len()
                )));
            }
            if self.atoms.iter().any(|a| a.hydrogen_count != 0) {
                return Err(Error::Contract(
                    "hydrogen_count must be 0 when hydrogens are explicit nodes".into(),
                ));
            }
        } else if self.atoms.len() > MAX_HEAVY_ATOMS {
            return Err(Error::Contract(format!(
                "{} nodes exceeds the limit of {MAX_HEAVY_ATOMS}",
                self.atoms.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for bond in &self.bonds {
            let (a, b) = bond.endpoints;
            if a >= self.atoms.len() || b >= self.atoms.len() {
                return Err(Error::Contract(format!(
                    "bond ({a}, {b}) references a missing atom"
                )));
            }
            if a == b {
                return Err(Error::Contract(format!("self loop on atom {a}")));
            }
            if bond.bond_type == BondType::Master {
                return Err(Error::Contract(
                    "master edges belong to encoded graphs, not molecules".into(),
                ));
            }
            if let Some(d) = bond.distance {
                if !(d >= 0.0) {
                    return Err(Error::Contract(format!("negative bond distance {d}")));
                }
            }
            if !seen.insert(bond.key()) {
                return Err(Error::Contract(format!("duplicate bond ({a}, {b})")));
            }
        }
        if self.targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::Contract("non-finite target value".into()));
        }
        Ok(())
    }

    /// Relabels atoms so that old atom `i` becomes atom `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<MolecularGraph> {
        let n = self.atoms.len();
        let mut check = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut check[p], true)) {
            return Err(Error::Contract("not a permutation of the atom indices".into()));
        }
        let mut atoms = self.atoms.clone();
        for (old, atom) in self.atoms.iter().enumerate() {
            atoms[perm[old]] = atom.clone();
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                endpoints: (perm[b.endpoints.0], perm[b.endpoints.1]),
                ..b.clone()
            })
            .collect();
        Ok(MolecularGraph {
            atoms,
            bonds,
            explicit_hydrogens: self.explicit_hydrogens,
            targets: self.targets,
        })
    }

    /// Fills missing hybridization from bond orders: sp for a triple bond or
    /// two double bonds, sp2 for one double or any aromatic bond, sp3 when all
    /// bonds (including implicit hydrogens) are single. Hydrogens and atoms
    /// without bonds stay unset.
    pub fn infer_missing_hybridization(&mut self) {
        let mut doubles = vec![0u32; self.atoms.len()];
        let mut triples = vec![0u32; self.atoms.len()];
        let mut aromatic = vec![0u32; self.atoms.len()];
        let mut total = vec![0u32; self.atoms.len()];
        for b in self.bonds.iter().filter(|b| b.bond_type.is_chemical()) {
            for v in [b.endpoints.0, b.endpoints.1] {
                total[v] += 1;
                match b.bond_type {
                    BondType::Double => doubles[v] += 1,
                    BondType::Triple => triples[v] += 1,
                    BondType::Aromatic => aromatic[v] += 1,
                    _ => {}
                }
            }
        }
        for (i, atom) in self.atoms.iter_mut().enumerate() {
            if atom.hybridization.is_some() || atom.element == Element::H {
                continue;
            }
            atom.hybridization = if triples[i] > 0 || doubles[i] >= 2 {
                Some(Hybridization::Sp)
            } else if doubles[i] == 1 || aromatic[i] > 0 {
                Some(Hybridization::Sp2)
            } else if total[i] + atom.hydrogen_count > 0 {
                Some(Hybridization::Sp3)
            } else {
                None
            };
        }
    }
}

/// Options controlling node features.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureOptions {
    pub partial_charge: bool,
}

impl FeatureOptions {
    pub fn width(&self) -> usize {
        BASE_FEATURE_WIDTH + usize::from(self.partial_charge)
    }
}

/// Node feature vector: element one-hot (H, C, N, O, F), atomic number,
/// acceptor, donor, aromatic, hybridization one-hot (sp, sp2, sp3; all zero
/// when unset), hydrogen count, and optionally the partial charge.
pub fn featurize_atom(atom: &Atom, options: FeatureOptions) -> Result<Vec<f64>> {
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let mut f = vec![0.0; options.width()];
    f[atom.element.index()] = 1.0;
    f[5] = f64::from(atom.atomic_number());
    f[6] = flag(atom.acceptor);
    f[7] = flag(atom.donor);
    f[8] = flag(atom.aromatic);
    match atom.hybridization {
        Some(Hybridization::Sp) => f[9] = 1.0,
        Some(Hybridization::Sp2) => f[10] = 1.0,
        Some(Hybridization::Sp3) => f[11] = 1.0,
        None => {}
    }
    f[12] = f64::from(atom.hydrogen_count);
    if options.partial_charge {
        f[13] = atom.partial_charge.ok_or_else(|| {
            Error::Contract("partial charge feature requested but atom has none".into())
        })?;
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn carbon_sp3_features() {
        let mut c = Atom::new(Element::C);
        c.hybridization = Some(Hybridization::Sp3);
        c.hydrogen_count = 4;
        let f = featurize_atom(&c, FeatureOptions::default()).unwrap();
        assert_eq!(
            f,
            vec![0., 1., 0., 0., 0., 6., 0., 0., 0., 0., 0., 1., 4.]
        );
    }

    #[test]
    fn explicit_hydrogen_features() {
        let h = Atom::new(Element::H);
        let f = featurize_atom(&h, FeatureOptions::default()).unwrap();
        assert_eq!(&f[..5], &[1., 0., 0., 0., 0.]);
        assert_eq!(f[12], 0.0);
    }

    #[test]
    fn feature_width() {
        // 5 element + atomic number + acceptor + donor + aromatic + 3 hybridization + H count
        assert_eq!(5 + 1 + 1 + 1 + 1 + 3 + 1, BASE_FEATURE_WIDTH);
        let f = featurize_atom(&Atom::new(Element::N), FeatureOptions::default()).unwrap();
        assert_eq!(f.len(), BASE_FEATURE_WIDTH);
        let mut charged = Atom::new(Element::N);
        charged.partial_charge = Some(-0.25);
        let opts = FeatureOptions { partial_charge: true };
        let f = featurize_atom(&charged, opts).unwrap();
        assert_eq!(f.len(), 14);
        assert_eq!(f[13], -0.25);
        assert!(featurize_atom(&Atom::new(Element::N), opts).is_err());
    }

    #[test]
    fn unknown_element() {
        assert!(matches!(
            Element::from_symbol("Cl"),
            Err(Error::UnsupportedElement(s)) if s == "Cl"
        ));
        assert_eq!(Element::from_symbol("O").unwrap().atomic_number(), 8);
    }

    fn chain(types: &[BondType]) -> MolecularGraph {
        let atoms = (0..=types.len()).map(|_| Atom::new(Element::C)).collect();
        let bonds = types
            .iter()
            .enumerate()
            .map(|(i, t)| Bond::new(i, i + 1, *t))
            .collect();
        MolecularGraph {
            atoms,
            bonds,
            explicit_hydrogens: false,
            targets: [0.0; NUM_TARGETS],
        }
    }

    #[test]
    fn hybridization_fallback() {
        let mut g = chain(&[BondType::Single, BondType::Double, BondType::Double, BondType::Triple]);
        g.infer_missing_hybridization();
        let hyb: Vec<_> = g.atoms.iter().map(|a| a.hybridization).collect();
        use Hybridization::*;
        assert_eq!(hyb, vec![Some(Sp3), Some(Sp2), Some(Sp), Some(Sp), Some(Sp)]);
    }

    #[test]
    fn validation_limits() {
        let mut g = chain(&[BondType::Single; 9]);
        assert!(g.validate().is_err(), "10 heavy atoms");
        g = chain(&[BondType::Single; 2]);
        g.validate().unwrap();
        g.bonds.push(Bond::new(1, 1, BondType::Single));
        assert!(g.validate().is_err(), "self loop");
        g.bonds.pop();
        g.bonds.push(Bond::new(0, 7, BondType::Single));
        assert!(g.validate().is_err(), "dangling endpoint");
        g.bonds.pop();
        g.explicit_hydrogens = true;
        g.atoms[0].hydrogen_count = 1;
        assert!(g.validate().is_err(), "explicit hydrogens with counts");
    }

    #[test]
    fn permutation_relabels_bonds() {
        let g = chain(&[BondType::Single, BondType::Double]);
        let p = g.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.bonds[0].endpoints, (2, 0));
        assert_eq!(p.bonds[1].endpoints, (0, 1));
        assert!(g.permuted(&[0, 0, 1]).is_err());
    }
}

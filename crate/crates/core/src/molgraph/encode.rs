use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{featurize_atom, Bond, BondType, FeatureOptions, MolecularGraph};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Chemical bond symbols: single, double, triple, aromatic.
pub const BOND_SYMBOLS: usize = 4;
/// Distance bins: `[0,2)`, eight half-Ångström bins over `[2,6)`, `[6,∞)`.
pub const BIN_COUNT: usize = 10;
/// Raw distance edge vector: distance followed by the bond one-hot.
pub const RAW_EDGE_WIDTH: usize = 1 + BOND_SYMBOLS;

/// Label given to virtual edges in the chemical representation.
const VIRTUAL_LABEL: usize = BOND_SYMBOLS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeRepr {
    /// Bonds only, labelled by bond type.
    #[serde(rename = "chemical")]
    Chemical,
    /// Fully connected; bond type for bonded pairs, distance bin otherwise.
    #[serde(rename = "bins")]
    DistanceBins,
    /// Fully connected; `[distance, bond one-hot]` per pair.
    #[serde(rename = "raw")]
    RawDistance,
}

impl EdgeRepr {
    pub fn needs_positions(self) -> bool {
        !matches!(self, EdgeRepr::Chemical)
    }

    pub fn is_discrete(self) -> bool {
        !matches!(self, EdgeRepr::RawDistance)
    }
}

impl std::str::FromStr for EdgeRepr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chemical" => Ok(EdgeRepr::Chemical),
            "bins" => Ok(EdgeRepr::DistanceBins),
            "raw" => Ok(EdgeRepr::RawDistance),
            other => Err(Error::Config(format!("unknown edge representation `{other}`"))),
        }
    }
}

/// Number of discrete labels for a representation; raw distance has none.
pub fn alphabet_size(repr: EdgeRepr) -> usize {
    match repr {
        EdgeRepr::Chemical => BOND_SYMBOLS + 1,
        EdgeRepr::DistanceBins => BOND_SYMBOLS + BIN_COUNT,
        EdgeRepr::RawDistance => 0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EdgeFeature {
    Label(usize),
    Vector([f64; RAW_EDGE_WIDTH]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Graph,
    /// Edge between an atom and the master node.
    Master,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UndirectedEdge {
    pub a: usize,
    pub b: usize,
    pub feature: EdgeFeature,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectedEdge {
    pub src: usize,
    pub dst: usize,
    pub feature: EdgeFeature,
    pub kind: EdgeKind,
}

/// Model-ready graph: node features plus directed, featurized edges.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedGraph {
    pub node_features: Tensor,
    pub edges: Vec<DirectedEdge>,
    pub representation: EdgeRepr,
    /// Width of the master node state when one is attached. The master is
    /// node index `num_atoms()`.
    pub master_dim: Option<usize>,
}

impl EncodedGraph {
    pub fn num_atoms(&self) -> usize {
        self.node_features.shape()[0]
    }

    pub fn num_nodes(&self) -> usize {
        self.num_atoms() + usize::from(self.master_dim.is_some())
    }

    pub fn feature_width(&self) -> usize {
        self.node_features.shape()[1]
    }

    pub fn master_index(&self) -> Option<usize> {
        self.master_dim.map(|_| self.num_atoms())
    }

    pub fn graph_edges(&self) -> impl Iterator<Item = &DirectedEdge> {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Graph)
    }

    /// Relabels atoms so that old atom `i` becomes atom `perm[i]`; the master
    /// node, if any, keeps its index.
    pub fn permuted(&self, perm: &[usize]) -> Result<EncodedGraph> {
        let n = self.num_atoms();
        if perm.len() != n {
            return Err(Error::Contract("permutation length mismatch".into()));
        }
        let width = self.feature_width();
        let mut data = vec![0.0; n * width];
        for (old, &new) in perm.iter().enumerate() {
            data[new * width..(new + 1) * width].copy_from_slice(self.node_features.row(old));
        }
        let map = |v: usize| if v < n { perm[v] } else { v };
        Ok(EncodedGraph {
            node_features: Tensor::new(&[n, width], data)?,
            edges: self
                .edges
                .iter()
                .map(|e| DirectedEdge {
                    src: map(e.src),
                    dst: map(e.dst),
                    ..e.clone()
                })
                .collect(),
            representation: self.representation,
            master_dim: self.master_dim,
        })
    }
}

/// Bin index of an interatomic distance in Ångström. Bin boundaries belong to
/// the upper bin: `[0,2) -> 0`, `[2+0.5(i-1), 2+0.5i) -> i` for `i = 1..=8`,
/// `[6,∞) -> 9`.
pub fn bin_distance(distance: f64) -> Result<usize> {
    if !(distance >= 0.0) || !distance.is_finite() {
        return Err(Error::Contract(format!(
            "distance must be finite and nonnegative, got {distance}"
        )));
    }
    Ok(if distance < 2.0 {
        0
    } else if distance >= 6.0 {
        BIN_COUNT - 1
    } else {
        // (distance - 2) / 0.5 is exact for the half-Ångström grid points.
        1 + ((distance - 2.0) * 2.0).floor() as usize
    })
}

/// Adds a `virtual` bond between every pair of atoms that is not bonded.
pub fn add_virtual_edges(g: &MolecularGraph) -> MolecularGraph {
    let n = g.atoms.len();
    let mut present = vec![false; n * n];
    for b in &g.bonds {
        let (a, c) = b.key();
        present[a * n + c] = true;
    }
    let mut out = g.clone();
    for a in 0..n {
        for c in a + 1..n {
            if !present[a * n + c] {
                out.bonds.push(Bond::new(a, c, BondType::Virtual));
            }
        }
    }
    out
}

/// Attaches a master node connected to every atom with the `master` edge type.
pub fn add_master_node(g: &EncodedGraph, d_master: usize) -> Result<EncodedGraph> {
    if d_master == 0 {
        return Err(Error::Config("master node dimension must be at least 1".into()));
    }
    if g.master_dim.is_some() {
        return Err(Error::Contract("graph already has a master node".into()));
    }
    let n = g.num_atoms();
    let undirected: Vec<UndirectedEdge> = (0..n)
        .map(|v| UndirectedEdge {
            a: v,
            b: n,
            feature: EdgeFeature::Label(0),
            kind: EdgeKind::Master,
        })
        .collect();
    let mut out = g.clone();
    out.edges.extend(to_directed(&undirected));
    out.master_dim = Some(d_master);
    Ok(out)
}

/// Each undirected edge becomes two directed edges carrying the same feature.
pub fn to_directed(edges: &[UndirectedEdge]) -> Vec<DirectedEdge> {
    edges
        .iter()
        .flat_map(|e| {
            [
                DirectedEdge {
                    src: e.a,
                    dst: e.b,
                    feature: e.feature.clone(),
                    kind: e.kind,
                },
                DirectedEdge {
                    src: e.b,
                    dst: e.a,
                    feature: e.feature.clone(),
                    kind: e.kind,
                },
            ]
        })
        .collect()
}

fn raw_feature(distance: f64, bond: Option<BondType>) -> [f64; RAW_EDGE_WIDTH] {
    let mut v = [0.0; RAW_EDGE_WIDTH];
    v[0] = distance;
    if let Some(i) = bond.and_then(BondType::chemical_index) {
        v[1 + i] = 1.0;
    }
    v
}

/// Undirected featurized edges of `g` under `repr`.
pub fn undirected_edges(g: &MolecularGraph, repr: EdgeRepr) -> Result<Vec<UndirectedEdge>> {
    if repr.needs_positions() && !g.has_positions() {
        return Err(Error::Contract(
            "distance-based edge representations need atom positions".into(),
        ));
    }
    let graph_edge = |a, b, feature| UndirectedEdge {
        a,
        b,
        feature,
        kind: EdgeKind::Graph,
    };
    match repr {
        EdgeRepr::Chemical => g
            .bonds
            .iter()
            .map(|b| {
                let label = match b.bond_type {
                    BondType::Virtual => VIRTUAL_LABEL,
                    t => t.chemical_index().ok_or_else(|| {
                        Error::Contract(format!("bond type {t:?} in a molecular graph"))
                    })?,
                };
                Ok(graph_edge(b.endpoints.0, b.endpoints.1, EdgeFeature::Label(label)))
            })
            .collect(),
        EdgeRepr::DistanceBins | EdgeRepr::RawDistance => {
            let bond_of: HashMap<(usize, usize), BondType> =
                g.bonds.iter().map(|b| (b.key(), b.bond_type)).collect();
            let n = g.atoms.len();
            let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
            for a in 0..n {
                for b in a + 1..n {
                    let distance = g.distance(a, b).expect("positions checked");
                    let chemical = bond_of.get(&(a, b)).copied().filter(|t| t.is_chemical());
                    let feature = match repr {
                        EdgeRepr::DistanceBins => match chemical.and_then(BondType::chemical_index) {
                            Some(i) => EdgeFeature::Label(i),
                            None => EdgeFeature::Label(BOND_SYMBOLS + bin_distance(distance)?),
                        },
                        _ => EdgeFeature::Vector(raw_feature(distance, chemical)),
                    };
                    out.push(graph_edge(a, b, feature));
                }
            }
            Ok(out)
        }
    }
}

/// Featurizes atoms and edges of `g` under `repr`.
pub fn encode(g: &MolecularGraph, repr: EdgeRepr, options: FeatureOptions) -> Result<EncodedGraph> {
    let width = options.width();
    let mut data = Vec::with_capacity(g.atoms.len() * width);
    for atom in &g.atoms {
        data.extend(featurize_atom(atom, options)?);
    }
    let node_features = Tensor::new(&[g.atoms.len(), width], data)?;
    let edges = to_directed(&undirected_edges(g, repr)?);
    Ok(EncodedGraph {
        node_features,
        edges,
        representation: repr,
        master_dim: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{Atom, Element, NUM_TARGETS};

    fn positioned(points: &[[f64; 3]], bonds: &[(usize, usize, BondType)]) -> MolecularGraph {
        MolecularGraph {
            atoms: points
                .iter()
                .map(|p| {
                    let mut a = Atom::new(Element::C);
                    a.position = Some(*p);
                    a
                })
                .collect(),
            bonds: bonds.iter().map(|&(a, b, t)| Bond::new(a, b, t)).collect(),
            explicit_hydrogens: false,
            targets: [0.0; NUM_TARGETS],
        }
    }

    #[test]
    fn bins_examples_and_boundaries() {
        assert_eq!(bin_distance(1.5).unwrap(), 0);
        assert_eq!(bin_distance(2.0).unwrap(), 1);
        assert_eq!(bin_distance(2.49).unwrap(), 1);
        assert_eq!(bin_distance(2.5).unwrap(), 2);
        assert_eq!(bin_distance(5.99).unwrap(), 8);
        assert_eq!(bin_distance(6.0).unwrap(), 9);
        assert_eq!(bin_distance(6.1).unwrap(), 9);
        assert_eq!(bin_distance(0.0).unwrap(), 0);
        assert!(matches!(bin_distance(-0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn bonded_pair_gets_bond_label() {
        let g = positioned(&[[0.0; 3], [1.2, 0.0, 0.0]], &[(0, 1, BondType::Double)]);
        let e = undirected_edges(&g, EdgeRepr::DistanceBins).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].feature, EdgeFeature::Label(1));
    }

    #[test]
    fn three_atom_chain_bins() {
        let g = positioned(
            &[[0.0; 3], [1.5, 0.0, 0.0], [1.5, 1.5, 1.0]],
            &[(0, 1, BondType::Single), (1, 2, BondType::Single)],
        );
        let e = undirected_edges(&g, EdgeRepr::DistanceBins).unwrap();
        assert_eq!(e.len(), 3);
        let labels: Vec<usize> = e
            .iter()
            .map(|e| match e.feature {
                EdgeFeature::Label(l) => l,
                _ => unreachable!(),
            })
            .collect();
        // 0-2 distance sqrt(1.5^2+1.5^2+1) = 2.345 -> bin 1 -> label 5
        assert_eq!(labels, vec![0, BOND_SYMBOLS + 1, 0]);
        assert!(labels.iter().all(|&l| l < 14));
    }

    #[test]
    fn raw_distance_nonbonded_vector() {
        let g = positioned(
            &[[0.0; 3], [1.2, 0.0, 0.0], [2.4, 0.0, 0.0]],
            &[(0, 1, BondType::Single), (1, 2, BondType::Single)],
        );
        let e = undirected_edges(&g, EdgeRepr::RawDistance).unwrap();
        let far = e.iter().find(|e| (e.a, e.b) == (0, 2)).unwrap();
        assert_eq!(far.feature, EdgeFeature::Vector([2.4, 0.0, 0.0, 0.0, 0.0]));
        let near = e.iter().find(|e| (e.a, e.b) == (0, 1)).unwrap();
        assert_eq!(near.feature, EdgeFeature::Vector([1.2, 1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn distance_reprs_need_positions() {
        let mut g = positioned(&[[0.0; 3], [1.0, 0.0, 0.0]], &[(0, 1, BondType::Single)]);
        g.atoms[1].position = None;
        assert!(matches!(
            encode(&g, EdgeRepr::RawDistance, FeatureOptions::default()),
            Err(Error::Contract(_))
        ));
        encode(&g, EdgeRepr::Chemical, FeatureOptions::default()).unwrap();
    }

    #[test]
    fn virtual_edges() {
        let path = positioned(&[[0.0; 3]; 3], &[(0, 1, BondType::Single), (1, 2, BondType::Single)]);
        let v = add_virtual_edges(&path);
        assert_eq!(v.bonds.len() - path.bonds.len(), 1);
        assert_eq!(&v.bonds[..2], &path.bonds[..]);
        assert_eq!(add_virtual_edges(&v), v);

        let star_bonds: Vec<_> = (1..9).map(|i| (0, i, BondType::Single)).collect();
        let star = positioned(&[[0.0; 3]; 9], &star_bonds);
        assert_eq!(add_virtual_edges(&star).bonds.len() - 8, 28);

        let e = undirected_edges(&v, EdgeRepr::Chemical).unwrap();
        assert_eq!(e[2].feature, EdgeFeature::Label(VIRTUAL_LABEL));
    }

    #[test]
    fn master_node_attachment() {
        let g = positioned(&[[0.0; 3]; 4], &[(0, 1, BondType::Single)]);
        let enc = encode(&g, EdgeRepr::Chemical, FeatureOptions::default()).unwrap();
        let m = add_master_node(&enc, 8).unwrap();
        assert_eq!(m.num_nodes(), 5);
        assert_eq!(m.edges.len() - enc.edges.len(), 2 * 4);
        assert_eq!(m.master_index(), Some(4));
        assert!(add_master_node(&enc, 0).is_err());
    }

    #[test]
    fn directed_doubles_and_preserves_labels() {
        let g = positioned(&[[0.0; 3]; 2], &[(0, 1, BondType::Triple)]);
        let enc = encode(&g, EdgeRepr::Chemical, FeatureOptions::default()).unwrap();
        assert_eq!(enc.edges.len(), 2);
        assert_eq!((enc.edges[0].src, enc.edges[0].dst), (0, 1));
        assert_eq!((enc.edges[1].src, enc.edges[1].dst), (1, 0));
        assert!(enc.edges.iter().all(|e| e.feature == EdgeFeature::Label(2)));
    }
}

//! QM9 extended XYZ records.
//!
//! ```text
//! n_atoms
//! gdb <id> A B C mu alpha homo lumo gap r2 zpve U0 U H G Cv
//! <element> <x> <y> <z> <mulliken charge>      (n_atoms lines)
//! <harmonic frequencies>
//! <SMILES>
//! <InChI>
//! ```
//!
//! Numbers may use the `*^` exponent marker. Energies (homo, lumo, gap,
//! zpve, U0, U, H, G) are stored in Hartree and converted to eV.

use crate::error::{Error, Result};
use crate::molgraph::{Atom, Bond, BondType, Element, MolecularGraph, NUM_TARGETS};

pub const HARTREE_TO_EV: f64 = 27.211386245988;

/// Slack added to the sum of covalent radii when inferring bonds, Å.
pub const BOND_TOLERANCE: f64 = 0.4;

const PROPERTY_COUNT: usize = 15;

/// Property positions (after the tag and id) that hold energies in Hartree.
const HARTREE_PROPERTIES: [usize; 8] = [5, 6, 7, 9, 10, 11, 12, 13];

/// Single-bond covalent radius, Å.
pub fn covalent_radius(element: Element) -> f64 {
    match element {
        Element::H => 0.31,
        Element::C => 0.76,
        Element::N => 0.71,
        Element::O => 0.66,
        Element::F => 0.57,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct XyzAtom {
    pub element: Element,
    pub position: [f64; 3],
    pub partial_charge: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Qm9Record {
    pub tag: String,
    pub id: String,
    pub atoms: Vec<XyzAtom>,
    /// A, B, C, mu, alpha, homo, lumo, gap, r2, zpve, U0, U, H, G, Cv as
    /// written in the file.
    pub properties: [f64; PROPERTY_COUNT],
    pub frequencies: Vec<f64>,
    pub smiles: Option<String>,
}

pub fn parse_number(token: &str) -> Option<f64> {
    token.replace("*^", "e").parse().ok()
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses one record starting at `first_line` (1-based) of `lines`. Returns
/// the record and the number of lines consumed.
fn parse_one(lines: &[&str], first_line: usize) -> Result<(Qm9Record, usize)> {
    let line_no = |i: usize| first_line + i;
    let count_line = lines.first().ok_or_else(|| parse_err(first_line, "empty record"))?;
    let n: usize = count_line
        .trim()
        .parse()
        .map_err(|_| parse_err(line_no(0), format!("expected atom count, got `{}`", count_line.trim())))?;

    let header = lines
        .get(1)
        .ok_or_else(|| parse_err(line_no(1), "missing property line"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 2 + PROPERTY_COUNT {
        return Err(parse_err(
            line_no(1),
            format!("expected tag, id and {PROPERTY_COUNT} properties, found {} fields", fields.len()),
        ));
    }
    let mut properties = [0.0; PROPERTY_COUNT];
    for (slot, token) in properties.iter_mut().zip(&fields[2..]) {
        *slot = parse_number(token).ok_or_else(|| parse_err(line_no(1), format!("bad number `{token}`")))?;
    }

    let mut atoms = Vec::with_capacity(n);
    for i in 0..n {
        let idx = 2 + i;
        let line = lines.get(idx).ok_or_else(|| {
            parse_err(line_no(idx), format!("expected {n} atom lines, found {i}"))
        })?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if !(4..=5).contains(&tokens.len()) {
            return Err(parse_err(
                line_no(idx),
                format!("atom line must be `element x y z [charge]`, found {} fields", tokens.len()),
            ));
        }
        let element = Element::from_symbol(tokens[0])?;
        let mut numbers = tokens[1..].iter().map(|t| {
            parse_number(t).ok_or_else(|| parse_err(line_no(idx), format!("bad number `{t}`")))
        });
        let position = [
            numbers.next().unwrap()?,
            numbers.next().unwrap()?,
            numbers.next().unwrap()?,
        ];
        let partial_charge = numbers.next().transpose()?;
        atoms.push(XyzAtom {
            element,
            position,
            partial_charge,
        });
    }

    let mut used = 2 + n;
    let mut frequencies = Vec::new();
    if let Some(line) = lines.get(used) {
        if line.trim().parse::<usize>().is_err() {
            for t in line.split_whitespace() {
                frequencies.push(parse_number(t).ok_or_else(|| {
                    parse_err(line_no(used), format!("bad frequency `{t}`"))
                })?);
            }
            used += 1;
        }
    }
    let mut smiles = None;
    if let Some(line) = lines.get(used) {
        if line.trim().parse::<usize>().is_err() {
            smiles = line.split_whitespace().next().map(str::to_owned);
            used += 1;
            // InChI line
            if lines.get(used).is_some_and(|l| l.trim().parse::<usize>().is_err()) {
                used += 1;
            }
        }
    }
    let record = Qm9Record {
        tag: fields[0].to_owned(),
        id: fields[1].to_owned(),
        atoms,
        properties,
        frequencies,
        smiles,
    };
    Ok((record, used))
}

/// Parses a single record.
pub fn parse_qm9_xyz(text: &str) -> Result<Qm9Record> {
    let lines: Vec<&str> = text.lines().collect();
    let (record, used) = parse_one(&lines, 1)?;
    if let Some(extra) = lines[used..].iter().position(|l| !l.trim().is_empty()) {
        return Err(parse_err(used + extra + 1, "unexpected content after the record"));
    }
    Ok(record)
}

/// Parses concatenated records (blank lines between records are allowed).
pub fn parse_qm9_xyz_many(text: &str) -> Result<Vec<Qm9Record>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut records = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let (record, used) = parse_one(&lines[i..], i + 1)?;
        records.push(record);
        i += used;
    }
    Ok(records)
}

impl Qm9Record {
    /// Highest harmonic frequency, cm⁻¹.
    pub fn omega1(&self) -> Option<f64> {
        self.frequencies.iter().copied().reduce(f64::max)
    }

    /// The 13 regression targets in canonical order.
    pub fn targets(&self) -> Result<[f64; NUM_TARGETS]> {
        let omega = self
            .omega1()
            .ok_or_else(|| Error::Contract(format!("record {} has no frequencies", self.id)))?;
        let mut p = self.properties;
        for i in HARTREE_PROPERTIES {
            p[i] *= HARTREE_TO_EV;
        }
        let mut t = [0.0; NUM_TARGETS];
        t[..12].copy_from_slice(&p[3..]);
        t[12] = omega;
        Ok(t)
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.atoms[a].position, self.atoms[b].position);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    }

    /// Pairs `(a, b)`, `a < b`, closer than the sum of their covalent radii
    /// plus [`BOND_TOLERANCE`].
    pub fn infer_bonds(&self) -> Vec<(usize, usize)> {
        let n = self.atoms.len();
        let mut bonds = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                let cutoff = covalent_radius(self.atoms[a].element)
                    + covalent_radius(self.atoms[b].element)
                    + BOND_TOLERANCE;
                if self.distance(a, b) < cutoff {
                    bonds.push((a, b));
                }
            }
        }
        bonds
    }

    /// Builds a molecule. Bonds come from `bond_file` when given (atom
    /// indices refer to the record's atom order) and are otherwise inferred
    /// as single bonds. Without explicit hydrogens, hydrogens are folded into
    /// their heavy neighbour's `hydrogen_count`. Acceptor and donor flags
    /// are left unset.
    pub fn to_graph(&self, explicit_hydrogens: bool, bond_file: Option<&[BondSpec]>) -> Result<MolecularGraph> {
        let n = self.atoms.len();
        let bonds: Vec<(usize, usize, BondType)> = match bond_file {
            Some(specs) => specs
                .iter()
                .map(|s| {
                    if s.0 >= n || s.1 >= n || s.0 == s.1 {
                        return Err(Error::Contract(format!(
                            "bond ({}, {}) is invalid for {n} atoms",
                            s.0, s.1
                        )));
                    }
                    Ok((s.0, s.1, s.bond_type()?))
                })
                .collect::<Result<_>>()?,
            None => self
                .infer_bonds()
                .into_iter()
                .map(|(a, b)| (a, b, BondType::Single))
                .collect(),
        };

        let keep: Vec<bool> = self
            .atoms
            .iter()
            .map(|a| explicit_hydrogens || a.element.is_heavy())
            .collect();
        let mut new_index = vec![usize::MAX; n];
        let mut atoms = Vec::new();
        for (i, a) in self.atoms.iter().enumerate().filter(|(i, _)| keep[*i]) {
            new_index[i] = atoms.len();
            let mut atom = Atom::new(a.element);
            atom.position = Some(a.position);
            atom.partial_charge = a.partial_charge;
            atoms.push(atom);
        }
        let mut graph_bonds = Vec::new();
        for (a, b, ty) in bonds {
            match (keep[a], keep[b]) {
                (true, true) => graph_bonds.push(Bond::new(new_index[a], new_index[b], ty)),
                (true, false) => atoms[new_index[a]].hydrogen_count += 1,
                (false, true) => atoms[new_index[b]].hydrogen_count += 1,
                (false, false) => {}
            }
        }
        for bond in &graph_bonds {
            if bond.bond_type == BondType::Aromatic {
                atoms[bond.endpoints.0].aromatic = true;
                atoms[bond.endpoints.1].aromatic = true;
            }
        }
        let mut g = MolecularGraph {
            atoms,
            bonds: graph_bonds,
            explicit_hydrogens,
            targets: self.targets()?,
        };
        g.infer_missing_hybridization();
        g.validate()?;
        Ok(g)
    }
}

/// One entry of a bond file: `[i, j, order]` with order 1, 2, 3 or 1.5
/// (aromatic).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BondSpec(pub usize, pub usize, pub f64);

impl BondSpec {
    pub fn bond_type(&self) -> Result<BondType> {
        match self.2 {
            o if o == 1.0 => Ok(BondType::Single),
            o if o == 2.0 => Ok(BondType::Double),
            o if o == 3.0 => Ok(BondType::Triple),
            o if o == 1.5 => Ok(BondType::Aromatic),
            o => Err(Error::Contract(format!("unknown bond order {o}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const METHANE: &str = "5
gdb 1\t157.7118\t157.70997\t157.70699\t0.\t13.21\t-0.3877\t0.1171\t0.5048\t35.3641\t0.044749\t-40.47893\t-40.476062\t-40.475117\t-40.498597\t6.469\t
C\t-0.0126981359\t 1.0858041578\t 0.0080009958\t-0.535689
H\t 0.002150416\t-0.0060313176\t 0.0019761204\t 0.133921
H\t 1.0117308433\t 1.4637511618\t 0.0002765748\t 0.133922
H\t-0.540815069\t 1.4475266138\t-0.8766437152\t 0.133923
H\t-0.5238136345\t 1.4379326443\t 0.9063972942\t 0.133923
1341.307\t1341.3284\t1341.365\t1562.6731\t1562.7453\t3038.3205\t3151.6034\t3151.6788\t3151.7078
C\tC
InChI=1S/CH4/h1H4\tInChI=1S/CH4/h1H4
";

    #[test]
    fn methane_record() {
        let r = parse_qm9_xyz(METHANE).unwrap();
        assert_eq!(r.atoms.len(), 5);
        assert_eq!(r.id, "1");
        assert_eq!(r.omega1(), Some(3151.7078));
        let t = r.targets().unwrap();
        assert_eq!(t[0], 0.0);
        assert_eq!(t[1], 13.21);
        assert!((t[2] - (-0.3877 * HARTREE_TO_EV)).abs() < 1e-12);
        assert_eq!(t[5], 35.3641);
        assert_eq!(t[11], 6.469);
        assert_eq!(t[12], 3151.7078);
        let g = r.to_graph(false, None).unwrap();
        assert_eq!(g.atoms.len(), 1);
        assert_eq!(g.atoms[0].hydrogen_count, 4);
        let g = r.to_graph(true, None).unwrap();
        assert_eq!(g.atoms.len(), 5);
        assert_eq!(g.bonds.len(), 4);
    }

    #[test]
    fn star_caret_exponent() {
        assert_eq!(parse_number("1.5*^-6"), Some(1.5e-6));
        assert_eq!(parse_number("-2*^3"), Some(-2000.0));
    }

    #[test]
    fn h2_infers_one_bond() {
        let text = "2\ngdb 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0\nH 0 0 0 0\nH 0.74 0 0 0\n";
        let r = parse_qm9_xyz(text).unwrap();
        assert_eq!(r.infer_bonds(), vec![(0, 1)]);
    }

    #[test]
    fn atom_count_mismatch_names_line() {
        let text = "3\ngdb 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0\nH 0 0 0 0\nH 0.74 0 0 0\n";
        match parse_qm9_xyz(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_element() {
        let text = "1\ngdb 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0\nCl 0 0 0 0\n1.0\n";
        assert!(matches!(parse_qm9_xyz(text), Err(Error::UnsupportedElement(_))));
    }

    #[test]
    fn omega_is_max_frequency() {
        let text = "1\ngdb 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0\nC 0 0 0 0\n100.0 3500.0 1200.0\n";
        assert_eq!(parse_qm9_xyz(text).unwrap().omega1(), Some(3500.0));
    }

    #[test]
    fn bond_file_overrides_inference() {
        let r = parse_qm9_xyz(METHANE).unwrap();
        let specs = [BondSpec(0, 1, 1.0), BondSpec(0, 2, 1.0)];
        let g = r.to_graph(false, Some(&specs)).unwrap();
        assert_eq!(g.atoms[0].hydrogen_count, 2);
        assert!(r.to_graph(false, Some(&[BondSpec(0, 1, 2.5)])).is_err());
    }

    #[test]
    fn concatenated_records() {
        let both = format!("{METHANE}\n{METHANE}");
        assert_eq!(parse_qm9_xyz_many(&both).unwrap().len(), 2);
    }
}

//! Random small molecules with exactly computable targets.
//!
//! Target slots hold, in order: degree sum, double-bond count, mean pairwise
//! distance, atom count, implicit hydrogen count, sum of atomic numbers,
//! ring count, sum of bond orders, heteroatom count, maximum pairwise
//! distance, sum of squared degrees, radius of gyration, triple-bond count.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::molgraph::{Atom, Bond, BondType, Element, MolecularGraph, NUM_TARGETS};

const BOND_LENGTH: f64 = 1.45;
const MIN_SEPARATION: f64 = 1.2;
const JITTER: f64 = 0.05;

pub fn generate_synthetic(count: usize, seed: u64) -> Vec<MolecularGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| generate_molecule(&mut rng)).collect()
}

fn pick_element<R: Rng + ?Sized>(rng: &mut R, allow_fluorine: bool) -> Element {
    let roll = rng.gen_range(0..if allow_fluorine { 11 } else { 10 });
    match roll {
        0..=5 => Element::C,
        6 | 7 => Element::N,
        8 | 9 => Element::O,
        _ => Element::F,
    }
}

fn pick_order<R: Rng + ?Sized>(rng: &mut R, max: u32) -> u32 {
    let roll: f64 = rng.gen();
    if roll < 0.05 && max >= 3 {
        3
    } else if roll < 0.25 && max >= 2 {
        2
    } else {
        1
    }
}

fn bond_type(order: u32) -> BondType {
    match order {
        1 => BondType::Single,
        2 => BondType::Double,
        _ => BondType::Triple,
    }
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-3 && norm <= 1.0 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// One valence-respecting heavy-atom graph: a random tree with an
/// occasional ring closure, hydrogens implicit.
pub fn generate_molecule<R: Rng + ?Sized>(rng: &mut R) -> MolecularGraph {
    let n = rng.gen_range(3..=9usize);
    let mut elements = vec![pick_element(rng, false)];
    let mut free = vec![elements[0].valence()];
    let mut bonds: Vec<(usize, usize, u32)> = Vec::new();
    for i in 1..n {
        let parents: Vec<usize> = (0..i).filter(|&j| free[j] > 0).collect();
        let parent = parents[rng.gen_range(0..parents.len())];
        let mut element = pick_element(rng, true);
        let mut order = pick_order(rng, free[parent].min(element.valence()));
        let total: u32 = free.iter().sum();
        let remaining = i + 1 < n;
        let after = |e: Element, o: u32| total - o + (e.valence() - o);
        if remaining && after(element, order) < 1 {
            order = 1;
            if after(element, order) < 1 {
                element = Element::C;
            }
        }
        free[parent] -= order;
        free.push(element.valence() - order);
        elements.push(element);
        bonds.push((parent, i, order));
    }
    if rng.gen_bool(0.3) {
        let bonded = |a: usize, b: usize| bonds.iter().any(|&(x, y, _)| (x, y) == (a, b) || (x, y) == (b, a));
        let candidates: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .filter(|&(a, b)| free[a] > 0 && free[b] > 0 && !bonded(a, b))
            .collect();
        if !candidates.is_empty() {
            let (a, b) = candidates[rng.gen_range(0..candidates.len())];
            free[a] -= 1;
            free[b] -= 1;
            bonds.push((a, b, 1));
        }
    }

    let mut positions: Vec<[f64; 3]> = vec![[0.0; 3]];
    for i in 1..n {
        let parent = bonds.iter().find(|&&(_, c, _)| c == i).map(|b| b.0).expect("tree edge");
        let origin = positions[parent];
        let mut candidate = origin;
        for _ in 0..100 {
            let u = random_unit(rng);
            candidate = [
                origin[0] + BOND_LENGTH * u[0],
                origin[1] + BOND_LENGTH * u[1],
                origin[2] + BOND_LENGTH * u[2],
            ];
            if positions.iter().all(|&p| dist(p, candidate) >= MIN_SEPARATION) {
                break;
            }
        }
        positions.push(candidate);
    }
    for p in &mut positions {
        for c in p.iter_mut() {
            *c += rng.gen_range(-JITTER..JITTER);
        }
    }

    let atoms: Vec<Atom> = elements
        .iter()
        .zip(&positions)
        .zip(&free)
        .map(|((&element, &position), &h)| {
            let mut atom = Atom::new(element);
            atom.position = Some(position);
            atom.hydrogen_count = h;
            let polar = matches!(element, Element::N | Element::O);
            atom.acceptor = polar || element == Element::F;
            atom.donor = polar && h > 0;
            atom
        })
        .collect();
    let mut g = MolecularGraph {
        atoms,
        bonds: bonds
            .iter()
            .map(|&(a, b, o)| Bond::new(a, b, bond_type(o)))
            .collect(),
        explicit_hydrogens: false,
        targets: [0.0; NUM_TARGETS],
    };
    g.infer_missing_hybridization();
    g.targets = analytic_targets(&g);
    g
}

/// The target vector documented at the top of this module.
pub fn analytic_targets(g: &MolecularGraph) -> [f64; NUM_TARGETS] {
    let n = g.num_atoms();
    let degrees = g.degrees();
    let count = |t: BondType| g.bonds.iter().filter(|b| b.bond_type == t).count() as f64;
    let mut pair_sum = 0.0;
    let mut pair_max: f64 = 0.0;
    let mut pairs = 0usize;
    for a in 0..n {
        for b in a + 1..n {
            let d = g.distance(a, b).unwrap_or(0.0);
            pair_sum += d;
            pair_max = pair_max.max(d);
            pairs += 1;
        }
    }
    let centroid = (0..3)
        .map(|k| g.atoms.iter().filter_map(|a| a.position).map(|p| p[k]).sum::<f64>() / n as f64)
        .collect::<Vec<_>>();
    let gyration = (g
        .atoms
        .iter()
        .filter_map(|a| a.position)
        .map(|p| (0..3).map(|k| (p[k] - centroid[k]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n as f64)
        .sqrt();
    [
        degrees.iter().sum::<usize>() as f64,
        count(BondType::Double),
        if pairs > 0 { pair_sum / pairs as f64 } else { 0.0 },
        n as f64,
        g.atoms.iter().map(|a| a.hydrogen_count as f64).sum(),
        g.atoms.iter().map(|a| a.atomic_number() as f64).sum(),
        g.bonds.len() as f64 - n as f64 + 1.0,
        g.bonds.iter().map(|b| b.bond_type.order()).sum(),
        g.atoms.iter().filter(|a| a.element != Element::C).count() as f64,
        pair_max,
        degrees.iter().map(|&d| (d * d) as f64).sum(),
        gyration,
        count(BondType::Triple),
    ]
}

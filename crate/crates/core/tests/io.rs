use mpnn_core::io::synthetic::analytic_targets;
use mpnn_core::io::xyz::covalent_radius;
use mpnn_core::io::{generate_synthetic, load_dataset, parse_qm9_xyz, save_dataset};
use mpnn_core::tensor::{read_checkpoint_map, write_checkpoint_map, Tensor};
use std::collections::BTreeMap;

const ETHYLENE: &str = "6
gdb 4\t80.0\t29.0\t24.0\t0.\t16.3\t-0.2678\t0.0229\t0.2907\t67.9\t0.051\t-78.5\t-78.49\t-78.48\t-78.51\t8.2
C\t 0.0\t 0.0\t 0.6695\t-0.2
C\t 0.0\t 0.0\t-0.6695\t-0.2
H\t 0.0\t 0.9289\t 1.2321\t0.1
H\t 0.0\t-0.9289\t 1.2321\t0.1
H\t 0.0\t 0.9289\t-1.2321\t0.1
H\t 0.0\t-0.9289\t-1.2321\t0.1
826.0\t3232.1
C=C\tC=C
InChI=1S/C2H4\tInChI=1S/C2H4
";

#[test]
fn inferred_bonds_match_brute_force_distance_rule() {
    let r = parse_qm9_xyz(ETHYLENE).unwrap();
    let bonds = r.infer_bonds();
    let mut expected = Vec::new();
    for a in 0..r.atoms.len() {
        for b in a + 1..r.atoms.len() {
            let (pa, pb) = (r.atoms[a].position, r.atoms[b].position);
            let d = (0..3).map(|k| (pa[k] - pb[k]).powi(2)).sum::<f64>().sqrt();
            if d <= covalent_radius(r.atoms[a].element) + covalent_radius(r.atoms[b].element) + 0.4 {
                expected.push((a, b));
            }
        }
    }
    let mut got = bonds.clone();
    got.sort();
    assert_eq!(got, expected);
    assert_eq!(got.len(), 5);
}

#[test]
fn xyz_to_dataset_round_trip_is_stable() {
    let r = parse_qm9_xyz(ETHYLENE).unwrap();
    for explicit in [false, true] {
        let g = r.to_graph(explicit, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&path, std::slice::from_ref(&g)).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, vec![g.clone()]);
        save_dataset(&path, &back).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), back);
    }
    let heavy = r.to_graph(false, None).unwrap();
    assert_eq!(heavy.atoms.len(), 2);
    assert_eq!(heavy.atoms.iter().map(|a| a.hydrogen_count).sum::<u32>() as usize, 4);
}

#[test]
fn synthetic_degree_sum_matches_recount() {
    for m in generate_synthetic(50, 21) {
        let mut degree = vec![0usize; m.atoms.len()];
        for b in &m.bonds {
            let (i, j) = b.key();
            degree[i] += 1;
            degree[j] += 1;
        }
        assert_eq!(m.targets[0], degree.iter().sum::<usize>() as f64);
        assert_eq!(m.targets[0], 2.0 * m.bonds.len() as f64);
        assert_eq!(m.targets, analytic_targets(&m));
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut map = BTreeMap::new();
    map.insert("a".to_string(), Tensor::new(&[2, 2], vec![0.1, -1e-300, f64::MIN_POSITIVE, 1.0 / 3.0]).unwrap());
    map.insert("b.c".to_string(), Tensor::new(&[3], vec![std::f64::consts::PI, -0.0, 123456789.123456789]).unwrap());
    let text = write_checkpoint_map(&map).unwrap();
    let back = read_checkpoint_map(&text).unwrap();
    for (k, t) in &map {
        let u = &back[k];
        assert_eq!(t.shape(), u.shape());
        for (x, y) in t.data().iter().zip(u.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
    assert_eq!(write_checkpoint_map(&back).unwrap(), text);
}

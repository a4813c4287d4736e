mod support;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use support::straight_mvm;
use xbar_core::circuit::{ideal_mvm, DriveVector};
use xbar_core::mapping::{flatten_kernels, split_differential, tile, unflatten_kernels, ColumnPermutation, FlattenedLayerMatrix, Polarity};
use xbar_core::matrix::Matrix;
use xbar_core::rng;
use xbar_core::tech::{CrossbarGeometry, TechnologyProfile};

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, "matrix", &[]);
    Matrix::from_fn(rows, cols, |_, _| if r.random_bool(0.2) { 0.0 } else { r.random_range(-1.0..1.0) })
}

fn random_perm(n: usize, seed: u64) -> ColumnPermutation {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut rng::stream(seed, "perm", &[]));
    ColumnPermutation::new(v).unwrap()
}

#[test]
fn conv_kernels_become_columns() {
    // Kernel o, channel c, row a, col b lands at row (c*3 + a)*3 + b of column o.
    let w = Matrix::from_fn(4, 18, |o, k| (o * 100 + k) as f64);
    let f = flatten_kernels(2, &w);
    assert_eq!(f.layer, 2);
    for o in 0..4 {
        for c in 0..2 {
            for a in 0..3 {
                for b in 0..3 {
                    let k = (c * 3 + a) * 3 + b;
                    assert_eq!(f.matrix.get(k, o), (o * 100 + k) as f64);
                }
            }
        }
    }
}

#[test]
fn partial_sums_over_row_blocks_equal_the_matrix_product() {
    let tech = TechnologyProfile::taox();
    let geom = CrossbarGeometry::default();
    let m = random_matrix(200, 150, 1);
    let t = tile(&split_differential(&FlattenedLayerMatrix { layer: 0, matrix: m.clone() }), 0, &geom, &tech).unwrap();
    assert_eq!(t.grid(), (2, 2));
    let mut r = rng::stream(2, "x", &[]);
    let x: Vec<f64> = (0..200).map(|_| r.random_range(0.0..0.5)).collect();
    let direct = straight_mvm(&x, &m);
    let mut acc = vec![0.0; 150];
    for br in 0..2 {
        let mut v = vec![0.0; 128];
        for i in 0..128 {
            if br * 128 + i < 200 {
                v[i] = x[br * 128 + i];
            }
        }
        let v = DriveVector::new(v).unwrap();
        for bc in 0..2 {
            let p = ideal_mvm(&v, &t.physical_tile(br, bc, Polarity::Positive).unwrap()).unwrap();
            let n = ideal_mvm(&v, &t.physical_tile(br, bc, Polarity::Negative).unwrap()).unwrap();
            for q in 0..128 {
                let col = bc * 128 + q;
                if col < 150 {
                    acc[col] += p[q] - n[q];
                }
            }
        }
    }
    let to_weight = t.weight_scale / (tech.g_on() - tech.g_off());
    let scale: f64 = x.iter().sum::<f64>() * t.weight_scale;
    for (a, b) in acc.iter().zip(&direct) {
        assert!((a * to_weight - b).abs() <= 1e-9 * scale, "{} vs {b}", a * to_weight);
    }
}

#[test]
fn padding_draws_negligible_current() {
    let tech = TechnologyProfile::taox();
    let geom = CrossbarGeometry::default();
    let t = tile(&split_differential(&FlattenedLayerMatrix { layer: 0, matrix: random_matrix(9, 16, 4) }), 0, &geom, &tech).unwrap();
    let mut v = vec![0.0; 128];
    v[..9].fill(0.5);
    let i = ideal_mvm(&DriveVector::new(v).unwrap(), &t.physical_tile(0, 0, Polarity::Positive).unwrap()).unwrap();
    let active: f64 = i[..16].iter().sum();
    // Padded columns carry only the G_off background of the driven rows.
    let padded = i[16..].iter().sum::<f64>() / 112.0;
    assert!((padded - 9.0 * 0.5 * tech.g_off()).abs() < 1e-18);
    assert!(active > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flatten_round_trip(out in 1usize..8, fan_in in 1usize..30, seed in any::<u64>()) {
        let w = random_matrix(out, fan_in, seed);
        prop_assert_eq!(unflatten_kernels(&flatten_kernels(0, &w)), w);
    }

    #[test]
    fn differential_pair_reconstructs(rows in 1usize..20, cols in 1usize..20, seed in any::<u64>()) {
        let m = random_matrix(rows, cols, seed);
        let pair = split_differential(&FlattenedLayerMatrix { layer: 0, matrix: m.clone() });
        for i in 0..rows {
            for j in 0..cols {
                let (p, n) = (pair.positive.get(i, j), pair.negative.get(i, j));
                prop_assert!(p >= 0.0 && n >= 0.0);
                prop_assert!(p == 0.0 || n == 0.0);
                prop_assert_eq!(p - n, m.get(i, j));
            }
        }
    }

    #[test]
    fn conductances_reconstruct_weights(rows in 1usize..40, cols in 1usize..40, seed in any::<u64>()) {
        let m = random_matrix(rows, cols, seed);
        let tech = TechnologyProfile::ag_si();
        let geom = CrossbarGeometry::default().with_size(16, 16);
        let t = tile(&split_differential(&FlattenedLayerMatrix { layer: 0, matrix: m.clone() }), 0, &geom, &tech).unwrap();
        let back = t.reconstruct_weights();
        for (a, b) in back.matrix.as_slice().iter().zip(m.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9 * t.weight_scale);
        }
    }

    #[test]
    fn permutation_places_logical_columns(cols in 1usize..40, seed in any::<u64>()) {
        let tech = TechnologyProfile::taox();
        let geom = CrossbarGeometry::default().with_size(8, 16);
        let m = random_matrix(5, cols, seed);
        let t = tile(&split_differential(&FlattenedLayerMatrix { layer: 0, matrix: m }), 0, &geom, &tech).unwrap();
        let perm = random_perm(cols, seed);
        let p = t.apply_permutation(&perm).unwrap();
        for k in 0..cols {
            let phys = perm.physical(k);
            for pol in [Polarity::Positive, Polarity::Negative] {
                let tile = p.physical_tile(0, phys / 16, pol).unwrap();
                for i in 0..5 {
                    prop_assert_eq!(tile.get(i, phys % 16), t.conductances(pol).get(i, k));
                }
            }
        }
        // Padding stays to the right of every logical column.
        let (_, nc) = p.grid();
        let last = p.physical_tile(0, nc - 1, Polarity::Positive).unwrap();
        for q in (cols - (nc - 1) * 16)..16 {
            prop_assert_eq!(last.get(0, q), tech.g_off());
        }
        let restored = p.apply_permutation(&perm.inverted()).unwrap().apply_permutation(&ColumnPermutation::identity(cols)).unwrap();
        prop_assert_eq!(restored, t);
    }
}

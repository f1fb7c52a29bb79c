use ccot::coclust::{
    ccot, ccot_gw, gaussian_kernel_matrix, Bandwidth, CcotConfig, CoClusterResult, KernelConfig,
};
use ccot::gromov::{GWConfig, SimilarityMatrix};
use ccot::simulate::{error_rate, generate_lbm, unequal_proportions, LbmConfig, Separation};
use ccot::{DataMatrix, Error};
use ndarray::Array2;
use proptest::prelude::*;

/// Unequal cluster sizes: with equal masses the scaling vectors of
/// mirror-image clusters coincide.
fn lbm(n: usize, d: usize, g: usize, m: usize, seed: u64) -> (DataMatrix, Vec<usize>, Vec<usize>) {
    let cfg = LbmConfig {
        n,
        d,
        g,
        m,
        row_props: unequal_proportions(g),
        col_props: unequal_proportions(m),
        separation: Separation::Well,
        noise_sd: 1.0,
        seed,
    };
    let (a, truth) = generate_lbm(&cfg).unwrap();
    (a, truth.row_labels, truth.col_labels)
}

fn check_invariants(r: &CoClusterResult, n: usize, d: usize) {
    assert_eq!(r.row_partition.len(), n);
    assert_eq!(r.col_partition.len(), d);
    assert_eq!(r.g, r.row_partition.g);
    assert_eq!(r.m, r.col_partition.g);
    assert!(r.row_partition.labels.iter().all(|&l| (1..=r.g).contains(&l)));
    assert!(r.col_partition.labels.iter().all(|&l| (1..=r.m).contains(&l)));
    assert!(r.row_partition.sizes().iter().all(|&s| s > 0));
    assert!(r.col_partition.sizes().iter().all(|&s| s > 0));
}

/// Two row and two column clusters, sizes 3:5. The block means are not
/// symmetric: a symmetric matrix has zero-cost diagonal blocks, which
/// decouple under a sharp kernel.
fn two_blocks(k: usize) -> (DataMatrix, Vec<usize>) {
    let half = 3 * k / 8;
    let means = [[1.0, 4.0], [7.0, 3.0]];
    let a = Array2::from_shape_fn((k, k), |(i, j)| means[(i >= half) as usize][(j >= half) as usize]);
    let truth = (0..k).map(|i| if i < half { 1 } else { 2 }).collect();
    (DataMatrix::from_values(a).unwrap(), truth)
}

#[test]
fn square_two_block_matrix_is_recovered_without_sampling() {
    let (a, truth) = two_blocks(32);
    let r = ccot(&a, &CcotConfig::default()).unwrap();
    check_invariants(&r, 32, 32);
    assert_eq!((r.g, r.m), (2, 2));
    assert_eq!(error_rate(&truth, &r.row_partition.labels).unwrap(), 0.0);
    assert_eq!(error_rate(&truth, &r.col_partition.labels).unwrap(), 0.0);
    assert_eq!(r.diagnostics.samples_drawn, 1);

    let single = ccot(&a, &CcotConfig { n_samples: 1, ..CcotConfig::default() }).unwrap();
    assert_eq!(single, r);
}

#[test]
fn sampled_pipeline_recovers_a_small_block_model() {
    let (a, rows, cols) = lbm(120, 40, 2, 2, 0);
    let cfg = CcotConfig {
        n_samples: 30,
        seed: 1,
        ..CcotConfig::default()
    };
    let r = ccot(&a, &cfg).unwrap();
    check_invariants(&r, 120, 40);
    assert_eq!((r.g, r.m), (2, 2));
    assert_eq!(error_rate(&rows, &r.row_partition.labels).unwrap(), 0.0);
    assert_eq!(error_rate(&cols, &r.col_partition.labels).unwrap(), 0.0);
    assert!(r.diagnostics.row_coverage.iter().all(|&c| c > 0));
}

#[test]
fn ccot_is_deterministic_and_transposes() {
    let (a, _, _) = lbm(60, 24, 2, 3, 9);
    let cfg = CcotConfig {
        n_samples: 20,
        seed: 3,
        ..CcotConfig::default()
    };
    let r1 = ccot(&a, &cfg).unwrap();
    let r2 = ccot(&a, &cfg).unwrap();
    assert_eq!(r1, r2);
    let t = ccot(&a.transpose(), &cfg).unwrap();
    assert_eq!(t.row_partition, r1.col_partition);
    assert_eq!(t.col_partition, r1.row_partition);
    assert_eq!((t.g, t.m), (r1.m, r1.g));
}

#[test]
fn unreachable_coverage_is_an_error() {
    let (a, _, _) = lbm(400, 8, 2, 2, 1);
    let cfg = CcotConfig {
        n_samples: 1,
        max_extra_samples: 2,
        ..CcotConfig::default()
    };
    match ccot(&a, &cfg) {
        Err(Error::CoverageUnreachable { rows }) => assert!(!rows.is_empty()),
        other => panic!("expected a coverage error, got {other:?}"),
    }
}

#[test]
fn config_is_validated() {
    let (a, _) = two_blocks(8);
    assert!(ccot(&a, &CcotConfig { n_samples: 0, ..CcotConfig::default() }).is_err());
    assert!(ccot(&a, &CcotConfig { lambda: Some(-1.0), ..CcotConfig::default() }).is_err());
}

#[test]
fn barycenter_pipeline_recovers_a_small_block_model() {
    let (a, rows, cols) = lbm(100, 60, 2, 3, 1);
    let gw = GWConfig::default();
    let r = ccot_gw(&a, &gw, &KernelConfig::default()).unwrap();
    check_invariants(&r, 100, 60);
    assert_eq!((r.g, r.m), (2, 3));
    assert_eq!(error_rate(&rows, &r.row_partition.labels).unwrap(), 0.0);
    assert_eq!(error_rate(&cols, &r.col_partition.labels).unwrap(), 0.0);
    assert_eq!(r.diagnostics.barycenter_runs, 1);
    assert_eq!(r.diagnostics.samples_drawn, 0);
    assert!(r.diagnostics.sigma_rows.unwrap() > 0.0);
}

#[test]
fn barycenter_pipeline_is_deterministic_and_transposes() {
    let (a, _, _) = lbm(24, 20, 2, 2, 5);
    let gw = GWConfig::default();
    let kernel = KernelConfig::default();
    let r1 = ccot_gw(&a, &gw, &kernel).unwrap();
    assert_eq!(r1, ccot_gw(&a, &gw, &kernel).unwrap());
    let t = ccot_gw(&a.transpose(), &gw, &kernel).unwrap();
    assert_eq!(t.row_partition, r1.col_partition);
    assert_eq!(t.col_partition, r1.row_partition);
}

#[test]
fn constant_matrix_has_one_cluster_per_axis() {
    let a = DataMatrix::from_values(Array2::from_elem((6, 5), 2.5)).unwrap();
    let fixed = KernelConfig::Gaussian { sigma: Bandwidth::Fixed(1.0) };
    let r = ccot_gw(&a, &GWConfig::default(), &fixed).unwrap();
    assert_eq!((r.g, r.m), (1, 1));
    assert_eq!(
        ccot_gw(&a, &GWConfig::default(), &KernelConfig::default()).unwrap_err(),
        Error::ZeroBandwidth
    );
}

#[test]
fn precomputed_kernels_must_match_the_data() {
    let (a, _, _) = lbm(8, 6, 2, 2, 0);
    let eye = |k: usize| SimilarityMatrix::new(Array2::eye(k)).unwrap();
    let bad = KernelConfig::Precomputed { rows: eye(6), cols: eye(6) };
    assert!(ccot_gw(&a, &GWConfig::default(), &bad).is_err());
}

proptest! {
    #[test]
    fn kernels_are_symmetric_with_unit_diagonal(
        pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..12),
        sigma in prop::option::of(0.1f64..10.0),
    ) {
        let n = pts.len();
        let flat: Vec<f64> = pts.concat();
        let v = Array2::from_shape_vec((n, 3), flat).unwrap();
        let bw = sigma.map_or(Bandwidth::Auto, Bandwidth::Fixed);
        match gaussian_kernel_matrix(v.view(), bw) {
            Ok((k, s)) => {
                prop_assert!(s > 0.0);
                let k = k.values();
                for i in 0..n {
                    prop_assert_eq!(k[[i, i]], 1.0);
                    for j in 0..n {
                        prop_assert_eq!(k[[i, j]], k[[j, i]]);
                        prop_assert!(k[[i, j]] > 0.0 || k[[i, j]] == 0.0 && s < 1.0);
                        prop_assert!(k[[i, j]] <= 1.0);
                    }
                }
            }
            Err(e) => prop_assert_eq!(e, Error::ZeroBandwidth),
        }
    }
}

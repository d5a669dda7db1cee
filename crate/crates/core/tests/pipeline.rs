use butterfly_core::butterfly::{read_butterfly, write_butterfly, HybridButterfly};
use butterfly_core::layout::{simulated_parallel_apply, LayoutKind, LayoutSpec};
use butterfly_core::linalg::{frobenius, gaussian_matrix};
use butterfly_core::operators::{build_problem, synth_butterfly, AnyProblem, BlackBox, OperatorConfig, SyntheticButterflySpec};
use butterfly_core::reconstruct::{check_error_bounds, estimate_error, factorize, ReconstructionConfig};
use num_complex::Complex64;
use proptest::prelude::*;

fn rel(a: &nalgebra::DMatrix<Complex64>, b: &nalgebra::DMatrix<Complex64>) -> f64 {
    frobenius(&(a - b)) / frobenius(b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn synthetic_black_box_is_recovered(levels in 3usize..=5, rank in 1usize..=4, seed in 0u64..1000) {
        let truth = synth_butterfly::<f64>(&SyntheticButterflySpec::new(levels, rank, seed)).unwrap();
        let op = BlackBox::new(truth.clone());
        let cfg = ReconstructionConfig::new(1e-12, 2, 2, seed ^ 0x55);
        let (bf, log) = factorize(&op, truth.row_tree(), truth.col_tree(), &cfg).unwrap();
        prop_assert_eq!(bf.max_rank(), rank);
        prop_assert_eq!(log.counts, op.counts());
        let a = bf.to_dense(1 << 24).unwrap();
        let b = truth.to_dense(1 << 24).unwrap();
        prop_assert!(frobenius(&(&a - &b)) <= 1e-10 * frobenius(&b));
    }
}

#[test]
fn kernel_from_config_meets_level_bounds() {
    let cfg: OperatorConfig = serde_json::from_str(r#"{"type": "helmholtz3d", "n": 512, "seed": 3}"#).unwrap();
    let AnyProblem::Complex(problem) = build_problem(&cfg).unwrap() else {
        panic!("kernel operators are complex");
    };
    let (rows, cols) = problem.trees(None, 16).unwrap();
    let eps = 1e-3;
    let (bf, _) = factorize(&problem.op, &rows, &cols, &ReconstructionConfig::new(eps, 4, 64, 5)).unwrap();
    let dense = problem.op.apply(&nalgebra::DMatrix::identity(512, 512)).unwrap();
    let report = check_error_bounds(&dense, &bf, eps, 1 << 24).unwrap();
    assert!(report.all_pass(), "{report:?}");
    assert!(report.relative_error < 10.0 * eps);
    assert!(estimate_error(&problem.op, &bf, 8, 1).unwrap() < 10.0 * eps);
}

#[test]
fn reconstructed_container_round_trip_and_parallel_apply() {
    let truth = synth_butterfly::<Complex64>(&SyntheticButterflySpec::new(4, 3, 11)).unwrap();
    let op = BlackBox::new(truth.clone());
    let (bf, _) = factorize(&op, truth.row_tree(), truth.col_tree(), &ReconstructionConfig::new(1e-12, 2, 2, 1)).unwrap();

    let mut bytes = Vec::new();
    write_butterfly(&bf, &mut bytes).unwrap();
    let back: HybridButterfly<Complex64> = read_butterfly(bytes.as_slice()).unwrap();
    let x = gaussian_matrix::<Complex64>(bf.cols(), 2, 9);
    let y = bf.apply(&x).unwrap();
    assert_eq!(back.apply(&x).unwrap(), y);
    assert!(read_butterfly::<f64, _>(bytes.as_slice()).is_err());

    // The hybrid layout needs the center at floor(L / 2), which the default provides.
    let spec = LayoutSpec::new(4, LayoutKind::Hybrid, 4, 3);
    let (yp, cost) = simulated_parallel_apply(&bf, &x, &spec).unwrap();
    assert!(rel(&yp, &y) < 1e-12);
    assert_eq!(cost.exchange_msgs, 0);
}

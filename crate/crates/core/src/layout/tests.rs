use super::*;
use crate::linalg::gaussian_matrix;
use crate::operators::{synth_butterfly, SyntheticButterflySpec};
use num_complex::Complex64;
use proptest::prelude::*;

fn synthetic<T: Scalar>(levels: usize, rank: usize, kind: LayoutKind) -> HybridButterfly<T> {
    let spec = SyntheticButterflySpec::new(levels, rank, 40 + levels as u64).with_center(kind.center(levels));
    synth_butterfly::<T>(&spec).unwrap()
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

#[test]
fn closed_form_examples() {
    let hybrid = comm_cost(&LayoutSpec::new(4, LayoutKind::Hybrid, 4, 2)).unwrap();
    assert_eq!(hybrid.exchange_msgs, 0);
    assert_eq!(hybrid.exchange_volume, 0);

    let single = comm_cost(&LayoutSpec::new(1, LayoutKind::Column, 4, 2)).unwrap();
    assert_eq!((single.exchange_msgs, single.alltoall_msgs), (0, 0));

    let c = comm_cost(&LayoutSpec::new(4, LayoutKind::Column, 4, 2)).unwrap();
    assert_eq!(
        (c.exchange_volume, c.exchange_msgs, c.alltoall_volume, c.alltoall_msgs),
        (16, 2, 8, 3)
    );
    let r = comm_cost(&LayoutSpec::new(4, LayoutKind::Row, 4, 2)).unwrap();
    assert!(r.same_counts(&c));
}

#[test]
fn hybrid_exchange_starts_above_square_root() {
    // L = 6: p = 8 is the last count without exchange; p = 16 needs 2 levels.
    let at = |p| comm_cost(&LayoutSpec::new(p, LayoutKind::Hybrid, 6, 3)).unwrap();
    assert_eq!(at(8).exchange_msgs, 0);
    assert_eq!(at(16).exchange_msgs, 2);
    assert_eq!(at(16).exchange_volume, 3 * 4 * 2);
    assert_eq!(at(64).exchange_msgs, 6);
}

#[test]
fn invalid_process_counts() {
    for p in [0, 3, 6, 12] {
        assert!(matches!(
            comm_cost(&LayoutSpec::new(p, LayoutKind::Column, 4, 2)),
            Err(Error::Precondition(_))
        ));
    }
    assert!(matches!(
        comm_cost(&LayoutSpec::new(32, LayoutKind::Hybrid, 4, 2)),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn time_model_is_linear() {
    let c = comm_cost(&LayoutSpec::new(4, LayoutKind::Column, 4, 2))
        .unwrap()
        .with_time_model(1e-6, 1e-9);
    let t = c.time.unwrap();
    assert!((t.seconds - (5.0 * 1e-6 + 24.0 * 1e-9)).abs() < 1e-18);
    assert!(c.same_counts(&comm_cost(&LayoutSpec::new(4, LayoutKind::Column, 4, 2)).unwrap()));
}

#[test]
fn single_process_owns_everything() {
    for kind in LayoutKind::ALL {
        let bf = synthetic::<f64>(4, 2, kind);
        let map = assign_ownership(&bf, &LayoutSpec::new(1, kind, 4, 2)).unwrap();
        let all = map.u.iter().chain(map.v.iter()).chain([&map.core, &map.input, &map.output]);
        for owners in all {
            assert!(owners.iter().all(|&o| o == 0));
        }
    }
}

#[test]
fn hybrid_four_levels_four_processes() {
    let bf = synthetic::<f64>(4, 2, LayoutKind::Hybrid);
    let map = assign_ownership(&bf, &LayoutSpec::new(4, LayoutKind::Hybrid, 4, 2)).unwrap();
    let runs: Vec<usize> = (0..16).map(|i| i / 4).collect();
    // Leaf U and V blocks: four consecutive leaves per process.
    assert_eq!(map.u_owner(4, 0), 0);
    assert_eq!(map.u[2], runs);
    assert_eq!(map.v[0], runs);
    // Cores follow the W blocks of the center level.
    assert_eq!(map.core, map.v[2]);
    // At the center the row layout groups blocks by ν, the column layout by τ.
    for idx in 0..16 {
        let (tau, nu) = unflat(4, 2, idx);
        assert_eq!(map.v_owner(2, idx), nu);
        assert_eq!(map.u_owner(2, idx), tau);
    }
}

#[test]
fn column_leaf_cores_are_index_reversed() {
    let bf = synthetic::<f64>(4, 2, LayoutKind::Column);
    let map = assign_ownership(&bf, &LayoutSpec::new(4, LayoutKind::Column, 4, 2)).unwrap();
    let reversed: Vec<usize> = (0..16).map(|nu: usize| (nu.reverse_bits() >> 60) >> 2).collect();
    assert_eq!(map.core, reversed);
    assert_eq!(map.v[0], reversed);
    assert_eq!(map.u[4], (0..16).map(|i| i / 4).collect::<Vec<_>>());

    let bf = synthetic::<f64>(4, 2, LayoutKind::Row);
    let map = assign_ownership(&bf, &LayoutSpec::new(4, LayoutKind::Row, 4, 2)).unwrap();
    assert_eq!(map.u[0], reversed);
    assert_eq!(map.core, reversed);
    assert_eq!(map.v[0], (0..16).map(|i| i / 4).collect::<Vec<_>>());
}

#[test]
fn pairing_rule_is_enforced() {
    let bf = synthetic::<f64>(6, 2, LayoutKind::Column);
    let map = assign_ownership(&bf, &LayoutSpec::new(8, LayoutKind::Column, 6, 2)).unwrap();
    // Explicit pairing check on one combined transfer block of level 1.
    let (tau, nu_parent) = (1, 3);
    for a in 0..2 {
        let lower = flat(6, 1, tau, 2 * nu_parent + a);
        let upper = flat(6, 2, 2 * tau + a, nu_parent);
        assert_eq!(map.u_owner(1, lower), map.u_owner(2, upper));
    }
    let mut broken = map.clone();
    broken.u[3].swap(0, 63);
    assert!(matches!(broken.validate(), Err(Error::Structure(_))));
    let mut moved = map.clone();
    moved.core[0] = (moved.core[0] + 1) % 8;
    assert!(moved.validate().is_err());
}

#[test]
fn layout_must_match_factorization() {
    let bf = synthetic::<f64>(4, 2, LayoutKind::Hybrid);
    assert!(matches!(
        assign_ownership(&bf, &LayoutSpec::new(4, LayoutKind::Column, 4, 2)),
        Err(Error::Structure(_))
    ));
    assert!(matches!(
        assign_ownership(&bf, &LayoutSpec::new(4, LayoutKind::Hybrid, 5, 2)),
        Err(Error::Structure(_))
    ));
    assert!(matches!(
        assign_ownership(&bf, &LayoutSpec::new(3, LayoutKind::Hybrid, 4, 2)),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn single_process_apply_has_no_messages() {
    let bf = synthetic::<f64>(4, 3, LayoutKind::Hybrid);
    let x = gaussian_matrix::<f64>(bf.cols(), 2, 1);
    let (y, rep) = simulated_parallel_apply(&bf, &x, &LayoutSpec::new(1, LayoutKind::Hybrid, 4, 3)).unwrap();
    assert!(rel(&y, &bf.apply(&x).unwrap()) <= 1e-13);
    assert_eq!((rep.exchange_msgs, rep.exchange_volume, rep.alltoall_msgs), (0, 0, 0));
}

#[test]
fn measured_counts_equal_closed_forms() {
    // Leaf size equals the rank, so n = r 2^L as the model assumes.
    let r = SyntheticButterflySpec::LEAF_SIZE;
    for levels in [4, 6, 8] {
        for kind in LayoutKind::ALL {
            let bf = synthetic::<f64>(levels, r, kind);
            let x = gaussian_matrix::<f64>(bf.cols(), 1, 2);
            let y0 = bf.apply(&x).unwrap();
            for k in 0..=levels {
                let spec = LayoutSpec::new(1 << k, kind, levels, r);
                let (y, measured) = simulated_parallel_apply(&bf, &x, &spec).unwrap();
                let model = comm_cost(&spec).unwrap();
                assert!(measured.same_counts(&model), "{spec:?}: {measured:?} vs {model:?}");
                assert!(rel(&y, &y0) <= 1e-13, "{spec:?}");
            }
        }
    }
}

#[test]
fn hybrid_at_square_root_only_switches_layout() {
    let r = 3;
    for levels in [4, 6, 8] {
        let p = 1 << (levels / 2);
        let bf = synthetic::<f64>(levels, r, LayoutKind::Hybrid);
        let x = gaussian_matrix::<f64>(bf.cols(), 1, 3);
        let (_, rep) = simulated_parallel_apply(&bf, &x, &LayoutSpec::new(p, LayoutKind::Hybrid, levels, r)).unwrap();
        assert_eq!(rep.exchange_msgs, 0);
        assert_eq!(rep.alltoall_volume, (r << levels) as u64 / p as u64);

        let bf = synthetic::<f64>(levels, r, LayoutKind::Column);
        let (_, rep) = simulated_parallel_apply(&bf, &x, &LayoutSpec::new(p, LayoutKind::Column, levels, r)).unwrap();
        assert_eq!(rep.exchange_msgs, (levels / 2) as u64);
        assert_eq!(rep.exchange_volume, (r << levels) as u64 / p as u64 * (levels / 2) as u64);
    }
}

#[test]
fn column_switch_moves_input_slices() {
    // With rank below the leaf size the column layout moves whole input
    // slices, n / p scalars per process, rather than r 2^L / p.
    let bf = synthetic::<f64>(4, 2, LayoutKind::Column);
    let x = gaussian_matrix::<f64>(bf.cols(), 1, 4);
    let (_, rep) = simulated_parallel_apply(&bf, &x, &LayoutSpec::new(4, LayoutKind::Column, 4, 2)).unwrap();
    assert_eq!(rep.alltoall_volume, bf.cols() as u64 / 4);
    assert_eq!(rep.exchange_volume, 16);
}

#[test]
fn odd_depth_switch_can_stay_local() {
    // For odd L with 2^L / p = p / 2 one destination of some process is the
    // process itself, so the measured message count is one below the table.
    let bf = synthetic::<f64>(5, 8, LayoutKind::Hybrid);
    let x = gaussian_matrix::<f64>(bf.cols(), 1, 5);
    let spec = LayoutSpec::new(8, LayoutKind::Hybrid, 5, 8);
    let (_, rep) = simulated_parallel_apply(&bf, &x, &spec).unwrap();
    let model = comm_cost(&spec).unwrap();
    assert_eq!(rep.alltoall_msgs + 1, model.alltoall_msgs);
    assert_eq!(rep.exchange_msgs, model.exchange_msgs);
    assert_eq!(rep.alltoall_volume, model.alltoall_volume);
}

#[test]
fn complex_apply_matches() {
    let bf = synthetic::<Complex64>(6, 4, LayoutKind::Hybrid);
    let x = gaussian_matrix::<Complex64>(bf.cols(), 3, 6);
    let y0 = bf.apply(&x).unwrap();
    for k in [0, 3, 6] {
        let (y, _) = simulated_parallel_apply(&bf, &x, &LayoutSpec::new(1 << k, LayoutKind::Hybrid, 6, 4)).unwrap();
        assert!((y - &y0).norm() <= 1e-13 * y0.norm());
    }
}

#[test]
fn variable_ranks_keep_message_structure() {
    // A reconstructed kernel has uneven ranks and leaves.
    let (m, n) = (300, 260);
    let xs: Vec<[f64; 1]> = (0..m).map(|i| [(i as f64 / m as f64).powi(2)]).collect();
    let ys: Vec<[f64; 1]> = (0..n).map(|j| [2.0 + j as f64 / n as f64]).collect();
    let a = DMatrix::from_fn(m, n, |i, j| (40.0 * (ys[j][0] - xs[i][0])).sin() / (ys[j][0] - xs[i][0]));
    let rows = crate::hier::PartitionTree::build(&crate::hier::PointSet::from_points(&xs).unwrap(), 6).unwrap();
    let cols = crate::hier::PartitionTree::build(&crate::hier::PointSet::from_points(&ys).unwrap(), 6).unwrap();
    let op = crate::operators::BlackBox::new(crate::operators::DenseOperator::new(a));
    let cfg = crate::reconstruct::ReconstructionConfig::new(1e-6, 4, 4, 3);
    let (bf, _) = crate::reconstruct::factorize(&op, &rows, &cols, &cfg).unwrap();
    let x = gaussian_matrix::<f64>(n, 2, 7);
    let y0 = bf.apply(&x).unwrap();
    for k in 0..=6 {
        let spec = LayoutSpec::new(1 << k, LayoutKind::Hybrid, 6, 1);
        let (y, measured) = simulated_parallel_apply(&bf, &x, &spec).unwrap();
        let model = comm_cost(&spec).unwrap();
        assert_eq!(measured.exchange_msgs, model.exchange_msgs);
        assert_eq!(measured.alltoall_msgs, model.alltoall_msgs);
        assert!(rel(&y, &y0) <= 1e-13);
    }
}

#[test]
fn csv_rows() {
    let rows = comm_cost_table(4, 2).unwrap();
    assert_eq!(rows.len(), 15);
    let mut buf = Vec::new();
    write_comm_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "schema,source,kind,L,r,p,exch_vol,exch_msgs,a2a_vol,a2a_msgs,model_time_s");
    assert!(text.contains("comm_cost.v1,model,column,4,2,4,16,2,8,3,\n"));
    assert_eq!(lines.count(), 15);
}

proptest! {
    #[test]
    fn hybrid_never_exchanges_more(levels in 1usize..20, k in 0usize..20, r in 1usize..64) {
        prop_assume!(k <= levels);
        let c = comm_cost(&LayoutSpec::new(1 << k, LayoutKind::Column, levels, r)).unwrap();
        let h = comm_cost(&LayoutSpec::new(1 << k, LayoutKind::Hybrid, levels, r)).unwrap();
        prop_assert!(h.exchange_volume <= c.exchange_volume);
        prop_assert!(h.exchange_msgs <= c.exchange_msgs);
        prop_assert_eq!(h.alltoall_volume, c.alltoall_volume);
        if 2 * k <= levels {
            prop_assert_eq!(h.exchange_msgs, 0);
        }
    }

    #[test]
    fn ownership_is_a_balanced_partition(levels in 1usize..9, k in 0usize..9, kind in 0usize..3) {
        prop_assume!(k <= levels);
        let kind = LayoutKind::ALL[kind];
        let bf = synth_butterfly::<f64>(
            &SyntheticButterflySpec::new(levels, 1, 0).with_center(kind.center(levels)),
        ).unwrap();
        let map = assign_ownership(&bf, &LayoutSpec::new(1 << k, kind, levels, 1)).unwrap();
        prop_assert!(map.validate().is_ok());
        let total: usize = map.u.iter().chain(map.v.iter()).map(|lv| lv.len()).sum();
        prop_assert_eq!(total, (map.u.len() + map.v.len()) << levels);
    }
}

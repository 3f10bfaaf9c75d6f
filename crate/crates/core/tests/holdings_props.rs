use std::collections::BTreeSet;

use mvecf_core::holdings::{split_dataset, SplitRatios};
use mvecf_core::InteractionMatrix;
use proptest::prelude::*;

fn holdings_strategy() -> impl Strategy<Value = InteractionMatrix> {
    (1usize..15, 2usize..25).prop_flat_map(|(m, n)| {
        prop::collection::vec(prop::collection::btree_set(0..n, 1..=n), m).prop_map(move |rows| {
            let rows: Vec<Vec<usize>> = rows.into_iter().map(|s| s.into_iter().collect()).collect();
            let users = (0..rows.len()).map(|u| format!("U{u:03}")).collect();
            let items = (0..n).map(|i| format!("S{i:03}")).collect();
            InteractionMatrix::from_rows(rows, users, items).unwrap()
        })
    })
}

fn ids(m: &InteractionMatrix, u: usize) -> BTreeSet<String> {
    m.row(u).iter().map(|&i| m.item_ids()[i].clone()).collect()
}

proptest! {
    #[test]
    fn split_partitions_every_user(full in holdings_strategy(), seed in any::<u64>()) {
        let s = split_dataset(&full, SplitRatios::default(), seed).unwrap();
        for u in 0..full.n_users() {
            let (tr, te, va) = (ids(&s.train, u), ids(&s.test, u), ids(&s.validation, u));
            prop_assert!(tr.is_disjoint(&te) && tr.is_disjoint(&va) && te.is_disjoint(&va));
            let union: BTreeSet<String> = tr.iter().chain(&te).chain(&va).cloned().collect();
            prop_assert_eq!(union, ids(&full, u));
            prop_assert!(!tr.is_empty());
        }
    }

    #[test]
    fn split_ignores_user_order(full in holdings_strategy(), seed in any::<u64>()) {
        let m = full.n_users();
        let order: Vec<usize> = (0..m).rev().collect();
        let rows = order.iter().map(|&u| full.row(u).to_vec()).collect();
        let users = order.iter().map(|&u| full.user_ids()[u].clone()).collect();
        let reversed = InteractionMatrix::from_rows(rows, users, full.item_ids().to_vec()).unwrap();

        let a = split_dataset(&full, SplitRatios::default(), seed).unwrap();
        let b = split_dataset(&reversed, SplitRatios::default(), seed).unwrap();
        for (k, &u) in order.iter().enumerate() {
            prop_assert_eq!(ids(&a.test, u), ids(&b.test, k));
            prop_assert_eq!(ids(&a.validation, u), ids(&b.validation, k));
        }
    }
}

#[test]
fn same_seed_same_partition() {
    let rows = vec![(0..10).collect(), vec![1, 2, 3, 4, 5]];
    let full = InteractionMatrix::from_index_rows(rows, 10).unwrap();
    let a = split_dataset(&full, SplitRatios::default(), 9).unwrap();
    let b = split_dataset(&full, SplitRatios::default(), 9).unwrap();
    assert_eq!(a, b);
}

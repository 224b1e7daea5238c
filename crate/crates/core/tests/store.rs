mod common;

use std::time::Duration;

use chrono::NaiveDate;
use proptest::prelude::*;
use titant::store::{FeatureRow, FeatureStore};

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn rows_strategy() -> impl Strategy<Value = (usize, Vec<FeatureRow>)> {
    (0usize..6).prop_flat_map(|dim| {
        let row = (
            "[a-z0-9_\\-]{1,12}",
            prop::collection::vec(any::<u64>().prop_map(f64::from_bits), 52),
            prop::collection::vec(any::<u64>().prop_map(f64::from_bits), dim),
        )
            .prop_map(|(user, basic, embedding)| FeatureRow { user, basic, embedding });
        (Just(dim), prop::collection::btree_map("[a-z]{1,4}", row, 1..20)).prop_map(|(dim, m)| {
            (
                dim,
                m.into_iter()
                    .map(|(k, mut r)| {
                        r.user = k;
                        r
                    })
                    .collect(),
            )
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn publish_restart_read_is_bit_exact((dim, rows) in rows_strategy(), day in 1u32..28) {
        let dir = tempfile::tempdir().unwrap();
        let date = NaiveDate::from_ymd_opt(2017, 4, day).unwrap();
        FeatureStore::open(dir.path()).unwrap().publish(date, dim, &rows).unwrap();
        let store = FeatureStore::open(dir.path()).unwrap();
        prop_assert_eq!(store.latest_date(), Some(date));
        for r in &rows {
            let got = store.get_latest(&r.user).unwrap().unwrap();
            prop_assert_eq!(bits(&got.basic), bits(&r.basic));
            prop_assert_eq!(bits(&got.embedding), bits(&r.embedding));
        }
        prop_assert!(store.get_latest("NOT-A-USER").unwrap().is_none());
    }
}

#[test]
fn versions_stay_readable_by_date() {
    let dir = tempfile::tempdir().unwrap();
    let store = FeatureStore::open(dir.path()).unwrap();
    let epoch = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
    for day in 0..5 {
        let rows: Vec<_> = (0..3).map(|u| common::stamped_row(u, day, 2)).collect();
        store.publish(epoch + chrono::Duration::days(day), 2, &rows).unwrap();
    }
    let store = FeatureStore::open(dir.path()).unwrap();
    for day in 0..5 {
        let got = store
            .get_at(epoch + chrono::Duration::days(day), "u1")
            .unwrap()
            .unwrap();
        assert_eq!(got.basic, common::stamped_row(1, day, 2).basic);
    }
}

#[test]
fn short_stress_sees_no_mixed_reads() {
    let dir = tempfile::tempdir().unwrap();
    let r = common::store_stress(dir.path(), Duration::from_secs(2));
    assert!(r.publishes > 0 && r.reads > 0);
    assert_eq!(r.mixed, 0);
}

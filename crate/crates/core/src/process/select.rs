use chrono::NaiveDate;

use super::{row_date, ProcessError};
use crate::flatten::FlatTable;

/// Rows whose `userId` is in `ids`, order preserved.
pub fn select_users<S: AsRef<str>>(
    table: &FlatTable,
    ids: impl IntoIterator<Item = S>,
) -> FlatTable {
    let ids: std::collections::HashSet<String> =
        ids.into_iter().map(|s| s.as_ref().to_string()).collect();
    table.filter_rows(|row| ids.contains(table.user_id(row)))
}

/// Rows dated within `[from, to]` (UTC calendar dates, both ends inclusive).
/// Rows without a date are dropped.
pub fn select_date_range(
    table: &FlatTable,
    from: NaiveDate,
    to: NaiveDate,
) -> Result<FlatTable, ProcessError> {
    if from > to {
        return Err(ProcessError::InvalidRange { from, to });
    }
    if table.schema().date_column().is_none() {
        return Err(ProcessError::NoDateColumn(table.schema()));
    }
    Ok(table.filter_rows(|row| row_date(table, row).is_some_and(|d| from <= d && d <= to)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flatten::{ObservationRow, SchemaKind};
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn row(user: &str, id: usize, day: u32, hour: u32) -> ObservationRow {
        ObservationRow {
            user_id: user.into(),
            resource_id: format!("obs-{id}"),
            quantity_name: "Step Count".into(),
            unit: "steps".into(),
            value: id as f64,
            loinc_code: "55423-8".into(),
            display_name: "Step count".into(),
            device_code: String::new(),
            effective_date: Utc.with_ymd_and_hms(2024, 3, day, hour, 0, 0).unwrap(),
        }
    }

    fn date(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 3, day).unwrap()
    }

    fn fixture() -> FlatTable {
        FlatTable::from_rows((1..=10).flat_map(|d| {
            [
                row("A", d as usize, d, 0),
                row("B", 100 + d as usize, d, 23),
            ]
        }))
        .unwrap()
    }

    #[test]
    fn users() {
        let t = fixture();
        let a = select_users(&t, ["A"]);
        assert_eq!(a.len(), 10);
        assert!(a.rows().iter().all(|r| a.user_id(r) == "A"));
        assert!(select_users(&t, Vec::<String>::new()).is_empty());
        assert_eq!(select_users(&t, ["A", "B", "C"]).rows(), t.rows());
    }

    #[test]
    fn date_range_is_inclusive() {
        let t = fixture();
        let one = select_date_range(&t, date(4), date(4)).unwrap();
        assert_eq!(one.len(), 2);
        let three = select_date_range(&t, date(3), date(5)).unwrap();
        assert_eq!(three.len(), 6);
        assert!(select_date_range(
            &t,
            date(1) - chrono::Days::new(5),
            date(1) - chrono::Days::new(1)
        )
        .unwrap()
        .is_empty());
    }

    #[test]
    fn reversed_range_and_user_table() {
        let t = fixture();
        assert!(matches!(
            select_date_range(&t, date(5), date(4)),
            Err(ProcessError::InvalidRange { .. })
        ));
        let users = FlatTable::new(SchemaKind::UserFlat);
        assert!(matches!(
            select_date_range(&users, date(1), date(2)),
            Err(ProcessError::NoDateColumn(SchemaKind::UserFlat))
        ));
    }

    proptest! {
        #[test]
        fn selections_match_linear_scan(
            picks in proptest::collection::vec((0usize..4, 1u32..28, 0u32..24), 0..60),
            lo in 1u32..28,
            span in 0u32..10,
            wanted in proptest::collection::btree_set(0usize..4, 0..4),
        ) {
            let users = ["u0", "u1", "u2", "u3"];
            let t = FlatTable::from_rows(
                picks.iter().enumerate().map(|(i, &(u, d, h))| row(users[u], i, d, h)),
            ).unwrap();
            let hi = (lo + span).min(31);
            let got = select_date_range(&t, date(lo), date(hi)).unwrap();
            let mut expected = Vec::new();
            for r in t.rows() {
                let d = r[8].as_timestamp().unwrap().date_naive();
                if d >= date(lo) && d <= date(hi) {
                    expected.push(r.clone());
                }
            }
            prop_assert_eq!(got.rows(), &expected[..]);

            let ids: Vec<&str> = wanted.iter().map(|&i| users[i]).collect();
            let got = select_users(&t, &ids);
            let expected: Vec<_> = t.rows().iter()
                .filter(|r| ids.contains(&r[0].as_text().unwrap()))
                .cloned().collect();
            prop_assert_eq!(got.rows(), &expected[..]);
            prop_assert_eq!(got.schema(), t.schema());
        }
    }
}

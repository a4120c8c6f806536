use chrono::{DateTime, NaiveDate, NaiveDateTime, NaiveTime, SecondsFormat, TimeZone, Utc};

/// Parses a FHIR `dateTime`/`instant`.
///
/// Accepts RFC 3339 with offset, a local date-time without offset (read as
/// UTC), a bare date (midnight UTC) and the partial forms `YYYY` / `YYYY-MM`
/// (first instant of the period).
pub(crate) fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
    ] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(Utc.from_utc_datetime(&naive));
        }
    }
    if let Ok(date) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(midnight(date));
    }
    if let Ok(date) = NaiveDate::parse_from_str(&format!("{s}-01"), "%Y-%m-%d") {
        return Some(midnight(date));
    }
    if s.len() == 4 {
        if let Ok(date) = NaiveDate::parse_from_str(&format!("{s}-01-01"), "%Y-%m-%d") {
            return Some(midnight(date));
        }
    }
    None
}

pub(crate) fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

pub(crate) fn midnight(date: NaiveDate) -> DateTime<Utc> {
    Utc.from_utc_datetime(&date.and_time(NaiveTime::MIN))
}

pub(crate) fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub(crate) fn format_date(date: &NaiveDate) -> String {
    date.format("%Y-%m-%d").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_is_normalized_to_utc() {
        let ts = parse_timestamp("2024-03-01T10:00:00+02:00").unwrap();
        assert_eq!(format_timestamp(&ts), "2024-03-01T08:00:00Z");
    }

    #[test]
    fn missing_offset_is_utc() {
        let ts = parse_timestamp("2024-03-01T10:00:00").unwrap();
        assert_eq!(format_timestamp(&ts), "2024-03-01T10:00:00Z");
    }

    #[test]
    fn partial_dates() {
        assert_eq!(
            format_timestamp(&parse_timestamp("2024-03-05").unwrap()),
            "2024-03-05T00:00:00Z"
        );
        assert_eq!(
            format_timestamp(&parse_timestamp("2024-03").unwrap()),
            "2024-03-01T00:00:00Z"
        );
        assert_eq!(
            format_timestamp(&parse_timestamp("2024").unwrap()),
            "2024-01-01T00:00:00Z"
        );
        assert!(parse_timestamp("yesterday").is_none());
    }

    #[test]
    fn subsecond_precision_survives_formatting() {
        let ts = parse_timestamp("2024-03-01T10:00:00.125Z").unwrap();
        assert_eq!(format_timestamp(&ts), "2024-03-01T10:00:00.125Z");
        assert_eq!(parse_timestamp(&format_timestamp(&ts)), Some(ts));
    }
}

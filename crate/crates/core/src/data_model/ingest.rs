use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};

use super::{hours, is_hour_aligned, DataError, HourlySeries, MarketData, Product, Timestamp};

/// Header names for the three market CSV columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMapping {
    pub timestamp: String,
    pub product: String,
    pub value: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            timestamp: "timestamp".into(),
            product: "product".into(),
            value: "value".into(),
        }
    }
}

const NAIVE_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

/// Parse an ISO-8601 timestamp. Offsets are normalized to UTC; naive
/// timestamps are taken as UTC.
pub fn parse_timestamp(raw: &str) -> Option<Timestamp> {
    let raw = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.with_timezone(&Utc));
    }
    NAIVE_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
        .map(|n| n.and_utc())
}

pub fn format_timestamp(ts: &Timestamp) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

pub fn ingest_market_csv(path: &Path, schema: &ColumnMapping) -> Result<MarketData, DataError> {
    let file = std::fs::File::open(path)?;
    read_market_csv(file, schema)
}

pub fn read_market_csv<R: Read>(
    reader: R,
    schema: &ColumnMapping,
) -> Result<MarketData, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let (ts_col, prod_col, val_col) = (
        col(&schema.timestamp)?,
        col(&schema.product)?,
        col(&schema.value)?,
    );

    let mut rows: BTreeMap<Product, Vec<(Timestamp, f64)>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");

        let raw_ts = field(ts_col);
        let ts = parse_timestamp(raw_ts).ok_or_else(|| DataError::UnparseableValue {
            line,
            detail: format!("timestamp `{raw_ts}`"),
        })?;
        if !is_hour_aligned(&ts) {
            return Err(DataError::MisalignedTimestamp(raw_ts.to_string()));
        }
        let product = field(prod_col);
        if product.is_empty() {
            return Err(DataError::EmptyProduct(line));
        }
        let raw_val = field(val_col);
        let value: f64 = raw_val
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| DataError::UnparseableValue {
                line,
                detail: format!("value `{raw_val}`"),
            })?;
        rows.entry(Product::new(product))
            .or_default()
            .push((ts, value));
    }

    let mut series = Vec::with_capacity(rows.len());
    for (product, mut points) in rows {
        points.sort_by_key(|(ts, _)| *ts);
        let start = points[0].0;
        for (k, pair) in points.windows(2).enumerate() {
            let expected = start + hours(k as i64 + 1);
            if pair[1].0 == pair[0].0 {
                return Err(DataError::DuplicateHour {
                    product,
                    hour: pair[1].0,
                });
            }
            if pair[1].0 != expected {
                return Err(DataError::GapInSeries {
                    product,
                    missing: expected,
                });
            }
        }
        let values = points.into_iter().map(|(_, v)| v).collect();
        series.push(HourlySeries::new(product, start, values)?);
    }
    MarketData::new(series)
}

/// Emit series in the canonical `timestamp,product,value` layout.
pub fn write_market_csv<W: Write>(writer: W, series: &[HourlySeries]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "product", "value"])?;
    for s in series {
        for (i, v) in s.values().iter().enumerate() {
            let ts = s.start() + hours(i as i64);
            w.write_record([
                format_timestamp(&ts),
                s.product().to_string(),
                v.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn read(text: &str) -> Result<MarketData, DataError> {
        read_market_csv(text.as_bytes(), &ColumnMapping::default())
    }

    #[test]
    fn three_rows_one_product() {
        let d = read(
            "timestamp,product,value\n\
             2023-07-01T00:00:00Z,ENERGY_RT,10.5\n\
             2023-07-01T01:00:00Z,ENERGY_RT,11\n\
             2023-07-01T02:00:00Z,ENERGY_RT,-3.25\n",
        )
        .unwrap();
        let s = d.get(&"ENERGY_RT".into()).unwrap();
        assert_eq!(s.values(), &[10.5, 11.0, -3.25]);
        assert_eq!(
            s.start(),
            Utc.with_ymd_and_hms(2023, 7, 1, 0, 0, 0).unwrap()
        );
    }

    #[test]
    fn missing_hour_reports_gap() {
        let err = read(
            "timestamp,product,value\n\
             2023-07-01T00:00:00Z,ENERGY_RT,1\n\
             2023-07-01T02:00:00Z,ENERGY_RT,3\n",
        )
        .unwrap_err();
        assert_eq!(
            err,
            DataError::GapInSeries {
                product: "ENERGY_RT".into(),
                missing: Utc.with_ymd_and_hms(2023, 7, 1, 1, 0, 0).unwrap(),
            }
        );
    }

    #[test]
    fn missing_column() {
        let err = read("time,product,value\n").unwrap_err();
        assert_eq!(err, DataError::MissingColumn("timestamp".into()));
    }

    #[test]
    fn bad_value_reports_line() {
        let err = read(
            "timestamp,product,value\n\
             2023-07-01T00:00:00Z,RT,1\n\
             2023-07-01T01:00:00Z,RT,abc\n",
        )
        .unwrap_err();
        assert!(matches!(err, DataError::UnparseableValue { line: 3, .. }));
        let err = read("timestamp,product,value\n2023-07-01T00:00:00Z,RT,NaN\n").unwrap_err();
        assert!(matches!(err, DataError::UnparseableValue { line: 2, .. }));
    }

    #[test]
    fn offsets_normalized_to_utc() {
        let d = read(
            "timestamp,product,value\n\
             2023-07-01T02:00:00+02:00,RT,1\n\
             2023-07-01 01:00:00,RT,2\n",
        )
        .unwrap();
        let s = d.get(&"RT".into()).unwrap();
        assert_eq!(
            s.start(),
            Utc.with_ymd_and_hms(2023, 7, 1, 0, 0, 0).unwrap()
        );
        assert_eq!(s.values(), &[1.0, 2.0]);
    }

    #[test]
    fn half_hour_rejected() {
        let err = read("timestamp,product,value\n2023-07-01T00:30:00Z,RT,1\n").unwrap_err();
        assert!(matches!(err, DataError::MisalignedTimestamp(_)));
    }

    #[test]
    fn duplicate_hour_rejected() {
        let err = read(
            "timestamp,product,value\n\
             2023-07-01T00:00:00Z,RT,1\n\
             2023-07-01T00:00:00Z,RT,2\n",
        )
        .unwrap_err();
        assert!(matches!(err, DataError::DuplicateHour { .. }));
    }
}

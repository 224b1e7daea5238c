//! Transaction and label records: the line-oriented text format, T+1
//! windowing, and the synthetic data generator.

mod synth;
mod window;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

pub use synth::{generate_synthetic, SyntheticConfig, SyntheticData};
pub use window::{day_of, slice_windows, LabeledRecord, WindowSpec, Windows};

use crate::error::{Error, Result};

/// Number of basic (per-transaction) features carried by every record.
pub const BASIC_FEATURES: usize = 52;

pub type BasicFeatures = [f64; BASIC_FEATURES];

/// One transfer event.
#[derive(Debug, Clone, PartialEq)]
pub struct TransactionRecord {
    pub txn_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub transferor: String,
    pub transferee: String,
    pub amount: f64,
    pub basic_features: BasicFeatures,
}

/// A delayed fraud report (or clearance) for one transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRecord {
    pub txn_id: String,
    pub is_fraud: bool,
    pub report_time: i64,
}

fn non_empty_lines<R: BufRead>(input: R) -> impl Iterator<Item = Result<(usize, String)>> {
    input
        .lines()
        .enumerate()
        .map(|(i, line)| line.map(|l| (i + 1, l)).map_err(Error::from))
        .filter(|r| match r {
            Ok((_, l)) => !l.trim_end_matches('\r').is_empty(),
            Err(_) => true,
        })
}

fn parse_id(line: usize, field: &str, raw: &str) -> Result<String> {
    if raw.is_empty() || raw.chars().any(char::is_whitespace) {
        return Err(Error::parse(line, field, format!("invalid identifier {raw:?}")));
    }
    Ok(raw.to_owned())
}

fn parse_i64(line: usize, field: &str, raw: &str) -> Result<i64> {
    raw.parse()
        .map_err(|e| Error::parse(line, field, format!("{raw:?}: {e}")))
}

fn parse_finite(line: usize, field: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw
        .parse()
        .map_err(|e| Error::parse(line, field, format!("{raw:?}: {e}")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, field, "value must be finite"));
    }
    Ok(v)
}

fn parse_record_line(line_no: usize, line: &str, out: &mut Vec<TransactionRecord>) -> Result<()> {
    let fields: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
    if fields.len() < 5 {
        return Err(Error::parse(
            line_no,
            ["txn_id", "timestamp", "transferor", "transferee", "amount"][fields.len().min(4)],
            "missing field",
        ));
    }
    let found = fields.len() - 5;
    if found != BASIC_FEATURES {
        return Err(Error::FeatureArity { line: line_no, found });
    }
    let amount = parse_finite(line_no, "amount", fields[4])?;
    if amount < 0.0 {
        return Err(Error::parse(line_no, "amount", "must be non-negative"));
    }
    let mut basic_features = [0.0; BASIC_FEATURES];
    for (i, raw) in fields[5..].iter().enumerate() {
        basic_features[i] = parse_finite(line_no, &format!("f{}", i + 1), raw)?;
    }
    out.push(TransactionRecord {
        txn_id: parse_id(line_no, "txn_id", fields[0])?,
        timestamp: parse_i64(line_no, "timestamp", fields[1])?,
        transferor: parse_id(line_no, "transferor", fields[2])?,
        transferee: parse_id(line_no, "transferee", fields[3])?,
        amount,
        basic_features,
    });
    Ok(())
}

/// Parses line-delimited records: `txn_id,timestamp,transferor,transferee,amount,f1,...,f52`.
///
/// Blank lines are skipped; line numbers in errors are 1-based file lines.
pub fn parse_records<R: BufRead>(input: R) -> Result<Vec<TransactionRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for item in non_empty_lines(input) {
        let (line_no, line) = item?;
        parse_record_line(line_no, &line, &mut out)?;
        let id = &out.last().expect("just pushed").txn_id;
        if !seen.insert(id.clone()) {
            return Err(Error::parse(line_no, "txn_id", format!("duplicate id {id:?}")));
        }
    }
    Ok(out)
}

/// Appends one record line (without the trailing newline) to `buf`.
///
/// Floats use Rust's shortest round-trip formatting, so parsing the output
/// reproduces every value bit for bit.
pub fn format_record(rec: &TransactionRecord, buf: &mut String) {
    write!(
        buf,
        "{},{},{},{},{}",
        rec.txn_id, rec.timestamp, rec.transferor, rec.transferee, rec.amount
    )
    .expect("writing to a String cannot fail");
    for v in &rec.basic_features {
        write!(buf, ",{v}").expect("writing to a String cannot fail");
    }
}

pub fn serialize_records<W: Write>(records: &[TransactionRecord], mut out: W) -> Result<()> {
    let mut buf = String::with_capacity(1024);
    for rec in records {
        buf.clear();
        format_record(rec, &mut buf);
        buf.push('\n');
        out.write_all(buf.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Parses the label file: `txn_id,is_fraud{0|1},report_time`.
pub fn parse_labels<R: BufRead>(input: R) -> Result<Vec<LabelRecord>> {
    let mut out = Vec::new();
    for item in non_empty_lines(input) {
        let (line_no, line) = item?;
        let fields: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                line_no,
                "label",
                format!("expected 3 fields, found {}", fields.len()),
            ));
        }
        let is_fraud = match fields[1] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::parse(
                    line_no,
                    "is_fraud",
                    format!("expected 0 or 1, got {other:?}"),
                ))
            }
        };
        out.push(LabelRecord {
            txn_id: parse_id(line_no, "txn_id", fields[0])?,
            is_fraud,
            report_time: parse_i64(line_no, "report_time", fields[2])?,
        });
    }
    Ok(out)
}

pub fn serialize_labels<W: Write>(labels: &[LabelRecord], mut out: W) -> Result<()> {
    for l in labels {
        writeln!(out, "{},{},{}", l.txn_id, u8::from(l.is_fraud), l.report_time)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, ts: i64) -> TransactionRecord {
        let mut f = [0.0; BASIC_FEATURES];
        for (i, v) in f.iter_mut().enumerate() {
            *v = i as f64 * 0.1 - 2.5;
        }
        TransactionRecord {
            txn_id: id.into(),
            timestamp: ts,
            transferor: "alice".into(),
            transferee: "bob".into(),
            amount: 12.5,
            basic_features: f,
        }
    }

    #[test]
    fn empty_stream_parses_to_nothing() {
        assert!(parse_records(&b""[..]).unwrap().is_empty());
        assert!(parse_records(&b"\n\n"[..]).unwrap().is_empty());
    }

    #[test]
    fn three_lines_round_trip() {
        let recs = vec![record("a", 1), record("b", 2), record("c", 3)];
        let mut buf = Vec::new();
        serialize_records(&recs, &mut buf).unwrap();
        let parsed = parse_records(&buf[..]).unwrap();
        assert_eq!(parsed.len(), 3);
        let ids: Vec<_> = parsed.iter().map(|r| r.txn_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(parsed, recs);
    }

    #[test]
    fn short_feature_vector_is_an_arity_error() {
        let (mut good, mut short) = (String::new(), String::new());
        format_record(&record("a", 1), &mut good);
        format_record(&record("b", 2), &mut short);
        short.truncate(short.rfind(',').unwrap());
        let input = format!("{good}\n{short}\n");
        let err = parse_records(input.as_bytes()).unwrap_err();
        match err {
            Error::FeatureArity { line, found } => {
                assert_eq!((line, found), (2, 51));
            }
            other => panic!("unexpected error {other}"),
        }
        assert!(err_string(&input).contains("expected 52"));
    }

    fn err_string(input: &str) -> String {
        parse_records(input.as_bytes()).unwrap_err().to_string()
    }

    #[test]
    fn malformed_field_names_line_and_field() {
        let mut line = String::new();
        format_record(&record("a", 1), &mut line);
        let bad = line.replacen(",1,", ",soon,", 1);
        let msg = err_string(&format!("\n{bad}\n"));
        assert!(msg.starts_with("line 2: field `timestamp`"), "{msg}");
        let neg = line.replacen(",12.5,", ",-1,", 1);
        assert!(err_string(&neg).contains("`amount`"));
    }

    #[test]
    fn duplicate_txn_id_rejected() {
        let mut buf = Vec::new();
        serialize_records(&[record("a", 1), record("a", 2)], &mut buf).unwrap();
        let msg = parse_records(&buf[..]).unwrap_err().to_string();
        assert!(msg.contains("line 2") && msg.contains("duplicate"), "{msg}");
    }

    #[test]
    fn labels_parse() {
        let labels = parse_labels(&b"t1,1,100\nt2,0,5\n"[..]).unwrap();
        assert_eq!(labels.len(), 2);
        assert!(labels[0].is_fraud && !labels[1].is_fraud);
        assert!(parse_labels(&b"t1,yes,100\n"[..]).is_err());
        let mut buf = Vec::new();
        serialize_labels(&labels, &mut buf).unwrap();
        assert_eq!(parse_labels(&buf[..]).unwrap(), labels);
    }
}

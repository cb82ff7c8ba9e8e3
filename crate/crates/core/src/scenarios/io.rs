//! CSV and JSON output of result rows.
//!
//! Infinities are written as the literals `inf` / `-inf` in both formats
//! (as strings in JSON, which has no infinite numbers); absent values are
//! empty CSV fields or JSON `null`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::Argument(format!("unknown format {s:?}; expected csv or json"))),
        }
    }
}

pub fn write_rows_to<W: Write, T: Serialize>(writer: W, rows: &[T], format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
            for row in rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        Format::Json => {
            let mut w = BufWriter::new(writer);
            serde_json::to_writer_pretty(&mut w, rows)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
    }
    Ok(())
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T], format: Format) -> Result<()> {
    let file = File::create(path)?;
    write_rows_to(BufWriter::new(file), rows, format)
}

pub fn read_rows_from<R: Read, T: DeserializeOwned>(reader: R, format: Format) -> Result<Vec<T>> {
    match format {
        Format::Csv => {
            let mut r = csv::Reader::from_reader(reader);
            let rows: std::result::Result<Vec<T>, csv::Error> = r.deserialize().collect();
            Ok(rows?)
        }
        Format::Json => Ok(serde_json::from_reader(BufReader::new(reader))?),
    }
}

pub fn read_rows<T: DeserializeOwned>(path: &Path, format: Format) -> Result<Vec<T>> {
    read_rows_from(File::open(path)?, format)
}

fn parse_tagged(s: &str) -> Option<f64> {
    match s {
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        "nan" | "NaN" => Some(f64::NAN),
        _ => s.parse().ok(),
    }
}

fn tag(v: f64) -> Option<&'static str> {
    if v == f64::INFINITY {
        Some("inf")
    } else if v == f64::NEG_INFINITY {
        Some("-inf")
    } else if v.is_nan() {
        Some("nan")
    } else {
        None
    }
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum NumOrText {
    Num(f64),
    Text(String),
}

/// Serde helpers for an `f64` that may be infinite.
pub mod tagged_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    use super::{parse_tagged, tag, NumOrText};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match tag(*v) {
            Some(t) => s.serialize_str(t),
            None => s.serialize_f64(*v),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match NumOrText::deserialize(d)? {
            NumOrText::Num(v) => Ok(v),
            NumOrText::Text(t) => parse_tagged(&t).ok_or_else(|| de::Error::custom(format!("not a number: {t:?}"))),
        }
    }
}

/// Serde helpers for an optional `f64` that may be infinite.
pub mod tagged_opt_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    use super::{parse_tagged, tag, NumOrText};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(v) => match tag(*v) {
                Some(t) => s.serialize_str(t),
                None => s.serialize_f64(*v),
            },
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<NumOrText>::deserialize(d)? {
            None => Ok(None),
            Some(NumOrText::Num(v)) => Ok(Some(v)),
            Some(NumOrText::Text(t)) if t.is_empty() => Ok(None),
            Some(NumOrText::Text(t)) => parse_tagged(&t)
                .map(Some)
                .ok_or_else(|| de::Error::custom(format!("not a number: {t:?}"))),
        }
    }
}

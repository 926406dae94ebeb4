use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{DataSet, LabeledSample};
use crate::error::{Error, Result};

const FIXED: [&str; 3] = ["id", "label", "domain"];

/// Reads `id,label,domain,<p>0,...,<p>{D-1}` where `<p>` is any column-name
/// prefix used consistently (`f` for features, `e` for exported embeddings).
pub fn read_csv<R: Read>(reader: R) -> Result<DataSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    if headers.len() < 3 || headers.iter().take(3).ne(FIXED.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must start with id,label,domain, got {:?}", headers),
        });
    }
    let width = headers.len() - 3;
    let prefix: Option<&str> = headers.get(3).map(|h| h.trim_end_matches('0'));
    for (i, h) in headers.iter().skip(3).enumerate() {
        let ok = prefix.is_some_and(|p| h.strip_prefix(p) == Some(i.to_string().as_str()));
        if !ok {
            return Err(Error::Parse {
                line: 1,
                message: format!("feature column {i} is named {h:?}"),
            });
        }
    }

    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width + 3 {
            return Err(Error::Schema(format!(
                "line {line}: expected {} fields, found {}",
                width + 3,
                rec.len()
            )));
        }
        let parse_err = |what: &str, raw: &str| Error::Parse {
            line,
            message: format!("bad {what} {raw:?}"),
        };
        let id = rec[0].trim().parse::<u64>().map_err(|_| parse_err("id", &rec[0]))?;
        let class_id = rec[1].trim().parse::<u32>().map_err(|_| parse_err("label", &rec[1]))?;
        let mut features = Vec::with_capacity(width);
        for raw in rec.iter().skip(3) {
            let v = raw.trim().parse::<f64>().map_err(|_| parse_err("feature", raw))?;
            if !v.is_finite() {
                return Err(parse_err("non-finite feature", raw));
            }
            features.push(v);
        }
        samples.push(LabeledSample {
            id,
            features,
            class_id,
            domain: rec[2].to_string(),
        });
    }
    DataSet::new(samples)
}

pub fn load_csv(path: &Path) -> Result<DataSet> {
    read_csv(File::open(path)?)
}

/// Writes reals with 17 significant digits (`{:.16e}`), which parse back to
/// the identical `f64`.
pub fn write_csv<W: Write>(writer: W, dataset: &DataSet, prefix: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let width = dataset.dim().unwrap_or(0);
    let mut header: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    header.extend((0..width).map(|i| format!("{prefix}{i}")));
    w.write_record(&header).map_err(csv_io)?;
    for s in dataset.samples() {
        let mut row = vec![s.id.to_string(), s.class_id.to_string(), s.domain.clone()];
        row.extend(s.features.iter().map(|v| format!("{v:.16e}")));
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(dataset: &DataSet, path: &Path) -> Result<()> {
    write_csv(File::create(path)?, dataset, "f")
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Schema(format!("{other:?}")),
    }
}

//! Per-(frame, track) feature log in CSV, and tabular feature input.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::classify::Label;
use crate::features::FeatureVector;

pub const FEATURE_LOG_HEADER: [&str; 8] = ["frame", "track_id", "ratio", "E", "angle", "pc1", "pc2", "label"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLogRow {
    pub frame: u64,
    pub track_id: u64,
    pub ratio: f64,
    #[serde(rename = "E")]
    pub e: f64,
    pub angle: f64,
    pub pc1: Option<f64>,
    pub pc2: Option<f64>,
    pub label: Option<Label>,
}

impl FeatureLogRow {
    pub fn features(&self) -> FeatureVector {
        FeatureVector::new(self.ratio, self.e, self.angle)
    }
}

pub struct FeatureLogWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> FeatureLogWriter<W> {
    /// Writes the header immediately so an empty log is still well formed.
    pub fn new(out: W) -> Result<Self, PipelineError> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        inner.write_record(FEATURE_LOG_HEADER).map_err(csv_err)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &FeatureLogRow) -> Result<(), PipelineError> {
        self.inner.serialize(row).map_err(csv_err)
    }

    pub fn flush(&mut self) -> Result<(), PipelineError> {
        Ok(self.inner.flush()?)
    }

    pub fn into_inner(self) -> Result<W, PipelineError> {
        self.inner
            .into_inner()
            .map_err(|e| PipelineError::Stream(e.into_error()))
    }
}

fn csv_err(e: csv::Error) -> PipelineError {
    let context = e
        .position()
        .map(|p| format!("csv line {}", p.line()))
        .unwrap_or_else(|| "csv".to_string());
    PipelineError::Parse {
        context,
        message: e.to_string(),
    }
}

pub fn read_feature_log<R: Read>(input: R) -> Result<Vec<FeatureLogRow>, PipelineError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().ne(FEATURE_LOG_HEADER) {
        return Err(PipelineError::Parse {
            context: "feature log header".into(),
            message: format!("expected {}", FEATURE_LOG_HEADER.join(",")),
        });
    }
    rdr.deserialize().map(|r| r.map_err(csv_err)).collect()
}

/// Reads any CSV with `ratio`, `E` and `angle` columns and an optional
/// `label` column (feature logs qualify). Extra columns are ignored.
pub fn read_feature_table<R: Read>(input: R) -> Result<Vec<(FeatureVector, Option<Label>)>, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(ci), Some(ce), Some(ca)) = (col("ratio"), col("E"), col("angle")) else {
        return Err(PipelineError::Parse {
            context: "feature table header".into(),
            message: "needs ratio, E and angle columns".into(),
        });
    };
    let cl = col("label");
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = n + 2;
        let num = |c: usize| -> Result<f64, PipelineError> {
            let field = rec.get(c).unwrap_or("");
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| PipelineError::Parse {
                    context: format!("feature table line {line}"),
                    message: format!("{:?} is not a finite number", field),
                })
        };
        let features = FeatureVector::new(num(ci)?, num(ce)?, num(ca)?);
        let label = match cl.and_then(|c| rec.get(c)).filter(|s| !s.is_empty()) {
            None => None,
            Some(s) => Some(s.parse::<Label>().map_err(|_| PipelineError::Parse {
                context: format!("feature table line {line}"),
                message: format!("unknown label {s:?}"),
            })?),
        };
        out.push((features, label));
    }
    Ok(out)
}

/// Reads `(pc1, pc2)` points with labels from any CSV having `pc1`, `pc2`
/// and `label` columns. Rows with an empty cell in any of them are skipped.
pub fn read_projected_samples<R: Read>(input: R) -> Result<Vec<([f64; 2], Label)>, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(c1), Some(c2), Some(cl)) = (col("pc1"), col("pc2"), col("label")) else {
        return Err(PipelineError::Parse {
            context: "sample table header".into(),
            message: "needs pc1, pc2 and label columns".into(),
        });
    };
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let cells = [c1, c2, cl].map(|c| rec.get(c).unwrap_or(""));
        if cells.iter().any(|c| c.is_empty()) {
            continue;
        }
        let bad = |what: &str| PipelineError::Parse {
            context: format!("sample table line {}", n + 2),
            message: what.to_string(),
        };
        let pc1: f64 = cells[0].parse().map_err(|_| bad("pc1 is not a number"))?;
        let pc2: f64 = cells[1].parse().map_err(|_| bad("pc2 is not a number"))?;
        let label: Label = cells[2].parse().map_err(|_| bad("unknown label"))?;
        out.push(([pc1, pc2], label));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_roundtrip_is_exact() {
        let rows = vec![
            FeatureLogRow {
                frame: 3,
                track_id: 1,
                ratio: 0.1 + 0.2,
                e: 1.0 / 3.0,
                angle: 12.345678901234567,
                pc1: Some(-1.0e-17),
                pc2: Some(2.5),
                label: Some(Label::Low),
            },
            FeatureLogRow {
                frame: 4,
                track_id: 2,
                ratio: 0.0,
                e: 0.5,
                angle: 0.0,
                pc1: None,
                pc2: None,
                label: None,
            },
        ];
        let mut w = FeatureLogWriter::new(Vec::new()).unwrap();
        for r in &rows {
            w.write(r).unwrap();
        }
        let bytes = w.into_inner().unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("frame,track_id,ratio,E,angle,pc1,pc2,label\n"));
        assert!(text.contains(",low\n"));
        assert_eq!(read_feature_log(bytes.as_slice()).unwrap(), rows);
    }

    #[test]
    fn empty_log_has_header() {
        let w = FeatureLogWriter::new(Vec::new()).unwrap();
        let bytes = w.into_inner().unwrap();
        assert_eq!(bytes, b"frame,track_id,ratio,E,angle,pc1,pc2,label\n");
        assert!(read_feature_log(bytes.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn table_with_and_without_labels() {
        let t = read_feature_table("ratio,E,angle,label\n0.22,0.62,52,high\n0.4, 0.36, 31,low\n".as_bytes()).unwrap();
        assert_eq!(t[0], (FeatureVector::new(0.22, 0.62, 52.0), Some(Label::High)));
        assert_eq!(t[1].1, Some(Label::Low));
        let t = read_feature_table("angle,E,ratio\n1,0.5,0.3\n".as_bytes()).unwrap();
        assert_eq!(t[0], (FeatureVector::new(0.3, 0.5, 1.0), None));
        assert!(read_feature_table("ratio,E\n1,2\n".as_bytes()).is_err());
        assert!(read_feature_table("ratio,E,angle\n1,x,2\n".as_bytes()).is_err());
    }

    #[test]
    fn projected_samples() {
        let s = read_projected_samples("pc1,pc2,label\n-1.89,0.21,high\n2.88,0.68,low\n1,2,\n".as_bytes()).unwrap();
        assert_eq!(s, vec![([-1.89, 0.21], Label::High), ([2.88, 0.68], Label::Low)]);
        assert!(read_projected_samples("pc1,label\n1,high\n".as_bytes()).is_err());
    }
}

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "step,loss,grad_norm,lr,method";

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub method: String,
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data(format!("metrics csv: {other:?}")),
    }
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(METRICS_HEADER.split(',')).map_err(csv_err)?;
    }
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    if header.join(",") != METRICS_HEADER {
        return Err(Error::Data(format!(
            "metrics csv: header `{}`, expected `{METRICS_HEADER}`",
            header.join(",")
        )));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_header() {
        let rows = vec![
            MetricsRow {
                step: 0,
                loss: 1.25,
                grad_norm: 0.1,
                lr: 1e-3,
                method: "sst".into(),
            },
            MetricsRow {
                step: 1,
                loss: 0.3333333333333333,
                grad_norm: 0.0,
                lr: 1e-3,
                method: "sst".into(),
            },
        ];
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("step,loss,grad_norm,lr,method\n"));
        assert_eq!(read_metrics_csv(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn empty_still_has_header() {
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,loss,grad_norm,lr,method\n");
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(read_metrics_csv(&b"a,b\n1,2\n"[..]).is_err());
    }
}

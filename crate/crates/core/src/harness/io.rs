//! CSV stream files: header `t,x1..xd,y[,concept_id]`, one row per observation.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::datagen::Stream;
use crate::error::{Error, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path, row: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), row, msg: msg.into() }
}

/// Reads a stream in file order. Row numbers in errors count the header as row 1.
pub fn read_csv(path: &Path) -> Result<Stream> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let t_col = find("t").ok_or_else(|| parse_err(path, 1, "missing column \"t\""))?;
    let y_col = find("y").ok_or_else(|| parse_err(path, 1, "missing column \"y\""))?;
    let concept_col = find("concept_id");
    let mut x_cols = Vec::new();
    for j in 1.. {
        match find(&format!("x{j}")) {
            Some(c) => x_cols.push(c),
            None => break,
        }
    }
    if x_cols.is_empty() {
        return Err(parse_err(path, 1, "missing column \"x1\""));
    }
    let known = 2 + x_cols.len() + usize::from(concept_col.is_some());
    if headers.len() != known {
        let extra: Vec<&str> = headers
            .iter()
            .filter(|h| !(*h == "t" || *h == "y" || *h == "concept_id" || x_cols.iter().any(|&c| headers.get(c) == Some(h))))
            .collect();
        return Err(parse_err(path, 1, format!("unexpected columns {extra:?}")));
    }

    let d = x_cols.len();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ts = Vec::new();
    let mut concepts = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| parse_err(path, row, e.to_string()))?;
        let cell = |c: usize| rec.get(c).unwrap_or("");
        let real = |c: usize| -> Result<f64> {
            let s = cell(c);
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, row, format!("column \"{}\": `{s}` is not a finite number", &headers[c])))
        };
        let t = cell(t_col)
            .parse::<u64>()
            .map_err(|_| parse_err(path, row, format!("column \"t\": `{}` is not a non-negative integer", cell(t_col))))?;
        ts.push(t);
        for &c in &x_cols {
            xs.push(real(c)?);
        }
        ys.push(real(y_col)?);
        if let Some(c) = concept_col {
            let v = cell(c).parse::<usize>().map_err(|_| {
                parse_err(path, row, format!("column \"concept_id\": `{}` is not a non-negative integer", cell(c)))
            })?;
            concepts.push(v);
        }
    }
    if ys.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    let n = ys.len();
    Ok(Stream {
        x: DMatrix::from_row_slice(n, d, &xs),
        y: DVector::from_vec(ys),
        t: ts,
        concept: concept_col.map(|_| concepts),
    })
}

/// Writes a stream; values use the shortest representation that reads back exactly.
pub fn write_csv(path: &Path, stream: &Stream) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Error::Io { path: path.to_path_buf(), source: std::io::Error::other(e) };
    let d = stream.dims();
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|j| format!("x{j}")));
    header.push("y".into());
    if stream.concept.is_some() {
        header.push("concept_id".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..stream.len() {
        let mut rec = vec![stream.t[i].to_string()];
        rec.extend((0..d).map(|j| stream.x[(i, j)].to_string()));
        rec.push(stream.y[i].to_string());
        if let Some(c) = &stream.concept {
            rec.push(c[i].to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Line-delimited JSON writer that flushes after every record.
pub struct JsonLines<W: Write> {
    out: W,
}

impl<W: Write> JsonLines<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write<T: serde::Serialize>(&mut self, record: &T) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }
}

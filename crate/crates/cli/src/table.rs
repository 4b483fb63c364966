use std::io::Write;

use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            // `{}` prints the shortest string that parses back to the same f64.
            Cell::Float(v) => format!("{v}"),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => Value::from(*v),
            Cell::Float(v) => serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number),
            Cell::Text(s) => Value::from(s.as_str()),
            Cell::Empty => Value::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Rectangular output: a header and rows of the same width.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputTable {
    columns: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

impl OutputTable {
    pub fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn write<W: Write>(&self, w: W, format: Format) -> std::io::Result<()> {
        match format {
            Format::Csv => self.write_csv(w),
            Format::Json => self.write_json(w),
        }
    }

    fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.columns)?;
        for row in &self.rows {
            out.write_record(row.iter().map(Cell::csv))?;
        }
        out.flush()
    }

    fn write_json<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: Map<String, Value> = self
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(c, v)| (c.to_string(), v.json()))
                    .collect();
                Value::Object(obj)
            })
            .collect();
        serde_json::to_writer_pretty(&mut w, &rows)?;
        writeln!(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_floats() {
        let values = [0.1, 1.0 / 3.0, 1e-300, 123456.789, f64::MIN_POSITIVE];
        let mut t = OutputTable::new(&["x", "label"]);
        for v in values {
            t.push(vec![v.into(), "a,b".into()]);
        }
        let mut buf = Vec::new();
        t.write(&mut buf, Format::Csv).unwrap();
        let mut r = csv::Reader::from_reader(buf.as_slice());
        let parsed: Vec<f64> = r.records().map(|rec| rec.unwrap()[0].parse().unwrap()).collect();
        assert_eq!(parsed, values);
    }

    #[test]
    fn json_keeps_column_order_and_nulls() {
        let mut t = OutputTable::new(&["z", "a"]);
        t.push(vec![f64::NAN.into(), Cell::Empty]);
        let mut buf = Vec::new();
        t.write(&mut buf, Format::Json).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.find("\"z\"").unwrap() < s.find("\"a\"").unwrap());
        assert!(s.contains("null"));
    }

    #[test]
    #[should_panic]
    fn rejects_ragged_rows() {
        OutputTable::new(&["a"]).push(vec![Cell::Empty, Cell::Empty]);
    }
}

//! CSV artifacts. Floats carry 17 significant digits so they round-trip.

use std::path::Path;

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// `v` with 17 significant digits.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Column names `x_1 .. x_d`.
pub fn coord_columns(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x_{i}")).collect()
}

impl Artifact {
    pub fn new(name: &str, header: Vec<String>) -> Self {
        Artifact {
            name: name.to_string(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn push_numbers(&mut self, row: &[f64]) {
        self.rows.push(row.iter().map(|v| num(*v)).collect());
    }

    pub fn to_csv_string(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| CliError::new("output/io", e.to_string(), 2);
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::new("output/io", e.to_string(), 2))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = self.to_csv_string()?;
        std::fs::write(path, text).map_err(|e| CliError::new("output/io", format!("cannot write {}: {e}", path.display()), 2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            let s = num(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            let mantissa = s.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(mantissa.len(), 17);
        }
    }

    #[test]
    fn header_then_rows() {
        let mut a = Artifact::new("t.csv", vec!["a".into(), "b".into()]);
        a.push_numbers(&[1.0, 2.0]);
        let s = a.to_csv_string().unwrap();
        assert_eq!(s.lines().next(), Some("a,b"));
        assert_eq!(s.lines().count(), 2);
    }
}

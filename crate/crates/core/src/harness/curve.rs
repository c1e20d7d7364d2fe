//! Experiment curves and their CSV form.
//!
//! Header `sweep_value,method,metric,mean,std,n_seeds`, LF line endings, reals
//! written with 17 significant digits.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "sweep_value,method,metric,mean,std,n_seeds";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Conventional,
    Joint,
    JointAdapt,
    Maml,
    MamlFo,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Conventional => "conventional",
            Method::Joint => "joint",
            Method::JointAdapt => "joint+adapt",
            Method::Maml => "maml",
            Method::MamlFo => "maml-fo",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "conventional" => Method::Conventional,
            "joint" => Method::Joint,
            "joint+adapt" => Method::JointAdapt,
            "maml" => Method::Maml,
            "maml-fo" => Method::MamlFo,
            other => return Err(format!("unknown method `{other}`")),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Ser,
    Bler,
    MetaLoss,
}

impl Metric {
    pub fn label(&self) -> &'static str {
        match self {
            Metric::Ser => "ser",
            Metric::Bler => "bler",
            Metric::MetaLoss => "meta_loss",
        }
    }

    pub fn is_rate(&self) -> bool {
        matches!(self, Metric::Ser | Metric::Bler)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "ser" => Metric::Ser,
            "bler" => Metric::Bler,
            "meta_loss" => Metric::MetaLoss,
            other => return Err(format!("unknown metric `{other}`")),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub sweep_value: f64,
    pub method: Method,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

impl CurveRow {
    /// Row summarizing `samples` (population standard deviation).
    pub fn summarize(sweep_value: f64, method: Method, metric: Metric, samples: &[f64], n_seeds: usize) -> Self {
        let n = samples.len().max(1) as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        CurveRow {
            sweep_value,
            method,
            metric,
            mean,
            std: var.sqrt(),
            n_seeds,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CurveTable {
    pub rows: Vec<CurveRow>,
}

/// `%.17g`-style formatting: 17 significant digits, shortest fixed or
/// scientific layout.
pub fn format_real(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let sci = format!("{x:.16e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..]
        .parse()
        .expect("integer exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        trim_zeros(&sci)
    }
}

fn trim_zeros(s: &str) -> String {
    let (mantissa, exponent) = match s.find('e') {
        Some(i) => (&s[..i], &s[i..]),
        None => (s, ""),
    };
    let mantissa = if mantissa.contains('.') {
        mantissa.trim_end_matches('0').trim_end_matches('.')
    } else {
        mantissa
    };
    format!("{mantissa}{exponent}")
}

impl CurveTable {
    pub fn new() -> Self {
        CurveTable::default()
    }

    pub fn push(&mut self, row: CurveRow) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// First row matching the key.
    pub fn get(&self, sweep_value: f64, method: Method, metric: Metric) -> Option<&CurveRow> {
        self.rows
            .iter()
            .find(|r| r.sweep_value == sweep_value && r.method == method && r.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                format_real(r.sweep_value),
                r.method,
                r.metric,
                format_real(r.mean),
                format_real(r.std),
                r.n_seeds
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == CSV_HEADER => {}
            _ => return Err(Error::config(format!("curve CSV must start with `{CSV_HEADER}`"))),
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::config(format!("curve CSV line {}: bad {what}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad("field count"));
            }
            rows.push(CurveRow {
                sweep_value: f[0].parse().map_err(|_| bad("sweep_value"))?,
                method: f[1].parse().map_err(|_| bad("method"))?,
                metric: f[2].parse().map_err(|_| bad("metric"))?,
                mean: f[3].parse().map_err(|_| bad("mean"))?,
                std: f[4].parse().map_err(|_| bad("std"))?,
                n_seeds: f[5].parse().map_err(|_| bad("n_seeds"))?,
            });
        }
        Ok(CurveTable { rows })
    }
}

pub fn write_curve(table: &CurveTable, path: &Path) -> Result<()> {
    std::fs::write(path, table.to_csv()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_curve(path: &Path) -> Result<CurveTable> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    CurveTable::from_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn formatting_examples() {
        assert_eq!(format_real(0.0), "0");
        assert_eq!(format_real(4.0), "4");
        assert_eq!(format_real(0.25), "0.25");
        assert_eq!(format_real(0.1), "0.10000000000000001");
        assert_eq!(format_real(1e-7), "9.9999999999999995e-8");
        assert_eq!(format_real(-2.5e20), "-2.5e20");
    }

    proptest! {
        #[test]
        fn reals_round_trip(x in proptest::num::f64::NORMAL) {
            let back: f64 = format_real(x).parse().unwrap();
            prop_assert_eq!(back, x);
        }
    }

    #[test]
    fn csv_round_trip_and_row_count() {
        let mut t = CurveTable::new();
        t.push(CurveRow::summarize(4.0, Method::Maml, Metric::Ser, &[0.1, 0.3], 2));
        t.push(CurveRow::summarize(4.0, Method::JointAdapt, Metric::Ser, &[0.5], 1));
        t.push(CurveRow::summarize(
            0.0,
            Method::Conventional,
            Metric::Bler,
            &[0.9375],
            3,
        ));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        write_curve(&t, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("sweep_value,method,metric,mean,std,n_seeds\n"));
        assert!(!text.contains('\r'));
        let back = read_curve(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back, t);
        assert!((t.rows[0].mean - 0.2).abs() < 1e-15);
        assert!((t.rows[0].std - 0.1).abs() < 1e-15);
    }

    #[test]
    fn malformed_csv() {
        assert!(CurveTable::from_csv("a,b\n").is_err());
        assert!(CurveTable::from_csv(&format!("{CSV_HEADER}\n1,maml,ser,0.1\n")).is_err());
        assert!(CurveTable::from_csv(&format!("{CSV_HEADER}\n1,svm,ser,0.1,0,1\n")).is_err());
    }
}

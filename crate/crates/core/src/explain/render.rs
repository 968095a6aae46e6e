use std::fmt::Write as _;
use std::str::FromStr;

use super::{AttributeRow, Explanation};
use crate::error::{Error, Result};
use crate::shapley::Method;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderFormat {
    Table,
    Csv,
    Json,
}

impl FromStr for RenderFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(Self::Table),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::Domain(format!("unknown format {other:?}; use table, csv or json"))),
        }
    }
}

fn two_decimals(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

/// `Name ↑ 0.12 | Other ↓ -0.03 | ...`
pub fn format_row_line(rows: &[AttributeRow]) -> String {
    rows.iter()
        .map(|r| format!("{} {} {}", r.name, r.arrow(), two_decimals(r.phi)))
        .collect::<Vec<_>>()
        .join(" | ")
}

pub fn render_explanation(explanation: &Explanation, format: RenderFormat) -> Result<String> {
    match format {
        RenderFormat::Table => Ok(render_table(explanation)),
        RenderFormat::Csv => render_csv(explanation),
        RenderFormat::Json => explanation.to_json(),
    }
}

fn render_table(e: &Explanation) -> String {
    let method = match &e.method {
        Method::Exact => "exact".to_string(),
        Method::Sampled { permutations, seed } => format!("sampled ({permutations} permutations, seed {seed})"),
    };
    let mut out = String::new();
    let _ = writeln!(out, "{}", format_row_line(&e.rows));
    let _ = writeln!(out, "original prediction        {:.4}", e.original_prediction);
    let _ = writeln!(out, "counterfactual prediction  {:.4}", e.counterfactual_prediction);
    let _ = writeln!(out, "difference                 {:+.4}", e.difference());
    let _ = writeln!(out, "efficiency residual        {:.3e}", e.efficiency_residual);
    let _ = writeln!(
        out,
        "empty-spec prediction      {:.4} (drift {:+.4})",
        e.empty_spec_prediction,
        e.empty_coalition_drift()
    );
    let _ = writeln!(out, "oracle calls               {}", e.oracle_calls);
    let _ = writeln!(out, "method                     {method}");
    out
}

fn render_csv(e: &Explanation) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |err: csv::Error| Error::Format(err.to_string());
    w.write_record(["attribute", "direction", "phi", "std_error"]).map_err(csv_err)?;
    for r in &e.rows {
        let se = r.std_error.map(|s| s.to_string()).unwrap_or_default();
        w.write_record([r.name.as_str(), &r.direction.to_string(), &r.phi.to_string(), &se])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|err| Error::Format(err.to_string()))?;
    String::from_utf8(bytes).map_err(|err| Error::Format(err.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Explanation {
        Explanation {
            rows: vec![
                AttributeRow { name: "Young".into(), direction: -1, phi: -0.28, std_error: None },
                AttributeRow { name: "Odd, \"name\"".into(), direction: 1, phi: 1.0 / 3.0, std_error: Some(0.01) },
                AttributeRow { name: "Tiny".into(), direction: 1, phi: -0.001, std_error: None },
            ],
            original_prediction: 0.73,
            counterfactual_prediction: 0.12,
            efficiency_residual: 0.0,
            empty_spec_prediction: 0.731,
            oracle_calls: 9,
            evaluations: 8,
            method: Method::Exact,
            latent: vec![0.0],
        }
    }

    #[test]
    fn table_rounds_and_normalises_negative_zero() {
        let t = render_explanation(&sample(), RenderFormat::Table).unwrap();
        let first = t.lines().next().unwrap();
        assert_eq!(first, "Young ↓ -0.28 | Odd, \"name\" ↑ 0.33 | Tiny ↑ 0.00");
        assert!(t.contains("original prediction        0.7300"));
        assert!(t.contains("oracle calls               9"));
    }

    #[test]
    fn csv_roundtrips_full_precision() {
        let e = sample();
        let text = render_explanation(&e, RenderFormat::Csv).unwrap();
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let parsed: Vec<(String, i8, f64)> = r
            .records()
            .map(|rec| {
                let rec = rec.unwrap();
                (rec[0].to_string(), rec[1].parse().unwrap(), rec[2].parse().unwrap())
            })
            .collect();
        assert_eq!(parsed.len(), 3);
        for (row, (name, dir, phi)) in e.rows.iter().zip(parsed) {
            assert_eq!((row.name.as_str(), row.direction), (name.as_str(), dir));
            assert_eq!(row.phi.to_bits(), phi.to_bits());
        }
    }

    #[test]
    fn format_names() {
        assert_eq!("csv".parse::<RenderFormat>().unwrap(), RenderFormat::Csv);
        assert!("xml".parse::<RenderFormat>().is_err());
    }
}

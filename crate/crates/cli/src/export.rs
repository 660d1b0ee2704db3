use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::Format;
use crate::runner::{Report, Row};

pub const CSV_HEADER: [&str; 12] = [
    "route",
    "eps",
    "phi_k",
    "beta",
    "seed",
    "k",
    "j",
    "sigma",
    "sigma_rescaled_2pi",
    "est_error",
    "wall_ms",
    "error",
];

pub const CSV_FILE: &str = "results.csv";
pub const JSON_FILE: &str = "summary.json";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn csv_record(r: &Row) -> [String; 12] {
    [
        r.route.name().to_string(),
        opt(r.eps),
        opt(r.phi_k),
        r.beta.map(|b| format!("{b:?}")).unwrap_or_else(|| "inf".into()),
        r.seed.to_string(),
        r.k.to_string(),
        r.j.to_string(),
        opt(r.sigma),
        opt(r.sigma_rescaled_2pi()),
        opt(r.est_error),
        format!("{:.3}", r.wall_ms),
        r.error.clone().unwrap_or_default(),
    ]
}

/// Floats use the shortest representation that reads back exactly, in
/// exponent form outside `[1e-5, 1e16)`.
pub fn write_csv<W: Write>(rows: &[Row], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(csv_record(r))?;
    }
    w.flush()
}

pub fn write_json<W: Write>(report: &Report, out: W) -> std::io::Result<()> {
    serde_json::to_writer_pretty(out, report)?;
    Ok(())
}

pub fn read_json(path: &Path) -> std::io::Result<Report> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes the configured formats into `dir` and returns the written paths.
pub fn export(report: &Report, dir: &Path, formats: &[Format]) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for format in formats {
        let path = match format {
            Format::Csv => dir.join(CSV_FILE),
            Format::Json => dir.join(JSON_FILE),
        };
        let mut file = BufWriter::new(File::create(&path)?);
        match format {
            Format::Csv => write_csv(&report.rows, &mut file)?,
            Format::Json => write_json(report, &mut file)?,
        }
        file.flush()?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use linresp::response::Route;

    #[test]
    fn empty_report_gives_header_only() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
    }

    #[test]
    fn floats_round_trip() {
        let row = Row {
            route: Route::Kubo,
            eps: Some(0.1),
            phi_k: None,
            beta: None,
            seed: 3,
            k: 0,
            j: 1,
            sigma: Some(-1.25e-7),
            est_error: Some(1e-13),
            wall_ms: 2.0,
            error: None,
        };
        let mut buf = Vec::new();
        write_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert!(line.starts_with("kubo,0.1,,inf,3,0,1,-1.25e-7,"), "{line}");
        let back: f64 = line.split(',').nth(7).unwrap().parse().unwrap();
        assert_eq!(back, -1.25e-7);
    }
}

//! CSV histograms.
//!
//! Metadata travels in leading `# key=value` comment lines so a histogram
//! can be re-read without loss. Floats use Rust's shortest round-trip form.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nvlink_core::correlator::{CorrelationHistogram, CountRateHistogram, IntensityTrace, LifetimeHistogram};
use nvlink_core::fitters::{G2Series, SaturationPoint};

use crate::error::{CliError, Result};

pub const G2_HEADER: &str = "lag_ps,counts,g2";
pub const LIFETIME_HEADER: &str = "delay_ps,counts";
pub const TRACE_HEADER: &str = "start_s,counts";
pub const RATE_HISTOGRAM_HEADER: &str = "rate_lower,entries";
pub const SATURATION_HEADER: &str = "power_mw,rate,sigma";

fn meta(out: &mut String, key: &str, value: impl std::fmt::Display) {
    writeln!(out, "# {key}={value}").unwrap();
}

pub fn correlation_csv(h: &CorrelationHistogram) -> String {
    let mut out = String::new();
    meta(&mut out, "bin_width_ps", h.bin_width_ps);
    meta(&mut out, "lag_min_ps", h.lag_min_ps);
    meta(&mut out, "lag_max_ps", h.lag_max_ps);
    meta(&mut out, "acquisition_time_s", h.acquisition_time_s);
    meta(&mut out, "rate_a", h.rate_a);
    meta(&mut out, "rate_b", h.rate_b);
    out.push_str(G2_HEADER);
    out.push('\n');
    for (i, c) in h.counts.iter().enumerate() {
        match h.g2(i) {
            Some(g) => writeln!(out, "{},{c},{g}", h.bin_lower_ps(i)).unwrap(),
            None => writeln!(out, "{},{c},", h.bin_lower_ps(i)).unwrap(),
        }
    }
    out
}

pub fn lifetime_csv(h: &LifetimeHistogram, sync_channel: u8, channel: u8) -> String {
    let mut out = String::new();
    meta(&mut out, "bin_width_ps", h.bin_width_ps);
    meta(&mut out, "sync_channel", sync_channel);
    meta(&mut out, "channel", channel);
    out.push_str(LIFETIME_HEADER);
    out.push('\n');
    for (i, c) in h.counts.iter().enumerate() {
        writeln!(out, "{},{c}", i as u64 * h.bin_width_ps).unwrap();
    }
    out
}

pub fn trace_csv(trace: &IntensityTrace) -> String {
    let mut out = String::new();
    meta(&mut out, "bin_s", trace.bin_s);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for (i, c) in trace.counts.iter().enumerate() {
        writeln!(out, "{},{c}", trace.start_s + i as f64 * trace.bin_s).unwrap();
    }
    out
}

pub fn rate_histogram_csv(h: &CountRateHistogram) -> String {
    let mut out = String::new();
    meta(&mut out, "bin_rate", h.bin_rate);
    out.push_str(RATE_HISTOGRAM_HEADER);
    out.push('\n');
    for (i, c) in h.counts.iter().enumerate() {
        writeln!(out, "{},{c}", i as f64 * h.bin_rate).unwrap();
    }
    out
}

/// A parsed CSV: metadata comments plus rows keyed by the expected columns.
struct Table {
    meta: BTreeMap<String, String>,
    rows: Vec<Vec<Option<f64>>>,
}

fn data_err(msg: impl Into<String>) -> CliError {
    CliError::Data(msg.into())
}

fn parse_table(text: &str, columns: &[&str], optional: &[&str]) -> Result<Table> {
    let mut meta = BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| l.starts_with('#')) {
        if let Some((k, v)) = line[1..].split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| data_err(format!("unreadable CSV header: {e}")))?
        .clone();
    let mut index = Vec::with_capacity(columns.len());
    for &col in columns {
        match headers.iter().position(|h| h == col) {
            Some(i) => index.push(Some(i)),
            None if optional.contains(&col) => index.push(None),
            None => {
                return Err(data_err(format!(
                    "CSV header {:?} lacks column `{col}` (expected {})",
                    headers.iter().collect::<Vec<_>>(),
                    columns.join(",")
                )))
            }
        }
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| data_err(format!("malformed CSV: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut row = Vec::with_capacity(columns.len());
        for (&col, idx) in columns.iter().zip(&index) {
            let cell = idx.and_then(|i| rec.get(i)).unwrap_or("");
            if cell.is_empty() {
                row.push(None);
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| data_err(format!("line {line}: `{col}` value {cell:?} is not a number")))?;
            row.push(Some(v));
        }
        rows.push(row);
    }
    Ok(Table { meta, rows })
}

fn required(v: Option<f64>, col: &str, row: usize) -> Result<f64> {
    v.ok_or_else(|| data_err(format!("data row {row}: missing `{col}`")))
}

fn meta_f64(t: &Table, key: &str) -> Result<Option<f64>> {
    t.meta
        .get(key)
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| data_err(format!("metadata {key}={v} is not a number")))
        })
        .transpose()
}

/// Bin width from metadata, else from the spacing of the first two rows.
fn bin_width(t: &Table, x: &[f64]) -> Result<f64> {
    if let Some(w) = meta_f64(t, "bin_width_ps")? {
        return Ok(w);
    }
    match x {
        [a, b, ..] => Ok(b - a),
        _ => Err(data_err("cannot infer the bin width from fewer than two rows")),
    }
}

fn check_grid(x: &[f64], start: f64, width: f64) -> Result<()> {
    if !(width > 0.0) {
        return Err(data_err(format!("bin width {width} must be positive")));
    }
    for (i, &v) in x.iter().enumerate() {
        if (v - (start + i as f64 * width)).abs() > 1e-6 * width {
            return Err(data_err(format!("data row {i}: bins are not contiguous")));
        }
    }
    Ok(())
}

/// Correlation CSV to a fit series. Uncertainties are Poisson on the raw
/// counts divided by the normalization, which comes from metadata when
/// present and otherwise from the ratio of counts to `g2`.
pub fn parse_g2(text: &str) -> Result<G2Series> {
    let t = parse_table(text, &["lag_ps", "counts", "g2"], &[])?;
    let mut lag = Vec::new();
    let mut counts = Vec::new();
    let mut values = Vec::new();
    for (i, r) in t.rows.iter().enumerate() {
        lag.push(required(r[0], "lag_ps", i)?);
        counts.push(required(r[1], "counts", i)?);
        values.push(r[2].ok_or(CliError::Data(format!(
            "data row {i}: g2 is undefined (histogram has no normalization)"
        )))?);
    }
    if lag.is_empty() {
        return Err(data_err("correlation CSV has no data rows"));
    }
    let width = bin_width(&t, &lag)?;
    check_grid(&lag, lag[0], width)?;
    let norm = match (
        meta_f64(&t, "rate_a")?,
        meta_f64(&t, "rate_b")?,
        meta_f64(&t, "acquisition_time_s")?,
    ) {
        (Some(a), Some(b), Some(time)) => a * b * time * width * 1e-12,
        _ => {
            let c: f64 = counts.iter().sum();
            let g: f64 = values.iter().sum();
            c / g
        }
    };
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(data_err("cannot establish the g2 normalization"));
    }
    Ok(G2Series {
        lower_ns: lag.iter().map(|l| l * 1e-3).collect(),
        width_ns: width * 1e-3,
        values,
        sigma: counts.iter().map(|c| c.max(1.0).sqrt() / norm).collect(),
    })
}

pub fn parse_lifetime(text: &str) -> Result<LifetimeHistogram> {
    let t = parse_table(text, &["delay_ps", "counts"], &[])?;
    let mut delay = Vec::new();
    let mut counts = Vec::new();
    for (i, r) in t.rows.iter().enumerate() {
        delay.push(required(r[0], "delay_ps", i)?);
        let c = required(r[1], "counts", i)?;
        if !(c >= 0.0 && c.fract() == 0.0) {
            return Err(data_err(format!(
                "data row {i}: counts {c} is not a non-negative integer"
            )));
        }
        counts.push(c as u64);
    }
    if delay.is_empty() {
        return Err(data_err("lifetime CSV has no data rows"));
    }
    let width = bin_width(&t, &delay)?;
    check_grid(&delay, 0.0, width)?;
    if width.fract() != 0.0 {
        return Err(data_err("bin width must be a whole number of picoseconds"));
    }
    Ok(LifetimeHistogram {
        bin_width_ps: width as u64,
        counts,
    })
}

pub fn parse_saturation(text: &str) -> Result<Vec<SaturationPoint>> {
    let t = parse_table(text, &["power_mw", "rate", "sigma"], &[])?;
    t.rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(SaturationPoint {
                power_mw: required(r[0], "power_mw", i)?,
                rate: required(r[1], "rate", i)?,
                sigma: required(r[2], "sigma", i)?,
            })
        })
        .collect()
}

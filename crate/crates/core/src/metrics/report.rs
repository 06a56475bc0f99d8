use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variant label of the noisy input scored without enhancement.
pub const UNPROCESSED: &str = "unprocessed";

/// Scores of one evaluated item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub variant: String,
    pub snr_db: f64,
    pub noise: String,
    pub stoi: f64,
    pub si_sdr_db: f64,
    pub lsd_db: f64,
}

/// Mean scores of one (variant, SNR, noise) condition and their change
/// relative to the unprocessed input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub variant: String,
    pub snr_db: f64,
    pub noise: String,
    pub stoi: f64,
    pub si_sdr_db: f64,
    pub lsd_db: f64,
    pub delta_stoi: f64,
    pub delta_si_sdr_db: f64,
    pub delta_lsd_db: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn distinct<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for it in items {
        if !out.contains(&it) {
            out.push(it);
        }
    }
    out
}

/// Averages item scores per condition. Every condition must be covered by
/// every variant, including the unprocessed baseline.
pub fn build_report(items: &[ItemScore]) -> Result<EvalReport> {
    let mut variants = distinct(items.iter().map(|i| i.variant.clone()));
    let Some(pos) = variants.iter().position(|v| v == UNPROCESSED) else {
        return Err(Error::Format("no unprocessed scores to compare against".into()));
    };
    let base = variants.remove(pos);
    variants.insert(0, base);
    let mut snrs = distinct(items.iter().map(|i| i.snr_db));
    snrs.sort_by(f64::total_cmp);
    let mut noises = distinct(items.iter().map(|i| i.noise.clone()));
    noises.sort();

    let mut rows = Vec::with_capacity(variants.len() * snrs.len() * noises.len());
    for &snr in &snrs {
        for noise in &noises {
            let mut baseline: Option<(f64, f64, f64)> = None;
            for variant in &variants {
                let group: Vec<&ItemScore> = items
                    .iter()
                    .filter(|i| &i.variant == variant && i.snr_db == snr && &i.noise == noise)
                    .collect();
                if group.is_empty() {
                    return Err(Error::Format(format!("{variant} has no scores at {snr} dB {noise}")));
                }
                let n = group.len() as f64;
                let mean = |f: fn(&ItemScore) -> f64| group.iter().map(|i| f(i)).sum::<f64>() / n;
                let (s, q, l) = (mean(|i| i.stoi), mean(|i| i.si_sdr_db), mean(|i| i.lsd_db));
                let (bs, bq, bl) = *baseline.get_or_insert((s, q, l));
                rows.push(EvalRow {
                    variant: variant.clone(),
                    snr_db: snr,
                    noise: noise.clone(),
                    stoi: s,
                    si_sdr_db: q,
                    lsd_db: l,
                    delta_stoi: s - bs,
                    delta_si_sdr_db: q - bq,
                    delta_lsd_db: l - bl,
                });
            }
        }
    }
    Ok(EvalReport { rows })
}

impl EvalReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let rows = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<EvalRow>, _>>()
            .map_err(csv_err)?;
        Ok(EvalReport { rows })
    }

    /// Aligned text table; STOI is shown in percent.
    pub fn to_table(&self) -> String {
        let header = [
            "variant",
            "snr_db",
            "noise",
            "stoi_%",
            "d_stoi",
            "si_sdr_db",
            "d_si_sdr",
            "lsd_db",
            "d_lsd",
        ];
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.variant.clone(),
                    format!("{:.0}", r.snr_db),
                    r.noise.clone(),
                    format!("{:.2}", 100.0 * r.stoi),
                    format!("{:+.2}", 100.0 * r.delta_stoi),
                    format!("{:.2}", r.si_sdr_db),
                    format!("{:+.2}", r.delta_si_sdr_db),
                    format!("{:.2}", r.lsd_db),
                    format!("{:+.2}", r.delta_lsd_db),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|c| {
                cells
                    .iter()
                    .map(|r| r[c].len())
                    .chain([header[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let line = |out: &mut String, row: &[&str]| {
            let parts: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (v, w))| if c < 3 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &header);
        for r in &cells {
            line(&mut out, &r.iter().map(String::as_str).collect::<Vec<_>>());
        }
        out
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("report csv: {e}"))
}

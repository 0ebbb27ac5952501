//! SVG curves of a results table: one file per (metric, channel), one line
//! per scheme, values averaged over seeds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::config::OutputDir;
use crate::error::{Error, Result};
use crate::eval::{read_records, ExperimentRecord};

pub const METRICS: [&str; 2] = ["avg_bleu", "similarity"];

#[derive(Clone, Debug, Default)]
pub struct PlotReport {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn metric(r: &ExperimentRecord, name: &str) -> f64 {
    match name {
        "avg_bleu" => r.avg_bleu,
        "similarity" => r.similarity,
        _ => f64::NAN,
    }
}

/// Mean over seeds at each SNR, sorted by SNR. Non-finite values are dropped.
pub fn series(records: &[ExperimentRecord], scheme: &str, channel: &str, name: &str) -> Vec<(f64, f64)> {
    let mut acc: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.scheme == scheme && r.channel == channel) {
        let v = metric(r, name);
        if v.is_finite() && r.snr_db.is_finite() {
            // Order-preserving key for finite f64.
            let bits = r.snr_db.to_bits();
            let key = if r.snr_db < 0.0 { !bits } else { bits | (1 << 63) };
            let e = acc.entry(key).or_insert((r.snr_db, 0.0, 0));
            e.1 += v;
            e.2 += 1;
        }
    }
    acc.into_values().map(|(x, s, n)| (x, s / n as f64)).collect()
}

const COLORS: [RGBColor; 4] = [RGBColor(31, 119, 180), RGBColor(214, 39, 40), RGBColor(44, 160, 44), RGBColor(148, 103, 189)];

pub fn plot_results(results: &Path, out: &OutputDir) -> Result<PlotReport> {
    let records = read_records(results)?;
    if records.is_empty() {
        return Err(Error::Data(format!("{} has no rows", results.display())));
    }
    let mut schemes: Vec<&str> = records.iter().map(|r| r.scheme.as_str()).collect();
    schemes.sort_unstable();
    schemes.dedup();
    let mut channels: Vec<&str> = records.iter().map(|r| r.channel.as_str()).collect();
    channels.sort_unstable();
    channels.dedup();

    let mut report = PlotReport::default();
    for name in METRICS {
        for &channel in &channels {
            let mut lines = Vec::new();
            for &scheme in &schemes {
                let s = series(&records, scheme, channel, name);
                if s.is_empty() {
                    report.warnings.push(format!("{name}/{channel}: no data for {scheme}, series omitted"));
                } else {
                    lines.push((scheme, s));
                }
            }
            if lines.is_empty() {
                continue;
            }
            let path = out.file(&format!("plots/{name}_{channel}.svg"))?;
            draw(&path, &format!("{name} ({channel})"), name, &lines)?;
            report.files.push(path);
        }
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(report)
}

fn draw(path: &Path, title: &str, y_label: &str, lines: &[(&str, Vec<(f64, f64)>)]) -> Result<()> {
    let err = |e: String| Error::Data(format!("{}: {e}", path.display()));
    let xs = lines.iter().flat_map(|(_, s)| s.iter().map(|p| p.0));
    let (mut lo, mut hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if lo == hi {
        lo -= 1.0;
        hi += 1.0;
    }
    let root = SVGBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(lo..hi, 0.0..1.0)
        .map_err(|e| err(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc("SNR (dB)")
        .y_desc(y_label)
        .draw()
        .map_err(|e| err(e.to_string()))?;
    for (i, (scheme, pts)) in lines.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(|e| err(e.to_string()))?
            .label(*scheme)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(e.to_string()))?;
    root.present().map_err(|e| err(e.to_string()))
}

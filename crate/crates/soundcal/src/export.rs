//! CSV exports of a session report's plottable series. Each plot
//! family gathers all of its data before creating any file, so a
//! report missing the needed section writes nothing at all.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mls::ImpulseResponse;
use crate::profiles::ProfileResponse;
use crate::session::SessionReport;

pub const PLOT_NAMES: [&str; 5] = ["gain_thd", "ir", "schroeder", "correction", "profiles"];

/// Write the CSV files for one plot family into `out_dir` (created if
/// missing); returns the paths written.
pub fn export_plot(report: &SessionReport, which: &str, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let files = match which {
        "gain_thd" => gain_thd_files(report)?,
        "ir" => ir_files(report)?,
        "schroeder" => schroeder_files(report)?,
        "correction" => correction_files(report)?,
        "profiles" => profiles_files(report)?,
        other => {
            return Err(Error::Config(format!(
                "unknown plot name '{other}'; valid names: {}",
                PLOT_NAMES.join(", ")
            )))
        }
    };
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(files.len());
    for (name, content) in files {
        let path = out_dir.join(name);
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
        w.write_all(content.as_bytes())?;
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

type CsvFile = (&'static str, String);

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "NaN".to_string(),
    }
}

fn gain_thd_files(report: &SessionReport) -> Result<Vec<CsvFile>> {
    if report.gain_points.is_empty() {
        return Err(Error::MissingReportSection("gain_points"));
    }
    let mut csv = String::from("in_db,out_db,thd\n");
    for p in &report.gain_points {
        csv.push_str(&format!("{},{},{}\n", p.in_db, p.out_db, p.thd));
    }
    Ok(vec![("gain_thd.csv", csv)])
}

/// A view of the impulse response around its peak: 1 ms of pre-roll,
/// then out to `span_sec`. Time zero is the peak itself.
fn ir_view_csv(ir: &ImpulseResponse, span_sec: f64) -> String {
    let fs = ir.sample_rate_hz;
    let pre = (0.001 * fs).round() as usize;
    let len = (span_sec * fs).round() as usize;
    let start = ir.peak_index.saturating_sub(pre);
    let end = (start + len).min(ir.len());
    let mut csv = String::from("time_sec,amplitude\n");
    for i in start..end {
        let t = (i as f64 - ir.peak_index as f64) / fs;
        csv.push_str(&format!("{t},{}\n", ir.taps[i]));
    }
    csv
}

fn ir_files(report: &SessionReport) -> Result<Vec<CsvFile>> {
    let mls = report.mls.as_ref().ok_or(Error::MissingReportSection("mls"))?;
    Ok(vec![
        ("ir_6ms.csv", ir_view_csv(&mls.raw_ir, 0.006)),
        ("ir_50ms.csv", ir_view_csv(&mls.raw_ir, 0.050)),
    ])
}

fn schroeder_files(report: &SessionReport) -> Result<Vec<CsvFile>> {
    let mls = report.mls.as_ref().ok_or(Error::MissingReportSection("mls"))?;
    let mut csv = String::from("time_sec,level_db\n");
    for (t, v) in mls.schroeder.times_sec.iter().zip(&mls.schroeder.level_db) {
        csv.push_str(&format!("{t},{}\n", cell(*v)));
    }
    Ok(vec![("schroeder.csv", csv)])
}

fn correction_files(report: &SessionReport) -> Result<Vec<CsvFile>> {
    let c = report.correction.as_ref().ok_or(Error::MissingReportSection("correction"))?;
    let s = &c.spectra;
    let mut csv = String::from(
        "freq_hz,mls_sound_db,filtered_mls_sound_db,background_db,filtered_digital_db,predicted_sum_db\n",
    );
    for k in 0..s.freq_hz.len() {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.freq_hz[k],
            cell(s.mls_sound_db[k]),
            cell(s.filtered_mls_sound_db[k]),
            cell(s.background_db[k]),
            cell(s.filtered_digital_db[k]),
            cell(s.predicted_sum_db[k]),
        ));
    }
    let mut flat = String::from("freq_hz,level_db\n");
    for (f, v) in c.flatness.freq_hz.iter().zip(&c.flatness.per_bin_spectrum_db) {
        flat.push_str(&format!("{f},{}\n", cell(*v)));
    }
    Ok(vec![("correction.csv", csv), ("flatness.csv", flat)])
}

/// The response the session measured, in profile form (the same
/// freq/gain/phase triplet a stored profile carries).
fn profiles_files(report: &SessionReport) -> Result<Vec<CsvFile>> {
    let mls = report.mls.as_ref().ok_or(Error::MissingReportSection("mls"))?;
    let resp =
        ProfileResponse::from_grid(&mls.truncated_ir.response(), report.config.max_hz);
    let mut csv = String::from("freq_hz,gain_db,phase_rad\n");
    for i in 0..resp.freq_hz.len() {
        csv.push_str(&format!(
            "{},{},{}\n",
            resp.freq_hz[i], resp.gain_db[i], resp.phase_rad[i]
        ));
    }
    Ok(vec![("profiles.csv", csv)])
}

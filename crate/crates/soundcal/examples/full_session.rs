//! A complete calibration session against the bundled clean chain,
//! followed by CSV export of every plot family the report carries.

use std::path::Path;

use soundcal::export::{export_plot, PLOT_NAMES};
use soundcal::session::{run_calibration_session, SessionConfig};
use soundcal::sim::load_chain;

fn main() -> soundcal::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let chain = load_chain(&fixtures.join("chain_clean.json"))?;
    let config = SessionConfig::load(&fixtures.join("config_default.txt"))?;

    let report = run_calibration_session(&chain, &config)?;
    println!("accepted:        {}", report.accepted);
    println!("started:         {}", report.started_at_iso8601);
    println!("finished:        {}", report.finished_at_iso8601);
    if let Some(gate) = &report.gates.drc_fit {
        println!("drc gate:        rms {:.3} dB (limit {})", gate.measured_db, gate.limit_db);
    }
    if let Some(gate) = &report.gates.flatness {
        println!("flatness gate:   sd {:.3} dB (limit {})", gate.measured_db, gate.limit_db);
    }
    for rec in &report.recording_power {
        if rec.flagged_wild {
            println!("wild power swings in the {} recording", rec.label);
        }
    }

    let out = std::env::temp_dir().join("soundcal_full_session_example");
    let _ = std::fs::remove_dir_all(&out);
    let report_path = out.join("report.json");
    std::fs::create_dir_all(&out)?;
    report.write_json(&report_path)?;
    println!("\nreport: {}", report_path.display());

    for which in PLOT_NAMES {
        for path in export_plot(&report, which, &out.join(which))? {
            println!("  {}", path.display());
        }
    }
    Ok(())
}

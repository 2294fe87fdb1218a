//! Command-line front end: run simulated calibration sessions, manage
//! the profile store, and export plot data from session reports.
//!
//! Exit codes are a stable contract: 0 for an accepted session or
//! successful command, 2 for a session rejected by a quality gate,
//! 3 for a phone lookup with no full match, 1 for any error.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::Result;
use crate::export::export_plot;
use crate::profiles::{DeviceIdentity, MatchResult, Profile, ProfileStore};
use crate::session::{run_calibration_session, SessionConfig, SessionReport};
use crate::sim::load_chain;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_REJECTED: i32 = 2;
pub const EXIT_NO_MATCH: i32 = 3;

#[derive(Parser)]
#[command(
    name = "soundcal",
    version,
    about = "Loudspeaker calibration against a simulated playback chain"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full calibration session against a chain fixture and
    /// write the session report as JSON
    Simulate {
        /// Session config file (flat key = value); defaults apply if
        /// omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Chain fixture JSON describing speaker, microphone, and
        /// environment
        #[arg(long)]
        chain: PathBuf,
        /// Report output path
        #[arg(long)]
        out: PathBuf,
        /// Override the chain fixture's noise seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Operations on the transducer profile store
    Profile {
        /// Store directory; defaults to $SOUNDCAL_STORE
        #[arg(long)]
        store: Option<PathBuf>,
        #[command(subcommand)]
        action: ProfileAction,
    },
    /// Export plottable CSV series from a session report
    ExportPlots {
        /// Session report JSON
        report: PathBuf,
        /// One of: gain_thd, ir, schroeder, correction, profiles
        #[arg(long)]
        which: String,
        /// Output directory for the CSV files
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ProfileAction {
    /// Add a profile JSON file to the store
    Add { file: PathBuf },
    /// Look up the profile for a phone described by an identity JSON
    /// (model name, model number, screen pixels)
    Match { file: PathBuf },
    /// Print a profile's chain back to its manufacturer-calibrated
    /// root
    Trace { id: String },
    /// List every stored profile
    List,
    /// Count distinct models per brand
    Coverage,
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_ERROR,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate { config, chain, out, seed } => cmd_simulate(config, &chain, &out, seed),
        Command::Profile { store, action } => cmd_profile(store, action),
        Command::ExportPlots { report, which, out } => cmd_export_plots(&report, &which, &out),
    }
}

fn cmd_simulate(
    config_path: Option<PathBuf>,
    chain_path: &Path,
    out_path: &Path,
    seed: Option<u64>,
) -> Result<i32> {
    let config = match config_path {
        Some(p) => SessionConfig::load(&p)?,
        None => SessionConfig::default(),
    };
    let mut chain = load_chain(chain_path)?;
    if let Some(seed) = seed {
        chain.env.seed = seed;
    }
    let report = run_calibration_session(&chain, &config)?;
    report.write_json(out_path)?;
    match &report.rejected_stage {
        None => {
            let sd = report.correction.as_ref().map(|c| c.flatness.sd_db);
            println!(
                "accepted: flatness sd {} dB, report written to {}",
                sd.map_or("?".to_string(), |v| format!("{v:.2}")),
                out_path.display()
            );
            Ok(EXIT_OK)
        }
        Some(stage) => {
            println!("rejected at {stage} gate, report written to {}", out_path.display());
            Ok(EXIT_REJECTED)
        }
    }
}

fn store_dir(flag: Option<PathBuf>) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p);
    }
    if let Some(p) = std::env::var_os("SOUNDCAL_STORE") {
        return Ok(PathBuf::from(p));
    }
    Err(crate::error::Error::Store(
        "no store path: pass --store or set SOUNDCAL_STORE".into(),
    ))
}

fn cmd_profile(store_flag: Option<PathBuf>, action: ProfileAction) -> Result<i32> {
    let dir = store_dir(store_flag)?;
    let mut store = ProfileStore::open(&dir)?;
    match action {
        ProfileAction::Add { file } => {
            let text = std::fs::read_to_string(&file)?;
            let profile: Profile = serde_json::from_str(&text)?;
            let id = store.add_profile(profile)?;
            println!("{id}");
            Ok(EXIT_OK)
        }
        ProfileAction::Match { file } => {
            let text = std::fs::read_to_string(&file)?;
            let identity: DeviceIdentity = serde_json::from_str(&text)?;
            let Some(screen) = identity.screen_px else {
                return Err(crate::error::Error::Store(
                    "phone identity needs screen_px for matching".into(),
                ));
            };
            match store.match_phone(&identity.model_name, &identity.model_number, screen) {
                MatchResult::Match(profile) => {
                    println!("{}", profile.id);
                    Ok(EXIT_OK)
                }
                MatchResult::NoMatch { name_matched, number_matched, screen_matched } => {
                    println!("NO MATCH");
                    println!("  model name matched:   {name_matched}");
                    println!("  model number matched: {number_matched}");
                    println!("  screen px matched:    {screen_matched}");
                    Ok(EXIT_NO_MATCH)
                }
            }
        }
        ProfileAction::Trace { id } => {
            let chain = store.trace_chain(&id)?;
            for p in &chain.profiles {
                println!(
                    "{} {:?} {} {} (signed {})",
                    p.id, p.kind, p.identity.brand, p.identity.model_name, p.signer_email
                );
            }
            Ok(EXIT_OK)
        }
        ProfileAction::List => {
            for p in store.all_profiles()? {
                println!(
                    "{} {} {:?} {} {}",
                    p.id,
                    p.timestamp.to_rfc3339(),
                    p.kind,
                    p.identity.brand,
                    p.identity.model_name
                );
            }
            Ok(EXIT_OK)
        }
        ProfileAction::Coverage => {
            for (brand, count) in store.brand_coverage() {
                println!("{brand},{count}");
            }
            Ok(EXIT_OK)
        }
    }
}

fn cmd_export_plots(report_path: &Path, which: &str, out_dir: &Path) -> Result<i32> {
    let report = SessionReport::read_json(report_path)?;
    for path in export_plot(&report, which, out_dir)? {
        println!("{}", path.display());
    }
    Ok(EXIT_OK)
}

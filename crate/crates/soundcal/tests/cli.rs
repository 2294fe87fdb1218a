//! Drives the installed binary end to end: exit codes, stdout
//! formats, report files, profile-store round trips, and CSV export.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{TimeZone, Utc};
use soundcal::drc::DrcParams;
use soundcal::profiles::{
    DeviceIdentity, Profile, ProfileKind, ProfileQuality, ProfileResponse,
};
use soundcal::session::{run_calibration_session, SessionConfig, SessionReport};
use soundcal::signals::population_sd;
use soundcal::sim::{test_fir, PlaybackChain, SimEnvironment, SimTransducer};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_soundcal"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Session config that keeps in-test sessions down to a few
/// milliseconds of simulated audio.
fn fast_config() -> SessionConfig {
    SessionConfig {
        burst_sec: 0.05,
        burst_repeats: 2,
        ir_sec: 0.04,
        iir_sec: 0.04,
        ..SessionConfig::default()
    }
}

fn fast_report() -> SessionReport {
    let chain = PlaybackChain {
        speaker: SimTransducer::with_ir(test_fir(64, 21)),
        microphone: SimTransducer::delta(),
        env: SimEnvironment::quiet(),
    };
    run_calibration_session(&chain, &fast_config()).unwrap()
}

#[test]
fn simulate_accepts_the_clean_chain() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("report.json");
    let out = bin()
        .args(["simulate", "--config"])
        .arg(fixture("config_default.txt"))
        .arg("--chain")
        .arg(fixture("chain_clean.json"))
        .arg("--out")
        .arg(&report_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).starts_with("accepted"), "stdout: {}", stdout(&out));
    let report = SessionReport::read_json(&report_path).unwrap();
    assert!(report.accepted);
    assert_eq!(report.rejected_stage, None);
}

#[test]
fn simulate_rejects_the_echoing_chain_at_the_flatness_gate() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("report.json");
    let out = bin()
        .args(["simulate", "--chain"])
        .arg(fixture("chain_reject.json"))
        .arg("--out")
        .arg(&report_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("rejected at flatness gate"));
    let report = SessionReport::read_json(&report_path).unwrap();
    assert!(!report.accepted);
    assert_eq!(report.rejected_stage.as_deref(), Some("flatness"));
    let gate = report.gates.flatness.unwrap();
    assert!(!gate.passed);
    assert!(gate.measured_db > gate.limit_db);
}

/// A speaker compressor followed by a microphone expander produces a
/// gain curve whose slope dips and then returns to one; the single-knee
/// model cannot follow it, so the fit gate rejects the session before
/// any MLS is played.
#[test]
fn drc_gated_chain_exits_2_and_its_report_has_no_ir_to_export() {
    let dir = tempfile::tempdir().unwrap();
    let chain_path = dir.path().join("chain.json");
    std::fs::write(
        &chain_path,
        r#"{
          "speaker": {
            "ir": {"recipe": "delta", "len": 1},
            "drc": {"gain_db": 0.0, "T": -32.0, "W": 2.0, "Q": 0.3, "background_db": null}
          },
          "microphone": {
            "ir": {"recipe": "delta", "len": 1},
            "drc": {"gain_db": 0.0, "T": -28.7, "W": 2.0, "Q": 3.3333, "background_db": null}
          },
          "env": {"seed": 1}
        }"#,
    )
    .unwrap();
    let report_path = dir.path().join("report.json");
    let out = bin()
        .args(["simulate", "--chain"])
        .arg(&chain_path)
        .arg("--out")
        .arg(&report_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("rejected at drc gate"));
    let report = SessionReport::read_json(&report_path).unwrap();
    assert_eq!(report.rejected_stage.as_deref(), Some("drc"));
    assert!(report.mls.is_none());

    // The rejected report has no impulse response, so the ir export
    // must fail without leaving partial files behind.
    let plots = dir.path().join("plots");
    let out = bin()
        .arg("export-plots")
        .arg(&report_path)
        .args(["--which", "ir", "--out"])
        .arg(&plots)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("mls"));
    let written = plots.exists() && std::fs::read_dir(&plots).unwrap().next().is_some();
    assert!(!written, "partial files were written");
}

#[test]
fn unknown_config_key_exits_1_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("bad.txt");
    std::fs::write(&config_path, "calibrateSoundBananas = 7\n").unwrap();
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&config_path)
        .arg("--chain")
        .arg(fixture("chain_clean.json"))
        .arg("--out")
        .arg(dir.path().join("report.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("calibrateSoundBananas"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn seed_flag_changes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let chain_path = dir.path().join("chain.json");
    std::fs::write(
        &chain_path,
        r#"{
          "speaker": {"ir": {"recipe": "delta", "len": 1}},
          "microphone": {"ir": {"recipe": "delta", "len": 1}},
          "env": {"noise_level_db": -50.0, "seed": 1}
        }"#,
    )
    .unwrap();
    let config_path = dir.path().join("config.txt");
    std::fs::write(
        &config_path,
        "_calibrateSoundBurstSec = 0.05\n_calibrateSoundBurstRepeats = 2\n\
         _calibrateSoundIRSec = 0.04\n_calibrateSoundIIRSec = 0.04\n",
    )
    .unwrap();
    let mut sds = Vec::new();
    for seed in ["4", "5"] {
        let report_path = dir.path().join(format!("report_{seed}.json"));
        let out = bin()
            .args(["simulate", "--config"])
            .arg(&config_path)
            .arg("--chain")
            .arg(&chain_path)
            .arg("--out")
            .arg(&report_path)
            .args(["--seed", seed])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
        let report = SessionReport::read_json(&report_path).unwrap();
        sds.push(report.correction.unwrap().flatness.sd_db);
    }
    assert_ne!(sds[0], sds[1], "different seeds measured identical noise");
}

fn flat_profile(
    hour: u32,
    kind: ProfileKind,
    brand: &str,
    name: &str,
    number: &str,
    screen: Option<(u32, u32)>,
    parent: Option<String>,
    signer: &str,
) -> Profile {
    Profile::new(
        Utc.with_ymd_and_hms(2024, 3, 1, hour, 0, 0).unwrap(),
        kind,
        DeviceIdentity {
            brand: brand.into(),
            model_name: name.into(),
            model_number: number.into(),
            screen_px: screen,
            os: None,
        },
        parent,
        signer,
        ProfileResponse::flat(20000.0, 32),
        ProfileQuality {
            flatness_sd_db: 1.0,
            drc: DrcParams::new(0.0, -20.0, 10.0, 0.5),
            sampling_rate_hz: 48000.0,
        },
    )
}

/// Writes a three-profile calibration chain (manufacturer microphone,
/// loudspeaker, phone microphone) into `dir` as JSON files and returns
/// the profiles.
fn chain_files(dir: &Path) -> Vec<Profile> {
    let root = flat_profile(
        1,
        ProfileKind::ManufacturerMicrophone,
        "MicCo",
        "RefMic",
        "RM-1",
        None,
        None,
        "factory@micco.example",
    );
    let speaker = flat_profile(
        2,
        ProfileKind::Loudspeaker,
        "BoxCo",
        "Monitor",
        "BX-7",
        None,
        Some(root.id.clone()),
        "lab@example.org",
    );
    let phone = flat_profile(
        3,
        ProfileKind::Microphone,
        "PhoneCo",
        "Slab 12",
        "P-12",
        Some((1170, 2532)),
        Some(speaker.id.clone()),
        "lab@example.org",
    );
    let profiles = vec![root, speaker, phone];
    for (i, p) in profiles.iter().enumerate() {
        let text = serde_json::to_string_pretty(p).unwrap();
        std::fs::write(dir.join(format!("profile_{i}.json")), text).unwrap();
    }
    profiles
}

#[test]
fn profile_add_trace_list_and_coverage_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let profiles = chain_files(dir.path());

    for (i, p) in profiles.iter().enumerate() {
        let out = bin()
            .args(["profile", "--store"])
            .arg(&store)
            .arg("add")
            .arg(dir.path().join(format!("profile_{i}.json")))
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
        assert_eq!(stdout(&out).trim(), p.id);
    }

    let out = bin()
        .args(["profile", "--store"])
        .arg(&store)
        .args(["trace", &profiles[2].id])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let trace = stdout(&out);
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with(&profiles[2].id));
    assert!(lines[2].starts_with(&profiles[0].id));
    assert!(lines[2].contains("ManufacturerMicrophone"));

    let out = bin()
        .args(["profile", "--store"])
        .arg(&store)
        .arg("list")
        .output()
        .unwrap();
    assert_eq!(stdout(&out).lines().count(), 3);

    let out = bin()
        .args(["profile", "--store"])
        .arg(&store)
        .arg("coverage")
        .output()
        .unwrap();
    let coverage = stdout(&out);
    for line in ["BoxCo,1", "MicCo,1", "PhoneCo,1"] {
        assert!(coverage.contains(line), "coverage output: {coverage}");
    }
}

#[test]
fn profile_match_requires_all_three_keys() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let profiles = chain_files(dir.path());
    for i in 0..3 {
        let out = bin()
            .args(["profile", "--store"])
            .arg(&store)
            .arg("add")
            .arg(dir.path().join(format!("profile_{i}.json")))
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    }

    let exact = dir.path().join("exact.json");
    std::fs::write(
        &exact,
        serde_json::to_string(&profiles[2].identity).unwrap(),
    )
    .unwrap();
    let out = bin()
        .args(["profile", "--store"])
        .arg(&store)
        .arg("match")
        .arg(&exact)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert_eq!(stdout(&out).trim(), profiles[2].id);

    // Same phone with a different screen: two of three keys hit, and
    // the lookup must refuse rather than guess.
    let mut partial_identity = profiles[2].identity.clone();
    partial_identity.screen_px = Some((1080, 1920));
    let partial = dir.path().join("partial.json");
    std::fs::write(&partial, serde_json::to_string(&partial_identity).unwrap()).unwrap();
    let out = bin()
        .args(["profile", "--store"])
        .arg(&store)
        .arg("match")
        .arg(&partial)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("NO MATCH"));
    assert!(text.contains("model name matched:   true"));
    assert!(text.contains("model number matched: true"));
    assert!(text.contains("screen px matched:    false"));
}

#[test]
fn store_path_falls_back_to_the_environment_variable() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    chain_files(dir.path());
    let out = bin()
        .env("SOUNDCAL_STORE", &store)
        .args(["profile", "add"])
        .arg(dir.path().join("profile_0.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let out = bin()
        .env("SOUNDCAL_STORE", &store)
        .args(["profile", "list"])
        .output()
        .unwrap();
    assert_eq!(stdout(&out).lines().count(), 1);

    let out = bin()
        .env_remove("SOUNDCAL_STORE")
        .args(["profile", "list"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("SOUNDCAL_STORE"));
}

#[test]
fn export_ir_writes_exactly_the_two_views() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("report.json");
    fast_report().write_json(&report_path).unwrap();
    let plots = dir.path().join("plots");
    let out = bin()
        .arg("export-plots")
        .arg(&report_path)
        .args(["--which", "ir", "--out"])
        .arg(&plots)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let mut names: Vec<String> = std::fs::read_dir(&plots)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["ir_50ms.csv", "ir_6ms.csv"]);
    for line in stdout(&out).lines() {
        assert!(Path::new(line).is_file(), "printed path missing: {line}");
    }
}

#[test]
fn unknown_plot_name_exits_1_listing_the_valid_names() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("report.json");
    fast_report().write_json(&report_path).unwrap();
    let out = bin()
        .arg("export-plots")
        .arg(&report_path)
        .args(["--which", "waterfall", "--out"])
        .arg(dir.path().join("plots"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    for name in ["gain_thd", "ir", "schroeder", "correction", "profiles"] {
        assert!(err.contains(name), "stderr misses {name}: {err}");
    }
}

#[test]
fn flatness_csv_reproduces_the_reported_sd() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("report.json");
    let report = fast_report();
    let expected = report.correction.as_ref().unwrap().flatness.sd_db;
    report.write_json(&report_path).unwrap();

    let plots = dir.path().join("plots");
    let out = bin()
        .arg("export-plots")
        .arg(&report_path)
        .args(["--which", "correction", "--out"])
        .arg(&plots)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let text = std::fs::read_to_string(plots.join("flatness.csv")).unwrap();
    let levels: Vec<f64> = text
        .lines()
        .skip(1)
        .filter_map(|line| {
            let cell = line.split(',').nth(1).unwrap();
            (cell != "NaN").then(|| cell.parse().unwrap())
        })
        .collect();
    let sd = population_sd(&levels);
    assert!(
        (sd - expected).abs() < 1e-6,
        "csv sd {sd} vs reported {expected}"
    );
}

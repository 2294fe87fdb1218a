//! A calibration chain in the profile store: a manufacturer-calibrated
//! microphone calibrates a loudspeaker, which calibrates a phone's
//! microphone. Lookup then works from the phone's own identity, and
//! every profile traces back to the factory measurement.

use chrono::{TimeZone, Utc};
use soundcal::drc::DrcParams;
use soundcal::profiles::{
    DeviceIdentity, MatchResult, Profile, ProfileKind, ProfileQuality, ProfileResponse,
    ProfileStore,
};

fn quality() -> ProfileQuality {
    ProfileQuality {
        flatness_sd_db: 1.1,
        drc: DrcParams::new(0.0, -20.0, 10.0, 0.5),
        sampling_rate_hz: 48000.0,
    }
}

fn main() -> soundcal::Result<()> {
    let dir = std::env::temp_dir().join("soundcal_profile_library_example");
    let _ = std::fs::remove_dir_all(&dir);
    let mut store = ProfileStore::open(&dir)?;

    let at = |h| Utc.with_ymd_and_hms(2024, 2, 1, h, 0, 0).unwrap();
    let root = Profile::new(
        at(9),
        ProfileKind::ManufacturerMicrophone,
        DeviceIdentity {
            brand: "MicCo".into(),
            model_name: "RefMic".into(),
            model_number: "RM-1".into(),
            screen_px: None,
            os: None,
        },
        None,
        "factory@micco.example",
        ProfileResponse::flat(20000.0, 64),
        quality(),
    );
    let speaker = Profile::new(
        at(10),
        ProfileKind::Loudspeaker,
        DeviceIdentity {
            brand: "BoxCo".into(),
            model_name: "Monitor 5".into(),
            model_number: "BX-5".into(),
            screen_px: None,
            os: None,
        },
        Some(root.id.clone()),
        "lab@example.org",
        ProfileResponse::flat(20000.0, 64),
        quality(),
    );
    let phone = Profile::new(
        at(11),
        ProfileKind::Microphone,
        DeviceIdentity {
            brand: "PhoneCo".into(),
            model_name: "Slab 12".into(),
            model_number: "P-12".into(),
            screen_px: Some((1170, 2532)),
            os: Some("PhoneOS 17".into()),
        },
        Some(speaker.id.clone()),
        "lab@example.org",
        ProfileResponse::flat(20000.0, 64),
        quality(),
    );

    for p in [&root, &speaker, &phone] {
        let id = store.add_profile(p.clone())?;
        println!("stored {:?} {} as {}", p.kind, p.identity.model_name, &id[..12]);
    }

    println!("\ncalibration chain of the phone microphone (leaf to root):");
    for p in &store.trace_chain(&phone.id)?.profiles {
        println!("  {:?} {} / {}", p.kind, p.identity.brand, p.identity.model_name);
    }

    // A phone identifies itself by model name, model number, and
    // screen size; the screen may come in either orientation.
    println!("\nlookup by identity (rotated screen):");
    match store.match_phone("Slab 12", "P-12", (2532, 1170)) {
        MatchResult::Match(p) => println!("  matched {}", &p.id[..12]),
        MatchResult::NoMatch { .. } => println!("  no match"),
    }

    println!("\nlookup with the wrong model number fails on partial keys:");
    match store.match_phone("Slab 12", "P-13", (1170, 2532)) {
        MatchResult::Match(p) => println!("  matched {}", &p.id[..12]),
        MatchResult::NoMatch { name_matched, number_matched, screen_matched } => println!(
            "  no match (name {name_matched}, number {number_matched}, screen {screen_matched})"
        ),
    }

    println!("\nmodels per brand:");
    for (brand, count) in store.brand_coverage() {
        println!("  {brand}: {count}");
    }
    Ok(())
}

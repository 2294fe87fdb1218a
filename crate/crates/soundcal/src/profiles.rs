//! Traceable profile library: every calibration profile links to the
//! profile of the device that measured it, ending at a
//! manufacturer-calibrated measurement microphone. Stored as one JSON
//! document per profile in a content-addressed directory, plus an
//! index file for queries.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::drc::DrcParams;
use crate::error::{Error, Result};
use crate::spectrum::FrequencyResponse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Microphone,
    Loudspeaker,
    ManufacturerMicrophone,
}

/// What the profile was measured on. Phones carry their screen size
/// in pixels; it is one of the three keys used to recognize a phone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceIdentity {
    pub brand: String,
    pub model_name: String,
    pub model_number: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen_px: Option<(u32, u32)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub os: Option<String>,
}

/// Gain and phase sampled at ascending frequencies from 0 Hz up to
/// the profile's top frequency. Phase rides along for completeness;
/// the correction pipeline itself only consumes gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileResponse {
    pub freq_hz: Vec<f64>,
    pub gain_db: Vec<f64>,
    pub phase_rad: Vec<f64>,
}

impl ProfileResponse {
    pub fn validate(&self) -> Result<()> {
        let n = self.freq_hz.len();
        if n == 0 {
            return Err(Error::BadSignal("profile response is empty".into()));
        }
        if self.gain_db.len() != n || self.phase_rad.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: self.gain_db.len().max(self.phase_rad.len()) });
        }
        if self.freq_hz[0] != 0.0 {
            return Err(Error::BadSignal("profile response must start at 0 Hz".into()));
        }
        for w in self.freq_hz.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::BadSignal("profile frequencies must ascend".into()));
            }
        }
        if self
            .freq_hz
            .iter()
            .chain(&self.gain_db)
            .chain(&self.phase_rad)
            .any(|v| !v.is_finite())
        {
            return Err(Error::BadSignal("profile response holds non-finite values".into()));
        }
        Ok(())
    }

    /// Flat 0 dB response sampled on `points` frequencies up to `max_hz`.
    pub fn flat(max_hz: f64, points: usize) -> Self {
        let freq_hz = (0..points)
            .map(|k| k as f64 * max_hz / (points - 1) as f64)
            .collect();
        Self { freq_hz, gain_db: vec![0.0; points], phase_rad: vec![0.0; points] }
    }

    /// Sample a measured grid response into profile form, keeping
    /// bins from 0 Hz through `max_hz`. Gains are floored at -200 dB
    /// so silence stays representable in JSON.
    pub fn from_grid(resp: &FrequencyResponse, max_hz: f64) -> Self {
        let n = resp.len();
        let mut freq_hz = Vec::new();
        let mut gain_db = Vec::new();
        let mut phase_rad = Vec::new();
        for k in 0..=n / 2 {
            let f = resp.freq_of_bin(k);
            if f > max_hz {
                break;
            }
            freq_hz.push(f);
            gain_db.push(20.0 * resp.magnitude(k).max(1e-10).log10());
            phase_rad.push(resp.bins[k].arg());
        }
        Self { freq_hz, gain_db, phase_rad }
    }

    /// Gain in dB at an arbitrary frequency, linearly interpolated,
    /// clamped to the end points outside the covered range.
    pub fn gain_at(&self, f: f64) -> f64 {
        let fr = &self.freq_hz;
        if f <= fr[0] {
            return self.gain_db[0];
        }
        if f >= fr[fr.len() - 1] {
            return self.gain_db[fr.len() - 1];
        }
        let i = fr.partition_point(|&x| x < f);
        let (f0, f1) = (fr[i - 1], fr[i]);
        let t = (f - f0) / (f1 - f0);
        self.gain_db[i - 1] * (1.0 - t) + self.gain_db[i] * t
    }

    /// Project the profile's gain onto an n-bin FFT grid as a
    /// magnitude-only (zero phase) response, for discounting.
    pub fn to_grid(&self, n: usize, sample_rate_hz: f64) -> FrequencyResponse {
        let mags = (0..n)
            .map(|k| {
                let f = crate::spectrum::bin_freq_folded(k, n, sample_rate_hz);
                10f64.powf(self.gain_at(f) / 20.0)
            })
            .collect();
        FrequencyResponse::from_magnitudes(mags, sample_rate_hz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileQuality {
    pub flatness_sd_db: f64,
    pub drc: DrcParams,
    pub sampling_rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub id: String,
    #[serde(rename = "timestamp_iso8601")]
    pub timestamp: DateTime<Utc>,
    pub kind: ProfileKind,
    pub identity: DeviceIdentity,
    pub parent_id: Option<String>,
    pub signer_email: String,
    pub response: ProfileResponse,
    pub quality: ProfileQuality,
}

/// Everything but the id, in stable field order; its JSON bytes are
/// what the id hashes.
#[derive(Serialize)]
struct ProfileContent<'a> {
    timestamp_iso8601: &'a DateTime<Utc>,
    kind: &'a ProfileKind,
    identity: &'a DeviceIdentity,
    parent_id: &'a Option<String>,
    signer_email: &'a str,
    response: &'a ProfileResponse,
    quality: &'a ProfileQuality,
}

impl Profile {
    /// Assemble a profile; the id is the SHA-256 of the profile's
    /// content, so identical content always gets the identical id.
    pub fn new(
        timestamp: DateTime<Utc>,
        kind: ProfileKind,
        identity: DeviceIdentity,
        parent_id: Option<String>,
        signer_email: impl Into<String>,
        response: ProfileResponse,
        quality: ProfileQuality,
    ) -> Self {
        let signer_email = signer_email.into();
        let id = content_id(&ProfileContent {
            timestamp_iso8601: &timestamp,
            kind: &kind,
            identity: &identity,
            parent_id: &parent_id,
            signer_email: &signer_email,
            response: &response,
            quality: &quality,
        });
        Self { id, timestamp, kind, identity, parent_id, signer_email, response, quality }
    }

    fn content_id(&self) -> String {
        content_id(&ProfileContent {
            timestamp_iso8601: &self.timestamp,
            kind: &self.kind,
            identity: &self.identity,
            parent_id: &self.parent_id,
            signer_email: &self.signer_email,
            response: &self.response,
            quality: &self.quality,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.identity.model_name.trim().is_empty() {
            return Err(Error::BadSignal("profile model_name is empty".into()));
        }
        self.response.validate()?;
        let is_root = self.kind == ProfileKind::ManufacturerMicrophone;
        if is_root != self.parent_id.is_none() {
            return Err(Error::Store(format!(
                "profile {}: only manufacturer microphone profiles stand alone; all others need a parent",
                self.id
            )));
        }
        if self.id != self.content_id() {
            return Err(Error::Store(format!("profile id {} does not match its content", self.id)));
        }
        Ok(())
    }
}

fn content_id<T: Serialize>(content: &T) -> String {
    let bytes = serde_json::to_vec(content).expect("profile content serializes");
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Ordered leaf-to-root list of profiles, each calibrated against the
/// next, ending at a manufacturer measurement microphone.
#[derive(Debug, Clone, Serialize)]
pub struct TraceChain {
    pub profiles: Vec<Profile>,
}

impl TraceChain {
    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn root(&self) -> &Profile {
        self.profiles.last().expect("chains are never empty")
    }
}

/// Match outcome for a phone lookup. A profile is returned only on a
/// full 3-way match; otherwise the flags say which keys the closest
/// candidate matched, for diagnostics only.
#[derive(Debug, Clone)]
pub enum MatchResult {
    Match(Box<Profile>),
    NoMatch { name_matched: bool, number_matched: bool, screen_matched: bool },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexEntry {
    id: String,
    timestamp: DateTime<Utc>,
    kind: ProfileKind,
    brand: String,
    model_name: String,
    model_number: String,
    screen_px: Option<(u32, u32)>,
    parent_id: Option<String>,
    signer_email: String,
}

impl IndexEntry {
    fn of(p: &Profile) -> Self {
        Self {
            id: p.id.clone(),
            timestamp: p.timestamp,
            kind: p.kind,
            brand: p.identity.brand.clone(),
            model_name: p.identity.model_name.clone(),
            model_number: p.identity.model_number.clone(),
            screen_px: p.identity.screen_px,
            parent_id: p.parent_id.clone(),
            signer_email: p.signer_email.clone(),
        }
    }
}

/// Case-fold and collapse whitespace for matching; stored strings
/// keep their original form.
fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn screens_match(a: (u32, u32), b: (u32, u32)) -> bool {
    a == b || a == (b.1, b.0)
}

/// On-disk profile store. Reads may share a store; writes go through
/// `&mut self`, keeping the single-writer contract in the type system.
pub struct ProfileStore {
    dir: PathBuf,
    entries: Vec<IndexEntry>,
}

impl ProfileStore {
    /// Open (or create) a store directory. A missing index is rebuilt
    /// by scanning the profile documents.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let index_path = dir.join("index.json");
        let entries = if index_path.exists() {
            serde_json::from_str(&fs::read_to_string(&index_path)?)?
        } else {
            let mut entries = Vec::new();
            for item in fs::read_dir(&dir)? {
                let path = item?.path();
                if path.extension().is_some_and(|e| e == "json")
                    && path.file_name().is_some_and(|n| n != "index.json")
                {
                    let p: Profile = serde_json::from_str(&fs::read_to_string(&path)?)?;
                    entries.push(IndexEntry::of(&p));
                }
            }
            entries
        };
        let mut store = Self { dir, entries };
        store.sort_entries();
        Ok(store)
    }

    fn sort_entries(&mut self) {
        self.entries.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then(a.id.cmp(&b.id)));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    fn entry(&self, id: &str) -> Option<&IndexEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    fn profile_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    pub fn get(&self, id: &str) -> Result<Profile> {
        let path = self.profile_path(id);
        if !path.exists() {
            return Err(Error::Store(format!("no profile with id {id}")));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// All profiles, oldest first.
    pub fn all_profiles(&self) -> Result<Vec<Profile>> {
        self.entries.iter().map(|e| self.get(&e.id)).collect()
    }

    /// Validate and persist a profile; returns its id. Re-adding
    /// identical content is a no-op (same id, same bytes).
    pub fn add_profile(&mut self, profile: Profile) -> Result<String> {
        profile.validate()?;
        if self.entry(&profile.id).is_some() {
            return Ok(profile.id);
        }
        if let Some(parent_id) = &profile.parent_id {
            let parent = self
                .entry(parent_id)
                .ok_or_else(|| Error::BrokenChain { missing_id: parent_id.clone() })?;
            let ok = matches!(
                (profile.kind, parent.kind),
                (ProfileKind::Loudspeaker, ProfileKind::Microphone)
                    | (ProfileKind::Loudspeaker, ProfileKind::ManufacturerMicrophone)
                    | (ProfileKind::Microphone, ProfileKind::Loudspeaker)
            );
            if !ok {
                return Err(Error::Store(format!(
                    "a {:?} profile cannot be calibrated against a {:?} parent",
                    profile.kind, parent.kind
                )));
            }
            if parent.timestamp >= profile.timestamp {
                return Err(Error::Store(format!(
                    "parent {} is not older than the new profile",
                    parent_id
                )));
            }
            self.walk_to_root(parent_id)?;
        }

        let bytes = serde_json::to_vec_pretty(&profile)?;
        self.write_atomic(&self.profile_path(&profile.id), &bytes)?;
        self.entries.push(IndexEntry::of(&profile));
        self.sort_entries();
        self.write_index()?;
        Ok(profile.id)
    }

    /// Follow parent links to the root over the index, erroring on a
    /// dangling link or a cycle. Returns the visited ids, leaf first.
    fn walk_to_root(&self, id: &str) -> Result<Vec<String>> {
        let by_id: HashMap<&str, &IndexEntry> =
            self.entries.iter().map(|e| (e.id.as_str(), e)).collect();
        let mut seen = HashSet::new();
        let mut path = Vec::new();
        let mut cur = id.to_string();
        loop {
            if !seen.insert(cur.clone()) {
                return Err(Error::ChainCycle(format!(
                    "parent links loop back to {cur}: {}",
                    path.join(" -> ")
                )));
            }
            let entry = by_id
                .get(cur.as_str())
                .ok_or_else(|| Error::BrokenChain { missing_id: cur.clone() })?;
            path.push(cur.clone());
            match &entry.parent_id {
                Some(p) => cur = p.clone(),
                None => return Ok(path),
            }
        }
    }

    /// Full calibration chain for a profile, leaf to root, verifying
    /// alternation, timestamp order, and the manufacturer root.
    pub fn trace_chain(&self, id: &str) -> Result<TraceChain> {
        let ids = self.walk_to_root(id)?;
        let profiles: Vec<Profile> = ids.iter().map(|i| self.get(i)).collect::<Result<_>>()?;
        let root = profiles.last().expect("walk returns at least the leaf");
        if root.kind != ProfileKind::ManufacturerMicrophone {
            return Err(Error::Store(format!(
                "chain from {id} ends at {} which is not a manufacturer microphone",
                root.id
            )));
        }
        for pair in profiles.windows(2) {
            let (child, parent) = (&pair[0], &pair[1]);
            let ok = matches!(
                (child.kind, parent.kind),
                (ProfileKind::Loudspeaker, ProfileKind::Microphone)
                    | (ProfileKind::Loudspeaker, ProfileKind::ManufacturerMicrophone)
                    | (ProfileKind::Microphone, ProfileKind::Loudspeaker)
            );
            if !ok {
                return Err(Error::Store(format!(
                    "chain from {id}: {} and its parent {} do not alternate microphone/loudspeaker",
                    child.id, parent.id
                )));
            }
            if parent.timestamp >= child.timestamp {
                return Err(Error::Store(format!(
                    "chain from {id}: parent {} is not older than {}",
                    parent.id, child.id
                )));
            }
        }
        Ok(TraceChain { profiles })
    }

    /// 3-way phone lookup over profiles that carry a screen size.
    /// All three keys must match (names normalized, screen accepted in
    /// either orientation); among multiple full matches the newest
    /// wins. Partial matches report which keys the closest candidate
    /// hit, and count as no match.
    pub fn match_phone(
        &self,
        model_name: &str,
        model_number: &str,
        screen_px: (u32, u32),
    ) -> MatchResult {
        let name = normalize(model_name);
        let number = normalize(model_number);
        let mut best: Option<(u32, &IndexEntry, [bool; 3])> = None;
        for e in self.entries.iter().filter(|e| e.screen_px.is_some()) {
            let flags = [
                normalize(&e.model_name) == name,
                normalize(&e.model_number) == number,
                screens_match(e.screen_px.unwrap(), screen_px),
            ];
            let score = flags.iter().filter(|&&f| f).count() as u32;
            let better = match &best {
                None => true,
                Some((s, b, _)) => {
                    score > *s
                        || (score == *s
                            && (e.timestamp, &e.id) > (b.timestamp, &b.id))
                }
            };
            if better {
                best = Some((score, e, flags));
            }
        }
        match best {
            Some((3, e, _)) => match self.get(&e.id) {
                Ok(p) => MatchResult::Match(Box::new(p)),
                Err(_) => MatchResult::NoMatch {
                    name_matched: true,
                    number_matched: true,
                    screen_matched: true,
                },
            },
            Some((_, _, f)) => MatchResult::NoMatch {
                name_matched: f[0],
                number_matched: f[1],
                screen_matched: f[2],
            },
            None => MatchResult::NoMatch {
                name_matched: false,
                number_matched: false,
                screen_matched: false,
            },
        }
    }

    /// Distinct (model name, model number) count per brand.
    pub fn brand_coverage(&self) -> BTreeMap<String, usize> {
        let mut models: BTreeMap<String, BTreeSet<(String, String)>> = BTreeMap::new();
        for e in &self.entries {
            models
                .entry(e.brand.trim().to_string())
                .or_default()
                .insert((normalize(&e.model_name), normalize(&e.model_number)));
        }
        models.into_iter().map(|(brand, set)| (brand, set.len())).collect()
    }

    fn write_index(&self) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(&self.entries)?;
        self.write_atomic(&self.dir.join("index.json"), &bytes)
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// Keep only profiles whose entire calibration chain is signed by
/// approved emails. The manufacturer root is exempt: its standing
/// comes from the vendor's calibration, not a signature.
pub fn filter_by_signers(
    store: &ProfileStore,
    profiles: &[Profile],
    approved: &HashSet<String>,
) -> Vec<Profile> {
    let approved: HashSet<String> = approved.iter().map(|e| normalize(e)).collect();
    profiles
        .iter()
        .filter(|p| match store.trace_chain(&p.id) {
            Ok(chain) => chain.profiles[..chain.len() - 1]
                .iter()
                .all(|q| approved.contains(&normalize(&q.signer_email))),
            Err(_) => false,
        })
        .cloned()
        .collect()
}

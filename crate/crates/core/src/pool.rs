//! Clip data model, pool bookkeeping and the pool / selection file formats.
//!
//! A pool file holds one JSON clip record per line:
//!
//! ```text
//! {"id":"c1","weather":"Sunny","lighting":"Day","frames":[{"speed":4.2,"command":"Straight"}],"gt_future":[[2.1,0.0],...]}
//! ```
//!
//! A selection file is a single JSON document listing the labeled increments
//! in the order they were added: `{"rounds":[{"round":0,"ids":["c1"]}]}`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

/// Default future-trajectory length: 6 waypoints over 3 s.
pub const DEFAULT_HORIZON: usize = 6;

/// Planar point in meters.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Weather {
    Sunny,
    Rainy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Lighting {
    Day,
    Night,
}

/// Per-frame driving intent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Command {
    Left,
    Right,
    Straight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameState {
    pub speed: f64,
    pub command: Command,
}

/// One clip of the pool. Everything except `annotation` is cheap metadata
/// that exists before labeling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub weather: Weather,
    pub lighting: Lighting,
    pub frames: Vec<FrameState>,
    pub gt_future: Vec<Point>,
    /// Opaque label payload, base64 on disk. Never interpreted.
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "opaque_bytes"
    )]
    pub annotation: Option<Vec<u8>>,
}

mod opaque_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(bytes) => s.serialize_str(&STANDARD.encode(bytes)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        let text: Option<String> = Option::deserialize(d)?;
        text.map(|t| STANDARD.decode(t).map_err(serde::de::Error::custom))
            .transpose()
    }
}

impl ClipRecord {
    /// Checks the record invariants for a pool with the given horizon.
    pub fn validate(&self, horizon: usize) -> Result<()> {
        let invalid = |reason: String| Error::InvalidClip {
            id: self.id.clone(),
            reason,
        };
        if self.id.is_empty() {
            return Err(invalid("empty id".into()));
        }
        if self.frames.is_empty() {
            return Err(invalid("no frames".into()));
        }
        if let Some(f) = self
            .frames
            .iter()
            .find(|f| !f.speed.is_finite() || f.speed < 0.0)
        {
            return Err(invalid(format!("invalid frame speed {}", f.speed)));
        }
        if self.gt_future.len() != horizon {
            return Err(invalid(format!(
                "gt_future has {} waypoints, expected {horizon}",
                self.gt_future.len()
            )));
        }
        if self.gt_future.iter().flatten().any(|c| !c.is_finite()) {
            return Err(invalid("non-finite gt_future waypoint".into()));
        }
        Ok(())
    }

    pub fn bucket(&self) -> Bucket {
        weather_lighting_bucket(self)
    }

    pub fn mean_speed(&self) -> f64 {
        mean_speed(self)
    }
}

/// First-level weather/lighting stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bucket {
    DS,
    DR,
    NS,
    NR,
}

impl Bucket {
    /// Fixed stratum order, also used for tie-breaking.
    pub const ALL: [Bucket; 4] = [Bucket::DS, Bucket::DR, Bucket::NS, Bucket::NR];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn lighting(self) -> Lighting {
        match self {
            Bucket::DS | Bucket::DR => Lighting::Day,
            Bucket::NS | Bucket::NR => Lighting::Night,
        }
    }

    pub fn weather(self) -> Weather {
        match self {
            Bucket::DS | Bucket::NS => Weather::Sunny,
            Bucket::DR | Bucket::NR => Weather::Rainy,
        }
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Second-level clip maneuver class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CommandClass {
    L,
    R,
    O,
    S,
}

impl CommandClass {
    pub const ALL: [CommandClass; 4] = [
        CommandClass::L,
        CommandClass::R,
        CommandClass::O,
        CommandClass::S,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for CommandClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

pub fn weather_lighting_bucket(clip: &ClipRecord) -> Bucket {
    match (clip.lighting, clip.weather) {
        (Lighting::Day, Weather::Sunny) => Bucket::DS,
        (Lighting::Day, Weather::Rainy) => Bucket::DR,
        (Lighting::Night, Weather::Sunny) => Bucket::NS,
        (Lighting::Night, Weather::Rainy) => Bucket::NR,
    }
}

/// Classifies a clip by how many Left / Right commands it carries.
/// Both counts at or above `threshold` means an overtake.
pub fn classify_command(clip: &ClipRecord, threshold: usize) -> CommandClass {
    let (left, right) = clip
        .frames
        .iter()
        .fold((0, 0), |(l, r), f| match f.command {
            Command::Left => (l + 1, r),
            Command::Right => (l, r + 1),
            Command::Straight => (l, r),
        });
    classify_counts(left, right, threshold)
}

pub(crate) fn classify_counts(left: usize, right: usize, threshold: usize) -> CommandClass {
    match (left >= threshold, right >= threshold) {
        (true, true) => CommandClass::O,
        (true, false) => CommandClass::L,
        (false, true) => CommandClass::R,
        (false, false) => CommandClass::S,
    }
}

pub fn mean_speed(clip: &ClipRecord) -> f64 {
    let total: f64 = clip.frames.iter().map(|f| f.speed).sum();
    total / clip.frames.len() as f64
}

/// An immutable, validated collection of clips in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    clips: Vec<ClipRecord>,
    index: HashMap<String, usize>,
    horizon: usize,
}

impl Pool {
    pub fn new(clips: Vec<ClipRecord>, horizon: usize) -> Result<Self> {
        let mut index = HashMap::with_capacity(clips.len());
        for (i, clip) in clips.iter().enumerate() {
            clip.validate(horizon)?;
            if index.insert(clip.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(clip.id.clone()));
            }
        }
        Ok(Pool {
            clips,
            index,
            horizon,
        })
    }

    pub fn clips(&self) -> &[ClipRecord] {
        &self.clips
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn get(&self, id: &str) -> Option<&ClipRecord> {
        self.index.get(id).map(|&i| &self.clips[i])
    }

    /// Position of the clip in file order.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.clips.iter().map(|c| c.id.as_str())
    }

    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        fsutil::to_jsonl(&self.clips)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_jsonl()?)
    }
}

/// Loads a pool file. All clips start unlabeled.
pub fn load_pool(path: &Path, horizon: usize) -> Result<(Pool, SelectionState)> {
    let records: Vec<(usize, ClipRecord)> = fsutil::read_jsonl(path)?;
    if records.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    let mut seen = HashSet::with_capacity(records.len());
    for (line, clip) in &records {
        clip.validate(horizon).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: *line,
            message: e.to_string(),
        })?;
        if !seen.insert(clip.id.as_str()) {
            return Err(Error::DuplicateId(clip.id.clone()));
        }
    }
    let pool = Pool::new(records.into_iter().map(|(_, c)| c).collect(), horizon)?;
    let state = SelectionState::new(&pool);
    Ok((pool, state))
}

/// One labeled increment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub round: usize,
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectionFile {
    rounds: Vec<Round>,
}

/// Labeled / unlabeled partition of a pool plus the increment history.
///
/// `labeled` is in selection order, `unlabeled` in pool order. Only
/// [`SelectionState::add_round`] mutates it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionState {
    labeled: Vec<String>,
    labeled_set: HashSet<String>,
    unlabeled: Vec<String>,
    rounds: Vec<Round>,
}

impl SelectionState {
    /// Everything unlabeled.
    pub fn new(pool: &Pool) -> Self {
        SelectionState {
            labeled: Vec::new(),
            labeled_set: HashSet::new(),
            unlabeled: pool.ids().map(str::to_owned).collect(),
            rounds: Vec::new(),
        }
    }

    pub fn labeled(&self) -> &[String] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[String] {
        &self.unlabeled
    }

    pub fn rounds(&self) -> &[Round] {
        &self.rounds
    }

    pub fn is_labeled(&self, id: &str) -> bool {
        self.labeled_set.contains(id)
    }

    /// Index the next increment will receive.
    pub fn next_round(&self) -> usize {
        self.rounds.len()
    }

    /// Moves `ids` from unlabeled to labeled as a new round. Fails without
    /// mutating if any id is unknown, already labeled or repeated.
    pub fn add_round(&mut self, ids: Vec<String>) -> Result<()> {
        let unlabeled: HashSet<&str> = self.unlabeled.iter().map(String::as_str).collect();
        let mut batch = HashSet::with_capacity(ids.len());
        for id in &ids {
            if self.labeled_set.contains(id) {
                return Err(Error::Selection(format!("clip `{id}` is already labeled")));
            }
            if !unlabeled.contains(id.as_str()) {
                return Err(Error::UnknownId(id.clone()));
            }
            if !batch.insert(id.as_str()) {
                return Err(Error::Selection(format!("clip `{id}` repeated in round")));
            }
        }
        self.unlabeled.retain(|u| !batch.contains(u.as_str()));
        self.labeled.extend(ids.iter().cloned());
        self.labeled_set.extend(ids.iter().cloned());
        self.rounds.push(Round {
            round: self.rounds.len(),
            ids,
        });
        Ok(())
    }

    /// Serialized selection document.
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let file = SelectionFile {
            rounds: self.rounds.clone(),
        };
        let mut bytes = serde_json::to_vec_pretty(&file)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// Rebuilds a state by replaying the rounds of a selection document.
    pub fn from_json(pool: &Pool, text: &str) -> Result<Self> {
        let file: SelectionFile = serde_json::from_str(text)?;
        Self::from_rounds(pool, file.rounds)
    }

    pub fn from_rounds(pool: &Pool, rounds: Vec<Round>) -> Result<Self> {
        let mut state = SelectionState::new(pool);
        for (expected, round) in rounds.into_iter().enumerate() {
            if round.round != expected {
                return Err(Error::Selection(format!(
                    "round {} listed where round {expected} was expected",
                    round.round
                )));
            }
            state.add_round(round.ids)?;
        }
        Ok(state)
    }
}

pub fn save_selection(state: &SelectionState, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &state.to_json()?)
}

pub fn load_selection(pool: &Pool, path: &Path) -> Result<SelectionState> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SelectionState::from_json(pool, &text).map_err(|e| match e {
        Error::Json(j) => Error::Parse {
            path: path.to_path_buf(),
            line: j.line(),
            message: j.to_string(),
        },
        other => other,
    })
}

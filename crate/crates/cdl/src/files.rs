//! On-disk formats: game files (JSON), schedules (JSON) and traces (CSV
//! with a JSON sidecar).
//!
//! Files are canonical and diffable: JSON objects keep their keys sorted,
//! numbers are integers or `"p/q"` strings (never floats), and emit/parse
//! round-trips byte for byte. Traces carry every recorded cost so a reader
//! can replay and cross-check them without trusting the producer.

use crate::dynamics::{Mode, MoveRecord, MoveTrace};
use crate::game::{CongestionGame, GameError, MoveFlag, StrategyProfile};
use crate::reductions::{scale_delays, RationalDelay};
use num_rational::Ratio;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("{path}: line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("trace was recorded against game {recorded}, not the supplied game {actual}")]
    GameHashMismatch { recorded: String, actual: String },
    #[error("trace does not replay: {0}")]
    Replay(#[from] crate::dynamics::DynamicsError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FileError + '_ {
    move |source| FileError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A nonnegative rational coefficient, stored as an integer when possible
/// and as a `"p/q"` string otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Coeff(pub Ratio<u64>);

impl From<u64> for Coeff {
    fn from(v: u64) -> Self {
        Coeff(Ratio::from_integer(v))
    }
}

impl Serialize for Coeff {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if *self.0.denom() == 1 {
            s.serialize_u64(*self.0.numer())
        } else {
            s.serialize_str(&format!("{}/{}", self.0.numer(), self.0.denom()))
        }
    }
}

struct CoeffVisitor;

impl Visitor<'_> for CoeffVisitor {
    type Value = Coeff;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a nonnegative integer or a \"p/q\" rational string")
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Coeff, E> {
        Ok(Coeff(Ratio::from_integer(v)))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Coeff, E> {
        u64::try_from(v)
            .map(|v| Coeff(Ratio::from_integer(v)))
            .map_err(|_| E::custom("coefficients must be nonnegative"))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Coeff, E> {
        let parse = |s: &str| s.trim().parse::<u64>().map_err(E::custom);
        match v.split_once('/') {
            Some((p, q)) => {
                let denom = parse(q)?;
                if denom == 0 {
                    return Err(E::custom("zero denominator"));
                }
                Ok(Coeff(Ratio::new(parse(p)?, denom)))
            }
            None => Ok(Coeff(Ratio::from_integer(parse(v)?))),
        }
    }
}

impl<'de> Deserialize<'de> for Coeff {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(CoeffVisitor)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceSpec {
    pub a: Coeff,
    pub b: Coeff,
}

/// The game instance format. Fields are declared in key order so the
/// canonical serialization is sorted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameFile {
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
    pub n: usize,
    pub resources: Vec<ResourceSpec>,
    pub strategies: Vec<Vec<Vec<usize>>>,
    pub symmetric: bool,
}

/// A game loaded from disk: the (integer-scaled) game, the scale factor
/// applied to all delay coefficients, load warnings, and the file's
/// free-form metadata.
pub struct LoadedGame {
    pub game: CongestionGame,
    pub scale: u64,
    pub warnings: Vec<String>,
    pub hash: String,
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl GameFile {
    pub fn from_game(
        game: &CongestionGame,
        meta: serde_json::Map<String, serde_json::Value>,
    ) -> Self {
        GameFile {
            meta,
            n: game.n(),
            resources: game
                .delays()
                .iter()
                .map(|d| ResourceSpec {
                    a: d.a.into(),
                    b: d.b.into(),
                })
                .collect(),
            strategies: game.strategy_sets().to_vec(),
            symmetric: game.is_symmetric(),
        }
    }

    /// Builds the in-memory game: deduplicates repeated strategies (with a
    /// warning), clears rational coefficients by a global scale factor, and
    /// cross-checks the declared symmetry flag.
    pub fn into_game(self) -> Result<LoadedGame, FileError> {
        let hash = game_file_hash(&self);
        let meta = self.meta.clone();
        let mut warnings = Vec::new();
        if self.strategies.len() != self.n {
            return Err(GameError::ProfileLength {
                got: self.strategies.len(),
                expected: self.n,
            }
            .into());
        }
        let mut strategy_sets = Vec::with_capacity(self.n);
        for (player, set) in self.strategies.into_iter().enumerate() {
            let mut seen: Vec<Vec<usize>> = Vec::new();
            for mut s in set {
                s.sort_unstable();
                s.dedup();
                if seen.contains(&s) {
                    warnings.push(format!(
                        "player {player}: duplicate strategy {s:?} dropped"
                    ));
                } else {
                    seen.push(s);
                }
            }
            strategy_sets.push(seen);
        }
        let rationals: Vec<RationalDelay> =
            self.resources.iter().map(|r| (r.a.0, r.b.0)).collect();
        let (delays, scale) = scale_delays(&rationals);
        if scale != 1 {
            warnings.push(format!(
                "rational coefficients scaled by {scale}; all costs scale with them"
            ));
        }
        let game =
            CongestionGame::new_with_declared_symmetry(delays, strategy_sets, self.symmetric)?;
        Ok(LoadedGame {
            game,
            scale,
            warnings,
            hash,
            meta,
        })
    }
}

/// Canonical bytes: pretty JSON with sorted keys and a trailing newline.
pub fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable value");
    bytes.push(b'\n');
    bytes
}

/// SHA-256 of the canonical game file bytes, hex-encoded.
pub fn game_file_hash(file: &GameFile) -> String {
    hex::encode(Sha256::digest(canonical_json(file)))
}

pub fn save_game(path: &Path, file: &GameFile) -> Result<(), FileError> {
    fs::write(path, canonical_json(file)).map_err(io_err(path))
}

pub fn load_game(path: &Path) -> Result<LoadedGame, FileError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let file: GameFile = serde_json::from_slice(&bytes).map_err(|source| FileError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    file.into_game()
}

/// A scripted schedule with its starting state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub initial: Vec<usize>,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
    /// `(player, strategy index)` pairs.
    pub moves: Vec<(usize, usize)>,
    /// Covering length the schedule is meant to be segmented by.
    pub t: usize,
}

pub fn save_schedule(path: &Path, file: &ScheduleFile) -> Result<(), FileError> {
    fs::write(path, canonical_json(file)).map_err(io_err(path))
}

pub fn load_schedule(path: &Path) -> Result<ScheduleFile, FileError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| FileError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Sidecar metadata stored next to a trace CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub beta: usize,
    pub game_hash: String,
    pub initial: Vec<usize>,
    pub mode: Mode,
    /// Free-form policy description (kind, parameters).
    pub policy: serde_json::Value,
    pub seed: Option<u64>,
    pub t: usize,
}

pub const TRACE_HEADER: &str =
    "step,covering,player,strategy_index,pre_cost,post_cost,flag,social_cost,potential";

pub fn sidecar_path(trace_path: &Path) -> PathBuf {
    let mut os = trace_path.as_os_str().to_owned();
    os.push(".meta.json");
    PathBuf::from(os)
}

/// The trace CSV as a string. Byte-deterministic.
pub fn trace_csv(trace: &MoveTrace) -> String {
    let mut out = String::with_capacity(64 * (trace.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for record in &trace.moves {
        let covering = (record.step - 1) / trace.t;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            record.step,
            covering,
            record.player,
            record.strategy,
            record.pre_cost,
            record.post_cost,
            record.flag.as_str(),
            record.social_cost,
            record.potential
        ));
    }
    out
}

/// Writes the CSV plus its sidecar.
pub fn save_trace(path: &Path, trace: &MoveTrace, meta: &TraceMeta) -> Result<(), FileError> {
    fs::write(path, trace_csv(trace)).map_err(io_err(path))?;
    let sidecar = sidecar_path(path);
    fs::write(&sidecar, canonical_json(meta)).map_err(io_err(&sidecar))
}

/// Reads a trace and its sidecar, then replays it against `game` to verify
/// every recorded cost. `expected_hash` is the canonical hash of the game
/// the caller loaded.
pub fn load_trace(
    path: &Path,
    game: &CongestionGame,
    expected_hash: &str,
) -> Result<(MoveTrace, TraceMeta), FileError> {
    let sidecar = sidecar_path(path);
    let meta_bytes = fs::read(&sidecar).map_err(io_err(&sidecar))?;
    let meta: TraceMeta =
        serde_json::from_slice(&meta_bytes).map_err(|source| FileError::Json {
            path: sidecar.clone(),
            source,
        })?;
    if meta.game_hash != expected_hash {
        return Err(FileError::GameHashMismatch {
            recorded: meta.game_hash,
            actual: expected_hash.to_string(),
        });
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let malformed = |line: usize, message: String| FileError::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == TRACE_HEADER => {}
        other => {
            return Err(malformed(
                1,
                format!("expected header {TRACE_HEADER:?}, found {other:?}"),
            ))
        }
    }
    let mut moves = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(malformed(idx + 1, format!("expected 9 fields, got {}", fields.len())));
        }
        let num = |i: usize| -> Result<u64, FileError> {
            fields[i]
                .parse::<u64>()
                .map_err(|e| malformed(idx + 1, format!("field {i}: {e}")))
        };
        let flag = match fields[6] {
            "improving" => MoveFlag::Improving,
            "indifferent" => MoveFlag::Indifferent,
            "stay" => MoveFlag::Stay,
            other => return Err(malformed(idx + 1, format!("unknown flag {other:?}"))),
        };
        moves.push(MoveRecord {
            step: num(0)? as usize,
            player: num(2)? as usize,
            strategy: num(3)? as usize,
            pre_cost: num(4)?,
            post_cost: num(5)?,
            flag,
            social_cost: num(7)?,
            potential: num(8)?,
        });
    }
    let trace = MoveTrace {
        initial: StrategyProfile::new(meta.initial.clone()),
        t: meta.t,
        mode: meta.mode,
        moves,
    };
    trace.verify_replay(game)?;
    Ok((trace, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{run_dynamics, SchedulePolicy};
    use crate::game::Delay;

    fn sample_game() -> CongestionGame {
        CongestionGame::new(
            vec![Delay::IDENTITY, Delay::new(2, 1)],
            vec![vec![vec![0], vec![1]], vec![vec![0], vec![0, 1]]],
        )
        .unwrap()
    }

    #[test]
    fn game_file_round_trips_canonically() {
        let game = sample_game();
        let file = GameFile::from_game(&game, Default::default());
        let bytes = canonical_json(&file);
        let parsed: GameFile = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(parsed, file);
        assert_eq!(canonical_json(&parsed), bytes);
        let loaded = parsed.into_game().unwrap();
        assert_eq!(loaded.game, game);
        assert_eq!(loaded.scale, 1);
        assert!(loaded.warnings.is_empty());
    }

    #[test]
    fn rational_coefficients_scale_on_load() {
        let json = serde_json::json!({
            "meta": {},
            "n": 1,
            "resources": [{"a": "1/2", "b": "1/3"}],
            "strategies": [[[0]]],
            "symmetric": true,
        });
        let file: GameFile = serde_json::from_value(json).unwrap();
        let loaded = file.into_game().unwrap();
        assert_eq!(loaded.scale, 6);
        assert_eq!(loaded.game.delay(0), Delay::new(3, 2));
        assert_eq!(loaded.warnings.len(), 1);
    }

    #[test]
    fn duplicate_strategies_warn_and_drop() {
        let json = serde_json::json!({
            "meta": {},
            "n": 1,
            "resources": [{"a": 1, "b": 0}],
            "strategies": [[[0], [0]]],
            "symmetric": true,
        });
        let file: GameFile = serde_json::from_value(json).unwrap();
        let loaded = file.into_game().unwrap();
        assert_eq!(loaded.game.strategies(0).len(), 1);
        assert_eq!(loaded.warnings.len(), 1);
    }

    #[test]
    fn symmetry_flag_is_checked_on_load() {
        let json = serde_json::json!({
            "meta": {},
            "n": 2,
            "resources": [{"a": 1, "b": 0}, {"a": 1, "b": 0}],
            "strategies": [[[0]], [[1]]],
            "symmetric": true,
        });
        let file: GameFile = serde_json::from_value(json).unwrap();
        assert!(matches!(
            file.into_game(),
            Err(FileError::Game(GameError::SymmetryMismatch { .. }))
        ));
    }

    #[test]
    fn trace_round_trip_with_replay_verification() {
        let dir = tempfile::tempdir().unwrap();
        let game = sample_game();
        let file = GameFile::from_game(&game, Default::default());
        let hash = game_file_hash(&file);
        let trace = run_dynamics(
            &game,
            &StrategyProfile::new(vec![0, 0]),
            &SchedulePolicy::round_robin(2),
            2,
            crate::dynamics::Mode::Strict,
        )
        .unwrap();
        let meta = TraceMeta {
            beta: 1,
            game_hash: hash.clone(),
            initial: trace.initial.choices().to_vec(),
            mode: trace.mode,
            policy: serde_json::json!({"kind": "round-robin"}),
            seed: None,
            t: trace.t,
        };
        let path = dir.path().join("trace.csv");
        save_trace(&path, &trace, &meta).unwrap();
        let (read, read_meta) = load_trace(&path, &game, &hash).unwrap();
        assert_eq!(read, trace);
        assert_eq!(read_meta, meta);

        // Tampering with a cost column must be caught by the replay check.
        let text = fs::read_to_string(&path).unwrap();
        let tampered = text.replacen("stay", "stay", 1); // no-op guard
        assert_eq!(text, tampered);
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let parts: Vec<&str> = lines[1].split(',').collect();
        let mut edited: Vec<String> = parts.iter().map(|s| s.to_string()).collect();
        edited[7] = (parts[7].parse::<u64>().unwrap() + 1).to_string();
        lines[1] = edited.join(",");
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        assert!(matches!(
            load_trace(&path, &game, &hash),
            Err(FileError::Replay(_))
        ));
    }

    #[test]
    fn trace_for_wrong_game_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let game = sample_game();
        let file = GameFile::from_game(&game, Default::default());
        let hash = game_file_hash(&file);
        let trace = run_dynamics(
            &game,
            &StrategyProfile::new(vec![0, 0]),
            &SchedulePolicy::round_robin(2),
            1,
            crate::dynamics::Mode::Strict,
        )
        .unwrap();
        let meta = TraceMeta {
            beta: 1,
            game_hash: hash,
            initial: trace.initial.choices().to_vec(),
            mode: trace.mode,
            policy: serde_json::Value::Null,
            seed: None,
            t: trace.t,
        };
        let path = dir.path().join("trace.csv");
        save_trace(&path, &trace, &meta).unwrap();
        assert!(matches!(
            load_trace(&path, &game, "deadbeef"),
            Err(FileError::GameHashMismatch { .. })
        ));
    }
}

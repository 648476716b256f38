//! Sleep-stage labels and hypnogram ingestion (CSV and EDF+ annotations).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Length of one scoring epoch in seconds.
pub const EPOCH_SECONDS: f64 = 30.0;

/// Canonical five-class sleep stage, plus a marker for epochs that never
/// reach training or evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    W,
    N1,
    N2,
    N3,
    Rem,
    Excluded,
}

impl Stage {
    pub const CLASSES: [Stage; 5] = [Stage::W, Stage::N1, Stage::N2, Stage::N3, Stage::Rem];
    pub const N_CLASSES: usize = 5;

    /// Class index in `0..5`, `None` for [`Stage::Excluded`].
    pub fn class_index(self) -> Option<usize> {
        match self {
            Stage::W => Some(0),
            Stage::N1 => Some(1),
            Stage::N2 => Some(2),
            Stage::N3 => Some(3),
            Stage::Rem => Some(4),
            Stage::Excluded => None,
        }
    }

    pub fn from_class_index(i: usize) -> Option<Stage> {
        Self::CLASSES.get(i).copied()
    }

    pub fn token(self) -> &'static str {
        match self {
            Stage::W => "W",
            Stage::N1 => "N1",
            Stage::N2 => "N2",
            Stage::N3 => "N3",
            Stage::Rem => "REM",
            Stage::Excluded => "EXCLUDED",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Recognizes a stage token. `Some(Excluded)` for tokens that are known
/// non-sleep markers (movement, unscored), `None` for unrecognized tokens.
pub fn classify_stage(raw: &str) -> Option<Stage> {
    let t = raw.trim();
    let lower = t.to_ascii_lowercase();
    let core = lower
        .strip_prefix("sleep stage")
        .or_else(|| lower.strip_prefix("sleep_stage_"))
        .or_else(|| lower.strip_prefix("stage"))
        .map(str::trim)
        .unwrap_or(&lower);
    let stage = match core {
        "w" | "wake" | "0" => Stage::W,
        "1" | "n1" | "s1" => Stage::N1,
        "2" | "n2" | "s2" => Stage::N2,
        // R&K stages 3 and 4 merge into N3.
        "3" | "4" | "n3" | "n4" | "s3" | "s4" => Stage::N3,
        "r" | "rem" | "5" => Stage::Rem,
        "?" | "m" | "mt" | "movement" | "movement time" | "unscored" | "unknown" | "excluded" | "6"
        | "9" => Stage::Excluded,
        _ => return None,
    };
    Some(stage)
}

/// Total mapping from legacy tokens onto the canonical labels; anything
/// unrecognized becomes [`Stage::Excluded`].
pub fn map_stages(raw: &str) -> Stage {
    classify_stage(raw).unwrap_or(Stage::Excluded)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypnogramEntry {
    pub onset: f64,
    pub duration: f64,
    pub stage: Stage,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Hypnogram {
    pub entries: Vec<HypnogramEntry>,
    /// Entries whose stage token was not recognized (stored as `Excluded`).
    pub unknown_tokens: usize,
}

impl Hypnogram {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push(&mut self, onset: f64, duration: f64, raw: &str) {
        let stage = match classify_stage(raw) {
            Some(s) => s,
            None => {
                self.unknown_tokens += 1;
                Stage::Excluded
            }
        };
        self.entries.push(HypnogramEntry {
            onset,
            duration,
            stage,
        });
    }

    /// Splits every entry into whole 30 s epochs aligned to multiples of 30 s
    /// and sorts by onset. Durations are rounded to the nearest epoch count.
    pub fn normalized(&self) -> Hypnogram {
        let mut out = Vec::new();
        for e in &self.entries {
            let first = (e.onset / EPOCH_SECONDS).round() as i64;
            let count = (e.duration / EPOCH_SECONDS).round() as i64;
            for i in 0..count.max(0) {
                let idx = first + i;
                if idx >= 0 {
                    out.push(HypnogramEntry {
                        onset: idx as f64 * EPOCH_SECONDS,
                        duration: EPOCH_SECONDS,
                        stage: e.stage,
                    });
                }
            }
        }
        out.sort_by(|a, b| a.onset.total_cmp(&b.onset));
        Hypnogram {
            entries: out,
            unknown_tokens: self.unknown_tokens,
        }
    }

    /// Stage of each of the first `n_epochs` epochs; unannotated epochs are
    /// `Excluded`. Later annotations overwrite earlier ones.
    pub fn epochs(&self, n_epochs: usize) -> Vec<Stage> {
        let mut stages = vec![Stage::Excluded; n_epochs];
        for e in self.normalized().entries {
            let i = (e.onset / EPOCH_SECONDS) as usize;
            if i < n_epochs {
                stages[i] = e.stage;
            }
        }
        stages
    }

    /// Hypnogram with one 30 s entry per stage.
    pub fn from_epochs(stages: &[Stage]) -> Hypnogram {
        Hypnogram {
            entries: stages
                .iter()
                .enumerate()
                .map(|(i, &stage)| HypnogramEntry {
                    onset: i as f64 * EPOCH_SECONDS,
                    duration: EPOCH_SECONDS,
                    stage,
                })
                .collect(),
            unknown_tokens: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    #[serde(alias = "onset_s")]
    onset: f64,
    #[serde(alias = "duration_s")]
    duration: f64,
    stage: String,
}

/// Parses `onset,duration,stage` rows (header row required when non-empty).
pub fn parse_hypnogram_csv(text: &str) -> Result<Hypnogram> {
    let mut h = Hypnogram::default();
    if text.trim().is_empty() {
        return Ok(h);
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    for row in rdr.deserialize() {
        let row: CsvRow = row?;
        h.push(row.onset, row.duration, &row.stage);
    }
    Ok(h)
}

pub fn write_hypnogram_csv(h: &Hypnogram) -> String {
    let mut s = String::from("onset,duration,stage\n");
    for e in &h.entries {
        s.push_str(&format!("{},{},{}\n", e.onset, e.duration, e.stage));
    }
    s
}

/// Parses EDF+ time-stamped annotation lists. Only `Sleep stage X`
/// annotations produce entries; a missing duration defaults to one epoch.
pub fn parse_hypnogram_tal(bytes: &[u8]) -> Hypnogram {
    let mut h = Hypnogram::default();
    for tal in bytes.split(|&b| b == 0) {
        if tal.is_empty() {
            continue;
        }
        let mut fields = tal.split(|&b| b == 0x14);
        let Some(timing) = fields.next() else { continue };
        let timing = String::from_utf8_lossy(timing);
        let (onset, duration) = match timing.split_once('\u{15}') {
            Some((o, d)) => (o.trim().parse::<f64>(), d.trim().parse::<f64>().ok()),
            None => (timing.trim().parse::<f64>(), None),
        };
        let Ok(onset) = onset else { continue };
        for ann in fields {
            let text = String::from_utf8_lossy(ann);
            let text = text.trim();
            if text.to_ascii_lowercase().starts_with("sleep stage") {
                h.push(onset, duration.unwrap_or(EPOCH_SECONDS), text);
            }
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legacy_tokens_map_to_five_classes() {
        assert_eq!(map_stages("Sleep stage 4"), Stage::N3);
        assert_eq!(map_stages("Sleep stage 3"), Stage::N3);
        assert_eq!(map_stages("Sleep stage R"), Stage::Rem);
        assert_eq!(map_stages("Sleep stage W"), Stage::W);
        assert_eq!(map_stages("Movement time"), Stage::Excluded);
        assert_eq!(map_stages("Sleep stage ?"), Stage::Excluded);
        assert_eq!(map_stages("N2"), Stage::N2);
        assert_eq!(map_stages("banana"), Stage::Excluded);
        assert_eq!(classify_stage("banana"), None);
    }

    #[test]
    fn csv_rows_map_directly() {
        let h = parse_hypnogram_csv("onset,duration,stage\n0,30,W\n30,30,N2\n").unwrap();
        assert_eq!(
            h.entries,
            vec![
                HypnogramEntry { onset: 0.0, duration: 30.0, stage: Stage::W },
                HypnogramEntry { onset: 30.0, duration: 30.0, stage: Stage::N2 },
            ]
        );
        assert_eq!(h.unknown_tokens, 0);
    }

    #[test]
    fn csv_unknown_tokens_are_counted() {
        let h = parse_hypnogram_csv("onset,duration,stage\n0,30,X\n30,30,N1\n").unwrap();
        assert_eq!(h.entries[0].stage, Stage::Excluded);
        assert_eq!(h.unknown_tokens, 1);
    }

    #[test]
    fn empty_sources_give_empty_hypnograms() {
        assert!(parse_hypnogram_csv("").unwrap().is_empty());
        assert!(parse_hypnogram_csv("onset,duration,stage\n").unwrap().is_empty());
        assert!(parse_hypnogram_tal(b"").is_empty());
    }

    #[test]
    fn tal_with_duration() {
        let h = parse_hypnogram_tal(b"+0\x15 30\x14Sleep stage W\x14\x00");
        assert_eq!(h.entries, vec![HypnogramEntry { onset: 0.0, duration: 30.0, stage: Stage::W }]);
    }

    #[test]
    fn tal_stream_with_timekeeping_and_padding() {
        let bytes = b"+0\x14\x14\x00+0\x1560\x14Sleep stage 2\x14\x00\x00\x00+60\x1530\x14Lights off\x14Sleep stage 4\x14\x00";
        let h = parse_hypnogram_tal(bytes);
        assert_eq!(h.entries.len(), 2);
        assert_eq!(h.entries[0].stage, Stage::N2);
        assert_eq!(h.entries[1], HypnogramEntry { onset: 60.0, duration: 30.0, stage: Stage::N3 });
        assert_eq!(h.epochs(3), vec![Stage::N2, Stage::N2, Stage::N3]);
    }

    #[test]
    fn normalization_splits_into_epochs() {
        let h = parse_hypnogram_csv("onset,duration,stage\n30,90,N2\n0,30,W\n").unwrap();
        let n = h.normalized();
        assert_eq!(n.entries.len(), 4);
        assert!(n.entries.windows(2).all(|w| w[0].onset <= w[1].onset));
        assert!(n.entries.iter().all(|e| e.duration == 30.0));
        assert_eq!(h.epochs(6), vec![Stage::W, Stage::N2, Stage::N2, Stage::N2, Stage::Excluded, Stage::Excluded]);
    }

    #[test]
    fn csv_round_trip() {
        let h = Hypnogram::from_epochs(&[Stage::W, Stage::N1, Stage::Rem, Stage::Excluded]);
        assert_eq!(parse_hypnogram_csv(&write_hypnogram_csv(&h)).unwrap(), h);
    }
}

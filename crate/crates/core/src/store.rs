//! Match and player tables backed by two append-only JSON-lines logs
//! (`matches.jsonl`, `results.jsonl`), replayed into memory on open.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MATCHES_FILE: &str = "matches.jsonl";
pub const RESULTS_FILE: &str = "results.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub match_id: String,
    pub config_name: String,
    pub map_name: String,
    pub played_at: DateTime<Utc>,
    pub player_count: u32,
    pub duration_s: f64,
    pub replay_file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayerResult {
    pub match_id: String,
    pub player_id: String,
    pub kills: u32,
    pub deaths: u32,
    pub damage: u64,
    pub won: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerSummary {
    pub player_id: String,
    pub mean_kills: f64,
    pub mean_deaths: f64,
    pub kd_ratio: f64,
    pub win_rate: f64,
    pub matches_played: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankMetric {
    WinRate,
    KdRatio,
    MeanKills,
}

impl RankMetric {
    fn of(self, s: &PlayerSummary) -> f64 {
        match self {
            RankMetric::WinRate => s.win_rate,
            RankMetric::KdRatio => s.kd_ratio,
            RankMetric::MeanKills => s.mean_kills,
        }
    }
}

impl FromStr for RankMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "win_rate" => Ok(RankMetric::WinRate),
            "kd_ratio" => Ok(RankMetric::KdRatio),
            "mean_kills" => Ok(RankMetric::MeanKills),
            other => Err(format!(
                "unknown metric `{other}` (expected win_rate, kd_ratio or mean_kills)"
            )),
        }
    }
}

impl fmt::Display for RankMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankMetric::WinRate => "win_rate",
            RankMetric::KdRatio => "kd_ratio",
            RankMetric::MeanKills => "mean_kills",
        })
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("duplicate match_id `{0}`")]
    DuplicateMatch(String),
    #[error("unknown match_id `{0}`")]
    UnknownMatch(String),
    #[error("unknown player `{0}`")]
    UnknownPlayer(String),
    #[error("match `{match_id}` already has a winner (`{winner}`)")]
    SecondWinner { match_id: String, winner: String },
    #[error("player `{player_id}` already has a result in match `{match_id}`")]
    DuplicateResult { match_id: String, player_id: String },
    #[error("invalid match record `{match_id}`: {reason}")]
    InvalidMatch { match_id: String, reason: String },
    #[error("store is empty")]
    Empty,
    #[error("{file}:{line}: {source}")]
    Parse {
        file: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Default)]
pub struct MatchStore {
    dir: Option<PathBuf>,
    matches: Vec<MatchRecord>,
    match_index: HashMap<String, usize>,
    results: Vec<PlayerResult>,
    winners: HashMap<String, String>,
}

impl MatchStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a store directory and replays both logs.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut store = Self {
            dir: None,
            ..Self::default()
        };
        for m in read_log::<MatchRecord>(&dir.join(MATCHES_FILE))? {
            store.record_match(m)?;
        }
        for r in read_log::<PlayerResult>(&dir.join(RESULTS_FILE))? {
            store.record_player_result(r)?;
        }
        store.dir = Some(dir);
        Ok(store)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn record_match(&mut self, m: MatchRecord) -> Result<(), StoreError> {
        if self.match_index.contains_key(&m.match_id) {
            return Err(StoreError::DuplicateMatch(m.match_id));
        }
        let invalid = |reason: &str| StoreError::InvalidMatch {
            match_id: m.match_id.clone(),
            reason: reason.to_string(),
        };
        if m.player_count == 0 {
            return Err(invalid("player_count must be positive"));
        }
        if !(m.duration_s.is_finite() && m.duration_s > 0.0) {
            return Err(invalid("duration_s must be positive and finite"));
        }
        self.append(MATCHES_FILE, &m)?;
        self.match_index
            .insert(m.match_id.clone(), self.matches.len());
        self.matches.push(m);
        Ok(())
    }

    pub fn record_player_result(&mut self, r: PlayerResult) -> Result<(), StoreError> {
        if !self.match_index.contains_key(&r.match_id) {
            return Err(StoreError::UnknownMatch(r.match_id));
        }
        if self.result(&r.match_id, &r.player_id).is_some() {
            return Err(StoreError::DuplicateResult {
                match_id: r.match_id,
                player_id: r.player_id,
            });
        }
        if r.won {
            if let Some(winner) = self.winners.get(&r.match_id) {
                return Err(StoreError::SecondWinner {
                    match_id: r.match_id,
                    winner: winner.clone(),
                });
            }
        }
        self.append(RESULTS_FILE, &r)?;
        if r.won {
            self.winners.insert(r.match_id.clone(), r.player_id.clone());
        }
        self.results.push(r);
        Ok(())
    }

    fn append<T: Serialize>(&self, file: &str, record: &T) -> Result<(), StoreError> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let mut line = serde_json::to_string(record).expect("records serialize");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(file))?;
        f.write_all(line.as_bytes())?;
        Ok(())
    }

    pub fn get_match(&self, match_id: &str) -> Option<&MatchRecord> {
        self.match_index.get(match_id).map(|&i| &self.matches[i])
    }

    pub fn result(&self, match_id: &str, player_id: &str) -> Option<&PlayerResult> {
        self.results
            .iter()
            .find(|r| r.match_id == match_id && r.player_id == player_id)
    }

    pub fn matches(&self) -> &[MatchRecord] {
        &self.matches
    }

    pub fn results(&self) -> &[PlayerResult] {
        &self.results
    }

    pub fn match_count(&self) -> usize {
        self.matches.len()
    }

    /// Player ids with at least one result, sorted.
    pub fn players(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.results.iter().map(|r| r.player_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn player_summary(&self, player_id: &str) -> Result<PlayerSummary, StoreError> {
        let mine: Vec<&PlayerResult> = self
            .results
            .iter()
            .filter(|r| r.player_id == player_id)
            .collect();
        if mine.is_empty() {
            return Err(StoreError::UnknownPlayer(player_id.to_string()));
        }
        Ok(summarize(player_id, &mine))
    }

    pub fn summaries(&self) -> Vec<PlayerSummary> {
        let mut by_player: BTreeMap<&str, Vec<&PlayerResult>> = BTreeMap::new();
        for r in &self.results {
            by_player.entry(&r.player_id).or_default().push(r);
        }
        by_player
            .into_iter()
            .map(|(id, rs)| summarize(id, &rs))
            .collect()
    }

    /// Summaries sorted best-first by `metric`; ties go to the
    /// lexicographically smaller player id.
    pub fn rank_players(&self, metric: RankMetric) -> Result<Vec<PlayerSummary>, StoreError> {
        let mut all = self.summaries();
        if all.is_empty() {
            return Err(StoreError::Empty);
        }
        all.sort_by(|a, b| compare_rank(metric, a, b));
        Ok(all)
    }
}

fn compare_rank(metric: RankMetric, a: &PlayerSummary, b: &PlayerSummary) -> Ordering {
    metric
        .of(b)
        .total_cmp(&metric.of(a))
        .then_with(|| a.player_id.cmp(&b.player_id))
}

/// Mean kills over mean deaths; a player who never died is treated as
/// having died once per match, so the ratio falls back to mean kills.
pub fn kd_ratio(mean_kills: f64, mean_deaths: f64) -> f64 {
    if mean_deaths > 0.0 {
        mean_kills / mean_deaths
    } else {
        mean_kills
    }
}

fn summarize(player_id: &str, results: &[&PlayerResult]) -> PlayerSummary {
    let n = results.len() as f64;
    // integer sums keep the means independent of insertion order
    let kills: u64 = results.iter().map(|r| u64::from(r.kills)).sum();
    let deaths: u64 = results.iter().map(|r| u64::from(r.deaths)).sum();
    let wins = results.iter().filter(|r| r.won).count();
    let mean_kills = kills as f64 / n;
    let mean_deaths = deaths as f64 / n;
    PlayerSummary {
        player_id: player_id.to_string(),
        mean_kills,
        mean_deaths,
        kd_ratio: kd_ratio(mean_kills, mean_deaths),
        win_rate: wins as f64 / n,
        matches_played: results.len() as u32,
    }
}

fn read_log<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, StoreError> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| StoreError::Parse {
            file: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn summaries_csv(summaries: &[PlayerSummary]) -> String {
    let mut out =
        String::from("player_id,mean_kills,mean_deaths,kd_ratio,win_rate,matches_played\n");
    for s in summaries {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4},{}\n",
            s.player_id, s.mean_kills, s.mean_deaths, s.kd_ratio, s.win_rate, s.matches_played
        ));
    }
    out
}

pub fn matches_csv(matches: &[MatchRecord]) -> String {
    let mut out = String::from(
        "match_id,config_name,map_name,played_at,player_count,duration_s,replay_file\n",
    );
    for m in matches {
        out.push_str(&format!(
            "{},{},{},{},{},{:.3},{}\n",
            m.match_id,
            m.config_name,
            m.map_name,
            m.played_at.to_rfc3339(),
            m.player_count,
            m.duration_s,
            m.replay_file
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn match_record(id: &str) -> MatchRecord {
        MatchRecord {
            match_id: id.to_string(),
            config_name: "deathmatch".into(),
            map_name: "MAP01".into(),
            played_at: DateTime::from_timestamp(1_700_000_000, 0).unwrap(),
            player_count: 4,
            duration_s: 600.0,
            replay_file: format!("{id}.farp"),
        }
    }

    fn result(m: &str, p: &str, kills: u32, deaths: u32, won: bool) -> PlayerResult {
        PlayerResult {
            match_id: m.into(),
            player_id: p.into(),
            kills,
            deaths,
            damage: u64::from(kills) * 100,
            won,
        }
    }

    #[test]
    fn insert_and_query() {
        let mut s = MatchStore::in_memory();
        s.record_match(match_record("a")).unwrap();
        assert_eq!(s.get_match("a"), Some(&match_record("a")));
        assert!(matches!(
            s.record_match(match_record("a")),
            Err(StoreError::DuplicateMatch(_))
        ));
    }

    #[test]
    fn forty_one_matches() {
        let mut s = MatchStore::in_memory();
        for i in 0..41 {
            s.record_match(match_record(&format!("m{i:02}"))).unwrap();
        }
        assert_eq!(s.match_count(), 41);
    }

    #[test]
    fn result_errors() {
        let mut s = MatchStore::in_memory();
        assert!(matches!(
            s.record_player_result(result("x", "p", 1, 1, false)),
            Err(StoreError::UnknownMatch(_))
        ));
        s.record_match(match_record("a")).unwrap();
        s.record_player_result(result("a", "p", 3, 1, true))
            .unwrap();
        assert!(matches!(
            s.record_player_result(result("a", "q", 1, 1, true)),
            Err(StoreError::SecondWinner { .. })
        ));
        assert!(matches!(
            s.record_player_result(result("a", "p", 1, 1, false)),
            Err(StoreError::DuplicateResult { .. })
        ));
        assert_eq!(s.result("a", "p").unwrap().kills, 3);
    }

    #[test]
    fn single_win() {
        let mut s = MatchStore::in_memory();
        s.record_match(match_record("a")).unwrap();
        s.record_player_result(result("a", "p", 3, 1, true))
            .unwrap();
        let sum = s.player_summary("p").unwrap();
        assert_eq!(sum.win_rate, 1.0);
        assert_eq!(sum.kd_ratio, 3.0);
        assert!(matches!(
            s.player_summary("q"),
            Err(StoreError::UnknownPlayer(_))
        ));
    }

    #[test]
    fn zero_deaths_falls_back_to_mean_kills() {
        assert_eq!(kd_ratio(4.5, 0.0), 4.5);
    }

    #[test]
    fn identical_players_rank_lexicographically() {
        let mut s = MatchStore::in_memory();
        s.record_match(match_record("a")).unwrap();
        for p in ["zed", "amy", "kim"] {
            s.record_player_result(result("a", p, 2, 2, false)).unwrap();
        }
        let ids: Vec<_> = s
            .rank_players(RankMetric::WinRate)
            .unwrap()
            .into_iter()
            .map(|s| s.player_id)
            .collect();
        assert_eq!(ids, ["amy", "kim", "zed"]);
    }

    #[test]
    fn higher_kd_first() {
        let mut s = MatchStore::in_memory();
        s.record_match(match_record("a")).unwrap();
        s.record_player_result(result("a", "low", 1, 4, false))
            .unwrap();
        s.record_player_result(result("a", "high", 8, 2, false))
            .unwrap();
        let ranked = s.rank_players(RankMetric::KdRatio).unwrap();
        assert_eq!(ranked[0].player_id, "high");
    }

    #[test]
    fn empty_store_cannot_rank() {
        assert!(matches!(
            MatchStore::in_memory().rank_players(RankMetric::WinRate),
            Err(StoreError::Empty)
        ));
    }

    #[test]
    fn metric_parse() {
        assert_eq!(
            "kd_ratio".parse::<RankMetric>().unwrap(),
            RankMetric::KdRatio
        );
        assert!("elo".parse::<RankMetric>().is_err());
    }
}

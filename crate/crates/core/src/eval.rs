//! Agent evaluation: per-game results averaged over a set of games, and an
//! ordering of agents where damage dealt is the main signal.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameResult {
    pub kills: u32,
    pub damage: u64,
    pub deaths: u32,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean_kills: f64,
    pub mean_damage: f64,
    pub mean_deaths: f64,
    pub n_games: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimaryMetric {
    #[default]
    Damage,
    Kills,
}

impl std::str::FromStr for PrimaryMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "damage" => Ok(Self::Damage),
            "kills" => Ok(Self::Kills),
            other => Err(format!(
                "unknown metric `{other}` (expected damage or kills)"
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no game results")]
    Empty,
    #[error("game {index}: duration_s must be positive and finite")]
    Duration { index: usize },
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn aggregate(results: &[GameResult]) -> Result<EvalSummary, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(index) = results
        .iter()
        .position(|r| !(r.duration_s.is_finite() && r.duration_s > 0.0))
    {
        return Err(EvalError::Duration { index });
    }
    let n = results.len() as f64;
    let kills: u64 = results.iter().map(|r| u64::from(r.kills)).sum();
    let damage: u128 = results.iter().map(|r| u128::from(r.damage)).sum();
    let deaths: u64 = results.iter().map(|r| u64::from(r.deaths)).sum();
    Ok(EvalSummary {
        mean_kills: kills as f64 / n,
        mean_damage: damage as f64 / n,
        mean_deaths: deaths as f64 / n,
        n_games: results.len(),
    })
}

/// `Greater` when `a` performed better: primary metric first, then kills,
/// then fewer deaths.
pub fn compare(a: &EvalSummary, b: &EvalSummary, primary: PrimaryMetric) -> Ordering {
    let first = match primary {
        PrimaryMetric::Damage => a.mean_damage.total_cmp(&b.mean_damage),
        PrimaryMetric::Kills => a.mean_kills.total_cmp(&b.mean_kills),
    };
    first
        .then_with(|| a.mean_kills.total_cmp(&b.mean_kills))
        .then_with(|| b.mean_deaths.total_cmp(&a.mean_deaths))
}

/// Sorts labelled summaries best-first; equal entries keep their order.
pub fn rank<T>(entries: &mut [(T, EvalSummary)], primary: PrimaryMetric) {
    entries.sort_by(|(_, a), (_, b)| compare(b, a, primary));
}

/// Reads one JSON `GameResult` per non-blank line.
pub fn read_results(reader: impl BufRead) -> Result<Vec<GameResult>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| EvalError::Parse {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

pub fn summary_csv<S: AsRef<str>>(rows: &[(S, EvalSummary)]) -> String {
    let mut out = String::from("agent,mean_kills,mean_damage,mean_deaths,n_games\n");
    for (label, s) in rows {
        let _ = writeln!(
            out,
            "{},{:.3},{:.3},{:.3},{}",
            label.as_ref(),
            s.mean_kills,
            s.mean_damage,
            s.mean_deaths,
            s.n_games
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn game(kills: u32, damage: u64, deaths: u32) -> GameResult {
        GameResult {
            kills,
            damage,
            deaths,
            duration_s: 60.0,
        }
    }

    fn summary(kills: f64, damage: f64, deaths: f64) -> EvalSummary {
        EvalSummary {
            mean_kills: kills,
            mean_damage: damage,
            mean_deaths: deaths,
            n_games: 10,
        }
    }

    #[test]
    fn identical_games() {
        let s = aggregate(&[game(11, 1462, 11); 10]).unwrap();
        assert_eq!(s, summary(11.0, 1462.0, 11.0));
    }

    #[test]
    fn mean_of_two() {
        assert_eq!(
            aggregate(&[game(5, 0, 0), game(15, 0, 0)])
                .unwrap()
                .mean_kills,
            10.0
        );
    }

    #[test]
    fn errors() {
        assert!(matches!(aggregate(&[]), Err(EvalError::Empty)));
        let mut g = game(1, 1, 1);
        g.duration_s = 0.0;
        assert!(matches!(
            aggregate(&[g]),
            Err(EvalError::Duration { index: 0 })
        ));
    }

    #[test]
    fn damage_decides() {
        let top = summary(11.0, 1462.0, 11.2);
        let bottom = summary(5.1, 762.0, 8.7);
        assert_eq!(
            compare(&top, &bottom, PrimaryMetric::Damage),
            Ordering::Greater
        );
        assert_eq!(
            compare(&bottom, &top, PrimaryMetric::Damage),
            Ordering::Less
        );
    }

    #[test]
    fn kills_break_damage_ties() {
        let a = summary(9.3, 1200.0, 10.2);
        let b = summary(7.8, 1200.0, 7.6);
        assert_eq!(compare(&a, &b, PrimaryMetric::Damage), Ordering::Greater);
    }

    #[test]
    fn fewer_deaths_break_remaining_ties() {
        let a = summary(9.0, 1000.0, 5.0);
        let b = summary(9.0, 1000.0, 6.0);
        assert_eq!(compare(&a, &b, PrimaryMetric::Kills), Ordering::Greater);
        assert_eq!(compare(&a, &a, PrimaryMetric::Damage), Ordering::Equal);
    }

    #[test]
    fn jsonl_reader() {
        let text = "{\"kills\":3,\"damage\":250,\"deaths\":2,\"duration_s\":60.0}\n\n{\"kills\":1,\"damage\":90,\"deaths\":4,\"duration_s\":60.0}\n";
        let r = read_results(text.as_bytes()).unwrap();
        assert_eq!(r, [game(3, 250, 2), game(1, 90, 4)]);
        assert!(matches!(
            read_results("{\"kills\":1}".as_bytes()),
            Err(EvalError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn ranking() {
        let mut rows = vec![
            ("bottom", summary(5.1, 762.0, 8.7)),
            ("top", summary(11.0, 1462.0, 11.2)),
            ("lean", summary(7.8, 1134.0, 7.6)),
        ];
        rank(&mut rows, PrimaryMetric::Damage);
        let order: Vec<_> = rows.iter().map(|r| r.0).collect();
        assert_eq!(order, ["top", "lean", "bottom"]);
        assert!(summary_csv(&rows).starts_with("agent,"));
    }
}

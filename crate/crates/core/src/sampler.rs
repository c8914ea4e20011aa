//! Training-sequence construction: exponential frame skipping, target
//! averaging and action-balanced batching.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, ActionValues};
use crate::replay::{ActionVector, Replay};

pub const MIN_SKIP_EXPONENT: f64 = 1.0;
pub const MAX_SKIP_EXPONENT: f64 = 1.5;

/// Threshold at which an averaged binary target counts as "pressed".
pub const POSITIVE_THRESHOLD: f64 = 0.5;

// i^lambda values that land within this distance below an integer are
// treated as that integer, so exact powers such as 4^1.5 are not floored
// to 7 by pow() rounding.
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMethod {
    /// Mean of the next `target_range` labels.
    #[default]
    Average,
    /// One label drawn uniformly from the next `target_range`.
    OneRandom,
    /// The label immediately after the anchor.
    OneNext,
}

impl std::str::FromStr for TargetMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "average" => Ok(Self::Average),
            "one_random" => Ok(Self::OneRandom),
            "one_next" => Ok(Self::OneNext),
            other => Err(format!(
                "unknown target method `{other}` (expected average, one_random or one_next)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub sequence_length: usize,
    pub skip_exponent: f64,
    pub target_range: usize,
    pub target_method: TargetMethod,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            sequence_length: 15,
            skip_exponent: 1.22,
            target_range: 2,
            target_method: TargetMethod::Average,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        check_offset_args(self.sequence_length, self.skip_exponent)?;
        if self.target_range == 0 {
            return Err(SamplerError::TargetRange);
        }
        Ok(())
    }
}

/// Per-frame tensor layout consumed by the policy: RGB, depth and a
/// segmentation label map stacked into one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub channels: u32,
    pub width: u32,
    pub height: u32,
}

pub const STACKED_FRAME: ChannelSpec = ChannelSpec {
    channels: 5,
    width: 256,
    height: 192,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub anchor: usize,
    /// Oldest first; the last entry is the anchor.
    pub frame_indices: Vec<usize>,
    pub target: ActionValues,
    pub channel_spec: ChannelSpec,
}

impl SequenceSample {
    pub fn is_positive(&self, action: Action) -> bool {
        self.target.get(action) >= POSITIVE_THRESHOLD
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("sequence length must be at least 2 (got {0})")]
    SequenceLength(usize),
    #[error("skip exponent {0} outside [1.0, 1.5]")]
    SkipExponent(f64),
    #[error("target range must be positive")]
    TargetRange,
    #[error("target window t={t}..t+{range} exceeds {len} frames")]
    TargetWindow { t: usize, range: usize, len: usize },
    #[error("batch size must be positive")]
    BatchSize,
    #[error("`{0}` is not a binary action")]
    NotBinary(Action),
    #[error("no {kind} samples for `{action}`; cannot balance")]
    Unbalanceable { action: Action, kind: &'static str },
}

fn check_offset_args(n: usize, lambda: f64) -> Result<(), SamplerError> {
    if n < 2 {
        return Err(SamplerError::SequenceLength(n));
    }
    if !(MIN_SKIP_EXPONENT..=MAX_SKIP_EXPONENT).contains(&lambda) {
        return Err(SamplerError::SkipExponent(lambda));
    }
    Ok(())
}

/// Offsets `floor(i^lambda)` for `i = 1..n`, i.e. how far back each history
/// frame sits from the anchor. Repeated offsets are kept.
pub fn frame_offsets(n: usize, lambda: f64) -> Result<Vec<usize>, SamplerError> {
    check_offset_args(n, lambda)?;
    Ok((1..n)
        .map(|i| ((i as f64).powf(lambda) + FLOOR_SLACK).floor() as usize)
        .collect())
}

/// Mean of labels `t+1 ..= t+range`.
pub fn average_target(
    labels: &[ActionVector],
    t: usize,
    range: usize,
) -> Result<ActionValues, SamplerError> {
    check_window(labels.len(), t, range)?;
    let window = &labels[t + 1..=t + range];
    let scale = 1.0 / range as f64;
    Ok(ActionValues::from_fn(|a| {
        window.iter().map(|l| l.to_values().get(a)).sum::<f64>() * scale
    }))
}

fn check_window(len: usize, t: usize, range: usize) -> Result<(), SamplerError> {
    if range == 0 {
        return Err(SamplerError::TargetRange);
    }
    if t.checked_add(range).is_none_or(|end| end >= len) {
        return Err(SamplerError::TargetWindow { t, range, len });
    }
    Ok(())
}

pub fn target_for<R: Rng + ?Sized>(
    labels: &[ActionVector],
    t: usize,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<ActionValues, SamplerError> {
    check_window(labels.len(), t, cfg.target_range)?;
    match cfg.target_method {
        TargetMethod::Average => average_target(labels, t, cfg.target_range),
        TargetMethod::OneNext => Ok(labels[t + 1].to_values()),
        TargetMethod::OneRandom => {
            let n = rng.random_range(1..=cfg.target_range);
            Ok(labels[t + n].to_values())
        }
    }
}

/// History indices for anchor `t`, clamped to the first frame.
pub fn sequence_indices(t: usize, offsets: &[usize]) -> Vec<usize> {
    offsets
        .iter()
        .rev()
        .map(|&o| t.saturating_sub(o))
        .chain(std::iter::once(t))
        .collect()
}

/// Builds the training sample anchored at frame `t`. The random generator
/// is only consulted by [`TargetMethod::OneRandom`].
pub fn build_sequence<R: Rng + ?Sized>(
    replay: &Replay,
    t: usize,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SequenceSample, SamplerError> {
    let offsets = frame_offsets(cfg.sequence_length, cfg.skip_exponent)?;
    let labels = replay.actions();
    let target = target_for(&labels, t, cfg, rng)?;
    Ok(SequenceSample {
        anchor: t,
        frame_indices: sequence_indices(t, &offsets),
        target,
        channel_spec: STACKED_FRAME,
    })
}

/// Every valid anchor of a replay, in order.
pub fn build_all<R: Rng + ?Sized>(
    replay: &Replay,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<SequenceSample>, SamplerError> {
    cfg.validate()?;
    let last = replay.len().saturating_sub(cfg.target_range);
    (0..last)
        .map(|t| build_sequence(replay, t, cfg, rng))
        .collect()
}

/// Index batches over `samples` in which positives and negatives of `key`
/// alternate, so each batch is balanced to within one sample. Pools are
/// reshuffled and reused once exhausted, so the minority class repeats.
/// Emits `ceil(samples.len() / batch_size)` full batches.
pub fn balanced_batches<R: Rng + ?Sized>(
    samples: &[SequenceSample],
    batch_size: usize,
    key: Action,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>, SamplerError> {
    if batch_size == 0 {
        return Err(SamplerError::BatchSize);
    }
    if !key.is_binary() {
        return Err(SamplerError::NotBinary(key));
    }
    let (pos, neg): (Vec<usize>, Vec<usize>) =
        (0..samples.len()).partition(|&i| samples[i].is_positive(key));
    if pos.is_empty() {
        return Err(SamplerError::Unbalanceable {
            action: key,
            kind: "positive",
        });
    }
    if neg.is_empty() {
        return Err(SamplerError::Unbalanceable {
            action: key,
            kind: "negative",
        });
    }

    let mut pos = Pool::new(pos, rng);
    let mut neg = Pool::new(neg, rng);
    let n_batches = samples.len().div_ceil(batch_size);
    let batches = (0..n_batches)
        .map(|_| {
            (0..batch_size)
                .map(|j| {
                    if j % 2 == 0 {
                        pos.draw(rng)
                    } else {
                        neg.draw(rng)
                    }
                })
                .collect()
        })
        .collect();
    Ok(batches)
}

struct Pool {
    items: Vec<usize>,
    next: usize,
}

impl Pool {
    fn new<R: Rng + ?Sized>(mut items: Vec<usize>, rng: &mut R) -> Self {
        items.shuffle(rng);
        Self { items, next: 0 }
    }

    fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        if self.next == self.items.len() {
            self.items.shuffle(rng);
            self.next = 0;
        }
        self.next += 1;
        self.items[self.next - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::FrameRecord;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    fn replay(len: u32) -> Replay {
        let mut r = Replay::new("p", "m");
        r.frames = (0..len)
            .map(|tick| FrameRecord {
                tick,
                action: ActionVector {
                    mouse_x: tick as f32,
                    attack: tick % 2 == 1,
                    ..Default::default()
                },
                ..Default::default()
            })
            .collect();
        r
    }

    #[test]
    fn no_skipping_at_lambda_one() {
        assert_eq!(frame_offsets(15, 1.0).unwrap(), (1..15).collect::<Vec<_>>());
    }

    #[test]
    fn offsets_at_default_exponent() {
        assert_eq!(
            frame_offsets(15, 1.22).unwrap(),
            [1, 2, 3, 5, 7, 8, 10, 12, 14, 16, 18, 20, 22, 25]
        );
    }

    #[test]
    fn offsets_shortest_sequence() {
        assert_eq!(frame_offsets(2, 1.5).unwrap(), [1]);
    }

    #[test]
    fn exact_powers_are_not_floored_down() {
        let o = frame_offsets(10, 1.5).unwrap();
        assert_eq!(o[3], 8);
        assert_eq!(o[8], 27);
    }

    #[test]
    fn offset_argument_errors() {
        assert_eq!(frame_offsets(1, 1.2), Err(SamplerError::SequenceLength(1)));
        assert_eq!(frame_offsets(5, 1.6), Err(SamplerError::SkipExponent(1.6)));
        assert!(frame_offsets(5, 0.99).is_err());
        assert!(frame_offsets(5, f64::NAN).is_err());
    }

    #[test]
    fn sequence_at_thirty() {
        let s = build_sequence(&replay(40), 30, &SamplerConfig::default(), &mut rng()).unwrap();
        assert_eq!(
            s.frame_indices,
            [5, 8, 10, 12, 14, 16, 18, 20, 22, 23, 25, 27, 28, 29, 30]
        );
        assert_eq!(s.channel_spec.channels, 5);
    }

    #[test]
    fn sequence_clamps_at_start() {
        let s = build_sequence(&replay(40), 0, &SamplerConfig::default(), &mut rng()).unwrap();
        assert_eq!(s.frame_indices, vec![0; 15]);
    }

    #[test]
    fn sequence_needs_target_window() {
        let r = replay(40);
        let err = build_sequence(&r, 38, &SamplerConfig::default(), &mut rng()).unwrap_err();
        assert!(matches!(err, SamplerError::TargetWindow { .. }));
        assert!(build_sequence(&r, 37, &SamplerConfig::default(), &mut rng()).is_ok());
    }

    #[test]
    fn average_of_two() {
        let labels = vec![
            ActionVector::default(),
            ActionVector {
                mouse_x: 3.0,
                attack: true,
                ..Default::default()
            },
            ActionVector {
                mouse_x: -1.0,
                attack: false,
                ..Default::default()
            },
        ];
        let t = average_target(&labels, 0, 2).unwrap();
        assert_eq!(t.attack, 0.5);
        assert_eq!(t.mouse_x, 1.0);
        assert_eq!(
            average_target(&labels, 0, 1).unwrap(),
            labels[1].to_values()
        );
        assert!(average_target(&labels, 1, 2).is_err());
        assert_eq!(
            average_target(&labels, 0, 0),
            Err(SamplerError::TargetRange)
        );
    }

    #[test]
    fn one_next_and_one_random() {
        let r = replay(20);
        let mut cfg = SamplerConfig {
            target_method: TargetMethod::OneNext,
            target_range: 5,
            ..Default::default()
        };
        let labels = r.actions();
        assert_eq!(
            target_for(&labels, 3, &cfg, &mut rng()).unwrap(),
            labels[4].to_values()
        );
        cfg.target_method = TargetMethod::OneRandom;
        let mut g = rng();
        for _ in 0..50 {
            let t = target_for(&labels, 3, &cfg, &mut g).unwrap();
            assert!((4.0..=8.0).contains(&t.mouse_x));
        }
    }

    fn sample_with(attack: f64) -> SequenceSample {
        SequenceSample {
            anchor: 0,
            frame_indices: vec![0],
            target: ActionValues {
                attack,
                ..Default::default()
            },
            channel_spec: STACKED_FRAME,
        }
    }

    #[test]
    fn exact_balance() {
        let samples: Vec<_> = (0..20).map(|i| sample_with(f64::from(i % 2))).collect();
        let batches = balanced_batches(&samples, 4, Action::Attack, &mut rng()).unwrap();
        assert_eq!(batches.len(), 5);
        for b in &batches {
            let pos = b
                .iter()
                .filter(|&&i| samples[i].is_positive(Action::Attack))
                .count();
            assert_eq!(pos, 2);
        }
    }

    #[test]
    fn minority_is_repeated() {
        let mut samples: Vec<_> = (0..3).map(|_| sample_with(1.0)).collect();
        samples.extend((0..100).map(|_| sample_with(0.0)));
        let batches = balanced_batches(&samples, 8, Action::Attack, &mut rng()).unwrap();
        for b in &batches {
            assert_eq!(b.len(), 8);
            let pos = b.iter().filter(|&&i| i < 3).count();
            assert_eq!(pos, 4);
        }
    }

    #[test]
    fn half_counts_as_positive() {
        assert!(sample_with(0.5).is_positive(Action::Attack));
        assert!(!sample_with(0.49).is_positive(Action::Attack));
    }

    #[test]
    fn unbalanceable_inputs() {
        let samples: Vec<_> = (0..10).map(|_| sample_with(0.0)).collect();
        assert!(matches!(
            balanced_batches(&samples, 4, Action::Attack, &mut rng()),
            Err(SamplerError::Unbalanceable {
                kind: "positive",
                ..
            })
        ));
        assert_eq!(
            balanced_batches(&samples, 4, Action::MouseX, &mut rng()),
            Err(SamplerError::NotBinary(Action::MouseX))
        );
        assert_eq!(
            balanced_batches(&samples, 0, Action::Attack, &mut rng()),
            Err(SamplerError::BatchSize)
        );
    }

    #[test]
    fn build_all_covers_valid_anchors() {
        let r = replay(10);
        let all = build_all(&r, &SamplerConfig::default(), &mut rng()).unwrap();
        assert_eq!(all.len(), 8);
        assert_eq!(all.last().unwrap().anchor, 7);
    }
}

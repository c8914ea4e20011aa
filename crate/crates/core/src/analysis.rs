//! Behavioural analysis: where a player spends time (occupancy heatmaps) and
//! how they move the camera (turn-rate distributions of orders 1–3, their
//! Gaussian fits, and 1-D Wasserstein distances between them).

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::replay::Replay;

pub const DEFAULT_MASK_THRESHOLD: f64 = 0.005;
pub const DEFAULT_BIN_COUNT: usize = 61;
/// Turn deltas of the discrete-action agents saturate at this value.
pub const TURN_EXTREME: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("non-finite position at index {0}")]
    NonFinitePosition(usize),
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("order must be 1, 2 or 3 (got {0})")]
    Order(u8),
    #[error("need at least {needed} frames for order {order}, have {have}")]
    TooShort {
        order: u8,
        needed: usize,
        have: usize,
    },
    #[error("empty distribution")]
    Empty,
    #[error("need at least 2 samples to fit a Gaussian, have {0}")]
    TooFewSamples(usize),
    #[error("invalid histogram range ({lo}, {hi}) or bin count {bins}")]
    HistogramRange { lo: f64, hi: f64, bins: usize },
    #[error("outline line {line}: {reason}")]
    Outline { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: (f64, f64),
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
}

impl GridSpec {
    /// Smallest grid of `cell_size` cells covering every position, with the
    /// origin snapped down to a cell multiple.
    pub fn covering(positions: &[(f64, f64)], cell_size: f64) -> Result<Self, AnalysisError> {
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(AnalysisError::Grid(format!(
                "cell_size {cell_size} must be positive"
            )));
        }
        let first = positions.first().ok_or(AnalysisError::Empty)?;
        let (mut lo, mut hi) = (*first, *first);
        for (i, &(x, y)) in positions.iter().enumerate() {
            if !(x.is_finite() && y.is_finite()) {
                return Err(AnalysisError::NonFinitePosition(i));
            }
            lo = (lo.0.min(x), lo.1.min(y));
            hi = (hi.0.max(x), hi.1.max(y));
        }
        let origin = (
            (lo.0 / cell_size).floor() * cell_size,
            (lo.1 / cell_size).floor() * cell_size,
        );
        let cells = |span: f64| ((span / cell_size).floor() as usize) + 1;
        Ok(Self {
            origin,
            cell_size,
            width: cells(hi.0 - origin.0),
            height: cells(hi.1 - origin.1),
        })
    }

    fn validate(&self) -> Result<(), AnalysisError> {
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(AnalysisError::Grid(format!(
                "cell_size {} must be positive",
                self.cell_size
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(AnalysisError::Grid(
                "width and height must be positive".into(),
            ));
        }
        if !(self.origin.0.is_finite() && self.origin.1.is_finite()) {
            return Err(AnalysisError::Grid("origin must be finite".into()));
        }
        Ok(())
    }

    /// Row-major cell index of a position, if it lies on the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let cx = ((x - self.origin.0) / self.cell_size).floor();
        let cy = ((y - self.origin.1) / self.cell_size).floor();
        if cx < 0.0 || cy < 0.0 || cx >= self.width as f64 || cy >= self.height as f64 {
            return None;
        }
        Some(cy as usize * self.width + cx as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub spec: GridSpec,
    /// Row-major, `height` rows of `width` cells; row 0 is the minimum y.
    pub counts: Vec<u64>,
    /// Cells below this fraction of the busiest cell are hidden by [`masked`](Self::masked).
    pub mask_threshold: f64,
    pub in_bounds: u64,
    pub out_of_bounds: u64,
}

pub fn occupancy_heatmap(
    positions: &[(f64, f64)],
    spec: GridSpec,
    mask_threshold: f64,
) -> Result<OccupancyGrid, AnalysisError> {
    spec.validate()?;
    if !(mask_threshold.is_finite() && mask_threshold >= 0.0) {
        return Err(AnalysisError::Grid(format!(
            "mask_threshold {mask_threshold} must be non-negative"
        )));
    }
    let mut counts = vec![0u64; spec.width * spec.height];
    let (mut inside, mut outside) = (0, 0);
    for (i, &(x, y)) in positions.iter().enumerate() {
        if !(x.is_finite() && y.is_finite()) {
            return Err(AnalysisError::NonFinitePosition(i));
        }
        match spec.cell_of(x, y) {
            Some(c) => {
                counts[c] += 1;
                inside += 1;
            }
            None => outside += 1,
        }
    }
    Ok(OccupancyGrid {
        spec,
        counts,
        mask_threshold,
        in_bounds: inside,
        out_of_bounds: outside,
    })
}

impl OccupancyGrid {
    pub fn get(&self, cx: usize, cy: usize) -> u64 {
        self.counts[cy * self.spec.width + cx]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn max(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Counts with rarely visited cells zeroed.
    pub fn masked(&self) -> Vec<u64> {
        let cutoff = self.mask_threshold * self.max() as f64;
        self.counts
            .iter()
            .map(|&c| if (c as f64) < cutoff { 0 } else { c })
            .collect()
    }

    /// Masked counts as CSV, one grid row per line, top row = maximum y.
    pub fn to_csv(&self) -> String {
        let masked = self.masked();
        let mut out = String::new();
        for row in (0..self.spec.height).rev() {
            let cells = &masked[row * self.spec.width..(row + 1) * self.spec.width];
            let line: Vec<String> = cells.iter().map(u64::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(csv: &str, spec: GridSpec) -> Result<Vec<u64>, AnalysisError> {
        let rows: Vec<&str> = csv.lines().filter(|l| !l.trim().is_empty()).collect();
        if rows.len() != spec.height {
            return Err(AnalysisError::Grid(format!(
                "expected {} rows, found {}",
                spec.height,
                rows.len()
            )));
        }
        let mut counts = vec![0; spec.width * spec.height];
        for (r, line) in rows.iter().enumerate() {
            let row = spec.height - 1 - r;
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != spec.width {
                return Err(AnalysisError::Grid(format!(
                    "row {r} has {} cells",
                    cells.len()
                )));
            }
            for (c, v) in cells.iter().enumerate() {
                counts[row * spec.width + c] = v
                    .trim()
                    .parse()
                    .map_err(|_| AnalysisError::Grid(format!("bad count `{v}`")))?;
            }
        }
        Ok(counts)
    }

    /// Grayscale SVG (darker = more visits) with an optional wall outline.
    pub fn to_svg(&self, outline: Option<&[(f64, f64)]>) -> String {
        let masked = self.masked();
        let max = masked.iter().copied().max().unwrap_or(0).max(1) as f64;
        let s = self.spec.cell_size;
        let (w, h) = (self.spec.width as f64 * s, self.spec.height as f64 * s);
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w} {h}" width="{}" height="{}">"#,
            self.spec.width * 4,
            self.spec.height * 4
        );
        let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        for cy in 0..self.spec.height {
            for cx in 0..self.spec.width {
                let c = masked[cy * self.spec.width + cx];
                if c == 0 {
                    continue;
                }
                let shade = 255 - (255.0 * c as f64 / max).round() as u8;
                // SVG y grows downwards; flip so larger map y is drawn higher
                let y = h - (cy + 1) as f64 * s;
                let _ = writeln!(
                    out,
                    r#"<rect x="{}" y="{y}" width="{s}" height="{s}" fill="rgb({shade},{shade},{shade})"/>"#,
                    cx as f64 * s
                );
            }
        }
        if let Some(points) = outline.filter(|p| p.len() >= 2) {
            let pts: Vec<String> = points
                .iter()
                .map(|&(x, y)| {
                    format!(
                        "{},{}",
                        x - self.spec.origin.0,
                        h - (y - self.spec.origin.1)
                    )
                })
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="black" stroke-width="{}"/>"#,
                pts.join(" "),
                s / 4.0
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Parses a map outline: one `x,y` vertex per line, `#` comments allowed.
pub fn parse_outline(text: &str) -> Result<Vec<(f64, f64)>, AnalysisError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: &str| AnalysisError::Outline {
            line: i + 1,
            reason: reason.to_string(),
        };
        let (x, y) = line.split_once(',').ok_or_else(|| err("expected `x,y`"))?;
        let x: f64 = x.trim().parse().map_err(|_| err("bad x"))?;
        let y: f64 = y.trim().parse().map_err(|_| err("bad y"))?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(err("non-finite vertex"));
        }
        out.push((x, y));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraAxis {
    /// Horizontal turning (`mouse_x`).
    #[default]
    Turn,
    /// Vertical look (`mouse_y`).
    Look,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    samples: Vec<f64>,
    order: u8,
}

impl EmpiricalDistribution {
    pub fn new(samples: Vec<f64>, order: u8) -> Result<Self, AnalysisError> {
        check_order(order)?;
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(AnalysisError::NonFiniteSample(i));
        }
        Ok(Self { samples, order })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|x| x + c).collect(),
            order: self.order,
        }
    }
}

fn check_order(order: u8) -> Result<(), AnalysisError> {
    if (1..=3).contains(&order) {
        Ok(())
    } else {
        Err(AnalysisError::Order(order))
    }
}

/// Order 1 is the per-frame delta itself (angular velocity); each further
/// order is the first difference of the previous one.
pub fn camera_series_from_deltas(
    deltas: &[f64],
    order: u8,
) -> Result<EmpiricalDistribution, AnalysisError> {
    check_order(order)?;
    let needed = usize::from(order);
    if deltas.len() < needed {
        return Err(AnalysisError::TooShort {
            order,
            needed,
            have: deltas.len(),
        });
    }
    let mut series = deltas.to_vec();
    for _ in 1..order {
        series = series.windows(2).map(|w| w[1] - w[0]).collect();
    }
    EmpiricalDistribution::new(series, order)
}

pub fn camera_series(
    replay: &Replay,
    order: u8,
    axis: CameraAxis,
) -> Result<EmpiricalDistribution, AnalysisError> {
    let deltas: Vec<f64> = replay
        .frames
        .iter()
        .map(|f| {
            f64::from(match axis {
                CameraAxis::Turn => f.action.mouse_x,
                CameraAxis::Look => f.action.mouse_y,
            })
        })
        .collect();
    camera_series_from_deltas(&deltas, order)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bin_count + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lo,hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", self.edges[i], self.edges[i + 1], c);
        }
        out
    }

    pub fn from_csv(csv: &str) -> Result<Self, AnalysisError> {
        let bad = |line: usize| AnalysisError::Grid(format!("bad histogram row {line}"));
        let mut edges = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in csv.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(bad(i));
            }
            let lo: f64 = f[0].parse().map_err(|_| bad(i))?;
            let hi: f64 = f[1].parse().map_err(|_| bad(i))?;
            if edges.is_empty() {
                edges.push(lo);
            }
            edges.push(hi);
            counts.push(f[2].parse().map_err(|_| bad(i))?);
        }
        Ok(Self { edges, counts })
    }
}

/// Default histogram range per order: ±15 for turn rate, doubling for each
/// further derivative.
pub fn default_range(order: u8) -> (f64, f64) {
    let half = TURN_EXTREME * f64::from(1u32 << order.saturating_sub(1).min(2));
    (-half, half)
}

/// Equal-width histogram; samples outside `range` land in the end bins.
pub fn histogram(
    dist: &EmpiricalDistribution,
    bin_count: usize,
    range: (f64, f64),
) -> Result<Histogram, AnalysisError> {
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi && bin_count >= 1) {
        return Err(AnalysisError::HistogramRange {
            lo,
            hi,
            bins: bin_count,
        });
    }
    if dist.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let width = (hi - lo) / bin_count as f64;
    let edges = (0..=bin_count)
        .map(|i| {
            if i == bin_count {
                hi
            } else {
                lo + width * i as f64
            }
        })
        .collect();
    let mut counts = vec![0u64; bin_count];
    for &x in &dist.samples {
        let b = ((x - lo) / width).floor();
        let b = if b < 0.0 {
            0
        } else {
            (b as usize).min(bin_count - 1)
        };
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mean: f64,
    pub std: f64,
}

/// Sample mean and population standard deviation.
pub fn fit_gaussian(dist: &EmpiricalDistribution) -> Result<GaussianFit, AnalysisError> {
    let n = dist.len();
    if n < 2 {
        return Err(AnalysisError::TooFewSamples(n));
    }
    let mean = dist.samples.iter().sum::<f64>() / n as f64;
    let var = dist
        .samples
        .iter()
        .map(|x| (x - mean) * (x - mean))
        .sum::<f64>()
        / n as f64;
    Ok(GaussianFit {
        mean,
        std: var.sqrt(),
    })
}

/// Exact W1 between two empirical distributions: the integral of
/// |F_a - F_b| over the merged support. Sample sizes may differ.
pub fn wasserstein1(
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
) -> Result<f64, AnalysisError> {
    if a.is_empty() || b.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut xs = a.samples.clone();
    let mut ys = b.samples.clone();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (na, nb) = (xs.len() as u128, ys.len() as u128);

    // The CDFs are step functions; between consecutive merged points the
    // difference is |i/na - j/nb| = |i*nb - j*na| / (na*nb).
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = xs[0].min(ys[0]);
    let mut acc = 0.0;
    while i < xs.len() || j < ys.len() {
        let next = match (xs.get(i), ys.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        let gap = (i as u128 * nb).abs_diff(j as u128 * na);
        acc += gap as f64 * (next - prev);
        while i < xs.len() && xs[i] == next {
            i += 1;
        }
        while j < ys.len() && ys[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(acc / (na * nb) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraProfile {
    /// Narrow, zero-centred turning.
    HumanLike,
    /// Wide turning with heavy mass at the ±15 extremes.
    RlLike,
}

impl std::str::FromStr for CameraProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "human_like" => Ok(Self::HumanLike),
            "rl_like" => Ok(Self::RlLike),
            other => Err(format!("unknown profile `{other}`")),
        }
    }
}

const HUMAN_STD: f64 = 1.5;
const RL_CORE_STD: f64 = 6.0;
const RL_EXTREME_SHARE: f64 = 0.6;

/// Synthetic order-1 turn stream for a given behaviour profile.
pub fn synth_camera_stream<R: Rng + ?Sized>(
    profile: CameraProfile,
    n: usize,
    rng: &mut R,
) -> EmpiricalDistribution {
    let human = Normal::new(0.0, HUMAN_STD).expect("valid std");
    let core = Normal::new(0.0, RL_CORE_STD).expect("valid std");
    let samples = (0..n)
        .map(|_| match profile {
            CameraProfile::HumanLike => human.sample(rng),
            CameraProfile::RlLike => {
                if rng.random::<f64>() < RL_EXTREME_SHARE {
                    if rng.random::<bool>() {
                        TURN_EXTREME
                    } else {
                        -TURN_EXTREME
                    }
                } else {
                    core.sample(rng).clamp(-TURN_EXTREME, TURN_EXTREME)
                }
            }
        })
        .collect();
    EmpiricalDistribution { samples, order: 1 }
}

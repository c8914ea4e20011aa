use std::collections::HashMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mimic_core::analysis::{self, EmpiricalDistribution};
use mimic_core::loss::{self, LossConfig};
use mimic_core::policy::{self, Example};
use mimic_core::replay::{self, ActionVector, FrameRecord};
use mimic_core::sampler::{self, SamplerConfig};
use mimic_core::store::{self as core_store, PlayerSummary, RankMetric};
use mimic_core::ActionValues;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn dist(samples: Vec<f64>, order: u8) -> PyResult<EmpiricalDistribution> {
    EmpiricalDistribution::new(samples, order).map_err(value_err)
}

fn actions_from(map: HashMap<String, f64>) -> PyResult<ActionValues> {
    ActionValues::from_map(&map).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (n, skip_exponent=1.22))]
fn frame_offsets(n: usize, skip_exponent: f64) -> PyResult<Vec<usize>> {
    sampler::frame_offsets(n, skip_exponent).map_err(value_err)
}

#[pyfunction]
fn sign_mask(prediction: f64, label: f64) -> PyResult<f64> {
    loss::sign_mask(prediction, label).map_err(value_err)
}

/// Returns `(loss, d loss / d prediction)`.
#[pyfunction]
fn mouse_loss(prediction: f64, label: f64) -> PyResult<(f64, f64)> {
    let v = loss::mouse_loss(prediction, label).map_err(value_err)?;
    Ok((v.loss, v.grad))
}

#[pyfunction]
fn bce_loss(prediction: f64, label: f64) -> PyResult<(f64, f64)> {
    let v = loss::bce_loss(prediction, label).map_err(value_err)?;
    Ok((v.loss, v.grad))
}

/// Weighted loss over all seven actions with the default weights; returns
/// `(total, components, gradients)`.
#[pyfunction]
fn combined_loss(
    predictions: HashMap<String, f64>,
    targets: HashMap<String, f64>,
) -> PyResult<(f64, HashMap<String, f64>, HashMap<String, f64>)> {
    let c = loss::combined_loss_map(&predictions, &targets, &LossConfig::default())
        .map_err(value_err)?;
    Ok((c.total, c.components.to_map(), c.gradients.to_map()))
}

#[pyfunction]
#[pyo3(signature = (epoch, base_lr=0.0002, warmup_epochs=500))]
fn warmup_lr(epoch: u64, base_lr: f64, warmup_epochs: u64) -> PyResult<f64> {
    let cfg = LossConfig {
        base_lr,
        warmup_epochs,
        ..LossConfig::default()
    };
    cfg.validate().map_err(value_err)?;
    Ok(loss::warmup_lr(epoch, &cfg))
}

#[pyfunction]
fn cnn_width(depth: u32) -> PyResult<u32> {
    policy::cnn_width(depth).map_err(value_err)
}

#[pyfunction]
fn convlstm_width(depth: u32) -> PyResult<u32> {
    policy::convlstm_width(depth).map_err(value_err)
}

#[pyfunction]
fn mlp_width(depth: u32) -> PyResult<u32> {
    policy::mlp_width(depth).map_err(value_err)
}

#[pyfunction]
fn camera_series(deltas: Vec<f64>, order: u8) -> PyResult<Vec<f64>> {
    Ok(analysis::camera_series_from_deltas(&deltas, order)
        .map_err(value_err)?
        .samples()
        .to_vec())
}

#[pyfunction]
fn fit_gaussian(samples: Vec<f64>) -> PyResult<(f64, f64)> {
    let fit = analysis::fit_gaussian(&dist(samples, 1)?).map_err(value_err)?;
    Ok((fit.mean, fit.std))
}

#[pyfunction]
#[pyo3(signature = (samples, bins=61, lo=-15.0, hi=15.0))]
fn histogram(samples: Vec<f64>, bins: usize, lo: f64, hi: f64) -> PyResult<(Vec<f64>, Vec<u64>)> {
    let h = analysis::histogram(&dist(samples, 1)?, bins, (lo, hi)).map_err(value_err)?;
    Ok((h.edges, h.counts))
}

#[pyfunction]
fn wasserstein1(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    analysis::wasserstein1(&dist(a, 1)?, &dist(b, 1)?).map_err(value_err)
}

#[pyclass(module = "mimic", from_py_object)]
#[derive(Clone)]
struct Replay {
    inner: replay::Replay,
}

#[pymethods]
impl Replay {
    #[new]
    #[pyo3(signature = (player_id, match_id, tick_rate=35))]
    fn new(player_id: String, match_id: String, tick_rate: u16) -> Self {
        let mut inner = replay::Replay::new(player_id, match_id);
        inner.tick_rate = tick_rate;
        Self { inner }
    }

    #[staticmethod]
    fn decode(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: replay::decode_replay(data).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: replay::read_replay_file(path).map_err(value_err)?,
        })
    }

    fn encode<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = replay::encode_replay(&self.inner).map_err(value_err)?;
        Ok(PyBytes::new(py, &bytes))
    }

    fn write(&self, path: &str) -> PyResult<()> {
        replay::write_replay_file(path, &self.inner).map_err(value_err)
    }

    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (tick, mouse_x, mouse_y, buttons=0, pos_x=0.0, pos_y=0.0, yaw=0.0, kills=0, deaths=0, damage=0))]
    fn add_frame(
        &mut self,
        tick: u32,
        mouse_x: f32,
        mouse_y: f32,
        buttons: u8,
        pos_x: f32,
        pos_y: f32,
        yaw: f32,
        kills: u16,
        deaths: u16,
        damage: u32,
    ) {
        self.inner.frames.push(FrameRecord {
            tick,
            action: ActionVector::with_buttons(mouse_x, mouse_y, buttons),
            pos_x,
            pos_y,
            yaw,
            kills,
            deaths,
            damage,
        });
    }

    /// Human-readable invariant violations; empty when valid.
    fn validate(&self) -> Vec<String> {
        replay::validate_replay(&self.inner)
            .into_iter()
            .map(|v| v.to_string())
            .collect()
    }

    #[getter]
    fn player_id(&self) -> String {
        self.inner.player_id.clone()
    }

    #[getter]
    fn match_id(&self) -> String {
        self.inner.match_id.clone()
    }

    #[getter]
    fn tick_rate(&self) -> u16 {
        self.inner.tick_rate
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn positions(&self) -> Vec<(f64, f64)> {
        self.inner.positions()
    }

    #[pyo3(signature = (order=1))]
    fn camera_series(&self, order: u8) -> PyResult<Vec<f64>> {
        Ok(
            analysis::camera_series(&self.inner, order, analysis::CameraAxis::Turn)
                .map_err(value_err)?
                .samples()
                .to_vec(),
        )
    }

    /// `(frame_indices, target)` for the sample anchored at `t`.
    #[pyo3(signature = (t, length=15, skip_exponent=1.22, target_range=2))]
    fn build_sequence(
        &self,
        t: usize,
        length: usize,
        skip_exponent: f64,
        target_range: usize,
    ) -> PyResult<(Vec<usize>, HashMap<String, f64>)> {
        let cfg = SamplerConfig {
            sequence_length: length,
            skip_exponent,
            target_range,
            ..SamplerConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sampler::build_sequence(&self.inner, t, &cfg, &mut rng).map_err(value_err)?;
        Ok((s.frame_indices, s.target.to_map()))
    }
}

#[pyclass(module = "mimic")]
struct SurrogatePolicy {
    inner: policy::SurrogatePolicy,
    loss: LossConfig,
}

#[pymethods]
impl SurrogatePolicy {
    #[new]
    #[pyo3(signature = (input_dim, hidden, seed=7, base_lr=0.0002, warmup_epochs=500))]
    fn new(
        input_dim: usize,
        hidden: Vec<usize>,
        seed: u64,
        base_lr: f64,
        warmup_epochs: u64,
    ) -> PyResult<Self> {
        let loss = LossConfig {
            base_lr,
            warmup_epochs,
            ..LossConfig::default()
        };
        loss.validate().map_err(value_err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            inner: policy::SurrogatePolicy::new(input_dim, &hidden, &mut rng),
            loss,
        })
    }

    #[staticmethod]
    fn from_checkpoint(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: policy::SurrogatePolicy::from_checkpoint(data).map_err(value_err)?,
            loss: LossConfig::default(),
        })
    }

    fn to_checkpoint<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_checkpoint())
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn forward(&self, features: Vec<f64>) -> PyResult<HashMap<String, f64>> {
        Ok(self.inner.forward(&features).map_err(value_err)?.to_map())
    }

    /// One gradient step; returns the loss before the step.
    fn train_step(
        &mut self,
        features: Vec<Vec<f64>>,
        targets: Vec<HashMap<String, f64>>,
        epoch: u64,
    ) -> PyResult<f64> {
        if features.len() != targets.len() {
            return Err(PyValueError::new_err(
                "features and targets differ in length",
            ));
        }
        let batch = features
            .into_iter()
            .zip(targets)
            .map(|(features, t)| {
                Ok(Example {
                    features,
                    target: actions_from(t)?,
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        self.inner
            .train_step(&batch, &self.loss, epoch)
            .map_err(value_err)
    }
}

fn summary_dict(s: PlayerSummary) -> HashMap<String, PyObjectLike> {
    HashMap::from([
        ("player_id".to_string(), PyObjectLike::Str(s.player_id)),
        ("mean_kills".to_string(), PyObjectLike::Float(s.mean_kills)),
        (
            "mean_deaths".to_string(),
            PyObjectLike::Float(s.mean_deaths),
        ),
        ("kd_ratio".to_string(), PyObjectLike::Float(s.kd_ratio)),
        ("win_rate".to_string(), PyObjectLike::Float(s.win_rate)),
        (
            "matches_played".to_string(),
            PyObjectLike::Int(i64::from(s.matches_played)),
        ),
    ])
}

#[derive(IntoPyObject)]
enum PyObjectLike {
    Str(String),
    Float(f64),
    Int(i64),
}

#[pyclass(module = "mimic")]
struct MatchStore {
    inner: core_store::MatchStore,
}

#[pymethods]
impl MatchStore {
    /// Opens a store directory, or an in-memory store when `path` is None.
    #[new]
    #[pyo3(signature = (path=None))]
    fn new(path: Option<&str>) -> PyResult<Self> {
        let inner = match path {
            Some(p) => core_store::MatchStore::open(p).map_err(value_err)?,
            None => core_store::MatchStore::in_memory(),
        };
        Ok(Self { inner })
    }

    #[getter]
    fn match_count(&self) -> usize {
        self.inner.match_count()
    }

    fn players(&self) -> Vec<String> {
        self.inner.players()
    }

    fn player_summary(&self, player_id: &str) -> PyResult<HashMap<String, PyObjectLike>> {
        Ok(summary_dict(
            self.inner.player_summary(player_id).map_err(value_err)?,
        ))
    }

    #[pyo3(signature = (metric="win_rate"))]
    fn rank_players(&self, metric: &str) -> PyResult<Vec<HashMap<String, PyObjectLike>>> {
        let metric: RankMetric = metric.parse().map_err(PyValueError::new_err)?;
        Ok(self
            .inner
            .rank_players(metric)
            .map_err(value_err)?
            .into_iter()
            .map(summary_dict)
            .collect())
    }
}

#[pymodule]
fn mimic(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(frame_offsets, m)?)?;
    m.add_function(wrap_pyfunction!(sign_mask, m)?)?;
    m.add_function(wrap_pyfunction!(mouse_loss, m)?)?;
    m.add_function(wrap_pyfunction!(bce_loss, m)?)?;
    m.add_function(wrap_pyfunction!(combined_loss, m)?)?;
    m.add_function(wrap_pyfunction!(warmup_lr, m)?)?;
    m.add_function(wrap_pyfunction!(cnn_width, m)?)?;
    m.add_function(wrap_pyfunction!(convlstm_width, m)?)?;
    m.add_function(wrap_pyfunction!(mlp_width, m)?)?;
    m.add_function(wrap_pyfunction!(camera_series, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(histogram, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein1, m)?)?;
    m.add_class::<Replay>()?;
    m.add_class::<SurrogatePolicy>()?;
    m.add_class::<MatchStore>()?;
    Ok(())
}

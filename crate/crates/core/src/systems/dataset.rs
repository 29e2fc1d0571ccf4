//! Trajectory datasets: generation, noise and JSON-lines storage.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{integrate, linspace, sample_initial_conditions, Method, PhaseState, SystemError, SystemSpec};

const GENERATION_TOLERANCE: f64 = 1e-10;
const MAX_RELATIVE_DRIFT: f64 = 1e-6;
const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Samples along one trajectory: times, states, true derivatives, clean energies.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub dz: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
}

impl Trajectory {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            t: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            dz: Vec::with_capacity(n),
            energy: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, t: f64, z: Vec<f64>, dz: Vec<f64>, energy: f64) {
        self.t.push(t);
        self.z.push(z);
        self.dz.push(dz);
        self.energy.push(energy);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn states(&self) -> Vec<PhaseState> {
        self.z.iter().map(|z| PhaseState::from_flat(z)).collect()
    }

    pub fn derivatives(&self) -> Vec<PhaseState> {
        self.dz.iter().map(|z| PhaseState::from_flat(z)).collect()
    }
}

/// Length of a generated trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeSpan {
    Fixed { t_end: f64 },
    /// Multiple of the initial state's nominal period.
    Periods { periods: f64 },
}

impl TimeSpan {
    pub fn resolve(&self, spec: &SystemSpec, z0: &[f64]) -> f64 {
        match *self {
            TimeSpan::Fixed { t_end } => t_end,
            TimeSpan::Periods { periods } => periods * spec.nominal_period(z0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub system: SystemSpec,
    pub train_trajectories: usize,
    pub test_trajectories: usize,
    pub samples: usize,
    pub span: TimeSpan,
    pub sigma2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: usize,
    pub test: usize,
}

/// Sidecar metadata. The JSONL file stores train trajectories first, then test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub system: SystemSpec,
    pub preset: String,
    pub seed: u64,
    pub sigma2: f64,
    pub split: Split,
    pub samples: usize,
    pub span: TimeSpan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub train: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

impl Dataset {
    pub fn system(&self) -> &SystemSpec {
        &self.meta.system
    }

    pub fn noise_sigma2(&self) -> f64 {
        self.meta.sigma2
    }

    pub fn seed(&self) -> u64 {
        self.meta.seed
    }
}

/// Stacks all samples of `trajs` into `(states, derivatives)` row matrices.
pub fn stack(trajs: &[Trajectory]) -> (Array2<f64>, Array2<f64>) {
    let n: usize = trajs.iter().map(Trajectory::len).sum();
    let d = trajs.iter().find_map(|t| t.z.first().map(Vec::len)).unwrap_or(0);
    let mut z = Array2::zeros((n, d));
    let mut dz = Array2::zeros((n, d));
    let rows = trajs.iter().flat_map(|t| t.z.iter().zip(&t.dz));
    for (r, (zi, dzi)) in rows.enumerate() {
        z.row_mut(r).assign(&ndarray::aview1(zi));
        dz.row_mut(r).assign(&ndarray::aview1(dzi));
    }
    (z, dz)
}

/// Adds i.i.d. `N(0, sigma2)` to every state and derivative component.
/// Times and energies are left untouched.
pub fn add_noise<R: Rng + ?Sized>(traj: &Trajectory, sigma2: f64, rng: &mut R) -> Trajectory {
    assert!(sigma2 >= 0.0, "variance must be nonnegative");
    let mut out = traj.clone();
    if sigma2 == 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, sigma2.sqrt()).expect("valid variance");
    for (z, dz) in out.z.iter_mut().zip(out.dz.iter_mut()) {
        for v in z.iter_mut().chain(dz.iter_mut()) {
            *v += normal.sample(rng);
        }
    }
    out
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One clean trajectory from a freshly sampled initial condition. Samples
/// whose integration fails or whose energy drifts are redrawn.
fn clean_trajectory(config: &DatasetConfig, rng: &mut ChaCha8Rng) -> Result<Trajectory, SystemError> {
    let spec = &config.system;
    let mut last_err = None;
    for _ in 0..MAX_ATTEMPTS {
        let z0 = sample_initial_conditions(spec, rng);
        let times = linspace(0.0, config.span.resolve(spec, &z0), config.samples);
        match integrate(spec, &z0, &times, Method::rk45(GENERATION_TOLERANCE)) {
            Ok(traj) => {
                let h0 = traj.energy[0];
                let drift = traj.energy.iter().map(|h| (h - h0).abs()).fold(0.0, f64::max);
                if drift <= MAX_RELATIVE_DRIFT * h0.abs().max(1e-12) {
                    return Ok(traj);
                }
                last_err = Some(SystemError::Integration {
                    t_last: *traj.t.last().unwrap(),
                    reason: format!("relative energy drift {:e}", drift / h0.abs()),
                });
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// Generates the dataset deterministically from `seed`: trajectory `i` draws its
/// initial condition from stream `2i` and its noise from stream `2i + 1`.
pub fn build_dataset(config: &DatasetConfig, preset: &str, seed: u64) -> Result<Dataset, SystemError> {
    config.system.validate()?;
    if config.samples == 0 {
        return Err(SystemError::InvalidSpec("trajectories need at least one sample".into()));
    }
    let total = config.train_trajectories + config.test_trajectories;
    let mut trajs = Vec::with_capacity(total);
    for i in 0..total as u64 {
        let clean = clean_trajectory(config, &mut stream_rng(seed, 2 * i))?;
        trajs.push(add_noise(&clean, config.sigma2, &mut stream_rng(seed, 2 * i + 1)));
    }
    let test = trajs.split_off(config.train_trajectories);
    Ok(Dataset {
        meta: DatasetMeta {
            system: config.system.clone(),
            preset: preset.to_string(),
            seed,
            sigma2: config.sigma2,
            split: Split {
                train: config.train_trajectories,
                test: config.test_trajectories,
            },
            samples: config.samples,
            span: config.span,
        },
        train: trajs,
        test,
    })
}

#[derive(Serialize, Deserialize)]
struct Record {
    t: Vec<f64>,
    q: Vec<Vec<f64>>,
    p: Vec<Vec<f64>>,
    dq: Vec<Vec<f64>>,
    dp: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    h: Vec<f64>,
}

fn halves(rows: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    rows.iter()
        .map(|r| {
            let (a, b) = r.split_at(r.len() / 2);
            (a.to_vec(), b.to_vec())
        })
        .unzip()
}

fn join(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    a.into_iter()
        .zip(b)
        .map(|(mut a, b)| {
            a.extend(b);
            a
        })
        .collect()
}

/// Sidecar path for a dataset file: `x.jsonl` -> `x.meta.json`.
pub fn meta_path(data: &Path) -> PathBuf {
    data.with_extension("meta.json")
}

/// Writes `<dir>/<preset>.jsonl` and its sidecar, returning both paths.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<(PathBuf, PathBuf), DatasetError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let data = dir.join(format!("{}.jsonl", dataset.meta.preset));
    let meta = meta_path(&data);
    let mut w = BufWriter::new(fs::File::create(&data).map_err(io(&data))?);
    for traj in dataset.train.iter().chain(&dataset.test) {
        let (q, p) = halves(&traj.z);
        let (dq, dp) = halves(&traj.dz);
        let rec = Record {
            t: traj.t.clone(),
            q,
            p,
            dq,
            dp,
            h: traj.energy.clone(),
        };
        serde_json::to_writer(&mut w, &rec).expect("records serialize");
        w.write_all(b"\n").map_err(io(&data))?;
    }
    w.flush().map_err(io(&data))?;
    let mut text = serde_json::to_string_pretty(&dataset.meta).expect("metadata serializes");
    text.push('\n');
    fs::write(&meta, text).map_err(io(&meta))?;
    Ok((data, meta))
}

/// Reads a dataset written by [`write_dataset`] from its `.jsonl` path.
pub fn read_dataset(data: &Path) -> Result<Dataset, DatasetError> {
    let meta_file = meta_path(data);
    let format = |path: &Path, line: usize, message: String| DatasetError::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let text = fs::read_to_string(&meta_file).map_err(|source| DatasetError::Io {
        path: meta_file.clone(),
        source,
    })?;
    let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| format(&meta_file, e.line(), e.to_string()))?;
    meta.system
        .validate()
        .map_err(|e| format(&meta_file, 0, e.to_string()))?;
    let file = fs::File::open(data).map_err(|source| DatasetError::Io {
        path: data.to_path_buf(),
        source,
    })?;
    let d = meta.system.dim();
    let mut trajs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io {
            path: data.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| format(data, i + 1, e.to_string()))?;
        let n = rec.t.len();
        let shapes_ok = [&rec.q, &rec.p, &rec.dq, &rec.dp]
            .iter()
            .all(|rows| rows.len() == n && rows.iter().all(|r| r.len() == d))
            && rec.h.len() == n;
        if !shapes_ok {
            return Err(format(data, i + 1, format!("arrays must have {n} rows of width {d}")));
        }
        if rec.t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(format(data, i + 1, "times must be strictly increasing".into()));
        }
        trajs.push(Trajectory {
            t: rec.t,
            z: join(rec.q, rec.p),
            dz: join(rec.dq, rec.dp),
            energy: rec.h,
        });
    }
    if trajs.len() != meta.split.train + meta.split.test {
        return Err(format(
            data,
            trajs.len(),
            format!(
                "metadata declares {} trajectories, file has {}",
                meta.split.train + meta.split.test,
                trajs.len()
            ),
        ));
    }
    let test = trajs.split_off(meta.split.train);
    Ok(Dataset {
        meta,
        train: trajs,
        test,
    })
}

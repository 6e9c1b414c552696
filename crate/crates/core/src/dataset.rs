//! Trajectory container, on-disk format and train/test splitting.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use crate::manifest::Manifest;
use crate::manifest::{decode_header, encode_header, f64s_to_le, le_to_f64s, sha256_hex, HeaderError};

pub const DATASET_MAGIC: &str = "bracketlab-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum System {
    Pendulum,
    Couette,
    /// Anything else (tests, user data); no analytic energy available.
    Custom,
}

impl System {
    pub fn as_str(self) -> &'static str {
        match self {
            System::Pendulum => "pendulum",
            System::Couette => "couette",
            System::Custom => "custom",
        }
    }

    pub fn state_dim(self) -> Option<usize> {
        match self {
            System::Pendulum => Some(10),
            System::Couette => Some(5),
            System::Custom => None,
        }
    }

    /// Names of the state components, used as metric labels.
    pub fn variable_names(self, dim: usize) -> Vec<String> {
        let fixed: &[&str] = match self {
            System::Pendulum => &["q1x", "q1y", "q2x", "q2y", "p1x", "p1y", "p2x", "p2y", "s1", "s2"],
            System::Couette => &["qx", "qy", "v", "e", "tau"],
            System::Custom => &[],
        };
        if fixed.len() == dim {
            fixed.iter().map(|s| s.to_string()).collect()
        } else {
            (0..dim).map(|i| format!("z{i}")).collect()
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for System {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pendulum" => Ok(System::Pendulum),
            "couette" => Ok(System::Couette),
            "custom" => Ok(System::Custom),
            other => Err(DatasetError::Invalid(format!("unknown system `{other}`"))),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("dataset checksum mismatch (manifest {expected}, payload {found})")]
    Checksum { expected: String, found: String },
    #[error("unsupported dataset version {found} (this build reads version {DATASET_VERSION})")]
    Version { found: String },
    #[error("truncated dataset payload: {got} bytes, expected {expected}")]
    Truncated { expected: usize, got: usize },
    #[error("malformed dataset header: {0}")]
    Header(#[from] HeaderError),
    #[error("dataset manifest is missing `{0}`")]
    MissingKey(&'static str),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `N_traj × N_T × D` float64 array plus metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    data: Vec<f64>,
    n_traj: usize,
    n_t: usize,
    dim: usize,
    dt: f64,
    system: System,
    /// Generator parameters, seed and design decisions.
    pub manifest: Manifest,
}

impl Dataset {
    /// `data` is laid out `[traj][time][component]`.
    pub fn new(
        data: Vec<f64>,
        shape: (usize, usize, usize),
        dt: f64,
        system: System,
        manifest: Manifest,
    ) -> Result<Self, DatasetError> {
        let (n_traj, n_t, dim) = shape;
        if n_traj == 0 || dim == 0 {
            return Err(DatasetError::Invalid(format!("empty shape {n_traj}x{n_t}x{dim}")));
        }
        if n_t < 2 {
            return Err(DatasetError::Invalid(format!("need at least 2 snapshots, got {n_t}")));
        }
        if data.len() != n_traj * n_t * dim {
            return Err(DatasetError::Invalid(format!("{} values do not fill shape {n_traj}x{n_t}x{dim}", data.len())));
        }
        if let Some(d) = system.state_dim() {
            if d != dim {
                return Err(DatasetError::Invalid(format!("{system} states have {d} components, got {dim}")));
            }
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(DatasetError::Invalid(format!("dt must be positive, got {dt}")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            let (tr, rest) = (i / (n_t * dim), i % (n_t * dim));
            return Err(DatasetError::Invalid(format!(
                "non-finite value at trajectory {tr}, snapshot {}, component {}",
                rest / dim,
                rest % dim
            )));
        }
        Ok(Dataset { data, n_traj, n_t, dim, dt, system, manifest })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_traj, self.n_t, self.dim)
    }

    pub fn n_traj(&self) -> usize {
        self.n_traj
    }

    pub fn n_snapshots(&self) -> usize {
        self.n_t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn system(&self) -> System {
        self.system
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Flattened `[time][component]` block of one trajectory.
    pub fn trajectory(&self, i: usize) -> &[f64] {
        let n = self.n_t * self.dim;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn state(&self, traj: usize, t: usize) -> &[f64] {
        let at = (traj * self.n_t + t) * self.dim;
        &self.data[at..at + self.dim]
    }

    /// New dataset with the given trajectories, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset, DatasetError> {
        let mut data = Vec::with_capacity(indices.len() * self.n_t * self.dim);
        for &i in indices {
            if i >= self.n_traj {
                return Err(DatasetError::Invalid(format!("trajectory {i} out of range ({})", self.n_traj)));
            }
            data.extend_from_slice(self.trajectory(i));
        }
        Dataset::new(data, (indices.len(), self.n_t, self.dim), self.dt, self.system, self.manifest.clone())
    }

    /// Keep the first `n_t` snapshots of every trajectory.
    pub fn truncate(&self, n_t: usize) -> Result<Dataset, DatasetError> {
        if n_t > self.n_t {
            return Err(DatasetError::Invalid(format!("cannot keep {n_t} of {} snapshots", self.n_t)));
        }
        let mut data = Vec::with_capacity(self.n_traj * n_t * self.dim);
        for i in 0..self.n_traj {
            data.extend_from_slice(&self.trajectory(i)[..n_t * self.dim]);
        }
        Dataset::new(data, (self.n_traj, n_t, self.dim), self.dt, self.system, self.manifest.clone())
    }

    /// Header manifest as written to disk.
    pub fn header(&self) -> Manifest {
        let mut m = Manifest::new();
        for (k, v) in &self.manifest {
            m.insert(format!("meta.{k}"), v.clone());
        }
        m.insert("version".into(), DATASET_VERSION.to_string());
        m.insert("shape".into(), format!("{}x{}x{}", self.n_traj, self.n_t, self.dim));
        m.insert("dt".into(), format_f64(self.dt));
        m.insert("system".into(), self.system.as_str().into());
        m.insert("layout".into(), "traj,time,component;f64le".into());
        m.insert("sha256".into(), sha256_hex(&f64s_to_le(&self.data)));
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = f64s_to_le(&self.data);
        let mut out = encode_header(DATASET_MAGIC, &self.header());
        out.extend(payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatasetError> {
        let (header, payload) = decode_header(DATASET_MAGIC, bytes)?;
        let get = |k: &'static str| header.get(k).ok_or(DatasetError::MissingKey(k));
        let version = get("version")?;
        if version != &DATASET_VERSION.to_string() {
            return Err(DatasetError::Version { found: version.clone() });
        }
        let shape = parse_shape(get("shape")?)?;
        let expected = shape.0 * shape.1 * shape.2 * 8;
        if payload.len() < expected {
            return Err(DatasetError::Truncated { expected, got: payload.len() });
        }
        if payload.len() > expected {
            return Err(DatasetError::Invalid(format!("{} trailing bytes after payload", payload.len() - expected)));
        }
        let found = sha256_hex(payload);
        let sum = get("sha256")?;
        if &found != sum {
            return Err(DatasetError::Checksum { expected: sum.clone(), found });
        }
        let dt: f64 = get("dt")?.parse().map_err(|_| DatasetError::Invalid("bad dt".into()))?;
        let system: System = get("system")?.parse()?;
        let manifest =
            header.iter().filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.clone()))).collect();
        Dataset::new(le_to_f64s(payload), shape, dt, system, manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Dataset::from_bytes(&std::fs::read(path)?)
    }
}

/// Read just the header of a dataset file (what `inspect` prints).
pub fn read_header(bytes: &[u8]) -> Result<Manifest, DatasetError> {
    Ok(decode_header(DATASET_MAGIC, bytes)?.0)
}

fn parse_shape(s: &str) -> Result<(usize, usize, usize), DatasetError> {
    let bad = || DatasetError::Invalid(format!("bad shape `{s}`"));
    let parts: Vec<usize> = s.split('x').map(|p| p.parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(bad()),
    }
}

/// Shortest representation that parses back to the same bits.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_fraction: 0.8, seed: 0 }
    }
}

/// Seeded shuffle; the first `⌊fraction·n⌋` go to training. Both index lists
/// are returned sorted.
pub fn split(n: usize, spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if n < 2 {
        return Err(DatasetError::Invalid(format!("cannot split {n} trajectories")));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(DatasetError::Invalid(format!("train fraction {} outside (0, 1)", spec.train_fraction)));
    }
    let n_train = (spec.train_fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(DatasetError::Invalid(format!(
            "fraction {} of {n} leaves an empty partition",
            spec.train_fraction
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

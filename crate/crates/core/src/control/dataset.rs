use std::io::{BufRead, Read, Write};

use super::{ControlProblem, NoiseModel};
use crate::error::{AdrlError, Result};
use crate::parallel::map_indexed;
use crate::rng::{stream, Purpose};

/// One noise sequence ξ_1..ξ_T, stored flat (`T × d`, row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    pub path_id: u64,
    horizon: usize,
    dim: usize,
    entries: Vec<f64>,
}

impl NoisePath {
    pub fn new(path_id: u64, horizon: usize, dim: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != horizon * dim {
            return Err(AdrlError::config(format!(
                "noise path has {} entries, expected {horizon}×{dim}",
                entries.len()
            )));
        }
        Ok(NoisePath { path_id, horizon, dim, entries })
    }

    pub fn from_steps(path_id: u64, steps: &[Vec<f64>]) -> Result<Self> {
        let dim = steps.first().map_or(0, |s| s.len());
        if steps.iter().any(|s| s.len() != dim) {
            return Err(AdrlError::config("noise steps differ in dimension"));
        }
        Self::new(path_id, steps.len(), dim, steps.concat())
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn noise_dim(&self) -> usize {
        self.dim
    }

    /// Noise consumed by the stage-`t` transition, i.e. ξ_{t+1}.
    #[inline]
    pub fn noise_at(&self, t: usize) -> &[f64] {
        &self.entries[t * self.dim..(t + 1) * self.dim]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

/// Training/evaluation set of noise paths, partitioned into consecutive
/// minibatches. Enumerated datasets carry exact path probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDataset {
    pub seed: u64,
    horizon: usize,
    dim: usize,
    batch_size: usize,
    paths: Vec<NoisePath>,
    weights: Option<Vec<f64>>,
}

impl NoiseDataset {
    pub fn new(
        seed: u64,
        horizon: usize,
        dim: usize,
        batch_size: usize,
        paths: Vec<NoisePath>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        if batch_size == 0 || paths.len() % batch_size != 0 {
            return Err(AdrlError::config(format!(
                "dataset of {} paths cannot be split into batches of {batch_size}",
                paths.len()
            )));
        }
        if paths.iter().any(|p| p.horizon != horizon || p.dim != dim) {
            return Err(AdrlError::config("paths do not share the dataset shape"));
        }
        if let Some(w) = &weights {
            if w.len() != paths.len() {
                return Err(AdrlError::config("one weight per path required"));
            }
        }
        Ok(NoiseDataset { seed, horizon, dim, batch_size, paths, weights })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn noise_dim(&self) -> usize {
        self.dim
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn paths(&self) -> &[NoisePath] {
        &self.paths
    }

    /// Exact path probabilities for enumerated datasets.
    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn num_batches(&self) -> usize {
        self.paths.len() / self.batch_size
    }

    /// Index set K_b (0-based `b`).
    pub fn batch(&self, b: usize) -> std::ops::Range<usize> {
        let start = b * self.batch_size;
        start..start + self.batch_size
    }

    /// Comma-separated layout: a `#` header line with `count, T, d, seed`,
    /// a column line, then one row per `(path_id, t)` with t = 1..T.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# count={} T={} d={} seed={}", self.len(), self.horizon, self.dim, self.seed)?;
        let cols: Vec<String> = (1..=self.dim).map(|j| format!("xi_{j}")).collect();
        writeln!(w, "path_id,t,{}", cols.join(","))?;
        for p in &self.paths {
            for t in 0..self.horizon {
                let vals: Vec<String> = p.noise_at(t).iter().map(|v| format!("{v:?}")).collect();
                writeln!(w, "{},{},{}", p.path_id, t + 1, vals.join(","))?;
            }
        }
        Ok(())
    }

    /// Reads the CSV layout back as one batch per path.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| AdrlError::config("empty dataset file"))??;
        let field = |name: &str| -> Result<u64> {
            header
                .trim_start_matches('#')
                .split_whitespace()
                .find_map(|kv| kv.strip_prefix(&format!("{name}=")).map(str::to_owned))
                .ok_or_else(|| AdrlError::config(format!("dataset header lacks {name}")))?
                .parse()
                .map_err(|_| AdrlError::config(format!("bad {name} in dataset header")))
        };
        let (count, horizon, dim, seed) =
            (field("count")? as usize, field("T")? as usize, field("d")? as usize, field("seed")?);
        lines.next();
        let mut paths = Vec::with_capacity(count);
        let mut cur: Vec<f64> = Vec::with_capacity(horizon * dim);
        let mut cur_id = None;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != dim + 2 {
                return Err(AdrlError::config(format!("malformed dataset row: {line}")));
            }
            let id: u64 = cells[0].parse().map_err(|_| AdrlError::config("bad path_id"))?;
            for c in &cells[2..] {
                cur.push(c.trim().parse().map_err(|_| AdrlError::config(format!("bad value {c}")))?);
            }
            cur_id = Some(id);
            if cur.len() == horizon * dim {
                paths.push(NoisePath::new(id, horizon, dim, std::mem::take(&mut cur))?);
                cur_id = None;
            }
        }
        if cur_id.is_some() || paths.len() != count {
            return Err(AdrlError::config("dataset file is truncated"));
        }
        NoiseDataset::new(seed, horizon, dim, 1, paths, None)
    }

    /// Flat little-endian binary layout with the same header fields.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        for v in [self.len() as u64, self.horizon as u64, self.dim as u64, self.seed] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.batch_size as u64).to_le_bytes())?;
        w.write_all(&[u8::from(self.weights.is_some())])?;
        for (i, p) in self.paths.iter().enumerate() {
            w.write_all(&p.path_id.to_le_bytes())?;
            if let Some(ws) = &self.weights {
                w.write_all(&ws[i].to_le_bytes())?;
            }
            for v in &p.entries {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(AdrlError::config("not a noise dataset file"));
        }
        let mut u = || -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let (count, horizon, dim, seed, batch) = (u()? as usize, u()? as usize, u()? as usize, u()?, u()? as usize);
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let mut paths = Vec::with_capacity(count);
        let mut weights = (flag[0] == 1).then(Vec::new);
        let mut b8 = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut b8)?;
            let id = u64::from_le_bytes(b8);
            if let Some(ws) = weights.as_mut() {
                r.read_exact(&mut b8)?;
                ws.push(f64::from_le_bytes(b8));
            }
            let mut entries = Vec::with_capacity(horizon * dim);
            for _ in 0..horizon * dim {
                r.read_exact(&mut b8)?;
                entries.push(f64::from_le_bytes(b8));
            }
            paths.push(NoisePath::new(id, horizon, dim, entries)?);
        }
        NoiseDataset::new(seed, horizon, dim, batch, paths, weights)
    }
}

const BINARY_MAGIC: &[u8; 8] = b"ADRLNOIS";

/// Draw `count` i.i.d. paths. Path `i` uses stream `(seed, Dataset, i, t)` for
/// each stage, so the dataset is the same regardless of thread schedule.
pub fn sample_noise_dataset<P: ControlProblem + ?Sized>(
    problem: &P,
    count: usize,
    batch_size: usize,
    seed: u64,
) -> Result<NoiseDataset> {
    sample_paths(problem.noise(), problem.dims().horizon, count, batch_size, seed, 0)
}

/// Like [`sample_noise_dataset`] with path ids starting at `first_id`.
pub(crate) fn sample_paths(
    noise: &NoiseModel,
    horizon: usize,
    count: usize,
    batch_size: usize,
    seed: u64,
    first_id: u64,
) -> Result<NoiseDataset> {
    if count == 0 || batch_size == 0 || count % batch_size != 0 {
        return Err(AdrlError::config(format!(
            "path count {count} must be a positive multiple of batch size {batch_size}"
        )));
    }
    let dim = noise.dim();
    let paths = map_indexed(count, |i| {
        let id = first_id + i as u64;
        let mut entries = vec![0.0; horizon * dim];
        for t in 0..horizon {
            let mut rng = stream(seed, Purpose::Dataset, id, t as u64);
            noise.sample(&mut rng, &mut entries[t * dim..(t + 1) * dim]);
        }
        NoisePath { path_id: id, horizon, dim, entries }
    });
    NoiseDataset::new(seed, horizon, dim, batch_size, paths, None)
}

/// All `|support|^T` paths of a finite-support problem with their exact
/// probabilities, as a single batch.
pub fn enumerate_noise_dataset<P: ControlProblem + ?Sized>(problem: &P) -> Result<NoiseDataset> {
    let NoiseModel::Finite { support, probs } = problem.noise() else {
        return Err(AdrlError::Unsupported("enumeration requires finite-support noise".into()));
    };
    let horizon = problem.dims().horizon;
    let k = support.len();
    let total = k
        .checked_pow(horizon as u32)
        .filter(|&n| n <= 10_000_000)
        .ok_or_else(|| AdrlError::config("enumerated dataset too large"))?;
    let dim = support[0].len();
    let mut paths = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rem = idx;
        let mut entries = vec![0.0; horizon * dim];
        let mut w = 1.0;
        // stage 0 is the most significant digit so paths come out in
        // lexicographic order
        for t in (0..horizon).rev() {
            let j = rem % k;
            rem /= k;
            entries[t * dim..(t + 1) * dim].copy_from_slice(&support[j]);
            w *= probs[j];
        }
        paths.push(NoisePath { path_id: idx as u64, horizon, dim, entries });
        weights.push(w);
    }
    NoiseDataset::new(0, horizon, dim, total, paths, Some(weights))
}

//! Training data for the distance model and its binary file format.
//!
//! Layout (little-endian), documented in `docs/formats.md`:
//!
//! ```text
//! magic  "RPDS"            4 bytes
//! version u32 = 1
//! n, dim, links, draws     u32 each
//! count                    u64
//! sigma                    f64
//! q      count × n         f32
//! x      count × dim       f32
//! true   count × links     f32
//! noisy  count × links × draws f32   (sample-major, then link, then draw)
//! ```

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Aabb;
use crate::error::{Error, Result};
use crate::geom::{JointVector, KinematicChain, Point};
use crate::rng::stream;

pub const DATASET_MAGIC: &[u8; 4] = b"RPDS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSizes {
    /// Number of configurations.
    pub configs: usize,
    /// Uniform workspace points per configuration.
    pub random: usize,
    /// Near-surface points per link and configuration.
    pub near_per_link: usize,
    /// Interior points per link and configuration.
    pub inside_per_link: usize,
    /// Noisy distance draws per (point, link).
    pub draws: usize,
    /// Width of the shell around each capsule surface for near points.
    pub shell_width: f64,
}

impl DatasetSizes {
    pub fn desk() -> Self {
        Self { configs: 600, random: 120, near_per_link: 10, inside_per_link: 20, draws: 25, shell_width: 0.1 }
    }

    pub fn full() -> Self {
        Self { configs: 3000, random: 500, draws: 50, ..Self::desk() }
    }

    pub fn points_per_config(&self, links: usize) -> usize {
        self.random + links * (self.near_per_link + self.inside_per_link)
    }

    fn validate(&self) -> Result<()> {
        if self.configs == 0 || self.draws == 0 || self.random + self.near_per_link + self.inside_per_link == 0 {
            return Err(Error::Argument("dataset sizes must be at least 1".into()));
        }
        if !(self.shell_width >= 0.0) {
            return Err(Error::Argument("shell width must be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for DatasetSizes {
    fn default() -> Self {
        Self::desk()
    }
}

/// Columnar training set; see the module docs for the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n: usize,
    pub dim: usize,
    pub links: usize,
    pub draws: usize,
    pub sigma: f64,
    pub q: Vec<f32>,
    pub x: Vec<f32>,
    pub true_dist: Vec<f32>,
    pub noisy: Vec<f32>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.true_dist.len() / self.links.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn q_of(&self, i: usize) -> &[f32] {
        &self.q[i * self.n..(i + 1) * self.n]
    }

    pub fn x_of(&self, i: usize) -> &[f32] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn true_of(&self, i: usize) -> &[f32] {
        &self.true_dist[i * self.links..(i + 1) * self.links]
    }

    pub fn noisy_of(&self, i: usize, k: usize) -> &[f32] {
        let start = (i * self.links + k) * self.draws;
        &self.noisy[start..start + self.draws]
    }

    fn append(&mut self, other: Dataset) {
        self.q.extend(other.q);
        self.x.extend(other.x);
        self.true_dist.extend(other.true_dist);
        self.noisy.extend(other.noisy);
    }

    fn empty_like(chain: &KinematicChain, draws: usize, sigma: f64) -> Self {
        Self {
            n: chain.dof(),
            dim: chain.dim(),
            links: chain.num_links(),
            draws,
            sigma,
            q: Vec::new(),
            x: Vec::new(),
            true_dist: Vec::new(),
            noisy: Vec::new(),
        }
    }
}

fn unit_vector(dim: usize, rng: &mut impl Rng) -> Point {
    loop {
        let mut v = Point::zeros();
        for i in 0..dim {
            v[i] = StandardNormal.sample(rng);
        }
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn in_unit_ball(dim: usize, rng: &mut impl Rng) -> Point {
    loop {
        let mut v = Point::zeros();
        for i in 0..dim {
            v[i] = rng.random_range(-1.0..1.0);
        }
        if v.norm_squared() < 1.0 {
            return v;
        }
    }
}

fn round_point(p: &Point) -> Point {
    p.map(|v| v as f32 as f64)
}

fn config_block(
    chain: &KinematicChain,
    bounds: &Aabb,
    sizes: &DatasetSizes,
    sigma: f64,
    seed: u64,
    c: usize,
    given: Option<&JointVector>,
) -> Result<Dataset> {
    let mut rng = stream(seed, c as u64);
    let dim = chain.dim();
    let q = match given {
        Some(q) => q.clone(),
        None => chain.random_configuration(&mut rng),
    };
    let q = JointVector(q.0.iter().map(|v| *v as f32 as f64).collect());
    let state = chain.forward_kinematics(&q)?;
    let segs = state.segments(chain);

    let mut points = Vec::with_capacity(sizes.points_per_config(chain.num_links()));
    for _ in 0..sizes.random {
        points.push(bounds.sample(dim, &mut rng));
    }
    for (k, (a, b)) in segs.iter().enumerate() {
        let r = chain.links()[k].radius;
        for _ in 0..sizes.near_per_link {
            let t: f64 = rng.random_range(0.0..=1.0);
            let s = if sizes.shell_width > 0.0 {
                rng.random_range(-0.5..=0.5) * sizes.shell_width
            } else {
                0.0
            };
            let off = unit_vector(dim, &mut rng) * (r + s).max(0.0);
            points.push(a + (b - a) * t + off);
        }
        for _ in 0..sizes.inside_per_link {
            let t: f64 = rng.random_range(0.0..=1.0);
            // stays strictly inside after f32 rounding
            points.push(a + (b - a) * t + in_unit_ball(dim, &mut rng) * (0.999 * r));
        }
    }

    let mut out = Dataset::empty_like(chain, sizes.draws, sigma);
    for p in points {
        let p = round_point(&p);
        let d = chain.link_point_distance_of(&state, &p);
        out.q.extend(q.0.iter().map(|v| *v as f32));
        out.x.extend(p.as_slice()[..dim].iter().map(|v| *v as f32));
        out.true_dist.extend(d.iter().map(|v| *v as f32));
        for dk in &d {
            for _ in 0..sizes.draws {
                let z: f64 = StandardNormal.sample(&mut rng);
                out.noisy.push((dk + sigma * z) as f32);
            }
        }
    }
    Ok(out)
}

/// Sample the training set. Configuration `c` draws from RNG stream `c`, so
/// the result does not depend on `jobs`.
pub fn generate_dataset(
    chain: &KinematicChain,
    bounds: &Aabb,
    sizes: &DatasetSizes,
    sigma: f64,
    seed: u64,
    jobs: usize,
) -> Result<Dataset> {
    build(chain, bounds, sizes, sigma, seed, jobs, None)
}

/// Same point sampling around fixed configurations (one block each);
/// `sizes.configs` is ignored.
pub fn generate_dataset_at(
    chain: &KinematicChain,
    bounds: &Aabb,
    configs: &[JointVector],
    sizes: &DatasetSizes,
    sigma: f64,
    seed: u64,
    jobs: usize,
) -> Result<Dataset> {
    for q in configs {
        chain.check_q(q)?;
    }
    let sizes = DatasetSizes { configs: configs.len().max(1), ..*sizes };
    build(chain, bounds, &sizes, sigma, seed, jobs, Some(configs))
}

fn build(
    chain: &KinematicChain,
    bounds: &Aabb,
    sizes: &DatasetSizes,
    sigma: f64,
    seed: u64,
    jobs: usize,
    given: Option<&[JointVector]>,
) -> Result<Dataset> {
    sizes.validate()?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Argument("sigma must be finite and non-negative".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    let count = given.map_or(sizes.configs, |g| g.len());
    let blocks: Vec<Result<Dataset>> = pool.install(|| {
        (0..count)
            .into_par_iter()
            .map(|c| config_block(chain, bounds, sizes, sigma, seed, c, given.map(|g| &g[c])))
            .collect()
    });
    let mut out = Dataset::empty_like(chain, sizes.draws, sigma);
    for b in blocks {
        out.append(b?);
    }
    Ok(out)
}

fn put_f32s(w: &mut impl Write, v: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(v.len() * 4);
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn write_dataset(w: &mut impl Write, ds: &Dataset) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    for v in [VERSION, ds.n as u32, ds.dim as u32, ds.links as u32, ds.draws as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(ds.len() as u64).to_le_bytes())?;
    w.write_all(&ds.sigma.to_le_bytes())?;
    put_f32s(w, &ds.q)?;
    put_f32s(w, &ds.x)?;
    put_f32s(w, &ds.true_dist)?;
    put_f32s(w, &ds.noisy)?;
    Ok(())
}

fn get_f32s(r: &mut impl Read, count: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; count * 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated dataset: {e}")))?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn read_dataset(r: &mut impl Read) -> Result<Dataset> {
    let mut head = [0u8; 40];
    r.read_exact(&mut head)
        .map_err(|e| Error::Format(format!("dataset header: {e}")))?;
    if &head[0..4] != DATASET_MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().expect("4 bytes")) as usize;
    if u32_at(4) != VERSION as usize {
        return Err(Error::Format(format!("unsupported dataset version {}", u32_at(4))));
    }
    let (n, dim, links, draws) = (u32_at(8), u32_at(12), u32_at(16), u32_at(20));
    let count = u64::from_le_bytes(head[24..32].try_into().expect("8 bytes")) as usize;
    let sigma = f64::from_le_bytes(head[32..40].try_into().expect("8 bytes"));
    Ok(Dataset {
        n,
        dim,
        links,
        draws,
        sigma,
        q: get_f32s(r, count * n)?,
        x: get_f32s(r, count * dim)?,
        true_dist: get_f32s(r, count * links)?,
        noisy: get_f32s(r, count * links * draws)?,
    })
}

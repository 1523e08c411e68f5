//! Synthetic torus-with-bump dataset.
//!
//! Four generative factors: global scale, presence of a bump, bump height,
//! and per-vertex Gaussian noise. Only bump presence (class label) and scale
//! (continuous label) are supervised.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{load_mesh, save_mesh, MeshError, MeshFormat, Point3, TriMesh};

/// Major radius of the unit-scale torus.
pub const MAJOR_RADIUS: f64 = 2.0;
/// Minor (tube) radius of the unit-scale torus.
pub const MINOR_RADIUS: f64 = 0.7;
/// Width of the Gaussian bump profile along the surface, unit scale.
pub const BUMP_WIDTH: f64 = 0.5;
/// Bump displacement is `height · exp(-BUMP_KAPPA · dist²)`.
pub const BUMP_KAPPA: f64 = 1.0 / (2.0 * BUMP_WIDTH * BUMP_WIDTH);
/// Vertices farther than this surface distance from the bump centre are untouched.
pub const BUMP_PATCH_RADIUS: f64 = 3.0 * BUMP_WIDTH;

#[derive(Debug, Error)]
pub enum TorusError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TorusError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusFactors {
    pub scale: f64,
    pub bump_present: bool,
    pub bump_height: f64,
    pub noise_sigma: f64,
}

impl TorusFactors {
    /// Bump-free, noise-free torus at the given scale.
    pub fn plain(scale: f64) -> Self {
        Self {
            scale,
            bump_present: false,
            bump_height: 0.0,
            noise_sigma: 0.0,
        }
    }

    fn effective_bump(&self) -> f64 {
        if self.bump_present {
            self.bump_height
        } else {
            0.0
        }
    }
}

/// Uniform ranges the dataset factors are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorRanges {
    pub scale: (f64, f64),
    pub bump_height: (f64, f64),
    pub noise_sigma: (f64, f64),
    pub bump_probability: f64,
}

impl Default for FactorRanges {
    fn default() -> Self {
        Self {
            scale: (0.8, 1.2),
            bump_height: (0.1 * MINOR_RADIUS, 0.5 * MINOR_RADIUS),
            noise_sigma: (0.0, 0.01),
            bump_probability: 0.5,
        }
    }
}

fn vertex_index(i: usize, j: usize, n_minor: usize) -> usize {
    i * n_minor + j
}

/// Shared face list: each parameter quad split into two outward-facing triangles.
pub fn torus_faces(n_major: usize, n_minor: usize) -> Vec<[usize; 3]> {
    let mut faces = Vec::with_capacity(2 * n_major * n_minor);
    for i in 0..n_major {
        let i1 = (i + 1) % n_major;
        for j in 0..n_minor {
            let j1 = (j + 1) % n_minor;
            let a = vertex_index(i, j, n_minor);
            let b = vertex_index(i1, j, n_minor);
            let c = vertex_index(i1, j1, n_minor);
            let d = vertex_index(i, j1, n_minor);
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    faces
}

fn angles(i: usize, j: usize, resolution: (usize, usize)) -> (f64, f64) {
    (
        2.0 * PI * i as f64 / resolution.0 as f64,
        2.0 * PI * j as f64 / resolution.1 as f64,
    )
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a < -PI {
        a += 2.0 * PI;
    }
    a
}

/// Surface distance (unit scale) from the bump centre at (u, v) = (0, 0),
/// measured in the local metric of the outer equator.
fn bump_distance(u: f64, v: f64) -> f64 {
    let du = (MAJOR_RADIUS + MINOR_RADIUS) * wrap_angle(u);
    let dv = MINOR_RADIUS * wrap_angle(v);
    (du * du + dv * dv).sqrt()
}

fn check_resolution(resolution: (usize, usize)) -> Result<()> {
    if resolution.0 < 8 || resolution.1 < 8 {
        return Err(TorusError::InvalidArgument(format!(
            "torus resolution {}x{} is below the 8x8 minimum",
            resolution.0, resolution.1
        )));
    }
    Ok(())
}

pub fn generate_torus(factors: &TorusFactors, resolution: (usize, usize), seed: u64) -> Result<TriMesh> {
    check_resolution(resolution)?;
    if !(factors.scale > 0.0) || factors.bump_height < 0.0 || factors.noise_sigma < 0.0 {
        return Err(TorusError::InvalidArgument(format!(
            "invalid torus factors {factors:?}"
        )));
    }
    let (n_major, n_minor) = resolution;
    let height = factors.effective_bump();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vertices = Vec::with_capacity(n_major * n_minor);
    for i in 0..n_major {
        for j in 0..n_minor {
            let (u, v) = angles(i, j, resolution);
            let normal = [v.cos() * u.cos(), v.cos() * u.sin(), v.sin()];
            let ring = MAJOR_RADIUS + MINOR_RADIUS * v.cos();
            let mut p = [ring * u.cos(), ring * u.sin(), MINOR_RADIUS * v.sin()];
            if height > 0.0 {
                let d = bump_distance(u, v);
                if d <= BUMP_PATCH_RADIUS {
                    let lift = height * (-BUMP_KAPPA * d * d).exp();
                    for k in 0..3 {
                        p[k] += lift * normal[k];
                    }
                }
            }
            for x in &mut p {
                *x *= factors.scale;
            }
            if factors.noise_sigma > 0.0 {
                for x in &mut p {
                    let e: f64 = rng.sample(StandardNormal);
                    *x += factors.noise_sigma * e;
                }
            }
            vertices.push(p);
        }
    }
    Ok(TriMesh::new(vertices, torus_faces(n_major, n_minor))?)
}

/// Distance from `p` to the surface of the unit-scale analytic torus scaled by `scale`.
pub fn distance_to_torus(p: Point3, scale: f64) -> f64 {
    let ring = (p[0] * p[0] + p[1] * p[1]).sqrt() - MAJOR_RADIUS * scale;
    ((ring * ring + p[2] * p[2]).sqrt() - MINOR_RADIUS * scale).abs()
}

/// Analytic volume `2π²Rr²` of the bump-free torus at `scale`.
pub fn analytic_volume(scale: f64) -> f64 {
    2.0 * PI * PI * MAJOR_RADIUS * MINOR_RADIUS * MINOR_RADIUS * scale.powi(3)
}

/// Vertices inside the bump patch.
pub fn bump_patch(resolution: (usize, usize)) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 0..resolution.0 {
        for j in 0..resolution.1 {
            let (u, v) = angles(i, j, resolution);
            if bump_distance(u, v) <= BUMP_PATCH_RADIUS {
                out.push(vertex_index(i, j, resolution.1));
            }
        }
    }
    out
}

/// Largest displacement of a bump-patch vertex from the bump-free torus,
/// after fitting the torus scale to the vertices outside the patch.
pub fn bump_deviation(mesh: &TriMesh, resolution: (usize, usize)) -> Result<f64> {
    let template = generate_torus(&TorusFactors::plain(1.0), resolution, 0)?;
    if !template.same_topology(mesh) {
        return Err(TorusError::InvalidArgument(
            "mesh does not share the torus topology".into(),
        ));
    }
    let patch = bump_patch(resolution);
    let mut in_patch = vec![false; mesh.num_vertices()];
    for &v in &patch {
        in_patch[v] = true;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (v, (x, t)) in mesh.vertices().iter().zip(template.vertices()).enumerate() {
        if !in_patch[v] {
            num += x[0] * t[0] + x[1] * t[1] + x[2] * t[2];
            den += t[0] * t[0] + t[1] * t[1] + t[2] * t[2];
        }
    }
    let s = num / den;
    Ok(patch
        .iter()
        .map(|&v| {
            let (x, t) = (mesh.vertices()[v], template.vertices()[v]);
            let d = [x[0] - s * t[0], x[1] - s * t[1], x[2] - s * t[2]];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
        })
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = TorusError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(TorusError::InvalidArgument(format!("unknown split '{other}'"))),
        }
    }
}

/// One manifest row. Column order is the CSV schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub y_cls: u8,
    pub y_reg: f64,
    pub scale: f64,
    pub bump_present: bool,
    pub bump_height: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub split: Split,
}

impl ManifestEntry {
    pub fn factors(&self) -> TorusFactors {
        TorusFactors {
            scale: self.scale,
            bump_present: self.bump_present,
            bump_height: self.bump_height,
            noise_sigma: self.noise_sigma,
        }
    }
}

/// Dataset index. Mesh paths are relative to `root`, the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| TorusError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let entries = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestEntry>, _>>()
            .map_err(|e| TorusError::Manifest {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest_err = |e: csv::Error| TorusError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut writer = csv::Writer::from_path(path).map_err(manifest_err)?;
        for e in &self.entries {
            writer.serialize(e).map_err(manifest_err)?;
        }
        writer.flush().map_err(|source| TorusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn mesh_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn load_mesh(&self, entry: &ManifestEntry) -> Result<TriMesh> {
        let path = self.mesh_path(entry);
        let format = MeshFormat::from_path(&path)?;
        Ok(load_mesh(&path, format)?)
    }

    /// Loads every mesh of a split, checking they share one topology.
    pub fn load_split(&self, split: Split) -> Result<(Vec<&ManifestEntry>, Vec<TriMesh>)> {
        let entries = self.split(split);
        let meshes = entries
            .par_iter()
            .map(|e| self.load_mesh(e))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = meshes.first() {
            if let Some((k, _)) = meshes.iter().enumerate().find(|(_, m)| !m.same_topology(first)) {
                return Err(TorusError::Mesh(MeshError::TopologyMismatch(format!(
                    "{} differs from {}",
                    entries[k].path, entries[0].path
                ))));
            }
        }
        Ok((entries, meshes))
    }
}

/// Counts for an 80/10/10 split of `count` samples.
pub fn split_sizes(count: usize) -> (usize, usize, usize) {
    let train = (0.8 * count as f64).round() as usize;
    let val = (0.1 * count as f64).round() as usize;
    (train, val, count - train - val)
}

fn draw_factors(ranges: &FactorRanges, seed: u64, index: usize) -> (TorusFactors, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let scale = rng.random_range(ranges.scale.0..=ranges.scale.1);
    let bump_present = rng.random_bool(ranges.bump_probability);
    let height = rng.random_range(ranges.bump_height.0..=ranges.bump_height.1);
    let noise_sigma = rng.random_range(ranges.noise_sigma.0..=ranges.noise_sigma.1);
    let noise_seed = rng.next_u64();
    let factors = TorusFactors {
        scale,
        bump_present,
        bump_height: if bump_present { height } else { 0.0 },
        noise_sigma,
    };
    (factors, noise_seed)
}

/// Draws all factors for `seed`. If every sample lands in one bump class the
/// seed is advanced by one and the draw repeated, so both classes are present.
fn draw_all(count: usize, ranges: &FactorRanges, seed: u64) -> Result<(u64, Vec<(TorusFactors, u64)>)> {
    let mut effective = seed;
    for _ in 0..1024 {
        let draws: Vec<_> = (0..count).map(|i| draw_factors(ranges, effective, i)).collect();
        let positives = draws.iter().filter(|(f, _)| f.bump_present).count();
        if positives > 0 && positives < count {
            return Ok((effective, draws));
        }
        effective = effective.wrapping_add(1);
    }
    Err(TorusError::InvalidArgument(
        "bump probability never yields both classes".into(),
    ))
}

/// Generates `count` meshes under `out_dir/meshes` and writes `out_dir/manifest.csv`.
pub fn generate_dataset(
    count: usize,
    ranges: &FactorRanges,
    resolution: (usize, usize),
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if count < 10 {
        return Err(TorusError::InvalidArgument(format!(
            "dataset needs at least 10 samples, got {count}"
        )));
    }
    check_resolution(resolution)?;
    let (effective, draws) = draw_all(count, ranges, seed)?;

    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(effective);
    rng.set_stream(u64::MAX);
    order.shuffle(&mut rng);
    let (n_train, n_val, _) = split_sizes(count);
    let mut splits = vec![Split::Test; count];
    for (rank, &idx) in order.iter().enumerate() {
        splits[idx] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let mesh_dir = out_dir.join("meshes");
    fs::create_dir_all(&mesh_dir).map_err(|source| TorusError::Io {
        path: mesh_dir.clone(),
        source,
    })?;
    let entries = draws
        .par_iter()
        .enumerate()
        .map(|(i, (factors, noise_seed))| {
            let rel = format!("meshes/torus_{i:05}.obj");
            let mesh = generate_torus(factors, resolution, *noise_seed)?;
            save_mesh(&mesh, &out_dir.join(&rel), MeshFormat::Obj)?;
            Ok(ManifestEntry {
                path: rel,
                y_cls: u8::from(factors.bump_present),
                y_reg: factors.scale,
                scale: factors.scale,
                bump_present: factors.bump_present,
                bump_height: factors.bump_height,
                noise_sigma: factors.noise_sigma,
                seed: *noise_seed,
                split: splits[i],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    manifest.save(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::mesh_volume;

    #[test]
    fn plain_torus_lies_on_the_analytic_surface() {
        let m = generate_torus(&TorusFactors::plain(1.0), (24, 16), 3).unwrap();
        for p in m.vertices() {
            assert!(distance_to_torus(*p, 1.0) <= 1e-9);
        }
    }

    #[test]
    fn scaling_is_linear() {
        let a = generate_torus(&TorusFactors::plain(1.0), (16, 12), 0).unwrap();
        let b = generate_torus(&TorusFactors::plain(2.0), (16, 12), 0).unwrap();
        for (p, q) in a.vertices().iter().zip(b.vertices()) {
            for k in 0..3 {
                assert_eq!(q[k], 2.0 * p[k]);
            }
        }
    }

    #[test]
    fn volume_is_close_to_analytic() {
        let m = generate_torus(&TorusFactors::plain(1.0), (64, 64), 0).unwrap();
        let v = mesh_volume(&m).unwrap();
        let exact = analytic_volume(1.0);
        assert!((exact - 19.3444).abs() < 1e-3);
        assert!((v - exact).abs() / exact < 0.02, "{v} vs {exact}");
    }

    #[test]
    fn absent_bump_ignores_height() {
        let mut f = TorusFactors::plain(1.0);
        f.bump_height = 0.3;
        let a = generate_torus(&f, (16, 16), 1).unwrap();
        let b = generate_torus(&TorusFactors::plain(1.0), (16, 16), 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bump_moves_only_patch_vertices_outward() {
        let res = (32, 32);
        let f = TorusFactors {
            scale: 1.0,
            bump_present: true,
            bump_height: 0.3,
            noise_sigma: 0.0,
        };
        let bumped = generate_torus(&f, res, 0).unwrap();
        let plain = generate_torus(&TorusFactors::plain(1.0), res, 0).unwrap();
        let patch = bump_patch(res);
        assert!(patch.contains(&0));
        for (v, (p, q)) in bumped.vertices().iter().zip(plain.vertices()).enumerate() {
            if !patch.contains(&v) {
                assert_eq!(p, q);
            }
        }
        // vertex 0 sits at the bump centre
        assert!((bumped.vertices()[0][0] - (MAJOR_RADIUS + MINOR_RADIUS + 0.3)).abs() < 1e-12);
        assert!(mesh_volume(&bumped).unwrap() > mesh_volume(&plain).unwrap());
        let dev = bump_deviation(&bumped, res).unwrap();
        assert!((dev - 0.3).abs() < 1e-9);
        assert!(bump_deviation(&plain, res).unwrap() < 1e-12);
    }

    #[test]
    fn noise_is_seeded() {
        let f = TorusFactors {
            noise_sigma: 0.01,
            ..TorusFactors::plain(1.0)
        };
        let a = generate_torus(&f, (12, 12), 5).unwrap();
        let b = generate_torus(&f, (12, 12), 5).unwrap();
        let c = generate_torus(&f, (12, 12), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.faces(), c.faces());
    }

    #[test]
    fn small_resolution_is_rejected() {
        assert!(generate_torus(&TorusFactors::plain(1.0), (7, 16), 0).is_err());
    }

    #[test]
    fn split_sizes_are_80_10_10() {
        assert_eq!(split_sizes(5000), (4000, 500, 500));
        assert_eq!(split_sizes(1000), (800, 100, 100));
        assert_eq!(split_sizes(10), (8, 1, 1));
    }

    #[test]
    fn dataset_is_deterministic_and_faithful() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ranges = FactorRanges::default();
        let ma = generate_dataset(20, &ranges, (8, 8), 7, a.path()).unwrap();
        let mb = generate_dataset(20, &ranges, (8, 8), 7, b.path()).unwrap();
        assert_eq!(ma.entries, mb.entries);
        let csv_a = fs::read(a.path().join("manifest.csv")).unwrap();
        let csv_b = fs::read(b.path().join("manifest.csv")).unwrap();
        assert_eq!(csv_a, csv_b);
        let header = String::from_utf8(csv_a).unwrap();
        assert!(header.starts_with(
            "path,y_cls,y_reg,scale,bump_present,bump_height,noise_sigma,seed,split\n"
        ));
        let reloaded = DatasetManifest::load(&a.path().join("manifest.csv")).unwrap();
        assert_eq!(reloaded.entries, ma.entries);
        for e in &ma.entries {
            assert_eq!(e.y_cls == 1, e.bump_present);
            assert_eq!(e.y_reg, e.scale);
            let regenerated = generate_torus(&e.factors(), (8, 8), e.seed).unwrap();
            assert_eq!(ma.load_mesh(e).unwrap(), regenerated);
        }
        assert_eq!(ma.split(Split::Train).len(), 16);
        assert_eq!(ma.split(Split::Val).len(), 2);
    }

    #[test]
    fn ten_samples_contain_both_classes() {
        // direct count over the raw Bernoulli draws for a range of seeds
        for seed in 0..50u64 {
            let (_, draws) = draw_all(10, &FactorRanges::default(), seed).unwrap();
            let pos = draws.iter().filter(|(f, _)| f.bump_present).count();
            assert!(pos > 0 && pos < 10);
        }
        let ranges = FactorRanges {
            bump_probability: 0.02,
            ..FactorRanges::default()
        };
        let (effective, draws) = draw_all(10, &ranges, 0).unwrap();
        assert!(draws.iter().any(|(f, _)| f.bump_present));
        assert!(effective > 0);
    }
}

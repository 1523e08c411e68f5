//! Spiral-convolution mesh VAE.
//!
//! Latent slot 0 carries the class factor and slot 1 the continuous factor;
//! the rest are unsupervised.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::{DiffError, Graph, NamedTensor, ParamId, ParamStore, Tensor, Var};
use crate::mesh::{compute_spirals, MeshError, SamplingHierarchy, SparseMatrix, SpiralIndexSet, TriMesh};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Meshes per forward pass during inference.
const INFERENCE_CHUNK: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("mesh topology does not match the model template: {0}")]
    TopologyMismatch(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("model has no latent statistics; train it first")]
    Untrained,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Output channels of each encoder stage, finest level first.
    pub channels: Vec<usize>,
    pub latent_dim: usize,
    pub spiral_length: usize,
    pub dilation: usize,
    /// Vertex reduction factor of each pooling stage.
    pub pool_factors: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: vec![8, 8, 8, 8],
            latent_dim: 12,
            spiral_length: 45,
            dilation: 2,
            pool_factors: vec![4.0; 4],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(ModelError::Config("channels must be non-empty and positive".into()));
        }
        if self.channels.len() != self.pool_factors.len() {
            return Err(ModelError::Config(format!(
                "{} channel entries for {} pooling stages",
                self.channels.len(),
                self.pool_factors.len()
            )));
        }
        if self.latent_dim < 3 {
            return Err(ModelError::Config(format!(
                "latent_dim must be at least 3, got {}",
                self.latent_dim
            )));
        }
        if self.spiral_length == 0 || self.dilation == 0 {
            return Err(ModelError::Config("spiral length and dilation must be positive".into()));
        }
        Ok(())
    }
}

/// Per-vertex mean shape and one global scale applied before encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub scale: f64,
}

impl Normalizer {
    pub fn identity(num_vertices: usize) -> Self {
        Self {
            mean: vec![0.0; num_vertices * 3],
            scale: 1.0,
        }
    }

    pub fn fit(meshes: &[TriMesh]) -> Result<Self> {
        let first = meshes
            .first()
            .ok_or_else(|| ModelError::InvalidArgument("cannot fit a normalizer to no meshes".into()))?;
        let len = first.num_vertices() * 3;
        let mut mean = vec![0.0; len];
        for m in meshes {
            if !m.same_topology(first) {
                return Err(ModelError::TopologyMismatch("meshes differ in topology".into()));
            }
            for (a, x) in mean.iter_mut().zip(m.flat_coords()) {
                *a += x;
            }
        }
        let n = meshes.len() as f64;
        mean.iter_mut().for_each(|a| *a /= n);
        let mut ss = 0.0;
        for m in meshes {
            for (a, x) in mean.iter().zip(m.flat_coords()) {
                ss += (x - a).powi(2);
            }
        }
        let std = (ss / (n * len as f64)).sqrt();
        Ok(Self {
            mean,
            scale: if std > 1e-12 { std } else { 1.0 },
        })
    }

    pub fn apply(&self, coords: &[f64]) -> Vec<f64> {
        coords
            .iter()
            .zip(&self.mean)
            .map(|(x, m)| (x - m) / self.scale)
            .collect()
    }

    pub fn invert(&self, coords: &[f64]) -> Vec<f64> {
        coords
            .iter()
            .zip(self.mean.iter().cycle())
            .map(|(x, m)| x * self.scale + m)
            .collect()
    }
}

/// Per-dimension Gaussian fitted to training-set means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentStats {
    pub fn fit(mus: &[Vec<f64>]) -> Result<Self> {
        if mus.len() < 2 {
            return Err(ModelError::InvalidArgument(format!(
                "need at least 2 training latents, got {}",
                mus.len()
            )));
        }
        let d = mus[0].len();
        let n = mus.len() as f64;
        let mut mean = vec![0.0; d];
        for m in mus {
            if m.len() != d {
                return Err(ModelError::Dimension("latents differ in length".into()));
            }
            mean.iter_mut().zip(m).for_each(|(a, v)| *a += v);
        }
        mean.iter_mut().for_each(|a| *a /= n);
        let mut var = vec![0.0; d];
        for m in mus {
            var.iter_mut()
                .zip(m.iter().zip(&mean))
                .for_each(|(a, (v, mu))| *a += (v - mu).powi(2));
        }
        let std = var.iter().map(|v| (v / (n - 1.0)).sqrt()).collect();
        Ok(Self { mean, std })
    }

    /// Seeded draws from the fitted diagonal Gaussian.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                self.mean
                    .iter()
                    .zip(&self.std)
                    .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }
}

/// Encoder output for one mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
    pub z: Vec<f64>,
}

/// Graph handles produced by [`MeshVae::forward`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub mu: Var,
    pub log_var: Var,
    pub z: Var,
    pub x_hat: Var,
}

#[derive(Debug, Clone)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Layers {
    enc: Vec<Dense>,
    mu: Dense,
    log_var: Dense,
    fc: Dense,
    dec: Vec<Dense>,
    out: Dense,
}

#[derive(Debug, Clone)]
pub struct MeshVae {
    config: ModelConfig,
    hierarchy: SamplingHierarchy,
    spirals: Vec<Arc<SpiralIndexSet>>,
    down: Vec<Arc<SparseMatrix>>,
    up: Vec<Arc<SparseMatrix>>,
    params: ParamStore,
    layers: Layers,
    normalizer: Normalizer,
    latent_stats: Option<LatentStats>,
    label_range: Option<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: ModelConfig,
    hierarchy_sha256: String,
    hierarchy: String,
    normalizer: Normalizer,
    latent_stats: Option<LatentStats>,
    label_range: Option<(f64, f64)>,
    params: Vec<NamedTensor>,
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::new(&[fan_in, fan_out], data).expect("consistent shape")
}

impl MeshVae {
    /// Fresh model with Xavier-uniform weights and zero biases.
    pub fn new(config: ModelConfig, hierarchy: SamplingHierarchy, seed: u64) -> Result<Self> {
        config.validate()?;
        let depth = config.channels.len();
        if hierarchy.depth() != depth {
            return Err(ModelError::Config(format!(
                "{} channel entries but the hierarchy has {} pooling stages",
                depth,
                hierarchy.depth()
            )));
        }
        let spirals = (0..depth)
            .map(|l| {
                compute_spirals(hierarchy.template(l), config.spiral_length, config.dilation).map(Arc::new)
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let down = (0..depth).map(|l| Arc::new(hierarchy.down(l).clone())).collect();
        let up = (0..depth).map(|l| Arc::new(hierarchy.up(l).clone())).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut dense = |name: &str, fan_in: usize, fan_out: usize| -> Result<Dense> {
            Ok(Dense {
                weight: params.add(&format!("{name}.weight"), xavier(&mut rng, fan_in, fan_out))?,
                bias: params.add(&format!("{name}.bias"), Tensor::zeros(&[fan_out]))?,
            })
        };
        let l = config.spiral_length;
        let ch = &config.channels;
        let coarse = hierarchy.template(depth).num_vertices() * ch[depth - 1];
        let mut enc = Vec::with_capacity(depth);
        for i in 0..depth {
            let c_in = if i == 0 { 3 } else { ch[i - 1] };
            enc.push(dense(&format!("enc.{i}"), l * c_in, ch[i])?);
        }
        let mu = dense("enc.mu", coarse, config.latent_dim)?;
        let log_var = dense("enc.logvar", coarse, config.latent_dim)?;
        let fc = dense("dec.fc", config.latent_dim, coarse)?;
        let mut dec = Vec::with_capacity(depth);
        for (k, i) in (0..depth).rev().enumerate() {
            let c_in = ch[(i + 1).min(depth - 1)];
            dec.push(dense(&format!("dec.{k}"), l * c_in, ch[i])?);
        }
        let out = dense("dec.out", l * ch[0], 3)?;
        let layers = Layers {
            enc,
            mu,
            log_var,
            fc,
            dec,
            out,
        };
        let normalizer = Normalizer::identity(hierarchy.template(0).num_vertices());
        Ok(Self {
            config,
            hierarchy,
            spirals,
            down,
            up,
            params,
            layers,
            normalizer,
            latent_stats: None,
            label_range: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn hierarchy(&self) -> &SamplingHierarchy {
        &self.hierarchy
    }

    pub fn template(&self) -> &TriMesh {
        self.hierarchy.template(0)
    }

    pub fn num_vertices(&self) -> usize {
        self.template().num_vertices()
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn set_normalizer(&mut self, normalizer: Normalizer) -> Result<()> {
        if normalizer.mean.len() != self.num_vertices() * 3 {
            return Err(ModelError::Dimension(format!(
                "normalizer covers {} coordinates, template has {}",
                normalizer.mean.len(),
                self.num_vertices() * 3
            )));
        }
        self.normalizer = normalizer;
        Ok(())
    }

    pub fn latent_stats(&self) -> Option<&LatentStats> {
        self.latent_stats.as_ref()
    }

    pub fn set_latent_stats(&mut self, stats: LatentStats) -> Result<()> {
        if stats.mean.len() != self.latent_dim() || stats.std.len() != self.latent_dim() {
            return Err(ModelError::Dimension("latent statistics length".into()));
        }
        self.latent_stats = Some(stats);
        Ok(())
    }

    /// Raw (min, max) of the continuous training label.
    pub fn label_range(&self) -> Option<(f64, f64)> {
        self.label_range
    }

    pub fn set_label_range(&mut self, range: (f64, f64)) {
        self.label_range = Some(range);
    }

    /// Normalized coordinates of `meshes` as a `[B, N, 3]` tensor.
    pub fn prepare(&self, meshes: &[&TriMesh]) -> Result<Tensor> {
        let n = self.num_vertices();
        let mut data = Vec::with_capacity(meshes.len() * n * 3);
        for (k, m) in meshes.iter().enumerate() {
            if !m.same_topology(self.template()) {
                return Err(ModelError::TopologyMismatch(format!(
                    "batch item {k} has {} vertices / {} faces, template {} / {}",
                    m.num_vertices(),
                    m.num_faces(),
                    n,
                    self.template().num_faces()
                )));
            }
            data.extend(self.normalizer.apply(&m.flat_coords()));
        }
        Ok(Tensor::new(&[meshes.len(), n, 3], data)?)
    }

    fn dense(&self, p: &ParamStore, g: &mut Graph, x: Var, d: &Dense) -> Result<Var> {
        let w = g.param(p, d.weight);
        let b = g.param(p, d.bias);
        Ok(g.linear(x, w, Some(b))?)
    }

    fn conv(&self, p: &ParamStore, g: &mut Graph, x: Var, level: usize, d: &Dense) -> Result<Var> {
        let w = g.param(p, d.weight);
        let b = g.param(p, d.bias);
        Ok(g.spiral_conv(x, &self.spirals[level], w, b)?)
    }

    fn check_params(&self, p: &ParamStore) -> Result<()> {
        let same = p.len() == self.params.len()
            && self.params.ids().all(|id| p.value(id).shape() == self.params.value(id).shape());
        if same {
            Ok(())
        } else {
            Err(ModelError::Dimension("parameter store does not match the model layout".into()))
        }
    }

    /// Encoder half: `[B, N, 3]` normalized input to `(mu, log_var)`.
    pub fn forward_encoder(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        self.encoder_with(&self.params, g, x)
    }

    fn encoder_with(&self, p: &ParamStore, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        let batch = g.value(x).shape()[0];
        let mut h = x;
        for (i, layer) in self.layers.enc.iter().enumerate() {
            h = self.conv(p, g, h, i, layer)?;
            h = g.elu(h);
            h = g.sparse_apply(&self.down[i], h)?;
        }
        let flat = g.value(h).len() / batch;
        let h = g.reshape(h, &[batch, flat])?;
        let mu = self.dense(p, g, h, &self.layers.mu)?;
        let log_var = self.dense(p, g, h, &self.layers.log_var)?;
        Ok((mu, log_var))
    }

    /// Decoder half: `[B, d_z]` latents to `[B, N, 3]` normalized coordinates.
    pub fn forward_decoder(&self, g: &mut Graph, z: Var) -> Result<Var> {
        self.decoder_with(&self.params, g, z)
    }

    fn decoder_with(&self, p: &ParamStore, g: &mut Graph, z: Var) -> Result<Var> {
        let shape = g.value(z).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.latent_dim() {
            return Err(ModelError::Dimension(format!(
                "decoder expects [B, {}] latents, got {shape:?}",
                self.latent_dim()
            )));
        }
        let depth = self.config.channels.len();
        let coarse_n = self.hierarchy.template(depth).num_vertices();
        let mut h = self.dense(p, g, z, &self.layers.fc)?;
        h = g.reshape(h, &[shape[0], coarse_n, self.config.channels[depth - 1]])?;
        for (k, i) in (0..depth).rev().enumerate() {
            h = g.sparse_apply(&self.up[i], h)?;
            h = self.conv(p, g, h, i, &self.layers.dec[k])?;
            h = g.elu(h);
        }
        self.conv(p, g, h, 0, &self.layers.out)
    }

    /// Full pass. With `eps` the latent is reparameterized, otherwise `z = mu`.
    pub fn forward(&self, g: &mut Graph, x: Tensor, eps: Option<Tensor>) -> Result<ForwardVars> {
        self.forward_with(&self.params, g, x, eps)
    }

    /// [`MeshVae::forward`] reading weights from `params`, which must have
    /// this model's layout.
    pub fn forward_with(&self, params: &ParamStore, g: &mut Graph, x: Tensor, eps: Option<Tensor>) -> Result<ForwardVars> {
        self.check_params(params)?;
        let xv = g.constant(x);
        let (mu, log_var) = self.encoder_with(params, g, xv)?;
        let z = match eps {
            Some(eps) => g.reparameterize(mu, log_var, eps)?,
            None => mu,
        };
        let x_hat = self.decoder_with(params, g, z)?;
        Ok(ForwardVars { mu, log_var, z, x_hat })
    }

    /// Encodes meshes. `noise_seed` draws `z` by reparameterization;
    /// without it `z = mu`.
    pub fn encode(&self, meshes: &[&TriMesh], noise_seed: Option<u64>) -> Result<Vec<LatentCode>> {
        let d = self.latent_dim();
        let mut out = Vec::with_capacity(meshes.len());
        let mut rng = noise_seed.map(ChaCha8Rng::seed_from_u64);
        for chunk in meshes.chunks(INFERENCE_CHUNK) {
            let mut g = Graph::new();
            let x = self.prepare(chunk)?;
            let xv = g.constant(x);
            let (mu, lv) = self.forward_encoder(&mut g, xv)?;
            let (mu, lv) = (g.value(mu).data(), g.value(lv).data());
            for k in 0..chunk.len() {
                let m = mu[k * d..(k + 1) * d].to_vec();
                let l = lv[k * d..(k + 1) * d].to_vec();
                let z = match rng.as_mut() {
                    Some(r) => m
                        .iter()
                        .zip(&l)
                        .map(|(m, l)| m + (0.5 * l).exp() * r.sample::<f64, _>(StandardNormal))
                        .collect(),
                    None => m.clone(),
                };
                out.push(LatentCode { mu: m, log_var: l, z });
            }
        }
        Ok(out)
    }

    /// Decodes latents into meshes on the template topology.
    pub fn decode(&self, zs: &[Vec<f64>]) -> Result<Vec<TriMesh>> {
        let d = self.latent_dim();
        if let Some(bad) = zs.iter().find(|z| z.len() != d) {
            return Err(ModelError::Dimension(format!(
                "latent has {} entries, model expects {d}",
                bad.len()
            )));
        }
        let n = self.num_vertices();
        let mut out = Vec::with_capacity(zs.len());
        for chunk in zs.chunks(INFERENCE_CHUNK) {
            let mut g = Graph::new();
            let flat: Vec<f64> = chunk.iter().flatten().copied().collect();
            let z = g.constant(Tensor::new(&[chunk.len(), d], flat)?);
            let x_hat = self.forward_decoder(&mut g, z)?;
            for item in g.value(x_hat).data().chunks_exact(n * 3) {
                let coords = self.normalizer.invert(item);
                let verts = coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
                out.push(self.template().with_vertices(verts)?);
            }
        }
        Ok(out)
    }

    /// Decoded reconstructions `decode(mu(x))`.
    pub fn reconstruct(&self, meshes: &[&TriMesh]) -> Result<Vec<TriMesh>> {
        let codes = self.encode(meshes, None)?;
        let mus: Vec<Vec<f64>> = codes.into_iter().map(|c| c.mu).collect();
        self.decode(&mus)
    }

    /// Latent values of a sweep of slot `slot` over ±`sigmas`·σ, others at 0.
    pub fn traversal_latents(&self, slot: usize, steps: usize, sigmas: f64) -> Result<Vec<Vec<f64>>> {
        let stats = self.latent_stats.as_ref().ok_or(ModelError::Untrained)?;
        if steps < 2 {
            return Err(ModelError::InvalidArgument(format!("traversal needs at least 2 steps, got {steps}")));
        }
        if slot >= self.latent_dim() {
            return Err(ModelError::InvalidArgument(format!(
                "slot {slot} outside latent dimension {}",
                self.latent_dim()
            )));
        }
        let half = sigmas * stats.std[slot];
        Ok((0..steps)
            .map(|k| {
                let mut z = vec![0.0; self.latent_dim()];
                z[slot] = -half + 2.0 * half * k as f64 / (steps - 1) as f64;
                z
            })
            .collect())
    }

    /// Meshes decoded along a ±3σ sweep of latent index `slot`.
    pub fn traverse(&self, slot: usize, steps: usize) -> Result<Vec<TriMesh>> {
        self.decode(&self.traversal_latents(slot, steps, 3.0)?)
    }

    /// Seeded draws from the fitted training-latent Gaussian.
    pub fn sample_latents(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let stats = self.latent_stats.as_ref().ok_or(ModelError::Untrained)?;
        Ok(stats.sample(count, seed))
    }

    pub fn to_checkpoint_json(&self) -> Result<String> {
        let hierarchy = self.hierarchy.to_json()?;
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            hierarchy_sha256: self.hierarchy.content_hash()?,
            hierarchy,
            normalizer: self.normalizer.clone(),
            latent_stats: self.latent_stats.clone(),
            label_range: self.label_range,
            params: self.params.to_named(),
        };
        serde_json::to_string(&file).map_err(|e| ModelError::Checkpoint {
            path: PathBuf::new(),
            message: e.to_string(),
        })
    }

    pub fn from_checkpoint_json(text: &str, path: &Path) -> Result<Self> {
        let err = |message: String| ModelError::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
        if file.version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported checkpoint version {}", file.version)));
        }
        let hierarchy = SamplingHierarchy::from_json(&file.hierarchy)?;
        if hierarchy.content_hash()? != file.hierarchy_sha256 {
            return Err(err("hierarchy hash does not match its contents".into()));
        }
        let mut model = Self::new(file.config, hierarchy, 0)?;
        model.params.load_named(&file.params)?;
        model.set_normalizer(file.normalizer)?;
        if let Some(stats) = file.latent_stats {
            model.set_latent_stats(stats)?;
        }
        model.label_range = file.label_range;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_checkpoint_json()?;
        fs::write(path, text).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_checkpoint_json(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_hierarchy;
    use crate::torusgen::{generate_torus, TorusFactors};

    fn small_model() -> (MeshVae, Vec<TriMesh>) {
        let template = generate_torus(&TorusFactors::plain(1.0), (16, 12), 0).unwrap();
        let h = build_hierarchy(&template, &[2.0, 2.0, 2.0, 2.0]).unwrap();
        let cfg = ModelConfig {
            channels: vec![4, 4, 4, 4],
            latent_dim: 4,
            spiral_length: 9,
            dilation: 1,
            pool_factors: vec![2.0; 4],
        };
        let meshes = (0..3)
            .map(|k| generate_torus(&TorusFactors::plain(0.9 + 0.1 * k as f64), (16, 12), 0).unwrap())
            .collect();
        (MeshVae::new(cfg, h, 3).unwrap(), meshes)
    }

    #[test]
    fn shapes_and_identical_rows() {
        let (model, meshes) = small_model();
        let batch = vec![&meshes[0], &meshes[1], &meshes[0]];
        let codes = model.encode(&batch, None).unwrap();
        assert_eq!(codes.len(), 3);
        assert_eq!(codes[0].mu.len(), 4);
        assert_eq!(codes[0].mu, codes[2].mu);
        assert!(codes.iter().all(|c| c.mu.iter().chain(&c.log_var).all(|v| v.is_finite())));
        let out = model.reconstruct(&batch).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out[0].same_topology(&meshes[0]));
    }

    #[test]
    fn wrong_topology_and_latent_size_error() {
        let (model, _) = small_model();
        let other = generate_torus(&TorusFactors::plain(1.0), (12, 12), 0).unwrap();
        assert!(matches!(model.encode(&[&other], None), Err(ModelError::TopologyMismatch(_))));
        assert!(matches!(model.decode(&[vec![0.0; 3]]), Err(ModelError::Dimension(_))));
    }

    #[test]
    fn traversal_needs_statistics_and_hits_endpoints() {
        let (mut model, _) = small_model();
        assert!(matches!(model.traverse(1, 5), Err(ModelError::Untrained)));
        model
            .set_latent_stats(LatentStats {
                mean: vec![0.0; 4],
                std: vec![1.0, 2.0, 1.0, 1.0],
            })
            .unwrap();
        assert!(model.traverse(1, 1).is_err());
        let pair = model.traverse(1, 2).unwrap();
        let ends = model.decode(&[vec![0.0, -6.0, 0.0, 0.0], vec![0.0, 6.0, 0.0, 0.0]]).unwrap();
        assert_eq!(pair, ends);
    }

    #[test]
    fn latent_fit_and_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mus: Vec<Vec<f64>> = (0..400)
            .map(|_| vec![1.0 + rng.sample::<f64, _>(StandardNormal), -2.0])
            .collect();
        let stats = LatentStats::fit(&mus).unwrap();
        assert!((stats.mean[0] - 1.0).abs() < 3.0 / 20.0);
        assert_eq!(stats.std[1], 0.0);
        assert_eq!(stats.sample(5, 9), stats.sample(5, 9));
        assert!(LatentStats::fit(&mus[..1]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let (mut model, meshes) = small_model();
        let refs: Vec<&TriMesh> = meshes.iter().collect();
        model.set_normalizer(Normalizer::fit(&meshes).unwrap()).unwrap();
        model.set_label_range((0.8, 1.2));
        let text = model.to_checkpoint_json().unwrap();
        let back = MeshVae::from_checkpoint_json(&text, Path::new("mem")).unwrap();
        assert_eq!(back.to_checkpoint_json().unwrap(), text);
        assert_eq!(back.encode(&refs, None).unwrap(), model.encode(&refs, None).unwrap());
    }

    #[test]
    fn normalizer_round_trips() {
        let (_, meshes) = small_model();
        let norm = Normalizer::fit(&meshes).unwrap();
        let x = meshes[2].flat_coords();
        let back = norm.invert(&norm.apply(&x));
        assert!(x.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

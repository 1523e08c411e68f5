//! Seeded training loop, evaluation protocol and volume reports.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{grad_check, DiffError, GradCheckOptions, GradCheckReport, Graph, ParamStore, Tensor, Var};
use crate::losses::{
    total_loss_with_policy, DegeneratePolicy, LossBreakdown, LossConfig, LossError, LossInputs, CLS_SLOT, REG_SLOT,
};
use crate::mesh::{build_hierarchy, mesh_volume, MeshError, Point3, TriMesh};
use crate::metrics::{self, EvalReport, MetricsError, SetDistance};
use crate::model::{LatentStats, MeshVae, ModelConfig, ModelError, Normalizer};
use crate::torusgen::{generate_torus, DatasetManifest, ManifestEntry, Split, TorusError, TorusFactors};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("split '{0}' is empty")]
    EmptySplit(Split),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Torus(#[from] TorusError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, TrainError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub lr_decay_per_epoch: f64,
    pub lr_floor: f64,
    pub seed: u64,
    /// Save `epoch_XXXX.json` every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub loss: LossConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3.6e-4,
            batch_size: 16,
            epochs: 300,
            lr_decay_per_epoch: 0.77,
            lr_floor: 1e-8,
            seed: 0,
            checkpoint_every: 0,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(TrainError::Config("batch_size must be at least 2".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be positive".into()));
        }
        if !(self.lr_decay_per_epoch > 0.0 && self.lr_decay_per_epoch <= 1.0) {
            return Err(TrainError::Config("lr_decay_per_epoch must lie in (0, 1]".into()));
        }
        if !(self.lr_floor >= 0.0) {
            return Err(TrainError::Config("lr_floor must be non-negative".into()));
        }
        self.loss.validate()?;
        self.model.validate()?;
        Ok(())
    }

    /// `max(lr₀ · decay^epoch, floor)`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        (self.learning_rate * self.lr_decay_per_epoch.powi(epoch as i32)).max(self.lr_floor)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| TrainError::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.ids().map(|id| vec![0.0; params.value(id).len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let (value, grad) = params.value_and_grad_mut(id);
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((w, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
    /// Seconds since training started. Not written to the CSV log.
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,learning_rate,train_total,train_reconstruction,train_kl,train_contrastive_cls,train_contrastive_reg,\
             val_total,val_reconstruction,val_kl,val_contrastive_cls,val_contrastive_reg\n",
        );
        for r in &self.epochs {
            let (t, v) = (&r.train, &r.val);
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.epoch,
                r.learning_rate,
                t.total,
                t.reconstruction,
                t.kl,
                t.contrastive_cls,
                t.contrastive_reg,
                v.total,
                v.reconstruction,
                v.kl,
                v.contrastive_cls,
                v.contrastive_reg
            ));
        }
        out
    }
}

pub struct TrainOutcome {
    pub final_model: MeshVae,
    pub best_model: MeshVae,
    pub best_epoch: usize,
    pub log: TrainLog,
}

/// Mixes three integers into one seed (splitmix64 finalizer).
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Normalized flat coordinates and labels of one split.
pub struct PreparedSplit {
    pub x: Vec<Vec<f64>>,
    pub y_cls: Vec<u8>,
    pub y_reg: Vec<f64>,
}

/// Min-max normalization onto [0, 1] given the raw training range.
pub fn normalize_label(y: f64, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        (y - range.0) / (range.1 - range.0)
    } else {
        0.0
    }
}

fn prepare_split(model: &MeshVae, entries: &[&ManifestEntry], meshes: &[TriMesh], range: (f64, f64)) -> Result<PreparedSplit> {
    let x = meshes
        .iter()
        .map(|m| {
            if m.same_topology(model.template()) {
                Ok(model.normalizer().apply(&m.flat_coords()))
            } else {
                Err(ModelError::TopologyMismatch("dataset mesh differs from the template".into()))
            }
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(PreparedSplit {
        x,
        y_cls: entries.iter().map(|e| e.y_cls).collect(),
        y_reg: entries.iter().map(|e| normalize_label(e.y_reg, range)).collect(),
    })
}

/// Loss of one batch on the graph; returns the scalar node to differentiate.
#[allow(clippy::too_many_arguments)]
pub fn objective(
    model: &MeshVae,
    params: &ParamStore,
    g: &mut Graph,
    x: Tensor,
    eps: Option<Tensor>,
    y_cls: &[u8],
    y_reg: &[f64],
    cfg: &LossConfig,
    policy: DegeneratePolicy,
) -> Result<(Var, LossBreakdown)> {
    let target = x.data().to_vec();
    let out = model.forward_with(params, g, x, eps)?;
    let inputs = LossInputs {
        x: &target,
        x_hat: g.value(out.x_hat).data(),
        mu: g.value(out.mu).data(),
        log_var: g.value(out.log_var).data(),
        z: g.value(out.z).data(),
        latent_dim: model.latent_dim(),
        y_cls,
        y_reg,
    };
    let (breakdown, grads) = total_loss_with_policy(&inputs, cfg, policy)?;
    let shape_of = |v: Var, g: &Graph| g.value(v).shape().to_vec();
    let parts = vec![
        (out.x_hat, Tensor::new(&shape_of(out.x_hat, g), grads.x_hat)?),
        (out.mu, Tensor::new(&shape_of(out.mu, g), grads.mu)?),
        (out.log_var, Tensor::new(&shape_of(out.log_var, g), grads.log_var)?),
        (out.z, Tensor::new(&shape_of(out.z, g), grads.z)?),
    ];
    // When z = mu both handles are the same node and the gradients add up.
    let loss = g.scalar_fn(breakdown.total, parts)?;
    Ok((loss, breakdown))
}

fn batch_tensor(split: &PreparedSplit, idx: &[usize], n: usize) -> Tensor {
    let data: Vec<f64> = idx.iter().flat_map(|&i| split.x[i].iter().copied()).collect();
    Tensor::new(&[idx.len(), n, 3], data).expect("prepared meshes share one size")
}

fn evaluate_loss(model: &MeshVae, split: &PreparedSplit, cfg: &TrainConfig) -> Result<LossBreakdown> {
    let n = model.num_vertices();
    let idx: Vec<usize> = (0..split.x.len()).collect();
    let mut acc = LossBreakdown::default();
    let mut count = 0usize;
    for chunk in idx.chunks(cfg.batch_size).filter(|c| c.len() >= 2) {
        let mut g = Graph::new();
        let y_cls: Vec<u8> = chunk.iter().map(|&i| split.y_cls[i]).collect();
        let y_reg: Vec<f64> = chunk.iter().map(|&i| split.y_reg[i]).collect();
        let (_, b) = objective(
            model,
            model.params(),
            &mut g,
            batch_tensor(split, chunk, n),
            None,
            &y_cls,
            &y_reg,
            &cfg.loss,
            DegeneratePolicy::Skip,
        )?;
        acc.scaled_add(&b, chunk.len() as f64);
        count += chunk.len();
    }
    let mut out = LossBreakdown::default();
    out.scaled_add(&acc, 1.0 / count.max(1) as f64);
    Ok(out)
}

/// Fits latent statistics on the encoded training split.
fn attach_latent_stats(model: &mut MeshVae, train: &[TriMesh]) -> Result<()> {
    let refs: Vec<&TriMesh> = train.iter().collect();
    let mus: Vec<Vec<f64>> = model.encode(&refs, None)?.into_iter().map(|c| c.mu).collect();
    model.set_latent_stats(LatentStats::fit(&mus)?)?;
    Ok(())
}

/// Training-set template with per-vertex mean coordinates.
fn mean_template(meshes: &[TriMesh]) -> Result<TriMesh> {
    let norm = Normalizer::fit(meshes)?;
    let verts: Vec<Point3> = norm.mean.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok(meshes[0].with_vertices(verts)?)
}

/// Builds an untrained model for `manifest` with normalizer and label range
/// fitted on its training split.
pub fn init_model(manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<(MeshVae, Vec<TriMesh>)> {
    cfg.validate()?;
    let (entries, meshes) = manifest.load_split(Split::Train)?;
    if entries.len() < 2 {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    let template = mean_template(&meshes)?;
    let hierarchy = build_hierarchy(&template, &cfg.model.pool_factors)?;
    let mut model = MeshVae::new(cfg.model.clone(), hierarchy, cfg.seed)?;
    model.set_normalizer(Normalizer::fit(&meshes)?)?;
    let lo = entries.iter().map(|e| e.y_reg).fold(f64::INFINITY, f64::min);
    let hi = entries.iter().map(|e| e.y_reg).fold(f64::NEG_INFINITY, f64::max);
    model.set_label_range((lo, hi));
    Ok((model, meshes))
}

/// Trains on the manifest's train split, selecting the best epoch on val.
/// When `out_dir` is given, checkpoints and the CSV log are written there.
pub fn train(manifest: &DatasetManifest, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let start = Instant::now();
    let (mut model, train_meshes) = init_model(manifest, cfg)?;
    let range = model.label_range().expect("set by init_model");
    let train_entries = manifest.split(Split::Train);
    let (val_entries, val_meshes) = manifest.load_split(Split::Val)?;
    if val_entries.is_empty() {
        return Err(TrainError::EmptySplit(Split::Val));
    }
    let train_set = prepare_split(&model, &train_entries, &train_meshes, range)?;
    let val_set = prepare_split(&model, &val_entries, &val_meshes, range)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("config.json");
        let text = serde_json::to_string_pretty(cfg).expect("config serializes");
        fs::write(&path, text).map_err(io_err(&path))?;
    }

    let n = model.num_vertices();
    let d = model.latent_dim();
    let mut adam = Adam::new(model.params());
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, MeshVae)> = None;
    let mut order: Vec<usize> = (0..train_set.x.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);

        let mut acc = LossBreakdown::default();
        let mut seen = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let y_cls: Vec<u8> = chunk.iter().map(|&i| train_set.y_cls[i]).collect();
            let y_reg: Vec<f64> = chunk.iter().map(|&i| train_set.y_reg[i]).collect();
            let eps = Tensor::standard_normal(&[chunk.len(), d], mix_seed(cfg.seed, epoch as u64, b as u64));
            let mut g = Graph::new();
            let (loss, breakdown) = objective(
                &model,
                model.params(),
                &mut g,
                batch_tensor(&train_set, chunk, n),
                Some(eps),
                &y_cls,
                &y_reg,
                &cfg.loss,
                DegeneratePolicy::Skip,
            )
            .map_err(|e| match e {
                TrainError::Loss(LossError::NonFinite(_)) => TrainError::NonFinite { epoch, batch: b },
                other => other,
            })?;
            if !breakdown.total.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: b });
            }
            g.backward(loss)?;
            let params = model.params_mut();
            params.zero_grads();
            g.accumulate_param_grads(params);
            adam.step(params, lr);
            acc.scaled_add(&breakdown, chunk.len() as f64);
            seen += chunk.len();
        }
        let mut train_avg = LossBreakdown::default();
        train_avg.scaled_add(&acc, 1.0 / seen.max(1) as f64);
        let val = evaluate_loss(&model, &val_set, cfg)?;
        if !val.total.is_finite() {
            return Err(TrainError::NonFinite { epoch, batch: 0 });
        }
        log.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train: train_avg,
            val,
            wall_time: start.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|(v, _, _)| val.total < *v) {
            best = Some((val.total, epoch, model.clone()));
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                let mut snap = model.clone();
                attach_latent_stats(&mut snap, &train_meshes)?;
                snap.save(&dir.join(format!("epoch_{:04}.json", epoch + 1)))?;
            }
        }
    }

    attach_latent_stats(&mut model, &train_meshes)?;
    let (_, best_epoch, mut best_model) = best.expect("at least one epoch");
    attach_latent_stats(&mut best_model, &train_meshes)?;
    if let Some(dir) = out_dir {
        model.save(&dir.join("final.json"))?;
        best_model.save(&dir.join("best.json"))?;
        let path = dir.join("train_log.csv");
        fs::write(&path, log.to_csv()).map_err(io_err(&path))?;
    }
    Ok(TrainOutcome {
        final_model: model,
        best_model,
        best_epoch,
        log,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub knn_k: usize,
    /// Generated and reference sets each hold this many meshes (capped by the split).
    pub nna_count: usize,
    /// Vertices kept per mesh for chamfer distances.
    pub cd_points: usize,
    /// Vertices kept per mesh for EMD.
    pub emd_points: usize,
    pub seed: u64,
    pub volume_bins: usize,
    pub shapes_per_bin: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            knn_k: 5,
            nna_count: 100,
            cd_points: 256,
            emd_points: 256,
            seed: 0,
            volume_bins: 6,
            shapes_per_bin: 10,
        }
    }
}

fn subsample(meshes: &[TriMesh], idx: &[usize]) -> Vec<Vec<Point3>> {
    meshes.iter().map(|m| idx.iter().map(|&i| m.vertices()[i]).collect()).collect()
}

/// Encodes `split`, compares against the train split, and fills every metric.
pub fn evaluate(model: &MeshVae, manifest: &DatasetManifest, split: Split, opts: &EvalOptions) -> Result<EvalReport> {
    let range = model.label_range().ok_or(ModelError::Untrained)?;
    if model.latent_stats().is_none() {
        return Err(ModelError::Untrained.into());
    }
    let (train_entries, train_meshes) = manifest.load_split(Split::Train)?;
    let (entries, meshes) = manifest.load_split(split)?;
    if entries.is_empty() {
        return Err(TrainError::EmptySplit(split));
    }
    if train_entries.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    let refs: Vec<&TriMesh> = meshes.iter().collect();
    let train_refs: Vec<&TriMesh> = train_meshes.iter().collect();
    let mus: Vec<Vec<f64>> = model.encode(&refs, None)?.into_iter().map(|c| c.mu).collect();
    let train_mus: Vec<Vec<f64>> = model.encode(&train_refs, None)?.into_iter().map(|c| c.mu).collect();

    let y_cls: Vec<u8> = entries.iter().map(|e| e.y_cls).collect();
    let y_reg: Vec<f64> = entries.iter().map(|e| normalize_label(e.y_reg, range)).collect();
    let train_cls: Vec<u8> = train_entries.iter().map(|e| e.y_cls).collect();
    let train_reg: Vec<f64> = train_entries.iter().map(|e| normalize_label(e.y_reg, range)).collect();
    let slot = |m: &[Vec<f64>], s: usize| m.iter().map(|z| z[s]).collect::<Vec<f64>>();
    let (z1, z2) = (slot(&mus, CLS_SLOT), slot(&mus, REG_SLOT));

    let cls_f: Vec<f64> = y_cls.iter().map(|&c| c as f64).collect();
    let sap = metrics::sap(&mus, &[cls_f, y_reg.clone()])?;
    let pcc = metrics::pcc(&z2, &y_reg)?;
    let pbc = metrics::pbc(&y_cls, &z1)?;
    let knn_acc = metrics::knn_classify(&slot(&train_mus, CLS_SLOT), &train_cls, &z1, &y_cls, opts.knn_k)?;
    let knn_mse = metrics::knn_regress(&slot(&train_mus, REG_SLOT), &train_reg, &z2, &y_reg, opts.knn_k)?;

    let recon = model.decode(&mus)?;
    let orig: Vec<Vec<Point3>> = meshes.iter().map(|m| m.vertices().to_vec()).collect();
    let rec: Vec<Vec<Point3>> = recon.iter().map(|m| m.vertices().to_vec()).collect();
    let recon_err = metrics::recon_error(&orig, &rec)?;

    let count = opts.nna_count.min(meshes.len());
    let generated = model.decode(&model.sample_latents(count, opts.seed)?)?;
    let reference = &meshes[..count];
    let nv = model.num_vertices();
    let cd_idx = metrics::subsample_indices(nv, opts.cd_points, opts.seed);
    let emd_idx = metrics::subsample_indices(nv, opts.emd_points, opts.seed);
    let nna_cd = metrics::one_nna(&subsample(&generated, &cd_idx), &subsample(reference, &cd_idx), SetDistance::Cd)?;
    let nna_emd = metrics::one_nna(&subsample(&generated, &emd_idx), &subsample(reference, &emd_idx), SetDistance::Emd)?;

    let rows = volume_report(model, opts.volume_bins, opts.shapes_per_bin, opts.seed)?;
    let diffs: Vec<f64> = rows.iter().flat_map(|r| r.differences.iter().copied()).collect();
    let (t_stat, p_value) = metrics::one_sample_ttest(&diffs, 0.0)?;

    Ok(EvalReport {
        sap_cls: sap.per_factor[0],
        sap_reg: sap.per_factor[1],
        sap_mean: sap.mean,
        pcc,
        pbc,
        knn_acc,
        knn_mse,
        recon_err,
        nna_cd,
        nna_emd,
        t_stat,
        p_value,
    })
}

/// One z₂ bin of the volume report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumeRow {
    pub bin: usize,
    pub z2_low: f64,
    pub z2_high: f64,
    pub label_low: f64,
    pub label_high: f64,
    pub mean_volume_pos: f64,
    pub mean_volume_neg: f64,
    pub mean_difference: f64,
    /// Per-shape `volume(z₁ = +3σ) − volume(z₁ = −3σ)`.
    #[serde(skip)]
    pub differences: Vec<f64>,
}

/// Splits z₂ ∈ [−3σ, +3σ] into `bins` intervals mapped linearly onto the
/// training label range. In each bin `per_bin` shapes are decoded at
/// z₁ = ±3σ with z₂ evenly spaced inside the bin and the free latents drawn
/// from the fitted training distribution.
pub fn volume_report(model: &MeshVae, bins: usize, per_bin: usize, seed: u64) -> Result<Vec<VolumeRow>> {
    let stats = model.latent_stats().ok_or(ModelError::Untrained)?;
    let (lo, hi) = model.label_range().ok_or(ModelError::Untrained)?;
    if bins == 0 || per_bin == 0 {
        return Err(TrainError::Config("volume report needs at least one bin and one shape".into()));
    }
    let s1 = 3.0 * stats.std[CLS_SLOT];
    let s2 = 3.0 * stats.std[REG_SLOT];
    let free = stats.sample(bins * per_bin, seed);
    let mut rows = Vec::with_capacity(bins);
    for bin in 0..bins {
        let a = -s2 + 2.0 * s2 * bin as f64 / bins as f64;
        let b = -s2 + 2.0 * s2 * (bin + 1) as f64 / bins as f64;
        let mut zs = Vec::with_capacity(2 * per_bin);
        for k in 0..per_bin {
            let mut z = free[bin * per_bin + k].clone();
            z[REG_SLOT] = a + (b - a) * (k as f64 + 0.5) / per_bin as f64;
            for sign in [1.0, -1.0] {
                z[CLS_SLOT] = sign * s1;
                zs.push(z.clone());
            }
        }
        let meshes = model.decode(&zs)?;
        let vols = meshes.iter().map(mesh_volume).collect::<std::result::Result<Vec<_>, _>>()?;
        let pos: Vec<f64> = vols.iter().step_by(2).copied().collect();
        let neg: Vec<f64> = vols.iter().skip(1).step_by(2).copied().collect();
        let differences: Vec<f64> = pos.iter().zip(&neg).map(|(p, n)| p - n).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let to_label = |z: f64| lo + (hi - lo) * (z + s2) / (2.0 * s2);
        rows.push(VolumeRow {
            bin,
            z2_low: a,
            z2_high: b,
            label_low: to_label(a),
            label_high: to_label(b),
            mean_volume_pos: mean(&pos),
            mean_volume_neg: mean(&neg),
            mean_difference: mean(&differences),
            differences,
        });
    }
    Ok(rows)
}

pub fn write_volume_csv(rows: &[VolumeRow], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "bin,z2_low,z2_high,label_low,label_high,mean_volume_pos,mean_volume_neg,mean_difference").unwrap();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.bin, r.z2_low, r.z2_high, r.label_low, r.label_high, r.mean_volume_pos, r.mean_volume_neg, r.mean_difference
        )
        .unwrap();
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Finite-difference check of the full objective on a micro model: a 16×12
/// torus pooled by 2 four times, channels [4, 4, 4, 4], d_z = 4, batch 4.
pub fn objective_grad_check(seed: u64, loss: &LossConfig, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let resolution = (16, 12);
    let factors = [
        TorusFactors { scale: 0.85, bump_present: false, bump_height: 0.0, noise_sigma: 0.0 },
        TorusFactors { scale: 0.9, bump_present: false, bump_height: 0.0, noise_sigma: 0.0 },
        TorusFactors { scale: 1.1, bump_present: true, bump_height: 0.25, noise_sigma: 0.0 },
        TorusFactors { scale: 1.15, bump_present: true, bump_height: 0.3, noise_sigma: 0.0 },
    ];
    let meshes = factors
        .iter()
        .enumerate()
        .map(|(i, f)| generate_torus(f, resolution, i as u64))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let config = ModelConfig {
        channels: vec![4; 4],
        latent_dim: 4,
        spiral_length: 9,
        dilation: 1,
        pool_factors: vec![2.0; 4],
    };
    let hierarchy = build_hierarchy(&mean_template(&meshes)?, &config.pool_factors)?;
    let mut model = MeshVae::new(config, hierarchy, seed)?;
    model.set_normalizer(Normalizer::fit(&meshes)?)?;
    let refs: Vec<&TriMesh> = meshes.iter().collect();
    let x = model.prepare(&refs)?;
    let eps = Tensor::standard_normal(&[4, 4], mix_seed(seed, 0, 0));
    let y_cls = [0u8, 0, 1, 1];
    let y_reg = [0.0, 0.02, 0.5, 0.52];
    let mut params = model.params().clone();
    let report = grad_check(&mut params, opts, |p, g| {
        objective(&model, p, g, x.clone(), Some(eps.clone()), &y_cls, &y_reg, loss, DegeneratePolicy::Error)
            .map(|(v, _)| v)
            .map_err(|e| DiffError::Other(e.to_string()))
    })?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate_at(0), 3.6e-4);
        assert!((cfg.learning_rate_at(10) - 3.6e-4 * 0.77f64.powi(10)).abs() < 1e-18);
        assert_eq!(cfg.learning_rate_at(300), 1e-8);
    }

    #[test]
    fn adam_minimizes_a_quadratic_bowl() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new(&[2], vec![3.0, -2.0]).unwrap()).unwrap();
        let mut adam = Adam::new(&store);
        for _ in 0..2000 {
            let w = store.value(id).data().to_vec();
            let mut g = Graph::new();
            let v = g.param(&store, id);
            let loss = g
                .scalar_fn(w[0] * w[0] + 4.0 * w[1] * w[1], vec![(v, Tensor::new(&[2], vec![2.0 * w[0], 8.0 * w[1]]).unwrap())])
                .unwrap();
            g.backward(loss).unwrap();
            store.zero_grads();
            g.accumulate_param_grads(&mut store);
            adam.step(&mut store, 0.05);
        }
        assert!(store.value(id).data().iter().all(|v| v.abs() < 1e-2), "{:?}", store.value(id));
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new(&[1], vec![1.0]).unwrap()).unwrap();
        store.accumulate_grad(id, &Tensor::new(&[1], vec![0.3]).unwrap());
        let mut adam = Adam::new(&store);
        adam.step(&mut store, 0.1);
        assert!((store.value(id).data()[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn config_rejects_unknown_fields_and_bad_values() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epochs": 3, "bogus": 1}"#).is_err());
        let cfg: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "loss": {"lambda2": 0.0}}"#).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.loss.lambda2, 0.0);
        assert_eq!(cfg.loss.temperature, 181.0);
        let bad = TrainConfig { batch_size: 1, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn seed_mixing_separates_streams() {
        assert_ne!(mix_seed(0, 0, 1), mix_seed(0, 1, 0));
        assert_eq!(mix_seed(5, 2, 3), mix_seed(5, 2, 3));
    }

    #[test]
    fn full_objective_passes_gradient_check() {
        let report = objective_grad_check(0, &LossConfig::default(), GradCheckOptions::default()).unwrap();
        assert!(report.max_rel_error() < 1e-4, "{report:?}");
        let report = objective_grad_check(1, &LossConfig::beta_vae(), GradCheckOptions::default()).unwrap();
        assert!(report.max_rel_error() < 1e-4, "{report:?}");
    }
}

//! β-VAE objective and the supervised soft-nearest-neighbour contrastive terms.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("degenerate batch: no anchor has a {0} partner")]
    DegenerateBatch(&'static str),
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Latent index supervised by the class label.
pub const CLS_SLOT: usize = 0;
/// Latent index supervised by the continuous label.
pub const REG_SLOT: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub beta: f64,
    pub temperature: f64,
    /// Neighbour window on min-max normalized regression labels.
    pub threshold: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub enable_cls: bool,
    pub enable_reg: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 0.0015,
            temperature: 181.0,
            threshold: 0.035,
            lambda1: 1.0,
            lambda2: 1.0,
            enable_cls: true,
            enable_reg: true,
        }
    }
}

impl LossConfig {
    /// Plain β-VAE: both contrastive terms off.
    pub fn beta_vae() -> Self {
        Self {
            enable_cls: false,
            enable_reg: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LossError::InvalidConfig(m.to_string()));
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad("beta must be finite and non-negative");
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return bad("threshold must be non-negative");
        }
        if !(self.lambda1.is_finite() && self.lambda1 > 0.0) {
            return bad("lambda1 must be positive");
        }
        if !(self.lambda2.is_finite() && self.lambda2 >= 0.0) {
            return bad("lambda2 must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub contrastive_cls: f64,
    pub contrastive_reg: f64,
}

impl LossBreakdown {
    pub(crate) fn scaled_add(&mut self, other: &LossBreakdown, w: f64) {
        self.total += w * other.total;
        self.reconstruction += w * other.reconstruction;
        self.kl += w * other.kl;
        self.contrastive_cls += w * other.contrastive_cls;
        self.contrastive_reg += w * other.contrastive_reg;
    }
}

/// A loss value with its gradient over one flat input.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check_finite(xs: &[f64], what: &'static str) -> Result<()> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LossError::NonFinite(what))
    }
}

/// Mean squared coordinate error and its gradient with respect to `x_hat`.
pub fn reconstruction(x: &[f64], x_hat: &[f64]) -> Result<ValueGrad> {
    if x.len() != x_hat.len() || x.is_empty() {
        return Err(LossError::Shape(format!(
            "reconstruction target has {} values, prediction {}",
            x.len(),
            x_hat.len()
        )));
    }
    check_finite(x, "x")?;
    check_finite(x_hat, "x_hat")?;
    let n = x.len() as f64;
    let mut value = 0.0;
    let grad = x
        .iter()
        .zip(x_hat)
        .map(|(a, b)| {
            let d = b - a;
            value += d * d;
            2.0 * d / n
        })
        .collect();
    Ok(ValueGrad {
        value: value / n,
        grad,
    })
}

/// Closed-form KL(N(mu, e^lv) ‖ N(0, I)), summed over dimensions and
/// averaged over the batch. Returns the value and gradients for mu and lv.
pub fn kl_divergence(mu: &[f64], log_var: &[f64], batch: usize) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if mu.len() != log_var.len() || batch == 0 || mu.len() % batch != 0 {
        return Err(LossError::Shape(format!(
            "mu has {} values, log_var {}, batch {batch}",
            mu.len(),
            log_var.len()
        )));
    }
    check_finite(mu, "mu")?;
    check_finite(log_var, "log_var")?;
    let b = batch as f64;
    let mut value = 0.0;
    let mut gmu = Vec::with_capacity(mu.len());
    let mut glv = Vec::with_capacity(mu.len());
    for (&m, &lv) in mu.iter().zip(log_var) {
        let e = lv.exp();
        value += 0.5 * (m * m + e - 1.0 - lv);
        gmu.push(m / b);
        glv.push(0.5 * (e - 1.0) / b);
    }
    Ok((value / b, gmu, glv))
}

/// `(reconstruction, kl)` for a batch.
pub fn vae_loss(x: &[f64], x_hat: &[f64], mu: &[f64], log_var: &[f64], batch: usize) -> Result<(f64, f64)> {
    let r = reconstruction(x, x_hat)?;
    let (kl, _, _) = kl_divergence(mu, log_var, batch)?;
    Ok((r.value, kl))
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Soft-nearest-neighbour loss on latent slot `slot` with inhibition over the
/// remaining dimensions. `partner(i, j)` decides whether j is a positive for
/// anchor i. Anchors without partners are left out of the mean.
pub fn contrastive<F>(
    z: &[f64],
    latent_dim: usize,
    slot: usize,
    partner: F,
    cfg: &LossConfig,
    what: &'static str,
) -> Result<ValueGrad>
where
    F: Fn(usize, usize) -> bool,
{
    cfg.validate()?;
    if latent_dim < 2 || slot >= latent_dim || z.len() % latent_dim != 0 {
        return Err(LossError::Shape(format!(
            "latent batch of {} values with dimension {latent_dim}, slot {slot}",
            z.len()
        )));
    }
    check_finite(z, "z")?;
    let b = z.len() / latent_dim;
    if b < 2 {
        return Err(LossError::Shape(format!("contrastive loss needs a batch of at least 2, got {b}")));
    }
    let t = cfg.temperature;
    let t_inh = (latent_dim - 1) as f64 * t;
    let row = |i: usize| &z[i * latent_dim..(i + 1) * latent_dim];

    let mut grad = vec![0.0; z.len()];
    let mut total = 0.0;
    let mut anchors = 0usize;
    let (ln_l1, ln_l2) = (cfg.lambda1.ln(), cfg.lambda2.ln());
    let mut a = vec![0.0; b];
    let mut c = vec![0.0; b];
    let mut terms = Vec::with_capacity(2 * b);
    let mut pos = Vec::with_capacity(b);
    for i in 0..b {
        let partners: Vec<usize> = (0..b).filter(|&j| j != i && partner(i, j)).collect();
        if partners.is_empty() {
            continue;
        }
        anchors += 1;
        let zi = row(i);
        terms.clear();
        for k in (0..b).filter(|&k| k != i) {
            let d = zi[slot] - row(k)[slot];
            a[k] = -d * d / t;
            terms.push(ln_l1 + a[k]);
        }
        pos.clear();
        for &j in &partners {
            pos.push(a[j]);
            if cfg.lambda2 > 0.0 {
                let zj = row(j);
                let s: f64 = (0..latent_dim)
                    .filter(|&d| d != slot)
                    .map(|d| (zi[d] - zj[d]).powi(2))
                    .sum();
                c[j] = -s / t_inh;
                terms.push(ln_l2 + c[j]);
            }
        }
        let log_den = log_sum_exp(&terms);
        let log_num = log_sum_exp(&pos);
        total += log_den - log_num;

        // d(log_den - log_num)/da_k and /dc_j, chained onto z.
        for k in (0..b).filter(|&k| k != i) {
            let w = (ln_l1 + a[k] - log_den).exp();
            let g = w * -2.0 * (zi[slot] - row(k)[slot]) / t;
            grad[i * latent_dim + slot] += g;
            grad[k * latent_dim + slot] -= g;
        }
        for &j in &partners {
            let w = -(a[j] - log_num).exp();
            let g = w * -2.0 * (zi[slot] - row(j)[slot]) / t;
            grad[i * latent_dim + slot] += g;
            grad[j * latent_dim + slot] -= g;
            if cfg.lambda2 > 0.0 {
                let w = (ln_l2 + c[j] - log_den).exp();
                let zj = row(j);
                for d in (0..latent_dim).filter(|&d| d != slot) {
                    let g = w * -2.0 * (zi[d] - zj[d]) / t_inh;
                    grad[i * latent_dim + d] += g;
                    grad[j * latent_dim + d] -= g;
                }
            }
        }
    }
    if anchors == 0 {
        return Err(LossError::DegenerateBatch(what));
    }
    let n = anchors as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok(ValueGrad {
        value: total / n,
        grad,
    })
}

/// Class contrastive loss on slot 0; partners share the class label.
pub fn contrastive_cls(z: &[f64], latent_dim: usize, y_cls: &[u8], cfg: &LossConfig) -> Result<ValueGrad> {
    if y_cls.len() * latent_dim != z.len() {
        return Err(LossError::Shape(format!(
            "{} class labels for {} latent values of dimension {latent_dim}",
            y_cls.len(),
            z.len()
        )));
    }
    contrastive(z, latent_dim, CLS_SLOT, |i, j| y_cls[i] == y_cls[j], cfg, "same-class")
}

/// Regression contrastive loss on slot 1; partners lie within the threshold.
pub fn contrastive_reg(z: &[f64], latent_dim: usize, y_reg: &[f64], cfg: &LossConfig) -> Result<ValueGrad> {
    if y_reg.len() * latent_dim != z.len() {
        return Err(LossError::Shape(format!(
            "{} regression labels for {} latent values of dimension {latent_dim}",
            y_reg.len(),
            z.len()
        )));
    }
    check_finite(y_reg, "y_reg")?;
    let th = cfg.threshold;
    contrastive(z, latent_dim, REG_SLOT, |i, j| (y_reg[i] - y_reg[j]).abs() <= th, cfg, "in-range")
}

/// Flat views of one batch: `x`/`x_hat` are `[B, N, 3]`, latents `[B, d_z]`.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub x: &'a [f64],
    pub x_hat: &'a [f64],
    pub mu: &'a [f64],
    pub log_var: &'a [f64],
    pub z: &'a [f64],
    pub latent_dim: usize,
    pub y_cls: &'a [u8],
    pub y_reg: &'a [f64],
}

/// Gradients of the total objective with respect to each model output.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub x_hat: Vec<f64>,
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
    pub z: Vec<f64>,
}

/// What to do with a contrastive term whose batch has no partnered anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegeneratePolicy {
    Error,
    /// Treat the term as 0 for this batch.
    Skip,
}

pub fn total_loss(inputs: &LossInputs, cfg: &LossConfig) -> Result<(LossBreakdown, LossGrads)> {
    total_loss_with_policy(inputs, cfg, DegeneratePolicy::Error)
}

pub fn total_loss_with_policy(
    inputs: &LossInputs,
    cfg: &LossConfig,
    policy: DegeneratePolicy,
) -> Result<(LossBreakdown, LossGrads)> {
    cfg.validate()?;
    let d = inputs.latent_dim;
    if d == 0 || inputs.mu.len() % d != 0 || inputs.z.len() != inputs.mu.len() {
        return Err(LossError::Shape(format!(
            "mu has {} values, z {}, latent dimension {d}",
            inputs.mu.len(),
            inputs.z.len()
        )));
    }
    let batch = inputs.mu.len() / d;
    let rec = reconstruction(inputs.x, inputs.x_hat)?;
    let (kl, gmu, glv) = kl_divergence(inputs.mu, inputs.log_var, batch)?;
    let mut out = LossBreakdown {
        reconstruction: rec.value,
        kl,
        ..Default::default()
    };
    let mut grads = LossGrads {
        x_hat: rec.grad,
        mu: gmu.iter().map(|g| cfg.beta * g).collect(),
        log_var: glv.iter().map(|g| cfg.beta * g).collect(),
        z: vec![0.0; inputs.z.len()],
    };
    let lenient = |r: Result<ValueGrad>| match (r, policy) {
        (Err(LossError::DegenerateBatch(_)), DegeneratePolicy::Skip) => Ok(None),
        (r, _) => r.map(Some),
    };
    if cfg.enable_cls {
        if let Some(vg) = lenient(contrastive_cls(inputs.z, d, inputs.y_cls, cfg))? {
            out.contrastive_cls = vg.value;
            grads.z.iter_mut().zip(&vg.grad).for_each(|(a, g)| *a += g);
        }
    }
    if cfg.enable_reg {
        if let Some(vg) = lenient(contrastive_reg(inputs.z, d, inputs.y_reg, cfg))? {
            out.contrastive_reg = vg.value;
            grads.z.iter_mut().zip(&vg.grad).for_each(|(a, g)| *a += g);
        }
    }
    out.total = out.reconstruction + cfg.beta * out.kl + out.contrastive_cls + out.contrastive_reg;
    Ok((out, grads))
}

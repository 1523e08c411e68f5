//! Disentanglement, prediction and generative-quality metrics.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::mesh::Point3;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// `scores[i][j]`: R² of predicting factor `j` from latent `i` alone, in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub scores: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SapResult {
    pub matrix: ScoreMatrix,
    pub per_factor: Vec<f64>,
    pub mean: f64,
}

/// Every field of an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sap_cls: f64,
    pub sap_reg: f64,
    pub sap_mean: f64,
    pub pcc: f64,
    pub pbc: f64,
    pub knn_acc: f64,
    pub knn_mse: f64,
    pub recon_err: f64,
    pub nna_cd: f64,
    pub nna_emd: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

impl EvalReport {
    pub fn is_finite(&self) -> bool {
        [
            self.sap_cls,
            self.sap_reg,
            self.sap_mean,
            self.pcc,
            self.pbc,
            self.knn_acc,
            self.knn_mse,
            self.recon_err,
            self.nna_cd,
            self.nna_emd,
            self.t_stat,
            self.p_value,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// Two-column text table.
    pub fn to_table(&self) -> String {
        let rows = [
            ("sap_cls", self.sap_cls),
            ("sap_reg", self.sap_reg),
            ("sap_mean", self.sap_mean),
            ("pcc", self.pcc),
            ("pbc", self.pbc),
            ("knn_acc", self.knn_acc),
            ("knn_mse", self.knn_mse),
            ("recon_err", self.recon_err),
            ("nna_cd", self.nna_cd),
            ("nna_emd", self.nna_emd),
            ("t_stat", self.t_stat),
            ("p_value", self.p_value),
        ];
        let mut out = String::from("metric       value\n");
        for (k, v) in rows {
            out.push_str(&format!("{k:<12} {v:.6}\n"));
        }
        out
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(MetricsError::SizeMismatch(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

/// Pearson correlation.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_len(x.len(), y.len(), "pcc")?;
    if x.len() < 3 {
        return Err(MetricsError::InvalidArgument(format!("pcc needs at least 3 samples, got {}", x.len())));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 {
        return Err(MetricsError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(MetricsError::ZeroVariance("y"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Point-biserial correlation `(M₁ − M₀)/s · √(n₁n₀ / (n(n−1)))`, with `s`
/// the sample standard deviation of `values`.
pub fn pbc(binary: &[u8], values: &[f64]) -> Result<f64> {
    check_len(binary.len(), values.len(), "pbc")?;
    let n = values.len();
    if n < 3 {
        return Err(MetricsError::InvalidArgument(format!("pbc needs at least 3 samples, got {n}")));
    }
    let (mut s1, mut s0, mut n1, mut n0) = (0.0, 0.0, 0usize, 0usize);
    for (&b, &v) in binary.iter().zip(values) {
        match b {
            0 => {
                s0 += v;
                n0 += 1;
            }
            1 => {
                s1 += v;
                n1 += 1;
            }
            other => {
                return Err(MetricsError::InvalidArgument(format!("pbc label {other} is not binary")));
            }
        }
    }
    if n0 == 0 || n1 == 0 {
        return Err(MetricsError::ZeroVariance("binary labels"));
    }
    let m = mean(values);
    let s = (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    if s == 0.0 {
        return Err(MetricsError::ZeroVariance("values"));
    }
    let (n, n1, n0) = (n as f64, n1 as f64, n0 as f64);
    Ok((s1 / n1 - s0 / n0) / s * (n1 * n0 / (n * (n - 1.0))).sqrt())
}

/// Score matrix and SAP over `factors` (each a column of length n).
pub fn sap(latents: &[Vec<f64>], factors: &[Vec<f64>]) -> Result<SapResult> {
    let n = latents.len();
    if n < 10 {
        return Err(MetricsError::InvalidArgument(format!("sap needs at least 10 samples, got {n}")));
    }
    if factors.is_empty() {
        return Err(MetricsError::InvalidArgument("sap needs at least one factor".into()));
    }
    let d = latents[0].len();
    if latents.iter().any(|l| l.len() != d) {
        return Err(MetricsError::SizeMismatch("latents differ in length".into()));
    }
    for f in factors {
        check_len(f.len(), n, "sap factor")?;
    }
    let mut scores = vec![vec![0.0; factors.len()]; d];
    for (i, row) in scores.iter_mut().enumerate() {
        let col: Vec<f64> = latents.iter().map(|l| l[i]).collect();
        for (j, f) in factors.iter().enumerate() {
            row[j] = match pcc(&col, f) {
                Ok(r) => (r * r).clamp(0.0, 1.0),
                Err(MetricsError::ZeroVariance("x")) => 0.0,
                Err(e) => return Err(e),
            };
        }
    }
    let per_factor: Vec<f64> = (0..factors.len())
        .map(|j| {
            let mut col: Vec<f64> = scores.iter().map(|r| r[j]).collect();
            col.sort_by(|a, b| b.total_cmp(a));
            col[0] - col.get(1).copied().unwrap_or(0.0)
        })
        .collect();
    let m = mean(&per_factor);
    Ok(SapResult {
        matrix: ScoreMatrix { scores },
        per_factor,
        mean: m,
    })
}

/// Indices of the `k` training points nearest to `q`; ties go to the lower index.
fn nearest(train: &[f64], q: f64, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.sort_by(|&a, &b| (train[a] - q).abs().total_cmp(&(train[b] - q).abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn check_knn(train: usize, train_y: usize, test: usize, test_y: usize, k: usize) -> Result<()> {
    check_len(train, train_y, "knn train")?;
    check_len(test, test_y, "knn test")?;
    if k == 0 || k > train || test == 0 {
        return Err(MetricsError::InvalidArgument(format!(
            "knn with k={k} on {train} reference and {test} query points"
        )));
    }
    Ok(())
}

/// Majority-vote KNN accuracy in percent. Vote ties go to the smaller label.
pub fn knn_classify(train_x: &[f64], train_y: &[u8], test_x: &[f64], test_y: &[u8], k: usize) -> Result<f64> {
    check_knn(train_x.len(), train_y.len(), test_x.len(), test_y.len(), k)?;
    let correct = test_x
        .iter()
        .zip(test_y)
        .filter(|&(&q, &y)| {
            let mut votes = [0usize; 256];
            for i in nearest(train_x, q, k) {
                votes[train_y[i] as usize] += 1;
            }
            let best = (0..256).max_by(|&a, &b| votes[a].cmp(&votes[b]).then(b.cmp(&a))).unwrap();
            best == y as usize
        })
        .count();
    Ok(100.0 * correct as f64 / test_x.len() as f64)
}

/// Mean-of-neighbours KNN regression; returns the mean squared error.
pub fn knn_regress(train_x: &[f64], train_y: &[f64], test_x: &[f64], test_y: &[f64], k: usize) -> Result<f64> {
    check_knn(train_x.len(), train_y.len(), test_x.len(), test_y.len(), k)?;
    let se: f64 = test_x
        .iter()
        .zip(test_y)
        .map(|(&q, &y)| {
            let pred = nearest(train_x, q, k).iter().map(|&i| train_y[i]).sum::<f64>() / k as f64;
            (y - pred).powi(2)
        })
        .sum();
    Ok(se / test_x.len() as f64)
}

fn sq(a: &Point3, b: &Point3) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Mean over meshes of the per-vertex mean squared distance.
pub fn recon_error(x: &[Vec<Point3>], x_hat: &[Vec<Point3>]) -> Result<f64> {
    check_len(x.len(), x_hat.len(), "recon_error meshes")?;
    if x.is_empty() {
        return Err(MetricsError::InvalidArgument("recon_error on no meshes".into()));
    }
    let mut total = 0.0;
    for (a, b) in x.iter().zip(x_hat) {
        check_len(a.len(), b.len(), "recon_error vertices")?;
        total += a.iter().zip(b).map(|(p, q)| sq(p, q)).sum::<f64>() / a.len() as f64;
    }
    Ok(total / x.len() as f64)
}

/// Symmetric chamfer distance with squared Euclidean point distances.
pub fn chamfer(x: &[Point3], y: &[Point3]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(MetricsError::InvalidArgument("chamfer on an empty point set".into()));
    }
    let one_way = |a: &[Point3], b: &[Point3]| {
        a.iter()
            .map(|p| b.iter().map(|q| sq(p, q)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / a.len() as f64
    };
    Ok(one_way(x, y) + one_way(y, x))
}

/// Minimum-cost assignment for a square `n × n` row-major cost matrix.
/// Returns `assign[row] = col`.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    // Shortest augmenting paths with row/column potentials, 1-based.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.fill(inf);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

/// Earth mover's distance: total squared-Euclidean cost of the optimal
/// one-to-one matching between equal-size point sets.
pub fn emd(x: &[Point3], y: &[Point3]) -> Result<f64> {
    if x.is_empty() {
        return Err(MetricsError::InvalidArgument("emd on an empty point set".into()));
    }
    check_len(x.len(), y.len(), "emd point sets")?;
    let n = x.len();
    let cost: Vec<f64> = x.iter().flat_map(|p| y.iter().map(move |q| sq(p, q))).collect();
    let assign = min_cost_assignment(&cost, n);
    Ok(assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetDistance {
    Cd,
    Emd,
}

/// Leave-one-out 1-NN two-sample accuracy in percent over `S_g ∪ S_r`
/// (ordered generated first). Nearest-neighbour ties go to the lower index.
pub fn one_nna(generated: &[Vec<Point3>], reference: &[Vec<Point3>], distance: SetDistance) -> Result<f64> {
    check_len(generated.len(), reference.len(), "1-NNA set sizes")?;
    if generated.len() < 2 {
        return Err(MetricsError::InvalidArgument("1-NNA needs at least 2 sets per side".into()));
    }
    let all: Vec<&Vec<Point3>> = generated.iter().chain(reference).collect();
    let m = all.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    let dists = pairs
        .par_iter()
        .map(|&(i, j)| match distance {
            SetDistance::Cd => chamfer(all[i], all[j]),
            SetDistance::Emd => emd(all[i], all[j]),
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut d = vec![0.0; m * m];
    for (&(i, j), &v) in pairs.iter().zip(&dists) {
        d[i * m + j] = v;
        d[j * m + i] = v;
    }
    let half = generated.len();
    let correct = (0..m)
        .filter(|&i| {
            let nn = (0..m)
                .filter(|&j| j != i)
                .min_by(|&a, &b| d[i * m + a].total_cmp(&d[i * m + b]).then(a.cmp(&b)))
                .unwrap();
            (nn < half) == (i < half)
        })
        .count();
    Ok(100.0 * correct as f64 / m as f64)
}

/// Sorted fixed-seed subset of `count` vertex indices out of `n`.
pub fn subsample_indices(n: usize, count: usize, seed: u64) -> Vec<usize> {
    if count >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, count).into_vec();
    idx.sort_unstable();
    idx
}

/// One-sample t statistic and two-sided p-value against `hypothesized_mean`.
pub fn one_sample_ttest(values: &[f64], hypothesized_mean: f64) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(MetricsError::InvalidArgument(format!("t-test needs at least 2 values, got {n}")));
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Err(MetricsError::ZeroVariance("t-test sample"));
    }
    let t = (m - hypothesized_mean) / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| MetricsError::InvalidArgument(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok((t, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn cloud(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Vec<Point3> {
        (0..n)
            .map(|_| {
                [
                    shift + rng.sample::<f64, _>(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                ]
            })
            .collect()
    }

    /// Explicit least-squares fit and residual-based R².
    fn r2_oracle(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let slope = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>()
            / x.iter().map(|a| (a - mx).powi(2)).sum::<f64>();
        let icpt = my - slope * mx;
        let res: f64 = x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
        let tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        (1.0 - res / tot).max(0.0)
    }

    #[test]
    fn correlation_identities() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pcc(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pcc(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pcc(&x, &[1.0; 4]), Err(MetricsError::ZeroVariance(_))));
        assert_eq!(pbc(&[0, 1, 0, 1], &[1.0, 1.0, 3.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn pbc_matches_textbook_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = randn(&mut rng, 40);
        let b: Vec<u8> = (0..40).map(|i| u8::from(i % 3 == 0)).collect();
        // Textbook form with the population standard deviation.
        let n = 40.0;
        let m = v.iter().sum::<f64>() / n;
        let sn = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
        let ones: Vec<f64> = v.iter().zip(&b).filter(|(_, &c)| c == 1).map(|(x, _)| *x).collect();
        let zeros: Vec<f64> = v.iter().zip(&b).filter(|(_, &c)| c == 0).map(|(x, _)| *x).collect();
        let (p, q) = (ones.len() as f64 / n, zeros.len() as f64 / n);
        let m1 = ones.iter().sum::<f64>() / ones.len() as f64;
        let m0 = zeros.iter().sum::<f64>() / zeros.len() as f64;
        let want = (m1 - m0) / sn * (p * q).sqrt();
        assert!((pbc(&b, &v).unwrap() - want).abs() < 1e-12);
        let bf: Vec<f64> = b.iter().map(|&c| c as f64).collect();
        assert!((pcc(&bf, &v).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn pcc_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, y) = (randn(&mut rng, 50), randn(&mut rng, 50));
        let n = 50.0;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|a| a * a).sum();
        let want = (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
        assert!((pcc(&x, &y).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn sap_matches_regression_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 200;
        let label: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let cont = randn(&mut rng, n);
        let latents: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                vec![
                    label[i] + 0.01 * rng.sample::<f64, _>(StandardNormal),
                    cont[i] * 3.0 + 0.5 * rng.sample::<f64, _>(StandardNormal),
                    rng.sample(StandardNormal),
                ]
            })
            .collect();
        let factors = vec![label, cont];
        let res = sap(&latents, &factors).unwrap();
        for j in 0..2 {
            let mut col: Vec<f64> = (0..3)
                .map(|i| {
                    let xi: Vec<f64> = latents.iter().map(|l| l[i]).collect();
                    r2_oracle(&xi, &factors[j])
                })
                .collect();
            col.sort_by(|a, b| b.total_cmp(a));
            assert!((res.per_factor[j] - (col[0] - col[1])).abs() < 1e-9);
        }
        assert!((res.mean - (res.per_factor[0] + res.per_factor[1]) / 2.0).abs() < 1e-15);
        assert!(res.per_factor[0] > 0.9);

        let one = sap(&(0..10).map(|i| vec![i as f64, 0.0, 0.0]).collect::<Vec<_>>(), &[(0..10).map(|i| i as f64).collect()]).unwrap();
        assert_eq!(one.per_factor, vec![1.0]);
    }

    #[test]
    fn sap_invariant_to_affine_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = randn(&mut rng, 30);
        let lat: Vec<Vec<f64>> = f.iter().map(|v| vec![v + 0.3 * rng.sample::<f64, _>(StandardNormal), rng.sample(StandardNormal)]).collect();
        let scaled: Vec<Vec<f64>> = lat.iter().map(|l| vec![-4.0 * l[0] + 2.0, l[1]]).collect();
        let (a, b) = (sap(&lat, &[f.clone()]).unwrap(), sap(&scaled, &[f]).unwrap());
        assert!((a.mean - b.mean).abs() < 1e-12);
    }

    #[test]
    fn knn_basics() {
        let train = [0.0, 0.1, 0.2, 10.0, 10.1, 10.2];
        let labels = [0u8, 0, 0, 1, 1, 1];
        assert_eq!(knn_classify(&train, &labels, &[0.05, 10.05], &[0, 1], 3).unwrap(), 100.0);
        assert_eq!(knn_regress(&[1.0, 2.0], &[3.0, 4.0], &[1.0, 2.0], &[3.0, 4.0], 1).unwrap(), 0.0);
        let got = knn_regress(&train, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], &[0.0], &[2.0], 2).unwrap();
        assert!((got - (2.0f64 - 0.5).powi(2)).abs() < 1e-12);
        assert!(knn_classify(&train, &labels, &[0.0], &[0], 7).is_err());
    }

    #[test]
    fn recon_error_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = vec![cloud(&mut rng, 10, 0.0), cloud(&mut rng, 10, 0.0)];
        assert_eq!(recon_error(&a, &a).unwrap(), 0.0);
        let mut shifted = a.clone();
        shifted[0][3][0] += 1.0;
        shifted[1][3][0] += 1.0;
        assert!((recon_error(&a, &shifted).unwrap() - 0.1).abs() < 1e-12);
        let b = vec![cloud(&mut rng, 10, 0.0), cloud(&mut rng, 10, 0.0)];
        let mut naive = 0.0;
        for m in 0..2 {
            let mut s = 0.0;
            for v in 0..10 {
                for c in 0..3 {
                    s += (a[m][v][c] - b[m][v][c]) * (a[m][v][c] - b[m][v][c]);
                }
            }
            naive += s / 10.0;
        }
        assert!((recon_error(&a, &b).unwrap() - naive / 2.0).abs() < 1e-12);
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn emd_matches_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let perms = permutations(8);
        assert_eq!(perms.len(), 40320);
        for _ in 0..5 {
            let (x, y) = (cloud(&mut rng, 8, 0.0), cloud(&mut rng, 8, 0.5));
            let best = perms
                .iter()
                .map(|p| p.iter().enumerate().map(|(i, &j)| sq(&x[i], &y[j])).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            let got = emd(&x, &y).unwrap();
            assert!((got - best).abs() <= 1e-12 * best.max(1.0), "{got} vs {best}");
        }
    }

    #[test]
    fn set_distance_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = cloud(&mut rng, 20, 0.0);
        let y = cloud(&mut rng, 20, 0.0);
        assert_eq!(chamfer(&x, &x).unwrap(), 0.0);
        assert_eq!(emd(&x, &x).unwrap(), 0.0);
        let mut swapped = x.clone();
        swapped.swap(0, 5);
        assert_eq!(emd(&x, &swapped).unwrap(), 0.0);
        assert_eq!(chamfer(&x, &y).unwrap(), chamfer(&y, &x).unwrap());
        assert!((emd(&x, &y).unwrap() - emd(&y, &x).unwrap()).abs() < 1e-12);
        assert!(emd(&x, &y[..10]).is_err());
    }

    #[test]
    fn one_nna_separated_and_mixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g: Vec<_> = (0..6).map(|_| cloud(&mut rng, 16, 0.0)).collect();
        let r: Vec<_> = (0..6).map(|_| cloud(&mut rng, 16, 50.0)).collect();
        assert_eq!(one_nna(&g, &r, SetDistance::Cd).unwrap(), 100.0);
        assert_eq!(one_nna(&g, &r, SetDistance::Emd).unwrap(), 100.0);

        let pool: Vec<_> = (0..40).map(|_| cloud(&mut rng, 16, 0.0)).collect();
        let mut total = 0.0;
        for rep in 0..20u64 {
            let mut order: Vec<usize> = (0..40).collect();
            rand::seq::SliceRandom::shuffle(&mut order[..], &mut ChaCha8Rng::seed_from_u64(rep));
            let a: Vec<_> = order[..20].iter().map(|&i| pool[i].clone()).collect();
            let b: Vec<_> = order[20..].iter().map(|&i| pool[i].clone()).collect();
            total += one_nna(&a, &b, SetDistance::Cd).unwrap();
        }
        let avg = total / 20.0;
        assert!((40.0..=60.0).contains(&avg), "{avg}");
    }

    #[test]
    fn subsample_is_sorted_and_seeded() {
        let a = subsample_indices(1024, 256, 3);
        assert_eq!(a.len(), 256);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, subsample_indices(1024, 256, 3));
        assert_eq!(subsample_indices(10, 20, 0), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn ttest_cases() {
        let (t, p) = one_sample_ttest(&[1.0, 2.0, 3.0], 2.0).unwrap();
        assert_eq!(t, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
        let v = [1.2, 1.4, 1.1, 1.3];
        let (t, p) = one_sample_ttest(&v, 0.0).unwrap();
        // t = 1.25 / (s/2) with s² = 0.05/3; for 3 degrees of freedom
        // P(|T| ≤ t) = (2/π)(θ + sinθ cosθ), θ = atan(t/√3).
        let t_want = 1.25 / ((0.05f64 / 3.0).sqrt() / 2.0);
        assert!((t - t_want).abs() < 1e-9);
        let th = (t_want / 3f64.sqrt()).atan();
        let p_want = 1.0 - 2.0 / std::f64::consts::PI * (th + th.sin() * th.cos());
        assert!((p - p_want).abs() / p_want < 1e-8, "{p} vs {p_want}");
        assert!(one_sample_ttest(&[1.0], 0.0).is_err());
        assert!(one_sample_ttest(&[1.0, 1.0], 0.0).is_err());
    }
}

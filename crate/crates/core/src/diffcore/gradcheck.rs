use serde::Serialize;

use super::{DiffError, Graph, ParamStore, Result, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Lower bound on the denominator of the relative error.
    pub floor: f64,
    /// Check at most this many evenly spaced entries per parameter.
    pub max_entries: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            max_entries: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

/// Compares backprop gradients against central differences of `loss`.
///
/// `loss` must be deterministic: it is re-evaluated twice per checked entry.
pub fn grad_check<F>(store: &mut ParamStore, opts: GradCheckOptions, mut loss: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Graph) -> Result<Var>,
{
    let eval = |store: &ParamStore, loss: &mut F| -> Result<f64> {
        let mut g = Graph::new();
        let v = loss(store, &mut g)?;
        let out = g.value(v).item();
        if !out.is_finite() {
            return Err(DiffError::NonFinite("loss".into()));
        }
        Ok(out)
    };

    store.zero_grads();
    let mut g = Graph::new();
    let v = loss(store, &mut g)?;
    g.backward(v)?;
    g.accumulate_param_grads(store);

    let ids: Vec<_> = store.ids().collect();
    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let len = store.value(id).len();
        let stride = match opts.max_entries {
            Some(m) if m > 0 && len > m => len.div_ceil(m),
            _ => 1,
        };
        let analytic = store.grad(id).data().to_vec();
        let mut check = ParamCheck {
            name: store.name(id).to_string(),
            checked: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        };
        for i in (0..len).step_by(stride) {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + opts.step;
            let plus = eval(store, &mut loss);
            store.value_mut(id).data_mut()[i] = orig - opts.step;
            let minus = eval(store, &mut loss);
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.step);
            let a = analytic[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            check.checked += 1;
            check.max_abs_error = check.max_abs_error.max(abs);
            check.max_rel_error = check.max_rel_error.max(rel);
        }
        params.push(check);
    }
    Ok(GradCheckReport { params })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::diffcore::Tensor;
    use crate::mesh::{SparseMatrix, SpiralIndexSet};

    fn sum_of_squares(g: &mut Graph, v: Var) -> Result<Var> {
        let t = g.value(v).clone();
        let val = t.data().iter().map(|x| x * x).sum();
        let grad = Tensor::new(t.shape(), t.data().iter().map(|x| 2.0 * x).collect())?;
        g.scalar_fn(val, vec![(v, grad)])
    }

    #[test]
    fn linear_layer_gradients_match() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::standard_normal(&[5, 4], 1)).unwrap();
        let b = store.add("b", Tensor::standard_normal(&[4], 2)).unwrap();
        let x = Tensor::standard_normal(&[3, 5], 3);
        let report = grad_check(&mut store, GradCheckOptions::default(), |s, g| {
            let xv = g.constant(x.clone());
            let (wv, bv) = (g.param(s, w), g.param(s, b));
            let y = g.linear(xv, wv, Some(bv))?;
            let y = g.elu(y);
            sum_of_squares(g, y)
        })
        .unwrap();
        assert!(report.max_rel_error() < 1e-6, "{report:?}");
    }

    #[test]
    fn spiral_sparse_reparam_chain_matches() {
        let rows = vec![vec![0, 1, 2], vec![1, 2, 3], vec![2, 0, 3]];
        let spirals = Arc::new(SpiralIndexSet::from_rows(3, 1, &rows).unwrap());
        let down = Arc::new(SparseMatrix::from_triplets(2, 3, vec![(0, 0, 1.0), (1, 2, 0.5), (1, 1, 0.5)]).unwrap());
        let mut store = ParamStore::new();
        let x0 = store.add("x", Tensor::standard_normal(&[2, 3, 2], 5)).unwrap();
        let w = store.add("w", Tensor::standard_normal(&[6, 3], 6)).unwrap();
        let wm = store.add("wm", Tensor::standard_normal(&[6, 2], 7)).unwrap();
        let wl = store.add("wl", Tensor::standard_normal(&[6, 2], 8)).unwrap();
        let eps = Tensor::standard_normal(&[2, 2], 9);
        let report = grad_check(&mut store, GradCheckOptions::default(), |s, g| {
            let x = g.param(s, x0);
            let h = g.gather_spiral(x, &spirals)?;
            let wv = g.param(s, w);
            let h = g.linear(h, wv, None)?;
            let h = g.elu(h);
            let h = g.sparse_apply(&down, h)?;
            let h = g.reshape(h, &[2, 6])?;
            let (a, b) = (g.param(s, wm), g.param(s, wl));
            let mu = g.linear(h, a, None)?;
            let lv = g.linear(h, b, None)?;
            let z = g.reparameterize(mu, lv, eps.clone())?;
            let l = sum_of_squares(g, z)?;
            g.weighted_sum(&[(l, 0.5)])
        })
        .unwrap();
        assert!(report.max_rel_error() < 1e-6, "{report:?}");
        assert_eq!(report.params.len(), 4);
    }

    #[test]
    fn fused_spiral_conv_gradients_match() {
        let rows: Vec<Vec<usize>> = (0..300).map(|i| vec![i, (i + 3) % 300, 300]).collect();
        let spirals = Arc::new(SpiralIndexSet::from_rows(300, 1, &rows).unwrap());
        let mut store = ParamStore::new();
        let x0 = store.add("x", Tensor::standard_normal(&[2, 300, 2], 1)).unwrap();
        let w = store.add("w", Tensor::standard_normal(&[6, 3], 2)).unwrap();
        let b = store.add("b", Tensor::standard_normal(&[3], 3)).unwrap();
        let opts = GradCheckOptions {
            max_entries: Some(40),
            ..Default::default()
        };
        let report = grad_check(&mut store, opts, |s, g| {
            let x = g.param(s, x0);
            let (wv, bv) = (g.param(s, w), g.param(s, b));
            let y = g.spiral_conv(x, &spirals, wv, bv)?;
            let y = g.elu(y);
            sum_of_squares(g, y)
        })
        .unwrap();
        assert!(report.max_rel_error() < 1e-6, "{report:?}");
    }

    #[test]
    fn nan_loss_is_an_error() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::full(&[1], 1.0)).unwrap();
        let err = grad_check(&mut store, GradCheckOptions::default(), |s, g| {
            let v = g.param(s, w);
            g.scalar_fn(f64::NAN, vec![(v, Tensor::full(&[1], 0.0))])
        })
        .unwrap_err();
        assert!(matches!(err, DiffError::NonFinite(_)));
    }
}

use serde::Serialize;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::Result;
use crate::tensor::Scalar;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: Scalar,
    /// Pass threshold on the relative error.
    pub tol: Scalar,
    /// Relative error is `|a − n| / max(|a|, |n|, floor)`; the floor keeps
    /// entries whose true gradient is zero from dividing noise by noise.
    pub floor: Scalar,
    /// Check at most this many evenly spaced entries per tensor.
    pub max_entries: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-5, tol: 1e-4, floor: 1e-6, max_entries: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub numel: usize,
    pub checked: usize,
    pub max_rel_error: Scalar,
    pub max_abs_error: Scalar,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tol: Scalar,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_error(&self) -> Scalar {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, Scalar::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }
}

fn sample_indices(n: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
        _ => (0..n).collect(),
    }
}

/// Compares analytic gradients of the scalar built by `f` against central
/// differences, for every trainable tensor in `store`.
///
/// `store` is restored to its original values on return.
pub fn grad_check<F>(store: &mut ParamStore, mut f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new();
        let loss = f(&mut g, store)?;
        g.param_grads(loss, store)?
    };
    let mut eval = |store: &ParamStore| -> Result<Scalar> {
        let mut g = Graph::no_grad();
        let loss = f(&mut g, store)?;
        Ok(g.value(loss).item())
    };
    let names: Vec<String> = store.iter().filter(|p| p.trainable).map(|p| p.name.clone()).collect();
    let mut entries = Vec::with_capacity(names.len());
    for name in names {
        let ga = analytic.get(&name).expect("every trainable parameter has a gradient").clone();
        let numel = ga.numel();
        let idx = sample_indices(numel, opts.max_entries);
        let (mut max_rel, mut max_abs, mut worst) = (0.0 as Scalar, 0.0 as Scalar, 0usize);
        for &i in &idx {
            let orig = store.get(&name).expect("listed").value.data()[i];
            store.get_mut(&name)?.value.data_mut()[i] = orig + opts.step;
            let fp = eval(store)?;
            store.get_mut(&name)?.value.data_mut()[i] = orig - opts.step;
            let fm = eval(store)?;
            store.get_mut(&name)?.value.data_mut()[i] = orig;
            let num = (fp - fm) / (2.0 * opts.step);
            let a = ga.data()[i];
            let abs = (a - num).abs();
            let rel = abs / a.abs().max(num.abs()).max(opts.floor);
            if !(rel <= max_rel) {
                max_rel = rel;
                worst = i;
            }
            max_abs = max_abs.max(abs);
        }
        entries.push(GradCheckEntry {
            name,
            numel,
            checked: idx.len(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
            worst_index: worst,
            passed: max_rel < opts.tol,
        });
    }
    Ok(GradCheckReport { tol: opts.tol, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{CustomOp, Role};
    use crate::tensor::Tensor;

    #[test]
    fn sum_has_zero_error() {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::from_vec(vec![0.3, -1.0, 2.5]), Role::Head, None).unwrap();
        let r = grad_check(
            &mut s,
            |g, s| {
                let x = g.param(s, "x")?;
                Ok(g.sum_all(x))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.passed());
        assert!(r.max_rel_error() < 1e-9);
    }

    struct WrongSquare;

    impl CustomOp for WrongSquare {
        fn name(&self) -> &str {
            "wrong_square"
        }
        fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
            Ok(inputs[0].map(|v| v * v))
        }
        fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor) -> Vec<Tensor> {
            // Missing factor 2.
            let d = inputs[0].data().iter().zip(grad.data()).map(|(x, g)| x * g).collect();
            vec![Tensor::new(inputs[0].shape(), d).unwrap()]
        }
    }

    #[test]
    fn wrong_rule_is_reported() {
        let mut s = ParamStore::new();
        s.insert("ok", Tensor::from_vec(vec![0.7]), Role::Head, None).unwrap();
        s.insert("bad", Tensor::from_vec(vec![0.5, 1.5]), Role::Head, None).unwrap();
        let r = grad_check(
            &mut s,
            |g, s| {
                let ok = g.param(s, "ok")?;
                let bad = g.param(s, "bad")?;
                let sq = g.custom(&[bad], Box::new(WrongSquare))?;
                let t = g.sum_all(sq);
                let o = g.sin(ok);
                g.add(t, o)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!r.passed());
        let failed: Vec<&str> = r.failures().map(|e| e.name.as_str()).collect();
        assert_eq!(failed, vec!["bad"]);
    }

    #[test]
    fn store_is_restored() {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::from_vec(vec![0.1, 0.2]), Role::Head, None).unwrap();
        let before = s.clone();
        grad_check(
            &mut s,
            |g, s| {
                let x = g.param(s, "x")?;
                let y = g.square(x);
                Ok(g.sum_all(y))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn sampling_is_even() {
        assert_eq!(sample_indices(10, Some(5)), vec![0, 2, 4, 6, 8]);
        assert_eq!(sample_indices(3, Some(5)), vec![0, 1, 2]);
    }
}

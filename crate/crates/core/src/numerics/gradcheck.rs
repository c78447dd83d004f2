use super::graph::{Graph, Var};
use super::param::ParamStore;
use crate::error::{MrtError, Result};

/// Denominator floor for relative errors, so gradients that are zero on both
/// sides compare by absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

fn evaluate<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g>, &'g ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let v = g.scalar(out);
    if !v.is_finite() {
        return Err(MrtError::Numerical(format!(
            "gradient check aborted: objective evaluated to {v}"
        )));
    }
    Ok(v)
}

/// Checks every scalar of every parameter in `store` against the central
/// difference `(f(w+h) - f(w-h)) / 2h`.
pub fn grad_check<F>(store: &mut ParamStore, f: F, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&mut Graph<'g>, &'g ParamStore) -> Result<Var>,
{
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new();
        let out = f(&mut g, store)?;
        if !g.scalar(out).is_finite() {
            return Err(MrtError::Numerical(format!(
                "gradient check aborted: objective evaluated to {}",
                g.scalar(out)
            )));
        }
        let grads = g.backward(out)?;
        store
            .ids()
            .map(|id| match grads.param(store, id) {
                Some(t) => t.data().to_vec(),
                None => vec![0.0; store.value(id).len()],
            })
            .collect()
    };

    let mut params = Vec::with_capacity(store.len());
    let mut overall = 0.0f64;
    for id in store.ids().collect::<Vec<_>>() {
        let n = store.value(id).len();
        let (mut max_rel, mut max_abs) = (0.0f64, 0.0f64);
        for i in 0..n {
            let orig = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + h;
            let plus = evaluate(store, &f);
            store.get_mut(id).value.data_mut()[i] = orig - h;
            let minus = evaluate(store, &f);
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * h);
            let a = analytic[id.index()][i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            max_rel = max_rel.max(rel);
            max_abs = max_abs.max(abs);
        }
        overall = overall.max(max_rel);
        params.push(ParamCheck {
            name: store.get(id).name.clone(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    Ok(GradCheckReport {
        params,
        max_rel_error: overall,
        tolerance: tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add(
            "a",
            Tensor::new([2, 3], vec![0.3, -1.2, 2.0, 0.7, 0.1, -0.4]).unwrap(),
        )
        .unwrap();
        s
    }

    #[test]
    fn sum_of_squares_agrees() {
        let mut s = store();
        let report = grad_check(
            &mut s,
            |g, st| {
                let a = g.param(st, st.find("a").unwrap());
                let sq = g.square(a);
                Ok(g.sum_all(sq))
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
        assert!(report.passed());
    }

    #[test]
    fn corrupted_backward_is_caught() {
        let mut s = store();
        let report = grad_check(
            &mut s,
            |g, st| {
                let a = g.param(st, st.find("a").unwrap());
                // forward sin, backward claims sin as the derivative
                let y = g.custom_unary(
                    a,
                    |x| x.map(f64::sin),
                    |x, _y, gy| x.zip_map(gy, |xv, gv| xv.sin() * gv).unwrap(),
                );
                Ok(g.sum_all(y))
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn non_finite_objective_aborts() {
        let mut s = store();
        let err = grad_check(
            &mut s,
            |g, st| {
                let a = g.param(st, st.find("a").unwrap());
                let s = g.sum_all(a);
                Ok(g.scale(s, f64::INFINITY))
            },
            1e-5,
            1e-4,
        )
        .unwrap_err();
        assert!(matches!(err, MrtError::Numerical(_)));
    }
}

//! Finite-difference gradient checking.

use crate::{GradError, Graph, Mat, ParamId, ParamStore, Result, Var};

/// Outcome of [`check_gradients`] for one input.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Mat,
    pub numeric: Mat,
    pub rel_err: f64,
}

/// `||a - n|| / max(||a|| + ||n||, 1e-12)` over all entries.
pub fn relative_error(analytic: &Mat, numeric: &Mat) -> f64 {
    let diff = (analytic - numeric).mapv(|v| v * v).sum().sqrt();
    let norm = analytic.mapv(|v| v * v).sum().sqrt() + numeric.mapv(|v| v * v).sum().sqrt();
    diff / norm.max(1e-12)
}

/// Central finite differences of a scalar function of several matrices,
/// taken w.r.t. `inputs[which]`.
pub fn numerical_gradient<F>(f: &F, inputs: &[Mat], which: usize, step: f64) -> Mat
where
    F: Fn(&[Mat]) -> f64,
{
    let mut work = inputs.to_vec();
    let mut grad = Mat::zeros(inputs[which].dim());
    for idx in 0..grad.len() {
        let (r, c) = (idx / grad.ncols(), idx % grad.ncols());
        let orig = work[which][[r, c]];
        work[which][[r, c]] = orig + step;
        let plus = f(&work);
        work[which][[r, c]] = orig - step;
        let minus = f(&work);
        work[which][[r, c]] = orig;
        grad[[r, c]] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Compares reverse-mode gradients of `build` against central differences
/// for every input. `build` receives the graph and one leaf per input and
/// must return a scalar node.
pub fn check_gradients<F>(build: F, inputs: &[Mat], step: f64, tol: f64) -> Result<Vec<GradCheck>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|m| g.input(m.clone())).collect();
    let out = build(&mut g, &leaves)?;
    let grads = g.backward(out)?;

    let eval = |xs: &[Mat]| -> f64 {
        let mut g = Graph::new();
        let leaves: Vec<Var> = xs.iter().map(|m| g.input(m.clone())).collect();
        let out = build(&mut g, &leaves).expect("graph rebuilt with identical shapes");
        g.scalar(out)
    };

    let mut reports = Vec::with_capacity(inputs.len());
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads
            .wrt(*leaf)
            .cloned()
            .unwrap_or_else(|| Mat::zeros(inputs[i].dim()));
        let numeric = numerical_gradient(&eval, inputs, i, step);
        let rel_err = relative_error(&analytic, &numeric);
        if rel_err > tol {
            return Err(GradError::GradCheck { input: i, rel_err, tol });
        }
        reports.push(GradCheck { analytic, numeric, rel_err });
    }
    Ok(reports)
}

/// Like [`check_gradients`], but differentiates with respect to parameters
/// held in `store`. `build` is rerun on a perturbed copy of the store for
/// every finite difference and must not fail.
pub fn check_param_gradients<F, E>(
    store: &ParamStore,
    ids: &[ParamId],
    build: F,
    step: f64,
    tol: f64,
) -> Result<Vec<GradCheck>>
where
    F: Fn(&mut Graph, &ParamStore) -> std::result::Result<Var, E>,
    E: std::fmt::Debug,
{
    let mut g = Graph::new();
    let out = build(&mut g, store).expect("graph construction failed");
    let grads = g.backward(out)?;
    let analytic_all: std::collections::HashMap<ParamId, Mat> =
        grads.params().into_iter().map(|(id, m)| (id, m.clone())).collect();

    let mut work = store.clone();
    let eval = |s: &ParamStore| -> f64 {
        let mut g = Graph::new();
        let out = build(&mut g, s).expect("graph rebuilt with identical shapes");
        g.scalar(out)
    };

    let mut reports = Vec::with_capacity(ids.len());
    for (i, &id) in ids.iter().enumerate() {
        let dim = store.get(id).dim();
        let analytic = analytic_all.get(&id).cloned().unwrap_or_else(|| Mat::zeros(dim));
        let mut numeric = Mat::zeros(dim);
        for r in 0..dim.0 {
            for c in 0..dim.1 {
                let orig = work.get(id)[[r, c]];
                work.get_mut(id)[[r, c]] = orig + step;
                let plus = eval(&work);
                work.get_mut(id)[[r, c]] = orig - step;
                let minus = eval(&work);
                work.get_mut(id)[[r, c]] = orig;
                numeric[[r, c]] = (plus - minus) / (2.0 * step);
            }
        }
        let rel_err = relative_error(&analytic, &numeric);
        if rel_err > tol {
            return Err(GradError::GradCheck { input: i, rel_err, tol });
        }
        reports.push(GradCheck { analytic, numeric, rel_err });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    const STEP: f64 = 1e-5;
    const TOL: f64 = 1e-6;

    #[test]
    fn matmul_and_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs = [random(3, 4, &mut rng), random(4, 2, &mut rng), random(5, 4, &mut rng)];
        check_gradients(
            |g, v| {
                let ab = g.matmul(v[0], v[1])?;
                let ct = g.matmul_t(v[2], v[0])?;
                let t = g.transpose(ab);
                let s1 = g.sum(t);
                let sq = g.mul(ct, ct)?;
                let s2 = g.sum(sq);
                g.add(s1, s2)
            },
            &inputs,
            STEP,
            TOL,
        )
        .unwrap();
    }

    #[test]
    fn elementwise_and_broadcast_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs = [random(3, 4, &mut rng), random(1, 4, &mut rng), random(3, 4, &mut rng)];
        check_gradients(
            |g, v| {
                let a = g.add_row(v[0], v[1])?;
                let b = g.mul_row(a, v[1])?;
                let c = g.sub(b, v[2])?;
                let d = g.gelu(c);
                let e = g.tanh(d);
                let f = g.sigmoid(e);
                let h = g.scale(f, 1.7);
                let k = g.mul(h, v[2])?;
                Ok(g.sum(k))
            },
            &inputs,
            STEP,
            TOL,
        )
        .unwrap();
    }

    #[test]
    fn softmax_and_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs = [random(4, 5, &mut rng), random(4, 5, &mut rng)];
        check_gradients(
            |g, v| {
                let s = g.softmax_rows(v[0]);
                let n = g.normalize_rows(v[1], 1e-5);
                let p = g.mul(s, n)?;
                Ok(g.sum(p))
            },
            &inputs,
            STEP,
            TOL,
        )
        .unwrap();
    }

    #[test]
    fn structural_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inputs = [random(4, 3, &mut rng), random(2, 3, &mut rng), random(1, 3, &mut rng)];
        let weights = random(9, 6, &mut rng);
        check_gradients(
            |g, v| {
                let rows = g.concat_rows(&[v[0], v[1]])?;
                let sel = g.select_rows(rows, &[0, 5, 5, 2]);
                let rep = g.repeat_row(v[2], 4)?;
                let cols = g.concat_cols(&[sel, rep])?;
                let sr = g.slice_rows(cols, 1, 4);
                let sc = g.slice_cols(sr, 2, 6);
                let m = g.mean_rows(sc);
                let w = g.input(weights.slice(ndarray::s![0..4, 0..1]).to_owned());
                let out = g.matmul(m, w)?;
                let sq = g.mul(sc, sc)?;
                let s = g.sum(sq);
                g.add(out, s)
            },
            &inputs,
            STEP,
            TOL,
        )
        .unwrap();
    }

    #[test]
    fn pair_contract_and_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs = [random(3, 8, &mut rng), random(3, 4, &mut rng)];
        check_gradients(
            |g, v| {
                let c = g.pair_contract(v[0], v[1], 2)?;
                g.bce_with_logits(c, &[1.0, 0.0, 0.0, 1.0, 0.5, 1.0])
            },
            &inputs,
            STEP,
            TOL,
        )
        .unwrap();
    }

    #[test]
    fn parameter_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let w = store.glorot("w", 3, 2, crate::ParamGroup::Heads, &mut rng);
        let b = store.uniform("b", 1, 2, 0.5, crate::ParamGroup::Heads, &mut rng);
        let x = random(4, 3, &mut rng);
        let reports = check_param_gradients(
            &store,
            &[w, b],
            |g, s| {
                let xv = g.input(x.clone());
                let wv = g.param(s, w);
                let bv = g.param(s, b);
                let h = g.matmul(xv, wv)?;
                let h = g.add_row(h, bv)?;
                let t = g.tanh(h);
                let sq = g.mul(t, t)?;
                Ok::<_, GradError>(g.sum(sq))
            },
            STEP,
            TOL,
        )
        .unwrap();
        assert_eq!(reports.len(), 2);
    }

    #[test]
    fn failing_check_is_reported() {
        // relu kink at exactly zero: analytic 0, numeric 0.5.
        let inputs = [Array2::zeros((1, 1))];
        let err = check_gradients(
            |g, v| {
                let r = g.relu(v[0]);
                Ok(g.sum(r))
            },
            &inputs,
            STEP,
            TOL,
        )
        .unwrap_err();
        assert!(matches!(err, GradError::GradCheck { input: 0, .. }));
    }
}

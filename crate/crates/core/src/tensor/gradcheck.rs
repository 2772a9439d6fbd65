use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Outcome of comparing analytic and numerical gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|a - n| / max(1, |a|, |n|)` over the checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(leaf, coordinate)` with the largest error.
    pub worst: Option<(usize, usize)>,
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with step `1e-5 * (1 + |x|)`. At most `max_coords`
/// evenly spaced coordinates are checked per leaf.
pub fn grad_check<F>(leaves: &[Tensor], f: F, max_coords: usize) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vars = values.iter().map(|v| t.leaf(v.clone())).collect::<Result<Vec<_>>>()?;
        let out = f(&mut t, &vars)?;
        Ok(t.value(out).item())
    };

    let mut tape = Tape::new();
    let vars = leaves.iter().map(|v| tape.leaf(v.clone())).collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let mut work: Vec<Tensor> = leaves.to_vec();
    for (li, leaf) in leaves.iter().enumerate() {
        let n = leaf.numel();
        let stride = n.div_ceil(max_coords.max(1)).max(1);
        for c in (0..n).step_by(stride) {
            let x = leaf.data()[c];
            let h = 1e-5 * (1.0 + x.abs());
            work[li].data_mut()[c] = x + h;
            let up = eval(&work)?;
            work[li].data_mut()[c] = x - h;
            let down = eval(&work)?;
            work[li].data_mut()[c] = x;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(vars[li]).data()[c];
            let err = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((li, c));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Fixed random projection to a scalar so every output coordinate
    /// matters.
    fn project(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = t.value(y).numel();
        let w = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        t.weighted_sum(y, w)
    }

    const TOL: f64 = 1e-8;

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let leaves = [rand_tensor(&mut rng, &[5, 4]), rand_tensor(&mut rng, &[3, 4]), rand_tensor(&mut rng, &[3])];
        let r = grad_check(&leaves, |t, v| {
            let y = t.linear(v[0], v[1], v[2])?;
            project(t, y, 9)
        }, 200)
        .unwrap();
        assert!(r.max_rel_error < TOL, "{r:?}");
    }

    #[test]
    fn gather_concat_segment_mean_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let leaves = [rand_tensor(&mut rng, &[3, 3]), rand_tensor(&mut rng, &[2, 3])];
        let r = grad_check(&leaves, |t, v| {
            let all = t.concat_rows(vec![v[0], v[1]])?;
            let g = t.gather_rows(all, vec![4, 0, 0, 2, 3, 1])?;
            let m = t.segment_mean(g, vec![0, 1, 4, 6])?;
            project(t, m, 3)
        }, 200)
        .unwrap();
        assert!(r.max_rel_error < TOL, "{r:?}");
    }

    #[test]
    fn scaled_sum_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let leaves = [
            rand_tensor(&mut rng, &[4, 3]),
            rand_tensor(&mut rng, &[4, 3]),
            rand_tensor(&mut rng, &[3]),
            rand_tensor(&mut rng, &[3]),
        ];
        let r = grad_check(&leaves, |t, v| {
            let y = t.scaled_sum(vec![v[0], v[1]], vec![v[2], v[3]])?;
            project(t, y, 4)
        }, 200)
        .unwrap();
        assert!(r.max_rel_error < TOL, "{r:?}");
    }

    #[test]
    fn activation_gradients() {
        // values kept away from the relu kink
        let x = Tensor::vector(vec![-0.9, -0.3, 0.2, 0.7, 1.5]);
        let r = grad_check(&[x], |t, v| {
            let a = t.relu(v[0])?;
            let b = t.sigmoid(v[0])?;
            let c = t.add(a, b)?;
            let d = t.scale(c, 1.7)?;
            project(t, d, 5)
        }, 200)
        .unwrap();
        assert!(r.max_rel_error < TOL, "{r:?}");
    }

    #[test]
    fn dropout_gradient_uses_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor(&mut rng, &[20]);
        let r = grad_check(&[x], |t, v| {
            let mut drop_rng = ChaCha8Rng::seed_from_u64(11);
            let y = t.dropout(v[0], 0.4, true, &mut drop_rng)?;
            project(t, y, 6)
        }, 200)
        .unwrap();
        assert!(r.max_rel_error < TOL, "{r:?}");
    }

    #[test]
    fn loss_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let leaves = [rand_tensor(&mut rng, &[5, 3]), rand_tensor(&mut rng, &[4]), rand_tensor(&mut rng, &[6])];
        let r = grad_check(&leaves, |t, v| {
            let ce = t.softmax_cross_entropy(v[0], &[0, 2, 1, 1, 0])?;
            let bce = t.bce_with_logits(v[1], v[2])?;
            t.add(ce, bce)
        }, 200)
        .unwrap();
        assert!(r.max_rel_error < TOL, "{r:?}");
    }

    #[test]
    fn distmult_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let leaves = [rand_tensor(&mut rng, &[4, 3]), rand_tensor(&mut rng, &[4, 3]), rand_tensor(&mut rng, &[3])];
        let r = grad_check(&leaves, |t, v| {
            let s = t.row_distmult(v[0], v[1], v[2])?;
            project(t, s, 8)
        }, 200)
        .unwrap();
        assert!(r.max_rel_error < TOL, "{r:?}");
    }

    #[test]
    fn attention_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let leaves = [rand_tensor(&mut rng, &[5, 3]), rand_tensor(&mut rng, &[6])];
        let r = grad_check(&leaves, |t, v| {
            let y = t.attention_pool(v[0], v[1], vec![0, 3, 4], vec![0, 1, 2, 3, 4, 1, 4], vec![0, 3, 4, 7])?;
            project(t, y, 10)
        }, 200)
        .unwrap();
        assert!(r.max_rel_error < TOL, "{r:?}");
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x0 = rand_tensor(&mut rng, &[3, 2]);
        let w0 = rand_tensor(&mut rng, &[2, 2]);
        let b0 = rand_tensor(&mut rng, &[2]);
        let grad_of = |c1: f64, c2: f64| {
            let mut t = Tape::new();
            let x = t.leaf(x0.clone()).unwrap();
            let w = t.leaf(w0.clone()).unwrap();
            let b = t.leaf(b0.clone()).unwrap();
            let y = t.linear(x, w, b).unwrap();
            let s = t.sigmoid(y).unwrap();
            let l1 = project(&mut t, s, 1).unwrap();
            let l2 = t.sum(y).unwrap();
            let a = t.scale(l1, c1).unwrap();
            let bb = t.scale(l2, c2).unwrap();
            let l = t.add(a, bb).unwrap();
            t.backward(l).unwrap().get(w).data().to_vec()
        };
        let g1 = grad_of(1.0, 0.0);
        let g2 = grad_of(0.0, 1.0);
        let g = grad_of(2.0, -3.0);
        for i in 0..g.len() {
            assert!((g[i] - (2.0 * g1[i] - 3.0 * g2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu exactly at its kink: analytic 0, numerical 0.5
        let x = Tensor::vector(vec![0.0]);
        let r = grad_check(&[x], |t, v| {
            let y = t.relu(v[0])?;
            t.sum(y)
        }, 200)
        .unwrap();
        assert!(r.max_rel_error > 0.1);
    }
}

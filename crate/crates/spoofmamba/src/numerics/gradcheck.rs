//! Finite-difference gradient checking.
//!
//! Checks run in double precision with central differences at step 1e-4 and
//! compare against the analytic backward pass at a relative tolerance of
//! 1e-3. The loss is a randomly weighted sum of the op output so every
//! output element influences the scalar.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::Tensor;
use crate::Result;

pub const FD_STEP: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 1e-3;
/// Gradients below this magnitude are compared absolutely, not relatively.
pub const FD_ABS_FLOOR: f64 = 1e-7;

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct OpCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

impl OpCheck {
    pub fn line(&self) -> String {
        format!(
            "{:<40} max_rel_err {:>12.3e}  {}",
            self.name,
            self.max_rel_err,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn rel_err(a: f64, n: f64) -> f64 {
    let diff = (a - n).abs();
    let scale = a.abs().max(n.abs());
    if scale < FD_ABS_FLOOR {
        diff / FD_ABS_FLOOR
    } else {
        diff / scale
    }
}

/// Compare the analytic gradient of `build` w.r.t. each entry of each input
/// against central finite differences.
///
/// `build` must be pure: it receives a fresh graph plus leaf ids for the
/// inputs and returns the scalar loss node.
pub fn check<F>(name: &str, inputs: &[Tensor<f64>], build: F) -> Result<OpCheck>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let loss = build(&mut g, &ids)?;
        Ok(g.value(loss).item())
    };

    // analytic
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &ids)?;
    let mut grads = g.backward(loss)?;

    let mut max_err = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .take(ids[i])
            .unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * FD_STEP);
            let e = rel_err(analytic.data()[j], numeric);
            if e > max_err {
                max_err = e;
            }
        }
    }
    Ok(OpCheck {
        name: name.to_string(),
        max_rel_err: max_err,
        pass: max_err <= FD_REL_TOL,
    })
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Weighted-sum loss so the scalar depends on every output element.
fn weighted_loss(
    g: &mut Graph<f64>,
    out: NodeId,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId> {
    let shape = g.shape(out).to_vec();
    let w = g.constant(rand_tensor(rng, &shape, -1.0, 1.0));
    let prod = g.mul(out, w)?;
    g.sum_all(prod)
}

/// Finite-difference suite over the core differentiable ops, ≥5 random small
/// inputs per op.
pub fn core_op_suite(seed: u64) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let reps = 5;

    // unary ops; inputs kept away from kinks and singularities
    let unary: Vec<(&str, f64, f64, fn(&mut Graph<f64>, NodeId) -> Result<NodeId>)> = vec![
        ("neg", -2.0, 2.0, |g, x| g.neg(x)),
        ("abs", 0.2, 2.0, |g, x| g.abs(x)),
        ("exp", -2.0, 2.0, |g, x| g.exp(x)),
        ("ln", 0.2, 3.0, |g, x| g.ln(x)),
        ("sqrt", 0.2, 3.0, |g, x| g.sqrt(x)),
        ("sigmoid", -3.0, 3.0, |g, x| g.sigmoid(x)),
        ("silu", -3.0, 3.0, |g, x| g.silu(x)),
        ("selu_pos", 0.1, 3.0, |g, x| g.selu(x)),
        ("selu_neg", -3.0, -0.1, |g, x| g.selu(x)),
        ("softplus", -3.0, 3.0, |g, x| g.softplus(x)),
    ];
    for (name, lo, hi, f) in unary {
        for r in 0..reps {
            let x = rand_tensor(&mut rng, &[2, 3], lo, hi);
            let rng2 = ChaCha8Rng::seed_from_u64(seed ^ (r as u64) << 8);
            checks.push(check(&format!("{name}[{r}]"), &[x], |g, ids| {
                let y = f(g, ids[0])?;
                weighted_loss(g, y, &mut rng2.clone())
            })?);
        }
    }

    // binary ops with broadcasting
    for r in 0..reps {
        let a = rand_tensor(&mut rng, &[2, 3], -2.0, 2.0);
        let b = rand_tensor(&mut rng, &[3], -2.0, 2.0);
        let rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0x11 ^ (r as u64) << 8);
        checks.push(check(&format!("add_broadcast[{r}]"), &[a, b], |g, ids| {
            let y = g.add(ids[0], ids[1])?;
            weighted_loss(g, y, &mut rng2.clone())
        })?);

        let a = rand_tensor(&mut rng, &[2, 3], -2.0, 2.0);
        let b = rand_tensor(&mut rng, &[2, 3], -2.0, 2.0);
        let rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0x12 ^ (r as u64) << 8);
        checks.push(check(&format!("sub[{r}]"), &[a, b], |g, ids| {
            let y = g.sub(ids[0], ids[1])?;
            weighted_loss(g, y, &mut rng2.clone())
        })?);

        let a = rand_tensor(&mut rng, &[4, 3], -2.0, 2.0);
        let b = rand_tensor(&mut rng, &[1, 3], -2.0, 2.0);
        let rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0x13 ^ (r as u64) << 8);
        checks.push(check(&format!("mul_broadcast[{r}]"), &[a, b], |g, ids| {
            let y = g.mul(ids[0], ids[1])?;
            weighted_loss(g, y, &mut rng2.clone())
        })?);

        let a = rand_tensor(&mut rng, &[2, 3], -2.0, 2.0);
        let b = rand_tensor(&mut rng, &[2, 3], 0.5, 2.0);
        let rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0x14 ^ (r as u64) << 8);
        checks.push(check(&format!("div[{r}]"), &[a, b], |g, ids| {
            let y = g.div(ids[0], ids[1])?;
            weighted_loss(g, y, &mut rng2.clone())
        })?);
    }

    // matmul
    for r in 0..reps {
        let a = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[4, 2], -1.0, 1.0);
        let rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0x21 ^ (r as u64) << 8);
        checks.push(check(&format!("matmul[{r}]"), &[a, b], |g, ids| {
            let y = g.matmul(ids[0], ids[1])?;
            weighted_loss(g, y, &mut rng2.clone())
        })?);
    }

    // conv1d: plain, strided+padded, grouped (depthwise)
    for r in 0..reps {
        let x = rand_tensor(&mut rng, &[2, 8], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[3, 2, 3], -1.0, 1.0);
        let rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0x31 ^ (r as u64) << 8);
        checks.push(check(&format!("conv1d[{r}]"), &[x, w], |g, ids| {
            let y = g.conv1d(ids[0], ids[1], 1, 1, 1, 1)?;
            weighted_loss(g, y, &mut rng2.clone())
        })?);

        let x = rand_tensor(&mut rng, &[2, 9], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[2, 2, 3], -1.0, 1.0);
        let rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0x32 ^ (r as u64) << 8);
        checks.push(check(&format!("conv1d_stride2[{r}]"), &[x, w], |g, ids| {
            let y = g.conv1d(ids[0], ids[1], 2, 2, 0, 1)?;
            weighted_loss(g, y, &mut rng2.clone())
        })?);

        let x = rand_tensor(&mut rng, &[4, 7], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[4, 1, 4], -1.0, 1.0);
        let rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0x33 ^ (r as u64) << 8);
        checks.push(check(&format!("conv1d_depthwise[{r}]"), &[x, w], |g, ids| {
            let y = g.conv1d(ids[0], ids[1], 1, 3, 0, 4)?;
            weighted_loss(g, y, &mut rng2.clone())
        })?);
    }

    // conv2d
    for r in 0..reps {
        let x = rand_tensor(&mut rng, &[2, 5, 6], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
        let rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0x41 ^ (r as u64) << 8);
        checks.push(check(&format!("conv2d[{r}]"), &[x, w], |g, ids| {
            let y = g.conv2d(ids[0], ids[1], 1)?;
            weighted_loss(g, y, &mut rng2.clone())
        })?);
    }

    // pooling (ties have measure zero under continuous sampling)
    for r in 0..reps {
        let x = rand_tensor(&mut rng, &[3, 9], -1.0, 1.0);
        let rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0x51 ^ (r as u64) << 8);
        checks.push(check(&format!("maxpool_last[{r}]"), &[x], |g, ids| {
            let y = g.maxpool_last(ids[0], 3)?;
            weighted_loss(g, y, &mut rng2.clone())
        })?);

        let x = rand_tensor(&mut rng, &[2, 4, 6], -1.0, 1.0);
        let rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0x52 ^ (r as u64) << 8);
        checks.push(check(&format!("maxpool2d[{r}]"), &[x], |g, ids| {
            let y = g.maxpool2d(ids[0], 2, 3)?;
            weighted_loss(g, y, &mut rng2.clone())
        })?);
    }

    // softmax, layer_norm, batch_norm
    for r in 0..reps {
        let x = rand_tensor(&mut rng, &[3, 4], -2.0, 2.0);
        let rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0x61 ^ (r as u64) << 8);
        checks.push(check(&format!("softmax[{r}]"), &[x], |g, ids| {
            let y = g.softmax(ids[0], 1)?;
            weighted_loss(g, y, &mut rng2.clone())
        })?);

        let x = rand_tensor(&mut rng, &[3, 4], -2.0, 2.0);
        let gamma = rand_tensor(&mut rng, &[4], 0.5, 1.5);
        let beta = rand_tensor(&mut rng, &[4], -0.5, 0.5);
        let rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0x62 ^ (r as u64) << 8);
        checks.push(check(&format!("layer_norm[{r}]"), &[x, gamma, beta], |g, ids| {
            let y = g.layer_norm(ids[0], ids[1], ids[2], 1, 1e-5)?;
            weighted_loss(g, y, &mut rng2.clone())
        })?);

        let x = rand_tensor(&mut rng, &[3, 4, 2], -2.0, 2.0);
        let gamma = rand_tensor(&mut rng, &[3], 0.5, 1.5);
        let beta = rand_tensor(&mut rng, &[3], -0.5, 0.5);
        let rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0x63 ^ (r as u64) << 8);
        checks.push(check(&format!("batch_norm_train[{r}]"), &[x, gamma, beta], |g, ids| {
            let (y, _) = g.batch_norm(ids[0], ids[1], ids[2], 1e-5, None)?;
            weighted_loss(g, y, &mut rng2.clone())
        })?);

        let x = rand_tensor(&mut rng, &[3, 4, 2], -2.0, 2.0);
        let gamma = rand_tensor(&mut rng, &[3], 0.5, 1.5);
        let beta = rand_tensor(&mut rng, &[3], -0.5, 0.5);
        let rm = vec![0.1, -0.2, 0.3];
        let rv = vec![1.1, 0.9, 1.3];
        let rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0x64 ^ (r as u64) << 8);
        checks.push(check(&format!("batch_norm_eval[{r}]"), &[x, gamma, beta], move |g, ids| {
            let (y, _) = g.batch_norm(ids[0], ids[1], ids[2], 1e-5, Some((&rm, &rv)))?;
            weighted_loss(g, y, &mut rng2.clone())
        })?);
    }

    // shape ops
    for r in 0..reps {
        let x = rand_tensor(&mut rng, &[2, 3, 2], -1.0, 1.0);
        let rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0x71 ^ (r as u64) << 8);
        checks.push(check(&format!("shape_ops[{r}]"), &[x], |g, ids| {
            let a = g.sum_axis(ids[0], 1)?; // (2,2)
            let b = g.transpose2d(a)?;
            let c = g.flip(b, 0)?;
            let d = g.reshape(c, vec![4])?;
            let e = g.narrow(d, 0, 1, 3)?;
            let f = g.concat(&[e, d], 0)?;
            weighted_loss(g, f, &mut rng2.clone())
        })?);
    }

    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_op_suite_passes() {
        let checks = core_op_suite(0xC0FFEE).unwrap();
        assert!(checks.len() >= 5 * 20, "suite too small: {}", checks.len());
        for c in &checks {
            assert!(c.pass, "gradient check failed: {}", c.line());
        }
    }

    #[test]
    fn composite_chain_matches_fd() {
        // any composite: central differences at 1e-4 match to <= 1e-3 relative
        let x = Tensor::from_vec(vec![3], vec![0.4, -0.7, 1.2]);
        let c = check("composite", &[x], |g, ids| {
            let a = g.silu(ids[0])?;
            let b = g.exp(a)?;
            let d = g.add(b, ids[0])?;
            let e = g.mul(d, d)?;
            g.sum_all(e)
        })
        .unwrap();
        assert!(c.pass, "{}", c.line());
    }
}

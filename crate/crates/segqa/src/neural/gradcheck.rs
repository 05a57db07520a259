//! Central finite-difference verification of every differentiable
//! primitive and of whole networks.
//!
//! Checks run in f64 with step `h = 1e-3`. The error of an entry is
//! `|analytic - fd| / max(|analytic|, |fd|, 0.01)`; the floor turns the
//! comparison absolute for near-zero gradients, where finite differences
//! carry truncation noise of order `h^2`.

use super::params::ParamStore;
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;
const NORM_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
}

fn rel_err(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(NORM_FLOOR)
}

/// Checks `d loss / d inputs` for a computation built from leaf tensors.
/// Every entry of every input is perturbed.
pub fn finite_diff_max_rel_err<F>(inputs: &[Tensor<f64>], build: F, h: f64) -> f64
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> NodeId,
{
    // analytic gradients at the base point
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss_id = build(&mut tape, &ids);
    assert_eq!(tape.value(loss_id).numel(), 1, "loss must be scalar");
    tape.backward(loss_id).expect("backward");
    let analytic: Vec<Tensor<f64>> = ids
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            tape.grad(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()))
        })
        .collect();

    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let mut t = Tape::new();
        let ids: Vec<NodeId> = xs.iter().map(|x| t.leaf(x.clone(), false)).collect();
        let l = build(&mut t, &ids);
        t.scalar(l)
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work);
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work);
            work[i].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(analytic[i].data()[j], fd));
        }
    }
    worst
}

/// Checks `d loss / d parameters` for a network forward pass. At most
/// `max_entries_per_param` entries of each parameter are perturbed (a
/// seeded subsample when the tensor is larger).
pub fn finite_diff_params_max_rel_err<F>(
    store: &mut ParamStore<f64>,
    forward: F,
    h: f64,
    max_entries_per_param: usize,
    seed: u64,
) -> f64
where
    F: Fn(&ParamStore<f64>, &mut Tape<f64>) -> NodeId,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss_id = forward(store, &mut tape);
    tape.backward(loss_id).expect("backward");
    tape.accumulate_param_grads(store).expect("param grads");
    let analytic: Vec<Tensor<f64>> = store.iter().map(|p| p.grad.clone()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for pi in 0..store.len() {
        let count = analytic[pi].numel();
        let entries: Vec<usize> = if count <= max_entries_per_param {
            (0..count).collect()
        } else {
            (0..max_entries_per_param)
                .map(|_| rng.gen_range(0..count))
                .collect()
        };
        for j in entries {
            let id = super::params::ParamId(pi);
            let orig = store.get(id).value.data()[j];
            store.get_mut(id).value.data_mut()[j] = orig + h;
            let up = {
                let mut t = Tape::new();
                let l = forward(store, &mut t);
                t.scalar(l)
            };
            store.get_mut(id).value.data_mut()[j] = orig - h;
            let down = {
                let mut t = Tape::new();
                let l = forward(store, &mut t);
                t.scalar(l)
            };
            store.get_mut(id).value.data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(analytic[pi].data()[j], fd));
        }
    }
    worst
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Random values bounded away from zero (for the rectifier kink).
fn rand_tensor_off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n)
            .map(|_| {
                let v: f64 = rng.gen_range(0.05..1.0);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect(),
    )
}

fn rand_binary(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n).map(|_| f64::from(rng.gen_bool(0.4) as u8)).collect(),
    )
}

fn rand_spatial(rng: &mut ChaCha8Rng, even: bool) -> [usize; 3] {
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = rng.gen_range(2..6);
        if even && *d % 2 == 1 {
            *d += 1;
        }
    }
    dims
}

/// Runs the finite-difference suite over every primitive, `shapes_per_op`
/// random shapes each, and reports the worst relative error per primitive.
pub fn run_primitive_suite(seed: u64, shapes_per_op: usize) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    let h = FD_STEP;

    let check = |name: &str, worst: f64, reports: &mut Vec<GradCheckReport>| {
        reports.push(GradCheckReport {
            name: name.to_string(),
            max_rel_err: worst,
        });
    };

    // conv3d: stride 1 and 2 with kernel 3, and the 1x1x1 projection kernel
    for (name, stride, kernel) in [
        ("conv3d_k3_s1", 1usize, 3usize),
        ("conv3d_k3_s2", 2, 3),
        ("conv3d_k1_s1", 1, 1),
    ] {
        let pad = if kernel == 3 { 1 } else { 0 };
        let mut worst = 0.0f64;
        for _ in 0..shapes_per_op {
            let [d, hh, w] = rand_spatial(&mut rng, stride == 2);
            let (n, ci, co) = (
                rng.gen_range(1..3),
                rng.gen_range(1..4),
                rng.gen_range(1..4),
            );
            let x = rand_tensor(&mut rng, &[n, ci, d, hh, w]);
            let wt = rand_tensor(&mut rng, &[co, ci, kernel, kernel, kernel]);
            let b = rand_tensor(&mut rng, &[co]);
            let out_shape = [
                n,
                co,
                super::kernels::conv_out_size(d, kernel, stride, pad),
                super::kernels::conv_out_size(hh, kernel, stride, pad),
                super::kernels::conv_out_size(w, kernel, stride, pad),
            ];
            let weights = rand_tensor(&mut rng, &out_shape);
            worst = worst.max(finite_diff_max_rel_err(
                &[x, wt, b],
                |t, ids| {
                    let c = t.constant(weights.clone());
                    let y = t.conv3d(ids[0], ids[1], ids[2], stride, pad);
                    t.weighted_sum(y, c)
                },
                h,
            ));
        }
        check(name, worst, &mut reports);
    }

    // transposed conv: stride 1 and stride 2 (the exact-doubling config)
    for (name, stride) in [("conv_transpose3d_s1", 1usize), ("conv_transpose3d_s2", 2)] {
        let out_pad = stride - 1;
        let mut worst = 0.0f64;
        for _ in 0..shapes_per_op {
            let [d, hh, w] = rand_spatial(&mut rng, false);
            let (n, ci, co) = (
                rng.gen_range(1..3),
                rng.gen_range(1..4),
                rng.gen_range(1..4),
            );
            let x = rand_tensor(&mut rng, &[n, ci, d, hh, w]);
            let wt = rand_tensor(&mut rng, &[ci, co, 3, 3, 3]);
            let b = rand_tensor(&mut rng, &[co]);
            let out_shape = [
                n,
                co,
                super::kernels::convt_out_size(d, 3, stride, 1, out_pad),
                super::kernels::convt_out_size(hh, 3, stride, 1, out_pad),
                super::kernels::convt_out_size(w, 3, stride, 1, out_pad),
            ];
            let weights = rand_tensor(&mut rng, &out_shape);
            worst = worst.max(finite_diff_max_rel_err(
                &[x, wt, b],
                |t, ids| {
                    let c = t.constant(weights.clone());
                    let y = t.conv_transpose3d(ids[0], ids[1], ids[2], stride, 1, out_pad);
                    t.weighted_sum(y, c)
                },
                h,
            ));
        }
        check(name, worst, &mut reports);
    }

    // instance norm
    {
        let mut worst = 0.0f64;
        for _ in 0..shapes_per_op {
            let [d, hh, w] = rand_spatial(&mut rng, false);
            let (n, c) = (rng.gen_range(1..3), rng.gen_range(1..4));
            let x = rand_tensor(&mut rng, &[n, c, d, hh, w]);
            let gamma = rand_tensor_off_zero(&mut rng, &[c]);
            let beta = rand_tensor(&mut rng, &[c]);
            let weights = rand_tensor(&mut rng, &[n, c, d, hh, w]);
            worst = worst.max(finite_diff_max_rel_err(
                &[x, gamma, beta],
                |t, ids| {
                    let cst = t.constant(weights.clone());
                    let y = t.instance_norm(ids[0], ids[1], ids[2], 1e-5);
                    t.weighted_sum(y, cst)
                },
                h,
            ));
        }
        check("instance_norm", worst, &mut reports);
    }

    // parametric rectifier (inputs kept away from the kink)
    {
        let mut worst = 0.0f64;
        for _ in 0..shapes_per_op {
            let [d, hh, w] = rand_spatial(&mut rng, false);
            let (n, c) = (rng.gen_range(1..3), rng.gen_range(1..4));
            let x = rand_tensor_off_zero(&mut rng, &[n, c, d, hh, w]);
            let alpha = Tensor::from_vec(&[1], vec![rng.gen_range(0.05..0.5)]);
            let weights = rand_tensor(&mut rng, &[n, c, d, hh, w]);
            worst = worst.max(finite_diff_max_rel_err(
                &[x, alpha],
                |t, ids| {
                    let cst = t.constant(weights.clone());
                    let y = t.prelu(ids[0], ids[1]);
                    t.weighted_sum(y, cst)
                },
                h,
            ));
        }
        check("prelu", worst, &mut reports);
    }

    // sigmoid
    {
        let mut worst = 0.0f64;
        for _ in 0..shapes_per_op {
            let n = rng.gen_range(2..40);
            let x = rand_tensor(&mut rng, &[n]);
            let weights = rand_tensor(&mut rng, &[n]);
            worst = worst.max(finite_diff_max_rel_err(
                &[x],
                |t, ids| {
                    let cst = t.constant(weights.clone());
                    let y = t.sigmoid(ids[0]);
                    t.weighted_sum(y, cst)
                },
                h,
            ));
        }
        check("sigmoid", worst, &mut reports);
    }

    // dense
    {
        let mut worst = 0.0f64;
        for _ in 0..shapes_per_op {
            let (n, fi, fo) = (
                rng.gen_range(1..4),
                rng.gen_range(1..8),
                rng.gen_range(1..8),
            );
            let x = rand_tensor(&mut rng, &[n, fi]);
            let w = rand_tensor(&mut rng, &[fo, fi]);
            let b = rand_tensor(&mut rng, &[fo]);
            let weights = rand_tensor(&mut rng, &[n, fo]);
            worst = worst.max(finite_diff_max_rel_err(
                &[x, w, b],
                |t, ids| {
                    let cst = t.constant(weights.clone());
                    let y = t.dense(ids[0], ids[1], ids[2]);
                    t.weighted_sum(y, cst)
                },
                h,
            ));
        }
        check("dense", worst, &mut reports);
    }

    // soft Dice loss (already scalar; no reducer needed)
    {
        let mut worst = 0.0f64;
        for _ in 0..shapes_per_op {
            let [d, hh, w] = rand_spatial(&mut rng, false);
            let (n, c) = (rng.gen_range(1..3), rng.gen_range(1..4));
            let logits = rand_tensor(&mut rng, &[n, c, d, hh, w]);
            let target = rand_binary(&mut rng, &[n, c, d, hh, w]);
            worst = worst.max(finite_diff_max_rel_err(
                &[logits],
                |t, ids| {
                    let tgt = t.constant(target.clone());
                    t.soft_dice_loss(ids[0], tgt, 1e-5)
                },
                h,
            ));
        }
        check("soft_dice_loss", worst, &mut reports);
    }

    // KL of the latent heads
    {
        let mut worst = 0.0f64;
        for _ in 0..shapes_per_op {
            let (n, l) = (rng.gen_range(1..4), rng.gen_range(1..8));
            let mean = rand_tensor(&mut rng, &[n, l]);
            let logvar = rand_tensor(&mut rng, &[n, l]);
            worst = worst.max(finite_diff_max_rel_err(
                &[mean, logvar],
                |t, ids| t.kl_normal(ids[0], ids[1]),
                h,
            ));
        }
        check("kl_normal", worst, &mut reports);
    }

    // reparameterized sampling
    {
        let mut worst = 0.0f64;
        for _ in 0..shapes_per_op {
            let (n, l) = (rng.gen_range(1..4), rng.gen_range(1..8));
            let mean = rand_tensor(&mut rng, &[n, l]);
            let logvar = rand_tensor(&mut rng, &[n, l]);
            let eps = rand_tensor(&mut rng, &[n, l]);
            let weights = rand_tensor(&mut rng, &[n, l]);
            worst = worst.max(finite_diff_max_rel_err(
                &[mean, logvar],
                |t, ids| {
                    let e = t.constant(eps.clone());
                    let cst = t.constant(weights.clone());
                    let z = t.reparameterize(ids[0], ids[1], e);
                    t.weighted_sum(z, cst)
                },
                h,
            ));
        }
        check("reparameterize", worst, &mut reports);
    }

    // chain of two primitives: the composed gradient must match end-to-end
    // finite differences through both ops
    {
        let mut worst = 0.0f64;
        for _ in 0..shapes_per_op {
            let [d, hh, w] = rand_spatial(&mut rng, false);
            let (n, ci, co) = (1usize, rng.gen_range(1..3), rng.gen_range(1..3));
            let x = rand_tensor(&mut rng, &[n, ci, d, hh, w]);
            let wt = rand_tensor(&mut rng, &[co, ci, 3, 3, 3]);
            let b = rand_tensor(&mut rng, &[co]);
            let gamma = rand_tensor_off_zero(&mut rng, &[co]);
            let beta = rand_tensor(&mut rng, &[co]);
            let target = rand_binary(&mut rng, &[n, co, d, hh, w]);
            worst = worst.max(finite_diff_max_rel_err(
                &[x, wt, b, gamma, beta],
                |t, ids| {
                    let y = t.conv3d(ids[0], ids[1], ids[2], 1, 1);
                    let z = t.instance_norm(y, ids[3], ids[4], 1e-5);
                    let tgt = t.constant(target.clone());
                    t.soft_dice_loss(z, tgt, 1e-5)
                },
                h,
            ));
        }
        check("conv_norm_dice_chain", worst, &mut reports);
    }

    // skip-connection composite: concat + residual add
    {
        let mut worst = 0.0f64;
        for _ in 0..shapes_per_op {
            let [d, hh, w] = rand_spatial(&mut rng, false);
            let (n, c) = (1usize, rng.gen_range(1..3));
            let a = rand_tensor(&mut rng, &[n, c, d, hh, w]);
            let b = rand_tensor(&mut rng, &[n, c, d, hh, w]);
            let weights = rand_tensor(&mut rng, &[n, 2 * c, d, hh, w]);
            worst = worst.max(finite_diff_max_rel_err(
                &[a, b],
                |t, ids| {
                    let sum = t.add(ids[0], ids[1]);
                    let cat = t.concat_channels(sum, ids[1]);
                    let cst = t.constant(weights.clone());
                    t.weighted_sum(cat, cst)
                },
                h,
            ));
        }
        check("add_concat_composite", worst, &mut reports);
    }

    reports
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes_finite_differences() {
        for report in run_primitive_suite(42, 10) {
            assert!(
                report.max_rel_err <= 1e-4,
                "{}: max relative error {} exceeds 1e-4",
                report.name,
                report.max_rel_err
            );
        }
    }

    #[test]
    fn constant_input_conv_weight_gradient_is_patch_sum() {
        // loss = sum(output) through one conv on constant-1 input: the
        // gradient of a weight equals the number of output positions its
        // input tap lands inside the (padded) grid.
        let mut x = Tensor::<f64>::zeros(&[1, 1, 3, 3, 3]);
        x.fill(1.0);
        let w = Tensor::<f64>::zeros(&[1, 1, 3, 3, 3]);
        let b = Tensor::<f64>::zeros(&[1]);
        let mut ones = Tensor::<f64>::zeros(&[1, 1, 3, 3, 3]);
        ones.fill(1.0);

        let mut tape = Tape::new();
        let xi = tape.leaf(x, false);
        let wi = tape.leaf(w, true);
        let bi = tape.leaf(b, true);
        let red = tape.constant(ones);
        let y = tape.conv3d(xi, wi, bi, 1, 1);
        let loss = tape.weighted_sum(y, red);
        tape.backward(loss).unwrap();

        let dw = tape.grad(wi).unwrap();
        // center tap is inside for all 27 outputs; a face-center tap for 18;
        // an edge tap for 12; a corner tap for 8
        let expected = |kz: usize, ky: usize, kx: usize| -> f64 {
            let count = |k: usize| if k == 1 { 3.0 } else { 2.0 };
            count(kz) * count(ky) * count(kx)
        };
        for kz in 0..3 {
            for ky in 0..3 {
                for kx in 0..3 {
                    let got = dw.data()[(kz * 3 + ky) * 3 + kx];
                    assert_eq!(got, expected(kz, ky, kx), "tap ({kz},{ky},{kx})");
                }
            }
        }
        // bias gradient is the output count
        assert_eq!(tape.grad(bi).unwrap().data()[0], 27.0);
    }

    #[test]
    fn backward_before_forward_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]), true);
        // x is not scalar, so backward must refuse it
        assert!(tape.backward(x).is_err());
    }
}

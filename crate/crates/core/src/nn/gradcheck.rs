//! Central-difference gradient verification (64-bit).

use rand::Rng;

use super::layers::{
    avg_pool2, avg_pool2_backward, conv2d, conv2d_backward, global_avg_pool, global_avg_pool_backward, linear,
    linear_backward, relu, relu_backward,
};
use super::loss::{cross_entropy, cross_entropy_grad, one_hot, softmax, softmax_backward, LossKind};
use super::model::{dense_block_backward, dense_block_forward, DenseBlockConfig, Model, ModelConfig};
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng::{stream_for, Domain, Stream};

/// Relative error `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate and returns the maximum relative error.
pub fn grad_check(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], h: f64) -> f64 {
    assert_eq!(x.len(), analytic.len(), "gradient length");
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * h)));
    }
    worst
}

/// `sum(t * r)`; turns a tensor-valued op into a scalar for checking, with `r`
/// as the upstream gradient.
pub fn project(t: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    t.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Like [`grad_check`] for piecewise-smooth functions. `f` also returns the
/// activation pattern of its evaluation point; coordinates whose `±h` probes
/// change the pattern of `x` straddle a kink and are skipped.
pub fn grad_check_piecewise(
    mut f: impl FnMut(&[f64]) -> (f64, Vec<bool>),
    x: &[f64],
    analytic: &[f64],
    h: f64,
) -> GradReport {
    assert_eq!(x.len(), analytic.len(), "gradient length");
    let base = f(x).1;
    let mut probe = x.to_vec();
    let mut report = GradReport::default();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let (up, pu) = f(&probe);
        probe[i] = x[i] - h;
        let (down, pd) = f(&probe);
        probe[i] = x[i];
        if pu != base || pd != base {
            report.skipped += 1;
            continue;
        }
        report.checked += 1;
        let e = relative_error(analytic[i], (up - down) / (2.0 * h));
        report.max_rel_error = report.max_rel_error.max(e);
    }
    report
}

/// Outcome of a piecewise gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates whose probe crossed a ReLU kink, where central differences
    /// do not estimate the derivative.
    pub skipped: usize,
}

impl GradReport {
    fn merge(&mut self, other: GradReport) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

/// Central-difference check of every parameter gradient of the batch loss.
pub fn check_model(
    model: &Model<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
    kind: LossKind,
    h: f64,
) -> Result<GradReport> {
    let (_, grads) = model.loss_and_grads(x, labels, kind)?;
    let target = one_hot::<f64>(labels, model.num_classes())?;
    let mut report = GradReport::default();
    for (i, g) in grads.iter().enumerate() {
        let shape = g.shape().to_vec();
        let mut probe = model.clone();
        let r = grad_check_piecewise(
            |v| {
                probe.params_mut()[i] = Tensor::new(shape.clone(), v.to_vec()).expect("same shape");
                let cache = probe.forward_train(x).expect("valid input");
                let loss = cross_entropy(&cache.probs, &target, kind).expect("valid target");
                (loss, cache.relu_pattern())
            },
            model.params()[i].data(),
            g.data(),
            h,
        );
        report.merge(r);
    }
    Ok(report)
}

/// One entry of [`op_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub name: &'static str,
    pub report: GradReport,
    pub tolerance: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < self.tolerance && self.report.checked > 0
    }
}

pub const STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;

fn uniform(shape: Vec<usize>, rng: &mut Stream, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

fn smooth(name: &'static str, f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> OpCheck {
    OpCheck {
        name,
        report: GradReport {
            max_rel_error: grad_check(f, x, analytic, STEP),
            checked: x.len(),
            skipped: 0,
        },
        tolerance: OP_TOLERANCE,
    }
}

/// Checks every differentiable operation, a dense block and a small full
/// model on random shapes drawn from `seed`, in 64-bit arithmetic.
pub fn op_suite(seed: u64) -> Result<Vec<OpCheck>> {
    let mut rng = stream_for(seed, Domain::Init, 0x67c);
    let mut out = Vec::new();

    // convolution, with a stride/padding/kernel combination drawn per seed
    let (n, ci, co) = (2, rng.gen_range(1..4), rng.gen_range(1..4));
    let (h, w) = (rng.gen_range(4..8), rng.gen_range(4..8));
    let (k, stride, pad) = match rng.gen_range(0..3) {
        0 => (3, 1, 1),
        1 => (3, 2, 1),
        _ => (1, 1, 0),
    };
    let x = uniform(vec![n, ci, h, w], &mut rng, 1.0);
    let wt = uniform(vec![co, ci, k, k], &mut rng, 0.5);
    let b = uniform(vec![co], &mut rng, 0.5);
    let y = conv2d(&x, &wt, &b, stride, pad)?;
    let r = uniform(y.shape().to_vec(), &mut rng, 1.0);
    let (dx, dw, db) = conv2d_backward(&x, &wt, &b, stride, pad, &r)?;
    let with = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| project(&conv2d(x, w, b, stride, pad).expect("shapes"), &r);
    out.push(smooth("conv2d.input", |v| with(&Tensor::new(x.shape().to_vec(), v.to_vec()).expect("shape"), &wt, &b), x.data(), dx.data()));
    out.push(smooth("conv2d.weight", |v| with(&x, &Tensor::new(wt.shape().to_vec(), v.to_vec()).expect("shape"), &b), wt.data(), dw.data()));
    out.push(smooth("conv2d.bias", |v| with(&x, &wt, &Tensor::new(b.shape().to_vec(), v.to_vec()).expect("shape")), b.data(), db.data()));

    // relu, with inputs kept away from the kink
    let x = Tensor::from_fn(vec![2, 3, 4, 4], |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) { m } else { -m }
    });
    let r = uniform(x.shape().to_vec(), &mut rng, 1.0);
    let d = relu_backward(&x, &r)?;
    out.push(smooth("relu", |v| project(&relu(&Tensor::new(x.shape().to_vec(), v.to_vec()).expect("shape")), &r), x.data(), d.data()));

    let x = uniform(vec![2, 2, 2 * rng.gen_range(1..4), 2 * rng.gen_range(1..4)], &mut rng, 1.0);
    let r = uniform(avg_pool2(&x)?.shape().to_vec(), &mut rng, 1.0);
    let d = avg_pool2_backward(x.shape(), &r)?;
    out.push(smooth("avg_pool2", |v| project(&avg_pool2(&Tensor::new(x.shape().to_vec(), v.to_vec()).expect("shape")).expect("even"), &r), x.data(), d.data()));

    let x = uniform(vec![2, 3, rng.gen_range(1..6), rng.gen_range(1..6)], &mut rng, 1.0);
    let r = uniform(vec![2, 3], &mut rng, 1.0);
    let d = global_avg_pool_backward(x.shape(), &r)?;
    out.push(smooth("global_avg_pool", |v| project(&global_avg_pool(&Tensor::new(x.shape().to_vec(), v.to_vec()).expect("shape")).expect("nchw"), &r), x.data(), d.data()));

    let (fi, fo) = (rng.gen_range(1..6), rng.gen_range(1..6));
    let x = uniform(vec![3, fi], &mut rng, 1.0);
    let wt = uniform(vec![fo, fi], &mut rng, 1.0);
    let b = uniform(vec![fo], &mut rng, 1.0);
    let r = uniform(vec![3, fo], &mut rng, 1.0);
    let (dx, dw, db) = linear_backward(&x, &wt, &r)?;
    let with = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| project(&linear(x, w, b).expect("shapes"), &r);
    out.push(smooth("linear.input", |v| with(&Tensor::new(x.shape().to_vec(), v.to_vec()).expect("shape"), &wt, &b), x.data(), dx.data()));
    out.push(smooth("linear.weight", |v| with(&x, &Tensor::new(wt.shape().to_vec(), v.to_vec()).expect("shape"), &b), wt.data(), dw.data()));
    out.push(smooth("linear.bias", |v| with(&x, &wt, &Tensor::new(b.shape().to_vec(), v.to_vec()).expect("shape")), b.data(), db.data()));

    for (name, kind) in [("softmax+loss.summed_binary", LossKind::SummedBinary), ("softmax+loss.categorical", LossKind::Categorical)] {
        let c = rng.gen_range(2..6);
        let logits = uniform(vec![3, c], &mut rng, 2.0);
        let labels: Vec<usize> = (0..3).map(|_| rng.gen_range(0..c)).collect();
        let target = one_hot::<f64>(&labels, c)?;
        let p = softmax(&logits)?;
        let d = softmax_backward(&p, &cross_entropy_grad(&p, &target, kind)?)?;
        out.push(smooth(name, |v| cross_entropy(&softmax(&Tensor::new(vec![3, c], v.to_vec()).expect("shape")).expect("2d"), &target, kind).expect("target"), logits.data(), d.data()));
    }

    // dense block input and every layer weight
    let cfg = DenseBlockConfig { num_layers: 3, growth_rate: 2 };
    let c0 = rng.gen_range(1..4);
    let x = uniform(vec![2, c0, 5, 4], &mut rng, 1.0);
    let ws: Vec<(Tensor<f64>, Tensor<f64>)> = (0..3)
        .map(|i| (uniform(vec![2, c0 + 2 * i, 3, 3], &mut rng, 0.5), uniform(vec![2], &mut rng, 0.5)))
        .collect();
    let layers: Vec<_> = ws.iter().map(|(w, b)| (w, b)).collect();
    let cache = dense_block_forward(&x, &cfg, &layers)?;
    let r = uniform(cache.out.shape().to_vec(), &mut rng, 1.0);
    let (dx, dws) = dense_block_backward(&cache, &cfg, &layers, &r)?;
    let pattern = |c: &super::model::DenseBlockCache<f64>| c.out.data().iter().map(|&v| v > 0.0).collect::<Vec<bool>>();
    let mut report = grad_check_piecewise(
        |v| {
            let c = dense_block_forward(&Tensor::new(x.shape().to_vec(), v.to_vec()).expect("shape"), &cfg, &layers).expect("shapes");
            (project(&c.out, &r), pattern(&c))
        },
        x.data(),
        dx.data(),
        STEP,
    );
    for (l, (dw, _)) in dws.iter().enumerate() {
        report.merge(grad_check_piecewise(
            |v| {
                let w = Tensor::new(ws[l].0.shape().to_vec(), v.to_vec()).expect("shape");
                let mut ls = layers.clone();
                ls[l] = (&w, &ws[l].1);
                let c = dense_block_forward(&x, &cfg, &ls).expect("shapes");
                (project(&c.out, &r), pattern(&c))
            },
            ws[l].0.data(),
            dw.data(),
            STEP,
        ));
    }
    out.push(OpCheck { name: "dense_block", report, tolerance: OP_TOLERANCE });

    // full micro-model on a 2-image 16×16 batch with nonzero biases
    let mcfg = ModelConfig {
        in_channels: 3,
        stem_channels: 4,
        blocks: vec![DenseBlockConfig { num_layers: 2, growth_rate: 3 }; 2],
        num_classes: 4,
    };
    let mut model = Model::<f64>::new(mcfg, seed)?;
    for p in model.params_mut() {
        if p.shape().len() == 1 {
            *p = uniform(p.shape().to_vec(), &mut rng, 0.1);
        }
    }
    let x = uniform(vec![2, 3, 16, 16], &mut rng, 1.0);
    let labels = [rng.gen_range(0..4), rng.gen_range(0..4)];
    out.push(OpCheck {
        name: "model",
        report: check_model(&model, &x, &labels, LossKind::SummedBinary, STEP)?,
        tolerance: MODEL_TOLERANCE,
    });
    Ok(out)
}

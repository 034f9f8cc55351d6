//! Small models and datasets shared by several test targets.

use ved_surrogate::losses::{loss_and_grads, LossWeights};
use ved_surrogate::nn::{image_batch, ArchConfig, Mode, Noise, Tensor, Ved};

use super::RefNormal;

pub fn tiny_arch() -> ArchConfig {
    ArchConfig {
        input_h: 4,
        input_w: 3,
        latent_dim: 2,
        channel_schedule: vec![1, 2, 3, 4],
        n_res_blocks: 2,
        decoder_hidden: 5,
        output_dim: 3,
        h_clamp: 10.0,
    }
}

pub struct GradCheck {
    pub n_params: usize,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub worst: f64,
    pub worst_name: String,
    pub failures: usize,
}

/// Central differences of the total loss against the analytic gradient
/// for every scalar parameter of the tiny 64-bit model.
pub fn gradient_check(step: f64, rel_tol: f64, floor: f64, seed: u64) -> GradCheck {
    let batch = 4;
    let mut model = Ved::<f64>::new(tiny_arch(), seed).unwrap();
    let mut g = RefNormal::new(seed ^ 0x5eed);
    let x: Tensor<f64> = image_batch((0..batch * 12).map(|_| g.normal()).collect(), batch, 4, 3);
    let y: Vec<f64> = (0..batch * 3).map(|_| g.normal()).collect();
    let eps: Vec<f64> = (0..batch * 2).map(|_| g.normal()).collect();
    let w = LossWeights::new(0.01, 0.01).unwrap();

    let total = |model: &mut Ved<f64>| {
        let out = model.forward(&x, Noise::Fixed(&eps), Mode::Train).unwrap();
        loss_and_grads(&y, &out, w).unwrap().0.total
    };

    model.zero_grad();
    let out = model.forward(&x, Noise::Fixed(&eps), Mode::Train).unwrap();
    let (_, grads) = loss_and_grads(&y, &out, w).unwrap();
    model.backward(&grads.d_yhat, &grads.d_g, &grads.d_h).unwrap();
    let analytic: Vec<(String, Vec<f64>)> =
        model.params().iter().map(|p| (p.name.clone(), p.grad.clone())).collect();

    let mut res = GradCheck { n_params: 0, worst: 0.0, worst_name: String::new(), failures: 0 };
    for (pi, (name, grad)) in analytic.iter().enumerate() {
        for (k, &a) in grad.iter().enumerate() {
            let orig = model.params()[pi].value[k];
            model.params_mut()[pi].value[k] = orig + step;
            let up = total(&mut model);
            model.params_mut()[pi].value[k] = orig - step;
            let down = total(&mut model);
            model.params_mut()[pi].value[k] = orig;
            let num = (up - down) / (2.0 * step);
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(floor);
            res.n_params += 1;
            if rel > rel_tol {
                res.failures += 1;
            }
            if rel > res.worst {
                res.worst = rel;
                res.worst_name = format!("{name}[{k}] analytic {a:e} numeric {num:e}");
            }
        }
    }
    res
}

pub fn small_prepared(n: usize, seed: u64) -> ved_surrogate::train::PreparedData {
    use ved_surrogate::exec::Execution;
    use ved_surrogate::field::{build_kle, generate_dataset, BoundarySpec, CovarianceKernel, FlowGrid, SplitFractions};
    let grid = FlowGrid::with_corner_bites(12, 9, 1.0, 0.2, seed, BoundarySpec::default()).unwrap();
    let kernel = CovarianceKernel { variance: 1.0, length_scale: 1.8 };
    let kle = build_kle(&grid, &kernel, 30).unwrap();
    let ds = generate_dataset(&grid, &kle, &kernel, n, 6, SplitFractions::default(), seed, Execution::Sequential)
        .unwrap();
    ved_surrogate::train::PreparedData::from_dataset(&ds, None, None).unwrap()
}

pub fn small_arch(r: usize) -> ArchConfig {
    ArchConfig {
        input_h: 12,
        input_w: 9,
        latent_dim: r,
        channel_schedule: vec![1, 4, 6, 8, 10, 12],
        n_res_blocks: 4,
        decoder_hidden: 24,
        output_dim: 6,
        h_clamp: 10.0,
    }
}

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::mse_loss;
use super::{Network, Tensor3};
use crate::error::{Error, Result};

/// Floor on the denominator of the relative error, so gradients that are
/// zero up to rounding compare absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinate with the largest error.
    pub worst_index: usize,
}

/// Compares `analytic` with central differences of `f` at `x` over up to
/// `coords` randomly chosen coordinates (all of them if fewer exist).
pub fn grad_check(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    h: f64,
    coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if x.len() != analytic.len() || x.is_empty() {
        return Err(Error::Shape("gradient and point sizes differ".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, x.len(), coords.min(x.len())).into_vec();
    let mut probe = x.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst_index: 0,
    };
    for i in picks {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst_index = i;
        }
        report.checked += 1;
    }
    Ok(report)
}

fn flatten(net: &Network<f64>) -> Vec<f64> {
    net.layers
        .iter()
        .flat_map(|l| l.weight.iter().chain(&l.bias).chain(&l.gamma).chain(&l.beta).copied())
        .collect()
}

fn unflatten(net: &mut Network<f64>, flat: &[f64]) {
    let mut it = flat.iter().copied();
    for p in net.params_mut() {
        for v in p.iter_mut() {
            *v = it.next().expect("flat parameter vector too short");
        }
    }
}

/// Training-mode MSE gradient check of a whole network, over parameters
/// and input values.
pub fn network_grad_check(
    net: &Network<f64>,
    x: &Tensor3<f64>,
    target: &Tensor3<f64>,
    h: f64,
    coords: usize,
    seed: u64,
) -> Result<(GradCheckReport, GradCheckReport)> {
    let mut work = net.clone();
    let (out, trace) = work.forward_train(x)?;
    let (_, grad) = mse_loss(&out, target)?;
    let (grads, gx) = net.backward_with_input(&trace, &grad)?;
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.slices().into_iter().flatten().copied()).collect();

    let loss_at = |params: &[f64], input: &Tensor3<f64>| -> f64 {
        let mut n = net.clone();
        unflatten(&mut n, params);
        let (o, _) = n.forward_train(input).expect("shapes already checked");
        mse_loss(&o, target).expect("shapes already checked").0
    };
    let params = flatten(net);
    let p_report = grad_check(|p| loss_at(p, x), &params, &analytic, h, coords, seed)?;
    let (b, c, t) = x.dims();
    let x_report = grad_check(
        |xv| loss_at(&params, &Tensor3::from_channel_major(b, c, t, xv.to_vec()).expect("same dims")),
        x.data(),
        gx.data(),
        h,
        coords,
        seed ^ 0x5eed,
    )?;
    Ok((p_report, x_report))
}

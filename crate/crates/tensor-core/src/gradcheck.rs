use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::Tensor;

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error per named parameter.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub pass: bool,
    /// Central-difference step.
    pub step: f64,
}

/// Check reverse-mode gradients of a scalar-valued computation against
/// central differences (f(p+h) - f(p-h)) / 2h, coordinate by coordinate.
///
/// `f` must rebuild its graph from the current parameter values on every
/// call. Relative error uses the denominator max(|analytic|, |numeric|, 1e-8).
/// When `max_coords_per_param` is set, a seeded random coordinate subset is
/// checked for parameters larger than the cap.
pub fn grad_check(
    f: &dyn Fn() -> Tensor,
    params: &[(String, Tensor)],
    h: f64,
    tol: f64,
    max_coords_per_param: Option<usize>,
    seed: u64,
) -> GradCheckReport {
    assert!(h > 0.0, "finite-difference step must be positive");
    for (_, p) in params {
        p.zero_grad();
    }
    let y = f();
    if !y.item().is_finite() {
        return GradCheckReport {
            per_param: params.iter().map(|(n, _)| (n.clone(), f64::INFINITY)).collect(),
            max_rel_err: f64::INFINITY,
            pass: false,
            step: h,
        };
    }
    y.backward();
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|(_, p)| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_param = Vec::with_capacity(params.len());
    let mut max_rel = 0.0f64;
    for (pi, (name, p)) in params.iter().enumerate() {
        let n = p.numel();
        let coords: Vec<usize> = match max_coords_per_param {
            Some(cap) if n > cap => {
                let mut all: Vec<usize> = (0..n).collect();
                all.shuffle(&mut rng);
                all.truncate(cap);
                all
            }
            _ => (0..n).collect(),
        };
        let mut worst = 0.0f64;
        for &i in &coords {
            p.nudge(i, h);
            let plus = f().item();
            p.nudge(i, -2.0 * h);
            let minus = f().item();
            p.nudge(i, h);
            if !plus.is_finite() || !minus.is_finite() {
                worst = f64::INFINITY;
                break;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi][i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
        max_rel = max_rel.max(worst);
        per_param.push((name.clone(), worst));
    }
    GradCheckReport {
        per_param,
        max_rel_err: max_rel,
        pass: max_rel < tol,
        step: h,
    }
}

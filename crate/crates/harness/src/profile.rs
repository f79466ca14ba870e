use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensor_core::Tensor;

use projectors::{FeatureMap, ProjectorKind, ProjectorSpec};

use crate::lm::LmConfig;
use crate::HarnessError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileReport {
    pub projector_flops: u64,
    pub lm_flops: u64,
    pub total_flops: u64,
    /// Median over the measured repetitions, in seconds.
    pub median_wall_secs: f64,
    pub reps: usize,
}

/// 2·n·din·dout multiply-adds of an affine map over n rows.
fn lin(n: usize, din: usize, dout: usize) -> u64 {
    2 * (n * din * dout) as u64
}

/// Forward FLOPs of one projector pass on N input features.
fn projector_forward_flops(spec: &ProjectorSpec, n: usize) -> u64 {
    let m = spec.num_tokens;
    let (dv, dt) = (spec.d_v, spec.d_t);
    match spec.kind {
        ProjectorKind::Linear => lin(n, dv, dt),
        ProjectorKind::Mlp => lin(n, dv, dt) + (spec.mlp_layers - 1) as u64 * lin(n, dt, dt),
        ProjectorKind::Resampler => {
            let mut per_block = lin(m, dv, dv) // queries
                + 2 * lin(n, dv, dv)          // keys, values
                + 2 * (2 * m * n * dv) as u64 // scores + weighted sum
                + lin(m, dv, dv)              // output projection
                + lin(m, dv, 4 * dv) + lin(m, 4 * dv, dv);
            per_block *= spec.resampler_layers as u64;
            per_block + lin(m, dv, dt)
        }
        ProjectorKind::CAbstractor => {
            // One conv block costs roughly a 3x3 spatial pass plus the
            // channel-mixing projections; run L blocks before pooling (on N
            // positions) and L after (on M positions).
            let block = |pos: usize| (2 * pos * 9 * dv) as u64 + 2 * lin(pos, dv, 4 * dv);
            spec.conv_blocks as u64 * (block(n) + block(m)) + lin(m, dv, dt)
        }
        ProjectorKind::DAbstractor => {
            let k = spec.offsets_per_query;
            let mut per_block = lin(m, dv, 2 * k)     // offset heads
                + lin(m, dv, k)                       // mixing logits
                + (2 * m * k * 4 * dv) as u64         // bilinear gathers
                + lin(m, dv, dv)                      // value projection
                + lin(m, dv, 4 * dv) + lin(m, 4 * dv, dv);
            if spec.self_attn {
                per_block += 4 * lin(m, dv, dv) + 2 * (2 * m * m * dv) as u64;
            }
            per_block *= spec.deform_blocks as u64;
            per_block + lin(n, dv, dv) + lin(m, dv, dt)
        }
    }
}

/// Forward FLOPs of the decoder over a sequence of length s.
fn lm_forward_flops(cfg: &LmConfig, s: usize) -> u64 {
    let d = cfg.d_t;
    let per_block = 4 * lin(s, d, d)           // q, k, v, o projections
        + 2 * (2 * s * s * d) as u64           // scores + weighted sum
        + lin(s, d, 4 * d) + lin(s, 4 * d, d);
    cfg.depth as u64 * per_block + lin(s, d, cfg.vocab)
}

/// Analytic forward FLOPs of one step, split projector vs LM. Deterministic
/// in (spec, lm, N, text_len): no measurement involved.
pub fn step_flops(spec: &ProjectorSpec, lm: &LmConfig, n: usize, text_len: usize) -> (u64, u64) {
    let seq = spec.num_tokens + text_len;
    // Backward costs about twice the forward; count both.
    (
        3 * projector_forward_flops(spec, n),
        3 * lm_forward_flops(lm, seq),
    )
}

/// Analytic FLOP estimate plus a measured median wall time over `reps`
/// forward+backward repetitions of a real (toy-width) projector + LM step.
pub fn profile_step(
    spec: &ProjectorSpec,
    lm_cfg: &LmConfig,
    n: usize,
    text_len: usize,
    reps: usize,
) -> Result<ProfileReport, HarnessError> {
    assert!(reps >= 5, "median needs at least 5 repetitions");
    let (projector_flops, lm_flops) = step_flops(spec, lm_cfg, n, text_len);
    let side = (n as f64).sqrt().round() as usize;
    assert_eq!(side * side, n, "profiling assumes a square feature grid");

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let projector = projectors::build(spec, &mut rng)?;
    let lm = crate::lm::TinyLM::new(lm_cfg.clone(), &mut rng);
    let text_ids: Vec<usize> = (0..text_len).map(|_| rng.gen_range(2..lm_cfg.vocab)).collect();
    let feat_data: Vec<f64> = (0..n * spec.d_v).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let fm = FeatureMap::new(Tensor::new(&[n, spec.d_v], feat_data.clone()), (side, side));
        let t0 = Instant::now();
        let tokens = projector.forward(&fm)?.tokens.tokens;
        let logits = lm.forward(Some(&tokens), &text_ids, false)?;
        let targets: Vec<Option<usize>> = (0..logits.shape()[0]).map(|i| Some(2 + i % (lm_cfg.vocab - 2))).collect();
        let loss = tensor_core::ops::masked_cross_entropy(&logits, &targets);
        loss.backward();
        times.push(t0.elapsed().as_secs_f64());
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(ProfileReport {
        projector_flops,
        lm_flops,
        total_flops: projector_flops + lm_flops,
        median_wall_secs: times[times.len() / 2],
        reps,
    })
}

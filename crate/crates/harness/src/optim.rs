use tensor_core::Tensor;

/// AdamW with decoupled weight decay and bias correction. State is keyed by
/// position in the parameter list, so the list must stay stable across steps.
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &[(String, Tensor)], beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> AdamW {
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            v: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
        }
    }

    /// One update from the gradients currently stored on the params. Clips
    /// by global norm first, then applies the Adam step and decoupled decay.
    pub fn step(&mut self, params: &[(String, Tensor)], lr: f64, grad_clip: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter list changed size");
        let grads: Vec<Vec<f64>> = params
            .iter()
            .map(|(name, t)| t.grad().unwrap_or_else(|| panic!("no gradient for {name}")))
            .collect();
        let norm: f64 = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        let clip = if norm > grad_clip { grad_clip / norm } else { 1.0 };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (_, t)) in params.iter().enumerate() {
            let mut data = t.to_vec();
            for (j, g0) in grads[i].iter().enumerate() {
                let g = g0 * clip;
                self.m[i][j] = self.beta1 * self.m[i][j] + (1.0 - self.beta1) * g;
                self.v[i][j] = self.beta2 * self.v[i][j] + (1.0 - self.beta2) * g * g;
                let mhat = self.m[i][j] / bc1;
                let vhat = self.v[i][j] / bc2;
                data[j] -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * data[j]);
            }
            t.set_data(&data);
        }
    }
}

/// Linear warmup to `lr` over `warmup` steps, then cosine decay to `min_lr`
/// by the final step. `step` is 1-based.
pub fn cosine_lr(lr: f64, min_lr: f64, warmup: usize, total: usize, step: usize) -> f64 {
    assert!(step >= 1 && step <= total);
    if step <= warmup {
        return lr * step as f64 / warmup as f64;
    }
    if total == warmup {
        return lr;
    }
    let t = (step - warmup) as f64 / (total - warmup) as f64;
    min_lr + 0.5 * (lr - min_lr) * (1.0 + (std::f64::consts::PI * t).cos())
}

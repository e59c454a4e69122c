//! Adam and a reduce-on-plateau learning-rate schedule.

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state for one flat parameter block. Minimizes: callers pass the
/// gradient of the loss (negate for ascent).
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t);
        let bc2 = 1.0 - beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Multiplies the learning rate by `factor` once the best loss has failed
/// to improve by at least `threshold` for more than `patience` consecutive
/// evaluations. Reductions smaller than `min_delta` are skipped.
#[derive(Debug, Clone)]
pub struct Plateau {
    pub patience: usize,
    pub factor: f64,
    pub threshold: f64,
    pub min_delta: f64,
    best: f64,
    bad: usize,
}

impl Plateau {
    pub fn new(patience: usize, factor: f64) -> Self {
        Self {
            patience,
            factor,
            threshold: 1e-12,
            min_delta: 1e-8,
            best: f64::INFINITY,
            bad: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Records a loss and returns the (possibly reduced) learning rate.
    pub fn observe(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best - self.threshold {
            self.best = loss;
            self.bad = 0;
            return lr;
        }
        self.bad += 1;
        if self.bad > self.patience {
            self.bad = 0;
            let next = lr * self.factor;
            if lr - next > self.min_delta {
                return next;
            }
        }
        lr
    }
}

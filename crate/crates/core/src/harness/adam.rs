use super::OptimizerConfig;

/// Adam with bias correction over a fixed list of parameter slices.
#[derive(Debug, Clone)]
pub struct Adam {
    config: OptimizerConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u32,
}

impl Adam {
    pub fn new(config: OptimizerConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            first: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            second: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            step: 0,
        }
    }

    /// Learning rate for the upcoming step out of `total`.
    pub fn learning_rate(&self, total: usize) -> f64 {
        let lr = self.config.lr;
        if !self.config.cosine_decay || total == 0 {
            return lr;
        }
        let progress = self.step as f64 / total as f64;
        0.5 * lr * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    pub fn step(&mut self, params: [&mut [f64]; 2], grads: [&[f64]; 2], lr: f64) {
        self.step += 1;
        let OptimizerConfig { beta1, beta2, eps, .. } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (slot, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = OptimizerConfig::default();
        let mut adam = Adam::new(cfg.clone(), &[2, 1]);
        let (mut a, mut b) = (vec![1.0, -1.0], vec![0.5]);
        adam.step([&mut a, &mut b], [&[2.0, -3.0], &[0.0]], cfg.lr);
        assert!((a[0] - (1.0 - cfg.lr)).abs() < 1e-9);
        assert!((a[1] - (-1.0 + cfg.lr)).abs() < 1e-9);
        assert_eq!(b[0], 0.5);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let cfg = OptimizerConfig {
            lr: 0.05,
            ..OptimizerConfig::default()
        };
        let mut adam = Adam::new(cfg, &[3, 0]);
        let mut x = vec![3.0, -2.0, 0.5];
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            adam.step([&mut x, &mut []], [&g, &[]], 0.05);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-3), "{x:?}");
    }

    #[test]
    fn cosine_schedule() {
        let cfg = OptimizerConfig {
            cosine_decay: true,
            ..OptimizerConfig::default()
        };
        let mut adam = Adam::new(cfg.clone(), &[1, 0]);
        assert_eq!(adam.learning_rate(10), cfg.lr);
        let mut p = vec![0.0];
        for _ in 0..5 {
            adam.step([&mut p, &mut []], [&[1.0], &[]], 0.0);
        }
        assert!((adam.learning_rate(10) - 0.5 * cfg.lr).abs() < 1e-15);
    }
}

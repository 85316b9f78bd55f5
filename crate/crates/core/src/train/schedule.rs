/// Inverse-square-root schedule with linear warm-up:
/// `scale · d^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub model_dim: usize,
    pub warmup_steps: usize,
    pub scale: f64,
}

impl LrSchedule {
    /// Picks `scale` so the rate at `step == warmup_steps` equals `peak`.
    pub fn with_peak(model_dim: usize, warmup_steps: usize, peak: f64) -> Self {
        let scale = peak * (model_dim as f64).sqrt() * (warmup_steps as f64).sqrt();
        LrSchedule {
            model_dim,
            warmup_steps,
            scale,
        }
    }

    /// Learning rate at 1-based `step`.
    pub fn lr(&self, step: usize) -> f64 {
        let step = step.max(1) as f64;
        let warmup = self.warmup_steps.max(1) as f64;
        self.scale * (self.model_dim as f64).powf(-0.5) * step.powf(-0.5).min(step * warmup.powf(-1.5))
    }

    pub fn peak(&self) -> f64 {
        self.lr(self.warmup_steps)
    }
}

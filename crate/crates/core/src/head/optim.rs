/// Adam with decoupled weight decay.
///
/// Decay shrinks a tensor directly (`p *= 1 - lr * wd`) before the moment
/// update instead of being folded into its gradient. Only tensors flagged
/// `decay` are shrunk.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

/// One tensor taking part in an update.
pub struct Slot<'a> {
    pub values: &'a mut [f64],
    pub grads: &'a [f64],
    pub decay: bool,
    /// Frozen slots keep their values and moments untouched.
    pub frozen: bool,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamW {
            learning_rate,
            weight_decay,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, slots: &mut [Slot<'_>]) {
        if self.first.is_empty() {
            self.first = slots.iter().map(|s| vec![0.0; s.values.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, slot) in slots.iter_mut().enumerate() {
            if slot.frozen {
                continue;
            }
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for j in 0..slot.values.len() {
                let g = slot.grads[j];
                if slot.decay {
                    slot.values[j] *= 1.0 - self.learning_rate * self.weight_decay;
                }
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                slot.values[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    fn single(value: f64, grad: f64, decay: f64) -> f64 {
        let mut opt = AdamW::new(0.1, decay, 0.9, 0.999, 1e-8);
        let mut v = [value];
        opt.step(&mut [Slot {
            values: &mut v,
            grads: &[grad],
            decay: true,
            frozen: false,
        }]);
        v[0]
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        assert_eq!(single(0.7, 0.0, 0.0), 0.7);
    }

    #[test]
    fn first_step_matches_hand_rolled_update() {
        let (lr, b1, b2, eps, wd) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64, 0.01f64);
        let p0 = 2.0;
        let m = (1.0 - b1) * 1.0;
        let v = (1.0 - b2) * 1.0;
        let m_hat = m / (1.0 - b1);
        let v_hat = v / (1.0 - b2);
        let expected = p0 * (1.0 - lr * wd) - lr * m_hat / (v_hat.sqrt() + eps);
        assert_abs_diff_eq!(single(p0, 1.0, wd), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(single(p0, 1.0, 0.0), p0 - 0.1, epsilon = 1e-8);
    }

    #[test]
    fn undecayed_and_frozen_slots() {
        let mut opt = AdamW::new(0.1, 0.5, 0.9, 0.999, 1e-8);
        let (mut a, mut b) = ([1.0], [1.0]);
        for _ in 0..3 {
            opt.step(&mut [
                Slot {
                    values: &mut a,
                    grads: &[0.0],
                    decay: false,
                    frozen: false,
                },
                Slot {
                    values: &mut b,
                    grads: &[5.0],
                    decay: true,
                    frozen: true,
                },
            ]);
        }
        assert_eq!((a[0], b[0]), (1.0, 1.0));
    }

    #[test]
    fn trajectories_are_reproducible() {
        let run = || {
            let mut opt = AdamW::new(0.01, 1e-4, 0.9, 0.999, 1e-8);
            let mut x = [0.3, -1.2];
            for i in 0..50 {
                let g = [2.0 * x[0] + f64::from(i) * 0.01, x[1].sin()];
                opt.step(&mut [Slot {
                    values: &mut x,
                    grads: &g,
                    decay: true,
                    frozen: false,
                }]);
            }
            x
        };
        assert_eq!(run(), run());
    }
}

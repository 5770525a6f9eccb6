use crate::error::TensorError;
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Adam optimizer with bias correction.
///
/// First/second moment state is kept per parameter and persists across
/// steps. A learning rate of 0 is a valid no-op (used to sanity-check
/// training loops); negative or non-finite rates are rejected.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self, TensorError> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(TensorError::InvalidLearningRate(lr));
        }
        Ok(Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    /// Step counter (number of updates applied so far).
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Apply one update from the gradients currently held in `params`.
    pub fn step(&mut self, params: &mut ParamSet) {
        if self.m.is_empty() {
            for p in params.iter() {
                self.m.push(Tensor::zeros(p.value.shape().to_vec()));
                self.v.push(Tensor::zeros(p.value.shape().to_vec()));
            }
        }
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for id in params.ids().collect::<Vec<_>>() {
            let idx = id.index();
            let grad = params.grad(id).clone();
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            let value = params.value_mut(id).data_mut();
            for ((x, g), (mi, vi)) in value
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut ps = ParamSet::new();
        let w = ps
            .register("w", Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap())
            .unwrap();
        let mut opt = Adam::new(0.1, 0.9, 0.999, 1e-8).unwrap();
        opt.step(&mut ps);
        assert_eq!(ps.value(w).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        // With constant gradient g, the bias-corrected first step is
        // lr * g / (|g| + eps') ~ lr regardless of |g|.
        let mut ps = ParamSet::new();
        let w = ps.register("w", Tensor::scalar(5.0)).unwrap();
        ps.grad_mut(w).data_mut()[0] = 123.0;
        let mut opt = Adam::new(0.01, 0.9, 0.999, 1e-8).unwrap();
        opt.step(&mut ps);
        let step = 5.0 - ps.value(w).item();
        assert!((step - 0.01).abs() < 1e-6, "step {step}");
    }

    #[test]
    fn rejects_negative_lr() {
        assert!(Adam::new(-1.0, 0.9, 0.999, 1e-8).is_err());
        assert!(Adam::new(f64::NAN, 0.9, 0.999, 1e-8).is_err());
    }

    #[test]
    fn converges_on_parabola_and_matches_reference() {
        // Optimize f(x) = (x - 2)^2 from x = 0 and compare the entire
        // trajectory against an independently coded scalar Adam.
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let mut ps = ParamSet::new();
        let x = ps.register("x", Tensor::scalar(0.0)).unwrap();
        let mut opt = Adam::new(lr, b1, b2, eps).unwrap();

        let mut rx = 0.0f64;
        let (mut rm, mut rv) = (0.0f64, 0.0f64);
        for t in 1..=50u32 {
            ps.zero_grads();
            let mut tape = Tape::new();
            let xv = tape.param(x, &ps).unwrap();
            let c = tape.constant(Tensor::scalar(-2.0)).unwrap();
            let diff = tape.add(xv, c).unwrap();
            let sq = tape.mul(diff, diff).unwrap();
            let loss = tape.sum_all(sq).unwrap();
            tape.backward(loss, &mut ps).unwrap();
            opt.step(&mut ps);

            // reference update
            let g = 2.0 * (rx - 2.0);
            rm = b1 * rm + (1.0 - b1) * g;
            rv = b2 * rv + (1.0 - b2) * g * g;
            let mh = rm / (1.0 - b1.powi(t as i32));
            let vh = rv / (1.0 - b2.powi(t as i32));
            rx -= lr * mh / (vh.sqrt() + eps);

            assert!(
                (ps.value(x).item() - rx).abs() < 1e-12,
                "trajectory diverged at step {t}"
            );
        }
        assert!((ps.value(x).item() - 2.0).abs() < 0.5);
    }
}

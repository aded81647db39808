use super::Real;
use crate::error::{Error, Result};

/// Adam optimizer state (Kingma and Ba), one moment pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    /// Zero moments shaped like `shapes` (the length of each parameter slice).
    pub fn new(shapes: &[usize], lr: f64) -> Self {
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: shapes.iter().map(|&n| vec![T::ZERO; n]).collect(),
            v: shapes.iter().map(|&n| vec![T::ZERO; n]).collect(),
        }
    }

    /// One bias-corrected update of every parameter slice.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != self.m.len()
            || grads.len() != params.len()
            || params.iter().zip(grads).zip(&self.m).any(|((p, g), m)| p.len() != g.len() || p.len() != m.len())
        {
            return Err(Error::Shape("optimizer parameter/gradient shapes differ".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (ob1, ob2) = (T::from_f64(1.0 - self.beta1), T::from_f64(1.0 - self.beta2));
        let step_size = T::from_f64(self.lr / c1);
        let inv_c2 = T::from_f64(1.0 / c2);
        let eps = T::from_f64(self.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + ob1 * gi;
                v[i] = b2 * v[i] + ob2 * gi * gi;
                p[i] -= step_size * m[i] / ((v[i] * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![1.0f64, -2.0];
        let mut st = AdamState::new(&[2], 0.1);
        st.step(&mut [&mut p[..]], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(p, [1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![0.0f64];
        let mut st = AdamState::new(&[1], 0.01);
        st.step(&mut [&mut p[..]], &[&[3.0]]).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn quadratic_bowl() {
        let mut w = vec![1.0f64];
        let mut st = AdamState::new(&[1], 0.01);
        for _ in 0..500 {
            let g = [2.0 * w[0]];
            st.step(&mut [&mut w[..]], &[&g]).unwrap();
        }
        assert!(w[0].abs() < 0.05, "{}", w[0]);
    }
}

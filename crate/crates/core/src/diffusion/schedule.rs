//! Linear-beta noise schedule shared by the training loss and the DDIM
//! sampler.

use crate::error::{data_err, Result};

#[derive(Clone, Debug)]
pub struct DiffusionSchedule {
    pub t_steps: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Cumulative products; index `i` holds ᾱ for timestep `i+1`.
    pub alpha_bars: Vec<f64>,
}

pub fn make_schedule(t: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if t < 2 {
        return Err(data_err(format!("schedule needs T >= 2, got {t}")));
    }
    if !(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) {
        return Err(data_err(format!(
            "betas must satisfy 0 < start < end < 1, got ({beta_start}, {beta_end})"
        )));
    }
    let mut betas = Vec::with_capacity(t);
    for i in 0..t {
        betas.push(beta_start + (beta_end - beta_start) * i as f64 / (t - 1) as f64);
    }
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(t);
    let mut prod = 1.0;
    for &a in &alphas {
        prod *= a;
        alpha_bars.push(prod);
    }
    Ok(DiffusionSchedule { t_steps: t, betas, alphas, alpha_bars })
}

impl DiffusionSchedule {
    /// ᾱ at timestep `t` (1-based); ᾱ_0 = 1 by convention.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_step_products_by_hand() {
        let s = make_schedule(2, 0.1, 0.2).unwrap();
        assert!((s.alpha_bars[0] - 0.9).abs() < 1e-12);
        assert!((s.alpha_bars[1] - 0.72).abs() < 1e-12);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn default_schedule_strictly_decreasing() {
        let s = make_schedule(100, 1e-4, 0.02).unwrap();
        for i in 1..100 {
            assert!(s.alpha_bars[i] < s.alpha_bars[i - 1]);
        }
        assert!(s.alpha_bar(100) < s.alpha_bar(1));
        assert!(s.alpha_bar(1) < 1.0);
    }

    #[test]
    fn bounds_validated() {
        assert!(make_schedule(1, 0.1, 0.2).is_err());
        assert!(make_schedule(10, 0.2, 0.1).is_err());
        assert!(make_schedule(10, 0.0, 0.5).is_err());
        assert!(make_schedule(10, 0.1, 1.0).is_err());
    }
}

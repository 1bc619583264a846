//! Adam with coupled weight decay and the two-phase learning-rate schedule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ConfigError, NumericError};
use crate::model::ModelConfig;
use crate::params::{snap_f32, ParamStore};

/// Everything the trainer needs: the model shape plus optimization
/// hyperparameters and augmentation switches.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    /// Learning rate for epochs `0..phase1_epochs`, then `lr_phase2`.
    pub lr_phase1: f64,
    pub lr_phase2: f64,
    pub phase1_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled (L2-style) weight decay added to each gradient.
    pub weight_decay: f64,
    pub seed: u64,
    /// Elastic augmentation; amplitude 0 disables it.
    pub elastic_amplitude: f64,
    pub elastic_smoothness: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            epochs: 550,
            lr_phase1: 1e-4,
            lr_phase2: 1e-5,
            phase1_epochs: 500,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            seed: 0,
            elastic_amplitude: 0.0,
            elastic_smoothness: 4.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        if self.epochs < self.phase1_epochs {
            return Err(ConfigError(format!(
                "epochs ({}) must be >= phase1_epochs ({})",
                self.epochs, self.phase1_epochs
            )));
        }
        if !(self.lr_phase1 > 0.0) || !(self.lr_phase2 > 0.0) {
            return Err(ConfigError(format!(
                "learning rates must be positive, got {} and {}",
                self.lr_phase1, self.lr_phase2
            )));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(ConfigError(format!("{name} must be in [0,1), got {v}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(ConfigError(format!("eps must be positive, got {}", self.eps)));
        }
        if self.weight_decay < 0.0 || self.elastic_amplitude < 0.0 {
            return Err(ConfigError(
                "weight decay and elastic amplitude must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Piecewise-constant schedule with a single change point.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64, ConfigError> {
    if epoch >= cfg.epochs {
        return Err(ConfigError(format!(
            "epoch {epoch} out of range for a {}-epoch schedule",
            cfg.epochs
        )));
    }
    Ok(if epoch < cfg.phase1_epochs {
        cfg.lr_phase1
    } else {
        cfg.lr_phase2
    })
}

/// First/second moment estimates, aligned index-for-index with the
/// parameter store they were created from.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .entries()
            .iter()
            .map(|e| vec![0.0; e.data.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One Adam update over every parameter. `grads` must align with the store's
/// entry order. Parameters and moments are snapped back to the f32 grid
/// after the update so checkpoints (stored as f32) resume bit-identically.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<(), NumericError> {
    assert_eq!(
        grads.len(),
        params.entries().len(),
        "gradient list does not align with the parameter store"
    );
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for (i, entry) in params.entries_mut().iter_mut().enumerate() {
        let g_in = &grads[i];
        assert_eq!(
            g_in.len(),
            entry.data.len(),
            "gradient extent mismatch for {}",
            entry.name
        );
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for j in 0..entry.data.len() {
            if !g_in[j].is_finite() {
                return Err(NumericError {
                    context: format!(
                        "non-finite gradient for parameter {} (component {j})",
                        entry.name
                    ),
                });
            }
            let g = g_in[j] + cfg.weight_decay * entry.data[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            entry.data[j] = snap_f32(entry.data[j] - lr * m_hat / (libm::sqrt(v_hat) + cfg.eps));
            m[j] = snap_f32(m[j]);
            v[j] = snap_f32(v[j]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::Rng;

    fn store_with(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", &[values.len()], values.to_vec()).unwrap();
        s
    }

    fn bare_cfg() -> TrainConfig {
        TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_gradient_zero_decay_is_a_no_op() {
        let mut s = store_with(&[0.5, -1.25, 3.0]);
        let before = s.get("p").unwrap().data.clone();
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[vec![0.0; 3]], &mut st, 1e-3, &bare_cfg()).unwrap();
        assert_eq!(s.get("p").unwrap().data, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_matches_closed_form() {
        let mut r = crate::rng::stream(1, 0);
        let p0: Vec<f64> = (0..16).map(|_| snap_f32(r.gen_range(-1.0..1.0))).collect();
        let g: Vec<f64> = (0..16).map(|_| r.gen_range(-2.0..2.0)).collect();
        let cfg = bare_cfg();
        let lr = 1e-3;
        let mut s = store_with(&p0);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[g.clone()], &mut st, lr, &cfg).unwrap();
        for (j, &after) in s.get("p").unwrap().data.iter().enumerate() {
            let expected = snap_f32(p0[j] - lr * g[j] / (libm::fabs(g[j]) + cfg.eps));
            assert!(
                (after - expected).abs() < 1e-9,
                "component {j}: {after} vs {expected}"
            );
        }
    }

    #[test]
    fn identical_parameters_stay_identical() {
        let mut s = ParamStore::new();
        s.add("a", &[4], vec![0.3; 4]).unwrap();
        s.add("b", &[4], vec![0.3; 4]).unwrap();
        let mut st = AdamState::new(&s);
        let g = vec![0.7, -0.2, 0.05, 1.3];
        for _ in 0..5 {
            adam_step(
                &mut s,
                &[g.clone(), g.clone()],
                &mut st,
                1e-3,
                &TrainConfig::default(),
            )
            .unwrap();
        }
        assert_eq!(s.get("a").unwrap().data, s.get("b").unwrap().data);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut s = store_with(&[1.0, 2.0]);
        let mut st = AdamState::new(&s);
        let err = adam_step(
            &mut s,
            &[vec![0.0, f64::NAN]],
            &mut st,
            1e-3,
            &bare_cfg(),
        )
        .unwrap_err();
        assert!(err.context.contains("p"), "got: {}", err.context);
        assert!(err.context.contains("component 1"), "got: {}", err.context);
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let run = || {
            let mut s = store_with(&[0.1, -0.4, 0.9]);
            let mut st = AdamState::new(&s);
            for k in 0..10 {
                let g = vec![0.1 * k as f64, -0.05, 0.3];
                adam_step(&mut s, &[g], &mut st, 1e-3, &TrainConfig::default()).unwrap();
            }
            (s.get("p").unwrap().data.clone(), st)
        };
        let (p1, s1) = run();
        let (p2, s2) = run();
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn decay_pulls_weights_toward_zero() {
        let mut s = store_with(&[1.0]);
        let mut st = AdamState::new(&s);
        let cfg = TrainConfig {
            weight_decay: 0.1,
            ..TrainConfig::default()
        };
        adam_step(&mut s, &[vec![0.0]], &mut st, 1e-3, &cfg).unwrap();
        assert!(s.get("p").unwrap().data[0] < 1.0);
    }

    #[test]
    fn schedule_has_one_change_point() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg).unwrap(), 1e-4);
        assert_eq!(lr_at(499, &cfg).unwrap(), 1e-4);
        assert_eq!(lr_at(500, &cfg).unwrap(), 1e-5);
        assert_eq!(lr_at(549, &cfg).unwrap(), 1e-5);
        assert!(lr_at(550, &cfg).is_err());
        let mut changes = 0;
        for e in 1..cfg.epochs {
            if lr_at(e, &cfg).unwrap() != lr_at(e - 1, &cfg).unwrap() {
                changes += 1;
            }
        }
        assert_eq!(changes, 1);
    }

    #[test]
    fn schedule_respects_overridden_boundary() {
        let cfg = TrainConfig {
            epochs: 100,
            phase1_epochs: 80,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(79, &cfg).unwrap(), 1e-4);
        assert_eq!(lr_at(80, &cfg).unwrap(), 1e-5);
    }

    #[test]
    fn validation_catches_bad_ranges() {
        let model = ModelConfig {
            input_h: 8,
            input_w: 8,
            blocks: 2,
            channels: alloc::vec![4, 8],
            c_cls: 2,
            fusion_blocks: 1,
            heads: 2,
            n_a: 2,
            ..ModelConfig::default()
        };
        let good = TrainConfig {
            model,
            epochs: 10,
            phase1_epochs: 8,
            ..TrainConfig::default()
        };
        assert!(good.validate().is_ok());
        assert!(TrainConfig {
            epochs: 5,
            phase1_epochs: 8,
            ..good.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lr_phase2: 0.0,
            ..good.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            beta1: 1.0,
            ..good.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            weight_decay: -0.1,
            ..good
        }
        .validate()
        .is_err());
    }
}

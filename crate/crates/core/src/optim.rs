//! Named parameter sets, Adam / SGD-momentum optimizers, EMA teacher update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered, named collection of trainable tensors. Optimizer state is kept
/// aligned with entry order, so entries must not be reordered once an
/// optimizer has stepped.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|(n, _)| *n != name),
            "duplicate parameter name {name}"
        );
        self.entries.push((name, tensor.with_grad()));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn at(&self, idx: usize) -> &Tensor {
        &self.entries[idx].1
    }

    pub fn at_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.entries[idx].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn clear_grads(&mut self) {
        for (_, t) in &mut self.entries {
            t.clear_grad();
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }

    /// True when every gradient buffer is absent (no backward touched us).
    pub fn grads_absent(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.grad().is_none())
    }

    /// Overwrite values from another set, matched by name; shapes must agree
    /// and every entry here must be present there.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<()> {
        for (name, t) in self.iter_mut() {
            let src = other.get(name).ok_or_else(|| {
                Error::Checkpoint(format!("parameter '{name}' missing from checkpoint"))
            })?;
            if src.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}': checkpoint shape {:?} vs expected {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

/// Adam with bias correction and optional decoupled weight decay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight decay applied before the Adam step; 0 disables it.
    pub weight_decay: f64,
    step: u64,
    #[serde(skip)]
    first_moment: Vec<Vec<f64>>,
    #[serde(skip)]
    second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn ensure_state(&mut self, params: &ParamSet) -> Result<()> {
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        if self.first_moment.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, parameter set has {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        for (i, (name, t)) in params.iter().enumerate() {
            if self.first_moment[i].len() != t.numel() {
                return Err(Error::Shape(format!(
                    "moment size {} does not match parameter {name} ({})",
                    self.first_moment[i].len(),
                    t.numel()
                )));
            }
        }
        Ok(())
    }

    /// One bias-corrected update. Gradients are consumed from each tensor;
    /// a missing gradient counts as zero (moments still decay).
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        self.ensure_state(params)?;
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (_, t)) in params.iter_mut().enumerate() {
            let grad = t.take_grad();
            if self.weight_decay > 0.0 {
                let decay = self.learning_rate * self.weight_decay;
                for p in t.data_mut() {
                    *p -= decay * *p;
                }
            }
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let data = t.data_mut();
            for j in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[j]);
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// SGD with classical (heavy-ball) momentum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SgdMomentum {
    pub learning_rate: f64,
    pub momentum: f64,
    step: u64,
    #[serde(skip)]
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        SgdMomentum { learning_rate, momentum, step: 0, velocity: Vec::new() }
    }

    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::Shape("optimizer/parameter set length mismatch".into()));
        }
        self.step += 1;
        for (i, (name, t)) in params.iter_mut().enumerate() {
            let grad = t.take_grad();
            let vel = &mut self.velocity[i];
            if vel.len() != t.numel() {
                return Err(Error::Shape(format!("velocity shape mismatch for {name}")));
            }
            let data = t.data_mut();
            for j in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[j]);
                vel[j] = self.momentum * vel[j] + g;
                data[j] -= self.learning_rate * vel[j];
            }
        }
        Ok(())
    }
}

/// `teacher <- momentum * teacher + (1 - momentum) * student`, elementwise.
pub fn ema_update(teacher: &mut ParamSet, student: &ParamSet, momentum: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::Domain(format!("ema momentum {momentum} outside [0, 1]")));
    }
    if teacher.len() != student.len() {
        return Err(Error::Shape("teacher/student parameter sets differ in size".into()));
    }
    for i in 0..teacher.len() {
        let s = student.at(i);
        let t = teacher.at_mut(i);
        if t.shape() != s.shape() {
            return Err(Error::Shape(format!(
                "teacher shape {:?} vs student shape {:?} at entry {i}",
                t.shape(),
                s.shape()
            )));
        }
        let sv = s.data();
        for (tv, sv) in t.data_mut().iter_mut().zip(sv.iter()) {
            *tv = momentum * *tv + (1.0 - momentum) * sv;
        }
    }
    Ok(())
}

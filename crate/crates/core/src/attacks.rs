//! Malicious client behaviours.
//!
//! All attackers draw from one shared pool of clean samples that they stamp
//! with a trigger and relabel to the target class. An attacker returns the
//! delta it submits; the harness wraps it in a [`ModelUpdate`](crate::ModelUpdate).

use crate::data::{LabeledDataset, TriggerPattern};
use crate::ddig::{self, BetaMode};
use crate::error::{Error, Result};
use crate::model::{delta_between, local_train, sgd_epoch, LayerShape, ModelParams, TrainSpec};
use crate::rng::SimRng;
use rand::SeedableRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Basic,
    Alternate,
    Dba,
    Sybil,
    Adaptive,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Basic => "basic",
            AttackKind::Alternate => "alternate",
            AttackKind::Dba => "dba",
            AttackKind::Sybil => "sybil",
            AttackKind::Adaptive => "adaptive",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "basic" => AttackKind::Basic,
            "alternate" => AttackKind::Alternate,
            "dba" => AttackKind::Dba,
            "sybil" => AttackKind::Sybil,
            "adaptive" => AttackKind::Adaptive,
            other => return Err(Error::config(format!("unknown attack kind `{other}`"))),
        })
    }

    /// Whether the attacker trains against the alternating objective.
    pub fn alternates(self) -> bool {
        matches!(self, AttackKind::Alternate | AttackKind::Sybil | AttackKind::Adaptive)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub trigger: TriggerPattern,
    /// Number of pool samples each attacker poisons.
    pub poison_count: usize,
    /// Final delta multiplier.
    pub boost: f64,
    /// Strength of the pull toward the benign estimate.
    pub stealth_rho: f64,
    /// Weight of the clean loss in clean epochs.
    pub lambda_clean: f64,
    pub dba_parts: usize,
}

impl AttackSpec {
    pub fn validate(&self, width: usize, classes: usize) -> Result<()> {
        self.trigger.validate(width, classes)?;
        if !(self.boost >= 1.0 && self.boost.is_finite()) {
            return Err(Error::config(format!("boost {} must be at least 1", self.boost)));
        }
        if !(self.stealth_rho >= 0.0 && self.stealth_rho.is_finite()) {
            return Err(Error::config("stealth_rho must be non-negative"));
        }
        if !(self.lambda_clean >= 0.0 && self.lambda_clean.is_finite()) {
            return Err(Error::config("lambda_clean must be non-negative"));
        }
        if self.kind == AttackKind::Dba {
            if self.dba_parts < 2 {
                return Err(Error::config("dba needs at least 2 trigger parts"));
            }
            self.trigger.split(self.dba_parts)?;
        }
        Ok(())
    }
}

/// What one attacker sees in a round.
#[derive(Debug, Clone, Copy)]
pub struct AttackInput<'a> {
    pub global: &'a ModelParams,
    /// The attacker's own clean partition.
    pub clean: &'a LabeledDataset,
    /// Shared pool of clean samples to poison.
    pub pool: &'a LabeledDataset,
    pub train: TrainSpec,
    pub seed: u64,
}

/// The first `count` pool samples with `trigger` applied, relabelled.
pub fn poisoned_samples(pool: &LabeledDataset, trigger: &TriggerPattern, count: usize) -> Result<LabeledDataset> {
    if count > pool.len() {
        return Err(Error::config(format!(
            "poison_count {count} exceeds the shared pool of {}",
            pool.len()
        )));
    }
    let mut out = LabeledDataset::empty(pool.width(), pool.classes());
    for i in 0..count {
        let mut x = pool.sample(i).to_vec();
        trigger.apply(&mut x);
        out.push(&x, trigger.target_label);
    }
    Ok(out)
}

fn poisoned_training_set(input: &AttackInput, trigger: &TriggerPattern, count: usize) -> Result<LabeledDataset> {
    input.clean.concat(&poisoned_samples(input.pool, trigger, count)?)
}

/// Plain training on the clean partition plus poisoned samples.
pub fn basic_attack(input: &AttackInput, spec: &AttackSpec) -> Result<Vec<f64>> {
    let data = poisoned_training_set(input, &spec.trigger, spec.poison_count)?;
    local_train(input.global, &data, &input.train, input.seed)
}

/// Basic attack with only part `part_index` of the trigger.
pub fn dba_attack(input: &AttackInput, spec: &AttackSpec, part_index: usize) -> Result<Vec<f64>> {
    let parts = spec.trigger.split(spec.dba_parts.max(1))?;
    let part = parts.get(part_index).ok_or_else(|| {
        Error::config(format!("dba part {part_index} out of {}", parts.len()))
    })?;
    let data = poisoned_training_set(input, part, spec.poison_count)?;
    local_train(input.global, &data, &input.train, input.seed)
}

/// The attacker's honest update on its own clean data, used as the stealth
/// anchor.
pub fn benign_estimate(input: &AttackInput) -> Result<Vec<f64>> {
    local_train(input.global, input.clean, &input.train, input.seed)
}

/// Epoch-alternating attack.
///
/// Even epochs train on clean data with the loss weighted by
/// `lambda_clean`, each step followed by a proximal pull of the running
/// delta toward `benign` (the implicit step for `rho * |delta - benign|^2`).
/// Odd epochs train on clean plus poisoned data. The final delta is scaled
/// by `boost`.
pub fn alternate_attack(input: &AttackInput, spec: &AttackSpec, benign: &[f64]) -> Result<Vec<f64>> {
    if benign.len() != input.global.dim() {
        return Err(Error::shape("benign estimate does not match the model"));
    }
    input.train.validate()?;
    let poisoned = poisoned_training_set(input, &spec.trigger, spec.poison_count)?;
    let mut rng = SimRng::seed_from_u64(input.seed);
    let mut local = input.global.clone();
    let shrink = 1.0 / (1.0 + 2.0 * input.train.lr * spec.stealth_rho);
    let global = input.global.flat();
    for epoch in 0..input.train.epochs {
        if epoch % 2 == 1 {
            sgd_epoch(&mut local, &poisoned, input.train.lr, input.train.batch_size, 1.0, &mut rng, &mut |_, _| {})?;
        } else {
            let mut pull = |p: &mut ModelParams, _: &[f64]| {
                if spec.stealth_rho > 0.0 {
                    for ((w, &g), &b) in p.flat_mut().iter_mut().zip(global).zip(benign) {
                        *w = g + b + (*w - g - b) * shrink;
                    }
                }
            };
            sgd_epoch(
                &mut local,
                input.clean,
                input.train.lr,
                input.train.batch_size,
                spec.lambda_clean,
                &mut rng,
                &mut pull,
            )?;
        }
    }
    let mut delta = delta_between(input.global, &local);
    if spec.boost != 1.0 {
        delta.iter_mut().for_each(|x| *x *= spec.boost);
    }
    Ok(delta)
}

/// Number of classes an indicator can be forged to claim under `beta`.
///
/// With a data-dependent threshold not every entry can exceed it: under the
/// mean at most `m - 1` can, under mean plus one standard deviation fewer
/// than half.
pub fn max_claimable(classes: usize, beta: BetaMode) -> usize {
    match beta {
        BetaMode::Absolute(_) => classes,
        BetaMode::Mean => classes.saturating_sub(1),
        BetaMode::MeanPlusStd => (classes.div_ceil(2)).saturating_sub(1).max(1).min(classes),
    }
}

/// Rewrite the last-layer weight block of `delta` so the server infers the
/// largest possible set of classes for this client.
///
/// The classes with the largest current indicator entries are claimed. Each
/// row of the block is shifted by a constant, a rank-1 correction that moves
/// that row's indicator entry to a common high value (claimed) or a common
/// low value (unclaimed). Other coordinates are untouched.
pub fn forge_indicator(delta: &mut [f64], shapes: &[LayerShape], lr: f64, beta: BetaMode) -> Result<Vec<bool>> {
    let g = ddig::recover_last_layer_gradient(delta, shapes, lr)?;
    let classes = shapes.last().map(|s| s.out).unwrap_or(0);
    let u = ddig::indicator(&g, classes)?;
    let claim = max_claimable(classes, beta);
    let mut order: Vec<usize> = (0..classes).collect();
    order.sort_by(|&a, &b| u[b].total_cmp(&u[a]));
    let scale = u.iter().fold(1.0f64, |acc, x| acc.max(x.abs()));
    let (high, low) = match beta {
        BetaMode::Absolute(b) => (scale.max(b + scale), (-scale).min(b - scale)),
        _ => (scale, -scale),
    };
    let mut claimed = vec![false; classes];
    for &s in &order[..claim] {
        claimed[s] = true;
    }
    let r = g.len() / classes;
    let block = crate::model::last_weight_range(shapes);
    // u_s = sum_t delta[s][t] / lr, so shifting a row by c moves u_s by c * r / lr
    for (s, row) in delta[block].chunks_mut(r).enumerate() {
        let want = if claimed[s] { high } else { low };
        let shift = (want - u[s]) * lr / r as f64;
        row.iter_mut().for_each(|x| *x += shift);
    }
    Ok(claimed)
}

/// Alternate attack followed by indicator forging.
pub fn adaptive_attack(input: &AttackInput, spec: &AttackSpec, benign: &[f64], beta: BetaMode) -> Result<Vec<f64>> {
    let mut delta = alternate_attack(input, spec, benign)?;
    forge_indicator(&mut delta, input.global.shapes(), input.train.lr, beta)?;
    Ok(delta)
}

/// Delta for one attacker that is not a Sybil follower.
pub fn attack_delta(input: &AttackInput, spec: &AttackSpec, attacker_rank: usize, beta: BetaMode) -> Result<Vec<f64>> {
    match spec.kind {
        AttackKind::Basic => basic_attack(input, spec),
        AttackKind::Dba => dba_attack(input, spec, attacker_rank % spec.dba_parts),
        AttackKind::Alternate | AttackKind::Sybil => {
            let benign = benign_estimate(input)?;
            alternate_attack(input, spec, &benign)
        }
        AttackKind::Adaptive => {
            let benign = benign_estimate(input)?;
            adaptive_attack(input, spec, &benign, beta)
        }
    }
}

//! Recurrent stop-probability controller that picks the number of inner
//! adaptation steps for the next episode, trained with REINFORCE.
//!
//! Per episode the controller reads the standardized `(loss, ANI)` sequence
//! of the adaptation, emits a stop probability per step, and sets the next
//! episode's step count from the last one: `T = clamp(⌊1/p⌋, t_min, t_max)`.

use rand::Rng;

use crate::autodiff::{grad, ParamSet, ParamVars, Tape, Var};
use crate::error::{Error, Result};
use crate::meta::AdaptationTrace;
use crate::tensor::Tensor;

pub const W_INPUT: &str = "controller.lstm.w_input";
pub const W_HIDDEN: &str = "controller.lstm.w_hidden";
pub const LSTM_BIAS: &str = "controller.lstm.bias";
pub const STOP_WEIGHT: &str = "controller.stop.weight";
pub const STOP_BIAS: &str = "controller.stop.bias";
const STATE_NORMALIZER: &str = "state.controller.normalizer";
const STATE_NEXT_STEPS: &str = "state.controller.next_steps";

/// Width of the per-step controller input `(loss, ANI)`.
pub const INPUT_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepBounds {
    pub t_min: usize,
    pub t_max: usize,
}

impl Default for StepBounds {
    fn default() -> Self {
        StepBounds {
            t_min: 4,
            t_max: 15,
        }
    }
}

impl StepBounds {
    pub fn new(t_min: usize, t_max: usize) -> Result<Self> {
        if t_min == 0 || t_min > t_max {
            return Err(Error::Config(format!(
                "step bounds need 1 <= min <= max, got {t_min}..{t_max}"
            )));
        }
        Ok(StepBounds { t_min, t_max })
    }

    /// Midpoint used before the controller has produced a probability.
    pub fn initial(self) -> usize {
        self.t_min + (self.t_max - self.t_min) / 2
    }
}

/// `clamp(⌊1/p⌋, t_min, t_max)`.
pub fn next_step_count(p_final: f64, bounds: StepBounds) -> usize {
    let inv = (1.0 / p_final).floor();
    if !(inv < bounds.t_max as f64) {
        // covers p = 0 and NaN as well
        return bounds.t_max;
    }
    (inv.max(0.0) as usize).clamp(bounds.t_min, bounds.t_max)
}

/// How per-step returns are formed from rewards.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ReturnMode {
    /// `Q_t = Σ_{τ≥t} r_τ`.
    #[default]
    RewardToGo,
    /// Every step receives the episode total `Σ_τ r_τ`.
    Constant,
}

impl std::str::FromStr for ReturnMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reward_to_go" => Ok(ReturnMode::RewardToGo),
            "constant" => Ok(ReturnMode::Constant),
            other => Err(Error::Config(format!("unknown return mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for ReturnMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReturnMode::RewardToGo => "reward_to_go",
            ReturnMode::Constant => "constant",
        })
    }
}

/// Which log-probabilities the policy gradient weights by the returns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GradientMode {
    /// Each step is a stop/continue decision: `ln(1 − p_t)` for the steps
    /// that continued and `ln p_T` for the final one.
    #[default]
    StopContinue,
    /// `ln p_t` at every step.
    Literal,
}

impl std::str::FromStr for GradientMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stop_continue" => Ok(GradientMode::StopContinue),
            "literal" => Ok(GradientMode::Literal),
            other => Err(Error::Config(format!(
                "unknown controller gradient '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for GradientMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GradientMode::StopContinue => "stop_continue",
            GradientMode::Literal => "literal",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardConfig {
    /// Per-step penalty `η`.
    pub penalty: f64,
    pub controller_lr: f64,
    pub returns: ReturnMode,
    pub gradient: GradientMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            penalty: 0.01,
            controller_lr: 1e-4,
            returns: ReturnMode::RewardToGo,
            gradient: GradientMode::StopContinue,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerConfig {
    pub hidden: usize,
    pub bounds: StepBounds,
    pub reward: RewardConfig,
    /// Step count for the first episode; `None` means the bounds' midpoint.
    pub initial_steps: Option<usize>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            hidden: 32,
            bounds: StepBounds::default(),
            reward: RewardConfig::default(),
            initial_steps: None,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        StepBounds::new(self.bounds.t_min, self.bounds.t_max)?;
        if self.hidden == 0 {
            return Err(Error::Config("controller.hidden must be at least 1".into()));
        }
        let r = &self.reward;
        if !(r.penalty.is_finite() && r.penalty >= 0.0) || !r.controller_lr.is_finite() {
            return Err(Error::Config(
                "controller penalty and learning rate must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn initial_steps(&self) -> usize {
        self.initial_steps
            .unwrap_or_else(|| self.bounds.initial())
            .clamp(self.bounds.t_min, self.bounds.t_max)
    }
}

/// LSTM and stop-head weights. Gate columns are ordered input, forget,
/// candidate, output. The stop bias starts at `logit(1/(T₀ + ½))` so that
/// an untrained controller keeps proposing roughly `T₀` steps.
pub fn init_controller(hidden: usize, initial_steps: usize, rng: &mut impl Rng) -> ParamSet {
    let bound = 1.0 / (hidden as f64).sqrt();
    let mut p = ParamSet::new();
    p.insert_uniform(W_INPUT, INPUT_DIM, 4 * hidden, bound, rng);
    p.insert_uniform(W_HIDDEN, hidden, 4 * hidden, bound, rng);
    p.insert_uniform(LSTM_BIAS, 1, 4 * hidden, bound, rng);
    p.insert_uniform(STOP_WEIGHT, hidden, 1, bound, rng);
    let p0 = 1.0 / (initial_steps as f64 + 0.5);
    p.insert(STOP_BIAS, Tensor::scalar((p0 / (1.0 - p0)).ln()));
    p
}

/// Per-dimension running mean and variance (Welford).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunningNormalizer {
    count: f64,
    mean: [f64; INPUT_DIM],
    m2: [f64; INPUT_DIM],
}

impl RunningNormalizer {
    pub const EPSILON: f64 = 1e-8;

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn update(&mut self, x: [f64; INPUT_DIM]) {
        self.count += 1.0;
        for i in 0..INPUT_DIM {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / self.count;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    pub fn std(&self) -> [f64; INPUT_DIM] {
        let mut out = [0.0; INPUT_DIM];
        if self.count > 0.0 {
            for (o, m2) in out.iter_mut().zip(self.m2) {
                *o = (m2 / self.count).sqrt();
            }
        }
        out
    }

    pub fn normalize(&self, x: [f64; INPUT_DIM]) -> [f64; INPUT_DIM] {
        let std = self.std();
        let mut out = [0.0; INPUT_DIM];
        for i in 0..INPUT_DIM {
            out[i] = (x[i] - self.mean[i]) / (std[i] + Self::EPSILON);
        }
        out
    }

    fn to_tensor(&self) -> Tensor {
        let mut data = vec![self.count, 0.0];
        data.extend_from_slice(&self.mean);
        data.extend_from_slice(&self.m2);
        Tensor::new(3, INPUT_DIM, data).expect("3 x 2")
    }

    fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.shape() != [3, INPUT_DIM] {
            return Err(Error::Checkpoint(format!(
                "normalizer state has shape {:?}",
                t.shape()
            )));
        }
        let d = t.data();
        Ok(RunningNormalizer {
            count: d[0],
            mean: [d[2], d[3]],
            m2: [d[4], d[5]],
        })
    }
}

/// Stop logits of the recurrence on `inputs`, from a zero state. Returns the
/// per-step logits and the final hidden state.
pub fn scan_logits(
    tape: &mut Tape,
    params: &ParamVars,
    inputs: &[[f64; INPUT_DIM]],
) -> Result<(Vec<Var>, Var)> {
    let w_in = params.get(W_INPUT)?;
    let w_h = params.get(W_HIDDEN)?;
    let bias = params.get(LSTM_BIAS)?;
    let stop_w = params.get(STOP_WEIGHT)?;
    let stop_b = params.get(STOP_BIAS)?;
    let hidden = tape.shape(w_h)[0];
    if tape.shape(w_in) != [INPUT_DIM, 4 * hidden] || tape.shape(bias) != [1, 4 * hidden] {
        return Err(Error::shape(
            "controller_scan",
            "inconsistent recurrent weights",
        ));
    }
    let mut h = tape.constant(Tensor::zeros(1, hidden));
    let mut c = tape.constant(Tensor::zeros(1, hidden));
    let mut logits = Vec::with_capacity(inputs.len());
    for x in inputs {
        let x = tape.constant(Tensor::row_vector(x));
        let a = tape.matmul(x, w_in)?;
        let b = tape.matmul(h, w_h)?;
        let gates = tape.add(a, b)?;
        let gates = tape.add_row_bias(gates, bias)?;
        let slice = |tape: &mut Tape, k: usize| tape.slice_cols(gates, k * hidden, hidden);
        let i = slice(tape, 0)?;
        let i = tape.sigmoid(i)?;
        let f = slice(tape, 1)?;
        let f = tape.sigmoid(f)?;
        let g = slice(tape, 2)?;
        let g = tape.tanh(g)?;
        let o = slice(tape, 3)?;
        let o = tape.sigmoid(o)?;
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        c = tape.add(keep, write)?;
        let squashed = tape.tanh(c)?;
        h = tape.mul(o, squashed)?;
        let z = tape.matmul(h, stop_w)?;
        logits.push(tape.add(z, stop_b)?);
    }
    Ok((logits, h))
}

#[derive(Clone, Debug)]
pub struct Scan {
    pub probabilities: Vec<f64>,
    pub final_hidden: Tensor,
}

/// Stop probabilities for already standardized inputs.
pub fn controller_scan(params: &ParamSet, inputs: &[[f64; INPUT_DIM]]) -> Result<Scan> {
    if inputs.is_empty() {
        return Err(Error::shape("controller_scan", "empty input sequence"));
    }
    if inputs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            step: 0,
            detail: "non-finite controller input".into(),
        });
    }
    let mut tape = Tape::new();
    let vars = ParamVars::constants(&mut tape, params);
    let (logits, h) = scan_logits(&mut tape, &vars, inputs)?;
    Ok(Scan {
        probabilities: logits
            .iter()
            .map(|&z| crate::autodiff::sigmoid(tape.value(z).item()))
            .collect(),
        final_hidden: tape.value(h).clone(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rewards {
    pub rewards: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Rewards {
    pub fn total(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// `r_t = e_T − e_t − η·t` with `t` counted from 1.
pub fn compute_rewards(accuracies: &[f64], penalty: f64, mode: ReturnMode) -> Rewards {
    let Some(&last) = accuracies.last() else {
        return Rewards {
            rewards: Vec::new(),
            returns: Vec::new(),
        };
    };
    let rewards: Vec<f64> = accuracies
        .iter()
        .enumerate()
        .map(|(i, &e)| last - e - penalty * (i + 1) as f64)
        .collect();
    let returns = match mode {
        ReturnMode::RewardToGo => {
            let mut acc = 0.0;
            let mut out = vec![0.0; rewards.len()];
            for (o, r) in out.iter_mut().zip(&rewards).rev() {
                acc += r;
                *o = acc;
            }
            out
        }
        ReturnMode::Constant => vec![rewards.iter().sum(); rewards.len()],
    };
    Rewards { rewards, returns }
}

/// `θ_s + lr · ∇ Σ_t Q_t log π_t`, gradient ascent on the return-weighted
/// log-likelihood of the observed stop decisions.
pub fn reinforce_update(
    params: &ParamSet,
    inputs: &[[f64; INPUT_DIM]],
    returns: &[f64],
    lr: f64,
    mode: GradientMode,
) -> Result<ParamSet> {
    if inputs.len() != returns.len() || inputs.is_empty() {
        return Err(Error::shape(
            "reinforce_update",
            format!("{} inputs with {} returns", inputs.len(), returns.len()),
        ));
    }
    if lr == 0.0 || returns.iter().all(|&q| q == 0.0) {
        return Ok(params.clone());
    }
    let last = inputs.len() - 1;
    let (_, g) = grad(params, |tape, vars| {
        let (logits, _) = scan_logits(tape, vars, inputs)?;
        let mut terms = Vec::with_capacity(logits.len());
        for (t, (&z, &q)) in logits.iter().zip(returns).enumerate() {
            let log_prob = match mode {
                GradientMode::Literal => tape.log_sigmoid(z)?,
                GradientMode::StopContinue if t == last => tape.log_sigmoid(z)?,
                GradientMode::StopContinue => {
                    let neg = tape.neg(z)?;
                    tape.log_sigmoid(neg)?
                }
            };
            terms.push(tape.scale(log_prob, q)?);
        }
        let stacked = tape.concat_rows(&terms)?;
        tape.sum_all(stacked)
    })
    .map_err(|e| match e {
        Error::NonFinite { op, .. } => Error::Numeric {
            step: 0,
            detail: format!("non-finite controller gradient in {op}"),
        },
        other => other,
    })?;
    let mut next = params.clone();
    next.add_scaled(&g, lr)?;
    if !next.is_finite() {
        return Err(Error::Numeric {
            step: 0,
            detail: "controller update produced non-finite parameters".into(),
        });
    }
    Ok(next)
}

#[derive(Clone, Debug)]
pub struct ControllerStep {
    pub probabilities: Vec<f64>,
    pub p_final: f64,
    pub next_steps: usize,
    pub rewards: Rewards,
}

/// Controller parameters with the running normalizer and the step count it
/// proposed for the next episode.
#[derive(Clone, Debug)]
pub struct StepController {
    pub config: ControllerConfig,
    pub params: ParamSet,
    normalizer: RunningNormalizer,
    next_steps: usize,
}

impl StepController {
    pub fn new(config: ControllerConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let next_steps = config.initial_steps();
        Ok(StepController {
            params: init_controller(config.hidden, next_steps, rng),
            config,
            normalizer: RunningNormalizer::default(),
            next_steps,
        })
    }

    pub fn next_steps(&self) -> usize {
        self.next_steps
    }

    pub fn normalizer(&self) -> &RunningNormalizer {
        &self.normalizer
    }

    /// Folds the episode's `(loss, ANI)` pairs into the running statistics
    /// and returns them standardized.
    pub fn standardize(&mut self, losses: &[f64], anis: &[f64]) -> Result<Vec<[f64; INPUT_DIM]>> {
        if losses.len() != anis.len() || losses.is_empty() {
            return Err(Error::shape(
                "controller",
                format!("{} losses with {} ANIs", losses.len(), anis.len()),
            ));
        }
        let raw: Vec<[f64; INPUT_DIM]> = losses.iter().zip(anis).map(|(&l, &m)| [l, m]).collect();
        if raw.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                step: 0,
                detail: "non-finite loss or ANI reached the controller".into(),
            });
        }
        for &x in &raw {
            self.normalizer.update(x);
        }
        Ok(raw.iter().map(|&x| self.normalizer.normalize(x)).collect())
    }

    /// Scans the trace, sets the next step count from the final stop
    /// probability, then applies one policy-gradient update.
    pub fn observe(&mut self, trace: &AdaptationTrace) -> Result<ControllerStep> {
        if trace.step_query_accuracies.len() != trace.step_losses.len() {
            return Err(Error::shape(
                "controller",
                "trace needs one query accuracy per step",
            ));
        }
        let inputs = self.standardize(&trace.step_losses, &trace.step_anis)?;
        self.observe_standardized(&inputs, &trace.step_query_accuracies)
    }

    pub fn observe_standardized(
        &mut self,
        inputs: &[[f64; INPUT_DIM]],
        accuracies: &[f64],
    ) -> Result<ControllerStep> {
        let scan = controller_scan(&self.params, inputs)?;
        let p_final = *scan.probabilities.last().expect("non-empty");
        self.next_steps = next_step_count(p_final, self.config.bounds);
        let reward = &self.config.reward;
        let rewards = compute_rewards(accuracies, reward.penalty, reward.returns);
        self.params = reinforce_update(
            &self.params,
            inputs,
            &rewards.returns,
            reward.controller_lr,
            reward.gradient,
        )?;
        Ok(ControllerStep {
            probabilities: scan.probabilities,
            p_final,
            next_steps: self.next_steps,
            rewards,
        })
    }

    /// Parameters plus `state.*` entries for checkpointing.
    pub fn to_params(&self) -> ParamSet {
        let mut out = self.params.clone();
        out.insert(STATE_NORMALIZER, self.normalizer.to_tensor());
        out.insert(STATE_NEXT_STEPS, Tensor::scalar(self.next_steps as f64));
        out
    }

    pub fn from_params(config: ControllerConfig, all: &ParamSet) -> Result<Self> {
        config.validate()?;
        let params = all.with_prefix("controller.");
        for name in [W_INPUT, W_HIDDEN, LSTM_BIAS, STOP_WEIGHT, STOP_BIAS] {
            params.get(name)?;
        }
        let normalizer = match all.get(STATE_NORMALIZER) {
            Ok(t) => RunningNormalizer::from_tensor(t)?,
            Err(_) => RunningNormalizer::default(),
        };
        let next_steps = match all.get(STATE_NEXT_STEPS) {
            Ok(t) => (t.item() as usize).clamp(config.bounds.t_min, config.bounds.t_max),
            Err(_) => config.initial_steps(),
        };
        Ok(StepController {
            config,
            params,
            normalizer,
            next_steps,
        })
    }
}

/// Step count stored in a checkpoint by [`StepController::to_params`].
pub fn checkpoint_steps(all: &ParamSet) -> Option<usize> {
    all.get(STATE_NEXT_STEPS).ok().map(|t| t.item() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(hidden: usize, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = init_controller(hidden, 9, &mut rng);
        p.insert_uniform(STOP_BIAS, 1, 1, 1.0, &mut rng);
        p
    }

    fn random_inputs(n: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect()
    }

    /// Plain-loop LSTM with the same gate layout.
    fn oracle(p: &ParamSet, inputs: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>) {
        let wi = p.get(W_INPUT).unwrap();
        let wh = p.get(W_HIDDEN).unwrap();
        let b = p.get(LSTM_BIAS).unwrap();
        let sw = p.get(STOP_WEIGHT).unwrap();
        let sb = p.get(STOP_BIAS).unwrap().item();
        let hd = wh.rows();
        let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
        let mut probs = Vec::new();
        for x in inputs {
            let mut pre = vec![0.0; 4 * hd];
            for (j, v) in pre.iter_mut().enumerate() {
                *v = b.get(0, j) + x[0] * wi.get(0, j) + x[1] * wi.get(1, j);
                for k in 0..hd {
                    *v += h[k] * wh.get(k, j);
                }
            }
            for k in 0..hd {
                let i = sigmoid(pre[k]);
                let f = sigmoid(pre[hd + k]);
                let g = pre[2 * hd + k].tanh();
                let o = sigmoid(pre[3 * hd + k]);
                c[k] = f * c[k] + i * g;
                h[k] = o * c[k].tanh();
            }
            let z: f64 = sb + (0..hd).map(|k| h[k] * sw.get(k, 0)).sum::<f64>();
            probs.push(sigmoid(z));
        }
        (probs, h)
    }

    #[test]
    fn zero_weights_give_one_half() {
        let p = random_params(4, 0).zeros_like();
        let scan = controller_scan(&p, &random_inputs(5, 1)).unwrap();
        assert!(scan.probabilities.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn scan_matches_loop_oracle() {
        for seed in 0..5 {
            let p = random_params(6, seed);
            let inputs = random_inputs(7, seed + 100);
            let scan = controller_scan(&p, &inputs).unwrap();
            let (probs, h) = oracle(&p, &inputs);
            for (a, b) in scan.probabilities.iter().zip(&probs) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in scan.final_hidden.data().iter().zip(&h) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_step_is_one_cell_application() {
        let p = random_params(3, 4);
        let inputs = random_inputs(1, 5);
        let scan = controller_scan(&p, &inputs).unwrap();
        assert_eq!(scan.probabilities.len(), 1);
        let (_, h) = oracle(&p, &inputs);
        assert!(scan
            .final_hidden
            .data()
            .iter()
            .zip(&h)
            .all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn scan_is_order_sensitive() {
        let p = random_params(8, 7);
        let inputs = random_inputs(6, 8);
        let mut reversed = inputs.clone();
        reversed.reverse();
        let a = controller_scan(&p, &inputs).unwrap().probabilities;
        let b = controller_scan(&p, &reversed).unwrap().probabilities;
        assert_ne!(a.last(), b.last());
    }

    #[test]
    fn non_finite_input_is_numeric_error() {
        let p = random_params(3, 1);
        assert!(matches!(
            controller_scan(&p, &[[f64::NAN, 0.0]]),
            Err(Error::Numeric { .. })
        ));
    }

    #[test]
    fn step_rule_examples() {
        let b = StepBounds::default();
        assert_eq!(next_step_count(0.2, b), 5);
        assert_eq!(next_step_count(0.9, b), 4);
        assert_eq!(next_step_count(0.05, b), 15);
        assert_eq!(next_step_count(0.0, b), 15);
        assert_eq!(b.initial(), 9);
    }

    #[test]
    fn initial_bias_maps_to_initial_steps() {
        let mut p = init_controller(4, 9, &mut ChaCha8Rng::seed_from_u64(0));
        p.insert(STOP_WEIGHT, Tensor::zeros(4, 1));
        let scan = controller_scan(&p, &[[0.3, -0.2]]).unwrap();
        assert_eq!(
            next_step_count(scan.probabilities[0], StepBounds::default()),
            9
        );
    }

    #[test]
    fn reward_examples() {
        let r = compute_rewards(&[0.5, 0.7, 0.8], 0.0, ReturnMode::RewardToGo);
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(&r.rewards, &[0.3, 0.1, 0.0]));
        assert!(close(&r.returns, &[0.4, 0.1, 0.0]));
        let r = compute_rewards(&[0.5, 0.7, 0.8], 0.0, ReturnMode::Constant);
        assert!(close(&r.returns, &[0.4, 0.4, 0.4]));
        let r = compute_rewards(&[0.6; 4], 0.0, ReturnMode::RewardToGo);
        assert!(r.rewards.iter().all(|&v| v == 0.0));
        let r = compute_rewards(&[0.6; 4], 0.1, ReturnMode::RewardToGo);
        assert!(r.rewards.windows(2).all(|w| w[1] < w[0]));
        assert!((r.rewards[2] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn zero_returns_or_rate_leave_params() {
        let p = random_params(4, 2);
        let x = random_inputs(3, 3);
        for mode in [GradientMode::StopContinue, GradientMode::Literal] {
            assert!(reinforce_update(&p, &x, &[0.0; 3], 0.1, mode)
                .unwrap()
                .bitwise_eq(&p));
            assert!(reinforce_update(&p, &x, &[1.0, 0.5, 0.2], 0.0, mode)
                .unwrap()
                .bitwise_eq(&p));
        }
    }

    #[test]
    fn single_step_update_matches_finite_differences_of_log_p() {
        let p = random_params(3, 9);
        let x = random_inputs(1, 10);
        let (q, lr) = (0.7, 0.01);
        let next = reinforce_update(&p, &x, &[q], lr, GradientMode::Literal).unwrap();
        let log_p = |p: &ParamSet| controller_scan(p, &x).unwrap().probabilities[0].ln();
        let h = 1e-6;
        for (name, t) in p.iter() {
            for i in 0..t.len() {
                let mut probe = p.clone();
                probe.get_mut(name).unwrap().data_mut()[i] += h;
                let plus = log_p(&probe);
                probe.get_mut(name).unwrap().data_mut()[i] -= 2.0 * h;
                let minus = log_p(&probe);
                let numeric = (plus - minus) / (2.0 * h);
                let step = next.get(name).unwrap().data()[i] - t.data()[i];
                assert!((step - lr * q * numeric).abs() < 1e-9, "{name}[{i}]");
            }
        }
        // with a single step both gradient modes weight ln p_T
        let other = reinforce_update(&p, &x, &[q], lr, GradientMode::StopContinue).unwrap();
        assert!(other.bitwise_eq(&next));
    }

    /// Monotone accuracies give non-negative returns. Ascending `ln(1 − p)`
    /// lowers the stop probability; ascending `ln p` raises it.
    #[test]
    fn gradient_modes_move_stop_probability_in_opposite_directions() {
        let p = random_params(4, 11);
        let x = random_inputs(6, 12);
        let acc: Vec<f64> = (1..=6).map(|t| t as f64 / 6.0).collect();
        let r = compute_rewards(&acc, 0.0, ReturnMode::RewardToGo);
        let before = controller_scan(&p, &x).unwrap().probabilities[5];
        let sc = reinforce_update(&p, &x, &r.returns, 0.05, GradientMode::StopContinue).unwrap();
        let lit = reinforce_update(&p, &x, &r.returns, 0.05, GradientMode::Literal).unwrap();
        assert!(controller_scan(&sc, &x).unwrap().probabilities[5] < before);
        assert!(controller_scan(&lit, &x).unwrap().probabilities[5] > before);
    }

    #[test]
    fn normalizer_matches_batch_statistics() {
        let mut n = RunningNormalizer::default();
        let xs = [[1.0, 10.0], [2.0, 20.0], [4.0, 40.0]];
        for x in xs {
            n.update(x);
        }
        let mean = 7.0 / 3.0;
        let var = xs.iter().map(|x| (x[0] - mean).powi(2)).sum::<f64>() / 3.0;
        let z = n.normalize([4.0, 40.0]);
        assert!((z[0] - (4.0 - mean) / (var.sqrt() + 1e-8)).abs() < 1e-9);
        assert!((z[0] - z[1]).abs() < 1e-6);
    }

    #[test]
    fn checkpoint_state_round_trips() {
        let mut c = StepController::new(
            ControllerConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let trace = AdaptationTrace {
            step_losses: vec![1.0, 0.8, 0.7],
            step_anis: vec![0.3, 0.35, 0.5],
            step_query_accuracies: vec![0.4, 0.5, 0.7],
            steps_taken: 3,
        };
        c.observe(&trace).unwrap();
        let saved = c.to_params();
        let back = StepController::from_params(ControllerConfig::default(), &saved).unwrap();
        assert!(back.params.bitwise_eq(&c.params));
        assert_eq!(back.normalizer(), c.normalizer());
        assert_eq!(back.next_steps(), c.next_steps());
        assert_eq!(checkpoint_steps(&saved), Some(c.next_steps()));
    }

    proptest::proptest! {
        #[test]
        fn step_rule_bounded_and_monotone(a in 1e-9f64..1.0, b in 1e-9f64..1.0, lo in 1usize..6, span in 0usize..12) {
            let bounds = StepBounds::new(lo, lo + span).unwrap();
            let (small, large) = if a <= b { (a, b) } else { (b, a) };
            let ts = next_step_count(small, bounds);
            let tl = next_step_count(large, bounds);
            proptest::prop_assert!((bounds.t_min..=bounds.t_max).contains(&ts));
            proptest::prop_assert!(tl <= ts);
        }
    }
}

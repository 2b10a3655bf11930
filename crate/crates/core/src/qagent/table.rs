use std::collections::HashMap;

use rand::Rng;

use crate::arch::{layer_choices, BlockArch, LayerCode, OpKind};

/// Agent state: the previous layer decision, or `Start` before the first one.
/// The step index is deliberately not part of the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StateKey {
    Start,
    Layer(LayerCode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActionKey {
    Layer(LayerCode),
    Terminate,
}

impl From<ActionKey> for StateKey {
    fn from(a: ActionKey) -> StateKey {
        match a {
            ActionKey::Layer(code) => StateKey::Layer(code),
            ActionKey::Terminate => panic!("terminate is not a state"),
        }
    }
}

/// Legal actions per decision step. Step t (1-based) chooses layer t or stops;
/// step 1 cannot stop and step `max_len + 1` can only stop.
#[derive(Debug, Clone)]
pub struct ActionSpace {
    pool: Vec<OpKind>,
    max_len: usize,
    per_step: Vec<Vec<ActionKey>>,
}

impl ActionSpace {
    pub fn new(pool: &[OpKind], max_len: usize) -> Self {
        let mut per_step = Vec::with_capacity(max_len + 1);
        for t in 1..=max_len + 1 {
            let mut actions: Vec<ActionKey> = if t <= max_len {
                layer_choices(t, pool).into_iter().map(ActionKey::Layer).collect()
            } else {
                Vec::new()
            };
            if t >= 2 {
                actions.push(ActionKey::Terminate);
            }
            per_step.push(actions);
        }
        ActionSpace { pool: pool.to_vec(), max_len, per_step }
    }

    pub fn pool(&self) -> &[OpKind] {
        &self.pool
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Legal actions at decision step `step` (1-based), in deterministic order.
    pub fn legal(&self, step: usize) -> &[ActionKey] {
        &self.per_step[step - 1]
    }

    pub fn is_legal(&self, step: usize, action: ActionKey) -> bool {
        step >= 1 && step <= self.per_step.len() && self.legal(step).contains(&action)
    }
}

/// Tabular action values; unseen pairs read as 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QTable {
    values: HashMap<(StateKey, ActionKey), f64>,
}

impl QTable {
    pub fn new() -> Self {
        QTable::default()
    }

    pub fn get(&self, state: StateKey, action: ActionKey) -> f64 {
        self.values.get(&(state, action)).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, state: StateKey, action: ActionKey, value: f64) {
        self.values.insert((state, action), value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(StateKey, ActionKey), &f64)> {
        self.values.iter()
    }

    /// Highest value among `actions` in `state`, first in order on ties.
    pub fn argmax(&self, state: StateKey, actions: &[ActionKey]) -> Option<(ActionKey, f64)> {
        let mut best: Option<(ActionKey, f64)> = None;
        for &a in actions {
            let v = self.get(state, a);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((a, v));
            }
        }
        best
    }

    pub fn max_value(&self, state: StateKey, actions: &[ActionKey]) -> f64 {
        self.argmax(state, actions).map_or(0.0, |(_, v)| v)
    }
}

/// One decision of the sampling process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub step: usize,
    pub state: StateKey,
    pub action: ActionKey,
}

impl Decision {
    /// The `len + 1` decisions that produce `arch`, ending in `Terminate`.
    pub fn path(arch: &BlockArch) -> Vec<Decision> {
        let mut out = Vec::with_capacity(arch.len() + 1);
        let mut state = StateKey::Start;
        for layer in arch.layers() {
            let code = layer.code();
            out.push(Decision { step: layer.position, state, action: ActionKey::Layer(code) });
            state = StateKey::Layer(code);
        }
        out.push(Decision { step: arch.len() + 1, state, action: ActionKey::Terminate });
        out
    }
}

/// Epsilon-greedy rollout. Each step draws one uniform number; below
/// `epsilon` a uniformly random legal action is taken, otherwise the greedy one.
pub fn sample_block<R: Rng + ?Sized>(q: &QTable, epsilon: f64, space: &ActionSpace, rng: &mut R) -> BlockArch {
    let mut codes = Vec::new();
    let mut state = StateKey::Start;
    for step in 1..=space.max_len + 1 {
        let legal = space.legal(step);
        let action = if rng.gen::<f64>() < epsilon {
            legal[rng.gen_range(0..legal.len())]
        } else {
            q.argmax(state, legal).expect("every step has a legal action").0
        };
        match action {
            ActionKey::Layer(code) => {
                codes.push(code);
                state = StateKey::Layer(code);
            }
            ActionKey::Terminate => break,
        }
    }
    BlockArch::from_codes(codes, space.max_len).expect("sampled decisions are legal")
}

pub fn greedy_rollout(q: &QTable, space: &ActionSpace) -> BlockArch {
    let mut codes = Vec::new();
    let mut state = StateKey::Start;
    for step in 1..=space.max_len + 1 {
        match q.argmax(state, space.legal(step)).expect("every step has a legal action").0 {
            ActionKey::Layer(code) => {
                codes.push(code);
                state = StateKey::Layer(code);
            }
            ActionKey::Terminate => break,
        }
    }
    BlockArch::from_codes(codes, space.max_len).expect("greedy decisions are legal")
}

/// One temporal-difference update:
/// `Q(s,a) <- (1 - eta) Q(s,a) + eta (r + gamma max_{a' in next_legal} Q(s',a'))`.
/// `next` is `None` for terminal transitions, whose bootstrap term is 0.
/// Returns the new value.
pub fn td_update(
    q: &mut QTable,
    state: StateKey,
    action: ActionKey,
    reward: f64,
    next: Option<(StateKey, &[ActionKey])>,
    eta: f64,
    gamma: f64,
) -> f64 {
    let bootstrap = next.map_or(0.0, |(s, legal)| q.max_value(s, legal));
    let old = q.get(state, action);
    let new = (1.0 - eta) * old + eta * (reward + gamma * bootstrap);
    q.set(state, action, new);
    new
}

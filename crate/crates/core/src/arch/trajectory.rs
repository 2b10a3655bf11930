use thiserror::Error;

use super::{BlockArch, InvalidArch, Layer};

/// The decision taken after a layer: emit the next layer or stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Next(Layer),
    Terminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Step {
    pub state: Layer,
    pub action: Action,
}

/// State-action view of a block: step t holds layer t and the decision that
/// produced layer t+1 (or termination after the last layer).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub max_len: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = &Layer> {
        self.steps.iter().map(|s| &s.state)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrajectoryError {
    #[error(transparent)]
    InvalidArch(#[from] InvalidArch),
    #[error("step {0}: action does not match the next state")]
    ActionMismatch(usize),
    #[error("step {0}: terminate before the last step")]
    EarlyTerminate(usize),
    #[error("last step does not terminate")]
    MissingTerminate,
}

pub fn to_trajectory(arch: &BlockArch) -> Result<Trajectory, InvalidArch> {
    let arch = BlockArch::new(arch.layers().to_vec(), arch.max_len())?;
    let layers = arch.layers();
    let steps = layers
        .iter()
        .enumerate()
        .map(|(i, &state)| Step {
            state,
            action: layers.get(i + 1).map_or(Action::Terminate, |&next| Action::Next(next)),
        })
        .collect();
    Ok(Trajectory { steps, max_len: arch.max_len() })
}

pub fn from_trajectory(traj: &Trajectory) -> Result<BlockArch, TrajectoryError> {
    let n = traj.steps.len();
    for (i, step) in traj.steps.iter().enumerate() {
        match (step.action, traj.steps.get(i + 1)) {
            (Action::Next(next), Some(following)) if next == following.state => {}
            (Action::Next(_), Some(_)) => return Err(TrajectoryError::ActionMismatch(i + 1)),
            (Action::Next(_), None) => return Err(TrajectoryError::MissingTerminate),
            (Action::Terminate, Some(_)) => return Err(TrajectoryError::EarlyTerminate(i + 1)),
            (Action::Terminate, None) => debug_assert_eq!(i + 1, n),
        }
    }
    let layers = traj.states().copied().collect();
    Ok(BlockArch::new(layers, traj.max_len)?)
}

//! Value-based control on classic tasks.

pub mod dqn;
pub mod env;
pub mod replay;

pub use dqn::{dqn_train, dqn_train_with, evaluate_policy, evaluate_policy_in, DqnReport, DqnRun};
pub use env::{make_env, Acrobot, Env, MountainCar, StepOutcome};
pub use replay::{NotReady, ReplayBuffer, Transition};

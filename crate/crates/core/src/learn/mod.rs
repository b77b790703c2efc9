//! Policy learning: PPO with GAE, checkpoints, evaluation and a scripted oracle baseline.

pub mod checkpoint;
pub mod eval;
pub mod mlp;
pub mod oracle;
pub mod policy;
pub mod ppo;
pub mod train;

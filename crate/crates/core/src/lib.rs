//! Post-training harness for multi-turn tool-using agents.
//!
//! - [`env`]: dual-control tool environment and the airline / refund-desk fixtures
//! - [`policy`]: output grammars, scripted, heuristic, toy and chat-backed policies
//! - [`rollout`]: episode driver, group sampling, trajectory store, SFT export
//! - [`verifier`]: state-based checkers and binary rewards
//! - [`grpo`]: group advantages, dynamic filtering, clipped surrogate, toy training
//! - [`synth`]: self-evolving multi-agent data synthesis with a deterministic mock backend
//! - [`bench`]: pass^k / pass@k and the benchmark runner

pub mod bench;
pub mod env;
pub mod grpo;
pub mod policy;
pub mod rollout;
pub mod synth;
pub mod util;
pub mod verifier;

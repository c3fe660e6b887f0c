//! Service-migration laboratory for multi-access edge computing.
//!
//! A user roams over a grid of edge servers while offloading tasks; each slot
//! an agent chooses which server hosts the user's service. The crate holds the
//! environment and its latency model, mobility traces, a small differentiable
//! core, the recurrent actor-critic agent, the baselines (including the exact
//! offline optimum), and the experiment harness.

pub mod agents;
pub mod dracm;
pub mod env;
pub mod harness;
pub mod tensorcore;
pub mod topology;
pub mod traces;

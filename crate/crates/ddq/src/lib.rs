//! Asynchronous parameter-server deep Q-learning, end to end: workers play a
//! built-in Snake environment, compute minibatch Q-learning gradients against
//! a from-scratch convolutional network, and push them to a central server
//! that applies RMSProp updates under a write-lock. A serial trainer runs the
//! identical math in-process, and a tabular gridworld solver provides exact
//! ground truth for the Q-learning tests.

pub mod dqn;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nncore;
pub mod oracle;
pub mod protocol;
pub mod replay;
pub mod rng;
pub mod server;
pub mod stats;
pub mod worker;

pub use error::{Error, Result};

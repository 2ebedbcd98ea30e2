//! Simulation and control of a hexarotor that keeps flying after losing a
//! rotor: rigid-body dynamics on SE(3), geometric tracking control, control
//! allocation with a tilting backup rotor, and Gaussian-process learning of
//! the post-failure disturbance with probabilistic error bounds.
//!
//! [`harness`] ties the pieces together into seeded closed-loop scenarios.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod control;
pub mod dynamics;
pub mod gp;
pub mod harness;
pub mod se3;

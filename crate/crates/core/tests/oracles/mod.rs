//! Independent reference implementations used by the acceptance suite.

pub mod actions;
pub mod apache;
pub mod cohort;
pub mod gradient;
pub mod imputation;
pub mod losses;
pub mod ood;
pub mod pipeline;
pub mod rewards;
pub mod tabular;

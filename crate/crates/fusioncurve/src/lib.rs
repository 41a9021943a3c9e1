//! Counterfactual incidence curves for an investigational vaccine, fusing a
//! historical efficacy trial (covariates, arm, marker, censored event time)
//! with a bridging study that records covariates, arm and marker only.
//!
//! Modules follow the data flow: [`dataset`] ingests and validates records,
//! [`nuisance`] fits the working models, [`eif`] evaluates identification
//! functionals and influence functions, [`estimator`] assembles cross-fitted
//! curves with inference, and [`simlab`] generates synthetic studies with
//! known truth.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod eif;
pub mod estimator;
pub mod nuisance;
pub mod quadrature;
pub mod rng;
pub mod simlab;

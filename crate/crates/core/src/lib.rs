//! Multi-view corneal-reflection gaze estimation on simulated data.
//!
//! The pipeline per frame is: synthesize glint and pupil image features for
//! every (camera, eye) sensor ([`scene`]), estimate a raw point of regard by
//! cross-ratio transfer ([`estimator`]), correct person-specific bias
//! ([`calibration`]) and fuse the sensors into one point of regard
//! ([`fusion`]). [`experiments`] runs whole calibration/test sessions.

// Guards like `!(x > 0.0)` deliberately reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod config;
pub mod estimator;
pub mod experiments;
pub mod eye;
pub mod fusion;
pub mod geometry;
pub mod report;
pub mod scene;
pub mod selftest;

//! Downlink max-min power control for cell-free massive MIMO with MRT precoding.
//!
//! The crate covers the whole pipeline: random deployments and large-scale
//! fading ([`channel`]), the ergodic SINR model ([`sinr`]), the optimal
//! max-min solution by second-order-cone feasibility bisection ([`maxmin`]),
//! the heterogeneous AP/UE graph ([`graph`]), a graph-transformer that
//! approximates the optimum ([`gnn`]), its training loop ([`train`]) and the
//! spectral-efficiency / FLOP evaluation ([`eval`]).

pub mod channel;
pub mod config;
pub mod error;
pub mod eval;
pub mod flops;
pub mod gnn;
pub mod graph;
pub mod matrix;
pub mod maxmin;
pub mod sinr;
pub mod train;

pub use channel::{
    generate_deployment, generate_fading, path_loss_db, Deployment, FadingMatrix, Morphology,
    MorphologyKind, ScenarioConfig,
};
pub use error::{Error, Result};
pub use flops::FlopCounter;
pub use gnn::{GnnModel, LayerPlan, NormStats};
pub use graph::HeteroGraph;
pub use matrix::Matrix;
pub use maxmin::{solve_maxmin, BisectionConfig, MaxMinSolution};
pub use sinr::{compute_alpha, compute_sinr, AlphaMatrix, PowerControl, SinrVector};

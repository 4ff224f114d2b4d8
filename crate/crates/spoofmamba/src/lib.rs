//! Raw-waveform speech deepfake detection built around dual-branch
//! bidirectional selective state-space blocks with mutual cross-attention.
//!
//! The crate is self-contained: it ships its own dense-tensor numerics with
//! reverse-mode automatic differentiation, a learnable sinc filter bank
//! frontend, the selective-scan kernels (sequential reference and chunked
//! fast path), training with an angular-margin softmax loss, and
//! countermeasure evaluation metrics (EER, minDCF, t-DCF).
//!
//! Entry points:
//! - [`model::Model`] assembles a full detector from a [`model::ModelConfig`].
//! - [`training::train_loop`] runs the optimizer over a clip dataset.
//! - [`metrics`] scores countermeasure outputs against protocol labels.
//! - The `spoofmamba` binary exposes all of it as subcommands.

pub mod attmap;
pub mod error;
pub mod frontend;
pub mod interaction;
pub mod io;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod params;
pub mod ssm;
pub mod synth;
pub mod training;

pub use error::{Error, Result};

use std::sync::atomic::{AtomicBool, Ordering};

static DETERMINISTIC: AtomicBool = AtomicBool::new(false);

/// Enable or disable deterministic mode at runtime.
///
/// All numeric kernels partition work over disjoint output ranges, so results
/// are bit-reproducible regardless of thread count; the flag additionally
/// forbids the few places that could reorder work (multi-worker data loading
/// during training).
pub fn set_deterministic(on: bool) {
    DETERMINISTIC.store(on, Ordering::SeqCst);
}

/// Whether deterministic mode is active, either via [`set_deterministic`] or
/// the `SPOOFMAMBA_DETERMINISTIC=1` environment variable.
pub fn deterministic() -> bool {
    DETERMINISTIC.load(Ordering::SeqCst) || env_deterministic()
}

fn env_deterministic() -> bool {
    matches!(
        std::env::var("SPOOFMAMBA_DETERMINISTIC").as_deref(),
        Ok("1") | Ok("true")
    )
}

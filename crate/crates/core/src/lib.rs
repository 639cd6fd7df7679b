//! Engagement-aligned webpage representations.
//!
//! Two training stages and an evaluation harness:
//!
//! 1. [`embed`] learns shallow user and URL vectors from a bipartite
//!    engagement graph ([`graph`]) with negative-sampling SGD.
//! 2. [`align`] trains a small transformer ([`encoder`]) so that the pooled
//!    representation of a page's tokenized content ([`tokenizer`]) matches
//!    the URL's graph vector under an in-batch contrastive loss.
//! 3. [`probes`] freezes the encoder and fits few-shot classifiers on its
//!    features, scored with [`metrics`].
//!
//! [`pipeline`] wires the stages together with persisted, fingerprinted
//! artifacts; [`synth`] generates the planted-community corpus used to
//! check every stage against known structure.

pub mod align;
pub mod embed;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod probes;
pub mod rng;
pub mod synth;
pub mod tokenizer;

pub use error::{Error, Result};

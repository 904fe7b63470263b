//! Corpus loading, saving and synthetic generation.

mod io;
mod synth;

pub use io::*;
pub use synth::{generate_corpus, generate_with_classes, SynthConfig};

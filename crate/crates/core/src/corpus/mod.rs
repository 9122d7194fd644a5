//! Manifests, piece-level splits, fragment sampling and LM streams.

mod manifest;
mod sampler;
mod split;
mod stream;
mod synth;

pub use manifest::{LabelSet, Manifest, PageRecord};
pub use sampler::{
    sample_fragments, tokenize_manifest, Fragment, SamplerConfig, TokenizedPage, FRAGMENT_LENGTHS,
};
pub use split::{split_by_piece, split_by_piece_stratified, SplitRatios, Splits};
pub use stream::build_lm_stream;
pub use synth::{
    composer_name, generate_synthetic_corpus, MarkovChain, SynthConfig, SyntheticCorpus,
};

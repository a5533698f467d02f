//! Corpus files, windowing, audio clips and the synthetic corpus.

mod audio;
mod batch;
mod corpus;
mod format;
mod synth;
mod windows;

pub use audio::{
    augment_audio, extract_audio_clip, quantize_pcm, read_wav, write_wav, SAMPLE_RATE,
};
pub use batch::{make_batch, Augment, Batch};
pub use corpus::{
    load_corpus, AudioData, Corpus, CorpusManifest, Label, ManifestEntry, Split, Video, DEFAULT_FPS,
};
pub use format::{read_features, write_features, FrameMatrix, FEATURE_MAGIC, FEATURE_VERSION};
pub use synth::{synth_generate, write_corpus, SynthAudio, SynthConfig, SynthCorpus, DISTRACTORS};
pub use windows::{corpus_windows, temporal_context, window_sequences, Window, DEFAULT_WINDOW};

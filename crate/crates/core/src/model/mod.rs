//! Encoder-decoder transformer shared by the teacher and the student.

pub mod checkpoint;
mod config;
mod forward;
mod mask;
mod params;
mod positional;
mod seq2seq;

pub use config::{Flavor, ModelConfig};
pub use forward::{Forward, LN_EPS};
pub use mask::AttentionMask;
pub use params::{layer_positions_name, ModelParams, EMBED, LOG_SIGMA_SQ, OUTPUT_PROJ};
pub use positional::sinusoidal;
pub use seq2seq::{
    ar_decode_step, decode_cap, encode, encoder_states_batch, greedy_decode, greedy_decode_batch,
    length_sorted_chunks, sequence_logprob, sequence_logprob_batch, teacher_forced_logprobs,
    SequenceScore, INFERENCE_BATCH,
};

#[cfg(test)]
mod tests;

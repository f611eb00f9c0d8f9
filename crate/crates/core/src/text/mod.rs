//! Shared tokenizer and the pluggable per-token embedding provider.

mod encoder;
mod tokenizer;

pub use encoder::{
    embed, positional_encoding, sentence_embedding, EmbeddingMatrix, EmbeddingProvider, EncodeError, EncoderConfig,
    HashEmbedding, ProviderKind,
};
pub use tokenizer::{
    pieces, token_id, tokenize, truncate_longest_first, TokenSequence, Tokenizer, CLS_ID, FIRST_REGULAR_ID,
    MIN_SEQUENCE_LEN, PAD_ID, SEP_ID, VOCAB_SIZE,
};

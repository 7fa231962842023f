//! Learnable building blocks: parameter storage, a reverse-mode tape,
//! embeddings, a bidirectional LSTM, rectifier feed-forward networks,
//! dropout and finite-difference gradient checking.

mod gradcheck;
mod graph;
mod layers;
mod params;

pub use gradcheck::{check_gradients, ArrayCheck};
pub use graph::{Graph, Var};
pub(crate) use graph::{log_sum_exp, softmax_in_place};
pub use layers::{
    dropout, ffnn_apply, load_vectors, BiLstm, Dropout, EmbeddingMode, EmbeddingProvider, FeedForward,
    FeedForwardSpec, Lstm, Vocabulary,
};
pub use params::{Gradients, ParamId, Parameter, ParameterStore, INIT_SCALE};

/// Softmax of a plain score vector.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let mut out = xs.to_vec();
    softmax_in_place(&mut out);
    out
}

//! Hand-rolled neural-network stack: reverse-mode autodiff, layers, Adam.

pub mod adam;
pub mod layers;
pub mod var;

pub use adam::{Adam, AdamConfig};
pub use layers::{uniform_init, xavier_init, BiLstm, Embedding, Linear, LstmCell};
pub use var::{softmax, Var};

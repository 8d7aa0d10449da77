pub mod model;
pub mod stream;
pub mod whitening;

mod binio;
pub mod datastore;
pub mod evaluation;
pub mod fusion;
pub mod synth;
pub mod cli;

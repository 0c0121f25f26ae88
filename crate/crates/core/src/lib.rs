//! Active learning of a neural self-collision detector over the latent space
//! of a mesh autoencoder, with augmented-Lagrangian collision handling.

pub mod geom;
pub mod mesh;
pub mod nn;
pub mod autoencoder;
pub mod datagen;
pub mod active;
pub mod detector;
pub mod handler;

//! Command-line verbs and the local HTTP service of the TinyVis workbench.

pub mod endpoint;
pub mod project;
pub mod render;
pub mod sdops;
pub mod service;

//! Retrieval-augmented generation with visual source attribution: dataset
//! construction from document screenshots, multi-candidate assembly, prompt
//! rendering and output parsing for multimodal endpoints, and scoring of
//! answers plus evidence bounding boxes.

pub mod attrgen;
pub mod corpus;
pub mod endpoint;
pub mod evaluate;
pub mod geom;
pub mod pipeline;
pub mod qaforge;
pub mod render;
pub mod retrieval;
pub mod seed;
pub mod textmatch;

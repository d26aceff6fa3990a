//! Heritage indicators for a building stock from street-level façade imagery.
//!
//! The pipeline links energy certificates to footprints, plans camera
//! viewpoints from road centrelines, fetches façade images, asks a
//! vision-language model for a closed-vocabulary JSON assessment, and
//! aggregates the validated answers into per-certificate heritage groups and
//! audit tables.

pub mod analytics;
pub mod artifacts;
pub mod assessor;
pub mod config;
pub mod exec;
pub mod fixtures;
pub mod geom;
pub mod heritage;
pub mod imagery;
pub mod index;
pub mod pipeline;
pub mod registry;
pub mod viewgeom;

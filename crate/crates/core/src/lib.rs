pub mod data;
pub mod glm;
pub mod weights;
pub mod survival;
pub mod metrics;
pub mod development;
pub mod io;
pub mod simulation;
pub mod report;
pub mod cli;

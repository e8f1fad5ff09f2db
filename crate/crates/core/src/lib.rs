pub mod audio;
pub mod corpus;
pub mod ctc;
pub mod decoder;
pub mod lm;
pub mod metrics;
pub mod textnorm;
pub mod trainer;

pub mod numerics;
pub mod koopman;
pub mod barrier;
pub mod safety_filter;
pub mod envs;
pub mod agent;
pub mod experiments;

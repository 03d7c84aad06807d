pub mod current;
pub mod gof;
pub mod kernel;
pub mod ldp;
pub mod limit;
pub mod occupancy;
pub mod quad;
pub mod roots;
pub mod runner;
pub mod special;
pub mod stats;

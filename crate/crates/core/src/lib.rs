pub mod agg;
pub mod autodiff;
pub mod graph;
pub mod manifold;
pub mod model;
pub mod train;

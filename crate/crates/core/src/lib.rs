pub mod autodiff;
pub mod classic;
pub mod dataset;
pub mod gnn;
pub mod graph;
pub mod io;
pub mod learned;
pub mod eval;
pub mod train;
pub mod verify;

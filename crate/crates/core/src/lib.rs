//! Lattice thermal conductivity regression from crystal graphs, with staged
//! transfer learning (scratch, pre-trained backbone, and double transfer
//! through a low-fidelity dataset).

pub mod crystal;
pub mod elements;
pub mod graph;
pub mod data;
pub mod io;
pub mod model;
pub mod trainer;
pub mod eval;
pub mod cli;

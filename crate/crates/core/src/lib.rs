pub mod census;
pub mod cli;
pub mod cycles;
pub mod equilibria;
pub mod euler;
pub mod evolve;
pub mod field;
pub mod fixtures;
pub mod geom;
pub mod rational;
pub mod poincare;
pub mod saddle;

pub mod chain;
pub mod coords;
pub mod error;
pub mod model;
pub mod numerics;
pub mod gfun;
pub mod solvers;
pub mod atomize;
pub mod random;

pub mod cost;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod ilqr;
pub mod io;
pub mod riccati;
pub mod trajectory;
pub mod regularizer;

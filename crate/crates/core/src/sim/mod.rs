pub mod collision;
pub mod footprint;
pub mod geometry;
pub mod grid;
pub mod misbehavior;
pub mod trajectory;

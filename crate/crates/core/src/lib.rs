//! Unit-test based evaluation of PDF-to-text converters.

pub mod check_math;
pub mod check_table;
pub mod check_text;
pub mod model;
pub mod normalize;
pub mod render;
pub mod score;
pub mod align;
pub mod elo;
pub mod anchor;
pub mod review;

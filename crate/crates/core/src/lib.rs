pub mod compat;
pub mod divstruct;
pub mod error;
pub mod expr;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod localize;
pub mod materials;
pub mod problem;
pub mod scalar;
pub mod solver;
pub mod spaces;
pub mod structmat;

pub use error::{Error, Result};

pub type StructureMatrices = structmat::StructureMatrixSet<f64>;
pub type ExactStructureMatrices = structmat::StructureMatrixSet<num_rational::Rational64>;
pub type Grid = grid::Grid<f64>;
pub type Field = grid::Field<f64>;
pub type CoefficientSet = materials::CoefficientSet<f64>;
pub type MaterialLaw = materials::MaterialLaw<f64>;
pub type Problem = problem::Problem<f64>;
pub type Solver = solver::Solver<f64>;
pub type RunRecord = solver::RunRecord<f64>;
pub type FieldState = solver::FieldState<f64>;
pub type Grid32 = grid::Grid<f32>;
pub type Field32 = grid::Field<f32>;

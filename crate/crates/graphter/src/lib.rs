pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod heads;
pub mod model;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod training;
pub mod transforms;
pub mod tensor;

/// f32 is the training scalar; f64 is used for gradient checking.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Model32 = model::GraphTerModel<f32>;
pub type Model64 = model::GraphTerModel<f64>;
pub type Tape32 = tape::Tape<f32>;
pub type Tape64 = tape::Tape<f64>;

pub mod alert;
pub mod autodiff;
pub mod config;
pub mod skeleton;
pub mod stream;
pub mod model;
pub mod tensor;
pub mod train;

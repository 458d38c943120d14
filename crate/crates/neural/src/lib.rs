pub mod dft;
pub mod ffno;
pub mod optim;
pub mod predictor;
pub mod train;

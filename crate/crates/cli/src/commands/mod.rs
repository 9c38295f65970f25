pub mod account;
pub mod attend;
pub mod eval;
pub mod fuse;
pub mod gradcheck;
pub mod synth;
pub mod train_toy;
pub mod trimap;

pub mod encoding;
pub mod genmodel;
pub mod lbm;
pub mod qd;
pub mod server;
pub mod store;
pub mod surrogate;
pub mod validate;

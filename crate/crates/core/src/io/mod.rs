pub mod meta;
pub mod pfm;

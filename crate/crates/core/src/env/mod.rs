pub mod abr;
pub mod cjs;

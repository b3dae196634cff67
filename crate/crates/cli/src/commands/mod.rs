pub mod density;
pub mod price;
pub mod simulate;
pub mod symmetry;
pub mod validate;

//! C ABI surface. Placeholder while the core crate is under construction.

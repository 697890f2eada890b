//! Acceptance suite for the simulator. The checks live in `tests/acceptance.rs`.

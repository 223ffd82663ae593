//! Acceptance suite host; the checks live in `tests/acceptance.rs`.

//! Companion crate that turns every chapter of the book into doc-tests.
//!
//! Each module below includes one chapter of `book/src` verbatim via
//! `include_str!`, so `cargo test --doc -p deltastab-guide` compiles and runs
//! all fenced Rust snippets in the guide. If a chapter drifts out of sync
//! with the library, the build breaks here first.

// Chapters are attached as the book lands; see book/src/SUMMARY.md.

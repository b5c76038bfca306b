//! Scenario harness (in progress).

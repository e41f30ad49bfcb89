//! SNR metrics and the benchmark harness.

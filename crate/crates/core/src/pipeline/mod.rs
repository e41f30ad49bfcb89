//! Dataset construction, training, inference.

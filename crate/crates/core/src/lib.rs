// SPDX-License-Identifier: Apache-2.0

//! Localize root-cause configuration properties from run-time logs.
//!
//! The pipeline has two stages. Anomaly identification parses may-fault logs,
//! keeps the templates unknown to a fault-free template store, scores them
//! against a weighted token set and recovers one key log message per
//! anomalous template. Anomaly inference then matches configuration
//! properties against the key messages by name and value, asks an LLM backend
//! to verify those matches, and falls back to LLM-driven inference over the
//! full settings when direct matching is empty or unverified.

pub mod anomaly;
pub mod bench;
pub mod cli;
pub mod config;
pub mod direct;
pub mod hash;
pub mod llm;
pub mod log_parser;
pub mod pipeline;
pub mod report;
pub mod template_store;

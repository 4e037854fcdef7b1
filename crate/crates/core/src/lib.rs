//! Physical-layer toolkit for satellite AIS reception.
//!
//! Packets are framed ([`frame`]), GMSK modulated ([`gmsk`]), passed through
//! single- or multi-user channels ([`channel`]) and detected by coherent or
//! differential maximum likelihood sequence detectors ([`trellis`]) searched
//! with the classical or the parallel list Viterbi algorithm ([`decoder`]).
//! The list decoder hands its ranked candidates to the frame post-processing
//! and keeps the first one that passes the length and FCS checks.
//!
//! [`scenario`] and [`sweep`] build the single-user, two-user and slotted
//! ALOHA experiments on top of these pieces.

pub mod channel;
pub mod config;
pub mod decoder;
pub mod frame;
pub mod gmsk;
pub mod oracle;
pub mod scenario;
pub mod seed;
pub mod selftest;
pub mod stats;
pub mod sweep;
pub mod trellis;

pub use num_complex::Complex64;

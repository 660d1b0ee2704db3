pub mod config;
pub mod export;
pub mod runner;
pub mod selftest;
pub mod spectrum;

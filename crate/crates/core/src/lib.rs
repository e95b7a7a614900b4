//! Online scheduling of deferrable cloud jobs.
//!
//! A deferrable job asks for a number of CPU cores for a fixed, uninterrupted
//! duration and may start anywhere inside a window `[earliest, latest]`. The
//! cores left over for such jobs fluctuate over time. This crate bundles the
//! pieces needed to study the problem end to end:
//!
//! * [`workload`]: job and capacity data, CSV ingestion and a seeded synthetic
//!   generator.
//! * [`simenv`]: the discrete-time environment with its reward accounting.
//! * [`schedulers`]: FIFO, SJF, HRRN and Tetris baselines and the shared
//!   score-ordering prefix rule.
//! * [`oracle`]: an exact offline branch-and-bound solver for small instances.
//! * [`neuro`]: a tape-based reverse-mode engine holding exactly the operators
//!   the learned scheduler needs, plus Adam.
//! * [`osdec`]: the attention policy with its auxiliary prediction module.
//! * [`trainer`]: PPO with generalized advantage estimation.
//!
//! The `book/` directory next to the workspace carries the narrative guide; its
//! code listings are compiled as doctests of this crate.

pub mod neuro;
pub mod oracle;
pub mod osdec;
pub mod schedulers;
pub mod seeding;
pub mod simenv;
pub mod trainer;
pub mod workload;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/problem.md")]
    mod problem {}
    #[doc = include_str!("../../../book/src/environment.md")]
    mod environment {}
    #[doc = include_str!("../../../book/src/heuristics.md")]
    mod heuristics {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/policy.md")]
    mod policy {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}

//! Software-mention validation and dissemination over COAR Notify style
//! linked-data notifications.
//!
//! An aggregator offers discovered mentions to a repository, the repository
//! routes them to authors who validate, edit or reject them, and validated
//! mentions are announced and registered with a software archive that
//! mints a persistent identifier.

pub mod actors;
pub mod clock;
pub mod dashboard;
pub mod ldn;
pub mod notify;
pub mod registry;
pub mod sim;

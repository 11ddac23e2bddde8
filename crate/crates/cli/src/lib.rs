//! Wiring for the `flowdirector` binary.

pub mod commands;
pub mod http_adapters;
pub mod server;

use flowdirector_core::simulator::ScenarioInvalid;
use flowdirector_core::ConfigError;

/// Exit status for an error: 2 when an input file could not be read or
/// parsed, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let bad_input = err.chain().any(|e| {
        e.downcast_ref::<ConfigError>().is_some() || e.downcast_ref::<ScenarioInvalid>().is_some()
    });
    if bad_input {
        2
    } else {
        1
    }
}

//! Library side of the `deepcam` command-line tool.

pub mod commands;
pub mod config;

use deepcam::Error;

/// Process exit status for a failed command: 2 for invalid input (including
/// malformed model or cache files), 3 for numerical failure, 1 for I/O.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Dimension(_) | Error::InvalidArgument(_) | Error::Format(_) => 2,
                Error::Numerical(_) => 3,
                Error::Io(_) | Error::Image(_) => 1,
            };
        }
    }
    1
}

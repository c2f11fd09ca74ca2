//! Command-line surface of the trajrisk pipeline: configuration, subcommands
//! and their file formats.

pub mod commands;
pub mod config;
pub mod forecast;
pub mod svg;

use trajrisk::Error;
use trajrisk_tensor::TensorError;

/// 0 success, 1 bad input, 2 runtime or numeric failure.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        e if e.is_validation() => 1,
        Error::Tensor(TensorError::Checkpoint(_)) => 1,
        _ => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::Parse { line: 3, message: "x".into() }), 1);
        assert_eq!(exit_code(&Error::Tensor(TensorError::Checkpoint("bad magic".into()))), 1);
        let nf = Error::NonFiniteLoss {
            epoch: 0,
            window: 1,
            detail: "x".into(),
        };
        assert_eq!(exit_code(&nf), 2);
        assert_eq!(exit_code(&Error::Tensor(TensorError::NonFinite { op: "exp" })), 2);
        let io = Error::Io {
            path: "a".into(),
            source: std::io::Error::other("disk"),
        };
        assert_eq!(exit_code(&io), 2);
    }
}

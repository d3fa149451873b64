use std::process::ExitCode;

use satl_core::Error;

/// Process exit statuses. Usage errors detected by the argument parser also
/// exit with [`Status::Config`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    Io = 1,
    Config = 2,
    Fingerprint = 3,
    DegenerateData = 4,
    Verification = 5,
}

impl Status {
    pub fn of(err: &anyhow::Error) -> Status {
        if err.downcast_ref::<VerificationFailed>().is_some() {
            return Status::Verification;
        }
        match err.downcast_ref::<Error>() {
            Some(Error::Io { .. } | Error::Checkpoint { .. } | Error::Ingestion { .. }) => Status::Io,
            Some(Error::Config(_) | Error::Shape(_) | Error::Tensor(_)) => Status::Config,
            Some(Error::Fingerprint { .. } | Error::Composition(_)) => Status::Fingerprint,
            Some(Error::DegenerateData(_) | Error::Contract(_)) => Status::DegenerateData,
            None => Status::Io,
        }
    }
}

impl From<Status> for ExitCode {
    fn from(s: Status) -> ExitCode {
        ExitCode::from(s as u8)
    }
}

#[derive(Debug)]
pub struct VerificationFailed(pub String);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "verification failed: {}", self.0)
    }
}

impl std::error::Error for VerificationFailed {}

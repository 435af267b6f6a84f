use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{module}: {source}")]
    Core {
        module: &'static str,
        #[source]
        source: ovqe_core::Error,
    },
    #[error("io: {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("codec_bridge: {0}")]
    Codec(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("report: {0}")]
    Report(String),
}

/// Process exit status for a failed command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Other = 1,
    Validation = 2,
    Codec = 3,
    Numeric = 4,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn exit_kind(&self) -> ExitKind {
        use ovqe_core::Error as E;
        match self {
            Error::Config(_) | Error::Checkpoint(_) => ExitKind::Validation,
            Error::Codec(_) => ExitKind::Codec,
            Error::Core { source, .. } => match source {
                E::Argument(_) | E::Load(_) | E::Pairing(_) => ExitKind::Validation,
                E::Codec(_) | E::Integrity(_) => ExitKind::Codec,
                E::Numeric(_) | E::Overlap { .. } => ExitKind::Numeric,
                E::Format(_) => ExitKind::Other,
            },
            Error::Io { .. } | Error::Report(_) => ExitKind::Other,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.exit_kind() as i32
    }
}

/// Tags a core error with the module it surfaced from.
pub trait InModule<T> {
    fn in_module(self, module: &'static str) -> Result<T>;
}

impl<T> InModule<T> for ovqe_core::Result<T> {
    fn in_module(self, module: &'static str) -> Result<T> {
        self.map_err(|source| match source {
            ovqe_core::Error::Codec(msg) => Error::Codec(msg),
            source => Error::Core { module, source },
        })
    }
}

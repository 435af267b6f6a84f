use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("codec error: {0}")]
    Codec(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("load error: {0}")]
    Load(String),
    #[error("no overlapping PSNR interval between RD curves ({lo:.4} dB .. {hi:.4} dB)")]
    Overlap { lo: f64, hi: f64 },
}

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("no sun-synchronous inclination exists at {altitude_km} km altitude")]
    NoSunSynchronousSolution { altitude_km: f64 },

    #[error("unrecognised constellation notation `{0}`")]
    InvalidNotation(String),

    #[error("elevation {0} deg is not above the horizon")]
    BelowHorizon(f64),

    #[error("value {0} is outside [0, 1]")]
    OutOfUnitInterval(f64),

    #[error("point ({lat_deg}, {lon_deg}) lies outside the cloud grid (lat {lat_min}..{lat_max}, lon {lon_min}..{lon_max})")]
    OutsideCloudGrid {
        lat_deg: f64,
        lon_deg: f64,
        lat_min: f64,
        lat_max: f64,
        lon_min: f64,
        lon_max: f64,
    },

    #[error("station {station}: {source}")]
    Station {
        station: String,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient pairwise key between stations {station_a} and {station_b}: requested {requested} bits, capacity {capacity}")]
    InsufficientKey {
        station_a: usize,
        station_b: usize,
        requested: u64,
        capacity: u64,
    },

    #[error("{path}:{line}: {message}")]
    Config { path: String, line: usize, message: String },

    #[error("{0}")]
    Format(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File { path: path.into(), source }
    }
}

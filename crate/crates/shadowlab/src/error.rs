use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("trajectory escaped (|x| > {bound}) at t = {last_time}")]
    Escaped { last_time: f64, bound: f64 },

    #[error("time {t} outside trajectory span [0, {t_end}]")]
    OutOfSpan { t: f64, t_end: f64 },

    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("tangent frame collapsed (conditioning {cond:.3e}) at t = {t}")]
    FrameCollapse { t: f64, cond: f64 },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("parameter out of range: {0}")]
    BadParameter(String),

    #[error("chain time {t} outside [0, {total}]")]
    ChainTimeOutOfRange { t: f64, total: f64 },

    #[error("orbit of p does not approach the singularity: {0}")]
    NotSingularApproach(String),

    #[error("alignment grid too coarse: cell modulus {modulus:.3e} exceeds {limit:.3e}")]
    GridTooCoarse { modulus: f64, limit: f64 },

    #[error("section geometry error: {0}")]
    Geometry(String),

    #[error("stable-direction estimate did not converge: {0}")]
    Inconclusive(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

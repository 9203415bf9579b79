//! Which arithmetic coder turns symbol planes into bytes.

use crate::entropy::coderjob::{CoderJob, CoderReply, Direction, ExternalCoder, JobPlane, PlanePayload};
use crate::entropy::{ac_decode, ac_encode, build_cdf, EntropyParams, LaplaceCdf, SymbolBounds, SymbolPlane};
use crate::error::{FcnrError, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum CoderBackend {
    /// The in-process reference coder.
    #[default]
    Reference,
    /// A separately built coder driven through the subprocess protocol.
    External(ExternalCoder),
}

impl CoderBackend {
    /// `"reference"` or `"fast"`; the latter resolves the external command
    /// from the environment.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "reference" => Ok(CoderBackend::Reference),
            "fast" => Ok(CoderBackend::External(ExternalCoder::from_env()?)),
            other => Err(FcnrError::InvalidArgument(format!(
                "unknown coder {other:?} (expected reference or fast)"
            ))),
        }
    }

    /// Encode planes coded with the given (centred) parameters.
    pub fn encode(&self, planes: &[(SymbolPlane, EntropyParams)]) -> Result<Vec<Vec<u8>>> {
        match self {
            CoderBackend::Reference => planes
                .iter()
                .map(|(symbols, params)| ac_encode(symbols, &mut LaplaceCdf::new(params, symbols.bounds)))
                .collect(),
            CoderBackend::External(coder) => {
                let job = CoderJob {
                    direction: Direction::Encode,
                    planes: planes
                        .iter()
                        .map(|(symbols, params)| JobPlane {
                            tables: build_cdf(params, symbols.bounds),
                            payload: PlanePayload::Symbols(symbols.symbols.clone()),
                        })
                        .collect(),
                };
                match coder.run(&job)? {
                    CoderReply::Streams(s) if s.len() == planes.len() => Ok(s),
                    CoderReply::Failed(msg) => Err(FcnrError::ExternalCoder(msg)),
                    _ => Err(FcnrError::ExternalCoder("reply does not match the encode job".into())),
                }
            }
        }
    }

    pub fn decode(&self, stream: &[u8], params: &EntropyParams, bounds: SymbolBounds) -> Result<SymbolPlane> {
        match self {
            CoderBackend::Reference => ac_decode(stream, &mut LaplaceCdf::new(params, bounds)),
            CoderBackend::External(coder) => {
                let job = CoderJob {
                    direction: Direction::Decode,
                    planes: vec![JobPlane {
                        tables: build_cdf(params, bounds),
                        payload: PlanePayload::Stream(stream.to_vec()),
                    }],
                };
                match coder.run(&job)? {
                    CoderReply::Symbols(mut s) if s.len() == 1 && s[0].len() == params.len() => {
                        SymbolPlane::new(s.pop().unwrap(), bounds)
                            .map_err(|e| FcnrError::ExternalCoder(e.to_string()))
                    }
                    CoderReply::Failed(msg) => Err(FcnrError::Corrupt(msg)),
                    _ => Err(FcnrError::ExternalCoder("reply does not match the decode job".into())),
                }
            }
        }
    }
}

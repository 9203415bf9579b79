//! Serialized coder jobs: the binary boundary towards external coders.
//!
//! All integers are little-endian.
//!
//! Job:
//! ```text
//! "FCJB"  u16 version  u8 direction (0 = encode, 1 = decode)  u8 reserved (0)
//! u32 plane_count
//! per plane:
//!   i32 v_min  i32 v_max  u32 element_count
//!   u32 table_words   table_words x u32 cumulative counts
//!                     (element_count rows of v_max - v_min + 2 entries)
//!   encode: element_count x i32 symbols
//!   decode: u32 stream_len  stream_len bytes
//! ```
//!
//! Reply:
//! ```text
//! "FCJR"  u16 version  u8 status (0 = ok, 1 = error)  u8 reserved
//! status 0: u32 plane_count, per plane
//!           encode: u32 stream_len + bytes
//!           decode: u32 count + count x i32 symbols
//! status 1: u32 message_len + UTF-8 message
//! ```

use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use crate::entropy::cdf::{validate_cumulative, CdfTable};
use crate::entropy::{ac_decode, ac_encode, SymbolBounds, SymbolPlane};
use crate::error::{FcnrError, Result};

pub const JOB_MAGIC: &[u8; 4] = b"FCJB";
pub const REPLY_MAGIC: &[u8; 4] = b"FCJR";
pub const JOB_VERSION: u16 = 1;

/// Environment variable naming the external coder command line.
pub const FAST_CODER_ENV: &str = "FCNR_FAST_CODER";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Encode,
    Decode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanePayload {
    Symbols(Vec<i32>),
    Stream(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobPlane {
    pub tables: CdfTable,
    pub payload: PlanePayload,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoderJob {
    pub direction: Direction,
    pub planes: Vec<JobPlane>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoderReply {
    Streams(Vec<Vec<u8>>),
    Symbols(Vec<Vec<i32>>),
    Failed(String),
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(FcnrError::CoderJob {
            offset: self.pos,
            reason: reason.into(),
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return self.fail(format!("need {n} bytes, {} left", self.data.len() - self.pos));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            self.pos -= 4;
            return self.fail("bad magic");
        }
        let version = self.u16()?;
        if version != JOB_VERSION {
            self.pos -= 2;
            return self.fail(format!("unsupported version {version}"));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return self.fail(format!("{} trailing bytes", self.data.len() - self.pos));
        }
        Ok(())
    }
}

impl CoderJob {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(JOB_MAGIC);
        out.extend_from_slice(&JOB_VERSION.to_le_bytes());
        out.push(match self.direction {
            Direction::Encode => 0,
            Direction::Decode => 1,
        });
        out.push(0);
        out.extend_from_slice(&(self.planes.len() as u32).to_le_bytes());
        for plane in &self.planes {
            let bounds = crate::entropy::CdfProvider::bounds(&plane.tables);
            let elements = plane.tables.cumulative().len() / plane.tables.width();
            out.extend_from_slice(&bounds.min.to_le_bytes());
            out.extend_from_slice(&bounds.max.to_le_bytes());
            out.extend_from_slice(&(elements as u32).to_le_bytes());
            out.extend_from_slice(&(plane.tables.cumulative().len() as u32).to_le_bytes());
            for c in plane.tables.cumulative() {
                out.extend_from_slice(&c.to_le_bytes());
            }
            match &plane.payload {
                PlanePayload::Symbols(s) => {
                    for v in s {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                PlanePayload::Stream(bytes) => {
                    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
                    out.extend_from_slice(bytes);
                }
            }
        }
        out
    }

    pub fn parse(data: &[u8]) -> Result<CoderJob> {
        let mut r = Reader { data, pos: 0 };
        r.header(JOB_MAGIC)?;
        let direction = match r.u8()? {
            0 => Direction::Encode,
            1 => Direction::Decode,
            d => {
                r.pos -= 1;
                return r.fail(format!("unknown direction {d}"));
            }
        };
        r.u8()?;
        let plane_count = r.u32()?;
        let mut planes = Vec::new();
        for _ in 0..plane_count {
            let at = r.pos;
            let (min, max) = (r.i32()?, r.i32()?);
            let bounds = SymbolBounds::new(min, max).map_err(|e| FcnrError::CoderJob {
                offset: at,
                reason: e.to_string(),
            })?;
            let elements = r.u32()? as usize;
            let width = bounds.alphabet_size() + 1;
            let words = r.u32()? as usize;
            if words != elements * width {
                r.pos -= 4;
                return r.fail(format!(
                    "{words} table words for {elements} elements of width {width}"
                ));
            }
            let table_at = r.pos;
            let raw = r.take(words * 4)?;
            let cumulative: Vec<u32> = raw
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            for (k, row) in cumulative.chunks(width).enumerate() {
                if let Err(reason) = validate_cumulative(row) {
                    return Err(FcnrError::CoderJob {
                        offset: table_at + k * width * 4,
                        reason,
                    });
                }
            }
            let tables = CdfTable::from_cumulative(bounds, cumulative)?;
            let payload = match direction {
                Direction::Encode => {
                    let mut symbols = Vec::with_capacity(elements);
                    for _ in 0..elements {
                        let v = r.i32()?;
                        if !bounds.contains(v) {
                            r.pos -= 4;
                            return r.fail(format!("symbol {v} outside [{min}, {max}]"));
                        }
                        symbols.push(v);
                    }
                    PlanePayload::Symbols(symbols)
                }
                Direction::Decode => {
                    let len = r.u32()? as usize;
                    PlanePayload::Stream(r.take(len)?.to_vec())
                }
            };
            planes.push(JobPlane { tables, payload });
        }
        r.finish()?;
        Ok(CoderJob { direction, planes })
    }

    /// Run the job on the reference coder.
    pub fn run_reference(&self) -> CoderReply {
        let outcome: Result<CoderReply> = (|| match self.direction {
            Direction::Encode => {
                let mut streams = Vec::with_capacity(self.planes.len());
                for plane in &self.planes {
                    let PlanePayload::Symbols(symbols) = &plane.payload else {
                        return Err(FcnrError::InvalidArgument("encode job without symbols".into()));
                    };
                    let mut tables = plane.tables.clone();
                    let bounds = crate::entropy::CdfProvider::bounds(&tables);
                    let plane_symbols = SymbolPlane::new(symbols.clone(), bounds)?;
                    streams.push(ac_encode(&plane_symbols, &mut tables)?);
                }
                Ok(CoderReply::Streams(streams))
            }
            Direction::Decode => {
                let mut out = Vec::with_capacity(self.planes.len());
                for plane in &self.planes {
                    let PlanePayload::Stream(bytes) = &plane.payload else {
                        return Err(FcnrError::InvalidArgument("decode job without stream".into()));
                    };
                    let mut tables = plane.tables.clone();
                    out.push(ac_decode(bytes, &mut tables)?.symbols);
                }
                Ok(CoderReply::Symbols(out))
            }
        })();
        outcome.unwrap_or_else(|e| CoderReply::Failed(e.to_string()))
    }
}

impl CoderReply {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(REPLY_MAGIC);
        out.extend_from_slice(&JOB_VERSION.to_le_bytes());
        match self {
            CoderReply::Failed(msg) => {
                out.extend_from_slice(&[1, 0]);
                out.extend_from_slice(&(msg.len() as u32).to_le_bytes());
                out.extend_from_slice(msg.as_bytes());
            }
            CoderReply::Streams(streams) => {
                out.extend_from_slice(&[0, 0]);
                out.extend_from_slice(&(streams.len() as u32).to_le_bytes());
                for s in streams {
                    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                    out.extend_from_slice(s);
                }
            }
            CoderReply::Symbols(planes) => {
                out.extend_from_slice(&[0, 0]);
                out.extend_from_slice(&(planes.len() as u32).to_le_bytes());
                for p in planes {
                    out.extend_from_slice(&(p.len() as u32).to_le_bytes());
                    for v in p {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    /// Parse a reply to a job going in `direction`.
    pub fn parse(data: &[u8], direction: Direction) -> Result<CoderReply> {
        let mut r = Reader { data, pos: 0 };
        r.header(REPLY_MAGIC)?;
        let status = r.u8()?;
        r.u8()?;
        let reply = match status {
            0 => {
                let n = r.u32()?;
                match direction {
                    Direction::Encode => {
                        let mut streams = Vec::new();
                        for _ in 0..n {
                            let len = r.u32()? as usize;
                            streams.push(r.take(len)?.to_vec());
                        }
                        CoderReply::Streams(streams)
                    }
                    Direction::Decode => {
                        let mut planes = Vec::new();
                        for _ in 0..n {
                            let count = r.u32()? as usize;
                            let mut p = Vec::with_capacity(count);
                            for _ in 0..count {
                                p.push(r.i32()?);
                            }
                            planes.push(p);
                        }
                        CoderReply::Symbols(planes)
                    }
                }
            }
            1 => {
                let len = r.u32()? as usize;
                CoderReply::Failed(String::from_utf8_lossy(r.take(len)?).into_owned())
            }
            s => {
                r.pos -= 2;
                return r.fail(format!("unknown status {s}"));
            }
        };
        r.finish()?;
        Ok(reply)
    }
}

/// An external coder reached through the subprocess protocol: the job is
/// written to its stdin, the reply is read from its stdout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalCoder {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl ExternalCoder {
    /// Command line from [`FAST_CODER_ENV`], whitespace separated.
    pub fn from_env() -> Result<Self> {
        let line = std::env::var(FAST_CODER_ENV).map_err(|_| {
            FcnrError::ExternalCoder(format!(
                "the fast coder is not built into this binary; set {FAST_CODER_ENV} to its command line"
            ))
        })?;
        let mut parts = line.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| FcnrError::ExternalCoder(format!("{FAST_CODER_ENV} is empty")))?;
        Ok(ExternalCoder {
            program: program.into(),
            args: parts.map(str::to_owned).collect(),
        })
    }

    pub fn run(&self, job: &CoderJob) -> Result<CoderReply> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| FcnrError::ExternalCoder(format!("spawn {:?}: {e}", self.program)))?;
        let payload = job.to_bytes();
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(&payload));
        let output = child
            .wait_with_output()
            .map_err(|e| FcnrError::ExternalCoder(e.to_string()))?;
        writer
            .join()
            .expect("stdin writer panicked")
            .map_err(|e| FcnrError::ExternalCoder(format!("writing job: {e}")))?;
        if !output.status.success() {
            return Err(FcnrError::ExternalCoder(format!(
                "{:?} exited with {}",
                self.program, output.status
            )));
        }
        match CoderReply::parse(&output.stdout, job.direction)? {
            CoderReply::Failed(msg) => Err(FcnrError::ExternalCoder(msg)),
            reply => Ok(reply),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::{build_cdf, EntropyParams};

    fn sample_job() -> (CoderJob, Vec<i32>) {
        let params = EntropyParams::new(vec![0.0, 1.2, -0.4], vec![1.0, 0.3, 4.0]).unwrap();
        let bounds = SymbolBounds::new(-5, 6).unwrap();
        let symbols = vec![0, 1, -5];
        let job = CoderJob {
            direction: Direction::Encode,
            planes: vec![JobPlane {
                tables: build_cdf(&params, bounds),
                payload: PlanePayload::Symbols(symbols.clone()),
            }],
        };
        (job, symbols)
    }

    #[test]
    fn job_round_trips_through_bytes() {
        let (job, _) = sample_job();
        assert_eq!(CoderJob::parse(&job.to_bytes()).unwrap(), job);
    }

    #[test]
    fn reference_job_matches_direct_coder() {
        let (job, symbols) = sample_job();
        let CoderReply::Streams(streams) = job.run_reference() else {
            panic!("encode failed")
        };
        let mut tables = job.planes[0].tables.clone();
        let bounds = crate::entropy::CdfProvider::bounds(&tables);
        let direct = ac_encode(&SymbolPlane::new(symbols.clone(), bounds).unwrap(), &mut tables).unwrap();
        assert_eq!(streams[0], direct);

        let decode = CoderJob {
            direction: Direction::Decode,
            planes: vec![JobPlane {
                tables: job.planes[0].tables.clone(),
                payload: PlanePayload::Stream(direct),
            }],
        };
        let reply = CoderReply::parse(&decode.run_reference().to_bytes(), Direction::Decode).unwrap();
        assert_eq!(reply, CoderReply::Symbols(vec![symbols]));
    }

    #[test]
    fn malformed_table_reports_offset() {
        let (job, _) = sample_job();
        let mut bytes = job.to_bytes();
        // Header (12) + bounds/count/words (16) + first row entry 0 -> set it to 5.
        bytes[28] = 5;
        match CoderJob::parse(&bytes) {
            Err(FcnrError::CoderJob { offset, .. }) => assert_eq!(offset, 28),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_job_is_rejected() {
        let (job, _) = sample_job();
        let bytes = job.to_bytes();
        assert!(matches!(
            CoderJob::parse(&bytes[..bytes.len() - 3]),
            Err(FcnrError::CoderJob { .. })
        ));
    }
}

// SPDX-License-Identifier: Apache-2.0

//! VMM job files.
//!
//! CSV: the first record holds the K inputs, followed by K records of C
//! weights each. Lines starting with `#` are comments.
//!
//! Binary, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "AVMM"
//! 4       1     version (1)
//! 5       1     n_in_bits
//! 6       1     n_w_bits
//! 7       1     reserved (0)
//! 8       4     K (u32)
//! 12      4     C (u32)
//! 16      ...   K inputs, then K*C weights row-major
//! ```
//!
//! Elements take one byte when their bit width is at most 8, two otherwise.

use thiserror::Error;

use crate::mapper::{MapperError, VmmJob};

pub const MAGIC: &[u8; 4] = b"AVMM";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum JobIoError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {reason}")]
    Format { line: u64, reason: String },
    #[error("binary job: {0}")]
    Binary(String),
    #[error(transparent)]
    Job(#[from] MapperError),
}

pub fn read_job_csv(text: &str) -> Result<VmmJob, JobIoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<(u64, Vec<u32>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let vals = rec
            .iter()
            .map(|f| {
                f.parse::<u32>().map_err(|e| JobIoError::Format {
                    line,
                    reason: format!("{f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((line, vals));
    }
    let Some(((_, inputs), weights)) = rows.split_first() else {
        return Err(JobIoError::Format {
            line: 1,
            reason: "empty job file".into(),
        });
    };
    let k = inputs.len();
    if weights.len() != k {
        return Err(JobIoError::Format {
            line: weights.last().map_or(1, |w| w.0),
            reason: format!("expected {k} weight rows, found {}", weights.len()),
        });
    }
    let c = weights.first().map_or(0, |w| w.1.len());
    let mut flat = Vec::with_capacity(k * c);
    for (line, w) in weights {
        if w.len() != c {
            return Err(JobIoError::Format {
                line: *line,
                reason: format!("expected {c} weights, found {}", w.len()),
            });
        }
        flat.extend_from_slice(w);
    }
    Ok(VmmJob::new(inputs.clone(), flat, c)?)
}

pub fn write_job_csv(job: &VmmJob) -> String {
    let join = |xs: &[u32]| xs.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
    let mut out = join(&job.inputs);
    out.push('\n');
    for k in 0..job.k {
        out.push_str(&join(&job.weights[k * job.c..(k + 1) * job.c]));
        out.push('\n');
    }
    out
}

fn width(bits: u32) -> usize {
    if bits <= 8 {
        1
    } else {
        2
    }
}

pub fn write_job_binary(job: &VmmJob, n_in_bits: u32, n_w_bits: u32) -> Vec<u8> {
    let (wi, ww) = (width(n_in_bits), width(n_w_bits));
    let mut out = Vec::with_capacity(HEADER_LEN + job.k * wi + job.k * job.c * ww);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, n_in_bits as u8, n_w_bits as u8, 0]);
    out.extend_from_slice(&(job.k as u32).to_le_bytes());
    out.extend_from_slice(&(job.c as u32).to_le_bytes());
    let mut put = |x: u32, w: usize| out.extend_from_slice(&(x as u16).to_le_bytes()[..w]);
    for &x in &job.inputs {
        put(x, wi);
    }
    for &x in &job.weights {
        put(x, ww);
    }
    out
}

/// Returns the job and its declared (n_in_bits, n_w_bits).
pub fn read_job_binary(bytes: &[u8]) -> Result<(VmmJob, u32, u32), JobIoError> {
    let bad = |s: String| JobIoError::Binary(s);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("bad magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(bad(format!("unsupported version {}", bytes[4])));
    }
    let (n_in, n_w) = (bytes[5] as u32, bytes[6] as u32);
    if n_in == 0 || n_w == 0 || n_in > 16 || n_w > 16 {
        return Err(bad(format!("bit widths {n_in}/{n_w} out of range")));
    }
    let k = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let c = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let (wi, ww) = (width(n_in), width(n_w));
    let need = k
        .checked_mul(c)
        .and_then(|kc| kc.checked_mul(ww))
        .and_then(|x| x.checked_add(k * wi + HEADER_LEN))
        .ok_or_else(|| bad("dimensions overflow".into()))?;
    if bytes.len() != need {
        return Err(bad(format!("expected {need} bytes for {k}x{c}, got {}", bytes.len())));
    }
    let get = |at: usize, w: usize| -> u32 {
        if w == 1 {
            bytes[at] as u32
        } else {
            u16::from_le_bytes([bytes[at], bytes[at + 1]]) as u32
        }
    };
    let inputs = (0..k).map(|i| get(HEADER_LEN + i * wi, wi)).collect();
    let base = HEADER_LEN + k * wi;
    let weights = (0..k * c).map(|i| get(base + i * ww, ww)).collect();
    Ok((VmmJob::new(inputs, weights, c)?, n_in, n_w))
}

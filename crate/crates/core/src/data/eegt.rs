//! `EEGT` layout, all little-endian:
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `EEGT` |
//! | 4 | u32 version (1) |
//! | 4 x 4 | u32 C, T, N, n_classes |
//! | 8 | f64 sample rate |
//! | N x (8 + 4 C T) | u32 subject, u32 label, C*T f32 samples |

use std::io::Write;
use std::path::Path;

use super::{Trial, TrialSet};
use crate::error::{data_err, Error, Result};

pub const EEGT_MAGIC: &[u8; 4] = b"EEGT";
pub const EEGT_VERSION: u32 = 1;
const HEADER: usize = 4 + 4 + 16 + 8;

pub fn trials_to_bytes(set: &TrialSet) -> Result<Vec<u8>> {
    set.validate()?;
    let per = set.channels * set.samples;
    let mut out = Vec::with_capacity(HEADER + set.len() * (8 + 4 * per));
    out.extend_from_slice(EEGT_MAGIC);
    for v in [EEGT_VERSION, u32(set.channels)?, u32(set.samples)?, u32(set.len())?, u32(set.classes)?] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&set.sample_rate.to_le_bytes());
    for t in &set.trials {
        out.extend_from_slice(&t.subject.to_le_bytes());
        out.extend_from_slice(&t.label.to_le_bytes());
        for &s in &t.samples {
            out.extend_from_slice(&(s as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| data_err!("{v} does not fit the 32-bit header field"))
}

fn fmt_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self.buf.get(self.pos..end).ok_or_else(|| {
            fmt_err(self.pos, format!("truncated while reading {what}: need {end} bytes, file has {}", self.buf.len()))
        })?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice length N"))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(what)?))
    }
}

pub fn trials_from_bytes(buf: &[u8]) -> Result<TrialSet> {
    let mut cur = Cursor { buf, pos: 0 };
    let magic: [u8; 4] = cur.take("magic")?;
    if &magic != EEGT_MAGIC {
        return Err(fmt_err(0, format!("bad magic {:?}, expected \"EEGT\"", String::from_utf8_lossy(&magic))));
    }
    let version = cur.u32("version")?;
    if version != EEGT_VERSION {
        return Err(fmt_err(4, format!("unsupported version {version}")));
    }
    let c = cur.u32("channel count")? as usize;
    let t = cur.u32("sample count")? as usize;
    let n = cur.u32("trial count")? as usize;
    let classes = cur.u32("class count")? as usize;
    let rate = f64::from_le_bytes(cur.take("sample rate")?);
    if n == 0 || c == 0 || t == 0 {
        return Err(fmt_err(8, "header declares an empty trial set"));
    }
    let per = c * t;
    let expected = HEADER as u128 + n as u128 * (8 + 4 * per as u128);
    if (buf.len() as u128) != expected {
        let what = if (buf.len() as u128) < expected { "truncated" } else { "trailing bytes" };
        return Err(fmt_err(
            buf.len().min(expected as usize),
            format!("{what}: header implies {expected} bytes, file has {}", buf.len()),
        ));
    }
    let mut trials = Vec::with_capacity(n);
    for _ in 0..n {
        let subject = cur.u32("subject")?;
        let at = cur.pos;
        let label = cur.u32("label")?;
        if label as usize >= classes {
            return Err(fmt_err(at, format!("label {label} outside {classes} classes")));
        }
        let raw = &buf[cur.pos..cur.pos + 4 * per];
        cur.pos += 4 * per;
        let samples = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        trials.push(Trial { subject, label, samples });
    }
    TrialSet::new(c, t, classes, rate, trials)
}

pub fn write_trials(set: &TrialSet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, trials_to_bytes(set)?)?;
    Ok(())
}

pub fn read_trials(path: impl AsRef<Path>) -> Result<TrialSet> {
    trials_from_bytes(&std::fs::read(path)?)
}

/// One row per trial: `subject,label,` then the `C * T` samples channel-major.
pub fn write_csv<W: Write>(set: &TrialSet, mut w: W) -> Result<()> {
    write!(w, "subject,label")?;
    for c in 0..set.channels {
        for t in 0..set.samples {
            write!(w, ",c{c}_t{t}")?;
        }
    }
    writeln!(w)?;
    for tr in &set.trials {
        write!(w, "{},{}", tr.subject, tr.label)?;
        for s in &tr.samples {
            write!(w, ",{s}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> TrialSet {
        let trials = (0..3)
            .map(|i| Trial {
                subject: i / 2,
                label: i % 2,
                samples: (0..6).map(|k| (k as f64 + 0.1) * (i as f64 - 1.0) / 3.0).collect(),
            })
            .collect();
        TrialSet::new(2, 3, 2, 250.0, trials).unwrap()
    }

    #[test]
    fn round_trip_at_f32_precision() {
        let s = set();
        let back = trials_from_bytes(&trials_to_bytes(&s).unwrap()).unwrap();
        assert_eq!((back.channels, back.samples, back.classes, back.sample_rate), (2, 3, 2, 250.0));
        for (a, b) in s.trials.iter().zip(&back.trials) {
            assert_eq!((a.subject, a.label), (b.subject, b.label));
            for (x, y) in a.samples.iter().zip(&b.samples) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn header_bytes_are_exact() {
        let b = trials_to_bytes(&set()).unwrap();
        assert_eq!(&b[..4], b"EEGT");
        assert_eq!(&b[4..24], &[1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&b[24..32], &250f64.to_le_bytes());
        assert_eq!(b.len(), 32 + 3 * (8 + 24));
    }

    #[test]
    fn damaged_files_report_offsets() {
        let b = trials_to_bytes(&set()).unwrap();
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(trials_from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = b.clone();
        bad[4] = 2;
        assert!(matches!(trials_from_bytes(&bad), Err(Error::Format { offset: 4, .. })));
        let err = trials_from_bytes(&b[..b.len() - 5]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("truncated") && msg.contains(&format!("{} bytes", b.len())), "{msg}");
        assert!(matches!(trials_from_bytes(&b[..10]), Err(Error::Format { offset: 8, .. })));
    }

    #[test]
    fn empty_sets_are_not_written() {
        let mut s = set();
        s.trials.clear();
        assert!(trials_to_bytes(&s).is_err());
    }

    #[test]
    fn csv_has_one_row_per_trial() {
        let mut out = Vec::new();
        write_csv(&set(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("subject,label,c0_t0"));
        assert_eq!(lines[1].split(',').count(), 8);
    }
}

//! Versioned binary trace files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FLTRACE\0"  u32 version  u64 header_len  header (JSON, header_len bytes)
//! iterates: for each theta_t, W row-major, then b, then phi, as f64
//! oracle section when the header says so:
//!   u64 steps, each: u32 round, u32 client, u32 step, ids batch, sets
//!   u64 rounds, each: sets activation, sets first_activation
//! ids  = u32 len, then len u32 sample ids
//! sets = ids offsets, then ids members
//! ```

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HeadShape, ModelParams, SampleId};
use crate::sim::{NeuronSets, OracleLog, RoundLog, StepLog, TrainingConfig, TrainingTrace};

pub const MAGIC: &[u8; 8] = b"FLTRACE\0";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainingConfig,
    input_dim: usize,
    head: HeadShape,
    iterates: usize,
    censored: Vec<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    accuracy: Option<f64>,
    oracle: bool,
}

pub fn encode_trace(trace: &TrainingTrace) -> Result<Vec<u8>> {
    let first = trace
        .iterates
        .first()
        .ok_or_else(|| Error::invalid("trace without iterates"))?;
    let header = serde_json::to_vec(&Header {
        config: trace.config.clone(),
        input_dim: first.input_dim(),
        head: first.head.clone(),
        iterates: trace.iterates.len(),
        censored: trace.censored.clone(),
        accuracy: trace.accuracy,
        oracle: trace.oracle.is_some(),
    })?;
    let mut out = Vec::with_capacity(header.len() + 8 * first.flat_len() * trace.iterates.len() + 32);
    out.write_all(MAGIC)?;
    out.write_u32::<LE>(VERSION)?;
    out.write_u64::<LE>(header.len() as u64)?;
    out.write_all(&header)?;
    for p in &trace.iterates {
        if !p.same_shape(first) {
            return Err(Error::invalid("iterates differ in shape"));
        }
        for v in p.w.iter().chain(p.b.iter()).chain(p.phi.iter()) {
            out.write_f64::<LE>(*v)?;
        }
    }
    if let Some(log) = &trace.oracle {
        out.write_u64::<LE>(log.steps.len() as u64)?;
        for s in &log.steps {
            out.write_u32::<LE>(s.round as u32)?;
            out.write_u32::<LE>(s.client as u32)?;
            out.write_u32::<LE>(s.step as u32)?;
            write_ids(&mut out, &s.batch)?;
            write_sets(&mut out, &s.sets)?;
        }
        out.write_u64::<LE>(log.rounds.len() as u64)?;
        for r in &log.rounds {
            write_sets(&mut out, &r.activation)?;
            write_sets(&mut out, &r.first_activation)?;
        }
    }
    Ok(out)
}

fn write_ids(out: &mut Vec<u8>, ids: &[SampleId]) -> Result<()> {
    out.write_u32::<LE>(ids.len() as u32)?;
    for id in ids {
        out.write_u32::<LE>(id.0)?;
    }
    Ok(())
}

fn write_sets(out: &mut Vec<u8>, sets: &NeuronSets) -> Result<()> {
    let (offsets, ids) = sets.raw();
    out.write_u32::<LE>(offsets.len() as u32)?;
    for &o in offsets {
        out.write_u32::<LE>(o)?;
    }
    write_ids(out, ids)
}

pub fn write_trace(path: &Path, trace: &TrainingTrace) -> Result<()> {
    fs::write(path, encode_trace(trace)?)?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<TrainingTrace> {
    decode_trace(&fs::read(path)?)
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.cur.position(),
            message: message.into(),
        }
    }

    fn wrap<T>(&mut self, what: &str, f: impl FnOnce(&mut Cursor<&'a [u8]>) -> std::io::Result<T>) -> Result<T> {
        let at = self.cur.position();
        f(&mut self.cur).map_err(|_| Error::Format {
            offset: at,
            message: format!("truncated {what}"),
        })
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.wrap(what, |c| c.read_u32::<LE>())
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        self.wrap(what, |c| c.read_u64::<LE>())
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let remaining = self.cur.get_ref().len() as u64 - self.cur.position();
        if (n as u64).saturating_mul(8) > remaining {
            return Err(self.err(format!("truncated {what}")));
        }
        let mut buf = vec![0.0; n];
        self.wrap(what, |c| c.read_f64_into::<LE>(&mut buf))?;
        Ok(buf)
    }

    fn ids(&mut self, what: &str) -> Result<Vec<SampleId>> {
        let n = self.u32(what)? as usize;
        let remaining = self.cur.get_ref().len() as u64 - self.cur.position();
        if (n as u64) * 4 > remaining {
            return Err(self.err(format!("truncated {what}")));
        }
        (0..n).map(|_| self.u32(what).map(SampleId)).collect()
    }

    fn sets(&mut self, what: &str) -> Result<NeuronSets> {
        let at = self.cur.position();
        let offsets: Vec<u32> = self.ids(what)?.into_iter().map(|s| s.0).collect();
        let ids = self.ids(what)?;
        NeuronSets::from_raw(offsets, ids).ok_or(Error::Format {
            offset: at,
            message: format!("inconsistent {what}"),
        })
    }
}

pub fn decode_trace(bytes: &[u8]) -> Result<TrainingTrace> {
    let mut r = Reader { cur: Cursor::new(bytes) };
    let mut magic = [0u8; 8];
    r.wrap("magic", |c| c.read_exact(&mut magic))?;
    if &magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "not a trace file".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 8,
            message: format!("unsupported trace version {version}"),
        });
    }
    let len = r.u64("header length")? as usize;
    let start = r.cur.position() as usize;
    let raw = bytes
        .get(start..start.saturating_add(len))
        .ok_or_else(|| r.err("truncated header"))?;
    let header: Header = serde_json::from_slice(raw).map_err(|e| Error::Format {
        offset: start as u64,
        message: format!("bad header: {e}"),
    })?;
    r.cur.set_position((start + len) as u64);

    let (h, d) = (header.head.input, header.input_dim);
    let r_len = header.head.param_count();
    let mut iterates = Vec::with_capacity(header.iterates);
    for t in 0..header.iterates {
        let what = format!("iterate {t}");
        let w = Array2::from_shape_vec((h, d), r.f64s(h * d, &what)?).expect("sized buffer");
        let b = Array1::from(r.f64s(h, &what)?);
        let phi = Array1::from(r.f64s(r_len, &what)?);
        iterates.push(ModelParams::new(w, b, phi, header.head.clone())?);
    }

    let oracle = if header.oracle {
        let n = r.u64("step count")?;
        let mut steps = Vec::new();
        for _ in 0..n {
            steps.push(StepLog {
                round: r.u32("step round")? as usize,
                client: r.u32("step client")? as usize,
                step: r.u32("step index")? as usize,
                batch: r.ids("batch")?,
                sets: r.sets("batch activation sets")?,
            });
        }
        let n = r.u64("round count")?;
        let mut rounds = Vec::new();
        for _ in 0..n {
            rounds.push(RoundLog {
                activation: r.sets("round activation sets")?,
                first_activation: r.sets("first activation sets")?,
            });
        }
        Some(OracleLog { steps, rounds })
    } else {
        None
    };
    if (r.cur.position() as usize) != bytes.len() {
        return Err(r.err("trailing bytes after trace"));
    }
    Ok(TrainingTrace {
        config: header.config,
        iterates,
        censored: header.censored,
        accuracy: header.accuracy,
        oracle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, partition_iid, Dataset, SyntheticKind, SyntheticSpec, Task};
    use crate::sim::run_training;

    fn trace(oracle: bool) -> TrainingTrace {
        let ds = Dataset::new(
            generate_synthetic(&SyntheticSpec {
                kind: SyntheticKind::Binary { density: 0.3 },
                d: 12,
                n: 40,
                classes: 2,
                seed: 1,
                task: Task::Classification,
            })
            .unwrap(),
        )
        .unwrap();
        let p = partition_iid(&ds, 2, 20, 0).unwrap();
        let cfg = TrainingConfig {
            clients: 2,
            samples_per_client: 20,
            batch_size: 4,
            n_updates: 2,
            t_max: 2,
            hidden: 6,
            head_hidden: vec![3],
            oracle_logging: oracle,
            ..TrainingConfig::default()
        };
        run_training(&cfg, &ds, &p).unwrap()
    }

    #[test]
    fn roundtrip_with_and_without_oracle() {
        for oracle in [false, true] {
            let t = trace(oracle);
            let bytes = encode_trace(&t).unwrap();
            assert_eq!(decode_trace(&bytes).unwrap(), t);
            assert_eq!(encode_trace(&t).unwrap(), bytes);
        }
    }

    #[test]
    fn corrupt_files_report_offsets() {
        let bytes = encode_trace(&trace(true)).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_trace(&bad), Err(Error::Format { offset: 0, .. })));
        for cut in [4, 14, 100, bytes.len() - 3] {
            match decode_trace(&bytes[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("cut {cut}: {:?}", other.map(|_| ())),
            }
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_trace(&long).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.trace");
        let t = trace(false);
        write_trace(&path, &t).unwrap();
        assert_eq!(read_trace(&path).unwrap(), t);
    }
}

//! IDX (MNIST/FashionMNIST) reader.
//!
//! Images: magic `0x00000803`, then `n`, `rows`, `cols` as big-endian u32,
//! then `n * rows * cols` unsigned bytes. Labels: magic `0x00000801`, `n`,
//! then `n` bytes.

use std::collections::HashSet;
use std::fs;
use std::io::Cursor;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use ndarray::Array1;

use crate::error::{Error, Result};
use crate::model::{Label, LabeledExample, SampleId};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn len(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn read_u32(cur: &mut Cursor<&[u8]>, what: &str) -> Result<u32> {
    let offset = cur.position();
    cur.read_u32::<BigEndian>().map_err(|_| Error::Format {
        offset,
        message: format!("truncated header ({what})"),
    })
}

fn expect_magic(cur: &mut Cursor<&[u8]>, magic: u32) -> Result<()> {
    let found = read_u32(cur, "magic")?;
    if found != magic {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic 0x{found:08x}, expected 0x{magic:08x}"),
        });
    }
    Ok(())
}

fn body(bytes: &[u8], start: u64, len: usize) -> Result<&[u8]> {
    let start = start as usize;
    let end = start + len;
    if bytes.len() < end {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated body: need {len} bytes from offset {start}"),
        });
    }
    Ok(&bytes[start..end])
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let mut cur = Cursor::new(bytes);
    expect_magic(&mut cur, IMAGES_MAGIC)?;
    let n = read_u32(&mut cur, "image count")? as usize;
    let rows = read_u32(&mut cur, "rows")? as usize;
    let cols = read_u32(&mut cur, "cols")? as usize;
    let pixels = body(bytes, cur.position(), n * rows * cols)?.to_vec();
    Ok(IdxImages { rows, cols, pixels })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut cur = Cursor::new(bytes);
    expect_magic(&mut cur, LABELS_MAGIC)?;
    let n = read_u32(&mut cur, "label count")? as usize;
    Ok(body(bytes, cur.position(), n)?.to_vec())
}

/// Loads the images at `selection` (all when `None`), scaled to `k / 255`.
/// Later duplicates of an already loaded image are dropped; ids are the
/// positions in the file.
pub fn load_idx(images: &Path, labels: &Path, selection: Option<&[usize]>) -> Result<Vec<LabeledExample>> {
    let imgs = parse_idx_images(&fs::read(images)?)?;
    let labs = parse_idx_labels(&fs::read(labels)?)?;
    if imgs.len() != labs.len() {
        return Err(Error::invalid(format!(
            "{} images but {} labels",
            imgs.len(),
            labs.len()
        )));
    }
    let all: Vec<usize>;
    let selection = match selection {
        Some(s) => s,
        None => {
            all = (0..imgs.len()).collect();
            &all
        }
    };
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(selection.len());
    for &i in selection {
        if i >= imgs.len() {
            return Err(Error::invalid(format!("image index {i} out of range ({})", imgs.len())));
        }
        let raw = imgs.image(i);
        if !seen.insert(raw) {
            continue;
        }
        out.push(LabeledExample {
            x: Array1::from_iter(raw.iter().map(|&p| f64::from(p) / 255.0)),
            y: Label::Class(usize::from(labs[i])),
            sample_id: SampleId(i as u32),
            client_id: None,
        });
    }
    Ok(out)
}

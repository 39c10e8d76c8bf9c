//! Bundle file: a whole [`Dataset`] in one little-endian binary file.
//!
//! ```text
//! magic      4   "VCTR"
//! version    1
//! metadata   u32 length, then:
//!              label mode u8 (0 single, 1 multi)
//!              n, m, k, D, count       u32 each
//!              aux category            u32 per aux prompt
//!              per bundle: id (u16 length + UTF-8), T u32,
//!                          split (u16 length + UTF-8),
//!                          label (u32 class | n bytes of 0/1)
//! payload    f32: class text n*D, aux text m*D, then each bundle's T*D frames
//! crc32      u32 over all preceding bytes
//! ```
//!
//! Values are stored as `f32`; reading widens them exactly to `f64`.

use std::io::{Read, Write};
use std::path::Path;

use super::bundle::{Dataset, EmbeddingBundle};
use crate::binio::{len_u32, Reader, Writer};
use crate::error::{Result, VictrError};
use crate::head::{Label, LabelMode};
use crate::numerics::Mat;

pub const BUNDLE_MAGIC: [u8; 4] = *b"VCTR";
pub const BUNDLE_VERSION: u8 = 1;

fn put_mat(w: &mut Writer, m: &Mat) {
    for &v in &m.data {
        w.f32(v as f32);
    }
}

pub fn encode_bundles(data: &Dataset) -> Result<Vec<u8>> {
    data.validate()?;
    let mut meta = Writer::plain();
    meta.u8(match data.label_mode {
        LabelMode::SingleLabel => 0,
        LabelMode::MultiLabel => 1,
    });
    for v in [data.n_classes(), data.n_aux(), data.n_categories, data.dim(), data.len()] {
        meta.u32(len_u32(v)?);
    }
    for &c in &data.aux_categories {
        meta.u32(len_u32(c)?);
    }
    for b in &data.bundles {
        meta.str16(&b.video_id)?;
        meta.u32(len_u32(b.frames.rows)?);
        meta.str16(&b.split)?;
        match &b.label {
            Label::Single(c) => meta.u32(len_u32(*c)?),
            Label::Multi(flags) => meta.bytes(&flags.iter().map(|&f| u8::from(f)).collect::<Vec<_>>()),
        }
    }
    let meta = meta.into_bytes();

    let mut w = Writer::new(&BUNDLE_MAGIC, BUNDLE_VERSION);
    w.blob(&meta)?;
    put_mat(&mut w, &data.class_text);
    put_mat(&mut w, &data.aux_text);
    for b in &data.bundles {
        put_mat(&mut w, &b.frames);
    }
    Ok(w.finish())
}

struct Meta {
    label_mode: LabelMode,
    n: usize,
    m: usize,
    k: usize,
    d: usize,
    categories: Vec<usize>,
    bundles: Vec<(String, usize, String, Label)>,
}

fn read_meta(bytes: &[u8]) -> Result<Meta> {
    let mut r = Reader::plain(bytes);
    let label_mode = match r.u8()? {
        0 => LabelMode::SingleLabel,
        1 => LabelMode::MultiLabel,
        other => return Err(VictrError::Label(format!("unknown label mode {other}"))),
    };
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let [n, m, k, d, count] = dims;
    let categories = (0..m).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
    let mut bundles = Vec::new();
    for _ in 0..count {
        let id = r.str16()?;
        let t = r.u32()? as usize;
        let split = r.str16()?;
        let label = match label_mode {
            LabelMode::SingleLabel => Label::Single(r.u32()? as usize),
            LabelMode::MultiLabel => Label::Multi((0..n).map(|_| Ok(r.u8()? != 0)).collect::<Result<_>>()?),
        };
        bundles.push((id, t, split, label));
    }
    if !r.at_end() {
        return Err(VictrError::Truncation {
            expected: r.position(),
            actual: bytes.len(),
        });
    }
    Ok(Meta {
        label_mode,
        n,
        m,
        k,
        d,
        categories,
        bundles,
    })
}

fn get_mat(r: &mut Reader<'_>, rows: usize, cols: usize) -> Result<Mat> {
    let data = (0..rows * cols).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
    Mat::from_vec(rows, cols, data)
}

pub fn decode_bundles(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::open(bytes, &BUNDLE_MAGIC, BUNDLE_VERSION)?;
    let meta_bytes = r.blob()?;
    let meta = read_meta(meta_bytes)?;

    let overflow = || VictrError::Range("declared payload size overflows".into());
    let rows = meta
        .bundles
        .iter()
        .try_fold(meta.n.checked_add(meta.m).ok_or_else(overflow)?, |acc, b| acc.checked_add(b.1))
        .ok_or_else(overflow)?;
    let expected = rows
        .checked_mul(meta.d)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(9 + 4 + meta_bytes.len()))
        .ok_or_else(overflow)?;
    if expected != bytes.len() {
        return Err(VictrError::Truncation {
            expected,
            actual: bytes.len(),
        });
    }

    let class_text = get_mat(&mut r, meta.n, meta.d)?;
    let aux_text = get_mat(&mut r, meta.m, meta.d)?;
    let mut bundles = Vec::with_capacity(meta.bundles.len());
    for (video_id, t, split, label) in meta.bundles {
        bundles.push(EmbeddingBundle {
            video_id,
            frames: get_mat(&mut r, t, meta.d)?,
            label,
            split,
        });
    }
    r.verify()?;
    let data = Dataset {
        label_mode: meta.label_mode,
        class_text,
        aux_text,
        aux_categories: meta.categories,
        n_categories: meta.k,
        bundles,
    };
    data.validate()?;
    Ok(data)
}

pub fn write_bundles(data: &Dataset, mut out: impl Write) -> Result<()> {
    out.write_all(&encode_bundles(data)?)?;
    Ok(())
}

pub fn read_bundles(mut input: impl Read) -> Result<Dataset> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode_bundles(&bytes)
}

pub fn write_bundle_file(data: &Dataset, path: &Path) -> Result<()> {
    write_bundles(data, std::fs::File::create(path)?)
}

pub fn read_bundle_file(path: &Path) -> Result<Dataset> {
    read_bundles(std::fs::File::open(path)?)
}

//! Dataset directory format: `manifest.json` plus one flat little-endian
//! blob laid out `[t][i][j]`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GridSequence;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_NAME: &str = "physicoupled-grid";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    #[default]
    F32,
    F64,
}

impl DataType {
    fn width(self) -> usize {
        match self {
            DataType::F32 => 4,
            DataType::F64 => 8,
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            DataType::F32 => "data.f32le",
            DataType::F64 => "data.f64le",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub format: String,
    pub version: u32,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub dt: f64,
    pub dtype: DataType,
    pub endianness: String,
    pub layout: String,
    pub data_file: String,
    /// Row-major runs of `(active, length)`.
    pub mask_rle: Vec<(bool, usize)>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

fn encode_rle(mask: &[bool]) -> Vec<(bool, usize)> {
    let mut runs: Vec<(bool, usize)> = Vec::new();
    for &m in mask {
        match runs.last_mut() {
            Some((v, n)) if *v == m => *n += 1,
            _ => runs.push((m, 1)),
        }
    }
    runs
}

fn decode_rle(runs: &[(bool, usize)], cells: usize) -> Result<Vec<bool>> {
    let mut mask = Vec::with_capacity(cells);
    for &(v, n) in runs {
        if mask.len() + n > cells {
            return Err(Error::format("mask runs exceed grid size"));
        }
        mask.extend(std::iter::repeat_n(v, n));
    }
    if mask.len() != cells {
        return Err(Error::format(format!(
            "mask covers {} of {cells} cells",
            mask.len()
        )));
    }
    Ok(mask)
}

/// Write `seq` into directory `dir` (created if missing).
pub fn write_sequence(seq: &GridSequence, dir: &Path, dtype: DataType) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = SequenceManifest {
        format: FORMAT_NAME.into(),
        version: 1,
        frames: seq.frames(),
        height: seq.height(),
        width: seq.width(),
        dt: seq.dt(),
        dtype,
        endianness: "little".into(),
        layout: "t,i,j".into(),
        data_file: dtype.file_name().into(),
        mask_rle: encode_rle(seq.mask()),
        meta: seq.meta.clone(),
    };
    let bytes: Vec<u8> = match dtype {
        DataType::F32 => seq
            .data()
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect(),
        DataType::F64 => seq.data().iter().flat_map(|v| v.to_le_bytes()).collect(),
    };
    fs::write(dir.join(&manifest.data_file), bytes)?;
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn read_sequence(dir: &Path) -> Result<GridSequence> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let m: SequenceManifest = serde_json::from_str(&text)?;
    if m.format != FORMAT_NAME || m.endianness != "little" || m.layout != "t,i,j" {
        return Err(Error::format(format!(
            "unsupported dataset {}/{}/{}",
            m.format, m.endianness, m.layout
        )));
    }
    if m.data_file.contains(['/', '\\']) {
        return Err(Error::format("data_file must be a plain file name"));
    }
    let cells = m.height * m.width;
    let mask = decode_rle(&m.mask_rle, cells)?;
    let bytes = fs::read(dir.join(&m.data_file))?;
    let expect = m.frames * cells * m.dtype.width();
    if bytes.len() != expect {
        return Err(Error::format(format!(
            "blob holds {} bytes, manifest implies {expect}",
            bytes.len()
        )));
    }
    let data: Vec<f64> = match m.dtype {
        DataType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        DataType::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    for (k, v) in data.iter().enumerate() {
        if !mask[k % cells] && *v != 0.0 {
            return Err(Error::format(format!(
                "masked cell {} holds {v}",
                k % cells
            )));
        }
    }
    let mut seq = GridSequence::with_mask(m.frames, m.height, m.width, data, mask, m.dt)
        .map_err(|e| Error::format(e.to_string()))?;
    seq.meta = m.meta;
    Ok(seq)
}

/// Name of the `k`-th sequence directory inside a corpus.
pub fn sequence_dir_name(k: usize) -> String {
    format!("seq_{k:04}")
}

/// Write sequences as `dir/seq_0000`, `dir/seq_0001`, ...
pub fn write_corpus(seqs: &[GridSequence], dir: &Path, dtype: DataType) -> Result<()> {
    for (k, s) in seqs.iter().enumerate() {
        write_sequence(s, &dir.join(sequence_dir_name(k)), dtype)?;
    }
    Ok(())
}

/// Read a dataset directory: a single sequence when `dir` holds a
/// manifest, otherwise every subdirectory holding one, in name order.
pub fn read_corpus(dir: &Path) -> Result<Vec<GridSequence>> {
    if dir.join(MANIFEST_FILE).is_file() {
        return Ok(vec![read_sequence(dir)?]);
    }
    if !dir.is_dir() {
        return Err(Error::config(format!(
            "dataset {} does not exist",
            dir.display()
        )));
    }
    let mut subdirs: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(Error::config(format!(
            "no sequences under {}",
            dir.display()
        )));
    }
    subdirs.iter().map(|p| read_sequence(p)).collect()
}

/// Import `t,i,j,value` rows. Grid extents are inferred; cells that never
/// appear are masked out. A header row is skipped when present.
pub fn import_csv(path: &Path, dt: f64) -> Result<GridSequence> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let mut rows = Vec::new();
    for (n, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 4 {
            return Err(Error::format(format!(
                "line {}: expected 4 fields, got {}",
                n + 1,
                rec.len()
            )));
        }
        let parsed = (
            rec[0].parse::<usize>(),
            rec[1].parse::<usize>(),
            rec[2].parse::<usize>(),
            rec[3].parse::<f64>(),
        );
        match parsed {
            (Ok(t), Ok(i), Ok(j), Ok(v)) => rows.push((t, i, j, v)),
            _ if n == 0 => continue,
            _ => {
                return Err(Error::format(format!(
                    "line {}: cannot parse {:?}",
                    n + 1,
                    rec
                )))
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::format("no data rows"));
    }
    let frames = rows.iter().map(|r| r.0).max().unwrap_or(0) + 1;
    let height = rows.iter().map(|r| r.1).max().unwrap_or(0) + 1;
    let width = rows.iter().map(|r| r.2).max().unwrap_or(0) + 1;
    let cells = height * width;
    let mut data = vec![0.0; frames * cells];
    let mut seen = vec![false; frames * cells];
    let mut mask = vec![false; cells];
    for (t, i, j, v) in rows {
        let k = t * cells + i * width + j;
        if seen[k] {
            return Err(Error::format(format!(
                "duplicate value at t={t} i={i} j={j}"
            )));
        }
        seen[k] = true;
        data[k] = v;
        mask[i * width + j] = true;
    }
    for t in 0..frames {
        for c in 0..cells {
            if mask[c] && !seen[t * cells + c] {
                return Err(Error::format(format!(
                    "missing value at t={t} i={} j={}",
                    c / width,
                    c % width
                )));
            }
        }
    }
    GridSequence::with_mask(frames, height, width, data, mask, dt)
}

fn csv_err(e: csv::Error) -> Error {
    Error::format(e.to_string())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn irregular_mask() -> Vec<bool> {
        // 29 x 36 grid with exactly 905 active cells.
        let mut mask = vec![false; 29 * 36];
        for m in mask.iter_mut().take(905) {
            *m = true;
        }
        // Scatter a few holes through the active region.
        for k in [3, 77, 400, 811] {
            mask.swap(k, 1000 + k % 40);
        }
        mask
    }

    #[test]
    fn irregular_mask_round_trip() {
        let mask = irregular_mask();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 905);
        let frames = 3;
        let data = (0..frames * 29 * 36)
            .map(|k| (k % 17) as f64 * 0.25)
            .collect();
        let mut s = GridSequence::with_mask(frames, 29, 36, data, mask.clone(), 43200.0).unwrap();
        s.meta.insert("source".into(), "surrogate".into());
        let dir = tempfile::tempdir().unwrap();
        write_sequence(&s, dir.path(), DataType::F32).unwrap();
        let back = read_sequence(dir.path()).unwrap();
        assert_eq!(back.mask(), &mask[..]);
        assert_eq!(back, s);
    }

    #[test]
    fn truncated_blob_is_format_error() {
        let s = GridSequence::new(2, 2, 2, vec![1.0; 8], 0.1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_sequence(&s, dir.path(), DataType::F32).unwrap();
        let blob = dir.path().join("data.f32le");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_sequence(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn csv_import_infers_grid_and_mask() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("obs.csv");
        fs::write(&p, "t,i,j,value\n0,0,0,1.5\n0,1,1,2\n1,0,0,-1\n1,1,1,0.5\n").unwrap();
        let s = import_csv(&p, 0.5).unwrap();
        assert_eq!((s.frames(), s.height(), s.width()), (2, 2, 2));
        assert_eq!(s.mask(), &[true, false, false, true]);
        assert_eq!(s.at(1, 1, 1), 0.5);
        fs::write(&p, "0,0,0,1\n1,1,1,2\n").unwrap();
        assert!(matches!(import_csv(&p, 1.0), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn f64_round_trip_is_bit_exact(
            (t, h, w) in (1usize..4, 1usize..6, 1usize..6),
            seed in any::<u64>(),
        ) {
            let n = t * h * w;
            let data: Vec<f64> = (0..n).map(|k| f64::from_bits(seed.wrapping_mul(k as u64 + 1) >> 2) ).map(|v| if v.is_finite() { v } else { 0.0 }).collect();
            let s = GridSequence::new(t, h, w, data, 0.1).unwrap();
            let dir = tempfile::tempdir().unwrap();
            write_sequence(&s, dir.path(), DataType::F64).unwrap();
            let back = read_sequence(dir.path()).unwrap();
            prop_assert_eq!(back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), s.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.mask(), s.mask());
        }

        #[test]
        fn f32_round_trip_is_exact_for_f32_values(values in proptest::collection::vec(-1e3f32..1e3, 12)) {
            let data = values.iter().map(|&v| v as f64).collect();
            let s = GridSequence::new(3, 2, 2, data, 0.25).unwrap();
            let dir = tempfile::tempdir().unwrap();
            write_sequence(&s, dir.path(), DataType::F32).unwrap();
            prop_assert_eq!(read_sequence(dir.path()).unwrap(), s);
        }
    }
}

//! File formats: dense CSV matrices, edge lists, key=value manifests and
//! 8-bit binary PGM images.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageReader};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        source_name: path.display().to_string(),
        line,
        reason: reason.into(),
    }
}

/// Writes one matrix row per CSV record. `header` adds `c0,c1,...`.
pub fn write_dense_csv(path: &Path, m: ArrayView2<f64>, header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    if header {
        w.write_record((0..m.ncols()).map(|j| format!("c{j}")))?;
    }
    for row in m.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dense_csv(path: &Path, header: bool) -> Result<Array2<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 1 + usize::from(header);
        match cols {
            None => cols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return Err(parse_err(path, line, format!("expected {c} fields, found {}", rec.len())))
            }
            _ => {}
        }
        for field in rec.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("`{field}` is not a number")))?;
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    Array2::from_shape_vec((rows, cols), data).map_err(|e| parse_err(path, 0, e.to_string()))
}

/// Parses `u v` or `u,v` pairs, one per line; `#` starts a comment. Returns the
/// pairs and one more than the largest index seen.
pub fn read_edge_list(path: &Path) -> Result<(Vec<(usize, usize)>, usize)> {
    let reader = BufReader::new(File::open(path)?);
    let mut edges = Vec::new();
    let mut n = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut parts = content
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty());
        let mut next = || -> Result<usize> {
            let tok = parts
                .next()
                .ok_or_else(|| parse_err(path, i + 1, "expected two node indices"))?;
            tok.parse()
                .map_err(|_| parse_err(path, i + 1, format!("`{tok}` is not a node index")))
        };
        let (u, v) = (next()?, next()?);
        if parts.next().is_some() {
            return Err(parse_err(path, i + 1, "trailing tokens after edge"));
        }
        n = n.max(u + 1).max(v + 1);
        edges.push((u, v));
    }
    Ok((edges, n))
}

pub fn write_edge_list(path: &Path, edges: &[(usize, usize)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (u, v) in edges {
        writeln!(w, "{u} {v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (k, v) in entries {
        writeln!(w, "{k}={v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<(String, String)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, i + 1, "expected key=value"))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Reads a grayscale image as `height × width` pixel values in `0..=255`.
pub fn read_pgm(path: &Path) -> Result<Array2<f64>> {
    let img = ImageReader::open(path)?.with_guessed_format()?.decode()?.into_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        f64::from(img.get_pixel(x as u32, y as u32).0[0])
    }))
}

/// Writes binary (P5) PGM; values are rounded and clamped to `0..=255`.
pub fn write_pgm(path: &Path, pixels: ArrayView2<f64>) -> Result<()> {
    let (h, w) = pixels.dim();
    let bytes: Vec<u8> = pixels.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
    let file = BufWriter::new(File::create(path)?);
    PnmEncoder::new(file)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&bytes, w as u32, h as u32, ExtendedColorType::L8)?;
    Ok(())
}

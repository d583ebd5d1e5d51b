//! Binary tensor files, CSV tables, dataset and checkpoint directories.
//!
//! Tensor layout: 16-byte header (`b"DODT"`, then version, rank and dtype
//! code as u32 LE), `rank` dims as u64 LE, then row-major f32 LE data.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::harness::{DatasetConfig, Sample, StudentModel, SyntheticIdentityDataset};
use crate::losses::CentroidTable;
use crate::math::{Matrix, Vector};
use crate::occlusion::{BinaryMask, MaskCategory, MaskedSample, Raster};

pub const TENSOR_MAGIC: [u8; 4] = *b"DODT";
pub const TENSOR_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{0}")]
    Format(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(msg: impl Into<String>) -> IoError {
    IoError::Format(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, IoError> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(format_err(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            dims: vec![m.rows(), m.cols()],
            data: m.as_slice().to_vec(),
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix, IoError> {
        match self.dims.as_slice() {
            &[r, c] => Matrix::new(r, c, self.data.clone()).map_err(|e| format_err(e.to_string())),
            d => Err(format_err(format!(
                "expected a rank-2 tensor, got dims {d:?}"
            ))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(&TENSOR_MAGIC);
        out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        out.extend_from_slice(&DTYPE_F32.to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, IoError> {
        if bytes.len() < HEADER_LEN || bytes[..4] != TENSOR_MAGIC {
            return Err(format_err("not a tensor file"));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let (version, rank, dtype) = (word(4), word(8) as usize, word(12));
        if version != TENSOR_VERSION {
            return Err(format_err(format!("unsupported tensor version {version}")));
        }
        if dtype != DTYPE_F32 {
            return Err(format_err(format!("unsupported dtype code {dtype}")));
        }
        let dims_end = HEADER_LEN + 8 * rank;
        if bytes.len() < dims_end {
            return Err(format_err("truncated tensor dims"));
        }
        let dims: Vec<usize> = bytes[HEADER_LEN..dims_end]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| format_err("tensor size overflows"))?;
        if bytes.len() - dims_end != 4 * count {
            return Err(format_err(format!(
                "tensor {dims:?} needs {} data bytes, found {}",
                4 * count,
                bytes.len() - dims_end
            )));
        }
        let data: Vec<f32> = bytes[dims_end..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(format_err("tensor holds non-finite values"));
        }
        Ok(Self { dims, data })
    }
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<(), IoError> {
    fs::write(path, tensor.encode()).map_err(io_err(path))
}

pub fn read_tensor(path: &Path) -> Result<Tensor, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Tensor::decode(&bytes).map_err(|e| format_err(format!("{}: {e}", path.display())))
}

pub fn write_csv<S: AsRef<str>>(
    path: &Path,
    header: &[&str],
    rows: &[Vec<S>],
) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row.iter().map(|s| s.as_ref()))
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Header and rows of a CSV file.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), IoError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(
            rec.map_err(csv_err(path))?
                .iter()
                .map(str::to_owned)
                .collect(),
        );
    }
    Ok((header, rows))
}

/// Ordered `key=value` lines; `#` starts a comment.
pub fn write_key_values(path: &Path, entries: &[(String, String)]) -> Result<(), IoError> {
    let mut text = String::new();
    for (k, v) in entries {
        text.push_str(k);
        text.push('=');
        text.push_str(v);
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>, IoError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format_err(format!("line {}: expected key=value", n + 1)))?;
        out.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_key_values(&text).map_err(|e| format_err(format!("{}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> Result<(), IoError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

const CHECKPOINT_NAMES: [&str; 6] = ["w1", "b1", "w2", "b2", "w3", "b3"];

pub fn save_checkpoint(dir: &Path, model: &StudentModel) -> Result<(), IoError> {
    create_dir(dir)?;
    for (name, m) in model.tensors() {
        write_tensor(&dir.join(format!("{name}.bin")), &Tensor::from_matrix(m))?;
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<StudentModel, IoError> {
    let mut mats = Vec::with_capacity(6);
    for name in CHECKPOINT_NAMES {
        mats.push(read_tensor(&dir.join(format!("{name}.bin")))?.to_matrix()?);
    }
    let mut it = mats.into_iter();
    let mut next = || it.next().unwrap();
    let model = StudentModel {
        w1: next(),
        b1: next(),
        w2: next(),
        b2: next(),
        w3: next(),
        b3: next(),
    };
    let s = model.shape();
    let consistent = model.b1.cols() == s.hidden
        && model.w2.cols() == s.hidden
        && model.b2.cols() == s.embed
        && model.w3.cols() == s.embed
        && model.b3.cols() == s.classes
        && [&model.b1, &model.b2, &model.b3]
            .iter()
            .all(|b| b.rows() == 1);
    if !consistent {
        return Err(format_err(format!(
            "{}: inconsistent layer shapes",
            dir.display()
        )));
    }
    Ok(model)
}

/// Centroids as a `classes × d` tensor plus a count vector, labels `0..classes`.
pub fn save_centroids(dir: &Path, table: &CentroidTable) -> Result<(), IoError> {
    let d = table.iter().next().map(|(_, v)| v.dim()).unwrap_or(0);
    let mut data = Vec::with_capacity(table.len() * d);
    let mut counts = Vec::with_capacity(table.len());
    for (i, (label, v)) in table.iter().enumerate() {
        if label as usize != i {
            return Err(format_err("centroid labels must be 0..classes"));
        }
        data.extend_from_slice(v.as_slice());
        counts.push(table.count(label) as f32);
    }
    write_tensor(
        &dir.join("centroids.bin"),
        &Tensor::new(vec![table.len(), d], data)?,
    )?;
    write_tensor(
        &dir.join("centroid_counts.bin"),
        &Tensor::new(vec![counts.len()], counts)?,
    )
}

pub fn load_centroids(dir: &Path) -> Result<Option<CentroidTable>, IoError> {
    let path = dir.join("centroids.bin");
    if !path.exists() {
        return Ok(None);
    }
    let m = read_tensor(&path)?.to_matrix()?;
    let counts = read_tensor(&dir.join("centroid_counts.bin"))?;
    if counts.dims != [m.rows()] {
        return Err(format_err("centroid counts do not match centroids"));
    }
    let mut centroids = BTreeMap::new();
    let mut tallies = BTreeMap::new();
    for i in 0..m.rows() {
        let v = Vector::new(m.row(i).to_vec()).map_err(|e| format_err(e.to_string()))?;
        centroids.insert(i as u32, v);
        tallies.insert(i as u32, counts.data[i] as usize);
    }
    Ok(Some(CentroidTable::from_parts(centroids, tallies)))
}

fn category_name(c: Option<MaskCategory>) -> &'static str {
    c.map_or("mixed", MaskCategory::name)
}

/// Writes manifest, tensors, per-sample table and split.
pub fn save_dataset(dir: &Path, ds: &SyntheticIdentityDataset) -> Result<(), IoError> {
    create_dir(dir)?;
    let c = &ds.config;
    let (h, w) = (c.raster_side, c.raster_side);
    let ch = ds.samples.first().map_or(1, |s| s.clean().channels());
    let n = ds.samples.len();
    let manifest = vec![
        ("format", "relkd-dataset".to_owned()),
        ("version", "1".to_owned()),
        ("num_identities", c.num_identities.to_string()),
        ("samples_per_identity", c.samples_per_identity.to_string()),
        ("embed_dim", c.embed_dim.to_string()),
        ("raster_side", c.raster_side.to_string()),
        ("channels", ch.to_string()),
        ("noise_sigma", c.noise_sigma.to_string()),
        ("mask_category", category_name(c.mask_category).to_owned()),
        ("mask_coverage", c.mask_coverage.to_string()),
        ("mask_flip", c.mask_flip.to_string()),
        ("mask_shift", c.mask_shift.to_string()),
        ("seed", c.seed.to_string()),
        ("affine_offset", ds.affine_offset.to_string()),
        ("affine_span", ds.affine_span.to_string()),
        ("samples", n.to_string()),
        ("train", ds.train.len().to_string()),
        ("eval", ds.eval.len().to_string()),
    ];
    let manifest: Vec<(String, String)> = manifest
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect();
    write_key_values(&dir.join("manifest.txt"), &manifest)?;
    write_tensor(&dir.join("anchors.bin"), &Tensor::from_matrix(&ds.anchors))?;
    write_tensor(
        &dir.join("render_map.bin"),
        &Tensor::from_matrix(&ds.render_map),
    )?;

    let mut clean = Vec::with_capacity(n * h * w * ch);
    let mut masked = Vec::with_capacity(n * h * w * ch);
    let mut masks = Vec::with_capacity(n * h * w);
    for s in &ds.samples {
        clean.extend_from_slice(s.clean().pixels());
        masked.extend_from_slice(s.masked.masked.pixels());
        masks.extend(
            s.masked
                .mask
                .bits()
                .iter()
                .map(|&b| if b { 1.0f32 } else { 0.0 }),
        );
    }
    write_tensor(
        &dir.join("clean.bin"),
        &Tensor::new(vec![n, h, w, ch], clean)?,
    )?;
    write_tensor(
        &dir.join("masked.bin"),
        &Tensor::new(vec![n, h, w, ch], masked)?,
    )?;
    write_tensor(&dir.join("masks.bin"), &Tensor::new(vec![n, h, w], masks)?)?;

    let mut split = vec!["train"; n];
    for &i in &ds.eval {
        split[i] = "eval";
    }
    let rows: Vec<Vec<String>> = ds
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            vec![
                i.to_string(),
                s.label.to_string(),
                split[i].to_owned(),
                s.masked.mask.coverage().to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("samples.csv"),
        &["index", "label", "split", "coverage"],
        &rows,
    )
}

fn manifest_get<'a>(m: &'a [(String, String)], key: &str) -> Result<&'a str, IoError> {
    m.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| format_err(format!("manifest lacks `{key}`")))
}

fn manifest_parse<T: std::str::FromStr>(m: &[(String, String)], key: &str) -> Result<T, IoError> {
    let v = manifest_get(m, key)?;
    v.parse()
        .map_err(|_| format_err(format!("manifest `{key}` has bad value `{v}`")))
}

pub fn load_dataset(dir: &Path) -> Result<SyntheticIdentityDataset, IoError> {
    let m = read_key_values(&dir.join("manifest.txt"))?;
    if manifest_get(&m, "format")? != "relkd-dataset" {
        return Err(format_err(format!(
            "{}: not a dataset directory",
            dir.display()
        )));
    }
    let category = match manifest_get(&m, "mask_category")? {
        "mixed" => None,
        s => Some(
            MaskCategory::parse(s)
                .ok_or_else(|| format_err(format!("unknown mask category `{s}`")))?,
        ),
    };
    let config = DatasetConfig {
        num_identities: manifest_parse(&m, "num_identities")?,
        samples_per_identity: manifest_parse(&m, "samples_per_identity")?,
        embed_dim: manifest_parse(&m, "embed_dim")?,
        raster_side: manifest_parse(&m, "raster_side")?,
        noise_sigma: manifest_parse(&m, "noise_sigma")?,
        mask_category: category,
        mask_coverage: manifest_parse(&m, "mask_coverage")?,
        mask_flip: manifest_parse(&m, "mask_flip")?,
        mask_shift: manifest_parse(&m, "mask_shift")?,
        seed: manifest_parse(&m, "seed")?,
    };
    let n: usize = manifest_parse(&m, "samples")?;
    let ch: usize = manifest_parse(&m, "channels")?;
    let side = config.raster_side;
    let px = side * side;

    let clean = read_tensor(&dir.join("clean.bin"))?;
    let masked = read_tensor(&dir.join("masked.bin"))?;
    let masks = read_tensor(&dir.join("masks.bin"))?;
    if clean.dims != [n, side, side, ch]
        || masked.dims != clean.dims
        || masks.dims != [n, side, side]
    {
        return Err(format_err("sample tensors do not match the manifest"));
    }
    let (_, rows) = read_csv(&dir.join("samples.csv"))?;
    if rows.len() != n {
        return Err(format_err(
            "samples.csv row count does not match the manifest",
        ));
    }
    let bad = |e: crate::occlusion::OcclusionError| format_err(e.to_string());
    let mut samples = Vec::with_capacity(n);
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let label: u32 = row
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(format!("samples.csv row {i}: bad label")))?;
        match row.get(2).map(String::as_str) {
            Some("train") => train.push(i),
            Some("eval") => eval.push(i),
            _ => return Err(format_err(format!("samples.csv row {i}: bad split"))),
        }
        let img = |t: &Tensor| t.data[i * px * ch..(i + 1) * px * ch].to_vec();
        let bits = masks.data[i * px..(i + 1) * px]
            .iter()
            .map(|&b| b != 0.0)
            .collect();
        samples.push(Sample {
            label,
            masked: MaskedSample {
                original: Raster::new(side, side, ch, img(&clean)).map_err(bad)?,
                masked: Raster::new(side, side, ch, img(&masked)).map_err(bad)?,
                mask: BinaryMask::new(side, side, bits).map_err(bad)?,
            },
        });
    }
    Ok(SyntheticIdentityDataset {
        anchors: read_tensor(&dir.join("anchors.bin"))?.to_matrix()?,
        render_map: read_tensor(&dir.join("render_map.bin"))?.to_matrix()?,
        affine_offset: manifest_parse(&m, "affine_offset")?,
        affine_span: manifest_parse(&m, "affine_span")?,
        config,
        samples,
        train,
        eval,
    })
}

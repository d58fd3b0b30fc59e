//! Activation matrices, class labels, and the on-disk formats they travel in.
//!
//! The binary `SELA` container is unit-major so that a per-unit scan is one
//! sequential read. Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SELA"
//! 4       1     version (0x01 = activation matrix, 0x02 = spatial map records)
//! 5       3     reserved, must be zero
//! 8       4     n_units   (u32)
//! 12      4     n_images  (u32)
//! 16      ...   version 1: n_units * n_images f32 values, unit-major
//!               version 2: per record, h (u32), w (u32), then n_images * h * w f32
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SELA";
pub const VERSION_MATRIX: u8 = 0x01;
pub const VERSION_MAPS: u8 = 0x02;
pub const HEADER_LEN: u64 = 16;

/// Input encodings accepted by [`load_activations`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActivationFormat {
    Binary,
    Csv,
}

impl std::str::FromStr for ActivationFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "binary-v1" | "sela" => Ok(ActivationFormat::Binary),
            "csv" => Ok(ActivationFormat::Csv),
            other => Err(Error::InvalidParameter(format!("unknown activation format '{other}'"))),
        }
    }
}

/// Dense unit x image activation matrix, stored unit-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationDataset {
    n_units: usize,
    n_images: usize,
    data: Vec<f32>,
}

impl ActivationDataset {
    /// Builds a dataset from unit-major values, rejecting non-finite entries
    /// and empty shapes.
    pub fn new(n_units: usize, n_images: usize, data: Vec<f32>) -> Result<Self> {
        if n_units == 0 || n_images == 0 {
            return Err(Error::Degenerate(format!(
                "shape {n_units}x{n_images} has no activations"
            )));
        }
        if data.len() != n_units * n_images {
            return Err(Error::Shape(format!(
                "{} values for a {n_units}x{n_images} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                unit: pos / n_images,
                image: pos % n_images,
                value: data[pos],
            });
        }
        Ok(Self {
            n_units,
            n_images,
            data,
        })
    }

    pub fn from_units(units: &[Vec<f32>]) -> Result<Self> {
        let n_images = units.first().map_or(0, Vec::len);
        if let Some(bad) = units.iter().position(|u| u.len() != n_images) {
            return Err(Error::Shape(format!(
                "unit {bad} has {} images, expected {n_images}",
                units[bad].len()
            )));
        }
        Self::new(units.len(), n_images, units.concat())
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_images(&self) -> usize {
        self.n_images
    }

    /// The activation vector for one unit, borrowed.
    pub fn unit(&self, unit: usize) -> Result<&[f32]> {
        if unit >= self.n_units {
            return Err(Error::UnitOutOfRange {
                unit,
                n_units: self.n_units,
            });
        }
        Ok(&self.data[unit * self.n_images..(unit + 1) * self.n_images])
    }

    pub fn get(&self, unit: usize, image: usize) -> Option<f32> {
        (unit < self.n_units && image < self.n_images).then(|| self.data[unit * self.n_images + image])
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// One unit's activations, copied out of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitActivations {
    pub unit_id: usize,
    pub values: Vec<f32>,
}

impl UnitActivations {
    pub fn new(unit_id: usize, values: Vec<f32>) -> Self {
        Self { unit_id, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn slice_unit(dataset: &ActivationDataset, unit: usize) -> Result<UnitActivations> {
    Ok(UnitActivations::new(unit, dataset.unit(unit)?.to_vec()))
}

/// Image to class assignment.
///
/// Classes are held in dense slots `0..n_classes` ordered by ascending
/// external class id. After [`filter_correct`] some external ids may be
/// missing, so slots and ids can differ; every slot has at least one image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassIndex {
    class_of: Vec<u32>,
    counts: Vec<u32>,
    ids: Vec<u32>,
    names: Vec<Option<String>>,
}

impl ClassIndex {
    /// Builds an index from per-image external class ids. Classes are the
    /// distinct ids present; names default to none.
    pub fn from_class_ids(class_ids: &[u32]) -> Result<Self> {
        let names: BTreeMap<u32, Option<String>> = class_ids.iter().map(|&c| (c, None)).collect();
        Self::from_parts(class_ids, names)
    }

    fn from_parts(class_ids: &[u32], names: BTreeMap<u32, Option<String>>) -> Result<Self> {
        if class_ids.is_empty() {
            return Err(Error::Degenerate("label set has no images".into()));
        }
        let ids: Vec<u32> = names.keys().copied().collect();
        let slot_of = |id: u32| ids.binary_search(&id).expect("id present") as u32;
        let class_of: Vec<u32> = class_ids.iter().map(|&c| slot_of(c)).collect();
        let mut counts = vec![0u32; ids.len()];
        for &s in &class_of {
            counts[s as usize] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyClass { class: ids[empty] });
        }
        Ok(Self {
            class_of,
            counts,
            ids,
            names: names.into_values().collect(),
        })
    }

    pub fn n_images(&self) -> usize {
        self.class_of.len()
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    /// Dense class slot of an image.
    #[inline]
    pub fn slot(&self, image: usize) -> usize {
        self.class_of[image] as usize
    }

    pub fn slots(&self) -> &[u32] {
        &self.class_of
    }

    /// External class id of a slot.
    #[inline]
    pub fn class_id(&self, slot: usize) -> u32 {
        self.ids[slot]
    }

    /// External class id of an image.
    pub fn class_of(&self, image: usize) -> u32 {
        self.ids[self.slot(image)]
    }

    pub fn count(&self, slot: usize) -> usize {
        self.counts[slot] as usize
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn name(&self, slot: usize) -> Option<&str> {
        self.names[slot].as_deref()
    }

    pub fn slot_of_id(&self, class_id: u32) -> Option<usize> {
        self.ids.binary_search(&class_id).ok()
    }

    /// Heap bytes held by the index; used for memory budgeting.
    pub fn heap_bytes(&self) -> usize {
        self.class_of.capacity() * 4
            + self.counts.capacity() * 4
            + self.ids.capacity() * 4
            + self.names.capacity() * std::mem::size_of::<Option<String>>()
            + self.names.iter().flatten().map(String::capacity).sum::<usize>()
    }

    /// Checks that the index describes exactly the images of `dataset`.
    pub fn check_against(&self, dataset: &ActivationDataset) -> Result<()> {
        if self.n_images() != dataset.n_images() {
            return Err(Error::Shape(format!(
                "labels cover {} images, activations have {}",
                self.n_images(),
                dataset.n_images()
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// binary container

fn write_header(w: &mut impl Write, version: u8, n_units: usize, n_images: usize) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[version, 0, 0, 0])?;
    w.write_all(&(n_units as u32).to_le_bytes())?;
    w.write_all(&(n_images as u32).to_le_bytes())
}

fn dims_to_u32(what: &str, n: usize) -> Result<()> {
    if n > u32::MAX as usize {
        return Err(Error::InvalidParameter(format!("{what} {n} exceeds the u32 header field")));
    }
    Ok(())
}

/// Reads and validates a header, returning (version, n_units, n_images).
fn read_header(r: &mut impl Read, expect_version: u8) -> Result<(usize, usize)> {
    let mut buf = [0u8; HEADER_LEN as usize];
    let got = read_fully(r, &mut buf).map_err(|e| Error::BadHeader {
        offset: 0,
        reason: e.to_string(),
    })?;
    if got < buf.len() {
        return Err(Error::BadHeader {
            offset: got as u64,
            reason: format!("header needs {HEADER_LEN} bytes, file has {got}"),
        });
    }
    if &buf[0..4] != MAGIC {
        return Err(Error::BadHeader {
            offset: 0,
            reason: "missing SELA magic".into(),
        });
    }
    if buf[4] != expect_version {
        return Err(Error::BadHeader {
            offset: 4,
            reason: format!("version {:#04x}, expected {:#04x}", buf[4], expect_version),
        });
    }
    if let Some(i) = buf[5..8].iter().position(|&b| b != 0) {
        return Err(Error::BadHeader {
            offset: 5 + i as u64,
            reason: "reserved byte is not zero".into(),
        });
    }
    let n_units = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let n_images = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
    if n_units == 0 || n_images == 0 {
        return Err(Error::BadHeader {
            offset: 8,
            reason: format!("degenerate shape {n_units}x{n_images}"),
        });
    }
    Ok((n_units, n_images))
}

/// Like `read_exact`, but reports how much was read before EOF.
fn read_fully(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

fn ensure_eof(r: &mut impl Read, offset: u64) -> Result<()> {
    let mut probe = [0u8; 1];
    match read_fully(r, &mut probe) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::BadHeader {
            offset,
            reason: "trailing bytes after payload".into(),
        }),
        Err(e) => Err(Error::BadHeader {
            offset,
            reason: e.to_string(),
        }),
    }
}

/// Streaming writer for the version 1 container; units are appended in order.
pub struct ActivationWriter {
    out: BufWriter<File>,
    path: PathBuf,
    n_images: usize,
    remaining: usize,
}

impl ActivationWriter {
    pub fn create(path: impl AsRef<Path>, n_units: usize, n_images: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if n_units == 0 || n_images == 0 {
            return Err(Error::Degenerate(format!(
                "shape {n_units}x{n_images} has no activations"
            )));
        }
        dims_to_u32("n_units", n_units)?;
        dims_to_u32("n_images", n_images)?;
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::with_capacity(1 << 16, file);
        write_header(&mut out, VERSION_MATRIX, n_units, n_images).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out,
            path,
            n_images,
            remaining: n_units,
        })
    }

    pub fn write_unit(&mut self, values: &[f32]) -> Result<()> {
        if self.remaining == 0 {
            return Err(Error::Shape("more units written than declared".into()));
        }
        if values.len() != self.n_images {
            return Err(Error::Shape(format!(
                "unit has {} values, expected {}",
                values.len(),
                self.n_images
            )));
        }
        write_f32s(&mut self.out, values).map_err(|e| Error::io(&self.path, e))?;
        self.remaining -= 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.remaining != 0 {
            return Err(Error::Shape(format!("{} declared units never written", self.remaining)));
        }
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn write_f32s(w: &mut impl Write, values: &[f32]) -> std::io::Result<()> {
    let mut chunk = [0u8; 4096];
    for block in values.chunks(chunk.len() / 4) {
        for (dst, v) in chunk.chunks_exact_mut(4).zip(block) {
            dst.copy_from_slice(&v.to_le_bytes());
        }
        w.write_all(&chunk[..block.len() * 4])?;
    }
    Ok(())
}

pub fn write_activations(dataset: &ActivationDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = ActivationWriter::create(path, dataset.n_units, dataset.n_images)?;
    for unit in dataset.data.chunks_exact(dataset.n_images) {
        w.write_unit(unit)?;
    }
    w.finish()
}

/// Sequential unit-by-unit reader over a version 1 container.
pub struct ActivationReader {
    src: BufReader<File>,
    n_units: usize,
    n_images: usize,
    next: usize,
}

impl ActivationReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut src = BufReader::with_capacity(1 << 16, file);
        let (n_units, n_images) = read_header(&mut src, VERSION_MATRIX)?;
        Ok(Self {
            src,
            n_units,
            n_images,
            next: 0,
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_images(&self) -> usize {
        self.n_images
    }

    /// Index of the unit the next read will return.
    pub fn position(&self) -> usize {
        self.next
    }

    fn unit_offset(&self, unit: usize) -> u64 {
        HEADER_LEN + (unit as u64) * (self.n_images as u64) * 4
    }

    /// Reads the next unit's raw little-endian payload into `dst`, which must
    /// be exactly `4 * n_images` bytes. Returns the unit index, or `None`
    /// once every unit has been read.
    pub fn read_unit_bytes(&mut self, dst: &mut [u8]) -> Result<Option<usize>> {
        if self.next == self.n_units {
            let end = self.unit_offset(self.n_units);
            ensure_eof(&mut self.src, end)?;
            return Ok(None);
        }
        assert_eq!(dst.len(), self.n_images * 4, "unit buffer size");
        let offset = self.unit_offset(self.next);
        let got = read_fully(&mut self.src, dst).map_err(|e| Error::BadHeader {
            offset,
            reason: e.to_string(),
        })?;
        if got < dst.len() {
            return Err(Error::Truncated {
                offset: offset + got as u64,
                expected: self.unit_offset(self.n_units),
                found: offset + got as u64,
            });
        }
        let unit = self.next;
        self.next += 1;
        Ok(Some(unit))
    }

    /// Reads the next unit as decoded, validated values.
    pub fn read_unit(&mut self, values: &mut Vec<f32>) -> Result<Option<usize>> {
        let mut raw = vec![0u8; self.n_images * 4];
        let Some(unit) = self.read_unit_bytes(&mut raw)? else {
            return Ok(None);
        };
        values.clear();
        for (image, b) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(b.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFinite { unit, image, value: v });
            }
            values.push(v);
        }
        Ok(Some(unit))
    }

    /// Skips the next unit without decoding it.
    pub fn skip_unit(&mut self) -> Result<()> {
        let mut sink = std::io::sink();
        let want = self.n_images as u64 * 4;
        let offset = self.unit_offset(self.next);
        let got = std::io::copy(&mut (&mut self.src).take(want), &mut sink).map_err(|e| Error::BadHeader {
            offset,
            reason: e.to_string(),
        })?;
        if got < want {
            return Err(Error::Truncated {
                offset: offset + got,
                expected: self.unit_offset(self.n_units),
                found: offset + got,
            });
        }
        self.next += 1;
        Ok(())
    }
}

pub fn load_activations(path: impl AsRef<Path>, format: ActivationFormat) -> Result<ActivationDataset> {
    match format {
        ActivationFormat::Binary => load_binary(path.as_ref()),
        ActivationFormat::Csv => load_csv(path.as_ref()),
    }
}

fn load_binary(path: &Path) -> Result<ActivationDataset> {
    let mut reader = ActivationReader::open(path)?;
    let (n_units, n_images) = (reader.n_units, reader.n_images);
    let mut data = Vec::with_capacity(n_units * n_images);
    let mut unit = Vec::with_capacity(n_images);
    while reader.read_unit(&mut unit)?.is_some() {
        data.extend_from_slice(&unit);
    }
    ActivationDataset::new(n_units, n_images, data)
}

/// CSV records with their 1-based line numbers. Headers are left to the
/// caller since some tables make them optional.
pub(crate) fn csv_records(path: &Path) -> Result<Vec<(usize, csv::StringRecord)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        out.push((line, record));
    }
    Ok(out)
}

pub(crate) fn parse_field<T: std::str::FromStr>(record: &csv::StringRecord, at: usize, line: usize, name: &str) -> Result<T> {
    let raw = record.get(at).ok_or_else(|| Error::Parse {
        line,
        reason: format!("missing {name}"),
    })?;
    raw.parse().map_err(|_| Error::Parse {
        line,
        reason: format!("bad {name} '{raw}'"),
    })
}

/// Long-form CSV: `unit,image,value` rows (optional header) covering every
/// cell of a dense matrix exactly once.
fn load_csv(path: &Path) -> Result<ActivationDataset> {
    let mut cells: Vec<(usize, usize, f32, usize)> = Vec::new();
    for (i, (line, record)) in csv_records(path)?.into_iter().enumerate() {
        if i == 0 && record.get(0) == Some("unit") {
            continue;
        }
        if record.len() != 3 {
            return Err(Error::Parse {
                line,
                reason: "expected 3 fields".into(),
            });
        }
        let unit: usize = parse_field(&record, 0, line, "unit")?;
        let image: usize = parse_field(&record, 1, line, "image")?;
        let value: f32 = parse_field(&record, 2, line, "value")?;
        if !value.is_finite() {
            return Err(Error::NonFinite { unit, image, value });
        }
        cells.push((unit, image, value, line));
    }
    let n_units = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
    let n_images = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
    if n_units == 0 || n_images == 0 {
        return Err(Error::Degenerate("csv has no activation rows".into()));
    }
    let mut data = vec![0.0f32; n_units * n_images];
    let mut seen = vec![false; n_units * n_images];
    for &(unit, image, value, line) in &cells {
        let at = unit * n_images + image;
        if std::mem::replace(&mut seen[at], true) {
            return Err(Error::Parse {
                line,
                reason: format!("duplicate cell unit {unit}, image {image}"),
            });
        }
        data[at] = value;
    }
    if let Some(at) = seen.iter().position(|s| !s) {
        return Err(Error::Shape(format!(
            "csv matrix missing cell unit {}, image {}",
            at / n_images,
            at % n_images
        )));
    }
    ActivationDataset::new(n_units, n_images, data)
}

/// Reads `image_id,<id column>[,<extra>]` rows into a dense per-image vector.
fn load_image_table(path: &Path, id_column: &str) -> Result<Vec<(u32, Option<String>)>> {
    let mut records = csv_records(path)?.into_iter();
    match records.next() {
        Some((_, h)) if h.get(0) == Some("image_id") && h.get(1) == Some(id_column) => {}
        Some((line, h)) => {
            return Err(Error::Parse {
                line,
                reason: format!(
                    "expected header 'image_id,{id_column}', found '{}'",
                    h.iter().collect::<Vec<_>>().join(",")
                ),
            })
        }
        None => return Err(Error::Degenerate(format!("{} is empty", path.display()))),
    }
    let mut rows: Vec<Option<(u32, Option<String>)>> = Vec::new();
    for (line, record) in records {
        let image: usize = parse_field(&record, 0, line, "image_id")?;
        let class: u32 = parse_field(&record, 1, line, id_column)?;
        let extra = record.get(2).map(str::to_string).filter(|s| !s.is_empty());
        if image >= rows.len() {
            rows.resize(image + 1, None);
        }
        if rows[image].is_some() {
            return Err(Error::DuplicateImage { image, line });
        }
        rows[image] = Some((class, extra));
    }
    if rows.is_empty() {
        return Err(Error::Degenerate(format!("{} has no rows", path.display())));
    }
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| r.ok_or(Error::ImageGap { missing: i }))
        .collect()
}

/// Loads `image_id,class_id[,class_name]`. Class ids must be dense
/// `0..n_classes` with every class populated.
pub fn load_labels(path: impl AsRef<Path>) -> Result<ClassIndex> {
    let rows = load_image_table(path.as_ref(), "class_id")?;
    let max_class = rows.iter().map(|r| r.0).max().unwrap_or(0);
    let mut names: BTreeMap<u32, Option<String>> = (0..=max_class).map(|c| (c, None)).collect();
    for (class, name) in &rows {
        let slot = names.get_mut(class).expect("bounded by max");
        match (slot.as_ref(), name) {
            (None, Some(n)) => *slot = Some(n.clone()),
            (Some(old), Some(n)) if old != n => {
                return Err(Error::Parse {
                    line: 0,
                    reason: format!("class {class} named both '{old}' and '{n}'"),
                })
            }
            _ => {}
        }
    }
    let ids: Vec<u32> = rows.iter().map(|r| r.0).collect();
    ClassIndex::from_parts(&ids, names)
}

pub fn write_labels(labels: &ClassIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = csv::Writer::from_path(path).map_err(|e| into_io(path, e))?;
    let named = labels.names.iter().any(Option::is_some);
    let mut run = || -> std::result::Result<(), csv::Error> {
        if named {
            out.write_record(["image_id", "class_id", "class_name"])?;
        } else {
            out.write_record(["image_id", "class_id"])?;
        }
        for image in 0..labels.n_images() {
            let slot = labels.slot(image);
            let (image, id) = (image.to_string(), labels.ids[slot].to_string());
            if named {
                out.write_record([image.as_str(), &id, labels.name(slot).unwrap_or("")])?;
            } else {
                out.write_record([image, id])?;
            }
        }
        out.flush()?;
        Ok(())
    };
    run().map_err(|e| into_io(path, e))
}

pub(crate) fn into_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

/// Loads `image_id,predicted_class_id`, one row per image.
pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    Ok(load_image_table(path.as_ref(), "predicted_class_id")?
        .into_iter()
        .map(|r| r.0)
        .collect())
}

/// Keeps only the images whose prediction equals their label. Surviving
/// images are renumbered densely in their original order.
pub fn filter_correct(
    dataset: &ActivationDataset,
    labels: &ClassIndex,
    predictions: &[u32],
) -> Result<(ActivationDataset, ClassIndex)> {
    labels.check_against(dataset)?;
    if predictions.len() != dataset.n_images() {
        return Err(Error::Shape(format!(
            "{} predictions for {} images",
            predictions.len(),
            dataset.n_images()
        )));
    }
    let keep: Vec<usize> = (0..dataset.n_images())
        .filter(|&i| predictions[i] == labels.class_of(i))
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyFilter);
    }
    let mut data = Vec::with_capacity(keep.len() * dataset.n_units());
    for unit in dataset.data.chunks_exact(dataset.n_images()) {
        data.extend(keep.iter().map(|&i| unit[i]));
    }
    let kept_ids: Vec<u32> = keep.iter().map(|&i| labels.class_of(i)).collect();
    let names: BTreeMap<u32, Option<String>> = kept_ids
        .iter()
        .map(|&id| (id, labels.name(labels.slot_of_id(id).unwrap()).map(str::to_string)))
        .collect();
    Ok((
        ActivationDataset::new(dataset.n_units(), keep.len(), data)?,
        ClassIndex::from_parts(&kept_ids, names)?,
    ))
}

// ---------------------------------------------------------------------------
// version 2: spatial map records

/// One record of a version 2 file: `n_images` grids of `height x width`,
/// row-major, concatenated in image order.
#[derive(Clone, Debug, PartialEq)]
pub struct GridRecord {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl GridRecord {
    pub fn n_images(&self) -> usize {
        let cells = self.height * self.width;
        self.values.len().checked_div(cells).unwrap_or(0)
    }

    pub fn grid(&self, image: usize) -> &[f32] {
        let cells = self.height * self.width;
        &self.values[image * cells..(image + 1) * cells]
    }
}

pub fn write_grid_records(records: &[GridRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let n_images = records.first().map_or(0, GridRecord::n_images);
    if records.is_empty() || n_images == 0 {
        return Err(Error::Degenerate("no grid records to write".into()));
    }
    for (i, r) in records.iter().enumerate() {
        if r.height == 0 || r.width == 0 || r.values.len() != n_images * r.height * r.width {
            return Err(Error::Shape(format!("record {i} does not hold {n_images} grids")));
        }
    }
    dims_to_u32("n_units", records.len())?;
    dims_to_u32("n_images", n_images)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let run = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        write_header(out, VERSION_MAPS, records.len(), n_images)?;
        for r in records {
            out.write_all(&(r.height as u32).to_le_bytes())?;
            out.write_all(&(r.width as u32).to_le_bytes())?;
            write_f32s(out, &r.values)?;
        }
        out.flush()
    };
    run(&mut out).map_err(|e| Error::io(path, e))
}

pub fn load_grid_records(path: impl AsRef<Path>) -> Result<Vec<GridRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut src = BufReader::new(file);
    let (n_records, n_images) = read_header(&mut src, VERSION_MAPS)?;
    let mut offset = HEADER_LEN;
    let mut records = Vec::with_capacity(n_records);
    for unit in 0..n_records {
        let mut dims = [0u8; 8];
        let got = read_fully(&mut src, &mut dims).map_err(|e| Error::io(path, e))?;
        if got < 8 {
            return Err(Error::Truncated {
                offset: offset + got as u64,
                expected: offset + 8,
                found: offset + got as u64,
            });
        }
        let height = u32::from_le_bytes(dims[0..4].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(dims[4..8].try_into().unwrap()) as usize;
        if height == 0 || width == 0 {
            return Err(Error::BadHeader {
                offset,
                reason: format!("record {unit} has empty grid {height}x{width}"),
            });
        }
        offset += 8;
        let n = n_images * height * width;
        let mut raw = vec![0u8; n * 4];
        let got = read_fully(&mut src, &mut raw).map_err(|e| Error::io(path, e))?;
        if got < raw.len() {
            return Err(Error::Truncated {
                offset: offset + got as u64,
                expected: offset + raw.len() as u64,
                found: offset + got as u64,
            });
        }
        let mut values = Vec::with_capacity(n);
        for (i, b) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(b.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    unit,
                    image: i / (height * width),
                    value: v,
                });
            }
            values.push(v);
        }
        offset += raw.len() as u64;
        records.push(GridRecord { height, width, values });
    }
    ensure_eof(&mut src, offset)?;
    Ok(records)
}

//! Line-delimited JSON datasets.
//!
//! Line 1 is a header object with fields `format_version`, `s`, `c`, `f` and `vocab`. Every
//! further line is one sample with fields, in order: `id`, `point`, `heading`, `time_of_day`,
//! `latitude`, `longitude`, `grid` (sparse `[row, col, class, value]` entries in memory order),
//! `frame` and, for evaluation sets, `ground_truth` (`[row, col, class]` triples).

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use cadnet_core::grid::{CellRef, ClassVocabulary, ContextRecord, DetectionGrid, Sample};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{create, open, IoError, IoResult};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub s: usize,
    pub c: usize,
    pub f: usize,
    pub vocab: Vec<String>,
}

impl Header {
    pub fn new(s: usize, f: usize, vocab: &ClassVocabulary) -> Self {
        Header { format_version: FORMAT_VERSION, s, c: vocab.len(), f, vocab: vocab.0.clone() }
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: u64,
    point: String,
    heading: u16,
    time_of_day: f64,
    latitude: f64,
    longitude: f64,
    grid: Vec<(u16, u16, u16, f32)>,
    frame: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<Vec<(u16, u16, u16)>>,
}

fn to_record(s: &Sample) -> Record {
    Record {
        id: s.id,
        point: s.monitoring_point_id.clone(),
        heading: s.heading,
        time_of_day: s.context.time_of_day,
        latitude: s.context.latitude,
        longitude: s.context.longitude,
        grid: s.grid.nonzero().map(|(r, c, k, v)| (r as u16, c as u16, k as u16, v)).collect(),
        frame: s.context.frame_activation.clone(),
        ground_truth: s.ground_truth.as_ref().map(|g| g.iter().map(|c| (c.row, c.col, c.class)).collect()),
    }
}

fn from_record(r: Record, h: &Header) -> cadnet_core::Result<Sample> {
    let mut grid = DetectionGrid::empty(h.s, h.c);
    for (row, col, class, v) in r.grid {
        grid.set(row as usize, col as usize, class as usize, v)?;
    }
    let sample = Sample {
        id: r.id,
        monitoring_point_id: r.point,
        heading: r.heading,
        grid,
        context: ContextRecord {
            time_of_day: r.time_of_day,
            latitude: r.latitude,
            longitude: r.longitude,
            frame_activation: r.frame,
        },
        ground_truth: r.ground_truth.map(|g| g.into_iter().map(|(row, col, class)| CellRef { row, col, class }).collect()),
    };
    sample.validate(h.f)?;
    Ok(sample)
}

pub struct DatasetWriter<W: Write> {
    out: W,
    header: Header,
}

impl<W: Write> DatasetWriter<W> {
    pub fn new(mut out: W, header: Header) -> IoResult<Self> {
        serde_json::to_writer(&mut out, &header).map_err(|e| IoError::Format(e.to_string()))?;
        out.write_all(b"\n")?;
        Ok(DatasetWriter { out, header })
    }

    pub fn write(&mut self, s: &Sample) -> IoResult<()> {
        let h = &self.header;
        if s.grid.size() != h.s || s.grid.classes() != h.c {
            return Err(IoError::Format(format!("sample {} does not match the {}x{}x{} header", s.id, h.s, h.s, h.c)));
        }
        s.validate(h.f)?;
        serde_json::to_writer(&mut self.out, &to_record(s)).map_err(|e| IoError::Format(e.to_string()))?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> IoResult<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Streams samples one line at a time.
pub struct DatasetReader<R: BufRead> {
    input: R,
    header: Header,
    line: usize,
    buf: String,
}

impl<R: BufRead> DatasetReader<R> {
    pub fn new(mut input: R) -> IoResult<Self> {
        let mut buf = String::new();
        if input.read_line(&mut buf)? == 0 {
            return Err(IoError::Parse { line: 1, message: "missing header".into() });
        }
        let v: serde_json::Value =
            serde_json::from_str(&buf).map_err(|e| IoError::Parse { line: 1, message: e.to_string() })?;
        let found = v.get("format_version").and_then(|x| x.as_u64());
        match found {
            Some(x) if x == FORMAT_VERSION as u64 => {}
            Some(x) => return Err(IoError::Version { found: x as u32, expected: FORMAT_VERSION }),
            None => return Err(IoError::Parse { line: 1, message: "header has no format_version".into() }),
        }
        let header: Header = serde_json::from_value(v).map_err(|e| IoError::Parse { line: 1, message: e.to_string() })?;
        if header.vocab.len() != header.c {
            return Err(IoError::Parse { line: 1, message: format!("vocab has {} names but c = {}", header.vocab.len(), header.c) });
        }
        buf.clear();
        Ok(DatasetReader { input, header, line: 1, buf })
    }

    pub fn header(&self) -> &Header {
        &self.header
    }
}

impl<R: BufRead> Iterator for DatasetReader<R> {
    type Item = IoResult<Sample>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            self.line += 1;
            match self.input.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            if self.buf.trim().is_empty() {
                continue;
            }
            let line = self.line;
            let parsed = serde_json::from_str::<Record>(&self.buf)
                .map_err(|e| IoError::Parse { line, message: e.to_string() })
                .and_then(|r| from_record(r, &self.header).map_err(|e| IoError::Parse { line, message: e.to_string() }));
            return Some(parsed);
        }
    }
}

pub fn open_dataset(path: &Path) -> IoResult<DatasetReader<BufReader<std::fs::File>>> {
    DatasetReader::new(BufReader::new(open(path)?))
}

pub fn read_dataset(path: &Path) -> IoResult<(Header, Vec<Sample>)> {
    let reader = open_dataset(path)?;
    let header = reader.header().clone();
    let samples = reader.collect::<IoResult<Vec<_>>>()?;
    Ok((header, samples))
}

pub fn write_dataset(path: &Path, header: &Header, samples: &[Sample]) -> IoResult<()> {
    let mut w = DatasetWriter::new(BufWriter::new(create(path)?), header.clone())?;
    for s in samples {
        w.write(s)?;
    }
    w.finish()?;
    Ok(())
}

pub fn to_bytes(header: &Header, samples: &[Sample]) -> IoResult<Vec<u8>> {
    let mut w = DatasetWriter::new(Vec::new(), header.clone())?;
    for s in samples {
        w.write(s)?;
    }
    w.finish()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> IoResult<String> {
    let mut h = Sha256::new();
    let mut r = BufReader::new(open(path)?);
    loop {
        let buf = r.fill_buf()?;
        if buf.is_empty() {
            break;
        }
        h.update(buf);
        let n = buf.len();
        r.consume(n);
    }
    Ok(hex::encode(h.finalize()))
}

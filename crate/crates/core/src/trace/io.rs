use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use xz2::read::XzDecoder;
use xz2::write::XzEncoder;

use super::{TraceError, TraceInstruction, RECORD_SIZE};

const GZIP_MAGIC: &[u8] = &[0x1f, 0x8b];
const XZ_MAGIC: &[u8] = &[0xfd, b'7', b'z', b'X', b'Z', 0x00];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Compression {
    None,
    Gzip,
    Xz,
}

impl Compression {
    /// Picks a container from a file name suffix (`.gz`, `.xz`, anything else raw).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("gz") => Compression::Gzip,
            Some("xz") => Compression::Xz,
            _ => Compression::None,
        }
    }

    fn sniff(head: &[u8]) -> Self {
        if head.starts_with(GZIP_MAGIC) {
            Compression::Gzip
        } else if head.starts_with(XZ_MAGIC) {
            Compression::Xz
        } else {
            Compression::None
        }
    }
}

/// Anything that can feed decoded instructions to a core.
pub trait InstructionSource {
    /// Returns `Ok(None)` at end of stream.
    fn next_instruction(&mut self) -> Result<Option<TraceInstruction>, TraceError>;
}

/// Sequential cursor over a (possibly compressed) trace stream.
pub struct TraceReader {
    inner: Box<dyn Read>,
    origin: String,
    compression: Compression,
    records_read: u64,
}

/// Opens a trace file, detecting the container from its magic bytes.
pub fn open_trace(path: impl AsRef<Path>) -> Result<TraceReader, TraceError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    TraceReader::with_origin(file, path.display().to_string())
}

impl TraceReader {
    /// Wraps an arbitrary byte stream. Compression is sniffed the same way as for files.
    pub fn from_reader(reader: impl Read + 'static) -> Result<Self, TraceError> {
        Self::with_origin(reader, "<stream>".into())
    }

    fn with_origin(reader: impl Read + 'static, origin: String) -> Result<Self, TraceError> {
        let mut buffered = BufReader::with_capacity(1 << 16, reader);
        let head = buffered.fill_buf().map_err(|source| TraceError::Io {
            path: origin.clone(),
            source,
        })?;
        let compression = Compression::sniff(head);
        let inner: Box<dyn Read> = match compression {
            Compression::None => Box::new(buffered),
            Compression::Gzip => Box::new(BufReader::new(MultiGzDecoder::new(buffered))),
            Compression::Xz => Box::new(BufReader::new(XzDecoder::new_multi_decoder(buffered))),
        };
        Ok(TraceReader {
            inner,
            origin,
            compression,
            records_read: 0,
        })
    }

    pub fn compression(&self) -> Compression {
        self.compression
    }

    pub fn records_read(&self) -> u64 {
        self.records_read
    }

    /// Reads exactly one record. A partial trailing record is a corruption.
    pub fn read_next(&mut self) -> Result<Option<TraceInstruction>, TraceError> {
        let mut buf = [0u8; RECORD_SIZE];
        let mut filled = 0;
        while filled < RECORD_SIZE {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(e) => {
                    return Err(match self.compression {
                        Compression::None => TraceError::Io {
                            path: self.origin.clone(),
                            source: e,
                        },
                        _ => TraceError::Corrupt(format!(
                            "{}: decompression failed after {} records: {e}",
                            self.origin, self.records_read
                        )),
                    })
                }
            }
        }
        match filled {
            0 => Ok(None),
            RECORD_SIZE => {
                self.records_read += 1;
                TraceInstruction::from_bytes(&buf).map(Some)
            }
            n => Err(TraceError::Corrupt(format!(
                "{}: truncated record after {} records ({n} trailing bytes)",
                self.origin, self.records_read
            ))),
        }
    }
}

impl InstructionSource for TraceReader {
    fn next_instruction(&mut self) -> Result<Option<TraceInstruction>, TraceError> {
        self.read_next()
    }
}

impl Iterator for TraceReader {
    type Item = Result<TraceInstruction, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.read_next().transpose()
    }
}

/// Writes records, compressing according to the chosen container.
pub struct TraceWriter {
    sink: Sink,
    path: String,
    written: u64,
}

enum Sink {
    Raw(BufWriter<File>),
    Gzip(GzEncoder<BufWriter<File>>),
    Xz(XzEncoder<BufWriter<File>>),
}

impl TraceWriter {
    /// Creates `path`, choosing the container from its extension.
    pub fn create(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let path = path.as_ref();
        Self::create_with(path, Compression::from_path(path))
    }

    pub fn create_with(path: impl AsRef<Path>, compression: Compression) -> Result<Self, TraceError> {
        let path: PathBuf = path.as_ref().into();
        let file = File::create(&path).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let out = BufWriter::new(file);
        let sink = match compression {
            Compression::None => Sink::Raw(out),
            Compression::Gzip => Sink::Gzip(GzEncoder::new(out, flate2::Compression::default())),
            Compression::Xz => Sink::Xz(XzEncoder::new(out, 6)),
        };
        Ok(TraceWriter {
            sink,
            path: path.display().to_string(),
            written: 0,
        })
    }

    pub fn write(&mut self, rec: &TraceInstruction) -> Result<(), TraceError> {
        let bytes = rec.to_bytes();
        let res = match &mut self.sink {
            Sink::Raw(w) => w.write_all(&bytes),
            Sink::Gzip(w) => w.write_all(&bytes),
            Sink::Xz(w) => w.write_all(&bytes),
        };
        res.map_err(|source| self.io_error(source))?;
        self.written += 1;
        Ok(())
    }

    /// Flushes and closes the container. Returns the number of records written.
    pub fn finish(self) -> Result<u64, TraceError> {
        let path = self.path;
        let err = |source| TraceError::Io {
            path: path.clone(),
            source,
        };
        match self.sink {
            Sink::Raw(mut w) => w.flush().map_err(err)?,
            Sink::Gzip(w) => w.finish().and_then(|mut w| w.flush()).map_err(err)?,
            Sink::Xz(w) => w.finish().and_then(|mut w| w.flush()).map_err(err)?,
        }
        Ok(self.written)
    }

    fn io_error(&self, source: std::io::Error) -> TraceError {
        TraceError::Io {
            path: self.path.clone(),
            source,
        }
    }
}

/// In-memory instruction source, optionally replaying from the start when exhausted.
#[derive(Debug, Clone)]
pub struct VecSource {
    records: Vec<TraceInstruction>,
    pos: usize,
    looping: bool,
}

impl VecSource {
    pub fn new(records: Vec<TraceInstruction>) -> Self {
        VecSource {
            records,
            pos: 0,
            looping: false,
        }
    }

    pub fn looping(records: Vec<TraceInstruction>) -> Self {
        VecSource {
            records,
            pos: 0,
            looping: true,
        }
    }
}

impl InstructionSource for VecSource {
    fn next_instruction(&mut self) -> Result<Option<TraceInstruction>, TraceError> {
        if self.pos == self.records.len() {
            if !self.looping || self.records.is_empty() {
                return Ok(None);
            }
            self.pos = 0;
        }
        let rec = self.records[self.pos];
        self.pos += 1;
        Ok(Some(rec))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn rec(ip: u64) -> TraceInstruction {
        TraceInstruction {
            ip,
            ..Default::default()
        }
    }

    fn bytes_of(recs: &[TraceInstruction]) -> Vec<u8> {
        recs.iter().flat_map(|r| r.to_bytes()).collect()
    }

    #[test]
    fn two_records_then_end() {
        let data = bytes_of(&[rec(1), rec(2)]);
        assert_eq!(data.len(), 128);
        let mut r = TraceReader::from_reader(Cursor::new(data)).unwrap();
        assert_eq!(r.read_next().unwrap().unwrap().ip, 1);
        assert_eq!(r.read_next().unwrap().unwrap().ip, 2);
        assert!(r.read_next().unwrap().is_none());
        assert!(r.read_next().unwrap().is_none());
    }

    #[test]
    fn truncated_tail_is_corrupt() {
        let mut data = bytes_of(&[rec(1), rec(2)]);
        data.truncate(100);
        let mut r = TraceReader::from_reader(Cursor::new(data)).unwrap();
        assert!(r.read_next().unwrap().is_some());
        assert!(matches!(r.read_next(), Err(TraceError::Corrupt(_))));
    }

    #[test]
    fn empty_stream_ends_immediately() {
        let mut r = TraceReader::from_reader(Cursor::new(Vec::new())).unwrap();
        assert!(r.read_next().unwrap().is_none());
    }

    #[test]
    fn corrupt_gzip_body() {
        let mut data = vec![0x1f, 0x8b, 8, 0, 0, 0, 0, 0, 0, 3];
        data.extend_from_slice(&[0xff; 200]);
        let mut r = TraceReader::from_reader(Cursor::new(data)).unwrap();
        assert_eq!(r.compression(), Compression::Gzip);
        assert!(matches!(r.read_next(), Err(TraceError::Corrupt(_))));
    }

    #[test]
    fn compressed_containers_match_raw() {
        let dir = tempfile::tempdir().unwrap();
        let recs: Vec<_> = (0..500u64).map(|i| rec(0x400000 + 4 * i)).collect();
        for name in ["t.trace", "t.trace.gz", "t.trace.xz"] {
            let path = dir.path().join(name);
            let mut w = TraceWriter::create(&path).unwrap();
            for r in &recs {
                w.write(r).unwrap();
            }
            assert_eq!(w.finish().unwrap(), 500);
            let back: Vec<_> = open_trace(&path).unwrap().map(Result::unwrap).collect();
            assert_eq!(back, recs, "{name}");
        }
        let gz = open_trace(dir.path().join("t.trace.gz")).unwrap();
        assert_eq!(gz.compression(), Compression::Gzip);
        let xz = open_trace(dir.path().join("t.trace.xz")).unwrap();
        assert_eq!(xz.compression(), Compression::Xz);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            open_trace("/nonexistent/trace.gz"),
            Err(TraceError::Io { .. })
        ));
    }

    #[test]
    fn looping_source_replays() {
        let mut s = VecSource::looping(vec![rec(1), rec(2)]);
        let ips: Vec<_> = (0..5).map(|_| s.next_instruction().unwrap().unwrap().ip).collect();
        assert_eq!(ips, vec![1, 2, 1, 2, 1]);
        let mut empty = VecSource::looping(vec![]);
        assert!(empty.next_instruction().unwrap().is_none());
    }
}

/// A trace file that rewinds to its first record when it runs out.
pub struct ReplayingTrace {
    path: PathBuf,
    reader: TraceReader,
    in_pass: u64,
    passes: u64,
}

impl ReplayingTrace {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let path = path.as_ref().to_path_buf();
        let reader = open_trace(&path)?;
        Ok(ReplayingTrace {
            path,
            reader,
            in_pass: 0,
            passes: 0,
        })
    }

    /// Completed passes over the file.
    pub fn passes(&self) -> u64 {
        self.passes
    }
}

impl InstructionSource for ReplayingTrace {
    fn next_instruction(&mut self) -> Result<Option<TraceInstruction>, TraceError> {
        if let Some(rec) = self.reader.read_next()? {
            self.in_pass += 1;
            return Ok(Some(rec));
        }
        if self.in_pass == 0 {
            return Err(TraceError::Empty(self.path.display().to_string()));
        }
        self.passes += 1;
        self.in_pass = 0;
        self.reader = open_trace(&self.path)?;
        self.next_instruction()
    }
}

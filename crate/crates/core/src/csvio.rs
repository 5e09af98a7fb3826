//! Packet-record CSV: one packet per line, either a single `flow_id` column
//! or the five columns `src,dst,sport,dport,proto`. The header line is
//! optional; without one the layout is inferred from the column count of
//! the first line.

use std::io::{Read, Write};

use csv::{ReaderBuilder, StringRecord, Trim, WriterBuilder};

use crate::aggregate::FlowKey;
use crate::error::Result;
use crate::synth::FlowId;

pub const FLOW_ID_HEADER: [&str; 1] = ["flow_id"];
pub const FIVE_TUPLE_HEADER: [&str; 5] = ["src", "dst", "sport", "dport", "proto"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketLayout {
    FlowId,
    FiveTuple,
}

impl PacketLayout {
    fn width(self) -> usize {
        match self {
            PacketLayout::FlowId => 1,
            PacketLayout::FiveTuple => 5,
        }
    }

    fn key(self, rec: &StringRecord) -> std::result::Result<FlowKey, String> {
        if rec.len() != self.width() {
            return Err(format!(
                "expected {} column(s), found {}",
                self.width(),
                rec.len()
            ));
        }
        let key = match self {
            PacketLayout::FlowId => FlowKey::new(&rec[0]),
            PacketLayout::FiveTuple => {
                FlowKey::from_five_tuple(&rec[0], &rec[1], &rec[2], &rec[3], &rec[4])
            }
        };
        key.map_err(|e| e.to_string())
    }
}

/// One parsed line. `key` holds the reason when the line is malformed.
#[derive(Debug, Clone)]
pub struct PacketRow {
    pub line: u64,
    pub fields: StringRecord,
    pub key: std::result::Result<FlowKey, String>,
}

/// Streaming reader; holds one record at a time.
pub struct PacketCsvReader<R: Read> {
    inner: csv::Reader<R>,
    layout: Option<PacketLayout>,
    header: Option<StringRecord>,
    pending: Option<StringRecord>,
    started: bool,
}

impl<R: Read> PacketCsvReader<R> {
    pub fn new(input: R) -> Self {
        let inner = ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(Trim::All)
            .from_reader(input);
        Self {
            inner,
            layout: None,
            header: None,
            pending: None,
            started: false,
        }
    }

    /// Reads the first line and settles the layout. Called implicitly by
    /// [`next_row`](Self::next_row).
    pub fn start(&mut self) -> Result<()> {
        if self.started {
            return Ok(());
        }
        self.started = true;
        let mut first = StringRecord::new();
        if !self.inner.read_record(&mut first)? {
            return Ok(());
        }
        let lowered: Vec<String> = first.iter().map(str::to_ascii_lowercase).collect();
        if lowered == FLOW_ID_HEADER {
            self.layout = Some(PacketLayout::FlowId);
            self.header = Some(first);
        } else if lowered == FIVE_TUPLE_HEADER {
            self.layout = Some(PacketLayout::FiveTuple);
            self.header = Some(first);
        } else {
            self.layout = Some(if first.len() == 5 {
                PacketLayout::FiveTuple
            } else {
                PacketLayout::FlowId
            });
            self.pending = Some(first);
        }
        Ok(())
    }

    pub fn layout(&self) -> Option<PacketLayout> {
        self.layout
    }

    /// Header line as read, if the input had one.
    pub fn header(&self) -> Option<&StringRecord> {
        self.header.as_ref()
    }

    pub fn next_row(&mut self) -> Result<Option<PacketRow>> {
        self.start()?;
        let rec = match self.pending.take() {
            Some(r) => r,
            None => {
                let mut r = StringRecord::new();
                if !self.inner.read_record(&mut r)? {
                    return Ok(None);
                }
                r
            }
        };
        let line = rec.position().map_or(0, |p| p.line());
        let layout = self.layout.expect("layout settled by start");
        Ok(Some(PacketRow {
            line,
            key: layout.key(&rec),
            fields: rec,
        }))
    }
}

impl<R: Read> Iterator for PacketCsvReader<R> {
    type Item = Result<PacketRow>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_row().transpose()
    }
}

pub struct PacketCsvWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> PacketCsvWriter<W> {
    pub fn new(out: W, header: Option<&StringRecord>) -> Result<Self> {
        let mut inner = WriterBuilder::new().flexible(true).from_writer(out);
        if let Some(h) = header {
            inner.write_record(h)?;
        }
        Ok(Self { inner })
    }

    /// Writer for synthetic streams, with the `flow_id` header.
    pub fn flow_ids(out: W) -> Result<Self> {
        let mut inner = WriterBuilder::new().from_writer(out);
        inner.write_record(FLOW_ID_HEADER)?;
        Ok(Self { inner })
    }

    pub fn write_fields(&mut self, fields: &StringRecord) -> Result<()> {
        self.inner.write_record(fields)?;
        Ok(())
    }

    pub fn write_flow_id(&mut self, id: FlowId) -> Result<()> {
        self.inner.write_record([id.to_string()])?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        self.inner
            .into_inner()
            .map_err(|e| crate::error::Error::Io(e.into_error()))
    }
}

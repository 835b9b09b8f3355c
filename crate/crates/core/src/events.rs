//! Event data model, text/binary stream formats and windowing policies.
//!
//! Timestamps are integer microseconds throughout. The binary layout is
//!
//! ```text
//! header (20 bytes):  b"EVT1" | width: u32 | height: u32 | count: u64
//! record (14 bytes):  t: u64 | x: u16 | y: u16 | p: i8 | pad: i8 (= 0)
//! ```
//!
//! with every integer little-endian and `p` either `1` or `-1`.

use std::collections::VecDeque;
use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"EVT1";
pub const BINARY_HEADER_LEN: usize = 20;
pub const BINARY_RECORD_LEN: usize = 14;

/// Lookahead used by lenient parsing to repair local timestamp reordering.
pub const LENIENT_LOOKAHEAD_US: u64 = 1_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    #[inline]
    pub fn sign(self) -> i32 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    #[inline]
    pub fn from_sign(sign: i32) -> Option<Self> {
        match sign {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: Polarity) -> Self {
        Self { t, x, y, p }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SensorGeometry {
    pub width: u32,
    pub height: u32,
}

impl SensorGeometry {
    pub const DAVIS346: SensorGeometry = SensorGeometry {
        width: 346,
        height: 260,
    };

    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 || width > u16::MAX as u32 + 1 || height > u16::MAX as u32 + 1 {
            return Err(Error::InvalidGeometry { width, height });
        }
        Ok(Self { width, height })
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64
    }

    pub fn check(&self, x: i64, y: i64) -> Result<()> {
        if self.contains(x, y) {
            Ok(())
        } else {
            Err(Error::CoordinateOutOfRange {
                x,
                y,
                width: self.width,
                height: self.height,
            })
        }
    }

    /// Default event count per window: 0.35 events per pixel.
    pub fn default_window_count(&self) -> usize {
        ((self.pixel_count() as f64) * 0.35).round().max(1.0) as usize
    }
}

/// Events of one recording, in timestamp order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventStream {
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn new(events: Vec<Event>) -> Self {
        Self { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Event> {
        self.events.iter()
    }
}

/// A non-empty, time-ordered group of events processed as one unit.
#[derive(Clone, Debug, PartialEq)]
pub struct EventWindow {
    pub index: usize,
    pub events: Vec<Event>,
}

impl EventWindow {
    /// Returns `None` for an empty or unordered event list.
    pub fn new(index: usize, events: Vec<Event>) -> Option<Self> {
        if events.is_empty() || events.windows(2).any(|w| w[1].t < w[0].t) {
            return None;
        }
        Some(Self { index, events })
    }

    pub fn start(&self) -> u64 {
        self.events[0].t
    }

    pub fn end(&self) -> u64 {
        self.events[self.events.len() - 1].t
    }

    /// Window time span `t_last - t_first` in microseconds.
    pub fn span(&self) -> u64 {
        self.end() - self.start()
    }

    pub fn midpoint(&self) -> u64 {
        self.start() + self.span() / 2
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeUnit {
    /// Decimal seconds, rounded to the nearest microsecond.
    Seconds,
    /// Integer microseconds.
    Microseconds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventFormat {
    Text(TimeUnit),
    Binary,
}

#[derive(Clone, Copy, Debug)]
pub struct ParseOptions {
    pub geometry: SensorGeometry,
    pub format: EventFormat,
    /// Error on any backwards timestamp instead of repairing within the lookahead.
    pub strict: bool,
}

impl ParseOptions {
    pub fn new(geometry: SensorGeometry, format: EventFormat) -> Self {
        Self {
            geometry,
            format,
            strict: true,
        }
    }

    pub fn lenient(mut self) -> Self {
        self.strict = false;
        self
    }
}

/// Parses decimal seconds into microseconds with round-half-up on the
/// seventh fractional digit, without going through binary floating point.
pub fn parse_seconds_to_us(token: &str) -> Option<u64> {
    let token = token.trim();
    if token.is_empty() || token.starts_with('-') {
        return None;
    }
    if token.contains(['e', 'E']) {
        let secs: f64 = token.parse().ok()?;
        if !secs.is_finite() || secs < 0.0 {
            return None;
        }
        return Some((secs * 1e6).round() as u64);
    }
    let token = token.strip_prefix('+').unwrap_or(token);
    let (int_part, frac_part) = match token.split_once('.') {
        Some((i, f)) => (i, f),
        None => (token, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let whole: u64 = if int_part.is_empty() { 0 } else { int_part.parse().ok()? };
    let mut micros: u64 = 0;
    let digits = frac_part.as_bytes();
    for i in 0..6 {
        micros = micros * 10 + digits.get(i).map_or(0, |d| u64::from(d - b'0'));
    }
    if digits.get(6).is_some_and(|d| *d >= b'5') {
        micros += 1;
    }
    whole.checked_mul(1_000_000)?.checked_add(micros)
}

fn parse_text_line(line: &str, line_no: usize, unit: TimeUnit, geometry: &SensorGeometry) -> Result<Option<Event>> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let malformed = |reason: &str| Error::MalformedLine {
        line: line_no,
        reason: reason.to_string(),
    };
    let tokens: Vec<&str> = trimmed.split_whitespace().collect();
    if tokens.len() != 4 {
        return Err(malformed(&format!("expected 4 fields, found {}", tokens.len())));
    }
    let t = match unit {
        TimeUnit::Seconds => parse_seconds_to_us(tokens[0]),
        TimeUnit::Microseconds => tokens[0].parse::<u64>().ok(),
    }
    .ok_or_else(|| malformed("bad timestamp"))?;
    let x: i64 = tokens[1].parse().map_err(|_| malformed("bad x"))?;
    let y: i64 = tokens[2].parse().map_err(|_| malformed("bad y"))?;
    let p = match tokens[3] {
        "1" | "+1" => Polarity::Positive,
        "0" | "-1" => Polarity::Negative,
        _ => return Err(malformed("polarity must be 1, 0 or -1")),
    };
    geometry.check(x, y)?;
    Ok(Some(Event::new(t, x as u16, y as u16, p)))
}

/// Applies the ordering policy to a stream of raw events.
struct Orderer {
    strict: bool,
    last_emitted: Option<u64>,
    max_seen: u64,
    buffer: VecDeque<Event>,
    out: Vec<Event>,
    dropped: usize,
}

impl Orderer {
    fn new(strict: bool) -> Self {
        Self {
            strict,
            last_emitted: None,
            max_seen: 0,
            buffer: VecDeque::new(),
            out: Vec::new(),
            dropped: 0,
        }
    }

    fn push(&mut self, index: usize, event: Event) -> Result<()> {
        if self.strict {
            if let Some(previous) = self.last_emitted {
                if event.t < previous {
                    return Err(Error::NonMonotoneTimestamp {
                        index,
                        previous,
                        t: event.t,
                    });
                }
            }
            self.last_emitted = Some(event.t);
            self.out.push(event);
            return Ok(());
        }
        if self.last_emitted.is_some_and(|last| event.t < last) {
            // Too late to be repaired by the lookahead buffer.
            self.dropped += 1;
            return Ok(());
        }
        let pos = self.buffer.partition_point(|e| e.t <= event.t);
        self.buffer.insert(pos, event);
        self.max_seen = self.max_seen.max(event.t);
        while let Some(front) = self.buffer.front() {
            if front.t + LENIENT_LOOKAHEAD_US < self.max_seen {
                let e = self.buffer.pop_front().unwrap();
                self.last_emitted = Some(e.t);
                self.out.push(e);
            } else {
                break;
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Vec<Event> {
        self.out.extend(self.buffer.drain(..));
        self.out
    }
}

/// Reads an event stream in the requested format.
///
/// Lenient mode stably sorts events within a 1 ms lookahead and silently drops
/// events that arrive later than that.
pub fn parse_events<R: Read>(reader: R, options: &ParseOptions) -> Result<EventStream> {
    match options.format {
        EventFormat::Text(unit) => parse_text(std::io::BufReader::new(reader), unit, options),
        EventFormat::Binary => parse_binary(reader, options),
    }
}

fn parse_text<R: BufRead>(reader: R, unit: TimeUnit, options: &ParseOptions) -> Result<EventStream> {
    let mut orderer = Orderer::new(options.strict);
    let mut index = 0;
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if let Some(event) = parse_text_line(&line, line_no + 1, unit, &options.geometry)? {
            orderer.push(index, event)?;
            index += 1;
        }
    }
    Ok(EventStream::new(orderer.finish()))
}

fn parse_binary<R: Read>(mut reader: R, options: &ParseOptions) -> Result<EventStream> {
    let mut header = [0u8; BINARY_HEADER_LEN];
    match reader.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            return Err(Error::CorruptHeader("truncated binary event header".into()))
        }
        Err(e) => return Err(e.into()),
    }
    if &header[0..4] != BINARY_MAGIC {
        return Err(Error::CorruptHeader("missing EVT1 magic".into()));
    }
    let width = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let count = u64::from_le_bytes(header[12..20].try_into().unwrap());
    if width != options.geometry.width || height != options.geometry.height {
        return Err(Error::CorruptHeader(format!(
            "header geometry {width}x{height} does not match sensor {}x{}",
            options.geometry.width, options.geometry.height
        )));
    }
    let mut orderer = Orderer::new(options.strict);
    let mut record = [0u8; BINARY_RECORD_LEN];
    for index in 0..count as usize {
        reader.read_exact(&mut record).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::CorruptHeader(format!("header announces {count} records, stream ends at {index}"))
            } else {
                e.into()
            }
        })?;
        let t = u64::from_le_bytes(record[0..8].try_into().unwrap());
        let x = u16::from_le_bytes(record[8..10].try_into().unwrap());
        let y = u16::from_le_bytes(record[10..12].try_into().unwrap());
        let p = Polarity::from_sign(i32::from(record[12] as i8)).ok_or_else(|| Error::MalformedLine {
            line: index,
            reason: format!("binary polarity byte {}", record[12] as i8),
        })?;
        options.geometry.check(i64::from(x), i64::from(y))?;
        orderer.push(index, Event::new(t, x, y, p))?;
    }
    Ok(EventStream::new(orderer.finish()))
}

pub fn write_events_binary<W: Write>(mut writer: W, geometry: SensorGeometry, events: &[Event]) -> Result<()> {
    writer.write_all(BINARY_MAGIC)?;
    writer.write_all(&geometry.width.to_le_bytes())?;
    writer.write_all(&geometry.height.to_le_bytes())?;
    writer.write_all(&(events.len() as u64).to_le_bytes())?;
    let mut record = [0u8; BINARY_RECORD_LEN];
    for e in events {
        record[0..8].copy_from_slice(&e.t.to_le_bytes());
        record[8..10].copy_from_slice(&e.x.to_le_bytes());
        record[10..12].copy_from_slice(&e.y.to_le_bytes());
        record[12] = e.p.sign() as i8 as u8;
        record[13] = 0;
        writer.write_all(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes "t x y p" lines with `p ∈ {1, -1}`.
pub fn write_events_text<W: Write>(mut writer: W, unit: TimeUnit, events: &[Event]) -> Result<()> {
    for e in events {
        match unit {
            TimeUnit::Seconds => writeln!(
                writer,
                "{}.{:06} {} {} {}",
                e.t / 1_000_000,
                e.t % 1_000_000,
                e.x,
                e.y,
                e.p.sign()
            )?,
            TimeUnit::Microseconds => writeln!(writer, "{} {} {} {}", e.t, e.x, e.y, e.p.sign())?,
        }
    }
    writer.flush()?;
    Ok(())
}

/// Splits a stream into consecutive windows of exactly `n` events. A trailing
/// remainder shorter than `n` is dropped.
pub fn window_by_count(stream: &EventStream, n: usize) -> Result<Vec<EventWindow>> {
    if n == 0 {
        return Err(Error::InvalidParameter("window event count must be at least 1".into()));
    }
    Ok(stream
        .events
        .chunks_exact(n)
        .enumerate()
        .map(|(index, chunk)| EventWindow {
            index,
            events: chunk.to_vec(),
        })
        .collect())
}

/// Splits a stream into half-open time bins `[t0 + kΔt, t0 + (k+1)Δt)` where
/// `t0` is the first timestamp. Empty bins produce no window.
pub fn window_by_duration(stream: &EventStream, dt_us: u64) -> Result<Vec<EventWindow>> {
    if dt_us == 0 {
        return Err(Error::InvalidParameter("window duration must be at least 1 us".into()));
    }
    let Some(first) = stream.events.first() else {
        return Ok(Vec::new());
    };
    let t0 = first.t;
    let mut windows: Vec<EventWindow> = Vec::new();
    let mut current_bin = None;
    let mut current = Vec::new();
    for e in &stream.events {
        let bin = (e.t - t0) / dt_us;
        if current_bin != Some(bin) && !current.is_empty() {
            windows.push(EventWindow {
                index: windows.len(),
                events: std::mem::take(&mut current),
            });
        }
        current_bin = Some(bin);
        current.push(*e);
    }
    if !current.is_empty() {
        windows.push(EventWindow {
            index: windows.len(),
            events: current,
        });
    }
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(w: u32, h: u32) -> SensorGeometry {
        SensorGeometry::new(w, h).unwrap()
    }

    fn ev(t: u64) -> Event {
        Event::new(t, 0, 0, Polarity::Positive)
    }

    fn parse_text_str(text: &str, geometry: SensorGeometry, unit: TimeUnit) -> Result<EventStream> {
        parse_events(text.as_bytes(), &ParseOptions::new(geometry, EventFormat::Text(unit)))
    }

    #[test]
    fn parses_seconds_line() {
        let s = parse_text_str("0.000001 10 20 1\n", SensorGeometry::DAVIS346, TimeUnit::Seconds).unwrap();
        assert_eq!(s.events, vec![Event::new(1, 10, 20, Polarity::Positive)]);
    }

    #[test]
    fn seconds_round_to_nearest_microsecond() {
        assert_eq!(parse_seconds_to_us("1.0000005"), Some(1_000_001));
        assert_eq!(parse_seconds_to_us("1.0000004"), Some(1_000_000));
        assert_eq!(parse_seconds_to_us("12"), Some(12_000_000));
        assert_eq!(parse_seconds_to_us(".5"), Some(500_000));
        assert_eq!(parse_seconds_to_us("1e-6"), Some(1));
        assert_eq!(parse_seconds_to_us("-1"), None);
        assert_eq!(parse_seconds_to_us("1.2.3"), None);
    }

    #[test]
    fn rejects_out_of_range_on_davis346() {
        let err = parse_text_str("0.5 400 10 1\n", SensorGeometry::DAVIS346, TimeUnit::Seconds).unwrap_err();
        assert!(matches!(err, Error::CoordinateOutOfRange { x: 400, .. }));
        // The last valid pixel is accepted.
        assert!(parse_text_str("0.5 345 259 1\n", SensorGeometry::DAVIS346, TimeUnit::Seconds).is_ok());
        assert!(parse_text_str("0.5 345 260 1\n", SensorGeometry::DAVIS346, TimeUnit::Seconds).is_err());
    }

    #[test]
    fn empty_input_is_empty_stream() {
        let s = parse_text_str("", geom(4, 4), TimeUnit::Seconds).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn zero_polarity_means_negative() {
        let s = parse_text_str("5 1 1 0\n6 1 1 -1\n", geom(4, 4), TimeUnit::Microseconds).unwrap();
        assert!(s.iter().all(|e| e.p == Polarity::Negative));
    }

    #[test]
    fn malformed_lines() {
        for bad in ["1 2 3\n", "a 1 1 1\n", "1 1 1 2\n", "1 1 x 1\n", "1 2 3 1 5\n"] {
            let err = parse_text_str(bad, geom(4, 4), TimeUnit::Microseconds).unwrap_err();
            assert!(matches!(err, Error::MalformedLine { line: 1, .. }), "{bad:?} -> {err:?}");
        }
    }

    #[test]
    fn strict_rejects_backwards_time_lenient_repairs() {
        let text = "10 0 0 1\n2000 1 0 1\n1500 2 0 1\n5000 3 0 1\n";
        let err = parse_text_str(text, geom(4, 4), TimeUnit::Microseconds).unwrap_err();
        assert!(matches!(err, Error::NonMonotoneTimestamp { index: 2, previous: 2000, t: 1500 }));

        let opts = ParseOptions::new(geom(4, 4), EventFormat::Text(TimeUnit::Microseconds)).lenient();
        let s = parse_events(text.as_bytes(), &opts).unwrap();
        let ts: Vec<u64> = s.iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![10, 1500, 2000, 5000]);
    }

    #[test]
    fn lenient_drops_events_beyond_lookahead() {
        let text = "0 0 0 1\n5000 0 0 1\n7000 0 0 1\n100 1 0 1\n";
        let opts = ParseOptions::new(geom(4, 4), EventFormat::Text(TimeUnit::Microseconds)).lenient();
        let s = parse_events(text.as_bytes(), &opts).unwrap();
        let ts: Vec<u64> = s.iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![0, 5000, 7000]);
    }

    #[test]
    fn binary_layout_is_exact() {
        let g = geom(346, 260);
        let events = vec![Event::new(0x0102030405060708, 345, 259, Polarity::Negative)];
        let mut buf = Vec::new();
        write_events_binary(&mut buf, g, &events).unwrap();
        assert_eq!(buf.len(), BINARY_HEADER_LEN + BINARY_RECORD_LEN);
        assert_eq!(&buf[0..4], b"EVT1");
        assert_eq!(&buf[4..8], &346u32.to_le_bytes());
        assert_eq!(&buf[8..12], &260u32.to_le_bytes());
        assert_eq!(&buf[12..20], &1u64.to_le_bytes());
        assert_eq!(&buf[20..28], &[8, 7, 6, 5, 4, 3, 2, 1]);
        assert_eq!(&buf[28..34], &[0x59, 0x01, 0x03, 0x01, 0xff, 0x00]);
        let back = parse_events(buf.as_slice(), &ParseOptions::new(g, EventFormat::Binary)).unwrap();
        assert_eq!(back.events, events);
    }

    #[test]
    fn binary_rejects_bad_header_and_truncation() {
        let g = geom(4, 4);
        let err = parse_events(&b"EVT2\0\0\0\0"[..], &ParseOptions::new(g, EventFormat::Binary)).unwrap_err();
        assert!(matches!(err, Error::CorruptHeader(_)));
        let mut buf = Vec::new();
        write_events_binary(&mut buf, g, &[ev(1), ev(2)]).unwrap();
        buf.truncate(buf.len() - 3);
        let err = parse_events(buf.as_slice(), &ParseOptions::new(g, EventFormat::Binary)).unwrap_err();
        assert!(matches!(err, Error::CorruptHeader(_)));
    }

    #[test]
    fn count_windows() {
        let stream = EventStream::new((0..7).map(ev).collect());
        let w = window_by_count(&stream, 7).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].len(), 7);

        let stream = EventStream::new((0..15).map(ev).collect());
        let w = window_by_count(&stream, 7).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].events.iter().map(|e| e.t).collect::<Vec<_>>(), (0..7).collect::<Vec<_>>());
        assert_eq!(w[1].events.iter().map(|e| e.t).collect::<Vec<_>>(), (7..14).collect::<Vec<_>>());
        assert_eq!(w[1].index, 1);

        let stream = EventStream::new((0..3).map(ev).collect());
        assert!(window_by_count(&stream, 7).unwrap().is_empty());
        assert!(window_by_count(&stream, 0).is_err());
    }

    #[test]
    fn duration_windows() {
        let stream = EventStream::new(vec![ev(0), ev(5), ev(10)]);
        let w = window_by_duration(&stream, 10).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].events.iter().map(|e| e.t).collect::<Vec<_>>(), vec![0, 5]);
        assert_eq!(w[1].events.iter().map(|e| e.t).collect::<Vec<_>>(), vec![10]);

        let single = EventStream::new(vec![ev(42)]);
        assert_eq!(window_by_duration(&single, 3).unwrap().len(), 1);

        let simultaneous = EventStream::new(vec![ev(0); 5]);
        let w = window_by_duration(&simultaneous, 1).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].len(), 5);

        // Gaps produce no empty windows and indices stay consecutive.
        let gappy = EventStream::new(vec![ev(0), ev(100), ev(101)]);
        let w = window_by_duration(&gappy, 10).unwrap();
        assert_eq!(w.iter().map(|w| w.index).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn default_window_count_for_davis346() {
        assert_eq!(SensorGeometry::DAVIS346.default_window_count(), 31_486);
    }

    #[test]
    fn window_rejects_empty_and_unordered() {
        assert!(EventWindow::new(0, vec![]).is_none());
        assert!(EventWindow::new(0, vec![ev(2), ev(1)]).is_none());
        let w = EventWindow::new(3, vec![ev(2), ev(8)]).unwrap();
        assert_eq!((w.start(), w.end(), w.span(), w.midpoint()), (2, 8, 6, 5));
    }
}

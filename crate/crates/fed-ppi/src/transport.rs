//! Coordinator/client wire protocol.
//!
//! Framing: a 4-byte big-endian length prefix, then the message body,
//! then a 4-byte big-endian CRC-32 (IEEE) of the body. The length counts
//! the body plus the trailing CRC. Bodies are a versioned binary encoding
//! with fixed field order; every numeric statistic travels as a
//! big-endian IEEE-754 binary64, so values cross the wire bit-exactly.
//!
//! Only summary statistics, sample counts and per-client prediction
//! (min, max) ever appear in the schema; raw samples cannot be expressed
//! in it.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::time::{Duration, Instant};

use crate::estimators::{
    federated_confidence, LinearClientSummary, LocalSummary, ParamGrid, TaskOptions,
};
use crate::datagen::TaskKind;
use crate::federation::{compute_weights, ClientSummary, ConfidenceSet, CoordStats, GridSet};
use crate::linalg::Matrix;
use crate::stats_core::Interval;
use crate::{ClientDataset64, ConfidenceSet64, Error, Result};

pub const PROTOCOL_VERSION: u8 = 1;

/// Longest frame the decoder will accept (64 MiB), guarding against
/// nonsense length prefixes.
pub const MAX_FRAME_LEN: usize = 64 << 20;

// ---------------------------------------------------------------------------
// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320)

fn crc32_table() -> &'static [u32; 256] {
    use std::sync::OnceLock;
    static TABLE: OnceLock<[u32; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [0u32; 256];
        for (i, slot) in table.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 == 1 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            }
            *slot = c;
        }
        table
    })
}

pub fn crc32(bytes: &[u8]) -> u32 {
    let table = crc32_table();
    let mut c = 0xFFFF_FFFFu32;
    for &b in bytes {
        c = table[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    c ^ 0xFFFF_FFFF
}

// ---------------------------------------------------------------------------
// Decode errors

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("truncated frame: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("checksum mismatch: frame says {expected:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { expected: u32, computed: u32 },
    #[error("unknown protocol version {0}")]
    UnknownVersion(u8),
    #[error("malformed frame: {0}")]
    Malformed(String),
}

// ---------------------------------------------------------------------------
// Binary codec

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_be_bytes());
    }

    fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn f64_slice(&mut self, vs: &[f64]) {
        self.u32(vs.len() as u32);
        for &v in vs {
            self.f64(v);
        }
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

type DecodeResult<T> = std::result::Result<T, DecodeError>;

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> DecodeResult<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(DecodeError::Truncated {
                needed: self.pos + n,
                have: self.buf.len(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> DecodeResult<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> DecodeResult<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> DecodeResult<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> DecodeResult<f64> {
        Ok(f64::from_bits(u64::from_be_bytes(
            self.take(8)?.try_into().unwrap(),
        )))
    }

    fn string(&mut self) -> DecodeResult<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| DecodeError::Malformed("invalid utf-8 in string field".into()))
    }

    fn f64_vec(&mut self) -> DecodeResult<Vec<f64>> {
        let len = self.u32()? as usize;
        if len > MAX_FRAME_LEN / 8 {
            return Err(DecodeError::Malformed(format!("vector length {len} too large")));
        }
        (0..len).map(|_| self.f64()).collect()
    }

    fn finished(&self) -> DecodeResult<()> {
        if self.pos != self.buf.len() {
            return Err(DecodeError::Malformed(format!(
                "{} trailing bytes after message",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn task_kind_byte(k: TaskKind) -> u8 {
    match k {
        TaskKind::Mean => 0,
        TaskKind::Quantile => 1,
        TaskKind::Logistic => 2,
        TaskKind::Linear => 3,
    }
}

fn task_kind_from(b: u8) -> DecodeResult<TaskKind> {
    Ok(match b {
        0 => TaskKind::Mean,
        1 => TaskKind::Quantile,
        2 => TaskKind::Logistic,
        3 => TaskKind::Linear,
        other => return Err(DecodeError::Malformed(format!("unknown task kind byte {other}"))),
    })
}

// ---------------------------------------------------------------------------
// Messages

/// Round-1 client announcement: identity, sample counts, and the
/// prediction range used for grid negotiation.
#[derive(Debug, Clone, PartialEq)]
pub struct Hello {
    pub session_id: String,
    pub client_id: String,
    pub task_kind: TaskKind,
    pub n_labeled: u64,
    pub n_unlabeled: u64,
    pub pred_min: f64,
    pub pred_max: f64,
}

/// Round-2 client payload plus the layout descriptor the coordinator
/// validates against the session's negotiated layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryMessage {
    pub protocol_version: u8,
    pub session_id: String,
    pub client_id: String,
    pub task_kind: TaskKind,
    /// Coordinate count for coordinate-layout tasks; coefficient
    /// dimension for the linear task.
    pub coord_layout: u32,
    pub payload: LocalSummary<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello(Hello),
    /// Coordinator broadcast closing round 1. Carries the agreed quantile
    /// grid, or nothing for tasks without grid negotiation.
    GridAnnounce { grid: Option<Vec<f64>> },
    Summary(SummaryMessage),
    Result(ConfidenceSet64),
    ProtocolError { reason: String },
}

const TAG_HELLO: u8 = 1;
const TAG_GRID: u8 = 2;
const TAG_SUMMARY: u8 = 3;
const TAG_RESULT: u8 = 4;
const TAG_ERROR: u8 = 5;

fn encode_coords(w: &mut ByteWriter, s: &ClientSummary<f64>) {
    w.string(&s.client_id);
    w.u64(s.n_labeled);
    w.u64(s.n_unlabeled);
    w.u32(s.coords.len() as u32);
    for c in &s.coords {
        w.f64(c.estimate);
        w.f64(c.rectifier);
        w.f64(c.var_estimate);
        w.f64(c.var_rectifier);
    }
}

fn decode_coords(r: &mut ByteReader) -> DecodeResult<ClientSummary<f64>> {
    let client_id = r.string()?;
    let n_labeled = r.u64()?;
    let n_unlabeled = r.u64()?;
    let n = r.u32()? as usize;
    if n > MAX_FRAME_LEN / 32 {
        return Err(DecodeError::Malformed(format!("coordinate count {n} too large")));
    }
    let mut coords = Vec::with_capacity(n);
    for _ in 0..n {
        coords.push(CoordStats {
            estimate: r.f64()?,
            rectifier: r.f64()?,
            var_estimate: r.f64()?,
            var_rectifier: r.f64()?,
        });
    }
    ClientSummary::new(client_id, n_labeled, n_unlabeled, coords)
        .map_err(|e| DecodeError::Malformed(e.to_string()))
}

fn encode_matrix(w: &mut ByteWriter, m: &Matrix<f64>) {
    w.u32(m.dim as u32);
    for &v in &m.data {
        w.f64(v);
    }
}

fn decode_matrix(r: &mut ByteReader) -> DecodeResult<Matrix<f64>> {
    let dim = r.u32()? as usize;
    if dim > 64 {
        return Err(DecodeError::Malformed(format!("matrix dimension {dim} too large")));
    }
    let mut data = Vec::with_capacity(dim * dim);
    for _ in 0..dim * dim {
        data.push(r.f64()?);
    }
    Ok(Matrix { dim, data })
}

fn encode_linear(w: &mut ByteWriter, s: &LinearClientSummary<f64>) {
    w.string(&s.client_id);
    w.u64(s.n_labeled);
    w.u64(s.n_unlabeled);
    w.f64_slice(&s.theta_f);
    w.f64_slice(&s.delta);
    encode_matrix(w, &s.sigma_unlabeled);
    encode_matrix(w, &s.m_unlabeled);
    encode_matrix(w, &s.sigma_labeled);
    encode_matrix(w, &s.m_labeled);
}

fn decode_linear(r: &mut ByteReader) -> DecodeResult<LinearClientSummary<f64>> {
    Ok(LinearClientSummary {
        client_id: r.string()?,
        n_labeled: r.u64()?,
        n_unlabeled: r.u64()?,
        theta_f: r.f64_vec()?,
        delta: r.f64_vec()?,
        sigma_unlabeled: decode_matrix(r)?,
        m_unlabeled: decode_matrix(r)?,
        sigma_labeled: decode_matrix(r)?,
        m_labeled: decode_matrix(r)?,
    })
}

fn encode_set(w: &mut ByteWriter, set: &ConfidenceSet64) {
    match set {
        ConfidenceSet::Interval(iv) => {
            w.u8(0);
            w.f64(iv.lo);
            w.f64(iv.hi);
        }
        ConfidenceSet::Grid(g) => {
            w.u8(1);
            let dims = g.points.first().map_or(0, |p| p.len());
            w.u32(g.points.len() as u32);
            w.u32(dims as u32);
            for p in &g.points {
                for &v in p {
                    w.f64(v);
                }
            }
            for &kept in &g.retained {
                w.u8(kept as u8);
            }
        }
    }
}

fn decode_set(r: &mut ByteReader) -> DecodeResult<ConfidenceSet64> {
    match r.u8()? {
        0 => {
            let lo = r.f64()?;
            let hi = r.f64()?;
            Interval::new(lo, hi)
                .map(ConfidenceSet::Interval)
                .map_err(|e| DecodeError::Malformed(e.to_string()))
        }
        1 => {
            let n = r.u32()? as usize;
            let dims = r.u32()? as usize;
            if n * dims > MAX_FRAME_LEN / 8 {
                return Err(DecodeError::Malformed("grid too large".into()));
            }
            let mut points = Vec::with_capacity(n);
            for _ in 0..n {
                let mut p = Vec::with_capacity(dims);
                for _ in 0..dims {
                    p.push(r.f64()?);
                }
                points.push(p);
            }
            let mut retained = Vec::with_capacity(n);
            for _ in 0..n {
                retained.push(r.u8()? != 0);
            }
            GridSet::new(points, retained)
                .map(ConfidenceSet::Grid)
                .map_err(|e| DecodeError::Malformed(e.to_string()))
        }
        other => Err(DecodeError::Malformed(format!("unknown set tag {other}"))),
    }
}

/// Encodes a message body (version byte, tag byte, fields).
pub fn encode(msg: &Message) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.u8(PROTOCOL_VERSION);
    match msg {
        Message::Hello(h) => {
            w.u8(TAG_HELLO);
            w.string(&h.session_id);
            w.string(&h.client_id);
            w.u8(task_kind_byte(h.task_kind));
            w.u64(h.n_labeled);
            w.u64(h.n_unlabeled);
            w.f64(h.pred_min);
            w.f64(h.pred_max);
        }
        Message::GridAnnounce { grid } => {
            w.u8(TAG_GRID);
            match grid {
                None => w.u8(0),
                Some(g) => {
                    w.u8(1);
                    w.f64_slice(g);
                }
            }
        }
        Message::Summary(s) => {
            w.u8(TAG_SUMMARY);
            w.string(&s.session_id);
            w.string(&s.client_id);
            w.u8(task_kind_byte(s.task_kind));
            w.u32(s.coord_layout);
            match &s.payload {
                LocalSummary::Coords(c) => {
                    w.u8(0);
                    encode_coords(&mut w, c);
                }
                LocalSummary::Linear(l) => {
                    w.u8(1);
                    encode_linear(&mut w, l);
                }
            }
        }
        Message::Result(set) => {
            w.u8(TAG_RESULT);
            encode_set(&mut w, set);
        }
        Message::ProtocolError { reason } => {
            w.u8(TAG_ERROR);
            w.string(reason);
        }
    }
    w.buf
}

/// Decodes a message body produced by [`encode`].
pub fn decode(body: &[u8]) -> DecodeResult<Message> {
    let mut r = ByteReader::new(body);
    let version = r.u8()?;
    if version != PROTOCOL_VERSION {
        return Err(DecodeError::UnknownVersion(version));
    }
    let tag = r.u8()?;
    let msg = match tag {
        TAG_HELLO => Message::Hello(Hello {
            session_id: r.string()?,
            client_id: r.string()?,
            task_kind: task_kind_from(r.u8()?)?,
            n_labeled: r.u64()?,
            n_unlabeled: r.u64()?,
            pred_min: r.f64()?,
            pred_max: r.f64()?,
        }),
        TAG_GRID => Message::GridAnnounce {
            grid: match r.u8()? {
                0 => None,
                1 => Some(r.f64_vec()?),
                other => {
                    return Err(DecodeError::Malformed(format!("bad option flag {other}")))
                }
            },
        },
        TAG_SUMMARY => {
            let session_id = r.string()?;
            let client_id = r.string()?;
            let task_kind = task_kind_from(r.u8()?)?;
            let coord_layout = r.u32()?;
            let payload = match r.u8()? {
                0 => LocalSummary::Coords(decode_coords(&mut r)?),
                1 => LocalSummary::Linear(decode_linear(&mut r)?),
                other => {
                    return Err(DecodeError::Malformed(format!("bad payload tag {other}")))
                }
            };
            Message::Summary(SummaryMessage {
                protocol_version: version,
                session_id,
                client_id,
                task_kind,
                coord_layout,
                payload,
            })
        }
        TAG_RESULT => Message::Result(decode_set(&mut r)?),
        TAG_ERROR => Message::ProtocolError {
            reason: r.string()?,
        },
        other => return Err(DecodeError::Malformed(format!("unknown message tag {other}"))),
    };
    r.finished()?;
    Ok(msg)
}

/// Frames a message: length prefix, body, CRC-32 of the body.
pub fn encode_frame(msg: &Message) -> Vec<u8> {
    let body = encode(msg);
    let mut out = Vec::with_capacity(body.len() + 8);
    out.extend_from_slice(&((body.len() + 4) as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc32(&body).to_be_bytes());
    out
}

/// Parses one complete frame from the front of `bytes`, returning the
/// message and the number of bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> DecodeResult<(Message, usize)> {
    if bytes.len() < 4 {
        return Err(DecodeError::Truncated {
            needed: 4,
            have: bytes.len(),
        });
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    if len < 4 || len > MAX_FRAME_LEN {
        return Err(DecodeError::Malformed(format!("bad frame length {len}")));
    }
    if bytes.len() < 4 + len {
        return Err(DecodeError::Truncated {
            needed: 4 + len,
            have: bytes.len(),
        });
    }
    let body = &bytes[4..4 + len - 4];
    let expected = u32::from_be_bytes(bytes[4 + len - 4..4 + len].try_into().unwrap());
    let computed = crc32(body);
    if expected != computed {
        return Err(DecodeError::ChecksumMismatch { expected, computed });
    }
    Ok((decode(body)?, 4 + len))
}

fn write_message(stream: &mut TcpStream, msg: &Message) -> Result<()> {
    stream.write_all(&encode_frame(msg))?;
    stream.flush()?;
    Ok(())
}

fn read_message(stream: &mut TcpStream) -> Result<Message> {
    let mut len_buf = [0u8; 4];
    stream.read_exact(&mut len_buf)?;
    let len = u32::from_be_bytes(len_buf) as usize;
    if len < 4 || len > MAX_FRAME_LEN {
        return Err(DecodeError::Malformed(format!("bad frame length {len}")).into());
    }
    let mut rest = vec![0u8; len];
    stream.read_exact(&mut rest)?;
    let mut framed = len_buf.to_vec();
    framed.extend_from_slice(&rest);
    let (msg, _) = decode_frame(&framed)?;
    Ok(msg)
}

// ---------------------------------------------------------------------------
// Session

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub session_id: String,
    pub expected_clients: usize,
    /// When known, lets timeout errors name the missing clients.
    pub expected_client_ids: Option<Vec<String>>,
    pub alpha: f64,
    pub task: TaskOptions<f64>,
    /// Grid size used when negotiating a quantile grid (the task was
    /// configured with an empty grid).
    pub grid_points: usize,
    pub timeout: Duration,
}

impl SessionConfig {
    fn validate(&self) -> Result<()> {
        if self.expected_clients == 0 {
            return Err(Error::Validation("session needs at least one client".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Validation(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if let TaskOptions::Quantile { grid, .. } = &self.task {
            if grid.is_empty() && self.grid_points < 2 {
                return Err(Error::Validation(
                    "grid negotiation needs at least two grid points".into(),
                ));
            }
        }
        Ok(())
    }

    fn task_kind(&self) -> TaskKind {
        match &self.task {
            TaskOptions::Mean => TaskKind::Mean,
            TaskOptions::Quantile { .. } => TaskKind::Quantile,
            TaskOptions::Logistic { .. } => TaskKind::Logistic,
            TaskOptions::Linear { .. } => TaskKind::Linear,
        }
    }
}

/// What a completed session produced, for report assembly.
#[derive(Debug, Clone)]
pub struct SessionReport {
    pub confidence: ConfidenceSet64,
    /// Summaries sorted by client id, exactly as aggregated.
    pub summaries: Vec<LocalSummary<f64>>,
    pub negotiated_grid: Option<Vec<f64>>,
    /// The task after grid negotiation.
    pub task: TaskOptions<f64>,
}

fn timeout_error(cfg: &SessionConfig, started: Instant, have: &[String]) -> Error {
    let missing = match &cfg.expected_client_ids {
        Some(ids) => {
            let missing: Vec<&str> = ids
                .iter()
                .filter(|id| !have.contains(id))
                .map(String::as_str)
                .collect();
            if missing.is_empty() {
                String::new()
            } else {
                format!("; missing: {}", missing.join(", "))
            }
        }
        None => String::new(),
    };
    Error::SessionTimeout {
        waited_secs: started.elapsed().as_secs_f64(),
        received: have.len(),
        expected: cfg.expected_clients,
        missing,
    }
}

fn expected_layout(task: &TaskOptions<f64>) -> Option<u32> {
    match task {
        TaskOptions::Mean => Some(1),
        TaskOptions::Quantile { grid, .. } => Some(grid.len() as u32),
        TaskOptions::Logistic { grid } => Some((grid.len() * grid.dims()) as u32),
        // Linear dimension is fixed by the first valid summary.
        TaskOptions::Linear { .. } => None,
    }
}

fn reject(stream: &mut TcpStream, reason: String) -> Result<()> {
    write_message(stream, &Message::ProtocolError { reason })
}

/// Runs one federated session over the listener: accepts clients, runs
/// the two protocol rounds, aggregates, and broadcasts the result.
pub fn coordinate_session(cfg: &SessionConfig, listener: TcpListener) -> Result<SessionReport> {
    cfg.validate()?;
    let started = Instant::now();
    let deadline = started + cfg.timeout;
    listener.set_nonblocking(true)?;

    // Round 1: barrier of K distinct hellos. Connections stay open.
    let mut clients: BTreeMap<String, (TcpStream, Hello)> = BTreeMap::new();
    while clients.len() < cfg.expected_clients {
        if Instant::now() >= deadline {
            let have: Vec<String> = clients.keys().cloned().collect();
            return Err(timeout_error(cfg, started, &have));
        }
        let (mut stream, _) = match listener.accept() {
            Ok(pair) => pair,
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(2));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        stream.set_nonblocking(false)?;
        let io_timeout = deadline.saturating_duration_since(Instant::now());
        stream.set_read_timeout(Some(io_timeout.max(Duration::from_millis(1))))?;
        stream.set_write_timeout(Some(io_timeout.max(Duration::from_millis(1))))?;
        let hello = match read_message(&mut stream) {
            Ok(Message::Hello(h)) => h,
            Ok(other) => {
                let _ = reject(&mut stream, format!("expected Hello, got {other:?}"));
                continue;
            }
            // A connection that drops or sends garbage before its hello
            // must not take down the session for everyone else.
            Err(_) => continue,
        };
        if hello.session_id != cfg.session_id {
            let _ = reject(
                &mut stream,
                format!("unknown session {:?}", hello.session_id),
            );
            continue;
        }
        if hello.task_kind != cfg.task_kind() {
            let _ = reject(
                &mut stream,
                format!(
                    "session runs task {}, client announced {}",
                    cfg.task_kind(),
                    hello.task_kind
                ),
            );
            continue;
        }
        if clients.contains_key(&hello.client_id) {
            let _ = reject(
                &mut stream,
                format!("duplicate client id {:?}", hello.client_id),
            );
            continue;
        }
        if let Some(ids) = &cfg.expected_client_ids {
            if !ids.contains(&hello.client_id) {
                let _ = reject(
                    &mut stream,
                    format!("unexpected client id {:?}", hello.client_id),
                );
                continue;
            }
        }
        clients.insert(hello.client_id.clone(), (stream, hello));
    }

    // Grid negotiation closes round 1.
    let mut task = cfg.task.clone();
    let mut negotiated_grid = None;
    if let TaskOptions::Quantile { grid, .. } = &mut task {
        if grid.is_empty() {
            let lo = clients
                .values()
                .map(|(_, h)| h.pred_min)
                .fold(f64::INFINITY, f64::min);
            let hi = clients
                .values()
                .map(|(_, h)| h.pred_max)
                .fold(f64::NEG_INFINITY, f64::max);
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::Protocol(
                    "clients announced non-finite prediction bounds".into(),
                ));
            }
            *grid = if lo == hi {
                vec![lo]
            } else {
                ParamGrid::linspace(lo, hi, cfg.grid_points)?.axis_values()
            };
            negotiated_grid = Some(grid.clone());
        }
    }
    let announce = Message::GridAnnounce {
        grid: negotiated_grid.clone(),
    };
    for (stream, _) in clients.values_mut() {
        write_message(stream, &announce)?;
    }

    // Round 2: one valid summary per client; invalid summaries draw a
    // protocol error and the session keeps reading until the deadline.
    let mut layout = expected_layout(&task);
    let mut summaries: Vec<LocalSummary<f64>> = Vec::with_capacity(clients.len());
    for (client_id, (stream, hello)) in clients.iter_mut() {
        let summary = loop {
            if Instant::now() >= deadline {
                let have: Vec<String> = summaries.iter().map(|s| s.client_id().to_string()).collect();
                return Err(timeout_error(cfg, started, &have));
            }
            let io_timeout = deadline.saturating_duration_since(Instant::now());
            stream.set_read_timeout(Some(io_timeout.max(Duration::from_millis(1))))?;
            let msg = match read_message(stream) {
                Ok(m) => m,
                Err(Error::Io(e))
                    if matches!(
                        e.kind(),
                        std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                    ) =>
                {
                    let have: Vec<String> =
                        summaries.iter().map(|s| s.client_id().to_string()).collect();
                    return Err(timeout_error(cfg, started, &have));
                }
                Err(e) => return Err(e),
            };
            let s = match msg {
                Message::Summary(s) => s,
                other => {
                    reject(stream, format!("expected Summary, got {other:?}"))?;
                    continue;
                }
            };
            if s.session_id != cfg.session_id || &s.client_id != client_id {
                reject(
                    stream,
                    format!(
                        "summary identity mismatch (session {:?}, client {:?})",
                        s.session_id, s.client_id
                    ),
                )?;
                continue;
            }
            let actual_layout = match &s.payload {
                LocalSummary::Coords(c) => c.coords.len() as u32,
                LocalSummary::Linear(l) => l.dim() as u32,
            };
            let layout_ok = actual_layout == s.coord_layout
                && match layout {
                    Some(expected) => actual_layout == expected,
                    None => actual_layout > 0,
                };
            let payload_ok = match (&task, &s.payload) {
                (TaskOptions::Linear { .. }, LocalSummary::Linear(_)) => true,
                (TaskOptions::Linear { .. }, _) => false,
                (_, LocalSummary::Coords(_)) => true,
                (_, LocalSummary::Linear(_)) => false,
            };
            if !layout_ok || !payload_ok {
                reject(
                    stream,
                    format!(
                        "summary layout mismatch: got {actual_layout} (descriptor {}), \
                         session expects {:?}",
                        s.coord_layout, layout
                    ),
                )?;
                continue;
            }
            let (n_lab, n_unlab) = s.payload.counts();
            if n_lab != hello.n_labeled || n_unlab != hello.n_unlabeled {
                reject(
                    stream,
                    format!(
                        "sample counts changed since hello: ({n_lab}, {n_unlab}) vs ({}, {})",
                        hello.n_labeled, hello.n_unlabeled
                    ),
                )?;
                continue;
            }
            if layout.is_none() {
                layout = Some(actual_layout);
            }
            break s.payload;
        };
        summaries.push(summary);
    }

    // BTreeMap iteration already sorted the summaries by client id, so
    // aggregation order is independent of arrival order.
    let counts_lab: Vec<u64> = summaries.iter().map(|s| s.counts().0).collect();
    let counts_unlab: Vec<u64> = summaries.iter().map(|s| s.counts().1).collect();
    let weights = compute_weights(&counts_lab, &counts_unlab)?;
    let confidence = federated_confidence(&task, &summaries, &weights, cfg.alpha)?;

    let result = Message::Result(confidence.clone());
    for (stream, _) in clients.values_mut() {
        write_message(stream, &result)?;
    }

    Ok(SessionReport {
        confidence,
        summaries,
        negotiated_grid,
        task,
    })
}

/// Connects to a coordinator, plays both protocol rounds for one client
/// dataset, and returns the broadcast confidence set.
pub fn run_client(
    addr: &str,
    session_id: &str,
    client_id: &str,
    ds: &ClientDataset64,
    task: &TaskOptions<f64>,
    timeout: Duration,
) -> Result<ConfidenceSet64> {
    let mut stream = TcpStream::connect(addr)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;

    let (pred_min, pred_max) = ds
        .labeled_pred
        .iter()
        .chain(&ds.unlabeled_pred)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
            (lo.min(p), hi.max(p))
        });
    let task_kind = match task {
        TaskOptions::Mean => TaskKind::Mean,
        TaskOptions::Quantile { .. } => TaskKind::Quantile,
        TaskOptions::Logistic { .. } => TaskKind::Logistic,
        TaskOptions::Linear { .. } => TaskKind::Linear,
    };
    write_message(
        &mut stream,
        &Message::Hello(Hello {
            session_id: session_id.to_string(),
            client_id: client_id.to_string(),
            task_kind,
            n_labeled: ds.n_labeled() as u64,
            n_unlabeled: ds.n_unlabeled() as u64,
            pred_min,
            pred_max,
        }),
    )?;

    let mut effective = task.clone();
    match read_message(&mut stream)? {
        Message::GridAnnounce { grid: announced } => {
            if let (TaskOptions::Quantile { grid, .. }, Some(g)) = (&mut effective, announced) {
                *grid = g;
            }
        }
        Message::ProtocolError { reason } => return Err(Error::Protocol(reason)),
        other => {
            return Err(Error::Protocol(format!(
                "expected GridAnnounce, got {other:?}"
            )))
        }
    }

    let payload = crate::estimators::local_summary(client_id, ds, &effective)?;
    let coord_layout = match &payload {
        LocalSummary::Coords(c) => c.coords.len() as u32,
        LocalSummary::Linear(l) => l.dim() as u32,
    };
    write_message(
        &mut stream,
        &Message::Summary(SummaryMessage {
            protocol_version: PROTOCOL_VERSION,
            session_id: session_id.to_string(),
            client_id: client_id.to_string(),
            task_kind,
            coord_layout,
            payload,
        }),
    )?;

    match read_message(&mut stream)? {
        Message::Result(set) => Ok(set),
        Message::ProtocolError { reason } => Err(Error::Protocol(reason)),
        other => Err(Error::Protocol(format!("expected Result, got {other:?}"))),
    }
}

//! Proposal wire protocol, version 1.
//!
//! Each message is a u32 little-endian byte length followed by a UTF-8 JSON
//! body. The client sends one `generate` request per backend call and reads
//! exactly one `proposals` or `error` response.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::labelmap::BinaryMask;
use crate::raster::RgbImage;

use super::{check_proposals, BackendError, MaskProposal, PromptPoint, ProposalBackend, ProposalRequest};

pub const PROTOCOL_VERSION: u32 = 1;
/// Frames above this size are treated as corrupt.
pub const MAX_FRAME_LEN: u32 = 512 << 20;

pub fn write_frame<W: Write>(out: &mut W, body: &[u8]) -> Result<(), BackendError> {
    let len = u32::try_from(body.len())
        .ok()
        .filter(|&l| l <= MAX_FRAME_LEN)
        .ok_or_else(|| BackendError::Protocol(format!("frame of {} bytes is too large", body.len())))?;
    out.write_all(&len.to_le_bytes())?;
    out.write_all(body)?;
    out.flush()?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean EOF before the length prefix.
pub fn read_frame<R: Read>(input: &mut R) -> Result<Option<Vec<u8>>, BackendError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match input.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => {
                return Err(BackendError::Protocol("stream ended inside a frame header".into()))
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(len);
    if len > MAX_FRAME_LEN {
        return Err(BackendError::Protocol(format!("bad frame length {len}")));
    }
    let mut body = vec![0u8; len as usize];
    input.read_exact(&mut body).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            BackendError::Protocol(format!("stream ended inside a {len}-byte frame"))
        } else {
            e.into()
        }
    })?;
    Ok(Some(body))
}

#[derive(Serialize)]
struct GenerateBody {
    v: u32,
    #[serde(rename = "type")]
    kind: &'static str,
    width: u32,
    height: u32,
    image_b64: String,
    points: Vec<[u32; 2]>,
    tau_iou: f64,
    tau_stab: f64,
}

/// A decoded `generate` request, as seen by a worker.
#[derive(Debug, Clone, PartialEq)]
pub struct WireRequest {
    pub tile: RgbImage,
    pub points: Vec<PromptPoint>,
    pub tau_iou: f64,
    pub tau_stab: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMask {
    pub rle: Vec<u32>,
    pub pred_iou: f64,
    pub stability: f64,
}

#[derive(Deserialize)]
struct Envelope {
    v: u32,
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    width: Option<u32>,
    #[serde(default)]
    height: Option<u32>,
    #[serde(default)]
    image_b64: Option<String>,
    #[serde(default)]
    points: Option<Vec<[u32; 2]>>,
    #[serde(default)]
    tau_iou: Option<f64>,
    #[serde(default)]
    tau_stab: Option<f64>,
    #[serde(default)]
    masks: Option<Vec<WireMask>>,
    #[serde(default)]
    message: Option<String>,
}

#[derive(Serialize)]
struct ProposalsBody<'a> {
    v: u32,
    #[serde(rename = "type")]
    kind: &'static str,
    masks: &'a [WireMask],
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    v: u32,
    #[serde(rename = "type")]
    kind: &'static str,
    message: &'a str,
}

fn parse_envelope(body: &[u8]) -> Result<Envelope, BackendError> {
    let env: Envelope = serde_json::from_slice(body)
        .map_err(|e| BackendError::Protocol(format!("malformed JSON body: {e}")))?;
    if env.v != PROTOCOL_VERSION {
        return Err(BackendError::Protocol(format!("unsupported protocol version {}", env.v)));
    }
    Ok(env)
}

pub fn encode_request(req: &ProposalRequest<'_>) -> Vec<u8> {
    let body = GenerateBody {
        v: PROTOCOL_VERSION,
        kind: "generate",
        width: req.tile.width(),
        height: req.tile.height(),
        image_b64: BASE64.encode(req.tile.as_raw()),
        points: req.points.iter().map(|p| [p.x, p.y]).collect(),
        tau_iou: req.tau_iou,
        tau_stab: req.tau_stab,
    };
    serde_json::to_vec(&body).expect("request serializes")
}

pub fn decode_request(body: &[u8]) -> Result<WireRequest, BackendError> {
    let env = parse_envelope(body)?;
    if env.kind != "generate" {
        return Err(BackendError::Protocol(format!("expected a generate request, got {:?}", env.kind)));
    }
    let missing = |f: &str| BackendError::Protocol(format!("generate request without {f}"));
    let width = env.width.ok_or_else(|| missing("width"))?;
    let height = env.height.ok_or_else(|| missing("height"))?;
    let raw = BASE64
        .decode(env.image_b64.ok_or_else(|| missing("image_b64"))?)
        .map_err(|e| BackendError::Protocol(format!("bad base64 image: {e}")))?;
    let tile = RgbImage::from_raw(width, height, raw)
        .map_err(|e| BackendError::Protocol(e.to_string()))?;
    let points = env
        .points
        .ok_or_else(|| missing("points"))?
        .into_iter()
        .map(|[x, y]| PromptPoint::new(x, y))
        .collect();
    let out = WireRequest {
        tile,
        points,
        tau_iou: env.tau_iou.ok_or_else(|| missing("tau_iou"))?,
        tau_stab: env.tau_stab.ok_or_else(|| missing("tau_stab"))?,
    };
    ProposalRequest {
        tile: &out.tile,
        origin: (0, 0),
        points: &out.points,
        tau_iou: out.tau_iou,
        tau_stab: out.tau_stab,
    }
    .validate()
    .map_err(|e| BackendError::Protocol(e.to_string()))?;
    Ok(out)
}

pub fn encode_proposals(proposals: &[MaskProposal]) -> Vec<u8> {
    let masks: Vec<WireMask> = proposals
        .iter()
        .map(|p| WireMask {
            rle: p.mask.runs().to_vec(),
            pred_iou: p.pred_iou,
            stability: p.stability,
        })
        .collect();
    serde_json::to_vec(&ProposalsBody {
        v: PROTOCOL_VERSION,
        kind: "proposals",
        masks: &masks,
    })
    .expect("proposals serialize")
}

pub fn encode_error(message: &str) -> Vec<u8> {
    serde_json::to_vec(&ErrorBody {
        v: PROTOCOL_VERSION,
        kind: "error",
        message,
    })
    .expect("error serializes")
}

/// Decodes and validates a response against the request that produced it.
pub fn decode_response(
    body: &[u8],
    req: &ProposalRequest<'_>,
) -> Result<Vec<MaskProposal>, BackendError> {
    let env = parse_envelope(body)?;
    match env.kind.as_str() {
        "error" => Err(BackendError::Worker(
            env.message.unwrap_or_else(|| "(no message)".into()),
        )),
        "proposals" => {
            let (w, h) = (req.tile.width(), req.tile.height());
            let masks = env
                .masks
                .ok_or_else(|| BackendError::Protocol("proposals response without masks".into()))?;
            let proposals = masks
                .into_iter()
                .enumerate()
                .map(|(i, m)| {
                    let mask = BinaryMask::from_runs_lenient(w, h, &m.rle)
                        .map_err(|e| BackendError::Protocol(format!("mask {i}: {e}")))?;
                    Ok(MaskProposal {
                        mask,
                        pred_iou: m.pred_iou,
                        stability: m.stability,
                    })
                })
                .collect::<Result<Vec<_>, BackendError>>()?;
            check_proposals(req, &proposals)?;
            Ok(proposals)
        }
        other => Err(BackendError::Protocol(format!("unexpected response type {other:?}"))),
    }
}

/// Serves requests from `input` until EOF, one response per request.
///
/// Malformed requests and handler failures are answered with error frames;
/// the stream keeps going. Only transport failures end the loop early.
pub fn serve<R: Read, W: Write>(
    mut input: R,
    mut output: W,
    mut handler: impl FnMut(&WireRequest) -> Result<Vec<MaskProposal>, String>,
) -> Result<(), BackendError> {
    loop {
        let body = match read_frame(&mut input) {
            Ok(Some(body)) => body,
            Ok(None) => return Ok(()),
            Err(BackendError::Transport(e)) => return Err(e.into()),
            Err(e) => {
                // The stream position is unknown after a framing error.
                write_frame(&mut output, &encode_error(&e.to_string()))?;
                return Err(e);
            }
        };
        let reply = match decode_request(&body) {
            Ok(req) => match handler(&req) {
                Ok(proposals) => encode_proposals(&proposals),
                Err(msg) => encode_error(&msg),
            },
            Err(e) => encode_error(&e.to_string()),
        };
        write_frame(&mut output, &reply)?;
    }
}

/// Where a worker lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireTransport {
    /// Spawned per connection; talks over its stdin/stdout.
    Command { program: String, args: Vec<String> },
    /// `host:port`
    Tcp(String),
}

impl WireTransport {
    /// Parses `tcp://host:port` or a whitespace-separated command line.
    pub fn parse(spec: &str) -> Result<Self, BackendError> {
        if let Some(addr) = spec.strip_prefix("tcp://") {
            if addr.is_empty() {
                return Err(BackendError::InvalidRequest("empty TCP address".into()));
            }
            return Ok(WireTransport::Tcp(addr.to_string()));
        }
        let mut parts = spec.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| BackendError::InvalidRequest("empty worker command".into()))?;
        Ok(WireTransport::Command {
            program,
            args: parts.collect(),
        })
    }
}

struct Connection {
    reader: Box<dyn Read + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
}

impl Connection {
    fn open(transport: &WireTransport) -> Result<Self, BackendError> {
        match transport {
            WireTransport::Tcp(addr) => {
                let stream = TcpStream::connect(addr)?;
                stream.set_nodelay(true)?;
                let reader = stream.try_clone()?;
                Ok(Connection {
                    reader: Box::new(BufReader::new(reader)),
                    writer: Box::new(BufWriter::new(stream)),
                    child: None,
                })
            }
            WireTransport::Command { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()?;
                let stdin: ChildStdin = child.stdin.take().expect("piped stdin");
                let stdout: ChildStdout = child.stdout.take().expect("piped stdout");
                Ok(Connection {
                    reader: Box::new(BufReader::new(stdout)),
                    writer: Box::new(BufWriter::new(stdin)),
                    child: Some(child),
                })
            }
        }
    }

    fn call(&mut self, req: &ProposalRequest<'_>) -> Result<Vec<MaskProposal>, BackendError> {
        write_frame(&mut self.writer, &encode_request(req))?;
        let body = read_frame(&mut self.reader)?
            .ok_or_else(|| BackendError::Protocol("worker closed the stream".into()))?;
        decode_response(&body, req)
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            // Closing stdin lets a well-behaved worker exit on EOF.
            self.writer = Box::new(io::sink());
            if child.try_wait().ok().flatten().is_none() {
                let deadline = std::time::Instant::now() + std::time::Duration::from_secs(2);
                while std::time::Instant::now() < deadline {
                    if child.try_wait().ok().flatten().is_some() {
                        return;
                    }
                    std::thread::sleep(std::time::Duration::from_millis(10));
                }
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
}

/// Backend that forwards requests to out-of-process workers.
///
/// Idle connections are pooled; concurrent calls each take their own
/// connection, opening a new one when the pool is empty. A connection that
/// saw any error is discarded.
pub struct WireBackend {
    transport: WireTransport,
    pool: Mutex<Vec<Connection>>,
}

impl std::fmt::Debug for WireBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WireBackend")
            .field("transport", &self.transport)
            .finish_non_exhaustive()
    }
}

impl WireBackend {
    pub fn new(transport: WireTransport) -> Self {
        Self {
            transport,
            pool: Mutex::new(Vec::new()),
        }
    }

    pub fn transport(&self) -> &WireTransport {
        &self.transport
    }
}

impl ProposalBackend for WireBackend {
    fn generate(&self, req: &ProposalRequest<'_>) -> Result<Vec<MaskProposal>, BackendError> {
        req.validate()?;
        let pooled = self.pool.lock().unwrap_or_else(|e| e.into_inner()).pop();
        let mut conn = match pooled {
            Some(c) => c,
            None => Connection::open(&self.transport)?,
        };
        let result = conn.call(req);
        // Worker-reported errors leave the stream in sync; anything else may not.
        if matches!(result, Ok(_) | Err(BackendError::Worker(_))) {
            self.pool.lock().unwrap_or_else(|e| e.into_inner()).push(conn);
        }
        result
    }
}

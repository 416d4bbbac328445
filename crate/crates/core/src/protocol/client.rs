//! Client side: a [`Predictor`] backed by a child process or TCP peer.

use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpStream};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use super::wire::{
    hello_frame, read_frame, write_frame, Frame, MsgType, PredictRequest, PredictResponse, Status,
    CAP_EPS, CAP_GRADIENT, VERSION,
};
use crate::error::{Error, Result};
use crate::predictors::{Predictor, PredictorOutput, Query};
use crate::tensor::TensorField;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// One framed, single-owner link to a predictor server. Replies are read on
/// a helper thread so every wait can time out.
pub struct Connection {
    writer: Box<dyn Write + Send>,
    rx: Receiver<Result<Option<Frame>>>,
    child: Option<Child>,
    tcp: Option<TcpStream>,
    timeout: Duration,
    caps: u8,
    broken: Option<String>,
}

impl Connection {
    /// Wraps an already-open byte stream pair and performs the handshake.
    pub fn from_streams<R, W>(reader: R, writer: W, timeout: Duration) -> Result<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        Self::build(reader, Box::new(writer), None, None, timeout)
    }

    /// Runs `command` through `sh -c` and talks to it over stdin/stdout.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Protocol(format!("failed to start predictor {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        Self::build(stdout, Box::new(stdin), Some(child), None, timeout)
    }

    pub fn connect_tcp(addr: &str, timeout: Duration) -> Result<Self> {
        let stream = TcpStream::connect(addr)
            .map_err(|e| Error::Protocol(format!("failed to connect to {addr}: {e}")))?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        let writer = stream.try_clone()?;
        Self::build(reader, Box::new(writer), None, Some(stream), timeout)
    }

    fn build<R: Read + Send + 'static>(
        mut reader: R,
        writer: Box<dyn Write + Send>,
        child: Option<Child>,
        tcp: Option<TcpStream>,
        timeout: Duration,
    ) -> Result<Self> {
        let (tx, rx) = mpsc::channel();
        thread::Builder::new()
            .name("dgpr-reader".into())
            .spawn(move || loop {
                let r = read_frame(&mut reader);
                let more = matches!(r, Ok(Some(_)));
                if tx.send(r).is_err() || !more {
                    break;
                }
            })?;
        let mut conn = Self {
            writer,
            rx,
            child,
            tcp,
            timeout,
            caps: 0,
            broken: None,
        };
        conn.handshake()?;
        Ok(conn)
    }

    fn handshake(&mut self) -> Result<()> {
        self.send_frame(&hello_frame())?;
        let f = self.recv_frame()?;
        if f.version != VERSION {
            return Err(Error::Protocol(format!(
                "handshake version mismatch: server speaks {}, client {VERSION}",
                f.version
            )));
        }
        if f.msg_type != MsgType::HelloAck as u8 || f.payload.len() != 1 {
            return Err(Error::Protocol(format!(
                "expected handshake reply, got message type {} with {} bytes",
                f.msg_type,
                f.payload.len()
            )));
        }
        self.caps = f.payload[0];
        Ok(())
    }

    pub fn capabilities(&self) -> u8 {
        self.caps
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    fn check_usable(&self) -> Result<()> {
        match &self.broken {
            Some(why) => Err(Error::Protocol(format!("connection unusable: {why}"))),
            None => Ok(()),
        }
    }

    pub fn send_frame(&mut self, frame: &Frame) -> Result<()> {
        self.check_usable()?;
        write_frame(&mut self.writer, frame).inspect_err(|e| self.broken = Some(e.to_string()))
    }

    /// Waits for the next frame. A timeout or stream failure leaves the
    /// connection unusable since a late reply could no longer be matched.
    pub fn recv_frame(&mut self) -> Result<Frame> {
        self.check_usable()?;
        let out = match self.rx.recv_timeout(self.timeout) {
            Ok(Ok(Some(f))) => return Ok(f),
            Ok(Ok(None)) => Err(Error::Protocol("predictor closed the connection".into())),
            Ok(Err(e)) => Err(e),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Protocol("predictor connection lost".into())),
        };
        if let Err(e) = &out {
            self.broken = Some(e.to_string());
        }
        out
    }

    /// Sends one request and waits for its response.
    pub fn request_predict(&mut self, req: &PredictRequest) -> Result<PredictResponse> {
        self.send_frame(&req.to_frame())?;
        let f = self.recv_frame()?;
        if f.msg_type != MsgType::PredictResponse as u8 {
            return Err(Error::Protocol(format!("expected response, got message type {}", f.msg_type)));
        }
        PredictResponse::decode(&f.payload)
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        // closing our end lets a well-behaved server exit on its own
        self.writer = Box::new(io::sink());
        if let Some(s) = &self.tcp {
            let _ = s.shutdown(Shutdown::Both);
        }
        if let Some(child) = &mut self.child {
            let deadline = Instant::now() + Duration::from_secs(2);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A predictor served over the wire protocol. Calls are serialized through
/// one connection.
pub struct ExternalPredictor {
    conn: Mutex<Connection>,
    caps: u8,
    target: String,
}

/// Connects to `target`: `tcp:HOST:PORT` for TCP, anything else is run as
/// a shell command speaking the protocol on stdin/stdout.
pub fn spawn_external_predictor(target: &str) -> Result<ExternalPredictor> {
    ExternalPredictor::open(target, DEFAULT_TIMEOUT)
}

impl ExternalPredictor {
    pub fn open(target: &str, timeout: Duration) -> Result<Self> {
        let conn = match target.strip_prefix("tcp:") {
            Some(addr) => Connection::connect_tcp(addr, timeout)?,
            None => Connection::spawn(target, timeout)?,
        };
        Ok(Self::from_connection(conn, target))
    }

    pub fn from_connection(conn: Connection, target: impl Into<String>) -> Self {
        Self {
            caps: conn.capabilities(),
            conn: Mutex::new(conn),
            target: target.into(),
        }
    }

    pub fn capabilities(&self) -> u8 {
        self.caps
    }

    /// Exclusive access to the underlying connection.
    pub fn with_connection<T>(&self, f: impl FnOnce(&mut Connection) -> T) -> T {
        let mut guard = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut guard)
    }

    pub fn request_predict(&self, req: &PredictRequest) -> Result<PredictResponse> {
        self.with_connection(|c| c.request_predict(req))
    }

    fn call(&self, q: &Query<'_>, want_gradient: bool) -> Result<(Vec<usize>, Vec<f32>, Option<Vec<f32>>, Option<Vec<f32>>)> {
        let req = PredictRequest {
            t: q.t,
            coeffs: q.coeffs,
            want_eps: self.has_eps_head(),
            want_gradient,
            shape: q.state.shape().to_vec(),
            state: q.state.data().iter().map(|&v| v as f32).collect(),
            input: q.input.data().iter().map(|&v| v as f32).collect(),
        };
        match self.request_predict(&req)? {
            PredictResponse::Ok {
                shape,
                res,
                eps,
                gradient,
            } => {
                if shape != req.shape {
                    return Err(Error::ShapeMismatch {
                        expected: req.shape,
                        found: shape,
                    });
                }
                Ok((shape, res, eps, gradient))
            }
            PredictResponse::Error {
                status: Status::CapabilityMissing,
                message,
            } => Err(Error::CapabilityMissing(message)),
            PredictResponse::Error { status, message } => Err(Error::Status {
                code: status as u8,
                message,
            }),
        }
    }
}

fn widen(shape: &[usize], data: Vec<f32>) -> Result<TensorField> {
    TensorField::new(shape.to_vec(), data.into_iter().map(f64::from).collect())
}

impl Predictor for ExternalPredictor {
    fn predict(&self, q: &Query<'_>) -> Result<PredictorOutput> {
        let (shape, res, eps, _) = self.call(q, false)?;
        let res = widen(&shape, res)?;
        Ok(match eps {
            Some(e) => PredictorOutput::with_eps(res, widen(&shape, e)?),
            None => PredictorOutput::residual_only(res),
        })
    }

    fn has_eps_head(&self) -> bool {
        self.caps & CAP_EPS != 0
    }

    fn supports_gradient(&self) -> bool {
        self.caps & CAP_GRADIENT != 0
    }

    fn guidance_gradient(&self, q: &Query<'_>) -> Result<TensorField> {
        let (shape, _, _, gradient) = self.call(q, true)?;
        let g = gradient.ok_or_else(|| Error::Protocol("server omitted the requested gradient".into()))?;
        widen(&shape, g)
    }

    fn describe(&self) -> String {
        format!("external({})", self.target)
    }
}

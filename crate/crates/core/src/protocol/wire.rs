//! Frame and message encoding.
//!
//! Every message is a frame:
//!
//! | bytes | field                              |
//! |-------|------------------------------------|
//! | 4     | magic `DGPR`                       |
//! | 1     | protocol version (1)               |
//! | 1     | message type                       |
//! | 4     | payload length, u32 little-endian  |
//! | n     | payload                            |
//!
//! Header reals are f64 and tensor payloads f32, both little-endian.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::schedule::Coefficients;

pub const MAGIC: [u8; 4] = *b"DGPR";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
/// Frames announcing a larger payload are rejected before allocation.
pub const MAX_PAYLOAD: usize = 1 << 30;

pub const CAP_EPS: u8 = 1;
pub const CAP_GRADIENT: u8 = 2;

pub const FLAG_WANT_EPS: u8 = 1;
pub const FLAG_WANT_GRADIENT: u8 = 2;

pub const FLAG_HAS_EPS: u8 = 1;
pub const FLAG_HAS_GRADIENT: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Hello = 1,
    HelloAck = 2,
    PredictRequest = 3,
    PredictResponse = 4,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Self::Hello),
            2 => Some(Self::HelloAck),
            3 => Some(Self::PredictRequest),
            4 => Some(Self::PredictResponse),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    Malformed = 1,
    InvalidShape = 2,
    CapabilityMissing = 3,
    Internal = 4,
}

impl Status {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Ok),
            1 => Some(Self::Malformed),
            2 => Some(Self::InvalidShape),
            3 => Some(Self::CapabilityMissing),
            4 => Some(Self::Internal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub version: u8,
    pub msg_type: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, payload: Vec<u8>) -> Self {
        Self {
            version: VERSION,
            msg_type: msg_type as u8,
            payload,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(self.version);
        out.push(self.msg_type);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }
}

pub fn write_frame<W: Write + ?Sized>(w: &mut W, frame: &Frame) -> Result<()> {
    if frame.payload.len() > MAX_PAYLOAD {
        return Err(Error::Protocol(format!("payload of {} bytes exceeds limit", frame.payload.len())));
    }
    w.write_all(&frame.to_bytes())?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. Returns `None` on a clean end of stream before the first
/// header byte. The version byte is returned as received; callers decide
/// whether to accept it.
pub fn read_frame<R: Read + ?Sized>(r: &mut R) -> Result<Option<Frame>> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(Error::Protocol("stream closed inside frame header".into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    if header[..4] != MAGIC {
        return Err(Error::Protocol(format!("bad magic {:02x?}", &header[..4])));
    }
    let len = u32::from_le_bytes(header[6..10].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(Error::Protocol(format!("payload of {len} bytes exceeds limit")));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::Protocol("stream closed inside frame payload".into())
        } else {
            e.into()
        }
    })?;
    Ok(Some(Frame {
        version: header[4],
        msg_type: header[5],
        payload,
    }))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Protocol(format!("payload truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Protocol("tensor too large".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn shape(&mut self) -> Result<Vec<usize>> {
        let ndim = self.u32()? as usize;
        if ndim > 32 {
            return Err(Error::Protocol(format!("ndim {ndim} exceeds 32")));
        }
        (0..ndim).map(|_| Ok(self.u32()? as usize)).collect()
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Protocol(format!(
                "{} trailing bytes after message",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn put_shape(out: &mut Vec<u8>, shape: &[usize]) {
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &e in shape {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
}

fn put_f32s(out: &mut Vec<u8>, data: &[f32]) {
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Element count implied by `shape`, or `None` if it overflows or exceeds
/// what a frame can carry.
pub fn element_count(shape: &[usize]) -> Option<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .filter(|&n| n <= MAX_PAYLOAD / 4)
}

/// Whether `shape` describes a non-empty tensor.
pub fn shape_is_valid(shape: &[usize]) -> bool {
    !shape.is_empty() && shape.iter().all(|&e| e > 0) && element_count(shape).is_some()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictRequest {
    pub t: f64,
    pub coeffs: Coefficients,
    pub want_eps: bool,
    pub want_gradient: bool,
    pub shape: Vec<usize>,
    pub state: Vec<f32>,
    pub input: Vec<f32>,
}

impl PredictRequest {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(45 + 4 * self.shape.len() + 8 * self.state.len());
        for v in [self.t, self.coeffs.alpha_bar, self.coeffs.beta_bar, self.coeffs.delta_bar] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut flags = 0;
        if self.want_eps {
            flags |= FLAG_WANT_EPS;
        }
        if self.want_gradient {
            flags |= FLAG_WANT_GRADIENT;
        }
        out.push(flags);
        put_shape(&mut out, &self.shape);
        put_f32s(&mut out, &self.state);
        put_f32s(&mut out, &self.input);
        out
    }

    /// Decodes a request payload. Zero-sized shapes decode successfully
    /// (with empty tensors) so the server can answer them with
    /// [`Status::InvalidShape`] rather than a framing error.
    pub fn decode(payload: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(payload);
        let t = c.f64()?;
        let coeffs = Coefficients {
            alpha_bar: c.f64()?,
            beta_bar: c.f64()?,
            delta_bar: c.f64()?,
        };
        let flags = c.u8()?;
        let shape = c.shape()?;
        let n = element_count(&shape).ok_or_else(|| Error::Protocol(format!("shape {shape:?} too large")))?;
        let n = if shape.is_empty() { 0 } else { n };
        let state = c.f32s(n)?;
        let input = c.f32s(n)?;
        c.finish()?;
        Ok(Self {
            t,
            coeffs,
            want_eps: flags & FLAG_WANT_EPS != 0,
            want_gradient: flags & FLAG_WANT_GRADIENT != 0,
            shape,
            state,
            input,
        })
    }

    pub fn to_frame(&self) -> Frame {
        Frame::new(MsgType::PredictRequest, self.encode())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictResponse {
    Ok {
        shape: Vec<usize>,
        res: Vec<f32>,
        eps: Option<Vec<f32>>,
        gradient: Option<Vec<f32>>,
    },
    Error {
        status: Status,
        message: String,
    },
}

impl PredictResponse {
    pub fn error(status: Status, message: impl Into<String>) -> Self {
        Self::Error {
            status,
            message: message.into(),
        }
    }

    pub fn status(&self) -> Status {
        match self {
            Self::Ok { .. } => Status::Ok,
            Self::Error { status, .. } => *status,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Self::Ok {
                shape,
                res,
                eps,
                gradient,
            } => {
                out.push(Status::Ok as u8);
                let mut flags = 0;
                if eps.is_some() {
                    flags |= FLAG_HAS_EPS;
                }
                if gradient.is_some() {
                    flags |= FLAG_HAS_GRADIENT;
                }
                out.push(flags);
                put_shape(&mut out, shape);
                put_f32s(&mut out, res);
                for extra in [eps, gradient].into_iter().flatten() {
                    put_f32s(&mut out, extra);
                }
            }
            Self::Error { status, message } => {
                out.push(*status as u8);
                out.extend_from_slice(&(message.len() as u32).to_le_bytes());
                out.extend_from_slice(message.as_bytes());
            }
        }
        out
    }

    pub fn decode(payload: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(payload);
        let code = c.u8()?;
        let status = Status::from_u8(code).ok_or_else(|| Error::Protocol(format!("unknown status {code}")))?;
        let out = if status == Status::Ok {
            let flags = c.u8()?;
            let shape = c.shape()?;
            let n = element_count(&shape).ok_or_else(|| Error::Protocol(format!("shape {shape:?} too large")))?;
            let res = c.f32s(n)?;
            let eps = if flags & FLAG_HAS_EPS != 0 { Some(c.f32s(n)?) } else { None };
            let gradient = if flags & FLAG_HAS_GRADIENT != 0 { Some(c.f32s(n)?) } else { None };
            Self::Ok {
                shape,
                res,
                eps,
                gradient,
            }
        } else {
            let len = c.u32()? as usize;
            let message = String::from_utf8_lossy(c.take(len)?).into_owned();
            Self::Error { status, message }
        };
        c.finish()?;
        Ok(out)
    }

    pub fn to_frame(&self) -> Frame {
        Frame::new(MsgType::PredictResponse, self.encode())
    }
}

pub fn hello_frame() -> Frame {
    Frame::new(MsgType::Hello, Vec::new())
}

pub fn hello_ack_frame(caps: u8) -> Frame {
    Frame::new(MsgType::HelloAck, vec![caps])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn request(shape: Vec<usize>, seed: f32) -> PredictRequest {
        let n: usize = shape.iter().product();
        PredictRequest {
            t: 0.25,
            coeffs: Coefficients {
                alpha_bar: 0.0625,
                beta_bar: 0.25,
                delta_bar: 0.0625,
            },
            want_eps: true,
            want_gradient: false,
            state: (0..n).map(|i| i as f32 * seed).collect(),
            input: (0..n).map(|i| -(i as f32) / 3.0).collect(),
            shape,
        }
    }

    #[test]
    fn documented_example_bytes() {
        let req = PredictRequest {
            t: 0.5,
            coeffs: Coefficients { alpha_bar: 0.25, beta_bar: 0.5, delta_bar: 0.25 },
            want_eps: false,
            want_gradient: false,
            shape: vec![1],
            state: vec![0.5],
            input: vec![0.8],
        };
        let mut want = vec![0x44, 0x47, 0x50, 0x52, 1, 3, 0x31, 0, 0, 0];
        for v in [0x3fe0u16, 0x3fd0, 0x3fe0, 0x3fd0] {
            want.extend([0, 0, 0, 0, 0, 0]);
            want.extend(v.to_le_bytes());
        }
        want.extend([0, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0x3f, 0xcd, 0xcc, 0x4c, 0x3f]);
        assert_eq!(req.to_frame().to_bytes(), want);
    }

    #[test]
    fn header_layout() {
        let f = Frame::new(MsgType::PredictRequest, vec![9, 8, 7]);
        let b = f.to_bytes();
        assert_eq!(&b[..4], b"DGPR");
        assert_eq!(b[4], 1);
        assert_eq!(b[5], 3);
        assert_eq!(&b[6..10], &[3, 0, 0, 0]);
        assert_eq!(&b[10..], &[9, 8, 7]);
        assert_eq!(read_frame(&mut b.as_slice()).unwrap(), Some(f));
    }

    #[test]
    fn request_byte_layout() {
        let r = request(vec![2], 1.5);
        let p = r.encode();
        assert_eq!(p.len(), 32 + 1 + 4 + 4 + 8 + 8);
        assert_eq!(f64::from_le_bytes(p[..8].try_into().unwrap()), 0.25);
        assert_eq!(p[32], FLAG_WANT_EPS);
        assert_eq!(&p[33..41], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(f32::from_le_bytes(p[45..49].try_into().unwrap()), 1.5);
    }

    #[test]
    fn framing_errors() {
        assert_eq!(read_frame(&mut [].as_slice()).unwrap(), None);
        assert!(read_frame(&mut b"DGPR\x01".as_slice()).is_err());
        assert!(read_frame(&mut b"XXXX\x01\x01\0\0\0\0".as_slice()).is_err());
        assert!(read_frame(&mut b"DGPR\x01\x01\x05\0\0\0ab".as_slice()).is_err());
        assert!(read_frame(&mut b"DGPR\x01\x01\xff\xff\xff\xff".as_slice()).is_err());
    }

    #[test]
    fn payload_errors() {
        let mut p = request(vec![3], 1.0).encode();
        p.pop();
        assert!(PredictRequest::decode(&p).is_err());
        let mut p = request(vec![3], 1.0).encode();
        p.push(0);
        assert!(PredictRequest::decode(&p).is_err());
        assert!(PredictResponse::decode(&[9]).is_err());
        let zero = request(vec![0], 1.0);
        let back = PredictRequest::decode(&zero.encode()).unwrap();
        assert!(!shape_is_valid(&back.shape));
        let mut scalar_shape = request(vec![], 1.0);
        scalar_shape.state.clear();
        scalar_shape.input.clear();
        let back = PredictRequest::decode(&scalar_shape.encode()).unwrap();
        assert!(back.state.is_empty() && !shape_is_valid(&back.shape));
    }

    #[test]
    fn error_response_round_trip() {
        let r = PredictResponse::error(Status::CapabilityMissing, "no gradient");
        let p = r.encode();
        assert_eq!(p[0], 3);
        assert_eq!(PredictResponse::decode(&p).unwrap(), r);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn request_round_trip(shape in prop::collection::vec(1usize..=64, 1..=3), seed in -4.0f32..4.0, grad in any::<bool>()) {
            let mut r = request(shape, seed);
            r.want_gradient = grad;
            let frame = r.to_frame();
            let bytes = frame.to_bytes();
            let back = read_frame(&mut bytes.as_slice()).unwrap().unwrap();
            prop_assert_eq!(&back, &frame);
            prop_assert_eq!(PredictRequest::decode(&back.payload).unwrap(), r);
        }

        #[test]
        fn response_round_trip(shape in prop::collection::vec(1usize..=64, 1..=3), has_eps in any::<bool>(), has_grad in any::<bool>(), v in any::<f32>()) {
            let n: usize = shape.iter().product();
            let res: Vec<f32> = (0..n).map(|i| v + i as f32).collect();
            let r = PredictResponse::Ok {
                shape,
                eps: has_eps.then(|| res.iter().map(|x| -x).collect()),
                gradient: has_grad.then(|| vec![v; n]),
                res,
            };
            let back = PredictResponse::decode(&r.encode()).unwrap();
            // compare bytes so NaN payloads round-trip too
            prop_assert_eq!(back.encode(), r.encode());
        }
    }
}

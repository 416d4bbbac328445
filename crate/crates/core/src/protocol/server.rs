//! In-process protocol server wrapping any [`Predictor`].

use std::io::{Read, Write};

use super::wire::{
    hello_ack_frame, read_frame, shape_is_valid, write_frame, MsgType, PredictRequest,
    PredictResponse, Status, CAP_EPS, CAP_GRADIENT, VERSION,
};
use crate::error::{Error, Result};
use crate::predictors::{Predictor, Query};
use crate::tensor::TensorField;

pub fn capabilities(predictor: &dyn Predictor) -> u8 {
    let mut caps = 0;
    if predictor.has_eps_head() {
        caps |= CAP_EPS;
    }
    if predictor.supports_gradient() {
        caps |= CAP_GRADIENT;
    }
    caps
}

fn to_f32(field: &TensorField) -> Vec<f32> {
    field.data().iter().map(|&v| v as f32).collect()
}

fn field(shape: &[usize], data: &[f32]) -> Result<TensorField> {
    TensorField::new(shape.to_vec(), data.iter().map(|&v| v as f64).collect())
}

fn failure(e: Error) -> PredictResponse {
    let status = match e {
        Error::CapabilityMissing(_) => Status::CapabilityMissing,
        Error::InvalidShape(_) | Error::ShapeMismatch { .. } => Status::InvalidShape,
        _ => Status::Internal,
    };
    PredictResponse::error(status, e.to_string())
}

/// Computes the response to one request.
pub fn handle_predict(predictor: &dyn Predictor, req: &PredictRequest) -> PredictResponse {
    if !shape_is_valid(&req.shape) {
        return PredictResponse::error(Status::InvalidShape, format!("invalid shape {:?}", req.shape));
    }
    if req.want_gradient && !predictor.supports_gradient() {
        return PredictResponse::error(
            Status::CapabilityMissing,
            format!("{} provides no guidance gradient", predictor.describe()),
        );
    }
    let run = || -> Result<PredictResponse> {
        let state = field(&req.shape, &req.state)?;
        let input = field(&req.shape, &req.input)?;
        let q = Query {
            state: &state,
            input: &input,
            t: req.t,
            coeffs: req.coeffs,
        };
        let out = predictor.predict(&q)?;
        state.ensure_same_shape(&out.res)?;
        let eps = match (&out.eps, req.want_eps) {
            (Some(e), true) => {
                state.ensure_same_shape(e)?;
                Some(to_f32(e))
            }
            _ => None,
        };
        let gradient = if req.want_gradient {
            let g = predictor.guidance_gradient(&q)?;
            state.ensure_same_shape(&g)?;
            Some(to_f32(&g))
        } else {
            None
        };
        Ok(PredictResponse::Ok {
            shape: req.shape.clone(),
            res: to_f32(&out.res),
            eps,
            gradient,
        })
    };
    run().unwrap_or_else(failure)
}

/// Counters reported when a serve loop ends.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub requests: usize,
    pub errors: usize,
}

/// Answers frames from `reader` until the stream closes. Malformed payloads
/// get a status-coded reply and the loop continues; a corrupt frame header
/// gets one reply and ends the loop since the stream cannot be resynced.
pub fn serve<R: Read, W: Write>(mut reader: R, mut writer: W, predictor: &dyn Predictor) -> Result<ServeStats> {
    let mut stats = ServeStats::default();
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(stats),
            Err(Error::Io(e)) => return Err(Error::Io(e)),
            Err(e) => {
                stats.errors += 1;
                let reply = PredictResponse::error(Status::Malformed, e.to_string());
                // the peer may already be gone
                let _ = write_frame(&mut writer, &reply.to_frame());
                return Ok(stats);
            }
        };
        let reply = if frame.version != VERSION {
            PredictResponse::error(
                Status::Malformed,
                format!("unsupported protocol version {} (server speaks {VERSION})", frame.version),
            )
            .to_frame()
        } else {
            match MsgType::from_u8(frame.msg_type) {
                Some(MsgType::Hello) => hello_ack_frame(capabilities(predictor)),
                Some(MsgType::PredictRequest) => {
                    stats.requests += 1;
                    match PredictRequest::decode(&frame.payload) {
                        Ok(req) => handle_predict(predictor, &req).to_frame(),
                        Err(e) => PredictResponse::error(Status::Malformed, e.to_string()).to_frame(),
                    }
                }
                _ => PredictResponse::error(
                    Status::Malformed,
                    format!("unexpected message type {}", frame.msg_type),
                )
                .to_frame(),
            }
        };
        if reply.msg_type == MsgType::PredictResponse as u8 && reply.payload[0] != Status::Ok as u8 {
            stats.errors += 1;
        }
        write_frame(&mut writer, &reply)?;
    }
}

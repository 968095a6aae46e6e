//! JSON-lines protocol: one compact JSON object per `\n`-terminated line.
//!
//! Requests carry `id` and `op` plus op-specific fields (`z`, `x`, `spec`,
//! `bypass`, `requests`). Responses carry the same `id`, `ok`, and either
//! `result`/`responses`/descriptor fields or `error`. Floats are written in
//! shortest round-trip form, so values survive the wire bit-for-bit.

use std::collections::{HashMap, HashSet};
use std::io::{self, BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

use super::{Oracle, OracleDescriptor, ValueQuery};
use crate::error::{Error, Result};
use crate::numerics::Vector;
use crate::shift::DirectionSpec;

/// Id used in responses to lines that could not be parsed at all.
pub const UNPARSEABLE_ID: i64 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: i64,
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bypass: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests: Option<Vec<WireRequest>>,
}

impl WireRequest {
    pub fn new(id: i64, op: impl Into<String>) -> Self {
        Self {
            id,
            op: op.into(),
            z: None,
            x: None,
            spec: None,
            bypass: None,
            requests: None,
        }
    }

    pub fn value(id: i64, query: &ValueQuery) -> Self {
        Self {
            z: Some(query.z.to_vec()),
            spec: Some(query.spec.entries().to_vec()),
            bypass: Some(query.bypass),
            ..Self::new(id, "value")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireResult {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: i64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<WireResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_attrs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supports_shift: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supports_composite_value: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responses: Option<Vec<WireResponse>>,
}

impl WireResponse {
    fn ok(id: i64) -> Self {
        Self {
            id,
            ok: true,
            result: None,
            error: None,
            latent_dim: None,
            image_dim: None,
            num_attrs: None,
            supports_shift: None,
            supports_composite_value: None,
            responses: None,
        }
    }

    pub fn failure(id: i64, message: impl Into<String>) -> Self {
        Self {
            ok: false,
            error: Some(message.into()),
            ..Self::ok(id)
        }
    }

    fn with_result(id: i64, result: WireResult) -> Self {
        Self {
            result: Some(result),
            ..Self::ok(id)
        }
    }
}

fn to_line<T: Serialize>(message: &T) -> Result<String> {
    let mut s = serde_json::to_string(message)?;
    s.push('\n');
    Ok(s)
}

// ---------------------------------------------------------------- server

/// Outcome of one request line on the serving side.
#[derive(Debug, Clone, PartialEq)]
pub struct Handled {
    pub response: WireResponse,
    pub shutdown: bool,
}

/// Parses and answers one request line. Never panics on bad input.
pub fn handle_line<O: Oracle + ?Sized>(oracle: &mut O, line: &str) -> Handled {
    let request: WireRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            // Recover the id when the line is an object with an integer id.
            let id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(|id| id.as_i64()))
                .unwrap_or(UNPARSEABLE_ID);
            return Handled {
                response: WireResponse::failure(id, format!("malformed request: {e}")),
                shutdown: false,
            };
        }
    };
    if request.op == "shutdown" {
        return Handled {
            response: WireResponse::ok(request.id),
            shutdown: true,
        };
    }
    Handled {
        response: handle_request(oracle, &request, true),
        shutdown: false,
    }
}

fn handle_request<O: Oracle + ?Sized>(oracle: &mut O, req: &WireRequest, top_level: bool) -> WireResponse {
    match answer(oracle, req, top_level) {
        Ok(resp) => resp,
        Err(message) => WireResponse::failure(req.id, message),
    }
}

fn field<'a>(value: &'a Option<Vec<f64>>, name: &str) -> Result<&'a [f64], String> {
    value.as_deref().ok_or_else(|| format!("missing field {name}"))
}

fn spec_field(value: &Option<Vec<f64>>) -> Result<DirectionSpec, String> {
    DirectionSpec::new(field(value, "spec")?.to_vec()).map_err(|e| e.to_string())
}

fn answer<O: Oracle + ?Sized>(oracle: &mut O, req: &WireRequest, top_level: bool) -> Result<WireResponse, String> {
    let id = req.id;
    let err = |e: Error| e.to_string();
    match req.op.as_str() {
        "meta" => {
            let d = oracle.descriptor().map_err(err)?;
            Ok(WireResponse {
                latent_dim: Some(d.latent_dim),
                image_dim: Some(d.image_dim),
                num_attrs: Some(d.num_attrs),
                supports_shift: Some(d.supports_shift),
                supports_composite_value: Some(d.supports_composite_value),
                ..WireResponse::ok(id)
            })
        }
        "generate" => {
            let x = oracle.generate(field(&req.z, "z")?).map_err(err)?;
            Ok(WireResponse::with_result(id, WireResult::Vector(x.into_inner())))
        }
        "shift" => {
            let spec = spec_field(&req.spec)?;
            let z_hat = oracle.shift(field(&req.z, "z")?, &spec).map_err(err)?;
            Ok(WireResponse::with_result(id, WireResult::Vector(z_hat.into_inner())))
        }
        "predict_attrs" => {
            let y = oracle.predict_attrs(field(&req.x, "x")?).map_err(err)?;
            Ok(WireResponse::with_result(id, WireResult::Vector(y.into_inner())))
        }
        "predict_target" => {
            let t = oracle.predict_target(field(&req.x, "x")?).map_err(err)?;
            Ok(WireResponse::with_result(id, WireResult::Scalar(t)))
        }
        "value" => {
            let query = ValueQuery {
                z: Vector::new(field(&req.z, "z")?.to_vec()).map_err(err)?,
                spec: spec_field(&req.spec)?,
                bypass: req.bypass.unwrap_or(false),
            };
            let v = oracle.value(&query).map_err(err)?;
            Ok(WireResponse::with_result(id, WireResult::Scalar(v)))
        }
        "batch" if top_level => {
            let requests = req.requests.as_ref().ok_or("missing field requests")?;
            let responses = requests
                .iter()
                .map(|r| handle_request(oracle, r, false))
                .collect();
            Ok(WireResponse {
                responses: Some(responses),
                ..WireResponse::ok(id)
            })
        }
        "batch" | "shutdown" => Err(format!("op {} not allowed inside a batch", req.op)),
        _ => Err("unsupported op".into()),
    }
}

/// Answers request lines until `shutdown` or end of input. Blank lines are
/// ignored; every other line gets exactly one response line.
pub fn serve<O, R, W>(oracle: &mut O, reader: R, mut writer: W) -> Result<()>
where
    O: Oracle + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let handled = handle_line(oracle, &line);
        writer.write_all(to_line(&handled.response)?.as_bytes())?;
        writer.flush()?;
        if handled.shutdown {
            break;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- client

/// Client side of the protocol. External oracles never serve gradients, so
/// the descriptor always reports `supports_gradients = false`.
pub struct WireClient<R, W> {
    reader: R,
    writer: W,
    next_id: i64,
    descriptor: Option<OracleDescriptor>,
    child: Option<Child>,
    closed: bool,
}

impl WireClient<BufReader<ChildStdout>, ChildStdin> {
    /// Starts `program args...` and talks to it over its stdin/stdout.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().ok_or_else(|| io::Error::other("child stdin unavailable"))?;
        let stdout = child.stdout.take().ok_or_else(|| io::Error::other("child stdout unavailable"))?;
        let mut client = Self::from_streams(BufReader::new(stdout), stdin);
        client.child = Some(child);
        Ok(client)
    }
}

impl<R: BufRead, W: Write> WireClient<R, W> {
    pub fn from_streams(reader: R, writer: W) -> Self {
        Self {
            reader,
            writer,
            next_id: 0,
            descriptor: None,
            child: None,
            closed: false,
        }
    }

    fn take_id(&mut self) -> i64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn send(&mut self, request: &WireRequest) -> Result<()> {
        self.writer.write_all(to_line(request)?.as_bytes())?;
        self.writer.flush()?;
        Ok(())
    }

    fn receive(&mut self) -> Result<(WireResponse, String)> {
        let mut raw = String::new();
        if self.reader.read_line(&mut raw)? == 0 {
            return Err(Error::Connection(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "oracle closed the stream",
            )));
        }
        let raw = raw.trim_end_matches(['\n', '\r']).to_string();
        match serde_json::from_str(&raw) {
            Ok(resp) => Ok((resp, raw)),
            Err(e) => Err(Error::Protocol {
                message: format!("unparseable response: {e}"),
                raw,
            }),
        }
    }

    /// Sends one request (its id is overwritten) and returns the successful
    /// response with its raw line.
    pub fn call(&mut self, mut request: WireRequest) -> Result<(WireResponse, String)> {
        request.id = self.take_id();
        self.send(&request)?;
        let (resp, raw) = self.receive()?;
        if resp.id != request.id {
            return Err(Error::Protocol {
                message: format!("response id {} does not match request id {}", resp.id, request.id),
                raw,
            });
        }
        if !resp.ok {
            return Err(Error::Remote(resp.error.unwrap_or_else(|| "unspecified failure".into())));
        }
        Ok((resp, raw))
    }

    /// Sends `requests` as one batch and returns the responses in request
    /// order. Ids must be unique; an empty batch is answered locally.
    pub fn batch(&mut self, requests: Vec<WireRequest>) -> Result<Vec<WireResponse>> {
        let mut seen = HashSet::new();
        for r in &requests {
            if !seen.insert(r.id) {
                return Err(Error::Protocol {
                    message: format!("duplicate request id {} in batch", r.id),
                    raw: String::new(),
                });
            }
        }
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        let order: Vec<i64> = requests.iter().map(|r| r.id).collect();
        let envelope = WireRequest {
            requests: Some(requests),
            ..WireRequest::new(0, "batch")
        };
        let (resp, raw) = self.call(envelope)?;
        let protocol = |message: String| Error::Protocol { message, raw: raw.clone() };
        let responses = resp
            .responses
            .ok_or_else(|| protocol("batch response without responses".into()))?;
        let mut by_id = HashMap::with_capacity(responses.len());
        for r in responses {
            let id = r.id;
            if !seen.contains(&id) {
                return Err(protocol(format!("unexpected response id {id}")));
            }
            if by_id.insert(id, r).is_some() {
                return Err(protocol(format!("duplicate response id {id}")));
            }
        }
        order
            .iter()
            .map(|id| by_id.remove(id).ok_or_else(|| protocol(format!("missing response id {id}"))))
            .collect()
    }

    /// Asks the server to stop and reaps a spawned child.
    pub fn shutdown(&mut self) -> Result<()> {
        if self.closed {
            return Ok(());
        }
        self.closed = true;
        self.call(WireRequest::new(0, "shutdown"))?;
        if let Some(mut child) = self.child.take() {
            child.wait()?;
        }
        Ok(())
    }

    fn scalar(resp: WireResponse, raw: String) -> Result<f64> {
        match resp.result {
            Some(WireResult::Scalar(v)) if v.is_finite() => Ok(v),
            _ => Err(Error::Protocol {
                message: "expected a finite scalar result".into(),
                raw,
            }),
        }
    }

    fn vector(resp: WireResponse, raw: String, len: usize) -> Result<Vector> {
        match resp.result {
            Some(WireResult::Vector(v)) if v.len() == len => Vector::new(v).map_err(|e| Error::Protocol {
                message: e.to_string(),
                raw,
            }),
            _ => Err(Error::Protocol {
                message: format!("expected a vector result of length {len}"),
                raw,
            }),
        }
    }
}

impl<R: BufRead, W: Write> Oracle for WireClient<R, W> {
    fn descriptor(&mut self) -> Result<OracleDescriptor> {
        if let Some(d) = self.descriptor {
            return Ok(d);
        }
        let (resp, raw) = self.call(WireRequest::new(0, "meta"))?;
        let (Some(latent_dim), Some(image_dim), Some(num_attrs)) = (resp.latent_dim, resp.image_dim, resp.num_attrs)
        else {
            return Err(Error::Protocol {
                message: "meta response missing latent_dim, image_dim or num_attrs".into(),
                raw,
            });
        };
        if latent_dim == 0 || image_dim == 0 || num_attrs == 0 {
            return Err(Error::Protocol {
                message: "meta response has a zero dimension".into(),
                raw,
            });
        }
        let d = OracleDescriptor {
            latent_dim,
            image_dim,
            num_attrs,
            supports_gradients: false,
            supports_shift: resp.supports_shift.unwrap_or(false),
            supports_composite_value: resp.supports_composite_value.unwrap_or(false),
        };
        self.descriptor = Some(d);
        Ok(d)
    }

    fn generate(&mut self, z: &[f64]) -> Result<Vector> {
        let n = self.descriptor()?.image_dim;
        let (resp, raw) = self.call(WireRequest {
            z: Some(z.to_vec()),
            ..WireRequest::new(0, "generate")
        })?;
        Self::vector(resp, raw, n)
    }

    fn predict_attrs(&mut self, x: &[f64]) -> Result<Vector> {
        let m = self.descriptor()?.num_attrs;
        let (resp, raw) = self.call(WireRequest {
            x: Some(x.to_vec()),
            ..WireRequest::new(0, "predict_attrs")
        })?;
        Self::vector(resp, raw, m)
    }

    fn predict_target(&mut self, x: &[f64]) -> Result<f64> {
        let (resp, raw) = self.call(WireRequest {
            x: Some(x.to_vec()),
            ..WireRequest::new(0, "predict_target")
        })?;
        Self::scalar(resp, raw)
    }

    fn shift(&mut self, z: &[f64], spec: &DirectionSpec) -> Result<Vector> {
        let d = self.descriptor()?.latent_dim;
        let (resp, raw) = self.call(WireRequest {
            z: Some(z.to_vec()),
            spec: Some(spec.entries().to_vec()),
            ..WireRequest::new(0, "shift")
        })?;
        Self::vector(resp, raw, d)
    }

    fn value(&mut self, query: &ValueQuery) -> Result<f64> {
        let (resp, raw) = self.call(WireRequest::value(0, query))?;
        Self::scalar(resp, raw)
    }

    fn values(&mut self, queries: &[ValueQuery]) -> Result<Vec<f64>> {
        let requests: Vec<WireRequest> = queries
            .iter()
            .map(|q| {
                let id = self.take_id();
                WireRequest::value(id, q)
            })
            .collect();
        self.batch(requests)?
            .into_iter()
            .map(|resp| {
                if !resp.ok {
                    return Err(Error::Remote(resp.error.unwrap_or_else(|| "unspecified failure".into())));
                }
                let raw = serde_json::to_string(&resp)?;
                Self::scalar(resp, raw)
            })
            .collect()
    }
}

impl<R, W> Drop for WireClient<R, W> {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            // Best effort: the server may already be gone.
            if !self.closed {
                let _ = child.kill();
            }
            let _ = child.wait();
        }
    }
}

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use splatsim::camera::CameraRecord;

/// Largest accepted message body.
pub const MAX_MESSAGE_BYTES: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Loaded,
    Running,
    Paused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Load {
        scene_path: String,
    },
    Start {},
    Pause {},
    Reset {},
    SetMaterial {
        #[serde(rename = "E")]
        youngs_modulus: f64,
        nu: f64,
    },
    ApplyForce {
        center: [f64; 3],
        radius: f64,
        force: [f64; 3],
        duration_steps: u64,
    },
    /// Replaces the camera and/or changes the render resolution.
    SetCamera {
        #[serde(default)]
        camera: Option<CameraRecord>,
        #[serde(default)]
        width: Option<usize>,
        #[serde(default)]
        height: Option<usize>,
    },
    GetState {},
}

impl Request {
    pub fn name(&self) -> &'static str {
        match self {
            Request::Load { .. } => "load",
            Request::Start {} => "start",
            Request::Pause {} => "pause",
            Request::Reset {} => "reset",
            Request::SetMaterial { .. } => "set_material",
            Request::ApplyForce { .. } => "apply_force",
            Request::SetCamera { .. } => "set_camera",
            Request::GetState {} => "get_state",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialReport {
    #[serde(rename = "E")]
    pub youngs_modulus: f64,
    pub nu: f64,
    pub density: f64,
}

/// Reply to one request. `phase` and `step` are present whenever a scene is
/// loaded; the remaining optional fields only on `get_state`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cmd: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Phase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_per_sec: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending_forces: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<MaterialReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraRecord>,
    /// Alpha-normalized rendered depth at the central pixel, if covered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_depth: Option<f64>,
}

impl Response {
    pub fn error(cmd: Option<&str>, msg: impl Into<String>) -> Self {
        Self { ok: false, cmd: cmd.map(str::to_owned), error: Some(msg.into()), ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePayload {
    pub step: u64,
    /// Base64-encoded PNG.
    pub image_b64: String,
    /// Wall-clock time of the step in milliseconds.
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMessage {
    pub frame: FramePayload,
}

/// Reads one `u32` big-endian length-prefixed message. `Ok(None)` on a clean
/// end of stream before the prefix.
pub fn read_message(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_MESSAGE_BYTES {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("message of {n} bytes exceeds limit")));
    }
    let mut body = vec![0u8; n];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn write_message(w: &mut impl Write, body: &[u8]) -> io::Result<()> {
    let n = u32::try_from(body.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "message too long"))?;
    let mut buf = Vec::with_capacity(4 + body.len());
    buf.extend_from_slice(&n.to_be_bytes());
    buf.extend_from_slice(body);
    w.write_all(&buf)?;
    w.flush()
}

pub fn write_json(w: &mut impl Write, value: &impl Serialize) -> io::Result<()> {
    write_message(w, &serde_json::to_vec(value).expect("protocol messages serialize"))
}

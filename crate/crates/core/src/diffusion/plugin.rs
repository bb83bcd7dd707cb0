use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use tempfile::TempDir;

use super::prior::Denoiser;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::tomography::io::{read_field, write_field, FieldHeader, FieldKind, Units};

pub const DEFAULT_PLUGIN_TIMEOUT: Duration = Duration::from_secs(30);

/// Messages sent to a denoiser plugin, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PluginRequest {
    Hello {
        shape: [usize; 2],
        #[serde(rename = "T")]
        steps: usize,
    },
    Denoise {
        t: usize,
        file: PathBuf,
    },
}

/// Messages a plugin writes back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PluginResponse {
    Ready(bool),
    Done { file: PathBuf },
    Error(String),
}

/// An out-of-process denoiser speaking the line-delimited JSON protocol. One request is
/// in flight at a time; any protocol failure poisons the handle.
pub struct PluginDenoiser {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    workdir: TempDir,
    shape: (usize, usize),
    timeout: Duration,
    requests: u64,
    failed: bool,
}

fn unavailable(msg: impl Into<String>) -> Error {
    Error::DenoiserUnavailable(msg.into())
}

impl PluginDenoiser {
    /// Starts `command` with piped stdio and performs the handshake.
    pub fn spawn(mut command: Command, shape: (usize, usize), steps: usize, timeout: Duration) -> Result<Self> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| unavailable(format!("cannot start plugin: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout was piped");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let end = line.is_err();
                if tx.send(line).is_err() || end {
                    break;
                }
            }
        });
        let workdir = tempfile::tempdir().map_err(|e| unavailable(format!("cannot create plugin workdir: {e}")))?;
        let mut plugin =
            PluginDenoiser { child, stdin, lines, workdir, shape, timeout, requests: 0, failed: false };
        match plugin.exchange(&PluginRequest::Hello { shape: [shape.0, shape.1], steps })? {
            PluginResponse::Ready(true) => Ok(plugin),
            other => Err(unavailable(format!("unexpected handshake reply {other:?}"))),
        }
    }

    fn exchange(&mut self, request: &PluginRequest) -> Result<PluginResponse> {
        let result = self.exchange_inner(request);
        if result.is_err() {
            self.failed = true;
        }
        result
    }

    fn exchange_inner(&mut self, request: &PluginRequest) -> Result<PluginResponse> {
        if self.failed {
            return Err(unavailable("plugin failed earlier"));
        }
        let stdin = self.stdin.as_mut().ok_or_else(|| unavailable("plugin stdin closed"))?;
        let mut line = serde_json::to_string(request).expect("requests serialize");
        line.push('\n');
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| unavailable(format!("cannot write to plugin: {e}")))?;
        let reply = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => return Err(unavailable(format!("cannot read from plugin: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                return Err(unavailable(format!("plugin did not answer within {:?}", self.timeout)))
            }
            Err(RecvTimeoutError::Disconnected) => return Err(unavailable("plugin exited")),
        };
        serde_json::from_str(&reply).map_err(|e| unavailable(format!("malformed plugin reply {reply:?}: {e}")))
    }
}

impl Denoiser for PluginDenoiser {
    fn denoise(&mut self, x_t: &Array2<f64>, t: usize, _schedule: &NoiseSchedule) -> Result<Array2<f64>> {
        if x_t.dim() != self.shape {
            return Err(Error::Contract(format!("plugin expects {:?}, got {:?}", self.shape, x_t.dim())));
        }
        self.requests += 1;
        let file = self.workdir.path().join(format!("xt_{}.f32", self.requests));
        let header = FieldHeader::new(x_t.dim(), FieldKind::Image, Units::Normalized);
        write_field(&file, x_t, &header)?;
        let reply = self.exchange(&PluginRequest::Denoise { t, file })?;
        let out_file = match reply {
            PluginResponse::Done { file } => file,
            PluginResponse::Error(msg) => {
                self.failed = true;
                return Err(unavailable(format!("plugin reported: {msg}")));
            }
            other => {
                self.failed = true;
                return Err(unavailable(format!("unexpected plugin reply {other:?}")));
            }
        };
        let (values, _) = read_field(&out_file).map_err(|e| {
            self.failed = true;
            unavailable(format!("unreadable plugin output: {e}"))
        })?;
        if values.dim() != self.shape {
            self.failed = true;
            return Err(unavailable(format!("plugin returned shape {:?}, expected {:?}", values.dim(), self.shape)));
        }
        Ok(values)
    }
}

impl Drop for PluginDenoiser {
    fn drop(&mut self) {
        drop(self.stdin.take());
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

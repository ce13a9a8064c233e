//! A plant that delegates evaluation to an external simulator process.
//!
//! The simulator is any executable speaking a line-oriented protocol on
//! stdin/stdout:
//!
//! ```text
//! request:  EVAL x0 x1 … u0 u1 …\n
//! response: OK dx0 dx1 …\n        (exactly dim_x values)
//!       or: ERR human-readable message\n
//! shutdown: QUIT\n                (no response expected)
//! ```
//!
//! Numbers travel as shortest-roundtrip decimal floats, so values survive
//! the trip bit for bit with any runtime that prints doubles faithfully.
//! Anything that violates the protocol — wrong verb, wrong arity, a
//! non-finite derivative, a closed pipe — surfaces as [`Error::Protocol`].

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use nalgebra::DVector;

use crate::error::{Error, Result};

use super::{check_dims, Plant};

/// Handle to a running simulator subprocess.
#[derive(Debug)]
pub struct SubprocessPlant {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    dim_x: usize,
    dim_u: usize,
}

impl SubprocessPlant {
    /// Spawns `program args…` and prepares it for evaluation requests.
    ///
    /// The caller declares the dimensions; every response is checked against
    /// them. The child's stderr is inherited so simulator diagnostics reach
    /// the operator's terminal.
    pub fn spawn(program: &str, args: &[String], dim_x: usize, dim_u: usize) -> Result<Self> {
        if dim_x == 0 || dim_u == 0 {
            return Err(Error::InvalidValue {
                name: "subprocess plant dimensions".into(),
                value: 0.0,
                requirement: "both dim_x and dim_u must be positive".into(),
            });
        }
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Protocol {
                detail: format!("could not start simulator `{program}`: {e}"),
            })?;
        let stdin = child.stdin.take().expect("stdin was requested piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout was requested piped"));
        Ok(Self {
            child,
            stdin,
            stdout,
            dim_x,
            dim_u,
        })
    }

    /// Sends one request line and reads one response line.
    fn round_trip(&mut self, request: &str) -> Result<String> {
        self.stdin
            .write_all(request.as_bytes())
            .and_then(|()| self.stdin.flush())
            .map_err(|e| Error::Protocol {
                detail: format!("could not write to simulator: {e}"),
            })?;
        let mut line = String::new();
        let read = self.stdout.read_line(&mut line).map_err(|e| Error::Protocol {
            detail: format!("could not read from simulator: {e}"),
        })?;
        if read == 0 {
            return Err(Error::Protocol {
                detail: "simulator closed its output stream".into(),
            });
        }
        Ok(line)
    }
}

impl Plant for SubprocessPlant {
    fn dim_x(&self) -> usize {
        self.dim_x
    }

    fn dim_u(&self) -> usize {
        self.dim_u
    }

    fn eval(&mut self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dims("subprocess plant", x, u, self.dim_x, self.dim_u)?;
        let mut request = String::from("EVAL");
        for v in x.iter().chain(u.iter()) {
            request.push(' ');
            request.push_str(&v.to_string());
        }
        request.push('\n');
        let line = self.round_trip(&request)?;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("OK") => {}
            Some("ERR") => {
                return Err(Error::Protocol {
                    detail: format!("simulator error: {}", tokens.collect::<Vec<_>>().join(" ")),
                });
            }
            Some(other) => {
                return Err(Error::Protocol {
                    detail: format!("unexpected response verb `{other}`"),
                });
            }
            None => {
                return Err(Error::Protocol {
                    detail: "empty response line".into(),
                });
            }
        }
        let values: Vec<f64> = tokens
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Protocol {
                    detail: format!("unparseable derivative component `{t}`"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != self.dim_x {
            return Err(Error::Protocol {
                detail: format!(
                    "expected {} derivative components, got {}",
                    self.dim_x,
                    values.len()
                ),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Protocol {
                detail: "simulator returned a non-finite derivative".into(),
            });
        }
        Ok(DVector::from_vec(values))
    }
}

impl Drop for SubprocessPlant {
    fn drop(&mut self) {
        // Ask politely, then make sure the child is gone either way.
        let _ = self.stdin.write_all(b"QUIT\n");
        let _ = self.stdin.flush();
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

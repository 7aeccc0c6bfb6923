//! Worker side of the client/worker pipe protocol.
//!
//! The worker writes one READY frame (JSON, [`Ready`]) once its dataset is
//! in place, then answers each request frame on stdin with one response
//! frame on stdout until stdin closes, and exits 0.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::frame::{read_frame, write_frame};
use super::memory::{Fault, Layout, Memory};
use crate::region::RegionKind;

pub const PROTOCOL: &str = "hrmlab-worker/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ready {
    pub protocol: String,
    pub workload: String,
    /// Address of arena offset 0 in the worker's address space.
    pub base: u64,
    pub layout: Layout,
    pub dataset_checksum: String,
}

pub fn serve<M, R, W, F>(mem: &mut M, input: &mut R, output: &mut W, mut handle: F) -> io::Result<()>
where
    M: Memory,
    R: Read,
    W: Write,
    F: FnMut(&mut M, &[u8]) -> Result<Vec<u8>, Fault>,
{
    while let Some(req) = read_frame(input)? {
        let resp = handle(mem, &req).map_err(|f| io::Error::other(format!("{f:?}")))?;
        write_frame(output, &resp)?;
    }
    Ok(())
}

/// Test fixture: a flat heap buffer with `W <off u32> <byte>` and `R <off u32>` requests.
pub fn echo_handler<M: Memory>(mem: &mut M, req: &[u8]) -> Result<Vec<u8>, Fault> {
    let off = match req.get(1..5) {
        Some(b) => u64::from(u32::from_le_bytes(b.try_into().unwrap())),
        None => return Ok(b"ERROR".to_vec()),
    };
    match (req[0], req.get(5)) {
        (b'W', Some(&v)) => mem.store(off, &[v]).map(|_| b"OK".to_vec()),
        (b'R', None) => mem.read_vec(off, 1),
        _ => Ok(b"ERROR".to_vec()),
    }
}

pub fn echo_layout(len: u64) -> Layout {
    Layout::builder().segment("echo.data", RegionKind::Heap, len).build()
}

/// Entry point shared by `hrmlab-worker` and `hrmlab workload run`.
/// Returns the process exit code.
#[cfg(target_os = "linux")]
pub fn worker_main<S: AsRef<str>>(args: &[S]) -> i32 {
    use super::native::NativeMemory;
    use super::{generate_dataset, Workload, WorkloadSpec};

    let args: Vec<&str> = args.iter().map(AsRef::as_ref).collect();
    let stdin = io::stdin();
    let stdout = io::stdout();
    let mut input = stdin.lock();
    let mut output = stdout.lock();
    let ready = |out: &mut io::StdoutLock, r: Ready| {
        write_frame(out, &serde_json::to_vec(&r).expect("ready serializes"))
    };

    let result = match args.as_slice() {
        ["fixture", "exit", code] => return code.parse().unwrap_or(2),
        ["fixture", "segv"] => {
            let mut mem = NativeMemory::new(&[0]).expect("mmap");
            let _ = mem.read_vec(1 << 20, 1);
            unreachable!("out-of-bounds read returned");
        }
        ["fixture", "idle"] => {
            let announced = ready(
                &mut output,
                Ready {
                    protocol: PROTOCOL.into(),
                    workload: "fixture-idle".into(),
                    base: 0,
                    layout: Layout { segments: vec![] },
                    dataset_checksum: String::new(),
                },
            );
            if announced.is_err() {
                return 1;
            }
            loop {
                std::thread::sleep(std::time::Duration::from_secs(1));
            }
        }
        ["fixture", "echo", len] => {
            let Ok(len) = len.parse::<usize>() else {
                eprintln!("fixture echo: bad length `{len}`");
                return 2;
            };
            let mut mem = match NativeMemory::new(&vec![0; len]) {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("fixture echo: {e}");
                    return 1;
                }
            };
            ready(
                &mut output,
                Ready {
                    protocol: PROTOCOL.into(),
                    workload: "fixture-echo".into(),
                    base: mem.base(),
                    layout: echo_layout(len as u64),
                    dataset_checksum: String::new(),
                },
            )
            .and_then(|_| serve(&mut mem, &mut input, &mut output, echo_handler))
        }
        _ => {
            let spec = match WorkloadSpec::from_args(&args) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("{e}");
                    return 2;
                }
            };
            let dataset = match generate_dataset(&spec) {
                Ok(d) => d,
                Err(e) => {
                    eprintln!("{e}");
                    return 2;
                }
            };
            let workload = Workload::new(&spec, &dataset.layout);
            let mut mem = match NativeMemory::new(&dataset.image) {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("arena allocation: {e}");
                    return 1;
                }
            };
            ready(
                &mut output,
                Ready {
                    protocol: PROTOCOL.into(),
                    workload: spec.id().version().into(),
                    base: mem.base(),
                    layout: dataset.layout.clone(),
                    dataset_checksum: dataset.checksum(),
                },
            )
            .and_then(|_| serve(&mut mem, &mut input, &mut output, |m, q| workload.handle(m, q)))
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            eprintln!("worker: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workloads::frame::{encode, split_frames};
    use crate::workloads::ImageMemory;

    #[test]
    fn serve_answers_each_frame() {
        let mut mem = ImageMemory::new(4);
        let mut input = Vec::new();
        input.extend(encode(&[b'W', 2, 0, 0, 0, 0xAB]));
        input.extend(encode(&[b'R', 2, 0, 0, 0]));
        input.extend(encode(b"?"));
        let mut out = Vec::new();
        serve(&mut mem, &mut &input[..], &mut out, echo_handler).unwrap();
        let frames = split_frames(&out).unwrap();
        assert_eq!(frames, vec![b"OK".to_vec(), vec![0xAB], b"ERROR".to_vec()]);
    }
}

//! ptrace-driven backend for real worker processes.
//!
//! The target is spawned with `PTRACE_TRACEME` and address-space
//! randomization disabled, so it stops at its first instruction after exec.
//! Memory is read and written one aligned 8-byte word at a time with
//! PEEKDATA/POKEDATA while the target is stopped.
//!
//! Stuck-at pins use an x86-64 hardware write watchpoint on the containing
//! word when one of the four debug registers is free: the target traps right
//! after each write to the word and the pin is re-asserted before it runs
//! again. Without a free register the pin is re-asserted every
//! `reassert_interval_us` by stopping the target, and the receipt says so.
//!
//! All ptrace calls must come from the thread that spawned the session.

use std::io::{Read, Write};
use std::os::fd::AsFd;
use std::os::unix::process::CommandExt;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::time::{Duration, Instant};

use nix::errno::Errno;
use nix::poll::{poll, PollFd, PollFlags, PollTimeout};
use nix::sys::personality::{self, Persona};
use nix::sys::ptrace;
use nix::sys::signal::{kill, Signal};
use nix::sys::wait::{waitpid, WaitPidFlag, WaitStatus};
use nix::unistd::Pid;

use super::{
    flip_receipt, force_bit, BackendError, BackendKind, ErrorSpec, EventQueue, InjectionReceipt,
    Journal, Mechanism, ReceiptAction, Reply, Session, SessionEvent, DEFAULT_REASSERT_US,
};
use crate::region::{parse_region_map, InjectionTarget, MemoryRegionMap};
use crate::workloads::frame::{encode, FrameDecoder};
use crate::workloads::serve::{Ready, PROTOCOL};

const READY_TIMEOUT: Duration = Duration::from_secs(30);
const POLL_SLICE_MS: u16 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Entry,
    Running,
    Hung,
    Ended(SessionEvent),
}

#[derive(Debug, Clone)]
struct DebugPin {
    spec: ErrorSpec,
    address: u64,
    value: bool,
    slot: Option<usize>,
    interval: Duration,
    next_due: Instant,
}

enum Pumped {
    Frame(Vec<u8>),
    Event(SessionEvent),
    Deadline,
}

pub struct DebuggerSession {
    pid: Pid,
    _child: Child,
    stdin: Option<ChildStdin>,
    stdout: ChildStdout,
    stdout_eof: bool,
    decoder: FrameDecoder,
    state: State,
    stopped: bool,
    started: Option<Instant>,
    ready: Option<Ready>,
    map: Option<MemoryRegionMap>,
    pins: Vec<DebugPin>,
    slots: [Option<u64>; 4],
    journal: Journal,
    events: EventQueue,
}

fn os(context: &str, e: impl std::fmt::Display) -> BackendError {
    BackendError::Session(format!("{context}: {e}"))
}

impl DebuggerSession {
    pub fn spawn(argv: &[String], env: &[(String, String)]) -> Result<Self, BackendError> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| BackendError::Launch("empty command".into()))?;
        let mut cmd = Command::new(program);
        cmd.args(args)
            .envs(env.iter().map(|(k, v)| (k, v)))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit());
        // SAFETY: only async-signal-safe syscalls run between fork and exec.
        unsafe {
            cmd.pre_exec(|| {
                ptrace::traceme().map_err(std::io::Error::from)?;
                if let Ok(p) = personality::get() {
                    let _ = personality::set(p | Persona::ADDR_NO_RANDOMIZE);
                }
                Ok(())
            });
        }
        let mut child = cmd
            .spawn()
            .map_err(|e| BackendError::Launch(format!("{program}: {e}")))?;
        let pid = Pid::from_raw(child.id() as i32);
        match waitpid(pid, None) {
            Ok(WaitStatus::Stopped(_, Signal::SIGTRAP)) => {}
            Ok(other) => return Err(BackendError::Launch(format!("{program}: unexpected first stop {other:?}"))),
            Err(e) => return Err(BackendError::Launch(format!("{program}: waitpid: {e}"))),
        }
        if let Err(e) = ptrace::setoptions(pid, ptrace::Options::PTRACE_O_EXITKILL) {
            let _ = kill(pid, Signal::SIGKILL);
            let _ = waitpid(pid, None);
            return Err(BackendError::Launch(format!("{program}: PTRACE_SETOPTIONS: {e}")));
        }
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        Ok(DebuggerSession {
            pid,
            _child: child,
            stdin,
            stdout,
            stdout_eof: false,
            decoder: FrameDecoder::default(),
            state: State::Entry,
            stopped: true,
            started: None,
            ready: None,
            map: None,
            pins: Vec::new(),
            slots: [None; 4],
            journal: Journal::default(),
            events: EventQueue::default(),
        })
    }

    pub fn pid(&self) -> i32 {
        self.pid.as_raw()
    }

    /// Reads one byte at an absolute target address.
    pub fn read_address(&mut self, address: u64) -> Result<u8, BackendError> {
        self.with_stopped(|s| s.peek(address))
    }

    pub fn ready_info(&self) -> Option<&Ready> {
        self.ready.as_ref()
    }

    fn at_us(&self) -> u64 {
        self.elapsed().as_micros() as u64
    }

    fn end(&mut self, e: SessionEvent) {
        self.state = State::Ended(e);
        self.stopped = false;
        self.events.post(e);
    }

    fn live(&self) -> Result<(), BackendError> {
        match self.state {
            State::Ended(e) => Err(BackendError::Session(format!("target already ended ({e:?})"))),
            _ => Ok(()),
        }
    }

    fn cont(&mut self, sig: Option<Signal>) {
        if ptrace::cont(self.pid, sig).is_ok() {
            self.stopped = false;
        }
    }

    /// Handles one wait status; returns true when the target ended.
    fn on_status(&mut self, status: WaitStatus) -> bool {
        match status {
            WaitStatus::Exited(_, code) => {
                self.end(SessionEvent::Exited(code));
                true
            }
            WaitStatus::Signaled(_, sig, _) => {
                self.end(SessionEvent::Signaled(sig as i32));
                true
            }
            WaitStatus::Stopped(_, Signal::SIGTRAP) => {
                self.on_trap();
                false
            }
            WaitStatus::Stopped(_, Signal::SIGSTOP) => {
                self.cont(None);
                false
            }
            WaitStatus::Stopped(_, sig) => {
                self.cont(Some(sig));
                false
            }
            WaitStatus::StillAlive => false,
            _ => {
                self.cont(None);
                false
            }
        }
    }

    fn on_trap(&mut self) {
        let hits = watch::take_hits(self.pid);
        let hw_pins: Vec<usize> = (0..self.pins.len())
            .filter(|&i| match self.pins[i].slot {
                Some(s) => hits == 0 || hits & (1 << s) != 0,
                None => false,
            })
            .collect();
        if hw_pins.is_empty() {
            self.cont(Some(Signal::SIGTRAP));
            return;
        }
        for i in hw_pins {
            let address = self.pins[i].address;
            self.reassert(i, Mechanism::HwWatchpoint);
            self.events.post(SessionEvent::WatchHit { address });
        }
        self.cont(None);
    }

    fn reassert(&mut self, i: usize, mechanism: Mechanism) {
        let pin = self.pins[i].clone();
        let Ok(pre) = self.peek(pin.address) else {
            return;
        };
        let post = force_bit(pre, pin.spec.target.bit, pin.value);
        if pre != post && self.poke(pin.address, post).is_ok() {
            let at_us = self.at_us();
            self.journal.record(InjectionReceipt {
                action: ReceiptAction::Reassert,
                target: pin.spec.target,
                address: pin.address,
                mode: Some(pin.spec.mode),
                pre,
                post,
                at_us,
                mechanism,
                count: 1,
                notice: None,
            });
        }
    }

    /// Brings a running target to a ptrace stop. Returns whether it was running.
    fn stop(&mut self) -> Result<bool, BackendError> {
        self.live()?;
        if self.stopped {
            return Ok(false);
        }
        kill(self.pid, Signal::SIGSTOP).map_err(|e| os("SIGSTOP", e))?;
        loop {
            match waitpid(self.pid, Some(WaitPidFlag::__WALL)) {
                Ok(WaitStatus::Stopped(_, Signal::SIGSTOP)) => {
                    self.stopped = true;
                    return Ok(true);
                }
                Ok(status) => {
                    if self.on_status(status) {
                        return Err(BackendError::Session("target ended while being stopped".into()));
                    }
                }
                Err(Errno::EINTR) => {}
                Err(e) => return Err(os("waitpid", e)),
            }
        }
    }

    fn with_stopped<T>(
        &mut self,
        f: impl FnOnce(&mut Self) -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let was_running = self.stop()?;
        let out = f(self);
        if was_running && self.state != State::Entry {
            self.cont(None);
        }
        out
    }

    fn peek(&self, addr: u64) -> Result<u8, BackendError> {
        let word = ptrace::read(self.pid, (addr & !7) as ptrace::AddressType).map_err(|e| {
            BackendError::Access {
                address: addr,
                reason: format!("PTRACE_PEEKDATA: {e}"),
            }
        })?;
        Ok((word as u64).to_le_bytes()[(addr & 7) as usize])
    }

    fn poke(&self, addr: u64, value: u8) -> Result<(), BackendError> {
        let aligned = addr & !7;
        let access = |e: Errno| BackendError::Access {
            address: addr,
            reason: format!("ptrace word access: {e}"),
        };
        let word = ptrace::read(self.pid, aligned as ptrace::AddressType).map_err(access)?;
        let mut bytes = (word as u64).to_le_bytes();
        bytes[(addr & 7) as usize] = value;
        ptrace::write(
            self.pid,
            aligned as ptrace::AddressType,
            u64::from_le_bytes(bytes) as libc::c_long,
        )
        .map_err(access)
    }

    fn address(&self, target: &InjectionTarget) -> Result<u64, BackendError> {
        let map = self
            .map
            .as_ref()
            .ok_or_else(|| BackendError::Session("no target map before the worker is ready".into()))?;
        Ok(map.resolve(target)?)
    }

    fn due_timed_pins(&self, now: Instant) -> bool {
        self.pins.iter().any(|p| p.slot.is_none() && p.next_due <= now)
    }

    fn run_timed_reasserts(&mut self) {
        let now = Instant::now();
        let due: Vec<usize> = (0..self.pins.len())
            .filter(|&i| self.pins[i].slot.is_none() && self.pins[i].next_due <= now)
            .collect();
        let _ = self.with_stopped(|s| {
            for i in due {
                s.reassert(i, Mechanism::TimedReassert);
                s.pins[i].next_due = now + s.pins[i].interval;
            }
            Ok(())
        });
    }

    fn read_stdout(&mut self, wait_ms: u16) {
        if self.stdout_eof {
            std::thread::sleep(Duration::from_millis(u64::from(wait_ms.max(1))));
            return;
        }
        let mut fds = [PollFd::new(self.stdout.as_fd(), PollFlags::POLLIN)];
        match poll(&mut fds, PollTimeout::from(wait_ms)) {
            Ok(n) if n > 0 => {
                let mut buf = [0u8; 65536];
                match self.stdout.read(&mut buf) {
                    Ok(0) => self.stdout_eof = true,
                    Ok(n) => self.decoder.push(&buf[..n]),
                    Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                    Err(_) => self.stdout_eof = true,
                }
            }
            _ => {}
        }
    }

    /// Drives the target until a frame (when wanted), an event, or the deadline.
    fn pump(&mut self, deadline: Instant, want_frame: bool) -> Result<Pumped, BackendError> {
        loop {
            if want_frame {
                if let Some(f) = self.decoder.next_frame().map_err(|e| BackendError::Protocol(e.to_string()))? {
                    return Ok(Pumped::Frame(f));
                }
                if let State::Ended(e) = self.state {
                    return Ok(Pumped::Event(e));
                }
            } else if let Some(e) = self.events.try_pop() {
                return Ok(Pumped::Event(e));
            }
            if !matches!(self.state, State::Ended(_)) {
                match waitpid(self.pid, Some(WaitPidFlag::WNOHANG | WaitPidFlag::__WALL)) {
                    Ok(WaitStatus::StillAlive) | Err(Errno::EINTR) => {}
                    Ok(status) => {
                        if self.on_status(status) {
                            while !self.stdout_eof {
                                self.read_stdout(0);
                            }
                        }
                        continue;
                    }
                    Err(e) => return Err(os("waitpid", e)),
                }
                if self.due_timed_pins(Instant::now()) {
                    self.run_timed_reasserts();
                }
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(Pumped::Deadline);
            }
            let left = (deadline - now).as_millis().min(u128::from(POLL_SLICE_MS)) as u16;
            self.read_stdout(left);
        }
    }

    fn install_watchpoint(&mut self, address: u64) -> Result<usize, String> {
        let word = address & !7;
        if let Some(i) = self.slots.iter().position(|s| *s == Some(word)) {
            return Ok(i);
        }
        let Some(i) = self.slots.iter().position(Option::is_none) else {
            return Err("all four debug registers in use".into());
        };
        let mut enabled: Vec<(usize, u64)> =
            self.slots.iter().enumerate().filter_map(|(j, s)| s.map(|a| (j, a))).collect();
        enabled.push((i, word));
        watch::program(self.pid, i, word, &enabled)?;
        self.slots[i] = Some(word);
        Ok(i)
    }
}

impl Session for DebuggerSession {
    fn kind(&self) -> BackendKind {
        BackendKind::Debugger
    }

    fn dataset_checksum(&self) -> Option<String> {
        self.ready.as_ref().map(|r| r.dataset_checksum.clone())
    }

    fn resume(&mut self) -> Result<(), BackendError> {
        if self.state != State::Entry {
            return Err(BackendError::Session("resume called twice".into()));
        }
        self.state = State::Running;
        self.started = Some(Instant::now());
        self.cont(None);
        match self.pump(Instant::now() + READY_TIMEOUT, true)? {
            Pumped::Frame(f) => {
                let ready: Ready = serde_json::from_slice(&f)
                    .map_err(|e| BackendError::Protocol(format!("READY frame: {e}")))?;
                if ready.protocol != PROTOCOL {
                    return Err(BackendError::Protocol(format!("unsupported protocol `{}`", ready.protocol)));
                }
                let map = ready.layout.region_map().rebased(ready.base)?;
                self.map = Some(map);
                self.ready = Some(ready);
                Ok(())
            }
            // Plain programs never send READY; they run until they end.
            Pumped::Event(_) => Ok(()),
            Pumped::Deadline => Err(BackendError::Protocol("worker never became ready".into())),
        }
    }

    fn target_map(&self) -> Option<&MemoryRegionMap> {
        self.map.as_ref()
    }

    fn capture_region_map(&mut self) -> Result<MemoryRegionMap, BackendError> {
        self.live()?;
        let text = std::fs::read_to_string(format!("/proc/{}/maps", self.pid))
            .map_err(|e| os("reading maps", e))?;
        Ok(parse_region_map(&text)?)
    }

    fn read_byte(&mut self, target: &InjectionTarget) -> Result<u8, BackendError> {
        let a = self.address(target)?;
        self.with_stopped(|s| s.peek(a))
    }

    fn write_byte(&mut self, target: &InjectionTarget, value: u8) -> Result<(), BackendError> {
        let a = self.address(target)?;
        let target = *target;
        self.with_stopped(|s| {
            let pre = s.peek(a)?;
            s.poke(a, value)?;
            let at_us = s.at_us();
            s.journal.record(InjectionReceipt {
                action: ReceiptAction::Write,
                target,
                address: a,
                mode: None,
                pre,
                post: value,
                at_us,
                mechanism: Mechanism::Direct,
                count: 1,
                notice: None,
            });
            Ok(())
        })
    }

    fn inject_soft(&mut self, spec: &ErrorSpec) -> Result<InjectionReceipt, BackendError> {
        if spec.mode.is_hard() {
            return Err(BackendError::Spec("inject_soft needs a soft spec".into()));
        }
        let a = self.address(&spec.target)?;
        let spec = *spec;
        self.with_stopped(|s| {
            let pre = s.peek(a)?;
            let receipt = flip_receipt(&spec, a, pre, s.at_us(), Mechanism::Direct);
            s.poke(a, receipt.post)?;
            s.journal.record(receipt.clone());
            Ok(receipt)
        })
    }

    fn inject_hard(&mut self, spec: &ErrorSpec) -> Result<InjectionReceipt, BackendError> {
        spec.validate()?;
        let a = self.address(&spec.target)?;
        let spec = *spec;
        self.with_stopped(|s| {
            let pre = s.peek(a)?;
            let bit = spec.target.bit;
            let value = spec
                .mode
                .stuck_value(pre & (1 << bit) != 0)
                .ok_or_else(|| BackendError::Spec("inject_hard needs a hard spec".into()))?;
            let post = force_bit(pre, bit, value);
            s.poke(a, post)?;
            let interval = Duration::from_micros(spec.reassert_interval_us.unwrap_or(DEFAULT_REASSERT_US));
            let (slot, mechanism, notice) = match s.install_watchpoint(a) {
                Ok(i) => (Some(i), Mechanism::HwWatchpoint, None),
                Err(why) => (
                    None,
                    Mechanism::TimedReassert,
                    Some(format!(
                        "degraded: no hardware watchpoint ({why}); re-asserting every {} us",
                        interval.as_micros()
                    )),
                ),
            };
            s.pins.push(DebugPin {
                spec,
                address: a,
                value,
                slot,
                interval,
                next_due: Instant::now() + interval,
            });
            let receipt = InjectionReceipt {
                action: ReceiptAction::Pin,
                target: spec.target,
                address: a,
                mode: Some(spec.mode),
                pre,
                post,
                at_us: s.at_us(),
                mechanism,
                count: 1,
                notice,
            };
            s.journal.record(receipt.clone());
            Ok(receipt)
        })
    }

    fn request(&mut self, payload: &[u8], timeout: Duration) -> Result<Reply, BackendError> {
        match self.state {
            State::Entry => return Err(BackendError::Session("request before resume".into())),
            State::Ended(e) => return Ok(Reply::Terminated(e)),
            State::Hung => return Ok(Reply::TimedOut),
            State::Running => {}
        }
        let deadline = Instant::now() + timeout;
        let sent = match self.stdin.as_mut() {
            Some(w) => w.write_all(&encode(payload)).and_then(|_| w.flush()).is_ok(),
            None => return Err(BackendError::Session("request after close_input".into())),
        };
        if !sent {
            // Broken pipe: the target is gone or going; collect its status.
            return match self.pump(deadline, true)? {
                Pumped::Event(e) => Ok(Reply::Terminated(e)),
                Pumped::Frame(_) => Err(BackendError::Protocol("response to an undelivered request".into())),
                Pumped::Deadline => Ok(Reply::TimedOut),
            };
        }
        match self.pump(deadline, true)? {
            Pumped::Frame(f) => Ok(Reply::Response(f)),
            Pumped::Event(e) => Ok(Reply::Terminated(e)),
            Pumped::Deadline => {
                self.state = State::Hung;
                Ok(Reply::TimedOut)
            }
        }
    }

    fn close_input(&mut self) -> Result<(), BackendError> {
        self.stdin = None;
        Ok(())
    }

    fn watch_events(&mut self, timeout: Duration) -> SessionEvent {
        if self.state == State::Entry {
            return self.events.wait(timeout).unwrap_or(SessionEvent::Timeout);
        }
        match self.pump(Instant::now() + timeout, false) {
            Ok(Pumped::Event(e)) => e,
            _ => SessionEvent::Timeout,
        }
    }

    fn elapsed(&self) -> Duration {
        self.started.map_or(Duration::ZERO, |t| t.elapsed())
    }

    fn take_receipts(&mut self) -> Vec<InjectionReceipt> {
        self.journal.take()
    }

    fn terminate(&mut self) {
        if matches!(self.state, State::Ended(_)) {
            return;
        }
        let _ = kill(self.pid, Signal::SIGKILL);
        loop {
            match waitpid(self.pid, Some(WaitPidFlag::__WALL)) {
                Ok(WaitStatus::Exited(..)) | Ok(WaitStatus::Signaled(..)) => break,
                Ok(_) | Err(Errno::EINTR) => {}
                Err(_) => break,
            }
        }
        self.state = State::Ended(SessionEvent::Signaled(Signal::SIGKILL as i32));
        self.stopped = false;
    }

    fn is_live(&self) -> bool {
        !matches!(self.state, State::Ended(_))
    }

    fn event_poster(&self) -> EventQueue {
        self.events.clone()
    }
}

impl Drop for DebuggerSession {
    fn drop(&mut self) {
        self.terminate();
    }
}

#[cfg(target_arch = "x86_64")]
mod watch {
    use super::*;

    fn dr_offset(i: usize) -> ptrace::AddressType {
        (std::mem::offset_of!(libc::user, u_debugreg) + 8 * i) as ptrace::AddressType
    }

    /// DR7 with local enable, write-only condition and 8-byte length per slot.
    pub(super) fn dr7(enabled: &[(usize, u64)]) -> u64 {
        enabled
            .iter()
            .fold(0, |acc, &(i, _)| acc | (1 << (2 * i)) | (0b01 << (16 + 4 * i)) | (0b10 << (18 + 4 * i)))
    }

    pub(super) fn program(pid: Pid, slot: usize, word: u64, enabled: &[(usize, u64)]) -> Result<(), String> {
        ptrace::write_user(pid, dr_offset(slot), word as libc::c_long)
            .map_err(|e| format!("writing DR{slot}: {e}"))?;
        ptrace::write_user(pid, dr_offset(7), dr7(enabled) as libc::c_long).map_err(|e| {
            let _ = ptrace::write_user(pid, dr_offset(slot), 0);
            format!("writing DR7: {e}")
        })
    }

    /// Reads and clears the DR6 hit bits.
    pub(super) fn take_hits(pid: Pid) -> u8 {
        let dr6 = ptrace::read_user(pid, dr_offset(6)).unwrap_or(0);
        let _ = ptrace::write_user(pid, dr_offset(6), 0);
        (dr6 & 0xf) as u8
    }

}

#[cfg(not(target_arch = "x86_64"))]
mod watch {
    use super::*;

    pub(super) fn program(_: Pid, _: usize, _: u64, _: &[(usize, u64)]) -> Result<(), String> {
        Err("hardware watchpoints are only driven on x86-64".into())
    }

    pub(super) fn take_hits(_: Pid) -> u8 {
        0
    }
}

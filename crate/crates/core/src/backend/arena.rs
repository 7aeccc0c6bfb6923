//! Deterministic in-process backend.
//!
//! The "target" is a bundled workload whose injectable state lives in an
//! [`Arena`]: a byte array whose load/store entry points advance a virtual
//! clock by one microsecond each, enforce bounds (out-of-bounds is a
//! SIGSEGV-equivalent crash), and enforce stuck-at pins on every read.
//!
//! Snapshot format: `"HRMA"`, version u16 LE, payload length u64 LE, payload.
//! Payload: segment count u32, then per segment name length u16, name,
//! kind index u8, start u64, length u64; then image length u64 and bytes.

use std::time::Duration;

use serde::Serialize;

use super::{
    flip_receipt, force_bit, BackendError, BackendKind, ErrorSpec, EventQueue, InjectionReceipt,
    Journal, Mechanism, ReceiptAction, Reply, Session, SessionEvent, SIGSEGV,
};
use crate::region::{InjectionTarget, MemoryRegionMap, RegionKind};
use crate::workloads::memory::{Access, Fault, Layout, Memory, Segment};
use crate::workloads::serve::{echo_handler, echo_layout};
use crate::workloads::{generate_dataset, Workload, WorkloadSpec};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"HRMA";
pub const SNAPSHOT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AccessStats {
    pub reads: u64,
    pub writes: u64,
    pub read_bytes: u64,
    pub write_bytes: u64,
    pub pointer_reads: u64,
}

#[derive(Debug, Clone)]
struct Pin {
    spec: ErrorSpec,
    address: u64,
    value: bool,
}

/// Instrumented byte array. Pins and receipts live here so reads made by
/// the workload enforce stuck-at bits without the session's help.
#[derive(Debug)]
pub struct Arena {
    bytes: Vec<u8>,
    layout: Layout,
    clock_us: u64,
    deadline_us: u64,
    pins: Vec<Pin>,
    journal: Journal,
    stats: Vec<AccessStats>,
}

impl Arena {
    pub fn new(layout: Layout, bytes: Vec<u8>) -> Self {
        let stats = vec![AccessStats::default(); layout.segments.len()];
        Arena {
            bytes,
            layout,
            clock_us: 0,
            deadline_us: u64::MAX,
            pins: Vec::new(),
            journal: Journal::default(),
            stats,
        }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn clock_us(&self) -> u64 {
        self.clock_us
    }

    pub fn access_stats(&self) -> Vec<(Segment, AccessStats)> {
        self.layout.segments.iter().cloned().zip(self.stats.iter().copied()).collect()
    }

    fn tick(&mut self) -> Result<(), Fault> {
        self.clock_us += 1;
        if self.clock_us > self.deadline_us {
            return Err(Fault::Timeout);
        }
        Ok(())
    }

    fn range(&self, addr: u64, len: usize) -> Result<std::ops::Range<usize>, Fault> {
        match addr.checked_add(len as u64) {
            Some(end) if end <= self.bytes.len() as u64 => Ok(addr as usize..end as usize),
            _ => Err(Fault::Segv { addr }),
        }
    }

    fn enforce_pins(&mut self, range: &std::ops::Range<usize>) {
        for pin in &self.pins {
            let a = pin.address as usize;
            if !range.contains(&a) {
                continue;
            }
            let pre = self.bytes[a];
            let post = force_bit(pre, pin.spec.target.bit, pin.value);
            if pre != post {
                self.bytes[a] = post;
                self.journal.record(InjectionReceipt {
                    action: ReceiptAction::Reassert,
                    target: pin.spec.target,
                    address: pin.address,
                    mode: Some(pin.spec.mode),
                    pre,
                    post,
                    at_us: self.clock_us,
                    mechanism: Mechanism::ArenaReadPin,
                    count: 1,
                    notice: None,
                });
            }
        }
    }

    fn account(&mut self, addr: u64, len: usize, access: Option<Access>) {
        if let Some(i) = self.layout.index_of(addr) {
            let s = &mut self.stats[i];
            match access {
                Some(a) => {
                    s.reads += 1;
                    s.read_bytes += len as u64;
                    if a == Access::Pointer {
                        s.pointer_reads += 1;
                    }
                }
                None => {
                    s.writes += 1;
                    s.write_bytes += len as u64;
                }
            }
        }
    }

    /// Controller-side read: enforces pins, no clock tick, no statistics.
    fn peek(&mut self, addr: u64) -> Result<u8, Fault> {
        let r = self.range(addr, 1)?;
        self.enforce_pins(&r);
        Ok(self.bytes[r.start])
    }

    pub fn snapshot(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        payload.extend((self.layout.segments.len() as u32).to_le_bytes());
        for s in &self.layout.segments {
            payload.extend((s.name.len() as u16).to_le_bytes());
            payload.extend(s.name.as_bytes());
            let kind = RegionKind::ALL.iter().position(|k| *k == s.kind).unwrap() as u8;
            payload.push(kind);
            payload.extend(s.start.to_le_bytes());
            payload.extend(s.len.to_le_bytes());
        }
        payload.extend((self.bytes.len() as u64).to_le_bytes());
        payload.extend(&self.bytes);
        let mut out = SNAPSHOT_MAGIC.to_vec();
        out.extend(SNAPSHOT_VERSION.to_le_bytes());
        out.extend((payload.len() as u64).to_le_bytes());
        out.extend(payload);
        out
    }

    /// Replaces layout and contents from a snapshot. Pins and clock are kept.
    pub fn restore(&mut self, snapshot: &[u8]) -> Result<(), BackendError> {
        let (layout, bytes) = parse_snapshot(snapshot)?;
        self.stats = vec![AccessStats::default(); layout.segments.len()];
        self.layout = layout;
        self.bytes = bytes;
        Ok(())
    }
}

pub fn parse_snapshot(snapshot: &[u8]) -> Result<(Layout, Vec<u8>), BackendError> {
    let bad = |m: &str| BackendError::Session(format!("snapshot: {m}"));
    let mut cur = Cursor(snapshot);
    if cur.take(4).ok_or_else(|| bad("truncated"))? != SNAPSHOT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = cur.u16().ok_or_else(|| bad("truncated"))?;
    if version != SNAPSHOT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let len = cur.u64().ok_or_else(|| bad("truncated"))? as usize;
    let mut p = Cursor(cur.take(len).ok_or_else(|| bad("payload shorter than declared"))?);
    if !cur.0.is_empty() {
        return Err(bad("trailing bytes"));
    }
    let parse = |p: &mut Cursor| -> Option<(Layout, Vec<u8>)> {
        let n = p.u32()?;
        let mut segments = Vec::new();
        for _ in 0..n {
            let name_len = p.u16()? as usize;
            let name = String::from_utf8(p.take(name_len)?.to_vec()).ok()?;
            let kind = *RegionKind::ALL.get(p.take(1)?[0] as usize)?;
            let (start, len) = (p.u64()?, p.u64()?);
            segments.push(Segment { name, kind, start, len });
        }
        let image_len = p.u64()? as usize;
        let bytes = p.take(image_len)?.to_vec();
        p.0.is_empty().then_some((Layout { segments }, bytes))
    };
    let (layout, bytes) = parse(&mut p).ok_or_else(|| bad("malformed payload"))?;
    if layout.total_len() > bytes.len() as u64 {
        return Err(bad("segments exceed image"));
    }
    Ok((layout, bytes))
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.0.len() < n {
            return None;
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Some(head)
    }
    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes(b.try_into().unwrap()))
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

impl Memory for Arena {
    fn load(&mut self, addr: u64, buf: &mut [u8], access: Access) -> Result<(), Fault> {
        self.tick()?;
        let r = self.range(addr, buf.len())?;
        self.enforce_pins(&r);
        buf.copy_from_slice(&self.bytes[r]);
        self.account(addr, buf.len(), Some(access));
        Ok(())
    }

    fn store(&mut self, addr: u64, data: &[u8]) -> Result<(), Fault> {
        self.tick()?;
        let r = self.range(addr, data.len())?;
        self.bytes[r].copy_from_slice(data);
        self.account(addr, data.len(), None);
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Program {
    Exit(i32),
    Segv,
    Idle,
    Echo,
    Workload(Workload),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Entry,
    Running,
    Hung,
    Ended(SessionEvent),
}

pub struct ArenaSession {
    program: Program,
    arena: Arena,
    map: MemoryRegionMap,
    state: State,
    events: EventQueue,
}

impl ArenaSession {
    /// Interprets `argv` the way the worker binary would: a workload
    /// invocation, `true`, or one of the `fixture` targets.
    pub fn spawn(argv: &[String], _env: &[(String, String)]) -> Result<Self, BackendError> {
        let args: Vec<&str> = argv.iter().map(String::as_str).collect();
        let (program, layout, image) = match args.as_slice() {
            [] => return Err(BackendError::Launch("empty command".into())),
            ["true"] => (Program::Exit(0), Layout { segments: vec![] }, vec![]),
            ["false"] => (Program::Exit(1), Layout { segments: vec![] }, vec![]),
            ["fixture", "exit", code] => {
                let code = code
                    .parse()
                    .map_err(|_| BackendError::Launch(format!("bad exit code `{code}`")))?;
                (Program::Exit(code), Layout { segments: vec![] }, vec![])
            }
            ["fixture", "segv"] => (Program::Segv, Layout { segments: vec![] }, vec![]),
            ["fixture", "idle"] => (Program::Idle, Layout { segments: vec![] }, vec![]),
            ["fixture", "echo", len] => {
                let len: u64 = len
                    .parse()
                    .map_err(|_| BackendError::Launch(format!("bad echo length `{len}`")))?;
                (Program::Echo, echo_layout(len), vec![0; len as usize])
            }
            _ => {
                let spec = WorkloadSpec::from_args(&args).map_err(|e| {
                    BackendError::Launch(format!("`{}`: not a bundled workload ({e})", args[0]))
                })?;
                let d = generate_dataset(&spec).map_err(|e| BackendError::Launch(e.to_string()))?;
                (Program::Workload(Workload::new(&spec, &d.layout)), d.layout, d.image)
            }
        };
        let map = if layout.segments.is_empty() {
            MemoryRegionMap::empty()
        } else {
            layout.region_map()
        };
        Ok(ArenaSession {
            program,
            arena: Arena::new(layout, image),
            map,
            state: State::Entry,
            events: EventQueue::default(),
        })
    }

    pub fn from_dataset(spec: &WorkloadSpec) -> Result<Self, BackendError> {
        Self::spawn(&spec.to_args(), &[])
    }

    pub fn arena(&self) -> &Arena {
        &self.arena
    }

    pub fn snapshot(&self) -> Vec<u8> {
        self.arena.snapshot()
    }

    pub fn restore(&mut self, snapshot: &[u8]) -> Result<(), BackendError> {
        self.arena.restore(snapshot)?;
        self.map = self.arena.layout.region_map();
        Ok(())
    }

    fn end(&mut self, e: SessionEvent) {
        self.state = State::Ended(e);
        self.events.post(e);
    }

    fn live(&self) -> Result<(), BackendError> {
        match self.state {
            State::Ended(e) => Err(BackendError::Session(format!("target already ended ({e:?})"))),
            _ => Ok(()),
        }
    }

    fn address(&self, target: &InjectionTarget) -> Result<u64, BackendError> {
        Ok(self.map.resolve(target)?)
    }

    fn access_error(address: u64) -> BackendError {
        BackendError::Access {
            address,
            reason: "outside the arena".into(),
        }
    }
}

impl Session for ArenaSession {
    fn kind(&self) -> BackendKind {
        BackendKind::Arena
    }

    fn resume(&mut self) -> Result<(), BackendError> {
        if self.state != State::Entry {
            return Err(BackendError::Session("resume called twice".into()));
        }
        self.state = State::Running;
        match self.program {
            Program::Exit(code) => self.end(SessionEvent::Exited(code)),
            Program::Segv => self.end(SessionEvent::Signaled(SIGSEGV)),
            Program::Idle => self.state = State::Hung,
            _ => {}
        }
        Ok(())
    }

    fn target_map(&self) -> Option<&MemoryRegionMap> {
        Some(&self.map)
    }

    fn capture_region_map(&mut self) -> Result<MemoryRegionMap, BackendError> {
        Ok(self.map.clone())
    }

    fn read_byte(&mut self, target: &InjectionTarget) -> Result<u8, BackendError> {
        self.live()?;
        let a = self.address(target)?;
        self.arena.peek(a).map_err(|_| Self::access_error(a))
    }

    fn write_byte(&mut self, target: &InjectionTarget, value: u8) -> Result<(), BackendError> {
        self.live()?;
        let a = self.address(target)?;
        let pre = self.arena.peek(a).map_err(|_| Self::access_error(a))?;
        self.arena.bytes[a as usize] = value;
        self.arena.journal.record(InjectionReceipt {
            action: ReceiptAction::Write,
            target: *target,
            address: a,
            mode: None,
            pre,
            post: value,
            at_us: self.arena.clock_us,
            mechanism: Mechanism::Direct,
            count: 1,
            notice: None,
        });
        Ok(())
    }

    fn inject_soft(&mut self, spec: &ErrorSpec) -> Result<InjectionReceipt, BackendError> {
        if spec.mode.is_hard() {
            return Err(BackendError::Spec("inject_soft needs a soft spec".into()));
        }
        self.live()?;
        let a = self.address(&spec.target)?;
        let pre = self.arena.peek(a).map_err(|_| Self::access_error(a))?;
        let receipt = flip_receipt(spec, a, pre, self.arena.clock_us, Mechanism::Direct);
        self.arena.bytes[a as usize] = receipt.post;
        self.arena.journal.record(receipt.clone());
        Ok(receipt)
    }

    fn inject_hard(&mut self, spec: &ErrorSpec) -> Result<InjectionReceipt, BackendError> {
        spec.validate()?;
        let bit = spec.target.bit;
        self.live()?;
        let a = self.address(&spec.target)?;
        let pre = self.arena.peek(a).map_err(|_| Self::access_error(a))?;
        let value = spec
            .mode
            .stuck_value(pre & (1 << bit) != 0)
            .ok_or_else(|| BackendError::Spec("inject_hard needs a hard spec".into()))?;
        let post = force_bit(pre, bit, value);
        self.arena.bytes[a as usize] = post;
        self.arena.pins.push(Pin {
            spec: *spec,
            address: a,
            value,
        });
        let receipt = InjectionReceipt {
            action: ReceiptAction::Pin,
            target: spec.target,
            address: a,
            mode: Some(spec.mode),
            pre,
            post,
            at_us: self.arena.clock_us,
            mechanism: Mechanism::ArenaReadPin,
            count: 1,
            notice: None,
        };
        self.arena.journal.record(receipt.clone());
        Ok(receipt)
    }

    fn request(&mut self, payload: &[u8], timeout: Duration) -> Result<Reply, BackendError> {
        match self.state {
            State::Entry => return Err(BackendError::Session("request before resume".into())),
            State::Ended(e) => return Ok(Reply::Terminated(e)),
            State::Hung => {
                self.arena.clock_us += timeout.as_micros() as u64;
                return Ok(Reply::TimedOut);
            }
            State::Running => {}
        }
        self.arena.deadline_us = self.arena.clock_us.saturating_add(timeout.as_micros() as u64);
        let result = match &self.program {
            Program::Workload(w) => w.handle(&mut self.arena, payload),
            Program::Echo => echo_handler(&mut self.arena, payload),
            _ => unreachable!("non-serving programs end or hang at resume"),
        };
        self.arena.deadline_us = u64::MAX;
        match result {
            Ok(r) => Ok(Reply::Response(r)),
            Err(Fault::Segv { .. }) => {
                self.end(SessionEvent::Signaled(SIGSEGV));
                Ok(Reply::Terminated(SessionEvent::Signaled(SIGSEGV)))
            }
            Err(Fault::Timeout) => {
                self.state = State::Hung;
                Ok(Reply::TimedOut)
            }
        }
    }

    fn close_input(&mut self) -> Result<(), BackendError> {
        if self.state == State::Running {
            self.end(SessionEvent::Exited(0));
        }
        Ok(())
    }

    fn watch_events(&mut self, timeout: Duration) -> SessionEvent {
        if let Some(e) = self.events.try_pop() {
            return e;
        }
        self.arena.clock_us += timeout.as_micros() as u64;
        SessionEvent::Timeout
    }

    fn elapsed(&self) -> Duration {
        Duration::from_micros(self.arena.clock_us)
    }

    fn take_receipts(&mut self) -> Vec<InjectionReceipt> {
        self.arena.journal.take()
    }

    fn terminate(&mut self) {
        if !matches!(self.state, State::Ended(_)) {
            self.state = State::Ended(SessionEvent::Signaled(9));
        }
    }

    fn is_live(&self) -> bool {
        !matches!(self.state, State::Ended(_))
    }

    fn event_poster(&self) -> EventQueue {
        self.events.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ErrorMode, SessionEvent};

    fn echo(len: usize) -> ArenaSession {
        let mut s = ArenaSession::spawn(&["fixture".into(), "echo".into(), len.to_string()], &[]).unwrap();
        s.resume().unwrap();
        s
    }

    fn t(offset: u64, bit: u8) -> InjectionTarget {
        InjectionTarget {
            region_index: 0,
            offset,
            bit,
        }
    }

    fn write_req(off: u32, v: u8) -> Vec<u8> {
        let mut r = vec![b'W'];
        r.extend(off.to_le_bytes());
        r.push(v);
        r
    }

    fn read_req(off: u32) -> Vec<u8> {
        let mut r = vec![b'R'];
        r.extend(off.to_le_bytes());
        r
    }

    const T: Duration = Duration::from_secs(1);

    #[test]
    fn true_exits_zero_and_unknown_fails() {
        let mut s = ArenaSession::spawn(&["true".into()], &[]).unwrap();
        s.resume().unwrap();
        assert_eq!(s.watch_events(T), SessionEvent::Exited(0));
        assert!(!s.is_live());
        assert!(matches!(
            ArenaSession::spawn(&["nonexistent-binary".into()], &[]),
            Err(BackendError::Launch(_))
        ));
    }

    #[test]
    fn soft_flip_bit_arithmetic_and_involution() {
        let mut s = echo(8);
        let spec = ErrorSpec::soft(t(2, 3));
        let r = s.inject_soft(&spec).unwrap();
        assert_eq!((r.pre, r.post), (0, 0b1000));
        s.write_byte(&t(4, 0), 0xff).unwrap();
        let r = s.inject_soft(&ErrorSpec::soft(t(4, 0))).unwrap();
        assert_eq!(r.post, 0b1111_1110);
        let r2 = s.inject_soft(&spec).unwrap();
        assert_eq!((r2.pre, r2.post), (0b1000, 0));
        assert_eq!(s.take_receipts().len(), 4);
    }

    #[test]
    fn stuck_at_one_dominates_program_writes() {
        let mut s = echo(8);
        s.inject(&ErrorSpec::with_mode(t(1, 7), ErrorMode::HardStuckAt1)).unwrap();
        assert_eq!(s.request(&write_req(1, 0), T).unwrap(), Reply::Response(b"OK".to_vec()));
        assert_eq!(s.request(&read_req(1), T).unwrap(), Reply::Response(vec![0x80]));
        let receipts = s.take_receipts();
        assert_eq!(receipts[0].action, ReceiptAction::Pin);
        assert_eq!(receipts[1].action, ReceiptAction::Reassert);
    }

    #[test]
    fn stuck_at_current_holds_the_value_seen_at_pin_time() {
        let mut s = echo(8);
        s.write_byte(&t(0, 0), 0x5a).unwrap();
        s.inject(&ErrorSpec::with_mode(t(0, 1), ErrorMode::HardStuckAtCurrent)).unwrap();
        s.request(&write_req(0, 0), T).unwrap();
        assert_eq!(s.request(&read_req(0), T).unwrap(), Reply::Response(vec![0x02]));
    }

    #[test]
    fn idempotent_pin_still_receipted() {
        let mut s = echo(8);
        let r = s.inject(&ErrorSpec::with_mode(t(3, 2), ErrorMode::HardStuckAt0)).unwrap();
        assert_eq!((r.pre, r.post), (0, 0));
        s.request(&write_req(3, 0x01), T).unwrap();
        assert_eq!(s.request(&read_req(3), T).unwrap(), Reply::Response(vec![0x01]));
        assert_eq!(s.take_receipts().len(), 1);
    }

    #[test]
    fn out_of_bounds_request_is_a_crash() {
        let mut s = echo(8);
        let reply = s.request(&read_req(64), T).unwrap();
        assert_eq!(reply, Reply::Terminated(SessionEvent::Signaled(SIGSEGV)));
        assert_eq!(s.watch_events(T), SessionEvent::Signaled(SIGSEGV));
        assert!(s.read_byte(&t(0, 0)).is_err());
    }

    #[test]
    fn idle_target_times_out() {
        let mut s = ArenaSession::spawn(&["fixture".into(), "idle".into()], &[]).unwrap();
        s.resume().unwrap();
        assert_eq!(s.watch_events(Duration::from_millis(50)), SessionEvent::Timeout);
        assert!(s.is_live());
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut s = echo(16);
        s.write_byte(&t(5, 0), 0xab).unwrap();
        let snap = s.snapshot();
        assert_eq!(&snap[..4], b"HRMA");
        s.write_byte(&t(5, 0), 0x00).unwrap();
        s.restore(&snap).unwrap();
        assert_eq!(s.read_byte(&t(5, 0)).unwrap(), 0xab);
        assert_eq!(s.snapshot(), snap);
        let mut bad = snap.clone();
        bad[0] = b'X';
        assert!(parse_snapshot(&bad).is_err());
        assert!(parse_snapshot(&snap[..snap.len() - 1]).is_err());
    }

    #[test]
    fn virtual_clock_counts_accesses() {
        let mut s = echo(8);
        s.request(&write_req(0, 1), T).unwrap();
        assert_eq!(s.elapsed(), Duration::from_micros(1));
        s.request(&read_req(0), T).unwrap();
        assert_eq!(s.elapsed(), Duration::from_micros(2));
    }
}

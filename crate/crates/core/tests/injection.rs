use std::time::Duration;

use hrmlab_core::backend::arena::ArenaSession;
use hrmlab_core::backend::{ErrorMode, ErrorSpec, ReceiptAction, Reply, Session};
use hrmlab_core::region::InjectionTarget;
use proptest::prelude::*;

const T: Duration = Duration::from_secs(1);

fn echo() -> ArenaSession {
    let mut s = ArenaSession::spawn(&["fixture".into(), "echo".into(), "16".into()], &[]).unwrap();
    s.resume().unwrap();
    s
}

fn target(offset: u64, bit: u8) -> InjectionTarget {
    InjectionTarget {
        region_index: 0,
        offset,
        bit,
    }
}

fn write(s: &mut ArenaSession, off: u8, v: u8) {
    let mut r = vec![b'W'];
    r.extend(u32::from(off).to_le_bytes());
    r.push(v);
    assert_eq!(s.request(&r, T).unwrap(), Reply::Response(b"OK".to_vec()));
}

fn read(s: &mut ArenaSession, off: u8) -> u8 {
    let mut r = vec![b'R'];
    r.extend(u32::from(off).to_le_bytes());
    match s.request(&r, T).unwrap() {
        Reply::Response(v) => v[0],
        other => panic!("{other:?}"),
    }
}

fn mode() -> impl Strategy<Value = ErrorMode> {
    prop_oneof![
        Just(ErrorMode::HardStuckAt0),
        Just(ErrorMode::HardStuckAt1),
        Just(ErrorMode::HardStuckAtCurrent),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Against a reference model of a stuck cell: every read of the pinned
    // bit returns the stuck value, the other bits follow the program.
    #[test]
    fn stuck_bits_match_the_reference_model(
        off in 0u8..16,
        bit in 0u8..8,
        initial in any::<u8>(),
        m in mode(),
        trace in proptest::collection::vec(proptest::option::of(any::<u8>()), 1..=1000),
    ) {
        let mut s = echo();
        write(&mut s, off, initial);
        s.inject(&ErrorSpec::with_mode(target(off.into(), bit), m)).unwrap();
        let stuck = m.stuck_value(initial >> bit & 1 == 1).unwrap();
        let mask = 1u8 << bit;
        let mut cell = initial;
        // Reads that find the stored bit disagreeing must re-assert it. The
        // pin itself forces the bit, so nothing has drifted yet.
        let mut drifted = false;
        let mut reasserts = 0u64;
        for step in trace {
            match step {
                Some(w) => {
                    write(&mut s, off, w);
                    cell = w;
                    drifted = (w & mask != 0) != stuck;
                }
                None => {
                    let expected = (cell & !mask) | if stuck { mask } else { 0 };
                    prop_assert_eq!(read(&mut s, off), expected);
                    reasserts += u64::from(std::mem::take(&mut drifted));
                }
            }
        }
        // Every mutation is receipted exactly once: the pin plus each re-assert.
        let receipts = s.take_receipts();
        let pins = receipts.iter().filter(|r| r.action == ReceiptAction::Pin).count();
        let counted: u64 = receipts.iter().filter(|r| r.action == ReceiptAction::Reassert).map(|r| r.count).sum();
        prop_assert_eq!(pins, 1);
        prop_assert_eq!(counted, reasserts);
        prop_assert_eq!(receipts.len(), receipts.iter().filter(|r| matches!(r.action, ReceiptAction::Pin | ReceiptAction::Reassert)).count());
    }

    #[test]
    fn soft_flip_changes_exactly_one_bit_until_overwritten(
        off in 0u8..16,
        bit in 0u8..8,
        initial in any::<u8>(),
        later in any::<u8>(),
    ) {
        let mut s = echo();
        write(&mut s, off, initial);
        let r = s.inject(&ErrorSpec::soft(target(off.into(), bit))).unwrap();
        prop_assert_eq!(r.pre ^ r.post, 1 << bit);
        prop_assert_eq!(read(&mut s, off), initial ^ (1 << bit));
        write(&mut s, off, later);
        prop_assert_eq!(read(&mut s, off), later);
    }
}

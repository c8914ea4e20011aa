use mimic_core::replay::{
    decode_replay, encode_replay, frame_at, header_len, read_replay_file, trim_start,
    validate_replay, write_replay_file, ActionVector, FrameRecord, Replay, ReplayError,
    RECORD_SIZE,
};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f32> {
    prop_oneof![
        -1e6f32..1e6,
        Just(0.0f32),
        Just(-0.0f32),
        Just(f32::MAX),
        Just(f32::MIN_POSITIVE),
    ]
}

prop_compose! {
    fn frame_step()(
        dt in 1u32..1000,
        mx in finite(), my in finite(), buttons in 0u8..32,
        px in finite(), py in finite(), yaw in finite(),
        dk in 0u16..3, dd in 0u16..3, dmg in 0u32..500,
    ) -> (u32, ActionVector, [f32; 3], u16, u16, u32) {
        (dt, ActionVector::with_buttons(mx, my, buttons), [px, py, yaw], dk, dd, dmg)
    }
}

prop_compose! {
    fn replay()(
        player in "\\PC{0,16}",
        match_id in "[a-z0-9_-]{0,24}",
        tick_rate in 1u16..=u16::MAX,
        start in 0u32..10_000,
        steps in prop::collection::vec(frame_step(), 1..60),
    ) -> Replay {
        let mut r = Replay::new(player, match_id);
        r.tick_rate = tick_rate;
        let (mut tick, mut k, mut d, mut dmg) = (start, 0u16, 0u16, 0u32);
        for (dt, action, [pos_x, pos_y, yaw], dk, dd, ddmg) in steps {
            r.frames.push(FrameRecord { tick, action, pos_x, pos_y, yaw, kills: k, deaths: d, damage: dmg });
            tick += dt;
            k += dk;
            d += dd;
            dmg += ddmg;
        }
        r
    }
}

proptest! {
    #[test]
    fn roundtrip_is_exact(r in replay()) {
        let bytes = encode_replay(&r).unwrap();
        prop_assert_eq!(bytes.len(), header_len(r.player_id.len(), r.match_id.len()) + r.len() * RECORD_SIZE);
        let back = decode_replay(&bytes).unwrap();
        // Bitwise float equality, so -0.0 and 0.0 are told apart.
        for (a, b) in back.frames.iter().zip(&r.frames) {
            prop_assert_eq!(a.action.mouse_x.to_bits(), b.action.mouse_x.to_bits());
            prop_assert_eq!(a.pos_y.to_bits(), b.pos_y.to_bits());
        }
        prop_assert_eq!(back, r);
    }

    #[test]
    fn seek_matches_full_decode(r in replay(), pick in any::<prop::sample::Index>()) {
        let bytes = encode_replay(&r).unwrap();
        let i = pick.index(r.len());
        prop_assert_eq!(frame_at(&bytes, i).unwrap(), r.frames[i]);
        prop_assert!(frame_at(&bytes, r.len()).is_err());
    }

    #[test]
    fn every_truncation_is_rejected(r in replay(), cut in any::<prop::sample::Index>()) {
        let bytes = encode_replay(&r).unwrap();
        let n = cut.index(bytes.len());
        prop_assert!(decode_replay(&bytes[..n]).is_err());
    }

    #[test]
    fn trailing_bytes_are_rejected(r in replay(), extra in prop::collection::vec(any::<u8>(), 1..40)) {
        let mut bytes = encode_replay(&r).unwrap();
        bytes.extend(extra);
        prop_assert!(decode_replay(&bytes).is_err());
    }

    #[test]
    fn structural_header_corruption_is_rejected(r in replay(), pos in any::<prop::sample::Index>(), flip in 1u8..=255) {
        let bytes = encode_replay(&r).unwrap();
        let pid = r.player_id.len();
        let mid = r.match_id.len();
        let count_at = 12 + pid + mid;
        let mut fields: Vec<usize> = (0..8).collect();
        fields.extend(8 + pid..10 + pid);
        fields.extend(count_at..count_at + 4);
        let at = fields[pos.index(fields.len())];
        let mut bad = bytes;
        bad[at] ^= flip;
        prop_assert!(decode_replay(&bad).is_err());
    }

    #[test]
    fn trim_keeps_suffix(r in replay(), n in 0usize..70) {
        match trim_start(&r, n) {
            Ok(t) => {
                prop_assert!(n < r.len());
                prop_assert_eq!(&t.frames[..], &r.frames[n..]);
                prop_assert!(validate_replay(&t).is_empty());
            }
            Err(e) => {
                prop_assert!(n >= r.len());
                prop_assert!(matches!(e, ReplayError::Empty));
            }
        }
    }
}

fn small() -> Replay {
    let mut r = Replay::new("p", "m");
    for i in 0..4 {
        r.frames.push(FrameRecord {
            tick: i,
            kills: i as u16,
            ..FrameRecord::default()
        });
    }
    r
}

#[test]
fn each_invariant_is_reported() {
    let mut r = small();
    r.frames[2].tick = 1;
    r.frames[3].kills = 0;
    r.frames[1].action.mouse_y = f32::NAN;
    let v = validate_replay(&r);
    let fields: Vec<_> = v.iter().map(|v| (v.frame, v.field)).collect();
    assert_eq!(
        fields,
        [(Some(1), "mouse_y"), (Some(2), "tick"), (Some(3), "kills")]
    );
    assert_eq!(v[1].message, "non-increasing tick at index 2");
    assert!(matches!(encode_replay(&r), Err(ReplayError::Invalid(_))));
}

#[test]
fn nan_in_payload_is_corruption() {
    let r = small();
    let mut bytes = encode_replay(&r).unwrap();
    let pos_x_at = header_len(1, 1) + 2 * RECORD_SIZE + 13;
    bytes[pos_x_at..pos_x_at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    match decode_replay(&bytes) {
        Err(ReplayError::Corrupt { field, .. }) => assert_eq!(field, "pos_x"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn reserved_button_bits_are_corruption() {
    let mut bytes = encode_replay(&small()).unwrap();
    bytes[header_len(1, 1) + 12] = 0b10_0000;
    assert!(matches!(
        decode_replay(&bytes),
        Err(ReplayError::Corrupt { .. })
    ));
}

#[test]
fn file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.farp");
    write_replay_file(&path, &small()).unwrap();
    assert_eq!(read_replay_file(&path).unwrap(), small());
    assert!(matches!(
        read_replay_file(dir.path().join("missing.farp")),
        Err(ReplayError::Io(_))
    ));
}

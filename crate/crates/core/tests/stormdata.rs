use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use stormcast::stormdata::{
    self, content_hash, export, export_bytes, generate, ingest, ingest_bytes, render_event, split_events, window,
    window_subset, Blob, FrameSequence, Manifest, SyntheticStormConfig, WindowSpec,
};

#[test]
fn static_field_when_nothing_moves() {
    let cfg = SyntheticStormConfig {
        n_events: 3,
        speed: (0.0, 0.0),
        growth: (1.0, 1.0),
        noise: 0.0,
        ..Default::default()
    };
    for ev in generate(&cfg).unwrap() {
        let first = ev.slice(0, 1);
        for t in 1..ev.len() {
            assert_eq!(ev.slice(t, 1).frames, first.frames);
        }
    }
}

fn centroid_x(ev: &FrameSequence, t: usize) -> f64 {
    let (h, w) = (ev.height(), ev.width());
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..h {
        for j in 0..w {
            let v = ev.frames.get(&[t, i, j]);
            num += v * j as f64;
            den += v;
        }
    }
    num / den
}

#[test]
fn blob_centroid_advances_one_pixel_per_frame() {
    let blob = Blob {
        x: 8.0,
        y: 16.0,
        vx: 1.0,
        vy: 0.0,
        amplitude: 0.8,
        sigma: 2.0,
        growth: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ev = render_event(&[blob], 12, 32, 32, 0.0, 5.0, &mut rng);
    for t in 1..12 {
        let step = centroid_x(&ev, t) - centroid_x(&ev, t - 1);
        assert!((step - 1.0).abs() < 0.1, "frame {t}: {step}");
    }
}

#[test]
fn generation_is_deterministic_and_normalized() {
    let cfg = SyntheticStormConfig {
        n_events: 6,
        ..Default::default()
    };
    let a = generate(&cfg).unwrap();
    let b = generate(&cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|e| e.frames.data().iter().all(|v| (0.0..=1.0).contains(v))));
    let c = generate(&SyntheticStormConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn mass_drift_is_bounded() {
    let cfg = SyntheticStormConfig {
        n_events: 8,
        growth: (0.9, 1.08),
        noise: 0.05,
        ..Default::default()
    };
    let plane = (cfg.height * cfg.width) as f64;
    for ev in generate(&cfg).unwrap() {
        for t in 1..ev.len() {
            let (m0, m1) = (ev.frame_mass(t - 1), ev.frame_mass(t));
            let bound = cfg.growth_bound() * m0 + cfg.noise * plane;
            assert!((m1 - m0).abs() <= bound * (1.0 + 1e-9), "{m0} -> {m1}, bound {bound}");
        }
    }
}

#[test]
fn windows_never_straddle_events() {
    let cfg = SyntheticStormConfig {
        n_events: 4,
        frames: 30,
        ..Default::default()
    };
    let events = generate(&cfg).unwrap();
    let spec = WindowSpec {
        stride: 1,
        ..Default::default()
    };
    let (samples, skipped) = window(&events, &spec).unwrap();
    assert_eq!(skipped, 0);
    assert_eq!(samples.len(), 4 * 6);
    for s in &samples {
        let ev = &events[s.event];
        assert_eq!(s.history, ev.slice(s.start, 13));
        assert_eq!(s.target, ev.slice(s.start + 13, 12));
    }
}

#[test]
fn splits_are_disjoint_by_event() {
    let cfg = SyntheticStormConfig {
        n_events: 20,
        ..Default::default()
    };
    let events = generate(&cfg).unwrap();
    let split = split_events(events.len(), 9);
    let spec = WindowSpec::default();
    let ids = |list: &[usize]| -> BTreeSet<usize> {
        window_subset(&events, list, &spec).unwrap().0.iter().map(|s| s.event).collect()
    };
    let (tr, va, te) = (ids(&split.train), ids(&split.val), ids(&split.test));
    assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
    assert_eq!(tr.len() + va.len() + te.len(), 20);
}

#[test]
fn all_zero_file_gives_zero_sequences() {
    let mut bytes = b"EVST1 2 3 4 5 255\n".to_vec();
    bytes.extend(std::iter::repeat_n(0u8, 2 * 2 * 3 * 4 * 5));
    let (h, ev) = ingest_bytes(&bytes, 5.0).unwrap();
    assert_eq!((h.n_events, h.frames, h.height, h.width), (2, 3, 4, 5));
    assert!(ev.iter().all(|e| e.frames.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn export_ingest_round_trip_on_disk() {
    let cfg = SyntheticStormConfig {
        n_events: 3,
        frames: 5,
        height: 6,
        width: 7,
        ..Default::default()
    };
    let events = generate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("storms.evst");
    export(&path, &events, 255).unwrap();
    let (_, first) = ingest(&path, 5.0).unwrap();
    export(&path, &first, 255).unwrap();
    let (_, second) = ingest(&path, 5.0).unwrap();
    assert_eq!(first, second);
    for (a, b) in first.iter().zip(&events) {
        for (x, y) in a.frames.data().iter().zip(b.frames.data()) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-15);
        }
    }
    assert_eq!(content_hash(&first), content_hash(&second));
    assert_ne!(content_hash(&first), content_hash(&events));

    let mut m = Manifest::new();
    m.set("hash", content_hash(&first));
    let mp = dir.path().join("manifest.txt");
    m.write(&mp).unwrap();
    assert_eq!(Manifest::read(&mp).unwrap(), m);
}

proptest! {
    #[test]
    fn normalization_preserves_order(a in 0u16..=1000, b in 0u16..=1000) {
        let mut bytes = b"EVST1 1 1 1 2 1000\n".to_vec();
        bytes.extend_from_slice(&a.to_le_bytes());
        bytes.extend_from_slice(&b.to_le_bytes());
        let (_, ev) = ingest_bytes(&bytes, 5.0).unwrap();
        let d = ev[0].frames.data();
        prop_assert_eq!(a.cmp(&b), d[0].partial_cmp(&d[1]).unwrap());
        let back = export_bytes(&ev, 1000).unwrap();
        prop_assert_eq!(back, bytes);
    }
}

#[test]
fn short_events_are_skipped() {
    let cfg = SyntheticStormConfig {
        n_events: 2,
        frames: 20,
        ..Default::default()
    };
    let events = generate(&cfg).unwrap();
    let (s, skipped) = stormdata::window(&events, &WindowSpec::default()).unwrap();
    assert!(s.is_empty());
    assert_eq!(skipped, 2);
}

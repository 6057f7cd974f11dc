//! Synthetic data: recoverability of the labels from the frames, file round
//! trips, splits and normalization statistics.

mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssvaerr::augment::Clip;
use ssvaerr::datagen::{
    compute_stats, generate, read_clip, read_features, render_frame, sample_segment, synthesize,
    write_clip, write_features, FeatureStream, LabeledClip, Manifest, Split, SyntheticConfig,
    FEATURE_DIM, MANIFEST_NAME, STD_GUARD,
};
use ssvaerr::labels::AffectSeries;

/// Peak pixel and intensity-weighted horizontal offset of the blob.
fn blob_measurements(frame: &[u8], h: usize, w: usize) -> (f64, f64) {
    let peak = *frame.iter().max().unwrap() as f64;
    let bg = *frame.iter().min().unwrap() as f64;
    let (mut mass, mut moment) = (0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            let m = frame[r * w + c] as f64 - bg;
            mass += m;
            moment += m * c as f64;
        }
    }
    (peak, moment / mass - (w as f64 - 1.0) / 2.0)
}

/// Ridge regression `y ≈ X β` by the normal equations `(XᵀX + λI) β = Xᵀy`.
fn ridge(x: &[[f64; 3]], y: &[f64], lambda: f64) -> [f64; 3] {
    let mut a = [[0.0; 4]; 3];
    for (row, &t) in x.iter().zip(y) {
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += row[i] * row[j];
            }
            a[i][3] += row[i] * t;
        }
    }
    for (i, r) in a.iter_mut().enumerate() {
        r[i] += lambda;
    }
    for col in 0..3 {
        let p = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, p);
        for r in 0..3 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for k in col..4 {
                    a[r][k] -= f * a[col][k];
                }
            }
        }
    }
    [a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]]
}

fn r_squared(x: &[[f64; 3]], y: &[f64], beta: [f64; 3]) -> f64 {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(r, v)| (v - (beta[0] * r[0] + beta[1] * r[1] + beta[2] * r[2])).powi(2))
        .sum();
    1.0 - ss_res / ss_tot
}

#[test]
fn labels_are_linearly_recoverable_from_noiseless_frames() {
    let cfg = SyntheticConfig {
        noise_std: 0.0,
        ..Default::default()
    };
    let (mut x, mut ya, mut yv) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..8 {
        let (labels, clip) = synthesize(&cfg, i);
        for f in 0..clip.frames() {
            let (peak, offset) = blob_measurements(clip.frame(f), cfg.height, cfg.width);
            x.push([1.0, peak, offset]);
            ya.push(labels.arousal[f]);
            yv.push(labels.valence[f]);
        }
    }
    for (name, y) in [("arousal", &ya), ("valence", &yv)] {
        let r2 = r_squared(&x, y, ridge(&x, y, 1e-6));
        assert!(r2 > 0.99, "{name}: R² = {r2}");
    }
}

#[test]
fn full_arousal_center_pixel() {
    let mut r = ChaCha8Rng::seed_from_u64(0);
    for (h, w) in [(63, 63), (31, 47)] {
        let f = render_frame(1.0, 0.0, h, w, 0.0, &mut r);
        assert_eq!(f[(h / 2) * w + w / 2], 228);
    }
}

#[test]
fn generation_is_reproducible() {
    let cfg = common::small_data_config(6, 3);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = generate(&cfg, a.path()).unwrap();
    let mb = generate(&cfg, b.path()).unwrap();
    assert_eq!(ma.to_text(), mb.to_text());
    for e in &ma.entries {
        for p in [&e.clip, &e.labels, e.features.as_ref().unwrap()] {
            assert_eq!(
                std::fs::read(a.path().join(p)).unwrap(),
                std::fs::read(b.path().join(p)).unwrap()
            );
        }
    }
    let c = tempfile::tempdir().unwrap();
    let other = generate(&common::small_data_config(6, 4), c.path()).unwrap();
    let ca = read_clip(&a.path().join(&ma.entries[0].clip)).unwrap();
    let co = read_clip(&other.root.join(&other.entries[0].clip)).unwrap();
    assert_ne!(ca, co);
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (labels, clip) = synthesize(&common::small_data_config(1, 9), 0);
    write_clip(&dir.path().join("c.ssva"), &clip).unwrap();
    assert_eq!(read_clip(&dir.path().join("c.ssva")).unwrap(), clip);
    labels.write_csv(&dir.path().join("c.csv")).unwrap();
    assert_eq!(
        AffectSeries::read_csv(&dir.path().join("c.csv")).unwrap(),
        labels
    );
    let feats = FeatureStream::from_labels(&labels);
    assert_eq!(feats.dim, FEATURE_DIM);
    write_features(&dir.path().join("c.ssvf"), &feats).unwrap();
    assert_eq!(read_features(&dir.path().join("c.ssvf")).unwrap(), feats);

    std::fs::write(dir.path().join("bad.ssva"), b"XXXX").unwrap();
    assert!(read_clip(&dir.path().join("bad.ssva")).is_err());
    let mut truncated = std::fs::read(dir.path().join("c.ssva")).unwrap();
    truncated.pop();
    std::fs::write(dir.path().join("t.ssva"), truncated).unwrap();
    assert!(read_clip(&dir.path().join("t.ssva")).is_err());
}

#[test]
fn manifest_splits_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SyntheticConfig {
        num_clips: 11,
        frames: 6,
        height: 8,
        width: 8,
        val_fraction: 0.2,
        test_fraction: 0.1,
        ..Default::default()
    };
    assert_eq!(cfg.split_sizes(), (8, 2, 1));
    let m = generate(&cfg, dir.path()).unwrap();
    let loaded = Manifest::load(&dir.path().join(MANIFEST_NAME)).unwrap();
    assert_eq!(loaded, m);
    let count = |s| m.split(s).count();
    assert_eq!(
        (count(Split::Train), count(Split::Val), count(Split::Test)),
        (8, 2, 1)
    );

    let train = m.load_split(Split::Train, false).unwrap();
    assert_eq!(compute_stats(train.iter().map(|c| &c.clip)), m.stats);

    // Overwriting a validation clip leaves the recorded statistics alone.
    let (_, val_entry) = m.split(Split::Val).next().unwrap();
    write_clip(&m.resolve(&val_entry.clip), &Clip::filled(6, 8, 8, 255)).unwrap();
    let again = Manifest::load(&dir.path().join(MANIFEST_NAME)).unwrap();
    assert_eq!(again.stats, m.stats);
    let ids: Vec<u64> = again
        .load_split(Split::Val, true)
        .unwrap()
        .iter()
        .map(|c| c.id)
        .collect();
    assert_eq!(ids, vec![8, 9]);
}

#[test]
fn stats_examples() {
    let flat = Clip::filled(3, 4, 4, 100);
    let s = compute_stats([&flat]);
    assert_eq!((s.mean, s.std), (100.0, STD_GUARD));

    let mut two = Clip::filled(2, 2, 2, 0);
    for (i, v) in two.data_mut().iter_mut().enumerate() {
        *v = if i % 2 == 0 { 0 } else { 255 };
    }
    let s = compute_stats([&two]);
    assert_eq!((s.mean, s.std), (127.5, 127.5));
}

fn labeled(t: usize) -> LabeledClip {
    let labels = AffectSeries::new(
        (0..t).map(|i| i as f64 / t as f64).collect(),
        (0..t).map(|i| -(i as f64) / t as f64).collect(),
    )
    .unwrap();
    let data = (0..t * 4).map(|i| (i % 200 + 1) as u8).collect();
    LabeledClip {
        id: 0,
        clip: Clip::new(t, 2, 2, data).unwrap(),
        features: Some(FeatureStream::from_labels(&labels)),
        labels,
    }
}

#[test]
fn short_clips_are_padded_and_masked() {
    let c = labeled(300);
    let s = sample_segment(&c, 500, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!((s.valid, s.clip.frames(), s.labels.len()), (300, 500, 500));
    assert_eq!(&s.clip.data()[..1200], c.clip.data());
    assert!(s.clip.data()[1200..].iter().all(|&v| v == 0));
    assert_eq!(s.labels.valence[..300], c.labels.valence[..]);
    let f = s.features.unwrap();
    assert_eq!(f.frames, 500);
    assert!(f.data[300 * FEATURE_DIM..].iter().all(|&v| v == 0.0));
}

#[test]
fn segments_are_aligned_windows() {
    let c = labeled(50);
    for seed in 0..20 {
        let s = sample_segment(&c, 16, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let again = sample_segment(&c, 16, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(s, again);
        assert_eq!(s.valid, 16);
        let start = (s.labels.valence[0] * 50.0).round() as usize;
        assert_eq!(s.clip, c.clip.frames_range(start, 16).unwrap());
        assert_eq!(s.labels.arousal[..], c.labels.arousal[start..start + 16]);
    }
    let whole = sample_segment(&c, 50, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(whole.clip, c.clip);
    assert!(sample_segment(&c, 0, &mut ChaCha8Rng::seed_from_u64(5)).is_err());
}

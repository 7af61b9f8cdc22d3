use std::f64::consts::PI;

use proptest::prelude::*;

use super::*;

fn small() -> ImageDims {
    ImageDims::new(16, 16, 1)
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Angle of the intensity-weighted centroid of `frame − background` around the image center.
fn centroid_angle(frame: &[f64], background: &[f64], dims: ImageDims) -> f64 {
    let (mut sx, mut sy) = (0.0, 0.0);
    for r in 0..dims.height {
        for c in 0..dims.width {
            let w = frame[r * dims.width + c] - background[r * dims.width + c];
            sx += w * (c as f64 + 0.5 - dims.width as f64 / 2.0);
            sy += w * (r as f64 + 0.5 - dims.height as f64 / 2.0);
        }
    }
    sy.atan2(sx)
}

#[test]
fn bar_frames_are_in_range_and_domain_increases() {
    let ds = gen_rotating_bar(3, 12, small(), 1).unwrap();
    for seq in &ds.sequences {
        assert_eq!(seq.len(), 12);
        assert_eq!(seq.x[0], vec![0.0]);
        assert_eq!(seq.x[11], vec![1.0]);
        assert!(seq.x.windows(2).all(|w| w[1][0] > w[0][0]));
        assert!(seq.y.iter().flatten().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn first_frame_is_the_start_angle_rendering() {
    let dims = small();
    let ds = gen_rotating_bar(2, 5, dims, 3).unwrap();
    for i in 0..2 {
        let params = ds.sequence_params(i);
        assert_eq!(ds.sequences[i].y[0], params.render(dims, &[0.0]));
    }
}

#[test]
fn backgrounds_differ_between_sequences() {
    let dims = small();
    let ds = gen_rotating_bar(2, 3, dims, 4).unwrap();
    let bg = |i| match ds.sequence_params(i) {
        SequenceParams::Bar(b) => b.background_image(dims),
        _ => unreachable!(),
    };
    let (a, b) = (bg(0), bg(1));
    assert!(a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max) > 0.0);
}

#[test]
fn bar_angle_at_half_turn_matches_image_moments() {
    let dims = ImageDims::new(32, 32, 1);
    let ds = gen_rotating_bar(8, 3, dims, 5).unwrap();
    for i in 0..8 {
        let SequenceParams::Bar(bar) = ds.sequence_params(i) else { unreachable!() };
        let frame = &ds.sequences[i].y[1];
        assert_eq!(ds.sequences[i].x[1], vec![0.5]);
        let angle = centroid_angle(frame, &bar.background_image(dims), dims);
        let err = wrap(angle - (bar.start_angle + PI / 2.0)).abs();
        assert!(err < 0.05, "sequence {i}: {err}");
    }
}

#[test]
fn masks_cover_the_bar() {
    let dims = ImageDims::new(32, 32, 1);
    let ds = gen_rotating_bar(1, 4, dims, 6).unwrap();
    for mask in ds.masks(0) {
        let n = mask.iter().filter(|&&m| m).count() as f64;
        let area = (BAR_LENGTH + BAR_HALF_WIDTH) * 32.0 * 2.0 * BAR_HALF_WIDTH * 32.0;
        assert!((n / area - 1.0).abs() < 0.15, "{n} vs {area}");
    }
}

#[test]
fn extended_arm_lies_along_the_horizontal_axis() {
    let dims = ImageDims::new(32, 32, 1);
    let ds = gen_pendulum_joints(1, 3, dims, 4, 7).unwrap();
    let params = ds.sequence_params(0);
    let SequenceParams::Arm(arm) = &params else { unreachable!() };
    let mask = params.mask(dims, &[1.0, 0.0, 1.0, 0.0]);
    let reach = 2.0 * arm.link_length;
    for r in 0..32 {
        for c in 0..32 {
            if mask[r * 32 + c] {
                let (px, py) = (c as f64 + 0.5, r as f64 + 0.5);
                assert!((py - 16.0).abs() <= arm.half_width + 0.5);
                assert!(px >= 16.0 - arm.half_width - 0.5 && px <= 16.0 + reach + arm.half_width + 0.5);
            }
        }
    }
    assert!(mask[16 * 32 + 16 + (reach as usize) - 1]);
}

#[test]
fn arm_domain_is_on_the_unit_circle() {
    let ds = gen_pendulum_joints(4, 20, small(), 8, 8).unwrap();
    for x in ds.sequences.iter().flat_map(|s| &s.x) {
        assert_eq!(x.len(), 8);
        for cs in x.chunks(2) {
            assert!((cs[0] * cs[0] + cs[1] * cs[1] - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn arm_frames_rerender_bit_exactly_from_stored_domain() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_pendulum_joints(2, 6, small(), 4, 9).unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    for (i, seq) in back.sequences.iter().enumerate() {
        let params = back.sequence_params(i);
        for (x, y) in seq.x.iter().zip(&seq.y) {
            let again = params.render(back.dims, x);
            assert!(again.iter().zip(y).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}

#[test]
fn invalid_generator_settings_are_rejected() {
    assert!(gen_rotating_bar(1, 5, ImageDims::new(4, 16, 1), 0).is_err());
    assert!(gen_pendulum_joints(1, 5, small(), 6, 0).is_err());
    assert!(gen_rotating_bar(0, 5, small(), 0).is_err());
}

#[test]
fn save_load_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_rotating_bar(3, 7, ImageDims::new(8, 10, 2), 10).unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(&dir.path().join("manifest.txt")).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn corrupted_files_are_reported_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_rotating_bar(2, 4, small(), 11).unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let victim = dir.path().join("seq_0001.varg");
    let mut bytes = std::fs::read(&victim).unwrap();
    bytes[0] = b'X';
    std::fs::write(&victim, &bytes).unwrap();
    let err = load_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("seq_0001.varg") && err.contains("magic"), "{err}");

    bytes[0] = b'V';
    bytes.truncate(bytes.len() - 4);
    std::fs::write(&victim, &bytes).unwrap();
    let err = load_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("seq_0001.varg"), "{err}");

    let manifest = dir.path().join("manifest.txt");
    let text = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(&manifest, text + "colour=blue\n").unwrap();
    assert!(load_dataset(dir.path()).unwrap_err().to_string().contains("colour"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]
    #[test]
    fn manifest_count_matches_loaded_count(
        seed in any::<u64>(),
        n in 1usize..5,
        frames in 2usize..6,
        bar in any::<bool>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let ds = if bar {
            gen_rotating_bar(n, frames, ImageDims::new(8, 8, 1), seed).unwrap()
        } else {
            gen_pendulum_joints(n, frames, ImageDims::new(8, 8, 1), 2, seed).unwrap()
        };
        save_dataset(&ds, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        let declared: usize = text
            .lines()
            .find_map(|l| l.strip_prefix("sequences="))
            .unwrap()
            .parse()
            .unwrap();
        let back = load_dataset(dir.path()).unwrap();
        prop_assert_eq!(declared, n);
        prop_assert_eq!(back.sequences.len(), n);
    }
}

#[test]
fn uniform_split_is_evenly_spaced() {
    let split = split_observed(100, 20, SplitStrategy::UniformSpaced, 0).unwrap();
    assert_eq!(split.observed, (0..20).map(|i| 5 * i).collect::<Vec<_>>());
    assert_eq!(split.held_out.len(), 80);
    let one = split_observed(10, 9, SplitStrategy::Random, 3).unwrap();
    assert_eq!(one.held_out.len(), 1);
    assert!(split_observed(10, 10, SplitStrategy::Random, 0).is_err());
    assert!(split_observed(10, 0, SplitStrategy::UniformSpaced, 0).is_err());
}

#[test]
fn random_split_observes_each_index_uniformly() {
    let (t, n, draws) = (25, 7, 10_000);
    let mut counts = vec![0usize; t];
    for seed in 0..draws {
        let split = split_observed(t, n, SplitStrategy::Random, seed).unwrap();
        let mut all: Vec<usize> = split.observed.iter().chain(&split.held_out).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..t).collect::<Vec<_>>());
        for i in split.observed {
            counts[i] += 1;
        }
    }
    for c in counts {
        assert!((c as f64 / draws as f64 - n as f64 / t as f64).abs() < 0.02);
    }
}

use glcnet::augment::{
    default_first_view, default_second_view, AugView, AugmentationPipeline, CropResize, Flip, FlipAxis, IndexLabel,
    Rotate90, TransformRegistry, ViewPair,
};
use glcnet::glcnet::{select_local_regions, RegionParams};
use glcnet::tensor::FeatureMap;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Each pixel value encodes its own position, so every output pixel can be
/// checked against the coordinate the index label claims for it.
fn coded_view(h: usize, w: usize) -> AugView {
    let data = (0..h * w).map(|i| i as f32).collect();
    AugView::new(FeatureMap::from_vec(1, h, w, data).unwrap(), IndexLabel::build(h, w).unwrap()).unwrap()
}

fn assert_index_matches_pixels(view: &AugView, src_w: usize) {
    for r in 0..view.image.height {
        for c in 0..view.image.width {
            let (sr, sc) = view.index.coord(r, c).expect("spatial ops keep every pixel valid");
            assert_eq!(view.image.at(0, r, c), (sr as usize * src_w + sc as usize) as f32);
        }
    }
}

proptest! {
    #[test]
    fn flips_and_rotations_move_index_with_pixels(h in 1usize..12, w in 1usize..12, turns in 0usize..4, flip in 0usize..3) {
        let mut v = coded_view(h, w);
        v = match flip {
            1 => Flip::flip(&v, FlipAxis::Horizontal),
            2 => Flip::flip(&v, FlipAxis::Vertical),
            _ => v,
        };
        v = Rotate90::rotate(&v, turns);
        assert_index_matches_pixels(&v, w);
        // Undo: inverse rotation then the same flip again.
        let mut back = Rotate90::rotate(&v, (4 - turns) % 4);
        back = match flip {
            1 => Flip::flip(&back, FlipAxis::Horizontal),
            2 => Flip::flip(&back, FlipAxis::Vertical),
            _ => back,
        };
        prop_assert_eq!(back, coded_view(h, w));
    }

    #[test]
    fn crop_index_stays_in_source_bounds(h in 8usize..40, w in 8usize..40, size in 4usize..24, seed in 0u64..1000) {
        let op = CropResize::new([0.2, 1.0], [0.75, 4.0 / 3.0], size);
        let view = coded_view(h, w);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Some((top, left, ch, cw)) = op.sample_window(h, w, &mut rng) {
            let out = op.apply_window(&view, top, left, ch, cw).unwrap();
            prop_assert_eq!((out.image.height, out.image.width), (size, size));
            for r in 0..size {
                for c in 0..size {
                    let (sr, sc) = out.index.coord(r, c).unwrap();
                    prop_assert!((top as i32..(top + ch) as i32).contains(&sr));
                    prop_assert!((left as i32..(left + cw) as i32).contains(&sc));
                }
            }
        }
    }

    #[test]
    fn regions_are_exclusive_matched_and_inside(seed in 0u64..500, size in 4usize..12, count in 1usize..6) {
        let view = 48;
        let reg = TransformRegistry::builtin();
        let first = AugmentationPipeline::from_specs(&reg, &default_first_view(view)).unwrap();
        let second = AugmentationPipeline::from_specs(&reg, &default_second_view(view)).unwrap();
        let image = coded_view(64, 64).image;
        let mut ra = ChaCha8Rng::seed_from_u64(seed);
        let mut rb = ChaCha8Rng::seed_from_u64(seed + 7919);
        let pair = ViewPair::generate(&image, 0, &first, &second, &mut ra, &mut rb).unwrap();
        let params = RegionParams::new(size, count);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let regions = select_local_regions(&pair.view_a.index, &pair.view_b.index, &params, &mut rng).unwrap();
        prop_assert!(regions.len() <= count);
        for (i, r) in regions.iter().enumerate() {
            prop_assert!(r.rect_a.fits(view, view) && r.rect_b.fits(view, view));
            prop_assert!(r.match_distance < params.match_tolerance);
            prop_assert!(r.drift.0.unsigned_abs() <= size / 2 && r.drift.1.unsigned_abs() <= size / 2);
            prop_assert_eq!(pair.view_a.index.coord(r.center_a.0, r.center_a.1), Some(r.center));
            if r.drift == (0, 0) {
                prop_assert_eq!(r.rect_b.center(), r.center_b);
            }
            for earlier in &regions[..i] {
                prop_assert!(!earlier.rect_a.contains(r.center_a));
            }
        }
    }
}

#[test]
fn same_seeds_give_identical_views() {
    let reg = TransformRegistry::builtin();
    let first = AugmentationPipeline::from_specs(&reg, &default_first_view(32)).unwrap();
    let second = AugmentationPipeline::from_specs(&reg, &default_second_view(32)).unwrap();
    let image = FeatureMap::from_vec(3, 40, 40, (0..4800).map(|i| (i % 97) as f32 / 97.0).collect()).unwrap();
    let make = || {
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(2);
        ViewPair::generate(&image, 3, &first, &second, &mut a, &mut b).unwrap()
    };
    assert_eq!(make(), make());
}

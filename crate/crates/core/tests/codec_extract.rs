mod common;

use proptest::prelude::*;

use skeda::codec::{embed, equalize, replicate, sample_latent, sampling_stream, shuffle, WatermarkMessage};
use skeda::extract::{
    aggregate_frames, da_scores, da_weights, decode_frame, extract, identify_frame_permutation, ExtractOptions,
    FrameWeights,
};
use skeda::keys::{derive_keys, KeyMode, KeySet, LatentDims, ReplicationFactors};
use skeda::latent::LatentTensor;
use skeda::prng::{PrngStream, Seed};

fn keys(i: u64, dims: [usize; 4], factors: [usize; 4], mode: KeyMode) -> KeySet {
    derive_keys(
        Seed([3; 32]).derive(b"codec-test", i),
        LatentDims::from_array(dims),
        ReplicationFactors::from_array(factors),
        mode,
    )
    .unwrap()
}

fn message(i: u64, n: usize) -> WatermarkMessage {
    WatermarkMessage::random(&mut PrngStream::indexed(&Seed([4; 32]), b"msg", i), n)
}

const SMALL: [usize; 4] = [8, 2, 16, 16];
const SMALL_F: [usize; 4] = [8, 1, 4, 4];

#[test]
fn sign_matches_bitfield_everywhere() {
    let ks = keys(0, [16, 4, 64, 64], [16, 1, 8, 8], KeyMode::Uniform);
    let msg = message(0, 256);
    let field = shuffle(&replicate(&equalize(&msg, ks.equalizing_key()).unwrap(), ks.dims(), ks.factors()).unwrap(), &ks).unwrap();
    let z = sample_latent(&field, &mut sampling_stream(ks.seed(), 0));
    for t in 0..16 {
        assert_eq!(decode_frame(z.frame(t)).unwrap(), field.frame(t));
    }
}

#[test]
fn clean_round_trip_default_layout() {
    for i in 0..50 {
        let ks = keys(i, [16, 4, 64, 64], [16, 1, 8, 8], KeyMode::Uniform);
        let msg = message(i, 256);
        let z = embed(&msg, &ks, &mut sampling_stream(ks.seed(), i)).unwrap();
        assert_eq!(extract(&z, &ks, ExtractOptions::default()).unwrap().0, msg);
    }
}

#[test]
fn independent_seeds_agree_on_half_the_signs() {
    let ks = keys(1, [16, 4, 64, 64], [16, 1, 8, 8], KeyMode::Uniform);
    let msg = message(1, 256);
    let mut agree = 0usize;
    let mut total = 0usize;
    for pair in 0..4 {
        let a = embed(&msg, &ks, &mut sampling_stream(ks.seed(), 2 * pair)).unwrap();
        let other = keys(100 + pair, [16, 4, 64, 64], [16, 1, 8, 8], KeyMode::Uniform);
        let b = embed(&message(100 + pair, 256), &other, &mut sampling_stream(other.seed(), 0)).unwrap();
        agree += a.data().iter().zip(b.data()).filter(|(x, y)| (**x > 0.0) == (**y > 0.0)).count();
        total += a.data().len();
    }
    let rate = agree as f64 / total as f64;
    // per-latent agreement is a mean over 256 independent bits
    assert!((rate - 0.5).abs() < 0.05, "{rate}");
}

#[test]
fn nonce_changes_magnitudes_not_signs() {
    let ks = keys(2, SMALL, SMALL_F, KeyMode::Uniform);
    let msg = message(2, 2 * 4 * 4);
    let a = embed(&msg, &ks, &mut sampling_stream(ks.seed(), 0)).unwrap();
    let b = embed(&msg, &ks, &mut sampling_stream(ks.seed(), 1)).unwrap();
    assert_ne!(a, b);
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| (*x > 0.0) == (*y > 0.0)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn round_trip_any_seed_and_message(seed in any::<[u8; 32]>(), bits in proptest::collection::vec(0u8..2, 32), nonce in any::<u64>(), per_frame in any::<bool>()) {
        let mode = if per_frame { KeyMode::PerFrame } else { KeyMode::Uniform };
        let ks = derive_keys(Seed(seed), LatentDims::from_array(SMALL), ReplicationFactors::from_array(SMALL_F), mode).unwrap();
        let msg = WatermarkMessage::new(bits).unwrap();
        let z = embed(&msg, &ks, &mut sampling_stream(ks.seed(), nonce)).unwrap();
        prop_assert!(z.data().iter().all(|v| v.is_finite() && *v != 0.0));
        let (out, diag) = extract(&z, &ks, ExtractOptions::default()).unwrap();
        prop_assert_eq!(out, msg);
        prop_assert!(diag.block_scores.m.iter().all(|m| (0.0..=1.0).contains(m)));
    }

    #[test]
    fn uniform_no_da_is_frame_order_invariant(seed in any::<[u8; 32]>(), order_seed in any::<u64>(), flip in 0.0f64..0.45) {
        let ks = derive_keys(Seed(seed), LatentDims::from_array(SMALL), ReplicationFactors::from_array(SMALL_F), KeyMode::Uniform).unwrap();
        let msg = message(order_seed, 32);
        let z = embed(&msg, &ks, &mut sampling_stream(ks.seed(), 0)).unwrap();
        let spec = skeda::channel::ChannelSpec::new(skeda::channel::Channel::SignFlip { p: flip }, Seed(seed)).unwrap();
        let noisy = skeda::channel::apply(&spec, &z).unwrap();
        let order: Vec<usize> = PrngStream::indexed(&Seed([5; 32]), b"order", order_seed).permutation(8).into_iter().map(|v| v as usize).collect();
        let opts = ExtractOptions { da_enabled: false };
        let (a, da) = extract(&noisy, &ks, opts).unwrap();
        let (b, db) = extract(&noisy.select_frames(&order), &ks, opts).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(da.block_scores, db.block_scores);
    }

    #[test]
    fn any_clean_subset_decodes(seed in any::<[u8; 32]>(), mask in 1u16..256) {
        let ks = derive_keys(Seed(seed), LatentDims::from_array(SMALL), ReplicationFactors::from_array(SMALL_F), KeyMode::Uniform).unwrap();
        let msg = message(mask as u64, 32);
        let z = embed(&msg, &ks, &mut sampling_stream(ks.seed(), 0)).unwrap();
        let keep: Vec<usize> = (0..8).filter(|t| mask & (1 << t) != 0).collect();
        for da in [false, true] {
            prop_assert_eq!(&extract(&z.select_frames(&keep), &ks, ExtractOptions { da_enabled: da }).unwrap().0, &msg);
        }
    }

    #[test]
    fn da_weights_follow_frame_permutation(seed in any::<[u8; 32]>(), order_seed in any::<u64>()) {
        let dims = LatentDims::from_array(SMALL);
        let mut rng = PrngStream::new(&Seed(seed), b"frames");
        let data: Vec<f32> = (0..dims.len()).map(|_| rng.next_open01() as f32 - 0.5).collect();
        let z = LatentTensor::new(dims, data).unwrap();
        let mut rest: Vec<usize> = PrngStream::indexed(&Seed([6; 32]), b"o", order_seed).permutation(7).into_iter().map(|v| v as usize + 1).collect();
        rest.insert(0, 0);
        let frames: Vec<&[f32]> = z.frame_iter().collect();
        let permuted: Vec<&[f32]> = rest.iter().map(|&t| frames[t]).collect();
        let w = da_weights(&da_scores(&frames).unwrap());
        let wp = da_weights(&da_scores(&permuted).unwrap());
        for (j, &t) in rest.iter().enumerate() {
            prop_assert!((wp.w[j] - w.w[t]).abs() < 1e-12);
        }
        prop_assert!((w.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn soft_bits_are_convex(bits in proptest::collection::vec(proptest::collection::vec(0u8..2, 16), 1..6), raw in proptest::collection::vec(0.0f64..5.0, 6)) {
        let n = bits.len();
        let total: f64 = raw[..n].iter().map(|r| r + 1e-3).sum();
        let weights = FrameWeights { w: raw[..n].iter().map(|r| (r + 1e-3) / total).collect(), uniform: false };
        let soft = aggregate_frames(&bits, &weights, (1, 4, 4)).unwrap();
        prop_assert!(soft.data.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
    }
}

#[test]
fn identification_separates_true_frame() {
    let ks = keys(7, [16, 4, 64, 64], [16, 1, 8, 8], KeyMode::PerFrame);
    let msg = message(7, 256);
    let z = embed(&msg, &ks, &mut sampling_stream(ks.seed(), 0)).unwrap();
    for t in 0..16 {
        let (idx, score) = identify_frame_permutation(&decode_frame(z.frame(t)).unwrap(), &ks);
        assert_eq!(idx, t);
        assert!(score > 0.9);
    }
}

#[test]
fn per_frame_survives_shuffle_and_drop() {
    let ks = keys(8, [16, 4, 64, 64], [16, 1, 8, 8], KeyMode::PerFrame);
    let msg = message(8, 256);
    let z = embed(&msg, &ks, &mut sampling_stream(ks.seed(), 0)).unwrap();
    let order = [9, 3, 15, 0, 7];
    let (out, diag) = extract(&z.select_frames(&order), &ks, ExtractOptions::default()).unwrap();
    assert_eq!(out, msg);
    assert_eq!(diag.frame_indices, order);
}

#[test]
fn default_layout_marginal_is_standard_normal() {
    // one random copy of every bit per embed keeps the pooled sample independent
    let dims = LatentDims::DEFAULT;
    let [_, mc, mh, mw] = ReplicationFactors::DEFAULT.message_shape(&dims);
    let mut s = PrngStream::new(&Seed([0x2d; 32]), b"ks");
    let n = 100_000usize;
    let mut pool = Vec::with_capacity(n);
    let mut i = 0;
    while pool.len() < n {
        let ks = keys(1000 + i, [16, 4, 64, 64], [16, 1, 8, 8], KeyMode::Uniform);
        let z = embed(&message(1000 + i, 256), &ks, &mut sampling_stream(ks.seed(), i)).unwrap();
        i += 1;
        let mut inverse = vec![0usize; dims.frame_len()];
        for (j, &q) in ks.base_perm().iter().enumerate() {
            inverse[q as usize] = j;
        }
        for k in 0..(mc * mh * mw).min(n - pool.len()) {
            let c = k / (mh * mw) + mc * s.next_below((dims.c / mc) as u64) as usize;
            let y = (k / mw) % mh + mh * s.next_below((dims.h / mh) as u64) as usize;
            let x = k % mw + mw * s.next_below((dims.w / mw) as u64) as usize;
            let t = s.next_below(dims.f as u64) as usize;
            pool.push(z.frame(t)[inverse[(c * dims.h + y) * dims.w + x]] as f64);
        }
    }
    pool.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let nf = n as f64;
    let d = pool
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            let f = common::normal_cdf(x);
            (f - j as f64 / nf).abs().max(((j + 1) as f64 / nf - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(d < 1.63 / nf.sqrt(), "KS D = {d}");
}

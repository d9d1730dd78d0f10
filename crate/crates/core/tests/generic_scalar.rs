//! The full pipeline under `f32`: same code paths as the default `f64`
//! lane, with tolerances at single precision.

use dsq_core::bitstream::{pack_with_pipeline, unpack_checked};
use dsq_core::features::{generate_synthetic, SyntheticSpec};
use dsq_core::pipeline::{fit_pipeline, QuantizerConfig, Variant};
use dsq_core::{max_abs_diff, Codebook32, FeatureMatrix32, FittedPipeline32};

fn corpus_spec(noise_std: f64) -> SyntheticSpec {
    SyntheticSpec {
        n_speakers: 8,
        n_contents: 16,
        speaker_offset_scale: 1.0,
        speaker_gain_spread: 0.25,
        prosody_dim: 4,
        prosody_smoothness: 0.9,
        noise_std,
        seed: 33,
    }
}

#[test]
fn f32_pipeline_round_trips() {
    let corpus = generate_synthetic::<f32>(&corpus_spec(0.0), 32, 50.0, 32, 100).unwrap();
    let training: Vec<FeatureMatrix32> = corpus
        .utterances
        .iter()
        .map(|u| u.features.clone())
        .collect();
    let cb = Codebook32::from_rows(corpus.content_centroids.clone(), false, "content").unwrap();
    let cfg = QuantizerConfig::desk_small().with_variant(Variant::SkqSigma);
    let p: FittedPipeline32 = fit_pipeline(&training, &cfg, cb, 3).unwrap();

    // Continuous round trip at single precision.
    for utt in corpus.utterances.iter().take(5) {
        let codes = p.encode(&utt.features).unwrap();
        let decoded = p.decode(&codes).unwrap();
        let err = max_abs_diff(&utt.features, &decoded).unwrap();
        assert!(err < 1e-3, "f32 round-trip err {err}");
    }
}

#[test]
fn f32_quantized_bitstream_round_trips() {
    let corpus = generate_synthetic::<f32>(&corpus_spec(0.02), 32, 50.0, 32, 100).unwrap();
    let training: Vec<FeatureMatrix32> = corpus
        .utterances
        .iter()
        .map(|u| u.features.clone())
        .collect();
    let cb = Codebook32::from_rows(corpus.content_centroids.clone(), false, "content").unwrap();
    let cfg = QuantizerConfig::desk_small();
    let p: FittedPipeline32 = fit_pipeline(&training, &cfg, cb, 3).unwrap();
    for utt in corpus.utterances.iter().take(5) {
        let codes = p.encode(&utt.features).unwrap();
        let bytes = pack_with_pipeline(&codes, &p).unwrap();
        let (_, back) = unpack_checked(&bytes, &p).unwrap();
        assert_eq!(back, codes);
        let archive = dsq_core::pipeline_to_bytes(&p);
        let reloaded: FittedPipeline32 = dsq_core::pipeline_from_bytes(&archive).unwrap();
        assert_eq!(reloaded.encode(&utt.features).unwrap(), codes);
    }
}

/// Content indices agree between the two lanes on data whose values are
/// exactly representable in both.
#[test]
fn lanes_agree_on_content_assignment() {
    let c64 = generate_synthetic::<f64>(&corpus_spec(0.02), 32, 50.0, 8, 60).unwrap();
    let c32 = generate_synthetic::<f32>(&corpus_spec(0.02), 32, 50.0, 8, 60).unwrap();
    let cb64 =
        dsq_core::Codebook::<f64>::from_rows(c64.content_centroids.clone(), false, "content")
            .unwrap();
    let cb32 = Codebook32::from_rows(c32.content_centroids.clone(), false, "content").unwrap();
    assert_eq!(cb64.hash(), cb32.hash(), "canonical f32 hashes match");
    for (u64_, u32_) in c64.utterances.iter().zip(&c32.utterances) {
        let i64_ = dsq_core::vq_quantize(&u64_.features, &cb64)
            .unwrap()
            .indices;
        let i32_ = dsq_core::vq_quantize(&u32_.features, &cb32)
            .unwrap()
            .indices;
        // Well-separated content: precision does not change assignments.
        assert_eq!(i64_, i32_);
    }
}

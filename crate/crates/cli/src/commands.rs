//! Subcommand implementations.

use std::path::Path;

use serde::Serialize;

use dsq_core::archive::{pipeline_from_bytes, pipeline_to_bytes};
use dsq_core::bitstream::{bitrate, pack_with_pipeline, unpack, unpack_checked, BitstreamHeader};
use dsq_core::codebook::residual_energy_per_layer;
use dsq_core::features::{feature_from_bytes, feature_to_bytes, generate_synthetic};
use dsq_core::metrics::{eer, feature_distance, pearson, DistanceKind};
use dsq_core::pipeline::{fit_pipeline, FittedPipeline, QuantizerConfig, Variant};
use dsq_core::{
    fit_kmeans, flatten_prosody, swap_speaker, Error, FeatureMatrix, FilmFitOptions, KMeansConfig,
    Result,
};

use crate::config::{parse_toml, FitConfig, SynthConfig};
use crate::util::{
    feature_files, read_bytes, read_labels, read_text, write_atomic, write_labels, UtteranceLabel,
};

pub fn synth(spec_path: &Path, out_dir: &Path, cli_seed: u64) -> Result<()> {
    let cfg: SynthConfig = parse_toml(&read_text(spec_path)?, "synth spec")?;
    let spec = cfg.generator_spec(cli_seed);
    let corpus = generate_synthetic::<f64>(
        &spec,
        cfg.dim,
        cfg.frame_rate_hz,
        cfg.n_utterances,
        cfg.frames_per_utterance,
    )?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut labels = Vec::with_capacity(corpus.utterances.len());
    for (i, utt) in corpus.utterances.iter().enumerate() {
        let name = format!("utt{i:05}");
        write_atomic(
            &out_dir.join(format!("{name}.ftr")),
            &feature_to_bytes(&utt.features),
        )?;
        labels.push(UtteranceLabel {
            utterance: name,
            speaker: utt.speaker,
            content: utt.content.clone(),
            prosody: utt.prosody.clone(),
        });
    }
    write_labels(&out_dir.join("labels.jsonl"), &labels)?;
    let centroid_cb =
        dsq_core::Codebook::from_rows(corpus.content_centroids.clone(), false, "content")?;
    write_atomic(
        &out_dir.join("content_centroids.cbk"),
        &centroid_cb.to_bytes(),
    )?;
    println!(
        "wrote {} utterances ({} frames x {} dims at {} Hz) to {}",
        corpus.utterances.len(),
        cfg.frames_per_utterance,
        cfg.dim,
        cfg.frame_rate_hz,
        out_dir.display()
    );
    Ok(())
}

fn load_pipeline(path: &Path) -> Result<FittedPipeline<f64>> {
    pipeline_from_bytes(&read_bytes(path)?)
}

fn load_features(path: &Path) -> Result<FeatureMatrix<f64>> {
    feature_from_bytes(&read_bytes(path)?)
}

pub fn fit(config_path: &Path, train_dir: &Path, out_path: &Path, seed: u64) -> Result<()> {
    let fit_cfg: FitConfig = parse_toml(&read_text(config_path)?, "fit config")?;
    let cfg: QuantizerConfig = fit_cfg.quantizer_config()?;
    let files = feature_files(train_dir)?;
    let mut training = Vec::with_capacity(files.len());
    for f in &files {
        let m = load_features(f)?;
        if m.dim() != cfg.dim {
            return Err(Error::ShapeMismatch {
                context: "training feature dim",
                expected: format!("{}", cfg.dim),
                got: format!("{} ({})", m.dim(), f.display()),
            });
        }
        training.push(m);
    }
    let total_frames: usize = training.iter().map(FeatureMatrix::n_frames).sum();
    println!(
        "training on {} utterances, {total_frames} frames, config {}",
        training.len(),
        cfg.variant
    );

    // The content codebook is frozen: either loaded from a prebuilt file or
    // fitted here by k-means over the pooled training frames.
    let mut cfg = cfg;
    let content_cb = match &fit_cfg.content_codebook {
        Some(path) => {
            let cb = dsq_core::Codebook::read_file(path)?;
            cfg.content_codebook_size = cb.n_entries();
            println!(
                "using frozen content codebook {} ({} entries, hash {:#018x})",
                path,
                cb.n_entries(),
                cb.hash()
            );
            cb
        }
        None => {
            let mut pooled = Vec::with_capacity(total_frames * cfg.dim);
            for m in &training {
                pooled.extend_from_slice(m.data());
            }
            let kmeans = KMeansConfig {
                n_centroids: cfg.content_codebook_size,
                max_iters: fit_cfg.kmeans_max_iters,
                batch_size: fit_cfg.kmeans_batch_size,
                seed,
                tolerance: fit_cfg.kmeans_tolerance,
            };
            let (cb, inertia) = fit_kmeans(&pooled, cfg.dim, &kmeans, false, "content")?;
            println!("content k-means inertia history:");
            for (i, v) in inertia.iter().enumerate() {
                println!("  iter {i:3}  {v:.6e}");
            }
            cb
        }
    };

    let mut pipeline = fit_pipeline(&training, &cfg, content_cb, seed)?;
    if let Some(stack) = pipeline.prosody_stack() {
        let mut projected = Vec::new();
        for m in &training {
            let codes = pipeline.encode(m)?;
            let p = pipeline.dequantize_prosody(&codes)?;
            projected.extend_from_slice(p.data());
        }
        let energies = residual_energy_per_layer(&projected, cfg.prosody_dim, stack);
        let rendered: Vec<String> = energies.iter().map(|e| format!("{e:.3e}")).collect();
        println!(
            "prosody residual energy per layer: [{}]",
            rendered.join(", ")
        );
    }
    if let Some(grvq) = pipeline.speaker_grvq() {
        let mut vectors = Vec::new();
        for m in &training {
            let codes = pipeline.with_variant(Variant::SkqSigma)?.encode(m)?;
            if let dsq_core::pipeline::SpeakerCodes::Continuous(v) = codes.speaker {
                vectors.extend(v);
            }
        }
        let energies = grvq.residual_energy_per_layer(&vectors);
        let rendered: Vec<String> = energies.iter().map(|e| format!("{e:.3e}")).collect();
        println!(
            "speaker residual energy per layer: [{}]",
            rendered.join(", ")
        );
    }
    if fit_cfg.fit_film {
        let film = pipeline.fit_film_readout(&training, &FilmFitOptions::default())?;
        println!(
            "fitted modulation decode path, training mse {:.6e}",
            film.mse
        );
        pipeline.set_film(Some(film));
    }
    write_atomic(out_path, &pipeline_to_bytes(&pipeline))?;
    println!("wrote pipeline to {}", out_path.display());
    Ok(())
}

pub fn encode(pipeline_path: &Path, input: &Path, output: &Path) -> Result<()> {
    let pipeline = load_pipeline(pipeline_path)?;
    let features = load_features(input)?;
    let codes = pipeline.encode(&features)?;
    let bytes = pack_with_pipeline(&codes, &pipeline)?;
    write_atomic(output, &bytes)?;
    let report = bitrate(pipeline.config());
    print!("{}", report.render_text());
    println!(
        "packed {} frames into {} bytes -> {}",
        codes.n_frames,
        bytes.len(),
        output.display()
    );
    Ok(())
}

pub fn decode(pipeline_path: &Path, input: &Path, output: &Path) -> Result<()> {
    let pipeline = load_pipeline(pipeline_path)?;
    let (_, codes) = unpack_checked(&read_bytes(input)?, &pipeline)?;
    let decoded = pipeline.decode(&codes)?;
    write_atomic(output, &feature_to_bytes(&decoded))?;
    println!(
        "decoded {} frames x {} dims -> {}",
        decoded.n_frames(),
        decoded.dim(),
        output.display()
    );
    Ok(())
}

pub fn swap(pipeline_path: &Path, src: &Path, reference: &Path, output: &Path) -> Result<()> {
    let pipeline = load_pipeline(pipeline_path)?;
    let (_, src_codes) = unpack_checked(&read_bytes(src)?, &pipeline)?;
    let (_, ref_codes) = unpack_checked(&read_bytes(reference)?, &pipeline)?;
    let swapped = swap_speaker(&src_codes, &ref_codes)?;
    write_atomic(output, &pack_with_pipeline(&swapped, &pipeline)?)?;
    println!(
        "swapped speaker stream of {} with {} -> {}",
        src.display(),
        reference.display(),
        output.display()
    );
    Ok(())
}

/// Frame positions accept an index or `mid` (half the frame count).
pub fn parse_frame_pos(s: &str, n_frames: usize) -> Result<usize> {
    if s == "mid" {
        Ok(n_frames / 2)
    } else {
        s.parse().map_err(|_| {
            Error::InvalidInput(format!(
                "frame position '{s}' is neither an index nor 'mid'"
            ))
        })
    }
}

pub fn flatten(
    pipeline_path: &Path,
    input: &Path,
    output: &Path,
    from: &str,
    hold: Option<&str>,
) -> Result<()> {
    let pipeline = load_pipeline(pipeline_path)?;
    let (_, codes) = unpack_checked(&read_bytes(input)?, &pipeline)?;
    let from_frame = parse_frame_pos(from, codes.n_frames)?;
    let hold_frame = match hold {
        Some(h) => parse_frame_pos(h, codes.n_frames)?,
        None => from_frame.min(codes.n_frames.saturating_sub(1)),
    };
    let flattened = flatten_prosody(&codes, from_frame, hold_frame)?;
    write_atomic(output, &pack_with_pipeline(&flattened, &pipeline)?)?;
    println!(
        "flattened prosody from frame {from_frame} holding frame {hold_frame} -> {}",
        output.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ReconRow {
    variant: String,
    l2: f64,
    cosine: f64,
}

#[derive(Serialize)]
struct SpeakerEval {
    eer: f64,
    threshold: f64,
    genuine_trials: usize,
    impostor_trials: usize,
    /// Trial construction: cosine similarity between the decoded speaker
    /// vectors of every utterance pair; same-speaker pairs are genuine.
    trial_protocol: String,
}

#[derive(Serialize)]
struct ProsodyEval {
    mean_best_abs_pcc: f64,
    min_best_abs_pcc: f64,
    utterances: usize,
}

#[derive(Serialize)]
struct EvalReport {
    schema_version: u32,
    pipeline_variant: String,
    config_hash: String,
    n_utterances: usize,
    /// Feature-space distances (decoded vs original); stand-ins for
    /// waveform-domain quality metrics, which need audio.
    reconstruction: Vec<ReconRow>,
    speaker_verification: SpeakerEval,
    prosody_correlation: Option<ProsodyEval>,
    bitrate: dsq_core::BitrateReport,
}

pub fn eval(pipeline_path: &Path, dir: &Path, json_out: Option<&Path>) -> Result<()> {
    let pipeline = load_pipeline(pipeline_path)?;
    let labels = read_labels(&dir.join("labels.jsonl"))?;
    if labels.is_empty() {
        return Err(Error::InvalidInput("labels.jsonl is empty".into()));
    }
    let mut corpus: Vec<(UtteranceLabel, FeatureMatrix<f64>)> = Vec::with_capacity(labels.len());
    for label in labels {
        let path = dir.join(format!("{}.ftr", label.utterance));
        corpus.push((label, load_features(&path)?));
    }

    // Reconstruction table: every variant view this pipeline supports.
    let mut reconstruction = Vec::new();
    for variant in Variant::ALL {
        let Ok(view) = pipeline.with_variant(variant) else {
            continue;
        };
        let mut l2 = 0.0f64;
        let mut cos = 0.0f64;
        for (_, w) in &corpus {
            let decoded = view.decode(&view.encode(w)?)?;
            l2 += feature_distance(w, &decoded, DistanceKind::L2)?;
            cos += feature_distance(w, &decoded, DistanceKind::Cosine)?;
        }
        reconstruction.push(ReconRow {
            variant: variant.token().to_string(),
            l2: l2 / corpus.len() as f64,
            cosine: cos / corpus.len() as f64,
        });
    }

    // Speaker verification trials over decoded speaker vectors.
    let mut speaker_vectors: Vec<Vec<f64>> = Vec::with_capacity(corpus.len());
    let mut prosody_best: Vec<f64> = Vec::new();
    let mut prosody_min = 1.0f64;
    let mut prosody_utts = 0usize;
    for (label, w) in &corpus {
        let codes = pipeline.encode(w)?;
        speaker_vectors.push(pipeline.dequantize_speaker_vector(&codes)?);
        if !label.prosody.is_empty() {
            let prosody = pipeline.dequantize_prosody(&codes)?;
            let rows: Vec<Vec<f64>> = (0..prosody.dim())
                .map(|d| prosody.frames().map(|f| f[d]).collect())
                .collect();
            let mut per_utt = 0.0f64;
            let mut n_dims = 0usize;
            for gt in &label.prosody {
                let mut best = 0.0f64;
                for row in &rows {
                    if let Ok(r) = pearson(gt, row) {
                        best = best.max(r.abs());
                    }
                }
                per_utt += best;
                n_dims += 1;
                prosody_min = prosody_min.min(best);
            }
            if n_dims > 0 {
                prosody_best.push(per_utt / n_dims as f64);
                prosody_utts += 1;
            }
        }
    }
    let cosine = |a: &[f64], b: &[f64]| -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        num / (na * nb).max(1e-12)
    };
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for i in 0..corpus.len() {
        for j in (i + 1)..corpus.len() {
            let score = cosine(&speaker_vectors[i], &speaker_vectors[j]);
            if corpus[i].0.speaker == corpus[j].0.speaker {
                genuine.push(score);
            } else {
                impostor.push(score);
            }
        }
    }
    let (eer_rate, threshold) = eer(&genuine, &impostor)?;

    let report = EvalReport {
        schema_version: 1,
        pipeline_variant: pipeline.config().variant.token().to_string(),
        config_hash: format!("{:#018x}", pipeline.config().hash()),
        n_utterances: corpus.len(),
        reconstruction,
        speaker_verification: SpeakerEval {
            eer: eer_rate,
            threshold,
            genuine_trials: genuine.len(),
            impostor_trials: impostor.len(),
            trial_protocol: "all same-speaker pairs vs all cross-speaker pairs, cosine of decoded speaker vectors".into(),
        },
        prosody_correlation: if prosody_utts > 0 {
            Some(ProsodyEval {
                mean_best_abs_pcc: prosody_best.iter().sum::<f64>() / prosody_utts as f64,
                min_best_abs_pcc: prosody_min,
                utterances: prosody_utts,
            })
        } else {
            None
        },
        bitrate: bitrate(pipeline.config()),
    };

    let json = serde_json::to_vec_pretty(&report).map_err(|e| Error::MalformedSection {
        context: "eval report",
        detail: e.to_string(),
    })?;
    let json_path = json_out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dir.join("eval_report.json"));
    write_atomic(&json_path, &json)?;

    println!("reconstruction (feature-space distances, decoded vs original):");
    println!("  {:<12} {:>12} {:>12}", "variant", "l2", "cosine");
    for row in &report.reconstruction {
        println!(
            "  {:<12} {:>12.6} {:>12.6}",
            row.variant, row.l2, row.cosine
        );
    }
    println!(
        "speaker verification: eer {:.4} at threshold {:.4} ({} genuine / {} impostor trials)",
        report.speaker_verification.eer,
        report.speaker_verification.threshold,
        report.speaker_verification.genuine_trials,
        report.speaker_verification.impostor_trials
    );
    if let Some(p) = &report.prosody_correlation {
        println!(
            "prosody trajectories: mean best |PCC| {:.4}, min {:.4} over {} utterances",
            p.mean_best_abs_pcc, p.min_best_abs_pcc, p.utterances
        );
    } else {
        println!("prosody trajectories: no ground truth in labels.jsonl, skipped");
    }

    println!("wrote report to {}", json_path.display());
    Ok(())
}

fn header_rates(header: &BitstreamHeader) -> (f64, f64, u32) {
    let rate = header.frame_rate_hz;
    let content_bps = f64::from(header.descriptors[0].symbol_width) * rate;
    let prosody_bps = header.descriptors[1..1 + header.prosody_layers]
        .iter()
        .map(|d| f64::from(d.symbol_width) * rate)
        .sum();
    let speaker_bits: u32 = header.descriptors[1 + header.prosody_layers..]
        .iter()
        .map(|d| u32::from(d.symbol_width) * d.symbol_count)
        .sum();
    (content_bps, prosody_bps, speaker_bits)
}

pub fn info(input: &Path) -> Result<()> {
    let bytes = read_bytes(input)?;
    let (header, _codes) = unpack::<f64>(&bytes)?;
    println!("bitstream {}", input.display());
    println!("  integrity    crc ok ({} bytes)", bytes.len());
    println!("  variant      {}", header.variant);
    println!("  config hash  {:#018x}", header.config_hash);
    println!(
        "  frames       {} at {} Hz ({:.2} s)",
        header.n_frames,
        header.frame_rate_hz,
        header.n_frames as f64 / header.frame_rate_hz
    );
    let (content_bps, prosody_bps, speaker_bits) = header_rates(&header);
    println!(
        "  content      {} symbols x {} bit = {:.2} kb/s  (codebook {:#018x})",
        header.descriptors[0].symbol_count,
        header.descriptors[0].symbol_width,
        content_bps / 1000.0,
        header.descriptors[0].codebook_hash
    );
    if header.prosody_layers > 0 {
        println!(
            "  prosody      {} layers x {} bit = {:.2} kb/s",
            header.prosody_layers,
            header.descriptors[1].symbol_width,
            prosody_bps / 1000.0
        );
    } else {
        println!(
            "  prosody      continuous, {} dims per frame in trailer",
            header.prosody_dim
        );
    }
    if header.speaker_groups > 0 {
        println!(
            "  speaker      {} groups x {} layers = {} bits/u ({:.2} kb/u)",
            header.speaker_groups,
            header.speaker_layers,
            speaker_bits,
            f64::from(speaker_bits) / 1000.0
        );
    } else {
        println!(
            "  speaker      continuous, {} dims in trailer",
            header.speaker_vector_dim
        );
    }
    println!(
        "  payload      {} bytes packed, {} trailer floats",
        header.payload_bytes, header.trailer_floats
    );
    for (i, d) in header.descriptors.iter().enumerate() {
        println!(
            "  stream[{i:3}]  hash {:#018x}  width {:2}  count {}",
            d.codebook_hash, d.symbol_width, d.symbol_count
        );
    }
    Ok(())
}
